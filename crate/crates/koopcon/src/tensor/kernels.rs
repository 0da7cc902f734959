//! Hot numeric loops shared by forward and backward passes.
//!
//! Every kernel has a fixed, explicitly ordered summation so results are
//! bit-reproducible run to run; lane-parallel accumulators are used where a
//! sequential reduction would block autovectorization, with a fixed combining
//! order at the end.
//!
//! Matrix products accumulate into `out` (callers zero the buffer when they
//! want a plain product); this is what gradient accumulation wants.

use crate::scalar::Scalar;

/// k-dimension block size for `mm_nn`; tuned for one core with 32 KiB L1d.
const KB: usize = 64;

/// out[m x p] += a[m x k] * b[k x p]
pub(crate) fn mm_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, p: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    let mut kk = 0;
    while kk < k {
        let kend = (kk + KB).min(k);
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * p..(i + 1) * p];
            for kx in kk..kend {
                let av = arow[kx];
                let brow = &b[kx * p..(kx + 1) * p];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        kk = kend;
    }
}

/// out[m x p] += a[m x k] * b[p x k]^T  (rows of `a` dotted with rows of `b`)
pub(crate) fn mm_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, p: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), p * k);
    debug_assert_eq!(out.len(), m * p);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..p {
            let brow = &b[j * k..(j + 1) * k];
            out[i * p + j] += dot(arow, brow);
        }
    }
}

/// out[m x p] += a[k x m]^T * b[k x p]  (rank-1 updates over k)
pub(crate) fn mm_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, p: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(out.len(), m * p);
    for kx in 0..k {
        let arow = &a[kx * m..(kx + 1) * m];
        let brow = &b[kx * p..(kx + 1) * p];
        for i in 0..m {
            let av = arow[i];
            let orow = &mut out[i * p..(i + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Eight-lane dot product; lanes combine in a fixed order.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 8;
    let mut acc = [S::zero(); 8];
    for c in 0..chunks {
        let base = c * 8;
        for u in 0..8 {
            acc[u] = acc[u] + a[base + u] * b[base + u];
        }
    }
    let mut s = S::zero();
    for lane in acc {
        s += lane;
    }
    for i in chunks * 8..n {
        s += a[i] * b[i];
    }
    s
}

/// Output extent of a convolution along one axis; None if the kernel does not
/// fit the padded input.
pub(crate) fn conv_out_dim(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let hp = h + 2 * pad;
    if k == 0 || k > hp || stride == 0 {
        None
    } else {
        Some((hp - k) / stride + 1)
    }
}

/// Unfold one image [c x h x w] into columns [(c*kh*kw) x (ho*wo)].
///
/// Row index enumerates (channel, ky, kx) in that order; column index
/// enumerates output pixels row-major. Out-of-bounds taps read zero.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<S: Scalar>(
    img: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out: &mut [S],
) {
    let ho = conv_out_dim(h, kh, stride, pad).expect("im2col geometry");
    let wo = conv_out_dim(w, kw, stride, pad).expect("im2col geometry");
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(out.len(), c * kh * kw * ho * wo);
    let mut r = 0;
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let orow = &mut out[r * ho * wo..(r + 1) * ho * wo];
                r += 1;
                let mut col = 0;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        orow[col..col + wo].fill(S::zero());
                        col += wo;
                        continue;
                    }
                    let prow = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        orow[col] = if ix < 0 || ix >= w as isize {
                            S::zero()
                        } else {
                            prow[ix as usize]
                        };
                        col += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-accumulate columns back into an image.
/// `img` is accumulated into, not overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<S: Scalar>(
    cols: &[S],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    img: &mut [S],
) {
    let ho = conv_out_dim(h, kh, stride, pad).expect("col2im geometry");
    let wo = conv_out_dim(w, kw, stride, pad).expect("col2im geometry");
    debug_assert_eq!(img.len(), c * h * w);
    debug_assert_eq!(cols.len(), c * kh * kw * ho * wo);
    let mut r = 0;
    for ci in 0..c {
        let plane = &mut img[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let crow = &cols[r * ho * wo..(r + 1) * ho * wo];
                r += 1;
                let mut col = 0;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        col += wo;
                        continue;
                    }
                    let prow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            prow[ix as usize] += crow[col];
                        }
                        col += 1;
                    }
                }
            }
        }
    }
}

/// 2x2 average pooling with stride 2, floor semantics: odd trailing rows or
/// columns are dropped, matching the usual DL convention.
pub(crate) fn avgpool2_forward<S: Scalar>(
    x: &[S],
    planes: usize,
    h: usize,
    w: usize,
    out: &mut [S],
) {
    let (ho, wo) = (h / 2, w / 2);
    debug_assert_eq!(x.len(), planes * h * w);
    debug_assert_eq!(out.len(), planes * ho * wo);
    let quarter = S::from_f64(0.25);
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * ho * wo..(pl + 1) * ho * wo];
        for oy in 0..ho {
            let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..wo {
                let s = r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1];
                dst[oy * wo + ox] = s * quarter;
            }
        }
    }
}

/// Backward of [`avgpool2_forward`]; accumulates g/4 into each pooled input
/// cell. Dropped odd rows/columns receive nothing.
pub(crate) fn avgpool2_backward<S: Scalar>(
    g: &[S],
    planes: usize,
    h: usize,
    w: usize,
    dx: &mut [S],
) {
    let (ho, wo) = (h / 2, w / 2);
    debug_assert_eq!(g.len(), planes * ho * wo);
    debug_assert_eq!(dx.len(), planes * h * w);
    let quarter = S::from_f64(0.25);
    for pl in 0..planes {
        let src = &g[pl * ho * wo..(pl + 1) * ho * wo];
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let v = src[oy * wo + ox] * quarter;
                dst[2 * oy * w + 2 * ox] += v;
                dst[2 * oy * w + 2 * ox + 1] += v;
                dst[(2 * oy + 1) * w + 2 * ox] += v;
                dst[(2 * oy + 1) * w + 2 * ox + 1] += v;
            }
        }
    }
}
