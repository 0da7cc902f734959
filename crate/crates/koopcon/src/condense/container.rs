//! On-disk artifacts: the condensed dataset (`KPCN`) and parameter
//! checkpoints (`KPCK`).
//!
//! Both share one envelope: 4-byte magic, big-endian u16 version, a 32-byte
//! config hash, format-specific payload, and a trailing CRC-32 over
//! everything between the magic and the checksum. Multi-byte header fields
//! are big-endian; bulk numeric payloads are little-endian (f32 pixels,
//! f64 parameters). Readers validate sizes before touching payload bytes,
//! so truncated or fuzzed files fail with errors rather than panics.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

const KPCN_MAGIC: &[u8; 4] = b"KPCN";
const KPCK_MAGIC: &[u8; 4] = b"KPCK";
const VERSION: u16 = 1;

/// Where a condensed set came from: enough to reproduce or audit the run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Provenance {
    pub config_hash: [u8; 32],
    pub seed: u64,
    pub epochs: u32,
    /// Final-epoch mean of (l_re, l_ce, l_w, l_cov) across classes.
    pub final_losses: [f64; 4],
}

/// The condensed dataset X': n' synthetic images per class.
///
/// Pixels are stored as f32 regardless of the training scalar type; they are
/// sigmoid outputs in [0,1], so f32 is lossless enough for an artifact and
/// keeps files half the size.
#[derive(Clone, Debug)]
pub struct CondensedSet {
    /// [M*n' x c x h x w], class-major (all class-0 rows first).
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub per_class: usize,
    pub provenance: Provenance,
}

impl CondensedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// View as a generic labeled dataset (casting pixels to `S`).
    pub fn to_labeled_images<S: Scalar>(&self) -> Result<crate::datasets::LabeledImages<S>> {
        crate::datasets::LabeledImages::new(
            self.images.cast::<S>(),
            self.labels.clone(),
            self.class_count,
            "condensed",
        )
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.images.shape();
        if s.len() != 4 || s[0] != self.class_count * self.per_class {
            return Err(Error::contract(
                "condensed_set",
                format!(
                    "images shape {s:?} does not hold {} classes x {} per class",
                    self.class_count, self.per_class
                ),
            ));
        }
        if self.labels.len() != s[0] {
            return Err(Error::Data(format!(
                "condensed set: {} images but {} labels",
                s[0],
                self.labels.len()
            )));
        }
        for class in 0..self.class_count {
            let got = self.labels.iter().filter(|&&l| l == class).count();
            if got != self.per_class {
                return Err(Error::Data(format!(
                    "condensed set: class {class} has {got} samples, want {}",
                    self.per_class
                )));
            }
        }
        for &v in self.images.data() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data(format!(
                    "condensed set: pixel {v} outside [0,1]"
                )));
            }
        }
        Ok(())
    }
}

/// Serialize a condensed set into the KPCN byte format.
pub fn encode_condensed(set: &CondensedSet) -> Result<Vec<u8>> {
    set.validate()?;
    if set.class_count > 256 {
        return Err(Error::contract(
            "export_condensed",
            "labels are stored as single bytes; class count must be <= 256",
        ));
    }
    let s = set.images.shape();
    let mut out = Vec::new();
    out.extend_from_slice(KPCN_MAGIC);
    out.extend_from_slice(&VERSION.to_be_bytes());
    out.extend_from_slice(&set.provenance.config_hash);
    for dim in [set.class_count, set.per_class, s[1], s[2], s[3]] {
        out.extend_from_slice(&(dim as u32).to_be_bytes());
    }
    out.extend_from_slice(&set.provenance.seed.to_be_bytes());
    out.extend_from_slice(&set.provenance.epochs.to_be_bytes());
    for loss in set.provenance.final_losses {
        out.extend_from_slice(&loss.to_be_bytes());
    }
    for &l in &set.labels {
        out.push(l as u8);
    }
    for &px in set.images.data() {
        out.extend_from_slice(&px.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[4..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

/// Parse a KPCN byte stream.
pub fn decode_condensed(bytes: &[u8]) -> Result<CondensedSet> {
    let mut r = Reader::new(bytes);
    r.magic(KPCN_MAGIC, "KPCN")?;
    r.version()?;
    let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let class_count = r.u32_be()? as usize;
    let per_class = r.u32_be()? as usize;
    let c = r.u32_be()? as usize;
    let h = r.u32_be()? as usize;
    let w = r.u32_be()? as usize;
    let seed = r.u64_be()?;
    let epochs = r.u32_be()?;
    let mut final_losses = [0.0f64; 4];
    for loss in &mut final_losses {
        *loss = f64::from_be_bytes(r.take(8)?.try_into().expect("8 bytes"));
    }
    let n = checked_product(&[class_count, per_class], "class_count * per_class")?;
    let numel = checked_product(&[n, c, h, w], "image element count")?;
    let labels: Vec<usize> = r.take(n)?.iter().map(|&b| b as usize).collect();
    let pix_bytes = r.take(
        numel
            .checked_mul(4)
            .ok_or_else(|| Error::format(r.pos, "pixel byte count overflows"))?,
    )?;
    let pixels: Vec<f32> = pix_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    r.crc(bytes)?;
    r.done()?;
    let set = CondensedSet {
        images: Tensor::from_vec(&[n, c, h, w], pixels)?,
        labels,
        class_count,
        per_class,
        provenance: Provenance {
            config_hash,
            seed,
            epochs,
            final_losses,
        },
    };
    set.validate()?;
    Ok(set)
}

pub fn export_condensed(set: &CondensedSet, path: &Path) -> Result<()> {
    let bytes = encode_condensed(set)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn import_condensed(path: &Path) -> Result<CondensedSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_condensed(&bytes)
}

/// A loaded KPCK checkpoint: the run configuration it was trained under and
/// every parameter tensor in registration order, always carried as f64 (an
/// exact superset of both supported precisions).
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    pub config_json: String,
    pub tensors: Vec<Tensor<f64>>,
}

/// Serialize graph parameters into the KPCK byte format.
pub fn encode_checkpoint<S: Scalar>(
    g: &Graph<S>,
    params: &[Var],
    config_json: &str,
    config_hash: [u8; 32],
) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(KPCK_MAGIC);
    out.extend_from_slice(&VERSION.to_be_bytes());
    out.extend_from_slice(&config_hash);
    let cfg = config_json.as_bytes();
    out.extend_from_slice(&(cfg.len() as u32).to_be_bytes());
    out.extend_from_slice(cfg);
    out.extend_from_slice(&(params.len() as u32).to_be_bytes());
    for &p in params {
        let t = g.value(p);
        out.extend_from_slice(&(t.shape().len() as u32).to_be_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u32).to_be_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[4..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

/// Parse a KPCK byte stream.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(KPCK_MAGIC, "KPCK")?;
    r.version()?;
    let config_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let cfg_len = r.u32_be()? as usize;
    let config_json = String::from_utf8(r.take(cfg_len)?.to_vec())
        .map_err(|e| Error::format(r.pos, format!("config is not UTF-8: {e}")))?;
    let count = r.u32_be()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let rank = r.u32_be()? as usize;
        if rank > 8 {
            return Err(Error::format(r.pos, format!("tensor rank {rank} is absurd")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32_be()? as usize);
        }
        let numel = checked_product(&shape, "tensor element count")?;
        let data_bytes = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::format(r.pos, "tensor byte count overflows"))?,
        )?;
        let data: Vec<f64> = data_bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
    }
    r.crc(bytes)?;
    r.done()?;
    Ok(Checkpoint {
        config_hash,
        config_json,
        tensors,
    })
}

pub fn save_checkpoint<S: Scalar>(
    g: &Graph<S>,
    params: &[Var],
    config_json: &str,
    config_hash: [u8; 32],
    path: &Path,
) -> Result<()> {
    let bytes = encode_checkpoint(g, params, config_json, config_hash)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

fn checked_product(dims: &[usize], what: &str) -> Result<usize> {
    let mut acc = 1usize;
    for &d in dims {
        acc = acc
            .checked_mul(d)
            .ok_or_else(|| Error::format(0, format!("{what} overflows")))?;
    }
    Ok(acc)
}

/// Cursor over an artifact byte stream with hard bounds checking.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Reader<'a> {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(|| Error::Truncated {
            expected: usize::MAX,
            actual: self.bytes.len(),
        })?;
        // The trailing 4 bytes are the checksum, never payload.
        if end + 4 > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end + 4,
                actual: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8; 4], name: &str) -> Result<()> {
        if self.bytes.len() < 4 {
            return Err(Error::Truncated {
                expected: 4,
                actual: self.bytes.len(),
            });
        }
        if &self.bytes[..4] != want {
            return Err(Error::format(
                0,
                format!("bad magic {:02X?}, want {name}", &self.bytes[..4]),
            ));
        }
        self.pos = 4;
        Ok(())
    }

    fn version(&mut self) -> Result<u16> {
        let v = u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes"));
        if v != VERSION {
            return Err(Error::format(
                4,
                format!("unsupported container version {v}, this build reads {VERSION}"),
            ));
        }
        Ok(v)
    }

    fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64_be(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Verify the trailing CRC-32 over bytes[4..pos].
    fn crc(&mut self, all: &[u8]) -> Result<()> {
        if self.pos + 4 > all.len() {
            return Err(Error::Truncated {
                expected: self.pos + 4,
                actual: all.len(),
            });
        }
        let stored = u32::from_be_bytes(all[self.pos..self.pos + 4].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&all[4..self.pos]);
        if stored != computed {
            return Err(Error::format(
                self.pos,
                format!("checksum mismatch: stored {stored:08X}, computed {computed:08X}"),
            ));
        }
        self.pos += 4;
        Ok(())
    }

    fn done(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.pos,
                format!("{} trailing bytes after checksum", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}
