//! Central finite-difference verification of analytic gradients.
//!
//! Used by the test suite and by the CLI `selftest` subcommand. The function
//! under test is expressed as a closure that rebuilds a scalar loss from leaf
//! tensors, so the same closure serves both the analytic pass (one backward)
//! and the numeric pass (2 * numel forward evaluations).

use crate::error::Result;
use crate::tensor::{Graph, Tensor, Var};

/// Outcome of one finite-difference comparison.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst relative error over elements where either gradient is
    /// meaningfully nonzero.
    pub max_rel_err: f64,
    /// Worst absolute error over elements where both gradients are below the
    /// degeneracy cutoff (1e-6); relative error is meaningless there.
    pub max_abs_err: f64,
    pub elements: usize,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err < rel_tol && self.max_abs_err < 1e-6
    }
}

/// Compare the analytic gradient of `build` with central finite differences
/// of step `h`, for every element of every tensor in `inputs`.
///
/// `build` must be a pure function of the leaf values: it may create extra
/// constants or deterministic parameter leaves internally, but two calls with
/// the same inputs must produce the same scalar.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t.clone(), true)).collect();
        let root = build(&mut g, &vars)?;
        Ok(g.scalar_value(root))
    };

    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let root = build(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            g.grad(v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut out = GradCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        elements: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for ti in 0..inputs.len() {
        for e in 0..inputs[ti].numel() {
            let orig = work[ti].data()[e];
            work[ti].data_mut()[e] = orig + h;
            let up = eval(&work)?;
            work[ti].data_mut()[e] = orig - h;
            let down = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = analytic[ti][e];
            out.elements += 1;
            if an.abs() < 1e-6 && fd.abs() < 1e-6 {
                out.max_abs_err = out.max_abs_err.max((an - fd).abs());
            } else {
                let rel = (an - fd).abs() / an.abs().max(fd.abs());
                out.max_rel_err = out.max_rel_err.max(rel);
            }
        }
    }
    Ok(out)
}
