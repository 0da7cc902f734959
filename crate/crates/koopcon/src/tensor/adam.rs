use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

/// Adam with bias correction. Moment buffers are keyed by position in the
/// parameter list handed to [`AdamState::step`]; the list must be the same
/// (same order, same shapes) on every call.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub learning_rate: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    step_count: u64,
    first_moment: Vec<Vec<S>>,
    second_moment: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> AdamState<S> {
        AdamState {
            learning_rate: S::from_f64(learning_rate),
            beta1: S::from_f64(beta1),
            beta2: S::from_f64(beta2),
            epsilon: S::from_f64(epsilon),
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    /// Defaults: lr 1e-3, beta (0.9, 0.999), eps 1e-8.
    pub fn default_hyper() -> AdamState<S> {
        AdamState::new(1e-3, 0.9, 0.999, 1e-8)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over graph-resident parameters. Parameters whose grad is
    /// unset are treated as having zero gradient (their moments still decay).
    /// Increments `step_count` by exactly 1.
    pub fn step(&mut self, g: &mut Graph<S>, params: &[Var]) -> Result<()> {
        if self.first_moment.is_empty() {
            for &v in params {
                let n = g.value(v).numel();
                self.first_moment.push(vec![S::zero(); n]);
                self.second_moment.push(vec![S::zero(); n]);
            }
        }
        if self.first_moment.len() != params.len() {
            return Err(Error::contract(
                "adam_step",
                format!(
                    "state built for {} parameters, got {}",
                    self.first_moment.len(),
                    params.len()
                ),
            ));
        }
        self.step_count += 1;
        // Bias corrections in f64: at f32 precision beta2^t underflows late in
        // long runs if accumulated natively.
        let t = self.step_count as i32;
        let bc1 = S::from_f64(1.0 - self.beta1.as_f64().powi(t));
        let bc2 = S::from_f64(1.0 - self.beta2.as_f64().powi(t));
        let one = S::one();
        for (slot, &v) in params.iter().enumerate() {
            let (value, grad) = g.param_slices_mut(v);
            let m = &mut self.first_moment[slot];
            let s2 = &mut self.second_moment[slot];
            if m.len() != value.len() {
                return Err(Error::contract(
                    "adam_step",
                    format!(
                        "parameter {} changed size: moments {}, value {}",
                        slot,
                        m.len(),
                        value.len()
                    ),
                ));
            }
            if let Some(grad) = grad {
                if grad.len() != value.len() {
                    return Err(Error::contract(
                        "adam_step",
                        format!(
                            "parameter {} grad size {} != value size {}",
                            slot,
                            grad.len(),
                            value.len()
                        ),
                    ));
                }
                for i in 0..value.len() {
                    let gv = grad[i];
                    m[i] = self.beta1 * m[i] + (one - self.beta1) * gv;
                    s2[i] = self.beta2 * s2[i] + (one - self.beta2) * gv * gv;
                    let mhat = m[i] / bc1;
                    let vhat = s2[i] / bc2;
                    value[i] = value[i] - self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
                }
            } else {
                for i in 0..value.len() {
                    m[i] = self.beta1 * m[i];
                    s2[i] = self.beta2 * s2[i];
                    let mhat = m[i] / bc1;
                    let vhat = s2[i] / bc2;
                    value[i] = value[i] - self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
                }
            }
        }
        Ok(())
    }
}
