use std::fmt::{Debug, Display};

use num_traits::{Float, NumAssign};

/// Floating-point element type the numeric core is generic over.
///
/// `f64` is the reference precision: every oracle-backed check runs against
/// it. `f32` exists for the heavy end-to-end runs, where it roughly triples
/// kernel throughput on one core. Conversions go through `f64` so that a
/// value written by one precision can be reloaded by the other without a
/// platform-dependent detour.
pub trait Scalar:
    Float + NumAssign + Copy + Send + Sync + Debug + Display + Default + 'static
{
    /// Short name recorded in provenance metadata ("f32" / "f64").
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline(always)]
    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline(always)]
    fn from_f64(v: f64) -> f64 {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}
