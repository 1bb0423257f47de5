//! Numeric traits for payoff values and statistical computations.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, FloatConst, FromPrimitive, Num, ToPrimitive};

/// A payoff value. Comparisons are exact; no epsilon is ever applied.
pub trait Payoff: Copy + PartialOrd + Debug + Num + FromPrimitive + ToPrimitive + Send + Sync {
    fn is_finite_payoff(&self) -> bool;

    /// Text form used in rendered payoff tables. Must parse back to the same value.
    fn render(&self) -> String;
}

impl Payoff for f64 {
    fn is_finite_payoff(&self) -> bool {
        self.is_finite()
    }

    fn render(&self) -> String {
        // Debug gives the shortest round-trip form and always keeps a decimal point.
        format!("{self:?}")
    }
}

impl Payoff for f32 {
    fn is_finite_payoff(&self) -> bool {
        self.is_finite()
    }

    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl Payoff for Ratio<i64> {
    fn is_finite_payoff(&self) -> bool {
        true
    }

    fn render(&self) -> String {
        if self.is_integer() {
            format!("{}", self.numer())
        } else {
            format!("{}/{}", self.numer(), self.denom())
        }
    }
}

/// Floating-point type usable by the statistics module.
pub trait Real: Float + FloatConst + FromPrimitive + Debug + Send + Sync {
    /// Converts a literal; every `f64` constant used by the routines is representable.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Convergence target for iterative special functions.
    fn tolerance() -> Self;
}

impl Real for f64 {
    fn tolerance() -> Self {
        1e-14
    }
}

impl Real for f32 {
    fn tolerance() -> Self {
        1e-7
    }
}
