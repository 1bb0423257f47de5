//! Significance tests and effect sizes for the outcome tables: Pearson
//! chi-square, two-sided Fisher exact, Haldane odds ratios, Holm
//! correction, Cramér's V, Kruskal-Wallis and Mann-Whitney U.

mod contingency;
mod rank;
pub mod special;

use serde::Serialize;

use crate::scalar::Real;

pub use contingency::{
    chi_square_independence, cramers_v, fisher_exact_2x2, holm_correct, hypergeometric_pmf, odds_ratio_haldane,
    ContingencyError, ContingencyTable, CramerConvention,
};
pub use rank::{kruskal_wallis, mann_whitney_u, RankError, EXACT_MWU_LIMIT};

/// A p-value, or a marker that the test has no variation to work with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PValue<F> {
    Value(F),
    Degenerate,
}

impl<F: Real> PValue<F> {
    pub fn value(self) -> Option<F> {
        match self {
            PValue::Value(p) => Some(p),
            PValue::Degenerate => None,
        }
    }

    /// The p-value, with degenerate results treated as 1.
    pub fn or_one(self) -> F {
        self.value().unwrap_or_else(F::one)
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, PValue::Degenerate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestResult<F> {
    pub statistic: Option<F>,
    pub df: Option<usize>,
    pub p_value: PValue<F>,
    /// Cramér's V (standard convention) for chi-square, the Haldane odds
    /// ratio for Fisher.
    pub effect: Option<F>,
}

impl<F: Real> TestResult<F> {
    pub fn degenerate(df: Option<usize>) -> Self {
        TestResult { statistic: None, df, p_value: PValue::Degenerate, effect: None }
    }
}

/// Renders a number for report tables; degenerate values become an em dash.
pub fn format_opt<F: Real>(v: Option<F>, decimals: usize) -> String {
    match v.and_then(|x| x.to_f64()) {
        Some(x) => format!("{x:.decimals$}"),
        None => "\u{2014}".to_string(),
    }
}

/// Renders a p-value, using `< .001` style for very small values.
pub fn format_p<F: Real>(p: PValue<F>) -> String {
    match p.value().and_then(|x| x.to_f64()) {
        None => "\u{2014}".to_string(),
        Some(x) if x < 0.001 => "<0.001".to_string(),
        Some(x) => format!("{x:.3}"),
    }
}
