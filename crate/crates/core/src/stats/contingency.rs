use serde::{Deserialize, Serialize};

use super::special::{chi_square_sf, ln_factorial};
use super::{PValue, TestResult};
use crate::scalar::Real;

/// Relative slack when comparing table probabilities in the Fisher test.
const FISHER_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContingencyError {
    #[error("contingency table must be at least 2x2, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("contingency table rows have different lengths")]
    Ragged,
    #[error("expected a 2x2 table, got {0}x{1}")]
    NotTwoByTwo(usize, usize),
    #[error("cannot parse contingency table {0:?}")]
    Parse(String),
}

/// An r x c table of non-negative counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    counts: Vec<Vec<u64>>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl ContingencyTable {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self, ContingencyError> {
        let r = counts.len();
        let c = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|row| row.len() != c) {
            return Err(ContingencyError::Ragged);
        }
        if r < 2 || c < 2 {
            return Err(ContingencyError::TooSmall(r, c));
        }
        let row_labels = (1..=r).map(|i| format!("row{i}")).collect();
        let col_labels = (1..=c).map(|j| format!("col{j}")).collect();
        Ok(ContingencyTable { counts, row_labels, col_labels })
    }

    pub fn two_by_two(a: u64, b: u64, c: u64, d: u64) -> Self {
        ContingencyTable::new(vec![vec![a, b], vec![c, d]]).expect("2x2")
    }

    pub fn with_labels(mut self, rows: Vec<String>, cols: Vec<String>) -> Self {
        assert_eq!(rows.len(), self.rows(), "row label count");
        assert_eq!(cols.len(), self.cols(), "column label count");
        self.row_labels = rows;
        self.col_labels = cols;
        self
    }

    /// Parses `"a,b;c,d;..."`: rows separated by `;`, cells by `,`.
    pub fn parse(text: &str) -> Result<Self, ContingencyError> {
        let err = || ContingencyError::Parse(text.to_string());
        let counts = text
            .split(';')
            .map(|row| row.split(',').map(|v| v.trim().parse::<u64>().map_err(|_| err())).collect())
            .collect::<Result<Vec<Vec<u64>>, _>>()?;
        ContingencyTable::new(counts)
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    pub fn cols(&self) -> usize {
        self.counts[0].len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    /// The 2x2 submatrix of rows `i` and `j`.
    pub fn pair(&self, i: usize, j: usize) -> Result<ContingencyTable, ContingencyError> {
        if self.cols() != 2 {
            return Err(ContingencyError::NotTwoByTwo(self.rows(), self.cols()));
        }
        Ok(ContingencyTable {
            counts: vec![self.counts[i].clone(), self.counts[j].clone()],
            row_labels: vec![self.row_labels[i].clone(), self.row_labels[j].clone()],
            col_labels: self.col_labels.clone(),
        })
    }

    fn cells_2x2(&self) -> Result<[u64; 4], ContingencyError> {
        match self.counts.as_slice() {
            [r0, r1] if r0.len() == 2 => Ok([r0[0], r0[1], r1[0], r1[1]]),
            _ => Err(ContingencyError::NotTwoByTwo(self.rows(), self.cols())),
        }
    }
}

fn count<F: Real>(n: u64) -> F {
    F::lit(n as f64)
}

/// Pearson chi-square test of independence. Degenerate when any row or
/// column margin is zero.
pub fn chi_square_independence<F: Real>(t: &ContingencyTable) -> TestResult<F> {
    let (r, c) = (t.rows(), t.cols());
    let df = (r - 1) * (c - 1);
    let rows = t.row_sums();
    let cols = t.col_sums();
    if rows.contains(&0) || cols.contains(&0) {
        return TestResult::degenerate(Some(df));
    }
    let n: F = count(t.total());
    let mut stat = F::zero();
    for (i, row) in t.counts().iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = count::<F>(rows[i]) * count::<F>(cols[j]) / n;
            let diff = count::<F>(o) - e;
            stat = stat + diff * diff / e;
        }
    }
    TestResult {
        statistic: Some(stat),
        df: Some(df),
        p_value: PValue::Value(chi_square_sf(stat, df).min(F::one()).max(F::zero())),
        effect: Some(cramers_v(stat, t.total(), r, c, CramerConvention::Standard)),
    }
}

/// Hypergeometric probability of `x` successes in the top-left cell given
/// margins (row 1 total `r1`, column 1 total `c1`, grand total `n`).
pub fn hypergeometric_pmf<F: Real>(x: u64, r1: u64, c1: u64, n: u64) -> F {
    let lo = c1.saturating_sub(n - r1);
    if x < lo || x > r1.min(c1) {
        return F::zero();
    }
    let ln_choose = |n: u64, k: u64| ln_factorial::<F>(n) - ln_factorial::<F>(k) - ln_factorial::<F>(n - k);
    (ln_choose(r1, x) + ln_choose(n - r1, c1 - x) - ln_choose(n, c1)).exp()
}

/// Two-sided Fisher exact test: the total probability of every table with
/// the observed margins that is no more likely than the observed one.
/// The effect is the Haldane-corrected odds ratio.
pub fn fisher_exact_2x2<F: Real>(t: &ContingencyTable) -> Result<TestResult<F>, ContingencyError> {
    let [a, b, c, d] = t.cells_2x2()?;
    let r1 = a + b;
    let c1 = a + c;
    let n = a + b + c + d;
    let lo = c1.saturating_sub(n - r1);
    let hi = r1.min(c1);
    let p_obs: F = hypergeometric_pmf(a, r1, c1, n);
    let cutoff = p_obs * (F::one() + F::lit(FISHER_SLACK));
    let mut p = F::zero();
    for x in lo..=hi {
        let px: F = hypergeometric_pmf(x, r1, c1, n);
        if px <= cutoff {
            p = p + px;
        }
    }
    Ok(TestResult {
        statistic: None,
        df: None,
        p_value: PValue::Value(p.min(F::one())),
        effect: Some(odds_ratio_haldane(t)?),
    })
}

/// Odds ratio with 0.5 added to every cell.
pub fn odds_ratio_haldane<F: Real>(t: &ContingencyTable) -> Result<F, ContingencyError> {
    let [a, b, c, d] = t.cells_2x2()?.map(|v| count::<F>(v) + F::lit(0.5));
    Ok((a * d) / (b * c))
}

/// Holm step-down adjustment. Output is in input order.
pub fn holm_correct<F: Real>(p_values: &[F]) -> Vec<F> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].partial_cmp(&p_values[j]).expect("p-values are not NaN").then(i.cmp(&j)));
    let mut adjusted = vec![F::zero(); m];
    let mut running = F::zero();
    for (rank, &idx) in order.iter().enumerate() {
        let scaled = (F::lit((m - rank) as f64) * p_values[idx]).min(F::one());
        running = running.max(scaled);
        adjusted[idx] = running;
    }
    adjusted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CramerConvention {
    /// sqrt(chi2 / (n * min(r-1, c-1)))
    Standard,
    /// sqrt(chi2 / (n * (r-1)))
    RowsMinusOne,
}

impl CramerConvention {
    pub fn key(self) -> &'static str {
        match self {
            CramerConvention::Standard => "standard",
            CramerConvention::RowsMinusOne => "rows_minus_one",
        }
    }
}

pub fn cramers_v<F: Real>(statistic: F, n: u64, r: usize, c: usize, convention: CramerConvention) -> F {
    let k = match convention {
        CramerConvention::Standard => (r - 1).min(c - 1),
        CramerConvention::RowsMinusOne => r - 1,
    };
    (statistic / (count::<F>(n) * F::lit(k as f64))).sqrt()
}
