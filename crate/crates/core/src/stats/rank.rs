use super::special::{chi_square_sf, normal_sf};
use super::{PValue, TestResult};
use crate::scalar::Real;

/// Mann-Whitney U uses the exact null distribution when the smaller sample
/// has at most this many values.
pub const EXACT_MWU_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RankError {
    #[error("need at least two groups")]
    TooFewGroups,
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("sample contains NaN")]
    NaN,
}

/// Mid-ranks (1-based) of the pooled values, plus the tie sizes.
fn midranks<F: Real>(values: &[F]) -> Result<(Vec<F>, Vec<usize>), RankError> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(RankError::NaN);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("no NaN"));
    let mut ranks = vec![F::zero(); values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end share the average rank.
        let rank = F::lit((start + 1 + end) as f64) / F::lit(2.0);
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        ties.push(end - start);
        start = end;
    }
    Ok((ranks, ties))
}

fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

/// Kruskal-Wallis H with tie correction; p from chi-square with k-1 df.
/// Degenerate when every observation is identical.
pub fn kruskal_wallis<F: Real>(groups: &[Vec<F>]) -> Result<TestResult<F>, RankError> {
    if groups.len() < 2 {
        return Err(RankError::TooFewGroups);
    }
    if let Some(i) = groups.iter().position(Vec::is_empty) {
        return Err(RankError::EmptyGroup(i));
    }
    let df = groups.len() - 1;
    let pooled: Vec<F> = groups.iter().flatten().copied().collect();
    let (ranks, ties) = midranks(&pooled)?;
    let n = pooled.len() as f64;
    let correction = 1.0 - tie_sum(&ties) / (n.powi(3) - n);
    if correction <= 0.0 {
        return Ok(TestResult::degenerate(Some(df)));
    }
    let mut offset = 0;
    let mut sum = F::zero();
    for g in groups {
        let r: F = ranks[offset..offset + g.len()].iter().fold(F::zero(), |acc, &x| acc + x);
        sum = sum + r * r / F::lit(g.len() as f64);
        offset += g.len();
    }
    let nf = F::lit(n);
    let h = F::lit(12.0) / (nf * (nf + F::one())) * sum - F::lit(3.0) * (nf + F::one());
    let h = (h / F::lit(correction)).max(F::zero());
    Ok(TestResult {
        statistic: Some(h),
        df: Some(df),
        p_value: PValue::Value(chi_square_sf(h, df).min(F::one())),
        effect: None,
    })
}

/// Two-sided Mann-Whitney U. The statistic is U for the first sample.
/// Exact (tie-aware) null distribution when the smaller sample has at most
/// [`EXACT_MWU_LIMIT`] values; otherwise a normal approximation with
/// tie-corrected variance and continuity correction.
pub fn mann_whitney_u<F: Real>(a: &[F], b: &[F]) -> Result<TestResult<F>, RankError> {
    if a.is_empty() {
        return Err(RankError::EmptyGroup(0));
    }
    if b.is_empty() {
        return Err(RankError::EmptyGroup(1));
    }
    let pooled: Vec<F> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled)?;
    if ties.len() == 1 {
        return Ok(TestResult::degenerate(None));
    }
    let (na, nb) = (a.len(), b.len());
    let ra: F = ranks[..na].iter().fold(F::zero(), |acc, &x| acc + x);
    let u = ra - F::lit((na * (na + 1)) as f64 / 2.0);

    let p = if na.min(nb) <= EXACT_MWU_LIMIT {
        exact_p(&ranks, na, nb)
    } else {
        let n = (na + nb) as f64;
        let mu = (na * nb) as f64 / 2.0;
        let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_sum(&ties) / (n * (n - 1.0)));
        let u64f = u.to_f64().expect("finite");
        let z = ((u64f - mu).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * normal_sf(z)).min(1.0)
    };
    Ok(TestResult { statistic: Some(u), df: None, p_value: PValue::Value(F::lit(p)), effect: None })
}

/// Exact two-sided p: doubles the smaller tail of the rank-sum distribution
/// of the smaller sample over all equally likely group assignments.
fn exact_p<F: Real>(ranks: &[F], na: usize, nb: usize) -> f64 {
    // Doubled mid-ranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (r.to_f64().expect("finite") * 2.0).round() as usize).collect();
    let (k, observed): (usize, usize) =
        if na <= nb { (na, doubled[..na].iter().sum()) } else { (nb, doubled[na..].iter().sum()) };
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: number of j-subsets with doubled rank sum s.
    let mut ways = vec![vec![0f64; max_sum + 1]; k + 1];
    ways[0][0] = 1.0;
    for &d in &doubled {
        for j in (1..=k).rev() {
            let (lower, upper) = ways.split_at_mut(j);
            let prev = &lower[j - 1];
            for s in (d..=max_sum).rev() {
                upper[0][s] += prev[s - d];
            }
        }
    }
    let dist = &ways[k];
    let total: f64 = dist.iter().sum();
    let lower: f64 = dist[..=observed].iter().sum();
    let upper: f64 = dist[observed..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_average_ties() {
        let (r, t) = midranks(&[3.0f64, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![1, 1, 2]);
    }

    #[test]
    fn mwu_two_by_two_exact() {
        let r = mann_whitney_u(&[1.0f64, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, Some(0.0));
        assert!((r.p_value.or_one() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mwu_identical_values_degenerate() {
        let r = mann_whitney_u(&[2.0f64, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(r.p_value.is_degenerate());
        assert_eq!(r.p_value.or_one(), 1.0);
    }

    #[test]
    fn mwu_identical_samples_have_p_one() {
        let r = mann_whitney_u(&[1.0f64, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r.p_value.or_one(), 1.0);
    }

    #[test]
    fn mwu_input_errors() {
        assert_eq!(mann_whitney_u::<f64>(&[], &[1.0]).unwrap_err(), RankError::EmptyGroup(0));
        assert_eq!(mann_whitney_u(&[f64::NAN], &[1.0]).unwrap_err(), RankError::NaN);
    }

    #[test]
    fn kruskal_identical_groups() {
        let g = vec![vec![1.0f64, 2.0, 3.0], vec![1.0, 2.0, 3.0]];
        let r = kruskal_wallis(&g).unwrap();
        assert!(r.statistic.unwrap().abs() < 1e-12);
        assert!((r.p_value.or_one() - 1.0).abs() < 1e-12);
        let flat = vec![vec![5.0f64; 3], vec![5.0; 2]];
        assert!(kruskal_wallis(&flat).unwrap().p_value.is_degenerate());
        assert_eq!(kruskal_wallis(&[vec![1.0f64]]).unwrap_err(), RankError::TooFewGroups);
        assert_eq!(kruskal_wallis(&[vec![1.0f64], vec![]]).unwrap_err(), RankError::EmptyGroup(1));
    }
}
