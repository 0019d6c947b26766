//! Rank tests, the 2×2 chi-square test and Bonferroni correction.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Pooled samples at or below this size use the exact rank-sum distribution.
pub const EXACT_RANK_SUM_LIMIT: usize = 20;

/// `alpha / n_tests`.
///
/// # Panics
///
/// If `alpha` is outside `(0, 0.5)` or `n_tests` is zero.
pub fn bonferroni_alpha(alpha: f64, n_tests: usize) -> f64 {
    assert!(alpha > 0.0 && alpha < 0.5, "alpha must lie in (0, 0.5)");
    assert!(n_tests >= 1, "at least one test is required");
    alpha / n_tests as f64
}

/// Two-sided tail probability of a standard normal deviate.
pub fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Average ranks (1-based) of `values`, plus the tie term `Σ (t³ − t)`.
pub(crate) fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        let t = (end - start) as f64;
        ties += t * t * t - t;
        start = end;
    }
    (ranks, ties)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

fn check_sample(name: &str, s: &[f64]) -> Result<()> {
    if s.len() < 5 {
        return Err(Error::InsufficientData {
            needed: 5,
            got: s.len(),
        });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("sample `{name}` has non-finite values")));
    }
    Ok(())
}

/// Two-sided Wilcoxon rank-sum / Mann-Whitney U test.
///
/// Exact for pooled sizes up to [`EXACT_RANK_SUM_LIMIT`] (ties handled through
/// the distribution of midrank sums); otherwise the normal approximation with
/// tie and continuity corrections.
pub fn rank_sum_test(x: &[f64], y: &[f64]) -> Result<RankSumResult> {
    check_sample("x", x)?;
    check_sample("y", y)?;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let n1 = x.len() as f64;
    let n2 = y.len() as f64;
    let n = n1 + n2;
    if ties == n * n * n - n {
        return Err(Error::DegenerateDistribution(
            "every observation is tied".into(),
        ));
    }
    let r1: f64 = ranks[..x.len()].iter().sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;

    if pooled.len() <= EXACT_RANK_SUM_LIMIT {
        let p = exact_rank_sum_p(&ranks, x.len());
        return Ok(RankSumResult {
            u,
            p_value: p,
            exact: true,
        });
    }

    let mu = n1 * n2 / 2.0;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let dev = ((u - mu).abs() - 0.5).max(0.0);
    Ok(RankSumResult {
        u,
        p_value: normal_two_sided(dev / var.sqrt()),
        exact: false,
    })
}

/// Exact two-sided p-value of the first-sample rank sum, counting subsets of
/// size `k` over doubled (hence integral) midranks.
fn exact_rank_sum_p(ranks: &[f64], k: usize) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[j][s]: subsets of size j with doubled rank sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; k + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for j in (1..=k).rev() {
            for s in (r..=max_sum).rev() {
                let add = ways[j - 1][s - r];
                if add != 0.0 {
                    ways[j][s] += add;
                }
            }
        }
    }
    let observed: usize = doubled[..k].iter().sum();
    let n = ranks.len() as f64;
    let centre = k as f64 * (n + 1.0);
    let obs_dev = (observed as f64 - centre).abs();
    let total: f64 = ways[k].iter().sum();
    let extreme: f64 = ways[k]
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as f64 - centre).abs() >= obs_dev - 1e-9)
        .map(|(_, c)| c)
        .sum();
    (extreme / total).min(1.0)
}

/// Two-sided Wilcoxon signed-rank test on paired differences (zeros dropped),
/// normal approximation with tie and continuity corrections.
pub fn signed_rank_test(differences: &[f64]) -> Result<f64> {
    let nz: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::DegenerateDistribution(
            "all paired differences are zero".into(),
        ));
    }
    if nz.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite paired difference".into()));
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let n = nz.len() as f64;
    let w_plus: f64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let mu = n * (n + 1.0) / 4.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    if var <= 0.0 {
        return Err(Error::DegenerateDistribution(
            "signed-rank variance is zero".into(),
        ));
    }
    let dev = ((w_plus - mu).abs() - 0.5).max(0.0);
    Ok(normal_two_sided(dev / var.sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Pearson chi-square test of independence on a 2×2 table (1 degree of
/// freedom, no continuity correction).
pub fn chi_square_test(table: [[u64; 2]; 2]) -> Result<ChiSquareResult> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let total = rows[0] + rows[1];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(Error::DegenerateDistribution(
            "contingency table has an empty margin".into(),
        ));
    }
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] as f64 * cols[j] as f64 / total as f64;
            if expected < 1.0 {
                return Err(Error::Validation(format!(
                    "expected count {expected:.3} in cell ({i}, {j}) is below 1"
                )));
            }
            let d = table[i][j] as f64 - expected;
            stat += d * d / expected;
        }
    }
    Ok(ChiSquareResult {
        statistic: stat,
        p_value: erfc((stat / 2.0).sqrt()).min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use itertools::Itertools;

    #[test]
    fn bonferroni_examples() {
        assert_abs_diff_eq!(bonferroni_alpha(0.05, 15), 0.05 / 15.0);
        assert!((bonferroni_alpha(0.05, 15) - 0.0033).abs() < 5e-5);
        assert_eq!(bonferroni_alpha(0.05, 1), 0.05);
        assert_abs_diff_eq!(bonferroni_alpha(0.01, 4), 0.0025, epsilon = 1e-15);
    }

    #[test]
    fn midranks_average_ties() {
        let (r, t) = midranks(&[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(r, vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(t, 6.0);
    }

    #[test]
    fn rank_sum_identical_samples_are_not_separated() {
        let x: Vec<f64> = (1..=30).map(f64::from).collect();
        let r = rank_sum_test(&x, &x).unwrap();
        assert!(r.p_value >= 0.9, "{r:?}");
        let small = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!(rank_sum_test(&small, &small).unwrap().p_value >= 0.9);
    }

    #[test]
    fn rank_sum_fully_separated() {
        let x: Vec<f64> = (1..=20).map(f64::from).collect();
        let y: Vec<f64> = (101..=120).map(f64::from).collect();
        let r = rank_sum_test(&x, &y).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.p_value < 1e-6, "{r:?}");
    }

    #[test]
    fn rank_sum_errors() {
        assert!(matches!(
            rank_sum_test(&[1.0; 4], &[2.0; 5]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            rank_sum_test(&[1.0; 6], &[1.0; 6]),
            Err(Error::DegenerateDistribution(_))
        ));
    }

    /// Enumerates every assignment of pooled midranks to the first sample.
    fn brute_force_p(x: &[f64], y: &[f64]) -> f64 {
        let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
        let (ranks, _) = midranks(&pooled);
        let n = pooled.len() as f64;
        let k = x.len();
        let centre = k as f64 * (n + 1.0) / 2.0;
        let obs = (ranks[..k].iter().sum::<f64>() - centre).abs();
        let mut total = 0usize;
        let mut extreme = 0usize;
        for combo in (0..pooled.len()).combinations(k) {
            let s: f64 = combo.iter().map(|&i| ranks[i]).sum();
            total += 1;
            if (s - centre).abs() >= obs - 1e-9 {
                extreme += 1;
            }
        }
        extreme as f64 / total as f64
    }

    #[test]
    fn exact_mode_matches_enumeration() {
        let cases: Vec<(Vec<f64>, Vec<f64>)> = vec![
            (vec![1.0, 3.0, 5.0, 7.0, 9.0], vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0]),
            (vec![1.0, 2.0, 2.0, 3.0, 8.0], vec![2.0, 5.0, 6.0, 6.0, 9.0, 11.0, 12.0]),
            (vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6], vec![0.7, 0.8, 0.9, 1.0, 1.1]),
            (
                vec![3.0, 3.0, 3.0, 1.0, 2.0, 4.0, 4.0],
                vec![3.0, 5.0, 5.0, 1.0, 6.0, 7.0, 2.0, 8.0],
            ),
        ];
        for (x, y) in cases {
            let r = rank_sum_test(&x, &y).unwrap();
            assert!(r.exact);
            assert_abs_diff_eq!(r.p_value, brute_force_p(&x, &y), epsilon = 1e-12);
        }
    }

    #[test]
    fn signed_rank_symmetric_and_shifted() {
        let sym: Vec<f64> = (1..=40).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) + 1.0 }).collect();
        assert!(signed_rank_test(&sym).unwrap() > 0.5);
        let shifted: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        assert!(signed_rank_test(&shifted).unwrap() < 1e-6);
        assert!(signed_rank_test(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn chi_square_examples() {
        let r = chi_square_test([[50, 50], [50, 50]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = chi_square_test([[90, 10], [10, 90]]).unwrap();
        assert_abs_diff_eq!(r.statistic, 128.0, epsilon = 1e-9);
        assert!(r.p_value < 1e-6);
        assert!(matches!(
            chi_square_test([[0, 0], [3, 4]]),
            Err(Error::DegenerateDistribution(_))
        ));
    }
}
