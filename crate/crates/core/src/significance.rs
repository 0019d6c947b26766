//! Flagging: direction validation, permutation tests for the association
//! metrics and the subsample rank-sum route for R-RIPA.
//!
//! A direction is validated with three two-sided rank tests, all of which must
//! fall below the (corrected) significance level:
//!
//! 1. cosines of `A` members with the direction against cosines of `B` members;
//! 2. for each member of `A ∪ B`, where its |cosine| with the direction falls
//!    among its |cosines| with `n_random` sphere-uniform directions, tested for
//!    symmetry around the median with a signed-rank test;
//! 3. orientation-adjusted member cosines (`A` as is, `B` negated) against the
//!    cosines of `n_random` synthetic random entities with the direction.
//!
//! Permutation tests compare the observed statistic with re-partitions of the
//! pooled per-entity scores. Each replicate draws from its own seeded stream,
//! so p-values do not depend on the number of worker threads.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::BiasDirection;
use crate::error::{Error, Result};
use crate::metrics::{direction_cosines, AttributeContrast};
use crate::parallel;
use crate::rng;
use crate::space::{self, check_disjoint, EmbeddingSpace, EntityGroup};
use crate::stats::{rank_sum_test, signed_rank_test};

pub const DEFAULT_N_RANDOM: usize = 1_000;
/// Partitions are enumerated exhaustively when there are at most this many.
pub const EXACT_PARTITION_LIMIT: u128 = 50_000;

/// Outcome of the three direction-validation tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionValidation {
    /// `A` cosines vs `B` cosines.
    pub test1_p: f64,
    /// Attribute direction vs random directions, per entity.
    pub test2_p: f64,
    /// Entities vs random entities.
    pub test3_p: f64,
    pub alpha_corrected: f64,
    pub passed: bool,
    pub n_random: usize,
    pub seed: u64,
    pub n_a: usize,
    pub n_b: usize,
}

impl DirectionValidation {
    pub fn p_values(&self) -> [f64; 3] {
        [self.test1_p, self.test2_p, self.test3_p]
    }
}

#[derive(Clone, Debug)]
pub struct ValidationOptions {
    pub n_random: usize,
    pub seed: u64,
    pub alpha_corrected: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            n_random: DEFAULT_N_RANDOM,
            seed: 0,
            alpha_corrected: 0.05,
        }
    }
}

/// Degenerate rank tests (everything tied) carry no evidence: p = 1.
fn p_or_one(r: Result<f64>) -> Result<f64> {
    match r {
        Ok(p) => Ok(p),
        Err(Error::DegenerateDistribution(_)) => Ok(1.0),
        Err(e) => Err(e),
    }
}

pub fn validate_direction(
    direction: &BiasDirection,
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
    opts: &ValidationOptions,
) -> Result<DirectionValidation> {
    check_disjoint(a, b)?;
    for g in [a, b] {
        if g.len() < 5 {
            return Err(Error::InsufficientData {
                needed: 5,
                got: g.len(),
            });
        }
    }
    if opts.n_random < 100 {
        return Err(Error::Config(format!(
            "n_random must be at least 100, got {}",
            opts.n_random
        )));
    }
    let dim = space.dim();
    let cos_a = direction_cosines(a, direction, space)?;
    let cos_b = direction_cosines(b, direction, space)?;

    let test1_p = p_or_one(rank_sum_test(&cos_a, &cos_b).map(|r| r.p_value))?;

    // test 2
    let mut r = rng::stream(rng::derive_seed(opts.seed, "validation-directions"), 0);
    let randoms: Vec<Vec<f64>> = (0..opts.n_random)
        .map(|_| rng::random_unit_vector(&mut r, dim))
        .collect();
    let members: Vec<_> = a.members().iter().chain(b.members()).collect();
    let percentiles: Vec<f64> = parallel::map_blocks(members.len(), 64, |range| {
        range
            .map(|i| {
                let unit = space.unit_vector(members[i])?;
                let target = space::dot(&unit, &direction.vector).abs();
                let mut below = 0.0;
                for rv in &randoms {
                    let c = space::dot(&unit, rv).abs();
                    if c < target {
                        below += 1.0;
                    } else if c == target {
                        below += 0.5;
                    }
                }
                Ok(below / randoms.len() as f64 - 0.5)
            })
            .collect::<Result<Vec<f64>>>()
    })
    .into_iter()
    .flatten_ok()
    .collect::<Result<Vec<f64>>>()?;
    let test2_p = p_or_one(signed_rank_test(&percentiles))?;

    // test 3
    let scale = space.median_norm();
    let mut r = rng::stream(rng::derive_seed(opts.seed, "validation-entities"), 0);
    let random_cos: Vec<f64> = (0..opts.n_random)
        .map(|_| {
            let v: Vec<f64> = rng::random_unit_vector(&mut r, dim)
                .into_iter()
                .map(|x| x * scale)
                .collect();
            space::dot(&v, &direction.vector) / space::norm(&v)
        })
        .collect();
    let adjusted: Vec<f64> = cos_a.iter().copied().chain(cos_b.iter().map(|c| -c)).collect();
    let test3_p = p_or_one(rank_sum_test(&adjusted, &random_cos).map(|r| r.p_value))?;

    let alpha = opts.alpha_corrected;
    Ok(DirectionValidation {
        test1_p,
        test2_p,
        test3_p,
        alpha_corrected: alpha,
        passed: test1_p < alpha && test2_p < alpha && test3_p < alpha,
        n_random: opts.n_random,
        seed: opts.seed,
        n_a: a.len(),
        n_b: b.len(),
    })
}

/// Mean, spread and quantiles of a permutation null distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub mean: f64,
    pub stddev: f64,
    pub q025: f64,
    pub q250: f64,
    pub q500: f64,
    pub q750: f64,
    pub q975: f64,
}

impl NullSummary {
    fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (s.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            s[lo] + (h - lo as f64) * (s[hi] - s[lo])
        };
        let mean = space::mean(values);
        let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / values.len() as f64;
        NullSummary {
            mean,
            stddev: var.sqrt(),
            q025: q(0.025),
            q250: q(0.25),
            q500: q(0.5),
            q750: q(0.75),
            q975: q(0.975),
        }
    }
}

/// A permutation test outcome.
///
/// For resampled nulls `p = (#{|null − μ₀| ≥ |observed − μ₀|} + 1) / (n + 1)`
/// (one-sided alternatives drop the absolute values),
/// where `μ₀` is the exact null mean of the statistic (zero whenever the two
/// pseudo-groups have equal size). Exhaustive nulls include the observed
/// partition and use `p = #{…} / n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub statistic: String,
    pub observed: f64,
    pub permutations: usize,
    pub exact: bool,
    pub p_value: f64,
    pub seed: u64,
    pub null_summary: NullSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_samples: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct PermutationOptions {
    pub n_perm: usize,
    pub seed: u64,
    pub exact_limit: u128,
    pub keep_null: bool,
    pub alternative: Alternative,
}

/// Which deviations of the statistic from its null mean count as extreme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Greater,
    Less,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        PermutationOptions {
            n_perm: 10_000,
            seed: 0,
            exact_limit: EXACT_PARTITION_LIMIT,
            keep_null: false,
            alternative: Alternative::TwoSided,
        }
    }
}

impl PermutationOptions {
    pub fn new(n_perm: usize, seed: u64) -> Self {
        PermutationOptions {
            n_perm,
            seed,
            ..Default::default()
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u128::MAX / 1_000_000 {
            return u128::MAX;
        }
    }
    acc
}

/// Re-partitions `values` into a pseudo-group of size `k` and the rest.
/// `stat(S)` maps the pseudo-group sum to the statistic and must be affine.
fn subset_sum_test(
    label: &str,
    values: &[f64],
    k: usize,
    stat: impl Fn(f64) -> f64 + Sync,
    opts: &PermutationOptions,
) -> Result<PermutationResult> {
    if opts.n_perm < 100 {
        return Err(Error::Config(format!(
            "at least 100 permutations are required, got {}",
            opts.n_perm
        )));
    }
    let n = values.len();
    if k == 0 || k >= n {
        return Err(Error::InsufficientData { needed: k + 1, got: n });
    }
    let total: f64 = values.iter().sum();
    let expected_sum = k as f64 * total / n as f64;
    let observed_sum: f64 = values[..k].iter().sum();
    let observed_dev = observed_sum - expected_sum;
    let eps = 1e-12 * values.iter().map(|v| v.abs()).sum::<f64>().max(1e-300);

    let exact = binomial(n, k) <= opts.exact_limit;
    let sums: Vec<f64> = if exact {
        (0..n)
            .combinations(k)
            .map(|c| c.iter().map(|&i| values[i]).sum())
            .collect()
    } else {
        let seed = rng::derive_seed(opts.seed, label);
        let take = k.min(n - k);
        let complement = take != k;
        (0..opts.n_perm)
            .into_par_iter()
            .map_init(
                || (0..n as u32).collect::<Vec<u32>>(),
                |idx, rep| {
                    let mut r = rng::stream(seed, rep as u64);
                    idx.iter_mut().enumerate().for_each(|(i, x)| *x = i as u32);
                    let (chosen, _) = idx.partial_shuffle(&mut r, take);
                    let s: f64 = chosen.iter().map(|&i| values[i as usize]).sum();
                    if complement {
                        total - s
                    } else {
                        s
                    }
                },
            )
            .collect()
    };
    let extreme = sums
        .iter()
        .filter(|s| {
            let dev = *s - expected_sum;
            match opts.alternative {
                Alternative::TwoSided => dev.abs() >= observed_dev.abs() - eps,
                Alternative::Greater => dev >= observed_dev - eps,
                Alternative::Less => dev <= observed_dev + eps,
            }
        })
        .count();
    let p_value = if exact {
        extreme as f64 / sums.len() as f64
    } else {
        (extreme + 1) as f64 / (sums.len() + 1) as f64
    };
    let null: Vec<f64> = sums.iter().map(|&s| stat(s)).collect();
    Ok(PermutationResult {
        statistic: label.to_string(),
        observed: stat(observed_sum),
        permutations: sums.len(),
        exact,
        p_value: p_value.min(1.0),
        seed: opts.seed,
        null_summary: NullSummary::of(&null),
        null_samples: opts.keep_null.then_some(null),
    })
}

/// DEAA permutation test: per-entity EAA scores are computed once and `E ∪ P`
/// is re-partitioned into pseudo-groups of sizes `|E|` and `|P|`.
pub fn permutation_test_deaa(
    e: &EntityGroup,
    p: &EntityGroup,
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
    opts: &PermutationOptions,
) -> Result<PermutationResult> {
    let summary = crate::metrics::eaa_summary(e, p, a, b, space)?;
    let values: Vec<f64> = summary
        .eaa_e
        .iter()
        .chain(&summary.eaa_p)
        .map(|s| s.value)
        .collect();
    let total: f64 = values.iter().sum();
    let mut result = subset_sum_test("deaa", &values, e.len(), |s| 2.0 * s - total, opts)?;
    result.observed = summary.deaa;
    Ok(result)
}

/// GEAA permutation test: attribute labels are shuffled over `A ∪ B` (sizes
/// preserved) and `GEAA(E)` recomputed.
///
/// With `U = Σ_{ε∈E} ε̂`, `GEAA(E) = mean_{A'} (x̂·U) − mean_{B'} (x̂·U)` for any
/// relabelling `(A', B')`, so each replicate is a re-partition of the scalars
/// `x̂·U`.
pub fn permutation_test_geaa(
    e: &EntityGroup,
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
    opts: &PermutationOptions,
) -> Result<PermutationResult> {
    let contrast = AttributeContrast::new(a, b, space)?;
    let observed = crate::metrics::sum_by_id(&contrast.scores(e, space)?);
    let dim = space.dim();
    let members = e.members();
    let u = parallel::vec_sum(members.len(), dim, |i, acc| {
        let id = &members[i];
        let n = space.norm_of(id).expect("checked by scores");
        let v = space.vector(id).expect("checked by scores");
        acc.iter_mut().zip(v).for_each(|(s, x)| *s += x / n);
    });
    let values = a
        .members()
        .iter()
        .chain(b.members())
        .map(|id| Ok(space::dot(space.vector(id)?, &u) / space.norm_of(id)?))
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = values.iter().sum();
    let (ka, kb) = (a.len() as f64, b.len() as f64);
    let label = format!("geaa:{}", e.name());
    let mut result = subset_sum_test(&label, &values, a.len(), |s| s / ka - (total - s) / kb, opts)?;
    result.observed = observed;
    Ok(result)
}

/// R-RIPA permutation test on the cosines of `E ∪ P` with `psi`; the statistic
/// is `R-RIPA(E) − R-RIPA(P)`.
pub fn permutation_test_rripa(
    e: &EntityGroup,
    p: &EntityGroup,
    psi: &BiasDirection,
    space: &EmbeddingSpace,
    opts: &PermutationOptions,
) -> Result<PermutationResult> {
    check_disjoint(e, p)?;
    let ce = direction_cosines(e, psi, space)?;
    let cp = direction_cosines(p, psi, space)?;
    let values: Vec<f64> = ce.iter().chain(&cp).copied().collect();
    let total: f64 = values.iter().sum();
    let (ke, kp) = (e.len() as f64, p.len() as f64);
    let label = format!("rripa:{}", psi.label);
    let mut result = subset_sum_test(&label, &values, e.len(), |s| s / ke - (total - s) / kp, opts)?;
    result.observed = space::mean(&ce) - space::mean(&cp);
    Ok(result)
}

/// Subsample route for R-RIPA: each test group is shuffled and cut into
/// disjoint chunks of `chunk` entities, R-RIPA is computed per chunk, and the
/// two lists of chunk values are compared with the rank-sum test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleRankSum {
    pub chunk_size: usize,
    pub chunks_e: usize,
    pub chunks_p: usize,
    pub u: f64,
    pub p_value: f64,
}

pub fn rripa_subsample_test(
    e: &EntityGroup,
    p: &EntityGroup,
    psi: &BiasDirection,
    space: &EmbeddingSpace,
    chunk: Option<usize>,
    seed: u64,
) -> Result<SubsampleRankSum> {
    check_disjoint(e, p)?;
    let chunk = chunk.unwrap_or_else(|| (e.len().min(p.len()) / 10).max(1));
    let chunk_means = |g: &EntityGroup, tag: &str| -> Result<Vec<f64>> {
        let mut cos = direction_cosines(g, psi, space)?;
        let mut r = rng::stream(rng::derive_seed(seed, tag), 0);
        cos.shuffle(&mut r);
        Ok(cos
            .chunks_exact(chunk)
            .map(space::mean)
            .collect())
    };
    let me = chunk_means(e, "subsample-e")?;
    let mp = chunk_means(p, "subsample-p")?;
    let r = rank_sum_test(&me, &mp)?;
    Ok(SubsampleRankSum {
        chunk_size: chunk,
        chunks_e: me.len(),
        chunks_p: mp.len(),
        u: r.u,
        p_value: r.p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{EntityId, Role};
    use approx::assert_abs_diff_eq;

    #[test]
    fn binomial_counts() {
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(20, 10), 184_756);
        assert_eq!(binomial(5, 0), 1);
    }

    #[test]
    fn exact_partition_test_on_known_values() {
        // pseudo-group of 4 out of 8; observed = first four
        let values = [3.0, 2.9, 2.8, 2.7, 0.1, 0.2, 0.3, 0.4];
        let r = subset_sum_test("t", &values, 4, |s| s, &PermutationOptions::new(100, 1)).unwrap();
        assert!(r.exact);
        assert_eq!(r.permutations, 70);
        // the observed split and its mirror are the two most extreme
        assert_abs_diff_eq!(r.p_value, 2.0 / 70.0, epsilon = 1e-15);
    }

    #[test]
    fn one_sided_alternatives_split_the_tails() {
        let values = [3.0, 2.9, 2.8, 2.7, 0.1, 0.2, 0.3, 0.4];
        let opts = |alternative| PermutationOptions {
            alternative,
            ..PermutationOptions::new(100, 1)
        };
        let greater = subset_sum_test("t", &values, 4, |s| s, &opts(Alternative::Greater)).unwrap();
        let less = subset_sum_test("t", &values, 4, |s| s, &opts(Alternative::Less)).unwrap();
        assert_abs_diff_eq!(greater.p_value, 1.0 / 70.0, epsilon = 1e-15);
        assert_abs_diff_eq!(less.p_value, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn resampled_p_is_smoothed() {
        let values: Vec<f64> = (0..40).map(|i| if i < 20 { 5.0 + i as f64 * 1e-3 } else { -5.0 }).collect();
        let r = subset_sum_test("t", &values, 20, |s| s, &PermutationOptions::new(200, 3)).unwrap();
        assert!(!r.exact);
        assert_abs_diff_eq!(r.p_value, 1.0 / 201.0, epsilon = 1e-15);
        assert!(subset_sum_test("t", &values, 20, |s| s, &PermutationOptions::new(50, 3)).is_err());
    }

    #[test]
    fn null_summary_quantiles() {
        let s = NullSummary::of(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.q500, 3.0);
        assert_eq!(s.q250, 2.0);
        assert_abs_diff_eq!(s.stddev, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn validation_needs_five_per_group() {
        let rows: Vec<(EntityId, Vec<f64>)> = (0..8)
            .map(|i| (EntityId::from(format!("x{i}").as_str()), vec![1.0 + i as f64, 1.0]))
            .collect();
        let s = EmbeddingSpace::new("t", "", rows).unwrap();
        let ids: Vec<EntityId> = s.ids().to_vec();
        let a = EntityGroup::new("A", Role::A, ids[..4].to_vec()).unwrap();
        let b = EntityGroup::new("B", Role::B, ids[4..].to_vec()).unwrap();
        let d = crate::directions::centroid_difference_direction(&a, &b, &s).unwrap();
        let err = validate_direction(&d, &a, &b, &s, &ValidationOptions::default()).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { needed: 5, got: 4 }));
    }
}
