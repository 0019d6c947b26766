//! Attribute association bias directions.
//!
//! Three constructions are provided: the difference of group centroids, the
//! normalised weight vector of a linear hinge-loss probe, and the leading
//! principal axis of paired difference vectors. Every direction is unit length
//! and oriented so that its cosine with `centroid(A) − centroid(B)` is
//! non-negative, which keeps signs comparable across model variants.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel;
use crate::pca::{self, SymMatrix};
use crate::rng;
use crate::significance::DirectionValidation;
use crate::space::{self, centroid, check_disjoint, cosine, EmbeddingSpace, EntityGroup, EntityId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionMethod {
    CentroidDifference,
    LinearProbe,
    PairedPca,
}

/// A unit vector in embedding space separating `A` from `B`, with provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BiasDirection {
    /// Short display label, e.g. `CD`, `SVC`, `CSVC-1`, `PCA`.
    pub label: String,
    pub method: DirectionMethod,
    pub vector: Vec<f64>,
    /// Names of the `(A, B)` groups the direction was built from.
    pub source_groups: (String, String),
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<DirectionValidation>,
}

impl BiasDirection {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Flips `v` if it points away from `reference`.
fn orient(mut v: Vec<f64>, reference: &[f64]) -> Vec<f64> {
    if space::dot(&v, reference) < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// `normalize(centroid(A) − centroid(B))`.
pub fn centroid_difference_direction(
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
) -> Result<BiasDirection> {
    check_disjoint(a, b)?;
    let ca = centroid(a, space)?;
    let cb = centroid(b, space)?;
    let diff: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x - y).collect();
    let scale = space::norm(&ca).max(space::norm(&cb)).max(1.0);
    if space::norm(&diff) <= 1e-12 * scale {
        return Err(Error::DegenerateDirection(format!(
            "centroids of `{}` and `{}` coincide",
            a.name(),
            b.name()
        )));
    }
    Ok(BiasDirection {
        label: "CD".into(),
        method: DirectionMethod::CentroidDifference,
        vector: space::normalize(&diff)?,
        source_groups: (a.name().into(), b.name().into()),
        seed: 0,
        notes: Vec::new(),
        validation: None,
    })
}

/// Training settings for [`train_linear_probe`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeParams {
    /// L2 penalty λ.
    pub regularization: f64,
    pub epochs: usize,
    /// Fraction of each group used for training; the rest is held out.
    pub split_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        ProbeParams {
            regularization: 0.1,
            epochs: 500,
            split_fraction: 0.8,
            seed: 0,
        }
    }
}

/// A trained linear classifier with labels `A → +1`, `B → −1`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub training_ids: Vec<EntityId>,
    pub test_ids: Vec<EntityId>,
    pub params: ProbeParams,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// `centroid(A) − centroid(B)` over the training groups; fixes the sign of
    /// the derived direction.
    pub orientation_reference: Vec<f64>,
    pub source_groups: (String, String),
}

impl LinearProbe {
    pub fn decision(&self, v: &[f64]) -> f64 {
        space::dot(&self.weights, v) + self.intercept
    }
}

/// Splits each group with a seeded shuffle into `(train, test)` parts.
pub(crate) fn stratified_split(
    group: &EntityGroup,
    fraction: f64,
    seed: u64,
) -> (Vec<EntityId>, Vec<EntityId>) {
    let mut members = group.members().to_vec();
    let mut r = rng::stream(rng::derive_seed(seed, group.name()), 0);
    members.shuffle(&mut r);
    let n = members.len();
    let k = if n < 2 {
        n
    } else {
        ((fraction * n as f64).round() as usize).clamp(1, n - 1)
    };
    let test = members.split_off(k);
    (members, test)
}

/// L2-regularised hinge-loss linear classifier trained by deterministic
/// full-batch subgradient descent with step `1/(λ·t)`.
///
/// Features are centred on the training mean and the bias is carried as an
/// extra constant feature. The returned weights are the average of the
/// iterates over the second half of training, mapped back to the original
/// coordinates. Failure to settle is recorded in `warnings`, not raised.
pub fn train_linear_probe(
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
    params: &ProbeParams,
) -> Result<LinearProbe> {
    check_disjoint(a, b)?;
    a.check_in(space)?;
    b.check_in(space)?;
    let total = a.len() + b.len();
    if total < 10 {
        return Err(Error::InsufficientData {
            needed: 10,
            got: total,
        });
    }
    if !(params.split_fraction > 0.0 && params.split_fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {}",
            params.split_fraction
        )));
    }
    if !(params.regularization > 0.0) || params.epochs == 0 {
        return Err(Error::Config(
            "probe regularization must be positive and epochs non-zero".into(),
        ));
    }

    let (a_train, a_test) = stratified_split(a, params.split_fraction, params.seed);
    let (b_train, b_test) = stratified_split(b, params.split_fraction, params.seed);
    let dim = space.dim();

    let mut xs: Vec<&[f64]> = Vec::with_capacity(a_train.len() + b_train.len());
    let mut ys: Vec<f64> = Vec::with_capacity(xs.capacity());
    for id in &a_train {
        xs.push(space.vector(id)?);
        ys.push(1.0);
    }
    for id in &b_train {
        xs.push(space.vector(id)?);
        ys.push(-1.0);
    }
    let n = xs.len();
    let mu = space::mean_vector(&xs, dim)?;

    // augmented weight vector: [w (dim), bias]
    let lambda = params.regularization;
    let radius = 1.0 / lambda.sqrt();
    let mut w = vec![0.0; dim + 1];
    let mut avg = vec![0.0; dim + 1];
    let mut avg_count = 0usize;
    let mut checkpoint: Option<Vec<f64>> = None;
    let start_avg = params.epochs / 2 + 1;
    let check_epoch = (params.epochs * 9) / 10;

    let margin = |w: &[f64], i: usize| -> f64 {
        let x = xs[i];
        let mut s = w[dim];
        for k in 0..dim {
            s += w[k] * (x[k] - mu[k]);
        }
        ys[i] * s
    };

    for t in 1..=params.epochs {
        let eta = 1.0 / (lambda * t as f64);
        let grad = parallel::vec_sum(n, dim + 1, |i, acc| {
            if margin(&w, i) < 1.0 {
                let x = xs[i];
                let y = ys[i];
                for k in 0..dim {
                    acc[k] += y * (x[k] - mu[k]);
                }
                acc[dim] += y;
            }
        });
        let shrink = 1.0 - eta * lambda;
        for (wk, gk) in w.iter_mut().zip(&grad) {
            *wk = shrink * *wk + eta * gk / n as f64;
        }
        let wn = space::norm(&w);
        if wn > radius {
            w.iter_mut().for_each(|x| *x *= radius / wn);
        }
        if t >= start_avg {
            avg.iter_mut().zip(&w).for_each(|(s, x)| *s += x);
            avg_count += 1;
        }
        if t == check_epoch && avg_count > 0 {
            checkpoint = Some(avg.iter().map(|s| s / avg_count as f64).collect());
        }
    }
    let final_w: Vec<f64> = avg.iter().map(|s| s / avg_count.max(1) as f64).collect();

    let objective = |w: &[f64]| -> f64 {
        let hinge = parallel::sum(n, |i| (1.0 - margin(w, i)).max(0.0)) / n as f64;
        0.5 * lambda * space::dot(w, w) + hinge
    };
    let mut warnings = Vec::new();
    let converged = match checkpoint {
        Some(c) => {
            let (f0, f1) = (objective(&c), objective(&final_w));
            let rel = (f0 - f1).abs() / f1.abs().max(1e-12);
            if rel >= 1e-3 {
                warnings.push(format!(
                    "objective still moving after {} epochs (relative change {rel:.3e})",
                    params.epochs
                ));
            }
            rel < 1e-3
        }
        None => {
            warnings.push("too few epochs to assess convergence".into());
            false
        }
    };

    let weights = final_w[..dim].to_vec();
    let intercept = final_w[dim] - space::dot(&weights, &mu);

    let ca = space::mean_vector(&a_train.iter().map(|id| space.vector(id)).collect::<Result<Vec<_>>>()?, dim)?;
    let cb = space::mean_vector(&b_train.iter().map(|id| space.vector(id)).collect::<Result<Vec<_>>>()?, dim)?;
    let orientation_reference: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x - y).collect();

    let mut probe = LinearProbe {
        weights,
        intercept,
        train_accuracy: 0.0,
        test_accuracy: 0.0,
        training_ids: a_train.iter().chain(&b_train).cloned().collect(),
        test_ids: a_test.iter().chain(&b_test).cloned().collect(),
        params: params.clone(),
        converged,
        warnings,
        orientation_reference,
        source_groups: (a.name().into(), b.name().into()),
    };
    probe.train_accuracy = accuracy(&probe, space, &a_train, &b_train)?;
    probe.test_accuracy = accuracy(&probe, space, &a_test, &b_test)?;
    Ok(probe)
}

fn accuracy(
    probe: &LinearProbe,
    space: &EmbeddingSpace,
    pos: &[EntityId],
    neg: &[EntityId],
) -> Result<f64> {
    let total = pos.len() + neg.len();
    if total == 0 {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for id in pos {
        if probe.decision(space.vector(id)?) > 0.0 {
            correct += 1;
        }
    }
    for id in neg {
        if probe.decision(space.vector(id)?) <= 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Normalised probe weights; the intercept is discarded.
pub fn probe_direction(probe: &LinearProbe) -> Result<BiasDirection> {
    if space::norm(&probe.weights) == 0.0 {
        return Err(Error::DegenerateDirection("probe weights are all zero".into()));
    }
    let v = orient(space::normalize(&probe.weights)?, &probe.orientation_reference);
    Ok(BiasDirection {
        label: "SVC".into(),
        method: DirectionMethod::LinearProbe,
        vector: v,
        source_groups: probe.source_groups.clone(),
        seed: probe.params.seed,
        notes: vec!["probe intercept discarded; weights normalised".into()],
        validation: None,
    })
}

/// Which end of a direction a group is expected to sit at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alignment {
    /// Rank by largest cosine (the `A` side).
    Positive,
    /// Rank by most negative cosine (the `B` side).
    Negative,
}

/// The `k` members of `group` most strongly aligned with `direction`. Ties are
/// broken by id.
pub fn most_biased_entities(
    group: &EntityGroup,
    direction: &BiasDirection,
    space: &EmbeddingSpace,
    k: usize,
    alignment: Alignment,
) -> Result<EntityGroup> {
    if k == 0 || k > group.len() {
        return Err(Error::Config(format!(
            "k must lie in 1..={} for group `{}`, got {k}",
            group.len(),
            group.name()
        )));
    }
    let sign = match alignment {
        Alignment::Positive => 1.0,
        Alignment::Negative => -1.0,
    };
    let mut scored = group
        .members()
        .iter()
        .map(|id| Ok((sign * cosine(space.vector(id)?, &direction.vector)?, id)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|(s1, id1), (s2, id2)| s2.total_cmp(s1).then_with(|| id1.cmp(id2)));
    let top = scored.into_iter().take(k).map(|(_, id)| id.clone()).collect();
    EntityGroup::new(format!("{}-top{k}", group.name()), group.role(), top)
}

/// Probe direction trained only on the `k` most-biased members of each group,
/// ranked against `reference` (normally the centroid direction).
pub fn centroid_probe_direction(
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
    reference: &BiasDirection,
    k: usize,
    params: &ProbeParams,
) -> Result<(BiasDirection, LinearProbe)> {
    let top_a = most_biased_entities(a, reference, space, k, Alignment::Positive)?;
    let top_b = most_biased_entities(b, reference, space, k, Alignment::Negative)?;
    let mut probe = train_linear_probe(&top_a, &top_b, space, params)?;
    probe.source_groups = (a.name().into(), b.name().into());
    let mut d = probe_direction(&probe)?;
    d.label = format!("CSVC-{k}");
    Ok((d, probe))
}

/// Draws `n_pairs` cross-group pairs, each member picked uniformly with
/// replacement, so the count may exceed either group size.
pub fn random_pairs(
    a: &EntityGroup,
    b: &EntityGroup,
    n_pairs: usize,
    seed: u64,
) -> Vec<(EntityId, EntityId)> {
    let mut r = rng::stream(rng::derive_seed(seed, "pairs"), 0);
    let (am, bm) = (a.members(), b.members());
    (0..n_pairs)
        .map(|_| {
            let x = am[r.random_range(0..am.len())].clone();
            let y = bm[r.random_range(0..bm.len())].clone();
            (x, y)
        })
        .collect()
}

/// First principal axis of the paired differences `aᵢ − bᵢ`.
///
/// Each pair is centred on its own midpoint, so the axis is the leading
/// eigenvector of `Σ (aᵢ − bᵢ)(aᵢ − bᵢ)ᵀ`. When all differences are parallel
/// the shared direction is returned.
pub fn paired_pca_direction(
    pairs: &[(EntityId, EntityId)],
    space: &EmbeddingSpace,
    seed: u64,
) -> Result<BiasDirection> {
    if pairs.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: pairs.len(),
        });
    }
    let dim = space.dim();
    let mut m = SymMatrix::zeros(dim);
    let mut mean_diff = vec![0.0; dim];
    let mut left = BTreeSet::new();
    let mut right = BTreeSet::new();
    for (a, b) in pairs {
        let diff: Vec<f64> = space
            .vector(a)?
            .iter()
            .zip(space.vector(b)?)
            .map(|(x, y)| x - y)
            .collect();
        m.add_outer(&diff, 1.0);
        mean_diff.iter_mut().zip(&diff).for_each(|(s, d)| *s += d);
        left.insert(a);
        right.insert(b);
    }
    if let Some(id) = left.intersection(&right).next() {
        return Err(Error::Validation(format!(
            "entity `{id}` appears on both sides of the pairing"
        )));
    }
    m.scale(1.0 / pairs.len() as f64);
    let pairs_out = pca::leading_eigenpairs(&m, 1, rng::derive_seed(seed, "paired-pca"));
    let Some(top) = pairs_out.into_iter().next() else {
        return Err(Error::DegenerateDirection(
            "all paired differences are zero".into(),
        ));
    };
    let mut notes = vec![format!("{} pairs", pairs.len())];
    if !top.converged {
        notes.push("power iteration hit the iteration cap".into());
    }
    Ok(BiasDirection {
        label: "PCA".into(),
        method: DirectionMethod::PairedPca,
        vector: orient(top.vector, &mean_diff),
        source_groups: ("A".into(), "B".into()),
        seed,
        notes,
        validation: None,
    })
}
