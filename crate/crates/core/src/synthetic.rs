//! Synthetic spaces with a planted attribute direction, a skewed implicit
//! feedback log, and a small ALS matrix factorisation trainer.
//!
//! Planted spaces place `A` around `+c·g` and `B` around `−c·g` with isotropic
//! Gaussian noise. Test-set means have length `test_offset` and make the
//! configured cosine with `g`; their remaining component lies along a fixed
//! unit vector `h ⟂ g`. An optional nuisance factor adds high-variance noise
//! along a third axis `k ⟂ g, h` to every entity.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::space::{self, EmbeddingSpace, EntityGroup, EntityId, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub dim: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub n_e: usize,
    pub n_p: usize,
    /// Extra entities with no role, centred at the origin.
    pub n_unassigned: usize,
    /// Mean displacement `c` of `A` and `B` along `g`.
    pub bias_strength: f64,
    pub noise_sigma: f64,
    pub e_alignment: f64,
    pub p_alignment: f64,
    /// Length of the `E` and `P` mean vectors.
    pub test_offset: f64,
    /// Standard deviation of the shared nuisance factor.
    pub nuisance_strength: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            dim: 16,
            n_a: 200,
            n_b: 200,
            n_e: 100,
            n_p: 100,
            n_unassigned: 0,
            bias_strength: 1.0,
            noise_sigma: 0.3,
            e_alignment: 0.8,
            p_alignment: -0.8,
            test_offset: 1.0,
            nuisance_strength: 0.0,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim < 4 {
            return bad(format!("dim must be at least 4, got {}", self.dim));
        }
        for (name, n) in [("n_a", self.n_a), ("n_b", self.n_b), ("n_e", self.n_e), ("n_p", self.n_p)] {
            if n < 5 {
                return bad(format!("{name} must be at least 5, got {n}"));
            }
        }
        for (name, x) in [
            ("bias_strength", self.bias_strength),
            ("noise_sigma", self.noise_sigma),
            ("test_offset", self.test_offset),
            ("nuisance_strength", self.nuisance_strength),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {x}"));
            }
        }
        for (name, x) in [("e_alignment", self.e_alignment), ("p_alignment", self.p_alignment)] {
            if !(-1.0..=1.0).contains(&x) {
                return bad(format!("{name} must lie in [-1, 1], got {x}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PlantedGroups {
    pub a: EntityGroup,
    pub b: EntityGroup,
    pub e: EntityGroup,
    pub p: EntityGroup,
}

#[derive(Clone, Debug)]
pub struct PlantedSpace {
    pub space: EmbeddingSpace,
    pub groups: PlantedGroups,
    /// The planted attribute direction `g`.
    pub direction: Vec<f64>,
    /// The axis carrying the test sets' off-direction component.
    pub offset_axis: Vec<f64>,
    pub nuisance_axis: Vec<f64>,
}

/// Three orthonormal axes drawn from the seed.
fn planted_axes(dim: usize, seed: u64) -> [Vec<f64>; 3] {
    let mut r = rng::stream(rng::derive_seed(seed, "planted-axes"), 0);
    let mut axes: Vec<Vec<f64>> = Vec::with_capacity(3);
    while axes.len() < 3 {
        let mut v = rng::random_unit_vector(&mut r, dim);
        for _ in 0..2 {
            for u in &axes {
                let d = space::dot(&v, u);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
            }
        }
        if let Ok(v) = space::normalize(&v) {
            if axes.iter().all(|u| space::dot(&v, u).abs() < 1e-9) {
                axes.push(v);
            }
        }
    }
    [axes[0].clone(), axes[1].clone(), axes[2].clone()]
}

fn group_ids(prefix: char, n: usize) -> Vec<EntityId> {
    (0..n)
        .map(|i| EntityId::from(format!("{prefix}{i:05}").as_str()))
        .collect()
}

pub fn generate_planted_space(config: &PlantedConfig) -> Result<PlantedSpace> {
    config.validate()?;
    let dim = config.dim;
    let [g, h, k] = planted_axes(dim, config.seed);
    let c = config.bias_strength;
    let test_mean = |alignment: f64| -> Vec<f64> {
        let off = (1.0 - alignment * alignment).max(0.0).sqrt();
        g.iter()
            .zip(&h)
            .map(|(x, y)| config.test_offset * (alignment * x + off * y))
            .collect()
    };
    let specs: [(char, Role, usize, Vec<f64>); 5] = [
        ('a', Role::A, config.n_a, g.iter().map(|x| c * x).collect()),
        ('b', Role::B, config.n_b, g.iter().map(|x| -c * x).collect()),
        ('e', Role::E, config.n_e, test_mean(config.e_alignment)),
        ('p', Role::P, config.n_p, test_mean(config.p_alignment)),
        ('u', Role::Unassigned, config.n_unassigned, vec![0.0; dim]),
    ];
    let mut planned = Vec::new();
    for (prefix, _, n, mean) in &specs {
        for id in group_ids(*prefix, *n) {
            planned.push((id, mean));
        }
    }
    let base = rng::derive_seed(config.seed, "planted-entities");
    let rows: Vec<(EntityId, Vec<f64>)> = planned
        .par_iter()
        .enumerate()
        .map(|(i, (id, mean))| {
            let mut r = rng::stream(base, i as u64);
            let noise = rng::standard_normal_vec(&mut r, dim);
            let z: f64 = r.sample(rand_distr::StandardNormal);
            let v = mean
                .iter()
                .zip(&noise)
                .zip(&k)
                .map(|((m, n), kk)| m + config.noise_sigma * n + config.nuisance_strength * z * kk)
                .collect();
            (id.clone(), v)
        })
        .collect();
    let space = EmbeddingSpace::new(
        format!("planted-{}", config.seed),
        "planted",
        rows,
    )?;
    let group = |name: &str, role: Role, prefix: char, n: usize| {
        EntityGroup::new(name, role, group_ids(prefix, n))
    };
    Ok(PlantedSpace {
        space,
        groups: PlantedGroups {
            a: group("A", Role::A, 'a', config.n_a)?,
            b: group("B", Role::B, 'b', config.n_b)?,
            e: group("E", Role::E, 'e', config.n_e)?,
            p: group("P", Role::P, 'p', config.n_p)?,
        },
        direction: g,
        offset_axis: h,
        nuisance_axis: k,
    })
}

/// Items spread along `g` whose engagement share from the `A` group rises with
/// their cosine to `g`: `share = 1 / (1 + exp(−steepness · cos(v, g)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngagementConfig {
    pub n_items: usize,
    /// Item positions along `g` are uniform in `[−spread, spread]`.
    pub spread: f64,
    pub noise_sigma: f64,
    pub steepness: f64,
    pub seed: u64,
}

impl Default for EngagementConfig {
    fn default() -> Self {
        EngagementConfig {
            n_items: 10_000,
            spread: 2.0,
            noise_sigma: 0.3,
            steepness: 3.0,
            seed: 0,
        }
    }
}

pub struct EngagementItems {
    pub rows: Vec<(EntityId, Vec<f64>)>,
    pub shares: Vec<crate::scenarios::EngagementShares>,
}

pub fn generate_engagement_items(g: &[f64], config: &EngagementConfig) -> Result<EngagementItems> {
    let dim = g.len();
    let base = rng::derive_seed(config.seed, "engagement-items");
    let rows: Vec<(EntityId, Vec<f64>)> = group_ids('i', config.n_items)
        .into_par_iter()
        .enumerate()
        .map(|(i, id)| {
            let mut r = rng::stream(base, i as u64);
            let t: f64 = r.random_range(-config.spread..=config.spread);
            let noise = rng::standard_normal_vec(&mut r, dim);
            let v = g
                .iter()
                .zip(noise)
                .map(|(x, n)| t * x + config.noise_sigma * n)
                .collect();
            (id, v)
        })
        .collect();
    let shares = rows
        .iter()
        .map(|(id, v)| {
            let c = space::cosine(v, g)?;
            Ok(crate::scenarios::EngagementShares {
                entity: id.clone(),
                share_positive: 1.0 / (1.0 + (-config.steepness * c).exp()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EngagementItems { rows, shares })
}

/// One positive implicit-feedback event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: EntityId,
    pub item: EntityId,
    pub weight: f64,
}

/// Implicit-feedback triples plus the attribute of each user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub interactions: Vec<Interaction>,
    /// User id to attribute label (`true` for the `A` group).
    pub user_attribute: BTreeMap<EntityId, bool>,
    pub params: Option<InteractionConfig>,
}

impl InteractionLog {
    /// Checks positive finite weights and unique `(user, item)` pairs.
    pub fn new(
        interactions: Vec<Interaction>,
        user_attribute: BTreeMap<EntityId, bool>,
    ) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (line, it) in interactions.iter().enumerate() {
            if !(it.weight.is_finite() && it.weight > 0.0) {
                return Err(Error::Validation(format!(
                    "interaction ({}, {}) has non-positive weight {}",
                    it.user, it.item, it.weight
                )));
            }
            if !seen.insert((&it.user, &it.item)) {
                return Err(Error::DuplicateId {
                    id: format!("{}/{}", it.user, it.item),
                    line: line + 1,
                });
            }
        }
        Ok(InteractionLog {
            interactions,
            user_attribute,
            params: None,
        })
    }

    /// Each user's items ordered by weight (descending), then item id.
    pub fn ranked_histories(&self) -> BTreeMap<EntityId, Vec<EntityId>> {
        let mut by_user: BTreeMap<EntityId, Vec<(f64, EntityId)>> = BTreeMap::new();
        for it in &self.interactions {
            by_user
                .entry(it.user.clone())
                .or_default()
                .push((it.weight, it.item.clone()));
        }
        by_user
            .into_iter()
            .map(|(u, mut items)| {
                items.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(&y.1)));
                (u, items.into_iter().map(|(_, i)| i).collect())
            })
            .collect()
    }
}

/// Two user groups and two item genres; `A` users pick genre-`X` items
/// `skew` times as often as genre-`Y` items, and `B` users the reverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InteractionConfig {
    pub n_users_a: usize,
    pub n_users_b: usize,
    pub n_items_x: usize,
    pub n_items_y: usize,
    pub n_items_neutral: usize,
    pub interactions_per_user: usize,
    pub skew: f64,
    /// Relative weight of neutral items for every user.
    pub neutral_weight: f64,
    pub seed: u64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        InteractionConfig {
            n_users_a: 150,
            n_users_b: 150,
            n_items_x: 40,
            n_items_y: 40,
            n_items_neutral: 80,
            interactions_per_user: 20,
            skew: 4.0,
            neutral_weight: 2.0,
            seed: 0,
        }
    }
}

/// Item ids per genre in a generated log.
#[derive(Clone, Debug)]
pub struct InteractionGroups {
    pub users_a: Vec<EntityId>,
    pub users_b: Vec<EntityId>,
    pub items_x: Vec<EntityId>,
    pub items_y: Vec<EntityId>,
    pub items_neutral: Vec<EntityId>,
}

impl InteractionConfig {
    pub fn groups(&self) -> InteractionGroups {
        let ids = |prefix: &str, n: usize| -> Vec<EntityId> {
            (0..n)
                .map(|i| EntityId::from(format!("{prefix}{i:05}").as_str()))
                .collect()
        };
        InteractionGroups {
            users_a: ids("ua", self.n_users_a),
            users_b: ids("ub", self.n_users_b),
            items_x: ids("ix", self.n_items_x),
            items_y: ids("iy", self.n_items_y),
            items_neutral: ids("in", self.n_items_neutral),
        }
    }
}

pub fn generate_interactions(config: &InteractionConfig) -> Result<InteractionLog> {
    if config.n_users_a == 0 || config.n_users_b == 0 || config.n_items_x == 0 || config.n_items_y == 0 {
        return Err(Error::Config("interaction groups must be non-empty".into()));
    }
    if !(config.skew.is_finite() && config.skew >= 1.0) {
        return Err(Error::Config(format!("skew must be at least 1, got {}", config.skew)));
    }
    let groups = config.groups();
    let catalogue = config.n_items_x + config.n_items_y + config.n_items_neutral;
    if config.interactions_per_user == 0 || config.interactions_per_user > catalogue {
        return Err(Error::Config(format!(
            "interactions_per_user must be in 1..={catalogue}"
        )));
    }
    let base = rng::derive_seed(config.seed, "interactions");
    let users: Vec<(EntityId, bool)> = groups
        .users_a
        .iter()
        .map(|u| (u.clone(), true))
        .chain(groups.users_b.iter().map(|u| (u.clone(), false)))
        .collect();
    let mut interactions = Vec::new();
    for (idx, (user, is_a)) in users.iter().enumerate() {
        let mut r = rng::stream(base, idx as u64);
        let (wx, wy) = if *is_a { (config.skew, 1.0) } else { (1.0, config.skew) };
        let genres = [
            (&groups.items_x, wx),
            (&groups.items_y, wy),
            (&groups.items_neutral, config.neutral_weight),
        ];
        let mut chosen = BTreeSet::new();
        while chosen.len() < config.interactions_per_user {
            let available: Vec<(usize, f64)> = genres
                .iter()
                .enumerate()
                .filter(|(_, (items, w))| *w > 0.0 && items.iter().any(|i| !chosen.contains(i)))
                .map(|(gi, (_, w))| (gi, *w))
                .collect();
            if available.is_empty() {
                break;
            }
            let total: f64 = available.iter().map(|(_, w)| w).sum();
            let mut u: f64 = r.random::<f64>() * total;
            let mut pick = available[available.len() - 1].0;
            for (gi, w) in &available {
                if u < *w {
                    pick = *gi;
                    break;
                }
                u -= w;
            }
            let items = genres[pick].0;
            let item = &items[r.random_range(0..items.len())];
            if chosen.insert(item.clone()) {
                let weight = r.random_range(1..=5) as f64;
                interactions.push(Interaction {
                    user: user.clone(),
                    item: item.clone(),
                    weight,
                });
            }
        }
    }
    let mut log = InteractionLog::new(interactions, users.into_iter().collect())?;
    log.params = Some(config.clone());
    Ok(log)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfParams {
    pub dim: usize,
    pub use_attribute: bool,
    pub epochs: usize,
    pub regularization: f64,
    /// Confidence `1 + α·w` for an observed interaction with weight `w`.
    pub confidence_alpha: f64,
    pub seed: u64,
}

impl Default for MfParams {
    fn default() -> Self {
        MfParams {
            dim: 16,
            use_attribute: false,
            epochs: 15,
            regularization: 100.0,
            confidence_alpha: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MfModel {
    /// Users then items, each in id order.
    pub space: EmbeddingSpace,
    pub user_ids: Vec<EntityId>,
    pub item_ids: Vec<EntityId>,
    pub loss_history: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

/// Implicit-feedback ALS over the dense preference matrix.
///
/// With `use_attribute`, every user factor is `pᵤ + o_{g(u)}`, where `o` is a
/// learned offset shared by all users with the same attribute value. The
/// exported user vector is that full effective factor, so the with-attribute
/// space is the one the recommender actually scores with.
pub fn train_toy_mf(log: &InteractionLog, params: &MfParams) -> Result<MfModel> {
    if log.interactions.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if params.dim < 2 || params.epochs == 0 {
        return Err(Error::Config("MF needs dim ≥ 2 and at least one epoch".into()));
    }
    let users: Vec<EntityId> = log
        .interactions
        .iter()
        .map(|i| i.user.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let items: Vec<EntityId> = log
        .interactions
        .iter()
        .map(|i| i.item.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let uidx: HashMap<&EntityId, usize> = users.iter().enumerate().map(|(i, u)| (u, i)).collect();
    let iidx: HashMap<&EntityId, usize> = items.iter().enumerate().map(|(i, u)| (u, i)).collect();
    let (nu, ni, d) = (users.len(), items.len(), params.dim);
    let mut conf = DMatrix::<f64>::from_element(nu, ni, 1.0);
    let mut pref = DMatrix::<f64>::zeros(nu, ni);
    for it in &log.interactions {
        let (u, i) = (uidx[&it.user], iidx[&it.item]);
        conf[(u, i)] = 1.0 + params.confidence_alpha * it.weight;
        pref[(u, i)] = 1.0;
    }
    let attr: Vec<usize> = if params.use_attribute {
        users
            .iter()
            .map(|u| {
                log.user_attribute
                    .get(u)
                    .map(|&a| if a { 0 } else { 1 })
                    .ok_or_else(|| Error::MissingEntity(u.clone()))
            })
            .collect::<Result<_>>()?
    } else {
        vec![0; nu]
    };

    let mut r = rng::stream(rng::derive_seed(params.seed, "mf-init"), 0);
    let mut init = |n: usize| {
        DMatrix::from_fn(n, d, |_, _| 0.1 * r.sample::<f64, _>(rand_distr::StandardNormal))
    };
    let mut p = init(nu);
    let mut q = init(ni);
    let mut offsets = DMatrix::<f64>::zeros(2, d);
    let lambda = params.regularization;
    let eye = DMatrix::<f64>::identity(d, d);

    // Normal equations of Σ w (y − x·v)² + λ‖x‖², with the vs as rows of `v`.
    let normal_eq = |v: &DMatrix<f64>, w: &[f64], y: &DVector<f64>| {
        let mut wv = v.clone();
        for (mut row, wi) in wv.row_iter_mut().zip(w) {
            row *= *wi;
        }
        (v.transpose() * &wv, wv.transpose() * y)
    };
    let cholesky_solve = |a: DMatrix<f64>, b: DVector<f64>| -> Result<DVector<f64>> {
        a.cholesky()
            .map(|ch| ch.solve(&b))
            .ok_or_else(|| Error::DegenerateInput("ALS normal equations are not positive definite".into()))
    };
    let user_factors = |p: &DMatrix<f64>, o: &DMatrix<f64>| {
        DMatrix::from_fn(nu, d, |u, k| p[(u, k)] + o[(attr[u], k)])
    };

    let mut history = Vec::with_capacity(params.epochs);
    for _ in 0..params.epochs {
        for u in 0..nu {
            let w: Vec<f64> = conf.row(u).iter().copied().collect();
            let y = pref.row(u).transpose() - &q * offsets.row(attr[u]).transpose();
            let (a, b) = normal_eq(&q, &w, &y);
            p.set_row(u, &cholesky_solve(a + &eye * lambda, b)?.transpose());
        }
        if params.use_attribute {
            for g in 0..2 {
                let mut a = &eye * lambda;
                let mut b = DVector::<f64>::zeros(d);
                for u in (0..nu).filter(|&u| attr[u] == g) {
                    let w: Vec<f64> = conf.row(u).iter().copied().collect();
                    let y = pref.row(u).transpose() - &q * p.row(u).transpose();
                    let (au, bu) = normal_eq(&q, &w, &y);
                    a += au;
                    b += bu;
                }
                offsets.set_row(g, &cholesky_solve(a, b)?.transpose());
            }
        }
        let x = user_factors(&p, &offsets);
        for i in 0..ni {
            let w: Vec<f64> = conf.column(i).iter().copied().collect();
            let (a, b) = normal_eq(&x, &w, &pref.column(i).into_owned());
            q.set_row(i, &cholesky_solve(a + &eye * lambda, b)?.transpose());
        }
        let resid = &pref - &x * q.transpose();
        let fit: f64 = resid.iter().zip(conf.iter()).map(|(e, c)| c * e * e).sum();
        history.push(fit + lambda * (p.norm_squared() + q.norm_squared() + offsets.norm_squared()));
    }
    let converged = match history.as_slice() {
        [.., prev, last] => (prev - last).abs() <= 1e-4 * prev.abs().max(1e-12),
        _ => false,
    };
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "ALS loss still changing after {} epochs",
            params.epochs
        ));
    }
    let mut rows = Vec::with_capacity(nu + ni);
    let x = user_factors(&p, &offsets);
    for (u, id) in users.iter().enumerate() {
        rows.push((id.clone(), x.row(u).iter().copied().collect()));
    }
    for (i, id) in items.iter().enumerate() {
        rows.push((id.clone(), q.row(i).iter().copied().collect()));
    }
    let tag = if params.use_attribute { "with-attribute" } else { "without-attribute" };
    let space = EmbeddingSpace::new(format!("mf-{}", params.seed), tag, rows)?;
    Ok(MfModel {
        space,
        user_ids: users,
        item_ids: items,
        loss_history: history,
        converged,
        warnings,
    })
}

/// Direct implementations of the association metrics, written as plain double
/// loops over raw vectors. They share no code with the optimised versions and
/// serve as reference values in tests.
pub mod oracle {
    fn cos(u: &[f64], v: &[f64]) -> f64 {
        let mut uv = 0.0;
        let mut uu = 0.0;
        let mut vv = 0.0;
        for i in 0..u.len() {
            uv += u[i] * v[i];
            uu += u[i] * u[i];
            vv += v[i] * v[i];
        }
        uv / (uu.sqrt() * vv.sqrt())
    }

    fn mean(x: &[f64]) -> f64 {
        let mut s = 0.0;
        for v in x {
            s += v;
        }
        s / x.len() as f64
    }

    fn pooled_sd(x: &[f64], y: &[f64]) -> f64 {
        let mut all = x.to_vec();
        all.extend_from_slice(y);
        let m = mean(&all);
        let mut ss = 0.0;
        for v in &all {
            ss += (v - m) * (v - m);
        }
        (ss / all.len() as f64).sqrt()
    }

    pub fn eaa(x: &[f64], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut sa = 0.0;
        for v in a {
            sa += cos(x, v);
        }
        let mut sb = 0.0;
        for v in b {
            sb += cos(x, v);
        }
        sa / a.len() as f64 - sb / b.len() as f64
    }

    pub fn geaa(e: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let mut s = 0.0;
        for x in e {
            s += eaa(x, a, b);
        }
        s
    }

    pub fn deaa(e: &[Vec<f64>], p: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        geaa(e, a, b) - geaa(p, a, b)
    }

    pub fn eaa_effect_size(e: &[Vec<f64>], p: &[Vec<f64>], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let se: Vec<f64> = e.iter().map(|x| eaa(x, a, b)).collect();
        let sp: Vec<f64> = p.iter().map(|x| eaa(x, a, b)).collect();
        (mean(&se) - mean(&sp)) / pooled_sd(&se, &sp)
    }

    pub fn rripa(e: &[Vec<f64>], psi: &[f64]) -> f64 {
        let c: Vec<f64> = e.iter().map(|x| cos(x, psi)).collect();
        mean(&c)
    }

    pub fn rripa_effect_size(e: &[Vec<f64>], p: &[Vec<f64>], psi: &[f64]) -> f64 {
        let ce: Vec<f64> = e.iter().map(|x| cos(x, psi)).collect();
        let cp: Vec<f64> = p.iter().map(|x| cos(x, psi)).collect();
        (mean(&ce) - mean(&cp)) / pooled_sd(&ce, &cp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directions::centroid_difference_direction;

    #[test]
    fn noiseless_space_recovers_direction() {
        let cfg = PlantedConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let ps = generate_planted_space(&cfg).unwrap();
        let d = centroid_difference_direction(&ps.groups.a, &ps.groups.b, &ps.space).unwrap();
        assert!((space::dot(&d.vector, &ps.direction) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let cfg = PlantedConfig::default();
        let x = generate_planted_space(&cfg).unwrap();
        let y = generate_planted_space(&cfg).unwrap();
        for (i, id) in x.space.ids().iter().enumerate() {
            assert_eq!(id, &y.space.ids()[i]);
            let (u, v) = (x.space.vector(id).unwrap(), y.space.vector(id).unwrap());
            assert!(u.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        let z = generate_planted_space(&PlantedConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(x.space.vector(&"a00000".into()).unwrap(), z.space.vector(&"a00000".into()).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(PlantedConfig { dim: 3, ..Default::default() }.validate().is_err());
        assert!(PlantedConfig { n_e: 4, ..Default::default() }.validate().is_err());
        assert!(PlantedConfig { e_alignment: 1.5, ..Default::default() }.validate().is_err());
        assert!(PlantedConfig { noise_sigma: -0.1, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn axes_are_orthonormal() {
        let [g, h, k] = planted_axes(8, 3);
        for (u, v) in [(&g, &h), (&g, &k), (&h, &k)] {
            assert!(space::dot(u, v).abs() < 1e-12);
        }
        for u in [&g, &h, &k] {
            assert!((space::norm(u) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_one_log_gives_collinear_items() {
        let mut interactions = Vec::new();
        let mut attrs = BTreeMap::new();
        for u in 0..12 {
            let user = EntityId::from(format!("u{u}").as_str());
            attrs.insert(user.clone(), u % 2 == 0);
            for i in 0..6 {
                interactions.push(Interaction {
                    user: user.clone(),
                    item: format!("i{i}").as_str().into(),
                    weight: 1.0,
                });
            }
        }
        let log = InteractionLog::new(interactions, attrs).unwrap();
        let m = train_toy_mf(&log, &MfParams { dim: 4, ..Default::default() }).unwrap();
        for i in &m.item_ids {
            for j in &m.item_ids {
                let c = space::cosine(m.space.vector(i).unwrap(), m.space.vector(j).unwrap()).unwrap();
                assert!(c >= 0.99, "{i} {j} {c}");
            }
        }
    }

    #[test]
    fn log_rejects_duplicates_and_bad_weights() {
        let it = |w: f64| Interaction {
            user: "u".into(),
            item: "i".into(),
            weight: w,
        };
        assert!(InteractionLog::new(vec![it(1.0), it(2.0)], BTreeMap::new()).is_err());
        assert!(InteractionLog::new(vec![it(0.0)], BTreeMap::new()).is_err());
    }

    #[test]
    fn mf_is_deterministic() {
        let log = generate_interactions(&InteractionConfig {
            n_users_a: 20,
            n_users_b: 20,
            n_items_x: 10,
            n_items_y: 10,
            n_items_neutral: 10,
            interactions_per_user: 8,
            ..Default::default()
        })
        .unwrap();
        let params = MfParams { dim: 4, epochs: 3, ..Default::default() };
        let x = train_toy_mf(&log, &params).unwrap();
        let y = train_toy_mf(&log, &params).unwrap();
        for id in x.space.ids() {
            assert_eq!(x.space.vector(id).unwrap(), y.space.vector(id).unwrap());
        }
    }
}
