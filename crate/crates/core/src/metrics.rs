//! Entity attribute association metrics (EAA, GEAA, DEAA and their effect
//! size) and the direction-parameterised R-RIPA metric.
//!
//! The mean cosine of `ε` against a group equals `ε̂ · mean(ĝ)`, the dot product
//! of the unit-normalised entity with the mean of the unit-normalised group.
//! [`AttributeContrast`] precomputes those two means once, so each EAA score
//! costs one dot product regardless of group sizes.
//!
//! The effect size divides by the population standard deviation of the
//! per-entity EAA scores over `E ∪ P`. The GEAA-based notation for that
//! denominator is scalar-valued when read literally; the per-entity reading
//! is the one that yields a WEAT-style standardised difference.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::BiasDirection;
use crate::error::{Error, Result};
use crate::space::{
    self, check_disjoint, group_stddev, mean_unit_vector, EmbeddingSpace, EntityGroup, EntityId,
};

/// One entity's attribute association score, in `[-2, 2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EaaScore {
    pub entity: EntityId,
    pub value: f64,
}

/// Precomputed mean unit vectors of the attribute-defining groups.
#[derive(Clone, Debug)]
pub struct AttributeContrast {
    contrast: Vec<f64>,
    excluded: BTreeSet<EntityId>,
}

impl AttributeContrast {
    pub fn new(a: &EntityGroup, b: &EntityGroup, space: &EmbeddingSpace) -> Result<Self> {
        check_disjoint(a, b)?;
        let ma = mean_unit_vector(a, space)?;
        let mb = mean_unit_vector(b, space)?;
        Ok(AttributeContrast {
            contrast: ma.iter().zip(&mb).map(|(x, y)| x - y).collect(),
            excluded: a.members().iter().chain(b.members()).cloned().collect(),
        })
    }

    /// `mean_a cos(ε, a) − mean_b cos(ε, b)`.
    pub fn eaa(&self, entity: &EntityId, space: &EmbeddingSpace) -> Result<f64> {
        if self.excluded.contains(entity) {
            return Err(Error::Contamination(entity.clone()));
        }
        let v = space.vector(entity)?;
        let n = space.norm_of(entity)?;
        Ok(space::dot(v, &self.contrast) / n)
    }

    /// Scores for every member of `group`, in member order.
    pub fn scores(&self, group: &EntityGroup, space: &EmbeddingSpace) -> Result<Vec<EaaScore>> {
        group
            .members()
            .par_iter()
            .map(|id| {
                Ok(EaaScore {
                    entity: id.clone(),
                    value: self.eaa(id, space)?,
                })
            })
            .collect()
    }
}

/// Sum of scores taken in id order, so the result does not depend on member order.
pub(crate) fn sum_by_id(scores: &[EaaScore]) -> f64 {
    let mut sorted: Vec<&EaaScore> = scores.iter().collect();
    sorted.sort_by(|x, y| x.entity.cmp(&y.entity));
    sorted.iter().map(|s| s.value).sum()
}

fn check_test_sets(
    e: &EntityGroup,
    p: Option<&EntityGroup>,
    a: &EntityGroup,
    b: &EntityGroup,
) -> Result<()> {
    let attr: BTreeSet<&EntityId> = a.members().iter().chain(b.members()).collect();
    let tests = e.members().iter().chain(p.into_iter().flat_map(|p| p.members()));
    if let Some(bad) = tests.into_iter().find(|id| attr.contains(id)) {
        return Err(Error::Contamination(bad.clone()));
    }
    if let Some(p) = p {
        check_disjoint(e, p)?;
    }
    Ok(())
}

/// Entity attribute association of a single entity.
pub fn eaa(
    entity: &EntityId,
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
) -> Result<EaaScore> {
    let c = AttributeContrast::new(a, b, space)?;
    Ok(EaaScore {
        entity: entity.clone(),
        value: c.eaa(entity, space)?,
    })
}

/// Group EAA: the sum (not the mean) of member EAA scores.
pub fn geaa(e: &EntityGroup, a: &EntityGroup, b: &EntityGroup, space: &EmbeddingSpace) -> Result<f64> {
    check_test_sets(e, None, a, b)?;
    let c = AttributeContrast::new(a, b, space)?;
    Ok(sum_by_id(&c.scores(e, space)?))
}

/// Differential EAA: `GEAA(E) − GEAA(P)`.
pub fn deaa(
    e: &EntityGroup,
    p: &EntityGroup,
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
) -> Result<f64> {
    check_test_sets(e, Some(p), a, b)?;
    let c = AttributeContrast::new(a, b, space)?;
    Ok(sum_by_id(&c.scores(e, space)?) - sum_by_id(&c.scores(p, space)?))
}

/// Standardised difference of mean EAA between `E` and `P`.
pub fn eaa_effect_size(
    e: &EntityGroup,
    p: &EntityGroup,
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
) -> Result<f64> {
    check_test_sets(e, Some(p), a, b)?;
    let c = AttributeContrast::new(a, b, space)?;
    let se: Vec<f64> = c.scores(e, space)?.into_iter().map(|s| s.value).collect();
    let sp: Vec<f64> = c.scores(p, space)?.into_iter().map(|s| s.value).collect();
    effect_size(&se, &sp)
}

/// `(mean(x) − mean(y)) / σ(x ∪ y)` with the population σ.
pub(crate) fn effect_size(x: &[f64], y: &[f64]) -> Result<f64> {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let sd = group_stddev(&pooled)?;
    if sd == 0.0 {
        return Err(Error::DegenerateDistribution(
            "scores over E ∪ P have zero spread".into(),
        ));
    }
    Ok((space::mean(x) - space::mean(y)) / sd)
}

fn check_unit(psi: &BiasDirection, space: &EmbeddingSpace) -> Result<()> {
    if psi.dim() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            found: psi.dim(),
        });
    }
    let n = space::norm(&psi.vector);
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::Validation(format!(
            "relation vector must be unit norm, got ‖ψ‖ = {n}"
        )));
    }
    Ok(())
}

/// Cosines of each member with `psi`, in member order.
pub fn direction_cosines(
    group: &EntityGroup,
    psi: &BiasDirection,
    space: &EmbeddingSpace,
) -> Result<Vec<f64>> {
    check_unit(psi, space)?;
    group
        .members()
        .par_iter()
        .map(|id| Ok(space::dot(space.vector(id)?, &psi.vector) / space.norm_of(id)?))
        .collect()
}

/// R-RIPA: mean cosine of the group with the relation vector `psi`.
pub fn rripa(e: &EntityGroup, psi: &BiasDirection, space: &EmbeddingSpace) -> Result<f64> {
    Ok(space::mean(&direction_cosines(e, psi, space)?))
}

/// Standardised difference of R-RIPA between `E` and `P`.
pub fn rripa_effect_size(
    e: &EntityGroup,
    p: &EntityGroup,
    psi: &BiasDirection,
    space: &EmbeddingSpace,
) -> Result<f64> {
    check_disjoint(e, p)?;
    effect_size(
        &direction_cosines(e, psi, space)?,
        &direction_cosines(p, psi, space)?,
    )
}

/// Every metric for one `(E, P, A, B, ψ)` configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricBundle {
    pub geaa_e: f64,
    pub geaa_p: f64,
    /// `geaa_e − geaa_p`.
    pub deaa: f64,
    pub effect_size: f64,
    /// Mean EAA per test group; GEAA is a sum and grows with group size.
    pub mean_eaa_e: f64,
    pub mean_eaa_p: f64,
    pub rripa_e: f64,
    pub rripa_p: f64,
    /// `rripa_e − rripa_p`.
    pub rripa_differential: f64,
    pub rripa_effect: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eaa_e: Vec<EaaScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eaa_p: Vec<EaaScore>,
}

/// The EAA-family half of a [`MetricBundle`]; it does not depend on ψ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EaaSummary {
    pub geaa_e: f64,
    pub geaa_p: f64,
    pub deaa: f64,
    pub effect_size: f64,
    pub mean_eaa_e: f64,
    pub mean_eaa_p: f64,
    pub eaa_e: Vec<EaaScore>,
    pub eaa_p: Vec<EaaScore>,
}

pub fn eaa_summary(
    e: &EntityGroup,
    p: &EntityGroup,
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
) -> Result<EaaSummary> {
    check_test_sets(e, Some(p), a, b)?;
    let c = AttributeContrast::new(a, b, space)?;
    let eaa_e = c.scores(e, space)?;
    let eaa_p = c.scores(p, space)?;
    let geaa_e = sum_by_id(&eaa_e);
    let geaa_p = sum_by_id(&eaa_p);
    let ve: Vec<f64> = eaa_e.iter().map(|s| s.value).collect();
    let vp: Vec<f64> = eaa_p.iter().map(|s| s.value).collect();
    Ok(EaaSummary {
        geaa_e,
        geaa_p,
        deaa: geaa_e - geaa_p,
        effect_size: effect_size(&ve, &vp)?,
        mean_eaa_e: geaa_e / e.len() as f64,
        mean_eaa_p: geaa_p / p.len() as f64,
        eaa_e,
        eaa_p,
    })
}

impl MetricBundle {
    pub fn from_parts(
        eaa: &EaaSummary,
        e: &EntityGroup,
        p: &EntityGroup,
        psi: &BiasDirection,
        space: &EmbeddingSpace,
        keep_entity_scores: bool,
    ) -> Result<Self> {
        let ce = direction_cosines(e, psi, space)?;
        let cp = direction_cosines(p, psi, space)?;
        let rripa_e = space::mean(&ce);
        let rripa_p = space::mean(&cp);
        Ok(MetricBundle {
            geaa_e: eaa.geaa_e,
            geaa_p: eaa.geaa_p,
            deaa: eaa.deaa,
            effect_size: eaa.effect_size,
            mean_eaa_e: eaa.mean_eaa_e,
            mean_eaa_p: eaa.mean_eaa_p,
            rripa_e,
            rripa_p,
            rripa_differential: rripa_e - rripa_p,
            rripa_effect: effect_size(&ce, &cp)?,
            eaa_e: if keep_entity_scores { eaa.eaa_e.clone() } else { Vec::new() },
            eaa_p: if keep_entity_scores { eaa.eaa_p.clone() } else { Vec::new() },
        })
    }

    pub fn compute(
        e: &EntityGroup,
        p: &EntityGroup,
        a: &EntityGroup,
        b: &EntityGroup,
        psi: &BiasDirection,
        space: &EmbeddingSpace,
    ) -> Result<Self> {
        let summary = eaa_summary(e, p, a, b, space)?;
        Self::from_parts(&summary, e, p, psi, space, true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directions::DirectionMethod;
    use crate::space::Role;
    use approx::assert_abs_diff_eq;

    fn id(s: &str) -> EntityId {
        EntityId::from(s)
    }

    fn group(name: &str, role: Role, members: &[&str]) -> EntityGroup {
        EntityGroup::new(name, role, members.iter().map(|m| id(m)).collect()).unwrap()
    }

    fn space(rows: &[(&str, [f64; 2])]) -> EmbeddingSpace {
        EmbeddingSpace::new("t", "", rows.iter().map(|(i, v)| (id(i), v.to_vec()))).unwrap()
    }

    fn psi(v: [f64; 2]) -> BiasDirection {
        BiasDirection {
            label: "test".into(),
            method: DirectionMethod::CentroidDifference,
            vector: v.to_vec(),
            source_groups: ("A".into(), "B".into()),
            seed: 0,
            notes: vec![],
            validation: None,
        }
    }

    #[test]
    fn eaa_examples() {
        let s = space(&[
            ("e", [1.0, 0.0]),
            ("o", [0.0, 3.0]),
            ("a1", [1.0, 0.0]),
            ("a2", [0.0, 1.0]),
            ("b1", [0.0, 1.0]),
            ("b2", [-1.0, 0.0]),
        ]);
        let v = eaa(&id("e"), &group("A", Role::A, &["a1"]), &group("B", Role::B, &["b1"]), &s)
            .unwrap()
            .value;
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-15);
        let v = eaa(&id("o"), &group("A", Role::A, &["b2"]), &group("B", Role::B, &["a1"]), &s)
            .unwrap()
            .value;
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
        let v = eaa(
            &id("e"),
            &group("A", Role::A, &["a1", "a2"]),
            &group("B", Role::B, &["b2"]),
            &s,
        )
        .unwrap()
        .value;
        assert_abs_diff_eq!(v, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn eaa_rejects_contamination() {
        let s = space(&[("a1", [1.0, 0.0]), ("b1", [0.0, 1.0])]);
        let err = eaa(&id("a1"), &group("A", Role::A, &["a1"]), &group("B", Role::B, &["b1"]), &s)
            .unwrap_err();
        assert!(matches!(err, Error::Contamination(_)));
    }

    #[test]
    fn geaa_deaa_and_effect() {
        let s = space(&[
            ("e1", [1.0, 1.0]),
            ("e2", [1.0, 0.0]),
            ("p1", [-1.0, 0.0]),
            ("p2", [0.0, -1.0]),
            ("a1", [1.0, 0.0]),
            ("a2", [0.0, 1.0]),
            ("b1", [-1.0, 0.0]),
        ]);
        let a = group("A", Role::A, &["a1", "a2"]);
        let b = group("B", Role::B, &["b1"]);
        let e = group("E", Role::E, &["e1", "e2"]);
        let p = group("P", Role::P, &["p1", "p2"]);
        let c = AttributeContrast::new(&a, &b, &s).unwrap();
        let s_e1 = c.eaa(&id("e1"), &s).unwrap();
        let s_e2 = c.eaa(&id("e2"), &s).unwrap();
        assert_abs_diff_eq!(s_e2, 1.5, epsilon = 1e-15);
        let g = geaa(&e, &a, &b, &s).unwrap();
        assert_abs_diff_eq!(g, s_e1 + s_e2, epsilon = 1e-15);
        let d = deaa(&e, &p, &a, &b, &s).unwrap();
        assert_eq!(d, g - geaa(&p, &a, &b, &s).unwrap());
        assert_eq!(deaa(&p, &e, &a, &b, &s).unwrap(), -d);
        assert!(matches!(deaa(&e, &a, &a, &b, &s), Err(Error::Contamination(_))));
    }

    #[test]
    fn effect_size_examples() {
        assert_abs_diff_eq!(effect_size(&[1.0, 1.0], &[-1.0, -1.0]).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            effect_size(&[0.1, 0.5, 0.9], &[0.9, 0.1, 0.5]).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            effect_size(&[1.0, 1.0], &[1.0]),
            Err(Error::DegenerateDistribution(_))
        ));
    }

    #[test]
    fn rripa_examples() {
        let s = space(&[("x", [1.0, 0.0]), ("y", [-1.0, 0.0]), ("z", [0.0, 2.0])]);
        let d = psi([1.0, 0.0]);
        assert_eq!(rripa(&group("E", Role::E, &["x"]), &d, &s).unwrap(), 1.0);
        assert_eq!(rripa(&group("E", Role::E, &["x", "y"]), &d, &s).unwrap(), 0.0);
        let eff = rripa_effect_size(
            &group("E", Role::E, &["x"]),
            &group("P", Role::P, &["y"]),
            &d,
            &s,
        )
        .unwrap();
        assert_abs_diff_eq!(eff, 2.0, epsilon = 1e-15);
        assert!(rripa(&group("E", Role::E, &["x"]), &psi([2.0, 0.0]), &s).is_err());
    }
}
