//! Classifier scenarios: predicting the attribute label of entities with a
//! probe trained on `A`/`B`, breaking predictions down by engagement-share
//! decile, and scoring predictions against stereotype labels.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::directions::LinearProbe;
use crate::error::{Error, Result};
use crate::space::{self, EmbeddingSpace, EntityGroup, EntityId};
use crate::stats::{chi_square_test, rank_sum_test};

/// Attribute label predicted for an entity. Points exactly on the probe
/// hyperplane are labelled `B`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    A,
    B,
}

impl Label {
    pub fn other(self) -> Label {
        match self {
            Label::A => Label::B,
            Label::B => Label::A,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::A => "A",
            Label::B => "B",
        })
    }
}

pub type Predictions = BTreeMap<EntityId, Label>;

pub fn predict_labels(
    probe: &LinearProbe,
    targets: &EntityGroup,
    space: &EmbeddingSpace,
) -> Result<Predictions> {
    if probe.weights.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            found: probe.weights.len(),
        });
    }
    targets
        .members()
        .iter()
        .map(|id| {
            let score = probe.decision(space.vector(id)?);
            Ok((id.clone(), if score > 0.0 { Label::A } else { Label::B }))
        })
        .collect()
}

/// Fraction of an item's engagement coming from the `A` group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngagementShares {
    pub entity: EntityId,
    pub share_positive: f64,
}

pub const DEFAULT_DECILES: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

/// One decile bucket: entities whose majority group is `majority` and whose
/// majority share falls in `[decile, next decile)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecileRow {
    pub majority: Label,
    pub decile: f64,
    pub count: usize,
    /// `None` for empty buckets.
    pub predicted_a: Option<f64>,
    pub predicted_b: Option<f64>,
}

impl DecileRow {
    /// Share of the bucket predicted with its majority label.
    pub fn majority_fraction(&self) -> Option<f64> {
        match self.majority {
            Label::A => self.predicted_a,
            Label::B => self.predicted_b,
        }
    }
}

/// Buckets entities by majority share. The majority group is `A` when the
/// share from `A` exceeds one half and `B` otherwise; shares below the first
/// threshold are not reported.
pub fn decile_breakdown(
    predictions: &Predictions,
    shares: &[EngagementShares],
    deciles: &[f64],
) -> Result<Vec<DecileRow>> {
    if deciles.is_empty() || deciles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("deciles must be strictly increasing".into()));
    }
    let by_id: BTreeMap<&EntityId, f64> = shares
        .iter()
        .map(|s| {
            if (0.0..=1.0).contains(&s.share_positive) {
                Ok((&s.entity, s.share_positive))
            } else {
                Err(Error::Validation(format!(
                    "share for `{}` is outside [0, 1]: {}",
                    s.entity, s.share_positive
                )))
            }
        })
        .collect::<Result<_>>()?;
    let mut counts: BTreeMap<(Label, usize), [usize; 2]> = BTreeMap::new();
    for (id, label) in predictions {
        let share = *by_id
            .get(id)
            .ok_or_else(|| Error::MissingEntity(id.clone()))?;
        let (majority, level) = if share > 0.5 {
            (Label::A, share)
        } else {
            (Label::B, 1.0 - share)
        };
        let Some(bucket) = deciles.iter().rposition(|&d| level >= d - 1e-12) else {
            continue;
        };
        let slot = counts.entry((majority, bucket)).or_default();
        slot[(*label == Label::B) as usize] += 1;
    }
    let mut rows = Vec::new();
    for majority in [Label::A, Label::B] {
        for (bucket, &decile) in deciles.iter().enumerate() {
            let [na, nb] = counts.get(&(majority, bucket)).copied().unwrap_or_default();
            let n = na + nb;
            let frac = |k: usize| (n > 0).then(|| k as f64 / n as f64);
            rows.push(DecileRow {
                majority,
                decile,
                count: n,
                predicted_a: frac(na),
                predicted_b: frac(nb),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct HistoryFeatures {
    pub space: EmbeddingSpace,
    /// Users left out because their history is shorter than `k`.
    pub excluded: Vec<EntityId>,
}

/// Per-user centroid of the first `k` items of each ranked history.
pub fn history_centroid_features(
    histories: &BTreeMap<EntityId, Vec<EntityId>>,
    k: usize,
    space: &EmbeddingSpace,
) -> Result<HistoryFeatures> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for (user, items) in histories {
        if items.len() < k {
            excluded.push(user.clone());
            continue;
        }
        let vecs = items[..k]
            .iter()
            .map(|i| space.vector(i))
            .collect::<Result<Vec<_>>>()?;
        rows.push((user.clone(), space::mean_vector(&vecs, space.dim())?));
    }
    let space = EmbeddingSpace::new(format!("{}-history{k}", space.name()), space.variant_tag(), rows)?;
    Ok(HistoryFeatures { space, excluded })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    MajorityListener,
    HistoryCentroid,
    StereotypedGenre,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub group: String,
    pub expected: Label,
    pub support: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: ScenarioKind,
    pub groups: Vec<GroupScores>,
    /// Rows are expected `A`, `B`; columns predicted `A`, `B`.
    pub confusion: [[u64; 2]; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decile_table: Option<Vec<DecileRow>>,
    pub comparison_p_values: BTreeMap<String, f64>,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Scores predictions against the label each group is expected to receive.
///
/// For a group expecting label `L`, precision counts every scored entity
/// predicted `L`, recall only the group's own members. When both groups have at
/// least five members, their per-entity correctness indicators are compared
/// with the rank-sum test (`"rank_sum"` in `comparison_p_values`).
pub fn stereotype_scores(
    scenario: ScenarioKind,
    predictions: &Predictions,
    truth: &[(&EntityGroup, Label)],
) -> Result<ScenarioResult> {
    if truth.is_empty() {
        return Err(Error::Config("no stereotyped groups given".into()));
    }
    let mut expected: BTreeMap<&EntityId, Label> = BTreeMap::new();
    let mut correctness: Vec<Vec<f64>> = Vec::new();
    for (group, label) in truth {
        let mut flags = Vec::with_capacity(group.len());
        for id in group.members() {
            let predicted = predictions.get(id).ok_or_else(|| {
                Error::Validation(format!(
                    "`{id}` from group `{}` has no prediction",
                    group.name()
                ))
            })?;
            if expected.insert(id, *label).is_some() {
                return Err(Error::Validation(format!(
                    "`{id}` belongs to more than one stereotyped group"
                )));
            }
            flags.push((predicted == label) as u8 as f64);
        }
        correctness.push(flags);
    }
    let mut confusion = [[0u64; 2]; 2];
    for (id, truth_label) in &expected {
        let predicted = predictions[*id];
        confusion[(*truth_label == Label::B) as usize][(predicted == Label::B) as usize] += 1;
    }
    let groups = truth
        .iter()
        .zip(&correctness)
        .map(|((group, label), flags)| {
            let correct = flags.iter().filter(|&&f| f > 0.0).count();
            let predicted_as_label = expected
                .keys()
                .filter(|id| predictions[**id] == *label)
                .count();
            let precision = if predicted_as_label > 0 {
                correct as f64 / predicted_as_label as f64
            } else {
                0.0
            };
            let recall = correct as f64 / group.len() as f64;
            GroupScores {
                group: group.name().to_string(),
                expected: *label,
                support: group.len(),
                correct,
                precision,
                recall,
                f1: f1(precision, recall),
            }
        })
        .collect();
    let mut comparison_p_values = BTreeMap::new();
    if let [x, y] = correctness.as_slice() {
        if x.len() >= 5 && y.len() >= 5 {
            let p = match rank_sum_test(x, y) {
                Ok(r) => r.p_value,
                Err(Error::DegenerateDistribution(_)) => 1.0,
                Err(e) => return Err(e),
            };
            comparison_p_values.insert("rank_sum".to_string(), p);
        }
    }
    Ok(ScenarioResult {
        scenario,
        groups,
        confusion,
        decile_table: None,
        comparison_p_values,
    })
}

/// Per-group chi-square test of correct/incorrect counts between two variants
/// of the same scenario (for example with and without the attribute feature).
pub fn compare_variants(
    first: &ScenarioResult,
    second: &ScenarioResult,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for g in &first.groups {
        let h = second
            .groups
            .iter()
            .find(|h| h.group == g.group)
            .ok_or_else(|| Error::Validation(format!("group `{}` missing from second variant", g.group)))?;
        let table = [
            [g.correct as u64, (g.support - g.correct) as u64],
            [h.correct as u64, (h.support - h.correct) as u64],
        ];
        let p = match chi_square_test(table) {
            Ok(r) => r.p_value,
            Err(Error::DegenerateDistribution(_)) => 1.0,
            Err(e) => return Err(e),
        };
        out.insert(g.group.clone(), p);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisclassifiedEntity {
    pub entity: EntityId,
    pub truth: Label,
    pub predicted: Label,
    pub cosines: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisclassifiedCell {
    pub truth: Label,
    pub predicted: Label,
    pub count: usize,
    pub mean_cosines: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MisclassifiedAnalysis {
    pub entities: Vec<MisclassifiedEntity>,
    pub cells: Vec<MisclassifiedCell>,
}

/// Cosine of every misclassified entity with each named reference centroid,
/// and the mean per (truth, predicted) cell.
pub fn misclassified_centroid_analysis(
    predictions: &Predictions,
    truth: &BTreeMap<EntityId, Label>,
    references: &[(String, Vec<f64>)],
    space: &EmbeddingSpace,
) -> Result<MisclassifiedAnalysis> {
    let mut entities = Vec::new();
    for (id, t) in truth {
        let predicted = *predictions
            .get(id)
            .ok_or_else(|| Error::MissingEntity(id.clone()))?;
        if predicted == *t {
            continue;
        }
        let v = space.vector(id)?;
        let cosines = references
            .iter()
            .map(|(name, c)| Ok((name.clone(), space::cosine(v, c)?)))
            .collect::<Result<_>>()?;
        entities.push(MisclassifiedEntity {
            entity: id.clone(),
            truth: *t,
            predicted,
            cosines,
        });
    }
    let mut cells = Vec::new();
    for t in [Label::A, Label::B] {
        let members: Vec<&MisclassifiedEntity> = entities.iter().filter(|e| e.truth == t).collect();
        if members.is_empty() {
            continue;
        }
        let mean_cosines = references
            .iter()
            .map(|(name, _)| {
                let xs: Vec<f64> = members.iter().map(|e| e.cosines[name]).collect();
                (name.clone(), space::mean(&xs))
            })
            .collect();
        cells.push(MisclassifiedCell {
            truth: t,
            predicted: t.other(),
            count: members.len(),
            mean_cosines,
        });
    }
    Ok(MisclassifiedAnalysis { entities, cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::directions::ProbeParams;
    use crate::space::Role;
    use approx::assert_abs_diff_eq;

    fn id(s: &str) -> EntityId {
        EntityId::from(s)
    }

    fn probe(weights: Vec<f64>, intercept: f64) -> LinearProbe {
        LinearProbe {
            weights,
            intercept,
            train_accuracy: 1.0,
            test_accuracy: 1.0,
            training_ids: vec![],
            test_ids: vec![],
            params: ProbeParams::default(),
            converged: true,
            warnings: vec![],
            orientation_reference: vec![],
            source_groups: ("A".into(), "B".into()),
        }
    }

    fn space(rows: &[(&str, [f64; 2])]) -> EmbeddingSpace {
        EmbeddingSpace::new("t", "", rows.iter().map(|(i, v)| (id(i), v.to_vec()))).unwrap()
    }

    #[test]
    fn predictions_follow_hyperplane_with_ties_to_b() {
        let s = space(&[("x", [1.0, 0.0]), ("y", [0.0, 1.0]), ("z", [-1.0, 0.0])]);
        let g = EntityGroup::new("T", Role::Unassigned, vec![id("x"), id("y"), id("z")]).unwrap();
        let p = predict_labels(&probe(vec![1.0, 0.0], 0.0), &g, &s).unwrap();
        assert_eq!(p[&id("x")], Label::A);
        assert_eq!(p[&id("y")], Label::B);
        assert_eq!(p[&id("z")], Label::B);
        assert!(predict_labels(&probe(vec![1.0, 0.0, 0.0], 0.0), &g, &s).is_err());
    }

    #[test]
    fn decile_rows() {
        let preds: Predictions = [(id("x"), Label::A), (id("y"), Label::A)].into();
        let shares = vec![
            EngagementShares { entity: id("x"), share_positive: 0.95 },
            EngagementShares { entity: id("y"), share_positive: 0.95 },
        ];
        let rows = decile_breakdown(&preds, &shares, &DEFAULT_DECILES).unwrap();
        assert_eq!(rows.len(), 10);
        let top = rows.iter().find(|r| r.majority == Label::A && r.decile == 0.9).unwrap();
        assert_eq!((top.count, top.predicted_a, top.predicted_b), (2, Some(1.0), Some(0.0)));
        let empty = rows.iter().find(|r| r.majority == Label::B && r.decile == 0.5).unwrap();
        assert_eq!((empty.count, empty.predicted_a), (0, None));
        let missing: Predictions = [(id("q"), Label::A)].into();
        assert!(decile_breakdown(&missing, &shares, &DEFAULT_DECILES).is_err());
    }

    #[test]
    fn history_centroids() {
        let s = space(&[("i1", [1.0, 0.0]), ("i2", [0.0, 1.0]), ("i3", [-1.0, 0.0]), ("v", [2.0, 2.0])]);
        let histories: BTreeMap<EntityId, Vec<EntityId>> = [
            (id("u1"), vec![id("i1"), id("i2"), id("i3")]),
            (id("u2"), vec![id("v"), id("v"), id("v"), id("i1")]),
            (id("u3"), vec![id("i1")]),
        ]
        .into();
        let f = history_centroid_features(&histories, 3, &s).unwrap();
        let u1 = f.space.vector(&id("u1")).unwrap();
        assert_abs_diff_eq!(u1[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u1[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(f.space.vector(&id("u2")).unwrap(), &[2.0, 2.0]);
        assert_eq!(f.excluded, vec![id("u3")]);
    }

    fn groups() -> (EntityGroup, EntityGroup) {
        let x = EntityGroup::new("sports", Role::E, (0..6).map(|i| id(&format!("s{i}"))).collect()).unwrap();
        let y = EntityGroup::new("crime", Role::P, (0..6).map(|i| id(&format!("c{i}"))).collect()).unwrap();
        (x, y)
    }

    #[test]
    fn perfect_and_inverted_stereotype_scores() {
        let (x, y) = groups();
        let mut preds = Predictions::new();
        x.members().iter().for_each(|m| { preds.insert(m.clone(), Label::B); });
        y.members().iter().for_each(|m| { preds.insert(m.clone(), Label::A); });
        let truth = [(&x, Label::B), (&y, Label::A)];
        let r = stereotype_scores(ScenarioKind::StereotypedGenre, &preds, &truth).unwrap();
        for g in &r.groups {
            assert_eq!((g.precision, g.recall, g.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(r.confusion, [[6, 0], [0, 6]]);
        let inverted = [(&x, Label::A), (&y, Label::B)];
        let r = stereotype_scores(ScenarioKind::StereotypedGenre, &preds, &inverted).unwrap();
        assert!(r.groups.iter().all(|g| g.recall == 0.0));
        let total: u64 = r.confusion.iter().flatten().sum();
        assert_eq!(total, 12);
    }

    #[test]
    fn f1_is_harmonic_mean() {
        let (x, y) = groups();
        let mut preds = Predictions::new();
        for (i, m) in x.members().iter().enumerate() {
            preds.insert(m.clone(), if i < 4 { Label::B } else { Label::A });
        }
        for (i, m) in y.members().iter().enumerate() {
            preds.insert(m.clone(), if i < 5 { Label::A } else { Label::B });
        }
        let r = stereotype_scores(ScenarioKind::StereotypedGenre, &preds, &[(&x, Label::B), (&y, Label::A)]).unwrap();
        for g in &r.groups {
            assert_eq!(g.f1, 2.0 * g.precision * g.recall / (g.precision + g.recall));
        }
        let sports = &r.groups[0];
        assert_abs_diff_eq!(sports.precision, 4.0 / 5.0);
        assert_abs_diff_eq!(sports.recall, 4.0 / 6.0);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let (x, y) = groups();
        let preds = Predictions::new();
        assert!(stereotype_scores(ScenarioKind::StereotypedGenre, &preds, &[(&x, Label::B), (&y, Label::A)]).is_err());
    }

    #[test]
    fn misclassified_entity_is_closer_to_opposite_centroid() {
        let s = space(&[("m", [-1.0, 0.1]), ("ok", [1.0, 0.0])]);
        let preds: Predictions = [(id("m"), Label::B), (id("ok"), Label::A)].into();
        let truth: BTreeMap<EntityId, Label> = [(id("m"), Label::A), (id("ok"), Label::A)].into();
        let refs = vec![("A".to_string(), vec![1.0, 0.0]), ("B".to_string(), vec![-1.0, 0.0])];
        let r = misclassified_centroid_analysis(&preds, &truth, &refs, &s).unwrap();
        assert_eq!(r.entities.len(), 1);
        assert!(r.cells[0].mean_cosines["B"] > r.cells[0].mean_cosines["A"]);
        let none: Predictions = [(id("m"), Label::A), (id("ok"), Label::A)].into();
        assert!(misclassified_centroid_analysis(&none, &truth, &refs, &s).unwrap().cells.is_empty());
    }
}
