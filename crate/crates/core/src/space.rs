//! Embedding spaces, entity groups and the elementary vector statistics the
//! rest of the crate is built on.
//!
//! Vectors are never assumed to be unit length. Every cosine is computed from
//! raw vectors, and zero vectors are rejected when a space is constructed.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque identifier of a user or item inside one embedding space.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(String);

impl EntityId {
    pub fn new(value: impl Into<String>) -> Result<Self> {
        let value = value.into();
        if value.is_empty() {
            return Err(Error::Validation("entity ids must be non-empty".into()));
        }
        Ok(EntityId(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    /// Panics on an empty string; use [`EntityId::new`] for untrusted input.
    fn from(s: &str) -> Self {
        EntityId::new(s).expect("empty entity id")
    }
}

/// Dense, id-indexed vectors for one trained model variant.
#[derive(Clone, Debug)]
pub struct EmbeddingSpace {
    name: String,
    variant_tag: String,
    dim: usize,
    ids: Vec<EntityId>,
    index: HashMap<EntityId, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbeddingSpace {
    /// Builds a space from `(id, vector)` rows, enforcing the space invariants:
    /// at least two rows, a shared dimension of at least two, finite
    /// components, non-zero norms and unique ids.
    pub fn new(
        name: impl Into<String>,
        variant_tag: impl Into<String>,
        rows: impl IntoIterator<Item = (EntityId, Vec<f64>)>,
    ) -> Result<Self> {
        let mut ids = Vec::new();
        let mut index = HashMap::new();
        let mut data = Vec::new();
        let mut norms = Vec::new();
        let mut dim = None;
        for (record, (id, v)) in rows.into_iter().enumerate() {
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected {
                return Err(Error::RaggedDimension {
                    record: record + 1,
                    expected,
                    found: v.len(),
                });
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "entity `{id}` has non-finite component {bad}"
                )));
            }
            let n = norm(&v);
            if n == 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "entity `{id}` has a zero-norm vector"
                )));
            }
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateId {
                    id: id.to_string(),
                    line: record + 1,
                });
            }
            ids.push(id);
            data.extend_from_slice(&v);
            norms.push(n);
        }
        let dim = dim.unwrap_or(0);
        if ids.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: ids.len(),
            });
        }
        if dim < 2 {
            return Err(Error::Validation(format!(
                "embedding dimension must be at least 2, got {dim}"
            )));
        }
        Ok(EmbeddingSpace {
            name: name.into(),
            variant_tag: variant_tag.into(),
            dim,
            ids,
            index,
            data,
            norms,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn variant_tag(&self) -> &str {
        &self.variant_tag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &EntityId) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    /// Like [`get`](Self::get) but reports the missing id as an error.
    pub fn vector(&self, id: &EntityId) -> Result<&[f64]> {
        self.get(id).ok_or_else(|| Error::MissingEntity(id.clone()))
    }

    /// Euclidean norm of a stored row.
    pub fn norm_of(&self, id: &EntityId) -> Result<f64> {
        self.index
            .get(id)
            .map(|&i| self.norms[i])
            .ok_or_else(|| Error::MissingEntity(id.clone()))
    }

    /// The stored vector divided by its norm.
    pub fn unit_vector(&self, id: &EntityId) -> Result<Vec<f64>> {
        let &i = self
            .index
            .get(id)
            .ok_or_else(|| Error::MissingEntity(id.clone()))?;
        let n = self.norms[i];
        Ok(self.row(i).iter().map(|x| x / n).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EntityId, &[f64])> {
        self.ids.iter().enumerate().map(|(i, id)| (id, self.row(i)))
    }

    /// Median of the row norms.
    pub fn median_norm(&self) -> f64 {
        let mut n = self.norms.clone();
        n.sort_by(f64::total_cmp);
        let m = n.len();
        if m % 2 == 1 {
            n[m / 2]
        } else {
            0.5 * (n[m / 2 - 1] + n[m / 2])
        }
    }

    /// A copy of this space restricted to `ids`, in the given order.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a EntityId>) -> Result<Self> {
        let rows = ids
            .into_iter()
            .map(|id| Ok((id.clone(), self.vector(id)?.to_vec())))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingSpace::new(self.name.clone(), self.variant_tag.clone(), rows)
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// The part an entity group plays in an audit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Attribute-defining set labelled 1.
    A,
    /// Attribute-defining set labelled 0.
    B,
    /// Test set hypothesised to lean towards `A`.
    E,
    /// Test set hypothesised to lean towards `B`.
    P,
    #[serde(rename = "unassigned")]
    Unassigned,
}

impl Role {
    /// The role a group must be disjoint from, if any.
    pub fn paired(self) -> Option<Role> {
        match self {
            Role::A => Some(Role::B),
            Role::B => Some(Role::A),
            Role::E => Some(Role::P),
            Role::P => Some(Role::E),
            Role::Unassigned => None,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::A => "A",
            Role::B => "B",
            Role::E => "E",
            Role::P => "P",
            Role::Unassigned => "unassigned",
        };
        f.write_str(s)
    }
}

/// A named, ordered set of entity ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityGroup {
    name: String,
    role: Role,
    members: Vec<EntityId>,
}

impl EntityGroup {
    pub fn new(name: impl Into<String>, role: Role, members: Vec<EntityId>) -> Result<Self> {
        let name = name.into();
        if members.is_empty() {
            return Err(Error::Validation(format!("group `{name}` is empty")));
        }
        let mut seen = BTreeSet::new();
        let dups: Vec<_> = members
            .iter()
            .filter(|m| !seen.insert(*m))
            .map(ToString::to_string)
            .collect();
        if !dups.is_empty() {
            return Err(Error::Validation(format!(
                "group `{name}` lists duplicate ids: {}",
                dups.join(", ")
            )));
        }
        Ok(EntityGroup {
            name,
            role,
            members,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn members(&self) -> &[EntityId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.members.contains(id)
    }

    /// Same members under a different name and role.
    pub fn renamed(&self, name: impl Into<String>, role: Role) -> Self {
        EntityGroup {
            name: name.into(),
            role,
            members: self.members.clone(),
        }
    }

    /// Fails unless every member is present in `space`.
    pub fn check_in(&self, space: &EmbeddingSpace) -> Result<()> {
        match self.members.iter().find(|m| !space.contains(m)) {
            Some(m) => Err(Error::MissingEntity(m.clone())),
            None => Ok(()),
        }
    }

    /// Member vectors, in member order.
    pub fn vectors<'s>(&self, space: &'s EmbeddingSpace) -> Result<Vec<&'s [f64]>> {
        self.members.iter().map(|m| space.vector(m)).collect()
    }
}

/// Fails with the list of shared ids when `a` and `b` overlap.
pub fn check_disjoint(a: &EntityGroup, b: &EntityGroup) -> Result<()> {
    let left: BTreeSet<_> = a.members().iter().collect();
    let shared: Vec<String> = b
        .members()
        .iter()
        .filter(|m| left.contains(m))
        .map(ToString::to_string)
        .collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "groups `{}` and `{}` share ids: {}",
            a.name(),
            b.name(),
            shared.join(", ")
        )))
    }
}

/// A binary attribute expressed as two disjoint labelled groups.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttributeLabeling {
    pub attribute_name: String,
    /// Label 1.
    pub positive: EntityGroup,
    /// Label 0.
    pub negative: EntityGroup,
}

impl AttributeLabeling {
    pub fn new(
        attribute_name: impl Into<String>,
        positive: EntityGroup,
        negative: EntityGroup,
    ) -> Result<Self> {
        check_disjoint(&positive, &negative)?;
        Ok(AttributeLabeling {
            attribute_name: attribute_name.into(),
            positive,
            negative,
        })
    }

    /// `Some(1)` for positive members, `Some(0)` for negative ones.
    pub fn label_of(&self, id: &EntityId) -> Option<u8> {
        if self.positive.contains(id) {
            Some(1)
        } else if self.negative.contains(id) {
            Some(0)
        } else {
            None
        }
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `v / ‖v‖`, rejecting zero vectors.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateInput("cannot normalize a zero vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateInput(
            "cosine is undefined for a zero-norm vector".into(),
        ));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Component-wise mean of the group's vectors.
pub fn centroid(group: &EntityGroup, space: &EmbeddingSpace) -> Result<Vec<f64>> {
    mean_vector(&group.vectors(space)?, space.dim())
}

/// Component-wise mean of the unit-normalised group vectors.
///
/// `dot(x̂, mean_unit_vector(G))` equals the mean cosine between `x` and the
/// members of `G`, which is what makes the association metrics linear-time.
pub fn mean_unit_vector(group: &EntityGroup, space: &EmbeddingSpace) -> Result<Vec<f64>> {
    let units = group
        .members()
        .iter()
        .map(|m| space.unit_vector(m))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = units.iter().map(Vec::as_slice).collect();
    mean_vector(&refs, space.dim())
}

pub(crate) fn mean_vector(rows: &[&[f64]], dim: usize) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut acc = vec![0.0; dim];
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r.iter()) {
            *a += x;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divisor `n`).
pub fn group_stddev(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    let m = mean(values);
    let var = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / values.len() as f64;
    Ok(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ids(names: &[&str]) -> Vec<EntityId> {
        names.iter().map(|s| EntityId::from(*s)).collect()
    }

    fn space(rows: &[(&str, &[f64])]) -> EmbeddingSpace {
        EmbeddingSpace::new(
            "t",
            "with-attribute",
            rows.iter().map(|(id, v)| (EntityId::from(*id), v.to_vec())),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            cosine(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn centroid_examples() {
        let s = space(&[
            ("a", &[1.0, 2.0]),
            ("b", &[3.0, 4.0]),
            ("c", &[5.0, 0.0]),
            ("d", &[1.0, 0.0]),
            ("e", &[3.0, 0.0]),
        ]);
        let g = |m: &[&str]| EntityGroup::new("g", Role::A, ids(m)).unwrap();
        assert_eq!(centroid(&g(&["d"]), &s).unwrap(), vec![1.0, 0.0]);
        assert_eq!(centroid(&g(&["d", "e"]), &s).unwrap(), vec![2.0, 0.0]);
        assert_eq!(centroid(&g(&["a", "b", "c"]), &s).unwrap(), vec![3.0, 2.0]);
        let err = centroid(&g(&["a", "zz"]), &s).unwrap_err();
        assert!(matches!(err, Error::MissingEntity(ref id) if id.as_str() == "zz"));
    }

    #[test]
    fn stddev_examples() {
        assert_eq!(group_stddev(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(group_stddev(&[0.0, 2.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            group_stddev(&[1.0, 2.0, 3.0, 4.0]).unwrap(),
            1.25f64.sqrt(),
            epsilon = 1e-10
        );
        assert!(matches!(
            group_stddev(&[1.0]),
            Err(Error::InsufficientData { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn space_rejects_bad_rows() {
        let zero = EmbeddingSpace::new(
            "t",
            "",
            vec![("a".into(), vec![0.0, 0.0]), ("b".into(), vec![1.0, 0.0])],
        );
        assert!(matches!(zero, Err(Error::DegenerateInput(_))));
        let dup = EmbeddingSpace::new(
            "t",
            "",
            vec![("a".into(), vec![1.0, 0.0]), ("a".into(), vec![1.0, 0.0])],
        );
        assert!(matches!(dup, Err(Error::DuplicateId { line: 2, .. })));
        let single = EmbeddingSpace::new("t", "", vec![("a".into(), vec![1.0, 0.0])]);
        assert!(matches!(single, Err(Error::InsufficientData { .. })));
        let one_dim =
            EmbeddingSpace::new("t", "", vec![("a".into(), vec![1.0]), ("b".into(), vec![2.0])]);
        assert!(matches!(one_dim, Err(Error::Validation(_))));
        let nan = EmbeddingSpace::new(
            "t",
            "",
            vec![("a".into(), vec![1.0, f64::NAN]), ("b".into(), vec![1.0, 0.0])],
        );
        assert!(nan.is_err());
    }

    #[test]
    fn groups_validate_members() {
        assert!(EntityGroup::new("g", Role::E, vec![]).is_err());
        assert!(EntityGroup::new("g", Role::E, ids(&["a", "a"])).is_err());
        let s = EntityGroup::new("S", Role::E, ids(&["x", "y"])).unwrap();
        let tc = EntityGroup::new("TC", Role::P, ids(&["y", "z"])).unwrap();
        let err = check_disjoint(&s, &tc).unwrap_err().to_string();
        assert!(err.contains('y'), "{err}");
        assert!(AttributeLabeling::new("genre", s, tc).is_err());
    }

    proptest! {
        #[test]
        fn cosine_is_scale_invariant_and_symmetric(
            u in prop::collection::vec(-10.0f64..10.0, 4),
            v in prop::collection::vec(-10.0f64..10.0, 4),
            alpha in 0.01f64..100.0,
            beta in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let base = cosine(&u, &v).unwrap();
            let su: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            let sv: Vec<f64> = v.iter().map(|x| x * beta).collect();
            prop_assert!((cosine(&su, &sv).unwrap() - base).abs() < 1e-12);
            prop_assert_eq!(cosine(&v, &u).unwrap(), base);
        }

        #[test]
        fn centroid_ignores_member_order(
            rows in prop::collection::vec(prop::collection::vec(0.5f64..5.0, 3), 2..8),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let s = EmbeddingSpace::new(
                "t",
                "",
                rows.iter().enumerate().map(|(i, v)| (EntityId::from(format!("e{i}").as_str()), v.clone())),
            ).unwrap();
            let mut members: Vec<EntityId> = s.ids().to_vec();
            let g1 = EntityGroup::new("g", Role::A, members.clone()).unwrap();
            members.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let g2 = EntityGroup::new("g", Role::A, members).unwrap();
            let (c1, c2) = (centroid(&g1, &s).unwrap(), centroid(&g2, &s).unwrap());
            for (a, b) in c1.iter().zip(&c2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
