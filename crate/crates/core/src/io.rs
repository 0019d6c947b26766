//! Readers and writers for embeddings, group labels, interaction logs,
//! engagement shares and reports.
//!
//! Embeddings are TSV (optional header `id<TAB>d0<TAB>…`) or JSONL
//! (`{"id": …, "vec": […]}`). Numbers are parsed with Rust's float parser, which
//! only accepts `.` as the decimal separator.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenarios::EngagementShares;
use crate::space::{check_disjoint, EmbeddingSpace, EntityGroup, EntityId, Role};
use crate::synthetic::{Interaction, InteractionLog};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    #[default]
    Tsv,
    Jsonl,
}

impl EmbeddingFormat {
    /// Format implied by the file extension, TSV unless it is `.jsonl`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => EmbeddingFormat::Jsonl,
            _ => EmbeddingFormat::Tsv,
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_number(s: &str, line: usize) -> Result<f64> {
    let x: f64 = s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{s}` is not a number"),
    })?;
    if !x.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value `{s}`"),
        });
    }
    Ok(x)
}

/// Accumulates rows, enforcing the dimension of the first row and unique ids,
/// with errors pointing at file lines.
struct RowCollector {
    rows: Vec<(EntityId, Vec<f64>)>,
    seen: HashMap<EntityId, usize>,
    dim: Option<usize>,
}

impl RowCollector {
    fn new() -> Self {
        RowCollector {
            rows: Vec::new(),
            seen: HashMap::new(),
            dim: None,
        }
    }

    fn push(&mut self, id: &str, v: Vec<f64>, line: usize) -> Result<()> {
        let id = EntityId::new(id).map_err(|_| Error::Parse {
            line,
            message: "empty entity id".into(),
        })?;
        let expected = *self.dim.get_or_insert(v.len());
        if v.len() != expected {
            return Err(Error::RaggedDimension {
                record: line,
                expected,
                found: v.len(),
            });
        }
        if self.seen.insert(id.clone(), line).is_some() {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                line,
            });
        }
        self.rows.push((id, v));
        Ok(())
    }
}

fn is_header(fields: &[&str]) -> bool {
    fields.first() == Some(&"id")
        && fields[1..]
            .iter()
            .enumerate()
            .all(|(i, f)| *f == format!("d{i}"))
}

pub fn read_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSpace> {
    let text = read_text(path)?;
    let mut rows = RowCollector::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        match format {
            EmbeddingFormat::Tsv => {
                let fields: Vec<&str> = raw.split('\t').collect();
                if line == 1 && is_header(&fields) {
                    continue;
                }
                let v = fields[1..]
                    .iter()
                    .map(|f| parse_number(f, line))
                    .collect::<Result<Vec<f64>>>()?;
                rows.push(fields[0], v, line)?;
            }
            EmbeddingFormat::Jsonl => {
                #[derive(Deserialize)]
                struct Row {
                    id: String,
                    vec: Vec<f64>,
                }
                let row: Row = serde_json::from_str(raw).map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
                rows.push(&row.id, row.vec, line)?;
            }
        }
    }
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("embeddings")
        .to_string();
    EmbeddingSpace::new(name, "", rows.rows)
}

/// Writes vectors with Rust's shortest round-trip float formatting.
pub fn write_embeddings(space: &EmbeddingSpace, path: &Path, format: EmbeddingFormat) -> Result<()> {
    let mut out = String::new();
    match format {
        EmbeddingFormat::Tsv => {
            out.push_str("id");
            for k in 0..space.dim() {
                out.push_str(&format!("\td{k}"));
            }
            out.push('\n');
            for (id, v) in space.iter() {
                out.push_str(id.as_str());
                for x in v {
                    out.push('\t');
                    out.push_str(&x.to_string());
                }
                out.push('\n');
            }
        }
        EmbeddingFormat::Jsonl => {
            for (id, v) in space.iter() {
                let row = serde_json::json!({ "id": id, "vec": v });
                out.push_str(&row.to_string());
                out.push('\n');
            }
        }
    }
    write_text(path, &out)
}

/// Which label (or explicit id list) defines each role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<EntityId>>,
}

/// Reads a two-column `id<TAB>label` file. An id may carry several labels on
/// separate lines. Lines starting with `#` are skipped.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, Vec<EntityId>>> {
    let text = read_text(path)?;
    let mut out: BTreeMap<String, Vec<EntityId>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected `id<TAB>label`, found {} fields", fields.len()),
            });
        }
        if line == 1 && fields == ["id", "label"] {
            continue;
        }
        let id = EntityId::new(fields[0]).map_err(|_| Error::Parse {
            line,
            message: "empty entity id".into(),
        })?;
        let members = out.entry(fields[1].to_string()).or_default();
        if members.contains(&id) {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                line,
            });
        }
        members.push(id);
    }
    Ok(out)
}

/// Builds role groups from a label file and per-role specifications, then
/// checks that `A`/`B` and `E`/`P` are disjoint.
pub fn read_groups(
    labels_path: Option<&Path>,
    specs: &BTreeMap<Role, GroupSpec>,
) -> Result<BTreeMap<Role, EntityGroup>> {
    let labels = labels_path.map(read_labels).transpose()?;
    let groups = build_groups(labels.as_ref(), specs)?;
    Ok(groups)
}

pub fn build_groups(
    labels: Option<&BTreeMap<String, Vec<EntityId>>>,
    specs: &BTreeMap<Role, GroupSpec>,
) -> Result<BTreeMap<Role, EntityGroup>> {
    let mut groups = BTreeMap::new();
    for (role, spec) in specs {
        let members = match (&spec.label, &spec.ids) {
            (Some(label), None) => {
                let labels = labels.ok_or_else(|| {
                    Error::Config(format!(
                        "group `{}` selects label `{label}` but no label file is configured",
                        spec.name
                    ))
                })?;
                labels.get(label).cloned().unwrap_or_default()
            }
            (None, Some(ids)) => ids.clone(),
            _ => {
                return Err(Error::Config(format!(
                    "group `{}` needs exactly one of `label` or `ids`",
                    spec.name
                )))
            }
        };
        if members.is_empty() {
            return Err(Error::Validation(format!("group `{}` is empty", spec.name)));
        }
        groups.insert(*role, EntityGroup::new(spec.name.clone(), *role, members)?);
    }
    for (x, y) in [(Role::A, Role::B), (Role::E, Role::P)] {
        if let (Some(gx), Some(gy)) = (groups.get(&x), groups.get(&y)) {
            check_disjoint(gx, gy)?;
        }
    }
    Ok(groups)
}

pub fn write_labels(groups: &[&EntityGroup], path: &Path) -> Result<()> {
    let mut out = String::from("id\tlabel\n");
    for g in groups {
        for id in g.members() {
            out.push_str(&format!("{id}\t{}\n", g.name()));
        }
    }
    write_text(path, &out)
}

/// Reads `user<TAB>item<TAB>rank` rows into ranked histories (rank 1 first).
pub fn read_interactions(path: &Path) -> Result<BTreeMap<EntityId, Vec<EntityId>>> {
    let text = read_text(path)?;
    let mut ranked: BTreeMap<EntityId, Vec<(u64, EntityId)>> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if line == 1 && f.first() == Some(&"user_id") {
            continue;
        }
        if f.len() != 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected `user<TAB>item<TAB>rank`, found {} fields", f.len()),
            });
        }
        let rank: u64 = f[2].trim().parse().map_err(|_| Error::Parse {
            line,
            message: format!("rank `{}` is not a non-negative integer", f[2]),
        })?;
        let parse_id = |s: &str| {
            EntityId::new(s).map_err(|_| Error::Parse {
                line,
                message: "empty id".into(),
            })
        };
        ranked
            .entry(parse_id(f[0])?)
            .or_default()
            .push((rank, parse_id(f[1])?));
    }
    Ok(ranked
        .into_iter()
        .map(|(u, mut items)| {
            items.sort();
            (u, items.into_iter().map(|(_, i)| i).collect())
        })
        .collect())
}

/// Writes a log as ranked histories, ranking each user's items by weight.
pub fn write_interactions(log: &InteractionLog, path: &Path) -> Result<()> {
    let mut out = String::from("user_id\titem_id\trank\n");
    for (user, items) in log.ranked_histories() {
        for (r, item) in items.iter().enumerate() {
            out.push_str(&format!("{user}\t{item}\t{}\n", r + 1));
        }
    }
    write_text(path, &out)
}

/// Raw weighted triples, `user<TAB>item<TAB>weight`.
pub fn write_interaction_weights(interactions: &[Interaction], path: &Path) -> Result<()> {
    let mut out = String::from("user_id\titem_id\tweight\n");
    for it in interactions {
        out.push_str(&format!("{}\t{}\t{}\n", it.user, it.item, it.weight));
    }
    write_text(path, &out)
}

pub fn read_shares(path: &Path) -> Result<Vec<EngagementShares>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split('\t').collect();
        if line == 1 && f.first() == Some(&"item_id") {
            continue;
        }
        if f.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected `item<TAB>share`, found {} fields", f.len()),
            });
        }
        let share = parse_number(f[1], line)?;
        if !(0.0..=1.0).contains(&share) {
            return Err(Error::Parse {
                line,
                message: format!("share {share} is outside [0, 1]"),
            });
        }
        out.push(EngagementShares {
            entity: EntityId::new(f[0]).map_err(|_| Error::Parse {
                line,
                message: "empty id".into(),
            })?,
            share_positive: share,
        });
    }
    Ok(out)
}

pub fn write_shares(shares: &[EngagementShares], path: &Path) -> Result<()> {
    let mut out = String::from("item_id\tshare_positive\n");
    for s in shares {
        out.push_str(&format!("{}\t{}\n", s.entity, s.share_positive));
    }
    write_text(path, &out)
}

/// Rounds to 12 significant digits.
pub fn round_significant(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    format!("{x:.11e}").parse().expect("formatted float parses")
}

fn canonical(v: serde_value::Value, path: &str) -> Result<serde_json::Value> {
    use serde_json::Value as J;
    use serde_value::Value as V;
    let float = |x: f64| -> Result<J> {
        if !x.is_finite() {
            return Err(Error::Serialization(format!("non-finite number {x} at `{path}`")));
        }
        Ok(serde_json::Number::from_f64(round_significant(x))
            .map(J::Number)
            .expect("finite"))
    };
    Ok(match v {
        V::Bool(b) => J::Bool(b),
        V::U8(x) => J::from(x),
        V::U16(x) => J::from(x),
        V::U32(x) => J::from(x),
        V::U64(x) => J::from(x),
        V::I8(x) => J::from(x),
        V::I16(x) => J::from(x),
        V::I32(x) => J::from(x),
        V::I64(x) => J::from(x),
        V::F32(x) => float(x as f64)?,
        V::F64(x) => float(x)?,
        V::Char(c) => J::String(c.to_string()),
        V::String(s) => J::String(s),
        V::Unit => J::Null,
        V::Option(None) => J::Null,
        V::Option(Some(b)) => canonical(*b, path)?,
        V::Newtype(b) => canonical(*b, path)?,
        V::Seq(items) => J::Array(
            items
                .into_iter()
                .enumerate()
                .map(|(i, x)| canonical(x, &format!("{path}[{i}]")))
                .collect::<Result<_>>()?,
        ),
        V::Map(m) => {
            let mut out = serde_json::Map::new();
            for (k, x) in m {
                let key = match k {
                    V::String(s) => s,
                    V::Char(c) => c.to_string(),
                    V::U64(n) => n.to_string(),
                    V::I64(n) => n.to_string(),
                    V::U32(n) => n.to_string(),
                    other => {
                        return Err(Error::Serialization(format!(
                            "unsupported map key {other:?} at `{path}`"
                        )))
                    }
                };
                let child = canonical(x, &format!("{path}.{key}"))?;
                out.insert(key, child);
            }
            J::Object(out)
        }
        V::Bytes(b) => J::Array(b.into_iter().map(J::from).collect()),
    })
}

/// Canonical JSON text: keys sorted, floats rounded to 12 significant digits,
/// non-finite numbers refused.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let raw = serde_value::to_value(value).map_err(|e| Error::Serialization(e.to_string()))?;
    let json = canonical(raw, "$")?;
    let mut text = serde_json::to_string_pretty(&json).map_err(|e| Error::Serialization(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_text(path, &to_canonical_json(value)?)
}

pub fn write_string(text: &str, path: &Path) -> Result<()> {
    write_text(path, text)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn minimal_tsv_without_header() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "e.tsv", "u1\t1.0\t0.0\nu2\t0.0\t1.0\n");
        let s = read_embeddings(&p, EmbeddingFormat::Tsv).unwrap();
        assert_eq!((s.dim(), s.len()), (2, 2));
    }

    #[test]
    fn duplicate_id_reports_line() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "e.tsv", "u1\t1.0\t0.0\nu1\t0.0\t1.0\n");
        match read_embeddings(&p, EmbeddingFormat::Tsv) {
            Err(Error::DuplicateId { id, line: 2 }) => assert_eq!(id, "u1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ragged_jsonl_reports_record() {
        let d = tempfile::tempdir().unwrap();
        let p = write(
            d.path(),
            "e.jsonl",
            "{\"id\":\"a\",\"vec\":[1,2,3]}\n{\"id\":\"b\",\"vec\":[1,2]}\n",
        );
        assert!(matches!(
            read_embeddings(&p, EmbeddingFormat::Jsonl),
            Err(Error::RaggedDimension { record: 2, expected: 3, found: 2 })
        ));
    }

    #[test]
    fn non_finite_and_comma_decimals_are_parse_errors() {
        let d = tempfile::tempdir().unwrap();
        for body in ["u1\tNaN\t0\nu2\t1\t1\n", "u1\t1,5\t0\nu2\t1\t1\n", "u1\tinf\t0\nu2\t1\t1\n"] {
            let p = write(d.path(), "e.tsv", body);
            assert!(matches!(
                read_embeddings(&p, EmbeddingFormat::Tsv),
                Err(Error::Parse { line: 1, .. })
            ));
        }
    }

    #[test]
    fn round_trip_both_formats() {
        let d = tempfile::tempdir().unwrap();
        let rows = vec![
            (EntityId::from("x"), vec![0.1 + 0.2, -1e-17, 3.0]),
            (EntityId::from("y"), vec![1.0 / 3.0, 2.5e10, -7.25]),
        ];
        let s = EmbeddingSpace::new("t", "", rows).unwrap();
        for fmt in [EmbeddingFormat::Tsv, EmbeddingFormat::Jsonl] {
            let p = d.path().join("out");
            write_embeddings(&s, &p, fmt).unwrap();
            let back = read_embeddings(&p, fmt).unwrap();
            for (id, v) in s.iter() {
                assert_eq!(back.vector(id).unwrap(), v);
            }
        }
    }

    #[test]
    fn groups_from_labels() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "g.tsv", "u1\tF\nu2\tM\n");
        let specs: BTreeMap<Role, GroupSpec> = [
            (Role::A, GroupSpec { name: "F".into(), label: Some("F".into()), ids: None }),
            (Role::B, GroupSpec { name: "M".into(), label: Some("M".into()), ids: None }),
        ]
        .into();
        let g = read_groups(Some(&p), &specs).unwrap();
        assert_eq!(g[&Role::A].members(), &[EntityId::from("u1")]);
        assert_eq!(g[&Role::B].members(), &[EntityId::from("u2")]);
    }

    #[test]
    fn overlapping_test_sets_are_rejected() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "g.tsv", "p1\tS\np1\tTC\np2\tS\n");
        let specs: BTreeMap<Role, GroupSpec> = [
            (Role::E, GroupSpec { name: "S".into(), label: Some("S".into()), ids: None }),
            (Role::P, GroupSpec { name: "TC".into(), label: Some("TC".into()), ids: None }),
        ]
        .into();
        match read_groups(Some(&p), &specs) {
            Err(Error::Validation(m)) => assert!(m.contains("p1")),
            other => panic!("{other:?}"),
        }
        let empty: BTreeMap<Role, GroupSpec> =
            [(Role::A, GroupSpec { name: "X".into(), label: Some("X".into()), ids: None })].into();
        assert!(matches!(read_groups(Some(&p), &empty), Err(Error::Validation(_))));
    }

    #[test]
    fn canonical_json_rounds_sorts_and_refuses_nan() {
        #[derive(Serialize)]
        struct R {
            zeta: f64,
            alpha: Vec<f64>,
            n: usize,
            none: Option<f64>,
        }
        let r = R { zeta: 0.1 + 0.2, alpha: vec![1.0 / 3.0], n: 3, none: None };
        let text = to_canonical_json(&r).unwrap();
        assert!(text.find("\"alpha\"").unwrap() < text.find("\"zeta\"").unwrap());
        assert!(text.contains("0.3\n") || text.contains("0.3,") || text.contains("0.3"));
        assert!(text.contains("0.333333333333"));
        assert!(!text.contains("0.30000000000000004"));
        let bad = R { zeta: f64::NAN, alpha: vec![], n: 0, none: None };
        match to_canonical_json(&bad) {
            Err(Error::Serialization(m)) => assert!(m.contains("zeta")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shares_and_interactions() {
        let d = tempfile::tempdir().unwrap();
        let p = write(d.path(), "s.tsv", "item_id\tshare_positive\ni1\t0.25\n");
        assert_eq!(read_shares(&p).unwrap()[0].share_positive, 0.25);
        let bad = write(d.path(), "b.tsv", "i1\t1.5\n");
        assert!(read_shares(&bad).is_err());
        let h = write(d.path(), "h.tsv", "u1\ti2\t2\nu1\ti1\t1\nu2\ti3\t1\n");
        let hist = read_interactions(&h).unwrap();
        assert_eq!(hist[&EntityId::from("u1")], vec![EntityId::from("i1"), EntityId::from("i2")]);
    }
}
