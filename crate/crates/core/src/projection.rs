//! PCA projections of embedding subsets and scatter-plot output.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pca::{self, SymMatrix};
use crate::space::{self, EmbeddingSpace, EntityGroup, EntityId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionModel {
    pub mean: Vec<f64>,
    /// Orthonormal, ordered by decreasing explained variance. Each component's
    /// largest-magnitude coordinate is positive.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    /// Share of the total variance per component.
    pub explained_variance_ratio: Vec<f64>,
    pub fit_entity_ids: Vec<EntityId>,
    pub converged: bool,
    pub seed: u64,
}

/// Mean-centred PCA of `entities` by power iteration with deflation.
pub fn fit_projection(
    entities: &EntityGroup,
    space: &EmbeddingSpace,
    n_components: usize,
    seed: u64,
) -> Result<ProjectionModel> {
    if n_components < 2 {
        return Err(Error::Config(format!(
            "at least two components are required, got {n_components}"
        )));
    }
    if entities.len() <= n_components {
        return Err(Error::InsufficientData {
            needed: n_components + 1,
            got: entities.len(),
        });
    }
    let rows = entities.vectors(space)?;
    let dim = space.dim();
    let mean = space::mean_vector(&rows, dim)?;
    let mut cov = SymMatrix::zeros(dim);
    let mut centred = vec![0.0; dim];
    for r in &rows {
        centred.iter_mut().zip(*r).zip(&mean).for_each(|((c, x), m)| *c = x - m);
        cov.add_outer(&centred, 1.0);
    }
    cov.scale(1.0 / rows.len() as f64);
    let total = cov.trace();
    let pairs = pca::leading_eigenpairs(&cov, n_components, crate::rng::derive_seed(seed, "projection"));
    if pairs.len() < n_components {
        return Err(Error::RankDeficient {
            requested: n_components,
            achievable: pairs.len(),
        });
    }
    let converged = pairs.iter().all(|p| p.converged);
    let mut components = Vec::with_capacity(n_components);
    let mut explained_variance = Vec::with_capacity(n_components);
    for p in pairs {
        let mut v = p.vector;
        let lead = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(p.value);
    }
    Ok(ProjectionModel {
        mean,
        explained_variance_ratio: explained_variance.iter().map(|v| v / total).collect(),
        components,
        explained_variance,
        fit_entity_ids: entities.members().to_vec(),
        converged,
        seed,
    })
}

impl ProjectionModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Coordinates `(v − mean) · componentᵢ` of a single vector.
    pub fn coordinates(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        let centred: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok(self
            .components
            .iter()
            .map(|c| space::dot(&centred, c))
            .collect())
    }
}

pub fn project(
    model: &ProjectionModel,
    targets: &EntityGroup,
    space: &EmbeddingSpace,
) -> Result<BTreeMap<EntityId, Vec<f64>>> {
    if space.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: space.dim(),
        });
    }
    targets
        .members()
        .par_iter()
        .map(|id| Ok((id.clone(), model.coordinates(space.vector(id)?)?)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub id: EntityId,
    pub x: f64,
    pub y: f64,
    pub label: String,
}

/// Labelled points from the first two projected coordinates.
pub fn scatter_points(
    coords: &BTreeMap<EntityId, Vec<f64>>,
    labels: &BTreeMap<EntityId, String>,
) -> Result<Vec<ScatterPoint>> {
    coords
        .iter()
        .map(|(id, c)| {
            let label = labels
                .get(id)
                .ok_or_else(|| Error::MissingEntity(id.clone()))?;
            if c.len() < 2 {
                return Err(Error::Validation(format!("`{id}` has fewer than two coordinates")));
            }
            Ok(ScatterPoint {
                id: id.clone(),
                x: c[0],
                y: c[1],
                label: label.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScatterFormat {
    Csv,
    Svg,
}

pub const SVG_WIDTH: f64 = 800.0;
pub const SVG_HEIGHT: f64 = 600.0;
const PALETTE: [&str; 6] = ["#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

pub fn emit_scatter(points: &[ScatterPoint], path: &Path, format: ScatterFormat) -> Result<()> {
    if let Some(p) = points.iter().find(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::Validation(format!("`{}` has non-finite coordinates", p.id)));
    }
    let mut sorted: Vec<&ScatterPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let body = match format {
        ScatterFormat::Csv => scatter_csv(&sorted)?,
        ScatterFormat::Svg => scatter_svg(&sorted),
    };
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn scatter_csv(points: &[&ScatterPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let ser = |e: csv::Error| Error::Serialization(e.to_string());
    w.write_record(["id", "x", "y", "label"]).map_err(ser)?;
    for p in points {
        w.write_record([p.id.as_str(), &p.x.to_string(), &p.y.to_string(), &p.label])
            .map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if rec.len() != 4 {
            return Err(Error::Parse { line, message: format!("expected 4 fields, found {}", rec.len()) });
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse { line, message: format!("bad coordinate `{s}`: {e}") })
        };
        out.push(ScatterPoint {
            id: EntityId::new(&rec[0])?,
            x: num(&rec[1])?,
            y: num(&rec[2])?,
            label: rec[3].to_string(),
        });
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn scatter_svg(points: &[&ScatterPoint]) -> String {
    let labels: BTreeSet<&str> = points.iter().map(|p| p.label.as_str()).collect();
    let class: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let (margin, legend_w) = (60.0, 140.0);
    let plot_w = SVG_WIDTH - 2.0 * margin - legend_w;
    let plot_h = SVG_HEIGHT - 2.0 * margin;
    let range = |f: fn(&ScatterPoint) -> f64| {
        let lo = points.iter().map(|p| f(p)).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| f(p)).fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (-1.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = range(|p| p.x);
    let (y0, y1) = range(|p| p.y);
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| SVG_HEIGHT - margin - (y - y0) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
    );
    s.push_str("<style>\n");
    for (label, i) in &class {
        let _ = writeln!(
            s,
            ".c{i} {{ fill: {}; fill-opacity: 0.7; }} /* {} */",
            PALETTE[i % PALETTE.len()],
            escape(label).replace("*/", "* /")
        );
    }
    s.push_str("</style>\n");
    let _ = writeln!(
        s,
        r##"<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14">PC1</text>"#,
        margin + plot_w / 2.0,
        SVG_HEIGHT - margin / 3.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14" transform="rotate(-90 {:.1} {:.1})">PC2</text>"#,
        margin / 3.0,
        margin + plot_h / 2.0,
        margin / 3.0,
        margin + plot_h / 2.0
    );
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.3}" cy="{:.3}" r="3" class="c{}"><title>{}</title></circle>"#,
            sx(p.x),
            sy(p.y),
            class[p.label.as_str()],
            escape(p.id.as_str())
        );
    }
    let lx = SVG_WIDTH - legend_w - margin / 2.0 + 20.0;
    for (row, (label, i)) in class.iter().enumerate() {
        let ly = margin + 20.0 * row as f64;
        let _ = writeln!(
            s,
            r#"<circle cx="{lx:.1}" cy="{ly:.1}" r="5" class="c{i}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            lx + 10.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Role;
    use approx::assert_abs_diff_eq;

    fn id(s: &str) -> EntityId {
        EntityId::from(s)
    }

    fn line_space() -> (EmbeddingSpace, EntityGroup) {
        let rows: Vec<(EntityId, Vec<f64>)> = (0..10)
            .map(|i| {
                let t = i as f64 - 4.5;
                (id(&format!("x{i}")), vec![1.0 + t, 2.0 + 2.0 * t, 3.0 - 2.0 * t])
            })
            .collect();
        let ids: Vec<EntityId> = rows.iter().map(|r| r.0.clone()).collect();
        (
            EmbeddingSpace::new("line", "", rows).unwrap(),
            EntityGroup::new("all", Role::Unassigned, ids).unwrap(),
        )
    }

    #[test]
    fn points_on_a_line_need_one_component() {
        let (s, g) = line_space();
        match fit_projection(&g, &s, 2, 0) {
            Err(Error::RankDeficient { requested: 2, achievable: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn projection_basics() {
        let rows = vec![
            (id("a"), vec![2.0, 0.0, 0.1]),
            (id("b"), vec![-2.0, 0.0, -0.1]),
            (id("c"), vec![0.0, 1.0, 0.0]),
            (id("d"), vec![0.0, -1.0, 0.0]),
        ];
        let s = EmbeddingSpace::new("t", "", rows).unwrap();
        let g = EntityGroup::new("all", Role::Unassigned, s.ids().to_vec()).unwrap();
        let m = fit_projection(&g, &s, 2, 1).unwrap();
        assert!(m.explained_variance[0] >= m.explained_variance[1]);
        for (i, u) in m.components.iter().enumerate() {
            for (j, v) in m.components.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(space::dot(u, v), want, epsilon = 1e-8);
            }
        }
        assert_eq!(m.coordinates(&m.mean.clone()).unwrap(), vec![0.0, 0.0]);
        let shifted: Vec<f64> = m.mean.iter().zip(&m.components[0]).map(|(a, b)| a + b).collect();
        let c = m.coordinates(&shifted).unwrap();
        assert_abs_diff_eq!(c[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[1], 0.0, epsilon = 1e-12);
        assert!(m.coordinates(&[1.0]).is_err());
    }

    #[test]
    fn svg_has_one_circle_per_point_and_skips_empty_labels() {
        let pts: Vec<ScatterPoint> = [("d", 1.0, 1.0, "A"), ("a", 0.0, 0.0, "A"), ("c", 2.0, 1.0, "B"), ("b", 1.0, 3.0, "B")]
            .iter()
            .map(|(i, x, y, l)| ScatterPoint { id: id(i), x: *x, y: *y, label: l.to_string() })
            .collect();
        let refs: Vec<&ScatterPoint> = pts.iter().collect();
        let svg = scatter_svg(&refs);
        assert_eq!(svg.matches("<title>").count(), 4);
        assert_eq!(svg.matches(".c0 ").count() + svg.matches(".c1 ").count(), 2);
        let only_a: Vec<&ScatterPoint> = pts.iter().filter(|p| p.label == "A").collect();
        let svg = scatter_svg(&only_a);
        assert!(!svg.contains(">B</text>"));
        assert!(svg.contains(">A</text>"));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let pts = vec![
            ScatterPoint { id: id("x"), x: 0.1 + 0.2, y: -1e-300, label: "A,1".into() },
            ScatterPoint { id: id("y"), x: 3.0, y: 1.0 / 3.0, label: "B".into() },
        ];
        emit_scatter(&pts, &path, ScatterFormat::Csv).unwrap();
        assert_eq!(read_scatter_csv(&path).unwrap(), pts);
    }
}
