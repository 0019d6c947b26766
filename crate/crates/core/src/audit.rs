//! The audit pipeline: build and validate bias directions, compute the
//! association metrics, run the significance tests, optionally score the
//! classifier scenarios and projections, and collect everything into a
//! self-contained report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::directions::{
    centroid_difference_direction, centroid_probe_direction, most_biased_entities,
    paired_pca_direction, probe_direction, random_pairs, train_linear_probe, Alignment,
    BiasDirection, DirectionMethod, LinearProbe, ProbeParams,
};
use crate::error::{Error, Result, StageExt};
use crate::io::{self, EmbeddingFormat, GroupSpec};
use crate::metrics::{eaa_summary, MetricBundle};
use crate::projection::{self, ScatterFormat};
use crate::rng::derive_seed;
use crate::scenarios::{
    self, decile_breakdown, history_centroid_features, misclassified_centroid_analysis,
    predict_labels, stereotype_scores, EngagementShares, Label, MisclassifiedCell, ScenarioKind,
    ScenarioResult,
};
use crate::significance::{
    permutation_test_deaa, permutation_test_geaa, permutation_test_rripa, rripa_subsample_test,
    validate_direction, Alternative, PermutationOptions, PermutationResult, SubsampleRankSum,
    ValidationOptions,
};
use crate::space::{self, EmbeddingSpace, EntityGroup, EntityId, Role};
use crate::stats::bonferroni_alpha;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status of an audit that ran cleanly and flagged nothing.
pub const EXIT_CLEAN: i32 = 0;
/// Exit status of an audit that ran cleanly and flagged bias.
pub const EXIT_FLAGGED: i32 = 10;
pub const EXIT_ERROR: i32 = 1;

/// Number of random cross-group pairs used for the paired-PCA direction.
pub const DEFAULT_PCA_PAIRS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSource {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<EmbeddingFormat>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    Bonferroni,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Eaa,
    Rripa,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RripaTest {
    #[default]
    Permutation,
    SubsampleRankSum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Entities scored by the user-trained probe; defaults to `E ∪ P`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<GroupSpec>,
    /// `item<TAB>share` file for the decile breakdown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shares: Option<PathBuf>,
    #[serde(default = "default_deciles")]
    pub deciles: Vec<f64>,
    /// `user<TAB>item<TAB>rank` file for the history-centroid scenario.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interactions: Option<PathBuf>,
    #[serde(default = "default_history_k")]
    pub history_k: usize,
    /// Label each test group is stereotypically expected to receive.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub stereotypes: BTreeMap<Role, Label>,
}

fn default_deciles() -> Vec<f64> {
    scenarios::DEFAULT_DECILES.to_vec()
}

fn default_history_k() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Most-biased entities taken from each of `A` and `B` to fit the basis.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_components")]
    pub n_components: usize,
    /// Directory for scatter files; nothing is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_scatter_formats")]
    pub formats: Vec<ScatterFormat>,
    #[serde(default)]
    pub basis: ProjectionBasis,
}

/// Whether every variant gets its own principal basis or all variants are
/// projected into the basis fitted on the first variant (in name order).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionBasis {
    #[default]
    PerVariant,
    Shared,
}

fn default_top_k() -> usize {
    200
}

fn default_components() -> usize {
    2
}

fn default_scatter_formats() -> Vec<ScatterFormat> {
    vec![ScatterFormat::Csv, ScatterFormat::Svg]
}

/// One audit run, as read from a JSON file. Relative paths are resolved
/// against the directory containing the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub attribute_name: String,
    pub seed: u64,
    /// Model variant name to embedding file.
    pub variants: BTreeMap<String, EmbeddingSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    pub groups: BTreeMap<Role, GroupSpec>,
    #[serde(default = "default_directions")]
    pub directions: Vec<DirectionMethod>,
    /// Also build a probe direction from the `k` most-biased members of each group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csvc_k: Option<usize>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub correction: Correction,
    #[serde(default = "default_n_random")]
    pub n_random: usize,
    /// Share of `A` and `B` held out from direction fitting and used for validation.
    #[serde(default = "default_holdout")]
    pub validation_holdout: f64,
    #[serde(default)]
    pub probe: ProbeParams,
    /// Random cross-group pairs for the paired-PCA direction; defaults to 1000.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca_pairs: Option<usize>,
    #[serde(default)]
    pub rripa_test: RripaTest,
    /// Sidedness of the metric permutation tests.
    #[serde(default)]
    pub alternative: Alternative,
    #[serde(default)]
    pub keep_null_samples: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionConfig>,
}

fn default_directions() -> Vec<DirectionMethod> {
    vec![
        DirectionMethod::CentroidDifference,
        DirectionMethod::LinearProbe,
        DirectionMethod::PairedPca,
    ]
}

fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Eaa, MetricKind::Rripa]
}

fn default_permutations() -> usize {
    10_000
}

fn default_alpha() -> f64 {
    0.05
}

fn default_n_random() -> usize {
    crate::significance::DEFAULT_N_RANDOM
}

fn default_holdout() -> f64 {
    0.3
}

impl AuditConfig {
    /// A config for in-memory inputs, with every option at its default.
    pub fn new(attribute_name: impl Into<String>, seed: u64) -> Self {
        AuditConfig {
            attribute_name: attribute_name.into(),
            seed,
            variants: BTreeMap::new(),
            labels: None,
            groups: BTreeMap::new(),
            directions: default_directions(),
            csvc_k: None,
            metrics: default_metrics(),
            permutations: default_permutations(),
            alpha: default_alpha(),
            correction: Correction::default(),
            n_random: default_n_random(),
            validation_holdout: default_holdout(),
            probe: ProbeParams::default(),
            pca_pairs: None,
            rripa_test: RripaTest::default(),
            alternative: Alternative::default(),
            keep_null_samples: false,
            scenarios: None,
            projection: None,
        }
    }

    /// Checks the numeric options and the group definitions.
    pub fn validate(&self) -> Result<()> {
        self.validate_options()?;
        for role in [Role::A, Role::B, Role::E, Role::P] {
            if !self.groups.contains_key(&role) {
                return Err(Error::Config(format!("group `{role}` is not defined")));
            }
        }
        if self.groups.contains_key(&Role::Unassigned) {
            return Err(Error::Config("groups may only be defined for roles A, B, E and P".into()));
        }
        Ok(())
    }

    /// Checks everything except the group definitions, which in-memory
    /// inputs supply directly.
    pub fn validate_options(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.permutations < 100 {
            return bad(format!("permutations must be at least 100, got {}", self.permutations));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return bad(format!("alpha must lie in (0, 0.5), got {}", self.alpha));
        }
        if self.n_random < 100 {
            return bad(format!("n_random must be at least 100, got {}", self.n_random));
        }
        if !(0.0..0.9).contains(&self.validation_holdout) {
            return bad(format!(
                "validation_holdout must lie in [0, 0.9), got {}",
                self.validation_holdout
            ));
        }
        if self.directions.is_empty() && self.csvc_k.is_none() {
            return bad("at least one direction method is required".into());
        }
        if self.metrics.is_empty() {
            return bad("at least one metric is required".into());
        }
        Ok(())
    }

    /// Resolves relative output paths against `base_dir`. Input paths are
    /// resolved when the inputs are loaded.
    pub fn resolve_outputs(&mut self, base_dir: &Path) {
        if let Some(dir) = self.projection.as_mut().and_then(|p| p.output_dir.as_mut()) {
            *dir = resolve(base_dir, dir);
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: AuditConfig = io::read_json(path)?;
        config.validate()?;
        Ok(config)
    }

    fn direction_count(&self) -> usize {
        let mut methods = self.directions.clone();
        methods.sort();
        methods.dedup();
        methods.len() + self.csvc_k.is_some() as usize
    }

    /// Number of significance tests per variant: three validation tests per
    /// direction, DEAA and both GEAA tests, and one R-RIPA test per direction.
    pub fn test_count(&self) -> usize {
        let n_dirs = self.direction_count();
        let mut n = 3 * n_dirs;
        if self.metrics.contains(&MetricKind::Eaa) {
            n += 3;
        }
        if self.metrics.contains(&MetricKind::Rripa) {
            n += n_dirs;
        }
        n
    }

    pub fn alpha_corrected(&self) -> f64 {
        match self.correction {
            Correction::Bonferroni => bonferroni_alpha(self.alpha, self.test_count()),
            Correction::None => self.alpha,
        }
    }
}

/// Everything an audit reads from disk, already parsed.
#[derive(Clone, Debug, Default)]
pub struct AuditInputs {
    pub variants: Vec<(String, EmbeddingSpace)>,
    pub groups: BTreeMap<Role, EntityGroup>,
    pub targets: Option<EntityGroup>,
    pub shares: Option<Vec<EngagementShares>>,
    pub histories: Option<BTreeMap<EntityId, Vec<EntityId>>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl AuditInputs {
    pub fn load(config: &AuditConfig, base_dir: &Path) -> Result<Self> {
        let mut variants = Vec::new();
        for (name, src) in &config.variants {
            let path = resolve(base_dir, &src.path);
            let format = src.format.unwrap_or_else(|| EmbeddingFormat::from_path(&path));
            variants.push((name.clone(), io::read_embeddings(&path, format)?));
        }
        if variants.is_empty() {
            return Err(Error::Config("no embedding variants configured".into()));
        }
        let labels = config
            .labels
            .as_ref()
            .map(|p| io::read_labels(&resolve(base_dir, p)))
            .transpose()?;
        let groups = io::build_groups(labels.as_ref(), &config.groups)?;
        let mut inputs = AuditInputs {
            variants,
            groups,
            ..Default::default()
        };
        if let Some(sc) = &config.scenarios {
            if let Some(spec) = &sc.targets {
                let built = io::build_groups(labels.as_ref(), &[(Role::Unassigned, spec.clone())].into())?;
                inputs.targets = built.into_values().next();
            }
            if let Some(p) = &sc.shares {
                inputs.shares = Some(io::read_shares(&resolve(base_dir, p))?);
            }
            if let Some(p) = &sc.interactions {
                inputs.histories = Some(io::read_interactions(&resolve(base_dir, p))?);
            }
        }
        Ok(inputs)
    }

    fn group(&self, role: Role) -> Result<&EntityGroup> {
        self.groups
            .get(&role)
            .ok_or_else(|| Error::Config(format!("group `{role}` is not defined")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub name: String,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub intercept: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ProbeSummary {
    fn of(p: &LinearProbe) -> Self {
        ProbeSummary {
            train_accuracy: p.train_accuracy,
            test_accuracy: p.test_accuracy,
            intercept: p.intercept,
            n_train: p.training_ids.len(),
            n_test: p.test_ids.len(),
            converged: p.converged,
            warnings: p.warnings.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionReport {
    pub direction: BiasDirection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EaaReport {
    pub geaa_e: f64,
    pub geaa_p: f64,
    pub deaa: f64,
    pub effect_size: f64,
    pub mean_eaa_e: f64,
    pub mean_eaa_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub n_fit: usize,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// |cos| between the first component and the centroid direction.
    pub pc1_centroid_cosine: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub entities: usize,
    pub dim: usize,
    pub directions: Vec<DirectionReport>,
    /// Pairwise cosines between the directions, keyed by label.
    pub direction_cosines: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eaa: Option<EaaReport>,
    /// Metric bundle per direction label.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, MetricBundle>,
    pub permutation_tests: BTreeMap<String, PermutationResult>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rripa_rank_sum: BTreeMap<String, SubsampleRankSum>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<ScenarioResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub misclassified: Vec<MisclassifiedCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<ProjectionSummary>,
}

/// One flagged (or not) significance test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub variant: String,
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub threshold: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssociationReport {
    pub toolkit_version: String,
    pub seed: u64,
    pub config: AuditConfig,
    pub groups: BTreeMap<Role, GroupSummary>,
    pub n_tests: usize,
    pub alpha: f64,
    pub alpha_corrected: f64,
    pub variants: Vec<VariantReport>,
    pub flags: Vec<Flag>,
    pub bias_flagged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AssociationReport {
    pub fn exit_code(&self) -> i32 {
        if self.bias_flagged {
            EXIT_FLAGGED
        } else {
            EXIT_CLEAN
        }
    }

    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// Loads the config and its inputs, then runs the audit. Errors are wrapped
/// with the name of the stage that failed.
pub fn run_audit_file(path: &Path) -> Result<AssociationReport> {
    let config = AuditConfig::load(path).stage("config")?;
    run_audit_with_base(&config, path.parent().unwrap_or(Path::new(".")))
}

pub fn run_audit_with_base(config: &AuditConfig, base_dir: &Path) -> Result<AssociationReport> {
    config.validate().stage("config")?;
    let inputs = AuditInputs::load(config, base_dir).stage("ingest")?;
    let mut config = config.clone();
    config.resolve_outputs(base_dir);
    run_audit(&config, &inputs)
}

/// Direction sets built for one variant.
pub struct BuiltDirections {
    pub directions: Vec<DirectionReport>,
    pub probe: Option<LinearProbe>,
    pub fit: (EntityGroup, EntityGroup),
    pub holdout: (EntityGroup, EntityGroup),
}

/// Seeded split of a group into fitting and validation members.
pub fn holdout_split(group: &EntityGroup, fraction: f64, seed: u64) -> Result<(EntityGroup, EntityGroup)> {
    if fraction == 0.0 {
        return Ok((group.clone(), group.clone()));
    }
    let (fit, held) = crate::directions::stratified_split(group, 1.0 - fraction, seed);
    Ok((
        EntityGroup::new(format!("{}-fit", group.name()), group.role(), fit)?,
        EntityGroup::new(format!("{}-holdout", group.name()), group.role(), held)?,
    ))
}

pub fn build_directions(
    config: &AuditConfig,
    a: &EntityGroup,
    b: &EntityGroup,
    space: &EmbeddingSpace,
) -> Result<BuiltDirections> {
    let seed = config.seed;
    let split_seed = derive_seed(seed, "holdout");
    let (a_fit, a_hold) = holdout_split(a, config.validation_holdout, split_seed)?;
    let (b_fit, b_hold) = holdout_split(b, config.validation_holdout, split_seed)?;
    let probe_params = ProbeParams {
        seed: derive_seed(seed, "probe"),
        ..config.probe.clone()
    };
    let mut directions = Vec::new();
    let mut probe = None;
    let mut methods = config.directions.clone();
    methods.sort();
    methods.dedup();
    let cd = centroid_difference_direction(&a_fit, &b_fit, space)?;
    for m in methods {
        match m {
            DirectionMethod::CentroidDifference => directions.push(DirectionReport {
                direction: cd.clone(),
                probe: None,
            }),
            DirectionMethod::LinearProbe => {
                let p = train_linear_probe(&a_fit, &b_fit, space, &probe_params)?;
                directions.push(DirectionReport {
                    direction: probe_direction(&p)?,
                    probe: Some(ProbeSummary::of(&p)),
                });
                probe = Some(p);
            }
            DirectionMethod::PairedPca => {
                let n = config.pca_pairs.unwrap_or(DEFAULT_PCA_PAIRS);
                let pairs = random_pairs(&a_fit, &b_fit, n, derive_seed(seed, "pca-pairs"));
                directions.push(DirectionReport {
                    direction: paired_pca_direction(&pairs, space, seed)?,
                    probe: None,
                });
            }
        }
    }
    if let Some(k) = config.csvc_k {
        let (d, p) = centroid_probe_direction(&a_fit, &b_fit, space, &cd, k, &probe_params)?;
        directions.push(DirectionReport {
            direction: d,
            probe: Some(ProbeSummary::of(&p)),
        });
    }
    Ok(BuiltDirections {
        directions,
        probe,
        fit: (a_fit, b_fit),
        holdout: (a_hold, b_hold),
    })
}

pub fn run_audit(config: &AuditConfig, inputs: &AuditInputs) -> Result<AssociationReport> {
    config.validate_options().stage("config")?;
    let a = inputs.group(Role::A).stage("ingest")?;
    let b = inputs.group(Role::B).stage("ingest")?;
    let e = inputs.group(Role::E).stage("ingest")?;
    let p = inputs.group(Role::P).stage("ingest")?;
    let alpha_corrected = config.alpha_corrected();
    let mut variants = Vec::new();
    let mut flags = Vec::new();
    let mut shared_basis = None;
    for (name, space) in &inputs.variants {
        let (report, vflags) =
            audit_variant(config, inputs, name, space, [a, b, e, p], alpha_corrected, &mut shared_basis)?;
        variants.push(report);
        flags.extend(vflags);
    }
    let bias_flagged = flags.iter().any(|f| f.flagged);
    let mut warnings = Vec::new();
    let min_p = 1.0 / (config.permutations as f64 + 1.0);
    if min_p >= alpha_corrected {
        warnings.push(format!(
            "with {} permutations the smallest resampled p-value is {min_p:.2e}, which cannot fall below the corrected alpha {alpha_corrected:.2e}",
            config.permutations
        ));
    }
    Ok(AssociationReport {
        toolkit_version: VERSION.to_string(),
        seed: config.seed,
        config: config.clone(),
        groups: inputs
            .groups
            .iter()
            .map(|(r, g)| {
                (
                    *r,
                    GroupSummary {
                        name: g.name().to_string(),
                        size: g.len(),
                    },
                )
            })
            .collect(),
        n_tests: config.test_count(),
        alpha: config.alpha,
        alpha_corrected,
        variants,
        flags,
        bias_flagged,
        warnings,
    })
}

fn audit_variant(
    config: &AuditConfig,
    inputs: &AuditInputs,
    name: &str,
    space: &EmbeddingSpace,
    [a, b, e, p]: [&EntityGroup; 4],
    alpha_corrected: f64,
    shared_basis: &mut Option<projection::ProjectionModel>,
) -> Result<(VariantReport, Vec<Flag>)> {
    let seed = config.seed;
    for g in [a, b, e, p] {
        g.check_in(space).stage("ingest")?;
    }
    let built = build_directions(config, a, b, space).stage("directions")?;
    let mut directions = built.directions;

    let mut direction_cosines = BTreeMap::new();
    for x in &directions {
        let row: BTreeMap<String, f64> = directions
            .iter()
            .map(|y| (y.direction.label.clone(), space::dot(&x.direction.vector, &y.direction.vector)))
            .collect();
        direction_cosines.insert(x.direction.label.clone(), row);
    }

    let (a_hold, b_hold) = &built.holdout;
    for d in directions.iter_mut() {
        let opts = ValidationOptions {
            n_random: config.n_random,
            seed: derive_seed(seed, &format!("validation:{}", d.direction.label)),
            alpha_corrected,
        };
        let v = validate_direction(&d.direction, a_hold, b_hold, space, &opts).stage("validation")?;
        d.direction.validation = Some(v);
    }

    let perm = |purpose: &str| PermutationOptions {
        n_perm: config.permutations,
        seed: derive_seed(seed, purpose),
        keep_null: config.keep_null_samples,
        alternative: config.alternative,
        ..Default::default()
    };
    let mut flags = Vec::new();
    let mut flag = |test: String, r: &PermutationResult| {
        flags.push(Flag {
            variant: name.to_string(),
            test,
            statistic: r.observed,
            p_value: r.p_value,
            threshold: alpha_corrected,
            flagged: r.p_value < alpha_corrected,
        })
    };

    let mut eaa = None;
    let mut metrics = BTreeMap::new();
    let mut permutation_tests = BTreeMap::new();
    let mut rripa_rank_sum = BTreeMap::new();
    let summary = eaa_summary(e, p, a, b, space).stage("metrics")?;
    if config.metrics.contains(&MetricKind::Eaa) {
        eaa = Some(EaaReport {
            geaa_e: summary.geaa_e,
            geaa_p: summary.geaa_p,
            deaa: summary.deaa,
            effect_size: summary.effect_size,
            mean_eaa_e: summary.mean_eaa_e,
            mean_eaa_p: summary.mean_eaa_p,
        });
        let deaa = permutation_test_deaa(e, p, a, b, space, &perm("perm:deaa")).stage("permutation")?;
        let ge = permutation_test_geaa(e, a, b, space, &perm("perm:geaa_e")).stage("permutation")?;
        let gp = permutation_test_geaa(p, a, b, space, &perm("perm:geaa_p")).stage("permutation")?;
        for (key, r) in [("deaa", deaa), ("geaa_e", ge), ("geaa_p", gp)] {
            flag(key.to_string(), &r);
            permutation_tests.insert(key.to_string(), r);
        }
    }
    if config.metrics.contains(&MetricKind::Rripa) {
        for d in &directions {
            let label = &d.direction.label;
            let bundle = MetricBundle::from_parts(&summary, e, p, &d.direction, space, false).stage("metrics")?;
            metrics.insert(label.clone(), bundle);
            let key = format!("rripa:{label}");
            let (observed, p_value) = match config.rripa_test {
                RripaTest::Permutation => {
                    let r = permutation_test_rripa(e, p, &d.direction, space, &perm(&key)).stage("permutation")?;
                    let out = (r.observed, r.p_value);
                    permutation_tests.insert(key.clone(), r);
                    out
                }
                RripaTest::SubsampleRankSum => {
                    let r = rripa_subsample_test(e, p, &d.direction, space, None, derive_seed(seed, &key))
                        .stage("permutation")?;
                    let out = (metrics[label].rripa_differential, r.p_value);
                    rripa_rank_sum.insert(key.clone(), r);
                    out
                }
            };
            let validated = d.direction.validation.as_ref().is_some_and(|v| v.passed);
            flags.push(Flag {
                variant: name.to_string(),
                test: key,
                statistic: observed,
                p_value,
                threshold: alpha_corrected,
                flagged: validated && p_value < alpha_corrected,
            });
        }
    }

    let (scenarios, misclassified) = match &config.scenarios {
        Some(sc) => run_scenarios(sc, inputs, space, built.probe.as_ref(), &built.fit, [a, b, e, p], config)
            .stage("scenarios")?,
        None => (Vec::new(), Vec::new()),
    };

    let projection = match &config.projection {
        Some(pc) => Some(
            run_projection(pc, name, space, [a, b, e, p], &built.fit, seed, shared_basis).stage("projection")?,
        ),
        None => None,
    };

    Ok((
        VariantReport {
            name: name.to_string(),
            entities: space.len(),
            dim: space.dim(),
            directions,
            direction_cosines,
            eaa,
            metrics,
            permutation_tests,
            rripa_rank_sum,
            scenarios,
            misclassified,
            projection,
        },
        flags,
    ))
}

fn run_scenarios(
    sc: &ScenarioConfig,
    inputs: &AuditInputs,
    space: &EmbeddingSpace,
    probe: Option<&LinearProbe>,
    fit: &(EntityGroup, EntityGroup),
    [a, b, e, p]: [&EntityGroup; 4],
    config: &AuditConfig,
) -> Result<(Vec<ScenarioResult>, Vec<MisclassifiedCell>)> {
    let trained;
    let probe = match probe {
        Some(pr) => pr,
        None => {
            let params = ProbeParams {
                seed: derive_seed(config.seed, "probe"),
                ..config.probe.clone()
            };
            trained = train_linear_probe(&fit.0, &fit.1, space, &params)?;
            &trained
        }
    };
    let mut results = Vec::new();
    let targets = match &inputs.targets {
        Some(t) => t.clone(),
        None => {
            let members = e.members().iter().chain(p.members()).cloned().collect();
            EntityGroup::new(format!("{}+{}", e.name(), p.name()), Role::Unassigned, members)?
        }
    };
    let predictions = predict_labels(probe, &targets, space)?;

    let truth: Vec<(&EntityGroup, Label)> = [(Role::E, e), (Role::P, p)]
        .into_iter()
        .filter_map(|(r, g)| sc.stereotypes.get(&r).map(|l| (g, *l)))
        .collect();
    let mut majority = if truth.is_empty() {
        None
    } else {
        Some(stereotype_scores(ScenarioKind::MajorityListener, &predictions, &truth)?)
    };
    if let Some(shares) = &inputs.shares {
        let table = decile_breakdown(&predictions, shares, &sc.deciles)?;
        let r = majority.get_or_insert_with(|| ScenarioResult {
            scenario: ScenarioKind::MajorityListener,
            groups: Vec::new(),
            confusion: [[0; 2]; 2],
            decile_table: None,
            comparison_p_values: BTreeMap::new(),
        });
        r.decile_table = Some(table);
    }
    let mut misclassified = Vec::new();
    if !truth.is_empty() {
        let expected: BTreeMap<EntityId, Label> = truth
            .iter()
            .flat_map(|(g, l)| g.members().iter().map(move |id| (id.clone(), *l)))
            .collect();
        let mut references = vec![
            (a.name().to_string(), space::centroid(a, space)?),
            (b.name().to_string(), space::centroid(b, space)?),
        ];
        if let Some(h) = &inputs.histories {
            for g in [a, b] {
                let subset: BTreeMap<EntityId, Vec<EntityId>> = g
                    .members()
                    .iter()
                    .filter_map(|u| h.get(u).map(|items| (u.clone(), items.clone())))
                    .collect();
                if subset.len() >= 2 {
                    if let Ok(f) = history_centroid_features(&subset, sc.history_k, space) {
                        let ids = f.space.ids().to_vec();
                        let grp = EntityGroup::new("h", Role::Unassigned, ids)?;
                        references.push((format!("{}-history", g.name()), space::centroid(&grp, &f.space)?));
                    }
                }
            }
        }
        misclassified = misclassified_centroid_analysis(&predictions, &expected, &references, space)?.cells;
    }
    if let Some(r) = majority {
        results.push(r);
    }

    if let Some(h) = &inputs.histories {
        let users: BTreeMap<EntityId, Vec<EntityId>> = h
            .iter()
            .filter(|(u, _)| a.contains(u) || b.contains(u))
            .map(|(u, items)| (u.clone(), items.clone()))
            .collect();
        let features = history_centroid_features(&users, sc.history_k, space)?;
        let keep = |g: &EntityGroup| -> Result<EntityGroup> {
            let members: Vec<EntityId> = g
                .members()
                .iter()
                .filter(|id| features.space.contains(id))
                .cloned()
                .collect();
            EntityGroup::new(g.name(), g.role(), members)
        };
        let (ha, hb) = (keep(a)?, keep(b)?);
        let all = EntityGroup::new("users", Role::Unassigned, features.space.ids().to_vec())?;
        let preds = predict_labels(probe, &all, &features.space)?;
        results.push(stereotype_scores(
            ScenarioKind::HistoryCentroid,
            &preds,
            &[(&ha, Label::A), (&hb, Label::B)],
        )?);
    }
    Ok((results, misclassified))
}

fn run_projection(
    pc: &ProjectionConfig,
    variant: &str,
    space: &EmbeddingSpace,
    [a, b, e, p]: [&EntityGroup; 4],
    fit: &(EntityGroup, EntityGroup),
    seed: u64,
    shared: &mut Option<projection::ProjectionModel>,
) -> Result<ProjectionSummary> {
    let cd = centroid_difference_direction(&fit.0, &fit.1, space)?;
    let (model, top_a, top_b) = match (pc.basis, shared.as_ref()) {
        (ProjectionBasis::Shared, Some(model)) => {
            let side = |g: &EntityGroup, name: &str| {
                let ids = model.fit_entity_ids.iter().filter(|id| g.contains(id)).cloned().collect();
                EntityGroup::new(name, g.role(), ids)
            };
            let top_a = side(a, "top-biased A")?;
            let top_b = side(b, "top-biased B")?;
            (model.clone(), top_a, top_b)
        }
        _ => {
            let k = pc.top_k.min(a.len()).min(b.len());
            let top_a = most_biased_entities(a, &cd, space, k, Alignment::Positive)?;
            let top_b = most_biased_entities(b, &cd, space, k, Alignment::Negative)?;
            let members: Vec<EntityId> = top_a.members().iter().chain(top_b.members()).cloned().collect();
            let fit_group = EntityGroup::new("top-biased", Role::Unassigned, members)?;
            let model =
                projection::fit_projection(&fit_group, space, pc.n_components, derive_seed(seed, "projection"))?;
            if pc.basis == ProjectionBasis::Shared {
                *shared = Some(model.clone());
            }
            (model, top_a, top_b)
        }
    };
    let mut files = Vec::new();
    if let Some(dir) = &pc.output_dir {
        let mut labels = BTreeMap::new();
        let mut coords = BTreeMap::new();
        for g in [&top_a, &top_b, e, p] {
            let label = if g.role() == Role::A {
                a.name()
            } else if g.role() == Role::B {
                b.name()
            } else {
                g.name()
            };
            for id in g.members() {
                labels.insert(id.clone(), label.to_string());
            }
            coords.extend(projection::project(&model, g, space)?);
        }
        let points = projection::scatter_points(&coords, &labels)?;
        std::fs::create_dir_all(dir).map_err(|err| Error::Io {
            path: dir.clone(),
            source: err,
        })?;
        for fmt in &pc.formats {
            let ext = match fmt {
                ScatterFormat::Csv => "csv",
                ScatterFormat::Svg => "svg",
            };
            let path = dir.join(format!("{variant}-projection.{ext}"));
            projection::emit_scatter(&points, &path, *fmt)?;
            files.push(path.display().to_string());
        }
    }
    Ok(ProjectionSummary {
        n_fit: model.fit_entity_ids.len(),
        pc1_centroid_cosine: space::dot(&model.components[0], &cd.vector).abs(),
        explained_variance: model.explained_variance,
        explained_variance_ratio: model.explained_variance_ratio,
        converged: model.converged,
        files,
    })
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

/// Markdown rendering of a report.
pub fn render_markdown(r: &AssociationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Attribute association audit: {}\n", r.config.attribute_name);
    let _ = writeln!(
        s,
        "Toolkit {} | seed {} | alpha {} | {} tests | corrected alpha {:.6}\n",
        r.toolkit_version, r.seed, r.alpha, r.n_tests, r.alpha_corrected
    );
    let _ = writeln!(s, "| role | group | size |\n|---|---|---|");
    for (role, g) in &r.groups {
        let _ = writeln!(s, "| {role} | {} | {} |", g.name, g.size);
    }
    s.push('\n');
    for v in &r.variants {
        let _ = writeln!(s, "## Variant `{}` ({} entities, dim {})\n", v.name, v.entities, v.dim);
        let _ = writeln!(s, "### Directions\n");
        let _ = writeln!(s, "| direction | method | test 1 p | test 2 p | test 3 p | validated |\n|---|---|---|---|---|---|");
        for d in &v.directions {
            let dir = &d.direction;
            match &dir.validation {
                Some(val) => {
                    let _ = writeln!(
                        s,
                        "| {} | {:?} | {} | {} | {} | {} |",
                        dir.label,
                        dir.method,
                        fmt_p(val.test1_p),
                        fmt_p(val.test2_p),
                        fmt_p(val.test3_p),
                        if val.passed { "yes" } else { "no" }
                    );
                }
                None => {
                    let _ = writeln!(s, "| {} | {:?} | | | | n/a |", dir.label, dir.method);
                }
            }
        }
        s.push('\n');
        if !v.direction_cosines.is_empty() {
            let labels: Vec<&String> = v.direction_cosines.keys().collect();
            let _ = write!(s, "| cosine |");
            for l in &labels {
                let _ = write!(s, " {l} |");
            }
            let _ = writeln!(s, "\n|---|{}", "---|".repeat(labels.len()));
            for (l, row) in &v.direction_cosines {
                let _ = write!(s, "| {l} |");
                for m in &labels {
                    let _ = write!(s, " {:.3} |", row[*m]);
                }
                s.push('\n');
            }
            s.push('\n');
        }
        if let Some(e) = &v.eaa {
            let _ = writeln!(s, "### Association metrics\n");
            let _ = writeln!(
                s,
                "| GEAA(E) | GEAA(P) | DEAA | effect size | mean EAA(E) | mean EAA(P) |\n|---|---|---|---|---|---|\n| {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                e.geaa_e, e.geaa_p, e.deaa, e.effect_size, e.mean_eaa_e, e.mean_eaa_p
            );
        }
        if !v.metrics.is_empty() {
            let _ = writeln!(s, "| direction | R-RIPA(E) | R-RIPA(P) | difference | effect size |\n|---|---|---|---|---|");
            for (l, m) in &v.metrics {
                let _ = writeln!(
                    s,
                    "| {l} | {:.4} | {:.4} | {:.4} | {:.4} |",
                    m.rripa_e, m.rripa_p, m.rripa_differential, m.rripa_effect
                );
            }
            s.push('\n');
        }
        for sc in &v.scenarios {
            let _ = writeln!(s, "### Scenario `{:?}`\n", sc.scenario);
            if !sc.groups.is_empty() {
                let _ = writeln!(s, "| group | expected | precision | recall | F1 | support |\n|---|---|---|---|---|---|");
                for g in &sc.groups {
                    let _ = writeln!(
                        s,
                        "| {} | {} | {:.3} | {:.3} | {:.3} | {} |",
                        g.group, g.expected, g.precision, g.recall, g.f1, g.support
                    );
                }
                s.push('\n');
            }
            if let Some(t) = &sc.decile_table {
                let _ = writeln!(s, "| majority | decile | count | predicted A | predicted B |\n|---|---|---|---|---|");
                for row in t {
                    let f = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
                    let _ = writeln!(
                        s,
                        "| {} | {:.0}% | {} | {} | {} |",
                        row.majority,
                        row.decile * 100.0,
                        row.count,
                        f(row.predicted_a),
                        f(row.predicted_b)
                    );
                }
                s.push('\n');
            }
        }
        if let Some(pj) = &v.projection {
            let _ = writeln!(
                s,
                "Projection: {} fitted entities, explained variance ratio {:?}, |cos(PC1, CD)| = {:.3}\n",
                pj.n_fit,
                pj.explained_variance_ratio.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>(),
                pj.pc1_centroid_cosine
            );
        }
    }
    let _ = writeln!(s, "## Flags\n");
    let _ = writeln!(s, "| variant | test | statistic | p-value | threshold | flag |\n|---|---|---|---|---|---|");
    for f in &r.flags {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {} | {:.6} | {} |",
            f.variant,
            f.test,
            f.statistic,
            fmt_p(f.p_value),
            f.threshold,
            if f.flagged { "FLAGGED" } else { "-" }
        );
    }
    for w in &r.warnings {
        let _ = writeln!(s, "\nWarning: {w}");
    }
    let _ = writeln!(s, "\n## Notes\n");
    let _ = writeln!(
        s,
        "- GEAA is a sum over the group; the mean EAA columns allow comparison across group sizes."
    );
    let _ = writeln!(
        s,
        "- EAA effect size divides by the population standard deviation of per-entity EAA over E ∪ P."
    );
    let _ = writeln!(s, "- Probe directions are unit-normalised weight vectors; the intercept is discarded.");
    let _ = writeln!(
        s,
        "- R-RIPA significance: {}.",
        match r.config.rripa_test {
            RripaTest::Permutation => "permutation of per-entity cosines",
            RripaTest::SubsampleRankSum => "rank-sum test over subsample R-RIPA values",
        }
    );
    let _ = writeln!(
        s,
        "- Permutation tests are {}.",
        match r.config.alternative {
            Alternative::TwoSided => "two-sided",
            Alternative::Greater => "one-sided (greater)",
            Alternative::Less => "one-sided (less)",
        }
    );
    let _ = writeln!(
        s,
        "\nVerdict: {}",
        if r.bias_flagged {
            "significant attribute association bias flagged"
        } else {
            "no significant attribute association bias flagged"
        }
    );
    s
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Markdown,
}

pub fn render_report(report: &AssociationReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => io::to_canonical_json(report),
        ReportFormat::Markdown => Ok(render_markdown(report)),
    }
}

pub fn write_report(report: &AssociationReport, path: &Path, format: ReportFormat) -> Result<()> {
    io::write_string(&render_report(report, format)?, path)
}

pub fn read_report(path: &Path) -> Result<AssociationReport> {
    io::read_json(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub first: f64,
    pub second: f64,
    pub delta: f64,
    /// `100 · (second − first) / |first|`; absent when `first` is zero.
    pub percent_change: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestComparison {
    pub test: String,
    pub p_first: f64,
    pub p_second: f64,
    pub flagged_first: bool,
    pub flagged_second: bool,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub first_variant: String,
    pub second_variant: String,
    pub metrics: Vec<MetricDelta>,
    pub tests: Vec<TestComparison>,
    /// Per scenario and group, chi-square p-value of correct/incorrect counts.
    pub scenario_chi_square: BTreeMap<String, BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub toolkit_version: String,
    pub attribute_name: String,
    pub comparisons: Vec<VariantComparison>,
}

fn delta(metric: String, first: f64, second: f64) -> MetricDelta {
    MetricDelta {
        metric,
        first,
        second,
        delta: second - first,
        percent_change: (first != 0.0).then(|| 100.0 * (second - first) / first.abs()),
    }
}

/// Side-by-side comparison of two reports over the same attribute and groups.
/// Variants are paired by name, or directly when each report has exactly one.
pub fn compare_reports(first: &AssociationReport, second: &AssociationReport) -> Result<ComparisonReport> {
    if first.config.attribute_name != second.config.attribute_name {
        return Err(Error::Validation(format!(
            "reports audit different attributes: `{}` vs `{}`",
            first.config.attribute_name, second.config.attribute_name
        )));
    }
    let names = |r: &AssociationReport| -> BTreeMap<Role, String> {
        r.groups.iter().map(|(k, g)| (*k, g.name.clone())).collect()
    };
    if names(first) != names(second) {
        return Err(Error::Validation("reports define different groups".into()));
    }
    let pairs: Vec<(&VariantReport, &VariantReport)> = if first.variants.len() == 1 && second.variants.len() == 1 {
        vec![(&first.variants[0], &second.variants[0])]
    } else {
        first
            .variants
            .iter()
            .filter_map(|v| second.variant(&v.name).map(|w| (v, w)))
            .collect()
    };
    if pairs.is_empty() {
        return Err(Error::Validation("the reports share no model variant".into()));
    }
    let mut comparisons = Vec::new();
    for (x, y) in pairs {
        let mut metrics = Vec::new();
        if let (Some(ex), Some(ey)) = (&x.eaa, &y.eaa) {
            for (k, a, b) in [
                ("geaa_e", ex.geaa_e, ey.geaa_e),
                ("geaa_p", ex.geaa_p, ey.geaa_p),
                ("deaa", ex.deaa, ey.deaa),
                ("effect_size", ex.effect_size, ey.effect_size),
            ] {
                metrics.push(delta(k.to_string(), a, b));
            }
        }
        for (label, mx) in &x.metrics {
            if let Some(my) = y.metrics.get(label) {
                metrics.push(delta(format!("rripa_e:{label}"), mx.rripa_e, my.rripa_e));
                metrics.push(delta(format!("rripa_p:{label}"), mx.rripa_p, my.rripa_p));
                metrics.push(delta(format!("rripa_effect:{label}"), mx.rripa_effect, my.rripa_effect));
            }
        }
        let flags_of = |r: &AssociationReport, v: &str| -> BTreeMap<String, Flag> {
            r.flags
                .iter()
                .filter(|f| f.variant == v)
                .map(|f| (f.test.clone(), f.clone()))
                .collect()
        };
        let fx = flags_of(first, &x.name);
        let fy = flags_of(second, &y.name);
        let mut tests = Vec::new();
        for (test, a) in &fx {
            let Some(b) = fy.get(test) else { continue };
            let reduced = b.statistic.abs() < a.statistic.abs();
            let status = match (a.flagged, b.flagged, reduced) {
                (_, true, true) => "bias reduced but still significant",
                (true, false, _) => "no longer significant",
                (_, true, false) if b.statistic.abs() > a.statistic.abs() => "bias increased",
                (false, false, _) => "not significant",
                _ => "unchanged",
            };
            tests.push(TestComparison {
                test: test.clone(),
                p_first: a.p_value,
                p_second: b.p_value,
                flagged_first: a.flagged,
                flagged_second: b.flagged,
                status: status.to_string(),
            });
        }
        let mut scenario_chi_square = BTreeMap::new();
        for sx in &x.scenarios {
            if let Some(sy) = y.scenarios.iter().find(|s| s.scenario == sx.scenario) {
                if !sx.groups.is_empty() {
                    let key = serde_json::to_value(sx.scenario)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default();
                    scenario_chi_square.insert(key, scenarios::compare_variants(sx, sy)?);
                }
            }
        }
        comparisons.push(VariantComparison {
            first_variant: x.name.clone(),
            second_variant: y.name.clone(),
            metrics,
            tests,
            scenario_chi_square,
        });
    }
    Ok(ComparisonReport {
        toolkit_version: VERSION.to_string(),
        attribute_name: first.config.attribute_name.clone(),
        comparisons,
    })
}

pub fn render_comparison_markdown(c: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Comparison: {}\n", c.attribute_name);
    for v in &c.comparisons {
        let _ = writeln!(s, "## `{}` vs `{}`\n", v.first_variant, v.second_variant);
        let _ = writeln!(s, "| metric | first | second | delta | change |\n|---|---|---|---|---|");
        for m in &v.metrics {
            let pct = m.percent_change.map(|p| format!("{p:+.1}%")).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "| {} | {:.4} | {:.4} | {:+.4} | {pct} |", m.metric, m.first, m.second, m.delta);
        }
        let _ = writeln!(s, "\n| test | p first | p second | status |\n|---|---|---|---|");
        for t in &v.tests {
            let _ = writeln!(s, "| {} | {} | {} | {} |", t.test, fmt_p(t.p_first), fmt_p(t.p_second), t.status);
        }
        for (scenario, groups) in &v.scenario_chi_square {
            for (g, p) in groups {
                let _ = writeln!(s, "\nScenario {scenario}, group {g}: chi-square p = {}", fmt_p(*p));
            }
        }
        s.push('\n');
    }
    s
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            top_k: default_top_k(),
            n_components: default_components(),
            output_dir: None,
            formats: default_scatter_formats(),
            basis: ProjectionBasis::default(),
        }
    }
}

/// Directions and their validation results for one variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub variant: String,
    pub alpha_corrected: f64,
    pub directions: Vec<DirectionReport>,
}

/// Builds and validates every configured direction without running the
/// association metrics.
pub fn run_direction_validation(config: &AuditConfig, inputs: &AuditInputs) -> Result<Vec<DirectionCheck>> {
    config.validate_options().stage("config")?;
    let a = inputs.group(Role::A).stage("ingest")?;
    let b = inputs.group(Role::B).stage("ingest")?;
    let alpha_corrected = config.alpha_corrected();
    let mut out = Vec::new();
    for (name, space) in &inputs.variants {
        a.check_in(space).stage("ingest")?;
        b.check_in(space).stage("ingest")?;
        let built = build_directions(config, a, b, space).stage("directions")?;
        let mut directions = built.directions;
        for d in directions.iter_mut() {
            let opts = ValidationOptions {
                n_random: config.n_random,
                seed: derive_seed(config.seed, &format!("validation:{}", d.direction.label)),
                alpha_corrected,
            };
            let v = validate_direction(&d.direction, &built.holdout.0, &built.holdout.1, space, &opts)
                .stage("validation")?;
            d.direction.validation = Some(v);
        }
        out.push(DirectionCheck {
            variant: name.clone(),
            alpha_corrected,
            directions,
        });
    }
    Ok(out)
}

/// Fits the projection of the most-biased entities for every variant, writing
/// scatter files when an output directory is configured.
pub fn run_projection_only(
    config: &AuditConfig,
    inputs: &AuditInputs,
    projection: &ProjectionConfig,
) -> Result<BTreeMap<String, ProjectionSummary>> {
    config.validate_options().stage("config")?;
    let groups = [Role::A, Role::B, Role::E, Role::P]
        .map(|r| inputs.group(r))
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .stage("ingest")?;
    let [a, b, e, p] = [groups[0], groups[1], groups[2], groups[3]];
    let mut out = BTreeMap::new();
    let mut shared_basis = None;
    for (name, space) in &inputs.variants {
        for g in [a, b, e, p] {
            g.check_in(space).stage("ingest")?;
        }
        let split_seed = derive_seed(config.seed, "holdout");
        let fit = (
            holdout_split(a, config.validation_holdout, split_seed).stage("directions")?.0,
            holdout_split(b, config.validation_holdout, split_seed).stage("directions")?.0,
        );
        let summary = run_projection(projection, name, space, [a, b, e, p], &fit, config.seed, &mut shared_basis)
            .stage("projection")?;
        out.insert(name.clone(), summary);
    }
    Ok(out)
}
