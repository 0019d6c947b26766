//! Writes synthetic datasets to disk together with ready-to-run audit configs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audit::{AuditConfig, EmbeddingSource, ScenarioConfig};
use crate::directions::DirectionMethod;
use crate::error::{Error, Result};
use crate::io::{self, EmbeddingFormat, GroupSpec};
use crate::scenarios::Label;
use crate::space::{EmbeddingSpace, EntityGroup, Role};
use crate::synthetic::{
    generate_engagement_items, generate_interactions, generate_planted_space, train_toy_mf, EngagementConfig,
    InteractionConfig, MfParams, PlantedConfig,
};

/// A synthetic dataset recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GenerateConfig {
    /// Gaussian clusters with a planted attribute direction.
    Planted {
        #[serde(default)]
        planted: PlantedConfig,
        /// Adds items with engagement shares for the majority-listener scenario.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        engagement: Option<EngagementConfig>,
        #[serde(default = "default_permutations")]
        permutations: usize,
    },
    /// An interaction log and two matrix-factorization models trained on it,
    /// one with the attribute as an input and one without.
    Mf {
        #[serde(default)]
        interactions: InteractionConfig,
        #[serde(default)]
        mf: MfParams,
        #[serde(default = "default_permutations")]
        permutations: usize,
    },
}

fn default_permutations() -> usize {
    999
}

impl GenerateConfig {
    /// Replaces every seed in the recipe.
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self {
            GenerateConfig::Planted {
                planted, engagement, ..
            } => {
                planted.seed = seed;
                if let Some(e) = engagement {
                    e.seed = seed;
                }
            }
            GenerateConfig::Mf { interactions, mf, .. } => {
                interactions.seed = seed;
                mf.seed = seed;
            }
        }
        self
    }

    pub fn seed(&self) -> u64 {
        match self {
            GenerateConfig::Planted { planted, .. } => planted.seed,
            GenerateConfig::Mf { interactions, .. } => interactions.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedFiles {
    pub files: Vec<PathBuf>,
    /// Audit configs written alongside the data.
    pub audit_configs: Vec<PathBuf>,
}

fn spec(name: &str) -> GroupSpec {
    GroupSpec {
        name: name.to_string(),
        label: Some(name.to_string()),
        ids: None,
    }
}

fn base_config(attribute: &str, seed: u64, permutations: usize) -> AuditConfig {
    let mut c = AuditConfig::new(attribute, seed);
    c.labels = Some(PathBuf::from("labels.tsv"));
    c.permutations = permutations;
    c
}

fn variant(name: &str, file: &str) -> BTreeMap<String, EmbeddingSource> {
    [(
        name.to_string(),
        EmbeddingSource {
            path: PathBuf::from(file),
            format: Some(EmbeddingFormat::Tsv),
        },
    )]
    .into()
}

/// Generates the dataset described by `config` into `out_dir`.
pub fn generate(config: &GenerateConfig, out_dir: &Path) -> Result<GeneratedFiles> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let mut out = GeneratedFiles {
        files: Vec::new(),
        audit_configs: Vec::new(),
    };
    let seed = config.seed();
    match config {
        GenerateConfig::Planted {
            planted,
            engagement,
            permutations,
        } => {
            let ps = generate_planted_space(planted)?;
            let g = &ps.groups;
            let mut space = ps.space;
            let mut audit = base_config("planted", seed, *permutations);
            audit.variants = variant("planted", "embeddings.tsv");
            for (role, grp) in [(Role::A, &g.a), (Role::B, &g.b), (Role::E, &g.e), (Role::P, &g.p)] {
                audit.groups.insert(role, spec(grp.name()));
            }
            if let Some(ec) = engagement {
                let items = generate_engagement_items(&ps.direction, ec)?;
                let rows = space
                    .iter()
                    .map(|(id, v)| (id.clone(), v.to_vec()))
                    .chain(items.rows)
                    .collect::<Vec<_>>();
                space = EmbeddingSpace::new(space.name(), space.variant_tag(), rows)?;
                let path = out_dir.join("shares.tsv");
                io::write_shares(&items.shares, &path)?;
                out.files.push(path);
                let item_ids = items.shares.iter().map(|s| s.entity.clone()).collect();
                let items_group = EntityGroup::new("items", Role::Unassigned, item_ids)?;
                audit.scenarios = Some(ScenarioConfig {
                    targets: Some(spec(items_group.name())),
                    shares: Some(PathBuf::from("shares.tsv")),
                    deciles: crate::scenarios::DEFAULT_DECILES.to_vec(),
                    interactions: None,
                    history_k: 3,
                    stereotypes: BTreeMap::new(),
                });
                let path = out_dir.join("labels.tsv");
                io::write_labels(&[&g.a, &g.b, &g.e, &g.p, &items_group], &path)?;
                out.files.push(path);
            } else {
                let path = out_dir.join("labels.tsv");
                io::write_labels(&[&g.a, &g.b, &g.e, &g.p], &path)?;
                out.files.push(path);
            }
            let path = out_dir.join("embeddings.tsv");
            io::write_embeddings(&space, &path, EmbeddingFormat::Tsv)?;
            out.files.push(path);
            let path = out_dir.join("audit.json");
            io::write_json(&audit, &path)?;
            out.audit_configs.push(path);
        }
        GenerateConfig::Mf {
            interactions,
            mf,
            permutations,
        } => {
            let log = generate_interactions(interactions)?;
            let ids = interactions.groups();
            let groups = [
                EntityGroup::new("users_a", Role::A, ids.users_a)?,
                EntityGroup::new("users_b", Role::B, ids.users_b)?,
                EntityGroup::new("items_x", Role::E, ids.items_x)?,
                EntityGroup::new("items_y", Role::P, ids.items_y)?,
            ];
            let path = out_dir.join("labels.tsv");
            io::write_labels(&groups.iter().collect::<Vec<_>>(), &path)?;
            out.files.push(path);
            let path = out_dir.join("interactions.tsv");
            io::write_interactions(&log, &path)?;
            out.files.push(path);
            for (use_attribute, tag) in [(true, "with"), (false, "without")] {
                let model = train_toy_mf(
                    &log,
                    &MfParams {
                        use_attribute,
                        ..mf.clone()
                    },
                )?;
                let file = format!("{tag}_attribute.tsv");
                let path = out_dir.join(&file);
                io::write_embeddings(&model.space, &path, EmbeddingFormat::Tsv)?;
                out.files.push(path);
                let mut audit = base_config("user-group", seed, *permutations);
                audit.variants = variant(&format!("{tag}-attribute"), &file);
                audit.directions = vec![DirectionMethod::CentroidDifference, DirectionMethod::LinearProbe];
                for g in &groups {
                    audit.groups.insert(g.role(), spec(g.name()));
                }
                audit.scenarios = Some(ScenarioConfig {
                    targets: None,
                    shares: None,
                    deciles: crate::scenarios::DEFAULT_DECILES.to_vec(),
                    interactions: Some(PathBuf::from("interactions.tsv")),
                    history_k: 3,
                    stereotypes: [(Role::E, Label::A), (Role::P, Label::B)].into(),
                });
                let path = out_dir.join(format!("audit-{tag}.json"));
                io::write_json(&audit, &path)?;
                out.audit_configs.push(path);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let c = GenerateConfig::Planted {
            planted: PlantedConfig::default(),
            engagement: None,
            permutations: 999,
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"kind\":\"planted\""));
        let back: GenerateConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let mf: GenerateConfig = serde_json::from_str(r#"{"kind":"mf"}"#).unwrap();
        assert_eq!(mf.seed(), 0);
        assert!(serde_json::from_str::<GenerateConfig>(r#"{"kind":"planted","bogus":1}"#).is_err());
    }

    #[test]
    fn planted_dataset_loads_back_as_an_audit() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerateConfig::Planted {
            planted: PlantedConfig {
                n_a: 20,
                n_b: 20,
                n_e: 10,
                n_p: 10,
                ..Default::default()
            },
            engagement: Some(EngagementConfig {
                n_items: 50,
                ..Default::default()
            }),
            permutations: 199,
        }
        .with_seed(4);
        let files = generate(&cfg, dir.path()).unwrap();
        let audit = AuditConfig::load(&files.audit_configs[0]).unwrap();
        let inputs = crate::audit::AuditInputs::load(&audit, dir.path()).unwrap();
        assert_eq!(inputs.variants[0].1.len(), 110);
        assert_eq!(inputs.groups[&Role::A].len(), 20);
        assert_eq!(inputs.targets.as_ref().unwrap().len(), 50);
        assert_eq!(inputs.shares.as_ref().unwrap().len(), 50);
    }
}
