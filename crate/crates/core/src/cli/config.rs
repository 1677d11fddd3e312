//! TOML run configuration and its preset expansion.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanes::{LaneConfig, Variant};
use crate::sim::{Preset, ScenarioSpec, SensorNoiseSpec};
use crate::solver::SolverSettings;

/// Version of the on-disk layout written by the CLI.
pub const FORMAT_VERSION: u32 = 1;

/// A preset name or an explicit scenario table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioEntry {
    Preset(Preset),
    Explicit(NamedScenario),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedScenario {
    pub name: String,
    #[serde(flatten)]
    pub spec: ScenarioSpec,
    /// Falls back to the top-level `noise` table, then to the built-in default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<SensorNoiseSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Configuration as written by the user. Every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: OneOrMany<ScenarioEntry>,
    /// Overrides preset noise for every scenario without its own `noise`.
    pub noise: Option<SensorNoiseSpec>,
    pub lanes: Vec<LaneConfig>,
    pub solver: SolverSettings,
    /// Empty means the scenario's own seed.
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: OneOrMany::Many(Preset::ALL.iter().copied().map(ScenarioEntry::Preset).collect()),
            noise: None,
            lanes: Variant::ALL.iter().copied().map(LaneConfig::for_variant).collect(),
            solver: SolverSettings::default(),
            seeds: Vec::new(),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// One scenario with every parameter explicit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandedScenario {
    pub name: String,
    #[serde(flatten)]
    pub spec: ScenarioSpec,
    pub noise: SensorNoiseSpec,
}

/// The configuration actually executed. Serializes to TOML that loads back as a
/// [`RunConfig`] with the same meaning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandedConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub solver: SolverSettings,
    pub scenario: Vec<ExpandedScenario>,
    pub lanes: Vec<LaneConfig>,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Replaces the section name of a nested validation error with `prefix`.
fn nest(prefix: &str, e: Error) -> Error {
    match e {
        Error::Config { path, message } => {
            let leaf = path.split_once('.').map_or(path.as_str(), |(_, l)| l);
            config_err(&format!("{prefix}.{leaf}"), message)
        }
        other => config_err(prefix, other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let path = e
                .span()
                .map(|s| {
                    let line = text[..s.start].lines().count().max(1);
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".to_string());
            config_err(&path, message)
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(&path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    /// Resolves presets, noise fallbacks and seeds, then validates everything.
    pub fn expand(&self) -> Result<ExpandedConfig> {
        let mut scenarios = Vec::new();
        for (i, entry) in self.scenario.to_vec().into_iter().enumerate() {
            let prefix = format!("scenario[{i}]");
            let s = match entry {
                ScenarioEntry::Preset(p) => ExpandedScenario {
                    name: p.name().to_string(),
                    spec: p.scenario(),
                    noise: self.noise.clone().unwrap_or_else(|| p.noise()),
                },
                ScenarioEntry::Explicit(n) => ExpandedScenario {
                    noise: n.noise.or_else(|| self.noise.clone()).unwrap_or_default(),
                    name: n.name,
                    spec: n.spec,
                },
            };
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                return Err(config_err(&format!("{prefix}.name"), "must be a non-empty plain file name"));
            }
            if scenarios.iter().any(|o: &ExpandedScenario| o.name == s.name) {
                return Err(config_err(&format!("{prefix}.name"), format!("duplicate scenario `{}`", s.name)));
            }
            s.spec.validate().map_err(|e| nest(&prefix, e))?;
            s.noise.validate().map_err(|e| nest(&format!("{prefix}.noise"), e))?;
            scenarios.push(s);
        }
        if scenarios.is_empty() {
            return Err(config_err("scenario", "at least one scenario is required"));
        }
        if self.lanes.is_empty() {
            return Err(config_err("lanes", "at least one lane config is required"));
        }
        for (i, lane) in self.lanes.iter().enumerate() {
            lane.validate().map_err(|e| nest(&format!("lanes[{i}]"), e))?;
            if self.lanes[..i].iter().any(|o| o.variant == lane.variant) {
                return Err(config_err(&format!("lanes[{i}].variant"), format!("duplicate variant `{}`", lane.variant)));
            }
        }
        self.solver.validate()?;
        let seeds = if self.seeds.is_empty() {
            vec![scenarios[0].spec.seed]
        } else {
            self.seeds.clone()
        };
        Ok(ExpandedConfig {
            seeds,
            output_dir: self.output_dir.clone(),
            solver: self.solver,
            scenario: scenarios,
            lanes: self.lanes.clone(),
        })
    }
}

impl ExpandedConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// The lane config for `variant`, falling back to the defaults.
    pub fn lane(&self, variant: Variant) -> LaneConfig {
        self.lanes
            .iter()
            .find(|l| l.variant == variant)
            .cloned()
            .unwrap_or_else(|| LaneConfig::for_variant(variant))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_expands_to_both_presets() {
        let cfg = RunConfig::from_toml("").unwrap().expand().unwrap();
        assert_eq!(cfg.scenario.len(), 2);
        assert_eq!(cfg.scenario[0].name, "factory");
        assert_eq!(cfg.scenario[1].noise.lidar_z_bias_per_keyframe, 0.12);
        assert_eq!(cfg.lanes.len(), 3);
        assert_eq!(cfg.seeds, vec![1]);
    }

    #[test]
    fn expanded_form_reloads_identically() {
        let cfg = RunConfig::from_toml("scenario = \"cocopark\"\nseeds = [3, 4]\n")
            .unwrap()
            .expand()
            .unwrap();
        let text = cfg.to_toml().unwrap();
        let again = RunConfig::from_toml(&text).unwrap().expand().unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml("sedes = [1]"), Err(Error::Config { .. })));
        let nested = "[solver]\nmax_iter = 3\n";
        assert!(RunConfig::from_toml(nested).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let text = "[[lanes]]\nvariant = \"parallel\"\nelevation_sigma = -1.0\n";
        match RunConfig::from_toml(text).unwrap().expand() {
            Err(Error::Config { path, .. }) => assert_eq!(path, "lanes[0].elevation_sigma"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_scenario_table() {
        let text = r#"
[scenario]
name = "flat"
loop = "circle"
path_length = 100.0
relief_amplitude = 0.0
keyframe_spacing = 2.0
fk_rate = 50.0
speed = 1.0
seed = 9
"#;
        let cfg = RunConfig::from_toml(text).unwrap().expand().unwrap();
        assert_eq!(cfg.scenario[0].name, "flat");
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.scenario[0].noise, SensorNoiseSpec::default());
    }
}
