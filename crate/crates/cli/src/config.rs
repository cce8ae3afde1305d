//! One configuration file for every command, with dotted-key overrides.

use std::path::{Path, PathBuf};

use macroplace_core::guidance::GuidanceConfig;
use macroplace_core::metrics::DEFAULT_RESOLUTION;
use macroplace_core::model::{ScoreNetConfig, TrainConfig};
use macroplace_core::render::RenderOptions;
use macroplace_core::syngen::DatasetSpec;
use macroplace_core::transfer::FinetuneConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generate: GenerateSection,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub place: PlaceSection,
    pub eval: EvalSection,
    pub render: RenderSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub out: PathBuf,
    pub dataset: DatasetSpec,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            out: "dataset".into(),
            dataset: DatasetSpec {
                count: 3,
                n_range: (30, 60),
                fanout_range: (2, 10),
                ..DatasetSpec::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Output directory of `generate`.
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Checkpoint to continue from; its architecture overrides `model`.
    pub resume: Option<PathBuf>,
    pub model: ScoreNetConfig,
    pub optimizer: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset: "dataset".into(),
            out: "run".into(),
            resume: None,
            model: ScoreNetConfig {
                width: 32,
                gnn_layers: 2,
                attn_layers: 1,
                heads: 4,
            },
            optimizer: TrainConfig {
                steps: 2000,
                batch_size: 16,
                lr: 1e-3,
                ema_decay: 0.999,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub checkpoint: PathBuf,
    /// Bookshelf design; pads are held at their `.pl` positions when given.
    pub netlist: PathBuf,
    pub out: PathBuf,
    pub config: FinetuneConfig,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            checkpoint: "run/checkpoint.json".into(),
            netlist: PathBuf::new(),
            out: "finetune".into(),
            config: FinetuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceSection {
    pub checkpoint: PathBuf,
    pub netlist: PathBuf,
    pub out: PathBuf,
    /// Placements sampled with seeds `seed, seed + 1, ...`.
    pub count: usize,
    pub seed: u64,
    /// SVG frames of the best sample's denoising trajectory (0: none).
    pub frames: usize,
    pub guidance: GuidanceConfig,
    pub render: RenderOptions,
}

impl Default for PlaceSection {
    fn default() -> Self {
        Self {
            checkpoint: "run/checkpoint.json".into(),
            netlist: PathBuf::new(),
            out: "placements".into(),
            count: 1,
            seed: 0,
            frames: 0,
            guidance: GuidanceConfig::default(),
            render: RenderOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub netlist: PathBuf,
    /// `.pl` file; the design's own `.pl` is used when unset.
    pub placement: Option<PathBuf>,
    pub out: PathBuf,
    pub resolution: (usize, usize),
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            netlist: PathBuf::new(),
            placement: None,
            out: "eval".into(),
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSection {
    pub netlist: PathBuf,
    pub placement: Option<PathBuf>,
    /// SVG file to write.
    pub out: PathBuf,
    pub options: RenderOptions,
}

impl Default for RenderSection {
    fn default() -> Self {
        Self {
            netlist: PathBuf::new(),
            placement: None,
            out: "placement.svg".into(),
            options: RenderOptions::default(),
        }
    }
}

/// Keys of each section naming files rather than settings. They are left
/// out of the configuration hash so reruns into another directory match.
fn path_keys(section: &str) -> &'static [&'static str] {
    match section {
        "generate" => &["out"],
        "train" => &["dataset", "out", "resume"],
        "finetune" | "place" => &["checkpoint", "netlist", "out"],
        "eval" | "render" => &["netlist", "placement", "out"],
        _ => &[],
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
    }

    fn to_table(&self) -> Result<toml::Table, CliError> {
        toml::Table::try_from(self).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))
    }

    /// Applies `key = value` assignments with dotted keys such as
    /// `place.guidance.cfg_scale`. Values use TOML syntax; anything that
    /// does not parse as TOML is taken as a string.
    pub fn with_overrides(&self, overrides: &[(String, toml::Value)]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut table = self.to_table()?;
        for (key, value) in overrides {
            let parts: Vec<&str> = key.split('.').collect();
            if parts.iter().any(|p| p.is_empty()) {
                return Err(CliError::Usage(format!("malformed key `{key}`")));
            }
            let (leaf, parents) = parts.split_last().expect("split yields one part");
            let mut node = &mut table;
            for p in parents {
                let entry = node
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                node = entry
                    .as_table_mut()
                    .ok_or_else(|| CliError::Usage(format!("`{key}`: `{p}` is not a section")))?;
            }
            node.insert(leaf.to_string(), value.clone());
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Usage(format!("invalid override: {e}")))
    }

    /// SHA-256 of the settings of `section` with its path keys removed.
    pub fn hash(&self, section: &str) -> Result<String, CliError> {
        let mut table = self.to_table()?;
        let mut settings = match table.remove(section) {
            Some(toml::Value::Table(t)) => t,
            _ => return Err(CliError::Usage(format!("unknown section `{section}`"))),
        };
        for key in path_keys(section) {
            settings.remove(*key);
        }
        let text = toml::to_string(&settings).map_err(|e| CliError::Usage(e.to_string()))?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Parses `key=value` from the command line.
pub fn parse_assignment(text: &str) -> Result<(String, toml::Value), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got `{text}`")))?;
    Ok((key.trim().to_owned(), parse_value(raw.trim())))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pairs: &[&str]) -> Vec<(String, toml::Value)> {
        pairs.iter().map(|p| parse_assignment(p).unwrap()).collect()
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn empty_file_gives_defaults() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[place]\nbogus = 1\n").is_err());
        let c = RunConfig::default();
        assert!(c.with_overrides(&set(&["place.guidance.bogus=1"])).is_err());
        assert!(c.with_overrides(&set(&["nosuch.key=1"])).is_err());
    }

    #[test]
    fn overrides_set_nested_values() {
        let c = RunConfig::default()
            .with_overrides(&set(&[
                "place.guidance.cfg_scale=3.5",
                "place.count=4",
                "generate.dataset.n_range=[20, 25]",
                "finetune.config.beta=0.5",
                "render.options.title=hello world",
                "place.guidance.sampler=\"ddpm\"",
            ]))
            .unwrap();
        assert_eq!(c.place.guidance.cfg_scale, 3.5);
        assert_eq!(c.place.count, 4);
        assert_eq!(c.generate.dataset.n_range, (20, 25));
        assert_eq!(c.finetune.config.beta, Some(0.5));
        assert_eq!(c.render.options.title.as_deref(), Some("hello world"));
        assert_eq!(c.place.guidance.sampler, macroplace_core::guidance::Sampler::Ddpm);
    }

    #[test]
    fn type_errors_are_reported() {
        assert!(RunConfig::default()
            .with_overrides(&set(&["place.count=many"]))
            .is_err());
        assert!(parse_assignment("novalue").is_err());
    }

    #[test]
    fn hash_ignores_paths_but_not_settings() {
        let a = RunConfig::default();
        let b = a
            .with_overrides(&set(&["place.out=elsewhere", "place.netlist=x"]))
            .unwrap();
        let c = a.with_overrides(&set(&["place.seed=9"])).unwrap();
        assert_eq!(a.hash("place").unwrap(), b.hash("place").unwrap());
        assert_ne!(a.hash("place").unwrap(), c.hash("place").unwrap());
        assert_eq!(a.hash("place").unwrap().len(), 64);
        assert_eq!(a.hash("train").unwrap(), c.hash("train").unwrap());
    }
}
