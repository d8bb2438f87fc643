//! Run configuration: one TOML document plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hmdlf::data::{parse_timestamp, Schema, SynthConfig, DEFAULT_MODALITIES};
use hmdlf::model::{BranchConfig, ModelConfig, ModelKind};
use hmdlf::training::TrainConfig;
use hmdlf::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the seed of every section.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub evaluate: EvaluateSection,
    pub gradcheck: GradcheckSection,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output_dir: PathBuf::from("out"),
            data: DataSection::default(),
            synth: SynthConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            evaluate: EvaluateSection::default(),
            gradcheck: GradcheckSection::default(),
            compare: CompareSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Input CSV. Without it, data comes from the `synth` section; `synth`
    /// writes here.
    pub path: Option<PathBuf>,
    /// Modalities in branch order; the first is the forecast target.
    pub modalities: Vec<String>,
    pub schema: Schema,
    /// First test timestamp. Defaults to the last `test_fraction` of records.
    pub test_start: Option<String>,
    pub test_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            modalities: DEFAULT_MODALITIES.iter().map(|s| s.to_string()).collect(),
            schema: Schema::default(),
            test_start: None,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub branch: BranchConfig,
    pub head_hidden: usize,
    pub dropout: f64,
    pub recurrent_bias: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Hmdlf,
            branch: BranchConfig::default(),
            head_hidden: 128,
            dropout: 0.2,
            recurrent_bias: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateSection {
    /// Model file; defaults to `<output_dir>/model.bin`.
    pub model: Option<PathBuf>,
    /// `test` (records from the test start) or `all`.
    pub split: String,
    /// Optional inclusive bounds on the target timestamps.
    pub start: Option<String>,
    pub end: Option<String>,
    pub plot: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            model: None,
            split: "test".into(),
            start: None,
            end: None,
            plot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub seeds: Vec<u64>,
    /// Test hook: name of a component whose analytic gradients are
    /// deliberately perturbed.
    pub corrupt: Option<String>,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            seeds: hmdlf::gradcheck::SEEDS.to_vec(),
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Entries: naive, seasonal, lr, ridge, rnn, gru, cnn, cnn_gru,
    /// cnn_gru_attention, hmdlf, hmdlf_attention.
    pub roster: Vec<String>,
    /// Lookup sizes; empty means `train.lookup` only.
    pub lookups: Vec<usize>,
    /// Max-epoch settings for the networks; empty means `train.max_epochs`.
    pub epochs: Vec<usize>,
    pub ridge_lambda: f64,
    /// Seasonal-naive period in records; defaults to one week.
    pub seasonal_period: Option<usize>,
}

impl Default for CompareSection {
    fn default() -> Self {
        CompareSection {
            roster: ["naive", "seasonal", "lr", "ridge", "gru", "cnn_gru", "hmdlf_attention"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            lookups: Vec::new(),
            epochs: Vec::new(),
            ridge_lambda: 1.0,
            seasonal_period: None,
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `key=value`
    /// overrides, where keys are dotted paths such as `train.max_epochs`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(seed) = config.seed {
            config.synth.seed = seed;
            config.train.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.modalities.is_empty() {
            return Err(Error::Config("data.modalities must not be empty".into()));
        }
        if !(0.0..1.0).contains(&self.data.test_fraction) {
            return Err(Error::Config(format!(
                "data.test_fraction must be in [0, 1), got {}",
                self.data.test_fraction
            )));
        }
        for t in [&self.data.test_start, &self.evaluate.start, &self.evaluate.end].into_iter().flatten() {
            timestamp(t)?;
        }
        if !matches!(self.evaluate.split.as_str(), "test" | "all") {
            return Err(Error::Config(format!(
                "evaluate.split must be \"test\" or \"all\", got {:?}",
                self.evaluate.split
            )));
        }
        self.train.validate()?;
        self.model.branch.validate()
    }

    pub fn model_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    /// Network configuration for `kind`; single-modality kinds take the
    /// target modality only.
    pub fn model_config(&self, kind: ModelKind, lookup: usize) -> ModelConfig {
        let modalities = if kind.is_multimodal() {
            self.data.modalities.clone()
        } else {
            vec![self.data.modalities[0].clone()]
        };
        ModelConfig {
            kind,
            modalities,
            lookup,
            branch: self.model.branch.clone(),
            head_hidden: self.model.head_hidden,
            dropout: self.model.dropout,
            recurrent_bias: self.model.recurrent_bias,
            seed: self.model_seed(),
        }
    }

    /// Canonical JSON of the resolved configuration, echoed into outputs.
    pub fn echo(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

pub fn timestamp(s: &str) -> Result<hmdlf::data::NaiveDateTime> {
    parse_timestamp(s).ok_or_else(|| Error::Config(format!("cannot parse timestamp {s:?}")))
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part} is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::load(
            None,
            &[
                "train.max_epochs=17".into(),
                "model.kind=gru".into(),
                "model.branch.hidden=16".into(),
                "data.path=some/file.csv".into(),
                "seed=3".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.train.max_epochs, 17);
        assert_eq!(c.model.kind, ModelKind::Gru);
        assert_eq!(c.model.branch.hidden, 16);
        assert_eq!(c.data.path.as_deref(), Some(Path::new("some/file.csv")));
        assert_eq!((c.synth.seed, c.train.seed), (3, 3));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["train.epochs=3".into()]).is_err());
        assert!(RunConfig::load(None, &["bogus=1".into()]).is_err());
        assert!(RunConfig::load(None, &["model.kind=lstm".into()]).is_err());
        assert!(RunConfig::load(None, &["no_equals_sign".into()]).is_err());
    }
}
