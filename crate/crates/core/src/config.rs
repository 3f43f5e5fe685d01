//! Versioned run configuration: one JSON document, unknown keys rejected,
//! defaults equal to the reference training settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{sha256_hex, to_canonical_json};
use crate::backend::Decode;
use crate::corpus::DatasetFormat;
use crate::negatives::Strategy;
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: &str = "infergap/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported config_version `{0}`, expected `{CONFIG_VERSION}`")]
    Version(String),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMethod {
    Greedy,
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub method: DecodeMethod,
    pub k: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            method: DecodeMethod::Greedy,
            k: 10,
            max_len: 32,
        }
    }
}

impl DecodeConfig {
    pub fn decode(&self, seed: u64) -> Decode {
        match self.method {
            DecodeMethod::Greedy => Decode::Greedy,
            DecodeMethod::TopK => Decode::TopK { k: self.k, seed },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyBy {
    Difficulty,
    Question,
}

/// Sentence-level score used to pair systems item by item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMetric {
    #[serde(rename = "bleu_1")]
    Bleu1,
    #[serde(rename = "bleu_2")]
    Bleu2,
    #[serde(rename = "bleu_3")]
    Bleu3,
    #[serde(rename = "bleu_4")]
    Bleu4,
    Meteor,
    RougeL,
}

impl CompareMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            CompareMetric::Bleu1 => "bleu_1",
            CompareMetric::Bleu2 => "bleu_2",
            CompareMetric::Bleu3 => "bleu_3",
            CompareMetric::Bleu4 => "bleu_4",
            CompareMetric::Meteor => "meteor",
            CompareMetric::RougeL => "rouge_l",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub per_example: bool,
    pub stratify_by: Option<StratifyBy>,
    pub compare_metric: CompareMetric,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            per_example: false,
            stratify_by: Some(StratifyBy::Difficulty),
            compare_metric: CompareMetric::RougeL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: DatasetFormat,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            train: None,
            valid: None,
            test: None,
            format: DatasetFormat::CanonicalJsonl,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Lists to expand into independent runs; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub lambda_b: Vec<f64>,
    pub lambda_s: Vec<f64>,
    pub m: Vec<usize>,
    pub strategy: Vec<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub config_version: String,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub report: ReportConfig,
    pub paths: PathsConfig,
    pub sweep: SweepGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            config_version: CONFIG_VERSION.into(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            report: ReportConfig::default(),
            paths: PathsConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.config_version.clone()));
        }
        self.train.validate()?;
        if self.decode.max_len == 0 || self.decode.k == 0 {
            return Err(ConfigError::Invalid("decode.k and decode.max_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        to_canonical_json(self).expect("config serializes")
    }

    /// sha256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    /// One config per point of the sweep grid, named by its coordinates.
    pub fn expand_sweep(&self) -> Vec<(String, RunConfig)> {
        let or_base = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
        let lbs = or_base(&self.sweep.lambda_b, self.train.loss.lambda_b);
        let lss = or_base(&self.sweep.lambda_s, self.train.loss.lambda_s);
        let ms = if self.sweep.m.is_empty() { vec![self.train.negatives.m] } else { self.sweep.m.clone() };
        let strategies = if self.sweep.strategy.is_empty() {
            vec![self.train.negatives.strategy]
        } else {
            self.sweep.strategy.clone()
        };
        let mut out = Vec::new();
        for &strategy in &strategies {
            for &m in &ms {
                for &lb in &lbs {
                    for &ls in &lss {
                        let mut c = self.clone();
                        c.sweep = SweepGrid::default();
                        c.train.loss.lambda_b = lb;
                        c.train.loss.lambda_s = ls;
                        c.train.negatives.m = m;
                        c.train.negatives.strategy = strategy;
                        let name = format!("{strategy}_m{m}_lb{lb}_ls{ls}");
                        c.paths.out_dir = self.paths.out_dir.join(&name);
                        out.push((name, c));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let v: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        let t = &v["train"];
        assert_eq!(t["loss"]["tau_b"], 0.1);
        assert_eq!(t["loss"]["tau_s"], 2.5);
        assert_eq!(t["loss"]["lambda_b"], 0.5);
        assert_eq!(t["loss"]["lambda_s"], 0.5);
        assert_eq!(t["negatives"]["m"], 4);
        assert_eq!(t["negatives"]["k"], 10);
        assert_eq!(t["negatives"]["threshold"], 0.75);
        assert_eq!(t["effective_batch"], 64);
        assert_eq!(t["max_epochs"], 10);
        assert_eq!(t["lr0"], 0.0001);
        assert_eq!(v["config_version"], CONFIG_VERSION);
    }

    #[test]
    fn round_trip_and_partial_documents() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_json(&d.to_json()).unwrap(), d);
        let partial = RunConfig::from_json(r#"{"train": {"max_epochs": 1}}"#).unwrap();
        assert_eq!(partial.train.max_epochs, 1);
        assert_eq!(partial.train.effective_batch, 64);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::from_json(r#"{"train": {"learning_rate": 0.1}}"#).unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        let e = RunConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        assert!(RunConfig::from_json(r#"{"config_version": "infergap/0"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"micro_batch": 7}}"#).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.train.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn sweep_expansion() {
        let mut c = RunConfig::default();
        c.sweep.lambda_b = vec![0.1, 0.5];
        c.sweep.m = vec![1, 2, 3, 4];
        let runs = c.expand_sweep();
        assert_eq!(runs.len(), 8);
        assert!(runs.iter().all(|(_, r)| r.sweep == SweepGrid::default()));
        let names: std::collections::BTreeSet<_> = runs.iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names.len(), 8);
        assert_eq!(runs[0].1.train.negatives.m, 1);
        assert_eq!(RunConfig::default().expand_sweep().len(), 1);
    }
}
