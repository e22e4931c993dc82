//! Run configuration: one TOML file with a section per pipeline stage.
//! Every field has a default; unknown keys are rejected.

use std::fs;
use std::path::Path;

use gvit::graph::GasGroup;
use gvit::ingest::{IngestConfig, SynthConfig};
use gvit::model::{GViTConfig, PRESENCE_THRESHOLD};
use gvit::train::TrainConfig;
use gvit::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximaSource {
    /// Fixed maxima of the public recordings.
    #[default]
    Uci,
    /// Largest setpoint seen per gas in the ingested streams.
    Observed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub downsample_factor: usize,
    pub average: bool,
    pub test_ratio: f64,
    pub folds: usize,
    pub maxima: MaximaSource,
}

impl Default for IngestSection {
    fn default() -> Self {
        let base = IngestConfig::default();
        IngestSection {
            downsample_factor: base.downsample_factor,
            average: base.average,
            test_ratio: 0.16,
            folds: 5,
            maxima: MaximaSource::Uci,
        }
    }
}

impl IngestSection {
    pub fn pipeline(&self) -> IngestConfig {
        IngestConfig {
            downsample_factor: self.downsample_factor,
            average: self.average,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    pub knn_k: usize,
    pub knn_window: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            threshold: PRESENCE_THRESHOLD,
            knn_k: 5,
            knn_window: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Overwrites the seed fields of every section.
    pub seed: u64,
    /// Gas group to train on when a dataset holds both.
    pub group: Option<GasGroup>,
    pub synth: SynthConfig,
    pub ingest: IngestSection,
    pub model: GViTConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Io {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_seed(&mut self) {
        let s = self.seed;
        self.synth.schedule.seed = s;
        self.synth.sensor_seed = s.wrapping_add(1);
        self.synth.noise_seed = s.wrapping_add(2);
        self.model.seed = s;
        self.train.seed = s;
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let i = &self.ingest;
        if i.downsample_factor == 0 {
            return Err(Error::Config("ingest.downsample_factor must be >= 1".into()));
        }
        if !(i.test_ratio > 0.0 && i.test_ratio < 1.0) {
            return Err(Error::Config(format!("ingest.test_ratio must be in (0, 1), got {}", i.test_ratio)));
        }
        if i.folds < 2 {
            return Err(Error::Config(format!("ingest.folds must be >= 2, got {}", i.folds)));
        }
        let e = &self.eval;
        if !(e.threshold > 0.0 && e.threshold < 1.0) {
            return Err(Error::Config(format!("eval.threshold must be in (0, 1), got {}", e.threshold)));
        }
        if e.knn_k == 0 || e.knn_window == 0 {
            return Err(Error::Config("eval.knn_k and eval.knn_window must be >= 1".into()));
        }
        if !(self.synth.sample_rate_hz > 0.0) || !(self.synth.noise_std >= 0.0) {
            return Err(Error::Config("synth.sample_rate_hz must be > 0 and synth.noise_std >= 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration in canonical TOML.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
