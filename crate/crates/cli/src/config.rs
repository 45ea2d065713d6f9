//! Flat JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use diffformer::data::SplitSpec;
use diffformer::model::{AttentionKind, ModelConfig};
use diffformer::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Every key is required in a config file; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cube: PathBuf,
    pub out_dir: PathBuf,
    pub patch_size: usize,
    pub pca_bands: usize,
    pub token_spatial: usize,
    pub d_embed: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout_rate: f64,
    pub ln_eps: f64,
    pub attention: AttentionKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub decay: f64,
    pub l2: f64,
    pub l2_all_weights: bool,
    pub shuffle: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    /// Record wall-clock seconds in history and reports. Turning this off
    /// makes reruns byte-identical.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::reference(1);
        let t = TrainConfig::default();
        Self {
            cube: PathBuf::from("cube.hsic"),
            out_dir: PathBuf::from("run"),
            patch_size: m.patch_size,
            pca_bands: m.pca_bands,
            token_spatial: m.token_spatial,
            d_embed: m.d_embed,
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_ff: m.d_ff,
            dropout_rate: m.dropout_rate,
            ln_eps: m.ln_eps,
            attention: m.attention,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            decay: t.decay,
            l2: t.l2,
            l2_all_weights: t.l2_all_weights,
            shuffle: t.shuffle,
            train_frac: 0.25,
            val_frac: 0.25,
            test_frac: 0.5,
            seed: 0,
            timing: true,
        }
    }
}

/// Parses `key=value`; the value is read as JSON when possible and as a
/// bare string otherwise.
fn parse_override(item: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {item:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

impl RunConfig {
    /// Reads `path` (or starts from the defaults) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut map: Map<String, Value> = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => match serde_json::to_value(RunConfig::default()).expect("defaults serialize") {
                Value::Object(m) => m,
                _ => unreachable!(),
            },
        };
        for item in overrides {
            let (key, value) = parse_override(item)?;
            map.insert(key, value);
        }
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self, n_classes: usize) -> ModelConfig {
        ModelConfig {
            patch_size: self.patch_size,
            pca_bands: self.pca_bands,
            token_spatial: self.token_spatial,
            d_embed: self.d_embed,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            dropout_rate: self.dropout_rate,
            ln_eps: self.ln_eps,
            attention: self.attention,
            n_classes,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            decay: self.decay,
            l2: self.l2,
            l2_all_weights: self.l2_all_weights,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec, CliError> {
        SplitSpec::new(self.train_frac, self.val_frac, self.test_frac, self.seed)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Re-checks every module invariant that does not depend on the cube.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model_config(1)
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.split_spec()?;
        Ok(())
    }

    /// Validation plus existence of files the run will read.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        if !self.cube.is_file() {
            return Err(CliError::Usage(format!(
                "cube file {} does not exist",
                self.cube.display()
            )));
        }
        Ok(())
    }
}
