use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{AttentionValues, Dropout, EncoderConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::spanspace::check_ratio;

/// Training configuration, read from a flat TOML table. Every key is
/// optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_widths: Vec<usize>,
    pub hidden: usize,
    pub width_dim: usize,
    pub max_width: usize,
    pub contextual_dim: usize,
    pub attention_values: AttentionValues,
    pub ffnn_hidden: usize,
    pub ffnn_layers: usize,
    /// Beam ratio for coreference candidates.
    pub beam_coref: f64,
    /// Beam ratio for relation candidates.
    pub beam_relation: f64,
    pub weight_entity: f64,
    pub weight_relation: f64,
    pub weight_coref: f64,
    pub dropout_input: f64,
    pub dropout_lstm: f64,
    pub dropout_ffnn: f64,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied every `decay_steps`.
    pub decay_rate: f64,
    pub decay_steps: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub max_steps: usize,
    /// Dev evaluation period in steps; 0 evaluates only at the end.
    pub eval_every: usize,
    pub seed: u64,
    /// Where the best checkpoint is written during training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            word_dim: 100,
            char_dim: 8,
            char_filters: 50,
            char_widths: vec![3, 4, 5],
            hidden: 200,
            width_dim: 20,
            max_width: 8,
            contextual_dim: 0,
            attention_values: AttentionValues::States,
            ffnn_hidden: 150,
            ffnn_layers: 2,
            beam_coref: 0.3,
            beam_relation: 0.4,
            weight_entity: 1.0,
            weight_relation: 1.0,
            weight_coref: 1.0,
            dropout_input: 0.5,
            dropout_lstm: 0.4,
            dropout_ffnn: 0.4,
            learning_rate: 1e-3,
            decay_rate: 0.999,
            decay_steps: 100,
            clip_norm: 5.0,
            max_steps: 10_000,
            eval_every: 500,
            seed: 0,
            checkpoint: None,
        }
    }
}

/// Task weights of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub entity: f64,
    pub relation: f64,
    pub coref: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { entity: 1.0, relation: 1.0, coref: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.entity, self.relation, self.coref];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("task weights must be finite and nonnegative".into()));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::Config("at least one task weight must be positive".into()));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&crate::io::read_to_string(path)?)
    }

    /// Applies `key=value` overrides, where the value uses TOML syntax
    /// (`hidden=64`, `char_widths=[3,4]`, `attention_values="inputs"`).
    /// A bare word that is not valid TOML is taken as a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let key = key.trim();
            let raw = raw.trim();
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            table.insert(key.to_string(), value);
        }
        let config: TrainConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        check_ratio(self.beam_coref)?;
        check_ratio(self.beam_relation)?;
        for (name, p) in [("dropout_input", self.dropout_input), ("dropout_lstm", self.dropout_lstm), ("dropout_ffnn", self.dropout_ffnn)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {p}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) || self.decay_steps == 0 {
            return Err(Error::Config("decay_rate must be in (0, 1] and decay_steps positive".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("clip_norm must be nonnegative".into()));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                word_dim: self.word_dim,
                char_dim: self.char_dim,
                char_filters: self.char_filters,
                char_widths: self.char_widths.clone(),
                hidden: self.hidden,
                width_dim: self.width_dim,
                max_width: self.max_width,
                contextual_dim: self.contextual_dim,
                attention_values: self.attention_values,
            },
            ffnn_hidden: self.ffnn_hidden,
            ffnn_layers: self.ffnn_layers,
            beam_coref: self.beam_coref,
            beam_relation: self.beam_relation,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { entity: self.weight_entity, relation: self.weight_relation, coref: self.weight_coref }
    }

    pub fn dropout(&self) -> Dropout {
        Dropout { input: self.dropout_input, lstm: self.dropout_lstm, ffnn: self.dropout_ffnn }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
