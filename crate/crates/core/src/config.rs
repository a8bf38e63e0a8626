use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Full,
    /// Speech clips and images only; tree leaves are clips.
    Textless,
}

/// Every knob of a run. Defaults follow the published hyperparameter table
/// where it gives a value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Chart hidden width.
    pub d: usize,
    pub d_w: usize,
    pub d_v: usize,
    pub d_s: usize,
    pub d_p: usize,
    pub d_a: usize,
    /// Hidden width of the composition MLPs; `0` means "same as d".
    pub mlp_hidden: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub margin: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub max_text_length: usize,
    pub roi_count: usize,
    pub scf1_threshold: f64,
    pub vad_frame_period: f64,
    /// Adds the voice-activity term to decomposition scores.
    pub voice_activity: bool,
    /// Disables every fusion term, leaving a text-only chart.
    pub text_only: bool,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 400,
            d_w: 400,
            d_v: 2048,
            d_s: 1024,
            d_p: 64,
            d_a: 256,
            mlp_hidden: 0,
            gamma: 0.5,
            lambda: 0.5,
            alpha1: 0.5,
            alpha2: 0.5,
            margin: 1.0,
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 30,
            dropout: 0.1,
            max_text_length: 80,
            roi_count: 36,
            scf1_threshold: 0.5,
            vad_frame_period: 0.01,
            voice_activity: true,
            text_only: false,
            mode: Mode::Full,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Small dimensions for tests and desk-scale experiments.
    pub fn tiny() -> Self {
        RunConfig {
            d: 16,
            d_w: 16,
            d_v: 16,
            d_s: 16,
            d_p: 8,
            d_a: 8,
            ..RunConfig::default()
        }
    }

    pub fn hidden_width(&self) -> usize {
        if self.mlp_hidden == 0 {
            self.d
        } else {
            self.mlp_hidden
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("d_w", self.d_w),
            ("d_v", self.d_v),
            ("d_s", self.d_s),
            ("d_p", self.d_p),
            ("d_a", self.d_a),
            ("batch_size", self.batch_size),
            ("max_text_length", self.max_text_length),
            ("roi_count", self.roi_count),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("config field {name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation("config field dropout must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.scf1_threshold) {
            return Err(Error::Validation("config field scf1_threshold must lie in [0, 1]".into()));
        }
        if self.vad_frame_period <= 0.0 {
            return Err(Error::Validation("config field vad_frame_period must be positive".into()));
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Validation("config field learning_rate must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the architecture-defining fields.
    pub fn dims_hash(&self) -> String {
        let key = format!(
            "d={};d_w={};d_v={};d_s={};d_p={};d_a={};hidden={}",
            self.d,
            self.d_w,
            self.d_v,
            self.d_s,
            self.d_p,
            self.d_a,
            self.hidden_width()
        );
        hex(&Sha256::digest(key.as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
