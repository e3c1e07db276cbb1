use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// Model, training and ablation settings. Serialized as a flat JSON object;
/// missing keys take the desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Model dimension.
    pub d: usize,
    /// Hidden width of the graph module's `W1`/`W2`.
    pub d_n: usize,
    /// Hidden size of each LSTM direction.
    pub d_lstm: usize,
    /// Sinusoidal embedding width per coordinate offset.
    pub d_sinu: usize,
    /// Feed-forward width of the fusion encoder.
    pub d_ff: usize,
    pub heads: usize,
    /// Neighbours kept per row of the similarity matrix.
    pub k: usize,
    /// Maximum characters per segment.
    pub max_len: usize,
    pub backbone_channels: usize,
    pub roi_grid: usize,
    pub dropout: f64,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every_epochs: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Stop once the validation F1 reaches this value.
    pub stop_at_val_f1: Option<f64>,
    /// Pin illegal BIO transitions to a large negative score.
    pub strict_transitions: bool,
    pub no_text: bool,
    pub no_visual: bool,
    pub no_spatial: bool,
    pub no_graph: bool,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            d: 64,
            d_n: 64,
            d_lstm: 64,
            d_sinu: 128,
            d_ff: 128,
            heads: 8,
            k: 4,
            max_len: 24,
            backbone_channels: 8,
            roi_grid: 3,
            dropout: 0.1,
            lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_every_epochs: 50,
            epochs: 100,
            grad_clip: 5.0,
            seed: 0,
            stop_at_val_f1: None,
            strict_transitions: false,
            no_text: false,
            no_visual: false,
            no_spatial: false,
            no_graph: false,
            data_dir: None,
            out_dir: None,
        }
    }
}

impl Config {
    /// Full-scale settings (512-wide model, lr 1e-4).
    pub fn full_scale() -> Self {
        Self {
            d: 512,
            d_n: 512,
            d_lstm: 512,
            d_sinu: 1024,
            d_ff: 2048,
            lr: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.d_n == 0 || self.d_lstm == 0 || self.d_ff == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return fail(format!("heads ({}) must divide d ({})", self.heads, self.d));
        }
        if self.d_sinu == 0 || !self.d_sinu.is_multiple_of(2) {
            return fail(format!("d_sinu ({}) must be even and positive", self.d_sinu));
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.max_len == 0 || self.roi_grid == 0 || self.backbone_channels == 0 {
            return fail("max_len, roi_grid and backbone_channels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.lr_decay_every_epochs == 0 {
            return fail("lr_decay_every_epochs must be positive".into());
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = (epoch / self.lr_decay_every_epochs) as i32;
        self.lr * self.lr_decay_factor.powi(decays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ablation_label(&self) -> &'static str {
        match (self.no_text, self.no_visual, self.no_spatial, self.no_graph) {
            (false, false, false, false) => "full",
            (true, false, false, false) => "w/o text",
            (false, true, false, false) => "w/o visual",
            (false, false, true, false) => "w/o spatial",
            (false, false, false, true) => "w/o graph",
            _ => "custom",
        }
    }
}
