//! Model / training / raster configuration, presets, and the on-disk
//! key-value config format (TOML sections `[model]`, `[train]`, `[raster]`).
//!
//! The `desk` preset is sized for CPU experiments; the `paper` preset
//! carries the full-scale dimensions (ViT-Base encoder trimmed to a
//! 512-feature latent, 8-dim noise, an 8-layer decoder, 40+40 epochs at
//! batch 1024).

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::scenegen::raster::RasterConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Hypotheses per scene.
    pub k: usize,
    /// Prediction horizon, steps.
    pub horizon: usize,
    /// Raster channels consumed by the patch embedding.
    pub in_channels: usize,
    pub patch_size: usize,
    pub enc_layers: usize,
    pub enc_dim: usize,
    pub enc_heads: usize,
    pub latent_dim: usize,
    pub noise_dim: usize,
    pub dec_layers: usize,
    pub dec_dim: usize,
    pub dec_heads: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            k: 5,
            horizon: 25,
            in_channels: 12,
            patch_size: 8,
            enc_layers: 4,
            enc_dim: 128,
            enc_heads: 4,
            latent_dim: 64,
            noise_dim: 8,
            dec_layers: 2,
            dec_dim: 256,
            dec_heads: 4,
        }
    }

    pub fn paper() -> Self {
        ModelConfig {
            k: 5,
            horizon: 25,
            in_channels: 12,
            patch_size: 16,
            enc_layers: 12,
            enc_dim: 768,
            enc_heads: 12,
            latent_dim: 512,
            noise_dim: 8,
            dec_layers: 8,
            dec_dim: 2048,
            dec_heads: 8,
        }
    }

    pub fn validate(&self, raster: &RasterConfig) -> Result<()> {
        if self.k == 0 || self.horizon == 0 {
            return Err(Error::Config("k and horizon must be at least 1".into()));
        }
        if self.enc_dim % self.enc_heads != 0 {
            return Err(Error::Config(format!(
                "enc_dim {} not divisible by enc_heads {}",
                self.enc_dim, self.enc_heads
            )));
        }
        if self.dec_dim % self.dec_heads != 0 {
            return Err(Error::Config(format!(
                "dec_dim {} not divisible by dec_heads {}",
                self.dec_dim, self.dec_heads
            )));
        }
        if raster.height % self.patch_size != 0 || raster.width % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "raster {}x{} not divisible by patch size {}",
                raster.height, raster.width, self.patch_size
            )));
        }
        if self.in_channels != raster.channels {
            return Err(Error::Config(format!(
                "model expects {} raster channels, raster has {}",
                self.in_channels, raster.channels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs_adamw: usize,
    pub epochs_sgd: usize,
    pub lr_adamw: f32,
    pub lr_sgd: f32,
    pub weight_decay: f32,
    pub batch_size: usize,
    /// None derives 5% of each phase's steps.
    pub warmup_steps: Option<usize>,
    pub min_lr: f32,
    /// SGD restart period in steps; None derives a quarter of the
    /// post-warmup phase.
    pub restart_period: Option<usize>,
    pub seed: u64,
    /// Weight of the uncertainty RMSE term.
    pub lambda: f32,
    /// Encoder dropout rate during training.
    pub dropout: f32,
    /// Gradient clipping, global L2 norm.
    pub clip_norm: f32,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            epochs_adamw: 10,
            epochs_sgd: 10,
            lr_adamw: 1e-4,
            lr_sgd: 1e-3,
            weight_decay: 1e-2,
            batch_size: 32,
            warmup_steps: None,
            min_lr: 1e-6,
            restart_period: None,
            seed: 0,
            lambda: 1.0,
            dropout: 0.1,
            clip_norm: 1.0,
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            epochs_adamw: 40,
            epochs_sgd: 40,
            batch_size: 1024,
            ..TrainConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr_adamw", self.lr_adamw),
            ("lr_sgd", self.lr_sgd),
            ("lambda + 1", self.lambda + 1.0),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.weight_decay < 0.0 || self.dropout < 0.0 || self.dropout >= 1.0 {
            return Err(Error::Config(
                "weight_decay must be >= 0 and dropout in [0, 1)".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Fully resolved run configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub raster: RasterConfig,
}

impl Config {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Config {
                model: ModelConfig::desk(),
                train: TrainConfig::desk(),
                raster: RasterConfig::default(),
            }),
            "paper" => Ok(Config {
                model: ModelConfig::paper(),
                train: TrainConfig::paper(),
                raster: RasterConfig::default(),
            }),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected desk or paper)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.raster.validate()?;
        self.model.validate(&self.raster)?;
        self.train.validate()
    }

    /// Apply a key-value config file on top of this configuration.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        let overlay: FileOverlay = toml::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        overlay.apply(self);
        Ok(())
    }
}

macro_rules! overlay {
    ($src:expr, $dst:expr; $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $src.$field { $dst.$field = v; })+
    };
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileOverlay {
    model: Option<ModelOverlay>,
    train: Option<TrainOverlay>,
    raster: Option<RasterOverlay>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelOverlay {
    k: Option<usize>,
    horizon: Option<usize>,
    in_channels: Option<usize>,
    patch_size: Option<usize>,
    enc_layers: Option<usize>,
    enc_dim: Option<usize>,
    enc_heads: Option<usize>,
    latent_dim: Option<usize>,
    noise_dim: Option<usize>,
    dec_layers: Option<usize>,
    dec_dim: Option<usize>,
    dec_heads: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverlay {
    epochs_adamw: Option<usize>,
    epochs_sgd: Option<usize>,
    lr_adamw: Option<f32>,
    lr_sgd: Option<f32>,
    weight_decay: Option<f32>,
    batch_size: Option<usize>,
    warmup_steps: Option<usize>,
    min_lr: Option<f32>,
    restart_period: Option<usize>,
    seed: Option<u64>,
    lambda: Option<f32>,
    dropout: Option<f32>,
    clip_norm: Option<f32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RasterOverlay {
    channels: Option<usize>,
    height: Option<usize>,
    width: Option<usize>,
    meters_per_pixel: Option<f32>,
}

impl FileOverlay {
    fn apply(&self, config: &mut Config) {
        if let Some(m) = &self.model {
            overlay!(m, config.model;
                k, horizon, in_channels, patch_size, enc_layers, enc_dim,
                enc_heads, latent_dim, noise_dim, dec_layers, dec_dim, dec_heads);
        }
        if let Some(t) = &self.train {
            overlay!(t, config.train;
                epochs_adamw, epochs_sgd, lr_adamw, lr_sgd, weight_decay,
                batch_size, min_lr, seed, lambda, dropout, clip_norm);
            if t.warmup_steps.is_some() {
                config.train.warmup_steps = t.warmup_steps;
            }
            if t.restart_period.is_some() {
                config.train.restart_period = t.restart_period;
            }
        }
        if let Some(r) = &self.raster {
            overlay!(r, config.raster; channels, height, width, meters_per_pixel);
        }
    }
}

/// Render a config as the same key-value format `apply_file` accepts;
/// embedded in run manifests.
pub fn render_config(config: &Config) -> String {
    let m = &config.model;
    let t = &config.train;
    let r = &config.raster;
    let mut s = String::new();
    s.push_str("[model]\n");
    for (k, v) in [
        ("k", m.k),
        ("horizon", m.horizon),
        ("in_channels", m.in_channels),
        ("patch_size", m.patch_size),
        ("enc_layers", m.enc_layers),
        ("enc_dim", m.enc_dim),
        ("enc_heads", m.enc_heads),
        ("latent_dim", m.latent_dim),
        ("noise_dim", m.noise_dim),
        ("dec_layers", m.dec_layers),
        ("dec_dim", m.dec_dim),
        ("dec_heads", m.dec_heads),
    ] {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str("\n[train]\n");
    s.push_str(&format!("epochs_adamw = {}\n", t.epochs_adamw));
    s.push_str(&format!("epochs_sgd = {}\n", t.epochs_sgd));
    s.push_str(&format!("lr_adamw = {}\n", t.lr_adamw));
    s.push_str(&format!("lr_sgd = {}\n", t.lr_sgd));
    s.push_str(&format!("weight_decay = {}\n", t.weight_decay));
    s.push_str(&format!("batch_size = {}\n", t.batch_size));
    if let Some(w) = t.warmup_steps {
        s.push_str(&format!("warmup_steps = {w}\n"));
    }
    s.push_str(&format!("min_lr = {}\n", t.min_lr));
    if let Some(p) = t.restart_period {
        s.push_str(&format!("restart_period = {p}\n"));
    }
    s.push_str(&format!("seed = {}\n", t.seed));
    s.push_str(&format!("lambda = {}\n", t.lambda));
    s.push_str(&format!("dropout = {}\n", t.dropout));
    s.push_str(&format!("clip_norm = {}\n", t.clip_norm));
    s.push_str("\n[raster]\n");
    s.push_str(&format!("channels = {}\n", r.channels));
    s.push_str(&format!("height = {}\n", r.height));
    s.push_str(&format!("width = {}\n", r.width));
    s.push_str(&format!("meters_per_pixel = {}\n", r.meters_per_pixel));
    s
}
