//! Training configuration, readable from JSON or TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Working precision of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "f64")]
    F64,
}

/// Which frozen 2D backbone to use: the seeded fixed-random stack or
/// externally trained weights loaded from a file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Backbone2d {
    Name(String),
    External { external: PathBuf },
}

impl Backbone2d {
    pub fn tiny_cnn() -> Self {
        Backbone2d::Name("tiny-cnn".into())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Backbone2d::Name(n) if n == "tiny-cnn" => Ok(()),
            Backbone2d::Name(n) => {
                Err(Error::invalid(format!("unknown 2D backbone {n:?}; use \"tiny-cnn\"")))
            }
            Backbone2d::External { .. } => Ok(()),
        }
    }
}

/// All knobs of a pre-training run. Config files mirror these field
/// names exactly (`L` keeps its upper-case spelling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_point_branch: f64,
    pub lr_image_branch: f64,
    pub weight_decay: f64,
    pub tau: f64,
    /// Local regions per cloud.
    #[serde(rename = "L")]
    pub l: usize,
    /// Latent dimension.
    pub d: usize,
    pub use_local_loss: bool,
    pub use_global_loss: bool,
    pub use_pose: bool,
    pub use_normals: bool,
    pub seed: u64,
    pub backbone2d: Backbone2d,
    /// kNN neighbors in the 3D backbone.
    pub k: usize,
    pub precision: Precision,
    /// Extra checkpoints every this many steps (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 32,
            lr_point_branch: 1e-3,
            lr_image_branch: 5e-5,
            weight_decay: 1e-6,
            tau: 0.07,
            l: 64,
            d: 512,
            use_local_loss: true,
            use_global_loss: true,
            use_pose: true,
            use_normals: false,
            seed: 0,
            backbone2d: Backbone2d::tiny_cnn(),
            k: 20,
            precision: Precision::F32,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.l == 0 || self.d == 0 || self.k == 0 {
            return Err(Error::invalid("epochs, batch_size, L, d and k must be positive"));
        }
        if self.lr_point_branch <= 0.0 || self.lr_image_branch <= 0.0 {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        if self.tau <= 0.0 {
            return Err(Error::invalid("tau must be positive"));
        }
        if !self.use_local_loss && !self.use_global_loss {
            return Err(Error::invalid("at least one loss component must be enabled"));
        }
        self.backbone2d.validate()
    }

    /// Parses a config file; `.toml` goes through TOML, everything else
    /// through JSON.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
            Self::from_toml_str(&text)?
        } else {
            Self::from_json_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON form used in checkpoints and for hashing.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Stable hash of the canonical JSON; identifies ablation cells.
    pub fn hash(&self) -> u64 {
        crate::nn::fnv1a64(self.to_json().to_string().into_bytes())
    }

    /// Field-by-field comparison, used by resume to report mismatches.
    pub fn diff_fields(&self, other: &TrainConfig) -> Vec<String> {
        let a = self.to_json();
        let b = other.to_json();
        let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
            return vec!["<config not an object>".into()];
        };
        let mut out = Vec::new();
        for (key, va) in a {
            match b.get(key) {
                Some(vb) if va == vb => {}
                Some(vb) => out.push(format!("{key}: {va} != {vb}")),
                None => out.push(format!("{key}: missing on one side")),
            }
        }
        out
    }
}
