//! Run configuration: config file, then flags, then a hash over the result.

use std::collections::BTreeMap;
use std::path::Path;

use clap::Args;
use grnlink_core::config::{format_key_values, parse_key_values, parse_value};
use grnlink_core::model::ModelConfig;
use grnlink_core::train::TrainConfig;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub density: Option<f64>,
    pub hard_negative_fraction: f64,
    pub seed: Option<u64>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            density: None,
            hard_negative_fraction: 1.0,
            seed: None,
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        match key {
            "train.iterations" => self.train.iterations = parse_value(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse_value(key, value)?,
            "sampling.density" => self.density = Some(parse_value(key, value)?),
            "sampling.hard_negative_fraction" => self.hard_negative_fraction = parse_value(key, value)?,
            "seed" => {
                let s = parse_value(key, value)?;
                self.seed = Some(s);
                self.train.seed = s;
            }
            _ => {
                if !self.model.set(key, value)? {
                    return Err(CliError::input(format!("unknown config key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let map = parse_key_values(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        for (k, v) in &map {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::input("--seed is required"))
    }

    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let mut m = self.model.to_key_values();
        m.insert("train.iterations".into(), self.train.iterations.to_string());
        m.insert("train.learning_rate".into(), self.train.learning_rate.to_string());
        m.insert("sampling.hard_negative_fraction".into(), self.hard_negative_fraction.to_string());
        if let Some(d) = self.density {
            m.insert("sampling.density".into(), d.to_string());
        }
        if let Some(s) = self.seed {
            m.insert("seed".into(), s.to_string());
        }
        m
    }

    pub fn canonical(&self) -> String {
        format_key_values(&self.to_key_values())
    }

    pub fn hash(&self) -> String {
        config_hash(&self.canonical())
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

/// First 16 hex digits of SHA-256.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

pub fn header(seed: u64, hash: &str) -> String {
    format!("seed={seed} config_hash={hash}")
}

/// Flags that override config-file values.
#[derive(Args, Clone, Debug, Default)]
pub struct ConfigFlags {
    /// Flat `key=value` config file; flags override it.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training iterations (full-batch steps).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Adam learning rate.
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// `exact` or `performer`.
    #[arg(long)]
    pub attention: Option<String>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff_dim: Option<usize>,
    /// Random features per head in performer mode.
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub bin_count: Option<usize>,
    /// Comma-separated graph layer widths, e.g. `256,128`.
    #[arg(long)]
    pub gat_widths: Option<String>,
    /// `dot` or `mlp`.
    #[arg(long)]
    pub combiner: Option<String>,
    #[arg(long)]
    pub no_gnn: bool,
    #[arg(long)]
    pub no_encoder: bool,
    #[arg(long)]
    pub mean_pooling: bool,
    /// Any config key, `KEY=VALUE`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigFlags {
    pub fn resolve(&self) -> CliResult<Settings> {
        let mut s = Settings::default();
        if let Some(p) = &self.config {
            s.load_file(p)?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            s.set(k.trim(), v.trim())?;
        }
        let pairs: [(&str, Option<String>); 12] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("train.iterations", self.iterations.map(|v| v.to_string())),
            ("train.learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("encoder.attention", self.attention.clone()),
            ("encoder.embed_dim", self.embed_dim.map(|v| v.to_string())),
            ("encoder.layers", self.layers.map(|v| v.to_string())),
            ("encoder.heads", self.heads.map(|v| v.to_string())),
            ("encoder.ff_dim", self.ff_dim.map(|v| v.to_string())),
            ("encoder.features", self.features.map(|v| v.to_string())),
            ("encoder.bin_count", self.bin_count.map(|v| v.to_string())),
            ("gat.widths", self.gat_widths.clone()),
            ("head.combiner", self.combiner.clone()),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                s.set(k, &v)?;
            }
        }
        for (k, on) in [
            ("ablation.no_gnn", self.no_gnn),
            ("ablation.no_encoder", self.no_encoder),
            ("ablation.mean_pooling", self.mean_pooling),
        ] {
            if on {
                s.set(k, "true")?;
            }
        }
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "# base\ntrain.iterations = 7\nseed=3\nencoder.layers=1\n").unwrap();
        let flags = ConfigFlags {
            config: Some(p),
            iterations: Some(9),
            ..Default::default()
        };
        let s = flags.resolve().unwrap();
        assert_eq!(s.train.iterations, 9);
        assert_eq!(s.seed, Some(3));
        assert_eq!(s.train.seed, 3);
        assert_eq!(s.model.encoder.layers, 1);
    }

    #[test]
    fn hash_tracks_config() {
        let a = Settings::default();
        let mut b = Settings::default();
        assert_eq!(a.hash(), b.hash());
        b.set("train.learning_rate", "0.01").unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        assert!(b.set("nope", "1").is_err());
    }
}
