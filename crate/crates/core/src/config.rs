//! Flat `key=value` form of model configuration, shared by config files and
//! checkpoints.

use std::collections::BTreeMap;

use crate::encoder::AttentionMode;
use crate::error::{Error, Result};
use crate::model::{Combiner, ModelConfig};

/// Parses `key=value` lines. Blank lines and `#` comments are skipped;
/// whitespace around keys and values is trimmed; a repeated key is an error.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, 1, format!("expected key=value, got {line:?}")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::parse(i + 1, 1, "empty key"));
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(Error::parse(i + 1, 1, format!("key {k:?} given twice")));
        }
    }
    Ok(out)
}

pub fn format_key_values(map: &BTreeMap<String, String>) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::validation(format!("invalid value {value:?} for {key}")))
}

pub fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::validation(format!("invalid boolean {value:?} for {key}"))),
    }
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| parse_value(key, s.trim()))
        .collect()
}

impl ModelConfig {
    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let e = &self.encoder;
        let g = &self.gat;
        let h = &self.head;
        let a = &self.ablation;
        let widths = g.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",");
        [
            ("encoder.embed_dim", e.embed_dim.to_string()),
            ("encoder.layers", e.layers.to_string()),
            ("encoder.heads", e.heads.to_string()),
            ("encoder.ff_dim", e.ff_dim.to_string()),
            ("encoder.attention", e.mode.to_string()),
            ("encoder.features", e.features.to_string()),
            ("encoder.bin_count", e.bin_count.to_string()),
            ("encoder.raw_normalization", e.raw_normalization.to_string()),
            ("encoder.feature_seed", e.feature_seed.to_string()),
            ("gat.widths", widths),
            ("gat.type_dim", g.type_dim.to_string()),
            ("gat.relation_dim", g.relation_dim.to_string()),
            ("gat.relation_hidden", g.relation_hidden.to_string()),
            ("head.hidden", h.hidden.to_string()),
            ("head.output", h.output.to_string()),
            ("head.combiner", h.combiner.to_string()),
            ("head.combiner_hidden", h.combiner_hidden.to_string()),
            ("ablation.no_gnn", a.no_gnn.to_string()),
            ("ablation.no_encoder", a.no_encoder.to_string()),
            ("ablation.mean_pooling", a.mean_pooling.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one recognised key; returns `false` for keys this config does
    /// not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let e = &mut self.encoder;
        let g = &mut self.gat;
        let h = &mut self.head;
        let a = &mut self.ablation;
        match key {
            "encoder.embed_dim" => e.embed_dim = parse_value(key, value)?,
            "encoder.layers" => e.layers = parse_value(key, value)?,
            "encoder.heads" => e.heads = parse_value(key, value)?,
            "encoder.ff_dim" => e.ff_dim = parse_value(key, value)?,
            "encoder.attention" => e.mode = value.parse::<AttentionMode>()?,
            "encoder.features" => e.features = parse_value(key, value)?,
            "encoder.bin_count" => e.bin_count = parse_value(key, value)?,
            "encoder.raw_normalization" => e.raw_normalization = parse_bool(key, value)?,
            "encoder.feature_seed" => e.feature_seed = parse_value(key, value)?,
            "gat.widths" => g.widths = parse_list(key, value)?,
            "gat.type_dim" => g.type_dim = parse_value(key, value)?,
            "gat.relation_dim" => g.relation_dim = parse_value(key, value)?,
            "gat.relation_hidden" => g.relation_hidden = parse_value(key, value)?,
            "head.hidden" => h.hidden = parse_value(key, value)?,
            "head.output" => h.output = parse_value(key, value)?,
            "head.combiner" => h.combiner = value.parse::<Combiner>()?,
            "head.combiner_hidden" => h.combiner_hidden = parse_value(key, value)?,
            "ablation.no_gnn" => a.no_gnn = parse_bool(key, value)?,
            "ablation.no_encoder" => a.no_encoder = parse_bool(key, value)?,
            "ablation.mean_pooling" => a.mean_pooling = parse_bool(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Rebuilds a config from a map holding every key of
    /// [`ModelConfig::to_key_values`]; other keys are ignored.
    pub fn from_key_values(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for key in cfg.to_key_values().keys() {
            let v = map
                .get(key)
                .ok_or_else(|| Error::validation(format!("missing config key {key}")))?;
            cfg.set(key, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
