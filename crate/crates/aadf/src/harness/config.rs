//! Run configuration: every knob of a run, serialized verbatim into each
//! output directory as a flat `key=value` text file so reruns are exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::attacks::{derive_seed, AttackRanges};
use crate::error::{Error, Result};
use crate::objective::{LossResolution, LossWeights};
use crate::priors::PriorConfig;
use crate::protocol::{DefenseConfig, TrainConfig, TrainMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub working_size: usize,
    pub mask_grid: usize,
    pub d_u: usize,
    /// Compute mask-side losses on upsampled logits at working resolution
    /// (default) instead of on the native mask grid.
    pub loss_at_working_res: bool,
    /// Train the clean-only baseline instead of red-team training.
    pub clean_only: bool,
    pub init_seed: u64,
    /// Seeds the one-instance-per-family attacks of the evaluation pairing.
    pub eval_seed: u64,
    /// Weak-localization threshold and dilation radius for reports.
    pub loc_theta: f64,
    pub loc_dilate_radius: usize,
    pub prior: PriorConfig,
    pub train: TrainConfig,
    pub defense: DefenseConfig,
    pub loss: LossWeights,
    pub ranges: AttackRanges,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            working_size: 384,
            mask_grid: 32,
            d_u: 16,
            loss_at_working_res: true,
            clean_only: false,
            init_seed: 0,
            eval_seed: 0,
            loc_theta: 0.5,
            loc_dilate_radius: 8,
            prior: PriorConfig::default(),
            train: TrainConfig::default(),
            defense: DefenseConfig::default(),
            loss: LossWeights::default(),
            ranges: AttackRanges::default(),
        }
    }
}

impl RunConfig {
    /// Defaults with all sub-seeds derived from one master seed.
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.init_seed = derive_seed(seed, "init", 0, 0);
        cfg.eval_seed = derive_seed(seed, "eval", 0, 0);
        cfg.train.global_seed = derive_seed(seed, "train", 0, 0);
        cfg.defense.seed = derive_seed(seed, "defense", 0, 0);
        cfg
    }

    pub fn loss_resolution(&self) -> LossResolution {
        if self.loss_at_working_res {
            LossResolution::WorkingRes
        } else {
            LossResolution::MaskGrid
        }
    }

    pub fn train_mode(&self) -> TrainMode {
        if self.clean_only {
            TrainMode::CleanOnly
        } else {
            TrainMode::RedTeam
        }
    }

    pub fn detector_config(&self) -> crate::detector::DetectorConfig {
        crate::detector::DetectorConfig {
            mask_grid: self.mask_grid,
            d_u: self.d_u,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.working_size < 16 || self.working_size < self.mask_grid {
            return Err(Error::Invalid(
                "working size must be >= 16 and >= the mask grid".into(),
            ));
        }
        self.train.validate()
    }

    /// Flat `key=value` lines, keys dotted and sorted.
    pub fn to_kv_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut flat = BTreeMap::new();
        flatten("", &value, &mut flat);
        let mut out = String::new();
        for (k, v) in flat {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut root = Node::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("config line {}: no '='", lineno + 1)))?;
            root.insert(key, value)?;
        }
        let value = root.into_value()?;
        serde_json::from_value(value).map_err(|e| Error::Invalid(format!("config parse: {e}")))
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_kv_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_text(&text)
    }
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, String>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), v, out);
            }
        }
        Value::Null => {
            out.insert(prefix.to_string(), "null".to_string());
        }
        Value::Bool(b) => {
            out.insert(prefix.to_string(), b.to_string());
        }
        Value::Number(n) => {
            out.insert(prefix.to_string(), n.to_string());
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
    }
}

#[derive(Default)]
struct Node {
    leaf: Option<String>,
    children: BTreeMap<String, Node>,
}

impl Node {
    fn insert(&mut self, key: &str, value: &str) -> Result<()> {
        let mut node = self;
        for part in key.split('.') {
            node = node.children.entry(part.to_string()).or_default();
        }
        if node.leaf.is_some() {
            return Err(Error::Invalid(format!("duplicate config key '{key}'")));
        }
        node.leaf = Some(value.to_string());
        Ok(())
    }

    fn into_value(self) -> Result<Value> {
        if let Some(leaf) = self.leaf {
            return Ok(parse_scalar(&leaf));
        }
        let is_array = !self.children.is_empty()
            && self.children.keys().all(|k| k.parse::<usize>().is_ok());
        if is_array {
            let mut indexed: Vec<(usize, Node)> = self
                .children
                .into_iter()
                .map(|(k, v)| (k.parse::<usize>().unwrap(), v))
                .collect();
            indexed.sort_by_key(|(i, _)| *i);
            let mut items = Vec::with_capacity(indexed.len());
            for (_, node) in indexed {
                items.push(node.into_value()?);
            }
            Ok(Value::Array(items))
        } else {
            let mut map = serde_json::Map::new();
            for (k, v) in self.children {
                map.insert(k, v.into_value()?);
            }
            Ok(Value::Object(map))
        }
    }
}

fn parse_scalar(text: &str) -> Value {
    match text {
        "true" => return Value::Bool(true),
        "false" => return Value::Bool(false),
        "null" => return Value::Null,
        _ => {}
    }
    if let Ok(n) = serde_json::from_str::<serde_json::Number>(text) {
        return Value::Number(n);
    }
    Value::String(text.to_string())
}
