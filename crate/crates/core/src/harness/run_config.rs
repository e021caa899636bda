//! Run configuration files: flat `key = value` lines, `#` starts a comment.
//!
//! An optional `preset` key (`full`, `sphere`, `tiny`) picks the model
//! defaults that the other model keys then override; it may appear anywhere
//! in the file. Unknown and repeated keys are errors.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::data::{DatasetSpec, ShapeKind};
use crate::architecture::ModelConfig;
use crate::dims::VoxelDims;
use crate::error::{bail, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Sphere,
    Tiny,
}

impl Preset {
    pub fn config(self) -> ModelConfig {
        match self {
            Preset::Full => ModelConfig::default(),
            Preset::Sphere => ModelConfig::sphere_task(),
            Preset::Tiny => ModelConfig::tiny(),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "sphere" => Ok(Preset::Sphere),
            "tiny" => Ok(Preset::Tiny),
            _ => bail!(Config, "unknown preset {s:?} (full, sphere, tiny)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Initial learning rate.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Exponent of the polynomial decay.
    pub poly_power: f64,
    /// Optimizer steps; the schedule reaches zero here.
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Held-out evaluation interval in steps (the last step is always
    /// evaluated).
    pub eval_every: usize,
    /// Trailing dataset samples reserved for evaluation.
    pub holdout: usize,
    pub dataset_count: usize,
    pub dataset_kind: ShapeKind,
    pub noise: f64,
    pub out: Option<PathBuf>,
}

/// Evaluation runs one volume at a time.
pub const EVAL_BATCH_SIZE: usize = 1;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::sphere_task(),
            lr: 0.01,
            momentum: 0.99,
            weight_decay: 3e-5,
            poly_power: 0.9,
            steps: 2000,
            batch_size: 2,
            seed: 0,
            eval_every: 100,
            holdout: 4,
            dataset_count: 24,
            dataset_kind: ShapeKind::Spheres,
            noise: 0.1,
            out: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

impl RunConfig {
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            dims: self.model.input,
            kind: self.dataset_kind,
            num_classes: self.model.num_classes,
            noise: self.noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!(Config, "lr must be positive, got {}", self.lr);
        }
        if !(0.0..1.0).contains(&self.momentum) {
            bail!(Config, "momentum must be in [0, 1), got {}", self.momentum);
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bail!(Config, "weight_decay must be non-negative, got {}", self.weight_decay);
        }
        if !(self.poly_power >= 0.0 && self.poly_power.is_finite()) {
            bail!(Config, "poly_power must be non-negative, got {}", self.poly_power);
        }
        if self.steps == 0 || self.batch_size == 0 || self.eval_every == 0 {
            bail!(Config, "steps, batch_size and eval_every must be at least 1");
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "poly_power" => self.poly_power = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "holdout" => self.holdout = parse(key, value)?,
            "dataset_count" => self.dataset_count = parse(key, value)?,
            "dataset_kind" => self.dataset_kind = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "noise" => self.noise = parse(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return self.model.set(key, value),
        }
        Ok(true)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!(Config, "line {}: expected key = value, got {line:?}", n + 1);
            };
            let (k, v) = (k.trim(), v.trim());
            if entries.iter().any(|(_, key, _)| *key == k) {
                bail!(Config, "line {}: key {k:?} repeated", n + 1);
            }
            entries.push((n + 1, k, v));
        }
        let preset = match entries.iter().find(|(_, k, _)| *k == "preset") {
            Some((_, _, v)) => Preset::parse(v)?,
            None => Preset::Sphere,
        };
        let mut cfg = RunConfig { model: preset.config(), ..RunConfig::default() };
        for (line, k, v) in entries {
            if k == "preset" {
                continue;
            }
            let known = cfg.set(k, v).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
            if !known {
                bail!(Config, "line {line}: unknown key {k:?}");
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Text that [`RunConfig::parse`] reads back to an equal value.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# model\n");
        out += &self.model.to_text();
        out += "\n# optimizer\n";
        for (k, v) in [
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("poly_power", self.poly_power.to_string()),
            ("steps", self.steps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("holdout", self.holdout.to_string()),
            ("dataset_count", self.dataset_count.to_string()),
            ("dataset_kind", self.dataset_kind.to_string()),
            ("noise", self.noise.to_string()),
        ] {
            out += &format!("{k} = {v}\n");
        }
        if let Some(p) = &self.out {
            out += &format!("out = {}\n", p.display());
        }
        out
    }

    pub fn with_input(mut self, input: VoxelDims) -> Self {
        self.model.input = input;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig { steps: 7, seed: 99, dataset_kind: ShapeKind::Nested, ..RunConfig::default() };
        cfg.model.num_classes = 3;
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn preset_and_overrides() {
        let cfg = RunConfig::parse("channels = 6 # narrower\npreset = tiny\nsteps=3\n").unwrap();
        assert_eq!(cfg.model.channels, 6);
        assert_eq!(cfg.model.input, ModelConfig::tiny().input);
        assert_eq!(cfg.steps, 3);
        assert_eq!(cfg.momentum, 0.99);
    }

    #[test]
    fn unknown_and_repeated_keys_rejected() {
        let msg = RunConfig::parse("stepz = 3").unwrap_err().to_string();
        assert!(msg.contains("line 1") && msg.contains("stepz"), "{msg}");
        assert!(RunConfig::parse("steps = 3\nsteps = 4").is_err());
        assert!(RunConfig::parse("momentum = 1.0").is_err());
        assert!(RunConfig::parse("lr = 0").is_err());
    }
}
