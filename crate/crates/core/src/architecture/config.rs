use serde::Serialize;

use std::str::FromStr;

use crate::dims::{GridDims, KernelDims, PatchDims, UnitDims, VoxelDims, AXIS_NAMES};
use crate::error::{bail, Result};
use crate::params::DEFAULT_LN_EPS;

pub const STAGES: usize = 4;
/// Down-samplings between encoder stages.
pub const DOWNSAMPLINGS: usize = STAGES - 1;

/// Every architectural hyperparameter. Extents are ordered depth, height,
/// width throughout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelConfig {
    pub input: VoxelDims,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Stage-1 channel width; stage `i` uses `channels · 2^i`.
    pub channels: usize,
    pub patch: PatchDims,
    /// Local/global module pairs per stage.
    pub depths: [usize; STAGES],
    pub heads: [usize; STAGES],
    pub units: [UnitDims; STAGES],
    pub mlp_ratio: usize,
    pub dpe_kernel: KernelDims,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    /// Full-scale configuration at the 64×128×128 benchmark input.
    fn default() -> Self {
        ModelConfig {
            input: VoxelDims::new(64, 128, 128),
            in_channels: 1,
            num_classes: 9,
            channels: 96,
            patch: PatchDims::new(2, 4, 4),
            depths: [1, 1, 3, 1],
            heads: [3, 6, 12, 24],
            units: [UnitDims::cube(4); STAGES],
            mlp_ratio: 4,
            dpe_kernel: KernelDims::cube(3),
            ln_eps: DEFAULT_LN_EPS,
        }
    }
}

impl ModelConfig {
    /// Small two-class model on 16×32×32 volumes used by the sphere task.
    pub fn sphere_task() -> Self {
        ModelConfig {
            input: VoxelDims::new(16, 32, 32),
            num_classes: 2,
            channels: 16,
            heads: [2, 2, 4, 4],
            units: [UnitDims::cube(2), UnitDims::cube(2), UnitDims::cube(2), UnitDims::cube(1)],
            ..ModelConfig::default()
        }
    }

    /// Gradient-check sized model: 8×16×16 input with 1×2×2 patches.
    pub fn tiny() -> Self {
        ModelConfig {
            input: VoxelDims::new(8, 16, 16),
            num_classes: 2,
            channels: 3,
            patch: PatchDims::new(1, 2, 2),
            depths: [1, 1, 1, 1],
            heads: [1, 2, 3, 4],
            units: [UnitDims::cube(2), UnitDims::cube(2), UnitDims::cube(2), UnitDims::cube(1)],
            ..ModelConfig::default()
        }
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.channels << stage
    }

    /// Patch grid right after embedding.
    pub fn base_grid(&self) -> GridDims {
        GridDims::new(self.input.d / self.patch.d, self.input.h / self.patch.h, self.input.w / self.patch.w)
    }

    pub fn stage_grid(&self, stage: usize) -> GridDims {
        let g = self.base_grid();
        GridDims::new(g.d >> stage, g.h >> stage, g.w >> stage)
    }

    pub fn patch_voxels(&self) -> usize {
        self.patch.volume()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.channels == 0 || self.mlp_ratio == 0 {
            bail!(Config, "in_channels, channels and mlp_ratio must be positive");
        }
        if self.num_classes < 2 || self.num_classes > 255 {
            bail!(Config, "num_classes must be in 2..=255, got {}", self.num_classes);
        }
        if !(self.ln_eps > 0.0) {
            bail!(Config, "ln_eps must be positive, got {}", self.ln_eps);
        }
        for (axis, k) in self.dpe_kernel.as_array().into_iter().enumerate() {
            if k % 2 == 0 {
                bail!(Config, "DPE kernel {} extent {k} must be odd", AXIS_NAMES[axis]);
            }
        }
        let input = self.input.as_array();
        let patch = self.patch.as_array();
        for axis in 0..3 {
            let step = patch[axis] << DOWNSAMPLINGS;
            if patch[axis] == 0 || input[axis] % step != 0 {
                bail!(
                    Config,
                    "input {} extent {} is not divisible by patch extent {} times {}",
                    AXIS_NAMES[axis],
                    input[axis],
                    patch[axis],
                    1 << DOWNSAMPLINGS
                );
            }
        }
        for stage in 0..STAGES {
            if self.depths[stage] == 0 {
                bail!(Config, "stage {} has zero depth", stage + 1);
            }
            let c = self.stage_channels(stage);
            let heads = self.heads[stage];
            if heads == 0 || c % heads != 0 {
                bail!(Config, "stage {} heads {heads} do not divide {c} channels", stage + 1);
            }
            let grid = self.stage_grid(stage).as_array();
            let unit = self.units[stage].as_array();
            for axis in 0..3 {
                if unit[axis] == 0 || grid[axis] % unit[axis] != 0 {
                    bail!(
                        Config,
                        "stage {} grid {} extent {} is not divisible by unit extent {}",
                        stage + 1,
                        AXIS_NAMES[axis],
                        grid[axis],
                        unit[axis]
                    );
                }
            }
        }
        Ok(())
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e| crate::Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<[T; STAGES]>
where
    T::Err: std::fmt::Display,
{
    let items = value.split(',').map(|v| parse_value(key, v)).collect::<Result<Vec<T>>>()?;
    let n = items.len();
    items
        .try_into()
        .map_err(|_| crate::Error::Config(format!("{key}: expected {STAGES} comma-separated values, got {n}")))
}

fn render_list<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ModelConfig {
    /// Keys accepted by [`ModelConfig::set`], in rendering order.
    pub const KEYS: [&'static str; 11] = [
        "input",
        "in_channels",
        "num_classes",
        "channels",
        "patch",
        "depths",
        "heads",
        "units",
        "mlp_ratio",
        "dpe_kernel",
        "ln_eps",
    ];

    /// Assigns one field from its text form. Returns `Ok(false)` for keys
    /// that are not model fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "input" => self.input = parse_value(key, value)?,
            "in_channels" => self.in_channels = parse_value(key, value)?,
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "channels" => self.channels = parse_value(key, value)?,
            "patch" => self.patch = parse_value(key, value)?,
            "depths" => self.depths = parse_list(key, value)?,
            "heads" => self.heads = parse_list(key, value)?,
            "units" => self.units = parse_list(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse_value(key, value)?,
            "dpe_kernel" => self.dpe_kernel = parse_value(key, value)?,
            "ln_eps" => self.ln_eps = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key = value` pairs that [`ModelConfig::set`] reads back exactly.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let values = [
            self.input.to_string(),
            self.in_channels.to_string(),
            self.num_classes.to_string(),
            self.channels.to_string(),
            self.patch.to_string(),
            render_list(&self.depths),
            render_list(&self.heads),
            render_list(&self.units),
            self.mlp_ratio.to_string(),
            self.dpe_kernel.to_string(),
            self.ln_eps.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Parses the output of [`ModelConfig::to_text`]; every key is required.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let Some((k, v)) = line.split_once('=') else {
                bail!(Config, "expected key = value, got {line:?}");
            };
            let k = k.trim();
            if !cfg.set(k, v.trim())? {
                bail!(Config, "unknown model key {k:?}");
            }
            seen.push(k.to_string());
        }
        if let Some(missing) = Self::KEYS.iter().find(|k| !seen.iter().any(|s| s == *k)) {
            bail!(Config, "model key {missing:?} missing");
        }
        Ok(cfg)
    }
}
