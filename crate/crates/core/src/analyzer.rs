//! Parameter and multiply accounting from configuration alone.
//!
//! Everything here is integer arithmetic over shapes; nothing is allocated
//! or executed, so the counts serve as an independent check on the built
//! network and on the instrumented forward pass. One multiply-accumulate is
//! one FLOP; activations, normalization, softmax and bias adds are free.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::architecture::{ModelConfig, STAGES};
use crate::attention::{attention_complexity, ls_msa, AttentionParams};
use crate::dims::{GridDims, UnitDims, VoxelDims};
use crate::error::{bail, Result};
use crate::params::{self, ParamTree};
use crate::tensor::{flops, Tape, Tensor};

/// One row of the accounting breakdown.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ComponentCount {
    pub component: String,
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ComplexityReport {
    pub input: VoxelDims,
    pub total_params: u64,
    pub total_flops: u64,
    pub components: Vec<ComponentCount>,
}

fn linear_params(fan_in: u64, fan_out: u64) -> u64 {
    fan_in * fan_out + fan_out
}

struct Breakdown(Vec<ComponentCount>);

impl Breakdown {
    fn push(&mut self, component: String, params: u64, flops: u64) {
        self.0.push(ComponentCount { component, params, flops });
    }

    fn block(&mut self, cfg: &ModelConfig, path: &str, stage: usize) {
        let c = cfg.stage_channels(stage) as u64;
        let grid = cfg.stage_grid(stage);
        let n = grid.volume() as u64;
        let hidden = c * cfg.mlp_ratio as u64;
        let modules = 2 * cfg.depths[stage] as u64;
        let kvol = cfg.dpe_kernel.volume() as u64;
        self.push(format!("{path}.dpe"), c * kvol + c, n * c * kvol);
        self.push(
            format!("{path}.attention"),
            modules * 4 * linear_params(c, c),
            modules * attention_complexity(grid, c as usize, Some(cfg.units[stage])),
        );
        self.push(
            format!("{path}.mlp"),
            modules * (linear_params(c, hidden) + linear_params(hidden, c)),
            modules * 2 * n * c * hidden,
        );
        self.push(format!("{path}.norm"), modules * 4 * c, 0);
    }
}

/// Full breakdown for `cfg` at its configured input size.
pub fn analyze(cfg: &ModelConfig) -> Result<ComplexityReport> {
    cfg.validate()?;
    let mut b = Breakdown(Vec::new());
    let c0 = cfg.channels as u64;
    let p = cfg.patch_voxels() as u64;
    let n0 = cfg.base_grid().volume() as u64;
    let embed_in = cfg.in_channels as u64 * p;
    b.push("embed".into(), linear_params(embed_in, c0), n0 * embed_in * c0);
    for stage in 0..STAGES {
        b.block(cfg, &format!("encoder.stage{}", stage + 1), stage);
        if stage + 1 < STAGES {
            let c = cfg.stage_channels(stage) as u64;
            let coarse = cfg.stage_grid(stage + 1).volume() as u64;
            b.push(format!("encoder.stage{}.down", stage + 1), linear_params(8 * c, 2 * c), coarse * 8 * c * 2 * c);
        }
    }
    for stage in (0..STAGES - 1).rev() {
        let c = cfg.stage_channels(stage) as u64;
        let deep = cfg.stage_channels(stage + 1) as u64;
        let coarse = cfg.stage_grid(stage + 1).volume() as u64;
        let n = cfg.stage_grid(stage).volume() as u64;
        let up_out = 8 * (deep / 2);
        b.push(format!("decoder.stage{}.up", stage + 1), linear_params(deep, up_out), coarse * deep * up_out);
        b.push(format!("decoder.stage{}.fuse", stage + 1), linear_params(2 * c, c), n * 2 * c * c);
        b.block(cfg, &format!("decoder.stage{}", stage + 1), stage);
    }
    b.push("final_norm".into(), 2 * c0, 0);
    b.push("expand".into(), linear_params(c0, p * c0), n0 * c0 * p * c0);
    let k = cfg.num_classes as u64;
    b.push("head".into(), linear_params(c0, k), cfg.input.volume() as u64 * c0 * k);
    let components = b.0;
    Ok(ComplexityReport {
        input: cfg.input,
        total_params: components.iter().map(|c| c.params).sum(),
        total_flops: components.iter().map(|c| c.flops).sum(),
        components,
    })
}

pub fn count_params(cfg: &ModelConfig) -> Result<u64> {
    Ok(analyze(cfg)?.total_params)
}

/// Multiplies for one forward pass at `input` (overriding the configured
/// input size).
pub fn count_flops(cfg: &ModelConfig, input: VoxelDims) -> Result<u64> {
    let cfg = ModelConfig { input, ..cfg.clone() };
    Ok(analyze(&cfg)?.total_flops)
}

impl ComplexityReport {
    pub fn component(&self, name: &str) -> Option<&ComponentCount> {
        self.components.iter().find(|c| c.component == name)
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let width = self.components.iter().map(|c| c.component.len()).max().unwrap_or(0).max(9);
        let mut out = format!("input {} (DxHxW)\n", self.input);
        out += &format!("{:<width$}  {:>14}  {:>18}\n", "component", "params", "multiplies");
        for c in &self.components {
            out += &format!("{:<width$}  {:>14}  {:>18}\n", c.component, c.params, c.flops);
        }
        out += &format!("{:<width$}  {:>14}  {:>18}\n", "total", self.total_params, self.total_flops);
        out += &format!(
            "{:<width$}  {:>13.2}M  {:>17.2}G\n",
            "",
            self.total_params as f64 / 1e6,
            self.total_flops as f64 / 1e9
        );
        out
    }
}

/// One grid size of the attention scaling benchmark.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub grid: GridDims,
    pub patches: usize,
    pub msa_multiplies: u64,
    pub ls_msa_multiplies: u64,
    pub measured_multiplies: u64,
    pub median_seconds: f64,
}

/// Times local-scope attention on random inputs for each grid and compares
/// the instrumented multiply count with the analytic one.
pub fn bench_attention(
    grids: &[GridDims],
    unit: UnitDims,
    channels: usize,
    heads: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        bail!(Parameter, "bench needs at least one repeat");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = AttentionParams::spec(channels, heads);
    let weights = params::materialize(&spec, &mut rng);
    let mut rows = Vec::with_capacity(grids.len());
    for &grid in grids {
        let n = grid.volume();
        let x = Tensor::from_fn([n, channels], |_| rng.gen_range(-1.0..1.0));
        let run = || -> Result<()> {
            let tape = Tape::new();
            let p = params::bind_const(&tape, &weights);
            let xv = tape.constant(x.clone());
            ls_msa(&tape, xv, grid, unit, &p)?;
            Ok(())
        };
        let (res, measured) = flops::measure(run);
        res?;
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let start = Instant::now();
            run()?;
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            grid,
            patches: n,
            msa_multiplies: attention_complexity(grid, channels, None),
            ls_msa_multiplies: attention_complexity(grid, channels, Some(unit)),
            measured_multiplies: measured,
            median_seconds: times[times.len() / 2],
        });
    }
    debug_assert!(weights.names().len() == 8);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn components_sum_to_totals() {
        let r = analyze(&ModelConfig::sphere_task()).unwrap();
        assert_eq!(r.components.iter().map(|c| c.params).sum::<u64>(), r.total_params);
        assert_eq!(r.components.iter().map(|c| c.flops).sum::<u64>(), r.total_flops);
    }

    #[test]
    fn attention_subcount_is_definitional() {
        let cfg = ModelConfig::default();
        let r = analyze(&cfg).unwrap();
        let want = 6 * attention_complexity(cfg.stage_grid(2), 384, Some(cfg.units[2]));
        assert_eq!(r.component("encoder.stage3.attention").unwrap().flops, want);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ModelConfig { channels: 0, ..ModelConfig::tiny() };
        assert!(matches!(count_params(&cfg).unwrap_err(), crate::Error::Config(_)));
        assert!(count_flops(&ModelConfig::tiny(), VoxelDims::new(8, 16, 12)).is_err());
    }
}
