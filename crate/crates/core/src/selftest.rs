//! Oracle and invariant checks, shared by the `selftest` command and the
//! acceptance tests. Each check returns the measured quantities; callers
//! decide the thresholds.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::analyzer::{self, bench_attention, BenchRow};
use crate::architecture::{
    build_model, downsample, forward, load_checkpoint, model_spec, patch_embed, read_checkpoint, skip_fuse,
    upsample, write_checkpoint, Model, ModelConfig, StageTensor, STAGES,
};
use crate::attention::{
    attention_complexity, gs_msa, ls_msa, partition, AttentionParams, PartitionMode,
};
use crate::blocks::{block_forward, dpe_forward, scope_module_forward, DpeParams, ScopeModuleParams};
use crate::dims::{GridDims, KernelDims, UnitDims, VoxelDims};
use crate::error::Result;
use crate::harness::{self, synth_dataset, volume_io, RunConfig};
use crate::loss::{class_probabilities, combined_loss, dice_score, LabelVolume, LossConfig};
use crate::oracle;
use crate::params::{self, Init, ParamSpec, ParamTree};
use crate::tensor::{
    finite_diff_oracle, flops, gradcheck, max_relative_error, normwise_relative_error, Tape, Tensor,
};

/// Draws every leaf from `N(0, scale²)`; LayerNorm scales are centred on 1.
/// Used instead of the training initializer so that every path carries
/// gradients well above rounding noise.
pub fn random_params<P: ParamTree<ParamSpec>>(spec: &P, rng: &mut ChaCha8Rng, scale: f64) -> P::With<Tensor> {
    let normal = Normal::new(0.0, scale).expect("valid scale");
    spec.map(&mut |_, s| {
        let centre = if s.init == Init::Ones { 1.0 } else { 0.0 };
        Tensor::from_fn(s.shape.clone(), |_| centre + normal.sample(rng))
    })
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: impl Into<Vec<usize>>) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// Maps each patch of a globally partitioned grid to the position that makes
/// its unit a contiguous brick: axis coordinate `c` goes to
/// `(c mod g)·u + c div g`.
pub fn global_to_local_permutation(grid: GridDims, unit: UnitDims) -> Vec<usize> {
    let (e, u) = (grid.as_array(), unit.as_array());
    let g = [e[0] / u[0], e[1] / u[1], e[2] / u[2]];
    let mut perm = Vec::with_capacity(grid.volume());
    for z in 0..e[0] {
        for y in 0..e[1] {
            for x in 0..e[2] {
                let c = [z, y, x];
                let t: Vec<usize> = (0..3).map(|a| (c[a] % g[a]) * u[a] + c[a] / g[a]).collect();
                perm.push((t[0] * e[1] + t[1]) * e[2] + t[2]);
            }
        }
    }
    perm
}

#[derive(Clone, Debug)]
pub struct AttentionOracle {
    pub configs: usize,
    /// `ls_msa` against dense masked attention.
    pub ls_vs_dense: f64,
    /// `gs_msa` against dense masked attention.
    pub gs_vs_dense: f64,
    /// `gs_msa` against `P⁻¹ ∘ ls_msa ∘ P`.
    pub gs_vs_permuted_ls: f64,
}

/// Random grids up to 4×4×4 with every divisor unit, `C ≤ 8`.
pub fn attention_oracle(configs: usize, seed: u64) -> Result<AttentionOracle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = AttentionOracle { configs, ls_vs_dense: 0.0, gs_vs_dense: 0.0, gs_vs_permuted_ls: 0.0 };
    for _ in 0..configs {
        let grid = GridDims::new(rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let pick = |rng: &mut ChaCha8Rng, n: usize| {
            let d = divisors(n);
            d[rng.gen_range(0..d.len())]
        };
        let unit = UnitDims::new(pick(&mut rng, grid.d), pick(&mut rng, grid.h), pick(&mut rng, grid.w));
        let c = 2 * rng.gen_range(1..=4);
        let heads = pick(&mut rng, c);
        let p = random_params(&AttentionParams::spec(c, heads), &mut rng, 0.5);
        let x = random_tensor(&mut rng, [grid.volume(), c]);

        let tape = Tape::new();
        let pv = params::bind_const(&tape, &p);
        let xv = tape.constant(x.clone());
        let ls = tape.value(ls_msa(&tape, xv, grid, unit, &pv)?)?;
        let gs = tape.value(gs_msa(&tape, xv, grid, unit, &pv)?)?;
        let perm: Arc<[usize]> = global_to_local_permutation(grid, unit).into();
        let mut inverse = vec![0; perm.len()];
        for (i, &j) in perm.iter().enumerate() {
            inverse[j] = i;
        }
        let moved = tape.gather_rows(xv, inverse.into())?;
        let moved = ls_msa(&tape, moved, grid, unit, &pv)?;
        let back = tape.value(tape.gather_rows(moved, perm)?)?;

        let dense_ls = oracle::dense_windowed_msa(&x, grid, unit, PartitionMode::Local, &p);
        let dense_gs = oracle::dense_windowed_msa(&x, grid, unit, PartitionMode::Global, &p);
        out.ls_vs_dense = out.ls_vs_dense.max(ls.max_abs_diff(&dense_ls));
        out.gs_vs_dense = out.gs_vs_dense.max(gs.max_abs_diff(&dense_gs));
        out.gs_vs_permuted_ls = out.gs_vs_permuted_ls.max(gs.max_abs_diff(&back));
    }
    Ok(out)
}

/// One analytic-versus-instrumented comparison.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountRow {
    pub label: String,
    pub analytic: u64,
    pub measured: u64,
}

fn measure_attention(grid: GridDims, c: usize, heads: usize, unit: UnitDims, mode: PartitionMode) -> Result<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = random_params(&AttentionParams::spec(c, heads), &mut rng, 0.5);
    let x = random_tensor(&mut rng, [grid.volume(), c]);
    let tape = Tape::new();
    let pv = params::bind_const(&tape, &p);
    let xv = tape.constant(x);
    let part = partition(mode, grid, unit)?;
    let (res, n) = flops::measure(|| crate::attention::windowed_msa(&tape, xv, &part, &pv));
    res?;
    Ok(n)
}

/// Attention layers (local, global, and unit = grid) plus whole-model
/// forwards of the tiny and sphere presets.
pub fn complexity_rows() -> Result<Vec<CountRow>> {
    let cases = [
        (GridDims::new(4, 4, 4), 2, 1, UnitDims::new(2, 2, 2)),
        (GridDims::new(6, 6, 6), 4, 2, UnitDims::new(3, 3, 3)),
        (GridDims::new(4, 8, 2), 6, 3, UnitDims::new(2, 4, 1)),
        (GridDims::new(8, 8, 8), 8, 2, UnitDims::new(4, 4, 4)),
    ];
    let mut rows = Vec::new();
    for (grid, c, heads, unit) in cases {
        for mode in [PartitionMode::Local, PartitionMode::Global] {
            rows.push(CountRow {
                label: format!("{mode:?} grid {grid} unit {unit} C={c}"),
                analytic: attention_complexity(grid, c, Some(unit)),
                measured: measure_attention(grid, c, heads, unit, mode)?,
            });
        }
        rows.push(CountRow {
            label: format!("full grid {grid} C={c}"),
            analytic: attention_complexity(grid, c, None),
            measured: measure_attention(grid, c, heads, UnitDims::from_array(grid.as_array()), PartitionMode::Local)?,
        });
    }
    for (name, cfg) in [("tiny", ModelConfig::tiny()), ("sphere", ModelConfig::sphere_task())] {
        let model = build_model(&cfg, 0)?;
        let x = Tensor::full([cfg.in_channels, cfg.input.d, cfg.input.h, cfg.input.w], 0.5);
        let (res, n) = flops::measure(|| model.infer(&x));
        res?;
        rows.push(CountRow {
            label: format!("{name} model forward"),
            analytic: analyzer::count_flops(&cfg, cfg.input)?,
            measured: n,
        });
    }
    Ok(rows)
}

/// Doubling patch counts from `base` along depth.
pub fn scaling_rows(repeats: usize) -> Result<Vec<BenchRow>> {
    let grids = [GridDims::new(4, 8, 8), GridDims::new(8, 8, 8), GridDims::new(16, 8, 8)];
    bench_attention(&grids, UnitDims::cube(4), 32, 4, repeats, 0)
}

#[derive(Clone, Debug)]
pub struct Accounting {
    pub full_params: u64,
    pub full_flops: u64,
    /// `(preset, analytic params, built census, enumerated params)`.
    pub census: Vec<(&'static str, u64, u64, u64)>,
}

pub fn accounting() -> Result<Accounting> {
    let full = analyzer::analyze(&ModelConfig::default())?;
    let tiny8 = ModelConfig {
        channels: 8,
        input: VoxelDims::new(8, 16, 16),
        heads: [2; STAGES],
        ..ModelConfig::tiny()
    };
    let mut census = Vec::new();
    for (name, cfg) in [("tiny", ModelConfig::tiny()), ("tiny-c8", tiny8), ("sphere", ModelConfig::sphere_task())] {
        let built = build_model(&cfg, 1)?.census() as u64;
        let enumerated = oracle::enumerate_param_shapes(&cfg)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>() as u64)
            .sum();
        census.push((name, analyzer::count_params(&cfg)?, built, enumerated));
    }
    Ok(Accounting { full_params: full.total_params, full_flops: full.total_flops, census })
}

/// Gradient comparison for one parameter tensor.
#[derive(Clone, Debug)]
pub struct GradRow {
    pub name: String,
    /// [`normwise_relative_error`] over the sampled coordinates.
    pub rel_err: f64,
    /// Worst single-coordinate [`max_relative_error`], for information.
    pub coord_rel_err: f64,
    pub max_analytic: f64,
    pub max_numeric: f64,
}

/// Finite differences of the training loss (random input, random labels)
/// against the tape gradient for `coords_per_tensor` coordinates of every
/// parameter tensor, first and last included. Parameters are drawn at
/// `scale` rather than the training initializer so that deep paths carry
/// gradients well above rounding noise.
pub fn model_gradcheck(
    cfg: &ModelConfig,
    seed: u64,
    coords_per_tensor: usize,
    step: f64,
    scale: f64,
) -> Result<Vec<GradRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = model_spec(cfg);
    let weights = random_params(&spec, &mut rng, scale);
    let input = random_tensor(&mut rng, [cfg.in_channels, cfg.input.d, cfg.input.h, cfg.input.w]);
    let labels = LabelVolume::new(
        cfg.input,
        cfg.num_classes,
        (0..cfg.input.volume()).map(|_| rng.gen_range(0..cfg.num_classes) as u8).collect(),
    )?;
    let loss_cfg = LossConfig::default();
    let leaves = weights.leaves();
    let names = weights.names();

    let objective = |tape: &Tape, p: &crate::architecture::ModelParams<crate::Var>| -> Result<crate::Var> {
        let x = tape.constant(input.clone());
        let logits = forward(tape, cfg, p, x)?;
        let probs = class_probabilities(tape, logits)?;
        combined_loss(tape, &[(probs, &labels)], &loss_cfg)
    };
    let tape = Tape::new();
    let vars: Vec<_> = leaves.iter().map(|t| tape.param(t.clone())).collect();
    let bound = spec.rebuild(vars.clone())?;
    let root = objective(&tape, &bound)?;
    let grads = tape.backward(root)?;

    let mut out = Vec::with_capacity(leaves.len());
    for (i, (leaf, name)) in leaves.iter().zip(&names).enumerate() {
        let analytic = grads.wrt(vars[i])?;
        let n = leaf.len();
        let mut coords: Vec<usize> = vec![0, n - 1];
        while coords.len() < coords_per_tensor.min(n) {
            let c = rng.gen_range(0..n);
            if !coords.contains(&c) {
                coords.push(c);
            }
        }
        coords.truncate(coords_per_tensor.min(n).max(1));
        let mut f = |probe: &Tensor| -> Result<f64> {
            let tape = Tape::new();
            let vals: Vec<_> = leaves
                .iter()
                .enumerate()
                .map(|(j, t)| tape.constant(if j == i { probe.clone() } else { t.clone() }))
                .collect();
            let root = objective(&tape, &spec.rebuild(vals)?)?;
            tape.value(root)?.item()
        };
        let numeric = gradcheck::finite_diff_coords(&mut f, leaf, step, coords.iter().copied())?;
        let picked: Vec<f64> = coords.iter().map(|&c| analytic.data()[c]).collect();
        out.push(GradRow {
            name: name.clone(),
            rel_err: normwise_relative_error(&picked, &numeric),
            coord_rel_err: max_relative_error(&picked, &numeric),
            max_analytic: picked.iter().fold(0.0, |m, v| m.max(v.abs())),
            max_numeric: numeric.iter().fold(0.0, |m, v| m.max(v.abs())),
        });
    }
    Ok(out)
}

/// Named exact structural checks; each entry is `(name, held)`.
pub fn structural_invariants(seed: u64) -> Result<Vec<(String, bool)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let grid = GridDims::new(4, 4, 2);
    let unit = UnitDims::new(2, 2, 1);
    let x = random_tensor(&mut rng, [grid.volume(), 4]);
    for scope in [PartitionMode::Local, PartitionMode::Global] {
        let spec = ScopeModuleParams::spec(scope, 4, 2, 4, 1e-5);
        let zero = spec.map(&mut |_, s| Tensor::zeros(s.shape.clone()));
        let tape = Tape::new();
        let p = params::bind_const(&tape, &zero);
        let y = tape.value(scope_module_forward(&tape, tape.constant(x.clone()), grid, unit, &p)?)?;
        out.push((format!("zero-weight {scope:?} module is the identity"), y == x));
    }
    let dpe_zero = DpeParams::spec(4, KernelDims::cube(3)).map(&mut |_, s| Tensor::zeros(s.shape.clone()));
    let tape = Tape::new();
    let p = params::bind_const(&tape, &dpe_zero);
    let y = tape.value(dpe_forward(&tape, tape.constant(x.clone()), grid, &p)?)?;
    out.push(("zero-weight DPE is the identity".into(), y == x));

    let mut bijective = true;
    for (g, u) in [
        (GridDims::new(6, 6, 6), UnitDims::cube(3)),
        (GridDims::new(4, 8, 2), UnitDims::new(2, 2, 1)),
        (GridDims::new(8, 4, 4), UnitDims::new(4, 1, 2)),
        (GridDims::new(3, 5, 7), UnitDims::new(1, 5, 7)),
    ] {
        for mode in [PartitionMode::Local, PartitionMode::Global] {
            let part = partition(mode, g, u)?;
            let mut seen = vec![false; g.volume()];
            for (patch, &(un, slot)) in part.forward_index.iter().enumerate() {
                let pos = un * part.slots() + slot;
                bijective &= un < part.units() && slot < part.slots() && !seen[pos];
                bijective &= part.patch_at(un, slot) == patch;
                seen[pos] = true;
                bijective &= oracle::unit_of(mode, patch, g, u)
                    == oracle::unit_of(mode, part.patch_at(un, 0), g, u);
            }
            bijective &= seen.iter().all(|&s| s);
        }
    }
    out.push(("local and global partitions are bijections onto units".into(), bijective));

    let mut shapes = true;
    for cfg in [
        ModelConfig::tiny(),
        ModelConfig { num_classes: 4, in_channels: 2, ..ModelConfig::tiny() },
        ModelConfig { input: VoxelDims::new(16, 16, 32), ..ModelConfig::tiny() },
    ] {
        let model = build_model(&cfg, 2)?;
        let x = random_tensor(&mut rng, [cfg.in_channels, cfg.input.d, cfg.input.h, cfg.input.w]);
        let y = model.infer(&x)?;
        shapes &= y.shape() == [cfg.num_classes, cfg.input.d, cfg.input.h, cfg.input.w];
    }
    out.push(("forward output is [K, D, H, W]".into(), shapes));

    out.push(("encoder and decoder stages mirror each other".into(), stage_symmetry(&ModelConfig::tiny())?));

    out.push(("DPE is translation-equivariant away from borders".into(), dpe_equivariance(&mut rng)?));
    Ok(out)
}

/// Walks the network layer by layer and checks that decoder stage `i`
/// consumes exactly the grid and width encoder stage `i` produced.
pub fn stage_symmetry(cfg: &ModelConfig) -> Result<bool> {
    let model = build_model(cfg, 5)?;
    let tape = Tape::new();
    let p = params::bind_const(&tape, &model.params);
    let x = tape.constant(Tensor::full([cfg.in_channels, cfg.input.d, cfg.input.h, cfg.input.w], 0.1));
    let mut s = patch_embed(&tape, x, cfg, &p.embed)?;
    let mut produced = Vec::new();
    let mut ok = true;
    for (stage, enc) in p.encoder.iter().enumerate() {
        let tokens = block_forward(&tape, s.tokens, s.grid, cfg.units[stage], &enc.block)?;
        s = StageTensor { tokens, grid: s.grid };
        ok &= s.grid == cfg.stage_grid(stage) && tape.shape(s.tokens)?[1] == cfg.stage_channels(stage);
        if let Some(down) = &enc.down {
            produced.push((s, tape.shape(s.tokens)?));
            s = downsample(&tape, s, down)?;
        }
    }
    for stage in (0..STAGES - 1).rev() {
        let dec = &p.decoder[stage];
        s = upsample(&tape, s, &dec.up)?;
        let (skip, shape) = &produced[stage];
        ok &= s.grid == skip.grid && tape.shape(s.tokens)? == *shape;
        s = skip_fuse(&tape, s, *skip, &dec.fuse)?;
        ok &= tape.shape(s.tokens)? == *shape;
    }
    Ok(ok)
}

fn dpe_equivariance(rng: &mut ChaCha8Rng) -> Result<bool> {
    let grid = GridDims::new(7, 7, 7);
    let c = 3;
    let p = random_params(&DpeParams::spec(c, KernelDims::cube(3)), rng, 0.5);
    let x = random_tensor(rng, [grid.volume(), c]);
    let shift = [1usize, 2, 1];
    let idx = |z: usize, y: usize, w: usize| (z * grid.h + y) * grid.w + w;
    let shifted = Tensor::from_fn([grid.volume(), c], |i| {
        let (t, ch) = (i / c, i % c);
        let (z, y, w) = (t / 49, (t / 7) % 7, t % 7);
        let src = [(z + 7 - shift[0]) % 7, (y + 7 - shift[1]) % 7, (w + 7 - shift[2]) % 7];
        x.data()[idx(src[0], src[1], src[2]) * c + ch]
    });
    let run = |input: &Tensor| -> Result<Tensor> {
        let tape = Tape::new();
        let pv = params::bind_const(&tape, &p);
        tape.value(dpe_forward(&tape, tape.constant(input.clone()), grid, &pv)?)
    };
    let (a, b) = (run(&x)?, run(&shifted)?);
    let mut ok = true;
    for z in 1 + shift[0]..6 {
        for y in 1 + shift[1]..6 {
            for w in 1 + shift[2]..6 {
                for ch in 0..c {
                    let here = idx(z, y, w) * c + ch;
                    let there = idx(z - shift[0], y - shift[1], w - shift[2]) * c + ch;
                    ok &= b.data()[here] == a.data()[there];
                }
            }
        }
    }
    Ok(ok)
}

#[derive(Clone, Debug)]
pub struct LossChecks {
    /// Loss of one-hot predictions and its closed form. The Dice smoothing
    /// sits in the denominator only, so the value is `−mean 2n/(2n + ε)`,
    /// within ε of −1.
    pub perfect: (f64, f64),
    /// Engine loss on the 2×2×1 toy volume and its hand-derived value.
    pub toy: (f64, f64),
    /// Engine loss against the scalar oracle on random batches.
    pub random_vs_oracle: f64,
    /// DSC on identical, disjoint and subset masks (ideal 1, 0, 2/3).
    pub dsc: [f64; 3],
    /// Max relative error of the loss gradient with respect to logits.
    pub grad_rel_err: f64,
}

/// Labels `[0, 0, 1, 1]`, every voxel giving its true class probability
/// 0.8: CE = 4·ln 0.8 / 8 and Dice = 3.2 / (4 + ε).
pub fn toy_loss_by_hand() -> f64 {
    let ce = 4.0 * 0.8f64.ln() / 8.0;
    let dice = 2.0 * 1.6 / (2.0 + 2.0 + 1e-5);
    -(0.5 * ce + dice)
}

pub fn loss_checks(seed: u64) -> Result<LossChecks> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = LossConfig::default();
    let probs_loss = |probs: &[Vec<f64>], labels: &LabelVolume| -> Result<f64> {
        let k = probs[0].len();
        let flat: Vec<f64> = probs.iter().flatten().copied().collect();
        let tape = Tape::new();
        let p = tape.constant(Tensor::new([probs.len(), k], flat)?);
        tape.value(combined_loss(&tape, &[(p, labels)], &cfg)?)?.item()
    };

    let labels = LabelVolume::new(VoxelDims::new(2, 2, 2), 3, vec![0, 1, 2, 0, 1, 1, 2, 0])?;
    let one_hot: Vec<Vec<f64>> =
        labels.labels.iter().map(|&l| (0..3).map(|c| (c == l as usize) as u8 as f64).collect()).collect();
    let closed_form = -(1..3)
        .map(|c| {
            let n = labels.count(c as u8) as f64;
            2.0 * n / (2.0 * n + cfg.dice_eps)
        })
        .sum::<f64>()
        / 2.0;
    let perfect = (probs_loss(&one_hot, &labels)?, closed_form);

    let toy_labels = LabelVolume::new(VoxelDims::new(2, 2, 1), 2, vec![0, 0, 1, 1])?;
    let toy_probs = vec![vec![0.8, 0.2], vec![0.8, 0.2], vec![0.2, 0.8], vec![0.2, 0.8]];
    let toy = (probs_loss(&toy_probs, &toy_labels)?, toy_loss_by_hand());

    let mut random_vs_oracle: f64 = 0.0;
    for _ in 0..5 {
        let k = rng.gen_range(2..=4);
        let dims = VoxelDims::new(2, 3, 2);
        let batch: Vec<(Vec<Vec<f64>>, Vec<u8>)> = (0..2)
            .map(|_| {
                let labels = (0..dims.volume()).map(|_| rng.gen_range(0..k) as u8).collect();
                let probs = (0..dims.volume())
                    .map(|_| {
                        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                        let s: f64 = raw.iter().sum();
                        raw.iter().map(|r| r / s).collect()
                    })
                    .collect();
                (probs, labels)
            })
            .collect();
        let tape = Tape::new();
        let mut pairs = Vec::new();
        let vols: Vec<LabelVolume> =
            batch.iter().map(|(_, l)| LabelVolume::new(dims, k, l.clone())).collect::<Result<_>>()?;
        for ((probs, _), vol) in batch.iter().zip(&vols) {
            let flat: Vec<f64> = probs.iter().flatten().copied().collect();
            pairs.push((tape.constant(Tensor::new([dims.volume(), k], flat)?), vol));
        }
        let engine = tape.value(combined_loss(&tape, &pairs, &cfg)?)?.item()?;
        let naive = oracle::naive_combined_loss(&batch, cfg.prob_floor, cfg.dice_eps);
        random_vs_oracle = random_vs_oracle.max((engine - naive).abs());
    }

    let mask = |bits: &[u8]| LabelVolume::new(VoxelDims::new(1, 4, 4), 2, bits.to_vec());
    let a = mask(&[1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0])?;
    let disjoint = mask(&[0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0])?;
    let subset = mask(&[1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0])?;
    let dsc = [dice_score(&a, &a, 1)?, dice_score(&disjoint, &a, 1)?, dice_score(&subset, &a, 1)?];

    let labels = LabelVolume::new(VoxelDims::new(2, 2, 3), 3, (0..12).map(|i| (i * 7 % 3) as u8).collect())?;
    let logits = random_tensor(&mut rng, [3, 2, 2, 3]);
    let f = |l: &Tensor| -> Result<f64> {
        let tape = Tape::new();
        let p = class_probabilities(&tape, tape.constant(l.clone()))?;
        tape.value(combined_loss(&tape, &[(p, &labels)], &cfg)?)?.item()
    };
    let tape = Tape::new();
    let lv = tape.param(logits.clone());
    let p = class_probabilities(&tape, lv)?;
    let root = combined_loss(&tape, &[(p, &labels)], &cfg)?;
    let analytic = tape.backward(root)?.wrt(lv)?;
    let numeric = finite_diff_oracle(f, &logits, gradcheck::DEFAULT_STEP)?;
    let grad_rel_err = max_relative_error(analytic.data(), numeric.data());

    Ok(LossChecks { perfect, toy, random_vs_oracle, dsc, grad_rel_err })
}

/// Trains the sphere preset and reports `(best held-out DSC, final held-out
/// DSC, seconds)`.
pub fn sphere_training(run: &RunConfig) -> Result<(f64, f64, f64)> {
    let start = std::time::Instant::now();
    let data = synth_dataset(run.seed, run.dataset_count, &run.dataset_spec())?;
    let outcome = harness::train(run, &data, None)?;
    let best = outcome.best.as_ref().map_or(0.0, |b| b.report.mean_dsc);
    let last = outcome.evals.last().map_or(0.0, |e| e.1);
    Ok((best, last, start.elapsed().as_secs_f64()))
}

#[derive(Clone, Debug)]
pub struct DeterminismChecks {
    pub checkpoints_identical: bool,
    pub logs_identical: bool,
    pub volume_round_trip: bool,
    pub checkpoint_round_trip: bool,
}

/// Two short training runs into `dir/a` and `dir/b`, plus file round trips.
pub fn determinism_checks(dir: &Path) -> Result<DeterminismChecks> {
    let run = RunConfig { steps: 6, eval_every: 3, dataset_count: 6, holdout: 2, ..RunConfig::default() };
    let data = synth_dataset(run.seed, run.dataset_count, &run.dataset_spec())?;
    let (a, b) = (dir.join("a"), dir.join("b"));
    harness::train(&run, &data, Some(&a))?;
    harness::train(&run, &data, Some(&b))?;
    let read = |p: &Path| std::fs::read(p);
    let checkpoints_identical = read(&a.join("final.ckpt"))? == read(&b.join("final.ckpt"))?
        && read(&a.join("best.ckpt"))? == read(&b.join("best.ckpt"))?;
    let logs_identical = read(&a.join("metrics.log"))? == read(&b.join("metrics.log"))?;

    let vol_dir = dir.join("volumes");
    let paths = volume_io::write_dataset(&vol_dir, &data)?;
    let back = volume_io::read_dataset(&vol_dir)?;
    let volume_round_trip = back == data
        && paths
            .iter()
            .zip(&data)
            .all(|(p, s)| read(p).map(|b| b == volume_io::volume_to_bytes(s)).unwrap_or(false));

    let model: Model = load_checkpoint(&a.join("final.ckpt"))?;
    let bytes = write_checkpoint(&model);
    let checkpoint_round_trip = bytes == read(&a.join("final.ckpt"))? && read_checkpoint(&bytes)? == model;
    Ok(DeterminismChecks { checkpoints_identical, logs_identical, volume_round_trip, checkpoint_round_trip })
}
