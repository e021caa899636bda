//! Naive reference implementations.
//!
//! Everything here is written as direct loops over coordinates, without the
//! tape, the optimized kernels, or the partition bookkeeping, so it can check
//! them. Attention is computed densely over all patch pairs with a mask that
//! admits only pairs sharing a unit.

use crate::architecture::{ModelConfig, ModelParams, STAGES};
use crate::attention::{AttentionParams, PartitionMode};
use crate::blocks::{BlockParams, DpeParams, MlpParams, ScopeModuleParams};
use crate::dims::{GridDims, UnitDims};
use crate::params::{LayerNormParams, Linear};
use crate::tensor::Tensor;

fn rows(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 2, "expected a matrix, got {s:?}");
    (s[0], s[1])
}

pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = rows(a);
    let (k2, n) = rows(b);
    assert_eq!(k, k2);
    let (a, b) = (a.data(), b.data());
    Tensor::from_fn([m, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum()
    })
}

pub fn naive_linear(x: &Tensor, p: &Linear<Tensor>) -> Tensor {
    let y = naive_matmul(x, &p.weight);
    let n = p.bias.len();
    Tensor::from_fn(y.shape().to_vec(), |i| y.data()[i] + p.bias.data()[i % n])
}

pub fn naive_add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_fn(a.shape().to_vec(), |i| a.data()[i] + b.data()[i])
}

pub fn naive_layer_norm(x: &Tensor, p: &LayerNormParams<Tensor>) -> Tensor {
    let (n, c) = rows(x);
    let mut out = vec![0.0; n * c];
    for r in 0..n {
        let row = &x.data()[r * c..(r + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        for j in 0..c {
            out[r * c + j] = (row[j] - mean) / (var + p.eps).sqrt() * p.gamma.data()[j] + p.beta.data()[j];
        }
    }
    Tensor::new([n, c], out).expect("sized")
}

pub fn naive_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn naive_mlp(x: &Tensor, p: &MlpParams<Tensor>) -> Tensor {
    let h = naive_linear(x, &p.fc1);
    let h = Tensor::from_fn(h.shape().to_vec(), |i| naive_gelu(h.data()[i]));
    naive_linear(&h, &p.fc2)
}

fn coords(p: usize, g: [usize; 3]) -> [usize; 3] {
    [p / (g[1] * g[2]), (p / g[2]) % g[1], p % g[2]]
}

/// Unit membership straight from the definition: contiguous bricks for local
/// scope, equal residues modulo the dilation for global scope.
pub fn unit_of(mode: PartitionMode, patch: usize, grid: GridDims, unit: UnitDims) -> [usize; 3] {
    let c = coords(patch, grid.as_array());
    let u = unit.as_array();
    let g = [grid.d / u[0], grid.h / u[1], grid.w / u[2]];
    match mode {
        PartitionMode::Local => [c[0] / u[0], c[1] / u[1], c[2] / u[2]],
        PartitionMode::Global => [c[0] % g[0], c[1] % g[1], c[2] % g[2]],
    }
}

/// Multi-head attention over all `N` tokens, where token `i` may attend to
/// token `j` only if `allowed(i, j)`.
pub fn masked_msa(x: &Tensor, p: &AttentionParams<Tensor>, allowed: impl Fn(usize, usize) -> bool) -> Tensor {
    let (n, c) = rows(x);
    let hd = c / p.heads;
    let q = naive_linear(x, &p.q);
    let k = naive_linear(x, &p.k);
    let v = naive_linear(x, &p.v);
    let (q, k, v) = (q.data(), k.data(), v.data());
    let scale = 1.0 / (hd as f64).sqrt();
    let mut mixed = vec![0.0; n * c];
    for h in 0..p.heads {
        let lo = h * hd;
        for i in 0..n {
            let keys: Vec<usize> = (0..n).filter(|&j| allowed(i, j)).collect();
            let scores: Vec<f64> = keys
                .iter()
                .map(|&j| (0..hd).map(|d| q[i * c + lo + d] * k[j * c + lo + d]).sum::<f64>() * scale)
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = w.iter().sum();
            for (&j, wj) in keys.iter().zip(&w) {
                for d in 0..hd {
                    mixed[i * c + lo + d] += wj / z * v[j * c + lo + d];
                }
            }
        }
    }
    naive_linear(&Tensor::new([n, c], mixed).expect("sized"), &p.o)
}

/// Dense attention restricted to pairs in the same unit.
pub fn dense_windowed_msa(
    x: &Tensor,
    grid: GridDims,
    unit: UnitDims,
    mode: PartitionMode,
    p: &AttentionParams<Tensor>,
) -> Tensor {
    masked_msa(x, p, |i, j| unit_of(mode, i, grid, unit) == unit_of(mode, j, grid, unit))
}

pub fn naive_scope_module(x: &Tensor, grid: GridDims, unit: UnitDims, p: &ScopeModuleParams<Tensor>) -> Tensor {
    let a = dense_windowed_msa(&naive_layer_norm(x, &p.norm1), grid, unit, p.scope, &p.attn);
    let z = naive_add(&a, x);
    naive_add(&naive_mlp(&naive_layer_norm(&z, &p.norm2), &p.mlp), &z)
}

/// Same-padded depthwise correlation on `[C, D, H, W]`.
pub fn naive_depthwise_conv3d(x: &Tensor, kernel: &Tensor) -> Tensor {
    let s = x.shape().to_vec();
    let ks = kernel.shape().to_vec();
    let e = [s[1], s[2], s[3]];
    let kd = [ks[1], ks[2], ks[3]];
    Tensor::from_fn(s.clone(), |idx| {
        let ch = idx / (e[0] * e[1] * e[2]);
        let o = coords(idx % (e[0] * e[1] * e[2]), e);
        let mut acc = 0.0;
        for a in 0..kd[0] {
            for b in 0..kd[1] {
                for d in 0..kd[2] {
                    let src = [
                        o[0] as isize + a as isize - (kd[0] / 2) as isize,
                        o[1] as isize + b as isize - (kd[1] / 2) as isize,
                        o[2] as isize + d as isize - (kd[2] / 2) as isize,
                    ];
                    if (0..3).all(|ax| src[ax] >= 0 && (src[ax] as usize) < e[ax]) {
                        let si = ((ch * e[0] + src[0] as usize) * e[1] + src[1] as usize) * e[2] + src[2] as usize;
                        let ki = ((ch * kd[0] + a) * kd[1] + b) * kd[2] + d;
                        acc += x.data()[si] * kernel.data()[ki];
                    }
                }
            }
        }
        acc
    })
}

pub fn naive_dpe(x: &Tensor, grid: GridDims, p: &DpeParams<Tensor>) -> Tensor {
    let (n, c) = rows(x);
    let vol = Tensor::from_fn([c, grid.d, grid.h, grid.w], |i| x.data()[(i % n) * c + i / n]);
    let conv = naive_depthwise_conv3d(&vol, &p.kernel);
    Tensor::from_fn([n, c], |i| {
        let (t, ch) = (i / c, i % c);
        conv.data()[ch * n + t] + p.bias.data()[ch] + x.data()[i]
    })
}

pub fn naive_block(x: &Tensor, grid: GridDims, unit: UnitDims, p: &BlockParams<Tensor>) -> Tensor {
    let mut z = naive_dpe(x, grid, &p.dpe);
    for m in &p.modules {
        z = naive_scope_module(&z, grid, unit, m);
    }
    z
}

/// Patch rows `[N, in_ch · P]` flattened `(channel, d, h, w)`, projected.
pub fn naive_patch_embed(volume: &Tensor, cfg: &ModelConfig, p: &Linear<Tensor>) -> Tensor {
    let g = cfg.base_grid().as_array();
    let pd = cfg.patch.as_array();
    let v = cfg.input.as_array();
    let width = cfg.in_channels * cfg.patch_voxels();
    let n = g[0] * g[1] * g[2];
    let rows = Tensor::from_fn([n, width], |i| {
        let t = coords(i / width, g);
        let rest = i % width;
        let ch = rest / cfg.patch_voxels();
        let o = coords(rest % cfg.patch_voxels(), pd);
        let z = t[0] * pd[0] + o[0];
        let y = t[1] * pd[1] + o[1];
        let x = t[2] * pd[2] + o[2];
        volume.data()[((ch * v[0] + z) * v[1] + y) * v[2] + x]
    });
    naive_linear(&rows, p)
}

pub fn naive_downsample(x: &Tensor, grid: GridDims, p: &Linear<Tensor>) -> Tensor {
    let (_, c) = rows(x);
    let g = grid.as_array();
    let coarse = [g[0] / 2, g[1] / 2, g[2] / 2];
    let m = coarse[0] * coarse[1] * coarse[2];
    let merged = Tensor::from_fn([m, 8 * c], |i| {
        let t = coords(i / (8 * c), coarse);
        let (nb, ch) = ((i % (8 * c)) / c, i % c);
        let o = coords(nb, [2, 2, 2]);
        let src = ((2 * t[0] + o[0]) * g[1] + 2 * t[1] + o[1]) * g[2] + 2 * t[2] + o[2];
        x.data()[src * c + ch]
    });
    naive_linear(&merged, p)
}

pub fn naive_upsample(x: &Tensor, grid: GridDims, p: &Linear<Tensor>) -> Tensor {
    let (_, c) = rows(x);
    let half = c / 2;
    let y = naive_linear(x, p);
    let g = grid.as_array();
    let fine = [2 * g[0], 2 * g[1], 2 * g[2]];
    let n = fine[0] * fine[1] * fine[2];
    Tensor::from_fn([n, half], |i| {
        let f = coords(i / half, fine);
        let parent = ((f[0] / 2) * g[1] + f[1] / 2) * g[2] + f[2] / 2;
        let child = ((f[0] % 2) * 2 + f[1] % 2) * 2 + f[2] % 2;
        y.data()[parent * 8 * half + child * half + i % half]
    })
}

pub fn naive_skip_fuse(dec: &Tensor, enc: &Tensor, p: &Linear<Tensor>) -> Tensor {
    let (n, c) = rows(dec);
    let joined = Tensor::from_fn([n, 2 * c], |i| {
        let (r, j) = (i / (2 * c), i % (2 * c));
        if j < c {
            dec.data()[r * c + j]
        } else {
            enc.data()[r * c + j - c]
        }
    });
    naive_linear(&joined, p)
}

/// Per-voxel logits `[K, D, H, W]`: expand each token, place its slices on
/// the patch's voxels, apply the head voxel by voxel.
pub fn naive_expand_head(x: &Tensor, cfg: &ModelConfig, expand: &Linear<Tensor>, head: &Linear<Tensor>) -> Tensor {
    let y = naive_linear(x, expand);
    let p = cfg.patch_voxels();
    let w = y.shape()[1] / p;
    let pd = cfg.patch.as_array();
    let g = cfg.base_grid().as_array();
    let v = cfg.input.as_array();
    let nv = v[0] * v[1] * v[2];
    let k = head.bias.len();
    let mut out = vec![0.0; k * nv];
    for vox in 0..nv {
        let c = coords(vox, v);
        let token = ((c[0] / pd[0]) * g[1] + c[1] / pd[1]) * g[2] + c[2] / pd[2];
        let slot = ((c[0] % pd[0]) * pd[1] + c[1] % pd[1]) * pd[2] + c[2] % pd[2];
        let feat = &y.data()[token * p * w + slot * w..token * p * w + (slot + 1) * w];
        for class in 0..k {
            let mut acc = head.bias.data()[class];
            for (j, f) in feat.iter().enumerate() {
                acc += f * head.weight.data()[j * k + class];
            }
            out[class * nv + vox] = acc;
        }
    }
    Tensor::new([k, v[0], v[1], v[2]], out).expect("sized")
}

/// The whole network, loop by loop.
pub fn naive_forward(cfg: &ModelConfig, p: &ModelParams<Tensor>, volume: &Tensor) -> Tensor {
    let mut x = naive_patch_embed(volume, cfg, &p.embed);
    let mut skips = Vec::new();
    for (stage, enc) in p.encoder.iter().enumerate() {
        let grid = cfg.stage_grid(stage);
        x = naive_block(&x, grid, cfg.units[stage], &enc.block);
        if let Some(down) = &enc.down {
            skips.push(x.clone());
            x = naive_downsample(&x, grid, down);
        }
    }
    for stage in (0..STAGES - 1).rev() {
        let dec = &p.decoder[stage];
        x = naive_upsample(&x, cfg.stage_grid(stage + 1), &dec.up);
        x = naive_skip_fuse(&x, &skips[stage], &dec.fuse);
        x = naive_block(&x, cfg.stage_grid(stage), cfg.units[stage], &dec.block);
    }
    let x = naive_layer_norm(&x, &p.final_norm);
    naive_expand_head(&x, cfg, &p.expand, &p.head)
}

/// `−(1/N) Σ (½·CE + Dice)` evaluated scalar by scalar from probabilities
/// `[V, K]` and integer labels.
pub fn naive_combined_loss(batch: &[(Vec<Vec<f64>>, Vec<u8>)], prob_floor: f64, dice_eps: f64) -> f64 {
    let mut total = 0.0;
    for (probs, labels) in batch {
        let k = probs[0].len();
        let v = probs.len();
        let mut ce = 0.0;
        for (row, &l) in probs.iter().zip(labels) {
            ce += row[l as usize].max(prob_floor).ln();
        }
        ce /= (v * k) as f64;
        let mut dice = 0.0;
        for class in 1..k {
            let (mut inter, mut truth, mut pred) = (0.0, 0.0, 0.0);
            for (row, &l) in probs.iter().zip(labels) {
                let y = (l as usize == class) as u8 as f64;
                inter += y * row[class];
                truth += y;
                pred += row[class];
            }
            dice += 2.0 * inter / (truth + pred + dice_eps);
        }
        total += 0.5 * ce + dice / (k - 1) as f64;
    }
    -total / batch.len() as f64
}

/// Parameter count enumerated layer by layer from the configuration, kept
/// separate from both the analyzer and the built model.
pub fn enumerate_param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut linear = |name: String, i: usize, o: usize| {
        out.push((format!("{name}.weight"), vec![i, o]));
        out.push((format!("{name}.bias"), vec![o]));
    };
    let c0 = cfg.channels;
    let p = cfg.patch_voxels();
    linear("embed".into(), cfg.in_channels * p, c0);
    let mut blocks = Vec::new();
    for s in 0..STAGES {
        blocks.push((format!("encoder.{s}.block"), s));
        if s + 1 < STAGES {
            let c = cfg.stage_channels(s);
            linear(format!("encoder.{s}.down"), 8 * c, 2 * c);
        }
    }
    for s in 0..STAGES - 1 {
        let c = cfg.stage_channels(s);
        let deep = cfg.stage_channels(s + 1);
        linear(format!("decoder.{s}.up"), deep, 8 * (deep / 2));
        linear(format!("decoder.{s}.fuse"), 2 * c, c);
        blocks.push((format!("decoder.{s}.block"), s));
    }
    linear("expand".into(), c0, p * c0);
    linear("head".into(), c0, cfg.num_classes);
    for (prefix, s) in blocks {
        let c = cfg.stage_channels(s);
        let k = cfg.dpe_kernel;
        out.push((format!("{prefix}.dpe.kernel"), vec![c, k.d, k.h, k.w]));
        out.push((format!("{prefix}.dpe.bias"), vec![c]));
        for m in 0..2 * cfg.depths[s] {
            let mp = format!("{prefix}.modules.{m}");
            for norm in ["norm1", "norm2"] {
                out.push((format!("{mp}.{norm}.gamma"), vec![c]));
                out.push((format!("{mp}.{norm}.beta"), vec![c]));
            }
            for proj in ["q", "k", "v", "o"] {
                out.push((format!("{mp}.attn.{proj}.weight"), vec![c, c]));
                out.push((format!("{mp}.attn.{proj}.bias"), vec![c]));
            }
            let h = cfg.mlp_ratio * c;
            out.push((format!("{mp}.mlp.fc1.weight"), vec![c, h]));
            out.push((format!("{mp}.mlp.fc1.bias"), vec![h]));
            out.push((format!("{mp}.mlp.fc2.weight"), vec![h, c]));
            out.push((format!("{mp}.mlp.fc2.bias"), vec![c]));
        }
    }
    out.push(("final_norm.gamma".into(), vec![c0]));
    out.push(("final_norm.beta".into(), vec![c0]));
    out
}
