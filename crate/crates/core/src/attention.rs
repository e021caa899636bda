//! Unit partitioning and windowed multi-head self-attention.
//!
//! A feature map of `d × h × w` patches is split into units of
//! `u_d × u_h × u_w` patches. Local units are contiguous bricks; global units
//! pick one patch every `g = grid / unit` patches along each axis, so both
//! modes produce the same number of equally sized units. Attention runs
//! independently inside each unit.

use std::sync::Arc;

use serde::Serialize;

use crate::dims::{DilationDims, GridDims, UnitDims, AXIS_NAMES};
use crate::error::{bail, Result};
use crate::params::{join, Linear, ParamSpec, ParamTree};
use crate::tensor::{Tape, Var};

impl DilationDims {
    /// Per-axis stride `grid / unit`; every axis must divide exactly.
    pub fn for_grid(grid: GridDims, unit: UnitDims) -> Result<DilationDims> {
        let (g, u) = (grid.as_array(), unit.as_array());
        let mut out = [0; 3];
        for axis in 0..3 {
            if u[axis] == 0 || g[axis] % u[axis] != 0 {
                bail!(
                    Config,
                    "{} extent {} of grid {grid} is not divisible by unit extent {}",
                    AXIS_NAMES[axis],
                    g[axis],
                    u[axis]
                );
            }
            out[axis] = g[axis] / u[axis];
        }
        Ok(DilationDims::from_array(out))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    Local,
    Global,
}

/// Bijection between flat patch indices and `(unit, slot)` pairs.
#[derive(Clone, Debug)]
pub struct UnitPartition {
    pub mode: PartitionMode,
    pub grid: GridDims,
    pub unit: UnitDims,
    /// `forward_index[patch] = (unit, slot)`.
    pub forward_index: Vec<(usize, usize)>,
    /// `inverse_index[unit * slots + slot] = patch`.
    pub inverse_index: Arc<[usize]>,
    /// `positions[patch] = unit * slots + slot`.
    positions: Arc<[usize]>,
}

impl UnitPartition {
    pub fn units(&self) -> usize {
        self.grid.volume() / self.unit.volume()
    }

    pub fn slots(&self) -> usize {
        self.unit.volume()
    }

    pub fn patch_at(&self, unit: usize, slot: usize) -> usize {
        self.inverse_index[unit * self.slots() + slot]
    }

    /// Row order that groups tokens unit by unit.
    pub fn gather_order(&self) -> Arc<[usize]> {
        Arc::clone(&self.inverse_index)
    }

    /// Row order that restores patch order from unit-grouped rows.
    pub fn scatter_order(&self) -> Arc<[usize]> {
        Arc::clone(&self.positions)
    }

    fn build(
        mode: PartitionMode,
        grid: GridDims,
        unit: UnitDims,
        locate: impl Fn([usize; 3]) -> (usize, usize),
    ) -> UnitPartition {
        let n = grid.volume();
        let slots = unit.volume();
        let mut forward_index = Vec::with_capacity(n);
        let mut inverse = vec![0usize; n];
        let mut positions = vec![0usize; n];
        for z in 0..grid.d {
            for y in 0..grid.h {
                for x in 0..grid.w {
                    let patch = (z * grid.h + y) * grid.w + x;
                    let (u, s) = locate([z, y, x]);
                    forward_index.push((u, s));
                    inverse[u * slots + s] = patch;
                    positions[patch] = u * slots + s;
                }
            }
        }
        UnitPartition {
            mode,
            grid,
            unit,
            forward_index,
            inverse_index: inverse.into(),
            positions: positions.into(),
        }
    }
}

fn row_major(idx: [usize; 3], ext: [usize; 3]) -> usize {
    (idx[0] * ext[1] + idx[1]) * ext[2] + idx[2]
}

/// Contiguous bricks; units and slots both enumerated row-major.
pub fn partition_local(grid: GridDims, unit: UnitDims) -> Result<UnitPartition> {
    let g = DilationDims::for_grid(grid, unit)?.as_array();
    let u = unit.as_array();
    Ok(UnitPartition::build(PartitionMode::Local, grid, unit, |p| {
        let brick = [p[0] / u[0], p[1] / u[1], p[2] / u[2]];
        let within = [p[0] % u[0], p[1] % u[1], p[2] % u[2]];
        (row_major(brick, g), row_major(within, u))
    }))
}

/// Dilated units: slot `(i, j, k)` of the unit with offset `(o_d, o_h, o_w)`
/// is patch `(o_d + i g_d, o_h + j g_h, o_w + k g_w)`.
pub fn partition_global(grid: GridDims, unit: UnitDims) -> Result<UnitPartition> {
    let g = DilationDims::for_grid(grid, unit)?.as_array();
    let u = unit.as_array();
    Ok(UnitPartition::build(PartitionMode::Global, grid, unit, |p| {
        let offset = [p[0] % g[0], p[1] % g[1], p[2] % g[2]];
        let slot = [p[0] / g[0], p[1] / g[1], p[2] / g[2]];
        (row_major(offset, g), row_major(slot, u))
    }))
}

pub fn partition(mode: PartitionMode, grid: GridDims, unit: UnitDims) -> Result<UnitPartition> {
    match mode {
        PartitionMode::Local => partition_local(grid, unit),
        PartitionMode::Global => partition_global(grid, unit),
    }
}

/// Multi-head self-attention weights. All projections are `[C, C]` with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub heads: usize,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl AttentionParams<ParamSpec> {
    pub fn spec(channels: usize, heads: usize) -> Self {
        AttentionParams {
            heads,
            q: Linear::spec(channels, channels),
            k: Linear::spec(channels, channels),
            v: Linear::spec(channels, channels),
            o: Linear::spec(channels, channels),
        }
    }
}

impl<T> ParamTree<T> for AttentionParams<T> {
    type With<U> = AttentionParams<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> Result<U, E>,
    ) -> Result<AttentionParams<U>, E> {
        Ok(AttentionParams {
            heads: self.heads,
            q: self.q.try_map(&join(prefix, "q"), f)?,
            k: self.k.try_map(&join(prefix, "k"), f)?,
            v: self.v.try_map(&join(prefix, "v"), f)?,
            o: self.o.try_map(&join(prefix, "o"), f)?,
        })
    }
}

/// Scaled dot-product attention inside each unit of `tokens: [units, slots, C]`.
///
/// Per head: `softmax(Q Kᵀ / √(C/heads)) V`; heads are concatenated and passed
/// through the output projection. Units never interact.
pub fn unit_attention(tape: &Tape, tokens: Var, p: &AttentionParams<Var>) -> Result<Var> {
    let shape = tape.shape(tokens)?;
    let [units, slots, c] = shape[..] else {
        bail!(Dimension, "unit_attention expects [units, slots, C], got {:?}", shape);
    };
    let heads = p.heads;
    if heads == 0 || c % heads != 0 {
        bail!(Config, "{heads} heads do not divide {c} channels");
    }
    let hd = c / heads;
    let n = units * slots;
    let x = tape.reshape(tokens, &[n, c])?;
    let q = p.q.forward(tape, x)?;
    let k = p.k.forward(tape, x)?;
    let v = p.v.forward(tape, x)?;

    let split = |t: Var, axes: &[usize], tail: [usize; 2]| -> Result<Var> {
        let t = tape.reshape(t, &[units, slots, heads, hd])?;
        let t = tape.permute(t, axes)?;
        tape.reshape(t, &[units * heads, tail[0], tail[1]])
    };
    let qh = split(q, &[0, 2, 1, 3], [slots, hd])?;
    let kt = split(k, &[0, 2, 3, 1], [hd, slots])?;
    let vh = split(v, &[0, 2, 1, 3], [slots, hd])?;

    let scores = tape.matmul(qh, kt)?;
    let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt())?;
    let weights = tape.softmax_lastdim(scores)?;
    let mixed = tape.matmul(weights, vh)?;

    let mixed = tape.reshape(mixed, &[units, heads, slots, hd])?;
    let mixed = tape.permute(mixed, &[0, 2, 1, 3])?;
    let mixed = tape.reshape(mixed, &[n, c])?;
    let out = p.o.forward(tape, mixed)?;
    tape.reshape(out, &[units, slots, c])
}

/// Gather tokens into units, attend, scatter back to patch order.
pub fn windowed_msa(
    tape: &Tape,
    x: Var,
    part: &UnitPartition,
    params: &AttentionParams<Var>,
) -> Result<Var> {
    let shape = tape.shape(x)?;
    let n = part.grid.volume();
    if shape.len() != 2 || shape[0] != n {
        bail!(Dimension, "expected [{n}, C] tokens for grid {}, got {:?}", part.grid, shape);
    }
    let c = shape[1];
    let grouped = tape.gather_rows(x, part.gather_order())?;
    let grouped = tape.reshape(grouped, &[part.units(), part.slots(), c])?;
    let attended = unit_attention(tape, grouped, params)?;
    let attended = tape.reshape(attended, &[n, c])?;
    tape.gather_rows(attended, part.scatter_order())
}

/// Local scope attention over contiguous units.
pub fn ls_msa(tape: &Tape, x: Var, grid: GridDims, unit: UnitDims, p: &AttentionParams<Var>) -> Result<Var> {
    windowed_msa(tape, x, &partition_local(grid, unit)?, p)
}

/// Global scope attention over dilated units.
pub fn gs_msa(tape: &Tape, x: Var, grid: GridDims, unit: UnitDims, p: &AttentionParams<Var>) -> Result<Var> {
    windowed_msa(tape, x, &partition_global(grid, unit)?, p)
}

/// Multiply count of one attention layer.
///
/// Without a unit: `4·N·C² + 2·N²·C` (full self-attention).
/// With a unit of `u` patches: `4·N·C² + 2·u·N·C`, identical for local and
/// global partitions.
pub fn attention_complexity(grid: GridDims, channels: usize, unit: Option<UnitDims>) -> u64 {
    let n = grid.volume() as u64;
    let c = channels as u64;
    let window = unit.map_or(n, |u| u.volume() as u64);
    4 * n * c * c + 2 * window * n * c
}

/// The part of [`attention_complexity`] that depends on the window size.
pub fn attention_mixing_term(grid: GridDims, channels: usize, unit: Option<UnitDims>) -> u64 {
    let n = grid.volume() as u64;
    attention_complexity(grid, channels, unit) - 4 * n * (channels as u64).pow(2)
}
