//! Sub-layers of a transformer block: the local and global scope modules
//! (pre-norm attention + MLP with two residuals) and the depthwise-convolution
//! position encoding.

use serde::Serialize;

use crate::attention::{ls_msa, gs_msa, AttentionParams, PartitionMode};
use crate::dims::{GridDims, KernelDims, UnitDims};
use crate::error::{bail, Result};
use crate::params::{join, Init, LayerNormParams, Linear, ParamSpec, ParamTree};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Activation {
    Gelu,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub ratio: usize,
    pub activation: Activation,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl MlpParams<ParamSpec> {
    pub fn spec(channels: usize, ratio: usize) -> Self {
        MlpParams {
            ratio,
            activation: Activation::Gelu,
            fc1: Linear::spec(channels, ratio * channels),
            fc2: Linear::spec(ratio * channels, channels),
        }
    }
}

impl<T> ParamTree<T> for MlpParams<T> {
    type With<U> = MlpParams<U>;

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<MlpParams<U>, E> {
        Ok(MlpParams {
            ratio: self.ratio,
            activation: self.activation,
            fc1: self.fc1.try_map(&join(prefix, "fc1"), f)?,
            fc2: self.fc2.try_map(&join(prefix, "fc2"), f)?,
        })
    }
}

/// Token-wise `W2 · gelu(W1 · x + b1) + b2`.
pub fn mlp_forward(tape: &Tape, x: Var, p: &MlpParams<Var>) -> Result<Var> {
    let hidden = p.fc1.forward(tape, x)?;
    let hidden = match p.activation {
        Activation::Gelu => tape.gelu(hidden)?,
    };
    p.fc2.forward(tape, hidden)
}

/// One local or global scope module.
#[derive(Clone, Debug, PartialEq)]
pub struct ScopeModuleParams<T> {
    pub scope: PartitionMode,
    pub norm1: LayerNormParams<T>,
    pub attn: AttentionParams<T>,
    pub norm2: LayerNormParams<T>,
    pub mlp: MlpParams<T>,
}

impl ScopeModuleParams<ParamSpec> {
    pub fn spec(scope: PartitionMode, channels: usize, heads: usize, mlp_ratio: usize, ln_eps: f64) -> Self {
        ScopeModuleParams {
            scope,
            norm1: LayerNormParams::spec(channels, ln_eps),
            attn: AttentionParams::spec(channels, heads),
            norm2: LayerNormParams::spec(channels, ln_eps),
            mlp: MlpParams::spec(channels, mlp_ratio),
        }
    }
}

impl<T> ParamTree<T> for ScopeModuleParams<T> {
    type With<U> = ScopeModuleParams<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> Result<U, E>,
    ) -> Result<ScopeModuleParams<U>, E> {
        Ok(ScopeModuleParams {
            scope: self.scope,
            norm1: self.norm1.try_map(&join(prefix, "norm1"), f)?,
            attn: self.attn.try_map(&join(prefix, "attn"), f)?,
            norm2: self.norm2.try_map(&join(prefix, "norm2"), f)?,
            mlp: self.mlp.try_map(&join(prefix, "mlp"), f)?,
        })
    }
}

/// `ẑ = MSA(LN(z)) + z; out = MLP(LN(ẑ)) + ẑ` with the module's own scope.
pub fn scope_module_forward(
    tape: &Tape,
    z: Var,
    grid: GridDims,
    unit: UnitDims,
    p: &ScopeModuleParams<Var>,
) -> Result<Var> {
    let normed = p.norm1.forward(tape, z)?;
    let attended = match p.scope {
        PartitionMode::Local => ls_msa(tape, normed, grid, unit, &p.attn)?,
        PartitionMode::Global => gs_msa(tape, normed, grid, unit, &p.attn)?,
    };
    let z_hat = tape.add(attended, z)?;
    let normed = p.norm2.forward(tape, z_hat)?;
    let mixed = mlp_forward(tape, normed, &p.mlp)?;
    tape.add(mixed, z_hat)
}

pub fn lsm_forward(tape: &Tape, z: Var, grid: GridDims, unit: UnitDims, p: &ScopeModuleParams<Var>) -> Result<Var> {
    if p.scope != PartitionMode::Local {
        bail!(Contract, "lsm_forward called with a global scope module");
    }
    scope_module_forward(tape, z, grid, unit, p)
}

pub fn gsm_forward(tape: &Tape, z: Var, grid: GridDims, unit: UnitDims, p: &ScopeModuleParams<Var>) -> Result<Var> {
    if p.scope != PartitionMode::Global {
        bail!(Contract, "gsm_forward called with a local scope module");
    }
    scope_module_forward(tape, z, grid, unit, p)
}

/// Depthwise kernels `[C, kd, kh, kw]` and per-channel bias.
#[derive(Clone, Debug, PartialEq)]
pub struct DpeParams<T> {
    pub kernel: T,
    pub bias: T,
}

impl DpeParams<ParamSpec> {
    pub fn spec(channels: usize, kernel: KernelDims) -> Self {
        DpeParams {
            kernel: ParamSpec::new([channels, kernel.d, kernel.h, kernel.w], Init::TruncNormal),
            bias: ParamSpec::new([channels], Init::Zeros),
        }
    }
}

impl<T> ParamTree<T> for DpeParams<T> {
    type With<U> = DpeParams<U>;

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<DpeParams<U>, E> {
        Ok(DpeParams {
            kernel: f(&join(prefix, "kernel"), &self.kernel)?,
            bias: f(&join(prefix, "bias"), &self.bias)?,
        })
    }
}

/// Position encoding: lay tokens out as a `[C, d, h, w]` volume, apply a
/// same-padded depthwise convolution plus bias, flatten back, add to `x`.
pub fn dpe_forward(tape: &Tape, x: Var, grid: GridDims, p: &DpeParams<Var>) -> Result<Var> {
    let shape = tape.shape(x)?;
    let n = grid.volume();
    if shape.len() != 2 || shape[0] != n {
        bail!(Dimension, "expected [{n}, C] tokens for grid {grid}, got {:?}", shape);
    }
    let c = shape[1];
    let kshape = tape.shape(p.kernel)?;
    if kshape.len() != 4 {
        bail!(Dimension, "DPE kernel must be [C, kd, kh, kw], got {:?}", kshape);
    }
    let padding = [kshape[1] / 2, kshape[2] / 2, kshape[3] / 2];
    let vol = tape.permute(x, &[1, 0])?;
    let vol = tape.reshape(vol, &[c, grid.d, grid.h, grid.w])?;
    let conv = tape.depthwise_conv3d(vol, p.kernel, padding)?;
    let conv = tape.reshape(conv, &[c, n])?;
    let conv = tape.permute(conv, &[1, 0])?;
    let conv = tape.add_last_dim(conv, p.bias)?;
    tape.add(conv, x)
}

/// One transformer block: position encoding followed by alternating
/// local/global modules.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub dpe: DpeParams<T>,
    pub modules: Vec<ScopeModuleParams<T>>,
}

impl BlockParams<ParamSpec> {
    pub fn spec(
        channels: usize,
        pairs: usize,
        heads: usize,
        mlp_ratio: usize,
        kernel: KernelDims,
        ln_eps: f64,
    ) -> Self {
        let modules = (0..2 * pairs)
            .map(|i| {
                let scope = if i % 2 == 0 { PartitionMode::Local } else { PartitionMode::Global };
                ScopeModuleParams::spec(scope, channels, heads, mlp_ratio, ln_eps)
            })
            .collect();
        BlockParams { dpe: DpeParams::spec(channels, kernel), modules }
    }
}

impl<T> ParamTree<T> for BlockParams<T> {
    type With<U> = BlockParams<U>;

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<BlockParams<U>, E> {
        Ok(BlockParams {
            dpe: self.dpe.try_map(&join(prefix, "dpe"), f)?,
            modules: self.modules.try_map(&join(prefix, "modules"), f)?,
        })
    }
}

pub fn block_forward(tape: &Tape, x: Var, grid: GridDims, unit: UnitDims, p: &BlockParams<Var>) -> Result<Var> {
    let mut z = dpe_forward(tape, x, grid, &p.dpe)?;
    for module in &p.modules {
        z = scope_module_forward(tape, z, grid, unit, module)?;
    }
    Ok(z)
}
