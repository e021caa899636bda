use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, STAGES};
use crate::blocks::{block_forward, BlockParams};
use crate::dims::GridDims;
use crate::error::{bail, Result};
use crate::params::{self, join, LayerNormParams, Linear, ParamSpec, ParamTree};
use crate::tensor::{Tape, Tensor, Var};

/// Token sequence `[d·h·w, C]` in row-major `(d, h, w)` order plus its grid.
#[derive(Clone, Copy, Debug)]
pub struct StageTensor {
    pub tokens: Var,
    pub grid: GridDims,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage<T> {
    pub block: BlockParams<T>,
    /// Absent on the deepest stage.
    pub down: Option<Linear<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStage<T> {
    pub up: Linear<T>,
    pub fuse: Linear<T>,
    pub block: BlockParams<T>,
}

/// All learned weights of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub embed: Linear<T>,
    pub encoder: Vec<EncoderStage<T>>,
    /// `decoder[i]` restores stage `i`'s resolution; only stages below the
    /// bottleneck have one.
    pub decoder: Vec<DecoderStage<T>>,
    /// Normalizes decoder output before patch expanding.
    pub final_norm: LayerNormParams<T>,
    pub expand: Linear<T>,
    pub head: Linear<T>,
}

impl<T, P: ParamTree<T>> ParamTree<T> for Option<P> {
    type With<U> = Option<P::With<U>>;

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<Self::With<U>, E> {
        self.as_ref().map(|p| p.try_map(prefix, f)).transpose()
    }
}

impl<T> ParamTree<T> for EncoderStage<T> {
    type With<U> = EncoderStage<U>;

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<EncoderStage<U>, E> {
        Ok(EncoderStage {
            block: self.block.try_map(&join(prefix, "block"), f)?,
            down: self.down.try_map(&join(prefix, "down"), f)?,
        })
    }
}

impl<T> ParamTree<T> for DecoderStage<T> {
    type With<U> = DecoderStage<U>;

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<DecoderStage<U>, E> {
        Ok(DecoderStage {
            up: self.up.try_map(&join(prefix, "up"), f)?,
            fuse: self.fuse.try_map(&join(prefix, "fuse"), f)?,
            block: self.block.try_map(&join(prefix, "block"), f)?,
        })
    }
}

impl<T> ParamTree<T> for ModelParams<T> {
    type With<U> = ModelParams<U>;

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<ModelParams<U>, E> {
        Ok(ModelParams {
            embed: self.embed.try_map(&join(prefix, "embed"), f)?,
            encoder: self.encoder.try_map(&join(prefix, "encoder"), f)?,
            decoder: self.decoder.try_map(&join(prefix, "decoder"), f)?,
            final_norm: self.final_norm.try_map(&join(prefix, "final_norm"), f)?,
            expand: self.expand.try_map(&join(prefix, "expand"), f)?,
            head: self.head.try_map(&join(prefix, "head"), f)?,
        })
    }
}

/// Shapes and initializers of every parameter for `cfg`.
pub fn model_spec(cfg: &ModelConfig) -> ModelParams<ParamSpec> {
    let block = |stage: usize| {
        BlockParams::spec(
            cfg.stage_channels(stage),
            cfg.depths[stage],
            cfg.heads[stage],
            cfg.mlp_ratio,
            cfg.dpe_kernel,
            cfg.ln_eps,
        )
    };
    let encoder = (0..STAGES)
        .map(|s| {
            let c = cfg.stage_channels(s);
            EncoderStage { block: block(s), down: (s + 1 < STAGES).then(|| Linear::spec(8 * c, 2 * c)) }
        })
        .collect();
    let decoder = (0..STAGES - 1)
        .map(|s| {
            let c = cfg.stage_channels(s);
            let deeper = cfg.stage_channels(s + 1);
            DecoderStage {
                up: Linear::spec(deeper, 8 * (deeper / 2)),
                fuse: Linear::spec(2 * c, c),
                block: block(s),
            }
        })
        .collect();
    let c = cfg.channels;
    ModelParams {
        embed: Linear::spec(cfg.in_channels * cfg.patch_voxels(), c),
        encoder,
        decoder,
        final_norm: LayerNormParams::spec(c, cfg.ln_eps),
        expand: Linear::spec(c, cfg.patch_voxels() * c),
        head: Linear::spec(c, cfg.num_classes),
    }
}

/// A built network: configuration, the seed it was initialized from, and
/// its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ModelParams<Tensor>,
}

/// Deterministic construction: truncated-normal weights (std 0.02), zero
/// biases, unit LayerNorm scales, all drawn from a ChaCha8 stream seeded with
/// `seed` in parameter-name order.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<Model> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = params::materialize(&model_spec(cfg), &mut rng);
    Ok(Model { config: cfg.clone(), seed, params })
}

impl Model {
    pub fn census(&self) -> usize {
        params::census(&self.params)
    }

    /// Stage grids from the shallowest to the bottleneck.
    pub fn stage_grids(&self) -> Vec<GridDims> {
        (0..STAGES).map(|s| self.config.stage_grid(s)).collect()
    }

    /// Registers all weights as grad-enabled leaves on `tape`.
    pub fn bind(&self, tape: &Tape) -> ModelParams<Var> {
        params::bind(tape, &self.params)
    }

    /// Logits `[K, D, H, W]` with weights recorded as constants.
    pub fn infer(&self, volume: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = params::bind_const(&tape, &self.params);
        let x = tape.constant(volume.clone());
        let logits = forward(&tape, &self.config, &bound, x)?;
        tape.value(logits)
    }
}

fn row_major(idx: [usize; 3], ext: [usize; 3]) -> usize {
    (idx[0] * ext[1] + idx[1]) * ext[2] + idx[2]
}

fn for_each_index(ext: [usize; 3], mut f: impl FnMut([usize; 3])) {
    for z in 0..ext[0] {
        for y in 0..ext[1] {
            for x in 0..ext[2] {
                f([z, y, x]);
            }
        }
    }
}

/// Splits `volume: [in_ch, D, H, W]` into non-overlapping patches, flattens
/// each as `(channel, d, h, w)` and projects to `C` channels.
pub fn patch_embed(tape: &Tape, volume: Var, cfg: &ModelConfig, embed: &Linear<Var>) -> Result<StageTensor> {
    let shape = tape.shape(volume)?;
    let expected = [cfg.in_channels, cfg.input.d, cfg.input.h, cfg.input.w];
    if shape != expected {
        bail!(Dimension, "input volume {:?} does not match configured {:?}", shape, expected);
    }
    let patch = cfg.patch.as_array();
    for axis in 0..3 {
        if expected[axis + 1] % patch[axis] != 0 {
            bail!(Config, "input {:?} not divisible by patch {}", shape, cfg.patch);
        }
    }
    let grid = cfg.base_grid();
    let vox = cfg.input.as_array();
    let mut index = Vec::with_capacity(shape.iter().product());
    for_each_index(grid.as_array(), |t| {
        for ch in 0..cfg.in_channels {
            for_each_index(patch, |o| {
                let v = [t[0] * patch[0] + o[0], t[1] * patch[1] + o[1], t[2] * patch[2] + o[2]];
                index.push(ch * cfg.input.volume() + row_major(v, vox));
            });
        }
    });
    let flat = tape.reshape(volume, &[shape.iter().product(), 1])?;
    let gathered = tape.gather_rows(flat, Arc::from(index))?;
    let rows = tape.reshape(gathered, &[grid.volume(), cfg.in_channels * cfg.patch_voxels()])?;
    Ok(StageTensor { tokens: embed.forward(tape, rows)?, grid })
}

/// Concatenates each 2×2×2 neighbourhood (offsets in row-major order) into
/// one `8C` token and projects it.
pub fn downsample(tape: &Tape, s: StageTensor, proj: &Linear<Var>) -> Result<StageTensor> {
    let g = s.grid.as_array();
    if g.iter().any(|e| e % 2 != 0) {
        bail!(Config, "cannot down-sample odd grid {}", s.grid);
    }
    let shape = tape.shape(s.tokens)?;
    if shape.len() != 2 || shape[0] != s.grid.volume() {
        bail!(Dimension, "tokens {:?} do not match grid {}", shape, s.grid);
    }
    let c = shape[1];
    let coarse = [g[0] / 2, g[1] / 2, g[2] / 2];
    let mut index = Vec::with_capacity(s.grid.volume());
    for_each_index(coarse, |t| {
        for_each_index([2, 2, 2], |o| index.push(row_major([2 * t[0] + o[0], 2 * t[1] + o[1], 2 * t[2] + o[2]], g)));
    });
    let grouped = tape.gather_rows(s.tokens, Arc::from(index))?;
    let n = s.grid.volume() / 8;
    let merged = tape.reshape(grouped, &[n, 8 * c])?;
    Ok(StageTensor { tokens: proj.forward(tape, merged)?, grid: GridDims::from_array(coarse) })
}

/// Projects each token to `8 · C/2` features and scatters them to its 2×2×2
/// children, the layout inverse of [`downsample`].
pub fn upsample(tape: &Tape, s: StageTensor, proj: &Linear<Var>) -> Result<StageTensor> {
    let shape = tape.shape(s.tokens)?;
    if shape.len() != 2 || shape[0] != s.grid.volume() {
        bail!(Dimension, "tokens {:?} do not match grid {}", shape, s.grid);
    }
    let c = shape[1];
    if c % 2 != 0 {
        bail!(Config, "cannot up-sample odd channel width {c}");
    }
    let half = c / 2;
    let projected = proj.forward(tape, s.tokens)?;
    let pshape = tape.shape(projected)?;
    if pshape[1] != 8 * half {
        bail!(Dimension, "up-sampling projection yields {} features, need {}", pshape[1], 8 * half);
    }
    let children = tape.reshape(projected, &[8 * s.grid.volume(), half])?;
    let g = s.grid.as_array();
    let fine = [2 * g[0], 2 * g[1], 2 * g[2]];
    let mut index = Vec::with_capacity(8 * s.grid.volume());
    for_each_index(fine, |p| {
        let parent = row_major([p[0] / 2, p[1] / 2, p[2] / 2], g);
        let child = row_major([p[0] % 2, p[1] % 2, p[2] % 2], [2, 2, 2]);
        index.push(parent * 8 + child);
    });
    let tokens = tape.gather_rows(children, Arc::from(index))?;
    Ok(StageTensor { tokens, grid: GridDims::from_array(fine) })
}

/// Channel concatenation `[decoder | encoder]` followed by a projection.
pub fn skip_fuse(tape: &Tape, decoder: StageTensor, encoder: StageTensor, proj: &Linear<Var>) -> Result<StageTensor> {
    if decoder.grid != encoder.grid {
        bail!(Dimension, "skip grids differ: decoder {} vs encoder {}", decoder.grid, encoder.grid);
    }
    let (ds, es) = (tape.shape(decoder.tokens)?, tape.shape(encoder.tokens)?);
    if ds != es {
        bail!(Dimension, "skip widths differ: decoder {:?} vs encoder {:?}", ds, es);
    }
    let joined = tape.concat_last_dim(decoder.tokens, encoder.tokens)?;
    Ok(StageTensor { tokens: proj.forward(tape, joined)?, grid: decoder.grid })
}

/// Expands each token back to its patch of voxels and applies the per-voxel
/// class head. Returns logits `[K, D, H, W]`.
pub fn patch_expand_head(
    tape: &Tape,
    s: StageTensor,
    cfg: &ModelConfig,
    expand: &Linear<Var>,
    head: &Linear<Var>,
) -> Result<Var> {
    if s.grid != cfg.base_grid() {
        bail!(Contract, "patch expanding needs the base grid {}, got {}", cfg.base_grid(), s.grid);
    }
    let p = cfg.patch_voxels();
    let n = s.grid.volume();
    let expanded = expand.forward(tape, s.tokens)?;
    let width = tape.shape(expanded)?[1];
    if width % p != 0 {
        bail!(Dimension, "expansion width {width} is not a multiple of {p} patch voxels");
    }
    let per_voxel = tape.reshape(expanded, &[n * p, width / p])?;
    let patch = cfg.patch.as_array();
    let g = s.grid.as_array();
    let mut index = Vec::with_capacity(n * p);
    for_each_index(cfg.input.as_array(), |v| {
        let token = row_major([v[0] / patch[0], v[1] / patch[1], v[2] / patch[2]], g);
        let slot = row_major([v[0] % patch[0], v[1] % patch[1], v[2] % patch[2]], patch);
        index.push(token * p + slot);
    });
    let voxels = tape.gather_rows(per_voxel, Arc::from(index))?;
    let logits = head.forward(tape, voxels)?;
    let logits = tape.permute(logits, &[1, 0])?;
    let k = tape.shape(logits)?[0];
    tape.reshape(logits, &[k, cfg.input.d, cfg.input.h, cfg.input.w])
}

/// Full network on one volume `[in_ch, D, H, W]`.
pub fn forward(tape: &Tape, cfg: &ModelConfig, p: &ModelParams<Var>, volume: Var) -> Result<Var> {
    if p.encoder.len() != STAGES || p.decoder.len() != STAGES - 1 {
        bail!(Contract, "parameter tree has {} encoder / {} decoder stages", p.encoder.len(), p.decoder.len());
    }
    let mut x = patch_embed(tape, volume, cfg, &p.embed)?;
    let mut skips = Vec::with_capacity(STAGES - 1);
    for (stage, enc) in p.encoder.iter().enumerate() {
        let tokens = block_forward(tape, x.tokens, x.grid, cfg.units[stage], &enc.block)?;
        x = StageTensor { tokens, grid: x.grid };
        if let Some(down) = &enc.down {
            skips.push(x);
            x = downsample(tape, x, down)?;
        }
    }
    for stage in (0..STAGES - 1).rev() {
        let dec = &p.decoder[stage];
        x = upsample(tape, x, &dec.up)?;
        x = skip_fuse(tape, x, skips[stage], &dec.fuse)?;
        let tokens = block_forward(tape, x.tokens, x.grid, cfg.units[stage], &dec.block)?;
        x = StageTensor { tokens, grid: x.grid };
    }
    x.tokens = p.final_norm.forward(tape, x.tokens)?;
    patch_expand_head(tape, x, cfg, &p.expand, &p.head)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let cfg = ModelConfig::tiny();
        let a = build_model(&cfg, 3).unwrap();
        let b = build_model(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let c = build_model(&cfg, 4).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn names_are_unique() {
        let spec = model_spec(&ModelConfig::sphere_task());
        let mut names = spec.names();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(names.contains(&"encoder.2.block.modules.5.mlp.fc2.bias".to_string()));
    }

    #[test]
    fn forward_shape_contract() {
        let cfg = ModelConfig::tiny();
        let model = build_model(&cfg, 1).unwrap();
        let vol = Tensor::from_fn([1, 8, 16, 16], |i| (i as f64 * 0.01).sin());
        let out = model.infer(&vol).unwrap();
        assert_eq!(out.shape(), &[2, 8, 16, 16]);
    }

    #[test]
    fn wrong_input_dims_rejected() {
        let model = build_model(&ModelConfig::tiny(), 1).unwrap();
        let err = model.infer(&Tensor::zeros([1, 8, 16, 8])).unwrap_err();
        assert!(matches!(err, crate::Error::Dimension(_)));
    }
}
