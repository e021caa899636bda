//! Tape layers against the scalar reference implementations.

use dformer::architecture::{
    build_model, downsample, model_spec, patch_embed, patch_expand_head, skip_fuse, upsample, ModelConfig,
    StageTensor,
};
use dformer::attention::{ls_msa, gs_msa, AttentionParams, PartitionMode};
use dformer::blocks::{block_forward, dpe_forward, scope_module_forward, BlockParams, DpeParams, ScopeModuleParams};
use dformer::dims::{GridDims, KernelDims, UnitDims, VoxelDims};
use dformer::oracle;
use dformer::params::{bind_const, Linear, ParamTree};
use dformer::selftest::random_params;
use dformer::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rng: &mut ChaCha8Rng, shape: impl Into<Vec<usize>>) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn attention_both_scopes() {
    let mut r = rng(1);
    let grid = GridDims::new(4, 2, 4);
    let unit = UnitDims::new(2, 2, 2);
    let p = random_params(&AttentionParams::spec(6, 3), &mut r, 0.5);
    let x = random(&mut r, [grid.volume(), 6]);
    let tape = Tape::new();
    let pv = bind_const(&tape, &p);
    let xv = tape.constant(x.clone());
    let ls = tape.value(ls_msa(&tape, xv, grid, unit, &pv).unwrap()).unwrap();
    let gs = tape.value(gs_msa(&tape, xv, grid, unit, &pv).unwrap()).unwrap();
    assert!(ls.max_abs_diff(&oracle::dense_windowed_msa(&x, grid, unit, PartitionMode::Local, &p)) < TOL);
    assert!(gs.max_abs_diff(&oracle::dense_windowed_msa(&x, grid, unit, PartitionMode::Global, &p)) < TOL);
}

#[test]
fn unit_equal_to_grid_is_plain_attention() {
    let mut r = rng(2);
    let grid = GridDims::new(2, 3, 2);
    let p = random_params(&AttentionParams::spec(4, 2), &mut r, 0.5);
    let x = random(&mut r, [grid.volume(), 4]);
    let tape = Tape::new();
    let pv = bind_const(&tape, &p);
    let y = tape.value(ls_msa(&tape, tape.constant(x.clone()), grid, UnitDims::new(2, 3, 2), &pv).unwrap()).unwrap();
    assert!(y.max_abs_diff(&oracle::masked_msa(&x, &p, |_, _| true)) < TOL);
}

#[test]
fn scope_modules_dpe_and_block() {
    let mut r = rng(3);
    let grid = GridDims::new(4, 4, 2);
    let unit = UnitDims::new(2, 2, 1);
    let x = random(&mut r, [grid.volume(), 4]);
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    for scope in [PartitionMode::Local, PartitionMode::Global] {
        let p = random_params(&ScopeModuleParams::spec(scope, 4, 2, 4, 1e-5), &mut r, 0.5);
        let y = tape.value(scope_module_forward(&tape, xv, grid, unit, &bind_const(&tape, &p)).unwrap()).unwrap();
        assert!(y.max_abs_diff(&oracle::naive_scope_module(&x, grid, unit, &p)) < TOL, "{scope:?}");
    }
    let p = random_params(&DpeParams::spec(4, KernelDims::new(3, 3, 1)), &mut r, 0.5);
    let y = tape.value(dpe_forward(&tape, xv, grid, &bind_const(&tape, &p)).unwrap()).unwrap();
    assert!(y.max_abs_diff(&oracle::naive_dpe(&x, grid, &p)) < TOL);

    let p = random_params(&BlockParams::spec(4, 2, 2, 4, KernelDims::cube(3), 1e-5), &mut r, 0.3);
    let y = tape.value(block_forward(&tape, xv, grid, unit, &bind_const(&tape, &p)).unwrap()).unwrap();
    assert!(y.max_abs_diff(&oracle::naive_block(&x, grid, unit, &p)) < TOL);
}

#[test]
fn sampling_layers() {
    let mut r = rng(4);
    let cfg = ModelConfig { in_channels: 2, ..ModelConfig::tiny() };
    let c = 5;
    let lin = |r: &mut ChaCha8Rng, i: usize, o: usize| -> Linear<Tensor> {
        random_params(&Linear::spec(i, o), r, 0.5)
    };
    let tape = Tape::new();

    let volume = random(&mut r, [2, cfg.input.d, cfg.input.h, cfg.input.w]);
    let embed = lin(&mut r, 2 * cfg.patch_voxels(), c);
    let s = patch_embed(&tape, tape.constant(volume.clone()), &cfg, &bind_const(&tape, &embed)).unwrap();
    assert_eq!(s.grid, cfg.base_grid());
    assert!(tape.value(s.tokens).unwrap().max_abs_diff(&oracle::naive_patch_embed(&volume, &cfg, &embed)) < TOL);

    let grid = GridDims::new(4, 2, 6);
    let x = random(&mut r, [grid.volume(), c]);
    let down = lin(&mut r, 8 * c, 2 * c);
    let d = downsample(&tape, StageTensor { tokens: tape.constant(x.clone()), grid }, &bind_const(&tape, &down)).unwrap();
    assert_eq!(d.grid, GridDims::new(2, 1, 3));
    assert!(tape.value(d.tokens).unwrap().max_abs_diff(&oracle::naive_downsample(&x, grid, &down)) < TOL);

    let coarse = GridDims::new(2, 1, 3);
    let y = random(&mut r, [coarse.volume(), 2 * c]);
    let up = lin(&mut r, 2 * c, 8 * c);
    let u = upsample(&tape, StageTensor { tokens: tape.constant(y.clone()), grid: coarse }, &bind_const(&tape, &up)).unwrap();
    assert_eq!(u.grid, grid);
    assert!(tape.value(u.tokens).unwrap().max_abs_diff(&oracle::naive_upsample(&y, coarse, &up)) < TOL);

    let enc = random(&mut r, [grid.volume(), c]);
    let fuse = lin(&mut r, 2 * c, c);
    let f = skip_fuse(
        &tape,
        StageTensor { tokens: tape.constant(x.clone()), grid },
        StageTensor { tokens: tape.constant(enc.clone()), grid },
        &bind_const(&tape, &fuse),
    )
    .unwrap();
    assert!(tape.value(f.tokens).unwrap().max_abs_diff(&oracle::naive_skip_fuse(&x, &enc, &fuse)) < TOL);

    let base = cfg.base_grid();
    let t = random(&mut r, [base.volume(), cfg.channels]);
    let expand = lin(&mut r, cfg.channels, cfg.patch_voxels() * cfg.channels);
    let head = lin(&mut r, cfg.channels, cfg.num_classes);
    let logits = patch_expand_head(
        &tape,
        StageTensor { tokens: tape.constant(t.clone()), grid: base },
        &cfg,
        &bind_const(&tape, &expand),
        &bind_const(&tape, &head),
    )
    .unwrap();
    let logits = tape.value(logits).unwrap();
    assert_eq!(logits.shape(), [cfg.num_classes, cfg.input.d, cfg.input.h, cfg.input.w]);
    assert!(logits.max_abs_diff(&oracle::naive_expand_head(&t, &cfg, &expand, &head)) < TOL);
}

#[test]
fn whole_network() {
    let configs = [
        ModelConfig::tiny(),
        ModelConfig { num_classes: 4, in_channels: 2, input: VoxelDims::new(8, 16, 32), ..ModelConfig::tiny() },
    ];
    for (i, cfg) in configs.iter().enumerate() {
        let mut r = rng(10 + i as u64);
        let params = random_params(&model_spec(cfg), &mut r, 0.2);
        let volume = random(&mut r, [cfg.in_channels, cfg.input.d, cfg.input.h, cfg.input.w]);
        let model = dformer::architecture::Model { config: cfg.clone(), seed: 0, params: params.clone() };
        let got = model.infer(&volume).unwrap();
        let want = oracle::naive_forward(cfg, &params, &volume);
        assert!(got.max_abs_diff(&want) < 1e-9, "config {i}: {}", got.max_abs_diff(&want));
    }
}

#[test]
fn parameter_enumeration_matches_spec() {
    for cfg in [ModelConfig::tiny(), ModelConfig::sphere_task(), ModelConfig::default()] {
        let spec = model_spec(&cfg);
        let mut ours: Vec<(String, Vec<usize>)> =
            spec.names().into_iter().zip(spec.leaves().into_iter().map(|s| s.shape)).collect();
        let mut theirs = oracle::enumerate_param_shapes(&cfg);
        ours.sort();
        theirs.sort();
        assert_eq!(ours, theirs);
    }
    let m = build_model(&ModelConfig::tiny(), 0).unwrap();
    assert_eq!(m.census() as u64, dformer::analyzer::count_params(&ModelConfig::tiny()).unwrap());
}
