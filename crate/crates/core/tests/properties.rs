//! Randomized invariants.

use dformer::analyzer::{count_flops, count_params};
use dformer::architecture::ModelConfig;
use dformer::attention::{partition, PartitionMode};
use dformer::dims::{GridDims, UnitDims, VoxelDims};
use dformer::harness::{poly_lr, LogRecord, RunConfig};
use dformer::loss::{dice_score, LabelVolume};
use proptest::prelude::*;

fn grid_and_unit() -> impl Strategy<Value = (GridDims, UnitDims)> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..4, 1usize..4)
        .prop_map(|(gd, gh, gw, ud, uh, uw)| (GridDims::new(gd * ud, gh * uh, gw * uw), UnitDims::new(ud, uh, uw)))
}

proptest! {
    #[test]
    fn partitions_are_bijections((grid, unit) in grid_and_unit(), global in any::<bool>()) {
        let mode = if global { PartitionMode::Global } else { PartitionMode::Local };
        let p = partition(mode, grid, unit).unwrap();
        prop_assert_eq!(p.units() * p.slots(), grid.volume());
        let mut seen = vec![false; grid.volume()];
        for patch in 0..grid.volume() {
            let (u, s) = p.forward_index[patch];
            prop_assert_eq!(p.patch_at(u, s), patch);
            prop_assert!(!seen[u * p.slots() + s]);
            seen[u * p.slots() + s] = true;
        }
    }

    #[test]
    fn counts_grow_with_input(scale in 1usize..3, extra in 1usize..3) {
        let cfg = ModelConfig::tiny();
        let small = VoxelDims::new(cfg.input.d * scale, cfg.input.h * scale, cfg.input.w * scale);
        let large = VoxelDims::new(small.d * (extra + 1), small.h, small.w);
        prop_assert!(count_flops(&cfg, large).unwrap() > count_flops(&cfg, small).unwrap());
    }

    #[test]
    fn params_grow_with_width(c in 2usize..6) {
        let narrow = ModelConfig { channels: c, heads: [1; 4], ..ModelConfig::tiny() };
        let wide = ModelConfig { channels: c + 1, ..narrow.clone() };
        prop_assert!(count_params(&wide).unwrap() > count_params(&narrow).unwrap());
    }

    #[test]
    fn dice_is_symmetric(a in prop::collection::vec(0u8..3, 12), b in prop::collection::vec(0u8..3, 12), class in 1usize..3) {
        let dims = VoxelDims::new(1, 3, 4);
        let x = LabelVolume::new(dims, 3, a).unwrap();
        let y = LabelVolume::new(dims, 3, b).unwrap();
        let (ab, ba) = (dice_score(&x, &y, class).unwrap(), dice_score(&y, &x, class).unwrap());
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn poly_lr_strictly_decreasing(steps in 2usize..500, power in 0.1f64..3.0) {
        let run = RunConfig { steps, poly_power: power, ..RunConfig::default() };
        let mut prev = f64::INFINITY;
        for t in 0..=steps {
            let lr = poly_lr(t, &run).unwrap();
            prop_assert_eq!(lr, run.lr * (1.0 - t as f64 / steps as f64).powf(power));
            prop_assert!(lr < prev);
            prev = lr;
        }
    }

    #[test]
    fn log_records_round_trip(step in 0usize..100_000, lr in 0.0f64..1.0, loss in -2.0f64..2.0) {
        let r = LogRecord { step, lr, loss };
        prop_assert_eq!(LogRecord::parse(&r.to_line()).unwrap(), r);
    }
}
