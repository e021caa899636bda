//! Acceptance suite: one PASS/FAIL line per criterion, thresholds pinned
//! here. Runs as a plain binary so the lines always reach the output.

use std::time::Instant;

use dformer::architecture::ModelConfig;
use dformer::harness::RunConfig;
use dformer::selftest;

const ORACLE_CONFIGS: usize = 24;
const LS_DENSE_TOL: f64 = 1e-10;
const GS_PERMUTED_TOL: f64 = 1e-12;
const SCALING_REPEATS: usize = 15;
const WALL_RATIO: (f64, f64) = (1.5, 3.0);
const REFERENCE_PARAMS: f64 = 44.26e6;
const REFERENCE_FLOPS: f64 = 54.46e9;
const PARAM_TOL: f64 = 0.10;
const FLOP_TOL: f64 = 0.15;
const GRAD_TOL: f64 = 1e-4;
const GRAD_COORDS: usize = 16;
const GRAD_STEP: f64 = 1e-5;
const GRAD_PARAM_SCALE: f64 = 0.3;
const LOSS_TOL: f64 = 1e-12;
const DICE_EPS: f64 = 1e-5;
const LOSS_GRAD_TOL: f64 = 1e-6;
const TOY_LOSS: f64 = -0.744_212_112_176_447_6;
const SPHERE_DSC: f64 = 0.85;
const SPHERE_MINUTES: f64 = 30.0;

type Outcome = Result<String, String>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn attention_oracle() -> Outcome {
    let r = selftest::attention_oracle(ORACLE_CONFIGS, 7).map_err(|e| e.to_string())?;
    verdict(
        r.ls_vs_dense < LS_DENSE_TOL && r.gs_vs_permuted_ls < GS_PERMUTED_TOL && r.gs_vs_dense < LS_DENSE_TOL,
        format!(
            "{} configs: ls-dense {:.1e}, gs-P^-1(ls)P {:.1e}, gs-dense {:.1e}",
            r.configs, r.ls_vs_dense, r.gs_vs_permuted_ls, r.gs_vs_dense
        ),
    )
}

fn complexity() -> Outcome {
    let rows = selftest::complexity_rows().map_err(|e| e.to_string())?;
    let bad: Vec<_> = rows.iter().filter(|r| r.analytic != r.measured).collect();
    verdict(bad.is_empty(), format!("{} configurations exact, mismatches: {bad:?}", rows.len() - bad.len()))
}

fn scaling() -> Outcome {
    let rows = selftest::scaling_rows(SCALING_REPEATS).map_err(|e| e.to_string())?;
    let channels = 32u64;
    let mut ok = true;
    let mut detail = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let proj = |n: usize| 4 * n as u64 * channels * channels;
        let mix_ls = |r: &dformer::analyzer::BenchRow| r.ls_msa_multiplies - proj(r.patches);
        let mix_msa = |r: &dformer::analyzer::BenchRow| r.msa_multiplies - proj(r.patches);
        let mix_measured = |r: &dformer::analyzer::BenchRow| r.measured_multiplies - proj(r.patches);
        let ls_ratio = mix_ls(b) as f64 / mix_ls(a) as f64;
        let msa_ratio = mix_msa(b) as f64 / mix_msa(a) as f64;
        let measured_ratio = mix_measured(b) as f64 / mix_measured(a) as f64;
        let wall = b.median_seconds / a.median_seconds;
        ok &= ls_ratio == 2.0 && msa_ratio == 4.0 && measured_ratio == 2.0;
        ok &= (WALL_RATIO.0..=WALL_RATIO.1).contains(&wall);
        detail.push(format!(
            "{}->{}: ls x{ls_ratio} msa x{msa_ratio} measured x{measured_ratio} wall x{wall:.2}",
            a.patches, b.patches
        ));
    }
    verdict(ok, detail.join("; "))
}

fn accounting() -> Outcome {
    let a = selftest::accounting().map_err(|e| e.to_string())?;
    let p_dev = a.full_params as f64 / REFERENCE_PARAMS - 1.0;
    let f_dev = a.full_flops as f64 / REFERENCE_FLOPS - 1.0;
    let census_ok = a.census.iter().all(|&(_, analytic, built, enumerated)| analytic == built && built == enumerated);
    verdict(
        p_dev.abs() <= PARAM_TOL && f_dev.abs() <= FLOP_TOL && census_ok,
        format!(
            "params {} ({:+.2}%), multiplies {} ({:+.2}%), census {:?}",
            a.full_params,
            100.0 * p_dev,
            a.full_flops,
            100.0 * f_dev,
            a.census
        ),
    )
}

fn gradients() -> Outcome {
    let cfg = ModelConfig::tiny();
    let params = dformer::analyzer::count_params(&cfg).map_err(|e| e.to_string())?;
    let rows = selftest::model_gradcheck(&cfg, 11, GRAD_COORDS, GRAD_STEP, GRAD_PARAM_SCALE)
        .map_err(|e| e.to_string())?;
    let worst = rows.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err)).ok_or("no parameter tensors")?;
    verdict(
        params <= 50_000 && cfg.input.volume() <= 8 * 16 * 16 && worst.rel_err < GRAD_TOL,
        format!("{params} params, {} tensors, worst {:.2e} at {}", rows.len(), worst.rel_err, worst.name),
    )
}

fn structure() -> Outcome {
    let rows = selftest::structural_invariants(3).map_err(|e| e.to_string())?;
    let failed: Vec<_> = rows.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    verdict(failed.is_empty(), format!("{} checks, failed: {failed:?}", rows.len()))
}

fn loss() -> Outcome {
    let l = selftest::loss_checks(5).map_err(|e| e.to_string())?;
    let ok = (l.perfect.0 - l.perfect.1).abs() < LOSS_TOL
        && (l.perfect.0 + 1.0).abs() < DICE_EPS
        && (l.toy.0 - l.toy.1).abs() < LOSS_TOL
        && (l.toy.0 - TOY_LOSS).abs() < LOSS_TOL
        && l.random_vs_oracle < LOSS_TOL
        && l.dsc == [1.0, 0.0, 2.0 / 3.0]
        && l.grad_rel_err < LOSS_GRAD_TOL;
    verdict(
        ok,
        format!(
            "perfect {} (closed form {}), toy {} (hand {}), oracle diff {:.1e}, dsc {:?}, grad rel err {:.1e}",
            l.perfect.0, l.perfect.1, l.toy.0, l.toy.1, l.random_vs_oracle, l.dsc, l.grad_rel_err
        ),
    )
}

fn learning() -> Outcome {
    let run = RunConfig::default();
    let (best, last, secs) = selftest::sphere_training(&run).map_err(|e| e.to_string())?;
    verdict(
        best >= SPHERE_DSC && run.steps <= 2000 && secs < SPHERE_MINUTES * 60.0,
        format!("best held-out DSC {best:.4}, final {last:.4}, {} steps in {secs:.0} s", run.steps),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = selftest::determinism_checks(dir.path()).map_err(|e| e.to_string())?;
    verdict(
        d.checkpoints_identical && d.logs_identical && d.volume_round_trip && d.checkpoint_round_trip,
        format!("{d:?}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("attention oracle equivalence", attention_oracle),
        ("complexity formulas", complexity),
        ("scaling law", scaling),
        ("parameter and multiply accounting", accounting),
        ("gradient integrity", gradients),
        ("structural invariants", structure),
        ("loss and metric correctness", loss),
        ("toy learning", learning),
        ("determinism and I/O", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name} [{secs:.1} s]: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {}. {name} [{secs:.1} s]: {detail}", i + 1);
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
