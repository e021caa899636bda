use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dformer::analyzer::{analyze, bench_attention};
use dformer::architecture::{load_checkpoint, ModelConfig};
use dformer::dims::{GridDims, UnitDims, VoxelDims};
use dformer::harness::{self, DatasetSpec, EvalReport, RunConfig, ShapeKind};
use dformer::selftest;

#[derive(Parser)]
#[command(name = "dformer", version, about = "Dilated windowed 3D transformer: analysis, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameter and multiply counts per component.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured input size.
        #[arg(long)]
        input: Option<VoxelDims>,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic labelled dataset.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        dims: VoxelDims,
        #[arg(long, default_value = "spheres")]
        kind: ShapeKind,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output directory; defaults to `out` from the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-case and mean Dice of a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Time local-scope attention over several grids.
    Bench {
        /// Comma-separated patch grids, e.g. `4x8x8,8x8x8`.
        #[arg(long, value_delimiter = ',')]
        grids: Vec<GridDims>,
        #[arg(long)]
        unit: UnitDims,
        #[arg(long)]
        channels: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 9)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Summarize an evaluation log written by `eval` or `train`.
    Report {
        #[arg(long)]
        eval: PathBuf,
    },
    /// Run the oracle and invariant checks.
    Selftest {
        /// Also train the sphere task (several minutes).
        #[arg(long)]
        train: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Analyze { config, input, json } => {
            let mut cfg: ModelConfig = RunConfig::load(&config)?.model;
            if let Some(input) = input {
                cfg.input = input;
            }
            let report = analyze(&cfg)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Gen { seed, count, dims, kind, classes, noise, out } => {
            let spec = DatasetSpec { dims, kind, num_classes: classes, noise };
            let samples = harness::synth_dataset(seed, count, &spec)?;
            let paths = harness::write_dataset(&out, &samples)?;
            println!("wrote {} volumes to {}", paths.len(), out.display());
        }
        Command::Train { config, data, out } => {
            let run = RunConfig::load(&config)?;
            let Some(out) = out.or_else(|| run.out.clone()) else {
                bail!("no output directory: pass --out or set `out` in {}", config.display());
            };
            let samples = harness::read_dataset(&data).with_context(|| format!("reading {}", data.display()))?;
            let outcome = harness::train(&run, &samples, Some(&out))?;
            if let Some(last) = outcome.log.last() {
                println!("{}", last.to_line());
            }
            for (step, dsc) in &outcome.evals {
                println!("eval step={step} mean_dsc={dsc}");
            }
            if let Some(best) = &outcome.best {
                println!("best step={} mean_dsc={}", best.step, best.report.mean_dsc);
            }
            println!("outputs in {}", out.display());
        }
        Command::Eval { checkpoint, data } => {
            let model = load_checkpoint(&checkpoint)?;
            let samples = harness::read_dataset(&data).with_context(|| format!("reading {}", data.display()))?;
            print!("{}", harness::evaluate(&model, &samples)?.to_text());
        }
        Command::Bench { grids, unit, channels, heads, repeats, seed } => {
            if grids.is_empty() {
                bail!("--grids needs at least one grid");
            }
            println!("grid\tpatches\tmsa\tls_msa\tmeasured\tmedian_s");
            for r in bench_attention(&grids, unit, channels, heads, repeats, seed)? {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{:.6}",
                    r.grid, r.patches, r.msa_multiplies, r.ls_msa_multiplies, r.measured_multiplies, r.median_seconds
                );
            }
        }
        Command::Report { eval } => {
            let text = std::fs::read_to_string(&eval).with_context(|| format!("reading {}", eval.display()))?;
            let report = EvalReport::parse(&text)?;
            for (i, m) in report.class_means.iter().enumerate() {
                println!("class {}: mean DSC {m:.4} over {} cases", i + 1, report.records.iter().filter(|r| r.class == i + 1).count());
            }
            println!("mean DSC {:.4}", report.mean_dsc);
        }
        Command::Selftest { train } => return selftest_command(train),
    }
    Ok(ExitCode::SUCCESS)
}

fn line(failures: &mut usize, name: &str, ok: bool, detail: String) {
    if !ok {
        *failures += 1;
    }
    let verdict = if ok { "PASS" } else { "FAIL" };
    if detail.is_empty() {
        println!("{verdict} {name}");
    } else {
        println!("{verdict} {name}: {detail}");
    }
}

fn selftest_command(train: bool) -> Result<ExitCode> {
    let mut failures = 0;

    let a = selftest::attention_oracle(20, 1)?;
    line(
        &mut failures,
        "attention oracle",
        a.ls_vs_dense < 1e-10 && a.gs_vs_dense < 1e-10 && a.gs_vs_permuted_ls < 1e-12,
        format!("ls {:.1e}, gs {:.1e}, permuted {:.1e}", a.ls_vs_dense, a.gs_vs_dense, a.gs_vs_permuted_ls),
    );

    let rows = selftest::complexity_rows()?;
    let exact = rows.iter().filter(|r| r.analytic == r.measured).count();
    line(&mut failures, "complexity counts", exact == rows.len(), format!("{exact}/{} exact", rows.len()));

    let acc = selftest::accounting()?;
    let census_ok = acc.census.iter().all(|&(_, a, b, c)| a == b && b == c);
    line(
        &mut failures,
        "parameter census",
        census_ok,
        format!("full config {} params, {} multiplies", acc.full_params, acc.full_flops),
    );

    let grads = selftest::model_gradcheck(&ModelConfig::tiny(), 1, 3, 1e-5, 0.3)?;
    let worst = grads.iter().map(|g| g.rel_err).fold(0.0, f64::max);
    line(&mut failures, "gradient check", worst < 1e-4, format!("{} tensors, worst {worst:.1e}", grads.len()));

    for (name, ok) in selftest::structural_invariants(1)? {
        line(&mut failures, &name, ok, String::new());
    }

    let l = selftest::loss_checks(1)?;
    line(
        &mut failures,
        "loss and dice",
        (l.perfect.0 - l.perfect.1).abs() < 1e-12
            && (l.toy.0 - l.toy.1).abs() < 1e-12
            && l.random_vs_oracle < 1e-12
            && l.dsc == [1.0, 0.0, 2.0 / 3.0]
            && l.grad_rel_err < 1e-6,
        format!("toy {}, grad {:.1e}", l.toy.0, l.grad_rel_err),
    );

    let dir = tempfile::tempdir()?;
    let d = selftest::determinism_checks(dir.path())?;
    line(
        &mut failures,
        "determinism and file round trips",
        d.checkpoints_identical && d.logs_identical && d.volume_round_trip && d.checkpoint_round_trip,
        format!("{d:?}"),
    );

    if train {
        let (best, last, secs) = selftest::sphere_training(&RunConfig::default())?;
        line(&mut failures, "sphere training", best >= 0.85, format!("best {best:.4}, final {last:.4}, {secs:.0} s"));
    }

    if failures == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failures} checks failed");
        Ok(ExitCode::FAILURE)
    }
}
