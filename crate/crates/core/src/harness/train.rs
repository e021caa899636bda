//! SGD with momentum under a polynomial learning-rate decay.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::{standardize, VolumeSample};
use super::eval::{evaluate, EvalReport};
use super::run_config::RunConfig;
use crate::architecture::{build_model, forward, model_spec, save_checkpoint, Model};
use crate::error::{bail, Error, Result};
use crate::loss::{class_probabilities, combined_loss, LossConfig};
use crate::params::ParamTree;
use crate::tensor::{Tape, Tensor};

/// `lr0 · (1 − step/T)^p`.
pub fn poly_lr(step: usize, run: &RunConfig) -> Result<f64> {
    if step > run.steps {
        bail!(Contract, "step {step} beyond the schedule length {}", run.steps);
    }
    let frac = 1.0 - step as f64 / run.steps as f64;
    Ok(run.lr * frac.powf(run.poly_power))
}

/// In-place update of every tensor: `v ← m·v + g + wd·θ`, `θ ← θ − lr·v`.
pub fn sgd_momentum_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        bail!(
            Dimension,
            "{} parameters, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        );
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            bail!(
                Dimension,
                "tensor {i}: parameter {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            );
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let theta = p.data_mut();
        let vel = v.data_mut();
        for ((t, &gi), vi) in theta.iter_mut().zip(g.data().iter()).zip(vel.iter_mut()) {
            *vi = momentum * *vi + gi + weight_decay * *t;
            *t -= lr * *vi;
        }
    }
    Ok(())
}

/// One line of the metrics log: `step=<n> lr=<f64> loss=<f64>`, with floats
/// in shortest round-trip form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        format!("step={} lr={} loss={}", self.step, self.lr, self.loss)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Format { offset: 0, msg: format!("bad metrics line {line:?}") };
        let mut it = line.split_whitespace();
        let mut field = |key: &str| -> Result<&str> {
            let f = it.next().ok_or_else(bad)?;
            f.strip_prefix(key).and_then(|r| r.strip_prefix('=')).ok_or_else(bad)
        };
        let step = field("step")?.parse().map_err(|_| bad())?;
        let lr = field("lr")?.parse().map_err(|_| bad())?;
        let loss = field("loss")?.parse().map_err(|_| bad())?;
        if it.next().is_some() {
            return Err(bad());
        }
        Ok(LogRecord { step, lr, loss })
    }
}

pub fn parse_metrics_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(LogRecord::parse).collect()
}

#[derive(Clone, Debug)]
pub struct Checkpointed {
    /// Steps completed when the model was captured.
    pub step: usize,
    pub report: EvalReport,
    pub model: Model,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Highest held-out mean DSC seen; `None` without a held-out split.
    pub best: Option<Checkpointed>,
    pub log: Vec<LogRecord>,
    /// `(steps completed, held-out mean DSC)` at every evaluation.
    pub evals: Vec<(usize, f64)>,
}

impl TrainOutcome {
    pub fn metrics_text(&self) -> String {
        self.log.iter().fold(String::new(), |mut s, r| {
            let _ = writeln!(s, "{}", r.to_line());
            s
        })
    }
}

/// Stream of sample indices: a seeded shuffle, reshuffled after each pass.
struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        BatchOrder { rng, order: (0..n).collect(), pos: n }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Trains on all but the last `run.holdout` samples, evaluating on those
/// every `run.eval_every` steps and after the last one. When `out` is given
/// it receives `final.ckpt`, `best.ckpt`, `metrics.log`, `eval.log` and
/// `run.cfg`.
pub fn train(run: &RunConfig, data: &[VolumeSample], out: Option<&Path>) -> Result<TrainOutcome> {
    run.validate()?;
    let cfg = &run.model;
    if run.holdout >= data.len() {
        bail!(Parameter, "holdout {} leaves no training samples out of {}", run.holdout, data.len());
    }
    for (i, s) in data.iter().enumerate() {
        if s.dims() != cfg.input || s.labels.num_classes != cfg.num_classes {
            bail!(
                Dimension,
                "sample {i} is {} with {} classes, model expects {} with {}",
                s.dims(),
                s.labels.num_classes,
                cfg.input,
                cfg.num_classes
            );
        }
    }
    let (train_set, holdout) = data.split_at(data.len() - run.holdout);
    let loss_cfg = LossConfig::default();
    let spec = model_spec(cfg);
    let init = build_model(cfg, run.seed)?;
    let mut params = init.params.leaves();
    drop(init);
    let mut velocity: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
    let mut order = BatchOrder::new(run.seed, train_set.len());
    let snapshot = |params: &[Tensor]| -> Result<Model> {
        Ok(Model { config: cfg.clone(), seed: run.seed, params: spec.rebuild(params.to_vec())? })
    };

    let mut log = Vec::with_capacity(run.steps);
    let mut evals = Vec::new();
    let mut best: Option<Checkpointed> = None;
    for step in 0..run.steps {
        let lr = poly_lr(step, run)?;
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let bound = spec.rebuild(vars.clone())?;
        let mut batch = Vec::with_capacity(run.batch_size);
        for _ in 0..run.batch_size {
            let sample = &train_set[order.next()];
            let x = tape.constant(standardize(&sample.image));
            let logits = forward(&tape, cfg, &bound, x)?;
            batch.push((class_probabilities(&tape, logits)?, &sample.labels));
        }
        let loss_var = combined_loss(&tape, &batch, &loss_cfg)?;
        let loss = tape.value(loss_var)?.item()?;
        if !loss.is_finite() {
            bail!(Numeric, "loss became {loss} at step {step}");
        }
        log.push(LogRecord { step, lr, loss });
        let grads = tape.backward(loss_var)?;
        let grads = vars.iter().map(|v| grads.wrt(*v)).collect::<Result<Vec<_>>>()?;
        drop(bound);
        drop(vars);
        sgd_momentum_step(&mut params, &grads, &mut velocity, lr, run.momentum, run.weight_decay)?;

        let done = step + 1;
        if !holdout.is_empty() && (done % run.eval_every == 0 || done == run.steps) {
            let model = snapshot(&params)?;
            let report = evaluate(&model, holdout)?;
            evals.push((done, report.mean_dsc));
            if best.as_ref().map_or(true, |b| report.mean_dsc > b.report.mean_dsc) {
                best = Some(Checkpointed { step: done, report, model });
            }
        }
    }
    let outcome = TrainOutcome { model: snapshot(&params)?, best, log, evals };
    if let Some(dir) = out {
        write_outputs(run, &outcome, dir)?;
    }
    Ok(outcome)
}

fn write_outputs(run: &RunConfig, outcome: &TrainOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_checkpoint(&outcome.model, &dir.join("final.ckpt"))?;
    fs::write(dir.join("metrics.log"), outcome.metrics_text())?;
    fs::write(dir.join("run.cfg"), run.to_text())?;
    if let Some(best) = &outcome.best {
        save_checkpoint(&best.model, &dir.join("best.ckpt"))?;
        let mut text = format!("# best step={} mean_dsc={}\n", best.step, best.report.mean_dsc);
        text += &best.report.to_text();
        fs::write(dir.join("eval.log"), text)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_schedule_endpoints() {
        let run = RunConfig { steps: 10, ..RunConfig::default() };
        assert_eq!(poly_lr(0, &run).unwrap(), 0.01);
        assert_eq!(poly_lr(10, &run).unwrap(), 0.0);
        assert!(matches!(poly_lr(11, &run).unwrap_err(), Error::Contract(_)));
    }

    #[test]
    fn vanilla_sgd_and_fixed_point() {
        let mut p = vec![Tensor::new([2], vec![1.0, -2.0]).unwrap()];
        let g = vec![Tensor::new([2], vec![0.5, 0.25]).unwrap()];
        let mut v = vec![Tensor::zeros([2])];
        sgd_momentum_step(&mut p, &g, &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(p[0].data(), &[0.95, -2.025]);

        let mut p = vec![Tensor::new([2], vec![1.0, -2.0]).unwrap()];
        let mut v = vec![Tensor::zeros([2])];
        sgd_momentum_step(&mut p, &[Tensor::zeros([2])], &mut v, 0.1, 0.99, 0.0).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::zeros([2])];
        let mut v = vec![Tensor::zeros([2])];
        let err = sgd_momentum_step(&mut p, &[Tensor::zeros([3])], &mut v, 0.1, 0.9, 0.0).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn log_lines_round_trip() {
        let r = LogRecord { step: 12, lr: 0.009_876_543_210_123, loss: -0.123_456_789_012_345_67 };
        assert_eq!(LogRecord::parse(&r.to_line()).unwrap(), r);
        assert!(LogRecord::parse("step=1 lr=0.1").is_err());
    }
}
