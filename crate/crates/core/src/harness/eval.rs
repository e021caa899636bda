//! Dice evaluation over a set of volumes.

use std::fmt::Write as _;

use serde::Serialize;

use super::data::{standardize, VolumeSample};
use crate::architecture::Model;
use crate::error::{bail, Error, Result};
use crate::loss::{argmax_labels, dice_score};
use crate::tensor::Tensor;

/// Dice of one foreground class on one case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DscRecord {
    pub case: usize,
    pub class: usize,
    pub dsc: f64,
}

impl DscRecord {
    pub fn to_line(&self) -> String {
        format!("case={} class={} dsc={}", self.case, self.class, self.dsc)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let mut case = None;
        let mut class = None;
        let mut dsc = None;
        for field in line.split_whitespace() {
            let bad = || Error::Format { offset: 0, msg: format!("bad field {field:?} in {line:?}") };
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "case" => case = Some(v.parse().map_err(|_| bad())?),
                "class" => class = Some(v.parse().map_err(|_| bad())?),
                "dsc" => dsc = Some(v.parse().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        match (case, class, dsc) {
            (Some(case), Some(class), Some(dsc)) => Ok(DscRecord { case, class, dsc }),
            _ => Err(Error::Format { offset: 0, msg: format!("incomplete record {line:?}") }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub records: Vec<DscRecord>,
    /// Mean over cases for classes `1..K` (index 0 is class 1).
    pub class_means: Vec<f64>,
    /// Mean of `class_means`.
    pub mean_dsc: f64,
}

impl EvalReport {
    /// Aggregates per-case records: mean over cases, then over classes.
    pub fn from_records(records: Vec<DscRecord>) -> Result<Self> {
        if records.is_empty() {
            bail!(Parameter, "no DSC records to summarize");
        }
        let top = records.iter().map(|r| r.class).max().expect("non-empty");
        let mut class_means = Vec::with_capacity(top);
        for class in 1..=top {
            let vals: Vec<f64> = records.iter().filter(|r| r.class == class).map(|r| r.dsc).collect();
            if vals.is_empty() {
                bail!(Parameter, "no records for class {class}");
            }
            class_means.push(vals.iter().sum::<f64>() / vals.len() as f64);
        }
        let mean_dsc = class_means.iter().sum::<f64>() / class_means.len() as f64;
        Ok(EvalReport { records, class_means, mean_dsc })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .map(str::trim)
            .filter(|l| l.starts_with("case="))
            .map(DscRecord::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::from_records(records)
    }

    /// One record line per case and class, then per-class and overall means.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out += &r.to_line();
            out.push('\n');
        }
        for (i, m) in self.class_means.iter().enumerate() {
            let _ = writeln!(out, "# class={} mean_dsc={m}", i + 1);
        }
        let _ = writeln!(out, "# mean_dsc={}", self.mean_dsc);
        out
    }
}

/// Scores `predict(sample) -> logits [K, D, H, W]` on every sample, one at a
/// time.
pub fn evaluate_with(
    samples: &[VolumeSample],
    mut predict: impl FnMut(&VolumeSample) -> Result<Tensor>,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    for (case, sample) in samples.iter().enumerate() {
        let pred = argmax_labels(&predict(sample)?)?;
        if pred.dims != sample.dims() {
            bail!(Dimension, "case {case}: prediction {} does not match volume {}", pred.dims, sample.dims());
        }
        for class in 1..sample.labels.num_classes {
            records.push(DscRecord { case, class, dsc: dice_score(&pred, &sample.labels, class)? });
        }
    }
    EvalReport::from_records(records)
}

/// Scores `model` on standardized copies of the images.
pub fn evaluate(model: &Model, samples: &[VolumeSample]) -> Result<EvalReport> {
    let cfg = &model.config;
    for (i, s) in samples.iter().enumerate() {
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
    evaluate_with(samples, |s| model.infer(&standardize(&s.image)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dims::VoxelDims;
    use crate::loss::LabelVolume;

    fn sample(labels: Vec<u8>, k: usize) -> VolumeSample {
        let n = labels.len();
        let labels = LabelVolume::new(VoxelDims::new(1, 1, n), k, labels).unwrap();
        VolumeSample::new(Tensor::zeros([1, 1, 1, n]), labels).unwrap()
    }

    fn one_hot_logits(labels: &[u8], k: usize) -> Tensor {
        let n = labels.len();
        Tensor::from_fn([k, 1, 1, n], |i| (labels[i % n] as usize == i / n) as u8 as f64)
    }

    #[test]
    fn oracle_and_background_models() {
        let set = vec![sample(vec![0, 1, 1, 2], 3), sample(vec![2, 2, 0, 1], 3)];
        let perfect = evaluate_with(&set, |s| Ok(one_hot_logits(&s.labels.labels, 3))).unwrap();
        assert_eq!(perfect.mean_dsc, 1.0);
        let background = evaluate_with(&set, |_| Ok(one_hot_logits(&[0; 4], 3))).unwrap();
        assert_eq!(background.class_means, vec![0.0, 0.0]);
    }

    #[test]
    fn text_round_trip() {
        let set = vec![sample(vec![0, 1, 1, 0], 2)];
        let r = evaluate_with(&set, |_| Ok(one_hot_logits(&[0, 1, 0, 0], 2))).unwrap();
        assert!((r.mean_dsc - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(EvalReport::parse(&r.to_text()).unwrap(), r);
    }
}
