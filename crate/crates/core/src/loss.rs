//! Combined cross-entropy + soft Dice training loss and the hard Dice
//! similarity metric.

use serde::Serialize;

use crate::dims::VoxelDims;
use crate::error::{bail, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Integer class per voxel, `[D, H, W]` row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    pub dims: VoxelDims,
    pub num_classes: usize,
    pub labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: VoxelDims, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != dims.volume() {
            bail!(Dimension, "{} labels for volume {dims}", labels.len());
        }
        if let Some(i) = labels.iter().position(|&l| l as usize >= num_classes) {
            bail!(Validation, "voxel {i} has label {} but only {num_classes} classes exist", labels[i]);
        }
        Ok(LabelVolume { dims, num_classes, labels })
    }

    pub fn voxels(&self) -> usize {
        self.labels.len()
    }

    /// `[V, K]` indicator matrix.
    pub fn one_hot(&self) -> Tensor {
        let k = self.num_classes;
        let mut data = vec![0.0; self.voxels() * k];
        for (v, &l) in self.labels.iter().enumerate() {
            data[v * k + l as usize] = 1.0;
        }
        Tensor::new([self.voxels(), k], data).expect("sized from labels")
    }

    pub fn count(&self, class: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

/// Smoothing constants for [`combined_loss`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossConfig {
    /// Floor applied to probabilities before the logarithm.
    pub prob_floor: f64,
    /// Added to the Dice denominator.
    pub dice_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { prob_floor: 1e-7, dice_eps: 1e-5 }
    }
}

/// Per-voxel class probabilities `[V, K]` from logits `[K, D, H, W]`.
pub fn class_probabilities(tape: &Tape, logits: Var) -> Result<Var> {
    let shape = tape.shape(logits)?;
    if shape.len() != 4 {
        bail!(Dimension, "logits must be [K, D, H, W], got {:?}", shape);
    }
    let flat = tape.reshape(logits, &[shape[0], shape[1] * shape[2] * shape[3]])?;
    let per_voxel = tape.permute(flat, &[1, 0])?;
    tape.softmax_lastdim(per_voxel)
}

/// `−(1/N) Σ_n (½·CE_n + Dice_n)` over a batch of `(probabilities [V, K],
/// labels)` pairs.
///
/// `CE_n` is the mean over voxels and classes of `onehot · log(max(p, floor))`;
/// `Dice_n` is the mean over foreground classes of
/// `2 Σ y·p / (Σ y + Σ p + ε)`. A perfect prediction scores −1 (up to ε).
pub fn combined_loss(tape: &Tape, batch: &[(Var, &LabelVolume)], cfg: &LossConfig) -> Result<Var> {
    if batch.is_empty() {
        bail!(Parameter, "combined_loss needs at least one sample");
    }
    let mut total: Option<Var> = None;
    for (probs, truth) in batch {
        let k = truth.num_classes;
        if k < 2 {
            bail!(Config, "combined_loss needs at least two classes, got {k}");
        }
        let shape = tape.shape(*probs)?;
        if shape != [truth.voxels(), k] {
            bail!(Dimension, "probabilities {:?} do not match labels [{}, {k}]", shape, truth.voxels());
        }
        let onehot = tape.constant(truth.one_hot());

        let logp = tape.log(tape.clamp_min(*probs, cfg.prob_floor)?)?;
        let ce = tape.mean(tape.mul(onehot, logp)?)?;

        let inter = tape.sum_rows(tape.mul(onehot, *probs)?)?;
        let truth_mass = tape.sum_rows(onehot)?;
        let pred_mass = tape.sum_rows(*probs)?;
        let denom = tape.add_scalar(tape.add(truth_mass, pred_mass)?, cfg.dice_eps)?;
        let dice = tape.div(tape.scale(inter, 2.0)?, denom)?;
        let dice = tape.mean(tape.slice_last_dim(dice, 1, k)?)?;

        let term = tape.add(tape.scale(ce, 0.5)?, dice)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    tape.scale(total.expect("non-empty batch"), -1.0 / batch.len() as f64)
}

/// `2|P∩T| / (|P| + |T|)` for one class; 1 when both sets are empty.
pub fn dice_score(pred: &LabelVolume, truth: &LabelVolume, class_id: usize) -> Result<f64> {
    if pred.dims != truth.dims {
        bail!(Dimension, "prediction {} and truth {} differ in size", pred.dims, truth.dims);
    }
    let k = truth.num_classes.min(pred.num_classes);
    if class_id >= k {
        bail!(Parameter, "class {class_id} out of range for {k} classes");
    }
    let c = class_id as u8;
    let (mut both, mut p, mut t) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.labels.iter().zip(&truth.labels) {
        let (ia, ib) = (a == c, b == c);
        both += (ia && ib) as usize;
        p += ia as usize;
        t += ib as usize;
    }
    if p + t == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + t) as f64)
}

/// Per-voxel argmax of logits `[K, D, H, W]`; ties go to the lower class.
pub fn argmax_labels(logits: &Tensor) -> Result<LabelVolume> {
    let s = logits.shape();
    if s.len() != 4 {
        bail!(Dimension, "logits must be [K, D, H, W], got {:?}", s);
    }
    let (k, v) = (s[0], s[1] * s[2] * s[3]);
    let data = logits.data();
    let labels = (0..v)
        .map(|i| {
            let mut best = 0;
            for c in 1..k {
                if data[c * v + i] > data[best * v + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelVolume::new(VoxelDims::new(s[1], s[2], s[3]), k, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(labels: Vec<u8>, k: usize) -> LabelVolume {
        let n = labels.len();
        LabelVolume::new(VoxelDims::new(1, 1, n), k, labels).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = vol(vec![1, 1, 0, 0], 2);
        assert_eq!(dice_score(&a, &a, 1).unwrap(), 1.0);
        let b = vol(vec![0, 0, 1, 1], 2);
        assert_eq!(dice_score(&a, &b, 1).unwrap(), 0.0);

        let truth = vol([vec![1u8; 8], vec![0u8; 8]].concat(), 2);
        let pred = vol([vec![1u8; 4], vec![0u8; 12]].concat(), 2);
        assert!((dice_score(&pred, &truth, 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dice_empty_sets_score_one() {
        let a = vol(vec![0, 0], 3);
        assert_eq!(dice_score(&a, &a, 2).unwrap(), 1.0);
    }

    #[test]
    fn dice_rejects_bad_class() {
        let a = vol(vec![0, 1], 2);
        assert!(matches!(dice_score(&a, &a, 2).unwrap_err(), crate::Error::Parameter(_)));
    }

    #[test]
    fn label_volume_validates() {
        let err = LabelVolume::new(VoxelDims::new(1, 1, 3), 2, vec![0, 1, 2]).unwrap_err();
        assert!(err.to_string().contains("voxel 2"));
    }

    #[test]
    fn argmax_picks_largest() {
        let logits = Tensor::new([2, 1, 1, 3], vec![0.0, 1.0, 0.5, 1.0, 0.0, 0.5]).unwrap();
        assert_eq!(argmax_labels(&logits).unwrap().labels, vec![1, 0, 0]);
    }
}
