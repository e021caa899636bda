//! Deterministic synthetic segmentation volumes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dims::VoxelDims;
use crate::error::{bail, Error, Result};
use crate::loss::LabelVolume;
use crate::tensor::Tensor;

/// One image/label pair. The image is `[1, D, H, W]` with values in `[0, 1]`
/// that are exactly representable as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeSample {
    pub image: Tensor,
    pub labels: LabelVolume,
}

impl VolumeSample {
    pub fn new(image: Tensor, labels: LabelVolume) -> Result<Self> {
        let d = labels.dims;
        if image.shape() != [1, d.d, d.h, d.w] {
            bail!(Dimension, "image {:?} does not match labels {d}", image.shape());
        }
        if let Some(i) = image.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            bail!(Validation, "voxel {i} has intensity {} outside [0, 1]", image.data()[i]);
        }
        Ok(VolumeSample { image, labels })
    }

    pub fn dims(&self) -> VoxelDims {
        self.labels.dims
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    /// Balls of distinct classes.
    Spheres,
    /// Axis-aligned boxes of distinct classes.
    Boxes,
    /// One ball with a concentric inner ball of another class.
    Nested,
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShapeKind::Spheres => "spheres",
            ShapeKind::Boxes => "boxes",
            ShapeKind::Nested => "nested",
        })
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spheres" => Ok(ShapeKind::Spheres),
            "boxes" => Ok(ShapeKind::Boxes),
            "nested" => Ok(ShapeKind::Nested),
            _ => bail!(Parameter, "unknown shape kind {s:?} (spheres, boxes, nested)"),
        }
    }
}

/// What [`synth_dataset`] generates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetSpec {
    pub dims: VoxelDims,
    pub kind: ShapeKind,
    pub num_classes: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
}

/// Smallest radius (or box half-extent) in voxels.
pub const MIN_RADIUS: f64 = 3.0;
/// Largest radius as a fraction of the smallest volume extent.
pub const MAX_RADIUS_FRACTION: f64 = 0.45;
const BACKGROUND_INTENSITY: f64 = 0.25;
const PLACEMENT_ATTEMPTS: usize = 100;

/// Mean intensity of `class`: background 0.25, foreground spread over
/// `[0.55, 0.9]`.
pub fn class_intensity(class: usize, num_classes: usize) -> f64 {
    if class == 0 {
        return BACKGROUND_INTENSITY;
    }
    let span = (num_classes - 1).max(2) - 1;
    0.55 + 0.35 * (class - 1) as f64 / span as f64
}

/// A placed shape; `radius` is per axis (equal for balls).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub class: u8,
    pub center: [f64; 3],
    pub radius: [f64; 3],
    pub ball: bool,
}

impl Shape {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        let d: Vec<f64> = (0..3).map(|a| p[a] as f64 - self.center[a]).collect();
        if self.ball {
            d.iter().map(|v| v * v).sum::<f64>() <= self.radius[0] * self.radius[0]
        } else {
            (0..3).all(|a| d[a].abs() <= self.radius[a])
        }
    }

    /// Conservative separation test using bounding boxes plus a one-voxel gap.
    fn clear_of(&self, other: &Shape) -> bool {
        (0..3).any(|a| (self.center[a] - other.center[a]).abs() > self.radius[a] + other.radius[a] + 1.0)
    }
}

fn place(rng: &mut ChaCha8Rng, ext: [usize; 3], radius: [f64; 3], class: u8, ball: bool) -> Shape {
    let center = std::array::from_fn(|a| {
        let lo = radius[a];
        let hi = ext[a] as f64 - 1.0 - radius[a];
        rng.gen_range(lo..=hi).round()
    });
    Shape { class, center, radius, ball }
}

fn draw_shapes(rng: &mut ChaCha8Rng, spec: &DatasetSpec) -> Result<Vec<Shape>> {
    let ext = spec.dims.as_array();
    let max_r = (*ext.iter().min().expect("3 axes") as f64 * MAX_RADIUS_FRACTION).floor();
    if max_r < MIN_RADIUS {
        bail!(
            Parameter,
            "volume {} is too small: shapes need radius {MIN_RADIUS}, largest that fits is {max_r}",
            spec.dims
        );
    }
    let foreground = spec.num_classes - 1;
    let mut classes: Vec<u8> = (1..=foreground as u8).collect();
    for i in (1..classes.len()).rev() {
        classes.swap(i, rng.gen_range(0..=i));
    }
    if spec.kind == ShapeKind::Nested {
        let r = rng.gen_range(MIN_RADIUS.max(max_r / 2.0)..=max_r).round();
        let outer = place(rng, ext, [r; 3], classes[0], true);
        let mut shapes = vec![outer];
        if let Some(&inner) = classes.get(1) {
            shapes.push(Shape { class: inner, radius: [(r / 2.0).max(1.0); 3], ..outer });
        }
        return Ok(shapes);
    }
    let wanted = rng.gen_range(1..=foreground.min(3));
    let mut shapes: Vec<Shape> = Vec::with_capacity(wanted);
    for &class in classes.iter().take(wanted) {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let shape = match spec.kind {
                ShapeKind::Spheres => {
                    let r = rng.gen_range(MIN_RADIUS..=max_r).round();
                    place(rng, ext, [r; 3], class, true)
                }
                _ => {
                    let r = std::array::from_fn(|_| rng.gen_range(MIN_RADIUS..=max_r).round());
                    place(rng, ext, r, class, false)
                }
            };
            if shapes.iter().all(|s| s.clear_of(&shape)) {
                shapes.push(shape);
                break;
            }
        }
    }
    Ok(shapes)
}

/// Rasterizes `shapes` (later shapes overwrite earlier ones) into a labelled,
/// noisy image.
pub fn render(shapes: &[Shape], spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<VolumeSample> {
    let ext = spec.dims.as_array();
    let mut labels = vec![0u8; spec.dims.volume()];
    let mut i = 0;
    for z in 0..ext[0] {
        for y in 0..ext[1] {
            for x in 0..ext[2] {
                for s in shapes {
                    if s.contains([z, y, x]) {
                        labels[i] = s.class;
                    }
                }
                i += 1;
            }
        }
    }
    let image: Vec<f64> = labels
        .iter()
        .map(|&l| {
            let n: f64 = StandardNormal.sample(rng);
            let v = (class_intensity(l as usize, spec.num_classes) + spec.noise * n).clamp(0.0, 1.0);
            v as f32 as f64
        })
        .collect();
    let labels = LabelVolume::new(spec.dims, spec.num_classes, labels)?;
    let image = Tensor::new([1, ext[0], ext[1], ext[2]], image)?;
    VolumeSample::new(image, labels)
}

/// Per-volume z-score: `(x − mean) / std`, with the deviation floored at
/// 1e-6 so constant volumes map to zero. Applied to every image before it
/// reaches the network, in training and evaluation alike.
pub fn standardize(image: &Tensor) -> Tensor {
    let n = image.len() as f64;
    let mean = image.data().iter().sum::<f64>() / n;
    let var = image.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-6);
    Tensor::from_fn(image.shape().to_vec(), |i| (image.data()[i] - mean) / std)
}

/// `count` samples; sample `i` depends only on `(seed, i)`.
pub fn synth_dataset(seed: u64, count: usize, spec: &DatasetSpec) -> Result<Vec<VolumeSample>> {
    if spec.num_classes < 2 || spec.num_classes > 255 {
        bail!(Parameter, "num_classes must be in 2..=255, got {}", spec.num_classes);
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        bail!(Parameter, "noise must be a finite non-negative number, got {}", spec.noise);
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let shapes = draw_shapes(&mut rng, spec)?;
            render(&shapes, spec, &mut rng)
        })
        .collect()
}

/// The shapes [`synth_dataset`] places in sample `index`, for inspection.
pub fn sample_shapes(seed: u64, index: usize, spec: &DatasetSpec) -> Result<Vec<Shape>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    draw_shapes(&mut rng, spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: ShapeKind, k: usize) -> DatasetSpec {
        DatasetSpec { dims: VoxelDims::new(16, 32, 32), kind, num_classes: k, noise: 0.1 }
    }

    #[test]
    fn empty_and_deterministic() {
        assert!(synth_dataset(1, 0, &spec(ShapeKind::Spheres, 2)).unwrap().is_empty());
        let a = synth_dataset(3, 3, &spec(ShapeKind::Boxes, 4)).unwrap();
        let b = synth_dataset(3, 3, &spec(ShapeKind::Boxes, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn shapes_have_distinct_classes_and_foreground() {
        for kind in [ShapeKind::Spheres, ShapeKind::Boxes, ShapeKind::Nested] {
            let s = spec(kind, 4);
            for (i, sample) in synth_dataset(9, 6, &s).unwrap().iter().enumerate() {
                let shapes = sample_shapes(9, i, &s).unwrap();
                let mut classes: Vec<u8> = shapes.iter().map(|s| s.class).collect();
                classes.sort();
                classes.dedup();
                assert_eq!(classes.len(), shapes.len());
                for c in classes {
                    assert!(sample.labels.count(c) > 0, "{kind} sample {i} class {c} empty");
                }
            }
        }
    }

    #[test]
    fn too_small_rejected() {
        let s = DatasetSpec { dims: VoxelDims::new(4, 32, 32), ..spec(ShapeKind::Spheres, 2) };
        assert!(matches!(synth_dataset(0, 1, &s).unwrap_err(), Error::Parameter(_)));
    }

    #[test]
    fn standardized_moments() {
        let s = synth_dataset(2, 1, &spec(ShapeKind::Spheres, 2)).unwrap().remove(0);
        let z = standardize(&s.image);
        let n = z.len() as f64;
        let mean = z.data().iter().sum::<f64>() / n;
        let var = z.data().iter().map(|v| v * v).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert_eq!(standardize(&Tensor::full([1, 2, 2, 2], 0.3)).data(), &[0.0; 8]);
    }

    #[test]
    fn kind_parses() {
        for k in [ShapeKind::Spheres, ShapeKind::Boxes, ShapeKind::Nested] {
            assert_eq!(k.to_string().parse::<ShapeKind>().unwrap(), k);
        }
        assert!("cones".parse::<ShapeKind>().is_err());
    }
}
