//! Volume files: magic `DFVOL001`, little-endian `u32` D, H, W, K, then
//! D·H·W `f32` intensities and D·H·W label bytes.

use std::fs;
use std::path::{Path, PathBuf};

use super::data::VolumeSample;
use crate::dims::VoxelDims;
use crate::error::{bail, Error, Result};
use crate::loss::LabelVolume;
use crate::tensor::Tensor;

pub const VOLUME_MAGIC: &[u8; 8] = b"DFVOL001";
pub const VOLUME_EXTENSION: &str = "dfvol";
const HEADER_LEN: usize = 8 + 16;

pub fn volume_to_bytes(sample: &VolumeSample) -> Vec<u8> {
    let d = sample.dims();
    let v = d.volume();
    let mut out = Vec::with_capacity(HEADER_LEN + 5 * v);
    out.extend_from_slice(VOLUME_MAGIC);
    for n in [d.d, d.h, d.w, sample.labels.num_classes] {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for &x in sample.image.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out.extend_from_slice(&sample.labels.labels);
    out
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, msg: msg.into() }
}

pub fn volume_from_bytes(bytes: &[u8]) -> Result<VolumeSample> {
    if bytes.len() < 8 || &bytes[..8] != VOLUME_MAGIC {
        return Err(format_err(0, "not a volume file (bad magic)"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(bytes.len(), "truncated header"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (d, h, w, k) = (field(0), field(1), field(2), field(3));
    for (i, n) in [d, h, w].into_iter().enumerate() {
        if n == 0 {
            return Err(format_err(8 + 4 * i, "zero extent"));
        }
    }
    if !(2..=256).contains(&k) {
        return Err(format_err(20, format!("class count {k} outside 2..=256")));
    }
    let v = d
        .checked_mul(h)
        .and_then(|x| x.checked_mul(w))
        .ok_or_else(|| format_err(8, "extents overflow"))?;
    let expected = HEADER_LEN + 5 * v;
    if bytes.len() < expected {
        return Err(format_err(bytes.len(), format!("truncated: {expected} bytes expected")));
    }
    if bytes.len() > expected {
        return Err(format_err(expected, format!("{} trailing bytes", bytes.len() - expected)));
    }
    let image: Vec<f64> = bytes[HEADER_LEN..HEADER_LEN + 4 * v]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let labels = bytes[HEADER_LEN + 4 * v..].to_vec();
    let dims = VoxelDims::new(d, h, w);
    let labels = LabelVolume::new(dims, k, labels)?;
    VolumeSample::new(Tensor::new([1, d, h, w], image)?, labels)
}

pub fn write_volume(path: &Path, sample: &VolumeSample) -> Result<()> {
    fs::write(path, volume_to_bytes(sample))?;
    Ok(())
}

pub fn read_volume(path: &Path) -> Result<VolumeSample> {
    volume_from_bytes(&fs::read(path)?)
}

/// Writes `sample_0000.dfvol`, `sample_0001.dfvol`, ... into `dir`.
pub fn write_dataset(dir: &Path, samples: &[VolumeSample]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("sample_{i:04}.{VOLUME_EXTENSION}"));
            write_volume(&path, s)?;
            Ok(path)
        })
        .collect()
}

/// Every volume file in `dir`, in file-name order.
pub fn read_dataset(dir: &Path) -> Result<Vec<VolumeSample>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == VOLUME_EXTENSION));
    paths.sort();
    if paths.is_empty() {
        bail!(Parameter, "no .{VOLUME_EXTENSION} files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| read_volume(p).map_err(|e| with_path(e, p)))
        .collect()
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { offset, msg } => Error::Format { offset, msg: format!("{}: {msg}", path.display()) },
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{synth_dataset, DatasetSpec, ShapeKind};

    fn sample() -> VolumeSample {
        let spec = DatasetSpec { dims: VoxelDims::new(8, 12, 10), kind: ShapeKind::Spheres, num_classes: 3, noise: 0.2 };
        synth_dataset(5, 1, &spec).unwrap().remove(0)
    }

    #[test]
    fn bytes_round_trip() {
        let s = sample();
        let bytes = volume_to_bytes(&s);
        assert_eq!(bytes.len(), 8 + 16 + 5 * 8 * 12 * 10);
        assert_eq!(volume_from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = volume_to_bytes(&sample());
        for cut in [0, 5, 20, bytes.len() - 1] {
            assert!(matches!(volume_from_bytes(&bytes[..cut]).unwrap_err(), Error::Format { .. }), "cut {cut}");
        }
    }

    #[test]
    fn bad_label_names_voxel() {
        let mut bytes = volume_to_bytes(&sample());
        let first_label = 8 + 16 + 4 * 960;
        bytes[first_label + 17] = 3;
        let msg = volume_from_bytes(&bytes).unwrap_err().to_string();
        assert!(msg.contains("voxel 17"), "{msg}");
    }
}
