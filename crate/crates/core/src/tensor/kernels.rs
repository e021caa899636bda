//! Forward kernels on plain tensors, plus the raw loops their backward rules
//! reuse. Only the public entry points touch the multiply counter.

use super::flops;
use super::value::Tensor;
use crate::error::{bail, Result};

/// `out += op(a) · op(b)` where `op(a)` is `m × k` and `op(b)` is `k × n`.
/// `ta`/`tb` mean the operand is stored transposed.
pub(crate) fn gemm(
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    (m, k, n): (usize, usize, usize),
    ta: bool,
    tb: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    let brow = &b[p * n..(p + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    let brow = &b[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for (&x, &y) in arow.iter().zip(brow) {
                        acc += x * y;
                    }
                    out[i * n + j] += acc;
                }
            }
        }
        (true, false) => {
            for p in 0..k {
                let brow = &b[p * n..(p + 1) * n];
                for i in 0..m {
                    let api = a[p * m + i];
                    let row = &mut out[i * n..(i + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += api * bv;
                    }
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a[p * m + i] * b[j * k + p];
                    }
                    out[i * n + j] += acc;
                }
            }
        }
    }
}

/// Batch count and `(m, k, n)` for a batched product, or a dimension error
/// naming both shapes.
pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, (usize, usize, usize))> {
    let mismatch = || {
        crate::error::Error::Dimension(format!("matmul shapes {:?} and {:?} are incompatible", a, b))
    };
    if a.len() < 2 || a.len() != b.len() {
        return Err(mismatch());
    }
    let r = a.len();
    if a[..r - 2] != b[..r - 2] || a[r - 1] != b[r - 2] {
        return Err(mismatch());
    }
    let batch = a[..r - 2].iter().product();
    Ok((batch, (a[r - 2], a[r - 1], b[r - 1])))
}

/// Batched matrix product `[..., m, k] × [..., k, n] → [..., m, n]`.
/// Batch extents must be equal.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, (m, k, n)) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        gemm(
            &a.data()[bi * m * k..(bi + 1) * m * k],
            &b.data()[bi * k * n..(bi + 1) * k * n],
            &mut out[bi * m * n..(bi + 1) * m * n],
            (m, k, n),
            false,
            false,
        );
    }
    flops::record((batch * m * k * n) as u64);
    let mut shape = a.shape().to_vec();
    let r = shape.len();
    shape[r - 1] = n;
    Tensor::new(shape, out)?.ensure_finite("matmul")
}

pub fn softmax_lastdim(t: &Tensor) -> Result<Tensor> {
    if t.rank() == 0 {
        bail!(Dimension, "softmax needs at least one axis");
    }
    let width = t.last_dim();
    let mut out = t.data().to_vec();
    for row in out.chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(t.shape().to_vec(), out)?.ensure_finite("softmax")
}

pub(crate) fn check_layer_norm(t: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<()> {
    if eps <= 0.0 || !eps.is_finite() {
        bail!(Parameter, "layer norm eps must be positive, got {eps}");
    }
    let c = t.last_dim();
    if gamma.shape() != [c] || beta.shape() != [c] {
        bail!(
            Dimension,
            "layer norm affine shapes {:?}/{:?} do not match last extent {c}",
            gamma.shape(),
            beta.shape()
        );
    }
    Ok(())
}

/// Mean and inverse standard deviation of one slice.
pub(crate) fn row_stats(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub fn layer_norm(t: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    check_layer_norm(t, gamma, beta, eps)?;
    let c = t.last_dim();
    let mut out = Vec::with_capacity(t.len());
    for row in t.data().chunks(c) {
        let (mean, inv) = row_stats(row, eps);
        for (j, &v) in row.iter().enumerate() {
            out.push((v - mean) * inv * gamma.data()[j] + beta.data()[j]);
        }
    }
    Tensor::new(t.shape().to_vec(), out)?.ensure_finite("layer_norm")
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Exact (erf-based) GELU.
pub fn gelu(t: &Tensor) -> Result<Tensor> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| gelu_scalar(x)).collect())?
        .ensure_finite("gelu")
}

/// Validated geometry for a depthwise 3D convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub vol: [usize; 3],
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
}

pub(crate) fn conv_geom(t: &[usize], kernels: &[usize], padding: [usize; 3]) -> Result<ConvGeom> {
    if t.len() != 4 || kernels.len() != 4 || t[0] != kernels[0] {
        bail!(
            Dimension,
            "depthwise conv expects [C,d,h,w] input and [C,kd,kh,kw] kernels, got {:?} and {:?}",
            t,
            kernels
        );
    }
    let kernel = [kernels[1], kernels[2], kernels[3]];
    for axis in 0..3 {
        if kernel[axis] % 2 == 0 {
            bail!(Parameter, "kernel extent {} on axis {axis} is even", kernel[axis]);
        }
        if padding[axis] != (kernel[axis] - 1) / 2 {
            bail!(
                Parameter,
                "padding {} on axis {axis} does not preserve extent for kernel {}",
                padding[axis],
                kernel[axis]
            );
        }
    }
    Ok(ConvGeom { channels: t[0], vol: [t[1], t[2], t[3]], kernel, pad: padding })
}

/// Valid output range along one axis for kernel offset `k`: output positions
/// `o` with `0 <= o + k - pad < extent`.
fn valid_range(extent: usize, k: usize, pad: usize) -> (usize, usize, isize) {
    let shift = k as isize - pad as isize;
    let lo = (-shift).max(0) as usize;
    let hi = ((extent as isize - shift).min(extent as isize)).max(0) as usize;
    (lo, hi.max(lo), shift)
}

/// Visits every (output index, input index, kernel index) triple that
/// contributes to a same-padded depthwise convolution.
pub(crate) fn conv_for_each(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize)) {
    let [d, h, w] = g.vol;
    let [kd, kh, kw] = g.kernel;
    let vol = d * h * w;
    for c in 0..g.channels {
        let base = c * vol;
        for a in 0..kd {
            let (z0, z1, sz) = valid_range(d, a, g.pad[0]);
            for b in 0..kh {
                let (y0, y1, sy) = valid_range(h, b, g.pad[1]);
                for e in 0..kw {
                    let (x0, x1, sx) = valid_range(w, e, g.pad[2]);
                    let kidx = ((c * kd + a) * kh + b) * kw + e;
                    for z in z0..z1 {
                        let zi = (z as isize + sz) as usize;
                        for y in y0..y1 {
                            let yi = (y as isize + sy) as usize;
                            let out_row = base + (z * h + y) * w;
                            let in_row = base + (zi * h + yi) * w;
                            for x in x0..x1 {
                                let xi = (x as isize + sx) as usize;
                                f(out_row + x, in_row + xi, kidx);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel 3D correlation with zero padding; spatial extents preserved.
pub fn depthwise_conv3d(t: &Tensor, kernels: &Tensor, padding: [usize; 3]) -> Result<Tensor> {
    let g = conv_geom(t.shape(), kernels.shape(), padding)?;
    let mut out = vec![0.0; t.len()];
    let (x, k) = (t.data(), kernels.data());
    conv_for_each(&g, |o, i, ki| out[o] += k[ki] * x[i]);
    let [kd, kh, kw] = g.kernel;
    flops::record((t.len() * kd * kh * kw) as u64);
    Tensor::new(t.shape().to_vec(), out)?.ensure_finite("depthwise_conv3d")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_dot() {
        let id = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new([2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(matmul(&id, &m).unwrap().data(), m.data());
        let a = Tensor::new([1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new([2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros([2, 3]);
        let b = Tensor::zeros([2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("dimension"), "{msg}");
    }

    #[test]
    fn gemm_transpose_variants_agree() {
        let a = Tensor::from_fn([3, 4], |i| (i as f64 * 0.37).sin());
        let b = Tensor::from_fn([4, 2], |i| (i as f64 * 0.91).cos());
        let want = matmul(&a, &b).unwrap();
        let at = a.permute(&[1, 0]).unwrap();
        let bt = b.permute(&[1, 0]).unwrap();
        for (ta, tb) in [(false, true), (true, false), (true, true)] {
            let lhs = if ta { at.data() } else { a.data() };
            let rhs = if tb { bt.data() } else { b.data() };
            let mut out = vec![0.0; 6];
            gemm(lhs, rhs, &mut out, (3, 4, 2), ta, tb);
            for (x, y) in out.iter().zip(want.data()) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_lastdim(&Tensor::new([2], vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_lastdim(&Tensor::new([2], vec![2f64.ln(), 0.0]).unwrap()).unwrap();
        assert!((s.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let s = softmax_lastdim(&Tensor::new([2], vec![1000.0, 1000.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_examples() {
        let one = Tensor::full([3], 1.0);
        let zero = Tensor::zeros([3]);
        let y = layer_norm(&Tensor::full([3], 5.0), &one, &zero, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let one = Tensor::full([2], 1.0);
        let zero = Tensor::zeros([2]);
        let y = layer_norm(&Tensor::new([2], vec![1.0, -1.0]).unwrap(), &one, &zero, 1e-12).unwrap();
        assert!((y.data()[0] - 1.0).abs() < 1e-10 && (y.data()[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn layer_norm_rejects_bad_eps() {
        let one = Tensor::full([2], 1.0);
        let err = layer_norm(&one, &one, &one, 0.0).unwrap_err();
        assert!(matches!(err, crate::Error::Parameter(_)));
    }

    #[test]
    fn conv_identity_and_counting() {
        let x = Tensor::from_fn([2, 3, 4, 5], |i| i as f64);
        let mut k = vec![0.0; 2 * 27];
        k[13] = 1.0;
        k[27 + 13] = 1.0;
        let k = Tensor::new([2, 3, 3, 3], k).unwrap();
        assert_eq!(depthwise_conv3d(&x, &k, [1, 1, 1]).unwrap().data(), x.data());

        let ones = Tensor::full([1, 3, 3, 3], 1.0);
        let y = depthwise_conv3d(&ones, &ones, [1, 1, 1]).unwrap();
        assert_eq!(y.data()[13], 27.0);
        assert_eq!(y.data()[0], 8.0);
    }

    #[test]
    fn conv_rejects_even_kernel() {
        let x = Tensor::zeros([1, 4, 4, 4]);
        let k = Tensor::zeros([1, 2, 3, 3]);
        assert!(matches!(
            depthwise_conv3d(&x, &k, [0, 1, 1]).unwrap_err(),
            crate::Error::Parameter(_)
        ));
    }
}
