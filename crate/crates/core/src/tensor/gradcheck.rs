use super::value::Tensor;
use crate::error::{bail, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn finite_diff_oracle(
    mut f: impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
) -> Result<Tensor> {
    finite_diff_coords(&mut f, x, h, 0..x.len()).and_then(|g| Tensor::new(x.shape().to_vec(), g))
}

/// Central differences for a subset of coordinates, in the order given.
pub fn finite_diff_coords(
    f: &mut impl FnMut(&Tensor) -> Result<f64>,
    x: &Tensor,
    h: f64,
    coords: impl IntoIterator<Item = usize>,
) -> Result<Vec<f64>> {
    if h <= 0.0 || !h.is_finite() {
        bail!(Parameter, "finite-difference step must be positive, got {h}");
    }
    let mut probe = x.clone();
    let mut out = Vec::new();
    for i in coords {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            bail!(Numeric, "non-finite function value while differencing coordinate {i}");
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Scale below which gradients are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    a.iter().zip(b).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}

/// Error of a whole gradient block: `max|a - b| / max(max|a|, max|b|,
/// RELATIVE_ERROR_FLOOR)`. Unlike [`max_relative_error`] it does not blow up
/// at coordinates whose true derivative is far below the rounding noise of
/// the finite difference.
pub fn normwise_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / inf(a).max(inf(b)).max(RELATIVE_ERROR_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_differences_to_ones() {
        let x = Tensor::from_fn([2, 2], |i| i as f64 - 1.5);
        let g = finite_diff_oracle(|t| Ok(t.data().iter().sum()), &x, DEFAULT_STEP).unwrap();
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::new([1], vec![3.0]).unwrap();
        let g = finite_diff_oracle(|t| Ok(t.data()[0] * t.data()[0]), &x, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_step_and_nan() {
        let x = Tensor::zeros([1]);
        assert!(finite_diff_oracle(|_| Ok(0.0), &x, 0.0).is_err());
        let err = finite_diff_oracle(|_| Ok(f64::NAN), &x, 1e-5).unwrap_err();
        assert!(matches!(err, crate::Error::Numeric(_)));
    }

    #[test]
    fn normwise_ignores_tiny_coordinates() {
        let a = [1.0, 1e-5];
        let b = [1.0, 2e-5];
        assert!(max_relative_error(&a, &b) > 0.4);
        assert!(normwise_relative_error(&a, &b) < 2e-5);
        assert_eq!(normwise_relative_error(&[0.0], &[1e-12]), 1e-6);
    }
}
