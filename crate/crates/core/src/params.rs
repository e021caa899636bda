//! Parameter containers shared by every layer.
//!
//! Each container is generic over its leaf type so one definition serves
//! stored weights (`Tensor`), tape-bound weights (`Var`), shape descriptions
//! (`ParamSpec`) and gradients.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{bail, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Normal(0, 0.02) truncated to two standard deviations.
    TruncNormal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(shape: impl Into<Vec<usize>>, init: Init) -> Self {
        ParamSpec { shape: shape.into(), init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn materialize(&self, rng: &mut impl Rng) -> Tensor {
        match self.init {
            Init::Zeros => Tensor::zeros(self.shape.clone()),
            Init::Ones => Tensor::full(self.shape.clone(), 1.0),
            Init::TruncNormal => {
                let normal = Normal::new(0.0, INIT_STD).expect("valid std");
                Tensor::from_fn(self.shape.clone(), |_| loop {
                    let v: f64 = normal.sample(rng);
                    if v.abs() <= 2.0 * INIT_STD {
                        break v;
                    }
                })
            }
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A tree of named leaves that can be rebuilt with different leaf types.
pub trait ParamTree<T> {
    type With<U>;

    /// Maps every leaf in a fixed depth-first order, passing its dotted name.
    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> Result<U, E>,
    ) -> Result<Self::With<U>, E>;

    fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> Self::With<U> {
        match self.try_map::<U, std::convert::Infallible>("", &mut |n, t| Ok(f(n, t))) {
            Ok(v) => v,
            Err(never) => match never {},
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &T)) {
        let _ = self.map(&mut |n, t| f(n, t));
    }

    /// Leaves in visiting order.
    fn leaves(&self) -> Vec<T>
    where
        T: Clone,
    {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t.clone()));
        out
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(n.to_string()));
        out
    }

    /// Same structure with leaves taken from `values` in visiting order.
    fn rebuild<U>(&self, values: Vec<U>) -> Result<Self::With<U>> {
        let expected = self.names().len();
        if values.len() != expected {
            bail!(Dimension, "rebuild needs {expected} leaves, got {}", values.len());
        }
        let mut it = values.into_iter();
        Ok(self.map(&mut |_, _| it.next().expect("length checked")))
    }
}

/// Registers every tensor as a grad-enabled leaf.
pub fn bind<P: ParamTree<Tensor>>(tape: &Tape, p: &P) -> P::With<Var> {
    p.map(&mut |_, t| tape.param(t.clone()))
}

/// Registers every tensor as a constant leaf.
pub fn bind_const<P: ParamTree<Tensor>>(tape: &Tape, p: &P) -> P::With<Var> {
    p.map(&mut |_, t| tape.constant(t.clone()))
}

pub fn materialize<P: ParamTree<ParamSpec>>(spec: &P, rng: &mut impl Rng) -> P::With<Tensor> {
    spec.map(&mut |_, s| s.materialize(rng))
}

/// Total scalar count of a built parameter tree.
pub fn census<P: ParamTree<Tensor>>(p: &P) -> usize {
    let mut n = 0;
    p.visit(&mut |_, t| n += t.len());
    n
}

/// `x · W + b`, `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

impl Linear<ParamSpec> {
    pub fn spec(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: ParamSpec::new([fan_in, fan_out], Init::TruncNormal),
            bias: ParamSpec::new([fan_out], Init::Zeros),
        }
    }
}

impl Linear<Tensor> {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl Linear<Var> {
    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.weight, self.bias)
    }
}

impl<T> ParamTree<T> for Linear<T> {
    type With<U> = Linear<U>;

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<Linear<U>, E> {
        Ok(Linear {
            weight: f(&join(prefix, "weight"), &self.weight)?,
            bias: f(&join(prefix, "bias"), &self.bias)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<T> {
    pub gamma: T,
    pub beta: T,
    pub eps: f64,
}

pub const DEFAULT_LN_EPS: f64 = 1e-5;

impl LayerNormParams<ParamSpec> {
    pub fn spec(channels: usize, eps: f64) -> Self {
        LayerNormParams {
            gamma: ParamSpec::new([channels], Init::Ones),
            beta: ParamSpec::new([channels], Init::Zeros),
            eps,
        }
    }
}

impl LayerNormParams<Var> {
    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        tape.layer_norm(x, self.gamma, self.beta, self.eps)
    }
}

impl<T> ParamTree<T> for LayerNormParams<T> {
    type With<U> = LayerNormParams<U>;

    fn try_map<U, E>(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &T) -> Result<U, E>,
    ) -> Result<LayerNormParams<U>, E> {
        Ok(LayerNormParams {
            gamma: f(&join(prefix, "gamma"), &self.gamma)?,
            beta: f(&join(prefix, "beta"), &self.beta)?,
            eps: self.eps,
        })
    }
}

impl<T, P: ParamTree<T>> ParamTree<T> for Vec<P> {
    type With<U> = Vec<P::With<U>>;

    fn try_map<U, E>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> Result<U, E>) -> Result<Self::With<U>, E> {
        self.iter()
            .enumerate()
            .map(|(i, p)| p.try_map(&join(prefix, &i.to_string()), f))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_two_to_three_has_nine_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = materialize(&Linear::spec(2, 3), &mut rng);
        assert_eq!(census(&l), 9);
        assert_eq!(l.names(), vec!["weight", "bias"]);
    }

    #[test]
    fn trunc_normal_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = ParamSpec::new([1000], Init::TruncNormal).materialize(&mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD));
        let mean = t.data().iter().sum::<f64>() / 1000.0;
        assert!(mean.abs() < 0.005);
    }

    #[test]
    fn nested_names_and_rebuild() {
        let v = vec![Linear::spec(1, 1), Linear::spec(1, 2)];
        assert_eq!(v.names(), vec!["0.weight", "0.bias", "1.weight", "1.bias"]);
        let rebuilt = v.rebuild(vec![1, 2, 3, 4]).unwrap();
        assert_eq!(rebuilt[1].bias, 4);
        assert!(v.rebuild(vec![1, 2]).is_err());
    }
}
