//! Reverse-mode differentiation by operation recording.
//!
//! A [`Tape`] owns every value produced during one forward pass. Operations
//! take and return [`Var`] handles; [`Tape::backward`] consumes the tape and
//! replays the recorded nodes in reverse.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels::{self, gemm};
use super::value::Tensor;
use crate::error::{bail, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddLastDim(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Log(Var),
    ClampMin(Var, f64),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, eps: f64 },
    DwConv { x: Var, kernels: Var, padding: [usize; 3] },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    GatherRows(Var, Arc<[usize]>),
    ConcatLastDim(Var, Var),
    SliceLastDim(Var, usize),
    SumAll(Var),
    SumRows(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording context for one forward/backward pass. Single-writer.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, index: nodes.len() - 1 }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id {
            bail!(Contract, "variable belongs to a different tape");
        }
        Ok(())
    }

    fn input(&self, v: Var) -> Result<(Tensor, bool)> {
        self.check(v)?;
        let nodes = self.nodes.borrow();
        let n = &nodes[v.index];
        Ok((n.value.clone(), n.requires_grad))
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that does not.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Result<Tensor> {
        Ok(self.input(v)?.0)
    }

    pub fn shape(&self, v: Var) -> Result<Vec<usize>> {
        self.check(v)?;
        Ok(self.nodes.borrow()[v.index].value.shape().to_vec())
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.input(v)?.1)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, ag) = self.input(a)?;
        let (bv, bg) = self.input(b)?;
        let out = kernels::matmul(&av, &bv)?;
        Ok(self.push(out, Op::Matmul(a, b), ag || bg))
    }

    fn zip_same(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (av, ag) = self.input(a)?;
        let (bv, bg) = self.input(b)?;
        if av.shape() != bv.shape() {
            bail!(Dimension, "{name} shapes {:?} and {:?} differ", av.shape(), bv.shape());
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((Tensor::new(av.shape().to_vec(), data)?.ensure_finite(name)?, ag || bg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (out, g) = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), g))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (out, g) = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), g))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (out, g) = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), g))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let (out, g) = self.zip_same(a, b, "div", |x, y| x / y)?;
        Ok(self.push(out, Op::Div(a, b), g))
    }

    /// `x[..., C] + v[C]`, broadcasting `v` over all leading axes.
    pub fn add_last_dim(&self, x: Var, v: Var) -> Result<Var> {
        let (xv, xg) = self.input(x)?;
        let (vv, vg) = self.input(v)?;
        let c = xv.last_dim();
        if vv.shape() != [c] {
            bail!(Dimension, "cannot broadcast {:?} over last axis of {:?}", vv.shape(), xv.shape());
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(vv.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), data)?.ensure_finite("add_last_dim")?;
        Ok(self.push(out, Op::AddLastDim(x, v), xg || vg))
    }

    fn map(&self, x: Var, name: &str, f: impl Fn(f64) -> f64) -> Result<(Tensor, bool)> {
        let (xv, xg) = self.input(x)?;
        let data = xv.data().iter().map(|&v| f(v)).collect();
        Ok((Tensor::new(xv.shape().to_vec(), data)?.ensure_finite(name)?, xg))
    }

    pub fn scale(&self, x: Var, s: f64) -> Result<Var> {
        let (out, g) = self.map(x, "scale", |v| v * s)?;
        Ok(self.push(out, Op::Scale(x, s), g))
    }

    pub fn add_scalar(&self, x: Var, s: f64) -> Result<Var> {
        let (out, g) = self.map(x, "add_scalar", |v| v + s)?;
        Ok(self.push(out, Op::AddScalar(x), g))
    }

    pub fn log(&self, x: Var) -> Result<Var> {
        let (out, g) = self.map(x, "log", f64::ln)?;
        Ok(self.push(out, Op::Log(x), g))
    }

    /// `max(x, floor)`; gradient flows only where `x > floor`.
    pub fn clamp_min(&self, x: Var, floor: f64) -> Result<Var> {
        let (out, g) = self.map(x, "clamp_min", |v| v.max(floor))?;
        Ok(self.push(out, Op::ClampMin(x, floor), g))
    }

    pub fn gelu(&self, x: Var) -> Result<Var> {
        let (xv, g) = self.input(x)?;
        Ok(self.push(kernels::gelu(&xv)?, Op::Gelu(x), g))
    }

    pub fn softmax_lastdim(&self, x: Var) -> Result<Var> {
        let (xv, g) = self.input(x)?;
        Ok(self.push(kernels::softmax_lastdim(&xv)?, Op::Softmax(x), g))
    }

    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, xg) = self.input(x)?;
        let (gv, gg) = self.input(gamma)?;
        let (bv, bg) = self.input(beta)?;
        let out = kernels::layer_norm(&xv, &gv, &bv, eps)?;
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, eps }, xg || gg || bg))
    }

    pub fn depthwise_conv3d(&self, x: Var, kernels: Var, padding: [usize; 3]) -> Result<Var> {
        let (xv, xg) = self.input(x)?;
        let (kv, kg) = self.input(kernels)?;
        let out = kernels::depthwise_conv3d(&xv, &kv, padding)?;
        Ok(self.push(out, Op::DwConv { x, kernels, padding }, xg || kg))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let (xv, g) = self.input(x)?;
        Ok(self.push(xv.reshape(shape)?, Op::Reshape(x), g))
    }

    pub fn permute(&self, x: Var, axes: &[usize]) -> Result<Var> {
        let (xv, g) = self.input(x)?;
        Ok(self.push(xv.permute(axes)?, Op::Permute(x, axes.to_vec()), g))
    }

    /// Selects rows of a `[N, ...]` value: output row `i` is input row
    /// `index[i]`. Rows may repeat or be skipped.
    pub fn gather_rows(&self, x: Var, index: Arc<[usize]>) -> Result<Var> {
        let (xv, g) = self.input(x)?;
        if xv.rank() == 0 {
            bail!(Dimension, "gather_rows needs a leading axis");
        }
        let rows = xv.shape()[0];
        let width = xv.len() / rows;
        let mut data = Vec::with_capacity(index.len() * width);
        for &r in index.iter() {
            if r >= rows {
                bail!(Dimension, "row index {r} out of range for {rows} rows");
            }
            data.extend_from_slice(&xv.data()[r * width..(r + 1) * width]);
        }
        let mut shape = xv.shape().to_vec();
        shape[0] = index.len();
        Ok(self.push(Tensor::new(shape, data)?, Op::GatherRows(x, index), g))
    }

    pub fn concat_last_dim(&self, a: Var, b: Var) -> Result<Var> {
        let (av, ag) = self.input(a)?;
        let (bv, bg) = self.input(b)?;
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            bail!(Dimension, "cannot concatenate {:?} and {:?} on the last axis", sa, sb);
        }
        let (ca, cb) = (av.last_dim(), bv.last_dim());
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for (ra, rb) in av.data().chunks(ca).zip(bv.data().chunks(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        Ok(self.push(Tensor::new(shape, data)?, Op::ConcatLastDim(a, b), ag || bg))
    }

    /// Columns `start..end` of the last axis.
    pub fn slice_last_dim(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (xv, g) = self.input(x)?;
        let c = xv.last_dim();
        if xv.rank() == 0 || start >= end || end > c {
            bail!(Dimension, "slice {start}..{end} out of range for last extent {c}");
        }
        let mut data = Vec::with_capacity(xv.len() / c * (end - start));
        for row in xv.data().chunks(c) {
            data.extend_from_slice(&row[start..end]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = end - start;
        Ok(self.push(Tensor::new(shape, data)?, Op::SliceLastDim(x, start), g))
    }

    pub fn sum(&self, x: Var) -> Result<Var> {
        let (xv, g) = self.input(x)?;
        let s = xv.data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::SumAll(x), g))
    }

    pub fn mean(&self, x: Var) -> Result<Var> {
        let n = self.input(x)?.0.len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Sums over every axis but the last: `[..., C] → [C]`.
    pub fn sum_rows(&self, x: Var) -> Result<Var> {
        let (xv, g) = self.input(x)?;
        let c = xv.last_dim();
        let mut acc = vec![0.0; c];
        for row in xv.data().chunks(c) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        Ok(self.push(Tensor::new([c], acc)?, Op::SumRows(x), g))
    }

    /// `x · W + b` for `x: [N, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        self.add_last_dim(y, bias)
    }

    /// Gradients of a scalar root with respect to every grad-enabled value.
    /// Consumes the tape.
    pub fn backward(self, root: Var) -> Result<Gradients> {
        self.check(root)?;
        let nodes = self.nodes.into_inner();
        let rn = &nodes[root.index];
        if rn.value.len() != 1 {
            bail!(Contract, "backward root must be scalar, shape is {:?}", rn.value.shape());
        }
        if !rn.requires_grad {
            bail!(Contract, "backward root does not depend on any parameter");
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.index] = Some(vec![1.0]);
        for i in (0..=root.index).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            propagate(&nodes, node, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { tape: self.id, grads, shapes })
    }
}

/// Gradient table produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not influence the root.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            bail!(Contract, "variable does not belong to this gradient table");
        }
        let shape = self.shapes[v.index].clone();
        match &self.grads[v.index] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(shape)),
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, g: Vec<f64>) {
    if !nodes[v.index].requires_grad {
        return;
    }
    match &mut grads[v.index] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.index].requires_grad
}

fn propagate(nodes: &[Node], node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |v: Var| &nodes[v.index].value;
    match &node.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (batch, (m, k, n)) = kernels::matmul_dims(av.shape(), bv.shape()).expect("validated in forward");
            if wants(nodes, *a) {
                let mut ga = vec![0.0; av.len()];
                for bi in 0..batch {
                    gemm(
                        &gy[bi * m * n..(bi + 1) * m * n],
                        &bv.data()[bi * k * n..(bi + 1) * k * n],
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                        (m, n, k),
                        false,
                        true,
                    );
                }
                accumulate(grads, nodes, *a, ga);
            }
            if wants(nodes, *b) {
                let mut gb = vec![0.0; bv.len()];
                for bi in 0..batch {
                    gemm(
                        &av.data()[bi * m * k..(bi + 1) * m * k],
                        &gy[bi * m * n..(bi + 1) * m * n],
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                        (k, m, n),
                        true,
                        false,
                    );
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, gy.to_vec());
            accumulate(grads, nodes, *b, gy.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, gy.to_vec());
            accumulate(grads, nodes, *b, gy.iter().map(|g| -g).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(nodes, *a) {
                accumulate(grads, nodes, *a, gy.iter().zip(bv.data()).map(|(g, y)| g * y).collect());
            }
            if wants(nodes, *b) {
                accumulate(grads, nodes, *b, gy.iter().zip(av.data()).map(|(g, x)| g * x).collect());
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(nodes, *a) {
                accumulate(grads, nodes, *a, gy.iter().zip(bv.data()).map(|(g, y)| g / y).collect());
            }
            if wants(nodes, *b) {
                let gb = gy
                    .iter()
                    .zip(av.data().iter().zip(bv.data()))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::AddLastDim(x, v) => {
            accumulate(grads, nodes, *x, gy.to_vec());
            if wants(nodes, *v) {
                let c = val(*v).len();
                let mut gv = vec![0.0; c];
                for row in gy.chunks(c) {
                    for (a, &g) in gv.iter_mut().zip(row) {
                        *a += g;
                    }
                }
                accumulate(grads, nodes, *v, gv);
            }
        }
        Op::Scale(x, s) => accumulate(grads, nodes, *x, gy.iter().map(|g| g * s).collect()),
        Op::AddScalar(x) | Op::Reshape(x) => accumulate(grads, nodes, *x, gy.to_vec()),
        Op::Log(x) => {
            let g = gy.iter().zip(val(*x).data()).map(|(g, v)| g / v).collect();
            accumulate(grads, nodes, *x, g);
        }
        Op::ClampMin(x, floor) => {
            let g = gy
                .iter()
                .zip(val(*x).data())
                .map(|(&g, &v)| if v > *floor { g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *x, g);
        }
        Op::Gelu(x) => {
            let g = gy
                .iter()
                .zip(val(*x).data())
                .map(|(g, &v)| g * kernels::gelu_grad_scalar(v))
                .collect();
            accumulate(grads, nodes, *x, g);
        }
        Op::Softmax(x) => {
            let y = node.value.data();
            let c = node.value.last_dim();
            let mut g = vec![0.0; y.len()];
            for ((grow, yrow), orow) in gy.chunks(c).zip(y.chunks(c)).zip(g.chunks_mut(c)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                    *o = yv * (gv - dot);
                }
            }
            accumulate(grads, nodes, *x, g);
        }
        Op::LayerNorm { x, gamma, beta, eps } => {
            let xv = val(*x);
            let gam = val(*gamma).data();
            let c = xv.last_dim();
            let mut gx = vec![0.0; xv.len()];
            let mut gg = vec![0.0; c];
            let mut gb = vec![0.0; c];
            let mut xhat = vec![0.0; c];
            let mut dxhat = vec![0.0; c];
            for ((row, grow), orow) in xv.data().chunks(c).zip(gy.chunks(c)).zip(gx.chunks_mut(c)) {
                let (mean, inv) = kernels::row_stats(row, *eps);
                for j in 0..c {
                    xhat[j] = (row[j] - mean) * inv;
                    dxhat[j] = grow[j] * gam[j];
                    gg[j] += grow[j] * xhat[j];
                    gb[j] += grow[j];
                }
                let m1 = dxhat.iter().sum::<f64>() / c as f64;
                let m2 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                for j in 0..c {
                    orow[j] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                }
            }
            accumulate(grads, nodes, *x, gx);
            accumulate(grads, nodes, *gamma, gg);
            accumulate(grads, nodes, *beta, gb);
        }
        Op::DwConv { x, kernels: k, padding } => {
            let (xv, kv) = (val(*x), val(*k));
            let geom = kernels::conv_geom(xv.shape(), kv.shape(), *padding).expect("validated in forward");
            let (wx, wk) = (wants(nodes, *x), wants(nodes, *k));
            let mut gx = vec![0.0; if wx { xv.len() } else { 0 }];
            let mut gk = vec![0.0; if wk { kv.len() } else { 0 }];
            let (xd, kd) = (xv.data(), kv.data());
            kernels::conv_for_each(&geom, |o, i, ki| {
                if wx {
                    gx[i] += kd[ki] * gy[o];
                }
                if wk {
                    gk[ki] += gy[o] * xd[i];
                }
            });
            if wx {
                accumulate(grads, nodes, *x, gx);
            }
            if wk {
                accumulate(grads, nodes, *k, gk);
            }
        }
        Op::Permute(x, axes) => {
            let mut inverse = vec![0; axes.len()];
            for (i, &a) in axes.iter().enumerate() {
                inverse[a] = i;
            }
            let g = Tensor::new(node.value.shape().to_vec(), gy.to_vec())
                .and_then(|t| t.permute(&inverse))
                .expect("permutation validated in forward");
            accumulate(grads, nodes, *x, g.into_data());
        }
        Op::GatherRows(x, index) => {
            let xv = val(*x);
            let width = xv.len() / xv.shape()[0];
            let mut g = vec![0.0; xv.len()];
            for (i, &r) in index.iter().enumerate() {
                for (a, &b) in g[r * width..(r + 1) * width].iter_mut().zip(&gy[i * width..(i + 1) * width]) {
                    *a += b;
                }
            }
            accumulate(grads, nodes, *x, g);
        }
        Op::ConcatLastDim(a, b) => {
            let (ca, cb) = (val(*a).last_dim(), val(*b).last_dim());
            let mut ga = Vec::with_capacity(val(*a).len());
            let mut gb = Vec::with_capacity(val(*b).len());
            for row in gy.chunks(ca + cb) {
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            accumulate(grads, nodes, *a, ga);
            accumulate(grads, nodes, *b, gb);
        }
        Op::SliceLastDim(x, start) => {
            let xv = val(*x);
            let c = xv.last_dim();
            let w = node.value.last_dim();
            let mut g = vec![0.0; xv.len()];
            for (row, grow) in g.chunks_mut(c).zip(gy.chunks(w)) {
                row[*start..start + w].copy_from_slice(grow);
            }
            accumulate(grads, nodes, *x, g);
        }
        Op::SumAll(x) => accumulate(grads, nodes, *x, vec![gy[0]; val(*x).len()]),
        Op::SumRows(x) => {
            let n = val(*x).len();
            let g = (0..n).map(|i| gy[i % gy.len()]).collect();
            accumulate(grads, nodes, *x, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_fn([2, 3], |i| i as f64));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_root_is_contract_error() {
        let tape = Tape::new();
        let x = tape.param(Tensor::zeros([2]));
        let err = tape.backward(x).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn unreachable_param_gets_zeros() {
        let tape = Tape::new();
        let x = tape.param(Tensor::full([2], 1.0));
        let unused = tape.param(Tensor::full([3], 1.0));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(unused).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn foreign_var_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.param(Tensor::zeros([1]));
        assert!(b.sum(x).is_err());
    }

    #[test]
    fn log_of_zero_is_numeric_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros([2]));
        assert!(matches!(tape.log(x).unwrap_err(), crate::Error::Numeric(_)));
    }
}
