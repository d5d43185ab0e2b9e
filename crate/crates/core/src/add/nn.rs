//! Small fully-connected networks with hand-written backpropagation.
//!
//! Every pass works on a batch, one row per sample, as dense matrix
//! products. Inputs are split into a *head*
//! that changes on every call and an optional *tail* (the state embedding)
//! whose first-layer projection can be computed once and reused, e.g.
//! across all denoising steps of a chain.

use alloc::vec;
use alloc::vec::Vec;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::Rng;

use crate::rng::SimRng;

/// SiLU, `x·σ(x)`.
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match its shape");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        view(&self.data, self.rows, self.cols)
    }

    pub fn view_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut self.data).expect("shape matches data")
    }

    /// Columns `start..end` of every row.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, end - start);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..end]);
        }
        out
    }

    /// `[self | other]`, row by row.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            let row = out.row_mut(r);
            row[..self.cols].copy_from_slice(self.row(r));
            row[self.cols..].copy_from_slice(other.row(r));
        }
        out
    }
}

/// Affine layer. Weights are stored input-major, `weight[i * outputs + o]`,
/// so forward and backward passes walk contiguous rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Uniform `±1/√inputs` initialization.
    pub fn init(inputs: usize, outputs: usize, rng: &mut SimRng) -> Self {
        let bound = 1.0 / libm::sqrt(inputs.max(1) as f64);
        let mut draw = || rng.random_range(-bound..=bound);
        let weight = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    /// Rows `start..end` of the weight matrix, `(end - start) × outputs`.
    fn rows(&self, start: usize, end: usize) -> ArrayView2<'_, f64> {
        view(
            &self.weight[start * self.outputs..end * self.outputs],
            end - start,
            self.outputs,
        )
    }

    /// `acc += x · W[offset..offset + x.cols]`.
    fn accumulate(&self, x: &Matrix, offset: usize, acc: &mut Matrix) {
        let w = self.rows(offset, offset + x.cols);
        general_mat_mul(1.0, &x.view(), &w, 1.0, &mut acc.view_mut());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// Hidden layers use SiLU; the last layer is linear.
    pub layers: Vec<Dense>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    head: Matrix,
    /// Pre-activations of every hidden layer.
    pre: Vec<Matrix>,
    /// Post-activations of every hidden layer.
    post: Vec<Matrix>,
    pub output: Matrix,
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weight: net.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight
            .iter()
            .chain(&self.bias)
            .all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Same layout as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// `sizes = [inputs, hidden.., outputs]`.
    pub fn new(sizes: &[usize], rng: &mut SimRng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// First-layer contribution of the trailing `tail.cols` inputs.
    pub fn project_tail(&self, tail: &Matrix) -> Matrix {
        let first = &self.layers[0];
        let mut acc = Matrix::zeros(tail.rows, first.outputs);
        first.accumulate(tail, first.inputs - tail.cols, &mut acc);
        acc
    }

    /// Forward pass over `[head | tail]` where `tail_proj` is
    /// [`project_tail`](Self::project_tail) of the tail, or `None` when the
    /// head is the whole input.
    pub fn forward_split(&self, head: &Matrix, tail_proj: Option<&Matrix>) -> Trace {
        let n = self.layers.len();
        let batch = head.rows;
        let mut pre: Vec<Matrix> = Vec::with_capacity(n - 1);
        let mut post: Vec<Matrix> = Vec::with_capacity(n - 1);
        let mut output = Matrix::zeros(batch, 0);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Matrix::zeros(batch, layer.outputs);
            for b in 0..batch {
                z.row_mut(b).copy_from_slice(&layer.bias);
            }
            if l == 0 {
                debug_assert!(tail_proj.is_some() || head.cols == layer.inputs);
                layer.accumulate(head, 0, &mut z);
                if let Some(p) = tail_proj {
                    z.data.iter_mut().zip(&p.data).for_each(|(a, b)| *a += b);
                }
            } else {
                layer.accumulate(&post[l - 1], 0, &mut z);
            }
            if l + 1 == n {
                output = z;
            } else {
                post.push(Matrix {
                    rows: z.rows,
                    cols: z.cols,
                    data: z.data.iter().map(|&v| silu(v)).collect(),
                });
                pre.push(z);
            }
        }
        Trace {
            head: head.clone(),
            pre,
            post,
            output,
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec());
        self.forward_split(&x, None).output.data
    }

    /// Deltas of the first layer for `grad_out` at the output.
    fn first_delta(&self, trace: &Trace, grad_out: &Matrix, mut grads: Option<&mut Grads>) -> Matrix {
        let mut delta = grad_out.clone();
        for l in (1..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if let Some(g) = grads.as_deref_mut() {
                layer_grads(layer, &trace.post[l - 1], &delta, &mut g.weight[l], &mut g.bias[l]);
            }
            let mut next = input_grads(layer, &delta, layer.inputs);
            next.data
                .iter_mut()
                .zip(&trace.pre[l - 1].data)
                .for_each(|(d, &z)| *d *= silu_grad(z));
            delta = next;
        }
        delta
    }

    /// Accumulates parameter gradients of `Σ grad_out ⊙ output` into
    /// `grads`. Returns the gradient with respect to the head and the
    /// first-layer delta; the tail's weight gradient is added separately by
    /// [`accumulate_tail`](Self::accumulate_tail), so that deltas from many
    /// passes sharing one tail can be summed first.
    pub fn backward(&self, trace: &Trace, grad_out: &Matrix, grads: &mut Grads) -> (Matrix, Matrix) {
        let delta = self.first_delta(trace, grad_out, Some(grads));
        let first = &self.layers[0];
        layer_grads(first, &trace.head, &delta, &mut grads.weight[0], &mut grads.bias[0]);
        let grad_head = input_grads(first, &delta, trace.head.cols);
        (grad_head, delta)
    }

    /// Gradient of `Σ grad_out ⊙ output` with respect to the head only.
    pub fn input_gradient(&self, trace: &Trace, grad_out: &Matrix) -> Matrix {
        let delta = self.first_delta(trace, grad_out, None);
        input_grads(&self.layers[0], &delta, trace.head.cols)
    }

    /// Adds `deltaᵀ · tail` to the first-layer weight gradient of the tail
    /// inputs.
    pub fn accumulate_tail(&self, delta: &Matrix, tail: &Matrix, grads: &mut Grads) {
        let first = &self.layers[0];
        let offset = first.inputs - tail.cols;
        let gw = &mut grads.weight[0][offset * first.outputs..];
        let mut gw = ArrayViewMut2::from_shape((tail.cols, first.outputs), gw).expect("shape matches data");
        general_mat_mul(1.0, &tail.view().t(), &delta.view(), 1.0, &mut gw);
    }

    /// Parameters flattened layer by layer, weight then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.parameter_count());
        let mut at = 0;
        for l in &mut self.layers {
            let (w, b) = (l.weight.len(), l.bias.len());
            l.weight.copy_from_slice(&flat[at..at + w]);
            l.bias.copy_from_slice(&flat[at + w..at + w + b]);
            at += w + b;
        }
    }
}

fn layer_grads(layer: &Dense, input: &Matrix, delta: &Matrix, gw: &mut [f64], gb: &mut [f64]) {
    let gw = &mut gw[..input.cols * layer.outputs];
    let mut gw = ArrayViewMut2::from_shape((input.cols, layer.outputs), gw).expect("shape matches data");
    general_mat_mul(1.0, &input.view().t(), &delta.view(), 1.0, &mut gw);
    for b in 0..delta.rows {
        axpy(1.0, delta.row(b), gb);
    }
}

/// `δ · Wᵀ` restricted to the first `cols` inputs.
fn input_grads(layer: &Dense, delta: &Matrix, cols: usize) -> Matrix {
    let mut out = Matrix::zeros(delta.rows, cols);
    general_mat_mul(1.0, &delta.view(), &layer.rows(0, cols).t(), 0.0, &mut out.view_mut());
    out
}

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("shape matches data")
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Grads::zeros_like(net),
            v: Grads::zeros_like(net),
        }
    }

    /// Descends along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Grads) {
        self.t = self.t.saturating_add(1);
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / (libm::sqrt(v[i] / c2) + eps);
            }
        };
        for (l, layer) in net.layers.iter_mut().enumerate() {
            update(
                &mut layer.weight,
                &grads.weight[l],
                &mut self.m.weight[l],
                &mut self.v.weight[l],
            );
            update(
                &mut layer.bias,
                &grads.bias[l],
                &mut self.m.bias[l],
                &mut self.v.bias[l],
            );
        }
    }
}
