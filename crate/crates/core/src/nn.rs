//! Small dense numerical kernel shared by the recurrent detectors.
//!
//! Everything is `f64` and row-major. Gradients are hand-derived by each
//! architecture and accumulated into the [`ParamStore`] gradient buffers.

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major array of rank 1 (vector) or 2 (matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        assert!(matches!(shape.len(), 1 | 2), "tensor rank must be 1 or 2");
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if !matches!(shape.len(), 1 | 2) {
            return Err(Error::invalid(
                "shape",
                format!("rank {} is not 1 or 2", shape.len()),
            ));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Dimension {
                context: "tensor data",
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("values", "tensor entries must be finite"));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count; 1 for vectors.
    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }
}

/// `out += W x`
#[inline]
pub fn matvec_acc(w: &Tensor, x: &[f64], out: &mut [f64]) {
    let cols = w.cols();
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(out.len(), w.rows());
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Wᵀ d`
#[inline]
pub fn matvec_t_acc(w: &Tensor, d: &[f64], out: &mut [f64]) {
    let cols = w.cols();
    debug_assert_eq!(d.len(), w.rows());
    debug_assert_eq!(out.len(), cols);
    for (&di, row) in d.iter().zip(w.data.chunks_exact(cols)) {
        if di != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * di;
            }
        }
    }
}

/// `g += d xᵀ`
#[inline]
pub fn outer_acc(g: &mut Tensor, d: &[f64], x: &[f64]) {
    let cols = g.cols();
    debug_assert_eq!(x.len(), cols);
    for (&di, row) in d.iter().zip(g.data.chunks_exact_mut(cols)) {
        if di != 0.0 {
            for (r, xv) in row.iter_mut().zip(x) {
                *r += di * xv;
            }
        }
    }
}

/// `g += d`
#[inline]
pub fn add_acc(g: &mut Tensor, d: &[f64]) {
    for (a, b) in g.data.iter_mut().zip(d) {
        *a += b;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh_act(x: f64) -> f64 {
    x.tanh()
}

/// Writes the softmax of `logits` into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// Pulls an upstream gradient `dy` on softmax outputs `y` back to the logits.
pub fn softmax_backward(y: &[f64], dy: &[f64], dz: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yi), &dyi) in dz.iter_mut().zip(y).zip(dy) {
        *d = yi * (dyi - dot);
    }
}

/// Uniform `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let r = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (2.0 * rng.random::<f64>() - 1.0) * r)
        .collect();
    Tensor {
        shape: vec![rows, cols],
        data,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    /// Position in the owning store, usable with [`ParamStore::split_mut`].
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters with a gradient buffer of identical shapes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::invalid(name, "duplicate parameter name"));
        }
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar parameter count.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Values for reading alongside gradients for writing.
    pub fn split_mut(&mut self) -> (&[Tensor], &mut [Tensor]) {
        (&self.values, &mut self.grads)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for g in &mut self.grads {
                g.data.iter_mut().for_each(|v| *v *= scale);
            }
        }
        norm
    }

    /// True when `other` has the same names and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape == b.shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .values
                .iter()
                .map(|v| Tensor::zeros(v.shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected adaptive-moment update, then zeroes the gradients.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.first.len() != params.len()
        || state
            .first
            .iter()
            .zip(&params.values)
            .any(|(m, v)| m.shape != v.shape)
    {
        return Err(Error::Dimension {
            context: "adam moment buffers",
            expected: params.num_scalars(),
            actual: state.first.iter().map(Tensor::len).sum(),
        });
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    for (((value, grad), m), v) in params
        .values
        .iter_mut()
        .zip(&mut params.grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for (((w, g), m), v) in value
            .data
            .iter_mut()
            .zip(grad.data.iter_mut())
            .zip(m.data.iter_mut())
            .zip(v.data.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * *g;
            *v = beta2 * *v + (1.0 - beta2) * *g * *g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            *g = 0.0;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// `(parameter name, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Picks `count` coordinates, cycling through tensors so every tensor is hit.
pub fn sample_coordinates<R: Rng + ?Sized>(
    params: &ParamStore,
    count: usize,
    rng: &mut R,
) -> Vec<(ParamId, usize)> {
    if params.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|i| {
            let id = ParamId(i % params.len());
            let idx = rng.random_range(0..params.value(id).len());
            (id, idx)
        })
        .collect()
}

/// Compares the gradients already stored in `params` with central
/// differences of `loss_fn` at the given coordinates.
pub fn finite_difference_check<F>(
    mut loss_fn: F,
    params: &ParamStore,
    perturbation: f64,
    coords: &[(ParamId, usize)],
) -> GradCheck
where
    F: FnMut(&ParamStore) -> f64,
{
    assert!(perturbation > 0.0, "perturbation must be positive");
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    for &(id, idx) in coords {
        let original = probe.values[id.0].data[idx];
        probe.values[id.0].data[idx] = original + perturbation;
        let plus = loss_fn(&probe);
        probe.values[id.0].data[idx] = original - perturbation;
        let minus = loss_fn(&probe);
        probe.values[id.0].data[idx] = original;

        let numeric = (plus - minus) / (2.0 * perturbation);
        let analytic = params.grads[id.0].data[idx];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(rel);
            report.worst = Some((params.names[id.0].clone(), idx, analytic, numeric));
        }
    }
    report
}
