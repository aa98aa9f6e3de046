//! Stacked LSTM detector.
//!
//! Each layer runs the standard gated cell
//!
//! ```text
//! f = σ(W_fs s + W_fh h_prev + b_f)      i = σ(W_is s + W_ih h_prev + b_i)
//! g = tanh(W_gs s + W_gh h_prev + b_g)   o = σ(W_os s + W_oh h_prev + b_o)
//! c = f ⊙ c_prev + i ⊙ g                 h = tanh(c) ⊙ o
//! ```
//!
//! Layer `l > 0` takes the hidden state of layer `l - 1` as its input `s`.
//! The top layer's `h` feeds a softmax classifier `y = softmax(W_yh h + b_y)`.

use rand::Rng;

use crate::channel_sim::SensedSeries;
use crate::detector::{mse_loss, mse_loss_grad, WindowConfig};
use crate::error::{Error, Result};
use crate::model::{self, SequenceModel, TrainConfig, Trained};
use crate::nn::{
    add_acc, glorot_uniform, matvec_acc, matvec_t_acc, outer_acc, sigmoid, softmax_backward,
    softmax_into, ParamId, ParamStore, Tensor,
};

/// Gate order used for every per-gate array: forget, input, candidate, output.
const GATES: [&str; 4] = ["f", "i", "g", "o"];
const FORGET: usize = 0;
const INPUT: usize = 1;
const CANDIDATE: usize = 2;
const OUTPUT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmDims {
    pub depth: usize,
    pub hidden: usize,
    pub input_len: usize,
    pub compare_len: usize,
}

impl LstmDims {
    pub fn for_window(depth: usize, hidden: usize, window: &WindowConfig) -> Self {
        Self {
            depth,
            hidden,
            input_len: window.input_len,
            compare_len: window.compare_len,
        }
    }

    pub fn outputs(&self) -> usize {
        1 << self.compare_len
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_len
        } else {
            self.hidden
        }
    }

    fn validate(&self) -> Result<()> {
        if self.depth == 0
            || self.hidden == 0
            || self.input_len == 0
            || !(1..=16).contains(&self.compare_len)
        {
            return Err(Error::invalid(
                "dims",
                format!("unusable LSTM dimensions {self:?}"),
            ));
        }
        Ok(())
    }

    /// Parameter names and shapes in store order.
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let m = self.hidden;
        let mut out = Vec::new();
        for l in 0..self.depth {
            let n_in = self.layer_input(l);
            for g in GATES {
                out.push((format!("layer{l}.w_{g}s"), vec![m, n_in]));
            }
            for g in GATES {
                out.push((format!("layer{l}.w_{g}h"), vec![m, m]));
            }
            for g in GATES {
                out.push((format!("layer{l}.b_{g}"), vec![m]));
            }
        }
        out.push(("w_yh".into(), vec![self.outputs(), m]));
        out.push(("b_y".into(), vec![self.outputs()]));
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerIds {
    w_s: [ParamId; 4],
    w_h: [ParamId; 4],
    b: [ParamId; 4],
}

/// Borrowed weights of one layer.
#[derive(Debug, Clone, Copy)]
pub struct LstmLayer<'a> {
    pub w_s: [&'a Tensor; 4],
    pub w_h: [&'a Tensor; 4],
    pub b: [&'a Tensor; 4],
}

#[derive(Debug, Clone)]
pub struct LstmStackParams {
    dims: LstmDims,
    store: ParamStore,
    layers: Vec<LayerIds>,
    w_yh: ParamId,
    b_y: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub layers: Vec<LayerState>,
}

/// Activations of one layer at one step, kept for the backward pass.
#[derive(Debug, Clone)]
struct CellTape {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: [Vec<f64>; 4],
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
}

impl<'a> LstmLayer<'a> {
    /// Forward pass of one cell; gate activations land in `gates`.
    #[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
    fn forward(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        gates: &mut [Vec<f64>; 4],
        c: &mut [f64],
        tanh_c: &mut [f64],
        h: &mut [f64],
    ) {
        for q in 0..4 {
            let pre = &mut gates[q];
            pre.copy_from_slice(self.b[q].data());
            matvec_acc(self.w_s[q], x, pre);
            matvec_acc(self.w_h[q], h_prev, pre);
            if q == CANDIDATE {
                pre.iter_mut().for_each(|v| *v = v.tanh());
            } else {
                pre.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
        }
        let [f, i, g, o] = gates;
        for j in 0..c.len() {
            c[j] = f[j] * c_prev[j] + i[j] * g[j];
            tanh_c[j] = c[j].tanh();
            h[j] = tanh_c[j] * o[j];
        }
    }

    fn check(&self, h_prev: &[f64], c_prev: &[f64], input: &[f64]) -> Result<usize> {
        let m = self.b[0].len();
        let n_in = self.w_s[0].cols();
        if input.len() != n_in {
            return Err(Error::Dimension {
                context: "lstm cell input",
                expected: n_in,
                actual: input.len(),
            });
        }
        for v in [h_prev, c_prev] {
            if v.len() != m {
                return Err(Error::Dimension {
                    context: "lstm cell state",
                    expected: m,
                    actual: v.len(),
                });
            }
        }
        Ok(m)
    }

    /// Checked single step returning `(h, c)`.
    pub fn step(
        &self,
        h_prev: &[f64],
        c_prev: &[f64],
        input: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let m = self.check(h_prev, c_prev, input)?;
        let mut gates = std::array::from_fn(|_| vec![0.0; m]);
        let (mut c, mut tc, mut h) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        self.forward(input, h_prev, c_prev, &mut gates, &mut c, &mut tc, &mut h);
        Ok((h, c))
    }

    /// Gate activations `[f, i, g, o]` for one step.
    pub fn gates(&self, h_prev: &[f64], c_prev: &[f64], input: &[f64]) -> Result<[Vec<f64>; 4]> {
        let m = self.check(h_prev, c_prev, input)?;
        let mut gates = std::array::from_fn(|_| vec![0.0; m]);
        let (mut c, mut tc, mut h) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        self.forward(input, h_prev, c_prev, &mut gates, &mut c, &mut tc, &mut h);
        Ok(gates)
    }
}

/// One checked LSTM cell step of layer `layer` of `stack`.
pub fn lstm_cell_step(
    stack: &LstmStackParams,
    layer: usize,
    h_prev: &[f64],
    c_prev: &[f64],
    input: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    stack.layer(layer)?.step(h_prev, c_prev, input)
}

/// One checked step of the whole stack plus classifier.
pub fn lstm_stack_step(
    stack: &LstmStackParams,
    state: &LstmState,
    input: &[f64],
) -> Result<(LstmState, Vec<f64>)> {
    let d = stack.dims;
    if state.layers.len() != d.depth {
        return Err(Error::Dimension {
            context: "lstm state layer count",
            expected: d.depth,
            actual: state.layers.len(),
        });
    }
    let mut x = input.to_vec();
    let mut next = Vec::with_capacity(d.depth);
    for (l, s) in state.layers.iter().enumerate() {
        let (h, c) = lstm_cell_step(stack, l, &s.h, &s.c, &x)?;
        x = h.clone();
        next.push(LayerState { h, c });
    }
    let y = stack.classify(&x);
    Ok((LstmState { layers: next }, y))
}

impl LstmStackParams {
    pub fn from_store(dims: LstmDims, store: ParamStore) -> Result<Self> {
        dims.validate()?;
        let layout = dims.layout();
        if store.len() != layout.len() {
            return Err(Error::Checkpoint(format!(
                "LSTM of depth {} expects {} tensors, found {}",
                dims.depth,
                layout.len(),
                store.len()
            )));
        }
        let mut ids = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing LSTM parameter `{name}`")))?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            ids.push(id);
        }
        let layers = ids
            .chunks_exact(12)
            .map(|c| LayerIds {
                w_s: [c[0], c[1], c[2], c[3]],
                w_h: [c[4], c[5], c[6], c[7]],
                b: [c[8], c[9], c[10], c[11]],
            })
            .collect();
        let n = ids.len();
        Ok(Self {
            dims,
            store,
            layers,
            w_yh: ids[n - 2],
            b_y: ids[n - 1],
        })
    }

    pub fn zeros(dims: LstmDims) -> Result<Self> {
        dims.validate()?;
        let mut store = ParamStore::new();
        for (name, shape) in dims.layout() {
            store.add(name, Tensor::zeros(&shape))?;
        }
        Self::from_store(dims, store)
    }

    /// Glorot-uniform weights, zero biases except a forget-gate bias of 1.
    pub fn random<R: Rng + ?Sized>(dims: LstmDims, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        let mut weights: Vec<ParamId> = Vec::new();
        for layer in &params.layers {
            weights.extend(layer.w_s);
            weights.extend(layer.w_h);
        }
        weights.push(params.w_yh);
        for id in weights {
            let (r, c) = (params.store.value(id).rows(), params.store.value(id).cols());
            *params.store.value_mut(id) = glorot_uniform(r, c, rng);
        }
        for l in 0..params.layers.len() {
            let id = params.layers[l].b[FORGET];
            params.store.value_mut(id).fill(1.0);
        }
        Ok(params)
    }

    pub fn dims(&self) -> LstmDims {
        self.dims
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn into_store(self) -> ParamStore {
        self.store
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let id = self.store.id(name)?;
        Some(self.store.value_mut(id))
    }

    pub fn layer(&self, layer: usize) -> Result<LstmLayer<'_>> {
        let ids = self.layers.get(layer).ok_or(Error::Dimension {
            context: "lstm layer index",
            expected: self.layers.len(),
            actual: layer,
        })?;
        let s = &self.store;
        Ok(LstmLayer {
            w_s: ids.w_s.map(|id| s.value(id)),
            w_h: ids.w_h.map(|id| s.value(id)),
            b: ids.b.map(|id| s.value(id)),
        })
    }

    fn layer_unchecked(&self, layer: usize) -> LstmLayer<'_> {
        let ids = &self.layers[layer];
        let s = &self.store;
        LstmLayer {
            w_s: ids.w_s.map(|id| s.value(id)),
            w_h: ids.w_h.map(|id| s.value(id)),
            b: ids.b.map(|id| s.value(id)),
        }
    }

    /// `softmax(W_yh h + b_y)`
    pub fn classify(&self, h: &[f64]) -> Vec<f64> {
        let mut logits = self.store.value(self.b_y).data().to_vec();
        matvec_acc(self.store.value(self.w_yh), h, &mut logits);
        let mut y = vec![0.0; logits.len()];
        softmax_into(&logits, &mut y);
        y
    }

    fn classify_into(&self, h: &[f64], logits: &mut [f64], y: &mut [f64]) {
        logits.copy_from_slice(self.store.value(self.b_y).data());
        matvec_acc(self.store.value(self.w_yh), h, logits);
        softmax_into(logits, y);
    }

    fn new_tape(&self, layer: usize) -> CellTape {
        let m = self.dims.hidden;
        CellTape {
            x: vec![0.0; self.dims.layer_input(layer)],
            h_prev: vec![0.0; m],
            c_prev: vec![0.0; m],
            gates: std::array::from_fn(|_| vec![0.0; m]),
            tanh_c: vec![0.0; m],
            h: vec![0.0; m],
            c: vec![0.0; m],
        }
    }
}

impl SequenceModel for LstmStackParams {
    type State = LstmState;

    fn input_dim(&self) -> usize {
        self.dims.input_len
    }

    fn output_dim(&self) -> usize {
        self.dims.outputs()
    }

    fn zero_state(&self) -> LstmState {
        let m = self.dims.hidden;
        LstmState {
            layers: (0..self.dims.depth)
                .map(|_| LayerState {
                    h: vec![0.0; m],
                    c: vec![0.0; m],
                })
                .collect(),
        }
    }

    fn step(&self, state: &mut LstmState, input: &[f64], y: &mut [f64]) {
        let m = self.dims.hidden;
        let mut gates = std::array::from_fn(|_| vec![0.0; m]);
        let mut tc = vec![0.0; m];
        let mut x = input.to_vec();
        for (l, s) in state.layers.iter_mut().enumerate() {
            let mut h = vec![0.0; m];
            let mut c = vec![0.0; m];
            self.layer_unchecked(l)
                .forward(&x, &s.h, &s.c, &mut gates, &mut c, &mut tc, &mut h);
            s.c = c;
            s.h.copy_from_slice(&h);
            x = h;
        }
        let mut logits = vec![0.0; y.len()];
        self.classify_into(&x, &mut logits, y);
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn accumulate_gradients(&mut self, inputs: &[f64], labels: &[usize]) -> f64 {
        let d = self.dims;
        let (m, depth, l_out) = (d.hidden, d.depth, d.outputs());
        let steps = labels.len();

        // tapes[t][l]
        let mut tapes: Vec<Vec<CellTape>> = Vec::with_capacity(steps);
        let mut ys = vec![vec![0.0; l_out]; steps];
        let mut logits = vec![0.0; l_out];
        let mut total = 0.0;
        for t in 0..steps {
            let mut row: Vec<CellTape> = Vec::with_capacity(depth);
            for l in 0..depth {
                let mut tape = self.new_tape(l);
                if l == 0 {
                    tape.x
                        .copy_from_slice(&inputs[t * d.input_len..(t + 1) * d.input_len]);
                } else {
                    tape.x.copy_from_slice(&row[l - 1].h);
                }
                if t > 0 {
                    tape.h_prev.copy_from_slice(&tapes[t - 1][l].h);
                    tape.c_prev.copy_from_slice(&tapes[t - 1][l].c);
                }
                let CellTape {
                    x,
                    h_prev,
                    c_prev,
                    gates,
                    tanh_c,
                    h,
                    c,
                } = &mut tape;
                self.layer_unchecked(l)
                    .forward(x, h_prev, c_prev, gates, c, tanh_c, h);
                row.push(tape);
            }
            self.classify_into(&row[depth - 1].h, &mut logits, &mut ys[t]);
            total += mse_loss(&ys[t], labels[t]);
            tapes.push(row);
        }

        let layers = self.layers.clone();
        let (w_yh_id, b_y_id) = (self.w_yh, self.b_y);
        let (values, grads) = self.store.split_mut();
        let scale = 1.0 / steps as f64;

        let mut dy = vec![0.0; l_out];
        let mut dz = vec![0.0; l_out];
        let mut dh_carry = vec![vec![0.0; m]; depth];
        let mut dc_carry = vec![vec![0.0; m]; depth];
        let mut dh_above = vec![0.0; m];
        let mut dh = vec![0.0; m];
        let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; m]);
        let mut dx = vec![0.0; m.max(d.input_len)];

        for t in (0..steps).rev() {
            let top = &tapes[t][depth - 1];
            mse_loss_grad(&ys[t], labels[t], scale, &mut dy);
            softmax_backward(&ys[t], &dy, &mut dz);
            outer_acc(&mut grads[w_yh_id.index()], &dz, &top.h);
            add_acc(&mut grads[b_y_id.index()], &dz);
            dh_above.fill(0.0);
            matvec_t_acc(&values[w_yh_id.index()], &dz, &mut dh_above);

            for l in (0..depth).rev() {
                let tape = &tapes[t][l];
                let ids = &layers[l];
                let [f, i, g, o] = &tape.gates;
                for (dh_j, (a, b)) in dh.iter_mut().zip(dh_above.iter().zip(&dh_carry[l])) {
                    *dh_j = a + b;
                }
                for j in 0..m {
                    let tc = tape.tanh_c[j];
                    let d_o = dh[j] * tc;
                    let dc = dh[j] * o[j] * (1.0 - tc * tc) + dc_carry[l][j];
                    let d_f = dc * tape.c_prev[j];
                    let d_i = dc * g[j];
                    let d_g = dc * i[j];
                    dc_carry[l][j] = dc * f[j];
                    da[FORGET][j] = d_f * f[j] * (1.0 - f[j]);
                    da[INPUT][j] = d_i * i[j] * (1.0 - i[j]);
                    da[CANDIDATE][j] = d_g * (1.0 - g[j] * g[j]);
                    da[OUTPUT][j] = d_o * o[j] * (1.0 - o[j]);
                }
                let n_in = tape.x.len();
                let dx = &mut dx[..n_in];
                dx.fill(0.0);
                dh_carry[l].fill(0.0);
                for q in 0..4 {
                    outer_acc(&mut grads[ids.w_s[q].index()], &da[q], &tape.x);
                    outer_acc(&mut grads[ids.w_h[q].index()], &da[q], &tape.h_prev);
                    add_acc(&mut grads[ids.b[q].index()], &da[q]);
                    matvec_t_acc(&values[ids.w_h[q].index()], &da[q], &mut dh_carry[l]);
                    if l > 0 {
                        matvec_t_acc(&values[ids.w_s[q].index()], &da[q], dx);
                    }
                }
                if l > 0 {
                    dh_above.copy_from_slice(dx);
                }
            }
        }
        total * scale
    }
}

/// Initializes a `depth`-layer stack from `rng`, then trains with the same
/// generator driving the sequence shuffle.
pub fn train<R: Rng + ?Sized>(
    series: &SensedSeries,
    window: &WindowConfig,
    depth: usize,
    hidden: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Trained<LstmStackParams>> {
    window.validate("window.")?;
    let params = LstmStackParams::random(LstmDims::for_window(depth, hidden, window), rng)?;
    model::train(params, series, window, config, rng)
}
