//! Basic recurrent detector: `h = tanh(W_hx s + W_hh h_prev + b_h)`,
//! `y = softmax(W_yh h + b_y)`.

use rand::Rng;

use crate::channel_sim::SensedSeries;
use crate::detector::{mse_loss_grad, WindowConfig};
use crate::error::{Error, Result};
use crate::model::{self, SequenceModel, TrainConfig, Trained};
use crate::nn::{
    add_acc, glorot_uniform, matvec_acc, matvec_t_acc, outer_acc, softmax_backward, softmax_into,
    ParamId, ParamStore, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RnnDims {
    pub hidden: usize,
    pub input_len: usize,
    pub compare_len: usize,
}

impl RnnDims {
    pub fn for_window(hidden: usize, window: &WindowConfig) -> Self {
        Self {
            hidden,
            input_len: window.input_len,
            compare_len: window.compare_len,
        }
    }

    pub fn outputs(&self) -> usize {
        1 << self.compare_len
    }

    fn shapes(&self) -> [(&'static str, Vec<usize>); 5] {
        let (m, l_in, l_out) = (self.hidden, self.input_len, self.outputs());
        [
            ("w_hx", vec![m, l_in]),
            ("w_hh", vec![m, m]),
            ("w_yh", vec![l_out, m]),
            ("b_h", vec![m]),
            ("b_y", vec![l_out]),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    w_hx: ParamId,
    w_hh: ParamId,
    w_yh: ParamId,
    b_h: ParamId,
    b_y: ParamId,
}

#[derive(Debug, Clone)]
pub struct RnnParams {
    dims: RnnDims,
    store: ParamStore,
    ids: Ids,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnState {
    pub h: Vec<f64>,
}

impl RnnParams {
    /// Wraps a store holding `w_hx, w_hh, w_yh, b_h, b_y` with matching shapes.
    pub fn from_store(dims: RnnDims, store: ParamStore) -> Result<Self> {
        if dims.hidden == 0 || dims.input_len == 0 || !(1..=16).contains(&dims.compare_len) {
            return Err(Error::invalid(
                "dims",
                format!("unusable RNN dimensions {dims:?}"),
            ));
        }
        if store.len() != 5 {
            return Err(Error::Checkpoint(format!(
                "RNN expects 5 tensors, found {}",
                store.len()
            )));
        }
        let mut ids = Vec::with_capacity(5);
        for (name, shape) in dims.shapes() {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing RNN parameter `{name}`")))?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "`{name}` has shape {:?}, expected {shape:?}",
                    store.value(id).shape()
                )));
            }
            ids.push(id);
        }
        let ids = Ids {
            w_hx: ids[0],
            w_hh: ids[1],
            w_yh: ids[2],
            b_h: ids[3],
            b_y: ids[4],
        };
        Ok(Self { dims, store, ids })
    }

    pub fn zeros(dims: RnnDims) -> Result<Self> {
        let mut store = ParamStore::new();
        for (name, shape) in dims.shapes() {
            store.add(name, Tensor::zeros(&shape))?;
        }
        Self::from_store(dims, store)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(dims: RnnDims, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(dims)?;
        for id in [params.ids.w_hx, params.ids.w_hh, params.ids.w_yh] {
            let shape = params.store.value(id).shape().to_vec();
            *params.store.value_mut(id) = glorot_uniform(shape[0], shape[1], rng);
        }
        Ok(params)
    }

    pub fn dims(&self) -> RnnDims {
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

    /// Hidden update only; `h_out` receives `tanh(W_hx s + W_hh h + b_h)`.
    fn hidden_into(&self, h_prev: &[f64], input: &[f64], h_out: &mut [f64]) {
        let s = &self.store;
        h_out.copy_from_slice(s.value(self.ids.b_h).data());
        matvec_acc(s.value(self.ids.w_hx), input, h_out);
        matvec_acc(s.value(self.ids.w_hh), h_prev, h_out);
        h_out.iter_mut().for_each(|v| *v = v.tanh());
    }

    fn output_into(&self, h: &[f64], logits: &mut [f64], y: &mut [f64]) {
        let s = &self.store;
        logits.copy_from_slice(s.value(self.ids.b_y).data());
        matvec_acc(s.value(self.ids.w_yh), h, logits);
        softmax_into(logits, y);
    }
}

/// One checked step: returns the new state and the label distribution.
pub fn rnn_step(
    params: &RnnParams,
    state: &RnnState,
    input: &[f64],
) -> Result<(RnnState, Vec<f64>)> {
    let d = params.dims;
    if input.len() != d.input_len {
        return Err(Error::Dimension {
            context: "rnn input window",
            expected: d.input_len,
            actual: input.len(),
        });
    }
    if state.h.len() != d.hidden {
        return Err(Error::Dimension {
            context: "rnn hidden state",
            expected: d.hidden,
            actual: state.h.len(),
        });
    }
    let mut next = state.clone();
    let mut y = vec![0.0; d.outputs()];
    params.step(&mut next, input, &mut y);
    Ok((next, y))
}

/// Runs `inputs` in order from `initial`, returning every state and output.
pub fn rnn_forward(
    params: &RnnParams,
    initial: &RnnState,
    inputs: &[Vec<f64>],
) -> Result<(Vec<RnnState>, Vec<Vec<f64>>)> {
    if inputs.is_empty() {
        return Err(Error::InsufficientData(
            "rnn_forward needs at least one input".into(),
        ));
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut state = initial.clone();
    for x in inputs {
        let (next, y) = rnn_step(params, &state, x)?;
        states.push(next.clone());
        outputs.push(y);
        state = next;
    }
    Ok((states, outputs))
}

impl SequenceModel for RnnParams {
    type State = RnnState;

    fn input_dim(&self) -> usize {
        self.dims.input_len
    }

    fn output_dim(&self) -> usize {
        self.dims.outputs()
    }

    fn zero_state(&self) -> RnnState {
        RnnState {
            h: vec![0.0; self.dims.hidden],
        }
    }

    fn step(&self, state: &mut RnnState, input: &[f64], y: &mut [f64]) {
        let mut h = vec![0.0; self.dims.hidden];
        self.hidden_into(&state.h, input, &mut h);
        let mut logits = vec![0.0; y.len()];
        self.output_into(&h, &mut logits, y);
        state.h = h;
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn accumulate_gradients(&mut self, inputs: &[f64], labels: &[usize]) -> f64 {
        let (m, l_in, l_out) = (self.dims.hidden, self.dims.input_len, self.dims.outputs());
        let steps = labels.len();
        // hs[t + 1] is the hidden state after step t; hs[0] is the zero state.
        let mut hs = vec![vec![0.0; m]; steps + 1];
        let mut ys = vec![vec![0.0; l_out]; steps];
        let mut logits = vec![0.0; l_out];
        let mut total = 0.0;
        for t in 0..steps {
            let (before, after) = hs.split_at_mut(t + 1);
            self.hidden_into(&before[t], &inputs[t * l_in..(t + 1) * l_in], &mut after[0]);
            self.output_into(&after[0], &mut logits, &mut ys[t]);
            total += crate::detector::mse_loss(&ys[t], labels[t]);
        }

        let ids = self.ids;
        let (values, grads) = self.store.split_mut();
        let (w_hh, w_yh) = (&values[idx(ids.w_hh)], &values[idx(ids.w_yh)]);
        let scale = 1.0 / steps as f64;
        let mut dy = vec![0.0; l_out];
        let mut dz = vec![0.0; l_out];
        let mut dh = vec![0.0; m];
        let mut dh_next = vec![0.0; m];
        let mut da = vec![0.0; m];
        for t in (0..steps).rev() {
            let h = &hs[t + 1];
            mse_loss_grad(&ys[t], labels[t], scale, &mut dy);
            softmax_backward(&ys[t], &dy, &mut dz);
            outer_acc(&mut grads[idx(ids.w_yh)], &dz, h);
            add_acc(&mut grads[idx(ids.b_y)], &dz);

            dh.copy_from_slice(&dh_next);
            matvec_t_acc(w_yh, &dz, &mut dh);
            for ((a, &d), &hv) in da.iter_mut().zip(&dh).zip(h) {
                *a = d * (1.0 - hv * hv);
            }
            outer_acc(
                &mut grads[idx(ids.w_hx)],
                &da,
                &inputs[t * l_in..(t + 1) * l_in],
            );
            outer_acc(&mut grads[idx(ids.w_hh)], &da, &hs[t]);
            add_acc(&mut grads[idx(ids.b_h)], &da);
            dh_next.fill(0.0);
            matvec_t_acc(w_hh, &da, &mut dh_next);
        }
        total * scale
    }
}

#[inline]
fn idx(id: ParamId) -> usize {
    id.index()
}

/// Initializes from `rng`, then trains with the same generator driving the
/// sequence shuffle.
pub fn train<R: Rng + ?Sized>(
    series: &SensedSeries,
    window: &WindowConfig,
    hidden: usize,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Trained<RnnParams>> {
    window.validate("window.")?;
    let params = RnnParams::random(RnnDims::for_window(hidden, window), rng)?;
    model::train(params, series, window, config, rng)
}
