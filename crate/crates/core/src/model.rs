//! Common interface of the recurrent detectors and the shared training loop.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel_sim::SensedSeries;
use crate::detector::{check_model_fits, mse_loss, StepData, WindowConfig};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, ParamStore};

/// A recurrent network mapping bit windows to label distributions.
pub trait SequenceModel: Send + Sync {
    type State: Clone + Send;

    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn zero_state(&self) -> Self::State;

    /// Advances `state` by one input window and writes the predicted label
    /// probabilities into `y`. Dimensions are trusted.
    fn step(&self, state: &mut Self::State, input: &[f64], y: &mut [f64]);

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Runs the sequence from a zero state, adds the gradient of the mean step
    /// loss to the parameter gradients, and returns that mean loss.
    /// `inputs` is row-major `labels.len() x input_dim`.
    fn accumulate_gradients(&mut self, inputs: &[f64], labels: &[usize]) -> f64;

    /// Mean step loss of the sequence from a zero state, forward only.
    fn sequence_loss(&self, inputs: &[f64], labels: &[usize]) -> f64 {
        let mut state = self.zero_state();
        let mut y = vec![0.0; self.output_dim()];
        let total: f64 = inputs
            .chunks_exact(self.input_dim())
            .zip(labels)
            .map(|(x, &label)| {
                self.step(&mut state, x, &mut y);
                mse_loss(&y, label)
            })
            .sum();
        total / labels.len() as f64
    }
}

fn default_epochs() -> usize {
    20
}
fn default_bptt() -> usize {
    50
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_clip() -> f64 {
    5.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Truncated BPTT length in prediction steps.
    #[serde(default = "default_bptt")]
    pub bptt_len: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Global gradient-norm cap per update.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            bptt_len: default_bptt(),
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            grad_clip: default_clip(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let field = |n: &str| format!("{prefix}{n}");
        if self.bptt_len == 0 {
            return Err(Error::invalid(field("bptt_len"), "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(field("learning_rate"), "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::invalid(field("beta1"), "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid(field("beta2"), "must lie in [0, 1)"));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::invalid(field("epsilon"), "must be > 0"));
        }
        if self.grad_clip.is_nan() || self.grad_clip <= 0.0 {
            return Err(Error::invalid(field("grad_clip"), "must be > 0"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trained<M> {
    pub model: M,
    /// Entry 0 is the loss of the initial weights over the training set;
    /// entry `e` is the mean loss seen during epoch `e`.
    pub loss_history: Vec<f64>,
    pub updates: u64,
}

/// Mean loss over all training sequences, forward only.
pub fn dataset_loss<M: SequenceModel>(model: &M, data: &StepData, bptt_len: usize) -> f64 {
    let mut total = 0.0;
    let mut start = 0;
    while start < data.len() {
        let end = (start + bptt_len).min(data.len());
        let (x, y) = data.span(start..end);
        total += model.sequence_loss(x, y) * (end - start) as f64;
        start = end;
    }
    total / data.len() as f64
}

/// Truncated-BPTT training with Adam. Sequences of `bptt_len` steps each
/// start from a zero state; their order is reshuffled every epoch.
pub fn train<M: SequenceModel, R: Rng + ?Sized>(
    mut model: M,
    series: &SensedSeries,
    window: &WindowConfig,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Trained<M>> {
    config.validate("training.")?;
    check_model_fits(&model, window)?;
    let data = StepData::from_bits(&series.bits, window)?;

    let chunks: Vec<(usize, usize)> = (0..data.len())
        .step_by(config.bptt_len)
        .map(|s| (s, (s + config.bptt_len).min(data.len())))
        .collect();
    let mut order: Vec<usize> = (0..chunks.len()).collect();

    let mut history = Vec::with_capacity(config.epochs + 1);
    history.push(dataset_loss(&model, &data, config.bptt_len));

    let mut adam = AdamState::new(model.params(), config.adam());
    model.params_mut().zero_grads();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        let mut epoch_total = 0.0;
        for &c in &order {
            let (start, end) = chunks[c];
            let (x, y) = data.span(start..end);
            let loss = model.accumulate_gradients(x, y);
            epoch_total += loss * (end - start) as f64;
            model.params_mut().clip_grad_norm(config.grad_clip);
            adam_step(model.params_mut(), &mut adam)?;
        }
        history.push(epoch_total / data.len() as f64);
    }
    Ok(Trained {
        model,
        loss_history: history,
        updates: adam.step(),
    })
}
