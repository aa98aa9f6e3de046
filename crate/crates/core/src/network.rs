use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::WindowConfig;
use crate::error::{Error, Result};
use crate::lstm::{LstmDims, LstmStackParams, LstmState};
use crate::model::SequenceModel;
use crate::nn::ParamStore;
use crate::rnn::{RnnDims, RnnParams, RnnState};

/// The three detector architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Rnn,
    Lstm1,
    Lstm3,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] =
        [DetectorKind::Rnn, DetectorKind::Lstm1, DetectorKind::Lstm3];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Rnn => "rnn",
            DetectorKind::Lstm1 => "lstm1",
            DetectorKind::Lstm3 => "lstm3",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DetectorKind::Rnn => "Basic RNN",
            DetectorKind::Lstm1 => "Single layer LSTM",
            DetectorKind::Lstm3 => "Three layer LSTM",
        }
    }

    pub fn lstm_depth(self) -> Option<usize> {
        match self {
            DetectorKind::Rnn => None,
            DetectorKind::Lstm1 => Some(1),
            DetectorKind::Lstm3 => Some(3),
        }
    }

    /// Freshly initialized network for this architecture.
    pub fn init<R: Rng + ?Sized>(
        self,
        hidden: usize,
        window: &WindowConfig,
        rng: &mut R,
    ) -> Result<Network> {
        window.validate("window.")?;
        Ok(match self.lstm_depth() {
            None => Network::Rnn(RnnParams::random(RnnDims::for_window(hidden, window), rng)?),
            Some(depth) => Network::Lstm(LstmStackParams::random(
                LstmDims::for_window(depth, hidden, window),
                rng,
            )?),
        })
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(DetectorKind::Rnn),
            "lstm1" => Ok(DetectorKind::Lstm1),
            "lstm3" => Ok(DetectorKind::Lstm3),
            other => Err(Error::invalid(
                "arch",
                format!("unknown detector `{other}` (rnn, lstm1, lstm3)"),
            )),
        }
    }
}

/// A trained or freshly initialized detector network of either family.
#[derive(Debug, Clone)]
pub enum Network {
    Rnn(RnnParams),
    Lstm(LstmStackParams),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetworkState {
    Rnn(RnnState),
    Lstm(LstmState),
}

impl Network {
    pub fn kind(&self) -> Option<DetectorKind> {
        match self {
            Network::Rnn(_) => Some(DetectorKind::Rnn),
            Network::Lstm(p) => match p.dims().depth {
                1 => Some(DetectorKind::Lstm1),
                3 => Some(DetectorKind::Lstm3),
                _ => None,
            },
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Network::Rnn(p) => p.dims().hidden,
            Network::Lstm(p) => p.dims().hidden,
        }
    }

    pub fn window_dims(&self) -> (usize, usize) {
        match self {
            Network::Rnn(p) => (p.dims().input_len, p.dims().compare_len),
            Network::Lstm(p) => (p.dims().input_len, p.dims().compare_len),
        }
    }
}

impl SequenceModel for Network {
    type State = NetworkState;

    fn input_dim(&self) -> usize {
        match self {
            Network::Rnn(p) => p.input_dim(),
            Network::Lstm(p) => p.input_dim(),
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            Network::Rnn(p) => p.output_dim(),
            Network::Lstm(p) => p.output_dim(),
        }
    }

    fn zero_state(&self) -> NetworkState {
        match self {
            Network::Rnn(p) => NetworkState::Rnn(p.zero_state()),
            Network::Lstm(p) => NetworkState::Lstm(p.zero_state()),
        }
    }

    fn step(&self, state: &mut NetworkState, input: &[f64], y: &mut [f64]) {
        match (self, state) {
            (Network::Rnn(p), NetworkState::Rnn(s)) => p.step(s, input, y),
            (Network::Lstm(p), NetworkState::Lstm(s)) => p.step(s, input, y),
            _ => panic!("network state does not match the network family"),
        }
    }

    fn params(&self) -> &ParamStore {
        match self {
            Network::Rnn(p) => p.params(),
            Network::Lstm(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Network::Rnn(p) => p.params_mut(),
            Network::Lstm(p) => p.params_mut(),
        }
    }

    fn accumulate_gradients(&mut self, inputs: &[f64], labels: &[usize]) -> f64 {
        match self {
            Network::Rnn(p) => p.accumulate_gradients(inputs, labels),
            Network::Lstm(p) => p.accumulate_gradients(inputs, labels),
        }
    }
}
