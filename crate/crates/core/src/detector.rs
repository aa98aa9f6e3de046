//! Turns a trained recurrent network into an attack detector.
//!
//! The sensed bit stream is cut into prediction steps: an input window of
//! `input_len` bits followed by a comparison window of `compare_len` bits. The
//! comparison window is encoded as a label in `0..2^compare_len` and scored
//! against the network's predicted label distribution with a mean-square loss.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel_sim::SensedSeries;
use crate::error::{Error, Result};
use crate::model::SequenceModel;

pub const MAX_COMPARE_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    /// Bits fed to the network per step.
    pub input_len: usize,
    /// Bits predicted per step; the label domain has `2^compare_len` entries.
    pub compare_len: usize,
    /// Slots between consecutive steps.
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            input_len: 4,
            compare_len: 2,
            stride: 2,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if self.input_len == 0 {
            return Err(Error::invalid(format!("{prefix}input_len"), "must be >= 1"));
        }
        if !(1..=MAX_COMPARE_LEN).contains(&self.compare_len) {
            return Err(Error::invalid(
                format!("{prefix}compare_len"),
                format!("must lie in 1..={MAX_COMPARE_LEN}"),
            ));
        }
        if self.stride == 0 {
            return Err(Error::invalid(format!("{prefix}stride"), "must be >= 1"));
        }
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        1 << self.compare_len
    }

    /// Number of prediction steps in a series of `len` slots.
    pub fn num_steps(&self, len: usize) -> usize {
        let span = self.input_len + self.compare_len;
        if len < span {
            0
        } else {
            (len - span) / self.stride + 1
        }
    }
}

/// Big-endian encoding: the first bit is the most significant.
pub fn encode_label(bits: &[u8]) -> Result<usize> {
    if bits.len() > MAX_COMPARE_LEN {
        return Err(Error::invalid(
            "bits",
            format!("window longer than {MAX_COMPARE_LEN}"),
        ));
    }
    bits.iter().try_fold(0usize, |acc, &b| match b {
        0 | 1 => Ok((acc << 1) | usize::from(b)),
        other => Err(Error::invalid("bits", format!("non-binary entry {other}"))),
    })
}

pub fn decode_label(label: usize, len: usize) -> Vec<u8> {
    (0..len)
        .rev()
        .map(|shift| ((label >> shift) & 1) as u8)
        .collect()
}

/// Mean-square error between a predicted label distribution and the one-hot
/// encoding of `label`, averaged over the label domain.
pub fn step_loss(y: &[f64], label: usize) -> Result<f64> {
    if label >= y.len() {
        return Err(Error::Domain(format!(
            "label {label} out of range for {} outputs",
            y.len()
        )));
    }
    Ok(mse_loss(y, label))
}

#[inline]
pub(crate) fn mse_loss(y: &[f64], label: usize) -> f64 {
    let sum: f64 = y
        .iter()
        .enumerate()
        .map(|(i, &p)| if i == label { (1.0 - p).powi(2) } else { p * p })
        .sum();
    sum / y.len() as f64
}

/// Gradient of [`mse_loss`] with respect to `y`, scaled by `scale`.
#[inline]
pub(crate) fn mse_loss_grad(y: &[f64], label: usize, scale: f64, dy: &mut [f64]) {
    let k = 2.0 * scale / y.len() as f64;
    for (i, (d, &p)) in dy.iter_mut().zip(y).enumerate() {
        *d = k * (p - if i == label { 1.0 } else { 0.0 });
    }
}

/// Inputs and targets for every prediction step of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct StepData {
    /// Row-major `steps x input_len` matrix of 0.0/1.0 inputs.
    pub inputs: Vec<f64>,
    pub labels: Vec<usize>,
    /// First slot of each comparison window.
    pub slots: Vec<usize>,
    pub input_len: usize,
}

impl StepData {
    pub fn from_bits(bits: &[u8], config: &WindowConfig) -> Result<Self> {
        config.validate("window.")?;
        let steps = config.num_steps(bits.len());
        if steps == 0 {
            return Err(Error::InsufficientData(format!(
                "{} slots cannot fill one {}+{} slot step",
                bits.len(),
                config.input_len,
                config.compare_len
            )));
        }
        let mut inputs = Vec::with_capacity(steps * config.input_len);
        let mut labels = Vec::with_capacity(steps);
        let mut slots = Vec::with_capacity(steps);
        for k in 0..steps {
            let start = k * config.stride;
            let target = start + config.input_len;
            inputs.extend(bits[start..target].iter().map(|&b| f64::from(b)));
            labels.push(encode_label(&bits[target..target + config.compare_len])?);
            slots.push(target);
        }
        Ok(Self {
            inputs,
            labels,
            slots,
            input_len: config.input_len,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input(&self, step: usize) -> &[f64] {
        &self.inputs[step * self.input_len..(step + 1) * self.input_len]
    }

    /// Steps `range` as an `(inputs, labels)` pair.
    pub fn span(&self, range: std::ops::Range<usize>) -> (&[f64], &[usize]) {
        (
            &self.inputs[range.start * self.input_len..range.end * self.input_len],
            &self.labels[range],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionScore {
    pub step: usize,
    pub slot_index: usize,
    pub loss: f64,
    /// An attack impulse corrupted some slot of the comparison window.
    pub contaminated: bool,
}

pub(crate) fn check_model_fits<M: SequenceModel + ?Sized>(
    model: &M,
    config: &WindowConfig,
) -> Result<()> {
    if model.input_dim() != config.input_len {
        return Err(Error::Dimension {
            context: "network input width vs window input_len",
            expected: config.input_len,
            actual: model.input_dim(),
        });
    }
    if model.output_dim() != config.num_labels() {
        return Err(Error::Dimension {
            context: "network output width vs label domain",
            expected: config.num_labels(),
            actual: model.output_dim(),
        });
    }
    Ok(())
}

/// Runs the network over the whole series, carrying recurrent state from
/// step to step, and scores each prediction.
pub fn score_series<M: SequenceModel + ?Sized>(
    model: &M,
    series: &SensedSeries,
    config: &WindowConfig,
) -> Result<Vec<DetectionScore>> {
    check_model_fits(model, config)?;
    let data = StepData::from_bits(&series.bits, config)?;
    let mut state = model.zero_state();
    let mut y = vec![0.0; model.output_dim()];
    let scores = (0..data.len())
        .map(|step| {
            model.step(&mut state, data.input(step), &mut y);
            let slot = data.slots[step];
            DetectionScore {
                step,
                slot_index: slot,
                loss: mse_loss(&y, data.labels[step]),
                contaminated: (slot..slot + config.compare_len).any(|s| series.corrupted(s)),
            }
        })
        .collect();
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::invalid(
                "threshold",
                format!("must be >= 0, got {value}"),
            ));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `true` marks a step flagged as under attack.
pub fn classify(scores: &[DetectionScore], threshold: Threshold) -> Vec<bool> {
    scores.iter().map(|s| s.loss > threshold.0).collect()
}

pub fn write_scores_csv<W: Write>(scores: &[DetectionScore], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,slot_index,loss,contaminated")?;
    for s in scores {
        writeln!(
            w,
            "{},{},{},{}",
            s.step,
            s.slot_index,
            s.loss,
            u8::from(s.contaminated)
        )?;
    }
    Ok(())
}

/// Parses the output of [`write_scores_csv`].
pub fn parse_scores_csv(text: &str) -> Result<Vec<DetectionScore>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "step,slot_index,loss,contaminated")) => {}
        _ => {
            return Err(Error::invalid(
                "scores line 1",
                "expected header `step,slot_index,loss,contaminated`",
            ))
        }
    }
    let mut scores = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let bad = |why: &str| Error::invalid(format!("scores line {}", i + 1), why.to_string());
        let fields: Vec<&str> = line.split(',').collect();
        let [step, slot, loss, flag] = fields[..] else {
            return Err(bad("expected 4 columns"));
        };
        let loss: f64 = loss.parse().map_err(|_| bad("loss is not a number"))?;
        if !(loss >= 0.0 && loss.is_finite()) {
            return Err(bad("loss must be finite and >= 0"));
        }
        scores.push(DetectionScore {
            step: step.parse().map_err(|_| bad("step is not an integer"))?,
            slot_index: slot
                .parse()
                .map_err(|_| bad("slot_index is not an integer"))?,
            loss,
            contaminated: match flag {
                "0" => false,
                "1" => true,
                _ => return Err(bad("contaminated must be 0 or 1")),
            },
        });
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_encoding_matches_listing_order() {
        assert_eq!(encode_label(&[0, 0]).unwrap(), 0);
        assert_eq!(encode_label(&[0, 1]).unwrap(), 1);
        assert_eq!(encode_label(&[1, 0]).unwrap(), 2);
        assert_eq!(encode_label(&[1, 1]).unwrap(), 3);
        assert_eq!(encode_label(&[1, 0, 1]).unwrap(), 5);
        assert!(encode_label(&[0, 2]).is_err());
    }

    #[test]
    fn label_round_trip_is_exhaustive() {
        for len in 1..=8 {
            for label in 0..(1usize << len) {
                let bits = decode_label(label, len);
                assert_eq!(bits.len(), len);
                assert_eq!(encode_label(&bits).unwrap(), label);
            }
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(step_loss(&[0.0, 0.0, 1.0, 0.0], 2).unwrap(), 0.0);
        assert!((step_loss(&[0.25; 4], 1).unwrap() - 0.1875).abs() < 1e-15);
        assert!((step_loss(&[0.5, 0.5, 0.0, 0.0], 0).unwrap() - 0.125).abs() < 1e-15);
        assert!(step_loss(&[0.25; 4], 4).is_err());
    }

    proptest! {
        #[test]
        fn loss_is_zero_only_on_one_hot(
            raw in prop::collection::vec(0.0f64..1.0, 4),
            label in 0usize..4,
        ) {
            let sum: f64 = raw.iter().sum::<f64>() + 1e-9;
            let y: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let loss = step_loss(&y, label).unwrap();
            prop_assert!(loss > 0.0);
            prop_assert!(loss <= 1.0);
        }

        #[test]
        fn loss_gradient_matches_difference(
            raw in prop::collection::vec(0.01f64..1.0, 4),
            label in 0usize..4,
        ) {
            let mut dy = vec![0.0; 4];
            mse_loss_grad(&raw, label, 1.0, &mut dy);
            for i in 0..4 {
                let mut p = raw.clone();
                let mut m = raw.clone();
                p[i] += 1e-6;
                m[i] -= 1e-6;
                let fd = (mse_loss(&p, label) - mse_loss(&m, label)) / 2e-6;
                prop_assert!((fd - dy[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn step_count_and_layout() {
        let cfg = WindowConfig::default();
        let bits = [0u8, 0, 1, 1, 0, 1, 1, 0, 1];
        assert_eq!(cfg.num_steps(bits.len()), (9 - 6) / 2 + 1);
        let data = StepData::from_bits(&bits, &cfg).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.input(0), &[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(data.labels, vec![0b01, 0b10]);
        assert_eq!(data.slots, vec![4, 6]);
        assert!(StepData::from_bits(&bits[..5], &cfg).is_err());
    }

    #[test]
    fn window_validation() {
        let bad = WindowConfig {
            input_len: 4,
            compare_len: 17,
            stride: 2,
        };
        assert!(bad
            .validate("")
            .unwrap_err()
            .to_string()
            .contains("compare_len"));
        let bad = WindowConfig {
            input_len: 0,
            compare_len: 2,
            stride: 2,
        };
        assert!(bad.validate("").is_err());
        let bad = WindowConfig {
            input_len: 4,
            compare_len: 2,
            stride: 0,
        };
        assert!(bad.validate("").is_err());
    }

    fn score(loss: f64, contaminated: bool) -> DetectionScore {
        DetectionScore {
            step: 0,
            slot_index: 0,
            loss,
            contaminated,
        }
    }

    #[test]
    fn classify_extremes_and_midpoint() {
        let scores: Vec<_> = [0.0, 0.01, 0.02, 0.03, 0.4, 0.45, 0.5]
            .iter()
            .map(|&l| score(l, l > 0.2))
            .collect();
        let all = classify(&scores, Threshold::new(0.0).unwrap());
        assert_eq!(all, vec![false, true, true, true, true, true, true]);
        assert!(classify(&scores, Threshold::new(1.0).unwrap())
            .iter()
            .all(|f| !f));
        // Midpoint between the two clusters separates them exactly.
        let mid = (0.03 + 0.4) / 2.0;
        let flags = classify(&scores, Threshold::new(mid).unwrap());
        assert!(flags.iter().zip(&scores).all(|(f, s)| *f == s.contaminated));
        assert!(Threshold::new(-0.1).is_err());
    }

    #[test]
    fn scores_csv_format() {
        let mut out = Vec::new();
        write_scores_csv(&[score(0.5, true)], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "step,slot_index,loss,contaminated\n0,0,0.5,1\n"
        );
    }

    #[test]
    fn scores_csv_round_trips() {
        let scores = vec![
            DetectionScore {
                step: 0,
                slot_index: 0,
                loss: 0.1 + 0.2,
                contaminated: false,
            },
            DetectionScore {
                step: 1,
                slot_index: 2,
                loss: 1.0 / 3.0,
                contaminated: true,
            },
        ];
        let mut out = Vec::new();
        write_scores_csv(&scores, &mut out).unwrap();
        assert_eq!(
            parse_scores_csv(&String::from_utf8(out).unwrap()).unwrap(),
            scores
        );
        assert!(parse_scores_csv("step,loss\n").is_err());
        let err = parse_scores_csv("step,slot_index,loss,contaminated\n0,0,x,1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_scores_csv("step,slot_index,loss,contaminated\n0,0,0.5,2\n").is_err());
    }
}
