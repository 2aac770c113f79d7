//! Linear hypotheses and the three loss families.
//!
//! Each loss is the negative conditional log-likelihood of the label given
//! the features, with any additive constant dropped.

use std::fmt;
use std::str::FromStr;

use crate::error::{FedError, Result};

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before taking
/// logarithms in the logistic loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    SquaredError,
    Logistic,
    CrossEntropy { num_classes: usize },
}

impl LossKind {
    pub fn cross_entropy(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(FedError::input(format!(
                "cross entropy needs at least 2 classes, got {num_classes}"
            )));
        }
        Ok(LossKind::CrossEntropy { num_classes })
    }

    /// Length of the parameter vector for features of length `dim`.
    pub fn param_len(&self, dim: usize) -> usize {
        match *self {
            LossKind::CrossEntropy { num_classes } => dim * num_classes,
            _ => dim,
        }
    }

    pub fn validate_label(&self, y: f64) -> Result<()> {
        let ok = match *self {
            LossKind::SquaredError => y.is_finite(),
            LossKind::Logistic => y == 0.0 || y == 1.0,
            LossKind::CrossEntropy { num_classes } => {
                y >= 0.0 && y.fract() == 0.0 && (y as usize) < num_classes
            }
        };
        if ok {
            Ok(())
        } else {
            Err(FedError::InvalidLabel {
                label: y,
                loss: self.to_string(),
            })
        }
    }

    /// Whether predictions can be scored as right or wrong.
    pub fn is_classification(&self) -> bool {
        !matches!(self, LossKind::SquaredError)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::SquaredError => write!(f, "squared_error"),
            LossKind::Logistic => write!(f, "logistic"),
            LossKind::CrossEntropy { num_classes } => write!(f, "cross_entropy:{num_classes}"),
        }
    }
}

impl FromStr for LossKind {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "squared_error" => Ok(LossKind::SquaredError),
            "logistic" => Ok(LossKind::Logistic),
            other => match other.strip_prefix("cross_entropy:") {
                Some(k) => {
                    let k = k
                        .parse::<usize>()
                        .map_err(|_| FedError::input(format!("bad class count in `{other}`")))?;
                    LossKind::cross_entropy(k)
                }
                None => Err(FedError::input(format!("unknown loss kind `{other}`"))),
            },
        }
    }
}

/// One labeled example. For cross entropy the label holds a class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Sample { x, y }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    /// Real-valued regression output.
    Value(f64),
    /// Probability of label 1.
    Probability(f64),
    /// Class probabilities.
    Distribution(Vec<f64>),
}

impl Prediction {
    /// Predicted label: threshold 0.5 (ties go to 1) or argmax (ties go to the
    /// lowest class index).
    pub fn label(&self) -> f64 {
        match self {
            Prediction::Value(v) => *v,
            Prediction::Probability(p) => {
                if *p >= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Prediction::Distribution(probs) => argmax(probs) as f64,
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearHypothesis {
    pub theta: Vec<f64>,
}

impl LinearHypothesis {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if let Some(v) = theta.iter().find(|v| !v.is_finite()) {
            return Err(FedError::input(format!("non-finite parameter {v}")));
        }
        Ok(LinearHypothesis { theta })
    }

    pub fn zeros(len: usize) -> Self {
        LinearHypothesis {
            theta: vec![0.0; len],
        }
    }

    pub fn predict(&self, x: &[f64], loss: LossKind) -> Result<Prediction> {
        predict(&self.theta, x, loss)
    }

    pub fn loss(&self, s: &Sample, loss: LossKind) -> Result<f64> {
        sample_loss(&self.theta, s, loss)
    }

    pub fn loss_gradient(&self, s: &Sample, loss: LossKind) -> Result<Vec<f64>> {
        loss_gradient(&self.theta, s, loss)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn class_scores(theta: &[f64], x: &[f64], num_classes: usize) -> Vec<f64> {
    let d = x.len();
    (0..num_classes)
        .map(|c| dot(&theta[c * d..(c + 1) * d], x))
        .collect()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| (s - lse).exp()).collect()
}

fn check_dims(theta: &[f64], x: &[f64], loss: LossKind) -> Result<()> {
    let expected = loss.param_len(x.len());
    if theta.len() != expected {
        return Err(FedError::DimensionMismatch {
            expected,
            got: theta.len(),
        });
    }
    Ok(())
}

pub fn predict(theta: &[f64], x: &[f64], loss: LossKind) -> Result<Prediction> {
    check_dims(theta, x, loss)?;
    Ok(predict_unchecked(theta, x, loss))
}

pub(crate) fn predict_unchecked(theta: &[f64], x: &[f64], loss: LossKind) -> Prediction {
    match loss {
        LossKind::SquaredError => Prediction::Value(dot(theta, x)),
        LossKind::Logistic => Prediction::Probability(sigmoid(dot(theta, x))),
        LossKind::CrossEntropy { num_classes } => {
            Prediction::Distribution(softmax(&class_scores(theta, x, num_classes)))
        }
    }
}

/// Negative log-likelihood of `s` under the hypothesis `theta`.
pub fn sample_loss(theta: &[f64], s: &Sample, loss: LossKind) -> Result<f64> {
    check_dims(theta, &s.x, loss)?;
    loss.validate_label(s.y)?;
    Ok(loss_unchecked(theta, s, loss))
}

pub(crate) fn loss_unchecked(theta: &[f64], s: &Sample, loss: LossKind) -> f64 {
    match loss {
        LossKind::SquaredError => {
            let r = dot(theta, &s.x) - s.y;
            0.5 * r * r
        }
        LossKind::Logistic => {
            let p = sigmoid(dot(theta, &s.x)).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            if s.y == 1.0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        }
        LossKind::CrossEntropy { num_classes } => {
            let scores = class_scores(theta, &s.x, num_classes);
            log_sum_exp(&scores) - scores[s.y as usize]
        }
    }
}

pub fn loss_gradient(theta: &[f64], s: &Sample, loss: LossKind) -> Result<Vec<f64>> {
    check_dims(theta, &s.x, loss)?;
    loss.validate_label(s.y)?;
    let mut out = vec![0.0; theta.len()];
    add_weighted_gradient(theta, s, loss, 1.0, &mut out);
    Ok(out)
}

/// `out += weight * ∇_θ loss(θ; s)`.
pub(crate) fn add_weighted_gradient(
    theta: &[f64],
    s: &Sample,
    loss: LossKind,
    weight: f64,
    out: &mut [f64],
) {
    match loss {
        LossKind::SquaredError => {
            let r = weight * (dot(theta, &s.x) - s.y);
            out.iter_mut().zip(&s.x).for_each(|(o, x)| *o += r * x);
        }
        LossKind::Logistic => {
            let r = weight * (sigmoid(dot(theta, &s.x)) - s.y);
            out.iter_mut().zip(&s.x).for_each(|(o, x)| *o += r * x);
        }
        LossKind::CrossEntropy { num_classes } => {
            let d = s.x.len();
            let probs = softmax(&class_scores(theta, &s.x, num_classes));
            let label = s.y as usize;
            for (c, p) in probs.iter().enumerate() {
                let r = weight * (p - if c == label { 1.0 } else { 0.0 });
                out[c * d..(c + 1) * d]
                    .iter_mut()
                    .zip(&s.x)
                    .for_each(|(o, x)| *o += r * x);
            }
        }
    }
}
