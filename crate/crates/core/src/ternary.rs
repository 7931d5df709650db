//! The 13-6-3 ternary-weight perceptron and its software forward pass.
//!
//! Weights take values in {-1, 0, +1}; biases are real-valued and always
//! live in software. The same forward core (`forward_real`) is reused by the
//! hardware-inference path so that the ideal-array case reduces to the
//! software network bit for bit.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const N_INPUT: usize = 13;
pub const N_HIDDEN: usize = 6;
pub const N_OUTPUT: usize = 3;

/// A trained ternary network. `w1[i][n]` connects input i to hidden n,
/// `w2[n][c]` connects hidden n to output class c.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TernarySolution {
    pub w1: [[i8; N_HIDDEN]; N_INPUT],
    pub b1: [FloatBits; N_HIDDEN],
    pub w2: [[i8; N_OUTPUT]; N_HIDDEN],
    pub b2: [FloatBits; N_OUTPUT],
    pub seed: u64,
}

/// f64 wrapper that hashes/compares by bit pattern, so solutions can be
/// deduplicated exactly. Serializes as a plain JSON number.
#[derive(Debug, Clone, Copy, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FloatBits(pub f64);

impl PartialEq for FloatBits {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits()
    }
}
impl Eq for FloatBits {}
impl std::hash::Hash for FloatBits {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}
impl From<f64> for FloatBits {
    fn from(v: f64) -> Self {
        FloatBits(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardPass {
    pub z: [f64; N_HIDDEN],
    pub a: [f64; N_HIDDEN],
    pub logits: [f64; N_OUTPUT],
    pub probs: [f64; N_OUTPUT],
}

/// Forward pass over real-valued weight matrices:
/// z = w1'x + b1, a = tanh(z), logits = w2'a + b2, probs = softmax(logits).
pub fn forward_real(
    w1: &[[f64; N_HIDDEN]; N_INPUT],
    b1: &[f64; N_HIDDEN],
    w2: &[[f64; N_OUTPUT]; N_HIDDEN],
    b2: &[f64; N_OUTPUT],
    x: &[f64; N_INPUT],
) -> ForwardPass {
    let mut z = [0.0; N_HIDDEN];
    for n in 0..N_HIDDEN {
        let mut acc = 0.0;
        for i in 0..N_INPUT {
            acc += w1[i][n] * x[i];
        }
        z[n] = acc + b1[n];
    }
    let mut a = [0.0; N_HIDDEN];
    for n in 0..N_HIDDEN {
        a[n] = z[n].tanh();
    }
    let mut logits = [0.0; N_OUTPUT];
    for c in 0..N_OUTPUT {
        let mut acc = 0.0;
        for n in 0..N_HIDDEN {
            acc += w2[n][c] * a[n];
        }
        logits[c] = acc + b2[c];
    }
    ForwardPass {
        z,
        a,
        logits,
        probs: softmax(&logits),
    }
}

pub fn softmax(logits: &[f64; N_OUTPUT]) -> [f64; N_OUTPUT] {
    let m = logits.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(v));
    let mut e = [0.0; N_OUTPUT];
    let mut sum = 0.0;
    for c in 0..N_OUTPUT {
        e[c] = (logits[c] - m).exp();
        sum += e[c];
    }
    for v in &mut e {
        *v /= sum;
    }
    e
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(values: &[f64; N_OUTPUT]) -> usize {
    let mut best = 0;
    for c in 1..N_OUTPUT {
        if values[c] > values[best] {
            best = c;
        }
    }
    best
}

impl TernarySolution {
    pub fn w1_real(&self) -> [[f64; N_HIDDEN]; N_INPUT] {
        let mut out = [[0.0; N_HIDDEN]; N_INPUT];
        for i in 0..N_INPUT {
            for n in 0..N_HIDDEN {
                out[i][n] = self.w1[i][n] as f64;
            }
        }
        out
    }

    pub fn w2_real(&self) -> [[f64; N_OUTPUT]; N_HIDDEN] {
        let mut out = [[0.0; N_OUTPUT]; N_HIDDEN];
        for n in 0..N_HIDDEN {
            for c in 0..N_OUTPUT {
                out[n][c] = self.w2[n][c] as f64;
            }
        }
        out
    }

    pub fn b1_real(&self) -> [f64; N_HIDDEN] {
        [
            self.b1[0].0, self.b1[1].0, self.b1[2].0,
            self.b1[3].0, self.b1[4].0, self.b1[5].0,
        ]
    }

    pub fn b2_real(&self) -> [f64; N_OUTPUT] {
        [self.b2[0].0, self.b2[1].0, self.b2[2].0]
    }

    pub fn forward(&self, x: &[f64; N_INPUT]) -> ForwardPass {
        forward_real(
            &self.w1_real(),
            &self.b1_real(),
            &self.w2_real(),
            &self.b2_real(),
            x,
        )
    }

    /// Predicted class: argmax over logits, ties to the lowest index.
    pub fn predict(&self, x: &[f64; N_INPUT]) -> usize {
        argmax(&self.forward(x).logits)
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        if ds.n_samples() == 0 {
            return Err(Error::InvalidArgument(
                "accuracy over an empty dataset".into(),
            ));
        }
        let correct = ds
            .features
            .iter()
            .zip(&ds.labels)
            .filter(|(x, &l)| self.predict(x) == l)
            .count();
        Ok(correct as f64 / ds.n_samples() as f64)
    }

    /// True when two solutions share the same (w1, w2) weight pattern.
    pub fn same_weights(&self, other: &Self) -> bool {
        self.w1 == other.w1 && self.w2 == other.w2
    }
}
