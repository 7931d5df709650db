//! Offline training of ternary-weight solutions.
//!
//! Latent full-precision weights are optimized by plain full-batch SGD on a
//! softmax cross-entropy loss; the forward pass always runs on the
//! sign-threshold quantized weights (+1 above `delta`, -1 below `-delta`,
//! else 0) and gradients pass through the quantizer unchanged
//! (straight-through estimator). The exported solution is the best ternary
//! snapshot seen during training, ranked by train accuracy then loss.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::ternary::{
    argmax, forward_real, FloatBits, TernarySolution, N_HIDDEN, N_INPUT, N_OUTPUT,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Quantization threshold in latent-weight units: latent > delta maps
    /// to +1, latent < -delta to -1, else 0.
    pub quantization_threshold: f64,
    /// Samples per gradient step; values >= the train-set size mean one
    /// full-batch step per epoch.
    pub batch_size: usize,
    /// Decoupled L2 pull on the (real-valued) biases, applied every update
    /// step. Keeps solutions from leaning on large biases, which would make
    /// the classification fragile to overall weight rescaling.
    pub bias_decay: f64,
    pub target_train_accuracy: f64,
    pub max_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1500,
            learning_rate: 0.1,
            quantization_threshold: 0.3,
            batch_size: 148,
            bias_decay: 0.0,
            target_train_accuracy: 0.96,
            max_restarts: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.quantization_threshold > 0.0 && self.quantization_threshold < 1.0) {
            return Err(Error::Config(
                "quantization_threshold must lie in (0, 1)".into(),
            ));
        }
        if !(self.target_train_accuracy > 0.0 && self.target_train_accuracy <= 1.0) {
            return Err(Error::Config(
                "target_train_accuracy must lie in (0, 1]".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.bias_decay < 0.0 {
            return Err(Error::Config("bias_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-epoch metrics recorded when tracing is requested by tests.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    /// Cross-entropy on the quantized (ternary) forward pass, one per epoch.
    pub ternary_loss: Vec<f64>,
    /// Cross-entropy on the latent full-precision forward pass.
    pub latent_loss: Vec<f64>,
    /// Train accuracy of the quantized network, one per epoch.
    pub ternary_accuracy: Vec<f64>,
}

struct Latent {
    w1: [[f64; N_HIDDEN]; N_INPUT],
    b1: [f64; N_HIDDEN],
    w2: [[f64; N_OUTPUT]; N_HIDDEN],
    b2: [f64; N_OUTPUT],
}

impl Latent {
    fn init(rng: &mut impl Rng) -> Self {
        let mut l = Latent {
            w1: [[0.0; N_HIDDEN]; N_INPUT],
            b1: [0.0; N_HIDDEN],
            w2: [[0.0; N_OUTPUT]; N_HIDDEN],
            b2: [0.0; N_OUTPUT],
        };
        for i in 0..N_INPUT {
            for n in 0..N_HIDDEN {
                l.w1[i][n] = rng.gen_range(-1.0..1.0);
            }
        }
        for n in 0..N_HIDDEN {
            for c in 0..N_OUTPUT {
                l.w2[n][c] = rng.gen_range(-1.0..1.0);
            }
        }
        l
    }

    fn quantized(&self, delta: f64) -> ([[f64; N_HIDDEN]; N_INPUT], [[f64; N_OUTPUT]; N_HIDDEN]) {
        let mut q1 = [[0.0; N_HIDDEN]; N_INPUT];
        for i in 0..N_INPUT {
            for n in 0..N_HIDDEN {
                q1[i][n] = quantize(self.w1[i][n], delta);
            }
        }
        let mut q2 = [[0.0; N_OUTPUT]; N_HIDDEN];
        for n in 0..N_HIDDEN {
            for c in 0..N_OUTPUT {
                q2[n][c] = quantize(self.w2[n][c], delta);
            }
        }
        (q1, q2)
    }
}

fn quantize(latent: f64, delta: f64) -> f64 {
    if latent > delta {
        1.0
    } else if latent < -delta {
        -1.0
    } else {
        0.0
    }
}

struct Snapshot {
    accuracy: f64,
    loss: f64,
    solution: TernarySolution,
}

/// Train one solution from the given seed. Restarts with a perturbed
/// initialization (derived from the same seed) when the target accuracy is
/// not reached; the exported solution always carries the requested seed.
pub fn train_one(seed: u64, train: &Dataset, cfg: &TrainConfig) -> Result<TernarySolution> {
    cfg.validate()?;
    let mut best_overall: f64 = 0.0;
    for restart in 0..=cfg.max_restarts {
        let snap = train_attempt(seed, restart as u64, train, cfg, None);
        if snap.accuracy >= cfg.target_train_accuracy {
            return Ok(snap.solution);
        }
        best_overall = best_overall.max(snap.accuracy);
    }
    Err(Error::Training {
        seed,
        best_accuracy: best_overall,
        target: cfg.target_train_accuracy,
        restarts: cfg.max_restarts,
    })
}

/// Single optimization run; used by `train_one` and, with tracing, by tests.
pub fn train_attempt_traced(
    seed: u64,
    restart: u64,
    train: &Dataset,
    cfg: &TrainConfig,
    trace: &mut TrainTrace,
) -> TernarySolution {
    train_attempt(seed, restart, train, cfg, Some(trace)).solution
}

fn train_attempt(
    seed: u64,
    restart: u64,
    train: &Dataset,
    cfg: &TrainConfig,
    mut trace: Option<&mut TrainTrace>,
) -> Snapshot {
    let n = train.n_samples();
    let delta = cfg.quantization_threshold;
    let mut rng = seed::rng_from(seed::child_seed(seed, "trainer/init", restart));
    let mut latent = Latent::init(&mut rng);
    let full_batch = cfg.batch_size >= n;
    let mut order: Vec<usize> = (0..n).collect();

    let mut best: Option<Snapshot> = None;
    for _epoch in 0..cfg.epochs {
        let (q1, q2) = latent.quantized(delta);

        // Score the current state before this epoch's update so the stored
        // snapshot's weights and biases always belong together.
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for (x, &y) in train.features.iter().zip(&train.labels) {
            let out = forward_real(&q1, &latent.b1, &q2, &latent.b2, x);
            epoch_loss += -out.probs[y].max(1e-300).ln();
            if argmax(&out.logits) == y {
                correct += 1;
            }
        }
        let acc = correct as f64 / n as f64;
        let loss = epoch_loss / n as f64;
        consider(&mut best, acc, loss, &q1, &latent, &q2, seed, delta);
        if let Some(t) = trace.as_deref_mut() {
            t.ternary_loss.push(loss);
            t.ternary_accuracy.push(acc);
            let mut latent_loss = 0.0;
            for (x, &y) in train.features.iter().zip(&train.labels) {
                let out = forward_real(&latent.w1, &latent.b1, &latent.w2, &latent.b2, x);
                latent_loss += -out.probs[y].max(1e-300).ln();
            }
            t.latent_loss.push(latent_loss / n as f64);
        }

        if !full_batch {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
        }
        let mut start = 0;
        while start < n {
            let end = (start + cfg.batch_size).min(n);
            let batch = &order[start..end];
            let scale = 1.0 / batch.len() as f64;
            let (bq1, bq2) = if start == 0 {
                (q1, q2)
            } else {
                latent.quantized(delta)
            };

            let mut gw1 = [[0.0; N_HIDDEN]; N_INPUT];
            let mut gb1 = [0.0; N_HIDDEN];
            let mut gw2 = [[0.0; N_OUTPUT]; N_HIDDEN];
            let mut gb2 = [0.0; N_OUTPUT];
            for &s in batch {
                let x = &train.features[s];
                let y = train.labels[s];
                let out = forward_real(&bq1, &latent.b1, &bq2, &latent.b2, x);
                let mut dlogit = out.probs;
                dlogit[y] -= 1.0;
                let mut dz = [0.0; N_HIDDEN];
                for m in 0..N_HIDDEN {
                    let mut da = 0.0;
                    for c in 0..N_OUTPUT {
                        da += bq2[m][c] * dlogit[c];
                        gw2[m][c] += out.a[m] * dlogit[c];
                    }
                    dz[m] = da * (1.0 - out.a[m] * out.a[m]);
                }
                for c in 0..N_OUTPUT {
                    gb2[c] += dlogit[c];
                }
                for i in 0..N_INPUT {
                    for m in 0..N_HIDDEN {
                        gw1[i][m] += x[i] * dz[m];
                    }
                }
                for m in 0..N_HIDDEN {
                    gb1[m] += dz[m];
                }
            }

            let lr = cfg.learning_rate * scale;
            for i in 0..N_INPUT {
                for m in 0..N_HIDDEN {
                    latent.w1[i][m] = (latent.w1[i][m] - lr * gw1[i][m]).clamp(-1.0, 1.0);
                }
            }
            let decay = cfg.learning_rate * cfg.bias_decay;
            for m in 0..N_HIDDEN {
                latent.b1[m] -= lr * gb1[m] + decay * latent.b1[m];
                for c in 0..N_OUTPUT {
                    latent.w2[m][c] = (latent.w2[m][c] - lr * gw2[m][c]).clamp(-1.0, 1.0);
                }
            }
            for c in 0..N_OUTPUT {
                latent.b2[c] -= lr * gb2[c] + decay * latent.b2[c];
            }
            start = end;
        }
    }

    // The loop scores the state *before* each update; score the final state.
    let (q1, q2) = latent.quantized(delta);
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (x, &y) in train.features.iter().zip(&train.labels) {
        let out = forward_real(&q1, &latent.b1, &q2, &latent.b2, x);
        loss += -out.probs[y].max(1e-300).ln();
        if argmax(&out.logits) == y {
            correct += 1;
        }
    }
    consider(
        &mut best,
        correct as f64 / n as f64,
        loss / n as f64,
        &q1,
        &latent,
        &q2,
        seed,
        delta,
    );
    best.expect("epochs >= 1 guarantees at least one snapshot")
}

#[allow(clippy::too_many_arguments)]
fn consider(
    best: &mut Option<Snapshot>,
    acc: f64,
    loss: f64,
    q1: &[[f64; N_HIDDEN]; N_INPUT],
    latent: &Latent,
    q2: &[[f64; N_OUTPUT]; N_HIDDEN],
    seed: u64,
    _delta: f64,
) {
    let better = match best {
        None => true,
        Some(b) => acc > b.accuracy || (acc == b.accuracy && loss < b.loss),
    };
    if better {
        let mut w1 = [[0i8; N_HIDDEN]; N_INPUT];
        for i in 0..N_INPUT {
            for m in 0..N_HIDDEN {
                w1[i][m] = q1[i][m] as i8;
            }
        }
        let mut w2 = [[0i8; N_OUTPUT]; N_HIDDEN];
        for m in 0..N_HIDDEN {
            for c in 0..N_OUTPUT {
                w2[m][c] = q2[m][c] as i8;
            }
        }
        *best = Some(Snapshot {
            accuracy: acc,
            loss,
            solution: TernarySolution {
                w1,
                b1: latent.b1.map(FloatBits),
                w2,
                b2: latent.b2.map(FloatBits),
                seed,
            },
        });
    }
}

/// Train `n` solutions from seeds `base_seed..base_seed + n`, in parallel,
/// returned in seed order.
pub fn generate_solutions(
    n: usize,
    base_seed: u64,
    train: &Dataset,
    cfg: &TrainConfig,
) -> Result<Vec<TernarySolution>> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    (0..n as u64)
        .into_par_iter()
        .map(|k| train_one(base_seed + k, train, cfg))
        .collect()
}

/// For each solution, the seed of the earliest solution sharing the same
/// (w1, w2) weight pattern, if any. Used to flag duplicates in manifests.
pub fn duplicate_of(solutions: &[TernarySolution]) -> Vec<Option<u64>> {
    use std::collections::HashMap;
    let mut first: HashMap<([[i8; N_HIDDEN]; N_INPUT], [[i8; N_OUTPUT]; N_HIDDEN]), u64> =
        HashMap::new();
    solutions
        .iter()
        .map(|s| {
            let key = (s.w1, s.w2);
            match first.get(&key) {
                Some(&seed) => Some(seed),
                None => {
                    first.insert(key, s.seed);
                    None
                }
            }
        })
        .collect()
}
