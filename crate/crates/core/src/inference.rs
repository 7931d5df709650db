//! Hardware inference from a measured conductance map, fidelity metrics,
//! and the serial-vs-parallel superposition verification.
//!
//! Inference uses the serial-superposition current model: column currents
//! are predicted as sums of per-device read conductances times the applied
//! row voltages, which is exactly how the measured array was evaluated. The
//! approximation this makes relative to a full network solve is quantified
//! by `superposition_check`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::crossbar::{Crossbar, V_READ};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mapping::{extract_weights, ConductanceMap};
use crate::seed::{child_seed, rng_from};
use crate::solver::{COLS, ROWS};
use crate::stats::{quartile_stats, Quartiles};
use crate::ternary::{argmax, TernarySolution, N_HIDDEN, N_INPUT, N_OUTPUT};

/// Normalized output currents and prediction for one input.
pub fn hw_forward(
    g: &ConductanceMap,
    g_norm: f64,
    b1: &[f64; N_HIDDEN],
    b2: &[f64; N_OUTPUT],
    x: &[f64; N_INPUT],
) -> Result<([f64; N_OUTPUT], usize)> {
    if !(g_norm > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "g_norm must be positive, got {g_norm}"
        )));
    }
    // Layer 1: rows 0..12 driven at x_i * V_READ, column currents for the
    // six differential pairs in columns 0..11.
    let mut currents1 = [0.0f64; 12];
    for (j, c) in currents1.iter_mut().enumerate() {
        let mut sum = 0.0;
        for (i, xi) in x.iter().enumerate() {
            sum += xi * V_READ * g[i][j];
        }
        *c = sum;
    }
    let mut a = [0.0f64; N_HIDDEN];
    for (n, an) in a.iter_mut().enumerate() {
        let z = (currents1[2 * n] - currents1[2 * n + 1]) / (V_READ * g_norm) + b1[n];
        *an = z.tanh();
    }
    // Layer 2: row pair (2n, 2n+1) driven at +-a_n * V_READ, column
    // currents for columns 12..14.
    let mut outputs = [0.0f64; N_OUTPUT];
    for (c, out) in outputs.iter_mut().enumerate() {
        let col = 12 + c;
        let mut sum = 0.0;
        for r in 0..2 * N_HIDDEN {
            let v = if r % 2 == 0 { a[r / 2] } else { -a[r / 2] } * V_READ;
            sum += v * g[r][col];
        }
        *out = sum / (V_READ * g_norm) + b2[c];
    }
    Ok((outputs, argmax(&outputs)))
}

/// Fraction of samples whose hardware prediction matches the label, using
/// the solution's trained biases.
pub fn solution_accuracy(
    g: &ConductanceMap,
    g_norm: f64,
    net: &TernarySolution,
    ds: &Dataset,
) -> Result<f64> {
    if ds.features.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let b1 = net.b1_real();
    let b2 = net.b2_real();
    let mut correct = 0usize;
    for (x, &label) in ds.features.iter().zip(&ds.labels) {
        let (_, pred) = hw_forward(g, g_norm, &b1, &b2, x)?;
        if pred == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / ds.features.len() as f64)
}

/// Weight-fidelity metric: the root-sum-square error of each layer's weight
/// matrix, summed over the two layers. Note this is a sum of two roots, not
/// a pooled RMS: a unit error in each layer scores 2.0, not sqrt(2).
pub fn rms_deviation(
    net: &TernarySolution,
    w1_hw: &[[f64; N_HIDDEN]; N_INPUT],
    w2_hw: &[[f64; N_OUTPUT]; N_HIDDEN],
) -> f64 {
    let mut sq1 = 0.0f64;
    for i in 0..N_INPUT {
        for n in 0..N_HIDDEN {
            let d = net.w1[i][n] as f64 - w1_hw[i][n];
            sq1 += d * d;
        }
    }
    let mut sq2 = 0.0f64;
    for n in 0..N_HIDDEN {
        for c in 0..N_OUTPUT {
            let d = net.w2[n][c] as f64 - w2_hw[n][c];
            sq2 += d * d;
        }
    }
    sq1.sqrt() + sq2.sqrt()
}

/// Evaluation of one solution on one measured map at one g_norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HwEvalResult {
    pub solution_seed: u64,
    pub g_norm_us: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub rms_deviation: f64,
    /// Per-sample normalized output currents (one row per sample, then the
    /// true label), populated only when tracing is requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traces: Option<Vec<([f64; N_OUTPUT], usize)>>,
}

pub fn evaluate_solution(
    g: &ConductanceMap,
    g_norm: f64,
    net: &TernarySolution,
    train: &Dataset,
    test: &Dataset,
    with_traces: bool,
) -> Result<HwEvalResult> {
    let (w1_hw, w2_hw) = extract_weights(g, g_norm)?;
    let traces = if with_traces {
        let b1 = net.b1_real();
        let b2 = net.b2_real();
        let mut rows = Vec::with_capacity(train.features.len() + test.features.len());
        for ds in [train, test] {
            for (x, &label) in ds.features.iter().zip(&ds.labels) {
                let (outputs, _) = hw_forward(g, g_norm, &b1, &b2, x)?;
                rows.push((outputs, label));
            }
        }
        Some(rows)
    } else {
        None
    };
    Ok(HwEvalResult {
        solution_seed: net.seed,
        g_norm_us: g_norm,
        train_accuracy: solution_accuracy(g, g_norm, net, train)?,
        test_accuracy: solution_accuracy(g, g_norm, net, test)?,
        rms_deviation: rms_deviation(net, &w1_hw, &w2_hw),
        traces,
    })
}

/// Per-voltage agreement between parallel vector-matrix multiplication and
/// the serial per-device prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperpositionResult {
    pub voltages: Vec<f64>,
    pub deviation_quartiles: Vec<Quartiles>,
    /// Raw relative deviations, vectors x voltages, row-major by vector.
    pub deviations: Vec<Vec<f64>>,
}

/// Drive random binary input vectors at several voltages and compare the
/// full network solve against the serial superposition prediction built
/// from per-device reads. Returns the distribution of relative RMS
/// deviation (Euclidean over the 15 columns) per voltage.
pub fn superposition_check(
    xbar: &mut Crossbar,
    n_vectors: usize,
    voltages: &[f64],
    seed: u64,
) -> Result<SuperpositionResult> {
    if n_vectors == 0 || voltages.is_empty() {
        return Err(Error::InvalidArgument(
            "superposition check needs vectors and voltages".into(),
        ));
    }
    let mut rng = rng_from(child_seed(seed, "superposition/vectors", 0));
    let mut vectors = Vec::with_capacity(n_vectors);
    while vectors.len() < n_vectors {
        let x: [bool; ROWS] = std::array::from_fn(|_| rng.gen_bool(0.5));
        // An all-zero vector has no serial current to compare against.
        if x.iter().any(|&b| b) {
            vectors.push(x);
        }
    }

    // Serial side: one conductance map, read before any parallel drive.
    let g = xbar.read_all()?;

    let mut deviations = vec![Vec::with_capacity(voltages.len()); n_vectors];
    for (vi, x) in vectors.iter().enumerate() {
        for &v in voltages {
            let mut row_volts = [0.0; ROWS];
            for (rv, &xi) in row_volts.iter_mut().zip(x) {
                if xi {
                    *rv = v;
                }
            }
            let parallel = xbar.measure_column_currents(&row_volts)?;
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for j in 0..COLS {
                let mut serial = 0.0;
                for i in 0..ROWS {
                    if x[i] {
                        serial += g[i][j] * v;
                    }
                }
                let d = parallel[j] - serial;
                num += d * d;
                den += serial * serial;
            }
            if den == 0.0 {
                return Err(Error::Solver(
                    "serial prediction vanished for a nonzero input".into(),
                ));
            }
            deviations[vi].push((num / den).sqrt());
        }
    }

    let mut deviation_quartiles = Vec::with_capacity(voltages.len());
    for (k, _) in voltages.iter().enumerate() {
        let col: Vec<f64> = deviations.iter().map(|row| row[k]).collect();
        deviation_quartiles.push(quartile_stats(&col)?);
    }
    Ok(SuperpositionResult {
        voltages: voltages.to_vec(),
        deviation_quartiles,
        deviations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceParams;
    use crate::mapping::map_weights;
    use crate::solver::ArrayConfig;
    use crate::ternary::FloatBits;

    fn uniform_map(g_on: f64, g_off: f64, net: &TernarySolution) -> ConductanceMap {
        let target = map_weights(net);
        let mut g = [[0.0; COLS]; ROWS];
        for i in 0..ROWS {
            for j in 0..COLS {
                g[i][j] = if target.on[i][j] { g_on } else { g_off };
            }
        }
        g
    }

    fn small_net() -> TernarySolution {
        TernarySolution {
            w1: [[1, -1, 0, 1, 0, -1]; 13],
            b1: [FloatBits::from(0.25); 6],
            w2: [[1, 0, -1]; 6],
            b2: [
                FloatBits::from(0.1),
                FloatBits::from(-0.2),
                FloatBits::from(0.3),
            ],
            seed: 7,
        }
    }

    #[test]
    fn ideal_map_reproduces_software_logits() {
        let net = small_net();
        let (g_on, g_off) = (16.2, 9.0);
        let g = uniform_map(g_on, g_off, &net);
        let x: [f64; 13] = std::array::from_fn(|i| (i as f64) / 13.0);
        let (outputs, pred) = hw_forward(&g, g_on - g_off, &net.b1_real(), &net.b2_real(), &x)
            .unwrap();
        let sw = net.forward(&x);
        for c in 0..N_OUTPUT {
            assert!(
                (outputs[c] - sw.logits[c]).abs() < 1e-9,
                "c={c}: hw {} sw {}",
                outputs[c],
                sw.logits[c]
            );
        }
        assert_eq!(pred, argmax(&sw.logits));
    }

    #[test]
    fn all_off_array_leaves_only_biases() {
        let net = small_net();
        let g = [[9.0; COLS]; ROWS];
        let x = [0.7; 13];
        let (outputs, _) = hw_forward(&g, 7.2, &net.b1_real(), &net.b2_real(), &x).unwrap();
        // Differential pairs cancel exactly: z = b1, a = tanh(b1), and the
        // layer-2 rows also cancel pairwise, so out = b2.
        for c in 0..N_OUTPUT {
            assert_eq!(outputs[c], net.b2_real()[c]);
        }
    }

    #[test]
    fn rms_deviation_formula_is_sum_of_roots() {
        let net = TernarySolution {
            w1: [[0; 6]; 13],
            b1: [FloatBits::from(0.0); 6],
            w2: [[0; 3]; 6],
            b2: [FloatBits::from(0.0); 3],
            seed: 0,
        };
        let mut w1 = [[0.0; 6]; 13];
        let mut w2 = [[0.0; 3]; 6];
        assert_eq!(rms_deviation(&net, &w1, &w2), 0.0);
        w1[4][2] = 1.0;
        assert_eq!(rms_deviation(&net, &w1, &w2), 1.0);
        w2[1][1] = -1.0;
        assert_eq!(rms_deviation(&net, &w1, &w2), 2.0);
    }

    #[test]
    fn rms_deviation_single_layer_multiple_errors_pools_within_layer() {
        let net = TernarySolution {
            w1: [[0; 6]; 13],
            b1: [FloatBits::from(0.0); 6],
            w2: [[0; 3]; 6],
            b2: [FloatBits::from(0.0); 3],
            seed: 0,
        };
        let mut w1 = [[0.0; 6]; 13];
        w1[0][0] = 1.0;
        w1[1][1] = 1.0;
        let w2 = [[0.0; 3]; 6];
        assert!((rms_deviation(&net, &w1, &w2) - 2.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn superposition_is_exact_on_ideal_linear_array() {
        let params = DeviceParams::default().without_variation();
        let mut xbar = Crossbar::new(&params, &ArrayConfig::ideal(), 3).unwrap();
        let result =
            superposition_check(&mut xbar, 20, &[0.1, 0.2, 0.3, 0.4, 0.5], 99).unwrap();
        for q in &result.deviation_quartiles {
            assert_eq!(q.min, 0.0);
            assert_eq!(q.max, 0.0);
        }
    }

    #[test]
    fn superposition_is_exact_for_linear_network_despite_line_resistance() {
        // With bias-independent conductances and no read noise the network
        // is linear, so multi-row drives superpose exactly even through
        // line resistance: the per-device reads already bake the droop in.
        let params = DeviceParams::default().without_variation();
        let mut xbar = Crossbar::new(&params, &ArrayConfig::default(), 3).unwrap();
        let result = superposition_check(&mut xbar, 10, &[0.1, 0.3, 0.5], 99).unwrap();
        for q in &result.deviation_quartiles {
            assert!(q.max < 1e-12, "max {}", q.max);
        }
    }

    #[test]
    fn superposition_deviation_from_read_noise_is_small() {
        let params = DeviceParams::default();
        assert!(params.read_noise_std_ua() > 0.0);
        let mut xbar = Crossbar::new(&params, &ArrayConfig::default(), 3).unwrap();
        let result = superposition_check(&mut xbar, 20, &[0.2], 99).unwrap();
        let q = &result.deviation_quartiles[0];
        assert!(q.median > 0.0);
        assert!(q.median < 0.01, "median {}", q.median);
    }

    #[test]
    fn superposition_deviation_grows_with_bias_dependent_conductance() {
        let mut params = DeviceParams::default().without_variation();
        params.nonlinearity_coeff = 0.1;
        let mut xbar = Crossbar::new(&params, &ArrayConfig::default(), 3).unwrap();
        let result = superposition_check(&mut xbar, 8, &[0.1, 0.5], 99).unwrap();
        let low = result.deviation_quartiles[0].median;
        let high = result.deviation_quartiles[1].median;
        assert!(low > 0.0);
        assert!(high > low, "low {low} high {high}");
        assert!(high < 0.05, "high {high}");
    }

    #[test]
    fn superposition_is_deterministic() {
        let params = DeviceParams::default();
        let run = || {
            let mut xbar = Crossbar::new(&params, &ArrayConfig::default(), 5).unwrap();
            superposition_check(&mut xbar, 10, &[0.1, 0.3], 42)
                .unwrap()
                .deviations
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn evaluate_solution_collects_traces_on_request() {
        use crate::dataset::Dataset;
        let net = small_net();
        let g = uniform_map(16.2, 9.0, &net);
        let ds = Dataset {
            features: vec![[0.5; 13], [0.2; 13]],
            labels: vec![0, 1],
        };
        let r = evaluate_solution(&g, 7.2, &net, &ds, &ds, true).unwrap();
        assert_eq!(r.traces.as_ref().unwrap().len(), 4);
        let r2 = evaluate_solution(&g, 7.2, &net, &ds, &ds, false).unwrap();
        assert!(r2.traces.is_none());
    }
}
