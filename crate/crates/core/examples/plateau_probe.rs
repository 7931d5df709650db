// Probe: trainer recipe quality (train floor, test-accuracy distribution)
// and the shape of the median/mean accuracy curves over the g_norm grid on
// an ideal array. Args: [n_solutions] [epochs] [lr] [split_seed].

use crossbar_bnn::dataset::{load_wine, normalize, split};
use crossbar_bnn::inference::rms_deviation;
use crossbar_bnn::stats::quartile_stats;
use crossbar_bnn::ternary::TernarySolution;
use crossbar_bnn::trainer::{generate_solutions, TrainConfig};
use std::path::Path;

fn grid() -> Vec<f64> {
    (0..=110).map(|k| 1.0 + 0.1 * k as f64).collect()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(300);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(500);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let split_seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(7);

    let t0 = std::time::Instant::now();
    let raw = load_wine(Path::new("data/wine.data")).unwrap();
    let ds = normalize(&raw);
    let (train, test) = split(&ds, split_seed).unwrap();
    let cfg = TrainConfig {
        epochs,
        learning_rate: lr,
        ..TrainConfig::default()
    };
    let sols = match generate_solutions(n, 1, &train, &cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("TRAINING FAILED: {e}");
            return;
        }
    };
    eprintln!("trained {n} in {:?}", t0.elapsed());

    let mut train_accs: Vec<f64> = Vec::new();
    let mut test_accs: Vec<f64> = Vec::new();
    for s in &sols {
        train_accs.push(s.accuracy(&train).unwrap());
        test_accs.push(s.accuracy(&test).unwrap());
    }
    let min_train = train_accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let frac_test_95 = test_accs.iter().filter(|&&a| a >= 0.95).count() as f64 / n as f64;
    eprintln!(
        "split_seed={split_seed} epochs={epochs} lr={lr}: min_train={:.4} frac_test>=0.95={:.3} test_q={:?}",
        min_train,
        frac_test_95,
        quartile_stats(&test_accs).unwrap()
    );

    if args.get(5).map(|s| s == "curves").unwrap_or(false) {
        curves(&sols, &train);
    }
    eprintln!("total {:?}", t0.elapsed());
}

fn eval_acc(s: &TernarySolution, scale: f64, train: &crossbar_bnn::dataset::Dataset) -> f64 {
    let mut w1 = s.w1_real();
    let mut w2 = s.w2_real();
    for row in w1.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    for row in w2.iter_mut() {
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    let (b1, b2) = (s.b1_real(), s.b2_real());
    let mut correct = 0usize;
    for (x, &label) in train.features.iter().zip(&train.labels) {
        let fp = crossbar_bnn::ternary::forward_real(&w1, &b1, &w2, &b2, x);
        if crossbar_bnn::ternary::argmax(&fp.logits) == label {
            correct += 1;
        }
    }
    correct as f64 / train.features.len() as f64
}

fn curves(sols: &[TernarySolution], train: &crossbar_bnn::dataset::Dataset) {
    let delta_g: f64 = 9.0 * 0.8;
    let gs = grid();
    let mut med_acc = Vec::new();
    let mut mean_acc = Vec::new();
    let mut med_rms = Vec::new();
    for &g in &gs {
        let scale = delta_g / g;
        let accs: Vec<f64> = sols.iter().map(|s| eval_acc(s, scale, train)).collect();
        let rmss: Vec<f64> = sols
            .iter()
            .map(|s| {
                let mut w1 = s.w1_real();
                let mut w2 = s.w2_real();
                for row in w1.iter_mut() {
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                for row in w2.iter_mut() {
                    for v in row.iter_mut() {
                        *v *= scale;
                    }
                }
                rms_deviation(s, &w1, &w2)
            })
            .collect();
        med_acc.push(quartile_stats(&accs).unwrap().median);
        mean_acc.push(accs.iter().sum::<f64>() / accs.len() as f64);
        med_rms.push(quartile_stats(&rmss).unwrap().median);
    }

    let max_med = med_acc.iter().cloned().fold(0.0f64, f64::max);
    let tied: Vec<f64> = gs
        .iter()
        .zip(&med_acc)
        .filter(|(_, &a)| a == max_med)
        .map(|(&g, _)| g)
        .collect();
    eprintln!("median-acc tie set at max: {:?}", tied);

    // Mean-argmax within the median tie set (the proposed tie-break).
    let mut best = None::<(usize, f64)>;
    for (k, (&a, &m)) in med_acc.iter().zip(&mean_acc).enumerate() {
        if a == max_med {
            match best {
                Some((_, bm)) if bm >= m => {}
                _ => best = Some((k, m)),
            }
        }
    }
    let (k_break, _) = best.unwrap();
    eprintln!(
        "mean-break acc_opt: idx {k_break} g={:.1}",
        gs[k_break]
    );
    let mut rms_opt = 0usize;
    for (k, &r) in med_rms.iter().enumerate() {
        if r < med_rms[rms_opt] {
            rms_opt = k;
        }
    }
    eprintln!("rms_opt: idx {rms_opt} g={:.1}", gs[rms_opt]);
    eprintln!("mean-acc around delta_g:");
    for k in 56..=68 {
        eprintln!(
            "  g={:.1}  mean={:.8}  med={:.6}  rms={:.6}",
            gs[k], mean_acc[k], med_acc[k], med_rms[k]
        );
    }
    // Check mean ties anywhere in the tie set.
    let mut sorted_means: Vec<(usize, f64)> = med_acc
        .iter()
        .zip(&mean_acc)
        .enumerate()
        .filter(|(_, (&a, _))| a == max_med)
        .map(|(k, (_, &m))| (k, m))
        .collect();
    sorted_means.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    eprintln!("top mean values in tie set: {:?}", &sorted_means[..sorted_means.len().min(4)]);
}
