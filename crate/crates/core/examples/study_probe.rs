// Scratch probe for sweep calibration. Not part of the deliverable.
use std::time::Instant;

use crossbar_bnn::crossbar::VerifyConfig;
use crossbar_bnn::dataset::{load_wine, normalize, split};
use crossbar_bnn::device::DeviceParams;
use crossbar_bnn::mapping::ZeroEncoding;
use crossbar_bnn::solver::ArrayConfig;
use crossbar_bnn::study::{run_sweep, GnormGrid, SweepContext};
use crossbar_bnn::trainer::{generate_solutions, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_solutions: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(50);
    let n_realizations: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let label = args.get(3).cloned().unwrap_or_else(|| "30nm".to_string());

    let raw = load_wine(std::path::Path::new("data/wine.data")).unwrap();
    let ds = normalize(&raw);
    let (train, _test) = split(&ds, 4).unwrap();

    let t0 = Instant::now();
    let cfg = TrainConfig {
        target_train_accuracy: 0.985,
        epochs: 3000,
        max_restarts: 60,
        quantization_threshold: 0.45,
        ..TrainConfig::default()
    };
    let sols = generate_solutions(n_solutions, 1000, &train, &cfg).unwrap();
    println!("trained {} in {:.1?}", sols.len(), t0.elapsed());

    let device = match label.as_str() {
        "30nm" => DeviceParams::default(),
        "40nm" => DeviceParams {
            g_off_mean: 10.0,
            g_off_std: 1.5,
            tmr_mean: 0.75,
            tmr_std: 0.17,
            vsw_mean: 2.35,
            vsw_std: 0.08,
            ..DeviceParams::default()
        },
        "50nm" => DeviceParams {
            g_off_mean: 11.0,
            g_off_std: 2.0,
            tmr_mean: 0.70,
            tmr_std: 0.22,
            vsw_mean: 2.5,
            vsw_std: 0.11,
            ..DeviceParams::default()
        },
        "60nm" => DeviceParams {
            g_off_mean: 12.0,
            g_off_std: 2.6,
            tmr_mean: 0.65,
            tmr_std: 0.30,
            vsw_mean: 2.65,
            vsw_std: 0.15,
            ..DeviceParams::default()
        },
        other => panic!("unknown size {other}"),
    };
    let array = ArrayConfig::default();
    let verify = VerifyConfig::default();
    let ctx = SweepContext {
        label: &label,
        device: &device,
        array: &array,
        verify: &verify,
        zero_encoding: ZeroEncoding::BothOff,
        eval: &train,
    };
    let grid = GnormGrid::default();

    {
        // No-variation branch: ideal array, zero stds.
        let ideal_device = device.without_variation();
        let ideal_array = ArrayConfig::ideal();
        let ideal_ctx = SweepContext {
            label: &label,
            device: &ideal_device,
            array: &ideal_array,
            verify: &verify,
            zero_encoding: ZeroEncoding::BothOff,
            eval: &train,
        };
        let sweep = run_sweep(&sols, &ideal_ctx, &grid, 555).unwrap();
        let med: Vec<f64> = sweep.accuracy_quartiles.iter().map(|q| q.median).collect();
        let max_med = med.iter().cloned().fold(f64::MIN, f64::max);
        let tie: Vec<usize> = (0..med.len()).filter(|&k| med[k] == max_med).collect();
        println!(
            "ideal: acc_opt={:.2} rms_opt={:.2} ratio={:.3} tie=[{:.2}..{:.2}] n={} mean_at_opt={:.5}",
            sweep.g_norm_acc_opt,
            sweep.g_norm_rms_opt,
            sweep.ratio,
            sweep.g_norm_grid[tie[0]],
            sweep.g_norm_grid[*tie.last().unwrap()],
            tie.len(),
            sweep.accuracy_mean[sweep.grid_index_nearest(sweep.g_norm_acc_opt)],
        );
    }

    for r in 0..n_realizations {
        let t1 = Instant::now();
        let sweep = run_sweep(&sols, &ctx, &grid, 9000 + r as u64).unwrap();
        let wstats: Vec<f64> = sweep.write_accuracies();
        let wmed = {
            let mut v = wstats.clone();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let cmed = {
            let mut v = sweep.clear_accuracies();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        println!(
            "r{r}: {:.1?}  acc_opt={:.2} rms_opt={:.2} ratio={:.3} est={:.2} \
             acc@opt={:.4} acc@est={:.4} rms_min={:.3} write_med={:.3} clear_med={:.3} incl={}",
            t1.elapsed(),
            sweep.g_norm_acc_opt,
            sweep.g_norm_rms_opt,
            sweep.ratio,
            sweep.g_norm_estimate,
            sweep.median_accuracy_at_opt(),
            sweep.median_accuracy_at_estimate(),
            sweep.median_rms_min(),
            wmed,
            cmed,
            sweep.n_included,
        );
        if r == 0 {
            // Accuracy medians along the grid, coarsely.
            for k in (0..sweep.g_norm_grid.len()).step_by(5) {
                println!(
                    "    g={:5.2}  acc_med={:.4} acc_mean={:.5} rms_med={:.3}",
                    sweep.g_norm_grid[k],
                    sweep.accuracy_quartiles[k].median,
                    sweep.accuracy_mean[k],
                    sweep.rms_quartiles[k].median
                );
            }
        }
        // Alternative tie-break candidates over the same sweep data.
        let gs = &sweep.g_norm_grid;
        let med: Vec<f64> = sweep.accuracy_quartiles.iter().map(|q| q.median).collect();
        let q75: Vec<f64> = sweep.accuracy_quartiles.iter().map(|q| q.q75).collect();
        let mean = &sweep.accuracy_mean;
        let max_med = med.iter().cloned().fold(f64::MIN, f64::max);
        let tie: Vec<usize> = (0..gs.len()).filter(|&k| med[k] == max_med).collect();
        let left_edge = tie[0];
        let mut q75_pick = tie[0];
        for &k in &tie[1..] {
            if q75[k] > q75[q75_pick]
                || (q75[k] == q75[q75_pick] && mean[k] > mean[q75_pick])
            {
                q75_pick = k;
            }
        }
        let mut mean_pick = tie[0];
        for &k in &tie[1..] {
            if mean[k] > mean[mean_pick] {
                mean_pick = k;
            }
        }
        println!(
            "    tiebreaks: left={:.2} (r={:.3})  q75={:.2} (r={:.3})  mean={:.2} (r={:.3})  tie_n={}",
            gs[left_edge],
            sweep.g_norm_rms_opt / gs[left_edge],
            gs[q75_pick],
            sweep.g_norm_rms_opt / gs[q75_pick],
            gs[mean_pick],
            sweep.g_norm_rms_opt / gs[mean_pick],
            tie.len()
        );
    }
}
