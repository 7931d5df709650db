//! Single magnetic tunnel junction model.
//!
//! A junction is a two-state resistive element: the parallel (on) state has
//! conductance `g_on = g_off * (1 + TMR)`, the anti-parallel (off) state has
//! `g_off`. Switching is deterministic threshold crossing: a positive device
//! voltage at or above `v_switch_to_on` switches AP->P, a negative voltage
//! at or below `-v_switch_to_off` switches P->AP. Device-to-device variation
//! enters through normally distributed `g_off`, TMR, and both thresholds.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Population statistics for sampling devices.
///
/// Units: conductances in uS, voltages in V, read noise in nA
/// (the measurement-current noise of a single read), alpha in 1/V^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub g_off_mean: f64,
    pub g_off_std: f64,
    pub tmr_mean: f64,
    pub tmr_std: f64,
    pub vsw_mean: f64,
    pub vsw_std: f64,
    pub read_noise_std_na: f64,
    /// Conductance bias dependence g(v) = g0 / (1 + alpha * v^2);
    /// 0 means exactly linear devices.
    pub nonlinearity_coeff: f64,
}

impl Default for DeviceParams {
    /// 30 nm-class defaults; per-size values live in the shipped config.
    fn default() -> Self {
        DeviceParams {
            g_off_mean: 9.0,
            g_off_std: 0.95,
            tmr_mean: 0.8,
            tmr_std: 0.12,
            vsw_mean: 2.2,
            vsw_std: 0.05,
            read_noise_std_na: 10.0,
            nonlinearity_coeff: 0.0,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        if self.g_off_mean <= 0.0 {
            return Err(Error::Config("g_off_mean must be > 0".into()));
        }
        if self.tmr_mean <= 0.0 {
            return Err(Error::Config("tmr_mean must be > 0".into()));
        }
        if self.vsw_mean <= 0.0 {
            return Err(Error::Config("vsw_mean must be > 0".into()));
        }
        for (name, v) in [
            ("g_off_std", self.g_off_std),
            ("tmr_std", self.tmr_std),
            ("vsw_std", self.vsw_std),
            ("read_noise_std_na", self.read_noise_std_na),
            ("nonlinearity_coeff", self.nonlinearity_coeff),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    /// A copy with every stochastic width zeroed (used by the ideal branch
    /// of the variation study).
    pub fn without_variation(&self) -> Self {
        DeviceParams {
            g_off_std: 0.0,
            tmr_std: 0.0,
            vsw_std: 0.0,
            read_noise_std_na: 0.0,
            ..*self
        }
    }

    /// Read-noise standard deviation in uA (the solver's current unit).
    pub fn read_noise_std_ua(&self) -> f64 {
        self.read_noise_std_na * 1e-3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MtjState {
    /// High-conductance on-state.
    Parallel,
    /// Low-conductance off-state.
    AntiParallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtjDevice {
    pub g_off: f64,
    pub g_on: f64,
    pub state: MtjState,
    /// Positive voltage at or above this switches AP -> P.
    pub v_switch_to_on: f64,
    /// Voltage at or below the negative of this switches P -> AP.
    pub v_switch_to_off: f64,
    /// Shared nonlinearity coefficient, copied from `DeviceParams`.
    pub alpha: f64,
}

fn truncated_normal(rng: &mut impl Rng, mean: f64, std: f64, floor: f64) -> f64 {
    if std == 0.0 {
        return mean.max(floor);
    }
    let draw = Normal::new(mean, std).expect("std checked >= 0").sample(rng);
    draw.max(floor)
}

/// Draw one device from the population. Initial state is AntiParallel.
pub fn sample_device(params: &DeviceParams, rng: &mut impl Rng) -> MtjDevice {
    let g_off = truncated_normal(rng, params.g_off_mean, params.g_off_std, 0.1 * params.g_off_mean);
    let tmr = truncated_normal(rng, params.tmr_mean, params.tmr_std, 0.05);
    let v_on = truncated_normal(rng, params.vsw_mean, params.vsw_std, 0.3 * params.vsw_mean);
    let v_off = truncated_normal(rng, params.vsw_mean, params.vsw_std, 0.3 * params.vsw_mean);
    MtjDevice {
        g_off,
        g_on: g_off * (1.0 + tmr),
        state: MtjState::AntiParallel,
        v_switch_to_on: v_on,
        v_switch_to_off: v_off,
        alpha: params.nonlinearity_coeff,
    }
}

impl MtjDevice {
    /// Conductance at the given bias voltage, in uS.
    pub fn conductance(&self, v_bias: f64) -> f64 {
        let base = match self.state {
            MtjState::Parallel => self.g_on,
            MtjState::AntiParallel => self.g_off,
        };
        base / (1.0 + self.alpha * v_bias * v_bias)
    }

    /// State-only conductance (bias 0), used by the linear solver path.
    pub fn base_conductance(&self) -> f64 {
        match self.state {
            MtjState::Parallel => self.g_on,
            MtjState::AntiParallel => self.g_off,
        }
    }

    /// Apply a (signed) voltage across the device; returns true when the
    /// state changed.
    pub fn apply_write_voltage(&mut self, v_device: f64) -> bool {
        match self.state {
            MtjState::AntiParallel if v_device >= self.v_switch_to_on => {
                self.state = MtjState::Parallel;
                true
            }
            MtjState::Parallel if v_device <= -self.v_switch_to_off => {
                self.state = MtjState::AntiParallel;
                true
            }
            _ => false,
        }
    }

    pub fn tmr(&self) -> f64 {
        (self.g_on - self.g_off) / self.g_off
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn zero_std_gives_identical_devices() {
        let params = DeviceParams {
            g_off_std: 0.0,
            tmr_std: 0.0,
            vsw_std: 0.0,
            ..DeviceParams::default()
        };
        let mut rng = rng_from(1);
        let a = sample_device(&params, &mut rng);
        let b = sample_device(&params, &mut rng);
        assert_eq!(a, b);
        assert_eq!(a.g_on, a.g_off * (1.0 + params.tmr_mean));
        assert_eq!(a.v_switch_to_on, params.vsw_mean);
    }

    #[test]
    fn population_statistics_match_params() {
        let params = DeviceParams::default();
        let mut rng = rng_from(42);
        let n = 10_000;
        let devices: Vec<MtjDevice> = (0..n).map(|_| sample_device(&params, &mut rng)).collect();
        let mean: f64 = devices.iter().map(|d| d.g_off).sum::<f64>() / n as f64;
        let var: f64 =
            devices.iter().map(|d| (d.g_off - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let tol = 3.0 * params.g_off_std / (n as f64).sqrt();
        assert!(
            (mean - params.g_off_mean).abs() < tol,
            "g_off mean {mean} vs {}",
            params.g_off_mean
        );
        assert!((var.sqrt() - params.g_off_std).abs() < 0.1 * params.g_off_std);

        let tmr_mean: f64 = devices.iter().map(|d| d.tmr()).sum::<f64>() / n as f64;
        assert!((tmr_mean - params.tmr_mean).abs() < 3.0 * params.tmr_std / (n as f64).sqrt());

        for d in &devices {
            assert!(d.g_on > d.g_off && d.g_off > 0.0);
            assert!(d.v_switch_to_on > 0.0 && d.v_switch_to_off > 0.0);
            assert_eq!(d.state, MtjState::AntiParallel);
        }
    }

    #[test]
    fn truncation_floors_hold_under_huge_std() {
        let params = DeviceParams {
            g_off_std: 50.0,
            tmr_std: 10.0,
            vsw_std: 20.0,
            ..DeviceParams::default()
        };
        let mut rng = rng_from(7);
        for _ in 0..2000 {
            let d = sample_device(&params, &mut rng);
            assert!(d.g_off >= 0.1 * params.g_off_mean);
            // tmr() is reconstructed from g_on/g_off, so allow rounding slack
            // at the clamp floor.
            assert!(d.tmr() >= 0.05 - 1e-12);
            assert!(d.v_switch_to_on >= 0.3 * params.vsw_mean);
            assert!(d.v_switch_to_off >= 0.3 * params.vsw_mean);
        }
    }

    #[test]
    fn switching_state_machine() {
        let mut d = MtjDevice {
            g_off: 9.0,
            g_on: 18.0,
            state: MtjState::AntiParallel,
            v_switch_to_on: 1.5,
            v_switch_to_off: 1.5,
            alpha: 0.0,
        };
        assert!(!d.apply_write_voltage(1.4));
        assert!(!d.apply_write_voltage(-2.0)); // already off-direction
        assert!(d.apply_write_voltage(1.6));
        assert_eq!(d.state, MtjState::Parallel);
        assert!(!d.apply_write_voltage(1.6)); // idempotent same polarity
        assert!(!d.apply_write_voltage(-1.4)); // sub-threshold
        assert!(d.apply_write_voltage(-1.5)); // threshold inclusive
        assert_eq!(d.state, MtjState::AntiParallel);
    }

    #[test]
    fn conductance_follows_state_and_bias() {
        let mut d = MtjDevice {
            g_off: 10.0,
            g_on: 20.0,
            state: MtjState::AntiParallel,
            v_switch_to_on: 1.5,
            v_switch_to_off: 1.5,
            alpha: 0.0,
        };
        assert_eq!(d.conductance(0.0), 10.0);
        assert_eq!(d.conductance(0.7), 10.0); // linear when alpha = 0
        d.state = MtjState::Parallel;
        assert_eq!(d.conductance(0.3), 20.0);
        d.alpha = 0.1;
        let expect = 20.0 / (1.0 + 0.1 * 0.25);
        assert!((d.conductance(0.5) - expect).abs() < 1e-15);
        assert_eq!(d.tmr(), 1.0);
    }
}
