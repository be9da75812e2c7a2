//! OFDMA uplink: free-space-style path loss, Shannon capacity per worker and
//! concurrent-upload round time. Inter-worker interference is ignored.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPEED_OF_LIGHT: f64 = 3e8;

/// How the channel gain enters the SNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainModel {
    /// `P·h²/(B·N₀)`, the gain treated as an amplitude (default).
    Amplitude,
    /// `P·h/(B·N₀)`, the gain treated as a power ratio.
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub noise_dbm_per_hz: f64,
    pub antenna_gain: f64,
    pub carrier_hz: f64,
    pub path_loss_exponent: f64,
    pub gain_model: GainModel,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 2e6,
            tx_power_w: 0.01,
            noise_dbm_per_hz: -174.0,
            antenna_gain: 4.11,
            carrier_hz: 915e6,
            path_loss_exponent: 2.8,
            gain_model: GainModel::Amplitude,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bandwidth_hz", self.bandwidth_hz),
            ("tx_power_w", self.tx_power_w),
            ("antenna_gain", self.antenna_gain),
            ("carrier_hz", self.carrier_hz),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be positive and finite"));
            }
        }
        if !self.noise_dbm_per_hz.is_finite() {
            return Err(Error::config("noise_dbm_per_hz", "must be finite"));
        }
        if !(self.path_loss_exponent >= 0.0 && self.path_loss_exponent.is_finite()) {
            return Err(Error::config("path_loss_exponent", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Noise power spectral density in W/Hz.
    pub fn noise_psd(&self) -> f64 {
        dbm_to_watts(self.noise_dbm_per_hz)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// `A_d · (c / (4π f_c d))^{d_e}`.
pub fn channel_gain(distance_m: f64, cfg: &ChannelConfig) -> f64 {
    cfg.antenna_gain * (SPEED_OF_LIGHT / (4.0 * PI * cfg.carrier_hz * distance_m)).powf(cfg.path_loss_exponent)
}

pub fn snr(distance_m: f64, cfg: &ChannelConfig) -> f64 {
    let h = channel_gain(distance_m, cfg);
    let gain = match cfg.gain_model {
        GainModel::Amplitude => h * h,
        GainModel::Power => h,
    };
    cfg.tx_power_w * gain / (cfg.bandwidth_hz * cfg.noise_psd())
}

/// Shannon rate `B·log₂(1 + SNR)` in bit/s.
pub fn uplink_capacity(distance_m: f64, cfg: &ChannelConfig) -> f64 {
    // ln_1p keeps precision at the tiny SNRs far-away workers see
    cfg.bandwidth_hz * snr(distance_m, cfg).ln_1p() / std::f64::consts::LN_2
}

pub fn transmission_time(bits: u64, distance_m: f64, cfg: &ChannelConfig) -> f64 {
    bits as f64 / uplink_capacity(distance_m, cfg)
}

/// Concurrent uploads: the round lasts as long as the slowest worker.
pub fn round_comm_time(bits: &[u64], distances: &[f64], cfg: &ChannelConfig) -> Result<f64> {
    if bits.len() != distances.len() {
        return Err(Error::DimensionMismatch {
            expected: distances.len(),
            got: bits.len(),
        });
    }
    Ok(bits
        .iter()
        .zip(distances)
        .map(|(&b, &d)| transmission_time(b, d, cfg))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerPlacement {
    pub distances: Vec<f64>,
}

/// Uniform points in a disk of the given radius around the server.
pub fn place_workers_uniform<R: Rng + ?Sized>(workers: usize, radius: f64, rng: &mut R) -> Result<WorkerPlacement> {
    if workers == 0 {
        return Err(Error::contract("need at least one worker"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::contract("radius must be positive"));
    }
    let distances = (0..workers)
        .map(|_| {
            // u in (0, 1] keeps every distance strictly positive
            let u = 1.0 - rng.random::<f64>();
            radius * u.sqrt()
        })
        .collect();
    Ok(WorkerPlacement { distances })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_conversion() {
        let n0 = ChannelConfig::default().noise_psd();
        assert!((n0 / 10f64.powf(-20.4) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_exponent_gives_antenna_gain() {
        let cfg = ChannelConfig {
            path_loss_exponent: 0.0,
            ..ChannelConfig::default()
        };
        assert_eq!(channel_gain(123.0, &cfg), 4.11);
    }

    #[test]
    fn doubling_distance_scales_gain() {
        let cfg = ChannelConfig::default();
        for d in [1.0, 20.0, 333.0] {
            let ratio = channel_gain(2.0 * d, &cfg) / channel_gain(d, &cfg);
            assert!((ratio - 2f64.powf(-2.8)).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_decreases_and_vanishes() {
        let cfg = ChannelConfig::default();
        let mut last = f64::INFINITY;
        for d in [1.0, 5.0, 50.0, 500.0, 5e4, 5e9] {
            let c = uplink_capacity(d, &cfg);
            assert!(c > 0.0 && c < last);
            last = c;
        }
        assert!(last < 1e-40);
    }

    #[test]
    fn round_time_is_slowest_worker() {
        let cfg = ChannelConfig::default();
        let t = round_comm_time(&[100], &[50.0], &cfg).unwrap();
        assert_eq!(t, 100.0 / uplink_capacity(50.0, &cfg));
        let t = round_comm_time(&[100, 100, 100], &[10.0, 80.0, 40.0], &cfg).unwrap();
        assert_eq!(t, transmission_time(100, 80.0, &cfg));
        let halved = round_comm_time(&[50, 50, 50], &[10.0, 80.0, 40.0], &cfg).unwrap();
        assert_eq!(halved, t / 2.0);
        assert!(round_comm_time(&[1], &[1.0, 2.0], &cfg).is_err());
    }
}
