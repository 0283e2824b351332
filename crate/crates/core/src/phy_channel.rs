//! Wireless link model: path loss, Rayleigh block fading, SNR, the
//! finite-blocklength achievable rate and the Bernoulli decoding outcome.
//!
//! Everything here works in linear SI units (W, Hz, m). Decibel values are
//! only accepted at the edges (`path_loss_db`, [`dbm_to_watts`]).

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Carrier frequency embedded in the indoor-factory path-loss model.
pub const CARRIER_GHZ: f64 = 2.625;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhyError {
    #[error("distance must be positive and finite, got {0}")]
    Distance(f64),
    #[error("erfc_inv argument must lie in (0, 2), got {0}")]
    ErfcInvDomain(f64),
    #[error("snr must be positive and finite, got {0}")]
    Snr(f64),
    #[error("blocklength must be >= 1, got {0}")]
    Blocklength(f64),
    #[error("decoding error probability must lie in (0, 0.5], got {0}")]
    Epsilon(f64),
    #[error("invalid link parameter `{name}`: {value}")]
    Link { name: &'static str, value: f64 },
}

/// Static parameters of one sensor-to-controller link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Noise power spectral density N0 in W/Hz.
    pub noise_psd: f64,
    /// Bandwidth W in Hz.
    pub bandwidth: f64,
    /// Sensor to controller distance in meters.
    pub distance: f64,
    /// Per-sensor power budget in W.
    pub p_max: f64,
    /// Target decoding error probability.
    pub epsilon: f64,
}

impl LinkParams {
    /// Factory defaults: -174 dBm/Hz, 1 MHz, 15 m, 0 dBm.
    pub fn factory_default(epsilon: f64) -> Self {
        Self {
            noise_psd: dbm_to_watts(-174.0),
            bandwidth: 1e6,
            distance: 15.0,
            p_max: dbm_to_watts(0.0),
            epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), PhyError> {
        let positive = |name, value: f64| {
            if value.is_finite() && value > 0.0 {
                Ok(())
            } else {
                Err(PhyError::Link { name, value })
            }
        };
        positive("noise_psd", self.noise_psd)?;
        positive("bandwidth", self.bandwidth)?;
        positive("distance", self.distance)?;
        positive("p_max", self.p_max)?;
        check_epsilon(self.epsilon)
    }

    /// Noise power N0 * W in W.
    pub fn noise_power(&self) -> f64 {
        self.noise_psd * self.bandwidth
    }

    pub fn path_loss_db(&self) -> Result<f64, PhyError> {
        path_loss_db(self.distance)
    }

    /// SNR at transmit power `power` over a channel with linear gain `gain`.
    pub fn snr(&self, power: f64, gain: f64) -> f64 {
        power * gain / self.noise_power()
    }
}

/// One block-fading realisation for the scheduled sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelDraw {
    pub gain: f64,
    pub snr_at_pmax: f64,
    pub decode_success: bool,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * (watts / 1e-3).log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Indoor factory path loss `33 log10(x) + 20 log10(2.625) + 32` in dB.
pub fn path_loss_db(distance_m: f64) -> Result<f64, PhyError> {
    if !(distance_m.is_finite() && distance_m > 0.0) {
        return Err(PhyError::Distance(distance_m));
    }
    Ok(33.0 * distance_m.log10() + 20.0 * CARRIER_GHZ.log10() + 32.0)
}

/// Channel power gain: path gain times a unit-mean exponential fading draw.
pub fn sample_channel_gain<R: Rng + ?Sized>(rng: &mut R, pl_db: f64) -> f64 {
    let fading: f64 = Exp1.sample(rng);
    channel_gain_from_fading(pl_db, fading)
}

pub fn channel_gain_from_fading(pl_db: f64, fading: f64) -> f64 {
    10f64.powf(-pl_db / 10.0) * fading
}

/// Draws the Bernoulli(1 - epsilon) decoding outcome.
pub fn sample_decode<R: Rng + ?Sized>(rng: &mut R, epsilon: f64) -> bool {
    rng.gen::<f64>() >= epsilon
}

pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Inverse complementary error function on (0, 2).
///
/// A rational initial guess (single precision) is polished by Halley steps
/// on `erfc`; below 1e-10 Newton runs on `ln erfc` instead, which keeps full
/// relative accuracy down to the subnormal range.
pub fn erfc_inv(y: f64) -> Result<f64, PhyError> {
    if !(y > 0.0 && y < 2.0) {
        return Err(PhyError::ErfcInvDomain(y));
    }
    if y == 1.0 {
        return Ok(0.0);
    }
    if y > 1.0 {
        return Ok(-erfc_inv_lower(2.0 - y));
    }
    Ok(erfc_inv_lower(y))
}

// y in (0, 1], result >= 0
fn erfc_inv_lower(y: f64) -> f64 {
    if y < 1e-10 {
        return erfc_inv_deep_tail(y);
    }
    let mut z = initial_guess(y);
    for _ in 0..64 {
        let f = erfc(z) - y;
        let df = -2.0 / PI.sqrt() * (-z * z).exp();
        if df == 0.0 {
            break;
        }
        let newton = f / df;
        let step = newton / (1.0 + z * newton);
        z -= step;
        if step.abs() <= 1e-16 * z.abs().max(1e-300) {
            break;
        }
    }
    z
}

// Newton on ln erfc(z) = ln y, which stays well scaled where erfc and its
// derivative are both tiny.
fn erfc_inv_deep_tail(y: f64) -> f64 {
    let target = y.ln();
    let mut z = (-target).sqrt();
    for _ in 0..100 {
        let ln_erfc = erfc(z).ln();
        // d/dz ln erfc(z) = -(2/sqrt(pi)) e^{-z^2} / erfc(z)
        let slope = -2.0 / PI.sqrt() * (-z * z - ln_erfc).exp();
        let step = (ln_erfc - target) / slope;
        z -= step;
        if step.abs() <= 1e-16 * z {
            break;
        }
    }
    z
}

// Giles' approximation to erfinv(1 - y), written in terms of y so that
// w = -ln(y (2 - y)) does not cancel for small y.
fn initial_guess(y: f64) -> f64 {
    let w = -(y * (2.0 - y)).ln();
    let x = 1.0 - y;
    if w < 5.0 {
        let w = w - 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        p = 1.501_409_41 + p * w;
        p * x
    } else {
        let w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        p = 2.832_976_82 + p * w;
        // the single precision polynomial saturates far in the tail; Halley
        // iterations recover from any reasonable start
        (p * x).max(0.0)
    }
}

fn check_epsilon(epsilon: f64) -> Result<(), PhyError> {
    if epsilon > 0.0 && epsilon <= 0.5 {
        Ok(())
    } else {
        Err(PhyError::Epsilon(epsilon))
    }
}

/// Finite-blocklength achievable rate in bits per channel use.
///
/// The blocklength is real-valued so the relaxed problem can use it. The
/// result may be negative; callers decide what that means.
pub fn fb_rate(snr: f64, blocklength: f64, epsilon: f64) -> Result<f64, PhyError> {
    RateModel::new(epsilon)?.rate_checked(snr, blocklength)
}

/// Finite-blocklength rate with `erfc_inv(2 epsilon)` cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    epsilon: f64,
    /// erfc_inv(2 epsilon)
    dispersion_coef: f64,
}

impl RateModel {
    pub fn new(epsilon: f64) -> Result<Self, PhyError> {
        check_epsilon(epsilon)?;
        Ok(Self {
            epsilon,
            dispersion_coef: erfc_inv(2.0 * epsilon)?,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dispersion_coef(&self) -> f64 {
        self.dispersion_coef
    }

    pub fn rate_checked(&self, snr: f64, blocklength: f64) -> Result<f64, PhyError> {
        if !(snr.is_finite() && snr > 0.0) {
            return Err(PhyError::Snr(snr));
        }
        if !(blocklength >= 1.0) {
            return Err(PhyError::Blocklength(blocklength));
        }
        Ok(self.rate(snr, blocklength))
    }

    /// Unchecked rate; `snr == 0` gives exactly 0.
    #[inline]
    pub fn rate(&self, snr: f64, blocklength: f64) -> f64 {
        let shannon = snr.ln_1p() / LN_2;
        if self.dispersion_coef == 0.0 {
            return shannon;
        }
        let dispersion = (2.0 * snr * (snr + 2.0)).sqrt() * self.dispersion_coef
            / (blocklength.sqrt() * (1.0 + snr) * LN_2);
        shannon - dispersion
    }

    /// Bits deliverable with `blocklength` channel uses at `snr`.
    #[inline]
    pub fn payload_capacity(&self, snr: f64, blocklength: f64) -> f64 {
        blocklength * self.rate(snr, blocklength)
    }
}
