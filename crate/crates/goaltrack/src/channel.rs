//! Air-to-ground downlink channel model.
//!
//! The link between the base station and the UAV combines a
//! probabilistic line-of-sight mean path loss with Rayleigh small-scale
//! fading. Path loss enters the SNR as an attenuation:
//!
//! `snr = P_tx * |beta|^2 / (sigma^2 * Lambda)`
//!
//! with `Lambda` the mean path loss in linear scale and `|beta|^2` an
//! exponentially distributed fading power of unit mean, redrawn
//! independently per transmission attempt.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::world::{distance, Position3};
use crate::{Error, Result};

/// Speed of light (m/s).
pub const C_LIGHT_M_S: f64 = 299_792_458.0;

/// Static parameters of the downlink channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Downlink carrier frequency (Hz).
    pub carrier_freq_hz: f64,
    /// BS transmit power (dBm).
    pub tx_power_dbm: f64,
    /// Receiver noise power (dBm).
    pub noise_power_dbm: f64,
    /// Decoding SNR threshold (dB).
    pub snr_threshold_db: f64,
    /// Command payload size (bits).
    pub payload_bits: f64,
    /// Transmission bandwidth (Hz).
    pub bandwidth_hz: f64,
    /// Path loss exponent.
    pub path_loss_exponent: f64,
    /// Excess path loss under line-of-sight (dB).
    pub excess_loss_los_db: f64,
    /// Excess path loss under non-line-of-sight (dB).
    pub excess_loss_nlos_db: f64,
    /// Environment coefficient of the LoS probability curve.
    pub los_c1: f64,
    /// Environment offset of the LoS probability curve (degrees).
    pub los_c2: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 5.0e9,
            tx_power_dbm: 18.0,
            noise_power_dbm: -104.0,
            snr_threshold_db: 5.5,
            payload_bits: 800.0,
            bandwidth_hz: 1.0e6,
            path_loss_exponent: 2.0,
            excess_loss_los_db: 1.0,
            excess_loss_nlos_db: 20.0,
            los_c1: 9.61,
            los_c2: 0.16,
        }
    }
}

impl ChannelParams {
    /// Transmit power in linear scale (mW).
    pub fn tx_power_linear(&self) -> f64 {
        db_to_linear(self.tx_power_dbm)
    }

    /// Noise power in linear scale (mW).
    pub fn noise_power_linear(&self) -> f64 {
        db_to_linear(self.noise_power_dbm)
    }

    /// Decoding threshold in linear scale.
    pub fn snr_threshold_linear(&self) -> f64 {
        db_to_linear(self.snr_threshold_db)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("payload_bits", self.payload_bits),
            ("bandwidth_hz", self.bandwidth_hz),
            ("path_loss_exponent", self.path_loss_exponent),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "channel.{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One realisation of the link at a fixed geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSample {
    /// Instantaneous SNR (linear).
    pub snr_linear: f64,
    /// Fading power `|beta|^2` drawn for this attempt.
    pub fading_power: f64,
    /// LoS probability at this geometry.
    pub p_los: f64,
    /// Transmission delay for the command payload (seconds); infinite when
    /// the SNR is zero.
    pub delay_s: f64,
}

/// Converts decibels to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear ratio to decibels.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Elevation angle of the UAV as seen from the BS, in degrees.
///
/// Defined as `(180/pi) * asin(dz / d)`; errors when the two positions
/// coincide, which leaves the angle undefined.
pub fn elevation_angle_deg(uav: &Position3, bs: &Position3) -> Result<f64> {
    let d = distance(uav, bs);
    if d == 0.0 {
        return Err(Error::UndefinedElevation);
    }
    Ok(((uav.z - bs.z) / d).asin().to_degrees())
}

/// Line-of-sight probability at elevation `theta_deg` (degrees).
///
/// Logistic in the elevation angle; the environment coefficient appears in
/// both the scale and the slope. Clamped to [0, 1] to guard against
/// round-off at the extremes.
pub fn p_los(theta_deg: f64, params: &ChannelParams) -> f64 {
    let c1 = params.los_c1;
    let c2 = params.los_c2;
    (1.0 / (1.0 + c1 * (-c1 * (theta_deg - c2)).exp())).clamp(0.0, 1.0)
}

/// Mean path loss in linear scale at BS-UAV distance `d_ub` (metres).
///
/// Blends the LoS/NLoS excess losses by `p_los` and multiplies by the
/// free-space-style distance factor `(4*pi*d*f/c)^alpha`. Larger values mean
/// a weaker received signal.
pub fn mean_path_loss_linear(d_ub: f64, p_los: f64, params: &ChannelParams) -> f64 {
    let eta = p_los * db_to_linear(params.excess_loss_los_db)
        + (1.0 - p_los) * db_to_linear(params.excess_loss_nlos_db);
    let fsl = (4.0 * std::f64::consts::PI * d_ub * params.carrier_freq_hz / C_LIGHT_M_S)
        .powf(params.path_loss_exponent);
    eta * fsl
}

/// Instantaneous SNR (linear) for a given fading power and mean path loss.
pub fn snr_with_fading(fading_power: f64, path_loss_linear: f64, params: &ChannelParams) -> f64 {
    params.tx_power_linear() * fading_power / (params.noise_power_linear() * path_loss_linear)
}

/// Draws one link realisation at the current geometry.
///
/// Computes the elevation-dependent mean path loss, then draws Rayleigh
/// fading power `|beta|^2 ~ Exp(1)` from `rng`.
pub fn sample_snr<R: Rng + ?Sized>(
    uav: &Position3,
    bs: &Position3,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<LinkSample> {
    let theta = elevation_angle_deg(uav, bs)?;
    let p = p_los(theta, params);
    let lambda = mean_path_loss_linear(distance(uav, bs), p, params);
    let fading_power: f64 = rng.sample(Exp1);
    let snr_linear = snr_with_fading(fading_power, lambda, params);
    let delay_s = tx_delay(snr_linear, params)?;
    Ok(LinkSample {
        snr_linear,
        fading_power,
        p_los: p,
        delay_s,
    })
}

/// Time (seconds) to push the command payload through the link at Shannon
/// rate `B * log2(1 + snr)`.
///
/// Returns infinity at zero SNR (the payload never gets through) and errors
/// on negative SNR, which has no physical meaning.
pub fn tx_delay(snr_linear: f64, params: &ChannelParams) -> Result<f64> {
    if snr_linear < 0.0 {
        return Err(Error::NegativeSnr(snr_linear));
    }
    if snr_linear == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(params.payload_bits / (params.bandwidth_hz * (1.0 + snr_linear).log2()))
}

/// Decode indicator: the command decodes iff the SNR strictly exceeds the
/// threshold.
pub fn decode(snr_linear: f64, params: &ChannelParams) -> bool {
    snr_linear > params.snr_threshold_linear()
}
