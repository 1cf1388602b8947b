//! Proactive K-repetition of a command within one TTI.
//!
//! The BS transmits up to `k_max` copies of the command at fixed offsets
//! `(j-1) * rep_period` from the TTI start, without waiting for feedback.
//! An attempt counts iff it both decodes and finishes inside the TTI; the
//! first success terminates the burst (the ACK uplink is ideal).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{decode, sample_snr, ChannelParams, LinkSample};
use crate::world::Position3;
use crate::{Error, Result};

/// Timing parameters of the repetition scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepetitionConfig {
    /// Offset between consecutive repetition attempts (seconds).
    pub rep_period_s: f64,
    /// Hard upper bound on the per-TTI repetition factor.
    pub k_cap: u32,
}

impl Default for RepetitionConfig {
    fn default() -> Self {
        Self {
            rep_period_s: 1e-4,
            k_cap: 10,
        }
    }
}

impl RepetitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rep_period_s.is_finite() && self.rep_period_s >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "repetition.rep_period_s must be non-negative, got {}",
                self.rep_period_s
            )));
        }
        if self.k_cap == 0 {
            return Err(Error::InvalidConfig(
                "repetition.k_cap must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of one TTI worth of repetition attempts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtiOutcome {
    /// Whether any attempt got the command through.
    pub decoded: bool,
    /// Attempts actually transmitted, including the successful one.
    pub attempts_used: u32,
    /// Time from TTI start at which the successful attempt finished.
    pub decode_offset_s: Option<f64>,
}

/// Runs the repetition burst with an injectable per-attempt link draw.
///
/// `draw(j)` supplies the link realisation for attempt `j` (1-based). The
/// attempt succeeds iff it decodes and `(j-1)*rep_period + delay` fits
/// within `tti_len_s`.
pub fn run_tti_with<F>(
    k_max: u32,
    cfg: &RepetitionConfig,
    ch: &ChannelParams,
    tti_len_s: f64,
    mut draw: F,
) -> Result<TtiOutcome>
where
    F: FnMut(u32) -> Result<LinkSample>,
{
    if k_max == 0 || k_max > cfg.k_cap {
        return Err(Error::KMaxOutOfRange {
            got: k_max,
            cap: cfg.k_cap,
        });
    }
    for j in 1..=k_max {
        let sample = draw(j)?;
        let finish = (j - 1) as f64 * cfg.rep_period_s + sample.delay_s;
        if decode(sample.snr_linear, ch) && finish <= tti_len_s {
            return Ok(TtiOutcome {
                decoded: true,
                attempts_used: j,
                decode_offset_s: Some(finish),
            });
        }
    }
    Ok(TtiOutcome {
        decoded: false,
        attempts_used: k_max,
        decode_offset_s: None,
    })
}

/// Runs the repetition burst over the fading channel at fixed geometry,
/// redrawing the fading independently per attempt.
pub fn run_tti_transmission<R: Rng + ?Sized>(
    k_max: u32,
    uav: &Position3,
    bs: &Position3,
    ch: &ChannelParams,
    cfg: &RepetitionConfig,
    tti_len_s: f64,
    rng: &mut R,
) -> Result<TtiOutcome> {
    run_tti_with(k_max, cfg, ch, tti_len_s, |_| sample_snr(uav, bs, ch, rng))
}

/// Success probability of `k` independent attempts with per-attempt success
/// probability `p`: `1 - (1 - p)^k`.
pub fn analytic_success_prob(p: f64, k: u32) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p), "p = {p} outside [0, 1]");
    1.0 - (1.0 - p).powi(k as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{elevation_angle_deg, mean_path_loss_linear, p_los};
    use crate::world::distance;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TTI: f64 = 1e-3;

    fn forced(snr: f64, delay: f64) -> LinkSample {
        LinkSample {
            snr_linear: snr,
            fading_power: 1.0,
            p_los: 1.0,
            delay_s: delay,
        }
    }

    #[test]
    fn analytic_success_prob_hand_case() {
        assert!((analytic_success_prob(0.3, 3) - 0.657).abs() < 1e-12);
        assert_eq!(analytic_success_prob(0.0, 5), 0.0);
        assert_eq!(analytic_success_prob(1.0, 1), 1.0);
    }

    #[test]
    fn k_max_out_of_range_is_rejected() {
        let cfg = RepetitionConfig::default();
        let ch = ChannelParams::default();
        for k in [0, 11] {
            let res = run_tti_with(k, &cfg, &ch, TTI, |_| Ok(forced(1e9, 1e-6)));
            assert!(matches!(res, Err(Error::KMaxOutOfRange { got, cap: 10 }) if got == k));
        }
    }

    #[test]
    fn first_success_terminates_burst() {
        let cfg = RepetitionConfig::default();
        let ch = ChannelParams::default();
        let out = run_tti_with(10, &cfg, &ch, TTI, |_| Ok(forced(1e9, 1e-6))).unwrap();
        assert!(out.decoded);
        assert_eq!(out.attempts_used, 1);
        assert_eq!(out.decode_offset_s, Some(1e-6));
    }

    #[test]
    fn all_attempts_fail_on_dead_channel() {
        let cfg = RepetitionConfig::default();
        let ch = ChannelParams::default();
        let out = run_tti_with(7, &cfg, &ch, TTI, |_| Ok(forced(0.0, f64::INFINITY))).unwrap();
        assert!(!out.decoded);
        assert_eq!(out.attempts_used, 7);
        assert_eq!(out.decode_offset_s, None);
    }

    #[test]
    fn success_on_third_attempt_lands_at_expected_offset() {
        let cfg = RepetitionConfig::default();
        let ch = ChannelParams::default();
        let delay = 3e-5;
        let out = run_tti_with(5, &cfg, &ch, TTI, |j| {
            Ok(if j < 3 {
                forced(0.0, f64::INFINITY)
            } else {
                forced(1e9, delay)
            })
        })
        .unwrap();
        assert!(out.decoded);
        assert_eq!(out.attempts_used, 3);
        let offset = out.decode_offset_s.unwrap();
        assert!((offset - (2.0 * cfg.rep_period_s + delay)).abs() < 1e-15);
        assert!(offset <= TTI);
    }

    #[test]
    fn attempt_that_overruns_tti_does_not_count() {
        let cfg = RepetitionConfig::default();
        let ch = ChannelParams::default();
        // decodes fine, but 9.5e-4 only fits when launched at offset zero
        let slow = forced(1e9, 9.5e-4);
        let out = run_tti_with(1, &cfg, &ch, TTI, |_| Ok(slow)).unwrap();
        assert!(out.decoded);
        assert_eq!(out.decode_offset_s, Some(9.5e-4));

        let out = run_tti_with(3, &cfg, &ch, TTI, |j| {
            Ok(if j == 1 { forced(0.0, f64::INFINITY) } else { slow })
        })
        .unwrap();
        assert!(!out.decoded, "late attempts cannot finish inside the TTI");
        assert_eq!(out.attempts_used, 3);
    }

    #[test]
    fn empirical_success_matches_analytic_over_fading() {
        // wide band makes the delay gate slack, so the per-attempt success
        // probability is exactly the exponential tail of the fading power
        let ch = ChannelParams {
            path_loss_exponent: 2.5,
            bandwidth_hz: 1e9,
            ..Default::default()
        };
        let cfg = RepetitionConfig::default();
        let uav = Position3::new(69.0, 70.0, 50.0);
        let bs = Position3::new(0.0, 0.0, 0.0);
        let theta = elevation_angle_deg(&uav, &bs).unwrap();
        let lambda = mean_path_loss_linear(distance(&uav, &bs), p_los(theta, &ch), &ch);
        let p = (-(ch.snr_threshold_linear() * ch.noise_power_linear() * lambda
            / ch.tx_power_linear()))
            .exp();

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let trials = 100_000;
        for k in [1u32, 2, 5] {
            let mut hits = 0usize;
            for _ in 0..trials {
                let out =
                    run_tti_transmission(k, &uav, &bs, &ch, &cfg, TTI, &mut rng).unwrap();
                if out.decoded {
                    hits += 1;
                }
            }
            let emp = hits as f64 / trials as f64;
            let ana = analytic_success_prob(p, k);
            assert!(
                (emp - ana).abs() < 0.01,
                "k = {k}: empirical {emp} vs analytic {ana}"
            );
        }
    }

    proptest! {
        #[test]
        fn analytic_success_is_monotone_in_k(p in 0.0f64..1.0, k in 1u32..10) {
            prop_assert!(analytic_success_prob(p, k + 1) >= analytic_success_prob(p, k));
        }

        /// Whatever the draws, a decoded outcome always reports a completion
        /// offset inside the TTI and an attempt number within k_max.
        #[test]
        fn decoded_outcome_is_consistent(seed in 0u64..5000, k_max in 1u32..=10) {
            let ch = ChannelParams { path_loss_exponent: 2.7, ..Default::default() };
            let cfg = RepetitionConfig::default();
            let uav = Position3::new(30.0, 40.0, 50.0);
            let bs = Position3::new(0.0, 0.0, 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = run_tti_transmission(k_max, &uav, &bs, &ch, &cfg, TTI, &mut rng).unwrap();
            prop_assert!(out.attempts_used >= 1 && out.attempts_used <= k_max);
            match out.decode_offset_s {
                Some(off) => {
                    prop_assert!(out.decoded);
                    prop_assert!(off > 0.0 && off <= TTI);
                }
                None => prop_assert!(!out.decoded),
            }
        }
    }
}
