//! Time-varying tap coefficients from a Clarke sum-of-sinusoids model.
//!
//! Each Rayleigh tap is `sqrt(P/M) Σ_m exp(j(2π f_d cos θ_m t + φ_m))` with
//! `M` equal-power sinusoids, uniform angles of arrival `θ_m` and uniform
//! phases `φ_m`. Over realizations this has mean power `P` and normalized
//! autocorrelation `J₀(2π f_d τ)`. A Rician tap adds a specular ray at the
//! full Doppler shift carrying `K/(K+1)` of the tap power.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChannelScenario, TapSet};

/// Sinusoids per Rayleigh tap.
pub const SINUSOIDS_PER_TAP: usize = 16;

const FADING_STREAM: u64 = 1;

/// Per-tap, per-symbol complex channel coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingProcess {
    /// `coefficients[l][t]` is tap `l` during OFDM symbol `t`.
    pub coefficients: Vec<Vec<Complex64>>,
    pub symbol_period: f64,
}

impl FadingProcess {
    pub fn n_taps(&self) -> usize {
        self.coefficients.len()
    }

    pub fn n_sym(&self) -> usize {
        self.coefficients.first().map_or(0, Vec::len)
    }
}

/// Samples the fading process once per OFDM symbol. Deterministic given
/// `scenario.seed`.
pub fn evolve_fading(
    taps: &TapSet,
    scenario: &ChannelScenario,
    n_sym: usize,
    symbol_period: f64,
) -> FadingProcess {
    assert!(n_sym >= 1, "need at least one OFDM symbol");
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(FADING_STREAM);
    let fd = scenario.max_doppler;
    let amp_scale = 1.0 / (SINUSOIDS_PER_TAP as f64).sqrt();

    let coefficients = taps
        .powers
        .iter()
        .enumerate()
        .map(|(l, &power)| {
            let k = if l == 0 { taps.rician_k } else { 0.0 };
            let diffuse = (power / (k + 1.0)).sqrt() * amp_scale;
            let rays: Vec<(f64, f64)> = (0..SINUSOIDS_PER_TAP)
                .map(|_| {
                    let theta: f64 = rng.random::<f64>() * 2.0 * PI;
                    let phi: f64 = rng.random::<f64>() * 2.0 * PI;
                    (2.0 * PI * fd * theta.cos(), phi)
                })
                .collect();
            let specular = if k > 0.0 {
                let phi: f64 = rng.random::<f64>() * 2.0 * PI;
                Some(((power * k / (k + 1.0)).sqrt(), phi))
            } else {
                None
            };
            (0..n_sym)
                .map(|t| {
                    let time = t as f64 * symbol_period;
                    let mut h: Complex64 = rays
                        .iter()
                        .map(|&(w, phi)| Complex64::from_polar(diffuse, w * time + phi))
                        .sum();
                    if let Some((amp, phi)) = specular {
                        h += Complex64::from_polar(amp, 2.0 * PI * fd * time + phi);
                    }
                    h
                })
                .collect()
        })
        .collect();

    FadingProcess {
        coefficients,
        symbol_period,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chansim::{make_tapset, Profile};

    fn scenario(fd: f64, seed: u64) -> ChannelScenario {
        ChannelScenario {
            profile: Profile::TdlA,
            delay_spread: 1e-7,
            max_doppler: fd,
            snr_db: 5.0,
            seed,
        }
    }

    /// J₀(x) = (1/π) ∫₀^π cos(x sin t) dt by composite Simpson.
    fn bessel_j0(x: f64) -> f64 {
        let n = 2000;
        let h = PI / n as f64;
        let f = |t: f64| (x * t.sin()).cos();
        let mut s = f(0.0) + f(PI);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        s * h / 3.0 / PI
    }

    #[test]
    fn zero_doppler_is_static() {
        let taps = make_tapset(Profile::TdlD, 1e-7);
        let p = evolve_fading(&taps, &scenario(0.0, 9), 14, 35.7e-6);
        for tap in &p.coefficients {
            for h in tap {
                assert!((h - tap[0]).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let taps = make_tapset(Profile::TdlB, 1e-7);
        let a = evolve_fading(&taps, &scenario(200.0, 4), 14, 35.7e-6);
        let b = evolve_fading(&taps, &scenario(200.0, 4), 14, 35.7e-6);
        let c = evolve_fading(&taps, &scenario(200.0, 5), 14, 35.7e-6);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mean_tap_power_matches_profile() {
        for profile in [Profile::TdlA, Profile::TdlE] {
            let taps = make_tapset(profile, 1e-7);
            let runs = 10_000;
            let mut acc = vec![0.0; taps.len()];
            for seed in 0..runs {
                let mut s = scenario(300.0, seed);
                s.profile = profile;
                let p = evolve_fading(&taps, &s, 1, 35.7e-6);
                for (a, tap) in acc.iter_mut().zip(&p.coefficients) {
                    *a += tap[0].norm_sqr();
                }
            }
            for (a, &power) in acc.iter().zip(&taps.powers) {
                let mean = a / runs as f64;
                assert!(
                    (mean - power).abs() <= 0.05 * power,
                    "{profile:?}: empirical {mean} vs {power}"
                );
            }
        }
    }

    #[test]
    fn lag_one_autocorrelation_follows_bessel() {
        let taps = TapSet::from_taps(vec![(0.0, 1.0)], 0.0);
        let dt = 1e-3;
        for fd in [50.0, 150.0, 350.0] {
            let runs = 10_000;
            let mut acc = 0.0;
            for seed in 0..runs {
                let p = evolve_fading(&taps, &scenario(fd, seed), 2, dt);
                let h = &p.coefficients[0];
                acc += (h[1] * h[0].conj()).re;
            }
            let empirical = acc / runs as f64;
            let expected = bessel_j0(2.0 * PI * fd * dt);
            assert!(
                (empirical - expected).abs() <= 0.05,
                "fd={fd}: {empirical} vs J0={expected}"
            );
        }
    }
}
