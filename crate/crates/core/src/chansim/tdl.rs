//! Tapped-delay-line power-delay profiles.
//!
//! Normalized delays and powers come from the 3GPP TR 38.901 TDL-A..E
//! tables, truncated to their first 12 rows. For the LOS profiles the first
//! row merges the specular component with its Rayleigh companion at the same
//! delay; their ratio is kept as the Rician K-factor of tap 0.

use serde::{Deserialize, Serialize};

/// TDL delay profile. A–C are NLOS, D–E are LOS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "A", alias = "TDL-A")]
    TdlA,
    #[serde(rename = "B", alias = "TDL-B")]
    TdlB,
    #[serde(rename = "C", alias = "TDL-C")]
    TdlC,
    #[serde(rename = "D", alias = "TDL-D")]
    TdlD,
    #[serde(rename = "E", alias = "TDL-E")]
    TdlE,
}

impl Profile {
    pub const ALL: [Profile; 5] = [
        Profile::TdlA,
        Profile::TdlB,
        Profile::TdlC,
        Profile::TdlD,
        Profile::TdlE,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::TdlA => "TDL-A",
            Profile::TdlB => "TDL-B",
            Profile::TdlC => "TDL-C",
            Profile::TdlD => "TDL-D",
            Profile::TdlE => "TDL-E",
        }
    }

    pub fn is_los(self) -> bool {
        matches!(self, Profile::TdlD | Profile::TdlE)
    }
}

pub const MAX_TAPS: usize = 12;

// (normalized delay, power dB)
const TDL_A: [(f64, f64); MAX_TAPS] = [
    (0.0000, -13.4),
    (0.3819, 0.0),
    (0.4025, -2.2),
    (0.5868, -4.0),
    (0.4610, -6.0),
    (0.5375, -8.2),
    (0.6708, -9.9),
    (0.5750, -10.5),
    (0.7618, -7.5),
    (1.5375, -15.9),
    (1.8978, -6.6),
    (2.2242, -16.7),
];

const TDL_B: [(f64, f64); MAX_TAPS] = [
    (0.0000, 0.0),
    (0.1072, -2.2),
    (0.2155, -4.0),
    (0.2095, -3.2),
    (0.2870, -9.8),
    (0.2986, -1.2),
    (0.3752, -3.4),
    (0.5055, -5.2),
    (0.3681, -7.6),
    (0.3697, -3.0),
    (0.5700, -8.9),
    (0.5283, -9.0),
];

const TDL_C: [(f64, f64); MAX_TAPS] = [
    (0.0000, -4.4),
    (0.2099, -1.2),
    (0.2219, -3.5),
    (0.2329, -5.2),
    (0.2176, -2.5),
    (0.6366, 0.0),
    (0.6448, -2.2),
    (0.6560, -3.9),
    (0.6584, -7.4),
    (0.7935, -7.1),
    (0.8213, -10.7),
    (0.9336, -11.1),
];

// Row 0 lists the Rayleigh part of the first tap; the specular part is below.
const TDL_D: [(f64, f64); MAX_TAPS] = [
    (0.000, -13.5),
    (0.035, -18.8),
    (0.612, -21.0),
    (1.363, -22.8),
    (1.405, -17.9),
    (1.804, -20.1),
    (2.596, -21.9),
    (1.775, -22.9),
    (4.042, -27.8),
    (7.937, -23.6),
    (9.424, -24.8),
    (9.708, -30.0),
];
const TDL_D_LOS_DB: f64 = -0.2;

const TDL_E: [(f64, f64); MAX_TAPS] = [
    (0.0000, -22.03),
    (0.5133, -15.8),
    (0.5440, -18.1),
    (0.5630, -19.8),
    (0.5440, -22.9),
    (0.7112, -22.4),
    (1.9092, -18.6),
    (1.9293, -20.8),
    (1.9589, -22.6),
    (2.6426, -22.3),
    (3.7136, -25.6),
    (5.4524, -20.2),
];
const TDL_E_LOS_DB: f64 = -0.03;

/// Number of taps of the exponential fallback profile.
pub const SIMPLE_PDP_TAPS: usize = 8;

/// Discrete multipath taps: delays in seconds, linear powers summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct TapSet {
    pub delays: Vec<f64>,
    pub powers: Vec<f64>,
    /// Linear K-factor of tap 0; zero for Rayleigh-only profiles.
    pub rician_k: f64,
}

impl TapSet {
    /// Builds a tap set from raw (delay, linear power) pairs: sorts by delay
    /// and normalizes the powers. Tap 0 must sit at delay zero.
    pub fn from_taps(mut taps: Vec<(f64, f64)>, rician_k: f64) -> TapSet {
        taps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = taps.iter().map(|t| t.1).sum();
        TapSet {
            delays: taps.iter().map(|t| t.0).collect(),
            powers: taps.iter().map(|t| t.1 / total).collect(),
            rician_k,
        }
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Tap set of `profile` with delays scaled by `delay_spread` seconds.
pub fn make_tapset(profile: Profile, delay_spread: f64) -> TapSet {
    let (table, los_db) = match profile {
        Profile::TdlA => (&TDL_A, None),
        Profile::TdlB => (&TDL_B, None),
        Profile::TdlC => (&TDL_C, None),
        Profile::TdlD => (&TDL_D, Some(TDL_D_LOS_DB)),
        Profile::TdlE => (&TDL_E, Some(TDL_E_LOS_DB)),
    };
    let mut taps: Vec<(f64, f64)> = table
        .iter()
        .map(|&(d, p)| (d * delay_spread, db_to_linear(p)))
        .collect();
    let mut rician_k = 0.0;
    if let Some(los_db) = los_db {
        let los = db_to_linear(los_db);
        rician_k = los / taps[0].1;
        taps[0].1 += los;
    }
    TapSet::from_taps(taps, rician_k)
}

/// Exponential power-delay profile with [`SIMPLE_PDP_TAPS`] taps at
/// `0, ½, 1, …` times the delay spread, power ∝ `exp(-normalized delay)`.
pub fn make_simple_tapset(delay_spread: f64) -> TapSet {
    let taps = (0..SIMPLE_PDP_TAPS)
        .map(|l| {
            let nd = l as f64 * 0.5;
            (nd * delay_spread, (-nd).exp())
        })
        .collect();
    TapSet::from_taps(taps, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_profile_is_normalized_and_sorted() {
        for p in Profile::ALL {
            for ds in [1e-9, 5e-8, 3e-7] {
                let t = make_tapset(p, ds);
                assert_eq!(t.len(), MAX_TAPS);
                assert!((t.powers.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert_eq!(t.delays[0], 0.0);
                assert!(t.delays.windows(2).all(|w| w[0] <= w[1]));
            }
        }
        let s = make_simple_tapset(1e-7);
        assert_eq!(s.len(), SIMPLE_PDP_TAPS);
        assert!((s.powers.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn delays_scale_linearly() {
        for p in Profile::ALL {
            let a = make_tapset(p, 50e-9);
            let b = make_tapset(p, 100e-9);
            for (x, y) in a.delays.iter().zip(&b.delays) {
                assert!((2.0 * x - y).abs() <= 1e-24);
            }
            assert_eq!(a.powers, b.powers);
        }
    }

    #[test]
    fn only_los_profiles_are_rician() {
        assert_eq!(make_tapset(Profile::TdlA, 1e-7).rician_k, 0.0);
        assert_eq!(make_tapset(Profile::TdlB, 1e-7).rician_k, 0.0);
        assert_eq!(make_tapset(Profile::TdlC, 1e-7).rician_k, 0.0);
        let kd = make_tapset(Profile::TdlD, 1e-7).rician_k;
        let ke = make_tapset(Profile::TdlE, 1e-7).rician_k;
        assert!((10.0 * kd.log10() - 13.3).abs() < 1e-9);
        assert!((10.0 * ke.log10() - 22.0).abs() < 1e-9);
    }
}
