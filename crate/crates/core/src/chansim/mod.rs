//! Synthetic channel-estimation data.
//!
//! Each sample draws a [`ChannelScenario`], builds its tapped-delay-line
//! channel, evolves the taps over one slot, sends a pilot-bearing grid
//! through it with AWGN and keeps two grids: the LS-interpolated pilot
//! estimate (model input) and the true frequency response (label).

mod fading;
mod ofdm;
mod tdl;

pub use fading::{evolve_fading, FadingProcess, SINUSOIDS_PER_TAP};
pub use ofdm::{
    build_pilot_grid, frequency_response, ls_interpolate, transmit, Modulation, OfdmConfig,
    PilotPattern, CYCLIC_PREFIX,
};
pub use tdl::{make_simple_tapset, make_tapset, Profile, TapSet, MAX_TAPS, SIMPLE_PDP_TAPS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{to_real, Dataset, RealGrid, SplitTag};

pub const DELAY_SPREAD_RANGE: (f64, f64) = (1e-9, 300e-9);
pub const DOPPLER_RANGE: (f64, f64) = (5.0, 400.0);
pub const SNR_DB_RANGE: (f64, f64) = (0.0, 10.0);

/// Per-sample channel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScenario {
    pub profile: Profile,
    /// Seconds.
    pub delay_spread: f64,
    /// Hz.
    pub max_doppler: f64,
    pub snr_db: f64,
    /// Seeds the fading, symbol and noise streams of this sample.
    pub seed: u64,
}

impl ChannelScenario {
    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !within(self.delay_spread, DELAY_SPREAD_RANGE)
            || !within(self.max_doppler, DOPPLER_RANGE)
            || !within(self.snr_db, SNR_DB_RANGE)
        {
            return Err(Error::Config(format!("scenario out of range: {self:?}")));
        }
        Ok(())
    }
}

fn default_slots_per_subframe() -> u32 {
    2
}

fn default_slots_per_frame() -> u32 {
    20
}

/// JSON scenario configuration for dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_sub: usize,
    pub n_sym: usize,
    pub nfft: usize,
    pub sample_rate: f64,
    pub profiles: Vec<Profile>,
    pub delay_spread_ns: [f64; 2],
    pub doppler_hz: [f64; 2],
    pub snr_db: [f64; 2],
    pub pilot_symbols: Vec<usize>,
    pub pilot_stride: usize,
    /// Replace the TDL tables with an 8-tap exponential profile.
    #[serde(default)]
    pub simple_pdp: bool,
    /// Carried as metadata only; a single slot is simulated.
    #[serde(default = "default_slots_per_subframe")]
    pub slots_per_subframe: u32,
    /// Carried as metadata only.
    #[serde(default = "default_slots_per_frame")]
    pub slots_per_frame: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_sub: 612,
            n_sym: 14,
            nfft: 1024,
            sample_rate: 30_720_000.0,
            profiles: Profile::ALL.to_vec(),
            delay_spread_ns: [1.0, 300.0],
            doppler_hz: [5.0, 400.0],
            snr_db: [0.0, 10.0],
            pilot_symbols: vec![2, 11],
            pilot_stride: 2,
            simple_pdp: false,
            slots_per_subframe: 2,
            slots_per_frame: 20,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ofdm(&self) -> OfdmConfig {
        OfdmConfig {
            n_sub: self.n_sub,
            n_sym: self.n_sym,
            nfft: self.nfft,
            sample_rate: self.sample_rate,
            pilot_symbol_indices: self.pilot_symbols.clone(),
            pilot_subcarrier_stride: self.pilot_stride,
            ..OfdmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ofdm().validate()?;
        if self.profiles.is_empty() {
            return Err(Error::Config("profiles must not be empty".into()));
        }
        let check = |name: &str, [lo, hi]: [f64; 2], (min, max): (f64, f64)| {
            if !(lo <= hi && lo >= min && hi <= max) {
                Err(Error::Config(format!(
                    "{name} range [{lo}, {hi}] must be ordered and within [{min}, {max}]"
                )))
            } else {
                Ok(())
            }
        };
        check(
            "delay_spread_ns",
            self.delay_spread_ns,
            (DELAY_SPREAD_RANGE.0 * 1e9, DELAY_SPREAD_RANGE.1 * 1e9),
        )?;
        check("doppler_hz", self.doppler_hz, DOPPLER_RANGE)?;
        check("snr_db", self.snr_db, SNR_DB_RANGE)?;
        let pattern = self.ofdm().pilot_pattern();
        if pattern.symbols.len() < 2 || pattern.subcarriers.len() < 2 {
            return Err(Error::Config(
                "pilot layout needs at least 2 symbols and 2 subcarriers".into(),
            ));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draws a scenario from the default parameter ranges.
pub fn sample_scenario(rng_seed: u64) -> ChannelScenario {
    sample_scenario_with(&ScenarioConfig::default(), rng_seed)
}

/// Draws a scenario from the ranges in `cfg`.
pub fn sample_scenario_with(cfg: &ScenarioConfig, rng_seed: u64) -> ChannelScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let profile = cfg.profiles[rng.random_range(0..cfg.profiles.len())];
    let delay_spread =
        (uniform(&mut rng, cfg.delay_spread_ns) * 1e-9).clamp(DELAY_SPREAD_RANGE.0, DELAY_SPREAD_RANGE.1);
    let max_doppler = uniform(&mut rng, cfg.doppler_hz);
    let snr_db = uniform(&mut rng, cfg.snr_db);
    ChannelScenario {
        profile,
        delay_spread,
        max_doppler,
        snr_db,
        seed: rng.random(),
    }
}

/// One generated sample in complex form.
#[derive(Debug, Clone)]
pub struct SampleGrids {
    pub estimate: crate::grid::ComplexGrid,
    pub channel: crate::grid::ComplexGrid,
}

/// Runs the link for one scenario and returns (LS estimate, true channel).
pub fn simulate(scenario: &ChannelScenario, cfg: &ScenarioConfig) -> Result<SampleGrids> {
    let ofdm = cfg.ofdm();
    let taps = if cfg.simple_pdp {
        make_simple_tapset(scenario.delay_spread)
    } else {
        make_tapset(scenario.profile, scenario.delay_spread)
    };
    let process = evolve_fading(&taps, scenario, ofdm.n_sym, ofdm.symbol_period());
    let channel = frequency_response(&process, &taps, &ofdm)?;
    let (tx, pattern) = build_pilot_grid(&ofdm, scenario.seed);
    let rx = transmit(&tx, &channel, scenario.snr_db, scenario.seed)?;
    let estimate = ls_interpolate(&rx, &tx, &pattern)?;
    Ok(SampleGrids { estimate, channel })
}

/// Real-valued (input, label) pair for one scenario.
pub fn generate_sample(
    scenario: &ChannelScenario,
    cfg: &ScenarioConfig,
) -> Result<(RealGrid, RealGrid)> {
    let s = simulate(scenario, cfg)?;
    Ok((to_real(&s.estimate), to_real(&s.channel)))
}

/// Per-sample seeds drawn sequentially from the master seed.
pub fn sample_seeds(n: usize, master_seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Builds a dataset from explicit scenarios. Samples are simulated in
/// parallel and assembled in scenario order.
pub fn generate_from_scenarios(
    scenarios: Vec<ChannelScenario>,
    cfg: &ScenarioConfig,
) -> Result<Dataset> {
    cfg.validate()?;
    let pairs = scenarios
        .par_iter()
        .map(|s| generate_sample(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let (inputs, labels) = pairs.into_iter().unzip();
    Dataset::new(inputs, labels, scenarios, SplitTag::All)
}

/// `n_samples` scenarios drawn from `cfg`, simulated into a dataset.
/// A pure function of `(cfg, master_seed)`.
pub fn generate_dataset(n_samples: usize, cfg: &ScenarioConfig, master_seed: u64) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    cfg.validate()?;
    let scenarios = sample_seeds(n_samples, master_seed)
        .into_iter()
        .map(|seed| sample_scenario_with(cfg, seed))
        .collect();
    generate_from_scenarios(scenarios, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralnet::mse_loss;

    #[test]
    fn scenarios_are_deterministic_and_in_range() {
        assert_eq!(sample_scenario(5), sample_scenario(5));
        assert_ne!(sample_scenario(5), sample_scenario(6));
        for seed in 0..2000 {
            sample_scenario(seed).validate().unwrap();
        }
    }

    #[test]
    fn profiles_are_uniform() {
        let mut counts = std::collections::HashMap::new();
        let n = 10_000;
        for seed in 0..n {
            *counts.entry(sample_scenario(seed).profile).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 5);
        for (p, c) in counts {
            let f = c as f64 / n as f64;
            assert!((0.18..=0.22).contains(&f), "{p:?}: {f}");
        }
    }

    #[test]
    fn config_json_round_trip_and_missing_field() {
        let text = r#"{ "n_sub":612, "n_sym":14, "nfft":1024, "sample_rate":30720000,
            "profiles":["A","B","C","D","E"], "delay_spread_ns":[1,300],
            "doppler_hz":[5,400], "snr_db":[0,10], "pilot_symbols":[2,11], "pilot_stride":2 }"#;
        let cfg = ScenarioConfig::from_json(text).unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        let missing = text.replace(r#""nfft":1024,"#, "");
        let err = ScenarioConfig::from_json(&missing).unwrap_err().to_string();
        assert!(err.contains("nfft"), "{err}");
        let bad = text.replace("[0,10]", "[0,40]");
        assert!(ScenarioConfig::from_json(&bad).is_err());
    }

    fn small_config() -> ScenarioConfig {
        ScenarioConfig {
            n_sub: 48,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn dataset_has_expected_shape_and_is_deterministic() {
        let cfg = ScenarioConfig::default();
        let d = generate_dataset(3, &cfg, 42).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.grid_shape(), Some((612, 14, 2)));
        assert_eq!(d.inputs()[0].len() / 2, 8568);
        assert_eq!(generate_dataset(3, &cfg, 42).unwrap(), d);
        assert_ne!(generate_dataset(3, &cfg, 43).unwrap(), d);
        assert!(generate_dataset(0, &cfg, 42).is_err());
    }

    #[test]
    fn estimate_error_grows_with_noise() {
        let cfg = small_config();
        let mean_err = |snr_db: f64| {
            let scenarios: Vec<_> = sample_seeds(64, 9)
                .into_iter()
                .map(|s| ChannelScenario {
                    snr_db,
                    ..sample_scenario_with(&cfg, s)
                })
                .collect();
            let d = generate_from_scenarios(scenarios, &cfg).unwrap();
            d.inputs()
                .iter()
                .zip(d.labels())
                .map(|(x, y)| mse_loss(x, y).unwrap())
                .sum::<f64>()
                / d.len() as f64
        };
        let (low, high) = (mean_err(0.0), mean_err(10.0));
        assert!(low > high, "MSE at 0 dB {low} vs 10 dB {high}");
    }
}
