//! Frequency-domain OFDM link: pilot grid construction, the per-RE channel,
//! AWGN, and least-squares pilot estimation with bilinear interpolation.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{FadingProcess, TapSet};
use crate::error::{Error, Result};
use crate::grid::ComplexGrid;

const SYMBOL_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Normal cyclic prefix length in samples at the default sample rate.
pub const CYCLIC_PREFIX: usize = 72;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modulation {
    Qam16,
}

/// Numerology and pilot layout of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmConfig {
    pub n_sub: usize,
    pub n_sym: usize,
    pub nfft: usize,
    pub sample_rate: f64,
    pub cyclic_prefix: usize,
    pub pilot_symbol_indices: Vec<usize>,
    pub pilot_subcarrier_stride: usize,
    pub data_modulation: Modulation,
}

impl Default for OfdmConfig {
    fn default() -> Self {
        Self {
            n_sub: 612,
            n_sym: 14,
            nfft: 1024,
            sample_rate: 30_720_000.0,
            cyclic_prefix: CYCLIC_PREFIX,
            pilot_symbol_indices: vec![2, 11],
            pilot_subcarrier_stride: 2,
            data_modulation: Modulation::Qam16,
        }
    }
}

impl OfdmConfig {
    pub fn subcarrier_spacing(&self) -> f64 {
        self.sample_rate / self.nfft as f64
    }

    /// Duration of one OFDM symbol including its cyclic prefix.
    pub fn symbol_period(&self) -> f64 {
        (self.nfft + self.cyclic_prefix) as f64 / self.sample_rate
    }

    /// Baseband frequency of subcarrier `k`, centered on DC.
    pub fn subcarrier_frequency(&self, k: usize) -> f64 {
        (k as f64 - (self.n_sub / 2) as f64) * self.subcarrier_spacing()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sub == 0 || self.n_sym == 0 {
            return Err(Error::Config("grid dimensions must be positive".into()));
        }
        if self.n_sub > self.nfft {
            return Err(Error::Config(format!(
                "n_sub {} exceeds nfft {}",
                self.n_sub, self.nfft
            )));
        }
        if self.pilot_subcarrier_stride == 0 {
            return Err(Error::Config("pilot stride must be positive".into()));
        }
        if let Some(&bad) = self.pilot_symbol_indices.iter().find(|&&s| s >= self.n_sym) {
            return Err(Error::Config(format!(
                "pilot symbol {bad} outside [0, {})",
                self.n_sym
            )));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn pilot_pattern(&self) -> PilotPattern {
        let mut symbols = self.pilot_symbol_indices.clone();
        symbols.sort_unstable();
        symbols.dedup();
        PilotPattern {
            symbols,
            subcarriers: (0..self.n_sub)
                .step_by(self.pilot_subcarrier_stride)
                .collect(),
        }
    }
}

/// Pilot resource elements on the lattice `symbols × subcarriers`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PilotPattern {
    /// Sorted pilot symbol indices.
    pub symbols: Vec<usize>,
    /// Sorted pilot subcarrier indices.
    pub subcarriers: Vec<usize>,
}

impl PilotPattern {
    pub fn count(&self) -> usize {
        self.symbols.len() * self.subcarriers.len()
    }

    pub fn contains(&self, k: usize, n: usize) -> bool {
        self.symbols.binary_search(&n).is_ok() && self.subcarriers.binary_search(&k).is_ok()
    }
}

/// `H[k, t] = Σ_l h_l^t · exp(−j 2π f_k τ_l)`.
pub fn frequency_response(
    process: &FadingProcess,
    taps: &TapSet,
    cfg: &OfdmConfig,
) -> Result<ComplexGrid> {
    if process.n_taps() != taps.len() || process.n_sym() != cfg.n_sym {
        return Err(Error::Shape(format!(
            "fading process is {}x{}, expected {} taps x {} symbols",
            process.n_taps(),
            process.n_sym(),
            taps.len(),
            cfg.n_sym
        )));
    }
    let mut grid = ComplexGrid::zeros(cfg.n_sub, cfg.n_sym);
    let mut row = vec![Complex64::new(0.0, 0.0); cfg.n_sym];
    for k in 0..cfg.n_sub {
        let f = cfg.subcarrier_frequency(k);
        row.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (tau, coeffs) in taps.delays.iter().zip(&process.coefficients) {
            let rot = Complex64::from_polar(1.0, -2.0 * PI * f * tau);
            for (acc, h) in row.iter_mut().zip(coeffs) {
                *acc += h * rot;
            }
        }
        for (n, v) in row.iter().enumerate() {
            grid.set(k, n, *v);
        }
    }
    Ok(grid)
}

const QAM16_LEVELS: [f64; 4] = [-3.0, -1.0, 1.0, 3.0];

fn qam16(rng: &mut impl Rng) -> Complex64 {
    let scale = 1.0 / 10f64.sqrt();
    let i = QAM16_LEVELS[rng.random_range(0..4)];
    let q = QAM16_LEVELS[rng.random_range(0..4)];
    Complex64::new(i * scale, q * scale)
}

fn qpsk(rng: &mut impl Rng) -> Complex64 {
    let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Complex64::new(re, im)
}

/// Transmit grid: unit-magnitude QPSK pilots on the pilot lattice, unit
/// average power 16-QAM everywhere else.
pub fn build_pilot_grid(cfg: &OfdmConfig, seed: u64) -> (ComplexGrid, PilotPattern) {
    let pattern = cfg.pilot_pattern();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SYMBOL_STREAM);
    let mut grid = ComplexGrid::zeros(cfg.n_sub, cfg.n_sym);
    for k in 0..cfg.n_sub {
        for n in 0..cfg.n_sym {
            let value = if pattern.contains(k, n) {
                qpsk(&mut rng)
            } else {
                match cfg.data_modulation {
                    Modulation::Qam16 => qam16(&mut rng),
                }
            };
            grid.set(k, n, value);
        }
    }
    (grid, pattern)
}

/// `Y = H∘X + W`. The noise variance is set from the measured power of
/// `H∘X` so that the realized SNR matches `snr_db`; an infinite SNR disables
/// the noise entirely.
pub fn transmit(
    tx: &ComplexGrid,
    channel: &ComplexGrid,
    snr_db: f64,
    seed: u64,
) -> Result<ComplexGrid> {
    if tx.shape() != channel.shape() {
        return Err(Error::Shape(format!(
            "transmit grid {:?} vs channel {:?}",
            tx.shape(),
            channel.shape()
        )));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("SNR is NaN".into()));
    }
    let faded: Vec<Complex64> = tx
        .as_slice()
        .iter()
        .zip(channel.as_slice())
        .map(|(x, h)| x * h)
        .collect();
    let (n_sub, n_sym) = tx.shape();
    if snr_db == f64::INFINITY {
        return ComplexGrid::from_vec(n_sub, n_sym, faded);
    }
    let signal_power = faded.iter().map(|c| c.norm_sqr()).sum::<f64>() / faded.len() as f64;
    let noise_power = signal_power / 10f64.powf(snr_db / 10.0);
    let sigma = (noise_power / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let rx = faded
        .into_iter()
        .map(|s| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            s + Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    ComplexGrid::from_vec(n_sub, n_sym, rx)
}

/// Linear interpolation through sorted knots, extended linearly past the
/// outermost knots. Exact knot positions return the knot value untouched.
fn interpolate(knots: &[usize], values: &[Complex64], x: usize) -> Complex64 {
    if let Ok(i) = knots.binary_search(&x) {
        return values[i];
    }
    let seg = match knots.partition_point(|&p| p < x) {
        0 => 0,
        i if i >= knots.len() => knots.len() - 2,
        i => i - 1,
    };
    let (a, b) = (knots[seg] as f64, knots[seg + 1] as f64);
    let t = (x as f64 - a) / (b - a);
    values[seg] + (values[seg + 1] - values[seg]) * t
}

/// LS estimates `Y/X` on the pilot lattice, filled to the full grid by
/// bilinear interpolation (subcarrier axis first, then symbol axis).
pub fn ls_interpolate(
    rx: &ComplexGrid,
    tx: &ComplexGrid,
    pattern: &PilotPattern,
) -> Result<ComplexGrid> {
    if rx.shape() != tx.shape() {
        return Err(Error::Shape(format!(
            "received grid {:?} vs transmit grid {:?}",
            rx.shape(),
            tx.shape()
        )));
    }
    if pattern.symbols.len() < 2 || pattern.subcarriers.len() < 2 {
        return Err(Error::DegenerateMask(format!(
            "need at least 2 pilot symbols and 2 pilot subcarriers, got {} and {}",
            pattern.symbols.len(),
            pattern.subcarriers.len()
        )));
    }
    let (n_sub, n_sym) = rx.shape();
    if pattern.symbols.iter().any(|&s| s >= n_sym)
        || pattern.subcarriers.iter().any(|&k| k >= n_sub)
    {
        return Err(Error::Shape("pilot lattice exceeds grid".into()));
    }

    // Full-band estimates on each pilot symbol.
    let columns: Vec<Vec<Complex64>> = pattern
        .symbols
        .iter()
        .map(|&n| {
            let ls: Vec<Complex64> = pattern
                .subcarriers
                .iter()
                .map(|&k| rx.get(k, n) / tx.get(k, n))
                .collect();
            (0..n_sub)
                .map(|k| interpolate(&pattern.subcarriers, &ls, k))
                .collect()
        })
        .collect();

    let mut out = ComplexGrid::zeros(n_sub, n_sym);
    let mut knots = vec![Complex64::new(0.0, 0.0); pattern.symbols.len()];
    for k in 0..n_sub {
        for (slot, col) in knots.iter_mut().zip(&columns) {
            *slot = col[k];
        }
        for n in 0..n_sym {
            out.set(k, n, interpolate(&pattern.symbols, &knots, n));
        }
    }
    Ok(out)
}
