//! Gradient-based adversarial attacks that maximize an estimator's MSE.
//!
//! The iterative attacks follow their textbook step lists literally: BIM
//! steps by ε every iteration without projection, PGD and MIM perturb the
//! gradient with uniform noise before taking the sign, and MIM accumulates
//! its momentum term without feeding it into the step. The conventional
//! variants are available through [`AttackConfig::clip_to_ball`] and
//! [`AttackConfig::random_start`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chansim::{sample_seeds, ChannelScenario};
use crate::error::{Error, Result};
use crate::grid::{save_dataset, Dataset, RealGrid, SplitTag};
use crate::neuralnet::EstimatorModel;

/// RNG stream for gradient noise and random starts.
const NOISE_STREAM: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
    Mim,
    Cw,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Fgsm,
        AttackKind::Bim,
        AttackKind::Pgd,
        AttackKind::Mim,
        AttackKind::Cw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Pgd => "pgd",
            AttackKind::Mim => "mim",
            AttackKind::Cw => "cw",
        }
    }

    /// Whether the attack is parameterized by a budget ε.
    pub fn uses_epsilon(self) -> bool {
        self != AttackKind::Cw
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == lower || (lower == "c&w" && *k == AttackKind::Cw))
            .ok_or_else(|| {
                let valid: Vec<_> = AttackKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown attack '{s}' (valid: {})",
                    valid.join(", ")
                ))
            })
    }
}

/// Full parameterization of one attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L∞ budget in grid units.
    pub epsilon: f64,
    /// Iterations N of the iterative attacks; CW runs `10·N` descent steps.
    pub iterations: usize,
    /// Step α of PGD and MIM.
    pub step_size: f64,
    /// Momentum rate η of MIM.
    pub momentum_rate: f64,
    /// Weight of the MSE term in the CW objective.
    pub cw_constant: f64,
    /// Learning rate of the CW descent.
    pub cw_lr: f64,
    /// Half-width of the uniform noise added to PGD/MIM gradients.
    pub noise_scale: f64,
    pub seed: u64,
    /// Project onto the ε-ball after every step.
    #[serde(default)]
    pub clip_to_ball: bool,
    /// Start PGD/MIM from a uniform point in the ε-ball.
    #[serde(default)]
    pub random_start: bool,
}

pub const DEFAULT_ITERATIONS: usize = 10;

impl AttackConfig {
    /// Default parameters for `kind` at budget `epsilon`.
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            iterations: DEFAULT_ITERATIONS,
            step_size: default_step_size(kind, epsilon, DEFAULT_ITERATIONS),
            momentum_rate: 1.0,
            cw_constant: 1.0,
            cw_lr: 0.01,
            noise_scale: epsilon * 1e-2,
            seed: 0,
            clip_to_ball: false,
            random_start: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Changes N and re-derives the default step size.
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self.step_size = default_step_size(self.kind, self.epsilon, iterations);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size must be finite and >= 0, got {}", self.step_size));
        }
        if matches!(self.kind, AttackKind::Pgd | AttackKind::Mim)
            && self.epsilon > 0.0
            && self.step_size == 0.0
        {
            return bad("step size must be positive when epsilon is positive".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise scale must be finite and >= 0, got {}", self.noise_scale));
        }
        if !self.momentum_rate.is_finite() {
            return bad("momentum rate must be finite".into());
        }
        if !(self.cw_constant >= 0.0 && self.cw_constant.is_finite()) {
            return bad(format!("cw constant must be finite and >= 0, got {}", self.cw_constant));
        }
        if !(self.cw_lr > 0.0 && self.cw_lr.is_finite()) {
            return bad(format!("cw learning rate must be positive, got {}", self.cw_lr));
        }
        if self.kind == AttackKind::Mim && self.epsilon == 0.0 {
            return Err(Error::Budget(
                "MIM scales its momentum by 1/epsilon and needs epsilon > 0".into(),
            ));
        }
        Ok(())
    }
}

/// α = 2ε/N for PGD and MIM; the budget itself otherwise.
pub fn default_step_size(kind: AttackKind, epsilon: f64, iterations: usize) -> f64 {
    match kind {
        AttackKind::Pgd | AttackKind::Mim => 2.0 * epsilon / iterations.max(1) as f64,
        _ => epsilon,
    }
}

/// Sign with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_pair(x: &RealGrid, y: &RealGrid) -> Result<()> {
    if x.same_shape(y) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "input {:?} vs label {:?}",
            x.shape(),
            y.shape()
        )))
    }
}

fn noise_rng(cfg: &AttackConfig) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(NOISE_STREAM);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        half_width * (2.0 * rng.random::<f64>() - 1.0)
    }
}

/// Adds `step·sign(g)` to `x_adv`, then projects onto the ε-ball around
/// `x` when requested.
fn sign_step(x_adv: &mut [f64], g: &[f64], step: f64, x: &[f64], cfg: &AttackConfig) {
    for (v, gi) in x_adv.iter_mut().zip(g) {
        *v += step * sign(*gi);
    }
    if cfg.clip_to_ball {
        for (v, x0) in x_adv.iter_mut().zip(x) {
            *v = v.clamp(x0 - cfg.epsilon, x0 + cfg.epsilon);
        }
    }
}

fn grid_like(x: &RealGrid, data: Vec<f64>) -> Result<RealGrid> {
    RealGrid::new(x.n_sub(), x.n_sym(), x.n_chan(), data)
}

/// `x + ε·sign(∇ₓ mse)`.
pub fn fgsm(m: &EstimatorModel, x: &RealGrid, y: &RealGrid, cfg: &AttackConfig) -> Result<RealGrid> {
    check_pair(x, y)?;
    cfg.validate()?;
    let (_, g) = m.input_gradient(x, y)?;
    let mut adv = x.as_slice().to_vec();
    sign_step(&mut adv, g.as_slice(), cfg.epsilon, x.as_slice(), cfg);
    grid_like(x, adv)
}

/// N sign steps of size ε, each at the current adversarial point.
pub fn bim(m: &EstimatorModel, x: &RealGrid, y: &RealGrid, cfg: &AttackConfig) -> Result<RealGrid> {
    check_pair(x, y)?;
    cfg.validate()?;
    let mut adv = x.clone();
    for _ in 0..cfg.iterations {
        let (_, g) = m.input_gradient(&adv, y)?;
        let mut data = adv.into_vec();
        sign_step(&mut data, g.as_slice(), cfg.epsilon, x.as_slice(), cfg);
        adv = grid_like(x, data)?;
    }
    Ok(adv)
}

/// Shared PGD/MIM loop. `momentum` carries MIM's accumulator.
fn noisy_sign_attack(
    m: &EstimatorModel,
    x: &RealGrid,
    y: &RealGrid,
    cfg: &AttackConfig,
    mut momentum: Option<&mut Vec<f64>>,
) -> Result<RealGrid> {
    check_pair(x, y)?;
    cfg.validate()?;
    let mut rng = noise_rng(cfg);
    let mut data = x.as_slice().to_vec();
    if cfg.random_start {
        data.iter_mut()
            .for_each(|v| *v += uniform(&mut rng, cfg.epsilon));
    }
    let mut adv = grid_like(x, data)?;
    for _ in 0..cfg.iterations {
        let (_, g) = m.input_gradient(&adv, y)?;
        let mut g = g.into_vec();
        if let Some(mu) = momentum.as_deref_mut() {
            let scale = cfg.momentum_rate / cfg.epsilon;
            mu.iter_mut().zip(&g).for_each(|(u, gi)| *u += scale * gi);
        }
        g.iter_mut().for_each(|v| *v += uniform(&mut rng, cfg.noise_scale));
        let mut data = adv.into_vec();
        sign_step(&mut data, &g, cfg.step_size, x.as_slice(), cfg);
        adv = grid_like(x, data)?;
    }
    Ok(adv)
}

/// N sign steps of size α on the gradient plus uniform noise.
pub fn pgd(m: &EstimatorModel, x: &RealGrid, y: &RealGrid, cfg: &AttackConfig) -> Result<RealGrid> {
    noisy_sign_attack(m, x, y, cfg, None)
}

/// PGD with the momentum accumulator `μ ← μ + (η/ε)·∇`. Returns the
/// adversarial grid.
pub fn mim(m: &EstimatorModel, x: &RealGrid, y: &RealGrid, cfg: &AttackConfig) -> Result<RealGrid> {
    mim_with_momentum(m, x, y, cfg).map(|(adv, _)| adv)
}

/// [`mim`] that also returns the final momentum accumulator.
pub fn mim_with_momentum(
    m: &EstimatorModel,
    x: &RealGrid,
    y: &RealGrid,
    cfg: &AttackConfig,
) -> Result<(RealGrid, Vec<f64>)> {
    if cfg.epsilon == 0.0 {
        return Err(Error::Budget(
            "MIM scales its momentum by 1/epsilon and needs epsilon > 0".into(),
        ));
    }
    let mut mu = vec![0.0; x.len()];
    let adv = noisy_sign_attack(m, x, y, cfg, Some(&mut mu))?;
    Ok((adv, mu))
}

/// Gradient descent on `‖δ‖² − c·mse(m(x+δ), y)` from δ = 0 for `10·N`
/// steps. No budget constraint applies.
pub fn cw(m: &EstimatorModel, x: &RealGrid, y: &RealGrid, cfg: &AttackConfig) -> Result<RealGrid> {
    check_pair(x, y)?;
    cfg.validate()?;
    let mut delta = vec![0.0; x.len()];
    let mut adv = x.clone();
    for _ in 0..cfg.iterations * 10 {
        let (_, g) = m.input_gradient(&adv, y)?;
        for (d, gi) in delta.iter_mut().zip(g.as_slice()) {
            *d -= cfg.cw_lr * (2.0 * *d - cfg.cw_constant * gi);
        }
        let data = x.as_slice().iter().zip(&delta).map(|(a, b)| a + b).collect();
        adv = grid_like(x, data)?;
    }
    Ok(adv)
}

/// Runs the attack selected by `cfg.kind`.
pub fn attack(m: &EstimatorModel, x: &RealGrid, y: &RealGrid, cfg: &AttackConfig) -> Result<RealGrid> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(m, x, y, cfg),
        AttackKind::Bim => bim(m, x, y, cfg),
        AttackKind::Pgd => pgd(m, x, y, cfg),
        AttackKind::Mim => mim(m, x, y, cfg),
        AttackKind::Cw => cw(m, x, y, cfg),
    }
}

/// Originals, their adversarial counterparts and labels, index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialBatch {
    pub originals: Vec<RealGrid>,
    pub perturbed: Vec<RealGrid>,
    pub labels: Vec<RealGrid>,
    pub scenarios: Vec<ChannelScenario>,
    pub config: AttackConfig,
}

impl AdversarialBatch {
    pub fn len(&self) -> usize {
        self.perturbed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perturbed.is_empty()
    }

    /// Per-sample ‖x_adv − x‖∞.
    pub fn perturbation_linf(&self) -> Vec<f64> {
        self.originals
            .iter()
            .zip(&self.perturbed)
            .map(|(a, b)| a.linf_distance(b))
            .collect()
    }

    /// The perturbed inputs paired with their labels.
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(
            self.perturbed.clone(),
            self.labels.clone(),
            self.scenarios.clone(),
            SplitTag::Test,
        )
    }
}

/// Applies `cfg` to every sample. Sample `i` draws its noise from the
/// `i`-th seed derived from `cfg.seed`, so output is independent of
/// scheduling.
pub fn attack_batch(m: &EstimatorModel, data: &Dataset, cfg: &AttackConfig) -> Result<AdversarialBatch> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    let seeds = sample_seeds(data.len(), cfg.seed);
    let perturbed = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let sample_cfg = cfg.clone().with_seed(seeds[i]);
            attack(m, &data.inputs()[i], &data.labels()[i], &sample_cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AdversarialBatch {
        originals: data.inputs().to_vec(),
        perturbed,
        labels: data.labels().to_vec(),
        scenarios: data.scenarios().to_vec(),
        config: cfg.clone(),
    })
}

/// Path of the attack-config sidecar for a dataset file.
pub fn attack_sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".attack.json");
    PathBuf::from(name)
}

/// Writes the perturbed inputs as a CEGD dataset plus the config sidecar.
pub fn save_adversarial(batch: &AdversarialBatch, path: &Path) -> Result<()> {
    save_dataset(&batch.to_dataset()?, path)?;
    fs::write(
        attack_sidecar_path(path),
        serde_json::to_string_pretty(&batch.config)?,
    )?;
    Ok(())
}
