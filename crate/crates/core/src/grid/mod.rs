//! Resource-grid tensors and the sample container used throughout the
//! workbench.
//!
//! A [`ComplexGrid`] is one `n_sub × n_sym` slot of complex resource
//! elements. The network consumes the same slot as a [`RealGrid`] with a
//! trailing channel axis of two planes (real, imaginary). Memory layout is
//! subcarrier-major, then symbol, then channel.

mod io;

pub use io::{load_dataset, meta_path, save_dataset, CEGD_MAGIC, CEGD_VERSION};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chansim::ChannelScenario;
use crate::error::{Error, Result};

/// Default number of subcarriers in a slot.
pub const N_SUB: usize = 612;
/// Default number of OFDM symbols in a slot.
pub const N_SYM: usize = 14;

fn check_finite<'a>(mut values: impl Iterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Complex-valued subcarrier × symbol matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    n_sub: usize,
    n_sym: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(n_sub: usize, n_sym: usize) -> Self {
        Self::filled(n_sub, n_sym, Complex64::new(0.0, 0.0))
    }

    pub fn filled(n_sub: usize, n_sym: usize, value: Complex64) -> Self {
        assert!(value.re.is_finite() && value.im.is_finite());
        Self {
            n_sub,
            n_sym,
            data: vec![value; n_sub * n_sym],
        }
    }

    /// Builds a grid from subcarrier-major data, rejecting wrong lengths and
    /// non-finite values.
    pub fn from_vec(n_sub: usize, n_sym: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n_sub * n_sym {
            return Err(Error::Shape(format!(
                "expected {} elements for a {n_sub}x{n_sym} grid, got {}",
                n_sub * n_sym,
                data.len()
            )));
        }
        check_finite(data.iter().flat_map(|c| [&c.re, &c.im]), "complex grid")?;
        Ok(Self { n_sub, n_sym, data })
    }

    /// Builds a grid by evaluating `f(subcarrier, symbol)` at every element.
    pub fn from_fn(
        n_sub: usize,
        n_sym: usize,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(n_sub * n_sym);
        for k in 0..n_sub {
            for n in 0..n_sym {
                data.push(f(k, n));
            }
        }
        Self::from_vec(n_sub, n_sym, data)
    }

    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    pub fn n_sym(&self) -> usize {
        self.n_sym
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_sub, self.n_sym)
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    fn index(&self, k: usize, n: usize) -> usize {
        assert!(
            k < self.n_sub && n < self.n_sym,
            "grid index ({k}, {n}) out of bounds for {}x{}",
            self.n_sub,
            self.n_sym
        );
        k * self.n_sym + n
    }

    pub fn get(&self, k: usize, n: usize) -> Complex64 {
        self.data[self.index(k, n)]
    }

    /// Panics if the value is not finite or the index is out of bounds.
    pub fn set(&mut self, k: usize, n: usize, value: Complex64) {
        assert!(value.re.is_finite() && value.im.is_finite(), "non-finite grid value");
        let i = self.index(k, n);
        self.data[i] = value;
    }

    /// Mean of `|x|²` over all elements.
    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

/// Real-valued `n_sub × n_sym × n_chan` tensor; `n_chan` is 2 for channel
/// grids (real plane, imaginary plane).
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid {
    n_sub: usize,
    n_sym: usize,
    n_chan: usize,
    data: Vec<f64>,
}

impl RealGrid {
    pub fn zeros(n_sub: usize, n_sym: usize) -> Self {
        Self {
            n_sub,
            n_sym,
            n_chan: 2,
            data: vec![0.0; n_sub * n_sym * 2],
        }
    }

    pub fn new(n_sub: usize, n_sym: usize, n_chan: usize, data: Vec<f64>) -> Result<Self> {
        if n_chan == 0 || data.len() != n_sub * n_sym * n_chan {
            return Err(Error::Shape(format!(
                "expected {} elements for a {n_sub}x{n_sym}x{n_chan} grid, got {}",
                n_sub * n_sym * n_chan,
                data.len()
            )));
        }
        check_finite(data.iter(), "real grid")?;
        Ok(Self {
            n_sub,
            n_sym,
            n_chan,
            data,
        })
    }

    /// Shorthand for a two-plane grid.
    pub fn from_vec(n_sub: usize, n_sym: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(n_sub, n_sym, 2, data)
    }

    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    pub fn n_sym(&self) -> usize {
        self.n_sym
    }

    pub fn n_chan(&self) -> usize {
        self.n_chan
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n_sub, self.n_sym, self.n_chan)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, k: usize, n: usize, c: usize) -> f64 {
        assert!(k < self.n_sub && n < self.n_sym && c < self.n_chan);
        self.data[(k * self.n_sym + n) * self.n_chan + c]
    }

    /// Extracts channel `c` as a contiguous `n_sub × n_sym` plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        assert!(c < self.n_chan);
        self.data.iter().skip(c).step_by(self.n_chan).copied().collect()
    }

    /// Interleaves per-channel planes back into a grid.
    pub fn from_planes(n_sub: usize, n_sym: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let n_chan = planes.len();
        let pixels = n_sub * n_sym;
        if planes.iter().any(|p| p.len() != pixels) {
            return Err(Error::Shape("plane length does not match grid".into()));
        }
        let mut data = vec![0.0; pixels * n_chan];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.iter().enumerate() {
                data[i * n_chan + c] = *v;
            }
        }
        Self::new(n_sub, n_sym, n_chan, data)
    }

    pub fn same_shape(&self, other: &RealGrid) -> bool {
        self.shape() == other.shape()
    }

    /// Largest absolute elementwise difference.
    pub fn linf_distance(&self, other: &RealGrid) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Splits each complex element into (real, imaginary) channels.
pub fn to_real(g: &ComplexGrid) -> RealGrid {
    let data = g.data.iter().flat_map(|c| [c.re, c.im]).collect();
    RealGrid {
        n_sub: g.n_sub,
        n_sym: g.n_sym,
        n_chan: 2,
        data,
    }
}

/// Inverse of [`to_real`].
pub fn to_complex(g: &RealGrid) -> Result<ComplexGrid> {
    if g.n_chan != 2 {
        return Err(Error::Shape(format!(
            "complex conversion needs 2 channels, grid has {}",
            g.n_chan
        )));
    }
    let data = g
        .data
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    Ok(ComplexGrid {
        n_sub: g.n_sub,
        n_sym: g.n_sym,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
    All,
}

/// Parallel arrays of model inputs, perfect-channel labels and the channel
/// scenarios that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<RealGrid>,
    labels: Vec<RealGrid>,
    scenarios: Vec<ChannelScenario>,
    split: SplitTag,
}

impl Dataset {
    pub fn new(
        inputs: Vec<RealGrid>,
        labels: Vec<RealGrid>,
        scenarios: Vec<ChannelScenario>,
        split: SplitTag,
    ) -> Result<Self> {
        if inputs.len() != labels.len() || inputs.len() != scenarios.len() {
            return Err(Error::Shape(format!(
                "dataset arrays differ in length: {} inputs, {} labels, {} scenarios",
                inputs.len(),
                labels.len(),
                scenarios.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if inputs.iter().chain(&labels).any(|g| !g.same_shape(first)) {
                return Err(Error::Shape("dataset grids do not share one shape".into()));
            }
        }
        Ok(Self {
            inputs,
            labels,
            scenarios,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[RealGrid] {
        &self.inputs
    }

    pub fn labels(&self) -> &[RealGrid] {
        &self.labels
    }

    pub fn scenarios(&self) -> &[ChannelScenario] {
        &self.scenarios
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    /// Grid shape shared by every sample, if any.
    pub fn grid_shape(&self) -> Option<(usize, usize, usize)> {
        self.inputs.first().map(RealGrid::shape)
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize], split: SplitTag) -> Dataset {
        Dataset {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
            scenarios: indices.iter().map(|&i| self.scenarios[i].clone()).collect(),
            split,
        }
    }

    /// Same samples with the inputs replaced.
    pub fn with_inputs(&self, inputs: Vec<RealGrid>) -> Result<Dataset> {
        Dataset::new(inputs, self.labels.clone(), self.scenarios.clone(), self.split)
    }

    pub fn into_parts(self) -> (Vec<RealGrid>, Vec<RealGrid>, Vec<ChannelScenario>) {
        (self.inputs, self.labels, self.scenarios)
    }
}

/// Index partition produced by [`split_indices`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` cut at `⌊train_fraction · n⌋`.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = (train_fraction * n as f64).floor() as usize;
    let test = order.split_off(n_train);
    Ok(SplitIndices { train: order, test })
}

/// Deterministic train/test partition of a dataset.
pub fn split_dataset(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let idx = split_indices(d.len(), train_fraction, seed)?;
    Ok((
        d.select(&idx.train, SplitTag::Train),
        d.select(&idx.test, SplitTag::Test),
    ))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::chansim::{ChannelScenario, Profile};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    pub(crate) fn toy_dataset(n: usize) -> Dataset {
        let inputs = (0..n)
            .map(|i| RealGrid::from_vec(2, 3, vec![i as f64; 12]).unwrap())
            .collect();
        let labels = (0..n)
            .map(|i| RealGrid::from_vec(2, 3, vec![-(i as f64); 12]).unwrap())
            .collect();
        let scenarios = (0..n)
            .map(|i| ChannelScenario {
                profile: Profile::TdlA,
                delay_spread: 1e-7,
                max_doppler: 10.0,
                snr_db: 5.0,
                seed: i as u64,
            })
            .collect();
        Dataset::new(inputs, labels, scenarios, SplitTag::All).unwrap()
    }

    #[test]
    fn to_real_splits_components() {
        let g = ComplexGrid::from_vec(1, 3, vec![c(0.15, 0.90), c(0.0, 0.0), c(-0.39, -0.84)])
            .unwrap();
        let r = to_real(&g);
        assert_eq!(r.shape(), (1, 3, 2));
        assert_eq!(r.as_slice(), &[0.15, 0.90, 0.0, 0.0, -0.39, -0.84]);
    }

    #[test]
    fn to_complex_rejects_wrong_channel_count() {
        let g = RealGrid::new(2, 2, 3, vec![0.0; 12]).unwrap();
        assert!(matches!(to_complex(&g), Err(Error::Shape(_))));
        let g = RealGrid::from_vec(1, 1, vec![0.15, 0.90]).unwrap();
        assert_eq!(to_complex(&g).unwrap().get(0, 0), c(0.15, 0.90));
    }

    #[test]
    fn grids_reject_non_finite_values() {
        assert!(matches!(
            RealGrid::from_vec(1, 1, vec![f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
        assert!(ComplexGrid::from_vec(1, 1, vec![c(f64::INFINITY, 0.0)]).is_err());
        assert!(matches!(
            ComplexGrid::from_vec(2, 2, vec![c(0.0, 0.0); 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    #[should_panic]
    fn out_of_bounds_access_panics() {
        ComplexGrid::zeros(4, 2).get(4, 0);
    }

    #[test]
    fn planes_round_trip() {
        let g = RealGrid::from_vec(2, 2, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(g.plane(0), vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(g.plane(1), vec![1.0, 3.0, 5.0, 7.0]);
        let back = RealGrid::from_planes(2, 2, &[g.plane(0), g.plane(1)]).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn split_sizes_follow_floor() {
        let (train, test) = split_dataset(&toy_dataset(256), 0.8, 3).unwrap();
        assert_eq!((train.len(), test.len()), (204, 52));
        let (train, test) = split_dataset(&toy_dataset(10), 0.5, 3).unwrap();
        assert_eq!((train.len(), test.len()), (5, 5));
        assert_eq!(train.split(), SplitTag::Train);
        assert_eq!(test.split(), SplitTag::Test);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = split_indices(97, 0.8, 11).unwrap();
        let b = split_indices(97, 0.8, 11).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..97).collect::<Vec<_>>());
        assert_ne!(split_indices(97, 0.8, 12).unwrap(), a);
    }

    #[test]
    fn split_rejects_bad_arguments() {
        let empty = Dataset::new(vec![], vec![], vec![], SplitTag::All).unwrap();
        assert!(matches!(split_dataset(&empty, 0.8, 0), Err(Error::EmptyDataset)));
        assert!(split_dataset(&toy_dataset(4), 1.0, 0).is_err());
        assert!(split_dataset(&toy_dataset(4), 0.0, 0).is_err());
    }

    #[test]
    fn dataset_rejects_ragged_arrays() {
        let d = toy_dataset(2);
        let (inputs, mut labels, scenarios) = d.into_parts();
        labels.pop();
        assert!(Dataset::new(inputs, labels, scenarios, SplitTag::All).is_err());
    }

    proptest! {
        #[test]
        fn complex_real_round_trip(values in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..64)) {
            let n = values.len();
            let g = ComplexGrid::from_vec(n, 1, values.into_iter().map(|(a, b)| c(a, b)).collect()).unwrap();
            prop_assert_eq!(to_complex(&to_real(&g)).unwrap(), g);
        }
    }
}
