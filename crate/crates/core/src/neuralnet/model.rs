//! The three-layer convolutional estimator.
//!
//! The real and imaginary planes of a grid are processed as two independent
//! single-channel images through the same conv stack; their outputs are
//! re-interleaved into a grid of the input's shape.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{layer_backward, layer_preactivation, ConvLayer};
use super::{mse_loss, Activation};
use crate::error::{Error, Result};
use crate::grid::RealGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchTag {
    Undefended,
    Teacher,
    Student,
}

impl ArchTag {
    /// `(filters, kernel, activation)` per layer.
    pub fn layer_specs(self) -> [(usize, usize, Activation); 3] {
        let (wide, mid) = match self {
            ArchTag::Teacher => (48, 16),
            ArchTag::Undefended | ArchTag::Student => (24, 8),
        };
        [
            (wide, 9, Activation::Selu),
            (mid, 5, Activation::Softplus),
            (1, 5, Activation::Selu),
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            ArchTag::Undefended => "undefended",
            ArchTag::Teacher => "teacher",
            ArchTag::Student => "student",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ArchTag::Undefended => 0,
            ArchTag::Teacher => 1,
            ArchTag::Student => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ArchTag::Undefended),
            1 => Some(ArchTag::Teacher),
            2 => Some(ArchTag::Student),
            _ => None,
        }
    }
}

impl fmt::Display for ArchTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "undefended" => Ok(ArchTag::Undefended),
            "teacher" => Ok(ArchTag::Teacher),
            "student" => Ok(ArchTag::Student),
            other => Err(Error::InvalidArgument(format!(
                "unknown architecture '{other}' (expected undefended, teacher or student)"
            ))),
        }
    }
}

/// Gradient of one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of a model, laid out like its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrad>,
}

impl ParamGrads {
    pub fn zeros_like(model: &EstimatorModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Gradients of the MSE loss with respect to parameters and input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub d_params: ParamGrads,
    pub d_input: RealGrid,
}

/// Which intermediate quantity a feature gradient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FeatureKind {
    /// Post-activation output of the layer.
    Activation,
    /// Pre-activation (linear) response of the layer.
    Representation,
}

/// Per-plane record of a forward pass.
#[derive(Debug, Clone)]
pub(crate) struct PlaneTrace {
    /// Input to each layer.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pub pres: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl PlaneTrace {
    pub fn feature(&self, layer: usize, kind: FeatureKind) -> &[f64] {
        match kind {
            FeatureKind::Representation => &self.pres[layer],
            FeatureKind::Activation if layer + 1 < self.inputs.len() => &self.inputs[layer + 1],
            FeatureKind::Activation => &self.output,
        }
    }
}

/// Convolutional channel estimator mapping `n_sub × n_sym × 2` grids to
/// grids of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorModel {
    arch: ArchTag,
    layers: Vec<ConvLayer>,
}

impl EstimatorModel {
    /// Validates that the layers chain `1 → … → 1` channels.
    pub fn from_layers(arch: ArchTag, layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("model needs at least one layer".into()));
        }
        if layers[0].in_ch != 1 || layers[layers.len() - 1].out_ch != 1 {
            return Err(Error::Shape(
                "conv stack must map one plane to one plane".into(),
            ));
        }
        if let Some(i) = layers.windows(2).position(|w| w[0].out_ch != w[1].in_ch) {
            return Err(Error::Shape(format!(
                "layer {i} outputs {} channels but layer {} expects {}",
                layers[i].out_ch,
                i + 1,
                layers[i + 1].in_ch
            )));
        }
        Ok(Self { arch, layers })
    }

    /// Architecture with every weight and bias zero.
    pub fn zeros(arch: ArchTag) -> Self {
        let mut in_ch = 1;
        let layers = arch
            .layer_specs()
            .iter()
            .map(|&(out_ch, k, act)| {
                let layer = ConvLayer::new(out_ch, in_ch, k, k, act).expect("odd kernels");
                in_ch = out_ch;
                layer
            })
            .collect();
        Self { arch, layers }
    }

    pub fn arch(&self) -> ArchTag {
        self.arch
    }

    pub fn with_arch(mut self, arch: ArchTag) -> Self {
        self.arch = arch;
        self
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_input(&self, x: &RealGrid) -> Result<()> {
        if x.n_chan() != 2 || x.is_empty() {
            return Err(Error::Shape(format!(
                "model input must be a non-empty n_sub x n_sym x 2 grid, got {:?}",
                x.shape()
            )));
        }
        Ok(())
    }

    pub(crate) fn trace_plane(&self, plane: Vec<f64>, h: usize, w: usize) -> PlaneTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut current = plane;
        for layer in &self.layers {
            let pre = layer_preactivation(layer, &current, h, w);
            let next = pre.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(current);
            pres.push(pre);
            current = next;
        }
        PlaneTrace {
            inputs,
            pres,
            output: current,
        }
    }

    fn forward_plane(&self, plane: Vec<f64>, h: usize, w: usize) -> Vec<f64> {
        let mut current = plane;
        for layer in &self.layers {
            let mut pre = layer_preactivation(layer, &current, h, w);
            pre.iter_mut().for_each(|v| *v = layer.activation.apply(*v));
            current = pre;
        }
        current
    }

    /// Reverse pass over one traced plane.
    ///
    /// `d_output` is the loss gradient at the model output. Each entry of
    /// `features` adds a gradient with respect to an intermediate feature.
    /// Returns the input gradient when `want_input` is set.
    pub(crate) fn backprop_plane(
        &self,
        trace: &PlaneTrace,
        d_output: Vec<f64>,
        h: usize,
        w: usize,
        mut grads: Option<&mut ParamGrads>,
        want_input: bool,
        features: &[(usize, FeatureKind, &[f64])],
    ) -> Option<Vec<f64>> {
        let mut d_out = d_output;
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            for (_, _, g) in features
                .iter()
                .filter(|(l, k, _)| *l == idx && *k == FeatureKind::Activation)
            {
                d_out.iter_mut().zip(g.iter()).for_each(|(d, v)| *d += v);
            }
            let pre = &trace.pres[idx];
            d_out
                .iter_mut()
                .zip(pre)
                .for_each(|(d, &z)| *d *= layer.activation.derivative(z));
            for (_, _, g) in features
                .iter()
                .filter(|(l, k, _)| *l == idx && *k == FeatureKind::Representation)
            {
                d_out.iter_mut().zip(g.iter()).for_each(|(d, v)| *d += v);
            }
            let layer_grads = grads.as_deref_mut().map(|g| {
                let lg = &mut g.layers[idx];
                (lg.weights.as_mut_slice(), lg.bias.as_mut_slice())
            });
            let need_input = idx > 0 || want_input;
            let mut d_in = need_input.then(|| vec![0.0; trace.inputs[idx].len()]);
            layer_backward(
                layer,
                &trace.inputs[idx],
                &d_out,
                h,
                w,
                layer_grads,
                d_in.as_deref_mut(),
            );
            match d_in {
                Some(d) => d_out = d,
                None => return None,
            }
        }
        Some(d_out)
    }

    pub(crate) fn trace(&self, x: &RealGrid) -> Result<[PlaneTrace; 2]> {
        self.check_input(x)?;
        let (h, w) = (x.n_sub(), x.n_sym());
        Ok([
            self.trace_plane(x.plane(0), h, w),
            self.trace_plane(x.plane(1), h, w),
        ])
    }

    pub fn forward(&self, x: &RealGrid) -> Result<RealGrid> {
        self.check_input(x)?;
        let (h, w) = (x.n_sub(), x.n_sym());
        let planes = [
            self.forward_plane(x.plane(0), h, w),
            self.forward_plane(x.plane(1), h, w),
        ];
        let out = RealGrid::from_planes(h, w, &planes)?;
        Ok(out)
    }

    /// Gradient of `mse(pred, label)` with respect to each output plane.
    fn output_gradient(pred: &RealGrid, label: &RealGrid) -> [Vec<f64>; 2] {
        let scale = 2.0 / pred.len() as f64;
        let diff: Vec<f64> = pred
            .as_slice()
            .iter()
            .zip(label.as_slice())
            .map(|(p, y)| scale * (p - y))
            .collect();
        [
            diff.iter().step_by(2).copied().collect(),
            diff.iter().skip(1).step_by(2).copied().collect(),
        ]
    }

    fn loss_gradients(
        &self,
        x: &RealGrid,
        label: &RealGrid,
        want_params: bool,
        want_input: bool,
    ) -> Result<(f64, Option<ParamGrads>, Option<RealGrid>)> {
        if !x.same_shape(label) {
            return Err(Error::Shape(format!(
                "input {:?} vs label {:?}",
                x.shape(),
                label.shape()
            )));
        }
        let traces = self.trace(x)?;
        let (h, w) = (x.n_sub(), x.n_sym());
        let pred = RealGrid::from_planes(h, w, &[traces[0].output.clone(), traces[1].output.clone()])?;
        let loss = mse_loss(&pred, label)?;
        let d_out = Self::output_gradient(&pred, label);
        let mut grads = want_params.then(|| ParamGrads::zeros_like(self));
        let mut d_planes = Vec::with_capacity(2);
        for (trace, d) in traces.iter().zip(d_out) {
            let d_in = self.backprop_plane(trace, d, h, w, grads.as_mut(), want_input, &[]);
            d_planes.extend(d_in);
        }
        let d_input = if want_input {
            Some(RealGrid::from_planes(h, w, &d_planes)?)
        } else {
            None
        };
        Ok((loss, grads, d_input))
    }

    /// Exact reverse-mode gradients of `mse(forward(x), label)`.
    pub fn backward(&self, x: &RealGrid, label: &RealGrid) -> Result<GradientBundle> {
        let (loss, d_params, d_input) = self.loss_gradients(x, label, true, true)?;
        Ok(GradientBundle {
            loss,
            d_params: d_params.expect("requested"),
            d_input: d_input.expect("requested"),
        })
    }

    /// Loss and gradient with respect to the input only.
    pub fn input_gradient(&self, x: &RealGrid, label: &RealGrid) -> Result<(f64, RealGrid)> {
        let (loss, _, d_input) = self.loss_gradients(x, label, false, true)?;
        Ok((loss, d_input.expect("requested")))
    }

    /// Loss and gradient with respect to the parameters only.
    pub fn param_gradient(&self, x: &RealGrid, label: &RealGrid) -> Result<(f64, ParamGrads)> {
        let (loss, grads, _) = self.loss_gradients(x, label, true, false)?;
        Ok((loss, grads.expect("requested")))
    }
}

/// Glorot-uniform weights `U(±√(6/(fan_in+fan_out)))` with zero biases.
pub fn init_glorot(arch: ArchTag, seed: u64) -> EstimatorModel {
    let mut model = EstimatorModel::zeros(arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in model.layers_mut() {
        let limit = glorot_limit(layer);
        for w in &mut layer.weights {
            *w = limit * (2.0 * rng.random::<f64>() - 1.0);
        }
    }
    model
}

/// Glorot bound of a conv layer, with fans counted over the receptive field.
pub fn glorot_limit(layer: &ConvLayer) -> f64 {
    let receptive = (layer.kh * layer.kw) as f64;
    let fan_in = layer.in_ch as f64 * receptive;
    let fan_out = layer.out_ch as f64 * receptive;
    (6.0 / (fan_in + fan_out)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_grid(n_sub: usize, n_sym: usize, seed: u64) -> RealGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealGrid::from_vec(
            n_sub,
            n_sym,
            (0..n_sub * n_sym * 2).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(init_glorot(ArchTag::Student, 0).param_count(), 6977);
        assert_eq!(init_glorot(ArchTag::Undefended, 0).param_count(), 6977);
        // 48·81+48 + 16·48·25+16 + 16·25+1
        assert_eq!(init_glorot(ArchTag::Teacher, 0).param_count(), 23553);
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let m = init_glorot(ArchTag::Teacher, 3);
        assert_eq!(m, init_glorot(ArchTag::Teacher, 3));
        assert_ne!(m, init_glorot(ArchTag::Teacher, 4));
        for layer in m.layers() {
            let limit = glorot_limit(layer);
            assert!(layer.weights.iter().all(|w| w.abs() <= limit));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
        // Initialization does not depend on the tag beyond the architecture.
        assert_eq!(
            init_glorot(ArchTag::Student, 9).layers(),
            init_glorot(ArchTag::Undefended, 9).layers()
        );
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = EstimatorModel::zeros(ArchTag::Student);
        let y = m.forward(&random_grid(20, 14, 1)).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_preserves_shape_and_is_deterministic() {
        for arch in [ArchTag::Undefended, ArchTag::Teacher, ArchTag::Student] {
            let m = init_glorot(arch, 1);
            let x = random_grid(30, 14, 2);
            let a = m.forward(&x).unwrap();
            assert_eq!(a.shape(), x.shape());
            assert_eq!(a, m.forward(&x).unwrap());
        }
        let m = init_glorot(ArchTag::Student, 1);
        let bad = RealGrid::new(4, 4, 3, vec![0.0; 48]).unwrap();
        assert!(matches!(m.forward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_residual_gives_zero_input_gradient() {
        let m = init_glorot(ArchTag::Student, 5);
        let x = random_grid(16, 14, 6);
        let y = m.forward(&x).unwrap();
        let g = m.backward(&x, &y).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.d_input.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.d_params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partial_gradients_agree_with_full_backward() {
        let m = init_glorot(ArchTag::Student, 5);
        let x = random_grid(16, 14, 6);
        let y = random_grid(16, 14, 7);
        let full = m.backward(&x, &y).unwrap();
        let (l1, gx) = m.input_gradient(&x, &y).unwrap();
        let (l2, gp) = m.param_gradient(&x, &y).unwrap();
        assert_eq!((l1, l2), (full.loss, full.loss));
        assert_eq!(gx, full.d_input);
        assert_eq!(gp, full.d_params);
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for arch in [ArchTag::Undefended, ArchTag::Teacher, ArchTag::Student] {
            let m = init_glorot(arch, 41);
            let x = random_grid(10, 6, 42);
            let y = random_grid(10, 6, 43);
            let g = m.backward(&x, &y).unwrap();
            let h = 1e-5;
            for _ in 0..8 {
                let i = rng.random_range(0..x.len());
                let mut data = x.as_slice().to_vec();
                data[i] += h;
                let plus = mse_loss(&m.forward(&RealGrid::from_vec(10, 6, data.clone()).unwrap()).unwrap(), &y).unwrap();
                data[i] -= 2.0 * h;
                let minus = mse_loss(&m.forward(&RealGrid::from_vec(10, 6, data).unwrap()).unwrap(), &y).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                let e = relative_error(fd, g.d_input.as_slice()[i]);
                assert!(e < 1e-4, "{arch} input {i}: fd {fd} vs {}", g.d_input.as_slice()[i]);
            }
            let analytic: Vec<f64> = g.d_params.iter().copied().collect();
            for _ in 0..8 {
                let j = rng.random_range(0..m.param_count());
                let mut p = m.clone();
                *p.params_mut().nth(j).unwrap() += h;
                let plus = mse_loss(&p.forward(&x).unwrap(), &y).unwrap();
                *p.params_mut().nth(j).unwrap() -= 2.0 * h;
                let minus = mse_loss(&p.forward(&x).unwrap(), &y).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                let e = relative_error(fd, analytic[j]);
                assert!(e < 1e-4, "{arch} param {j}: fd {fd} vs {}", analytic[j]);
            }
        }
    }

    #[test]
    fn rejects_broken_layer_chains() {
        let l1 = ConvLayer::new(4, 1, 3, 3, Activation::Selu).unwrap();
        let l2 = ConvLayer::new(1, 3, 3, 3, Activation::Selu).unwrap();
        assert!(EstimatorModel::from_layers(ArchTag::Student, vec![l1, l2]).is_err());
        assert!(EstimatorModel::from_layers(ArchTag::Student, vec![]).is_err());
    }

    #[test]
    fn arch_tag_parsing() {
        assert_eq!("Teacher".parse::<ArchTag>().unwrap(), ArchTag::Teacher);
        assert!("resnet".parse::<ArchTag>().is_err());
        for a in [ArchTag::Undefended, ArchTag::Teacher, ArchTag::Student] {
            assert_eq!(ArchTag::from_code(a.code()), Some(a));
        }
    }
}
