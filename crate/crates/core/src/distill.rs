//! Defensive distillation: a wide teacher is trained on ground truth, then
//! a compact student learns from a mix of the teacher's behaviour and the
//! labels. The student is the hardened model that gets deployed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Dataset, RealGrid};
use crate::neuralnet::{
    fit, gemm, init_glorot, mean_mse, mse_loss, mse_slices, train, train_fresh, ArchTag,
    EstimatorModel, FeatureKind, LossHistory, ParamGrads, PlaneTrace, SampleGradient,
    TrainConfig,
};

/// RNG stream for the feature projection's initial weights.
const PROJECTION_STREAM: u64 = 7;

/// What the student imitates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// The teacher's output grid.
    #[default]
    OutputMse,
    /// The teacher's post-activation feature map at `matched_layer`.
    ActivationMse,
    /// The teacher's pre-activation feature map at `matched_layer`.
    RepresentationMse,
}

impl LossVariant {
    fn feature_kind(self) -> Option<FeatureKind> {
        match self {
            LossVariant::OutputMse => None,
            LossVariant::ActivationMse => Some(FeatureKind::Activation),
            LossVariant::RepresentationMse => Some(FeatureKind::Representation),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Weight of the imitation term; `1 − alpha` weighs the label term.
    pub alpha: f64,
    pub loss_variant: LossVariant,
    /// Layer whose features are matched by the feature variants.
    pub matched_layer: usize,
    pub train: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            loss_variant: LossVariant::OutputMse,
            matched_layer: 0,
            train: TrainConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, teacher: &EstimatorModel) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        let student_layers = ArchTag::Student.layer_specs().len();
        if self.loss_variant != LossVariant::OutputMse
            && (self.matched_layer >= student_layers || self.matched_layer >= teacher.layers().len())
        {
            return Err(Error::InvalidArgument(format!(
                "matched layer {} does not exist in both models",
                self.matched_layer
            )));
        }
        self.train.validate()
    }
}

/// Trains the teacher architecture on ground-truth labels from `seed`.
pub fn train_teacher(
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(EstimatorModel, LossHistory)> {
    let cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    train_fresh(ArchTag::Teacher, data, val, &cfg)
}

/// `alpha·mse(s, t) + (1 − alpha)·mse(s, y)` on output grids.
pub fn distill_loss(
    student_out: &RealGrid,
    teacher_out: &RealGrid,
    label: &RealGrid,
    alpha: f64,
) -> Result<f64> {
    let imitation = mse_loss(student_out, teacher_out)?;
    let truth = mse_loss(student_out, label)?;
    Ok(alpha * imitation + (1.0 - alpha) * truth)
}

/// Per-sample gradients of the distillation objective for the student.
struct DistillObjective<'a> {
    data: &'a Dataset,
    teacher: &'a EstimatorModel,
    /// Precomputed teacher predictions for the output variant.
    teacher_outputs: Vec<RealGrid>,
    cfg: &'a DistillConfig,
    /// `(teacher channels, student channels)` of the matched layer.
    projection_shape: (usize, usize),
}

impl DistillObjective<'_> {
    fn output_gradient(
        &self,
        student: &EstimatorModel,
        traces: &[PlaneTrace; 2],
        index: usize,
    ) -> Result<(f64, ParamGrads)> {
        let x = &self.data.inputs()[index];
        let (h, w) = (x.n_sub(), x.n_sym());
        let pred = RealGrid::from_planes(h, w, &[traces[0].output.clone(), traces[1].output.clone()])?;
        let teacher = &self.teacher_outputs[index];
        let label = &self.data.labels()[index];
        let alpha = self.cfg.alpha;
        let loss = distill_loss(&pred, teacher, label, alpha)?;
        let scale = 2.0 / pred.len() as f64;
        let d: Vec<f64> = pred
            .as_slice()
            .iter()
            .zip(teacher.as_slice().iter().zip(label.as_slice()))
            .map(|(p, (t, y))| alpha * (scale * (p - t)) + (1.0 - alpha) * (scale * (p - y)))
            .collect();
        let mut grads = ParamGrads::zeros_like(student);
        for (c, trace) in traces.iter().enumerate() {
            let d_plane = d.iter().skip(c).step_by(2).copied().collect();
            student.backprop_plane(trace, d_plane, h, w, Some(&mut grads), false, &[]);
        }
        Ok((loss, grads))
    }

    fn feature_gradient(
        &self,
        student: &EstimatorModel,
        projection: &[f64],
        traces: &[PlaneTrace; 2],
        index: usize,
        kind: FeatureKind,
    ) -> Result<(f64, ParamGrads, Vec<f64>)> {
        let x = &self.data.inputs()[index];
        let label = &self.data.labels()[index];
        let (h, w) = (x.n_sub(), x.n_sym());
        let p = h * w;
        let layer = self.cfg.matched_layer;
        let (ct, cs) = self.projection_shape;
        let alpha = self.cfg.alpha;
        let teacher_traces = self.teacher.trace(x)?;

        let pred = RealGrid::from_planes(h, w, &[traces[0].output.clone(), traces[1].output.clone()])?;
        let truth = mse_loss(&pred, label)?;
        let scale_out = 2.0 / pred.len() as f64;
        let d_out: Vec<f64> = pred
            .as_slice()
            .iter()
            .zip(label.as_slice())
            .map(|(p, y)| (1.0 - alpha) * (scale_out * (p - y)))
            .collect();

        let n_feat = (ct * p * 2) as f64;
        let mut imitation = 0.0;
        let mut d_proj = vec![0.0; ct * cs];
        let mut grads = ParamGrads::zeros_like(student);
        for c in 0..2 {
            let s = traces[c].feature(layer, kind);
            let t = teacher_traces[c].feature(layer, kind);
            let mut r = vec![0.0; ct * p];
            gemm(ct, cs, p, projection, (cs, 1), s, (p, 1), 0.0, &mut r, p);
            r.iter_mut().zip(t).for_each(|(a, b)| *a -= b);
            imitation += r.iter().map(|v| v * v).sum::<f64>();
            let coeff = alpha * 2.0 / n_feat;
            let mut d_s = vec![0.0; cs * p];
            gemm(cs, ct, p, projection, (1, cs), &r, (p, 1), 0.0, &mut d_s, p);
            d_s.iter_mut().for_each(|v| *v *= coeff);
            let mut d_proj_plane = vec![0.0; ct * cs];
            gemm(ct, p, cs, &r, (p, 1), s, (1, p), 0.0, &mut d_proj_plane, cs);
            d_proj
                .iter_mut()
                .zip(&d_proj_plane)
                .for_each(|(a, b)| *a += coeff * b);
            let d_plane = d_out.iter().skip(c).step_by(2).copied().collect();
            student.backprop_plane(
                &traces[c],
                d_plane,
                h,
                w,
                Some(&mut grads),
                false,
                &[(layer, kind, &d_s)],
            );
        }
        let loss = alpha * (imitation / n_feat) + (1.0 - alpha) * truth;
        Ok((loss, grads, d_proj))
    }
}

impl SampleGradient for DistillObjective<'_> {
    fn len(&self) -> usize {
        self.data.len()
    }

    fn gradient(
        &self,
        student: &EstimatorModel,
        extra: &[f64],
        index: usize,
    ) -> Result<(f64, ParamGrads, Vec<f64>)> {
        let traces = student.trace(&self.data.inputs()[index])?;
        match self.cfg.loss_variant.feature_kind() {
            None => {
                let (loss, grads) = self.output_gradient(student, &traces, index)?;
                Ok((loss, grads, Vec::new()))
            }
            Some(kind) => self.feature_gradient(student, extra, &traces, index, kind),
        }
    }
}

/// Glorot-uniform `ct × cs` projection from student to teacher channels.
fn init_projection(ct: usize, cs: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PROJECTION_STREAM);
    let limit = (6.0 / (ct + cs) as f64).sqrt();
    (0..ct * cs)
        .map(|_| limit * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

/// Trains a fresh student (Glorot-initialized from `cfg.train.seed`)
/// against a frozen teacher.
///
/// With `alpha = 0` the imitation term vanishes and this is exactly
/// supervised training of the student architecture.
pub fn train_student(
    teacher: &EstimatorModel,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &DistillConfig,
) -> Result<(EstimatorModel, LossHistory)> {
    cfg.validate(teacher)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let student = init_glorot(ArchTag::Student, cfg.train.seed);
    if cfg.alpha == 0.0 {
        return train(student, data, val, &cfg.train);
    }
    let (projection_shape, extra) = match cfg.loss_variant {
        LossVariant::OutputMse => ((0, 0), Vec::new()),
        _ => {
            let ct = teacher.layers()[cfg.matched_layer].out_ch;
            let cs = student.layers()[cfg.matched_layer].out_ch;
            ((ct, cs), init_projection(ct, cs, cfg.train.seed))
        }
    };
    let teacher_outputs = if cfg.loss_variant == LossVariant::OutputMse {
        data.inputs()
            .par_iter()
            .map(|x| teacher.forward(x))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let objective = DistillObjective {
        data,
        teacher,
        teacher_outputs,
        cfg,
        projection_shape,
    };
    let (student, _, history) = fit(student, extra, &objective, val, &cfg.train)?;
    Ok((student, history))
}

/// Benign MSEs and settings of one teacher/student run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub config: DistillConfig,
    pub teacher_seed: u64,
    pub student_seed: u64,
    /// Benign test MSE keyed by `"teacher"` and `"student"`.
    pub benign_mse: BTreeMap<String, f64>,
    pub teacher_history: LossHistory,
    pub student_history: LossHistory,
}

impl DistillReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Teacher then student, both from `cfg.train.seed`, evaluated on `test`.
pub fn defend_pipeline(
    train_set: &Dataset,
    test: &Dataset,
    cfg: &DistillConfig,
) -> Result<(EstimatorModel, EstimatorModel, DistillReport)> {
    let seed = cfg.train.seed;
    let (teacher, teacher_history) = train_teacher(train_set, Some(test), &cfg.train, seed)?;
    let (student, student_history) = train_student(&teacher, train_set, Some(test), cfg)?;
    let benign_mse = BTreeMap::from([
        ("teacher".to_string(), mean_mse(&teacher, test)?),
        ("student".to_string(), mean_mse(&student, test)?),
    ]);
    let report = DistillReport {
        config: cfg.clone(),
        teacher_seed: seed,
        student_seed: seed,
        benign_mse,
        teacher_history,
        student_history,
    };
    Ok((teacher, student, report))
}

/// Mean over planes of the matched-feature MSE, exposed for inspection.
pub fn feature_mse(a: &[f64], b: &[f64]) -> f64 {
    mse_slices(a, b)
}
