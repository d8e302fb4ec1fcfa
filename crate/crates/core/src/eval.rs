//! Benign and adversarial MSE, attack success rate, attack × ε sweeps and
//! CSV/SVG reports.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{attack_batch, AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::grid::{Dataset, RealGrid};
use crate::neuralnet::{mse_loss, EstimatorModel};

/// Column order shared by the CSV report and the stdout table.
pub const CSV_HEADER: [&str; 6] = ["model", "attack", "epsilon", "mse_benign", "mse_malicious", "asr"];

/// Per-sample `mse_loss(forward(x), y)`.
pub fn per_sample_mse(m: &EstimatorModel, inputs: &[RealGrid], labels: &[RealGrid]) -> Result<Vec<f64>> {
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} inputs vs {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    inputs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, y)| mse_loss(&m.forward(x)?, y))
        .collect()
}

/// Mean of the per-sample relative MSE increase `(adv − benign) / adv`.
pub fn asr_from_mse(benign: &[f64], adversarial: &[f64]) -> Result<f64> {
    if benign.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if benign.len() != adversarial.len() {
        return Err(Error::Shape(format!(
            "{} benign vs {} adversarial losses",
            benign.len(),
            adversarial.len()
        )));
    }
    if let Some(i) = adversarial.iter().position(|&a| a == 0.0) {
        return Err(Error::DivisionByZero(format!(
            "adversarial MSE of sample {i} is zero"
        )));
    }
    let total: f64 = benign
        .iter()
        .zip(adversarial)
        .map(|(b, a)| (a - b) / a)
        .sum();
    Ok(total / benign.len() as f64)
}

/// Attack success rate of `perturbed` against `m`.
pub fn asr(
    m: &EstimatorModel,
    originals: &[RealGrid],
    perturbed: &[RealGrid],
    labels: &[RealGrid],
) -> Result<f64> {
    if originals.len() != perturbed.len() {
        return Err(Error::Shape(format!(
            "{} originals vs {} perturbed",
            originals.len(),
            perturbed.len()
        )));
    }
    if originals.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let benign = per_sample_mse(m, originals, labels)?;
    let adversarial = per_sample_mse(m, perturbed, labels)?;
    asr_from_mse(&benign, &adversarial)
}

/// Mean benign MSE over `test`.
pub fn evaluate_model(m: &EstimatorModel, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let losses = per_sample_mse(m, test.inputs(), test.labels())?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Mean Euclidean norm of the loss gradient with respect to the input.
pub fn mean_input_gradient_norm(m: &EstimatorModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let norms = data
        .inputs()
        .par_iter()
        .zip(data.labels().par_iter())
        .map(|(x, y)| {
            let (_, g) = m.input_gradient(x, y)?;
            Ok(g.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(norms.iter().sum::<f64>() / norms.len() as f64)
}

/// SHA-256 over the shapes and little-endian bytes of inputs and labels.
pub fn dataset_fingerprint(data: &Dataset) -> String {
    let mut hasher = Sha256::new();
    hasher.update((data.len() as u64).to_le_bytes());
    for g in data.inputs().iter().chain(data.labels()) {
        let (a, b, c) = g.shape();
        for d in [a, b, c] {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in g.as_slice() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub model_tag: String,
    pub attack_kind: AttackKind,
    /// `None` for attacks without a budget.
    pub epsilon: Option<f64>,
    pub mse_benign: f64,
    pub mse_malicious: f64,
    pub asr: f64,
}

impl EvalRow {
    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        self.model_tag
            .cmp(&other.model_tag)
            .then_with(|| self.attack_kind.name().cmp(other.attack_kind.name()))
            .then_with(|| {
                self.epsilon
                    .unwrap_or(f64::NEG_INFINITY)
                    .total_cmp(&other.epsilon.unwrap_or(f64::NEG_INFINITY))
            })
    }

    fn cells(&self) -> [String; 6] {
        [
            self.model_tag.clone(),
            self.attack_kind.name().to_string(),
            self.epsilon.map_or_else(|| "-".to_string(), |e| e.to_string()),
            self.mse_benign.to_string(),
            self.mse_malicious.to_string(),
            self.asr.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub dataset_fingerprint: String,
    pub seed: u64,
}

impl EvalReport {
    /// Looks up one cell; `epsilon` is ignored for budget-free attacks.
    pub fn find(&self, model_tag: &str, kind: AttackKind, epsilon: f64) -> Option<&EvalRow> {
        self.rows.iter().find(|r| {
            r.model_tag == model_tag
                && r.attack_kind == kind
                && r.epsilon.is_none_or(|e| e == epsilon)
        })
    }
}

/// Evaluates every model × attack × ε cell on `test`. Budget-free attacks
/// run once per model. Rows come back sorted by model, attack and ε.
pub fn run_sweep(
    models: &[(String, EstimatorModel)],
    attacks: &[AttackKind],
    eps_list: &[f64],
    test: &Dataset,
    seed: u64,
) -> Result<EvalReport> {
    if models.is_empty() || attacks.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one model and one attack".into(),
        ));
    }
    if eps_list.is_empty() && attacks.iter().any(|a| a.uses_epsilon()) {
        return Err(Error::InvalidArgument("epsilon list is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = Vec::new();
    for (tag, model) in models {
        let benign = per_sample_mse(model, test.inputs(), test.labels())?;
        let mse_benign = mean(&benign);
        for &kind in attacks {
            let budgets: Vec<Option<f64>> = if kind.uses_epsilon() {
                eps_list.iter().map(|&e| Some(e)).collect()
            } else {
                vec![None]
            };
            for epsilon in budgets {
                let cfg = AttackConfig::new(kind, epsilon.unwrap_or(0.0)).with_seed(seed);
                let batch = attack_batch(model, test, &cfg)?;
                let adversarial = per_sample_mse(model, &batch.perturbed, &batch.labels)?;
                let row = EvalRow {
                    model_tag: tag.clone(),
                    attack_kind: kind,
                    epsilon,
                    mse_benign,
                    mse_malicious: mean(&adversarial),
                    asr: asr_from_mse(&benign, &adversarial)?,
                };
                log::info!("{}", row.cells().join(" "));
                rows.push(row);
            }
        }
    }
    rows.sort_by(EvalRow::sort_key_cmp);
    Ok(EvalReport {
        rows,
        dataset_fingerprint: dataset_fingerprint(test),
        seed,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// CSV text of the report, rows in sorted order.
pub fn report_csv(r: &EvalReport) -> String {
    let mut rows: Vec<&EvalRow> = r.rows.iter().collect();
    rows.sort_by(|a, b| a.sort_key_cmp(b));
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.cells().join(","));
        out.push('\n');
    }
    out
}

/// Fixed-width text table with the CSV columns.
pub fn format_table(r: &EvalReport) -> String {
    let mut rows: Vec<&EvalRow> = r.rows.iter().collect();
    rows.sort_by(|a, b| a.sort_key_cmp(b));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<6} {:>7} {:>14} {:>14} {:>10}",
        CSV_HEADER[0], CSV_HEADER[1], CSV_HEADER[2], CSV_HEADER[3], CSV_HEADER[4], CSV_HEADER[5]
    );
    for row in rows {
        let eps = row.epsilon.map_or_else(|| "-".to_string(), |e| e.to_string());
        let _ = writeln!(
            out,
            "{:<12} {:<6} {:>7} {:>14.6} {:>14.6} {:>10.6}",
            row.model_tag,
            row.attack_kind.name(),
            eps,
            row.mse_benign,
            row.mse_malicious,
            row.asr
        );
    }
    out
}

const CHART_W: f64 = 320.0;
const CHART_H: f64 = 240.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One chart per budgeted attack plotting malicious MSE against ε, with a
/// polyline per model. Budget-free attacks have no ε axis and are omitted.
pub fn report_svg(r: &EvalReport) -> String {
    let mut attacks: Vec<AttackKind> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for row in r.rows.iter().filter(|row| row.epsilon.is_some()) {
        if !attacks.contains(&row.attack_kind) {
            attacks.push(row.attack_kind);
        }
        if !models.contains(&row.model_tag.as_str()) {
            models.push(&row.model_tag);
        }
    }
    attacks.sort_by_key(|a| a.name());
    models.sort();
    let panel_w = CHART_W + 2.0 * MARGIN;
    let panel_h = CHART_H + 2.0 * MARGIN;
    let width = panel_w * attacks.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{panel_h}" font-family="sans-serif" font-size="11">"#
    );
    for (panel, &kind) in attacks.iter().enumerate() {
        let series: Vec<(&str, Vec<(f64, f64)>)> = models
            .iter()
            .map(|&tag| {
                let mut pts: Vec<(f64, f64)> = r
                    .rows
                    .iter()
                    .filter(|row| row.model_tag == tag && row.attack_kind == kind)
                    .filter_map(|row| row.epsilon.map(|e| (e, row.mse_malicious)))
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                (tag, pts)
            })
            .filter(|(_, pts)| !pts.is_empty())
            .collect();
        let all = series.iter().flat_map(|(_, p)| p.iter());
        let (x_max, y_max) = all.fold((0.0f64, 0.0f64), |(x, y), &(e, m)| (x.max(e), y.max(m)));
        let x_max = if x_max > 0.0 { x_max } else { 1.0 };
        let y_max = if y_max > 0.0 { y_max } else { 1.0 };
        let ox = panel as f64 * panel_w + MARGIN;
        let oy = MARGIN + CHART_H;
        let _ = writeln!(out, r#"<g id="{}">"#, kind.name());
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            ox + CHART_W / 2.0,
            MARGIN / 2.0,
            escape(kind.name())
        );
        let _ = writeln!(
            out,
            r#"<line x1="{ox}" y1="{oy}" x2="{}" y2="{oy}" stroke="black"/>"#,
            ox + CHART_W
        );
        let _ = writeln!(
            out,
            r#"<line x1="{ox}" y1="{oy}" x2="{ox}" y2="{MARGIN}" stroke="black"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">epsilon (max {x_max})</text>"#,
            ox + CHART_W / 2.0,
            oy + 28.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="start">MSE (max {y_max:.4})</text>"#,
            ox,
            MARGIN - 4.0
        );
        for (i, (tag, pts)) in series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let points: Vec<String> = pts
                .iter()
                .map(|&(e, m)| {
                    format!("{:.2},{:.2}", ox + e / x_max * CHART_W, oy - m / y_max * CHART_H)
                })
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline data-model="{}" data-attack="{}" fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
                escape(tag),
                kind.name(),
                points.join(" ")
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" fill="{colour}">{}</text>"#,
                ox + 8.0,
                MARGIN + 14.0 * (i + 1) as f64,
                escape(tag)
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}

/// Writes the CSV and, when requested, the SVG chart.
pub fn emit_report(r: &EvalReport, csv_path: &Path, svg_path: Option<&Path>) -> Result<()> {
    if r.rows.is_empty() {
        return Err(Error::InvalidArgument("report has no rows".into()));
    }
    fs::write(csv_path, report_csv(r))?;
    if let Some(path) = svg_path {
        fs::write(path, report_svg(r))?;
    }
    Ok(())
}
