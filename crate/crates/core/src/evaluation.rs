//! Scoring predictions against ground truth and aggregating scores into
//! backbone × target × strategy matrices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{Prediction, Strategy};
use crate::providers::{Embedder, ProviderError};
use crate::schema::{Dimension, PersonaProfile, SlotKey};

pub const DEFAULT_EXPECTED_RUNS: usize = 5;
pub const DEFAULT_STABILITY_THRESHOLD: f64 = 0.03;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("embedding failed: {0}")]
    Embedding(#[from] ProviderError),
    #[error("insufficient runs: expected {expected}, got {got}")]
    InsufficientRuns { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, EvaluationError> {
    if a.len() != b.len() {
        return Err(EvaluationError::Shape(format!("vector lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(EvaluationError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub dimension: Dimension,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub slot: SlotKey,
    pub truth: String,
    pub predicted: String,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dimensions: Vec<DimensionScore>,
    pub overall: f64,
    pub unresolved: usize,
    pub slots: Vec<SlotOutcome>,
}

impl EvaluationReport {
    pub fn dimension(&self, d: Dimension) -> Option<f64> {
        self.dimensions.iter().find(|s| s.dimension == d).map(|s| s.cosine)
    }

    /// Fraction of schema slots predicted exactly.
    pub fn exact_match(&self) -> f64 {
        if self.slots.is_empty() {
            return 0.0;
        }
        self.slots.iter().filter(|s| s.correct).count() as f64 / self.slots.len() as f64
    }

    pub fn mismatches(&self) -> impl Iterator<Item = &SlotOutcome> {
        self.slots.iter().filter(|s| !s.correct)
    }
}

/// The text embedded for one dimension: its values in schema order.
pub fn dimension_text(profile: &PersonaProfile, d: Dimension) -> String {
    profile
        .assignments
        .iter()
        .filter(|a| a.dimension == d)
        .map(|a| a.value.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn score_prediction(
    pred: &PersonaProfile,
    truth: &PersonaProfile,
    embedder: &dyn Embedder,
) -> Result<EvaluationReport, EvaluationError> {
    let keys = |p: &PersonaProfile| p.assignments.iter().map(|a| a.key()).collect::<Vec<_>>();
    if keys(pred) != keys(truth) {
        return Err(EvaluationError::Shape("prediction and truth cover different schema slots".into()));
    }
    let dims: Vec<Dimension> = Dimension::ALL
        .into_iter()
        .filter(|d| truth.assignments.iter().any(|a| a.dimension == *d))
        .collect();
    if dims.is_empty() {
        return Err(EvaluationError::Invalid("profile has no assignments".into()));
    }
    let texts: Vec<String> = dims
        .iter()
        .flat_map(|d| [dimension_text(pred, *d), dimension_text(truth, *d)])
        .collect();
    let vectors = embedder.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(EvaluationError::Shape(format!(
            "embedder returned {} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    let mut dimensions = Vec::with_capacity(dims.len());
    for (i, d) in dims.iter().enumerate() {
        let cosine = cosine_similarity(&vectors[2 * i], &vectors[2 * i + 1])?;
        dimensions.push(DimensionScore { dimension: *d, cosine });
    }
    let overall = dimensions.iter().map(|s| s.cosine).sum::<f64>() / dimensions.len() as f64;
    let slots = pred
        .assignments
        .iter()
        .zip(&truth.assignments)
        .map(|(p, t)| SlotOutcome {
            slot: t.key(),
            truth: t.value.clone(),
            predicted: p.value.clone(),
            correct: p.value == t.value,
        })
        .collect();
    Ok(EvaluationReport { dimensions, overall, unresolved: 0, slots })
}

/// Scores a strategy prediction, carrying over its unresolved-slot count.
pub fn score_strategy_prediction(
    pred: &Prediction,
    truth: &PersonaProfile,
    embedder: &dyn Embedder,
) -> Result<EvaluationReport, EvaluationError> {
    let mut report = score_prediction(&pred.profile, truth, embedder)?;
    report.unresolved = pred.unresolved.len();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Mean and sample standard deviation over exactly `expected_runs` scores.
/// Passes when the deviation is strictly below `threshold`.
pub fn stability(run_scores: &[f64], expected_runs: usize, threshold: f64) -> Result<StabilityReport, EvaluationError> {
    if expected_runs < 2 {
        return Err(EvaluationError::Invalid(format!(
            "sample deviation needs at least 2 runs, expected_runs = {expected_runs}"
        )));
    }
    if run_scores.len() < expected_runs {
        return Err(EvaluationError::InsufficientRuns { expected: expected_runs, got: run_scores.len() });
    }
    if run_scores.len() > expected_runs {
        return Err(EvaluationError::Shape(format!(
            "expected {expected_runs} runs, got {}",
            run_scores.len()
        )));
    }
    // Welford's update.
    let (mut mean, mut m2) = (0.0f64, 0.0f64);
    for (i, x) in run_scores.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = run_scores.len();
    let std = (m2.max(0.0) / (n - 1) as f64).sqrt();
    Ok(StabilityReport { n, mean, std, threshold, pass: std < threshold })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub runs: usize,
    pub by_dimension: BTreeMap<Dimension, usize>,
    pub by_slot: BTreeMap<String, usize>,
    /// slot → "truth -> predicted" → count
    pub confusions: BTreeMap<String, BTreeMap<String, usize>>,
}

pub fn error_breakdown(reports: &[EvaluationReport], truths: &[PersonaProfile]) -> Result<ErrorBreakdown, EvaluationError> {
    if reports.len() != truths.len() {
        return Err(EvaluationError::Shape(format!(
            "{} reports but {} truths",
            reports.len(),
            truths.len()
        )));
    }
    let mut out = ErrorBreakdown {
        runs: reports.len(),
        by_dimension: Dimension::ALL.into_iter().map(|d| (d, 0)).collect(),
        ..Default::default()
    };
    for (i, (report, truth)) in reports.iter().zip(truths).enumerate() {
        let aligned = report.slots.len() == truth.assignments.len()
            && report
                .slots
                .iter()
                .zip(&truth.assignments)
                .all(|(s, a)| s.slot == a.key() && s.truth == a.value);
        if !aligned {
            return Err(EvaluationError::Shape(format!("report {i} does not match its truth profile")));
        }
        for slot in &report.slots {
            let key = slot.slot.to_string();
            out.by_slot.entry(key.clone()).or_insert(0);
            if slot.predicted != slot.truth {
                *out.by_dimension.entry(slot.slot.dimension).or_default() += 1;
                *out.by_slot.entry(key.clone()).or_default() += 1;
                *out.confusions
                    .entry(key)
                    .or_default()
                    .entry(format!("{} -> {}", slot.truth, slot.predicted))
                    .or_default() += 1;
            }
        }
    }
    Ok(out)
}

/// One scored pipeline run, the unit fed to [`aggregate_matrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub backbone: String,
    pub target: String,
    pub strategy: Strategy,
    pub run: usize,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetColumn {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

/// Column and row order for the rendered matrix. Backbones and targets not
/// listed are appended in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixLayout {
    #[serde(default)]
    pub backbones: Vec<String>,
    #[serde(default)]
    pub targets: Vec<TargetColumn>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub backbone: String,
    pub target: String,
    pub strategy: Strategy,
    pub mean: f64,
    /// Overall scores ordered by run index.
    pub runs: Vec<f64>,
    /// Sample deviation; absent for a single run.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub backbone: String,
    pub strategy: Strategy,
    /// Cell means aligned with [`MatrixReport::targets`]; `None` marks a gap.
    pub cells: Vec<Option<f64>>,
    /// Mean of the present cells.
    pub avg: Option<f64>,
    pub group_means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub backbone: String,
    pub target: String,
    pub strategy: Option<Strategy>,
    pub run: Option<usize>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStability {
    pub backbone: String,
    pub target: String,
    pub strategy: Strategy,
    pub result: Result<StabilityReport, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub targets: Vec<TargetColumn>,
    pub cells: Vec<MatrixCell>,
    pub rows: Vec<MatrixRow>,
    #[serde(default)]
    pub stability: Vec<CellStability>,
    #[serde(default)]
    pub failures: Vec<CellFailure>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ordered(layout: &[String], seen: &BTreeSet<String>) -> Vec<String> {
    let mut out: Vec<String> = layout.iter().filter(|x| seen.contains(*x)).cloned().collect();
    out.dedup();
    out.extend(seen.iter().filter(|x| !layout.contains(x)).cloned());
    out
}

/// Groups run scores into cells and per-(backbone, strategy) rows.
/// The result is independent of input order.
pub fn aggregate_matrix(scores: &[RunScore], layout: &MatrixLayout) -> MatrixReport {
    let mut warnings = Vec::new();
    let mut groups: BTreeMap<(String, String, Strategy), Vec<(usize, f64)>> = BTreeMap::new();
    for s in scores {
        if !s.overall.is_finite() {
            warnings.push(format!(
                "dropped non-finite score for {}/{}/{} run {}",
                s.backbone, s.target, s.strategy, s.run
            ));
            continue;
        }
        groups
            .entry((s.backbone.clone(), s.target.clone(), s.strategy))
            .or_default()
            .push((s.run, s.overall));
    }

    let seen_targets: BTreeSet<String> = layout
        .targets
        .iter()
        .map(|t| t.id.clone())
        .chain(groups.keys().map(|k| k.1.clone()))
        .collect();
    let target_ids = ordered(&layout.targets.iter().map(|t| t.id.clone()).collect::<Vec<_>>(), &seen_targets);
    let targets: Vec<TargetColumn> = target_ids
        .iter()
        .map(|id| {
            layout
                .targets
                .iter()
                .find(|t| &t.id == id)
                .cloned()
                .unwrap_or(TargetColumn { id: id.clone(), group: None })
        })
        .collect();
    let seen_backbones: BTreeSet<String> = groups.keys().map(|k| k.0.clone()).collect();
    let backbones = ordered(&layout.backbones, &seen_backbones);

    let mut cells = Vec::new();
    for ((backbone, target, strategy), mut runs) in groups {
        runs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let values: Vec<f64> = runs.into_iter().map(|(_, v)| v).collect();
        let m = mean(&values);
        let std = (values.len() > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
            (ss / (values.len() - 1) as f64).sqrt()
        });
        cells.push(MatrixCell { backbone, target, strategy, mean: m, runs: values, std });
    }

    let mut rows = Vec::new();
    for backbone in &backbones {
        for strategy in Strategy::ALL {
            let row_cells: Vec<Option<f64>> = targets
                .iter()
                .map(|t| {
                    cells
                        .iter()
                        .find(|c| &c.backbone == backbone && c.target == t.id && c.strategy == strategy)
                        .map(|c| c.mean)
                })
                .collect();
            let present: Vec<f64> = row_cells.iter().flatten().copied().collect();
            if present.is_empty() {
                continue;
            }
            let mut by_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for (t, c) in targets.iter().zip(&row_cells) {
                if let (Some(g), Some(v)) = (&t.group, c) {
                    by_group.entry(g.clone()).or_default().push(*v);
                }
            }
            rows.push(MatrixRow {
                backbone: backbone.clone(),
                strategy,
                cells: row_cells,
                avg: Some(mean(&present)),
                group_means: by_group.into_iter().map(|(g, v)| (g, mean(&v))).collect(),
            });
        }
    }
    for t in &targets {
        if !cells.iter().any(|c| c.target == t.id) {
            warnings.push(format!("target {} has no scored runs; column left empty", t.id));
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    MatrixReport { targets, cells, rows, stability: Vec::new(), failures: Vec::new(), warnings }
}

/// Half-away-from-zero rounding to `decimals` places. The value is first
/// snapped to 9 decimals so binary noise such as 0.77499999999 prints as
/// 0.78.
pub fn round_half_away(x: f64, decimals: i32) -> f64 {
    let snapped = (x * 1e9).round() / 1e9;
    let p = 10f64.powi(decimals);
    (snapped * p).round() / p
}

pub fn display2(x: f64) -> String {
    format!("{:.2}", round_half_away(x, 2))
}

impl MatrixReport {
    pub fn cell(&self, backbone: &str, target: &str, strategy: Strategy) -> Option<&MatrixCell> {
        self.cells
            .iter()
            .find(|c| c.backbone == backbone && c.target == target && c.strategy == strategy)
    }

    pub fn row(&self, backbone: &str, strategy: Strategy) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.backbone == backbone && r.strategy == strategy)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Persona discovery similarity\n\n");
        let mut groups: Vec<(String, Vec<&str>)> = Vec::new();
        for t in &self.targets {
            if let Some(g) = &t.group {
                match groups.iter_mut().find(|(name, _)| name == g) {
                    Some((_, ids)) => ids.push(&t.id),
                    None => groups.push((g.clone(), vec![&t.id])),
                }
            }
        }
        for (g, ids) in &groups {
            let _ = writeln!(out, "**{g} targets**: {}", ids.join(", "));
        }
        if !groups.is_empty() {
            out.push('\n');
        }
        let headers: Vec<String> = self
            .targets
            .iter()
            .map(|t| match &t.group {
                Some(g) => format!("{} ({g})", t.id),
                None => t.id.clone(),
            })
            .collect();
        let _ = writeln!(out, "| Backbone | Method | {} | Avg. |", headers.join(" | "));
        let _ = writeln!(out, "|---|---|{}---|", "---|".repeat(self.targets.len()));
        let mut last_backbone: Option<&str> = None;
        for row in &self.rows {
            let name = if last_backbone == Some(row.backbone.as_str()) { "" } else { row.backbone.as_str() };
            last_backbone = Some(&row.backbone);
            let cells: Vec<String> = row
                .cells
                .iter()
                .map(|c| c.map(display2).unwrap_or_else(|| "n/a".into()))
                .collect();
            let avg = row.avg.map(display2).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(out, "| {name} | {} | {} | {avg} |", row.strategy.display_name(), cells.join(" | "));
        }
        if self.rows.iter().any(|r| !r.group_means.is_empty()) {
            out.push_str("\n## Group averages\n\n| Backbone | Method | Group | Mean |\n|---|---|---|---|\n");
            for row in &self.rows {
                for (g, m) in &row.group_means {
                    let _ = writeln!(
                        out,
                        "| {} | {} | {g} | {} |",
                        row.backbone,
                        row.strategy.display_name(),
                        display2(*m)
                    );
                }
            }
        }
        if !self.stability.is_empty() {
            out.push_str("\n## Stability\n\n| Backbone | Target | Method | Runs | Mean | Std | Status |\n|---|---|---|---|---|---|---|\n");
            for s in &self.stability {
                let _ = match &s.result {
                    Ok(r) => writeln!(
                        out,
                        "| {} | {} | {} | {} | {:.4} | {:.4} | {} |",
                        s.backbone,
                        s.target,
                        s.strategy.display_name(),
                        r.n,
                        r.mean,
                        r.std,
                        if r.pass { "pass" } else { "fail" }
                    ),
                    Err(e) => writeln!(
                        out,
                        "| {} | {} | {} | - | - | - | {e} |",
                        s.backbone,
                        s.target,
                        s.strategy.display_name()
                    ),
                };
            }
        }
        if !self.failures.is_empty() {
            out.push_str("\n## Failed runs\n\n");
            for f in &self.failures {
                let strategy = f.strategy.map(|s| s.to_string()).unwrap_or_else(|| "all".into());
                let run = f.run.map(|r| r.to_string()).unwrap_or_else(|| "-".into());
                let _ = writeln!(out, "- {}/{}/{strategy} run {run}: {}", f.backbone, f.target, f.error);
            }
        }
        if !self.warnings.is_empty() {
            out.push_str("\n## Warnings\n\n");
            for w in &self.warnings {
                let _ = writeln!(out, "- {w}");
            }
        }
        out
    }
}
