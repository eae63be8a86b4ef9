//! Cost and energy derivation, benchmark aggregation, Pareto frontiers,
//! objective rankings, and runtime-ordering audits.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::ProfileSample;
use crate::flops::{check_context, query_total_flops};
use crate::registry::{HardwareProfile, ModelArchitecture};
use crate::runtime_model::RuntimeModelParams;

/// Slack allowed when comparing a measured runtime against a fitted one.
pub const AUDIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("no queries to aggregate")]
    NoQueries,
    #[error("no fitted parameters for model '{0}'")]
    MissingParams(String),
    #[error("no samples to audit")]
    NoSamples,
    #[error("metric value for '{model}' must be > 0, got {value}")]
    NonPositiveMetric { model: String, value: f64 },
    #[error("parameter sets belong to different models ('{0}' vs '{1}')")]
    ModelMismatch(String, String),
    #[error("invalid query on line {line}: {reason}")]
    InvalidQuery { line: usize, reason: String },
    #[error("unknown {kind} '{value}'")]
    UnknownName { kind: &'static str, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Idealized dollar cost: seconds x accelerators x rate.
pub fn idealized_cost(t_idealized: f64, hw: &HardwareProfile) -> f64 {
    t_idealized * hw.accelerator_count as f64 * hw.cost_rate
}

/// Idealized energy in joules: seconds x accelerators x watts.
pub fn idealized_energy(t_idealized: f64, hw: &HardwareProfile) -> f64 {
    t_idealized * hw.accelerator_count as f64 * hw.power_draw
}

/// One benchmark query with pre-scored per-model accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub scenario: String,
    pub query_id: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_by_model: Option<BTreeMap<String, f64>>,
    /// Measured end-to-end runtimes, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_runtime_by_model: Option<BTreeMap<String, f64>>,
}

impl QueryRecord {
    fn validate(&self) -> Result<(), String> {
        if self.prompt_tokens == 0 || self.output_tokens == 0 {
            return Err("prompt_tokens and output_tokens must be >= 1".into());
        }
        if let Some(acc) = &self.accuracy_by_model {
            if let Some((m, v)) = acc.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                return Err(format!("accuracy {v} for '{m}' is outside [0, 1]"));
            }
        }
        if let Some(raw) = &self.raw_runtime_by_model {
            if let Some((m, v)) = raw.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                return Err(format!("raw runtime {v} for '{m}' must be > 0"));
            }
        }
        Ok(())
    }
}

pub fn read_queries_jsonl(reader: impl BufRead) -> Result<Vec<QueryRecord>, AnalysisError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryRecord = serde_json::from_str(&line).map_err(|e| AnalysisError::InvalidQuery {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        q.validate()
            .map_err(|reason| AnalysisError::InvalidQuery { line: idx + 1, reason })?;
        out.push(q);
    }
    Ok(out)
}

/// Everything needed to score one model.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub arch: ModelArchitecture,
    pub idealized: RuntimeModelParams,
    pub denoised: Option<RuntimeModelParams>,
    pub hardware: HardwareProfile,
}

/// Efficiency metrics a model can be compared on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    RawRuntime,
    DenoisedRuntime,
    IdealizedRuntime,
    IdealizedCost,
    IdealizedEnergy,
    Flops,
    ParamCount,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::RawRuntime,
        Metric::DenoisedRuntime,
        Metric::IdealizedRuntime,
        Metric::IdealizedCost,
        Metric::IdealizedEnergy,
        Metric::Flops,
        Metric::ParamCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::RawRuntime => "raw_runtime",
            Metric::DenoisedRuntime => "denoised_runtime",
            Metric::IdealizedRuntime => "idealized_runtime",
            Metric::IdealizedCost => "idealized_cost",
            Metric::IdealizedEnergy => "idealized_energy",
            Metric::Flops => "flops",
            Metric::ParamCount => "param_count",
        }
    }

    pub fn value(self, row: &ReportRow) -> Option<f64> {
        match self {
            Metric::RawRuntime => row.mean_raw_runtime,
            Metric::DenoisedRuntime => row.mean_denoised_runtime,
            Metric::IdealizedRuntime => Some(row.mean_idealized_runtime),
            Metric::IdealizedCost => Some(row.mean_idealized_cost),
            Metric::IdealizedEnergy => Some(row.mean_idealized_energy),
            Metric::Flops => Some(row.mean_flops),
            Metric::ParamCount => Some(row.param_count as f64),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| AnalysisError::UnknownName {
                kind: "metric",
                value: s.to_string(),
            })
    }
}

/// How accuracy and an efficiency metric combine into one score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `accuracy / metric`
    AccuracyOverMetric,
    /// `accuracy / log_base(metric)`
    AccuracyOverLogMetric { base: f64 },
}

impl Objective {
    /// Score for one model, or `None` where the objective is undefined
    /// (a log-metric of exactly zero).
    pub fn score(self, accuracy: f64, metric: f64) -> Option<f64> {
        match self {
            Objective::AccuracyOverMetric => Some(accuracy / metric),
            Objective::AccuracyOverLogMetric { base } => {
                let denom = metric.ln() / base.ln();
                (denom != 0.0).then(|| accuracy / denom)
            }
        }
    }
}

/// One row of an efficiency report. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub model_id: String,
    pub query_count: usize,
    pub skipped_queries: usize,
    pub mean_accuracy: Option<f64>,
    pub mean_raw_runtime: Option<f64>,
    pub mean_denoised_runtime: Option<f64>,
    pub mean_idealized_runtime: f64,
    pub mean_idealized_cost: f64,
    pub mean_idealized_energy: f64,
    pub mean_flops: f64,
    pub param_count: u64,
    pub frontier_raw_runtime: Option<bool>,
    pub frontier_denoised_runtime: Option<bool>,
    pub frontier_idealized_runtime: Option<bool>,
    pub frontier_idealized_cost: Option<bool>,
    pub frontier_idealized_energy: Option<bool>,
    pub frontier_flops: Option<bool>,
    pub frontier_param_count: Option<bool>,
    pub f1_score: Option<f64>,
    pub f1_rank: Option<usize>,
    pub f2_score: Option<f64>,
    pub f2_rank: Option<usize>,
}

impl ReportRow {
    fn frontier_slot(&mut self, metric: Metric) -> &mut Option<bool> {
        match metric {
            Metric::RawRuntime => &mut self.frontier_raw_runtime,
            Metric::DenoisedRuntime => &mut self.frontier_denoised_runtime,
            Metric::IdealizedRuntime => &mut self.frontier_idealized_runtime,
            Metric::IdealizedCost => &mut self.frontier_idealized_cost,
            Metric::IdealizedEnergy => &mut self.frontier_idealized_energy,
            Metric::Flops => &mut self.frontier_flops,
            Metric::ParamCount => &mut self.frontier_param_count,
        }
    }

    pub fn frontier(&self, metric: Metric) -> Option<bool> {
        match metric {
            Metric::RawRuntime => self.frontier_raw_runtime,
            Metric::DenoisedRuntime => self.frontier_denoised_runtime,
            Metric::IdealizedRuntime => self.frontier_idealized_runtime,
            Metric::IdealizedCost => self.frontier_idealized_cost,
            Metric::IdealizedEnergy => self.frontier_idealized_energy,
            Metric::Flops => self.frontier_flops,
            Metric::ParamCount => self.frontier_param_count,
        }
    }
}

/// Per-scenario aggregate. `excluded_models` lists models for which every
/// query in the scenario exceeded the context length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub scenario: String,
    pub rows: Vec<ReportRow>,
    pub excluded_models: Vec<String>,
}

/// Settings for the ranking columns of a report.
#[derive(Debug, Clone, Copy)]
pub struct RankingConfig {
    pub metric: Metric,
    pub log_base: f64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        RankingConfig {
            metric: Metric::IdealizedRuntime,
            log_base: std::f64::consts::E,
        }
    }
}

#[derive(Default)]
struct Sums {
    count: usize,
    skipped: usize,
    accuracy: (f64, usize),
    raw: (f64, usize),
    denoised: f64,
    idealized: f64,
    cost: f64,
    energy: f64,
    flops: u128,
}

fn mean_of((sum, n): (f64, usize)) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

/// Averages every metric over the queries of each scenario, then annotates
/// frontier membership and objective rankings. Queries that do not fit a
/// model's context are skipped for that model and counted.
pub fn aggregate(
    queries: &[QueryRecord],
    models: &[ModelInputs],
    ranking: RankingConfig,
) -> Result<Vec<EfficiencyReport>, AnalysisError> {
    if queries.is_empty() {
        return Err(AnalysisError::NoQueries);
    }
    let mut by_scenario: BTreeMap<&str, Vec<&QueryRecord>> = BTreeMap::new();
    for q in queries {
        by_scenario.entry(q.scenario.as_str()).or_default().push(q);
    }

    let mut reports = Vec::with_capacity(by_scenario.len());
    for (scenario, scenario_queries) in by_scenario {
        let mut rows = Vec::new();
        let mut excluded_models = Vec::new();
        for model in models {
            let id = model.arch.id.as_str();
            let mut sums = Sums::default();
            for q in &scenario_queries {
                let (p, o) = (q.prompt_tokens, q.output_tokens);
                let Ok(flops) = query_total_flops(&model.arch, p, o) else {
                    sums.skipped += 1;
                    continue;
                };
                sums.count += 1;
                let ideal = model.idealized.evaluate(p, o);
                sums.idealized += ideal;
                sums.cost += idealized_cost(ideal, &model.hardware);
                sums.energy += idealized_energy(ideal, &model.hardware);
                sums.flops += flops;
                if let Some(d) = &model.denoised {
                    sums.denoised += d.evaluate(p, o);
                }
                if let Some(acc) = q.accuracy_by_model.as_ref().and_then(|m| m.get(id)) {
                    sums.accuracy.0 += acc;
                    sums.accuracy.1 += 1;
                }
                if let Some(raw) = q.raw_runtime_by_model.as_ref().and_then(|m| m.get(id)) {
                    sums.raw.0 += raw;
                    sums.raw.1 += 1;
                }
            }
            if sums.count == 0 {
                excluded_models.push(id.to_string());
                continue;
            }
            let n = sums.count as f64;
            rows.push(ReportRow {
                scenario: scenario.to_string(),
                model_id: id.to_string(),
                query_count: sums.count,
                skipped_queries: sums.skipped,
                mean_accuracy: mean_of(sums.accuracy),
                mean_raw_runtime: mean_of(sums.raw),
                mean_denoised_runtime: model.denoised.as_ref().map(|_| sums.denoised / n),
                mean_idealized_runtime: sums.idealized / n,
                mean_idealized_cost: sums.cost / n,
                mean_idealized_energy: sums.energy / n,
                mean_flops: sums.flops as f64 / n,
                param_count: model.arch.reported_param_count,
                frontier_raw_runtime: None,
                frontier_denoised_runtime: None,
                frontier_idealized_runtime: None,
                frontier_idealized_cost: None,
                frontier_idealized_energy: None,
                frontier_flops: None,
                frontier_param_count: None,
                f1_score: None,
                f1_rank: None,
                f2_score: None,
                f2_rank: None,
            });
        }
        annotate(&mut rows, ranking)?;
        reports.push(EfficiencyReport {
            scenario: scenario.to_string(),
            rows,
            excluded_models,
        });
    }
    Ok(reports)
}

fn annotate(rows: &mut [ReportRow], ranking: RankingConfig) -> Result<(), AnalysisError> {
    for metric in Metric::ALL {
        let eligible: Vec<usize> = (0..rows.len())
            .filter(|&i| rows[i].mean_accuracy.is_some() && metric.value(&rows[i]).is_some())
            .collect();
        if eligible.is_empty() {
            continue;
        }
        let points: Vec<(f64, f64)> = eligible
            .iter()
            .map(|&i| (rows[i].mean_accuracy.unwrap(), metric.value(&rows[i]).unwrap()))
            .collect();
        for (&i, on) in eligible.iter().zip(pareto_mask(&points)) {
            *rows[i].frontier_slot(metric) = Some(on);
        }
    }

    let candidates: Vec<RankInput> = rows
        .iter()
        .filter_map(|r| {
            Some(RankInput {
                model_id: r.model_id.clone(),
                accuracy: r.mean_accuracy?,
                metric: ranking.metric.value(r)?,
            })
        })
        .collect();
    if candidates.is_empty() {
        return Ok(());
    }
    let objectives = [
        Objective::AccuracyOverMetric,
        Objective::AccuracyOverLogMetric { base: ranking.log_base },
    ];
    for (slot, objective) in objectives.into_iter().enumerate() {
        for ranked in rank_models(&candidates, objective)? {
            let row = rows.iter_mut().find(|r| r.model_id == ranked.model_id).expect("ranked row exists");
            if slot == 0 {
                row.f1_score = ranked.score;
                row.f1_rank = ranked.rank;
            } else {
                row.f2_score = ranked.score;
                row.f2_rank = ranked.rank;
            }
        }
    }
    Ok(())
}

/// Frontier membership for (capability, cost) points, capability higher is
/// better and cost lower is better. A point is dropped only if another point
/// is at least as good on both axes and strictly better on one, so exact
/// duplicates are all kept.
pub fn pareto_mask(points: &[(f64, f64)]) -> Vec<bool> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1));
    let mut mask = vec![false; points.len()];
    // Best capability among strictly cheaper points.
    let mut best_cheaper = f64::NEG_INFINITY;
    let mut start = 0;
    while start < order.len() {
        let cost = points[order[start]].1;
        let end = start + order[start..].iter().take_while(|&&i| points[i].1 == cost).count();
        let group_best = order[start..end]
            .iter()
            .map(|&i| points[i].0)
            .fold(f64::NEG_INFINITY, f64::max);
        for &i in &order[start..end] {
            let cap = points[i].0;
            mask[i] = cap == group_best && cap > best_cheaper;
        }
        best_cheaper = best_cheaper.max(group_best);
        start = end;
    }
    mask
}

/// Ids of the models on the (capability up, cost down) Pareto frontier.
pub fn pareto_frontier<S: AsRef<str>>(points: &[(S, f64, f64)]) -> BTreeSet<String> {
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.1, p.2)).collect();
    points
        .iter()
        .zip(pareto_mask(&xy))
        .filter(|(_, on)| *on)
        .map(|(p, _)| p.0.as_ref().to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankInput {
    pub model_id: String,
    pub accuracy: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    pub model_id: String,
    pub score: Option<f64>,
    /// 1-based; `None` where the objective is undefined.
    pub rank: Option<usize>,
}

/// Orders models by descending objective, ties broken by model id. Models
/// whose score is undefined come last, unranked.
pub fn rank_models(rows: &[RankInput], objective: Objective) -> Result<Vec<Ranked>, AnalysisError> {
    let mut scored = Vec::with_capacity(rows.len());
    for r in rows {
        if r.metric.is_nan() || r.metric <= 0.0 {
            return Err(AnalysisError::NonPositiveMetric {
                model: r.model_id.clone(),
                value: r.metric,
            });
        }
        scored.push((r.model_id.clone(), objective.score(r.accuracy, r.metric)));
    }
    scored.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.0.cmp(&b.0)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.0.cmp(&b.0),
    });
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (model_id, score))| Ranked {
            model_id,
            rank: score.map(|_| i + 1),
            score,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditResult {
    pub fraction_raw_ge_denoised: f64,
    pub fraction_denoised_ge_idealized: f64,
    pub samples: usize,
}

/// Checks `raw >= denoised >= idealized` at every sample's (p, o), with
/// [`AUDIT_TOLERANCE`] of slack.
pub fn inequality_audit(
    raw_samples: &[ProfileSample],
    denoised: &RuntimeModelParams,
    idealized: &RuntimeModelParams,
) -> Result<AuditResult, AnalysisError> {
    if raw_samples.is_empty() {
        return Err(AnalysisError::NoSamples);
    }
    let (mut raw_ok, mut ideal_ok) = (0usize, 0usize);
    for s in raw_samples {
        let d = denoised.evaluate(s.prompt_tokens, s.output_tokens);
        let i = idealized.evaluate(s.prompt_tokens, s.output_tokens);
        raw_ok += usize::from(s.runtime + AUDIT_TOLERANCE >= d);
        ideal_ok += usize::from(d + AUDIT_TOLERANCE >= i);
    }
    let n = raw_samples.len() as f64;
    Ok(AuditResult {
        fraction_raw_ge_denoised: raw_ok as f64 / n,
        fraction_denoised_ge_idealized: ideal_ok as f64 / n,
        samples: raw_samples.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StackQueryRow {
    pub scenario: String,
    pub query_id: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub runtime_a: f64,
    pub runtime_b: f64,
    pub cost_a: f64,
    pub cost_b: f64,
    pub runtime_ratio: f64,
    pub cost_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StackComparison {
    pub model_id: String,
    pub stack_a: String,
    pub stack_b: String,
    pub rows: Vec<StackQueryRow>,
    pub skipped_queries: usize,
    pub mean_runtime_a: f64,
    pub mean_runtime_b: f64,
    pub mean_cost_a: f64,
    pub mean_cost_b: f64,
    /// Mean runtime of B over mean runtime of A.
    pub runtime_ratio: f64,
    pub cost_ratio: f64,
    pub verdict: String,
}

fn verdict(runtime_ratio: f64, cost_ratio: f64) -> &'static str {
    const EPS: f64 = 1e-9;
    let speed = if runtime_ratio > 1.0 + EPS {
        "slower"
    } else if runtime_ratio < 1.0 - EPS {
        "faster"
    } else {
        "same speed"
    };
    let price = if cost_ratio > 1.0 + EPS {
        "more expensive"
    } else if cost_ratio < 1.0 - EPS {
        "cheaper"
    } else {
        "same cost"
    };
    match (speed, price) {
        ("same speed", "same cost") => "equivalent",
        ("slower", "more expensive") => "slower and more expensive",
        ("faster", "cheaper") => "faster and cheaper",
        ("slower", "cheaper") => "slower but cheaper",
        ("faster", "more expensive") => "faster but more expensive",
        ("same speed", "cheaper") => "same speed, cheaper",
        ("same speed", _) => "same speed, more expensive",
        ("slower", _) => "slower, same cost",
        _ => "faster, same cost",
    }
}

/// Evaluates the same queries under two fitted stacks (software + hardware)
/// of one model. The verdict describes stack B relative to stack A.
pub fn compare_stacks(
    queries: &[QueryRecord],
    arch: &ModelArchitecture,
    stack_a: (&RuntimeModelParams, &HardwareProfile),
    stack_b: (&RuntimeModelParams, &HardwareProfile),
) -> Result<StackComparison, AnalysisError> {
    let (params_a, hw_a) = stack_a;
    let (params_b, hw_b) = stack_b;
    if params_a.model_id() != params_b.model_id() {
        return Err(AnalysisError::ModelMismatch(
            params_a.model_id().to_string(),
            params_b.model_id().to_string(),
        ));
    }
    if queries.is_empty() {
        return Err(AnalysisError::NoQueries);
    }
    let mut rows = Vec::with_capacity(queries.len());
    let mut skipped = 0;
    for q in queries {
        let (p, o) = (q.prompt_tokens, q.output_tokens);
        if check_context(arch, p, o).is_err() {
            skipped += 1;
            continue;
        }
        let (ra, rb) = (params_a.evaluate(p, o), params_b.evaluate(p, o));
        let (ca, cb) = (idealized_cost(ra, hw_a), idealized_cost(rb, hw_b));
        rows.push(StackQueryRow {
            scenario: q.scenario.clone(),
            query_id: q.query_id.clone(),
            prompt_tokens: p,
            output_tokens: o,
            runtime_a: ra,
            runtime_b: rb,
            cost_a: ca,
            cost_b: cb,
            runtime_ratio: rb / ra,
            cost_ratio: cb / ca,
        });
    }
    if rows.is_empty() {
        return Err(AnalysisError::NoQueries);
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&StackQueryRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let (mra, mrb) = (mean(|r| r.runtime_a), mean(|r| r.runtime_b));
    let (mca, mcb) = (mean(|r| r.cost_a), mean(|r| r.cost_b));
    let label = |p: &RuntimeModelParams, hw: &HardwareProfile| {
        if p.stack_label().is_empty() {
            format!("{} x{}", hw.id, hw.accelerator_count)
        } else {
            format!("{} ({} x{})", p.stack_label(), hw.id, hw.accelerator_count)
        }
    };
    Ok(StackComparison {
        model_id: params_a.model_id().to_string(),
        stack_a: label(params_a, hw_a),
        stack_b: label(params_b, hw_b),
        skipped_queries: skipped,
        mean_runtime_a: mra,
        mean_runtime_b: mrb,
        mean_cost_a: mca,
        mean_cost_b: mcb,
        runtime_ratio: mrb / mra,
        cost_ratio: mcb / mca,
        verdict: verdict(mrb / mra, mcb / mca).to_string(),
        rows,
    })
}

/// Report rows of every scenario, in scenario then input-model order.
pub fn flatten(reports: &[EfficiencyReport]) -> Vec<&ReportRow> {
    reports.iter().flat_map(|r| r.rows.iter()).collect()
}

pub fn write_report_csv(writer: impl Write, reports: &[EfficiencyReport]) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in flatten(reports) {
        w.serialize(row)?;
    }
    if flatten(reports).is_empty() {
        // Header only.
        w.write_record(REPORT_COLUMNS)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json(mut writer: impl Write, reports: &[EfficiencyReport]) -> Result<(), AnalysisError> {
    serde_json::to_writer_pretty(&mut writer, &flatten(reports))?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// CSV column order of [`ReportRow`].
pub const REPORT_COLUMNS: [&str; 23] = [
    "scenario",
    "model_id",
    "query_count",
    "skipped_queries",
    "mean_accuracy",
    "mean_raw_runtime",
    "mean_denoised_runtime",
    "mean_idealized_runtime",
    "mean_idealized_cost",
    "mean_idealized_energy",
    "mean_flops",
    "param_count",
    "frontier_raw_runtime",
    "frontier_denoised_runtime",
    "frontier_idealized_runtime",
    "frontier_idealized_cost",
    "frontier_idealized_energy",
    "frontier_flops",
    "frontier_param_count",
    "f1_score",
    "f1_rank",
    "f2_score",
    "f2_rank",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;
    use crate::runtime_model::{PromptKnot, Variant};
    use proptest::prelude::*;

    fn a100(count: u64, rate: f64, watts: f64) -> HardwareProfile {
        HardwareProfile {
            id: "A100-80GB".into(),
            accelerator_type: "A100".into(),
            accelerator_count: count,
            cost_rate: rate,
            power_draw: watts,
            note: None,
        }
    }

    /// O(n^2) dominance check.
    fn brute_frontier(points: &[(f64, f64)]) -> Vec<bool> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(ci, ki))| {
                !points.iter().enumerate().any(|(j, &(cj, kj))| {
                    j != i && cj >= ci && kj <= ki && (cj > ci || kj < ki)
                })
            })
            .collect()
    }

    #[test]
    fn cost_and_energy_arithmetic() {
        let hw = a100(8, 0.005, 400.0);
        assert!((idealized_cost(8.197, &hw) - 0.32788).abs() < 1e-12);
        assert!((idealized_energy(8.197, &hw) - 26_230.4).abs() < 1e-9);
        assert_eq!(idealized_cost(0.0, &hw), 0.0);
        assert_eq!(idealized_cost(3.0, &a100(8, 0.0, 400.0)), 0.0);
        assert_eq!(idealized_energy(3.0, &a100(8, 0.005, 0.0)), 0.0);
        assert_eq!(idealized_energy(3.0, &a100(16, 0.005, 400.0)), 2.0 * idealized_energy(3.0, &hw));
    }

    #[test]
    fn frontier_examples() {
        let pts = [("A", 0.9, 1.0), ("B", 0.8, 0.5), ("C", 0.7, 0.6)];
        assert_eq!(pareto_frontier(&pts), BTreeSet::from(["A".to_string(), "B".to_string()]));
        assert_eq!(pareto_frontier(&[("solo", 0.1, 9.0)]).len(), 1);
    }

    #[test]
    fn frontier_ties_and_duplicates() {
        // Duplicates are mutually non-dominating.
        assert_eq!(pareto_mask(&[(0.5, 1.0), (0.5, 1.0)]), vec![true, true]);
        // Same cost, lower capability is dominated.
        assert_eq!(pareto_mask(&[(0.5, 1.0), (0.4, 1.0)]), vec![true, false]);
        // Same capability, higher cost is dominated.
        assert_eq!(pareto_mask(&[(0.5, 1.0), (0.5, 2.0)]), vec![true, false]);
    }

    #[test]
    fn f1_ranking_example() {
        let rows = [
            RankInput { model_id: "A".into(), accuracy: 0.9, metric: 1.0 },
            RankInput { model_id: "B".into(), accuracy: 0.8, metric: 0.5 },
        ];
        let ranked = rank_models(&rows, Objective::AccuracyOverMetric).unwrap();
        assert_eq!(ranked[0].model_id, "B");
        assert!((ranked[0].score.unwrap() - 1.6).abs() < 1e-12);
        assert_eq!(ranked[1].rank, Some(2));
    }

    #[test]
    fn ranking_ties_are_lexicographic() {
        let rows = [
            RankInput { model_id: "zeta".into(), accuracy: 0.5, metric: 2.0 },
            RankInput { model_id: "alpha".into(), accuracy: 0.5, metric: 2.0 },
        ];
        let ranked = rank_models(&rows, Objective::AccuracyOverMetric).unwrap();
        assert_eq!(ranked[0].model_id, "alpha");
    }

    #[test]
    fn ranking_errors_and_undefined() {
        let bad = [RankInput { model_id: "A".into(), accuracy: 0.5, metric: 0.0 }];
        assert!(matches!(
            rank_models(&bad, Objective::AccuracyOverMetric),
            Err(AnalysisError::NonPositiveMetric { .. })
        ));
        let rows = [
            RankInput { model_id: "A".into(), accuracy: 0.5, metric: 1.0 },
            RankInput { model_id: "B".into(), accuracy: 0.5, metric: 4.0 },
        ];
        let ranked = rank_models(&rows, Objective::AccuracyOverLogMetric { base: std::f64::consts::E }).unwrap();
        assert_eq!(ranked[0].model_id, "B");
        assert_eq!(ranked[1], Ranked { model_id: "A".into(), score: None, rank: None });
    }

    #[test]
    fn objectives_can_disagree() {
        // Exhaustive search over a small grid for a pair ordered differently
        // by accuracy/metric and accuracy/ln(metric), restricted to metric > 1.
        let accs = [0.3, 0.5, 0.7, 0.9];
        let metrics = [2.0, 5.0, 10.0, 20.0, 100.0];
        let f1 = Objective::AccuracyOverMetric;
        let f2 = Objective::AccuracyOverLogMetric { base: std::f64::consts::E };
        let mut found = Vec::new();
        for &aa in &accs {
            for &ma in &metrics {
                for &ab in &accs {
                    for &mb in &metrics {
                        let d1 = f1.score(aa, ma).unwrap() - f1.score(ab, mb).unwrap();
                        let d2 = f2.score(aa, ma).unwrap() - f2.score(ab, mb).unwrap();
                        if d1 < 0.0 && d2 > 0.0 {
                            found.push((aa, ma, ab, mb));
                        }
                    }
                }
            }
        }
        assert!(found.contains(&(0.9, 100.0, 0.5, 20.0)));

        // A: (0.9, 100), B: (0.5, 20). f1: A 0.009 < B 0.025. f2: A 0.195 > B 0.167.
        let rows = [
            RankInput { model_id: "A".into(), accuracy: 0.9, metric: 100.0 },
            RankInput { model_id: "B".into(), accuracy: 0.5, metric: 20.0 },
        ];
        assert_eq!(rank_models(&rows, f1).unwrap()[0].model_id, "B");
        assert_eq!(rank_models(&rows, f2).unwrap()[0].model_id, "A");
        // log base 10 rescales every f2 score by ln(10), so the order holds.
        let f2_10 = Objective::AccuracyOverLogMetric { base: 10.0 };
        assert_eq!(rank_models(&rows, f2_10).unwrap()[0].model_id, "A");
    }

    #[test]
    fn inequality_audit_basic() {
        let ideal = RuntimeModelParams::new(
            "m",
            Variant::Idealized,
            "ref",
            vec![PromptKnot::new(1, 0.1), PromptKnot::new(512, 0.3)],
            0.02,
            0.0,
        )
        .unwrap();
        let samples = [ProfileSample { prompt_tokens: 512, output_tokens: 4, trial: 0, parallelism: 1, runtime: 0.36 }];
        let res = inequality_audit(&samples, &ideal, &ideal).unwrap();
        assert_eq!(res.fraction_raw_ge_denoised, 1.0);
        assert_eq!(res.fraction_denoised_ge_idealized, 1.0);
        let slow = [ProfileSample { runtime: 0.35, ..samples[0] }];
        assert_eq!(inequality_audit(&slow, &ideal, &ideal).unwrap().fraction_raw_ge_denoised, 0.0);
        assert!(matches!(inequality_audit(&[], &ideal, &ideal), Err(AnalysisError::NoSamples)));
    }

    fn query(scenario: &str, id: &str, p: u64, o: u64, acc: f64) -> QueryRecord {
        QueryRecord {
            scenario: scenario.into(),
            query_id: id.into(),
            prompt_tokens: p,
            output_tokens: o,
            accuracy_by_model: Some(BTreeMap::from([("davinci".to_string(), acc)])),
            raw_runtime_by_model: None,
        }
    }

    fn davinci_inputs() -> ModelInputs {
        let reg = Registry::shipped();
        let arch = reg.model("davinci").unwrap().clone();
        let idealized = RuntimeModelParams::new(
            "davinci",
            Variant::Idealized,
            "ref",
            vec![PromptKnot::new(1, 1.0), PromptKnot::new(2, 3.0)],
            0.0,
            0.0,
        )
        .unwrap();
        ModelInputs {
            hardware: reg.default_hardware(&arch).unwrap(),
            arch,
            idealized,
            denoised: None,
        }
    }

    #[test]
    fn aggregate_single_and_mean() {
        let inputs = davinci_inputs();
        let one = aggregate(&[query("s", "q1", 1, 1, 1.0)], std::slice::from_ref(&inputs), RankingConfig::default()).unwrap();
        let row = &one[0].rows[0];
        assert_eq!(row.mean_idealized_runtime, 1.0);
        assert_eq!(row.mean_accuracy, Some(1.0));
        assert_eq!(row.mean_flops, query_total_flops(&inputs.arch, 1, 1).unwrap() as f64);
        assert_eq!(row.frontier_idealized_runtime, Some(true));
        assert_eq!(row.mean_denoised_runtime, None);
        assert_eq!(row.frontier_denoised_runtime, None);

        let two = aggregate(
            &[query("s", "q1", 1, 1, 1.0), query("s", "q2", 2, 1, 0.0)],
            &[inputs],
            RankingConfig::default(),
        )
        .unwrap();
        assert_eq!(two[0].rows[0].mean_idealized_runtime, 2.0);
        assert_eq!(two[0].rows[0].mean_accuracy, Some(0.5));
    }

    #[test]
    fn aggregate_skips_context_violations() {
        let inputs = davinci_inputs();
        let queries = [query("s", "q1", 1, 1, 1.0), query("s", "long", 2048, 10, 1.0), query("t", "long2", 4000, 1, 1.0)];
        let reports = aggregate(&queries, &[inputs], RankingConfig::default()).unwrap();
        assert_eq!(reports[0].rows[0].query_count, 1);
        assert_eq!(reports[0].rows[0].skipped_queries, 1);
        assert!(reports[1].rows.is_empty());
        assert_eq!(reports[1].excluded_models, vec!["davinci".to_string()]);
        assert!(matches!(aggregate(&[], &[], RankingConfig::default()), Err(AnalysisError::NoQueries)));
    }

    #[test]
    fn stack_comparison_ratios() {
        let inputs = davinci_inputs();
        let hw = inputs.hardware.clone();
        let queries = [query("s", "q1", 1, 1, 1.0), query("s", "q2", 2, 5, 1.0)];
        let doubled = inputs.idealized.scaled(2.0).unwrap();
        let cmp = compare_stacks(&queries, &inputs.arch, (&inputs.idealized, &hw), (&doubled, &hw)).unwrap();
        assert!(cmp.rows.iter().all(|r| (r.runtime_ratio - 2.0).abs() < 1e-12));
        assert_eq!(cmp.verdict, "slower and more expensive");

        let same = compare_stacks(&queries, &inputs.arch, (&inputs.idealized, &hw), (&inputs.idealized, &hw)).unwrap();
        assert!(same.rows.iter().all(|r| r.runtime_ratio == 1.0 && r.cost_ratio == 1.0));
        assert_eq!(same.verdict, "equivalent");

        // 1.5x slower on hardware at 80% of the hourly rate but twice the
        // accelerators: cost ratio 1.5 * 0.8 * 2 = 2.4.
        let slower = inputs.idealized.scaled(1.5).unwrap();
        let v100 = HardwareProfile {
            id: "V100-32GB".into(),
            cost_rate: hw.cost_rate * 0.8,
            accelerator_count: hw.accelerator_count * 2,
            ..hw.clone()
        };
        let cmp = compare_stacks(&queries, &inputs.arch, (&inputs.idealized, &hw), (&slower, &v100)).unwrap();
        assert!((cmp.cost_ratio - 2.4).abs() < 1e-12);
        assert_eq!(cmp.verdict, "slower and more expensive");

        let other = RuntimeModelParams::new("other", Variant::Idealized, "", inputs.idealized.knots().to_vec(), 0.0, 0.0).unwrap();
        assert!(matches!(
            compare_stacks(&queries, &inputs.arch, (&inputs.idealized, &hw), (&other, &hw)),
            Err(AnalysisError::ModelMismatch(..))
        ));
    }

    #[test]
    fn csv_header_matches_columns() {
        let reports = aggregate(&[query("s", "q1", 1, 1, 1.0)], &[davinci_inputs()], RankingConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), REPORT_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 2);
        let mut empty = Vec::new();
        write_report_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim_end(), REPORT_COLUMNS.join(","));
    }

    #[test]
    fn query_jsonl_validation() {
        let ok = r#"{"scenario":"s","query_id":"1","prompt_tokens":3,"output_tokens":1,"accuracy_by_model":{"m":0.5}}"#;
        assert_eq!(read_queries_jsonl(ok.as_bytes()).unwrap().len(), 1);
        let bad = ok.replace("0.5", "1.5");
        assert!(matches!(
            read_queries_jsonl(bad.as_bytes()),
            Err(AnalysisError::InvalidQuery { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn frontier_matches_brute_force(points in proptest::collection::vec((0u8..6, 0u8..6), 1..14)) {
            // Coarse integer grid forces plenty of ties and duplicates.
            let pts: Vec<(f64, f64)> = points.iter().map(|&(c, k)| (c as f64 / 5.0, k as f64)).collect();
            prop_assert_eq!(pareto_mask(&pts), brute_frontier(&pts));
        }

        #[test]
        fn f1_order_is_scale_invariant(
            rows in proptest::collection::vec((0.0f64..1.0, 0.01f64..100.0), 1..10),
            scale in 0.01f64..100.0,
        ) {
            let make = |k: f64| -> Vec<RankInput> {
                rows.iter().enumerate().map(|(i, &(a, m))| RankInput {
                    model_id: format!("m{i:02}"), accuracy: a, metric: m * k,
                }).collect()
            };
            let ids = |v: Vec<Ranked>| v.into_iter().map(|r| r.model_id).collect::<Vec<_>>();
            let base = rank_models(&make(1.0), Objective::AccuracyOverMetric).unwrap();
            let scaled = rank_models(&make(scale), Objective::AccuracyOverMetric).unwrap();
            // Exact score ties can flip under rounding; compare only when scores are distinct.
            let distinct = base.windows(2).all(|w| (w[0].score.unwrap() - w[1].score.unwrap()).abs() > 1e-9 * w[0].score.unwrap().abs().max(1e-300));
            if distinct {
                prop_assert_eq!(ids(base), ids(scaled));
            }
        }

        #[test]
        fn cost_is_linear(t in 0.0f64..100.0, n in 1u64..64, rate in 0.0f64..0.01, k in 0.0f64..10.0) {
            let hw = a100(n, rate, 300.0);
            prop_assert!((idealized_cost(k * t, &hw) - k * idealized_cost(t, &hw)).abs() <= 1e-9 * (1.0 + k * idealized_cost(t, &hw)));
            let hw2 = a100(n, rate * k, 300.0 * k);
            prop_assert!((idealized_cost(t, &hw2) - k * idealized_cost(t, &hw)).abs() <= 1e-9 * (1.0 + idealized_cost(t, &hw2)));
            prop_assert!((idealized_energy(t, &hw2) - k * idealized_energy(t, &hw)).abs() <= 1e-9 * (1.0 + idealized_energy(t, &hw2)));
            prop_assert!((idealized_cost(t, &a100(2 * n, rate, 1.0)) - 2.0 * idealized_cost(t, &hw)).abs() <= 1e-12 * (1.0 + idealized_cost(t, &hw)));
        }

        #[test]
        fn aggregate_is_permutation_invariant(seed in 0u64..1000) {
            let inputs = davinci_inputs();
            let mut queries: Vec<QueryRecord> = (0..8u64)
                .map(|i| query("s", &format!("q{i}"), 1 + (i * 37 + seed) % 2, 1 + (i * 13 + seed) % 50, ((i + seed) % 3) as f64 / 2.0))
                .collect();
            let a = aggregate(&queries, std::slice::from_ref(&inputs), RankingConfig::default()).unwrap();
            queries.reverse();
            queries.rotate_left((seed % 8) as usize);
            let b = aggregate(&queries, &[inputs], RankingConfig::default()).unwrap();
            let (ra, rb) = (&a[0].rows[0], &b[0].rows[0]);
            prop_assert!((ra.mean_idealized_runtime - rb.mean_idealized_runtime).abs() < 1e-12);
            prop_assert!((ra.mean_accuracy.unwrap() - rb.mean_accuracy.unwrap()).abs() < 1e-12);
            prop_assert_eq!(ra.mean_flops, rb.mean_flops);
        }
    }
}
