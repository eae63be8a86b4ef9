//! Fitting runtime parameters from profiled queries.
//!
//! The fit runs in two steps. For every prompt size on the grid, runtime is
//! regressed against `o - 1`; the intercept is the prompt-encoding time at
//! that size. Then the encoding time is subtracted from every sample and a
//! single origin-constrained regression of the remainder against `o - 1`
//! gives the per-token slope `g` shared by all prompt sizes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime_model::{FitDiagnostics, ParamsError, PromptKnot, RuntimeModelParams, Variant};

/// Output-token counts profiled when no grid is given.
pub const DEFAULT_OUTPUT_GRID: [u64; 6] = [1, 8, 16, 32, 64, 128];

/// Trials per (p, o) cell when no count is given.
pub const DEFAULT_TRIALS: u32 = 10;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("regression needs at least 2 points with 2 distinct x values")]
    DegenerateRegression,
    #[error("no samples with at least 2 distinct output-token counts for prompt size p={0}")]
    InsufficientSamples(u64),
    #[error("prompt grid needs at least 2 distinct sizes, got {0}")]
    GridTooSmall(usize),
    #[error("fitted per-token slope is negative ({0})")]
    NegativeSlope(f64),
    #[error("coefficient of variation needs at least 2 values")]
    TooFewValues,
    #[error("coefficient of variation undefined for zero mean")]
    ZeroMean,
    #[error("invalid sample on line {line}: {reason}")]
    InvalidSample { line: usize, reason: String },
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One timed query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub trial: u32,
    /// Number of queries in flight at once; 1 means isolated.
    pub parallelism: u32,
    pub runtime: f64,
}

impl ProfileSample {
    pub fn validate(&self) -> Result<(), String> {
        if self.prompt_tokens == 0 {
            return Err("prompt_tokens must be >= 1".into());
        }
        if self.output_tokens == 0 {
            return Err("output_tokens must be >= 1".into());
        }
        if self.parallelism == 0 {
            return Err("parallelism must be >= 1".into());
        }
        if !(self.runtime.is_finite() && self.runtime > 0.0) {
            return Err(format!("runtime must be finite and > 0, got {}", self.runtime));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

fn r_squared(ss_res: f64, ss_tot: f64) -> f64 {
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

/// Ordinary least squares fit of `y = intercept + slope * x`.
pub fn simple_linear_regression(points: &[(f64, f64)]) -> Result<LinearFit, EstimatorError> {
    if points.len() < 2 {
        return Err(EstimatorError::DegenerateRegression);
    }
    let mx = mean(points.iter().map(|p| p.0));
    let my = mean(points.iter().map(|p| p.1));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(EstimatorError::DegenerateRegression);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|&(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(LinearFit {
        intercept,
        slope,
        r2: r_squared(ss_res, syy),
    })
}

/// Least squares fit of `y = slope * x`. R² is measured against the mean of
/// `y`, so it can go negative when the origin constraint is a poor fit.
pub fn regression_through_origin(points: &[(f64, f64)]) -> Result<(f64, f64), EstimatorError> {
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    if points.is_empty() || sxx == 0.0 {
        return Err(EstimatorError::DegenerateRegression);
    }
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = sxy / sxx;
    let my = mean(points.iter().map(|p| p.1));
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - slope * p.0).powi(2)).sum();
    Ok((slope, r_squared(ss_res, ss_tot)))
}

/// Keeps the fastest isolated (parallelism 1) run of each (p, o) cell.
/// Output is ordered by (p, o).
pub fn denoise(samples: &[ProfileSample]) -> Vec<ProfileSample> {
    let mut best: BTreeMap<(u64, u64), ProfileSample> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.parallelism == 1) {
        best.entry((s.prompt_tokens, s.output_tokens))
            .and_modify(|cur| {
                if s.runtime < cur.runtime {
                    *cur = *s;
                }
            })
            .or_insert(*s);
    }
    best.into_values().collect()
}

/// Sample standard deviation (n - 1 denominator) over the mean.
pub fn coefficient_of_variation(runtimes: &[f64]) -> Result<f64, EstimatorError> {
    if runtimes.len() < 2 {
        return Err(EstimatorError::TooFewValues);
    }
    let m = mean(runtimes.iter().copied());
    if m == 0.0 {
        return Err(EstimatorError::ZeroMean);
    }
    let var = runtimes.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (runtimes.len() - 1) as f64;
    Ok(var.sqrt() / m)
}

/// Fits runtime parameters over the given prompt grid.
///
/// Only isolated (parallelism 1) samples are used. For the denoised variant
/// each (p, o) cell is first reduced to its minimum runtime. Samples whose
/// prompt size is not on the grid are ignored.
pub fn fit_runtime_model(
    samples: &[ProfileSample],
    grid: &[u64],
    variant: Variant,
    model_id: &str,
    stack_label: &str,
) -> Result<(RuntimeModelParams, FitDiagnostics), EstimatorError> {
    let grid: BTreeSet<u64> = grid.iter().copied().collect();
    if grid.len() < 2 {
        return Err(EstimatorError::GridTooSmall(grid.len()));
    }
    let working: Vec<ProfileSample> = match variant {
        Variant::Denoised => denoise(samples),
        Variant::Idealized => samples.iter().filter(|s| s.parallelism == 1).copied().collect(),
    };

    let mut by_prompt: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for s in working.iter().filter(|s| grid.contains(&s.prompt_tokens)) {
        by_prompt
            .entry(s.prompt_tokens)
            .or_default()
            .push(((s.output_tokens - 1) as f64, s.runtime));
    }

    let mut warnings = Vec::new();
    let mut knots = Vec::with_capacity(grid.len());
    let mut per_prompt_r2 = BTreeMap::new();
    for &p in &grid {
        let points = by_prompt.get(&p).ok_or(EstimatorError::InsufficientSamples(p))?;
        let fit = simple_linear_regression(points).map_err(|_| EstimatorError::InsufficientSamples(p))?;
        let mut intercept = fit.intercept;
        if intercept < 0.0 {
            warnings.push(format!("negative encoding time {intercept:.6e} s at p={p} clamped to 0"));
            intercept = 0.0;
        }
        knots.push(PromptKnot::new(p, intercept));
        per_prompt_r2.insert(p, fit.r2);
    }

    let knot_time: BTreeMap<u64, f64> = knots.iter().map(|k| (k.prompt_tokens, k.encoding_time)).collect();
    let differences: Vec<(f64, f64)> = by_prompt
        .iter()
        .flat_map(|(p, points)| {
            let pe = knot_time[p];
            points.iter().map(move |&(x, y)| (x, y - pe))
        })
        .collect();
    let (slope, slope_r2) = regression_through_origin(&differences)?;
    if slope < 0.0 {
        return Err(EstimatorError::NegativeSlope(slope));
    }

    let params = RuntimeModelParams::new(model_id, variant, stack_label, knots, slope, 0.0)?;
    let mut residual_max = 0.0f64;
    let mut sample_count = 0;
    for s in working.iter().filter(|s| grid.contains(&s.prompt_tokens)) {
        residual_max = residual_max.max((s.runtime - params.evaluate(s.prompt_tokens, s.output_tokens)).abs());
        sample_count += 1;
    }
    let diagnostics = FitDiagnostics {
        per_prompt_r2,
        slope_r2,
        sample_count,
        residual_max,
        warnings,
    };
    Ok((params, diagnostics))
}

/// Reads line-delimited JSON samples, skipping blank lines.
pub fn read_samples_jsonl(reader: impl BufRead) -> Result<Vec<ProfileSample>, EstimatorError> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: ProfileSample = serde_json::from_str(&line).map_err(|e| EstimatorError::InvalidSample {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        sample
            .validate()
            .map_err(|reason| EstimatorError::InvalidSample { line: idx + 1, reason })?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_samples_jsonl(mut writer: impl Write, samples: &[ProfileSample]) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
