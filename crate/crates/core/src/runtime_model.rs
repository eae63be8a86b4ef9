//! Parametric end-to-end runtime: `t(p, o) = PE(p) + (o - 1) * g + overhead`,
//! where `PE` is piecewise linear in the prompt size `p`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for comparing times, in seconds.
pub const TIME_EPSILON: f64 = 1e-12;

/// Prompt sizes profiled when no grid is given.
pub const DEFAULT_PROMPT_GRID: [u64; 5] = [1, 256, 512, 1024, 1536];

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("runtime model '{model}': {reason}")]
    Invalid { model: String, reason: String },
    #[error("failed to parse runtime model: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Fitted on a fixed reference software/hardware stack.
    Idealized,
    /// Fitted on minimum-over-trials black-box measurements.
    Denoised,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Idealized => "idealized",
            Variant::Denoised => "denoised",
        })
    }
}

/// One sample of the prompt-encoding curve. Serialized as `[p, seconds]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u64, f64)", into = "(u64, f64)")]
pub struct PromptKnot {
    pub prompt_tokens: u64,
    pub encoding_time: f64,
}

impl PromptKnot {
    pub fn new(prompt_tokens: u64, encoding_time: f64) -> Self {
        PromptKnot {
            prompt_tokens,
            encoding_time,
        }
    }
}

impl From<(u64, f64)> for PromptKnot {
    fn from((p, t): (u64, f64)) -> Self {
        PromptKnot::new(p, t)
    }
}

impl From<PromptKnot> for (u64, f64) {
    fn from(k: PromptKnot) -> Self {
        (k.prompt_tokens, k.encoding_time)
    }
}

/// Fitted runtime parameters for one (model, stack) pair.
///
/// Construction validates the invariants: at least two knots with strictly
/// increasing prompt sizes, all times and the slope nonnegative and finite,
/// and zero overhead for the idealized variant. Denoised fits carry any
/// fixed API overhead inside their knot intercepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct RuntimeModelParams {
    model_id: String,
    variant: Variant,
    stack_label: String,
    knots: Vec<PromptKnot>,
    per_token_slope: f64,
    overhead: f64,
}

#[derive(Deserialize)]
struct RawParams {
    model_id: String,
    variant: Variant,
    #[serde(default)]
    stack_label: String,
    knots: Vec<PromptKnot>,
    per_token_slope: f64,
    #[serde(default)]
    overhead: f64,
}

impl TryFrom<RawParams> for RuntimeModelParams {
    type Error = ParamsError;

    fn try_from(raw: RawParams) -> Result<Self, ParamsError> {
        RuntimeModelParams::new(
            raw.model_id,
            raw.variant,
            raw.stack_label,
            raw.knots,
            raw.per_token_slope,
            raw.overhead,
        )
    }
}

impl RuntimeModelParams {
    pub fn new(
        model_id: impl Into<String>,
        variant: Variant,
        stack_label: impl Into<String>,
        knots: Vec<PromptKnot>,
        per_token_slope: f64,
        overhead: f64,
    ) -> Result<Self, ParamsError> {
        let model_id = model_id.into();
        let invalid = |reason: String| ParamsError::Invalid {
            model: model_id.clone(),
            reason,
        };
        if knots.len() < 2 {
            return Err(invalid(format!("need at least 2 knots, got {}", knots.len())));
        }
        for k in &knots {
            if k.prompt_tokens == 0 {
                return Err(invalid("knot prompt size must be >= 1".into()));
            }
            if !(k.encoding_time.is_finite() && k.encoding_time >= 0.0) {
                return Err(invalid(format!(
                    "knot at p={} has invalid encoding time {}",
                    k.prompt_tokens, k.encoding_time
                )));
            }
        }
        if let Some(w) = knots.windows(2).find(|w| w[0].prompt_tokens >= w[1].prompt_tokens) {
            return Err(invalid(format!(
                "knots must be strictly increasing in p ({} then {})",
                w[0].prompt_tokens, w[1].prompt_tokens
            )));
        }
        if !(per_token_slope.is_finite() && per_token_slope >= 0.0) {
            return Err(invalid(format!("per-token slope {per_token_slope} must be finite and >= 0")));
        }
        if !(overhead.is_finite() && overhead >= 0.0) {
            return Err(invalid(format!("overhead {overhead} must be finite and >= 0")));
        }
        if variant == Variant::Idealized && overhead != 0.0 {
            return Err(invalid("idealized parameters cannot carry an overhead".into()));
        }
        Ok(RuntimeModelParams {
            model_id,
            variant,
            stack_label: stack_label.into(),
            knots,
            per_token_slope,
            overhead,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn stack_label(&self) -> &str {
        &self.stack_label
    }

    pub fn knots(&self) -> &[PromptKnot] {
        &self.knots
    }

    pub fn per_token_slope(&self) -> f64 {
        self.per_token_slope
    }

    pub fn overhead(&self) -> f64 {
        self.overhead
    }

    /// Same knots and slope as an idealized model with the overhead removed.
    pub fn without_overhead(&self, stack_label: impl Into<String>) -> RuntimeModelParams {
        RuntimeModelParams {
            variant: Variant::Idealized,
            stack_label: stack_label.into(),
            overhead: 0.0,
            ..self.clone()
        }
    }

    /// Copy with every knot time and the slope multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<RuntimeModelParams, ParamsError> {
        RuntimeModelParams::new(
            self.model_id.clone(),
            self.variant,
            self.stack_label.clone(),
            self.knots
                .iter()
                .map(|k| PromptKnot::new(k.prompt_tokens, k.encoding_time * factor))
                .collect(),
            self.per_token_slope * factor,
            self.overhead * factor,
        )
    }

    /// Piecewise-linear prompt-encoding time. Outside the knot range the
    /// nearest segment is extended, clamped at zero.
    pub fn prompt_encoding_time(&self, p: u64) -> f64 {
        let knots = &self.knots;
        let idx = knots.partition_point(|k| k.prompt_tokens < p);
        if let Some(k) = knots.get(idx) {
            if k.prompt_tokens == p {
                return k.encoding_time;
            }
        }
        let (a, b) = match idx {
            0 => (knots[0], knots[1]),
            i if i == knots.len() => (knots[i - 2], knots[i - 1]),
            i => (knots[i - 1], knots[i]),
        };
        let span = (b.prompt_tokens - a.prompt_tokens) as f64;
        let frac = (p as f64 - a.prompt_tokens as f64) / span;
        let t = a.encoding_time + frac * (b.encoding_time - a.encoding_time);
        // Only extrapolation can go negative.
        t.max(0.0)
    }

    /// End-to-end runtime in seconds for a `p`-token prompt producing `o`
    /// output tokens. `o` of zero is treated as one.
    pub fn evaluate(&self, p: u64, o: u64) -> f64 {
        let extra_tokens = o.saturating_sub(1) as f64;
        self.prompt_encoding_time(p) + extra_tokens * self.per_token_slope + self.overhead
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("params serialize");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<RuntimeModelParams, ParamsError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<RuntimeModelParams, ParamsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        RuntimeModelParams::from_json(&text)
    }
}

/// Reference parameter sets shipped with the crate: idealized (Megatron on
/// A100) and denoised fits for davinci, jurassic-grande, jurassic-jumbo and
/// anthropic-52b at p = 512 / 1024 / 1536.
pub const REFERENCE_PARAMS: &str = include_str!("../data/reference_params.json");

pub fn reference_params() -> Vec<RuntimeModelParams> {
    serde_json::from_str(REFERENCE_PARAMS).expect("reference params parse")
}

/// Goodness-of-fit summary produced alongside fitted parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub per_prompt_r2: BTreeMap<u64, f64>,
    pub slope_r2: f64,
    pub sample_count: usize,
    pub residual_max: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}
