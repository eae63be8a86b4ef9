//! FLOP accounting for Transformer forward passes.
//!
//! All counts are exact `u128` integers. Layer norm, softmax, embedding,
//! vocabulary projection and sampling are not counted.
//!
//! Argument names follow the usual shape convention: `b` sequences (the
//! microbatch), `s` or `p` tokens per sequence, hidden size `h`, `n`
//! attention heads and `l` layers. `i` is the number of tokens already in
//! the context when generating the next one.

use serde::Serialize;
use thiserror::Error;

use crate::registry::ModelArchitecture;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlopsError {
    #[error("hidden size {hidden} is not divisible by head count {heads}")]
    HeadsDoNotDivide { hidden: u64, heads: u64 },
    #[error("prompt tokens and output tokens must both be >= 1 (got p={prompt}, o={output})")]
    EmptyQuery { prompt: u64, output: u64 },
    #[error("query with p={prompt}, o={output} exceeds context length {max_context} (p + o must be <= {limit})", limit = max_context + 1)]
    ContextExceeded {
        prompt: u64,
        output: u64,
        max_context: u64,
    },
}

/// FLOPs of one forward pass split by operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FlopBreakdown {
    pub qkv: u128,
    pub attention_scores: u128,
    pub attention_over_values: u128,
    pub projection: u128,
    pub mlp: u128,
    pub total: u128,
}

impl FlopBreakdown {
    fn from_parts(qkv: u128, attention_scores: u128, attention_over_values: u128, projection: u128, mlp: u128) -> Self {
        FlopBreakdown {
            qkv,
            attention_scores,
            attention_over_values,
            projection,
            mlp,
            total: qkv + attention_scores + attention_over_values + projection + mlp,
        }
    }
}

fn check_heads(h: u64, n: u64) -> Result<(), FlopsError> {
    if n == 0 || !h.is_multiple_of(n) {
        return Err(FlopsError::HeadsDoNotDivide { hidden: h, heads: n });
    }
    Ok(())
}

/// Forward-pass FLOPs over `b` sequences of `s` tokens:
/// `24 b s h^2 l + 4 b s^2 h l`, i.e. `24 b s h^2 l (1 + s / 6h)`.
pub fn training_forward_flops(b: u64, s: u64, h: u64, l: u64) -> u128 {
    let (b, s, h, l) = (b as u128, s as u128, h as u128, l as u128);
    24 * b * s * h * h * l + 4 * b * s * s * h * l
}

/// Operator-level breakdown of [`training_forward_flops`]. Attention is
/// counted per head (`n` batched matmuls of width `h / n`), so the total does
/// not depend on `n`.
pub fn operator_breakdown_training(b: u64, s: u64, h: u64, n: u64, l: u64) -> Result<FlopBreakdown, FlopsError> {
    check_heads(h, n)?;
    let (b, s, h, n, l) = (b as u128, s as u128, h as u128, n as u128, l as u128);
    let head_dim = h / n;
    // Per layer, as 2 * (multiply-accumulate count).
    let qkv = 2 * b * s * h * (3 * h);
    let scores = 2 * b * n * s * s * head_dim;
    let values = 2 * b * n * s * s * head_dim;
    let projection = 2 * b * s * h * h;
    let mlp = 2 * b * s * h * (4 * h) + 2 * b * s * (4 * h) * h;
    Ok(FlopBreakdown::from_parts(qkv * l, scores * l, values * l, projection * l, mlp * l))
}

/// FLOPs to encode a `p`-token prompt. `exact` includes the quadratic
/// attention term; otherwise the linear `24 b p h^2 l` form is returned.
pub fn prompt_encoding_flops(b: u64, p: u64, h: u64, l: u64, exact: bool) -> u128 {
    if exact {
        training_forward_flops(b, p, h, l)
    } else {
        24 * b as u128 * p as u128 * (h as u128).pow(2) * l as u128
    }
}

/// FLOPs to generate one token with `i` tokens already in the context:
/// `24 b h^2 l + 4 b i h l`.
pub fn token_generation_flops(b: u64, i: u64, h: u64, l: u64) -> u128 {
    let (b, i, h, l) = (b as u128, i as u128, h as u128, l as u128);
    24 * b * h * h * l + 4 * b * i * h * l
}

/// Operator-level breakdown of [`token_generation_flops`].
pub fn operator_breakdown_generation(b: u64, i: u64, h: u64, n: u64, l: u64) -> Result<FlopBreakdown, FlopsError> {
    check_heads(h, n)?;
    let (b, i, h, n, l) = (b as u128, i as u128, h as u128, n as u128, l as u128);
    let head_dim = h / n;
    let qkv = 2 * b * h * (3 * h);
    // The new query attends over the i cached keys/values.
    let scores = 2 * b * n * i * head_dim;
    let values = 2 * b * n * i * head_dim;
    let projection = 2 * b * h * h;
    let mlp = 2 * b * h * (4 * h) + 2 * b * (4 * h) * h;
    Ok(FlopBreakdown::from_parts(qkv * l, scores * l, values * l, projection * l, mlp * l))
}

/// Checks that a `p`-token prompt with `o` output tokens fits the model's
/// context. The last generated token never has to be fed back, hence the +1.
pub fn check_context(arch: &ModelArchitecture, p: u64, o: u64) -> Result<(), FlopsError> {
    if p == 0 || o == 0 {
        return Err(FlopsError::EmptyQuery { prompt: p, output: o });
    }
    if p.saturating_add(o) > arch.max_context_length.saturating_add(1) {
        return Err(FlopsError::ContextExceeded {
            prompt: p,
            output: o,
            max_context: arch.max_context_length,
        });
    }
    Ok(())
}

/// Total FLOPs for a single query: one exact prompt-encoding pass (which also
/// yields the first output token) followed by `o - 1` generation passes with
/// `p, p + 1, ..., p + o - 2` tokens in context.
pub fn query_total_flops(arch: &ModelArchitecture, p: u64, o: u64) -> Result<u128, FlopsError> {
    check_context(arch, p, o)?;
    let (h, l) = (arch.hidden_size, arch.num_layers);
    let passes = (o - 1) as u128;
    // sum_{i=p}^{p+o-2} i
    let context_sum = passes * (2 * p as u128 + passes - 1) / 2;
    let (h, l) = (h as u128, l as u128);
    let generation = passes * 24 * h * h * l + 4 * h * l * context_sum;
    Ok(prompt_encoding_flops(1, p, arch.hidden_size, arch.num_layers, true) + generation)
}
