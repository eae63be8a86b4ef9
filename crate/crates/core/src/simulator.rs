//! Synthetic black-box provider.
//!
//! A provider hides ground-truth runtime parameters (overhead included) and
//! answers queries with
//!
//! ```text
//! runtime = truth(p, o) * contention(q) * outlier + eta
//! ```
//!
//! where `q` is the number of parallel queries, `outlier` is 1 or a uniform
//! multiplier from `outlier_multiplier_range`, and `eta` is exponential with
//! mean `base_noise_mean + relative_noise_mean * truth(p, o) * contention(q)`.
//! Every term is >= its noiseless value, so no sample is ever faster than the
//! truth.
//!
//! Randomness comes from a ChaCha8 stream seeded with `NoiseSpec::seed`. Each
//! sample consumes, in order: one uniform for the outlier decision, one
//! uniform for the multiplier (only when the sample is an outlier), and one
//! uniform `u` turned into `eta = -mean * ln(1 - u)`. Uniforms are `f64` in
//! `[0, 1)`. Contention is deterministic and draws nothing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::estimator::ProfileSample;
use crate::runtime_model::RuntimeModelParams;

pub const SHIPPED_PRESETS: &str = include_str!("../data/presets.json");

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid noise spec: {0}")]
    InvalidNoise(String),
    #[error("unknown noise preset '{0}'")]
    UnknownPreset(String),
    #[error("failed to parse presets: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub seed: u64,
    /// Mean of the additive exponential term, in seconds.
    pub base_noise_mean: f64,
    /// Additional exponential mean as a fraction of the contended runtime.
    #[serde(default)]
    pub relative_noise_mean: f64,
    pub outlier_probability: f64,
    pub outlier_multiplier_range: (f64, f64),
    pub contention_max: f64,
    pub contention_saturation: u32,
}

impl NoiseSpec {
    pub fn noiseless(seed: u64) -> NoiseSpec {
        NoiseSpec {
            seed,
            base_noise_mean: 0.0,
            relative_noise_mean: 0.0,
            outlier_probability: 0.0,
            outlier_multiplier_range: (1.0, 1.0),
            contention_max: 1.0,
            contention_saturation: 2,
        }
    }

    pub fn validate(&self) -> Result<(), SimulatorError> {
        let bad = |msg: &str| Err(SimulatorError::InvalidNoise(msg.to_string()));
        if !(self.base_noise_mean.is_finite() && self.base_noise_mean >= 0.0) {
            return bad("base_noise_mean must be >= 0");
        }
        if !(self.relative_noise_mean.is_finite() && self.relative_noise_mean >= 0.0) {
            return bad("relative_noise_mean must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.outlier_probability) {
            return bad("outlier_probability must be in [0, 1]");
        }
        let (low, high) = self.outlier_multiplier_range;
        if !(low.is_finite() && high.is_finite() && 1.0 <= low && low <= high) {
            return bad("outlier_multiplier_range must satisfy 1 <= low <= high");
        }
        if !(self.contention_max.is_finite() && self.contention_max >= 1.0) {
            return bad("contention_max must be >= 1");
        }
        if self.contention_saturation < 2 {
            return bad("contention_saturation must be >= 2");
        }
        Ok(())
    }

    /// Runtime multiplier with `parallelism` queries in flight: 1 when
    /// isolated, rising linearly to `contention_max` at saturation.
    pub fn contention(&self, parallelism: u32) -> f64 {
        let q = parallelism.max(1) as f64;
        let ramp = ((q - 1.0) / (self.contention_saturation as f64 - 1.0)).min(1.0);
        1.0 + (self.contention_max - 1.0) * ramp
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct NoisePreset {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub noise: NoiseSpec,
}

#[derive(Deserialize)]
struct PresetFile {
    presets: Vec<NoisePreset>,
}

pub fn shipped_presets() -> Vec<NoisePreset> {
    let file: PresetFile = serde_json::from_str(SHIPPED_PRESETS).expect("shipped presets parse");
    file.presets
}

/// Looks up a shipped preset and applies `seed`.
pub fn preset(name: &str, seed: u64) -> Result<NoiseSpec, SimulatorError> {
    let mut noise = shipped_presets()
        .into_iter()
        .find(|p| p.name == name)
        .map(|p| p.noise)
        .ok_or_else(|| SimulatorError::UnknownPreset(name.to_string()))?;
    noise.seed = seed;
    noise.validate()?;
    Ok(noise)
}

/// One row of a load sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoadPoint {
    pub parallelism: u32,
    pub output_tokens: u64,
    pub min_runtime: f64,
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    outlier: f64,
    unit_exponential: f64,
}

/// A simulated API. Holds a single random stream; give concurrent users
/// their own providers with distinct seeds.
#[derive(Debug, Clone)]
pub struct SimulatedProvider {
    truth: RuntimeModelParams,
    noise: NoiseSpec,
    rng: ChaCha8Rng,
}

impl SimulatedProvider {
    pub fn new(truth: RuntimeModelParams, noise: NoiseSpec) -> Result<SimulatedProvider, SimulatorError> {
        noise.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(noise.seed);
        Ok(SimulatedProvider { truth, noise, rng })
    }

    pub fn truth(&self) -> &RuntimeModelParams {
        &self.truth
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    fn draw(&mut self) -> Draw {
        let u = self.rng.random::<f64>();
        let outlier = if u < self.noise.outlier_probability {
            let (low, high) = self.noise.outlier_multiplier_range;
            low + (high - low) * self.rng.random::<f64>()
        } else {
            1.0
        };
        let u: f64 = self.rng.random();
        Draw {
            outlier,
            unit_exponential: -(1.0 - u).ln(),
        }
    }

    fn apply(&self, draw: Draw, p: u64, o: u64, parallelism: u32) -> f64 {
        let contended = self.truth.evaluate(p, o) * self.noise.contention(parallelism);
        let eta_mean = self.noise.base_noise_mean + self.noise.relative_noise_mean * contended;
        contended * draw.outlier + eta_mean * draw.unit_exponential
    }

    /// Simulated runtime of one query, in seconds.
    pub fn sample_runtime(&mut self, p: u64, o: u64, parallelism: u32) -> f64 {
        let draw = self.draw();
        self.apply(draw, p, o, parallelism)
    }

    /// `trials` samples of every (p, o) cell, ordered by p, then o, then trial.
    pub fn run_trials(&mut self, grid_p: &[u64], grid_o: &[u64], trials: u32, parallelism: u32) -> Vec<ProfileSample> {
        let mut out = Vec::with_capacity(grid_p.len() * grid_o.len() * trials as usize);
        for &p in grid_p {
            for &o in grid_o {
                for trial in 0..trials {
                    out.push(ProfileSample {
                        prompt_tokens: p,
                        output_tokens: o,
                        trial,
                        parallelism,
                        runtime: self.sample_runtime(p, o, parallelism),
                    });
                }
            }
        }
        out
    }

    /// Minimum runtime over `trials` for each (parallelism, o), ordered by
    /// parallelism then o.
    ///
    /// The same draws are reused across parallelism levels for a given
    /// (o, trial), so for fixed o the minima never decrease with load.
    pub fn load_sweep(&mut self, p: u64, o_list: &[u64], parallelism_levels: &[u32], trials: u32) -> Vec<LoadPoint> {
        let mut minima = vec![f64::INFINITY; o_list.len() * parallelism_levels.len()];
        for (oi, &o) in o_list.iter().enumerate() {
            for _ in 0..trials {
                let draw = self.draw();
                for (qi, &q) in parallelism_levels.iter().enumerate() {
                    let slot = &mut minima[qi * o_list.len() + oi];
                    *slot = slot.min(self.apply(draw, p, o, q));
                }
            }
        }
        parallelism_levels
            .iter()
            .flat_map(|&q| o_list.iter().map(move |&o| (q, o)))
            .zip(minima)
            .map(|((parallelism, output_tokens), min_runtime)| LoadPoint {
                parallelism,
                output_tokens,
                min_runtime,
            })
            .collect()
    }
}
