//! Model architecture and hardware profile registry.
//!
//! The registry is a JSON document with two top-level arrays, `models` and
//! `hardware_profiles`. Every record is validated on load; the result is
//! immutable and can be shared freely across threads.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Registry shipped with the crate: the ten reference models plus an A100
/// and a V100 hardware profile.
pub const SHIPPED_REGISTRY: &str = include_str!("../data/registry.json");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("failed to parse registry: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to read registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{kind} '{id}': {field} {reason}")]
    Invalid {
        kind: &'static str,
        id: String,
        field: &'static str,
        reason: String,
    },
    #[error("duplicate {kind} id '{id}'")]
    Duplicate { kind: &'static str, id: String },
    #[error("model '{model}' references unknown hardware profile '{hardware}'")]
    DanglingHardware { model: String, hardware: String },
    #[error("unknown {kind} '{id}'")]
    NotFound { kind: &'static str, id: String },
}

/// Where a model is served by default: a hardware profile plus the number of
/// accelerators one request occupies on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServingConfig {
    pub hardware: String,
    pub accelerator_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArchitecture {
    pub id: String,
    pub provider: String,
    pub hidden_size: u64,
    pub num_layers: u64,
    pub num_heads: u64,
    pub reported_param_count: u64,
    pub max_context_length: u64,
    pub default_serving: ServingConfig,
}

impl ModelArchitecture {
    pub fn head_dim(&self) -> u64 {
        self.hidden_size / self.num_heads
    }

    fn validate(&self) -> Result<(), RegistryError> {
        let invalid = |field, reason: &str| RegistryError::Invalid {
            kind: "model",
            id: self.id.clone(),
            field,
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("id", "must not be empty"));
        }
        if self.hidden_size == 0 {
            return Err(invalid("hidden_size", "must be >= 1"));
        }
        if self.num_layers == 0 {
            return Err(invalid("num_layers", "must be >= 1"));
        }
        if self.num_heads == 0 {
            return Err(invalid("num_heads", "must be >= 1"));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(invalid("hidden_size", "h not divisible by n"));
        }
        if self.max_context_length == 0 {
            return Err(invalid("max_context_length", "must be >= 1"));
        }
        if self.reported_param_count == 0 {
            return Err(invalid("reported_param_count", "must be > 0"));
        }
        if self.default_serving.accelerator_count == 0 {
            return Err(invalid("default_serving.accelerator_count", "must be >= 1"));
        }
        Ok(())
    }
}

/// Accelerator pricing and power figures. `cost_rate` is currency per
/// accelerator-second and `power_draw` is watts per accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub id: String,
    pub accelerator_type: String,
    pub accelerator_count: u64,
    pub cost_rate: f64,
    pub power_draw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl HardwareProfile {
    /// The same profile with a different accelerator count.
    pub fn with_accelerators(&self, accelerator_count: u64) -> HardwareProfile {
        HardwareProfile {
            accelerator_count,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<(), RegistryError> {
        let invalid = |field, reason: &str| RegistryError::Invalid {
            kind: "hardware profile",
            id: self.id.clone(),
            field,
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(invalid("id", "must not be empty"));
        }
        if self.accelerator_count == 0 {
            return Err(invalid("accelerator_count", "must be >= 1"));
        }
        if !(self.cost_rate.is_finite() && self.cost_rate >= 0.0) {
            return Err(invalid("cost_rate", "must be a finite value >= 0"));
        }
        if !(self.power_draw.is_finite() && self.power_draw >= 0.0) {
            return Err(invalid("power_draw", "must be a finite value >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    #[serde(default)]
    pub models: Vec<ModelArchitecture>,
    #[serde(default)]
    pub hardware_profiles: Vec<HardwareProfile>,
}

impl Registry {
    pub fn model(&self, id: &str) -> Result<&ModelArchitecture, RegistryError> {
        self.models
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| RegistryError::NotFound {
                kind: "model",
                id: id.to_string(),
            })
    }

    pub fn hardware(&self, id: &str) -> Result<&HardwareProfile, RegistryError> {
        self.hardware_profiles
            .iter()
            .find(|h| h.id == id)
            .ok_or_else(|| RegistryError::NotFound {
                kind: "hardware profile",
                id: id.to_string(),
            })
    }

    /// Hardware profile a model is served on by default, with the model's
    /// accelerator count applied.
    pub fn default_hardware(&self, model: &ModelArchitecture) -> Result<HardwareProfile, RegistryError> {
        let hw = self.hardware(&model.default_serving.hardware)?;
        Ok(hw.with_accelerators(model.default_serving.accelerator_count))
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("registry serializes");
        out.push('\n');
        out
    }

    pub fn shipped() -> Registry {
        load_registry(SHIPPED_REGISTRY).expect("shipped registry is valid")
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Registry, RegistryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        load_registry(&text)
    }
}

/// Parses and validates a registry document. An empty (or whitespace-only)
/// document yields an empty registry.
pub fn load_registry(source: &str) -> Result<Registry, RegistryError> {
    if source.trim().is_empty() {
        return Ok(Registry::default());
    }
    let registry: Registry = serde_json::from_str(source)?;

    let mut hw_ids = BTreeSet::new();
    for hw in &registry.hardware_profiles {
        hw.validate()?;
        if !hw_ids.insert(hw.id.as_str()) {
            return Err(RegistryError::Duplicate {
                kind: "hardware profile",
                id: hw.id.clone(),
            });
        }
    }
    let mut model_ids = BTreeSet::new();
    for model in &registry.models {
        model.validate()?;
        if !model_ids.insert(model.id.as_str()) {
            return Err(RegistryError::Duplicate {
                kind: "model",
                id: model.id.clone(),
            });
        }
        if !hw_ids.contains(model.default_serving.hardware.as_str()) {
            return Err(RegistryError::DanglingHardware {
                model: model.id.clone(),
                hardware: model.default_serving.hardware.clone(),
            });
        }
    }
    Ok(registry)
}

/// Transformer-layer weight count, `12 * l * h^2`: QKV (h x 3h), output
/// projection (h x h) and the two MLP matrices (h x 4h, 4h x h). Embeddings
/// are not counted.
pub fn approx_param_count(arch: &ModelArchitecture) -> u128 {
    let h = arch.hidden_size as u128;
    12 * arch.num_layers as u128 * h * h
}
