//! Declarative run configuration (TOML). Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! rest_s = 10.0
//! duration_cap_s = 900.0
//! output_dir = "logs"
//!
//! [profile]
//! preset = "medium"          # or: model = { kind = "scripted", points = [[0.0, 0.35]] }
//! feedback_coupling = 0.0
//!
//! [thresholds]               # optional facilitator pair; omit for adaptive
//! t1 = 41.0
//! t2 = 67.0
//!
//! [server]
//! listen = "127.0.0.1:7878"
//! ws_listen = "127.0.0.1:7879"
//! device = "simulator"
//! ```
//!
//! `[dsp]`, `[simulator]`, `[calibration]` and `[engine]` accept the fields
//! of the corresponding config structs; every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{set_manual_thresholds, CalibrationConfig};
use crate::dsp::DspConfig;
use crate::engine::{CharacterSkins, EngineConfig};
use crate::protocol::DeviceKind;
use crate::runner::SimulationConfig;
use crate::session::SessionConfig;
use crate::sim::{AttentionProfile, LatentModel, SimulatorConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<LatentModel>,
    /// Overrides the run seed for the simulator only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub feedback_coupling: f64,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            preset: Some("medium".into()),
            model: None,
            seed: None,
            feedback_coupling: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualThresholds {
    pub t1: f64,
    pub t2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub listen: String,
    /// WebSocket endpoint for browser consoles.
    pub ws_listen: String,
    pub device: DeviceKind,
    pub reorder_horizon_s: f64,
    pub observer_queue: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            ws_listen: "127.0.0.1:7879".into(),
            device: DeviceKind::Simulator,
            reorder_horizon_s: 2.0,
            observer_queue: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub rest_s: f64,
    pub duration_cap_s: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub session_id: Option<String>,
    pub profile: ProfileSpec,
    pub thresholds: Option<ManualThresholds>,
    pub skins: CharacterSkins,
    pub dsp: DspConfig,
    pub simulator: SimulatorConfig,
    pub calibration: CalibrationConfig,
    pub engine: EngineConfig,
    pub server: ServerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rest_s: 10.0,
            duration_cap_s: None,
            output_dir: None,
            session_id: None,
            profile: ProfileSpec::default(),
            thresholds: None,
            skins: CharacterSkins::new(),
            dsp: DspConfig::default(),
            simulator: SimulatorConfig::default(),
            calibration: CalibrationConfig::default(),
            engine: EngineConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.dsp.validate().map_err(|e| invalid(&e))?;
        self.simulator.validate().map_err(|e| invalid(&e))?;
        self.calibration.validate().map_err(|e| invalid(&e))?;
        self.engine.validate().map_err(|e| invalid(&e))?;
        if !self.rest_s.is_finite() || self.rest_s < self.dsp.window_s {
            return Err(ConfigError::Invalid(
                "rest_s must be at least one analysis window".into(),
            ));
        }
        if let Some(cap) = self.duration_cap_s {
            if !cap.is_finite() || cap <= 0.0 {
                return Err(ConfigError::Invalid("duration_cap_s must be positive".into()));
            }
        }
        if let Some(th) = self.thresholds {
            set_manual_thresholds(th.t1, th.t2).map_err(|e| invalid(&e))?;
        }
        if !self.server.reorder_horizon_s.is_finite() || self.server.reorder_horizon_s < 0.0 {
            return Err(ConfigError::Invalid("reorder_horizon_s must be >= 0".into()));
        }
        if self.server.observer_queue == 0 {
            return Err(ConfigError::Invalid("observer_queue must be positive".into()));
        }
        self.attention_profile()?.validate().map_err(|e| invalid(&e))?;
        Ok(())
    }

    pub fn training_start_s(&self) -> f64 {
        self.rest_s + self.calibration.calibration_duration_s
    }

    pub fn attention_profile(&self) -> Result<AttentionProfile, ConfigError> {
        let seed = self.profile.seed.unwrap_or(self.seed);
        let mut profile = match (&self.profile.preset, &self.profile.model) {
            (Some(name), None) => AttentionProfile::preset(name, seed, self.rest_s, self.training_start_s())
                .ok_or_else(|| {
                    ConfigError::Invalid(format!(
                        "unknown profile preset {name:?} (expected one of {})",
                        AttentionProfile::PRESETS.join(", ")
                    ))
                })?,
            (None, Some(model)) => AttentionProfile {
                model: model.clone(),
                seed,
                feedback_coupling: 0.0,
                onset_s: self.rest_s,
            },
            _ => {
                return Err(ConfigError::Invalid(
                    "profile needs exactly one of `preset` or `model`".into(),
                ))
            }
        };
        profile.feedback_coupling = self.profile.feedback_coupling;
        Ok(profile)
    }

    pub fn simulation(&self) -> Result<SimulationConfig, ConfigError> {
        self.validate()?;
        Ok(SimulationConfig {
            profile: self.attention_profile()?,
            dsp: self.dsp,
            simulator: self.simulator,
            session: self.session_config(),
            rest_s: self.rest_s,
            duration_cap_s: self.duration_cap_s,
            manual_thresholds: self.thresholds.map(|t| (t.t1, t.t2)),
            character_skins: self.skins.clone(),
            session_id: self.session_id.clone(),
        })
    }

    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            calibration: self.calibration,
            engine: self.engine,
            engine_seed: self.seed ^ 0x5eed_0000_0000_0000,
        }
    }
}
