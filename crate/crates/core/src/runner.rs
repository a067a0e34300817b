//! Headless end-to-end session: simulator → band power → index → session.
//!
//! Timeline: a resting segment (latent attention 0) provides the index
//! reference power, then the calibration video, then training until the
//! egg goal, a facilitator stop, or the duration cap.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::{attention_index, AttentionSample, BandPowerStream, DspConfig, DspError, ReferenceRecorder};
use crate::engine::{CharacterSkins, FeedbackEvent};
use crate::protocol::{Body, Message};
use crate::session::{Session, SessionConfig, SessionError, SessionPhase};
use crate::sim::{AttentionProfile, FrameGenerator, SimulatorConfig};

/// Stream length used when no duration cap is given.
pub const DEFAULT_STREAM_LIMIT_S: f64 = 3600.0;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("invalid run setup: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub profile: AttentionProfile,
    pub dsp: DspConfig,
    pub simulator: SimulatorConfig,
    pub session: SessionConfig,
    pub rest_s: f64,
    /// Simulated seconds since session start after which training is cut.
    pub duration_cap_s: Option<f64>,
    pub manual_thresholds: Option<(f64, f64)>,
    pub character_skins: CharacterSkins,
    pub session_id: Option<String>,
}

impl SimulationConfig {
    pub fn new(profile: AttentionProfile) -> Self {
        Self {
            profile,
            dsp: DspConfig::default(),
            simulator: SimulatorConfig::default(),
            session: SessionConfig::default(),
            rest_s: 10.0,
            duration_cap_s: None,
            manual_thresholds: None,
            character_skins: CharacterSkins::new(),
            session_id: None,
        }
    }

    /// When calibration ends and training begins, in session time.
    pub fn training_start_s(&self) -> f64 {
        self.rest_s + self.session.calibration.calibration_duration_s
    }

    /// Deterministic id derived from the full configuration.
    pub fn derived_id(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug)]
pub struct SimulationOutcome {
    pub session: Session,
    pub reference_power: f64,
    pub timed_out: bool,
}

fn rewards(messages: &[Message]) -> usize {
    messages
        .iter()
        .filter(|m| match &m.body {
            Body::FeedbackEvent(b) => FeedbackEvent::new(m.t, b.effect.clone()).is_reward(),
            _ => false,
        })
        .count()
}

pub fn run_simulated(cfg: &SimulationConfig) -> Result<SimulationOutcome, RunError> {
    if cfg.rest_s < cfg.dsp.window_s || !cfg.rest_s.is_finite() || !cfg.dsp.window_s.is_finite() {
        return Err(RunError::Config(
            "rest_s must cover at least one analysis window".into(),
        ));
    }
    if let Some(cap) = cfg.duration_cap_s {
        if cap <= 0.0 || !cap.is_finite() {
            return Err(RunError::Config("duration cap must be positive".into()));
        }
    }
    cfg.session
        .calibration
        .validate()
        .map_err(|e| RunError::Config(e.to_string()))?;
    cfg.session
        .engine
        .validate()
        .map_err(|e| RunError::Config(e.to_string()))?;

    let limit = cfg.duration_cap_s.unwrap_or(DEFAULT_STREAM_LIMIT_S);
    let mut gen = FrameGenerator::new(cfg.profile.clone(), cfg.simulator, cfg.dsp, limit + cfg.dsp.hop_s)?;
    let mut stream = BandPowerStream::new(cfg.dsp)?;
    let mut recorder = ReferenceRecorder::default();
    let id = cfg.session_id.clone().unwrap_or_else(|| cfg.derived_id());
    let mut session = Session::new(id, cfg.session.clone(), 0.0, cfg.character_skins.clone());
    if let Some((t1, t2)) = cfg.manual_thresholds {
        session.set_manual_thresholds(0.0, t1, t2)?;
    }
    let mut reference = None;
    let mut timed_out = false;

    'frames: while let Some(frame) = gen.next() {
        for (t, power) in stream.push(&frame)? {
            let Some(p_ref) = reference else {
                recorder.add(power);
                if t >= cfg.rest_s {
                    let p_ref = recorder.reference().ok_or(DspError::CalibrationRequired(0.0))?;
                    reference = Some(p_ref);
                    session.begin_calibration(t, None, Some(p_ref))?;
                }
                continue;
            };
            if t > limit {
                session.stop(t, Some("duration cap reached".into()))?;
                timed_out = true;
                break 'frames;
            }
            let index = attention_index(power, p_ref, &cfg.dsp)?;
            let out = session.push_sample(AttentionSample::new(t, index))?;
            gen.reinforce(rewards(&out));
            if session.phase() == SessionPhase::Conclusion {
                break 'frames;
            }
        }
    }
    if session.phase() != SessionPhase::Conclusion {
        let t = session.log().last().map_or(0.0, |m| m.t);
        session.stop(t, Some("duration cap reached".into()))?;
        timed_out = true;
    }
    Ok(SimulationOutcome {
        session,
        reference_power: reference.unwrap_or(0.0),
        timed_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::Conclusion;

    fn preset(name: &str, seed: u64) -> SimulationConfig {
        let base = SimulationConfig::new(AttentionProfile::constant(0.0, seed));
        let profile = AttentionProfile::preset(name, seed, base.rest_s, base.training_start_s()).unwrap();
        SimulationConfig { profile, ..base }
    }

    #[test]
    fn medium_profile_completes() {
        let out = run_simulated(&preset("medium", 7)).unwrap();
        assert_eq!(out.session.conclusion(), Some(Conclusion::Completed));
        assert!(!out.timed_out);
        let r = out.session.report().unwrap();
        assert!((240.0..=300.0).contains(&r.duration_s), "{}", r.duration_s);
    }

    #[test]
    fn cap_cuts_training() {
        let cfg = SimulationConfig {
            duration_cap_s: Some(120.0),
            ..preset("low", 1)
        };
        let out = run_simulated(&cfg).unwrap();
        assert!(out.timed_out);
        let r = out.session.report().unwrap();
        assert!(!r.completed);
        assert!(r.eggs_stored < 60);
    }

    #[test]
    fn replayed_metrics_equal_live_metrics() {
        for cfg in [
            preset("medium", 2),
            SimulationConfig {
                duration_cap_s: Some(150.0),
                ..preset("low", 4)
            },
        ] {
            let out = run_simulated(&cfg).unwrap();
            let live = crate::analytics::live_metrics(&out.session).unwrap();
            let replayed = crate::analytics::compute_metrics(out.session.log()).unwrap();
            assert_eq!(live, replayed);
        }
    }

    #[test]
    fn identical_runs_identical_logs() {
        let a = run_simulated(&preset("medium", 3)).unwrap().session.into_log();
        let b = run_simulated(&preset("medium", 3)).unwrap().session.into_log();
        assert_eq!(a, b);
    }
}
