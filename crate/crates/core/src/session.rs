//! Session lifecycle: Customization → Calibration → Training → Conclusion.
//!
//! A [`Session`] owns the engine for one child and one sitting. Every input
//! it accepts is turned into wire messages that are appended to the session
//! log and returned to the caller for broadcast. Index samples and
//! thresholds are normalized to wire precision on entry, so replaying the
//! log reproduces the live accounting exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibration::{
    compute_baseline, compute_thresholds, set_manual_thresholds, CalibrationConfig, CalibrationError,
    Thresholds,
};
use crate::dsp::AttentionSample;
use crate::engine::{CharacterSkins, Engine, EngineConfig, EngineError, SessionReport};
use crate::protocol::{
    self, round_sig, Body, CalibrateBegin, CalibrateResult, ControlAction, FeedbackEventBody, GameProgress,
    Message, ProtocolError, SessionControl, ThresholdSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Customization,
    Calibration,
    Training,
    Conclusion,
}

impl SessionPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Customization => "customization",
            Self::Calibration => "calibration",
            Self::Training => "training",
            Self::Conclusion => "conclusion",
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("{action} not allowed during {phase:?}")]
    PhaseGuard {
        action: &'static str,
        phase: SessionPhase,
    },
    #[error("session is paused")]
    Paused,
    #[error("message type {0} is not accepted by a session")]
    Unsupported(&'static str),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub calibration: CalibrationConfig,
    pub engine: EngineConfig,
    /// Seeds the egg colour palette draw.
    pub engine_seed: u64,
}

/// How a session reached Conclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conclusion {
    Completed,
    Stopped,
}

fn normalize_thresholds(th: Thresholds) -> Thresholds {
    Thresholds {
        baseline: th.baseline.map(round_sig),
        t1: round_sig(th.t1),
        t2: round_sig(th.t2),
        source: th.source,
    }
}

#[derive(Debug)]
pub struct Session {
    id: String,
    cfg: SessionConfig,
    phase: SessionPhase,
    seq: u64,
    last_t: f64,
    log: Vec<Message>,
    calibration_end: Option<f64>,
    calibration_samples: Vec<AttentionSample>,
    preset: Option<Thresholds>,
    thresholds: Option<Thresholds>,
    engine: Option<Engine>,
    report: Option<SessionReport>,
    conclusion: Option<Conclusion>,
    paused_at: Option<f64>,
    dropped_while_paused: u64,
}

impl Session {
    /// Opens a session in Customization and writes the log header.
    pub fn new(id: impl Into<String>, cfg: SessionConfig, t: f64, skins: CharacterSkins) -> Self {
        let id = id.into();
        let mut s = Self {
            id: id.clone(),
            cfg,
            phase: SessionPhase::Customization,
            seq: 0,
            last_t: t,
            log: Vec::new(),
            calibration_end: None,
            calibration_samples: Vec::new(),
            preset: None,
            thresholds: None,
            engine: None,
            report: None,
            conclusion: None,
            paused_at: None,
            dropped_while_paused: 0,
        };
        let header = SessionControl {
            phase: Some(SessionPhase::Customization),
            session_id: Some(id),
            character_skins: (!skins.is_empty()).then_some(skins),
            ..SessionControl::action(ControlAction::Start)
        };
        s.emit(t, Body::SessionControl(header));
        s
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    pub fn log(&self) -> &[Message] {
        &self.log
    }

    pub fn into_log(self) -> Vec<Message> {
        self.log
    }

    pub fn thresholds(&self) -> Option<&Thresholds> {
        self.thresholds.as_ref()
    }

    pub fn engine(&self) -> Option<&Engine> {
        self.engine.as_ref()
    }

    pub fn report(&self) -> Option<&SessionReport> {
        self.report.as_ref()
    }

    pub fn conclusion(&self) -> Option<Conclusion> {
        self.conclusion
    }

    pub fn is_paused(&self) -> bool {
        self.paused_at.is_some()
    }

    pub fn dropped_while_paused(&self) -> u64 {
        self.dropped_while_paused
    }

    /// Scheduled end of calibration, once it has begun.
    pub fn calibration_end(&self) -> Option<f64> {
        self.calibration_end
    }

    fn emit(&mut self, t: f64, body: Body) -> Message {
        let t = t.max(self.last_t);
        self.last_t = t;
        let msg = Message::new(t, self.seq, body);
        self.seq += 1;
        self.log.push(msg.clone());
        msg
    }

    fn enter(&mut self, t: f64, phase: SessionPhase, reason: Option<String>, out: &mut Vec<Message>) {
        self.phase = phase;
        out.push(self.emit(t, Body::SessionControl(SessionControl::phase(phase, reason))));
    }

    fn threshold_message(th: &Thresholds) -> Body {
        Body::ThresholdSet(ThresholdSet {
            t1: th.t1,
            t2: th.t2,
            source: th.source,
        })
    }

    /// Facilitator thresholds. Before calibration they replace the adaptive
    /// pair; during training they apply from the next sample.
    pub fn set_manual_thresholds(&mut self, t: f64, t1: f64, t2: f64) -> Result<Vec<Message>, SessionError> {
        let phase = self.phase;
        if matches!(phase, SessionPhase::Calibration | SessionPhase::Conclusion) {
            return Err(SessionError::PhaseGuard {
                action: "threshold_set",
                phase,
            });
        }
        let th = normalize_thresholds(set_manual_thresholds(t1, t2)?);
        let out = vec![self.emit(t, Self::threshold_message(&th))];
        if phase == SessionPhase::Training {
            if let Some(engine) = self.engine.as_mut() {
                engine.set_thresholds(th);
            }
            self.thresholds = Some(th);
        } else {
            self.preset = Some(th);
        }
        Ok(out)
    }

    pub fn begin_calibration(
        &mut self,
        t: f64,
        duration_s: Option<f64>,
        reference_power: Option<f64>,
    ) -> Result<Vec<Message>, SessionError> {
        if self.phase != SessionPhase::Customization {
            return Err(SessionError::PhaseGuard {
                action: "calibrate_begin",
                phase: self.phase,
            });
        }
        let duration_s = duration_s.unwrap_or(self.cfg.calibration.calibration_duration_s);
        let body = Body::CalibrateBegin(CalibrateBegin {
            duration_s,
            reference_power,
        });
        body.validate()?;
        let mut out = Vec::new();
        self.enter(t, SessionPhase::Calibration, None, &mut out);
        out.push(self.emit(t, body));
        self.calibration_end = Some(t + duration_s);
        Ok(out)
    }

    /// Feeds one index sample. Samples arriving while paused are dropped.
    pub fn push_sample(&mut self, sample: AttentionSample) -> Result<Vec<Message>, SessionError> {
        if self.phase == SessionPhase::Conclusion {
            return Err(SessionError::Engine(EngineError::AlreadyComplete));
        }
        if self.paused_at.is_some() {
            self.dropped_while_paused += 1;
            return Ok(Vec::new());
        }
        if !sample.index.is_finite() || !(0.0..=100.0).contains(&sample.index) {
            return Err(SessionError::Engine(EngineError::InvalidSample(sample.index)));
        }
        if sample.t < self.last_t {
            return Err(SessionError::Engine(EngineError::OutOfOrder {
                t: sample.t,
                last: self.last_t,
            }));
        }
        let sample = AttentionSample::new(round_sig(sample.t), round_sig(sample.index));
        let mut out = Vec::new();
        match self.phase {
            SessionPhase::Customization => {
                out.push(self.emit(sample.t, Body::AttentionSample(sample.into())));
            }
            SessionPhase::Calibration => {
                out.push(self.emit(sample.t, Body::AttentionSample(sample.into())));
                self.calibration_samples.push(sample);
                let end = self.calibration_end.unwrap_or(f64::INFINITY);
                if sample.t >= end && self.calibration_samples.len() >= self.cfg.calibration.min_samples {
                    self.finish_calibration(sample.t, &mut out)?;
                }
            }
            SessionPhase::Training => {
                out.push(self.emit(sample.t, Body::AttentionSample(sample.into())));
                self.step_engine(sample, &mut out)?;
            }
            SessionPhase::Conclusion => unreachable!(),
        }
        Ok(out)
    }

    fn finish_calibration(&mut self, t: f64, out: &mut Vec<Message>) -> Result<(), SessionError> {
        let cal = &self.cfg.calibration;
        let b = compute_baseline(&self.calibration_samples, cal)?;
        let adaptive = normalize_thresholds(compute_thresholds(b, cal)?);
        let result = Body::CalibrateResult(CalibrateResult {
            baseline: round_sig(b),
            t1: adaptive.t1,
            t2: adaptive.t2,
            samples: self.calibration_samples.len() as u32,
        });
        out.push(self.emit(t, result));
        let active = self.preset.unwrap_or(adaptive);
        let active = Thresholds {
            baseline: Some(round_sig(b)),
            ..active
        };
        self.enter(t, SessionPhase::Training, None, out);
        out.push(self.emit(t, Self::threshold_message(&active)));
        let engine = Engine::new(self.cfg.engine, active, t, self.cfg.engine_seed)?;
        self.thresholds = Some(active);
        self.engine = Some(engine);
        Ok(())
    }

    fn step_engine(&mut self, sample: AttentionSample, out: &mut Vec<Message>) -> Result<(), SessionError> {
        let engine = self.engine.as_mut().expect("training has an engine");
        let events = engine.step(sample)?;
        let progress = GameProgress::from_state(engine.state(), engine.filtered_index().map(round_sig));
        let report = engine.report().copied();
        for ev in &events {
            out.push(self.emit(ev.t, Body::FeedbackEvent(FeedbackEventBody::from(ev))));
        }
        out.push(self.emit(sample.t, Body::GameProgress(progress)));
        if let Some(r) = report {
            self.conclude(sample.t, r, Conclusion::Completed, None, out);
        }
        Ok(())
    }

    fn conclude(
        &mut self,
        t: f64,
        report: SessionReport,
        how: Conclusion,
        reason: Option<String>,
        out: &mut Vec<Message>,
    ) {
        let report = SessionReport {
            duration_s: round_sig(report.duration_s),
            ..report
        };
        out.push(self.emit(t, Body::SessionReport(report)));
        self.report = Some(report);
        self.conclusion = Some(how);
        self.enter(t, SessionPhase::Conclusion, reason, out);
    }

    pub fn pause(&mut self, t: f64, reason: Option<String>) -> Result<Vec<Message>, SessionError> {
        if self.phase == SessionPhase::Conclusion {
            return Err(SessionError::PhaseGuard {
                action: "pause",
                phase: self.phase,
            });
        }
        if self.paused_at.is_some() {
            return Ok(Vec::new());
        }
        self.paused_at = Some(t.max(self.last_t));
        let body = SessionControl {
            reason,
            ..SessionControl::action(ControlAction::Paused)
        };
        Ok(vec![self.emit(t, Body::SessionControl(body))])
    }

    pub fn resume(&mut self, t: f64) -> Result<Vec<Message>, SessionError> {
        let Some(at) = self.paused_at.take() else {
            return Ok(Vec::new());
        };
        let t = t.max(self.last_t);
        if let Some(engine) = self.engine.as_mut() {
            engine.resume_after(t - at);
        }
        Ok(vec![self.emit(
            t,
            Body::SessionControl(SessionControl::action(ControlAction::Resumed)),
        )])
    }

    /// Facilitator stop: Training ends early with a report over elapsed
    /// time; earlier phases end without one.
    pub fn stop(&mut self, t: f64, reason: Option<String>) -> Result<Vec<Message>, SessionError> {
        let mut out = Vec::new();
        match self.phase {
            SessionPhase::Conclusion => {
                return Err(SessionError::PhaseGuard {
                    action: "stop",
                    phase: self.phase,
                })
            }
            SessionPhase::Training => {
                let t = t.max(self.last_t);
                let report = self.engine.as_mut().and_then(|e| e.stop(t));
                match report {
                    Some(r) => self.conclude(t, r, Conclusion::Stopped, reason, &mut out),
                    None => {
                        self.conclusion = Some(Conclusion::Stopped);
                        self.enter(t, SessionPhase::Conclusion, reason, &mut out);
                    }
                }
            }
            _ => {
                self.conclusion = Some(Conclusion::Stopped);
                self.enter(t, SessionPhase::Conclusion, reason, &mut out);
            }
        }
        self.paused_at = None;
        Ok(out)
    }

    /// Applies an inbound control-plane message.
    pub fn handle(&mut self, msg: &Message) -> Result<Vec<Message>, SessionError> {
        let t = msg.t;
        match &msg.body {
            Body::AttentionSample(b) => self.push_sample(AttentionSample::new(t, b.index)),
            Body::ThresholdSet(b) => self.set_manual_thresholds(t, b.t1, b.t2),
            Body::CalibrateBegin(b) => self.begin_calibration(t, Some(b.duration_s), b.reference_power),
            Body::SessionControl(c) => match c.action {
                ControlAction::Start => self.begin_calibration(t, None, None),
                ControlAction::Pause => self.pause(t, c.reason.clone()),
                ControlAction::Resume => self.resume(t),
                ControlAction::Stop => self.stop(t, c.reason.clone()),
                _ => Err(SessionError::Unsupported("session_control notification")),
            },
            other => Err(SessionError::Unsupported(other.message_type().as_str())),
        }
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            phase: self.phase,
            thresholds: self.thresholds.or(self.preset).map(|th| ThresholdSet {
                t1: th.t1,
                t2: th.t2,
                source: th.source,
            }),
            progress: self
                .engine
                .as_ref()
                .map(|e| GameProgress::from_state(e.state(), e.filtered_index().map(round_sig))),
        }
    }
}

/// The state a late-joining observer needs: phase, active thresholds and
/// game progress.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSnapshot {
    pub phase: SessionPhase,
    pub thresholds: Option<ThresholdSet>,
    pub progress: Option<GameProgress>,
}

impl StateSnapshot {
    /// SHA-256 over the wire-normalized snapshot, hex encoded.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("snapshot serializes");
        protocol::round_value(&mut value);
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Messages a server sends to bring an observer up to date.
    pub fn messages(&self, t: f64, session_id: &str) -> Vec<Message> {
        let mut out = vec![Message::new(
            t,
            0,
            Body::Hello(protocol::Hello {
                role: protocol::Role::Backend,
                device: None,
                session_id: Some(session_id.to_string()),
                phase: Some(self.phase),
            }),
        )];
        if let Some(th) = self.thresholds {
            out.push(Message::new(t, 0, Body::ThresholdSet(th)));
        }
        if let Some(p) = &self.progress {
            out.push(Message::new(t, 0, Body::GameProgress(p.clone())));
        }
        out
    }

    /// Rebuilds a snapshot from the messages an observer has received so far.
    pub fn observe(messages: &[Message]) -> Option<StateSnapshot> {
        let mut snap: Option<StateSnapshot> = None;
        for m in messages {
            match &m.body {
                Body::Hello(h) if h.role == protocol::Role::Backend => {
                    snap = Some(StateSnapshot {
                        phase: h.phase?,
                        thresholds: None,
                        progress: None,
                    });
                }
                Body::SessionControl(c) if c.action == ControlAction::Phase => {
                    if let (Some(s), Some(p)) = (snap.as_mut(), c.phase) {
                        s.phase = p;
                    }
                }
                Body::ThresholdSet(th) => {
                    if let Some(s) = snap.as_mut() {
                        s.thresholds = Some(*th);
                    }
                }
                Body::GameProgress(p) => {
                    if let Some(s) = snap.as_mut() {
                        s.progress = Some(p.clone());
                    }
                }
                _ => {}
            }
        }
        snap
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("log is empty")]
    Empty,
    #[error("corrupt log: bad lines {}", .lines.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>().join(", "))]
    Corrupt { lines: Vec<(usize, ProtocolError)> },
}

impl LogError {
    /// 1-based offending line numbers.
    pub fn bad_lines(&self) -> Vec<usize> {
        match self {
            LogError::Corrupt { lines } => lines.iter().map(|(n, _)| *n).collect(),
            _ => Vec::new(),
        }
    }
}

pub fn write_log(path: &Path, messages: &[Message]) -> Result<(), LogError> {
    let mut w = BufWriter::new(File::create(path)?);
    for m in messages {
        let bytes = protocol::encode(m).map_err(|e| LogError::Corrupt { lines: vec![(0, e)] })?;
        w.write_all(&bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an NDJSON log, collecting every undecodable line.
pub fn parse_log(reader: impl BufRead) -> Result<Vec<Message>, LogError> {
    let mut messages = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        let line = line.strip_suffix(b"\r").unwrap_or(&line);
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match protocol::decode_line(line) {
            Ok(m) => messages.push(m),
            Err(e) => bad.push((i + 1, e)),
        }
    }
    if !bad.is_empty() {
        return Err(LogError::Corrupt { lines: bad });
    }
    if messages.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(messages)
}

pub fn read_log(path: &Path) -> Result<Vec<Message>, LogError> {
    parse_log(BufReader::new(File::open(path)?))
}

/// `session_<utc>_<id>.ndjson`, with a compact ISO-8601 timestamp.
pub fn log_file_name(utc_stamp: &str, id: &str) -> String {
    format!("session_{utc_stamp}_{id}.ndjson")
}
