//! Versioned newline-delimited JSON message protocol.
//!
//! Every message is one line of UTF-8 JSON terminated by `\n`:
//!
//! ```text
//! {"body":{...},"seq":3,"t":12.0,"type":"attention_sample","v":1}
//! ```
//!
//! Object keys are emitted in sorted order and floats are rounded to nine
//! significant digits, so encoding is canonical: `encode(decode(encode(m)))`
//! equals `encode(m)` byte for byte. Decoding is strict: unknown fields,
//! unknown types, non-finite numbers and out-of-range values are rejected.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::calibration::ThresholdSource;
use crate::dsp::AttentionSample;
use crate::engine::{
    CharacterSkins, Effect, Face, FeedbackEvent, FeedbackLevel, GameState, Modality, PerformanceStage,
    SessionReport, Tempo,
};
use crate::session::SessionPhase;

pub const PROTOCOL_VERSION: u32 = 1;
pub const SIGNIFICANT_DIGITS: usize = 9;
/// Longest accepted line, newline included.
pub const MAX_LINE_BYTES: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("incomplete frame: no terminating newline")]
    Incomplete,
    #[error("embedded newline inside a frame")]
    EmbeddedNewline,
    #[error("line exceeds {MAX_LINE_BYTES} bytes")]
    LineTooLong,
    #[error("invalid UTF-8")]
    Utf8,
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
    #[error("schema violation in {ty}: {reason}")]
    Schema { ty: &'static str, reason: String },
}

impl ProtocolError {
    fn schema(ty: MessageType, reason: impl Into<String>) -> Self {
        Self::Schema {
            ty: ty.as_str(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Hello,
    EegFrame,
    AttentionSample,
    CalibrateBegin,
    CalibrateResult,
    ThresholdSet,
    SessionControl,
    FeedbackEvent,
    GameProgress,
    SessionReport,
    Ack,
    Error,
}

impl MessageType {
    pub const ALL: [MessageType; 12] = [
        Self::Hello,
        Self::EegFrame,
        Self::AttentionSample,
        Self::CalibrateBegin,
        Self::CalibrateResult,
        Self::ThresholdSet,
        Self::SessionControl,
        Self::FeedbackEvent,
        Self::GameProgress,
        Self::SessionReport,
        Self::Ack,
        Self::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hello => "hello",
            Self::EegFrame => "eeg_frame",
            Self::AttentionSample => "attention_sample",
            Self::CalibrateBegin => "calibrate_begin",
            Self::CalibrateResult => "calibrate_result",
            Self::ThresholdSet => "threshold_set",
            Self::SessionControl => "session_control",
            Self::FeedbackEvent => "feedback_event",
            Self::GameProgress => "game_progress",
            Self::SessionReport => "session_report",
            Self::Ack => "ack",
            Self::Error => "error",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Messages an overloaded observer queue may shed first.
    pub fn is_droppable(self) -> bool {
        matches!(self, Self::AttentionSample | Self::EegFrame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Headband,
    Observer,
    Console,
    Backend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    /// Streams raw `eeg_frame`s; the backend computes the index.
    Simulator,
    /// Streams `attention_sample`s computed on the device.
    Passthrough,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<SessionPhase>,
}

impl Hello {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            device: None,
            session_id: None,
            phase: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EegFrameBody {
    pub sample_rate_hz: f64,
    pub samples: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionSampleBody {
    pub index: f64,
}

impl From<AttentionSample> for AttentionSampleBody {
    fn from(s: AttentionSample) -> Self {
        Self { index: s.index }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateBegin {
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_power: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateResult {
    pub baseline: f64,
    pub t1: f64,
    pub t2: f64,
    pub samples: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSet {
    pub t1: f64,
    pub t2: f64,
    pub source: ThresholdSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    /// Session created (log header) or, from a console, begin calibration.
    Start,
    Pause,
    Resume,
    Stop,
    /// Server notification that the session is paused.
    Paused,
    /// Server notification that the session resumed.
    Resumed,
    /// Server notification of a phase transition.
    Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionControl {
    pub action: ControlAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<SessionPhase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub character_skins: Option<CharacterSkins>,
}

impl SessionControl {
    pub fn action(action: ControlAction) -> Self {
        Self {
            action,
            phase: None,
            reason: None,
            session_id: None,
            character_skins: None,
        }
    }

    pub fn phase(phase: SessionPhase, reason: Option<String>) -> Self {
        Self {
            phase: Some(phase),
            reason,
            ..Self::action(ControlAction::Phase)
        }
    }
}

/// Body of `feedback_event`: `{level, modality, kind, payload}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackEventBody {
    pub level: FeedbackLevel,
    pub modality: Modality,
    pub effect: Effect,
}

impl From<&FeedbackEvent> for FeedbackEventBody {
    fn from(e: &FeedbackEvent) -> Self {
        Self {
            level: e.level(),
            modality: e.modality(),
            effect: e.effect.clone(),
        }
    }
}

impl Serialize for FeedbackEventBody {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut obj = match serde_json::to_value(&self.effect).map_err(serde::ser::Error::custom)? {
            Value::Object(m) => m,
            _ => return Err(serde::ser::Error::custom("effect must serialize to an object")),
        };
        obj.insert(
            "level".into(),
            serde_json::to_value(self.level).map_err(serde::ser::Error::custom)?,
        );
        obj.insert(
            "modality".into(),
            serde_json::to_value(self.modality).map_err(serde::ser::Error::custom)?,
        );
        obj.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FeedbackEventBody {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            level: FeedbackLevel,
            modality: Modality,
            kind: Value,
            #[serde(default)]
            payload: Option<Value>,
        }
        let raw = Raw::deserialize(deserializer)?;
        let mut obj = Map::new();
        obj.insert("kind".into(), raw.kind);
        if let Some(p) = raw.payload {
            obj.insert("payload".into(), p);
        }
        let effect: Effect = serde_json::from_value(Value::Object(obj)).map_err(serde::de::Error::custom)?;
        Ok(Self {
            level: raw.level,
            modality: raw.modality,
            effect,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameProgress {
    pub eggs_stored: u32,
    pub eggs_in_flight: u32,
    pub carts_filled: u32,
    pub bird_height: f64,
    pub lay_interval_s: f64,
    pub music_tempo: Tempo,
    pub boy_face: Face,
    pub girl_face: Face,
    pub stage: Option<PerformanceStage>,
    pub filtered_index: Option<f64>,
}

impl GameProgress {
    pub fn from_state(state: &GameState, filtered_index: Option<f64>) -> Self {
        Self {
            eggs_stored: state.eggs_stored,
            eggs_in_flight: state.eggs_in_flight,
            carts_filled: state.carts_filled,
            bird_height: state.bird_height,
            lay_interval_s: state.lay_interval_s,
            music_tempo: state.music_tempo,
            boy_face: state.boy_face,
            girl_face: state.girl_face,
            stage: state.stage,
            filtered_index,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    pub ref_seq: u64,
    pub ref_type: MessageType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Hello(Hello),
    EegFrame(EegFrameBody),
    AttentionSample(AttentionSampleBody),
    CalibrateBegin(CalibrateBegin),
    CalibrateResult(CalibrateResult),
    ThresholdSet(ThresholdSet),
    SessionControl(SessionControl),
    FeedbackEvent(FeedbackEventBody),
    GameProgress(GameProgress),
    SessionReport(SessionReport),
    Ack(Ack),
    Error(ErrorBody),
}

impl Body {
    pub fn message_type(&self) -> MessageType {
        match self {
            Body::Hello(_) => MessageType::Hello,
            Body::EegFrame(_) => MessageType::EegFrame,
            Body::AttentionSample(_) => MessageType::AttentionSample,
            Body::CalibrateBegin(_) => MessageType::CalibrateBegin,
            Body::CalibrateResult(_) => MessageType::CalibrateResult,
            Body::ThresholdSet(_) => MessageType::ThresholdSet,
            Body::SessionControl(_) => MessageType::SessionControl,
            Body::FeedbackEvent(_) => MessageType::FeedbackEvent,
            Body::GameProgress(_) => MessageType::GameProgress,
            Body::SessionReport(_) => MessageType::SessionReport,
            Body::Ack(_) => MessageType::Ack,
            Body::Error(_) => MessageType::Error,
        }
    }

    fn to_value(&self) -> Result<Value, serde_json::Error> {
        match self {
            Body::Hello(b) => serde_json::to_value(b),
            Body::EegFrame(b) => serde_json::to_value(b),
            Body::AttentionSample(b) => serde_json::to_value(b),
            Body::CalibrateBegin(b) => serde_json::to_value(b),
            Body::CalibrateResult(b) => serde_json::to_value(b),
            Body::ThresholdSet(b) => serde_json::to_value(b),
            Body::SessionControl(b) => serde_json::to_value(b),
            Body::FeedbackEvent(b) => serde_json::to_value(b),
            Body::GameProgress(b) => serde_json::to_value(b),
            Body::SessionReport(b) => serde_json::to_value(b),
            Body::Ack(b) => serde_json::to_value(b),
            Body::Error(b) => serde_json::to_value(b),
        }
    }

    fn from_value(ty: MessageType, v: Value) -> Result<Self, ProtocolError> {
        fn parse<T: DeserializeOwned>(ty: MessageType, v: Value) -> Result<T, ProtocolError> {
            serde_json::from_value(v).map_err(|e| ProtocolError::schema(ty, e.to_string()))
        }
        Ok(match ty {
            MessageType::Hello => Body::Hello(parse(ty, v)?),
            MessageType::EegFrame => Body::EegFrame(parse(ty, v)?),
            MessageType::AttentionSample => Body::AttentionSample(parse(ty, v)?),
            MessageType::CalibrateBegin => Body::CalibrateBegin(parse(ty, v)?),
            MessageType::CalibrateResult => Body::CalibrateResult(parse(ty, v)?),
            MessageType::ThresholdSet => Body::ThresholdSet(parse(ty, v)?),
            MessageType::SessionControl => Body::SessionControl(parse(ty, v)?),
            MessageType::FeedbackEvent => Body::FeedbackEvent(parse(ty, v)?),
            MessageType::GameProgress => Body::GameProgress(parse(ty, v)?),
            MessageType::SessionReport => Body::SessionReport(parse(ty, v)?),
            MessageType::Ack => Body::Ack(parse(ty, v)?),
            MessageType::Error => Body::Error(parse(ty, v)?),
        })
    }

    /// Range and finiteness rules beyond what the serde schema expresses.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let ty = self.message_type();
        let fail = |r: &str| Err(ProtocolError::schema(ty, r));
        let index_ok = |x: f64| x.is_finite() && (0.0..=100.0).contains(&x);
        match self {
            Body::Hello(_) | Body::Ack(_) | Body::Error(_) => Ok(()),
            Body::EegFrame(b) => {
                if !(b.sample_rate_hz.is_finite() && b.sample_rate_hz > 0.0) {
                    return fail("sample_rate_hz must be positive");
                }
                let Some(first) = b.samples.first() else {
                    return fail("at least one channel required");
                };
                if b.samples.iter().any(|c| c.len() != first.len()) {
                    return fail("channels must have equal length");
                }
                if !b.samples.iter().flatten().all(|v| v.is_finite()) {
                    return fail("samples must be finite");
                }
                Ok(())
            }
            Body::AttentionSample(b) => {
                if !index_ok(b.index) {
                    return fail("index must be finite and within [0, 100]");
                }
                Ok(())
            }
            Body::CalibrateBegin(b) => {
                if !(b.duration_s.is_finite() && b.duration_s > 0.0) {
                    return fail("duration_s must be positive");
                }
                if let Some(p) = b.reference_power {
                    if !(p.is_finite() && p > 0.0) {
                        return fail("reference_power must be positive");
                    }
                }
                Ok(())
            }
            Body::CalibrateResult(b) => {
                if !index_ok(b.baseline) || !index_ok(b.t1) || !index_ok(b.t2) || b.t1 >= b.t2 {
                    return fail("need baseline in [0,100] and 0 <= t1 < t2 <= 100");
                }
                Ok(())
            }
            Body::ThresholdSet(b) => {
                if !index_ok(b.t1) || !index_ok(b.t2) || b.t1 >= b.t2 {
                    return fail("need 0 <= t1 < t2 <= 100");
                }
                Ok(())
            }
            Body::SessionControl(b) => {
                if b.action == ControlAction::Phase && b.phase.is_none() {
                    return fail("phase action requires a phase");
                }
                Ok(())
            }
            Body::FeedbackEvent(b) => {
                if (b.level, b.modality) != b.effect.kind().cell() {
                    return fail("level/modality do not match the event kind");
                }
                if !b.effect.is_finite() {
                    return fail("payload values must be finite");
                }
                if let Effect::BirdHeight { height } = b.effect {
                    if !(0.0..=1.0).contains(&height) {
                        return fail("bird height must be within [0, 1]");
                    }
                }
                Ok(())
            }
            Body::GameProgress(b) => {
                if !(b.bird_height.is_finite() && (0.0..=1.0).contains(&b.bird_height)) {
                    return fail("bird_height must be within [0, 1]");
                }
                if !(b.lay_interval_s.is_finite() && b.lay_interval_s > 0.0) {
                    return fail("lay_interval_s must be positive");
                }
                if let Some(x) = b.filtered_index {
                    if !index_ok(x) {
                        return fail("filtered_index must be within [0, 100]");
                    }
                }
                Ok(())
            }
            Body::SessionReport(b) => {
                if b.score > 100 || !(1..=3).contains(&b.stars) {
                    return fail("score must be <= 100 and stars within 1..=3");
                }
                if !(b.duration_s.is_finite() && b.duration_s >= 0.0)
                    || !b.t1.is_finite()
                    || !b.t2.is_finite()
                {
                    return fail("report values must be finite");
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub v: u32,
    pub t: f64,
    pub seq: u64,
    pub body: Body,
}

impl Message {
    pub fn new(t: f64, seq: u64, body: Body) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            t,
            seq,
            body,
        }
    }

    pub fn message_type(&self) -> MessageType {
        self.body.message_type()
    }

    /// The message as it will read back after a round trip through the wire.
    pub fn normalized(&self) -> Result<Message, ProtocolError> {
        decode(&encode(self)?)
    }
}

/// Rounds to nine significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Rounds every float inside a JSON value to wire precision.
pub fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round_sig).and_then(Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let ty = msg.message_type();
    if !msg.t.is_finite() {
        return Err(ProtocolError::schema(ty, "t must be finite"));
    }
    msg.body.validate()?;
    let body = msg
        .body
        .to_value()
        .map_err(|e| ProtocolError::schema(ty, e.to_string()))?;
    let mut obj = Map::new();
    obj.insert("v".into(), Value::from(msg.v));
    obj.insert("type".into(), Value::from(ty.as_str()));
    obj.insert(
        "t".into(),
        Number::from_f64(msg.t).map(Value::Number).unwrap_or(Value::Null),
    );
    obj.insert("seq".into(), Value::from(msg.seq));
    obj.insert("body".into(), body);
    let mut value = Value::Object(obj);
    round_value(&mut value);
    let mut out = serde_json::to_vec(&value).map_err(|e| ProtocolError::Json(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Decodes exactly one newline-terminated line.
pub fn decode(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let Some((&last, line)) = bytes.split_last() else {
        return Err(ProtocolError::Incomplete);
    };
    if last != b'\n' {
        return Err(ProtocolError::Incomplete);
    }
    decode_line(line)
}

/// Decodes a single line with its terminator already removed.
pub fn decode_line(line: &[u8]) -> Result<Message, ProtocolError> {
    if line.contains(&b'\n') {
        return Err(ProtocolError::EmbeddedNewline);
    }
    if line.len() >= MAX_LINE_BYTES {
        return Err(ProtocolError::LineTooLong);
    }
    let text = std::str::from_utf8(line).map_err(|_| ProtocolError::Utf8)?;

    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Envelope {
        v: u64,
        #[serde(rename = "type")]
        ty: String,
        t: f64,
        seq: u64,
        body: Value,
    }
    let env: Envelope = serde_json::from_str(text).map_err(|e| ProtocolError::Json(e.to_string()))?;
    if env.v != u64::from(PROTOCOL_VERSION) {
        return Err(ProtocolError::UnsupportedVersion(env.v));
    }
    let ty = MessageType::parse(&env.ty).ok_or(ProtocolError::UnknownType(env.ty))?;
    if !env.t.is_finite() {
        return Err(ProtocolError::schema(ty, "t must be finite"));
    }
    let body = Body::from_value(ty, env.body)?;
    body.validate()?;
    Ok(Message {
        v: PROTOCOL_VERSION,
        t: env.t,
        seq: env.seq,
        body,
    })
}

/// Splits a byte stream into newline-terminated frames. Incomplete tails are
/// retained until more bytes arrive.
#[derive(Debug, Default)]
pub struct LineFramer {
    buf: Vec<u8>,
    discarding: bool,
}

impl LineFramer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, data: &[u8]) {
        self.buf.extend_from_slice(data);
    }

    /// Bytes held back waiting for a newline.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// Next complete line including its `\n`, or an error for an overlong
    /// line (the rest of which is skipped).
    pub fn next_frame(&mut self) -> Option<Result<Vec<u8>, ProtocolError>> {
        loop {
            match self.buf.iter().position(|&b| b == b'\n') {
                Some(pos) => {
                    let line: Vec<u8> = self.buf.drain(..=pos).collect();
                    if self.discarding {
                        self.discarding = false;
                        continue;
                    }
                    if line.len() > MAX_LINE_BYTES {
                        return Some(Err(ProtocolError::LineTooLong));
                    }
                    return Some(Ok(line));
                }
                None => {
                    if self.buf.len() > MAX_LINE_BYTES {
                        self.buf.clear();
                        if !self.discarding {
                            self.discarding = true;
                            return Some(Err(ProtocolError::LineTooLong));
                        }
                    }
                    return None;
                }
            }
        }
    }
}
