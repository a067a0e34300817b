//! Back-end session server.
//!
//! One headband connection feeds the session; any number of observers
//! (TCP or WebSocket) receive a state snapshot on join and then the live
//! stream. All session mutation happens on a single engine task fed by an
//! ordered inbound queue; every observer owns an independent bounded queue.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nfb_core::calibration::{ThresholdSource, Thresholds};
use nfb_core::config::RunConfig;
use nfb_core::dsp::{
    attention_index, AttentionSample, BandPowerStream, DspConfig, EegFrame, ReferenceRecorder,
};
use nfb_core::engine::{CharacterSkins, SessionReport};
use nfb_core::protocol::{
    self, Ack, Body, ControlAction, DeviceKind, EegFrameBody, ErrorBody, Message, MessageType, ProtocolError,
    Role,
};
use nfb_core::session::{log_file_name, Session, SessionConfig, SessionError, SessionPhase};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use crate::queue::ObserverQueue;
use crate::reorder::{ReorderBuffer, SeqCheck, SeqTracker};
use crate::transport;

const ENGINE_QUEUE_DEPTH: usize = 4096;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("cannot create session log {path}: {source}")]
    Log { path: PathBuf, source: std::io::Error },
    #[error("backend stopped")]
    Stopped,
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub listen: String,
    /// WebSocket endpoint; `None` disables it.
    pub ws_listen: Option<String>,
    pub device: DeviceKind,
    pub reorder_horizon_s: f64,
    pub observer_queue: usize,
    pub dsp: DspConfig,
    pub session: SessionConfig,
    /// Seconds of resting EEG used as the index reference.
    pub rest_s: f64,
    /// Begin calibration on our own once the reference is ready (or on the
    /// first passthrough sample) instead of waiting for a console.
    pub auto_calibrate: bool,
    pub manual_thresholds: Option<(f64, f64)>,
    pub skins: CharacterSkins,
    pub log_dir: PathBuf,
    pub session_id: Option<String>,
}

impl BackendConfig {
    pub fn from_run_config(cfg: &RunConfig, log_dir: PathBuf) -> Self {
        Self {
            listen: cfg.server.listen.clone(),
            ws_listen: Some(cfg.server.ws_listen.clone()),
            device: cfg.server.device,
            reorder_horizon_s: cfg.server.reorder_horizon_s,
            observer_queue: cfg.server.observer_queue,
            dsp: cfg.dsp,
            session: cfg.session_config(),
            rest_s: cfg.rest_s,
            auto_calibrate: true,
            manual_thresholds: cfg.thresholds.map(|t| (t.t1, t.t2)),
            skins: cfg.skins.clone(),
            log_dir,
            session_id: cfg.session_id.clone(),
        }
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self::from_run_config(&RunConfig::default(), std::env::temp_dir())
    }
}

/// Counters shared by connection tasks and the engine.
#[derive(Debug, Default)]
pub struct Stats {
    pub seq_gaps: AtomicU64,
    pub seq_regressions: AtomicU64,
    pub decode_errors: AtomicU64,
    pub reorder_drops: AtomicU64,
    pub observer_drops: AtomicU64,
    pub connections: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StatsSnapshot {
    pub seq_gaps: u64,
    pub seq_regressions: u64,
    pub decode_errors: u64,
    pub reorder_drops: u64,
    pub observer_drops: u64,
    pub connections: u64,
}

impl Stats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            seq_gaps: self.seq_gaps.load(Ordering::Relaxed),
            seq_regressions: self.seq_regressions.load(Ordering::Relaxed),
            decode_errors: self.decode_errors.load(Ordering::Relaxed),
            reorder_drops: self.reorder_drops.load(Ordering::Relaxed),
            observer_drops: self.observer_drops.load(Ordering::Relaxed),
            connections: self.connections.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Status {
    pub session_id: String,
    pub phase: SessionPhase,
    pub paused: bool,
    pub thresholds: Option<Thresholds>,
    pub state_hash: String,
    pub report: Option<SessionReport>,
    pub log_path: PathBuf,
    pub logged_messages: usize,
    pub stats: StatsSnapshot,
}

#[derive(Debug)]
enum Inbound {
    HeadbandConnect {
        conn: u64,
        device: DeviceKind,
        queue: Arc<ObserverQueue>,
        reply: oneshot::Sender<Result<(), String>>,
    },
    Device {
        conn: u64,
        msg: Message,
    },
    HeadbandDisconnect {
        conn: u64,
        reply: oneshot::Sender<()>,
    },
    Observe {
        queue: Arc<ObserverQueue>,
    },
    Control {
        msg: Message,
        reply: oneshot::Sender<Message>,
    },
    Query {
        reply: oneshot::Sender<Status>,
    },
    Shutdown {
        reply: oneshot::Sender<Status>,
    },
}

struct Headband {
    conn: u64,
    queue: Arc<ObserverQueue>,
}

struct EngineTask {
    cfg: BackendConfig,
    session: Session,
    log_path: PathBuf,
    writer: BufWriter<File>,
    logged: usize,
    observers: Vec<Arc<ObserverQueue>>,
    headband: Option<Headband>,
    reorder: ReorderBuffer,
    stream: Option<BandPowerStream>,
    recorder: ReferenceRecorder,
    reference: Option<f64>,
    rest_origin: Option<f64>,
    time_offset: f64,
    awaiting_clock: bool,
    now: f64,
    paused_by_disconnect: bool,
    stats: Arc<Stats>,
    phase_tx: watch::Sender<SessionPhase>,
}

impl EngineTask {
    fn commit(&mut self, messages: Vec<Message>) {
        for m in messages {
            match protocol::encode(&m) {
                Ok(bytes) => {
                    if let Err(e) = self.writer.write_all(&bytes) {
                        tracing::error!("session log write failed: {e}");
                    }
                    self.logged += 1;
                }
                Err(e) => tracing::error!("unencodable session message: {e}"),
            }
            self.now = self.now.max(m.t);
            let notify_device = matches!(
                &m.body,
                Body::SessionControl(c) if matches!(c.action, ControlAction::Phase | ControlAction::Paused | ControlAction::Resumed)
            );
            if notify_device {
                if let Some(h) = &self.headband {
                    h.queue.push(m.clone());
                }
            }
            self.broadcast(m);
        }
        let _ = self.writer.flush();
        self.phase_tx.send_if_modified(|p| {
            let changed = *p != self.session.phase();
            *p = self.session.phase();
            changed
        });
    }

    fn broadcast(&mut self, m: Message) {
        self.observers.retain(|q| !q.is_closed());
        for q in &self.observers {
            let before = q.dropped().0;
            q.push(m.clone());
            let shed = q.dropped().0 - before;
            if shed > 0 {
                self.stats.observer_drops.fetch_add(shed, Ordering::Relaxed);
            }
        }
    }

    fn status(&self) -> Status {
        Status {
            session_id: self.session.id().to_string(),
            phase: self.session.phase(),
            paused: self.session.is_paused(),
            thresholds: self.session.thresholds().copied(),
            state_hash: self.session.snapshot().hash(),
            report: self.session.report().copied(),
            log_path: self.log_path.clone(),
            logged_messages: self.logged,
            stats: self.stats.snapshot(),
        }
    }

    fn device_error(&self, reason: String, ref_seq: Option<u64>) {
        tracing::warn!("device: {reason}");
        if let Some(h) = &self.headband {
            h.queue.push(Message::new(
                self.now,
                0,
                Body::Error(ErrorBody { reason, ref_seq }),
            ));
        }
    }

    fn handle(&mut self, inbound: Inbound) -> Option<oneshot::Sender<Status>> {
        match inbound {
            Inbound::HeadbandConnect {
                conn,
                device,
                queue,
                reply,
            } => {
                if self.headband.is_some() {
                    let _ = reply.send(Err("a headband is already connected".into()));
                    return None;
                }
                if device != self.cfg.device {
                    let _ = reply.send(Err(format!("backend expects a {:?} device", self.cfg.device)));
                    return None;
                }
                self.headband = Some(Headband { conn, queue });
                self.awaiting_clock = true;
                let _ = reply.send(Ok(()));
            }
            Inbound::Device { conn, msg } => {
                if self.headband.as_ref().is_some_and(|h| h.conn == conn) {
                    self.on_device(msg);
                }
            }
            Inbound::HeadbandDisconnect { conn, reply } => {
                if self.headband.as_ref().is_some_and(|h| h.conn == conn) {
                    let pending = self.reorder.reset();
                    for m in pending {
                        self.process_device(m);
                    }
                    self.headband = None;
                    self.stream = None;
                    if matches!(
                        self.session.phase(),
                        SessionPhase::Calibration | SessionPhase::Training
                    ) && !self.session.is_paused()
                    {
                        match self.session.pause(self.now, Some("headband disconnected".into())) {
                            Ok(out) => {
                                self.paused_by_disconnect = true;
                                self.commit(out);
                            }
                            Err(e) => tracing::warn!("pause failed: {e}"),
                        }
                    }
                }
                let _ = reply.send(());
            }
            Inbound::Observe { queue } => {
                for m in self.session.snapshot().messages(self.now, self.session.id()) {
                    queue.push(m);
                }
                self.observers.push(queue);
            }
            Inbound::Control { msg, reply } => {
                let r = self.on_control(&msg);
                let body = match r {
                    Ok(()) => Body::Ack(Ack {
                        ref_seq: msg.seq,
                        ref_type: msg.message_type(),
                    }),
                    Err(reason) => Body::Error(ErrorBody {
                        reason,
                        ref_seq: Some(msg.seq),
                    }),
                };
                let _ = reply.send(Message::new(self.now, 0, body));
            }
            Inbound::Query { reply } => {
                let _ = reply.send(self.status());
            }
            Inbound::Shutdown { reply } => return Some(reply),
        }
        None
    }

    fn on_device(&mut self, msg: Message) {
        if self.awaiting_clock {
            self.awaiting_clock = false;
            if msg.t + self.time_offset <= self.now && self.session.log().len() > 1 {
                self.time_offset = self.now - msg.t + self.cfg.dsp.hop_s;
            }
            if self.paused_by_disconnect {
                self.paused_by_disconnect = false;
                let t = msg.t + self.time_offset;
                match self.session.resume(t) {
                    Ok(out) => self.commit(out),
                    Err(e) => tracing::warn!("resume failed: {e}"),
                }
            }
        }
        let mut msg = msg;
        msg.t += self.time_offset;
        let before = self.reorder.dropped();
        let ready = self.reorder.push(msg);
        let dropped = self.reorder.dropped() - before;
        if dropped > 0 {
            self.stats.reorder_drops.fetch_add(dropped, Ordering::Relaxed);
        }
        for m in ready {
            self.process_device(m);
        }
    }

    fn process_device(&mut self, msg: Message) {
        let (t, seq) = (msg.t, msg.seq);
        match msg.body {
            Body::EegFrame(body) => self.on_frame(t, seq, body),
            Body::AttentionSample(s) => {
                if self.cfg.device != DeviceKind::Passthrough {
                    self.device_error("simulator device must send eeg_frame".into(), Some(seq));
                    return;
                }
                if self.cfg.auto_calibrate && self.session.phase() == SessionPhase::Customization {
                    match self.session.begin_calibration(t, None, None) {
                        Ok(out) => self.commit(out),
                        Err(e) => tracing::warn!("auto calibration failed: {e}"),
                    }
                }
                self.push_sample(t, s.index, seq);
            }
            _ => {}
        }
    }

    fn on_frame(&mut self, t: f64, seq: u64, body: EegFrameBody) {
        if self.cfg.device != DeviceKind::Simulator {
            self.device_error("passthrough device must send attention_sample".into(), Some(seq));
            return;
        }
        if body.sample_rate_hz != self.cfg.dsp.sample_rate_hz
            || body.samples.len() != self.cfg.dsp.channel_count
        {
            self.device_error(
                format!(
                    "frame layout {} ch @ {} Hz does not match {} ch @ {} Hz",
                    body.samples.len(),
                    body.sample_rate_hz,
                    self.cfg.dsp.channel_count,
                    self.cfg.dsp.sample_rate_hz
                ),
                Some(seq),
            );
            return;
        }
        let frame = EegFrame {
            t,
            samples: body.samples,
        };
        self.broadcast(Message::new(
            t,
            0,
            Body::EegFrame(EegFrameBody {
                sample_rate_hz: self.cfg.dsp.sample_rate_hz,
                samples: frame.samples.clone(),
            }),
        ));
        let stream = match self.stream.as_mut() {
            Some(s) => s,
            None => {
                let s = BandPowerStream::new(self.cfg.dsp).expect("validated dsp config");
                self.rest_origin.get_or_insert(t);
                self.stream.insert(s)
            }
        };
        let powers = match stream.push(&frame) {
            Ok(p) => p,
            Err(e) => {
                self.device_error(e.to_string(), Some(seq));
                return;
            }
        };
        for (pt, power) in powers {
            match self.reference {
                None => {
                    self.recorder.add(power);
                    let rested = pt - self.rest_origin.unwrap_or(pt) >= self.cfg.rest_s;
                    if self.cfg.auto_calibrate
                        && rested
                        && self.session.phase() == SessionPhase::Customization
                    {
                        let Some(p_ref) = self.recorder.reference() else {
                            continue;
                        };
                        self.reference = Some(p_ref);
                        match self.session.begin_calibration(pt, None, Some(p_ref)) {
                            Ok(out) => self.commit(out),
                            Err(e) => tracing::warn!("auto calibration failed: {e}"),
                        }
                    }
                }
                Some(p_ref) => match attention_index(power, p_ref, &self.cfg.dsp) {
                    Ok(index) => self.push_sample(pt, index, seq),
                    Err(e) => self.device_error(e.to_string(), Some(seq)),
                },
            }
        }
    }

    fn push_sample(&mut self, t: f64, index: f64, seq: u64) {
        if self.session.phase() == SessionPhase::Conclusion {
            return;
        }
        match self.session.push_sample(AttentionSample::new(t, index)) {
            Ok(out) => self.commit(out),
            Err(e) => self.device_error(e.to_string(), Some(seq)),
        }
    }

    fn on_control(&mut self, msg: &Message) -> Result<(), String> {
        let now = self.now;
        let result = match &msg.body {
            Body::ThresholdSet(th) => {
                if th.source != ThresholdSource::Manual {
                    return Err("console thresholds must have source manual".into());
                }
                self.session.set_manual_thresholds(now, th.t1, th.t2)
            }
            Body::CalibrateBegin(b) => {
                let reference = self.calibration_reference(b.reference_power)?;
                self.session.begin_calibration(now, Some(b.duration_s), reference)
            }
            Body::SessionControl(c) => match c.action {
                ControlAction::Start => {
                    let reference = self.calibration_reference(None)?;
                    self.session.begin_calibration(now, None, reference)
                }
                ControlAction::Pause => self.session.pause(now, c.reason.clone()),
                ControlAction::Resume => {
                    if self.paused_by_disconnect {
                        return Err("waiting for the headband to reconnect".into());
                    }
                    self.session.resume(now)
                }
                ControlAction::Stop => self
                    .session
                    .stop(now, c.reason.clone().or(Some("facilitator stop".into()))),
                _ => return Err("notification actions are server-only".into()),
            },
            Body::Hello(_) => return Ok(()),
            other => {
                return Err(format!(
                    "{} is not a control message",
                    other.message_type().as_str()
                ))
            }
        };
        match result {
            Ok(out) => {
                self.commit(out);
                Ok(())
            }
            Err(e) => Err(session_error_reason(&e)),
        }
    }

    fn calibration_reference(&mut self, given: Option<f64>) -> Result<Option<f64>, String> {
        if self.cfg.device == DeviceKind::Passthrough {
            return Ok(given);
        }
        let reference = given.or(self.reference).or_else(|| self.recorder.reference());
        match reference {
            Some(r) => {
                self.reference = Some(r);
                Ok(Some(r))
            }
            None => Err("no resting EEG recorded yet; index reference unavailable".into()),
        }
    }

    fn shutdown(&mut self) {
        let pending = self.reorder.flush();
        for m in pending {
            self.process_device(m);
        }
        if self.session.phase() == SessionPhase::Training {
            if let Ok(out) = self.session.stop(self.now, Some("server shutdown".into())) {
                self.commit(out);
            }
        }
        let _ = self.writer.flush();
        for q in &self.observers {
            q.close();
        }
        if let Some(h) = &self.headband {
            h.queue.close();
        }
    }
}

fn session_error_reason(e: &SessionError) -> String {
    e.to_string()
}

async fn run_engine(mut task: EngineTask, mut rx: mpsc::Receiver<Inbound>) {
    while let Some(inbound) = rx.recv().await {
        if let Some(reply) = task.handle(inbound) {
            task.shutdown();
            let _ = reply.send(task.status());
            return;
        }
    }
    task.shutdown();
}

async fn serve_connection(
    mut inbound: transport::Inbound,
    out: Arc<ObserverQueue>,
    engine: mpsc::Sender<Inbound>,
    stats: Arc<Stats>,
    conn: u64,
) {
    let reject = |reason: String, ref_seq: Option<u64>| {
        Message::new(0.0, 0, Body::Error(ErrorBody { reason, ref_seq }))
    };
    let mut seqs = SeqTracker::default();
    let mut role: Option<Role> = None;
    while let Some(item) = inbound.recv().await {
        let msg = match item {
            Ok(m) => m,
            Err(e) => {
                stats.decode_errors.fetch_add(1, Ordering::Relaxed);
                out.push(reject(protocol_error_reason(&e), None));
                continue;
            }
        };
        match seqs.observe(msg.seq) {
            SeqCheck::InOrder => {}
            SeqCheck::Gap { expected, got } => {
                stats.seq_gaps.fetch_add(1, Ordering::Relaxed);
                tracing::warn!("connection {conn}: seq gap, expected {expected} got {got}");
            }
            SeqCheck::Regression { last, got } => {
                stats.seq_regressions.fetch_add(1, Ordering::Relaxed);
                tracing::warn!("connection {conn}: seq went back from {last} to {got}");
            }
        }
        match role {
            None => {
                let Body::Hello(hello) = &msg.body else {
                    out.push(reject("hello required first".into(), Some(msg.seq)));
                    continue;
                };
                match hello.role {
                    Role::Headband => {
                        let device = hello.device.unwrap_or(DeviceKind::Simulator);
                        let (tx, rx) = oneshot::channel();
                        let req = Inbound::HeadbandConnect {
                            conn,
                            device,
                            queue: out.clone(),
                            reply: tx,
                        };
                        if engine.send(req).await.is_err() {
                            break;
                        }
                        match rx.await {
                            Ok(Ok(())) => {
                                role = Some(Role::Headband);
                                out.push(Message::new(
                                    0.0,
                                    0,
                                    Body::Ack(Ack {
                                        ref_seq: msg.seq,
                                        ref_type: MessageType::Hello,
                                    }),
                                ));
                            }
                            Ok(Err(reason)) => {
                                out.push(reject(reason, Some(msg.seq)));
                                break;
                            }
                            Err(_) => break,
                        }
                    }
                    Role::Observer | Role::Console => {
                        role = Some(hello.role);
                        if engine
                            .send(Inbound::Observe { queue: out.clone() })
                            .await
                            .is_err()
                        {
                            break;
                        }
                    }
                    Role::Backend => {
                        out.push(reject("backend role is reserved".into(), Some(msg.seq)));
                    }
                }
            }
            Some(Role::Headband) if matches!(msg.body, Body::EegFrame(_) | Body::AttentionSample(_)) => {
                if engine.send(Inbound::Device { conn, msg }).await.is_err() {
                    break;
                }
            }
            Some(_) => {
                let (tx, rx) = oneshot::channel();
                if engine.send(Inbound::Control { msg, reply: tx }).await.is_err() {
                    break;
                }
                match rx.await {
                    Ok(reply) => {
                        out.push(reply);
                    }
                    Err(_) => break,
                }
            }
        }
    }
    if role == Some(Role::Headband) {
        let (tx, rx) = oneshot::channel();
        if engine
            .send(Inbound::HeadbandDisconnect { conn, reply: tx })
            .await
            .is_ok()
        {
            let _ = rx.await;
        }
    }
    out.close();
}

fn protocol_error_reason(e: &ProtocolError) -> String {
    format!("protocol error: {e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transport {
    Tcp,
    WebSocket,
}

async fn accept_loop(
    listener: TcpListener,
    kind: Transport,
    engine: mpsc::Sender<Inbound>,
    stats: Arc<Stats>,
    queue_capacity: usize,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        let accepted = tokio::select! {
            r = listener.accept() => r,
            _ = shutdown.changed() => return,
        };
        let (stream, peer) = match accepted {
            Ok(x) => x,
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                continue;
            }
        };
        let conn = stats.connections.fetch_add(1, Ordering::Relaxed);
        tracing::info!("connection {conn} from {peer} ({kind:?})");
        let engine = engine.clone();
        let stats = stats.clone();
        tokio::spawn(async move {
            let out = Arc::new(ObserverQueue::new(queue_capacity));
            let inbound = match kind {
                Transport::Tcp => Some(transport::spawn_tcp(stream, out.clone())),
                Transport::WebSocket => transport::spawn_ws(stream, out.clone()).await.ok(),
            };
            if let Some(inbound) = inbound {
                serve_connection(inbound, out, engine, stats, conn).await;
            }
        });
    }
}

async fn bind(addr: &str) -> Result<TcpListener, ServerError> {
    TcpListener::bind(addr).await.map_err(|source| ServerError::Bind {
        addr: addr.to_string(),
        source,
    })
}

pub struct BackendHandle {
    tcp_addr: SocketAddr,
    ws_addr: Option<SocketAddr>,
    log_path: PathBuf,
    session_id: String,
    engine_tx: mpsc::Sender<Inbound>,
    shutdown_tx: watch::Sender<bool>,
    phase_rx: watch::Receiver<SessionPhase>,
    tasks: Vec<JoinHandle<()>>,
}

impl BackendHandle {
    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub async fn status(&self) -> Result<Status, ServerError> {
        let (tx, rx) = oneshot::channel();
        self.engine_tx
            .send(Inbound::Query { reply: tx })
            .await
            .map_err(|_| ServerError::Stopped)?;
        rx.await.map_err(|_| ServerError::Stopped)
    }

    /// Resolves once the session has reached `phase` (or a later one).
    pub async fn wait_for_phase(&self, phase: SessionPhase) -> Result<(), ServerError> {
        let mut rx = self.phase_rx.clone();
        rx.wait_for(|p| *p >= phase)
            .await
            .map_err(|_| ServerError::Stopped)?;
        Ok(())
    }

    /// Flushes pending device data, closes the session log and stops all
    /// listeners. A session still in training is stopped with a report.
    pub async fn shutdown(self) -> Result<Status, ServerError> {
        let (tx, rx) = oneshot::channel();
        self.engine_tx
            .send(Inbound::Shutdown { reply: tx })
            .await
            .map_err(|_| ServerError::Stopped)?;
        let status = rx.await.map_err(|_| ServerError::Stopped)?;
        let _ = self.shutdown_tx.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
        Ok(status)
    }
}

pub async fn start(cfg: BackendConfig) -> Result<BackendHandle, ServerError> {
    let tcp = bind(&cfg.listen).await?;
    let ws = match &cfg.ws_listen {
        Some(addr) => Some(bind(addr).await?),
        None => None,
    };
    let tcp_addr = tcp.local_addr().map_err(|source| ServerError::Bind {
        addr: cfg.listen.clone(),
        source,
    })?;
    let ws_addr = ws.as_ref().and_then(|l| l.local_addr().ok());

    let session_id = cfg
        .session_id
        .clone()
        .unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string()[..12].to_string());
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    std::fs::create_dir_all(&cfg.log_dir).map_err(|source| ServerError::Log {
        path: cfg.log_dir.clone(),
        source,
    })?;
    let log_path = cfg.log_dir.join(log_file_name(&stamp, &session_id));
    let file = File::create(&log_path).map_err(|source| ServerError::Log {
        path: log_path.clone(),
        source,
    })?;

    let mut session = Session::new(session_id.clone(), cfg.session.clone(), 0.0, cfg.skins.clone());
    if let Some((t1, t2)) = cfg.manual_thresholds {
        session
            .set_manual_thresholds(0.0, t1, t2)
            .map_err(|e| ServerError::Log {
                path: log_path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidInput, e.to_string()),
            })?;
    }
    let header = session.log().to_vec();
    let (phase_tx, phase_rx) = watch::channel(session.phase());
    let stats = Arc::new(Stats::default());
    let mut task = EngineTask {
        reorder: ReorderBuffer::new(cfg.reorder_horizon_s),
        cfg: cfg.clone(),
        session,
        log_path: log_path.clone(),
        writer: BufWriter::new(file),
        logged: 0,
        observers: Vec::new(),
        headband: None,
        stream: None,
        recorder: ReferenceRecorder::default(),
        reference: None,
        rest_origin: None,
        time_offset: 0.0,
        awaiting_clock: false,
        now: 0.0,
        paused_by_disconnect: false,
        stats: stats.clone(),
        phase_tx,
    };
    task.commit(header);

    let (engine_tx, engine_rx) = mpsc::channel(ENGINE_QUEUE_DEPTH);
    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let mut tasks = vec![tokio::spawn(run_engine(task, engine_rx))];
    tasks.push(tokio::spawn(accept_loop(
        tcp,
        Transport::Tcp,
        engine_tx.clone(),
        stats.clone(),
        cfg.observer_queue,
        shutdown_rx.clone(),
    )));
    if let Some(ws) = ws {
        tasks.push(tokio::spawn(accept_loop(
            ws,
            Transport::WebSocket,
            engine_tx.clone(),
            stats.clone(),
            cfg.observer_queue,
            shutdown_rx,
        )));
    }
    tracing::info!(
        "backend listening on {tcp_addr} (ws {ws_addr:?}), log {}",
        log_path.display()
    );
    Ok(BackendHandle {
        tcp_addr,
        ws_addr,
        log_path,
        session_id,
        engine_tx,
        shutdown_tx,
        phase_rx,
        tasks,
    })
}
