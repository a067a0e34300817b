//! Protocol clients: a plain NDJSON TCP client and a simulated headband
//! that streams frames (or, in passthrough mode, ready-made indices).

use std::time::Duration;

use nfb_core::dsp::{attention_index, BandPowerStream, DspConfig, DspError, ReferenceRecorder};
use nfb_core::protocol::{
    self, AttentionSampleBody, Body, ControlAction, DeviceKind, EegFrameBody, Hello, Message, ProtocolError,
    Role,
};
use nfb_core::session::SessionPhase;
use nfb_core::sim::{AttentionProfile, FrameGenerator, SimulatorConfig};
use thiserror::Error;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::TcpStream;
use tokio::sync::watch;
use tokio::time::Instant;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("server rejected the connection: {0}")]
    Rejected(String),
    #[error("connection closed")]
    Closed,
    #[error("timed out waiting for the server")]
    Timeout,
}

pub struct TcpSender {
    wr: OwnedWriteHalf,
    seq: u64,
}

impl TcpSender {
    /// Sends `body` stamped with the next sequence number; returns it.
    pub async fn send(&mut self, t: f64, body: Body) -> Result<u64, ClientError> {
        let seq = self.seq;
        let bytes = protocol::encode(&Message::new(t, seq, body))?;
        self.wr.write_all(&bytes).await?;
        self.seq += 1;
        Ok(seq)
    }

    /// Writes raw bytes, bypassing encoding. Used to probe error handling.
    pub async fn send_raw(&mut self, bytes: &[u8]) -> Result<(), ClientError> {
        self.wr.write_all(bytes).await?;
        Ok(())
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.wr.shutdown().await?;
        Ok(())
    }
}

pub struct TcpReceiver {
    rd: BufReader<OwnedReadHalf>,
    line: Vec<u8>,
}

impl TcpReceiver {
    /// Next message, or `None` once the server closes the stream.
    pub async fn recv(&mut self) -> Result<Option<Message>, ClientError> {
        self.line.clear();
        let n = self.rd.read_until(b'\n', &mut self.line).await?;
        if n == 0 {
            return Ok(None);
        }
        Ok(Some(protocol::decode(&self.line)?))
    }

    pub async fn recv_timeout(&mut self, limit: Duration) -> Result<Option<Message>, ClientError> {
        tokio::time::timeout(limit, self.recv())
            .await
            .map_err(|_| ClientError::Timeout)?
    }

    /// Reads until `pred` matches, returning the matching message.
    pub async fn recv_until(
        &mut self,
        limit: Duration,
        mut pred: impl FnMut(&Message) -> bool,
    ) -> Result<Message, ClientError> {
        let deadline = Instant::now() + limit;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.recv_timeout(left).await? {
                Some(m) if pred(&m) => return Ok(m),
                Some(_) => {}
                None => return Err(ClientError::Closed),
            }
        }
    }
}

pub struct TcpClient {
    pub tx: TcpSender,
    pub rx: TcpReceiver,
}

impl TcpClient {
    pub async fn connect(addr: impl tokio::net::ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (rd, wr) = stream.into_split();
        Ok(Self {
            tx: TcpSender { wr, seq: 0 },
            rx: TcpReceiver {
                rd: BufReader::new(rd),
                line: Vec::new(),
            },
        })
    }

    pub async fn send(&mut self, t: f64, body: Body) -> Result<u64, ClientError> {
        self.tx.send(t, body).await
    }

    pub async fn recv(&mut self) -> Result<Option<Message>, ClientError> {
        self.rx.recv().await
    }

    /// Connects as an observer; the server answers with a state snapshot.
    pub async fn observer(addr: impl tokio::net::ToSocketAddrs) -> Result<Self, ClientError> {
        let mut c = Self::connect(addr).await?;
        c.send(0.0, Body::Hello(Hello::new(Role::Observer))).await?;
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct HeadbandOptions {
    pub device: DeviceKind,
    pub profile: AttentionProfile,
    pub simulator: SimulatorConfig,
    pub dsp: DspConfig,
    /// Simulated seconds per wall second; `None` streams as fast as the
    /// connection allows.
    pub speed: Option<f64>,
    /// Length of the generated stream in simulated seconds.
    pub duration_s: f64,
    /// Passthrough only: seconds of resting EEG used for the local reference.
    pub rest_s: f64,
}

impl HeadbandOptions {
    pub fn new(device: DeviceKind, profile: AttentionProfile, duration_s: f64) -> Self {
        Self {
            device,
            profile,
            simulator: SimulatorConfig::default(),
            dsp: DspConfig::default(),
            speed: None,
            duration_s,
            rest_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeadbandSummary {
    pub frames_sent: usize,
    pub samples_sent: usize,
    pub last_t: f64,
    /// The server announced the conclusion phase.
    pub concluded: bool,
}

/// Streams a simulated headband to the server until the session concludes,
/// the stream runs out, or the connection drops.
pub async fn run_headband(
    addr: impl tokio::net::ToSocketAddrs,
    opts: HeadbandOptions,
) -> Result<HeadbandSummary, ClientError> {
    run_headband_until(addr, opts, f64::INFINITY).await
}

/// As [`run_headband`] but disconnects after `stop_at_s` simulated seconds.
pub async fn run_headband_until(
    addr: impl tokio::net::ToSocketAddrs,
    opts: HeadbandOptions,
    stop_at_s: f64,
) -> Result<HeadbandSummary, ClientError> {
    let TcpClient { mut tx, mut rx } = TcpClient::connect(addr).await?;
    let hello = Hello {
        device: Some(opts.device),
        ..Hello::new(Role::Headband)
    };
    tx.send(0.0, Body::Hello(hello)).await?;
    match rx.recv_timeout(Duration::from_secs(10)).await? {
        Some(Message {
            body: Body::Ack(_), ..
        }) => {}
        Some(Message {
            body: Body::Error(e), ..
        }) => return Err(ClientError::Rejected(e.reason)),
        Some(_) | None => return Err(ClientError::Closed),
    }

    let (done_tx, done_rx) = watch::channel(false);
    let listener = tokio::spawn(async move {
        let mut concluded = false;
        while let Ok(Some(m)) = rx.recv().await {
            if let Body::SessionControl(c) = &m.body {
                if c.action == ControlAction::Phase && c.phase == Some(SessionPhase::Conclusion) {
                    concluded = true;
                    break;
                }
            }
        }
        let _ = done_tx.send(true);
        concluded
    });

    let mut summary = HeadbandSummary::default();
    let result = stream_frames(&mut tx, &opts, stop_at_s, &done_rx, &mut summary).await;
    // Half-close: the server drains its reorder window and replies before
    // closing its side.
    let _ = tx.close().await;
    summary.concluded = tokio::time::timeout(Duration::from_secs(10), listener)
        .await
        .is_ok_and(|r| r.unwrap_or(false));
    result.map(|()| summary)
}

async fn stream_frames(
    tx: &mut TcpSender,
    opts: &HeadbandOptions,
    stop_at_s: f64,
    done: &watch::Receiver<bool>,
    summary: &mut HeadbandSummary,
) -> Result<(), ClientError> {
    let gen = FrameGenerator::new(opts.profile.clone(), opts.simulator, opts.dsp, opts.duration_s)?;
    let mut local = match opts.device {
        DeviceKind::Simulator => None,
        DeviceKind::Passthrough => Some((
            BandPowerStream::new(opts.dsp)?,
            ReferenceRecorder::default(),
            None,
        )),
    };
    let started = Instant::now();
    for frame in gen {
        if *done.borrow() || frame.t >= stop_at_s {
            break;
        }
        if let Some(speed) = opts.speed {
            tokio::time::sleep_until(started + Duration::from_secs_f64(frame.t / speed)).await;
        }
        match &mut local {
            None => {
                let t = frame.t;
                tx.send(
                    t,
                    Body::EegFrame(EegFrameBody {
                        sample_rate_hz: opts.dsp.sample_rate_hz,
                        samples: frame.samples,
                    }),
                )
                .await?;
                summary.frames_sent += 1;
                summary.last_t = t;
            }
            Some((stream, recorder, reference)) => {
                for (t, power) in stream.push(&frame)? {
                    let Some(p_ref) = *reference else {
                        recorder.add(power);
                        if t >= opts.rest_s {
                            *reference = recorder.reference();
                        }
                        continue;
                    };
                    let index = attention_index(power, p_ref, &opts.dsp)?;
                    tx.send(t, Body::AttentionSample(AttentionSampleBody { index }))
                        .await?;
                    summary.samples_sent += 1;
                    summary.last_t = t;
                }
            }
        }
    }
    Ok(())
}
