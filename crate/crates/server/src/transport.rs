//! Byte transports carrying the NDJSON protocol: raw TCP lines and
//! WebSocket text frames (one message per frame, newline optional).
//!
//! Each accepted socket becomes a pair of channels: decoded inbound
//! messages (or decode errors) and an outbound [`ObserverQueue`]. The
//! writer re-stamps `seq` so every connection sees its own strictly
//! increasing sequence.

use std::sync::Arc;

use futures_util::{SinkExt, StreamExt};
use nfb_core::protocol::{self, LineFramer, Message, ProtocolError};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite;

use crate::queue::ObserverQueue;

pub type Inbound = mpsc::Receiver<Result<Message, ProtocolError>>;

const READ_CHUNK: usize = 64 * 1024;
const INBOUND_DEPTH: usize = 1024;

fn encode_restamped(mut msg: Message, seq: &mut u64) -> Option<Vec<u8>> {
    msg.seq = *seq;
    match protocol::encode(&msg) {
        Ok(bytes) => {
            *seq += 1;
            Some(bytes)
        }
        Err(e) => {
            tracing::error!(
                "dropping unencodable outbound {}: {e}",
                msg.message_type().as_str()
            );
            None
        }
    }
}

/// Splits a TCP stream into reader and writer tasks.
pub fn spawn_tcp(stream: TcpStream, outbound: Arc<ObserverQueue>) -> Inbound {
    let (mut rd, mut wr) = stream.into_split();
    let (tx, rx) = mpsc::channel(INBOUND_DEPTH);
    let out = outbound.clone();
    tokio::spawn(async move {
        let mut seq = 0u64;
        while let Some(msg) = out.pop().await {
            let Some(bytes) = encode_restamped(msg, &mut seq) else {
                continue;
            };
            if wr.write_all(&bytes).await.is_err() {
                break;
            }
        }
        out.close();
        let _ = wr.shutdown().await;
    });
    tokio::spawn(async move {
        let mut framer = LineFramer::new();
        let mut buf = vec![0u8; READ_CHUNK];
        loop {
            let n = match rd.read(&mut buf).await {
                Ok(0) | Err(_) => break,
                Ok(n) => n,
            };
            framer.push(&buf[..n]);
            while let Some(frame) = framer.next_frame() {
                let decoded = frame.and_then(|line| protocol::decode(&line));
                if tx.send(decoded).await.is_err() {
                    return;
                }
            }
        }
        if framer.pending() > 0 {
            let _ = tx.send(Err(ProtocolError::Incomplete)).await;
        }
    });
    rx
}

/// Completes the WebSocket handshake and splits into reader and writer tasks.
pub async fn spawn_ws(
    stream: TcpStream,
    outbound: Arc<ObserverQueue>,
) -> Result<Inbound, tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let (tx, rx) = mpsc::channel(INBOUND_DEPTH);
    let out = outbound.clone();
    tokio::spawn(async move {
        let mut seq = 0u64;
        while let Some(msg) = out.pop().await {
            let Some(mut bytes) = encode_restamped(msg, &mut seq) else {
                continue;
            };
            bytes.pop();
            let text = String::from_utf8(bytes).expect("encoder emits UTF-8");
            if sink.send(tungstenite::Message::text(text)).await.is_err() {
                break;
            }
        }
        out.close();
        let _ = sink.close().await;
    });
    tokio::spawn(async move {
        while let Some(frame) = source.next().await {
            let payload: Vec<u8> = match frame {
                Ok(tungstenite::Message::Text(t)) => t.as_bytes().to_vec(),
                Ok(tungstenite::Message::Binary(b)) => b.to_vec(),
                Ok(tungstenite::Message::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            let line = payload.strip_suffix(b"\n").unwrap_or(&payload);
            if tx.send(protocol::decode_line(line)).await.is_err() {
                return;
            }
        }
    });
    Ok(rx)
}
