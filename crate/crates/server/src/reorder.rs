//! Timestamp reordering of device messages and per-connection seq checks.

use nfb_core::protocol::Message;

/// Holds device messages for `horizon_s` of stream time and releases them
/// in timestamp order. Messages older than what was already released are
/// dropped and counted.
#[derive(Debug)]
pub struct ReorderBuffer {
    horizon_s: f64,
    pending: Vec<Message>,
    released_t: Option<f64>,
    newest_t: f64,
    dropped: u64,
}

impl ReorderBuffer {
    pub fn new(horizon_s: f64) -> Self {
        Self {
            horizon_s,
            pending: Vec::new(),
            released_t: None,
            newest_t: f64::NEG_INFINITY,
            dropped: 0,
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn push(&mut self, msg: Message) -> Vec<Message> {
        if self.released_t.is_some_and(|r| msg.t < r) {
            self.dropped += 1;
            return Vec::new();
        }
        self.newest_t = self.newest_t.max(msg.t);
        let pos = self.pending.partition_point(|m| (m.t, m.seq) <= (msg.t, msg.seq));
        self.pending.insert(pos, msg);
        let cutoff = self.newest_t - self.horizon_s;
        let ready = self.pending.partition_point(|m| m.t <= cutoff);
        self.release(ready)
    }

    pub fn flush(&mut self) -> Vec<Message> {
        self.release(self.pending.len())
    }

    /// Forget ordering state, e.g. after the device reconnects with a new clock.
    pub fn reset(&mut self) -> Vec<Message> {
        let out = self.flush();
        self.released_t = None;
        self.newest_t = f64::NEG_INFINITY;
        out
    }

    fn release(&mut self, n: usize) -> Vec<Message> {
        let out: Vec<Message> = self.pending.drain(..n).collect();
        if let Some(last) = out.last() {
            self.released_t = Some(last.t);
        }
        out
    }
}

/// Detects gaps and regressions in a connection's `seq` numbers.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SeqTracker {
    last: Option<u64>,
    pub gaps: u64,
    pub missing: u64,
    pub regressions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqCheck {
    InOrder,
    Gap { expected: u64, got: u64 },
    Regression { last: u64, got: u64 },
}

impl SeqTracker {
    pub fn observe(&mut self, seq: u64) -> SeqCheck {
        let check = match self.last {
            None => SeqCheck::InOrder,
            Some(last) if seq == last + 1 => SeqCheck::InOrder,
            Some(last) if seq > last => {
                self.gaps += 1;
                self.missing += seq - last - 1;
                SeqCheck::Gap {
                    expected: last + 1,
                    got: seq,
                }
            }
            Some(last) => {
                self.regressions += 1;
                SeqCheck::Regression { last, got: seq }
            }
        };
        if self.last.is_none_or(|l| seq > l) {
            self.last = Some(seq);
        }
        check
    }
}
