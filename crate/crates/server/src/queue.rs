//! Bounded per-observer outbound queue.
//!
//! When full, the oldest droppable message (raw frames and index samples)
//! goes first; feedback, progress and session messages are only shed when
//! nothing droppable is left.

use std::collections::VecDeque;
use std::sync::Mutex;

use nfb_core::protocol::Message;
use tokio::sync::Notify;

pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Debug, Default)]
struct Inner {
    items: VecDeque<Message>,
    closed: bool,
    dropped: u64,
    dropped_critical: u64,
}

#[derive(Debug)]
pub struct ObserverQueue {
    capacity: usize,
    inner: Mutex<Inner>,
    notify: Notify,
}

impl ObserverQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: Mutex::new(Inner::default()),
            notify: Notify::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Enqueues `msg`, shedding one message if the queue is full. Returns
    /// false once the queue is closed.
    pub fn push(&self, msg: Message) -> bool {
        let mut inner = self.inner.lock().expect("queue lock");
        if inner.closed {
            return false;
        }
        if inner.items.len() >= self.capacity {
            let victim = inner.items.iter().position(|m| m.message_type().is_droppable());
            match victim {
                Some(i) => {
                    inner.items.remove(i);
                }
                None if msg.message_type().is_droppable() => {
                    inner.dropped += 1;
                    return true;
                }
                None => {
                    inner.items.pop_front();
                    inner.dropped_critical += 1;
                }
            }
            inner.dropped += 1;
        }
        inner.items.push_back(msg);
        drop(inner);
        self.notify.notify_one();
        true
    }

    /// Next message, or `None` once closed and drained.
    pub async fn pop(&self) -> Option<Message> {
        loop {
            let notified = self.notify.notified();
            {
                let mut inner = self.inner.lock().expect("queue lock");
                if let Some(m) = inner.items.pop_front() {
                    return Some(m);
                }
                if inner.closed {
                    return None;
                }
            }
            notified.await;
        }
    }

    pub fn try_pop(&self) -> Option<Message> {
        self.inner.lock().expect("queue lock").items.pop_front()
    }

    pub fn close(&self) {
        self.inner.lock().expect("queue lock").closed = true;
        self.notify.notify_waiters();
        self.notify.notify_one();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().expect("queue lock").closed
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("queue lock").items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total messages shed, and how many of those were non-droppable.
    pub fn dropped(&self) -> (u64, u64) {
        let inner = self.inner.lock().expect("queue lock");
        (inner.dropped, inner.dropped_critical)
    }
}
