//! Ordered, thread-safe byte pipes with simulated latency.
//!
//! Time is a [`Duration`] since the start of a run. A chunk sent at `t`
//! becomes readable at `t + latency + per_byte·len`, never before an
//! earlier chunk.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    #[serde(with = "crate::link::millis")]
    pub latency: Duration,
    #[serde(with = "crate::link::millis")]
    pub per_byte: Duration,
    /// Probability that a byte has one bit flipped in transit.
    pub corruption: f64,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self { latency: Duration::from_millis(100), per_byte: Duration::ZERO, corruption: 0.0, seed: 0 }
    }
}

impl LinkConfig {
    pub fn instant() -> Self {
        Self { latency: Duration::ZERO, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PipeStats {
    pub chunks_sent: u64,
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
    pub bytes_corrupted: u64,
}

#[derive(Debug)]
struct PipeInner {
    config: LinkConfig,
    queue: VecDeque<(Duration, Vec<u8>)>,
    last_delivery: Duration,
    rng: ChaCha8Rng,
    stats: PipeStats,
    tap: Option<Vec<(Duration, Vec<u8>)>>,
}

/// One direction of a link. Clones share the same queue.
#[derive(Debug, Clone)]
pub struct Pipe {
    inner: Arc<Mutex<PipeInner>>,
}

impl Pipe {
    pub fn new(config: LinkConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self {
            inner: Arc::new(Mutex::new(PipeInner {
                config,
                queue: VecDeque::new(),
                last_delivery: Duration::ZERO,
                rng,
                stats: PipeStats::default(),
                tap: None,
            })),
        }
    }

    fn lock(&self) -> MutexGuard<'_, PipeInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn send(&self, now: Duration, bytes: &[u8]) {
        if bytes.is_empty() {
            return;
        }
        let mut inner = self.lock();
        let transit = inner.config.latency + inner.config.per_byte * bytes.len() as u32;
        let at = (now + transit).max(inner.last_delivery);
        inner.last_delivery = at;
        let mut chunk = bytes.to_vec();
        if inner.config.corruption > 0.0 {
            let p = inner.config.corruption;
            for b in chunk.iter_mut() {
                if inner.rng.gen_bool(p.min(1.0)) {
                    *b ^= 1 << inner.rng.gen_range(0..8);
                    inner.stats.bytes_corrupted += 1;
                }
            }
        }
        inner.stats.chunks_sent += 1;
        inner.stats.bytes_sent += bytes.len() as u64;
        if let Some(tap) = inner.tap.as_mut() {
            tap.push((now, bytes.to_vec()));
        }
        inner.queue.push_back((at, chunk));
    }

    /// Removes and concatenates every chunk whose delivery time is `<= now`.
    pub fn recv_ready(&self, now: Duration) -> Vec<u8> {
        let mut inner = self.lock();
        let mut out = Vec::new();
        while inner.queue.front().is_some_and(|(at, _)| *at <= now) {
            let (_, chunk) = inner.queue.pop_front().expect("front checked");
            out.extend_from_slice(&chunk);
        }
        inner.stats.bytes_delivered += out.len() as u64;
        out
    }

    /// Delivery time of the oldest chunk still in flight.
    pub fn next_delivery(&self) -> Option<Duration> {
        self.lock().queue.front().map(|(at, _)| *at)
    }

    pub fn in_flight(&self) -> usize {
        self.lock().queue.len()
    }

    pub fn stats(&self) -> PipeStats {
        self.lock().stats
    }

    /// Starts recording every chunk as sent (before corruption).
    pub fn enable_tap(&self) {
        self.lock().tap.get_or_insert_with(Vec::new);
    }

    pub fn take_tap(&self) -> Vec<(Duration, Vec<u8>)> {
        self.lock().tap.as_mut().map(std::mem::take).unwrap_or_default()
    }
}

/// Serial link between the ZigBee coordinator and the gateway.
#[derive(Debug, Clone)]
pub struct SerialLink {
    /// Gateway → coordinator.
    pub downlink: Pipe,
    /// Coordinator → gateway.
    pub uplink: Pipe,
}

impl SerialLink {
    pub fn new(config: LinkConfig) -> Self {
        let up = LinkConfig { seed: config.seed.wrapping_add(1), ..config.clone() };
        Self { downlink: Pipe::new(config), uplink: Pipe::new(up) }
    }
}

/// Serde helper storing durations as integer milliseconds.
pub mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}
