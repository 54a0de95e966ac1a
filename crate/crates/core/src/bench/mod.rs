//! Latency and throughput measurement over a connected [`Participant`].
//!
//! Latency is half the publisher-timed round trip of an echoed random
//! payload. Throughput is `received × size × 8 / send interval`, where the
//! peer reports how many packets it counted between START and DONE.
//! All timing uses the publisher's monotonic clock.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use thiserror::Error;

use crate::crypto::Drbg;
use crate::pubsub::{Participant, PubsubError};

pub const MIN_PAYLOAD: usize = 16;
pub const MAX_PAYLOAD: usize = 12_000;
pub const START: &[u8] = b"START";
pub const DONE: &[u8] = b"DONE";
pub const RESULT_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no echo received for any of the {0}-byte repetitions")]
    PeerUnavailable(usize),
    #[error(
        "no packet count for the {size}-byte test {repetition} after {RESULT_ATTEMPTS} attempts"
    )]
    ResultTimeout { size: usize, repetition: usize },
    #[error("elapsed time must be positive")]
    ZeroElapsed,
    #[error(transparent)]
    Pubsub(#[from] PubsubError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Latency,
    Throughput,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Latency => "latency",
            Metric::Throughput => "throughput",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "latency" => Ok(Metric::Latency),
            "throughput" => Ok(Metric::Throughput),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub payload_sizes: Vec<usize>,
    pub latency_repetitions: usize,
    /// Packets per throughput test.
    pub packets_per_test: usize,
    pub throughput_repetitions: usize,
    /// Sleep after each throughput packet.
    pub cooloff: Duration,
    /// Sleep after START and before DONE.
    pub guard: Duration,
    pub topic1: String,
    pub topic2: String,
    /// How long to wait for one echo.
    pub round_trip_timeout: Duration,
    /// How long to wait for the packet count after DONE.
    pub result_timeout: Duration,
    /// Seed for payload generation; OS entropy when `None`.
    pub seed: Option<u64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            payload_sizes: vec![16, 1024, 12_000],
            latency_repetitions: 1000,
            packets_per_test: 100,
            throughput_repetitions: 100,
            cooloff: Duration::from_millis(1),
            guard: Duration::from_millis(100),
            topic1: "topic1".into(),
            topic2: "topic2".into(),
            round_trip_timeout: Duration::from_millis(250),
            result_timeout: Duration::from_secs(1),
            seed: None,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.payload_sizes.is_empty() {
            return Err(BenchError::Config("no payload sizes".into()));
        }
        if let Some(s) = self
            .payload_sizes
            .iter()
            .find(|s| !(MIN_PAYLOAD..=MAX_PAYLOAD).contains(*s))
        {
            return Err(BenchError::Config(format!(
                "payload size {s} outside [{MIN_PAYLOAD}, {MAX_PAYLOAD}]"
            )));
        }
        if self.cooloff.is_zero() {
            return Err(BenchError::Config(
                "cooling-off period must be positive".into(),
            ));
        }
        if self.topic1 == self.topic2 {
            return Err(BenchError::Config("topic1 and topic2 must differ".into()));
        }
        Ok(())
    }

    fn drbg(&self) -> Drbg {
        match self.seed {
            Some(seed) => Drbg::from_seed(seed),
            None => Drbg::from_os_entropy(b"sentrybus bench payloads"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub profile: String,
    pub payload_size: usize,
    pub metric: Metric,
    /// Microseconds for latency, bits per second for throughput. `None`
    /// marks a dropped latency round trip.
    pub value: Option<f64>,
    pub packets_sent: u64,
    pub packets_received: u64,
    pub repetition: usize,
    /// Wall clock, microseconds since the Unix epoch.
    pub timestamp_us: u64,
}

/// Waits `d`, spinning through the final stretch so the pause does not pick
/// up the scheduler's wake-up jitter.
pub fn pause(d: Duration) {
    const SPIN: Duration = Duration::from_millis(1);
    let deadline = Instant::now() + d;
    if d > SPIN {
        std::thread::sleep(d - SPIN);
    }
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
}

fn now_us() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_micros() as u64)
}

/// Half the round trip between `t1` and `t2`.
pub fn estimated_latency(t1: Duration, t2: Duration) -> Duration {
    t2.saturating_sub(t1) / 2
}

/// `received × payload_size × 8 / elapsed`, in bits per second.
pub fn calculate_bps(
    payload_size: usize,
    received: u64,
    elapsed: Duration,
) -> Result<f64, BenchError> {
    if elapsed.is_zero() {
        return Err(BenchError::ZeroElapsed);
    }
    Ok((received as f64 * payload_size as f64 * 8.0) / elapsed.as_secs_f64())
}

/// Subscribes `topic` and forwards every payload to a channel.
fn listen(p: &Participant, topic: &str) -> Result<Receiver<Vec<u8>>, BenchError> {
    let (tx, rx) = mpsc::channel();
    p.subscribe(topic, move |d, _| {
        let _ = tx.send(d.payload.clone());
    })?;
    Ok(rx)
}

struct Unsubscribe<'a>(&'a Participant, &'a str);

impl Drop for Unsubscribe<'_> {
    fn drop(&mut self) {
        self.0.unsubscribe(self.1);
    }
}

/// Echo-timing publisher: one record per repetition, dropped round trips
/// recorded with `value: None`.
pub fn latency_publisher(
    cfg: &BenchConfig,
    p: &Participant,
) -> Result<Vec<BenchRecord>, BenchError> {
    cfg.validate()?;
    let echoes = listen(p, &cfg.topic2)?;
    let _guard = Unsubscribe(p, &cfg.topic2);
    let mut drbg = cfg.drbg();
    let profile = p.profile().label().to_owned();
    let mut records = Vec::new();
    let epoch = Instant::now();
    for &size in &cfg.payload_sizes {
        let mut received_any = false;
        for rep in 0..cfg.latency_repetitions {
            let msg = drbg.generate(size);
            while echoes.try_recv().is_ok() {}
            let t1 = epoch.elapsed();
            p.publish(&cfg.topic1, &msg)?;
            let deadline = epoch + t1 + cfg.round_trip_timeout;
            let mut latency = None;
            loop {
                let wait = deadline.saturating_duration_since(Instant::now());
                match echoes.recv_timeout(wait) {
                    Ok(echo) if echo == msg => {
                        let t2 = epoch.elapsed();
                        latency = Some(estimated_latency(t1, t2));
                        break;
                    }
                    Ok(_) => debug!("ignoring mismatched echo"),
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
            received_any |= latency.is_some();
            records.push(BenchRecord {
                profile: profile.clone(),
                payload_size: size,
                metric: Metric::Latency,
                value: latency.map(|d| d.as_secs_f64() * 1e6),
                packets_sent: 1,
                packets_received: latency.is_some() as u64,
                repetition: rep,
                timestamp_us: now_us(),
            });
        }
        if !received_any && cfg.latency_repetitions > 0 {
            return Err(BenchError::PeerUnavailable(size));
        }
        info!(
            "latency {profile} {size} B: {} repetitions",
            cfg.latency_repetitions
        );
    }
    Ok(records)
}

/// Republishes everything received on `topic1` on `topic2`. Runs on the
/// participant's receive loop until it shuts down.
pub fn latency_responder(p: &Participant, topic1: &str, topic2: &str) -> Result<(), BenchError> {
    let topic2 = topic2.to_owned();
    p.subscribe(topic1, move |d, out| {
        if let Err(e) = out.publish(&topic2, &d.payload) {
            debug!("echo dropped: {e}");
        }
    })?;
    Ok(())
}

/// Counting responder: START resets, DONE reports and resets, anything else
/// counts. Returns the live counter.
pub fn throughput_responder(
    p: &Participant,
    topic1: &str,
    topic2: &str,
) -> Result<Arc<AtomicU64>, BenchError> {
    let count = Arc::new(AtomicU64::new(0));
    let counter = count.clone();
    let topic2 = topic2.to_owned();
    p.subscribe(topic1, move |d, out| {
        if d.payload == START {
            counter.store(0, Ordering::SeqCst);
        } else if d.payload == DONE {
            let n = counter.swap(0, Ordering::SeqCst);
            if let Err(e) = out.publish(&topic2, n.to_string().as_bytes()) {
                debug!("count report dropped: {e}");
            }
        } else {
            counter.fetch_add(1, Ordering::SeqCst);
        }
    })?;
    Ok(count)
}

fn await_count(rx: &Receiver<Vec<u8>>, timeout: Duration, sent: u64) -> Option<u64> {
    let deadline = Instant::now() + timeout;
    loop {
        let wait = deadline.saturating_duration_since(Instant::now());
        let msg = rx.recv_timeout(wait).ok()?;
        match std::str::from_utf8(&msg)
            .ok()
            .and_then(|s| s.parse::<u64>().ok())
        {
            Some(n) if n <= sent => return Some(n),
            _ => debug!("ignoring unexpected count report"),
        }
    }
}

/// START/DONE-delimited send bursts, one record per test.
pub fn throughput_publisher(
    cfg: &BenchConfig,
    p: &Participant,
) -> Result<Vec<BenchRecord>, BenchError> {
    cfg.validate()?;
    let counts = listen(p, &cfg.topic2)?;
    let _guard = Unsubscribe(p, &cfg.topic2);
    let mut drbg = cfg.drbg();
    let profile = p.profile().label().to_owned();
    let sent = cfg.packets_per_test as u64;
    let mut records = Vec::new();
    for &size in &cfg.payload_sizes {
        for rep in 0..cfg.throughput_repetitions {
            let mut outcome = None;
            for attempt in 1..=RESULT_ATTEMPTS {
                let msg = drbg.generate(size);
                while counts.try_recv().is_ok() {}
                p.publish(&cfg.topic1, START)?;
                std::thread::sleep(cfg.guard);
                let start = Instant::now();
                for _ in 0..cfg.packets_per_test {
                    p.publish(&cfg.topic1, &msg)?;
                    pause(cfg.cooloff);
                }
                let clock = start.elapsed();
                std::thread::sleep(cfg.guard);
                p.publish(&cfg.topic1, DONE)?;
                match await_count(&counts, cfg.result_timeout, sent) {
                    Some(received) => {
                        outcome = Some((received, clock));
                        break;
                    }
                    None => warn!("no count for {size} B test {rep}, attempt {attempt}"),
                }
            }
            let (received, clock) = outcome.ok_or(BenchError::ResultTimeout {
                size,
                repetition: rep,
            })?;
            records.push(BenchRecord {
                profile: profile.clone(),
                payload_size: size,
                metric: Metric::Throughput,
                value: Some(calculate_bps(size, received, clock)?),
                packets_sent: sent,
                packets_received: received,
                repetition: rep,
                timestamp_us: now_us(),
            });
        }
        info!(
            "throughput {profile} {size} B: {} tests",
            cfg.throughput_repetitions
        );
    }
    Ok(records)
}
