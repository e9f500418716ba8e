//! Request pacing and retry with exponential backoff.
//!
//! The rate limiter hands out evenly spaced start slots (a token bucket with
//! a configurable burst) so concurrent workers never need to coordinate
//! beyond one mutex. Time is abstracted behind [`Clock`] so that tests can run
//! against a manual clock instead of sleeping.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::warn;
use rand::Rng;

use super::BackendError;

pub trait Clock: Send + Sync {
    /// Time elapsed since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// A clock that only moves when slept on. Records every sleep.
#[derive(Debug, Default)]
pub struct ManualClock {
    inner: Mutex<(Duration, Vec<Duration>)>,
}

impl ManualClock {
    pub fn sleeps(&self) -> Vec<Duration> {
        self.inner.lock().unwrap().1.clone()
    }

    pub fn advance(&self, d: Duration) {
        self.inner.lock().unwrap().0 += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        self.inner.lock().unwrap().0
    }

    fn sleep(&self, d: Duration) {
        let mut g = self.inner.lock().unwrap();
        g.0 += d;
        g.1.push(d);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThrottleConfig {
    pub requests_per_second: f64,
    /// Requests that may start back to back before pacing applies.
    pub burst: u32,
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub backoff_factor: f64,
    /// Extra random delay, as a fraction of the backoff step.
    pub jitter: f64,
}

impl Default for ThrottleConfig {
    fn default() -> Self {
        Self {
            requests_per_second: 3.0,
            burst: 1,
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            backoff_factor: 2.0,
            jitter: 0.25,
        }
    }
}

/// Builds the shared limiter-plus-retry policy from a configuration.
pub fn throttle_policy(config: &ThrottleConfig, clock: std::sync::Arc<dyn Clock>) -> Throttle {
    Throttle::new(config.clone(), clock)
}

pub struct Throttle {
    config: ThrottleConfig,
    clock: std::sync::Arc<dyn Clock>,
    next_slot: Mutex<Option<Duration>>,
}

impl Throttle {
    pub fn new(config: ThrottleConfig, clock: std::sync::Arc<dyn Clock>) -> Self {
        assert!(config.requests_per_second > 0.0, "rate must be positive");
        assert!(config.max_attempts >= 1, "at least one attempt");
        Self {
            config,
            clock,
            next_slot: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &ThrottleConfig {
        &self.config
    }

    fn interval(&self) -> Duration {
        // rounded up so the configured rate is never exceeded
        Duration::from_nanos((1e9 / self.config.requests_per_second).ceil() as u64)
    }

    /// Blocks until the caller may start a request.
    pub fn acquire(&self) {
        let wait = {
            let mut slot = self.next_slot.lock().unwrap();
            let now = self.clock.now();
            let burst_window = self.interval() * self.config.burst.saturating_sub(1);
            let earliest = now.saturating_sub(burst_window);
            let start = match *slot {
                Some(next) if next > earliest => next,
                _ => earliest,
            };
            *slot = Some(start + self.interval());
            start.saturating_sub(now)
        };
        if !wait.is_zero() {
            self.clock.sleep(wait);
        }
    }

    /// Backoff before retry number `retry` (1-based), jitter excluded.
    pub fn backoff(&self, retry: u32) -> Duration {
        self.config
            .base_delay
            .mul_f64(self.config.backoff_factor.powi(retry as i32 - 1))
    }

    /// Runs `op` under the rate limit, retrying transient failures.
    ///
    /// Returns the result together with the number of attempts made.
    pub fn call<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> (Result<T, BackendError>, u32) {
        let mut attempt = 1;
        loop {
            self.acquire();
            match op() {
                Ok(v) => return (Ok(v), attempt),
                Err(BackendError::Transient(msg)) if attempt < self.config.max_attempts => {
                    let base = self.backoff(attempt);
                    let jitter = base.mul_f64(self.config.jitter * rand::rng().random::<f64>());
                    warn!(
                        "transient failure (attempt {attempt}): {msg}; retrying in {:?}",
                        base + jitter
                    );
                    self.clock.sleep(base + jitter);
                    attempt += 1;
                }
                Err(e) => return (Err(e), attempt),
            }
        }
    }
}
