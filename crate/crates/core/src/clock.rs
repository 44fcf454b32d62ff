//! Injectable time source. Sessions run on a simulated clock in tests and on
//! the wall clock when serving.

use std::sync::atomic::{AtomicI64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Microseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round() as i64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn plus_secs(self, secs: f64) -> Self {
        Timestamp(self.0 + (secs * 1e6).round() as i64)
    }

    /// Seconds from `earlier` to `self`.
    pub fn secs_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / 1e6
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;

    /// Let `secs` of camera time pass: a simulated clock jumps forward, a
    /// paced wall clock sleeps, an unpaced one returns immediately.
    fn elapse(&self, secs: f64);
}

/// Manually advanced clock.
#[derive(Debug, Default)]
pub struct SimClock {
    now_us: AtomicI64,
}

impl SimClock {
    pub fn new(start: Timestamp) -> Self {
        SimClock {
            now_us: AtomicI64::new(start.0),
        }
    }

    pub fn advance(&self, secs: f64) {
        self.now_us
            .fetch_add((secs * 1e6).round() as i64, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.now_us.load(Ordering::SeqCst))
    }

    fn elapse(&self, secs: f64) {
        self.advance(secs);
    }
}

#[derive(Debug, Default, Clone)]
pub struct WallClock {
    /// Sleep through simulated motion so the sweep cadence matches a real mount.
    pub pace: bool,
}

impl Clock for WallClock {
    fn now(&self) -> Timestamp {
        let d = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or(Duration::ZERO);
        Timestamp(d.as_micros() as i64)
    }

    fn elapse(&self, secs: f64) {
        if self.pace && secs > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(secs));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_advances_exactly() {
        let c = SimClock::new(Timestamp(1_000));
        c.elapse(8.0);
        assert_eq!(c.now().secs_since(Timestamp(1_000)), 8.0);
    }
}
