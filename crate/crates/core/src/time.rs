//! Millisecond timestamps and the clocks that produce them.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::time::{Duration, Instant};

/// A point on the cluster clock, in whole milliseconds since the clock's epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_millis(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub fn from_secs(s: u64) -> Self {
        Timestamp(s * 1000)
    }

    pub fn as_millis(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Elapsed time since `earlier`, saturating at zero.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0))
    }
}

impl Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Duration) -> Timestamp {
        Timestamp(self.0.saturating_add(duration_millis(rhs)))
    }
}

impl AddAssign<Duration> for Timestamp {
    fn add_assign(&mut self, rhs: Duration) {
        *self = *self + rhs;
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Whole milliseconds in `d`, saturating at `u64::MAX`.
pub fn duration_millis(d: Duration) -> u64 {
    u64::try_from(d.as_millis()).unwrap_or(u64::MAX)
}

/// Converts a non-negative, finite number of seconds into a millisecond duration.
pub fn secs_to_duration(secs: f64) -> Option<Duration> {
    if !secs.is_finite() || secs < 0.0 || secs > (u64::MAX / 1000) as f64 {
        return None;
    }
    Some(Duration::from_millis((secs * 1000.0).round() as u64))
}

pub trait Clock {
    fn now(&self) -> Timestamp;
}

/// Simulation clock. Only moves forward, and only when told to.
#[derive(Debug, Clone, Default)]
pub struct VirtualClock {
    now: Timestamp,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Moves the clock to `t`. Returns false (and leaves the clock alone) if
    /// `t` lies in the past.
    pub fn advance_to(&mut self, t: Timestamp) -> bool {
        if t < self.now {
            return false;
        }
        self.now = t;
        true
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        self.now
    }
}

/// Wall clock mapped onto the same millisecond interface, with its epoch at
/// construction time.
#[derive(Debug, Clone)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        WallClock { start: Instant::now() }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now(&self) -> Timestamp {
        Timestamp(duration_millis(self.start.elapsed()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_refuses_to_go_back() {
        let mut c = VirtualClock::new();
        assert!(c.advance_to(Timestamp(500)));
        assert!(!c.advance_to(Timestamp(499)));
        assert_eq!(c.now(), Timestamp(500));
    }

    #[test]
    fn seconds_round_to_millis() {
        assert_eq!(secs_to_duration(1.5), Some(Duration::from_millis(1500)));
        assert_eq!(secs_to_duration(0.0004), Some(Duration::ZERO));
        assert_eq!(secs_to_duration(-1.0), None);
        assert_eq!(secs_to_duration(f64::NAN), None);
    }

    #[test]
    fn wall_clock_is_monotone() {
        let c = WallClock::new();
        let a = c.now();
        let b = c.now();
        assert!(b >= a);
    }
}
