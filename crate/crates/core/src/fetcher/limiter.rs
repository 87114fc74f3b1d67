use std::num::NonZeroU32;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Source of time for rate limiting. Offsets are measured from the clock's
/// own epoch.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    /// Blocks (or, for simulated clocks, advances time) until `deadline`.
    fn sleep_until(&self, deadline: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    start: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { start: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep_until(&self, deadline: Duration) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(deadline - now);
        }
    }
}

/// Virtual time. Sleeping moves the clock forward instantly; time never runs
/// backwards.
#[derive(Debug, Default)]
pub struct SimulatedClock {
    now: Mutex<Duration>,
}

impl SimulatedClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += by;
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, deadline: Duration) {
        let mut now = self.now.lock().unwrap();
        if deadline > *now {
            *now = deadline;
        }
    }
}

/// Requests per second allowed against a remote API.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimit {
    max_per_second: NonZeroU32,
}

impl RateLimit {
    pub fn per_second(max_per_second: NonZeroU32) -> Self {
        Self { max_per_second }
    }

    /// Returns `None` for a zero rate.
    pub fn new(max_per_second: u32) -> Option<Self> {
        NonZeroU32::new(max_per_second).map(Self::per_second)
    }

    pub fn max_per_second(&self) -> u32 {
        self.max_per_second.get()
    }

    /// Spacing between consecutive permits, rounded up to whole nanoseconds so
    /// that `max_per_second + 1` permits never fit in one second.
    pub fn interval(&self) -> Duration {
        let n = u64::from(self.max_per_second.get());
        Duration::from_nanos(1_000_000_000u64.div_ceil(n))
    }
}

/// Token bucket holding a single token, refilled once per
/// [`RateLimit::interval`].
///
/// A one-token bucket keeps the sliding-window guarantee: in any one-second
/// window at most `max_per_second` permits are granted. Larger bursts would
/// let a full bucket plus its refills exceed that bound.
pub struct TokenBucket<'c> {
    interval: Duration,
    clock: &'c dyn Clock,
    next_free: Mutex<Option<Duration>>,
}

impl<'c> TokenBucket<'c> {
    pub fn new(limit: RateLimit, clock: &'c dyn Clock) -> Self {
        Self {
            interval: limit.interval(),
            clock,
            next_free: Mutex::new(None),
        }
    }

    /// Waits for a token and returns the instant at which it was granted.
    pub fn acquire(&self) -> Duration {
        let slot = {
            let mut next = self.next_free.lock().unwrap();
            let now = self.clock.now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot
        };
        self.clock.sleep_until(slot);
        slot
    }
}
