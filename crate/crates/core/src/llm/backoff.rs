use std::time::Duration;

/// Exponential backoff with bounded multiplicative jitter.
///
/// The delay before retry `n` (1-based) is `min(max, base · 2^(n−1))` scaled by
/// a factor in `[1, 1 + jitter]`, and never shorter than the previous delay.
#[derive(Debug, Clone)]
pub struct Backoff {
    base: Duration,
    max: Duration,
    jitter: f64,
    last: Duration,
    retries: u32,
}

impl Backoff {
    pub fn new(base: Duration, max: Duration, jitter: f64) -> Self {
        Self {
            base,
            max: max.max(base),
            jitter: jitter.max(0.0),
            last: Duration::ZERO,
            retries: 0,
        }
    }

    /// Delay before the next retry. `unit` is a uniform sample in `[0, 1)`
    /// supplied by the caller; `floor` is a server-requested minimum.
    pub fn next_delay(&mut self, unit: f64, floor: Option<Duration>) -> Duration {
        let exp = self
            .base
            .saturating_mul(1u32.checked_shl(self.retries).unwrap_or(u32::MAX))
            .min(self.max);
        self.retries += 1;
        let jittered = exp.mul_f64(1.0 + self.jitter * unit.clamp(0.0, 1.0));
        let requested = floor.map(|f| f.min(self.max)).unwrap_or(Duration::ZERO);
        self.last = jittered.max(requested).max(self.last);
        self.last
    }
}
