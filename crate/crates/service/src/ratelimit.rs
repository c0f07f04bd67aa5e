//! Per-submitter token buckets.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimitConfig {
    pub capacity: u32,
    /// Time for an empty bucket to refill completely.
    pub window_secs: u64,
}

impl Default for RateLimitConfig {
    /// Three submissions per seven days.
    fn default() -> Self {
        Self {
            capacity: 3,
            window_secs: 7 * 24 * 3600,
        }
    }
}

impl RateLimitConfig {
    fn tokens_per_sec(&self) -> f64 {
        self.capacity as f64 / self.window_secs.max(1) as f64
    }
}

/// Tokens refill continuously at `capacity / window`; a submission costs one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenBucket {
    pub tokens: f64,
    pub updated: DateTime<Utc>,
}

impl TokenBucket {
    pub fn full(config: &RateLimitConfig, now: DateTime<Utc>) -> Self {
        Self {
            tokens: config.capacity as f64,
            updated: now,
        }
    }

    /// Tokens available at `now`, in `[0, capacity]`.
    pub fn available(&self, config: &RateLimitConfig, now: DateTime<Utc>) -> f64 {
        let elapsed = (now - self.updated).num_milliseconds().max(0) as f64 / 1000.0;
        (self.tokens + elapsed * config.tokens_per_sec()).clamp(0.0, config.capacity as f64)
    }

    /// Seconds until one token is available, or `None` if one is now.
    pub fn retry_after(&self, config: &RateLimitConfig, now: DateTime<Utc>) -> Option<u64> {
        let have = self.available(config, now);
        if have >= 1.0 {
            None
        } else {
            Some(((1.0 - have) / config.tokens_per_sec()).ceil().max(1.0) as u64)
        }
    }

    pub fn take(&mut self, config: &RateLimitConfig, now: DateTime<Utc>) {
        self.tokens = (self.available(config, now) - 1.0).max(0.0);
        self.updated = now.max(self.updated);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn fourth_submission_in_a_window_waits() {
        let cfg = RateLimitConfig::default();
        let mut b = TokenBucket::full(&cfg, t0());
        for i in 0..3 {
            let now = t0() + Duration::hours(i);
            assert_eq!(b.retry_after(&cfg, now), None);
            b.take(&cfg, now);
        }
        let now = t0() + Duration::hours(3);
        let wait = b.retry_after(&cfg, now).unwrap();
        // One token takes 56 h to accrue; 3 h of it have passed.
        assert!((wait as i64 - 53 * 3600).abs() <= 2, "{wait}");
        assert_eq!(b.retry_after(&cfg, now + Duration::seconds(wait as i64)), None);
    }

    proptest! {
        #[test]
        fn tokens_stay_in_range(steps in proptest::collection::vec((0i64..400_000, any::<bool>()), 1..50)) {
            let cfg = RateLimitConfig::default();
            let mut b = TokenBucket::full(&cfg, t0());
            let mut now = t0();
            for (dt, take) in steps {
                now += Duration::seconds(dt);
                if take && b.retry_after(&cfg, now).is_none() {
                    b.take(&cfg, now);
                }
                let have = b.available(&cfg, now);
                prop_assert!((0.0..=cfg.capacity as f64).contains(&have));
            }
        }
    }
}
