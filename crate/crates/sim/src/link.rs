//! The link model: per-message latency, jitter, and silent drops.

use acp_core::rng::SplitMix64;

/// Delivery time is `send + base + uniform(0..=jitter)`; a message is
/// dropped outright with the configured probability (in millionths).
/// Per-(sender, recipient) ordering is FIFO: a later send never overtakes
/// an earlier delivery on the same directed pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkModel {
    pub base_latency_ms: u64,
    pub jitter_ms: u64,
    pub drop_micros: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            base_latency_ms: 10,
            jitter_ms: 0,
            drop_micros: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkOutcome {
    DeliverAt(u64),
    Dropped,
}

impl LinkModel {
    /// Samples one transmission. Draw order is fixed (drop, then jitter)
    /// so traces reproduce.
    pub fn sample(&self, now: u64, rng: &mut SplitMix64) -> LinkOutcome {
        let dropped = self.drop_micros > 0 && rng.below(1_000_000) < self.drop_micros;
        let jitter = if self.jitter_ms > 0 {
            rng.below(self.jitter_ms + 1)
        } else {
            0
        };
        if dropped {
            return LinkOutcome::Dropped;
        }
        LinkOutcome::DeliverAt(now + self.base_latency_ms + jitter)
    }

    /// Upper bound on one round trip, used to size query timeouts.
    pub fn round_trip_bound_ms(&self) -> u64 {
        2 * (self.base_latency_ms + self.jitter_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_jitter_is_exact_base() {
        let link = LinkModel {
            base_latency_ms: 10,
            jitter_ms: 0,
            drop_micros: 0,
        };
        let mut rng = SplitMix64::new(1);
        assert_eq!(link.sample(100, &mut rng), LinkOutcome::DeliverAt(110));
    }

    #[test]
    fn jitter_stays_in_range() {
        let link = LinkModel {
            base_latency_ms: 10,
            jitter_ms: 5,
            drop_micros: 0,
        };
        let mut rng = SplitMix64::new(2);
        for _ in 0..1000 {
            match link.sample(0, &mut rng) {
                LinkOutcome::DeliverAt(at) => assert!((10..=15).contains(&at)),
                LinkOutcome::Dropped => panic!("drop probability is zero"),
            }
        }
    }

    #[test]
    fn drop_rate_roughly_matches() {
        let link = LinkModel {
            base_latency_ms: 1,
            jitter_ms: 0,
            drop_micros: 10_000, // 1%
        };
        let mut rng = SplitMix64::new(3);
        let drops = (0..100_000)
            .filter(|_| matches!(link.sample(0, &mut rng), LinkOutcome::Dropped))
            .count();
        assert!((800..1200).contains(&drops), "got {drops} drops");
    }
}
