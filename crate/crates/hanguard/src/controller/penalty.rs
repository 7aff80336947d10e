//! Decision-insert rate limiting and the penalty box.

use std::collections::{BTreeMap, VecDeque};

use crate::mac::Mac;

/// Sliding-window counter over accepted decision inserts, per phone.
/// A phone is flagged when an insert would put it *strictly above* the
/// threshold within the trailing window; the flagged insert itself is
/// the caller's to suppress.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    window_us: u64,
    threshold: u32,
    inserts: BTreeMap<Mac, VecDeque<u64>>,
}

impl RateLimiter {
    pub fn new(window_us: u64, threshold: u32) -> RateLimiter {
        RateLimiter { window_us, threshold, inserts: BTreeMap::new() }
    }

    /// Records an insert attempt at `now`; true means the limit was
    /// just surpassed. Exactly `threshold` inserts in a window are fine.
    pub fn record_insert(&mut self, phone: Mac, now_us: u64) -> bool {
        let window = self.inserts.entry(phone).or_default();
        let cutoff = now_us.saturating_sub(self.window_us);
        while window.front().is_some_and(|t| *t < cutoff) {
            window.pop_front();
        }
        window.push_back(now_us);
        if window.len() as u64 > self.threshold as u64 {
            // The offending attempt is not an accepted insert.
            window.pop_back();
            true
        } else {
            false
        }
    }
}

/// Phones currently having all their packets dropped.
#[derive(Debug, Clone, Default)]
pub struct PenaltyBox {
    until: BTreeMap<Mac, u64>,
}

impl PenaltyBox {
    pub fn new() -> PenaltyBox {
        PenaltyBox::default()
    }

    pub fn penalize(&mut self, phone: Mac, until_us: u64) {
        let slot = self.until.entry(phone).or_insert(0);
        *slot = (*slot).max(until_us);
    }

    pub fn is_penalized(&self, phone: Mac, now_us: u64) -> bool {
        self.until.get(&phone).is_some_and(|until| now_us < *until)
    }

    pub fn penalized_until(&self, phone: Mac) -> Option<u64> {
        self.until.get(&phone).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAC: Mac = Mac([1, 2, 3, 4, 5, 6]);

    #[test]
    fn threshold_is_strict() {
        let mut rl = RateLimiter::new(10_000_000, 3);
        assert!(!rl.record_insert(MAC, 0));
        assert!(!rl.record_insert(MAC, 1));
        assert!(!rl.record_insert(MAC, 2));
        assert!(rl.record_insert(MAC, 3));
    }

    #[test]
    fn window_slides() {
        let mut rl = RateLimiter::new(1_000, 2);
        assert!(!rl.record_insert(MAC, 0));
        assert!(!rl.record_insert(MAC, 500));
        // The first insert has aged out of [1200-1000, 1200].
        assert!(!rl.record_insert(MAC, 1_200));
        assert!(rl.record_insert(MAC, 1_300));
    }

    #[test]
    fn phones_are_independent() {
        let other = Mac([9, 9, 9, 9, 9, 9]);
        let mut rl = RateLimiter::new(1_000, 1);
        assert!(!rl.record_insert(MAC, 0));
        assert!(!rl.record_insert(other, 0));
        assert!(rl.record_insert(MAC, 1));
    }

    #[test]
    fn penalty_expires() {
        let mut pb = PenaltyBox::new();
        pb.penalize(MAC, 5_000);
        assert!(pb.is_penalized(MAC, 4_999));
        assert!(!pb.is_penalized(MAC, 5_000));
        assert!(!pb.is_penalized(Mac([0; 6]), 0));
        // Extending never shortens.
        pb.penalize(MAC, 9_000);
        pb.penalize(MAC, 6_000);
        assert_eq!(pb.penalized_until(MAC), Some(9_000));
    }
}
