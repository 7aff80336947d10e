//! Per-flow decision cache.
//!
//! Eviction rule: while over the global capacity or over a phone's
//! entry limit, drop the entry with the smallest last-seen time; ties
//! break on the flow id's lexicographic order. Per-phone overflow only
//! ever evicts that phone's entries, which is what isolates benign
//! phones from a flooding one.

use std::collections::BTreeMap;

use crate::mac::Mac;
use crate::proto::{Flag, FlowId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PfdcEntry {
    pub flow: FlowId,
    pub flag: Flag,
    pub requesting_app: String,
    pub last_seen_us: u64,
    pub owner_phone: Mac,
}

#[derive(Debug, Clone)]
pub struct Pfdc {
    entries: BTreeMap<FlowId, PfdcEntry>,
    capacity: usize,
    per_phone_limit: usize,
    lookups: u64,
}

impl Pfdc {
    pub fn new(capacity: usize, per_phone_limit: usize) -> Pfdc {
        Pfdc { entries: BTreeMap::new(), capacity, per_phone_limit, lookups: 0 }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of cache consultations so far (the cost the
    /// interesting-flow triage is supposed to avoid).
    pub fn lookup_count(&self) -> u64 {
        self.lookups
    }

    pub fn entries(&self) -> impl Iterator<Item = &PfdcEntry> {
        self.entries.values()
    }

    pub fn owned_by(&self, phone: Mac) -> usize {
        self.entries.values().filter(|e| e.owner_phone == phone).count()
    }

    pub fn contains(&self, flow: &FlowId) -> bool {
        self.entries.contains_key(flow)
    }

    /// Inserts or refreshes a decision, then collects garbage. Returns
    /// the evicted flows (possibly including older entries of the same
    /// owner, never the one just inserted unless capacity is zero).
    pub fn insert(&mut self, entry: PfdcEntry) -> Vec<FlowId> {
        let owner = entry.owner_phone;
        self.entries.insert(entry.flow, entry);
        self.gc_run(Some(owner))
    }

    pub fn remove(&mut self, flow: &FlowId) -> Option<PfdcEntry> {
        self.entries.remove(flow)
    }

    /// Cache consultation; counted. Use [`Pfdc::touch`] to update the
    /// data-last-seen time on a forwarded packet.
    pub fn lookup(&mut self, flow: &FlowId) -> Option<&PfdcEntry> {
        self.lookups += 1;
        self.entries.get(flow)
    }

    /// last-seen is monotone: packets arriving out of order never move
    /// it backwards.
    pub fn touch(&mut self, flow: &FlowId, now_us: u64) {
        if let Some(entry) = self.entries.get_mut(flow) {
            if entry.last_seen_us < now_us {
                entry.last_seen_us = now_us;
            }
        }
    }

    fn oldest<'a>(&self, mut candidates: impl Iterator<Item = &'a PfdcEntry>) -> Option<FlowId> {
        candidates
            .next()
            .map(|first| {
                let mut best = (first.last_seen_us, first.flow);
                for e in candidates {
                    if (e.last_seen_us, e.flow) < best {
                        best = (e.last_seen_us, e.flow);
                    }
                }
                best.1
            })
    }

    /// Evicts until limits hold. `over_phone` narrows the per-phone scan
    /// to the owner that just gained an entry; `None` re-checks all.
    pub fn gc_run(&mut self, over_phone: Option<Mac>) -> Vec<FlowId> {
        let mut evicted = Vec::new();
        let phones: Vec<Mac> = match over_phone {
            Some(mac) => vec![mac],
            None => {
                let mut macs: Vec<Mac> = self.entries.values().map(|e| e.owner_phone).collect();
                macs.sort_unstable();
                macs.dedup();
                macs
            }
        };
        for phone in phones {
            while self.owned_by(phone) > self.per_phone_limit {
                let victim = self
                    .oldest(self.entries.values().filter(|e| e.owner_phone == phone))
                    .expect("count > limit implies non-empty");
                self.entries.remove(&victim);
                evicted.push(victim);
            }
        }
        while self.entries.len() > self.capacity {
            let victim = self.oldest(self.entries.values()).expect("over capacity implies non-empty");
            self.entries.remove(&victim);
            evicted.push(victim);
        }
        evicted
    }
}
