use alloc::vec::Vec;

use rand::seq::index;

use crate::rng::SimRng;

/// One executed allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub features: Vec<f64>,
    /// Executed action as fractions of the caps.
    pub fractions: Vec<f64>,
    pub reward: f64,
}

/// Fixed-capacity ring; the oldest record is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    records: Vec<Record>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            records: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, record: Record) {
        if self.records.len() < self.capacity {
            self.records.push(record);
        } else {
            self.records[self.next] = record;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Up to `n` distinct records, uniformly at random.
    pub fn sample(&self, rng: &mut SimRng, n: usize) -> Vec<&Record> {
        let n = n.min(self.records.len());
        index::sample(rng, self.records.len(), n)
            .into_iter()
            .map(|i| &self.records[i])
            .collect()
    }
}
