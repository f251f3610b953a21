//! Fixed-capacity replay memory with reservoir updates.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::stream::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    capacity: usize,
    slots: Vec<Sample>,
    /// Stream samples offered so far.
    seen: u64,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("memory capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            slots: Vec::with_capacity(capacity),
            seen: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn slots(&self) -> &[Sample] {
        &self.slots
    }

    /// Reservoir sampling: the `n`-th sample offered (1-based) is kept with
    /// probability `capacity / n`, evicting a uniformly chosen slot.
    pub fn reservoir_update<R: Rng + ?Sized>(&mut self, batch: &[Sample], rng: &mut R) {
        for sample in batch {
            if (self.seen as usize) < self.capacity {
                self.slots.push(sample.clone());
            } else {
                let j = rng.random_range(0..=self.seen);
                if (j as usize) < self.capacity {
                    self.slots[j as usize] = sample.clone();
                }
            }
            self.seen += 1;
        }
    }

    /// Uniform sample without replacement of `min(size, len)` stored
    /// samples. An empty buffer yields an empty batch.
    pub fn random_retrieve<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Vec<Sample> {
        let amount = size.min(self.slots.len());
        if amount == 0 {
            return Vec::new();
        }
        rand::seq::index::sample(rng, self.slots.len(), amount)
            .into_iter()
            .map(|i| self.slots[i].clone())
            .collect()
    }

    pub fn class_histogram(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.slots {
            *counts.entry(s.label).or_insert(0) += 1;
        }
        counts
    }
}
