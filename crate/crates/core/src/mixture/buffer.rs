use std::collections::VecDeque;

use crate::numerics::Real;

/// One buffered position: its attention key and dependency distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry<S> {
    pub key: Vec<S>,
    pub dist: Vec<S>,
}

/// FIFO of the last `capacity` positions (`0` keeps everything).
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionBuffer<S> {
    capacity: usize,
    entries: VecDeque<BufferEntry<S>>,
}

impl<S: Real> DistributionBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        DistributionBuffer {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry, evicting the oldest one when full.
    pub fn push(&mut self, key: Vec<S>, dist: Vec<S>) {
        if self.capacity > 0 && self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(BufferEntry { key, dist });
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry<S>> {
        self.entries.iter()
    }

    pub fn keys(&self) -> Vec<&[S]> {
        self.entries.iter().map(|e| e.key.as_slice()).collect()
    }

    pub fn dists(&self) -> Vec<&[S]> {
        self.entries.iter().map(|e| e.dist.as_slice()).collect()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}
