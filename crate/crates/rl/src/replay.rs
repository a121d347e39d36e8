use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

use crate::state::StateSnapshot;

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Arc<StateSnapshot>,
    pub action: usize,
    /// −1 while the test continues, 0 on termination.
    pub reward: f64,
    pub next_state: Arc<StateSnapshot>,
    pub done: bool,
}

impl Transition {
    pub fn next_available(&self) -> &[bool] {
        &self.next_state.available
    }
}

/// Fixed-capacity FIFO buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.items.get(i)
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}
