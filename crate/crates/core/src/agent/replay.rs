use rand::Rng;

use crate::pixelworld::PackedObservation;

/// One environment transition. `done` marks a true terminal (goal reached);
/// a horizon cut-off is stored with `done = false` so its target bootstraps.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: PackedObservation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: PackedObservation,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling over filled slots.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    /// # Panics
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            cursor: 0,
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

    /// Slot that the next push overwrites once the buffer is full.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, slot: usize) -> Option<&T> {
        self.items.get(slot)
    }

    /// `n` slot indices drawn uniformly with replacement.
    ///
    /// # Panics
    /// If the buffer is empty.
    pub fn sample_slots<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..n)
            .map(|_| rng.random_range(0..self.items.len()))
            .collect()
    }

    pub fn sample<'a, R: Rng + ?Sized>(&'a self, rng: &mut R, n: usize) -> Vec<&'a T> {
        self.sample_slots(rng, n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}
