use rand::Rng;

use crate::error::{Error, Result};

/// Fixed-capacity ring buffer with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    cursor: usize,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        Ok(Self { capacity, items: Vec::with_capacity(capacity), cursor: 0 })
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

    /// Inserts, overwriting the oldest item once full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.cursor] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Draws `batch` indices uniformly with replacement into `out`.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R, out: &mut Vec<usize>) -> Result<()> {
        if batch == 0 || self.items.len() < batch {
            return Err(Error::Config(format!("cannot sample {batch} from {} stored items", self.items.len())));
        }
        out.clear();
        out.extend((0..batch).map(|_| rng.gen_range(0..self.items.len())));
        Ok(())
    }

    pub fn get(&self, index: usize) -> &T {
        &self.items[index]
    }

    /// Stored items from oldest to newest.
    pub fn ordered(&self) -> Vec<T> {
        if self.items.len() < self.capacity {
            self.items.clone()
        } else {
            let mut out = self.items[self.cursor..].to_vec();
            out.extend_from_slice(&self.items[..self.cursor]);
            out
        }
    }
}
