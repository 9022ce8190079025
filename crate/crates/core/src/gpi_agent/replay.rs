use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default replay capacity (2e5 transitions).
pub const DEFAULT_CAPACITY: usize = 200_000;

/// Transition in feature space, as stored for learning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTransition {
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: Vec<f64>,
    pub next_features: Vec<f64>,
    /// Terminal: the target does not bootstrap.
    pub done: bool,
    /// Episode cut short without reaching a terminal state.
    pub truncated: bool,
    pub episode: u64,
    pub t: u32,
}

/// Fixed-capacity FIFO ring.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    cursor: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::new(),
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

    /// Stores `item`, evicting the oldest entry when full; returns its slot.
    pub fn push(&mut self, item: T) -> usize {
        let slot = self.cursor;
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[slot] = item;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        slot
    }

    pub fn get(&self, slot: usize) -> Option<&T> {
        self.items.get(slot)
    }

    pub fn get_mut(&mut self, slot: usize) -> Option<&mut T> {
        self.items.get_mut(slot)
    }

    /// Slot holding the `k`-th oldest entry.
    pub fn slot_of_age(&self, k: usize) -> usize {
        if self.items.len() < self.capacity {
            k
        } else {
            (self.cursor + k) % self.capacity
        }
    }

    /// The slot written right after `slot`, if it has been written yet.
    pub fn next_slot(&self, slot: usize) -> Option<usize> {
        let next = (slot + 1) % self.capacity;
        let newest = (self.cursor + self.capacity - 1) % self.capacity;
        if slot == newest || next >= self.items.len() {
            None
        } else {
            Some(next)
        }
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        (0..self.items.len()).map(move |k| &self.items[self.slot_of_age(k)])
    }

    /// Uniform slots, with replacement.
    pub fn sample_slots<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    /// Uniform slots among all but the newest `exclude_newest` entries.
    pub fn sample_older<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, exclude_newest: usize) -> Vec<usize> {
        let usable = self.items.len().saturating_sub(exclude_newest);
        if usable == 0 {
            return Vec::new();
        }
        (0..n).map(|_| self.slot_of_age(rng.random_range(0..usable))).collect()
    }
}

/// Binary sum tree over slot priorities, for proportional sampling.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    tree: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.next_power_of_two();
        Self {
            leaves,
            tree: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.tree[1]
    }

    pub fn get(&self, slot: usize) -> f64 {
        self.tree[self.leaves + slot]
    }

    pub fn set(&mut self, slot: usize, priority: f64) {
        let mut i = self.leaves + slot;
        self.tree[i] = priority;
        while i > 1 {
            i /= 2;
            self.tree[i] = self.tree[2 * i] + self.tree[2 * i + 1];
        }
    }

    /// Slot whose cumulative range contains `mass` in `[0, total)`.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut i = 1;
        while i < self.leaves {
            let left = self.tree[2 * i];
            if mass < left || self.tree[2 * i + 1] <= 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.leaves
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(i);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn next_slot_follows_writes() {
        let mut b = ReplayBuffer::new(4);
        let s0 = b.push('a');
        let s1 = b.push('b');
        assert_eq!(b.next_slot(s0), Some(s1));
        assert_eq!(b.next_slot(s1), None);
        for c in ['c', 'd', 'e'] {
            b.push(c);
        }
        // slot 0 now holds 'e', the newest
        assert_eq!(b.next_slot(0), None);
        assert_eq!(b.next_slot(3), Some(0));
    }

    #[test]
    fn sum_tree_sampling_is_proportional() {
        let mut t = SumTree::new(3);
        t.set(0, 1.0);
        t.set(1, 3.0);
        t.set(2, 0.0);
        assert_eq!(t.total(), 4.0);
        assert_eq!(t.find(0.5), 0);
        assert_eq!(t.find(1.5), 1);
        assert_eq!(t.find(3.99), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = [0usize; 3];
        for _ in 0..40_000 {
            counts[t.find(rng.random::<f64>() * t.total())] += 1;
        }
        assert_eq!(counts[2], 0);
        let frac = counts[1] as f64 / 40_000.0;
        assert!((frac - 0.75).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn never_exceeds_capacity(cap in 1usize..20, n in 0usize..100) {
            let mut b = ReplayBuffer::new(cap);
            for i in 0..n {
                b.push(i);
                prop_assert!(b.len() <= cap);
            }
            let kept: Vec<usize> = b.iter().copied().collect();
            let expected: Vec<usize> = (n.saturating_sub(cap)..n).collect();
            prop_assert_eq!(kept, expected);
        }
    }
}
