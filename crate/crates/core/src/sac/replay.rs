use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Minibatch in row-per-sample layout.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Self {
        let n = items.len();
        let sdim = items.first().map_or(0, |t| t.state.len());
        let adim = items.first().map_or(0, |t| t.action.len());
        let stack = |dim: usize, pick: &dyn Fn(&Transition) -> &[f64]| {
            Array2::from_shape_fn((n, dim), |(i, j)| pick(items[i])[j])
        };
        Batch {
            states: stack(sdim, &|t| &t.state),
            actions: stack(adim, &|t| &t.action),
            rewards: items.iter().map(|t| t.reward).collect(),
            next_states: stack(sdim, &|t| &t.next_state),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// FIFO experience store with uniform minibatch sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            items: VecDeque::new(),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Draws `size` distinct transitions uniformly. `None` when the buffer
    /// holds fewer than `size`.
    pub fn sample<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Option<Batch> {
        if size == 0 || self.items.len() < size {
            return None;
        }
        let picks = rand::seq::index::sample(rng, self.items.len(), size);
        let items: Vec<&Transition> = picks.iter().map(|i| &self.items[i]).collect();
        Some(Batch::from_transitions(&items))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(x: f64) -> Transition {
        Transition {
            state: vec![x],
            action: vec![x, -x],
            reward: x,
            next_state: vec![x + 1.0],
        }
    }

    #[test]
    fn evicts_oldest_at_capacity() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(t(i as f64));
            assert!(buf.len() <= 3);
        }
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn samples_without_replacement() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..10 {
            buf.push(t(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample(11, &mut rng).is_none());
        let b = buf.sample(10, &mut rng).unwrap();
        let mut seen: Vec<f64> = b.rewards.to_vec();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(b.actions.dim(), (10, 2));
        for i in 0..10 {
            assert_eq!(b.states[[i, 0]], b.rewards[i]);
            assert_eq!(b.next_states[[i, 0]], b.rewards[i] + 1.0);
        }
    }
}
