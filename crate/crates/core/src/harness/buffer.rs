use ndarray::Array2;
use rand::Rng as _;

use crate::batch::TransitionBatch;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Stored transition. There is deliberately no reward field.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<T> {
    pub s: Vec<T>,
    pub a: Vec<T>,
    pub s_next: Vec<T>,
    pub z: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferMeta {
    pub capacity: usize,
    pub size: usize,
    pub cursor: usize,
}

/// Fixed-capacity FIFO ring buffer with flat row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    obs_dim: usize,
    action_dim: usize,
    skill_dim: usize,
    capacity: usize,
    cursor: usize,
    size: usize,
    s: Vec<T>,
    a: Vec<T>,
    s_next: Vec<T>,
    z: Vec<T>,
}

impl<T: Scalar> ReplayBuffer<T> {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize, skill_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            obs_dim,
            action_dim,
            skill_dim,
            capacity,
            cursor: 0,
            size: 0,
            s: vec![T::zero(); capacity * obs_dim],
            a: vec![T::zero(); capacity * action_dim],
            s_next: vec![T::zero(); capacity * obs_dim],
            z: vec![T::zero(); capacity * skill_dim],
        })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn meta(&self) -> BufferMeta {
        BufferMeta {
            capacity: self.capacity,
            size: self.size,
            cursor: self.cursor,
        }
    }

    pub fn insert(&mut self, t: &Transition<T>) -> Result<()> {
        if t.s.len() != self.obs_dim
            || t.s_next.len() != self.obs_dim
            || t.a.len() != self.action_dim
            || t.z.len() != self.skill_dim
        {
            return Err(Error::Shape("transition does not match buffer dimensions".into()));
        }
        let i = self.cursor;
        let put = |dst: &mut Vec<T>, src: &[T], w: usize| dst[i * w..(i + 1) * w].copy_from_slice(src);
        put(&mut self.s, &t.s, self.obs_dim);
        put(&mut self.a, &t.a, self.action_dim);
        put(&mut self.s_next, &t.s_next, self.obs_dim);
        put(&mut self.z, &t.z, self.skill_dim);
        self.cursor = (self.cursor + 1) % self.capacity;
        self.size = (self.size + 1).min(self.capacity);
        Ok(())
    }

    pub fn extend<'a>(&mut self, ts: impl IntoIterator<Item = &'a Transition<T>>) -> Result<()> {
        for t in ts {
            self.insert(t)?;
        }
        Ok(())
    }

    /// Stored transition at storage slot `i`.
    pub fn get(&self, i: usize) -> Option<Transition<T>> {
        if i >= self.size {
            return None;
        }
        let row = |v: &[T], w: usize| v[i * w..(i + 1) * w].to_vec();
        Some(Transition {
            s: row(&self.s, self.obs_dim),
            a: row(&self.a, self.action_dim),
            s_next: row(&self.s_next, self.obs_dim),
            z: row(&self.z, self.skill_dim),
        })
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.size == 0 {
            return Err(Error::Validation("cannot sample from an empty buffer".into()));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.size)).collect())
    }

    pub fn gather(&self, idx: &[usize]) -> Result<TransitionBatch<T>> {
        let n = idx.len();
        let take = |v: &[T], w: usize| {
            let mut out = Vec::with_capacity(n * w);
            for &i in idx {
                out.extend_from_slice(&v[i * w..(i + 1) * w]);
            }
            Array2::from_shape_vec((n, w), out).map_err(|e| Error::Shape(e.to_string()))
        };
        if idx.iter().any(|&i| i >= self.size) {
            return Err(Error::Validation("buffer index out of range".into()));
        }
        TransitionBatch::new(
            take(&self.s, self.obs_dim)?,
            take(&self.a, self.action_dim)?,
            take(&self.s_next, self.obs_dim)?,
            take(&self.z, self.skill_dim)?,
        )
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Result<TransitionBatch<T>> {
        let idx = self.sample_indices(n, rng)?;
        self.gather(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    fn tr(v: f64) -> Transition<f64> {
        Transition {
            s: vec![v, v],
            a: vec![v],
            s_next: vec![v + 1.0, v],
            z: vec![1.0],
        }
    }

    #[test]
    fn oldest_is_evicted() {
        let mut b = ReplayBuffer::new(3, 2, 1, 1).unwrap();
        for v in 0..4 {
            b.insert(&tr(v as f64)).unwrap();
        }
        assert_eq!(b.len(), 3);
        let held: Vec<f64> = (0..3).map(|i| b.get(i).unwrap().s[0]).collect();
        assert!(!held.contains(&0.0));
        assert_eq!(held, vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn sampling_is_seeded_and_with_replacement() {
        let mut b = ReplayBuffer::new(10, 2, 1, 1).unwrap();
        for v in 0..4 {
            b.insert(&tr(v as f64)).unwrap();
        }
        let i1 = b.sample_indices(64, &mut rng_from_seed(5)).unwrap();
        let i2 = b.sample_indices(64, &mut rng_from_seed(5)).unwrap();
        assert_eq!(i1, i2);
        let mut sorted = i1.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert!(sorted.len() < i1.len());
        let batch = b.sample(4, &mut rng_from_seed(6)).unwrap();
        assert_eq!(batch.len(), 4);
        for r in 0..4 {
            assert_eq!(batch.s_next[[r, 0]], batch.s[[r, 0]] + 1.0);
        }
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let b = ReplayBuffer::<f64>::new(3, 2, 1, 1).unwrap();
        assert!(b.sample(1, &mut rng_from_seed(0)).is_err());
        assert!(ReplayBuffer::<f64>::new(0, 2, 1, 1).is_err());
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let mut b = ReplayBuffer::<f64>::new(3, 3, 1, 1).unwrap();
        assert!(b.insert(&tr(0.0)).is_err());
    }

    proptest! {
        #[test]
        fn fifo_contents(cap in 1usize..20, n in 0usize..60) {
            let mut b = ReplayBuffer::new(cap, 2, 1, 1).unwrap();
            for v in 0..n {
                b.insert(&tr(v as f64)).unwrap();
                prop_assert!(b.len() <= cap);
            }
            let mut held: Vec<usize> = (0..b.len()).map(|i| b.get(i).unwrap().s[0] as usize).collect();
            held.sort_unstable();
            let want: Vec<usize> = (n.saturating_sub(cap)..n).collect();
            prop_assert_eq!(held, want);
        }
    }
}
