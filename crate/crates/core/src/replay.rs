//! Fixed-capacity FIFO transition store with uniform sampling.
//!
//! Observations are kept as the raw bytes the environment produced and
//! only converted to `[0, 1]` reals when a [`Batch`] is assembled. Storage
//! grows with the fill count up to `capacity`, then the oldest slot is
//! overwritten.

use rand::Rng;

use crate::diffcompute::checkpoint::Container;
use crate::diffcompute::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 80_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<u8>,
    pub action: Vec<f32>,
    /// Task reward as returned by the environment.
    pub reward: f32,
    pub next_obs: Vec<u8>,
    pub done: bool,
}

/// Borrowed view of one stored transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionRef<'a> {
    pub obs: &'a [u8],
    pub action: &'a [f32],
    pub reward: f32,
    pub next_obs: &'a [u8],
    pub done: bool,
}

/// Columnar training batch.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[n, C, H, W]`, scaled to `[0, 1]`.
    pub obs: Tensor<T>,
    /// `[n, action_dim]`.
    pub actions: Tensor<T>,
    pub rewards: Vec<T>,
    pub next_obs: Tensor<T>,
    /// 1 for terminal transitions, else 0.
    pub dones: Vec<T>,
    /// Buffer slots the rows were drawn from.
    pub indices: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_shape: [usize; 3],
    action_dim: usize,
    obs: Vec<u8>,
    next_obs: Vec<u8>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    dones: Vec<bool>,
    write: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_shape: [usize; 3], action_dim: usize) -> Result<Self> {
        if capacity == 0 || action_dim == 0 || obs_shape.contains(&0) {
            return Err(Error::Config(format!(
                "replay buffer needs positive capacity/shape (capacity {capacity}, obs {obs_shape:?}, action {action_dim})"
            )));
        }
        Ok(ReplayBuffer {
            capacity,
            obs_shape,
            action_dim,
            obs: Vec::new(),
            next_obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            write: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == self.capacity
    }

    pub fn obs_shape(&self) -> [usize; 3] {
        self.obs_shape
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn obs_len(&self) -> usize {
        self.obs_shape.iter().product()
    }

    /// Bytes one stored transition occupies.
    pub fn transition_bytes(&self) -> usize {
        2 * self.obs_len() + 4 * self.action_dim + 4 + 1
    }

    /// Upper bound on storage once full: `capacity * transition_bytes`.
    pub fn max_footprint_bytes(&self) -> usize {
        self.capacity * self.transition_bytes()
    }

    /// Bytes currently held in the column buffers.
    pub fn footprint_bytes(&self) -> usize {
        self.obs.len() + self.next_obs.len() + 4 * self.actions.len() + 4 * self.rewards.len() + self.dones.len()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        let n = self.obs_len();
        if t.obs.len() != n || t.next_obs.len() != n || t.action.len() != self.action_dim {
            return Err(Error::Config(format!(
                "transition shape mismatch: obs {} / next {} (want {n}), action {} (want {})",
                t.obs.len(),
                t.next_obs.len(),
                t.action.len(),
                self.action_dim
            )));
        }
        if self.len < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.dones.push(t.done);
            self.len += 1;
        } else {
            let i = self.write;
            self.obs[i * n..(i + 1) * n].copy_from_slice(&t.obs);
            self.next_obs[i * n..(i + 1) * n].copy_from_slice(&t.next_obs);
            let a = self.action_dim;
            self.actions[i * a..(i + 1) * a].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.dones[i] = t.done;
        }
        self.write = (self.write + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Option<TransitionRef<'_>> {
        if i >= self.len {
            return None;
        }
        let n = self.obs_len();
        let a = self.action_dim;
        Some(TransitionRef {
            obs: &self.obs[i * n..(i + 1) * n],
            action: &self.actions[i * a..(i + 1) * a],
            reward: self.rewards[i],
            next_obs: &self.next_obs[i * n..(i + 1) * n],
            done: self.dones[i],
        })
    }

    /// Slots in insertion order, oldest first.
    pub fn chronological(&self) -> impl Iterator<Item = TransitionRef<'_>> {
        let start = if self.is_full() { self.write } else { 0 };
        (0..self.len).map(move |k| self.get((start + k) % self.len).expect("slot filled"))
    }

    /// `n` slot indices drawn uniformly with replacement from the filled region.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.len == 0 {
            return Err(Error::Usage("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.len)).collect())
    }

    pub fn sample<T: Scalar, R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch<T>> {
        let indices = self.sample_indices(n, rng)?;
        self.gather(&indices)
    }

    /// Assembles a batch from explicit slot indices.
    pub fn gather<T: Scalar>(&self, indices: &[usize]) -> Result<Batch<T>> {
        if indices.is_empty() {
            return Err(Error::Usage("empty batch requested".into()));
        }
        let n = self.obs_len();
        let a = self.action_dim;
        let lut: Vec<T> = (0..=255u8).map(|b| T::of(f64::from(b) / 255.0)).collect();
        let mut obs = Vec::with_capacity(indices.len() * n);
        let mut next_obs = Vec::with_capacity(indices.len() * n);
        let mut actions = Vec::with_capacity(indices.len() * a);
        let mut rewards = Vec::with_capacity(indices.len());
        let mut dones = Vec::with_capacity(indices.len());
        for &i in indices {
            let t = self
                .get(i)
                .ok_or_else(|| Error::Usage(format!("slot {i} is beyond the fill count {}", self.len)))?;
            obs.extend(t.obs.iter().map(|&b| lut[usize::from(b)]));
            next_obs.extend(t.next_obs.iter().map(|&b| lut[usize::from(b)]));
            actions.extend(t.action.iter().map(|&v| T::of(f64::from(v))));
            rewards.push(T::of(f64::from(t.reward)));
            dones.push(if t.done { T::one() } else { T::zero() });
        }
        let [c, h, w] = self.obs_shape;
        let b = indices.len();
        Ok(Batch {
            obs: Tensor::new(vec![b, c, h, w], obs)?,
            actions: Tensor::new(vec![b, a], actions)?,
            rewards,
            next_obs: Tensor::new(vec![b, c, h, w], next_obs)?,
            dones,
            indices: indices.to_vec(),
        })
    }

    /// Stores the buffer as blobs of a checkpoint container.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("kind", "replay");
        c.set_meta("capacity", self.capacity.to_string());
        c.set_meta("obs_shape", format!("{}x{}x{}", self.obs_shape[0], self.obs_shape[1], self.obs_shape[2]));
        c.set_meta("action_dim", self.action_dim.to_string());
        c.set_meta("len", self.len.to_string());
        c.set_meta("write", self.write.to_string());
        c.blobs.insert("obs".into(), self.obs.clone());
        c.blobs.insert("next_obs".into(), self.next_obs.clone());
        c.blobs.insert("actions".into(), self.actions.iter().flat_map(|v| v.to_le_bytes()).collect());
        c.blobs.insert("rewards".into(), self.rewards.iter().flat_map(|v| v.to_le_bytes()).collect());
        c.blobs.insert("dones".into(), self.dones.iter().map(|&d| u8::from(d)).collect());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = |k: &str| -> Result<usize> {
            c.meta(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("replay snapshot lacks '{k}'")))
        };
        let shape: Vec<usize> = c
            .meta("obs_shape")
            .map(|s| s.split('x').filter_map(|d| d.parse().ok()).collect())
            .unwrap_or_default();
        let obs_shape: [usize; 3] = shape
            .try_into()
            .map_err(|_| Error::Format("replay snapshot has a bad obs_shape".into()))?;
        let mut buf = ReplayBuffer::new(meta("capacity")?, obs_shape, meta("action_dim")?)?;
        let len = meta("len")?;
        let floats = |name: &str| -> Result<Vec<f32>> {
            Ok(c.blob(name)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect())
        };
        buf.obs = c.blob("obs")?.to_vec();
        buf.next_obs = c.blob("next_obs")?.to_vec();
        buf.actions = floats("actions")?;
        buf.rewards = floats("rewards")?;
        buf.dones = c.blob("dones")?.iter().map(|&b| b != 0).collect();
        buf.len = len;
        buf.write = meta("write")?;
        let n = buf.obs_len();
        if len > buf.capacity
            || buf.write >= buf.capacity
            || buf.obs.len() != len * n
            || buf.next_obs.len() != len * n
            || buf.actions.len() != len * buf.action_dim
            || buf.rewards.len() != len
            || buf.dones.len() != len
        {
            return Err(Error::Format("replay snapshot columns are inconsistent".into()));
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SHAPE: [usize; 3] = [1, 2, 2];

    /// Transition tagged with a sequence number in every field.
    fn tagged(seq: u32) -> Transition {
        let b = (seq % 251) as u8;
        Transition {
            obs: vec![b; 4],
            action: vec![seq as f32],
            reward: seq as f32,
            next_obs: vec![b.wrapping_add(1); 4],
            done: seq.is_multiple_of(2),
        }
    }

    #[test]
    fn overflow_keeps_the_newest_items() {
        let mut buf = ReplayBuffer::new(3, SHAPE, 1).unwrap();
        for s in 1..=4 {
            buf.push(tagged(s)).unwrap();
        }
        let kept: Vec<f32> = buf.chronological().map(|t| t.reward).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn single_item_is_always_sampled() {
        let mut buf = ReplayBuffer::new(10, SHAPE, 1).unwrap();
        buf.push(tagged(7)).unwrap();
        let batch: Batch<f32> = buf.sample(16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(batch.rewards.iter().all(|&r| r == 7.0));
        assert!(batch.obs.data().iter().all(|&v| v == 7.0 / 255.0));
    }

    #[test]
    fn fill_count_saturates_at_capacity() {
        let mut buf = ReplayBuffer::new(DEFAULT_CAPACITY, [1, 1, 1], 1).unwrap();
        for s in 0..(DEFAULT_CAPACITY as u32 + 123) {
            buf.push(Transition { obs: vec![0], action: vec![0.0], reward: s as f32, next_obs: vec![0], done: false })
                .unwrap();
        }
        assert_eq!(buf.len(), DEFAULT_CAPACITY);
        assert_eq!(buf.footprint_bytes(), buf.max_footprint_bytes());
    }

    #[test]
    fn sampling_from_empty_buffer_is_a_usage_error() {
        let buf = ReplayBuffer::new(4, SHAPE, 1).unwrap();
        let r: Result<Batch<f32>> = buf.sample(1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn same_seed_gives_same_batch() {
        let mut buf = ReplayBuffer::new(50, SHAPE, 1).unwrap();
        for s in 0..50 {
            buf.push(tagged(s)).unwrap();
        }
        let a: Batch<f32> = buf.sample(128, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b: Batch<f32> = buf.sample(128, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.len(), 128);
        assert_eq!(a.obs.shape(), &[128, 1, 2, 2]);
    }

    #[test]
    fn mis_shaped_transition_is_rejected() {
        let mut buf = ReplayBuffer::new(2, SHAPE, 2).unwrap();
        assert!(matches!(buf.push(tagged(1)), Err(Error::Config(_))));
    }

    #[test]
    fn stored_bytes_are_exact() {
        let mut buf = ReplayBuffer::new(2, SHAPE, 1).unwrap();
        let t = Transition { obs: vec![0, 17, 254, 255], action: vec![0.25], reward: -1.5, next_obs: vec![9, 8, 7, 6], done: true };
        buf.push(t.clone()).unwrap();
        let got = buf.get(0).unwrap();
        assert_eq!(got.obs, t.obs.as_slice());
        assert_eq!(got.next_obs, t.next_obs.as_slice());
        assert_eq!(got.reward, -1.5);
        assert!(got.done);
    }

    #[test]
    fn snapshot_round_trips_through_container_bytes() {
        let mut buf = ReplayBuffer::new(3, SHAPE, 1).unwrap();
        for s in 0..5 {
            buf.push(tagged(s)).unwrap();
        }
        let mut bytes = Vec::new();
        buf.to_container().write_to(&mut bytes).unwrap();
        let back = ReplayBuffer::from_container(&Container::read_from(&mut bytes.as_slice()).unwrap()).unwrap();
        let a: Vec<f32> = buf.chronological().map(|t| t.reward).collect();
        let b: Vec<f32> = back.chronological().map(|t| t.reward).collect();
        assert_eq!(a, b);
        back.clone().push(tagged(9)).unwrap();
    }

    #[test]
    fn sampling_is_uniform_over_filled_slots() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut buf = ReplayBuffer::new(100, SHAPE, 1).unwrap();
        for s in 0..100 {
            buf.push(tagged(s)).unwrap();
        }
        let draws = 100_000;
        let mut counts = [0usize; 100];
        for i in buf.sample_indices(draws, &mut ChaCha8Rng::seed_from_u64(11)).unwrap() {
            counts[i] += 1;
        }
        let expected = draws as f64 / 100.0;
        let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new(99.0).unwrap().inverse_cdf(0.999);
        assert!(stat < critical, "chi2 {stat} >= {critical}");
    }

    proptest! {
        #[test]
        fn fifo_order_and_filled_only_sampling(capacity in 1usize..20, pushes in 0u32..60, seed: u64) {
            let mut buf = ReplayBuffer::new(capacity, SHAPE, 1).unwrap();
            for s in 0..pushes {
                buf.push(tagged(s)).unwrap();
            }
            let kept: Vec<f32> = buf.chronological().map(|t| t.reward).collect();
            let first = pushes.saturating_sub(capacity as u32);
            let want: Vec<f32> = (first..pushes).map(|s| s as f32).collect();
            prop_assert_eq!(kept, want);
            if pushes > 0 {
                let idx = buf.sample_indices(64, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                prop_assert!(idx.iter().all(|&i| i < buf.len()));
            }
        }
    }
}
