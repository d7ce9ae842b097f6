//! Replay buffers and the targets extracted from finished episodes.
//!
//! Every step `t` of an episode yields one Q datapoint whose target is the
//! (discounted) return from `t` to the end, and one constraint datapoint whose
//! targets are the worst constraint values reached over the rest of the
//! episode. Both kinds share [`Datapoint`].

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::Trajectory;

/// One training example: the (state, time index, control) input and one
/// target per network head (a single return for Q, one value per constraint
/// for the oracle).
#[derive(Debug, Clone, PartialEq)]
pub struct Datapoint {
    pub state: Vec<f64>,
    pub t: usize,
    pub control: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Which future constraint values the oracle target at step `t` covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleAlignment {
    /// States `x_{t+1} .. x_{t_f}`: the states the control at `t` can affect.
    #[default]
    Future,
    /// States `x_t .. x_{t_f}`.
    Inclusive,
}

/// Monte Carlo returns `q_t = Σ_{k>=t} γ^{k-t} r_k` for every step.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut q = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        q[t] = acc;
    }
    q
}

pub fn extract_q_targets(traj: &Trajectory, gamma: f64) -> Vec<Datapoint> {
    discounted_returns(&traj.rewards, gamma)
        .into_iter()
        .enumerate()
        .map(|(t, q)| Datapoint {
            state: traj.states[t].clone(),
            t,
            control: traj.controls[t].clone(),
            targets: vec![q],
        })
        .collect()
}

/// Per-constraint running maxima of the remaining trajectory, built backward
/// in one pass.
pub fn extract_oracle_targets(traj: &Trajectory, alignment: OracleAlignment) -> Vec<Datapoint> {
    let horizon = traj.controls.len();
    let n_g = traj.constraint_values.first().map_or(0, Vec::len);
    // suffix[t] = max over t' in t..=horizon of g(x_t').
    let mut suffix = vec![vec![f64::NEG_INFINITY; n_g]; horizon + 1];
    suffix[horizon].clone_from(&traj.constraint_values[horizon]);
    for t in (0..horizon).rev() {
        for j in 0..n_g {
            suffix[t][j] = traj.constraint_values[t][j].max(suffix[t + 1][j]);
        }
    }
    (0..horizon)
        .map(|t| {
            let from = match alignment {
                OracleAlignment::Future => t + 1,
                OracleAlignment::Inclusive => t,
            };
            Datapoint {
                state: traj.states[t].clone(),
                t,
                control: traj.controls[t].clone(),
                targets: suffix[from].clone(),
            }
        })
        .collect()
}

/// Fixed-capacity FIFO: pushing into a full buffer evicts the oldest item.
#[derive(Debug, Clone, PartialEq)]
pub struct RingBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> RingBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring buffer capacity must be positive");
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

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = T>) {
        for item in items {
            self.push(item);
        }
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    /// `k` indices drawn uniformly: without replacement when the buffer holds
    /// at least `k` items, with replacement otherwise.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        let n = self.items.len();
        if n == 0 {
            return Err(Error::EmptyBuffer);
        }
        Ok(if n >= k {
            index::sample(rng, n, k).into_vec()
        } else {
            (0..k).map(|_| rng.random_range(0..n)).collect()
        })
    }

    pub fn sample_minibatch<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&T>> {
        Ok(self.sample_indices(k, rng)?.into_iter().map(|i| &self.items[i]).collect())
    }
}

const MAGIC: &[u8; 8] = b"OQLBUF01";

impl RingBuffer<Datapoint> {
    /// Little-endian binary dump: magic, `[capacity, len, n_x, n_u, n_targets]`
    /// as u64, then per item `t` as u64 and the state, control and targets as
    /// f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let first = self.items.front();
        let dims = first.map_or([0, 0, 0], |d| [d.state.len(), d.control.len(), d.targets.len()]);
        let mut out = Vec::with_capacity(48 + self.items.len() * 8 * (1 + dims.iter().sum::<usize>()));
        out.extend_from_slice(MAGIC);
        for v in [self.capacity, self.items.len(), dims[0], dims[1], dims[2]] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for d in &self.items {
            if [d.state.len(), d.control.len(), d.targets.len()] != dims {
                return Err(Error::InvalidArgument("buffer holds datapoints of mixed dimensions".into()));
            }
            out.extend_from_slice(&(d.t as u64).to_le_bytes());
            for v in d.state.iter().chain(&d.control).chain(&d.targets) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 48 || &bytes[..8] != MAGIC {
            return Err(Error::format(path, "not a replay buffer dump"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap()) as usize;
        let (capacity, len, n_x, n_u, n_t) = (word(8), word(16), word(24), word(32), word(40));
        let row = 8 * (1 + n_x + n_u + n_t);
        if capacity == 0 || len > capacity || bytes.len() != 48 + len * row {
            return Err(Error::format(path, "buffer header does not match its payload"));
        }
        let mut buf = RingBuffer::new(capacity);
        for r in 0..len {
            let base = 48 + r * row;
            let t = word(base);
            let vals: Vec<f64> = (0..n_x + n_u + n_t)
                .map(|k| f64::from_le_bytes(bytes[base + 8 + 8 * k..base + 16 + 8 * k].try_into().unwrap()))
                .collect();
            buf.push(Datapoint {
                state: vals[..n_x].to_vec(),
                t,
                control: vals[n_x..n_x + n_u].to_vec(),
                targets: vals[n_x + n_u..].to_vec(),
            });
        }
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::UncertainParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn traj(g: &[[f64; 2]], rewards: &[f64]) -> Trajectory {
        let h = rewards.len();
        Trajectory {
            states: (0..=h).map(|t| vec![t as f64]).collect(),
            controls: (0..h).map(|t| vec![10.0 + t as f64]).collect(),
            rewards: rewards.to_vec(),
            constraint_values: g.iter().map(|r| r.to_vec()).collect(),
            params: UncertainParams::default(),
        }
    }

    #[test]
    fn returns_undiscounted() {
        assert_eq!(discounted_returns(&[1.0, 2.0, 3.0], 1.0), vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn returns_discounted() {
        let q = discounted_returns(&[1.0, 2.0, 3.0], 0.5);
        assert_eq!(q, vec![1.0 + 0.5 * 2.0 + 0.25 * 3.0, 2.0 + 0.5 * 3.0, 3.0]);
    }

    #[test]
    fn terminal_reward_propagates_back() {
        let tr = traj(&[[0.0; 2]; 4], &[0.0, 0.0, 0.7]);
        let q: Vec<f64> = extract_q_targets(&tr, 1.0).iter().map(|d| d.targets[0]).collect();
        assert_eq!(q, vec![0.7; 3]);
    }

    #[test]
    fn oracle_targets_future_max() {
        let g = [[-5.0, 1.0], [3.0, -1.0], [-2.0, -4.0], [-1.0, -3.0]];
        let tr = traj(&g, &[0.0; 3]);
        let d = extract_oracle_targets(&tr, OracleAlignment::Future);
        assert_eq!(d.len(), 3);
        assert_eq!(d[0].targets, vec![3.0, -1.0]);
        assert_eq!(d[1].targets, vec![-1.0, -3.0]);
        assert_eq!(d[2].targets, vec![-1.0, -3.0]);
        assert_eq!(d[1].state, vec![1.0]);
        assert_eq!(d[1].control, vec![11.0]);
    }

    #[test]
    fn oracle_targets_inclusive_max() {
        let g = [[-5.0, 1.0], [3.0, -1.0], [-2.0, -4.0], [-1.0, -3.0]];
        let d = extract_oracle_targets(&traj(&g, &[0.0; 3]), OracleAlignment::Inclusive);
        assert_eq!(d[0].targets, vec![3.0, 1.0]);
        assert_eq!(d[2].targets, vec![-1.0, -3.0]);
    }

    #[test]
    fn fifo_eviction() {
        let mut b = RingBuffer::new(3);
        b.extend(0..5);
        assert_eq!(b.iter().copied().collect::<Vec<_>>(), vec![2, 3, 4]);
        assert_eq!(b.len(), 3);
    }

    #[test]
    fn minibatch_without_replacement_when_full_enough() {
        let mut b = RingBuffer::new(10);
        b.extend(0..10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut idx = b.sample_indices(10, &mut rng).unwrap();
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn minibatch_with_replacement_when_small() {
        let mut b = RingBuffer::new(10);
        b.extend(0..3);
        let idx = b.sample_indices(50, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(idx.len(), 50);
        assert!(idx.iter().all(|i| *i < 3));
    }

    #[test]
    fn empty_buffer_cannot_sample() {
        let b: RingBuffer<u8> = RingBuffer::new(2);
        assert!(matches!(b.sample_indices(1, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.buf");
        let mut b = RingBuffer::new(5);
        let g = [[-5.0, 1.0], [3.0, -1.0], [-2.0, -4.0], [-1.0, -3.0]];
        b.extend(extract_oracle_targets(&traj(&g, &[0.0; 3]), OracleAlignment::Future));
        b.save(&path).unwrap();
        assert_eq!(RingBuffer::load(&path).unwrap(), b);

        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(RingBuffer::load(&path), Err(Error::Format { .. })));
    }
}
