//! Uniform ring-buffer experience replay.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::env::OBS_DIM;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: [f64; OBS_DIM],
    /// Log-price action as posted, inside `[ln L, ln U]`.
    pub action: f64,
    pub reward: f64,
    pub next_obs: [f64; OBS_DIM],
    pub done: bool,
}

/// A sampled minibatch in row-major arrays.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub action: Array1<f64>,
    pub reward: Array1<f64>,
    pub next_obs: Array2<f64>,
    pub done: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action.is_empty()
    }

    pub fn from_transitions(items: &[Transition]) -> Self {
        let n = items.len();
        let mut obs = Array2::zeros((n, OBS_DIM));
        let mut next_obs = Array2::zeros((n, OBS_DIM));
        for (i, tr) in items.iter().enumerate() {
            for j in 0..OBS_DIM {
                obs[[i, j]] = tr.obs[j];
                next_obs[[i, j]] = tr.next_obs[j];
            }
        }
        Self {
            obs,
            action: items.iter().map(|t| t.action).collect(),
            reward: items.iter().map(|t| t.reward).collect(),
            next_obs,
            done: items.iter().map(|t| if t.done { 1.0 } else { 0.0 }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    cursor: usize,
    #[serde(with = "codec::vec_f64")]
    obs: Vec<f64>,
    #[serde(with = "codec::vec_f64")]
    action: Vec<f64>,
    #[serde(with = "codec::vec_f64")]
    reward: Vec<f64>,
    #[serde(with = "codec::vec_f64")]
    next_obs: Vec<f64>,
    done: Vec<bool>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            cursor: 0,
            obs: Vec::new(),
            action: Vec::new(),
            reward: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.action.len()
    }

    pub fn is_empty(&self) -> bool {
        self.action.is_empty()
    }

    pub fn push(&mut self, tr: Transition) {
        if self.len() < self.capacity {
            self.obs.extend_from_slice(&tr.obs);
            self.next_obs.extend_from_slice(&tr.next_obs);
            self.action.push(tr.action);
            self.reward.push(tr.reward);
            self.done.push(tr.done);
        } else {
            let i = self.cursor;
            self.obs[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(&tr.obs);
            self.next_obs[i * OBS_DIM..(i + 1) * OBS_DIM].copy_from_slice(&tr.next_obs);
            self.action[i] = tr.action;
            self.reward[i] = tr.reward;
            self.done[i] = tr.done;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Option<Transition> {
        if i >= self.len() {
            return None;
        }
        let mut obs = [0.0; OBS_DIM];
        let mut next_obs = [0.0; OBS_DIM];
        obs.copy_from_slice(&self.obs[i * OBS_DIM..(i + 1) * OBS_DIM]);
        next_obs.copy_from_slice(&self.next_obs[i * OBS_DIM..(i + 1) * OBS_DIM]);
        Some(Transition {
            obs,
            action: self.action[i],
            reward: self.reward[i],
            next_obs,
            done: self.done[i],
        })
    }

    /// Slot indices drawn uniformly with replacement over filled slots.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.is_empty() || self.len() < batch_size {
            return Err(Error::Protocol(format!(
                "replay buffer holds {} transitions, batch needs {}",
                self.len(),
                batch_size
            )));
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.len())).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        let mut obs = Array2::zeros((batch_size, OBS_DIM));
        let mut next_obs = Array2::zeros((batch_size, OBS_DIM));
        let mut action = Array1::zeros(batch_size);
        let mut reward = Array1::zeros(batch_size);
        let mut done = Array1::zeros(batch_size);
        for (row, &i) in idx.iter().enumerate() {
            for j in 0..OBS_DIM {
                obs[[row, j]] = self.obs[i * OBS_DIM + j];
                next_obs[[row, j]] = self.next_obs[i * OBS_DIM + j];
            }
            action[row] = self.action[i];
            reward[row] = self.reward[i];
            done[row] = if self.done[i] { 1.0 } else { 0.0 };
        }
        Ok(Batch {
            obs,
            action,
            reward,
            next_obs,
            done,
        })
    }
}
