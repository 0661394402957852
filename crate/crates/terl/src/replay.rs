//! Fixed-capacity FIFO transition store. Each record carries the previous
//! action and a first-step flag so the action predictor's input is available
//! at sampling time without walking episode boundaries.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::TerlError;

/// One stored step. `a` and `a_prev` are normalized policy actions in
/// [-1, 1]^d; `a_prev` is all-zero exactly when `is_first` is set. `done` is
/// the bootstrap terminal flag (time-limit truncation stays false).
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: f32,
    pub s_next: Vec<f32>,
    pub done: bool,
    pub a_prev: Vec<f32>,
    pub is_first: bool,
    /// Episode/step bookkeeping; lets tests verify predecessor alignment.
    pub episode_id: u64,
    pub step_id: u32,
}

/// Column-major ring storage; oldest record is evicted first once full.
#[derive(Debug)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    size: usize,
    cursor: usize,
    s: Vec<f32>,
    a: Vec<f32>,
    r: Vec<f32>,
    s_next: Vec<f32>,
    done: Vec<bool>,
    a_prev: Vec<f32>,
    is_first: Vec<bool>,
    episode_id: Vec<u64>,
    step_id: Vec<u32>,
}

/// Sampled minibatch in matrix form, row-major `[n, dim]` buffers ready to
/// feed the networks. `done`, `is_first` are 0/1 floats.
#[derive(Debug, Clone)]
pub struct Batch {
    pub n: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub s: Vec<f32>,
    pub a: Vec<f32>,
    pub r: Vec<f32>,
    pub s_next: Vec<f32>,
    pub done: Vec<f32>,
    pub a_prev: Vec<f32>,
    pub is_first: Vec<f32>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0 && obs_dim > 0 && act_dim > 0);
        ReplayBuffer {
            obs_dim,
            act_dim,
            capacity,
            size: 0,
            cursor: 0,
            s: Vec::new(),
            a: Vec::new(),
            r: Vec::new(),
            s_next: Vec::new(),
            done: Vec::new(),
            a_prev: Vec::new(),
            is_first: Vec::new(),
            episode_id: Vec::new(),
            step_id: Vec::new(),
        }
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

    pub fn push(&mut self, t: &Transition) -> Result<(), TerlError> {
        if t.s.len() != self.obs_dim || t.s_next.len() != self.obs_dim {
            return Err(TerlError::Replay(format!(
                "observation length {} does not match buffer obs_dim {}",
                t.s.len(),
                self.obs_dim
            )));
        }
        if t.a.len() != self.act_dim || t.a_prev.len() != self.act_dim {
            return Err(TerlError::Replay(format!(
                "action length {} does not match buffer act_dim {}",
                t.a.len(),
                self.act_dim
            )));
        }
        let prev_is_zero = t.a_prev.iter().all(|&v| v == 0.0);
        if t.is_first && !prev_is_zero {
            return Err(TerlError::Replay(
                "first-step transition must carry an all-zero previous action".into(),
            ));
        }
        if t.a.iter().chain(&t.a_prev).any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(TerlError::Replay("actions must lie in [-1, 1]".into()));
        }

        let idx = self.cursor;
        if self.size < self.capacity {
            self.s.extend_from_slice(&t.s);
            self.a.extend_from_slice(&t.a);
            self.r.push(t.r);
            self.s_next.extend_from_slice(&t.s_next);
            self.done.push(t.done);
            self.a_prev.extend_from_slice(&t.a_prev);
            self.is_first.push(t.is_first);
            self.episode_id.push(t.episode_id);
            self.step_id.push(t.step_id);
            self.size += 1;
        } else {
            self.s[idx * self.obs_dim..(idx + 1) * self.obs_dim].copy_from_slice(&t.s);
            self.a[idx * self.act_dim..(idx + 1) * self.act_dim].copy_from_slice(&t.a);
            self.r[idx] = t.r;
            self.s_next[idx * self.obs_dim..(idx + 1) * self.obs_dim].copy_from_slice(&t.s_next);
            self.done[idx] = t.done;
            self.a_prev[idx * self.act_dim..(idx + 1) * self.act_dim].copy_from_slice(&t.a_prev);
            self.is_first[idx] = t.is_first;
            self.episode_id[idx] = t.episode_id;
            self.step_id[idx] = t.step_id;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    pub fn get(&self, idx: usize) -> Transition {
        assert!(idx < self.size, "replay index {idx} out of {}", self.size);
        Transition {
            s: self.s[idx * self.obs_dim..(idx + 1) * self.obs_dim].to_vec(),
            a: self.a[idx * self.act_dim..(idx + 1) * self.act_dim].to_vec(),
            r: self.r[idx],
            s_next: self.s_next[idx * self.obs_dim..(idx + 1) * self.obs_dim].to_vec(),
            done: self.done[idx],
            a_prev: self.a_prev[idx * self.act_dim..(idx + 1) * self.act_dim].to_vec(),
            is_first: self.is_first[idx],
            episode_id: self.episode_id[idx],
            step_id: self.step_id[idx],
        }
    }

    fn sample_indices(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, TerlError> {
        if self.size < batch_size {
            return Err(TerlError::Replay(format!(
                "cannot sample a batch of {batch_size} from a buffer holding {}",
                self.size
            )));
        }
        Ok((0..batch_size).map(|_| rng.gen_range(0..self.size)).collect())
    }

    /// Uniform i.i.d. sample with replacement.
    pub fn sample(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Transition>, TerlError> {
        Ok(self.sample_indices(batch_size, rng)?.into_iter().map(|i| self.get(i)).collect())
    }

    /// Uniform sample assembled directly into matrix form.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Result<Batch, TerlError> {
        let idx = self.sample_indices(batch_size, rng)?;
        let mut b = Batch {
            n: batch_size,
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            s: Vec::with_capacity(batch_size * self.obs_dim),
            a: Vec::with_capacity(batch_size * self.act_dim),
            r: Vec::with_capacity(batch_size),
            s_next: Vec::with_capacity(batch_size * self.obs_dim),
            done: Vec::with_capacity(batch_size),
            a_prev: Vec::with_capacity(batch_size * self.act_dim),
            is_first: Vec::with_capacity(batch_size),
        };
        for i in idx {
            b.s.extend_from_slice(&self.s[i * self.obs_dim..(i + 1) * self.obs_dim]);
            b.a.extend_from_slice(&self.a[i * self.act_dim..(i + 1) * self.act_dim]);
            b.r.push(self.r[i]);
            b.s_next.extend_from_slice(&self.s_next[i * self.obs_dim..(i + 1) * self.obs_dim]);
            b.done.push(if self.done[i] { 1.0 } else { 0.0 });
            b.a_prev.extend_from_slice(&self.a_prev[i * self.act_dim..(i + 1) * self.act_dim]);
            b.is_first.push(if self.is_first[i] { 1.0 } else { 0.0 });
        }
        Ok(b)
    }
}

/// Maintains the previous-action chain across one rollout stream. Steps must
/// arrive in episode order: each new state has to equal the previous step's
/// next state until an episode reset.
#[derive(Debug, Default)]
pub struct EpisodeWriter {
    prev_action: Option<Vec<f32>>,
    expected_s: Option<Vec<f32>>,
    episode_id: u64,
    step_id: u32,
    started: bool,
}

impl EpisodeWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Start a fresh episode; the next recorded step is a first step.
    pub fn begin_episode(&mut self) {
        if self.started {
            self.episode_id += 1;
        }
        self.started = true;
        self.prev_action = None;
        self.expected_s = None;
        self.step_id = 0;
    }

    /// Build the transition for one step and push it. `truncated` ends the
    /// episode chain without marking a bootstrap terminal.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &mut self,
        buffer: &mut ReplayBuffer,
        s: &[f32],
        a: &[f32],
        r: f32,
        s_next: &[f32],
        terminal: bool,
        truncated: bool,
    ) -> Result<Transition, TerlError> {
        if !self.started {
            return Err(TerlError::Replay("record before begin_episode".into()));
        }
        if let Some(expected) = &self.expected_s {
            if expected.as_slice() != s {
                return Err(TerlError::Replay(
                    "out-of-order step: state does not continue the previous transition".into(),
                ));
            }
        }
        let is_first = self.prev_action.is_none();
        let a_prev = self.prev_action.clone().unwrap_or_else(|| vec![0.0; a.len()]);
        let t = Transition {
            s: s.to_vec(),
            a: a.to_vec(),
            r,
            s_next: s_next.to_vec(),
            done: terminal,
            a_prev,
            is_first,
            episode_id: self.episode_id,
            step_id: self.step_id,
        };
        buffer.push(&t)?;
        self.step_id += 1;
        if truncated || terminal {
            self.prev_action = None;
            self.expected_s = None;
        } else {
            self.prev_action = Some(a.to_vec());
            self.expected_s = Some(s_next.to_vec());
        }
        Ok(t)
    }
}
