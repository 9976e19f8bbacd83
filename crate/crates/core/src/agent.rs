//! Sparse linear Sarsa(lambda) with replacing eligibility traces.
//!
//! Weights live in a slot table: the first time a feature id appears in a
//! learning update it is assigned the next free slot, and every action owns
//! one weight per slot. Action values are plain sums of the weights of the
//! active features, so unseen features contribute exactly zero.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::ActiveFeatureSet;
use crate::screen::read_exact_at;
use crate::{Error, Result};

/// Reserved id for the always-active bias feature. Real features are grid
/// ids far below this value.
pub const BIAS_FEATURE_ID: u64 = u64::MAX;

/// Default trace-pruning threshold.
pub const DEFAULT_TRACE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Step size, divided by the active-feature count of each update.
    pub alpha: f64,
    /// Discount factor.
    pub gamma: f64,
    /// Trace decay.
    pub lambda: f64,
    /// Exploration rate of the epsilon-greedy policy.
    pub epsilon: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            alpha: 0.5,
            gamma: 0.99,
            lambda: 0.9,
            epsilon: 0.01,
        }
    }
}

/// One Sarsa step: (s, a, r, s', a') plus the terminal flag for s'.
pub struct Transition<'a> {
    pub state: &'a ActiveFeatureSet,
    pub action: usize,
    pub reward: f64,
    pub next_state: &'a ActiveFeatureSet,
    pub next_action: usize,
    pub terminal: bool,
}

pub struct LinearQ {
    hyper: Hyperparams,
    action_count: usize,
    bias_enabled: bool,
    trace_floor: f64,
    slot_map: HashMap<u64, u32>,
    slot_ids: Vec<u64>,
    /// weights[action][slot]
    weights: Vec<Vec<f64>>,
    /// traces[action]: slot -> eligibility
    traces: Vec<HashMap<u32, f64>>,
}

impl LinearQ {
    pub fn new(action_count: usize, hyper: Hyperparams, bias: bool, trace_floor: f64) -> Self {
        assert!(action_count >= 1, "need at least one action");
        assert!(trace_floor > 0.0, "trace floor must be positive");
        let mut agent = LinearQ {
            hyper,
            action_count,
            bias_enabled: bias,
            trace_floor,
            slot_map: HashMap::new(),
            slot_ids: Vec::new(),
            weights: vec![Vec::new(); action_count],
            traces: vec![HashMap::new(); action_count],
        };
        if bias {
            agent.insert_slot(BIAS_FEATURE_ID);
        }
        agent
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn hyper(&self) -> Hyperparams {
        self.hyper
    }

    /// Override the exploration rate (evaluation typically lowers it).
    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.hyper.epsilon = epsilon;
    }

    pub fn bias_enabled(&self) -> bool {
        self.bias_enabled
    }

    /// Number of feature ids that have been assigned weight slots.
    pub fn slot_count(&self) -> usize {
        self.slot_ids.len()
    }

    fn insert_slot(&mut self, id: u64) -> u32 {
        debug_assert!(!self.slot_map.contains_key(&id));
        let slot = self.slot_ids.len() as u32;
        self.slot_map.insert(id, slot);
        self.slot_ids.push(id);
        for w in &mut self.weights {
            w.push(0.0);
        }
        slot
    }

    fn slot_of_inserting(&mut self, id: u64) -> u32 {
        match self.slot_map.get(&id) {
            Some(&slot) => slot,
            None => self.insert_slot(id),
        }
    }

    /// Q(s, a): sum of the weights of the active features (plus bias).
    /// Features that never entered a learning update contribute zero, and
    /// evaluation never assigns slots.
    pub fn q_value(&self, features: &ActiveFeatureSet, action: usize) -> f64 {
        assert!(action < self.action_count, "action out of range");
        let w = &self.weights[action];
        let mut q = if self.bias_enabled { w[0] } else { 0.0 };
        for id in features.as_slice() {
            if let Some(&slot) = self.slot_map.get(id) {
                q += w[slot as usize];
            }
        }
        q
    }

    /// Epsilon-greedy action choice; greedy ties break uniformly.
    pub fn select_action(&self, features: &ActiveFeatureSet, rng: &mut impl Rng) -> usize {
        let draw: f64 = rng.gen();
        if draw < self.hyper.epsilon {
            return rng.gen_range(0..self.action_count);
        }
        let mut best = self.q_value(features, 0);
        let mut ties = vec![0usize];
        for action in 1..self.action_count {
            let q = self.q_value(features, action);
            if q > best {
                best = q;
                ties.clear();
                ties.push(action);
            } else if q == best {
                ties.push(action);
            }
        }
        if ties.len() == 1 {
            ties[0]
        } else {
            ties[rng.gen_range(0..ties.len())]
        }
    }

    /// One Sarsa(lambda) step with replacing traces:
    /// decay-and-prune all traces, pin the traces of the active features of
    /// (s, a) to one, then move every traced weight along the TD error. The
    /// step size is `alpha` divided by the number of active features of the
    /// updated pair (bias included).
    pub fn sarsa_update(&mut self, t: &Transition<'_>) {
        assert!(t.action < self.action_count, "action out of range");
        assert!(t.next_action < self.action_count, "action out of range");
        debug_assert!(t.reward.is_finite());

        let decay = self.hyper.gamma * self.hyper.lambda;
        let floor = self.trace_floor;
        for per_action in &mut self.traces {
            per_action.retain(|_, e| {
                *e *= decay;
                *e >= floor
            });
        }

        let mut active = Vec::with_capacity(t.state.len() + 1);
        if self.bias_enabled {
            active.push(0u32);
        }
        for &id in t.state.as_slice() {
            active.push(self.slot_of_inserting(id));
        }
        for &slot in &active {
            self.traces[t.action].insert(slot, 1.0);
        }

        let q_next = if t.terminal {
            0.0
        } else {
            self.q_value(t.next_state, t.next_action)
        };
        let delta = t.reward + self.hyper.gamma * q_next - self.q_value(t.state, t.action);

        let step = self.hyper.alpha / active.len().max(1) as f64 * delta;
        for (action, per_action) in self.traces.iter().enumerate() {
            let w = &mut self.weights[action];
            for (&slot, &e) in per_action.iter() {
                w[slot as usize] += step * e;
            }
        }
    }

    /// Drop all eligibility traces (call between episodes).
    pub fn reset_traces(&mut self) {
        for per_action in &mut self.traces {
            per_action.clear();
        }
    }

    #[cfg(test)]
    fn traced_entries(&self) -> usize {
        self.traces.iter().map(|m| m.len()).sum()
    }
}

const WEIGHTS_MAGIC: &[u8; 8] = b"SAWTv001";
const WEIGHTS_FILE: &str = "weights snapshot";

impl LinearQ {
    /// Serialize hyperparameters, the slot table and all weights.
    pub fn write_snapshot(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(WEIGHTS_MAGIC)?;
        w.write_all(&(self.action_count as u32).to_le_bytes())?;
        w.write_all(&(self.slot_ids.len() as u64).to_le_bytes())?;
        for v in [
            self.hyper.alpha,
            self.hyper.gamma,
            self.hyper.lambda,
            self.hyper.epsilon,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for &id in &self.slot_ids {
            w.write_all(&id.to_le_bytes())?;
        }
        for action_weights in &self.weights {
            for &weight in action_weights {
                w.write_all(&weight.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Read a snapshot written by [`write_snapshot`]. The loaded agent has
    /// empty traces; value queries are bit-identical to the saved agent's.
    pub fn read_snapshot(r: &mut impl Read) -> Result<Self> {
        let mut offset = 0u64;
        let mut magic = [0u8; 8];
        read_exact_at(r, &mut magic, offset, WEIGHTS_FILE)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(Error::FileMagic {
                what: WEIGHTS_FILE,
                got: magic.to_vec(),
            });
        }
        offset += 8;

        let mut buf4 = [0u8; 4];
        read_exact_at(r, &mut buf4, offset, WEIGHTS_FILE)?;
        let action_count = u32::from_le_bytes(buf4) as usize;
        if action_count == 0 {
            return Err(Error::FileField {
                what: WEIGHTS_FILE,
                offset,
                detail: "zero actions".to_string(),
            });
        }
        offset += 4;

        let mut buf8 = [0u8; 8];
        read_exact_at(r, &mut buf8, offset, WEIGHTS_FILE)?;
        let slot_count = u64::from_le_bytes(buf8) as usize;
        offset += 8;

        let mut hyper = [0f64; 4];
        for v in hyper.iter_mut() {
            read_exact_at(r, &mut buf8, offset, WEIGHTS_FILE)?;
            *v = f64::from_le_bytes(buf8);
            if !v.is_finite() {
                return Err(Error::FileField {
                    what: WEIGHTS_FILE,
                    offset,
                    detail: "non-finite hyperparameter".to_string(),
                });
            }
            offset += 8;
        }

        let mut slot_ids = Vec::with_capacity(slot_count);
        let mut slot_map = HashMap::with_capacity(slot_count);
        for slot in 0..slot_count {
            read_exact_at(r, &mut buf8, offset, WEIGHTS_FILE)?;
            let id = u64::from_le_bytes(buf8);
            if slot_map.insert(id, slot as u32).is_some() {
                return Err(Error::FileField {
                    what: WEIGHTS_FILE,
                    offset,
                    detail: format!("duplicate feature id {}", id),
                });
            }
            slot_ids.push(id);
            offset += 8;
        }

        let mut weights = Vec::with_capacity(action_count);
        for _ in 0..action_count {
            let mut row = Vec::with_capacity(slot_count);
            for _ in 0..slot_count {
                read_exact_at(r, &mut buf8, offset, WEIGHTS_FILE)?;
                let weight = f64::from_le_bytes(buf8);
                if !weight.is_finite() {
                    return Err(Error::FileField {
                        what: WEIGHTS_FILE,
                        offset,
                        detail: "non-finite weight".to_string(),
                    });
                }
                row.push(weight);
                offset += 8;
            }
            weights.push(row);
        }

        let bias_enabled = slot_ids.first() == Some(&BIAS_FEATURE_ID);
        Ok(LinearQ {
            hyper: Hyperparams {
                alpha: hyper[0],
                gamma: hyper[1],
                lambda: hyper[2],
                epsilon: hyper[3],
            },
            action_count,
            bias_enabled,
            trace_floor: DEFAULT_TRACE_FLOOR,
            slot_map,
            slot_ids,
            weights,
            traces: vec![HashMap::new(); action_count],
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_snapshot(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_snapshot(&mut r)
    }
}
