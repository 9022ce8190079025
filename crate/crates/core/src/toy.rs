//! Two-state, two-action, two-objective episodic MOMDP small enough to solve
//! exactly, plus a dynamics model that replays its true transition function.
//!
//! Episodes start in `s0`. From `s0`, action 0 pays `[1, 0]` and action 1
//! pays `[0, 1]`; both lead to `s1`. From `s1`, action 0 pays `[0.5, 0.2]`,
//! action 1 pays `[0.1, 0.7]`, and the episode ends.

use rand_chacha::ChaCha8Rng;

use crate::dyna_model::{DynamicsModel, Prediction};
use crate::error::{Error, Result};
use crate::gpi_agent::{AgentTransition, EnvStep, MoEnv};
use crate::mo_core::{dot, WeightVec};

const REWARDS: [[[f64; 2]; 2]; 2] = [[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.2], [0.1, 0.7]]];

#[derive(Debug, Clone, Default)]
pub struct ToyMomdp {
    state: Option<usize>,
}

impl ToyMomdp {
    pub fn new() -> Self {
        Self::default()
    }

    /// One-hot features of state `s`.
    pub fn features(s: usize) -> Vec<f64> {
        let mut f = vec![0.0; 2];
        f[s] = 1.0;
        f
    }

    pub fn state_of(features: &[f64]) -> Option<usize> {
        match features {
            [a, b] if *a == 1.0 && *b == 0.0 => Some(0),
            [a, b] if *a == 0.0 && *b == 1.0 => Some(1),
            _ => None,
        }
    }

    /// `(reward, next_state, done)`. The terminal successor is reported as `s0`.
    pub fn dynamics(&self, s: usize, a: usize) -> (Vec<f64>, usize, bool) {
        let r = REWARDS[s][a].to_vec();
        if s == 0 {
            (r, 1, false)
        } else {
            (r, 0, true)
        }
    }

    /// Vector Q of the policy that is optimal for `w`, indexed `[state][action]`.
    pub fn optimal_q(&self, w: &WeightVec, gamma: f64) -> Vec<Vec<Vec<f64>>> {
        let q1: Vec<Vec<f64>> = REWARDS[1].iter().map(|r| r.to_vec()).collect();
        let best1 = if dot(&q1[1], w.as_slice()) > dot(&q1[0], w.as_slice()) {
            1
        } else {
            0
        };
        let q0 = REWARDS[0]
            .iter()
            .map(|r| r.iter().zip(&q1[best1]).map(|(x, y)| x + gamma * y).collect())
            .collect();
        vec![q0, q1]
    }

    /// Discounted start-state values of all four deterministic policies,
    /// indexed by `2 * action_in_s0 + action_in_s1`.
    pub fn policy_values(&self, gamma: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for r0 in &REWARDS[0] {
            for r1 in &REWARDS[1] {
                out.push(r0.iter().zip(r1).map(|(x, y)| x + gamma * y).collect());
            }
        }
        out
    }
}

impl MoEnv for ToyMomdp {
    fn feature_dim(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn n_objectives(&self) -> usize {
        2
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.state = Some(0);
        Ok(Self::features(0))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let s = self.state.ok_or_else(|| Error::Input("step before reset".into()))?;
        if action > 1 {
            return Err(Error::Input(format!("action must be 0 or 1, got {action}")));
        }
        let (reward, next, done) = self.dynamics(s, action);
        self.state = if done { None } else { Some(next) };
        Ok(EnvStep {
            reward,
            next_features: Self::features(next),
            done,
            truncated: false,
        })
    }
}

/// Dynamics model whose members all return the exact toy transition.
#[derive(Debug, Clone)]
pub struct PerfectToyModel {
    members: usize,
    toy: ToyMomdp,
}

impl PerfectToyModel {
    pub fn new(members: usize) -> Self {
        Self {
            members: members.max(1),
            toy: ToyMomdp::new(),
        }
    }
}

impl DynamicsModel for PerfectToyModel {
    fn n_members(&self) -> usize {
        self.members
    }

    fn predict(&self, member: usize, features: &[f64], action: usize) -> Result<Prediction> {
        if member >= self.members {
            return Err(Error::Input(format!("no model member {member}")));
        }
        let s = ToyMomdp::state_of(features).ok_or_else(|| Error::Input(format!("not a toy state: {features:?}")))?;
        if action > 1 {
            return Err(Error::Input(format!("action must be 0 or 1, got {action}")));
        }
        let (reward, next, done) = self.toy.dynamics(s, action);
        Ok(Prediction {
            next_features: ToyMomdp::features(next),
            reward,
            done,
        })
    }

    fn train_step(&mut self, _batch: &[&AgentTransition], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.members])
    }

    fn trainable(&self) -> bool {
        false
    }
}
