use alloc::vec;

use super::nn::{Grads, Matrix, Mlp, Trace};
use super::state::AllocState;
use crate::rng::SimRng;

/// Q-network over `[action fractions (N), state features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    pub net: Mlp,
}

impl Critic {
    pub fn new(users: usize, hidden: &[usize], rng: &mut SimRng) -> Self {
        let mut sizes = vec![users + AllocState::feature_len(users)];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            net: Mlp::new(&sizes, rng),
        }
    }

    pub fn q(&self, fractions: &[f64], features: &[f64]) -> f64 {
        let f = Matrix::from_vec(1, fractions.len(), fractions.to_vec());
        let s = Matrix::from_vec(1, features.len(), features.to_vec());
        self.trace(&f, &s).output.data[0]
    }

    /// Batched forward pass, one sample per row.
    pub fn trace(&self, fractions: &Matrix, features: &Matrix) -> Trace {
        let proj = self.net.project_tail(features);
        self.net.forward_split(fractions, Some(&proj))
    }

    /// Accumulates `Σ_b w_b · ∂Q_b/∂θ` for per-sample weights `w` (a column).
    pub fn backward(&self, trace: &Trace, features: &Matrix, weights: &Matrix, grads: &mut Grads) {
        let (_, delta) = self.net.backward(trace, weights, grads);
        self.net.accumulate_tail(&delta, features, grads);
    }
}

/// Which online critic the Bellman target trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticId {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwinCritics {
    pub online: [Critic; 2],
    pub target: [Critic; 2],
    /// Gradient steps between target syncs.
    pub sync_period: usize,
    pub steps_since_sync: usize,
}

impl TwinCritics {
    pub fn new(users: usize, hidden: &[usize], sync_period: usize, rng: &mut SimRng) -> Self {
        let online = [Critic::new(users, hidden, rng), Critic::new(users, hidden, rng)];
        Self {
            target: online.clone(),
            online,
            sync_period: sync_period.max(1),
            steps_since_sync: 0,
        }
    }

    pub fn critic(&self, id: CriticId) -> &Critic {
        &self.online[id as usize]
    }

    /// Counts one gradient step and copies the online weights into the
    /// targets when the sync period elapses. Returns whether a sync happened.
    pub fn tick(&mut self) -> bool {
        self.steps_since_sync += 1;
        if self.steps_since_sync >= self.sync_period {
            self.sync();
            true
        } else {
            false
        }
    }

    pub fn sync(&mut self) {
        self.target = self.online.clone();
        self.steps_since_sync = 0;
    }

    pub fn target_values(&self, fractions: &[f64], features: &[f64]) -> (f64, f64) {
        (
            self.target[0].q(fractions, features),
            self.target[1].q(fractions, features),
        )
    }
}

/// `y = R + γ·min(Q*₁, Q*₂)` and the critic attaining the minimum (ties go
/// to the first).
pub fn bellman_target(reward: f64, q1: f64, q2: f64, gamma: f64) -> (f64, CriticId) {
    let (min, id) = if q2 < q1 {
        (q2, CriticId::Second)
    } else {
        (q1, CriticId::First)
    };
    (reward + gamma * min, id)
}

pub fn q_target(
    critics: &TwinCritics,
    reward: f64,
    fractions: &[f64],
    features: &[f64],
    gamma: f64,
) -> (f64, CriticId) {
    let (q1, q2) = critics.target_values(fractions, features);
    bellman_target(reward, q1, q2, gamma)
}
