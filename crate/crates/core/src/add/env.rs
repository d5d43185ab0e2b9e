//! Allocation environments: a state generator paired with the per-user
//! utility of an allocation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::state::{AllocAction, AllocState, UserSlot, GRID, GRID_CELLS};
use crate::metrics::{jpsq, user_utility, Breakpoint, JpsqParams, ScoreTable};
use crate::rng::SimRng;
use crate::{Error, Result};

pub trait AllocEnv {
    fn users(&self) -> usize;

    fn draw_state(&self, rng: &mut SimRng) -> Result<AllocState>;

    fn user_utility(&self, state: &AllocState, user: usize, tokens: f64) -> Result<f64>;

    /// Total utility over users.
    fn utility(&self, state: &AllocState, action: &AllocAction) -> Result<f64> {
        if action.tokens.len() != state.len() {
            return Err(Error::param("action", "one token count per user is required"));
        }
        let mut total = 0.0;
        for (i, &b) in action.tokens.iter().enumerate() {
            total += self.user_utility(state, i, b)?;
        }
        Ok(total)
    }

    /// Token counts at which the user's scores were tabulated, if the
    /// environment is table-driven.
    fn breakpoints(&self, _state: &AllocState, _user: usize) -> Option<Vec<f64>> {
        None
    }
}

/// Utility driven by a [`ScoreTable`]. Each user draws its slot uniformly
/// from its own candidate list.
#[derive(Debug, Clone)]
pub struct TableEnv {
    pub table: ScoreTable,
    pub params: JpsqParams,
    pub candidates: Vec<Vec<UserSlot>>,
    /// Optional cap on `Σ b_i`; exceeding it adds the infeasibility penalty
    /// once. Off by default.
    pub total_budget: Option<f64>,
}

impl TableEnv {
    pub fn new(table: ScoreTable, params: JpsqParams, candidates: Vec<Vec<UserSlot>>) -> Result<Self> {
        params.validate()?;
        if candidates.is_empty() || candidates.iter().any(Vec::is_empty) {
            return Err(Error::param("candidates", "every user needs at least one slot"));
        }
        for slot in candidates.iter().flatten() {
            table.breakpoints(&slot.image_id)?;
        }
        Ok(Self {
            table,
            params,
            candidates,
            total_budget: None,
        })
    }

    pub fn with_total_budget(mut self, budget: f64) -> Result<Self> {
        if !(budget >= 0.0 && budget.is_finite()) {
            return Err(Error::param("total_budget", "must be non-negative"));
        }
        self.total_budget = Some(budget);
        Ok(self)
    }

    /// `curve[b]` is the user's utility at `b` tokens, `b = 0..=floor(cap)`.
    fn curve(&self, state: &AllocState, user: usize) -> Result<Vec<f64>> {
        (0..=libm::floor(state.users[user].cap) as u64)
            .map(|b| self.user_utility(state, user, b as f64))
            .collect()
    }

    /// Best integer allocation by exhaustive scan of `0..=cap` per user.
    /// Under a total budget the scan runs jointly as a knapsack over
    /// integer budgets, and the penalized unconstrained optimum competes.
    pub fn optimum(&self, state: &AllocState) -> Result<(AllocAction, f64)> {
        let curves = (0..state.len())
            .map(|i| self.curve(state, i))
            .collect::<Result<Vec<_>>>()?;
        let mut tokens = Vec::with_capacity(curves.len());
        let mut total = 0.0;
        for c in &curves {
            let mut best = (0, c[0]);
            for (b, &v) in c.iter().enumerate().skip(1) {
                if v > best.1 {
                    best = (b, v);
                }
            }
            tokens.push(best.0 as f64);
            total += best.1;
        }
        let Some(budget) = self.total_budget else {
            return Ok((AllocAction { tokens }, total));
        };
        if tokens.iter().sum::<f64>() <= budget {
            return Ok((AllocAction { tokens }, total));
        }
        let unconstrained = (AllocAction { tokens }, total + self.params.penalty);
        let constrained = knapsack(&curves, libm::floor(budget) as usize);
        Ok(if constrained.1 >= unconstrained.1 {
            constrained
        } else {
            unconstrained
        })
    }
}

/// Maximizes `Σ curves[i][b_i]` subject to `Σ b_i ≤ budget`.
fn knapsack(curves: &[Vec<f64>], budget: usize) -> (AllocAction, f64) {
    // best[s]: optimum over the users so far using at most s tokens.
    let mut best = vec![0.0; budget + 1];
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(curves.len());
    for c in curves {
        let mut next = vec![f64::NEG_INFINITY; budget + 1];
        let mut pick = vec![0; budget + 1];
        for s in 0..=budget {
            for b in 0..c.len().min(s + 1) {
                let v = best[s - b] + c[b];
                if v > next[s] {
                    next[s] = v;
                    pick[s] = b;
                }
            }
        }
        best = next;
        choice.push(pick);
    }
    let mut tokens = vec![0.0; curves.len()];
    let mut s = budget;
    for i in (0..curves.len()).rev() {
        let b = choice[i][s];
        tokens[i] = b as f64;
        s -= b;
    }
    (AllocAction { tokens }, best[budget])
}

impl AllocEnv for TableEnv {
    fn users(&self) -> usize {
        self.candidates.len()
    }

    fn draw_state(&self, rng: &mut SimRng) -> Result<AllocState> {
        let users = self
            .candidates
            .iter()
            .map(|c| c[rng.random_range(0..c.len())].clone())
            .collect();
        Ok(AllocState { users })
    }

    fn utility(&self, state: &AllocState, action: &AllocAction) -> Result<f64> {
        if action.tokens.len() != state.len() {
            return Err(Error::param("action", "one token count per user is required"));
        }
        let mut total = 0.0;
        for (i, &b) in action.tokens.iter().enumerate() {
            total += self.user_utility(state, i, b)?;
        }
        match self.total_budget {
            Some(budget) if action.tokens.iter().sum::<f64>() > budget => Ok(total + self.params.penalty),
            _ => Ok(total),
        }
    }

    fn user_utility(&self, state: &AllocState, user: usize, tokens: f64) -> Result<f64> {
        let slot = &state.users[user];
        let s = self.table.lookup(&slot.image_id, tokens)?;
        let j = jpsq(s.d, s.q, &self.params);
        Ok(user_utility(j, s.q, tokens, slot.cap, &self.params))
    }

    fn breakpoints(&self, state: &AllocState, user: usize) -> Option<Vec<f64>> {
        let bps = self.table.breakpoints(&state.users[user].image_id).ok()?;
        Some(bps.iter().map(|b| b.tokens).collect())
    }
}

/// Parameters of the synthetic score-table environment.
///
/// Image `k` has a size scale `κ_k`; its tabulated curves are
/// `D(b) = t_max·e^{−b/κ}` and `Q(b) = Q_lb + (Q_src − Q_lb)(1 − e^{−b/κ})`
/// sampled at evenly spaced budgets up to `cap = info = 4κ`. The semantic
/// map's area grows with `κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub users: usize,
    /// Distinct images per user.
    pub images_per_user: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub breakpoints: usize,
    pub q_src: f64,
    pub q_lb: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            users: 2,
            images_per_user: 16,
            kappa_min: 150.0,
            kappa_max: 900.0,
            breakpoints: 33,
            q_src: 5.2651,
            q_lb: 4.90,
        }
    }
}

impl TableEnv {
    pub fn synthetic(spec: &SyntheticSpec, params: JpsqParams, rng: &mut SimRng) -> Result<Self> {
        if spec.users == 0 || spec.images_per_user == 0 || spec.breakpoints < 2 {
            return Err(Error::param(
                "synthetic",
                "users, images and breakpoints must be positive",
            ));
        }
        if !(0.0 < spec.kappa_min && spec.kappa_min <= spec.kappa_max) {
            return Err(Error::param("kappa", "need 0 < kappa_min <= kappa_max"));
        }
        let mut table = ScoreTable::new();
        let mut candidates = Vec::with_capacity(spec.users);
        for u in 0..spec.users {
            let mut slots = Vec::with_capacity(spec.images_per_user);
            for k in 0..spec.images_per_user {
                let kappa = rng.random_range(spec.kappa_min..=spec.kappa_max);
                let cap = libm::round(4.0 * kappa);
                let id = format!("syn-u{u}-{k}");
                for p in 0..spec.breakpoints {
                    let b = cap * p as f64 / (spec.breakpoints - 1) as f64;
                    let decay = libm::exp(-b / kappa);
                    table.push(
                        &id,
                        Breakpoint {
                            tokens: b,
                            dreamsim: params.t_max * decay,
                            nima_mu: spec.q_lb + (spec.q_src - spec.q_lb) * (1.0 - decay),
                        },
                    )?;
                }
                let span = (kappa - spec.kappa_min) / (spec.kappa_max - spec.kappa_min).max(1e-12);
                slots.push(UserSlot {
                    grid: blob(4 + libm::round(span * 8.0) as usize, rng),
                    info_tokens: cap,
                    cap,
                    image_id: id,
                });
            }
            candidates.push(slots);
        }
        Self::new(table, params, candidates)
    }
}

/// A `side × side` square of set cells at a random offset.
fn blob(side: usize, rng: &mut SimRng) -> Vec<bool> {
    let side = side.min(GRID);
    let x0 = rng.random_range(0..=GRID - side);
    let y0 = rng.random_range(0..=GRID - side);
    let mut grid = vec![false; GRID_CELLS];
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            grid[y * GRID + x] = true;
        }
    }
    grid
}
