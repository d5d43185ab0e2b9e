use alloc::vec::Vec;

use rand::Rng;

use super::env::AllocEnv;
use super::state::{AllocAction, AllocState};
use crate::rng::SimRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Send everything the channel allows.
    Fixed,
    /// Uniform in `[0, cap]` per user.
    Random,
    /// Per-user argmax of the utility over the score-table breakpoints.
    GreedyTable,
}

pub fn baseline_allocate<E: AllocEnv + ?Sized>(
    kind: Baseline,
    state: &AllocState,
    env: &E,
    rng: &mut SimRng,
) -> Result<AllocAction> {
    let caps = state.caps();
    let tokens = match kind {
        Baseline::Fixed => caps,
        Baseline::Random => caps
            .iter()
            .map(|&c| if c > 0.0 { rng.random_range(0.0..=c) } else { 0.0 })
            .collect(),
        Baseline::GreedyTable => {
            let mut out = Vec::with_capacity(caps.len());
            for (i, &cap) in caps.iter().enumerate() {
                let points = env.breakpoints(state, i).ok_or(Error::MissingTable)?;
                let mut best = (0.0, env.user_utility(state, i, 0.0)?);
                for b in points.into_iter().map(|b| b.clamp(0.0, cap)) {
                    let u = env.user_utility(state, i, b)?;
                    if u > best.1 {
                        best = (b, u);
                    }
                }
                out.push(best.0);
            }
            out
        }
    };
    Ok(AllocAction { tokens })
}
