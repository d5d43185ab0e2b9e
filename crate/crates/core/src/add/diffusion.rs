//! The denoising-chain policy.
//!
//! An action is generated by drawing `b_T ~ N(0, I)` and running T reverse
//! diffusion steps; `b_0` is squashed by the logistic function to
//! fractions of each user's cap.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::nn::{sigmoid, Grads, Matrix, Mlp, Trace};
use super::state::{AllocAction, AllocState};
use crate::rng::SimRng;
use crate::{Error, Result};

/// Width of the sinusoidal timestep encoding.
pub const TIME_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `β_1..β_T`, index `t - 1`.
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `β_t` evenly spaced from `start` to `end`.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("T", "at least one denoising step is required"));
        }
        if !(0.0 < start && start < 1.0 && 0.0 < end && end < 1.0) {
            return Err(Error::param("beta", "schedule endpoints must lie in (0, 1)"));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|k| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }
}

/// One reverse step with `σ_t = β_t`:
/// `b_{t-1} = (b_t − β_t/√(1−ᾱ_t)·ε̂)/√(1−β_t) + β_t·z`.
pub fn denoise_update(b_t: &[f64], eps_hat: &[f64], beta: f64, alpha_bar: f64, z: &[f64]) -> Vec<f64> {
    let inv_sqrt_alpha = 1.0 / libm::sqrt(1.0 - beta);
    let k = if beta == 0.0 {
        0.0
    } else {
        beta / libm::sqrt(1.0 - alpha_bar)
    };
    b_t.iter()
        .zip(eps_hat)
        .zip(z)
        .map(|((&b, &e), &z)| inv_sqrt_alpha * (b - k * e) + beta * z)
        .collect()
}

pub fn time_embedding(t: usize) -> [f64; TIME_DIM] {
    let mut out = [0.0; TIME_DIM];
    let half = TIME_DIM / 2;
    for k in 0..half {
        let freq = libm::pow(100.0, -(k as f64) / half as f64);
        out[k] = libm::sin(t as f64 * freq);
        out[half + k] = libm::cos(t as f64 * freq);
    }
    out
}

/// Everything a pathwise gradient needs from one batch of chains.
#[derive(Debug, Clone)]
pub struct Chain {
    /// `b_T, b_{T-1}, .., b_0`, one row per sample.
    pub states: Vec<Matrix>,
    /// ε-network passes for `t = T..1`.
    traces: Vec<Trace>,
}

impl Chain {
    pub fn steps(&self) -> usize {
        self.traces.len()
    }

    pub fn b0(&self) -> &Matrix {
        &self.states[self.states.len() - 1]
    }

    pub fn fractions(&self) -> Matrix {
        let b0 = self.b0();
        Matrix::from_vec(b0.rows, b0.cols, b0.data.iter().map(|&b| sigmoid(b)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPolicy {
    /// Input `[b_t (N), time (TIME_DIM), state features]`, output `ε̂` (N).
    pub net: Mlp,
    pub schedule: NoiseSchedule,
    pub users: usize,
}

impl DiffusionPolicy {
    pub fn new(users: usize, hidden: &[usize], schedule: NoiseSchedule, rng: &mut SimRng) -> Self {
        let mut sizes = vec![users + TIME_DIM + AllocState::feature_len(users)];
        sizes.extend_from_slice(hidden);
        sizes.push(users);
        Self {
            net: Mlp::new(&sizes, rng),
            schedule,
            users,
        }
    }

    fn head(b_t: &Matrix, t: usize) -> Matrix {
        let emb = time_embedding(t);
        let mut head = Matrix::zeros(b_t.rows, b_t.cols + TIME_DIM);
        for r in 0..b_t.rows {
            let row = head.row_mut(r);
            row[..b_t.cols].copy_from_slice(b_t.row(r));
            row[b_t.cols..].copy_from_slice(&emb);
        }
        head
    }

    pub fn epsilon(&self, b_t: &[f64], t: usize, features: &[f64]) -> Vec<f64> {
        let proj = self.net.project_tail(&row(features));
        self.net
            .forward_split(&Self::head(&row(b_t), t), Some(&proj))
            .output
            .data
    }

    pub fn denoise_step(&self, b_t: &[f64], t: usize, features: &[f64], z: &[f64]) -> Vec<f64> {
        let eps = self.epsilon(b_t, t, features);
        denoise_update(b_t, &eps, self.schedule.beta(t), self.schedule.alpha_bar(t), z)
    }

    /// Runs one chain per row of `features` from `b_t`. `noise[k]` is the
    /// `z` used at step `t = T - k`; `None` runs the deterministic chain.
    pub fn run_chain(&self, features: &Matrix, b_t: Matrix, noise: Option<&[Matrix]>) -> Chain {
        let steps = self.schedule.steps();
        let proj = self.net.project_tail(features);
        let zero = vec![0.0; b_t.data.len()];
        let mut states = Vec::with_capacity(steps + 1);
        let mut traces = Vec::with_capacity(steps);
        states.push(b_t);
        for (k, t) in (1..=steps).rev().enumerate() {
            let b = &states[k];
            let trace = self.net.forward_split(&Self::head(b, t), Some(&proj));
            let z = noise.map_or(&zero[..], |n| &n[k].data[..]);
            let next = denoise_update(
                &b.data,
                &trace.output.data,
                self.schedule.beta(t),
                self.schedule.alpha_bar(t),
                z,
            );
            states.push(Matrix::from_vec(b.rows, b.cols, next));
            traces.push(trace);
        }
        Chain { states, traces }
    }

    /// Random `b_T` and per-step `z` for `rows` chains.
    pub fn draw_noise(&self, rows: usize, rng: &mut SimRng) -> (Matrix, Vec<Matrix>) {
        let mut normal = || {
            let data = (0..rows * self.users).map(|_| rng.sample(StandardNormal)).collect();
            Matrix::from_vec(rows, self.users, data)
        };
        let b_t = normal();
        let z = (0..self.schedule.steps()).map(|_| normal()).collect();
        (b_t, z)
    }

    /// Training-mode action: stochastic chain, then Gaussian exploration
    /// noise of std `explore_sigma · cap` added before projecting to the caps.
    pub fn sample_action(
        &self,
        state: &AllocState,
        explore_sigma: f64,
        token_scale: f64,
        rng: &mut SimRng,
    ) -> AllocAction {
        let (b_t, z) = self.draw_noise(1, rng);
        let chain = self.run_chain(&row(&state.features(token_scale)), b_t, Some(&z));
        let fractions: Vec<f64> = chain
            .fractions()
            .data
            .into_iter()
            .map(|f| {
                let n: f64 = rng.sample(StandardNormal);
                f + explore_sigma * n
            })
            .collect();
        AllocAction::from_fractions(&fractions, &state.caps())
    }

    /// Inference: the chain starts at the prior mean `b_T = 0` with `z = 0`.
    pub fn allocate(&self, state: &AllocState, token_scale: f64) -> AllocAction {
        let chain = self.run_chain(&row(&state.features(token_scale)), Matrix::zeros(1, self.users), None);
        AllocAction::from_fractions(&chain.fractions().data, &state.caps())
    }

    /// Backpropagates `∂L/∂fractions` (through the squash) plus `∂L/∂b_0`
    /// through every denoising step, with the chain's noise held fixed.
    pub fn backward(
        &self,
        chain: &Chain,
        features: &Matrix,
        grad_fractions: &Matrix,
        grad_b0: &Matrix,
        grads: &mut Grads,
    ) {
        let steps = self.schedule.steps();
        let f = chain.fractions();
        let mut g: Vec<f64> = f
            .data
            .iter()
            .zip(&grad_fractions.data)
            .zip(&grad_b0.data)
            .map(|((f, gf), gb)| gf * f * (1.0 - f) + gb)
            .collect();
        let mut delta_sum = Matrix::zeros(features.rows, self.net.layers[0].outputs);
        for k in (0..steps).rev() {
            let t = steps - k;
            let beta = self.schedule.beta(t);
            let inv_sqrt_alpha = 1.0 / libm::sqrt(1.0 - beta);
            let coef = beta / libm::sqrt(1.0 - self.schedule.alpha_bar(t));
            let u: Vec<f64> = g.iter().map(|v| v * inv_sqrt_alpha).collect();
            let grad_eps = Matrix::from_vec(f.rows, f.cols, u.iter().map(|v| -coef * v).collect());
            let (grad_head, delta) = self.net.backward(&chain.traces[k], &grad_eps, grads);
            delta_sum.data.iter_mut().zip(&delta.data).for_each(|(a, d)| *a += d);
            g = (0..u.len())
                .map(|i| u[i] + grad_head.data[(i / self.users) * grad_head.cols + i % self.users])
                .collect();
        }
        self.net.accumulate_tail(&delta_sum, features, grads);
    }
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_vec(1, v.len(), v.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::add::state::UserSlot;
    use crate::rng;

    #[test]
    fn denoise_examples() {
        let b = denoise_update(&[1.0], &[0.5], 0.2, 0.5, &[0.0]);
        let want = (1.0 / libm::sqrt(0.8)) * (1.0 - 0.2 / libm::sqrt(0.5) * 0.5);
        assert!((b[0] - want).abs() < 1e-15);
        assert!((b[0] - 0.9599).abs() < 1e-4);

        assert_eq!(denoise_update(&[0.0], &[0.0], 0.2, 0.5, &[1.0]), vec![0.2]);
        assert_eq!(
            denoise_update(&[0.37, -2.0], &[0.0, 0.0], 0.0, 0.0, &[0.0, 0.0]),
            vec![0.37, -2.0]
        );
    }

    #[test]
    fn schedule_shape() {
        let s = NoiseSchedule::linear(5, 0.05, 0.5).unwrap();
        assert_eq!(s.betas.len(), 5);
        assert!((s.beta(1) - 0.05).abs() < 1e-15 && (s.beta(5) - 0.5).abs() < 1e-15);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.betas.iter().all(|&b| 0.0 < b && b < 1.0));
        assert!(NoiseSchedule::linear(0, 0.05, 0.5).is_err());
        assert!(NoiseSchedule::linear(3, 0.0, 0.5).is_err());
    }

    fn state(caps: &[f64]) -> AllocState {
        AllocState {
            users: caps
                .iter()
                .map(|&cap| UserSlot {
                    grid: vec![false; 256],
                    info_tokens: cap,
                    cap,
                    image_id: "x".into(),
                })
                .collect(),
        }
    }

    #[test]
    fn chain_has_exactly_t_steps() {
        for t in 1..=8 {
            let s = NoiseSchedule::linear(t, 0.05, 0.5).unwrap();
            let p = DiffusionPolicy::new(2, &[8], s, &mut rng::seeded(0));
            let chain = p.run_chain(&row(&state(&[1.0, 2.0]).features(1.0)), Matrix::zeros(1, 2), None);
            assert_eq!(chain.steps(), t);
            assert_eq!(chain.states.len(), t + 1);
        }
    }

    #[test]
    fn inference_is_deterministic_and_projected() {
        let s = NoiseSchedule::linear(5, 0.05, 0.5).unwrap();
        let p = DiffusionPolicy::new(2, &[8, 8], s, &mut rng::seeded(4));
        let st = state(&[100.0, 0.0]);
        let a = p.allocate(&st, 100.0);
        assert_eq!(a, p.allocate(&st, 100.0));
        assert_eq!(a.tokens[1], 0.0);
        assert!((0.0..=100.0).contains(&a.tokens[0]));

        let mut r1 = rng::seeded(9);
        let mut r2 = rng::seeded(9);
        assert_eq!(
            p.sample_action(&st, 0.0, 100.0, &mut r1),
            p.sample_action(&st, 0.0, 100.0, &mut r2)
        );
        let zero = state(&[0.0, 0.0]);
        assert_eq!(p.sample_action(&zero, 0.3, 1.0, &mut r1).tokens, vec![0.0, 0.0]);
    }
}
