use rand::Rng;
use rand_distr::StandardNormal;

use semcom_core::add::nn::{Matrix, Mlp};
use semcom_core::add::*;
use semcom_core::rng::{self, SimRng};
use semcom_core::Result;

const H: f64 = 1e-5;

fn random_features(users: usize, rows: usize, rng: &mut SimRng) -> Matrix {
    let data = (0..rows)
        .flat_map(|_| {
            (0..users)
                .flat_map(|_| {
                    let bits: Vec<f64> = (0..256)
                        .map(|_| if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 })
                        .collect();
                    let tail = [rng.random_range(0.05..1.0), rng.random_range(0.05..1.0)];
                    bits.into_iter().chain(tail)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Matrix::from_vec(rows, AllocState::feature_len(users), data)
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut SimRng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect(),
    )
}

/// Central differences of `f` over every parameter of `net`.
fn numeric_grad(net: &Mlp, mut f: impl FnMut(&Mlp) -> f64) -> Vec<f64> {
    let base = net.params();
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + H;
        probe.set_params(&p);
        let up = f(&probe);
        p[i] = base[i] - H;
        probe.set_params(&p);
        let down = f(&probe);
        p[i] = base[i];
        out.push((up - down) / (2.0 * H));
    }
    out
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`.
fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-12)
}

#[test]
fn critic_gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut r = rng::seeded(seed);
        let users = 1 + (seed % 2) as usize;
        let rows = 4;
        let critic = Critic::new(users, &[4], &mut r);
        let features = random_features(users, rows, &mut r);
        let fractions = Matrix::from_vec(rows, users, (0..rows * users).map(|_| r.random::<f64>()).collect());
        let targets: Vec<f64> = (0..rows).map(|_| r.random_range(-2.0..2.0)).collect();
        let batch = rows + 3;
        let (_, grads) = critic_gradient(&critic, &fractions, &features, &targets, batch);
        let numeric = numeric_grad(&critic.net, |net| {
            let c = Critic { net: net.clone() };
            critic_gradient(&c, &fractions, &features, &targets, batch).0
        });
        let e = rel_err(&grads.flatten(), &numeric);
        assert!(e < 1e-4, "seed {seed}: relative error {e:e}");
        worst = worst.max(e);
    }
    println!("critic worst relative error {worst:e}");
}

#[test]
fn policy_gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut r = rng::seeded(1000 + seed);
        let users = 1 + (seed % 2) as usize;
        let rows = 3;
        let schedule = NoiseSchedule::linear(5, 0.05, 0.5).unwrap();
        let policy = DiffusionPolicy::new(users, &[4, 4], schedule, &mut r);
        let critics = [Critic::new(users, &[4], &mut r), Critic::new(users, &[4], &mut r)];
        let features = random_features(users, rows, &mut r);
        let b_t = normal_matrix(rows, users, &mut r);
        let z: Vec<Matrix> = (0..5).map(|_| normal_matrix(rows, users, &mut r)).collect();
        let penalty = 0.1;
        let (_, grads) = policy_gradient(&policy, &critics, &features, b_t.clone(), &z, penalty);
        let numeric = numeric_grad(&policy.net, |net| {
            let p = DiffusionPolicy {
                net: net.clone(),
                ..policy.clone()
            };
            policy_gradient(&p, &critics, &features, b_t.clone(), &z, penalty).0
        });
        let e = rel_err(&grads.flatten(), &numeric);
        assert!(e < 1e-4, "seed {seed}: relative error {e:e}");
        worst = worst.max(e);
    }
    println!("policy worst relative error {worst:e}");
}

/// The smallest network shape: 2 inputs, 4 hidden units, 1 output.
#[test]
fn two_four_one_network_gradient() {
    for seed in 0..100u64 {
        let mut r = rng::seeded(5000 + seed);
        let net = Mlp::new(&[2, 4, 1], &mut r);
        let x = Matrix::from_vec(3, 2, (0..6).map(|_| r.random_range(-2.0..2.0)).collect());
        let w = Matrix::from_vec(3, 1, (0..3).map(|_| r.random_range(-1.0..1.0)).collect());
        let objective = |net: &Mlp| {
            let out = net.forward_split(&x, None).output;
            out.data.iter().zip(&w.data).map(|(o, w)| o * w).sum::<f64>()
        };
        let trace = net.forward_split(&x, None);
        let mut grads = semcom_core::add::nn::Grads::zeros_like(&net);
        net.backward(&trace, &w, &mut grads);
        let e = rel_err(&grads.flatten(), &numeric_grad(&net, objective));
        assert!(e < 1e-4, "seed {seed}: relative error {e:e}");
    }
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn big_phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// `E[clamp(a + sY, 0, 1)]` for standard normal `Y`.
fn clamped_mean(a: f64, s: f64) -> f64 {
    if s == 0.0 {
        return a.clamp(0.0, 1.0);
    }
    let excess = |k: f64| (a - k) * big_phi((a - k) / s) + s * phi((a - k) / s);
    excess(0.0) - excess(1.0)
}

/// With a constant ε̂ = c the chain is linear in Gaussians, so `b_0` is
/// normal with a mean and variance known in closed form.
#[test]
fn sampled_actions_match_the_chain_distribution() {
    let schedule = NoiseSchedule::linear(5, 0.05, 0.5).unwrap();
    let mut policy = DiffusionPolicy::new(1, &[4], schedule.clone(), &mut rng::seeded(3));
    for l in &mut policy.net.layers {
        l.weight.iter_mut().for_each(|w| *w = 0.0);
        l.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    let c = 0.7;
    policy.net.layers.last_mut().unwrap().bias[0] = c;

    let (mut mean, mut var) = (0.0, 1.0);
    for t in (1..=5).rev() {
        let beta = schedule.beta(t);
        let a = 1.0 / (1.0 - beta).sqrt();
        let k = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
        mean = a * (mean - k * c);
        var = a * a * var + beta * beta;
    }
    let sd: f64 = var.sqrt();

    let slot = UserSlot {
        grid: vec![false; 256],
        info_tokens: 1000.0,
        cap: 1000.0,
        image_id: "x".into(),
    };
    let state = AllocState { users: vec![slot] };
    for explore in [0.0, 0.1] {
        // Trapezoid over ±12 sd of b_0.
        let n = 8000;
        let (lo, hi) = (mean - 12.0 * sd, mean + 12.0 * sd);
        let dx = (hi - lo) / n as f64;
        let expected: f64 = (0..=n)
            .map(|i| {
                let x = lo + i as f64 * dx;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * phi((x - mean) / sd) / sd * clamped_mean(semcom_core::add::nn::sigmoid(x), explore)
            })
            .sum::<f64>()
            * dx;

        let mut r = rng::seeded(77);
        let samples: Vec<f64> = (0..10_000)
            .map(|_| policy.sample_action(&state, explore, 4096.0, &mut r).tokens[0] / 1000.0)
            .collect();
        let m = samples.iter().sum::<f64>() / samples.len() as f64;
        let v = samples.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
        let se = (v / samples.len() as f64).sqrt();
        assert!(
            (m - expected).abs() < 3.0 * se,
            "explore {explore}: mean {m} vs {expected} (se {se})"
        );
    }
}

/// Every action earns the same utility. States come from a fixed pool.
struct Flat {
    utility: f64,
    pool: Vec<UserSlot>,
}

impl Flat {
    fn new(utility: f64, rng: &mut SimRng) -> Self {
        let pool = (0..8)
            .map(|_| {
                let cap = rng.random_range(100.0..2000.0f64).round();
                let grid = (0..256).map(|_| rng.random::<f64>() < 0.2).collect();
                UserSlot {
                    grid,
                    info_tokens: cap,
                    cap,
                    image_id: "flat".into(),
                }
            })
            .collect();
        Self { utility, pool }
    }
}

impl AllocEnv for Flat {
    fn users(&self) -> usize {
        1
    }

    fn draw_state(&self, rng: &mut SimRng) -> Result<AllocState> {
        let slot = self.pool[rng.random_range(0..self.pool.len())].clone();
        Ok(AllocState { users: vec![slot] })
    }

    fn user_utility(&self, _: &AllocState, _: usize, _: f64) -> Result<f64> {
        Ok(self.utility)
    }
}

/// Only the critic whose target attains the minimum is trained on a row, so
/// with a constant reward one critic can be starved; the clipped value
/// `min(Q₁, Q₂)` and the critic that keeps receiving rows are what converge.
#[test]
fn critic_learns_a_constant_reward_without_discounting() {
    let env = Flat::new(100.0, &mut rng::seeded(4));
    let config = AddConfig {
        gamma: 0.0,
        lr: 1e-3,
        hidden: vec![16, 16],
        episodes: 1500,
        warmup: 64,
        batch: 32,
        updates_per_episode: 2,
        ..AddConfig::default()
    };
    let out = train(&env, &config, 5).unwrap();
    let expected = env.utility * config.reward_scale;
    let mut r = rng::seeded(8);
    let mut converged = [true; 2];
    for _ in 0..50 {
        let state = env.draw_state(&mut r).unwrap();
        let features = state.features(config.token_scale);
        let f = [r.random::<f64>()];
        let q = out.agent.critics.online.each_ref().map(|c| c.q(&f, &features));
        let clipped = q[0].min(q[1]);
        assert!(
            (clipped - expected).abs() < 1e-2,
            "min Q = {clipped}, expected {expected}"
        );
        for k in 0..2 {
            converged[k] &= (q[k] - expected).abs() < 1e-2;
        }
    }
    assert!(converged.iter().any(|&c| c), "neither critic reached the constant");
}

#[test]
fn training_is_deterministic_per_seed() {
    let spec = SyntheticSpec {
        users: 2,
        images_per_user: 4,
        ..SyntheticSpec::default()
    };
    let env = TableEnv::synthetic(&spec, Default::default(), &mut rng::seeded(1)).unwrap();
    let config = AddConfig {
        hidden: vec![8, 8],
        episodes: 120,
        warmup: 32,
        batch: 16,
        ..AddConfig::default()
    };
    let a = train(&env, &config, 9).unwrap();
    let b = train(&env, &config, 9).unwrap();
    let c = train(&env, &config, 10).unwrap();
    assert_eq!(a.rewards, b.rewards);
    assert_eq!(a.critic_loss, b.critic_loss);
    assert_eq!(a.agent, b.agent);
    assert_ne!(a.rewards, c.rewards);
}

fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    xs.windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

#[test]
fn single_user_training_reaches_the_scanned_optimum() {
    let spec = SyntheticSpec {
        users: 1,
        ..SyntheticSpec::default()
    };
    let env = TableEnv::synthetic(&spec, Default::default(), &mut rng::seeded(11)).unwrap();
    let config = AddConfig {
        episodes: 2000,
        lr: 1e-3,
        hidden: vec![64, 64],
        updates_per_episode: 2,
        ..AddConfig::default()
    };
    let out = train(&env, &config, 7).unwrap();
    let (mut got, mut best) = (0.0, 0.0);
    for slot in &env.candidates[0] {
        let state = AllocState {
            users: vec![slot.clone()],
        };
        got += env.utility(&state, &out.agent.allocate(&state)).unwrap();
        best += env.optimum(&state).unwrap().1;
    }
    println!("utility {got:.3} of optimum {best:.3}");
    assert!(got >= 0.95 * best, "{got} < 0.95 × {best}");

    // The 100-episode moving average over the final third should not trend
    // down: its last value is at least its first.
    let tail = &out.rewards[2 * out.rewards.len() / 3..];
    let ma = moving_average(tail, 100);
    println!("moving average {:.3} -> {:.3}", ma[0], ma[ma.len() - 1]);
    assert!(ma[ma.len() - 1] >= ma[0]);
}
