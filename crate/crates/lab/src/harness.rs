//! Scenario runs: extraction for every user, the downlink, scoring and
//! utility; robustness sweeps over token budgets; and allocation
//! experiments that pit policies against each other on identical states.

use std::collections::BTreeMap;

use rayon::prelude::*;

use semcom_core::add::{
    baseline_allocate, make_state, train, AddAgent, AllocAction, AllocEnv, AllocState, Baseline, SyntheticSpec,
    TableEnv, TrainOutcome, UserInput, UserSlot,
};
use semcom_core::bundle::SemComBundle;
use semcom_core::channel::{sample_rayleigh, token_budget};
use semcom_core::metrics::{
    jpsq, user_utility, JpsqParams, ProxyScorer, Score, ScoreRequest, ScoreTable, ScorerOracle,
};
use semcom_core::packing::{reduction_ratio, truncate, SemanticInfo};
use semcom_core::pipeline::{run_pipeline, Extraction};
use semcom_core::rng::{self, SimRng};

use crate::bundle_io::load_bundle;
use crate::error::{LabError, Result};
use crate::scenario::{EnvSection, Scenario, ScorerSection};
use crate::table_io::load_score_table;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// RNG streams split off the scenario seed.
mod stream {
    pub const FADING: u64 = 0;
    pub const SYNTHETIC_ENV: u64 = 20;
    pub const EVAL_STATES: u64 = 30;
    pub const EVAL_POLICY: u64 = 31;
}

#[derive(Debug, Clone)]
pub enum Scorer {
    Proxy(ProxyScorer),
    Table(ScoreTable),
}

impl ScorerOracle for Scorer {
    fn score(&self, request: &ScoreRequest<'_>) -> semcom_core::Result<Score> {
        match self {
            Scorer::Proxy(p) => p.score(request),
            Scorer::Table(t) => t.score(request),
        }
    }
}

pub fn build_scorer(scenario: &Scenario) -> Result<Scorer> {
    Ok(match &scenario.scorer {
        ScorerSection::Proxy { t_max, q_src, q_lb } => Scorer::Proxy(ProxyScorer {
            t_max: *t_max,
            q_src: *q_src,
            q_lb: *q_lb,
        }),
        ScorerSection::Table { path } => Scorer::Table(load_score_table(scenario.resolve(path))?),
    })
}

/// Extraction under the scenario's thresholds and clustering parameters.
pub fn extract(bundle: &SemComBundle, scenario: &Scenario) -> Result<Extraction> {
    Ok(run_pipeline(bundle, &scenario.xi()?, &scenario.dbscan_params())?)
}

/// Key into score tables: the bundle's `source_image_id`, or its prompt.
pub fn image_id(bundle: &SemComBundle) -> String {
    bundle.source_image_id.clone().unwrap_or_else(|| bundle.prompt.clone())
}

/// A corpus bundle with its extraction.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub bundle: SemComBundle,
    pub image_id: String,
    pub extraction: Extraction,
}

impl Prepared {
    pub fn info(&self) -> &SemanticInfo {
        &self.extraction.info
    }
}

/// Loads and extracts every corpus bundle some user references, keyed by
/// corpus index.
pub fn prepare_corpus(scenario: &Scenario) -> Result<BTreeMap<usize, Prepared>> {
    let mut wanted: Vec<usize> = scenario.users.iter().map(|u| u.bundle).collect();
    wanted.sort_unstable();
    wanted.dedup();
    let prepared = wanted
        .par_iter()
        .map(|&k| {
            let bundle = load_bundle(scenario.resolve(&scenario.corpus[k]))?;
            let extraction = extract(&bundle, scenario)?;
            Ok((
                k,
                Prepared {
                    image_id: image_id(&bundle),
                    bundle,
                    extraction,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(prepared.into_iter().collect())
}

/// Per-user fading: the fixed value when given, otherwise one Rayleigh draw
/// per user from the channel seed.
pub fn fading(scenario: &Scenario) -> Vec<f64> {
    let draws = sample_rayleigh(
        &mut rng::split(scenario.channel_seed(), stream::FADING),
        scenario.users.len(),
    );
    scenario
        .users
        .iter()
        .zip(draws)
        .map(|(u, d)| u.fading.unwrap_or(d))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRow {
    pub user: usize,
    pub image_id: String,
    pub info_tokens: usize,
    pub cap_tokens: usize,
    pub tokens_sent: usize,
    pub reduction_ratio: f64,
    pub d: f64,
    pub q: f64,
    /// Quality with the whole semantic information delivered.
    pub q_full: f64,
    pub jpsq: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregates {
    pub mean_reduction: f64,
    pub mean_q_drop: f64,
    pub total_utility: f64,
}

impl Aggregates {
    /// Sums in row order, so recomputation from the rows is exact.
    pub fn from_rows(rows: &[UserRow]) -> Self {
        let n = rows.len().max(1) as f64;
        Self {
            mean_reduction: rows.iter().map(|r| r.reduction_ratio).sum::<f64>() / n,
            mean_q_drop: rows.iter().map(|r| r.q_full - r.q).sum::<f64>() / n,
            total_utility: rows.iter().map(|r| r.utility).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<UserRow>,
    pub aggregates: Aggregates,
    pub provenance: Provenance,
}

pub fn provenance(scenario: &Scenario) -> Provenance {
    Provenance {
        seed: scenario.seed,
        config_hash: scenario.config_hash(),
        version: ARTIFACT_VERSION.into(),
    }
}

fn score_prefix(scorer: &Scorer, p: &Prepared, tokens: usize) -> Result<Score> {
    let prefix = truncate(p.info(), tokens);
    Ok(scorer.score(&ScoreRequest {
        image_id: &p.image_id,
        info: p.info(),
        prefix: &prefix,
    })?)
}

/// Every user sends as much of its stream as its link allows.
pub fn simulate(scenario: &Scenario) -> Result<ExperimentReport> {
    let corpus = prepare_corpus(scenario)?;
    let scorer = build_scorer(scenario)?;
    let cfg = scenario.channel_config();
    let params = scenario.jpsq_params();
    let fading = fading(scenario);
    let rows = (0..scenario.users.len())
        .into_par_iter()
        .map(|i| {
            let p = &corpus[&scenario.users[i].bundle];
            let info_tokens = p.info().total_tokens;
            let cap = token_budget(&cfg, &scenario.link(i, fading[i]), info_tokens);
            let s = score_prefix(&scorer, p, cap)?;
            let full = score_prefix(&scorer, p, info_tokens)?;
            let j = jpsq(s.d, s.q, &params);
            Ok(UserRow {
                user: i,
                image_id: p.image_id.clone(),
                info_tokens,
                cap_tokens: cap,
                tokens_sent: cap,
                reduction_ratio: reduction_ratio(cap, (p.bundle.image_width, p.bundle.image_height))?,
                d: s.d,
                q: s.q,
                q_full: full.q,
                jpsq: j,
                utility: user_utility(j, s.q, cap as f64, cap as f64, &params),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        aggregates: Aggregates::from_rows(&rows),
        rows,
        provenance: provenance(scenario),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub image_id: String,
    /// `(tokens sent, Q)`.
    pub points: Vec<(usize, f64)>,
}

/// `Q` at each budget of `grid` for every bundle the users reference.
pub fn robustness_sweep(scenario: &Scenario, grid: &[usize]) -> Result<Vec<Curve>> {
    let corpus = prepare_corpus(scenario)?;
    let scorer = build_scorer(scenario)?;
    corpus
        .values()
        .map(|p| {
            let points = grid
                .iter()
                .map(|&b| {
                    let sent = b.min(p.info().total_tokens);
                    Ok((sent, score_prefix(&scorer, p, sent)?.q))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut points = points;
            points.dedup_by_key(|p| p.0);
            Ok(Curve {
                image_id: p.image_id.clone(),
                points,
            })
        })
        .collect()
}

/// `n + 1` evenly spaced budgets from 0 to `max`.
pub fn token_grid(max: usize, n: usize) -> Vec<usize> {
    let n = n.max(1);
    let mut grid: Vec<usize> = (0..=n)
        .map(|k| (max as u128 * k as u128 / n as u128) as usize)
        .collect();
    grid.dedup();
    grid
}

/// Allocation over the scenario's own users. Each state redraws the
/// Rayleigh fading of users without a fixed gain, which moves their caps.
pub struct ScenarioEnv {
    scenario: Scenario,
    users: Vec<Prepared>,
    grids: Vec<Vec<bool>>,
    scorer: Scorer,
    params: JpsqParams,
    pub total_budget: Option<f64>,
}

impl ScenarioEnv {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let corpus = prepare_corpus(scenario)?;
        let users: Vec<Prepared> = scenario.users.iter().map(|u| corpus[&u.bundle].clone()).collect();
        let inputs: Vec<(Vec<_>, &Prepared)> = users.iter().map(|p| (p.info().stream().collect(), p)).collect();
        let state = make_state(
            &inputs
                .iter()
                .map(|(mask, p)| UserInput {
                    image_id: &p.image_id,
                    width: p.bundle.image_width,
                    height: p.bundle.image_height,
                    mask,
                    info_tokens: p.info().total_tokens,
                    cap: p.info().total_tokens,
                })
                .collect::<Vec<_>>(),
        )?;
        Ok(Self {
            scenario: scenario.clone(),
            grids: state.users.into_iter().map(|u| u.grid).collect(),
            users,
            scorer: build_scorer(scenario)?,
            params: scenario.jpsq_params(),
            total_budget: scenario.add.total_budget,
        })
    }
}

impl AllocEnv for ScenarioEnv {
    fn users(&self) -> usize {
        self.users.len()
    }

    fn draw_state(&self, rng: &mut SimRng) -> semcom_core::Result<AllocState> {
        let draws = sample_rayleigh(rng, self.users.len());
        let cfg = self.scenario.channel_config();
        let users = self
            .users
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let fading = self.scenario.users[i].fading.unwrap_or(draws[i]);
                let info = p.info().total_tokens;
                UserSlot {
                    grid: self.grids[i].clone(),
                    info_tokens: info as f64,
                    cap: token_budget(&cfg, &self.scenario.link(i, fading), info) as f64,
                    image_id: p.image_id.clone(),
                }
            })
            .collect();
        Ok(AllocState { users })
    }

    fn user_utility(&self, state: &AllocState, user: usize, tokens: f64) -> semcom_core::Result<f64> {
        let slot = &state.users[user];
        if !(0.0..=slot.cap).contains(&tokens) {
            return Ok(self.params.penalty);
        }
        let p = &self.users[user];
        let prefix = truncate(p.info(), tokens.floor() as usize);
        let s = self.scorer.score(&ScoreRequest {
            image_id: &p.image_id,
            info: p.info(),
            prefix: &prefix,
        })?;
        Ok(user_utility(
            jpsq(s.d, s.q, &self.params),
            s.q,
            tokens,
            slot.cap,
            &self.params,
        ))
    }

    fn utility(&self, state: &AllocState, action: &AllocAction) -> semcom_core::Result<f64> {
        if action.tokens.len() != state.len() {
            return Err(semcom_core::Error::InvalidParameter {
                name: "action",
                reason: "one token count per user is required".into(),
            });
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

    fn breakpoints(&self, state: &AllocState, user: usize) -> Option<Vec<f64>> {
        match &self.scorer {
            Scorer::Table(t) => {
                let bps = t.breakpoints(&state.users[user].image_id).ok()?;
                Some(bps.iter().map(|b| b.tokens).collect())
            }
            Scorer::Proxy(_) => None,
        }
    }
}

pub fn synthetic_spec(scenario: &Scenario) -> Option<SyntheticSpec> {
    match scenario.add.env {
        EnvSection::Synthetic {
            users,
            images_per_user,
            kappa_min,
            kappa_max,
            breakpoints,
        } => Some(SyntheticSpec {
            users,
            images_per_user,
            kappa_min,
            kappa_max,
            breakpoints,
            ..SyntheticSpec::default()
        }),
        EnvSection::Scenario => None,
    }
}

/// The allocation environment the scenario's `add.env` names.
pub fn build_env(scenario: &Scenario) -> Result<Box<dyn AllocEnv + Sync>> {
    match synthetic_spec(scenario) {
        Some(spec) => {
            let mut env = TableEnv::synthetic(
                &spec,
                scenario.jpsq_params(),
                &mut rng::split(scenario.seed, stream::SYNTHETIC_ENV),
            )?;
            if let Some(b) = scenario.add.total_budget {
                env = env.with_total_budget(b)?;
            }
            Ok(Box::new(env))
        }
        None => Ok(Box::new(ScenarioEnv::new(scenario)?)),
    }
}

pub fn train_add(scenario: &Scenario) -> Result<TrainOutcome> {
    let env = build_env(scenario)?;
    Ok(train(env.as_ref(), &scenario.add.config(), scenario.seed)?)
}

#[derive(Debug, Clone)]
pub enum Policy {
    Add(Box<AddAgent>),
    Baseline(Baseline),
}

impl Policy {
    /// `fixed`, `random` or `greedy`; anything else is not a baseline.
    pub fn baseline(name: &str) -> Option<Self> {
        match name {
            "fixed" => Some(Policy::Baseline(Baseline::Fixed)),
            "random" => Some(Policy::Baseline(Baseline::Random)),
            "greedy" => Some(Policy::Baseline(Baseline::GreedyTable)),
            _ => None,
        }
    }

    pub fn users(&self) -> Option<usize> {
        match self {
            Policy::Add(a) => Some(a.policy.users),
            Policy::Baseline(_) => None,
        }
    }

    pub fn allocate<E: AllocEnv + ?Sized>(&self, state: &AllocState, env: &E, rng: &mut SimRng) -> Result<AllocAction> {
        Ok(match self {
            Policy::Add(agent) => agent.allocate(state),
            Policy::Baseline(kind) => baseline_allocate(*kind, state, env, rng)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationRow {
    pub policy: String,
    pub state: usize,
    pub tokens: Vec<f64>,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationReport {
    /// Policy-major, states in draw order.
    pub rows: Vec<AllocationRow>,
    /// `(policy, mean utility)` in the order the policies were given.
    pub means: Vec<(String, f64)>,
}

impl AllocationReport {
    pub fn utilities(&self, policy: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.policy == policy)
            .map(|r| r.utility)
            .collect()
    }
}

/// Evaluates every policy on the same `states` seeded draws.
pub fn allocation_experiment<E: AllocEnv + Sync + ?Sized>(
    env: &E,
    policies: &[(String, Policy)],
    states: usize,
    seed: u64,
) -> Result<AllocationReport> {
    for (name, p) in policies {
        if let Some(n) = p.users() {
            if n != env.users() {
                return Err(LabError::Config(format!(
                    "policy `{name}` allocates for {n} users, environment has {}",
                    env.users()
                )));
            }
        }
    }
    let mut state_rng = rng::split(seed, stream::EVAL_STATES);
    let drawn = (0..states)
        .map(|_| env.draw_state(&mut state_rng))
        .collect::<semcom_core::Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(states * policies.len());
    let mut means = Vec::with_capacity(policies.len());
    for (k, (name, policy)) in policies.iter().enumerate() {
        let mut rng = rng::split(seed, stream::EVAL_POLICY + k as u64);
        let actions = drawn
            .iter()
            .map(|s| policy.allocate(s, env, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let utilities = drawn
            .par_iter()
            .zip(&actions)
            .map(|(s, a)| env.utility(s, a))
            .collect::<semcom_core::Result<Vec<_>>>()?;
        means.push((name.clone(), utilities.iter().sum::<f64>() / states.max(1) as f64));
        for (i, (a, u)) in actions.into_iter().zip(utilities).enumerate() {
            rows.push(AllocationRow {
                policy: name.clone(),
                state: i,
                tokens: a.tokens,
                utility: u,
            });
        }
    }
    Ok(AllocationReport { rows, means })
}

/// Mean utility per policy on synthetic environments with each user count
/// in `counts`. `policies` builds the policy list for one environment.
pub fn user_count_sweep(
    base: &SyntheticSpec,
    params: JpsqParams,
    counts: impl IntoIterator<Item = usize>,
    states: usize,
    seed: u64,
    mut policies: impl FnMut(&TableEnv) -> Result<Vec<(String, Policy)>>,
) -> Result<Vec<(usize, String, f64)>> {
    let mut out = Vec::new();
    for users in counts {
        let spec = SyntheticSpec { users, ..base.clone() };
        let env = TableEnv::synthetic(&spec, params, &mut rng::split(seed, stream::SYNTHETIC_ENV))?;
        let report = allocation_experiment(&env, &policies(&env)?, states, seed)?;
        out.extend(report.means.into_iter().map(|(name, mean)| (users, name, mean)));
    }
    Ok(out)
}
