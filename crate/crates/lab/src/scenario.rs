//! Scenario files: one JSON document describing the corpus, the users and
//! their links, and every tunable of the pipeline, scorer and allocator.
//!
//! Relative paths are resolved against the scenario file's directory.
//! `SEMCOM_SEED` replaces the top-level `seed`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use semcom_core::add::{AddConfig, SyntheticSpec};
use semcom_core::bundle::Pos;
use semcom_core::channel::{ChannelConfig, UserLink};
use semcom_core::metrics::{JpsqParams, ProxyScorer};
use semcom_core::pipeline::XiScheme;
use semcom_core::segmentation::DbscanParams;

use crate::error::{LabError, Result};

pub const SEED_ENV: &str = "SEMCOM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Bundle directories.
    pub corpus: Vec<PathBuf>,
    pub users: Vec<UserSpec>,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub jpsq: JpsqSection,
    /// Threshold per part-of-speech tag, plus `default`.
    #[serde(default = "default_xi")]
    pub xi_scheme: BTreeMap<String, f64>,
    #[serde(default)]
    pub dbscan: DbscanSection,
    #[serde(default)]
    pub scorer: ScorerSection,
    #[serde(default)]
    pub add: AddSection,
    #[serde(default)]
    pub seed: u64,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    /// Index into `corpus`.
    pub bundle: usize,
    #[serde(default = "default_distance")]
    pub distance_m: f64,
    #[serde(default = "default_latency")]
    pub latency_s: f64,
    #[serde(default)]
    pub interference_w: f64,
    /// Fixed fading gain; drawn from the channel seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fading: Option<f64>,
}

fn default_distance() -> f64 {
    100.0
}

fn default_latency() -> f64 {
    0.1
}

fn default_xi() -> BTreeMap<String, f64> {
    BTreeMap::from([("PROPN".into(), 0.9), ("NN".into(), 0.8), ("default".into(), 0.5)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[allow(non_snake_case)]
pub struct ChannelSection {
    pub W_hz: f64,
    pub P_w: f64,
    pub N0_w_per_hz: f64,
    pub bits_per_token: f64,
    pub O: f64,
    /// Seed of the fading draws; the scenario seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let c = ChannelConfig::default();
        Self {
            W_hz: c.bandwidth_hz,
            P_w: c.power_w,
            N0_w_per_hz: c.noise_w_per_hz,
            bits_per_token: c.bits_per_token,
            O: c.token_cost,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JpsqSection {
    pub omega0: f64,
    pub q_th: f64,
    pub t_max: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub penalty: f64,
}

impl Default for JpsqSection {
    fn default() -> Self {
        let p = JpsqParams::default();
        Self {
            omega0: p.omega0,
            q_th: p.q_th,
            t_max: p.t_max,
            omega1: p.omega1,
            omega2: p.omega2,
            penalty: p.penalty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbscanSection {
    pub eps: f64,
    pub min_points: usize,
    pub min_cluster_size: usize,
}

impl Default for DbscanSection {
    fn default() -> Self {
        let d = DbscanParams::default();
        Self {
            eps: d.eps,
            min_points: d.min_points,
            min_cluster_size: d.min_cluster_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScorerSection {
    Proxy {
        #[serde(default = "default_t_max")]
        t_max: f64,
        #[serde(default = "default_q_src")]
        q_src: f64,
        #[serde(default = "default_q_lb")]
        q_lb: f64,
    },
    /// Score-table CSV keyed by each bundle's `source_image_id`.
    Table { path: PathBuf },
}

fn default_t_max() -> f64 {
    ProxyScorer::default().t_max
}

fn default_q_src() -> f64 {
    ProxyScorer::default().q_src
}

fn default_q_lb() -> f64 {
    ProxyScorer::default().q_lb
}

impl Default for ScorerSection {
    fn default() -> Self {
        let p = ProxyScorer::default();
        ScorerSection::Proxy {
            t_max: p.t_max,
            q_src: p.q_src,
            q_lb: p.q_lb,
        }
    }
}

/// Where the allocator trains and is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvSection {
    /// Seeded score-table environment with closed-form curves.
    Synthetic {
        #[serde(default = "default_syn_users")]
        users: usize,
        #[serde(default = "default_images")]
        images_per_user: usize,
        #[serde(default = "default_kappa_min")]
        kappa_min: f64,
        #[serde(default = "default_kappa_max")]
        kappa_max: f64,
        #[serde(default = "default_breakpoints")]
        breakpoints: usize,
    },
    /// The scenario's own users: fixed bundles, fading redrawn per state.
    Scenario,
}

fn default_syn_users() -> usize {
    SyntheticSpec::default().users
}

fn default_images() -> usize {
    SyntheticSpec::default().images_per_user
}

fn default_kappa_min() -> f64 {
    SyntheticSpec::default().kappa_min
}

fn default_kappa_max() -> f64 {
    SyntheticSpec::default().kappa_max
}

fn default_breakpoints() -> usize {
    SyntheticSpec::default().breakpoints
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection::Synthetic {
            users: default_syn_users(),
            images_per_user: default_images(),
            kappa_min: default_kappa_min(),
            kappa_max: default_kappa_max(),
            breakpoints: default_breakpoints(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AddSection {
    /// Denoising steps T.
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub gamma: f64,
    pub lr: f64,
    pub batch: usize,
    pub episodes: usize,
    pub buffer_capacity: usize,
    pub sync_period: usize,
    pub hidden: Vec<usize>,
    pub explore_start: f64,
    pub explore_end: f64,
    pub reward_scale: f64,
    pub token_scale: f64,
    pub warmup: usize,
    pub preact_penalty: f64,
    pub policy_delay: usize,
    pub updates_per_episode: usize,
    /// Optional cap on the summed allocation, off when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_budget: Option<f64>,
    pub eval_states: usize,
    pub env: EnvSection,
}

impl Default for AddSection {
    fn default() -> Self {
        let c = AddConfig::default();
        Self {
            steps: c.steps,
            beta_start: c.beta_start,
            beta_end: c.beta_end,
            gamma: c.gamma,
            lr: c.lr,
            batch: c.batch,
            episodes: c.episodes,
            buffer_capacity: c.buffer_capacity,
            sync_period: c.sync_period,
            hidden: c.hidden,
            explore_start: c.explore_start,
            explore_end: c.explore_end,
            reward_scale: c.reward_scale,
            token_scale: c.token_scale,
            warmup: c.warmup,
            preact_penalty: c.preact_penalty,
            policy_delay: c.policy_delay,
            updates_per_episode: c.updates_per_episode,
            total_budget: None,
            eval_states: 200,
            env: EnvSection::default(),
        }
    }
}

impl AddSection {
    pub fn config(&self) -> AddConfig {
        AddConfig {
            steps: self.steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            gamma: self.gamma,
            lr: self.lr,
            batch: self.batch,
            episodes: self.episodes,
            buffer_capacity: self.buffer_capacity,
            sync_period: self.sync_period,
            hidden: self.hidden.clone(),
            explore_start: self.explore_start,
            explore_end: self.explore_end,
            reward_scale: self.reward_scale,
            token_scale: self.token_scale,
            warmup: self.warmup,
            preact_penalty: self.preact_penalty,
            policy_delay: self.policy_delay,
            updates_per_episode: self.updates_per_episode,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> LabError {
    LabError::Config(e.to_string())
}

impl Scenario {
    /// Reads, applies `SEMCOM_SEED` and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let seed = std::env::var(SEED_ENV).ok();
        Self::parse(&text, base, seed.as_deref())
    }

    pub fn parse(text: &str, base_dir: PathBuf, seed_override: Option<&str>) -> Result<Self> {
        let mut s: Scenario = serde_json::from_str(text).map_err(|e| config_err(format!("scenario: {e}")))?;
        s.base_dir = base_dir;
        if let Some(seed) = seed_override {
            s.seed = seed
                .trim()
                .parse()
                .map_err(|_| config_err(format!("{SEED_ENV}=`{seed}` is not an unsigned integer")))?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users.is_empty() {
            return Err(config_err("users: at least one user is required"));
        }
        for (i, u) in self.users.iter().enumerate() {
            if u.bundle >= self.corpus.len() {
                return Err(config_err(format!(
                    "users[{i}].bundle: {} does not name one of the {} corpus bundles",
                    u.bundle,
                    self.corpus.len()
                )));
            }
            self.link(i, u.fading.unwrap_or(1.0))
                .validate()
                .map_err(|e| config_err(format!("users[{i}]: {e}")))?;
        }
        self.channel_config().validate().map_err(config_err)?;
        self.jpsq_params().validate().map_err(config_err)?;
        self.xi().and_then(|x| x.validate().map_err(config_err))?;
        self.dbscan_params().validate().map_err(config_err)?;
        self.add.config().validate().map_err(config_err)?;
        if let ScorerSection::Proxy { t_max, q_src, q_lb } = self.scorer {
            if !(t_max > 0.0 && (1.0..=10.0).contains(&q_lb) && q_lb <= q_src && q_src <= 10.0) {
                return Err(config_err("scorer: need t_max > 0 and 1 <= q_lb <= q_src <= 10"));
            }
        }
        if let EnvSection::Synthetic {
            users,
            images_per_user,
            breakpoints,
            ..
        } = self.add.env
        {
            if users == 0 || images_per_user == 0 || breakpoints < 2 {
                return Err(config_err(
                    "add.env: users and images must be positive, breakpoints at least 2",
                ));
            }
        }
        if self.add.eval_states == 0 {
            return Err(config_err("add.eval_states must be positive"));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn bundle_path(&self, user: usize) -> PathBuf {
        self.resolve(&self.corpus[self.users[user].bundle])
    }

    pub fn channel_config(&self) -> ChannelConfig {
        let c = &self.channel;
        ChannelConfig {
            bandwidth_hz: c.W_hz,
            power_w: c.P_w,
            noise_w_per_hz: c.N0_w_per_hz,
            bits_per_token: c.bits_per_token,
            token_cost: c.O,
        }
    }

    pub fn channel_seed(&self) -> u64 {
        self.channel.seed.unwrap_or(self.seed)
    }

    pub fn link(&self, user: usize, fading: f64) -> UserLink {
        let u = &self.users[user];
        UserLink {
            distance_m: u.distance_m,
            fading,
            interference_w: u.interference_w,
            latency_s: u.latency_s,
        }
    }

    pub fn jpsq_params(&self) -> JpsqParams {
        let j = &self.jpsq;
        JpsqParams {
            omega0: j.omega0,
            q_th: j.q_th,
            t_max: j.t_max,
            omega1: j.omega1,
            omega2: j.omega2,
            penalty: j.penalty,
        }
    }

    pub fn xi(&self) -> Result<XiScheme> {
        let mut scheme = XiScheme::uniform(0.5);
        for (key, &v) in &self.xi_scheme {
            if key == "default" {
                scheme.default = v;
            } else {
                let pos: Pos = key
                    .parse()
                    .map_err(|_| config_err(format!("xi_scheme: unknown part-of-speech tag `{key}`")))?;
                scheme.by_pos.insert(pos, v);
            }
        }
        Ok(scheme)
    }

    pub fn dbscan_params(&self) -> DbscanParams {
        DbscanParams {
            eps: self.dbscan.eps,
            min_points: self.dbscan.min_points,
            min_cluster_size: self.dbscan.min_cluster_size,
        }
    }

    /// SHA-256 of the canonical JSON form (paths as written, seed after
    /// any override).
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("scenario serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
