//! Perceptual scoring: similarity distance `D`, aesthetic quality `Q`, their
//! Weber-Fechner fusion (JPSQ) and the per-user utility the allocator
//! maximizes.
//!
//! The learned similarity and quality networks are abstracted behind
//! [`ScorerOracle`]. Two implementations ship here: [`ProxyScorer`], a
//! closed-form stand-in driven by importance-weighted coverage, and
//! [`ScoreTable`], piecewise-linear lookup into measured `(D, Q)` sweeps.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::packing::{truncate, SemanticInfo, TransmittedPrefix};
use crate::{Error, Result};

/// Probabilities of aesthetic scores 1 through 10.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityDistribution {
    probs: [f64; 10],
}

impl QualityDistribution {
    pub fn new(probs: [f64; 10]) -> Result<Self> {
        if probs.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::param("c", "probabilities must be non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param("c", alloc::format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64; 10] {
        &self.probs
    }
}

/// Mean and standard deviation of the score distribution.
pub fn nima_moments(dist: &QualityDistribution) -> (f64, f64) {
    let scored = || dist.probs.iter().enumerate().map(|(i, &c)| ((i + 1) as f64, c));
    let mu: f64 = scored().map(|(s, c)| s * c).sum();
    let var: f64 = scored().map(|(s, c)| (s - mu) * (s - mu) * c).sum();
    (mu, libm::sqrt(var))
}

pub fn cosine_distance(f0: &[f64], f1: &[f64]) -> Result<f64> {
    if f0.len() != f1.len() {
        return Err(Error::param("features", "length mismatch"));
    }
    let dot: f64 = f0.iter().zip(f1).map(|(a, b)| a * b).sum();
    let n0 = libm::sqrt(f0.iter().map(|a| a * a).sum());
    let n1 = libm::sqrt(f1.iter().map(|a| a * a).sum());
    if n0 == 0.0 || n1 == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(1.0 - dot / (n0 * n1))
}

/// Maps a similarity distance onto `[0, 1]`, 1 meaning identical. The lower
/// bound of the distance is 0; values outside `[0, t_max]` are clamped.
pub fn normalize_similarity(t: f64, t_max: f64) -> f64 {
    ((t_max - t) / t_max).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JpsqParams {
    pub omega0: f64,
    pub q_th: f64,
    pub t_max: f64,
    pub omega1: f64,
    pub omega2: f64,
    /// Utility assigned to infeasible allocations; negative.
    pub penalty: f64,
}

impl Default for JpsqParams {
    fn default() -> Self {
        Self {
            omega0: 1.25,
            q_th: 4.9827,
            t_max: 1.0,
            omega1: 500.0,
            omega2: 0.05,
            penalty: -500.0,
        }
    }
}

impl JpsqParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega0", self.omega0),
            ("q_th", self.q_th),
            ("t_max", self.t_max),
            ("omega1", self.omega1),
            ("omega2", self.omega2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if !(self.penalty < 0.0) {
            return Err(Error::param("penalty", "must be negative"));
        }
        Ok(())
    }
}

/// `𝒯(D) · ln(ω0 · Q / Q_th)`; negative when `ω0 · Q < Q_th`.
pub fn jpsq(d: f64, q: f64, params: &JpsqParams) -> f64 {
    let similarity = normalize_similarity(d, params.t_max);
    if similarity == 0.0 {
        return 0.0;
    }
    // Divide by the break-even quality so that Q = Q_th / ω0 gives exactly 0.
    similarity * libm::log(q / (params.q_th / params.omega0))
}

/// `ω1 · JPSQ · [Q ≥ Q_th] − ω2 · b` for `0 ≤ b ≤ cap`, the penalty
/// otherwise.
pub fn user_utility(jpsq_value: f64, q: f64, tokens: f64, cap: f64, params: &JpsqParams) -> f64 {
    if !(0.0..=cap).contains(&tokens) {
        return params.penalty;
    }
    let gated = if q >= params.q_th { jpsq_value } else { 0.0 };
    params.omega1 * gated - params.omega2 * tokens
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    /// Similarity distance to the source, ≥ 0.
    pub d: f64,
    /// Aesthetic quality in [1, 10].
    pub q: f64,
}

/// What a scorer sees: the source image key, its packed semantic
/// information, and the prefix that actually went out.
#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub image_id: &'a str,
    pub info: &'a SemanticInfo,
    pub prefix: &'a TransmittedPrefix,
}

pub trait ScorerOracle: Sync {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<Score>;
}

/// Deterministic stand-in for the learned metrics.
///
/// With `c` the importance-weighted coverage of the clean segments,
/// `D = t_max · (1 − c)` and `Q = Q_lb + (Q_src − Q_lb) · (1 − (1 − c)²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyScorer {
    pub t_max: f64,
    pub q_src: f64,
    pub q_lb: f64,
}

impl Default for ProxyScorer {
    fn default() -> Self {
        Self {
            t_max: 1.0,
            q_src: 5.2651,
            q_lb: 4.9827,
        }
    }
}

impl ProxyScorer {
    /// Importance-weighted coverage, renormalized over words whose clean
    /// segment is non-empty. Information with nothing to send counts as
    /// fully delivered.
    pub fn coverage(info: &SemanticInfo, prefix: &TransmittedPrefix) -> f64 {
        let mut weight = 0.0;
        let mut covered = 0.0;
        for (seg, &s) in info.segments.iter().zip(&info.weights) {
            if seg.is_empty() {
                continue;
            }
            weight += s;
            covered += s * prefix.coverage_of(seg.word_index).unwrap_or(0.0);
        }
        if weight == 0.0 {
            1.0
        } else {
            (covered / weight).clamp(0.0, 1.0)
        }
    }

    pub fn score_coverage(&self, coverage: f64) -> Score {
        let c = coverage.clamp(0.0, 1.0);
        let miss = 1.0 - c;
        Score {
            d: self.t_max * miss,
            q: (self.q_lb + (self.q_src - self.q_lb) * (1.0 - miss * miss)).clamp(1.0, 10.0),
        }
    }
}

impl ScorerOracle for ProxyScorer {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<Score> {
        Ok(self.score_coverage(Self::coverage(request.info, request.prefix)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakpoint {
    pub tokens: f64,
    pub dreamsim: f64,
    pub nima_mu: f64,
}

/// Measured `(D, Q)` per image at increasing token budgets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    rows: BTreeMap<String, Vec<Breakpoint>>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a row; rows of one image must arrive with strictly increasing
    /// token counts.
    pub fn push(&mut self, image_id: &str, bp: Breakpoint) -> Result<()> {
        let rows = self.rows.entry(image_id.into()).or_default();
        if let Some(last) = rows.last() {
            if !(bp.tokens > last.tokens) {
                return Err(Error::param(
                    "tokens",
                    alloc::format!("rows for `{image_id}` must be sorted by strictly increasing tokens"),
                ));
            }
        }
        rows.push(bp);
        Ok(())
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn breakpoints(&self, image_id: &str) -> Result<&[Breakpoint]> {
        self.rows
            .get(image_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownImage(image_id.into()))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &Breakpoint)> {
        self.rows
            .iter()
            .flat_map(|(id, bps)| bps.iter().map(move |bp| (id.as_str(), bp)))
    }

    /// Piecewise-linear interpolation between the nearest breakpoints,
    /// constant beyond either end.
    pub fn lookup(&self, image_id: &str, tokens: f64) -> Result<Score> {
        let bps = self.breakpoints(image_id)?;
        let first = bps[0];
        let last = bps[bps.len() - 1];
        let at = |bp: &Breakpoint| Score {
            d: bp.dreamsim,
            q: bp.nima_mu,
        };
        if tokens <= first.tokens {
            return Ok(at(&first));
        }
        if tokens >= last.tokens {
            return Ok(at(&last));
        }
        let hi = bps.partition_point(|bp| bp.tokens < tokens);
        let (a, b) = (bps[hi - 1], bps[hi]);
        if b.tokens == tokens {
            return Ok(at(&b));
        }
        let w = (tokens - a.tokens) / (b.tokens - a.tokens);
        Ok(Score {
            d: a.dreamsim + w * (b.dreamsim - a.dreamsim),
            q: a.nima_mu + w * (b.nima_mu - a.nima_mu),
        })
    }
}

impl ScorerOracle for ScoreTable {
    fn score(&self, request: &ScoreRequest<'_>) -> Result<Score> {
        self.lookup(request.image_id, request.prefix.tokens_used as f64)
    }
}

/// Mean distance between each source and its empty-prefix reconstruction,
/// over the first `n` corpus items.
pub fn calibrate_tmax<S: ScorerOracle + ?Sized>(scorer: &S, corpus: &[(&str, &SemanticInfo)], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let items = &corpus[..n.min(corpus.len())];
    if items.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    for &(image_id, info) in items {
        let prefix = truncate(info, 0);
        total += scorer
            .score(&ScoreRequest {
                image_id,
                info,
                prefix: &prefix,
            })?
            .d;
    }
    Ok(total / items.len() as f64)
}
