//! OFDMA downlink: each user holds one resource block, and its Shannon
//! capacity times the latency budget bounds how many tokens it can receive.

use alloc::vec::Vec;

use crate::rng::{self, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    /// Resource-block bandwidth, Hz.
    pub bandwidth_hz: f64,
    /// Transmit power, W.
    pub power_w: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_w_per_hz: f64,
    pub bits_per_token: f64,
    /// Bandwidth cost per token.
    pub token_cost: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 1.0e6,
            power_w: 1.0,
            noise_w_per_hz: 1.0e-16,
            bits_per_token: 88.0,
            token_cost: 1.0,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("W_hz", self.bandwidth_hz),
            ("P_w", self.power_w),
            ("N0_w_per_hz", self.noise_w_per_hz),
            ("bits_per_token", self.bits_per_token),
            ("O", self.token_cost),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be strictly positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserLink {
    pub distance_m: f64,
    /// Rayleigh fading draw.
    pub fading: f64,
    pub interference_w: f64,
    pub latency_s: f64,
}

impl UserLink {
    pub fn validate(&self) -> Result<()> {
        if !(self.distance_m > 0.0) {
            return Err(Error::param("distance_m", "must be positive"));
        }
        if !(self.latency_s > 0.0) {
            return Err(Error::param("latency_s", "must be positive"));
        }
        if !(self.fading >= 0.0) || !(self.interference_w >= 0.0) {
            return Err(Error::param("fading/interference_w", "must be non-negative"));
        }
        Ok(())
    }
}

/// Path loss with Rayleigh fading: `γ · d⁻²`.
pub fn channel_gain(link: &UserLink) -> f64 {
    link.fading / (link.distance_m * link.distance_m)
}

/// Shannon capacity of the user's resource block, bits/s.
pub fn capacity(cfg: &ChannelConfig, link: &UserLink) -> f64 {
    let gain = channel_gain(link);
    let snr = cfg.power_w * gain / (link.interference_w + cfg.bandwidth_hz * cfg.noise_w_per_hz);
    cfg.bandwidth_hz * libm::log2(1.0 + snr)
}

/// Tokens deliverable within the latency budget, capped by the size of the
/// semantic information.
pub fn token_budget(cfg: &ChannelConfig, link: &UserLink, info_tokens: usize) -> usize {
    let deliverable = link.latency_s * capacity(cfg, link) / cfg.bits_per_token;
    let bound = deliverable.min(cfg.token_cost * info_tokens as f64);
    let tokens = libm::floor(bound / cfg.token_cost);
    if tokens <= 0.0 {
        0
    } else {
        (tokens as usize).min(info_tokens)
    }
}

/// Unit-scale Rayleigh draws by inversion: `√(−2 ln u)`, `u ∈ (0, 1]`.
pub fn sample_rayleigh(rng: &mut SimRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| libm::sqrt(-2.0 * libm::log(rng::open_unit(rng))))
        .collect()
}
