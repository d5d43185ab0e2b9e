use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::grid::Pixel;
use crate::{Error, Result};

/// Side of the downsampled semantic map.
pub const GRID: usize = 16;
pub const GRID_CELLS: usize = GRID * GRID;

/// One user's share of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSlot {
    /// Row-major 16×16 OR-pooled union mask.
    pub grid: Vec<bool>,
    pub info_tokens: f64,
    /// Token budget allowed by the channel.
    pub cap: f64,
    /// Key into the scorer for this user's image.
    pub image_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocState {
    pub users: Vec<UserSlot>,
}

impl AllocState {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn caps(&self) -> Vec<f64> {
        self.users.iter().map(|u| u.cap).collect()
    }

    /// Network input: all grid bits, then `[cap, info]` per user divided by
    /// `token_scale`.
    pub fn features(&self, token_scale: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.users.len() * (GRID_CELLS + 2));
        for u in &self.users {
            out.extend(u.grid.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        }
        for u in &self.users {
            out.push(u.cap / token_scale);
            out.push(u.info_tokens / token_scale);
        }
        out
    }

    pub fn feature_len(users: usize) -> usize {
        users * (GRID_CELLS + 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocAction {
    /// Tokens per user, each within `[0, cap]`.
    pub tokens: Vec<f64>,
}

impl AllocAction {
    /// Scales fractions in `[0, 1]` by the caps, clamping so the bounds hold
    /// exactly.
    pub fn from_fractions(fractions: &[f64], caps: &[f64]) -> Self {
        let tokens = fractions
            .iter()
            .zip(caps)
            .map(|(&f, &cap)| (f.clamp(0.0, 1.0) * cap).clamp(0.0, cap))
            .collect();
        Self { tokens }
    }

    pub fn fractions(&self, caps: &[f64]) -> Vec<f64> {
        self.tokens
            .iter()
            .zip(caps)
            .map(|(&b, &cap)| if cap > 0.0 { (b / cap).clamp(0.0, 1.0) } else { 0.0 })
            .collect()
    }
}

/// Block-wise OR pooling of a `width × height` mask to 16×16. Sizes not
/// divisible by 16 are padded with empty pixels.
pub fn pool_mask(pixels: impl IntoIterator<Item = Pixel>, width: usize, height: usize) -> Result<Vec<bool>> {
    if width == 0 || height == 0 {
        return Err(Error::ZeroArea);
    }
    let bw = width.div_ceil(GRID);
    let bh = height.div_ceil(GRID);
    let mut grid = vec![false; GRID_CELLS];
    for p in pixels {
        let (x, y) = (p.x as usize, p.y as usize);
        if x >= width || y >= height {
            return Err(Error::param(
                "mask",
                alloc::format!("pixel ({x}, {y}) outside {width}x{height}"),
            ));
        }
        grid[(y / bh) * GRID + x / bw] = true;
    }
    Ok(grid)
}

/// Input for one user when building a state.
#[derive(Debug, Clone)]
pub struct UserInput<'a> {
    pub image_id: &'a str,
    pub width: usize,
    pub height: usize,
    /// Union of the user's clean segments at source resolution.
    pub mask: &'a [Pixel],
    pub info_tokens: usize,
    pub cap: usize,
}

pub fn make_state(users: &[UserInput<'_>]) -> Result<AllocState> {
    let users = users
        .iter()
        .map(|u| {
            Ok(UserSlot {
                grid: pool_mask(u.mask.iter().copied(), u.width, u.height)?,
                info_tokens: u.info_tokens as f64,
                cap: u.cap.min(u.info_tokens) as f64,
                image_id: u.image_id.into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AllocState { users })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_examples() {
        assert!(pool_mask([], 512, 512).unwrap().iter().all(|b| !b));
        let full = (0..32u32).flat_map(|y| (0..32u32).map(move |x| Pixel::new(x, y)));
        assert!(pool_mask(full, 32, 32).unwrap().iter().all(|&b| b));

        let g = pool_mask([Pixel::new(0, 0)], 512, 512).unwrap();
        assert!(g[0]);
        assert_eq!(g.iter().filter(|&&b| b).count(), 1);

        let g = pool_mask([Pixel::new(511, 511)], 512, 512).unwrap();
        assert!(g[GRID_CELLS - 1]);
    }

    #[test]
    fn pooling_pads_odd_sizes() {
        // 100 wide: blocks of 7, the last cell covers 105..112 which is all padding
        let g = pool_mask([Pixel::new(99, 0)], 100, 100).unwrap();
        assert!(g[14]);
        assert!(pool_mask([Pixel::new(0, 0)], 5, 3).unwrap()[0]);
        assert!(pool_mask([Pixel::new(5, 0)], 5, 3).is_err());
    }

    #[test]
    fn state_shape_and_projection() {
        let mask = [Pixel::new(3, 3)];
        let s = make_state(&[
            UserInput {
                image_id: "a",
                width: 64,
                height: 64,
                mask: &mask,
                info_tokens: 100,
                cap: 500,
            },
            UserInput {
                image_id: "b",
                width: 64,
                height: 64,
                mask: &[],
                info_tokens: 0,
                cap: 50,
            },
        ])
        .unwrap();
        assert_eq!(s.features(1.0).len(), AllocState::feature_len(2));
        assert_eq!(s.caps(), vec![100.0, 0.0]);
        let a = AllocAction::from_fractions(&[1.5, 0.7], &s.caps());
        assert_eq!(a.tokens, vec![100.0, 0.0]);
    }
}
