//! Semantic information packing.
//!
//! Clean segments are ordered by descending importance; each block keeps
//! only the pixels no earlier block has claimed, so the concatenated
//! stream sends every pixel once, most important words first.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::grid::Pixel;
use crate::prompt::ImportanceVector;
use crate::segmentation::CleanSegment;
use crate::{Error, Result};

/// Bytes per token on the wire: x and y as little-endian `u32`, then RGB.
pub const TOKEN_BYTES: usize = 11;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub word_index: usize,
    /// Row-major sorted.
    pub pixels: Vec<Pixel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticInfo {
    /// In transmission order.
    pub blocks: Vec<Block>,
    pub total_tokens: usize,
    /// Source segments in transmission order, used for coverage accounting.
    pub segments: Vec<CleanSegment>,
    /// Importance of each block's word, aligned with `blocks`.
    pub weights: Vec<f64>,
}

impl SemanticInfo {
    /// The flattened token stream.
    pub fn stream(&self) -> impl Iterator<Item = Pixel> + '_ {
        self.blocks.iter().flat_map(|b| b.pixels.iter().copied())
    }

    pub fn reduction_ratio(&self, image: (usize, usize)) -> Result<f64> {
        reduction_ratio(self.total_tokens, image)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmittedPrefix {
    pub pixels: Vec<Pixel>,
    pub tokens_used: usize,
    /// `(word_index, fraction of that word's clean segment delivered)`, in
    /// transmission order.
    pub coverage: Vec<(usize, f64)>,
}

impl TransmittedPrefix {
    pub fn coverage_of(&self, word_index: usize) -> Option<f64> {
        self.coverage.iter().find(|(w, _)| *w == word_index).map(|(_, c)| *c)
    }
}

/// Orders segments by importance (ties by prompt position) and removes
/// pixels already claimed by earlier blocks.
pub fn pack(segments: &[CleanSegment], importance: &ImportanceVector) -> Result<SemanticInfo> {
    let mut ranked: Vec<(f64, &CleanSegment)> = Vec::with_capacity(segments.len());
    for seg in segments {
        let s = importance.of(seg.word_index).ok_or(Error::OrderMismatch)?;
        ranked.push((s, seg));
    }
    if ranked.len() != importance.order.len() {
        return Err(Error::OrderMismatch);
    }
    ranked.sort_by_key(|(_, seg)| seg.word_index);
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut claimed = BTreeSet::new();
    let mut blocks = Vec::with_capacity(ranked.len());
    let mut total_tokens = 0;
    for (_, seg) in &ranked {
        let mut pixels: Vec<Pixel> = seg.pixels.iter().copied().filter(|p| claimed.insert(*p)).collect();
        pixels.sort_unstable();
        total_tokens += pixels.len();
        blocks.push(Block {
            word_index: seg.word_index,
            pixels,
        });
    }
    Ok(SemanticInfo {
        blocks,
        total_tokens,
        weights: ranked.iter().map(|(s, _)| *s).collect(),
        segments: ranked.into_iter().map(|(_, seg)| seg.clone()).collect(),
    })
}

/// The first `budget_tokens` tokens of the stream.
pub fn truncate(info: &SemanticInfo, budget_tokens: usize) -> TransmittedPrefix {
    let pixels: Vec<Pixel> = info.stream().take(budget_tokens).collect();
    let sent: BTreeSet<Pixel> = pixels.iter().copied().collect();
    let coverage = info
        .segments
        .iter()
        .map(|seg| {
            let frac = if seg.is_empty() {
                0.0
            } else {
                seg.pixels.iter().filter(|p| sent.contains(p)).count() as f64 / seg.len() as f64
            };
            (seg.word_index, frac)
        })
        .collect();
    TransmittedPrefix {
        tokens_used: pixels.len(),
        pixels,
        coverage,
    }
}

/// Fraction of the image that does not need to be sent.
pub fn reduction_ratio(total_tokens: usize, (width, height): (usize, usize)) -> Result<f64> {
    let area = width * height;
    if area == 0 {
        return Err(Error::ZeroArea);
    }
    Ok(1.0 - total_tokens as f64 / area as f64)
}

pub fn encode_token(pixel: Pixel, rgb: [u8; 3]) -> [u8; TOKEN_BYTES] {
    let mut out = [0u8; TOKEN_BYTES];
    out[0..4].copy_from_slice(&pixel.x.to_le_bytes());
    out[4..8].copy_from_slice(&pixel.y.to_le_bytes());
    out[8..11].copy_from_slice(&rgb);
    out
}

pub fn decode_token(bytes: &[u8; TOKEN_BYTES]) -> (Pixel, [u8; 3]) {
    let x = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let y = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    (Pixel::new(x, y), [bytes[8], bytes[9], bytes[10]])
}
