//! Prompt annotations and per-word attention maps.
//!
//! A [`SemComBundle`] is everything the extraction pipeline needs for one
//! prompt: the words with their part-of-speech tags and dependency arcs,
//! and one attention map per word. Maps arrive either pre-aggregated, as
//! binary masks, or as raw per-step/per-block/per-head score grids that are
//! upscaled and summed by [`aggregate_attention`].

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::grid::Pixel;
use crate::{Error, Result};

pub const BUNDLE_VERSION: u32 = 1;

/// Part-of-speech classes. Everything without semantic weight is `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pos {
    Nn,
    Propn,
    Num,
    Adj,
    Verb,
    Adv,
    Adp,
    X,
}

impl Pos {
    pub const ALL: [Pos; 8] = [
        Pos::Nn,
        Pos::Propn,
        Pos::Num,
        Pos::Adj,
        Pos::Verb,
        Pos::Adv,
        Pos::Adp,
        Pos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pos::Nn => "NN",
            Pos::Propn => "PROPN",
            Pos::Num => "NUM",
            Pos::Adj => "ADJ",
            Pos::Verb => "VERB",
            Pos::Adv => "ADV",
            Pos::Adp => "ADP",
            Pos::X => "X",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pos::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::bundle("pos", format!("unknown part-of-speech tag `{s}`")))
    }
}

/// One prompt word with its tag and dependency arc.
#[derive(Debug, Clone, PartialEq)]
pub struct WordAnnotation {
    pub index: usize,
    pub text: String,
    pub pos: Pos,
    /// Index of the dependency head; `None` for the root.
    pub head: Option<usize>,
    pub dep_label: String,
}

impl WordAnnotation {
    pub fn new(index: usize, text: &str, pos: Pos, head: Option<usize>, dep_label: &str) -> Self {
        Self {
            index,
            text: text.into(),
            pos,
            head,
            dep_label: dep_label.into(),
        }
    }
}

/// Non-negative cross-modal attention map at source-image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub word_index: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major, `values[y * width + x]`.
    pub values: Vec<f32>,
}

impl AttentionMap {
    pub fn new(word_index: usize, width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::bundle(
                format!("maps[{word_index}].values"),
                format!("expected {} values, got {}", width * height, values.len()),
            ));
        }
        Ok(Self {
            word_index,
            width,
            height,
            values,
        })
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(0.0, f32::max)
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Thresholded attention map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryAttentionMap {
    pub word_index: usize,
    pub width: usize,
    pub height: usize,
    /// Row-major, `mask[y * width + x]`.
    pub mask: Vec<bool>,
}

impl BinaryAttentionMap {
    pub fn new(word_index: usize, width: usize, height: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != width * height {
            return Err(Error::bundle(
                format!("maps[{word_index}].mask"),
                format!("expected {} cells, got {}", width * height, mask.len()),
            ));
        }
        Ok(Self {
            word_index,
            width,
            height,
            mask,
        })
    }

    pub fn from_pixels(
        word_index: usize,
        width: usize,
        height: usize,
        pixels: impl IntoIterator<Item = Pixel>,
    ) -> Self {
        let mut mask = vec![false; width * height];
        for p in pixels {
            mask[p.linear(width)] = true;
        }
        Self {
            word_index,
            width,
            height,
            mask,
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    /// Set pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        let width = self.width;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| Pixel::from_linear(i, width))
    }

    pub fn pixel_set(&self) -> BTreeSet<Pixel> {
        self.pixels().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Down,
    Up,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Down => "down",
            Direction::Up => "up",
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "down" => Ok(Direction::Down),
            "up" => Ok(Direction::Up),
            other => Err(Error::bundle(
                "direction",
                format!("expected `down` or `up`, got `{other}`"),
            )),
        }
    }
}

/// One softmax-normalized cross-attention grid at its native resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEntry {
    pub step: u32,
    pub block: u32,
    pub head: u32,
    pub direction: Direction,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

/// Raw cross-attention scores for one word across denoising steps, UNet
/// blocks, heads and both sampling directions. Missing combinations
/// contribute nothing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawScoreStack {
    pub entries: Vec<RawEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WordMap {
    Aggregated(AttentionMap),
    Binary(BinaryAttentionMap),
    Raw { word_index: usize, stack: RawScoreStack },
}

impl WordMap {
    pub fn word_index(&self) -> usize {
        match self {
            WordMap::Aggregated(m) => m.word_index,
            WordMap::Binary(m) => m.word_index,
            WordMap::Raw { word_index, .. } => *word_index,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WordMap::Aggregated(_) => "aggregated",
            WordMap::Binary(_) => "binary",
            WordMap::Raw { .. } => "raw",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemComBundle {
    pub version: u32,
    pub prompt: String,
    pub image_width: usize,
    pub image_height: usize,
    pub words: Vec<WordAnnotation>,
    pub maps: Vec<WordMap>,
    pub source_image_id: Option<String>,
}

impl SemComBundle {
    /// Checks every structural invariant, naming the first offending field.
    pub fn validate(&self) -> Result<()> {
        if self.version != BUNDLE_VERSION {
            return Err(Error::UnsupportedVersion(self.version));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::bundle("image_width/image_height", "must be positive"));
        }
        validate_words(&self.words)?;

        let m = self.words.len();
        if self.maps.len() != m {
            return Err(Error::bundle(
                "maps",
                format!("expected one map per word ({m}), got {}", self.maps.len()),
            ));
        }
        let mut seen = vec![false; m];
        for map in &self.maps {
            let wi = map.word_index();
            if wi >= m {
                return Err(Error::bundle(
                    format!("maps[{wi}].word_index"),
                    format!("out of range for {m} words"),
                ));
            }
            if core::mem::replace(&mut seen[wi], true) {
                return Err(Error::bundle(
                    format!("maps[{wi}].word_index"),
                    "duplicate map for word",
                ));
            }
            self.validate_map(map)?;
        }
        Ok(())
    }

    fn validate_map(&self, map: &WordMap) -> Result<()> {
        let (w, h) = (self.image_width, self.image_height);
        let wi = map.word_index();
        let check_dims = |mw: usize, mh: usize| {
            if (mw, mh) != (w, h) {
                Err(Error::bundle(
                    format!("maps[{wi}]"),
                    format!("size {mw}x{mh} does not match image {w}x{h}"),
                ))
            } else {
                Ok(())
            }
        };
        match map {
            WordMap::Aggregated(a) => {
                check_dims(a.width, a.height)?;
                if a.values.len() != w * h {
                    return Err(Error::bundle(format!("maps[{wi}].values"), "length mismatch"));
                }
                if let Some(v) = a.values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::bundle(
                        format!("maps[{wi}].values"),
                        format!("attention values must be finite and non-negative, found {v}"),
                    ));
                }
            }
            WordMap::Binary(b) => {
                check_dims(b.width, b.height)?;
                if b.mask.len() != w * h {
                    return Err(Error::bundle(format!("maps[{wi}].mask"), "length mismatch"));
                }
            }
            WordMap::Raw { stack, .. } => {
                if stack.entries.is_empty() {
                    return Err(Error::bundle(format!("maps[{wi}].entries"), "empty raw stack"));
                }
                for (k, e) in stack.entries.iter().enumerate() {
                    if e.width == 0 || e.height == 0 || e.values.len() != e.width * e.height {
                        return Err(Error::bundle(
                            format!("maps[{wi}].entries[{k}]"),
                            "grid size does not match its values",
                        ));
                    }
                    if let Some(v) = e.values.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
                        return Err(Error::bundle(
                            format!("maps[{wi}].entries[{k}]"),
                            format!("score {v} outside [0, 1]"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// The map for `word_index`, aggregating raw stacks on the fly.
    /// Binary maps are returned as 0/1 attention.
    pub fn attention(&self, word_index: usize) -> Result<AttentionMap> {
        let map = self
            .maps
            .iter()
            .find(|m| m.word_index() == word_index)
            .ok_or_else(|| Error::bundle(format!("maps[{word_index}]"), "missing"))?;
        match map {
            WordMap::Aggregated(a) => Ok(a.clone()),
            WordMap::Binary(b) => Ok(AttentionMap {
                word_index,
                width: b.width,
                height: b.height,
                values: b.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
            }),
            WordMap::Raw { stack, .. } => aggregate_attention(word_index, stack, (self.image_width, self.image_height)),
        }
    }
}

fn validate_words(words: &[WordAnnotation]) -> Result<()> {
    let m = words.len();
    if m == 0 {
        return Err(Error::bundle("words", "prompt has no words"));
    }
    let mut roots = 0;
    for (i, w) in words.iter().enumerate() {
        if w.index != i {
            return Err(Error::bundle(
                format!("words[{i}].index"),
                format!("expected {i}, got {}", w.index),
            ));
        }
        match w.head {
            None => roots += 1,
            Some(h) if h >= m => {
                return Err(Error::bundle(
                    format!("words[{i}].head_index"),
                    format!("{h} out of range [0, {m})"),
                ))
            }
            Some(h) if h == i => {
                return Err(Error::bundle(
                    format!("words[{i}].head_index"),
                    "a word cannot be its own head",
                ))
            }
            Some(_) => {}
        }
    }
    if roots != 1 {
        return Err(Error::bundle(
            "words[].head_index",
            format!("expected exactly one root, found {roots}"),
        ));
    }
    Ok(())
}

/// Bicubic convolution kernel with `a = -0.5` (Catmull-Rom).
#[inline]
pub(crate) fn cubic_weight(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = libm::fabs(t);
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-axis tap table: for each output coordinate, four source indices
/// (border-clamped) and their weights. Pixel centers are aligned, so the
/// source coordinate of output `o` is `(o + 0.5) * in / out - 0.5`.
fn axis_taps(input: usize, output: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let u = (o as f64 + 0.5) * scale - 0.5;
            let base = libm::floor(u) as i64;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let src = base - 1 + k as i64;
                idx[k] = src.clamp(0, input as i64 - 1) as usize;
                wts[k] = cubic_weight(u - src as f64);
            }
            (idx, wts)
        })
        .collect()
}

/// Bicubic resize of a row-major grid. Output may overshoot the input range.
pub fn bicubic_resize(values: &[f32], (in_w, in_h): (usize, usize), (out_w, out_h): (usize, usize)) -> Vec<f64> {
    let xs = axis_taps(in_w, out_w);
    let ys = axis_taps(in_h, out_h);

    // horizontal pass: in_h rows of out_w
    let mut tmp = vec![0.0f64; in_h * out_w];
    for y in 0..in_h {
        let row = &values[y * in_w..(y + 1) * in_w];
        for (x, (idx, wts)) in xs.iter().enumerate() {
            tmp[y * out_w + x] = (0..4).map(|k| wts[k] * row[idx[k]] as f64).sum();
        }
    }
    let mut out = vec![0.0f64; out_w * out_h];
    for (y, (idx, wts)) in ys.iter().enumerate() {
        for x in 0..out_w {
            out[y * out_w + x] = (0..4).map(|k| wts[k] * tmp[idx[k] * out_w + x]).sum();
        }
    }
    out
}

/// Upscales every grid of the stack to `target` and sums them, without
/// clamping. Exposed for linearity checks; most callers want
/// [`aggregate_attention`].
pub fn aggregate_unclamped(stack: &RawScoreStack, target: (usize, usize)) -> Result<Vec<f64>> {
    if stack.entries.is_empty() {
        return Err(Error::EmptyStack);
    }
    let (w, h) = target;
    let mut acc = vec![0.0f64; w * h];
    for entry in &stack.entries {
        if entry.width == 0 || entry.height == 0 || entry.values.len() != entry.width * entry.height {
            return Err(Error::bundle(
                format!("entry(t={}, block={}, head={})", entry.step, entry.block, entry.head),
                "empty or inconsistent grid",
            ));
        }
        let up = bicubic_resize(&entry.values, (entry.width, entry.height), target);
        for (a, v) in acc.iter_mut().zip(up) {
            *a += v;
        }
    }
    Ok(acc)
}

/// Sums bicubically upscaled scores over steps, blocks, heads and both
/// directions, clamping bicubic undershoot at zero.
pub fn aggregate_attention(word_index: usize, stack: &RawScoreStack, target: (usize, usize)) -> Result<AttentionMap> {
    let acc = aggregate_unclamped(stack, target)?;
    Ok(AttentionMap {
        word_index,
        width: target.0,
        height: target.1,
        values: acc.into_iter().map(|v| v.max(0.0) as f32).collect(),
    })
}

/// Heaviside thresholding at `xi * max(map)`.
pub fn binarize(map: &AttentionMap, xi: f64) -> Result<BinaryAttentionMap> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::param("xi", format!("{xi} not in [0, 1]")));
    }
    let max = map.max();
    if max <= 0.0 {
        return Err(Error::DegenerateAttention {
            word_index: map.word_index,
        });
    }
    let threshold = xi * max as f64;
    Ok(BinaryAttentionMap {
        word_index: map.word_index,
        width: map.width,
        height: map.height,
        mask: map.values.iter().map(|&v| v as f64 >= threshold).collect(),
    })
}
