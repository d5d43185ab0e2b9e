//! End-to-end sender-side extraction: binarize each meaningful word's
//! attention, weigh the words, clean the masks and pack the result.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::bundle::{binarize, BinaryAttentionMap, Pos, SemComBundle};
use crate::packing::{pack, SemanticInfo};
use crate::prompt::{
    build_dependency_matrices, build_level_matrix, filter_words, importance, DependencyLevelMatrix, DependencyMatrix,
    ImportanceVector, Retained,
};
use crate::segmentation::{clean_segment, CleanSegment, DbscanParams};
use crate::{Error, Result};

/// Binarization threshold per part-of-speech class.
#[derive(Debug, Clone, PartialEq)]
pub struct XiScheme {
    pub by_pos: BTreeMap<Pos, f64>,
    pub default: f64,
}

impl Default for XiScheme {
    fn default() -> Self {
        let mut by_pos = BTreeMap::new();
        by_pos.insert(Pos::Propn, 0.9);
        by_pos.insert(Pos::Nn, 0.8);
        Self { by_pos, default: 0.5 }
    }
}

impl XiScheme {
    pub fn uniform(xi: f64) -> Self {
        Self {
            by_pos: BTreeMap::new(),
            default: xi,
        }
    }

    pub fn xi(&self, pos: Pos) -> f64 {
        self.by_pos.get(&pos).copied().unwrap_or(self.default)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.by_pos.values().chain(core::iter::once(&self.default));
        for &xi in all {
            if !(0.0..=1.0).contains(&xi) {
                return Err(Error::param("xi", alloc::format!("{xi} not in [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Every intermediate product of one pipeline run.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub retained: Retained,
    pub dependencies: DependencyMatrix,
    pub levels: DependencyLevelMatrix,
    pub importance: ImportanceVector,
    /// Binary maps of the retained words, in retained order.
    pub binary: Vec<BinaryAttentionMap>,
    /// Clean segments of the retained words, in retained order.
    pub segments: Vec<CleanSegment>,
    pub info: SemanticInfo,
}

pub fn run_pipeline(bundle: &SemComBundle, xi: &XiScheme, dbscan: &DbscanParams) -> Result<Extraction> {
    bundle.validate()?;
    xi.validate()?;
    dbscan.validate()?;

    let retained = filter_words(&bundle.words)?;
    let (_, dependencies) = build_dependency_matrices(&bundle.words, &retained);

    let binary = retained
        .indices
        .iter()
        .map(|&i| {
            let map = bundle.attention(i)?;
            binarize(&map, xi.xi(bundle.words[i].pos))
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&BinaryAttentionMap> = binary.iter().collect();
    let levels = build_level_matrix(&retained.indices, &refs)?;
    let importance = importance(&dependencies, &levels)?;

    let segments = binary
        .iter()
        .map(|b| clean_segment(b, dbscan))
        .collect::<Result<Vec<_>>>()?;
    let info = pack(&segments, &importance)?;

    Ok(Extraction {
        retained,
        dependencies,
        levels,
        importance,
        binary,
        segments,
        info,
    })
}
