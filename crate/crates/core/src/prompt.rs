//! Textual prompt analysis: which words carry meaning, how they depend on
//! each other, and how strongly their attention regions overlap.

use alloc::vec;
use alloc::vec::Vec;

use crate::bundle::{BinaryAttentionMap, Pos, WordAnnotation};
use crate::{Error, Result};

/// Words that survive part-of-speech filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Retained {
    /// Original word indices, in prompt order.
    pub indices: Vec<usize>,
    /// Number of X-type words removed.
    pub filtered: usize,
}

pub fn filter_words(words: &[WordAnnotation]) -> Result<Retained> {
    let indices: Vec<usize> = words.iter().filter(|w| w.pos != Pos::X).map(|w| w.index).collect();
    if indices.is_empty() {
        return Err(Error::NoSemanticContent);
    }
    Ok(Retained {
        filtered: words.len() - indices.len(),
        indices,
    })
}

/// Square boolean matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            cells: vec![false; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::new(n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.n + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.n + col] = value;
    }
}

/// Compressed dependency matrix over the retained words: row = head,
/// column = dependent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyMatrix {
    pub order: Vec<usize>,
    pub arcs: BoolMatrix,
}

/// Pairwise attention overlap (mIoU) of the retained words.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyLevelMatrix {
    pub order: Vec<usize>,
    n: usize,
    levels: Vec<f64>,
}

impl DependencyLevelMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.levels[row * self.n + col]
    }

    pub fn size(&self) -> usize {
        self.n
    }
}

/// Softmax-normalized semantic importance of the retained words.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector {
    pub order: Vec<usize>,
    pub s: Vec<f64>,
}

impl ImportanceVector {
    /// Importance of the word with original index `word_index`.
    pub fn of(&self, word_index: usize) -> Option<f64> {
        self.order.iter().position(|&i| i == word_index).map(|k| self.s[k])
    }
}

/// Builds the full `M x M` matrix `C` (diagonal plus head-to-dependent
/// arcs) and its compression `C*` to the retained words.
pub fn build_dependency_matrices(words: &[WordAnnotation], retained: &Retained) -> (BoolMatrix, DependencyMatrix) {
    let m = words.len();
    let mut full = BoolMatrix::identity(m);
    for w in words {
        if let Some(head) = w.head {
            full.set(head, w.index, true);
        }
    }
    let order = retained.indices.clone();
    let mut arcs = BoolMatrix::new(order.len());
    for (r, &i) in order.iter().enumerate() {
        for (c, &j) in order.iter().enumerate() {
            arcs.set(r, c, full.get(i, j));
        }
    }
    (full, DependencyMatrix { order, arcs })
}

/// Intersection over union of two masks of the same size.
pub fn miou(a: &BinaryAttentionMap, b: &BinaryAttentionMap) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch {
            expected_width: a.width,
            expected_height: a.height,
            width: b.width,
            height: b.height,
        });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.mask.iter().zip(&b.mask) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        return Err(Error::EmptyMasks);
    }
    Ok(inter as f64 / union as f64)
}

/// `D*[i][j] = mIoU(map_i, map_j)` over the retained words, in `order`.
/// `maps[k]` must be the binary map of word `order[k]`.
pub fn build_level_matrix(order: &[usize], maps: &[&BinaryAttentionMap]) -> Result<DependencyLevelMatrix> {
    if order.len() != maps.len() {
        return Err(Error::OrderMismatch);
    }
    let n = order.len();
    let mut levels = vec![0.0; n * n];
    for i in 0..n {
        levels[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let v = miou(maps[i], maps[j])?;
            levels[i * n + j] = v;
            levels[j * n + i] = v;
        }
    }
    // the diagonal still requires a non-empty mask
    for m in maps {
        if m.is_empty() {
            return Err(Error::EmptyMasks);
        }
    }
    Ok(DependencyLevelMatrix {
        order: order.to_vec(),
        n,
        levels,
    })
}

/// Pre-softmax relevance: each word is credited with the overlap of every
/// arc it heads or depends on, its self-pair counted once.
pub fn relevance(c: &DependencyMatrix, d: &DependencyLevelMatrix) -> Result<Vec<f64>> {
    if c.order != d.order {
        return Err(Error::OrderMismatch);
    }
    let n = c.order.len();
    let weighted = |i: usize, j: usize| if c.arcs.get(i, j) { d.get(i, j) } else { 0.0 };
    Ok((0..n)
        .map(|i| {
            let as_head: f64 = (0..n).map(|j| weighted(i, j)).sum();
            let as_dependent: f64 = (0..n).map(|j| weighted(j, i)).sum();
            as_head + as_dependent - d.get(i, i)
        })
        .collect())
}

pub fn softmax(r: &[f64]) -> Vec<f64> {
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = r.iter().map(|&v| libm::exp(v - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn importance(c: &DependencyMatrix, d: &DependencyLevelMatrix) -> Result<ImportanceVector> {
    let r = relevance(c, d)?;
    Ok(ImportanceVector {
        order: c.order.clone(),
        s: softmax(&r),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Pixel;
    use proptest::prelude::*;

    /// "A blue car driving through the city ." with a plausible parse:
    /// driving is the root, car its subject, through a preposition under
    /// driving, city the object of through.
    fn blue_car() -> Vec<WordAnnotation> {
        vec![
            WordAnnotation::new(0, "A", Pos::X, Some(2), "det"),
            WordAnnotation::new(1, "blue", Pos::Adj, Some(2), "amod"),
            WordAnnotation::new(2, "car", Pos::Nn, Some(3), "nsubj"),
            WordAnnotation::new(3, "driving", Pos::Verb, None, "ROOT"),
            WordAnnotation::new(4, "through", Pos::Adp, Some(3), "prep"),
            WordAnnotation::new(5, "the", Pos::X, Some(6), "det"),
            WordAnnotation::new(6, "city", Pos::Nn, Some(4), "pobj"),
            WordAnnotation::new(7, ".", Pos::X, Some(3), "punct"),
        ]
    }

    fn mask(pixels: &[(u32, u32)], w: usize, h: usize) -> BinaryAttentionMap {
        BinaryAttentionMap::from_pixels(0, w, h, pixels.iter().map(|&(x, y)| Pixel::new(x, y)))
    }

    #[test]
    fn filter_drops_x_words() {
        let r = filter_words(&blue_car()).unwrap();
        assert_eq!(r.indices, vec![1, 2, 3, 4, 6]);
        assert_eq!(r.filtered, 3);

        let single = [WordAnnotation::new(0, "car", Pos::Nn, None, "ROOT")];
        let r = filter_words(&single).unwrap();
        assert_eq!((r.indices, r.filtered), (vec![0], 0));

        let all_x = [
            WordAnnotation::new(0, "the", Pos::X, None, "ROOT"),
            WordAnnotation::new(1, ".", Pos::X, Some(0), "punct"),
        ];
        assert_eq!(filter_words(&all_x), Err(Error::NoSemanticContent));
    }

    #[test]
    fn dependency_matrices_follow_head_to_dependent() {
        let words = blue_car();
        let retained = filter_words(&words).unwrap();
        let (full, compressed) = build_dependency_matrices(&words, &retained);
        // amod: blue <- car, row car, column blue
        let car = compressed.order.iter().position(|&i| i == 2).unwrap();
        let blue = compressed.order.iter().position(|&i| i == 1).unwrap();
        assert!(compressed.arcs.get(car, blue));
        assert!(!compressed.arcs.get(blue, car));
        // det: A <- car exists in C only
        assert!(full.get(2, 0));
        assert_eq!(compressed.arcs.size(), 5);
        for i in 0..8 {
            assert!(full.get(i, i));
        }
    }

    #[test]
    fn no_arcs_gives_identity() {
        let words = [
            WordAnnotation::new(0, "car", Pos::Nn, None, "ROOT"),
            WordAnnotation::new(1, "the", Pos::X, Some(0), "det"),
        ];
        let retained = filter_words(&words).unwrap();
        let (_, c) = build_dependency_matrices(&words, &retained);
        assert_eq!(c.arcs, BoolMatrix::identity(1));
    }

    #[test]
    fn miou_examples() {
        let a = mask(&[(0, 0), (1, 0), (2, 0)], 4, 1);
        let b = mask(&[(1, 0), (2, 0), (3, 0)], 4, 1);
        assert_eq!(miou(&a, &a).unwrap(), 1.0);
        assert_eq!(miou(&a, &b).unwrap(), 0.5);
        let c = mask(&[(3, 0)], 4, 1);
        let d = mask(&[(0, 0)], 4, 1);
        assert_eq!(miou(&c, &d).unwrap(), 0.0);
        let empty = mask(&[], 4, 1);
        assert_eq!(miou(&empty, &empty), Err(Error::EmptyMasks));
    }

    #[test]
    fn level_matrix_examples() {
        let a = mask(&[(0, 0), (1, 0)], 4, 1);
        let d = build_level_matrix(&[0, 1], &[&a, &a]).unwrap();
        assert_eq!([d.get(0, 0), d.get(0, 1), d.get(1, 0), d.get(1, 1)], [1.0; 4]);

        let b = mask(&[(3, 0)], 4, 1);
        let d = build_level_matrix(&[0, 1], &[&a, &b]).unwrap();
        assert_eq!(
            [d.get(0, 0), d.get(0, 1), d.get(1, 0), d.get(1, 1)],
            [1.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn level_matrix_three_words_matches_set_counting() {
        // 4x4 grid; overlaps counted by hand:
        // a = rows 0-1 (8 px), b = columns 0-1 (8 px), c = (0,0),(1,1),(3,3)
        let a: Vec<_> = (0..4).flat_map(|x| (0..2).map(move |y| (x, y))).collect();
        let b: Vec<_> = (0..2).flat_map(|x| (0..4).map(move |y| (x, y))).collect();
        let c = [(0, 0), (1, 1), (3, 3)];
        let (ma, mb, mc) = (mask(&a, 4, 4), mask(&b, 4, 4), mask(&c, 4, 4));
        let d = build_level_matrix(&[0, 1, 2], &[&ma, &mb, &mc]).unwrap();
        // a∩b = 4, a∪b = 12; a∩c = 2, a∪c = 9; b∩c = 2, b∪c = 9
        assert_eq!(d.get(0, 1), 4.0 / 12.0);
        assert_eq!(d.get(0, 2), 2.0 / 9.0);
        assert_eq!(d.get(1, 2), 2.0 / 9.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    fn level_from(order: Vec<usize>, levels: Vec<f64>) -> DependencyLevelMatrix {
        DependencyLevelMatrix {
            n: order.len(),
            order,
            levels,
        }
    }

    #[test]
    fn importance_examples() {
        let c = DependencyMatrix {
            order: vec![0],
            arcs: BoolMatrix::identity(1),
        };
        let d = level_from(vec![0], vec![1.0]);
        assert_eq!(importance(&c, &d).unwrap().s, vec![1.0]);

        let c = DependencyMatrix {
            order: vec![0, 1],
            arcs: BoolMatrix::identity(2),
        };
        let d = level_from(vec![0, 1], vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(importance(&c, &d).unwrap().s, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_of_known_relevance() {
        let e = core::f64::consts::E;
        let denom = 2.0 * e + e * e;
        let s = softmax(&[1.0, 1.0, 2.0]);
        let want = [e / denom, e / denom, e * e / denom];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((s[0] - 0.2119).abs() < 1e-4 && (s[2] - 0.5761).abs() < 1e-4);
    }

    #[test]
    fn relevance_credits_both_ends_of_an_arc() {
        // 0 -> 1 with overlap 0.5; 2 unrelated
        let mut arcs = BoolMatrix::identity(3);
        arcs.set(0, 1, true);
        let c = DependencyMatrix {
            order: vec![0, 1, 2],
            arcs,
        };
        let d = level_from(vec![0, 1, 2], vec![1.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 1.0]);
        assert_eq!(relevance(&c, &d).unwrap(), vec![1.5, 1.5, 1.0]);
    }

    #[test]
    fn mismatched_orders_are_rejected() {
        let c = DependencyMatrix {
            order: vec![0, 1],
            arcs: BoolMatrix::identity(2),
        };
        let d = level_from(vec![1, 0], vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(importance(&c, &d), Err(Error::OrderMismatch));
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<Vec<bool>>)> {
        (2usize..6).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::collection::vec(any::<bool>(), n), n),
                prop::collection::vec(prop::collection::vec(any::<bool>(), 16), n),
            )
        })
    }

    fn build(arcs: &[Vec<bool>], masks: &[Vec<bool>]) -> Option<(DependencyMatrix, DependencyLevelMatrix)> {
        let n = arcs.len();
        let mut m = BoolMatrix::identity(n);
        for (i, row) in arcs.iter().enumerate() {
            for (j, &arc) in row.iter().enumerate() {
                if i != j && arc {
                    m.set(i, j, true);
                }
            }
        }
        let maps: Vec<_> = masks
            .iter()
            .map(|mk| BinaryAttentionMap::new(0, 4, 4, mk.clone()).unwrap())
            .collect();
        if maps.iter().any(|m| m.is_empty()) {
            return None;
        }
        let order: Vec<usize> = (0..n).collect();
        let refs: Vec<&BinaryAttentionMap> = maps.iter().collect();
        let d = build_level_matrix(&order, &refs).ok()?;
        Some((DependencyMatrix { order, arcs: m }, d))
    }

    proptest! {
        #[test]
        fn importance_lies_on_simplex((arcs, masks) in arb_instance()) {
            if let Some((c, d)) = build(&arcs, &masks) {
                let s = importance(&c, &d).unwrap().s;
                let total: f64 = s.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                prop_assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
                for i in 0..d.size() {
                    prop_assert_eq!(d.get(i, i), 1.0);
                    for j in 0..d.size() {
                        prop_assert_eq!(d.get(i, j), d.get(j, i));
                    }
                }
            }
        }

        #[test]
        fn adding_an_arc_raises_only_its_endpoints(
            (arcs, masks) in arb_instance(),
            pick in any::<(prop::sample::Index, prop::sample::Index)>(),
        ) {
            if let Some((c, d)) = build(&arcs, &masks) {
                let n = c.order.len();
                let (i, j) = (pick.0.index(n), pick.1.index(n));
                prop_assume!(i != j && !c.arcs.get(i, j) && d.get(i, j) > 0.0);
                let before = relevance(&c, &d).unwrap();
                let mut c2 = c.clone();
                c2.arcs.set(i, j, true);
                let after = relevance(&c2, &d).unwrap();
                prop_assert!(after[i] > before[i] && after[j] > before[j]);
                for k in (0..n).filter(|&k| k != i && k != j) {
                    prop_assert!(after[k] <= before[k]);
                }
            }
        }

        #[test]
        fn importance_is_permutation_equivariant(
            (arcs, masks) in arb_instance(),
            seed in any::<u64>(),
        ) {
            if let Some((c, d)) = build(&arcs, &masks) {
                let n = c.order.len();
                let mut perm: Vec<usize> = (0..n).collect();
                // deterministic shuffle from the seed
                let mut x = seed | 1;
                for k in (1..n).rev() {
                    x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                    perm.swap(k, (x % (k as u64 + 1)) as usize);
                }
                let arcs_p: Vec<Vec<bool>> = (0..n).map(|a| (0..n).map(|b| arcs[perm[a]][perm[b]]).collect()).collect();
                let masks_p: Vec<Vec<bool>> = (0..n).map(|a| masks[perm[a]].clone()).collect();
                let (cp, dp) = build(&arcs_p, &masks_p).unwrap();
                let s = importance(&c, &d).unwrap().s;
                let sp = importance(&cp, &dp).unwrap().s;
                for a in 0..n {
                    prop_assert!((sp[a] - s[perm[a]]).abs() < 1e-12);
                }
            }
        }
    }
}
