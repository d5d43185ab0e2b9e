//! Density-based cleaning of binary attention maps.
//!
//! DBSCAN groups attention pixels whose ε-neighborhoods are dense; sparse
//! outliers become noise, and clusters below a minimum size are dropped by
//! [`clean_segment`].

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::bundle::BinaryAttentionMap;
use crate::grid::Pixel;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    /// Neighborhood radius in pixels (Euclidean).
    pub eps: f64,
    /// Minimum neighborhood size, the point itself included.
    pub min_points: usize,
    /// Clusters smaller than this are discarded by [`clean_segment`].
    pub min_cluster_size: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: 2.0,
            min_points: 5,
            min_cluster_size: 30,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::param("eps", "must be positive and finite"));
        }
        if self.min_points == 0 {
            return Err(Error::param("min_points", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionCluster {
    /// Row-major sorted.
    pub points: Vec<Pixel>,
    pub is_noise: bool,
}

/// Per-point DBSCAN result over the row-major sorted, de-duplicated input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub points: Vec<Pixel>,
    /// Cluster id per point (ids numbered by seed order), `None` for noise.
    pub labels: Vec<Option<usize>>,
    pub core: Vec<bool>,
    pub clusters: usize,
}

/// Fixed-radius neighbor lookup: points bucketed into square cells of side
/// `eps`, so every neighbor lies in the 3x3 block of cells around a point.
struct CellIndex<'a> {
    points: &'a [Pixel],
    eps: f64,
    eps_sq: f64,
    /// (cell key, point index), sorted by key.
    order: Vec<((i64, i64), usize)>,
}

impl<'a> CellIndex<'a> {
    fn new(points: &'a [Pixel], eps: f64) -> Self {
        let mut order: Vec<_> = points
            .iter()
            .enumerate()
            .map(|(i, &p)| (Self::cell_of(p, eps), i))
            .collect();
        order.sort_unstable();
        Self {
            points,
            eps,
            eps_sq: eps * eps,
            order,
        }
    }

    fn cell_of(p: Pixel, eps: f64) -> (i64, i64) {
        (
            libm::floor(p.y as f64 / eps) as i64,
            libm::floor(p.x as f64 / eps) as i64,
        )
    }

    fn for_each_neighbor(&self, i: usize, mut f: impl FnMut(usize)) {
        let p = self.points[i];
        let (cy, cx) = Self::cell_of(p, self.eps);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let key = (cy + dy, cx + dx);
                let start = self.order.partition_point(|(k, _)| *k < key);
                for &(k, j) in &self.order[start..] {
                    if k != key {
                        break;
                    }
                    if p.distance_sq(self.points[j]) <= self.eps_sq {
                        f(j);
                    }
                }
            }
        }
    }

    fn neighbor_count(&self, i: usize) -> usize {
        let mut n = 0;
        self.for_each_neighbor(i, |_| n += 1);
        n
    }
}

/// Labels every point. Points are scanned in row-major order; each
/// unlabeled core point seeds a new cluster that is fully expanded before
/// the scan resumes, so a border point reachable from several clusters
/// joins the one with the earliest seed.
pub fn dbscan_labels(points: &[Pixel], eps: f64, min_points: usize) -> Result<Labeling> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::param("eps", "must be positive and finite"));
    }
    if min_points == 0 {
        return Err(Error::param("min_points", "must be at least 1"));
    }
    let mut points = points.to_vec();
    points.sort_unstable();
    points.dedup();

    let index = CellIndex::new(&points, eps);
    let core: Vec<bool> = (0..points.len())
        .map(|i| index.neighbor_count(i) >= min_points)
        .collect();

    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut clusters = 0;
    let mut queue = VecDeque::new();
    for seed in 0..points.len() {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        let id = clusters;
        clusters += 1;
        labels[seed] = Some(id);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            index.for_each_neighbor(p, |q| {
                if labels[q].is_none() {
                    labels[q] = Some(id);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            });
        }
    }

    Ok(Labeling {
        points,
        labels,
        core,
        clusters,
    })
}

/// Clusters in seed order, followed by one noise group if any point is
/// noise.
pub fn dbscan(points: &[Pixel], eps: f64, min_points: usize) -> Result<Vec<AttentionCluster>> {
    let labeling = dbscan_labels(points, eps, min_points)?;
    Ok(labeling.into_clusters())
}

impl Labeling {
    pub fn into_clusters(self) -> Vec<AttentionCluster> {
        let mut groups: Vec<Vec<Pixel>> = vec![Vec::new(); self.clusters];
        let mut noise = Vec::new();
        for (p, label) in self.points.into_iter().zip(self.labels) {
            match label {
                Some(id) => groups[id].push(p),
                None => noise.push(p),
            }
        }
        let mut out: Vec<AttentionCluster> = groups
            .into_iter()
            .map(|points| AttentionCluster {
                points,
                is_noise: false,
            })
            .collect();
        if !noise.is_empty() {
            out.push(AttentionCluster {
                points: noise,
                is_noise: true,
            });
        }
        out
    }
}

/// Attention pixels that survive clustering for one word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanSegment {
    pub word_index: usize,
    /// Row-major sorted.
    pub pixels: Vec<Pixel>,
}

impl CleanSegment {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Drops noise and every cluster smaller than `min_cluster_size`.
pub fn clean_segment(map: &BinaryAttentionMap, params: &DbscanParams) -> Result<CleanSegment> {
    params.validate()?;
    let points: Vec<Pixel> = map.pixels().collect();
    let clusters = dbscan(&points, params.eps, params.min_points)?;
    let mut pixels: Vec<Pixel> = clusters
        .into_iter()
        .filter(|c| !c.is_noise && c.points.len() >= params.min_cluster_size)
        .flat_map(|c| c.points)
        .collect();
    pixels.sort_unstable();
    Ok(CleanSegment {
        word_index: map.word_index,
        pixels,
    })
}
