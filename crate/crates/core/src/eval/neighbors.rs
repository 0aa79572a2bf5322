//! Average k-nearest-neighbour distance and the local outlier factor.
//!
//! Distances are Euclidean in data space. Neighbours are ordered by
//! `(distance, index)`, so ties always resolve toward the lower index and
//! exactly `k` neighbours are used.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::vecops::sq_dist;

/// Neighbour count for AvgkNN.
pub const AVG_KNN_K: usize = 5;
/// Neighbour count for LOF.
pub const LOF_K: usize = 20;

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(sq_dist(a, b))
}

/// The `k` nearest members of `refset` to `query` as `(distance, index)`,
/// skipping index `exclude`.
pub(crate) fn knn(query: &[f64], refset: &[Vec<f64>], k: usize, exclude: Option<usize>) -> Result<Vec<(f64, usize)>> {
    let available = refset.len() - usize::from(exclude.is_some_and(|e| e < refset.len()));
    if k == 0 || available < k {
        return Err(Error::InsufficientNeighbors { needed: k.max(1), available });
    }
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, p) in refset.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        let d = euclidean(query, p);
        if best.len() == k && d >= best[k - 1].0 {
            continue;
        }
        // Later indices go after equal distances.
        let pos = best.partition_point(|&(bd, _)| bd <= d);
        best.insert(pos, (d, i));
        best.truncate(k);
    }
    Ok(best)
}

/// Mean distance from `query` to its `k` nearest neighbours in `refset`,
/// excluding the member at index `exclude` (the query itself when it belongs
/// to the reference set).
pub fn avg_knn(query: &[f64], refset: &[Vec<f64>], k: usize, exclude: Option<usize>) -> Result<f64> {
    let nn = knn(query, refset, k, exclude)?;
    Ok(nn.iter().map(|(d, _)| d).sum::<f64>() / k as f64)
}

/// Sum of reachability distances `max(k-distance(o), d(p, o))` over the
/// neighbours of `p`.
fn reach_sum(neighbors: &[(f64, usize)], kdist: impl Fn(usize) -> f64) -> f64 {
    neighbors.iter().map(|&(d, o)| kdist(o).max(d)).sum()
}

fn lrd(k: usize, reach: f64) -> Option<f64> {
    (reach > 0.0).then(|| k as f64 / reach)
}

/// LOF from the query's density and its neighbours' densities; any zero
/// reachability sum (stacked duplicates) yields 1.
fn lof_ratio(k: usize, own: Option<f64>, neighbor_lrds: impl Iterator<Item = Option<f64>>) -> f64 {
    let Some(own) = own else { return 1.0 };
    let mut sum = 0.0;
    for l in neighbor_lrds {
        match l {
            Some(v) => sum += v,
            None => return 1.0,
        }
    }
    sum / k as f64 / own
}

/// Local outlier factor of `query` with respect to `refset`.
pub fn lof(query: &[f64], refset: &[Vec<f64>], k: usize, exclude: Option<usize>) -> Result<f64> {
    if refset.len() < k + 1 {
        return Err(Error::InsufficientNeighbors { needed: k + 1, available: refset.len() });
    }
    let nn = knn(query, refset, k, exclude)?;
    let kdist = |o: usize| -> Result<f64> { Ok(knn(&refset[o], refset, k, Some(o))?[k - 1].0) };
    let neighbor_kdist = nn.iter().map(|&(_, o)| kdist(o)).collect::<Result<Vec<f64>>>()?;
    let own = lrd(k, nn.iter().zip(&neighbor_kdist).map(|(&(d, _), kd)| kd.max(d)).sum());
    let mut neighbor_lrds = Vec::with_capacity(k);
    for &(_, o) in &nn {
        let onn = knn(&refset[o], refset, k, Some(o))?;
        let kd = onn.iter().map(|&(_, p)| kdist(p)).collect::<Result<Vec<f64>>>()?;
        neighbor_lrds.push(lrd(k, onn.iter().zip(&kd).map(|(&(d, _), kd)| kd.max(d)).sum()));
    }
    Ok(lof_ratio(k, own, neighbor_lrds.into_iter()))
}

/// Precomputed k-distances and local reachability densities of a reference
/// set, for evaluating LOF on many queries.
#[derive(Debug, Clone)]
pub struct KnnIndex<'a> {
    points: &'a [Vec<f64>],
    k: usize,
    kdist: Vec<f64>,
    lrd: Vec<Option<f64>>,
}

impl<'a> KnnIndex<'a> {
    pub fn new(points: &'a [Vec<f64>], k: usize) -> Result<Self> {
        if points.len() < k + 1 {
            return Err(Error::InsufficientNeighbors { needed: k + 1, available: points.len() });
        }
        let neighbors = (0..points.len()).map(|i| knn(&points[i], points, k, Some(i))).collect::<Result<Vec<_>>>()?;
        let kdist: Vec<f64> = neighbors.iter().map(|nn| nn[k - 1].0).collect();
        let lrd = neighbors.iter().map(|nn| lrd(k, reach_sum(nn, |o| kdist[o]))).collect();
        Ok(KnnIndex { points, k, kdist, lrd })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn k_distance(&self, i: usize) -> f64 {
        self.kdist[i]
    }

    /// LOF of `query`; `exclude` names its own index when it is a member.
    pub fn lof(&self, query: &[f64], exclude: Option<usize>) -> Result<f64> {
        let nn = knn(query, self.points, self.k, exclude)?;
        let own = lrd(self.k, reach_sum(&nn, |o| self.kdist[o]));
        Ok(lof_ratio(self.k, own, nn.iter().map(|&(_, o)| self.lrd[o])))
    }
}

/// Which points generated samples are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Real data only.
    Real,
    /// The generated set itself (each sample excluded from its own query).
    Generated,
    /// Real data and generated samples together.
    Pooled,
}

impl ReferenceMode {
    pub fn name(&self) -> &'static str {
        match self {
            ReferenceMode::Real => "real",
            ReferenceMode::Generated => "generated",
            ReferenceMode::Pooled => "pooled",
        }
    }
}

/// Per-sample AvgkNN and LOF of generated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborReport {
    pub avg_knn: Vec<f64>,
    pub lof: Vec<f64>,
    pub k_avg_knn: usize,
    pub k_lof: usize,
    pub mode: ReferenceMode,
    pub reference_size: usize,
}

impl NeighborReport {
    pub fn build(samples: &[Vec<f64>], real: &[Vec<f64>], mode: ReferenceMode, k_avg_knn: usize, k_lof: usize) -> Result<Self> {
        let pooled: Vec<Vec<f64>>;
        let (refset, offset): (&[Vec<f64>], Option<usize>) = match mode {
            ReferenceMode::Real => (real, None),
            ReferenceMode::Generated => (samples, Some(0)),
            ReferenceMode::Pooled => {
                pooled = real.iter().chain(samples).cloned().collect();
                (&pooled, Some(real.len()))
            }
        };
        let index = KnnIndex::new(refset, k_lof)?;
        let mut avg = Vec::with_capacity(samples.len());
        let mut lofs = Vec::with_capacity(samples.len());
        for (i, x) in samples.iter().enumerate() {
            let exclude = offset.map(|o| o + i);
            avg.push(avg_knn(x, refset, k_avg_knn, exclude)?);
            lofs.push(index.lof(x, exclude)?);
        }
        Ok(NeighborReport { avg_knn: avg, lof: lofs, k_avg_knn, k_lof, mode, reference_size: refset.len() })
    }
}
