//! Lengthscale-scaled k-means with iterative Hausdorff merges of the smallest
//! clusters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::gp::GpHyperparams;
use crate::pool::EmbeddingPool;

const MAX_LLOYD_ITERS: usize = 100;

/// Cluster label per point, labels dense in `0..num_clusters`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl ClusterAssignment {
    /// Maps arbitrary ids to their rank among the distinct ids.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut ids: Vec<usize> = raw.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let labels = raw.iter().map(|r| ids.binary_search(r).expect("id present")).collect();
        Self { labels, num_clusters: ids.len() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.num_clusters];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Point indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            m[l].push(i);
        }
        m
    }
}

/// One merge during cluster reduction: cluster `removed` was
/// absorbed into `into` at the given Hausdorff distance. Ids refer to the
/// initial k-means clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeStep {
    pub removed: usize,
    pub into: usize,
    pub distance: f64,
}

/// Divides each coordinate by the level-0 lengthscale of its dimension.
pub fn scale_points(pool: &EmbeddingPool, hyper: &GpHyperparams) -> Result<EmbeddingPool> {
    if pool.dim() != hyper.dim() {
        return Err(invalid("pool dimension does not match lengthscales"));
    }
    let data = pool.iter().flat_map(|p| p.iter().zip(&hyper.lengthscales).map(|(x, l)| x / l)).collect();
    EmbeddingPool::from_flat(pool.dim(), data)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest center; ties go to the lowest index.
#[inline]
fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, ctr) in centers.iter().enumerate() {
        let d = sq_dist(p, ctr);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding. Stops when assignments no longer
/// change or after 100 iterations; an empty cluster is re-seeded at the point
/// farthest from its current center.
pub fn kmeans(points: &EmbeddingPool, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(invalid(format!("cannot form {k} clusters from {n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![points.point(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(points.point(next).to_vec());
        let c = centers.last().expect("just pushed");
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, c));
        }
    }

    let dim = points.dim();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centers);
            dist[i] = d;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i]].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
                centers[c] = points.point(far).to_vec();
                dist[far] = 0.0;
                labels[far] = c;
                changed = true;
            } else {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    Ok(ClusterAssignment::from_labels(&labels))
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("Hausdorff distance needs two nonempty sets"));
    }
    let directed = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        x.iter().map(|p| y.iter().map(|q| sq_dist(p, q)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)).sqrt())
}

fn hausdorff_between(points: &EmbeddingPool, a: &[usize], b: &[usize]) -> f64 {
    let directed = |x: &[usize], y: &[usize]| {
        x.iter()
            .map(|&i| y.iter().map(|&j| sq_dist(points.point(i), points.point(j))).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a)).sqrt()
}

/// k-means with `s_hat` clusters on lengthscale-scaled points, then
/// `s_hat - s` merges of the smallest cluster into its Hausdorff-nearest
/// neighbour. Returns the final assignment and the merge trace.
pub fn cluster_with_merges_traced(
    pool: &EmbeddingPool,
    hyper: &GpHyperparams,
    s: usize,
    s_hat: usize,
    seed: u64,
) -> Result<(ClusterAssignment, Vec<MergeStep>)> {
    if s == 0 || s > s_hat || s_hat > pool.len() {
        return Err(invalid(format!("need 1 <= S ({s}) <= S_hat ({s_hat}) <= N ({})", pool.len())));
    }
    let scaled = scale_points(pool, hyper)?;
    let init = kmeans(&scaled, s_hat, seed)?;
    let mut clusters: Vec<Option<Vec<usize>>> = init.members().into_iter().map(Some).collect();
    let k = clusters.len();
    let mut trace = Vec::with_capacity(k.saturating_sub(s));
    for _ in 0..k.saturating_sub(s) {
        let small = (0..k)
            .filter_map(|c| clusters[c].as_ref().map(|m| (m.len(), c)))
            .min()
            .map(|(_, c)| c)
            .expect("clusters remain");
        let members = clusters[small].take().expect("alive");
        let mut best: Option<(f64, usize)> = None;
        for (c, other) in clusters.iter().enumerate() {
            let Some(other) = other else { continue };
            let d = hausdorff_between(&scaled, &members, other);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
        let (distance, into) = best.expect("at least one other cluster");
        let target = clusters[into].as_mut().expect("alive");
        target.extend(members);
        target.sort_unstable();
        trace.push(MergeStep { removed: small, into, distance });
    }
    let mut raw = vec![0; pool.len()];
    for (c, m) in clusters.iter().enumerate() {
        for &i in m.iter().flatten() {
            raw[i] = c;
        }
    }
    Ok((ClusterAssignment::from_labels(&raw), trace))
}

/// [`cluster_with_merges_traced`] without the trace.
pub fn cluster_with_merges(pool: &EmbeddingPool, hyper: &GpHyperparams, s: usize, s_hat: usize, seed: u64) -> Result<ClusterAssignment> {
    cluster_with_merges_traced(pool, hyper, s, s_hat, seed).map(|(a, _)| a)
}
