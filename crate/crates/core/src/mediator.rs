//! Clustering of inference embeddings into weighted mediator representatives.
//!
//! Generated inferences are compressed into `k` clusters; each cluster is
//! then represented by its member closest to the centroid, weighted by the
//! cluster's share of all inferences (an exact rational `|C_i| / n`). The
//! k-means here is deliberately hand-rolled for reproducibility:
//!
//! * points are processed in a canonical content-sorted order, so results
//!   are invariant to input permutation, and centroid sums accumulate in a
//!   fixed order, so results are bitwise stable across runs;
//! * ties (nearest centroid, farthest point, representative choice) break
//!   toward the first candidate in canonical order;
//! * initialization is D²-weighted seeding from a ChaCha stream, with a
//!   fixed number of restarts keeping the lowest-inertia run.

use num::rational::Ratio;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum MediatorError {
    #[error("clustering needs at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("point {index} has dimension {got}, expected {expected}")]
    DimMismatch {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("points must have at least one dimension")]
    ZeroDim,
}

/// Outcome of one k-means run over `n` points.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// Cluster index per input point, in the caller's original order.
    pub assignments: Vec<usize>,
    /// One centroid per cluster.
    pub centroids: Vec<Vec<f64>>,
    /// Total within-cluster squared distance after each update step of
    /// the winning run; non-increasing.
    pub inertia_trace: Vec<f64>,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        *self
            .inertia_trace
            .last()
            .expect("at least one iteration ran")
    }
}

/// Clusters plus per-cluster representative points and exact weights.
#[derive(Debug, Clone)]
pub struct MediatorSet {
    /// Index (into the caller's point list) of each cluster's
    /// representative: the member closest to the centroid.
    pub representatives: Vec<usize>,
    /// Exact cluster weights `|C_i| / n`; they sum to 1.
    pub weights: Vec<Ratio<u64>>,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
}

const RESTARTS: u64 = 8;

fn validate(points: &[Vec<f64>], k: usize) -> Result<usize, MediatorError> {
    if k == 0 {
        return Err(MediatorError::ZeroK);
    }
    if points.len() < k {
        return Err(MediatorError::TooFewPoints {
            n: points.len(),
            k,
        });
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(MediatorError::ZeroDim);
    }
    for (index, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(MediatorError::DimMismatch {
                index,
                expected: dim,
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(MediatorError::NonFinite { index });
        }
    }
    Ok(dim)
}

fn d2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Content-lexicographic order of the points; all finite, so total.
fn canonical_order(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(points[b].iter())
            .find_map(|(x, y)| x.partial_cmp(y).filter(|o| o.is_ne()))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// D²-weighted seeding over points in canonical order.
fn seed_centroids(canon: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = canon.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(canon[rng.gen_range(0..n)].to_vec());
    let mut best_d2: Vec<f64> = canon.iter().map(|p| d2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = best_d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in best_d2.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // Every remaining point duplicates a centroid; take the first
            // point not already chosen so seeds stay distinct as slots.
            (0..n)
                .find(|&i| !centroids.iter().any(|c| c.as_slice() == canon[i]))
                .unwrap_or(0)
        };
        centroids.push(canon[next].to_vec());
        for (i, p) in canon.iter().enumerate() {
            let d = d2(p, centroids.last().expect("just pushed"));
            if d < best_d2[i] {
                best_d2[i] = d;
            }
        }
    }
    centroids
}

fn assign(canon: &[&[f64]], centroids: &[Vec<f64>]) -> Vec<usize> {
    canon
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_d = d2(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = d2(p, centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Give every empty cluster the point farthest from its current centroid,
/// stealing only from clusters that keep at least one member.
fn repair_empty(assignments: &mut [usize], canon: &[&[f64]], centroids: &[Vec<f64>], k: usize) {
    for empty in 0..k {
        if assignments.iter().any(|&a| a == empty) {
            continue;
        }
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let mut chosen: Option<(usize, f64)> = None;
        for (i, p) in canon.iter().enumerate() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            let d = d2(p, &centroids[assignments[i]]);
            if chosen.map_or(true, |(_, best)| d > best) {
                chosen = Some((i, d));
            }
        }
        let (steal, _) = chosen.expect("n >= k guarantees a donor cluster");
        assignments[steal] = empty;
    }
}

fn update_centroids(canon: &[&[f64]], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in canon.iter().zip(assignments.iter()) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (sum, &count) in sums.iter_mut().zip(counts.iter()) {
        debug_assert!(count > 0, "empty clusters are repaired before update");
        for s in sum.iter_mut() {
            *s /= count as f64;
        }
    }
    sums
}

fn total_inertia(canon: &[&[f64]], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    canon
        .iter()
        .zip(assignments.iter())
        .map(|(p, &a)| d2(p, &centroids[a]))
        .sum()
}

fn lloyd(canon: &[&[f64]], k: usize, dim: usize, seed: u64, max_iters: usize) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(canon, k, &mut rng);
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut next = assign(canon, &centroids);
        repair_empty(&mut next, canon, &centroids, k);
        centroids = update_centroids(canon, &next, k, dim);
        trace.push(total_inertia(canon, &next, &centroids));
        if next == assignments {
            break;
        }
        assignments = next;
    }
    (assignments, centroids, trace)
}

/// Lloyd's algorithm with D²-weighted seeding and deterministic restarts.
///
/// Given identical inputs and seed the result is bitwise identical run to
/// run, and invariant to permutations of `points` (assignments follow the
/// permutation; centroids and cluster numbering do not change).
pub fn kmeans(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult, MediatorError> {
    let dim = validate(points, k)?;
    let order = canonical_order(points);
    let canon: Vec<&[f64]> = order.iter().map(|&i| points[i].as_slice()).collect();

    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, Vec<f64>)> = None;
    for restart in 0..RESTARTS {
        let run_seed = derive_seed(seed, &format!("kmeans-restart/{restart}"));
        let run = lloyd(&canon, k, dim, run_seed, max_iters);
        let better = match &best {
            None => true,
            Some((_, _, trace)) => {
                run.2.last().expect("nonempty") < trace.last().expect("nonempty")
            }
        };
        if better {
            best = Some(run);
        }
    }
    let (canon_assign, centroids, trace) = best.expect("at least one restart");

    // Renumber clusters by first appearance in canonical order so the
    // numbering is itself permutation-invariant.
    let mut relabel = vec![usize::MAX; k];
    let mut next_label = 0usize;
    for &a in &canon_assign {
        if relabel[a] == usize::MAX {
            relabel[a] = next_label;
            next_label += 1;
        }
    }
    let mut new_centroids = vec![Vec::new(); k];
    for (old, centroid) in centroids.iter().enumerate() {
        new_centroids[relabel[old]] = centroid.clone();
    }
    let mut assignments = vec![0usize; points.len()];
    for (canon_pos, &orig_idx) in order.iter().enumerate() {
        assignments[orig_idx] = relabel[canon_assign[canon_pos]];
    }
    Ok(KMeansResult {
        assignments,
        centroids: new_centroids,
        inertia_trace: trace,
    })
}

/// Cluster `points` and pick each cluster's representative: the member
/// with minimum distance to the centroid (ties break toward the lower
/// input index). Weights are exact rationals `|C_i| / n`.
pub fn select_representatives(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<MediatorSet, MediatorError> {
    let result = kmeans(points, k, seed, max_iters)?;
    let n = points.len();
    let mut representatives = vec![usize::MAX; k];
    let mut best_d = vec![f64::INFINITY; k];
    for (idx, point) in points.iter().enumerate() {
        let cluster = result.assignments[idx];
        let d = d2(point, &result.centroids[cluster]);
        if d < best_d[cluster] {
            best_d[cluster] = d;
            representatives[cluster] = idx;
        }
    }
    let mut sizes = vec![0u64; k];
    for &a in &result.assignments {
        sizes[a] += 1;
    }
    let weights = sizes
        .iter()
        .map(|&s| Ratio::new(s, n as u64))
        .collect();
    Ok(MediatorSet {
        representatives,
        weights,
        assignments: result.assignments,
        centroids: result.centroids,
    })
}

/// Number of bitwise-distinct points: the cap for a meaningful K
/// (effective-K rule).
pub fn distinct_point_count(points: &[Vec<f64>]) -> usize {
    let mut seen = std::collections::HashSet::new();
    for p in points {
        let bits: Vec<u64> = p.iter().map(|x| x.to_bits()).collect();
        seen.insert(bits);
    }
    seen.len()
}

/// Scale each point to unit L2 norm, making downstream clustering compare
/// directions instead of magnitudes. Zero vectors are left untouched: they
/// have no direction, and dividing by zero would poison the geometry.
pub fn l2_normalize(points: &mut [Vec<f64>]) {
    for p in points.iter_mut() {
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in p.iter_mut() {
                *x /= norm;
            }
        }
    }
}

/// Exhaustive minimum inertia over all assignments of `points` into at
/// most `k` non-empty clusters. O(kⁿ); verification tool for small n.
pub fn brute_force_min_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    brute_force_optimal(points, k).0
}

/// Exhaustive search over all assignments of `points` into exactly `k`
/// non-empty clusters, returning the minimum inertia and one assignment
/// that achieves it. O(kⁿ); verification tool for small n.
pub fn brute_force_optimal(points: &[Vec<f64>], k: usize) -> (f64, Vec<usize>) {
    let n = points.len();
    assert!(n <= 12, "brute force is exponential; keep n small");
    assert!(k >= 1 && n >= k);
    let dim = points[0].len();
    let mut assignment = vec![0usize; n];
    let mut best = f64::INFINITY;
    let mut best_assignment = vec![0usize; n];
    loop {
        let used = assignment.iter().copied().collect::<std::collections::HashSet<_>>();
        if used.len() == k {
            let mut sums = vec![vec![0.0; dim]; k];
            let mut counts = vec![0usize; k];
            for (p, &a) in points.iter().zip(assignment.iter()) {
                counts[a] += 1;
                for (s, x) in sums[a].iter_mut().zip(p.iter()) {
                    *s += x;
                }
            }
            for (sum, &count) in sums.iter_mut().zip(counts.iter()) {
                for s in sum.iter_mut() {
                    *s /= count as f64;
                }
            }
            let inertia: f64 = points
                .iter()
                .zip(assignment.iter())
                .map(|(p, &a)| d2(p, &sums[a]))
                .sum();
            if inertia < best {
                best = inertia;
                best_assignment.copy_from_slice(&assignment);
            }
        }
        // Next assignment in base-k counting order.
        let mut pos = 0;
        loop {
            if pos == n {
                return (best, best_assignment);
            }
            assignment[pos] += 1;
            if assignment[pos] < k {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}
