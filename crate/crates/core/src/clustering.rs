//! Flat k-means and the recursive hierarchy the indexers digitize.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::linalg::{lex_cmp, mean_of, sq_dist};
use crate::seed::{rng_from, split};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once the relative objective improvement drops below this.
    pub rel_tol: f64,
    pub restarts: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_tol: 1e-6,
            restarts: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of each point, parallel to the input index set.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances of points to their centroid.
    pub objective: f64,
    /// Objective after every refinement step of the winning restart.
    pub history: Vec<f64>,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Smallest `m >= 1` with `alphabet^m >= n`.
pub fn min_depth(n: usize, alphabet: usize) -> usize {
    assert!(alphabet >= 2, "alphabet must have at least two symbols");
    let mut m = 1;
    let mut cap = alphabet;
    while cap < n {
        cap = cap.saturating_mul(alphabet);
        m += 1;
    }
    m
}

/// Lloyd k-means with D²-weighted seeding, empty-cluster repair and a
/// single-point-move polish, best of `params.restarts` runs.
///
/// `indices` selects the rows of `points` to cluster; labels are parallel to
/// it. Deterministic in `(points, indices, k, seed, params)`.
pub fn kmeans(
    points: &EmbeddingMatrix,
    indices: &[usize],
    k: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<KMeansResult> {
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    if k > indices.len() {
        return Err(Error::Argument(format!(
            "k = {k} exceeds point count {}",
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= points.rows()) {
        return Err(Error::Bounds(format!(
            "point index {bad} >= {}",
            points.rows()
        )));
    }
    let rows: Vec<&[f64]> = indices.iter().map(|&i| points.row(i)).collect();
    let restarts = params.restarts.max(1);
    let runs: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| lloyd(&rows, k, split(seed, r as u64), params))
        .collect();
    // Earliest restart wins ties so the result does not depend on scheduling.
    let best = runs
        .into_iter()
        .reduce(|best, r| {
            if r.objective < best.objective {
                r
            } else {
                best
            }
        })
        .expect("at least one restart");
    Ok(best)
}

/// k-means whose clusters may hold at most `capacity` points each.
/// Requires `k * capacity >= indices.len()`.
pub(crate) fn kmeans_capped(
    points: &EmbeddingMatrix,
    indices: &[usize],
    k: usize,
    capacity: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<KMeansResult> {
    debug_assert!(k * capacity >= indices.len());
    let mut res = kmeans(points, indices, k, seed, params)?;
    let rows: Vec<&[f64]> = indices.iter().map(|&i| points.row(i)).collect();
    let mut sizes = res.cluster_sizes();
    if sizes.iter().all(|&s| s <= capacity) {
        return Ok(res);
    }
    for c in 0..k {
        if sizes[c] <= capacity {
            continue;
        }
        let excess = sizes[c] - capacity;
        // Cheapest points to evict first, judged against the unconstrained
        // centroids.
        let mut movers: Vec<(f64, usize)> = res
            .labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == c)
            .map(|(i, _)| {
                let own = sq_dist(rows[i], &res.centroids[c]);
                let alt = (0..k)
                    .filter(|&j| j != c && sizes[j] < capacity)
                    .map(|j| sq_dist(rows[i], &res.centroids[j]))
                    .fold(f64::INFINITY, f64::min);
                (alt - own, i)
            })
            .collect();
        movers.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i) in movers.iter().take(excess) {
            let target = (0..k)
                .filter(|&j| j != c && sizes[j] < capacity)
                .min_by(|&a, &b| {
                    sq_dist(rows[i], &res.centroids[a])
                        .total_cmp(&sq_dist(rows[i], &res.centroids[b]))
                        .then(a.cmp(&b))
                })
                .expect("capacity is feasible");
            res.labels[i] = target;
            sizes[c] -= 1;
            sizes[target] += 1;
        }
    }
    let dim = points.dim();
    res.centroids = (0..k)
        .map(|c| {
            mean_of(
                rows.iter()
                    .zip(&res.labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(r, _)| *r),
                dim,
            )
        })
        .collect();
    res.objective = objective(&rows, &res.labels, &res.centroids);
    Ok(res)
}

fn objective(rows: &[&[f64]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    rows.iter()
        .zip(labels)
        .map(|(r, &l)| sq_dist(r, &centroids[l]))
        .sum()
}

fn seed_centroids(rows: &[&[f64]], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from(seed);
    let n = rows.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(rows[rng.random_range(0..n)].to_vec());
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = rows[pick].to_vec();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn lloyd(rows: &[&[f64]], k: usize, seed: u64, params: &KMeansParams) -> KMeansResult {
    let dim = rows[0].len();
    let n = rows.len();
    let mut centroids = seed_centroids(rows, k, seed);
    let mut labels = vec![0usize; n];
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;

    for _ in 0..params.max_iters.max(1) {
        let mut dists = vec![0.0; n];
        for (i, r) in rows.iter().enumerate() {
            let (j, d) = nearest(r, &centroids);
            labels[i] = j;
            dists[i] = d;
        }
        repair_empty(&mut labels, &mut dists, &mut centroids, rows);
        centroids = recompute(rows, &labels, k, dim);
        let obj = objective(rows, &labels, &centroids);
        history.push(obj);
        let converged = obj == 0.0 || (prev - obj) <= params.rel_tol * prev;
        prev = obj;
        if converged {
            break;
        }
    }

    polish(rows, &mut labels, &mut centroids, &mut history);

    KMeansResult {
        objective: *history.last().expect("at least one iteration"),
        labels,
        centroids,
        history,
    }
}

fn recompute(rows: &[&[f64]], labels: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (r, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(*r) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        debug_assert!(c > 0, "empty cluster survived repair");
        let inv = 1.0 / c as f64;
        s.iter_mut().for_each(|v| *v *= inv);
    }
    sums
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(
    labels: &mut [usize],
    dists: &mut [f64],
    centroids: &mut [Vec<f64>],
    rows: &[&[f64]],
) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            if far.is_none_or(|f| dists[i] > dists[f]) {
                far = Some(i);
            }
        }
        let i = far.expect("n >= k guarantees a donor cluster");
        sizes[labels[i]] -= 1;
        labels[i] = c;
        sizes[c] = 1;
        dists[i] = 0.0;
        centroids[c] = rows[i].to_vec();
    }
}

/// Hartigan-style single point moves: relocate a point whenever doing so
/// strictly lowers the objective, accounting for both centroid shifts.
fn polish(
    rows: &[&[f64]],
    labels: &mut [usize],
    centroids: &mut [Vec<f64>],
    history: &mut Vec<f64>,
) {
    let k = centroids.len();
    if k < 2 {
        return;
    }
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    const MAX_PASSES: usize = 50;
    for _ in 0..MAX_PASSES {
        let mut moved = false;
        for (i, r) in rows.iter().enumerate() {
            let a = labels[i];
            let na = sizes[a];
            if na < 2 {
                continue;
            }
            let gain_out = na as f64 / (na - 1) as f64 * sq_dist(r, &centroids[a]);
            let mut best: Option<(usize, f64)> = None;
            for b in 0..k {
                if b == a {
                    continue;
                }
                let nb = sizes[b];
                let cost_in = nb as f64 / (nb + 1) as f64 * sq_dist(r, &centroids[b]);
                if best.is_none_or(|(_, c)| cost_in < c) {
                    best = Some((b, cost_in));
                }
            }
            let (b, cost_in) = best.expect("k >= 2");
            // Relative margin keeps rounding noise from cycling points.
            if gain_out - cost_in > 1e-12 * gain_out.max(1e-300) {
                let nb = sizes[b];
                for (c, v) in centroids[a].iter_mut().zip(*r) {
                    *c = (*c * na as f64 - v) / (na - 1) as f64;
                }
                for (c, v) in centroids[b].iter_mut().zip(*r) {
                    *c = (*c * nb as f64 + v) / (nb + 1) as f64;
                }
                sizes[a] -= 1;
                sizes[b] += 1;
                labels[i] = b;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        // Drop incremental drift before recording the objective.
        let fresh = recompute(rows, labels, k, rows[0].len());
        centroids.clone_from_slice(&fresh);
        let obj = objective(rows, labels, centroids);
        let last = *history.last().unwrap_or(&f64::INFINITY);
        history.push(obj.min(last));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterNode {
    /// Digit of this node under its parent; `None` for the root.
    pub branch_digit: Option<u32>,
    pub centroid: Vec<f64>,
    #[serde(flatten)]
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Internal { children: Vec<ClusterNode> },
    Leaf { members: Vec<usize> },
}

impl ClusterNode {
    pub fn member_count(&self) -> usize {
        match &self.kind {
            NodeKind::Internal { children } => children.iter().map(|c| c.member_count()).sum(),
            NodeKind::Leaf { members } => members.len(),
        }
    }

    pub fn members(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_members(&mut out);
        out
    }

    fn collect_members(&self, out: &mut Vec<usize>) {
        match &self.kind {
            NodeKind::Internal { children } => children.iter().for_each(|c| c.collect_members(out)),
            NodeKind::Leaf { members } => out.extend_from_slice(members),
        }
    }
}

/// One leaf of a [`ClusterTree`] with the digits leading to it.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafPath<'a> {
    pub digits: Vec<u32>,
    pub centroid: &'a [f64],
    pub members: &'a [usize],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterTree {
    pub alphabet_size: usize,
    /// Depth bound from the alphabet rule; leaves sit at depth < this.
    pub max_id_len: usize,
    /// Number of nodes split by the balanced fallback instead of k-means.
    pub degenerate_splits: usize,
    pub root: ClusterNode,
}

impl ClusterTree {
    pub fn leaves(&self) -> Vec<LeafPath<'_>> {
        fn walk<'a>(n: &'a ClusterNode, path: &mut Vec<u32>, out: &mut Vec<LeafPath<'a>>) {
            if let Some(d) = n.branch_digit {
                path.push(d);
            }
            match &n.kind {
                NodeKind::Internal { children } => children.iter().for_each(|c| walk(c, path, out)),
                NodeKind::Leaf { members } => out.push(LeafPath {
                    digits: path.clone(),
                    centroid: &n.centroid,
                    members,
                }),
            }
            if n.branch_digit.is_some() {
                path.pop();
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut Vec::new(), &mut out);
        out
    }

    /// Length of the longest root-to-leaf digit path (leaf digit excluded).
    pub fn depth(&self) -> usize {
        self.leaves()
            .iter()
            .map(|l| l.digits.len())
            .max()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Recursive k-means with `k = alphabet_size` until member sets fit in one
/// alphabet. Children of a node at depth `d` hold at most
/// `alphabet^(m - d - 1)` members so every identifier fits in
/// `m = min_depth(n, alphabet)` digits.
pub fn hierarchical_cluster(
    points: &EmbeddingMatrix,
    indices: &[usize],
    alphabet_size: usize,
    seed: u64,
    params: &KMeansParams,
) -> Result<ClusterTree> {
    if alphabet_size < 2 {
        return Err(Error::Argument("alphabet size must be at least 2".into()));
    }
    if indices.is_empty() {
        return Err(Error::Argument("cannot cluster an empty point set".into()));
    }
    let m = min_depth(indices.len(), alphabet_size);
    let builder = Builder {
        points,
        v: alphabet_size,
        m,
        params,
    };
    let (root, degenerate_splits) = builder.build(indices.to_vec(), 0, None, seed)?;
    Ok(ClusterTree {
        alphabet_size,
        max_id_len: m,
        degenerate_splits,
        root,
    })
}

struct Builder<'a> {
    points: &'a EmbeddingMatrix,
    v: usize,
    m: usize,
    params: &'a KMeansParams,
}

impl Builder<'_> {
    fn build(
        &self,
        members: Vec<usize>,
        depth: usize,
        digit: Option<u32>,
        seed: u64,
    ) -> Result<(ClusterNode, usize)> {
        let dim = self.points.dim();
        let centroid = mean_of(members.iter().map(|&i| self.points.row(i)), dim);
        if members.len() <= self.v {
            return Ok((
                ClusterNode {
                    branch_digit: digit,
                    centroid,
                    kind: NodeKind::Leaf { members },
                },
                0,
            ));
        }
        let remaining = self.m.saturating_sub(depth + 1) as u32;
        let capacity = self.v.saturating_pow(remaining);

        let first = self.points.row(members[0]);
        let identical = members.iter().all(|&i| self.points.row(i) == first);
        let (mut groups, mut degenerate) = if identical {
            (round_robin(&members, self.v), 1)
        } else {
            let res = kmeans_capped(self.points, &members, self.v, capacity, seed, self.params)?;
            let mut groups = vec![Vec::new(); self.v];
            for (&p, &l) in members.iter().zip(&res.labels) {
                groups[l].push(p);
            }
            groups.retain(|g| !g.is_empty());
            if groups.len() < 2 {
                (round_robin(&members, self.v), 1)
            } else {
                (groups, 0)
            }
        };

        let mut keyed: Vec<(Vec<f64>, Vec<usize>)> = groups
            .drain(..)
            .map(|g| (mean_of(g.iter().map(|&i| self.points.row(i)), dim), g))
            .collect();
        keyed.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| lex_cmp(&a.0, &b.0)));

        let children: Vec<(ClusterNode, usize)> = keyed
            .into_par_iter()
            .enumerate()
            .map(|(d, (_, g))| self.build(g, depth + 1, Some(d as u32), split(seed, d as u64)))
            .collect::<Result<_>>()?;
        let mut nodes = Vec::with_capacity(children.len());
        for (n, deg) in children {
            degenerate += deg;
            nodes.push(n);
        }
        Ok((
            ClusterNode {
                branch_digit: digit,
                centroid,
                kind: NodeKind::Internal { children: nodes },
            },
            degenerate,
        ))
    }
}

fn round_robin(members: &[usize], v: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); v.min(members.len())];
    let n = groups.len();
    for (i, &p) in members.iter().enumerate() {
        groups[i % n].push(p);
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn two_blobs_on_a_line() {
        let m = line(&[0.0, 1.0, 10.0, 11.0]);
        let r = kmeans(&m, &all(4), 2, 1, &KMeansParams::default()).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[2], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[2]);
        let mut cs: Vec<f64> = r.centroids.iter().map(|c| c[0]).collect();
        cs.sort_by(f64::total_cmp);
        assert_eq!(cs, [0.5, 10.5]);
        assert_eq!(r.objective, 1.0);
    }

    #[test]
    fn single_point() {
        let m = line(&[5.0]);
        let r = kmeans(&m, &[0], 1, 0, &KMeansParams::default()).unwrap();
        assert_eq!(r.centroids, vec![vec![5.0]]);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn bad_k_is_argument_error() {
        let m = line(&[1.0, 2.0]);
        let p = KMeansParams::default();
        assert!(matches!(
            kmeans(&m, &all(2), 0, 0, &p),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            kmeans(&m, &all(2), 3, 0, &p),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn no_empty_clusters_with_duplicates() {
        let m = line(&[3.0; 6]);
        let r = kmeans(&m, &all(6), 4, 9, &KMeansParams::default()).unwrap();
        assert!(r.cluster_sizes().iter().all(|&s| s > 0));
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn depth_rule() {
        assert_eq!(min_depth(109_739, 30), 4);
        assert_eq!(min_depth(27_000, 30), 3);
        assert_eq!(min_depth(27_001, 30), 4);
        assert_eq!(min_depth(30, 30), 1);
        assert_eq!(min_depth(1, 2), 1);
        assert_eq!(min_depth(5, 2), 3);
        assert_eq!(min_depth(usize::MAX, 2), 64);
    }

    #[test]
    fn four_points_make_depth_two_tree() {
        let m = line(&[0.0, 0.1, 50.0, 50.1]);
        let t = hierarchical_cluster(&m, &all(4), 2, 3, &KMeansParams::default()).unwrap();
        let leaves = t.leaves();
        assert_eq!(leaves.len(), 2);
        assert!(leaves
            .iter()
            .all(|l| l.members.len() == 2 && l.digits.len() == 1));
        // Leaf digit comes on top: full IDs have two digits.
        assert_eq!(t.depth() + 1, 2);
    }

    #[test]
    fn identical_points_fall_back_to_balanced_split() {
        let m = line(&[7.0; 5]);
        let t = hierarchical_cluster(&m, &all(5), 2, 0, &KMeansParams::default()).unwrap();
        assert!(t.degenerate_splits > 0);
        let mut seen: Vec<usize> = t.leaves().iter().flat_map(|l| l.members.to_vec()).collect();
        seen.sort_unstable();
        assert_eq!(seen, all(5));
        assert!(t.depth() < min_depth(5, 2));
    }

    #[test]
    fn capped_kmeans_respects_capacity() {
        // Ten points at 0 and one far point; capacity 4 over 3 clusters.
        let mut xs = vec![0.0; 10];
        xs.push(100.0);
        xs[1] = 0.5;
        let m = line(&xs);
        let r = kmeans_capped(&m, &all(11), 3, 4, 1, &KMeansParams::default()).unwrap();
        assert!(r.cluster_sizes().iter().all(|&s| s <= 4));
        for (c, centroid) in r.centroids.iter().enumerate() {
            let members: Vec<f64> = xs
                .iter()
                .zip(&r.labels)
                .filter(|(_, &l)| l == c)
                .map(|(x, _)| *x)
                .collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            assert!((centroid[0] - mean).abs() < 1e-12);
        }
    }
}
