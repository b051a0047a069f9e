//! Synthetic Gaussian corpora and the exhaustive oracles used by the
//! verification suites.
//!
//! Documents are drawn as `μ_d ~ N(0, spread² I)`. Each document's query
//! distribution is `N(g(μ_d), σ_q² I)`. With decoupling off, `g` is the
//! identity. With decoupling on, `g` cuts document space into the Voronoi
//! cells of random anchors, moves every cell rigidly onto the anchor of a
//! randomly relabeled cell, and applies a random rotation. Neighbourhoods
//! inside a cell survive, but which cells are close to each other does not,
//! so clusters of document vectors no longer match clusters of queries.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::corpus::{Corpus, Document, EmbeddingMatrix, Query, QuerySource, Split};
use crate::error::{Error, Result};
use crate::ib::{indexing_log_likelihood, BetaParams};
use crate::linalg::sq_dist;
use crate::seed::SeedStream;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_docs: usize,
    /// Training queries per document; one extra test query is always added.
    pub queries_per_doc: usize,
    pub dim: usize,
    pub doc_spread: f64,
    pub query_sigma: f64,
    pub decouple: bool,
    /// Anchor cells for the decoupling map; `None` picks `ceil(n_docs / 4)`.
    pub decouple_cells: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 1000,
            queries_per_doc: 10,
            dim: 16,
            doc_spread: 1.0,
            query_sigma: 0.5,
            decouple: true,
            decouple_cells: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_docs == 0 || self.queries_per_doc == 0 || self.dim == 0 {
            return Err(Error::Argument(
                "document, query and dimension counts must be >= 1".into(),
            ));
        }
        if !(self.doc_spread > 0.0) || !(self.query_sigma > 0.0) {
            return Err(Error::Argument("spreads must be positive".into()));
        }
        if self.decouple_cells == Some(0) {
            return Err(Error::Argument("decoupling needs at least one cell".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    /// `g(μ_d)` for each document, in document order.
    pub query_means: EmbeddingMatrix,
}

/// The map from document vectors to query means.
#[derive(Debug, Clone)]
pub struct DecouplingMap {
    anchors: Vec<Vec<f64>>,
    relabel: Vec<usize>,
    rotation: DMatrix<f64>,
}

impl DecouplingMap {
    pub fn random(dim: usize, cells: usize, spread: f64, seed: u64) -> Self {
        let mut rng = SeedStream::new(seed).rng("synth-map");
        let normal = Normal::new(0.0, spread).expect("positive spread");
        let anchors: Vec<Vec<f64>> = (0..cells)
            .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let mut relabel: Vec<usize> = (0..cells).collect();
        relabel.shuffle(&mut rng);
        let gauss = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let qr = gauss.qr();
        let mut q = qr.q();
        let r = qr.r();
        // Sign-fix so the rotation is a deterministic function of the draw.
        for j in 0..dim {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        Self {
            anchors,
            relabel,
            rotation: q,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let cell = self
            .anchors
            .iter()
            .enumerate()
            .map(|(i, a)| (sq_dist(x, a), i))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, i)| i)
            .unwrap_or(0);
        let from = &self.anchors[cell];
        let to = &self.anchors[self.relabel[cell]];
        let moved: Vec<f64> = x
            .iter()
            .zip(from)
            .zip(to)
            .map(|((v, f), t)| v - f + t)
            .collect();
        let mv = nalgebra::DVector::from_vec(moved);
        (&self.rotation * mv).as_slice().to_vec()
    }
}

fn id_width(n: usize) -> usize {
    n.max(1).to_string().len()
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let stream = SeedStream::new(config.seed);
    let n = config.n_docs;
    let dim = config.dim;

    let mut rng = stream.rng("synth-docs");
    let doc_normal = Normal::new(0.0, config.doc_spread).expect("validated");
    let doc_vecs: Vec<f64> = (0..n * dim).map(|_| doc_normal.sample(&mut rng)).collect();
    let doc_emb = EmbeddingMatrix::new(n, dim, doc_vecs)?;

    let means: Vec<f64> = if config.decouple {
        let cells = config.decouple_cells.unwrap_or(n.div_ceil(4));
        let g = DecouplingMap::random(dim, cells, config.doc_spread, stream.derive("synth-map"));
        doc_emb.iter_rows().flat_map(|r| g.apply(r)).collect()
    } else {
        doc_emb.as_slice().to_vec()
    };
    let query_means = EmbeddingMatrix::new(n, dim, means)?;

    let mut rng = stream.rng("synth-queries");
    let q_normal = Normal::new(0.0, config.query_sigma).expect("validated");
    let per_doc = config.queries_per_doc + 1;
    let dw = id_width(n);
    let qw = id_width(n * per_doc);
    let mut q_vecs = Vec::with_capacity(n * per_doc * dim);
    let mut queries = Vec::with_capacity(n * per_doc);
    let mut documents = Vec::with_capacity(n);
    for d in 0..n {
        let doc_id = format!("d{d:0dw$}");
        let mu = query_means.row(d);
        for k in 0..per_doc {
            let row = queries.len();
            q_vecs.extend(mu.iter().map(|m| m + q_normal.sample(&mut rng)));
            queries.push(Query {
                query_id: format!("q{row:0qw$}"),
                gold_doc_id: doc_id.clone(),
                source: QuerySource::GenQ,
                split: if k < config.queries_per_doc {
                    Split::Train
                } else {
                    Split::Test
                },
                row,
            });
        }
        documents.push(Document { doc_id, row: d });
    }
    let query_emb = EmbeddingMatrix::new(queries.len(), dim, q_vecs)?;
    Ok(SynthCorpus {
        corpus: Corpus::new(documents, queries, doc_emb, query_emb)?,
        query_means,
    })
}

/// Pearson correlation between pairwise distances in two spaces, over
/// `pairs` random document pairs. A sanity metric for decoupling.
pub fn distance_correlation(
    a: &EmbeddingMatrix,
    b: &EmbeddingMatrix,
    pairs: usize,
    seed: u64,
) -> f64 {
    let n = a.rows().min(b.rows());
    if n < 2 || pairs == 0 {
        return f64::NAN;
    }
    let mut rng = SeedStream::new(seed).rng("distance-correlation");
    let mut xs = Vec::with_capacity(pairs);
    let mut ys = Vec::with_capacity(pairs);
    while xs.len() < pairs {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j {
            continue;
        }
        xs.push(sq_dist(a.row(i), a.row(j)).sqrt());
        ys.push(sq_dist(b.row(i), b.row(j)).sqrt());
    }
    pearson(&xs, &ys)
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

pub const MAX_ORACLE_POINTS: usize = 10;
pub const MAX_ORACLE_K: usize = 3;

/// Partitions are canonical label vectors: block ids in order of first
/// appearance (restricted growth strings).
pub type Partition = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOracle {
    pub min_objective: f64,
    pub argmin: BTreeSet<Partition>,
    pub max_likelihood: f64,
    pub argmax: BTreeSet<Partition>,
    pub partitions_checked: usize,
}

/// Every partition of `0..n` into exactly `k` non-empty blocks.
pub fn partitions(n: usize, k: usize) -> Vec<Partition> {
    fn rec(
        i: usize,
        n: usize,
        k: usize,
        used: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Partition>,
    ) {
        if i == n {
            if used == k {
                out.push(cur.clone());
            }
            return;
        }
        // Not enough points left to open the missing blocks.
        if k - used > n - i {
            return;
        }
        for b in 0..=used.min(k - 1) {
            cur.push(b);
            rec(i + 1, n, k, used.max(b + 1), cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k >= 1 && k <= n {
        rec(0, n, k, 0, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

/// Sum of squared distances to block means, computed directly.
fn partition_sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points[0].len();
    let mut total = 0.0;
    for b in 0..k {
        let members: Vec<&Vec<f64>> = points
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == b)
            .map(|(p, _)| p)
            .collect();
        let mut c = vec![0.0; dim];
        for m in &members {
            for (ci, v) in c.iter_mut().zip(m.iter()) {
                *ci += v;
            }
        }
        for ci in c.iter_mut() {
            *ci /= members.len() as f64;
        }
        for m in &members {
            total += m
                .iter()
                .zip(&c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
    }
    total
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Exhaustive sweep over all `k`-partitions of `points`: the set of
/// k-means minimizers and the set of likelihood maximizers.
pub fn enumerate_partitions_oracle(
    points: &[Vec<f64>],
    k: usize,
    beta: &BetaParams,
) -> Result<PartitionOracle> {
    let n = points.len();
    if n == 0 || n > MAX_ORACLE_POINTS {
        return Err(Error::Argument(format!(
            "oracle supports 1..={MAX_ORACLE_POINTS} points, got {n}"
        )));
    }
    if k == 0 || k > MAX_ORACLE_K || k > n {
        return Err(Error::Argument(format!(
            "oracle supports 1 <= k <= min({MAX_ORACLE_K}, n), got {k}"
        )));
    }
    let matrix = EmbeddingMatrix::from_rows(points)?;
    let parts = partitions(n, k);
    let mut scored = Vec::with_capacity(parts.len());
    for p in &parts {
        let sse = partition_sse(points, p, k);
        let ll = indexing_log_likelihood(&matrix, p, k, beta)?;
        scored.push((sse, ll));
    }
    let min_objective = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let max_likelihood = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let argmin = parts
        .iter()
        .zip(&scored)
        .filter(|(_, s)| near(s.0, min_objective))
        .map(|(p, _)| p.clone())
        .collect();
    let argmax = parts
        .iter()
        .zip(&scored)
        .filter(|(_, s)| near(s.1, max_likelihood))
        .map(|(p, _)| p.clone())
        .collect();
    Ok(PartitionOracle {
        min_objective,
        argmin,
        max_likelihood,
        argmax,
        partitions_checked: parts.len(),
    })
}

pub const MAX_ORACLE_SUPPORT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiTriple {
    pub i_dq: f64,
    pub i_tq: f64,
    pub i_dq_given_t: f64,
}

/// Exact `I(D;Q)`, `I(T;Q)` and `I(D;Q|T)` in bits for a joint table
/// `joint[d][q]` and a deterministic map `t = f(d)`. The conditional term is
/// summed from its definition, not from the other two.
pub fn discrete_mi_oracle(joint: &[Vec<f64>], f: &[usize]) -> Result<MiTriple> {
    let nd = joint.len();
    if nd == 0 || nd > MAX_ORACLE_SUPPORT {
        return Err(Error::Argument(format!(
            "need 1..={MAX_ORACLE_SUPPORT} documents, got {nd}"
        )));
    }
    let nq = joint[0].len();
    if nq == 0 || nq > MAX_ORACLE_SUPPORT || joint.iter().any(|r| r.len() != nq) {
        return Err(Error::Argument(
            "joint table must be rectangular with 1..=8 columns".into(),
        ));
    }
    if f.len() != nd {
        return Err(Error::Argument(format!(
            "map has {} entries for {nd} documents",
            f.len()
        )));
    }
    if joint.iter().flatten().any(|&p| !(p >= 0.0)) {
        return Err(Error::Argument("probabilities must be non-negative".into()));
    }
    let total: f64 = joint.iter().flatten().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Argument(format!("joint sums to {total}, not 1")));
    }
    let nt = f.iter().max().map_or(0, |m| m + 1);
    let pd: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let pq: Vec<f64> = (0..nq).map(|q| joint.iter().map(|r| r[q]).sum()).collect();
    let mut pt = vec![0.0; nt];
    let mut ptq = vec![vec![0.0; nq]; nt];
    for d in 0..nd {
        pt[f[d]] += pd[d];
        for q in 0..nq {
            ptq[f[d]][q] += joint[d][q];
        }
    }
    let mut i_dq = 0.0;
    let mut i_dq_given_t = 0.0;
    for d in 0..nd {
        for q in 0..nq {
            let p = joint[d][q];
            if p == 0.0 {
                continue;
            }
            let t = f[d];
            i_dq += p * (p / (pd[d] * pq[q])).log2();
            // p(d,q|t) / (p(d|t) p(q|t))
            let num = p / pt[t];
            let den = (pd[d] / pt[t]) * (ptq[t][q] / pt[t]);
            i_dq_given_t += p * (num / den).log2();
        }
    }
    let mut i_tq = 0.0;
    for t in 0..nt {
        for q in 0..nq {
            let p = ptq[t][q];
            if p > 0.0 {
                i_tq += p * (p / (pt[t] * pq[q])).log2();
            }
        }
    }
    Ok(MiTriple {
        i_dq,
        i_tq,
        i_dq_given_t,
    })
}
