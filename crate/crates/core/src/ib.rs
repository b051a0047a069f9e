//! Information-bottleneck quantities: Gaussian KL, the stationary
//! assignment distribution, the indexing likelihood and the empirical
//! mutual-information estimators over identifier prefixes.
//!
//! Mutual information is reported in bits unless a [`InfoUnit`] says
//! otherwise.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::{Corpus, EmbeddingMatrix, Split};
use crate::error::{Error, Result};
use crate::indexers::IndexAssignment;
use crate::linalg::{log_sum_exp, mean_of, sq_dist};

/// Numerical slack for the range checks on estimated information values.
pub const EPS_NUM: f64 = 1e-9;
/// Probability floor substituted for a zero gold-prefix probability.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-dimension variances.
    Diagonal(Vec<f64>),
    /// `σ² I`.
    Isotropic(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    cov: Covariance,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        let ok = match &cov {
            Covariance::Diagonal(v) => {
                if v.len() != mean.len() {
                    return Err(Error::Argument(format!(
                        "diagonal covariance has {} entries for dimension {}",
                        v.len(),
                        mean.len()
                    )));
                }
                v.iter().all(|&s| s > 0.0 && s.is_finite())
            }
            Covariance::Isotropic(s) => *s > 0.0 && s.is_finite(),
        };
        if !ok {
            return Err(Error::Argument(
                "variances must be positive and finite".into(),
            ));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Argument("mean must be finite".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: Vec<f64>, sigma2: f64) -> Result<Self> {
        Self::new(mean, Covariance::Isotropic(sigma2))
    }

    pub fn diagonal(mean: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        Self::new(mean, Covariance::Diagonal(variances))
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Covariance {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn trace(&self) -> f64 {
        match &self.cov {
            Covariance::Diagonal(v) => v.iter().sum(),
            Covariance::Isotropic(s) => s * self.dim() as f64,
        }
    }

    fn log_det(&self) -> f64 {
        match &self.cov {
            Covariance::Diagonal(v) => v.iter().map(|s| s.ln()).sum(),
            Covariance::Isotropic(s) => self.dim() as f64 * s.ln(),
        }
    }
}

/// `KL[p || q]` in nats where `q` has isotropic covariance `σ² I`:
///
/// `½ [tr Σ / σ² + ‖μ_q − μ_p‖² / σ² − d + d ln σ² − ln |Σ|]`
pub fn kl_gaussian(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: {} vs {}",
            p.dim(),
            q.dim()
        )));
    }
    let Covariance::Isotropic(s2) = q.cov else {
        return Err(Error::Argument("second argument must be isotropic".into()));
    };
    let d = p.dim() as f64;
    let kl =
        0.5 * (p.trace() / s2 + sq_dist(&p.mean, &q.mean) / s2 - d + d * s2.ln() - p.log_det());
    // Rounding can push an exact zero slightly negative.
    Ok(kl.max(0.0))
}

/// Lagrange multiplier and the isotropic variance of the cluster Gaussians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    beta: f64,
    sigma2: f64,
}

impl BetaParams {
    /// `beta = 0` is accepted as the limit where distortion is free.
    pub fn new(beta: f64, sigma2: f64) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Argument(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::Argument(format!(
                "sigma^2 must be positive, got {sigma2}"
            )));
        }
        Ok(Self { beta, sigma2 })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Stationary assignment distribution
/// `p*(t | x) ∝ p(t) exp(−β KL[p(q|x) || p(q|t)])`, evaluated in log space.
pub fn optimal_assignment_distribution(
    doc: &GaussianParams,
    clusters: &[GaussianParams],
    prior: &[f64],
    beta: &BetaParams,
) -> Result<Vec<f64>> {
    if clusters.is_empty() {
        return Err(Error::Argument("no clusters".into()));
    }
    if prior.len() != clusters.len() {
        return Err(Error::Argument(format!(
            "prior has {} entries for {} clusters",
            prior.len(),
            clusters.len()
        )));
    }
    if prior.iter().any(|&p| !(p >= 0.0)) || (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument("prior must be a probability vector".into()));
    }
    if beta.beta == 0.0 {
        return Ok(prior.to_vec());
    }
    let logw: Vec<f64> = clusters
        .iter()
        .zip(prior)
        .map(|(c, &p)| Ok(p.ln() - beta.beta * kl_gaussian(doc, c)?))
        .collect::<Result<_>>()?;
    let lse = log_sum_exp(&logw);
    let w: Vec<f64> = logw.iter().map(|l| (l - lse).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// Log-likelihood of a document → cluster map, up to an additive constant:
/// `−β / (2σ²) Σ_d ‖x_d − centroid(f(d))‖²` with centroids the member means.
///
/// Row `i` of `reps` belongs to cluster `labels[i]`; clusters are
/// `0..n_clusters` and none may be empty.
pub fn indexing_log_likelihood(
    reps: &EmbeddingMatrix,
    labels: &[usize],
    n_clusters: usize,
    beta: &BetaParams,
) -> Result<f64> {
    if labels.len() != reps.rows() {
        return Err(Error::Argument(format!(
            "{} labels for {} rows",
            labels.len(),
            reps.rows()
        )));
    }
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); n_clusters];
    for (row, &l) in reps.iter_rows().zip(labels) {
        members
            .get_mut(l)
            .ok_or_else(|| Error::Argument(format!("label {l} >= {n_clusters}")))?
            .push(row);
    }
    if let Some(empty) = members.iter().position(Vec::is_empty) {
        return Err(Error::Argument(format!("cluster {empty} has no members")));
    }
    let mut sse = 0.0;
    for m in &members {
        let c = mean_of(m.iter().copied(), reps.dim());
        sse += m.iter().map(|r| sq_dist(r, &c)).sum::<f64>();
    }
    Ok(-beta.beta / (2.0 * beta.sigma2) * sse)
}

/// Dense cluster labels for the first `l` digits of each identifier, in the
/// order of `doc_ids`. Returns `(labels, cluster_count)`.
pub fn prefix_labels(
    assignment: &IndexAssignment,
    doc_ids: &[&str],
    l: usize,
) -> Result<(Vec<usize>, usize)> {
    let mut dense: HashMap<&[u32], usize> = HashMap::new();
    let mut labels = Vec::with_capacity(doc_ids.len());
    for d in doc_ids {
        let id = assignment
            .get(d)
            .ok_or_else(|| Error::Referential(format!("document {d:?} has no identifier")))?;
        let next = dense.len();
        labels.push(*dense.entry(id.prefix(l)).or_insert(next));
    }
    Ok((labels, dense.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InfoUnit {
    #[default]
    Bits,
    Nats,
}

impl InfoUnit {
    pub fn from_bits(self, bits: f64) -> f64 {
        match self {
            InfoUnit::Bits => bits,
            InfoUnit::Nats => bits * std::f64::consts::LN_2,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            InfoUnit::Bits => "bits",
            InfoUnit::Nats => "nats",
        }
    }
}

/// `I(D;T)` at prefix length `l` under the uniform empirical document
/// distribution: `log₂|D| − (1/|D|) Σ_d log₂|D_{t_d}^l|`.
pub fn mutual_info_dt(assignment: &IndexAssignment, l: usize) -> f64 {
    let n = assignment.len();
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = assignment
        .prefix_groups(l)
        .values()
        .map(|g| g.len() as f64 * (g.len() as f64).log2())
        .sum();
    (n as f64).log2() - sum / n as f64
}

/// Probability of an identifier prefix given a query vector.
pub trait PrefixScorer: Sync {
    /// Natural log of `p(prefix | query)`.
    fn log_prefix_prob(&self, query: &[f64], prefix: &[u32]) -> Result<f64>;
}

/// Which `p(t)` enters the conditional mutual information estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginalMode {
    /// `p(t) = 1 / |I^l|`, uniform over the distinct prefixes.
    #[default]
    Paper,
    /// `p(t) = |D_t^l| / |D|`.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmiEstimate {
    pub bits: f64,
    pub n_queries: usize,
    /// Queries whose gold prefix probability was raised to the floor.
    pub clamped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmiOptions {
    pub split: Split,
    pub marginal: MarginalMode,
    pub prob_floor: f64,
}

impl Default for CmiOptions {
    fn default() -> Self {
        Self {
            split: Split::Train,
            marginal: MarginalMode::Paper,
            prob_floor: DEFAULT_PROB_FLOOR,
        }
    }
}

/// `I(D;Q|T)` estimated over the queries of one split, with a degenerate
/// `p(d|q)` on the gold document:
/// mean over queries of `−log₂ p(t_gold^l | q) + log₂ p(t_gold^l) + log₂|D|`.
pub fn cond_mutual_info(
    assignment: &IndexAssignment,
    l: usize,
    scorer: &dyn PrefixScorer,
    corpus: &Corpus,
    opts: &CmiOptions,
) -> Result<CmiEstimate> {
    if l == 0 {
        return Err(Error::Argument("prefix length must be >= 1".into()));
    }
    let n_docs = assignment.len() as f64;
    let groups = assignment.prefix_groups(l);
    let n_prefixes = groups.len() as f64;
    let group_size: HashMap<&[u32], usize> = groups.iter().map(|(k, v)| (*k, v.len())).collect();

    let queries: Vec<_> = corpus.queries_in(opts.split).collect();
    if queries.is_empty() {
        return Err(Error::Validation(format!("no {:?} queries", opts.split)));
    }
    let ln_floor = opts.prob_floor.ln();
    let terms: Vec<(f64, bool)> = queries
        .par_iter()
        .map(|q| {
            let id = assignment.get(&q.gold_doc_id).ok_or_else(|| {
                Error::Referential(format!(
                    "gold document {:?} of query {:?} has no identifier",
                    q.gold_doc_id, q.query_id
                ))
            })?;
            let prefix = id.prefix(l);
            let lp = scorer.log_prefix_prob(corpus.query_vector(q), prefix)?;
            let (lp, clamped) = if lp < ln_floor || lp.is_nan() {
                (ln_floor, true)
            } else {
                (lp, false)
            };
            let log2_pt = match opts.marginal {
                MarginalMode::Paper => -n_prefixes.log2(),
                MarginalMode::Empirical => (group_size[prefix] as f64 / n_docs).log2(),
            };
            Ok((
                -lp / std::f64::consts::LN_2 + log2_pt + n_docs.log2(),
                clamped,
            ))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let clamped = terms.iter().filter(|t| t.1).count();
    Ok(CmiEstimate {
        bits: pairwise_sum(&values) / values.len() as f64,
        n_queries: values.len(),
        clamped,
    })
}

/// Sum with a fixed binary reduction tree.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// One point of the bottleneck plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbPoint {
    pub prefix_len: usize,
    /// `I(D;T)` in bits.
    pub i_dt: f64,
    /// `I(D;Q|T)` in bits.
    pub i_dq_given_t: f64,
    pub clamped_queries: usize,
}

/// Bottleneck curve over the given prefix lengths, sorted by `I(D;T)`.
pub fn ib_curve(
    assignment: &IndexAssignment,
    scorer: &dyn PrefixScorer,
    corpus: &Corpus,
    prefix_lens: &[usize],
    opts: &CmiOptions,
) -> Result<Vec<IbPoint>> {
    if prefix_lens.is_empty() {
        return Err(Error::Argument("no prefix lengths".into()));
    }
    if prefix_lens.contains(&0) {
        return Err(Error::Argument("prefix lengths must be >= 1".into()));
    }
    let mut points = prefix_lens
        .iter()
        .map(|&l| {
            let cmi = cond_mutual_info(assignment, l, scorer, corpus, opts)?;
            Ok(IbPoint {
                prefix_len: l,
                i_dt: mutual_info_dt(assignment, l),
                i_dq_given_t: cmi.bits,
                clamped_queries: cmi.clamped,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        a.i_dt
            .total_cmp(&b.i_dt)
            .then(a.prefix_len.cmp(&b.prefix_len))
    });
    Ok(points)
}

/// CSV with header `l,i_dt_<unit>,i_dq_given_t_<unit>,clamped_queries`.
pub fn curve_csv(points: &[IbPoint], unit: InfoUnit) -> String {
    let u = unit.suffix();
    let mut s = format!("l,i_dt_{u},i_dq_given_t_{u},clamped_queries\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.prefix_len,
            unit.from_bits(p.i_dt),
            unit.from_bits(p.i_dq_given_t),
            p.clamped_queries
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indexers::{Alphabet, IdString, IndexMethod};
    use std::collections::BTreeMap;

    fn assignment(ids: &[&[u32]], v: usize) -> IndexAssignment {
        let map: BTreeMap<String, IdString> = ids
            .iter()
            .enumerate()
            .map(|(i, d)| (format!("d{i}"), IdString::new(d.to_vec()).unwrap()))
            .collect();
        IndexAssignment::new(IndexMethod::Random, Alphabet::new(v).unwrap(), 0, map).unwrap()
    }

    #[test]
    fn kl_identical_is_zero() {
        let p = GaussianParams::isotropic(vec![1.0, 2.0], 0.7).unwrap();
        assert!(kl_gaussian(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_shifted_unit_gaussians() {
        let p = GaussianParams::isotropic(vec![0.0; 3], 1.0).unwrap();
        let q = GaussianParams::isotropic(vec![1.0, -2.0, 0.5], 1.0).unwrap();
        let expect = (1.0 + 4.0 + 0.25) / 2.0;
        assert!((kl_gaussian(&p, &q).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn kl_errors() {
        let p = GaussianParams::isotropic(vec![0.0; 2], 1.0).unwrap();
        let q3 = GaussianParams::isotropic(vec![0.0; 3], 1.0).unwrap();
        let qd = GaussianParams::diagonal(vec![0.0; 2], vec![1.0, 2.0]).unwrap();
        assert!(kl_gaussian(&p, &q3).is_err());
        assert!(kl_gaussian(&p, &qd).is_err());
        assert!(GaussianParams::diagonal(vec![0.0; 2], vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn assignment_distribution_limits() {
        let doc = GaussianParams::isotropic(vec![0.0, 0.0], 1.0).unwrap();
        let clusters: Vec<_> = [[0.0, 0.0], [10.0, 0.0], [0.0, -10.0]]
            .iter()
            .map(|m| GaussianParams::isotropic(m.to_vec(), 1.0).unwrap())
            .collect();
        let prior = [0.2, 0.5, 0.3];
        let p0 = optimal_assignment_distribution(
            &doc,
            &clusters,
            &prior,
            &BetaParams::new(0.0, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(p0, prior);
        let p = optimal_assignment_distribution(
            &doc,
            &clusters,
            &prior,
            &BetaParams::new(100.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(p[0] >= 0.99);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn assignment_distribution_survives_underflow() {
        let doc = GaussianParams::isotropic(vec![0.0], 1.0).unwrap();
        let clusters: Vec<_> = [1e3, 2e3]
            .iter()
            .map(|&m| GaussianParams::isotropic(vec![m], 1.0).unwrap())
            .collect();
        let p = optimal_assignment_distribution(
            &doc,
            &clusters,
            &[0.5, 0.5],
            &BetaParams::new(1e3, 1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn likelihood_direct_substitution() {
        let reps = EmbeddingMatrix::new(2, 1, vec![0.0, 2.0]).unwrap();
        let b = BetaParams::new(1.0, 1.0).unwrap();
        assert_eq!(
            indexing_log_likelihood(&reps, &[0, 0], 1, &b).unwrap(),
            -1.0
        );
        assert_eq!(indexing_log_likelihood(&reps, &[0, 1], 2, &b).unwrap(), 0.0);
        assert!(indexing_log_likelihood(&reps, &[0, 0], 2, &b).is_err());
    }

    #[test]
    fn mi_dt_cases() {
        let full = assignment(&[&[0, 0], &[0, 1], &[1, 0], &[1, 1]], 2);
        assert_eq!(mutual_info_dt(&full, 2), 2.0);
        assert_eq!(mutual_info_dt(&full, 1), 1.0);
        assert_eq!(mutual_info_dt(&full, 5), 2.0);
        let skew = assignment(&[&[0], &[1, 0], &[1, 1], &[1, 2]], 3);
        let expect = 2.0 - 3.0 * 3f64.log2() / 4.0;
        assert!((mutual_info_dt(&skew, 1) - expect).abs() < 1e-12);
        assert!((expect - 0.81128).abs() < 1e-5);
    }

    #[test]
    fn prefix_labels_are_dense() {
        let a = assignment(&[&[1, 0], &[1, 1], &[0, 0]], 2);
        let (labels, k) = prefix_labels(&a, &["d0", "d1", "d2"], 1).unwrap();
        assert_eq!(labels, vec![0, 0, 1]);
        assert_eq!(k, 2);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_inputs() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn csv_header() {
        let p = IbPoint {
            prefix_len: 1,
            i_dt: 1.0,
            i_dq_given_t: 2.0,
            clamped_queries: 0,
        };
        let s = curve_csv(&[p], InfoUnit::Bits);
        assert_eq!(
            s,
            "l,i_dt_bits,i_dq_given_t_bits,clamped_queries\n1,1,2,0\n"
        );
    }
}
