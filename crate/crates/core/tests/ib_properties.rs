use std::collections::BTreeMap;

use gdr_core::corpus::{Corpus, Document, EmbeddingMatrix, Query, QuerySource, Split};
use gdr_core::ib::{
    cond_mutual_info, kl_gaussian, mutual_info_dt, CmiOptions, GaussianParams, MarginalMode,
    PrefixScorer,
};
use gdr_core::indexers::{
    index_hkm, index_random, Alphabet, IdString, IndexAssignment, IndexMethod,
};
use gdr_core::synth::{discrete_mi_oracle, generate, SynthConfig};
use gdr_core::Result;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

fn log_density_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v))
        .sum()
}

#[test]
fn kl_matches_monte_carlo() {
    let pm = vec![0.5, -1.0, 2.0];
    let pv = vec![0.3, 1.5, 0.8];
    let qm = vec![0.0, 0.2, 1.0];
    let qv = 1.7;
    let p = GaussianParams::diagonal(pm.clone(), pv.clone()).unwrap();
    let q = GaussianParams::isotropic(qm.clone(), qv).unwrap();
    let kl = kl_gaussian(&p, &q).unwrap();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let normals: Vec<Normal<f64>> = pm
        .iter()
        .zip(&pv)
        .map(|(m, v)| Normal::new(*m, v.sqrt()).unwrap())
        .collect();
    let n = 1_000_000;
    let (mut sum, mut sum2) = (0.0, 0.0);
    let qvv = vec![qv; 3];
    let mut x = vec![0.0; 3];
    for _ in 0..n {
        for (xi, d) in x.iter_mut().zip(&normals) {
            *xi = d.sample(&mut rng);
        }
        let r = log_density_diag(&x, &pm, &pv) - log_density_diag(&x, &qm, &qvv);
        sum += r;
        sum2 += r * r;
    }
    let mean = sum / n as f64;
    let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!(
        (mean - kl).abs() < 3.0 * se,
        "closed form {kl}, MC {mean} ± {se}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal_params(
        m in prop::collection::vec(-5.0f64..5.0, 1..6),
        shift in prop::collection::vec(-5.0f64..5.0, 6),
        v in 0.01f64..10.0,
        w in 0.01f64..10.0,
    ) {
        let d = m.len();
        let p = GaussianParams::isotropic(m.clone(), v).unwrap();
        prop_assert!(kl_gaussian(&p, &p).unwrap().abs() <= 1e-12);
        let q = GaussianParams::isotropic(m.iter().zip(&shift).map(|(a, b)| a + b).collect(), w).unwrap();
        prop_assert!(kl_gaussian(&p, &q).unwrap() >= 0.0);
        let diag = GaussianParams::diagonal(m.clone(), vec![v; d]).unwrap();
        prop_assert!(kl_gaussian(&diag, &p).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn i_dt_is_nondecreasing_in_prefix_length(n in 1usize..200, v in 2usize..8, seed in any::<u64>()) {
        let s = generate(&SynthConfig { n_docs: n, queries_per_doc: 1, dim: 2, seed, ..Default::default() }).unwrap();
        for a in [index_random(&s.corpus, Alphabet::new(v).unwrap(), seed).unwrap(),
                  index_hkm(&s.corpus, Alphabet::new(v).unwrap(), seed).unwrap()] {
            let vals: Vec<f64> = (1..=a.max_len()).map(|l| mutual_info_dt(&a, l)).collect();
            for w in vals.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
            prop_assert!((vals.last().unwrap() - (n as f64).log2()).abs() <= 1e-12);
        }
    }
}

/// Exact `p(t | q)` from integer co-occurrence counts, keyed by the query's
/// one-dimensional "vector" (its type index).
struct TableScorer {
    counts: Vec<Vec<usize>>,
    group_of: Vec<u32>,
}

impl PrefixScorer for TableScorer {
    fn log_prefix_prob(&self, query: &[f64], prefix: &[u32]) -> Result<f64> {
        let q = query[0] as usize;
        let total: usize = self.counts.iter().map(|r| r[q]).sum();
        let hit: usize = self
            .counts
            .iter()
            .zip(&self.group_of)
            .filter(|(_, g)| **g == prefix[0])
            .map(|(r, _)| r[q])
            .sum();
        Ok((hit as f64 / total as f64).ln())
    }
}

fn markov_case() -> impl Strategy<Value = (usize, usize, Vec<u32>, Vec<usize>)> {
    (1usize..=4, 1usize..=2, 1usize..=8).prop_flat_map(|(nd, per, nq)| {
        (
            Just(nd),
            Just(per),
            prop::collection::vec(0u32..3, nd),
            prop::collection::vec(0..nq, nd * per),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// With an exact posterior and uniform documents the estimator equals
    /// `I(D;Q|T) + H(D|Q)`; the oracle computes the first term from its
    /// definition.
    #[test]
    fn estimator_satisfies_markov_identity((nd, per, groups, types) in markov_case()) {
        let nq = 8;
        let mut counts = vec![vec![0usize; nq]; nd];
        let mut docs = Vec::new();
        let mut queries = Vec::new();
        let mut qrows = Vec::new();
        for d in 0..nd {
            docs.push(Document { doc_id: format!("d{d}"), row: d });
            for k in 0..per {
                let t = types[d * per + k];
                counts[d][t] += 1;
                queries.push(Query {
                    query_id: format!("q{}", queries.len()),
                    gold_doc_id: format!("d{d}"),
                    source: QuerySource::GenQ,
                    split: Split::Train,
                    row: qrows.len(),
                });
                qrows.push(vec![t as f64]);
            }
        }
        let corpus = Corpus::new(
            docs,
            queries,
            EmbeddingMatrix::new(nd, 1, vec![0.0; nd]).unwrap(),
            EmbeddingMatrix::from_rows(&qrows).unwrap(),
        ).unwrap();
        let ids: BTreeMap<String, IdString> = (0..nd)
            .map(|d| (format!("d{d}"), IdString::new(vec![groups[d], d as u32]).unwrap()))
            .collect();
        let asg = IndexAssignment::new(IndexMethod::Random, Alphabet::new(4).unwrap(), 0, ids).unwrap();
        let scorer = TableScorer { counts: counts.clone(), group_of: groups.clone() };
        let opts = CmiOptions { marginal: MarginalMode::Empirical, ..Default::default() };
        let est = cond_mutual_info(&asg, 1, &scorer, &corpus, &opts).unwrap();

        let n = (nd * per) as f64;
        let used: Vec<usize> = (0..nq).filter(|&q| counts.iter().any(|r| r[q] > 0)).collect();
        let joint: Vec<Vec<f64>> = counts.iter().map(|r| used.iter().map(|&q| r[q] as f64 / n).collect()).collect();
        let mut labels: Vec<u32> = groups.clone();
        labels.sort_unstable();
        labels.dedup();
        let f: Vec<usize> = groups.iter().map(|g| labels.binary_search(g).unwrap()).collect();
        let oracle = discrete_mi_oracle(&joint, &f).unwrap();
        let mut h_d_given_q = 0.0;
        for &q in &used {
            let col: usize = counts.iter().map(|r| r[q]).sum();
            for r in &counts {
                if r[q] > 0 {
                    let p = r[q] as f64 / n;
                    h_d_given_q -= p * (r[q] as f64 / col as f64).log2();
                }
            }
        }
        prop_assert!((est.bits - (oracle.i_dq_given_t + h_d_given_q)).abs() < 1e-9,
            "estimate {} oracle {} H(D|Q) {}", est.bits, oracle.i_dq_given_t, h_d_given_q);
        prop_assert!((oracle.i_dq_given_t - (oracle.i_dq - oracle.i_tq)).abs() < 1e-9);
    }
}
