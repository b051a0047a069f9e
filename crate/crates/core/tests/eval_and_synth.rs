use gdr_core::corpus::{QuerySource, Split};
use gdr_core::eval::{score, MetricsReport};
use gdr_core::indexers::query_mean;
use gdr_core::retrieval::{RankedDoc, Ranking};
use gdr_core::synth::{distance_correlation, generate, SynthConfig};
use proptest::prelude::*;

fn corpus() -> gdr_core::corpus::Corpus {
    generate(&SynthConfig {
        n_docs: 150,
        queries_per_doc: 1,
        dim: 2,
        seed: 0,
        ..Default::default()
    })
    .unwrap()
    .corpus
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metrics_are_ordered_and_match_direct_counts(ranks in prop::collection::vec(prop::option::of(1usize..=150), 1..40)) {
        let c = corpus();
        let test: Vec<_> = c.queries_in(Split::Test).collect();
        let mut rankings = Vec::new();
        for (q, rank) in test.iter().zip(&ranks) {
            let others = c.documents().iter().map(|d| d.doc_id.clone()).filter(|d| *d != q.gold_doc_id);
            let mut docs: Vec<String> = others.take(149).collect();
            match rank {
                Some(r) => docs.insert(r - 1, q.gold_doc_id.clone()),
                None => docs.truncate(120),
            }
            rankings.push(Ranking {
                query_id: q.query_id.clone(),
                docs: docs.into_iter().enumerate().map(|(i, d)| RankedDoc { doc_id: d, score: 0.0, log_prob: -(i as f64) }).collect(),
            });
        }
        let m = score(&rankings, &c, &[1, 10, 100]).unwrap();
        let n = rankings.len() as f64;
        let (r1, r10, r100) = (m.recall(1).unwrap(), m.recall(10).unwrap(), m.recall(100).unwrap());
        prop_assert!(r1 <= r10 && r10 <= r100);
        prop_assert!(m.mrr_at_100 >= r1 / 100.0 - 1e-12 && m.mrr_at_100 <= 1.0);
        let within = |k: usize| 100.0 * ranks.iter().take(rankings.len()).filter(|r| r.is_some_and(|r| r <= k)).count() as f64 / n;
        prop_assert!((r10 - within(10)).abs() < 1e-9);
        let mrr: f64 = ranks.iter().take(rankings.len()).map(|r| match r { Some(r) if *r <= 100 => 1.0 / *r as f64, _ => 0.0 }).sum::<f64>() / n;
        prop_assert!((m.mrr_at_100 - mrr).abs() < 1e-12);
        let back = MetricsReport::from_json(&m.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }
}

#[test]
fn metrics_json_has_documented_shape() {
    let c = corpus();
    let q = c.queries_in(Split::Test).next().unwrap();
    let r = Ranking {
        query_id: q.query_id.clone(),
        docs: vec![RankedDoc {
            doc_id: q.gold_doc_id.clone(),
            score: 1.0,
            log_prob: 0.0,
        }],
    };
    let json: serde_json::Value =
        serde_json::from_str(&score(&[r], &c, &[1, 10, 100]).unwrap().to_json().unwrap()).unwrap();
    assert_eq!(json["recall"]["1"], 100.0);
    assert_eq!(json["recall"]["100"], 100.0);
    assert_eq!(json["mrr100"], 1.0);
    assert_eq!(json["n_queries"], 1);
}

#[test]
fn unknown_query_is_referential_error() {
    let c = corpus();
    let r = Ranking {
        query_id: "nope".into(),
        docs: vec![],
    };
    assert!(matches!(
        score(&[r], &c, &[1]),
        Err(gdr_core::Error::Referential(_))
    ));
}

#[test]
fn train_means_concentrate_around_query_means() {
    let cfg = SynthConfig {
        n_docs: 1000,
        queries_per_doc: 10,
        dim: 16,
        decouple: true,
        seed: 1,
        ..Default::default()
    };
    let s = generate(&cfg).unwrap();
    let bound = 4.0 * cfg.query_sigma / (cfg.queries_per_doc as f64).sqrt();
    let good = s
        .corpus
        .documents()
        .iter()
        .enumerate()
        .filter(|(i, d)| {
            let m = query_mean(&s.corpus, &d.doc_id, &QuerySource::ALL).unwrap();
            m.iter()
                .zip(s.query_means.row(*i))
                .all(|(a, b)| (a - b).abs() <= bound)
        })
        .count();
    assert!(good >= 990, "{good}/1000 documents within bound");
}

#[test]
fn decoupling_lowers_distance_correlation() {
    let base = SynthConfig {
        n_docs: 500,
        dim: 16,
        seed: 4,
        queries_per_doc: 1,
        ..Default::default()
    };
    let on = generate(&SynthConfig {
        decouple: true,
        ..base.clone()
    })
    .unwrap();
    let off = generate(&SynthConfig {
        decouple: false,
        ..base
    })
    .unwrap();
    let r_on = distance_correlation(on.corpus.doc_embeddings(), &on.query_means, 4000, 1);
    let r_off = distance_correlation(off.corpus.doc_embeddings(), &off.query_means, 4000, 1);
    eprintln!("distance correlation: decoupled {r_on:.3}, identity {r_off:.3}");
    assert!((r_off - 1.0).abs() < 1e-12);
    assert!(r_on < r_off);
}
