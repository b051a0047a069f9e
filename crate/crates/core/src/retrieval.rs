//! Training-free probabilistic retriever over the identifier hierarchy.
//!
//! Each trie node stores the mean of its members' representative vectors.
//! A query descends the trie through a softmax over
//! `−‖q − centroid‖² / τ` among siblings, so the probability of a prefix is
//! the product of the level factors along its path. This stands in for a
//! trained sequence-to-sequence model.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::{Corpus, QuerySource, Split};
use crate::error::{Error, Result};
use crate::ib::PrefixScorer;
use crate::indexers::{query_mean_representatives, IndexAssignment, IndexMethod, MissingQueries};
use crate::linalg::{log_sum_exp, sq_dist};

/// Default number of ranked documents (the MRR@100 depth).
pub const DEFAULT_MAX_RESULTS: usize = 100;

#[derive(Debug, Clone)]
pub struct TrieNode {
    pub digit: Option<u32>,
    pub depth: usize,
    pub centroid: Vec<f64>,
    /// Positions into [`PrefixTrie::doc_ids`].
    pub members: Vec<usize>,
    /// Node indices ordered by digit.
    pub children: Vec<usize>,
    /// Set on leaves.
    pub doc: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PrefixTrie {
    nodes: Vec<TrieNode>,
    doc_ids: Vec<String>,
}

/// Per-document vectors used as trie centroids.
pub type Representatives = HashMap<String, Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepresentativeSource {
    DocEmbedding,
    /// Mean of the document's training queries (all sources), falling back
    /// to the document embedding.
    QueryMean,
}

impl RepresentativeSource {
    /// The vectors the given indexer clustered.
    pub fn for_method(method: IndexMethod) -> Self {
        match method {
            IndexMethod::Bmi => RepresentativeSource::QueryMean,
            _ => RepresentativeSource::DocEmbedding,
        }
    }
}

pub fn representatives(corpus: &Corpus, source: RepresentativeSource) -> Result<Representatives> {
    match source {
        RepresentativeSource::DocEmbedding => Ok(corpus
            .documents()
            .iter()
            .map(|d| {
                (
                    d.doc_id.clone(),
                    corpus.doc_embeddings().row(d.row).to_vec(),
                )
            })
            .collect()),
        RepresentativeSource::QueryMean => {
            let qm = query_mean_representatives(
                corpus,
                &QuerySource::ALL,
                MissingQueries::UseDocEmbedding,
            )?;
            Ok(qm
                .doc_ids
                .iter()
                .zip(qm.reps.iter_rows())
                .map(|(d, r)| (d.to_string(), r.to_vec()))
                .collect())
        }
    }
}

pub fn build_trie(assignment: &IndexAssignment, reps: &Representatives) -> Result<PrefixTrie> {
    let doc_ids: Vec<String> = assignment.ids().keys().cloned().collect();
    let dim = doc_ids
        .first()
        .and_then(|d| reps.get(d))
        .map(Vec::len)
        .unwrap_or(0);
    let mut nodes = vec![TrieNode {
        digit: None,
        depth: 0,
        centroid: vec![0.0; dim],
        members: Vec::new(),
        children: Vec::new(),
        doc: None,
    }];
    let mut child_maps: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new()];
    for (pos, (doc, id)) in assignment.ids().iter().enumerate() {
        let v = reps
            .get(doc)
            .ok_or_else(|| Error::Argument(format!("no representative for document {doc:?}")))?;
        if v.len() != dim {
            return Err(Error::Argument(format!(
                "representative of {doc:?} has dim {} != {dim}",
                v.len()
            )));
        }
        let mut cur = 0;
        add_member(&mut nodes[cur], pos, v);
        for &d in id.digits() {
            let next = match child_maps[cur].get(&d) {
                Some(&n) => n,
                None => {
                    let n = nodes.len();
                    nodes.push(TrieNode {
                        digit: Some(d),
                        depth: nodes[cur].depth + 1,
                        centroid: vec![0.0; dim],
                        members: Vec::new(),
                        children: Vec::new(),
                        doc: None,
                    });
                    child_maps.push(BTreeMap::new());
                    child_maps[cur].insert(d, n);
                    n
                }
            };
            cur = next;
            add_member(&mut nodes[cur], pos, v);
        }
        nodes[cur].doc = Some(pos);
    }
    for (node, children) in nodes.iter_mut().zip(child_maps) {
        node.children = children.into_values().collect();
        if !node.members.is_empty() {
            let inv = 1.0 / node.members.len() as f64;
            node.centroid.iter_mut().for_each(|c| *c *= inv);
        }
    }
    Ok(PrefixTrie { nodes, doc_ids })
}

fn add_member(node: &mut TrieNode, pos: usize, v: &[f64]) {
    node.members.push(pos);
    for (c, x) in node.centroid.iter_mut().zip(v) {
        *c += x;
    }
}

impl PrefixTrie {
    pub fn nodes(&self) -> &[TrieNode] {
        &self.nodes
    }

    pub fn root(&self) -> &TrieNode {
        &self.nodes[0]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn leaf_count(&self) -> usize {
        self.doc_ids.len()
    }

    /// Node reached by following `prefix` from the root.
    pub fn find(&self, prefix: &[u32]) -> Result<usize> {
        let mut cur = 0;
        for &d in prefix {
            cur = *self.nodes[cur]
                .children
                .iter()
                .find(|&&c| self.nodes[c].digit == Some(d))
                .ok_or_else(|| Error::Lookup(format!("prefix {prefix:?} not in trie")))?;
        }
        Ok(cur)
    }

    /// Log softmax over the children of `node`, parallel to its children.
    pub fn child_log_probs(&self, node: usize, query: &[f64], tau: f64) -> Vec<f64> {
        let children = &self.nodes[node].children;
        let logits: Vec<f64> = children
            .iter()
            .map(|&c| -sq_dist(query, &self.nodes[c].centroid) / tau)
            .collect();
        let lse = log_sum_exp(&logits);
        logits.into_iter().map(|x| x - lse).collect()
    }

    pub fn log_prefix_prob(&self, query: &[f64], prefix: &[u32], tau: f64) -> Result<f64> {
        let mut cur = 0;
        let mut lp = 0.0;
        for &d in prefix {
            let node = &self.nodes[cur];
            let j = node
                .children
                .iter()
                .position(|&c| self.nodes[c].digit == Some(d))
                .ok_or_else(|| Error::Lookup(format!("prefix {prefix:?} not in trie")))?;
            lp += self.child_log_probs(cur, query, tau)[j];
            cur = node.children[j];
        }
        Ok(lp)
    }
}

pub fn prefix_prob(trie: &PrefixTrie, query: &[f64], prefix: &[u32], tau: f64) -> Result<f64> {
    Ok(trie.log_prefix_prob(query, prefix, tau)?.exp())
}

/// [`PrefixScorer`] backed by a trie at a fixed temperature.
#[derive(Debug, Clone, Copy)]
pub struct TrieScorer<'a> {
    pub trie: &'a PrefixTrie,
    pub tau: f64,
}

impl PrefixScorer for TrieScorer<'_> {
    fn log_prefix_prob(&self, query: &[f64], prefix: &[u32]) -> Result<f64> {
        self.trie.log_prefix_prob(query, prefix, self.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrieverConfig {
    pub tau: f64,
    pub beam_width: usize,
    pub max_results: usize,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            beam_width: 100,
            max_results: DEFAULT_MAX_RESULTS,
        }
    }
}

impl RetrieverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Argument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.beam_width == 0 {
            return Err(Error::Argument("beam width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    pub doc_id: String,
    /// Joint probability of the identifier.
    pub score: f64,
    pub log_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    pub docs: Vec<RankedDoc>,
}

impl Ranking {
    /// 1-based rank of `doc_id`, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.docs
            .iter()
            .position(|d| d.doc_id == doc_id)
            .map(|p| p + 1)
    }
}

fn finish(
    trie: &PrefixTrie,
    query_id: &str,
    mut leaves: Vec<(f64, usize)>,
    limit: usize,
) -> Ranking {
    leaves.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| trie.doc_ids[a.1].cmp(&trie.doc_ids[b.1]))
    });
    leaves.truncate(limit);
    Ranking {
        query_id: query_id.to_string(),
        docs: leaves
            .into_iter()
            .map(|(lp, doc)| RankedDoc {
                doc_id: trie.doc_ids[doc].clone(),
                score: lp.exp(),
                log_prob: lp,
            })
            .collect(),
    }
}

/// Width-`W` beam search over trie levels by cumulative log probability.
/// Leaves compete for beam slots at the level where they appear and then
/// leave the beam.
pub fn beam_rank(
    trie: &PrefixTrie,
    query_id: &str,
    query: &[f64],
    cfg: &RetrieverConfig,
) -> Ranking {
    let mut beam: Vec<(f64, usize)> = vec![(0.0, 0)];
    let mut finished: Vec<(f64, usize)> = Vec::new();
    if trie.nodes[0].doc.is_some() {
        finished.push((0.0, trie.nodes[0].doc.unwrap()));
        beam.clear();
    }
    while !beam.is_empty() {
        let mut cand: Vec<(f64, usize)> = Vec::new();
        for &(lp, node) in &beam {
            let clp = trie.child_log_probs(node, query, cfg.tau);
            for (&c, l) in trie.nodes[node].children.iter().zip(clp) {
                cand.push((lp + l, c));
            }
        }
        // Node ids are assigned in doc-id order, which makes ties stable.
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        cand.truncate(cfg.beam_width);
        beam.clear();
        for (lp, node) in cand {
            match trie.nodes[node].doc {
                Some(doc) => finished.push((lp, doc)),
                None => beam.push((lp, node)),
            }
        }
    }
    finish(trie, query_id, finished, cfg.max_results)
}

/// Scores every document by its full-path joint probability.
pub fn exhaustive_rank(trie: &PrefixTrie, query_id: &str, query: &[f64], tau: f64) -> Ranking {
    let mut leaves = Vec::with_capacity(trie.leaf_count());
    let mut stack = vec![(0.0, 0usize)];
    while let Some((lp, node)) = stack.pop() {
        if let Some(doc) = trie.nodes[node].doc {
            leaves.push((lp, doc));
            continue;
        }
        let clp = trie.child_log_probs(node, query, tau);
        for (&c, l) in trie.nodes[node].children.iter().zip(clp) {
            stack.push((lp + l, c));
        }
    }
    finish(trie, query_id, leaves, usize::MAX)
}

/// Beam-ranks every query of `split`, in corpus order.
pub fn rank_queries(
    trie: &PrefixTrie,
    corpus: &Corpus,
    split: Split,
    cfg: &RetrieverConfig,
) -> Result<Vec<Ranking>> {
    cfg.validate()?;
    let queries: Vec<_> = corpus.queries_in(split).collect();
    Ok(queries
        .par_iter()
        .map(|q| beam_rank(trie, &q.query_id, corpus.query_vector(q), cfg))
        .collect())
}

/// `query_id <TAB> rank <TAB> doc_id <TAB> log_prob`, one line per entry.
pub fn rankings_tsv(rankings: &[Ranking]) -> String {
    let mut s = String::new();
    for r in rankings {
        for (i, d) in r.docs.iter().enumerate() {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.query_id, i + 1, d.doc_id, d.log_prob);
        }
    }
    s
}
