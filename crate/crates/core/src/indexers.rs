//! Identifier assignment: random, hierarchical k-means, random-hyperplane
//! hashing and bottleneck-minimal (k-means over query means).

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::clustering::{hierarchical_cluster, min_depth, KMeansParams};
use crate::corpus::{Corpus, EmbeddingMatrix, QuerySource, Split};
use crate::error::{Error, Result};
use crate::linalg::{mean_of, sq_dist};
use crate::seed::{split, SeedStream};

/// Alphabet size used by the clustering-based indexers.
pub const DEFAULT_ALPHABET: usize = 30;
/// Bits per hash symbol; a symbol ranges over `2^5 = 32` values.
pub const LSH_BITS_PER_SYMBOL: usize = 5;
pub const LSH_ALPHABET: usize = 1 << LSH_BITS_PER_SYMBOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alphabet(usize);

impl Alphabet {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Argument(format!("alphabet size {size} < 2")));
        }
        if size > u32::MAX as usize {
            return Err(Error::Argument(format!("alphabet size {size} too large")));
        }
        Ok(Self(size))
    }

    pub fn size(self) -> usize {
        self.0
    }

    /// Maximum identifier length needed to name `n` documents.
    pub fn depth_for(self, n: usize) -> usize {
        min_depth(n, self.0)
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Self(DEFAULT_ALPHABET)
    }
}

/// Digit string naming one document. Digits are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IdString(Vec<u32>);

impl IdString {
    pub fn new(digits: Vec<u32>) -> Result<Self> {
        if digits.is_empty() {
            return Err(Error::Argument(
                "identifier must have at least one digit".into(),
            ));
        }
        Ok(Self(digits))
    }

    pub fn digits(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First `l` digits, or the whole string when it is shorter.
    pub fn prefix(&self, l: usize) -> &[u32] {
        &self.0[..l.min(self.0.len())]
    }
}

impl fmt::Display for IdString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for IdString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Format(format!("bad digit {p:?} in identifier {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        IdString::new(digits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndexMethod {
    Random,
    HKMeans,
    Lsh,
    Bmi,
}

impl IndexMethod {
    pub fn name(self) -> &'static str {
        match self {
            IndexMethod::Random => "random",
            IndexMethod::HKMeans => "hkmeans",
            IndexMethod::Lsh => "lsh",
            IndexMethod::Bmi => "bmi",
        }
    }
}

impl fmt::Display for IndexMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "hri" => Ok(IndexMethod::Random),
            "hkmeans" | "hkmi" => Ok(IndexMethod::HKMeans),
            "lsh" | "lshi" => Ok(IndexMethod::Lsh),
            "bmi" => Ok(IndexMethod::Bmi),
            other => Err(Error::Argument(format!(
                "unknown indexing method {other:?}"
            ))),
        }
    }
}

/// Injective, prefix-free map from document id to identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexAssignment {
    method: IndexMethod,
    alphabet: Alphabet,
    seed: u64,
    ids: BTreeMap<String, IdString>,
}

impl IndexAssignment {
    pub fn new(
        method: IndexMethod,
        alphabet: Alphabet,
        seed: u64,
        ids: BTreeMap<String, IdString>,
    ) -> Result<Self> {
        let a = Self {
            method,
            alphabet,
            seed,
            ids,
        };
        a.validate()?;
        Ok(a)
    }

    /// Checks digit range, injectivity and the prefix-free property.
    pub fn validate(&self) -> Result<()> {
        let v = self.alphabet.size() as u32;
        for (doc, id) in &self.ids {
            if let Some(d) = id.digits().iter().find(|&&d| d >= v) {
                return Err(Error::Validation(format!(
                    "document {doc:?} has digit {d} outside alphabet of size {v}"
                )));
            }
        }
        let mut sorted: Vec<(&IdString, &String)> = self.ids.iter().map(|(d, i)| (i, d)).collect();
        sorted.sort();
        // In lexicographic order a string that prefixes another one sorts
        // directly before some string it prefixes.
        for w in sorted.windows(2) {
            let (a, da) = w[0];
            let (b, db) = w[1];
            if a == b {
                return Err(Error::Validation(format!(
                    "documents {da:?} and {db:?} share identifier {a}"
                )));
            }
            if b.digits().starts_with(a.digits()) {
                return Err(Error::Validation(format!(
                    "identifier {a} of {da:?} is a prefix of {b} of {db:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn method(&self) -> IndexMethod {
        self.method
    }

    pub fn alphabet(&self) -> Alphabet {
        self.alphabet
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ids(&self) -> &BTreeMap<String, IdString> {
        &self.ids
    }

    pub fn get(&self, doc_id: &str) -> Option<&IdString> {
        self.ids.get(doc_id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.ids.values().map(IdString::len).max().unwrap_or(0)
    }

    /// Documents grouped by their first `l` digits (D_t^l).
    pub fn prefix_groups(&self, l: usize) -> BTreeMap<&[u32], Vec<&str>> {
        let mut groups: BTreeMap<&[u32], Vec<&str>> = BTreeMap::new();
        for (doc, id) in &self.ids {
            groups.entry(id.prefix(l)).or_default().push(doc);
        }
        groups
    }

    pub fn header(&self) -> String {
        format!(
            "#method={} alphabet={} seed={}",
            self.method,
            self.alphabet.size(),
            self.seed
        )
    }

    pub fn to_tsv(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        for (doc, id) in &self.ids {
            s.push_str(doc);
            s.push('\t');
            s.push_str(&id.to_string());
            s.push('\n');
        }
        s
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_tsv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty identifier file".into()))?;
        let body = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Format(format!("missing header line, got {header:?}")))?;
        let mut method = None;
        let mut alphabet = None;
        let mut seed = None;
        for kv in body.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header field {kv:?}")))?;
            let bad = || Error::Format(format!("bad header value {kv:?}"));
            match k {
                "method" => method = Some(v.parse::<IndexMethod>()?),
                "alphabet" => alphabet = Some(Alphabet::new(v.parse().map_err(|_| bad())?)?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                _ => {}
            }
        }
        let (Some(method), Some(alphabet), Some(seed)) = (method, alphabet, seed) else {
            return Err(Error::Format(format!("incomplete header {header:?}")));
        };
        let mut ids = BTreeMap::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (doc, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("line {}: expected doc_id<TAB>id", n + 2)))?;
            if ids.insert(doc.to_string(), id.parse()?).is_some() {
                return Err(Error::Uniqueness(format!("document {doc:?} listed twice")));
            }
        }
        Self::new(method, alphabet, seed, ids)
    }

    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }
}

/// Digit strings from a hierarchy built over `reps` (row `i` represents
/// `doc_ids[i]`). Within a leaf, the final digit orders documents by
/// distance to the leaf centroid, then by id.
pub fn index_vectors(
    doc_ids: &[&str],
    reps: &EmbeddingMatrix,
    alphabet: Alphabet,
    seed: u64,
    params: &KMeansParams,
) -> Result<BTreeMap<String, IdString>> {
    if doc_ids.len() != reps.rows() {
        return Err(Error::Argument(format!(
            "{} ids for {} representative rows",
            doc_ids.len(),
            reps.rows()
        )));
    }
    if doc_ids.is_empty() {
        return Err(Error::Argument("no documents to index".into()));
    }
    // Canonical order makes the result independent of input order.
    let mut order: Vec<usize> = (0..doc_ids.len()).collect();
    order.sort_by(|&a, &b| doc_ids[a].cmp(doc_ids[b]));
    let points = reps.select(&order);
    let all: Vec<usize> = (0..order.len()).collect();
    let tree = hierarchical_cluster(&points, &all, alphabet.size(), seed, params)?;

    let mut ids = BTreeMap::new();
    for leaf in tree.leaves() {
        let mut members: Vec<(f64, &str)> = leaf
            .members
            .iter()
            .map(|&p| (sq_dist(points.row(p), leaf.centroid), doc_ids[order[p]]))
            .collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        for (digit, (_, doc)) in members.into_iter().enumerate() {
            let mut d = leaf.digits.clone();
            d.push(digit as u32);
            ids.insert(doc.to_string(), IdString(d));
        }
    }
    Ok(ids)
}

/// Random hierarchical indexing with uniform digits.
pub fn index_random(corpus: &Corpus, alphabet: Alphabet, seed: u64) -> Result<IndexAssignment> {
    index_random_with_prior(corpus, alphabet, seed, None)
}

/// Random hierarchical indexing. Each document draws a digit per level from
/// `prior` (uniform when `None`), restricted to digits whose group still has
/// room under the depth rule; groups that fit in the alphabet receive
/// distinct random final digits.
pub fn index_random_with_prior(
    corpus: &Corpus,
    alphabet: Alphabet,
    seed: u64,
    prior: Option<&[f64]>,
) -> Result<IndexAssignment> {
    let v = alphabet.size();
    if let Some(p) = prior {
        if p.len() != v || p.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Argument(format!(
                "prior must be {v} non-negative finite weights"
            )));
        }
        if p.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Argument("prior has no mass".into()));
        }
    }
    let docs = corpus.sorted_doc_ids();
    if docs.is_empty() {
        return Err(Error::Argument("no documents to index".into()));
    }
    let m = alphabet.depth_for(docs.len());
    let mut rng = SeedStream::new(seed).rng("random-index");
    let mut ids = BTreeMap::new();
    let mut stack: Vec<(Vec<&str>, Vec<u32>)> = vec![(docs, Vec::new())];
    while let Some((mut group, prefix)) = stack.pop() {
        group.shuffle(&mut rng);
        if group.len() <= v {
            let digits: Vec<u32> = (0..v as u32).collect();
            let chosen: Vec<u32> = digits
                .choose_multiple(&mut rng, group.len())
                .copied()
                .collect();
            for (doc, d) in group.into_iter().zip(chosen) {
                let mut id = prefix.clone();
                id.push(d);
                ids.insert(doc.to_string(), IdString(id));
            }
            continue;
        }
        let depth = prefix.len();
        let cap = v.saturating_pow(m.saturating_sub(depth + 1) as u32);
        let mut sub: Vec<Vec<&str>> = vec![Vec::new(); v];
        for doc in group {
            let open: Vec<usize> = (0..v).filter(|&d| sub[d].len() < cap).collect();
            let d = match prior {
                None => *open.choose(&mut rng).expect("capacity is feasible"),
                Some(p) => {
                    let total: f64 = open.iter().map(|&d| p[d]).sum();
                    if total > 0.0 {
                        let mut u = rng.random::<f64>() * total;
                        let mut pick = *open.last().unwrap();
                        for &d in &open {
                            if u < p[d] {
                                pick = d;
                                break;
                            }
                            u -= p[d];
                        }
                        pick
                    } else {
                        *open.choose(&mut rng).expect("capacity is feasible")
                    }
                }
            };
            sub[d].push(doc);
        }
        // Reverse push keeps traversal in ascending digit order.
        for (d, g) in sub.into_iter().enumerate().rev() {
            if !g.is_empty() {
                let mut p = prefix.clone();
                p.push(d as u32);
                stack.push((g, p));
            }
        }
    }
    IndexAssignment::new(IndexMethod::Random, alphabet, seed, ids)
}

/// Hierarchical k-means over document embeddings.
pub fn index_hkm(corpus: &Corpus, alphabet: Alphabet, seed: u64) -> Result<IndexAssignment> {
    index_hkm_with(corpus, alphabet, seed, &KMeansParams::default())
}

pub fn index_hkm_with(
    corpus: &Corpus,
    alphabet: Alphabet,
    seed: u64,
    params: &KMeansParams,
) -> Result<IndexAssignment> {
    let (ids, reps) = doc_representatives(corpus);
    let map = index_vectors(&ids, &reps, alphabet, seed, params)?;
    IndexAssignment::new(IndexMethod::HKMeans, alphabet, seed, map)
}

/// Document ids in sorted order with their embedding rows.
pub fn doc_representatives(corpus: &Corpus) -> (Vec<&str>, EmbeddingMatrix) {
    let mut docs: Vec<_> = corpus.documents().iter().collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    let rows: Vec<usize> = docs.iter().map(|d| d.row).collect();
    (ids, corpus.doc_embeddings().select(&rows))
}

/// Random-hyperplane hasher: bit `j` is `a_j · x + b_j > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LshHasher {
    directions: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl LshHasher {
    fn check_bits(n_bits: usize) -> Result<()> {
        if n_bits == 0 || !n_bits.is_multiple_of(LSH_BITS_PER_SYMBOL) {
            return Err(Error::Argument(format!(
                "bit count {n_bits} is not a positive multiple of {LSH_BITS_PER_SYMBOL}"
            )));
        }
        Ok(())
    }

    fn directions(dim: usize, n_bits: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = SeedStream::new(seed).rng("lsh-directions");
        (0..n_bits)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    /// Hyperplanes through the origin.
    pub fn with_zero_offsets(dim: usize, n_bits: usize, seed: u64) -> Result<Self> {
        Self::check_bits(n_bits)?;
        Ok(Self {
            directions: Self::directions(dim, n_bits, seed),
            offsets: vec![0.0; n_bits],
        })
    }

    /// Standard-normal directions; each hyperplane crosses the data at a
    /// uniform position within one projection standard deviation of the
    /// projected mean.
    pub fn fit(data: &EmbeddingMatrix, n_bits: usize, seed: u64) -> Result<Self> {
        Self::check_bits(n_bits)?;
        if data.rows() == 0 {
            return Err(Error::Argument("cannot fit hasher to zero rows".into()));
        }
        let directions = Self::directions(data.dim(), n_bits, seed);
        let mut rng = SeedStream::new(seed).rng("lsh-offsets");
        let n = data.rows() as f64;
        let offsets = directions
            .iter()
            .map(|a| {
                let proj: Vec<f64> = data.iter_rows().map(|x| dot(a, x)).collect();
                let mean = proj.iter().sum::<f64>() / n;
                let sd = (proj.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n).sqrt();
                let u = if sd > 0.0 {
                    rng.random_range(-sd..=sd)
                } else {
                    0.0
                };
                u - mean
            })
            .collect();
        Ok(Self {
            directions,
            offsets,
        })
    }

    pub fn n_bits(&self) -> usize {
        self.directions.len()
    }

    pub fn bits(&self, x: &[f64]) -> Vec<bool> {
        self.directions
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| dot(a, x) + b > 0.0)
            .collect()
    }

    /// Consecutive 5-bit groups read most-significant bit first.
    pub fn symbols(&self, x: &[f64]) -> Vec<u32> {
        self.bits(x)
            .chunks(LSH_BITS_PER_SYMBOL)
            .map(|c| c.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b)))
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Default hyperplane count: enough 5-bit symbols to match the k-means depth
/// for `n` documents.
pub fn default_lsh_bits(n: usize) -> usize {
    LSH_BITS_PER_SYMBOL * min_depth(n.max(1), LSH_ALPHABET)
}

/// Hashing-based indexing over a 32-symbol alphabet. Documents whose symbol
/// strings collide get hierarchical k-means digits appended.
pub fn index_lsh(corpus: &Corpus, n_bits: usize, seed: u64) -> Result<IndexAssignment> {
    let alphabet = Alphabet::new(LSH_ALPHABET)?;
    let (ids, reps) = doc_representatives(corpus);
    if ids.is_empty() {
        return Err(Error::Argument("no documents to index".into()));
    }
    let hasher = LshHasher::fit(&reps, n_bits, seed)?;
    let mut buckets: BTreeMap<Vec<u32>, Vec<usize>> = BTreeMap::new();
    for (i, row) in reps.iter_rows().enumerate() {
        buckets.entry(hasher.symbols(row)).or_default().push(i);
    }
    let stream = SeedStream::new(seed);
    let append_seed = stream.derive("lsh-append");
    let params = KMeansParams::default();
    let mut map = BTreeMap::new();
    for (ordinal, (symbols, members)) in buckets.into_iter().enumerate() {
        if let [only] = members.as_slice() {
            map.insert(ids[*only].to_string(), IdString(symbols));
            continue;
        }
        let member_ids: Vec<&str> = members.iter().map(|&i| ids[i]).collect();
        let sub = reps.select(&members);
        let tails = index_vectors(
            &member_ids,
            &sub,
            alphabet,
            split(append_seed, ordinal as u64),
            &params,
        )?;
        for (doc, tail) in tails {
            let mut d = symbols.clone();
            d.extend_from_slice(tail.digits());
            map.insert(doc, IdString(d));
        }
    }
    IndexAssignment::new(IndexMethod::Lsh, alphabet, seed, map)
}

/// Mean of the training queries of `doc_id` from the given sources: the
/// maximum-likelihood mean of a Gaussian query distribution.
pub fn query_mean(corpus: &Corpus, doc_id: &str, sources: &[QuerySource]) -> Result<Vec<f64>> {
    if corpus.document(doc_id).is_none() {
        return Err(Error::Referential(format!("unknown document {doc_id:?}")));
    }
    let mut qs: Vec<_> = corpus
        .queries_for(doc_id, Some(Split::Train), sources)
        .collect();
    // Fixed summation order regardless of how the query file is sorted.
    qs.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let rows: Vec<&[f64]> = qs.iter().map(|q| corpus.query_vector(q)).collect();
    if rows.is_empty() {
        return Err(Error::MissingData {
            doc_id: doc_id.to_string(),
            reason: format!("no training queries from sources {sources:?}"),
        });
    }
    Ok(mean_of(rows, corpus.dim()))
}

/// What to do with documents that have no queries from the requested
/// sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingQueries {
    /// Represent the document by its own embedding.
    #[default]
    UseDocEmbedding,
    Fail,
}

#[derive(Debug, Clone)]
pub struct QueryMeanReps<'a> {
    pub doc_ids: Vec<&'a str>,
    pub reps: EmbeddingMatrix,
    /// Documents that fell back to their own embedding.
    pub fallbacks: Vec<String>,
}

pub fn query_mean_representatives<'a>(
    corpus: &'a Corpus,
    sources: &[QuerySource],
    missing: MissingQueries,
) -> Result<QueryMeanReps<'a>> {
    let mut doc_ids = Vec::with_capacity(corpus.num_docs());
    let mut rows = Vec::with_capacity(corpus.num_docs());
    let mut fallbacks = Vec::new();
    for d in corpus.documents() {
        let v = match query_mean(corpus, &d.doc_id, sources) {
            Ok(v) => v,
            Err(Error::MissingData { .. }) if missing == MissingQueries::UseDocEmbedding => {
                fallbacks.push(d.doc_id.clone());
                corpus.doc_embeddings().row(d.row).to_vec()
            }
            Err(e) => return Err(e),
        };
        doc_ids.push(d.doc_id.as_str());
        rows.push(v);
    }
    if !fallbacks.is_empty() {
        log::warn!(
            "{} document(s) have no queries from {sources:?}; using their own embedding (first: {})",
            fallbacks.len(),
            fallbacks[0]
        );
    }
    let reps = if rows.is_empty() {
        EmbeddingMatrix::new(0, corpus.dim(), Vec::new())?
    } else {
        EmbeddingMatrix::from_rows(&rows)?
    };
    Ok(QueryMeanReps {
        doc_ids,
        reps,
        fallbacks,
    })
}

/// Bottleneck-minimal indexing: hierarchical k-means over per-document
/// query means. Documents without queries fall back to their embedding.
pub fn index_bmi(
    corpus: &Corpus,
    alphabet: Alphabet,
    sources: &[QuerySource],
    seed: u64,
) -> Result<IndexAssignment> {
    index_bmi_with(
        corpus,
        alphabet,
        sources,
        seed,
        MissingQueries::default(),
        &KMeansParams::default(),
    )
}

pub fn index_bmi_with(
    corpus: &Corpus,
    alphabet: Alphabet,
    sources: &[QuerySource],
    seed: u64,
    missing: MissingQueries,
    params: &KMeansParams,
) -> Result<IndexAssignment> {
    let qm = query_mean_representatives(corpus, sources, missing)?;
    let map = index_vectors(&qm.doc_ids, &qm.reps, alphabet, seed, params)?;
    IndexAssignment::new(IndexMethod::Bmi, alphabet, seed, map)
}

/// Length of the longest common prefix of two identifiers.
pub fn common_prefix_len(a: &IdString, b: &IdString) -> usize {
    a.digits()
        .iter()
        .zip(b.digits())
        .take_while(|(x, y)| x == y)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Query};

    fn corpus_1d(doc_xs: &[f64], queries: &[(usize, f64, QuerySource)]) -> Corpus {
        let docs = (0..doc_xs.len())
            .map(|i| Document {
                doc_id: format!("d{i}"),
                row: i,
            })
            .collect();
        let qs = queries
            .iter()
            .enumerate()
            .map(|(i, &(d, _, s))| Query {
                query_id: format!("q{i}"),
                gold_doc_id: format!("d{d}"),
                source: s,
                split: Split::Train,
                row: i,
            })
            .collect();
        let de = EmbeddingMatrix::new(doc_xs.len(), 1, doc_xs.to_vec()).unwrap();
        let qx: Vec<f64> = queries.iter().map(|q| q.1).collect();
        let qe = if qx.is_empty() {
            EmbeddingMatrix::new(0, 1, vec![]).unwrap()
        } else {
            EmbeddingMatrix::new(qx.len(), 1, qx).unwrap()
        };
        Corpus::new(docs, qs, de, qe).unwrap()
    }

    #[test]
    fn id_string_round_trip() {
        let id: IdString = "3-0-29".parse().unwrap();
        assert_eq!(id.digits(), &[3, 0, 29]);
        assert_eq!(id.to_string(), "3-0-29");
        assert!("".parse::<IdString>().is_err());
        assert!("1--2".parse::<IdString>().is_err());
    }

    #[test]
    fn validation_catches_collisions_prefixes_and_range() {
        let a = Alphabet::new(4).unwrap();
        let mk = |pairs: &[(&str, &[u32])]| {
            pairs
                .iter()
                .map(|(d, id)| (d.to_string(), IdString(id.to_vec())))
                .collect::<BTreeMap<_, _>>()
        };
        assert!(
            IndexAssignment::new(IndexMethod::Random, a, 0, mk(&[("x", &[1]), ("y", &[1])]))
                .is_err()
        );
        assert!(IndexAssignment::new(
            IndexMethod::Random,
            a,
            0,
            mk(&[("x", &[1]), ("y", &[1, 2])])
        )
        .is_err());
        assert!(IndexAssignment::new(IndexMethod::Random, a, 0, mk(&[("x", &[4])])).is_err());
        assert!(IndexAssignment::new(
            IndexMethod::Random,
            a,
            0,
            mk(&[("x", &[1, 3]), ("y", &[1, 2]), ("z", &[2])])
        )
        .is_ok());
    }

    #[test]
    fn random_small_corpus() {
        let c = corpus_1d(&[0.0, 1.0, 2.0, 3.0], &[]);
        let a = index_random(&c, Alphabet::new(2).unwrap(), 3).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a.max_len(), 2);
        assert_eq!(a, index_random(&c, Alphabet::new(2).unwrap(), 3).unwrap());
    }

    #[test]
    fn random_atomic_when_alphabet_covers_corpus() {
        let c = corpus_1d(&[0.0, 1.0, 2.0], &[]);
        let a = index_random(&c, Alphabet::new(30).unwrap(), 1).unwrap();
        assert!(a.ids().values().all(|id| id.len() == 1));
    }

    #[test]
    fn random_prior_concentrates_digits() {
        let xs: Vec<f64> = (0..40).map(f64::from).collect();
        let c = corpus_1d(&xs, &[]);
        let mut prior = vec![0.0; 4];
        prior[2] = 1.0;
        let a = index_random_with_prior(&c, Alphabet::new(4).unwrap(), 5, Some(&prior)).unwrap();
        // 40 docs, |V| = 4: m = 3, so digit 2 can take at most 16 documents.
        let first_two = a.ids().values().filter(|id| id.digits()[0] == 2).count();
        assert_eq!(first_two, 16);
        assert!(index_random_with_prior(&c, Alphabet::new(4).unwrap(), 5, Some(&[1.0])).is_err());
    }

    #[test]
    fn hkm_blob_decides_first_digit() {
        let c = corpus_1d(&[0.0, 0.2, 40.0, 40.2], &[]);
        let a = index_hkm(&c, Alphabet::new(2).unwrap(), 0).unwrap();
        let first = |d: &str| a.get(d).unwrap().digits()[0];
        assert_eq!(first("d0"), first("d1"));
        assert_eq!(first("d2"), first("d3"));
        assert_ne!(first("d0"), first("d2"));
    }

    #[test]
    fn leaf_digits_follow_distance_then_id() {
        // One leaf: centroid 1.0; d1 sits on it, d0 and d2 tie at distance 1.
        let c = corpus_1d(&[0.0, 1.0, 2.0], &[]);
        let a = index_hkm(&c, Alphabet::new(4).unwrap(), 0).unwrap();
        assert_eq!(a.get("d1").unwrap().digits(), &[0]);
        assert_eq!(a.get("d0").unwrap().digits(), &[1]);
        assert_eq!(a.get("d2").unwrap().digits(), &[2]);
    }

    #[test]
    fn lsh_rejects_bad_bit_count() {
        let c = corpus_1d(&[0.0, 1.0], &[]);
        assert!(matches!(index_lsh(&c, 7, 0), Err(Error::Argument(_))));
        assert!(matches!(index_lsh(&c, 0, 0), Err(Error::Argument(_))));
    }

    #[test]
    fn lsh_identical_vectors_share_symbols() {
        let c = corpus_1d(&[1.5, 1.5, -3.0], &[]);
        let a = index_lsh(&c, 10, 4).unwrap();
        let x = a.get("d0").unwrap();
        let y = a.get("d1").unwrap();
        assert_eq!(x.prefix(2), y.prefix(2));
        assert!(x.len() > 2 && y.len() > 2);
        assert_ne!(x, y);
    }

    #[test]
    fn lsh_sign_flip_complements_bits() {
        let h = LshHasher::with_zero_offsets(3, 15, 11).unwrap();
        let v = [0.3, -1.2, 2.0];
        let neg = [-0.3, 1.2, -2.0];
        for (a, b) in h.bits(&v).iter().zip(h.bits(&neg)) {
            assert_ne!(*a, b);
        }
    }

    #[test]
    fn default_bits_scale_with_corpus() {
        assert_eq!(default_lsh_bits(10), 5);
        assert_eq!(default_lsh_bits(1000), 10);
        assert_eq!(default_lsh_bits(109_739), 20);
    }

    #[test]
    fn query_mean_cases() {
        let g = QuerySource::GenQ;
        let c = corpus_1d(
            &[0.0, 5.0],
            &[(0, 1.0, g), (0, 3.0, g), (1, 7.0, QuerySource::RealQ)],
        );
        assert_eq!(query_mean(&c, "d0", &[g]).unwrap(), vec![2.0]);
        assert_eq!(query_mean(&c, "d1", &QuerySource::ALL).unwrap(), vec![7.0]);
        let err = query_mean(&c, "d1", &[g]).unwrap_err();
        assert!(matches!(err, Error::MissingData { ref doc_id, .. } if doc_id == "d1"));
    }

    #[test]
    fn bmi_fallback_and_strict_mode() {
        let g = QuerySource::GenQ;
        let c = corpus_1d(&[0.0, 5.0, 9.0], &[(0, 1.0, g), (1, 3.0, g)]);
        let qm = query_mean_representatives(&c, &[g], MissingQueries::UseDocEmbedding).unwrap();
        assert_eq!(qm.fallbacks, vec!["d2".to_string()]);
        assert_eq!(qm.reps.row(2), &[9.0]);
        assert!(index_bmi(&c, Alphabet::new(2).unwrap(), &[g], 0).is_ok());
        let strict = index_bmi_with(
            &c,
            Alphabet::new(2).unwrap(),
            &[g],
            0,
            MissingQueries::Fail,
            &KMeansParams::default(),
        );
        assert!(matches!(strict, Err(Error::MissingData { .. })));
    }

    #[test]
    fn tsv_round_trip_and_header() {
        let c = corpus_1d(&[0.0, 1.0, 2.0, 3.0, 4.0], &[]);
        let a = index_hkm(&c, Alphabet::new(2).unwrap(), 17).unwrap();
        let text = a.to_tsv();
        assert!(text.starts_with("#method=hkmeans alphabet=2 seed=17\n"));
        assert!(text.lines().nth(1).unwrap().starts_with("d0\t"));
        assert_eq!(IndexAssignment::parse_tsv(&text).unwrap(), a);
        assert!(IndexAssignment::parse_tsv("d0\t1\n").is_err());
    }
}
