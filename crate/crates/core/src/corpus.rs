//! Documents, queries and precomputed embeddings.
//!
//! Embeddings live on disk as raw little-endian `f32` values in row-major
//! order (`<name>.f32`) next to a JSON sidecar `<name>.meta.json` holding
//! `{"rows": n, "dim": d}`. After loading, all arithmetic is done in `f64`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub rows: usize,
    pub dim: usize,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("embedding dim must be positive".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::Format(format!(
                "expected {rows}x{dim}={} values, got {}",
                rows * dim,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at row {} column {}",
                data[pos],
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Format("cannot infer dim from zero rows".into()))?;
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Format(format!("row {bad} has length != {dim}")));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New matrix made of the selected rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        EmbeddingMatrix {
            rows: rows.len(),
            dim: self.dim,
            data,
        }
    }

    pub fn meta(&self) -> MatrixMeta {
        MatrixMeta {
            rows: self.rows,
            dim: self.dim,
        }
    }
}

/// Sidecar path for an embedding file: `x.f32` → `x.meta.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let meta_path = sidecar_path(path);
    let meta_bytes = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MatrixMeta = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path.display())))?;

    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let expected = meta
        .rows
        .checked_mul(meta.dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("rows*dim overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: sidecar says {}x{} ({expected} bytes), file has {} bytes",
            path.display(),
            meta.rows,
            meta.dim,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    EmbeddingMatrix::new(meta.rows, meta.dim, data)
}

/// Writes `m` as little-endian `f32` plus its sidecar. Values are rounded to
/// `f32`.
pub fn save_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for v in &m.data {
        w.write_all(&(*v as f32).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta_path = sidecar_path(path);
    let meta = serde_json::to_string(&m.meta())?;
    std::fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuerySource {
    RealQ,
    GenQ,
    DocSeg,
}

impl QuerySource {
    pub const ALL: [QuerySource; 3] = [QuerySource::RealQ, QuerySource::GenQ, QuerySource::DocSeg];

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "realq" => Ok(QuerySource::RealQ),
            "genq" => Ok(QuerySource::GenQ),
            "docseg" => Ok(QuerySource::DocSeg),
            other => Err(Error::Argument(format!("unknown query source {other:?}"))),
        }
    }
}

impl fmt::Display for QuerySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuerySource::RealQ => "RealQ",
            QuerySource::GenQ => "GenQ",
            QuerySource::DocSeg => "DocSeg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub row: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub gold_doc_id: String,
    pub source: QuerySource,
    pub split: Split,
    pub row: usize,
}

// On-disk records. `row` defaults to the line number; `text` is carried
// through but never interpreted.
#[derive(Debug, Serialize, Deserialize)]
struct DocumentRecord {
    doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryRecord {
    query_id: String,
    doc_id: String,
    source: QuerySource,
    split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

/// Validated documents, queries and their embeddings. Immutable once built.
#[derive(Debug, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    queries: Vec<Query>,
    doc_embeddings: EmbeddingMatrix,
    query_embeddings: EmbeddingMatrix,
    doc_index: HashMap<String, usize>,
    queries_by_doc: Vec<Vec<usize>>,
}

impl Corpus {
    pub fn new(
        documents: Vec<Document>,
        queries: Vec<Query>,
        doc_embeddings: EmbeddingMatrix,
        query_embeddings: EmbeddingMatrix,
    ) -> Result<Self> {
        if doc_embeddings.dim() != query_embeddings.dim() {
            return Err(Error::Validation(format!(
                "document dim {} != query dim {}",
                doc_embeddings.dim(),
                query_embeddings.dim()
            )));
        }
        let mut doc_index = HashMap::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            if d.row >= doc_embeddings.rows() {
                return Err(Error::Bounds(format!(
                    "document {:?} row {} >= {} embedding rows",
                    d.doc_id,
                    d.row,
                    doc_embeddings.rows()
                )));
            }
            if doc_index.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::Uniqueness(format!(
                    "duplicate doc_id {:?}",
                    d.doc_id
                )));
            }
        }
        let mut queries_by_doc = vec![Vec::new(); documents.len()];
        let mut seen_q = BTreeSet::new();
        for (qi, q) in queries.iter().enumerate() {
            if !seen_q.insert(q.query_id.as_str()) {
                return Err(Error::Uniqueness(format!(
                    "duplicate query_id {:?}",
                    q.query_id
                )));
            }
            let Some(&di) = doc_index.get(&q.gold_doc_id) else {
                return Err(Error::Referential(format!(
                    "query {:?} references unknown document {:?}",
                    q.query_id, q.gold_doc_id
                )));
            };
            if q.row >= query_embeddings.rows() {
                return Err(Error::Bounds(format!(
                    "query {:?} row {} >= {} embedding rows",
                    q.query_id,
                    q.row,
                    query_embeddings.rows()
                )));
            }
            queries_by_doc[di].push(qi);
        }
        Ok(Self {
            documents,
            queries,
            doc_embeddings,
            query_embeddings,
            doc_index,
            queries_by_doc,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn doc_embeddings(&self) -> &EmbeddingMatrix {
        &self.doc_embeddings
    }

    pub fn query_embeddings(&self) -> &EmbeddingMatrix {
        &self.query_embeddings
    }

    pub fn dim(&self) -> usize {
        self.doc_embeddings.dim()
    }

    pub fn num_docs(&self) -> usize {
        self.documents.len()
    }

    pub fn doc_position(&self, doc_id: &str) -> Option<usize> {
        self.doc_index.get(doc_id).copied()
    }

    pub fn document(&self, doc_id: &str) -> Option<&Document> {
        self.doc_position(doc_id).map(|i| &self.documents[i])
    }

    pub fn doc_vector(&self, doc_id: &str) -> Option<&[f64]> {
        self.document(doc_id)
            .map(|d| self.doc_embeddings.row(d.row))
    }

    pub fn query_vector(&self, q: &Query) -> &[f64] {
        self.query_embeddings.row(q.row)
    }

    /// Q_d: queries whose gold document is `doc_id`, filtered by split and
    /// source.
    pub fn queries_for<'a>(
        &'a self,
        doc_id: &str,
        split: Option<Split>,
        sources: &'a [QuerySource],
    ) -> impl Iterator<Item = &'a Query> + 'a {
        let idx = self.doc_position(doc_id);
        idx.into_iter()
            .flat_map(move |i| self.queries_by_doc[i].iter())
            .map(move |&qi| &self.queries[qi])
            .filter(move |q| split.is_none_or(|s| q.split == s))
            .filter(move |q| sources.contains(&q.source))
    }

    pub fn queries_in(&self, split: Split) -> impl Iterator<Item = &Query> {
        self.queries.iter().filter(move |q| q.split == split)
    }

    /// Document ids in lexicographic order.
    pub fn sorted_doc_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.documents.iter().map(|d| d.doc_id.as_str()).collect();
        ids.sort_unstable();
        ids
    }

    pub fn write_jsonl(&self, doc_path: &Path, query_path: &Path) -> Result<()> {
        write_lines(
            doc_path,
            self.documents.iter().map(|d| DocumentRecord {
                doc_id: d.doc_id.clone(),
                row: Some(d.row),
                text: None,
            }),
        )?;
        write_lines(
            query_path,
            self.queries.iter().map(|q| QueryRecord {
                query_id: q.query_id.clone(),
                doc_id: q.gold_doc_id.clone(),
                source: q.source,
                split: q.split,
                row: Some(q.row),
                text: None,
            }),
        )
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_corpus(
    doc_path: impl AsRef<Path>,
    query_path: impl AsRef<Path>,
    doc_emb: EmbeddingMatrix,
    query_emb: EmbeddingMatrix,
) -> Result<Corpus> {
    let docs: Vec<DocumentRecord> = read_lines(doc_path.as_ref())?;
    let queries: Vec<QueryRecord> = read_lines(query_path.as_ref())?;
    let documents = docs
        .into_iter()
        .enumerate()
        .map(|(i, r)| Document {
            doc_id: r.doc_id,
            row: r.row.unwrap_or(i),
        })
        .collect();
    let queries = queries
        .into_iter()
        .enumerate()
        .map(|(i, r)| Query {
            query_id: r.query_id,
            gold_doc_id: r.doc_id,
            source: r.source,
            split: r.split,
            row: r.row.unwrap_or(i),
        })
        .collect();
    Corpus::new(documents, queries, doc_emb, query_emb)
}

/// Standard file names of a corpus directory.
#[derive(Debug, Clone)]
pub struct CorpusLayout {
    pub documents: PathBuf,
    pub queries: PathBuf,
    pub doc_embeddings: PathBuf,
    pub query_embeddings: PathBuf,
}

impl CorpusLayout {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            documents: dir.join("documents.jsonl"),
            queries: dir.join("queries.jsonl"),
            doc_embeddings: dir.join("docs.f32"),
            query_embeddings: dir.join("queries.f32"),
        }
    }

    /// Every file the layout touches, sidecars included.
    pub fn files(&self) -> Vec<PathBuf> {
        vec![
            self.documents.clone(),
            self.queries.clone(),
            self.doc_embeddings.clone(),
            sidecar_path(&self.doc_embeddings),
            self.query_embeddings.clone(),
            sidecar_path(&self.query_embeddings),
        ]
    }

    pub fn load(&self) -> Result<Corpus> {
        let de = load_embeddings(&self.doc_embeddings)?;
        let qe = load_embeddings(&self.query_embeddings)?;
        load_corpus(&self.documents, &self.queries, de, qe)
    }

    pub fn save(&self, corpus: &Corpus) -> Result<()> {
        corpus.write_jsonl(&self.documents, &self.queries)?;
        save_embeddings(&self.doc_embeddings, corpus.doc_embeddings())?;
        save_embeddings(&self.query_embeddings, corpus.query_embeddings())
    }
}
