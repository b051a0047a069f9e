//! `gdr`: build corpora, document identifiers, bottleneck curves and
//! retrieval metrics from the command line.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gdr_core::clustering::KMeansParams;
use gdr_core::corpus::{Corpus, CorpusLayout, QuerySource, Split};
use gdr_core::eval::{score, DEFAULT_CUTOFFS};
use gdr_core::ib::{curve_csv, ib_curve, CmiOptions, InfoUnit, MarginalMode};
use gdr_core::indexers::{
    default_lsh_bits, index_bmi_with, index_hkm, index_lsh, index_random, Alphabet,
    IndexAssignment, IndexMethod, MissingQueries, DEFAULT_ALPHABET, LSH_BITS_PER_SYMBOL,
};
use gdr_core::retrieval::{
    build_trie, rank_queries, rankings_tsv, representatives, RepresentativeSource, RetrieverConfig,
    TrieScorer,
};
use gdr_core::seed::SeedStream;
use gdr_core::synth::{distance_correlation, generate, SynthConfig};
use gdr_core::verify::Suite;

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "gdr",
    version,
    about = "Document identifiers for generative retrieval"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic Gaussian corpus.
    Synth(SynthArgs),
    /// Assign identifier strings to documents.
    Index(IndexArgs),
    /// Estimate the bottleneck curve of an assignment over prefix lengths.
    IbCurve(CurveArgs),
    /// Rank test queries by beam search and score them.
    Eval(EvalArgs),
    /// Run the randomized oracle suites.
    Verify(VerifyArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long)]
    docs: usize,
    #[arg(long, default_value_t = 10)]
    queries_per_doc: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    doc_spread: f64,
    #[arg(long, default_value_t = 0.5)]
    query_sigma: f64,
    /// Make query geometry differ from document geometry.
    #[arg(long)]
    decouple: bool,
    /// Cells of the decoupling map (default: docs / 4, rounded up).
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Random,
    Hkmeans,
    Lsh,
    Bmi,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Missing {
    /// Use the document's own embedding.
    Fallback,
    Fail,
}

fn parse_bits(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    if n == 0 || !n.is_multiple_of(LSH_BITS_PER_SYMBOL) {
        return Err(format!(
            "must be a positive multiple of {LSH_BITS_PER_SYMBOL}"
        ));
    }
    Ok(n)
}

fn parse_source(s: &str) -> Result<QuerySource, String> {
    QuerySource::parse(s).map_err(|e| e.to_string())
}

fn parse_prefix_len(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(0) => Err("prefix lengths must be >= 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

#[derive(Args, Serialize)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_ALPHABET)]
    alphabet_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Query sources for bmi.
    #[arg(long, value_delimiter = ',', value_parser = parse_source, default_value = "genq,realq,docseg")]
    #[serde(serialize_with = "serialize_sources")]
    sources: Vec<QuerySource>,
    /// Hyperplanes for lsh (default: 5 per level of the depth rule).
    #[arg(long, value_parser = parse_bits)]
    bits: Option<usize>,
    /// What bmi does with documents that have no queries.
    #[arg(long, value_enum, default_value_t = Missing::Fallback)]
    missing_queries: Missing,
    #[arg(long)]
    out: PathBuf,
}

fn serialize_sources<S: serde::Serializer>(v: &[QuerySource], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|x| x.to_string()))
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Centroids {
    /// The vectors the indexer clustered.
    Indexer,
    Doc,
    QueryMean,
}

impl Centroids {
    fn source(self, method: IndexMethod) -> RepresentativeSource {
        match self {
            Centroids::Indexer => RepresentativeSource::for_method(method),
            Centroids::Doc => RepresentativeSource::DocEmbedding,
            Centroids::QueryMean => RepresentativeSource::QueryMean,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Marginal {
    Paper,
    Empirical,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Serialize)]
struct CurveArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ids: PathBuf,
    /// Comma-separated prefix lengths (default: 1 up to the longest id).
    #[arg(long, value_delimiter = ',', value_parser = parse_prefix_len)]
    prefix_lens: Vec<usize>,
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    tau: f64,
    #[arg(long, value_enum, default_value_t = Marginal::Paper)]
    marginal: Marginal,
    /// Trie centroids of the scoring retriever.
    #[arg(long, value_enum, default_value_t = Centroids::QueryMean)]
    centroids: Centroids,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ids: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    beam_width: u64,
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    tau: f64,
    /// Trie centroids of the retriever.
    #[arg(long, value_enum, default_value_t = Centroids::Indexer)]
    centroids: Centroids,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SuiteArg {
    PartitionOracle,
    MiIdentity,
    MleGradient,
    All,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: SuiteArg,
    /// Trials per suite (default: 50 partition, 100 identity, 20 gradient).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the per-trial report and a manifest here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Index(a) => cmd_index(a),
        Command::IbCurve(a) => cmd_ib_curve(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_corpus(dir: &Path, manifest: &mut RunManifest) -> Result<Corpus> {
    let layout = CorpusLayout::in_dir(dir);
    for f in layout.files() {
        manifest.input(&f)?;
    }
    layout
        .load()
        .with_context(|| format!("loading corpus from {}", dir.display()))
}

fn load_ids(path: &Path, manifest: &mut RunManifest) -> Result<IndexAssignment> {
    manifest.input(path)?;
    IndexAssignment::read_tsv(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_synth(a: SynthArgs) -> Result<bool> {
    let config = SynthConfig {
        n_docs: a.docs,
        queries_per_doc: a.queries_per_doc,
        dim: a.dim,
        doc_spread: a.doc_spread,
        query_sigma: a.query_sigma,
        decouple: a.decouple,
        decouple_cells: a.cells,
        seed: a.seed,
    };
    let s = generate(&config)?;
    create_dir(&a.out)?;
    let layout = CorpusLayout::in_dir(&a.out);
    layout.save(&s.corpus)?;

    let mut m = RunManifest::new("synth", &a)?;
    let stream = SeedStream::new(a.seed);
    m.seed("root", a.seed);
    for label in ["synth-docs", "synth-map", "synth-queries"] {
        m.seed(label, stream.derive(label));
    }
    for f in layout.files() {
        m.output(&f)?;
    }
    m.write(&a.out)?;
    let r = distance_correlation(s.corpus.doc_embeddings(), &s.query_means, 5000, a.seed);
    println!(
        "wrote {} documents and {} queries to {} (doc/query distance correlation {r:.3})",
        s.corpus.num_docs(),
        s.corpus.queries().len(),
        a.out.display()
    );
    Ok(true)
}

fn cmd_index(a: IndexArgs) -> Result<bool> {
    let mut m = RunManifest::new("index", &a)?;
    let corpus = load_corpus(&a.corpus, &mut m)?;
    let alphabet = Alphabet::new(a.alphabet_size)?;
    let assignment = match a.method {
        Method::Random => index_random(&corpus, alphabet, a.seed)?,
        Method::Hkmeans => index_hkm(&corpus, alphabet, a.seed)?,
        Method::Lsh => index_lsh(
            &corpus,
            a.bits
                .unwrap_or_else(|| default_lsh_bits(corpus.num_docs())),
            a.seed,
        )?,
        Method::Bmi => {
            let missing = match a.missing_queries {
                Missing::Fallback => MissingQueries::UseDocEmbedding,
                Missing::Fail => MissingQueries::Fail,
            };
            index_bmi_with(
                &corpus,
                alphabet,
                &a.sources,
                a.seed,
                missing,
                &KMeansParams::default(),
            )?
        }
    };
    create_dir(&a.out)?;
    let path = a.out.join("ids.tsv");
    assignment.write_tsv(&path)?;
    m.seed("root", a.seed).output(&path)?;
    m.write(&a.out)?;
    println!(
        "{}: {} documents, longest id {} digits -> {}",
        assignment.method(),
        assignment.len(),
        assignment.max_len(),
        path.display()
    );
    Ok(true)
}

fn cmd_ib_curve(a: CurveArgs) -> Result<bool> {
    let mut m = RunManifest::new("ib-curve", &a)?;
    let corpus = load_corpus(&a.corpus, &mut m)?;
    let assignment = load_ids(&a.ids, &mut m)?;
    let lens: Vec<usize> = if a.prefix_lens.is_empty() {
        (1..=assignment.max_len()).collect()
    } else {
        a.prefix_lens.clone()
    };
    let reps = representatives(&corpus, a.centroids.source(assignment.method()))?;
    let trie = build_trie(&assignment, &reps)?;
    let scorer = TrieScorer {
        trie: &trie,
        tau: a.tau,
    };
    let opts = |marginal| CmiOptions {
        split: a.split.into(),
        marginal,
        ..Default::default()
    };
    let paper = ib_curve(
        &assignment,
        &scorer,
        &corpus,
        &lens,
        &opts(MarginalMode::Paper),
    )?;
    let empirical = ib_curve(
        &assignment,
        &scorer,
        &corpus,
        &lens,
        &opts(MarginalMode::Empirical),
    )?;
    let chosen = match a.marginal {
        Marginal::Paper => &paper,
        Marginal::Empirical => &empirical,
    };
    create_dir(&a.out)?;
    let path = a.out.join("curve.csv");
    write(&path, &curve_csv(chosen, InfoUnit::Bits))?;
    m.output(&path)?;
    m.write(&a.out)?;

    println!(
        "{:>4} {:>10} {:>16} {:>16}",
        "l", "I(D;T)", "I(D;Q|T) paper", "I(D;Q|T) empir."
    );
    for (p, e) in paper.iter().zip(&empirical) {
        println!(
            "{:>4} {:>10.4} {:>16.4} {:>16.4}",
            p.prefix_len, p.i_dt, p.i_dq_given_t, e.i_dq_given_t
        );
    }
    let clamped: usize = chosen.iter().map(|p| p.clamped_queries).sum();
    if clamped > 0 {
        log::warn!("{clamped} query probabilities were raised to the floor");
    }
    Ok(true)
}

fn cmd_eval(a: EvalArgs) -> Result<bool> {
    let mut m = RunManifest::new("eval", &a)?;
    let corpus = load_corpus(&a.corpus, &mut m)?;
    let assignment = load_ids(&a.ids, &mut m)?;
    if corpus.queries_in(Split::Test).next().is_none() {
        bail!(gdr_core::Error::Validation(
            "the corpus has no test queries".into()
        ));
    }
    let reps = representatives(&corpus, a.centroids.source(assignment.method()))?;
    let trie = build_trie(&assignment, &reps)?;
    let cfg = RetrieverConfig {
        tau: a.tau,
        beam_width: a.beam_width as usize,
        ..Default::default()
    };
    let rankings = rank_queries(&trie, &corpus, Split::Test, &cfg)?;
    let metrics = score(&rankings, &corpus, &DEFAULT_CUTOFFS)?;

    create_dir(&a.out)?;
    let metrics_path = a.out.join("metrics.json");
    let rankings_path = a.out.join("rankings.tsv");
    write(&metrics_path, &(metrics.to_json()? + "\n"))?;
    write(&rankings_path, &rankings_tsv(&rankings))?;
    m.output(&metrics_path)?.output(&rankings_path)?;
    m.write(&a.out)?;
    let r = |n| metrics.recall(n).unwrap_or(f64::NAN);
    println!(
        "{} queries: Rec@1 {:.2}  Rec@10 {:.2}  Rec@100 {:.2}  MRR@100 {:.4}",
        metrics.n_queries,
        r(1),
        r(10),
        r(100),
        metrics.mrr_at_100
    );
    Ok(true)
}

fn cmd_verify(a: VerifyArgs) -> Result<bool> {
    let suites: Vec<Suite> = match a.suite {
        SuiteArg::PartitionOracle => vec![Suite::PartitionOracle],
        SuiteArg::MiIdentity => vec![Suite::MiIdentity],
        SuiteArg::MleGradient => vec![Suite::MleGradient],
        SuiteArg::All => Suite::ALL.to_vec(),
    };
    let mut reports = Vec::new();
    for s in suites {
        let report = s.run(a.trials.unwrap_or(s.default_trials()), a.seed)?;
        for t in &report.trials {
            println!(
                "{} trial {:>3}: {} {}",
                s,
                t.index,
                if t.passed { "pass" } else { "FAIL" },
                t.detail
            );
        }
        println!("{}", report.summary());
        reports.push(report);
    }
    let ok = reports.iter().all(|r| r.all_passed());
    if let Some(out) = &a.out {
        create_dir(out)?;
        let path = out.join("verify_report.json");
        write(&path, &(serde_json::to_string_pretty(&reports)? + "\n"))?;
        let mut m = RunManifest::new("verify", &a)?;
        m.seed("root", a.seed);
        for s in &reports {
            m.seed(
                s.suite.name(),
                SeedStream::new(a.seed).derive(s.suite.name()),
            );
        }
        m.output(&path)?;
        m.write(out)?;
    }
    Ok(ok)
}
