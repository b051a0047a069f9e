//! Randomized oracle suites for the closed-form claims: k-means optimality
//! of the likelihood, the Markov identity, and the query-mean MLE.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::corpus::{QuerySource, Split};
use crate::error::{Error, Result};
use crate::ib::BetaParams;
use crate::indexers::query_mean;
use crate::seed::{rng_from, split, SeedStream};
use crate::synth::{discrete_mi_oracle, enumerate_partitions_oracle, generate, SynthConfig};

pub const MI_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    PartitionOracle,
    MiIdentity,
    MleGradient,
}

impl Suite {
    pub const ALL: [Suite; 3] = [
        Suite::PartitionOracle,
        Suite::MiIdentity,
        Suite::MleGradient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::PartitionOracle => "partition-oracle",
            Suite::MiIdentity => "mi-identity",
            Suite::MleGradient => "mle-gradient",
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Suite::PartitionOracle => 50,
            Suite::MiIdentity => 100,
            Suite::MleGradient => 20,
        }
    }

    pub fn run(self, trials: usize, seed: u64) -> Result<SuiteReport> {
        let seed = SeedStream::new(seed).derive(self.name());
        let mut log = Vec::with_capacity(trials);
        for t in 0..trials {
            let trial_seed = split(seed, t as u64);
            log.push(match self {
                Suite::PartitionOracle => partition_trial(t, trial_seed)?,
                Suite::MiIdentity => mi_trial(t, trial_seed)?,
                Suite::MleGradient => mle_trial(t, trial_seed)?,
            });
        }
        Ok(SuiteReport {
            suite: self,
            trials: log,
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trial {
    pub index: usize,
    pub passed: bool,
    /// The checked quantity: a set-mismatch count, an identity residual, or
    /// a gradient norm.
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: Vec<Trial>,
}

impl SuiteReport {
    pub fn passed(&self) -> usize {
        self.trials.iter().filter(|t| t.passed).count()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.trials.len()
    }

    pub fn max_value(&self) -> f64 {
        self.trials.iter().map(|t| t.value).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> String {
        let extra = match self.suite {
            Suite::PartitionOracle => String::new(),
            Suite::MiIdentity => format!(", max residual {:.3e}", self.max_value()),
            Suite::MleGradient => format!(", max gradient norm {:.3e}", self.max_value()),
        };
        format!(
            "{}: {}/{} pass{extra}",
            self.suite,
            self.passed(),
            self.trials.len()
        )
    }
}

fn partition_trial(index: usize, seed: u64) -> Result<Trial> {
    let mut rng = rng_from(seed);
    let k = rng.random_range(2..=3);
    let n = rng.random_range(k..=8);
    let d = rng.random_range(1..=3);
    let points: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let beta = BetaParams::new(rng.random_range(0.1..10.0), rng.random_range(0.1..10.0))?;
    let o = enumerate_partitions_oracle(&points, k, &beta)?;
    let mismatch = o.argmin.symmetric_difference(&o.argmax).count();
    Ok(Trial {
        index,
        passed: mismatch == 0,
        value: mismatch as f64,
        detail: format!(
            "n={n} d={d} k={k} partitions={} argmin={} argmax={}",
            o.partitions_checked,
            o.argmin.len(),
            o.argmax.len()
        ),
    })
}

fn mi_trial(index: usize, seed: u64) -> Result<Trial> {
    let mut rng = rng_from(seed);
    let nd = rng.random_range(1..=8);
    let nq = rng.random_range(1..=8);
    let nt = rng.random_range(1..=nd);
    let mut joint: Vec<Vec<f64>> = (0..nd)
        .map(|_| {
            (0..nq)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        0.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect()
        })
        .collect();
    if joint.iter().flatten().all(|&p| p == 0.0) {
        joint[0][0] = 1.0;
    }
    let total: f64 = joint.iter().flatten().sum();
    joint.iter_mut().flatten().for_each(|p| *p /= total);
    let f: Vec<usize> = (0..nd).map(|_| rng.random_range(0..nt)).collect();
    let m = discrete_mi_oracle(&joint, &f)?;
    let residual = (m.i_dq_given_t - (m.i_dq - m.i_tq)).abs();
    Ok(Trial {
        index,
        passed: residual < MI_TOLERANCE,
        value: residual,
        detail: format!(
            "{nd}x{nq} |T|<={nt} I(D;Q)={:.6} I(T;Q)={:.6} I(D;Q|T)={:.6}",
            m.i_dq, m.i_tq, m.i_dq_given_t
        ),
    })
}

/// Gaussian log-likelihood of `queries` around `mu`, constant dropped.
pub fn gaussian_log_likelihood(queries: &[&[f64]], mu: &[f64], sigma2: f64) -> f64 {
    -queries
        .iter()
        .map(|q| {
            q.iter()
                .zip(mu)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum::<f64>()
        / (2.0 * sigma2)
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn mle_trial(index: usize, seed: u64) -> Result<Trial> {
    let mut rng = rng_from(seed);
    let config = SynthConfig {
        n_docs: rng.random_range(1..=5),
        queries_per_doc: rng.random_range(1..=20),
        dim: rng.random_range(1..=16),
        doc_spread: 1.0,
        query_sigma: rng.random_range(0.1..2.0),
        decouple: rng.random_bool(0.5),
        decouple_cells: None,
        seed,
    };
    let sc = generate(&config)?;
    let corpus = &sc.corpus;
    let doc = &corpus.documents()[rng.random_range(0..corpus.num_docs())].doc_id;
    let mu = query_mean(corpus, doc, &QuerySource::ALL)?;
    let rows: Vec<&[f64]> = corpus
        .queries_for(doc, Some(Split::Train), &QuerySource::ALL)
        .map(|q| corpus.query_vector(q))
        .collect();
    let sigma2 = config.query_sigma * config.query_sigma;
    let grad = numeric_gradient(|m| gaussian_log_likelihood(&rows, m, sigma2), &mu, FD_STEP);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(Trial {
        index,
        passed: norm < GRADIENT_TOLERANCE,
        value: norm,
        detail: format!(
            "doc={doc} queries={} dim={} |grad|={norm:.3e}",
            rows.len(),
            config.dim
        ),
    })
}
