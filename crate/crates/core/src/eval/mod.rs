//! Evaluation: in-domain / out-of-domain / cross-dataset scores, the
//! cross-domain matrix, position histograms, gamma sweeps, the domain
//! classifier and synthetic corpora.

mod classifier;
mod histogram;
mod matrix;
mod sweep;
mod synth;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use classifier::{domain_classifier, ClassifierOptions, ClassifierReport};
pub use histogram::{model_position_histogram, position_histogram, relative_position, PositionHistogram};
pub use matrix::{cross_domain_matrix, train_matrix_models, EvalMatrix};
pub use sweep::{gamma_sweep, write_sweep_csv, SweepRow};
pub use synth::{bag_of_words_features, make_synthetic_corpus, PositionBias, SynthDomain, SynthSpec};

use crate::corpus::{Corpus, Document, Split};
use crate::error::{Error, Result};
use crate::labeling::score_selection;
use crate::metrics::RougeTriple;
use crate::nnet::ExternalFeatures;
use crate::strategies::TrainedModel;

/// Indices of the `k` highest probabilities, ties to the smaller index,
/// returned in document order.
pub fn select_top_k<F: PartialOrd + Copy>(probabilities: &[F], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probabilities.len()).collect();
    idx.sort_by(|&a, &b| {
        probabilities[b]
            .partial_cmp(&probabilities[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagPolicy {
    #[default]
    TrueTag,
    UnknownTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Sentences selected per document.
    pub k: usize,
    pub policy: TagPolicy,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 2,
            policy: TagPolicy::TrueTag,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainScore {
    pub domain: String,
    pub n_docs: usize,
    pub rouge: RougeTriple,
    /// Tag row fed to the model, if it has a tag table.
    pub tag: Option<usize>,
}

/// Runs `f` on a pool of `workers` threads.
pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Scores `model` on the test split of one domain. Documents are scored in
/// `doc_id` order, so the result does not depend on file order.
pub fn evaluate_domain(
    model: &TrainedModel,
    corpus: &Corpus,
    domain: usize,
    opts: &EvalOptions,
    features: Option<&ExternalFeatures>,
) -> Result<DomainScore> {
    let name = &corpus
        .domains
        .get(domain)
        .ok_or_else(|| Error::Invalid(format!("unknown domain id {domain}")))?
        .name;
    let tag = model.tag_for(name, opts.policy == TagPolicy::TrueTag);
    let mut docs: Vec<&Document> = corpus.docs(domain, Split::Test).collect();
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let triples = with_workers(opts.workers, || {
        docs.par_iter()
            .map(|d| {
                let probs = model.score(d, tag, features)?;
                Ok(score_selection(d, &select_top_k(&probs, opts.k)))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(DomainScore {
        domain: name.clone(),
        n_docs: docs.len(),
        rouge: RougeTriple::average(&triples),
        tag,
    })
}

/// Per-domain scores for `domains`. Domains the model never trained on are
/// always scored with the unknown tag.
pub fn evaluate_model(
    model: &TrainedModel,
    corpus: &Corpus,
    domains: &[usize],
    opts: &EvalOptions,
    features: Option<&ExternalFeatures>,
) -> Result<Vec<DomainScore>> {
    if opts.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    domains
        .iter()
        .map(|&d| evaluate_domain(model, corpus, d, opts, features))
        .collect()
}

/// Absolute gap between in-domain and out-of-domain averages.
pub fn delta_r(in_avg: f64, out_avg: f64) -> f64 {
    (in_avg - out_avg).abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingScores {
    pub domains: Vec<DomainScore>,
    /// Unweighted mean over domains.
    pub average: RougeTriple,
}

impl SettingScores {
    fn new(domains: Vec<DomainScore>) -> Self {
        let average = RougeTriple::average(domains.iter().filter(|d| d.n_docs > 0).map(|d| &d.rouge));
        Self { domains, average }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub k: usize,
    pub in_domain: SettingScores,
    pub out_of_domain: Option<SettingScores>,
    pub cross_dataset: Option<SettingScores>,
    /// ΔR on ROUGE-1 F1 ×100, from unrounded averages.
    pub delta_r: Option<f64>,
}

impl EvalReport {
    /// Mean of R-1, R-2 and R-L F1 over in-domain averages, ×100.
    pub fn in_mean(&self) -> f64 {
        self.in_domain.average.mean() * 100.0
    }

    pub fn out_mean(&self) -> Option<f64> {
        self.out_of_domain.as_ref().map(|s| s.average.mean() * 100.0)
    }

    pub fn cross_mean(&self) -> Option<f64> {
        self.cross_dataset.as_ref().map(|s| s.average.mean() * 100.0)
    }
}

/// In-domain (source domains, true tags), out-of-domain (held-out domains,
/// unknown tag) and optional cross-dataset (every domain of `cross`,
/// unknown tag) evaluation.
pub fn evaluate_settings(
    model: &TrainedModel,
    corpus: &Corpus,
    opts: &EvalOptions,
    features: Option<&ExternalFeatures>,
    cross: Option<&Corpus>,
) -> Result<EvalReport> {
    let in_domain = SettingScores::new(evaluate_model(model, corpus, &corpus.source_domains, opts, features)?);
    let unknown = EvalOptions {
        policy: TagPolicy::UnknownTag,
        ..*opts
    };
    let out_of_domain = if corpus.heldout_domains.is_empty() {
        None
    } else {
        Some(SettingScores::new(evaluate_model(model, corpus, &corpus.heldout_domains, &unknown, features)?))
    };
    let cross_dataset = match cross {
        Some(c) => {
            let ids: Vec<usize> = c.domains.domains().iter().map(|d| d.id).collect();
            let mut scores = evaluate_model(model, c, &ids, &unknown, features)?;
            for s in &mut scores {
                if model.model.use_domain_tags {
                    s.tag = Some(model.unknown_tag());
                }
            }
            Some(SettingScores::new(scores))
        }
        None => None,
    };
    let delta = out_of_domain
        .as_ref()
        .map(|o| delta_r(in_domain.average.r1 * 100.0, o.average.r1 * 100.0));
    Ok(EvalReport {
        strategy: model.strategy.to_string(),
        k: opts.k,
        in_domain,
        out_of_domain,
        cross_dataset,
        delta_r: delta,
    })
}

/// CSV with one row per (setting, domain) plus average rows; ROUGE ×100.
pub fn write_eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("setting,domain,n_docs,r1,r2,rl\n");
    let settings = [
        ("in_domain", Some(&report.in_domain)),
        ("out_of_domain", report.out_of_domain.as_ref()),
        ("cross_dataset", report.cross_dataset.as_ref()),
    ];
    for (name, s) in settings {
        let Some(s) = s else { continue };
        for d in &s.domains {
            let [a, b, c] = d.rouge.percent();
            let _ = writeln!(out, "{name},{},{},{a:.2},{b:.2},{c:.2}", d.domain, d.n_docs);
        }
        let [a, b, c] = s.average.percent();
        let n: usize = s.domains.iter().map(|d| d.n_docs).sum();
        let _ = writeln!(out, "{name},average,{n},{a:.2},{b:.2},{c:.2}");
    }
    if let Some(d) = report.delta_r {
        let _ = writeln!(out, "delta_r,r1,,{d:.2},,");
    }
    out
}
