use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{select_top_k, EvalOptions, TagPolicy};
use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::nnet::ExternalFeatures;
use crate::strategies::TrainedModel;

/// `index / (n − 1)`, and 0 for single-sentence documents.
pub fn relative_position(index: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        index as f64 / (n - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionHistogram {
    pub bins: usize,
    pub truth: Vec<f64>,
    pub model: Vec<f64>,
}

fn masses(selections: &[(Vec<usize>, usize)], bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    let mut total = 0.0;
    for (picked, n) in selections {
        for &i in picked {
            let b = ((relative_position(i, *n) * bins as f64) as usize).min(bins - 1);
            counts[b] += 1.0;
            total += 1.0;
        }
    }
    if total > 0.0 {
        counts.iter_mut().for_each(|c| *c /= total);
    }
    counts
}

/// Normalized mass per equal-width bin of relative position. Each input is
/// a list of `(selected indices, sentence count)` per document.
pub fn position_histogram(
    truth: &[(Vec<usize>, usize)],
    model: &[(Vec<usize>, usize)],
    bins: usize,
) -> Result<PositionHistogram> {
    if bins < 2 {
        return Err(Error::Config("histogram needs at least 2 bins".into()));
    }
    Ok(PositionHistogram {
        bins,
        truth: masses(truth, bins),
        model: masses(model, bins),
    })
}

impl PositionHistogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,truth_mass,model_mass\n");
        let w = 1.0 / self.bins as f64;
        for b in 0..self.bins {
            let _ = writeln!(
                out,
                "{:.4},{:.4},{:.6},{:.6}",
                b as f64 * w,
                (b + 1) as f64 * w,
                self.truth[b],
                self.model[b]
            );
        }
        out
    }
}

/// Oracle labels against model top-k selections over the test split of
/// `domains`.
pub fn model_position_histogram(
    model: &TrainedModel,
    corpus: &Corpus,
    domains: &[usize],
    opts: &EvalOptions,
    bins: usize,
    features: Option<&ExternalFeatures>,
) -> Result<PositionHistogram> {
    let mut truth = Vec::new();
    let mut picked = Vec::new();
    for &d in domains {
        let name = &corpus.domains.get(d).ok_or_else(|| Error::Invalid(format!("unknown domain id {d}")))?.name;
        let tag = model.tag_for(name, opts.policy == TagPolicy::TrueTag);
        for doc in corpus.docs(d, Split::Test) {
            let labels = doc.labels.as_ref().ok_or_else(|| Error::Unlabeled(doc.doc_id.clone()))?;
            let n = doc.sentences.len();
            truth.push((labels.iter().enumerate().filter(|(_, &l)| l == 1).map(|(i, _)| i).collect(), n));
            let probs = model.score(doc, tag, features)?;
            picked.push((select_top_k(&probs, opts.k), n));
        }
    }
    position_histogram(&truth, &picked, bins)
}
