use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split, Vocabulary, VocabularyOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOptions {
    pub embed_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Shuffles training labels across documents (a permutation control).
    pub permute_labels: bool,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            epochs: 10,
            learning_rate: 0.5,
            permute_labels: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    pub domains: Vec<String>,
    pub accuracy: f64,
    /// `1 / K` for `K` source domains.
    pub chance: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub permuted: bool,
}

struct Probe {
    emb: Vec<f64>,
    w: Vec<f64>,
    b: Vec<f64>,
    dim: usize,
    k: usize,
}

impl Probe {
    fn hidden(&self, ids: &[u32]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        for &id in ids {
            let row = &self.emb[id as usize * self.dim..][..self.dim];
            h.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let n = ids.len().max(1) as f64;
        h.iter_mut().for_each(|a| *a /= n);
        h
    }

    fn probs(&self, h: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.k)
            .map(|c| self.b[c] + h.iter().zip(&self.w[c * self.dim..][..self.dim]).map(|(x, w)| x * w).sum::<f64>())
            .collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    fn predict(&self, ids: &[u32]) -> usize {
        let p = self.probs(&self.hidden(ids));
        (0..self.k).fold(0, |best, c| if p[c] > p[best] { c } else { best })
    }

    fn sgd(&mut self, ids: &[u32], label: usize, lr: f64) {
        let h = self.hidden(ids);
        let mut d = self.probs(&h);
        d[label] -= 1.0;
        let mut dh = vec![0.0; self.dim];
        for c in 0..self.k {
            let w = &mut self.w[c * self.dim..][..self.dim];
            for j in 0..self.dim {
                dh[j] += d[c] * w[j];
                w[j] -= lr * d[c] * h[j];
            }
            self.b[c] -= lr * d[c];
        }
        let n = ids.len().max(1) as f64;
        for &id in ids {
            let row = &mut self.emb[id as usize * self.dim..][..self.dim];
            row.iter_mut().zip(&dh).for_each(|(e, g)| *e -= lr * g / n);
        }
    }
}

/// Trains a mean-of-embeddings linear softmax probe that predicts the
/// source domain of a document, and reports its test accuracy.
pub fn domain_classifier(corpus: &Corpus, seed: u64, opts: &ClassifierOptions) -> Result<ClassifierReport> {
    let k = corpus.source_domains.len();
    if k < 2 {
        return Err(Error::Config("the domain classifier needs at least two source domains".into()));
    }
    let vocab = Vocabulary::build(corpus, VocabularyOptions::default())?;
    let class = |d: usize| corpus.source_domains.iter().position(|&s| s == d);
    let docs = |split: Split| -> Vec<(Vec<u32>, usize)> {
        corpus
            .documents
            .iter()
            .filter(|d| d.split == split)
            .filter_map(|d| {
                let c = class(d.domain)?;
                let ids = d.sentences.iter().flat_map(|s| s.tokens.iter().map(|t| vocab.id(t))).collect();
                Some((ids, c))
            })
            .collect()
    };
    let mut train = docs(Split::Train);
    let test = docs(Split::Test);
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyTraining("classifier needs source train and test documents".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if opts.permute_labels {
        let mut labels: Vec<usize> = train.iter().map(|t| t.1).collect();
        labels.shuffle(&mut rng);
        train.iter_mut().zip(labels).for_each(|(t, l)| t.1 = l);
    }
    let dim = opts.embed_dim;
    let mut init = |n: usize| (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect::<Vec<f64>>();
    let mut probe = Probe {
        emb: init(vocab.len() * dim),
        w: init(k * dim),
        b: vec![0.0; k],
        dim,
        k,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            probe.sgd(&train[i].0, train[i].1, opts.learning_rate);
        }
    }
    let correct = test.iter().filter(|(ids, c)| probe.predict(ids) == *c).count();
    Ok(ClassifierReport {
        domains: corpus.source_domains.iter().map(|&d| corpus.domains.get(d).unwrap().name.clone()).collect(),
        accuracy: correct as f64 / test.len() as f64,
        chance: 1.0 / k as f64,
        n_train: train.len(),
        n_test: test.len(),
        permuted: opts.permute_labels,
    })
}
