use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, Partition, Record};
use crate::error::{Error, Result};
use crate::nnet::ExternalFeatures;

/// Where a domain's summary sentence sits in its documents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionBias {
    First,
    Middle,
    Last,
    Uniform,
    /// Gaussian weights over relative position, centered in `[0, 1]`.
    Peaked { center: f64, spread: f64 },
}

impl PositionBias {
    fn weights(self, n: usize) -> Result<Vec<f64>> {
        let mut w = vec![0.0; n];
        match self {
            PositionBias::First => w[0] = 1.0,
            PositionBias::Middle => w[(n - 1) / 2] = 1.0,
            PositionBias::Last => w[n - 1] = 1.0,
            PositionBias::Uniform => w.fill(1.0),
            PositionBias::Peaked { center, spread } => {
                if !(0.0..=1.0).contains(&center) || !(spread > 0.0 && spread.is_finite()) {
                    return Err(Error::Config(format!(
                        "invalid peaked bias (center {center}, spread {spread})"
                    )));
                }
                for (i, x) in w.iter_mut().enumerate() {
                    let rel = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                    *x = (-(rel - center).powi(2) / (2.0 * spread * spread)).exp();
                }
            }
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDomain {
    pub name: String,
    pub bias: PositionBias,
    pub n_docs: usize,
    pub markers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub domains: Vec<SynthDomain>,
    pub heldout: Vec<String>,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Size of the shared word pool.
    pub vocab_size: usize,
    /// Chance that a sentence carries one of its domain's marker tokens;
    /// every document carries at least one.
    pub marker_rate: f64,
    /// Shared salience cue words.
    pub cues: Vec<String>,
    /// Chance that the summary sentence carries a cue word.
    pub cue_rate: f64,
    /// Chance that any other sentence carries a cue word.
    pub cue_noise: f64,
    /// Fractions of documents in train and valid; the rest is test.
    pub train_frac: f64,
    pub valid_frac: f64,
}

impl SynthSpec {
    /// Three domains whose summary positions peak at the first, middle and
    /// last sentence, 2000 documents each; `last` is held out.
    pub fn demo() -> Self {
        let domain = |name: &str, bias| SynthDomain {
            name: name.to_string(),
            bias,
            n_docs: 2000,
            markers: (0..4).map(|i| format!("{name}_m{i}")).collect(),
        };
        Self {
            domains: vec![
                domain("first", PositionBias::Peaked { center: 0.0, spread: 0.15 }),
                domain("middle", PositionBias::Peaked { center: 0.5, spread: 0.15 }),
                domain("last", PositionBias::Peaked { center: 1.0, spread: 0.15 }),
            ],
            heldout: vec!["last".into()],
            min_sentences: 5,
            max_sentences: 8,
            min_tokens: 6,
            max_tokens: 10,
            vocab_size: 300,
            marker_rate: 0.3,
            cues: (0..4).map(|i| format!("cue{i}")).collect(),
            cue_rate: 0.9,
            cue_noise: 0.05,
            train_frac: 0.8,
            valid_frac: 0.1,
        }
    }

    /// The same spec with `n_docs` documents per domain.
    pub fn with_docs(mut self, n_docs: usize) -> Self {
        self.domains.iter_mut().for_each(|d| d.n_docs = n_docs);
        self
    }

    pub fn partition(&self) -> Partition {
        let source = self
            .domains
            .iter()
            .filter(|d| !self.heldout.contains(&d.name))
            .map(|d| d.name.clone());
        Partition::new(source, self.heldout.clone())
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.domains.len() < 2 {
            return bad("needs at least two domains");
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return bad("sentence range is empty");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens || self.vocab_size == 0 {
            return bad("token range or vocabulary is empty");
        }
        let probs = [self.marker_rate, self.cue_rate, self.cue_noise, self.train_frac, self.valid_frac];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.train_frac + self.valid_frac > 1.0 {
            return bad("rates and split fractions must lie in [0, 1]");
        }
        if (self.cue_rate > 0.0 || self.cue_noise > 0.0) && self.cues.is_empty() {
            return bad("cue rates need at least one cue word");
        }
        for d in &self.domains {
            if d.n_docs == 0 || d.markers.is_empty() {
                return bad(&format!("domain {:?} needs documents and marker tokens", d.name));
            }
        }
        for h in &self.heldout {
            if !self.domains.iter().any(|d| &d.name == h) {
                return bad(&format!("held-out domain {h:?} is not defined"));
            }
        }
        Ok(())
    }
}

/// Generates a corpus as JSON lines. The summary of each document is a
/// verbatim copy of one sentence whose position follows the domain's bias.
pub fn make_synthetic_corpus(spec: &SynthSpec, seed: u64) -> Result<String> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for dom in &spec.domains {
        let n_train = (dom.n_docs as f64 * spec.train_frac).round() as usize;
        let n_valid = (dom.n_docs as f64 * spec.valid_frac).round() as usize;
        for i in 0..dom.n_docs {
            let n = rng.gen_range(spec.min_sentences..=spec.max_sentences);
            let pick = WeightedIndex::new(dom.bias.weights(n)?)
                .map_err(|e| Error::Config(format!("synthetic spec: {e}")))?
                .sample(&mut rng);
            let forced_marker = rng.gen_range(0..n);
            let text: Vec<String> = (0..n)
                .map(|s| {
                    let len = rng.gen_range(spec.min_tokens..=spec.max_tokens);
                    let mut words: Vec<String> = (0..len).map(|_| format!("w{}", rng.gen_range(0..spec.vocab_size))).collect();
                    let cue = if s == pick { spec.cue_rate } else { spec.cue_noise };
                    if rng.gen_bool(cue) {
                        let at = rng.gen_range(0..words.len());
                        words[at] = spec.cues[rng.gen_range(0..spec.cues.len())].clone();
                    }
                    if s == forced_marker || rng.gen_bool(spec.marker_rate) {
                        let at = rng.gen_range(0..=words.len());
                        words.insert(at, dom.markers[rng.gen_range(0..dom.markers.len())].clone());
                    }
                    let mut sentence = words.join(" ");
                    sentence.push('.');
                    sentence
                })
                .collect();
            let split = if i < n_train {
                "train"
            } else if i < n_train + n_valid {
                "valid"
            } else {
                "test"
            };
            let record = Record {
                doc_id: format!("{}-{i:05}", dom.name),
                domain: dom.name.clone(),
                split: split.to_string(),
                summary: vec![text[pick].clone()],
                text,
                labels: None,
            };
            out.push_str(&serde_json::to_string(&record).unwrap());
            out.push('\n');
        }
    }
    Ok(out)
}

fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f32> {
    let digest = Sha256::digest(token.as_bytes());
    let key = u64::from_le_bytes(digest[..8].try_into().unwrap()) ^ seed;
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// A fixed sentence-feature provider: the mean of seeded random token
/// vectors. Stands in for a frozen encoder in tests and demos.
pub fn bag_of_words_features(corpus: &Corpus, dim: usize, seed: u64) -> Result<ExternalFeatures> {
    if dim == 0 {
        return Err(Error::Config("feature dimension must be at least 1".into()));
    }
    let mut feats = ExternalFeatures::new(dim);
    for doc in &corpus.documents {
        let vectors = doc
            .sentences
            .iter()
            .map(|s| {
                let mut v = vec![0.0f32; dim];
                for t in &s.tokens {
                    v.iter_mut().zip(token_vector(t, dim, seed)).for_each(|(a, b)| *a += b);
                }
                let n = s.tokens.len().max(1) as f32;
                v.iter_mut().for_each(|a| *a /= n);
                v
            })
            .collect();
        feats.insert(doc.doc_id.clone(), vectors)?;
    }
    Ok(feats)
}
