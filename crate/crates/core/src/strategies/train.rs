use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DomainSchedule, ExperimentConfig, Strategy};
use super::{batch_inputs, joint_step, meta_step, pretrained_step, tag_relabel, tag_step, MetaOptions};
use crate::corpus::{Corpus, Document, EncodedDoc, Split, Vocabulary, VocabularyOptions};
use crate::error::{Error, Result};
use crate::eval::select_top_k;
use crate::labeling::score_selection;
use crate::nnet::checkpoint::{decode_checkpoint, encode_checkpoint, CheckpointHeader};
use crate::nnet::{init_params, DocInput, ExternalFeatures, Gradients, ModelConfig, Optimizer, ParameterStore, Scorer};

/// A model together with everything needed to apply it to new documents.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: ModelConfig,
    pub params: ParameterStore<f32>,
    pub vocab: Vocabulary,
    pub strategy: Strategy,
    /// Domain names in tag-table row order; the unknown tag follows them.
    pub domains: Vec<String>,
    pub train_domains: Vec<String>,
    pub corpus_hash: String,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    strategy: Strategy,
    domains: Vec<String>,
    train_domains: Vec<String>,
    corpus_hash: String,
    vocab_options: VocabularyOptions,
    vocab_fingerprint: String,
    vocabulary: Vec<String>,
}

impl TrainedModel {
    /// Row of the unknown tag.
    pub fn unknown_tag(&self) -> usize {
        self.domains.len()
    }

    /// Tag row for a domain name: its own row if the model was trained on
    /// it, the unknown tag otherwise. `None` for tag-free models.
    pub fn tag_for(&self, domain: &str, use_true_tag: bool) -> Option<usize> {
        if !self.model.use_domain_tags {
            return None;
        }
        let seen = self.train_domains.iter().any(|d| d == domain);
        match self.domains.iter().position(|d| d == domain) {
            Some(row) if seen && use_true_tag => Some(row),
            _ => Some(self.unknown_tag()),
        }
    }

    pub fn scorer(&self) -> Result<Scorer<'_, f32>> {
        Scorer::new(&self.model, &self.params)
    }

    /// Sentence probabilities for one document.
    pub fn score(&self, doc: &Document, tag: Option<usize>, features: Option<&ExternalFeatures>) -> Result<Vec<f32>> {
        let enc = self.vocab.encode(doc);
        let external = match (&self.model.external_feature_dim, features) {
            (Some(_), Some(f)) => Some(f.vectors(&enc.doc_id, enc.sentences.len())?),
            (Some(_), None) => return Err(Error::Invalid("model needs an external feature file".into())),
            (None, _) => None,
        };
        self.scorer()?
            .score_sentences(&DocInput::new(&enc.sentences).tag(tag).external(external))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Metadata {
            strategy: self.strategy,
            domains: self.domains.clone(),
            train_domains: self.train_domains.clone(),
            corpus_hash: self.corpus_hash.clone(),
            vocab_options: self.vocab.options,
            vocab_fingerprint: self.vocab.fingerprint(),
            vocabulary: self.vocab.tokens().to_vec(),
        };
        let header = CheckpointHeader {
            model: self.model.clone(),
            rng_seed: self.params.rng_seed,
            metadata: serde_json::to_value(meta).unwrap(),
        };
        encode_checkpoint(&header, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, params) = decode_checkpoint(bytes)?;
        let meta: Metadata = serde_json::from_value(header.metadata)
            .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        let vocab = Vocabulary::from_list(meta.vocabulary, meta.vocab_options)?;
        if vocab.fingerprint() != meta.vocab_fingerprint {
            return Err(Error::Checkpoint("vocabulary fingerprint mismatch".into()));
        }
        if let Some(e) = params.get("embedding") {
            if e.rows() != vocab.len() {
                return Err(Error::Checkpoint(format!(
                    "vocabulary mismatch: {} embedding rows for {} tokens",
                    e.rows(),
                    vocab.len()
                )));
            }
        }
        let out = Self {
            model: header.model,
            params,
            vocab,
            strategy: meta.strategy,
            domains: meta.domains,
            train_domains: meta.train_domains,
            corpus_hash: meta.corpus_hash,
        };
        out.scorer()?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean training loss per domain (the meta total for meta steps, keyed
    /// by the main domain).
    pub train_loss: BTreeMap<String, f64>,
    pub valid_loss: BTreeMap<String, f64>,
    /// Mean over training domains of validation ROUGE-1 F1.
    pub valid_rouge1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: ExperimentConfig,
    pub train_domains: Vec<String>,
    pub corpus_hash: String,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub checkpoint: Option<String>,
    /// Not serialized, so that report files are reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

struct DomainData<'c> {
    id: usize,
    name: String,
    train: Vec<EncodedDoc>,
    valid: Vec<(&'c Document, EncodedDoc)>,
}

/// Trains on the corpus' source domains.
pub fn train(corpus: &Corpus, exp: &ExperimentConfig, features: Option<&ExternalFeatures>) -> Result<(TrainedModel, TrainReport)> {
    train_on(corpus, &corpus.source_domains, exp, features)
}

/// Trains on the given domains; the vocabulary always comes from all
/// source-domain training text.
pub fn train_on(
    corpus: &Corpus,
    domains: &[usize],
    exp: &ExperimentConfig,
    features: Option<&ExternalFeatures>,
) -> Result<(TrainedModel, TrainReport)> {
    let start = Instant::now();
    let tc = &exp.train;
    tc.validate()?;
    if domains.is_empty() {
        return Err(Error::EmptyTraining("no training domains".into()));
    }
    for d in corpus.documents.iter().filter(|d| domains.contains(&d.domain)) {
        if d.split != Split::Test && d.labels.is_none() {
            return Err(Error::Unlabeled(d.doc_id.clone()));
        }
    }
    let mut model = exp.model.clone();
    model.use_domain_tags = tc.uses_tags();
    model.external_feature_dim = None;
    let features = match tc.strategy {
        Strategy::Pretrained => {
            let f = features.ok_or_else(|| Error::Config("strategy pretrained needs an external feature file".into()))?;
            model.external_feature_dim = Some(f.feature_dim);
            Some(f)
        }
        _ => None,
    };
    model.validate()?;
    if tc.strategy == Strategy::Meta && domains.len() < 2 && tc.gamma < 1.0 {
        return Err(Error::Config("meta training needs at least two training domains".into()));
    }

    let vocab = Vocabulary::build(corpus, exp.vocab)?;
    let mut data: Vec<DomainData> = Vec::new();
    for &id in domains {
        let name = corpus
            .domains
            .get(id)
            .filter(|d| !d.is_unknown_tag)
            .ok_or_else(|| Error::Invalid(format!("unknown domain id {id}")))?
            .name
            .clone();
        let train: Vec<EncodedDoc> = corpus.docs(id, Split::Train).map(|d| vocab.encode(d)).collect();
        if train.is_empty() {
            return Err(Error::EmptyTraining(format!("domain {name:?} has no train documents")));
        }
        let valid = corpus.docs(id, Split::Valid).map(|d| (d, vocab.encode(d))).collect();
        data.push(DomainData { id, name, train, valid });
    }
    let n_domains = corpus.domains.num_domains();
    let unknown = corpus.domains.unknown().id;

    let mut params = init_params(&model, vocab.len(), n_domains, tc.seed)?;
    let mut optimizer = Optimizer::new(tc.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let lr = tc.learning_rate as f32;
    let meta_opts = MetaOptions {
        second_order: tc.meta_second_order,
        normalize: tc.meta_normalize,
        ..MetaOptions::new(tc.gamma, tc.inner_step())
    };
    let relabel = match tc.strategy {
        Strategy::Tag => tc.relabel_prob,
        Strategy::Meta if tc.uses_tags() && tc.meta_relabel => tc.relabel_prob,
        _ => 0.0,
    };

    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParameterStore<f32>)> = None;
    let mut stopped_early = false;
    for epoch in 1..=tc.epochs {
        let batches: Vec<Vec<Vec<usize>>> = data
            .iter()
            .map(|d| {
                let mut order: Vec<usize> = (0..d.train.len()).collect();
                order.shuffle(&mut rng);
                order.chunks(tc.batch_size).map(<[usize]>::to_vec).collect()
            })
            .collect();
        let schedule = match (tc.strategy, tc.domain_schedule) {
            (Strategy::Meta, _) | (_, DomainSchedule::RoundRobin) => round_robin(&batches),
            (_, DomainSchedule::Proportional) => proportional(&batches, &mut rng),
        };
        let mut aux_cursor = vec![0usize; data.len()];
        let mut sums = vec![(0.0f64, 0usize); data.len()];
        for &(di, bi) in &schedule {
            let docs: Vec<&EncodedDoc> = batches[di][bi].iter().map(|&i| &data[di].train[i]).collect();
            let dropout_seed = Some(rng.gen::<u64>());
            let (loss, grads) = match tc.strategy {
                Strategy::Joint => joint_step(&model, &params, &docs, dropout_seed)?,
                Strategy::Pretrained => pretrained_step(&model, &params, &docs, features.unwrap(), dropout_seed)?,
                Strategy::Tag => {
                    let tags = tag_relabel(&vec![data[di].id; docs.len()], unknown, relabel, &mut rng);
                    tag_step(&model, &params, &docs, &tags, dropout_seed)?
                }
                Strategy::Meta => {
                    let mut tasks: Vec<(Vec<&EncodedDoc>, Option<Vec<usize>>)> = Vec::new();
                    let task_tags = |docs: &[&EncodedDoc], id: usize, rng: &mut ChaCha8Rng| {
                        tc.uses_tags()
                            .then(|| tag_relabel(&vec![id; docs.len()], unknown, relabel, rng))
                    };
                    let main_tags = task_tags(&docs, data[di].id, &mut rng);
                    tasks.push((docs, main_tags));
                    let aux_domains = data.iter().enumerate().filter(|&(aj, _)| aj != di && tc.gamma < 1.0);
                    for (aj, d) in aux_domains {
                        let b = &batches[aj][aux_cursor[aj] % batches[aj].len()];
                        aux_cursor[aj] += 1;
                        let aux_docs: Vec<&EncodedDoc> = b.iter().map(|&i| &d.train[i]).collect();
                        let tags = task_tags(&aux_docs, d.id, &mut rng);
                        tasks.push((aux_docs, tags));
                    }
                    let objective = |p: &ParameterStore<f32>, task: usize| -> Result<(f32, Gradients<f32>)> {
                        let (docs, tags) = &tasks[task];
                        let inputs = batch_inputs(docs, tags.as_deref(), None)?;
                        let seed = dropout_seed.map(|s| s.wrapping_add(task as u64));
                        Scorer::new(&model, p)?.loss_and_grad(&inputs, seed)
                    };
                    let aux: Vec<usize> = (1..tasks.len()).collect();
                    if aux.is_empty() {
                        objective(&params, 0)?
                    } else {
                        let out = meta_step(objective, &params, 0, &aux, &meta_opts)?;
                        (out.loss, out.grads)
                    }
                }
            };
            optimizer.step(&mut params, &grads, lr)?;
            sums[di].0 += loss as f64;
            sums[di].1 += 1;
        }

        let scorer = Scorer::new(&model, &params)?;
        let mut valid_loss = BTreeMap::new();
        let mut rouge = Vec::new();
        for d in &data {
            if d.valid.is_empty() {
                continue;
            }
            let tag = model.use_domain_tags.then_some(d.id);
            let mut loss = 0.0;
            let mut r1 = 0.0;
            for (doc, enc) in &d.valid {
                let inputs = batch_inputs(&[enc], tag.map(|t| vec![t]).as_deref(), features)?;
                loss += scorer.batch_loss(&inputs, None)? as f64;
                let probs = scorer.score_sentences(&inputs[0])?;
                r1 += score_selection(doc, &select_top_k(&probs, tc.eval_k)).r1;
            }
            let n = d.valid.len() as f64;
            valid_loss.insert(d.name.clone(), loss / n);
            rouge.push(r1 / n);
        }
        let valid_rouge1 = (!rouge.is_empty()).then(|| rouge.iter().sum::<f64>() / rouge.len() as f64);
        let train_loss = data
            .iter()
            .zip(&sums)
            .filter(|(_, s)| s.1 > 0)
            .map(|(d, s)| (d.name.clone(), s.0 / s.1 as f64))
            .collect();
        epochs.push(EpochRecord {
            epoch,
            steps: schedule.len(),
            train_loss,
            valid_loss,
            valid_rouge1,
        });

        let score = valid_rouge1.unwrap_or(f64::NEG_INFINITY);
        match &best {
            Some((b, _, _)) if score <= *b && valid_rouge1.is_some() => {}
            _ => best = Some((score, epoch, params.clone())),
        }
        let best_epoch = best.as_ref().unwrap().1;
        if valid_rouge1.is_some() && epoch - best_epoch >= tc.patience.max(1) {
            stopped_early = epoch < tc.epochs;
            break;
        }
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch runs");
    let mut resolved = exp.clone();
    resolved.model = model.clone();
    let train_domains: Vec<String> = data.iter().map(|d| d.name.clone()).collect();
    let trained = TrainedModel {
        model,
        params: best_params,
        vocab,
        strategy: tc.strategy,
        domains: corpus.domains.names(),
        train_domains: train_domains.clone(),
        corpus_hash: corpus.content_hash(),
    };
    let report = TrainReport {
        config: resolved,
        train_domains,
        corpus_hash: trained.corpus_hash.clone(),
        epochs,
        best_epoch,
        stopped_early,
        checkpoint: None,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((trained, report))
}

/// `(domain, batch)` pairs taking one batch from each domain in turn.
fn round_robin(batches: &[Vec<Vec<usize>>]) -> Vec<(usize, usize)> {
    let rounds = batches.iter().map(Vec::len).max().unwrap_or(0);
    (0..rounds)
        .flat_map(|r| (0..batches.len()).filter(move |&d| r < batches[d].len()).map(move |d| (d, r)))
        .collect()
}

fn proportional(batches: &[Vec<Vec<usize>>], rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut next = vec![0usize; batches.len()];
    let total: usize = batches.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    for done in 0..total {
        let mut pick = rng.gen_range(0..total - done);
        for d in 0..batches.len() {
            let left = batches[d].len() - next[d];
            if pick < left {
                out.push((d, next[d]));
                next[d] += 1;
                break;
            }
            pick -= left;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules_cover_every_batch_once() {
        let batches = vec![vec![vec![0]; 3], vec![vec![0]; 1], vec![vec![0]; 2]];
        let rr = round_robin(&batches);
        assert_eq!(rr, [(0, 0), (1, 0), (2, 0), (0, 1), (2, 1), (0, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = proportional(&batches, &mut rng);
        assert_eq!(p.len(), 6);
        p.sort();
        assert_eq!(p, [(0, 0), (0, 1), (0, 2), (1, 0), (2, 0), (2, 1)]);
    }
}
