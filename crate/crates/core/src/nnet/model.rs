//! The sentence scorer: token embeddings, a multi-width convolutional
//! sentence encoder with max-over-time pooling, one self-attention block as
//! the document encoder and a sigmoid readout per sentence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, Tape, Var};
use super::tensor::{Gradients, ParameterStore, Real, Tensor};
use crate::corpus::PAD_ID;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub conv_filter_widths: Vec<usize>,
    pub conv_filters_per_width: usize,
    pub model_dim: usize,
    pub attention_heads: usize,
    pub ffn_dim: usize,
    /// Adds a domain tag table (one row per domain plus the unknown tag).
    pub use_domain_tags: bool,
    pub tag_embed_dim: usize,
    pub dropout_rate: f64,
    pub use_positional_encoding: bool,
    /// When set, sentences are represented by fixed external vectors of
    /// this size instead of the convolutional encoder.
    pub external_feature_dim: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Desk-scale defaults: minutes per epoch on one CPU core.
    pub fn desk() -> Self {
        Self {
            embed_dim: 64,
            conv_filter_widths: vec![3, 4, 5],
            conv_filters_per_width: 32,
            model_dim: 128,
            attention_heads: 4,
            ffn_dim: 256,
            use_domain_tags: false,
            tag_embed_dim: 16,
            dropout_rate: 0.1,
            use_positional_encoding: true,
            external_feature_dim: None,
        }
    }

    /// Small preset used by the synthetic experiments.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 16,
            conv_filter_widths: vec![1, 2, 3],
            conv_filters_per_width: 8,
            model_dim: 16,
            attention_heads: 2,
            ffn_dim: 32,
            use_domain_tags: false,
            tag_embed_dim: 8,
            dropout_rate: 0.0,
            use_positional_encoding: true,
            external_feature_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("conv_filters_per_width", self.conv_filters_per_width),
            ("model_dim", self.model_dim),
            ("attention_heads", self.attention_heads),
            ("ffn_dim", self.ffn_dim),
            ("tag_embed_dim", self.tag_embed_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.conv_filter_widths.is_empty() || self.conv_filter_widths.contains(&0) {
            return Err(Error::Config("conv_filter_widths must be non-empty and positive".into()));
        }
        if self.model_dim % self.attention_heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} is not divisible by attention_heads {}",
                self.model_dim, self.attention_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        if self.external_feature_dim == Some(0) {
            return Err(Error::Config("external_feature_dim must be at least 1".into()));
        }
        Ok(())
    }

    fn conv_out_dim(&self) -> usize {
        self.conv_filter_widths.len() * self.conv_filters_per_width
    }

    fn max_width(&self) -> usize {
        self.conv_filter_widths.iter().copied().max().unwrap_or(1)
    }
}

/// Allocates and initializes every parameter.
///
/// Weights and embeddings are drawn from U(-0.1, 0.1); biases and the final
/// classifier are zero; layer-norm gains are one.
pub fn init_params(config: &ModelConfig, vocab_size: usize, n_domains: usize, seed: u64) -> Result<ParameterStore<f32>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new(seed);
    let d = config.model_dim;
    let mut uniform = |shape: &[usize]| -> Tensor<f32> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-0.1f32..0.1)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    };

    let sentence_in = match config.external_feature_dim {
        Some(fd) => fd,
        None => {
            store.insert("embedding", uniform(&[vocab_size, config.embed_dim]))?;
            for &w in &config.conv_filter_widths {
                store.insert(
                    format!("conv{w}.weight"),
                    uniform(&[w * config.embed_dim, config.conv_filters_per_width]),
                )?;
                store.insert(format!("conv{w}.bias"), Tensor::zeros(&[config.conv_filters_per_width]))?;
            }
            config.conv_out_dim()
        }
    };
    store.insert("sent_proj.weight", uniform(&[sentence_in, d]))?;
    store.insert("sent_proj.bias", Tensor::zeros(&[d]))?;
    if config.use_domain_tags {
        store.insert("tag.table", uniform(&[n_domains + 1, config.tag_embed_dim]))?;
        store.insert("sent_proj.tag_weight", uniform(&[config.tag_embed_dim, d]))?;
    }
    for name in ["q", "k", "v", "o"] {
        store.insert(format!("attn.w{name}"), uniform(&[d, d]))?;
        store.insert(format!("attn.b{name}"), Tensor::zeros(&[d]))?;
    }
    store.insert("ln1.gain", Tensor::full(&[d], 1.0))?;
    store.insert("ln1.bias", Tensor::zeros(&[d]))?;
    store.insert("ffn.w1", uniform(&[d, config.ffn_dim]))?;
    store.insert("ffn.b1", Tensor::zeros(&[config.ffn_dim]))?;
    store.insert("ffn.w2", uniform(&[config.ffn_dim, d]))?;
    store.insert("ffn.b2", Tensor::zeros(&[d]))?;
    store.insert("ln2.gain", Tensor::full(&[d], 1.0))?;
    store.insert("ln2.bias", Tensor::zeros(&[d]))?;
    store.insert("out.weight", Tensor::zeros(&[d, 1]))?;
    store.insert("out.bias", Tensor::zeros(&[1]))?;
    Ok(store)
}

struct ParamIds {
    embedding: Option<usize>,
    conv: Vec<(usize, usize, usize)>,
    sent_w: usize,
    sent_b: usize,
    tag_table: Option<usize>,
    tag_w: Option<usize>,
    attn: [usize; 8],
    ln1: (usize, usize),
    ffn: [usize; 4],
    ln2: (usize, usize),
    out: (usize, usize),
}

/// One document as seen by the scorer.
#[derive(Debug, Clone, Copy)]
pub struct DocInput<'a> {
    pub sentences: &'a [Vec<u32>],
    pub labels: Option<&'a [u8]>,
    /// Row of the tag table; `None` runs the tag-free path.
    pub tag: Option<usize>,
    /// Fixed sentence vectors, one per sentence (pretrained-feature mode).
    pub external: Option<&'a [Vec<f32>]>,
}

impl<'a> DocInput<'a> {
    pub fn new(sentences: &'a [Vec<u32>]) -> Self {
        Self {
            sentences,
            labels: None,
            tag: None,
            external: None,
        }
    }

    pub fn labels(mut self, labels: &'a [u8]) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn tag(mut self, tag: Option<usize>) -> Self {
        self.tag = tag;
        self
    }

    pub fn external(mut self, external: Option<&'a [Vec<f32>]>) -> Self {
        self.external = external;
        self
    }
}

/// Dropout mask source. `None` in evaluation and gradient checks.
pub struct Dropout {
    rng: ChaCha8Rng,
    rate: f64,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            rate,
        }
    }

    fn apply<F: Real>(&mut self, tape: &mut Tape<'_, F>, x: Var) -> Var {
        if self.rate <= 0.0 {
            return x;
        }
        let v = tape.value(x);
        let keep = F::c(1.0 / (1.0 - self.rate));
        let data = (0..v.len())
            .map(|_| if self.rng.gen::<f64>() < self.rate { F::zero() } else { keep })
            .collect();
        let mask = Tensor::matrix(v.rows(), v.cols(), data);
        tape.mul_const(x, mask)
    }
}

/// Outputs of the document encoder.
pub struct DocEncoding {
    pub output: Var,
    /// Attention weights per head, `n×n` each.
    pub attention: Vec<Var>,
}

/// Sinusoidal positional encodings, `n×dim`.
pub fn positional_encoding<F: Real>(n: usize, dim: usize) -> Tensor<F> {
    let mut data = Vec::with_capacity(n * dim);
    for pos in 0..n {
        for j in 0..dim {
            let expo = (2 * (j / 2)) as f64 / dim as f64;
            let angle = pos as f64 / 10_000f64.powf(expo);
            data.push(F::c(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::matrix(n, dim, data)
}

/// Forward/backward over a parameter store for one model configuration.
pub struct Scorer<'a, F: Real> {
    pub config: &'a ModelConfig,
    params: &'a ParameterStore<F>,
    ids: ParamIds,
}

impl<'a, F: Real> Scorer<'a, F> {
    pub fn new(config: &'a ModelConfig, params: &'a ParameterStore<F>) -> Result<Self> {
        config.validate()?;
        let need = |name: &str| {
            params
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("parameter {name:?} missing for this model configuration")))
        };
        if !config.use_domain_tags && params.id("tag.table").is_some() {
            return Err(Error::Checkpoint(
                "parameters include a domain tag table but the model configuration has use_domain_tags = false".into(),
            ));
        }
        let external = config.external_feature_dim.is_some();
        if external && params.id("embedding").is_some() {
            return Err(Error::Checkpoint(
                "parameters include a convolutional encoder but the configuration expects external features".into(),
            ));
        }
        let embedding = if external { None } else { Some(need("embedding")?) };
        let conv = if external {
            Vec::new()
        } else {
            config
                .conv_filter_widths
                .iter()
                .map(|&w| Ok((w, need(&format!("conv{w}.weight"))?, need(&format!("conv{w}.bias"))?)))
                .collect::<Result<_>>()?
        };
        let (tag_table, tag_w) = if config.use_domain_tags {
            (Some(need("tag.table")?), Some(need("sent_proj.tag_weight")?))
        } else {
            (None, None)
        };
        let ids = ParamIds {
            embedding,
            conv,
            sent_w: need("sent_proj.weight")?,
            sent_b: need("sent_proj.bias")?,
            tag_table,
            tag_w,
            attn: [
                need("attn.wq")?,
                need("attn.bq")?,
                need("attn.wk")?,
                need("attn.bk")?,
                need("attn.wv")?,
                need("attn.bv")?,
                need("attn.wo")?,
                need("attn.bo")?,
            ],
            ln1: (need("ln1.gain")?, need("ln1.bias")?),
            ffn: [need("ffn.w1")?, need("ffn.b1")?, need("ffn.w2")?, need("ffn.b2")?],
            ln2: (need("ln2.gain")?, need("ln2.bias")?),
            out: (need("out.weight")?, need("out.bias")?),
        };
        let known = 20 + ids.embedding.map_or(0, |_| 1) + 2 * ids.conv.len() + ids.tag_table.map_or(0, |_| 2);
        if params.len() != known {
            return Err(Error::Checkpoint(format!(
                "parameter store has {} tensors, configuration expects {known}",
                params.len()
            )));
        }
        let expected_in =config.external_feature_dim.unwrap_or_else(|| config.conv_out_dim());
        let sw = params.tensor(ids.sent_w);
        if sw.rows() != expected_in || sw.cols() != config.model_dim {
            return Err(Error::Checkpoint(format!(
                "sent_proj.weight has shape {:?}, configuration expects [{expected_in}, {}]",
                sw.shape(),
                config.model_dim
            )));
        }
        Ok(Self { config, params, ids })
    }

    pub fn params(&self) -> &'a ParameterStore<F> {
        self.params
    }

    /// Rows in the tag table, if the model has one.
    pub fn tag_rows(&self) -> Option<usize> {
        self.ids.tag_table.map(|t| self.params.tensor(t).rows())
    }

    /// Sentence vector (`1×model_dim`).
    pub fn encode_sentence(
        &self,
        tape: &mut Tape<'a, F>,
        tokens: &[u32],
        tag: Option<usize>,
        external: Option<&[f32]>,
        dropout: &mut Option<Dropout>,
    ) -> Result<Var> {
        let features = match (self.config.external_feature_dim, external) {
            (Some(dim), Some(vec)) => {
                if vec.len() != dim {
                    return Err(Error::Shape(format!(
                        "external feature has {} values, model expects {dim}",
                        vec.len()
                    )));
                }
                tape.constant(Tensor::row(vec.iter().map(|&v| F::c(v as f64)).collect()))
            }
            (Some(_), None) => {
                return Err(Error::Invalid("model expects external sentence features".into()));
            }
            (None, Some(_)) => {
                return Err(Error::Invalid("model has no external feature projection".into()));
            }
            (None, None) => {
                let mut ids = tokens.to_vec();
                while ids.len() < self.config.max_width() {
                    ids.push(PAD_ID);
                }
                let emb = tape.gather(self.ids.embedding.unwrap(), &ids)?;
                let mut pooled = Vec::with_capacity(self.ids.conv.len());
                for &(width, w, b) in &self.ids.conv {
                    let win = tape.windows(emb, width);
                    let wv = tape.param(w);
                    let bv = tape.param(b);
                    let h = tape.matmul(win, wv);
                    let h = tape.add_row(h, bv);
                    let h = tape.gelu(h);
                    pooled.push(tape.max_rows(h));
                }
                tape.concat_cols(&pooled)
            }
        };
        let w = tape.param(self.ids.sent_w);
        let b = tape.param(self.ids.sent_b);
        let mut s = tape.matmul(features, w);
        if let (Some(tag), Some(table), Some(tw)) = (tag, self.ids.tag_table, self.ids.tag_w) {
            let rows = self.params.tensor(table).rows();
            if tag >= rows {
                return Err(Error::Invalid(format!("tag id {tag} out of range for a {rows}-row tag table")));
            }
            let t = tape.gather(table, &[tag as u32])?;
            let twv = tape.param(tw);
            let tp = tape.matmul(t, twv);
            s = tape.add(s, tp);
        }
        let s = tape.add_row(s, b);
        Ok(match dropout {
            Some(d) => d.apply(tape, s),
            None => s,
        })
    }

    /// Contextual sentence vectors (`n×model_dim`).
    pub fn encode_document(&self, tape: &mut Tape<'a, F>, sentences: &[Var], dropout: &mut Option<Dropout>) -> DocEncoding {
        let d = self.config.model_dim;
        let n = sentences.len();
        let mut x = tape.concat_rows(sentences);
        if self.config.use_positional_encoding {
            let pe = tape.constant(positional_encoding(n, d));
            x = tape.add(x, pe);
        }
        let [wq, bq, wk, bk, wv, bv, wo, bo] = self.ids.attn.map(|id| tape.param(id));
        let q = tape.matmul(x, wq);
        let q = tape.add_row(q, bq);
        let k = tape.matmul(x, wk);
        let k = tape.add_row(k, bk);
        let v = tape.matmul(x, wv);
        let v = tape.add_row(v, bv);

        let heads = self.config.attention_heads;
        let dh = d / heads;
        let scale = F::c(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        let mut attention = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let weights = tape.softmax_rows(scores);
            attention.push(weights);
            outs.push(tape.matmul(weights, vh));
        }
        let concat = tape.concat_cols(&outs);
        let o = tape.matmul(concat, wo);
        let mut o = tape.add_row(o, bo);
        if let Some(dr) = dropout {
            o = dr.apply(tape, o);
        }
        let res = tape.add(x, o);
        let (g1, b1) = (tape.param(self.ids.ln1.0), tape.param(self.ids.ln1.1));
        let h1 = tape.layer_norm(res, g1, b1);

        let [w1, fb1, w2, fb2] = self.ids.ffn.map(|id| tape.param(id));
        let f = tape.matmul(h1, w1);
        let f = tape.add_row(f, fb1);
        let f = tape.gelu(f);
        let f = tape.matmul(f, w2);
        let mut f = tape.add_row(f, fb2);
        if let Some(dr) = dropout {
            f = dr.apply(tape, f);
        }
        let res2 = tape.add(h1, f);
        let (g2, b2) = (tape.param(self.ids.ln2.0), tape.param(self.ids.ln2.1));
        let output = tape.layer_norm(res2, g2, b2);
        DocEncoding { output, attention }
    }

    /// Per-sentence logits (`n×1`).
    pub fn logits(&self, tape: &mut Tape<'a, F>, doc: &DocInput<'_>, dropout: &mut Option<Dropout>) -> Result<Var> {
        if doc.sentences.is_empty() {
            return Err(Error::Invalid("document has no sentences".into()));
        }
        if let Some(ext) = doc.external {
            if ext.len() != doc.sentences.len() {
                return Err(Error::Shape(format!(
                    "{} external vectors for {} sentences",
                    ext.len(),
                    doc.sentences.len()
                )));
            }
        }
        let mut sents = Vec::with_capacity(doc.sentences.len());
        for (i, tokens) in doc.sentences.iter().enumerate() {
            let ext = doc.external.map(|e| e[i].as_slice());
            sents.push(self.encode_sentence(tape, tokens, doc.tag, ext, dropout)?);
        }
        let enc = self.encode_document(tape, &sents, dropout);
        let (w, b) = (tape.param(self.ids.out.0), tape.param(self.ids.out.1));
        let z = tape.matmul(enc.output, w);
        let z = tape.add_row(z, b);
        if !tape.value(z).is_finite() {
            return Err(Error::NonFinite("sentence logits".into()));
        }
        Ok(z)
    }

    /// Probability per sentence (evaluation mode, no dropout).
    pub fn score_sentences(&self, doc: &DocInput<'_>) -> Result<Vec<F>> {
        let mut tape = Tape::new(self.params);
        let z = self.logits(&mut tape, doc, &mut None)?;
        Ok(tape.value(z).data().iter().map(|&v| sigmoid(v)).collect())
    }

    /// Records the batch loss: the mean over documents of each document's
    /// mean sentence cross-entropy.
    pub fn record_batch_loss(&self, tape: &mut Tape<'a, F>, batch: &[DocInput<'_>], dropout_seed: Option<u64>) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let mut dropout = match dropout_seed {
            Some(seed) if self.config.dropout_rate > 0.0 => Some(Dropout::new(self.config.dropout_rate, seed)),
            _ => None,
        };
        let w = F::c(1.0 / batch.len() as f64);
        let mut terms = Vec::with_capacity(batch.len());
        for doc in batch {
            let labels = doc
                .labels
                .ok_or_else(|| Error::Invalid("training document without labels".into()))?;
            let z = self.logits(tape, doc, &mut dropout)?;
            terms.push((tape.bce_with_logits(z, labels)?, w));
        }
        Ok(tape.weighted_sum(&terms))
    }

    pub fn batch_loss(&self, batch: &[DocInput<'_>], dropout_seed: Option<u64>) -> Result<F> {
        let mut tape = Tape::new(self.params);
        let l = self.record_batch_loss(&mut tape, batch, dropout_seed)?;
        Ok(tape.value(l).data()[0])
    }

    pub fn loss_and_grad(&self, batch: &[DocInput<'_>], dropout_seed: Option<u64>) -> Result<(F, Gradients<F>)> {
        let mut tape = Tape::new(self.params);
        let l = self.record_batch_loss(&mut tape, batch, dropout_seed)?;
        let loss = tape.value(l).data()[0];
        if !loss.is_finite() {
            return Err(Error::NonFinite("batch loss".into()));
        }
        Ok((loss, tape.backward(l, F::one())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UNK_ID;
    use crate::nnet::gradcheck::{check_scorer, compare, finite_difference, randomize, F64_FLOOR};

    fn toy_doc() -> Vec<Vec<u32>> {
        vec![vec![2, 3, 4, 5], vec![6, 2], vec![7, 8, 9, 3, 1]]
    }

    fn tagged() -> ModelConfig {
        ModelConfig {
            use_domain_tags: true,
            ..ModelConfig::tiny()
        }
    }

    fn random_params(config: &ModelConfig, seed: u64) -> ParameterStore<f64> {
        let mut p = init_params(config, 12, 2, seed).unwrap().cast::<f64>();
        randomize(&mut p, seed + 100, 0.5);
        p
    }

    #[test]
    fn init_is_deterministic() {
        let c = tagged();
        assert_eq!(init_params(&c, 30, 3, 9).unwrap(), init_params(&c, 30, 3, 9).unwrap());
        assert_ne!(init_params(&c, 30, 3, 9).unwrap(), init_params(&c, 30, 3, 10).unwrap());
        assert_eq!(init_params(&c, 30, 3, 9).unwrap().get("tag.table").unwrap().rows(), 4);
    }

    #[test]
    fn fresh_model_scores_one_half() {
        let c = ModelConfig::desk();
        let p = init_params(&c, 40, 2, 1).unwrap();
        let s = Scorer::new(&c, &p).unwrap();
        for n in [1, 3, 50] {
            let doc: Vec<Vec<u32>> = (0..n).map(|i| vec![2 + (i % 30) as u32; 1 + i % 7]).collect();
            let probs = s.score_sentences(&DocInput::new(&doc)).unwrap();
            assert_eq!(probs.len(), n);
            assert!(probs.iter().all(|&p| p == 0.5));
        }
    }

    #[test]
    fn sentence_vectors_have_model_dim() {
        let c = ModelConfig::tiny();
        let p = random_params(&c, 2);
        let s = Scorer::new(&c, &p).unwrap();
        for len in [1, 100] {
            let mut tape = Tape::new(&p);
            let toks = vec![3u32; len];
            let v = s.encode_sentence(&mut tape, &toks, None, None, &mut None).unwrap();
            assert_eq!(tape.value(v).shape(), &[1, c.model_dim]);
        }
        let unk = vec![UNK_ID; 4];
        let mut t1 = Tape::new(&p);
        let a = s.encode_sentence(&mut t1, &unk, None, None, &mut None).unwrap();
        let mut t2 = Tape::new(&p);
        let b = s.encode_sentence(&mut t2, &unk, None, None, &mut None).unwrap();
        assert_eq!(t1.value(a), t2.value(b));
    }

    #[test]
    fn tags_change_sentence_vectors() {
        let c = tagged();
        let p = random_params(&c, 3);
        let s = Scorer::new(&c, &p).unwrap();
        let toks = [2u32, 3, 4];
        let mut t = Tape::new(&p);
        let a = s.encode_sentence(&mut t, &toks, Some(0), None, &mut None).unwrap();
        let b = s.encode_sentence(&mut t, &toks, Some(1), None, &mut None).unwrap();
        assert_ne!(t.value(a), t.value(b));
        assert!(s.encode_sentence(&mut t, &toks, Some(3), None, &mut None).is_err());
    }

    #[test]
    fn encoder_is_permutation_equivariant_without_positions() {
        let c = ModelConfig {
            use_positional_encoding: false,
            ..ModelConfig::tiny()
        };
        let p = random_params(&c, 4);
        let s = Scorer::new(&c, &p).unwrap();
        let doc = toy_doc();
        let perm = [2usize, 0, 1];
        let shuffled: Vec<Vec<u32>> = perm.iter().map(|&i| doc[i].clone()).collect();
        let a = s.score_sentences(&DocInput::new(&doc)).unwrap();
        let b = s.score_sentences(&DocInput::new(&shuffled)).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((a[i] - b[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_sentence_attends_to_itself() {
        let c = ModelConfig::tiny();
        let p = random_params(&c, 5);
        let s = Scorer::new(&c, &p).unwrap();
        let mut tape = Tape::new(&p);
        let v = s.encode_sentence(&mut tape, &[2, 3], None, None, &mut None).unwrap();
        let enc = s.encode_document(&mut tape, &[v], &mut None);
        for w in enc.attention {
            assert_eq!(tape.value(w).data(), &[1.0]);
        }
    }

    #[test]
    fn zero_external_features_give_identical_sentences() {
        let c = ModelConfig {
            external_feature_dim: Some(6),
            ..ModelConfig::tiny()
        };
        let p = random_params(&c, 6);
        let s = Scorer::new(&c, &p).unwrap();
        let feats = vec![vec![0.0f32; 6]; 2];
        let mut tape = Tape::new(&p);
        let a = s.encode_sentence(&mut tape, &[2], None, Some(&feats[0]), &mut None).unwrap();
        let b = s.encode_sentence(&mut tape, &[9, 9], None, Some(&feats[1]), &mut None).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert!(s.encode_sentence(&mut tape, &[2], None, Some(&[0.0; 5]), &mut None).is_err());
        assert!(s.encode_sentence(&mut tape, &[2], None, None, &mut None).is_err());
    }

    #[test]
    fn dropout_is_seeded() {
        let c = ModelConfig {
            dropout_rate: 0.3,
            ..ModelConfig::tiny()
        };
        let p = random_params(&c, 7);
        let s = Scorer::new(&c, &p).unwrap();
        let doc = toy_doc();
        let labels = [1u8, 0, 1];
        let batch = [DocInput::new(&doc).labels(&labels)];
        let a = s.batch_loss(&batch, Some(1)).unwrap();
        assert_eq!(a, s.batch_loss(&batch, Some(1)).unwrap());
        assert_ne!(a, s.batch_loss(&batch, Some(2)).unwrap());
        assert_ne!(a, s.batch_loss(&batch, None).unwrap());
    }

    fn full_check(config: &ModelConfig, external: Option<&[Vec<f32>]>, tag: Option<usize>) -> f64 {
        let p = random_params(config, 11);
        let doc = toy_doc();
        let labels = [1u8, 0, 1];
        let batch = [DocInput::new(&doc).labels(&labels).tag(tag).external(external)];
        let report = check_scorer(config, &p, &batch, 1e-3, F64_FLOOR).unwrap();
        assert_eq!(report.tensors.len(), p.len());
        let worst = report.worst().unwrap();
        eprintln!("{} {:e}", worst.name, worst.rel_error);
        report.max_rel_error()
    }

    #[test]
    fn gradient_check_joint() {
        let err = full_check(&ModelConfig::tiny(), None, None);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn gradient_check_tag() {
        let err = full_check(&tagged(), None, Some(1));
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn gradient_check_external() {
        let c = ModelConfig {
            external_feature_dim: Some(5),
            ..ModelConfig::tiny()
        };
        let feats: Vec<Vec<f32>> = (0..3).map(|i| (0..5).map(|j| ((i * 5 + j) as f32 * 0.37).sin()).collect()).collect();
        let err = full_check(&c, Some(&feats), None);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn single_precision_gradients_match_differences() {
        let c = ModelConfig::tiny();
        let p64 = random_params(&c, 11);
        let p32 = p64.cast::<f32>();
        let doc = toy_doc();
        let labels = [1u8, 0, 1];
        let batch = [DocInput::new(&doc).labels(&labels)];
        let (_, g32) = Scorer::new(&c, &p32).unwrap().loss_and_grad(&batch, None).unwrap();
        let numeric = finite_difference(&p32.cast::<f64>(), 1e-3, |p| Scorer::new(&c, p)?.batch_loss(&batch, None)).unwrap();
        let report = compare(&g32.cast::<f64>(), &numeric, F64_FLOOR);
        assert!(report.max_rel_error() <= 1e-3, "{:?}", report.worst());
    }
}
