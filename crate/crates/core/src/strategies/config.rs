use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::VocabularyOptions;
use crate::error::{Error, Result};
use crate::nnet::{ModelConfig, OptimizerKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Joint,
    Pretrained,
    Tag,
    Meta,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Joint => "joint",
            Strategy::Pretrained => "pretrained",
            Strategy::Tag => "tag",
            Strategy::Meta => "meta",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Strategy::Joint),
            "pretrained" => Ok(Strategy::Pretrained),
            "tag" => Ok(Strategy::Tag),
            "meta" => Ok(Strategy::Meta),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected joint, pretrained, tag or meta)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainSchedule {
    /// One batch per domain in turn.
    #[default]
    RoundRobin,
    /// Domains drawn in proportion to their remaining batches.
    Proportional,
}

impl FromStr for DomainSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "round_robin" => Ok(DomainSchedule::RoundRobin),
            "proportional" => Ok(DomainSchedule::Proportional),
            other => Err(Error::Config(format!(
                "unknown domain_schedule {other:?} (expected round_robin or proportional)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Weight of the main-domain loss in the meta objective.
    pub gamma: f64,
    /// Inner update step; `None` uses `learning_rate`.
    pub inner_step_size: Option<f64>,
    pub relabel_prob: f64,
    pub meta_second_order: bool,
    pub meta_normalize: bool,
    /// Meta training on top of the tag model (`tag`) or the plain one (`joint`).
    pub meta_base: Strategy,
    /// Applies unknown-tag relabeling inside meta steps over the tag model.
    pub meta_relabel: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub domain_schedule: DomainSchedule,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Sentences selected per document when scoring validation ROUGE.
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Joint,
            gamma: 0.5,
            inner_step_size: None,
            relabel_prob: 0.1,
            meta_second_order: false,
            meta_normalize: false,
            meta_base: Strategy::Tag,
            meta_relabel: true,
            epochs: 10,
            batch_size: 8,
            learning_rate: 0.1,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            domain_schedule: DomainSchedule::RoundRobin,
            patience: 3,
            eval_k: 2,
        }
    }
}

impl TrainConfig {
    pub fn inner_step(&self) -> f64 {
        self.inner_step_size.unwrap_or(self.learning_rate)
    }

    /// Whether the trained model carries a tag table.
    pub fn uses_tags(&self) -> bool {
        match self.strategy {
            Strategy::Tag => true,
            Strategy::Meta => self.meta_base == Strategy::Tag,
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} is outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.relabel_prob) {
            return bad(format!("relabel_prob {} is outside [0, 1]", self.relabel_prob));
        }
        if let Some(a) = self.inner_step_size {
            if !(a >= 0.0 && a.is_finite()) {
                return bad(format!("inner_step_size {a} must be a finite non-negative number"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_k == 0 {
            return bad("batch_size, epochs and eval_k must be at least 1".into());
        }
        if !matches!(self.meta_base, Strategy::Joint | Strategy::Tag) {
            return bad(format!("meta_base must be joint or tag, not {}", self.meta_base));
        }
        Ok(())
    }
}

/// Everything a training run needs besides data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub vocab: VocabularyOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            model: ModelConfig::desk(),
            vocab: VocabularyOptions::desk(),
        }
    }
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("bad value {raw:?} for {key}")))
}

fn list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',').map(|s| value(key, s.trim())).collect()
}

impl ExperimentConfig {
    /// Parses the flat `key = value` format. `#` starts a comment; unknown
    /// and repeated keys are errors. `model = tiny|desk` selects a preset
    /// before any `model.*` key is applied.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            pairs.push((i + 1, k.to_string(), v.to_string()));
        }
        let mut cfg = Self::default();
        if let Some((_, _, preset)) = pairs.iter().find(|(_, k, _)| k == "model") {
            cfg.model = match preset.as_str() {
                "desk" => ModelConfig::desk(),
                "tiny" => ModelConfig::tiny(),
                other => return Err(Error::Config(format!("unknown model preset {other:?}"))),
            };
        }
        for (line, k, v) in &pairs {
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {line}: {}", e.to_string().trim_start_matches("configuration error: "))))?;
        }
        cfg.train.validate()?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one key.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let t = &mut self.train;
        let m = &mut self.model;
        let v = &mut self.vocab;
        match key {
            "model" => {}
            "strategy" => t.strategy = value(key, raw)?,
            "gamma" => t.gamma = value(key, raw)?,
            "inner_step_size" => t.inner_step_size = Some(value(key, raw)?),
            "relabel_prob" => t.relabel_prob = value(key, raw)?,
            "meta_second_order" => t.meta_second_order = value(key, raw)?,
            "meta_normalize" => t.meta_normalize = value(key, raw)?,
            "meta_base" => t.meta_base = value(key, raw)?,
            "meta_relabel" => t.meta_relabel = value(key, raw)?,
            "epochs" => t.epochs = value(key, raw)?,
            "batch_size" => t.batch_size = value(key, raw)?,
            "learning_rate" => t.learning_rate = value(key, raw)?,
            "optimizer" => t.optimizer = value(key, raw)?,
            "seed" => t.seed = value(key, raw)?,
            "domain_schedule" => t.domain_schedule = value(key, raw)?,
            "patience" => t.patience = value(key, raw)?,
            "eval_k" => t.eval_k = value(key, raw)?,
            "model.embed_dim" => m.embed_dim = value(key, raw)?,
            "model.conv_filter_widths" => m.conv_filter_widths = list(key, raw)?,
            "model.conv_filters_per_width" => m.conv_filters_per_width = value(key, raw)?,
            "model.model_dim" => m.model_dim = value(key, raw)?,
            "model.attention_heads" => m.attention_heads = value(key, raw)?,
            "model.ffn_dim" => m.ffn_dim = value(key, raw)?,
            "model.tag_embed_dim" => m.tag_embed_dim = value(key, raw)?,
            "model.dropout_rate" => m.dropout_rate = value(key, raw)?,
            "model.use_positional_encoding" => m.use_positional_encoding = value(key, raw)?,
            "vocab.min_frequency" => v.min_frequency = value(key, raw)?,
            "vocab.max_size" => v.max_size = value(key, raw)?,
            "vocab.max_sentences" => v.max_sentences = value(key, raw)?,
            "vocab.max_tokens" => v.max_tokens = value(key, raw)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Renders every key in the file format; `parse(render())` is identity
    /// up to the model preset line.
    pub fn render(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let v = &self.vocab;
        let widths: Vec<String> = m.conv_filter_widths.iter().map(usize::to_string).collect();
        let mut lines = vec![
            format!("strategy = {}", t.strategy),
            format!("gamma = {}", t.gamma),
        ];
        if let Some(a) = t.inner_step_size {
            lines.push(format!("inner_step_size = {a}"));
        }
        lines.extend([
            format!("relabel_prob = {}", t.relabel_prob),
            format!("meta_second_order = {}", t.meta_second_order),
            format!("meta_normalize = {}", t.meta_normalize),
            format!("meta_base = {}", t.meta_base),
            format!("meta_relabel = {}", t.meta_relabel),
            format!("epochs = {}", t.epochs),
            format!("batch_size = {}", t.batch_size),
            format!("learning_rate = {}", t.learning_rate),
            format!("optimizer = {}", t.optimizer),
            format!("seed = {}", t.seed),
            format!(
                "domain_schedule = {}",
                match t.domain_schedule {
                    DomainSchedule::RoundRobin => "round_robin",
                    DomainSchedule::Proportional => "proportional",
                }
            ),
            format!("patience = {}", t.patience),
            format!("eval_k = {}", t.eval_k),
            format!("model.embed_dim = {}", m.embed_dim),
            format!("model.conv_filter_widths = {}", widths.join(",")),
            format!("model.conv_filters_per_width = {}", m.conv_filters_per_width),
            format!("model.model_dim = {}", m.model_dim),
            format!("model.attention_heads = {}", m.attention_heads),
            format!("model.ffn_dim = {}", m.ffn_dim),
            format!("model.tag_embed_dim = {}", m.tag_embed_dim),
            format!("model.dropout_rate = {}", m.dropout_rate),
            format!("model.use_positional_encoding = {}", m.use_positional_encoding),
            format!("vocab.min_frequency = {}", v.min_frequency),
            format!("vocab.max_size = {}", v.max_size),
            format!("vocab.max_sentences = {}", v.max_sentences),
            format!("vocab.max_tokens = {}", v.max_tokens),
        ]);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_keys_and_comments() {
        let cfg = ExperimentConfig::parse(
            "# run\nstrategy = meta\ngamma = 0.25  # weight\nmodel = tiny\nmodel.model_dim = 32\nseed=9\n",
        )
        .unwrap();
        assert_eq!(cfg.train.strategy, Strategy::Meta);
        assert_eq!(cfg.train.gamma, 0.25);
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.model.model_dim, 32);
        assert_eq!(cfg.model.embed_dim, ModelConfig::tiny().embed_dim);
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        let err = ExperimentConfig::parse("strategy = tag\nlearning_rat = 0.1").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("learning_rat"), "{err}");
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(ExperimentConfig::parse("gamma = 1.5").is_err());
        assert!(ExperimentConfig::parse("strategy = bert").is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.strategy = Strategy::Tag;
        cfg.train.inner_step_size = Some(0.05);
        cfg.model = ModelConfig::tiny();
        cfg.vocab.max_size = 77;
        assert_eq!(ExperimentConfig::parse(&cfg.render()).unwrap(), cfg);
    }

    #[test]
    fn inner_step_defaults_to_learning_rate() {
        let t = TrainConfig {
            learning_rate: 0.3,
            ..TrainConfig::default()
        };
        assert_eq!(t.inner_step(), 0.3);
    }
}
