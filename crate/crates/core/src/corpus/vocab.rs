use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{hex_digest, Corpus, Document, Split};
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyOptions {
    pub min_frequency: usize,
    pub max_size: usize,
    /// Sentences beyond this index are dropped at encoding time.
    pub max_sentences: usize,
    /// Tokens beyond this index are dropped at encoding time.
    pub max_tokens: usize,
}

impl Default for VocabularyOptions {
    fn default() -> Self {
        Self {
            min_frequency: 2,
            max_size: 30_000,
            max_sentences: 50,
            max_tokens: 100,
        }
    }
}

impl VocabularyOptions {
    pub fn desk() -> Self {
        Self {
            max_size: 2_000,
            ..Self::default()
        }
    }
}

/// Token to id map built from source-domain training documents.
/// `max_size` bounds the number of corpus tokens; PAD and UNK come on top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    pub options: VocabularyOptions,
}

/// A document mapped to token ids, truncated per [`VocabularyOptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDoc {
    pub doc_id: String,
    pub domain: usize,
    pub sentences: Vec<Vec<u32>>,
    pub labels: Option<Vec<u8>>,
}

impl Vocabulary {
    pub fn build(corpus: &Corpus, options: VocabularyOptions) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut n_docs = 0;
        for doc in corpus
            .documents
            .iter()
            .filter(|d| d.split == Split::Train && corpus.is_source(d.domain))
        {
            n_docs += 1;
            for tok in doc.sentences.iter().flat_map(|s| s.tokens.iter()) {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if n_docs == 0 || counts.is_empty() {
            return Err(Error::EmptyTraining(
                "no train-split text in any source domain".into(),
            ));
        }
        Ok(Self::from_counts(counts, options))
    }

    pub fn from_counts<S: AsRef<str>>(counts: impl IntoIterator<Item = (S, usize)>, options: VocabularyOptions) -> Self {
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= options.min_frequency)
            .map(|(t, c)| (t.as_ref().to_string(), c))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(options.max_size);

        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        tokens.extend(ranked.into_iter().map(|(t, _)| t));
        Self::from_tokens(tokens, options)
    }

    /// Rebuilds a vocabulary from its id-ordered token list (as stored in a
    /// checkpoint).
    pub fn from_list(tokens: Vec<String>, options: VocabularyOptions) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD || tokens[1] != UNK {
            return Err(Error::Invalid("vocabulary must start with <pad>, <unk>".into()));
        }
        let v = Self::from_tokens(tokens, options);
        if v.index.len() != v.tokens.len() {
            return Err(Error::Invalid("vocabulary has duplicate tokens".into()));
        }
        Ok(v)
    }

    fn from_tokens(tokens: Vec<String>, options: VocabularyOptions) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index, options }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex digest over the ordered token list; equal vocabularies share it.
    pub fn fingerprint(&self) -> String {
        hex_digest(self.tokens.join("\n").as_bytes())
    }

    pub fn encode(&self, doc: &Document) -> EncodedDoc {
        let sentences = doc
            .sentences
            .iter()
            .take(self.options.max_sentences)
            .map(|s| {
                s.tokens
                    .iter()
                    .take(self.options.max_tokens)
                    .map(|t| self.id(t))
                    .collect()
            })
            .collect();
        let labels = doc
            .labels
            .as_ref()
            .map(|l| l.iter().take(self.options.max_sentences).copied().collect());
        EncodedDoc {
            doc_id: doc.doc_id.clone(),
            domain: doc.domain,
            sentences,
            labels,
        }
    }

    /// One token per line, id order.
    pub fn render(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Partition;

    fn opts(min_frequency: usize, max_size: usize) -> VocabularyOptions {
        VocabularyOptions {
            min_frequency,
            max_size,
            ..VocabularyOptions::default()
        }
    }

    #[test]
    fn min_frequency_filters() {
        let v = Vocabulary::from_counts([("a", 3), ("b", 1)], opts(2, 100));
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "a"]);
        assert_eq!(v.id("<pad>"), PAD_ID);
        assert_eq!(v.id("b"), UNK_ID);
    }

    #[test]
    fn truncation_breaks_ties_alphabetically() {
        let v = Vocabulary::from_counts(
            [("e", 2), ("d", 2), ("c", 5), ("b", 2), ("a", 2)],
            opts(1, 3),
        );
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "c", "a", "b"]);
    }

    #[test]
    fn built_from_source_train_only() {
        let text = [
            r#"{"doc_id":"1","domain":"A","split":"train","text":["alpha alpha beta"],"summary":["alpha"]}"#,
            r#"{"doc_id":"2","domain":"A","split":"test","text":["gamma gamma"],"summary":["gamma"]}"#,
            r#"{"doc_id":"3","domain":"B","split":"train","text":["delta delta"],"summary":["delta"]}"#,
        ]
        .join("\n");
        let corpus = Corpus::parse(&text, &Partition::new(["A"], ["B"])).unwrap();
        let v = Vocabulary::build(&corpus, opts(2, 100)).unwrap();
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "alpha"]);
        let heldout = v.encode(&corpus.documents[2]);
        assert_eq!(heldout.sentences, vec![vec![UNK_ID, UNK_ID]]);
        // identical inputs, identical ids
        assert_eq!(v, Vocabulary::build(&corpus, opts(2, 100)).unwrap());
    }

    #[test]
    fn no_source_training_text_is_an_error() {
        let text = r#"{"doc_id":"1","domain":"A","split":"test","text":["x"],"summary":["x"]}"#;
        let corpus = Corpus::parse(text, &Partition::default()).unwrap();
        assert!(matches!(
            Vocabulary::build(&corpus, VocabularyOptions::default()),
            Err(Error::EmptyTraining(_))
        ));
    }

    #[test]
    fn encode_truncates() {
        let text = r#"{"doc_id":"1","domain":"A","split":"train","text":["a b c d","a b","c d"],"summary":["x"],"labels":[1,0,1]}"#;
        let corpus = Corpus::parse(text, &Partition::default()).unwrap();
        let options = VocabularyOptions {
            min_frequency: 1,
            max_size: 10,
            max_sentences: 2,
            max_tokens: 3,
        };
        let v = Vocabulary::build(&corpus, options).unwrap();
        let e = v.encode(&corpus.documents[0]);
        assert_eq!(e.sentences.len(), 2);
        assert_eq!(e.sentences[0].len(), 3);
        assert_eq!(e.labels.as_deref(), Some(&[1u8, 0][..]));
    }
}
