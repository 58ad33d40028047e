//! Multi-domain corpus: records, domain registry, partitions and vocabulary.
//!
//! The on-disk format is one JSON object per line:
//!
//! ```text
//! {"doc_id":"fn-0001","domain":"FN","split":"train","text":["First sentence.", "..."],"summary":["..."]}
//! ```
//!
//! Labeled corpora carry an additional `labels` array with one 0/1 entry per
//! retained document sentence.

mod stats;
mod tokenize;
mod vocab;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use stats::{stats, write_stats_csv, DomainStats, StatsOptions, StatsTable};
pub use tokenize::tokenize;
pub use vocab::{EncodedDoc, Vocabulary, VocabularyOptions, PAD_ID, UNK_ID};

/// Name of the reserved tag for domains that were never seen in training.
pub const UNKNOWN_DOMAIN: &str = "<unknown>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DomainId {
    pub id: usize,
    pub name: String,
    pub is_unknown_tag: bool,
}

/// Dense registry of domains. The unknown tag is always the last entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRegistry {
    domains: Vec<DomainId>,
}

impl DomainRegistry {
    /// Registers `names` in order and appends the unknown tag.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut domains = Vec::with_capacity(names.len() + 1);
        let mut seen = HashSet::new();
        for name in names {
            let name = name.as_ref();
            if name == UNKNOWN_DOMAIN {
                return Err(Error::Config(format!("domain name {UNKNOWN_DOMAIN:?} is reserved")));
            }
            if !seen.insert(name.to_string()) {
                return Err(Error::Config(format!("duplicate domain name {name:?}")));
            }
            domains.push(DomainId {
                id: domains.len(),
                name: name.to_string(),
                is_unknown_tag: false,
            });
        }
        domains.push(DomainId {
            id: domains.len(),
            name: UNKNOWN_DOMAIN.to_string(),
            is_unknown_tag: true,
        });
        Ok(Self { domains })
    }

    /// Number of real (non-reserved) domains, `K`.
    pub fn num_domains(&self) -> usize {
        self.domains.len() - 1
    }

    pub fn unknown(&self) -> &DomainId {
        self.domains.last().expect("registry always holds the unknown tag")
    }

    pub fn get(&self, id: usize) -> Option<&DomainId> {
        self.domains.get(id)
    }

    pub fn by_name(&self, name: &str) -> Option<&DomainId> {
        self.domains.iter().find(|d| d.name == name)
    }

    /// Real domains in id order.
    pub fn domains(&self) -> &[DomainId] {
        &self.domains[..self.num_domains()]
    }

    pub fn names(&self) -> Vec<String> {
        self.domains().iter().map(|d| d.name.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = tokenize(&raw);
        Self { raw, tokens }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub domain: usize,
    pub sentences: Vec<Sentence>,
    pub reference: Vec<Sentence>,
    pub split: Split,
    /// Extractive oracle labels, one per sentence, when the corpus is labeled.
    pub labels: Option<Vec<u8>>,
}

impl Document {
    /// All sentence tokens in document order.
    pub fn flat_tokens(&self) -> Vec<String> {
        flatten(&self.sentences)
    }

    pub fn reference_tokens(&self) -> Vec<String> {
        flatten(&self.reference)
    }
}

/// Concatenates the tokens of `sentences` in order.
pub fn flatten(sentences: &[Sentence]) -> Vec<String> {
    sentences.iter().flat_map(|s| s.tokens.iter().cloned()).collect()
}

/// Source / held-out domain assignment by name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub source: Vec<String>,
    pub heldout: Vec<String>,
}

impl Partition {
    pub fn new<S: Into<String>>(source: impl IntoIterator<Item = S>, heldout: impl IntoIterator<Item = S>) -> Self {
        Self {
            source: source.into_iter().map(Into::into).collect(),
            heldout: heldout.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty() && self.heldout.is_empty()
    }

    /// Parses the `key = value` partition file written next to corpora.
    pub fn parse(text: &str) -> Result<Self> {
        let mut part = Partition::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Record { line: i + 1, message: "expected `key = value`".into() })?;
            let names: Vec<String> = value
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            match key.trim() {
                "source" => part.source = names,
                "heldout" => part.heldout = names,
                other => {
                    return Err(Error::Record {
                        line: i + 1,
                        message: format!("unknown partition key {other:?}"),
                    })
                }
            }
        }
        Ok(part)
    }

    pub fn render(&self) -> String {
        format!("source = {}\nheldout = {}\n", self.source.join(","), self.heldout.join(","))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// On-disk record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub doc_id: String,
    pub domain: String,
    pub split: String,
    pub text: Vec<String>,
    pub summary: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub domains: DomainRegistry,
    pub documents: Vec<Document>,
    pub source_domains: Vec<usize>,
    pub heldout_domains: Vec<usize>,
}

impl Corpus {
    /// Builds a corpus from `(line number, record)` pairs.
    pub fn from_records(records: Vec<(usize, Record)>, partition: &Partition) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        for (_, r) in &records {
            if !names.contains(&r.domain) {
                names.push(r.domain.clone());
            }
        }
        if let Some((line, _)) = records.iter().find(|(_, r)| r.domain == UNKNOWN_DOMAIN) {
            return Err(Error::Record {
                line: *line,
                message: format!("domain name {UNKNOWN_DOMAIN:?} is reserved"),
            });
        }
        let domains = DomainRegistry::new(&names)?;

        let mut documents = Vec::with_capacity(records.len());
        let mut ids = HashSet::new();
        for (line, r) in records {
            let bad = |message: String| Error::Record { line, message };
            if !ids.insert(r.doc_id.clone()) {
                return Err(bad(format!("duplicate doc_id {:?}", r.doc_id)));
            }
            let split: Split = r.split.parse().map_err(|e: Error| bad(e.to_string()))?;
            let sentences: Vec<Sentence> = r
                .text
                .iter()
                .map(Sentence::new)
                .filter(|s| !s.tokens.is_empty())
                .collect();
            let reference: Vec<Sentence> = r
                .summary
                .iter()
                .map(Sentence::new)
                .filter(|s| !s.tokens.is_empty())
                .collect();
            if sentences.is_empty() {
                return Err(bad("field `text` has no non-empty sentence".into()));
            }
            if reference.is_empty() {
                return Err(bad("field `summary` has no non-empty sentence".into()));
            }
            if let Some(labels) = &r.labels {
                if labels.len() != sentences.len() {
                    return Err(bad(format!(
                        "{} labels for {} sentences",
                        labels.len(),
                        sentences.len()
                    )));
                }
                if labels.iter().any(|&l| l > 1) {
                    return Err(bad("labels must be 0 or 1".into()));
                }
            }
            documents.push(Document {
                doc_id: r.doc_id,
                domain: domains.by_name(&r.domain).unwrap().id,
                sentences,
                reference,
                split,
                labels: r.labels,
            });
        }

        let (source_domains, heldout_domains) = resolve_partition(&domains, partition)?;
        Ok(Self {
            domains,
            documents,
            source_domains,
            heldout_domains,
        })
    }

    /// Reads a line-delimited corpus file.
    pub fn ingest(path: &Path, partition: &Partition) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push((i + 1, record));
        }
        Self::from_records(records, partition)
    }

    /// Parses a corpus held in memory (same format as [`Corpus::ingest`]).
    pub fn parse(text: &str, partition: &Partition) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push((i + 1, record));
        }
        Self::from_records(records, partition)
    }

    pub fn to_records(&self) -> Vec<Record> {
        self.documents
            .iter()
            .map(|d| Record {
                doc_id: d.doc_id.clone(),
                domain: self.domains.get(d.domain).unwrap().name.clone(),
                split: d.split.to_string(),
                text: d.sentences.iter().map(|s| s.raw.clone()).collect(),
                summary: d.reference.iter().map(|s| s.raw.clone()).collect(),
                labels: d.labels.clone(),
            })
            .collect()
    }

    /// Serializes to the line-delimited format.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for r in self.to_records() {
            out.push_str(&serde_json::to_string(&r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.serialize().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Content hash of the serialized corpus (hex SHA-256).
    pub fn content_hash(&self) -> String {
        hex_digest(self.serialize().as_bytes())
    }

    pub fn partition(&self) -> Partition {
        let name = |&id: &usize| self.domains.get(id).unwrap().name.clone();
        Partition {
            source: self.source_domains.iter().map(name).collect(),
            heldout: self.heldout_domains.iter().map(name).collect(),
        }
    }

    pub fn is_source(&self, domain: usize) -> bool {
        self.source_domains.contains(&domain)
    }

    pub fn is_heldout(&self, domain: usize) -> bool {
        self.heldout_domains.contains(&domain)
    }

    pub fn docs<'a>(&'a self, domain: usize, split: Split) -> impl Iterator<Item = &'a Document> + 'a {
        self.documents
            .iter()
            .filter(move |d| d.domain == domain && d.split == split)
    }

    /// Counts per domain id and split.
    pub fn split_counts(&self) -> BTreeMap<usize, [usize; 3]> {
        let mut counts: BTreeMap<usize, [usize; 3]> =
            self.domains.domains().iter().map(|d| (d.id, [0; 3])).collect();
        for d in &self.documents {
            let slot = Split::ALL.iter().position(|&s| s == d.split).unwrap();
            counts.get_mut(&d.domain).unwrap()[slot] += 1;
        }
        counts
    }

    pub fn is_labeled(&self) -> bool {
        self.documents.iter().all(|d| d.labels.is_some())
    }

    /// Errors naming the first document without labels.
    pub fn require_labels(&self) -> Result<()> {
        match self.documents.iter().find(|d| d.labels.is_none()) {
            Some(d) => Err(Error::Unlabeled(d.doc_id.clone())),
            None => Ok(()),
        }
    }

    pub fn doc_index(&self) -> HashMap<&str, usize> {
        self.documents
            .iter()
            .enumerate()
            .map(|(i, d)| (d.doc_id.as_str(), i))
            .collect()
    }
}

fn resolve_partition(domains: &DomainRegistry, partition: &Partition) -> Result<(Vec<usize>, Vec<usize>)> {
    if partition.is_empty() {
        return Ok((domains.domains().iter().map(|d| d.id).collect(), Vec::new()));
    }
    for name in &partition.source {
        if partition.heldout.contains(name) {
            return Err(Error::Config(format!(
                "domain {name:?} is listed as both source and heldout"
            )));
        }
    }
    let lookup = |names: &[String]| -> Result<Vec<usize>> {
        let mut ids = Vec::new();
        for name in names {
            let d = domains
                .by_name(name)
                .filter(|d| !d.is_unknown_tag)
                .ok_or_else(|| Error::Config(format!("partition names unknown domain {name:?}")))?;
            if !ids.contains(&d.id) {
                ids.push(d.id);
            }
        }
        ids.sort_unstable();
        Ok(ids)
    };
    Ok((lookup(&partition.source)?, lookup(&partition.heldout)?))
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, domain: &str, split: &str) -> String {
        format!(
            r#"{{"doc_id":"{id}","domain":"{domain}","split":"{split}","text":["One sentence here.","Another one."],"summary":["One sentence."]}}"#
        )
    }

    #[test]
    fn three_records_two_domains() {
        let text = [rec("1", "A", "train"), rec("2", "A", "test"), rec("3", "B", "test")].join("\n");
        let c = Corpus::parse(&text, &Partition::new(["A"], ["B"])).unwrap();
        assert_eq!(c.domains.num_domains(), 2);
        assert_eq!(c.domains.unknown().id, 2);
        assert!(c.domains.unknown().is_unknown_tag);
        assert_eq!(c.domains.names(), ["A", "B"]);
        let counts = c.split_counts();
        assert_eq!(counts[&0].iter().sum::<usize>(), 2);
        assert_eq!(counts[&1].iter().sum::<usize>(), 1);
        assert_eq!(c.source_domains, [0]);
        assert_eq!(c.heldout_domains, [1]);
    }

    #[test]
    fn missing_summary_names_line() {
        let bad = r#"{"doc_id":"2","domain":"A","split":"train","text":["x"]}"#;
        let text = format!("{}\n{}", rec("1", "A", "train"), bad);
        let err = Corpus::parse(&text, &Partition::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("line 2:"), "{msg}");
        assert!(msg.contains("summary"), "{msg}");
    }

    #[test]
    fn unknown_split_rejected() {
        let err = Corpus::parse(&rec("1", "A", "dev"), &Partition::default()).unwrap_err();
        assert!(err.to_string().contains("unknown split"));
    }

    #[test]
    fn overlapping_partition_is_config_error() {
        let err = Corpus::parse(&rec("1", "A", "train"), &Partition::new(["A"], ["A"])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn ten_domains_five_five() {
        let names = ["FN", "CNN", "MA", "NYT", "WTP", "NYDN", "WSJ", "USAT", "TG", "TIME"];
        let text: Vec<String> = names
            .iter()
            .enumerate()
            .map(|(i, n)| rec(&i.to_string(), n, "test"))
            .collect();
        let part = Partition::new(names[..5].iter().copied(), names[5..].iter().copied());
        let c = Corpus::parse(&text.join("\n"), &part).unwrap();
        assert_eq!(c.source_domains.len(), 5);
        assert_eq!(c.heldout_domains.len(), 5);
        assert_eq!(c.partition(), part);
    }

    #[test]
    fn empty_text_rejected() {
        let bad = r#"{"doc_id":"1","domain":"A","split":"train","text":["  "],"summary":["x"]}"#;
        assert!(Corpus::parse(bad, &Partition::default()).is_err());
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let text = [rec("1", "A", "train"), rec("1", "A", "test")].join("\n");
        assert!(Corpus::parse(&text, &Partition::default()).is_err());
    }

    #[test]
    fn partition_file_round_trip() {
        let p = Partition::new(["a", "b"], ["c"]);
        assert_eq!(Partition::parse(&p.render()).unwrap(), p);
        assert!(Partition::parse("colour = red").is_err());
    }
}
