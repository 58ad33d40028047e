//! Fixed external sentence vectors.
//!
//! File format: JSON lines, one document per line,
//! `{"doc_id": "...", "vectors": [[f32, ...], ...]}` with one vector per
//! sentence, all of the same length.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    doc_id: String,
    vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalFeatures {
    pub feature_dim: usize,
    docs: HashMap<String, Vec<Vec<f32>>>,
}

impl ExternalFeatures {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            docs: HashMap::new(),
        }
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, vectors: Vec<Vec<f32>>) -> Result<()> {
        let doc_id = doc_id.into();
        if let Some(v) = vectors.iter().find(|v| v.len() != self.feature_dim) {
            return Err(Error::Shape(format!(
                "document {doc_id:?}: vector of length {} (feature_dim is {})",
                v.len(),
                self.feature_dim
            )));
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("external features of document {doc_id:?}")));
        }
        if self.docs.insert(doc_id.clone(), vectors).is_some() {
            return Err(Error::Invalid(format!("duplicate feature record for document {doc_id:?}")));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out: Option<Self> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FeatureRecord = serde_json::from_str(line).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
            let dim = rec.vectors.first().map_or(0, Vec::len);
            let feats = out.get_or_insert_with(|| Self::new(dim));
            feats.insert(rec.doc_id, rec.vectors).map_err(|e| Error::Record {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        let out = out.ok_or_else(|| Error::Invalid("feature file has no records".into()))?;
        if out.feature_dim == 0 {
            return Err(Error::Invalid("feature vectors must have at least one entry".into()));
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes in the file format, documents sorted by id.
    pub fn render(&self) -> String {
        let mut ids: Vec<&String> = self.docs.keys().collect();
        ids.sort();
        let mut out = String::new();
        for id in ids {
            let rec = FeatureRecord {
                doc_id: id.clone(),
                vectors: self.docs[id].clone(),
            };
            out.push_str(&serde_json::to_string(&rec).unwrap());
            out.push('\n');
        }
        out
    }

    /// Vectors of the first `n_sentences` sentences of `doc_id`.
    pub fn vectors(&self, doc_id: &str, n_sentences: usize) -> Result<&[Vec<f32>]> {
        let v = self.docs.get(doc_id).ok_or_else(|| Error::MissingFeature {
            doc_id: doc_id.to_string(),
            index: 0,
        })?;
        if v.len() < n_sentences {
            return Err(Error::MissingFeature {
                doc_id: doc_id.to_string(),
                index: v.len(),
            });
        }
        Ok(&v[..n_sentences])
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_lookup() {
        let text = "{\"doc_id\":\"a\",\"vectors\":[[1,2],[3,4]]}\n{\"doc_id\":\"b\",\"vectors\":[[0,0]]}\n";
        let f = ExternalFeatures::parse(text).unwrap();
        assert_eq!(f.feature_dim, 2);
        assert_eq!(f.vectors("a", 2).unwrap()[1], vec![3.0, 4.0]);
        assert_eq!(ExternalFeatures::parse(&f.render()).unwrap(), f);
    }

    #[test]
    fn missing_entries_name_doc_and_index() {
        let f = ExternalFeatures::parse("{\"doc_id\":\"a\",\"vectors\":[[1],[2]]}").unwrap();
        let err = f.vectors("a", 3).unwrap_err();
        assert!(matches!(err, Error::MissingFeature { ref doc_id, index: 2 } if doc_id == "a"));
        assert!(matches!(f.vectors("zz", 1), Err(Error::MissingFeature { index: 0, .. })));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let text = "{\"doc_id\":\"a\",\"vectors\":[[1,2]]}\n{\"doc_id\":\"b\",\"vectors\":[[1]]}";
        let err = ExternalFeatures::parse(text).unwrap_err().to_string();
        assert!(err.starts_with("line 2"), "{err}");
    }
}
