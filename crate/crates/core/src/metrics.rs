//! ROUGE-1/2/L and the extractive-fragment measures (coverage, density,
//! compression).
//!
//! ROUGE here is the plain F1 variant: no stemming, no stopword removal and
//! no resampling. Multi-sentence texts are compared as one flat token
//! sequence. Scores live in `[0, 1]`; reports multiply by 100.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        let precision = ratio(overlap, candidate_total);
        let recall = ratio(overlap, reference_total);
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

/// F1 values of ROUGE-1, ROUGE-2 and ROUGE-L for one candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeTriple {
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

impl RougeTriple {
    pub fn compute<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> Self {
        Self {
            r1: rouge_n(candidate, reference, 1).f1,
            r2: rouge_n(candidate, reference, 2).f1,
            rl: rouge_l(candidate, reference).f1,
        }
    }

    pub fn mean(&self) -> f64 {
        (self.r1 + self.r2 + self.rl) / 3.0
    }

    /// Elementwise mean; zero for an empty input.
    pub fn average<'a>(items: impl IntoIterator<Item = &'a RougeTriple>) -> RougeTriple {
        let mut sum = RougeTriple::default();
        let mut n = 0usize;
        for t in items {
            sum.r1 += t.r1;
            sum.r2 += t.r2;
            sum.rl += t.rl;
            n += 1;
        }
        if n == 0 {
            return sum;
        }
        let n = n as f64;
        RougeTriple {
            r1: sum.r1 / n,
            r2: sum.r2 / n,
            rl: sum.rl / n,
        }
    }

    /// Scores multiplied by 100.
    pub fn percent(&self) -> [f64; 3] {
        [self.r1 * 100.0, self.r2 * 100.0, self.rl * 100.0]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N with clipped n-gram counts.
///
/// # Panics
///
/// If `n == 0`.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    assert!(n >= 1, "rouge_n requires n >= 1");
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| refs.get(gram).map_or(0, |&r| c.min(r)))
        .sum();
    let grams = |len: usize| if len >= n { len - n + 1 } else { 0 };
    RougeScore::from_counts(overlap, grams(candidate.len()), grams(reference.len()))
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Mean of the ROUGE-1, ROUGE-2 and ROUGE-L F1 scores.
pub fn rouge_mean<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> f64 {
    RougeTriple::compute(candidate, reference).mean()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fragment {
    pub doc_start: usize,
    pub summary_start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragmentStats {
    /// Fragments in summary order; disjoint in summary positions.
    pub fragments: Vec<Fragment>,
    pub coverage: f64,
    pub density: f64,
    pub compression: f64,
}

/// Greedy extractive-fragment decomposition of `summary` against `doc`.
///
/// The summary is scanned left to right. At each position the longest run
/// of tokens that also occurs contiguously in the document becomes a
/// fragment (earliest document start on ties) and the scan jumps past it;
/// a token with no match advances the scan by one.
pub fn extractive_fragments<T: Eq>(doc: &[T], summary: &[T]) -> Result<FragmentStats> {
    if summary.is_empty() {
        return Err(Error::Invalid("summary is empty; compression is undefined".into()));
    }
    if doc.is_empty() {
        return Err(Error::Invalid("document is empty".into()));
    }
    let mut fragments = Vec::new();
    let mut i = 0;
    while i < summary.len() {
        let mut best_len = 0;
        let mut best_start = 0;
        for j in 0..doc.len() {
            let len = summary[i..]
                .iter()
                .zip(&doc[j..])
                .take_while(|(a, b)| a == b)
                .count();
            if len > best_len {
                best_len = len;
                best_start = j;
            }
        }
        if best_len > 0 {
            fragments.push(Fragment {
                doc_start: best_start,
                summary_start: i,
                len: best_len,
            });
            i += best_len;
        } else {
            i += 1;
        }
    }
    let n = summary.len() as f64;
    let covered: usize = fragments.iter().map(|f| f.len).sum();
    let squared: usize = fragments.iter().map(|f| f.len * f.len).sum();
    Ok(FragmentStats {
        fragments,
        coverage: covered as f64 / n,
        density: squared as f64 / n,
        compression: doc.len() as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: f64 = 1e-12;

    #[test]
    fn rouge1_identity() {
        let s = ["the", "cat", "sat"];
        let r = rouge_n(&s, &s, 1);
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn rouge1_partial() {
        let r = rouge_n(&["a", "b", "c"], &["a", "b", "d"], 1);
        assert!((r.recall - 2.0 / 3.0).abs() < EPS);
        assert!((r.precision - 2.0 / 3.0).abs() < EPS);
    }

    #[test]
    fn rouge2_disjoint() {
        assert_eq!(rouge_n(&["a", "b"], &["c", "d"], 2), RougeScore::default());
    }

    #[test]
    fn rouge_n_short_inputs_are_zero() {
        assert_eq!(rouge_n(&["a"], &["a", "b"], 2), RougeScore::default());
        assert_eq!(rouge_n::<&str>(&[], &["a"], 1), RougeScore::default());
    }

    #[test]
    fn rouge_n_clips_repeats() {
        // candidate repeats "a" three times, reference has it once
        let r = rouge_n(&["a", "a", "a"], &["a", "b"], 1);
        assert!((r.precision - 1.0 / 3.0).abs() < EPS);
        assert!((r.recall - 0.5).abs() < EPS);
    }

    #[test]
    fn rouge_l_cases() {
        let s = ["x", "y", "z"];
        assert_eq!(rouge_l(&s, &s).f1, 1.0);
        let r = rouge_l(&["a", "x", "b", "y"], &["a", "b"]);
        assert_eq!(r.recall, 1.0);
        assert_eq!(r.precision, 0.5);
        assert!((r.f1 - 2.0 / 3.0).abs() < EPS);
        assert_eq!(rouge_l::<&str>(&[], &["a"]), RougeScore::default());
    }

    #[test]
    fn rouge_mean_cases() {
        assert_eq!(rouge_mean(&["a", "b"], &["a", "b"]), 1.0);
        let t = RougeTriple { r1: 0.6, r2: 0.3, rl: 0.6 };
        assert!((t.mean() - 0.5).abs() < EPS);
    }

    #[test]
    fn fragments_prefix() {
        let doc: Vec<usize> = (0..20).collect();
        let st = extractive_fragments(&doc, &doc[..5]).unwrap();
        assert_eq!(st.fragments.len(), 1);
        assert_eq!(st.coverage, 1.0);
        assert_eq!(st.density, 5.0);
        assert_eq!(st.compression, 4.0);
    }

    #[test]
    fn fragments_two_pieces() {
        let doc = ["a", "b", "c", "d", "e", "f"];
        let st = extractive_fragments(&doc, &["b", "c", "e"]).unwrap();
        let pairs: Vec<(usize, usize)> = st.fragments.iter().map(|f| (f.doc_start, f.len)).collect();
        assert_eq!(pairs, [(1, 2), (4, 1)]);
        assert_eq!(st.coverage, 1.0);
        assert!((st.density - 5.0 / 3.0).abs() < EPS);
        assert_eq!(st.compression, 2.0);
    }

    #[test]
    fn fragments_no_overlap() {
        let st = extractive_fragments(&["a", "b"], &["z"]).unwrap();
        assert_eq!((st.coverage, st.density, st.compression), (0.0, 0.0, 2.0));
    }

    #[test]
    fn fragments_tie_takes_earliest_doc_start() {
        let st = extractive_fragments(&["x", "a", "y", "a"], &["a"]).unwrap();
        assert_eq!(st.fragments[0].doc_start, 1);
    }

    #[test]
    fn fragments_empty_summary_errors() {
        assert!(extractive_fragments(&["a"], &[] as &[&str]).is_err());
    }

    proptest! {
        #[test]
        fn rouge_n_self_is_one(x in prop::collection::vec(0u8..6, 1..12), n in 1usize..4) {
            prop_assume!(x.len() >= n);
            let r = rouge_n(&x, &x, n);
            prop_assert_eq!(r.f1, 1.0);
        }

        #[test]
        fn appending_matching_token_keeps_recall(
            cand in prop::collection::vec(0u8..5, 0..10),
            reference in prop::collection::vec(0u8..5, 1..10),
            pick in 0usize..10,
        ) {
            let before = rouge_n(&cand, &reference, 1).recall;
            let mut longer = cand.clone();
            longer.push(reference[pick % reference.len()]);
            prop_assert!(rouge_n(&longer, &reference, 1).recall >= before);
        }

        #[test]
        fn scores_in_unit_interval(
            cand in prop::collection::vec(0u8..4, 0..12),
            reference in prop::collection::vec(0u8..4, 0..12),
        ) {
            for s in [rouge_n(&cand, &reference, 1), rouge_n(&cand, &reference, 2), rouge_l(&cand, &reference)] {
                for v in [s.precision, s.recall, s.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn fragment_bounds(
            doc in prop::collection::vec(0u8..5, 1..30),
            summary in prop::collection::vec(0u8..7, 1..10),
        ) {
            let st = extractive_fragments(&doc, &summary).unwrap();
            prop_assert!((0.0..=1.0).contains(&st.coverage));
            let longest = st.fragments.iter().map(|f| f.len).max().unwrap_or(0) as f64;
            prop_assert!(st.density <= st.coverage * longest + 1e-12);
            let all_in_doc = summary.iter().all(|t| doc.contains(t));
            prop_assert_eq!(st.coverage == 1.0, all_in_doc);
            let mut next = 0;
            for f in &st.fragments {
                prop_assert!(f.summary_start >= next);
                next = f.summary_start + f.len;
            }
        }
    }
}
