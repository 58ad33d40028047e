use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Corpus, Split};
use crate::labeling::{ext_oracle_eval, lead_eval, OracleMetric};
use crate::metrics::{extractive_fragments, RougeTriple};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsOptions {
    pub lead_k: usize,
    pub oracle_max_select: usize,
    pub oracle_metric: OracleMetric,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            lead_k: 2,
            oracle_max_select: 3,
            oracle_metric: OracleMetric::default(),
        }
    }
}

/// Measures of one domain (or an average row), computed on its test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub domain: String,
    pub counts: [f64; 3],
    /// `None` when the domain has no test documents.
    pub measures: Option<Measures>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub coverage: f64,
    pub density: f64,
    pub compression: f64,
    pub lead: RougeTriple,
    pub oracle: RougeTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub rows: Vec<DomainStats>,
    pub options: StatsOptions,
}

impl StatsTable {
    pub fn row(&self, domain: &str) -> Option<&DomainStats> {
        self.rows.iter().find(|r| r.domain == domain)
    }
}

fn domain_measures(corpus: &Corpus, domain: usize, opts: &StatsOptions) -> Option<Measures> {
    let docs: Vec<_> = corpus.docs(domain, Split::Test).collect();
    if docs.is_empty() {
        return None;
    }
    let n = docs.len() as f64;
    let mut cov = 0.0;
    let mut den = 0.0;
    let mut comp = 0.0;
    let mut lead = Vec::with_capacity(docs.len());
    let mut oracle = Vec::with_capacity(docs.len());
    for d in docs {
        let frag = extractive_fragments(&d.flat_tokens(), &d.reference_tokens())
            .expect("ingested documents have non-empty text and summary");
        cov += frag.coverage;
        den += frag.density;
        comp += frag.compression;
        lead.push(lead_eval(d, opts.lead_k));
        oracle.push(ext_oracle_eval(d, opts.oracle_max_select, opts.oracle_metric));
    }
    Some(Measures {
        coverage: cov / n,
        density: den / n,
        compression: comp / n,
        lead: RougeTriple::average(&lead),
        oracle: RougeTriple::average(&oracle),
    })
}

fn average_row(name: &str, rows: &[&DomainStats]) -> DomainStats {
    let k = rows.len().max(1) as f64;
    let mut counts = [0.0; 3];
    for r in rows {
        for (c, v) in counts.iter_mut().zip(r.counts) {
            *c += v / k;
        }
    }
    let with: Vec<&Measures> = rows.iter().filter_map(|r| r.measures.as_ref()).collect();
    let measures = (!with.is_empty()).then(|| {
        let m = with.len() as f64;
        Measures {
            coverage: with.iter().map(|x| x.coverage).sum::<f64>() / m,
            density: with.iter().map(|x| x.density).sum::<f64>() / m,
            compression: with.iter().map(|x| x.compression).sum::<f64>() / m,
            lead: RougeTriple::average(with.iter().map(|x| &x.lead)),
            oracle: RougeTriple::average(with.iter().map(|x| &x.oracle)),
        }
    });
    DomainStats {
        domain: name.to_string(),
        counts,
        measures,
    }
}

/// Per-domain statistics table: source rows, their average, then held-out
/// rows and their average, then any unassigned domains.
pub fn stats(corpus: &Corpus, opts: &StatsOptions) -> StatsTable {
    let counts = corpus.split_counts();
    let row = |id: usize| DomainStats {
        domain: corpus.domains.get(id).unwrap().name.clone(),
        counts: counts[&id].map(|c| c as f64),
        measures: domain_measures(corpus, id, opts),
    };
    let mut rows = Vec::new();
    for (group, ids) in [("avg_source", &corpus.source_domains), ("avg_heldout", &corpus.heldout_domains)] {
        if ids.is_empty() {
            continue;
        }
        let group_rows: Vec<DomainStats> = ids.iter().map(|&id| row(id)).collect();
        let avg = average_row(group, &group_rows.iter().collect::<Vec<_>>());
        rows.extend(group_rows);
        rows.push(avg);
    }
    for d in corpus.domains.domains() {
        if !corpus.is_source(d.id) && !corpus.is_heldout(d.id) {
            rows.push(row(d.id));
        }
    }
    StatsTable { rows, options: *opts }
}

pub const STATS_HEADER: &str =
    "domain,n_train,n_valid,n_test,coverage,density,compression,lead_r1,lead_r2,lead_rl,oracle_r1,oracle_r2,oracle_rl";

/// CSV rendering; measures with 2 decimals, ROUGE ×100, `NA` for domains
/// without test documents.
pub fn write_stats_csv(table: &StatsTable) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for r in &table.rows {
        let _ = write!(
            out,
            "{},{:.0},{:.0},{:.0}",
            r.domain, r.counts[0], r.counts[1], r.counts[2]
        );
        match &r.measures {
            Some(m) => {
                let [l1, l2, ll] = m.lead.percent();
                let [o1, o2, ol] = m.oracle.percent();
                for v in [m.coverage, m.density, m.compression, l1, l2, ll, o1, o2, ol] {
                    let _ = write!(out, ",{v:.2}");
                }
            }
            None => out.push_str(&",NA".repeat(9)),
        }
        out.push('\n');
    }
    out
}
