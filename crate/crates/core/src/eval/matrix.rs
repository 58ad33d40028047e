use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate_domain, EvalOptions};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::strategies::{train_on, ExperimentConfig, Strategy, TrainReport, TrainedModel};

/// ROUGE-1 grid `R` (row: training domain, column: test domain, F1 ×100)
/// and the derived `V`: the raw score on the diagonal, `R_ij − R_jj` off it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub domains: Vec<String>,
    pub r: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl EvalMatrix {
    pub fn from_r(domains: Vec<String>, r: Vec<Vec<f64>>) -> Result<Self> {
        let k = domains.len();
        if r.len() != k || r.iter().any(|row| row.len() != k) {
            return Err(Error::Shape(format!("R must be {k}×{k}")));
        }
        if r.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix R".into()));
        }
        let v = (0..k)
            .map(|i| (0..k).map(|j| if i == j { r[i][i] } else { r[i][j] - r[j][j] }).collect())
            .collect();
        Ok(Self { domains, r, v })
    }

    /// Whether every off-diagonal entry of `V` is negative.
    pub fn off_diagonal_negative(&self) -> bool {
        let k = self.domains.len();
        (0..k).all(|i| (0..k).all(|j| i == j || self.v[i][j] < 0.0))
    }

    /// Two blocks, `R` then `V`, each with a header row of test domains.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (name, grid) in [("R", &self.r), ("V", &self.v)] {
            let _ = writeln!(out, "{name},{}", self.domains.join(","));
            for (d, row) in self.domains.iter().zip(grid) {
                let cells: Vec<String> = row.iter().map(|x| format!("{x:.2}")).collect();
                let _ = writeln!(out, "{d},{}", cells.join(","));
            }
        }
        out
    }
}

/// Trains one plain model per source domain, each on that domain alone.
pub fn train_matrix_models(corpus: &Corpus, exp: &ExperimentConfig) -> Result<Vec<(TrainedModel, TrainReport)>> {
    let mut exp = exp.clone();
    exp.train.strategy = Strategy::Joint;
    corpus
        .source_domains
        .iter()
        .map(|&d| train_on(corpus, &[d], &exp, None))
        .collect()
}

/// Evaluates model `i` (trained on one domain) on every model's domain.
pub fn cross_domain_matrix(models: &[TrainedModel], corpus: &Corpus, opts: &EvalOptions) -> Result<EvalMatrix> {
    let mut domains = Vec::with_capacity(models.len());
    for m in models {
        let [d] = m.train_domains.as_slice() else {
            return Err(Error::Invalid(format!(
                "matrix models must be trained on exactly one domain, got {:?}",
                m.train_domains
            )));
        };
        if domains.contains(d) {
            return Err(Error::Invalid(format!("two matrix models trained on domain {d:?}")));
        }
        domains.push(d.clone());
    }
    let ids = domains
        .iter()
        .map(|name| {
            corpus
                .domains
                .by_name(name)
                .map(|d| d.id)
                .ok_or_else(|| Error::Invalid(format!("corpus has no domain {name:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = models
        .iter()
        .map(|m| {
            ids.iter()
                .map(|&j| Ok(evaluate_domain(m, corpus, j, opts, None)?.rouge.r1 * 100.0))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    EvalMatrix::from_r(domains, r)
}
