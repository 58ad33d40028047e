use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate_settings, EvalOptions};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::strategies::{train, ExperimentConfig, Strategy};

/// Mean ROUGE (average of R-1, R-2, R-L F1, ×100) per setting for one γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub in_domain: f64,
    pub out_of_domain: Option<f64>,
    pub cross_dataset: Option<f64>,
}

impl SweepRow {
    /// `|in − out|` on mean ROUGE.
    pub fn gap(&self) -> Option<f64> {
        self.out_of_domain.map(|o| (self.in_domain - o).abs())
    }
}

/// Trains one meta model per γ with the same seed and evaluates it.
pub fn gamma_sweep(
    corpus: &Corpus,
    base: &ExperimentConfig,
    gammas: &[f64],
    opts: &EvalOptions,
    cross: Option<&Corpus>,
) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(Error::Config("gamma sweep needs at least one value".into()));
    }
    gammas
        .iter()
        .map(|&gamma| {
            let mut exp = base.clone();
            exp.train.strategy = Strategy::Meta;
            exp.train.gamma = gamma;
            let (model, _) = train(corpus, &exp, None)?;
            let report = evaluate_settings(&model, corpus, opts, None, cross)?;
            Ok(SweepRow {
                gamma,
                in_domain: report.in_mean(),
                out_of_domain: report.out_mean(),
                cross_dataset: report.cross_mean(),
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("gamma,in_domain,out_of_domain,cross_dataset\n");
    let cell = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.4},{},{}",
            r.gamma,
            r.in_domain,
            cell(r.out_of_domain),
            cell(r.cross_dataset)
        );
    }
    out
}
