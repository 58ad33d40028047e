//! Learning strategies: joint training, fixed external features, domain
//! tags with unknown-tag relabeling, and the meta-learning objective.

mod config;
mod train;

use rand::Rng;

pub use config::{DomainSchedule, ExperimentConfig, Strategy, TrainConfig};
pub use train::{train, train_on, EpochRecord, TrainReport, TrainedModel};

use crate::corpus::EncodedDoc;
use crate::error::{Error, Result};
use crate::nnet::{DocInput, ExternalFeatures, Gradients, ModelConfig, ParameterStore, Real, Scorer};

/// Builds scorer inputs for a batch, attaching labels, tags and external
/// vectors.
pub fn batch_inputs<'a>(
    docs: &[&'a EncodedDoc],
    tags: Option<&[usize]>,
    features: Option<&'a ExternalFeatures>,
) -> Result<Vec<DocInput<'a>>> {
    if let Some(t) = tags {
        if t.len() != docs.len() {
            return Err(Error::Shape(format!("{} tags for {} documents", t.len(), docs.len())));
        }
    }
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let labels = d.labels.as_deref().ok_or_else(|| Error::Unlabeled(d.doc_id.clone()))?;
            let external = match features {
                Some(f) => Some(f.vectors(&d.doc_id, d.sentences.len())?),
                None => None,
            };
            Ok(DocInput::new(&d.sentences)
                .labels(labels)
                .tag(tags.map(|t| t[i]))
                .external(external))
        })
        .collect()
}

fn step<F: Real>(
    model: &ModelConfig,
    params: &ParameterStore<F>,
    inputs: &[DocInput<'_>],
    dropout_seed: Option<u64>,
) -> Result<(F, Gradients<F>)> {
    if inputs.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    Scorer::new(model, params)?.loss_and_grad(inputs, dropout_seed)
}

/// Mean cross-entropy over a batch with no domain information.
pub fn joint_step<F: Real>(
    model: &ModelConfig,
    params: &ParameterStore<F>,
    docs: &[&EncodedDoc],
    dropout_seed: Option<u64>,
) -> Result<(F, Gradients<F>)> {
    step(model, params, &batch_inputs(docs, None, None)?, dropout_seed)
}

/// As [`joint_step`], with each document's tag row added to its sentence
/// encodings.
pub fn tag_step<F: Real>(
    model: &ModelConfig,
    params: &ParameterStore<F>,
    docs: &[&EncodedDoc],
    tags: &[usize],
    dropout_seed: Option<u64>,
) -> Result<(F, Gradients<F>)> {
    if !model.use_domain_tags {
        return Err(Error::Config("tag_step needs a model with use_domain_tags = true".into()));
    }
    step(model, params, &batch_inputs(docs, Some(tags), None)?, dropout_seed)
}

/// As [`joint_step`], with sentence vectors taken from a fixed provider.
pub fn pretrained_step<F: Real>(
    model: &ModelConfig,
    params: &ParameterStore<F>,
    docs: &[&EncodedDoc],
    features: &ExternalFeatures,
    dropout_seed: Option<u64>,
) -> Result<(F, Gradients<F>)> {
    step(model, params, &batch_inputs(docs, None, Some(features))?, dropout_seed)
}

/// Replaces each id by `unknown` with probability `p`.
pub fn tag_relabel(ids: &[usize], unknown: usize, p: f64, rng: &mut impl Rng) -> Vec<usize> {
    ids.iter()
        .map(|&id| if rng.gen_bool(p.clamp(0.0, 1.0)) { unknown } else { id })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaOptions {
    pub gamma: f64,
    pub inner_step_size: f64,
    pub second_order: bool,
    /// Divides the auxiliary sum by the number of auxiliary batches.
    pub normalize: bool,
    /// Finite-difference step for Hessian-vector products.
    pub hvp_step: f64,
}

impl MetaOptions {
    pub fn new(gamma: f64, inner_step_size: f64) -> Self {
        Self {
            gamma,
            inner_step_size,
            second_order: false,
            normalize: false,
            hvp_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetaOutput<F: Real> {
    /// `γ·L_k(θ) + (1−γ)·Σ_j L_j(θ')`.
    pub loss: F,
    pub main_loss: F,
    /// `L_j(θ')` per auxiliary task, in the order given.
    pub aux_losses: Vec<F>,
    pub grads: Gradients<F>,
}

/// One meta step.
///
/// `objective(params, task)` returns the loss and gradient of `task` at
/// `params`; `main` is the main task and `aux` the auxiliary tasks. The inner
/// update is `θ' = θ − α·∇L_main(θ)`. The auxiliary gradient is taken at
/// `θ'` and, by default, passed through unchanged (first order); with
/// `second_order` it is multiplied by `I − α·H_main` using finite-difference
/// Hessian-vector products.
pub fn meta_step<F: Real>(
    objective: impl Fn(&ParameterStore<F>, usize) -> Result<(F, Gradients<F>)>,
    params: &ParameterStore<F>,
    main: usize,
    aux: &[usize],
    opts: &MetaOptions,
) -> Result<MetaOutput<F>> {
    if !(0.0..=1.0).contains(&opts.gamma) {
        return Err(Error::Config(format!("gamma {} is outside [0, 1]", opts.gamma)));
    }
    let (main_loss, main_grads) = objective(params, main)?;
    if opts.gamma == 1.0 {
        return Ok(MetaOutput {
            loss: main_loss,
            main_loss,
            aux_losses: Vec::new(),
            grads: main_grads,
        });
    }
    if aux.is_empty() {
        return Err(Error::Invalid("meta step needs at least one auxiliary batch".into()));
    }
    let alpha = F::c(opts.inner_step_size);
    let mut inner = params.clone();
    inner
        .add_scaled(-alpha, &main_grads)
        .map_err(|_| Error::NonFinite("parameters after the inner update".into()))?;

    let mut aux_grads = Gradients::zeros_like(params);
    let mut aux_losses = Vec::with_capacity(aux.len());
    for &task in aux {
        let (l, g) = objective(&inner, task)?;
        aux_losses.push(l);
        aux_grads.axpy(F::one(), &g);
    }
    let mut aux_sum: F = aux_losses.iter().copied().sum();
    if opts.normalize {
        let inv = F::c(1.0 / aux.len() as f64);
        aux_grads.scale(inv);
        aux_sum = aux_sum * inv;
    }
    if opts.second_order {
        let hv = hessian_vector(&objective, params, main, &aux_grads, opts.hvp_step)?;
        aux_grads.axpy(-alpha, &hv);
    }

    let gamma = F::c(opts.gamma);
    let rest = F::one() - gamma;
    let mut grads = main_grads;
    grads.scale(gamma);
    grads.axpy(rest, &aux_grads);
    grads.check_finite()?;
    Ok(MetaOutput {
        loss: gamma * main_loss + rest * aux_sum,
        main_loss,
        aux_losses,
        grads,
    })
}

/// `H·v` for the Hessian of task `task` at `params`, by central differences
/// of the gradient along the unit direction of `v`.
fn hessian_vector<F: Real>(
    objective: &impl Fn(&ParameterStore<F>, usize) -> Result<(F, Gradients<F>)>,
    params: &ParameterStore<F>,
    task: usize,
    v: &Gradients<F>,
    step: f64,
) -> Result<Gradients<F>> {
    let norm = v
        .iter()
        .flat_map(|(_, t)| t.data().iter())
        .map(|x| x.f64() * x.f64())
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Ok(Gradients::zeros_like(params));
    }
    let eps = F::c(step / norm);
    let mut plus = params.clone();
    plus.add_scaled(eps, v)?;
    let mut minus = params.clone();
    minus.add_scaled(-eps, v)?;
    let (_, gp) = objective(&plus, task)?;
    let (_, gm) = objective(&minus, task)?;
    let mut hv = gp;
    hv.axpy(-F::one(), &gm);
    hv.scale(F::c(norm / (2.0 * step)));
    Ok(hv)
}

#[cfg(test)]
mod tests;
