use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::EncodedDoc;
use crate::nnet::gradcheck::{compare, finite_difference, randomize, F64_FLOOR};
use crate::nnet::{init_params, Tensor};

/// One-parameter objective: task 0 is `(θ − 1)²`, task 1 is `(θ + 1)²`,
/// task 2 is `(θ − 3)²`.
fn quadratic(p: &ParameterStore<f64>, task: usize) -> Result<(f64, Gradients<f64>)> {
    let theta = p.tensor(0).data()[0];
    let target = [1.0, -1.0, 3.0][task];
    let mut g = Gradients::zeros_like(p);
    g.tensor_mut(0).data_mut()[0] = 2.0 * (theta - target);
    Ok(((theta - target).powi(2), g))
}

fn scalar(theta: f64) -> ParameterStore<f64> {
    let mut p = ParameterStore::new(0);
    p.insert("theta", Tensor::scalar(theta)).unwrap();
    p
}

fn grad0(out: &MetaOutput<f64>) -> f64 {
    out.grads.tensor(0).data()[0]
}

#[test]
fn meta_toy_first_order() {
    let out = meta_step(quadratic, &scalar(0.0), 0, &[1], &MetaOptions::new(0.5, 0.1)).unwrap();
    assert!((grad0(&out) - 0.2).abs() < 1e-9, "{}", grad0(&out));
    // θ' = 0.2: L_k = 1, L_j(θ') = 1.44
    assert!((out.loss - (0.5 * 1.0 + 0.5 * 1.44)).abs() < 1e-12);
}

#[test]
fn meta_toy_second_order() {
    let opts = MetaOptions {
        second_order: true,
        ..MetaOptions::new(0.5, 0.1)
    };
    let out = meta_step(quadratic, &scalar(0.0), 0, &[1], &opts).unwrap();
    // d/dθ (θ − α·2(θ−1) + 1)² = 2(θ' + 1)(1 − 2α) = 2·1.2·0.8 = 1.92
    let exact = 0.5 * -2.0 + 0.5 * 1.92;
    assert!((grad0(&out) - exact).abs() < 1e-6, "{}", grad0(&out));
}

#[test]
fn gamma_one_returns_main_gradient() {
    let out = meta_step(quadratic, &scalar(0.3), 0, &[1, 2], &MetaOptions::new(1.0, 0.1)).unwrap();
    let (l, g) = quadratic(&scalar(0.3), 0).unwrap();
    assert_eq!(out.loss.to_bits(), l.to_bits());
    assert_eq!(out.grads, g);
}

#[test]
fn zero_inner_step_is_a_mixture() {
    let p = scalar(0.7);
    let gamma = 0.3;
    let out = meta_step(quadratic, &p, 0, &[1, 2], &MetaOptions::new(gamma, 0.0)).unwrap();
    let g = |t| quadratic(&p, t).unwrap().1.tensor(0).data()[0];
    let expected = gamma * g(0) + (1.0 - gamma) * (g(1) + g(2));
    assert!((grad0(&out) - expected).abs() < 1e-9);
}

#[test]
fn meta_loss_matches_independent_recomputation() {
    let p = scalar(-0.4);
    for gamma in [0.0, 0.25, 0.5, 0.9] {
        let out = meta_step(quadratic, &p, 0, &[1, 2], &MetaOptions::new(gamma, 0.05)).unwrap();
        let (lk, gk) = quadratic(&p, 0).unwrap();
        let inner = scalar(-0.4 - 0.05 * gk.tensor(0).data()[0]);
        let aux = quadratic(&inner, 1).unwrap().0 + quadratic(&inner, 2).unwrap().0;
        assert!((out.loss - (gamma * lk + (1.0 - gamma) * aux)).abs() < 1e-12);
    }
}

#[test]
fn normalize_divides_the_auxiliary_sum() {
    let p = scalar(0.1);
    let plain = meta_step(quadratic, &p, 0, &[1, 2], &MetaOptions::new(0.0, 0.1)).unwrap();
    let opts = MetaOptions {
        normalize: true,
        ..MetaOptions::new(0.0, 0.1)
    };
    let norm = meta_step(quadratic, &p, 0, &[1, 2], &opts).unwrap();
    assert!((grad0(&plain) / 2.0 - grad0(&norm)).abs() < 1e-12);
}

#[test]
fn meta_step_rejects_bad_inputs() {
    let p = scalar(0.0);
    assert!(meta_step(quadratic, &p, 0, &[], &MetaOptions::new(0.5, 0.1)).is_err());
    assert!(meta_step(quadratic, &p, 0, &[1], &MetaOptions::new(1.5, 0.1)).is_err());
    assert!(meta_step(quadratic, &p, 0, &[1], &MetaOptions::new(0.5, f64::INFINITY)).is_err());
}

#[test]
fn relabel_extremes_and_rate() {
    let ids: Vec<usize> = (0..10_000).map(|i| i % 3).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert_eq!(tag_relabel(&ids, 3, 0.0, &mut rng), ids);
    assert!(tag_relabel(&ids, 3, 1.0, &mut rng).iter().all(|&t| t == 3));
    let half = tag_relabel(&ids, 3, 0.5, &mut rng);
    let frac = half.iter().filter(|&&t| t == 3).count() as f64 / ids.len() as f64;
    assert!((0.48..=0.52).contains(&frac), "{frac}");
    let mut a = ChaCha8Rng::seed_from_u64(9);
    let mut b = ChaCha8Rng::seed_from_u64(9);
    assert_eq!(tag_relabel(&ids, 3, 0.3, &mut a), tag_relabel(&ids, 3, 0.3, &mut b));
}

fn toy_docs() -> Vec<EncodedDoc> {
    let doc = |id: &str, domain, sentences: Vec<Vec<u32>>, labels: Vec<u8>| EncodedDoc {
        doc_id: id.into(),
        domain,
        sentences,
        labels: Some(labels),
    };
    vec![
        doc("a", 0, vec![vec![2, 3, 4], vec![5, 6], vec![7, 8, 2, 9]], vec![1, 0, 0]),
        doc("b", 0, vec![vec![3, 3], vec![4, 10, 11]], vec![0, 1]),
        doc("c", 1, vec![vec![9, 8, 7], vec![6], vec![5, 4], vec![2, 2]], vec![0, 0, 1, 1]),
    ]
}

fn tiny(tags: bool) -> ModelConfig {
    ModelConfig {
        use_domain_tags: tags,
        ..ModelConfig::tiny()
    }
}

#[test]
fn joint_loss_decomposes_over_batches() {
    let model = tiny(false);
    let mut p = init_params(&model, 12, 2, 1).unwrap().cast::<f64>();
    randomize(&mut p, 2, 0.3);
    let docs = toy_docs();
    let all: Vec<&EncodedDoc> = docs.iter().collect();
    let (l_all, _) = joint_step(&model, &p, &all, None).unwrap();
    let (l_a, _) = joint_step(&model, &p, &all[..2], None).unwrap();
    let (l_b, _) = joint_step(&model, &p, &all[2..], None).unwrap();
    assert!((l_all - (2.0 * l_a + l_b) / 3.0).abs() < 1e-12);
}

#[test]
fn joint_step_descends() {
    let model = tiny(false);
    let mut p = init_params(&model, 12, 2, 3).unwrap();
    randomize(&mut p, 4, 0.3);
    let docs = toy_docs();
    let batch: Vec<&EncodedDoc> = docs.iter().collect();
    let (before, g) = joint_step(&model, &p, &batch, None).unwrap();
    p.add_scaled(-0.05, &g).unwrap();
    let (after, _) = joint_step(&model, &p, &batch, None).unwrap();
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn joint_step_ignores_tags() {
    let model = tiny(false);
    let p = init_params(&model, 12, 2, 3).unwrap();
    let mut docs = toy_docs();
    let batch: Vec<&EncodedDoc> = docs.iter().collect();
    let a = joint_step(&model, &p, &batch, None).unwrap();
    docs.iter_mut().for_each(|d| d.domain = 1);
    let batch: Vec<&EncodedDoc> = docs.iter().collect();
    assert_eq!(a, joint_step(&model, &p, &batch, None).unwrap());
}

#[test]
fn zero_tag_table_matches_joint() {
    let tagged = tiny(true);
    let mut p = init_params(&tagged, 12, 2, 5).unwrap();
    randomize(&mut p, 6, 0.3);
    p.get_mut("tag.table").unwrap().data_mut().fill(0.0);
    let mut plain = p.clone();
    let mut stripped = ParameterStore::new(plain.rng_seed);
    for (name, t) in plain.iter() {
        if name != "tag.table" && name != "sent_proj.tag_weight" {
            stripped.insert(name, t.clone()).unwrap();
        }
    }
    plain = stripped;
    let docs = toy_docs();
    let batch: Vec<&EncodedDoc> = docs.iter().collect();
    let (lt, _) = tag_step(&tagged, &p, &batch, &[0, 1, 2], None).unwrap();
    let (lj, _) = joint_step(&tiny(false), &plain, &batch, None).unwrap();
    assert_eq!(lt, lj);
    assert!(tag_step(&tagged, &p, &batch, &[0, 1, 3], None).is_err());
}

#[test]
fn pretrained_step_uses_only_the_projection() {
    let feats = {
        let mut f = ExternalFeatures::new(4);
        for d in toy_docs() {
            let v = (0..d.sentences.len()).map(|i| vec![i as f32 * 0.3, 1.0, -0.5, 0.2]).collect();
            f.insert(d.doc_id, v).unwrap();
        }
        f
    };
    let model = ModelConfig {
        external_feature_dim: Some(4),
        ..ModelConfig::tiny()
    };
    let mut p = init_params(&model, 12, 2, 7).unwrap();
    randomize(&mut p, 8, 0.3);
    let docs = toy_docs();
    let batch: Vec<&EncodedDoc> = docs.iter().collect();
    let (l1, g) = pretrained_step(&model, &p, &batch, &feats, None).unwrap();
    assert!(g.get("embedding").is_none());
    assert_eq!(l1, pretrained_step(&model, &p, &batch, &feats, None).unwrap().0);

    let mut other = ExternalFeatures::new(4);
    for d in toy_docs() {
        other.insert(d.doc_id, vec![vec![0.1, 0.2, 0.3, 0.4]; d.sentences.len()]).unwrap();
    }
    assert_ne!(l1, pretrained_step(&model, &p, &batch, &other, None).unwrap().0);

    let mut partial = ExternalFeatures::new(4);
    partial.insert("a", vec![vec![0.0; 4]; 3]).unwrap();
    let err = pretrained_step(&model, &p, &batch, &partial, None).unwrap_err();
    assert!(matches!(err, Error::MissingFeature { ref doc_id, index: 0 } if doc_id == "b"));
}

#[test]
fn meta_over_tag_model_gradient_check() {
    let model = tiny(true);
    let mut p = init_params(&model, 12, 2, 9).unwrap().cast::<f64>();
    randomize(&mut p, 10, 0.5);
    let docs = toy_docs();
    let tasks: [(Vec<&EncodedDoc>, Vec<usize>); 2] =
        [(vec![&docs[0], &docs[1]], vec![0, 2]), (vec![&docs[2]], vec![1])];
    let objective = |q: &ParameterStore<f64>, t: usize| tag_step(&model, q, &tasks[t].0, &tasks[t].1, None);
    let opts = MetaOptions {
        second_order: true,
        ..MetaOptions::new(0.4, 0.05)
    };
    let out = meta_step(objective, &p, 0, &[1], &opts).unwrap();
    let numeric = finite_difference(&p, 1e-4, |q| Ok(meta_step(objective, q, 0, &[1], &opts)?.loss)).unwrap();
    let report = compare(&out.grads, &numeric, F64_FLOOR);
    assert!(report.max_rel_error() <= 1e-4, "{:?}", report.worst());
}

#[test]
fn meta_gamma_one_is_tag_step() {
    let model = tiny(true);
    let p = init_params(&model, 12, 2, 11).unwrap();
    let docs = toy_docs();
    let batch: Vec<&EncodedDoc> = docs.iter().collect();
    let tags = [0, 0, 1];
    let objective = |q: &ParameterStore<f32>, _t: usize| tag_step(&model, q, &batch, &tags, None);
    let out = meta_step(objective, &p, 0, &[1], &MetaOptions::new(1.0, 0.1)).unwrap();
    let (_, g) = tag_step(&model, &p, &batch, &tags, None).unwrap();
    assert_eq!(out.grads, g);
}
