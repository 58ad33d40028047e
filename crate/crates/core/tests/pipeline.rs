use domainsum::corpus::{Corpus, Partition, Split, Vocabulary, VocabularyOptions};
use domainsum::eval::*;
use domainsum::labeling::{ext_oracle_eval, greedy_oracle, lead_eval, score_selection, OracleMetric};
use domainsum::metrics::RougeTriple;
use domainsum::nnet::{init_params, ModelConfig, OptimizerKind};
use domainsum::strategies::*;

fn labeled(spec: &SynthSpec, seed: u64) -> Corpus {
    let text = make_synthetic_corpus(spec, seed).unwrap();
    let mut corpus = Corpus::parse(&text, &spec.partition()).unwrap();
    for d in &mut corpus.documents {
        d.labels = Some(greedy_oracle(d, 3, OracleMetric::Rouge12).labels);
    }
    corpus
}

fn quick(strategy: Strategy, seed: u64, epochs: usize) -> ExperimentConfig {
    let mut exp = ExperimentConfig::default();
    exp.model = ModelConfig::tiny();
    exp.train.strategy = strategy;
    exp.train.epochs = epochs;
    exp.train.optimizer = OptimizerKind::Adam;
    exp.train.learning_rate = 0.01;
    exp.train.seed = seed;
    exp
}

fn two_domain_spec(n: usize) -> SynthSpec {
    let mut spec = SynthSpec::demo().with_docs(n);
    spec.domains.truncate(2);
    spec.heldout.clear();
    spec
}

#[test]
fn training_is_deterministic() {
    let corpus = labeled(&two_domain_spec(60), 1);
    let exp = quick(Strategy::Meta, 3, 2);
    let (m1, r1) = train(&corpus, &exp, None).unwrap();
    let (m2, r2) = train(&corpus, &exp, None).unwrap();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    assert_eq!(m1.to_bytes(), m2.to_bytes());
}

#[test]
fn single_gamma_sweep_reproduces_tag_training() {
    let corpus = labeled(&SynthSpec::demo().with_docs(60), 2);
    let mut meta = quick(Strategy::Meta, 5, 2);
    meta.train.gamma = 1.0;
    let (m, _) = train(&corpus, &meta, None).unwrap();
    let (t, _) = train(&corpus, &quick(Strategy::Tag, 5, 2), None).unwrap();
    assert_eq!(m.params, t.params);

    let opts = EvalOptions::default();
    let rows = gamma_sweep(&corpus, &quick(Strategy::Tag, 5, 2), &[1.0], &opts, None).unwrap();
    let tag = evaluate_settings(&t, &corpus, &opts, None, None).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].in_domain, tag.in_mean());
    assert_eq!(rows[0].out_of_domain, tag.out_mean());
    assert!(gamma_sweep(&corpus, &meta, &[], &opts, None).is_err());
}

#[test]
fn unknown_tag_changes_source_scores() {
    let corpus = labeled(&SynthSpec::demo().with_docs(100), 3);
    let (model, _) = train(&corpus, &quick(Strategy::Tag, 1, 3), None).unwrap();
    let doc = corpus.docs(corpus.source_domains[0], Split::Test).next().unwrap();
    let own = model.tag_for(&corpus.domains.get(doc.domain).unwrap().name, true);
    assert_ne!(own, Some(model.unknown_tag()));
    assert_ne!(model.score(doc, own, None).unwrap(), model.score(doc, Some(model.unknown_tag()), None).unwrap());
    let held = &corpus.domains.get(corpus.heldout_domains[0]).unwrap().name;
    assert_eq!(model.tag_for(held, true), Some(model.unknown_tag()));
    let report = evaluate_settings(&model, &corpus, &EvalOptions::default(), None, None).unwrap();
    for d in &report.out_of_domain.unwrap().domains {
        assert_eq!(d.tag, Some(model.unknown_tag()));
    }
}

#[test]
fn evaluation_ignores_document_order() {
    let spec = SynthSpec::demo().with_docs(40);
    let corpus = labeled(&spec, 4);
    let (model, _) = train(&corpus, &quick(Strategy::Joint, 2, 1), None).unwrap();
    let mut lines: Vec<String> = corpus.serialize().lines().map(str::to_string).collect();
    lines.reverse();
    let shuffled = Corpus::parse(&lines.join("\n"), &spec.partition()).unwrap();
    let opts = EvalOptions::default();
    let a = evaluate_settings(&model, &corpus, &opts, None, None).unwrap();
    let b = evaluate_settings(&model, &shuffled, &opts, None, None).unwrap();
    let by_name = |r: &EvalReport| {
        let mut v: Vec<(String, RougeTriple)> =
            r.in_domain.domains.iter().map(|d| (d.domain.clone(), d.rouge)).collect();
        v.sort_by(|x, y| x.0.cmp(&y.0));
        v
    };
    assert_eq!(by_name(&a), by_name(&b));
    assert_eq!(a.out_of_domain, b.out_of_domain);
    let parallel = EvalOptions { workers: 3, ..opts };
    assert_eq!(a, evaluate_settings(&model, &corpus, &parallel, None, None).unwrap());
}

#[test]
fn untrained_scorer_reduces_to_lead() {
    let corpus = labeled(&SynthSpec::demo().with_docs(30), 5);
    let config = ModelConfig::tiny();
    let vocab = Vocabulary::build(&corpus, VocabularyOptions::desk()).unwrap();
    let model = TrainedModel {
        params: init_params(&config, vocab.len(), corpus.domains.num_domains(), 1).unwrap(),
        model: config,
        vocab,
        strategy: Strategy::Joint,
        domains: corpus.domains.names(),
        train_domains: corpus.domains.names(),
        corpus_hash: corpus.content_hash(),
    };
    for &d in &corpus.source_domains {
        let score = evaluate_domain(&model, &corpus, d, &EvalOptions::default(), None).unwrap();
        let lead: Vec<RougeTriple> = corpus.docs(d, Split::Test).map(|doc| lead_eval(doc, 2)).collect();
        let lead = RougeTriple::average(&lead);
        assert!((score.rouge.r1 - lead.r1).abs() < 1e-12);
        assert!((score.rouge.rl - lead.rl).abs() < 1e-12);
    }
}

#[test]
fn oracle_selection_scores_ext_oracle() {
    let corpus = labeled(&SynthSpec::demo().with_docs(20), 6);
    for doc in &corpus.documents {
        let sel = greedy_oracle(doc, 3, OracleMetric::Rouge12).selected();
        assert_eq!(score_selection(doc, &sel), ext_oracle_eval(doc, 3, OracleMetric::Rouge12));
    }
}

#[test]
fn checkpoint_round_trip_keeps_scores() {
    let corpus = labeled(&SynthSpec::demo().with_docs(40), 7);
    let (model, _) = train(&corpus, &quick(Strategy::Tag, 3, 1), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = TrainedModel::load(&path).unwrap();
    assert_eq!(back, model);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 40;
    bytes[last] ^= 1;
    assert!(TrainedModel::from_bytes(&bytes).is_err());
}

#[test]
fn pretrained_strategy_runs_on_features() {
    let corpus = labeled(&SynthSpec::demo().with_docs(40), 8);
    let feats = bag_of_words_features(&corpus, 12, 1).unwrap();
    let exp = quick(Strategy::Pretrained, 1, 2);
    assert!(train(&corpus, &exp, None).is_err());
    let (model, report) = train(&corpus, &exp, Some(&feats)).unwrap();
    assert_eq!(model.model.external_feature_dim, Some(12));
    assert!(model.params.get("embedding").is_none());
    assert!(report.epochs.iter().all(|e| e.train_loss.values().all(|l| l.is_finite())));
    let r = evaluate_settings(&model, &corpus, &EvalOptions::default(), Some(&feats), None).unwrap();
    assert!(r.delta_r.is_some());
    assert!(evaluate_settings(&model, &corpus, &EvalOptions::default(), None, None).is_err());
}

#[test]
fn unlabeled_corpus_is_refused() {
    let spec = SynthSpec::demo().with_docs(10);
    let corpus = Corpus::parse(&make_synthetic_corpus(&spec, 1).unwrap(), &spec.partition()).unwrap();
    let err = train(&corpus, &quick(Strategy::Joint, 1, 1), None).unwrap_err();
    assert!(err.to_string().contains("`label`"), "{err}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn first_and_last_domains_are_diagonal_dominant() {
    let mut spec = SynthSpec::demo().with_docs(300);
    spec.domains.remove(1);
    spec.domains[0].bias = PositionBias::First;
    spec.domains[1].bias = PositionBias::Last;
    spec.heldout.clear();
    let mut v = vec![vec![Vec::new(); 2]; 2];
    for seed in 0..5 {
        let corpus = labeled(&spec, seed);
        let models: Vec<TrainedModel> = train_matrix_models(&corpus, &quick(Strategy::Joint, seed, 3))
            .unwrap()
            .into_iter()
            .map(|m| m.0)
            .collect();
        let m = cross_domain_matrix(&models, &corpus, &EvalOptions { k: 1, ..EvalOptions::default() }).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                v[i][j].push(m.v[i][j]);
            }
        }
    }
    assert!(median(v[0][1].clone()) < 0.0);
    assert!(median(v[1][0].clone()) < 0.0);
}

#[test]
fn partition_conflicts_are_errors() {
    let spec = SynthSpec::demo().with_docs(5);
    let text = make_synthetic_corpus(&spec, 1).unwrap();
    assert!(Corpus::parse(&text, &Partition::new(["first"], ["first"])).is_err());
    assert!(Corpus::parse(&text, &Partition::new(["nope"], Vec::<&str>::new())).is_err());
}
