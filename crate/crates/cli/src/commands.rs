use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use domainsum::corpus::{stats, write_stats_csv, Corpus, Partition, StatsOptions};
use domainsum::eval::{
    bag_of_words_features, cross_domain_matrix, domain_classifier, evaluate_settings, gamma_sweep,
    make_synthetic_corpus, model_position_histogram, train_matrix_models, write_eval_csv, write_sweep_csv,
    ClassifierOptions, EvalOptions, SynthSpec, TagPolicy,
};
use domainsum::labeling::{greedy_oracle, OracleMetric};
use domainsum::nnet::ExternalFeatures;
use domainsum::strategies::{train, ExperimentConfig, Strategy, TrainedModel};

#[derive(Debug, Parser)]
#[command(name = "domainsum", version, about = "Multi-domain extractive summarization lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file and write it in canonical form
    Ingest(IngestArgs),
    /// Per-domain corpus measures with Lead and Ext-Oracle ROUGE
    Stats(StatsArgs),
    /// Add greedy-oracle sentence labels to a corpus
    Label(LabelArgs),
    /// Train a scorer with one of the learning strategies
    Train(TrainArgs),
    /// Score a trained model in-domain, out-of-domain and cross-dataset
    Eval(EvalArgs),
    /// Cross-domain matrix of single-domain models
    Matrix(MatrixArgs),
    /// Train and evaluate meta models over a list of gamma values
    #[command(name = "sweep-gamma")]
    SweepGamma(SweepArgs),
    /// Generate a synthetic multi-domain corpus
    Synth(SynthArgs),
    /// Domain classifier probe and position histograms
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct Input {
    /// Corpus file, one JSON record per line
    #[arg(long)]
    corpus: PathBuf,
    /// Partition file (`source = ...`, `heldout = ...`); defaults to
    /// partition.txt next to the corpus, else every domain is a source
    #[arg(long)]
    partition: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Experiment {
    /// Experiment config file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override `key=value`, applied after --config; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random seed
    #[arg(long)]
    seed: u64,
}

#[derive(Debug, Args)]
pub struct Scoring {
    /// Sentences selected per document
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Evaluation worker threads
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Maximum sentences the greedy oracle selects
    #[arg(long, default_value_t = 3)]
    max_select: usize,
    /// Score the greedy oracle maximizes
    #[arg(long, default_value = "rouge-12")]
    metric: String,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    /// Lead baseline size
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    oracle: OracleArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    experiment: Experiment,
    /// Learning strategy: joint, pretrained, tag or meta
    #[arg(long)]
    strategy: Option<String>,
    /// Meta loss weight of the main domain
    #[arg(long)]
    gamma: Option<f64>,
    /// Probability of replacing a domain tag by the unknown tag
    #[arg(long)]
    relabel_prob: Option<f64>,
    /// Meta inner step size (defaults to the learning rate)
    #[arg(long)]
    inner_step: Option<f64>,
    /// Exact meta gradient through a finite-difference Hessian-vector product
    #[arg(long)]
    second_order: bool,
    /// Sentence feature file for the pretrained strategy
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    /// Checkpoint written by `train`
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    scoring: Scoring,
    /// Second corpus for the cross-dataset setting
    #[arg(long)]
    cross: Option<PathBuf>,
    /// Sentence feature file for pretrained models
    #[arg(long)]
    features: Option<PathBuf>,
    /// Position histogram bins
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    experiment: Experiment,
    #[command(flatten)]
    scoring: Scoring,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    #[command(flatten)]
    experiment: Experiment,
    #[command(flatten)]
    scoring: Scoring,
    /// Comma-separated gamma values
    #[arg(long, default_value = "0,0.25,0.5,0.75,1")]
    gamma: String,
    /// Second corpus for the cross-dataset setting
    #[arg(long)]
    cross: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    output: Output,
    /// `demo` or a JSON spec file
    #[arg(long, default_value = "demo")]
    spec: String,
    /// Random seed
    #[arg(long)]
    seed: u64,
    /// Override the number of documents per domain
    #[arg(long)]
    docs: Option<usize>,
    /// Also write bag-of-words sentence features of this dimension
    #[arg(long)]
    features_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    input: Input,
    #[command(flatten)]
    output: Output,
    /// Random seed
    #[arg(long)]
    seed: u64,
    /// Checkpoint for position histograms
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    scoring: Scoring,
    /// Position histogram bins
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Sentence feature file for pretrained models
    #[arg(long)]
    features: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Stats(a) => stats_cmd(a),
        Command::Label(a) => label(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Matrix(a) => matrix(a),
        Command::SweepGamma(a) => sweep(a),
        Command::Synth(a) => synth(a),
        Command::Report(a) => report(a),
    }
}

impl Input {
    fn partition(&self) -> Result<Partition> {
        let sibling = self.corpus.with_file_name("partition.txt");
        match &self.partition {
            Some(p) => Ok(Partition::load(p)?),
            None if sibling.is_file() => Ok(Partition::load(&sibling)?),
            None => Ok(Partition::default()),
        }
    }

    fn load(&self) -> Result<Corpus> {
        Ok(Corpus::ingest(&self.corpus, &self.partition()?)?)
    }

    fn paths(&self) -> Vec<&Path> {
        let mut v = vec![self.corpus.as_path()];
        v.extend(self.partition.as_deref());
        v
    }
}

/// Output directory writer that refuses to overwrite any input file.
struct Sink<'a> {
    dir: &'a Path,
    inputs: Vec<PathBuf>,
}

impl<'a> Sink<'a> {
    fn new(out: &'a Output, inputs: &[&Path]) -> Result<Self> {
        let inputs = inputs.iter().filter_map(|p| p.canonicalize().ok()).collect();
        Ok(Self { dir: &out.out, inputs })
    }

    /// Target path for `name`; creates its parent directories.
    fn path(&self, name: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Ok(c) = path.canonicalize() {
            if self.inputs.contains(&c) {
                bail!("refusing to overwrite input file {}", path.display());
            }
        }
        let parent = path.parent().unwrap_or(self.dir);
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        Ok(path)
    }

    fn text(&self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name)?;
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    fn json(&self, name: &str, value: &Value) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.text(name, &s)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn oracle_metric(args: &OracleArgs) -> Result<OracleMetric> {
    if args.max_select == 0 {
        bail!("--max-select must be at least 1");
    }
    Ok(args.metric.parse()?)
}

fn load_features(path: Option<&Path>) -> Result<Option<ExternalFeatures>> {
    path.map(|p| ExternalFeatures::load(p).map_err(Into::into)).transpose()
}

fn resolve_experiment(e: &Experiment) -> Result<ExperimentConfig> {
    let mut cfg = match &e.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &e.overrides {
        let (k, v) = o
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
        if k.trim() == "model" {
            cfg.model = match v.trim() {
                "tiny" => domainsum::nnet::ModelConfig::tiny(),
                "desk" => domainsum::nnet::ModelConfig::desk(),
                other => bail!("unknown model preset {other:?}"),
            };
        } else {
            cfg.set(k.trim(), v.trim())?;
        }
    }
    cfg.train.seed = e.seed;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    cfg.train.validate()?;
    cfg.model.validate()?;
    Ok(())
}

fn eval_options(s: &Scoring) -> Result<EvalOptions> {
    if s.k == 0 {
        bail!("--k must be at least 1");
    }
    if s.workers == 0 {
        bail!("--workers must be at least 1");
    }
    Ok(EvalOptions {
        k: s.k,
        workers: s.workers,
        ..EvalOptions::default()
    })
}

fn corpus_info(corpus: &Corpus) -> Value {
    json!({
        "hash": corpus.content_hash(),
        "documents": corpus.documents.len(),
        "partition": to_value(&corpus.partition()),
    })
}

fn ingest(a: IngestArgs) -> Result<()> {
    let corpus = a.input.load()?;
    let sink = Sink::new(&a.output, &a.input.paths())?;
    let counts: serde_json::Map<String, Value> = corpus
        .split_counts()
        .into_iter()
        .map(|(id, c)| (corpus.domains.get(id).unwrap().name.clone(), json!({"train": c[0], "valid": c[1], "test": c[2]})))
        .collect();
    sink.text("corpus.jsonl", &corpus.serialize())?;
    sink.text("partition.txt", &corpus.partition().render())?;
    sink.json(
        "ingest.json",
        &json!({
            "command": "ingest",
            "corpus": corpus_info(&corpus),
            "domains": corpus.domains.num_domains(),
            "labeled": corpus.is_labeled(),
            "counts": counts,
        }),
    )
}

fn stats_cmd(a: StatsArgs) -> Result<()> {
    if a.k == 0 {
        bail!("--k must be at least 1");
    }
    let opts = StatsOptions {
        lead_k: a.k,
        oracle_max_select: a.oracle.max_select,
        oracle_metric: oracle_metric(&a.oracle)?,
    };
    let corpus = a.input.load()?;
    let sink = Sink::new(&a.output, &a.input.paths())?;
    let table = stats(&corpus, &opts);
    sink.text("stats.csv", &write_stats_csv(&table))?;
    sink.json(
        "stats.json",
        &json!({"command": "stats", "corpus": corpus_info(&corpus), "options": to_value(&opts), "table": to_value(&table)}),
    )
}

fn label(a: LabelArgs) -> Result<()> {
    let metric = oracle_metric(&a.oracle)?;
    let mut corpus = a.input.load()?;
    let sink = Sink::new(&a.output, &a.input.paths())?;
    let mut selected = 0usize;
    for d in &mut corpus.documents {
        let l = greedy_oracle(d, a.oracle.max_select, metric);
        selected += l.selection_order.len();
        d.labels = Some(l.labels);
    }
    sink.text("corpus.jsonl", &corpus.serialize())?;
    sink.text("partition.txt", &corpus.partition().render())?;
    sink.json(
        "label.json",
        &json!({
            "command": "label",
            "corpus": corpus_info(&corpus),
            "max_select": a.oracle.max_select,
            "metric": metric.as_str(),
            "mean_selected": selected as f64 / corpus.documents.len().max(1) as f64,
        }),
    )
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve_experiment(&a.experiment)?;
    if let Some(s) = &a.strategy {
        cfg.train.strategy = s.parse()?;
    }
    if let Some(g) = a.gamma {
        cfg.train.gamma = g;
    }
    if let Some(p) = a.relabel_prob {
        cfg.train.relabel_prob = p;
    }
    if let Some(s) = a.inner_step {
        cfg.train.inner_step_size = Some(s);
    }
    if a.second_order {
        cfg.train.meta_second_order = true;
    }
    validate(&cfg)?;
    if cfg.train.strategy == Strategy::Pretrained && a.features.is_none() {
        bail!("strategy pretrained needs --features");
    }
    let corpus = a.input.load()?;
    let features = load_features(a.features.as_deref())?;
    let mut inputs = a.input.paths();
    inputs.extend(a.features.as_deref());
    let sink = Sink::new(&a.output, &inputs)?;
    let (model, mut report) = train(&corpus, &cfg, features.as_ref())?;
    model.save(&sink.path("model.ckpt")?)?;
    report.checkpoint = Some("model.ckpt".into());
    sink.text("config.txt", &cfg.render())?;
    sink.json(
        "train.json",
        &json!({"command": "train", "corpus": corpus_info(&corpus), "report": to_value(&report)}),
    )
}

fn histograms(
    sink: &Sink,
    model: &TrainedModel,
    corpus: &Corpus,
    opts: &EvalOptions,
    bins: usize,
    features: Option<&ExternalFeatures>,
) -> Result<Vec<&'static str>> {
    if bins < 2 {
        bail!("--bins must be at least 2");
    }
    if !corpus.is_labeled() {
        return Ok(Vec::new());
    }
    let mut written = Vec::new();
    let h = model_position_histogram(model, corpus, &corpus.source_domains, opts, bins, features)?;
    sink.text("histogram_source.csv", &h.to_csv())?;
    written.push("histogram_source.csv");
    if !corpus.heldout_domains.is_empty() {
        let unknown = EvalOptions {
            policy: TagPolicy::UnknownTag,
            ..*opts
        };
        let h = model_position_histogram(model, corpus, &corpus.heldout_domains, &unknown, bins, features)?;
        sink.text("histogram_heldout.csv", &h.to_csv())?;
        written.push("histogram_heldout.csv");
    }
    Ok(written)
}

fn eval(a: EvalArgs) -> Result<()> {
    let opts = eval_options(&a.scoring)?;
    if a.bins < 2 {
        bail!("--bins must be at least 2");
    }
    let corpus = a.input.load()?;
    let model = TrainedModel::load(&a.model)?;
    let cross = a
        .cross
        .as_deref()
        .map(|p| Corpus::ingest(p, &Partition::default()))
        .transpose()?;
    let features = load_features(a.features.as_deref())?;
    let mut inputs = a.input.paths();
    inputs.push(&a.model);
    inputs.extend(a.cross.as_deref());
    inputs.extend(a.features.as_deref());
    let sink = Sink::new(&a.output, &inputs)?;
    let report = evaluate_settings(&model, &corpus, &opts, features.as_ref(), cross.as_ref())?;
    let hist = histograms(&sink, &model, &corpus, &opts, a.bins, features.as_ref())?;
    sink.text("eval.csv", &write_eval_csv(&report))?;
    sink.json(
        "eval.json",
        &json!({
            "command": "eval",
            "corpus": corpus_info(&corpus),
            "cross_corpus": cross.as_ref().map(corpus_info),
            "model": {"strategy": model.strategy.to_string(), "train_domains": model.train_domains, "corpus_hash": model.corpus_hash},
            "k": opts.k,
            "bins": a.bins,
            "histograms": hist,
            "in_domain_mean": report.in_mean(),
            "out_of_domain_mean": report.out_mean(),
            "cross_dataset_mean": report.cross_mean(),
            "report": to_value(&report),
        }),
    )
}

fn matrix(a: MatrixArgs) -> Result<()> {
    let cfg = resolve_experiment(&a.experiment)?;
    validate(&cfg)?;
    let opts = eval_options(&a.scoring)?;
    let mut corpus = a.input.load()?;
    corpus.source_domains = corpus.domains.domains().iter().map(|d| d.id).collect();
    corpus.heldout_domains.clear();
    let sink = Sink::new(&a.output, &a.input.paths())?;
    let trained = train_matrix_models(&corpus, &cfg)?;
    let models: Vec<TrainedModel> = trained.iter().map(|(m, _)| m.clone()).collect();
    let m = cross_domain_matrix(&models, &corpus, &opts)?;
    let mut files = Vec::new();
    for (i, model) in models.iter().enumerate() {
        let name = format!("models/{i:02}.ckpt");
        model.save(&sink.path(&name)?)?;
        files.push(json!({"domain": model.train_domains[0], "checkpoint": name}));
    }
    sink.text("matrix.csv", &m.to_csv())?;
    sink.json(
        "matrix.json",
        &json!({
            "command": "matrix",
            "corpus": corpus_info(&corpus),
            "config": to_value(&cfg),
            "k": opts.k,
            "checkpoints": files,
            "off_diagonal_negative": m.off_diagonal_negative(),
            "matrix": to_value(&m),
        }),
    )
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = resolve_experiment(&a.experiment)?;
    validate(&cfg)?;
    let opts = eval_options(&a.scoring)?;
    let gammas = a
        .gamma
        .split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad gamma {s:?}")))
        .collect::<Result<Vec<_>>>()?;
    let corpus = a.input.load()?;
    let cross = a
        .cross
        .as_deref()
        .map(|p| Corpus::ingest(p, &Partition::default()))
        .transpose()?;
    let mut inputs = a.input.paths();
    inputs.extend(a.cross.as_deref());
    let sink = Sink::new(&a.output, &inputs)?;
    let rows = gamma_sweep(&corpus, &cfg, &gammas, &opts, cross.as_ref())?;
    sink.text("sweep.csv", &write_sweep_csv(&rows))?;
    sink.json(
        "sweep.json",
        &json!({
            "command": "sweep-gamma",
            "corpus": corpus_info(&corpus),
            "cross_corpus": cross.as_ref().map(corpus_info),
            "config": to_value(&cfg),
            "k": opts.k,
            "rows": to_value(&rows),
        }),
    )
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = if a.spec == "demo" {
        SynthSpec::demo()
    } else {
        let text = fs::read_to_string(&a.spec).with_context(|| format!("cannot read spec {}", a.spec))?;
        serde_json::from_str(&text).with_context(|| format!("bad synthetic spec {}", a.spec))?
    };
    if let Some(n) = a.docs {
        spec = spec.with_docs(n);
    }
    let text = make_synthetic_corpus(&spec, a.seed)?;
    let partition = spec.partition();
    let corpus = Corpus::parse(&text, &partition)?;
    let features = a
        .features_dim
        .map(|dim| bag_of_words_features(&corpus, dim, a.seed))
        .transpose()?;
    let spec_path = PathBuf::from(&a.spec);
    let sink = Sink::new(&a.output, &[spec_path.as_path()])?;
    sink.text("corpus.jsonl", &text)?;
    sink.text("partition.txt", &partition.render())?;
    if let Some(f) = &features {
        sink.text("features.jsonl", &f.render())?;
    }
    sink.json(
        "synth.json",
        &json!({
            "command": "synth",
            "seed": a.seed,
            "spec": to_value(&spec),
            "features_dim": a.features_dim,
            "corpus": corpus_info(&corpus),
        }),
    )
}

fn report(a: ReportArgs) -> Result<()> {
    let opts = eval_options(&a.scoring)?;
    if a.bins < 2 {
        bail!("--bins must be at least 2");
    }
    let corpus = a.input.load()?;
    let model = a.model.as_deref().map(TrainedModel::load).transpose()?;
    let features = load_features(a.features.as_deref())?;
    let mut inputs = a.input.paths();
    inputs.extend(a.model.as_deref());
    inputs.extend(a.features.as_deref());
    let sink = Sink::new(&a.output, &inputs)?;
    let copts = ClassifierOptions::default();
    let real = domain_classifier(&corpus, a.seed, &copts)?;
    let control = domain_classifier(
        &corpus,
        a.seed,
        &ClassifierOptions {
            permute_labels: true,
            ..copts
        },
    )?;
    let hist = match &model {
        Some(m) => histograms(&sink, m, &corpus, &opts, a.bins, features.as_ref())?,
        None => Vec::new(),
    };
    sink.text(
        "classifier.csv",
        &format!(
            "labels,accuracy,chance,n_train,n_test\ntrue,{:.4},{:.4},{},{}\npermuted,{:.4},{:.4},{},{}\n",
            real.accuracy, real.chance, real.n_train, real.n_test, control.accuracy, control.chance, control.n_train, control.n_test
        ),
    )?;
    sink.json(
        "report.json",
        &json!({
            "command": "report",
            "corpus": corpus_info(&corpus),
            "seed": a.seed,
            "classifier_options": to_value(&copts),
            "classifier": to_value(&real),
            "permuted_control": to_value(&control),
            "k": opts.k,
            "bins": a.bins,
            "histograms": hist,
        }),
    )
}
