//! The `stylemetric` command line. Every command runs in its own thread
//! pool, draws all randomness from `--seed`, and leaves a JSON manifest
//! next to the files it writes.

mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use manifest::{file_digest, manifest_path, InputDigest, RunManifest};

use crate::catalog::{CategoryMap, FeatureMatrix, RelationClass, RelationGraph, UserTripleSet};
use crate::error::{Error, Result};
use crate::eval::{self, LinkRule};
use crate::model::{MetricKind, MetricModel, Normalization};
use crate::recsys::{self, Normalizer};
use crate::sampler::{self, LabeledPairSet, UserSampling, MAX_TRAIN_POSITIVES};
use crate::stylespace::{self, Seeding};
use crate::synth::{self, SynthConfig, SynthMode};
use crate::trainer::{self, Method, Progress, TrainConfig, TrainReport};
use manifest::{digest_inputs, write_atomic};

#[derive(Parser, Debug)]
#[command(name = "stylemetric", version, about = "Learn and use low-rank style metrics over item features")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Master seed for every random choice
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 for one per core
    #[arg(long, global = true, env = "STYLEMETRIC_THREADS")]
    threads: Option<usize>,

    /// Fixed-order parallel reductions (bit-reproducible across thread counts)
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a catalog with a planted metric
    Synth(SynthArgs),
    /// Build a balanced labeled pair set from a graph or user triples
    Sample(SampleArgs),
    /// Split a pair set 80/10/10 into train, validation and test
    Split(SplitArgs),
    /// Fit a metric model
    Train(TrainArgs),
    /// Fit per-user weights on top of a global low-rank model
    TrainPersonalized(PersonalizedArgs),
    /// Link-prediction accuracy of a model or the category baseline
    Eval(EvalArgs),
    /// Project every item into style space
    Embed(EmbedArgs),
    /// k-means over style vectors
    Cluster(ClusterArgs),
    /// Cheapest path between two items through style space
    Navigate(NavigateArgs),
    /// Nearest items to a query
    Recommend(RecommendArgs),
    /// Best partner of a query from every other category
    BuildOutfit(OutfitArgs),
    /// Mean pairwise log-likelihood of an outfit
    ScoreOutfit(ScoreArgs),
    /// Coherence change between two outfits
    MakeoverDelta(MakeoverArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Number of items
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Feature dimension
    #[arg(long, default_value_t = 32)]
    f: usize,
    /// Planted rank
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 20000)]
    edges: usize,
    /// Fraction of edges replaced by unrelated pairs
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = SynthMode::CrossFeature)]
    mode: SynthMode,
    /// Planted threshold; by default the one yielding exactly `--edges` pairs
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 50)]
    users: usize,
    #[arg(long, default_value_t = 30)]
    items_per_user: usize,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    features: PathBuf,
    /// Edge file
    #[arg(long, required_unless_present = "triples", conflicts_with = "triples")]
    graph: Option<PathBuf>,
    /// User co-purchase triples
    #[arg(long)]
    triples: Option<PathBuf>,
    /// Relation classes to keep, comma separated (all by default)
    #[arg(long, value_delimiter = ',')]
    classes: Vec<RelationClass>,
    #[arg(long, default_value_t = 20)]
    min_items: usize,
    #[arg(long, default_value_t = 50)]
    pairs_per_user: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Maximum training positives
    #[arg(long, default_value_t = MAX_TRAIN_POSITIVES)]
    train_cap: usize,
    /// Output directory for train.tsv, validation.tsv and test.tsv
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainOptions {
    /// `key = value` config file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Style dimension K
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    rank: Option<u32>,
    #[arg(long)]
    kind: Option<MetricKind>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    optimizer: Option<Method>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    normalization: Option<Normalization>,
    #[arg(long)]
    regularization: Option<f64>,
    #[arg(long)]
    init_scale: Option<f64>,
    #[arg(long)]
    initial_threshold: Option<f64>,
    #[arg(long)]
    freeze_user_weights: bool,
    /// Per-iteration log (`-` for stderr)
    #[arg(long)]
    progress: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    /// Training pairs
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOptions,
}

#[derive(Args, Debug)]
struct PersonalizedArgs {
    #[arg(long)]
    features: PathBuf,
    /// Training pairs with user ids
    #[arg(long)]
    pairs: PathBuf,
    /// Global low-rank model to start from
    #[arg(long)]
    warm_start: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    opts: TrainOptions,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Tsv,
    Text,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, required_unless_present = "ct")]
    model: Option<PathBuf>,
    #[arg(long)]
    features: PathBuf,
    /// Pairs to score
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Tsv)]
    format: Format,
    /// Score the category baseline instead of a model
    #[arg(long, conflicts_with = "model", requires_all = ["categories", "train_pairs"])]
    ct: bool,
    /// Item to category map
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Pairs the category baseline learns from
    #[arg(long)]
    train_pairs: Option<PathBuf>,
    #[arg(long, default_value = "category_count")]
    ct_rule: LinkRule,
    /// Output file (stdout by default)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SeedingArg {
    PlusPlus,
    Random,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, value_enum, default_value_t = SeedingArg::PlusPlus)]
    seeding: SeedingArg,
    /// Items listed per cluster, nearest the centroid first
    #[arg(long, default_value_t = 0)]
    representatives: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NavigateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    source: String,
    #[arg(long)]
    target: String,
    /// Neighbors per item in the navigation graph
    #[arg(long, default_value_t = 10)]
    knn: usize,
    /// Restrict the path to the item ids listed in this file
    #[arg(long)]
    category_file: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    query: String,
    /// Candidate item ids, one per line (every item by default)
    #[arg(long)]
    category_file: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OutfitArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    query: String,
    /// Item to category map
    #[arg(long)]
    categories: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Comma separated item ids
    #[arg(long, value_delimiter = ',', required = true)]
    items: Vec<String>,
    /// Divide by the item count instead of the pair count
    #[arg(long)]
    per_component: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MakeoverArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    before: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    after: Vec<String>,
    #[arg(long)]
    per_component: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// What a command read and wrote, for the manifest.
struct Record {
    seed: u64,
    config: Vec<(String, String)>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Where the manifest goes; `None` when everything went to stdout.
    manifest_at: Option<PathBuf>,
}

impl Record {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            config: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            manifest_at: None,
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    fn input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
        if self.manifest_at.is_none() {
            self.manifest_at = Some(manifest_path(path));
        }
    }

    /// Writes `bytes` to `out`, or to stdout when there is no file.
    fn emit(&mut self, out: Option<&Path>, bytes: &[u8]) -> Result<()> {
        match out {
            Some(path) => {
                write_atomic(path, bytes)?;
                self.output(path);
                Ok(())
            }
            None => std::io::stdout()
                .write_all(bytes)
                .map_err(|e| Error::io("<stdout>", e)),
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on a usage error, 2 on a data error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let started = Instant::now();
    let subcommand = subcommand_name(&cli.command);
    let threads = cli.global.threads.unwrap_or(0);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return 2;
        }
    };
    let result = pool.install(|| dispatch(&cli));
    let record = match result {
        Ok(record) => record,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            return 1;
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let Some(at) = record.manifest_at.clone() else {
        return 0;
    };
    let manifest = digest_inputs(&record.inputs).map(|inputs| RunManifest {
        subcommand: subcommand.to_string(),
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        config: record.config.into_iter().collect(),
        inputs,
        seed: record.seed,
        outputs: record.outputs.iter().map(|p| p.display().to_string()).collect(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    });
    match manifest.and_then(|m| m.save(&at)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn subcommand_name(command: &Command) -> &'static str {
    match command {
        Command::Synth(_) => "synth",
        Command::Sample(_) => "sample",
        Command::Split(_) => "split",
        Command::Train(_) => "train",
        Command::TrainPersonalized(_) => "train-personalized",
        Command::Eval(_) => "eval",
        Command::Embed(_) => "embed",
        Command::Cluster(_) => "cluster",
        Command::Navigate(_) => "navigate",
        Command::Recommend(_) => "recommend",
        Command::BuildOutfit(_) => "build-outfit",
        Command::ScoreOutfit(_) => "score-outfit",
        Command::MakeoverDelta(_) => "makeover-delta",
    }
}

fn dispatch(cli: &Cli) -> Outcome<Record> {
    let g = &cli.global;
    let mut rec = Record::new(g.seed.unwrap_or(0));
    rec.set("threads", g.threads.unwrap_or(0));
    match &cli.command {
        Command::Synth(a) => synth(a, &mut rec)?,
        Command::Sample(a) => sample(a, &mut rec)?,
        Command::Split(a) => split(a, &mut rec)?,
        Command::Train(a) => train(a, g, &mut rec)?,
        Command::TrainPersonalized(a) => train_personalized(a, g, &mut rec)?,
        Command::Eval(a) => evaluate(a, &mut rec)?,
        Command::Embed(a) => embed(a, &mut rec)?,
        Command::Cluster(a) => cluster(a, &mut rec)?,
        Command::Navigate(a) => navigate(a, &mut rec)?,
        Command::Recommend(a) => recommend(a, &mut rec)?,
        Command::BuildOutfit(a) => build_outfit(a, &mut rec)?,
        Command::ScoreOutfit(a) => score_outfit(a, &mut rec)?,
        Command::MakeoverDelta(a) => makeover(a, &mut rec)?,
    }
    Ok(rec)
}

fn load_features(path: &Path, rec: &mut Record) -> Result<FeatureMatrix> {
    FeatureMatrix::load(rec.input(path))
}

fn load_model(path: &Path, rec: &mut Record) -> Result<MetricModel> {
    MetricModel::load(rec.input(path))
}

fn load_pairs(path: &Path, features: &FeatureMatrix, rec: &mut Record) -> Result<LabeledPairSet> {
    LabeledPairSet::load(rec.input(path), features)
}

/// Non-empty, non-comment lines of `path`, trimmed.
fn read_ids(path: &Path, rec: &mut Record) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(rec.input(path)).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn render(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory cannot fail");
    buf
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(a: &SynthArgs, rec: &mut Record) -> Outcome {
    let config = SynthConfig {
        n_items: a.n,
        dim: a.f,
        rank: a.k,
        edges: a.edges,
        noise: a.noise,
        mode: a.mode,
        seed: rec.seed,
        threshold: a.threshold,
        users: a.users,
        items_per_user: a.items_per_user,
    };
    for (k, v) in [
        ("n", a.n.to_string()),
        ("f", a.f.to_string()),
        ("k", a.k.to_string()),
        ("edges", a.edges.to_string()),
        ("noise", a.noise.to_string()),
        ("mode", a.mode.to_string()),
        ("users", a.users.to_string()),
        ("items_per_user", a.items_per_user.to_string()),
    ] {
        rec.set(k, v);
    }
    if let Some(c) = a.threshold {
        rec.set("threshold", c);
    }
    let data = synth::generate(&config)?;
    if let Some(requested) = data.adjusted_from {
        eprintln!(
            "threshold {requested} yields too few pairs; using {}",
            data.ground_truth.threshold()
        );
    }
    eprintln!("{} edges, {} replaced by noise", data.graph.len(), data.flipped);
    let written = data.save(&a.out)?;
    rec.outputs.extend(written);
    rec.manifest_at = Some(a.out.join("manifest.json"));
    Ok(())
}

fn sample(a: &SampleArgs, rec: &mut Record) -> Outcome {
    let features = load_features(&a.features, rec)?;
    let set = match (&a.graph, &a.triples) {
        (Some(graph), _) => {
            let graph = RelationGraph::load(rec.input(graph), &a.classes, Some(&features))?;
            let classes: Vec<&str> = a.classes.iter().map(|c| c.as_str()).collect();
            rec.set("classes", if classes.is_empty() { "all".to_string() } else { classes.join(",") });
            let negatives = sampler::sample_negatives(&graph, features.len(), rec.seed)?;
            LabeledPairSet::from_pairs(&graph.pairs(), &negatives)?
        }
        (None, Some(triples)) => {
            let triples = UserTripleSet::load(rec.input(triples), &features)?;
            rec.set("min_items", a.min_items);
            rec.set("pairs_per_user", a.pairs_per_user);
            let params = UserSampling {
                min_items: a.min_items,
                pairs_per_user: a.pairs_per_user,
            };
            sampler::build_user_dataset(&triples, features.len(), rec.seed, params)?
        }
        (None, None) => return Err(Failure::Usage("one of --graph or --triples is required".into())),
    };
    let bytes = render(|w| set.write(w, &features));
    rec.emit(Some(&a.out), &bytes)?;
    Ok(())
}

fn split(a: &SplitArgs, rec: &mut Record) -> Outcome {
    let features = load_features(&a.features, rec)?;
    let set = load_pairs(&a.pairs, &features, rec)?;
    rec.set("train_cap", a.train_cap);
    let parts = sampler::split_with_cap(&set, rec.seed, a.train_cap)?;
    create_dir(&a.out)?;
    for (name, part) in [("train", &parts.train), ("validation", &parts.validation), ("test", &parts.test)] {
        let path = a.out.join(format!("{name}.tsv"));
        write_atomic(&path, &render(|w| part.write(w, &features)))?;
        rec.outputs.push(path);
    }
    rec.manifest_at = Some(a.out.join("manifest.json"));
    Ok(())
}

fn train_config(opts: &TrainOptions, g: &Global, rec: &mut Record) -> Outcome<TrainConfig> {
    let mut config = match &opts.config {
        Some(path) => TrainConfig::load(rec.input(path))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = opts.rank {
        config.rank = v as usize;
    }
    if let Some(v) = opts.kind {
        config.kind = v;
    }
    if let Some(v) = opts.max_iter {
        config.max_iterations = v;
    }
    if let Some(v) = opts.tolerance {
        config.tolerance = v;
    }
    if let Some(v) = opts.optimizer {
        config.optimizer = v;
    }
    if let Some(v) = opts.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = opts.normalization {
        config.normalization = v;
    }
    if let Some(v) = opts.regularization {
        config.regularization = v;
    }
    if opts.init_scale.is_some() {
        config.init_scale = opts.init_scale;
    }
    if opts.initial_threshold.is_some() {
        config.initial_threshold = opts.initial_threshold;
    }
    if opts.freeze_user_weights {
        config.freeze_user_weights = true;
    }
    if let Some(v) = g.seed {
        config.seed = v;
    }
    if let Some(v) = g.threads {
        config.threads = v;
    }
    if let Some(v) = g.deterministic {
        config.deterministic = v;
    }
    config.validate()?;
    rec.seed = config.seed;
    rec.config.clear();
    for line in config.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            rec.set(k, v);
        }
    }
    rec.set("config_digest", config.digest());
    Ok(config)
}

/// Runs `fit` with a progress sink opened from `--progress`.
fn with_progress(
    progress: Option<&Path>,
    rec: &mut Record,
    fit: impl FnOnce(&mut (dyn FnMut(&Progress) + Send)) -> Result<(MetricModel, TrainReport)>,
) -> Outcome<(MetricModel, TrainReport)> {
    let mut sink: Box<dyn Write + Send> = match progress {
        None => Box::new(std::io::sink()),
        Some(p) if p.as_os_str() == "-" => Box::new(std::io::stderr()),
        Some(p) => {
            let file = std::fs::File::create(p).map_err(|e| Error::io(p, e))?;
            rec.outputs.push(p.to_path_buf());
            Box::new(std::io::BufWriter::new(file))
        }
    };
    let _ = writeln!(sink, "iteration\tlog_likelihood\ttrain_accuracy");
    let fitted = fit(&mut |p: &Progress| {
        let _ = writeln!(sink, "{p}");
    })?;
    if let (Err(e), Some(p)) = (sink.flush(), progress) {
        return Err(Error::io(p, e).into());
    }
    Ok(fitted)
}

fn finish_training(model: &MetricModel, report: &TrainReport, out: &Path, rec: &mut Record) -> Result<()> {
    eprintln!(
        "{} after {} iterations: log-likelihood {:.6}, train accuracy {:.4}",
        report.termination,
        report.iterations,
        report.trace.last().copied().unwrap_or(f64::NAN),
        report.train_accuracy
    );
    write_atomic(out, &model.to_bytes())?;
    rec.output(out);
    rec.manifest_at = Some(manifest_path(out));
    Ok(())
}

fn train(a: &TrainArgs, g: &Global, rec: &mut Record) -> Outcome {
    let config = train_config(&a.opts, g, rec)?;
    let features = load_features(&a.features, rec)?;
    let pairs = load_pairs(&a.pairs, &features, rec)?;
    let (model, report) = with_progress(a.opts.progress.as_deref(), rec, |p| {
        trainer::train_with_progress(&config, &features, &pairs, p)
    })?;
    finish_training(&model, &report, &a.out, rec)?;
    Ok(())
}

fn train_personalized(a: &PersonalizedArgs, g: &Global, rec: &mut Record) -> Outcome {
    let config = train_config(&a.opts, g, rec)?;
    let features = load_features(&a.features, rec)?;
    let pairs = load_pairs(&a.pairs, &features, rec)?;
    let warm = load_model(&a.warm_start, rec)?;
    let (model, report) = with_progress(a.opts.progress.as_deref(), rec, |p| {
        trainer::train_personalized(&config, &features, &pairs, &warm, p)
    })?;
    finish_training(&model, &report, &a.out, rec)?;
    Ok(())
}

fn evaluate(a: &EvalArgs, rec: &mut Record) -> Outcome {
    let features = load_features(&a.features, rec)?;
    let pairs = load_pairs(&a.pairs, &features, rec)?;
    let report = match (&a.model, a.ct) {
        (Some(model), false) => {
            let model = load_model(model, rec)?;
            eval::evaluate(&model, &features, &pairs)?
        }
        (None, true) => {
            let (Some(categories), Some(train_pairs)) = (&a.categories, &a.train_pairs) else {
                return Err(Failure::Usage("--ct needs --categories and --train-pairs".into()));
            };
            let categories = CategoryMap::load(rec.input(categories))?;
            let train = load_pairs(train_pairs, &features, rec)?;
            rec.set("ct_rule", format!("{:?}", a.ct_rule));
            eval::fit_ct(&categories, &features, &train, a.ct_rule)?.evaluate(&features, &pairs)?
        }
        _ => return Err(Failure::Usage("give exactly one of --model or --ct".into())),
    };
    let text = match a.format {
        Format::Tsv => format!("{}\n{}\n", eval::EvalReport::TSV_HEADER, report.to_tsv()),
        Format::Text => format!("{report}\n"),
    };
    rec.emit(a.out.as_deref(), text.as_bytes())?;
    Ok(())
}

fn embed(a: &EmbedArgs, rec: &mut Record) -> Outcome {
    let model = load_model(&a.model, rec)?;
    let features = load_features(&a.features, rec)?;
    let emb = stylespace::embed_all(&model, &features)?;
    rec.emit(a.out.as_deref(), &render(|w| emb.write(w)))?;
    Ok(())
}

fn cluster(a: &ClusterArgs, rec: &mut Record) -> Outcome {
    let model = load_model(&a.model, rec)?;
    let features = load_features(&a.features, rec)?;
    let emb = stylespace::embed_all(&model, &features)?;
    let seeding = match a.seeding {
        SeedingArg::PlusPlus => Seeding::PlusPlus,
        SeedingArg::Random => Seeding::Random,
    };
    rec.set("k", a.k);
    rec.set("max_iter", a.max_iter);
    rec.set("seeding", format!("{seeding:?}"));
    let clustering = stylespace::kmeans(&emb, a.k, rec.seed, a.max_iter, seeding)?;
    eprintln!("objective {} after {} iterations", clustering.objective, clustering.iterations);
    let bytes = render(|w| {
        clustering.write(w, &emb)?;
        if a.representatives > 0 {
            writeln!(w, "#representatives {} {}", clustering.k, a.representatives)?;
            for (c, items) in stylespace::representatives(&clustering, &emb, a.representatives).iter().enumerate() {
                for (rank, item) in items.iter().enumerate() {
                    writeln!(w, "{c}\t{rank}\t{item}")?;
                }
            }
        }
        Ok(())
    });
    rec.emit(a.out.as_deref(), &bytes)?;
    Ok(())
}

fn navigate(a: &NavigateArgs, rec: &mut Record) -> Outcome {
    let model = load_model(&a.model, rec)?;
    let features = load_features(&a.features, rec)?;
    let emb = stylespace::embed_all(&model, &features)?;
    rec.set("knn", a.knn);
    let path = match &a.category_file {
        Some(file) => {
            let allowed: std::collections::HashSet<String> = read_ids(file, rec)?.into_iter().collect();
            let filter = |id: &str| allowed.contains(id);
            stylespace::navigate(&emb, &a.source, &a.target, a.knn, Some(&filter))?
        }
        None => stylespace::navigate(&emb, &a.source, &a.target, a.knn, None)?,
    };
    rec.emit(a.out.as_deref(), &render(|w| path.write(w)))?;
    Ok(())
}

fn recommend(a: &RecommendArgs, rec: &mut Record) -> Outcome {
    let model = load_model(&a.model, rec)?;
    let features = load_features(&a.features, rec)?;
    let candidates = match &a.category_file {
        Some(file) => read_ids(file, rec)?,
        None => features.ids().to_vec(),
    };
    rec.set("top", a.top);
    let recs = recsys::recommend(&model, &features, &a.query, &candidates, a.top)?;
    rec.emit(a.out.as_deref(), &render(|w| recsys::write_recommendations(w, &recs)))?;
    Ok(())
}

fn build_outfit(a: &OutfitArgs, rec: &mut Record) -> Outcome {
    let model = load_model(&a.model, rec)?;
    let features = load_features(&a.features, rec)?;
    let map = CategoryMap::load(rec.input(&a.categories))?;
    let own = map.category(&a.query).ok();
    let categories: Vec<(String, Vec<String>)> = map
        .categories()
        .into_iter()
        .filter(|c| Some(*c) != own)
        .map(|c| (c.to_string(), map.members(c).map(String::from).collect()))
        .collect();
    if categories.is_empty() {
        return Err(Error::invalid("no category other than the query's").into());
    }
    let outfit = recsys::build_outfit(&model, &features, &a.query, &categories)?;
    let bytes = render(|w| {
        writeln!(w, "category\titem\tdistance\tprobability")?;
        for (cat, r) in &outfit {
            writeln!(w, "{cat}\t{}\t{}\t{}", r.item, r.distance, r.probability)?;
        }
        Ok(())
    });
    rec.emit(a.out.as_deref(), &bytes)?;
    Ok(())
}

fn normalizer(per_component: bool, rec: &mut Record) -> Normalizer {
    let n = if per_component { Normalizer::Components } else { Normalizer::Pairs };
    rec.set("normalizer", format!("{n:?}"));
    n
}

fn score_outfit(a: &ScoreArgs, rec: &mut Record) -> Outcome {
    let model = load_model(&a.model, rec)?;
    let features = load_features(&a.features, rec)?;
    let n = normalizer(a.per_component, rec);
    let score = recsys::outfit_coherence(&model, &features, &a.items, n)?;
    let text = format!(
        "items\tpairs\tmean_pair_loglik\n{}\t{}\t{}\n",
        score.items.join(","),
        score.pairs,
        score.mean_pair_loglik
    );
    rec.emit(a.out.as_deref(), text.as_bytes())?;
    Ok(())
}

fn makeover(a: &MakeoverArgs, rec: &mut Record) -> Outcome {
    let model = load_model(&a.model, rec)?;
    let features = load_features(&a.features, rec)?;
    let n = normalizer(a.per_component, rec);
    let delta = recsys::makeover_delta(&model, &features, &a.before, &a.after, n)?;
    let text = format!("before\tafter\tdelta\n{}\t{}\t{delta}\n", a.before.join(","), a.after.join(","));
    rec.emit(a.out.as_deref(), text.as_bytes())?;
    Ok(())
}
