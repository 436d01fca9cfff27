//! Command-line surface.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.

pub mod config;

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use thiserror::Error;

pub use config::RunConfig;

use crate::dataset::{ingest_dataset, Dataset, DatasetError, LineIssue, SampleRecord};
use crate::harness::{
    generate, metrics_for, noise_experiment, scatter_csv, scatter_rows, subset_quality_experiment, warm_probe,
    CorpusSpec, HarnessError, NoiseSpec,
};
use crate::io::{fmt_f64, ser_f64, write_atomic};
use crate::linalg::Matrix;
use crate::metrics::{
    rank_layers, read_metrics_jsonl, score_dataset, write_metrics_jsonl, LayerDelta, MetricsCache, MetricsError,
    SampleMetrics, ScoreOutcome, Skip,
};
use crate::probe::snapshot::{load_snapshot_pair, SnapshotError};
use crate::probe::{ProbeConfig, ProbeError, ProbeModel, TinyLm};
use crate::select::{run_selection, CriterionMatrix, Method, RankedSelection, SelectError, SelectionParams};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Internal(_) => "internal",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        })
        .to_string()
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SnapshotError> for CliError {
    fn from(e: SnapshotError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::InvalidRatio(_) | SelectError::InvalidWeight(_) | SelectError::MissingSeed => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Probe(p) => p.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Metrics(m) => m.into(),
            HarnessError::Select(s) => s.into(),
            HarnessError::Probe(p) => p.into(),
            HarnessError::InvalidSpec(_) | HarnessError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "donod", version, about = "Score, rank and prune instruction data by output-layer weight dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe every sample and write per-sample DON/NOD metrics.
    Score(Common),
    /// Rank samples from a metrics file and write the pruned dataset.
    Select(Common),
    /// Rank layers by the norm of their weight change between two snapshots.
    RankLayers(RankLayersArgs),
    /// Corrupt the clean selection and measure how the selection moves.
    NoiseExp(Common),
    /// Compare selection methods by held-out loss after fine-tuning on the subset.
    QualityExp(QualityArgs),
    /// Summarise a metrics file, optionally against a selection.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Dataset JSONL (instruction / input / output / id).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Probe learning rate [default: 2e-5].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fraction of samples to keep [default: 0.2].
    #[arg(long)]
    pub ratio: Option<f64>,
    /// topsis | don | nod | wsum | pareto | random.
    #[arg(long)]
    pub method: Option<Method>,
    /// Keep the lowest-ranked samples instead (NODON).
    #[arg(long)]
    pub reverse: bool,
    /// DON weight for the weighted-sum method.
    #[arg(long)]
    pub weight: Option<f64>,
    #[arg(long)]
    pub mask_prob: Option<f64>,
    /// Metrics JSONL [default: <out>/metrics.jsonl].
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Directory for cached scoring results.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Clean JSONL to train the probe model on before scoring.
    #[arg(long)]
    pub warmup: Option<PathBuf>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    /// Write a machine-readable error report here on failure.
    #[arg(long)]
    pub error_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RankLayersArgs {
    #[command(flatten)]
    pub common: Common,
    /// `NAME=BEFORE.dnlw,AFTER.dnlw`; repeatable.
    #[arg(long = "layer")]
    pub layers: Vec<String>,
    /// Pairs every `*.dnlw` here with the same file name in `--after-dir`.
    #[arg(long, requires = "after_dir")]
    pub before_dir: Option<PathBuf>,
    #[arg(long, requires = "before_dir")]
    pub after_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct QualityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// selection.json from `select`; without it a TOPSIS selection at `--ratio` is used.
    #[arg(long)]
    pub selection: Option<PathBuf>,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Score(c) | Command::Select(c) | Command::NoiseExp(c) => c,
            Command::RankLayers(a) => &a.common,
            Command::QualityExp(a) => &a.common,
            Command::Report(a) => &a.common,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let error_json = cli.command.common().error_json.clone();
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(path) = error_json {
                if let Err(io) = write_atomic(&path, e.to_json().as_bytes()) {
                    eprintln!("error: cannot write {}: {io}", path.display());
                }
            }
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    let cfg = resolve_config(command.common())?;
    match command {
        Command::Score(_) => cmd_score(&cfg).map(|_| ()),
        Command::Select(_) => cmd_select(&cfg).map(|_| ()),
        Command::RankLayers(a) => cmd_rank_layers(&cfg, a).map(|_| ()),
        Command::NoiseExp(_) => cmd_noise_exp(&cfg),
        Command::QualityExp(a) => cmd_quality_exp(&cfg, a),
        Command::Report(a) => cmd_report(&cfg, a.selection.as_deref()).map(|_| ()),
    }
}

pub fn resolve_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &c.dataset {
        cfg.paths.dataset = Some(v.clone());
    }
    if let Some(v) = &c.out {
        cfg.paths.out = Some(v.clone());
    }
    if let Some(v) = &c.metrics {
        cfg.paths.metrics = Some(v.clone());
    }
    if let Some(v) = &c.cache {
        cfg.paths.cache = Some(v.clone());
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.lr {
        cfg.probe.learning_rate = v;
    }
    if let Some(v) = c.ratio {
        cfg.selection.ratio = v;
    }
    if let Some(v) = c.method {
        cfg.selection.method = v;
    }
    if c.reverse {
        cfg.selection.reverse = true;
    }
    if let Some(v) = c.weight {
        cfg.selection.weight = Some(v);
    }
    if let Some(v) = c.mask_prob {
        cfg.noise.mask_prob = v;
    }
    if let Some(v) = &c.warmup {
        cfg.warmup.dataset = Some(v.clone());
    }
    if let Some(v) = c.warmup_epochs {
        cfg.warmup.train.epochs = v;
    }
    cfg.resolve()
}

fn internal(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Internal(format!("cannot write {}: {e}", path.display()))
}

fn write_out(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| internal(dir, e))?;
    let path = dir.join(name);
    write_atomic(&path, bytes).map_err(|e| internal(&path, e))?;
    Ok(path)
}

fn write_resolved(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    write_out(&cfg.out_dir(), "resolved_config.json", cfg.to_json().as_bytes())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let path = cfg
        .paths
        .dataset
        .as_deref()
        .ok_or_else(|| CliError::Usage("--dataset is required".into()))?;
    let ds = ingest_dataset(path)?;
    Ok(ds)
}

/// The bundled TinyLM, optionally warmed on `warmup.dataset`.
pub fn build_probe(cfg: &RunConfig) -> Result<TinyLm, CliError> {
    let warm = match &cfg.warmup.dataset {
        Some(p) => ingest_dataset(p)?.samples(),
        None => Vec::new(),
    };
    if !warm.is_empty() {
        info!("warming probe on {} samples for {} epochs", warm.len(), cfg.warmup.train.epochs);
    }
    Ok(warm_probe(cfg.model.clone(), &warm, &cfg.warmup.train)?)
}

/// Counts gradient evaluations, so cache hits can be shown to do no probe work.
pub struct CountingProbe<'a, M: ProbeModel + ?Sized> {
    inner: &'a M,
    calls: AtomicUsize,
}

impl<'a, M: ProbeModel + ?Sized> CountingProbe<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<M: ProbeModel + ?Sized> ProbeModel for CountingProbe<'_, M> {
    fn base_output_layer(&self) -> &Matrix {
        self.inner.base_output_layer()
    }
    fn output_layer_gradient(&self, sample: &SampleRecord, cfg: &ProbeConfig) -> Result<Matrix, ProbeError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.output_layer_gradient(sample, cfg)
    }
    fn loss(&self, sample: &SampleRecord, cfg: &ProbeConfig) -> Result<f64, ProbeError> {
        self.inner.loss(sample, cfg)
    }
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SkipReport {
    pub malformed: Vec<LineIssue>,
    pub ingest_skipped: Vec<LineIssue>,
    pub probe_skipped: Vec<Skip>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreSummary {
    pub n_records: usize,
    pub n_scored: usize,
    pub n_skipped: usize,
    pub cache_key: Option<String>,
    pub cache_hit: bool,
    pub probe_calls: usize,
    pub metrics_path: PathBuf,
}

fn metrics_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.metrics.clone().unwrap_or_else(|| cfg.out_dir().join("metrics.jsonl"))
}

pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreSummary, CliError> {
    let ds = load_dataset(cfg)?;
    let samples = ds.samples();
    if samples.is_empty() {
        return Err(CliError::Data("no scoreable samples".into()));
    }
    let model = build_probe(cfg)?;
    let probe = CountingProbe::new(&model);
    let cache = cfg.paths.cache.as_ref().map(MetricsCache::new);
    let key = cache.as_ref().map(|_| MetricsCache::key(&samples, &probe, &cfg.probe));

    let cached = match (&cache, &key) {
        (Some(c), Some(k)) => c.load(k),
        _ => None,
    };
    let cache_hit = cached.is_some();
    let outcome: ScoreOutcome = match cached {
        Some(o) => {
            info!("cache hit {}", key.as_deref().unwrap_or_default());
            o
        }
        None => {
            let o = score_dataset(&probe, &cfg.probe, &samples)?;
            if let (Some(c), Some(k)) = (&cache, &key) {
                c.store(k, &o).map_err(|e| CliError::Internal(e.to_string()))?;
                info!("cache store {k}");
            }
            o
        }
    };
    if outcome.metrics.is_empty() {
        return Err(CliError::Data("no scoreable samples".into()));
    }

    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| internal(&out, e))?;
    let mpath = metrics_path(cfg);
    if let Some(parent) = mpath.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| internal(parent, e))?;
    }
    write_metrics_jsonl(&mpath, &outcome.metrics).map_err(|e| CliError::Internal(e.to_string()))?;
    let skips = SkipReport {
        malformed: ds.malformed.clone(),
        ingest_skipped: ds.skipped.clone(),
        probe_skipped: outcome.skipped.clone(),
    };
    write_out(&out, "skipped.json", serde_json::to_string_pretty(&skips).unwrap().as_bytes())?;
    let summary = ScoreSummary {
        n_records: samples.len(),
        n_scored: outcome.metrics.len(),
        n_skipped: outcome.skipped.len(),
        cache_key: key,
        cache_hit,
        probe_calls: probe.calls(),
        metrics_path: mpath,
    };
    write_out(&out, "score_summary.json", serde_json::to_string_pretty(&summary).unwrap().as_bytes())?;
    write_resolved(cfg)?;
    println!(
        "scored {} of {} samples ({} skipped, {} probe calls{})",
        summary.n_scored,
        summary.n_records,
        summary.n_skipped,
        summary.probe_calls,
        if cache_hit { ", cache hit" } else { "" }
    );
    Ok(summary)
}

fn load_metrics(cfg: &RunConfig) -> Result<Vec<SampleMetrics>, CliError> {
    let path = metrics_path(cfg);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "metrics file {} not found; run `score` first or pass --metrics",
            path.display()
        )));
    }
    Ok(read_metrics_jsonl(&path)?)
}

fn selection_params(cfg: &RunConfig) -> SelectionParams {
    let method = cfg.selection.method;
    SelectionParams {
        ratio: cfg.selection.ratio,
        weight: (method == Method::WeightedSum).then(|| cfg.selection.weight.unwrap_or(0.5)),
        seed: (method == Method::Random).then_some(cfg.seed),
        reverse: cfg.selection.reverse,
    }
}

pub fn cmd_select(cfg: &RunConfig) -> Result<RankedSelection, CliError> {
    let ds = load_dataset(cfg)?;
    let samples = ds.samples();
    if samples.is_empty() {
        return Err(CliError::Data("dataset has no records".into()));
    }
    let metrics = load_metrics(cfg)?;
    let covered: Vec<SampleMetrics> = metrics_for(&samples, &metrics)?.into_iter().cloned().collect();
    let matrix = CriterionMatrix::from_metrics(&covered)?;
    let selection = run_selection(&matrix, cfg.selection.method, selection_params(cfg))?;

    let chosen: HashSet<&str> = selection.selected_ids.iter().map(String::as_str).collect();
    let mut pruned = String::new();
    for r in ds.records.iter().filter(|r| chosen.contains(r.record.id.as_str())) {
        pruned.push_str(&r.raw);
        pruned.push('\n');
    }
    let out = cfg.out_dir();
    write_out(&out, "selection.json", selection.to_json().as_bytes())?;
    write_out(&out, "pruned.jsonl", pruned.as_bytes())?;
    write_resolved(cfg)?;
    println!(
        "selected {} of {} samples with {}{}",
        selection.n_selected,
        selection.n_total,
        selection.method,
        if cfg.selection.reverse { " (reverse)" } else { "" }
    );
    Ok(selection)
}

fn parse_layer_spec(spec: &str) -> Result<(String, PathBuf, PathBuf), CliError> {
    let bad = || CliError::Usage(format!("--layer expects NAME=BEFORE,AFTER, got `{spec}`"));
    let (name, paths) = spec.split_once('=').ok_or_else(bad)?;
    let (before, after) = paths.split_once(',').ok_or_else(bad)?;
    if name.is_empty() || before.is_empty() || after.is_empty() {
        return Err(bad());
    }
    Ok((name.to_string(), before.into(), after.into()))
}

fn dir_pairs(before: &Path, after: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>, CliError> {
    let read = |p: &Path| fs::read_dir(p).map_err(|e| CliError::Data(format!("cannot list {}: {e}", p.display())));
    let mut names: Vec<String> = read(before)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".dnlw"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| {
            let a = after.join(&n);
            if !a.exists() {
                return Err(CliError::Data(format!("{}: no matching snapshot in {}", n, after.display())));
            }
            Ok((n.trim_end_matches(".dnlw").to_string(), before.join(&n), a))
        })
        .collect()
}

fn layers_csv(rows: &[LayerDelta]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rank", "layer", "norm_before", "norm_after", "nod_l", "norm_gap"]).unwrap();
    for (i, r) in rows.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.layer_name.clone(),
            fmt_f64(r.norm_before),
            fmt_f64(r.norm_after),
            fmt_f64(r.nod_l),
            fmt_f64(r.norm_gap),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

pub fn cmd_rank_layers(cfg: &RunConfig, args: &RankLayersArgs) -> Result<Vec<LayerDelta>, CliError> {
    let mut specs = Vec::new();
    for s in &args.layers {
        specs.push(parse_layer_spec(s)?);
    }
    if let (Some(b), Some(a)) = (&args.before_dir, &args.after_dir) {
        specs.extend(dir_pairs(b, a)?);
    }
    if specs.is_empty() {
        return Err(CliError::Usage("give at least one --layer or --before-dir/--after-dir".into()));
    }
    let mut seen = HashSet::new();
    let mut layers = Vec::with_capacity(specs.len());
    for (name, before, after) in specs {
        if !seen.insert(name.clone()) {
            return Err(CliError::Usage(format!("layer `{name}` given twice")));
        }
        let (b, a) = load_snapshot_pair(&before, &after)?;
        layers.push((name, b, a));
    }
    let ranked = rank_layers(&layers)?;
    let out = cfg.out_dir();
    write_out(&out, "layers.json", serde_json::to_string_pretty(&ranked).unwrap().as_bytes())?;
    write_out(&out, "layers.csv", layers_csv(&ranked).as_bytes())?;
    write_resolved(cfg)?;
    for (i, r) in ranked.iter().enumerate() {
        println!("{:>3}  {:<24} {}", i + 1, r.layer_name, fmt_f64(r.nod_l));
    }
    Ok(ranked)
}

pub fn cmd_noise_exp(cfg: &RunConfig) -> Result<(), CliError> {
    let (samples, model) = match &cfg.paths.dataset {
        Some(_) => (load_dataset(cfg)?.samples(), build_probe(cfg)?),
        None => {
            let corpus = generate(&CorpusSpec {
                n_train: cfg.noise.n_samples,
                noise_fraction: 0.0,
                seed: cfg.seed,
                ..CorpusSpec::default()
            });
            let model = warm_probe(cfg.model.clone(), &corpus.pretrain, &cfg.warmup.train)?;
            (corpus.train, model)
        }
    };
    if samples.is_empty() {
        return Err(CliError::Data("no scoreable samples".into()));
    }
    let spec = NoiseSpec {
        mask_prob: cfg.noise.mask_prob,
        mask_token: cfg.noise.mask_token.clone(),
        seed: cfg.seed,
        ..NoiseSpec::default()
    };
    let report = noise_experiment(&samples, &model, &cfg.probe, cfg.selection.ratio, &spec)?;
    let out = cfg.out_dir();
    write_out(&out, "noise_report.json", serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
    write_out(&out, "noise_report.csv", report.to_csv().as_bytes())?;
    write_resolved(cfg)?;
    println!(
        "overlap {} ({} of {}); mean NOD {} -> {} (shift {})",
        fmt_f64(report.overlap.overlap),
        report.overlap.intersection,
        report.overlap.set_a_size,
        fmt_f64(report.mean_nod_clean),
        fmt_f64(report.mean_nod_corrupted),
        fmt_f64(report.mean_nod_shift)
    );
    Ok(())
}

pub fn cmd_quality_exp(cfg: &RunConfig, args: &QualityArgs) -> Result<(), CliError> {
    let mut q = cfg.quality.clone();
    if !args.seeds.is_empty() {
        q.seeds = args.seeds.clone();
    }
    if !args.methods.is_empty() {
        q.methods = args.methods.clone();
    }
    let report = subset_quality_experiment(&q)?;
    let out = cfg.out_dir();
    write_out(&out, "quality_report.json", serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
    write_out(&out, "quality_runs.csv", report.runs_csv().as_bytes())?;
    write_out(&out, "quality_summary.csv", report.summary_csv().as_bytes())?;
    write_resolved(cfg)?;
    for s in &report.summary {
        println!("{:<13} seeds {}  mean {}  std {}", s.method, s.n_seeds, fmt_f64(s.mean), fmt_f64(s.std));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct Stats {
    #[serde(serialize_with = "ser_f64")]
    pub mean: f64,
    #[serde(serialize_with = "ser_f64")]
    pub std: f64,
    #[serde(serialize_with = "ser_f64")]
    pub min: f64,
    #[serde(serialize_with = "ser_f64")]
    pub max: f64,
}

impl Stats {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub don: Stats,
    pub nod: Stats,
    /// Rows with |DON| > NOD beyond rounding; always 0 for a correct probe.
    pub bound_violations: usize,
    pub probe_tags: BTreeMap<String, usize>,
    pub selection_method: Method,
    pub n_selected: usize,
}

pub fn cmd_report(cfg: &RunConfig, selection: Option<&Path>) -> Result<MetricsReport, CliError> {
    let metrics = load_metrics(cfg)?;
    if metrics.is_empty() {
        return Err(CliError::Data("metrics file is empty".into()));
    }
    let (method, chosen) = match selection {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("cannot read {}: {e}", p.display())))?;
            let sel: RankedSelection =
                serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            (sel.method, sel.selected_ids)
        }
        None => {
            let m = CriterionMatrix::from_metrics(&metrics)?;
            let sel = run_selection(&m, Method::Topsis, SelectionParams::new(cfg.selection.ratio))?;
            (Method::Topsis, sel.selected_ids)
        }
    };
    let rows = scatter_rows(&metrics, &chosen).map_err(CliError::from)?;
    let dons: Vec<f64> = metrics.iter().map(|m| m.don).collect();
    let nods: Vec<f64> = metrics.iter().map(|m| m.nod).collect();
    let mut probe_tags = BTreeMap::new();
    for m in &metrics {
        *probe_tags.entry(m.probe_tag.clone()).or_insert(0) += 1;
    }
    let report = MetricsReport {
        n_samples: metrics.len(),
        don: Stats::of(&dons),
        nod: Stats::of(&nods),
        bound_violations: metrics
            .iter()
            .filter(|m| m.don.abs() > m.nod + 1e-9 * m.nod.abs().max(1.0))
            .count(),
        probe_tags,
        selection_method: method,
        n_selected: rows.iter().filter(|r| r.selected).count(),
    };
    let out = cfg.out_dir();
    write_out(&out, "report.json", serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
    write_out(&out, "scatter.csv", scatter_csv(&rows).as_bytes())?;
    write_resolved(cfg)?;
    println!(
        "{} samples; DON mean {} std {}; NOD mean {} std {}; {} selected by {}",
        report.n_samples,
        fmt_f64(report.don.mean),
        fmt_f64(report.don.std),
        fmt_f64(report.nod.mean),
        fmt_f64(report.nod.std),
        report.n_selected,
        method
    );
    Ok(report)
}
