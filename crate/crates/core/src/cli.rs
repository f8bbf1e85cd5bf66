//! Command-line front end: `gen-corpus`, `build-cache`, `train`, `eval`,
//! `bench` and `compare`.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors (one line on
//! stderr), 2 for runtime failures. Artifacts land under `--out`, then
//! `$FCFT_OUT`, then `./runs`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::cache::{build_cache, fingerprint, CacheDtype, CacheReader, CachedSplit};
use crate::checkpoint::Checkpoint;
use crate::codec::{canonical_json, write_atomic};
use crate::data::{generate_synthetic_corpus, Corpus, CorpusSpec, Split};
use crate::error::{Error, Result};
use crate::experiment::report::{bench_report, ReportRow};
use crate::experiment::stats::{anova_oneway, ttest_pairwise_bonferroni, MetricReport, StatReport, TTestKind, ALPHA};
use crate::experiment::{
    evaluate, load_config, load_data, run_seeds, seed_metric, train, Precision, RunConfig, RunResult, SeedResult,
    Source, TrainOutcome,
};
use crate::model::{counts, FreezePlan, Model, ModelConfig};

pub const OUT_ENV: &str = "FCFT_OUT";

#[derive(Debug, Parser)]
#[command(name = "fcft", version, about = "Finetuning-efficiency experiments for a speech emotion regressor")]
pub struct Cli {
    /// Output root (default: $FCFT_OUT, else ./runs).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus (audio + manifest.jsonl).
    GenCorpus(GenCorpusArgs),
    /// Cache frozen-prefix representations of a corpus.
    BuildCache(BuildCacheArgs),
    /// Train one run directory per seed.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Results table over freeze plans.
    Bench(BenchArgs),
    /// ANOVA and Bonferroni-corrected t-tests between finished runs.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON run config; defaults fill missing fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `freeze.mode=partial`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long, value_name = "DIR")]
    pub dir: PathBuf,
    /// Total size, split 70/15/15. Ignored when all of --train/--dev/--test are given.
    #[arg(long, default_value_t = 700)]
    pub total: usize,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub dev: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
    #[arg(long)]
    pub min_seconds: Option<f64>,
    #[arg(long)]
    pub max_seconds: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DtypeArg {
    F32,
    F16,
}

#[derive(Debug, Args)]
pub struct BuildCacheArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Checkpoint whose frozen prefix is cached (or `paths.init`).
    #[arg(long, value_name = "CKPT")]
    pub model: Option<PathBuf>,
    /// First layer not cached; defaults to the split of the configured plan.
    #[arg(long)]
    pub split_layer: Option<usize>,
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// Cache directory (or `paths.cache`, else `<out>/cache-<fingerprint>`).
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f32")]
    pub dtype: DtypeArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Replaces the configured seed list. Repeatable.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    pub checkpoint: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Read split-layer states from this cache instead of running the prefix.
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Model preset: base-equivalent, desk, desk-deep.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// Comma-separated plans: full, partialN, lora, cacheN.
    #[arg(long, value_delimiter = ',', default_value = "full,partial3,partial2,partial1,lora,cache3,cache2,cache1")]
    pub plans: Vec<String>,
    #[arg(long, value_enum, default_value = "single")]
    pub precision: PrecisionArg,
    /// Count trainable parameters only; no data is read and nothing trains.
    #[arg(long)]
    pub params_only: bool,
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    Single,
    Mixed,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Mixed => Precision::Mixed,
        }
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Run label such as `full_sp`.
    #[arg(long)]
    pub baseline: String,
    /// Labels tested against the baseline. Repeatable or comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub against: Vec<String>,
    /// Number of comparisons for the correction (default: one per --against).
    #[arg(long, value_name = "M")]
    pub bonferroni: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "test_activation,test_valence")]
    pub metrics: Vec<String>,
    /// Pair seeds instead of Welch's unequal-variance test.
    #[arg(long)]
    pub paired: bool,
    /// Directory of run directories (default: the output root).
    #[arg(long, value_name = "DIR")]
    pub runs: Option<PathBuf>,
}

/// What a run directory's `result.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub config_hash: String,
    pub result: SeedResult,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{}", e.render());
                    1
                }
            };
        }
    };
    match run(cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) if e.is_validation() => {
            eprintln!("error: {}", one_line(&e.to_string()));
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            2
        }
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Executes a parsed command; the returned lines are the success output.
pub fn run(cli: Cli) -> Result<Vec<String>> {
    let root = cli
        .out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::BuildCache(a) => build_cache_cmd(a, &root),
        Command::Train(a) => train_cmd(a, &root),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench_cmd(a, &root),
        Command::Compare(a) => compare_cmd(a, &root),
    }
}

fn read_config(a: &ConfigArgs) -> Result<RunConfig> {
    let text = match &a.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::Config {
            field: "--config".into(),
            reason: format!("cannot read {}: {e}", p.display()),
        })?),
        None => None,
    };
    let c = load_config(text.as_deref(), &a.overrides)?;
    log::info!("effective config: {}", canonical_json(&c)?);
    Ok(c)
}

fn open_corpus(flag: Option<PathBuf>, config: &RunConfig) -> Result<Corpus> {
    let dir = flag.or_else(|| config.paths.corpus.clone()).ok_or_else(|| Error::Config {
        field: "paths.corpus".into(),
        reason: "no corpus given (--corpus or paths.corpus)".into(),
    })?;
    if !dir.is_dir() {
        return Err(Error::Config {
            field: "paths.corpus".into(),
            reason: format!("{} is not a directory", dir.display()),
        });
    }
    Corpus::open(&dir)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::Config {
            field: "--model".into(),
            reason: format!("missing model: no checkpoint at {}", path.display()),
        });
    }
    Checkpoint::load(path)
}

/// Starting weights: `paths.init` when set, otherwise a backbone built from
/// `backbone_seed`.
fn backbone(config: &RunConfig) -> Result<Model<f32>> {
    match &config.paths.init {
        Some(p) => {
            let m = load_checkpoint(p)?.model;
            if m.config() != &config.model {
                return Err(Error::Config {
                    field: "paths.init".into(),
                    reason: "checkpoint architecture differs from `model`".into(),
                });
            }
            Ok(m)
        }
        None => Model::build(config.model.clone(), config.backbone_seed),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn gen_corpus(a: GenCorpusArgs) -> Result<Vec<String>> {
    let mut spec = match (a.train, a.dev, a.test) {
        (Some(train), Some(dev), Some(test)) => CorpusSpec {
            train,
            dev,
            test,
            ..CorpusSpec::default()
        },
        (None, None, None) => CorpusSpec::with_total(a.total),
        _ => {
            return Err(Error::Parameter("give all of --train/--dev/--test or none".into()));
        }
    };
    if let Some(s) = a.min_seconds {
        spec.min_seconds = s;
    }
    if let Some(s) = a.max_seconds {
        spec.max_seconds = s;
    }
    let corpus = generate_synthetic_corpus(&spec, a.seed, &a.dir)?;
    write_json(
        &a.dir.join("corpus_config.json"),
        &serde_json::json!({ "spec": spec, "seed": a.seed }),
    )?;
    Ok(vec![format!(
        "wrote {} samples ({} train / {} dev / {} test) to {}",
        corpus.records.len(),
        spec.train,
        spec.dev,
        spec.test,
        a.dir.display()
    )])
}

fn build_cache_cmd(a: BuildCacheArgs, root: &Path) -> Result<Vec<String>> {
    let config = read_config(&a.cfg)?;
    let ckpt = a.model.or_else(|| config.paths.init.clone()).ok_or_else(|| Error::Config {
        field: "--model".into(),
        reason: "missing model: build-cache needs a checkpoint (--model or paths.init)".into(),
    })?;
    let mut model = load_checkpoint(&ckpt)?.model;
    let n = model.config().n_layers;
    let split = match a.split_layer.or(config.effective_split_layer()) {
        Some(s) => s,
        None => {
            return Err(Error::Config {
                field: "--split-layer".into(),
                reason: format!("plan {} has no split layer; pass --split-layer", config.freeze),
            })
        }
    };
    if split > n {
        return Err(Error::Config {
            field: "--split-layer".into(),
            reason: format!("{split} exceeds the {n}-layer stack"),
        });
    }
    if model.lora().is_some() {
        return Err(Error::Contract("cannot cache a model with adapters inside the prefix".into()));
    }
    model.apply_freeze_plan(FreezePlan::CachingPartial { n: n - split })?;
    let corpus = open_corpus(a.corpus, &config)?;
    let dir = match a.cache.or_else(|| config.paths.cache.clone()) {
        Some(d) => d,
        None => root.join(format!("cache-{}", &fingerprint(&model, split)?[..12])),
    };
    let splits = [Split::Train, Split::Dev, Split::Test]
        .into_iter()
        .map(|s| corpus.load_split(s))
        .collect::<Result<Vec<_>>>()?;
    let samples = splits
        .iter()
        .flat_map(|d| d.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice())));
    let dtype = match a.dtype {
        DtypeArg::F32 => CacheDtype::F32,
        DtypeArg::F16 => CacheDtype::F16,
    };
    let report = build_cache(&model, samples, split, &dir, dtype)?;
    write_json(
        &dir.join("build_config.json"),
        &serde_json::json!({ "config": config, "model": ckpt, "split_layer": split, "dtype": dtype }),
    )?;
    Ok(vec![format!(
        "cached {} samples at layer {split} ({} bytes) in {}",
        report.manifest.entries.len(),
        report.bytes_written,
        dir.display()
    )])
}

fn default_cache_dir(config: &RunConfig, backbone: &Model<f32>, root: &Path) -> Result<Option<PathBuf>> {
    if !config.cached {
        return Ok(None);
    }
    if let Some(d) = &config.paths.cache {
        return Ok(Some(d.clone()));
    }
    let split = config.effective_split_layer().unwrap_or(0);
    Ok(Some(root.join(format!("cache-{}", &fingerprint(backbone, split)?[..12]))))
}

/// Writes `<root>/<hash>-s<seed>/` with the effective config, log, timing,
/// checkpoints and scores.
pub fn write_run_dir(root: &Path, config: &RunConfig, out: &TrainOutcome) -> Result<PathBuf> {
    let seed = out.result.seed;
    let dir = root.join(format!("{}-s{seed}", config.hash()?));
    create_dir(&dir)?;
    let mut effective = config.clone();
    effective.seeds = vec![seed];
    write_atomic(&dir.join("config.json"), canonical_json(&effective)?.as_bytes())?;
    let mut log = out.log.join("\n");
    log.push('\n');
    write_atomic(&dir.join("log.jsonl"), log.as_bytes())?;
    write_json(
        &dir.join("timing.json"),
        &serde_json::json!({ "train_seconds": out.result.train_seconds, "step_seconds": out.step_seconds }),
    )?;
    Checkpoint {
        model: out.best.clone(),
        optimizer: None,
        scaler: None,
    }
    .save(&dir.join("best.fcft"))?;
    out.last.save(&dir.join("final.fcft"))?;
    write_json(
        &dir.join("result.json"),
        &RunRecord {
            label: config.label(),
            config_hash: config.hash()?,
            result: out.result.clone(),
        },
    )?;
    Ok(dir)
}

fn train_cmd(a: TrainArgs, root: &Path) -> Result<Vec<String>> {
    let mut config = read_config(&a.cfg)?;
    if !a.seeds.is_empty() {
        config.seeds = a.seeds;
    }
    if let Some(c) = a.corpus {
        config.paths.corpus = Some(c);
    }
    config.validate()?;
    let corpus = open_corpus(None, &config)?;
    let model = backbone(&config)?;
    let cache = default_cache_dir(&config, &model, root)?;
    let data = load_data(&config, &model, &corpus, cache.as_deref())?;
    create_dir(root)?;
    let mut lines = Vec::new();
    let mut results = Vec::new();
    for &seed in &config.seeds {
        let out = train(&config, &model, &data, seed)?;
        let dir = write_run_dir(root, &config, &out)?;
        let r = &out.result;
        lines.push(format!(
            "{} seed {seed}: best epoch {}  dev act {:.4} val {:.4}  test act {:.4} val {:.4}  -> {}",
            config.label(),
            r.best_epoch,
            r.dev.activation,
            r.dev.valence,
            r.test.activation,
            r.test.valence,
            dir.display()
        ));
        results.push(out.result);
    }
    if results.len() >= 2 {
        let summary = RunResult::from_seeds(&config, results)?;
        let path = root.join(format!("{}-summary.json", summary.config_hash));
        write_json(&path, &summary)?;
        lines.push(format!("summary -> {}", path.display()));
    }
    Ok(lines)
}

fn eval_cmd(a: EvalArgs) -> Result<Vec<String>> {
    if a.batch_size < 1 {
        return Err(Error::Parameter("--batch-size must be ≥ 1".into()));
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let model = ckpt.model;
    let corpus = Corpus::open(&a.corpus)?;
    let data = corpus.load_split(a.split.into())?;
    let source = match a.cache {
        Some(dir) => {
            let split_layer = model
                .plan()
                .split_layer(model.config().n_layers)
                .ok_or_else(|| Error::Contract(format!("checkpoint plan {} does not read a cache", model.plan())))?;
            let reader = CacheReader::open(&dir, Some(&model))?;
            Source::Cached {
                split: CachedSplit::load(&reader, &data)?,
                split_layer,
            }
        }
        None => Source::Raw(data),
    };
    let scores = evaluate(&model, &source, a.batch_size, crate::objectives::DEFAULT_EPS)?;
    Ok(vec![serde_json::to_string(&serde_json::json!({
        "split": Split::from(a.split),
        "samples": source.len(),
        "activation": scores.activation,
        "valence": scores.valence,
    }))?])
}

fn bench_cmd(a: BenchArgs, root: &Path) -> Result<Vec<String>> {
    let model_cfg = ModelConfig::preset(&a.preset)?;
    let plans = a
        .plans
        .iter()
        .map(|p| FreezePlan::parse_short(p.trim()))
        .collect::<Result<Vec<_>>>()?;
    if plans.is_empty() {
        return Err(Error::Parameter("--plans is empty".into()));
    }
    let mut base = read_config(&a.cfg)?;
    base.model = model_cfg.clone();
    base.precision = a.precision.into();
    for p in &plans {
        p.validate(model_cfg.n_layers)?;
    }
    let precision: Precision = a.precision.into();
    let rows = if a.params_only {
        plans
            .iter()
            .map(|&p| {
                ReportRow::params_only(p, model_cfg.n_layers, precision, counts::trainable(&model_cfg, p, &base.lora))
            })
            .collect()
    } else {
        let corpus = open_corpus(a.corpus, &base)?;
        let model = backbone(&base)?;
        let mut rows = Vec::new();
        for &p in &plans {
            let mut c = base.clone();
            c.freeze = p;
            c.cached = p.is_caching();
            c.split_layer = None;
            c.paths.cache = None;
            c.validate()?;
            let cache = default_cache_dir(&c, &model, root)?;
            let data = load_data(&c, &model, &corpus, cache.as_deref())?;
            let result = run_seeds(&c, &model, &data, |o| write_run_dir(root, &c, o).map(|_| ()))?;
            rows.push(ReportRow::from_run(&result, model_cfg.n_layers));
        }
        rows
    };
    let baseline = if rows.iter().any(|r| r.label == "full_sp") {
        "full_sp".to_string()
    } else {
        rows[0].label.clone()
    };
    let report = bench_report(rows, &baseline)?;
    let dir = root.join(format!("bench-{}", a.preset));
    create_dir(&dir)?;
    write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    let text = report.to_text();
    write_atomic(&dir.join("report.txt"), text.as_bytes())?;
    write_atomic(&dir.join("config.json"), canonical_json(&base)?.as_bytes())?;
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines.push(format!("report -> {}", dir.display()));
    Ok(lines)
}

/// Every `result.json` one level below `dir`.
pub fn collect_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path().join("result.json"))).collect();
    paths.sort();
    for p in paths {
        if p.is_file() {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            out.push(serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", p.display())))?);
        }
    }
    Ok(out)
}

fn group_for(runs: &[RunRecord], label: &str) -> Result<Vec<SeedResult>> {
    let hits: Vec<&RunRecord> = runs.iter().filter(|r| r.label == label).collect();
    let mut hashes: Vec<&str> = hits.iter().map(|r| r.config_hash.as_str()).collect();
    hashes.sort();
    hashes.dedup();
    match hashes.len() {
        0 => Err(Error::Config {
            field: "--baseline/--against".into(),
            reason: format!("no runs labelled `{label}`"),
        }),
        1 => {
            let mut seeds: Vec<SeedResult> = hits.into_iter().map(|r| r.result.clone()).collect();
            seeds.sort_by_key(|s| s.seed);
            Ok(seeds)
        }
        _ => Err(Error::Config {
            field: "--baseline/--against".into(),
            reason: format!("label `{label}` matches several configs: {}", hashes.join(", ")),
        }),
    }
}

fn compare_cmd(a: CompareArgs, root: &Path) -> Result<Vec<String>> {
    let runs_dir = a.runs.unwrap_or_else(|| root.to_path_buf());
    if !runs_dir.is_dir() {
        return Err(Error::Config {
            field: "--runs".into(),
            reason: format!("{} is not a directory", runs_dir.display()),
        });
    }
    let runs = collect_runs(&runs_dir)?;
    let mut labels = vec![a.baseline.clone()];
    labels.extend(a.against.iter().cloned());
    let groups = labels
        .iter()
        .map(|l| group_for(&runs, l))
        .collect::<Result<Vec<_>>>()?;
    let kind = if a.paired {
        TTestKind::Paired
    } else {
        TTestKind::Welch
    };
    let pairs: Vec<(usize, usize)> = (1..labels.len()).map(|j| (0, j)).collect();
    let comparisons = a.bonferroni.unwrap_or(pairs.len());
    if comparisons == 0 {
        return Err(Error::Parameter("--bonferroni must be ≥ 1".into()));
    }
    let mut metrics = Vec::new();
    for m in &a.metrics {
        let named: Vec<(String, Vec<f64>)> = labels
            .iter()
            .zip(&groups)
            .map(|(l, g)| Ok((l.clone(), g.iter().map(|s| seed_metric(s, m)).collect::<Result<Vec<_>>>()?)))
            .collect::<Result<_>>()?;
        let values: Vec<Vec<f64>> = named.iter().map(|(_, v)| v.clone()).collect();
        let anova = anova_oneway(&values)?;
        metrics.push(MetricReport {
            metric: m.clone(),
            anova_significant: Some(anova.p < ALPHA),
            anova: Some(anova),
            pairs: ttest_pairwise_bonferroni(&named, &pairs, Some(comparisons), kind)?,
        });
    }
    let report = StatReport {
        alpha: ALPHA,
        test: kind,
        comparisons,
        metrics,
    };
    Ok(vec![serde_json::to_string_pretty(&report)?])
}
