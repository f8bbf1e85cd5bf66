use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Precision, RunConfig};
use crate::autodiff::{Graph, Mode};
use crate::cache::{build_cache, CacheDtype, CacheReader, CachedSplit, MANIFEST_FILE};
use crate::checkpoint::Checkpoint;
use crate::data::{batch_plan, Corpus, Dataset, RawBatch, Split};
use crate::error::{Error, Result};
use crate::model::{Binder, ForwardOptions, FreezePlan, Input, Model};
use crate::objectives::{ccc_with_eps, multitask_loss};
use crate::optim::{mixed_precision_step, single_precision_step, AdamW, LossScaler, StepOutcome};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

pub const SELECTION_RULE: &str = "max mean(dev activation CCC, dev valence CCC)";

/// Samples of one split, either as audio or as cached split-layer states.
#[derive(Debug, Clone)]
pub enum Source {
    Raw(Dataset),
    Cached { split: CachedSplit, split_layer: usize },
}

/// Model input for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchInput {
    Audio(Tensor<f32>),
    Hidden { states: Tensor<f32>, start_layer: usize },
}

impl BatchInput {
    pub fn as_input(&self) -> Input<'_, f32> {
        match self {
            BatchInput::Audio(a) => Input::Audio(a),
            BatchInput::Hidden { states, start_layer } => Input::Hidden {
                states,
                start_layer: *start_layer,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: BatchInput,
    /// `[B×2]`, scaled.
    pub labels: Tensor<f32>,
}

impl Source {
    pub fn len(&self) -> usize {
        match self {
            Source::Raw(d) => d.len(),
            Source::Cached { split, .. } => split.entries.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<[f64; 2]> {
        match self {
            Source::Raw(d) => d.items.iter().map(|s| s.labels).collect(),
            Source::Cached { split, .. } => split.labels.clone(),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        match self {
            Source::Raw(d) => {
                let b = RawBatch::assemble(d, indices)?;
                Ok(Batch {
                    input: BatchInput::Audio(b.audio),
                    labels: b.labels,
                })
            }
            Source::Cached { split, split_layer } => {
                let b = split.batch(indices)?;
                Ok(Batch {
                    input: BatchInput::Hidden {
                        states: b.representations,
                        start_layer: *split_layer,
                    },
                    labels: b.labels,
                })
            }
        }
    }

    /// Eval batches in split order; a trailing single sample is fine here
    /// because CCC is computed over the concatenated split.
    fn eval_batch(&self, indices: &[usize]) -> Result<BatchInput> {
        if indices.len() >= 2 {
            return Ok(self.batch(indices)?.input);
        }
        match self {
            Source::Raw(d) => {
                let a = &d.items[indices[0]].audio;
                Ok(BatchInput::Audio(Tensor::new(vec![1, a.len()], a.clone())?))
            }
            Source::Cached { split, split_layer } => {
                let e = &split.entries[indices[0]];
                Ok(BatchInput::Hidden {
                    states: e.tensor().reshape(vec![1, e.frames, e.dim])?,
                    start_layer: *split_layer,
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Source,
    pub dev: Source,
    pub test: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScores {
    pub activation: f64,
    pub valence: f64,
}

impl TaskScores {
    pub fn mean(&self) -> f64 {
        0.5 * (self.activation + self.valence)
    }
}

/// Eval-mode predictions `[N×2]` over a whole split.
pub fn predict(model: &Model<f32>, source: &Source, batch_size: usize) -> Result<Tensor<f64>> {
    if source.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let order: Vec<usize> = (0..source.len()).collect();
    let mut out = Vec::with_capacity(source.len() * 2);
    let mut unused = rng::stream(0, 0);
    for chunk in order.chunks(batch_size.max(1)) {
        let input = source.eval_batch(chunk)?;
        let (pred, _) = model.run(input.as_input(), ForwardOptions::eval(), &mut unused)?;
        out.extend(pred.data().iter().map(|&v| v as f64));
    }
    Tensor::new(vec![source.len(), 2], out)
}

/// CCC per task over the concatenated predictions of the split.
pub fn evaluate(model: &Model<f32>, source: &Source, batch_size: usize, eps: f64) -> Result<TaskScores> {
    let pred = predict(model, source, batch_size)?;
    scores_from_predictions(&pred, &source.labels(), eps)
}

pub fn scores_from_predictions(pred: &Tensor<f64>, labels: &[[f64; 2]], eps: f64) -> Result<TaskScores> {
    let n = labels.len();
    let col = |t: usize| -> (Vec<f64>, Vec<f64>) {
        (
            (0..n).map(|i| pred.data()[i * 2 + t]).collect(),
            labels.iter().map(|l| l[t]).collect(),
        )
    };
    let (pa, la) = col(0);
    let (pv, lv) = col(1);
    Ok(TaskScores {
        activation: ccc_with_eps(&pa, &la, eps)?,
        valence: ccc_with_eps(&pv, &lv, eps)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: TaskScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    pub dev: TaskScores,
    pub test: TaskScores,
    pub train_seconds: f64,
    pub trainable_params: usize,
    pub epochs: Vec<EpochSummary>,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub result: SeedResult,
    pub best: Model<f32>,
    pub last: Checkpoint,
    /// JSON-lines; contains no timing so reruns compare byte for byte.
    pub log: Vec<String>,
    /// Wall-clock seconds per step, kept out of the log.
    pub step_seconds: Vec<f64>,
}

/// Prepares the per-seed model: heads redrawn from `seed`, plan applied,
/// adapters attached for `lora`.
pub fn seed_model(config: &RunConfig, backbone: &Model<f32>, seed: u64) -> Result<Model<f32>> {
    if backbone.config() != &config.model {
        return Err(Error::Contract("starting model does not match the configured architecture".into()));
    }
    let mut m = backbone.clone();
    m.reinit_heads(seed);
    match config.freeze {
        FreezePlan::Lora if m.lora().is_none() => m.attach_lora(config.lora.clone(), seed)?,
        plan => m.apply_freeze_plan(plan)?,
    }
    Ok(m)
}

fn check_source(config: &RunConfig, s: &Source) -> Result<()> {
    match (config.cached, s) {
        (false, Source::Raw(_)) => Ok(()),
        (true, Source::Cached { split_layer, .. }) if Some(*split_layer) == config.effective_split_layer() => Ok(()),
        _ => Err(Error::Contract("data source does not match the cached flag / split layer".into())),
    }
}

/// Trains one seed: `epochs` passes over shuffled batches, dev evaluation
/// after each, keeping the epoch with the best mean dev CCC.
pub fn train(config: &RunConfig, backbone: &Model<f32>, data: &TrainData, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    for s in [&data.train, &data.dev, &data.test] {
        check_source(config, s)?;
    }
    let mut model = seed_model(config, backbone, seed)?;
    let trainable = model.count_trainable_params();
    let mut opt = AdamW::<f32>::new(config.optimizer);
    let mut scaler: LossScaler = config.scaler;
    let mut half = match config.precision {
        Precision::Mixed => Some(model.params().to_half()),
        Precision::Single => None,
    };
    let mut dropout = rng::stream(seed, streams::DROPOUT);
    let opts = ForwardOptions {
        mode: Mode::Train,
        frozen_dropout: config.frozen_dropout,
    };
    let eps = config.ccc_eps;
    let mut log = vec![json!({
        "event": "start",
        "label": config.label(),
        "config_hash": config.hash()?,
        "seed": seed,
        "trainable_params": trainable,
        "selection": SELECTION_RULE,
        "remainder": "single-sample final batch dropped",
        "shuffle": "per-epoch permutation keyed by (seed, epoch)",
    })
    .to_string()];
    let mut epochs = Vec::new();
    let mut best: Option<(usize, TaskScores, Model<f32>)> = None;
    let mut step_seconds = Vec::new();

    let started = Instant::now();
    for epoch in 0..config.epochs {
        let plan = batch_plan(data.train.len(), config.batch_size, seed, epoch as u64, true)?;
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        for (step, idx) in plan.iter().enumerate() {
            let t0 = Instant::now();
            let batch = data.train.batch(idx)?;
            let fwd = |m: &Model<f32>, g: &mut Graph<f32>, b: &mut Binder<'_, f32>| {
                let out = m.forward_graph(g, b, batch.input.as_input(), opts, &mut dropout)?;
                multitask_loss(g, out.predictions, &batch.labels, eps)
            };
            let out: StepOutcome = match half.as_mut() {
                None => single_precision_step(&mut model, &mut opt, fwd)?,
                Some(h) => mixed_precision_step(&mut model, h, &mut opt, &mut scaler, fwd)?,
            };
            step_seconds.push(t0.elapsed().as_secs_f64());
            if config.precision == Precision::Single && !out.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            if out.loss.is_finite() {
                loss_sum += out.loss;
                loss_n += 1;
            }
            let mut ev = json!({
                "event": "step",
                "epoch": epoch,
                "step": step,
                "batch": idx.len(),
                "loss": out.loss,
                "applied": out.applied,
            });
            if config.precision == Precision::Mixed {
                ev["loss_scale"] = json!(scaler.scale);
                ev["scale_event"] = json!(out.scale_event);
            }
            log.push(ev.to_string());
        }
        let dev = evaluate(&model, &data.dev, config.batch_size, eps)?;
        let train_loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN };
        log.push(
            json!({
                "event": "epoch",
                "epoch": epoch,
                "train_loss": train_loss,
                "dev_activation": dev.activation,
                "dev_valence": dev.valence,
                "dev_mean": dev.mean(),
            })
            .to_string(),
        );
        epochs.push(EpochSummary { epoch, train_loss, dev });
        if best.as_ref().map_or(true, |(_, b, _)| dev.mean() > b.mean()) {
            best = Some((epoch, dev, model.clone()));
        }
    }
    let train_seconds = started.elapsed().as_secs_f64();
    let (best_epoch, dev, best_model) = best.expect("at least one epoch");
    let test = evaluate(&best_model, &data.test, config.batch_size, eps)?;
    log.push(
        json!({
            "event": "select",
            "best_epoch": best_epoch,
            "dev_activation": dev.activation,
            "dev_valence": dev.valence,
            "test_activation": test.activation,
            "test_valence": test.valence,
        })
        .to_string(),
    );
    Ok(TrainOutcome {
        result: SeedResult {
            seed,
            best_epoch,
            dev,
            test,
            train_seconds,
            trainable_params: trainable,
            epochs,
        },
        best: best_model,
        last: Checkpoint {
            model,
            optimizer: Some(opt),
            scaler: (config.precision == Precision::Mixed).then_some(scaler),
        },
        log,
        step_seconds,
    })
}

/// Mean ± sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::Stats(format!("need ≥ 2 values for a standard deviation, got {}", xs.len())));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub dev_activation: MeanStd,
    pub dev_valence: MeanStd,
    pub test_activation: MeanStd,
    pub test_valence: MeanStd,
    pub train_seconds: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub config_hash: String,
    pub precision: Precision,
    pub plan: FreezePlan,
    pub trainable_params: usize,
    pub seeds: Vec<SeedResult>,
    pub aggregate: Aggregate,
}

impl RunResult {
    pub fn from_seeds(config: &RunConfig, seeds: Vec<SeedResult>) -> Result<Self> {
        let pick = |f: &dyn Fn(&SeedResult) -> f64| MeanStd::of(&seeds.iter().map(f).collect::<Vec<_>>());
        let aggregate = Aggregate {
            dev_activation: pick(&|s| s.dev.activation)?,
            dev_valence: pick(&|s| s.dev.valence)?,
            test_activation: pick(&|s| s.test.activation)?,
            test_valence: pick(&|s| s.test.valence)?,
            train_seconds: pick(&|s| s.train_seconds)?,
        };
        Ok(Self {
            label: config.label(),
            config_hash: config.hash()?,
            precision: config.precision,
            plan: config.freeze,
            trainable_params: seeds.first().map_or(0, |s| s.trainable_params),
            seeds,
            aggregate,
        })
    }

    /// Per-seed values of a named metric (see [`seed_metric`]).
    pub fn metric(&self, name: &str) -> Result<Vec<f64>> {
        self.seeds.iter().map(|s| seed_metric(s, name)).collect()
    }
}

/// One named value of a seed result: `dev_activation`, `dev_valence`,
/// `test_activation`, `test_valence` or `train_seconds`.
pub fn seed_metric(s: &SeedResult, name: &str) -> Result<f64> {
    Ok(match name {
        "dev_activation" => s.dev.activation,
        "dev_valence" => s.dev.valence,
        "test_activation" => s.test.activation,
        "test_valence" => s.test.valence,
        "train_seconds" => s.train_seconds,
        other => return Err(Error::Report(format!("unknown metric `{other}`"))),
    })
}

/// Loads the three splits of `corpus` as training sources.
///
/// Cached configs read split-layer states from `cache_dir`, building the
/// cache from `backbone` first when no manifest exists there. An existing
/// cache must carry the backbone's fingerprint.
pub fn load_data(config: &RunConfig, backbone: &Model<f32>, corpus: &Corpus, cache_dir: Option<&Path>) -> Result<TrainData> {
    let splits = [Split::Train, Split::Dev, Split::Test]
        .into_iter()
        .map(|s| corpus.load_split(s))
        .collect::<Result<Vec<_>>>()?;
    let sources = if config.cached {
        let split_layer = config
            .effective_split_layer()
            .ok_or_else(|| Error::Contract(format!("plan {} has no split layer", config.freeze)))?;
        let dir = cache_dir.ok_or_else(|| Error::Config {
            field: "paths.cache".into(),
            reason: "cached training needs a cache directory".into(),
        })?;
        let mut prefix = backbone.clone();
        prefix.apply_freeze_plan(config.freeze)?;
        if !dir.join(MANIFEST_FILE).exists() {
            let samples = splits
                .iter()
                .flat_map(|d| d.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice())));
            build_cache(&prefix, samples, split_layer, dir, CacheDtype::F32)?;
        }
        let reader = CacheReader::open(dir, Some(&prefix))?;
        splits
            .iter()
            .map(|d| {
                Ok(Source::Cached {
                    split: CachedSplit::load(&reader, d)?,
                    split_layer,
                })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        splits.into_iter().map(Source::Raw).collect()
    };
    let [train, dev, test]: [Source; 3] = sources.try_into().expect("three splits");
    Ok(TrainData { train, dev, test })
}

/// Trains every configured seed. `on_seed` sees each finished run (for
/// writing artifacts); a failure reports which seeds completed.
pub fn run_seeds<F>(config: &RunConfig, backbone: &Model<f32>, data: &TrainData, mut on_seed: F) -> Result<RunResult>
where
    F: FnMut(&TrainOutcome) -> Result<()>,
{
    if config.seeds.len() < 2 {
        return Err(Error::Config {
            field: "seeds".into(),
            reason: "aggregation needs at least 2 seeds".into(),
        });
    }
    let mut done: Vec<SeedResult> = Vec::new();
    for &seed in &config.seeds {
        let r = train(config, backbone, data, seed).and_then(|o| {
            on_seed(&o)?;
            Ok(o.result)
        });
        match r {
            Ok(res) => done.push(res),
            Err(e) => {
                return Err(Error::PartialSeeds {
                    completed: done.iter().map(|s| s.seed).collect(),
                    source: Box::new(e),
                })
            }
        }
    }
    RunResult::from_seeds(config, done)
}
