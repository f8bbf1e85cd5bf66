//! Repeated training runs compared byte for byte.

use std::path::Path;

use fcft::data::{generate_synthetic_corpus, Corpus, CorpusSpec};
use fcft::experiment::{load_config, load_data, train, TrainOutcome};
use fcft::model::Model;
use fcft::Result;

pub fn corpus(dir: &Path) -> Result<Corpus> {
    let spec = CorpusSpec {
        train: 12,
        dev: 4,
        test: 4,
        min_seconds: 0.05,
        max_seconds: 0.12,
        ..CorpusSpec::default()
    };
    generate_synthetic_corpus(&spec, 11, dir)
}

/// Trains the tiny model once with `overrides` applied to the default config.
pub fn run(corpus: &Corpus, cache: &Path, overrides: &[&str], seed: u64) -> Result<TrainOutcome> {
    let mut ov: Vec<String> = vec!["epochs=2".into(), "batch_size=4".into()];
    ov.extend(overrides.iter().map(|s| s.to_string()));
    let mut config = load_config(None, &ov)?;
    config.model = super::tiny();
    let backbone = Model::build(config.model.clone(), config.backbone_seed)?;
    let data = load_data(&config, &backbone, corpus, Some(cache))?;
    train(&config, &backbone, &data, seed)
}

pub struct Comparison {
    pub best_equal: bool,
    pub last_equal: bool,
    pub log_equal: bool,
    pub other_seed_differs: bool,
}

impl Comparison {
    pub fn ok(&self) -> bool {
        self.best_equal && self.last_equal && self.log_equal && self.other_seed_differs
    }
}

fn bytes(o: &TrainOutcome) -> (Vec<u8>, Vec<u8>) {
    let best = fcft::checkpoint::Checkpoint {
        model: o.best.clone(),
        optimizer: None,
        scaler: None,
    };
    (best.to_bytes().unwrap(), o.last.to_bytes().unwrap())
}

/// Same seed twice, then a different seed.
pub fn compare(overrides: &[&str]) -> Result<Comparison> {
    let dir = tempfile::tempdir().expect("temp dir");
    let corpus = corpus(&dir.path().join("corpus"))?;
    let cache = dir.path().join("cache");
    let a = run(&corpus, &cache, overrides, 3)?;
    let b = run(&corpus, &cache, overrides, 3)?;
    let c = run(&corpus, &cache, overrides, 4)?;
    let (ba, la) = bytes(&a);
    let (bb, lb) = bytes(&b);
    let (_, lc) = bytes(&c);
    Ok(Comparison {
        best_equal: ba == bb,
        last_equal: la == lb,
        log_equal: a.log == b.log,
        other_seed_differs: la != lc,
    })
}

pub const SETTINGS: [&[&str]; 4] = [
    &["freeze={\"mode\":\"full\"}"],
    &["freeze={\"mode\":\"lora\"}", "precision=mixed"],
    &["freeze={\"mode\":\"partial\",\"n\":1}"],
    &["freeze={\"mode\":\"caching_partial\",\"n\":1}", "cached=true"],
];
