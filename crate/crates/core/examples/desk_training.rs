//! Generates a synthetic corpus and finetunes the desk model on it.
//!
//! ```text
//! cargo run --release --example desk_training -- [plan] [overrides...]
//! cargo run --release --example desk_training -- partial3 optimizer.lr=0.0002
//! ```
//!
//! `corpus.{min,max}_seconds=` and `corpus.{min,max}_mod_hz=` reshape the corpus.

use fcft::data::{generate_synthetic_corpus, CorpusSpec, Split};
use fcft::experiment::{load_config, train, Source, TrainData};
use fcft::model::{FreezePlan, Model};

fn main() -> fcft::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let plan = FreezePlan::parse_short(&args.next().unwrap_or_else(|| "full".into()))?;
    let (corpus_args, overrides): (Vec<String>, Vec<String>) = args.partition(|a| a.starts_with("corpus."));

    let dir = std::env::temp_dir().join("fcft-desk-corpus");
    let mut spec = CorpusSpec {
        train: 500,
        dev: 100,
        test: 100,
        ..CorpusSpec::default()
    };
    for a in &corpus_args {
        let (key, value) = a.split_once('=').unwrap_or((a, ""));
        let v: f64 = value.parse().map_err(|_| fcft::Error::Parameter(format!("bad value in `{a}`")))?;
        match key {
            "corpus.min_seconds" => spec.min_seconds = v,
            "corpus.max_seconds" => spec.max_seconds = v,
            "corpus.min_mod_hz" => spec.min_mod_hz = v,
            "corpus.max_mod_hz" => spec.max_mod_hz = v,
            _ => return Err(fcft::Error::Parameter(format!("unknown corpus setting `{key}`"))),
        }
    }
    let corpus = generate_synthetic_corpus(&spec, 0, &dir)?;

    let mut config = load_config(None, &overrides)?;
    config.freeze = plan;
    let backbone = Model::build(config.model.clone(), config.backbone_seed)?;
    let data = TrainData {
        train: Source::Raw(corpus.load_split(Split::Train)?),
        dev: Source::Raw(corpus.load_split(Split::Dev)?),
        test: Source::Raw(corpus.load_split(Split::Test)?),
    };
    let out = train(&config, &backbone, &data, config.seeds[0])?;
    for e in &out.result.epochs {
        println!(
            "epoch {}  train loss {:.4}  dev CCC act {:.3} val {:.3}",
            e.epoch, e.train_loss, e.dev.activation, e.dev.valence
        );
    }
    let r = &out.result;
    println!(
        "{plan}: best epoch {}  test CCC act {:.3} val {:.3}  ({} trainable, {:.1}s)",
        r.best_epoch, r.test.activation, r.test.valence, r.trainable_params, r.train_seconds
    );
    Ok(())
}
