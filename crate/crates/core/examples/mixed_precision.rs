//! Mixed-precision training of the desk model on a tiny corpus, printing
//! every loss-scale change.

use fcft::data::{generate_synthetic_corpus, CorpusSpec, Split};
use fcft::experiment::{load_config, train, Precision, Source, TrainData};
use fcft::model::Model;
use serde_json::Value;

fn main() -> fcft::Result<()> {
    let dir = std::env::temp_dir().join("fcft-mixed-example");
    let spec = CorpusSpec {
        train: 48,
        dev: 8,
        test: 8,
        ..CorpusSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, 0, &dir)?;
    let data = TrainData {
        train: Source::Raw(corpus.load_split(Split::Train)?),
        dev: Source::Raw(corpus.load_split(Split::Dev)?),
        test: Source::Raw(corpus.load_split(Split::Test)?),
    };
    let mut config = load_config(None, &["epochs=2".into(), "batch_size=8".into()])?;
    config.precision = Precision::Mixed;
    let backbone = Model::build(config.model.clone(), config.backbone_seed)?;
    let out = train(&config, &backbone, &data, 0)?;

    for line in &out.log {
        let ev: Value = serde_json::from_str(line).expect("log lines are JSON");
        if ev["event"] == "step" && !ev["scale_event"].is_null() {
            println!(
                "epoch {} step {:>2}: {} -> scale {}  loss {}",
                ev["epoch"], ev["step"], ev["scale_event"], ev["loss_scale"], ev["loss"]
            );
        }
    }
    let r = &out.result;
    println!("test CCC act {:.3} val {:.3}", r.test.activation, r.test.valence);
    Ok(())
}
