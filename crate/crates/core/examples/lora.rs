//! Attaches rank-8 adapters to the desk model and shows they start as a no-op.

use fcft::data::{generate_synthetic_corpus, CorpusSpec, RawBatch, Split};
use fcft::model::{counts, ForwardOptions, Input, LoraConfig, Model, ModelConfig};
use fcft::rng;

fn main() -> fcft::Result<()> {
    let cfg = ModelConfig::desk();
    let lora = LoraConfig::default();
    let base = Model::<f32>::build(cfg.clone(), 0)?;
    let mut adapted = base.clone();
    adapted.attach_lora(lora.clone(), 1)?;
    println!(
        "rank {} alpha {} targets {:?}: {} adapter params, {} trainable with heads",
        lora.rank,
        lora.alpha,
        lora.targets,
        counts::adapters(&cfg, &lora),
        adapted.count_trainable_params()
    );

    let dir = std::env::temp_dir().join("fcft-lora-example");
    let spec = CorpusSpec {
        train: 4,
        dev: 1,
        test: 1,
        ..CorpusSpec::default()
    };
    let data = generate_synthetic_corpus(&spec, 0, &dir)?.load_split(Split::Train)?;
    let batch = RawBatch::assemble(&data, &[0, 1, 2, 3])?;
    let run = |m: &Model<f32>| m.run(Input::Audio(&batch.audio), ForwardOptions::eval(), &mut rng::stream(0, 0));
    let (a, _) = run(&base)?;
    let (b, _) = run(&adapted)?;
    println!("zero-initialized B leaves predictions unchanged: {}", a == b);
    for (i, row) in b.data().chunks(2).enumerate() {
        println!("  sample {i}: activation {:+.4} valence {:+.4}", row[0], row[1]);
    }
    Ok(())
}
