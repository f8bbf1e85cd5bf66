//! Caches the frozen prefix of a partially frozen desk model, reopens the
//! cache with a fingerprint check and compares both training paths.

use fcft::cache::{build_cache, verify_cache_equivalence, CacheDtype, CacheReader};
use fcft::data::{generate_synthetic_corpus, CorpusSpec, Dataset, Split};
use fcft::model::{FreezePlan, Model, ModelConfig};

fn main() -> fcft::Result<()> {
    let root = std::env::temp_dir().join("fcft-cache-example");
    let _ = std::fs::remove_dir_all(&root);
    let spec = CorpusSpec {
        train: 14,
        dev: 3,
        test: 3,
        min_seconds: 0.5,
        max_seconds: 2.0,
        ..CorpusSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, 0, &root.join("corpus"))?;
    let data = corpus.load_split(Split::Train)?;

    let mut model = Model::<f32>::build(ModelConfig::desk(), 0)?;
    model.apply_freeze_plan(FreezePlan::CachingPartial { n: 3 })?;
    let split_layer = 1;
    let samples = data.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice()));
    let report = build_cache(&model, samples, split_layer, &root.join("cache"), CacheDtype::F32)?;
    println!(
        "cached {} samples at layer {split_layer}, {} bytes",
        report.manifest.entries.len(),
        report.bytes_written
    );

    let reader = CacheReader::open(&root.join("cache"), Some(&model))?;
    let m = reader.manifest();
    println!("fingerprint {} at layer {}, {} entries", &m.fingerprint[..12], m.split_layer, m.entries.len());
    let first = reader.read(&data.items[0].id)?;
    println!("{}: {} frames x {} dims", first.sample_id, first.frames, first.dim);

    // Two same-length copies for the training-step comparison.
    let uniform = Dataset {
        split: Split::Train,
        items: vec![data.items[0].clone(), fcft::data::Sample { id: "copy".into(), ..data.items[0].clone() }],
    };
    let eq = verify_cache_equivalence(&model, &uniform, &data, split_layer, 1e-5, None)?;
    println!(
        "step loss diff {:.1e}, gradient diff {:.1e}, longest sample {:.1e}, passed {}",
        eq.uniform_loss_diff, eq.uniform_gradient_diff, eq.longest_divergence, eq.passed
    );
    for s in &eq.mixed {
        println!("  {:<8} padded {:>4} frames  divergence {:.2e}", s.sample_id, s.padded_frames, s.divergence);
    }
    Ok(())
}
