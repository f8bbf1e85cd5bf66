//! Times cached against audio-input training steps on the 12-layer desk model.
//!
//! ```text
//! cargo run --release --example cache_speedup
//! ```

use std::time::Instant;

use fcft::cache::{build_cache, CacheDtype, CacheReader, CachedSplit};
use fcft::data::{generate_synthetic_corpus, CorpusSpec, Split};
use fcft::experiment::Source;
use fcft::model::{ForwardOptions, FreezePlan, Model, ModelConfig};
use fcft::objectives::{multitask_loss, DEFAULT_EPS};
use fcft::optim::{single_precision_step, AdamW, AdamWConfig};
use fcft::rng;

fn median_step(model: &Model<f32>, src: &Source) -> fcft::Result<f64> {
    let mut m = model.clone();
    let mut opt = AdamW::new(AdamWConfig::default());
    let idx: Vec<usize> = (0..src.len()).collect();
    let mut times = Vec::new();
    for step in 0..6 {
        let t0 = Instant::now();
        let batch = src.batch(&idx)?;
        let mut r = rng::stream(step, 9);
        single_precision_step(&mut m, &mut opt, |m, g, b| {
            let out = m.forward_graph(g, b, batch.input.as_input(), ForwardOptions::train(), &mut r)?;
            multitask_loss(g, out.predictions, &batch.labels, DEFAULT_EPS)
        })?;
        if step > 0 {
            times.push(t0.elapsed().as_secs_f64());
        }
    }
    times.sort_by(|a, b| a.total_cmp(b));
    Ok(times[times.len() / 2])
}

fn main() -> fcft::Result<()> {
    let root = std::env::temp_dir().join("fcft-speedup-example");
    let _ = std::fs::remove_dir_all(&root);
    let spec = CorpusSpec {
        train: 8,
        dev: 1,
        test: 1,
        min_seconds: 2.0,
        max_seconds: 2.0,
        ..CorpusSpec::default()
    };
    let data = generate_synthetic_corpus(&spec, 0, &root.join("corpus"))?.load_split(Split::Train)?;
    let cfg = ModelConfig::desk_deep();
    for n in [1, 2, 3] {
        let mut model = Model::<f32>::build(cfg.clone(), 0)?;
        model.apply_freeze_plan(FreezePlan::CachingPartial { n })?;
        let split_layer = cfg.n_layers - n;
        let dir = root.join(format!("cache{n}"));
        build_cache(&model, data.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice())), split_layer, &dir, CacheDtype::F32)?;
        let cached = Source::Cached {
            split: CachedSplit::load(&CacheReader::open(&dir, Some(&model))?, &data)?,
            split_layer,
        };
        let raw = Source::Raw(data.clone());
        let (t_raw, t_cached) = (median_step(&model, &raw)?, median_step(&model, &cached)?);
        println!(
            "{} frozen layers: audio {:.0} ms, cached {:.0} ms, {:.0}% less time per step",
            split_layer,
            1e3 * t_raw,
            1e3 * t_cached,
            100.0 * (1.0 - t_cached / t_raw)
        );
    }
    Ok(())
}
