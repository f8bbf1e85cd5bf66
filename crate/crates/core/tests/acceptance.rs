//! End-to-end acceptance run. One line per criterion; exits nonzero when any
//! criterion fails.
//!
//! `cargo test --test acceptance` runs everything; `-- 3 4` runs a subset.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use fcft::autodiff::Graph;
use fcft::cache::{build_cache, verify_cache_equivalence, CacheDtype, CacheReader, CachedSplit};
use fcft::data::{generate_synthetic_corpus, CorpusSpec, Dataset, Split};
use fcft::experiment::stats::{anova_oneway, bonferroni, paired_t, welch_t};
use fcft::experiment::{load_config, train, Source, TrainData};
use fcft::model::{counts, ForwardOptions, FreezePlan, LoraConfig, Model, ModelConfig};
use fcft::objectives::{multitask_loss, DEFAULT_EPS};
use fcft::optim::{AdamW, AdamWConfig};
use fcft::rng;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn parameter_counts() -> Result<String, String> {
    let t0 = Instant::now();
    let cfg = ModelConfig::base_equivalent();
    let lora = LoraConfig::default();
    let want = [
        (FreezePlan::Full, "90M"),
        (FreezePlan::Partial { n: 3 }, "26M"),
        (FreezePlan::Partial { n: 2 }, "19M"),
        (FreezePlan::Partial { n: 1 }, "12M"),
        (FreezePlan::Lora, "300K"),
        (FreezePlan::CachingPartial { n: 3 }, "21M"),
        (FreezePlan::CachingPartial { n: 2 }, "14M"),
        (FreezePlan::CachingPartial { n: 1 }, "7M"),
    ];
    let mut model = Model::<f32>::build(cfg.clone(), 0).map_err(e)?;
    let mut shown = Vec::new();
    for (plan, label) in want {
        let closed = counts::trainable(&cfg, plan, &lora);
        if plan == FreezePlan::Lora {
            model.attach_lora(lora.clone(), 0).map_err(e)?;
        } else {
            model.apply_freeze_plan(plan).map_err(e)?;
        }
        let enumerated = model.count_trainable_params();
        ensure(enumerated == closed, format!("{plan}: enumerated {enumerated}, closed form {closed}"))?;
        let d = counts::display(closed);
        ensure(d == label, format!("{plan}: {closed} shows as {d}, want {label}"))?;
        shown.push(d);
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 1.0, format!("took {secs:.2}s"))?;
    Ok(format!("{}", shown.join(" ")))
}

fn gradients() -> Result<String, String> {
    use common::grad::{end_to_end_multitask_loss, primitives, FIXTURES, TOL_F32, TOL_F64};
    let (mut w64, mut w32) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for (name, case) in primitives().into_iter().chain([("multitask_loss", end_to_end_multitask_loss as fn() -> [f64; 2])]) {
        let [e64, e32] = case();
        ensure(e64 <= TOL_F64 && e32 <= TOL_F32, format!("{name}: f64 {e64:.2e}, f32 {e32:.2e}"))?;
        w64 = w64.max(e64);
        w32 = w32.max(e32);
        cases += 1;
    }
    Ok(format!("{cases} cases x {FIXTURES} fixtures, worst f64 {w64:.1e}, f32 {w32:.1e}"))
}

fn corpus_split(dir: &Path, spec: &CorpusSpec, seed: u64) -> Dataset {
    generate_synthetic_corpus(spec, seed, dir).unwrap().load_split(Split::Train).unwrap()
}

fn cached_sources(model: &Model<f32>, data: &Dataset, split_layer: usize, dir: &Path) -> Source {
    let samples = data.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice()));
    build_cache(model, samples, split_layer, dir, CacheDtype::F32).unwrap();
    let reader = CacheReader::open(dir, Some(model)).unwrap();
    Source::Cached {
        split: CachedSplit::load(&reader, data).unwrap(),
        split_layer,
    }
}

/// Loss and trainable gradients of one train-mode step.
fn step_grads(m: &Model<f32>, src: &Source, idx: &[usize], seed: u64) -> (f64, Vec<(usize, Vec<f32>)>) {
    let batch = src.batch(idx).unwrap();
    let mut g = Graph::new();
    let mut b = m.binder();
    let mut r = rng::stream(seed, 77);
    let out = m.forward_graph(&mut g, &mut b, batch.input.as_input(), ForwardOptions::train(), &mut r).unwrap();
    let l = multitask_loss(&mut g, out.predictions, &batch.labels, DEFAULT_EPS).unwrap();
    g.backward(l).unwrap();
    (g.value(l).data()[0] as f64, b.gradients(&g))
}

fn cache_equivalence() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(e)?;
    let plan = FreezePlan::CachingPartial { n: 3 };
    let cfg = ModelConfig::desk();
    let split_layer = cfg.n_layers - 3;
    let mut model = Model::build(cfg, 0).map_err(e)?;
    model.apply_freeze_plan(plan).map_err(e)?;

    let uniform = CorpusSpec {
        train: 8,
        dev: 2,
        test: 2,
        min_seconds: 1.0,
        max_seconds: 1.0,
        ..CorpusSpec::default()
    };
    let data = corpus_split(&tmp.path().join("uniform"), &uniform, 1);
    let raw = Source::Raw(data.clone());
    let cached = cached_sources(&model, &data, split_layer, &tmp.path().join("cache"));

    let (mut audio_model, mut cache_model) = (model.clone(), model.clone());
    let opt_cfg = AdamWConfig {
        lr: 1e-3,
        ..AdamWConfig::default()
    };
    let (mut opt_a, mut opt_c) = (AdamW::new(opt_cfg.clone()), AdamW::new(opt_cfg));
    let (mut loss_diff, mut grad_diff) = (0.0f64, 0.0f64);
    let steps: [&[usize]; 4] = [&[0, 1, 2, 3], &[4, 5, 6, 7], &[6, 1, 3, 4], &[2, 7, 0, 5]];
    for (s, idx) in steps.iter().enumerate() {
        let (la, ga) = step_grads(&audio_model, &raw, idx, s as u64);
        let (lc, gc) = step_grads(&cache_model, &cached, idx, s as u64);
        loss_diff = loss_diff.max((la - lc).abs());
        ensure(ga.len() == gc.len() && !ga.is_empty(), "gradient sets differ")?;
        for ((ia, va), (ic, vc)) in ga.iter().zip(&gc) {
            ensure(ia == ic, "gradient order differs")?;
            for (x, y) in va.iter().zip(vc) {
                grad_diff = grad_diff.max((x - y).abs() as f64);
            }
        }
        opt_a.step(audio_model.params_mut(), &ga).map_err(e)?;
        opt_c.step(cache_model.params_mut(), &gc).map_err(e)?;
    }
    ensure(loss_diff <= 1e-5, format!("per-step loss diff {loss_diff:.2e}"))?;
    ensure(grad_diff <= 1e-5, format!("per-step gradient diff {grad_diff:.2e}"))?;

    let mixed = CorpusSpec {
        train: 6,
        dev: 2,
        test: 2,
        min_seconds: 0.5,
        max_seconds: 1.5,
        ..CorpusSpec::default()
    };
    let mixed = corpus_split(&tmp.path().join("mixed"), &mixed, 2);
    let uniform4 = Dataset {
        split: Split::Train,
        items: data.items[..4].to_vec(),
    };
    let rep = verify_cache_equivalence(&model, &uniform4, &mixed, split_layer, 1e-5, None).map_err(e)?;
    ensure(rep.passed, format!("{rep:?}"))?;
    Ok(format!(
        "{} AdamW steps: loss {loss_diff:.1e}, grads {grad_diff:.1e}; longest mixed sample {:.1e}",
        steps.len(),
        rep.longest_divergence
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

/// Median seconds per training step (batch assembly, forward, backward, update).
fn step_seconds(model: &Model<f32>, src: &Source, steps: usize) -> f64 {
    let mut m = model.clone();
    let mut opt = AdamW::new(AdamWConfig::default());
    let idx: Vec<usize> = (0..src.len()).collect();
    let mut times = Vec::new();
    for s in 0..steps + 1 {
        let t0 = Instant::now();
        let (_, grads) = step_grads(&m, src, &idx, s as u64);
        opt.step(m.params_mut(), &grads).unwrap();
        if s > 0 {
            times.push(t0.elapsed().as_secs_f64());
        }
    }
    median(times)
}

fn cache_speedup() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(e)?;
    let cfg = ModelConfig::desk_deep();
    let spec = CorpusSpec {
        train: 8,
        dev: 2,
        test: 2,
        min_seconds: 2.0,
        max_seconds: 2.0,
        ..CorpusSpec::default()
    };
    let data = corpus_split(&tmp.path().join("corpus"), &spec, 3);
    let raw = Source::Raw(data.clone());
    let mut speedups = Vec::new();
    let mut shown = Vec::new();
    for n in [1, 2, 3] {
        let mut model = Model::build(cfg.clone(), 0).map_err(e)?;
        model.apply_freeze_plan(FreezePlan::CachingPartial { n }).map_err(e)?;
        let split = cfg.n_layers - n;
        let cached = cached_sources(&model, &data, split, &tmp.path().join(format!("cache{n}")));
        let t_raw = step_seconds(&model, &raw, 5);
        let t_cached = step_seconds(&model, &cached, 5);
        let speedup = 1.0 - t_cached / t_raw;
        shown.push(format!("n={n} {:.0}% ({:.0}/{:.0} ms)", 100.0 * speedup, 1e3 * t_cached, 1e3 * t_raw));
        speedups.push(speedup);
    }
    let summary = shown.join(", ");
    ensure(speedups[2] >= 0.40, format!("9 frozen layers only {:.0}% faster: {summary}", 100.0 * speedups[2]))?;
    ensure(
        speedups[0] > speedups[1] && speedups[1] > speedups[2],
        format!("speedup not monotonic in frozen layers: {summary}"),
    )?;
    Ok(summary)
}

fn mixed_precision() -> Result<String, String> {
    use common::mixed::{inject_overflow, train, Toy};
    let toy = Toy::new(0);
    let sp = train(&toy, 400, false);
    let mp = train(&toy, 400, true);
    ensure(mp.shadows_in_sync, "half copies drifted from to_half(master)")?;
    ensure(mp.masters_off_half_grid, "master weights collapsed onto the binary16 grid")?;
    let p = inject_overflow(&Toy::new(1));
    ensure(!p.applied && p.scale_after == p.scale_before / 2.0, "overflow did not halve and skip")?;
    ensure(p.masters_unchanged && p.shadows_unchanged && p.optimizer_untouched, "skipped step changed state")?;
    let rel = (mp.final_loss - sp.final_loss).abs() / sp.final_loss;
    ensure(rel <= 0.10, format!("toy loss sp {:.4e} mp {:.4e}", sp.final_loss, mp.final_loss))?;
    Ok(format!("toy loss within {:.2}%, {} of 400 mixed steps applied", 100.0 * rel, mp.applied))
}

fn lora() -> Result<String, String> {
    let cfg = ModelConfig {
        n_layers: 2,
        ..ModelConfig::desk()
    };
    let l = LoraConfig::default();
    let base = Model::<f32>::build(cfg.clone(), 4).map_err(e)?;
    let mut adapted = base.clone();
    adapted.attach_lora(l.clone(), 9).map_err(e)?;
    let spec = CorpusSpec {
        train: 3,
        dev: 1,
        test: 1,
        min_seconds: 0.4,
        max_seconds: 0.4,
        ..CorpusSpec::default()
    };
    let tmp = tempfile::tempdir().map_err(e)?;
    let data = corpus_split(tmp.path(), &spec, 5);
    let audio = fcft::data::RawBatch::assemble(&data, &[0, 1, 2]).map_err(e)?.audio;
    let eval = ForwardOptions::eval();
    let r = || rng::stream(0, 0);
    let (pb, _) = base.run(fcft::model::Input::Audio(&audio), eval, &mut r()).map_err(e)?;
    let (pa, _) = adapted.run(fcft::model::Input::Audio(&audio), eval, &mut r()).map_err(e)?;
    ensure(pb.data() == pa.data(), "zero-initialized adapters changed the output")?;

    // Nonzero B: the adapted model equals the base with W + (alpha/r)·A·B merged in.
    let mut adapted = adapted.cast::<f64>();
    let mut merged = base.cast::<f64>();
    let mut draw = rng::stream(6, 6);
    for p in adapted.params_mut().iter_mut() {
        if p.path.ends_with("lora_b") {
            use rand::Rng as _;
            let v: Vec<f64> = (0..p.tensor.len()).map(|_| draw.gen_range(-0.1..0.1)).collect();
            p.tensor = fcft::tensor::Tensor::new(p.tensor.shape().to_vec(), v).map_err(e)?;
        }
    }
    let scale = l.alpha / l.rank as f64;
    for layer in 0..cfg.n_layers {
        for proj in ["q", "k", "v", "o"].into_iter().filter(|p| l.targets(p)) {
            let prefix = format!("encoder.layer.{layer}.attn.{proj}");
            let a = &adapted.params().get(&format!("{prefix}.lora_a")).unwrap().tensor;
            let b = &adapted.params().get(&format!("{prefix}.lora_b")).unwrap().tensor;
            let (din, r, dout) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let w = &mut merged.params_mut().get_mut(&format!("{prefix}.weight")).unwrap().tensor;
            let mut wd = w.data().to_vec();
            for i in 0..din {
                for j in 0..dout {
                    wd[i * dout + j] += scale * (0..r).map(|k| a.data()[i * r + k] * b.data()[k * dout + j]).sum::<f64>();
                }
            }
            *w = fcft::tensor::Tensor::new(w.shape().to_vec(), wd).map_err(e)?;
        }
    }
    let audio = audio.cast::<f64>();
    let (pa, _) = adapted.run(fcft::model::Input::Audio(&audio), eval, &mut r()).map_err(e)?;
    let (pm, _) = merged.run(fcft::model::Input::Audio(&audio), eval, &mut r()).map_err(e)?;
    let moved = pa.data().iter().zip(base.run(fcft::model::Input::Audio(&audio.cast()), eval, &mut r()).map_err(e)?.0.data()).any(|(x, y)| (*x as f32) != *y);
    ensure(moved, "nonzero B left the output unchanged")?;
    let merge_diff = pa.data().iter().zip(pm.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ensure(merge_diff <= 1e-10, format!("adapter output differs from merged weights by {merge_diff:.2e}"))?;

    let enumerated: usize = adapted.params().iter().filter(|p| p.path.contains(".lora_")).map(|p| p.tensor.len()).sum();
    let formula = cfg.n_layers * 2 * 2 * l.rank * cfg.d_model;
    ensure(
        enumerated == formula && formula == counts::adapters(&cfg, &l),
        format!("adapter params: enumerated {enumerated}, formula {formula}"),
    )?;
    let base_eq = ModelConfig::base_equivalent();
    let base_formula = base_eq.n_layers * 2 * 2 * l.rank * base_eq.d_model;
    ensure(counts::adapters(&base_eq, &l) == base_formula, "base-equivalent adapter count")?;
    Ok(format!("zero-init bitwise equal; merged-weight diff {merge_diff:.1e}; {enumerated} adapter params (base-equivalent {base_formula})"))
}

fn statistics() -> Result<String, String> {
    let close = |got: f64, want: f64, what: &str| ensure((got - want).abs() <= 1e-8, format!("{what}: {got:e} vs {want:e}"));
    let r = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0]]).map_err(e)?;
    ensure(r.f == 1.5, format!("F = {}", r.f))?;
    close(r.p, 0.2878641347266906620, "ANOVA p")?;
    let better = [0.648, 0.655, 0.640, 0.651, 0.649];
    let base = [0.637, 0.641, 0.652, 0.629, 0.626];
    let worse = [0.622, 0.610, 0.631, 0.625, 0.618];
    let r = anova_oneway(&[base.to_vec(), better.to_vec(), worse.to_vec()]).map_err(e)?;
    close(r.p, 0.00066784402546000711982, "ANOVA p (3 groups)")?;
    close(welch_t(&better, &base).map_err(e)?.p, 0.067646421552056702007, "Welch p")?;
    let wt = welch_t(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0, 10.0, 12.0]).map_err(e)?;
    close(wt.p, 0.031824443780841513198, "Welch p (unequal n)")?;
    close(paired_t(&better, &base).map_err(e)?.p, 0.1407780190240137040, "paired p")?;
    for (p, m) in [(0.01, 4), (0.3, 4), (0.25, 4), (0.0125, 1), (0.004, 12)] {
        let want = (m as f64 * p).min(1.0);
        ensure(bonferroni(p, m) == want, format!("bonferroni({p}, {m})"))?;
    }
    Ok("ANOVA F = 1.5 exactly; 5 p-values within 1e-8; Bonferroni exact".into())
}

const DESK_RECIPE: [&str; 3] = ["epochs=5", "batch_size=8", "optimizer.lr=0.0003"];

fn training_sanity() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(e)?;
    let spec = CorpusSpec {
        train: 500,
        dev: 100,
        test: 100,
        ..CorpusSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, 0, tmp.path()).map_err(e)?;
    let data = TrainData {
        train: Source::Raw(corpus.load_split(Split::Train).map_err(e)?),
        dev: Source::Raw(corpus.load_split(Split::Dev).map_err(e)?),
        test: Source::Raw(corpus.load_split(Split::Test).map_err(e)?),
    };
    let t0 = Instant::now();
    let mut dev = Vec::new();
    for plan in ["full", "partial3"] {
        let ov: Vec<String> = DESK_RECIPE.iter().map(|s| s.to_string()).collect();
        let mut config = load_config(None, &ov).map_err(e)?;
        config.freeze = FreezePlan::parse_short(plan).map_err(e)?;
        let backbone = Model::build(config.model.clone(), config.backbone_seed).map_err(e)?;
        let out = train(&config, &backbone, &data, config.seeds[0]).map_err(e)?;
        dev.push(out.result.dev);
    }
    let (full, part) = (dev[0], dev[1]);
    let summary = format!(
        "full dev act {:.3} val {:.3}; partial3 act {:.3} val {:.3} ({:.0}% / {:.0}% of full); {:.0}s",
        full.activation,
        full.valence,
        part.activation,
        part.valence,
        100.0 * part.activation / full.activation,
        100.0 * part.valence / full.valence,
        t0.elapsed().as_secs_f64()
    );
    ensure(full.activation >= 0.7 && full.valence >= 0.7, format!("full below 0.7: {summary}"))?;
    ensure(
        part.activation >= 0.9 * full.activation && part.valence >= 0.9 * full.valence,
        format!("partial3 below 0.9x full: {summary}"),
    )?;
    Ok(summary)
}

fn determinism() -> Result<String, String> {
    use common::determinism::{compare, SETTINGS};
    for overrides in SETTINGS {
        let c = compare(overrides).map_err(e)?;
        ensure(c.ok(), format!(
            "{overrides:?}: best {} final {} log {} seed-sensitive {}",
            c.best_equal, c.last_equal, c.log_equal, c.other_seed_differs
        ))?;
    }
    Ok(format!("{} configs: checkpoints and logs bitwise equal on rerun", SETTINGS.len()))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("parameter counts", parameter_counts),
        ("gradient correctness", gradients),
        ("cache equivalence", cache_equivalence),
        ("caching speedup", cache_speedup),
        ("mixed precision", mixed_precision),
        ("LoRA", lora),
        ("statistics oracle", statistics),
        ("training sanity", training_sanity),
        ("determinism", determinism),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n} {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n} {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
