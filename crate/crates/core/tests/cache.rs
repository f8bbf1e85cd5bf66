use std::fs;

use fcft::autodiff::{op_counts, reset_op_counts, Graph};
use fcft::cache::{
    build_cache, fingerprint, verify_cache_equivalence, CacheDtype, CacheEntry, CacheReader, CachedSplit,
    ENTRY_DIR, MANIFEST_FILE,
};
use fcft::data::{Dataset, Sample, Split};
use fcft::model::{ForwardOptions, FreezePlan, Input, Model, ModelConfig};
use fcft::objectives::{multitask_loss, DEFAULT_EPS};
use fcft::rng;
use fcft::tensor::Tensor;
use fcft::Error;
use rand::Rng as _;

fn cached_model(seed: u64, n: usize) -> Model<f32> {
    let mut m = Model::build(ModelConfig::desk(), seed).unwrap();
    m.apply_freeze_plan(FreezePlan::CachingPartial { n }).unwrap();
    m
}

fn dataset(lengths: &[usize], seed: u64) -> Dataset {
    let mut r = rng::stream(seed, 3);
    Dataset {
        split: Split::Train,
        items: lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| Sample {
                id: format!("s{i}"),
                audio: (0..n).map(|_| r.gen_range(-0.5f32..0.5)).collect(),
                labels: [r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)],
            })
            .collect(),
    }
}

fn build(m: &Model<f32>, d: &Dataset, split: usize, dir: &std::path::Path) -> fcft::cache::BuildReport {
    let samples = d.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice()));
    build_cache(m, samples, split, dir, CacheDtype::F32).unwrap()
}

#[test]
fn one_file_per_sample_and_payload_is_the_prefix_output() {
    let m = cached_model(0, 3);
    let d = dataset(&[1200, 1600, 2000], 1);
    let dir = tempfile::tempdir().unwrap();
    let report = build(&m, &d, 1, dir.path());
    assert_eq!(fs::read_dir(dir.path().join(ENTRY_DIR)).unwrap().count(), 3);
    assert!(dir.path().join(MANIFEST_FILE).is_file());
    let on_disk: u64 = fs::read_dir(dir.path().join(ENTRY_DIR))
        .unwrap()
        .map(|e| e.unwrap().metadata().unwrap().len())
        .sum::<u64>()
        + fs::metadata(dir.path().join(MANIFEST_FILE)).unwrap().len();
    assert_eq!(report.bytes_written, on_disk);

    let reader = CacheReader::open(dir.path(), Some(&m)).unwrap();
    for s in &d.items {
        let e = reader.read(&s.id).unwrap();
        let x = Tensor::new(vec![1, s.audio.len()], s.audio.clone()).unwrap();
        let direct = m.forward_prefix(&x, 1).unwrap();
        assert_eq!(e.tensor().data(), direct.data());
        assert_eq!(e.frames, m.config().frames(s.audio.len()).unwrap());
    }
}

#[test]
fn rebuild_is_bitwise_identical() {
    let m = cached_model(0, 3);
    let d = dataset(&[1000, 1300], 2);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build(&m, &d, 1, a.path());
    build(&m, &d, 1, b.path());
    for s in &d.items {
        let rel = format!("{ENTRY_DIR}/{}.w2cc", s.id);
        assert_eq!(fs::read(a.path().join(&rel)).unwrap(), fs::read(b.path().join(&rel)).unwrap());
    }
    assert_eq!(
        fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
        fs::read(b.path().join(MANIFEST_FILE)).unwrap()
    );
    // Same weights into the same directory is allowed.
    build(&m, &d, 1, a.path());
}

#[test]
fn integrity_errors_are_distinct() {
    let m = cached_model(0, 3);
    let d = dataset(&[1000, 1300], 3);
    let dir = tempfile::tempdir().unwrap();
    build(&m, &d, 1, dir.path());
    let reader = CacheReader::open(dir.path(), Some(&m)).unwrap();
    assert!(matches!(reader.read("nope"), Err(Error::MissingSample(_))));

    let f0 = dir.path().join(ENTRY_DIR).join("s0.w2cc");
    let bytes = fs::read(&f0).unwrap();
    fs::write(&f0, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(reader.read("s0"), Err(Error::Truncated { .. })));

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    fs::write(&f0, &bad).unwrap();
    assert!(matches!(reader.read("s0"), Err(Error::BadMagic { .. })));

    fs::remove_file(&f0).unwrap();
    assert!(matches!(reader.read("s0"), Err(Error::Io { .. })));

    // Entry from another split layer under the right name.
    let other = CacheEntry::decode(&bytes, &f0).unwrap();
    let moved = CacheEntry {
        split_layer: 2,
        ..other
    };
    fs::write(&f0, moved.encode()).unwrap();
    assert!(matches!(reader.read("s0"), Err(Error::CacheHeader { .. })));
}

#[test]
fn fingerprint_is_checked_before_any_entry_is_read() {
    let m = cached_model(0, 3);
    let d = dataset(&[1000, 1300], 4);
    let dir = tempfile::tempdir().unwrap();
    build(&m, &d, 1, dir.path());
    fs::remove_dir_all(dir.path().join(ENTRY_DIR)).unwrap();
    let other = cached_model(1, 3);
    assert!(matches!(
        CacheReader::open(dir.path(), Some(&other)),
        Err(Error::Fingerprint { .. })
    ));
    // A differently initialised head leaves the prefix fingerprint alone.
    let mut reheaded = m.clone();
    reheaded.reinit_heads(99);
    assert_eq!(fingerprint(&m, 1).unwrap(), fingerprint(&reheaded, 1).unwrap());
}

#[test]
fn existing_cache_of_other_weights_is_never_overwritten() {
    let d = dataset(&[1000, 1300], 5);
    let dir = tempfile::tempdir().unwrap();
    build(&cached_model(0, 3), &d, 1, dir.path());
    let before = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
    let samples = d.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice()));
    let r = build_cache(&cached_model(1, 3), samples, 1, dir.path(), CacheDtype::F32);
    assert!(matches!(r, Err(Error::CacheClash(_))));
    assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), before);
}

#[test]
fn cache_needs_a_caching_plan_at_the_same_split() {
    let d = dataset(&[1000, 1300], 6);
    let dir = tempfile::tempdir().unwrap();
    let samples = d.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice()));
    let r = build_cache(&cached_model(0, 3), samples, 2, dir.path(), CacheDtype::F32);
    assert!(matches!(r, Err(Error::Contract(_))));
    let full = Model::build(ModelConfig::desk(), 0).unwrap();
    let samples = d.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice()));
    assert!(matches!(
        build_cache(&full, samples, 1, dir.path(), CacheDtype::F32),
        Err(Error::Contract(_))
    ));
}

#[test]
fn cached_steps_run_no_conv_or_attention_below_the_split() {
    let m = cached_model(0, 1);
    let d = dataset(&[1600, 1600, 1200], 7);
    let dir = tempfile::tempdir().unwrap();
    build(&m, &d, 3, dir.path());
    let split = CachedSplit::load(&CacheReader::open(dir.path(), Some(&m)).unwrap(), &d).unwrap();
    let batch = split.batch(&[0, 1, 2]).unwrap();

    let step = |input: Input<'_, f32>, labels: &Tensor<f32>| {
        let mut g = Graph::new();
        let mut b = m.binder();
        let mut r = rng::stream(0, 1);
        reset_op_counts();
        let out = m.forward_graph(&mut g, &mut b, input, ForwardOptions::train(), &mut r).unwrap();
        let l = multitask_loss(&mut g, out.predictions, labels, DEFAULT_EPS).unwrap();
        g.backward(l).unwrap();
        op_counts()
    };
    let cached = step(
        Input::Hidden {
            states: &batch.representations,
            start_layer: 3,
        },
        &batch.labels,
    );
    assert_eq!(cached.conv1d, 0);
    assert_eq!(cached.attention, 1);

    let raw = fcft::data::RawBatch::assemble(&d, &[0, 1, 2]).unwrap();
    let full = step(Input::Audio(&raw.audio), &raw.labels);
    assert_eq!(full.conv1d as usize, m.config().fe_channels.len() + 1);
    assert_eq!(full.attention, 4);
}

#[test]
fn cached_and_audio_paths_agree() {
    let m = cached_model(0, 3);
    let uniform = dataset(&[1600; 4], 8);
    let mixed = dataset(&[1600, 1200, 800, 1600], 9);
    let r = verify_cache_equivalence(&m, &uniform, &mixed, 1, 1e-5, None).unwrap();
    assert!(r.passed, "{r:?}");
    assert!(r.uniform_prediction_diff <= 1e-5 && r.uniform_gradient_diff <= 1e-5);
    assert!(r.longest_divergence <= 1e-5);
    assert_eq!(r.mixed[0].padded_frames, 0);
    assert!(r.mixed[2].padded_frames > 0);

    // Through files as well.
    let dir = tempfile::tempdir().unwrap();
    let mut both = uniform.clone();
    both.items.extend(mixed.items.iter().map(|s| Sample {
        id: format!("m{}", s.id),
        ..s.clone()
    }));
    build(&m, &both, 1, dir.path());
    let reader = CacheReader::open(dir.path(), Some(&m)).unwrap();
    let mut mixed_renamed = mixed.clone();
    for s in &mut mixed_renamed.items {
        s.id = format!("m{}", s.id);
    }
    let r2 = verify_cache_equivalence(&m, &uniform, &mixed_renamed, 1, 1e-5, Some(&reader)).unwrap();
    assert!(r2.passed, "{r2:?}");
}

#[test]
fn identical_copies_do_not_diverge_among_rows() {
    let m = cached_model(0, 3);
    let one = dataset(&[1400], 10).items.remove(0);
    let copies = Dataset {
        split: Split::Train,
        items: (0..3)
            .map(|i| Sample {
                id: format!("c{i}"),
                ..one.clone()
            })
            .collect(),
    };
    let r = verify_cache_equivalence(&m, &copies, &copies, 1, 1e-5, None).unwrap();
    let d0 = r.mixed[0].divergence;
    assert!(r.mixed.iter().all(|s| s.divergence == d0 && s.padded_frames == 0));
}

#[test]
fn equivalence_refuses_other_weights_and_uneven_uniform_sets() {
    let m = cached_model(0, 3);
    let d = dataset(&[1000, 1000], 11);
    let dir = tempfile::tempdir().unwrap();
    build(&m, &d, 1, dir.path());
    let reader = CacheReader::open(dir.path(), None).unwrap();
    let other = cached_model(1, 3);
    assert!(matches!(
        verify_cache_equivalence(&other, &d, &d, 1, 1e-5, Some(&reader)),
        Err(Error::Contract(_))
    ));
    let uneven = dataset(&[1000, 1100], 12);
    assert!(matches!(
        verify_cache_equivalence(&m, &uneven, &d, 1, 1e-5, None),
        Err(Error::Contract(_))
    ));
}

#[test]
fn half_payload_round_trips_on_the_binary16_grid() {
    let m = cached_model(0, 3);
    let d = dataset(&[1000, 1300], 13);
    let dir = tempfile::tempdir().unwrap();
    let samples = d.items.iter().map(|s| (s.id.as_str(), s.audio.as_slice()));
    build_cache(&m, samples, 1, dir.path(), CacheDtype::F16).unwrap();
    let reader = CacheReader::open(dir.path(), Some(&m)).unwrap();
    let e = reader.read("s0").unwrap();
    let x = Tensor::new(vec![1, 1000], d.items[0].audio.clone()).unwrap();
    let direct = m.forward_prefix(&x, 1).unwrap();
    assert_eq!(e.tensor().data(), direct.to_half().data());
}
