//! Audio ingestion, label scaling, the synthetic corpus and raw-audio batching.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const LABEL_MIN: f64 = 1.0;
pub const LABEL_MAX: f64 = 7.0;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// Maps a rating on the 1–7 scale onto `[0, 1]`.
pub fn scale_labels(raw: f64) -> Result<f64> {
    if !(LABEL_MIN..=LABEL_MAX).contains(&raw) {
        return Err(Error::LabelRange {
            value: raw,
            lo: LABEL_MIN,
            hi: LABEL_MAX,
        });
    }
    Ok((raw - LABEL_MIN) / (LABEL_MAX - LABEL_MIN))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub sample_id: String,
    /// Relative to the corpus root.
    pub audio: PathBuf,
    pub split: Split,
    pub activation_raw: f64,
    pub valence_raw: f64,
}

impl ManifestRecord {
    pub fn scaled_labels(&self) -> Result<[f64; 2]> {
        Ok([scale_labels(self.activation_raw)?, scale_labels(self.valence_raw)?])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub rate: u32,
}

/// Reads a 16 kHz mono PCM16 WAV file into `[−1, 1)`.
pub fn load_audio(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let bad = |field, found: String, expected: &str| Error::AudioFormat {
        path: path.to_path_buf(),
        field,
        found,
        expected: expected.into(),
    };
    if spec.channels != 1 {
        return Err(bad("channels", spec.channels.to_string(), "1"));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(bad("sample_rate", spec.sample_rate.to_string(), "16000"));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(bad(
            "encoding",
            format!("{:?}{}", spec.sample_format, spec.bits_per_sample),
            "PCM16",
        ));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Waveform {
        samples,
        rate: SAMPLE_RATE,
    })
}

/// Quantizes to PCM16 (round to nearest, clamped) and writes a mono WAV.
pub fn write_audio(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(quantize(s))?;
    }
    w.finalize()?;
    Ok(())
}

fn quantize(s: f32) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Manifest plus the directory its audio paths are relative to.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Corpus {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ManifestRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(r);
        }
        let c = Self {
            root: root.to_path_buf(),
            records,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.sample_id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id `{}`", r.sample_id)));
            }
            r.scaled_labels()?;
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Decodes every sample of `split` into memory.
    pub fn load_split(&self, split: Split) -> Result<Dataset> {
        let recs = self.split(split);
        if recs.is_empty() {
            return Err(Error::Data(format!("split `{split}` is empty")));
        }
        let mut items = Vec::with_capacity(recs.len());
        for r in recs {
            let w = load_audio(&self.root.join(&r.audio))?;
            items.push(Sample {
                id: r.sample_id.clone(),
                audio: w.samples,
                labels: r.scaled_labels()?,
            });
        }
        Ok(Dataset { split, items })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub audio: Vec<f32>,
    /// Scaled to `[0, 1]`: activation, valence.
    pub labels: [f64; 2],
}

/// One split held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub items: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Tensor<f64> {
        let data = self.items.iter().flat_map(|s| s.labels).collect();
        Tensor::new(vec![self.items.len(), 2], data).expect("two labels per sample")
    }
}

/// Zero-padded audio batch.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBatch {
    pub ids: Vec<String>,
    /// `[B×T_max]`
    pub audio: Tensor<f32>,
    pub true_lengths: Vec<usize>,
    /// `[B×2]`
    pub labels: Tensor<f32>,
}

impl RawBatch {
    pub fn assemble(data: &Dataset, indices: &[usize]) -> Result<Self> {
        let t_max = indices
            .iter()
            .map(|&i| data.items[i].audio.len())
            .max()
            .ok_or(Error::EmptyDimension { op: "batch" })?;
        let mut audio = vec![0.0f32; indices.len() * t_max];
        let mut labels = Vec::with_capacity(indices.len() * 2);
        let mut lens = Vec::with_capacity(indices.len());
        let mut ids = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            let s = &data.items[i];
            audio[row * t_max..row * t_max + s.audio.len()].copy_from_slice(&s.audio);
            labels.extend(s.labels.iter().map(|&v| v as f32));
            lens.push(s.audio.len());
            ids.push(s.id.clone());
        }
        Ok(Self {
            ids,
            audio: Tensor::new(vec![indices.len(), t_max], audio)?,
            true_lengths: lens,
            labels: Tensor::new(vec![indices.len(), 2], labels)?,
        })
    }
}

/// Index lists for one epoch: shuffled by `(seed, epoch)`, chunked, with a
/// trailing single-sample batch dropped because CCC needs two samples.
pub fn batch_plan(n: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Data("cannot batch an empty split".into()));
    }
    if batch_size < 2 {
        return Err(Error::Parameter(format!("batch size {batch_size} < 2")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut rng::epoch_stream(seed, streams::SHUFFLE, epoch));
    }
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if out.last().map(|b| b.len()) == Some(1) {
        let dropped = out.pop().expect("non-empty");
        log::warn!("dropping single-sample remainder batch (index {})", dropped[0]);
    }
    Ok(out)
}

/// Shuffled, padded batches of `data` for one epoch.
pub fn make_batches(data: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<RawBatch>> {
    batch_plan(data.len(), batch_size, seed, epoch, true)?
        .iter()
        .map(|idx| RawBatch::assemble(data, idx))
        .collect()
}

/// Shape of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// Amplitude-modulation rate range in Hz.
    pub min_mod_hz: f64,
    pub max_mod_hz: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self::with_total(700)
    }
}

impl CorpusSpec {
    /// `n` samples split 70/15/15 (rounded, remainder to train).
    pub fn with_total(n: usize) -> Self {
        let dev = (n as f64 * 0.15).round() as usize;
        let test = dev;
        Self {
            train: n - dev - test,
            dev,
            test,
            min_seconds: 0.5,
            max_seconds: 1.0,
            min_mod_hz: 10.0,
            max_mod_hz: 50.0,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.dev + self.test
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::Config {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if !(self.min_seconds > 0.0 && self.min_seconds <= self.max_seconds) {
            return bad("min_seconds", "need 0 < min_seconds ≤ max_seconds");
        }
        if !(self.min_mod_hz > 0.0 && self.min_mod_hz < self.max_mod_hz) {
            return bad("min_mod_hz", "need 0 < min_mod_hz < max_mod_hz");
        }
        if self.total() == 0 {
            return bad("train", "corpus would be empty");
        }
        Ok(())
    }
}

/// Generator parameters of one synthetic sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub samples: usize,
    pub gain: f64,
    pub mod_hz: f64,
    pub phase: f64,
}

/// Bandpass biquad (constant 0 dB peak gain).
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn bandpass(center_hz: f64, q: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * center_hz / SAMPLE_RATE as f64;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * w.cos() / a0, (1.0 - alpha) / a0],
            z: [0.0; 2],
        }
    }

    fn run(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

const CARRIER_HZ: f64 = 1000.0;
const CARRIER_Q: f64 = 0.7;
/// Headroom so that unit-RMS noise at full gain rarely clips.
const PEAK_HEADROOM: f64 = 0.25;
/// Quietest sample gain; near-silent clips would carry no modulation cue.
const MIN_GAIN: f64 = 0.25;

/// Band-limited noise under a raised-cosine envelope at `mod_hz`, scaled by
/// `gain`. Deterministic in `rng`.
pub fn synthesize(p: &SynthParams, rng: &mut rng::Rng) -> Vec<f32> {
    let mut bq = Biquad::bandpass(CARRIER_HZ, CARRIER_Q);
    let mut noise: Vec<f64> = (0..p.samples)
        .map(|_| bq.run(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let rms = (noise.iter().map(|v| v * v).sum::<f64>() / p.samples.max(1) as f64).sqrt();
    if rms > 0.0 {
        noise.iter_mut().for_each(|v| *v /= rms);
    }
    let tau = 2.0 * std::f64::consts::PI;
    noise
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let env = 0.5 * (1.0 - (tau * p.mod_hz * t + p.phase).cos());
            (p.gain * PEAK_HEADROOM * env * n).clamp(-1.0, 1.0) as f32
        })
        .collect()
}

fn rms(xs: &[f32]) -> f64 {
    (xs.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / xs.len().max(1) as f64).sqrt()
}

/// `1 + 6·rms/max_rms`; silence maps to 1.
pub fn activation_raw(rms: f64, max_rms: f64) -> f64 {
    let a = if max_rms > 0.0 { rms / max_rms } else { 0.0 };
    (1.0 + 6.0 * a).clamp(LABEL_MIN, LABEL_MAX)
}

/// `1 + 6·(rate − min)/(max − min)`.
pub fn valence_raw(rate_hz: f64, min_hz: f64, max_hz: f64) -> f64 {
    (1.0 + 6.0 * (rate_hz - min_hz) / (max_hz - min_hz)).clamp(LABEL_MIN, LABEL_MAX)
}

/// Writes `audio/<id>.wav` files and `manifest.jsonl` under `out_dir`.
///
/// Activation is `1 + 6·rms/max_rms` over the corpus, measured on the
/// quantized audio; valence is `1 + 6·(rate − min)/(max − min)` of the
/// modulation rate.
pub fn generate_synthetic_corpus(spec: &CorpusSpec, seed: u64, out_dir: &Path) -> Result<Corpus> {
    spec.validate()?;
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let mut r = rng::stream(seed, streams::CORPUS);
    let n = spec.total();
    let mut waves = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for _ in 0..n {
        let secs = if spec.max_seconds > spec.min_seconds {
            r.gen_range(spec.min_seconds..=spec.max_seconds)
        } else {
            spec.min_seconds
        };
        let p = SynthParams {
            samples: (secs * SAMPLE_RATE as f64).round() as usize,
            gain: r.gen_range(MIN_GAIN..1.0),
            mod_hz: r.gen_range(spec.min_mod_hz..spec.max_mod_hz),
            phase: r.gen_range(0.0..std::f64::consts::TAU),
        };
        let w: Vec<f32> = synthesize(&p, &mut r).into_iter().map(|s| quantize(s) as f32 / 32768.0).collect();
        waves.push(w);
        rates.push(p.mod_hz);
    }
    let energies: Vec<f64> = waves.iter().map(|w| rms(w)).collect();
    let max_rms = energies.iter().copied().fold(0.0, f64::max);
    let mut records = Vec::with_capacity(n);
    let width = n.to_string().len().max(4);
    for (i, (w, &rate)) in waves.iter().zip(&rates).enumerate() {
        let split = if i < spec.train {
            Split::Train
        } else if i < spec.train + spec.dev {
            Split::Dev
        } else {
            Split::Test
        };
        let id = format!("syn{i:0width$}");
        let rel = PathBuf::from("audio").join(format!("{id}.wav"));
        write_audio(&out_dir.join(&rel), w)?;
        records.push(ManifestRecord {
            sample_id: id,
            audio: rel,
            split,
            activation_raw: activation_raw(energies[i], max_rms),
            valence_raw: valence_raw(rate, spec.min_mod_hz, spec.max_mod_hz),
        });
    }
    let mpath = out_dir.join(MANIFEST_FILE);
    let mut f = fs::File::create(&mpath).map_err(|e| Error::io(&mpath, e))?;
    for rec in &records {
        writeln!(f, "{}", serde_json::to_string(rec)?).map_err(|e| Error::io(&mpath, e))?;
    }
    Ok(Corpus {
        root: out_dir.to_path_buf(),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_scaling_endpoints() {
        assert_eq!(scale_labels(1.0).unwrap(), 0.0);
        assert_eq!(scale_labels(7.0).unwrap(), 1.0);
        assert_eq!(scale_labels(4.0).unwrap(), 0.5);
        assert!(matches!(scale_labels(7.5), Err(Error::LabelRange { .. })));
        assert!(scale_labels(0.99).is_err());
    }

    proptest! {
        #[test]
        fn scaling_inverts(raw in 1.0f64..=7.0) {
            let s = scale_labels(raw).unwrap();
            prop_assert!((1.0 + 6.0 * s - raw).abs() <= 1e-12);
        }

        #[test]
        fn scaling_is_monotone(a in 1.0f64..=7.0, b in 1.0f64..=7.0) {
            prop_assert_eq!(a < b, scale_labels(a).unwrap() < scale_labels(b).unwrap());
        }

        #[test]
        fn epoch_covers_split(n in 1usize..200, bs in 2usize..40, seed in 0u64..50, epoch in 0u64..5) {
            let plan = batch_plan(n, bs, seed, epoch, true).unwrap();
            let mut seen: Vec<usize> = plan.iter().flatten().copied().collect();
            prop_assert!(plan.iter().all(|b| b.len() >= 2 && b.len() <= bs));
            let dropped = n - seen.len();
            prop_assert!(dropped == 0 || (dropped == 1 && n % bs == 1));
            seen.sort();
            seen.dedup();
            prop_assert_eq!(seen.len(), n - dropped);
        }
    }

    #[test]
    fn batch_counts_and_determinism() {
        assert_eq!(batch_plan(64, 32, 0, 0, true).unwrap().len(), 2);
        let p = batch_plan(33, 32, 0, 0, true).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].len(), 32);
        assert_eq!(batch_plan(50, 8, 3, 2, true).unwrap(), batch_plan(50, 8, 3, 2, true).unwrap());
        assert_ne!(batch_plan(50, 8, 3, 2, true).unwrap(), batch_plan(50, 8, 3, 3, true).unwrap());
        assert!(matches!(batch_plan(0, 8, 0, 0, true), Err(Error::Data(_))));
    }

    #[test]
    fn padding_is_exact_zeros() {
        let data = Dataset {
            split: Split::Train,
            items: vec![
                Sample {
                    id: "a".into(),
                    audio: vec![0.5; 3],
                    labels: [0.0, 1.0],
                },
                Sample {
                    id: "b".into(),
                    audio: vec![-0.25; 5],
                    labels: [0.5, 0.5],
                },
            ],
        };
        let b = RawBatch::assemble(&data, &[0, 1]).unwrap();
        assert_eq!(b.audio.shape(), &[2, 5]);
        assert_eq!(&b.audio.data()[..5], &[0.5, 0.5, 0.5, 0.0, 0.0]);
        assert_eq!(b.true_lengths, vec![3, 5]);
    }
}
