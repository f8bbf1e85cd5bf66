//! Side-by-side comparison of the cached and the audio paths.

use serde::{Deserialize, Serialize};

use super::{assemble_batch, check_plan, fingerprint, CacheDtype, CacheEntry, CacheReader};
use crate::autodiff::{Graph, Mode};
use crate::data::{Dataset, RawBatch, Sample};
use crate::error::{Error, Result};
use crate::model::{Binder, ForwardOptions, Input, Model};
use crate::objectives::{multitask_loss, DEFAULT_EPS};
use crate::rng::{self, streams};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDivergence {
    pub sample_id: String,
    pub frames: usize,
    /// Frames of zero padding this sample received in the batch.
    pub padded_frames: usize,
    /// Max abs prediction difference between the two paths.
    pub divergence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub split_layer: usize,
    pub tolerance: f64,
    pub uniform_prediction_diff: f64,
    pub uniform_loss_diff: f64,
    pub uniform_gradient_diff: f64,
    pub mixed: Vec<SampleDivergence>,
    /// Largest divergence among the longest (unpadded) samples.
    pub longest_divergence: f64,
    pub passed: bool,
}

/// Predictions `[B×2]`, loss and trainable gradients of one train-mode step.
pub(crate) struct StepProbe {
    pub predictions: Tensor<f32>,
    pub loss: f32,
    pub gradients: Vec<(usize, Vec<f32>)>,
}

pub(crate) fn probe(model: &Model<f32>, input: Input<'_, f32>, labels: &Tensor<f32>, mode: Mode, seed: u64) -> Result<StepProbe> {
    let mut g = Graph::new();
    let mut b = Binder::new(model.params());
    let mut r = rng::stream(seed, streams::DROPOUT);
    let opts = ForwardOptions {
        mode,
        frozen_dropout: false,
    };
    let out = model.forward_graph(&mut g, &mut b, input, opts, &mut r)?;
    let loss = multitask_loss(&mut g, out.predictions, labels, DEFAULT_EPS)?;
    g.backward(loss)?;
    Ok(StepProbe {
        predictions: g.value(out.predictions).clone(),
        loss: g.value(loss).data()[0],
        gradients: b.gradients(&g),
    })
}

fn entries_for(model: &Model<f32>, samples: &[Sample], split_layer: usize, reader: Option<&CacheReader>) -> Result<Vec<CacheEntry>> {
    samples
        .iter()
        .map(|s| match reader {
            Some(r) => r.read(&s.id),
            None => {
                let x = Tensor::new(vec![1, s.audio.len()], s.audio.clone())?;
                CacheEntry::from_tensor(&s.id, split_layer, &model.forward_prefix(&x, split_layer)?, CacheDtype::F32)
            }
        })
        .collect()
}

fn max_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

/// Compares cached and audio-path training on `uniform` (all samples the
/// same length: predictions, loss and gradients of one train-mode step with
/// identical dropout draws) and per-sample eval predictions on `mixed`.
///
/// Entries come from `reader` when given (its fingerprint must match
/// `model`), otherwise they are computed on the fly.
pub fn verify_cache_equivalence(
    model: &Model<f32>,
    uniform: &Dataset,
    mixed: &Dataset,
    split_layer: usize,
    tolerance: f64,
    reader: Option<&CacheReader>,
) -> Result<EquivalenceReport> {
    check_plan(model, split_layer)?;
    if let Some(r) = reader {
        if r.manifest().fingerprint != fingerprint(model, split_layer)? {
            return Err(Error::Contract("cache was built from different weights".into()));
        }
        if r.manifest().dtype != CacheDtype::F32 {
            return Err(Error::Contract("equivalence is only defined for 32-bit caches".into()));
        }
    }
    if uniform.len() < 2 || mixed.len() < 2 {
        return Err(Error::BatchSize(uniform.len().min(mixed.len())));
    }
    let len0 = uniform.items[0].audio.len();
    if uniform.items.iter().any(|s| s.audio.len() != len0) {
        return Err(Error::Contract("uniform fixture has samples of different lengths".into()));
    }
    let all: Vec<usize> = (0..uniform.len()).collect();
    let raw = RawBatch::assemble(uniform, &all)?;
    let entries = entries_for(model, &uniform.items, split_layer, reader)?;
    let refs: Vec<&CacheEntry> = entries.iter().collect();
    let labels: Vec<[f64; 2]> = uniform.items.iter().map(|s| s.labels).collect();
    let cached = assemble_batch(&refs, &labels)?;
    let a = probe(model, Input::Audio(&raw.audio), &raw.labels, Mode::Train, 0)?;
    let c = probe(
        model,
        Input::Hidden {
            states: &cached.representations,
            start_layer: split_layer,
        },
        &cached.labels,
        Mode::Train,
        0,
    )?;
    let grad_diff = a
        .gradients
        .iter()
        .zip(&c.gradients)
        .map(|((i, ga), (j, gc))| {
            debug_assert_eq!(i, j);
            max_diff(ga, gc)
        })
        .fold(0.0, f64::max);

    let all: Vec<usize> = (0..mixed.len()).collect();
    let raw = RawBatch::assemble(mixed, &all)?;
    let entries = entries_for(model, &mixed.items, split_layer, reader)?;
    let refs: Vec<&CacheEntry> = entries.iter().collect();
    let labels: Vec<[f64; 2]> = mixed.items.iter().map(|s| s.labels).collect();
    let cached_m = assemble_batch(&refs, &labels)?;
    let mut unused = rng::stream(0, 0);
    let (pa, _) = model.run(Input::Audio(&raw.audio), ForwardOptions::eval(), &mut unused)?;
    let (pc, _) = model.run(
        Input::Hidden {
            states: &cached_m.representations,
            start_layer: split_layer,
        },
        ForwardOptions::eval(),
        &mut unused,
    )?;
    let t_max = cached_m.representations.shape()[1];
    let max_len = mixed.items.iter().map(|s| s.audio.len()).max().unwrap_or(0);
    let mut rows = Vec::new();
    let mut longest = 0.0f64;
    for (i, (s, e)) in mixed.items.iter().zip(&entries).enumerate() {
        let d = max_diff(&pa.data()[i * 2..i * 2 + 2], &pc.data()[i * 2..i * 2 + 2]);
        if s.audio.len() == max_len {
            longest = longest.max(d);
        }
        rows.push(SampleDivergence {
            sample_id: s.id.clone(),
            frames: e.frames,
            padded_frames: t_max - e.frames,
            divergence: d,
        });
    }
    let pred_diff = max_diff(a.predictions.data(), c.predictions.data());
    let loss_diff = (a.loss - c.loss).abs() as f64;
    let passed = pred_diff <= tolerance && loss_diff <= tolerance && grad_diff <= tolerance && longest <= tolerance;
    Ok(EquivalenceReport {
        split_layer,
        tolerance,
        uniform_prediction_diff: pred_diff,
        uniform_loss_diff: loss_diff,
        uniform_gradient_diff: grad_diff,
        mixed: rows,
        longest_divergence: longest,
        passed,
    })
}
