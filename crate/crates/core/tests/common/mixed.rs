//! Linear least-squares toy trained with and without emulated half precision.

use fcft::autodiff::{Graph, Var};
use fcft::model::{Binder, ParamStore};
use fcft::optim::{mixed_precision_step, single_precision_step, AdamW, AdamWConfig, LossScaler};
use fcft::rng;
use fcft::tensor::Tensor;
use fcft::Result;
use rand::Rng as _;
use rand_distr::StandardNormal;

pub const ROWS: usize = 64;
pub const FEATURES: usize = 8;

pub struct Toy {
    pub x: Tensor<f32>,
    pub y: Tensor<f32>,
}

impl Toy {
    pub fn new(seed: u64) -> Self {
        let mut r = rng::stream(seed, 40);
        let w: Vec<f32> = (0..FEATURES).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x: Vec<f32> = (0..ROWS * FEATURES).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y: Vec<f32> = x
            .chunks(FEATURES)
            .map(|row| row.iter().zip(&w).map(|(a, b)| a * b).sum::<f32>() + 0.3 + 0.05 * r.sample::<f32, _>(StandardNormal))
            .collect();
        Self {
            x: Tensor::new(vec![ROWS, FEATURES], x).unwrap(),
            y: Tensor::new(vec![ROWS, 1], y).unwrap(),
        }
    }

    pub fn params() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.insert("head.activation.weight", Tensor::zeros(vec![FEATURES, 1])).unwrap();
        s.insert("head.activation.bias", Tensor::zeros(vec![1])).unwrap();
        for p in s.iter_mut() {
            p.trainable = true;
        }
        s
    }

    /// Mean squared error, scaled by `blow_up`.
    pub fn loss(&self, g: &mut Graph<f32>, b: &mut Binder<'_, f32>, blow_up: f32) -> Result<Var> {
        let w = b.get(g, "head.activation.weight")?;
        let bias = b.get(g, "head.activation.bias")?;
        let x = g.input(self.x.clone());
        let neg_y = g.input(self.y.map(|v| -v));
        let p = g.matmul(x, w)?;
        let p = g.add_bias(p, bias)?;
        let d = g.add(p, neg_y)?;
        let sq = g.mul(d, d)?;
        let s = g.sum(sq);
        Ok(g.scale(s, blow_up / ROWS as f32))
    }

    pub fn eval(&self, store: &ParamStore<f32>) -> f64 {
        let mut g = Graph::new();
        let mut b = Binder::new(store);
        let l = self.loss(&mut g, &mut b, 1.0).unwrap();
        g.value(l).data()[0] as f64
    }
}

pub struct ToyRun {
    pub final_loss: f64,
    pub applied: usize,
    pub skipped: usize,
    /// Half copies equalled `to_half(master)` after every applied step.
    pub shadows_in_sync: bool,
    /// Some master value lies off the binary16 grid at the end.
    pub masters_off_half_grid: bool,
}

fn opt() -> AdamW<f32> {
    AdamW::new(AdamWConfig {
        lr: 1e-2,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    })
}

pub fn train(toy: &Toy, steps: usize, mixed: bool) -> ToyRun {
    let mut master = Toy::params();
    let mut half = master.to_half();
    let mut opt = opt();
    let mut scaler = LossScaler::default();
    let (mut applied, mut skipped, mut in_sync) = (0, 0, true);
    for _ in 0..steps {
        let out = if mixed {
            mixed_precision_step(&mut master, &mut half, &mut opt, &mut scaler, |_, g: &mut Graph<f32>, b: &mut Binder<'_, f32>| {
                toy.loss(g, b, 1.0)
            })
        } else {
            single_precision_step(&mut master, &mut opt, |_, g: &mut Graph<f32>, b: &mut Binder<'_, f32>| toy.loss(g, b, 1.0))
        }
        .unwrap();
        if out.applied {
            applied += 1;
            if mixed {
                in_sync &= half == master.to_half();
            }
        } else {
            skipped += 1;
        }
    }
    let off_grid = master.iter().any(|p| p.tensor != p.tensor.to_half());
    ToyRun {
        final_loss: toy.eval(&master),
        applied,
        skipped,
        shadows_in_sync: in_sync,
        masters_off_half_grid: off_grid,
    }
}

pub struct OverflowProbe {
    pub scale_before: f64,
    pub scale_after: f64,
    pub applied: bool,
    pub masters_unchanged: bool,
    pub shadows_unchanged: bool,
    pub optimizer_untouched: bool,
}

/// One mixed step whose loss is pushed past the binary16 range.
pub fn inject_overflow(toy: &Toy) -> OverflowProbe {
    let mut master = Toy::params();
    for p in master.iter_mut() {
        p.tensor = p.tensor.map(|_| 0.5);
    }
    let mut half = master.to_half();
    let (m0, h0) = (master.clone(), half.clone());
    let mut opt = opt();
    let mut scaler = LossScaler {
        scale: 1024.0,
        ..LossScaler::default()
    };
    let before = scaler.scale;
    let out = mixed_precision_step(&mut master, &mut half, &mut opt, &mut scaler, |_, g: &mut Graph<f32>, b: &mut Binder<'_, f32>| {
        toy.loss(g, b, 1e5)
    })
    .unwrap();
    OverflowProbe {
        scale_before: before,
        scale_after: scaler.scale,
        applied: out.applied,
        masters_unchanged: master == m0,
        shadows_unchanged: half == h0,
        optimizer_untouched: opt.t == 0,
    }
}
