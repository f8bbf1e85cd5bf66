//! Finite-difference fixtures for every differentiable primitive and the
//! end-to-end multitask loss.

use fcft::autodiff::gradcheck::check;
use fcft::autodiff::{Graph, Mode};
use fcft::model::{LoraConfig, Model};

use super::tiny;
use fcft::objectives::{multitask_loss, DEFAULT_EPS};
use fcft::rng;
use fcft::tensor::{Real, Tensor};
use rand::Rng as _;

pub const FIXTURES: u64 = 20;
pub const TOL_F64: f64 = 1e-6;
pub const TOL_F32: f64 = 1e-3;

fn random<T: Real>(shape: &[usize], seed: u64, salt: u64) -> Tensor<T> {
    let mut r = rng::stream(seed, 1000 + salt);
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape.to_vec(), &v).unwrap()
}

/// Runs the same graph body in f64 (step 1e-5) and f32 (step 1e-2) for every
/// fixture seed and returns the worst normwise error of each.
macro_rules! primitive {
    ($name:ident, |$seed:ident, $t:ident| $inputs:expr, |$g:ident, $v:ident| $body:expr) => {
        pub fn $name() -> [f64; 2] {
            let mut worst = [0.0f64; 2];
            for $seed in 0..FIXTURES {
                {
                    type $t = f64;
                    let inputs: Vec<Tensor<$t>> = $inputs;
                    let r = check(&inputs, 1e-5, |$g: &mut Graph<$t>, $v| $body).unwrap();
                    worst[0] = worst[0].max(r.max_rel_error());
                }
                {
                    type $t = f32;
                    let inputs: Vec<Tensor<$t>> = $inputs;
                    let r = check(&inputs, 1e-2, |$g: &mut Graph<$t>, $v| $body).unwrap();
                    worst[1] = worst[1].max(r.max_rel_error());
                }
            }
            worst
        }
    };
}

// Weighted sums turn tensor outputs into scalars without symmetric cancellation.
fn weigh<T: Real>(g: &mut Graph<T>, x: fcft::autodiff::Var, seed: u64) -> fcft::Result<fcft::autodiff::Var> {
    let shape = g.value(x).shape().to_vec();
    let w = g.input(random(&shape, seed, 77));
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

primitive!(matmul, |s, T| vec![random::<T>(&[3, 4], s, 0), random(&[4, 5], s, 1)], |g, v| {
    let y = g.matmul(v[0], v[1])?;
    weigh(g, y, s)
});

primitive!(add_and_mul, |s, T| vec![random::<T>(&[2, 3], s, 0), random(&[2, 3], s, 1)], |g, v| {
    let a = g.add(v[0], v[1])?;
    let m = g.mul(a, v[0])?;
    let sc = g.scale(m, T::from_f64(0.7));
    weigh(g, sc, s)
});

primitive!(add_bias, |s, T| vec![random::<T>(&[4, 3], s, 0), random(&[3], s, 1)], |g, v| {
    let y = g.add_bias(v[0], v[1])?;
    weigh(g, y, s)
});

primitive!(gelu, |s, T| vec![random::<T>(&[12], s, 0).map(|x| x * T::from_f64(3.0))], |g, v| {
    let y = g.gelu(v[0]);
    weigh(g, y, s)
});

primitive!(softmax, |s, T| vec![random::<T>(&[3, 5], s, 0).map(|x| x * T::from_f64(2.0))], |g, v| {
    let y = g.softmax(v[0])?;
    weigh(g, y, s)
});

primitive!(
    layer_norm,
    |s, T| vec![random::<T>(&[4, 6], s, 0), random(&[6], s, 1), random(&[6], s, 2)],
    |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
        weigh(g, y, s)
    }
);

primitive!(
    conv1d_strided,
    |s, T| vec![random::<T>(&[2, 2, 11], s, 0), random(&[3, 2, 3], s, 1), random(&[3], s, 2)],
    |g, v| {
        let y = g.conv1d(v[0], v[1], Some(v[2]), 2, 1, 0)?;
        weigh(g, y, s)
    }
);

primitive!(
    conv1d_grouped_padded,
    |s, T| vec![random::<T>(&[1, 4, 7], s, 0), random(&[4, 2, 4], s, 1)],
    |g, v| {
        let y = g.conv1d(v[0], v[1], None, 1, 2, 2)?;
        let y = g.narrow_last(y, 7)?;
        weigh(g, y, s)
    }
);

primitive!(dropout_fixed_mask, |s, T| vec![random::<T>(&[5, 4], s, 0)], |g, v| {
    let mut r = rng::stream(s, 5);
    let y = g.dropout(v[0], 0.3, Mode::Train, &mut r)?;
    weigh(g, y, s)
});

primitive!(mean_over_time, |s, T| vec![random::<T>(&[2, 5, 3], s, 0)], |g, v| {
    let y = g.mean_over_time(v[0])?;
    weigh(g, y, s)
});

primitive!(layout_ops, |s, T| vec![random::<T>(&[2, 3, 4], s, 0)], |g, v| {
    let y = g.swap_last2(v[0])?;
    let y = g.narrow_last(y, 2)?;
    let y = g.reshape(y, &[2, 8])?;
    weigh(g, y, s)
});

primitive!(
    attention,
    |s, T| vec![random::<T>(&[6, 4], s, 0), random(&[6, 4], s, 1), random(&[6, 4], s, 2)],
    |g, v| {
        let y = g.attention(v[0], v[1], v[2], 2, 3, 2)?;
        weigh(g, y, s)
    }
);

primitive!(columns_and_ccc, |s, T| vec![random::<T>(&[6, 2], s, 0)], |g, v| {
    let labels: Tensor<T> = random(&[6], s, 9);
    let a = g.column(v[0], 0)?;
    let b = g.column(v[0], 1)?;
    let swapped = g.concat_cols(&[b, a])?;
    let c = g.column(swapped, 0)?;
    g.ccc_loss(c, labels.data(), DEFAULT_EPS)
});

/// Loss of `model` on a fixed batch with a fixed dropout stream.
fn loss<T: Real>(model: &Model<T>, audio: &Tensor<T>, labels: &Tensor<T>, seed: u64, grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let mut b = model.binder();
    let mut r = rng::stream(seed, 6);
    let out = model
        .forward_graph(
            &mut g,
            &mut b,
            fcft::model::Input::Audio(audio),
            fcft::model::ForwardOptions::train(),
            &mut r,
        )
        .unwrap();
    let l = multitask_loss(&mut g, out.predictions, labels, DEFAULT_EPS).unwrap();
    let value = g.value(l).data()[0].as_f64();
    if !grads {
        return (value, Vec::new());
    }
    g.backward(l).unwrap();
    let gr = b
        .gradients(&g)
        .into_iter()
        .map(|(_, v)| v.into_iter().map(|x| x.as_f64()).collect())
        .collect();
    (value, gr)
}

fn fixture_model(seed: u64, lora: bool) -> Model<f64> {
    let mut m = Model::<f64>::build(tiny(), seed).unwrap();
    if lora {
        m.attach_lora(LoraConfig::default(), seed).unwrap();
        for p in m.params_mut().iter_mut() {
            if p.path.ends_with("lora_b") {
                let t = random::<f64>(p.tensor.shape(), seed, 31).map(|x| x * 0.3);
                p.tensor = t;
            }
        }
    }
    for p in m.params_mut().iter_mut() {
        p.trainable = true;
    }
    m
}

fn normwise(a: &[f64], n: &[f64]) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(n).map(|v| v.abs()).fold(0.0, f64::max);
    diff / scale
}

/// Normwise relative error over the parameter vector, sampled at up to six
/// coordinates of every tensor. The f32 gradient is compared with the same
/// f64 central differences.
fn end_to_end(seed: u64, lora: bool) -> (f64, f64) {
    let m64 = fixture_model(seed, lora);
    let audio: Tensor<f64> = random(&[3, 40], seed, 10);
    let labels: Tensor<f64> = random::<f64>(&[3, 2], seed, 11).map(|x| 0.5 + 0.4 * x);
    let (_, g64) = loss(&m64, &audio, &labels, seed, true);
    let m32: Model<f32> = m64.cast();
    let (_, g32) = loss(&m32, &audio.cast(), &labels.cast(), seed, true);

    let h = 1e-5;
    let mut pick = rng::stream(seed, 12);
    let (mut an64, mut an32, mut num) = (Vec::new(), Vec::new(), Vec::new());
    for (pi, (a64, a32)) in g64.iter().zip(&g32).enumerate() {
        let n = a64.len();
        for _ in 0..n.min(6) {
            let j = pick.gen_range(0..n);
            let mut m = m64.clone();
            let orig = m.params().by_index(pi).tensor.data()[j];
            m.params_mut().by_index_mut(pi).tensor.data_mut()[j] = orig + h;
            let (plus, _) = loss(&m, &audio, &labels, seed, false);
            m.params_mut().by_index_mut(pi).tensor.data_mut()[j] = orig - h;
            let (minus, _) = loss(&m, &audio, &labels, seed, false);
            num.push((plus - minus) / (2.0 * h));
            an64.push(a64[j]);
            an32.push(a32[j]);
        }
    }
    (normwise(&an64, &num), normwise(&an32, &num))
}

/// Worst f64 and f32 errors of the end-to-end loss over all fixtures;
/// odd seeds carry LoRA adapters with nonzero `B`.
pub fn end_to_end_multitask_loss() -> [f64; 2] {
    let mut worst = [0.0f64; 2];
    for seed in 0..FIXTURES {
        let (a, b) = end_to_end(seed, seed % 2 == 1);
        worst = [worst[0].max(a), worst[1].max(b)];
    }
    worst
}

pub type Case = (&'static str, fn() -> [f64; 2]);

pub fn primitives() -> Vec<Case> {
    vec![
        ("matmul", matmul),
        ("add/mul/scale", add_and_mul),
        ("add_bias", add_bias),
        ("gelu", gelu),
        ("softmax", softmax),
        ("layer_norm", layer_norm),
        ("conv1d strided", conv1d_strided),
        ("conv1d grouped padded", conv1d_grouped_padded),
        ("dropout", dropout_fixed_mask),
        ("mean_over_time", mean_over_time),
        ("swap/narrow/reshape", layout_ops),
        ("attention", attention),
        ("column/concat/ccc", columns_and_ccc),
    ]
}
