//! The speech regressor: frozen conv front-end, convolutional positional
//! embedding, post-norm transformer stack, mean pooling, dropout and one
//! linear head per task.

use rand::Rng as _;
use rand::distributions::Uniform;

use super::config::{task_name, ModelConfig};
use super::freeze::{FreezePlan, LoraConfig};
use super::params::{Binder, Group, ParamStore};
use crate::autodiff::{Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::rng::{self, streams, Rng};
use crate::tensor::{Real, Tensor};

pub const PROJECTIONS: [&str; 4] = ["q", "k", "v", "o"];

/// What enters the network.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a, T> {
    /// Zero-padded waveforms `[B×T]`.
    Audio(&'a Tensor<T>),
    /// Representations `[B×T×d]` entering transformer block `start_layer`.
    Hidden {
        states: &'a Tensor<T>,
        start_layer: usize,
    },
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// Run dropout inside frozen blocks during training. Off by default so
    /// that frozen-prefix outputs are deterministic and cacheable.
    pub frozen_dropout: bool,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        Self {
            mode: Mode::Eval,
            frozen_dropout: false,
        }
    }

    pub fn train() -> Self {
        Self {
            mode: Mode::Train,
            frozen_dropout: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[B×n_tasks]`
    pub predictions: Var,
    /// `[B·T×d]` states: entry `j` is the input to block `first_layer + j`;
    /// the last entry is the stack output.
    pub hidden: Vec<Var>,
    pub first_layer: usize,
    pub batch: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    plan: FreezePlan,
    lora: Option<LoraConfig>,
}

fn uniform<T: Real>(shape: Vec<usize>, bound: f64, rng: &mut Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let dist = Uniform::new(-bound as f32, bound as f32);
    let data = rng.sample_iter(dist).take(n).map(|v| T::from_f64(v as f64)).collect();
    Tensor::new(shape, data).expect("shape/data agree")
}

/// Fan-in scaled uniform init: `U(−√(3·gain/fan_in), +√(3·gain/fan_in))`,
/// i.e. variance `gain/fan_in`.
fn fan_in_bound(fan_in: usize, gain: f64) -> f64 {
    (3.0 * gain / fan_in as f64).sqrt()
}

const FRONT_END_GAIN: f64 = 2.0;

/// Task heads start small so predictions begin near zero with little spread.
/// A CCC-trained head whose output starts far from the label mean with no
/// spread gets almost no gradient and can stay constant for several epochs.
const HEAD_GAIN: f64 = 0.01;

impl<T: Real> Model<T> {
    /// Deterministic construction from `(config, seed)`. All groups start
    /// trainable except the front-end (plan `full`).
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, streams::INIT);
        let mut p = ParamStore::new();
        let d = config.d_model;

        let mut c_in = 1;
        for (i, (&c, &k)) in config.fe_channels.iter().zip(&config.fe_kernels).enumerate() {
            let b = fan_in_bound(c_in * k, FRONT_END_GAIN);
            p.insert(format!("fe.conv.{i}.weight"), uniform(vec![c, c_in, k], b, &mut r))?;
            p.insert(format!("fe.conv.{i}.bias"), Tensor::zeros(vec![c]))?;
            c_in = c;
        }
        p.insert("fe.proj.weight", uniform(vec![c_in, d], fan_in_bound(c_in, 1.0), &mut r))?;
        p.insert("fe.proj.bias", Tensor::zeros(vec![d]))?;

        let cg = d / config.pos_groups;
        let b = fan_in_bound(cg * config.pos_kernel, 1.0);
        p.insert("pos.conv.weight", uniform(vec![d, cg, config.pos_kernel], b, &mut r))?;
        p.insert("pos.conv.bias", Tensor::zeros(vec![d]))?;
        p.insert("pos.norm.weight", Tensor::full(vec![d], T::one()))?;
        p.insert("pos.norm.bias", Tensor::zeros(vec![d]))?;

        let f = config.d_ffn;
        for l in 0..config.n_layers {
            let pre = format!("encoder.layer.{l}");
            for proj in PROJECTIONS {
                p.insert(format!("{pre}.attn.{proj}.weight"), uniform(vec![d, d], fan_in_bound(d, 1.0), &mut r))?;
                p.insert(format!("{pre}.attn.{proj}.bias"), Tensor::zeros(vec![d]))?;
            }
            p.insert(format!("{pre}.attn_norm.weight"), Tensor::full(vec![d], T::one()))?;
            p.insert(format!("{pre}.attn_norm.bias"), Tensor::zeros(vec![d]))?;
            p.insert(format!("{pre}.ffn.in.weight"), uniform(vec![d, f], fan_in_bound(d, 1.0), &mut r))?;
            p.insert(format!("{pre}.ffn.in.bias"), Tensor::zeros(vec![f]))?;
            p.insert(format!("{pre}.ffn.out.weight"), uniform(vec![f, d], fan_in_bound(f, 1.0), &mut r))?;
            p.insert(format!("{pre}.ffn.out.bias"), Tensor::zeros(vec![d]))?;
            p.insert(format!("{pre}.ffn_norm.weight"), Tensor::full(vec![d], T::one()))?;
            p.insert(format!("{pre}.ffn_norm.bias"), Tensor::zeros(vec![d]))?;
        }
        for t in 0..config.n_tasks {
            let name = task_name(t);
            p.insert(format!("head.{name}.weight"), uniform(vec![d, 1], fan_in_bound(d, HEAD_GAIN), &mut r))?;
            p.insert(format!("head.{name}.bias"), Tensor::zeros(vec![1]))?;
        }
        let mut model = Self {
            config,
            params: p,
            plan: FreezePlan::Full,
            lora: None,
        };
        model.refresh_trainable();
        Ok(model)
    }

    /// Reassembles a model from stored parts (checkpoint loading).
    pub fn from_parts(
        config: ModelConfig,
        params: ParamStore<T>,
        plan: FreezePlan,
        lora: Option<LoraConfig>,
    ) -> Result<Self> {
        config.validate()?;
        let reference = Model::<T>::build(config.clone(), 0)?;
        let mut expected: Vec<String> = reference.params.paths().iter().map(|s| s.to_string()).collect();
        if let Some(l) = &lora {
            expected.extend(adapter_paths(&config, l));
        }
        let got: Vec<&str> = params.paths();
        if got != expected {
            return Err(Error::Checkpoint("parameter paths do not match the config".into()));
        }
        for p in params.iter() {
            let want = reference
                .params
                .get(&p.path)
                .map(|r| r.tensor.shape().to_vec())
                .or_else(|| lora.as_ref().map(|l| adapter_shape(&config, l, &p.path)));
            if want.as_deref() != Some(p.tensor.shape()) {
                return Err(Error::Checkpoint(format!("shape mismatch for {}", p.path)));
            }
        }
        let mut m = Self {
            config,
            params,
            plan,
            lora,
        };
        m.refresh_trainable();
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn plan(&self) -> FreezePlan {
        self.plan
    }

    pub fn lora(&self) -> Option<&LoraConfig> {
        self.lora.as_ref()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            plan: self.plan,
            lora: self.lora.clone(),
        }
    }

    fn refresh_trainable(&mut self) {
        let n = self.config.n_layers;
        let plan = self.plan;
        for p in self.params.iter_mut() {
            p.trainable = plan.is_trainable(p.group, n);
        }
    }

    /// Sets trainable flags exactly as `plan` prescribes.
    pub fn apply_freeze_plan(&mut self, plan: FreezePlan) -> Result<()> {
        plan.validate(self.config.n_layers)?;
        self.plan = plan;
        self.refresh_trainable();
        Ok(())
    }

    /// Adds `B·A` adapters (scaled by `alpha/rank`) to the targeted attention
    /// projections of every layer and switches to the `lora` plan.
    /// `A` is fan-in uniform, `B` starts at zero.
    pub fn attach_lora(&mut self, cfg: LoraConfig, seed: u64) -> Result<()> {
        cfg.validate()?;
        if self.lora.is_some() {
            return Err(Error::State("LoRA adapters already attached".into()));
        }
        let mut r = rng::stream(seed, streams::LORA_INIT);
        let d = self.config.d_model;
        for path in adapter_paths(&self.config, &cfg) {
            let shape = adapter_shape(&self.config, &cfg, &path);
            let t = if path.ends_with("lora_a") {
                uniform(shape, fan_in_bound(d, 1.0), &mut r)
            } else {
                Tensor::zeros(shape)
            };
            self.params.insert(path, t)?;
        }
        self.lora = Some(cfg);
        self.apply_freeze_plan(FreezePlan::Lora)
    }

    /// Redraws the task heads from a run seed, leaving everything else intact.
    pub fn reinit_heads(&mut self, seed: u64) {
        let mut r = rng::stream(seed, streams::HEAD_INIT);
        let b = fan_in_bound(self.config.d_model, HEAD_GAIN);
        for p in self.params.iter_mut() {
            if p.group == Group::Head {
                if p.path.ends_with("weight") {
                    p.tensor = uniform(p.tensor.shape().to_vec(), b, &mut r);
                } else {
                    p.tensor = Tensor::zeros(p.tensor.shape().to_vec());
                }
            }
        }
    }

    pub fn count_trainable_params(&self) -> usize {
        self.params.trainable_count()
    }

    /// Whether block `layer` is being finetuned (own weights or adapters).
    pub fn layer_is_trainable(&self, layer: usize) -> bool {
        self.params
            .iter()
            .any(|p| p.trainable && matches!(p.group, Group::Layer(i) | Group::Adapter(i) if i == layer))
    }

    pub fn binder(&self) -> Binder<'_, T> {
        Binder::new(&self.params)
    }

    /// Builds the forward pass into `g`. `binder` decides where parameter
    /// values come from (master weights or a half-precision shadow).
    pub fn forward_graph(
        &self,
        g: &mut Graph<T>,
        binder: &mut Binder<'_, T>,
        input: Input<'_, T>,
        opts: ForwardOptions,
        rng: &mut Rng,
    ) -> Result<ForwardOutput> {
        self.forward_range(g, binder, input, self.config.n_layers, opts, rng, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_range(
        &self,
        g: &mut Graph<T>,
        binder: &mut Binder<'_, T>,
        input: Input<'_, T>,
        upto: usize,
        opts: ForwardOptions,
        rng: &mut Rng,
        heads: bool,
    ) -> Result<ForwardOutput> {
        let d = self.config.d_model;
        let (mut x, batch, frames, first_layer) = match input {
            Input::Audio(audio) => {
                let s = audio.shape();
                if s.len() != 2 {
                    return Err(Error::Dimension {
                        op: "forward",
                        lhs: s.to_vec(),
                        rhs: vec![],
                    });
                }
                let (batch, len) = (s[0], s[1]);
                let frames = self.config.frames(len).ok_or(Error::InputTooShort {
                    op: "forward",
                    len,
                    min: self.config.min_samples(),
                })?;
                let a = g.input(audio.clone());
                let x = self.front_end(g, binder, a, batch, len)?;
                let x = self.positional(g, binder, x, batch, frames)?;
                (x, batch, frames, 0)
            }
            Input::Hidden { states, start_layer } => {
                let s = states.shape();
                if s.len() != 3 || s[2] != d {
                    return Err(Error::Dimension {
                        op: "forward(hidden)",
                        lhs: s.to_vec(),
                        rhs: vec![d],
                    });
                }
                if start_layer > self.config.n_layers {
                    return Err(Error::Parameter(format!(
                        "start layer {start_layer} beyond {} layers",
                        self.config.n_layers
                    )));
                }
                if s[1] == 0 {
                    return Err(Error::EmptyDimension { op: "forward(hidden)" });
                }
                let x = g.input(states.clone().reshape(vec![s[0] * s[1], d])?);
                (x, s[0], s[1], start_layer)
            }
        };
        let mut hidden = vec![x];
        for l in first_layer..upto {
            let active = opts.mode == Mode::Train && (opts.frozen_dropout || self.layer_is_trainable(l));
            x = self.block(g, binder, l, x, batch, frames, active, opts.mode, rng)?;
            hidden.push(x);
        }
        let predictions = if heads {
            self.pool_and_heads(g, binder, x, batch, frames, opts.mode, rng)?
        } else {
            x
        };
        Ok(ForwardOutput {
            predictions,
            hidden,
            first_layer,
            batch,
            frames,
        })
    }

    fn linear(&self, g: &mut Graph<T>, b: &mut Binder<'_, T>, x: Var, prefix: &str) -> Result<Var> {
        let w = b.get(g, &format!("{prefix}.weight"))?;
        let bias = b.get(g, &format!("{prefix}.bias"))?;
        let y = g.matmul(x, w)?;
        g.add_bias(y, bias)
    }

    fn front_end(&self, g: &mut Graph<T>, b: &mut Binder<'_, T>, audio: Var, batch: usize, len: usize) -> Result<Var> {
        let mut a = g.reshape(audio, &[batch, 1, len])?;
        for (i, &s) in self.config.fe_strides.iter().enumerate() {
            let w = b.get(g, &format!("fe.conv.{i}.weight"))?;
            let bias = b.get(g, &format!("fe.conv.{i}.bias"))?;
            a = g.conv1d(a, w, Some(bias), s, 1, 0)?;
            a = g.gelu(a);
        }
        let a = g.swap_last2(a)?;
        let s = g.value(a).shape().to_vec();
        let a = g.reshape(a, &[s[0] * s[1], s[2]])?;
        self.linear(g, b, a, "fe.proj")
    }

    fn positional(&self, g: &mut Graph<T>, b: &mut Binder<'_, T>, x: Var, batch: usize, frames: usize) -> Result<Var> {
        let d = self.config.d_model;
        let k = self.config.pos_kernel;
        let xt = g.reshape(x, &[batch, frames, d])?;
        let xt = g.swap_last2(xt)?;
        let w = b.get(g, "pos.conv.weight")?;
        let bias = b.get(g, "pos.conv.bias")?;
        let c = g.conv1d(xt, w, Some(bias), 1, self.config.pos_groups, k / 2)?;
        let c = g.narrow_last(c, frames)?;
        let c = g.gelu(c);
        let c = g.swap_last2(c)?;
        let c = g.reshape(c, &[batch * frames, d])?;
        let y = g.add(x, c)?;
        let gamma = b.get(g, "pos.norm.weight")?;
        let beta = b.get(g, "pos.norm.bias")?;
        g.layer_norm(y, gamma, beta, self.config.layer_norm_eps)
    }

    #[allow(clippy::too_many_arguments)]
    fn projection(
        &self,
        g: &mut Graph<T>,
        b: &mut Binder<'_, T>,
        layer: usize,
        proj: &str,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let prefix = format!("encoder.layer.{layer}.attn.{proj}");
        let base = self.linear(g, b, x, &prefix)?;
        let Some(lora) = self.lora.as_ref().filter(|l| l.targets(proj)) else {
            return Ok(base);
        };
        let a = b.get(g, &format!("{prefix}.lora_a"))?;
        let bm = b.get(g, &format!("{prefix}.lora_b"))?;
        let xin = g.dropout(x, lora.dropout, mode, rng)?;
        let low = g.matmul(xin, a)?;
        let delta = g.matmul(low, bm)?;
        let delta = g.scale(delta, T::from_f64(lora.scaling()));
        g.add(base, delta)
    }

    #[allow(clippy::too_many_arguments)]
    fn block(
        &self,
        g: &mut Graph<T>,
        b: &mut Binder<'_, T>,
        layer: usize,
        x: Var,
        batch: usize,
        frames: usize,
        dropout_active: bool,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let pre = format!("encoder.layer.{layer}");
        let p = self.config.internal_dropout;
        let drop_mode = if dropout_active { Mode::Train } else { Mode::Eval };
        let q = self.projection(g, b, layer, "q", x, mode, rng)?;
        let k = self.projection(g, b, layer, "k", x, mode, rng)?;
        let v = self.projection(g, b, layer, "v", x, mode, rng)?;
        let a = g.attention(q, k, v, batch, frames, self.config.n_heads)?;
        let a = self.projection(g, b, layer, "o", a, mode, rng)?;
        let a = g.dropout(a, p, drop_mode, rng)?;
        let h = g.add(x, a)?;
        let (gm, bt) = (b.get(g, &format!("{pre}.attn_norm.weight"))?, b.get(g, &format!("{pre}.attn_norm.bias"))?);
        let h = g.layer_norm(h, gm, bt, self.config.layer_norm_eps)?;
        let f = self.linear(g, b, h, &format!("{pre}.ffn.in"))?;
        let f = g.gelu(f);
        let f = self.linear(g, b, f, &format!("{pre}.ffn.out"))?;
        let f = g.dropout(f, p, drop_mode, rng)?;
        let y = g.add(h, f)?;
        let (gm, bt) = (b.get(g, &format!("{pre}.ffn_norm.weight"))?, b.get(g, &format!("{pre}.ffn_norm.bias"))?);
        g.layer_norm(y, gm, bt, self.config.layer_norm_eps)
    }

    #[allow(clippy::too_many_arguments)]
    fn pool_and_heads(
        &self,
        g: &mut Graph<T>,
        b: &mut Binder<'_, T>,
        x: Var,
        batch: usize,
        frames: usize,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let x3 = g.reshape(x, &[batch, frames, self.config.d_model])?;
        let pooled = g.mean_over_time(x3)?;
        let pooled = g.dropout(pooled, self.config.head_dropout, mode, rng)?;
        let mut outs = Vec::with_capacity(self.config.n_tasks);
        for t in 0..self.config.n_tasks {
            outs.push(self.linear(g, b, pooled, &format!("head.{}", task_name(t)))?);
        }
        g.concat_cols(&outs)
    }

    /// Convenience forward on master weights; returns `[B×n_tasks]` predictions
    /// and the per-layer hidden states reshaped to `[B×T×d]`.
    pub fn forward(&self, audio: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        self.run(Input::Audio(audio), ForwardOptions { mode, frozen_dropout: false }, rng)
    }

    pub fn run(&self, input: Input<'_, T>, opts: ForwardOptions, rng: &mut Rng) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let mut b = self.binder();
        let out = self.forward_graph(&mut g, &mut b, input, opts, rng)?;
        let d = self.config.d_model;
        let hidden = out
            .hidden
            .iter()
            .map(|&h| g.value(h).clone().reshape(vec![out.batch, out.frames, d]))
            .collect::<Result<Vec<_>>>()?;
        Ok((g.value(out.predictions).clone(), hidden))
    }

    /// Runs front-end, positional block and the first `upto_layer` blocks in
    /// eval mode on a single waveform `[1×T]`; returns `[frames×d]`.
    pub fn forward_prefix(&self, sample: &Tensor<T>, upto_layer: usize) -> Result<Tensor<T>> {
        if upto_layer > self.config.n_layers {
            return Err(Error::Parameter(format!(
                "upto_layer {upto_layer} outside [0, {}]",
                self.config.n_layers
            )));
        }
        if sample.shape().len() != 2 || sample.shape()[0] != 1 {
            return Err(Error::Contract(format!(
                "forward_prefix takes exactly one sample, got shape {:?}",
                sample.shape()
            )));
        }
        let mut g = Graph::new();
        let mut b = self.binder();
        // Eval mode never draws from the generator.
        let mut unused = rng::stream(0, 0);
        let out = self.forward_range(
            &mut g,
            &mut b,
            Input::Audio(sample),
            upto_layer,
            ForwardOptions::eval(),
            &mut unused,
            false,
        )?;
        let last = *out.hidden.last().expect("at least the positional output");
        g.value(last).clone().reshape(vec![out.frames, self.config.d_model])
    }
}

pub(crate) fn adapter_paths(config: &ModelConfig, lora: &LoraConfig) -> Vec<String> {
    let mut out = Vec::new();
    for l in 0..config.n_layers {
        for proj in PROJECTIONS {
            if lora.targets(proj) {
                out.push(format!("encoder.layer.{l}.attn.{proj}.lora_a"));
                out.push(format!("encoder.layer.{l}.attn.{proj}.lora_b"));
            }
        }
    }
    out
}

fn adapter_shape(config: &ModelConfig, lora: &LoraConfig, path: &str) -> Vec<usize> {
    if path.ends_with("lora_a") {
        vec![config.d_model, lora.rank]
    } else {
        vec![lora.rank, config.d_model]
    }
}
