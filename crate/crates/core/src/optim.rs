//! AdamW, dynamic loss scaling and the single/mixed-precision update steps.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{Binder, Model, ParamStore};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// AdamW with decoupled weight decay. Moments are keyed by parameter index
/// and created on first update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Real = f32> {
    pub config: AdamWConfig,
    pub t: u64,
    pub moments: Vec<Option<Moments<T>>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            t: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one step to the listed parameters. Rejects the whole step,
    /// leaving parameters and state untouched, if any gradient is not finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[(usize, Vec<T>)]) -> Result<()> {
        for (i, g) in grads {
            if g.len() != params.by_index(*i).tensor.len() {
                return Err(Error::Dimension {
                    op: "adamw_step",
                    lhs: params.by_index(*i).tensor.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(params.by_index(*i).path.clone()));
            }
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let lr = T::from_f64(c.lr);
        let eps = T::from_f64(c.eps);
        let decay = T::from_f64(1.0 - c.lr * c.weight_decay);
        if self.moments.len() < params.len() {
            self.moments.resize(params.len(), None);
        }
        for (i, g) in grads {
            let theta = params.by_index_mut(*i).tensor.data_mut();
            let st = self.moments[*i].get_or_insert_with(|| Moments {
                m: vec![T::zero(); g.len()],
                v: vec![T::zero(); g.len()],
            });
            for k in 0..g.len() {
                let gk = g[k];
                st.m[k] = b1 * st.m[k] + one_b1 * gk;
                st.v[k] = b2 * st.v[k] + one_b2 * gk * gk;
                let m_hat = st.m[k] / bc1;
                let v_hat = st.v[k] / bc2;
                theta[k] = theta[k] * decay - lr * (m_hat / (v_hat.sqrt() + eps));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleEvent {
    Halved,
    Doubled,
}

/// Dynamic loss scale: halves on overflow, doubles after a run of clean steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossScaler {
    pub scale: f64,
    pub growth_interval: u32,
    pub consecutive_clean: u32,
}

impl Default for LossScaler {
    fn default() -> Self {
        Self {
            scale: 65536.0,
            growth_interval: 2000,
            consecutive_clean: 0,
        }
    }
}

impl LossScaler {
    pub fn on_overflow(&mut self) -> Result<ScaleEvent> {
        self.scale /= 2.0;
        self.consecutive_clean = 0;
        if self.scale < 1.0 {
            return Err(Error::UnrecoverableOverflow);
        }
        Ok(ScaleEvent::Halved)
    }

    pub fn on_clean(&mut self) -> Option<ScaleEvent> {
        self.consecutive_clean += 1;
        if self.consecutive_clean >= self.growth_interval {
            self.consecutive_clean = 0;
            self.scale *= 2.0;
            return Some(ScaleEvent::Doubled);
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Unscaled loss of the batch.
    pub loss: f64,
    pub applied: bool,
    pub scale_event: Option<ScaleEvent>,
}

/// Anything that owns the master parameter store.
pub trait HasParams {
    fn store(&self) -> &ParamStore<f32>;
    fn store_mut(&mut self) -> &mut ParamStore<f32>;
}

impl HasParams for ParamStore<f32> {
    fn store(&self) -> &ParamStore<f32> {
        self
    }
    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        self
    }
}

impl HasParams for Model<f32> {
    fn store(&self) -> &ParamStore<f32> {
        self.params()
    }
    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        self.params_mut()
    }
}

/// Plain 32-bit step. `forward` builds the loss from leaves bound through the
/// binder it is given.
pub fn single_precision_step<M, F>(m: &mut M, opt: &mut AdamW<f32>, forward: F) -> Result<StepOutcome>
where
    M: HasParams,
    F: FnOnce(&M, &mut Graph<f32>, &mut Binder<'_, f32>) -> Result<Var>,
{
    let (loss, grads) = {
        let mut g = Graph::new();
        let mut b = Binder::new(m.store());
        let loss = forward(m, &mut g, &mut b)?;
        g.backward(loss)?;
        (g.value(loss).data()[0] as f64, b.gradients(&g))
    };
    if !loss.is_finite() {
        return Ok(StepOutcome {
            loss,
            applied: false,
            scale_event: None,
        });
    }
    opt.step(m.store_mut(), &grads)?;
    Ok(StepOutcome {
        loss,
        applied: true,
        scale_event: None,
    })
}

/// Mixed-precision step on half-emulated copies `half` of the master weights.
///
/// The loss is scaled before backward, gradients come back rounded to binary16
/// and are unscaled in 32-bit. Any non-finite gradient skips the update and
/// halves the scale; otherwise AdamW updates the masters and the updated
/// tensors are re-rounded into `half`.
pub fn mixed_precision_step<M, F>(
    m: &mut M,
    half: &mut ParamStore<f32>,
    opt: &mut AdamW<f32>,
    scaler: &mut LossScaler,
    forward: F,
) -> Result<StepOutcome>
where
    M: HasParams,
    F: FnOnce(&M, &mut Graph<f32>, &mut Binder<'_, f32>) -> Result<Var>,
{
    let scale = scaler.scale as f32;
    let (loss, mut grads) = {
        let mut g = Graph::new();
        g.set_half(true);
        let mut b = Binder::new(half);
        let loss = forward(m, &mut g, &mut b)?;
        g.backward_seeded(loss, scale)?;
        (g.value(loss).data()[0] as f64, b.gradients(&g))
    };
    let inv = 1.0 / scale;
    let mut finite = loss.is_finite();
    for (_, gr) in grads.iter_mut() {
        for v in gr.iter_mut() {
            *v *= inv;
            finite &= v.is_finite();
        }
    }
    if !finite {
        let ev = scaler.on_overflow()?;
        return Ok(StepOutcome {
            loss,
            applied: false,
            scale_event: Some(ev),
        });
    }
    opt.step(m.store_mut(), &grads)?;
    let master = m.store();
    for (i, _) in &grads {
        half.by_index_mut(*i).tensor = master.by_index(*i).tensor.to_half();
    }
    Ok(StepOutcome {
        loss,
        applied: true,
        scale_event: scaler.on_clean(),
    })
}
