//! Parameter storage, layer helpers and the optimizer shared by both
//! trainable models.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::State(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Parameters whose names start with `prefix`, with the prefix kept.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Puts every parameter on the tape; `trainable` decides which ones
    /// receive gradients.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let v = if trainable(name) {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Xavier-style Gaussian weight and zero bias for a dense layer.
    pub fn init_linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) {
        let std = (1.0 / fan_in as f64).sqrt();
        self.insert(format!("{prefix}.w"), Tensor::randn([fan_in, fan_out], std, rng));
        self.insert(format!("{prefix}.b"), Tensor::zeros([fan_out]));
    }
}

#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::State(format!("parameter `{name}` not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// `x·W + b` for parameters `{prefix}.w` and `{prefix}.b`.
pub fn linear(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// `x + GELU(x·W1 + b1)·W2 + b2`.
pub fn residual_block(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> Result<Var> {
    let h = linear(g, p, &format!("{prefix}.fc1"), x)?;
    let h = g.gelu(h);
    let h = linear(g, p, &format!("{prefix}.fc2"), h)?;
    g.add(x, h)
}

pub fn init_residual_block(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut Rng) {
    store.init_linear(&format!("{prefix}.fc1"), width, width, rng);
    store.init_linear(&format!("{prefix}.fc2"), width, width, rng);
    // Start each block close to the identity.
    let w2 = store.get_mut(&format!("{prefix}.fc2.w")).unwrap();
    *w2 = w2.scale(0.1);
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    /// One update. Parameters the backward pass never reached are left
    /// untouched, weight decay included.
    pub fn update(
        &mut self,
        store: &mut ParamStore,
        bound: &Bound,
        grads: &Gradients,
        lr: f64,
        lr_scale: impl Fn(&str) -> f64,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, &var) in bound.iter() {
            let Some(grad) = grads.get(var) else {
                continue;
            };
            let lr = lr * lr_scale(name);
            let param = store.get_mut(name)?;
            if !self.m.contains(name) {
                self.m.insert(name.clone(), Tensor::zeros(param.shape().to_vec()));
                self.v.insert(name.clone(), Tensor::zeros(param.shape().to_vec()));
            }
            let m = self.m.get_mut(name)?;
            for (mv, gv) in m.data_mut().iter_mut().zip(grad.data()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
            }
            let v = self.v.get_mut(name)?;
            for (vv, gv) in v.data_mut().iter_mut().zip(grad.data()) {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
            }
            let m = self.m.get(name)?;
            let v = self.v.get(name)?;
            for ((pv, mv), vv) in param.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                *pv -= lr * self.weight_decay * *pv;
                *pv -= lr * (mv / bc1) / ((vv / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One-cycle learning rate: cosine warm-up from `max_lr/25` to `max_lr`
/// over the first 30% of steps, then cosine decay to `max_lr/25e4`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        Self {
            max_lr,
            total_steps: total_steps.max(1),
            pct_start: 0.3,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let initial = self.max_lr / 25.0;
        let min = initial / 1e4;
        let warm = ((self.total_steps as f64) * self.pct_start).max(1.0);
        let s = step as f64;
        let cos_interp = |from: f64, to: f64, frac: f64| {
            let frac = frac.clamp(0.0, 1.0);
            to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
        };
        if s < warm {
            cos_interp(initial, self.max_lr, s / warm)
        } else {
            let rest = (self.total_steps as f64 - warm).max(1.0);
            cos_interp(self.max_lr, min, (s - warm) / rest)
        }
    }
}
