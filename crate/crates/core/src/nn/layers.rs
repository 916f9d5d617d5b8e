//! Layers built on the tape: affine maps, batch normalization, the shared
//! per-point layer with learned max-subtraction, two-layer heads and the
//! part encoder.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Forward, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

pub(crate) fn he_init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in.max(1) as f64).sqrt()).expect("positive std");
    Tensor::from_fn(&[fan_in, fan_out], |_| normal.sample(rng))
}

/// `y = x W + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add(format!("{name}.w"), he_init(rng, fan_in, fan_out), true)?,
            b: store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]), true)?,
        })
    }

    pub fn forward(&self, fw: &mut Forward, x: Var) -> Result<Var> {
        let w = fw.param(self.w);
        let b = fw.param(self.b);
        let y = fw.tape.matmul(x, w)?;
        fw.tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    /// Number of batches folded into the running statistics.
    pub updates: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(
                format!("{name}.gamma"),
                Tensor::full(&[channels], 1.0),
                true,
            )?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.add(
                format!("{name}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            )?,
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full(&[channels], 1.0),
                false,
            )?,
            updates: store.add(format!("{name}.updates"), Tensor::zeros(&[1]), false)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Batch statistics in training mode, running statistics otherwise. A
    /// training batch of one row falls back to the running statistics.
    pub fn forward(&self, fw: &mut Forward, x: Var) -> Result<Var> {
        let gamma = fw.param(self.gamma);
        let beta = fw.param(self.beta);
        if fw.training && fw.tape.value(x).rows() >= 2 {
            let (y, stats) = fw.tape.batch_norm(x, gamma, beta, self.eps)?;
            fw.record_bn(*self, stats);
            Ok(y)
        } else {
            let mean = fw.store.value(self.running_mean).data().to_vec();
            let var = fw.store.value(self.running_var).data().to_vec();
            fw.tape
                .batch_norm_inference(x, gamma, beta, &mean, &var, self.eps)
        }
    }
}

/// Shared per-point affine map applied after subtracting `lambda` times the
/// feature-wise maximum over the points of each part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxSubLinear {
    pub lambda: ParamId,
    pub linear: Linear,
}

impl MaxSubLinear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            lambda: store.add(format!("{name}.lambda"), Tensor::scalar(0.5), true)?,
            linear: Linear::new(store, name, fan_in, fan_out, rng)?,
        })
    }

    /// `x` is `[parts * points, F]`, parts stored in consecutive blocks.
    pub fn forward(&self, fw: &mut Forward, x: Var, points: usize) -> Result<Var> {
        let lambda = fw.param(self.lambda);
        let y = fw.tape.max_subtract(x, lambda, points)?;
        self.linear.forward(fw, y)
    }
}

/// `affine -> ReLU -> affine`, used for the vote and classification heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mlp2 {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: [usize; 3],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.0"), dims[0], dims[1], rng)?,
            out: Linear::new(store, &format!("{name}.1"), dims[1], dims[2], rng)?,
        })
    }

    pub fn forward(&self, fw: &mut Forward, x: Var) -> Result<Var> {
        let h = self.hidden.forward(fw, x)?;
        let h = fw.tape.relu(h);
        self.out.forward(fw, h)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.hidden.w, self.hidden.b, self.out.w, self.out.b]
    }
}

/// Per-point layers with max-subtraction, each followed by batch norm and
/// ReLU, then a max pool over the points of each part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartEncoder {
    pub layers: Vec<(MaxSubLinear, BatchNorm)>,
    pub widths: Vec<usize>,
}

impl PartEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = 3;
        for (i, &w) in widths.iter().enumerate() {
            let lin = MaxSubLinear::new(store, &format!("{name}.{i}"), fan_in, w, rng)?;
            let bn = BatchNorm::new(store, &format!("{name}.{i}.bn"), w)?;
            layers.push((lin, bn));
            fan_in = w;
        }
        Ok(Self {
            layers,
            widths: widths.to_vec(),
        })
    }

    pub fn out_width(&self) -> usize {
        self.widths.last().copied().unwrap_or(3)
    }

    /// `points` is `[parts * n, 3]`; returns `[parts, F]`.
    pub fn forward(&self, fw: &mut Forward, points: Var, n: usize) -> Result<Var> {
        let mut x = points;
        for (lin, bn) in &self.layers {
            x = lin.forward(fw, x, n)?;
            x = bn.forward(fw, x)?;
            x = fw.tape.relu(x);
        }
        fw.tape.group_max(x, n)
    }
}
