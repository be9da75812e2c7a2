use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Softmax classifier architectures.
///
/// Parameters are laid out as `[W1 (hidden×inputs), b1, W2 (classes×hidden), b2]`
/// for the MLP and `[W (classes×inputs), b]` for logistic regression, all row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    LogisticRegression {
        inputs: usize,
        classes: usize,
    },
    Mlp {
        inputs: usize,
        hidden: usize,
        classes: usize,
        activation: Activation,
    },
}

/// A view of selected dataset rows.
#[derive(Debug, Clone, Copy)]
pub struct MiniBatch<'a> {
    pub data: &'a Dataset,
    pub indices: &'a [usize],
}

impl<'a> MiniBatch<'a> {
    pub fn new(data: &'a Dataset, indices: &'a [usize]) -> Self {
        Self { data, indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

impl ModelSpec {
    pub fn inputs(&self) -> usize {
        match *self {
            ModelSpec::LogisticRegression { inputs, .. } | ModelSpec::Mlp { inputs, .. } => inputs,
        }
    }

    pub fn classes(&self) -> usize {
        match *self {
            ModelSpec::LogisticRegression { classes, .. } | ModelSpec::Mlp { classes, .. } => classes,
        }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            ModelSpec::LogisticRegression { inputs, classes } => classes * (inputs + 1),
            ModelSpec::Mlp {
                inputs,
                hidden,
                classes,
                ..
            } => hidden * (inputs + 1) + classes * (hidden + 1),
        }
    }

    /// Scaled-normal initialisation with variance 1/fan_in for weights and zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut w = Vec::with_capacity(self.num_params());
        let mut layer = |w: &mut Vec<f64>, fan_in: usize, fan_out: usize| {
            let scale = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                let z: f64 = StandardNormal.sample(rng);
                w.push(scale * z);
            }
            w.extend(std::iter::repeat_n(0.0, fan_out));
        };
        match *self {
            ModelSpec::LogisticRegression { inputs, classes } => layer(&mut w, inputs, classes),
            ModelSpec::Mlp {
                inputs,
                hidden,
                classes,
                ..
            } => {
                layer(&mut w, inputs, hidden);
                layer(&mut w, hidden, classes);
            }
        }
        ParamVector::new(w)
    }

    fn check(&self, w: &ParamVector, batch: &MiniBatch<'_>) -> Result<()> {
        w.check_len(self.num_params())?;
        if batch.is_empty() {
            return Err(Error::contract("mini-batch is empty"));
        }
        if batch.data.features() != self.inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.inputs(),
                got: batch.data.features(),
            });
        }
        if batch.data.classes() > self.classes() {
            return Err(Error::contract(format!(
                "dataset has {} classes but model only {}",
                batch.data.classes(),
                self.classes()
            )));
        }
        Ok(())
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn forward_loss(&self, w: &ParamVector, batch: &MiniBatch<'_>) -> Result<f64> {
        self.check(w, batch)?;
        Ok(self.run(w, batch, None).0)
    }

    /// Gradient of the mean batch loss with respect to `w`.
    pub fn backward_grad(&self, w: &ParamVector, batch: &MiniBatch<'_>) -> Result<ParamVector> {
        Ok(self.loss_and_grad(w, batch)?.1)
    }

    pub fn loss_and_grad(&self, w: &ParamVector, batch: &MiniBatch<'_>) -> Result<(f64, ParamVector)> {
        self.check(w, batch)?;
        let mut grad = vec![0.0; w.len()];
        let (loss, _) = self.run(w, batch, Some(&mut grad));
        Ok((loss, ParamVector::new(grad)))
    }

    /// Mean loss and accuracy over a whole dataset.
    pub fn evaluate(&self, w: &ParamVector, data: &Dataset) -> Result<(f64, f64)> {
        let indices: Vec<usize> = (0..data.len()).collect();
        let batch = MiniBatch::new(data, &indices);
        self.check(w, &batch)?;
        let (loss, correct) = self.run(w, &batch, None);
        Ok((loss, correct as f64 / data.len() as f64))
    }

    /// Shared forward (and optionally backward) pass. Returns the mean loss and
    /// the number of correctly classified rows.
    fn run(&self, w: &ParamVector, batch: &MiniBatch<'_>, mut grad: Option<&mut [f64]>) -> (f64, usize) {
        let w = w.as_slice();
        let p = self.inputs();
        let c = self.classes();
        let inv_n = 1.0 / batch.len() as f64;
        let mut logits = vec![0.0; c];
        let mut total = 0.0;
        let mut correct = 0;

        match *self {
            ModelSpec::LogisticRegression { .. } => {
                let (wm, b) = w.split_at(c * p);
                for &i in batch.indices {
                    let x = batch.data.row(i);
                    let y = batch.data.label(i);
                    affine(wm, b, x, &mut logits);
                    let (loss, hit) = softmax_xent(&mut logits, y);
                    total += loss;
                    correct += hit as usize;
                    if let Some(g) = grad.as_deref_mut() {
                        let (gw, gb) = g.split_at_mut(c * p);
                        for k in 0..c {
                            let gk = logits[k] * inv_n;
                            gb[k] += gk;
                            for (gwj, xj) in gw[k * p..(k + 1) * p].iter_mut().zip(x) {
                                *gwj += gk * xj;
                            }
                        }
                    }
                }
            }
            ModelSpec::Mlp { hidden: h, activation, .. } => {
                let (w1, rest) = w.split_at(h * p);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                let mut z1 = vec![0.0; h];
                let mut a1 = vec![0.0; h];
                let mut da1 = vec![0.0; h];
                for &i in batch.indices {
                    let x = batch.data.row(i);
                    let y = batch.data.label(i);
                    affine(w1, b1, x, &mut z1);
                    for (a, &z) in a1.iter_mut().zip(&z1) {
                        *a = activation.apply(z);
                    }
                    affine(w2, b2, &a1, &mut logits);
                    let (loss, hit) = softmax_xent(&mut logits, y);
                    total += loss;
                    correct += hit as usize;
                    if let Some(g) = grad.as_deref_mut() {
                        let (gw1, rest) = g.split_at_mut(h * p);
                        let (gb1, rest) = rest.split_at_mut(h);
                        let (gw2, gb2) = rest.split_at_mut(c * h);
                        da1.iter_mut().for_each(|v| *v = 0.0);
                        for k in 0..c {
                            let gk = logits[k] * inv_n;
                            gb2[k] += gk;
                            let row = k * h..(k + 1) * h;
                            for ((gwj, aj), (daj, wj)) in gw2[row.clone()]
                                .iter_mut()
                                .zip(&a1)
                                .zip(da1.iter_mut().zip(&w2[row]))
                            {
                                *gwj += gk * aj;
                                *daj += gk * wj;
                            }
                        }
                        for j in 0..h {
                            let dz = da1[j] * activation.derivative(z1[j], a1[j]);
                            gb1[j] += dz;
                            for (gw, xv) in gw1[j * p..(j + 1) * p].iter_mut().zip(x) {
                                *gw += dz * xv;
                            }
                        }
                    }
                }
            }
        }
        (total * inv_n, correct)
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let p = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = b[k] + w[k * p..(k + 1) * p].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// Replaces `logits` with `softmax(logits) - onehot(y)` and returns the
/// cross-entropy and whether the argmax equals `y`.
fn softmax_xent(logits: &mut [f64], y: usize) -> (f64, bool) {
    let (argmax, max) = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
    let sum: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - logits[y];
    for v in logits.iter_mut() {
        *v = (*v - lse).exp();
    }
    logits[y] -= 1.0;
    (loss, argmax == y)
}
