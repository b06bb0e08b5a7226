//! Fully connected backbone: `T*C -> h1 -> h2 -> classes` with batch norm,
//! ReLU, and dropout after each hidden linear layer.

use ndarray::{Array1, Array2, Array3, Axis};
use rand_distr::{Distribution, Normal};

use super::batchnorm::{bn_backward, bn_forward_eval, bn_forward_train, BnCache};
use super::{flatten, unflatten};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpArch {
    pub input_steps: usize,
    pub channels: usize,
    pub hidden: [usize; 2],
    pub classes: usize,
    pub dropout: f64,
}

impl MlpArch {
    pub fn input_dim(&self) -> usize {
        self.input_steps * self.channels
    }
}

#[derive(Debug, Clone)]
pub struct MlpModel {
    pub arch: MlpArch,
    w1: Array2<f64>,
    b1: Array1<f64>,
    g1: Array1<f64>,
    be1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    g2: Array1<f64>,
    be2: Array1<f64>,
    w3: Array2<f64>,
    b3: Array1<f64>,
    rm1: Array1<f64>,
    rv1: Array1<f64>,
    rm2: Array1<f64>,
    rv2: Array1<f64>,
}

pub struct MlpCache {
    x: Array2<f64>,
    bn1: BnCache,
    a1: Array2<f64>, // post-BN pre-ReLU
    m1: Array2<f64>, // dropout mask, already scaled
    d1: Array2<f64>, // layer-1 output fed to layer 2
    bn2: BnCache,
    a2: Array2<f64>,
    m2: Array2<f64>,
    d2: Array2<f64>,
}

fn he_normal(rows: usize, cols: usize, fan_in: usize, rng: &mut impl rand::Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Inverted dropout: keep with probability `1 - rate`, scale kept units by
/// `1/(1 - rate)`. Rate 0 skips the generator entirely.
fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut impl rand::Rng) -> Array2<f64> {
    if rate == 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 - rate;
    Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn relu_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |d, p| {
        if *p <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// Flatten `[B, T, C]` into `[B, T*C]` (time-major per sample).
pub(super) fn flatten_batch(x: &Array3<f64>) -> Array2<f64> {
    let (b, t, c) = x.dim();
    x.to_owned()
        .into_shape_with_order((b, t * c))
        .expect("standard layout reshape")
}

impl MlpModel {
    pub fn new(arch: MlpArch, stream: RngStream) -> Result<Self> {
        if arch.input_steps < 1 || arch.channels < 1 || arch.classes < 1 {
            return Err(Error::InvalidParameter("MLP dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&arch.dropout) {
            return Err(Error::InvalidParameter(format!(
                "dropout rate must be in [0, 1), got {}",
                arch.dropout
            )));
        }
        let [h1, h2] = arch.hidden;
        let d = arch.input_dim();
        let mut rng = stream.rng();
        Ok(MlpModel {
            arch,
            w1: he_normal(d, h1, d, &mut rng),
            b1: Array1::zeros(h1),
            g1: Array1::ones(h1),
            be1: Array1::zeros(h1),
            w2: he_normal(h1, h2, h1, &mut rng),
            b2: Array1::zeros(h2),
            g2: Array1::ones(h2),
            be2: Array1::zeros(h2),
            w3: he_normal(h2, arch.classes, h2, &mut rng),
            b3: Array1::zeros(arch.classes),
            rm1: Array1::zeros(h1),
            rv1: Array1::ones(h1),
            rm2: Array1::zeros(h2),
            rv2: Array1::ones(h2),
        })
    }

    pub fn forward_train(&mut self, x: &Array3<f64>, stream: RngStream) -> (Array2<f64>, MlpCache) {
        let x2 = flatten_batch(x);
        let mut rng = stream.rng();

        let z1 = x2.dot(&self.w1) + &self.b1;
        let (a1, bn1) = bn_forward_train(&z1, &self.g1, &self.be1, &mut self.rm1, &mut self.rv1);
        let r1 = relu(&a1);
        let m1 = dropout_mask(r1.dim(), self.arch.dropout, &mut rng);
        let d1 = &r1 * &m1;

        let z2 = d1.dot(&self.w2) + &self.b2;
        let (a2, bn2) = bn_forward_train(&z2, &self.g2, &self.be2, &mut self.rm2, &mut self.rv2);
        let r2 = relu(&a2);
        let m2 = dropout_mask(r2.dim(), self.arch.dropout, &mut rng);
        let d2 = &r2 * &m2;

        let logits = d2.dot(&self.w3) + &self.b3;
        (
            logits,
            MlpCache { x: x2, bn1, a1, m1, d1, bn2, a2, m2, d2 },
        )
    }

    pub fn forward_eval(&self, x: &Array3<f64>) -> Array2<f64> {
        let x2 = flatten_batch(x);
        let z1 = x2.dot(&self.w1) + &self.b1;
        let a1 = bn_forward_eval(&z1, &self.g1, &self.be1, &self.rm1, &self.rv1);
        let d1 = relu(&a1);
        let z2 = d1.dot(&self.w2) + &self.b2;
        let a2 = bn_forward_eval(&z2, &self.g2, &self.be2, &self.rm2, &self.rv2);
        let d2 = relu(&a2);
        d2.dot(&self.w3) + &self.b3
    }

    /// Gradient w.r.t. every parameter, in the flat parameter order.
    pub fn backward(&self, cache: &MlpCache, dlogits: &Array2<f64>) -> Vec<f64> {
        let dw3 = cache.d2.t().dot(dlogits);
        let db3 = dlogits.sum_axis(Axis(0));
        let dd2 = dlogits.dot(&self.w3.t());

        let dr2 = &dd2 * &cache.m2;
        let da2 = relu_backward(&cache.a2, &dr2);
        let (dz2, dg2, dbe2) = bn_backward(&cache.bn2, &self.g2, &da2);
        let dw2 = cache.d1.t().dot(&dz2);
        let db2 = dz2.sum_axis(Axis(0));
        let dd1 = dz2.dot(&self.w2.t());

        let dr1 = &dd1 * &cache.m1;
        let da1 = relu_backward(&cache.a1, &dr1);
        let (dz1, dg1, dbe1) = bn_backward(&cache.bn1, &self.g1, &da1);
        let dw1 = cache.x.t().dot(&dz1);
        let db1 = dz1.sum_axis(Axis(0));

        let mut out = Vec::with_capacity(self.num_params());
        flatten::push2(&mut out, &dw1);
        flatten::push1(&mut out, &db1);
        flatten::push1(&mut out, &dg1);
        flatten::push1(&mut out, &dbe1);
        flatten::push2(&mut out, &dw2);
        flatten::push1(&mut out, &db2);
        flatten::push1(&mut out, &dg2);
        flatten::push1(&mut out, &dbe2);
        flatten::push2(&mut out, &dw3);
        flatten::push1(&mut out, &db3);
        out
    }

    pub fn num_params(&self) -> usize {
        let [h1, h2] = self.arch.hidden;
        let d = self.arch.input_dim();
        d * h1 + h1 + 2 * h1 + h1 * h2 + h2 + 2 * h2 + h2 * self.arch.classes + self.arch.classes
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        flatten::push2(&mut out, &self.w1);
        flatten::push1(&mut out, &self.b1);
        flatten::push1(&mut out, &self.g1);
        flatten::push1(&mut out, &self.be1);
        flatten::push2(&mut out, &self.w2);
        flatten::push1(&mut out, &self.b2);
        flatten::push1(&mut out, &self.g2);
        flatten::push1(&mut out, &self.be2);
        flatten::push2(&mut out, &self.w3);
        flatten::push1(&mut out, &self.b3);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector length {} != {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        unflatten::take2(flat, &mut off, &mut self.w1);
        unflatten::take1(flat, &mut off, &mut self.b1);
        unflatten::take1(flat, &mut off, &mut self.g1);
        unflatten::take1(flat, &mut off, &mut self.be1);
        unflatten::take2(flat, &mut off, &mut self.w2);
        unflatten::take1(flat, &mut off, &mut self.b2);
        unflatten::take1(flat, &mut off, &mut self.g2);
        unflatten::take1(flat, &mut off, &mut self.be2);
        unflatten::take2(flat, &mut off, &mut self.w3);
        unflatten::take1(flat, &mut off, &mut self.b3);
        Ok(())
    }

    pub fn buffers(&self) -> Vec<f64> {
        let mut out = Vec::new();
        flatten::push1(&mut out, &self.rm1);
        flatten::push1(&mut out, &self.rv1);
        flatten::push1(&mut out, &self.rm2);
        flatten::push1(&mut out, &self.rv2);
        out
    }

    pub fn set_buffers(&mut self, flat: &[f64]) -> Result<()> {
        let expected = 2 * (self.arch.hidden[0] + self.arch.hidden[1]);
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "buffer vector length {} != {expected}",
                flat.len()
            )));
        }
        let mut off = 0;
        unflatten::take1(flat, &mut off, &mut self.rm1);
        unflatten::take1(flat, &mut off, &mut self.rv1);
        unflatten::take1(flat, &mut off, &mut self.rm2);
        unflatten::take1(flat, &mut off, &mut self.rv2);
        Ok(())
    }
}
