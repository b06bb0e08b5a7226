//! Convolutional backbone: four conv blocks (kernel 5, same padding) with
//! batch norm and ReLU, max pooling (window 3, stride 3) after the first
//! three blocks, global average pooling, and a linear head.

use ndarray::{Array1, Array2, Array3, Axis};
use rand_distr::{Distribution, Normal};

use super::batchnorm::{bn_backward, bn_forward_eval, bn_forward_train, BnCache};
use super::{flatten, unflatten};
use crate::error::{Error, Result};
use crate::rng::RngStream;

const POOL: usize = 3;
const NUM_BLOCKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvArch {
    pub input_steps: usize,
    pub in_channels: usize,
    pub channels: [usize; 4],
    pub kernel: usize,
    pub classes: usize,
}

#[derive(Debug, Clone)]
struct ConvBlock {
    w: Array3<f64>, // [out, in, kernel]
    b: Array1<f64>,
    gamma: Array1<f64>,
    beta: Array1<f64>,
    running_mean: Array1<f64>,
    running_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ConvModel {
    pub arch: ConvArch,
    blocks: Vec<ConvBlock>,
    fc_w: Array2<f64>,
    fc_b: Array1<f64>,
}

struct BlockCache {
    input: Array3<f64>,    // conv input
    bn: BnCache,           // over [B*L, C]
    pre_relu: Array3<f64>, // post-BN activations
    relu_out_len: usize,
    pool_argmax: Option<Array3<usize>>, // input index per pooled position
}

pub struct ConvCache {
    blocks: Vec<BlockCache>,
    pooled_len: usize,   // length entering global average pool
    features: Array2<f64>, // input to the linear head
}

/// Convolution with stride 1 and zero padding `(kernel-1)/2`, preserving L.
fn conv_forward(x: &Array3<f64>, w: &Array3<f64>, b: &Array1<f64>) -> Array3<f64> {
    let (batch, in_ch, len) = x.dim();
    let (out_ch, _, kernel) = w.dim();
    let pad = (kernel - 1) / 2;
    let mut y = Array3::zeros((batch, out_ch, len));
    for bi in 0..batch {
        for oc in 0..out_ch {
            for l in 0..len {
                let mut acc = b[oc];
                for ic in 0..in_ch {
                    for k in 0..kernel {
                        let pos = l + k;
                        if pos >= pad && pos - pad < len {
                            acc += w[[oc, ic, k]] * x[[bi, ic, pos - pad]];
                        }
                    }
                }
                y[[bi, oc, l]] = acc;
            }
        }
    }
    y
}

/// Gradients of [`conv_forward`]: returns `(dx, dw, db)`.
fn conv_backward(
    x: &Array3<f64>,
    w: &Array3<f64>,
    dy: &Array3<f64>,
) -> (Array3<f64>, Array3<f64>, Array1<f64>) {
    let (batch, in_ch, len) = x.dim();
    let (out_ch, _, kernel) = w.dim();
    let pad = (kernel - 1) / 2;
    let mut dx = Array3::zeros((batch, in_ch, len));
    let mut dw = Array3::zeros((out_ch, in_ch, kernel));
    let mut db = Array1::zeros(out_ch);
    for bi in 0..batch {
        for oc in 0..out_ch {
            for l in 0..len {
                let g = dy[[bi, oc, l]];
                db[oc] += g;
                for ic in 0..in_ch {
                    for k in 0..kernel {
                        let pos = l + k;
                        if pos >= pad && pos - pad < len {
                            dw[[oc, ic, k]] += g * x[[bi, ic, pos - pad]];
                            dx[[bi, ic, pos - pad]] += g * w[[oc, ic, k]];
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

fn pooled_len(len: usize) -> usize {
    len.div_ceil(POOL)
}

/// Max pooling, window 3 stride 3; a partial window at the tail is kept.
/// Ties resolve to the earliest index so the backward routing is unique.
fn maxpool_forward(x: &Array3<f64>) -> (Array3<f64>, Array3<usize>) {
    let (batch, ch, len) = x.dim();
    let out_len = pooled_len(len);
    let mut y = Array3::zeros((batch, ch, out_len));
    let mut argmax = Array3::zeros((batch, ch, out_len));
    for bi in 0..batch {
        for c in 0..ch {
            for o in 0..out_len {
                let start = o * POOL;
                let end = (start + POOL).min(len);
                let mut best = start;
                for pos in start + 1..end {
                    if x[[bi, c, pos]] > x[[bi, c, best]] {
                        best = pos;
                    }
                }
                y[[bi, c, o]] = x[[bi, c, best]];
                argmax[[bi, c, o]] = best;
            }
        }
    }
    (y, argmax)
}

fn maxpool_backward(dy: &Array3<f64>, argmax: &Array3<usize>, in_len: usize) -> Array3<f64> {
    let (batch, ch, out_len) = dy.dim();
    let mut dx = Array3::zeros((batch, ch, in_len));
    for bi in 0..batch {
        for c in 0..ch {
            for o in 0..out_len {
                dx[[bi, c, argmax[[bi, c, o]]]] += dy[[bi, c, o]];
            }
        }
    }
    dx
}

/// Fold `[B, C, L]` into `[B*L, C]` so the shared batch-norm kernel treats
/// every (sample, position) pair as one row.
fn fold_channels(x: &Array3<f64>) -> Array2<f64> {
    let (batch, ch, len) = x.dim();
    let mut out = Array2::zeros((batch * len, ch));
    for bi in 0..batch {
        for c in 0..ch {
            for l in 0..len {
                out[[bi * len + l, c]] = x[[bi, c, l]];
            }
        }
    }
    out
}

fn unfold_channels(x: &Array2<f64>, batch: usize, ch: usize, len: usize) -> Array3<f64> {
    let mut out = Array3::zeros((batch, ch, len));
    for bi in 0..batch {
        for c in 0..ch {
            for l in 0..len {
                out[[bi, c, l]] = x[[bi * len + l, c]];
            }
        }
    }
    out
}

fn relu3(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Transpose a `[B, T, C]` batch into the `[B, C, T]` layout used here.
fn to_channel_major(x: &Array3<f64>) -> Array3<f64> {
    let (b, t, c) = x.dim();
    let mut out = Array3::zeros((b, c, t));
    for bi in 0..b {
        for ti in 0..t {
            for ci in 0..c {
                out[[bi, ci, ti]] = x[[bi, ti, ci]];
            }
        }
    }
    out
}

impl ConvModel {
    pub fn new(arch: ConvArch, stream: RngStream) -> Result<Self> {
        if arch.input_steps < 1 || arch.in_channels < 1 || arch.classes < 1 {
            return Err(Error::InvalidParameter("conv dimensions must be positive".into()));
        }
        if arch.kernel == 0 || arch.kernel % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel size must be odd and positive, got {}",
                arch.kernel
            )));
        }
        if arch.channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidParameter("conv channel counts must be positive".into()));
        }
        let mut rng = stream.rng();
        let mut blocks = Vec::with_capacity(NUM_BLOCKS);
        let mut in_ch = arch.in_channels;
        for &out_ch in &arch.channels {
            let fan_in = in_ch * arch.kernel;
            let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            blocks.push(ConvBlock {
                w: Array3::from_shape_fn((out_ch, in_ch, arch.kernel), |_| dist.sample(&mut rng)),
                b: Array1::zeros(out_ch),
                gamma: Array1::ones(out_ch),
                beta: Array1::zeros(out_ch),
                running_mean: Array1::zeros(out_ch),
                running_var: Array1::ones(out_ch),
            });
            in_ch = out_ch;
        }
        let head_in = arch.channels[3];
        let dist = Normal::new(0.0, (2.0 / head_in as f64).sqrt()).unwrap();
        Ok(ConvModel {
            arch,
            blocks,
            fc_w: Array2::from_shape_fn((head_in, arch.classes), |_| dist.sample(&mut rng)),
            fc_b: Array1::zeros(arch.classes),
        })
    }

    pub fn forward_train(&mut self, x: &Array3<f64>, _stream: RngStream) -> (Array2<f64>, ConvCache) {
        let mut cur = to_channel_major(x);
        let mut caches = Vec::with_capacity(NUM_BLOCKS);
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let input = cur;
            let z = conv_forward(&input, &block.w, &block.b);
            let (batch, ch, len) = z.dim();
            let folded = fold_channels(&z);
            let (bn_out, bn) = bn_forward_train(
                &folded,
                &block.gamma,
                &block.beta,
                &mut block.running_mean,
                &mut block.running_var,
            );
            let pre_relu = unfold_channels(&bn_out, batch, ch, len);
            let activated = relu3(&pre_relu);
            let (next, pool_argmax) = if i < NUM_BLOCKS - 1 {
                let (pooled, argmax) = maxpool_forward(&activated);
                (pooled, Some(argmax))
            } else {
                (activated, None)
            };
            caches.push(BlockCache {
                input,
                bn,
                pre_relu,
                relu_out_len: len,
                pool_argmax,
            });
            cur = next;
        }

        let (batch, ch, len) = cur.dim();
        let mut features = Array2::zeros((batch, ch));
        for bi in 0..batch {
            for c in 0..ch {
                let mut acc = 0.0;
                for l in 0..len {
                    acc += cur[[bi, c, l]];
                }
                features[[bi, c]] = acc / len as f64;
            }
        }
        let logits = features.dot(&self.fc_w) + &self.fc_b;
        (
            logits,
            ConvCache { blocks: caches, pooled_len: len, features },
        )
    }

    pub fn forward_eval(&self, x: &Array3<f64>) -> Array2<f64> {
        let mut cur = to_channel_major(x);
        for (i, block) in self.blocks.iter().enumerate() {
            let z = conv_forward(&cur, &block.w, &block.b);
            let (batch, ch, len) = z.dim();
            let folded = fold_channels(&z);
            let bn_out = bn_forward_eval(
                &folded,
                &block.gamma,
                &block.beta,
                &block.running_mean,
                &block.running_var,
            );
            let activated = relu3(&unfold_channels(&bn_out, batch, ch, len));
            cur = if i < NUM_BLOCKS - 1 {
                maxpool_forward(&activated).0
            } else {
                activated
            };
        }
        let (batch, ch, len) = cur.dim();
        let mut features = Array2::zeros((batch, ch));
        for bi in 0..batch {
            for c in 0..ch {
                let mut acc = 0.0;
                for l in 0..len {
                    acc += cur[[bi, c, l]];
                }
                features[[bi, c]] = acc / len as f64;
            }
        }
        features.dot(&self.fc_w) + &self.fc_b
    }

    pub fn backward(&self, cache: &ConvCache, dlogits: &Array2<f64>) -> Vec<f64> {
        let dfc_w = cache.features.t().dot(dlogits);
        let dfc_b = dlogits.sum_axis(Axis(0));
        let dfeatures = dlogits.dot(&self.fc_w.t());

        // Undo the global average pool.
        let (batch, ch) = dfeatures.dim();
        let len = cache.pooled_len;
        let mut dcur = Array3::zeros((batch, ch, len));
        for bi in 0..batch {
            for c in 0..ch {
                let g = dfeatures[[bi, c]] / len as f64;
                for l in 0..len {
                    dcur[[bi, c, l]] = g;
                }
            }
        }

        let mut block_grads: Vec<(Array3<f64>, Array1<f64>, Array1<f64>, Array1<f64>)> =
            Vec::with_capacity(NUM_BLOCKS);
        for (i, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            if let Some(argmax) = &bc.pool_argmax {
                dcur = maxpool_backward(&dcur, argmax, bc.relu_out_len);
            }
            // ReLU gate on the pre-activation sign.
            dcur.zip_mut_with(&bc.pre_relu, |d, p| {
                if *p <= 0.0 {
                    *d = 0.0;
                }
            });
            let (b_dim, ch_dim, len_dim) = dcur.dim();
            let folded_dy = fold_channels(&dcur);
            let (dz_folded, dgamma, dbeta) = bn_backward(&bc.bn, &block.gamma, &folded_dy);
            let dz = unfold_channels(&dz_folded, b_dim, ch_dim, len_dim);
            let (dx, dw, db) = conv_backward(&bc.input, &block.w, &dz);
            block_grads.push((dw, db, dgamma, dbeta));
            if i > 0 {
                dcur = dx;
            }
        }
        block_grads.reverse();

        let mut out = Vec::with_capacity(self.num_params());
        for (dw, db, dgamma, dbeta) in &block_grads {
            flatten::push3(&mut out, dw);
            flatten::push1(&mut out, db);
            flatten::push1(&mut out, dgamma);
            flatten::push1(&mut out, dbeta);
        }
        flatten::push2(&mut out, &dfc_w);
        flatten::push1(&mut out, &dfc_b);
        out
    }

    pub fn num_params(&self) -> usize {
        let mut total = 0;
        let mut in_ch = self.arch.in_channels;
        for &out_ch in &self.arch.channels {
            total += out_ch * in_ch * self.arch.kernel + 3 * out_ch;
            in_ch = out_ch;
        }
        total + self.arch.channels[3] * self.arch.classes + self.arch.classes
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for block in &self.blocks {
            flatten::push3(&mut out, &block.w);
            flatten::push1(&mut out, &block.b);
            flatten::push1(&mut out, &block.gamma);
            flatten::push1(&mut out, &block.beta);
        }
        flatten::push2(&mut out, &self.fc_w);
        flatten::push1(&mut out, &self.fc_b);
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
        for block in &mut self.blocks {
            unflatten::take3(flat, &mut off, &mut block.w);
            unflatten::take1(flat, &mut off, &mut block.b);
            unflatten::take1(flat, &mut off, &mut block.gamma);
            unflatten::take1(flat, &mut off, &mut block.beta);
        }
        unflatten::take2(flat, &mut off, &mut self.fc_w);
        unflatten::take1(flat, &mut off, &mut self.fc_b);
        Ok(())
    }

    pub fn buffers(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for block in &self.blocks {
            flatten::push1(&mut out, &block.running_mean);
            flatten::push1(&mut out, &block.running_var);
        }
        out
    }

    pub fn set_buffers(&mut self, flat: &[f64]) -> Result<()> {
        let expected: usize = self.arch.channels.iter().map(|c| 2 * c).sum();
        if flat.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "buffer vector length {} != {expected}",
                flat.len()
            )));
        }
        let mut off = 0;
        for block in &mut self.blocks {
            unflatten::take1(flat, &mut off, &mut block.running_mean);
            unflatten::take1(flat, &mut off, &mut block.running_var);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_im2col_matrix_oracle() {
        // Single channel, kernel 5: the convolution equals a matrix product
        // of padded windows against the flattened kernel, and the weight
        // gradient equals the window matrix transposed times the upstream
        // gradient.
        let mut rng = crate::rng::RngStream::new(15).rng();
        use rand::Rng;
        let len = 9;
        let kernel = 5;
        let pad = 2;
        let x = Array3::from_shape_fn((1, 1, len), |_| rng.random::<f64>() - 0.5);
        let w = Array3::from_shape_fn((1, 1, kernel), |_| rng.random::<f64>() - 0.5);
        let b = Array1::zeros(1);

        let mut windows = Array2::zeros((len, kernel));
        for l in 0..len {
            for k in 0..kernel {
                let pos = l + k;
                if pos >= pad && pos - pad < len {
                    windows[[l, k]] = x[[0, 0, pos - pad]];
                }
            }
        }
        let w_flat = Array1::from_iter(w.iter().copied());

        let y = conv_forward(&x, &w, &b);
        let y_oracle = windows.dot(&w_flat);
        for l in 0..len {
            assert!((y[[0, 0, l]] - y_oracle[l]).abs() < 1e-12);
        }

        let dy = Array3::from_shape_fn((1, 1, len), |_| rng.random::<f64>() - 0.5);
        let (_, dw, db) = conv_backward(&x, &w, &dy);
        let dy_flat = Array1::from_iter(dy.iter().copied());
        let dw_oracle = windows.t().dot(&dy_flat);
        for k in 0..kernel {
            assert!((dw[[0, 0, k]] - dw_oracle[k]).abs() < 1e-12);
        }
        assert!((db[0] - dy_flat.sum()).abs() < 1e-12);
    }

    #[test]
    fn maxpool_keeps_partial_tail_windows() {
        let x = Array3::from_shape_fn((1, 1, 7), |(_, _, l)| l as f64);
        let (y, argmax) = maxpool_forward(&x);
        assert_eq!(y.dim(), (1, 1, 3));
        assert_eq!(y[[0, 0, 0]], 2.0);
        assert_eq!(y[[0, 0, 1]], 5.0);
        assert_eq!(y[[0, 0, 2]], 6.0); // window of one
        assert_eq!(argmax[[0, 0, 2]], 6);
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = Array3::from_shape_fn((1, 1, 6), |(_, _, l)| if l == 1 || l == 5 { 2.0 } else { 0.0 });
        let (_, argmax) = maxpool_forward(&x);
        let dy = Array3::from_elem((1, 1, 2), 1.0);
        let dx = maxpool_backward(&dy, &argmax, 6);
        assert_eq!(dx[[0, 0, 1]], 1.0);
        assert_eq!(dx[[0, 0, 5]], 1.0);
        assert_eq!(dx.sum(), 2.0);
    }

    #[test]
    fn channel_fold_roundtrips() {
        let mut rng = crate::rng::RngStream::new(2).rng();
        use rand::Rng;
        let x = Array3::from_shape_fn((3, 4, 5), |_| rng.random::<f64>());
        let folded = fold_channels(&x);
        assert_eq!(folded.dim(), (15, 4));
        let back = unfold_channels(&folded, 3, 4, 5);
        assert_eq!(x, back);
    }
}
