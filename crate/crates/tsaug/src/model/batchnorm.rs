//! Batch normalization over a `[N, F]` activation matrix.
//!
//! Training mode normalizes with the biased batch moments and updates the
//! running statistics in place (momentum 0.1, unbiased variance, matching the
//! usual deep-learning convention); eval mode normalizes with the running
//! statistics and is fully deterministic. The Conv-1D backbone reuses these
//! routines channel-wise by folding its `[B, C, L]` tensors into `[B*L, C]`.

use ndarray::{Array1, Array2, Axis};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Intermediates needed for the backward pass.
pub struct BnCache {
    pub x_hat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub fn bn_forward_train(
    x: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    running_mean: &mut Array1<f64>,
    running_var: &mut Array1<f64>,
) -> (Array2<f64>, BnCache) {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).unwrap();
    let centered = x - &mean;
    let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());

    let x_hat = &centered * &inv_std;
    let y = &x_hat * gamma + beta;

    let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
    running_mean.zip_mut_with(&mean, |r, m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
    running_var.zip_mut_with(&var, |r, v| {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbiased
    });

    (y, BnCache { x_hat, inv_std })
}

pub fn bn_forward_eval(
    x: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    running_mean: &Array1<f64>,
    running_var: &Array1<f64>,
) -> Array2<f64> {
    let inv_std = running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let x_hat = (x - running_mean) * &inv_std;
    &x_hat * gamma + beta
}

/// Gradient through the training-mode normalization.
///
/// Returns `(dx, dgamma, dbeta)` using the compact form
/// `dx = inv_std/N * gamma * (N*dy - sum(dy) - x_hat * sum(dy*x_hat))`.
pub fn bn_backward(
    cache: &BnCache,
    gamma: &Array1<f64>,
    dy: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let n = dy.nrows() as f64;
    let dbeta = dy.sum_axis(Axis(0));
    let dgamma = (dy * &cache.x_hat).sum_axis(Axis(0));

    let sum_dy = &dbeta;
    let sum_dy_xhat = &dgamma;
    let mut dx = dy * n;
    dx -= sum_dy;
    dx -= &(&cache.x_hat * sum_dy_xhat);
    dx *= &(gamma * &cache.inv_std.mapv(|v| v / n));
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn train_mode_standardizes_the_batch() {
        let x = array![[1.0, 10.0], [3.0, 30.0], [5.0, 20.0], [7.0, 40.0]];
        let gamma = Array1::ones(2);
        let beta = Array1::zeros(2);
        let mut rm = Array1::zeros(2);
        let mut rv = Array1::ones(2);
        let (y, _) = bn_forward_train(&x, &gamma, &beta, &mut rm, &mut rv);
        for f in 0..2 {
            let col = y.column(f);
            let mean: f64 = col.iter().sum::<f64>() / 4.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4); // eps shrinks it slightly
        }
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let x = array![[4.0], [6.0]];
        let gamma = Array1::ones(1);
        let beta = Array1::zeros(1);
        let mut rm = Array1::zeros(1);
        let mut rv = Array1::ones(1);
        bn_forward_train(&x, &gamma, &beta, &mut rm, &mut rv);
        // mean 5, biased var 1, unbiased var 2.
        assert!((rm[0] - 0.5).abs() < 1e-12);
        assert!((rv[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = array![
            [0.3, -1.2, 0.7],
            [1.1, 0.4, -0.6],
            [-0.5, 0.9, 0.2],
            [0.8, -0.3, 1.5]
        ];
        let gamma = array![1.2, 0.8, 1.0];
        let beta = array![0.1, -0.2, 0.3];
        // Loss: sum of squares of the output.
        let loss = |x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>| -> f64 {
            let mut rm = Array1::zeros(3);
            let mut rv = Array1::ones(3);
            let (y, _) = bn_forward_train(x, gamma, beta, &mut rm, &mut rv);
            y.iter().map(|v| v * v).sum()
        };

        let mut rm = Array1::zeros(3);
        let mut rv = Array1::ones(3);
        let (y, cache) = bn_forward_train(&x, &gamma, &beta, &mut rm, &mut rv);
        let dy = y.mapv(|v| 2.0 * v);
        let (dx, dgamma, dbeta) = bn_backward(&cache, &gamma, &dy);

        let h = 1e-6;
        for i in 0..4 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&xp, &gamma, &beta) - loss(&xm, &gamma, &beta)) / (2.0 * h);
                assert!(
                    (fd - dx[[i, j]]).abs() < 1e-5,
                    "dx[{i},{j}]: fd {fd} vs {got}",
                    got = dx[[i, j]]
                );
            }
        }
        for j in 0..3 {
            let mut gp = gamma.clone();
            gp[j] += h;
            let mut gm = gamma.clone();
            gm[j] -= h;
            let fd = (loss(&x, &gp, &beta) - loss(&x, &gm, &beta)) / (2.0 * h);
            assert!((fd - dgamma[j]).abs() < 1e-5);

            let mut bp = beta.clone();
            bp[j] += h;
            let mut bm = beta.clone();
            bm[j] -= h;
            let fd = (loss(&x, &gamma, &bp) - loss(&x, &gamma, &bm)) / (2.0 * h);
            assert!((fd - dbeta[j]).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let gamma = Array1::ones(1);
        let beta = Array1::zeros(1);
        let rm = array![2.0];
        let rv = array![4.0];
        let x = array![[4.0], [2.0]];
        let y = bn_forward_eval(&x, &gamma, &beta, &rm, &rv);
        assert!((y[[0, 0]] - 2.0 / (4.0f64 + BN_EPS).sqrt()).abs() < 1e-12);
        assert!(y[[1, 0]].abs() < 1e-12);
    }
}
