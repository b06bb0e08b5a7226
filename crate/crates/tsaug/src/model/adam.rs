//! Adam optimizer on a flat parameter vector.

/// Adam with bias correction; the learning rate is supplied per step so a
/// schedule can drive it externally.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Snapshot of `(m, v, t)` for rollback on rejected steps.
    pub fn state(&self) -> (Vec<f64>, Vec<f64>, u64) {
        (self.m.clone(), self.v.clone(), self.t)
    }

    pub fn restore(&mut self, state: (Vec<f64>, Vec<f64>, u64)) {
        self.m = state.0;
        self.v = state.1;
        self.t = state.2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // With bias correction, |update| on step 1 is lr/(1 + eps/|g|) ~ lr.
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut params = vec![0.0, 0.0];
        adam.step(&mut params, &[0.5, -2.0], 0.01);
        assert!((params[0] + 0.01).abs() < 1e-6);
        assert!((params[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn quadratic_converges() {
        // Minimize (x-3)^2.
        let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut params = vec![0.0];
        for _ in 0..2000 {
            let g = 2.0 * (params[0] - 3.0);
            adam.step(&mut params, &[g], 0.05);
        }
        assert!((params[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn restore_rolls_the_state_back() {
        let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut params = vec![1.0];
        let snap = adam.state();
        let before = params.clone();
        adam.step(&mut params, &[1.0], 0.1);
        adam.restore(snap);
        params = before;
        let mut fresh = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut p2 = vec![1.0];
        adam.step(&mut params, &[1.0], 0.1);
        fresh.step(&mut p2, &[1.0], 0.1);
        assert_eq!(params, p2);
    }
}
