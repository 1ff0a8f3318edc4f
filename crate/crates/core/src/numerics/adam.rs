use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub lr: f64,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .values
                .iter()
                .map(|p| Tensor::zeros(p.dims.clone()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            lr,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update from the accumulated gradients, which
    /// are zeroed afterwards.
    pub fn step(&mut self, params: &mut ParamStore) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.values.len() {
            let value = &mut params.values[i].data;
            let grad = &mut params.grads[i].data;
            let m = &mut self.m[i].data;
            let v = &mut self.v[i].data;
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                value[j] -= self.lr * m_hat / (v_hat.sqrt() + eps);
                grad[j] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("theta", Tensor::from_vec(vec![1], vec![v]));
        s
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = scalar(0.0);
        let mut adam = AdamState::new(&s, 0.01, AdamConfig::default());
        s.grads[0].data[0] = 1.0;
        adam.step(&mut s);
        let expected = -0.01 / (1.0 + 1e-8);
        assert!((s.values[0].data[0] - expected).abs() < 1e-15);
        assert_eq!(s.grads[0].data[0], 0.0);

        // the t=1 step is independent of gradient magnitude
        let mut s = scalar(0.0);
        let mut adam = AdamState::new(&s, 0.01, AdamConfig::default());
        s.grads[0].data[0] = 250.0;
        adam.step(&mut s);
        assert!((s.values[0].data[0] + 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar(0.7);
        let mut adam = AdamState::new(&s, 0.01, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut s);
        }
        assert_eq!(s.values[0].data[0], 0.7);
    }

    #[test]
    fn minimizes_quadratic() {
        let lr = 0.1;
        let mut s = scalar(1.0);
        let mut adam = AdamState::new(&s, lr, AdamConfig::default());

        // the same recurrence written out on scalars
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            s.grads[0].data[0] = 2.0 * s.values[0].data[0];
            adam.step(&mut s);

            let g = 2.0 * theta;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        assert_eq!(s.values[0].data[0], theta);
        assert!(theta.abs() < 0.1, "theta = {theta}");
    }
}
