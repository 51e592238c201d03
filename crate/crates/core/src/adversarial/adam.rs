use serde::{Deserialize, Serialize};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient count mismatch");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_squared_norm() {
        let mut w = vec![1.0; 10];
        let mut opt = Adam::new(10, 0.01, 0.9, 0.999);
        let mut reached = None;
        for step in 1..=500 {
            let g: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
            opt.update(&mut w, &g);
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-3 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "did not converge: {w:?}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let start = vec![0.3, -1.7, 2.5e-9];
        let mut w = start.clone();
        let mut opt = Adam::new(3, 0.0, 0.5, 0.999);
        opt.update(&mut w, &[1.0, -3.0, 7.0]);
        assert_eq!(w, start);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut w = vec![0.0, 0.0];
        let mut opt = Adam::new(2, 0.1, 0.5, 0.999);
        opt.update(&mut w, &[4.0, -0.5]);
        assert!((w[0] + 0.1).abs() < 1e-8 && (w[1] - 0.1).abs() < 1e-7);
    }
}
