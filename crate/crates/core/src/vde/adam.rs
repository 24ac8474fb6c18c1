use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    params: AdamParams,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, params: AdamParams) -> Self {
        Self {
            params,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step<'a>(&mut self, theta: impl Iterator<Item = &'a mut f64>, grad: &[f64]) {
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (((p, g), m), v) in theta.zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut x = [1.0, -2.0];
        let mut opt = Adam::new(2, 0.1, AdamParams::default());
        opt.step(x.iter_mut(), &[3.0, -0.5]);
        assert!((x[0] - 0.9).abs() < 1e-8);
        assert!((x[1] + 1.9).abs() < 1e-8);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = [5.0];
        let mut opt = Adam::new(1, 0.05, AdamParams::default());
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 1.5)];
            opt.step(x.iter_mut(), &g);
        }
        assert!((x[0] - 1.5).abs() < 1e-3);
    }
}
