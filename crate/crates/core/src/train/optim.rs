//! Adam with bias correction and decoupled weight decay.

use ndarray::{Array2, Zip};

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Array2<f64>,
    v: Array2<f64>,
    t: u32,
}

impl Adam {
    pub fn new(shape: (usize, usize)) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn moments(&self) -> (&Array2<f64>, &Array2<f64>) {
        (&self.m, &self.v)
    }

    /// `p ← p − lr·m̂/(√v̂ + eps) − lr·wd·p`, decay applied to the pre-step value.
    pub fn step(&mut self, params: &mut Array2<f64>, grad: &Array2<f64>, lr: f64, weight_decay: f64) {
        assert_eq!(params.dim(), grad.dim(), "gradient shape");
        assert_eq!(params.dim(), self.m.dim(), "optimizer state shape");
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = 1.0 - lr * weight_decay;
        Zip::from(params)
            .and(grad)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                *p = *p * decay - lr * update;
            });
    }
}
