use std::collections::BTreeMap;

use crate::model::ModelParams;

/// Adam with bias correction. Moments are created lazily per parameter.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters absent from `grads` are left untouched.
    pub fn update(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Vec<f64>>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                *x -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut params = ModelParams::default();
        params.insert("w", Tensor::vector(vec![1.0, -1.0, 0.5]).unwrap());
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![3.0, -0.2, 0.0]);
        let mut adam = Adam::new(0.1);
        adam.update(&mut params, &grads);
        let w = params.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 0.9).abs() < 1e-6);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut params = ModelParams::default();
        params.insert("x", Tensor::vector(vec![5.0]).unwrap());
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let x = params.get("x").unwrap().data()[0];
            let grads = BTreeMap::from([("x".to_string(), vec![2.0 * (x - 2.0)])]);
            adam.update(&mut params, &grads);
        }
        assert!((params.get("x").unwrap().data()[0] - 2.0).abs() < 1e-2);
    }
}
