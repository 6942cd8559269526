use std::collections::BTreeMap;

use log::warn;

use super::params::{GradMap, ParamStore};
use crate::error::{invalid, Result};

/// Adam with bias correction. The l2 penalty is folded into the gradient
/// (`g + weight_decay * w`) rather than decoupled.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step_count: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
    skipped: u64,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            skipped: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Number of per-parameter updates skipped because of non-finite gradients.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.first_moment.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.second_moment.get(name).map(Vec::as_slice)
    }

    /// Applies one update to every parameter in `params`. Parameters without
    /// a gradient entry are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &GradMap) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params
                .get(name)
                .ok_or_else(|| invalid!("gradient for unknown parameter `{name}`"))?;
            if p.shape() != g.shape() {
                return Err(invalid!(
                    "gradient for `{name}` has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                ));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        let names: Vec<String> = params.names().map(str::to_owned).collect();
        for name in names {
            let grad = grads.get(&name);
            if let Some(g) = grad {
                if !g.is_finite() {
                    self.skipped += 1;
                    warn!("non-finite gradient for `{name}`; update skipped");
                    continue;
                }
            }
            let param = params.get_mut(&name).expect("name taken from store");
            let n = param.numel();
            let m = self.first_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second_moment.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let w = param.data_mut();
            for i in 0..n {
                let gi = grad.map_or(0.0, |g| g.data()[i]) + self.weight_decay * w[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    fn single(name: &str, value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert(name, Tensor::vector(vec![value]));
        p
    }

    fn grad(name: &str, value: f64) -> GradMap {
        let mut g = GradMap::default();
        g.insert(name, Tensor::vector(vec![value]));
        g
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        for g in [3.7, -0.02, 1e4] {
            let mut params = single("w", 0.5);
            let mut adam = Adam::new(0.01, 0.0);
            adam.eps = 0.0;
            adam.step(&mut params, &grad("w", g)).unwrap();
            let delta = params.get("w").unwrap().item() - 0.5;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-12, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_gradient_without_decay_leaves_params() {
        let mut params = single("w", 0.5);
        let mut adam = Adam::new(0.01, 0.0);
        for _ in 0..3 {
            adam.step(&mut params, &grad("w", 0.0)).unwrap();
        }
        assert_eq!(params.get("w").unwrap().item(), 0.5);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn minimizes_square_monotonically() {
        // Oracle: scalar Adam recurrence on f(w) = w^2 evaluated by hand.
        let (mut w_ref, mut m, mut v) = (1.0_f64, 0.0_f64, 0.0_f64);
        let mut reference = vec![];
        for t in 1..=10 {
            let g = 2.0 * w_ref;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9_f64.powi(t));
            let vh = v / (1.0 - 0.999_f64.powi(t));
            w_ref -= 0.1 * mh / (vh.sqrt() + 1e-8);
            reference.push(w_ref);
        }

        let mut params = single("w", 1.0);
        let mut adam = Adam::new(0.1, 0.0);
        let mut prev = 1.0_f64;
        for expected in reference {
            let w = params.get("w").unwrap().item();
            adam.step(&mut params, &grad("w", 2.0 * w)).unwrap();
            let now = params.get("w").unwrap().item();
            assert!(now.abs() < prev.abs());
            assert!((now - expected).abs() < 1e-15);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_is_skipped_and_counted() {
        let mut params = single("w", 0.5);
        params.insert("u", Tensor::vector(vec![1.0]));
        let mut g = grad("w", f64::NAN);
        g.insert("u", Tensor::vector(vec![1.0]));
        let mut adam = Adam::new(0.1, 0.0);
        adam.step(&mut params, &g).unwrap();
        assert_eq!(params.get("w").unwrap().item(), 0.5);
        assert!(params.get("u").unwrap().item() < 1.0);
        assert_eq!(adam.skipped(), 1);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn weight_decay_shrinks_params_with_zero_gradient() {
        let mut params = single("w", 2.0);
        let mut adam = Adam::new(0.01, 0.5);
        adam.step(&mut params, &GradMap::default()).unwrap();
        assert!(params.get("w").unwrap().item() < 2.0);
    }

    #[test]
    fn mismatched_gradient_shape_is_rejected() {
        let mut params = single("w", 2.0);
        let mut g = GradMap::default();
        g.insert("w", Tensor::vector(vec![1.0, 2.0]));
        assert!(Adam::new(0.1, 0.0).step(&mut params, &g).is_err());
    }
}
