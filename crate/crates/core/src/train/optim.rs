use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
}

/// One bias-corrected Adam update:
/// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads.get(name).ok_or_else(|| Error::contract(format!("no gradient for `{name}`")))?;
        if g.len() != p.len() {
            return Err(Error::Shape { op: "adam_step", lhs: p.shape().to_vec(), rhs: vec![g.len()] });
        }
    }
    if grads.len() != params.len() {
        return Err(Error::contract("gradients name parameters the model does not have"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Step schedule: `initial * factor^floor(epoch / every)`.
pub fn step_lr(initial: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    initial * factor.powi((epoch / every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one(name: &str, v: f64) -> (ModelParams, BTreeMap<String, Vec<f64>>) {
        let mut p = ModelParams::new();
        p.insert(name, Tensor::vector(vec![v]).unwrap()).unwrap();
        (p, BTreeMap::new())
    }

    // independent recurrence for a scalar parameter with constant gradient
    fn oracle(theta0: f64, g: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut th) = (0.0, 0.0, theta0);
        for k in 1..=steps {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(k as i32));
            let vh = v / (1.0 - b2.powi(k as i32));
            th -= lr * mh / (vh.sqrt() + eps);
        }
        th
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut p, mut g) = one("w", 1.5);
        g.insert("w".into(), vec![0.0]);
        let mut s = AdamState::default();
        for _ in 0..3 {
            adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data(), &[1.5]);
    }

    #[test]
    fn first_step_is_about_lr_times_sign() {
        let (mut p, mut g) = one("w", 0.0);
        g.insert("w".into(), vec![-3.0]);
        let mut s = AdamState::default();
        adam_step(&mut p, &g, &mut s, 0.01, &AdamConfig::default()).unwrap();
        let got = p.get("w").unwrap().data()[0];
        assert!((got - oracle(0.0, -3.0, 0.01, 1)).abs() <= 1e-15);
        assert!((got - 0.01).abs() < 1e-9);
    }

    #[test]
    fn two_steps_match_the_recurrence() {
        let (mut p, mut g) = one("w", 0.7);
        g.insert("w".into(), vec![0.25]);
        let mut s = AdamState::default();
        for _ in 0..2 {
            adam_step(&mut p, &g, &mut s, 0.003, &AdamConfig::default()).unwrap();
        }
        assert!((p.get("w").unwrap().data()[0] - oracle(0.7, 0.25, 0.003, 2)).abs() <= 1e-12);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn mismatched_gradients_are_rejected() {
        let (mut p, mut g) = one("w", 0.0);
        g.insert("w".into(), vec![1.0, 2.0]);
        let mut s = AdamState::default();
        assert!(adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).is_err());
        let mut g = BTreeMap::new();
        g.insert("other".to_string(), vec![1.0]);
        assert!(adam_step(&mut p, &g, &mut s, 0.1, &AdamConfig::default()).is_err());
        assert_eq!(s.t, 0);
    }

    #[test]
    fn step_schedule_values() {
        assert_eq!(step_lr(0.001, 0.7, 20, 0), 0.001);
        assert_eq!(step_lr(0.001, 0.7, 20, 19), 0.001);
        assert!((step_lr(0.001, 0.7, 20, 20) - 0.0007).abs() < 1e-15);
        assert!((step_lr(0.0005, 0.5, 20, 40) - 0.000125).abs() < 1e-15);
    }
}
