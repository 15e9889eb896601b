//! AdamW with decoupled weight decay and the warmup+cosine learning-rate
//! schedule.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;

pub type ParamMap = BTreeMap<String, Tensor<f32>>;

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
pub struct OptimizerState {
    pub cfg: AdamWConfig,
    m: ParamMap,
    v: ParamMap,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(cfg: AdamWConfig) -> Self {
        OptimizerState { cfg, m: BTreeMap::new(), v: BTreeMap::new(), t: 0 }
    }

    /// One AdamW update. Validates every gradient is finite and shape-aligned
    /// before mutating anything; weight decay is decoupled (applied to the
    /// parameter, never folded into the gradient).
    pub fn step(&mut self, params: &mut ParamMap, grads: &ParamMap) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing gradient for parameter {name}")))?;
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw_step",
                    detail: format!("{name}: param {:?} vs grad {:?}", p.shape(), g.shape()),
                });
            }
            g.assert_finite(&format!("gradient of {name}"))?;
        }

        self.t += 1;
        let t = self.t as i32;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let lr = c.lr as f32;
        let eps = c.eps as f32;
        let decay_mul = 1.0 - (c.lr * c.weight_decay) as f32;
        let (inv_bc1, inv_bc2) = (1.0 / bc1 as f32, 1.0 / bc2 as f32);

        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()))
            {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let m_hat = *mv * inv_bc1;
                let v_hat = *vv * inv_bc2;
                *pv = *pv * decay_mul - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Serialize moments + step counter as checkpoint entries (prefixed so
    /// the model loader can skip them).
    pub fn to_entries(&self) -> ParamMap {
        let mut out = BTreeMap::new();
        for (k, t) in &self.m {
            out.insert(format!("opt.m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("opt.v.{k}"), t.clone());
        }
        out.insert(
            "opt.t".to_string(),
            Tensor::from_vec(&[1], vec![self.t as f32]).expect("1-element tensor"),
        );
        out
    }

    pub fn from_entries(cfg: AdamWConfig, entries: &ParamMap) -> Self {
        let mut state = OptimizerState::new(cfg);
        for (k, t) in entries {
            if let Some(name) = k.strip_prefix("opt.m.") {
                state.m.insert(name.to_string(), t.clone());
            } else if let Some(name) = k.strip_prefix("opt.v.") {
                state.v.insert(name.to_string(), t.clone());
            } else if k == "opt.t" {
                state.t = t.data()[0] as u64;
            }
        }
        state
    }
}

/// Linear warmup to `base_lr` followed by cosine decay to `min_lr`.
#[derive(Clone, Copy, Debug)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_steps: usize, total_steps: usize, min_lr: f64) -> Result<Self> {
        if warmup_steps >= total_steps {
            return Err(Error::BadSchedule(format!(
                "warmup_steps {warmup_steps} must be < total_steps {total_steps}"
            )));
        }
        Ok(LrSchedule { base_lr, warmup_steps, total_steps, min_lr })
    }

    /// Steps past `total_steps` clamp to `min_lr`.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return self.min_lr;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        self.min_lr
            + (self.base_lr - self.min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f32) -> ParamMap {
        let mut p = BTreeMap::new();
        p.insert("p".to_string(), Tensor::from_vec(&[1], vec![v]).unwrap());
        p
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut params = single_param(1.2345);
        let grads = single_param(0.0);
        let mut st = OptimizerState::new(AdamWConfig::default());
        for _ in 0..5 {
            st.step(&mut params, &grads).unwrap();
        }
        assert_eq!(params["p"].data()[0], 1.2345);
    }

    #[test]
    fn decoupled_decay_scales_param() {
        let mut params = single_param(1.0);
        let grads = single_param(0.0);
        let cfg = AdamWConfig { lr: 1e-3, weight_decay: 0.05, ..Default::default() };
        let mut st = OptimizerState::new(cfg);
        st.step(&mut params, &grads).unwrap();
        let expected = 1.0 - 5e-5;
        assert!((params["p"].data()[0] - expected).abs() < 1e-9);
    }

    #[test]
    fn first_step_hand_value() {
        // p=1, g=1, lr=1e-3, eps=1e-8, wd=0: bias-corrected m_hat=v_hat=1,
        // so p' = 1 - 1e-3/(1+1e-8) ~= 0.999
        let mut params = single_param(1.0);
        let grads = single_param(1.0);
        let mut st = OptimizerState::new(AdamWConfig::default());
        st.step(&mut params, &grads).unwrap();
        assert!((params["p"].data()[0] - 0.999).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_rejected_before_mutation() {
        let mut params = single_param(2.0);
        let grads = single_param(f32::NAN);
        let mut st = OptimizerState::new(AdamWConfig::default());
        assert!(st.step(&mut params, &grads).is_err());
        assert_eq!(params["p"].data()[0], 2.0);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn optimizer_step_deterministic() {
        let run = || {
            let mut params = single_param(1.0);
            let grads = single_param(0.37);
            let mut st = OptimizerState::new(AdamWConfig { weight_decay: 0.01, ..Default::default() });
            for _ in 0..10 {
                st.step(&mut params, &grads).unwrap();
            }
            params["p"].data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = LrSchedule::new(1e-3, 100, 1100, 0.0).unwrap();
        assert_eq!(s.lr_at(100), 1e-3); // ramp endpoint
        assert_eq!(s.lr_at(1100), 0.0); // cosine endpoint
        assert_eq!(s.lr_at(2000), 0.0); // clamp past the end
        // midpoint of the decay span: 0.5 * base
        let mid = s.lr_at(100 + 500);
        assert!((mid - 0.5e-3).abs() < 1e-12);
    }

    #[test]
    fn schedule_continuous_and_non_increasing_after_warmup() {
        let s = LrSchedule::new(3e-4, 50, 500, 0.0).unwrap();
        let just_before = s.lr_at(49);
        let at = s.lr_at(50);
        assert!((at - just_before) < 3e-4 * 0.03); // continuity at the ramp top
        let mut prev = at;
        for step in 51..=500 {
            let lr = s.lr_at(step);
            assert!(lr <= prev + 1e-15, "lr increased at step {step}");
            prev = lr;
        }
    }

    #[test]
    fn schedule_rejects_bad_warmup() {
        assert!(LrSchedule::new(1e-3, 10, 10, 0.0).is_err());
    }
}
