//! Adam with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::model::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.eps.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "Adam needs lr > 0, beta1 and beta2 in [0, 1), eps > 0; got {self:?}"
            )))
        }
    }
}

/// Moment estimates mirroring a [`ParameterSet`], plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: ParameterSet,
    pub v: ParameterSet,
}

impl AdamState {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        })
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet) -> Result<()> {
        if !params.same_layout(grads) || !params.same_layout(&self.m) {
            return Err(Error::shape(
                "gradient, moment and parameter layouts differ".to_string(),
            ));
        }
        self.t += 1;
        let layers = params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in layers {
            adam_update(
                &self.config,
                self.t,
                p.weights.data_mut(),
                m.weights.data_mut(),
                v.weights.data_mut(),
                g.weights.data(),
            );
            adam_update(&self.config, self.t, &mut p.bias, &mut m.bias, &mut v.bias, &g.bias);
        }
        Ok(())
    }
}

/// Applies step `t` (1-based) of Adam to flat slices of equal length.
pub fn adam_update(cfg: &AdamConfig, t: u64, theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]) {
    debug_assert!(theta.len() == m.len() && m.len() == v.len() && v.len() == g.len());
    let AdamConfig { lr, beta1, beta2, eps } = *cfg;
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (((theta, m), v), &g) in theta.iter_mut().zip(m).zip(v).zip(g) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_network, NetworkSpec};

    #[test]
    fn default_hyperparameters_are_valid() {
        AdamConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let bad = [
            AdamConfig {
                beta1: 1.0,
                ..Default::default()
            },
            AdamConfig {
                beta2: -0.1,
                ..Default::default()
            },
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            AdamConfig {
                eps: 0.0,
                ..Default::default()
            },
        ];
        let p = build_network(&NetworkSpec::default(), 0).unwrap();
        for cfg in bad {
            assert!(AdamState::new(&p, cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn fresh_state_is_zero() {
        let p = build_network(&NetworkSpec::default(), 0).unwrap();
        let s = AdamState::new(&p, AdamConfig::default()).unwrap();
        assert_eq!(s.t, 0);
        assert!(s.m.to_flat().iter().chain(s.v.to_flat().iter()).all(|&x| x == 0.0));
    }

    #[test]
    fn zero_gradient_is_exact_noop() {
        let mut p = build_network(&NetworkSpec::default(), 2).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&p, AdamConfig::default()).unwrap();
        let zero = p.zeros_like();
        for _ in 0..3 {
            s.step(&mut p, &zero).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.t, 3);
    }

    #[test]
    fn update_opposes_gradient_sign() {
        let mut p = build_network(&NetworkSpec::default(), 2).unwrap();
        let before = p.to_flat();
        let mut g = p.zeros_like();
        let signs: Vec<f64> = (0..before.len()).map(|i| if i % 3 == 0 { -0.7 } else { 0.2 }).collect();
        g.set_flat(&signs).unwrap();
        let mut s = AdamState::new(&p, AdamConfig::default()).unwrap();
        s.step(&mut p, &g).unwrap();
        for ((a, b), gi) in p.to_flat().iter().zip(&before).zip(&signs) {
            assert!((a - b) * gi < 0.0);
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let mut p = build_network(&NetworkSpec::default(), 2).unwrap();
        let other_spec = NetworkSpec {
            base_channels: 4,
            ..NetworkSpec::default()
        };
        let g = build_network(&other_spec, 2).unwrap();
        let mut s = AdamState::new(&p, AdamConfig::default()).unwrap();
        assert!(s.step(&mut p, &g).is_err());
    }

    #[test]
    fn single_parameter_first_step() {
        let cfg = AdamConfig::default();
        let (mut theta, mut m, mut v) = ([1.0], [0.0], [0.0]);
        adam_update(&cfg, 1, &mut theta, &mut m, &mut v, &[0.5]);
        // m̂ = 0.5, v̂ = 0.25 after bias correction
        let expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((theta[0] - expected).abs() < 1e-12);
        assert!((theta[0] - 0.999).abs() < 1e-7);
    }

    #[test]
    fn constant_sign_updates_are_bounded_by_lr() {
        let cfg = AdamConfig::default();
        for g in [3.0, 0.5, -0.02, -40.0] {
            let (mut theta, mut m, mut v) = ([0.0], [0.0], [0.0]);
            for t in 1..=100u64 {
                let before = theta[0];
                adam_update(&cfg, t, &mut theta, &mut m, &mut v, &[g]);
                let step = theta[0] - before;
                assert!(step.abs() <= cfg.lr * (1.0 + 1e-9), "g={g} t={t} step={step}");
                assert!(step * g < 0.0);
            }
        }
    }
}
