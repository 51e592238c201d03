use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bounded-output layer: hard clip to `[a, b]` plus an L1 penalty of weight
/// `gamma` on the distance to the interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipConfig {
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
}

pub const DEFAULT_GAMMA: f64 = 15.0;

impl ClipConfig {
    pub fn new(a: f64, b: f64, gamma: f64) -> Result<Self> {
        let cfg = Self { a, b, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a < self.b) || !(self.gamma > 0.0) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "clip config needs a < b and gamma > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn clip(&self, v: f64) -> f64 {
        v.max(self.a).min(self.b)
    }

    #[inline]
    pub fn penalty(&self, v: f64) -> f64 {
        if v < self.a {
            self.gamma * (self.a - v)
        } else if v > self.b {
            self.gamma * (v - self.b)
        } else {
            0.0
        }
    }

    #[inline]
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }
}

/// Clips every element and returns the summed penalty.
pub fn clip_with_penalty(v: &[f64], cfg: &ClipConfig) -> (Vec<f64>, f64) {
    let clipped = v.iter().map(|&x| cfg.clip(x)).collect();
    let penalty = v.iter().map(|&x| cfg.penalty(x)).sum();
    (clipped, penalty)
}

/// Gradient w.r.t. the raw input given the upstream gradient of the clipped
/// output and the weight of the penalty in the loss.
pub fn clip_vjp(v: &[f64], cfg: &ClipConfig, grad_clipped: &[f64], penalty_weight: f64) -> Vec<f64> {
    v.iter()
        .zip(grad_clipped)
        .map(|(&x, &g)| {
            if x < cfg.a {
                -cfg.gamma * penalty_weight
            } else if x > cfg.b {
                cfg.gamma * penalty_weight
            } else {
                g
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn inside_is_untouched() {
        let cfg = ClipConfig::new(-1.0, 1.0, DEFAULT_GAMMA).unwrap();
        let v = [-1.0, -0.2, 0.0, 0.9, 1.0];
        let (c, p) = clip_with_penalty(&v, &cfg);
        assert_eq!(c, v.to_vec());
        assert_eq!(p, 0.0);
    }

    #[test]
    fn scalar_cases() {
        let cfg = ClipConfig::new(0.1, 1.0, 15.0).unwrap();
        let (c, p) = clip_with_penalty(&[cfg.b + 1.0], &cfg);
        assert_eq!((c[0], p), (1.0, 15.0));
        let (c, p) = clip_with_penalty(&[cfg.a - 2.0], &cfg);
        assert_eq!(c[0], 0.1);
        assert!((p - 30.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ClipConfig::new(1.0, 1.0, 15.0).is_err());
        assert!(ClipConfig::new(0.0, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn clip_invariants(v in -10.0f64..10.0, a in -3.0f64..0.0, w in 0.1f64..3.0) {
            let cfg = ClipConfig::new(a, a + w, DEFAULT_GAMMA).unwrap();
            let c = cfg.clip(v);
            prop_assert!(c >= cfg.a && c <= cfg.b);
            let p = cfg.penalty(v);
            prop_assert_eq!(p == 0.0, v >= cfg.a && v <= cfg.b);
            // slope magnitude is exactly gamma away from the interval
            let h = 1e-3;
            if v < cfg.a - h || v > cfg.b + h {
                let slope = (cfg.penalty(v + h) - cfg.penalty(v - h)) / (2.0 * h);
                prop_assert!((slope.abs() - DEFAULT_GAMMA).abs() < 1e-9);
            }
        }
    }
}
