//! Pointwise activation functions with a declared Lipschitz constant.
//!
//! The Lipschitz constant is supplied, never inferred; the validator only
//! refutes it on a fixed grid. Downstream bound assembly trusts the declared
//! value.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

/// Grid used by [`ActivationSpec::validate`]: 10^5 points spanning [-10, 10].
const GRID_POINTS: usize = 100_000;
const GRID_HALF_WIDTH: f64 = 10.0;
/// Slack allowed on the gridded Lipschitz check.
const LIPSCHITZ_SLACK: f64 = 1e-12;

#[derive(Clone)]
pub enum ActivationKind {
    Relu,
    Identity,
    Tanh,
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Relu => write!(f, "Relu"),
            ActivationKind::Identity => write!(f, "Identity"),
            ActivationKind::Tanh => write!(f, "Tanh"),
            ActivationKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub lipschitz: f64,
}

impl ActivationSpec {
    pub fn relu() -> Self {
        ActivationSpec {
            kind: ActivationKind::Relu,
            lipschitz: 1.0,
        }
    }

    pub fn identity() -> Self {
        ActivationSpec {
            kind: ActivationKind::Identity,
            lipschitz: 1.0,
        }
    }

    pub fn tanh() -> Self {
        ActivationSpec {
            kind: ActivationKind::Tanh,
            lipschitz: 1.0,
        }
    }

    pub fn custom<F>(f: F, lipschitz: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        ActivationSpec {
            kind: ActivationKind::Custom(Arc::new(f)),
            lipschitz,
        }
    }

    /// Parse one of the named activations from a config string.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Self::relu()),
            "identity" => Ok(Self::identity()),
            "tanh" => Ok(Self::tanh()),
            other => Err(Error::Config(format!(
                "unknown activation {other:?} (expected relu, identity or tanh)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ActivationKind::Relu => "relu",
            ActivationKind::Identity => "identity",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Custom(_) => "custom",
        }
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match &self.kind {
            ActivationKind::Relu => z.max(0.0),
            ActivationKind::Identity => z,
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Custom(f) => f(z),
        }
    }

    /// True when the function has a kink at 0 (quadrature splits its domain
    /// there). Smooth built-ins opt out; custom functions are treated as
    /// possibly kinked, which is safe either way.
    pub fn kink_at_zero(&self) -> bool {
        match self.kind {
            ActivationKind::Relu | ActivationKind::Custom(_) => true,
            ActivationKind::Identity | ActivationKind::Tanh => false,
        }
    }

    /// Check the declared constants on the fixed grid.
    ///
    /// - relu/identity must declare lipschitz = 1 exactly;
    /// - consecutive grid points must not violate the Lipschitz bound beyond
    ///   slack (by the triangle inequality this covers all grid pairs);
    /// - the function must not vanish identically on the grid.
    pub fn validate(&self) -> Result<()> {
        if self.lipschitz <= 0.0 || !self.lipschitz.is_finite() {
            return Err(Error::Config(format!(
                "lipschitz constant must be positive and finite, got {}",
                self.lipschitz
            )));
        }
        if matches!(
            self.kind,
            ActivationKind::Relu | ActivationKind::Identity
        ) && self.lipschitz != 1.0
        {
            return Err(Error::Config(format!(
                "{} requires lipschitz = 1 exactly, got {}",
                self.name(),
                self.lipschitz
            )));
        }
        let step = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
        let mut all_zero = true;
        let mut prev = self.eval(-GRID_HALF_WIDTH);
        if prev != 0.0 {
            all_zero = false;
        }
        for i in 1..GRID_POINTS {
            let z = -GRID_HALF_WIDTH + step * i as f64;
            let v = self.eval(z);
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "activation returned non-finite value at z = {z}"
                )));
            }
            if v != 0.0 {
                all_zero = false;
            }
            if (v - prev).abs() > self.lipschitz * step + LIPSCHITZ_SLACK {
                return Err(Error::Numeric(format!(
                    "activation violates declared Lipschitz constant {} near z = {z}",
                    self.lipschitz
                )));
            }
            prev = v;
        }
        if all_zero {
            return Err(Error::Config(
                "activation is identically zero on the test grid".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate() {
        ActivationSpec::relu().validate().unwrap();
        ActivationSpec::identity().validate().unwrap();
        ActivationSpec::tanh().validate().unwrap();
    }

    #[test]
    fn relu_requires_unit_lipschitz() {
        let mut a = ActivationSpec::relu();
        a.lipschitz = 2.0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn understated_lipschitz_is_refuted() {
        let a = ActivationSpec::custom(|z| 3.0 * z, 1.0);
        assert!(a.validate().is_err());
        let ok = ActivationSpec::custom(|z| 3.0 * z, 3.0);
        ok.validate().unwrap();
    }

    #[test]
    fn zero_function_rejected() {
        let a = ActivationSpec::custom(|_| 0.0, 1.0);
        assert!(a.validate().is_err());
    }

    #[test]
    fn eval_matches_definitions() {
        assert_eq!(ActivationSpec::relu().eval(-3.0), 0.0);
        assert_eq!(ActivationSpec::relu().eval(2.5), 2.5);
        assert_eq!(ActivationSpec::identity().eval(-3.0), -3.0);
        assert_eq!(ActivationSpec::tanh().eval(0.0), 0.0);
    }
}
