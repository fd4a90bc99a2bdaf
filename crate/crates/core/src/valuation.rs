//! Buyer valuation forms `v(t, q)`.
//!
//! The linear form `v = alpha(q) * t` is the main model. The general form is
//! restricted to separable products `T(t) * Q(q)` where both `v` and its
//! type derivative are declared explicitly; nothing is differentiated
//! symbolically.

use serde::{Deserialize, Serialize};

use crate::dist::GriddedFunction;
use crate::error::{Error, Result};

pub trait Valuation: Sync {
    fn value(&self, t: f64, q: f64) -> f64;

    /// Partial derivative of the value with respect to the type.
    fn slope(&self, t: f64, q: f64) -> f64;
}

/// `v(t, q) = alpha(q) * t`.
#[derive(Clone, Debug)]
pub struct LinearValuation {
    pub alpha: GriddedFunction,
}

impl Valuation for LinearValuation {
    fn value(&self, t: f64, q: f64) -> f64 {
        self.alpha.at(q) * t
    }

    fn slope(&self, _t: f64, q: f64) -> f64 {
        self.alpha.at(q)
    }
}

/// Ad-hoc valuation from two closures.
pub struct FnValuation<V, S> {
    pub value: V,
    pub slope: S,
}

impl<V, S> Valuation for FnValuation<V, S>
where
    V: Fn(f64, f64) -> f64 + Sync,
    S: Fn(f64, f64) -> f64 + Sync,
{
    fn value(&self, t: f64, q: f64) -> f64 {
        (self.value)(t, q)
    }

    fn slope(&self, t: f64, q: f64) -> f64 {
        (self.slope)(t, q)
    }
}

/// Type factor of a separable valuation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TypeFactor {
    /// `sum_k coeffs[k] * t^k`
    Poly { coeffs: Vec<f64> },
    /// `scale * exp(rate * t)`
    Exp { scale: f64, rate: f64 },
    /// `scale * t^exponent`, for `t >= 0`
    Power { scale: f64, exponent: f64 },
}

impl TypeFactor {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TypeFactor::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            TypeFactor::Exp { scale, rate } => scale * (rate * t).exp(),
            TypeFactor::Power { scale, exponent } => scale * t.max(0.0).powf(*exponent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = match self {
            TypeFactor::Poly { coeffs } => !coeffs.is_empty() && coeffs.iter().all(|c| c.is_finite()),
            TypeFactor::Exp { scale, rate } => scale.is_finite() && rate.is_finite(),
            TypeFactor::Power { scale, exponent } => scale.is_finite() && exponent.is_finite(),
        };
        if finite {
            Ok(())
        } else {
            Err(Error::validation(format!("malformed type factor {self:?}")))
        }
    }
}

/// `v(t, q) = value_type(t) * value_quality(q)` with declared derivative
/// `slope_type(t) * slope_quality(q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralValuation {
    pub value_type: TypeFactor,
    pub value_quality: GriddedFunction,
    pub slope_type: TypeFactor,
    pub slope_quality: GriddedFunction,
}

impl Valuation for GeneralValuation {
    fn value(&self, t: f64, q: f64) -> f64 {
        self.value_type.eval(t) * self.value_quality.at(q)
    }

    fn slope(&self, t: f64, q: f64) -> f64 {
        self.slope_type.eval(t) * self.slope_quality.at(q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValuationForm {
    Linear,
    General(GeneralValuation),
}

impl ValuationForm {
    pub fn is_linear(&self) -> bool {
        matches!(self, ValuationForm::Linear)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_factors() {
        let p = TypeFactor::Poly { coeffs: vec![1.0, -2.0, 3.0] };
        assert_eq!(p.eval(2.0), 1.0 - 4.0 + 12.0);
        let e = TypeFactor::Exp { scale: 2.0, rate: 1.0 };
        assert!((e.eval(1.0) - 2.0 * 1f64.exp()).abs() < 1e-12);
        let w = TypeFactor::Power { scale: 1.0, exponent: 0.5 };
        assert_eq!(w.eval(4.0), 2.0);
        assert!(TypeFactor::Poly { coeffs: vec![] }.validate().is_err());
    }
}
