//! Problem inputs: buyer type distributions, the quality model and the
//! valuation form.

use crate::dist::{Antiderivative, GriddedDistribution, GriddedFunction, IntervalUnion};
use crate::error::{Error, Result};
use crate::valuation::ValuationForm;

/// Integrals of `g`, `alpha * g` and `r * g` over an acceptance set.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QualityMass {
    pub mass: f64,
    pub alpha: f64,
    pub reserve: f64,
}

/// Quality distribution `G`, value scale `alpha(q)` and seller reserve
/// `r(q)`, all on the grid of `G`.
#[derive(Clone, Debug)]
pub struct QualityModel {
    dist: GriddedDistribution,
    alpha: GriddedFunction,
    reserve: GriddedFunction,
    xi: GriddedFunction,
    g: Antiderivative,
    alpha_g: Antiderivative,
    reserve_g: Antiderivative,
}

impl QualityModel {
    /// `alpha` and `reserve` are resampled onto the grid of `dist`.
    pub fn new(dist: GriddedDistribution, alpha: &GriddedFunction, reserve: &GriddedFunction) -> Result<Self> {
        Self::from_fns(dist, |q| alpha.at(q), |q| reserve.at(q))
    }

    pub fn from_fns(
        dist: GriddedDistribution,
        alpha: impl Fn(f64) -> f64,
        reserve: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let grid = dist.grid().to_vec();
        let alpha = GriddedFunction::from_fn(&grid, alpha)?;
        let reserve = GriddedFunction::from_fn(&grid, reserve)?;
        if let Some(k) = alpha.vals().iter().position(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::validation(format!(
                "alpha must be positive and finite, got {} at q = {}",
                alpha.vals()[k],
                grid[k]
            )));
        }
        if reserve.vals().iter().any(|r| !r.is_finite()) {
            return Err(Error::validation("reserve curve has a non-finite value"));
        }
        let xi =
            GriddedFunction::new(grid.clone(), reserve.vals().iter().zip(alpha.vals()).map(|(r, a)| r / a).collect())?;
        let pdf = dist.pdf_vals();
        let product = |f: &GriddedFunction| {
            let vals = f.vals().iter().zip(pdf).map(|(v, p)| v * p).collect();
            Antiderivative::new(GriddedFunction::new(grid.clone(), vals).expect("same grid"))
        };
        let alpha_g = product(&alpha);
        let reserve_g = product(&reserve);
        let g = Antiderivative::new(dist.pdf_function());
        Ok(QualityModel { dist, alpha, reserve, xi, g, alpha_g, reserve_g })
    }

    /// Constant `alpha` and `reserve` over a uniform quality on `[0, 1]`.
    pub fn constant(alpha: f64, reserve: f64, m: usize) -> Result<Self> {
        Self::from_fns(GriddedDistribution::uniform(0.0, 1.0, m)?, |_| alpha, |_| reserve)
    }

    pub fn dist(&self) -> &GriddedDistribution {
        &self.dist
    }

    pub fn grid(&self) -> &[f64] {
        self.dist.grid()
    }

    pub fn alpha(&self) -> &GriddedFunction {
        &self.alpha
    }

    pub fn reserve(&self) -> &GriddedFunction {
        &self.reserve
    }

    pub fn xi(&self) -> &GriddedFunction {
        &self.xi
    }

    /// `r(q) / alpha(q)`, interpolated.
    pub fn xi_at(&self, q: f64) -> f64 {
        self.xi.at(q)
    }

    /// `{q : xi(q) <= level}`.
    pub fn acceptance_set(&self, level: f64) -> IntervalUnion {
        self.xi.sublevel_set(level)
    }

    pub fn mass_over(&self, set: &IntervalUnion) -> QualityMass {
        QualityMass { mass: self.g.over(set), alpha: self.alpha_g.over(set), reserve: self.reserve_g.over(set) }
    }

    pub fn mass_below(&self, level: f64) -> QualityMass {
        self.mass_over(&self.acceptance_set(level))
    }

    /// `E[r(q)]`
    pub fn expected_reserve(&self) -> f64 {
        self.reserve_g.total()
    }

    /// `E[alpha(q)]`
    pub fn expected_alpha(&self) -> f64 {
        self.alpha_g.total()
    }

    /// `r(q) * g(q)` on the quality grid.
    pub fn reserve_density(&self) -> GriddedFunction {
        let vals = self.reserve.vals().iter().zip(self.dist.pdf_vals()).map(|(r, g)| r * g).collect();
        GriddedFunction::new(self.grid().to_vec(), vals).expect("same grid")
    }

    /// True when `alpha` and `r` are both constant within `tol`.
    pub fn is_constant(&self, tol: f64) -> bool {
        let flat = |f: &GriddedFunction| f.max() - f.min() <= tol;
        flat(&self.alpha) && flat(&self.reserve)
    }
}

#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub buyers: Vec<GriddedDistribution>,
    pub quality: QualityModel,
    pub valuation: ValuationForm,
}

impl ProblemInstance {
    pub fn new(buyers: Vec<GriddedDistribution>, quality: QualityModel, valuation: ValuationForm) -> Result<Self> {
        if buyers.is_empty() {
            return Err(Error::validation("an instance needs at least one buyer"));
        }
        if let ValuationForm::General(g) = &valuation {
            g.value_type.validate()?;
            g.slope_type.validate()?;
        }
        Ok(ProblemInstance { buyers, quality, valuation })
    }

    pub fn linear(buyers: Vec<GriddedDistribution>, quality: QualityModel) -> Result<Self> {
        Self::new(buyers, quality, ValuationForm::Linear)
    }

    pub fn n(&self) -> usize {
        self.buyers.len()
    }

    /// `v_i(t, q)`
    pub fn value(&self, t: f64, q: f64) -> f64 {
        use crate::valuation::Valuation;
        match &self.valuation {
            ValuationForm::Linear => self.quality.alpha.at(q) * t,
            ValuationForm::General(g) => g.value(t, q),
        }
    }

    /// `dv/dt (t, q)`
    pub fn slope(&self, t: f64, q: f64) -> f64 {
        use crate::valuation::Valuation;
        match &self.valuation {
            ValuationForm::Linear => self.quality.alpha.at(q),
            ValuationForm::General(g) => g.slope(t, q),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uq() -> GriddedDistribution {
        GriddedDistribution::uniform(0.0, 1.0, 1024).unwrap()
    }

    #[test]
    fn xi_examples() {
        let qm = QualityModel::from_fns(uq(), |_| 1.0, |q| q).unwrap();
        assert!((qm.xi_at(0.3) - 0.3).abs() < 1e-12);
        let qm = QualityModel::from_fns(uq(), |q| q + 1.0, |q| q + 1.0).unwrap();
        for q in [0.0, 0.37, 1.0] {
            assert!((qm.xi_at(q) - 1.0).abs() < 1e-12);
        }
        let qm = QualityModel::from_fns(uq(), |_| 2.0, |_| 1.0).unwrap();
        assert!((qm.xi_at(0.61) - 0.5).abs() < 1e-12);
        for (k, &x) in qm.xi().vals().iter().enumerate() {
            assert_eq!(x, qm.reserve().vals()[k] / qm.alpha().vals()[k]);
        }
    }

    #[test]
    fn alpha_must_be_positive() {
        assert!(QualityModel::from_fns(uq(), |q| q - 0.5, |_| 0.0).is_err());
        assert!(QualityModel::from_fns(uq(), |_| 0.0, |_| 0.0).is_err());
    }

    #[test]
    fn masses() {
        let qm = QualityModel::from_fns(uq(), |q| 1.0 + q, |q| q).unwrap();
        let m = qm.mass_below(0.25);
        // xi = q / (1 + q) <= 0.25  iff  q <= 1/3
        assert!((m.mass - 1.0 / 3.0).abs() < 1e-3);
        assert!((qm.expected_alpha() - 1.5).abs() < 1e-9);
        assert!((qm.expected_reserve() - 0.5).abs() < 1e-9);
        assert!(!qm.is_constant(1e-12));
        assert!(QualityModel::constant(1.0, 0.0, 64).unwrap().is_constant(1e-12));
    }
}
