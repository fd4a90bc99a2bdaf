//! Ready-made instances used by the examples, the command line and the tests.

use crate::dist::GriddedDistribution;
use crate::error::Result;
use crate::instance::{ProblemInstance, QualityModel};

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Density of [`bimodal`]: `0.1 + 0.45 N(0.25, 0.05) + 0.45 N(0.75, 0.05)`.
pub fn bimodal_density(x: f64) -> f64 {
    0.1 + 0.45 * normal_pdf(x, 0.25, 0.05) + 0.45 * normal_pdf(x, 0.75, 0.05)
}

/// Two narrow bumps at 0.25 and 0.75 over a flat floor on `[0, 1]`, given
/// as a density table. Its virtual value decreases between the bumps.
pub fn bimodal(m: usize) -> GriddedDistribution {
    let grid: Vec<f64> = (0..m).map(|k| k as f64 / (m - 1) as f64).collect();
    let pdf = grid.iter().map(|&x| bimodal_density(x)).collect();
    GriddedDistribution::from_table(grid, pdf).expect("bimodal table is valid")
}

pub fn uniform01(m: usize) -> GriddedDistribution {
    GriddedDistribution::uniform(0.0, 1.0, m).expect("valid support")
}

/// One uniform(0,1) buyer, constant quality, no reserve.
pub fn posted_price(m: usize) -> ProblemInstance {
    ProblemInstance::linear(vec![uniform01(m)], QualityModel::constant(1.0, 0.0, m).unwrap()).unwrap()
}

/// Two iid uniform(0,1) buyers, constant quality, no reserve.
pub fn two_uniform(m: usize) -> ProblemInstance {
    ProblemInstance::linear(vec![uniform01(m), uniform01(m)], QualityModel::constant(1.0, 0.0, m).unwrap()).unwrap()
}

/// One uniform(0,1) buyer, `alpha = 1`, `r(q) = q` with `q ~ uniform(0,1)`.
pub fn linear_reserve(m: usize) -> ProblemInstance {
    ProblemInstance::linear(vec![uniform01(m)], QualityModel::from_fns(uniform01(m), |_| 1.0, |q| q).unwrap()).unwrap()
}

/// Instances covering one to three buyers, constant, increasing, decreasing
/// and non-monotone cutoffs, and regular and irregular types.
pub fn suite(m: usize) -> Result<Vec<(&'static str, ProblemInstance)>> {
    let u = || uniform01(m);
    let q = || uniform01(m);
    let rising = GriddedDistribution::from_density(0.0, 1.0, |t| 1.0 + t, m)?;
    let shifted = GriddedDistribution::uniform(0.2, 1.2, m)?;
    Ok(vec![
        ("posted_price", posted_price(m)),
        ("two_uniform", two_uniform(m)),
        (
            "two_uniform_xi_increasing",
            ProblemInstance::linear(vec![u(), u()], QualityModel::from_fns(q(), |_| 1.0, |q| 0.8 * q)?)?,
        ),
        (
            "three_mixed_xi_decreasing",
            ProblemInstance::linear(vec![u(), rising, shifted], QualityModel::from_fns(q(), |q| 1.0 + q, |_| 0.5)?)?,
        ),
        (
            "two_uniform_xi_hat",
            ProblemInstance::linear(vec![u(), u()], QualityModel::from_fns(q(), |_| 1.0, |q| 0.5 - (q - 0.5).abs())?)?,
        ),
        (
            "bimodal_xi_v",
            ProblemInstance::linear(vec![bimodal(m)], QualityModel::from_fns(q(), |_| 1.0, |q| (q - 0.5).abs())?)?,
        ),
        (
            "bimodal_uniform_xi_increasing",
            ProblemInstance::linear(vec![bimodal(m), u()], QualityModel::from_fns(q(), |_| 1.0, |q| 0.5 * q)?)?,
        ),
        (
            "three_bimodal_constant",
            ProblemInstance::linear(vec![bimodal(m), bimodal(m), u()], QualityModel::from_fns(q(), |_| 1.5, |_| 0.3)?)?,
        ),
    ])
}
