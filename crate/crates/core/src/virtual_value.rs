//! Virtual values, the regularity test, ironing, and the generalized
//! virtual value for non-linear valuations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::{GriddedDistribution, GriddedFunction};
use crate::error::{Error, Result};
use crate::valuation::Valuation;

/// Allowed decrease per grid step before a curve counts as non-monotone.
pub const MONOTONE_SLACK: f64 = 1e-9;

/// Nodes of the uniform quantile grid used for ironing.
pub const OMEGA_NODES: usize = 2048;

/// Gap between the integrated curve and its convex envelope below which a
/// point is treated as lying on the envelope. Scaled by `max(1, max |H|)`.
pub const HULL_GAP: f64 = 1e-9;

/// `t - (1 - F(t)) / f(t)`.
pub fn virtual_value(d: &GriddedDistribution, t: f64) -> f64 {
    t - d.inverse_hazard(t)
}

/// Virtual value sampled on the distribution's own grid.
pub fn virtual_value_curve(d: &GriddedDistribution) -> GriddedFunction {
    let vals = d.grid().iter().map(|&t| virtual_value(d, t)).collect();
    GriddedFunction::new(d.grid().to_vec(), vals).expect("distribution grid is valid")
}

fn is_monotone(vals: &[f64]) -> bool {
    vals.windows(2).all(|w| w[1] - w[0] >= -MONOTONE_SLACK)
}

pub fn is_regular(d: &GriddedDistribution) -> bool {
    is_monotone(virtual_value_curve(d).vals())
}

/// Raw and ironed virtual values of one buyer on its type grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualValueCurve {
    pub type_grid: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_ironed: Vec<f64>,
    /// Inclusive index ranges of the type grid on which `phi_ironed` is flat.
    pub ironed_intervals: Vec<(usize, usize)>,
    pub regular: bool,
    /// Largest gap between the quantile-space ironed slope and the
    /// type-space curve evaluated back through the quantile function.
    pub ironing_residual: f64,
}

impl VirtualValueCurve {
    /// Ironed virtual value of `d`.
    pub fn new(d: &GriddedDistribution) -> Self {
        iron(d, &virtual_value_curve(d))
    }

    /// Curve that uses the raw virtual value as its threshold function.
    pub fn unironed(d: &GriddedDistribution) -> Self {
        let phi = virtual_value_curve(d).vals().to_vec();
        VirtualValueCurve {
            type_grid: d.grid().to_vec(),
            regular: is_monotone(&phi),
            phi_ironed: phi.clone(),
            phi,
            ironed_intervals: Vec::new(),
            ironing_residual: 0.0,
        }
    }

    pub fn ironed_fn(&self) -> GriddedFunction {
        GriddedFunction::new(self.type_grid.clone(), self.phi_ironed.clone()).expect("curve grid is valid")
    }

    pub fn raw_fn(&self) -> GriddedFunction {
        GriddedFunction::new(self.type_grid.clone(), self.phi.clone()).expect("curve grid is valid")
    }

    pub fn ironed_at(&self, t: f64) -> f64 {
        let (k, w) = crate::dist::locate(&self.type_grid, t);
        if w == 0.0 {
            self.phi_ironed[k]
        } else if w == 1.0 {
            self.phi_ironed[k + 1]
        } else {
            self.phi_ironed[k] + w * (self.phi_ironed[k + 1] - self.phi_ironed[k])
        }
    }

    /// Type range covered by each ironed interval.
    pub fn plateaus(&self) -> Vec<(f64, f64, f64)> {
        self.ironed_intervals.iter().map(|&(a, b)| (self.type_grid[a], self.type_grid[b], self.phi_ironed[a])).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["type", "phi", "phi_ironed"])?;
        for k in 0..self.type_grid.len() {
            w.write_record([self.type_grid[k].to_string(), self.phi[k].to_string(), self.phi_ironed[k].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Indices of the lower convex hull of `(xs[k], ys[k])`, `xs` increasing
/// (Andrew's monotone chain, lower half only).
pub fn lower_hull(xs: &[f64], ys: &[f64]) -> Vec<usize> {
    let mut stack: Vec<usize> = Vec::with_capacity(xs.len());
    for p in 0..xs.len() {
        while stack.len() >= 2 {
            let o = stack[stack.len() - 2];
            let a = stack[stack.len() - 1];
            let cross = (xs[a] - xs[o]) * (ys[p] - ys[o]) - (ys[a] - ys[o]) * (xs[p] - xs[o]);
            if cross <= 0.0 {
                stack.pop();
            } else {
                break;
            }
        }
        stack.push(p);
    }
    stack
}

/// Intermediate quantities of the ironing construction on the quantile grid.
#[derive(Clone, Debug)]
pub struct IroningTrace {
    pub omega: Vec<f64>,
    /// `h(w) = psi(F^-1(w))`
    pub h: Vec<f64>,
    /// Running integral of `h`.
    pub big_h: Vec<f64>,
    /// Lower convex envelope of `big_h`.
    pub envelope: Vec<f64>,
    pub hull: Vec<usize>,
    /// Maximal runs `(a, b)` of omega indices where the envelope lies strictly
    /// below `big_h`; `a` and `b` are the bracketing points on the envelope.
    pub gaps: Vec<(usize, usize)>,
    pub gap_tol: f64,
}

impl IroningTrace {
    pub fn compute(d: &GriddedDistribution, psi: &GriddedFunction) -> Self {
        let m = OMEGA_NODES;
        let omega: Vec<f64> = (0..m).map(|k| k as f64 / (m - 1) as f64).collect();
        let h: Vec<f64> = omega.iter().map(|&w| psi.at(d.quantile(w))).collect();
        let mut big_h = Vec::with_capacity(m);
        let mut acc = 0.0;
        big_h.push(0.0);
        for k in 0..m - 1 {
            acc += 0.5 * (omega[k + 1] - omega[k]) * (h[k] + h[k + 1]);
            big_h.push(acc);
        }
        let hull = lower_hull(&omega, &big_h);
        let mut envelope = vec![0.0; m];
        for seg in hull.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let slope = (big_h[b] - big_h[a]) / (omega[b] - omega[a]);
            for k in a..=b {
                envelope[k] = big_h[a] + slope * (omega[k] - omega[a]);
            }
        }
        let scale = big_h.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        let gap_tol = HULL_GAP * scale;
        let mut gaps = Vec::new();
        let mut k = 0;
        while k < m {
            if big_h[k] - envelope[k] > gap_tol {
                let a = k - 1;
                let mut b = k;
                while b < m && big_h[b] - envelope[b] > gap_tol {
                    b += 1;
                }
                gaps.push((a, b));
                k = b;
            } else {
                k += 1;
            }
        }
        IroningTrace { omega, h, big_h, envelope, hull, gaps, gap_tol }
    }

    /// Slope of the envelope on the gap bracketed by `(a, b)`.
    pub fn chord_slope(&self, a: usize, b: usize) -> f64 {
        (self.big_h[b] - self.big_h[a]) / (self.omega[b] - self.omega[a])
    }

    /// Derivative of the envelope at `w`, taking the segment to the right at
    /// hull vertices.
    pub fn envelope_slope(&self, w: f64) -> f64 {
        let w = w.clamp(0.0, 1.0);
        let pos = self.hull.partition_point(|&i| self.omega[i] <= w);
        let s = pos.clamp(1, self.hull.len() - 1);
        let (a, b) = (self.hull[s - 1], self.hull[s]);
        (self.big_h[b] - self.big_h[a]) / (self.omega[b] - self.omega[a])
    }
}

/// Irons `psi` against the distribution `d`.
///
/// The convex envelope of the integral of `psi(F^-1(w))` is computed on a
/// uniform quantile grid. Where the envelope touches the integral the ironed
/// curve equals `psi`; on each gap it equals the chord slope. The flat range
/// in type space ends where `psi` crosses that slope, which keeps the result
/// monotone at grid resolution.
pub fn iron(d: &GriddedDistribution, psi: &GriddedFunction) -> VirtualValueCurve {
    let type_grid = d.grid().to_vec();
    let phi: Vec<f64> = type_grid.iter().map(|&t| psi.at(t)).collect();
    if is_monotone(&phi) {
        return VirtualValueCurve {
            type_grid,
            phi_ironed: phi.clone(),
            phi,
            ironed_intervals: Vec::new(),
            regular: true,
            ironing_residual: 0.0,
        };
    }

    let trace = IroningTrace::compute(d, psi);
    let mut ironed = phi.clone();
    let mut intervals: Vec<(usize, usize)> = Vec::new();
    let m = type_grid.len();
    let cdf = d.cdf_vals();
    for &(a, b) in &trace.gaps {
        let slope = trace.chord_slope(a, b);
        let (wa, wb) = (trace.omega[a], trace.omega[b]);
        let floor = intervals.last().map_or(0, |&(_, hi)| hi + 1);
        let inside: Vec<usize> = (floor..m).filter(|&j| cdf[j] > wa && cdf[j] < wb).collect();
        let (mut lo, mut hi) = match (inside.first(), inside.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => {
                // gap narrower than a type cell: seed at the cell it falls in
                let j = (floor..m).find(|&j| cdf[j] >= wb).unwrap_or(m - 1);
                (j, j)
            }
        };
        while lo > floor && phi[lo - 1] > slope {
            lo -= 1;
        }
        while hi + 1 < m && phi[hi + 1] < slope {
            hi += 1;
        }
        if phi[lo..=hi].iter().all(|&v| (v - slope).abs() <= MONOTONE_SLACK) {
            continue;
        }
        for v in &mut ironed[lo..=hi] {
            *v = slope;
        }
        intervals.push((lo, hi));
    }

    let curve_fn = GriddedFunction::new(type_grid.clone(), ironed.clone()).expect("valid grid");
    let mut residual = 0.0f64;
    for (k, &w) in trace.omega.iter().enumerate() {
        if trace.gaps.iter().any(|&(a, b)| k > a && k < b) {
            continue;
        }
        let r = (trace.envelope_slope(w) - curve_fn.at(d.quantile(w))).abs();
        if r.is_finite() {
            residual = residual.max(r);
        }
    }

    VirtualValueCurve {
        type_grid,
        regular: false,
        phi,
        phi_ironed: ironed,
        ironed_intervals: intervals,
        ironing_residual: residual,
    }
}

/// `v / (dv/dt) - (1 - F(t)) / f(t)`.
pub fn generalized_virtual_value(v: &impl Valuation, d: &GriddedDistribution, t: f64, q: f64) -> Result<f64> {
    let slope = v.slope(t, q);
    if !(slope > 0.0) {
        return Err(Error::Assumption(format!("valuation slope {slope} is not positive at t = {t}, q = {q}")));
    }
    Ok(v.value(t, q) / slope - d.inverse_hazard(t))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionKind {
    /// `dv/dt <= 0`
    NonPositiveSlope,
    /// `v` decreases in the type.
    Monotonicity,
    /// Finite-difference slopes of `v` decrease in the type.
    Convexity,
    /// Generalized virtual value decreases in the type.
    VirtualMonotonicity,
    /// Declared `dv/dt` disagrees with a central difference of `v`.
    DerivativeMismatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionViolation {
    pub kind: AssumptionKind,
    pub t: f64,
    pub q: f64,
    pub amount: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// First few violations of each kind.
    pub violations: Vec<AssumptionViolation>,
    pub counts: Vec<(AssumptionKind, usize)>,
}

const MAX_LISTED: usize = 16;

impl AssumptionReport {
    pub fn is_ok(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, kind: AssumptionKind) -> usize {
        self.counts.iter().find(|(k, _)| *k == kind).map_or(0, |(_, c)| *c)
    }

    fn record(&mut self, kind: AssumptionKind, t: f64, q: f64, amount: f64) {
        match self.counts.iter_mut().find(|(k, _)| *k == kind) {
            Some((_, c)) => {
                *c += 1;
                if *c <= MAX_LISTED {
                    self.violations.push(AssumptionViolation { kind, t, q, amount });
                }
            }
            None => {
                self.counts.push((kind, 1));
                self.violations.push(AssumptionViolation { kind, t, q, amount });
            }
        }
    }

    pub fn summary(&self) -> String {
        self.counts.iter().map(|(k, c)| format!("{k:?}: {c}")).collect::<Vec<_>>().join(", ")
    }
}

/// Grid check of convexity and monotonicity of `v` in the type, and of
/// monotonicity of the generalized virtual value, at every quality node.
pub fn check_assumptions(v: &impl Valuation, d: &GriddedDistribution, quality_grid: &[f64]) -> AssumptionReport {
    use AssumptionKind::*;
    let mut report = AssumptionReport::default();
    let ts = d.grid();
    for &q in quality_grid {
        let vals: Vec<f64> = ts.iter().map(|&t| v.value(t, q)).collect();
        let mut gvv = Vec::with_capacity(ts.len());
        for (k, &t) in ts.iter().enumerate() {
            let slope = v.slope(t, q);
            if !(slope > 0.0) {
                report.record(NonPositiveSlope, t, q, slope);
            }
            let eps = 1e-6 * (1.0 + t.abs());
            let lo = (t - eps).max(ts[0]);
            let hi = (t + eps).min(ts[ts.len() - 1]);
            let fd = (v.value(hi, q) - v.value(lo, q)) / (hi - lo);
            let mismatch = (fd - slope).abs();
            if mismatch > 1e-4 * (1.0 + slope.abs()) {
                report.record(DerivativeMismatch, t, q, mismatch);
            }
            gvv.push(vals[k] / slope - d.inverse_hazard(t));
        }
        for k in 0..ts.len() - 1 {
            let drop = vals[k] - vals[k + 1];
            if drop > MONOTONE_SLACK {
                report.record(Monotonicity, ts[k + 1], q, drop);
            }
            let drop = gvv[k] - gvv[k + 1];
            if drop > MONOTONE_SLACK || drop.is_nan() {
                report.record(VirtualMonotonicity, ts[k + 1], q, drop);
            }
        }
        for k in 0..ts.len().saturating_sub(2) {
            let s0 = (vals[k + 1] - vals[k]) / (ts[k + 1] - ts[k]);
            let s1 = (vals[k + 2] - vals[k + 1]) / (ts[k + 2] - ts[k + 1]);
            if s0 - s1 > MONOTONE_SLACK {
                report.record(Convexity, ts[k + 1], q, s0 - s1);
            }
        }
    }
    report
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn mixture(w: f64, mu: f64) -> GriddedDistribution {
        GriddedDistribution::from_density(
            0.0,
            1.0,
            move |x| 0.05 + w * (-(x - mu).powi(2) / 0.004).exp() + (1.0 - w) * (-(x - 0.15).powi(2) / 0.004).exp(),
            512,
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ironing_invariants(w in 0.2f64..0.8, mu in 0.45f64..0.9) {
            let d = mixture(w, mu);
            let c = VirtualValueCurve::new(&d);
            prop_assert!(c.phi_ironed.windows(2).all(|p| p[1] - p[0] >= -MONOTONE_SLACK));
            prop_assert_eq!(c.regular, c.ironed_intervals.is_empty());
            let mut inside = vec![false; c.phi.len()];
            for &(a, b) in &c.ironed_intervals {
                for k in a..=b {
                    inside[k] = true;
                    prop_assert!((c.phi_ironed[k] - c.phi_ironed[a]).abs() <= 1e-9);
                }
            }
            for k in 0..c.phi.len() {
                if !inside[k] {
                    prop_assert!((c.phi_ironed[k] - c.phi[k]).abs() <= 1e-9);
                }
            }
            // the envelope lies below the integral and is convex
            let trace = IroningTrace::compute(&d, &virtual_value_curve(&d));
            for k in 0..trace.omega.len() {
                prop_assert!(trace.big_h[k] - trace.envelope[k] >= -1e-12 * (1.0 + trace.big_h[k].abs()));
            }
            let slopes: Vec<f64> = trace.hull.windows(2).map(|s| trace.chord_slope(s[0], s[1])).collect();
            prop_assert!(slopes.windows(2).all(|s| s[1] >= s[0] - 1e-9));
            // idempotent
            let again = iron(&d, &c.ironed_fn());
            for (a, b) in again.phi_ironed.iter().zip(&c.phi_ironed) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
