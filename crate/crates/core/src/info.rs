//! What the asked buyer learns about quality: acceptance sets
//! `{q : xi(q) <= v}`, their shape, and a per-type summary of the partition
//! of the quality space.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::{Antiderivative, GriddedFunction, IntervalUnion};
use crate::error::Result;
use crate::instance::QualityModel;
use crate::mechanism::{ThresholdMechanism, CUTOFF_SLACK};

/// Slack for monotonicity of `xi` in [`classify_structure`].
pub const STRUCTURE_SLACK: f64 = 1e-9;

/// Two neighbouring `xi` nodes within this distance of the level mark a flat
/// stretch of `xi` at the acceptance boundary.
pub const PLATEAU_TOL: f64 = 1e-9;

/// `{q : xi(q) <= v}`, boundary points included.
pub fn acceptance_set(qm: &QualityModel, v: f64) -> IntervalUnion {
    qm.acceptance_set(v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Structure {
    /// Every acceptance set is an interval starting at the lowest quality.
    Lower,
    /// Every acceptance set is an interval ending at the highest quality.
    Upper,
    /// Acceptance sets may consist of several intervals.
    Segments,
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Structure::Lower => "lower",
            Structure::Upper => "upper",
            Structure::Segments => "segments",
        })
    }
}

/// Shape of the acceptance sets implied by `xi`. A constant `xi` counts as
/// [`Structure::Lower`].
pub fn classify_structure(qm: &QualityModel) -> Structure {
    let xi = qm.xi().vals();
    if xi.windows(2).all(|w| w[1] >= w[0] - STRUCTURE_SLACK) {
        Structure::Lower
    } else if xi.windows(2).all(|w| w[1] <= w[0] + STRUCTURE_SLACK) {
        Structure::Upper
    } else {
        Structure::Segments
    }
}

/// Whether `xi` is flat at `level` somewhere, which makes the preimage of
/// `level` an interval rather than a point.
pub fn xi_flat_at(qm: &QualityModel, level: f64) -> bool {
    qm.xi().vals().windows(2).any(|w| (w[0] - level).abs() <= PLATEAU_TOL && (w[1] - level).abs() <= PLATEAU_TOL)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionRow {
    pub buyer: usize,
    pub t: f64,
    pub phi_bar: f64,
    pub segments: IntervalUnion,
    /// Prior probability of the acceptance set.
    pub mass: f64,
    /// `E[q | q in segments]`, undefined for a null set.
    pub posterior_mean: Option<f64>,
    /// `xi` is flat at `phi_bar`, so the boundaries are preimage intervals.
    pub plateau: bool,
}

/// Acceptance set, its prior mass and the posterior mean quality for
/// `types_per_buyer` evenly spaced types of every buyer.
pub fn partition_summary(m: &ThresholdMechanism, types_per_buyer: usize) -> Vec<PartitionRow> {
    let qm = m.quality();
    let g = qm.dist();
    let mass = Antiderivative::new(g.pdf_function());
    let qg = GriddedFunction::new(g.grid().to_vec(), g.grid().iter().zip(g.pdf_vals()).map(|(q, f)| q * f).collect())
        .expect("quality grid");
    let first_moment = Antiderivative::new(qg);
    let k = types_per_buyer.max(2);
    let mut rows = Vec::with_capacity(m.n() * k);
    for i in 0..m.n() {
        let d = &m.instance().buyers[i];
        for j in 0..k {
            let t = d.lo() + (d.hi() - d.lo()) * j as f64 / (k - 1) as f64;
            let phi_bar = m.level(i, t);
            let segments = acceptance_set(qm, phi_bar + CUTOFF_SLACK);
            let w = mass.over(&segments).max(0.0);
            rows.push(PartitionRow {
                buyer: i,
                t,
                phi_bar,
                mass: w,
                posterior_mean: (w > 0.0).then(|| first_moment.over(&segments) / w),
                plateau: xi_flat_at(qm, phi_bar),
                segments,
            });
        }
    }
    rows
}

/// `[lo,hi];[lo,hi];...`
pub fn format_segments(s: &IntervalUnion) -> String {
    s.iter().map(|(lo, hi)| format!("[{lo},{hi}]")).collect::<Vec<_>>().join(";")
}

pub fn write_partition_csv<W: Write>(rows: &[PartitionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["buyer", "type", "phi_bar", "segment_list", "mass", "posterior_mean", "plateau"])?;
    for r in rows {
        w.write_record([
            r.buyer.to_string(),
            r.t.to_string(),
            r.phi_bar.to_string(),
            format_segments(&r.segments),
            r.mass.to_string(),
            r.posterior_mean.map(|x| x.to_string()).unwrap_or_default(),
            r.plateau.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::uniform01;
    use crate::instance::ProblemInstance;
    use crate::mechanism::build_optimal_mechanism;

    fn model(alpha: fn(f64) -> f64, reserve: fn(f64) -> f64) -> QualityModel {
        QualityModel::from_fns(uniform01(1025), alpha, reserve).unwrap()
    }

    fn close(s: &IntervalUnion, want: &[(f64, f64)], tol: f64) -> bool {
        s.len() == want.len() && s.iter().zip(want).all(|(a, b)| (a.0 - b.0).abs() <= tol && (a.1 - b.1).abs() <= tol)
    }

    #[test]
    fn acceptance_sets_of_canonical_shapes() {
        let up = model(|_| 1.0, |q| q);
        let down = model(|_| 1.0, |q| 1.0 - q);
        let v = model(|_| 1.0, |q| (q - 0.5).abs());
        let hat = model(|_| 1.0, |q| 0.5 - (q - 0.5).abs());
        assert!(close(&acceptance_set(&up, 0.6), &[(0.0, 0.6)], 1e-12));
        assert!(close(&acceptance_set(&down, 0.6), &[(0.4, 1.0)], 1e-12));
        assert!(close(&acceptance_set(&v, 0.2), &[(0.3, 0.7)], 1e-12));
        assert!(close(&acceptance_set(&hat, 0.3), &[(0.0, 0.3), (0.7, 1.0)], 1e-12));
        assert!(acceptance_set(&up, -0.1).is_empty());
    }

    #[test]
    fn classification() {
        assert_eq!(classify_structure(&model(|_| 1.0, |q| q)), Structure::Lower);
        assert_eq!(classify_structure(&model(|q| 1.0 + q, |_| 1.0)), Structure::Upper);
        assert_eq!(classify_structure(&model(|_| 1.0, |q| (q - 0.5).abs())), Structure::Segments);
        assert_eq!(classify_structure(&model(|_| 2.0, |_| 0.3)), Structure::Lower);
    }

    #[test]
    fn summary_rows() {
        let inst = ProblemInstance::linear(vec![uniform01(1025)], model(|_| 1.0, |q| q)).unwrap();
        let m = build_optimal_mechanism(&inst).unwrap();
        let rows = partition_summary(&m, 5);
        // t = 0.75 has phi = 0.5
        let r = &rows[3];
        assert!((r.phi_bar - 0.5).abs() < 1e-9);
        assert!((r.mass - 0.5).abs() < 1e-6);
        assert!((r.posterior_mean.unwrap() - 0.25).abs() < 1e-6);
        assert!(rows[0].posterior_mean.is_none());
        let mut buf = Vec::new();
        write_partition_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("buyer,type,phi_bar,segment_list,mass,posterior_mean,plateau\n"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn constant_xi_reveals_all_or_nothing() {
        let inst = ProblemInstance::linear(vec![uniform01(257)], model(|_| 1.0, |_| 0.2)).unwrap();
        let m = build_optimal_mechanism(&inst).unwrap();
        for r in partition_summary(&m, 11) {
            assert!(r.segments.is_empty() || close(&r.segments, &[(0.0, 1.0)], 0.0), "{r:?}");
        }
    }
}
