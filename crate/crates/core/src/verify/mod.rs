//! Certificates for a built mechanism: monotone win weights, the envelope
//! identity for utilities, participation, truthful reporting, obedience,
//! and at most one buyer asked per realization.
//!
//! Interim quantities are recomputed here from the allocation rule alone
//! (threshold levels and cutoffs), without the mechanism's closed-form
//! reductions, so the checks do not share their arithmetic with what they
//! check.

pub mod discrete;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{adaptive_simpson, GriddedFunction};
use crate::error::{Error, Result};
use crate::mechanism::{Interim, ThresholdMechanism, CUTOFF_SLACK, WIN_PROB_FLOOR};
use crate::valuation::ValuationForm;

pub use discrete::{brute_force_oracle, DiscreteAllocation, DiscreteInstance, OracleResult};

/// Grid size used by [`check_feasibility`] for the deviation and obedience
/// searches.
pub const CHECK_GRID: usize = 101;

/// Samples for the at-most-one-buyer check.
pub const PROBABILITY_SAMPLES: usize = 10_000;

const PROBABILITY_SEED: u64 = 0x5eed;

/// Tolerances used to turn a report into a verdict.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Quadrature-level identities: monotonicity, envelope, bottom utility,
    /// participation and obedience.
    pub quadrature: f64,
    /// Grid-search certificates: deviation regret.
    pub grid: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { quadrature: 1e-6, grid: 1e-3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Largest decrease of the win weight between neighbouring type nodes.
    pub monotonicity_worst_violation: Vec<f64>,
    /// Largest `|U(t) - U(lo) - int_lo^t R|` over the type grid.
    pub envelope_residual: Vec<f64>,
    pub ic_max_regret: Vec<f64>,
    pub ir_min_utility: Vec<f64>,
    pub u_at_bottom_type: Vec<f64>,
    pub obedience_min_surplus: Vec<f64>,
    pub probability_check: bool,
}

impl FeasibilityReport {
    /// Names and values of the checks that exceed the tolerances.
    pub fn failures(&self, tol: &Tolerances) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, vals: &[f64], bad: &dyn Fn(f64) -> bool| {
            for (i, &v) in vals.iter().enumerate() {
                if bad(v) || !v.is_finite() {
                    out.push(format!("{name}[{i}] = {v:e}"));
                }
            }
        };
        let q = tol.quadrature;
        check("monotonicity_worst_violation", &self.monotonicity_worst_violation, &|v| v > q);
        check("envelope_residual", &self.envelope_residual, &|v| v > q);
        check("ic_max_regret", &self.ic_max_regret, &|v| v > tol.grid);
        check("ir_min_utility", &self.ir_min_utility, &|v| v < -q);
        check("u_at_bottom_type", &self.u_at_bottom_type, &|v| v.abs() > q);
        check("obedience_min_surplus", &self.obedience_min_surplus, &|v| v < -q);
        if !self.probability_check {
            out.push("probability_check = false".into());
        }
        out
    }

    pub fn passes(&self, tol: &Tolerances) -> bool {
        self.failures(tol).is_empty()
    }
}

/// Fraction of each cell `[x_k, x_k+1]` where `s >= 0` (`> 0` if `strict`),
/// for `s` linear in the cell.
fn on_fraction(s0: f64, s1: f64, strict: bool) -> (f64, f64) {
    let on = |s: f64| if strict { s > 0.0 } else { s >= 0.0 };
    match (on(s0), on(s1)) {
        (true, true) => (0.0, 1.0),
        (false, false) => (0.0, 0.0),
        (true, false) => (0.0, s0 / (s0 - s1)),
        (false, true) => (s0 / (s0 - s1), 1.0),
    }
}

/// Win weight, win probability and value of buyer `i` at type `t`,
/// integrated directly over opponents' types and the quality grid.
fn recompute_interim(m: &ThresholdMechanism, i: usize, t: f64) -> Interim {
    if !m.is_linear() {
        return m.interim(i, t);
    }
    let inst = m.instance();
    let c = m.level(i, t);
    let mut opp = 1.0;
    for (j, d) in inst.buyers.iter().enumerate() {
        if j == i {
            continue;
        }
        // i beats j where c - level_j(t_j) > 0 (j < i) or >= 0 (j > i)
        let g = d.grid();
        let cdf = d.cdf_vals();
        let mut p = 0.0;
        let mut s0 = c - m.level(j, g[0]);
        for k in 0..g.len() - 1 {
            let s1 = c - m.level(j, g[k + 1]);
            let (a, b) = on_fraction(s0, s1, j < i);
            p += (b - a) * (cdf[k + 1] - cdf[k]);
            s0 = s1;
        }
        opp *= p;
    }
    if opp == 0.0 {
        return Interim::default();
    }
    let qm = m.quality();
    let qs = qm.grid();
    let xi = qm.xi().vals();
    let g = qm.dist().pdf_vals();
    let alpha = qm.alpha().vals();
    let (mut mass, mut weight) = (0.0, 0.0);
    for l in 0..qs.len() - 1 {
        let (a, b) = on_fraction(c + CUTOFF_SLACK - xi[l], c + CUTOFF_SLACK - xi[l + 1], false);
        if b <= a {
            continue;
        }
        let dx = qs[l + 1] - qs[l];
        let at = |h0: f64, h1: f64, w: f64| h0 + w * (h1 - h0);
        let (g0, g1) = (g[l], g[l + 1]);
        let (h0, h1) = (alpha[l] * g[l], alpha[l + 1] * g[l + 1]);
        mass += 0.5 * (b - a) * dx * (at(g0, g1, a) + at(g0, g1, b));
        weight += 0.5 * (b - a) * dx * (at(h0, h1, a) + at(h0, h1, b));
    }
    Interim { win_prob: opp * mass, win_weight: opp * weight, value: t * opp * weight }
}

/// Feasibility conditions for `m`, with deviation and obedience
/// searches on [`CHECK_GRID`]-point grids.
pub fn check_feasibility(m: &ThresholdMechanism) -> FeasibilityReport {
    let n = m.n();
    let per_buyer: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|i| {
            let grid = m.instance().buyers[i].grid();
            let interim: Vec<Interim> = grid.par_iter().map(|&t| recompute_interim(m, i, t)).collect();
            let cells: Vec<f64> = grid
                .par_windows(2)
                .map(|w| {
                    let mut f = |t: f64| recompute_interim(m, i, t).win_weight;
                    adaptive_simpson(&mut f, w[0], w[1], 1e-12 * (w[1] - w[0]))
                })
                .collect();
            let utility: Vec<f64> = grid
                .par_iter()
                .zip(&interim)
                .map(|(&t, it)| match m.payment(i, t) {
                    Ok(p) if it.win_prob > WIN_PROB_FLOOR => it.value - p * it.win_prob,
                    _ => 0.0,
                })
                .collect();
            let mut residual = 0.0f64;
            let mut integral = 0.0;
            for k in 0..grid.len() {
                if k > 0 {
                    integral += cells[k - 1];
                }
                residual = residual.max((utility[k] - utility[0] - integral).abs());
            }
            let mono = interim.windows(2).map(|w| w[0].win_weight - w[1].win_weight).fold(0.0f64, f64::max);
            let ir = utility.iter().copied().fold(f64::INFINITY, f64::min);
            (mono, residual, ir, utility[0])
        })
        .collect();
    let ic = ic_deviation_search(m, CHECK_GRID);
    let ob = obedience_check(m, CHECK_GRID);
    FeasibilityReport {
        monotonicity_worst_violation: per_buyer.iter().map(|x| x.0).collect(),
        envelope_residual: per_buyer.iter().map(|x| x.1).collect(),
        ir_min_utility: per_buyer.iter().map(|x| x.2).collect(),
        u_at_bottom_type: per_buyer.iter().map(|x| x.3).collect(),
        ic_max_regret: ic.iter().map(|d| d.regret + 0.0).collect(),
        obedience_min_surplus: ob.iter().map(|o| o.min_surplus).collect(),
        probability_check: probability_check(m, PROBABILITY_SAMPLES, PROBABILITY_SEED),
    }
}

/// Draws profiles and checks that at most one buyer satisfies its own
/// asking condition, and that this buyer is the one the mechanism asks.
pub fn probability_check(m: &ThresholdMechanism, samples: usize, seed: u64) -> bool {
    let inst = m.instance();
    let n = m.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = vec![0.0; n];
    for _ in 0..samples {
        for (i, d) in inst.buyers.iter().enumerate() {
            t[i] = d.quantile(rng.gen::<f64>());
        }
        let q = inst.quality.dist().quantile(rng.gen::<f64>());
        let signal = m.allocate(&t, q);
        if !m.is_linear() {
            continue;
        }
        let xi = m.xi_at(q);
        let levels: Vec<f64> = (0..n).map(|i| m.level(i, t[i])).collect();
        let asked: Vec<usize> = (0..n)
            .filter(|&i| {
                levels[i] >= xi - CUTOFF_SLACK
                    && (0..n).all(|j| j == i || if j < i { levels[i] > levels[j] } else { levels[i] >= levels[j] })
            })
            .collect();
        if asked.len() > 1 || asked.first().copied() != signal.buyer() {
            return false;
        }
    }
    true
}

/// Most profitable misreport found for one buyer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub regret: f64,
    pub true_type: f64,
    /// `None` is the deviation of refusing to buy.
    pub report: Option<f64>,
}

struct Outcome {
    report: f64,
    it: Interim,
    pay: f64,
}

fn outcome(m: &ThresholdMechanism, i: usize, t: f64) -> Outcome {
    let it = m.interim(i, t);
    if it.win_prob <= WIN_PROB_FLOOR {
        return Outcome { report: t, it: Interim::default(), pay: 0.0 };
    }
    Outcome { report: t, it, pay: m.payment_given(i, t, it).unwrap_or(0.0) }
}

/// Utility of true type `t` from the outcome of report `o.report`. With
/// `v = a(t) b(q)` the value is the reported type's value rescaled by
/// `a(t) / a(report)`; the quality integral is redone when `a(report) = 0`.
fn utility(m: &ThresholdMechanism, i: usize, t: f64, o: &Outcome) -> f64 {
    if o.it.win_prob == 0.0 {
        return 0.0;
    }
    let value = match &m.instance().valuation {
        ValuationForm::Linear => t * o.it.win_weight,
        ValuationForm::General(g) => {
            let a = g.value_type.eval(o.report);
            if a != 0.0 {
                o.it.value * g.value_type.eval(t) / a
            } else {
                let qm = m.quality();
                let dens = m.ask_density(i, o.report);
                let vals = qm.grid().iter().zip(&dens).map(|(&q, &w)| w * m.instance().value(t, q)).collect();
                let f = GriddedFunction::new(qm.grid().to_vec(), vals).expect("quality grid");
                f.integrate_unchecked(f.lo(), f.hi())
            }
        }
    };
    value - o.pay * o.it.win_prob
}

/// Largest gain from misreporting (or from refusing to buy) over a uniform
/// `grid_size x grid_size` grid of true and reported types per buyer, with
/// one bisection step around the best report.
pub fn ic_deviation_search(m: &ThresholdMechanism, grid_size: usize) -> Vec<Deviation> {
    let grid_size = grid_size.max(2);
    (0..m.n())
        .map(|i| {
            let d = &m.instance().buyers[i];
            let pts: Vec<f64> =
                (0..grid_size).map(|k| d.lo() + (d.hi() - d.lo()) * k as f64 / (grid_size - 1) as f64).collect();
            let outcomes: Vec<Outcome> = pts.par_iter().map(|&t| outcome(m, i, t)).collect();
            let rows: Vec<Deviation> = (0..grid_size)
                .into_par_iter()
                .map(|a| {
                    let t = pts[a];
                    let truth = utility(m, i, t, &outcomes[a]);
                    let mut best = Deviation { regret: -truth, true_type: t, report: None };
                    let mut best_k = None;
                    for (k, o) in outcomes.iter().enumerate() {
                        let gain = utility(m, i, t, o) - truth;
                        if gain > best.regret {
                            best = Deviation { regret: gain, true_type: t, report: Some(pts[k]) };
                            best_k = Some(k);
                        }
                    }
                    if let Some(k) = best_k {
                        let step = 0.5 * (pts[1] - pts[0]);
                        for r in [pts[k] - step, pts[k] + step] {
                            if r >= d.lo() && r <= d.hi() {
                                let gain = utility(m, i, t, &outcome(m, i, r)) - truth;
                                if gain > best.regret {
                                    best = Deviation { regret: gain, true_type: t, report: Some(r) };
                                }
                            }
                        }
                    }
                    best
                })
                .collect();
            rows.into_iter()
                .fold(None::<Deviation>, |acc, d| match acc {
                    Some(a) if a.regret >= d.regret => Some(a),
                    _ => Some(d),
                })
                .expect("grid is non-empty")
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObedienceReport {
    /// Smallest posterior surplus `E[v | asked] - p` over types that are asked
    /// with positive probability (`+inf` if none are).
    pub min_surplus: f64,
    pub argmin: Option<f64>,
    /// Lowest type with positive win probability and its surplus.
    pub marginal_type: Option<f64>,
    pub marginal_surplus: Option<f64>,
}

fn posterior_surplus(m: &ThresholdMechanism, i: usize, t: f64) -> Option<f64> {
    let o = outcome(m, i, t);
    if o.it.win_prob == 0.0 {
        return None;
    }
    Some(utility(m, i, t, &o) / o.it.win_prob)
}

/// Posterior surplus of each buyer over a uniform grid of types and at the
/// marginal winning type.
pub fn obedience_check(m: &ThresholdMechanism, grid_size: usize) -> Vec<ObedienceReport> {
    let grid_size = grid_size.max(2);
    (0..m.n())
        .map(|i| {
            let d = &m.instance().buyers[i];
            let vals: Vec<(f64, Option<f64>)> = (0..grid_size)
                .into_par_iter()
                .map(|k| {
                    let t = d.lo() + (d.hi() - d.lo()) * k as f64 / (grid_size - 1) as f64;
                    (t, posterior_surplus(m, i, t))
                })
                .collect();
            let marginal_type = m.cutoff_type(i);
            let marginal_surplus = marginal_type.and_then(|t| posterior_surplus(m, i, t));
            let mut rep = ObedienceReport { min_surplus: f64::INFINITY, argmin: None, marginal_type, marginal_surplus };
            for (t, s) in vals.into_iter().chain(marginal_type.map(|t| (t, marginal_surplus))) {
                if let Some(s) = s {
                    if s < rep.min_surplus {
                        rep.min_surplus = s;
                        rep.argmin = Some(t);
                    }
                }
            }
            rep
        })
        .collect()
}

/// Buyer `i`'s belief over quality after being asked at type `t`.
pub fn posterior_belief(m: &ThresholdMechanism, i: usize, t: f64) -> Result<GriddedFunction> {
    let win_prob = m.win_prob_at(i, t);
    let undefined = Error::UndefinedPosterior { buyer: i, t, win_prob };
    if !(win_prob > WIN_PROB_FLOOR) {
        return Err(undefined);
    }
    let f = GriddedFunction::new(m.quality().grid().to_vec(), m.ask_density(i, t))?;
    let z = f.integrate(f.lo(), f.hi())?;
    if !(z > 0.0) {
        return Err(undefined);
    }
    Ok(f.map(|_, v| v / z))
}
