//! The optimal threshold mechanism: who is asked to buy at each type
//! profile and quality, the interim win weights, and the payment rule.
//!
//! For the linear valuation buyer `i` at type `t` is asked exactly when its
//! (ironed) virtual value `c = phi_i(t)` is the highest among the buyers and
//! `c >= xi(q)`. Independence reduces every interim quantity to a product of
//! one-dimensional terms:
//!
//! ```text
//! P_i(c) = prod_{j<i} Pr(phi_j < c) * prod_{j>i} Pr(phi_j <= c)
//! D_i(t) = P_i(c) * G({xi <= c})            interim win probability
//! R_i(t) = P_i(c) * int_{xi <= c} alpha g   win weight
//! p_i(t) = (t R_i(t) - int_lo^t R_i) / D_i(t)
//! ```
//!
//! The strict inequality for lower-indexed opponents is the tie-break: among
//! buyers with equal virtual values the lowest index is asked.

mod doc;
mod general;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{adaptive_simpson, locate, GriddedDistribution, GriddedFunction};
use crate::error::{Error, Result};
use crate::instance::{ProblemInstance, QualityModel};
use crate::valuation::ValuationForm;
use crate::virtual_value::{check_assumptions, virtual_value, VirtualValueCurve};

pub use doc::{BuyerDoc, MechanismDoc, MECHANISM_SCHEMA};
use general::ScoreTable;

/// Interim win probabilities at or below this are treated as zero.
pub const WIN_PROB_FLOOR: f64 = 1e-12;

/// Slack on the comparison against the quality cutoff, so that a virtual
/// value equal to the cutoff up to rounding still sells.
pub const CUTOFF_SLACK: f64 = 1e-12;

/// Absolute tolerance per unit length for the envelope integral.
const ENVELOPE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    NoSale,
    AskBuyer(usize),
}

impl Signal {
    pub fn buyer(self) -> Option<usize> {
        match self {
            Signal::NoSale => None,
            Signal::AskBuyer(i) => Some(i),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

/// Interim quantities of one buyer at one type.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Interim {
    /// Probability of being asked.
    pub win_prob: f64,
    /// Probability of being asked weighted by `dv/dt`.
    pub win_weight: f64,
    /// Expected value of the item over the events where the buyer is asked.
    pub value: f64,
}

/// `Pr(level(T) < c)` if `strict`, else `Pr(level(T) <= c)`, for `T ~ d`
/// and a non-decreasing `level` tabulated on the grid of `d`.
pub(crate) fn prob_below(level: &[f64], d: &GriddedDistribution, c: f64, strict: bool) -> f64 {
    let m = level.len();
    let k = if strict { level.partition_point(|&v| v < c) } else { level.partition_point(|&v| v <= c) };
    if k == 0 {
        return 0.0;
    }
    if k == m {
        return 1.0;
    }
    let g = d.grid();
    let (v0, v1) = (level[k - 1], level[k]);
    let x = g[k - 1] + (c - v0) / (v1 - v0) * (g[k] - g[k - 1]);
    d.cdf(x)
}

fn running_max(vals: &[f64]) -> Vec<f64> {
    let mut acc = f64::NEG_INFINITY;
    vals.iter()
        .map(|&v| {
            acc = acc.max(v);
            acc
        })
        .collect()
}

/// Per-buyer tables on the type grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BuyerTables {
    pub win_prob: Vec<f64>,
    pub win_weight: Vec<f64>,
    pub value: Vec<f64>,
    /// `int_lo^t R`
    pub envelope: Vec<f64>,
    pub payment: Vec<Option<f64>>,
}

type PaymentMap = Arc<dyn Fn(usize, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum PaymentRule {
    Optimal,
    Mapped(PaymentMap),
    Table,
}

#[derive(Clone)]
pub struct ThresholdMechanism {
    inst: ProblemInstance,
    curves: Vec<VirtualValueCurve>,
    levels: Vec<GriddedFunction>,
    scores: Option<ScoreTable>,
    tables: Vec<BuyerTables>,
    rule: PaymentRule,
    tiebreak: TieBreak,
}

impl fmt::Debug for ThresholdMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ThresholdMechanism")
            .field("buyers", &self.n())
            .field("regular", &self.curves.iter().map(|c| c.regular).collect::<Vec<_>>())
            .field("degenerate", &self.is_degenerate())
            .finish()
    }
}

/// Builds the optimal mechanism: ironed virtual values for the linear form,
/// the score rule for a general separable valuation.
pub fn build_optimal_mechanism(inst: &ProblemInstance) -> Result<ThresholdMechanism> {
    let curves = match &inst.valuation {
        ValuationForm::Linear => inst.buyers.par_iter().map(VirtualValueCurve::new).collect(),
        ValuationForm::General(v) => {
            for (i, d) in inst.buyers.iter().enumerate() {
                let report = check_assumptions(v, d, inst.quality.grid());
                if !report.is_ok() {
                    return Err(Error::Assumption(format!("buyer {i}: {}", report.summary())));
                }
            }
            inst.buyers.iter().map(VirtualValueCurve::unironed).collect()
        }
    };
    ThresholdMechanism::with_curves(inst, curves)
}

impl ThresholdMechanism {
    /// Threshold mechanism driven by the given curves (their `phi_ironed`).
    /// A running maximum guards against residual grid-level decreases.
    pub fn with_curves(inst: &ProblemInstance, curves: Vec<VirtualValueCurve>) -> Result<Self> {
        if curves.len() != inst.n() {
            return Err(Error::validation(format!("{} curves for {} buyers", curves.len(), inst.n())));
        }
        for (i, (c, d)) in curves.iter().zip(&inst.buyers).enumerate() {
            if c.type_grid != d.grid() {
                return Err(Error::validation(format!("curve {i} is not on the buyer's type grid")));
            }
        }
        let levels = curves
            .iter()
            .map(|c| GriddedFunction::new(c.type_grid.clone(), running_max(&c.phi_ironed)))
            .collect::<Result<Vec<_>>>()?;
        let scores = match &inst.valuation {
            ValuationForm::Linear => None,
            ValuationForm::General(v) => Some(ScoreTable::new(inst, v)),
        };
        let mut mech = ThresholdMechanism {
            inst: inst.clone(),
            curves,
            levels,
            scores,
            tables: Vec::new(),
            rule: PaymentRule::Optimal,
            tiebreak: TieBreak::LowestIndex,
        };
        mech.tables = (0..mech.n()).map(|i| mech.build_tables(i)).collect();
        if mech.is_degenerate() {
            log::info!("no type of any buyer is ever asked to buy");
        }
        Ok(mech)
    }

    fn build_tables(&self, i: usize) -> BuyerTables {
        let grid = self.inst.buyers[i].grid();
        let interim: Vec<Interim> = grid.par_iter().map(|&t| self.interim(i, t)).collect();
        let cells: Vec<f64> = grid.par_windows(2).map(|w| self.integrate_weight(i, w[0], w[1])).collect();
        let mut envelope = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        envelope.push(0.0);
        for c in cells {
            acc += c;
            envelope.push(acc);
        }
        let payment = interim
            .iter()
            .zip(&envelope)
            .map(|(it, e)| (it.win_prob > WIN_PROB_FLOOR).then(|| (it.value - e) / it.win_prob))
            .collect();
        BuyerTables {
            win_prob: interim.iter().map(|x| x.win_prob).collect(),
            win_weight: interim.iter().map(|x| x.win_weight).collect(),
            value: interim.iter().map(|x| x.value).collect(),
            envelope,
            payment,
        }
    }

    fn integrate_weight(&self, i: usize, a: f64, b: f64) -> f64 {
        let mut f = |t: f64| self.interim(i, t).win_weight;
        adaptive_simpson(&mut f, a, b, ENVELOPE_TOL * (b - a))
    }

    pub fn n(&self) -> usize {
        self.inst.n()
    }

    pub fn instance(&self) -> &ProblemInstance {
        &self.inst
    }

    pub fn quality(&self) -> &QualityModel {
        &self.inst.quality
    }

    pub fn curves(&self) -> &[VirtualValueCurve] {
        &self.curves
    }

    pub fn tables(&self) -> &[BuyerTables] {
        &self.tables
    }

    pub fn tiebreak(&self) -> TieBreak {
        self.tiebreak
    }

    pub fn is_linear(&self) -> bool {
        self.scores.is_none()
    }

    /// True when no buyer type has a positive win probability.
    pub fn is_degenerate(&self) -> bool {
        self.tables.iter().all(|t| t.win_prob.iter().all(|&p| p <= WIN_PROB_FLOOR))
    }

    pub fn xi_at(&self, q: f64) -> f64 {
        self.inst.quality.xi_at(q)
    }

    /// Threshold function `lambda_i(t)`: the ironed virtual value.
    pub fn level(&self, i: usize, t: f64) -> f64 {
        self.levels[i].at(t)
    }

    pub fn win_weight_curve(&self, i: usize) -> GriddedFunction {
        GriddedFunction::new(self.inst.buyers[i].grid().to_vec(), self.tables[i].win_weight.clone())
            .expect("type grid is valid")
    }

    /// Opponent term `P_i(c)`.
    fn opponents_below(&self, i: usize, c: f64) -> f64 {
        let mut p = 1.0;
        for (j, d) in self.inst.buyers.iter().enumerate() {
            if j != i {
                p *= prob_below(self.levels[j].vals(), d, c, j < i);
                if p == 0.0 {
                    break;
                }
            }
        }
        p
    }

    /// Interim win probability, win weight and expected value of buyer `i`
    /// at type `t`, evaluated directly (not from the tables).
    pub fn interim(&self, i: usize, t: f64) -> Interim {
        match &self.scores {
            None => {
                let c = self.level(i, t);
                let p = self.opponents_below(i, c);
                if p == 0.0 {
                    return Interim::default();
                }
                let m = self.inst.quality.mass_below(c + CUTOFF_SLACK);
                Interim { win_prob: p * m.mass, win_weight: p * m.alpha, value: t * p * m.alpha }
            }
            Some(s) => s.interim(self, i, t),
        }
    }

    pub fn win_weight_at(&self, i: usize, t: f64) -> f64 {
        self.interim(i, t).win_weight
    }

    pub fn win_prob_at(&self, i: usize, t: f64) -> f64 {
        self.interim(i, t).win_prob
    }

    /// `int_lo^t R_i`, from the tabulated node values plus an adaptive
    /// integral over the last partial cell.
    pub fn envelope_at(&self, i: usize, t: f64) -> f64 {
        let grid = self.inst.buyers[i].grid();
        let (k, w) = locate(grid, t);
        if w == 0.0 {
            return self.tables[i].envelope[k];
        }
        let t = t.clamp(grid[k], grid[k + 1]);
        self.tables[i].envelope[k] + self.integrate_weight(i, grid[k], t)
    }

    /// Payment of buyer `i` at type `t` when asked.
    pub fn payment(&self, i: usize, t: f64) -> Result<f64> {
        self.payment_given(i, t, self.interim(i, t))
    }

    /// [`Self::payment`] with the interim quantities at `t` already known.
    pub fn payment_given(&self, i: usize, t: f64, it: Interim) -> Result<f64> {
        if !(it.win_prob > WIN_PROB_FLOOR) {
            return Err(Error::UndefinedPayment { buyer: i, t, win_prob: it.win_prob });
        }
        let optimal = || (it.value - self.envelope_at(i, t)) / it.win_prob;
        match &self.rule {
            PaymentRule::Optimal => Ok(optimal()),
            PaymentRule::Mapped(f) => Ok(f(i, t, optimal())),
            PaymentRule::Table => {
                self.table_payment(i, t).ok_or(Error::UndefinedPayment { buyer: i, t, win_prob: it.win_prob })
            }
        }
    }

    fn table_payment(&self, i: usize, t: f64) -> Option<f64> {
        let (k, w) = locate(self.inst.buyers[i].grid(), t);
        let p = &self.tables[i].payment;
        match (p[k], p[k + 1]) {
            (Some(a), Some(b)) => Some(a + w * (b - a)),
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        }
    }

    /// Payment from the tabulated curve by linear interpolation, falling
    /// back to [`Self::payment`] in cells with an undefined end.
    pub fn payment_interp(&self, i: usize, t: f64) -> Option<f64> {
        let (k, w) = locate(self.inst.buyers[i].grid(), t);
        let p = &self.tables[i].payment;
        match (p[k], p[k + 1]) {
            (Some(a), Some(b)) => Some(if w == 0.0 {
                a
            } else if w == 1.0 {
                b
            } else {
                a + w * (b - a)
            }),
            _ => self.payment(i, t).ok(),
        }
    }

    /// Copy of the mechanism with payments replaced by `f(buyer, t, p)`.
    /// The allocation is unchanged.
    pub fn map_payments(&self, f: impl Fn(usize, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        let f: PaymentMap = Arc::new(f);
        let mut out = self.clone();
        for (i, tab) in out.tables.iter_mut().enumerate() {
            let grid = self.inst.buyers[i].grid();
            for (k, p) in tab.payment.iter_mut().enumerate() {
                if let Some(v) = p {
                    *v = f(i, grid[k], *v);
                }
            }
        }
        out.rule = match &self.rule {
            PaymentRule::Optimal => PaymentRule::Mapped(f),
            PaymentRule::Mapped(g) => {
                let g = g.clone();
                PaymentRule::Mapped(Arc::new(move |i, t, p| f(i, t, g(i, t, p))))
            }
            PaymentRule::Table => PaymentRule::Table,
        };
        out
    }

    /// Whether the payments are the optimal rule (not mapped or loaded from
    /// a document that disagrees with it).
    pub fn has_optimal_payments(&self) -> bool {
        matches!(self.rule, PaymentRule::Optimal)
    }

    /// Which buyer, if any, is asked to buy at type profile `t` and quality `q`.
    pub fn allocate(&self, t: &[f64], q: f64) -> Signal {
        assert_eq!(t.len(), self.n(), "type profile has the wrong length");
        let (scores, cutoff): (Vec<f64>, f64) = match &self.scores {
            None => (t.iter().enumerate().map(|(i, &ti)| self.level(i, ti)).collect(), self.xi_at(q)),
            Some(s) => s.scores_at(self, t, q),
        };
        let mut best = 0;
        for (i, &c) in scores.iter().enumerate().skip(1) {
            if c > scores[best] {
                best = i;
            }
        }
        if scores[best] >= cutoff - CUTOFF_SLACK {
            Signal::AskBuyer(best)
        } else {
            Signal::NoSale
        }
    }

    /// Probability that nobody is asked, at quality `q`.
    pub fn no_sale_prob(&self, q: f64) -> f64 {
        match &self.scores {
            None => {
                let cut = self.xi_at(q) - CUTOFF_SLACK;
                self.inst
                    .buyers
                    .iter()
                    .enumerate()
                    .map(|(j, d)| prob_below(self.levels[j].vals(), d, cut, true))
                    .product()
            }
            Some(s) => s.no_sale_prob(self, q),
        }
    }

    /// Virtual surplus density of buyer `i` at `t`: `f_i(t)` times the
    /// expected `v_t * phi_i - r` over the events where `i` is asked, with the
    /// raw (un-ironed) virtual value.
    pub fn virtual_surplus(&self, i: usize, t: f64) -> f64 {
        let d = &self.inst.buyers[i];
        match &self.scores {
            None => {
                let c = self.level(i, t);
                let p = self.opponents_below(i, c);
                if p == 0.0 {
                    return 0.0;
                }
                let m = self.inst.quality.mass_below(c + CUTOFF_SLACK);
                d.pdf(t) * p * (virtual_value(d, t) * m.alpha - m.reserve)
            }
            Some(s) => d.pdf(t) * s.virtual_surplus(self, i, t),
        }
    }

    /// Interim probability density over the quality grid of buyer `i` being
    /// asked at type `t` (unnormalized posterior).
    pub fn ask_density(&self, i: usize, t: f64) -> Vec<f64> {
        let qm = &self.inst.quality;
        let g = qm.dist().pdf_vals();
        match &self.scores {
            None => {
                let c = self.level(i, t) + CUTOFF_SLACK;
                let p = self.opponents_below(i, c - CUTOFF_SLACK);
                qm.xi().vals().iter().zip(g).map(|(&x, &gq)| if x <= c { p * gq } else { 0.0 }).collect()
            }
            Some(s) => s.ask_density(self, i, t),
        }
    }

    /// Lowest type of buyer `i` with positive win probability.
    pub fn cutoff_type(&self, i: usize) -> Option<f64> {
        let grid = self.inst.buyers[i].grid();
        let k = self.tables[i].win_prob.iter().position(|&p| p > WIN_PROB_FLOOR)?;
        if k == 0 {
            return Some(grid[0]);
        }
        let (mut lo, mut hi) = (grid[k - 1], grid[k]);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.win_prob_at(i, mid) > WIN_PROB_FLOOR {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }

    pub fn to_doc(&self) -> MechanismDoc {
        doc::to_doc(self)
    }

    /// Rebuilds a mechanism from a document for the same instance. The
    /// allocation is recomputed from the stored curves; stored payments that
    /// disagree with the optimal rule are used as a table.
    pub fn from_doc(inst: &ProblemInstance, doc: &MechanismDoc) -> Result<Self> {
        doc::from_doc(inst, doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    /// Per-buyer table with columns `t, phi, phi_ironed, win_weight, payment`.
    pub fn write_buyer_csv<W: std::io::Write>(&self, i: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "phi", "phi_ironed", "win_weight", "payment"])?;
        let c = &self.curves[i];
        let tab = &self.tables[i];
        for k in 0..c.type_grid.len() {
            w.write_record([
                c.type_grid[k].to_string(),
                c.phi[k].to_string(),
                c.phi_ironed[k].to_string(),
                tab.win_weight[k].to_string(),
                tab.payment[k].map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests;
