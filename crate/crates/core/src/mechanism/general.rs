//! Score rule for separable non-linear valuations.
//!
//! At quality `q` buyer `i` has score `w_i(t, q) = v - v_t (1 - F_i) / f_i`.
//! The highest score is asked if it clears `r(q)`. Scores are tabulated per
//! quality node, so interim quantities are integrals over the quality grid
//! with the crossing `w_i = r` located by linear interpolation.

use crate::dist::locate;
use crate::instance::ProblemInstance;
use crate::valuation::{GeneralValuation, Valuation};

use super::{prob_below, running_max, Interim, ThresholdMechanism, CUTOFF_SLACK};

#[derive(Clone, Debug)]
pub(crate) struct ScoreTable {
    valuation: GeneralValuation,
    /// `cols[i][l][k]`: running maximum over `k` of the score of buyer `i`
    /// at type node `k` and quality node `l`.
    cols: Vec<Vec<Vec<f64>>>,
}

/// Trapezoid integral of `h` over `{s >= 0}` with linearly located crossings.
fn integrate_on(grid: &[f64], s: &[f64], h: &[f64]) -> f64 {
    let mut sum = 0.0;
    for l in 0..grid.len() - 1 {
        let dx = grid[l + 1] - grid[l];
        let (s0, s1) = (s[l], s[l + 1]);
        let (h0, h1) = (h[l], h[l + 1]);
        if s0 >= 0.0 && s1 >= 0.0 {
            sum += 0.5 * dx * (h0 + h1);
        } else if s0 >= 0.0 || s1 >= 0.0 {
            let theta = s0 / (s0 - s1);
            let hr = h0 + theta * (h1 - h0);
            if s0 >= 0.0 {
                sum += 0.5 * theta * dx * (h0 + hr);
            } else {
                sum += 0.5 * (1.0 - theta) * dx * (hr + h1);
            }
        }
    }
    sum
}

impl ScoreTable {
    pub fn new(inst: &ProblemInstance, v: &GeneralValuation) -> Self {
        let qs = inst.quality.grid();
        let cols = inst
            .buyers
            .iter()
            .map(|d| {
                let ih: Vec<f64> = d.grid().iter().map(|&t| d.inverse_hazard(t)).collect();
                qs.iter()
                    .map(|&q| {
                        let raw: Vec<f64> =
                            d.grid().iter().zip(&ih).map(|(&t, &h)| v.value(t, q) - v.slope(t, q) * h).collect();
                        running_max(&raw)
                    })
                    .collect()
            })
            .collect();
        ScoreTable { valuation: v.clone(), cols }
    }

    fn score(&self, m: &ThresholdMechanism, i: usize, l: usize, t: f64) -> f64 {
        let (k, w) = locate(m.inst.buyers[i].grid(), t);
        let col = &self.cols[i][l];
        col[k] + w * (col[k + 1] - col[k])
    }

    fn opponents_below(&self, m: &ThresholdMechanism, i: usize, l: usize, w: f64) -> f64 {
        let mut p = 1.0;
        for (j, d) in m.inst.buyers.iter().enumerate() {
            if j != i {
                p *= prob_below(&self.cols[j][l], d, w, j < i);
            }
        }
        p
    }

    /// Per quality node: margin over the reserve and opponent term.
    fn nodes(&self, m: &ThresholdMechanism, i: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
        let r = m.inst.quality.reserve().vals();
        (0..r.len())
            .map(|l| {
                let w = self.score(m, i, l, t);
                (w - r[l] + CUTOFF_SLACK, self.opponents_below(m, i, l, w))
            })
            .unzip()
    }

    pub fn interim(&self, m: &ThresholdMechanism, i: usize, t: f64) -> Interim {
        let qm = &m.inst.quality;
        let qs = qm.grid();
        let g = qm.dist().pdf_vals();
        let (s, p) = self.nodes(m, i, t);
        let hd: Vec<f64> = (0..qs.len()).map(|l| g[l] * p[l]).collect();
        let hr: Vec<f64> = (0..qs.len()).map(|l| hd[l] * self.valuation.slope(t, qs[l])).collect();
        let hn: Vec<f64> = (0..qs.len()).map(|l| hd[l] * self.valuation.value(t, qs[l])).collect();
        Interim {
            win_prob: integrate_on(qs, &s, &hd),
            win_weight: integrate_on(qs, &s, &hr),
            value: integrate_on(qs, &s, &hn),
        }
    }

    pub fn scores_at(&self, m: &ThresholdMechanism, t: &[f64], q: f64) -> (Vec<f64>, f64) {
        let (l, w) = locate(m.inst.quality.grid(), q);
        let scores = t
            .iter()
            .enumerate()
            .map(|(i, &ti)| {
                let a = self.score(m, i, l, ti);
                let b = self.score(m, i, l + 1, ti);
                a + w * (b - a)
            })
            .collect();
        (scores, m.inst.quality.reserve().at(q))
    }

    fn no_sale_node(&self, m: &ThresholdMechanism, l: usize) -> f64 {
        let cut = m.inst.quality.reserve().vals()[l] - CUTOFF_SLACK;
        m.inst.buyers.iter().enumerate().map(|(j, d)| prob_below(&self.cols[j][l], d, cut, true)).product()
    }

    pub fn no_sale_prob(&self, m: &ThresholdMechanism, q: f64) -> f64 {
        let (l, w) = locate(m.inst.quality.grid(), q);
        let a = self.no_sale_node(m, l);
        let b = self.no_sale_node(m, l + 1);
        a + w * (b - a)
    }

    pub fn virtual_surplus(&self, m: &ThresholdMechanism, i: usize, t: f64) -> f64 {
        let qm = &m.inst.quality;
        let qs = qm.grid();
        let g = qm.dist().pdf_vals();
        let r = qm.reserve().vals();
        let ih = m.inst.buyers[i].inverse_hazard(t);
        let (s, p) = self.nodes(m, i, t);
        let h: Vec<f64> = (0..qs.len())
            .map(|l| {
                let raw = self.valuation.value(t, qs[l]) - self.valuation.slope(t, qs[l]) * ih;
                g[l] * p[l] * (raw - r[l])
            })
            .collect();
        integrate_on(qs, &s, &h)
    }

    pub fn ask_density(&self, m: &ThresholdMechanism, i: usize, t: f64) -> Vec<f64> {
        let g = m.inst.quality.dist().pdf_vals();
        let (s, p) = self.nodes(m, i, t);
        (0..g.len()).map(|l| if s[l] >= 0.0 { g[l] * p[l] } else { 0.0 }).collect()
    }
}
