//! Finite-type version of the problem, solved by exhaustive search over
//! monotone deterministic allocations.
//!
//! With finitely many types the seller's revenue from a monotone allocation
//! whose binding constraints are the adjacent downward ones is
//! `E[r] + sum over profiles and qualities of Pr * (alpha * phi_i - r)` for
//! the asked buyer, where `phi` is the discrete virtual value. The search
//! decomposes over qualities because monotonicity only ties together cells
//! with the same quality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn validation(msg: impl Into<String>) -> Error {
    Error::validation(msg)
}

/// Largest number of candidate allocations [`brute_force_oracle`] will
/// enumerate.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteInstance {
    /// Strictly increasing support of each buyer.
    pub types: Vec<Vec<f64>>,
    pub type_probs: Vec<Vec<f64>>,
    pub qualities: Vec<f64>,
    pub quality_probs: Vec<f64>,
    pub alpha: Vec<f64>,
    pub reserve: Vec<f64>,
}

/// Asked buyer for every quality and type profile. Profiles are indexed in
/// mixed radix with buyer 0 as the most significant digit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteAllocation {
    pub winners: Vec<Vec<Option<usize>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub revenue: f64,
    pub allocation: DiscreteAllocation,
    /// Candidates examined (transitions, for the two-buyer search).
    pub candidates: u128,
}

fn check_probs(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() || p.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(validation(format!("{what}: probabilities must be positive")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_SUM_TOL * p.len() as f64 {
        return Err(validation(format!("{what}: probabilities sum to {s}")));
    }
    Ok(())
}

impl DiscreteInstance {
    pub fn new(
        types: Vec<Vec<f64>>,
        type_probs: Vec<Vec<f64>>,
        qualities: Vec<f64>,
        quality_probs: Vec<f64>,
        alpha: Vec<f64>,
        reserve: Vec<f64>,
    ) -> Result<Self> {
        if types.is_empty() || types.len() != type_probs.len() {
            return Err(validation("need one probability vector per buyer"));
        }
        for (i, (t, p)) in types.iter().zip(&type_probs).enumerate() {
            if t.len() != p.len() {
                return Err(validation(format!("buyer {i}: types and probabilities differ in length")));
            }
            if t.windows(2).any(|w| !(w[1] > w[0])) || t.iter().any(|x| !x.is_finite()) {
                return Err(validation(format!("buyer {i}: types must be strictly increasing")));
            }
            check_probs(p, &format!("buyer {i}"))?;
        }
        let l = qualities.len();
        if quality_probs.len() != l || alpha.len() != l || reserve.len() != l {
            return Err(validation("quality vectors differ in length"));
        }
        check_probs(&quality_probs, "quality")?;
        if alpha.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(validation("alpha must be positive"));
        }
        if reserve.iter().any(|r| !r.is_finite()) {
            return Err(validation("reserve must be finite"));
        }
        Ok(DiscreteInstance { types, type_probs, qualities, quality_probs, alpha, reserve })
    }

    /// `n` buyers with `k` equally likely types at the midpoints of a
    /// uniform partition of `[0, 1]`, and `l` equally likely qualities placed
    /// the same way.
    pub fn uniform(
        n: usize,
        k: usize,
        l: usize,
        alpha: impl Fn(f64) -> f64,
        reserve: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let mid = |m: usize| (0..m).map(|j| (j as f64 + 0.5) / m as f64).collect::<Vec<_>>();
        let qs = mid(l);
        Self::new(
            vec![mid(k); n],
            vec![vec![1.0 / k as f64; k]; n],
            qs.clone(),
            vec![1.0 / l as f64; l],
            qs.iter().map(|&q| alpha(q)).collect(),
            qs.iter().map(|&q| reserve(q)).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.types.len()
    }

    pub fn n_profiles(&self) -> usize {
        self.types.iter().map(Vec::len).product()
    }

    /// `t_k - (t_k+1 - t_k) (1 - F_k) / p_k`, and `t_K` at the top type.
    pub fn virtual_values(&self, i: usize) -> Vec<f64> {
        let (t, p) = (&self.types[i], &self.type_probs[i]);
        let mut tail: f64 = 1.0;
        (0..t.len())
            .map(|k| {
                tail -= p[k];
                if k + 1 == t.len() {
                    t[k]
                } else {
                    t[k] - (t[k + 1] - t[k]) * tail.max(0.0) / p[k]
                }
            })
            .collect()
    }

    /// Probability-weighted isotonic regression of [`Self::virtual_values`].
    pub fn ironed_virtual_values(&self, i: usize) -> Vec<f64> {
        pav(&self.virtual_values(i), &self.type_probs[i])
    }

    pub fn expected_reserve(&self) -> f64 {
        self.quality_probs.iter().zip(&self.reserve).map(|(g, r)| g * r).sum()
    }

    fn digits(&self, mut idx: usize, out: &mut [usize]) {
        for i in (0..self.n()).rev() {
            let k = self.types[i].len();
            out[i] = idx % k;
            idx /= k;
        }
    }

    fn profile_prob(&self, d: &[usize]) -> f64 {
        d.iter().enumerate().map(|(i, &k)| self.type_probs[i][k]).product()
    }

    /// Revenue of `alloc` assuming the adjacent downward constraints bind
    /// and the lowest types get zero utility.
    pub fn objective(&self, alloc: &DiscreteAllocation) -> f64 {
        let phi: Vec<Vec<f64>> = (0..self.n()).map(|i| self.virtual_values(i)).collect();
        let mut d = vec![0; self.n()];
        let mut total = self.expected_reserve();
        for (l, row) in alloc.winners.iter().enumerate() {
            let mut s = 0.0;
            for (idx, w) in row.iter().enumerate() {
                if let Some(i) = *w {
                    self.digits(idx, &mut d);
                    s += self.profile_prob(&d) * (self.alpha[l] * phi[i][d[i]] - self.reserve[l]);
                }
            }
            total += self.quality_probs[l] * s;
        }
        total
    }

    /// Whether every buyer's winning set is an upper set of its own types for
    /// each quality and opponent profile.
    pub fn is_monotone(&self, alloc: &DiscreteAllocation) -> bool {
        let n = self.n();
        let mut d = vec![0; n];
        let mut stride = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            stride[i] = stride[i + 1] * self.types[i + 1].len();
        }
        alloc.winners.iter().all(|row| {
            (0..row.len()).all(|idx| {
                self.digits(idx, &mut d);
                (0..n)
                    .all(|i| row[idx] != Some(i) || d[i] + 1 == self.types[i].len() || row[idx + stride[i]] == Some(i))
            })
        })
    }

    /// Asks the buyer with the highest ironed virtual value (lowest index on
    /// ties) when `alpha * phi_bar >= r`.
    pub fn threshold_allocation(&self) -> DiscreteAllocation {
        let bar: Vec<Vec<f64>> = (0..self.n()).map(|i| self.ironed_virtual_values(i)).collect();
        let mut d = vec![0; self.n()];
        let winners = (0..self.qualities.len())
            .map(|l| {
                (0..self.n_profiles())
                    .map(|idx| {
                        self.digits(idx, &mut d);
                        let mut best = 0;
                        for i in 1..self.n() {
                            if bar[i][d[i]] > bar[best][d[best]] {
                                best = i;
                            }
                        }
                        (self.alpha[l] * bar[best][d[best]] >= self.reserve[l]).then_some(best)
                    })
                    .collect()
            })
            .collect();
        DiscreteAllocation { winners }
    }

    pub fn threshold_revenue(&self) -> f64 {
        self.objective(&self.threshold_allocation())
    }
}

/// Pool-adjacent-violators fit of `y` with weights `w`, non-decreasing.
pub fn pav(y: &[f64], w: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() > 1 {
            let (v1, w1, c1) = blocks[blocks.len() - 1];
            let (v0, w0, c0) = blocks[blocks.len() - 2];
            if v0 <= v1 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = ((v0 * w0 + v1 * w1) / (w0 + w1), w0 + w1, c0 + c1);
        }
    }
    blocks.iter().flat_map(|&(v, _, c)| std::iter::repeat_n(v, c)).collect()
}

/// Best revenue over all monotone deterministic allocations.
///
/// Two buyers are searched exactly by dynamic programming over buyer 1's
/// cutoff in each column of the type table. Other numbers of buyers are
/// enumerated cell by cell, refusing with [`Error::EnumerationTooLarge`]
/// above [`ENUMERATION_LIMIT`] candidates.
pub fn brute_force_oracle(d: &DiscreteInstance) -> Result<OracleResult> {
    let (allocation, candidates) = if d.n() == 2 { two_buyer_search(d) } else { enumerate(d)? };
    Ok(OracleResult { revenue: d.objective(&allocation), allocation, candidates })
}

fn weighted_gains(d: &DiscreteInstance, i: usize, l: usize) -> Vec<f64> {
    d.virtual_values(i).iter().zip(&d.type_probs[i]).map(|(phi, p)| p * (d.alpha[l] * phi - d.reserve[l])).collect()
}

fn suffix_sums(x: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; x.len() + 1];
    for k in (0..x.len()).rev() {
        s[k] = s[k + 1] + x[k];
    }
    s
}

/// Buyer 0 wins `a >= c1(b)` in column `b`; buyer 1 wins `b >= c2(a)` in row
/// `a`, which must start above every column `b` with `c1(b) <= a`. Columns
/// are processed from the top, tracking the running minimum `mu` of `c1`;
/// the rows in `[min(mu, c), mu)` have their lowest free column fixed when
/// that minimum drops.
fn two_buyer_search(d: &DiscreteInstance) -> (DiscreteAllocation, u128) {
    let (k1, k2) = (d.types[0].len(), d.types[1].len());
    let (p1, p2) = (&d.type_probs[0], &d.type_probs[1]);
    let mut p1_prefix = vec![0.0; k1 + 1];
    for a in 0..k1 {
        p1_prefix[a + 1] = p1_prefix[a] + p1[a];
    }
    let mut winners = Vec::with_capacity(d.qualities.len());
    for l in 0..d.qualities.len() {
        let s1 = suffix_sums(&weighted_gains(d, 0, l));
        let s2 = suffix_sums(&weighted_gains(d, 1, l));
        // best suffix of row gains starting at or above s, and where
        let mut bs = vec![(0.0, k2); k2 + 1];
        for s in (0..k2).rev() {
            bs[s] = if s2[s] > bs[s + 1].0 { (s2[s], s) } else { bs[s + 1] };
        }
        let mut dp = vec![f64::NEG_INFINITY; k1 + 1];
        dp[k1] = 0.0;
        let mut choice = vec![vec![(0usize, 0usize); k1 + 1]; k2];
        for b in (0..k2).rev() {
            let row_val = bs[b + 1].0;
            let mut next = vec![f64::NEG_INFINITY; k1 + 1];
            for mu in 0..=k1 {
                if dp[mu] == f64::NEG_INFINITY {
                    continue;
                }
                for c in 0..=k1 {
                    let nm = mu.min(c);
                    let v = dp[mu] + p2[b] * s1[c] + (p1_prefix[mu] - p1_prefix[nm]) * row_val;
                    if v > next[nm] {
                        next[nm] = v;
                        choice[b][nm] = (mu, c);
                    }
                }
            }
            dp = next;
        }
        let mut best = (f64::NEG_INFINITY, k1);
        for (mu, &v) in dp.iter().enumerate() {
            let v = v + p1_prefix[mu] * bs[0].0;
            if v > best.0 {
                best = (v, mu);
            }
        }
        let mut c1 = vec![k1; k2];
        let mut mu = best.1;
        for b in 0..k2 {
            let (prev, c) = choice[b][mu];
            c1[b] = c;
            mu = prev;
        }
        let mut row = vec![None; k1 * k2];
        for a in 0..k1 {
            let start = (0..k2).rev().find(|&b| c1[b] <= a).map_or(0, |b| b + 1);
            let c2 = bs[start].1;
            for b in 0..k2 {
                if a >= c1[b] {
                    row[a * k2 + b] = Some(0);
                } else if b >= c2 {
                    row[a * k2 + b] = Some(1);
                }
            }
        }
        winners.push(row);
    }
    let count = (d.qualities.len() * k2) as u128 * ((k1 + 1) as u128).pow(2);
    (DiscreteAllocation { winners }, count)
}

struct Slot {
    buyer: usize,
    /// Profile indices of the buyer's types, lowest first, with their gains.
    cells: Vec<usize>,
    gains: Vec<f64>,
}

fn enumerate(d: &DiscreteInstance) -> Result<(DiscreteAllocation, u128)> {
    let n = d.n();
    let total = d.n_profiles();
    // (k_i + 1) cutoffs for each buyer and opponent profile, per quality
    let count = d
        .types
        .iter()
        .map(|t| ((t.len() + 1) as u128).checked_pow((total / t.len()) as u32).unwrap_or(u128::MAX))
        .fold(d.qualities.len() as u128, u128::saturating_mul);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge { count, limit: ENUMERATION_LIMIT });
    }
    let mut stride = vec![1usize; n];
    for i in (0..n - 1).rev() {
        stride[i] = stride[i + 1] * d.types[i + 1].len();
    }
    let mut digits = vec![0; n];
    let mut winners = Vec::with_capacity(d.qualities.len());
    for l in 0..d.qualities.len() {
        let gains: Vec<Vec<f64>> = (0..n).map(|i| weighted_gains(d, i, l)).collect();
        let mut slots = Vec::new();
        for idx in 0..total {
            d.digits(idx, &mut digits);
            for i in 0..n {
                if digits[i] != 0 {
                    continue;
                }
                let k = d.types[i].len();
                let opp: f64 = (0..n).filter(|&j| j != i).map(|j| d.type_probs[j][digits[j]]).product();
                slots.push(Slot {
                    buyer: i,
                    cells: (0..k).map(|a| idx + a * stride[i]).collect(),
                    gains: gains[i].iter().map(|g| g * opp).collect(),
                });
            }
        }
        let mut state = Search { owner: vec![None; total], best: f64::NEG_INFINITY, best_owner: vec![None; total] };
        state.run(&slots, 0, 0.0);
        winners.push(state.best_owner);
    }
    Ok((DiscreteAllocation { winners }, count))
}

struct Search {
    owner: Vec<Option<usize>>,
    best: f64,
    best_owner: Vec<Option<usize>>,
}

impl Search {
    fn run(&mut self, slots: &[Slot], s: usize, value: f64) {
        let Some(slot) = slots.get(s) else {
            if value > self.best {
                self.best = value;
                self.best_owner.clone_from(&self.owner);
            }
            return;
        };
        let k = slot.cells.len();
        // cutoff k: not asked at any type in this slot
        self.run(slots, s + 1, value);
        let mut claimed = 0;
        let mut gained = 0.0;
        for c in (0..k).rev() {
            let cell = slot.cells[c];
            if self.owner[cell].is_some() {
                break;
            }
            self.owner[cell] = Some(slot.buyer);
            claimed += 1;
            gained += slot.gains[c];
            self.run(slots, s + 1, value + gained);
        }
        for c in k - claimed..k {
            self.owner[slot.cells[c]] = None;
        }
    }
}
