//! Seller revenue: direct quadrature of payments, the virtual-surplus form,
//! Monte Carlo simulation, and two baselines (the constant-quality auction
//! and the best posted price with a coarse quality disclosure).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{adaptive_simpson, GriddedFunction};
use crate::error::{Error, Result};
use crate::instance::ProblemInstance;
use crate::mechanism::{prob_below, Signal, ThresholdMechanism, WIN_PROB_FLOOR};
use crate::valuation::ValuationForm;

/// Absolute quadrature tolerance per unit length.
const QUAD_TOL: f64 = 1e-12;

/// Samples per simulation block. Block `b` draws from its own ChaCha8
/// stream `b`, so results do not depend on how blocks are scheduled.
pub const SIM_BLOCK: usize = 4096;

/// A posterior surplus below this counts as an obedience violation.
pub const OBEDIENCE_TOL: f64 = 1e-9;

fn integrate_cells(grid: &[f64], f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let cells: Vec<f64> = grid
        .par_windows(2)
        .map(|w| {
            let mut g = |x: f64| f(x);
            adaptive_simpson(&mut g, w[0], w[1], QUAD_TOL * (w[1] - w[0]))
        })
        .collect();
    cells.iter().sum()
}

/// Expected value of the item kept by the seller when nobody is asked.
pub fn retained_value(m: &ThresholdMechanism) -> f64 {
    let qm = m.quality();
    let rg = qm.reserve_density();
    integrate_cells(qm.grid(), |q| rg.at(q) * m.no_sale_prob(q))
}

/// Expected revenue as expected payments plus the value of the retained item.
pub fn revenue_direct(m: &ThresholdMechanism) -> Result<f64> {
    let mut total = retained_value(m);
    for i in 0..m.n() {
        total += expected_payment(m, i)?;
    }
    Ok(total)
}

/// `E[p_i(t) * asked_i(t)]` over buyer `i`'s types.
fn expected_payment(m: &ThresholdMechanism, i: usize) -> Result<f64> {
    let d = &m.instance().buyers[i];
    let missing = std::sync::atomic::AtomicBool::new(false);
    let pointwise = |t: f64| {
        let it = m.interim(i, t);
        if it.win_prob <= WIN_PROB_FLOOR {
            return 0.0;
        }
        match m.payment_given(i, t, it) {
            Ok(p) => p * it.win_prob * d.pdf(t),
            Err(_) => {
                missing.store(true, std::sync::atomic::Ordering::Relaxed);
                0.0
            }
        }
    };
    // With optimal payments, p * win_prob = value - U and U(t) = U(a) + int_a^t R
    // on a cell [a, b]. Swapping the order of integration turns the nested
    // integral of U into int_a^b R(s) G(s) ds with G(s) = int_s^b f, which is
    // exact for the piecewise-linear density. Win probabilities increase in
    // the type, so a cell whose left end clears the floor lies above it.
    let swapped = m.has_optimal_payments() && m.is_linear();
    let total: f64 = d
        .grid()
        .par_windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let tol = QUAD_TOL * (b - a);
            if !(swapped && m.win_prob_at(i, a) > WIN_PROB_FLOOR) {
                let mut g = |t: f64| pointwise(t);
                return adaptive_simpson(&mut g, a, b, tol);
            }
            let (h, fa, fb) = (b - a, d.pdf(a), d.pdf(b));
            let u_a = m.envelope_at(i, a);
            let tail = |s: f64| fa * (b - s) + (fb - fa) / (2.0 * h) * (h * h - (s - a) * (s - a));
            let mut g = |t: f64| {
                let it = m.interim(i, t);
                (it.value - u_a) * d.pdf(t) - it.win_weight * tail(t)
            };
            adaptive_simpson(&mut g, a, b, tol)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    if missing.into_inner() {
        return Err(Error::Internal(format!("buyer {i} has a type with positive win probability but no payment")));
    }
    Ok(total)
}

/// Expected revenue as `E[r] + sum_i E[asked_i * (virtual surplus_i)]`, with
/// zero utility for every bottom type.
pub fn revenue_virtual(m: &ThresholdMechanism) -> f64 {
    let mut total = m.quality().expected_reserve();
    for i in 0..m.n() {
        total += integrate_cells(m.instance().buyers[i].grid(), |t| m.virtual_surplus(i, t));
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n_samples: usize,
    pub seed: u64,
    pub revenue_mean: f64,
    pub revenue_stderr: f64,
    pub per_buyer_utility_mean: Vec<f64>,
    pub per_buyer_utility_stderr: Vec<f64>,
    /// No-sale frequency first, then one entry per buyer.
    pub allocation_frequency: Vec<f64>,
    /// Sales to a type whose posterior surplus is negative.
    pub obedience_violations: usize,
}

#[derive(Clone, Default)]
struct BlockSums {
    revenue: f64,
    revenue_sq: f64,
    utility: Vec<f64>,
    utility_sq: Vec<f64>,
    counts: Vec<usize>,
    violations: usize,
}

/// Posterior surplus `value / win_prob - payment` on each buyer's type grid.
fn surplus_curves(m: &ThresholdMechanism) -> Vec<GriddedFunction> {
    (0..m.n())
        .map(|i| {
            let tab = &m.tables()[i];
            let vals = (0..tab.win_prob.len())
                .map(|k| match tab.payment[k] {
                    Some(p) if tab.win_prob[k] > WIN_PROB_FLOOR => tab.value[k] / tab.win_prob[k] - p,
                    _ => 0.0,
                })
                .collect();
            GriddedFunction::new(m.instance().buyers[i].grid().to_vec(), vals).expect("type grid")
        })
        .collect()
}

/// Draws `n_samples` type profiles and qualities, runs the mechanism and
/// tallies revenue, buyer utilities and allocation frequencies. Buyers who
/// are asked always buy; asked types with negative posterior surplus are
/// counted as obedience violations.
pub fn simulate(m: &ThresholdMechanism, n_samples: usize, seed: u64) -> Result<SimulationReport> {
    if n_samples == 0 {
        return Err(Error::validation("simulation needs at least one sample"));
    }
    let inst = m.instance();
    let n = inst.n();
    let surplus = surplus_curves(m);
    let blocks = n_samples.div_ceil(SIM_BLOCK);
    let sums: Vec<BlockSums> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = SIM_BLOCK.min(n_samples - b * SIM_BLOCK);
            let mut s = BlockSums {
                utility: vec![0.0; n],
                utility_sq: vec![0.0; n],
                counts: vec![0; n + 1],
                ..Default::default()
            };
            let mut t = vec![0.0; n];
            for _ in 0..len {
                for (i, d) in inst.buyers.iter().enumerate() {
                    t[i] = d.quantile(rng.gen::<f64>());
                }
                let q = inst.quality.dist().quantile(rng.gen::<f64>());
                let rev = match m.allocate(&t, q) {
                    Signal::NoSale => {
                        s.counts[0] += 1;
                        inst.quality.reserve().at(q)
                    }
                    Signal::AskBuyer(i) => {
                        s.counts[i + 1] += 1;
                        let p = m.payment_interp(i, t[i]).unwrap_or(0.0);
                        let u = inst.value(t[i], q) - p;
                        s.utility[i] += u;
                        s.utility_sq[i] += u * u;
                        if surplus[i].at(t[i]) < -OBEDIENCE_TOL {
                            s.violations += 1;
                        }
                        p
                    }
                };
                s.revenue += rev;
                s.revenue_sq += rev * rev;
            }
            s
        })
        .collect();

    let mut tot =
        BlockSums { utility: vec![0.0; n], utility_sq: vec![0.0; n], counts: vec![0; n + 1], ..Default::default() };
    for s in &sums {
        tot.revenue += s.revenue;
        tot.revenue_sq += s.revenue_sq;
        for i in 0..n {
            tot.utility[i] += s.utility[i];
            tot.utility_sq[i] += s.utility_sq[i];
        }
        for k in 0..=n {
            tot.counts[k] += s.counts[k];
        }
        tot.violations += s.violations;
    }
    let ns = n_samples as f64;
    let stderr = |sum: f64, sq: f64| {
        let mean = sum / ns;
        let var = (sq / ns - mean * mean).max(0.0);
        if n_samples > 1 {
            (var * ns / (ns - 1.0) / ns).sqrt()
        } else {
            0.0
        }
    };
    Ok(SimulationReport {
        n_samples,
        seed,
        revenue_mean: tot.revenue / ns,
        revenue_stderr: stderr(tot.revenue, tot.revenue_sq),
        per_buyer_utility_mean: tot.utility.iter().map(|u| u / ns).collect(),
        per_buyer_utility_stderr: (0..n).map(|i| stderr(tot.utility[i], tot.utility_sq[i])).collect(),
        allocation_frequency: tot.counts.iter().map(|&c| c as f64 / ns).collect(),
        obedience_violations: tot.violations,
    })
}

/// The classic auction for a constant quality: ask the buyer with the
/// highest raw virtual value if it clears `r / alpha`, lowest index first.
#[derive(Clone, Debug)]
pub struct MyersonBaseline {
    inst: ProblemInstance,
    alpha: f64,
    reserve: f64,
    phi_nodes: Vec<GriddedFunction>,
    pub revenue: f64,
}

/// `t - (1 - F(t)) / f(t)` from the distribution's cdf and pdf.
fn raw_phi(d: &crate::dist::GriddedDistribution, t: f64) -> f64 {
    t - (1.0 - d.cdf(t)) / d.pdf(t)
}

pub fn myerson_baseline(inst: &ProblemInstance) -> Result<MyersonBaseline> {
    if !matches!(inst.valuation, ValuationForm::Linear) {
        return Err(Error::validation("the constant-quality auction needs the linear valuation"));
    }
    let qm = &inst.quality;
    if !qm.is_constant(1e-12) {
        return Err(Error::validation("the constant-quality auction needs constant alpha and reserve"));
    }
    let alpha = qm.alpha().vals()[0];
    let reserve = qm.reserve().vals()[0];
    let cut = reserve / alpha;
    let phi_nodes: Vec<GriddedFunction> =
        inst.buyers.iter().map(|d| GriddedFunction::from_fn(d.grid(), |t| raw_phi(d, t))).collect::<Result<_>>()?;
    // E[(max_i phi_i - cut)^+] = int_cut^top (1 - prod_i Pr(phi_i <= c)) dc
    let below = |c: f64| -> f64 {
        inst.buyers
            .iter()
            .zip(&phi_nodes)
            .map(|(d, phi)| phi.sublevel_set(c).iter().map(|&(lo, hi)| d.cdf(hi) - d.cdf(lo)).sum::<f64>())
            .product()
    };
    let top = phi_nodes.iter().map(|p| p.max()).fold(f64::NEG_INFINITY, f64::max);
    let mut levels: Vec<f64> =
        phi_nodes.iter().flat_map(|p| p.vals().iter().copied()).filter(|&c| c > cut && c < top).collect();
    levels.push(cut);
    levels.push(top.max(cut));
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let gain: f64 = levels
        .par_windows(2)
        .map(|w| {
            let mut f = |c: f64| 1.0 - below(c);
            adaptive_simpson(&mut f, w[0], w[1], QUAD_TOL * (w[1] - w[0]))
        })
        .sum();
    Ok(MyersonBaseline { inst: inst.clone(), alpha, reserve, phi_nodes, revenue: reserve + alpha * gain })
}

impl MyersonBaseline {
    pub fn allocate(&self, t: &[f64]) -> Signal {
        let cut = self.reserve / self.alpha;
        let mut best: Option<(usize, f64)> = None;
        for (i, (d, &ti)) in self.inst.buyers.iter().zip(t).enumerate() {
            let phi = raw_phi(d, ti);
            if phi >= cut && best.is_none_or(|(_, b)| phi > b) {
                best = Some((i, phi));
            }
        }
        best.map_or(Signal::NoSale, |(i, _)| Signal::AskBuyer(i))
    }

    /// Raw virtual values on each buyer's type grid.
    pub fn virtual_values(&self) -> &[GriddedFunction] {
        &self.phi_nodes
    }
}

/// Outcome of the posted-price search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantPrice {
    pub price: f64,
    /// Disclosed event is `xi(q) <= cutoff`; `None` discloses nothing.
    pub cutoff: Option<f64>,
    pub revenue: f64,
}

/// Revenue of posting `price` after announcing whether `xi(q) <= cutoff`.
/// The item is offered only after a favourable announcement; a buyer
/// accepts when the posterior expected value covers the price.
pub fn constant_price_revenue(inst: &ProblemInstance, price: f64, cutoff: Option<f64>) -> f64 {
    let qm = &inst.quality;
    let er = qm.expected_reserve();
    let set = match cutoff {
        Some(c) => qm.acceptance_set(c),
        None => crate::dist::IntervalUnion::new(vec![(qm.dist().lo(), qm.dist().hi())]).expect("valid"),
    };
    let mass = qm.mass_over(&set);
    if mass.mass <= WIN_PROB_FLOOR {
        return er;
    }
    let mean_reserve = mass.reserve / mass.mass;
    let none_accept: f64 = inst
        .buyers
        .iter()
        .map(|d| {
            let value: Vec<f64> = match &inst.valuation {
                ValuationForm::Linear => {
                    let a = mass.alpha / mass.mass;
                    d.grid().iter().map(|&t| a * t).collect()
                }
                ValuationForm::General(v) => {
                    let qbar = posterior_mean(qm.grid(), qm.dist().pdf_vals(), &set, |q| v.value_quality.at(q));
                    d.grid().iter().map(|&t| v.value_type.eval(t) * qbar).collect()
                }
            };
            let mut acc = f64::NEG_INFINITY;
            let value: Vec<f64> = value
                .into_iter()
                .map(|x| {
                    acc = acc.max(x);
                    acc
                })
                .collect();
            prob_below(&value, d, price, true)
        })
        .product();
    er + mass.mass * (1.0 - none_accept) * (price - mean_reserve)
}

fn posterior_mean(grid: &[f64], g: &[f64], set: &crate::dist::IntervalUnion, f: impl Fn(f64) -> f64) -> f64 {
    let fg = GriddedFunction::new(grid.to_vec(), grid.iter().zip(g).map(|(&q, &p)| f(q) * p).collect())
        .expect("quality grid");
    let gg = GriddedFunction::new(grid.to_vec(), g.to_vec()).expect("quality grid");
    let num: f64 = set.iter().map(|&(a, b)| fg.integrate_unchecked(a, b)).sum();
    let den: f64 = set.iter().map(|&(a, b)| gg.integrate_unchecked(a, b)).sum();
    num / den
}

/// Grid search over posted prices and disclosure cutoffs, with one local
/// refinement of the price around the best grid point.
pub fn best_constant_price(inst: &ProblemInstance, prices: &[f64], cutoffs: &[Option<f64>]) -> Result<ConstantPrice> {
    if prices.is_empty() || cutoffs.is_empty() {
        return Err(Error::validation("price and cutoff grids must be non-empty"));
    }
    let candidates: Vec<ConstantPrice> = cutoffs
        .par_iter()
        .map(|&cutoff| {
            let mut best = ConstantPrice { price: prices[0], cutoff, revenue: f64::NEG_INFINITY };
            let mut best_k = 0;
            for (k, &p) in prices.iter().enumerate() {
                let r = constant_price_revenue(inst, p, cutoff);
                if r > best.revenue {
                    best = ConstantPrice { price: p, cutoff, revenue: r };
                    best_k = k;
                }
            }
            let lo = prices[best_k.saturating_sub(1)];
            let hi = prices[(best_k + 1).min(prices.len() - 1)];
            for k in 0..=100 {
                let p = lo + (hi - lo) * k as f64 / 100.0;
                let r = constant_price_revenue(inst, p, cutoff);
                if r > best.revenue {
                    best = ConstantPrice { price: p, cutoff, revenue: r };
                }
            }
            best
        })
        .collect();
    let mut best = candidates[0].clone();
    for c in candidates.into_iter().skip(1) {
        if c.revenue > best.revenue {
            best = c;
        }
    }
    Ok(best)
}

/// Prices from zero to the highest possible value, and cutoffs at evenly
/// spaced levels of `xi` plus full pooling.
pub fn default_search_grids(inst: &ProblemInstance) -> (Vec<f64>, Vec<Option<f64>>) {
    let qm = &inst.quality;
    let top_value =
        inst.buyers.iter().flat_map(|d| qm.grid().iter().map(move |&q| inst.value(d.hi(), q))).fold(0.0f64, f64::max);
    let prices = (0..=800).map(|k| top_value * k as f64 / 800.0).collect();
    let (lo, hi) = (qm.xi().min(), qm.xi().max());
    let mut cutoffs: Vec<Option<f64>> =
        if hi > lo { (0..=64).map(|k| Some(lo + (hi - lo) * k as f64 / 64.0)).collect() } else { Vec::new() };
    cutoffs.push(None);
    (prices, cutoffs)
}

/// One row of a method comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub instance: String,
    pub method: String,
    pub revenue: f64,
    pub stderr: Option<f64>,
    pub runtime_ms: Option<f64>,
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["instance", "method", "revenue", "stderr", "runtime_ms"])?;
    for r in rows {
        w.write_record([
            r.instance.clone(),
            r.method.clone(),
            r.revenue.to_string(),
            r.stderr.map(|s| s.to_string()).unwrap_or_default(),
            r.runtime_ms.map(|s| format!("{s:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::instance::QualityModel;
    use crate::mechanism::build_optimal_mechanism;

    const M: usize = 1024;

    #[test]
    fn posted_price_revenue() {
        let m = build_optimal_mechanism(&catalog::posted_price(M)).unwrap();
        assert!((revenue_direct(&m).unwrap() - 0.25).abs() < 1e-9);
        assert!((revenue_virtual(&m) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn two_uniform_revenue() {
        let m = build_optimal_mechanism(&catalog::two_uniform(M)).unwrap();
        assert!((revenue_direct(&m).unwrap() - 5.0 / 12.0).abs() < 1e-6);
        assert!((revenue_virtual(&m) - 5.0 / 12.0).abs() < 1e-6);
    }

    #[test]
    fn reserve_above_every_virtual_value() {
        let inst =
            ProblemInstance::linear(vec![catalog::uniform01(M)], QualityModel::constant(1.0, 1.0, M).unwrap()).unwrap();
        let m = build_optimal_mechanism(&inst).unwrap();
        assert!((revenue_virtual(&m) - 1.0).abs() < 1e-12);
        assert!((revenue_direct(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_reserve_revenue() {
        // int_0^1 q dq + int_{1/2}^1 int_0^{2t-1} (2t - 1 - q) dq dt = 1/2 + 1/12
        let m = build_optimal_mechanism(&catalog::linear_reserve(M)).unwrap();
        assert!((revenue_direct(&m).unwrap() - 7.0 / 12.0).abs() < 1e-5);
        assert!((revenue_virtual(&m) - 7.0 / 12.0).abs() < 1e-5);
    }

    #[test]
    fn simulation_is_deterministic_and_unbiased() {
        let m = build_optimal_mechanism(&catalog::two_uniform(M)).unwrap();
        let a = simulate(&m, 200_000, 42).unwrap();
        let b = simulate(&m, 200_000, 42).unwrap();
        assert_eq!(a, b);
        assert!((a.allocation_frequency.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((a.allocation_frequency[0] - 0.25).abs() < 0.005);
        assert!((a.revenue_mean - 5.0 / 12.0).abs() < 3.0 * a.revenue_stderr);
        assert_eq!(a.obedience_violations, 0);
        let c = simulate(&m, 200_000, 43).unwrap();
        assert_ne!(a.revenue_mean, c.revenue_mean);
    }

    #[test]
    fn myerson_examples() {
        let b = myerson_baseline(&catalog::two_uniform(M)).unwrap();
        assert!((b.revenue - 5.0 / 12.0).abs() < 1e-6);
        let b = myerson_baseline(&catalog::posted_price(M)).unwrap();
        assert!((b.revenue - 0.25).abs() < 1e-6);
        assert_eq!(b.allocate(&[0.6]), Signal::AskBuyer(0));
        assert_eq!(b.allocate(&[0.4]), Signal::NoSale);
        assert!(myerson_baseline(&catalog::linear_reserve(64)).is_err());
    }

    #[test]
    fn constant_price_examples() {
        let inst = catalog::posted_price(M);
        let (p, c) = default_search_grids(&inst);
        let best = best_constant_price(&inst, &p, &c).unwrap();
        assert!((best.price - 0.5).abs() < 1e-3);
        assert!((best.revenue - 0.25).abs() < 1e-6);

        let inst = ProblemInstance::linear(
            vec![crate::dist::GriddedDistribution::uniform(0.899, 0.901, M).unwrap()],
            QualityModel::from_fns(catalog::uniform01(M), |q| 1.0 + q, |_| 0.0).unwrap(),
        )
        .unwrap();
        let (p, c) = default_search_grids(&inst);
        let best = best_constant_price(&inst, &p, &c).unwrap();
        assert!((best.price - 0.9 * 1.5).abs() < 3e-3, "{best:?}");
        assert!((best.revenue - best.price).abs() < 3e-3);

        let inst = catalog::two_uniform(M);
        let (p, c) = default_search_grids(&inst);
        let best = best_constant_price(&inst, &p, &c).unwrap();
        // p (1 - p^2) peaks at 1/sqrt(3)
        assert!((best.revenue - 2.0 / (3.0 * 3f64.sqrt())).abs() < 1e-6);
    }

    #[test]
    fn comparison_csv() {
        let rows = vec![ComparisonRow {
            instance: "a".into(),
            method: "optimal".into(),
            revenue: 0.25,
            stderr: None,
            runtime_ms: None,
        }];
        let mut buf = Vec::new();
        write_comparison_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "instance,method,revenue,stderr,runtime_ms\na,optimal,0.25,,\n");
    }
}
