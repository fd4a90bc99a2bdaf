use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::catalog;
use crate::valuation::{GeneralValuation, TypeFactor};

const M: usize = 1024;

/// Monte Carlo estimate of buyer 0's win weight at type `t` with its
/// standard error, sampling opponents and quality.
fn mc_win_weight(m: &ThresholdMechanism, t: f64, samples: usize, seed: u64) -> (f64, f64) {
    let inst = m.instance();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    let mut profile = vec![t; inst.n()];
    for _ in 0..samples {
        for j in 1..inst.n() {
            profile[j] = inst.buyers[j].quantile(rng.gen());
        }
        let q = inst.quality.dist().quantile(rng.gen());
        let x = if m.allocate(&profile, q) == Signal::AskBuyer(0) { inst.quality.alpha().at(q) } else { 0.0 };
        s += x;
        s2 += x * x;
    }
    let n = samples as f64;
    let mean = s / n;
    (mean, ((s2 / n - mean * mean) / n).sqrt())
}

#[test]
fn allocate_examples() {
    let m = build_optimal_mechanism(&catalog::two_uniform(M)).unwrap();
    assert_eq!(m.allocate(&[0.8, 0.6], 0.3), Signal::AskBuyer(0));
    assert_eq!(m.allocate(&[0.4, 0.3], 0.3), Signal::NoSale);
    let m = build_optimal_mechanism(&catalog::linear_reserve(M)).unwrap();
    assert_eq!(m.allocate(&[0.9], 0.9), Signal::NoSale);
    assert_eq!(m.allocate(&[0.9], 0.7), Signal::AskBuyer(0));
}

#[test]
fn ties_go_to_the_lowest_index() {
    let m = build_optimal_mechanism(&catalog::two_uniform(M)).unwrap();
    assert_eq!(m.allocate(&[0.7, 0.7], 0.5), Signal::AskBuyer(0));
    assert_eq!(m.allocate(&[0.7, 0.7000001], 0.5), Signal::AskBuyer(1));
}

#[test]
fn posted_price_win_weight_and_payment() {
    let m = build_optimal_mechanism(&catalog::posted_price(M)).unwrap();
    for &t in &[0.0, 0.2, 0.49] {
        assert_eq!(m.win_weight_at(0, t), 0.0);
        assert!(m.payment(0, t).is_err());
    }
    for &t in &[0.5, 0.51, 0.75, 1.0] {
        assert!((m.win_weight_at(0, t) - 1.0).abs() < 1e-12);
        assert!((m.payment(0, t).unwrap() - 0.5).abs() < 1e-9);
    }
    let cut = m.cutoff_type(0).unwrap();
    assert!((cut - 0.5).abs() < 1e-9);
}

#[test]
fn two_uniform_payment_matches_closed_form() {
    let m = build_optimal_mechanism(&catalog::two_uniform(M)).unwrap();
    // p(t) = t/2 + 1/(8t) on [1/2, 1]
    for k in 0..=20 {
        let t = 0.5 + 0.5 * k as f64 / 20.0;
        let exact = t / 2.0 + 1.0 / (8.0 * t);
        assert!((m.payment(0, t).unwrap() - exact).abs() < 1e-6, "t = {t}");
        assert!((m.payment(1, t).unwrap() - exact).abs() < 1e-6, "t = {t}");
        assert!((m.win_weight_at(0, t) - t).abs() < 1e-6);
    }
    assert!((m.payment(0, 1.0).unwrap() - 0.625).abs() < 1e-9);
    assert!((m.payment(0, 0.5).unwrap() - 0.5).abs() < 1e-9);
}

#[test]
fn win_weight_against_monte_carlo() {
    let m = build_optimal_mechanism(&catalog::two_uniform(M)).unwrap();
    for (k, &t) in [0.3, 0.55, 0.8, 0.97].iter().enumerate() {
        let (mean, se) = mc_win_weight(&m, t, 1_000_000, k as u64);
        let exact = if t >= 0.5 { t } else { 0.0 };
        assert!((mean - exact).abs() <= 3.0 * se + 1e-12, "t = {t}: {mean} vs {exact}");
        assert!((m.win_weight_at(0, t) - exact).abs() < 1e-6);
    }
    let m = build_optimal_mechanism(&catalog::linear_reserve(M)).unwrap();
    for (k, &t) in [0.4, 0.6, 0.75, 0.99].iter().enumerate() {
        let (mean, se) = mc_win_weight(&m, t, 1_000_000, 10 + k as u64);
        let exact = (2.0 * t - 1.0f64).clamp(0.0, 1.0);
        assert!((mean - exact).abs() <= 3.0 * se + 1e-12, "t = {t}: {mean} vs {exact}");
        assert!((m.win_weight_at(0, t) - exact).abs() < 1e-5);
    }
}

#[test]
fn win_weight_is_monotone_on_the_suite() {
    for (name, inst) in catalog::suite(256).unwrap() {
        let m = build_optimal_mechanism(&inst).unwrap();
        for i in 0..m.n() {
            assert!(m.win_weight_curve(i).worst_decrease() <= 1e-9, "{name} buyer {i}");
            for (k, p) in m.tables()[i].payment.iter().enumerate() {
                assert_eq!(p.is_some(), m.tables()[i].win_prob[k] > WIN_PROB_FLOOR);
            }
        }
    }
}

#[test]
fn plateau_allocation_is_constant() {
    let inst =
        ProblemInstance::linear(vec![catalog::bimodal(M)], QualityModel::constant(1.0, 0.3, M).unwrap()).unwrap();
    let m = build_optimal_mechanism(&inst).unwrap();
    let c = &m.curves()[0];
    assert!(!c.regular);
    for &(a, b) in &c.ironed_intervals {
        let r = &m.tables()[0].win_weight[a..=b];
        assert!(r.iter().all(|&x| x == r[0]));
        let (ta, tb) = (c.type_grid[a], c.type_grid[b]);
        for k in 0..=10 {
            let t = ta + (tb - ta) * k as f64 / 10.0;
            assert_eq!(m.allocate(&[t], 0.5), m.allocate(&[ta], 0.5));
        }
    }
}

#[test]
fn raw_and_ironed_curves_agree_when_regular() {
    for inst in [catalog::two_uniform(M), catalog::linear_reserve(M)] {
        let ironed = build_optimal_mechanism(&inst).unwrap();
        let raw = ThresholdMechanism::with_curves(&inst, inst.buyers.iter().map(VirtualValueCurve::unironed).collect())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let t: Vec<f64> = (0..inst.n()).map(|_| rng.gen()).collect();
            let q: f64 = rng.gen();
            assert_eq!(ironed.allocate(&t, q), raw.allocate(&t, q));
        }
        for i in 0..inst.n() {
            for (a, b) in ironed.tables()[i].payment.iter().zip(&raw.tables()[i].payment) {
                match (a, b) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9),
                    (None, None) => {}
                    _ => panic!("payment domains differ"),
                }
            }
        }
    }
}

#[test]
fn degenerate_instance_never_sells() {
    let inst =
        ProblemInstance::linear(vec![catalog::uniform01(128)], QualityModel::constant(1.0, 1.5, 128).unwrap()).unwrap();
    let m = build_optimal_mechanism(&inst).unwrap();
    assert!(m.is_degenerate());
    assert_eq!(m.allocate(&[1.0], 0.5), Signal::NoSale);
    assert!(matches!(m.payment(0, 1.0), Err(Error::UndefinedPayment { .. })));
    assert_eq!(m.cutoff_type(0), None);
}

#[test]
fn general_form_reduces_to_linear() {
    let m = 256;
    let alpha = GriddedFunction::from_fn(catalog::uniform01(m).grid(), |q| 1.0 + q).unwrap();
    let qm = QualityModel::new(catalog::uniform01(m), &alpha, &alpha.map(|q, _| 0.6 * q)).unwrap();
    let lin = ProblemInstance::linear(vec![catalog::uniform01(m), catalog::uniform01(m)], qm.clone()).unwrap();
    let general = ProblemInstance::new(
        lin.buyers.clone(),
        qm,
        ValuationForm::General(GeneralValuation {
            value_type: TypeFactor::Poly { coeffs: vec![0.0, 1.0] },
            value_quality: alpha.clone(),
            slope_type: TypeFactor::Poly { coeffs: vec![1.0] },
            slope_quality: alpha,
        }),
    )
    .unwrap();
    let a = build_optimal_mechanism(&lin).unwrap();
    let b = build_optimal_mechanism(&general).unwrap();
    assert!(!b.is_linear());
    for k in 0..=20 {
        let t = k as f64 / 20.0;
        let (x, y) = (a.interim(0, t), b.interim(0, t));
        assert!((x.win_weight - y.win_weight).abs() < 2e-3, "t = {t}");
        assert!((x.win_prob - y.win_prob).abs() < 2e-3, "t = {t}");
        if let (Ok(p), Ok(r)) = (a.payment(1, t), b.payment(1, t)) {
            assert!((p - r).abs() < 5e-3, "t = {t}: {p} vs {r}");
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..2000 {
        let t = [rng.gen::<f64>(), rng.gen::<f64>()];
        let q: f64 = rng.gen();
        if a.allocate(&t, q) != b.allocate(&t, q) {
            mismatches += 1;
        }
    }
    assert!(mismatches <= 10, "{mismatches} mismatches");
}

#[test]
fn general_form_rejects_concave_values() {
    let m = 128;
    let one = GriddedFunction::from_fn(catalog::uniform01(m).grid(), |_| 1.0).unwrap();
    let inst = ProblemInstance::new(
        vec![GriddedDistribution::uniform(0.1, 1.0, m).unwrap()],
        QualityModel::new(catalog::uniform01(m), &one, &one.map(|_, _| 0.0)).unwrap(),
        ValuationForm::General(GeneralValuation {
            value_type: TypeFactor::Power { scale: 1.0, exponent: 0.5 },
            value_quality: one.clone(),
            slope_type: TypeFactor::Power { scale: 0.5, exponent: -0.5 },
            slope_quality: one,
        }),
    )
    .unwrap();
    assert!(matches!(build_optimal_mechanism(&inst), Err(Error::Assumption(_))));
}

#[test]
fn json_round_trip() {
    let inst = catalog::suite(128).unwrap().remove(6).1;
    let m = build_optimal_mechanism(&inst).unwrap();
    let json = m.to_json().unwrap();
    let doc: MechanismDoc = serde_json::from_str(&json).unwrap();
    let back = ThresholdMechanism::from_doc(&inst, &doc).unwrap();
    assert!(back.has_optimal_payments());
    assert_eq!(back.tables(), m.tables());
    assert_eq!(back.to_json().unwrap(), json);

    let broken = m.map_payments(|_, _, p| p + 0.05);
    let doc = broken.to_doc();
    let back = ThresholdMechanism::from_doc(&inst, &doc).unwrap();
    assert!(!back.has_optimal_payments());
    let t = inst.buyers[0].grid()[115];
    assert!((back.payment(0, t).unwrap() - m.payment(0, t).unwrap() - 0.05).abs() < 1e-6);

    let mut buf = Vec::new();
    m.write_buyer_csv(0, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,phi,phi_ironed,win_weight,payment\n"));
    assert_eq!(text.lines().count(), 129);
}

mod props {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn scaling_alpha_and_reserve_keeps_allocation(scale in 0.1f64..10.0, seed in 0u64..1000) {
            let m = 128;
            let build = |s: f64| {
                let inst = ProblemInstance::linear(
                    vec![catalog::uniform01(m), catalog::bimodal(m)],
                    QualityModel::from_fns(catalog::uniform01(m), move |q| s * (1.0 + q), move |q| s * (q - 0.5).abs()).unwrap(),
                ).unwrap();
                build_optimal_mechanism(&inst).unwrap()
            };
            let a = build(1.0);
            let b = build(scale);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..500 {
                let t = [rng.gen::<f64>(), rng.gen::<f64>()];
                let q: f64 = rng.gen();
                let xa = a.xi_at(q);
                let xb = b.xi_at(q);
                // skip profiles sitting on the cutoff up to rounding of xi
                let lv = a.level(0, t[0]).max(a.level(1, t[1]));
                if (lv - xa).abs() < 1e-9 {
                    continue;
                }
                prop_assert!((xa - xb).abs() < 1e-12);
                prop_assert_eq!(a.allocate(&t, q), b.allocate(&t, q));
            }
        }
    }
}
