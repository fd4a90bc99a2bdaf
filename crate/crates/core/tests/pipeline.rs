use std::path::Path;

use persuasion_core::config::InstanceConfig;
use persuasion_core::revenue::{best_constant_price, default_search_grids, revenue_direct, revenue_virtual, simulate};
use persuasion_core::verify::check_feasibility;
use persuasion_core::{build_optimal_mechanism, ThresholdMechanism};

const GRID: usize = 257;

fn shipped_configs() -> Vec<(String, InstanceConfig)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), InstanceConfig::load(&p).unwrap()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn every_shipped_config_solves_and_verifies() {
    let configs = shipped_configs();
    assert!(configs.len() >= 7);
    for (name, cfg) in configs {
        let inst = cfg.build(Some(GRID)).unwrap();
        let m = build_optimal_mechanism(&inst).unwrap();
        let direct = revenue_direct(&m).unwrap();
        if m.is_linear() {
            let virt = revenue_virtual(&m);
            assert!((direct - virt).abs() <= 1e-4 * direct.abs().max(1.0), "{name}: {direct} vs {virt}");
        }
        let sim = simulate(&m, 20_000, cfg.seed()).unwrap();
        assert!((sim.revenue_mean - direct).abs() < 5.0 * sim.revenue_stderr + 1e-3, "{name}: {sim:?} vs {direct}");
        assert_eq!(sim.obedience_violations, 0, "{name}");

        let report = check_feasibility(&m);
        let failures = report.failures(&cfg.tolerances());
        assert!(failures.is_empty(), "{name}: {failures:?}");

        let (prices, cutoffs) = default_search_grids(&inst);
        let cp = best_constant_price(&inst, &prices, &cutoffs).unwrap().revenue;
        assert!(cp <= direct + 1e-9, "{name}: constant price {cp} beats {direct}");
    }
}

#[test]
fn mechanism_round_trips_through_json() {
    let (_, cfg) = shipped_configs().into_iter().find(|(n, _)| n == "two_uniform_xi_hat").unwrap();
    let inst = cfg.build(Some(GRID)).unwrap();
    let m = build_optimal_mechanism(&inst).unwrap();
    let doc = serde_json::from_str(&m.to_json().unwrap()).unwrap();
    let back = ThresholdMechanism::from_doc(&inst, &doc).unwrap();
    assert!(back.has_optimal_payments());
    assert_eq!(back.to_json().unwrap(), m.to_json().unwrap());
    assert_eq!(revenue_direct(&back).unwrap(), revenue_direct(&m).unwrap());
}
