use std::path::PathBuf;

use tradeflow_core::domain::GameWorld;
use tradeflow_core::metrics::{price_accuracy, sirr, stcr, Rate};
use tradeflow_core::postprocess::StateGroup;
use tradeflow_core::synthetic::{build_golden, GoldenSpec, GOLDEN_SETS};

fn world() -> GameWorld {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/world.json");
    GameWorld::load(path).unwrap()
}

// Independent percentage oracle: float arithmetic, formatted by std.
fn pct(num: u64, den: u64, decimals: usize) -> String {
    format!("{:.*}", decimals, num as f64 * 100.0 / den as f64)
}

fn spec(name: &str) -> GoldenSpec {
    GOLDEN_SETS.iter().find(|(n, _)| *n == name).unwrap().1
}

#[test]
fn stcr_sets_hit_their_counts() {
    let w = world();
    for (name, expected) in [
        ("stcr-sibp", "97.73"),
        ("stcr-baseline1", "79.55"),
        ("stcr-baseline2", "84.09"),
        ("stcr-baseline3", "77.27"),
        ("stcr-baseline4", "94.32"),
    ] {
        let GoldenSpec::Stcr { compliant, n_first, .. } = spec(name) else { panic!() };
        let ts = build_golden(&spec(name), &w);
        let r = stcr(&ts, n_first);
        assert!(!r.insufficient, "{name}");
        assert!(r.qualifying_found > n_first, "{name}: the set must contain excluded qualifying dialogues");
        assert_eq!(r.rate, Rate::new(compliant as u64, n_first as u64), "{name}");
        assert_eq!(pct(compliant as u64, n_first as u64, 2), expected);
        assert_eq!(r.rate.percent_str(2), expected, "{name}");
        assert_eq!(r.violating_seeds.len(), n_first - compliant);
    }
}

#[test]
fn sirr_sets_hit_their_counts() {
    let w = world();
    for (name, num, den, expected) in [("sirr-purchase", 461, 485, "95.05"), ("sirr-recommend", 512, 534, "95.88")] {
        let r = sirr(&build_golden(&spec(name), &w));
        assert_eq!(r.rate, Rate::new(num, den), "{name}");
        assert_eq!(pct(num, den, 2), expected);
        assert_eq!(r.rate.percent_str(2), expected);
        assert_eq!(r.unparsed_turns, 0);
        assert_eq!(r.state_hallucinations, 0);
        assert_eq!(r.breakdown.values().sum::<u64>() - r.overcount, den - num);
    }
}

#[test]
fn price_sets_hit_their_counts() {
    let w = world();
    for (name, os, others) in [
        ("price-sibp-2.5-flash", "79.7", "82.3"),
        ("price-sibp-ppp-2.5-flash", "100.0", "99.7"),
        ("price-sibp-2.0-flash", "49.4", "67.3"),
        ("price-sibp-ppp-2.0-flash", "100.0", "91.8"),
        ("price-sibp-2.5-pro", "100.0", "100.0"),
    ] {
        let GoldenSpec::Price { counts, .. } = spec(name) else { panic!() };
        let ts = build_golden(&spec(name), &w);
        let a = price_accuracy(&ts, StateGroup::OfferSell);
        let b = price_accuracy(&ts, StateGroup::Others);
        assert_eq!(a.rate, Rate::new(counts.offer_accurate as u64, counts.offer_total as u64), "{name}");
        assert_eq!(b.rate, Rate::new(counts.others_accurate as u64, counts.others_total as u64), "{name}");
        assert_eq!(a.inapplicable + b.inapplicable, 0, "{name}");
        assert_eq!(pct(a.rate.numerator, a.rate.denominator, 1), os, "{name}");
        assert_eq!(pct(b.rate.numerator, b.rate.denominator, 1), others, "{name}");
        assert_eq!(a.rate.percent_str(1), os);
        assert_eq!(b.rate.percent_str(1), others);
    }
}
