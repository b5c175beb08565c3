#[path = "common/mutation_suite.rs"]
mod suite;

use serde_json::json;
use suite::*;
use tradeflow_core::prompt::PostProcessMode;

#[test]
fn clean_twins_are_never_flagged() {
    for (name, v) in twins() {
        let turn = run(&raw(&v), PostProcessMode::PricePlaceholder);
        assert!(!flagged(&raw(&v), PostProcessMode::PricePlaceholder), "{name}: {:?} {:?}", turn.validation, turn.price);
    }
}

#[test]
fn every_mutation_is_flagged() {
    let suite = mutations();
    assert!(suite.len() >= 20);
    let mut missed = Vec::new();
    for (name, base, edit) in &suite {
        let mut v = twin(base);
        edit(&mut v);
        assert_ne!(v, twin(base), "{name} is not a mutation");
        if !flagged(&raw(&v), PostProcessMode::PricePlaceholder) {
            missed.push(*name);
        }
    }
    assert!(missed.is_empty(), "undetected: {missed:?}");
}

#[test]
fn hallucinated_names_get_a_nearest_suggestion() {
    let mut v = twin("show");
    v["context_details"]["context_subtype"] = json!("SHOW_INVENTOR");
    let turn = run(&v.to_string(), PostProcessMode::PricePlaceholder);
    assert_eq!(turn.validation.state_hallucination.as_deref(), Some("SHOW_INVENTOR"));
    assert!(turn.validation.notes.iter().any(|n| n.contains("SHOW_INVENTORY")));
}

#[test]
fn post_processed_offer_shows_the_example_total() {
    let turn = run(&twin("offer").to_string(), PostProcessMode::PricePlaceholder);
    assert_eq!(turn.processed_dialogue, "Two iron swords and an adventurer's sleeping bag are 150 gold together.");
    let price = turn.price.unwrap();
    assert_eq!((price.stated_total, price.computed_total, price.accurate), (Some(150), 150, true));
}
