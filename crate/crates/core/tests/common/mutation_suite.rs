//! Hand-made defective replies, each a small edit of a clean twin. A reply is
//! flagged when it fails to parse, fails validation, or states a wrong total.

#![allow(dead_code)]

use std::path::PathBuf;

use serde_json::{json, Value};
use tradeflow_core::backend::Completion;
use tradeflow_core::domain::{GameWorld, UsageStats};
use tradeflow_core::engine::process_completion;
use tradeflow_core::prompt::{PostProcessMode, PromptVariant};
use tradeflow_core::transcript::DialogueTurn;

pub fn world() -> GameWorld {
    GameWorld::load(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/world.json")).unwrap()
}

pub fn run(raw: &str, mode: PostProcessMode) -> DialogueTurn {
    let completion = Completion { text: raw.to_string(), usage: UsageStats::default() };
    process_completion(PromptVariant::SIBP, mode, &world(), 2, "I'll take them.", completion)
}

pub fn flagged(raw: &str, mode: PostProcessMode) -> bool {
    let turn = run(raw, mode);
    turn.parsed.is_err() || !turn.validation.is_clean() || turn.price.as_ref().is_some_and(|p| !p.accurate)
}

pub fn items() -> Value {
    json!([
        {"item_id": "basic_iron_sword", "item_name": "Basic Iron Sword", "quantity": 2, "price": 60},
        {"item_id": "sleeping_bag", "item_name": "Adventurer's Sleeping Bag", "quantity": 1, "price": 30},
    ])
}

pub fn trade(last: &str, sub: &str, price: Value, dialogue: &str) -> Value {
    let mut details = json!({"context_subtype": sub, "items": items()});
    if !price.is_null() {
        details["original_price"] = price.clone();
        details["sale_price"] = price;
    }
    json!({
        "last_trade_context": last,
        "context_reason": "The player is buying.",
        "context_type": "TRADE",
        "context_details": details,
        "npc_dialogue": dialogue,
    })
}

pub fn twins() -> Vec<(&'static str, Value)> {
    vec![
        ("show", trade("", "SHOW_INVENTORY", Value::Null, "Have a look at these.")),
        ("offer", trade("", "OFFER_SELL", json!("__PRICE__"), "Two iron swords and an adventurer's sleeping bag are __PRICE__ gold together.")),
        ("negotiate", trade("OFFER_SELL", "NEGOTIATE_PRICE", json!(150), "150 gold is my final price.")),
        ("check", trade("NEGOTIATE_PRICE", "CHECK_CONFIRMATION", json!(150), "150 gold then. So, will you buy it?")),
        ("confirm", trade("CHECK_CONFIRMATION", "CONFIRM_SELL", json!(150), "Pleasure doing business.")),
        ("chat", json!({"last_trade_context": "", "context_reason": "Small talk.", "context_type": "NONE", "npc_dialogue": "Fine weather."})),
        ("bye", json!({"last_trade_context": "", "context_reason": "Leaving.", "context_type": "END_CONVERSATION", "npc_dialogue": "Safe travels."})),
    ]
}

pub fn twin(name: &str) -> Value {
    twins().into_iter().find(|(n, _)| *n == name).unwrap().1
}

pub type Edit = fn(&mut Value);

pub fn mutations() -> Vec<(&'static str, &'static str, Edit)> {
    vec![
        ("subtype SHOW_INVENTOR", "show", |v| v["context_details"]["context_subtype"] = json!("SHOW_INVENTOR")),
        ("subtype OFFER_SEL", "offer", |v| v["context_details"]["context_subtype"] = json!("OFFER_SEL")),
        ("subtype CONFIRM-SELL", "confirm", |v| v["context_details"]["context_subtype"] = json!("CONFIRM-SELL")),
        ("lowercase subtype", "check", |v| v["context_details"]["context_subtype"] = json!("check_confirmation")),
        ("subtype NEGOTIATE_PRICES", "negotiate", |v| v["context_details"]["context_subtype"] = json!("NEGOTIATE_PRICES")),
        ("context_type TRADING", "check", |v| v["context_type"] = json!("TRADING")),
        ("last_trade_context OFFER_SELLL", "negotiate", |v| v["last_trade_context"] = json!("OFFER_SELLL")),
        ("id sleeping_bag_01", "offer", |v| v["context_details"]["items"][1]["item_id"] = json!("sleeping_bag_01")),
        ("id basic_iron_swords", "confirm", |v| v["context_details"]["items"][0]["item_id"] = json!("basic_iron_swords")),
        ("id Sleeping_Bag", "show", |v| v["context_details"]["items"][1]["item_id"] = json!("Sleeping_Bag")),
        ("sold-out item", "offer", |v| {
            v["context_details"]["items"][0]["item_id"] = json!("steel_longsword");
            v["context_details"]["items"][0]["item_name"] = json!("Steel Longsword");
        }),
        ("catalog-only item", "check", |v| {
            v["context_details"]["items"][1]["item_id"] = json!("crystal_orb");
            v["context_details"]["items"][1]["item_name"] = json!("Crystal Orb");
        }),
        ("null price", "show", |v| v["context_details"]["items"][0]["price"] = Value::Null),
        ("zero price", "offer", |v| v["context_details"]["items"][1]["price"] = json!(0)),
        ("empty items in offer", "offer", |v| v["context_details"]["items"] = json!([])),
        ("empty items in confirm", "confirm", |v| v["context_details"]["items"] = json!([])),
        ("placeholder in check dialogue", "check", |v| v["npc_dialogue"] = json!("__PRICE__ gold then. So, will you buy it?")),
        ("placeholder as confirm price", "confirm", |v| v["context_details"]["sale_price"] = json!("__PRICE__")),
        ("placeholder in negotiate", "negotiate", |v| {
            v["context_details"]["original_price"] = json!("__PRICE__");
            v["context_details"]["sale_price"] = json!("__PRICE__");
        }),
        ("__PRICE_PLACEHOLDE__ in dialogue", "offer", |v| {
            v["npc_dialogue"] = json!("Two iron swords and an adventurer's sleeping bag are __PRICE_PLACEHOLDE__ gold together.")
        }),
        ("__PRICE_PLACEHOLDER__ as price", "offer", |v| v["context_details"]["sale_price"] = json!("__PRICE_PLACEHOLDER__")),
        ("2x50+30=120 style sum", "confirm", |v| v["context_details"]["sale_price"] = json!(120)),
        ("offer original price off", "offer", |v| v["context_details"]["original_price"] = json!(140)),
        ("quantity beyond stock", "offer", |v| v["context_details"]["items"][0]["quantity"] = json!(99)),
        ("missing last_trade_context", "check", |v| {
            v.as_object_mut().unwrap().remove("last_trade_context");
        }),
        ("trade without details", "confirm", |v| {
            v.as_object_mut().unwrap().remove("context_details");
        }),
        ("details on small talk", "chat", |v| v["context_details"] = json!({"context_subtype": "OFFER_SELL", "items": items()})),
        ("prose instead of JSON", "bye", |v| *v = json!("Safe travels, friend.")),
    ]
}

pub fn raw(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
