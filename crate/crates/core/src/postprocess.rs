//! Placeholder price post-processing and price-accuracy verdicts.
//!
//! In the OFFER_SELL stage the model writes `__PRICE__` instead of the total;
//! the engine computes Σ quantity × unit price from the response's own items
//! and substitutes it. Near-miss tokens are reported, never repaired.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::domain::{NpcResponse, PriceField, TradeSubcontext, PRICE_PLACEHOLDER};
use crate::prompt::PostProcessMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("price total overflows u64")]
pub struct PriceOverflow;

/// Σ quantity × unit price with checked arithmetic.
pub fn compute_total(items: &[(u32, u64)]) -> Result<u64, PriceOverflow> {
    items.iter().try_fold(0u64, |acc, &(qty, price)| {
        price
            .checked_mul(u64::from(qty))
            .and_then(|line| acc.checked_add(line))
            .ok_or(PriceOverflow)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceholderOutcome {
    pub response: NpcResponse,
    /// Number of substitutions made across dialogue and price fields.
    pub replacements: usize,
    /// The placeholder appeared in a turn where it is not allowed.
    pub misuse: bool,
    pub notes: Vec<String>,
}

/// Replaces every exact `__PRICE__` in an OFFER_SELL turn with the computed
/// total. Any other turn passes through unchanged, flagged if it carries the
/// placeholder.
pub fn apply_price_placeholder(resp: &NpcResponse) -> PlaceholderOutcome {
    let mut response = resp.clone();
    let mut notes = Vec::new();

    if resp.subcontext() != Some(TradeSubcontext::OfferSell) {
        let misuse = resp.npc_dialogue.contains(PRICE_PLACEHOLDER)
            || resp.context_details.as_ref().is_some_and(|d| {
                d.original_price.as_ref().is_some_and(PriceField::is_placeholder)
                    || d.sale_price.as_ref().is_some_and(PriceField::is_placeholder)
            });
        if misuse {
            notes.push(format!("{PRICE_PLACEHOLDER} outside OFFER_SELL left untouched"));
        }
        return PlaceholderOutcome { response, replacements: 0, misuse, notes };
    }

    let details = response.context_details.as_mut().expect("OFFER_SELL implies details");
    let total = match compute_total(&details.line_items()) {
        Ok(t) => t,
        Err(e) => {
            notes.push(e.to_string());
            return PlaceholderOutcome { response: resp.clone(), replacements: 0, misuse: false, notes };
        }
    };

    let mut replacements = 0;
    for slot in [&mut details.original_price, &mut details.sale_price] {
        if slot.as_ref().is_some_and(PriceField::is_placeholder) {
            *slot = Some(PriceField::Amount(total));
            replacements += 1;
        }
    }
    let in_dialogue = response.npc_dialogue.matches(PRICE_PLACEHOLDER).count();
    if in_dialogue > 0 {
        response.npc_dialogue = response.npc_dialogue.replace(PRICE_PLACEHOLDER, &total.to_string());
        replacements += in_dialogue;
    }
    if replacements == 0 {
        notes.push("no placeholder emitted".to_string());
    }
    PlaceholderOutcome { response, replacements, misuse: false, notes }
}

static NEAR_MISS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)_{2,}PRICE[A-Za-z0-9_]*").expect("static regex"));

/// Tokens that look like a corrupted `__PRICE__` (e.g. `__PRICE_PLACEHOLDE__`).
pub fn detect_malformed_placeholder(text: &str) -> Vec<String> {
    NEAR_MISS
        .find_iter(text)
        .map(|m| m.as_str())
        .filter(|tok| *tok != PRICE_PLACEHOLDER)
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateGroup {
    OfferSell,
    /// NEGOTIATE_PRICE, CHECK_CONFIRMATION and CONFIRM_SELL together.
    Others,
}

impl StateGroup {
    pub fn of(sub: TradeSubcontext) -> Option<Self> {
        match sub {
            TradeSubcontext::OfferSell => Some(Self::OfferSell),
            TradeSubcontext::NegotiatePrice
            | TradeSubcontext::CheckConfirmation
            | TradeSubcontext::ConfirmSell => Some(Self::Others),
            TradeSubcontext::ShowInventory | TradeSubcontext::RejectTrade => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::OfferSell => "OFFER_SELL",
            Self::Others => "Others",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceVerdict {
    /// A stated total could be read.
    pub applicable: bool,
    pub stated_total: Option<u64>,
    pub computed_total: u64,
    pub accurate: bool,
    pub state_group: StateGroup,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_price: Option<u64>,
}

/// Compares the stated `sale_price` with the total of the listed items. In
/// OFFER_SELL `original_price` must match too. Returns `None` for turns
/// outside the priced states.
pub fn check_price_accuracy(resp: &NpcResponse, mode: PostProcessMode) -> Option<PriceVerdict> {
    let state_group = StateGroup::of(resp.subcontext()?)?;
    let processed;
    let resp = if mode == PostProcessMode::PricePlaceholder {
        processed = apply_price_placeholder(resp).response;
        &processed
    } else {
        resp
    };
    let details = resp.context_details.as_ref()?;
    let computed_total = compute_total(&details.line_items()).unwrap_or(u64::MAX);
    let stated_total = details.sale_price.as_ref().and_then(PriceField::amount);
    let original_price = details.original_price.as_ref().and_then(PriceField::amount);
    let mut accurate = stated_total == Some(computed_total);
    if state_group == StateGroup::OfferSell {
        accurate &= original_price == Some(computed_total);
    }
    Some(PriceVerdict {
        applicable: stated_total.is_some(),
        stated_total,
        computed_total,
        accurate,
        state_group,
        original_price,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::bind_response;
    use serde_json::{json, Value};

    fn resp(subtype: &str, items: Value, original: Value, sale: Value, dialogue: &str) -> NpcResponse {
        bind_response(&json!({
            "last_trade_context": "",
            "context_reason": "",
            "context_type": "TRADE",
            "context_details": {"context_subtype": subtype, "items": items, "original_price": original, "sale_price": sale},
            "npc_dialogue": dialogue,
        }))
        .unwrap()
    }

    fn swords_and_bag() -> Value {
        json!([
            {"item_id": "basic_iron_sword", "item_name": "Basic Iron Sword", "quantity": 2, "price": 60},
            {"item_id": "sleeping_bag", "item_name": "Adventurer's Sleeping Bag", "quantity": 1, "price": 30},
        ])
    }

    #[test]
    fn totals() {
        assert_eq!(compute_total(&[]), Ok(0));
        assert_eq!(compute_total(&[(2, 60), (1, 30)]), Ok(150));
        assert_eq!(compute_total(&[(1, 777)]), Ok(777));
        assert_eq!(compute_total(&[(2, u64::MAX)]), Err(PriceOverflow));
    }

    #[test]
    fn placeholder_replaced_in_offer() {
        let r = resp(
            "OFFER_SELL",
            swords_and_bag(),
            json!("__PRICE__"),
            json!("__PRICE__"),
            "Two iron swords and an adventurer's sleeping bag are __PRICE__ gold together.",
        );
        let out = apply_price_placeholder(&r);
        assert_eq!(out.response.npc_dialogue, "Two iron swords and an adventurer's sleeping bag are 150 gold together.");
        let d = out.response.context_details.as_ref().unwrap();
        assert_eq!(d.original_price, Some(PriceField::Amount(150)));
        assert_eq!(d.sale_price, Some(PriceField::Amount(150)));
        assert_eq!(out.replacements, 3);
        assert!(!out.misuse);
        assert_eq!(apply_price_placeholder(&out.response).response, out.response);
    }

    #[test]
    fn offer_without_placeholder_is_identity() {
        let r = resp("OFFER_SELL", swords_and_bag(), json!(150), json!(150), "150 gold.");
        let out = apply_price_placeholder(&r);
        assert_eq!(out.response, r);
        assert_eq!(out.notes, vec!["no placeholder emitted"]);
    }

    #[test]
    fn negotiate_with_placeholder_is_misuse() {
        let r = resp("NEGOTIATE_PRICE", swords_and_bag(), json!(150), json!("__PRICE__"), "Fine, __PRICE__ gold.");
        let out = apply_price_placeholder(&r);
        assert_eq!(out.response, r);
        assert!(out.misuse);
    }

    #[test]
    fn malformed_tokens() {
        assert_eq!(detect_malformed_placeholder("total __PRICE_PLACEHOLDE__ gold"), vec!["__PRICE_PLACEHOLDE__"]);
        assert_eq!(detect_malformed_placeholder("total __PRICE_PLACEHOLDER_ gold"), vec!["__PRICE_PLACEHOLDER_"]);
        assert!(detect_malformed_placeholder("total __PRICE__ gold").is_empty());
        assert!(detect_malformed_placeholder("PRICE").is_empty());
        assert_eq!(detect_malformed_placeholder("only __PRICE_ left"), vec!["__PRICE_"]);
    }

    #[test]
    fn accuracy_verdicts() {
        let items = json!([
            {"item_id": "a", "item_name": "A", "quantity": 2, "price": 50},
            {"item_id": "b", "item_name": "B", "quantity": 1, "price": 30},
        ]);
        let wrong = resp("NEGOTIATE_PRICE", items.clone(), json!(130), json!(120), "2×50 + 30 = 120 gold");
        let v = check_price_accuracy(&wrong, PostProcessMode::None).unwrap();
        assert_eq!((v.computed_total, v.stated_total, v.accurate), (130, Some(120), false));
        assert_eq!(v.state_group, StateGroup::Others);

        let right = resp("CHECK_CONFIRMATION", items.clone(), json!(130), json!(130), "130 gold");
        assert!(check_price_accuracy(&right, PostProcessMode::None).unwrap().accurate);

        let offer = resp("OFFER_SELL", items, json!("__PRICE__"), json!("__PRICE__"), "__PRICE__ gold");
        let raw = check_price_accuracy(&offer, PostProcessMode::None).unwrap();
        assert!(!raw.applicable && !raw.accurate);
        assert!(check_price_accuracy(&offer, PostProcessMode::PricePlaceholder).unwrap().accurate);
    }

    #[test]
    fn unpriced_states_have_no_verdict() {
        let r = resp("SHOW_INVENTORY", swords_and_bag(), Value::Null, Value::Null, "Look.");
        assert!(check_price_accuracy(&r, PostProcessMode::None).is_none());
    }
}
