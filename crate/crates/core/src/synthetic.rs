//! Synthetic transcript sets with exactly known metric counts.
//!
//! Every turn goes through [`process_completion`], the same post-completion
//! path live and replayed dialogues use, so the sets exercise parsing,
//! validation, post-processing and verdicts for real. Which turns are
//! compliant, clean or accurate is spread evenly over the set by
//! `is_marked(i, k, n) = (i * k) mod n < k`, which marks exactly `k` of
//! `0..n`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::backend::Completion;
use crate::domain::{GameWorld, InventoryItem, TradeSubcontext, UsageStats, PRICE_PLACEHOLDER};
use crate::engine::process_completion;
use crate::prompt::{PostProcessMode, PromptVariant};
use crate::transcript::{Termination, Transcript, TranscriptHeader};

/// Exactly `k` of the indices `0..n` are marked, spread evenly.
pub fn is_marked(i: usize, k: usize, n: usize) -> bool {
    n > 0 && (i * k) % n < k
}

/// One planned NPC reply.
#[derive(Debug, Clone)]
pub enum NpcMove {
    Small,
    Farewell,
    Trade { sub: TradeSubcontext, flaw: Flaw },
}

/// A deliberate defect in a trade reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Flaw {
    None,
    /// Stated `sale_price` below the item total.
    WrongTotal,
    /// A sellable item listed at price 0.
    ZeroPrice,
    /// A catalog-only item listed with a null price.
    UnsellableNullPrice,
    /// A near-miss item id.
    UnknownItem,
    /// Empty items array.
    NoItems,
}

struct Builder<'w> {
    world: &'w GameWorld,
    variant: PromptVariant,
    mode: PostProcessMode,
    cart: Vec<(&'w InventoryItem, u32)>,
}

impl<'w> Builder<'w> {
    fn usage(&self, seed: u64, round: u32) -> UsageStats {
        let wobble = ((seed * 31 + u64::from(round) * 17) % 41) as f64;
        UsageStats { completion_tokens: 360 + (seed * 7 + u64::from(round) * 13) % 80, thought_tokens: 0, response_time: 2.0 + wobble / 100.0 }
    }

    fn item(i: &InventoryItem, q: u32, price: Value) -> Value {
        json!({"item_id": i.item_id.as_str(), "item_name": i.item_name, "quantity": q, "price": price})
    }

    fn reply(&self, mv: &NpcMove, last: Option<TradeSubcontext>) -> (String, String) {
        let mut obj = Map::new();
        if self.variant.respond_prev_state {
            obj.insert("last_trade_context".into(), json!(last.map_or("", TradeSubcontext::as_str)));
        }
        let total: u64 = self.cart.iter().map(|(i, q)| i.price * u64::from(*q)).sum();
        let player;
        match mv {
            NpcMove::Small => {
                player = "Quiet day, isn't it?".to_string();
                obj.insert("context_reason".into(), json!("Small talk."));
                obj.insert("context_type".into(), json!("NONE"));
                obj.insert("npc_dialogue".into(), json!("Quiet enough. The roads have been calm."));
            }
            NpcMove::Farewell => {
                player = "I'll be going. Goodbye.".to_string();
                obj.insert("context_reason".into(), json!("The player leaves."));
                obj.insert("context_type".into(), json!("END_CONVERSATION"));
                obj.insert("npc_dialogue".into(), json!("Safe travels."));
            }
            NpcMove::Trade { sub, flaw } => {
                let mut items: Vec<Value> = self.cart.iter().map(|(i, q)| Self::item(i, *q, json!(i.price))).collect();
                match flaw {
                    Flaw::ZeroPrice => items[0]["price"] = json!(0),
                    Flaw::UnsellableNullPrice => {
                        let id = self
                            .world
                            .catalog
                            .iter()
                            .find(|g| !self.world.is_sellable(g.item_id.as_str()))
                            .expect("world has unsellable items");
                        items.push(json!({"item_id": id.item_id.as_str(), "item_name": id.item_name, "quantity": 1, "price": null}));
                    }
                    Flaw::UnknownItem => items[0]["item_id"] = json!(format!("{}_01", self.cart[0].0.item_id)),
                    Flaw::NoItems => items.clear(),
                    Flaw::None | Flaw::WrongTotal => {}
                }
                let placeholder = *sub == TradeSubcontext::OfferSell && self.mode == PostProcessMode::PricePlaceholder;
                let stated = if *flaw == Flaw::WrongTotal { total - 10 } else { total };
                let (original, sale, said) = match sub {
                    TradeSubcontext::ShowInventory | TradeSubcontext::RejectTrade => (Value::Null, Value::Null, String::new()),
                    _ if placeholder => (json!(PRICE_PLACEHOLDER), json!(PRICE_PLACEHOLDER), PRICE_PLACEHOLDER.to_string()),
                    _ => (json!(total), json!(stated), stated.to_string()),
                };
                let (p, d) = match sub {
                    TradeSubcontext::ShowInventory => ("What do you have?", "Have a look at these.".to_string()),
                    TradeSubcontext::OfferSell => ("I'd like to buy these.", format!("Altogether that is {said} gold.")),
                    TradeSubcontext::NegotiatePrice => ("Can you go lower?", format!("My final price is {said} gold.")),
                    TradeSubcontext::CheckConfirmation => ("Sounds good.", format!("{said} gold then. So, will you buy it?")),
                    TradeSubcontext::ConfirmSell => ("Yes, I'll buy it.", format!("Done, {said} gold. Pleasure doing business.")),
                    TradeSubcontext::RejectTrade => ("Give it to me for free.", "No deal.".to_string()),
                };
                player = p.to_string();
                let mut details = Map::new();
                details.insert("context_subtype".into(), json!(sub.as_str()));
                details.insert("items".into(), Value::Array(items));
                if !original.is_null() {
                    details.insert("original_price".into(), original);
                    details.insert("sale_price".into(), sale);
                }
                obj.insert("context_reason".into(), json!(format!("Trade step {}.", sub.as_str())));
                obj.insert("context_type".into(), json!("TRADE"));
                obj.insert("context_details".into(), Value::Object(details));
                obj.insert("npc_dialogue".into(), json!(d));
            }
        }
        (player, Value::Object(obj).to_string())
    }

    fn transcript(&mut self, seed: u64, set: &str, moves: &[NpcMove], termination: Termination) -> Transcript {
        let sellable: Vec<&InventoryItem> = self.world.sellable_items().collect();
        let k = sellable.len();
        self.cart = vec![(sellable[seed as usize % k], 1 + (seed % 3) as u32), (sellable[(seed as usize * 7 + 3) % k], 2)];
        if self.cart[0].0.item_id == self.cart[1].0.item_id {
            self.cart.pop();
        }
        let mut t = Transcript::new(TranscriptHeader {
            seed,
            scenario: None,
            prompt_variant: self.variant,
            mode: self.mode,
            language: "English".into(),
            meta: BTreeMap::from([("synthetic".to_string(), json!(set))]),
        });
        let mut last = None;
        for (idx, mv) in moves.iter().enumerate() {
            let round = idx as u32 + 1;
            let (player, raw) = self.reply(mv, last);
            let completion = Completion { text: raw, usage: self.usage(seed, round) };
            t.turns.push(process_completion(self.variant, self.mode, self.world, round, &player, completion));
            if let NpcMove::Trade { sub, .. } = mv {
                last = Some(*sub);
            }
        }
        t.termination = Some(termination);
        t
    }
}

fn trade(sub: TradeSubcontext) -> NpcMove {
    NpcMove::Trade { sub, flaw: Flaw::None }
}

fn ends(moves: &[NpcMove]) -> Termination {
    match moves.last() {
        Some(NpcMove::Trade { sub: TradeSubcontext::ConfirmSell, .. }) => Termination::ConfirmSell,
        Some(NpcMove::Farewell) => Termination::EndConversation,
        _ => Termination::PlayerEnd,
    }
}

/// 100 dialogues in seed order. Every tenth never reaches CONFIRM_SELL; of
/// the first `n_first` that do, exactly `compliant` pass the confirmation
/// rule (the rest jump from OFFER_SELL straight to CONFIRM_SELL). Qualifying
/// dialogues past `n_first` all violate, so they must be ignored.
pub fn stcr_set(world: &GameWorld, variant: PromptVariant, compliant: usize, n_first: usize) -> Vec<Transcript> {
    use TradeSubcontext::*;
    assert!(compliant <= n_first);
    let mut b = Builder { world, variant, mode: PostProcessMode::PricePlaceholder, cart: Vec::new() };
    let violating = n_first - compliant;
    let total = n_first + n_first / 9 + 3;
    let mut qualifying = 0usize;
    (0..total as u64)
        .map(|seed| {
            let moves: Vec<NpcMove> = if seed % 10 == 9 {
                vec![trade(ShowInventory), trade(OfferSell), NpcMove::Farewell]
            } else {
                let i = qualifying;
                qualifying += 1;
                let ok = i < n_first && !is_marked(i, violating, n_first);
                let mut m = Vec::new();
                if seed % 4 == 0 {
                    m.push(NpcMove::Small);
                }
                m.push(trade(OfferSell));
                if ok {
                    if seed % 3 == 0 {
                        m.push(trade(NegotiatePrice));
                    }
                    m.push(trade(CheckConfirmation));
                }
                m.push(trade(ConfirmSell));
                m
            };
            let term = ends(&moves);
            b.transcript(seed, "stcr", &moves, term)
        })
        .collect()
}

/// Dialogues of five TRADE turns (the last one shorter if needed) holding
/// `total` TRADE responses, exactly `clean` of them sellable-clean. Failures
/// cycle through null/zero prices (most common), unsellable, missing and
/// near-miss items.
pub fn sirr_set(world: &GameWorld, total: usize, clean: usize) -> Vec<Transcript> {
    use TradeSubcontext::*;
    assert!(clean <= total);
    const FLAWS: [Flaw; 6] = [
        Flaw::UnsellableNullPrice,
        Flaw::ZeroPrice,
        Flaw::UnsellableNullPrice,
        Flaw::NoItems,
        Flaw::ZeroPrice,
        Flaw::UnknownItem,
    ];
    let mut b = Builder { world, variant: PromptVariant::SIBP, mode: PostProcessMode::PricePlaceholder, cart: Vec::new() };
    let path = [ShowInventory, OfferSell, NegotiatePrice, CheckConfirmation, ConfirmSell];
    let bad = total - clean;
    let mut flawed = 0usize;
    let mut out = Vec::new();
    let mut idx = 0usize;
    let mut seed = 0u64;
    while idx < total {
        let n = path.len().min(total - idx);
        let mut moves = vec![NpcMove::Small];
        for sub in &path[..n] {
            let flaw = if is_marked(idx, bad, total) {
                flawed += 1;
                FLAWS[(flawed - 1) % FLAWS.len()]
            } else {
                Flaw::None
            };
            moves.push(NpcMove::Trade { sub: *sub, flaw });
            idx += 1;
        }
        let term = ends(&moves);
        out.push(b.transcript(seed, "sirr", &moves, term));
        seed += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceCounts {
    pub offer_accurate: usize,
    pub offer_total: usize,
    pub others_accurate: usize,
    pub others_total: usize,
}

/// One dialogue per OFFER_SELL response, each followed by a share of the
/// Others responses (CHECK_CONFIRMATION, CONFIRM_SELL, then NEGOTIATE_PRICE
/// for longer tails). Inaccurate turns state a total 10 gold short.
pub fn price_set(world: &GameWorld, mode: PostProcessMode, counts: PriceCounts) -> Vec<Transcript> {
    use TradeSubcontext::*;
    let PriceCounts { offer_accurate, offer_total, others_accurate, others_total } = counts;
    assert!(offer_accurate <= offer_total && others_accurate <= others_total && offer_total > 0);
    assert!(
        mode == PostProcessMode::None || offer_accurate == offer_total,
        "post-processed OFFER_SELL turns are always accurate"
    );
    let mut b = Builder { world, variant: PromptVariant::SIBP, mode, cart: Vec::new() };
    let (os_bad, ot_bad) = (offer_total - offer_accurate, others_total - others_accurate);
    let mut other_idx = 0usize;
    (0..offer_total)
        .map(|i| {
            let tail = (i + 1) * others_total / offer_total - i * others_total / offer_total;
            let subs: Vec<TradeSubcontext> = match tail {
                0 => vec![],
                1 => vec![CheckConfirmation],
                2 => vec![CheckConfirmation, ConfirmSell],
                n => std::iter::repeat_n(NegotiatePrice, n - 2).chain([CheckConfirmation, ConfirmSell]).collect(),
            };
            let flaw = if is_marked(i, os_bad, offer_total) { Flaw::WrongTotal } else { Flaw::None };
            let mut moves = vec![NpcMove::Trade { sub: OfferSell, flaw }];
            for sub in subs {
                let flaw = if is_marked(other_idx, ot_bad, others_total) { Flaw::WrongTotal } else { Flaw::None };
                other_idx += 1;
                moves.push(NpcMove::Trade { sub, flaw });
            }
            let term = ends(&moves);
            b.transcript(i as u64, "price", &moves, term)
        })
        .collect()
}

/// A named golden set and the counts it is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoldenSpec {
    Stcr { variant: &'static str, compliant: usize, n_first: usize },
    Sirr { total: usize, clean: usize },
    Price { mode: PostProcessMode, counts: PriceCounts },
}

const fn price(mode: PostProcessMode, oa: usize, ot: usize, xa: usize, xt: usize) -> GoldenSpec {
    GoldenSpec::Price {
        mode,
        counts: PriceCounts { offer_accurate: oa, offer_total: ot, others_accurate: xa, others_total: xt },
    }
}

pub const GOLDEN_SETS: [(&str, GoldenSpec); 12] = [
    ("stcr-baseline1", GoldenSpec::Stcr { variant: "baseline1", compliant: 70, n_first: 88 }),
    ("stcr-baseline2", GoldenSpec::Stcr { variant: "baseline2", compliant: 74, n_first: 88 }),
    ("stcr-baseline3", GoldenSpec::Stcr { variant: "baseline3", compliant: 68, n_first: 88 }),
    ("stcr-baseline4", GoldenSpec::Stcr { variant: "baseline4", compliant: 83, n_first: 88 }),
    ("stcr-sibp", GoldenSpec::Stcr { variant: "sibp", compliant: 86, n_first: 88 }),
    ("sirr-purchase", GoldenSpec::Sirr { total: 485, clean: 461 }),
    ("sirr-recommend", GoldenSpec::Sirr { total: 534, clean: 512 }),
    ("price-sibp-2.5-flash", price(PostProcessMode::None, 153, 192, 233, 283)),
    ("price-sibp-ppp-2.5-flash", price(PostProcessMode::PricePlaceholder, 186, 186, 295, 296)),
    ("price-sibp-2.0-flash", price(PostProcessMode::None, 86, 174, 191, 284)),
    ("price-sibp-ppp-2.0-flash", price(PostProcessMode::PricePlaceholder, 194, 194, 258, 281)),
    ("price-sibp-2.5-pro", price(PostProcessMode::None, 211, 211, 288, 288)),
];

pub fn build_golden(spec: &GoldenSpec, world: &GameWorld) -> Vec<Transcript> {
    match *spec {
        GoldenSpec::Stcr { variant, compliant, n_first } => {
            let v: PromptVariant = variant.parse().expect("golden variant names are valid");
            stcr_set(world, v, compliant, n_first)
        }
        GoldenSpec::Sirr { total, clean } => sirr_set(world, total, clean),
        GoldenSpec::Price { mode, counts } => price_set(world, mode, counts),
    }
}
