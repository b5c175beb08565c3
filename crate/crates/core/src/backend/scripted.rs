//! Offline stand-ins for both sides of a dialogue.
//!
//! [`ScriptedMerchant`] reads the rendered merchant prompt (inventory,
//! history, flags) and answers with a protocol-following JSON response.
//! [`ScriptedPlayer`] reads the player prompt and walks a purchase to a
//! planned number of rounds, padding with small talk or haggling.

use serde_json::{json, Map, Value};

use super::{BackendError, Completion, CompletionBackend, CompletionParams};
use crate::domain::{GameItem, GameWorld, InventoryItem, TradeSubcontext, UsageStats, PRICE_PLACEHOLDER};
use crate::simulator::{generate_scenario, item_phrase, join_list, plural, ScenarioKind, ScenarioRng};

const OFFER_MARK: &str = "I can offer you: ";
const TOTAL_MARK: &str = "Together that comes to ";
const HAGGLE_MARK: &str = "I can't go lower than ";
const CONFIRM_MARK: &str = "So, will you buy it?";
const SOLD_MARK: &str = "Pleasure doing business";
const FAREWELL_MARK: &str = "Safe travels";

fn section<'a>(prompt: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    // The tag names also appear in prose, so anchor on the closing tag.
    let end = prompt.find(&close)?;
    let start = prompt[..end].rfind(&open)? + open.len();
    Some(&prompt[start..end])
}

fn json_array<T: serde::de::DeserializeOwned>(text: &str) -> Vec<T> {
    match (text.find('['), text.rfind(']')) {
        (Some(a), Some(b)) if a < b => serde_json::from_str(&text[a..=b]).unwrap_or_default(),
        _ => Vec::new(),
    }
}

/// Synthetic but deterministic usage figures.
fn usage_for(text: &str, base_seconds: f64) -> UsageStats {
    UsageStats {
        completion_tokens: (text.len() as u64).div_ceil(4),
        thought_tokens: 0,
        response_time: base_seconds + (text.len() % 97) as f64 / 100.0,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Line {
    Player(String),
    Npc { tag: Option<String>, text: String },
}

fn history_lines(section: &str) -> Vec<Line> {
    section
        .lines()
        .filter_map(|l| {
            if let Some(p) = l.strip_prefix("Player: ") {
                Some(Line::Player(p.to_string()))
            } else if let Some(n) = l.strip_prefix("NPC: ") {
                let (tag, text) = match n.strip_prefix('[').and_then(|r| r.split_once("] ")) {
                    Some((tag, text)) => (Some(tag.to_string()), text.to_string()),
                    None => (None, n.to_string()),
                };
                Some(Line::Npc { tag, text })
            } else {
                None
            }
        })
        .collect()
}

/// Trade state of an NPC line: the history tag if present, else the
/// merchant's own phrasing.
fn npc_line_state(tag: Option<&str>, text: &str) -> Option<TradeSubcontext> {
    if let Some(tag) = tag {
        return tag.strip_prefix("TRADE/").and_then(|s| s.parse().ok());
    }
    [
        (CONFIRM_MARK, TradeSubcontext::CheckConfirmation),
        (SOLD_MARK, TradeSubcontext::ConfirmSell),
        (HAGGLE_MARK, TradeSubcontext::NegotiatePrice),
        (TOTAL_MARK, TradeSubcontext::OfferSell),
        (OFFER_MARK, TradeSubcontext::ShowInventory),
    ]
    .into_iter()
    .find(|(mark, _)| text.contains(mark))
    .map(|(_, s)| s)
}

fn last_trade_state(lines: &[Line]) -> Option<TradeSubcontext> {
    lines.iter().rev().find_map(|l| match l {
        Line::Npc { tag, text } => npc_line_state(tag.as_deref(), text),
        Line::Player(_) => None,
    })
}

/// Items named in `text`, longest names first, each with the number written
/// right before it (1 if none).
fn mentioned_items<'a>(text: &str, catalog: &'a [GameItem]) -> Vec<(&'a GameItem, u32)> {
    let mut hay = format!(" {} ", text.to_lowercase().replace(['.', ',', '!', '?'], " "));
    let mut names: Vec<(String, &GameItem)> = catalog
        .iter()
        .flat_map(|g| [(plural(&g.item_name), g), (g.item_name.to_lowercase(), g)])
        .collect();
    names.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    let mut found: Vec<(usize, &GameItem, u32)> = Vec::new();
    for (name, item) in names {
        let needle = format!(" {name} ");
        while let Some(pos) = hay.find(&needle) {
            let before = hay[..pos].trim_end();
            let digits: String = before.chars().rev().take_while(char::is_ascii_digit).collect();
            let qty = digits.chars().rev().collect::<String>().parse().unwrap_or(1);
            if !found.iter().any(|(_, g, _)| g.item_id == item.item_id) {
                found.push((pos, item, qty));
            }
            hay.replace_range(pos + 1..pos + needle.len() - 1, &" ".repeat(needle.len() - 2));
        }
    }
    found.sort_by_key(|(pos, _, _)| *pos);
    found.into_iter().map(|(_, g, q)| (g, q)).collect()
}

fn contains_any(text: &str, words: &[&str]) -> bool {
    let lower = text.to_lowercase();
    words.iter().any(|w| lower.contains(w))
}

const GOODBYE: &[&str] = &["goodbye", "be going", "farewell"];
const HAGGLE: &[&str] = &["lower", "discount", "cheaper", "too expensive", "steep"];
const AGREE: &[&str] = &["yes", "deal", "sounds good", "i'll take them", "i'll buy", "agreed"];
const BROWSE: &[&str] = &["recommend", "supplies", "for sale", "what do you have"];

/// Rule-following merchant that answers from the rendered prompt alone.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedMerchant;

struct MerchantView {
    name: String,
    catalog: Vec<GameItem>,
    inventory: Vec<InventoryItem>,
    lines: Vec<Line>,
    placeholder: bool,
    echo_state: bool,
}

impl MerchantView {
    fn parse(prompt: &str) -> Result<Self, BackendError> {
        let bad = |what: &str| BackendError::Provider(format!("merchant prompt lacks {what}"));
        let name = prompt
            .split_once("You are NPC '")
            .and_then(|(_, rest)| rest.split_once('\''))
            .map(|(n, _)| n.to_string())
            .ok_or_else(|| bad("a character name"))?;
        Ok(Self {
            name,
            catalog: json_array(section(prompt, "GAME_ITEMS_LIST").ok_or_else(|| bad("GAME_ITEMS_LIST"))?),
            inventory: json_array(section(prompt, "CHARACTER_INVENTORY").ok_or_else(|| bad("CHARACTER_INVENTORY"))?),
            lines: history_lines(section(prompt, "DIALOGUE_HISTORY").ok_or_else(|| bad("DIALOGUE_HISTORY"))?),
            placeholder: prompt.contains(PRICE_PLACEHOLDER),
            echo_state: prompt.contains("0. last_trade_context"),
        })
    }

    fn sellable(&self) -> Vec<&InventoryItem> {
        self.inventory.iter().filter(|i| i.is_sellable()).collect()
    }

    fn stock(&self, id: &str) -> Option<&InventoryItem> {
        self.inventory.iter().find(|i| i.item_id.as_str() == id && i.is_sellable())
    }

    /// The cart from the latest player line naming sellable items.
    fn cart(&self) -> Vec<(&InventoryItem, u32)> {
        for line in self.lines.iter().rev() {
            if let Line::Player(text) = line {
                let cart: Vec<(&InventoryItem, u32)> = mentioned_items(text, &self.catalog)
                    .into_iter()
                    .filter_map(|(g, q)| self.stock(g.item_id.as_str()).map(|s| (s, q.min(s.quantity))))
                    .collect();
                if !cart.is_empty() {
                    return cart;
                }
            }
        }
        Vec::new()
    }

    fn suggestions(&self, utterance: &str) -> Vec<&InventoryItem> {
        let stock = self.sellable();
        if stock.is_empty() {
            return stock;
        }
        let start = utterance.bytes().map(usize::from).sum::<usize>() % stock.len();
        (0..stock.len().min(3)).map(|i| stock[(start + i) % stock.len()]).collect()
    }
}

fn item_json(item: &InventoryItem, quantity: u32) -> Value {
    json!({
        "item_id": item.item_id.as_str(),
        "item_name": item.item_name,
        "quantity": quantity,
        "price": item.price,
    })
}

fn cart_total(cart: &[(&InventoryItem, u32)]) -> u64 {
    cart.iter().map(|(i, q)| i.price * u64::from(*q)).sum()
}

impl ScriptedMerchant {
    fn respond(&self, prompt: &str) -> Result<String, BackendError> {
        let view = MerchantView::parse(prompt)?;
        let utterance = match view.lines.last() {
            Some(Line::Player(p)) => p.clone(),
            _ => return Err(BackendError::Provider("merchant prompt has no pending player line".into())),
        };
        let last = last_trade_state(&view.lines[..view.lines.len() - 1]);
        let mentioned = mentioned_items(&utterance, &view.catalog);

        let trade = |sub: TradeSubcontext, items: Vec<Value>, original: Value, sale: Value, reason: &str, dialogue: String| {
            let mut details = Map::new();
            details.insert("context_subtype".into(), json!(sub.as_str()));
            details.insert("items".into(), Value::Array(items));
            if !original.is_null() {
                details.insert("original_price".into(), original);
                details.insert("sale_price".into(), sale);
            }
            ("TRADE", Some(Value::Object(details)), reason.to_string(), dialogue)
        };

        let (context_type, details, reason, dialogue) = if contains_any(&utterance, GOODBYE) {
            ("END_CONVERSATION", None, "The player is leaving.".to_string(), format!("{FAREWELL_MARK}, friend. Come back any time."))
        } else if !mentioned.is_empty() {
            let cart = view.cart();
            let cart: Vec<_> = cart
                .into_iter()
                .filter(|(i, _)| mentioned.iter().any(|(g, _)| g.item_id == i.item_id))
                .collect();
            if cart.is_empty() {
                let missing: Vec<String> = mentioned.iter().map(|(g, _)| g.item_name.to_lowercase()).collect();
                let offer = view.suggestions(&utterance);
                let names: Vec<String> = offer.iter().map(|i| i.item_name.clone()).collect();
                trade(
                    TradeSubcontext::ShowInventory,
                    offer.iter().map(|i| item_json(i, 1)).collect(),
                    Value::Null,
                    Value::Null,
                    "Requested items are not in stock; showing what is available.",
                    format!("Sorry, I don't have {} for sale. {OFFER_MARK}{}.", join_list(&missing), join_list(&names)),
                )
            } else {
                let total = cart_total(&cart);
                let lines: Vec<String> = cart
                    .iter()
                    .map(|(i, q)| format!("{} at {} gold each", item_phrase(&i.item_name, *q), i.price))
                    .collect();
                let unavailable: Vec<String> = mentioned
                    .iter()
                    .filter(|(g, _)| !cart.iter().any(|(i, _)| i.item_id == g.item_id))
                    .map(|(g, _)| g.item_name.to_lowercase())
                    .collect();
                let mut text = String::new();
                if !unavailable.is_empty() {
                    text.push_str(&format!("I don't sell {}. ", join_list(&unavailable)));
                }
                let shown = if view.placeholder { PRICE_PLACEHOLDER.to_string() } else { total.to_string() };
                text.push_str(&format!("I have {}. {TOTAL_MARK}{shown} gold.", join_list(&lines)));
                let price = if view.placeholder { json!(PRICE_PLACEHOLDER) } else { json!(total) };
                trade(
                    TradeSubcontext::OfferSell,
                    cart.iter().map(|(i, q)| item_json(i, *q)).collect(),
                    price.clone(),
                    price,
                    "The player wants to buy items from the inventory.",
                    text,
                )
            }
        } else {
            let cart = view.cart();
            let total = cart_total(&cart);
            let items: Vec<Value> = cart.iter().map(|(i, q)| item_json(i, *q)).collect();
            let in_trade = !cart.is_empty()
                && matches!(
                    last,
                    Some(TradeSubcontext::OfferSell | TradeSubcontext::NegotiatePrice | TradeSubcontext::CheckConfirmation)
                );
            if in_trade && contains_any(&utterance, HAGGLE) {
                trade(
                    TradeSubcontext::NegotiatePrice,
                    items,
                    json!(total),
                    json!(total),
                    "The player asks for a lower price.",
                    format!("These are honest prices. {HAGGLE_MARK}{total} gold."),
                )
            } else if in_trade && contains_any(&utterance, AGREE) {
                if last == Some(TradeSubcontext::CheckConfirmation) {
                    trade(
                        TradeSubcontext::ConfirmSell,
                        items,
                        json!(total),
                        json!(total),
                        "The player confirmed the purchase.",
                        format!("{SOLD_MARK}. That's {total} gold, and the goods are yours."),
                    )
                } else {
                    trade(
                        TradeSubcontext::CheckConfirmation,
                        items,
                        json!(total),
                        json!(total),
                        "The player accepted the offer.",
                        format!("That will be {total} gold. {CONFIRM_MARK}"),
                    )
                }
            } else if contains_any(&utterance, BROWSE) {
                let offer = view.suggestions(&utterance);
                let names: Vec<String> = offer.iter().map(|i| i.item_name.clone()).collect();
                trade(
                    TradeSubcontext::ShowInventory,
                    offer.iter().map(|i| item_json(i, 1)).collect(),
                    Value::Null,
                    Value::Null,
                    "The player asks what is for sale.",
                    format!("Take a look. {OFFER_MARK}{}.", join_list(&names)),
                )
            } else {
                (
                    "NONE",
                    None,
                    "Small talk.".to_string(),
                    format!("Ha, {} has seen quieter days. What else can I do for you?", view.name),
                )
            }
        };

        let mut obj = Map::new();
        if view.echo_state {
            obj.insert("last_trade_context".into(), json!(last.map_or("", TradeSubcontext::as_str)));
        }
        obj.insert("context_reason".into(), json!(reason));
        obj.insert("context_type".into(), json!(context_type));
        if let Some(d) = details {
            obj.insert("context_details".into(), d);
        }
        obj.insert("npc_dialogue".into(), json!(dialogue));
        Ok(Value::Object(obj).to_string())
    }
}

impl CompletionBackend for ScriptedMerchant {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<Completion, BackendError> {
        let text = self.respond(prompt)?;
        Ok(Completion { usage: usage_for(&text, 1.6), text })
    }
}

/// How long a scripted player keeps the dialogue going.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlayerPlan {
    pub target_rounds: u32,
    /// Leave without buying once the target is reached.
    pub leave: bool,
}

const SMALL_TALK: [&str; 3] = [
    "How's business been lately?",
    "Have you heard any news from the capital?",
    "This is a fine shop you have.",
];
const HAGGLE_LINES: [&str; 2] = [
    "That's a bit steep. Could you lower the price?",
    "Come on, give me a discount.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedPlayer {
    pub plan: PlayerPlan,
}

impl ScriptedPlayer {
    pub fn new(plan: PlayerPlan) -> Self {
        Self { plan }
    }

    fn respond(&self, prompt: &str) -> Result<String, BackendError> {
        let history = section(prompt, "DIALOGUE_HISTORY")
            .ok_or_else(|| BackendError::Provider("player prompt lacks DIALOGUE_HISTORY".into()))?;
        let lines = history_lines(history);
        let closed = lines.iter().any(|l| {
            matches!(l, Line::Npc { tag: Some(t), .. } if t == "TRADE/CONFIRM_SELL" || t == "END_CONVERSATION")
        });
        if closed {
            return Ok("End".into());
        }
        let rounds = lines.iter().filter(|l| matches!(l, Line::Npc { .. })).count() as u32;
        let state = last_trade_state(&lines);
        let offer = latest_offer(&lines);
        let talk = SMALL_TALK[rounds as usize % SMALL_TALK.len()];

        if self.plan.leave {
            return Ok(if rounds + 1 >= self.plan.target_rounds {
                "Thanks, but I think I'll be going now. Goodbye.".into()
            } else {
                talk.into()
            });
        }

        use TradeSubcontext::*;
        let need = match state {
            Some(CheckConfirmation) => 1,
            Some(OfferSell | NegotiatePrice) => 2,
            _ if offer.is_some() => 3,
            _ => 4,
        };
        let slack = self.plan.target_rounds.saturating_sub(rounds + need);
        Ok(match state {
            Some(OfferSell | NegotiatePrice) if slack > 0 => HAGGLE_LINES[rounds as usize % 2].into(),
            Some(OfferSell | NegotiatePrice) => "Sounds good, I'll take them.".into(),
            Some(CheckConfirmation) => "Yes, I'll buy it.".into(),
            _ if slack > 0 => talk.into(),
            _ => match offer {
                Some(name) => format!("Then I'll take {}.", item_phrase(&name, 2)),
                None => "What do you have for sale?".into(),
            },
        })
    }
}

/// First item of the most recent "I can offer you: ..." list.
fn latest_offer(lines: &[Line]) -> Option<String> {
    lines.iter().rev().find_map(|l| match l {
        Line::Npc { text, .. } => {
            let list = text.split_once(OFFER_MARK)?.1;
            let list = list.trim_end_matches('.');
            let first = list.split(", ").next()?.split(" and ").next()?.trim();
            (!first.is_empty()).then(|| first.to_string())
        }
        Line::Player(_) => None,
    })
}

impl CompletionBackend for ScriptedPlayer {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<Completion, BackendError> {
        let text = self.respond(prompt)?;
        Ok(Completion { usage: usage_for(&text, 0.4), text })
    }
}

/// Round-count histograms the scripted players are planned against, as
/// `(rounds, dialogues)` over 100 seeds. Purchase: mean 5.17, SD 1.01,
/// range 3-8. Recommendation: mean 6.05, SD 1.61, range 2-12.
pub const PURCHASE_ROUNDS: [(u32, usize); 6] = [(3, 4), (4, 19), (5, 44), (6, 24), (7, 7), (8, 2)];
pub const RECOMMEND_ROUNDS: [(u32, usize); 11] = [
    (2, 1),
    (3, 1),
    (4, 11),
    (5, 26),
    (6, 30),
    (7, 15),
    (8, 9),
    (9, 4),
    (10, 1),
    (11, 1),
    (12, 1),
];
const PLAN_SHUFFLE_SEED: u64 = 0x5eed_7ab1e;

/// Fewest rounds a non-leaving dialogue can take with the scripted merchant.
pub fn minimum_rounds(seed: u64, kind: ScenarioKind, world: &GameWorld) -> u32 {
    match kind {
        ScenarioKind::Purchase => {
            let spec = generate_scenario(seed, kind, world);
            let any_sellable = spec.is_ok_and(|s| s.requested_items.iter().any(|r| world.is_sellable(&r.item_id)));
            if any_sellable {
                3
            } else {
                4
            }
        }
        ScenarioKind::Recommendation => 4,
    }
}

/// Plans for seeds `0..100`: the histogram's targets, shuffled with a fixed
/// seed, then swapped so no seed gets a target below its minimum.
/// Recommendation targets under 4 become leave-without-buying plans.
pub fn plan_table(kind: ScenarioKind, world: &GameWorld) -> Vec<PlayerPlan> {
    let hist: &[(u32, usize)] = match kind {
        ScenarioKind::Purchase => &PURCHASE_ROUNDS,
        ScenarioKind::Recommendation => &RECOMMEND_ROUNDS,
    };
    let mut targets: Vec<u32> = hist.iter().flat_map(|&(r, n)| std::iter::repeat_n(r, n)).collect();
    let mut rng = ScenarioRng::new(PLAN_SHUFFLE_SEED);
    for i in (1..targets.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        targets.swap(i, j);
    }
    let leave_below = match kind {
        ScenarioKind::Purchase => 0,
        ScenarioKind::Recommendation => 4,
    };
    let mins: Vec<u32> = (0..targets.len() as u64).map(|s| minimum_rounds(s, kind, world)).collect();
    for i in 0..targets.len() {
        if targets[i] >= mins[i] || targets[i] < leave_below {
            continue;
        }
        let swap = (0..targets.len()).find(|&j| {
            j != i && targets[j] >= mins[i] && targets[j] >= leave_below && targets[i] >= mins[j]
        });
        if let Some(j) = swap {
            targets.swap(i, j);
        }
    }
    targets
        .into_iter()
        .map(|t| PlayerPlan { target_rounds: t, leave: t < leave_below })
        .collect()
}

/// The plan for one seed: the table entry for seeds under 100, otherwise
/// a short purchase a little above the minimum.
pub fn plan_for_seed(seed: u64, kind: ScenarioKind, world: &GameWorld, table: &[PlayerPlan]) -> PlayerPlan {
    match table.get(seed as usize) {
        Some(p) => *p,
        None => PlayerPlan { target_rounds: minimum_rounds(seed, kind, world) + (seed % 3) as u32, leave: false },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> Vec<GameItem> {
        let g = |id: &str, name: &str| GameItem { item_id: crate::domain::ItemId::new(id).unwrap(), item_name: name.into() };
        vec![
            g("basic_iron_sword", "Basic Iron Sword"),
            g("torch", "Torch"),
            g("arrow_bundle", "Bundle of Arrows"),
            g("leather_boots", "Leather Boots"),
            g("iron_dagger", "Iron Dagger"),
        ]
    }

    #[test]
    fn item_mentions_with_quantities() {
        let cat = catalog();
        let found = mentioned_items("I'd like to purchase 3 basic iron swords, 1 torch and 2 bundles of arrows.", &cat);
        let ids: Vec<(&str, u32)> = found.iter().map(|(g, q)| (g.item_id.as_str(), *q)).collect();
        assert_eq!(ids, vec![("basic_iron_sword", 3), ("torch", 1), ("arrow_bundle", 2)]);
        assert!(mentioned_items("How's business been lately?", &cat).is_empty());
        assert_eq!(mentioned_items("5 leather boots", &cat)[0].1, 5);
        assert_eq!(mentioned_items("an iron dagger", &cat)[0].1, 1);
    }

    #[test]
    fn history_parsing() {
        let lines = history_lines("Player: hi\nNPC: [TRADE/OFFER_SELL] I have x. Together that comes to 5 gold.\nPlayer: ok");
        assert_eq!(lines.len(), 3);
        assert_eq!(last_trade_state(&lines), Some(TradeSubcontext::OfferSell));
        let untagged = history_lines("Player: hi\nNPC: That will be 5 gold. So, will you buy it?");
        assert_eq!(last_trade_state(&untagged), Some(TradeSubcontext::CheckConfirmation));
    }

    #[test]
    fn offer_list_pick() {
        let lines = history_lines("NPC: [TRADE/SHOW_INVENTORY] Take a look. I can offer you: Oil Lantern, Torch and Bundle of Arrows.");
        assert_eq!(latest_offer(&lines).as_deref(), Some("Oil Lantern"));
    }

    #[test]
    fn histograms_hit_targets() {
        for (hist, mean_x100) in [(&PURCHASE_ROUNDS[..], 517), (&RECOMMEND_ROUNDS[..], 605)] {
            let n: usize = hist.iter().map(|(_, c)| c).sum();
            let total: u32 = hist.iter().map(|(r, c)| r * *c as u32).sum();
            assert_eq!(n, 100);
            assert_eq!(total, mean_x100);
        }
    }
}
