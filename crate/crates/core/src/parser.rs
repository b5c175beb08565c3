//! Turning raw model text into an [`NpcResponse`] and checking it against
//! the world: state vocabulary, item referencing, placeholder use.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{
    parse_subcontext, ContextType, GameWorld, NpcResponse, PriceField, TradeDetails, TradeItem,
    TradeSubcontext, PRICE_PLACEHOLDER,
};
use crate::postprocess::detect_malformed_placeholder;
use crate::prompt::PromptVariant;

const EXCERPT_CHARS: usize = 160;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{reason}")]
pub struct ParseError {
    pub reason: String,
    pub raw_excerpt: String,
    /// Mandatory fields that were absent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_fields: Vec<String>,
    /// Set when `context_type` held a name outside the vocabulary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_name: Option<String>,
}

impl ParseError {
    fn new(reason: impl Into<String>) -> Self {
        Self {
            reason: reason.into(),
            raw_excerpt: String::new(),
            missing_fields: Vec::new(),
            state_name: None,
        }
    }

    fn with_excerpt(mut self, raw: &str) -> Self {
        self.raw_excerpt = raw.chars().take(EXCERPT_CHARS).collect();
        self
    }
}

/// Finds the first well-formed JSON object in `raw`. The flag reports whether
/// anything other than whitespace surrounded it (code fences, prose).
pub fn extract_json_object(raw: &str) -> Option<(Value, bool)> {
    let trimmed = raw.trim();
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(value @ Value::Object(_))) = stream.next() {
            let end = start + stream.byte_offset();
            let lenient = raw[start..end].trim() != trimmed;
            return Some((value, lenient));
        }
    }
    None
}

/// Parses a raw completion into the response contract.
pub fn parse_npc_response(raw: &str) -> Result<NpcResponse, ParseError> {
    parse_with_notes(raw).map(|(resp, _)| resp)
}

/// Like [`parse_npc_response`], also returning notes about lenient handling
/// and extra fields.
pub fn parse_with_notes(raw: &str) -> Result<(NpcResponse, Vec<String>), ParseError> {
    let (value, lenient) = extract_json_object(raw)
        .ok_or_else(|| ParseError::new("no JSON object found").with_excerpt(raw))?;
    let resp = bind_response(&value).map_err(|e| e.with_excerpt(raw))?;
    let mut notes = Vec::new();
    if lenient {
        notes.push("non-JSON text around the response object was ignored".to_string());
    }
    for key in resp.extra_fields.keys() {
        notes.push(format!("extra field `{key}` preserved"));
    }
    Ok((resp, notes))
}

fn take_string(
    obj: &serde_json::Map<String, Value>,
    key: &str,
    missing: &mut Vec<String>,
) -> Result<String, ParseError> {
    match obj.get(key) {
        None | Some(Value::Null) => {
            missing.push(key.to_string());
            Ok(String::new())
        }
        Some(Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(ParseError::new(format!("`{key}` must be a string, got {other}"))),
    }
}

const TOP_LEVEL: [&str; 5] = [
    "last_trade_context",
    "context_reason",
    "context_type",
    "context_details",
    "npc_dialogue",
];
const DETAIL_FIELDS: [&str; 4] = ["context_subtype", "items", "original_price", "sale_price"];

/// Binds an already-decoded JSON value to the response contract.
pub fn bind_response(value: &Value) -> Result<NpcResponse, ParseError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ParseError::new("response is not a JSON object"))?;
    let mut missing = Vec::new();

    let context_reason = take_string(obj, "context_reason", &mut missing)?;
    let npc_dialogue = take_string(obj, "npc_dialogue", &mut missing)?;
    let raw_type = take_string(obj, "context_type", &mut missing)?;
    if !missing.is_empty() {
        let mut err = ParseError::new(format!("missing {}", missing.join(", ")));
        err.missing_fields = missing;
        return Err(err);
    }
    let context_type: ContextType = raw_type.parse().map_err(|_| {
        let mut err = ParseError::new(format!("unknown context_type `{raw_type}`"));
        err.state_name = Some(raw_type.clone());
        err
    })?;

    let last_trade_context = match obj.get("last_trade_context") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(other) => {
            return Err(ParseError::new(format!(
                "`last_trade_context` must be a string, got {other}"
            )))
        }
    };

    let mut extra_fields: BTreeMap<String, Value> = obj
        .iter()
        .filter(|(k, _)| !TOP_LEVEL.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    let raw_details = obj.get("context_details").filter(|v| !v.is_null());
    let context_details = match context_type {
        ContextType::Trade => {
            let details = raw_details.ok_or_else(|| {
                let mut err = ParseError::new("missing context_details");
                err.missing_fields = vec!["context_details".into()];
                err
            })?;
            Some(bind_details(details, &mut extra_fields)?)
        }
        _ => {
            // Fields are prohibited outside TRADE; keep whatever was sent so
            // validation can flag it.
            if let Some(d) = raw_details {
                let empty = d.as_object().is_some_and(|m| m.is_empty());
                if !empty {
                    extra_fields.insert("context_details".into(), d.clone());
                }
            }
            None
        }
    };

    Ok(NpcResponse {
        last_trade_context,
        context_reason,
        context_type,
        context_details,
        npc_dialogue,
        extra_fields,
    })
}

fn bind_details(
    value: &Value,
    extra: &mut BTreeMap<String, Value>,
) -> Result<TradeDetails, ParseError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ParseError::new("context_details is not an object"))?;
    let context_subtype = match obj.get("context_subtype") {
        Some(Value::String(s)) => s.clone(),
        None | Some(Value::Null) => {
            let mut err = ParseError::new("missing context_details.context_subtype");
            err.missing_fields = vec!["context_details.context_subtype".into()];
            return Err(err);
        }
        Some(other) => {
            return Err(ParseError::new(format!(
                "`context_subtype` must be a string, got {other}"
            )))
        }
    };
    let items = match obj.get("items") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(entries)) => entries.iter().map(bind_item).collect::<Result<_, _>>()?,
        Some(other) => return Err(ParseError::new(format!("`items` must be an array, got {other}"))),
    };
    let price = |key: &str| -> Result<Option<PriceField>, ParseError> {
        obj.get(key)
            .map(PriceField::from_value)
            .transpose()
            .map(Option::flatten)
            .map_err(|e| ParseError::new(format!("`{key}`: {e}")))
    };
    let original_price = price("original_price")?;
    let sale_price = price("sale_price")?;
    for (k, v) in obj.iter().filter(|(k, _)| !DETAIL_FIELDS.contains(&k.as_str())) {
        extra.insert(format!("context_details.{k}"), v.clone());
    }
    Ok(TradeDetails {
        context_subtype,
        items,
        original_price,
        sale_price,
    })
}

fn bind_item(value: &Value) -> Result<TradeItem, ParseError> {
    let obj = value
        .as_object()
        .ok_or_else(|| ParseError::new(format!("item entry is not an object: {value}")))?;
    let text = |key: &str| match obj.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => String::new(),
    };
    let quantity = match obj.get("quantity") {
        None | Some(Value::Null) => 0,
        Some(v) => v
            .as_u64()
            .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
            .and_then(|q| u32::try_from(q).ok())
            .ok_or_else(|| ParseError::new(format!("item quantity `{v}` is not a count")))?,
    };
    let price = match obj.get("price") {
        None | Some(Value::Null) => None,
        Some(v) => PriceField::from_value(v)
            .map_err(|e| ParseError::new(format!("item price: {e}")))?
            .and_then(|p| p.amount()),
    };
    Ok(TradeItem {
        item_id: text("item_id"),
        item_name: text("item_name"),
        quantity,
        price,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ViolationKind {
    UnknownItem,
    UnsellableItem,
    ZeroOrNullPrice,
    MissingItems,
    QuantityExceedsStock,
}

impl ViolationKind {
    pub const ALL: [ViolationKind; 5] = [
        Self::UnknownItem,
        Self::UnsellableItem,
        Self::ZeroOrNullPrice,
        Self::MissingItems,
        Self::QuantityExceedsStock,
    ];

    /// Whether the violation breaks the sellable-referencing predicate.
    /// Over-stock quantities are reported but do not.
    pub fn breaks_referencing(self) -> bool {
        !matches!(self, Self::QuantityExceedsStock)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemViolation {
    pub kind: ViolationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
}

/// Per-turn verdict. `referencing_ok` is vacuously true outside TRADE turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema_ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_hallucination: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub item_violations: Vec<ItemViolation>,
    pub referencing_ok: bool,
    pub placeholder_misuse: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub malformed_placeholders: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ValidationReport {
    /// The report recorded for a turn whose output could not be parsed.
    pub fn for_parse_error(err: &ParseError, raw: &str) -> Self {
        Self {
            schema_ok: false,
            state_hallucination: err.state_name.clone(),
            item_violations: Vec::new(),
            referencing_ok: false,
            placeholder_misuse: false,
            malformed_placeholders: detect_malformed_placeholder(raw),
            notes: vec![format!("parse error: {}", err.reason)],
        }
    }

    pub fn is_clean(&self) -> bool {
        self.schema_ok
            && self.state_hallucination.is_none()
            && self.item_violations.is_empty()
            && !self.placeholder_misuse
            && self.malformed_placeholders.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.item_violations.iter().any(|v| v.kind == kind)
    }
}

fn contains_placeholder(resp: &NpcResponse) -> bool {
    resp.npc_dialogue.contains(PRICE_PLACEHOLDER)
        || resp.context_details.as_ref().is_some_and(|d| {
            [&d.original_price, &d.sale_price]
                .into_iter()
                .flatten()
                .any(|p| match p {
                    PriceField::Placeholder => true,
                    PriceField::Text(t) => t.contains(PRICE_PLACEHOLDER),
                    PriceField::Amount(_) => false,
                })
        })
}

/// Checks a parsed response against the world and the variant's contract.
pub fn validate_turn(resp: &NpcResponse, world: &GameWorld, variant: &PromptVariant) -> ValidationReport {
    let mut notes = Vec::new();
    let mut schema_ok = true;

    if variant.respond_prev_state && resp.last_trade_context.is_none() {
        schema_ok = false;
        notes.push("last_trade_context missing".to_string());
    }
    if resp.extra_fields.contains_key("context_details") {
        schema_ok = false;
        notes.push(format!("context_details present for {}", resp.context_type));
    }

    let subtype_error = resp
        .context_details
        .as_ref()
        .and_then(|d| parse_subcontext(&d.context_subtype).err());
    let last_error = resp.last_trade_subcontext().and_then(Result::err);
    let state_hallucination = subtype_error.or(last_error).map(|e| {
        notes.push(format!("unknown state `{}` (nearest {})", e.state_name, e.nearest));
        e.state_name
    });

    let mut item_violations = Vec::new();
    let mut referencing_ok = true;
    if let Some(details) = resp.context_details.as_ref().filter(|_| resp.context_type == ContextType::Trade) {
        if details.items.is_empty() {
            item_violations.push(ItemViolation { kind: ViolationKind::MissingItems, item_id: None });
        }
        for item in &details.items {
            let id = Some(item.item_id.clone());
            match world.stock(&item.item_id) {
                _ if world.catalog_item(&item.item_id).is_none() => {
                    item_violations.push(ItemViolation { kind: ViolationKind::UnknownItem, item_id: id.clone() });
                }
                Some(stock) if stock.is_sellable() => {
                    if item.quantity > stock.quantity {
                        item_violations.push(ItemViolation {
                            kind: ViolationKind::QuantityExceedsStock,
                            item_id: id.clone(),
                        });
                    }
                }
                _ => {
                    item_violations.push(ItemViolation { kind: ViolationKind::UnsellableItem, item_id: id.clone() });
                }
            }
            if item.price.unwrap_or(0) == 0 {
                item_violations.push(ItemViolation { kind: ViolationKind::ZeroOrNullPrice, item_id: id });
            }
        }
        referencing_ok = !details.items.is_empty()
            && item_violations.iter().all(|v| !v.kind.breaks_referencing());
    }

    let offer_turn = resp.subcontext() == Some(TradeSubcontext::OfferSell);
    let placeholder_misuse = !offer_turn && contains_placeholder(resp);
    if placeholder_misuse {
        notes.push(format!("{PRICE_PLACEHOLDER} used outside OFFER_SELL"));
    }

    let mut malformed_placeholders = detect_malformed_placeholder(&resp.npc_dialogue);
    if let Some(d) = &resp.context_details {
        for p in [&d.original_price, &d.sale_price].into_iter().flatten() {
            if let PriceField::Text(t) = p {
                malformed_placeholders.extend(detect_malformed_placeholder(t));
            }
        }
    }

    ValidationReport {
        schema_ok,
        state_hallucination,
        item_violations,
        referencing_ok,
        placeholder_misuse,
        malformed_placeholders,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GameItem, InventoryItem, ItemId};
    use serde_json::json;

    fn world() -> GameWorld {
        let id = |s: &str| ItemId::new(s).unwrap();
        GameWorld {
            character_name: "Brom".into(),
            character_info: "".into(),
            location: "".into(),
            time: "".into(),
            catalog: vec![
                GameItem { item_id: id("sword"), item_name: "Sword".into() },
                GameItem { item_id: id("crown"), item_name: "Crown".into() },
            ],
            inventory: vec![InventoryItem { item_id: id("sword"), item_name: "Sword".into(), quantity: 5, price: 60 }],
        }
    }

    fn trade(subtype: &str, items: Value) -> Value {
        json!({
            "last_trade_context": "",
            "context_reason": "r",
            "context_type": "TRADE",
            "context_details": {"context_subtype": subtype, "items": items, "original_price": 120, "sale_price": 120},
            "npc_dialogue": "Two swords, 120 gold."
        })
    }

    #[test]
    fn minimal_none_response() {
        let r = parse_npc_response(r#"{"context_reason":"hi","context_type":"NONE","npc_dialogue":"Hello"}"#).unwrap();
        assert_eq!(r.context_type, ContextType::None);
        assert!(r.context_details.is_none());
        assert!(r.last_trade_context.is_none());
    }

    #[test]
    fn trade_without_details_is_error() {
        let err = parse_npc_response(r#"{"context_reason":"","context_type":"TRADE","npc_dialogue":"x"}"#).unwrap_err();
        assert_eq!(err.reason, "missing context_details");
    }

    #[test]
    fn missing_fields_are_listed() {
        let err = parse_npc_response(r#"{"context_type":"NONE"}"#).unwrap_err();
        assert_eq!(err.missing_fields, vec!["context_reason", "npc_dialogue"]);
    }

    #[test]
    fn code_fence_is_tolerated() {
        let body = trade("OFFER_SELL", json!([{"item_id":"sword","item_name":"Sword","quantity":2,"price":60}]));
        let raw = format!("```json\n{body}\n```");
        let (resp, notes) = parse_with_notes(&raw).unwrap();
        assert_eq!(resp, parse_npc_response(&body.to_string()).unwrap());
        assert_eq!(notes.len(), 1);
        let (_, clean_notes) = parse_with_notes(&format!("  {body}\n")).unwrap();
        assert!(clean_notes.is_empty());
    }

    #[test]
    fn garbage_is_error() {
        assert!(parse_npc_response("sure! here you go").is_err());
        assert!(parse_npc_response("{not json").is_err());
    }

    #[test]
    fn hallucinated_context_type_is_reported() {
        let err = parse_npc_response(r#"{"context_reason":"","context_type":"TRAID","npc_dialogue":""}"#).unwrap_err();
        assert_eq!(err.state_name.as_deref(), Some("TRAID"));
        let report = ValidationReport::for_parse_error(&err, "");
        assert_eq!(report.state_hallucination.as_deref(), Some("TRAID"));
    }

    #[test]
    fn clean_offer_references_ok() {
        let r = bind_response(&trade("OFFER_SELL", json!([{"item_id":"sword","item_name":"Sword","quantity":2,"price":60}]))).unwrap();
        let rep = validate_turn(&r, &world(), &PromptVariant::SIBP);
        assert!(rep.referencing_ok);
        assert!(rep.is_clean(), "{rep:?}");
    }

    #[test]
    fn catalog_only_item_with_null_price() {
        let r = bind_response(&trade("OFFER_SELL", json!([{"item_id":"crown","item_name":"Crown","quantity":1,"price":null}]))).unwrap();
        let rep = validate_turn(&r, &world(), &PromptVariant::SIBP);
        assert!(rep.has(ViolationKind::ZeroOrNullPrice));
        assert!(rep.has(ViolationKind::UnsellableItem));
        assert!(!rep.referencing_ok);
    }

    #[test]
    fn empty_items_is_missing() {
        let r = bind_response(&trade("SHOW_INVENTORY", json!([]))).unwrap();
        let rep = validate_turn(&r, &world(), &PromptVariant::SIBP);
        assert_eq!(rep.item_violations, vec![ItemViolation { kind: ViolationKind::MissingItems, item_id: None }]);
        assert!(!rep.referencing_ok);
    }

    #[test]
    fn over_stock_does_not_break_referencing() {
        let r = bind_response(&trade("OFFER_SELL", json!([{"item_id":"sword","item_name":"Sword","quantity":9,"price":60}]))).unwrap();
        let rep = validate_turn(&r, &world(), &PromptVariant::SIBP);
        assert!(rep.has(ViolationKind::QuantityExceedsStock));
        assert!(rep.referencing_ok);
        assert!(!rep.is_clean());
    }

    #[test]
    fn misspelled_subtype_and_last_context() {
        let r = bind_response(&trade("SHOW_INVENTOR", json!([{"item_id":"sword","item_name":"Sword","quantity":1,"price":60}]))).unwrap();
        let rep = validate_turn(&r, &world(), &PromptVariant::SIBP);
        assert_eq!(rep.state_hallucination.as_deref(), Some("SHOW_INVENTOR"));

        let mut v = trade("OFFER_SELL", json!([{"item_id":"sword","item_name":"Sword","quantity":1,"price":60}]));
        v["last_trade_context"] = json!("OFER_SELL");
        let rep = validate_turn(&bind_response(&v).unwrap(), &world(), &PromptVariant::SIBP);
        assert_eq!(rep.state_hallucination.as_deref(), Some("OFER_SELL"));
    }

    #[test]
    fn last_trade_context_required_only_with_element_four() {
        let mut v = trade("OFFER_SELL", json!([{"item_id":"sword","item_name":"Sword","quantity":1,"price":60}]));
        v.as_object_mut().unwrap().remove("last_trade_context");
        let r = bind_response(&v).unwrap();
        assert!(!validate_turn(&r, &world(), &PromptVariant::SIBP).schema_ok);
        assert!(validate_turn(&r, &world(), &PromptVariant::BASELINE3).schema_ok);
    }

    #[test]
    fn placeholder_outside_offer_is_misuse() {
        let mut v = trade("NEGOTIATE_PRICE", json!([{"item_id":"sword","item_name":"Sword","quantity":1,"price":60}]));
        v["npc_dialogue"] = json!("That is __PRICE__ gold.");
        let rep = validate_turn(&bind_response(&v).unwrap(), &world(), &PromptVariant::SIBP);
        assert!(rep.placeholder_misuse);
        v["context_details"]["context_subtype"] = json!("OFFER_SELL");
        let rep = validate_turn(&bind_response(&v).unwrap(), &world(), &PromptVariant::SIBP);
        assert!(!rep.placeholder_misuse);
    }

    #[test]
    fn prohibited_details_on_none() {
        let v = json!({"last_trade_context":"","context_reason":"","context_type":"NONE",
            "context_details":{"context_subtype":"OFFER_SELL"},"npc_dialogue":"hi"});
        let r = bind_response(&v).unwrap();
        assert!(r.context_details.is_none());
        assert!(!validate_turn(&r, &world(), &PromptVariant::SIBP).schema_ok);
        let v = json!({"last_trade_context":"","context_reason":"","context_type":"NONE",
            "context_details":{},"npc_dialogue":"hi"});
        assert!(validate_turn(&bind_response(&v).unwrap(), &world(), &PromptVariant::SIBP).schema_ok);
    }

    #[test]
    fn round_trip_preserves_extras() {
        let mut v = trade("CHECK_CONFIRMATION", json!([{"item_id":"sword","item_name":"Sword","quantity":1,"price":60}]));
        v["mood"] = json!("grumpy");
        v["context_details"]["discount"] = json!(5);
        let r = bind_response(&v).unwrap();
        assert_eq!(r.extra_fields.len(), 2);
        assert_eq!(parse_npc_response(&r.to_json_string()).unwrap(), r);
    }
}
