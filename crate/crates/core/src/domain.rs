//! Core vocabulary: items, the game world, trade states and the NPC response
//! contract.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// The literal placeholder an NPC may emit for the offer total.
pub const PRICE_PLACEHOLDER: &str = "__PRICE__";

/// Opaque item key. Matching is byte-exact: `sleeping_bag_01` is not `sleeping_bag`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ItemId(String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Result<Self, DomainError> {
        let id = id.into();
        if id.is_empty() {
            return Err(DomainError::EmptyItemId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ItemId {
    type Error = DomainError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ItemId> for String {
    fn from(id: ItemId) -> Self {
        id.0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DomainError {
    #[error("item id must not be empty")]
    EmptyItemId,
    #[error("duplicate catalog item id `{0}`")]
    DuplicateCatalogItem(String),
    #[error("inventory item `{0}` is not in the catalog")]
    InventoryNotInCatalog(String),
    #[error("duplicate inventory item id `{0}`")]
    DuplicateInventoryItem(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameItem {
    pub item_id: ItemId,
    pub item_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub item_id: ItemId,
    pub item_name: String,
    pub quantity: u32,
    pub price: u64,
}

impl InventoryItem {
    pub fn is_sellable(&self) -> bool {
        self.quantity > 0
    }
}

/// The full item catalog, the merchant's stock and the situational context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameWorld {
    pub character_name: String,
    pub character_info: String,
    pub location: String,
    pub time: String,
    pub catalog: Vec<GameItem>,
    pub inventory: Vec<InventoryItem>,
}

impl GameWorld {
    /// Checks catalog uniqueness and that every stocked item is a catalog item.
    pub fn validate(&self) -> Result<(), DomainError> {
        let mut ids = HashSet::new();
        for item in &self.catalog {
            if !ids.insert(item.item_id.as_str()) {
                return Err(DomainError::DuplicateCatalogItem(item.item_id.to_string()));
            }
        }
        let mut stocked = HashSet::new();
        for item in &self.inventory {
            if !ids.contains(item.item_id.as_str()) {
                return Err(DomainError::InventoryNotInCatalog(item.item_id.to_string()));
            }
            if !stocked.insert(item.item_id.as_str()) {
                return Err(DomainError::DuplicateInventoryItem(item.item_id.to_string()));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, WorldLoadError> {
        let world: GameWorld = serde_json::from_str(text)?;
        world.validate()?;
        Ok(world)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, WorldLoadError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn catalog_item(&self, id: &str) -> Option<&GameItem> {
        self.catalog.iter().find(|i| i.item_id.as_str() == id)
    }

    pub fn stock(&self, id: &str) -> Option<&InventoryItem> {
        self.inventory.iter().find(|i| i.item_id.as_str() == id)
    }

    pub fn stock_mut(&mut self, id: &str) -> Option<&mut InventoryItem> {
        self.inventory.iter_mut().find(|i| i.item_id.as_str() == id)
    }

    pub fn is_sellable(&self, id: &str) -> bool {
        is_sellable(self, id)
    }

    pub fn sellable_items(&self) -> impl Iterator<Item = &InventoryItem> {
        self.inventory.iter().filter(|i| i.is_sellable())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorldLoadError {
    #[error("reading world fixture: {0}")]
    Io(#[from] std::io::Error),
    #[error("decoding world fixture: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid world: {0}")]
    Invalid(#[from] DomainError),
}

/// True iff `item_id` is stocked with a positive quantity. Unknown ids are not sellable.
pub fn is_sellable(world: &GameWorld, item_id: &str) -> bool {
    world.stock(item_id).is_some_and(InventoryItem::is_sellable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContextType {
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "TRADE")]
    Trade,
    #[serde(rename = "END_CONVERSATION")]
    EndConversation,
}

impl ContextType {
    pub const ALL: [ContextType; 3] = [Self::None, Self::Trade, Self::EndConversation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "NONE",
            Self::Trade => "TRADE",
            Self::EndConversation => "END_CONVERSATION",
        }
    }
}

impl fmt::Display for ContextType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextType {
    type Err = HallucinationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| HallucinationError::new(s, Self::ALL.iter().map(|c| c.as_str())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TradeSubcontext {
    ShowInventory,
    OfferSell,
    NegotiatePrice,
    CheckConfirmation,
    ConfirmSell,
    RejectTrade,
}

impl TradeSubcontext {
    pub const ALL: [TradeSubcontext; 6] = [
        Self::ShowInventory,
        Self::OfferSell,
        Self::NegotiatePrice,
        Self::CheckConfirmation,
        Self::ConfirmSell,
        Self::RejectTrade,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ShowInventory => "SHOW_INVENTORY",
            Self::OfferSell => "OFFER_SELL",
            Self::NegotiatePrice => "NEGOTIATE_PRICE",
            Self::CheckConfirmation => "CHECK_CONFIRMATION",
            Self::ConfirmSell => "CONFIRM_SELL",
            Self::RejectTrade => "REJECT_TRADE",
        }
    }

    /// Two-letter code used on transition-matrix axes.
    pub fn abbreviation(self) -> &'static str {
        match self {
            Self::ShowInventory => "SI",
            Self::OfferSell => "OS",
            Self::NegotiatePrice => "NP",
            Self::CheckConfirmation => "CC",
            Self::ConfirmSell => "CS",
            Self::RejectTrade => "RT",
        }
    }
}

impl fmt::Display for TradeSubcontext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TradeSubcontext {
    type Err = HallucinationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_subcontext(s)
    }
}

/// A state name outside the defined vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("unknown state name `{state_name}` (nearest valid: {nearest})")]
pub struct HallucinationError {
    pub state_name: String,
    pub nearest: String,
}

impl HallucinationError {
    fn new<'a>(state_name: &str, vocabulary: impl Iterator<Item = &'a str>) -> Self {
        let nearest = vocabulary
            .min_by_key(|candidate| strsim::levenshtein(state_name, candidate))
            .unwrap_or_default()
            .to_string();
        Self {
            state_name: state_name.to_string(),
            nearest,
        }
    }
}

/// Exact-match parse of a trade subcontext name. Near misses are reported, never corrected.
pub fn parse_subcontext(name: &str) -> Result<TradeSubcontext, HallucinationError> {
    TradeSubcontext::ALL
        .into_iter()
        .find(|s| s.as_str() == name)
        .ok_or_else(|| HallucinationError::new(name, TradeSubcontext::ALL.iter().map(|s| s.as_str())))
}

/// A node of an extracted trade sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChainState {
    SessionStart,
    SubState(TradeSubcontext),
    SessionEnd,
}

impl ChainState {
    pub fn abbreviation(self) -> String {
        match self {
            Self::SessionStart => "SS".to_string(),
            Self::SubState(s) => format!("T:{}", s.abbreviation()),
            Self::SessionEnd => "SE".to_string(),
        }
    }
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.abbreviation())
    }
}

/// A price slot in the response: a number, the placeholder, or some other string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PriceField {
    Amount(u64),
    Placeholder,
    Text(String),
}

impl PriceField {
    /// The concrete amount, if one can be read. Digit-only strings count.
    pub fn amount(&self) -> Option<u64> {
        match self {
            Self::Amount(v) => Some(*v),
            Self::Placeholder => None,
            Self::Text(t) => t.trim().parse().ok(),
        }
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, Self::Placeholder)
    }

    pub(crate) fn from_value(value: &Value) -> Result<Option<Self>, String> {
        match value {
            Value::Null => Ok(None),
            Value::Number(n) => {
                if let Some(v) = n.as_u64() {
                    Ok(Some(Self::Amount(v)))
                } else if let Some(f) = n.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0) {
                    Ok(Some(Self::Amount(f as u64)))
                } else {
                    Err(format!("price `{n}` is not a non-negative integer"))
                }
            }
            Value::String(s) if s == PRICE_PLACEHOLDER => Ok(Some(Self::Placeholder)),
            Value::String(s) => Ok(Some(Self::Text(s.clone()))),
            other => Err(format!("price must be a number or string, got {other}")),
        }
    }

    pub(crate) fn to_value(&self) -> Value {
        match self {
            Self::Amount(v) => Value::from(*v),
            Self::Placeholder => Value::from(PRICE_PLACEHOLDER),
            Self::Text(t) => Value::from(t.as_str()),
        }
    }
}

impl Serialize for PriceField {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PriceField {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        PriceField::from_value(&value)
            .map_err(serde::de::Error::custom)?
            .ok_or_else(|| serde::de::Error::custom("price must not be null here"))
    }
}

/// One entry of the response's `items` array. Ids are kept raw so that
/// hallucinated ids survive parsing and can be reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeItem {
    pub item_id: String,
    pub item_name: String,
    pub quantity: u32,
    /// Unit price; `None` when the model emitted null or omitted it.
    pub price: Option<u64>,
}

/// `context_details` of a TRADE response. The subtype is kept as emitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradeDetails {
    pub context_subtype: String,
    pub items: Vec<TradeItem>,
    pub original_price: Option<PriceField>,
    pub sale_price: Option<PriceField>,
}

impl TradeDetails {
    pub fn subcontext(&self) -> Result<TradeSubcontext, HallucinationError> {
        parse_subcontext(&self.context_subtype)
    }

    /// (quantity, unit price) pairs; a missing price contributes zero.
    pub fn line_items(&self) -> Vec<(u32, u64)> {
        self.items.iter().map(|i| (i.quantity, i.price.unwrap_or(0))).collect()
    }
}

/// The parsed JSON contract an NPC turn must satisfy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpcResponse {
    /// `None` when the field is absent (variants that do not ask for it).
    pub last_trade_context: Option<String>,
    pub context_reason: String,
    pub context_type: ContextType,
    pub context_details: Option<TradeDetails>,
    pub npc_dialogue: String,
    /// Fields outside the contract, preserved verbatim.
    pub extra_fields: BTreeMap<String, Value>,
}

impl NpcResponse {
    /// The trade subcontext, when this is a TRADE turn with a valid subtype.
    pub fn subcontext(&self) -> Option<TradeSubcontext> {
        match (self.context_type, &self.context_details) {
            (ContextType::Trade, Some(d)) => d.subcontext().ok(),
            _ => None,
        }
    }

    /// Raw subtype string for TRADE turns.
    pub fn raw_subtype(&self) -> Option<&str> {
        self.context_details.as_ref().map(|d| d.context_subtype.as_str())
    }

    /// Parsed `last_trade_context`; `None` when absent or empty.
    pub fn last_trade_subcontext(&self) -> Option<Result<TradeSubcontext, HallucinationError>> {
        self.last_trade_context
            .as_deref()
            .filter(|s| !s.is_empty())
            .map(parse_subcontext)
    }

    /// Canonical JSON encoding with contract field names in prompt order.
    pub fn to_value(&self) -> Value {
        let mut map = serde_json::Map::new();
        if let Some(last) = &self.last_trade_context {
            map.insert("last_trade_context".into(), Value::from(last.as_str()));
        }
        map.insert("context_reason".into(), Value::from(self.context_reason.as_str()));
        map.insert("context_type".into(), Value::from(self.context_type.as_str()));
        if let Some(details) = &self.context_details {
            let mut d = serde_json::Map::new();
            d.insert("context_subtype".into(), Value::from(details.context_subtype.as_str()));
            let items = details
                .items
                .iter()
                .map(|i| {
                    serde_json::json!({
                        "item_id": i.item_id,
                        "item_name": i.item_name,
                        "quantity": i.quantity,
                        "price": i.price,
                    })
                })
                .collect();
            d.insert("items".into(), Value::Array(items));
            if let Some(p) = &details.original_price {
                d.insert("original_price".into(), p.to_value());
            }
            if let Some(p) = &details.sale_price {
                d.insert("sale_price".into(), p.to_value());
            }
            map.insert("context_details".into(), Value::Object(d));
        }
        map.insert("npc_dialogue".into(), Value::from(self.npc_dialogue.as_str()));
        for (k, v) in &self.extra_fields {
            map.entry(k.clone()).or_insert_with(|| v.clone());
        }
        Value::Object(map)
    }

    pub fn to_json_string(&self) -> String {
        self.to_value().to_string()
    }
}

impl Serialize for NpcResponse {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NpcResponse {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        crate::parser::bind_response(&value).map_err(|e| serde::de::Error::custom(e.reason))
    }
}

/// Token and latency figures for one completion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UsageStats {
    pub completion_tokens: u64,
    pub thought_tokens: u64,
    /// Seconds.
    pub response_time: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> GameWorld {
        let id = |s: &str| ItemId::new(s).unwrap();
        GameWorld {
            character_name: "Brom".into(),
            character_info: "A gruff smith.".into(),
            location: "Forge".into(),
            time: "Noon".into(),
            catalog: vec![
                GameItem { item_id: id("sword"), item_name: "Sword".into() },
                GameItem { item_id: id("rope"), item_name: "Rope".into() },
                GameItem { item_id: id("crown"), item_name: "Crown".into() },
            ],
            inventory: vec![
                InventoryItem { item_id: id("sword"), item_name: "Sword".into(), quantity: 3, price: 60 },
                InventoryItem { item_id: id("rope"), item_name: "Rope".into(), quantity: 0, price: 5 },
            ],
        }
    }

    #[test]
    fn parse_subcontext_exact() {
        assert_eq!(parse_subcontext("CONFIRM_SELL"), Ok(TradeSubcontext::ConfirmSell));
        for s in TradeSubcontext::ALL {
            assert_eq!(parse_subcontext(s.as_str()), Ok(s));
        }
    }

    #[test]
    fn parse_subcontext_reports_nearest() {
        let err = parse_subcontext("SHOW_INVENTOR").unwrap_err();
        assert_eq!(err.state_name, "SHOW_INVENTOR");
        assert_eq!(err.nearest, "SHOW_INVENTORY");
        assert!(parse_subcontext("").is_err());
        assert!(parse_subcontext("confirm_sell").is_err());
    }

    #[test]
    fn sellability() {
        let w = world();
        assert!(is_sellable(&w, "sword"));
        assert!(!is_sellable(&w, "rope"));
        assert!(!is_sellable(&w, "crown"));
        assert!(!is_sellable(&w, "nothing"));
    }

    #[test]
    fn world_validation() {
        let mut w = world();
        assert!(w.validate().is_ok());
        w.inventory.push(InventoryItem {
            item_id: ItemId::new("ghost").unwrap(),
            item_name: "Ghost".into(),
            quantity: 1,
            price: 1,
        });
        assert_eq!(w.validate(), Err(DomainError::InventoryNotInCatalog("ghost".into())));
        assert!(ItemId::new("").is_err());
        assert!(serde_json::from_str::<ItemId>("\"\"").is_err());
    }

    #[test]
    fn chain_state_abbreviations() {
        assert_eq!(ChainState::SessionStart.abbreviation(), "SS");
        assert_eq!(ChainState::SubState(TradeSubcontext::OfferSell).abbreviation(), "T:OS");
        assert_eq!(ChainState::SessionEnd.abbreviation(), "SE");
    }

    #[test]
    fn price_field_values() {
        assert_eq!(PriceField::from_value(&Value::from(150)), Ok(Some(PriceField::Amount(150))));
        assert_eq!(PriceField::from_value(&Value::from(150.0)), Ok(Some(PriceField::Amount(150))));
        assert_eq!(PriceField::from_value(&Value::from("__PRICE__")), Ok(Some(PriceField::Placeholder)));
        assert_eq!(PriceField::from_value(&Value::Null), Ok(None));
        assert!(PriceField::from_value(&Value::from(-3)).is_err());
        assert_eq!(PriceField::Text(" 42 ".into()).amount(), Some(42));
        assert_eq!(PriceField::Placeholder.amount(), None);
    }
}
