//! Interactive sessions persisted as transcript JSONL files.
//!
//! The header meta holds the session id, the world snapshot at creation and
//! the starting gold. Everything else (current inventory, gold, status) is
//! derived from the turns, so a reload reproduces the live state exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tradeflow_core::domain::{GameWorld, InventoryItem, NpcResponse};
use tradeflow_core::engine::ClosingState;
use tradeflow_core::postprocess::compute_total;
use tradeflow_core::prompt::{PostProcessMode, PromptVariant};
use tradeflow_core::transcript::{DialogueTurn, Termination, Transcript, TranscriptError, TranscriptHeader};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("session is closed ({0})")]
    Closed(Termination),
    #[error("session file is corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum SessionStatus {
    Open,
    Closed { reason: Termination },
}

/// Outcome of applying a CONFIRM_SELL to the session's world copy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaleEffect {
    pub applied: bool,
    pub gold_spent: u64,
    /// `(item_id, quantity)` removed from the merchant's stock.
    pub items: Vec<(String, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refused: Option<String>,
}

/// Applies a sale all-or-nothing. Refused when stock or funds run short.
pub fn apply_sale(world: &mut GameWorld, gold: &mut u64, resp: &NpcResponse) -> SaleEffect {
    let refuse = |why: String| SaleEffect { applied: false, gold_spent: 0, items: Vec::new(), refused: Some(why) };
    let Some(details) = &resp.context_details else {
        return refuse("sale without details".into());
    };
    let mut items = Vec::new();
    for item in &details.items {
        match world.stock(&item.item_id) {
            Some(s) if s.quantity >= item.quantity => items.push((item.item_id.clone(), item.quantity)),
            _ => return refuse(format!("insufficient stock of {}", item.item_id)),
        }
    }
    let price = match details.sale_price.as_ref().and_then(|p| p.amount()) {
        Some(p) => p,
        None => match compute_total(&details.line_items()) {
            Ok(t) => t,
            Err(e) => return refuse(e.to_string()),
        },
    };
    if price > *gold {
        return refuse(format!("insufficient funds: {price} gold needed, {gold} held"));
    }
    for (id, qty) in &items {
        if let Some(s) = world.stock_mut(id) {
            s.quantity -= qty;
        }
    }
    *gold -= price;
    SaleEffect { applied: true, gold_spent: price, items, refused: None }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub world: GameWorld,
    pub gold: u64,
    pub transcript: Transcript,
    /// Sale effects keyed by round index.
    pub effects: BTreeMap<u32, SaleEffect>,
    path: PathBuf,
}

impl Session {
    pub fn status(&self) -> SessionStatus {
        match self.transcript.termination {
            Some(reason) => SessionStatus::Closed { reason },
            None => SessionStatus::Open,
        }
    }

    pub fn variant(&self) -> PromptVariant {
        self.transcript.prompt_variant
    }

    pub fn mode(&self) -> PostProcessMode {
        self.transcript.mode
    }

    pub fn inventory(&self) -> &[InventoryItem] {
        &self.world.inventory
    }

    pub fn ensure_open(&self) -> Result<(), SessionError> {
        match self.transcript.termination {
            Some(t) => Err(SessionError::Closed(t)),
            None => Ok(()),
        }
    }

    /// Folds a finished turn into the state without persisting it.
    fn absorb(&mut self, turn: DialogueTurn) -> Option<Termination> {
        let closing = turn.closing();
        if closing == Some(ClosingState::ConfirmSell) {
            if let Some(resp) = turn.final_response() {
                let effect = apply_sale(&mut self.world, &mut self.gold, resp);
                self.effects.insert(turn.round_index, effect);
            }
        }
        self.transcript.turns.push(turn);
        let termination = closing.map(|c| match c {
            ClosingState::ConfirmSell => Termination::ConfirmSell,
            ClosingState::EndConversation => Termination::EndConversation,
        });
        self.transcript.termination = termination;
        termination
    }

    /// Appends a turn, persisting it first. Closing turns also write the end line.
    pub fn record(&mut self, turn: DialogueTurn) -> Result<(), SessionError> {
        self.ensure_open()?;
        Transcript::append_line(&self.path, &Transcript::turn_line(&turn))?;
        if let Some(t) = self.absorb(turn) {
            Transcript::append_line(&self.path, &Transcript::end_line(t))?;
        }
        Ok(())
    }
}

/// Session defaults applied at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSettings {
    pub variant: PromptVariant,
    pub mode: PostProcessMode,
    pub language: String,
    pub starting_gold: u64,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            variant: PromptVariant::SIBP,
            mode: PostProcessMode::PricePlaceholder,
            language: "English".into(),
            starting_gold: 1000,
        }
    }
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

/// Creates and reloads session files under one directory.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

impl SessionStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn create(&self, world: &GameWorld, settings: &SessionSettings) -> Result<Session, SessionError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let header = TranscriptHeader {
            seed: 0,
            scenario: None,
            prompt_variant: settings.variant,
            mode: settings.mode,
            language: settings.language.clone(),
            meta: BTreeMap::from([
                ("session_id".to_string(), json!(id)),
                ("starting_gold".to_string(), json!(settings.starting_gold)),
                ("world".to_string(), serde_json::to_value(world).expect("world serializes")),
            ]),
        };
        let transcript = Transcript::new(header);
        std::fs::create_dir_all(&self.dir).map_err(|source| TranscriptError::Io { path: self.dir.clone(), source })?;
        let path = self.path(&id);
        Transcript::append_line(&path, &transcript.header_line())?;
        Ok(Session {
            id,
            world: world.clone(),
            gold: settings.starting_gold,
            transcript,
            effects: BTreeMap::new(),
            path,
        })
    }

    pub fn load(&self, id: &str) -> Result<Session, SessionError> {
        if !valid_id(id) {
            return Err(SessionError::NotFound(id.to_string()));
        }
        let path = self.path(id);
        if !path.exists() {
            return Err(SessionError::NotFound(id.to_string()));
        }
        let stored = Transcript::read_jsonl(&path)?;
        let meta = |key: &str| stored.meta.get(key).cloned().unwrap_or(Value::Null);
        let world: GameWorld = serde_json::from_value(meta("world")).map_err(|e| SessionError::Corrupt(e.to_string()))?;
        let gold = meta("starting_gold").as_u64().ok_or_else(|| SessionError::Corrupt("starting_gold".into()))?;
        let mut session = Session {
            id: id.to_string(),
            world,
            gold,
            transcript: Transcript::new(stored.header()),
            effects: BTreeMap::new(),
            path,
        };
        for turn in stored.turns {
            session.absorb(turn);
        }
        session.transcript.termination = stored.termination;
        Ok(session)
    }
}

