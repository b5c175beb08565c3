//! HTTP routes, request/response views and error mapping.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tradeflow_core::backend::{CompletionBackend, CompletionParams};
use tradeflow_core::domain::{ContextType, GameWorld, InventoryItem, PriceField, TradeItem};
use tradeflow_core::engine::{npc_round, NpcSetup, RoundError};
use tradeflow_core::parser::ValidationReport;
use tradeflow_core::prompt::{PostProcessMode, PromptVariant, TemplateSet};
use tradeflow_core::transcript::DialogueTurn;

use crate::session::{SaleEffect, Session, SessionError, SessionSettings, SessionStatus, SessionStore};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    SessionClosed(String),
    #[error("another message for this session is in flight")]
    Busy,
    #[error("completion backend failed: {0}")]
    Backend(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn parts(&self) -> (StatusCode, &'static str) {
        match self {
            Self::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            Self::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Self::SessionClosed(_) => (StatusCode::CONFLICT, "session_closed"),
            Self::Busy => (StatusCode::CONFLICT, "busy"),
            Self::Backend(_) => (StatusCode::BAD_GATEWAY, "backend_error"),
            Self::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.parts();
        if status.is_server_error() {
            tracing::warn!(code, "{self}");
        }
        (status, Json(ErrorBody { code: code.into(), message: self.to_string() })).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(_) => Self::NotFound(e.to_string()),
            SessionError::Closed(_) => Self::SessionClosed(e.to_string()),
            SessionError::Corrupt(_) | SessionError::Transcript(_) => Self::Internal(e.to_string()),
        }
    }
}

/// One NPC turn as the chat client renders it. Prices and dialogue are the
/// post-processed values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TurnView {
    pub round_index: u32,
    pub player_text: String,
    pub npc_dialogue: String,
    pub context_type: Option<ContextType>,
    pub context_subtype: Option<String>,
    pub context_reason: Option<String>,
    pub items: Vec<TradeItem>,
    pub original_price: Option<PriceField>,
    pub sale_price: Option<PriceField>,
    pub last_trade_context: Option<String>,
    pub validation: ValidationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sale: Option<SaleEffect>,
}

impl TurnView {
    pub fn new(turn: &DialogueTurn, sale: Option<&SaleEffect>) -> Self {
        let resp = turn.final_response();
        let details = resp.and_then(|r| r.context_details.as_ref());
        Self {
            round_index: turn.round_index,
            player_text: turn.player_utterance.clone(),
            npc_dialogue: turn.processed_dialogue.clone(),
            context_type: resp.map(|r| r.context_type),
            context_subtype: details.map(|d| d.context_subtype.clone()),
            context_reason: resp.map(|r| r.context_reason.clone()),
            items: details.map(|d| d.items.clone()).unwrap_or_default(),
            original_price: details.and_then(|d| d.original_price.clone()),
            sale_price: details.and_then(|d| d.sale_price.clone()),
            last_trade_context: resp.and_then(|r| r.last_trade_context.clone()),
            validation: turn.validation.clone(),
            parse_error: turn.parsed.as_ref().err().map(|e| e.reason.clone()),
            sale: sale.cloned(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: SessionStatus,
    pub variant: String,
    pub mode: PostProcessMode,
    pub language: String,
    pub character_name: String,
    pub gold: u64,
    pub inventory: Vec<InventoryItem>,
    pub turns: Vec<TurnView>,
}

impl SessionView {
    pub fn new(s: &Session) -> Self {
        Self {
            session_id: s.id.clone(),
            status: s.status(),
            variant: s.variant().to_string(),
            mode: s.mode(),
            language: s.transcript.language.clone(),
            character_name: s.world.character_name.clone(),
            gold: s.gold,
            inventory: s.inventory().to_vec(),
            turns: s.transcript.turns.iter().map(|t| TurnView::new(t, s.effects.get(&t.round_index))).collect(),
        }
    }
}

/// Reply to a posted message: the new turn plus the session state after it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageView {
    pub turn: TurnView,
    pub status: SessionStatus,
    pub gold: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub variant: Option<String>,
    pub mode: Option<String>,
    pub language: Option<String>,
    pub starting_gold: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PostMessage {
    pub player_text: String,
}

/// Everything the handlers share.
pub struct AppState {
    pub world: GameWorld,
    pub templates: TemplateSet,
    pub backend: Arc<dyn CompletionBackend>,
    pub params: CompletionParams,
    pub defaults: SessionSettings,
    pub store: SessionStore,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<Session>>>>,
}

impl AppState {
    pub fn new(
        world: GameWorld,
        templates: TemplateSet,
        backend: Arc<dyn CompletionBackend>,
        params: CompletionParams,
        defaults: SessionSettings,
        store: SessionStore,
    ) -> Self {
        Self { world, templates, backend, params, defaults, store, sessions: Mutex::new(HashMap::new()) }
    }

    /// The in-memory session, loading it from disk on first access.
    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<Session>>, ApiError> {
        let mut map = self.sessions.lock().expect("session map lock");
        if let Some(s) = map.get(id) {
            return Ok(s.clone());
        }
        let loaded = Arc::new(tokio::sync::Mutex::new(self.store.load(id)?));
        map.insert(id.to_string(), loaded.clone());
        Ok(loaded)
    }

    fn settings(&self, req: CreateSession) -> Result<SessionSettings, ApiError> {
        let mut s = self.defaults.clone();
        if let Some(v) = req.variant {
            s.variant = v.parse::<PromptVariant>().map_err(ApiError::BadRequest)?;
        }
        if let Some(m) = req.mode {
            s.mode = m.parse::<PostProcessMode>().map_err(ApiError::BadRequest)?;
        }
        if let Some(l) = req.language {
            s.language = l;
        }
        if let Some(g) = req.starting_gold {
            s.starting_gold = g;
        }
        Ok(s)
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

/// Decodes a JSON body; an empty body decodes as `T::default()` when allowed.
fn decode<T: serde::de::DeserializeOwned>(body: &[u8], empty: Option<T>) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        if let Some(d) = empty {
            return Ok(d);
        }
    }
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("invalid request body: {e}")))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let settings = state.settings(decode(&body, Some(CreateSession::default()))?)?;
    let session = state.store.create(&state.world, &settings)?;
    let view = SessionView::new(&session);
    state
        .sessions
        .lock()
        .expect("session map lock")
        .insert(session.id.clone(), Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    let guard = session.lock().await;
    Ok(Json(SessionView::new(&guard)))
}

async fn post_message(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<MessageView>, ApiError> {
    let body: PostMessage = decode(&body, None)?;
    let text = body.player_text.trim().to_string();
    if text.is_empty() {
        return Err(ApiError::BadRequest("player_text must not be empty".into()));
    }
    let session = state.session(&id)?;
    let mut guard = session.try_lock().map_err(|_| ApiError::Busy)?;
    guard.ensure_open()?;

    let world = guard.world.clone();
    let history = guard.transcript.turns.clone();
    let (variant, mode, language) = (guard.variant(), guard.mode(), guard.transcript.language.clone());
    let shared = state.clone();
    let turn = tokio::task::spawn_blocking(move || {
        let setup = NpcSetup {
            templates: &shared.templates,
            variant,
            mode,
            language: &language,
            params: &shared.params,
        };
        npc_round(&setup, &world, &history, &text, shared.backend.as_ref())
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
    .map_err(|e| match e {
        RoundError::Backend(b) => ApiError::Backend(b.to_string()),
        RoundError::Prompt(p) => ApiError::Internal(p.to_string()),
    })?;

    guard.record(turn)?;
    let turn = guard.transcript.turns.last().expect("just recorded");
    Ok(Json(MessageView {
        turn: TurnView::new(turn, guard.effects.get(&turn.round_index)),
        status: guard.status(),
        gold: guard.gold,
    }))
}

/// CORS for the configured origins; `*` allows any.
pub fn cors(origins: &[String]) -> CorsLayer {
    let base = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.iter().any(|o| o == "*") {
        return base.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    base.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .layer(cors(cors_origins))
        .with_state(state)
}
