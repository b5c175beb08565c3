//! Seeded player-versus-merchant dialogues.
//!
//! # Scenario draws
//!
//! Scenario construction is pinned to ChaCha8 (the `rand_chacha` stream,
//! seeded with `seed_from_u64(seed)`) and a hand-specified bounded draw so the
//! same seed yields the same scenario in any implementation:
//!
//! * `below(n)`: take `next_u64()` values, reject any `x >= 2^64 - (2^64 mod n)`,
//!   return `x mod n`.
//! * Purchase: `k = 1 + below(6)`; then a partial Fisher-Yates over catalog
//!   indices `0..52`: for `i in 0..k`, `j = i + below(52 - i)`, swap `i, j`;
//!   the first `k` indices are the items. Each quantity is `1 + below(5)`,
//!   drawn in item order after all items are chosen.
//! * Recommendation: one draw `below(PURPOSES.len())`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::backend::{seed_file_name, BackendError, CompletionBackend, CompletionParams};
use crate::domain::GameWorld;
use crate::engine::{npc_round, ClosingState, NpcSetup, RoundError};
use crate::exec::Execution;
use crate::metrics::{round_stats, RoundStats};
use crate::prompt::{render_player_prompt, PostProcessMode, PromptVariant, TemplateSet};
use crate::transcript::{Termination, Transcript, TranscriptError, TranscriptHeader};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[serde(rename = "purchase")]
    Purchase,
    #[serde(rename = "recommend")]
    Recommendation,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Purchase => "purchase",
            Self::Recommendation => "recommend",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "purchase" => Ok(Self::Purchase),
            "recommend" | "recommendation" => Ok(Self::Recommendation),
            other => Err(format!("unknown scenario `{other}` (expected purchase or recommend)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestedItem {
    pub item_id: String,
    pub quantity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub requested_items: Vec<RequestedItem>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub purpose_text: String,
    pub initial_utterance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("catalog has {have} items, need at least {need}")]
    WorldTooSmall { need: usize, have: usize },
}

pub const MAX_PURCHASE_ITEMS: u64 = 6;
pub const MAX_QUANTITY: u64 = 5;

/// Purposes the recommendation-scenario player states.
pub const PURPOSES: [&str; 10] = [
    "exploring the flooded mines north of town",
    "a week-long hunting trip in the Whispering Woods",
    "clearing goblins out of the old watchtower",
    "my first lessons in fire magic",
    "guarding a merchant caravan across the dunes",
    "climbing the Frostpeak pass before winter",
    "camping out while I search the marshes for herbs",
    "delving into the crypt beneath the chapel",
    "a long night patrol on the city walls",
    "escorting pilgrims through bandit country",
];

/// ChaCha8 with the documented rejection-sampled bounded draw.
pub struct ScenarioRng(ChaCha8Rng);

impl ScenarioRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `0..n`; `n` must be non-zero.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let x = self.0.next_u64();
            if x <= zone {
                return x % n;
            }
        }
    }
}

pub fn generate_scenario(seed: u64, kind: ScenarioKind, world: &GameWorld) -> Result<ScenarioSpec, ScenarioError> {
    let mut rng = ScenarioRng::new(seed);
    match kind {
        ScenarioKind::Purchase => {
            let have = world.catalog.len();
            if (have as u64) < MAX_PURCHASE_ITEMS {
                return Err(ScenarioError::WorldTooSmall { need: MAX_PURCHASE_ITEMS as usize, have });
            }
            let k = 1 + rng.below(MAX_PURCHASE_ITEMS) as usize;
            let mut idx: Vec<usize> = (0..have).collect();
            for i in 0..k {
                let j = i + rng.below((have - i) as u64) as usize;
                idx.swap(i, j);
            }
            let mut requested_items = Vec::with_capacity(k);
            for &i in &idx[..k] {
                requested_items.push(RequestedItem { item_id: world.catalog[i].item_id.to_string(), quantity: 0 });
            }
            for r in &mut requested_items {
                r.quantity = 1 + rng.below(MAX_QUANTITY) as u32;
            }
            let phrases: Vec<String> = requested_items
                .iter()
                .map(|r| {
                    let name = world.catalog_item(&r.item_id).map(|g| g.item_name.as_str()).unwrap_or(&r.item_id);
                    item_phrase(name, r.quantity)
                })
                .collect();
            Ok(ScenarioSpec {
                kind,
                initial_utterance: format!("I'd like to purchase {}.", join_list(&phrases)),
                requested_items,
                purpose_text: String::new(),
            })
        }
        ScenarioKind::Recommendation => {
            let purpose = PURPOSES[rng.below(PURPOSES.len() as u64) as usize];
            Ok(ScenarioSpec {
                kind,
                requested_items: Vec::new(),
                purpose_text: purpose.to_string(),
                initial_utterance: format!("I came to buy some supplies needed for {purpose}. What would you recommend?"),
            })
        }
    }
}

/// Lower-cased plural of an item name. `X of Y` pluralizes `X`; names that
/// already end in `s` are left alone.
pub fn plural(name: &str) -> String {
    let lower = name.to_lowercase();
    if let Some((head, tail)) = lower.split_once(" of ") {
        return format!("{} of {tail}", plural_word(head));
    }
    plural_word(&lower)
}

fn plural_word(s: &str) -> String {
    if s.ends_with('s') {
        s.to_string()
    } else if s.ends_with("ch") || s.ends_with("sh") || s.ends_with('x') {
        format!("{s}es")
    } else if let Some(stem) = s.strip_suffix('y').filter(|st| !st.ends_with(['a', 'e', 'i', 'o', 'u'])) {
        format!("{stem}ies")
    } else if let Some(stem) = s.strip_suffix("fe") {
        format!("{stem}ves")
    } else {
        format!("{s}s")
    }
}

/// `"3 basic iron swords"`, `"1 torch"`.
pub fn item_phrase(name: &str, quantity: u32) -> String {
    if quantity == 1 {
        format!("1 {}", name.to_lowercase())
    } else {
        format!("{quantity} {}", plural(name))
    }
}

/// `a`, `a and b`, `a, b and c`.
pub fn join_list(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Whether a player line is the termination token `End` (case, quotes and
/// trailing punctuation ignored).
pub fn is_end_utterance(text: &str) -> bool {
    let t = text
        .trim()
        .trim_start_matches("Player:")
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c == '!' || c.is_whitespace());
    t.eq_ignore_ascii_case("end")
}

/// Player output as it enters the history: first non-empty line, without a
/// leading `Player:` cue.
pub fn normalize_player_output(text: &str) -> String {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    line.strip_prefix("Player:").unwrap_or(line).trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seeds: Range<u64>,
    pub kind: ScenarioKind,
    pub variant: PromptVariant,
    pub mode: PostProcessMode,
    pub language: String,
    pub max_rounds: u32,
    pub npc_params: CompletionParams,
    pub player_params: CompletionParams,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: 0..100,
            kind: ScenarioKind::Purchase,
            variant: PromptVariant::SIBP,
            mode: PostProcessMode::PricePlaceholder,
            language: "English".into(),
            max_rounds: 15,
            npc_params: CompletionParams::default(),
            player_params: CompletionParams::default(),
            execution: Execution::default(),
        }
    }
}

impl RunConfig {
    /// Hex SHA-256 of the configuration and world.
    pub fn config_hash(&self, world: &GameWorld) -> String {
        let v = json!({ "config": self, "world": world });
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

/// The two completion sources of one dialogue.
#[derive(Clone)]
pub struct SessionBackends {
    pub player: Arc<dyn CompletionBackend>,
    pub npc: Arc<dyn CompletionBackend>,
}

/// Hands out backends per seed. Implementations must give each seed its own
/// replay cursor.
pub trait BackendFactory: Send + Sync {
    fn session(&self, seed: u64, scenario: &ScenarioSpec) -> Result<SessionBackends, BackendError>;
}

impl<F: Fn(u64, &ScenarioSpec) -> Result<SessionBackends, BackendError> + Send + Sync> BackendFactory for F {
    fn session(&self, seed: u64, scenario: &ScenarioSpec) -> Result<SessionBackends, BackendError> {
        self(seed, scenario)
    }
}

fn header(cfg: &RunConfig, seed: u64, scenario: &ScenarioSpec) -> TranscriptHeader {
    TranscriptHeader {
        seed,
        scenario: Some(scenario.clone()),
        prompt_variant: cfg.variant,
        mode: cfg.mode,
        language: cfg.language.clone(),
        meta: BTreeMap::new(),
    }
}

/// Plays one dialogue to termination. Backend failures end it with
/// `BackendError`, keeping the turns so far.
pub fn run_dialogue(
    cfg: &RunConfig,
    world: &GameWorld,
    templates: &TemplateSet,
    seed: u64,
    scenario: &ScenarioSpec,
    backends: &SessionBackends,
) -> Transcript {
    let mut t = Transcript::new(header(cfg, seed, scenario));
    let tag = seed_file_name(seed);
    let npc_params = cfg.npc_params.clone().with_seed_tag(tag.clone());
    let player_params = cfg.player_params.clone().with_seed_tag(tag);
    let setup = NpcSetup {
        templates,
        variant: cfg.variant,
        mode: cfg.mode,
        language: &cfg.language,
        params: &npc_params,
    };
    let fail = |t: &mut Transcript, err: String| {
        tracing::warn!(seed, error = %err, "dialogue aborted");
        t.meta.insert("error".into(), Value::String(err));
        t.termination = Some(Termination::BackendError);
    };

    for round in 1..=cfg.max_rounds {
        let utterance = if round == 1 {
            scenario.initial_utterance.clone()
        } else {
            match next_player_line(templates, scenario, world, &t, &player_params, backends) {
                Ok(line) => line,
                Err(e) => {
                    fail(&mut t, e.to_string());
                    return t;
                }
            }
        };
        if is_end_utterance(&utterance) {
            t.termination = Some(Termination::PlayerEnd);
            return t;
        }
        let turn = match npc_round(&setup, world, &t.turns, &utterance, backends.npc.as_ref()) {
            Ok(turn) => turn,
            Err(e) => {
                fail(&mut t, e.to_string());
                return t;
            }
        };
        let closing = turn.closing();
        t.turns.push(turn);
        if let Some(closing) = closing {
            // the player still gets its closing line; it is recorded, not acted on
            match next_player_line(templates, scenario, world, &t, &player_params, backends) {
                Ok(line) => {
                    t.meta.insert("closing_player_line".into(), Value::String(line));
                }
                Err(e) => {
                    t.meta.insert("closing_player_error".into(), Value::String(e.to_string()));
                }
            }
            t.termination = Some(match closing {
                ClosingState::ConfirmSell => Termination::ConfirmSell,
                ClosingState::EndConversation => Termination::EndConversation,
            });
            return t;
        }
    }
    t.termination = Some(Termination::MaxRounds);
    t
}

fn next_player_line(
    templates: &TemplateSet,
    scenario: &ScenarioSpec,
    world: &GameWorld,
    t: &Transcript,
    params: &CompletionParams,
    backends: &SessionBackends,
) -> Result<String, RoundError> {
    let prompt = render_player_prompt(templates, scenario, world, &t.turns)?;
    let completion = backends.player.complete(&prompt, params)?;
    Ok(normalize_player_output(&completion.text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub transcripts: usize,
    pub terminations: BTreeMap<Termination, usize>,
    pub rounds: Option<RoundStats>,
    /// Seeds that hit the round cap.
    pub max_round_anomalies: Vec<u64>,
    pub failures: Vec<SeedFailure>,
}

impl BatchSummary {
    pub fn from_transcripts(transcripts: &[Transcript], failures: Vec<SeedFailure>) -> Self {
        let mut terminations = BTreeMap::new();
        for t in transcripts {
            if let Some(term) = t.termination {
                *terminations.entry(term).or_insert(0) += 1;
            }
        }
        Self {
            transcripts: transcripts.len(),
            terminations,
            rounds: round_stats(transcripts),
            max_round_anomalies: transcripts
                .iter()
                .filter(|t| t.termination == Some(Termination::MaxRounds))
                .map(|t| t.seed)
                .collect(),
            failures,
        }
    }

    pub fn backend_errors(&self) -> usize {
        self.terminations.get(&Termination::BackendError).copied().unwrap_or(0)
    }
}

#[derive(Debug)]
pub struct BatchOutput {
    pub transcripts: Vec<Transcript>,
    pub summary: BatchSummary,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Runs every seed in `cfg.seeds` and, with `out_dir`, writes one transcript
/// per seed plus `manifest.json`. Per-seed failures never abort the batch.
pub fn run_batch(
    cfg: &RunConfig,
    world: &GameWorld,
    templates: &TemplateSet,
    factory: &dyn BackendFactory,
    out_dir: Option<&Path>,
) -> Result<BatchOutput, BatchError> {
    let seeds: Vec<u64> = cfg.seeds.clone().collect();
    let results = cfg.execution.map(&seeds, |&seed| -> Result<Transcript, SeedFailure> {
        let fail = |message: String| SeedFailure { seed, message };
        let scenario = generate_scenario(seed, cfg.kind, world).map_err(|e| fail(e.to_string()))?;
        match factory.session(seed, &scenario) {
            Ok(backends) => Ok(run_dialogue(cfg, world, templates, seed, &scenario, &backends)),
            Err(e) => {
                let mut t = Transcript::new(header(cfg, seed, &scenario));
                t.meta.insert("error".into(), Value::String(e.to_string()));
                t.termination = Some(Termination::BackendError);
                Ok(t)
            }
        }
    });

    let mut transcripts = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(t) => transcripts.push(t),
            Err(f) => failures.push(f),
        }
    }
    let summary = BatchSummary::from_transcripts(&transcripts, failures);

    let mut files = Vec::new();
    if let Some(dir) = out_dir {
        let io = |path: &Path, source| BatchError::Io { path: path.to_path_buf(), source };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for t in &transcripts {
            let path = dir.join(seed_file_name(t.seed));
            t.write_jsonl(&path)?;
            files.push(path);
        }
        let manifest = json!({
            "config": cfg,
            "config_hash": cfg.config_hash(world),
            "files": transcripts.iter().map(|t| seed_file_name(t.seed)).collect::<Vec<_>>(),
            "summary": summary,
        });
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    }
    Ok(BatchOutput { transcripts, summary, files })
}
