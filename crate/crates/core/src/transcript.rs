//! Dialogue transcripts and their JSONL encoding.
//!
//! A transcript file holds one header line, one line per turn and, once the
//! dialogue is over, an end line:
//!
//! ```text
//! {"kind":"header","seed":7,"scenario":{...},"prompt_variant":{...},"mode":"price_placeholder",...}
//! {"kind":"turn","round_index":1,"player_utterance":"...","raw_npc_output":"...",...}
//! {"kind":"end","termination":"ConfirmSell"}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::domain::{NpcResponse, UsageStats};
use crate::parser::{ParseError, ValidationReport};
use crate::postprocess::PriceVerdict;
use crate::prompt::{PostProcessMode, PromptVariant};
use crate::simulator::ScenarioSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Termination {
    ConfirmSell,
    EndConversation,
    PlayerEnd,
    MaxRounds,
    BackendError,
}

impl Termination {
    pub const ALL: [Termination; 5] = [
        Self::ConfirmSell,
        Self::EndConversation,
        Self::PlayerEnd,
        Self::MaxRounds,
        Self::BackendError,
    ];
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// One round: a player utterance and the NPC's reply with everything derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "TurnRecord", from = "TurnRecord")]
pub struct DialogueTurn {
    pub round_index: u32,
    pub player_utterance: String,
    pub raw_npc_output: String,
    pub parsed: Result<NpcResponse, ParseError>,
    /// The response after post-processing; what the player sees.
    pub processed: Option<NpcResponse>,
    pub processed_dialogue: String,
    pub usage: UsageStats,
    pub validation: ValidationReport,
    pub price: Option<PriceVerdict>,
}

impl DialogueTurn {
    pub fn response(&self) -> Option<&NpcResponse> {
        self.parsed.as_ref().ok()
    }

    /// The response after post-processing, falling back to the parsed one.
    pub fn final_response(&self) -> Option<&NpcResponse> {
        self.processed.as_ref().or_else(|| self.response())
    }
}

#[derive(Serialize, Deserialize)]
struct TurnRecord {
    round_index: u32,
    player_utterance: String,
    raw_npc_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parsed: Option<NpcResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    parse_error: Option<ParseError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    processed: Option<NpcResponse>,
    processed_dialogue: String,
    usage: UsageStats,
    validation: ValidationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    price: Option<PriceVerdict>,
}

impl From<DialogueTurn> for TurnRecord {
    fn from(t: DialogueTurn) -> Self {
        let (parsed, parse_error) = match t.parsed {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e)),
        };
        Self {
            round_index: t.round_index,
            player_utterance: t.player_utterance,
            raw_npc_output: t.raw_npc_output,
            parsed,
            parse_error,
            processed: t.processed,
            processed_dialogue: t.processed_dialogue,
            usage: t.usage,
            validation: t.validation,
            price: t.price,
        }
    }
}

impl From<TurnRecord> for DialogueTurn {
    fn from(r: TurnRecord) -> Self {
        let parsed = match (r.parsed, r.parse_error) {
            (Some(p), _) => Ok(p),
            (None, Some(e)) => Err(e),
            (None, None) => Err(ParseError {
                reason: "turn record has neither parsed nor parse_error".into(),
                raw_excerpt: String::new(),
                missing_fields: Vec::new(),
                state_name: None,
            }),
        };
        Self {
            round_index: r.round_index,
            player_utterance: r.player_utterance,
            raw_npc_output: r.raw_npc_output,
            parsed,
            processed: r.processed,
            processed_dialogue: r.processed_dialogue,
            usage: r.usage,
            validation: r.validation,
            price: r.price,
        }
    }
}

/// A complete (or, for live sessions, in-progress) dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub seed: u64,
    pub scenario: Option<ScenarioSpec>,
    pub prompt_variant: PromptVariant,
    pub mode: PostProcessMode,
    pub language: String,
    /// Free-form header data (e.g. interactive session bookkeeping).
    pub meta: BTreeMap<String, Value>,
    pub turns: Vec<DialogueTurn>,
    pub termination: Option<Termination>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSpec>,
    pub prompt_variant: PromptVariant,
    pub mode: PostProcessMode,
    pub language: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum TranscriptLine {
    Header(TranscriptHeader),
    Turn(DialogueTurn),
    End { termination: Termination },
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {message}")]
    Structure { line: usize, message: String },
}

impl TranscriptError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

impl Transcript {
    pub fn new(header: TranscriptHeader) -> Self {
        Self {
            seed: header.seed,
            scenario: header.scenario,
            prompt_variant: header.prompt_variant,
            mode: header.mode,
            language: header.language,
            meta: header.meta,
            turns: Vec::new(),
            termination: None,
        }
    }

    pub fn header(&self) -> TranscriptHeader {
        TranscriptHeader {
            seed: self.seed,
            scenario: self.scenario.clone(),
            prompt_variant: self.prompt_variant,
            mode: self.mode,
            language: self.language.clone(),
            meta: self.meta.clone(),
        }
    }

    pub fn header_line(&self) -> String {
        line_json(&TranscriptLine::Header(self.header()))
    }

    pub fn turn_line(turn: &DialogueTurn) -> String {
        line_json(&TranscriptLine::Turn(turn.clone()))
    }

    pub fn end_line(termination: Termination) -> String {
        line_json(&TranscriptLine::End { termination })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = self.header_line();
        out.push('\n');
        for t in &self.turns {
            out.push_str(&Self::turn_line(t));
            out.push('\n');
        }
        if let Some(term) = self.termination {
            out.push_str(&Self::end_line(term));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TranscriptError> {
        let mut transcript: Option<Transcript> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let parsed: TranscriptLine =
                serde_json::from_str(raw).map_err(|source| TranscriptError::Json { line, source })?;
            let structure = |message: &str| TranscriptError::Structure { line, message: message.into() };
            match parsed {
                TranscriptLine::Header(h) => {
                    if transcript.is_some() {
                        return Err(structure("duplicate header"));
                    }
                    transcript = Some(Transcript::new(h));
                }
                TranscriptLine::Turn(turn) => {
                    let t = transcript.as_mut().ok_or_else(|| structure("turn before header"))?;
                    if t.termination.is_some() {
                        return Err(structure("turn after end"));
                    }
                    t.turns.push(turn);
                }
                TranscriptLine::End { termination } => {
                    let t = transcript.as_mut().ok_or_else(|| structure("end before header"))?;
                    if t.termination.replace(termination).is_some() {
                        return Err(structure("termination recorded twice"));
                    }
                }
            }
        }
        transcript.ok_or(TranscriptError::Structure { line: 0, message: "empty transcript".into() })
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<(), TranscriptError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| TranscriptError::io(path, e))
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self, TranscriptError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TranscriptError::io(path, e))?;
        Self::from_jsonl(&text)
    }

    /// Appends one line to an existing transcript file.
    pub fn append_line(path: impl AsRef<Path>, line: &str) -> Result<(), TranscriptError> {
        let path = path.as_ref();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| TranscriptError::io(path, e))?;
        writeln!(f, "{line}").map_err(|e| TranscriptError::io(path, e))
    }
}

fn line_json(line: &TranscriptLine) -> String {
    serde_json::to_string(line).expect("transcript lines serialize")
}

/// Transcript files (`*.jsonl`) directly under `dir`, sorted by name.
pub fn transcript_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, TranscriptError> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| TranscriptError::io(dir, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every transcript in `dir`, ordered by seed (ties by file name).
pub fn load_transcripts(dir: impl AsRef<Path>) -> Result<Vec<Transcript>, TranscriptError> {
    let mut out = transcript_files(dir)?
        .into_iter()
        .map(Transcript::read_jsonl)
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by_key(|t| t.seed);
    Ok(out)
}
