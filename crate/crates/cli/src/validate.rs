//! Lint mode: re-derives every turn's validation from the raw model output.

use std::path::{Path, PathBuf};

use serde::Serialize;
use tradeflow_core::backend::Completion;
use tradeflow_core::domain::{GameWorld, UsageStats};
use tradeflow_core::engine::process_completion;
use tradeflow_core::prompt::{PostProcessMode, PromptVariant};
use tradeflow_core::transcript::{transcript_files, DialogueTurn, Transcript};

use crate::args::ValidateArgs;
use crate::simulate::load_world;
use crate::CliError;

#[derive(Debug, Serialize)]
struct Finding {
    file: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    round: Option<u32>,
    issues: Vec<String>,
}

/// Human-readable problems with one turn; empty when it is clean.
pub fn issues(turn: &DialogueTurn) -> Vec<String> {
    let v = &turn.validation;
    let mut out = Vec::new();
    if let Err(e) = &turn.parsed {
        out.push(format!("parse error: {}", e.reason));
    }
    if let Some(name) = &v.state_hallucination {
        let nearest = v.notes.iter().find_map(|n| n.split_once("(nearest ").map(|(_, r)| r.trim_end_matches(')')));
        let hint = nearest.map(|n| format!(", nearest {n}")).unwrap_or_default();
        out.push(format!("hallucinated state {name}{hint}"));
    }
    for iv in &v.item_violations {
        match &iv.item_id {
            Some(id) => out.push(format!("{:?}: {id}", iv.kind)),
            None => out.push(format!("{:?}", iv.kind)),
        }
    }
    if v.placeholder_misuse {
        out.push("price placeholder outside OFFER_SELL".into());
    }
    for m in &v.malformed_placeholders {
        out.push(format!("malformed placeholder {m}"));
    }
    if turn.parsed.is_ok() && !v.schema_ok {
        out.push("schema violation".into());
    }
    if let Some(p) = turn.price.as_ref().filter(|p| p.applicable && !p.accurate) {
        out.push(format!(
            "price mismatch: stated {}, items total {}",
            p.stated_total.map_or("nothing".into(), |s| s.to_string()),
            p.computed_total
        ));
    }
    out
}

fn recheck(turn: &DialogueTurn, variant: PromptVariant, mode: PostProcessMode, world: &GameWorld) -> DialogueTurn {
    let completion = Completion { text: turn.raw_npc_output.clone(), usage: UsageStats::default() };
    process_completion(variant, mode, world, turn.round_index, &turn.player_utterance, completion)
}

fn check_transcript(path: &Path, t: &Transcript, fallback: &GameWorld, out: &mut Vec<Finding>) -> Result<usize, CliError> {
    let embedded = t.meta.get("world").map(|w| serde_json::from_value::<GameWorld>(w.clone())).transpose();
    let embedded = embedded.map_err(|e| CliError::Usage(format!("{}: embedded world: {e}", path.display())))?;
    let world = embedded.as_ref().unwrap_or(fallback);
    for turn in &t.turns {
        let fresh = recheck(turn, t.prompt_variant, t.mode, world);
        let mut found = issues(&fresh);
        if fresh.validation != turn.validation {
            found.push("stored validation differs from a fresh check".into());
        }
        if !found.is_empty() {
            out.push(Finding { file: path.to_path_buf(), round: Some(turn.round_index), issues: found });
        }
    }
    Ok(t.turns.len())
}

pub fn run(a: ValidateArgs) -> Result<(), CliError> {
    let world = load_world(&a.world)?;
    let mut findings = Vec::new();
    let mut checked = 0usize;
    if a.input.is_dir() {
        let files = transcript_files(&a.input).map_err(CliError::usage)?;
        if files.is_empty() {
            return Err(CliError::Usage(format!("no transcripts (*.jsonl) in {}", a.input.display())));
        }
        for f in files {
            let t = Transcript::read_jsonl(&f).map_err(CliError::usage)?;
            checked += check_transcript(&f, &t, &world, &mut findings)?;
        }
    } else {
        let text = std::fs::read_to_string(&a.input)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", a.input.display())))?;
        match Transcript::from_jsonl(&text) {
            Ok(t) => checked += check_transcript(&a.input, &t, &world, &mut findings)?,
            Err(_) => {
                let turn = process_completion(
                    a.variant,
                    a.mode,
                    &world,
                    1,
                    "",
                    Completion { text, usage: UsageStats::default() },
                );
                checked += 1;
                let found = issues(&turn);
                if !found.is_empty() {
                    findings.push(Finding { file: a.input.clone(), round: None, issues: found });
                }
            }
        }
    }

    if a.json {
        println!("{}", serde_json::to_string_pretty(&findings).expect("findings serialize"));
    } else {
        for f in &findings {
            let at = f.round.map(|r| format!(" round {r}")).unwrap_or_default();
            println!("{}{at}: {}", f.file.display(), f.issues.join("; "));
        }
        println!("{checked} response(s) checked, {} with findings", findings.len());
    }
    if findings.is_empty() {
        Ok(())
    } else {
        Err(CliError::Findings(format!("{} response(s) with findings", findings.len())))
    }
}
