//! The single NPC round used by both batch simulation and interactive
//! sessions: render, complete, parse, validate, post-process.

use crate::backend::{BackendError, Completion, CompletionBackend, CompletionParams};
use crate::domain::{ContextType, GameWorld, NpcResponse, TradeSubcontext};
use crate::parser::{parse_with_notes, validate_turn, ValidationReport};
use crate::postprocess::{apply_price_placeholder, check_price_accuracy};
use crate::prompt::{render_npc_prompt, PostProcessMode, PromptError, PromptVariant, TemplateSet};
use crate::transcript::DialogueTurn;

/// Everything about the NPC side that stays fixed over a dialogue.
#[derive(Debug, Clone, Copy)]
pub struct NpcSetup<'a> {
    pub templates: &'a TemplateSet,
    pub variant: PromptVariant,
    pub mode: PostProcessMode,
    pub language: &'a str,
    pub params: &'a CompletionParams,
}

#[derive(Debug, thiserror::Error)]
pub enum RoundError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Runs one NPC turn answering `player_utterance` after `history`.
pub fn npc_round(
    setup: &NpcSetup<'_>,
    world: &GameWorld,
    history: &[DialogueTurn],
    player_utterance: &str,
    backend: &dyn CompletionBackend,
) -> Result<DialogueTurn, RoundError> {
    let prompt = render_npc_prompt(
        setup.templates,
        world,
        history,
        player_utterance,
        &setup.variant,
        setup.mode,
        setup.language,
    )?;
    let completion = backend.complete(&prompt, setup.params)?;
    let round_index = history.len() as u32 + 1;
    Ok(process_completion(setup.variant, setup.mode, world, round_index, player_utterance, completion))
}

/// The post-completion half of a round; pure.
pub fn process_completion(
    variant: PromptVariant,
    mode: PostProcessMode,
    world: &GameWorld,
    round_index: u32,
    player_utterance: &str,
    completion: Completion,
) -> DialogueTurn {
    let raw = completion.text;
    match parse_with_notes(&raw) {
        Ok((resp, parse_notes)) => {
            let mut validation = validate_turn(&resp, world, &variant);
            validation.notes.extend(parse_notes);
            let price = check_price_accuracy(&resp, mode);
            let processed = match mode {
                PostProcessMode::PricePlaceholder => {
                    let outcome = apply_price_placeholder(&resp);
                    if outcome.replacements > 0 {
                        validation.notes.push(format!("{} placeholder(s) replaced", outcome.replacements));
                    }
                    outcome.response
                }
                PostProcessMode::None => resp.clone(),
            };
            DialogueTurn {
                round_index,
                player_utterance: player_utterance.to_string(),
                raw_npc_output: raw,
                processed_dialogue: processed.npc_dialogue.clone(),
                processed: Some(processed),
                parsed: Ok(resp),
                usage: completion.usage,
                validation,
                price,
            }
        }
        Err(err) => DialogueTurn {
            round_index,
            player_utterance: player_utterance.to_string(),
            validation: ValidationReport::for_parse_error(&err, &raw),
            processed_dialogue: raw.trim().to_string(),
            raw_npc_output: raw,
            parsed: Err(err),
            processed: None,
            usage: completion.usage,
            price: None,
        },
    }
}

/// Whether the NPC closed the session, and how.
pub fn closing_state(resp: &NpcResponse) -> Option<ClosingState> {
    match resp.context_type {
        ContextType::EndConversation => Some(ClosingState::EndConversation),
        ContextType::Trade if resp.subcontext() == Some(TradeSubcontext::ConfirmSell) => {
            Some(ClosingState::ConfirmSell)
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosingState {
    ConfirmSell,
    EndConversation,
}

impl DialogueTurn {
    pub fn closing(&self) -> Option<ClosingState> {
        self.response().and_then(closing_state)
    }
}
