//! Prompt assembly for the merchant NPC and the virtual player.
//!
//! Templates are plain UTF-8 text with `{name}` variables and flag-guarded
//! blocks written as HTML comments:
//!
//! ```text
//! <!-- if explain_transitions --> ... <!-- else --> ... <!-- endif -->
//! <!-- if !respond_prev_state --> ... <!-- endif -->
//! ```
//!
//! A line holding nothing but a marker disappears entirely; markers inside a
//! line guard just the enclosed span. Blocks nest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{ContextType, GameWorld};
use crate::simulator::{ScenarioKind, ScenarioSpec};
use crate::transcript::DialogueTurn;

pub const NPC_TEMPLATE: &str = "npc.tmpl";
pub const PLAYER_PURCHASE_TEMPLATE: &str = "player_purchase.tmpl";
pub const PLAYER_RECOMMEND_TEMPLATE: &str = "player_recommend.tmpl";
pub const DEFAULT_LANGUAGE: &str = "Korean";

/// Which of the four prompt design elements are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptVariant {
    /// State definitions. On in every named configuration.
    pub explain_states: bool,
    /// Transition conditions that reference the previous sub-context.
    pub explain_transitions: bool,
    /// Directive to identify the previous sub-context from the history.
    pub identify_prev_state: bool,
    /// Directive to echo the previous sub-context as `last_trade_context`.
    pub respond_prev_state: bool,
}

impl PromptVariant {
    pub const BASELINE1: Self = Self::with(false, false, false);
    pub const BASELINE2: Self = Self::with(true, false, false);
    pub const BASELINE3: Self = Self::with(true, true, false);
    pub const BASELINE4: Self = Self::with(true, false, true);
    pub const SIBP: Self = Self::with(true, true, true);

    pub const NAMED: [(&'static str, Self); 5] = [
        ("baseline1", Self::BASELINE1),
        ("baseline2", Self::BASELINE2),
        ("baseline3", Self::BASELINE3),
        ("baseline4", Self::BASELINE4),
        ("sibp", Self::SIBP),
    ];

    const fn with(transitions: bool, identify: bool, respond: bool) -> Self {
        Self {
            explain_states: true,
            explain_transitions: transitions,
            identify_prev_state: identify,
            respond_prev_state: respond,
        }
    }

    pub fn name(&self) -> Option<&'static str> {
        Self::NAMED.iter().find(|(_, v)| v == self).map(|(n, _)| *n)
    }

    fn flag(&self, name: &str, mode: PostProcessMode) -> Option<bool> {
        Some(match name {
            "explain_states" => self.explain_states,
            "explain_transitions" => self.explain_transitions,
            "identify_prev_state" => self.identify_prev_state,
            "respond_prev_state" => self.respond_prev_state,
            "price_placeholder" => mode == PostProcessMode::PricePlaceholder,
            _ => return None,
        })
    }
}

impl Default for PromptVariant {
    fn default() -> Self {
        Self::SIBP
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            Some(n) => f.write_str(n),
            None => write!(
                f,
                "custom({}{}{}{})",
                self.explain_states as u8,
                self.explain_transitions as u8,
                self.identify_prev_state as u8,
                self.respond_prev_state as u8
            ),
        }
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::NAMED
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(s))
            .map(|(_, v)| *v)
            .ok_or_else(|| format!("unknown variant `{s}` (expected sibp or baseline1..4)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostProcessMode {
    /// The model states totals itself; no placeholder instructions.
    None,
    /// OFFER_SELL totals are written as `__PRICE__` and filled in by the engine.
    #[default]
    PricePlaceholder,
}

impl FromStr for PostProcessMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "ppp" | "price_placeholder" => Ok(Self::PricePlaceholder),
            _ => Err(format!("unknown mode `{s}` (expected ppp or none)")),
        }
    }
}

impl fmt::Display for PostProcessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::PricePlaceholder => "ppp",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("missing template variable `{0}`")]
    MissingVariable(String),
    #[error("template not found: {0}")]
    TemplateNotFound(String),
    #[error("{template}:{line}: {message}")]
    Syntax {
        template: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Var(String),
    Cond {
        flag: String,
        negate: bool,
        then: Vec<Segment>,
        otherwise: Vec<Segment>,
    },
}

/// A parsed template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    segments: Vec<Segment>,
}

enum Marker {
    If { flag: String, negate: bool },
    Else,
    EndIf,
}

fn parse_marker(body: &str) -> Option<Marker> {
    let body = body.trim();
    if body == "else" {
        return Some(Marker::Else);
    }
    if body == "endif" {
        return Some(Marker::EndIf);
    }
    let cond = body.strip_prefix("if ")?.trim();
    let (negate, flag) = match cond.strip_prefix('!') {
        Some(f) => (true, f.trim()),
        None => (false, cond),
    };
    let valid = !flag.is_empty() && flag.chars().all(|c| c.is_ascii_lowercase() || c == '_');
    valid.then(|| Marker::If { flag: flag.to_string(), negate })
}

fn is_var_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

struct Frame {
    flag: String,
    negate: bool,
    then: Vec<Segment>,
    otherwise: Option<Vec<Segment>>,
    line: usize,
}

impl PromptTemplate {
    pub fn parse(name: &str, source: &str) -> Result<Self, PromptError> {
        let syntax = |line: usize, message: &str| PromptError::Syntax {
            template: name.to_string(),
            line,
            message: message.to_string(),
        };
        let mut stack: Vec<Frame> = Vec::new();
        let mut root: Vec<Segment> = Vec::new();

        fn current<'a>(root: &'a mut Vec<Segment>, stack: &'a mut [Frame]) -> &'a mut Vec<Segment> {
            match stack.last_mut() {
                Some(f) => f.otherwise.as_mut().unwrap_or(&mut f.then),
                None => root,
            }
        }

        for (idx, line) in source.split_inclusive('\n').enumerate() {
            let line_no = idx + 1;
            let content = line.trim_end_matches(['\n', '\r']);
            let trimmed = content.trim();
            let standalone = trimmed.starts_with("<!--")
                && trimmed.ends_with("-->")
                && trimmed.matches("<!--").count() == 1
                && trimmed.len() >= 7
                && parse_marker(&trimmed[4..trimmed.len() - 3]).is_some();
            // A marker alone on its line swallows the line break too.
            let mut rest: &str = if standalone { trimmed } else { line };

            while !rest.is_empty() {
                let Some(open) = rest.find("<!--") else {
                    push_text(current(&mut root, &mut stack), rest);
                    break;
                };
                let Some(close) = rest[open..].find("-->").map(|c| open + c) else {
                    push_text(current(&mut root, &mut stack), rest);
                    break;
                };
                let Some(marker) = parse_marker(&rest[open + 4..close]) else {
                    // Ordinary comment: keep verbatim.
                    push_text(current(&mut root, &mut stack), &rest[..close + 3]);
                    rest = &rest[close + 3..];
                    continue;
                };
                push_text(current(&mut root, &mut stack), &rest[..open]);
                rest = &rest[close + 3..];
                match marker {
                    Marker::If { flag, negate } => stack.push(Frame {
                        flag,
                        negate,
                        then: Vec::new(),
                        otherwise: None,
                        line: line_no,
                    }),
                    Marker::Else => {
                        let frame = stack.last_mut().ok_or_else(|| syntax(line_no, "else without if"))?;
                        if frame.otherwise.is_some() {
                            return Err(syntax(line_no, "duplicate else"));
                        }
                        frame.otherwise = Some(Vec::new());
                    }
                    Marker::EndIf => {
                        let frame = stack.pop().ok_or_else(|| syntax(line_no, "endif without if"))?;
                        current(&mut root, &mut stack).push(Segment::Cond {
                            flag: frame.flag,
                            negate: frame.negate,
                            then: frame.then,
                            otherwise: frame.otherwise.unwrap_or_default(),
                        });
                    }
                }
            }
        }
        if let Some(frame) = stack.last() {
            return Err(syntax(frame.line, "unterminated if block"));
        }
        Ok(Self { name: name.to_string(), segments: root })
    }

    /// Names of all variables referenced anywhere in the template.
    pub fn variables(&self) -> Vec<String> {
        fn walk(segs: &[Segment], out: &mut Vec<String>) {
            for s in segs {
                match s {
                    Segment::Var(v) if !out.contains(v) => out.push(v.clone()),
                    Segment::Cond { then, otherwise, .. } => {
                        walk(then, out);
                        walk(otherwise, out);
                    }
                    _ => {}
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.segments, &mut out);
        out
    }

    /// Renders with the given flag lookup and variables. Values are inserted
    /// verbatim and never re-expanded.
    pub fn render(
        &self,
        flags: &dyn Fn(&str) -> Option<bool>,
        vars: &BTreeMap<&str, String>,
    ) -> Result<String, PromptError> {
        let mut out = String::new();
        self.render_into(&self.segments, flags, vars, &mut out)?;
        Ok(out)
    }

    fn render_into(
        &self,
        segs: &[Segment],
        flags: &dyn Fn(&str) -> Option<bool>,
        vars: &BTreeMap<&str, String>,
        out: &mut String,
    ) -> Result<(), PromptError> {
        for seg in segs {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Var(v) => {
                    out.push_str(vars.get(v.as_str()).ok_or_else(|| PromptError::MissingVariable(v.clone()))?)
                }
                Segment::Cond { flag, negate, then, otherwise } => {
                    let value = flags(flag).ok_or_else(|| PromptError::Syntax {
                        template: self.name.clone(),
                        line: 0,
                        message: format!("unknown flag `{flag}`"),
                    })?;
                    let branch = if value != *negate { then } else { otherwise };
                    self.render_into(branch, flags, vars, out)?;
                }
            }
        }
        Ok(())
    }
}

fn push_text(out: &mut Vec<Segment>, text: &str) {
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let var = rest[open + 1..].find('}').map(|c| &rest[open + 1..open + 1 + c]);
        match var {
            Some(name) if is_var_name(name) => {
                push_literal(out, &rest[..open]);
                out.push(Segment::Var(name.to_string()));
                rest = &rest[open + name.len() + 2..];
            }
            _ => {
                push_literal(out, &rest[..=open]);
                rest = &rest[open + 1..];
            }
        }
    }
    push_literal(out, rest);
}

fn push_literal(out: &mut Vec<Segment>, text: &str) {
    if text.is_empty() {
        return;
    }
    if let Some(Segment::Text(prev)) = out.last_mut() {
        prev.push_str(text);
    } else {
        out.push(Segment::Text(text.to_string()));
    }
}

/// The three prompt templates, parsed once and shared read-only.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub npc: PromptTemplate,
    pub player_purchase: PromptTemplate,
    pub player_recommend: PromptTemplate,
}

impl TemplateSet {
    /// The templates compiled into the crate.
    pub fn builtin() -> Self {
        let parse = |name, src| PromptTemplate::parse(name, src).expect("builtin templates are valid");
        Self {
            npc: parse(NPC_TEMPLATE, include_str!("../templates/npc.tmpl")),
            player_purchase: parse(PLAYER_PURCHASE_TEMPLATE, include_str!("../templates/player_purchase.tmpl")),
            player_recommend: parse(PLAYER_RECOMMEND_TEMPLATE, include_str!("../templates/player_recommend.tmpl")),
        }
    }

    /// Loads `npc.tmpl`, `player_purchase.tmpl` and `player_recommend.tmpl` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let load = |name: &str| -> Result<PromptTemplate, PromptError> {
            let path = dir.join(name);
            let src = std::fs::read_to_string(&path)
                .map_err(|_| PromptError::TemplateNotFound(path.display().to_string()))?;
            PromptTemplate::parse(name, &src)
        };
        Ok(Self {
            npc: load(NPC_TEMPLATE)?,
            player_purchase: load(PLAYER_PURCHASE_TEMPLATE)?,
            player_recommend: load(PLAYER_RECOMMEND_TEMPLATE)?,
        })
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// JSON array with one object per line.
fn json_lines<T: Serialize>(items: &[T]) -> String {
    if items.is_empty() {
        return "[]".to_string();
    }
    let rows: Vec<String> = items
        .iter()
        .map(|i| format!("  {}", serde_json::to_string(i).expect("items serialize")))
        .collect();
    format!("[\n{}\n]", rows.join(",\n"))
}

/// `[TRADE/OFFER_SELL]`-style tag for a parsed turn, `[UNPARSED]` otherwise.
pub fn state_tag(turn: &DialogueTurn) -> String {
    match turn.parsed.as_ref() {
        Ok(resp) => match (resp.context_type, resp.raw_subtype()) {
            (ContextType::Trade, Some(sub)) => format!("[TRADE/{sub}]"),
            (ct, _) => format!("[{ct}]"),
        },
        Err(_) => "[UNPARSED]".to_string(),
    }
}

/// Renders prior rounds, then the pending player line if given.
///
/// NPC lines carry the post-processed dialogue; with `annotate_states` they are
/// prefixed by the inferred state tag. Unparsed NPC turns are always tagged
/// `[UNPARSED]` and show the raw output.
pub fn format_history(turns: &[DialogueTurn], pending_player: Option<&str>, annotate_states: bool) -> String {
    let mut lines = Vec::with_capacity(turns.len() * 2 + 1);
    for turn in turns {
        lines.push(format!("Player: {}", turn.player_utterance));
        let npc = match &turn.parsed {
            Ok(_) if annotate_states => format!("NPC: {} {}", state_tag(turn), turn.processed_dialogue),
            Ok(_) => format!("NPC: {}", turn.processed_dialogue),
            Err(_) => format!("NPC: [UNPARSED] {}", turn.raw_npc_output.trim()),
        };
        lines.push(npc);
    }
    if let Some(p) = pending_player {
        lines.push(format!("Player: {p}"));
    }
    lines.join("\n")
}

fn game_items(world: &GameWorld) -> String {
    json_lines(&world.catalog)
}

/// Builds the merchant prompt for the next NPC turn.
pub fn render_npc_prompt(
    templates: &TemplateSet,
    world: &GameWorld,
    history: &[DialogueTurn],
    player_utterance: &str,
    variant: &PromptVariant,
    mode: PostProcessMode,
    language: &str,
) -> Result<String, PromptError> {
    let vars = BTreeMap::from([
        ("character_name", world.character_name.clone()),
        ("game_items", game_items(world)),
        ("character_info", world.character_info.clone()),
        ("merchant_inventory", json_lines(&world.inventory)),
        ("current_location", world.location.clone()),
        ("current_time", world.time.clone()),
        (
            "formatted_history",
            format_history(history, Some(player_utterance), variant.respond_prev_state),
        ),
        ("response_language", language.to_string()),
    ]);
    templates.npc.render(&|f| variant.flag(f, mode), &vars)
}

/// Builds the virtual player's prompt. The history is always state-annotated
/// so the termination rule can see CONFIRM_SELL / END_CONVERSATION.
pub fn render_player_prompt(
    templates: &TemplateSet,
    scenario: &ScenarioSpec,
    world: &GameWorld,
    history: &[DialogueTurn],
) -> Result<String, PromptError> {
    let template = match scenario.kind {
        ScenarioKind::Purchase => &templates.player_purchase,
        ScenarioKind::Recommendation => &templates.player_recommend,
    };
    let vars = BTreeMap::from([
        ("game_items", game_items(world)),
        ("formatted_history", format_history(history, None, true)),
    ]);
    let mut text = template.render(&|_| None, &vars)?;
    let trimmed = text.trim_end().len();
    text.truncate(trimmed);
    Ok(text)
}

/// Section tags (`<NAME>`) that open a block, in order of appearance.
pub fn section_tags(prompt: &str) -> Vec<String> {
    prompt
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            let inner = l.strip_prefix('<')?.strip_suffix('>')?;
            (!inner.starts_with('/') && inner.chars().all(|c| c.is_ascii_uppercase() || c == '_'))
                .then(|| inner.to_string())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags<'a>(map: &'a [(&'a str, bool)]) -> impl Fn(&str) -> Option<bool> + 'a {
        move |f| map.iter().find(|(n, _)| *n == f).map(|(_, v)| *v)
    }

    #[test]
    fn named_variants_match_ablation_table() {
        let rows = [
            ("baseline1", [true, false, false, false]),
            ("baseline2", [true, true, false, false]),
            ("baseline3", [true, true, true, false]),
            ("baseline4", [true, true, false, true]),
            ("sibp", [true, true, true, true]),
        ];
        for (name, bits) in rows {
            let v: PromptVariant = name.parse().unwrap();
            assert_eq!(
                [v.explain_states, v.explain_transitions, v.identify_prev_state, v.respond_prev_state],
                bits,
                "{name}"
            );
            assert_eq!(v.name(), Some(name));
        }
        assert!("baseline5".parse::<PromptVariant>().is_err());
    }

    #[test]
    fn standalone_markers_remove_lines() {
        let t = PromptTemplate::parse("t", "a\n<!-- if x -->\nb\n<!-- else -->\nc\n<!-- endif -->\nd\n").unwrap();
        let vars = BTreeMap::new();
        assert_eq!(t.render(&flags(&[("x", true)]), &vars).unwrap(), "a\nb\nd\n");
        assert_eq!(t.render(&flags(&[("x", false)]), &vars).unwrap(), "a\nc\nd\n");
    }

    #[test]
    fn inline_markers_and_negation() {
        let t = PromptTemplate::parse("t", "When <!-- if !x -->never <!-- endif -->{who} speaks<!-- if x --> twice<!-- endif -->.").unwrap();
        let vars = BTreeMap::from([("who", "Brom".to_string())]);
        assert_eq!(t.render(&flags(&[("x", true)]), &vars).unwrap(), "When Brom speaks twice.");
        assert_eq!(t.render(&flags(&[("x", false)]), &vars).unwrap(), "When never Brom speaks.");
    }

    #[test]
    fn nested_blocks() {
        let src = "<!-- if a -->\n<!-- if b -->\nab\n<!-- endif -->\na\n<!-- endif -->\nz";
        let t = PromptTemplate::parse("t", src).unwrap();
        let vars = BTreeMap::new();
        assert_eq!(t.render(&flags(&[("a", true), ("b", true)]), &vars).unwrap(), "ab\na\nz");
        assert_eq!(t.render(&flags(&[("a", true), ("b", false)]), &vars).unwrap(), "a\nz");
        assert_eq!(t.render(&flags(&[("a", false), ("b", true)]), &vars).unwrap(), "z");
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(PromptTemplate::parse("t", "<!-- if a -->\nx"), Err(PromptError::Syntax { line: 1, .. })));
        assert!(matches!(PromptTemplate::parse("t", "x\n<!-- endif -->"), Err(PromptError::Syntax { line: 2, .. })));
        assert!(matches!(PromptTemplate::parse("t", "<!-- else -->"), Err(PromptError::Syntax { .. })));
    }

    #[test]
    fn missing_variable() {
        let t = PromptTemplate::parse("t", "hi {name}").unwrap();
        let err = t.render(&|_| None, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, PromptError::MissingVariable(v) if v == "name"));
    }

    #[test]
    fn braces_that_are_not_variables_stay_literal() {
        let t = PromptTemplate::parse("t", "{\"a\": 1} {Name} {x}").unwrap();
        let vars = BTreeMap::from([("x", "{y}".to_string())]);
        assert_eq!(t.render(&|_| None, &vars).unwrap(), "{\"a\": 1} {Name} {y}");
        assert_eq!(t.variables(), vec!["x"]);
    }

    #[test]
    fn ordinary_comments_survive() {
        let t = PromptTemplate::parse("t", "<!-- note -->\nx").unwrap();
        assert_eq!(t.render(&|_| None, &BTreeMap::new()).unwrap(), "<!-- note -->\nx");
    }

    #[test]
    fn load_dir_reports_missing_template() {
        let dir = std::env::temp_dir().join("tradeflow-no-templates-here");
        assert!(matches!(TemplateSet::load_dir(&dir), Err(PromptError::TemplateNotFound(_))));
    }

    #[test]
    fn builtin_templates_declare_expected_variables() {
        let set = TemplateSet::builtin();
        let mut vars = set.npc.variables();
        vars.sort();
        assert_eq!(
            vars,
            [
                "character_info",
                "character_name",
                "current_location",
                "current_time",
                "formatted_history",
                "game_items",
                "merchant_inventory",
                "response_language"
            ]
        );
        assert_eq!(set.player_recommend.variables(), vec!["formatted_history"]);
    }
}
