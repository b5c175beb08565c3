//! The trade-state protocol: legal transitions, the mandatory confirmation
//! step and transition counting over transcripts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{ChainState, ContextType, TradeSubcontext};
use crate::transcript::Transcript;

/// Which adjacent state pairs are legal, and which sub-contexts demand a
/// specific predecessor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionRuleSet {
    mandatory_predecessor: Vec<(TradeSubcontext, TradeSubcontext)>,
}

impl Default for TransitionRuleSet {
    /// CONFIRM_SELL only after CHECK_CONFIRMATION; everything else is free.
    fn default() -> Self {
        Self {
            mandatory_predecessor: vec![(TradeSubcontext::ConfirmSell, TradeSubcontext::CheckConfirmation)],
        }
    }
}

impl TransitionRuleSet {
    pub fn mandatory_predecessor(&self, state: TradeSubcontext) -> Option<TradeSubcontext> {
        self.mandatory_predecessor
            .iter()
            .find(|(s, _)| *s == state)
            .map(|(_, p)| *p)
    }

    pub fn allowed(&self, from: ChainState, to: ChainState) -> bool {
        match (from, to) {
            (ChainState::SessionEnd, _) | (_, ChainState::SessionStart) => false,
            (_, ChainState::SessionEnd) => from != ChainState::SessionEnd,
            (from, ChainState::SubState(sub)) => match self.mandatory_predecessor(sub) {
                Some(required) => from == ChainState::SubState(required),
                None => true,
            },
        }
    }
}

/// `[SS, trade sub-contexts..., SE]` for one transcript, with the round each
/// element came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeSequence {
    pub states: Vec<ChainState>,
    /// Round index per element; 0 for SS, last round + 1 for SE.
    pub rounds: Vec<u32>,
    /// Indices `i` into `states` where an uncertifiable turn (unparsed, or a
    /// TRADE turn with an unknown sub-context) sat between `states[i-1]` and
    /// `states[i]`.
    pub gaps_before: Vec<usize>,
}

impl TradeSequence {
    /// A sequence built from bare states, as if every turn parsed.
    pub fn from_states(states: Vec<ChainState>) -> Self {
        let rounds = (0..states.len() as u32).collect();
        Self { states, rounds, gaps_before: Vec::new() }
    }

    pub fn contains(&self, sub: TradeSubcontext) -> bool {
        self.states.contains(&ChainState::SubState(sub))
    }
}

/// Extracts the trade sequence. NONE and END_CONVERSATION turns contribute
/// nothing.
pub fn extract_trade_sequence(t: &Transcript) -> TradeSequence {
    let mut states = vec![ChainState::SessionStart];
    let mut rounds = vec![0];
    let mut gaps_before = Vec::new();
    let mut pending_gap = false;
    for turn in &t.turns {
        match turn.response() {
            Some(resp) if resp.context_type == ContextType::Trade => match resp.subcontext() {
                Some(sub) => {
                    if pending_gap {
                        gaps_before.push(states.len());
                        pending_gap = false;
                    }
                    states.push(ChainState::SubState(sub));
                    rounds.push(turn.round_index);
                }
                None => pending_gap = true,
            },
            Some(_) => {}
            None => pending_gap = true,
        }
    }
    if pending_gap {
        gaps_before.push(states.len());
    }
    let last_round = t.turns.last().map_or(0, |l| l.round_index);
    states.push(ChainState::SessionEnd);
    rounds.push(last_round + 1);
    TradeSequence { states, rounds, gaps_before }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionViolation {
    pub round_index: u32,
    /// `None` when the predecessor could not be certified (unparsed turn).
    pub from: Option<ChainState>,
    pub to: ChainState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceVerdict {
    pub compliant: bool,
    pub violations: Vec<TransitionViolation>,
}

/// Every CONFIRM_SELL must directly follow CHECK_CONFIRMATION in the trade sequence.
pub fn check_confirmation_rule(seq: &TradeSequence) -> ComplianceVerdict {
    check_rules(seq, &TransitionRuleSet::default())
}

pub fn check_rules(seq: &TradeSequence, rules: &TransitionRuleSet) -> ComplianceVerdict {
    let mut violations = Vec::new();
    for i in 1..seq.states.len() {
        let (from, to) = (seq.states[i - 1], seq.states[i]);
        let round_index = seq.rounds.get(i).copied().unwrap_or_default();
        let constrained = matches!(to, ChainState::SubState(s) if rules.mandatory_predecessor(s).is_some());
        if constrained && seq.gaps_before.contains(&i) {
            violations.push(TransitionViolation { round_index, from: None, to });
        } else if !rules.allowed(from, to) {
            violations.push(TransitionViolation { round_index, from: Some(from), to });
        }
    }
    ComplianceVerdict { compliant: violations.is_empty(), violations }
}

/// Matrix axis order: SS, SI, OS, NP, CC, CS, SE.
pub const AXIS: [ChainState; 7] = [
    ChainState::SessionStart,
    ChainState::SubState(TradeSubcontext::ShowInventory),
    ChainState::SubState(TradeSubcontext::OfferSell),
    ChainState::SubState(TradeSubcontext::NegotiatePrice),
    ChainState::SubState(TradeSubcontext::CheckConfirmation),
    ChainState::SubState(TradeSubcontext::ConfirmSell),
    ChainState::SessionEnd,
];

pub fn axis_index(state: ChainState) -> Option<usize> {
    AXIS.iter().position(|s| *s == state)
}

/// 7×7 transition counts. REJECT_TRADE has no axis position: occurrences are
/// tallied in `reject_trade` and the state is dropped from the sequence
/// before counting, so its neighbours become adjacent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: [[u64; 7]; 7],
    pub reject_trade: u64,
    pub sequences: u64,
}

impl TransitionMatrix {
    pub fn add_sequence(&mut self, states: &[ChainState]) {
        let kept: Vec<usize> = states
            .iter()
            .filter_map(|s| {
                let idx = axis_index(*s);
                if idx.is_none() {
                    self.reject_trade += 1;
                }
                idx
            })
            .collect();
        for w in kept.windows(2) {
            self.counts[w[0]][w[1]] += 1;
        }
        self.sequences += 1;
    }

    pub fn merge(mut self, other: &Self) -> Self {
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(other_row) {
                *c += o;
            }
        }
        self.reject_trade += other.reject_trade;
        self.sequences += other.sequences;
        self
    }

    pub fn get(&self, from: ChainState, to: ChainState) -> u64 {
        match (axis_index(from), axis_index(to)) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// CSV with a header row and a leading label column.
    pub fn to_csv(&self) -> String {
        let labels: Vec<String> = AXIS.iter().map(|s| s.abbreviation()).collect();
        let mut out = format!(",{}\n", labels.join(","));
        for (label, row) in labels.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{label},{}", cells.join(","));
        }
        out
    }
}

/// Sums adjacent-pair counts over all transcripts.
pub fn transition_matrix(transcripts: &[Transcript]) -> TransitionMatrix {
    transcripts.iter().fold(TransitionMatrix::default(), |mut m, t| {
        m.add_sequence(&extract_trade_sequence(t).states);
        m
    })
}
