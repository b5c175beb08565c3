//! Compliance and usage metrics over transcripts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{ContextType, TradeSubcontext};
use crate::exec::Execution;
use crate::parser::ViolationKind;
use crate::postprocess::StateGroup;
use crate::state_machine::{
    check_confirmation_rule, extract_trade_sequence, TransitionMatrix, AXIS,
};
use crate::transcript::{Termination, Transcript};

pub const DEFAULT_STCR_N: usize = 88;

/// A proportion with its counts. `rate` is 0 when the denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub numerator: u64,
    pub denominator: u64,
    pub rate: f64,
}

impl Rate {
    pub fn new(numerator: u64, denominator: u64) -> Self {
        assert!(numerator <= denominator, "rate numerator exceeds denominator");
        let rate = if denominator == 0 { 0.0 } else { numerator as f64 / denominator as f64 };
        Self { numerator, denominator, rate }
    }

    pub fn percent(&self) -> f64 {
        self.rate * 100.0
    }

    /// Percentage rounded half-up to `decimals` places, computed on integers.
    pub fn percent_str(&self, decimals: u32) -> String {
        if self.denominator == 0 {
            return format!("{:.*}", decimals as usize, 0.0);
        }
        let scale = 10u128.pow(decimals);
        let num = self.numerator as u128 * 100 * scale * 2 + self.denominator as u128;
        let scaled = num / (2 * self.denominator as u128);
        if decimals == 0 {
            return scaled.to_string();
        }
        format!("{}.{:0width$}", scaled / scale, scaled % scale, width = decimals as usize)
    }

    pub fn fraction(&self) -> String {
        format!("{}/{}", self.numerator, self.denominator)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

/// Population mean and SD; `None` for an empty slice.
pub fn mean_sd(values: &[f64]) -> Option<MeanSd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanSd { n: values.len(), mean, sd: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub count: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: usize,
    pub max: usize,
}

/// Rounds per transcript (one round = one NPC turn).
pub fn round_stats(transcripts: &[Transcript]) -> Option<RoundStats> {
    let rounds: Vec<f64> = transcripts.iter().map(|t| t.turns.len() as f64).collect();
    let ms = mean_sd(&rounds)?;
    Some(RoundStats {
        count: ms.n,
        mean: ms.mean,
        sd: ms.sd,
        min: transcripts.iter().map(|t| t.turns.len()).min().unwrap_or(0),
        max: transcripts.iter().map(|t| t.turns.len()).max().unwrap_or(0),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("only {found} dialogues reached CONFIRM_SELL, {wanted} requested")]
    InsufficientDialogues { found: usize, wanted: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StcrResult {
    pub rate: Rate,
    pub n_first: usize,
    pub qualifying_found: usize,
    pub insufficient: bool,
    /// Seeds of the evaluated dialogues that broke the confirmation rule.
    pub violating_seeds: Vec<u64>,
}

impl StcrResult {
    pub fn check(&self) -> Result<(), MetricsError> {
        if self.insufficient {
            Err(MetricsError::InsufficientDialogues { found: self.qualifying_found, wanted: self.n_first })
        } else {
            Ok(())
        }
    }
}

/// Compliance over the first `n_first` transcripts (in the given order) whose
/// trade sequence reaches CONFIRM_SELL.
pub fn stcr(transcripts: &[Transcript], n_first: usize) -> StcrResult {
    let mut evaluated = 0u64;
    let mut compliant = 0u64;
    let mut violating_seeds = Vec::new();
    let mut found = 0usize;
    for t in transcripts {
        let seq = extract_trade_sequence(t);
        if !seq.contains(TradeSubcontext::ConfirmSell) {
            continue;
        }
        found += 1;
        if evaluated as usize == n_first {
            continue;
        }
        evaluated += 1;
        if check_confirmation_rule(&seq).compliant {
            compliant += 1;
        } else {
            violating_seeds.push(t.seed);
        }
    }
    StcrResult {
        rate: Rate::new(compliant, evaluated),
        n_first,
        qualifying_found: found,
        insufficient: found < n_first,
        violating_seeds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirrResult {
    pub rate: Rate,
    /// Per failing turn, each referencing-breaking violation kind counted once.
    pub breakdown: BTreeMap<ViolationKind, u64>,
    /// `sum(breakdown) - (denominator - numerator)`: turns with several kinds.
    pub overcount: u64,
    /// Reported but not part of the predicate.
    pub quantity_exceeds_stock: u64,
    pub state_hallucinations: u64,
    /// TRADE-looking turns that failed to parse; outside the denominator.
    pub unparsed_turns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub rate: Rate,
    /// Turns in the group without a readable stated total (counted inaccurate).
    pub inapplicable: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceAccuracy {
    pub offer_sell: GroupAccuracy,
    pub others: GroupAccuracy,
}

impl PriceAccuracy {
    pub fn group(&self, g: StateGroup) -> &GroupAccuracy {
        match g {
            StateGroup::OfferSell => &self.offer_sell,
            StateGroup::Others => &self.others,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageGroup {
    pub turns: usize,
    pub completion_tokens: Option<MeanSd>,
    pub thought_tokens: Option<MeanSd>,
    pub response_time: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub transcripts: usize,
    pub stcr: StcrResult,
    pub sirr: SirrResult,
    pub price_accuracy: PriceAccuracy,
    pub transition_matrix: TransitionMatrix,
    /// Keyed by `OFFER_SELL`, `Others` and `All`.
    pub usage: BTreeMap<String, UsageGroup>,
    pub round_stats: Option<RoundStats>,
    pub terminations: BTreeMap<Termination, usize>,
}

/// Per-transcript partial counts; merged in transcript order.
#[derive(Debug, Clone, Default)]
struct Tally {
    trade_turns: u64,
    referencing_ok: u64,
    breakdown: BTreeMap<ViolationKind, u64>,
    quantity_exceeds_stock: u64,
    hallucinations: u64,
    unparsed: u64,
    price: [(u64, u64, u64); 2],
    usage: [Vec<[f64; 3]>; 3],
    matrix: TransitionMatrix,
}

fn group_slot(g: StateGroup) -> usize {
    match g {
        StateGroup::OfferSell => 0,
        StateGroup::Others => 1,
    }
}

fn tally(t: &Transcript) -> Tally {
    let mut out = Tally::default();
    for turn in &t.turns {
        let usage = [
            turn.usage.completion_tokens as f64,
            turn.usage.thought_tokens as f64,
            turn.usage.response_time,
        ];
        out.usage[2].push(usage);
        if turn.validation.state_hallucination.is_some() {
            out.hallucinations += 1;
        }
        let Some(resp) = turn.response() else {
            out.unparsed += 1;
            continue;
        };
        if resp.context_type != ContextType::Trade {
            continue;
        }
        out.trade_turns += 1;
        let v = &turn.validation;
        if v.referencing_ok {
            out.referencing_ok += 1;
        } else {
            for kind in ViolationKind::ALL.into_iter().filter(|k| k.breaks_referencing() && v.has(*k)) {
                *out.breakdown.entry(kind).or_insert(0) += 1;
            }
        }
        if v.has(ViolationKind::QuantityExceedsStock) {
            out.quantity_exceeds_stock += 1;
        }
        if let Some(group) = resp.subcontext().and_then(StateGroup::of) {
            let slot = group_slot(group);
            out.usage[slot].push(usage);
            let (acc, total, inapplicable) = &mut out.price[slot];
            *total += 1;
            match &turn.price {
                Some(p) => {
                    *acc += u64::from(p.accurate);
                    *inapplicable += u64::from(!p.applicable);
                }
                None => *inapplicable += 1,
            }
        }
    }
    out.matrix.add_sequence(&extract_trade_sequence(t).states);
    out
}

fn merge(mut a: Tally, b: Tally) -> Tally {
    a.trade_turns += b.trade_turns;
    a.referencing_ok += b.referencing_ok;
    for (k, v) in b.breakdown {
        *a.breakdown.entry(k).or_insert(0) += v;
    }
    a.quantity_exceeds_stock += b.quantity_exceeds_stock;
    a.hallucinations += b.hallucinations;
    a.unparsed += b.unparsed;
    for (x, y) in a.price.iter_mut().zip(b.price) {
        x.0 += y.0;
        x.1 += y.1;
        x.2 += y.2;
    }
    for (x, y) in a.usage.iter_mut().zip(b.usage) {
        x.extend(y);
    }
    a.matrix = a.matrix.merge(&b.matrix);
    a
}

fn usage_group(rows: &[[f64; 3]]) -> UsageGroup {
    let col = |i: usize| mean_sd(&rows.iter().map(|r| r[i]).collect::<Vec<_>>());
    UsageGroup { turns: rows.len(), completion_tokens: col(0), thought_tokens: col(1), response_time: col(2) }
}

fn totals(transcripts: &[Transcript], execution: Execution) -> Tally {
    // ordered map, sequential merge: float sums stay bit-identical across modes
    execution.map(transcripts, tally).into_iter().fold(Tally::default(), merge)
}

fn sirr_from(t: &Tally) -> SirrResult {
    let mut breakdown: BTreeMap<ViolationKind, u64> = ViolationKind::ALL
        .into_iter()
        .filter(|k| k.breaks_referencing())
        .map(|k| (k, 0))
        .collect();
    for (k, v) in &t.breakdown {
        *breakdown.entry(*k).or_insert(0) += v;
    }
    let failing = t.trade_turns - t.referencing_ok;
    SirrResult {
        rate: Rate::new(t.referencing_ok, t.trade_turns),
        overcount: breakdown.values().sum::<u64>().saturating_sub(failing),
        breakdown,
        quantity_exceeds_stock: t.quantity_exceeds_stock,
        state_hallucinations: t.hallucinations,
        unparsed_turns: t.unparsed,
    }
}

fn price_from(t: &Tally) -> PriceAccuracy {
    let g = |slot: usize| {
        let (acc, total, inapplicable) = t.price[slot];
        GroupAccuracy { rate: Rate::new(acc, total), inapplicable }
    };
    PriceAccuracy { offer_sell: g(0), others: g(1) }
}

/// Share of TRADE turns whose items reference only sellable stock.
pub fn sirr(transcripts: &[Transcript]) -> SirrResult {
    sirr_from(&totals(transcripts, Execution::Sequential))
}

pub fn price_accuracy(transcripts: &[Transcript], group: StateGroup) -> GroupAccuracy {
    *price_from(&totals(transcripts, Execution::Sequential)).group(group)
}

/// Usage over turns in `group`, or over every turn when `None`.
pub fn usage_stats(transcripts: &[Transcript], group: Option<StateGroup>) -> UsageGroup {
    let t = totals(transcripts, Execution::Sequential);
    usage_group(&t.usage[group.map_or(2, group_slot)])
}

pub fn compute_report(transcripts: &[Transcript], n_first: usize, execution: Execution) -> MetricsReport {
    let t = totals(transcripts, execution);
    let mut terminations = BTreeMap::new();
    for tr in transcripts {
        if let Some(term) = tr.termination {
            *terminations.entry(term).or_insert(0) += 1;
        }
    }
    MetricsReport {
        transcripts: transcripts.len(),
        stcr: stcr(transcripts, n_first),
        sirr: sirr_from(&t),
        price_accuracy: price_from(&t),
        transition_matrix: t.matrix.clone(),
        usage: BTreeMap::from([
            (StateGroup::OfferSell.label().to_string(), usage_group(&t.usage[0])),
            (StateGroup::Others.label().to_string(), usage_group(&t.usage[1])),
            ("All".to_string(), usage_group(&t.usage[2])),
        ]),
        round_stats: round_stats(transcripts),
        terminations,
    }
}

fn fmt_mean_sd(m: &Option<MeanSd>) -> String {
    match m {
        Some(m) => format!("{:.2} ({:.2})", m.mean, m.sd),
        None => "n/a".into(),
    }
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let w = &mut md;
        let _ = writeln!(w, "# Metrics report\n");
        let _ = writeln!(w, "Transcripts: {}\n", self.transcripts);

        let _ = writeln!(w, "## State transition compliance\n");
        let _ = writeln!(w, "| Metric | Rate (%) | Count |");
        let _ = writeln!(w, "|---|---:|---:|");
        let s = &self.stcr;
        let _ = writeln!(w, "| STCR (first {}) | {} | {} |", s.n_first, s.rate.percent_str(2), s.rate.fraction());
        if s.insufficient {
            let _ = writeln!(w, "\nOnly {} dialogues reached CONFIRM_SELL.", s.qualifying_found);
        }

        let _ = writeln!(w, "\n## Sellable item referencing\n");
        let _ = writeln!(w, "| Metric | Rate (%) | Count |");
        let _ = writeln!(w, "|---|---:|---:|");
        let r = &self.sirr;
        let _ = writeln!(w, "| SIRR | {} | {} |", r.rate.percent_str(2), r.rate.fraction());
        let _ = writeln!(w, "\n| Violation | Turns |");
        let _ = writeln!(w, "|---|---:|");
        for (k, v) in &r.breakdown {
            let _ = writeln!(w, "| {k:?} | {v} |");
        }
        let _ = writeln!(w, "| QuantityExceedsStock (not counted) | {} |", r.quantity_exceeds_stock);
        let _ = writeln!(w, "\nMulti-violation overcount: {}. State hallucinations: {}. Unparsed turns: {}.", r.overcount, r.state_hallucinations, r.unparsed_turns);

        let p = &self.price_accuracy;
        let _ = writeln!(w, "\n## Price accuracy and usage\n");
        let _ = writeln!(
            w,
            "| | OFFER_SELL ({}) | Others ({}) |",
            p.offer_sell.rate.denominator, p.others.rate.denominator
        );
        let _ = writeln!(w, "|---|---:|---:|");
        let _ = writeln!(
            w,
            "| Price accuracy (%) | {} ({}) | {} ({}) |",
            p.offer_sell.rate.percent_str(2),
            p.offer_sell.rate.fraction(),
            p.others.rate.percent_str(2),
            p.others.rate.fraction()
        );
        let _ = writeln!(w, "| Inapplicable (no stated total) | {} | {} |", p.offer_sell.inapplicable, p.others.inapplicable);
        let os = &self.usage[StateGroup::OfferSell.label()];
        let ot = &self.usage[StateGroup::Others.label()];
        let _ = writeln!(w, "| Completion tokens | {} | {} |", fmt_mean_sd(&os.completion_tokens), fmt_mean_sd(&ot.completion_tokens));
        let _ = writeln!(w, "| Thoughts tokens | {} | {} |", fmt_mean_sd(&os.thought_tokens), fmt_mean_sd(&ot.thought_tokens));
        let _ = writeln!(w, "| Response time (s) | {} | {} |", fmt_mean_sd(&os.response_time), fmt_mean_sd(&ot.response_time));

        let _ = writeln!(w, "\n## Transition matrix\n");
        let labels: Vec<String> = AXIS.iter().map(|s| s.abbreviation()).collect();
        let _ = writeln!(w, "| from \\ to | {} |", labels.join(" | "));
        let _ = writeln!(w, "|---|{}", "---:|".repeat(labels.len()));
        for (label, row) in labels.iter().zip(&self.transition_matrix.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(w, "| {label} | {} |", cells.join(" | "));
        }
        let _ = writeln!(w, "\nREJECT_TRADE occurrences (outside the matrix): {}", self.transition_matrix.reject_trade);

        let _ = writeln!(w, "\n## Rounds\n");
        match &self.round_stats {
            Some(rs) => {
                let _ = writeln!(w, "Mean {:.2} (SD {:.2}), range {}-{} over {} dialogues.", rs.mean, rs.sd, rs.min, rs.max, rs.count);
            }
            None => {
                let _ = writeln!(w, "No dialogues.");
            }
        }
        let terms: Vec<String> = self.terminations.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        let _ = writeln!(w, "\nTerminations: {}", if terms.is_empty() { "none".into() } else { terms.join(", ") });
        let _ = writeln!(w, "\n---\nStandard deviations are population SDs. Rates are rounded half-up.");
        md
    }

    /// Writes `report.json`, `report.md` and `transitions.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("report.md"), self.to_markdown())?;
        std::fs::write(dir.join("transitions.csv"), self.transition_matrix.to_csv())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rate_strings() {
        assert_eq!(Rate::new(86, 88).percent_str(2), "97.73");
        assert_eq!(Rate::new(153, 192).percent_str(1), "79.7");
        assert_eq!(Rate::new(153, 192).percent_str(2), "79.69");
        assert_eq!(Rate::new(1, 8).percent_str(1), "12.5");
        assert_eq!(Rate::new(1, 16).percent_str(1), "6.3");
        assert_eq!(Rate::new(0, 0).percent_str(2), "0.00");
        assert_eq!(Rate::new(5, 5).percent_str(1), "100.0");
        assert_eq!(Rate::new(2, 3).percent_str(0), "67");
    }

    #[test]
    fn population_sd() {
        let m = mean_sd(&[2.0, 3.0]).unwrap();
        assert_eq!((m.mean, m.sd), (2.5, 0.5));
        assert_eq!(mean_sd(&[4.0]).unwrap().sd, 0.0);
        let z = mean_sd(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((z.mean, z.sd), (0.0, 0.0));
        assert!(mean_sd(&[]).is_none());
    }

    #[test]
    fn empty_inputs() {
        let r = compute_report(&[], DEFAULT_STCR_N, Execution::Sequential);
        assert!(r.stcr.insufficient);
        assert_eq!(r.stcr.rate.rate, 0.0);
        assert!(r.stcr.check().is_err());
        assert_eq!(r.sirr.rate.denominator, 0);
        assert!(r.round_stats.is_none());
        assert!(r.usage["All"].response_time.is_none());
        assert!(r.to_markdown().contains("No dialogues."));
    }
}
