use std::ops::Range;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tradeflow_core::prompt::{PostProcessMode, PromptVariant};
use tradeflow_core::simulator::ScenarioKind;
use tradeflow_core::Execution;

#[derive(Debug, Parser)]
#[command(name = "tradeflow", version, about = "Merchant NPC dialogue engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a batch of simulated dialogues and write one transcript per seed.
    Simulate(SimulateArgs),
    /// Compute STCR, SIRR, price accuracy and usage from a transcript directory.
    Metrics(MetricsArgs),
    /// Re-validate transcripts or a single raw response; exit 1 on any finding.
    Validate(ValidateArgs),
    /// Serve the HTTP session API.
    Serve(ServeArgs),
    /// Write the synthetic golden transcript sets.
    Golden(GoldenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimBackend {
    /// LLM on both sides.
    Live,
    /// Recorded fixtures, one file per seed.
    Replay,
    /// Scripted player against the live NPC.
    ScriptedPlayer,
    /// Scripted player and scripted merchant; fully offline.
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ServeBackend {
    Live,
    /// Recorded fixtures by request digest, scripted merchant for anything unrecorded.
    Replay,
    Scripted,
}

/// Parses `A..B` (both ends included) or a single seed `N`.
pub fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|_| format!("invalid seed `{t}` in `{s}`"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
        None => {
            let n = num(s)?;
            (n, n)
        }
    };
    if hi < lo {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(lo..hi + 1)
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(ScenarioKind))]
    pub scenario: Option<ScenarioKind>,
    /// Inclusive seed range, e.g. `0..99`.
    #[arg(long, value_parser = parse_seeds)]
    pub seeds: Option<Range<u64>>,
    /// sibp or baseline1..4.
    #[arg(long, value_parser = clap::value_parser!(PromptVariant))]
    pub variant: Option<PromptVariant>,
    /// ppp or none.
    #[arg(long, value_parser = clap::value_parser!(PostProcessMode))]
    pub mode: Option<PostProcessMode>,
    #[arg(long, value_enum)]
    pub backend: Option<SimBackend>,
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Fixture directory for `--backend replay`; defaults to fixtures/replay/<scenario>.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also record every completion as replay fixtures under this directory.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long)]
    pub max_rounds: Option<u32>,
    #[arg(long, value_enum)]
    pub execution: Option<ExecutionArg>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the batch summary as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecutionArg {
    Sequential,
    Parallel,
}

impl From<ExecutionArg> for Execution {
    fn from(e: ExecutionArg) -> Self {
        match e {
            ExecutionArg::Sequential => Execution::Sequential,
            ExecutionArg::Parallel => Execution::Parallel,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Number of qualifying dialogues STCR is computed over.
    #[arg(long, default_value_t = tradeflow_core::metrics::DEFAULT_STCR_N)]
    pub stcr_n: usize,
    /// Writes report.json, report.md and transitions.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "parallel")]
    pub execution: ExecutionArg,
    /// Print report.json to stdout instead of the Markdown summary.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// A transcript file, a directory of transcripts, or a raw response file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// World used for raw responses and transcripts without an embedded one.
    #[arg(long, default_value = "fixtures/world.json")]
    pub world: PathBuf,
    /// Variant assumed for raw responses.
    #[arg(long, default_value = "sibp", value_parser = clap::value_parser!(PromptVariant))]
    pub variant: PromptVariant,
    /// Mode assumed for raw responses.
    #[arg(long, default_value = "ppp", value_parser = clap::value_parser!(PostProcessMode))]
    pub mode: PostProcessMode,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<ServeBackend>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Replay fixture root; every `*.jsonl` one level below it is loaded.
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GoldenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "fixtures/world.json")]
    pub world: PathBuf,
    /// Only this set; all sets when omitted.
    #[arg(long)]
    pub set: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges_include_both_ends() {
        assert_eq!(parse_seeds("0..99"), Ok(0..100));
        assert_eq!(parse_seeds("5..=7"), Ok(5..8));
        assert_eq!(parse_seeds("3"), Ok(3..4));
        assert!(parse_seeds("9..2").is_err());
        assert!(parse_seeds("a..2").is_err());
    }

    #[test]
    fn command_line_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
