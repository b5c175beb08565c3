use tradeflow_core::metrics::compute_report;
use tradeflow_core::transcript::load_transcripts;

use crate::args::MetricsArgs;
use crate::CliError;

pub fn run(a: MetricsArgs) -> Result<(), CliError> {
    if a.stcr_n == 0 {
        return Err(CliError::Usage("--stcr-n must be at least 1".into()));
    }
    if !a.input.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", a.input.display())));
    }
    let transcripts = load_transcripts(&a.input).map_err(CliError::usage)?;
    if transcripts.is_empty() {
        return Err(CliError::Usage(format!("no transcripts (*.jsonl) in {}", a.input.display())));
    }
    let report = compute_report(&transcripts, a.stcr_n, a.execution.into());
    if let Err(e) = report.stcr.check() {
        eprintln!("warning: {e}");
    }
    if let Some(out) = &a.out {
        report
            .write(out)
            .map_err(|e| CliError::Usage(format!("cannot write report to {}: {e}", out.display())))?;
    }
    if a.json {
        print!("{}", report.to_json());
    } else {
        print!("{}", report.to_markdown());
    }
    Ok(())
}
