use tradeflow_core::backend::seed_file_name;
use tradeflow_core::synthetic::{build_golden, GOLDEN_SETS};

use crate::args::GoldenArgs;
use crate::simulate::load_world;
use crate::CliError;

/// Writes `out/<set>/seed-NNN.jsonl` for each selected golden set.
pub fn run(a: GoldenArgs) -> Result<(), CliError> {
    let world = load_world(&a.world)?;
    let selected: Vec<_> = GOLDEN_SETS.iter().filter(|(name, _)| a.set.as_deref().is_none_or(|s| s == *name)).collect();
    if selected.is_empty() {
        let names: Vec<_> = GOLDEN_SETS.iter().map(|(n, _)| *n).collect();
        return Err(CliError::Usage(format!("unknown set; expected one of {}", names.join(", "))));
    }
    for (name, spec) in selected {
        let dir = a.out.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
        let transcripts = build_golden(spec, &world);
        for t in &transcripts {
            t.write_jsonl(dir.join(seed_file_name(t.seed))).map_err(CliError::usage)?;
        }
        println!("{name}: {} transcripts", transcripts.len());
    }
    Ok(())
}
