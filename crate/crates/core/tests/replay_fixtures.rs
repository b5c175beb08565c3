//! Checked-in replay fixtures, the golden report derived from them and the
//! digests of the synthetic golden sets. Set `TRADEFLOW_BLESS=1` to rewrite
//! them after an intentional change.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use tradeflow_core::backend::{RecordingFactory, ReplayFactory, ScriptedFactory};
use tradeflow_core::domain::GameWorld;
use tradeflow_core::metrics::{compute_report, DEFAULT_STCR_N};
use tradeflow_core::prompt::TemplateSet;
use tradeflow_core::simulator::{run_batch, RunConfig, ScenarioKind};
use tradeflow_core::synthetic::{build_golden, GOLDEN_SETS};
use tradeflow_core::transcript::load_transcripts;
use tradeflow_core::Execution;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn world() -> GameWorld {
    GameWorld::load(root().join("world.json")).unwrap()
}

fn bless() -> bool {
    std::env::var_os("TRADEFLOW_BLESS").is_some_and(|v| v == "1")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn sync_dir(generated: &Path, shipped: &Path) {
    if bless() {
        let _ = fs::remove_dir_all(shipped);
        fs::create_dir_all(shipped).unwrap();
        for (name, bytes) in files(generated) {
            fs::write(shipped.join(name), bytes).unwrap();
        }
    }
    let (a, b) = (files(generated), files(shipped));
    assert_eq!(a.len(), b.len(), "file count differs from {}", shipped.display());
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} drifted from {}; rerun with TRADEFLOW_BLESS=1 if intended", shipped.display());
    }
}

fn replay_cfg(kind: ScenarioKind, execution: Execution) -> RunConfig {
    RunConfig { kind, execution, ..RunConfig::default() }
}

#[test]
fn recordings_match_shipped_fixtures() {
    let w = world();
    for kind in [ScenarioKind::Purchase, ScenarioKind::Recommendation] {
        let tmp = tempfile::tempdir().unwrap();
        let factory = RecordingFactory { inner: ScriptedFactory::offline(kind, &w), dir: tmp.path().into(), keep_prompts: false };
        let out = run_batch(&replay_cfg(kind, Execution::Parallel), &w, &TemplateSet::builtin(), &factory, None).unwrap();
        assert_eq!(out.summary.backend_errors(), 0);
        sync_dir(tmp.path(), &root().join("replay").join(kind.as_str()));
    }
}

#[test]
fn replay_is_deterministic_and_matches_golden_report() {
    let w = world();
    let t = TemplateSet::builtin();
    for (kind, mean, sd) in [(ScenarioKind::Purchase, "5.17", "1.01"), (ScenarioKind::Recommendation, "6.05", "1.61")] {
        let factory = ReplayFactory { dir: root().join("replay").join(kind.as_str()) };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let a = run_batch(&replay_cfg(kind, Execution::Parallel), &w, &t, &factory, Some(d1.path())).unwrap();
        let b = run_batch(&replay_cfg(kind, Execution::Sequential), &w, &t, &factory, Some(d2.path())).unwrap();
        assert_eq!(a.summary.backend_errors(), 0, "{:?}", a.summary);
        assert_eq!(files(d1.path()), files(d2.path()));

        let report = compute_report(&a.transcripts, DEFAULT_STCR_N, Execution::Parallel);
        assert_eq!(report, compute_report(&b.transcripts, DEFAULT_STCR_N, Execution::Sequential));
        let reloaded = load_transcripts(d1.path()).unwrap();
        assert_eq!(reloaded, a.transcripts);
        assert_eq!(compute_report(&reloaded, DEFAULT_STCR_N, Execution::Sequential), report);

        let rounds = report.round_stats.clone().unwrap();
        assert_eq!((format!("{:.2}", rounds.mean), format!("{:.2}", rounds.sd)), (mean.into(), sd.into()));

        let out = tempfile::tempdir().unwrap();
        report.write(out.path()).unwrap();
        sync_dir(out.path(), &root().join("golden").join(format!("report-{}", kind.as_str())));
    }
}

#[test]
fn golden_set_digests_match() {
    let w = world();
    let mut manifest = String::new();
    for (name, spec) in GOLDEN_SETS.iter() {
        let mut h = Sha256::new();
        for t in build_golden(spec, &w) {
            h.update(t.to_jsonl().as_bytes());
        }
        manifest.push_str(&format!("{}  {name}\n", hex::encode(h.finalize())));
    }
    let path = root().join("golden").join("sets.sha256");
    if bless() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, &manifest).unwrap();
    }
    assert_eq!(fs::read_to_string(&path).unwrap(), manifest, "golden sets drifted; rerun with TRADEFLOW_BLESS=1 if intended");
}
