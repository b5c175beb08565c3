use std::path::{Path, PathBuf};

use tradeflow_core::backend::{RecordingFactory, ReplayFactory, ScriptedFactory};
use tradeflow_core::domain::GameWorld;
use tradeflow_core::prompt::TemplateSet;
use tradeflow_core::simulator::{run_batch, BackendFactory, BatchOutput, RunConfig, ScenarioKind, ScenarioSpec, SessionBackends};

use crate::args::{parse_seeds, ExecutionArg, SimBackend, SimulateArgs};
use crate::config::{pick, FileConfig};
use crate::CliError;

pub fn load_world(path: &Path) -> Result<GameWorld, CliError> {
    GameWorld::load(path).map_err(|e| CliError::Usage(format!("cannot load world {}: {e}", path.display())))
}

pub fn load_templates(dir: Option<&Path>) -> Result<TemplateSet, CliError> {
    match dir {
        Some(d) => TemplateSet::load_dir(d).map_err(|e| CliError::Usage(format!("templates {}: {e}", d.display()))),
        None => Ok(TemplateSet::builtin()),
    }
}

fn parse_backend(s: &str) -> Result<SimBackend, String> {
    <SimBackend as clap::ValueEnum>::from_str(s, true)
}

struct Resolved {
    cfg: RunConfig,
    backend: SimBackend,
    world: PathBuf,
    fixtures: PathBuf,
    out: Option<PathBuf>,
    templates: Option<PathBuf>,
}

/// Merges flags over the config file. Nothing is touched on disk yet.
fn resolve(a: &SimulateArgs, file: &FileConfig) -> Result<Resolved, CliError> {
    let s = &file.simulate;
    let kind = pick(a.scenario, s.scenario.as_deref(), "simulate.scenario", str::parse::<ScenarioKind>)?
        .unwrap_or(ScenarioKind::Purchase);
    let mut cfg = RunConfig { kind, ..RunConfig::default() };
    if let Some(seeds) = pick(a.seeds.clone(), s.seeds.as_deref(), "simulate.seeds", parse_seeds)? {
        cfg.seeds = seeds;
    }
    if let Some(v) = pick(a.variant, s.variant.as_deref(), "simulate.variant", str::parse)? {
        cfg.variant = v;
    }
    if let Some(m) = pick(a.mode, s.mode.as_deref(), "simulate.mode", str::parse)? {
        cfg.mode = m;
    }
    if let Some(l) = a.language.clone().or_else(|| s.language.clone()) {
        cfg.language = l;
    }
    if let Some(n) = a.max_rounds.or(s.max_rounds) {
        if n == 0 {
            return Err(CliError::Usage("max_rounds must be at least 1".into()));
        }
        cfg.max_rounds = n;
    }
    cfg.execution = a.execution.unwrap_or(ExecutionArg::Parallel).into();
    cfg.npc_params = file.npc_params();
    cfg.player_params = file.player_params();
    cfg.npc_params.validate().map_err(CliError::usage)?;
    cfg.player_params.validate().map_err(CliError::usage)?;

    let backend = pick(a.backend, s.backend.as_deref(), "simulate.backend", parse_backend)?.unwrap_or(SimBackend::Replay);
    let fixtures = a
        .fixtures
        .clone()
        .or_else(|| s.fixtures.clone())
        .unwrap_or_else(|| PathBuf::from("fixtures/replay").join(kind.as_str()));
    Ok(Resolved {
        cfg,
        backend,
        world: a.world.clone().or_else(|| s.world.clone()).unwrap_or_else(|| "fixtures/world.json".into()),
        fixtures,
        out: a.out.clone().or_else(|| s.out.clone()),
        templates: s.templates.clone(),
    })
}

#[cfg(feature = "http")]
fn live_npc(file: &FileConfig) -> Result<std::sync::Arc<dyn tradeflow_core::backend::CompletionBackend>, CliError> {
    let backend = tradeflow_core::backend::http::HttpBackend::new(file.http.clone()).map_err(CliError::usage)?;
    Ok(std::sync::Arc::new(backend))
}

#[cfg(not(feature = "http"))]
fn live_npc(_: &FileConfig) -> Result<std::sync::Arc<dyn tradeflow_core::backend::CompletionBackend>, CliError> {
    Err(CliError::Usage("this build has no live backend (enable the `http` feature)".into()))
}

fn factory(r: &Resolved, world: &GameWorld, file: &FileConfig) -> Result<Box<dyn BackendFactory>, CliError> {
    Ok(match r.backend {
        SimBackend::Replay => {
            if !r.fixtures.is_dir() {
                return Err(CliError::Usage(format!("fixture directory {} not found", r.fixtures.display())));
            }
            Box::new(ReplayFactory { dir: r.fixtures.clone() })
        }
        SimBackend::Scripted => Box::new(ScriptedFactory::offline(r.cfg.kind, world)),
        SimBackend::ScriptedPlayer => Box::new(ScriptedFactory::with_npc(r.cfg.kind, world, live_npc(file)?)),
        SimBackend::Live => {
            let backend = live_npc(file)?;
            let f = move |_: u64, _: &ScenarioSpec| Ok(SessionBackends { player: backend.clone(), npc: backend.clone() });
            Box::new(f)
        }
    })
}

pub fn run(a: SimulateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.as_deref())?;
    let r = resolve(&a, &file)?;
    let world = load_world(&r.world)?;
    let templates = load_templates(r.templates.as_deref())?;
    let inner = factory(&r, &world, &file)?;

    let out = match &a.record {
        Some(dir) => {
            let inner = inner.as_ref();
            let forward = move |seed: u64, scenario: &ScenarioSpec| inner.session(seed, scenario);
            let rec = RecordingFactory { inner: forward, dir: dir.clone(), keep_prompts: false };
            run_batch(&r.cfg, &world, &templates, &rec, r.out.as_deref())
        }
        None => run_batch(&r.cfg, &world, &templates, inner.as_ref(), r.out.as_deref()),
    }
    .map_err(CliError::usage)?;
    report(&a, &r, &out)
}

fn report(a: &SimulateArgs, r: &Resolved, out: &BatchOutput) -> Result<(), CliError> {
    let s = &out.summary;
    if a.json {
        println!("{}", serde_json::to_string_pretty(s).expect("summary serializes"));
    } else {
        println!(
            "{} dialogues ({} scenario, {}, {})",
            s.transcripts, r.cfg.kind, r.cfg.variant, r.cfg.mode
        );
        for (t, n) in &s.terminations {
            println!("  {t}: {n}");
        }
        if let Some(rs) = &s.rounds {
            println!("  rounds: mean {:.2}, sd {:.2}, range {}-{}", rs.mean, rs.sd, rs.min, rs.max);
        }
        if !s.max_round_anomalies.is_empty() {
            println!("  hit the round cap: {:?}", s.max_round_anomalies);
        }
        if let Some(dir) = &r.out {
            println!("  transcripts in {}", dir.display());
        }
    }
    for f in &s.failures {
        eprintln!("seed {}: {}", f.seed, f.message);
    }
    match s.backend_errors() {
        0 if s.failures.is_empty() => Ok(()),
        n => Err(CliError::Findings(format!("{n} dialogue(s) ended in a backend error, {} seed(s) failed", s.failures.len()))),
    }
}
