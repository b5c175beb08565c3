use std::path::{Path, PathBuf};
use std::sync::Arc;

use tradeflow_core::backend::scripted::ScriptedMerchant;
use tradeflow_core::backend::{BackendError, Completion, CompletionBackend, CompletionParams, DigestReplayBackend};
use tradeflow_service::{AppState, ServiceConfig, SessionStore};

use crate::args::{ServeArgs, ServeBackend};
use crate::config::{pick, FileConfig};
use crate::simulate::{load_templates, load_world};
use crate::CliError;

/// Tries each backend in turn, moving on only for unrecorded requests.
struct Fallback(Vec<Arc<dyn CompletionBackend>>);

impl CompletionBackend for Fallback {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, BackendError> {
        let mut last = BackendError::UnrecordedRequest(String::new());
        for b in &self.0 {
            match b.complete(prompt, params) {
                Err(e @ BackendError::UnrecordedRequest(_)) => last = e,
                other => return other,
            }
        }
        Err(last)
    }
}

/// Every fixture directory directly under `root`, plus `root` itself.
fn replay_backend(root: &Path) -> Result<Arc<dyn CompletionBackend>, CliError> {
    if !root.is_dir() {
        return Err(CliError::Usage(format!("fixture directory {} not found", root.display())));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(CliError::usage)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.insert(0, root.to_path_buf());
    let mut chain: Vec<Arc<dyn CompletionBackend>> = Vec::new();
    for d in dirs {
        let b = DigestReplayBackend::from_dir(&d).map_err(CliError::usage)?;
        if !b.is_empty() {
            chain.push(Arc::new(b));
        }
    }
    chain.push(Arc::new(ScriptedMerchant));
    Ok(Arc::new(Fallback(chain)))
}

#[cfg(feature = "http")]
fn live(file: &FileConfig) -> Result<Arc<dyn CompletionBackend>, CliError> {
    // Built here, outside the runtime: the blocking client owns its own one.
    let b = tradeflow_core::backend::http::HttpBackend::new(file.http.clone()).map_err(CliError::usage)?;
    Ok(Arc::new(b))
}

#[cfg(not(feature = "http"))]
fn live(_: &FileConfig) -> Result<Arc<dyn CompletionBackend>, CliError> {
    Err(CliError::Usage("this build has no live backend (enable the `http` feature)".into()))
}

fn resolve(a: &ServeArgs, file: &FileConfig) -> Result<(ServiceConfig, ServeBackend, PathBuf), CliError> {
    let s = &file.serve;
    let mut c = ServiceConfig::default();
    if let Some(h) = a.host.clone().or_else(|| s.host.clone()) {
        c.host = h;
    }
    if let Some(p) = a.port.or(s.port) {
        c.port = p;
    }
    if let Some(d) = a.data_dir.clone().or_else(|| s.data_dir.clone()) {
        c.data_dir = d;
    }
    if let Some(w) = a.world.clone().or_else(|| s.world.clone()) {
        c.world = w;
    }
    if let Some(o) = s.cors_origins.clone() {
        c.cors_origins = o;
    }
    if let Some(v) = pick(None, s.variant.as_deref(), "serve.variant", str::parse)? {
        c.defaults.variant = v;
    }
    if let Some(m) = pick(None, s.mode.as_deref(), "serve.mode", str::parse)? {
        c.defaults.mode = m;
    }
    if let Some(l) = s.language.clone() {
        c.defaults.language = l;
    }
    if let Some(g) = s.starting_gold {
        c.defaults.starting_gold = g;
    }
    let parse = |v: &str| <ServeBackend as clap::ValueEnum>::from_str(v, true);
    let backend = pick(a.backend, s.backend.as_deref(), "serve.backend", parse)?.unwrap_or(ServeBackend::Replay);
    let fixtures = a.fixtures.clone().or_else(|| s.fixtures.clone()).unwrap_or_else(|| "fixtures/replay".into());
    Ok((c, backend, fixtures))
}

pub fn run(a: ServeArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.config.as_deref())?;
    let (cfg, kind, fixtures) = resolve(&a, &file)?;
    let addr = cfg.addr().map_err(|e| CliError::Usage(format!("bad listen address: {e}")))?;
    let world = load_world(&cfg.world)?;
    let templates = load_templates(file.serve.templates.as_deref())?;
    let params = file.npc_params();
    params.validate().map_err(CliError::usage)?;
    let backend = match kind {
        ServeBackend::Live => live(&file)?,
        ServeBackend::Replay => replay_backend(&fixtures)?,
        ServeBackend::Scripted => Arc::new(ScriptedMerchant),
    };
    std::fs::create_dir_all(&cfg.data_dir)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", cfg.data_dir.display())))?;
    let state = Arc::new(AppState::new(
        world,
        templates,
        backend,
        params,
        cfg.defaults.clone(),
        SessionStore::new(&cfg.data_dir),
    ));

    let rt = tokio::runtime::Runtime::new().map_err(CliError::usage)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot listen on {addr}: {e}")))?;
        let local = listener.local_addr().map_err(CliError::usage)?;
        println!("listening on http://{local}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        tradeflow_service::serve(listener, state, &cfg.cors_origins, shutdown)
            .await
            .map_err(|e| CliError::Usage(format!("server error: {e}")))
    })
}
