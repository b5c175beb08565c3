//! Optional TOML config. Command-line flags override every value here.
//!
//! ```toml
//! [simulate]
//! scenario = "purchase"
//! seeds = "0..99"
//! variant = "sibp"
//! mode = "ppp"
//! backend = "scripted"
//!
//! [serve]
//! port = 8080
//! data_dir = "sessions"
//! backend = "replay"
//! cors_origins = ["http://localhost:5173"]
//!
//! [npc]
//! model_name = "gemini-2.5-flash"
//! temperature = 0.7
//!
//! [http]
//! provider = "gemini"
//! api_key_env = "GEMINI_API_KEY"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use tradeflow_core::backend::CompletionParams;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub simulate: SimulateSection,
    pub serve: ServeSection,
    pub npc: Option<CompletionParams>,
    pub player: Option<CompletionParams>,
    #[cfg(feature = "http")]
    pub http: tradeflow_core::backend::http::HttpConfig,
}

/// String-typed so flag parsers and config share one set of spellings.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub scenario: Option<String>,
    pub seeds: Option<String>,
    pub variant: Option<String>,
    pub mode: Option<String>,
    pub backend: Option<String>,
    pub world: Option<PathBuf>,
    pub fixtures: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub language: Option<String>,
    pub max_rounds: Option<u32>,
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub data_dir: Option<PathBuf>,
    pub world: Option<PathBuf>,
    pub cors_origins: Option<Vec<String>>,
    pub backend: Option<String>,
    pub fixtures: Option<PathBuf>,
    pub variant: Option<String>,
    pub mode: Option<String>,
    pub language: Option<String>,
    pub starting_gold: Option<u64>,
    pub templates: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn npc_params(&self) -> CompletionParams {
        self.npc.clone().unwrap_or_default()
    }

    /// Player completions default to the NPC settings.
    pub fn player_params(&self) -> CompletionParams {
        self.player.clone().unwrap_or_else(|| self.npc_params())
    }
}

/// Flag value if given, else the config value parsed with the flag's parser.
pub fn pick<T, E: std::fmt::Display>(
    flag: Option<T>,
    file: Option<&str>,
    key: &str,
    parse: impl FnOnce(&str) -> Result<T, E>,
) -> Result<Option<T>, CliError> {
    match (flag, file) {
        (Some(v), _) => Ok(Some(v)),
        (None, Some(s)) => parse(s).map(Some).map_err(|e| CliError::Usage(format!("config `{key}`: {e}"))),
        (None, None) => Ok(None),
    }
}
