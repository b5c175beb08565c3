//! HTTP session service: a human plays against the merchant NPC through the
//! same round function the simulator uses, with sessions stored as
//! transcript JSONL.

pub mod api;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use api::{router, AppState};
pub use session::{SessionSettings, SessionStore};

/// Service settings. Backend selection lives with the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub world: PathBuf,
    /// Allowed browser origins; `*` allows any.
    pub cors_origins: Vec<String>,
    #[serde(flatten)]
    pub defaults: SessionSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: "sessions".into(),
            world: "fixtures/world.json".into(),
            cors_origins: vec!["http://localhost:5173".into()],
            defaults: SessionSettings::default(),
        }
    }
}

impl ServiceConfig {
    pub fn addr(&self) -> Result<SocketAddr, std::net::AddrParseError> {
        format!("{}:{}", self.host, self.port).parse()
    }
}

/// Serves until `shutdown` resolves. Sessions are persisted turn by turn, so
/// nothing is pending at shutdown.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    cors_origins: &[String],
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state, cors_origins);
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
