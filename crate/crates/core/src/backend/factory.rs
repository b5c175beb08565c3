//! Per-seed backend factories for batch runs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde_json::json;

use super::scripted::{plan_for_seed, plan_table, PlayerPlan, ScriptedMerchant, ScriptedPlayer};
use super::{seed_file_name, BackendError, CompletionBackend, FixtureWriter, RecordingBackend, ReplayBackend};
use crate::domain::GameWorld;
use crate::simulator::{BackendFactory, ScenarioKind, ScenarioSpec, SessionBackends};

/// Replays `dir/seed-NNN.jsonl`; player and NPC share the one cursor.
#[derive(Debug, Clone)]
pub struct ReplayFactory {
    pub dir: PathBuf,
}

impl BackendFactory for ReplayFactory {
    fn session(&self, seed: u64, _scenario: &ScenarioSpec) -> Result<SessionBackends, BackendError> {
        let replay = Arc::new(ReplayBackend::from_file(self.dir.join(seed_file_name(seed)))?);
        Ok(SessionBackends { player: replay.clone(), npc: replay })
    }
}

/// Scripted players against a shared NPC backend, or against the scripted
/// merchant when none is given.
pub struct ScriptedFactory {
    kind: ScenarioKind,
    world: GameWorld,
    table: Vec<PlayerPlan>,
    npc: Arc<dyn CompletionBackend>,
}

impl ScriptedFactory {
    pub fn offline(kind: ScenarioKind, world: &GameWorld) -> Self {
        Self::with_npc(kind, world, Arc::new(ScriptedMerchant))
    }

    pub fn with_npc(kind: ScenarioKind, world: &GameWorld, npc: Arc<dyn CompletionBackend>) -> Self {
        Self { kind, world: world.clone(), table: plan_table(kind, world), npc }
    }

    pub fn plan(&self, seed: u64) -> PlayerPlan {
        plan_for_seed(seed, self.kind, &self.world, &self.table)
    }
}

impl BackendFactory for ScriptedFactory {
    fn session(&self, seed: u64, _scenario: &ScenarioSpec) -> Result<SessionBackends, BackendError> {
        Ok(SessionBackends {
            player: Arc::new(ScriptedPlayer::new(self.plan(seed))),
            npc: self.npc.clone(),
        })
    }
}

/// Wraps another factory, recording each session to `dir/seed-NNN.jsonl`.
pub struct RecordingFactory<F> {
    pub inner: F,
    pub dir: PathBuf,
    pub keep_prompts: bool,
}

impl<F: BackendFactory> BackendFactory for RecordingFactory<F> {
    fn session(&self, seed: u64, scenario: &ScenarioSpec) -> Result<SessionBackends, BackendError> {
        let inner = self.inner.session(seed, scenario)?;
        std::fs::create_dir_all(&self.dir).map_err(|e| BackendError::Io(e.to_string()))?;
        let meta = BTreeMap::from([
            ("seed".to_string(), json!(seed)),
            ("scenario".to_string(), json!(scenario.kind)),
        ]);
        let sink = FixtureWriter::create(self.dir.join(seed_file_name(seed)), &meta)?.keep_prompts(self.keep_prompts);
        Ok(SessionBackends {
            player: Arc::new(RecordingBackend::new(inner.player, sink.clone())),
            npc: Arc::new(RecordingBackend::new(inner.npc, sink)),
        })
    }
}
