//! Live snapshot per model kind with atomic, gap-free publication.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use super::model::{ModelKind, ModelSnapshot};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("{kind} snapshot version {offered} does not follow live version {live}")]
    VersionGap { kind: ModelKind, live: u64, offered: u64 },
}

/// Readers clone an `Arc` under a short read lock and never see a partially
/// installed snapshot; writers replace the `Arc` wholesale.
#[derive(Debug, Default)]
pub struct SnapshotRegistry {
    slots: RwLock<BTreeMap<ModelKind, Arc<ModelSnapshot>>>,
}

impl SnapshotRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, kind: ModelKind) -> Option<Arc<ModelSnapshot>> {
        self.slots.read().expect("registry lock poisoned").get(&kind).cloned()
    }

    /// Live version for `kind`, 0 when nothing has been published.
    pub fn version(&self, kind: ModelKind) -> u64 {
        self.get(kind).map_or(0, |s| s.version)
    }

    pub fn versions(&self) -> BTreeMap<ModelKind, u64> {
        self.slots
            .read()
            .expect("registry lock poisoned")
            .iter()
            .map(|(k, s)| (*k, s.version))
            .collect()
    }

    /// Installs `snapshot` if its version is exactly one past the live one.
    pub fn publish(&self, snapshot: ModelSnapshot) -> Result<Arc<ModelSnapshot>, RegistryError> {
        let mut slots = self.slots.write().expect("registry lock poisoned");
        let live = slots.get(&snapshot.kind).map_or(0, |s| s.version);
        if snapshot.version != live + 1 {
            return Err(RegistryError::VersionGap { kind: snapshot.kind, live, offered: snapshot.version });
        }
        let snapshot = Arc::new(snapshot);
        slots.insert(snapshot.kind, Arc::clone(&snapshot));
        Ok(snapshot)
    }

    /// Installs a snapshot loaded from disk, whatever its version, as long as
    /// it does not move the kind backwards.
    pub fn install(&self, snapshot: ModelSnapshot) -> Result<Arc<ModelSnapshot>, RegistryError> {
        let mut slots = self.slots.write().expect("registry lock poisoned");
        let live = slots.get(&snapshot.kind).map_or(0, |s| s.version);
        if snapshot.version <= live {
            return Err(RegistryError::VersionGap { kind: snapshot.kind, live, offered: snapshot.version });
        }
        let snapshot = Arc::new(snapshot);
        slots.insert(snapshot.kind, Arc::clone(&snapshot));
        Ok(snapshot)
    }
}
