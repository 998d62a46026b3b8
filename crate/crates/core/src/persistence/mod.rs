//! On-disk project format, content-addressed assets and dataset exchange.
//!
//! A project directory holds:
//!
//! ```text
//! story.json          current state (canonical JSON)
//! revisions/r<N>.json immutable revision snapshots
//! assets/<sha256>     asset bytes, named by their digest
//! session.json        seed and critic findings awaiting a decision
//! project.lock        present while a writer holds the project
//! ```

mod dataset;
mod project;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub use crate::canonical::canonical_json;
pub use dataset::{
    generate_dataset, import_dataset, import_record, shipped_specs, DatasetSpec, ImportedStory,
    SHIPPED_SPECS_JSON,
};
pub use project::{atomic_write, load_project, FaultPoint, Project, ProjectSnapshot};
pub(crate) use project::{asset_uri, read_asset, read_json_opt};

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot load {path}: {message}")]
    Load { path: PathBuf, message: String },
    #[error("project {path} is locked by another writer")]
    ProjectLocked { path: PathBuf },
    #[error("injected fault before renaming {path}")]
    InjectedFault { path: PathBuf },
    #[error("dataset spec {index}: {message}")]
    InvalidSpec { index: usize, message: String },
    #[error("asset {0} not found")]
    MissingAsset(String),
}

impl PersistenceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Load {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
