use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::canonical::{canonical_json, sha256_hex};
use crate::edit::{History, Revision};
use crate::persistence::PersistenceError;
use crate::state::StoryState;

const STORY_FILE: &str = "story.json";
const REVISIONS_DIR: &str = "revisions";
const ASSETS_DIR: &str = "assets";
const LOCK_FILE: &str = "project.lock";

/// Where to simulate a crash during an atomic write.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultPoint {
    /// Every write stops after the temp file is synced, before the rename.
    BeforeRename,
    /// Only writes to the named file (relative to the project root) stop.
    BeforeRenameOf(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectSnapshot {
    pub state: StoryState,
    pub history: History,
}

/// Writes `bytes` to `path` through a synced temp file and a rename, so
/// readers see either the old or the new content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), PersistenceError> {
    write_with_fault(path, bytes, false)
}

fn write_with_fault(path: &Path, bytes: &[u8], fail_before_rename: bool) -> Result<(), PersistenceError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let mut file = File::create(&tmp).map_err(|e| PersistenceError::io(&tmp, e))?;
    file.write_all(bytes)
        .and_then(|()| file.sync_all())
        .map_err(|e| PersistenceError::io(&tmp, e))?;
    drop(file);
    if fail_before_rename {
        return Err(PersistenceError::InjectedFault {
            path: path.to_owned(),
        });
    }
    fs::rename(&tmp, path).map_err(|e| PersistenceError::io(path, e))?;
    if let Ok(d) = File::open(dir) {
        // Directory fsync is best effort; not every platform allows it.
        let _ = d.sync_all();
    }
    Ok(())
}

#[derive(Debug)]
struct LockFile {
    path: PathBuf,
}

impl LockFile {
    fn acquire(root: &Path) -> Result<Self, PersistenceError> {
        let path = root.join(LOCK_FILE);
        for attempt in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if attempt == 0 && holder_is_dead(&path) {
                        let _ = fs::remove_file(&path);
                        continue;
                    }
                    break;
                }
                Err(e) => return Err(PersistenceError::io(path, e)),
            }
        }
        Err(PersistenceError::ProjectLocked {
            path: root.to_owned(),
        })
    }
}

/// True when the lock names a process that no longer exists. Only decidable
/// where `/proc` is available; elsewhere a lock is always respected.
fn holder_is_dead(lock: &Path) -> bool {
    let Ok(text) = fs::read_to_string(lock) else {
        return false;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        return false;
    };
    let proc = Path::new("/proc");
    proc.join("self").exists() && !proc.join(pid.to_string()).exists()
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A project directory opened for writing. Holds the lock until dropped.
#[derive(Debug)]
pub struct Project {
    root: PathBuf,
    fault: Option<FaultPoint>,
    _lock: LockFile,
}

impl Project {
    /// Creates the directory layout (if missing) and takes the lock. Fails
    /// if the directory already contains a story.
    pub fn create(root: impl AsRef<Path>) -> Result<Self, PersistenceError> {
        let root = root.as_ref().to_owned();
        fs::create_dir_all(root.join(REVISIONS_DIR)).map_err(|e| PersistenceError::io(&root, e))?;
        fs::create_dir_all(root.join(ASSETS_DIR)).map_err(|e| PersistenceError::io(&root, e))?;
        let lock = LockFile::acquire(&root)?;
        if root.join(STORY_FILE).exists() {
            return Err(PersistenceError::load(
                root.join(STORY_FILE),
                "a story already exists here",
            ));
        }
        Ok(Self {
            root,
            fault: None,
            _lock: lock,
        })
    }

    /// Opens an existing project and takes the lock.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, PersistenceError> {
        let root = root.as_ref().to_owned();
        if !root.join(STORY_FILE).is_file() {
            return Err(PersistenceError::load(
                root.join(STORY_FILE),
                "not a project directory (story.json missing)",
            ));
        }
        let lock = LockFile::acquire(&root)?;
        Ok(Self {
            root,
            fault: None,
            _lock: lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn inject_fault(&mut self, fault: Option<FaultPoint>) {
        self.fault = fault;
    }

    fn write(&self, relative: &str, bytes: &[u8]) -> Result<(), PersistenceError> {
        let fail = match &self.fault {
            Some(FaultPoint::BeforeRename) => true,
            Some(FaultPoint::BeforeRenameOf(name)) => name == relative,
            None => false,
        };
        write_with_fault(&self.root.join(relative), bytes, fail)
    }

    pub fn load(&self) -> Result<ProjectSnapshot, PersistenceError> {
        load_project(&self.root)
    }

    /// Persists new revisions, then the current state. story.json is written
    /// last and is the commit point.
    pub fn save(&self, state: &StoryState, history: &History) -> Result<(), PersistenceError> {
        for revision in history.revisions() {
            let relative = format!("{REVISIONS_DIR}/{}.json", revision.id);
            let bytes = to_json(&self.root.join(&relative), revision)?;
            if fs::read(self.root.join(&relative)).ok().as_deref() == Some(bytes.as_bytes()) {
                continue;
            }
            self.write(&relative, bytes.as_bytes())?;
        }
        let bytes = to_json(&self.root.join(STORY_FILE), state)?;
        self.write(STORY_FILE, bytes.as_bytes())
    }

    /// Stores asset bytes under their sha256 and returns the digest.
    pub fn put_asset(&self, bytes: &[u8]) -> Result<String, PersistenceError> {
        let hash = sha256_hex(bytes);
        let relative = asset_uri(&hash);
        if !self.root.join(&relative).exists() {
            self.write(&relative, bytes)?;
        }
        Ok(hash)
    }

    pub fn read_asset(&self, hash: &str) -> Result<Vec<u8>, PersistenceError> {
        read_asset(&self.root, hash)
    }

    /// Writes an auxiliary JSON document (e.g. `session.json`).
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), PersistenceError> {
        let bytes = to_json(&self.root.join(name), value)?;
        self.write(name, bytes.as_bytes())
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<Option<T>, PersistenceError> {
        read_json_opt(&self.root.join(name))
    }
}

/// Relative path of an asset inside a project.
pub(crate) fn asset_uri(hash: &str) -> String {
    format!("{ASSETS_DIR}/{hash}")
}

pub(crate) fn read_asset(root: &Path, hash: &str) -> Result<Vec<u8>, PersistenceError> {
    if hash.is_empty() || !hash.chars().all(|c| c.is_ascii_hexdigit()) {
        return Err(PersistenceError::MissingAsset(hash.to_owned()));
    }
    let path = root.join(asset_uri(hash));
    match fs::read(&path) {
        Ok(bytes) => Ok(bytes),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            Err(PersistenceError::MissingAsset(hash.to_owned()))
        }
        Err(e) => Err(PersistenceError::io(path, e)),
    }
}

fn to_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<String, PersistenceError> {
    canonical_json(value).map_err(|e| PersistenceError::load(path, e))
}

pub(crate) fn read_json_opt<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, PersistenceError> {
    match fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| PersistenceError::load(path, e)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(PersistenceError::io(path, e)),
    }
}

/// Reads a project without taking the lock.
///
/// Revision files written by a save that never reached its commit point are
/// ignored: the history is cut after the last revision matching story.json.
pub fn load_project(root: impl AsRef<Path>) -> Result<ProjectSnapshot, PersistenceError> {
    let root = root.as_ref();
    let story_path = root.join(STORY_FILE);
    let state: StoryState = read_json_opt(&story_path)?
        .ok_or_else(|| PersistenceError::load(&story_path, "story.json missing"))?;
    let report = state.validate();
    if !report.is_valid() {
        return Err(PersistenceError::load(
            &story_path,
            format!("invalid story state: {:?}", report.codes()),
        ));
    }
    let dir = root.join(REVISIONS_DIR);
    let mut revisions: Vec<Revision> = Vec::new();
    let entries = match fs::read_dir(&dir) {
        Ok(entries) => entries.collect::<Result<Vec<_>, _>>().map_err(|e| PersistenceError::io(&dir, e))?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(PersistenceError::io(&dir, e)),
    };
    for entry in entries {
        let path = entry.path();
        let is_snapshot = path.extension().is_some_and(|e| e == "json")
            && !path
                .file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with('.'));
        if is_snapshot {
            let revision: Revision = read_json_opt(&path)?
                .ok_or_else(|| PersistenceError::load(&path, "vanished while loading"))?;
            revisions.push(revision);
        }
    }
    revisions.sort_by_key(|r| r.id.index().unwrap_or(usize::MAX));
    if let Some(keep) = revisions.iter().rposition(|r| r.state == state) {
        revisions.truncate(keep + 1);
    } else if !revisions.is_empty() {
        return Err(PersistenceError::load(
            &dir,
            "no revision matches story.json",
        ));
    }
    let history = History::from_revisions(revisions).map_err(|m| PersistenceError::load(&dir, m))?;
    Ok(ProjectSnapshot { state, history })
}
