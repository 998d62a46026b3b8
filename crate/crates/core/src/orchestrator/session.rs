use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::CriticFinding;
use crate::ids::StoryId;
use crate::orchestrator::{EditCycleResult, Engine, EngineError, Story};
use crate::persistence::{load_project, read_json_opt, FaultPoint, PersistenceError, Project};
use crate::state::StoryState;

pub const SESSION_FILE: &str = "session.json";

/// Engine-side data stored next to story.json: the generation seed and
/// critic findings awaiting a decision.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionFile {
    #[serde(default)]
    pub seed: u64,
    pub next_finding: u64,
    pub findings: Vec<CriticFinding>,
}

/// A story bound to its project directory. Holds the project lock for its
/// whole lifetime.
pub struct ProjectSession {
    pub project: Project,
    pub story: Story,
    /// Base seed for every generation cycle of this story.
    pub seed: u64,
}

impl ProjectSession {
    /// Creates and generates a new story in `root`.
    pub fn create(
        root: impl AsRef<Path>,
        engine: &Engine,
        id: StoryId,
        prompt: &str,
        n_pages: usize,
        seed: u64,
    ) -> Result<(Self, EditCycleResult), EngineError> {
        let project = Project::create(root)?;
        let (story, result) = engine.create_story(&project, id, prompt, n_pages, seed)?;
        let session = Self { project, story, seed };
        session.save()?;
        Ok((session, result))
    }

    /// Creates a project holding `state` as its first revision.
    pub fn import(
        root: impl AsRef<Path>,
        state: StoryState,
        note: &str,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let project = Project::create(root)?;
        let session = Self {
            project,
            story: Engine::adopt(state, note),
            seed,
        };
        session.save()?;
        Ok(session)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self, EngineError> {
        let project = Project::open(root)?;
        let snapshot = project.load()?;
        let file: SessionFile = project.read_json(SESSION_FILE)?.unwrap_or_default();
        let mut story = Story::new(snapshot.state, snapshot.history);
        story.findings = file.findings;
        story.next_finding = file.next_finding.max(1);
        Ok(Self {
            project,
            story,
            seed: file.seed,
        })
    }

    /// Loads the story and session data without taking the lock.
    pub fn peek(root: impl AsRef<Path>) -> Result<(Story, SessionFile), EngineError> {
        let root = root.as_ref();
        let snapshot = load_project(root)?;
        let file: SessionFile = read_json_opt(&root.join(SESSION_FILE))?.unwrap_or_default();
        let mut story = Story::new(snapshot.state, snapshot.history);
        story.findings = file.findings.clone();
        story.next_finding = file.next_finding.max(1);
        Ok((story, file))
    }

    pub fn inject_fault(&mut self, fault: Option<FaultPoint>) {
        self.project.inject_fault(fault);
    }

    pub fn save(&self) -> Result<(), PersistenceError> {
        self.project.save(&self.story.state, &self.story.history)?;
        self.project.write_json(
            SESSION_FILE,
            &SessionFile {
                seed: self.seed,
                next_finding: self.story.next_finding,
                findings: self.story.findings.clone(),
            },
        )
    }
}
