//! `storystate`: create, edit, inspect and export stories from the shell.
//!
//! Results go to stdout as canonical JSON (sorted keys, one line). Errors go
//! to stderr, as JSON with `--json`, and set the exit status:
//!
//! | status | error class |
//! |--------|-------------|
//! | 1 | internal |
//! | 2 | usage |
//! | 3 | request rejected (validation, edit, grounding) |
//! | 4 | not found (story, page, revision, finding) |
//! | 5 | project locked |
//! | 6 | model backend failure |
//! | 7 | unreadable input or project |

mod error;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use storystate_core::canonical::canonical_json_line;
use storystate_core::config::{BackendKind, Config};
use storystate_core::edit::{EditBatch, EditOp};
use storystate_core::ids::{PageId, RevisionId, StoryId};
use storystate_core::metrics::{edit_efficiency, edit_rows_csv, story_consistency};
use storystate_core::orchestrator::{EditInput, Engine, EngineMode, ProjectSession, ReadOnlyAssets};
use storystate_core::persistence::{generate_dataset, import_dataset, shipped_specs, DatasetSpec};
use storystate_core::prompt::{compile, export_interchange, export_records};
use storystate_server::AppState;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "storystate", version, about = "Explicit story state with selective page regeneration")]
struct Cli {
    /// Print errors as JSON on stderr.
    #[arg(long, global = true)]
    json: bool,
    /// TOML configuration file; `STORYSTATE_*` variables override it.
    #[arg(long, global = true, env = "STORYSTATE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Http,
}

impl From<Backend> for BackendKind {
    fn from(b: Backend) -> Self {
        match b {
            Backend::Mock => BackendKind::Mock,
            Backend::Http => BackendKind::Http,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Full,
    NoState,
    NoPageRegen,
    NoCritic,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoState => "no-state",
            Mode::NoPageRegen => "no-page-regen",
            Mode::NoCritic => "no-critic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PromptFormat {
    Json,
    Interchange,
}

#[derive(Debug, Args)]
struct BackendArg {
    /// Model backends; defaults to the configured one (mock if unset).
    #[arg(long, value_enum)]
    backend: Option<Backend>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan and generate a new story into a project directory.
    New {
        prompt: String,
        #[arg(long, default_value_t = 10)]
        pages: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        backend: BackendArg,
    },
    /// Run one edit cycle from free text or a JSON file of ops.
    Edit {
        dir: PathBuf,
        #[arg(long, conflicts_with = "ops", required_unless_present = "ops")]
        text: Option<String>,
        /// JSON array of ops, or an object `{"ops": [...], "note": "..."}`.
        #[arg(long)]
        ops: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
        /// Apply critic fixes without asking.
        #[arg(long)]
        auto_accept_critic: bool,
        #[command(flatten)]
        backend: BackendArg,
    },
    /// Apply a surfaced critic finding.
    Accept {
        dir: PathBuf,
        #[arg(long)]
        finding: String,
        #[command(flatten)]
        backend: BackendArg,
    },
    /// Restore an earlier revision as the new head.
    Revert {
        dir: PathBuf,
        #[arg(long)]
        to: String,
    },
    /// Regenerate one page.
    RetryPage {
        dir: PathBuf,
        #[arg(long)]
        page: String,
        #[command(flatten)]
        backend: BackendArg,
    },
    /// Print the revision list without state snapshots.
    History { dir: PathBuf },
    /// Print the compiled prompts.
    Prompts {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = PromptFormat::Json)]
        format: PromptFormat,
    },
    /// Write the prompts in the interchange text format.
    Export {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = PromptFormat::Interchange)]
        format: PromptFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Create projects from an interchange file. One record goes to `--out`;
    /// several go to numbered subdirectories unless `--record` picks one.
    Import {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 1-based record to import.
        #[arg(long)]
        record: Option<usize>,
    },
    /// Dataset tools.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Consistency and edit-efficiency metrics.
    Metrics {
        dir: PathBuf,
        #[arg(long, value_enum)]
        embedding: Option<Backend>,
        /// Also write per-edit rows as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        root: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArg,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Generate interchange records from specs.
    Gen {
        /// Spec file; the shipped 192 specs when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_errors = cli.json;
    match run(cli) {
        Ok(Some(value)) => match canonical_json_line(&value) {
            Ok(line) => {
                print!("{line}");
                ExitCode::SUCCESS
            }
            Err(e) => CliError::internal(e.to_string()).report(json_errors),
        },
        Ok(None) => ExitCode::SUCCESS,
        Err(err) => err.report(json_errors),
    }
}

fn run(cli: Cli) -> Result<Option<Value>, CliError> {
    let config = Config::load(cli.config.as_deref()).map_err(CliError::config)?;
    let kind = |arg: &BackendArg| arg.backend.map_or(config.backend, BackendKind::from);
    let engine = |arg: &BackendArg| -> Result<Engine, CliError> {
        Ok(Engine::new(config.backends(kind(arg)).map_err(CliError::backend)?))
    };
    match cli.command {
        Command::New {
            prompt,
            pages,
            out,
            seed,
            backend,
        } => {
            if pages == 0 {
                return Err(CliError::validation("--pages must be at least 1"));
            }
            let engine = engine(&backend)?;
            let id = StoryId::new(story_id_for(&out));
            let (session, result) = ProjectSession::create(&out, &engine, id.clone(), &prompt, pages, seed)?;
            Ok(Some(json!({
                "story_id": id,
                "dir": out,
                "revision": session.story.head(),
                "result": result,
            })))
        }
        Command::Edit {
            dir,
            text,
            ops,
            mode,
            auto_accept_critic,
            backend,
        } => {
            let engine = engine(&backend)?;
            let mut mode = config
                .engine
                .mode()
                .with_ablation(mode.name())
                .expect("known mode name");
            mode.auto_accept_critic |= auto_accept_critic;
            let input = match (text, ops) {
                (Some(text), None) => EditInput::Text(text),
                (None, Some(path)) => EditInput::Batch(read_ops(&path)?),
                _ => return Err(CliError::validation("give exactly one of --text or --ops")),
            };
            let mut session = ProjectSession::open(&dir)?;
            let seed = session.seed;
            let outcome = engine.run_edit_cycle(&mut session.story, &session.project, input, &mode, seed);
            session.save()?;
            Ok(Some(serde_json::to_value(outcome?).map_err(CliError::internal)?))
        }
        Command::Accept {
            dir,
            finding,
            backend,
        } => {
            let engine = engine(&backend)?;
            let mode: EngineMode = config.engine.mode();
            let mut session = ProjectSession::open(&dir)?;
            let seed = session.seed;
            let outcome = engine.accept_finding(&mut session.story, &session.project, &finding, &mode, seed);
            session.save()?;
            Ok(Some(serde_json::to_value(outcome?).map_err(CliError::internal)?))
        }
        Command::Revert { dir, to } => {
            let mut session = ProjectSession::open(&dir)?;
            let head = Engine::revert(&mut session.story, &RevisionId::new(to.clone()))?;
            session.save()?;
            Ok(Some(json!({ "revision": head, "reverted_to": to })))
        }
        Command::RetryPage { dir, page, backend } => {
            let engine = engine(&backend)?;
            let mut session = ProjectSession::open(&dir)?;
            let seed = session.seed;
            let outcome = engine.retry_page(&mut session.story, &session.project, &PageId::new(page), seed);
            session.save()?;
            Ok(Some(serde_json::to_value(outcome?).map_err(CliError::internal)?))
        }
        Command::History { dir } => {
            let (story, _) = ProjectSession::peek(&dir)?;
            let mut revisions = Vec::new();
            for revision in story.history.revisions() {
                let mut value = serde_json::to_value(revision).map_err(CliError::internal)?;
                if let Some(map) = value.as_object_mut() {
                    map.remove("state");
                }
                revisions.push(value);
            }
            Ok(Some(json!({ "head": story.head(), "revisions": revisions })))
        }
        Command::Prompts { dir, format } => {
            let (story, _) = ProjectSession::peek(&dir)?;
            let bundle = compile(&story.state).map_err(CliError::from_prompt)?;
            match format {
                PromptFormat::Json => Ok(Some(serde_json::to_value(bundle).map_err(CliError::internal)?)),
                PromptFormat::Interchange => {
                    print!("{}", export_interchange(&bundle));
                    Ok(None)
                }
            }
        }
        Command::Export { dir, format, out } => {
            if format != PromptFormat::Interchange {
                return Err(CliError::validation("export supports --format interchange only"));
            }
            let (story, _) = ProjectSession::peek(&dir)?;
            let bundle = compile(&story.state).map_err(CliError::from_prompt)?;
            write_file(&out, export_interchange(&bundle).as_bytes())?;
            Ok(Some(json!({ "out": out, "pages": bundle.pages.len() })))
        }
        Command::Import { input, out, record } => {
            let text = read_text(&input)?;
            let stories = import_dataset(&text).map_err(|e| CliError::parse(format!("{}: {e}", input.display())))?;
            let chosen: Vec<(usize, PathBuf)> = match record {
                Some(n) if n == 0 || n > stories.len() => {
                    return Err(CliError::not_found(format!(
                        "record {n} not in {} (has {})",
                        input.display(),
                        stories.len()
                    )))
                }
                Some(n) => vec![(n, out.clone())],
                None if stories.len() == 1 => vec![(1, out.clone())],
                None => (1..=stories.len())
                    .map(|n| (n, out.join(format!("{n:03}"))))
                    .collect(),
            };
            let mut imported = Vec::new();
            for (n, dir) in chosen {
                let mut state = stories[n - 1].state.clone();
                state.id = StoryId::new(story_id_for(&dir));
                let note = format!("imported record {n} of {}", input.display());
                let session = ProjectSession::import(&dir, state, &note, 0)?;
                imported.push(json!({
                    "record": n,
                    "dir": dir,
                    "revision": session.story.head(),
                    "warnings": stories[n - 1].warnings,
                }));
            }
            Ok(Some(json!({ "imported": imported })))
        }
        Command::Dataset {
            command: DatasetCommand::Gen { spec, out, seed },
        } => {
            let specs: Vec<DatasetSpec> = match spec {
                Some(path) => serde_json::from_str(&read_text(&path)?)
                    .map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?,
                None => shipped_specs(),
            };
            let records = generate_dataset(&specs, seed)?;
            write_file(&out, export_records(&records).as_bytes())?;
            Ok(Some(json!({ "out": out, "records": records.len() })))
        }
        Command::Metrics { dir, embedding, csv } => {
            let (story, _) = ProjectSession::peek(&dir)?;
            let embedder = config
                .embedder(embedding.map_or(config.backend, BackendKind::from))
                .map_err(CliError::backend)?;
            let consistency = story_consistency(&story.state, &ReadOnlyAssets::new(&dir), embedder.as_ref());
            let efficiency = edit_efficiency(&story.history);
            if let (Some(path), Ok(report)) = (&csv, &efficiency) {
                let text = edit_rows_csv(report).map_err(CliError::internal)?;
                write_file(path, text.as_bytes())?;
            }
            Ok(Some(json!({
                "head": story.head(),
                "consistency": consistency.as_ref().ok(),
                "consistency_error": consistency.as_ref().err().map(ToString::to_string),
                "edit_efficiency": efficiency.as_ref().ok(),
                "edit_efficiency_error": efficiency.as_ref().err().map(ToString::to_string),
            })))
        }
        Command::Serve { port, root, backend } => {
            let mut config = config.clone();
            if let Some(port) = port {
                config.server.port = port;
            }
            if let Some(root) = root {
                config.server.root = root;
            }
            let _ = tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
                )
                .with_writer(std::io::stderr)
                .try_init();
            let state = AppState::from_config(&config, kind(&backend)).map_err(CliError::from_api)?;
            storystate_server::serve_blocking(state).map_err(CliError::internal)?;
            Ok(None)
        }
    }
}

/// Story id derived from the project directory name.
fn story_id_for(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "story".to_owned())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    storystate_core::persistence::atomic_write(path, bytes).map_err(CliError::from)
}

fn read_ops(path: &Path) -> Result<EditBatch, CliError> {
    let text = read_text(path)?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    let (ops, note) = match value {
        Value::Array(_) => (value, None),
        Value::Object(mut map) => {
            let ops = map.remove("ops").unwrap_or(Value::Null);
            let note = map.remove("note").and_then(|n| n.as_str().map(str::to_owned));
            (ops, note)
        }
        _ => return Err(CliError::parse(format!("{}: expected an array of ops", path.display()))),
    };
    let ops: Vec<EditOp> =
        serde_json::from_value(ops).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    let batch = EditBatch::user(ops);
    Ok(match note {
        Some(note) => batch.with_note(note),
        None => batch,
    })
}
