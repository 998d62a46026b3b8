//! Background jobs for the asynchronous (202 + polling) mode.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::Value;

use crate::error::ApiError;

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Done { http_status: u16, result: Value },
    Failed { http_status: u16, error: ApiError },
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: String,
    pub story_id: String,
    #[serde(flatten)]
    pub status: JobStatus,
}

#[derive(Debug, Default)]
pub(crate) struct JobTable {
    next: AtomicU64,
    jobs: Mutex<HashMap<String, Job>>,
}

impl JobTable {
    pub(crate) fn start(&self, story_id: &str) -> String {
        let id = format!("j{}", self.next.fetch_add(1, Ordering::Relaxed) + 1);
        let job = Job {
            id: id.clone(),
            story_id: story_id.to_owned(),
            status: JobStatus::Pending,
        };
        self.jobs
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), job);
        id
    }

    pub(crate) fn finish(&self, id: &str, status: JobStatus) {
        if let Some(job) = self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get_mut(id) {
            job.status = status;
        }
    }

    pub(crate) fn get(&self, id: &str) -> Option<Job> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }
}
