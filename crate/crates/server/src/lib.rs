//! HTTP service over a project directory.
//!
//! Readers run concurrently. Mutations on one sequence are serialized and
//! must quote the revision they were based on; a stale revision gets 409.

mod error;
mod handlers;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;

use ptlabel_core::store::{Project, SequenceAnnotations, StoreError};
use ptlabel_core::SceneSequence;

pub use error::{ApiError, ApiResult};
pub use handlers::{AutolabelOutcome, JobState, JobStatus};

pub struct AppState {
    project: RwLock<Project>,
    annotations: Mutex<HashMap<String, Arc<Mutex<SequenceAnnotations>>>>,
    scenes: Mutex<HashMap<String, Arc<SceneSequence>>>,
    jobs: Mutex<BTreeMap<u64, JobStatus>>,
    busy: Mutex<HashSet<String>>,
    next_job: AtomicU64,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(project: Project) -> Shared {
        Arc::new(AppState {
            project: RwLock::new(project),
            annotations: Mutex::new(HashMap::new()),
            scenes: Mutex::new(HashMap::new()),
            jobs: Mutex::new(BTreeMap::new()),
            busy: Mutex::new(HashSet::new()),
            next_job: AtomicU64::new(1),
        })
    }

    pub fn open(root: &Path) -> Result<Shared, StoreError> {
        Ok(Self::new(Project::open(root)?))
    }

    fn project(&self) -> std::sync::RwLockReadGuard<'_, Project> {
        self.project.read().unwrap_or_else(|e| e.into_inner())
    }

    fn project_mut(&self) -> std::sync::RwLockWriteGuard<'_, Project> {
        self.project.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Annotation state of one sequence, opened on first use.
    fn sequence(&self, id: &str) -> ApiResult<Arc<Mutex<SequenceAnnotations>>> {
        let mut map = lock(&self.annotations);
        if let Some(a) = map.get(id) {
            return Ok(a.clone());
        }
        let a = Arc::new(Mutex::new(self.project().annotations(id)?));
        map.insert(id.to_string(), a.clone());
        Ok(a)
    }

    fn scene(&self, id: &str) -> ApiResult<Arc<SceneSequence>> {
        if let Some(s) = lock(&self.scenes).get(id) {
            return Ok(s.clone());
        }
        let s = Arc::new(self.project().load_sequence(id)?);
        lock(&self.scenes).insert(id.to_string(), s.clone());
        Ok(s)
    }

    fn new_job_id(&self) -> u64 {
        self.next_job.fetch_add(1, Ordering::Relaxed)
    }

    /// Whether any background job is still running.
    pub fn has_running_jobs(&self) -> bool {
        !lock(&self.busy).is_empty()
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn router(state: Shared) -> Router {
    use handlers::*;
    Router::new()
        .route("/health", get(health))
        .route("/sequences", get(list_sequences))
        .route("/sequences/{id}", get(sequence_info))
        .route("/sequences/{id}/frames/{t}/points", get(frame_points))
        .route("/sequences/{id}/annotations", get(get_annotations).put(put_annotations))
        .route("/sequences/{id}/edits", post(post_edit))
        .route("/sequences/{id}/log", get(edit_log))
        .route("/sequences/{id}/undo", post(undo))
        .route("/sequences/{id}/autolabel", post(autolabel))
        .route("/sequences/{id}/propagate", post(propagate))
        .route("/sequences/{id}/tracks/{tid}/{op}", post(track_op))
        .route("/sequences/{id}/ground", get(ground_height).post(fit_ground))
        .route("/jobs/{job}", get(job_status))
        .route("/eval", post(eval))
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct Ready<'a> {
    addr: &'a str,
}

/// Serve until ctrl-c, then wait for running jobs to commit.
pub async fn serve(root: &Path, addr: SocketAddr) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let state = AppState::open(root)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?.to_string();
    println!("{}", serde_json::to_string(&Ready { addr: &local })?);
    axum::serve(listener, router(state.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    for _ in 0..600 {
        if !state.has_running_jobs() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    Ok(())
}
