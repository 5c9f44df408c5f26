//! Process deployment: the consumer runs in its own OS process, reached
//! through a local socket. The parent writes a job file, the worker writes
//! its artifacts and a result file next to it.

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{consume, pool, ConsumerRun, RunError, RunPlan};
use crate::staging::{StageListener, StageReader, StageWriter};

/// How long either side waits for the other to connect.
const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

/// A program that runs [`worker_main`] on a job file given as its last
/// argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerLaunch {
    pub program: PathBuf,
    pub args: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerJob {
    pub plan: RunPlan,
    pub socket: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct WorkerResult {
    records: Vec<(u64, f64)>,
    artifacts: Vec<String>,
    failure: Option<WorkerFailure>,
}

#[derive(Debug, Serialize, Deserialize)]
enum WorkerFailure {
    TaskFailed {
        step: u64,
        task: usize,
        label: String,
        reason: String,
    },
    Other(String),
}

const RESULT_FILE: &str = "result.json";
const ARTIFACT_DIR: &str = "artifacts";

pub(crate) struct ConsumerProcess {
    child: Child,
    dir: tempfile::TempDir,
    _listener: StageListener,
}

pub(crate) fn launch(
    plan: &RunPlan,
    launch: &WorkerLaunch,
) -> Result<(ConsumerProcess, StageWriter), RunError> {
    let io = |what: &str, e: std::io::Error| RunError::ConsumerCrashed(format!("{what}: {e}"));
    let dir = tempfile::tempdir().map_err(|e| io("scratch dir", e))?;
    let socket = plan
        .staging
        .endpoint
        .clone()
        .unwrap_or_else(|| dir.path().join("stage.sock"));
    let listener = StageListener::bind(&socket, plan.staging.config())?;
    let job = WorkerJob {
        plan: plan.clone(),
        socket,
        out_dir: dir.path().to_path_buf(),
    };
    let job_path = dir.path().join("job.json");
    std::fs::write(&job_path, serde_json::to_vec(&job).expect("job serializes"))
        .map_err(|e| io("job file", e))?;
    let mut child = Command::new(&launch.program)
        .args(&launch.args)
        .arg(&job_path)
        .stdin(Stdio::null())
        .spawn()
        .map_err(|e| io(&format!("spawn {}", launch.program.display()), e))?;

    let deadline = Instant::now() + CONNECT_TIMEOUT;
    let writer = loop {
        match listener.accept(Duration::from_millis(50)) {
            Ok(w) => break w,
            Err(e) => {
                if let Ok(Some(status)) = child.try_wait() {
                    return Err(RunError::ConsumerCrashed(format!(
                        "consumer exited before connecting ({status})"
                    )));
                }
                if Instant::now() >= deadline {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(e.into());
                }
            }
        }
    };
    Ok((
        ConsumerProcess {
            child,
            dir,
            _listener: listener,
        },
        writer,
    ))
}

impl ConsumerProcess {
    /// Waits for the worker to exit and collects what it produced.
    pub(crate) fn finish(mut self) -> ConsumerRun {
        let status = self.child.wait();
        let mut run = ConsumerRun::empty();
        run.done = Instant::now();
        let result: Option<WorkerResult> = std::fs::read(self.dir.path().join(RESULT_FILE))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok());
        let Some(result) = result else {
            let status = status.map_or_else(|e| e.to_string(), |s| s.to_string());
            run.error = Some(RunError::ConsumerCrashed(format!(
                "consumer exited ({status}) without a result"
            )));
            return run;
        };
        run.records = result.records;
        for name in result.artifacts {
            match std::fs::read(self.dir.path().join(ARTIFACT_DIR).join(&name)) {
                Ok(bytes) => run.artifacts.push((name, bytes)),
                Err(e) => {
                    run.error = Some(RunError::ConsumerCrashed(format!("artifact {name}: {e}")));
                    return run;
                }
            }
        }
        run.error = result.failure.map(|f| match f {
            WorkerFailure::TaskFailed {
                step,
                task,
                label,
                reason,
            } => RunError::TaskFailed {
                step,
                task,
                label,
                reason,
            },
            WorkerFailure::Other(msg) => RunError::ConsumerCrashed(msg),
        });
        run
    }
}

/// Consumer-process entry point. Returns the process exit code.
pub fn worker_main(job_path: &Path) -> i32 {
    let job: WorkerJob = match std::fs::read(job_path)
        .map_err(|e| e.to_string())
        .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
    {
        Ok(j) => j,
        Err(e) => {
            log::error!("worker: cannot load job {}: {e}", job_path.display());
            return 1;
        }
    };
    let (_, staged, offset) = job.plan.split_chain();
    let workers = job.plan.plan.insitu();
    let run = match pool(workers).and_then(|p| {
        let reader = StageReader::connect(&job.socket, CONNECT_TIMEOUT)?;
        Ok(consume(reader, staged, offset, &p, workers))
    }) {
        Ok(run) => run,
        Err(e) => ConsumerRun {
            error: Some(e),
            ..ConsumerRun::empty()
        },
    };

    let art_dir = job.out_dir.join(ARTIFACT_DIR);
    let mut names = Vec::with_capacity(run.artifacts.len());
    let mut failure = run.error.as_ref().map(|e| match e {
        RunError::TaskFailed {
            step,
            task,
            label,
            reason,
        } => WorkerFailure::TaskFailed {
            step: *step,
            task: *task,
            label: label.clone(),
            reason: reason.clone(),
        },
        other => WorkerFailure::Other(other.to_string()),
    });
    let code = run.error.as_ref().map_or(0, RunError::exit_code);
    if let Err(e) = std::fs::create_dir_all(&art_dir) {
        failure.get_or_insert(WorkerFailure::Other(format!("artifact dir: {e}")));
    }
    for (name, bytes) in &run.artifacts {
        if let Err(e) = std::fs::write(art_dir.join(name), bytes) {
            failure.get_or_insert(WorkerFailure::Other(format!("artifact {name}: {e}")));
        }
        names.push(name.clone());
    }
    let result = WorkerResult {
        records: run.records,
        artifacts: names,
        failure,
    };
    match std::fs::write(
        job.out_dir.join(RESULT_FILE),
        serde_json::to_vec(&result).expect("result serializes"),
    ) {
        Ok(()) => code,
        Err(e) => {
            log::error!("worker: cannot write result: {e}");
            3
        }
    }
}
