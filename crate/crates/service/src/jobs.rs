use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::http::StatusCode;
use log::{error, info, warn};
use nst_core::config::TransferConfig;
use nst_core::experiments::{run_sweep, SweepOptions, SweepSpec};
use nst_core::imaging::{self, RgbImage};
use nst_core::network::LossNetwork;
use nst_core::objective::{history_csv, LossReport};
use nst_core::optimize::{run_transfer, ProgressSink, RunOutcome};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;
pub const DEFAULT_WORKERS: usize = 2;

const RECORD_FILE: &str = "job.json";
const LOSSES_FILE: &str = "losses.csv";
const FRAMES_DIR: &str = "frames";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Single,
    Sweep,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
    Cancelled,
}

impl JobStatus {
    pub fn is_finished(self) -> bool {
        matches!(
            self,
            JobStatus::Done | JobStatus::Failed | JobStatus::Cancelled
        )
    }
}

/// What is persisted as `job.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TransferConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    pub created_at_ms: u64,
    pub started_at_ms: Option<u64>,
    pub finished_at_ms: Option<u64>,
    /// Iteration of each stored frame; frame `k` is `frames/<k>.png`.
    pub frame_iterations: Vec<usize>,
    pub error: Option<String>,
    /// Contact sheets of a finished sweep, one per content image, relative to
    /// the job directory.
    #[serde(default)]
    pub sheets: Vec<PathBuf>,
}

/// A job as reported to clients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobView {
    #[serde(flatten)]
    pub record: JobRecord,
    pub frames: usize,
    pub iterations_completed: usize,
    pub latest: Option<LossReport>,
}

/// A sweep request: the spec plus uploaded `(file name, PNG bytes)` pairs.
/// Image paths inside the spec are ignored.
#[derive(Clone, Debug)]
pub struct SweepUpload {
    pub spec: SweepSpec,
    pub contents: Vec<(String, Vec<u8>)>,
    pub styles: Vec<(String, Vec<u8>)>,
}

enum Payload {
    Single { content: RgbImage, style: RgbImage },
    Sweep(SweepSpec),
}

struct Entry {
    record: JobRecord,
    history: Vec<LossReport>,
    cancel: Arc<AtomicBool>,
    payload: Option<Payload>,
}

impl Entry {
    fn view(&self) -> JobView {
        JobView {
            record: self.record.clone(),
            frames: self.record.frame_iterations.len(),
            iterations_completed: self.history.len(),
            latest: self.history.last().copied(),
        }
    }
}

struct Shared {
    data_dir: PathBuf,
    net: LossNetwork,
    jobs: Mutex<HashMap<String, Entry>>,
}

impl Shared {
    fn jobs(&self) -> MutexGuard<'_, HashMap<String, Entry>> {
        // A panicking run must not take the whole registry down with it.
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn job_dir(&self, id: &str) -> PathBuf {
        self.data_dir.join("jobs").join(id)
    }

    fn persist(&self, record: &JobRecord, history: Option<&[LossReport]>) {
        let dir = self.job_dir(&record.id);
        let write = || -> io::Result<()> {
            if let Some(history) = history {
                write_atomic(&dir.join(LOSSES_FILE), history_csv(history).as_bytes())?;
            }
            let json = serde_json::to_vec_pretty(record).map_err(io::Error::other)?;
            write_atomic(&dir.join(RECORD_FILE), &json)
        };
        if let Err(e) = write() {
            error!("job {}: cannot persist state: {e}", record.id);
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub workers: usize,
    pub queue_capacity: usize,
    pub network: LossNetwork,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>, network: LossNetwork) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            workers: DEFAULT_WORKERS,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            network,
        }
    }
}

struct Inner {
    shared: Arc<Shared>,
    queue: SyncSender<String>,
}

/// Handle to the job registry and its worker pool. Workers exit once every
/// handle is dropped and the queue drains.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

impl Service {
    /// Opens (or creates) the data directory, reloads persisted jobs and
    /// starts the workers. Jobs that were queued or running when the
    /// previous process stopped are marked failed.
    pub fn open(config: ServiceConfig) -> io::Result<Service> {
        let jobs_dir = config.data_dir.join("jobs");
        fs::create_dir_all(&jobs_dir)?;
        let shared = Arc::new(Shared {
            data_dir: config.data_dir,
            net: config.network,
            jobs: Mutex::new(HashMap::new()),
        });
        let restored = restore_jobs(&shared, &jobs_dir)?;
        info!("restored {restored} job(s) from {}", jobs_dir.display());

        let (queue, rx) = sync_channel(config.queue_capacity);
        let rx = Arc::new(Mutex::new(rx));
        for n in 0..config.workers.max(1) {
            let (shared, rx) = (Arc::clone(&shared), Arc::clone(&rx));
            thread::Builder::new()
                .name(format!("nst-worker-{n}"))
                .spawn(move || worker_loop(&shared, &rx))?;
        }
        Ok(Service {
            inner: Arc::new(Inner { shared, queue }),
        })
    }

    pub fn network(&self) -> &LossNetwork {
        &self.inner.shared.net
    }

    fn shared(&self) -> &Shared {
        &self.inner.shared
    }

    fn check_taps(&self, config: &TransferConfig) -> Result<(), ApiError> {
        let net = self.network();
        net.check_taps(&config.content_taps)
            .and_then(|()| net.check_taps(&config.style_taps))
            .map_err(|e| ApiError::invalid("config", e))
    }

    fn enqueue(&self, record: JobRecord, payload: Payload) -> Result<String, ApiError> {
        let id = record.id.clone();
        let shared = self.shared();
        shared.persist(&record, None);
        shared.jobs().insert(
            id.clone(),
            Entry {
                record,
                history: Vec::new(),
                cancel: Arc::new(AtomicBool::new(false)),
                payload: Some(payload),
            },
        );
        match self.inner.queue.try_send(id.clone()) {
            Ok(()) => Ok(id),
            Err(e) => {
                shared.jobs().remove(&id);
                let _ = fs::remove_dir_all(shared.job_dir(&id));
                Err(match e {
                    TrySendError::Full(_) => ApiError::new(
                        StatusCode::TOO_MANY_REQUESTS,
                        "queue_full",
                        "the job queue is full, retry later",
                    ),
                    TrySendError::Disconnected(_) => ApiError::internal("no workers are running"),
                })
            }
        }
    }

    fn new_record(&self, kind: JobKind) -> Result<JobRecord, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        fs::create_dir_all(self.shared().job_dir(&id).join(FRAMES_DIR))?;
        Ok(JobRecord {
            id,
            kind,
            status: JobStatus::Queued,
            config: None,
            sweep: None,
            created_at_ms: now_ms(),
            started_at_ms: None,
            finished_at_ms: None,
            frame_iterations: Vec::new(),
            error: None,
            sheets: Vec::new(),
        })
    }

    /// Queues a single run and returns its id.
    pub fn submit_job(
        &self,
        content: RgbImage,
        style: RgbImage,
        config: TransferConfig,
    ) -> Result<String, ApiError> {
        config
            .validate()
            .map_err(|e| ApiError::invalid("config", e))?;
        self.check_taps(&config)?;
        let mut record = self.new_record(JobKind::Single)?;
        let dir = self.shared().job_dir(&record.id);
        let saved = imaging::save_png(&content, dir.join("content.png"))
            .and_then(|()| imaging::save_png(&style, dir.join("style.png")));
        if let Err(e) = saved {
            let _ = fs::remove_dir_all(&dir);
            return Err(ApiError::internal(e.to_string()));
        }
        record.config = Some(config);
        self.enqueue(record, Payload::Single { content, style })
    }

    /// Stores the uploaded images inside the job directory and queues the
    /// sweep with its outputs under `<job>/out`.
    pub fn submit_sweep(&self, upload: SweepUpload) -> Result<String, ApiError> {
        let SweepUpload {
            mut spec,
            contents,
            styles,
        } = upload;
        if contents.is_empty() {
            return Err(ApiError::missing_field("content"));
        }
        if styles.is_empty() {
            return Err(ApiError::missing_field("style"));
        }
        spec.validate().map_err(|e| ApiError::invalid("spec", e))?;
        self.check_taps(&spec.base)?;
        let decode = |field: &str,
                      files: &[(String, Vec<u8>)]|
         -> Result<Vec<(String, RgbImage)>, ApiError> {
            files
                .iter()
                .enumerate()
                .map(|(i, (name, bytes))| {
                    let image =
                        imaging::decode_png(bytes).map_err(|e| ApiError::invalid(field, e))?;
                    Ok((file_stem(name, field, i), image))
                })
                .collect()
        };
        let contents = decode("content", &contents)?;
        let styles = decode("style", &styles)?;

        let mut record = self.new_record(JobKind::Sweep)?;
        let dir = self.shared().job_dir(&record.id);
        let store = |sub: &str, images: &[(String, RgbImage)]| -> Result<Vec<PathBuf>, ApiError> {
            let target = dir.join("inputs").join(sub);
            fs::create_dir_all(&target)?;
            images
                .iter()
                .map(|(stem, image)| {
                    let path = target.join(format!("{stem}.png"));
                    imaging::save_png(image, &path)
                        .map_err(|e| ApiError::internal(e.to_string()))?;
                    Ok(path)
                })
                .collect()
        };
        let stored = store("content", &contents).and_then(|c| Ok((c, store("style", &styles)?)));
        let (content_paths, style_paths) = match stored {
            Ok(paths) => paths,
            Err(e) => {
                let _ = fs::remove_dir_all(&dir);
                return Err(e);
            }
        };
        spec.content_images = content_paths;
        spec.style_images = style_paths;
        spec.output_dir = dir.join("out");
        record.sweep = Some(spec.clone());
        self.enqueue(record, Payload::Sweep(spec))
    }

    pub fn list(&self) -> Vec<JobView> {
        let mut views: Vec<JobView> = self.shared().jobs().values().map(Entry::view).collect();
        views.sort_by(|a, b| {
            (a.record.created_at_ms, &a.record.id).cmp(&(b.record.created_at_ms, &b.record.id))
        });
        views
    }

    pub fn get(&self, id: &str) -> Result<JobView, ApiError> {
        self.shared()
            .jobs()
            .get(id)
            .map(Entry::view)
            .ok_or_else(|| unknown_job(id))
    }

    /// Path of frame `k`, if it has been produced.
    pub fn frame_path(&self, id: &str, k: usize) -> Result<PathBuf, ApiError> {
        let jobs = self.shared().jobs();
        let entry = jobs.get(id).ok_or_else(|| unknown_job(id))?;
        let produced = entry.record.frame_iterations.len();
        if k >= produced {
            return Err(ApiError::not_found(format!(
                "job {id} has {produced} frame(s), no frame {k}"
            )));
        }
        Ok(frame_file(&self.shared().job_dir(id), k))
    }

    /// Loss history produced so far, as CSV.
    pub fn losses_csv(&self, id: &str) -> Result<String, ApiError> {
        let jobs = self.shared().jobs();
        let entry = jobs.get(id).ok_or_else(|| unknown_job(id))?;
        Ok(history_csv(&entry.history))
    }

    /// Cancels a queued job immediately, or asks a running single run to
    /// stop at its next iteration boundary. Returns the status after the
    /// request.
    pub fn cancel(&self, id: &str) -> Result<JobStatus, ApiError> {
        let shared = self.shared();
        let mut jobs = shared.jobs();
        let entry = jobs.get_mut(id).ok_or_else(|| unknown_job(id))?;
        match entry.record.status {
            JobStatus::Queued => {
                entry.cancel.store(true, Ordering::SeqCst);
                entry.payload = None;
                entry.record.status = JobStatus::Cancelled;
                entry.record.finished_at_ms = Some(now_ms());
                let (record, history) = (entry.record.clone(), entry.history.clone());
                drop(jobs);
                shared.persist(&record, Some(&history));
                Ok(JobStatus::Cancelled)
            }
            JobStatus::Running if entry.record.kind == JobKind::Single => {
                entry.cancel.store(true, Ordering::SeqCst);
                Ok(JobStatus::Running)
            }
            JobStatus::Running => Err(ApiError::conflict(format!("sweep {id} is already running"))),
            status => Err(ApiError::conflict(format!(
                "job {id} has already finished ({status:?})"
            ))),
        }
    }

    /// Contact sheet `content` of a finished sweep.
    pub fn sheet_path(&self, id: &str, content: usize) -> Result<PathBuf, ApiError> {
        let jobs = self.shared().jobs();
        let entry = jobs.get(id).ok_or_else(|| unknown_job(id))?;
        if entry.record.kind != JobKind::Sweep {
            return Err(ApiError::not_found(format!("job {id} is not a sweep")));
        }
        let sheet =
            entry.record.sheets.get(content).ok_or_else(|| {
                ApiError::not_found(format!("sweep {id} has no sheet {content} yet"))
            })?;
        Ok(self.shared().job_dir(id).join(sheet))
    }
}

fn unknown_job(id: &str) -> ApiError {
    ApiError::not_found(format!("no job with id `{id}`"))
}

fn frame_file(job_dir: &Path, k: usize) -> PathBuf {
    job_dir.join(FRAMES_DIR).join(format!("{k:04}.png"))
}

/// A file-system safe stem from an uploaded file name.
fn file_stem(name: &str, field: &str, index: usize) -> String {
    let stem = Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("");
    let clean: String = stem
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_'))
        .collect();
    if clean.is_empty() {
        format!("{field}{index}")
    } else {
        clean
    }
}

fn restore_jobs(shared: &Shared, jobs_dir: &Path) -> io::Result<usize> {
    let mut restored = 0;
    for dir in fs::read_dir(jobs_dir)? {
        let dir = dir?.path();
        let record = fs::read(dir.join(RECORD_FILE))
            .map_err(|e| e.to_string())
            .and_then(|bytes| {
                serde_json::from_slice::<JobRecord>(&bytes).map_err(|e| e.to_string())
            });
        let mut record = match record {
            Ok(r) => r,
            Err(e) => {
                warn!("skipping {}: {e}", dir.display());
                continue;
            }
        };
        let history: Vec<LossReport> = fs::read_to_string(dir.join(LOSSES_FILE))
            .map(|csv| {
                csv.lines()
                    .skip(1)
                    .filter_map(|l| LossReport::parse_csv_row(l).ok())
                    .collect()
            })
            .unwrap_or_default();
        if !record.status.is_finished() {
            record.status = JobStatus::Failed;
            record.error = Some("interrupted by a service restart".into());
            record.finished_at_ms = Some(now_ms());
            shared.persist(&record, Some(&history));
        }
        shared.jobs().insert(
            record.id.clone(),
            Entry {
                record,
                history,
                cancel: Arc::new(AtomicBool::new(false)),
                payload: None,
            },
        );
        restored += 1;
    }
    Ok(restored)
}

fn worker_loop(shared: &Shared, rx: &Mutex<Receiver<String>>) {
    loop {
        let next = rx.lock().unwrap_or_else(|e| e.into_inner()).recv();
        match next {
            Ok(id) => run_job(shared, &id),
            Err(_) => return,
        }
    }
}

/// Appends progress to the registry as the run produces it.
struct JobSink<'a> {
    shared: &'a Shared,
    id: &'a str,
    job_dir: PathBuf,
    cancel: Arc<AtomicBool>,
    frames_written: usize,
}

impl ProgressSink for JobSink<'_> {
    fn on_report(&mut self, report: &LossReport) {
        if let Some(entry) = self.shared.jobs().get_mut(self.id) {
            entry.history.push(*report);
        }
    }

    fn on_frame(&mut self, iteration: usize, frame: &RgbImage) {
        // The file exists before the frame is announced.
        if let Err(e) = imaging::save_png(frame, frame_file(&self.job_dir, self.frames_written)) {
            error!(
                "job {}: cannot write frame at iteration {iteration}: {e}",
                self.id
            );
            return;
        }
        self.frames_written += 1;
        let snapshot = {
            let mut jobs = self.shared.jobs();
            jobs.get_mut(self.id).map(|entry| {
                entry.record.frame_iterations.push(iteration);
                (entry.record.clone(), entry.history.clone())
            })
        };
        if let Some((record, history)) = snapshot {
            self.shared.persist(&record, Some(&history));
        }
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }
}

fn run_job(shared: &Shared, id: &str) {
    let started = {
        let mut jobs = shared.jobs();
        let Some(entry) = jobs.get_mut(id) else {
            return;
        };
        if entry.record.status != JobStatus::Queued {
            return;
        }
        let Some(payload) = entry.payload.take() else {
            return;
        };
        entry.record.status = JobStatus::Running;
        entry.record.started_at_ms = Some(now_ms());
        (entry.record.clone(), payload, Arc::clone(&entry.cancel))
    };
    let (record, payload, cancel) = started;
    shared.persist(&record, None);
    info!("job {id}: started");

    let mut sheets = Vec::new();
    let job_dir = shared.job_dir(id);
    let (status, error) = match payload {
        Payload::Single { content, style } => {
            let config = record.config.clone().unwrap_or_default();
            let mut sink = JobSink {
                shared,
                id,
                job_dir: job_dir.clone(),
                cancel,
                frames_written: 0,
            };
            match run_transfer(&content, &style, &config, &shared.net, &mut sink) {
                Ok(result) => match result.outcome {
                    RunOutcome::Completed => (JobStatus::Done, None),
                    RunOutcome::Cancelled { .. } => (JobStatus::Cancelled, None),
                    RunOutcome::Aborted { after, reason } => (
                        JobStatus::Failed,
                        Some(format!("aborted after iteration {after}: {reason}")),
                    ),
                },
                Err(e) => (JobStatus::Failed, Some(e.to_string())),
            }
        }
        Payload::Sweep(spec) => match run_sweep(&spec, &shared.net, SweepOptions { workers: 1 }) {
            Ok(result) => {
                sheets = result
                    .sheets
                    .iter()
                    .map(|p| p.strip_prefix(&job_dir).unwrap_or(p).to_path_buf())
                    .collect();
                (JobStatus::Done, None)
            }
            Err(e) => (JobStatus::Failed, Some(e.to_string())),
        },
    };

    let finished = {
        let mut jobs = shared.jobs();
        jobs.get_mut(id).map(|entry| {
            entry.record.status = status;
            entry.record.error = error;
            entry.record.sheets = sheets;
            entry.record.finished_at_ms = Some(now_ms());
            (entry.record.clone(), entry.history.clone())
        })
    };
    if let Some((record, history)) = finished {
        shared.persist(&record, Some(&history));
        info!("job {id}: {:?}", record.status);
    }
}
