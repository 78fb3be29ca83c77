//! Materialization scheduling: backfill and scheduled incremental jobs,
//! data-state tracking, retries toward eventual consistency.
//!
//! Jobs persist under `<root>/jobs/<job_id>/` as `state.json` plus the
//! staged record set `staged.jsonl`. Staging happens before the first
//! sink merge and every sink transition is persisted, so a restarted
//! engine resumes from where it left off: jobs found `running` on load
//! are moved to `failed` and their staged records drive the retry,
//! keeping creation timestamps stable across attempts.
//!
//! Scheduling tiles the event timeline at multiples of the schedule
//! interval from a per-feature-set origin (default epoch). Gaps are
//! filled oldest-first, one window per feature set per tick, and only
//! once the window's end clears `now - materialization_delay`. Windows
//! of queued, running, and still-retryable failed jobs stay reserved so
//! concurrent jobs never cover overlapping windows.
//!
//! A user backfill takes precedence over the schedule: queued scheduled
//! jobs overlapping its window are suspended (kept out of the runnable
//! queue, windows still reserved) and resume once the backfill reaches
//! a terminal state. Two overlapping user backfills are rejected.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::record::FeatureRecord;
use crate::registry::{FsvId, MaterializationPolicy, ResolvedFeatureSet};
use crate::window::{FeatureWindow, IntervalSet};
use crate::{offline::OfflineStore, online::OnlineStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Backfill,
    Scheduled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
    Canceled,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed | JobState::Canceled)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinkStatus {
    Pending,
    Merged,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sink {
    Offline,
    Online,
}

impl Sink {
    pub fn name(self) -> &'static str {
        match self {
            Sink::Offline => "offline",
            Sink::Online => "online",
        }
    }
}

/// Per-sink merge status; `None` means the sink was not enabled when
/// the job was created.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkStatuses {
    pub offline: Option<SinkStatus>,
    pub online: Option<SinkStatus>,
}

impl SinkStatuses {
    fn get(&self, sink: Sink) -> Option<SinkStatus> {
        match sink {
            Sink::Offline => self.offline,
            Sink::Online => self.online,
        }
    }

    fn set(&mut self, sink: Sink, status: SinkStatus) {
        match sink {
            Sink::Offline => self.offline = Some(status),
            Sink::Online => self.online = Some(status),
        }
    }

    fn all_merged(&self) -> bool {
        self.offline.map(|s| s == SinkStatus::Merged).unwrap_or(true)
            && self.online.map(|s| s == SinkStatus::Merged).unwrap_or(true)
    }
}

/// One tracked unit of materialization. The policy is snapshotted at
/// creation time; later policy updates do not affect in-flight jobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterializationJob {
    pub job_id: String,
    pub feature_set: FsvId,
    pub window: FeatureWindow,
    pub kind: JobKind,
    pub state: JobState,
    pub suspended: bool,
    pub sink_status: SinkStatuses,
    pub policy: MaterializationPolicy,
    pub attempt: u32,
    pub created_at: Option<i64>,
    pub finished_at: Option<i64>,
    pub staged: bool,
    #[serde(default)]
    pub error: Option<String>,
}

impl MaterializationJob {
    fn is_active(&self) -> bool {
        matches!(self.state, JobState::Queued | JobState::Running)
    }
}

/// Outcome of running or retrying one job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub job_id: String,
    pub state: JobState,
    pub attempt: u32,
    pub sink_status: SinkStatuses,
    pub error: Option<String>,
}

/// What a tick did, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transition", rename_all = "snake_case")]
pub enum JobTransition {
    Created {
        job_id: String,
        feature_set: FsvId,
        window: FeatureWindow,
        kind: JobKind,
    },
    Suspended {
        job_id: String,
    },
    Resumed {
        job_id: String,
    },
    Started {
        job_id: String,
    },
    Finished {
        job_id: String,
        state: JobState,
        error: Option<String>,
    },
    Retried {
        job_id: String,
        state: JobState,
        error: Option<String>,
    },
}

/// Where a fault is injected during a sink merge. Test instrumentation
/// for the fault-tolerance guarantees; production engines run without
/// an injector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectedFault {
    /// The sink merge fails; the job transitions to `failed` and can be
    /// retried from its staged records.
    FailMerge,
    /// The process dies before this sink merge: no further state is
    /// written and the call unwinds with an error. Recovery happens on
    /// the next engine open.
    Abort,
}

pub trait FaultInjector: Send + Sync {
    fn before_sink_merge(&self, job_id: &str, sink: Sink, attempt: u32) -> Option<InjectedFault>;
}

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    pub max_attempts: u32,
    /// Per-feature-set origin of the scheduled window grid.
    pub origins: HashMap<FsvId, i64>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            max_attempts: 5,
            origins: HashMap::new(),
        }
    }
}

#[derive(Default)]
struct SchedulerState {
    jobs: BTreeMap<String, MaterializationJob>,
    data_state: HashMap<FsvId, IntervalSet>,
    next_seq: u64,
}

pub struct Scheduler {
    jobs_dir: PathBuf,
    config: SchedulerConfig,
    injector: Option<Arc<dyn FaultInjector>>,
    state: Mutex<SchedulerState>,
}

impl Scheduler {
    pub fn new(
        root: &Path,
        config: SchedulerConfig,
        injector: Option<Arc<dyn FaultInjector>>,
    ) -> Scheduler {
        Scheduler {
            jobs_dir: root.join("jobs"),
            config,
            injector,
            state: Mutex::new(SchedulerState::default()),
        }
    }

    /// Load persisted jobs. Jobs found `running` crashed mid-run: they
    /// move to `failed` so their staged records can be retried.
    pub fn load(&self) -> Result<()> {
        let mut state = self.state.lock();
        state.jobs.clear();
        state.data_state.clear();
        state.next_seq = 1;
        for name in fsio::sorted_dir_names(&self.jobs_dir)? {
            let path = self.jobs_dir.join(&name).join("state.json");
            if !path.exists() {
                continue;
            }
            let mut job: MaterializationJob = fsio::read_json(&path)?;
            if job.state == JobState::Running {
                job.state = JobState::Failed;
                job.error = Some("engine stopped while the job was running".into());
                self.persist_job(&job)?;
            }
            if let Some(seq) = job
                .job_id
                .strip_prefix("job-")
                .and_then(|s| s.parse::<u64>().ok())
            {
                state.next_seq = state.next_seq.max(seq + 1);
            }
            if job.state == JobState::Succeeded {
                state
                    .data_state
                    .entry(job.feature_set.clone())
                    .or_default()
                    .add(job.window);
            }
            state.jobs.insert(job.job_id.clone(), job);
        }
        Ok(())
    }

    fn persist_job(&self, job: &MaterializationJob) -> Result<()> {
        fsio::write_json(&self.jobs_dir.join(&job.job_id).join("state.json"), job)
    }

    fn staged_path(&self, job_id: &str) -> PathBuf {
        self.jobs_dir.join(job_id).join("staged.jsonl")
    }

    pub fn job_status(&self, job_id: &str) -> Result<MaterializationJob> {
        self.state
            .lock()
            .jobs
            .get(job_id)
            .cloned()
            .ok_or_else(|| Error::NotFound {
                kind: "job",
                what: job_id.to_string(),
            })
    }

    /// Materialized coverage along the event timeline, coalesced.
    pub fn data_state(&self, fsv: &FsvId) -> IntervalSet {
        self.state
            .lock()
            .data_state
            .get(fsv)
            .cloned()
            .unwrap_or_default()
    }

    pub fn jobs_snapshot(&self) -> Vec<MaterializationJob> {
        self.state.lock().jobs.values().cloned().collect()
    }

    /// Queue a user backfill. Queued scheduled jobs overlapping the
    /// window are suspended until this backfill reaches a terminal
    /// state; an overlap with another active backfill is rejected.
    pub fn request_backfill(
        &self,
        fsv: &FsvId,
        policy: &MaterializationPolicy,
        window: FeatureWindow,
    ) -> Result<String> {
        if !policy.any_sink_enabled() {
            return Err(Error::NoSinkEnabled {
                name: fsv.name.clone(),
                version: fsv.version,
            });
        }
        let mut state = self.state.lock();
        for job in state.jobs.values() {
            if job.feature_set == *fsv
                && job.kind == JobKind::Backfill
                && job.is_active()
                && job.window.overlaps(&window)
            {
                return Err(Error::OverlapWithRunningBackfill {
                    job_id: job.job_id.clone(),
                });
            }
        }

        let mut to_suspend = Vec::new();
        for job in state.jobs.values() {
            if job.feature_set == *fsv
                && job.kind == JobKind::Scheduled
                && job.state == JobState::Queued
                && !job.suspended
                && job.window.overlaps(&window)
            {
                to_suspend.push(job.job_id.clone());
            }
        }
        for id in to_suspend {
            let job = state.jobs.get_mut(&id).expect("job listed above");
            job.suspended = true;
            let snapshot = job.clone();
            self.persist_job(&snapshot)?;
        }

        let job_id = format!("job-{:06}", state.next_seq);
        state.next_seq += 1;
        let job = MaterializationJob {
            job_id: job_id.clone(),
            feature_set: fsv.clone(),
            window,
            kind: JobKind::Backfill,
            state: JobState::Queued,
            suspended: false,
            sink_status: initial_sink_status(policy),
            policy: policy.clone(),
            attempt: 0,
            created_at: None,
            finished_at: None,
            staged: false,
            error: None,
        };
        self.persist_job(&job)?;
        state.jobs.insert(job_id.clone(), job);
        Ok(job_id)
    }

    /// One scheduler pass at time `now`: create the next scheduled
    /// window per feature set, run every runnable queued job, then
    /// retry failed jobs that still have attempts left.
    pub fn tick(
        &self,
        now: i64,
        feature_sets: &[ResolvedFeatureSet],
        offline: &OfflineStore,
        online: &OnlineStore,
        calculate: &dyn Fn(&ResolvedFeatureSet, &MaterializationPolicy, FeatureWindow, i64, &str) -> Result<Vec<FeatureRecord>>,
    ) -> Result<Vec<JobTransition>> {
        let mut transitions = Vec::new();

        // create at most one scheduled window per feature set
        let mut sorted: Vec<&ResolvedFeatureSet> = feature_sets.iter().collect();
        sorted.sort_by_key(|fs| fs.spec.id());
        for fs in &sorted {
            let policy = &fs.spec.materialization;
            if !policy.any_sink_enabled() {
                continue;
            }
            let fsv = fs.spec.id();
            let horizon = now - policy.materialization_delay;
            let created = {
                let mut state = self.state.lock();
                let reserved: Vec<FeatureWindow> = state
                    .jobs
                    .values()
                    .filter(|j| {
                        j.feature_set == fsv
                            && (j.is_active()
                                || (j.state == JobState::Failed
                                    && j.attempt < self.config.max_attempts))
                    })
                    .map(|j| j.window)
                    .collect();
                let origin = self.config.origins.get(&fsv).copied().unwrap_or(0);
                let coverage = state.data_state.entry(fsv.clone()).or_default().clone();
                match next_scheduled_window(
                    &coverage,
                    &reserved,
                    origin,
                    policy.schedule_interval,
                    horizon,
                ) {
                    Some(window) => {
                        let job_id = format!("job-{:06}", state.next_seq);
                        state.next_seq += 1;
                        let job = MaterializationJob {
                            job_id: job_id.clone(),
                            feature_set: fsv.clone(),
                            window,
                            kind: JobKind::Scheduled,
                            state: JobState::Queued,
                            suspended: false,
                            sink_status: initial_sink_status(policy),
                            policy: policy.clone(),
                            attempt: 0,
                            created_at: Some(now),
                            finished_at: None,
                            staged: false,
                            error: None,
                        };
                        self.persist_job(&job)?;
                        state.jobs.insert(job_id.clone(), job.clone());
                        Some((job_id, window))
                    }
                    None => None,
                }
            };
            if let Some((job_id, window)) = created {
                transitions.push(JobTransition::Created {
                    job_id,
                    feature_set: fsv.clone(),
                    window,
                    kind: JobKind::Scheduled,
                });
            }
        }

        let by_id: HashMap<FsvId, &ResolvedFeatureSet> =
            sorted.iter().map(|fs| (fs.spec.id(), *fs)).collect();

        // run runnable queued jobs, backfills first
        loop {
            let next = {
                let state = self.state.lock();
                let mut runnable: Vec<&MaterializationJob> = state
                    .jobs
                    .values()
                    .filter(|j| j.state == JobState::Queued && !j.suspended)
                    .filter(|j| !overlaps_running(&state, j))
                    .collect();
                runnable.sort_by_key(|j| {
                    (
                        match j.kind {
                            JobKind::Backfill => 0u8,
                            JobKind::Scheduled => 1u8,
                        },
                        j.job_id.clone(),
                    )
                });
                runnable.first().map(|j| j.job_id.clone())
            };
            let Some(job_id) = next else { break };
            let Some(fs) = self.job_feature_set(&job_id, &by_id)? else {
                // feature set vanished from the registry; fail the job
                self.fail_job(&job_id, "feature set no longer resolvable")?;
                continue;
            };
            transitions.push(JobTransition::Started {
                job_id: job_id.clone(),
            });
            let result = self.run_queued(&job_id, now, &fs, offline, online, calculate)?;
            transitions.extend(self.resume_transitions(&job_id)?);
            transitions.push(JobTransition::Finished {
                job_id: job_id.clone(),
                state: result.state,
                error: result.error,
            });
        }

        // retry failed jobs that still have attempts left
        let retryable: Vec<String> = {
            let state = self.state.lock();
            state
                .jobs
                .values()
                .filter(|j| j.state == JobState::Failed && j.attempt < self.config.max_attempts)
                .map(|j| j.job_id.clone())
                .collect()
        };
        for job_id in retryable {
            let Some(fs) = self.job_feature_set(&job_id, &by_id)? else {
                continue;
            };
            let staged = self.job_status(&job_id)?.staged;
            let result = if staged {
                self.retry(&job_id, &fs, offline, online)?
            } else {
                // the job failed before staging (e.g. source unavailable);
                // re-run the computation with this tick's clock
                self.run_failed_unstaged(&job_id, now, &fs, offline, online, calculate)?
            };
            transitions.extend(self.resume_transitions(&job_id)?);
            transitions.push(JobTransition::Retried {
                job_id,
                state: result.state,
                error: result.error,
            });
        }

        Ok(transitions)
    }

    fn job_feature_set<'a>(
        &self,
        job_id: &str,
        by_id: &HashMap<FsvId, &'a ResolvedFeatureSet>,
    ) -> Result<Option<&'a ResolvedFeatureSet>> {
        let job = self.job_status(job_id)?;
        Ok(by_id.get(&job.feature_set).copied())
    }

    fn fail_job(&self, job_id: &str, message: &str) -> Result<()> {
        let mut state = self.state.lock();
        if let Some(job) = state.jobs.get_mut(job_id) {
            job.state = JobState::Failed;
            job.attempt = self.config.max_attempts; // not retryable
            job.error = Some(message.to_string());
            let snapshot = job.clone();
            drop(state);
            self.persist_job(&snapshot)?;
        }
        Ok(())
    }

    /// Run one queued job to a terminal state.
    pub fn run_queued(
        &self,
        job_id: &str,
        now: i64,
        fs: &ResolvedFeatureSet,
        offline: &OfflineStore,
        online: &OnlineStore,
        calculate: &dyn Fn(&ResolvedFeatureSet, &MaterializationPolicy, FeatureWindow, i64, &str) -> Result<Vec<FeatureRecord>>,
    ) -> Result<JobResult> {
        let mut job = {
            let mut state = self.state.lock();
            let current = state.jobs.get(job_id).ok_or_else(|| Error::NotFound {
                kind: "job",
                what: job_id.to_string(),
            })?;
            if current.state != JobState::Queued {
                return Err(Error::InvalidState(format!(
                    "job {job_id} is {:?}, expected queued",
                    current.state
                )));
            }
            if current.suspended {
                return Err(Error::InvalidState(format!(
                    "job {job_id} is suspended behind a backfill"
                )));
            }
            if overlaps_running(&state, current) {
                return Err(Error::InvalidState(format!(
                    "job {job_id} overlaps a running job's window"
                )));
            }
            let job = state.jobs.get_mut(job_id).expect("checked above");
            job.state = JobState::Running;
            job.attempt += 1;
            job.error = None;
            if job.created_at.is_none() {
                job.created_at = Some(now);
            }
            job.clone()
        };
        self.persist_job(&job)?;

        // compute outside the scheduler lock
        let records = match calculate(fs, &job.policy, job.window, now, job_id) {
            Ok(records) => records,
            Err(e) => {
                job.state = JobState::Failed;
                job.error = Some(e.to_string());
                return self.commit_job(job);
            }
        };

        // stage before any merge so a crash from here on is resumable
        fsio::write_jsonl(&self.staged_path(job_id), &records)?;
        job.staged = true;
        self.persist_job(&job)?;

        self.merge_staged(&mut job, fs, offline, online, &records, Some(now))?;
        if job.sink_status.all_merged() {
            job.state = JobState::Succeeded;
            job.finished_at = Some(now);
        } else {
            job.state = JobState::Failed;
        }
        self.commit_job(job)
    }

    /// Re-run the failed-sink merges of a failed job from its staged
    /// record set. Never recomputes features: creation timestamps are
    /// stable across attempts, and already-merged sinks are skipped.
    pub fn retry(
        &self,
        job_id: &str,
        fs: &ResolvedFeatureSet,
        offline: &OfflineStore,
        online: &OnlineStore,
    ) -> Result<JobResult> {
        let mut job = {
            let mut state = self.state.lock();
            let current = state.jobs.get(job_id).ok_or_else(|| Error::NotFound {
                kind: "job",
                what: job_id.to_string(),
            })?;
            if current.state != JobState::Failed {
                return Err(Error::InvalidState(format!(
                    "job {job_id} is {:?}; only failed jobs can be retried",
                    current.state
                )));
            }
            if current.attempt >= self.config.max_attempts {
                return Err(Error::AttemptsExhausted {
                    job_id: job_id.to_string(),
                    attempt: current.attempt,
                    max_attempts: self.config.max_attempts,
                });
            }
            if !current.staged {
                return Err(Error::InvalidState(format!(
                    "job {job_id} failed before staging; re-run it through tick"
                )));
            }
            if overlaps_running(&state, current) {
                return Err(Error::InvalidState(format!(
                    "job {job_id} overlaps a running job's window"
                )));
            }
            let job = state.jobs.get_mut(job_id).expect("checked above");
            job.state = JobState::Running;
            job.attempt += 1;
            job.error = None;
            job.clone()
        };
        self.persist_job(&job)?;

        let records: Vec<FeatureRecord> = fsio::read_jsonl(&self.staged_path(job_id))?;
        // no authoritative clock on a retry: merges use the pure
        // comparison rules, expiry is evaluated at read time
        self.merge_staged(&mut job, fs, offline, online, &records, None)?;
        if job.sink_status.all_merged() {
            job.state = JobState::Succeeded;
        } else {
            job.state = JobState::Failed;
        }
        self.commit_job(job)
    }

    fn run_failed_unstaged(
        &self,
        job_id: &str,
        now: i64,
        fs: &ResolvedFeatureSet,
        offline: &OfflineStore,
        online: &OnlineStore,
        calculate: &dyn Fn(&ResolvedFeatureSet, &MaterializationPolicy, FeatureWindow, i64, &str) -> Result<Vec<FeatureRecord>>,
    ) -> Result<JobResult> {
        {
            let mut state = self.state.lock();
            let job = state.jobs.get_mut(job_id).ok_or_else(|| Error::NotFound {
                kind: "job",
                what: job_id.to_string(),
            })?;
            job.state = JobState::Queued;
            let snapshot = job.clone();
            drop(state);
            self.persist_job(&snapshot)?;
        }
        self.run_queued(job_id, now, fs, offline, online, calculate)
    }

    fn merge_staged(
        &self,
        job: &mut MaterializationJob,
        fs: &ResolvedFeatureSet,
        offline: &OfflineStore,
        online: &OnlineStore,
        records: &[FeatureRecord],
        now: Option<i64>,
    ) -> Result<()> {
        let schema = fs.record_schema();
        for sink in [Sink::Offline, Sink::Online] {
            match job.sink_status.get(sink) {
                None | Some(SinkStatus::Merged) => continue,
                Some(SinkStatus::Pending) | Some(SinkStatus::Failed) => {}
            }
            if let Some(injector) = &self.injector {
                match injector.before_sink_merge(&job.job_id, sink, job.attempt) {
                    Some(InjectedFault::FailMerge) => {
                        job.sink_status.set(sink, SinkStatus::Failed);
                        job.error = Some(format!("{} merge failed", sink.name()));
                        self.persist_job(job)?;
                        return Ok(());
                    }
                    Some(InjectedFault::Abort) => {
                        // simulated crash: leave persisted state exactly
                        // as it is and unwind
                        return Err(Error::InjectedAbort {
                            job_id: job.job_id.clone(),
                            sink: sink.name(),
                        });
                    }
                    None => {}
                }
            }
            let merge_result = match sink {
                Sink::Offline => offline
                    .merge(&job.feature_set, &schema, records)
                    .map(|_| ()),
                Sink::Online => online
                    .merge(&job.feature_set, &schema, records, job.policy.ttl, now)
                    .map(|_| ()),
            };
            match merge_result {
                Ok(()) => {
                    job.sink_status.set(sink, SinkStatus::Merged);
                    self.persist_job(job)?;
                }
                Err(e) => {
                    job.sink_status.set(sink, SinkStatus::Failed);
                    job.error = Some(format!("{} merge failed: {e}", sink.name()));
                    self.persist_job(job)?;
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    /// Record a terminal job state, update data-state coverage, and
    /// unsuspend scheduled jobs that were waiting on a backfill.
    fn commit_job(&self, job: MaterializationJob) -> Result<JobResult> {
        self.persist_job(&job)?;
        let mut state = self.state.lock();
        if job.state == JobState::Succeeded {
            state
                .data_state
                .entry(job.feature_set.clone())
                .or_default()
                .add(job.window);
        }
        let result = JobResult {
            job_id: job.job_id.clone(),
            state: job.state,
            attempt: job.attempt,
            sink_status: job.sink_status,
            error: job.error.clone(),
        };
        state.jobs.insert(job.job_id.clone(), job);
        Ok(result)
    }

    /// After a backfill reaches a terminal state, resume suspended
    /// scheduled jobs that no longer sit behind any active backfill.
    fn resume_transitions(&self, finished_job_id: &str) -> Result<Vec<JobTransition>> {
        let mut state = self.state.lock();
        let Some(finished) = state.jobs.get(finished_job_id).cloned() else {
            return Ok(Vec::new());
        };
        if finished.kind != JobKind::Backfill || !finished.state.is_terminal() {
            return Ok(Vec::new());
        }
        let blockers: Vec<FeatureWindow> = state
            .jobs
            .values()
            .filter(|j| {
                j.feature_set == finished.feature_set
                    && j.kind == JobKind::Backfill
                    && j.is_active()
            })
            .map(|j| j.window)
            .collect();
        let mut resumed = Vec::new();
        let candidates: Vec<String> = state
            .jobs
            .values()
            .filter(|j| {
                j.feature_set == finished.feature_set
                    && j.suspended
                    && j.state == JobState::Queued
                    && j.window.overlaps(&finished.window)
                    && !blockers.iter().any(|b| b.overlaps(&j.window))
            })
            .map(|j| j.job_id.clone())
            .collect();
        for id in candidates {
            let job = state.jobs.get_mut(&id).expect("job listed above");
            job.suspended = false;
            let snapshot = job.clone();
            self.persist_job(&snapshot)?;
            resumed.push(JobTransition::Resumed { job_id: id });
        }
        Ok(resumed)
    }
}

fn initial_sink_status(policy: &MaterializationPolicy) -> SinkStatuses {
    SinkStatuses {
        offline: policy.offline_enabled.then_some(SinkStatus::Pending),
        online: policy.online_enabled.then_some(SinkStatus::Pending),
    }
}

fn overlaps_running(state: &SchedulerState, job: &MaterializationJob) -> bool {
    state.jobs.values().any(|other| {
        other.job_id != job.job_id
            && other.feature_set == job.feature_set
            && other.state == JobState::Running
            && other.window.overlaps(&job.window)
    })
}

/// The oldest aligned window `[s, s + interval)` with `s` on the grid
/// `origin + k * interval`, whose end clears `horizon`, that is not yet
/// fully materialized and not reserved by another job.
pub fn next_scheduled_window(
    coverage: &IntervalSet,
    reserved: &[FeatureWindow],
    origin: i64,
    interval: i64,
    horizon: i64,
) -> Option<FeatureWindow> {
    debug_assert!(interval > 0);
    let mut start = origin.max(0);
    loop {
        if start + interval > horizon {
            return None;
        }
        let window = FeatureWindow {
            start_ts: start,
            end_ts: start + interval,
        };
        if coverage.covers(&window) {
            // jump past the covering interval instead of stepping
            let cover_end = coverage
                .intervals()
                .iter()
                .find(|iv| iv.start_ts <= window.start_ts && iv.end_ts >= window.end_ts)
                .map(|iv| iv.end_ts)
                .unwrap_or(start + interval);
            let k = (cover_end - origin).div_euclid(interval);
            let jumped = origin + k * interval;
            start = if jumped > start { jumped } else { start + interval };
            continue;
        }
        if reserved.iter().any(|r| r.overlaps(&window)) {
            start += interval;
            continue;
        }
        return Some(window);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: i64, b: i64) -> FeatureWindow {
        FeatureWindow::new(a, b).unwrap()
    }

    #[test]
    fn window_tiling_fills_oldest_gap_first() {
        let mut coverage = IntervalSet::new();
        coverage.add(iv(0, 100));
        coverage.add(iv(200, 300));
        let next = next_scheduled_window(&coverage, &[], 0, 100, 1000).unwrap();
        assert_eq!(next, iv(100, 200));
    }

    #[test]
    fn window_tiling_respects_horizon() {
        let coverage = IntervalSet::new();
        assert_eq!(
            next_scheduled_window(&coverage, &[], 0, 100, 99),
            None
        );
        assert_eq!(
            next_scheduled_window(&coverage, &[], 0, 100, 100),
            Some(iv(0, 100))
        );
    }

    #[test]
    fn window_tiling_skips_reservations() {
        let coverage = IntervalSet::new();
        let next = next_scheduled_window(&coverage, &[iv(0, 150)], 0, 100, 1000).unwrap();
        assert_eq!(next, iv(200, 300));
    }

    #[test]
    fn window_tiling_honors_origin() {
        let coverage = IntervalSet::new();
        let next = next_scheduled_window(&coverage, &[], 50, 100, 1000).unwrap();
        assert_eq!(next, iv(50, 150));
    }

    #[test]
    fn window_tiling_jumps_over_unaligned_coverage() {
        let mut coverage = IntervalSet::new();
        coverage.add(iv(0, 950));
        let next = next_scheduled_window(&coverage, &[], 0, 100, 10_000).unwrap();
        // [900, 1000) is only partially covered, so it is the next gap
        assert_eq!(next, iv(900, 1000));
    }
}
