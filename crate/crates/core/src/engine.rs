//! The engine: one store root, all subsystems wired together.
//!
//! A root directory is the entire feature store:
//!
//! ```text
//! <root>/registry/   asset documents
//! <root>/offline/    partitioned record storage
//! <root>/online/     snapshots of the in-memory key-value tables
//! <root>/jobs/       materialization job state and staged records
//! ```
//!
//! The engine never reads the wall clock; every operation that needs a
//! time takes `now` explicitly, which keeps runs reproducible and TTL
//! expiry deterministic under test.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;

use crate::compute::{self, HookRegistry, TransformHook};
use crate::consistency::{self, BootstrapDirection, ConsistencyReport};
use crate::error::{Error, Result};
use crate::offline::OfflineStore;
use crate::online::OnlineStore;
use crate::record::FeatureRecord;
use crate::registry::{
    EntityDef, FeatureSetPatch, FeatureSetSpec, FsvId, MaterializationPolicy, Registry,
    ResolvedFeatureSet,
};
use crate::retrieval::{
    self, CellStatus, JoinSource, LeakageViolation, ObservationSpine, OnlineFeature,
    OnlineResult, RetrievalResult,
};
use crate::scheduler::{
    FaultInjector, JobResult, JobTransition, MaterializationJob, Scheduler, SchedulerConfig,
};
use crate::value::Value;
use crate::window::{FeatureWindow, IntervalSet};

/// Engine construction options.
#[derive(Default)]
pub struct EngineConfig {
    pub scheduler: SchedulerConfig,
    /// Fault injection hook for exercising merge failures and crash
    /// recovery; `None` in normal operation.
    pub fault_injector: Option<Arc<dyn FaultInjector>>,
}

pub struct Engine {
    root: PathBuf,
    registry: Registry,
    offline: OfflineStore,
    online: OnlineStore,
    scheduler: Scheduler,
    hooks: parking_lot::RwLock<HookRegistry>,
}

impl Engine {
    /// Create the store layout under `root` and open it.
    pub fn init(root: impl AsRef<Path>) -> Result<Engine> {
        let root = root.as_ref();
        for sub in ["registry", "offline", "online", "jobs"] {
            std::fs::create_dir_all(root.join(sub)).map_err(|e| Error::store_io(root, e))?;
        }
        Engine::open(root)
    }

    /// Open an existing store root with default configuration.
    pub fn open(root: impl AsRef<Path>) -> Result<Engine> {
        Engine::open_with(root, EngineConfig::default())
    }

    /// Open an existing store root. Reloads online snapshots and job
    /// state; jobs that were running when the previous process stopped
    /// come back as failed with their staged records intact.
    pub fn open_with(root: impl AsRef<Path>, config: EngineConfig) -> Result<Engine> {
        let root = root.as_ref().to_path_buf();
        if !root.join("registry").is_dir() {
            return Err(Error::NotFound {
                kind: "store root",
                what: format!("{} (run `fs init` first)", root.display()),
            });
        }
        let engine = Engine {
            registry: Registry::new(&root),
            offline: OfflineStore::new(&root),
            online: OnlineStore::new(&root),
            scheduler: Scheduler::new(&root, config.scheduler, config.fault_injector),
            hooks: parking_lot::RwLock::new(HookRegistry::default()),
            root,
        };
        engine.online.load()?;
        engine.scheduler.load()?;
        Ok(engine)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Persist the online tables to their snapshot files. Call before
    /// process exit; offline, registry, and job state are already
    /// durable.
    pub fn persist(&self) -> Result<()> {
        self.online.persist()
    }

    /// Register an in-process opaque transform hook.
    pub fn register_hook(&self, id: impl Into<String>, hook: Arc<dyn TransformHook>) {
        self.hooks.write().register(id, hook);
    }

    // ── registry ────────────────────────────────────────────────────

    pub fn register_entity(&self, def: &EntityDef) -> Result<EntityDef> {
        self.registry.register_entity(def)
    }

    pub fn get_entity(&self, name: &str, version: u32) -> Result<EntityDef> {
        self.registry.get_entity(name, version)
    }

    pub fn register_feature_set(&self, spec: &FeatureSetSpec) -> Result<FeatureSetSpec> {
        self.registry.register_feature_set(spec)
    }

    pub fn get_feature_set(&self, name: &str, version: u32) -> Result<FeatureSetSpec> {
        self.registry.get_feature_set(name, version)
    }

    pub fn update_feature_set(
        &self,
        name: &str,
        version: u32,
        patch: &FeatureSetPatch,
    ) -> Result<FeatureSetSpec> {
        self.registry.update_feature_set(name, version, patch)
    }

    pub fn list_feature_sets(&self, prefix: Option<&str>) -> Result<Vec<FeatureSetSpec>> {
        self.registry.list_feature_sets(prefix)
    }

    pub fn resolve(&self, name: &str, version: u32) -> Result<ResolvedFeatureSet> {
        self.registry.resolve(name, version)
    }

    // ── compute ─────────────────────────────────────────────────────

    /// Calculate the feature records of one window without touching any
    /// store.
    pub fn calculate(
        &self,
        name: &str,
        version: u32,
        window: FeatureWindow,
        now: i64,
    ) -> Result<Vec<FeatureRecord>> {
        let fs = self.registry.resolve(name, version)?;
        let hooks = self.hooks.read();
        compute::calculate(&fs, window, now, &hooks, None)
    }

    // ── scheduler ───────────────────────────────────────────────────

    pub fn request_backfill(
        &self,
        name: &str,
        version: u32,
        window: FeatureWindow,
    ) -> Result<String> {
        let fs = self.registry.resolve(name, version)?;
        self.scheduler
            .request_backfill(&fs.spec.id(), &fs.spec.materialization, window)
    }

    /// One scheduling pass: create due scheduled windows, run runnable
    /// queued jobs, retry retryable failed jobs.
    pub fn tick(&self, now: i64) -> Result<Vec<JobTransition>> {
        let mut feature_sets = Vec::new();
        for spec in self.registry.list_feature_sets(None)? {
            feature_sets.push(self.registry.resolve(&spec.name, spec.version)?);
        }
        let hooks = self.hooks.read();
        let calculate = |fs: &ResolvedFeatureSet,
                         policy: &MaterializationPolicy,
                         window: FeatureWindow,
                         at: i64,
                         job_id: &str|
         -> Result<Vec<FeatureRecord>> {
            let job_view = Engine::with_policy(fs, policy);
            compute::calculate(&job_view, window, at, &hooks, Some(job_id))
        };
        self.scheduler
            .tick(now, &feature_sets, &self.offline, &self.online, &calculate)
    }

    /// Run one queued job to a terminal state.
    pub fn run_job(&self, job_id: &str, now: i64) -> Result<JobResult> {
        let job = self.scheduler.job_status(job_id)?;
        let fs = self
            .registry
            .resolve(&job.feature_set.name, job.feature_set.version)?;
        let hooks = self.hooks.read();
        let calculate = |fs: &ResolvedFeatureSet,
                         policy: &MaterializationPolicy,
                         window: FeatureWindow,
                         at: i64,
                         job_id: &str|
         -> Result<Vec<FeatureRecord>> {
            let job_view = Engine::with_policy(fs, policy);
            compute::calculate(&job_view, window, at, &hooks, Some(job_id))
        };
        self.scheduler
            .run_queued(job_id, now, &fs, &self.offline, &self.online, &calculate)
    }

    /// Re-merge the failed sinks of a failed job from its staged record
    /// set, preserving the original creation timestamps.
    pub fn retry_job(&self, job_id: &str) -> Result<JobResult> {
        let job = self.scheduler.job_status(job_id)?;
        let fs = self
            .registry
            .resolve(&job.feature_set.name, job.feature_set.version)?;
        self.scheduler
            .retry(job_id, &fs, &self.offline, &self.online)
    }

    pub fn job_status(&self, job_id: &str) -> Result<MaterializationJob> {
        self.scheduler.job_status(job_id)
    }

    pub fn data_state(&self, name: &str, version: u32) -> Result<IntervalSet> {
        let fs = self.registry.get_feature_set(name, version)?;
        Ok(self.scheduler.data_state(&FsvId::new(fs.name, fs.version)))
    }

    /// The job's policy snapshot governs the run, not the current
    /// registry state.
    fn with_policy(fs: &ResolvedFeatureSet, policy: &MaterializationPolicy) -> ResolvedFeatureSet {
        let mut view = fs.clone();
        view.spec.materialization = policy.clone();
        view
    }

    // ── stores (direct access for tooling and tests) ────────────────

    pub fn offline_store(&self) -> &OfflineStore {
        &self.offline
    }

    pub fn online_store(&self) -> &OnlineStore {
        &self.online
    }

    // ── retrieval ───────────────────────────────────────────────────

    /// Point-in-time join of a spine against materialized offline data.
    pub fn get_offline_features(
        &self,
        spine: &ObservationSpine,
        requests: &[(FsvId, Vec<String>)],
        as_of: Option<i64>,
    ) -> Result<RetrievalResult> {
        let resolved = self.resolve_requests(requests)?;
        let mut sources = Vec::new();
        for (fs, features) in resolved {
            let fsv = fs.spec.id();
            let records = self.offline.scan_all(&fsv)?;
            let coverage = self.scheduler.data_state(&fsv);
            sources.push(JoinSource {
                feature_set: fs,
                features,
                records,
                coverage,
            });
        }
        retrieval::point_in_time_join(spine, &sources, as_of)
    }

    /// Point-in-time join computing features on the fly, without
    /// consulting the stores. Equals `get_offline_features` after a
    /// full backfill of the same windows. Creation timestamps are
    /// transient (stamped past the covering window), so any `as_of`
    /// filtering is meaningless here and not applied.
    pub fn get_offline_features_unmaterialized(
        &self,
        spine: &ObservationSpine,
        requests: &[(FsvId, Vec<String>)],
    ) -> Result<RetrievalResult> {
        let resolved = self.resolve_requests(requests)?;
        let hooks = self.hooks.read();
        let mut sources = Vec::new();
        for (fs, features) in resolved {
            let interval = fs.spec.materialization.schedule_interval;
            let delay = fs.spec.source.source_delay;
            let max_bound = spine
                .rows
                .iter()
                .filter_map(|row| row.get(retrieval::OBSERVATION_TS_COLUMN))
                .filter_map(Value::as_int)
                .map(|ts0| ts0 - delay)
                .max()
                .unwrap_or(0);
            let (records, coverage) = if max_bound <= 0 {
                (Vec::new(), IntervalSet::new())
            } else {
                // smallest aligned window covering every lookup range
                let end = max_bound.div_euclid(interval) * interval
                    + if max_bound.rem_euclid(interval) == 0 { 0 } else { interval };
                let window = FeatureWindow::new(0, end.max(interval))?;
                let records =
                    compute::calculate(&fs, window, window.end_ts, &hooks, None)?;
                let mut coverage = IntervalSet::new();
                coverage.add(window);
                (records, coverage)
            };
            sources.push(JoinSource {
                feature_set: fs,
                features,
                records,
                coverage,
            });
        }
        retrieval::point_in_time_join(spine, &sources, None)
    }

    /// Low-latency lookup: per feature set one online get, features
    /// projected, missing reasons propagated.
    pub fn get_online_features(
        &self,
        requests: &[(FsvId, Vec<String>)],
        ids: &IndexMap<String, Value>,
        now: i64,
    ) -> Result<OnlineResult> {
        let resolved = self.resolve_requests(requests)?;
        let mut out = OnlineResult::default();
        for (fs, features) in resolved {
            let fsv = fs.spec.id();
            let key = retrieval::online_key_for(ids, &fs)?;
            let lookup = self.online.get(&fsv, &key, now);
            for feature in features {
                let cell = match &lookup {
                    Ok(record) => OnlineFeature {
                        status: CellStatus::Value.label().to_string(),
                        value: record.features.get(&feature).cloned().unwrap_or(Value::Null),
                    },
                    Err(reason) => OnlineFeature {
                        status: serde_json::to_value(reason)
                            .expect("reason serializes")
                            .as_str()
                            .expect("reason is a string")
                            .to_string(),
                        value: Value::Null,
                    },
                };
                out.features.insert(feature, cell);
            }
        }
        Ok(out)
    }

    /// Self-check: re-verify that no value cell leaks future data.
    pub fn audit_leakage(&self, result: &RetrievalResult) -> Result<Vec<LeakageViolation>> {
        let mut delays = std::collections::HashMap::new();
        for (fsv, _) in &result.feature_columns {
            if !delays.contains_key(fsv) {
                let fs = self.registry.get_feature_set(&fsv.name, fsv.version)?;
                delays.insert(fsv.clone(), fs.source.source_delay);
            }
        }
        retrieval::audit_leakage(result, &delays)
    }

    fn resolve_requests(
        &self,
        requests: &[(FsvId, Vec<String>)],
    ) -> Result<Vec<(ResolvedFeatureSet, Vec<String>)>> {
        let mut resolved = Vec::new();
        for (fsv, features) in requests {
            let fs = self.registry.resolve(&fsv.name, fsv.version)?;
            resolved.push((fs, features.clone()));
        }
        retrieval::validate_requests(&resolved)?;
        Ok(resolved)
    }

    // ── consistency ─────────────────────────────────────────────────

    /// Bootstrap one store from the other. Excluded against concurrent
    /// materialization: refuses to run while the feature set has active
    /// jobs, reserving the full event-time range in effect.
    pub fn bootstrap(
        &self,
        name: &str,
        version: u32,
        direction: BootstrapDirection,
        now: i64,
    ) -> Result<usize> {
        let fs = self.registry.resolve(name, version)?;
        let fsv = fs.spec.id();
        let active: Vec<String> = self
            .scheduler
            .jobs_snapshot()
            .into_iter()
            .filter(|j| j.feature_set == fsv && !j.state.is_terminal())
            .map(|j| j.job_id)
            .collect();
        if !active.is_empty() {
            return Err(Error::InvalidState(format!(
                "bootstrap requires exclusive access; active jobs: {}",
                active.join(", ")
            )));
        }
        match direction {
            BootstrapDirection::OfflineToOnline => {
                consistency::bootstrap_offline_to_online(&fs, &self.offline, &self.online, now)
            }
            BootstrapDirection::OnlineToOffline => {
                consistency::bootstrap_online_to_offline(&fs, &self.offline, &self.online)
            }
        }
    }

    pub fn check_consistency(&self, name: &str, version: u32, now: i64) -> Result<ConsistencyReport> {
        let fs = self.registry.resolve(name, version)?;
        consistency::check_consistency(&fs, &self.offline, &self.online, now)
    }
}
