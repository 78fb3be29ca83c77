//! Online store: the single latest record per id combination, merged
//! with conditional override and served with TTL expiry.
//!
//! Merge rules per incoming record:
//!   - key absent (or its entry expired): insert
//!   - newer event_ts: override
//!   - equal event_ts and newer creation_ts: override
//!   - otherwise: no-op (including an exact tie on both timestamps, so
//!     re-runs with an identical `now` stay idempotent)
//!
//! The net effect is order-insensitive: whatever permutation and
//! batching a record multiset arrives in, each key ends at its
//! max(event_ts, creation_ts) record.
//!
//! Backed by an in-memory concurrent map with per-key entry locking;
//! snapshots go to `<root>/online/<name>/<version>/snapshot.jsonl` and
//! are reloaded on open. TTL is measured from creation_ts (record
//! freshness, not merge wall-time); an entry is expired once
//! `now >= creation_ts + ttl`, and expired entries behave like absent
//! keys during merges.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use dashmap::DashMap;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsio;
use crate::record::{FeatureRecord, OnlineMergeReport, RecordSchema};
use crate::registry::FsvId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineEntry {
    pub key: String,
    pub record: FeatureRecord,
    /// creation_ts + ttl; absent means the entry never expires.
    pub expires_at: Option<i64>,
}

impl OnlineEntry {
    pub fn expired_at(&self, now: i64) -> bool {
        matches!(self.expires_at, Some(deadline) if now >= deadline)
    }
}

/// Why a lookup returned nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingReason {
    NeverMaterialized,
    Expired,
}

pub struct OnlineStore {
    dir: PathBuf,
    tables: DashMap<FsvId, Arc<DashMap<String, OnlineEntry>>>,
}

impl OnlineStore {
    pub fn new(root: &Path) -> OnlineStore {
        OnlineStore {
            dir: root.join("online"),
            tables: DashMap::new(),
        }
    }

    fn table(&self, fsv: &FsvId) -> Arc<DashMap<String, OnlineEntry>> {
        self.tables
            .entry(fsv.clone())
            .or_insert_with(|| Arc::new(DashMap::new()))
            .clone()
    }

    /// Merge records under the conditional-override rules. When `now`
    /// is given, an existing expired entry is treated as an absent key;
    /// without it the pure comparison rules apply (used by retries,
    /// which have no authoritative clock).
    pub fn merge(
        &self,
        fsv: &FsvId,
        schema: &RecordSchema,
        records: &[FeatureRecord],
        ttl: Option<i64>,
        now: Option<i64>,
    ) -> Result<OnlineMergeReport> {
        schema.validate_all(records)?;
        let table = self.table(fsv);
        let mut report = OnlineMergeReport::default();
        for record in records {
            let key = record.id_key()?;
            let expires_at = ttl.map(|t| record.creation_ts + t);
            let candidate = OnlineEntry {
                key: key.clone(),
                record: record.clone(),
                expires_at,
            };
            match table.entry(key) {
                dashmap::mapref::entry::Entry::Vacant(slot) => {
                    slot.insert(candidate);
                    report.inserted += 1;
                }
                dashmap::mapref::entry::Entry::Occupied(mut slot) => {
                    let existing = slot.get();
                    let treat_as_absent =
                        matches!(now, Some(now) if existing.expired_at(now));
                    if treat_as_absent {
                        slot.insert(candidate);
                        report.inserted += 1;
                    } else if record.version_key() > existing.record.version_key() {
                        slot.insert(candidate);
                        report.overridden += 1;
                    } else {
                        report.noop += 1;
                    }
                }
            }
        }
        Ok(report)
    }

    /// Look up the entry for a canonical id key, distinguishing an
    /// expired entry from one that was never materialized.
    pub fn get(
        &self,
        fsv: &FsvId,
        id_key: &str,
        now: i64,
    ) -> std::result::Result<FeatureRecord, MissingReason> {
        let table = self.table(fsv);
        let lookup = match table.get(id_key) {
            Some(entry) if entry.expired_at(now) => Err(MissingReason::Expired),
            Some(entry) => Ok(entry.record.clone()),
            None => Err(MissingReason::NeverMaterialized),
        };
        lookup
    }

    /// All entries of a feature set version, sorted by key.
    pub fn entries(&self, fsv: &FsvId) -> Vec<OnlineEntry> {
        let table = self.table(fsv);
        let mut out: Vec<OnlineEntry> = table.iter().map(|e| e.value().clone()).collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }

    fn snapshot_path(&self, fsv: &FsvId) -> PathBuf {
        self.dir
            .join(&fsv.name)
            .join(fsv.version.to_string())
            .join("snapshot.jsonl")
    }

    /// Persist every table to its snapshot file.
    pub fn persist(&self) -> Result<()> {
        for table in self.tables.iter() {
            let entries = self.entries(table.key());
            fsio::write_jsonl(&self.snapshot_path(table.key()), &entries)?;
        }
        Ok(())
    }

    /// Reload all snapshots found under the store directory.
    pub fn load(&self) -> Result<()> {
        for name in fsio::sorted_dir_names(&self.dir)? {
            let name_dir = self.dir.join(&name);
            for version in fsio::sorted_dir_names(&name_dir)? {
                let Ok(version_num) = version.parse::<u32>() else {
                    continue;
                };
                let path = name_dir.join(&version).join("snapshot.jsonl");
                if !path.exists() {
                    continue;
                }
                let entries: Vec<OnlineEntry> = fsio::read_jsonl(&path)?;
                let fsv = FsvId::new(name.clone(), version_num);
                let table = self.table(&fsv);
                table.clear();
                for entry in entries {
                    table.insert(entry.key.clone(), entry);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{ScalarType, Value};
    use indexmap::indexmap;
    use tempfile::TempDir;

    fn schema() -> RecordSchema {
        RecordSchema {
            index_columns: vec![("account_id".into(), ScalarType::String)],
            timestamp_column: "ts".into(),
            features: vec![("amt".into(), ScalarType::Int64)],
        }
    }

    fn record(id: &str, event: i64, creation: i64, amt: i64) -> FeatureRecord {
        FeatureRecord {
            ids: indexmap! {"account_id".to_string() => Value::Str(id.into())},
            event_ts: event,
            creation_ts: creation,
            features: indexmap! {"amt".to_string() => Value::Int(amt)},
        }
    }

    fn store() -> (TempDir, OnlineStore, FsvId) {
        let dir = TempDir::new().unwrap();
        let store = OnlineStore::new(dir.path());
        (dir, store, FsvId::new("tx", 1))
    }

    fn fig5() -> [FeatureRecord; 4] {
        [
            record("a", 100, 150, 0),
            record("a", 200, 250, 1),
            record("a", 300, 350, 2),
            record("a", 200, 400, 3),
        ]
    }

    #[test]
    fn in_order_merge_keeps_latest() {
        let (_d, store, fsv) = store();
        let [r0, r1, r2, _] = fig5();
        store
            .merge(&fsv, &schema(), &[r0, r1, r2.clone()], None, Some(500))
            .unwrap();
        let entries = store.entries(&fsv);
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].record, r2);
    }

    #[test]
    fn older_event_with_newer_creation_is_noop() {
        let (_d, store, fsv) = store();
        let [r0, r1, r2, r3] = fig5();
        store
            .merge(&fsv, &schema(), &[r0, r1, r2.clone()], None, Some(500))
            .unwrap();
        let report = store
            .merge(&fsv, &schema(), &[r3], None, Some(500))
            .unwrap();
        assert_eq!(report.noop, 1);
        assert_eq!(store.entries(&fsv)[0].record, r2);
    }

    #[test]
    fn reverse_order_converges_to_same_entry() {
        let (_d, store, fsv) = store();
        let [r0, r1, r2, _] = fig5();
        store
            .merge(&fsv, &schema(), &[r2.clone(), r1, r0], None, Some(500))
            .unwrap();
        assert_eq!(store.entries(&fsv)[0].record, r2);
    }

    #[test]
    fn exact_timestamp_tie_is_noop() {
        let (_d, store, fsv) = store();
        let first = record("a", 100, 150, 1);
        let tie = record("a", 100, 150, 2);
        store.merge(&fsv, &schema(), &[first.clone()], None, None).unwrap();
        let report = store.merge(&fsv, &schema(), &[tie], None, None).unwrap();
        assert_eq!(report.noop, 1);
        assert_eq!(store.entries(&fsv)[0].record, first);
    }

    #[test]
    fn get_distinguishes_missing_reasons() {
        let (_d, store, fsv) = store();
        // ttl = 1ms: expires the instant after creation
        let r = record("a", 100, 150, 1);
        store
            .merge(&fsv, &schema(), &[r.clone()], Some(1), Some(150))
            .unwrap();
        assert_eq!(store.get(&fsv, "a", 150).unwrap(), r);
        assert_eq!(store.get(&fsv, "a", 151).unwrap_err(), MissingReason::Expired);
        assert_eq!(
            store.get(&fsv, "nobody", 150).unwrap_err(),
            MissingReason::NeverMaterialized
        );
    }

    #[test]
    fn expired_entry_behaves_like_absent_key_on_merge() {
        let (_d, store, fsv) = store();
        let newer = record("a", 200, 250, 1);
        let older = record("a", 100, 150, 2);
        store
            .merge(&fsv, &schema(), &[newer], Some(10), Some(250))
            .unwrap();
        // by now=400 the entry is expired, so the older record inserts
        let report = store
            .merge(&fsv, &schema(), &[older.clone()], Some(10), Some(400))
            .unwrap();
        assert_eq!(report.inserted, 1);
        assert_eq!(store.entries(&fsv)[0].record, older);
    }

    #[test]
    fn snapshot_round_trips() {
        let dir = TempDir::new().unwrap();
        let fsv = FsvId::new("tx", 1);
        let store = OnlineStore::new(dir.path());
        let r = record("a", 100, 150, 1);
        store
            .merge(&fsv, &schema(), &[r], Some(1000), Some(150))
            .unwrap();
        store.persist().unwrap();

        let reloaded = OnlineStore::new(dir.path());
        reloaded.load().unwrap();
        assert_eq!(reloaded.entries(&fsv), store.entries(&fsv));
    }
}
