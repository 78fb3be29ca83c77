//! Offline store: append-only, event-day-partitioned record storage.
//!
//! Layout per feature set version:
//!
//! ```text
//! <root>/offline/<name>/<version>/manifest.json
//! <root>/offline/<name>/<version>/date=2024-01-15/part-00000.jsonl
//! ```
//!
//! Each partition holds every record whose event timestamp falls on that
//! UTC day, sorted by (ids, event_ts, creation_ts), one JSON record per
//! line. A merge inserts a record iff its full key is absent (the
//! insert-if-absent branch of the merge contract); existing records are
//! never modified or deleted. Partition files are replaced by temp-file
//! rename, which makes each partition's update atomic without a
//! transaction log; the manifest is a sidecar summary rewritten last.
//! Because partition contents are a sorted set, the on-disk bytes depend
//! only on the set of records merged, not on merge order.

use std::path::{Path, PathBuf};

use chrono::DateTime;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::record::{FeatureRecord, OfflineMergeReport, RecordSchema};
use crate::registry::FsvId;
use crate::window::FeatureWindow;

const MS_PER_DAY: i64 = 86_400_000;
const PART_FILE: &str = "part-00000.jsonl";

/// UTC date label of the partition an event timestamp belongs to.
pub fn partition_date(event_ts: i64) -> String {
    let day = event_ts.div_euclid(MS_PER_DAY);
    DateTime::from_timestamp_millis(day * MS_PER_DAY)
        .expect("event timestamp in range")
        .format("%Y-%m-%d")
        .to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PartitionEntry {
    date: String,
    file: String,
    record_count: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Manifest {
    partitions: Vec<PartitionEntry>,
}

pub struct OfflineStore {
    dir: PathBuf,
    write_gate: Mutex<()>,
}

impl OfflineStore {
    pub fn new(root: &Path) -> OfflineStore {
        OfflineStore {
            dir: root.join("offline"),
            write_gate: Mutex::new(()),
        }
    }

    fn fsv_dir(&self, fsv: &FsvId) -> PathBuf {
        self.dir.join(&fsv.name).join(fsv.version.to_string())
    }

    fn manifest_path(&self, fsv: &FsvId) -> PathBuf {
        self.fsv_dir(fsv).join("manifest.json")
    }

    fn read_manifest(&self, fsv: &FsvId) -> Result<Manifest> {
        match fsio::read_json(&self.manifest_path(fsv)) {
            Ok(m) => Ok(m),
            Err(Error::NotFound { .. }) => Ok(Manifest::default()),
            Err(e) => Err(e),
        }
    }

    /// Insert each record iff its (ids, event_ts, creation_ts) key is
    /// absent; otherwise skip it. Records land in their event-day
    /// partition; each touched partition is rewritten as a sorted set
    /// and committed atomically.
    pub fn merge(
        &self,
        fsv: &FsvId,
        schema: &RecordSchema,
        records: &[FeatureRecord],
    ) -> Result<OfflineMergeReport> {
        schema.validate_all(records)?;
        let _gate = self.write_gate.lock();

        // bucket incoming records by partition date
        let mut by_date: std::collections::BTreeMap<String, Vec<&FeatureRecord>> =
            std::collections::BTreeMap::new();
        for r in records {
            by_date.entry(partition_date(r.event_ts)).or_default().push(r);
        }

        let mut manifest = self.read_manifest(fsv)?;
        let mut report = OfflineMergeReport::default();
        let mut touched = false;
        for (date, incoming) in by_date {
            let dir = self.fsv_dir(fsv).join(format!("date={date}"));
            let path = dir.join(PART_FILE);
            let mut existing: Vec<FeatureRecord> = if path.exists() {
                fsio::read_jsonl(&path)?
            } else {
                Vec::new()
            };
            let mut keys: std::collections::HashSet<(String, i64, i64)> = existing
                .iter()
                .map(|r| r.full_key())
                .collect::<Result<_>>()?;

            let mut inserted_here = 0usize;
            for r in incoming {
                let key = r.full_key()?;
                if keys.insert(key) {
                    existing.push(r.clone());
                    inserted_here += 1;
                } else {
                    report.skipped += 1;
                }
            }
            if inserted_here == 0 {
                continue;
            }
            report.inserted += inserted_here;
            touched = true;
            existing.sort_by(sort_key);
            fsio::write_jsonl(&path, &existing)?;

            match manifest.partitions.iter_mut().find(|p| p.date == date) {
                Some(entry) => entry.record_count = existing.len(),
                None => manifest.partitions.push(PartitionEntry {
                    date,
                    file: PART_FILE.to_string(),
                    record_count: existing.len(),
                }),
            }
        }
        if touched {
            manifest.partitions.sort_by(|a, b| a.date.cmp(&b.date));
            fsio::write_json(&self.manifest_path(fsv), &manifest)?;
        }
        Ok(report)
    }

    /// Every record with event_ts inside `window`, optionally restricted
    /// to one canonical id key, sorted by (ids, event_ts, creation_ts).
    pub fn scan(
        &self,
        fsv: &FsvId,
        window: FeatureWindow,
        id_key: Option<&str>,
    ) -> Result<Vec<FeatureRecord>> {
        let mut out = Vec::new();
        for record in self.scan_all(fsv)? {
            if !window.contains(record.event_ts) {
                continue;
            }
            if let Some(filter) = id_key {
                if record.id_key()? != filter {
                    continue;
                }
            }
            out.push(record);
        }
        Ok(out)
    }

    /// Every committed record of a feature set version, in canonical
    /// order.
    pub fn scan_all(&self, fsv: &FsvId) -> Result<Vec<FeatureRecord>> {
        let manifest = self.read_manifest(fsv)?;
        let mut out = Vec::new();
        for p in &manifest.partitions {
            let path = self
                .fsv_dir(fsv)
                .join(format!("date={}", p.date))
                .join(&p.file);
            out.extend(fsio::read_jsonl::<FeatureRecord>(&path)?);
        }
        out.sort_by(sort_key);
        Ok(out)
    }

    pub fn is_empty(&self, fsv: &FsvId) -> Result<bool> {
        Ok(self.read_manifest(fsv)?.partitions.is_empty())
    }

    /// For each distinct id combination, the record maximizing
    /// (event_ts, creation_ts), optionally restricted to records created
    /// at or before `as_of`.
    pub fn latest_per_id(&self, fsv: &FsvId, as_of: Option<i64>) -> Result<Vec<FeatureRecord>> {
        let mut best: indexmap::IndexMap<String, FeatureRecord> = indexmap::IndexMap::new();
        for record in self.scan_all(fsv)? {
            if let Some(bound) = as_of {
                if record.creation_ts > bound {
                    continue;
                }
            }
            let key = record.id_key()?;
            match best.get(&key) {
                Some(current) if current.version_key() >= record.version_key() => {}
                _ => {
                    best.insert(key, record);
                }
            }
        }
        let mut out: Vec<FeatureRecord> = best.into_values().collect();
        out.sort_by(sort_key);
        Ok(out)
    }
}

fn sort_key(a: &FeatureRecord, b: &FeatureRecord) -> std::cmp::Ordering {
    let ka = a.id_key().unwrap_or_default();
    let kb = b.id_key().unwrap_or_default();
    ka.cmp(&kb)
        .then(a.event_ts.cmp(&b.event_ts))
        .then(a.creation_ts.cmp(&b.creation_ts))
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

    fn store() -> (TempDir, OfflineStore, FsvId) {
        let dir = TempDir::new().unwrap();
        let store = OfflineStore::new(dir.path());
        (dir, store, FsvId::new("tx", 1))
    }

    /// Fig.-5-shaped records: R0..R2 from one batch, R3 a rerun of R1's
    /// event time with a newer creation stamp.
    fn fig5() -> [FeatureRecord; 4] {
        [
            record("a", 100, 150, 0),
            record("a", 200, 250, 1),
            record("a", 300, 350, 2),
            record("a", 200, 400, 3),
        ]
    }

    #[test]
    fn merge_inserts_new_keys() {
        let (_d, store, fsv) = store();
        let [r0, r1, r2, _] = fig5();
        let report = store.merge(&fsv, &schema(), &[r0, r1, r2]).unwrap();
        assert_eq!(report, OfflineMergeReport { inserted: 3, skipped: 0 });
        assert_eq!(store.scan_all(&fsv).unwrap().len(), 3);
    }

    #[test]
    fn remerge_is_noop() {
        let (_d, store, fsv) = store();
        let [r0, r1, r2, _] = fig5();
        store.merge(&fsv, &schema(), &[r0.clone(), r1, r2]).unwrap();
        let report = store.merge(&fsv, &schema(), &[r0]).unwrap();
        assert_eq!(report, OfflineMergeReport { inserted: 0, skipped: 1 });
        assert_eq!(store.scan_all(&fsv).unwrap().len(), 3);
    }

    #[test]
    fn same_event_new_creation_is_a_new_record() {
        let (_d, store, fsv) = store();
        let [r0, r1, r2, r3] = fig5();
        store.merge(&fsv, &schema(), &[r0, r1, r2]).unwrap();
        let report = store.merge(&fsv, &schema(), &[r3]).unwrap();
        assert_eq!(report.inserted, 1);
        assert_eq!(store.scan_all(&fsv).unwrap().len(), 4);
    }

    #[test]
    fn latest_per_id_takes_event_then_creation_max() {
        let (_d, store, fsv) = store();
        let [r0, r1, r2, r3] = fig5();
        store.merge(&fsv, &schema(), &[r0, r1, r2.clone(), r3]).unwrap();
        // R2 has the greatest event_ts even though R3 was created last
        assert_eq!(store.latest_per_id(&fsv, None).unwrap(), vec![r2]);
    }

    #[test]
    fn latest_per_id_empty_store() {
        let (_d, store, fsv) = store();
        assert!(store.latest_per_id(&fsv, None).unwrap().is_empty());
        assert!(store.is_empty(&fsv).unwrap());
    }

    #[test]
    fn latest_per_id_one_record_per_distinct_id() {
        let (_d, store, fsv) = store();
        let a = record("a", 100, 150, 1);
        let b = record("b", 120, 160, 2);
        store.merge(&fsv, &schema(), &[a.clone(), b.clone()]).unwrap();
        // brute-force group-by max over two singleton groups
        assert_eq!(store.latest_per_id(&fsv, None).unwrap(), vec![a, b]);
    }

    #[test]
    fn latest_per_id_respects_as_of() {
        let (_d, store, fsv) = store();
        let [r0, r1, r2, r3] = fig5();
        store.merge(&fsv, &schema(), &[r0, r1.clone(), r2, r3]).unwrap();
        // as_of before R2/R3 were created: R1 wins
        assert_eq!(store.latest_per_id(&fsv, Some(300)).unwrap(), vec![r1]);
    }

    #[test]
    fn scan_filters_window_and_ids() {
        let (_d, store, fsv) = store();
        let [r0, r1, r2, r3] = fig5();
        let b = record("b", 150, 500, 9);
        store
            .merge(&fsv, &schema(), &[r0, r1.clone(), r2, r3.clone(), b])
            .unwrap();
        let window = FeatureWindow::new(150, 300).unwrap();
        let scanned = store.scan(&fsv, window, Some("a")).unwrap();
        assert_eq!(scanned, vec![r1, r3]);
    }

    #[test]
    fn records_partition_by_event_day() {
        let (dir, store, fsv) = store();
        let day0 = record("a", 1_000, 2_000, 1);
        let day1 = record("a", MS_PER_DAY + 1_000, MS_PER_DAY + 2_000, 2);
        store.merge(&fsv, &schema(), &[day0, day1]).unwrap();
        assert!(dir
            .path()
            .join("offline/tx/1/date=1970-01-01")
            .join(PART_FILE)
            .exists());
        assert!(dir
            .path()
            .join("offline/tx/1/date=1970-01-02")
            .join(PART_FILE)
            .exists());
    }

    #[test]
    fn invalid_records_rejected_before_any_write() {
        let (_d, store, fsv) = store();
        let bad = record("a", 100, 100, 1); // creation == event
        assert!(store.merge(&fsv, &schema(), &[bad]).is_err());
        assert!(store.is_empty(&fsv).unwrap());
    }
}
