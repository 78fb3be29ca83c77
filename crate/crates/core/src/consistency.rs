//! Cross-store bootstrap and consistency checking.
//!
//! When a second store is enabled after the first has accumulated data,
//! bootstrapping copies state across instead of re-running backfills
//! (source data may no longer exist for early windows). Both directions
//! go through the stores' own merge operations, so every merge rule —
//! insert-if-absent offline, conditional override and TTL stamping
//! online — holds along the bootstrap path, and both directions are
//! idempotent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offline::OfflineStore;
use crate::online::OnlineStore;
use crate::registry::{FsvId, ResolvedFeatureSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootstrapDirection {
    OfflineToOnline,
    OnlineToOffline,
}

impl std::str::FromStr for BootstrapDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<BootstrapDirection> {
        match s {
            "offline-to-online" => Ok(BootstrapDirection::OfflineToOnline),
            "online-to-offline" => Ok(BootstrapDirection::OnlineToOffline),
            other => Err(Error::InvalidSpec(format!(
                "unknown bootstrap direction '{other}' (expected offline-to-online or online-to-offline)"
            ))),
        }
    }
}

/// For each id combination in the offline store, merge its latest
/// record (max of (event_ts, creation_ts)) into the online store.
/// Returns the number of records processed.
pub fn bootstrap_offline_to_online(
    fs: &ResolvedFeatureSet,
    offline: &OfflineStore,
    online: &OnlineStore,
    now: i64,
) -> Result<usize> {
    let policy = &fs.spec.materialization;
    if !policy.offline_enabled {
        return Err(Error::InvalidState(format!(
            "offline store is not enabled for '{}'",
            fs.spec.name
        )));
    }
    if !policy.online_enabled {
        return Err(Error::InvalidState(format!(
            "online store is not enabled for '{}'",
            fs.spec.name
        )));
    }
    let fsv = fs.spec.id();
    let latest = offline.latest_per_id(&fsv, None)?;
    online.merge(&fsv, &fs.record_schema(), &latest, policy.ttl, Some(now))?;
    Ok(latest.len())
}

/// Merge every online entry's record into the offline store. Returns
/// the number of records processed.
pub fn bootstrap_online_to_offline(
    fs: &ResolvedFeatureSet,
    offline: &OfflineStore,
    online: &OnlineStore,
) -> Result<usize> {
    let policy = &fs.spec.materialization;
    if !policy.online_enabled {
        return Err(Error::InvalidState(format!(
            "online store is not enabled for '{}'",
            fs.spec.name
        )));
    }
    if !policy.offline_enabled {
        return Err(Error::InvalidState(format!(
            "offline store is not enabled for '{}'",
            fs.spec.name
        )));
    }
    let fsv = fs.spec.id();
    let records: Vec<_> = online
        .entries(&fsv)
        .into_iter()
        .map(|e| e.record)
        .collect();
    offline.merge(&fsv, &fs.record_schema(), &records)?;
    Ok(records.len())
}

/// One key where the stores disagree, with each side's
/// (event_ts, creation_ts) when present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Divergence {
    pub key: String,
    pub offline: Option<(i64, i64)>,
    pub online: Option<(i64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub feature_set: FsvId,
    pub checked_keys: usize,
    pub divergences: Vec<Divergence>,
}

impl ConsistencyReport {
    pub fn is_consistent(&self) -> bool {
        self.divergences.is_empty()
    }
}

/// Verify that the online entry of every key equals the offline
/// latest-per-id view. Keys whose online side is expired at `now` — or
/// would already have expired under the policy TTL — are vacuously
/// consistent.
pub fn check_consistency(
    fs: &ResolvedFeatureSet,
    offline: &OfflineStore,
    online: &OnlineStore,
    now: i64,
) -> Result<ConsistencyReport> {
    let fsv = fs.spec.id();
    let ttl = fs.spec.materialization.ttl;
    let would_be_expired =
        |creation_ts: i64| matches!(ttl, Some(t) if now >= creation_ts + t);

    let mut offline_latest: std::collections::BTreeMap<String, (i64, i64)> =
        std::collections::BTreeMap::new();
    for record in offline.latest_per_id(&fsv, None)? {
        offline_latest.insert(record.id_key()?, record.version_key());
    }
    let mut online_live: std::collections::BTreeMap<String, (i64, i64)> =
        std::collections::BTreeMap::new();
    let mut online_expired: std::collections::BTreeSet<String> =
        std::collections::BTreeSet::new();
    for entry in online.entries(&fsv) {
        if entry.expired_at(now) {
            online_expired.insert(entry.key);
        } else {
            online_live.insert(entry.key, entry.record.version_key());
        }
    }

    let keys: std::collections::BTreeSet<String> = offline_latest
        .keys()
        .chain(online_live.keys())
        .cloned()
        .collect();
    let mut divergences = Vec::new();
    for key in &keys {
        if online_expired.contains(key) && !online_live.contains_key(key) {
            continue;
        }
        match (offline_latest.get(key), online_live.get(key)) {
            (Some(off), Some(on)) if off == on => {}
            (Some(off), None) if would_be_expired(off.1) => {}
            (offline_side, online_side) => divergences.push(Divergence {
                key: key.clone(),
                offline: offline_side.copied(),
                online: online_side.copied(),
            }),
        }
    }
    Ok(ConsistencyReport {
        feature_set: fsv,
        checked_keys: keys.len(),
        divergences,
    })
}
