//! Versioned asset registry: entities and feature sets.
//!
//! Assets are immutable per version apart from an explicit mutable
//! subset (description, materialization policy). Changing anything else
//! means registering a new version. Each asset is one JSON document
//! under `<root>/registry/<kind>/<name>/<version>.json`, committed by
//! temp-file rename; writes are serialized through a single writer gate
//! per store root, reads go straight to committed documents.

use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::dsl;
use crate::error::{Error, Result};
use crate::fsio;
use crate::record::RecordSchema;
use crate::value::{is_identifier, ScalarType};

/// Identity of one feature set version. Used as the key for stores,
/// jobs, and data state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FsvId {
    pub name: String,
    pub version: u32,
}

impl FsvId {
    pub fn new(name: impl Into<String>, version: u32) -> FsvId {
        FsvId {
            name: name.into(),
            version,
        }
    }
}

impl std::fmt::Display for FsvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.name, self.version)
    }
}

/// Index/key columns for feature lookup and join. Created once, reused
/// across feature sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDef {
    pub name: String,
    pub version: u32,
    /// Ordered (column name, scalar type); types limited to string and
    /// int64 so index values stay key-encodable.
    pub index_columns: Vec<(String, ScalarType)>,
    #[serde(default)]
    pub description: String,
}

/// Reference to an entity version, resolved at registration time and
/// never re-resolved (entity versions are immutable).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub name: String,
    pub version: u32,
}

/// Where source rows come from and how they behave in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDef {
    /// Directory of JSON-lines source files.
    pub path: String,
    /// Timestamp column in the source data, integer milliseconds.
    pub timestamp_column: String,
    /// Extra history (ms) read before a feature window so window
    /// aggregations at the window start are complete.
    pub source_lookback: i64,
    /// Expected lateness (ms) of source data, honored during
    /// point-in-time retrieval.
    pub source_delay: i64,
}

/// The transformation a feature set applies to its source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransformDef {
    /// Windowed-aggregation / row-expression program, parsed at
    /// registration time.
    Dsl { dsl_program: String },
    /// Opaque in-process hook, resolved by id at calculation time.
    Opaque { opaque_id: String },
}

/// Managed materialization capabilities of a feature set version.
/// Mutable: may be replaced through `update_feature_set`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterializationPolicy {
    pub offline_enabled: bool,
    pub online_enabled: bool,
    /// Event-time width (ms) of each scheduled window; also the
    /// emission grid of the DSL executor.
    pub schedule_interval: i64,
    /// Online record lifetime (ms) measured from creation_ts; absent
    /// means records never expire.
    #[serde(default)]
    pub ttl: Option<i64>,
    /// Hold back scheduling until late source data has landed (ms).
    #[serde(default)]
    pub materialization_delay: i64,
}

impl MaterializationPolicy {
    pub fn any_sink_enabled(&self) -> bool {
        self.offline_enabled || self.online_enabled
    }

    fn validate(&self) -> Result<()> {
        if self.schedule_interval <= 0 {
            return Err(Error::InvalidSpec(
                "schedule_interval must be a positive duration".into(),
            ));
        }
        if let Some(ttl) = self.ttl {
            if ttl <= 0 {
                return Err(Error::InvalidSpec("ttl must be a positive duration".into()));
            }
        }
        if self.materialization_delay < 0 {
            return Err(Error::InvalidSpec(
                "materialization_delay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Versioned definition of source, transformation, output schema, and
/// materialization policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetSpec {
    pub name: String,
    pub version: u32,
    pub entities: Vec<EntityRef>,
    pub source: SourceDef,
    pub transformation: TransformDef,
    /// Ordered (feature name, scalar type).
    pub features: Vec<(String, ScalarType)>,
    /// Name of the event-timestamp column in the transform output.
    pub timestamp_column: String,
    pub materialization: MaterializationPolicy,
    #[serde(default)]
    pub description: String,
}

impl FeatureSetSpec {
    pub fn id(&self) -> FsvId {
        FsvId::new(self.name.clone(), self.version)
    }
}

/// Patch for the mutable subset of a feature set version.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSetPatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materialization: Option<MaterializationPolicy>,
}

impl FeatureSetPatch {
    /// Parse a patch document, rejecting any key outside the mutable
    /// subset.
    pub fn from_json(doc: &serde_json::Value) -> Result<FeatureSetPatch> {
        let obj = doc.as_object().ok_or_else(|| {
            Error::InvalidSpec("patch document must be a JSON object".into())
        })?;
        for key in obj.keys() {
            if key != "description" && key != "materialization" {
                return Err(Error::ImmutableFieldChange { field: key.clone() });
            }
        }
        serde_json::from_value(doc.clone()).map_err(|e| Error::InvalidSpec(e.to_string()))
    }
}

/// A feature set spec together with its resolved entity definitions.
#[derive(Debug, Clone)]
pub struct ResolvedFeatureSet {
    pub spec: FeatureSetSpec,
    pub entities: Vec<EntityDef>,
}

impl ResolvedFeatureSet {
    /// Index columns concatenated in entity list order.
    pub fn index_columns(&self) -> Vec<(String, ScalarType)> {
        self.entities
            .iter()
            .flat_map(|e| e.index_columns.iter().cloned())
            .collect()
    }

    pub fn record_schema(&self) -> RecordSchema {
        RecordSchema {
            index_columns: self.index_columns(),
            timestamp_column: self.spec.timestamp_column.clone(),
            features: self.spec.features.clone(),
        }
    }
}

pub struct Registry {
    dir: PathBuf,
    write_gate: Mutex<()>,
}

const ENTITY_KIND: &str = "entity";
const FEATURE_SET_KIND: &str = "featureset";

impl Registry {
    pub fn new(root: &Path) -> Registry {
        Registry {
            dir: root.join("registry"),
            write_gate: Mutex::new(()),
        }
    }

    fn asset_path(&self, kind: &str, name: &str, version: u32) -> PathBuf {
        self.dir.join(kind).join(name).join(format!("{version}.json"))
    }

    pub fn register_entity(&self, def: &EntityDef) -> Result<EntityDef> {
        validate_entity(def)?;
        let _gate = self.write_gate.lock();
        let path = self.asset_path(ENTITY_KIND, &def.name, def.version);
        if path.exists() {
            return Err(Error::DuplicateVersion {
                kind: ENTITY_KIND,
                name: def.name.clone(),
                version: def.version,
            });
        }
        fsio::write_json(&path, def)?;
        Ok(def.clone())
    }

    pub fn get_entity(&self, name: &str, version: u32) -> Result<EntityDef> {
        fsio::read_json(&self.asset_path(ENTITY_KIND, name, version)).map_err(|e| match e {
            Error::NotFound { .. } => Error::UnknownEntity {
                name: name.to_string(),
                version,
            },
            other => other,
        })
    }

    pub fn register_feature_set(&self, spec: &FeatureSetSpec) -> Result<FeatureSetSpec> {
        let entities = self.resolve_entities(spec)?;
        validate_feature_set(spec, &entities)?;
        let _gate = self.write_gate.lock();
        let path = self.asset_path(FEATURE_SET_KIND, &spec.name, spec.version);
        if path.exists() {
            return Err(Error::DuplicateVersion {
                kind: FEATURE_SET_KIND,
                name: spec.name.clone(),
                version: spec.version,
            });
        }
        fsio::write_json(&path, spec)?;
        Ok(spec.clone())
    }

    pub fn get_feature_set(&self, name: &str, version: u32) -> Result<FeatureSetSpec> {
        fsio::read_json(&self.asset_path(FEATURE_SET_KIND, name, version)).map_err(|e| match e {
            Error::NotFound { .. } => Error::NotFound {
                kind: "feature set",
                what: format!("{name}:{version}"),
            },
            other => other,
        })
    }

    pub fn resolve(&self, name: &str, version: u32) -> Result<ResolvedFeatureSet> {
        let spec = self.get_feature_set(name, version)?;
        let entities = self.resolve_entities(&spec)?;
        Ok(ResolvedFeatureSet { spec, entities })
    }

    /// Replace the mutable fields of a stored version. Immutable fields
    /// are carried over untouched, so they stay byte-identical.
    pub fn update_feature_set(
        &self,
        name: &str,
        version: u32,
        patch: &FeatureSetPatch,
    ) -> Result<FeatureSetSpec> {
        let _gate = self.write_gate.lock();
        let mut spec = self.get_feature_set(name, version)?;
        if let Some(description) = &patch.description {
            spec.description = description.clone();
        }
        if let Some(materialization) = &patch.materialization {
            materialization.validate()?;
            spec.materialization = materialization.clone();
        }
        fsio::write_json(&self.asset_path(FEATURE_SET_KIND, name, version), &spec)?;
        Ok(spec)
    }

    /// All feature set versions, optionally filtered by name prefix,
    /// sorted by (name, version).
    pub fn list_feature_sets(&self, prefix: Option<&str>) -> Result<Vec<FeatureSetSpec>> {
        let mut out = Vec::new();
        let base = self.dir.join(FEATURE_SET_KIND);
        for name in fsio::sorted_dir_names(&base)? {
            if let Some(p) = prefix {
                if !name.starts_with(p) {
                    continue;
                }
            }
            let mut versions: Vec<u32> = fsio::sorted_dir_names(&base.join(&name))?
                .into_iter()
                .filter_map(|f| f.strip_suffix(".json").and_then(|v| v.parse().ok()))
                .collect();
            versions.sort_unstable();
            for v in versions {
                out.push(self.get_feature_set(&name, v)?);
            }
        }
        Ok(out)
    }

    fn resolve_entities(&self, spec: &FeatureSetSpec) -> Result<Vec<EntityDef>> {
        spec.entities
            .iter()
            .map(|r| self.get_entity(&r.name, r.version))
            .collect()
    }
}

fn validate_entity(def: &EntityDef) -> Result<()> {
    if !is_identifier(&def.name) {
        return Err(Error::InvalidSpec(format!(
            "entity name '{}' is not a valid identifier",
            def.name
        )));
    }
    if def.version == 0 {
        return Err(Error::InvalidSpec("entity version must be positive".into()));
    }
    if def.index_columns.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "entity '{}' has no index columns",
            def.name
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for (col, ty) in &def.index_columns {
        if !is_identifier(col) {
            return Err(Error::InvalidSpec(format!(
                "index column '{col}' is not a valid identifier"
            )));
        }
        if !seen.insert(col.as_str()) {
            return Err(Error::InvalidSpec(format!(
                "duplicate index column '{col}'"
            )));
        }
        if *ty == ScalarType::Float64 {
            return Err(Error::InvalidSpec(format!(
                "index column '{col}' must be string or int64"
            )));
        }
    }
    Ok(())
}

fn validate_feature_set(spec: &FeatureSetSpec, entities: &[EntityDef]) -> Result<()> {
    if !is_identifier(&spec.name) {
        return Err(Error::InvalidSpec(format!(
            "feature set name '{}' is not a valid identifier",
            spec.name
        )));
    }
    if spec.version == 0 {
        return Err(Error::InvalidSpec(
            "feature set version must be positive".into(),
        ));
    }
    if entities.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "feature set '{}' references no entities",
            spec.name
        )));
    }
    if spec.features.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "feature set '{}' declares no features",
            spec.name
        )));
    }
    if !is_identifier(&spec.timestamp_column) {
        return Err(Error::InvalidSpec(format!(
            "timestamp column '{}' is not a valid identifier",
            spec.timestamp_column
        )));
    }
    if spec.source.source_lookback < 0 || spec.source.source_delay < 0 {
        return Err(Error::InvalidSpec(
            "source_lookback and source_delay must be non-negative".into(),
        ));
    }
    spec.materialization.validate()?;

    // Index columns across entities must not collide, and features must
    // be disjoint from index columns and the timestamp column.
    let mut index_names = std::collections::HashSet::new();
    for entity in entities {
        for (col, _) in &entity.index_columns {
            if !index_names.insert(col.clone()) {
                return Err(Error::SchemaConflict(format!(
                    "index column '{col}' appears in more than one entity"
                )));
            }
        }
    }
    if index_names.contains(&spec.timestamp_column) {
        return Err(Error::SchemaConflict(format!(
            "timestamp column '{}' collides with an index column",
            spec.timestamp_column
        )));
    }
    let mut feature_names = std::collections::HashSet::new();
    for (feature, _) in &spec.features {
        if !is_identifier(feature) {
            return Err(Error::InvalidSpec(format!(
                "feature name '{feature}' is not a valid identifier"
            )));
        }
        if !feature_names.insert(feature.clone()) {
            return Err(Error::SchemaConflict(format!(
                "duplicate feature name '{feature}'"
            )));
        }
        if index_names.contains(feature) {
            return Err(Error::SchemaConflict(format!(
                "feature '{feature}' collides with an index column"
            )));
        }
        if *feature == spec.timestamp_column {
            return Err(Error::SchemaConflict(format!(
                "feature '{feature}' collides with the timestamp column"
            )));
        }
    }

    // The DSL must at least parse at registration time; binding happens
    // against the source schema at calculation time.
    if let TransformDef::Dsl { dsl_program } = &spec.transformation {
        dsl::parse(dsl_program)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn registry() -> (TempDir, Registry) {
        let dir = TempDir::new().unwrap();
        let reg = Registry::new(dir.path());
        (dir, reg)
    }

    fn account_entity(version: u32, columns: &[&str]) -> EntityDef {
        EntityDef {
            name: "account".into(),
            version,
            index_columns: columns
                .iter()
                .map(|c| (c.to_string(), ScalarType::String))
                .collect(),
            description: String::new(),
        }
    }

    fn spec(name: &str, version: u32) -> FeatureSetSpec {
        FeatureSetSpec {
            name: name.into(),
            version,
            entities: vec![EntityRef {
                name: "account".into(),
                version: 1,
            }],
            source: SourceDef {
                path: "/tmp/src".into(),
                timestamp_column: "ts".into(),
                source_lookback: 0,
                source_delay: 0,
            },
            transformation: TransformDef::Dsl {
                dsl_program: "agg sum(amount) over 30d as amt_30d_sum".into(),
            },
            features: vec![("amt_30d_sum".into(), ScalarType::Int64)],
            timestamp_column: "ts".into(),
            materialization: MaterializationPolicy {
                offline_enabled: true,
                online_enabled: true,
                schedule_interval: 86_400_000,
                ttl: None,
                materialization_delay: 0,
            },
            description: String::new(),
        }
    }

    #[test]
    fn entity_register_and_lookup() {
        let (_dir, reg) = registry();
        reg.register_entity(&account_entity(1, &["account_id"])).unwrap();
        let got = reg.get_entity("account", 1).unwrap();
        assert_eq!(got.index_columns[0].0, "account_id");
    }

    #[test]
    fn entity_version_is_immutable() {
        let (_dir, reg) = registry();
        reg.register_entity(&account_entity(1, &["account_id"])).unwrap();
        let err = reg
            .register_entity(&account_entity(1, &["acct"]))
            .unwrap_err();
        assert_eq!(err.kind(), "DuplicateVersion");
    }

    #[test]
    fn entity_versions_coexist() {
        let (_dir, reg) = registry();
        reg.register_entity(&account_entity(1, &["account_id"])).unwrap();
        reg.register_entity(&account_entity(2, &["account_id", "region"]))
            .unwrap();
        // enumerate registry contents after both inserts
        assert_eq!(reg.get_entity("account", 1).unwrap().index_columns.len(), 1);
        assert_eq!(reg.get_entity("account", 2).unwrap().index_columns.len(), 2);
    }

    #[test]
    fn entity_requires_index_columns() {
        let (_dir, reg) = registry();
        let err = reg.register_entity(&account_entity(1, &[])).unwrap_err();
        assert_eq!(err.kind(), "InvalidSpec");
    }

    #[test]
    fn feature_set_round_trip() {
        let (_dir, reg) = registry();
        reg.register_entity(&account_entity(1, &["account_id"])).unwrap();
        let s = spec("tx_features", 1);
        reg.register_feature_set(&s).unwrap();
        assert_eq!(reg.get_feature_set("tx_features", 1).unwrap(), s);
    }

    #[test]
    fn feature_set_requires_known_entity() {
        let (_dir, reg) = registry();
        let err = reg.register_feature_set(&spec("tx_features", 1)).unwrap_err();
        assert_eq!(err.kind(), "UnknownEntity");
    }

    #[test]
    fn feature_name_colliding_with_index_column_rejected() {
        let (_dir, reg) = registry();
        reg.register_entity(&account_entity(1, &["account_id"])).unwrap();
        let mut s = spec("tx_features", 1);
        s.features = vec![("account_id".into(), ScalarType::Int64)];
        s.transformation = TransformDef::Dsl {
            dsl_program: "agg sum(amount) over 30d as account_id".into(),
        };
        let err = reg.register_feature_set(&s).unwrap_err();
        assert_eq!(err.kind(), "SchemaConflict");
    }

    #[test]
    fn unparsable_dsl_rejected_at_registration() {
        let (_dir, reg) = registry();
        reg.register_entity(&account_entity(1, &["account_id"])).unwrap();
        let mut s = spec("tx_features", 1);
        s.transformation = TransformDef::Dsl {
            dsl_program: "agg sum(amount over 30d".into(),
        };
        let err = reg.register_feature_set(&s).unwrap_err();
        assert_eq!(err.kind(), "DslParseError");
    }

    #[test]
    fn update_replaces_only_mutable_fields() {
        let (_dir, reg) = registry();
        reg.register_entity(&account_entity(1, &["account_id"])).unwrap();
        let s = spec("tx_features", 1);
        reg.register_feature_set(&s).unwrap();

        let patch = FeatureSetPatch {
            description: Some("daily transaction aggregates".into()),
            materialization: Some(MaterializationPolicy {
                offline_enabled: true,
                online_enabled: false,
                schedule_interval: 3_600_000,
                ttl: Some(86_400_000),
                materialization_delay: 1000,
            }),
        };
        let updated = reg.update_feature_set("tx_features", 1, &patch).unwrap();
        assert_eq!(updated.description, "daily transaction aggregates");
        assert_eq!(updated.materialization.schedule_interval, 3_600_000);
        // immutable fields untouched
        assert_eq!(updated.source, s.source);
        assert_eq!(updated.transformation, s.transformation);
        assert_eq!(updated.features, s.features);
        assert_eq!(updated.entities, s.entities);
        assert_eq!(updated.timestamp_column, s.timestamp_column);
    }

    #[test]
    fn patch_naming_immutable_field_rejected() {
        let doc = serde_json::json!({"source": {"path": "/elsewhere"}});
        let err = FeatureSetPatch::from_json(&doc).unwrap_err();
        assert_eq!(err.kind(), "ImmutableFieldChange");
    }

    #[test]
    fn update_missing_feature_set_is_not_found() {
        let (_dir, reg) = registry();
        let err = reg
            .update_feature_set("missing", 1, &FeatureSetPatch::default())
            .unwrap_err();
        assert_eq!(err.kind(), "NotFound");
    }

    #[test]
    fn get_missing_is_not_found() {
        let (_dir, reg) = registry();
        let err = reg.get_feature_set("missing", 1).unwrap_err();
        assert_eq!(err.kind(), "NotFound");
    }

    #[test]
    fn list_filters_by_prefix() {
        let (_dir, reg) = registry();
        reg.register_entity(&account_entity(1, &["account_id"])).unwrap();
        for name in ["tx_daily", "tx_hourly", "user_profile"] {
            reg.register_feature_set(&spec(name, 1)).unwrap();
        }
        reg.register_feature_set(&spec("tx_daily", 2)).unwrap();

        let all = reg.list_feature_sets(None).unwrap();
        let filtered = reg.list_feature_sets(Some("tx")).unwrap();
        // oracle: linear scan of the unfiltered listing
        let expected: Vec<_> = all
            .iter()
            .filter(|s| s.name.starts_with("tx"))
            .cloned()
            .collect();
        assert_eq!(filtered, expected);
        assert_eq!(filtered.len(), 3);
        assert!(reg.list_feature_sets(Some("zzz")).unwrap().is_empty());
    }
}
