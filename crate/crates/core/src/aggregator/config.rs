use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AggregatorError;
use crate::catalogue::DEFAULT_CHUNK_DURATION_NS;
use crate::mdd::{DAT1_MDD, DST1_MDD, MddSchema, is_identifier, parse_mdd};

pub const CONFIG_ENV: &str = "APPDS_CONFIG";

fn default_chunk_duration() -> u64 {
    DEFAULT_CHUNK_DURATION_NS
}

fn default_cache_budget() -> u64 {
    256 << 20
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub source_id: u16,
    pub source_name: String,
    pub adapter_url: String,
    /// Path to an MDD file, or `builtin:dat1` / `builtin:dst1`.
    pub mdd_path: String,
}

impl SourceConfig {
    pub fn load_schema(&self, base: &Path) -> Result<MddSchema, AggregatorError> {
        let text = match self.mdd_path.as_str() {
            "builtin:dat1" => DAT1_MDD.to_string(),
            "builtin:dst1" => DST1_MDD.to_string(),
            p => fs::read_to_string(base.join(p)).map_err(|e| {
                AggregatorError::Config(format!("source {}: reading {p}: {e}", self.source_name))
            })?,
        };
        parse_mdd(&text).map_err(|e| {
            AggregatorError::Config(format!(
                "source {}: {}: {e}",
                self.source_name, self.mdd_path
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatorConfig {
    #[serde(default = "default_chunk_duration")]
    pub chunk_duration_ns: u64,
    pub log_path: PathBuf,
    #[serde(default = "default_cache_budget")]
    pub cache_budget_bytes: u64,
    pub sources: Vec<SourceConfig>,
    /// Where manifests are kept; defaults to `collections/` next to the log.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collections_dir: Option<PathBuf>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl AggregatorConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, AggregatorError> {
        let mut config: AggregatorConfig =
            serde_json::from_str(text).map_err(|e| AggregatorError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, AggregatorError> {
        let text = fs::read_to_string(path)
            .map_err(|e| AggregatorError::Config(format!("reading {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn validate(&self) -> Result<(), AggregatorError> {
        if self.chunk_duration_ns == 0 {
            return Err(AggregatorError::Config(
                "chunk_duration_ns must be positive".into(),
            ));
        }
        let mut ids = HashSet::new();
        let mut names = HashSet::new();
        for s in &self.sources {
            if !is_identifier(&s.source_name) {
                return Err(AggregatorError::Config(format!(
                    "source name {:?} is not an identifier",
                    s.source_name
                )));
            }
            if !ids.insert(s.source_id) {
                return Err(AggregatorError::Config(format!(
                    "duplicate source_id {}",
                    s.source_id
                )));
            }
            if !names.insert(s.source_name.as_str()) {
                return Err(AggregatorError::Config(format!(
                    "duplicate source_name {:?}",
                    s.source_name
                )));
            }
        }
        Ok(())
    }

    pub fn resolved_log_path(&self) -> PathBuf {
        self.base_dir.join(&self.log_path)
    }

    pub fn resolved_collections_dir(&self) -> PathBuf {
        match &self.collections_dir {
            Some(d) => self.base_dir.join(d),
            None => self
                .resolved_log_path()
                .parent()
                .map(|p| p.join("collections"))
                .unwrap_or_else(|| PathBuf::from("collections")),
        }
    }

    pub fn source(&self, name: &str) -> Option<&SourceConfig> {
        self.sources.iter().find(|s| s.source_name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONFIG: &str = r#"{
        "chunk_duration_ns": 1000,
        "log_path": "state/mdc.log",
        "cache_budget_bytes": 4096,
        "sources": [
            {"source_id": 1, "source_name": "kascade", "adapter_url": "http://127.0.0.1:1", "mdd_path": "builtin:dat1"},
            {"source_id": 2, "source_name": "taiga", "adapter_url": "http://127.0.0.1:2", "mdd_path": "schemas/dst1.mdd"}
        ]
    }"#;

    #[test]
    fn parses_and_resolves_paths() {
        let c = AggregatorConfig::from_json(CONFIG, Path::new("/etc/appds")).unwrap();
        assert_eq!(c.resolved_log_path(), Path::new("/etc/appds/state/mdc.log"));
        assert_eq!(
            c.resolved_collections_dir(),
            Path::new("/etc/appds/state/collections")
        );
        assert_eq!(c.source("taiga").unwrap().source_id, 2);
        assert_eq!(
            c.sources[0].load_schema(&c.base_dir).unwrap().format_name(),
            "dat1"
        );
        assert!(matches!(
            c.sources[1].load_schema(&c.base_dir),
            Err(AggregatorError::Config(_))
        ));
    }

    #[test]
    fn rejects_duplicates() {
        let dup_id = CONFIG.replace("\"source_id\": 2", "\"source_id\": 1");
        assert!(AggregatorConfig::from_json(&dup_id, Path::new(".")).is_err());
        let dup_name = CONFIG.replace("\"taiga\"", "\"kascade\"");
        assert!(AggregatorConfig::from_json(&dup_name, Path::new(".")).is_err());
        let zero = CONFIG.replace("\"chunk_duration_ns\": 1000", "\"chunk_duration_ns\": 0");
        assert!(AggregatorConfig::from_json(&zero, Path::new(".")).is_err());
    }
}
