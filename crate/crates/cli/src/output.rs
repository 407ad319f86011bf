//! Output directory handling: tracked file writes, a JSONL event log and the
//! reproducibility record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::Value;

use crate::config::{sha256_hex, PipelineConfig};
use crate::error::{CliError, CliResult};

pub const RUN_RECORD: &str = "run_record.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const CONFIG_FILE: &str = "config.json";

pub struct Output {
    root: PathBuf,
    files: Mutex<BTreeMap<String, String>>,
    log: Mutex<Vec<String>>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'a str,
    version: &'a str,
    core_version: &'a str,
    command: &'a str,
    seed: u64,
    config_sha256: String,
    /// Relative path → SHA-256 of every file this run wrote.
    outputs: &'a BTreeMap<String, String>,
}

impl Output {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Internal(format!("creating {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Mutex::new(BTreeMap::new()),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (slash separated) under the output root.
    /// Safe to call from worker threads.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Internal(format!("creating {}: {e}", parent.display())))?;
        }
        std::fs::write(&path, bytes)
            .map_err(|e| CliError::Internal(format!("writing {}: {e}", path.display())))?;
        self.files
            .lock()
            .expect("output lock")
            .insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::internal)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Appends one event to the log. Call from the coordinating thread only,
    /// so that the log order does not depend on scheduling.
    pub fn log(&self, level: &str, event: &str, fields: Value) {
        let mut line = serde_json::Map::new();
        line.insert("level".into(), level.into());
        line.insert("event".into(), event.into());
        if let Value::Object(extra) = fields {
            line.extend(extra);
        }
        if level == "warn" {
            eprintln!("warning: {event}: {}", Value::Object(line.clone()));
        }
        self.log
            .lock()
            .expect("log lock")
            .push(Value::Object(line).to_string());
    }

    /// Writes the log, the effective config and the run record.
    pub fn finish(self, command: &str, cfg: &PipelineConfig) -> CliResult<()> {
        let mut log = self.log.lock().expect("log lock").join("\n");
        if !log.is_empty() {
            log.push('\n');
        }
        self.write(LOG_FILE, log.as_bytes())?;
        self.write_json(CONFIG_FILE, cfg)?;
        let files = self.files.lock().expect("output lock").clone();
        let record = RunRecord {
            tool: "huwin",
            version: env!("CARGO_PKG_VERSION"),
            core_version: huwin_core::VERSION,
            command,
            seed: cfg.seed,
            config_sha256: cfg.hash(),
            outputs: &files,
        };
        self.write_json(RUN_RECORD, &record)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_lists_outputs_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let out = Output::create(dir.path()).unwrap();
        out.write("a/b.txt", b"abc").unwrap();
        out.log("info", "hello", serde_json::json!({"n": 1}));
        out.finish("test", &PipelineConfig::default()).unwrap();
        let record: Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(RUN_RECORD)).unwrap()).unwrap();
        assert_eq!(
            record["outputs"]["a/b.txt"],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(record["command"], "test");
        assert!(record["outputs"][LOG_FILE].is_string());
        let log = std::fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(log, "{\"event\":\"hello\",\"level\":\"info\",\"n\":1}\n");
    }
}
