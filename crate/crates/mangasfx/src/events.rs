//! Machine-readable per-stage event log (`events.jsonl`).

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct EventLog {
    sink: Option<Mutex<File>>,
}

impl EventLog {
    /// Appends to `path`, creating it (and its directory) when needed.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            sink: Some(Mutex::new(file)),
        })
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    /// Writes `{"ts_ms", "stage", "event", ...fields}` as one line. Logging
    /// failures are reported through `log` and otherwise ignored.
    pub fn emit(&self, stage: &str, event: &str, fields: Value) {
        let Some(sink) = &self.sink else { return };
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        let mut line = Map::new();
        line.insert("ts_ms".into(), json!(ts));
        line.insert("stage".into(), json!(stage));
        line.insert("event".into(), json!(event));
        if let Value::Object(extra) = fields {
            line.extend(extra);
        }
        let mut text = Value::Object(line).to_string();
        text.push('\n');
        let mut f = sink.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = f.write_all(text.as_bytes()) {
            log::warn!("event log write failed: {e}");
        }
    }
}
