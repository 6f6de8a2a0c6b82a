//! Append-only run records: one JSON file per invocation under `<out>/runs/`.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value as Json;

use crate::config::Scenario;

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub id: String,
    pub command: String,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
    pub build: String,
    /// `None` for commands that use built-in seeds.
    pub seed: Option<u64>,
    pub threads: usize,
    /// Scenario after command-line overrides.
    pub config: Option<Scenario>,
    pub results: Json,
}

/// Crate version, profile and target of this binary.
pub fn build_fingerprint() -> String {
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    format!(
        "{} {} {}-{}",
        env!("CARGO_PKG_VERSION"),
        profile,
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

impl RunRecord {
    pub fn new(command: &str, config: Option<Scenario>, threads: usize, results: Json) -> Self {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let id = format!("{}-{:09}-{}", now.as_secs(), now.subsec_nanos(), command);
        Self {
            id,
            command: command.to_string(),
            timestamp: now.as_secs_f64(),
            build: build_fingerprint(),
            seed: config.as_ref().map(|s| s.mc.base_seed),
            threads,
            config,
            results,
        }
    }

    /// Writes the record to a new file in `dir`; existing records are never touched.
    pub fn persist(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)? + "\n";
        for attempt in 0u32.. {
            let name = if attempt == 0 { format!("{}.json", self.id) } else { format!("{}-{attempt}.json", self.id) };
            let path = dir.join(name);
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut file) => {
                    file.write_all(text.as_bytes())?;
                    return Ok(path);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e),
            }
        }
        unreachable!("attempt counter is unbounded")
    }
}
