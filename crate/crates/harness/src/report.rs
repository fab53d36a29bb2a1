use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Schema version of every JSON report.
pub const SCHEMA: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: u32,
    command: &'a str,
    passed: bool,
    report: &'a T,
}

/// Writes `report` as pretty JSON, creating parent directories.
pub fn write_json<T: Serialize>(
    path: &Path,
    command: &str,
    passed: bool,
    report: &T,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(&Envelope {
        schema: SCHEMA,
        command,
        passed,
        report,
    })?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
