//! Writes tables as CSV and the manifest as JSON.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use crate::config::Format;
use crate::experiments::{RunManifest, Table};

pub const MANIFEST_FILE: &str = "manifest.json";

fn write_csv(path: &Path, table: &Table) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| c.render()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes every table (when CSV is requested) and the manifest. The manifest
/// is always written for failed runs so that the failure is on disk.
pub fn write_outputs(dir: &Path, formats: &[Format], manifest: &mut RunManifest, tables: &[Table]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    if formats.contains(&Format::Csv) {
        for table in tables {
            let name = format!("{}.csv", table.name);
            write_csv(&dir.join(&name), table)?;
            manifest.outputs.push(name);
        }
    }
    if formats.contains(&Format::Json) || !manifest.passed {
        manifest.outputs.push(MANIFEST_FILE.to_string());
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(manifest)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
