//! CSV tables and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::config::ExperimentRecipe;
use crate::error::CliError;

/// Bumped whenever any CSV header or the manifest layout changes.
pub const SCHEMA_VERSION: u32 = 1;

/// An in-memory CSV table with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: &'static str,
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: &'static str, header: &'static [&'static str]) -> Self {
        Self {
            file,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "{}", self.file);
        self.rows.push(row);
    }

    fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(self.file);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Shortest representation that round-trips, in scientific notation for
/// very small or very large magnitudes.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-4..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn int<T: std::fmt::Display>(x: T) -> String {
    x.to_string()
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Everything needed to rerun a recipe and reproduce its CSVs.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub recipe: &'a str,
    pub params: serde_json::Value,
    pub resolved: serde_json::Value,
    pub seeds: &'a [u64],
    pub files: Vec<FileEntry>,
    pub git_describe: String,
    pub tool_version: &'static str,
    pub wall_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub name: &'static str,
    pub header: &'static [&'static str],
    pub rows: usize,
}

/// Output of one recipe run.
#[derive(Debug)]
pub struct RecipeOutput {
    pub tables: Vec<Table>,
    /// Fully resolved settings, recorded in the manifest.
    pub resolved: serde_json::Value,
    pub seeds: Vec<u64>,
}

/// `git describe` of the source tree this binary was built from.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .arg("-C")
        .arg(env!("CARGO_MANIFEST_DIR"))
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// Writes every table, then the manifest. Returns the paths written.
pub fn write_outputs(
    recipe: &ExperimentRecipe,
    out: &RecipeOutput,
    wall_time: Duration,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(&recipe.output_dir)?;
    let mut paths = Vec::new();
    for t in &out.tables {
        paths.push(t.write(&recipe.output_dir)?);
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        recipe: recipe.name.as_str(),
        params: serde_json::to_value(&recipe.params)?,
        resolved: out.resolved.clone(),
        seeds: &out.seeds,
        files: out
            .tables
            .iter()
            .map(|t| FileEntry {
                name: t.file,
                header: t.header,
                rows: t.rows.len(),
            })
            .collect(),
        git_describe: git_describe(),
        tool_version: env!("CARGO_PKG_VERSION"),
        wall_time_s: wall_time.as_secs_f64(),
    };
    let path = recipe.output_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    paths.push(path);
    Ok(paths)
}
