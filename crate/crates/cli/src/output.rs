//! Output files staged in memory and committed together.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Default)]
pub struct Outputs {
    files: BTreeMap<PathBuf, Vec<u8>>,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, relative: impl Into<PathBuf>, contents: impl Into<Vec<u8>>) {
        self.files.insert(relative.into(), contents.into());
    }

    pub fn add_json(&mut self, relative: impl Into<PathBuf>, value: &serde_json::Value) {
        let mut text = serde_json::to_string_pretty(value).expect("json values always serialize");
        text.push('\n');
        self.add(relative, text);
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.keys().map(PathBuf::as_path)
    }

    pub fn get(&self, relative: impl AsRef<Path>) -> Option<&[u8]> {
        self.files.get(relative.as_ref()).map(Vec::as_slice)
    }

    /// Writes every staged file below `dir`.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let fail = |p: &Path, e: std::io::Error| CliError::Output(format!("{}: {e}", p.display()));
        let mut written = Vec::with_capacity(self.files.len());
        for (rel, contents) in &self.files {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| fail(parent, e))?;
            }
            std::fs::write(&path, contents).map_err(|e| fail(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Formats a float the way every CSV file does.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
