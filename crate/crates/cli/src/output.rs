use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

/// Data files of one run, recorded for the manifest.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> cmllab::Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| cmllab::Error::Io(format!("{}: {e}", self.dir.display())))?;
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| cmllab::Error::Io(format!("{}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> cmllab::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| cmllab::Error::Parse(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Written next to the data files on success and on failure. Timing lives
/// here and nowhere else, so data files stay byte-identical across runs.
#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub status: String,
    pub error: Option<String>,
    pub started_unix_seconds: u64,
    pub wall_clock_seconds: f64,
}

/// CSV with a header; floats print in shortest round-trip form.
pub struct Csv(String);

impl Csv {
    pub fn new(header: &str) -> Self {
        Csv(format!("{header}\n"))
    }

    pub fn row(&mut self, fields: &[String]) {
        self.0.push_str(&fields.join(","));
        self.0.push('\n');
    }

    pub fn finish(self) -> String {
        self.0
    }
}

#[macro_export]
macro_rules! fields {
    ($($x:expr),* $(,)?) => { &[$(($x).to_string()),*] };
}
