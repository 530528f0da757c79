use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sorl_core::export;

use crate::error::CliResult;

/// Writes artifacts into one directory and remembers their names.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir).map_err(|source| sorl_core::Error::Io { path: dir.clone(), source })?;
        Ok(Output { dir, files: Vec::new() })
    }

    pub fn text(&mut self, name: &str, contents: &str) -> CliResult<()> {
        export::write_file(&self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.text(name, &export::to_json(value))
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}
