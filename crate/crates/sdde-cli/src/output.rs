//! Deterministic result files: fixed-format floats, one-line CSV headers,
//! and a run report that echoes every resolved parameter. Nothing here
//! depends on time, locale, or thread count, so re-running a command with
//! the configuration echoed in its report reproduces the numeric outputs
//! byte for byte.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Render a float with 17 significant digits — enough to round-trip any
/// finite f64 exactly. Non-finite values print as NaN / inf / -inf.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// The resolved output directory, created up front so filesystem problems
/// surface before any long computation starts.
pub struct OutDir {
    base: PathBuf,
}

impl OutDir {
    pub fn prepare(base: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(base).map_err(|e| {
            CliError::Io(format!(
                "cannot create output directory {}: {e}",
                base.display()
            ))
        })?;
        Ok(Self {
            base: base.to_path_buf(),
        })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.base.join(name);
        fs::write(&path, contents)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Comma-separated table with a single header line.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &str) -> Self {
        let mut buf = String::with_capacity(4096);
        buf.push_str(header);
        buf.push('\n');
        Self { buf }
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            self.buf.push_str(f.as_ref());
        }
        self.buf.push('\n');
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

/// `key = value` lines for report.txt. Deliberately carries no timestamps
/// or host details: two runs of the same configuration must produce the
/// same report apart from the echoed output directory.
pub struct Report {
    lines: Vec<String>,
}

impl Report {
    pub fn new() -> Self {
        Self { lines: Vec::new() }
    }

    pub fn entry<V: Display>(&mut self, key: &str, value: V) {
        self.lines.push(format!("{key} = {value}"));
    }

    pub fn float(&mut self, key: &str, value: f64) {
        self.entry(key, fmt_float(value));
    }

    pub fn render(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }
}
