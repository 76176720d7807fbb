use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::plot::{self, Series};
use crate::CliError;

/// Output directory with `curves/` and `plots/` subdirectories.
pub struct Out {
    dir: PathBuf,
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

impl Out {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        for sub in ["", "curves", "plots"] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d)
                .map_err(|e| CliError::Config(format!("--out: cannot create {}: {e}", d.display())))?;
        }
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| io(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| io(&path, e))
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.path(name);
        let mut text = header.join(",");
        text.push('\n');
        for r in rows {
            text.push_str(&r.join(","));
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| io(&path, e))
    }

    /// Columns of equal length written side by side.
    pub fn columns(&self, name: &str, cols: &[(&str, &[f64])]) -> Result<(), CliError> {
        let header: Vec<&str> = cols.iter().map(|c| c.0).collect();
        let n = cols.first().map_or(0, |c| c.1.len());
        let rows: Vec<Vec<String>> = (0..n).map(|i| cols.iter().map(|c| format!("{:.12e}", c.1[i])).collect()).collect();
        self.csv(name, &header, &rows)
    }

    pub fn plot(&self, name: &str, title: &str, series: &[Series<'_>]) -> Result<(), CliError> {
        let path = self.path(name);
        plot::write(&path, title, series).map_err(|e| io(&path, e))
    }
}

/// Safe file stem from a metric label.
pub fn stem(label: &str) -> String {
    let s: String = label.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    s.trim_matches('_').to_string()
}

pub fn num(v: f64) -> String {
    format!("{v:.12}")
}
