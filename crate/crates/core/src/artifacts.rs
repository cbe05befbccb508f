//! File output helpers shared by the library and the CLI: atomic writes,
//! CSV headers with a config fingerprint, and plain key=value config echoes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::rng::fnv1a64;
use crate::Result;

/// Write `bytes` to `path` atomically (temp file in the same directory,
/// then rename), creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp: PathBuf = dir.join(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Hex FNV-1a fingerprint of a config echo, embedded in CSV headers so a
/// data file can be traced back to the exact run configuration.
pub fn config_hash(config_echo: &str) -> String {
    format!("{:016x}", fnv1a64(config_echo.as_bytes()))
}

/// Standard first line of every CSV the tool emits.
pub fn csv_header_comment(config_echo: &str) -> String {
    format!("# tool=symgen version={} config_hash={}", crate::VERSION, config_hash(config_echo))
}

/// A plain key=value config echo; the format is line-oriented so experiment
/// configs diff cleanly.
#[derive(Debug, Clone, Default)]
pub struct ConfigEcho {
    entries: Vec<(String, String)>,
}

impl ConfigEcho {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }

    /// Parse a key=value file; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        let mut echo = ConfigEcho::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                echo.push(k.trim(), v.trim());
            }
        }
        echo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_creates_dirs_and_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/c.txt");
        write_atomic(&path, b"hello").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"hello");
    }

    #[test]
    fn echo_roundtrip() {
        let mut e = ConfigEcho::new();
        e.push("map", "ikeda");
        e.push("seed", 42);
        let text = e.render();
        let back = ConfigEcho::parse(&text);
        assert_eq!(back.get("map"), Some("ikeda"));
        assert_eq!(back.get("seed"), Some("42"));
        assert_eq!(back.render(), text);
    }

    #[test]
    fn header_comment_changes_with_config() {
        let a = csv_header_comment("seed=1\n");
        let b = csv_header_comment("seed=2\n");
        assert_ne!(a, b);
        assert!(a.starts_with("# tool=symgen"));
    }
}
