//! Run manifests: canonical `key=value` records of what a command read,
//! resolved and wrote.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Ordered `key=value` entries; keys are unique and insertion order is kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = RunManifest::default();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let (key, value) = (key.into(), value.to_string());
        debug_assert!(!key.contains('=') && !key.contains('\n') && !value.contains('\n'));
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    /// Prefixes every `key=value` line of `text` with `prefix.`.
    pub fn set_block(&mut self, prefix: &str, text: &str) {
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            if let Some((k, v)) = line.split_once('=') {
                self.set(format!("{prefix}.{}", k.trim()), v.trim());
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Records `path` under `output.<name>` with its checksum.
    pub fn output_file(&mut self, name: &str, path: &Path) -> std::io::Result<()> {
        let digest = sha256_file(path)?;
        self.set(format!("output.{name}"), path.display());
        self.set(format!("sha256.{name}"), digest);
        Ok(())
    }

    /// Records `path` under `input.<name>` with its checksum.
    pub fn input_file(&mut self, name: &str, path: &Path) -> std::io::Result<()> {
        let digest = sha256_file(path)?;
        self.set(format!("input.{name}"), path.display());
        self.set(format!("sha256.input.{name}"), digest);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut m = RunManifest::default();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
            if m.get(k).is_some() {
                return Err(format!("line {}: duplicate key {k}", n + 1));
            }
            m.entries.push((k.to_string(), v.to_string()));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn round_trips_in_order() {
        let mut m = RunManifest::new("train");
        m.set("seed", 7);
        m.set_block("model", "classes=10\nclass_dim=2\n");
        m.set("seed", 8);
        let text = m.to_text();
        assert!(text.starts_with("command=train\nversion="));
        assert!(text.contains("seed=8\nmodel.classes=10\nmodel.class_dim=2\n"));
        assert_eq!(RunManifest::parse(&text).unwrap(), m);
        assert!(RunManifest::parse("a=1\na=2\n").is_err());
        assert!(RunManifest::parse("novalue\n").is_err());
    }
}
