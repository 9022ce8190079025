//! Plain-text `key = value` manifests written next to checkpoints and runs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Ordered key-value record. Keys are unique; `set` replaces in place.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses the value under `key`.
    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Data(format!("manifest has no key `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Data(format!("manifest key `{key}` has bad value `{raw}`")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Manifest::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                row: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_keeps_order() {
        let mut m = Manifest::new();
        m.set("variant", "ls").set("budget", 14400).set("variant", "pd");
        let back = Manifest::from_text(&m.render()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.entries()[0].1, "pd");
        assert_eq!(back.parse::<u64>("budget").unwrap(), 14400);
        assert!(back.parse::<u64>("missing").is_err());
    }

    #[test]
    fn rejects_lines_without_equals() {
        assert!(matches!(
            Manifest::from_text("a = 1\nbroken\n"),
            Err(Error::Parse { row: 2, .. })
        ));
    }
}
