//! Flat `key = value` configuration files with `[section]` headers.
//!
//! The format is deliberately tiny: blank lines and `#` comments are
//! skipped, a `[name]` line opens a section, and every other line must be
//! `key = value` (first `=` splits). Values keep their text form; typed
//! access happens at the call site so error messages can name the key.
//! Serialization emits a canonical form that parses back to the same
//! sections and pairs, which is what lets a manifest double as a config.

use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub sections: Vec<Section>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub pairs: Vec<(String, String)>,
}

impl Section {
    pub fn new(name: &str) -> Self {
        Section { name: name.to_string(), pairs: Vec::new() }
    }

    /// Last occurrence wins, so later lines override earlier ones.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.pairs.push((key.to_string(), value.to_string()));
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, String> {
        let mut sections: Vec<Section> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| format!("line {}: unterminated section header", ln + 1))?
                    .trim();
                if name.is_empty() {
                    return Err(format!("line {}: empty section name", ln + 1));
                }
                sections.push(Section::new(name));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`, got {line:?}", ln + 1))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(format!("line {}: empty key", ln + 1));
            }
            let section = sections
                .last_mut()
                .ok_or_else(|| format!("line {}: `key = value` before any [section]", ln + 1))?;
            section.push(key, value.trim());
        }
        Ok(Config { sections })
    }

    pub fn load(path: &Path) -> Result<Config, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{}]", s.name);
            for (k, v) in &s.pairs {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }
}
