//! Flat key-value configuration files.
//!
//! ```text
//! # comment
//! n_users = 500
//! seeds = 42 7 123
//!
//! [pipeline Ours]
//! retriever = vector
//! reranker = synthetic
//! pool_size = 200
//! ```
//!
//! Keys before the first section header belong to the unnamed root section.
//! A header is `[kind]` or `[kind name]`; the name may contain spaces.
//! Values run to the end of the line and are trimmed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Section {
    pub kind: String,
    pub name: Option<String>,
    pub entries: Vec<Entry>,
    pub line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    pub path: PathBuf,
    pub root: Section,
    pub sections: Vec<Section>,
}

impl KvConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = KvConfig {
            path: path.to_path_buf(),
            ..Default::default()
        };
        let mut current: Option<Section> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(path, line_no, "unterminated section header"))?
                    .trim();
                let (kind, name) = match header.split_once(char::is_whitespace) {
                    Some((k, n)) => (k.to_string(), Some(n.trim().to_string())),
                    None => (header.to_string(), None),
                };
                if kind.is_empty() {
                    return Err(Error::parse(path, line_no, "empty section header"));
                }
                if let Some(done) = current.take() {
                    cfg.sections.push(done);
                }
                current = Some(Section {
                    kind,
                    name,
                    entries: Vec::new(),
                    line: line_no,
                });
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, line_no, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(path, line_no, "empty key"));
            }
            let section = current.as_mut().unwrap_or(&mut cfg.root);
            if section.entries.iter().any(|e| e.key == key) {
                return Err(Error::parse(path, line_no, format!("duplicate key `{key}`")));
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line: line_no,
            });
        }
        if let Some(done) = current.take() {
            cfg.sections.push(done);
        }
        Ok(cfg)
    }

    pub fn sections_of<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.kind == kind)
    }
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Parses `key` if present.
    pub fn parse_opt<T>(&self, path: &Path, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|err| Error::parse(path, e.line, format!("`{key}`: {err}"))),
        }
    }

    /// Parses a whitespace- or comma-separated list.
    pub fn parse_list<T>(&self, path: &Path, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<T>()
                        .map_err(|err| Error::parse(path, e.line, format!("`{key}`: {err}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    /// Rejects keys outside `allowed`.
    pub fn check_keys(&self, path: &Path, allowed: &[&str]) -> Result<()> {
        for e in &self.entries {
            if !allowed.contains(&e.key.as_str()) {
                return Err(Error::parse(path, e.line, format!("unknown key `{}`", e.key)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# run
n_users = 500
seeds = 42 7 123

[pipeline Candidates Only]
retriever = vector
pool_size = 200
[world]
alignment=0.2
";

    #[test]
    fn parses_root_and_sections() {
        let cfg = KvConfig::parse(SAMPLE, Path::new("x.conf")).unwrap();
        let p = Path::new("x.conf");
        assert_eq!(cfg.root.parse_opt::<usize>(p, "n_users").unwrap(), Some(500));
        assert_eq!(
            cfg.root.parse_list::<u64>(p, "seeds").unwrap(),
            Some(vec![42, 7, 123])
        );
        assert_eq!(cfg.sections.len(), 2);
        assert_eq!(cfg.sections[0].name.as_deref(), Some("Candidates Only"));
        assert_eq!(cfg.sections_of("world").count(), 1);
        assert_eq!(
            cfg.sections[1].parse_opt::<f64>(p, "alignment").unwrap(),
            Some(0.2)
        );
    }

    #[test]
    fn reports_line_numbers() {
        let err = KvConfig::parse("a = 1\nbogus\n", Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = KvConfig::parse("a = 1\na = 2\n", Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn unknown_keys_rejected() {
        let cfg = KvConfig::parse("a = 1\nb = 2\n", Path::new("c")).unwrap();
        assert!(cfg.root.check_keys(Path::new("c"), &["a"]).is_err());
        assert!(cfg.root.check_keys(Path::new("c"), &["a", "b"]).is_ok());
    }
}
