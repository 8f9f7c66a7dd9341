use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::catalog::create;
use crate::error::{Error, Result};

/// Dense unit vectors keyed by id, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        EmbeddingSet {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Appends a vector, L2-normalizing it.
    pub fn push(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        let norm = l2_norm(vector);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "vector for `{id}` cannot be normalized"
            )));
        }
        if self.index.insert(id.clone(), self.ids.len()).is_some() {
            return Err(Error::DuplicateId(id));
        }
        self.ids.push(id);
        self.data.extend(vector.iter().map(|x| x / norm));
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[f64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&row| self.vector(row))
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim.max(1)))
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reads the `dim=<d>` / `<id>\t<v1> ... <vd>` text format, renormalizing rows.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let dim = loop {
        match lines.next() {
            None => return Err(Error::parse(path, 1, "missing `dim=<d>` header")),
            Some((idx, line)) => {
                let line = line.map_err(|e| Error::io(path, e))?;
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let d = line
                    .strip_prefix("dim=")
                    .ok_or_else(|| Error::parse(path, idx + 1, "expected `dim=<d>` header"))?;
                let d: usize = d
                    .trim()
                    .parse()
                    .map_err(|e| Error::parse(path, idx + 1, format!("dim: {e}")))?;
                if d == 0 {
                    return Err(Error::parse(path, idx + 1, "dim must be positive"));
                }
                break d;
            }
        }
    };
    let mut set = EmbeddingSet::new(dim);
    let mut buf = Vec::with_capacity(dim);
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected `<id>\\t<values>`"))?;
        buf.clear();
        for v in values.split_whitespace() {
            buf.push(
                v.parse::<f64>()
                    .map_err(|e| Error::parse(path, idx + 1, format!("value `{v}`: {e}")))?,
            );
        }
        set.push(id, &buf)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
    }
    Ok(set)
}

pub fn save_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "dim={}", set.dim()).map_err(io)?;
    for (id, v) in set.rows() {
        write!(out, "{id}\t").map_err(io)?;
        for (j, x) in v.iter().enumerate() {
            if j > 0 {
                out.write_all(b" ").map_err(io)?;
            }
            write!(out, "{x}").map_err(io)?;
        }
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_normalizes() {
        let mut set = EmbeddingSet::new(2);
        set.push("a", &[3.0, 4.0]).unwrap();
        assert!((l2_norm(set.get("a").unwrap()) - 1.0).abs() < 1e-12);
        assert_eq!(set.get("a").unwrap(), &[0.6, 0.8]);
    }

    #[test]
    fn rejects_bad_rows() {
        let mut set = EmbeddingSet::new(2);
        assert!(matches!(
            set.push("a", &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, actual: 1 })
        ));
        assert!(set.push("z", &[0.0, 0.0]).is_err());
        set.push("a", &[1.0, 0.0]).unwrap();
        assert!(matches!(set.push("a", &[0.0, 1.0]), Err(Error::DuplicateId(_))));
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        let mut set = EmbeddingSet::new(3);
        set.push("x", &[0.1, -0.7, 2.5]).unwrap();
        set.push("y", &[1.0, 1.0, 1.0]).unwrap();
        save_embeddings(&set, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn loader_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.txt");
        std::fs::write(&path, "dim=2\na\t1 0\nb\t1 nope\n").unwrap();
        let err = load_embeddings(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        std::fs::write(&path, "a\t1 0\n").unwrap();
        assert!(load_embeddings(&path).is_err());
    }
}
