use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Vocabulary-indexed table of `dim`-dimensional vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    dim: usize,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            vocab: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            dim,
        }
    }

    pub fn from_rows<S: Into<String>>(
        dim: usize,
        rows: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let mut emb = Self::new(dim);
        for (term, vector) in rows {
            emb.push(term, &vector)?;
        }
        Ok(emb)
    }

    pub fn push(&mut self, term: impl Into<String>, vector: &[f64]) -> Result<()> {
        let term = term.into();
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "term `{term}` has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("term `{term}` contains {bad}")));
        }
        if self.index.contains_key(&term) {
            return Err(Error::InvalidArgument(format!("duplicate term `{term}`")));
        }
        self.index.insert(term.clone(), self.vocab.len());
        self.vocab.push(term);
        self.vectors.extend_from_slice(vector);
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn contains(&self, term: &str) -> bool {
        self.index.contains_key(term)
    }

    pub fn get(&self, term: &str) -> Option<&[f64]> {
        self.index_of(term).map(|i| self.row(i))
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }


    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vocab
            .iter()
            .enumerate()
            .map(move |(i, t)| (t.as_str(), self.row(i)))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), path)
    }

    /// Parses the text format `term v1 ... vd`, one term per line. An optional
    /// `count dim` header line is accepted.
    pub fn parse(reader: impl BufRead, path: &Path) -> Result<Self> {
        let mut rows = parse_rows(reader, path)?;
        let dim = rows.first().map_or(0, |r| r.2.len());
        let mut emb = Self::new(dim);
        for (line, term, vector) in rows.drain(..) {
            emb.push(term, &vector)
                .map_err(|e| Error::parse(path, line, e.to_string()))?;
        }
        Ok(emb)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_rows(path, self.dim, self.iter())
    }
}

pub(crate) type ParsedRow = (usize, String, Vec<f64>);

/// Reads `(line number, term, values)` triples, skipping an optional header.
pub(crate) fn parse_rows(reader: impl BufRead, path: &Path) -> Result<Vec<ParsedRow>> {
    let mut rows: Vec<ParsedRow> = Vec::new();
    let mut header: Option<(usize, usize, usize)> = None;
    let mut dim: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut tokens = line.split_whitespace();
        let Some(term) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        if rows.is_empty() && header.is_none() && dim.is_none() && rest.len() == 1 {
            if let (Ok(count), Ok(d)) = (term.parse::<usize>(), rest[0].parse::<usize>()) {
                header = Some((lineno, count, d));
                continue;
            }
        }
        let mut values = Vec::with_capacity(rest.len());
        for tok in &rest {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, lineno, format!("invalid number `{tok}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, lineno, format!("non-finite value `{tok}`")));
            }
            values.push(v);
        }
        match dim {
            None => {
                if let Some((_, _, d)) = header {
                    if d != values.len() {
                        // the "header" was really a one-dimensional row
                        let (hl, _, _) = header.take().unwrap();
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!(
                                "expected {d} values (header on line {hl}), found {}",
                                values.len()
                            ),
                        ));
                    }
                }
                if values.is_empty() {
                    return Err(Error::parse(path, lineno, "term has no vector"));
                }
                dim = Some(values.len());
            }
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            Some(_) => {}
        }
        rows.push((lineno, term.to_string(), values));
    }
    if let Some((lineno, count, _)) = header {
        if count != rows.len() {
            return Err(Error::parse(
                path,
                lineno,
                format!("header declares {count} terms, file has {}", rows.len()),
            ));
        }
    }
    Ok(rows)
}

pub(crate) fn write_rows<'a>(
    path: &Path,
    dim: usize,
    rows: impl Iterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut body = Vec::new();
    let mut count = 0usize;
    for (term, vector) in rows {
        count += 1;
        body.push(term.to_string());
        for v in vector {
            body.push(format!(" {v}"));
        }
        body.push("\n".into());
    }
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{count} {dim}")?;
        for chunk in &body {
            out.write_all(chunk.as_bytes())?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}
