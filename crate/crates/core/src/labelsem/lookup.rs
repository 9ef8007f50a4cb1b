use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};

use super::embedding::{parse_rows, write_rows};
use super::EmbeddingMatrix;

/// How a label was matched against the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Exact,
    Lowercase,
    Separator,
    /// Mean over the label's tokens, all of which were found.
    TokenMean,
    /// Mean over the subset of tokens that were found.
    PartialTokenMean,
}

fn is_separator(c: char) -> bool {
    c == '_' || c == '-' || c.is_whitespace()
}

fn find<'a>(emb: &'a EmbeddingMatrix, term: &str) -> Option<&'a [f64]> {
    emb.get(term).or_else(|| emb.get(&term.to_lowercase()))
}

/// Resolves `label` to a vector using the fall-out cascade
/// exact → lowercase → separator variants → token mean → partial token mean.
pub fn resolve_label(emb: &EmbeddingMatrix, label: &str) -> Result<(Vec<f64>, Resolution)> {
    if label.trim().is_empty() {
        return Err(Error::InvalidArgument("empty label".into()));
    }
    if let Some(v) = emb.get(label) {
        return Ok((v.to_vec(), Resolution::Exact));
    }
    let lower = label.to_lowercase();
    if let Some(v) = emb.get(&lower) {
        return Ok((v.to_vec(), Resolution::Lowercase));
    }
    let tokens: Vec<&str> = label.split(is_separator).filter(|t| !t.is_empty()).collect();
    for sep in [" ", "_", "-"] {
        let variant = tokens.join(sep);
        if let Some(v) = find(emb, &variant) {
            return Ok((v.to_vec(), Resolution::Separator));
        }
    }
    let found: Vec<&[f64]> = tokens.iter().filter_map(|t| find(emb, t)).collect();
    if found.is_empty() {
        return Err(Error::LabelUnresolvable(label.to_string()));
    }
    let mut mean = vec![0.0; emb.dim()];
    for v in &found {
        mean.iter_mut().zip(v.iter()).for_each(|(m, x)| *m += x);
    }
    let n = found.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let how = if found.len() == tokens.len() {
        Resolution::TokenMean
    } else {
        Resolution::PartialTokenMean
    };
    Ok((mean, how))
}

pub fn lookup_label(emb: &EmbeddingMatrix, label: &str) -> Result<Vec<f64>> {
    resolve_label(emb, label).map(|(v, _)| v)
}

/// Unit-norm label embeddings, one row per class in class order. Unlike
/// [`EmbeddingMatrix`] the label list may repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    labels: Vec<String>,
    rows: Matrix,
}

impl LabelMatrix {
    /// Normalizes each row to unit length; all-zero rows are rejected.
    pub fn new(labels: Vec<String>, rows: Matrix) -> Result<Self> {
        if labels.len() != rows.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                rows.rows()
            )));
        }
        let mut rows = rows;
        for (k, label) in labels.iter().enumerate() {
            let row = rows.row_mut(k);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("embedding of `{label}`")));
            }
            let n = norm(row);
            if n < 1e-12 {
                return Err(Error::Label {
                    index: k,
                    label: label.clone(),
                    source: Box::new(Error::ZeroVector("looked-up embedding is all zeros".into())),
                });
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        Ok(Self { labels, rows })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.rows.row(k)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let parsed = parse_rows(BufReader::new(file), path)?;
        let dim = parsed.first().map_or(0, |r| r.2.len());
        let labels = parsed.iter().map(|r| r.1.clone()).collect();
        let data = parsed.into_iter().flat_map(|r| r.2).collect::<Vec<_>>();
        let rows = Matrix::from_vec(data.len() / dim.max(1), dim, data)?;
        Self::new(labels, rows)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(
            path.as_ref(),
            self.dim(),
            self.labels.iter().map(String::as_str).zip(self.rows.iter_rows()),
        )
    }

    /// Rows reordered (and possibly subset) to follow `labels`.
    pub fn select(&self, labels: &[String]) -> Result<LabelMatrix> {
        let mut rows = Vec::with_capacity(labels.len());
        for (index, label) in labels.iter().enumerate() {
            let k = self.labels.iter().position(|l| l == label).ok_or_else(|| Error::Label {
                index,
                label: label.clone(),
                source: Box::new(Error::LabelUnresolvable(label.clone())),
            })?;
            rows.push(self.row(k).to_vec());
        }
        LabelMatrix::new(labels.to_vec(), Matrix::from_rows(&rows)?)
    }
}

/// Looks up every label and L2-normalizes the rows.
pub fn build_label_matrix<S: AsRef<str>>(emb: &EmbeddingMatrix, labels: &[S]) -> Result<LabelMatrix> {
    let mut data = Vec::with_capacity(labels.len() * emb.dim());
    for (index, label) in labels.iter().enumerate() {
        let v = lookup_label(emb, label.as_ref()).map_err(|e| Error::Label {
            index,
            label: label.as_ref().to_string(),
            source: Box::new(e),
        })?;
        data.extend(v);
    }
    let rows = Matrix::from_vec(labels.len(), emb.dim(), data)?;
    LabelMatrix::new(labels.iter().map(|l| l.as_ref().to_string()).collect(), rows)
}

/// Reads a CSV whose first column is the class name and whose remaining
/// columns are real-valued attributes.
pub fn read_attributes(path: impl AsRef<Path>) -> Result<(Vec<String>, nalgebra::DMatrix<f64>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut width = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let label = cols.next().unwrap_or_default().trim().to_string();
        let row: std::result::Result<Vec<f64>, _> = cols.map(|c| c.trim().parse::<f64>()).collect();
        let row = match row {
            Ok(r) => r,
            // a non-numeric first row is a header
            Err(_) if labels.is_empty() && width.is_none() => continue,
            Err(e) => return Err(Error::parse(path, lineno, e.to_string())),
        };
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {w} attributes, found {}", row.len()),
                ))
            }
            Some(_) => {}
        }
        labels.push(label);
        values.extend(row);
    }
    let width = width.unwrap_or(0);
    Ok((
        labels.clone(),
        nalgebra::DMatrix::from_row_slice(labels.len(), width, &values),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(
            2,
            [
                ("cat", vec![1.0, 0.0]),
                ("pickup", vec![1.0, 2.0]),
                ("truck", vec![3.0, 0.0]),
                ("oak tree", vec![0.0, 5.0]),
                ("up", vec![1.0, 1.0]),
                ("down", vec![-1.0, -1.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn cascade_order() {
        let emb = vocab();
        assert_eq!(resolve_label(&emb, "cat").unwrap().1, Resolution::Exact);
        assert_eq!(resolve_label(&emb, "Cat").unwrap().1, Resolution::Lowercase);
        let (v, how) = resolve_label(&emb, "Oak_Tree").unwrap();
        assert_eq!((v, how), (vec![0.0, 5.0], Resolution::Separator));
        let (v, how) = resolve_label(&emb, "pickup_truck").unwrap();
        assert_eq!((v, how), (vec![2.0, 1.0], Resolution::TokenMean));
        let (v, how) = resolve_label(&emb, "pickup-zzqx").unwrap();
        assert_eq!((v, how), (vec![1.0, 2.0], Resolution::PartialTokenMean));
        assert!(matches!(
            lookup_label(&emb, "zzqx"),
            Err(Error::LabelUnresolvable(l)) if l == "zzqx"
        ));
    }

    #[test]
    fn label_matrix_rows_are_unit_and_ordered() {
        let emb = vocab();
        let m = build_label_matrix(&emb, &["truck", "cat", "truck"]).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(0), m.row(2));
        let err = build_label_matrix(&emb, &["cat", "nope"]).unwrap_err();
        assert!(matches!(err, Error::Label { index: 1, .. }), "{err}");
    }

    #[test]
    fn cancelling_tokens_are_rejected() {
        let err = build_label_matrix(&vocab(), &["up_down"]).unwrap_err();
        assert!(err.to_string().contains("all zeros"), "{err}");
    }
}
