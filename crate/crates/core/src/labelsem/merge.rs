use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

use super::EmbeddingMatrix;

/// Orthonormal directions sorted by decreasing eigenvalue of a symmetric matrix,
/// each signed so that its largest-magnitude entry is positive.
fn sorted_eigenvectors(sym: DMatrix<f64>) -> (Vec<f64>, Vec<DVector<f64>>) {
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v = eig.eigenvectors.column(i).into_owned();
            let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 {
                v.neg_mut();
            }
            v
        })
        .collect();
    (values, vectors)
}

/// Merges two embedding sets into one `target_dim`-dimensional space.
///
/// The common-vocabulary rows of both sets are concatenated column-wise and
/// projected onto the top right singular directions of that block. Terms known
/// to only one source borrow the other source's common-vocabulary column means
/// for the missing block before projection. Output vocabulary is `emb_a`'s in
/// order followed by the `emb_b`-only terms.
pub fn merge_embeddings(
    emb_a: &EmbeddingMatrix,
    emb_b: &EmbeddingMatrix,
    target_dim: usize,
) -> Result<EmbeddingMatrix> {
    let (da, db) = (emb_a.dim(), emb_b.dim());
    if target_dim == 0 || target_dim > da + db {
        return Err(Error::InvalidArgument(format!(
            "target_dim {target_dim} must be in 1..={}",
            da + db
        )));
    }
    let common: Vec<(usize, usize)> = emb_a
        .vocab()
        .iter()
        .enumerate()
        .filter_map(|(i, t)| emb_b.index_of(t).map(|j| (i, j)))
        .collect();
    if common.is_empty() {
        return Err(Error::NoCommonVocabulary);
    }

    let width = da + db;
    let mut gram = DMatrix::<f64>::zeros(width, width);
    let mut mean_a = vec![0.0; da];
    let mut mean_b = vec![0.0; db];
    let mut row = vec![0.0; width];
    for &(i, j) in &common {
        row[..da].copy_from_slice(emb_a.row(i));
        row[da..].copy_from_slice(emb_b.row(j));
        for (p, &x) in row.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (q, &y) in row.iter().enumerate() {
                gram[(p, q)] += x * y;
            }
        }
        mean_a.iter_mut().zip(emb_a.row(i)).for_each(|(m, x)| *m += x);
        mean_b.iter_mut().zip(emb_b.row(j)).for_each(|(m, x)| *m += x);
    }
    let n = common.len() as f64;
    mean_a.iter_mut().for_each(|m| *m /= n);
    mean_b.iter_mut().for_each(|m| *m /= n);

    let (_, directions) = sorted_eigenvectors(gram);
    let basis = &directions[..target_dim];
    let project = |row: &[f64]| -> Vec<f64> {
        basis
            .iter()
            .map(|v| v.iter().zip(row).map(|(a, b)| a * b).sum())
            .collect()
    };

    let mut out = EmbeddingMatrix::new(target_dim);
    for (term, a) in emb_a.iter() {
        row[..da].copy_from_slice(a);
        match emb_b.get(term) {
            Some(b) => row[da..].copy_from_slice(b),
            None => row[da..].copy_from_slice(&mean_b),
        }
        out.push(term, &project(&row))?;
    }
    for (term, b) in emb_b.iter() {
        if emb_a.contains(term) {
            continue;
        }
        row[..da].copy_from_slice(&mean_a);
        row[da..].copy_from_slice(b);
        out.push(term, &project(&row))?;
    }
    Ok(out)
}

/// Projects the rows of `attributes` onto their top `dim` principal components,
/// ordered by decreasing explained variance.
pub fn pca_reduce(attributes: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let (k, a) = attributes.shape();
    if dim == 0 || dim > k.min(a) {
        return Err(Error::InvalidArgument(format!(
            "PCA dimension {dim} must be in 1..={}",
            k.min(a)
        )));
    }
    if attributes.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("attribute matrix".into()));
    }
    let mut centered = attributes.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let cov = centered.transpose() * &centered;
    let (values, vectors) = sorted_eigenvectors(cov);
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values
        .iter()
        .filter(|&&v| v > top * 1e-12 * a as f64 && v > f64::MIN_POSITIVE)
        .count();
    if dim > rank {
        return Err(Error::InvalidArgument(format!(
            "PCA dimension {dim} exceeds the rank {rank} of the centered attributes"
        )));
    }
    let mut basis = DMatrix::<f64>::zeros(a, dim);
    for (c, v) in vectors.iter().take(dim).enumerate() {
        basis.set_column(c, v);
    }
    Ok(centered * basis)
}
