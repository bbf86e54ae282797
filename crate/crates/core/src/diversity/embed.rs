use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::filters::FilterDistanceMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub labels: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    /// The input had no spread; every point sits at the origin.
    pub degenerate: bool,
}

impl Embedding {
    pub fn to_csv(&self) -> Result<String> {
        let fmt = |e: csv::Error| Error::Format(e.to_string());
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "x", "y"]).map_err(fmt)?;
        for (l, c) in self.labels.iter().zip(&self.coords) {
            w.write_record([l.clone(), c[0].to_string(), c[1].to_string()]).map_err(fmt)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Classical (Torgerson) scaling of an `n x n` distance matrix into `dims`
/// coordinates. Returns `(coords, degenerate)`; each axis is flipped so its
/// first non-negligible coordinate is positive.
pub fn classical_mds(d: &[f64], n: usize, dims: usize) -> Result<(Vec<Vec<f64>>, bool)> {
    if d.len() != n * n {
        return Err(Error::Dimension(format!("{} entries for a {n}x{n} matrix", d.len())));
    }
    if d.iter().all(|&v| v == 0.0) {
        return Ok((vec![vec![0.0; dims]; n], true));
    }
    let sq = DMatrix::from_fn(n, n, |i, j| {
        let v = 0.5 * (d[i * n + j] + d[j * n + i]);
        v * v
    });
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut coords = vec![vec![0.0; dims]; n];
    for (axis, &k) in order.iter().take(dims).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        let v = eig.eigenvectors.column(k);
        let mut col: Vec<f64> = v.iter().map(|x| x * lambda.sqrt()).collect();
        let tiny = 1e-12 * scale.sqrt().max(1.0);
        if col.iter().find(|x| x.abs() > tiny).is_some_and(|&x| x < 0.0) {
            col.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in col.into_iter().enumerate() {
            coords[i][axis] = x;
        }
    }
    Ok((coords, false))
}

/// Two-dimensional classical scaling of a filter distance matrix.
pub fn embed_2d(matrix: &FilterDistanceMatrix) -> Result<Embedding> {
    let n = matrix.n();
    if n < 3 {
        return Err(Error::Usage(format!("embedding needs at least 3 points, got {n}")));
    }
    let (coords, degenerate) = classical_mds(&matrix.d, n, 2)?;
    Ok(Embedding {
        labels: matrix.labels.iter().map(|l| l.name()).collect(),
        coords: coords.into_iter().map(|c| [c[0], c[1]]).collect(),
        degenerate,
    })
}
