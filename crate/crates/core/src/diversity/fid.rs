use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::ordered_sum;
use crate::error::{Error, Result};
use crate::lite::LiteModel;
use crate::tensor::Tensor;

const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues below this fraction of the largest one are rounding noise.
const EIGEN_REL_FLOOR: f64 = 1e-13;
const NEGATIVE_SLACK: f64 = 1e-8;

/// How a `[N, C, T]` feature map becomes observation vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeaturePooling {
    /// One observation per series: the time average of each channel.
    #[default]
    GlobalAverage,
    /// One observation per (series, time step).
    PerTimestep,
}

/// Gaussian summary of one model's feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub model_id: String,
    pub dim: usize,
    pub mu: Vec<f64>,
    /// Unbiased covariance, row-major `dim x dim`.
    pub sigma: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub model_a: String,
    pub model_b: String,
    pub fid: f64,
}

impl FeatureStats {
    pub fn sigma_at(&self, i: usize, j: usize) -> f64 {
        self.sigma[i * self.dim + j]
    }

    fn sigma_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.sigma)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| (self.sigma_at(i, j) - self.sigma_at(j, i)).abs() <= tol))
    }
}

/// Mean and unbiased covariance of `rows` (one observation per row). Every
/// entry is an order-independent sum, so permuting the rows leaves the
/// result bit-identical.
pub fn stats_from_vectors(model_id: &str, rows: &[Vec<f64>]) -> Result<FeatureStats> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Usage(format!("feature statistics need at least 2 samples, got {n}")));
    }
    let dim = rows[0].len();
    if dim == 0 || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Dimension("feature vectors must share one non-zero length".into()));
    }
    let nf = n as f64;
    let mut buf = vec![0.0; n];
    let mu: Vec<f64> = (0..dim)
        .map(|c| {
            buf.iter_mut().zip(rows).for_each(|(b, r)| *b = r[c]);
            ordered_sum(&mut buf) / nf
        })
        .collect();
    let mut sigma = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            buf.iter_mut()
                .zip(rows)
                .for_each(|(b, r)| *b = (r[i] - mu[i]) * (r[j] - mu[j]));
            let v = ordered_sum(&mut buf) / (nf - 1.0);
            sigma[i * dim + j] = v;
            sigma[j * dim + i] = v;
        }
    }
    Ok(FeatureStats {
        model_id: model_id.to_string(),
        dim,
        mu,
        sigma,
        n_samples: n,
    })
}

/// Statistics of `model`'s final-block features on `x`, evaluated with
/// running batch-norm statistics.
pub fn feature_statistics(
    model: &LiteModel,
    x: &Tensor,
    model_id: &str,
    pooling: FeaturePooling,
) -> Result<FeatureStats> {
    if x.shape().first().copied().unwrap_or(0) < 2 {
        return Err(Error::Usage("feature statistics need at least 2 series".into()));
    }
    let (_, feats) = model.infer(x)?;
    let s = feats.shape();
    let (n, c, t) = (s[0], s[1], s[2]);
    let data = feats.data();
    let rows: Vec<Vec<f64>> = match pooling {
        FeaturePooling::GlobalAverage => (0..n)
            .map(|b| {
                (0..c)
                    .map(|ch| {
                        let off = (b * c + ch) * t;
                        data[off..off + t].iter().sum::<f64>() / t as f64
                    })
                    .collect()
            })
            .collect(),
        FeaturePooling::PerTimestep => (0..n)
            .flat_map(|b| (0..t).map(move |k| (0..c).map(|ch| data[(b * c + ch) * t + k]).collect()))
            .collect(),
    };
    stats_from_vectors(model_id, &rows)
}

fn root_spectrum(eigenvalues: &DVector<f64>) -> impl Iterator<Item = f64> + '_ {
    let floor = EIGEN_REL_FLOOR * eigenvalues.max().max(0.0);
    eigenvalues.iter().map(move |&l| if l <= floor { 0.0 } else { l.sqrt() })
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = DVector::from_iterator(eig.eigenvalues.len(), root_spectrum(&eig.eigenvalues));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of the product root is taken from the eigenvalues of the
/// symmetric matrix `S_a^(1/2) S_b S_a^(1/2)`, which shares its spectrum
/// with `S_a S_b`.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Dimension(format!("feature dimensions {} and {} differ", a.dim, b.dim)));
    }
    for s in [a, b] {
        if !s.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::Input(format!("covariance of {} is not symmetric", s.model_id)));
        }
    }
    let mean_term: f64 = a.mu.iter().zip(&b.mu).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = a.sigma_matrix();
    let sb = b.sigma_matrix();
    let root_a = symmetric_sqrt(&sa);
    let inner = &root_a * &sb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 = root_spectrum(&SymmetricEigen::new(inner).eigenvalues).sum();
    let d = mean_term + sa.trace() + sb.trace() - 2.0 * tr_root;
    if d >= 0.0 {
        Ok(d)
    } else if d >= -NEGATIVE_SLACK {
        Ok(0.0)
    } else {
        Err(Error::Numeric(format!("negative Fréchet distance {d}")))
    }
}
