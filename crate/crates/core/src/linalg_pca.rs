//! Principal component analysis by dense SVD of the centered data matrix.
//!
//! The fit is deterministic: components are sorted by singular value and each
//! one is signed so that its largest-magnitude entry is positive (lowest index
//! wins ties). No whitening is applied.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Upper bound on retained components.
pub const MAX_COMPONENTS: usize = 128;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PcaError {
    #[error("PCA needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("k_max must be at least 1")]
    ZeroComponents,
    #[error("input contains a non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected} columns, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k × d`, rows orthonormal.
    #[serde(with = "rows")]
    pub components: DMatrix<f64>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// `Z = (X − mean) · Cᵀ`
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, PcaError> {
        if x.ncols() != self.input_dim() {
            return Err(PcaError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(self.center(x) * self.components.transpose())
    }

    /// `X̂ = Z · C + mean`
    pub fn reconstruct(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>, PcaError> {
        if z.ncols() != self.n_components() {
            return Err(PcaError::DimensionMismatch {
                expected: self.n_components(),
                actual: z.ncols(),
            });
        }
        let mut out = z * &self.components;
        for mut row in out.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        Ok(out)
    }

    fn center(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        c
    }
}

/// Fits PCA on the rows of `x`, keeping `k = min(k_max, n − 1, d)` components.
pub fn fit_pca(x: &DMatrix<f64>, k_max: usize) -> Result<PcaModel, PcaError> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(PcaError::TooFewRows(n));
    }
    if k_max == 0 {
        return Err(PcaError::ZeroComponents);
    }
    if let Some((i, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        // column-major storage
        return Err(PcaError::NonFinite {
            row: i % n,
            col: i / n,
        });
    }
    let k = k_max.min(n - 1).min(d);

    let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n as f64).collect();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sigma = svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    // stable sort keeps the solver's order among equal singular values
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let mut components = DMatrix::zeros(k, d);
    let mut explained_variance = Vec::with_capacity(k);
    for (r, &src) in order.iter().take(k).enumerate() {
        let mut v: DVector<f64> = v_t.row(src).transpose();
        let norm = v.norm();
        if norm > 0.0 {
            v /= norm;
        }
        if pivot_is_negative(v.as_slice()) {
            v.neg_mut();
        }
        components.set_row(r, &v.transpose());
        explained_variance.push(sigma[src] * sigma[src] / (n - 1) as f64);
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

fn pivot_is_negative(v: &[f64]) -> bool {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    v.get(best).is_some_and(|&x| x < 0.0)
}

/// Serializes a matrix as a JSON array of row arrays.
pub(crate) mod rows {
    use nalgebra::DMatrix;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_row_iterator(
            rows.len(),
            ncols,
            rows.into_iter().flatten(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_rows_clamp_to_one_zero_variance_component() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let m = fit_pca(&x, 128).unwrap();
        assert_eq!(m.n_components(), 1);
        assert_eq!(m.explained_variance, vec![0.0]);
        assert!((m.components.row(0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_hand_svd() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 2.0, 0.0, -2.0, 0.0]);
        let m = fit_pca(&x, 2).unwrap();
        assert_eq!(m.n_components(), 2);
        assert!((m.components[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(m.components[(0, 1)].abs() < 1e-12);
        // Σ x² = 10, n − 1 = 3
        assert!((m.explained_variance[0] - 10.0 / 3.0).abs() < 1e-12);
        assert!(m.explained_variance[1].abs() < 1e-12);
    }

    #[test]
    fn sign_rule_ties_go_to_lowest_index() {
        assert!(!pivot_is_negative(&[0.5, -0.5]));
        assert!(pivot_is_negative(&[-0.5, 0.5]));
        assert!(pivot_is_negative(&[0.1, -0.9]));
    }

    #[test]
    fn projecting_the_mean_gives_zeros() {
        let x = DMatrix::from_fn(6, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let m = fit_pca(&x, 3).unwrap();
        let means = DMatrix::from_fn(3, 4, |_, j| m.mean[j]);
        let z = m.project(&means).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        let one = m.project(&x.rows(0, 1).into_owned()).unwrap();
        assert_eq!(one.shape(), (1, 3));
    }

    #[test]
    fn zero_scores_reconstruct_the_mean() {
        let x = DMatrix::from_fn(5, 3, |i, j| (i as f64).powi(2) - j as f64);
        let m = fit_pca(&x, 2).unwrap();
        let back = m.reconstruct(&DMatrix::zeros(2, 2)).unwrap();
        for row in back.row_iter() {
            for (v, mu) in row.iter().zip(&m.mean) {
                assert_eq!(v, mu);
            }
        }
    }

    #[test]
    fn errors() {
        assert_eq!(
            fit_pca(&DMatrix::zeros(1, 3), 2).unwrap_err(),
            PcaError::TooFewRows(1)
        );
        assert_eq!(
            fit_pca(&DMatrix::zeros(3, 3), 0).unwrap_err(),
            PcaError::ZeroComponents
        );
        let mut x = DMatrix::zeros(3, 2);
        x[(2, 1)] = f64::NAN;
        assert_eq!(
            fit_pca(&x, 2).unwrap_err(),
            PcaError::NonFinite { row: 2, col: 1 }
        );
        let m = fit_pca(&DMatrix::from_fn(4, 3, |i, j| (i + j * j) as f64), 2).unwrap();
        assert!(matches!(
            m.project(&DMatrix::zeros(1, 4)),
            Err(PcaError::DimensionMismatch { expected: 3, actual: 4 })
        ));
        assert!(m.reconstruct(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let x = DMatrix::from_fn(7, 3, |i, j| ((i * 13 + j * 5) % 7) as f64 / 3.0);
        let m = fit_pca(&x, 3).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: PcaModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
