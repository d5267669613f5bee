use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `rows x dims`, row-major.
    pub coords: Vec<Vec<f64>>,
    /// Share of total variance captured by each retained component.
    pub explained: Vec<f64>,
    /// Unit principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
}

/// Projects centered rows onto the top `dims` eigenvectors of their
/// covariance. Each direction is signed so its largest-magnitude loading is
/// positive. Data with no variance projects to zeros.
pub fn pca_project(rows: &[Vec<f64>], dims: usize) -> Result<Projection> {
    let n = rows.len();
    if dims == 0 || n < dims + 1 {
        return Err(Error::Precondition(format!("PCA to {dims} dimensions needs at least {} rows, got {n}", dims + 1)));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape("PCA rows differ in length"));
    }
    if dims > d {
        return Err(Error::Precondition(format!("cannot keep {dims} components of {d}-dimensional data")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "PCA input".into() });
    }

    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total: f64 = cov.diagonal().iter().sum();
    if total <= 0.0 {
        return Ok(Projection {
            coords: vec![vec![0.0; dims]; n],
            explained: vec![0.0; dims],
            components: (0..dims).map(|k| (0..d).map(|j| if j == k { 1.0 } else { 0.0 }).collect()).collect(),
        });
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(dims);
    let mut explained = Vec::with_capacity(dims);
    for &k in order.iter().take(dims) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained.push(eig.eigenvalues[k].max(0.0) / total);
    }
    let coords = (0..n)
        .map(|i| components.iter().map(|c| (0..d).map(|j| centered[(i, j)] * c[j]).sum()).collect())
        .collect();
    Ok(Projection { coords, explained, components })
}
