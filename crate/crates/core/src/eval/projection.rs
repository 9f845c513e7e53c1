use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Two-component PCA projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// One `[x, y]` per input row.
    pub coords: Vec<[f64; 2]>,
    /// Variance along each component.
    pub variance: [f64; 2],
    pub warnings: Vec<String>,
}

/// Project rows onto the top two principal components. Each component's sign
/// makes its largest-magnitude loading positive (first such index on ties).
/// Components with no variance give zero coordinates and a warning.
pub fn project_2d(features: &Matrix) -> Result<Projection> {
    let (n, d) = (features.rows(), features.cols());
    if n < 2 {
        return Err(Error::input(format!("projection needs at least 2 rows, got {n}")));
    }
    if d == 0 {
        return Err(Error::input("projection needs at least one feature"));
    }
    if !features.is_finite() {
        return Err(Error::numeric("non-finite features"));
    }
    let x = DMatrix::from_row_slice(n, d, features.as_slice());
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut warnings = Vec::new();
    let mut coords = vec![[0.0; 2]; n];
    let mut variance = [0.0; 2];
    for comp in 0..2 {
        let lambda = order.get(comp).map_or(0.0, |&k| eig.eigenvalues[k]);
        if comp >= d || lambda <= 1e-12 * top.max(f64::MIN_POSITIVE) {
            let msg = format!("principal component {} has zero variance; coordinates set to 0", comp + 1);
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(order[comp]).iter().copied().collect();
        let lead = (0..d).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, c) in coords.iter_mut().enumerate() {
            c[comp] = centered.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        variance[comp] = lambda;
    }
    Ok(Projection {
        coords,
        variance,
        warnings,
    })
}

/// CSV with columns `sample_id, x, y, class`.
pub fn write_projection_csv(path: &Path, ids: &[&str], coords: &[[f64; 2]], classes: &[&str]) -> Result<()> {
    if ids.len() != coords.len() || classes.len() != coords.len() {
        return Err(Error::input("projection ids, coordinates and classes differ in length"));
    }
    let err = |e: csv::Error| Error::Serde(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["sample_id", "x", "y", "class"]).map_err(err)?;
    for ((id, c), class) in ids.iter().zip(coords).zip(classes) {
        w.write_record([id.to_string(), c[0].to_string(), c[1].to_string(), class.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
