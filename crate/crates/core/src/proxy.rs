//! PCA over descriptor matrices: the reduced space used as a cheap stand-in
//! for chemical similarity throughout the loop.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::DescriptorVector;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProxyError {
    #[error("need at least two rows to fit, got {0}")]
    TooFewRows(usize),
    #[error("n_components {k} must be between 1 and min(rows, features) = {max}")]
    InvalidComponentCount { k: usize, max: usize },
    #[error("row {0} has schema {1:?}, expected {2:?}")]
    InconsistentSchema(usize, String, String),
    #[error("schema mismatch: model was fit on {model:?}, vector is {vector:?}")]
    SchemaMismatch { model: String, vector: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    CenterOnly,
    Standardize,
}

/// A fitted PCA basis. Component rows are orthonormal; explained-variance
/// fractions are relative to the total variance of the fitted data, so they
/// sum to at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    schema: String,
    scaling: Scaling,
    means: Vec<f64>,
    scales: Vec<f64>,
    components: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    explained_variance: Vec<f64>,
    /// Features that had zero variance under standardize; their scale is
    /// pinned to one instead of dividing by zero.
    degenerate_features: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyPoint {
    pub coordinates: Vec<f64>,
}

impl PcaModel {
    pub fn schema(&self) -> &str {
        &self.schema
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn n_features(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Variance captured by each kept component, largest first.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Fraction of total variance per kept component, non-increasing.
    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn degenerate_features(&self) -> &[usize] {
        &self.degenerate_features
    }
}

/// Fit a PCA basis by eigendecomposition of the covariance matrix of the
/// centered (and optionally standardized) rows. Components are ordered by
/// eigenvalue, and each is signed so its largest-magnitude loading is
/// positive. Variances use the n-1 denominator, so standardize makes the
/// covariance an exact correlation matrix.
pub fn fit_pca(
    rows: &[DescriptorVector],
    n_components: usize,
    scaling: Scaling,
) -> Result<PcaModel, ProxyError> {
    let n = rows.len();
    if n < 2 {
        return Err(ProxyError::TooFewRows(n));
    }
    let schema = rows[0].schema().to_string();
    let f = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.schema() != schema || row.len() != f {
            return Err(ProxyError::InconsistentSchema(
                i,
                row.schema().to_string(),
                schema,
            ));
        }
    }
    let max_k = n.min(f);
    if n_components == 0 || n_components > max_k {
        return Err(ProxyError::InvalidComponentCount {
            k: n_components,
            max: max_k,
        });
    }

    let mut means = vec![0f64; f];
    for row in rows {
        for (m, v) in means.iter_mut().zip(row.values()) {
            *m += v;
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }

    let mut variances = vec![0f64; f];
    for row in rows {
        for ((var, v), m) in variances.iter_mut().zip(row.values()).zip(&means) {
            *var += (v - m) * (v - m);
        }
    }
    for var in variances.iter_mut() {
        *var /= (n - 1) as f64;
    }

    let mut degenerate_features = Vec::new();
    let scales: Vec<f64> = match scaling {
        Scaling::CenterOnly => vec![1.0; f],
        Scaling::Standardize => variances
            .iter()
            .enumerate()
            .map(|(j, &var)| {
                if var == 0.0 {
                    degenerate_features.push(j);
                    1.0
                } else {
                    var.sqrt()
                }
            })
            .collect(),
    };

    let z = DMatrix::from_fn(n, f, |i, j| (rows[i].values()[j] - means[j]) / scales[j]);
    let cov = (z.transpose() * &z) / (n - 1) as f64;
    let eigen = cov.symmetric_eigen();

    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap()
    });

    let all_eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| eigen.eigenvalues[i].max(0.0))
        .collect();
    let total: f64 = all_eigenvalues.iter().sum();

    let mut components = Vec::with_capacity(n_components);
    for &i in order.iter().take(n_components) {
        let col = eigen.eigenvectors.column(i);
        let mut row: Vec<f64> = col.iter().copied().collect();
        let lead = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(j, _)| j)
            .unwrap();
        if row[lead] < 0.0 {
            for x in row.iter_mut() {
                *x = -*x;
            }
        }
        components.push(row);
    }

    let eigenvalues: Vec<f64> = all_eigenvalues[..n_components].to_vec();
    let explained_variance: Vec<f64> = eigenvalues
        .iter()
        .map(|&ev| if total > 0.0 { ev / total } else { 0.0 })
        .collect();

    Ok(PcaModel {
        schema,
        scaling,
        means,
        scales,
        components,
        eigenvalues,
        explained_variance,
        degenerate_features,
    })
}

pub fn project(model: &PcaModel, v: &DescriptorVector) -> Result<ProxyPoint, ProxyError> {
    if v.schema() != model.schema || v.len() != model.n_features() {
        return Err(ProxyError::SchemaMismatch {
            model: model.schema.clone(),
            vector: v.schema().to_string(),
        });
    }
    let z: Vec<f64> = v
        .values()
        .iter()
        .zip(&model.means)
        .zip(&model.scales)
        .map(|((x, m), s)| (x - m) / s)
        .collect();
    let coordinates = model
        .components
        .iter()
        .map(|row| row.iter().zip(&z).map(|(c, x)| c * x).sum())
        .collect();
    Ok(ProxyPoint { coordinates })
}

/// Map a projected point back to descriptor space. Exact only when the
/// model keeps every component; otherwise a least-squares reconstruction.
pub fn reconstruct(model: &PcaModel, point: &ProxyPoint) -> Vec<f64> {
    let k = model.n_components();
    let coords = DVector::from_column_slice(&point.coordinates[..k]);
    let c = DMatrix::from_fn(k, model.n_features(), |i, j| model.components[i][j]);
    let z = c.transpose() * coords;
    z.iter()
        .enumerate()
        .map(|(j, x)| x * model.scales[j] + model.means[j])
        .collect()
}

/// Cumulative explained-variance fractions, one entry per kept component.
pub fn explained_variance_report(model: &PcaModel) -> Vec<f64> {
    let mut cumulative = 0.0;
    model
        .explained_variance
        .iter()
        .map(|&f| {
            cumulative += f;
            cumulative
        })
        .collect()
}
