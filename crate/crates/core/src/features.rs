//! Feature-space machinery: proprioceptive feature extraction, feature
//! tables aligned by sample identity, standardization, PCA and
//! concatenation across modalities.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::datamodel::{ProprioRecord, SampleId};
use crate::error::{Error, Result};

/// A named feature vector for one sample. Column names carry the modality
/// that produced each value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub id: SampleId,
    pub columns: Vec<String>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(id: SampleId, modality: &str, values: Vec<f64>) -> Self {
        let columns = (0..values.len()).map(|i| format!("{modality}[{i}]")).collect();
        Self { id, columns, values }
    }
}

/// Rows = samples, columns = feature dimensions, with per-column provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub ids: Vec<SampleId>,
    pub columns: Vec<String>,
    pub data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn from_rows(rows: Vec<FeatureVector>) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::EmptyInput("no feature rows".into()))?;
        let columns = first.columns.clone();
        let d = columns.len();
        let mut data = Array2::zeros((rows.len(), d));
        let mut ids = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.values.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: row.values.len(),
                });
            }
            for (j, &v) in row.values.iter().enumerate() {
                data[[i, j]] = v;
            }
            ids.push(row.id.clone());
        }
        Ok(Self { ids, columns, data })
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).to_vec()
    }

    /// Column-wise concatenation of matrices over the same samples, in
    /// argument order. Row alignment is checked by sample identifier.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<FeatureMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::EmptyInput("no matrices to concatenate".into()))?;
        for part in &parts[1..] {
            if part.ids != first.ids {
                return Err(Error::IdentifierMismatch(
                    "feature matrices cover different samples".into(),
                ));
            }
        }
        let mut columns = Vec::new();
        let mut views = Vec::new();
        for part in parts {
            columns.extend(part.columns.iter().cloned());
            views.push(part.data.view());
        }
        let data = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::Other(e.to_string()))?;
        Ok(FeatureMatrix {
            ids: first.ids.clone(),
            columns,
            data,
        })
    }
}

/// Concatenates per-sample feature vectors, preserving column provenance.
/// All parts must belong to the same sample.
pub fn concat_features(parts: &[FeatureVector]) -> Result<FeatureVector> {
    let first = parts
        .first()
        .ok_or_else(|| Error::EmptyInput("no feature parts".into()))?;
    let mut out = FeatureVector {
        id: first.id.clone(),
        columns: Vec::new(),
        values: Vec::new(),
    };
    for part in parts {
        if part.id != first.id {
            return Err(Error::IdentifierMismatch(format!(
                "cannot concatenate features of {} with {}",
                first.id, part.id
            )));
        }
        out.columns.extend(part.columns.iter().cloned());
        out.values.extend(part.values.iter().cloned());
    }
    Ok(out)
}

/// The three proprioceptive summary values, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProprioFeatures {
    /// End-effector height at the push force threshold.
    pub z_f: f64,
    /// Height at first contact minus z_f; a stiffness proxy.
    pub delta_z: f64,
    /// Gripper width at the grasp force threshold.
    pub w_g: f64,
}

impl ProprioFeatures {
    pub fn to_vector(self, id: SampleId) -> FeatureVector {
        FeatureVector {
            id,
            columns: vec!["proprio.z_f".into(), "proprio.delta_z".into(), "proprio.w_g".into()],
            values: vec![self.z_f, self.delta_z, self.w_g],
        }
    }
}

/// Force level that counts as first contact during the push.
pub const CONTACT_THRESHOLD_N: f64 = 0.5;

/// Value of the series' value column at the first crossing of `threshold`
/// in the force column, linearly interpolated between bracketing samples.
fn value_at_crossing(series: &[[f64; 3]], threshold: f64) -> Option<f64> {
    let mut prev: Option<&[f64; 3]> = None;
    for row in series {
        let force = row[2];
        if force >= threshold {
            return Some(match prev {
                Some(p) if force > p[2] => {
                    let t = (threshold - p[2]) / (force - p[2]);
                    p[1] + t * (row[1] - p[1])
                }
                _ => row[1],
            });
        }
        prev = Some(row);
    }
    None
}

/// Extracts (z_f, delta_z, w_g) from a proprioceptive record.
pub fn proprio_features(rec: &ProprioRecord) -> Result<ProprioFeatures> {
    let z_f = value_at_crossing(&rec.push, rec.push_force_threshold)
        .ok_or_else(|| Error::ThresholdNotReached { series: "push".into() })?;
    let contact_z = value_at_crossing(&rec.push, CONTACT_THRESHOLD_N)
        .ok_or_else(|| Error::ThresholdNotReached { series: "push".into() })?;
    let w_g = value_at_crossing(&rec.grasp, rec.grasp_force_threshold)
        .ok_or_else(|| Error::ThresholdNotReached { series: "grasp".into() })?;
    Ok(ProprioFeatures {
        z_f,
        delta_z: contact_z - z_f,
        w_g,
    })
}

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaTarget {
    Components(usize),
    /// Smallest k whose cumulative explained-variance ratio reaches this
    /// fraction.
    VarianceFraction(f64),
}

impl Default for PcaTarget {
    fn default() -> Self {
        PcaTarget::VarianceFraction(0.95)
    }
}

/// Fitted PCA: mean, orthonormal components ordered by decreasing
/// explained variance, and optional per-column standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// k x d, rows orthonormal.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// Per-column (mean, std) applied before centering, if standardizing.
    pub standardizer: Option<(Vec<f64>, Vec<f64>)>,
    /// Indices of input columns kept after dropping zero-variance columns.
    pub kept_columns: Vec<usize>,
    /// Input dimensionality before column dropping.
    pub input_dim: usize,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }
}

/// Jacobi eigendecomposition of a symmetric matrix. Returns (eigenvalues,
/// eigenvectors as columns), unsorted.
fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]].abs() < 1e-30 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[[i, i]]).collect(), v)
}

/// Fits PCA on the (optionally standardized) sample covariance.
///
/// Zero-variance columns are dropped before standardization. The sign
/// convention makes the largest-magnitude entry of each component
/// positive.
pub fn pca_fit(x: &FeatureMatrix, target: PcaTarget, standardize: bool) -> Result<PcaModel> {
    let n = x.n_samples();
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let input_dim = x.n_features();
    let col_mean: Array1<f64> = x.data.mean_axis(Axis(0)).unwrap();
    let col_std: Vec<f64> = (0..input_dim)
        .map(|j| {
            let var = x
                .data
                .column(j)
                .iter()
                .map(|v| (v - col_mean[j]) * (v - col_mean[j]))
                .sum::<f64>()
                / n as f64;
            var.sqrt()
        })
        .collect();
    let kept_columns: Vec<usize> = if standardize {
        let kept: Vec<usize> = (0..input_dim).filter(|&j| col_std[j] > 1e-12).collect();
        if kept.len() < input_dim {
            eprintln!(
                "warning: dropping {} zero-variance column(s) before PCA",
                input_dim - kept.len()
            );
        }
        kept
    } else {
        (0..input_dim).collect()
    };
    let d = kept_columns.len();
    if d == 0 {
        return Err(Error::EmptyInput("all columns have zero variance".into()));
    }

    let mut work = Array2::<f64>::zeros((n, d));
    for (jj, &j) in kept_columns.iter().enumerate() {
        for i in 0..n {
            let mut v = x.data[[i, j]];
            if standardize {
                v = (v - col_mean[j]) / col_std[j];
            }
            work[[i, jj]] = v;
        }
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| work.column(j).sum() / n as f64)
        .collect();
    for i in 0..n {
        for j in 0..d {
            work[[i, j]] -= mean[j];
        }
    }
    // Sample covariance with the n-1 denominator.
    let mut cov = Array2::<f64>::zeros((d, d));
    for p in 0..d {
        for q in p..d {
            let c: f64 = (0..n).map(|i| work[[i, p]] * work[[i, q]]).sum::<f64>()
                / (n as f64 - 1.0);
            cov[[p, q]] = c;
            cov[[q, p]] = c;
        }
    }
    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap());
    let total: f64 = eigvals.iter().map(|v| v.max(0.0)).sum();
    let ratios: Vec<f64> = order
        .iter()
        .map(|&i| {
            if total > 0.0 {
                eigvals[i].max(0.0) / total
            } else {
                0.0
            }
        })
        .collect();
    let k = match target {
        PcaTarget::Components(k) => {
            if k == 0 || k > d {
                return Err(Error::Config(format!(
                    "component count {k} out of range [1, {d}]"
                )));
            }
            k
        }
        PcaTarget::VarianceFraction(v) => {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("variance fraction {v} not in [0,1]")));
            }
            let mut cum = 0.0;
            let mut k = d;
            for (i, r) in ratios.iter().enumerate() {
                cum += r;
                if cum >= v {
                    k = i + 1;
                    break;
                }
            }
            k
        }
    };
    let mut components: Vec<Vec<f64>> = order[..k]
        .iter()
        .map(|&i| eigvecs.column(i).to_vec())
        .collect();
    for comp in &mut components {
        let extreme = comp
            .iter()
            .cloned()
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
            .unwrap_or(0.0);
        if extreme < 0.0 {
            for v in comp.iter_mut() {
                *v = -*v;
            }
        }
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios[..k].to_vec(),
        standardizer: if standardize {
            Some((
                kept_columns.iter().map(|&j| col_mean[j]).collect(),
                kept_columns.iter().map(|&j| col_std[j]).collect(),
            ))
        } else {
            None
        },
        kept_columns,
        input_dim,
    })
}

fn project_row(model: &PcaModel, row: &[f64]) -> Vec<f64> {
    let mut centered: Vec<f64> = model
        .kept_columns
        .iter()
        .map(|&j| row[j])
        .collect();
    if let Some((mu, sd)) = &model.standardizer {
        for ((v, m), s) in centered.iter_mut().zip(mu).zip(sd) {
            *v = (*v - m) / s;
        }
    }
    for (v, m) in centered.iter_mut().zip(&model.mean) {
        *v -= m;
    }
    model
        .components
        .iter()
        .map(|comp| comp.iter().zip(&centered).map(|(c, v)| c * v).sum())
        .collect()
}

/// Maps rows of `x` into the principal subspace.
pub fn pca_transform(model: &PcaModel, x: &FeatureMatrix) -> Result<FeatureMatrix> {
    if x.n_features() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            got: x.n_features(),
        });
    }
    let k = model.n_components();
    let mut data = Array2::zeros((x.n_samples(), k));
    for i in 0..x.n_samples() {
        let projected = project_row(model, &x.row(i));
        for (j, v) in projected.into_iter().enumerate() {
            data[[i, j]] = v;
        }
    }
    Ok(FeatureMatrix {
        ids: x.ids.clone(),
        columns: (0..k).map(|j| format!("pca[{j}]")).collect(),
        data,
    })
}

/// Maps principal-subspace coordinates back to (standardized) input space.
pub fn pca_inverse_transform(model: &PcaModel, y: &FeatureMatrix) -> Result<FeatureMatrix> {
    let k = model.n_components();
    if y.n_features() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: y.n_features(),
        });
    }
    let d = model.mean.len();
    let mut data = Array2::zeros((y.n_samples(), d));
    for i in 0..y.n_samples() {
        for j in 0..d {
            let mut v = model.mean[j];
            for (c, comp) in model.components.iter().enumerate() {
                v += y.data[[i, c]] * comp[j];
            }
            if let Some((mu, sd)) = &model.standardizer {
                v = v * sd[j] + mu[j];
            }
            data[[i, j]] = v;
        }
    }
    Ok(FeatureMatrix {
        ids: y.ids.clone(),
        columns: (0..d).map(|j| format!("recon[{j}]")).collect(),
        data,
    })
}

pub fn save_pca(path: &std::path::Path, model: &PcaModel) -> Result<()> {
    let json = serde_json::to_string_pretty(model).map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_pca(path: &std::path::Path) -> Result<PcaModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub mod oracle {
    //! Brute-force PCA reference: explicit covariance plus a many-iteration
    //! power method with deflation. Used by the test suite to check the
    //! Jacobi path; kept independent of it.

    use super::*;

    pub fn power_method_pca(x: &FeatureMatrix) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = x.n_samples();
        let d = x.n_features();
        let mean: Vec<f64> = (0..d)
            .map(|j| x.data.column(j).sum() / n as f64)
            .collect();
        let mut cov = vec![vec![0.0; d]; d];
        for p in 0..d {
            for q in 0..d {
                cov[p][q] = (0..n)
                    .map(|i| (x.data[[i, p]] - mean[p]) * (x.data[[i, q]] - mean[q]))
                    .sum::<f64>()
                    / (n as f64 - 1.0);
            }
        }
        let mut eigvals = Vec::new();
        let mut eigvecs: Vec<Vec<f64>> = Vec::new();
        for c in 0..d {
            let mut v: Vec<f64> = (0..d)
                .map(|i| ((i + 3 * c + 1) as f64).sin())
                .collect();
            let mut lambda = 0.0;
            for _ in 0..20000 {
                // Deflate previously found directions.
                for prev in &eigvecs {
                    let dot: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                    for (vi, pi) in v.iter_mut().zip(prev) {
                        *vi -= dot * pi;
                    }
                }
                let mut next = vec![0.0; d];
                for (p, n_p) in next.iter_mut().enumerate() {
                    *n_p = (0..d).map(|q| cov[p][q] * v[q]).sum();
                }
                lambda = next.iter().map(|a| a * a).sum::<f64>().sqrt();
                if lambda < 1e-300 {
                    break;
                }
                for vi in next.iter_mut() {
                    *vi /= lambda;
                }
                v = next;
            }
            eigvals.push(lambda);
            eigvecs.push(v);
        }
        (eigvals, eigvecs)
    }
}
