//! Fidelity-kernel diagnostic: PCA down to the qubit count, batch angle
//! rescaling, ansatz states and the overlap matrix `K_ij = |⟨ψ_i|ψ_j⟩|²`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{pearson, spearman, Histogram, HISTOGRAM_BINS};
use crate::qsim::{ansatz_state, CircuitConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `d` rows of length `D`, orthonormal.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

/// Fits the top `d` principal directions of the centered data through the
/// smaller of its two Gram matrices. Each
/// direction is signed so its largest-magnitude entry is positive.
pub fn fit_pca(vectors: &[Vec<f64>], d: usize) -> Result<PcaModel> {
    let m = vectors.len();
    if m < d || m == 0 {
        return Err(Error::InsufficientSamples {
            needed: d.max(1),
            got: m,
        });
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    if d > dim {
        return Err(Error::InvalidConfig(format!(
            "cannot keep {d} components of {dim}-dimensional data"
        )));
    }
    let mean: Vec<f64> = (0..dim)
        .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / m as f64)
        .collect();
    let xc = DMatrix::from_fn(m, dim, |i, j| vectors[i][j] - mean[j]);
    // Right singular vectors of Xc are the eigenvectors of XcᵀXc; work with
    // whichever Gram matrix is smaller.
    let (vals, dirs): (Vec<f64>, Vec<Vec<f64>>) = if m < dim {
        let g = &xc * xc.transpose();
        let eig = SymmetricEigen::new(g);
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut vals = Vec::with_capacity(d);
        let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(d);
        for &k in idx.iter().take(d) {
            let lam = eig.eigenvalues[k].max(0.0);
            let u = eig.eigenvectors.column(k);
            let mut v: Vec<f64> = (0..dim)
                .map(|j| (0..m).map(|i| xc[(i, j)] * u[i]).sum())
                .collect();
            // Re-orthogonalize against earlier directions; this also covers
            // zero-variance directions, which get an arbitrary completion.
            gram_schmidt(&mut v, &dirs);
            vals.push(lam);
            dirs.push(v);
        }
        (vals, dirs)
    } else {
        let eig = SymmetricEigen::new(xc.transpose() * &xc);
        let mut idx: Vec<usize> = (0..dim).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let vals = idx
            .iter()
            .take(d)
            .map(|&k| eig.eigenvalues[k].max(0.0))
            .collect();
        let dirs = idx
            .iter()
            .take(d)
            .map(|&k| eig.eigenvectors.column(k).iter().copied().collect())
            .collect();
        (vals, dirs)
    };
    let denom = (m.max(2) - 1) as f64;
    let components = dirs
        .into_iter()
        .map(|mut v| {
            let (imax, _) = v.iter().enumerate().fold((0, 0.0f64), |acc, (i, x)| {
                if x.abs() > acc.1 {
                    (i, x.abs())
                } else {
                    acc
                }
            });
            if v[imax] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    Ok(PcaModel {
        mean,
        components,
        explained_variance: vals.iter().map(|l| l / denom).collect(),
    })
}

/// Orthonormalizes `v` against `basis`; a vector that vanishes is replaced
/// by the first standard basis vector that survives.
fn gram_schmidt(v: &mut [f64], basis: &[Vec<f64>]) {
    let project_out = |v: &mut [f64]| {
        for _ in 0..2 {
            for b in basis {
                let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    let mut n = project_out(v);
    let mut e = 0;
    while n < 1e-10 && e < v.len() {
        v.iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = if i == e { 1.0 } else { 0.0 });
        n = project_out(v);
        e += 1;
    }
    v.iter_mut().for_each(|x| *x /= n);
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: x.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(x)
                    .zip(&self.mean)
                    .map(|((ci, xi), mi)| ci * (xi - mi))
                    .sum()
            })
            .collect())
    }
}

/// Rescales each coordinate to [−π, π] by min-max over the batch. A constant
/// coordinate maps to 0.
pub fn batch_angles(projected: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = projected.first().map_or(0, Vec::len);
    let mut out = projected.to_vec();
    for j in 0..d {
        let lo = projected.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
        let hi = projected
            .iter()
            .map(|p| p[j])
            .fold(f64::NEG_INFINITY, f64::max);
        for row in out.iter_mut() {
            row[j] = if hi > lo {
                -PI + 2.0 * PI * (row[j] - lo) / (hi - lo)
            } else {
                0.0
            };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub ids: Vec<String>,
    /// Row-major `m × m`.
    pub values: Vec<f64>,
    /// Circuit angles per item, kept for auditing.
    pub angles: Vec<Vec<f64>>,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.len();
        let k = DMatrix::from_row_slice(m, m, &self.values);
        SymmetricEigen::new(k)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV with an id header row and an id first column.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id");
        for id in &self.ids {
            let _ = write!(s, ",{id}");
        }
        s.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            s.push_str(id);
            for j in 0..self.len() {
                let _ = write!(s, ",{}", self.get(i, j));
            }
            s.push('\n');
        }
        s
    }
}

/// Fidelity kernel over circuit angles, one ansatz state per item.
pub fn fidelity_kernel(
    ids: &[String],
    angles: Vec<Vec<f64>>,
    cfg: &CircuitConfig,
) -> Result<KernelMatrix> {
    let states = angles
        .par_iter()
        .map(|a| ansatz_state(a, cfg))
        .collect::<Result<Vec<_>>>()?;
    let m = states.len();
    let mut values = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let f = states[i].fidelity(&states[j]);
            values[i * m + j] = f;
            values[j * m + i] = f;
        }
    }
    Ok(KernelMatrix {
        ids: ids.to_vec(),
        values,
        angles,
    })
}

/// Projects, rescales to angles over the batch and builds the kernel.
pub fn encode_and_kernel(
    ids: &[String],
    vectors: &[Vec<f64>],
    pca: &PcaModel,
    cfg: &CircuitConfig,
) -> Result<KernelMatrix> {
    if pca.n_components() != cfg.n_qubits {
        return Err(Error::ThetaDimension {
            expected: cfg.n_qubits,
            got: pca.n_components(),
        });
    }
    if ids.len() != vectors.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            got: ids.len(),
        });
    }
    let projected = vectors
        .iter()
        .map(|v| pca.project(v))
        .collect::<Result<Vec<_>>>()?;
    fidelity_kernel(ids, batch_angles(&projected), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDiagnostics {
    pub n_pairs: usize,
    pub pearson: f64,
    pub spearman: f64,
    pub mean_kernel: f64,
    pub min_eigenvalue: f64,
    /// 20 bins over [0, 1].
    pub histogram: Histogram,
}

/// Correlates the upper triangle of `K` with reference similarities keyed by
/// unordered id pair.
pub fn kernel_diagnostics(
    k: &KernelMatrix,
    reference: &HashMap<(String, String), f64>,
) -> Result<KernelDiagnostics> {
    let lookup = |a: &str, b: &str| {
        reference
            .get(&(a.to_string(), b.to_string()))
            .or_else(|| reference.get(&(b.to_string(), a.to_string())))
    };
    let (mut kv, mut rv) = (Vec::new(), Vec::new());
    for i in 0..k.len() {
        for j in i + 1..k.len() {
            let r = lookup(&k.ids[i], &k.ids[j])
                .ok_or_else(|| Error::MappingError(format!("{} / {}", k.ids[i], k.ids[j])))?;
            kv.push(k.get(i, j));
            rv.push(*r);
        }
    }
    Ok(KernelDiagnostics {
        n_pairs: kv.len(),
        pearson: pearson(&kv, &rv)?,
        spearman: spearman(&kv, &rv)?,
        mean_kernel: kv.iter().sum::<f64>() / kv.len() as f64,
        min_eigenvalue: k.min_eigenvalue(),
        histogram: Histogram::new(kv.iter().copied(), 0.0, 1.0, HISTOGRAM_BINS),
    })
}
