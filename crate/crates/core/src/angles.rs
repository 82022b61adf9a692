//! Window-to-angle mapping.
//!
//! Semantic axes come from a truncated SVD of a log-damped token
//! co-occurrence matrix. A window's angles are the clipped, scaled z-scores
//! of the mean axis row of its tokens. Windows with no known token fall back
//! to a seeded-hash lexical projection.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64_with_seed;

use crate::corpus::TokenSeq;
use crate::error::{Error, Result};

const AXES_MAGIC: &[u8; 4] = b"QAXS";
const AXES_VERSION: u32 = 1;

/// Above this vocabulary size the truncated decomposition switches from a
/// dense eigensolver to randomized subspace iteration.
pub const DENSE_VOCAB_LIMIT: usize = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleSource {
    Eig,
    LexicalFallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleVector {
    pub theta: Vec<f64>,
    pub source: AngleSource,
}

/// How singular values scale the left singular vectors into axis rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AxisScaling {
    U,
    USigma,
    #[default]
    USqrtSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxesConfig {
    pub d_max: usize,
    /// Tokens up to this distance apart count as co-occurring.
    pub context_window: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub scaling: AxisScaling,
    /// Seed for the randomized solver on large vocabularies.
    pub seed: u64,
}

impl Default for AxesConfig {
    fn default() -> Self {
        Self {
            d_max: 12,
            context_window: 5,
            gamma: 1.0,
            epsilon: 1e-8,
            scaling: AxisScaling::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticAxes {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    d_max: usize,
    /// Row-major `V x d_max`.
    axes: Vec<f64>,
    singular_values: Vec<f64>,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    pub gamma: f64,
    pub epsilon: f64,
}

impl SemanticAxes {
    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    pub fn row(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.axes[i * self.d_max..(i + 1) * self.d_max])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// Singular values kept by the truncation, descending. Not persisted.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    fn from_parts(
        tokens: Vec<String>,
        d_max: usize,
        axes: Vec<f64>,
        gamma: f64,
        epsilon: f64,
    ) -> Self {
        let v = tokens.len();
        let mut mu = vec![0.0; d_max];
        let mut sigma = vec![0.0; d_max];
        for row in axes.chunks_exact(d_max) {
            for (m, x) in mu.iter_mut().zip(row) {
                *m += x;
            }
        }
        mu.iter_mut().for_each(|m| *m /= v as f64);
        for row in axes.chunks_exact(d_max) {
            for ((s, m), x) in sigma.iter_mut().zip(&mu).zip(row) {
                *s += (x - m) * (x - m);
            }
        }
        sigma.iter_mut().for_each(|s| *s = (*s / v as f64).sqrt());
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            index,
            d_max,
            axes,
            singular_values: Vec::new(),
            mu,
            sigma,
            gamma,
            epsilon,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(AXES_MAGIC)?;
        w.write_u32::<LittleEndian>(AXES_VERSION)?;
        w.write_u64::<LittleEndian>(self.tokens.len() as u64)?;
        w.write_u64::<LittleEndian>(self.d_max as u64)?;
        w.write_f64::<LittleEndian>(self.gamma)?;
        w.write_f64::<LittleEndian>(self.epsilon)?;
        for t in &self.tokens {
            w.write_u32::<LittleEndian>(t.len() as u32)?;
            w.write_all(t.as_bytes())?;
        }
        for x in self.axes.iter().chain(&self.mu).chain(&self.sigma) {
            w.write_f64::<LittleEndian>(*x)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != AXES_MAGIC {
            return Err(Error::parse("axes file", "bad magic"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != AXES_VERSION {
            return Err(Error::parse(
                "axes file",
                format!("unsupported version {version}"),
            ));
        }
        let v = r.read_u64::<LittleEndian>()? as usize;
        let d_max = r.read_u64::<LittleEndian>()? as usize;
        let gamma = r.read_f64::<LittleEndian>()?;
        let epsilon = r.read_f64::<LittleEndian>()?;
        let mut tokens = Vec::with_capacity(v);
        for _ in 0..v {
            let len = r.read_u32::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            tokens.push(
                String::from_utf8(buf).map_err(|e| Error::parse("axes vocab", e.to_string()))?,
            );
        }
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| Ok(r.read_f64::<LittleEndian>()?)).collect()
        };
        let axes = read_vec(v * d_max)?;
        let mu = read_vec(d_max)?;
        let sigma = read_vec(d_max)?;
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            tokens,
            index,
            d_max,
            axes,
            singular_values: Vec::new(),
            mu,
            sigma,
            gamma,
            epsilon,
        })
    }

    /// Inspection export: header, per-token rows, mean and deviation.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: serde_json::Map<String, serde_json::Value> = self
            .tokens
            .iter()
            .map(|t| (t.clone(), serde_json::json!(self.row(t).unwrap())))
            .collect();
        serde_json::json!({
            "vocab_size": self.tokens.len(),
            "d_max": self.d_max,
            "gamma": self.gamma,
            "epsilon": self.epsilon,
            "mu": self.mu,
            "sigma": self.sigma,
            "rows": rows,
        })
    }
}

/// Symmetric co-occurrence counts over token sequences, log-damped.
///
/// Every ordered pair of distinct positions at distance `<= context_window`
/// adds one to the cell of their tokens, so a repeated token contributes to
/// the diagonal.
pub fn cooccurrence<'a>(
    sequences: impl IntoIterator<Item = &'a TokenSeq>,
    context_window: usize,
) -> (Vec<String>, HashMap<(usize, usize), f64>) {
    let sequences: Vec<&TokenSeq> = sequences.into_iter().collect();
    let vocab: BTreeSet<&str> = sequences.iter().flat_map(|s| s.iter()).collect();
    let tokens: Vec<String> = vocab.into_iter().map(str::to_string).collect();
    let index: HashMap<&str, usize> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut counts: HashMap<(usize, usize), f64> = HashMap::new();
    for seq in sequences {
        let ids: Vec<usize> = seq.iter().map(|t| index[t]).collect();
        for i in 0..ids.len() {
            for j in i + 1..ids.len().min(i + context_window + 1) {
                *counts.entry((ids[i], ids[j])).or_default() += 1.0;
                *counts.entry((ids[j], ids[i])).or_default() += 1.0;
            }
        }
    }
    counts.values_mut().for_each(|c| *c = c.ln_1p());
    (tokens, counts)
}

/// Top-`k` singular triplets of a symmetric matrix given as sparse cells.
/// Returns singular values (descending) and the `n x k` left singular vectors.
fn truncated_symmetric_svd(
    n: usize,
    cells: &HashMap<(usize, usize), f64>,
    k: usize,
    dense_limit: usize,
    seed: u64,
) -> (Vec<f64>, DMatrix<f64>) {
    let (values, vectors) = if n <= dense_limit {
        let mut c = DMatrix::<f64>::zeros(n, n);
        for (&(i, j), &x) in cells {
            c[(i, j)] = x;
        }
        let eig = SymmetricEigen::new(c);
        (eig.eigenvalues.as_slice().to_vec(), eig.eigenvectors)
    } else {
        randomized_eigen(n, cells, k, seed)
    };

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let mut u = DMatrix::<f64>::zeros(n, k);
    let mut s = Vec::with_capacity(k);
    for (col, &src) in order.iter().take(k).enumerate() {
        let mut v = vectors.column(src).into_owned();
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        u.set_column(col, &v);
        s.push(values[src].abs());
    }
    (s, u)
}

/// Subspace iteration followed by a Rayleigh-Ritz projection.
fn randomized_eigen(
    n: usize,
    cells: &HashMap<(usize, usize), f64>,
    k: usize,
    seed: u64,
) -> (Vec<f64>, DMatrix<f64>) {
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (&(i, j), &x) in cells {
        rows[i].push((j, x));
    }
    rows.iter_mut().for_each(|r| r.sort_by_key(|e| e.0));
    let apply = |q: &DMatrix<f64>| {
        let mut out = DMatrix::<f64>::zeros(n, q.ncols());
        for (i, row) in rows.iter().enumerate() {
            for &(j, x) in row {
                for c in 0..q.ncols() {
                    out[(i, c)] += x * q[(j, c)];
                }
            }
        }
        out
    };
    let p = (2 * k).max(k + 20).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    q = q.qr().q();
    for _ in 0..30 {
        q = apply(&q).qr().q();
    }
    let b = q.transpose() * apply(&q);
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    (eig.eigenvalues.as_slice().to_vec(), q * eig.eigenvectors)
}

/// Builds semantic axes from the token sequences of a corpus.
pub fn build_axes<'a>(
    sequences: impl IntoIterator<Item = &'a TokenSeq>,
    cfg: &AxesConfig,
) -> Result<SemanticAxes> {
    build_axes_with_limit(sequences, cfg, DENSE_VOCAB_LIMIT)
}

pub(crate) fn build_axes_with_limit<'a>(
    sequences: impl IntoIterator<Item = &'a TokenSeq>,
    cfg: &AxesConfig,
    dense_limit: usize,
) -> Result<SemanticAxes> {
    if cfg.d_max == 0 || cfg.gamma <= 0.0 || cfg.epsilon <= 0.0 {
        return Err(Error::InvalidConfig(
            "axes need d_max >= 1, gamma > 0, epsilon > 0".into(),
        ));
    }
    let (tokens, cells) = cooccurrence(sequences, cfg.context_window);
    let v = tokens.len();
    if v < cfg.d_max {
        return Err(Error::AxesRankDeficient {
            vocab: v,
            d_max: cfg.d_max,
        });
    }
    let (s, u) = truncated_symmetric_svd(v, &cells, cfg.d_max, dense_limit, cfg.seed);
    let mut axes = vec![0.0; v * cfg.d_max];
    for i in 0..v {
        for (j, &sv) in s.iter().enumerate() {
            let scale = match cfg.scaling {
                AxisScaling::U => 1.0,
                AxisScaling::USigma => sv,
                AxisScaling::USqrtSigma => sv.sqrt(),
            };
            axes[i * cfg.d_max + j] = u[(i, j)] * scale;
        }
    }
    let mut out = SemanticAxes::from_parts(tokens, cfg.d_max, axes, cfg.gamma, cfg.epsilon);
    out.singular_values = s;
    Ok(out)
}

/// Maps a window to `d` angles through the semantic axes.
///
/// Falls back to [`lexical_angles`] when no window token is in the vocabulary.
pub fn eig_angles<'a>(
    window: impl IntoIterator<Item = &'a str>,
    axes: &SemanticAxes,
    d: usize,
) -> Result<AngleVector> {
    if d > axes.d_max {
        return Err(Error::InvalidConfig(format!(
            "d = {d} exceeds the {} available axes",
            axes.d_max
        )));
    }
    let tokens: Vec<&str> = window.into_iter().collect();
    let mut mean = vec![0.0; axes.d_max];
    let mut hits = 0usize;
    for row in tokens.iter().filter_map(|t| axes.row(t)) {
        hits += 1;
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    if hits == 0 {
        return Ok(lexical_angles(tokens, d));
    }
    let theta = (0..d)
        .map(|j| {
            let z = (mean[j] / hits as f64 - axes.mu[j]) / (axes.sigma[j] + axes.epsilon);
            (axes.gamma * z).clamp(-std::f64::consts::PI, std::f64::consts::PI)
        })
        .collect();
    Ok(AngleVector {
        theta,
        source: AngleSource::Eig,
    })
}

/// Seeded-hash projection: component `j` is `pi` times the mean of the
/// tokens' 64-bit hashes (seed `j`) mapped onto `[-1, 1]`.
pub fn lexical_angles<'a>(window: impl IntoIterator<Item = &'a str>, d: usize) -> AngleVector {
    let tokens: Vec<&str> = window.into_iter().collect();
    let mut theta = vec![0.0; d];
    if !tokens.is_empty() {
        for (j, slot) in theta.iter_mut().enumerate() {
            let sum: f64 = tokens
                .iter()
                .map(|t| {
                    xxh3_64_with_seed(t.as_bytes(), j as u64) as f64 / u64::MAX as f64 * 2.0 - 1.0
                })
                .sum();
            *slot = (std::f64::consts::PI * sum / tokens.len() as f64)
                .clamp(-std::f64::consts::PI, std::f64::consts::PI);
        }
    }
    AngleVector {
        theta,
        source: AngleSource::LexicalFallback,
    }
}
