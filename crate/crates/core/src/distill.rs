//! Teacher-student alignment heads and alignment diagnostics.
//!
//! A head `g` maps a student embedding `e` toward a teacher vector `t` by
//! minimizing the mean of `‖g(e) − t‖²`. The linear head is solved in closed
//! form (ridge normal equations); the MLP head is trained by mini-batch SGD
//! with momentum and hand-derived gradients.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embed::{Channel, Embedding};
use crate::error::{Error, Result};
use crate::evalkit::pearson;
use crate::scalar::{dot, normalize_in_place};
use crate::store::{sidecar_path, EmbeddingStore};

const HEAD_MAGIC: &[u8; 4] = b"QDST";
/// Squared pivot ratio of the Cholesky factor below which the normal
/// matrix is treated as singular.
const PIVOT_RATIO_FLOOR: f64 = 1e-13;

pub const DEFAULT_RIDGE: f64 = 1e-3;

/// Teacher vectors keyed by id, unit-normalized on load.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TeacherSet {
    pub model: String,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl TeacherSet {
    pub fn from_store(store: &EmbeddingStore, model: &str) -> Self {
        Self {
            model: model.to_string(),
            vectors: store
                .records
                .iter()
                .map(|r| (r.owner_id.clone(), r.vec.clone()))
                .collect(),
        }
    }

    /// Loads a JSON Lines or binary embedding file. The model tag comes from
    /// the store metadata when present.
    pub fn load(path: &Path) -> Result<Self> {
        let store = EmbeddingStore::open(path)?;
        let model = store
            .meta
            .get("model")
            .and_then(|m| m.as_str())
            .unwrap_or("unknown")
            .to_string();
        Ok(Self::from_store(&store, &model))
    }
}

/// Aligns student and teacher vectors on shared ids (sorted).
pub fn paired(
    student: &EmbeddingStore,
    teacher: &TeacherSet,
) -> (Vec<String>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut ids: Vec<&String> = student
        .records
        .iter()
        .map(|r| &r.owner_id)
        .filter(|id| teacher.vectors.contains_key(*id))
        .collect();
    ids.sort();
    let inputs = ids
        .iter()
        .map(|id| student.get(id).map(|r| r.vec.clone()).unwrap_or_default())
        .collect();
    let targets = ids.iter().map(|id| teacher.vectors[*id].clone()).collect();
    (ids.into_iter().cloned().collect(), inputs, targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadParams {
    /// `z = W e + b`, `W` is out × in.
    Linear { w: DMatrix<f64>, b: DVector<f64> },
    /// `z = W2 tanh(W1 e + b1) + b2`.
    Mlp {
        w1: DMatrix<f64>,
        b1: DVector<f64>,
        w2: DMatrix<f64>,
        b2: DVector<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeadMeta {
    pub kind: Option<HeadKind>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Option<usize>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub n_pairs: usize,
    /// Mean `‖g(e) − t‖²` over the training pairs.
    pub final_loss: f64,
    /// Loss before training followed by the loss after each epoch.
    pub loss_curve: Vec<f64>,
    pub source_fingerprint: Option<String>,
    pub teacher_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillHead {
    pub params: HeadParams,
    pub meta: HeadMeta,
}

fn to_columns(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let dim = rows.first().map_or(0, Vec::len);
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: r.len(),
        });
    }
    Ok(DMatrix::from_fn(dim, rows.len(), |i, j| rows[j][i]))
}

fn check_pairs(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if inputs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    if inputs.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: inputs.len(),
        });
    }
    let x = to_columns(inputs)?;
    let t = to_columns(targets)?;
    if x.iter().chain(t.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(
            "training pairs contain non-finite values".into(),
        ));
    }
    Ok((x, t))
}

/// Mean squared error summed over output coordinates.
fn mean_sq(diff: &DMatrix<f64>) -> f64 {
    diff.norm_squared() / diff.ncols() as f64
}

/// Closed-form ridge regression with an unpenalized bias.
pub fn fit_linear(inputs: &[Vec<f64>], targets: &[Vec<f64>], lambda: f64) -> Result<DistillHead> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "ridge penalty must be >= 0, got {lambda}"
        )));
    }
    let (x, t) = check_pairs(inputs, targets)?;
    let (d, n) = (x.nrows(), x.ncols());
    // Augmented design with a trailing row of ones for the bias.
    let mut xa = DMatrix::from_element(d + 1, n, 1.0);
    xa.view_mut((0, 0), (d, n)).copy_from(&x);
    let mut a = &xa * xa.transpose();
    for i in 0..d {
        a[(i, i)] += lambda;
    }
    let rhs = &xa * t.transpose();
    let chol = a.cholesky().ok_or(Error::SingularSystem)?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    if (lo / hi).powi(2) < PIVOT_RATIO_FLOOR {
        return Err(Error::SingularSystem);
    }
    let sol = chol.solve(&rhs);
    let w = sol.rows(0, d).transpose();
    let b = sol.row(d).transpose();
    let params = HeadParams::Linear { w, b };
    let loss = mean_sq(&(forward(&params, &x) - &t));
    let meta = HeadMeta {
        kind: Some(HeadKind::Linear),
        input_dim: d,
        output_dim: t.nrows(),
        lambda: Some(lambda),
        n_pairs: n,
        final_loss: loss,
        loss_curve: vec![loss],
        ..Default::default()
    };
    Ok(DistillHead { params, meta })
}

fn add_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += b;
    }
}

/// Applies the head to the columns of `x` without normalizing.
pub fn forward(params: &HeadParams, x: &DMatrix<f64>) -> DMatrix<f64> {
    match params {
        HeadParams::Linear { w, b } => {
            let mut z = w * x;
            add_bias(&mut z, b);
            z
        }
        HeadParams::Mlp { w1, b1, w2, b2 } => {
            let mut h = w1 * x;
            add_bias(&mut h, b1);
            h.apply(|v| *v = v.tanh());
            let mut z = w2 * &h;
            add_bias(&mut z, b2);
            z
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 1024,
            epochs: 20,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Gradients of the MLP loss, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

/// Loss `mean_j ‖z_j − t_j‖²` and its gradient for an MLP head.
pub fn mlp_loss_and_grad(
    params: &HeadParams,
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
) -> (f64, MlpGrads) {
    let HeadParams::Mlp { w1, b1, w2, b2 } = params else {
        panic!("mlp_loss_and_grad called on a linear head");
    };
    let n = x.ncols() as f64;
    let mut h = w1 * x;
    add_bias(&mut h, b1);
    h.apply(|v| *v = v.tanh());
    let mut z = w2 * &h;
    add_bias(&mut z, b2);
    let diff = z - t;
    let loss = mean_sq(&diff);
    let dz = diff * (2.0 / n);
    let gw2 = &dz * h.transpose();
    let gb2 = dz.column_sum();
    let mut da = w2.transpose() * &dz;
    da.zip_apply(&h, |g, hv| *g *= 1.0 - hv * hv);
    let gw1 = &da * x.transpose();
    let gb1 = da.column_sum();
    (
        loss,
        MlpGrads {
            w1: gw1,
            b1: gb1,
            w2: gw2,
            b2: gb2,
        },
    )
}

/// Selects one parameter tensor of an MLP head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlpTensor {
    W1,
    B1,
    W2,
    B2,
}

fn mlp_slot(params: &mut HeadParams, tensor: MlpTensor) -> &mut [f64] {
    let HeadParams::Mlp { w1, b1, w2, b2 } = params else {
        panic!("not an mlp head");
    };
    match tensor {
        MlpTensor::W1 => w1.as_mut_slice(),
        MlpTensor::B1 => b1.as_mut_slice(),
        MlpTensor::W2 => w2.as_mut_slice(),
        MlpTensor::B2 => b2.as_mut_slice(),
    }
}

impl MlpGrads {
    pub fn get(&self, tensor: MlpTensor) -> &[f64] {
        match tensor {
            MlpTensor::W1 => self.w1.as_slice(),
            MlpTensor::B1 => self.b1.as_slice(),
            MlpTensor::W2 => self.w2.as_slice(),
            MlpTensor::B2 => self.b2.as_slice(),
        }
    }
}

/// Central finite difference of the MLP loss with respect to one parameter
/// (storage index `idx` of `tensor`, column-major).
pub fn finite_difference(
    params: &HeadParams,
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
    tensor: MlpTensor,
    idx: usize,
    h: f64,
) -> f64 {
    let mut p = params.clone();
    let orig = mlp_slot(&mut p, tensor)[idx];
    mlp_slot(&mut p, tensor)[idx] = orig + h;
    let up = mlp_loss_and_grad(&p, x, t).0;
    mlp_slot(&mut p, tensor)[idx] = orig - h;
    let down = mlp_loss_and_grad(&p, x, t).0;
    (up - down) / (2.0 * h)
}

/// Random MLP parameters with `N(0, 1/fan_in)` weights and zero biases.
pub fn init_mlp(input: usize, hidden: usize, output: usize, seed: u64) -> HeadParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |rows: usize, cols: usize| {
        let s = 1.0 / (cols as f64).sqrt();
        DMatrix::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            s * z
        })
    };
    let w1 = gauss(hidden, input);
    let w2 = gauss(output, hidden);
    HeadParams::Mlp {
        w1,
        b1: DVector::zeros(hidden),
        w2,
        b2: DVector::zeros(output),
    }
}

pub fn fit_mlp(inputs: &[Vec<f64>], targets: &[Vec<f64>], cfg: &MlpConfig) -> Result<DistillHead> {
    if cfg.epochs == 0 || cfg.hidden == 0 || cfg.batch_size == 0 {
        return Err(Error::InvalidConfig(
            "epochs, hidden and batch_size must be positive".into(),
        ));
    }
    if cfg.lr.is_nan() || cfg.lr <= 0.0 || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::InvalidConfig(
            "lr must be > 0 and momentum in [0, 1)".into(),
        ));
    }
    let (x, t) = check_pairs(inputs, targets)?;
    let n = x.ncols();
    let mut params = init_mlp(x.nrows(), cfg.hidden, t.nrows(), cfg.seed);
    let HeadParams::Mlp { w1, b1, w2, b2 } = &params else {
        unreachable!()
    };
    let mut vel = MlpGrads {
        w1: DMatrix::zeros(w1.nrows(), w1.ncols()),
        b1: DVector::zeros(b1.len()),
        w2: DMatrix::zeros(w2.nrows(), w2.ncols()),
        b2: DVector::zeros(b2.len()),
    };
    let initial = mean_sq(&(forward(&params, &x) - &t));
    let mut curve = vec![initial];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select_columns(batch);
            let tb = t.select_columns(batch);
            let (_, g) = mlp_loss_and_grad(&params, &xb, &tb);
            let HeadParams::Mlp { w1, b1, w2, b2 } = &mut params else {
                unreachable!()
            };
            let (m, lr) = (cfg.momentum, cfg.lr);
            vel.w1 = &vel.w1 * m - &g.w1 * lr;
            vel.b1 = &vel.b1 * m - &g.b1 * lr;
            vel.w2 = &vel.w2 * m - &g.w2 * lr;
            vel.b2 = &vel.b2 * m - &g.b2 * lr;
            *w1 += &vel.w1;
            *b1 += &vel.b1;
            *w2 += &vel.w2;
            *b2 += &vel.b2;
        }
        let loss = mean_sq(&(forward(&params, &x) - &t));
        curve.push(loss);
        if !loss.is_finite() || loss > 10.0 * initial {
            return Err(Error::TrainingDiverged { initial, loss });
        }
    }
    let meta = HeadMeta {
        kind: Some(HeadKind::Mlp),
        input_dim: x.nrows(),
        output_dim: t.nrows(),
        hidden: Some(cfg.hidden),
        epochs: Some(cfg.epochs),
        lr: Some(cfg.lr),
        momentum: Some(cfg.momentum),
        batch_size: Some(cfg.batch_size),
        seed: Some(cfg.seed),
        n_pairs: n,
        final_loss: *curve.last().unwrap_or(&initial),
        loss_curve: curve,
        ..Default::default()
    };
    Ok(DistillHead { params, meta })
}

impl DistillHead {
    pub fn kind(&self) -> HeadKind {
        match self.params {
            HeadParams::Linear { .. } => HeadKind::Linear,
            HeadParams::Mlp { .. } => HeadKind::Mlp,
        }
    }

    /// Identity linear head of dimension `dim`.
    pub fn identity(dim: usize) -> Self {
        Self {
            params: HeadParams::Linear {
                w: DMatrix::identity(dim, dim),
                b: DVector::zeros(dim),
            },
            meta: HeadMeta {
                kind: Some(HeadKind::Linear),
                input_dim: dim,
                output_dim: dim,
                ..Default::default()
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.params {
            HeadParams::Linear { w, .. } => w.ncols(),
            HeadParams::Mlp { w1, .. } => w1.ncols(),
        }
    }

    /// Maps `e` and renormalizes; the result is tagged `distilled`.
    pub fn apply(&self, e: &Embedding<f64>) -> Result<Embedding<f64>> {
        if e.vec.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: e.vec.len(),
            });
        }
        let x = DMatrix::from_column_slice(e.vec.len(), 1, &e.vec);
        let mut vec: Vec<f64> = forward(&self.params, &x).as_slice().to_vec();
        normalize_in_place(&mut vec).ok_or(Error::ZeroVector)?;
        Ok(Embedding {
            owner_id: e.owner_id.clone(),
            channel: Channel::Distilled,
            vec,
        })
    }

    fn tensors(&self) -> Vec<(&[f64], usize, usize)> {
        fn m(a: &DMatrix<f64>) -> (&[f64], usize, usize) {
            (a.as_slice(), a.nrows(), a.ncols())
        }
        fn v(a: &DVector<f64>) -> (&[f64], usize, usize) {
            (a.as_slice(), a.len(), 1)
        }
        match &self.params {
            HeadParams::Linear { w, b } => vec![m(w), v(b)],
            HeadParams::Mlp { w1, b1, w2, b2 } => vec![m(w1), v(b1), m(w2), v(b2)],
        }
    }

    /// Binary parameters: magic, kind byte, tensor count, then per tensor
    /// `u64` rows, `u64` cols and column-major `f64` values.
    pub fn write_params(&self, mut w: impl Write) -> Result<()> {
        w.write_all(HEAD_MAGIC)?;
        w.write_u8(match self.kind() {
            HeadKind::Linear => 0,
            HeadKind::Mlp => 1,
        })?;
        let tensors = self.tensors();
        w.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for (data, rows, cols) in tensors {
            w.write_u64::<LittleEndian>(rows as u64)?;
            w.write_u64::<LittleEndian>(cols as u64)?;
            for &x in data {
                w.write_f64::<LittleEndian>(x)?;
            }
        }
        Ok(())
    }

    pub fn read_params(mut r: impl Read) -> Result<HeadParams> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != HEAD_MAGIC {
            return Err(Error::parse("distill head", "bad magic"));
        }
        let kind = r.read_u8()?;
        let count = r.read_u32::<LittleEndian>()? as usize;
        let mut mats = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = r.read_u64::<LittleEndian>()? as usize;
            let cols = r.read_u64::<LittleEndian>()? as usize;
            let data = (0..rows * cols)
                .map(|_| Ok(r.read_f64::<LittleEndian>()?))
                .collect::<Result<Vec<f64>>>()?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse("distill head", "non-finite parameter"));
            }
            mats.push(DMatrix::from_vec(rows, cols, data));
        }
        let vecd = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
        let mut it = mats.into_iter();
        match (kind, count) {
            (0, 2) => {
                let (w, b) = (it.next().unwrap(), it.next().unwrap());
                Ok(HeadParams::Linear { w, b: vecd(b) })
            }
            (1, 4) => {
                let (w1, b1, w2, b2) = (
                    it.next().unwrap(),
                    it.next().unwrap(),
                    it.next().unwrap(),
                    it.next().unwrap(),
                );
                Ok(HeadParams::Mlp {
                    w1,
                    b1: vecd(b1),
                    w2,
                    b2: vecd(b2),
                })
            }
            _ => Err(Error::parse(
                "distill head",
                format!("unexpected kind {kind} with {count} tensors"),
            )),
        }
    }

    /// Writes `path` (binary parameters) and `path.json` (metadata).
    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_params(BufWriter::new(File::create(path)?))?;
        std::fs::write(
            sidecar_path(path),
            serde_json::to_string_pretty(&self.meta)?,
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params = Self::read_params(BufReader::new(File::open(path)?))?;
        let side = sidecar_path(path);
        let meta = if side.exists() {
            serde_json::from_slice(&std::fs::read(side)?)?
        } else {
            HeadMeta::default()
        };
        Ok(Self { params, meta })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub shared: usize,
    pub n_pairs: usize,
    /// Pearson between student and teacher pairwise cosine similarities.
    pub r: Option<f64>,
    /// Mean |student cosine − teacher cosine| over the sampled pairs.
    pub mae: f64,
    /// Pearson over raw coordinates of the paired vectors, when the
    /// dimensions agree.
    pub coordinate_r: Option<f64>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Samples id pairs `(i, j)`, `i < j`. When `n_pairs` covers every pair, all
/// pairs are used in lexicographic order.
pub fn sample_pairs(n: usize, n_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    if n_pairs >= total {
        return (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect();
    let (chosen, _) = all.partial_shuffle(&mut rng, n_pairs);
    chosen.to_vec()
}

pub fn alignment_report(
    student: &HashMap<String, Vec<f64>>,
    teacher: &TeacherSet,
    n_pairs: usize,
    seed: u64,
) -> Result<AlignmentReport> {
    let mut ids: Vec<&String> = student
        .keys()
        .filter(|id| teacher.vectors.contains_key(*id))
        .collect();
    ids.sort();
    if ids.len() < 2 {
        return Err(Error::InsufficientOverlap { shared: ids.len() });
    }
    let pairs = sample_pairs(ids.len(), n_pairs, seed);
    let (mut s, mut t) = (
        Vec::with_capacity(pairs.len()),
        Vec::with_capacity(pairs.len()),
    );
    for &(i, j) in &pairs {
        s.push(cosine(&student[ids[i]], &student[ids[j]]));
        t.push(cosine(&teacher.vectors[ids[i]], &teacher.vectors[ids[j]]));
    }
    let mae = s.iter().zip(&t).map(|(a, b)| (a - b).abs()).sum::<f64>() / s.len() as f64;
    let r = if s.len() >= 2 {
        pearson(&s, &t).ok()
    } else {
        None
    };
    let same_dim = ids
        .iter()
        .all(|id| student[*id].len() == teacher.vectors[*id].len());
    let coordinate_r = same_dim
        .then(|| {
            let xs: Vec<f64> = ids
                .iter()
                .flat_map(|id| student[*id].iter().copied())
                .collect();
            let ys: Vec<f64> = ids
                .iter()
                .flat_map(|id| teacher.vectors[*id].iter().copied())
                .collect();
            pearson(&xs, &ys).ok()
        })
        .flatten();
    Ok(AlignmentReport {
        shared: ids.len(),
        n_pairs: pairs.len(),
        r,
        mae,
        coordinate_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_unit(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                normalize_in_place(&mut v).unwrap();
                v
            })
            .collect()
    }

    #[test]
    fn identity_recovery_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_unit(&mut rng, 40, 8);
        let head = fit_linear(&x, &x, 0.0).unwrap();
        let HeadParams::Linear { w, b } = &head.params else {
            panic!()
        };
        assert!((w - DMatrix::identity(8, 8)).amax() < 1e-9);
        assert!(b.amax() < 1e-9);
        assert!(head.meta.final_loss < 1e-18);
    }

    #[test]
    fn ridge_limit_goes_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_unit(&mut rng, 30, 4);
        let t = random_unit(&mut rng, 30, 3);
        let head = fit_linear(&x, &t, 1e12).unwrap();
        let HeadParams::Linear { w, b } = &head.params else {
            panic!()
        };
        assert!(w.amax() < 1e-9);
        for k in 0..3 {
            let mean = t.iter().map(|v| v[k]).sum::<f64>() / 30.0;
            assert!((b[k] - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn singular_without_ridge() {
        // More dimensions than pairs: the normal matrix is rank deficient.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_unit(&mut rng, 4, 10);
        assert!(matches!(
            fit_linear(&x, &x, 0.0),
            Err(Error::SingularSystem)
        ));
        assert!(fit_linear(&x, &x, 1e-3).is_ok());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = to_columns(&random_unit(&mut rng, 6, 5)).unwrap();
        let t = to_columns(&random_unit(&mut rng, 6, 3)).unwrap();
        let mut p = init_mlp(5, 7, 3, 9);
        if let HeadParams::Mlp { b1, b2, .. } = &mut p {
            b1.iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v = 0.1 * i as f64 - 0.3);
            b2.iter_mut().for_each(|v| *v = 0.05);
        }
        let (_, g) = mlp_loss_and_grad(&p, &x, &t);
        for tensor in [MlpTensor::W1, MlpTensor::B1, MlpTensor::W2, MlpTensor::B2] {
            for idx in [0, 2] {
                let a = g.get(tensor)[idx];
                let n = finite_difference(&p, &x, &t, tensor, idx, 1e-5);
                assert!(
                    (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-8),
                    "{tensor:?}[{idx}]: {a} vs {n}"
                );
            }
        }
    }

    #[test]
    fn mlp_is_deterministic_and_learns() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_unit(&mut rng, 64, 6);
        let cfg = MlpConfig {
            hidden: 16,
            epochs: 30,
            lr: 0.05,
            batch_size: 8,
            seed: 3,
            ..Default::default()
        };
        let a = fit_mlp(&x, &x, &cfg).unwrap();
        let b = fit_mlp(&x, &x, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert!(a.meta.final_loss < 0.25 * a.meta.loss_curve[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_unit(&mut rng, 32, 4);
        let cfg = MlpConfig {
            hidden: 8,
            epochs: 5,
            lr: 50.0,
            batch_size: 4,
            ..Default::default()
        };
        assert!(matches!(
            fit_mlp(&x, &x, &cfg),
            Err(Error::TrainingDiverged { .. })
        ));
    }

    #[test]
    fn apply_identity_and_persistence() {
        let head = DistillHead::identity(3);
        let e = Embedding {
            owner_id: "u".into(),
            channel: Channel::Current,
            vec: vec![0.6, 0.8, 0.0],
        };
        let z = head.apply(&e).unwrap();
        assert_eq!(z.vec, e.vec);
        assert_eq!(z.channel, Channel::Distilled);
        let p = init_mlp(3, 4, 3, 1);
        let head = DistillHead {
            params: p,
            meta: HeadMeta::default(),
        };
        let mut buf = Vec::new();
        head.write_params(&mut buf).unwrap();
        assert_eq!(
            DistillHead::read_params(buf.as_slice()).unwrap(),
            head.params
        );
    }

    #[test]
    fn alignment_identity_and_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random_unit(&mut rng, 6, 5);
        let map: HashMap<String, Vec<f64>> = v
            .iter()
            .enumerate()
            .map(|(i, x)| (format!("id{i}"), x.clone()))
            .collect();
        let teacher = TeacherSet {
            model: "t".into(),
            vectors: map.clone(),
        };
        let rep = alignment_report(&map, &teacher, 100, 0).unwrap();
        assert_eq!(rep.r, Some(1.0));
        assert_eq!(rep.mae, 0.0);
        assert_eq!(rep.n_pairs, 15);
        let one: HashMap<String, Vec<f64>> = [("id0".to_string(), v[0].clone())].into();
        assert!(matches!(
            alignment_report(&one, &teacher, 10, 0),
            Err(Error::InsufficientOverlap { shared: 1 })
        ));
    }
}
