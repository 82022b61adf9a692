//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;

pub fn ry(a: f64) -> DMatrix<C> {
    let (s, c) = ((a / 2.0).sin(), (a / 2.0).cos());
    DMatrix::from_row_slice(
        2,
        2,
        &[
            C::new(c, 0.0),
            C::new(-s, 0.0),
            C::new(s, 0.0),
            C::new(c, 0.0),
        ],
    )
}

pub fn rz(a: f64) -> DMatrix<C> {
    let z = C::new(0.0, 0.0);
    DMatrix::from_row_slice(
        2,
        2,
        &[
            C::from_polar(1.0, -a / 2.0),
            z,
            z,
            C::from_polar(1.0, a / 2.0),
        ],
    )
}

pub fn hadamard() -> DMatrix<C> {
    let r = C::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    DMatrix::from_row_slice(2, 2, &[r, r, r, -r])
}

/// Lifts a one-qubit gate to `n` qubits; qubit `q` is bit `q` of the index.
pub fn lift(g: &DMatrix<C>, q: usize, n: usize) -> DMatrix<C> {
    let hi = DMatrix::<C>::identity(1 << (n - q - 1), 1 << (n - q - 1));
    let lo = DMatrix::<C>::identity(1 << q, 1 << q);
    hi.kronecker(g).kronecker(&lo)
}

pub fn cnot(control: usize, target: usize, n: usize) -> DMatrix<C> {
    let dim = 1 << n;
    let mut m = DMatrix::<C>::zeros(dim, dim);
    for i in 0..dim {
        let j = if i >> control & 1 == 1 {
            i ^ (1 << target)
        } else {
            i
        };
        m[(j, i)] = C::new(1.0, 0.0);
    }
    m
}

pub fn ring(n: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    (0..n).map(|i| (i, (i + 1) % n)).collect()
}

fn basis0(n: usize) -> DVector<C> {
    let mut v = DVector::<C>::zeros(1 << n);
    v[0] = C::new(1.0, 0.0);
    v
}

/// Full circuit unitary of the layered Ry-Rz-CNOT-ring ansatz, layer `l`
/// scaling every angle by `1 / (l + 1)`.
pub fn ansatz_unitary(theta: &[f64], layers: usize) -> DMatrix<C> {
    let n = theta.len();
    let dim = 1 << n;
    let mut u = DMatrix::<C>::identity(dim, dim);
    for l in 0..layers {
        let s = 1.0 / (l + 1) as f64;
        for (q, &a) in theta.iter().enumerate() {
            u = lift(&rz(a * s), q, n) * lift(&ry(a * s), q, n) * u;
        }
        for (c, t) in ring(n) {
            u = cnot(c, t, n) * u;
        }
    }
    u
}

pub fn ansatz_dense(theta: &[f64], layers: usize) -> DVector<C> {
    ansatz_unitary(theta, layers) * basis0(theta.len())
}

/// ZZ feature map written as `(U_Φ H^⊗n)^reps` with a diagonal `U_Φ`
/// carrying phase `Σ 2 x_q b_q + Σ_ring 2 (π − x_i)(π − x_j)(b_i ⊕ b_j)`.
pub fn zz_dense(x: &[f64], reps: usize) -> DVector<C> {
    let n = x.len();
    let dim = 1 << n;
    let mut hn = DMatrix::<C>::identity(1, 1);
    for _ in 0..n {
        hn = hn.kronecker(&hadamard());
    }
    let pi = std::f64::consts::PI;
    let phase = DMatrix::from_fn(dim, dim, |r, c| {
        if r != c {
            return C::new(0.0, 0.0);
        }
        let b = |q: usize| (r >> q & 1) as f64;
        let mut p: f64 = (0..n).map(|q| 2.0 * x[q] * b(q)).sum();
        for (i, j) in ring(n) {
            if (r >> i & 1) != (r >> j & 1) {
                p += 2.0 * (pi - x[i]) * (pi - x[j]);
            }
        }
        C::from_polar(1.0, p)
    });
    let mut psi = basis0(n);
    for _ in 0..reps {
        psi = &phase * (&hn * psi);
    }
    psi
}

pub fn max_amp_error(a: &[C], b: &DVector<C>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Direct BM25 over token lists: every document is scored from scratch.
pub fn naive_bm25(
    docs: &[(String, Vec<String>)],
    query: &[String],
    k1: f64,
    b: f64,
) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let avg = docs.iter().map(|(_, t)| t.len() as f64).sum::<f64>() / n;
    let mut out = Vec::new();
    for (id, toks) in docs {
        let mut score = 0.0;
        let mut matched = false;
        for q in query {
            let tf = toks.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = docs.iter().filter(|(_, t)| t.contains(q)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * toks.len() as f64 / avg));
        }
        if matched {
            out.push((id.clone(), score));
        }
    }
    out.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then_with(|| x.0.cmp(&y.0)));
    out
}

/// Textbook single-relevant metrics at cutoff 10: (hit@1, hit@3, hit@5,
/// hit@10, rr, ndcg, ap).
pub fn naive_metrics(ranking: &[String], relevant: &str) -> [f64; 7] {
    let top: Vec<&String> = ranking.iter().take(10).collect();
    let hit = |k: usize| top.iter().take(k).any(|u| u.as_str() == relevant) as u8 as f64;
    let mut rr = 0.0;
    let mut dcg = 0.0;
    let mut precisions = Vec::new();
    for (i, u) in top.iter().enumerate() {
        if u.as_str() == relevant {
            if rr == 0.0 {
                rr = 1.0 / (i + 1) as f64;
            }
            dcg += 1.0 / ((i + 2) as f64).log2();
            let rel_so_far = top[..=i].iter().filter(|v| v.as_str() == relevant).count();
            precisions.push(rel_so_far as f64 / (i + 1) as f64);
        }
    }
    let ap = precisions.iter().sum::<f64>();
    [hit(1), hit(3), hit(5), hit(10), rr, dcg, ap]
}
