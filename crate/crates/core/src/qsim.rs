//! Statevector simulation of the encoder circuits.
//!
//! Qubit `i` is bit `i` of the basis-state index (little-endian).
//! Gate conventions: `Ry(a) = exp(-i a Y / 2)`, `Rz(a) = exp(-i a Z / 2)`,
//! `P(l) = diag(1, e^{i l})`, standard `H` and `CNOT`.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Upper bound on simulated width (2^16 amplitudes per state).
pub const MAX_QUBITS: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircuitConfig {
    pub n_qubits: usize,
    pub n_layers: usize,
    /// 0 selects analytic expectations.
    pub shots: u64,
    pub seed: u64,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            n_qubits: 12,
            n_layers: 4,
            shots: 0,
            seed: 0,
        }
    }
}

impl CircuitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_qubits > MAX_QUBITS {
            return Err(Error::InvalidConfig(format!(
                "n_qubits must be in 1..={MAX_QUBITS}"
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::InvalidConfig("n_layers must be at least 1".into()));
        }
        Ok(())
    }
}

type C<T> = Complex<T>;
type Gate<T> = [[C<T>; 2]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector<T> {
    n_qubits: usize,
    amps: Vec<C<T>>,
}

impl<T: Real> StateVector<T> {
    /// `|0...0>`.
    pub fn zero(n_qubits: usize) -> Self {
        let mut amps = vec![C::new(T::zero(), T::zero()); 1 << n_qubits];
        amps[0] = C::new(T::one(), T::zero());
        Self { n_qubits, amps }
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<C<T>>) -> Result<Self> {
        if amps.len() != 1 << n_qubits {
            return Err(Error::DimensionMismatch {
                expected: 1 << n_qubits,
                got: amps.len(),
            });
        }
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C<T>] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> T {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Self) -> C<T> {
        self.amps
            .iter()
            .zip(&other.amps)
            .fold(C::new(T::zero(), T::zero()), |acc, (a, b)| {
                acc + a.conj() * b
            })
    }

    /// `|<self|other>|^2`.
    pub fn fidelity(&self, other: &Self) -> T {
        self.inner(other).norm_sqr()
    }

    pub fn probabilities(&self) -> Vec<T> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn apply_1q(&mut self, q: usize, m: &Gate<T>) {
        let bit = 1usize << q;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let (a, b) = (self.amps[i], self.amps[i | bit]);
                self.amps[i] = m[0][0] * a + m[0][1] * b;
                self.amps[i | bit] = m[1][0] * a + m[1][1] * b;
            }
        }
    }

    pub fn cnot(&mut self, control: usize, target: usize) {
        let (c, t) = (1usize << control, 1usize << target);
        for i in 0..self.amps.len() {
            if i & c != 0 && i & t == 0 {
                self.amps.swap(i, i | t);
            }
        }
    }

    pub fn ry(&mut self, q: usize, angle: T) {
        self.apply_1q(q, &ry_gate(angle));
    }

    pub fn rz(&mut self, q: usize, angle: T) {
        self.apply_1q(q, &rz_gate(angle));
    }

    pub fn h(&mut self, q: usize) {
        self.apply_1q(q, &h_gate());
    }

    pub fn phase(&mut self, q: usize, lambda: T) {
        self.apply_1q(q, &phase_gate(lambda));
    }
}

fn c<T: Real>(re: T, im: T) -> C<T> {
    C::new(re, im)
}

pub fn ry_gate<T: Real>(a: T) -> Gate<T> {
    let half = a / T::lit(2.0);
    let (s, co) = (half.sin(), half.cos());
    let z = T::zero();
    [[c(co, z), c(-s, z)], [c(s, z), c(co, z)]]
}

pub fn rz_gate<T: Real>(a: T) -> Gate<T> {
    let half = a / T::lit(2.0);
    let z = T::zero();
    [
        [c(half.cos(), -half.sin()), c(z, z)],
        [c(z, z), c(half.cos(), half.sin())],
    ]
}

pub fn h_gate<T: Real>() -> Gate<T> {
    let r = T::FRAC_1_SQRT_2();
    let z = T::zero();
    [[c(r, z), c(r, z)], [c(r, z), c(-r, z)]]
}

pub fn phase_gate<T: Real>(l: T) -> Gate<T> {
    let (z, o) = (T::zero(), T::one());
    [[c(o, z), c(z, z)], [c(z, z), c(l.cos(), l.sin())]]
}

/// `S^dagger`: maps the Y eigenbasis onto X before a Hadamard.
fn sdg_gate<T: Real>() -> Gate<T> {
    let (z, o) = (T::zero(), T::one());
    [[c(o, z), c(z, z)], [c(z, z), c(z, -o)]]
}

/// Nearest-neighbour ring `(i, i+1 mod n)`. Empty for a single qubit.
pub fn ring_pairs(n: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    (0..n).map(|i| (i, (i + 1) % n)).collect()
}

/// Angle scale applied in layer `l` when the same angles are reused.
pub fn layer_scale<T: Real>(layer: usize) -> T {
    T::one() / T::from_usize(layer + 1).unwrap()
}

/// Hardware-efficient ansatz: per layer, `Ry` then `Rz` on every qubit with
/// angle `theta_i / (layer + 1)`, then a CNOT ring.
pub fn ansatz_state<T: Real>(theta: &[T], cfg: &CircuitConfig) -> Result<StateVector<T>> {
    cfg.validate()?;
    if theta.len() != cfg.n_qubits {
        return Err(Error::ThetaDimension {
            expected: cfg.n_qubits,
            got: theta.len(),
        });
    }
    let mut psi = StateVector::zero(cfg.n_qubits);
    let pairs = ring_pairs(cfg.n_qubits);
    for layer in 0..cfg.n_layers {
        let s: T = layer_scale(layer);
        for (q, &a) in theta.iter().enumerate() {
            psi.ry(q, a * s);
            psi.rz(q, a * s);
        }
        for &(ctl, tgt) in &pairs {
            psi.cnot(ctl, tgt);
        }
    }
    Ok(psi)
}

/// Second-order Pauli-Z evolution map over ring pairs.
pub fn zz_feature_state<T: Real>(x: &[T], n_qubits: usize, reps: usize) -> Result<StateVector<T>> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::InvalidConfig(format!(
            "n_qubits must be in 1..={MAX_QUBITS}"
        )));
    }
    if x.len() != n_qubits {
        return Err(Error::ThetaDimension {
            expected: n_qubits,
            got: x.len(),
        });
    }
    let two = T::lit(2.0);
    let pi = T::PI();
    let mut psi = StateVector::zero(n_qubits);
    for _ in 0..reps {
        for q in 0..n_qubits {
            psi.h(q);
        }
        for (q, &xi) in x.iter().enumerate() {
            psi.phase(q, two * xi);
        }
        for (i, j) in ring_pairs(n_qubits) {
            psi.cnot(i, j);
            psi.phase(j, two * (pi - x[i]) * (pi - x[j]));
            psi.cnot(i, j);
        }
    }
    Ok(psi)
}

/// Real amplitude encoding: zero-pad or truncate to `2^n`, then normalize.
pub fn amplitude_state<T: Real>(features: &[T], n_qubits: usize) -> Result<StateVector<T>> {
    if n_qubits == 0 || n_qubits > MAX_QUBITS {
        return Err(Error::InvalidConfig(format!(
            "n_qubits must be in 1..={MAX_QUBITS}"
        )));
    }
    let dim = 1usize << n_qubits;
    let mut re: Vec<T> = features.iter().copied().take(dim).collect();
    re.resize(dim, T::zero());
    let norm = re.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm == T::zero() || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let amps = re
        .into_iter()
        .map(|x| C::new(x / norm, T::zero()))
        .collect();
    Ok(StateVector { n_qubits, amps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

/// Tensor product of single-qubit Paulis, identity elsewhere.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauliTerm(pub Vec<(usize, Pauli)>);

impl PauliTerm {
    pub fn single(q: usize, p: Pauli) -> Self {
        Self(vec![(q, p)])
    }

    pub fn pair(a: usize, b: usize, p: Pauli) -> Self {
        Self(vec![(a, p), (b, p)])
    }

    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|(q, p)| format!("{p:?}{q}"))
            .collect::<Vec<_>>()
            .join("")
    }

    fn z_mask(&self) -> usize {
        self.0.iter().fold(0, |m, (q, _)| m | (1 << q))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservableSet {
    pub n_qubits: usize,
    pub terms: Vec<PauliTerm>,
}

impl ObservableSet {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// Canonical pool: `Z_i`, `X_i`, `Y_i`, then `ZZ`, `XX`, `YY` on ring pairs;
/// the first `f` terms are kept.
pub fn default_observables(n_qubits: usize, f: usize) -> Result<ObservableSet> {
    let mut pool = Vec::new();
    for p in [Pauli::Z, Pauli::X, Pauli::Y] {
        pool.extend((0..n_qubits).map(|q| PauliTerm::single(q, p)));
    }
    for p in [Pauli::Z, Pauli::X, Pauli::Y] {
        pool.extend(
            ring_pairs(n_qubits)
                .into_iter()
                .map(|(a, b)| PauliTerm::pair(a, b, p)),
        );
    }
    if f > pool.len() {
        return Err(Error::ObservablePoolExhausted {
            requested: f,
            available: pool.len(),
        });
    }
    pool.truncate(f);
    Ok(ObservableSet {
        n_qubits,
        terms: pool,
    })
}

/// Probability of an even-parity outcome on the term's support after rotating
/// every factor into the Z basis.
fn even_parity_probability<T: Real>(psi: &StateVector<T>, term: &PauliTerm) -> T {
    let mask = term.z_mask();
    let probs = if term.0.iter().all(|(_, p)| *p == Pauli::Z) {
        psi.probabilities()
    } else {
        let mut rotated = psi.clone();
        for &(q, p) in &term.0 {
            match p {
                Pauli::Z => {}
                Pauli::X => rotated.h(q),
                Pauli::Y => {
                    rotated.apply_1q(q, &sdg_gate());
                    rotated.h(q);
                }
            }
        }
        rotated.probabilities()
    };
    probs
        .iter()
        .enumerate()
        .filter(|(i, _)| (i & mask).count_ones().is_multiple_of(2))
        .map(|(_, &p)| p)
        .sum()
}

/// Expectation values of every term. `shots == 0` is exact; otherwise each
/// term is estimated from `shots` seeded measurements.
pub fn expectations<T: Real>(
    psi: &StateVector<T>,
    obs: &ObservableSet,
    shots: u64,
    seed: u64,
) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    obs.terms
        .iter()
        .map(|term| {
            let p_even = even_parity_probability(psi, term);
            if shots == 0 {
                // <O> = p_even - p_odd with p_odd = norm - p_even.
                let total = psi.norm_sqr();
                (p_even + p_even - total).max(-T::one()).min(T::one())
            } else {
                let p = p_even.to_f64_lossy().clamp(0.0, 1.0);
                let even = Binomial::new(shots, p)
                    .expect("valid binomial")
                    .sample(&mut rng);
                T::from_f64((2.0 * even as f64 - shots as f64) / shots as f64).unwrap()
            }
        })
        .collect()
}

/// One random-feature episode: `theta -> clip(omega * theta + beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QksEpisode<T> {
    /// Row-major `d x d`.
    pub omega: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> QksEpisode<T> {
    pub fn identity(d: usize) -> Self {
        let mut omega = vec![T::zero(); d * d];
        (0..d).for_each(|i| omega[i * d + i] = T::one());
        Self {
            omega,
            beta: vec![T::zero(); d],
        }
    }

    pub fn apply(&self, theta: &[T]) -> Vec<T> {
        let d = theta.len();
        (0..d)
            .map(|i| {
                let row = &self.omega[i * d..(i + 1) * d];
                (crate::scalar::dot(row, theta) + self.beta[i]).clip_angle()
            })
            .collect()
    }
}

/// Seeded episodes with Gaussian `omega` and uniform `beta` in `[-pi, pi)`.
pub fn qks_episodes<T: Real>(d: usize, episodes: usize, seed: u64) -> Vec<QksEpisode<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = std::f64::consts::PI;
    (0..episodes)
        .map(|_| {
            let omega = (0..d * d)
                .map(|_| T::lit(StandardNormal.sample(&mut rng)))
                .collect();
            let beta = (0..d).map(|_| T::lit(rng.random_range(-pi..pi))).collect();
            QksEpisode { omega, beta }
        })
        .collect()
}

pub fn qks_expand<T: Real>(theta: &[T], episodes: usize, seed: u64) -> Vec<Vec<T>> {
    qks_episodes(theta.len(), episodes, seed)
        .iter()
        .map(|e| e.apply(theta))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg(n: usize, layers: usize) -> CircuitConfig {
        CircuitConfig {
            n_qubits: n,
            n_layers: layers,
            shots: 0,
            seed: 0,
        }
    }

    #[test]
    fn zero_angles_give_ground_state() {
        let psi = ansatz_state(&[0.0f64; 5], &cfg(5, 4)).unwrap();
        assert_eq!(psi, StateVector::zero(5));
    }

    #[test]
    fn single_qubit_pi_rotation() {
        // Rz(pi) Ry(pi) |0> = Rz(pi) |1> = i |1>.
        let psi = ansatz_state(&[PI], &cfg(1, 1)).unwrap();
        let a = psi.amplitudes();
        assert!(a[0].norm() < 1e-12);
        assert!((a[1] - C::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn theta_dimension_checked() {
        assert!(matches!(
            ansatz_state(&[0.1f64; 3], &cfg(4, 1)),
            Err(Error::ThetaDimension {
                expected: 4,
                got: 3
            })
        ));
    }

    #[test]
    fn ground_state_expectations() {
        let obs = default_observables(4, 24).unwrap();
        let e = expectations(&StateVector::<f64>::zero(4), &obs, 0, 0);
        for (term, v) in obs.terms.iter().zip(&e) {
            let expect = if term.0.iter().all(|(_, p)| *p == Pauli::Z) {
                1.0
            } else {
                0.0
            };
            assert!((v - expect).abs() < 1e-12, "{}: {v}", term.label());
        }
    }

    #[test]
    fn plus_state_expectations() {
        let psi = amplitude_state(&[1.0f64, 1.0], 1).unwrap();
        let obs = default_observables(1, 3).unwrap();
        let e = expectations(&psi, &obs, 0, 0);
        assert!(e[0].abs() < 1e-12); // Z
        assert!((e[1] - 1.0).abs() < 1e-12); // X
        assert!(e[2].abs() < 1e-12); // Y
    }

    #[test]
    fn y_eigenstate() {
        // Rx-free preparation of |+i>: H then S.
        let mut psi = StateVector::<f64>::zero(1);
        psi.h(0);
        psi.phase(0, PI / 2.0);
        let obs = default_observables(1, 3).unwrap();
        let e = expectations(&psi, &obs, 0, 0);
        assert!((e[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn observable_enumeration() {
        let obs = default_observables(12, 64).unwrap();
        assert_eq!(obs.len(), 64);
        let singles = obs.terms.iter().filter(|t| t.0.len() == 1).count();
        assert_eq!(singles, 36);
        let kind = |p: Pauli| {
            obs.terms
                .iter()
                .filter(|t| t.0.len() == 2 && t.0[0].1 == p)
                .count()
        };
        assert_eq!(
            (kind(Pauli::Z), kind(Pauli::X), kind(Pauli::Y)),
            (12, 12, 4)
        );
        assert_eq!(obs.terms[0], PauliTerm::single(0, Pauli::Z));
        assert_eq!(obs.terms[36], PauliTerm::pair(0, 1, Pauli::Z));
        assert_eq!(obs.terms[47], PauliTerm::pair(11, 0, Pauli::Z));

        let s = default_observables(12, 36).unwrap();
        assert!(s.terms.iter().all(|t| t.0.len() == 1));
        assert!(matches!(
            default_observables(2, 73),
            Err(Error::ObservablePoolExhausted {
                requested: 73,
                available: 12
            })
        ));
    }

    #[test]
    fn amplitude_encoding() {
        let psi = amplitude_state(&[1.0f64, 0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(psi, StateVector::zero(2));
        let psi = amplitude_state(&[3.0f64, 4.0], 1).unwrap();
        assert!((psi.amplitudes()[0].re - 0.6).abs() < 1e-15);
        assert!((psi.amplitudes()[1].re - 0.8).abs() < 1e-15);
        assert!(matches!(
            amplitude_state(&[0.0f64; 3], 2),
            Err(Error::ZeroVector)
        ));
        // Truncation keeps the leading 2^n entries.
        let psi = amplitude_state(&[1.0f64, 1.0, 5.0], 1).unwrap();
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qks_identity_and_determinism() {
        let theta = [0.3f64, -1.2, 2.0];
        assert_eq!(QksEpisode::identity(3).apply(&theta), theta.to_vec());
        assert_eq!(qks_expand(&theta, 4, 9), qks_expand(&theta, 4, 9));
        assert_ne!(qks_expand(&theta, 1, 9), qks_expand(&theta, 1, 10));
    }

    #[test]
    fn f32_simulation_tracks_f64() {
        let theta = [0.4, -1.1, 2.5, 0.9];
        let a = ansatz_state(&theta, &cfg(4, 3)).unwrap();
        let b = ansatz_state(&theta.map(|x| x as f32), &cfg(4, 3)).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x.re - y.re as f64).abs() < 1e-5 && (x.im - y.im as f64).abs() < 1e-5);
        }
    }
}
