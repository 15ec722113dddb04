//! Exact quantum reference: density matrices, Bloch/Pauli parameterization,
//! projective measurement statistics and Heisenberg exchange evolution.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::{CMat2, CMat4, Mat3, Vec3, C64};

const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("trace is {0}, expected 1")]
    BadTrace(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not antisymmetric (max |A + Aᵀ| = {0:e})")]
    NotAntisymmetric(f64),
    #[error("visibility {0} outside [0, 1]")]
    VisibilityOutOfRange(f64),
    #[error("direction is not a unit vector (norm {0})")]
    NotUnitVector(f64),
    #[error("malformed state record: {0}")]
    Record(String),
}

/// Pauli matrix `σ_k` for `k ∈ {0, 1, 2}` (x, y, z).
pub fn pauli(k: usize) -> CMat2 {
    let z = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match k {
        0 => CMat2::new(z, one, one, z),
        1 => CMat2::new(z, -i, i, z),
        2 => CMat2::new(one, z, z, -one),
        _ => panic!("Pauli index {k} out of range"),
    }
}

/// `n̂·σ` for a real 3-vector.
pub fn pauli_dot(n: &Vec3) -> CMat2 {
    pauli(0) * C64::from(n.x) + pauli(1) * C64::from(n.y) + pauli(2) * C64::from(n.z)
}

/// Kronecker product of two single-qubit operators.
pub fn kron2(a: &CMat2, b: &CMat2) -> CMat4 {
    CMat4::from_fn(|r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

/// Single-qubit state `(1 + r·σ)/2`.
pub fn qubit_density(r: &Vec3) -> CMat2 {
    (CMat2::identity() + pauli_dot(r)) * C64::from(0.5)
}

/// Antisymmetric matrix `A(z)` with `A(z) v = z × v`.
pub fn antisym_of_vec(z: &Vec3) -> Mat3 {
    z.cross_matrix()
}

/// Inverse of [`antisym_of_vec`].
pub fn z_of_antisym(a: &Mat3) -> Result<Vec3, QuantumError> {
    let dev = (a + a.transpose()).amax();
    if dev > 1e-12 {
        return Err(QuantumError::NotAntisymmetric(dev));
    }
    Ok(Vec3::new(a[(2, 1)], a[(0, 2)], a[(1, 0)]))
}

/// A density operator on one or two qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    /// Wraps a matrix without validating it.
    pub fn from_matrix_unchecked(matrix: DMatrix<C64>) -> Self {
        assert!(matrix.is_square(), "density matrix must be square");
        Self { matrix }
    }

    /// Wraps and validates a matrix.
    pub fn new(matrix: DMatrix<C64>) -> Result<Self, QuantumError> {
        let rho = Self::from_matrix_unchecked(matrix);
        rho.validate()?;
        Ok(rho)
    }

    pub fn from_cmat4(m: &CMat4) -> Self {
        Self::from_matrix_unchecked(DMatrix::from_iterator(4, 4, m.iter().copied()))
    }

    pub fn from_cmat2(m: &CMat2) -> Self {
        Self::from_matrix_unchecked(DMatrix::from_iterator(2, 2, m.iter().copied()))
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self::from_matrix_unchecked(DMatrix::identity(dim, dim) / C64::from(dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn to_cmat4(&self) -> Result<CMat4, QuantumError> {
        if self.dim() != 4 {
            return Err(QuantumError::DimensionMismatch {
                expected: 4,
                found: self.dim(),
            });
        }
        Ok(CMat4::from_fn(|r, c| self.matrix[(r, c)]))
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Eigenvalues in ascending order, taken from the Hermitian part.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let herm = (&self.matrix + self.matrix.adjoint()) * C64::from(0.5);
        let mut ev: Vec<f64> = SymmetricEigen::new(herm).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn validate(&self) -> Result<(), QuantumError> {
        let herm_dev = (&self.matrix - self.matrix.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm_dev > HERMITIAN_TOL {
            return Err(QuantumError::NotHermitian(herm_dev));
        }
        let tr = self.trace();
        if (tr - C64::from(1.0)).norm() > TRACE_TOL {
            return Err(QuantumError::BadTrace(tr.re));
        }
        let min_ev = self.eigenvalues()[0];
        if min_ev < -PSD_TOL {
            return Err(QuantumError::NotPositive(min_ev));
        }
        Ok(())
    }
}

/// Two-qubit state as local Bloch vectors and correlation matrix:
/// `ρ = ¼(1⊗1 + a·σ⊗1 + 1⊗b·σ + Σ T_jk σ_j⊗σ_k)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochTwoQubit {
    pub a: Vec3,
    pub b: Vec3,
    pub t: Mat3,
}

impl BlochTwoQubit {
    pub fn new(a: Vec3, b: Vec3, t: Mat3) -> Self {
        Self { a, b, t }
    }

    pub fn maximally_mixed() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros(), Mat3::zeros())
    }

    /// The singlet `(|↑↓⟩ − |↓↑⟩)/√2`.
    pub fn singlet() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros(), -Mat3::identity())
    }

    /// `a = b = 0`, `T = sign·ε û ûᵀ`.
    pub fn rank_one_correlation(u: &Vec3, epsilon: f64) -> Self {
        let u = u.normalize();
        Self::new(Vec3::zeros(), Vec3::zeros(), u * u.transpose() * epsilon)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.a * factor, self.b * factor, self.t * factor)
    }

    pub fn density_matrix(&self) -> DensityMatrix {
        density_from_bloch(self)
    }

    pub fn singular_data(&self) -> SingularData {
        SingularData::of(&self.t)
    }

    /// Whitespace separated record: `a` (3), `b` (3), `T` (9, row-major).
    pub fn to_record(&self) -> String {
        let mut fields: Vec<String> = Vec::with_capacity(15);
        fields.extend(self.a.iter().map(|x| x.to_string()));
        fields.extend(self.b.iter().map(|x| x.to_string()));
        for r in 0..3 {
            for c in 0..3 {
                fields.push(self.t[(r, c)].to_string());
            }
        }
        fields.join(" ")
    }

    pub fn parse_record(line: &str) -> Result<Self, QuantumError> {
        let values = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| QuantumError::Record(format!("{s:?}: {e}")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != 15 {
            return Err(QuantumError::Record(format!(
                "expected 15 numbers, found {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
            return Err(QuantumError::Record(format!("non-finite value {bad}")));
        }
        Ok(Self::new(
            Vec3::new(values[0], values[1], values[2]),
            Vec3::new(values[3], values[4], values[5]),
            Mat3::from_row_slice(&values[6..15]),
        ))
    }
}

impl fmt::Display for BlochTwoQubit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_record())
    }
}

/// Reads one state record per line; blank lines and `#` comments are skipped.
pub fn read_state_records<R: BufRead>(reader: R) -> Result<Vec<BlochTwoQubit>, QuantumError> {
    let mut states = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| QuantumError::Record(format!("line {}: {e}", lineno + 1)))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let state = BlochTwoQubit::parse_record(content)
            .map_err(|e| QuantumError::Record(format!("line {}: {e}", lineno + 1)))?;
        states.push(state);
    }
    Ok(states)
}

pub fn write_state_records<W: Write>(mut writer: W, states: &[BlochTwoQubit]) -> std::io::Result<()> {
    writeln!(writer, "# a1 a2 a3 b1 b2 b3 T11 T12 T13 T21 T22 T23 T31 T32 T33")?;
    for s in states {
        writeln!(writer, "{}", s.to_record())?;
    }
    Ok(())
}

/// Singular value decomposition `T = Σ_j S_j û_j v̂_jᵀ` with `S_j ≥ 0`, sorted descending.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularData {
    pub values: [f64; 3],
    pub u: [Vec3; 3],
    pub v: [Vec3; 3],
}

impl SingularData {
    pub fn of(t: &Mat3) -> Self {
        let svd = t.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let values = order.map(|k| svd.singular_values[k]);
        let u = order.map(|k| u.column(k).into_owned());
        let v = order.map(|k| v_t.row(k).transpose());
        Self { values, u, v }
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn reconstruct(&self) -> Mat3 {
        (0..3).fold(Mat3::zeros(), |acc, j| {
            acc + self.u[j] * self.v[j].transpose() * self.values[j]
        })
    }
}

/// Projective spin measurement outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Up,
    Down,
}

impl Outcome {
    pub const BOTH: [Outcome; 2] = [Outcome::Up, Outcome::Down];

    pub fn sign(self) -> f64 {
        match self {
            Outcome::Up => 1.0,
            Outcome::Down => -1.0,
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Up => "up",
            Outcome::Down => "down",
        })
    }
}

/// A local spin measurement on each party: direction and outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementEvent {
    pub parties: Vec<(Vec3, Outcome)>,
}

impl MeasurementEvent {
    pub fn new(parties: Vec<(Vec3, Outcome)>) -> Result<Self, QuantumError> {
        for (n, _) in &parties {
            if (n.norm() - 1.0).abs() > 1e-12 {
                return Err(QuantumError::NotUnitVector(n.norm()));
            }
        }
        Ok(Self { parties })
    }

    pub fn single(n: Vec3, outcome: Outcome) -> Result<Self, QuantumError> {
        Self::new(vec![(n, outcome)])
    }

    pub fn pair(n1: Vec3, o1: Outcome, n2: Vec3, o2: Outcome) -> Result<Self, QuantumError> {
        Self::new(vec![(n1, o1), (n2, o2)])
    }
}

/// Projector `(1 ± n̂·σ)/2`.
pub fn spin_projector(n: &Vec3, outcome: Outcome) -> CMat2 {
    (CMat2::identity() + pauli_dot(n) * C64::from(outcome.sign())) * C64::from(0.5)
}

/// `Tr(ρ ⊗_k Π(n̂_k, o_k))`.
pub fn quantum_probability(rho: &DensityMatrix, event: &MeasurementEvent) -> Result<f64, QuantumError> {
    let expected = 1usize << event.parties.len();
    if rho.dim() != expected {
        return Err(QuantumError::DimensionMismatch {
            expected,
            found: rho.dim(),
        });
    }
    let mut op = DMatrix::<C64>::identity(1, 1);
    for (n, o) in &event.parties {
        let p = spin_projector(n, *o);
        let p = DMatrix::from_iterator(2, 2, p.iter().copied());
        op = op.kronecker(&p);
    }
    Ok((rho.matrix() * op).trace().re)
}

/// `ρ(a, b, T)` from the Pauli expansion. No validation is performed.
pub fn density_from_bloch(s: &BlochTwoQubit) -> DensityMatrix {
    DensityMatrix::from_cmat4(&density_cmat4(s))
}

fn density_cmat4(s: &BlochTwoQubit) -> CMat4 {
    let id = CMat2::identity();
    let mut m = kron2(&id, &id);
    m += kron2(&pauli_dot(&s.a), &id);
    m += kron2(&id, &pauli_dot(&s.b));
    for j in 0..3 {
        for k in 0..3 {
            m += kron2(&pauli(j), &pauli(k)) * C64::from(s.t[(j, k)]);
        }
    }
    m * C64::from(0.25)
}

/// Inverse of [`density_from_bloch`]: `a_j = Tr ρ σ_j⊗1`, `b_k = Tr ρ 1⊗σ_k`,
/// `T_jk = Tr ρ σ_j⊗σ_k`.
pub fn bloch_from_density(rho: &DensityMatrix) -> Result<BlochTwoQubit, QuantumError> {
    Ok(bloch_from_cmat4(&rho.to_cmat4()?))
}

fn bloch_from_cmat4(rho: &CMat4) -> BlochTwoQubit {
    let id = CMat2::identity();
    let expect = |op: CMat4| (rho * op).trace().re;
    let a = Vec3::from_fn(|j, _| expect(kron2(&pauli(j), &id)));
    let b = Vec3::from_fn(|k, _| expect(kron2(&id, &pauli(k))));
    let t = Mat3::from_fn(|j, k| expect(kron2(&pauli(j), &pauli(k))));
    BlochTwoQubit::new(a, b, t)
}

/// `H = (ω/4) Σ_k σ_k⊗σ_k`.
pub fn heisenberg_hamiltonian(omega: f64) -> CMat4 {
    (0..3).fold(CMat4::zeros(), |acc, k| acc + kron2(&pauli(k), &pauli(k))) * C64::from(omega / 4.0)
}

/// `U = exp(−iHt)` through the eigendecomposition of the Hermitian `H`.
pub fn heisenberg_unitary(omega: f64, t: f64) -> CMat4 {
    let eig = SymmetricEigen::new(heisenberg_hamiltonian(omega));
    let phases = eig
        .eigenvalues
        .map(|e| Complex::from_polar(1.0, -e * t));
    let v = &eig.eigenvectors;
    v * CMat4::from_diagonal(&phases) * v.adjoint()
}

/// Conjugation `ρ ↦ UρU†` under the Heisenberg evolution, re-expressed in Bloch form.
pub fn evolve_bloch(s: &BlochTwoQubit, omega: f64, t: f64) -> BlochTwoQubit {
    let u = heisenberg_unitary(omega, t);
    bloch_from_cmat4(&(u * density_cmat4(s) * u.adjoint()))
}

/// Instantaneous rates of the Bloch parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlochRates {
    pub a_dot: Vec3,
    pub b_dot: Vec3,
    pub t_dot: Mat3,
}

/// von Neumann equation of motion under the Heisenberg exchange:
/// `ȧ = −ḃ = ω z((T−Tᵀ)/2)`, `Ṫ = −ω A((a−b)/2)`.
pub fn bloch_derivatives(s: &BlochTwoQubit, omega: f64) -> BlochRates {
    let antisym = (s.t - s.t.transpose()) * 0.5;
    // exact read-off; antisymmetric by construction
    let z = Vec3::new(antisym[(2, 1)], antisym[(0, 2)], antisym[(1, 0)]);
    let a_dot = z * omega;
    BlochRates {
        a_dot,
        b_dot: -a_dot,
        t_dot: antisym_of_vec(&((s.a - s.b) * 0.5)) * -omega,
    }
}

/// Haar-like random density matrix `GG†/Tr(GG†)` with complex standard normal `G`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let g = DMatrix::<C64>::from_fn(dim, dim, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let w = &g * g.adjoint();
    let tr = w.trace();
    let m = w / tr;
    // remove rounding asymmetry
    let m = (&m + m.adjoint()) * C64::from(0.5);
    DensityMatrix::from_matrix_unchecked(m)
}

/// Bloch data of `vρ + (1−v)·1/4` for a random `ρ` (see [`random_density`]).
pub fn sample_noisy_ball<R: Rng + ?Sized>(v: f64, rng: &mut R) -> Result<BlochTwoQubit, QuantumError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(QuantumError::VisibilityOutOfRange(v));
    }
    let rho = random_density(4, rng);
    let s = bloch_from_density(&rho)?;
    Ok(s.scaled(v))
}
