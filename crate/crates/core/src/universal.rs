//! Softmax hidden-variable model over a real spherical-harmonic basis, and the
//! state-independent hidden-variable transformations that realise local unitary
//! dynamics.
//!
//! `d_matrix(U)` is the matrix with `B(R_U x) = d_U B(x)`; it is a representation,
//! `d_{U₁U₂} = d_{U₁} d_{U₂}`. Hidden variables transform as `T_U(λ) = λ d_{U†}`.

use std::io::Write;

use nalgebra::DMatrix as NaMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::quantum::pauli;
use crate::scalar::softmax;
use crate::sphere::{real_harmonics, sph_count, sph_degree_order, SphereError, SphereQuadrature};
use crate::{CMat2, Mat3, Vec3, C64};

const UNITARY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UniversalError {
    #[error("matrix is not unitary (‖UU† − 1‖ = {0:e})")]
    NotUnitary(f64),
    #[error("hidden variable has {found} columns, basis has {expected}")]
    BasisMismatch { expected: usize, found: usize },
    #[error("quadrature exactness {order} too low for l_max = {l_max}")]
    QuadratureOrder { order: usize, l_max: usize },
    #[error(transparent)]
    Sphere(#[from] SphereError),
}

/// Real spherical harmonics of degree `≤ l_max`, ordered by `l² + l + m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BasisSpec {
    pub l_max: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { l_max: 5 }
    }
}

impl BasisSpec {
    pub fn new(l_max: usize) -> Self {
        Self { l_max }
    }

    /// Number of basis functions `K = (l_max + 1)²`.
    pub fn size(&self) -> usize {
        sph_count(self.l_max)
    }
}

/// `(Y_{0,0}, Y_{1,−1}, …, Y_{l_max,l_max})` at `n̂`.
pub fn real_sph_basis(spec: &BasisSpec, n: &Vec3) -> Vec<f64> {
    real_harmonics(spec.l_max, n)
}

/// One entry of the machine-readable basis manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BasisEntry {
    pub index: usize,
    pub l: usize,
    pub m: isize,
    pub azimuthal: &'static str,
}

pub fn basis_manifest(spec: &BasisSpec) -> Vec<BasisEntry> {
    (0..spec.size())
        .map(|index| {
            let (l, m) = sph_degree_order(index);
            let azimuthal = match m.signum() {
                1 => "cos(m phi)",
                -1 => "sin(|m| phi)",
                _ => "1",
            };
            BasisEntry {
                index,
                l,
                m,
                azimuthal,
            }
        })
        .collect()
}

/// Matrix-valued hidden variable `λ ∈ R^{Δ×K}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixHV(pub NaMatrix<f64>);

impl MatrixHV {
    pub fn zeros(outcomes: usize, spec: &BasisSpec) -> Self {
        Self(NaMatrix::zeros(outcomes, spec.size()))
    }

    pub fn random<R: Rng + ?Sized>(outcomes: usize, spec: &BasisSpec, rng: &mut R) -> Self {
        Self(NaMatrix::from_fn(outcomes, spec.size(), |_, _| rng.sample(StandardNormal)))
    }

    pub fn outcomes(&self) -> usize {
        self.0.nrows()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    fn check(&self, spec: &BasisSpec) -> Result<(), UniversalError> {
        if self.0.ncols() != spec.size() {
            return Err(UniversalError::BasisMismatch {
                expected: spec.size(),
                found: self.0.ncols(),
            });
        }
        Ok(())
    }
}

/// `q(x, λ) = softmax(λ B(x))`.
pub fn softmax_rule(lambda: &MatrixHV, spec: &BasisSpec, n: &Vec3) -> Result<Vec<f64>, UniversalError> {
    lambda.check(spec)?;
    let b = nalgebra::DVector::from_vec(real_sph_basis(spec, n));
    let logits = &lambda.0 * b;
    Ok(softmax(logits.as_slice()))
}

fn unitarity_defect(u: &CMat2) -> f64 {
    (u * u.adjoint() - CMat2::identity()).norm()
}

/// `R_ij = ½ Tr(σ_i U σ_j U†)`, so that `(R n̂)·σ = U (n̂·σ) U†`.
pub fn rotation_from_unitary(u: &CMat2) -> Result<Mat3, UniversalError> {
    let defect = unitarity_defect(u);
    if defect > UNITARY_TOL {
        return Err(UniversalError::NotUnitary(defect));
    }
    let ud = u.adjoint();
    Ok(Mat3::from_fn(|i, j| {
        (pauli(i) * u * pauli(j) * ud).trace().re * 0.5
    }))
}

/// `exp(−i φ n̂·σ / 2)`, a rotation by `φ` about `n̂`.
pub fn su2_from_axis_angle(axis: &Vec3, angle: f64) -> CMat2 {
    let n = axis.normalize();
    let (s, c) = (0.5 * angle).sin_cos();
    let ns = crate::quantum::pauli_dot(&n);
    CMat2::identity() * C64::from(c) - ns * C64::new(0.0, s)
}

/// Haar-random element of SU(2), from a uniform point on S³.
pub fn random_su2<R: Rng + ?Sized>(rng: &mut R) -> CMat2 {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / norm);
    CMat2::new(
        C64::new(w, -z),
        C64::new(-y, -x),
        C64::new(y, -x),
        C64::new(w, z),
    )
}

/// Representation matrix of a rotation on the real harmonics, block-diagonal in `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct DMatrix {
    pub spec: BasisSpec,
    pub d: NaMatrix<f64>,
}

impl DMatrix {
    pub fn identity(spec: &BasisSpec) -> Self {
        Self {
            spec: *spec,
            d: NaMatrix::identity(spec.size(), spec.size()),
        }
    }

    /// The `(2l+1)`-square block of degree `l`.
    pub fn block(&self, l: usize) -> NaMatrix<f64> {
        let start = l * l;
        let len = 2 * l + 1;
        self.d.view((start, start), (len, len)).into_owned()
    }

    /// Largest entry outside the degree blocks.
    pub fn off_block_max(&self) -> f64 {
        let mut max = 0.0f64;
        for (r, row) in self.d.row_iter().enumerate() {
            let (lr, _) = sph_degree_order(r);
            for (c, v) in row.iter().enumerate() {
                if sph_degree_order(c).0 != lr {
                    max = max.max(v.abs());
                }
            }
        }
        max
    }

    /// Largest `‖D_lᵀ D_l − 1‖_∞` over all degree blocks.
    pub fn block_orthogonality_error(&self) -> f64 {
        (0..=self.spec.l_max)
            .map(|l| {
                let b = self.block(l);
                let g = b.transpose() * &b - NaMatrix::<f64>::identity(b.nrows(), b.ncols());
                g.amax()
            })
            .fold(0.0, f64::max)
    }

    pub fn compose(&self, other: &DMatrix) -> DMatrix {
        DMatrix {
            spec: self.spec,
            d: &self.d * &other.d,
        }
    }

    /// `K × K` CSV without a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for row in self.d.row_iter() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `d_U` with `B(R_U x) = d_U B(x)`, by projection onto the orthonormal basis.
pub fn d_matrix(u: &CMat2, spec: &BasisSpec) -> Result<DMatrix, UniversalError> {
    let quad = SphereQuadrature::with_exactness(2 * spec.l_max + 2)?;
    d_matrix_with(u, spec, &quad)
}

/// As [`d_matrix`] with a caller-supplied quadrature of exactness `≥ 2 l_max`.
pub fn d_matrix_with(u: &CMat2, spec: &BasisSpec, quad: &SphereQuadrature) -> Result<DMatrix, UniversalError> {
    let r = rotation_from_unitary(u)?;
    if quad.exactness() < 2 * spec.l_max {
        return Err(UniversalError::QuadratureOrder {
            order: quad.exactness(),
            l_max: spec.l_max,
        });
    }
    if r == Mat3::identity() {
        return Ok(DMatrix::identity(spec));
    }
    let k = spec.size();
    let mut d = NaMatrix::<f64>::zeros(k, k);
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        let bx = real_sph_basis(spec, x);
        let brx = real_sph_basis(spec, &(r * x));
        for m in 0..k {
            let wm = w * brx[m];
            for n in 0..k {
                d[(m, n)] += wm * bx[n];
            }
        }
    }
    Ok(DMatrix { spec: *spec, d })
}

/// `T_U(λ) = λ d_{U†}`.
pub fn transform_hv(lambda: &MatrixHV, u: &CMat2, spec: &BasisSpec) -> Result<MatrixHV, UniversalError> {
    lambda.check(spec)?;
    let d = d_matrix(&u.adjoint(), spec)?;
    Ok(MatrixHV(&lambda.0 * d.d))
}

/// `T_U` through a precomputed `d_{U†}`.
pub fn transform_hv_with(lambda: &MatrixHV, d_dagger: &DMatrix) -> Result<MatrixHV, UniversalError> {
    lambda.check(&d_dagger.spec)?;
    Ok(MatrixHV(&lambda.0 * &d_dagger.d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::sample_sphere;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn basis_constant_and_size() {
        let spec = BasisSpec::default();
        assert_eq!(spec.size(), 36);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let b = real_sph_basis(&spec, &sample_sphere(&mut rng));
            assert_eq!(b.len(), 36);
            assert_abs_diff_eq!(b[0], 1.0 / (4.0 * PI).sqrt(), epsilon = 1e-15);
        }
        let manifest = basis_manifest(&BasisSpec::new(1));
        assert_eq!(manifest[1].m, -1);
        assert_eq!(manifest[3].azimuthal, "cos(m phi)");
    }

    #[test]
    fn softmax_examples() {
        let spec = BasisSpec::new(3);
        let n = Vec3::new(0.0, 0.6, 0.8);
        assert_eq!(softmax_rule(&MatrixHV::zeros(2, &spec), &spec, &n).unwrap(), vec![0.5, 0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lam = MatrixHV::random(2, &spec, &mut rng);
        let q = softmax_rule(&lam, &spec, &n).unwrap();
        assert!(q.iter().all(|&p| p > 0.0));
        assert_abs_diff_eq!(q.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        // a shift along the constant harmonic, applied to every row
        let mut shifted = lam.clone();
        for r in 0..2 {
            shifted.0[(r, 0)] += 3.7;
        }
        let q2 = softmax_rule(&shifted, &spec, &n).unwrap();
        assert_abs_diff_eq!(q[0], q2[0], epsilon = 1e-14);

        // logit gap 40 through the constant harmonic
        let mut gap = MatrixHV::zeros(2, &spec);
        gap.0[(1, 0)] = 40.0 * (4.0 * PI).sqrt();
        let q = softmax_rule(&gap, &spec, &n).unwrap();
        assert!(q[0] < 1e-12 && (1.0 - q[1]) < 1e-12);

        let wrong = MatrixHV::zeros(2, &BasisSpec::new(1));
        assert!(softmax_rule(&wrong, &spec, &n).is_err());
    }

    #[test]
    fn rotations_from_unitaries() {
        assert_eq!(rotation_from_unitary(&CMat2::identity()).unwrap(), Mat3::identity());
        let phi = 0.7;
        let r = rotation_from_unitary(&su2_from_axis_angle(&Vec3::z(), phi)).unwrap();
        assert_abs_diff_eq!((r * Vec3::x() - Vec3::new(phi.cos(), phi.sin(), 0.0)).norm(), 0.0, epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let u1 = random_su2(&mut rng);
            let u2 = random_su2(&mut rng);
            let r1 = rotation_from_unitary(&u1).unwrap();
            let r2 = rotation_from_unitary(&u2).unwrap();
            let r12 = rotation_from_unitary(&(u1 * u2)).unwrap();
            assert_abs_diff_eq!((r12 - r1 * r2).norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!((r1.transpose() * r1 - Mat3::identity()).norm(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(r1.determinant(), 1.0, epsilon = 1e-12);
            let phase = C64::from_polar(1.0, 1.234);
            assert_abs_diff_eq!((rotation_from_unitary(&(u1 * phase)).unwrap() - r1).norm(), 0.0, epsilon = 1e-14);
            let n = sample_sphere(&mut rng);
            let lhs = crate::quantum::pauli_dot(&(r1 * n));
            let rhs = u1 * crate::quantum::pauli_dot(&n) * u1.adjoint();
            assert_abs_diff_eq!((lhs - rhs).norm(), 0.0, epsilon = 1e-12);
        }
        let bad = CMat2::identity() * C64::from(1.1);
        assert!(matches!(rotation_from_unitary(&bad), Err(UniversalError::NotUnitary(_))));
    }

    #[test]
    fn d_matrix_identity_and_structure() {
        let spec = BasisSpec::default();
        let id = d_matrix(&CMat2::identity(), &spec).unwrap();
        assert_eq!(id, DMatrix::identity(&spec));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_su2(&mut rng);
        let d = d_matrix(&u, &spec).unwrap();
        assert!(d.off_block_max() < 1e-10);
        assert!(d.block_orthogonality_error() < 1e-10);
        // B(R_U x) = d B(x)
        let r = rotation_from_unitary(&u).unwrap();
        for _ in 0..10 {
            let x = sample_sphere(&mut rng);
            let lhs = nalgebra::DVector::from_vec(real_sph_basis(&spec, &(r * x)));
            let rhs = &d.d * nalgebra::DVector::from_vec(real_sph_basis(&spec, &x));
            assert!((lhs - rhs).amax() < 1e-8);
        }
        let low = SphereQuadrature::with_exactness(4).unwrap();
        assert!(matches!(d_matrix_with(&u, &spec, &low), Err(UniversalError::QuadratureOrder { .. })));
    }

    #[test]
    fn d_matrix_is_a_homomorphism() {
        let spec = BasisSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let u1 = random_su2(&mut rng);
            let u2 = random_su2(&mut rng);
            let lhs = d_matrix(&(u1 * u2), &spec).unwrap();
            let rhs = d_matrix(&u1, &spec).unwrap().compose(&d_matrix(&u2, &spec).unwrap());
            assert!((lhs.d - rhs.d).amax() < 1e-8);
        }
    }

    #[test]
    fn covariance_of_the_rule() {
        let spec = BasisSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let u = random_su2(&mut rng);
            let lam = MatrixHV::random(2, &spec, &mut rng);
            let x = sample_sphere(&mut rng);
            let ud_x = rotation_from_unitary(&u.adjoint()).unwrap() * x;
            let lhs = softmax_rule(&lam, &spec, &ud_x).unwrap();
            let rhs = softmax_rule(&transform_hv(&lam, &u, &spec).unwrap(), &spec, &x).unwrap();
            assert_abs_diff_eq!(lhs[0], rhs[0], epsilon = 1e-8);
        }
    }

    #[test]
    fn transform_group_action() {
        let spec = BasisSpec::new(4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lam = MatrixHV::random(2, &spec, &mut rng);
        assert_eq!(transform_hv(&lam, &CMat2::identity(), &spec).unwrap(), lam);
        let u1 = random_su2(&mut rng);
        let u2 = random_su2(&mut rng);
        let composite = transform_hv(&lam, &(u1 * u2), &spec).unwrap();
        let stepwise = transform_hv(&transform_hv(&lam, &u2, &spec).unwrap(), &u1, &spec).unwrap();
        assert!((composite.0 - stepwise.0).amax() <= 1e-8 * lam.norm());
    }

    #[test]
    fn csv_export_shape() {
        let spec = BasisSpec::new(1);
        let mut buf = Vec::new();
        DMatrix::identity(&spec).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap().split(',').count(), 4);
    }
}
