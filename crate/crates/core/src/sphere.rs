//! Numerics on the unit sphere: product quadrature, uniform sampling, real
//! spherical harmonics and tangent frames.
//!
//! Real harmonics carry no Condon–Shortley phase. They are stored at flat index
//! `l² + l + m`, so degree `l` occupies `l²..(l+1)²` with `m` running from `−l`
//! to `l`. `Y_{l,m}` with `m > 0` is proportional to `cos(mφ)`, with `m < 0` to
//! `sin(|m|φ)`; in particular `Y_{1,1} ∝ x` and `Y_{1,−1} ∝ y`.

use std::f64::consts::PI;

use num_traits::{FromPrimitive, Num};
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use thiserror::Error;

use crate::scalar::Dual3;
use crate::Vec3;

/// Largest exactness order accepted by [`SphereQuadrature::with_exactness`].
pub const MAX_ORDER: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SphereError {
    #[error("unsupported quadrature order {0} (supported: 1..={MAX_ORDER})")]
    UnsupportedOrder(usize),
    #[error("product grid needs at least one node per axis, got {n_theta}×{n_phi}")]
    EmptyGrid { n_theta: usize, n_phi: usize },
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre in `cos θ` times a uniform azimuthal grid.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
    n_theta: usize,
    n_phi: usize,
}

impl SphereQuadrature {
    pub fn product(n_theta: usize, n_phi: usize) -> Result<Self, SphereError> {
        if n_theta == 0 || n_phi == 0 {
            return Err(SphereError::EmptyGrid { n_theta, n_phi });
        }
        let (xs, ws) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (&ct, &w) in xs.iter().zip(&ws) {
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = dphi * (j as f64 + 0.5);
                nodes.push(Vec3::new(st * phi.cos(), st * phi.sin(), ct));
                weights.push(w * dphi);
            }
        }
        Ok(Self {
            nodes,
            weights,
            n_theta,
            n_phi,
        })
    }

    /// Product grid on the hemisphere `pole · λ̂ > 0`: Gauss–Legendre in
    /// `cos θ ∈ (0, 1)` around `pole` times a uniform azimuthal grid.
    pub fn hemisphere(n_theta: usize, n_phi: usize, pole: &Vec3) -> Result<Self, SphereError> {
        if n_theta == 0 || n_phi == 0 {
            return Err(SphereError::EmptyGrid { n_theta, n_phi });
        }
        let pole = pole.normalize();
        let (e1, e2) = tangent_frame(&pole);
        let (xs, ws) = gauss_legendre(n_theta);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        let mut weights = Vec::with_capacity(n_theta * n_phi);
        for (&x, &w) in xs.iter().zip(&ws) {
            let ct = 0.5 * (x + 1.0);
            let st = (1.0 - ct * ct).max(0.0).sqrt();
            for j in 0..n_phi {
                let phi = dphi * (j as f64 + 0.5);
                nodes.push(e1 * (st * phi.cos()) + e2 * (st * phi.sin()) + pole * ct);
                weights.push(0.5 * w * dphi);
            }
        }
        Ok(Self {
            nodes,
            weights,
            n_theta,
            n_phi,
        })
    }

    /// Smallest product grid integrating every polynomial of degree `≤ order` exactly.
    pub fn with_exactness(order: usize) -> Result<Self, SphereError> {
        if order == 0 || order > MAX_ORDER {
            return Err(SphereError::UnsupportedOrder(order));
        }
        Self::product(order / 2 + 1, order + 1)
    }

    /// The default `64 × 128` grid.
    pub fn baseline() -> Self {
        Self::product(64, 128).expect("non-empty grid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_theta, self.n_phi)
    }

    /// Polynomial degree integrated exactly.
    pub fn exactness(&self) -> usize {
        (2 * self.n_theta - 1).min(self.n_phi - 1)
    }

    pub fn integrate<F: FnMut(&Vec3) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(n, w)| w * f(n))
            .sum()
    }
}

/// Uniform point on the unit sphere.
pub fn sample_sphere<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let [x, y, z]: [f64; 3] = UnitSphere.sample(rng);
    Vec3::new(x, y, z)
}

/// Flat index of `(l, m)`.
#[inline]
pub const fn sph_index(l: usize, m: isize) -> usize {
    ((l * l + l) as isize + m) as usize
}

/// Number of real harmonics of degree `≤ l_max`.
#[inline]
pub const fn sph_count(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// `(l, m)` at a flat index.
pub fn sph_degree_order(k: usize) -> (usize, isize) {
    let l = (k as f64).sqrt() as usize;
    let l = if (l + 1) * (l + 1) <= k { l + 1 } else { l };
    (l, k as isize - (l * l + l) as isize)
}

fn normalisations(l_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; sph_count(l_max)];
    for l in 0..=l_max {
        for m in 0..=l {
            // (l−m)!/(l+m)!
            let ratio: f64 = ((l - m + 1)..=(l + m)).map(|k| 1.0 / k as f64).product();
            let mut n = ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt();
            if m > 0 {
                n *= 2f64.sqrt();
            }
            out[sph_index(l, m as isize)] = n;
            out[sph_index(l, -(m as isize))] = n;
        }
    }
    out
}

/// Solid harmonics `r^l Y_{l,m}(x/r)` of degree `≤ l_max`, evaluated with
/// polynomial recurrences only. On the unit sphere they equal `Y_{l,m}`.
pub fn solid_harmonics<T>(l_max: usize, x: T, y: T, z: T) -> Vec<T>
where
    T: Copy + Num + FromPrimitive,
{
    let c = |v: f64| T::from_f64(v).expect("representable constant");
    let norms = normalisations(l_max);
    let r2 = x * x + y * y + z * z;
    let mut out = vec![T::zero(); sph_count(l_max)];
    // (C_m, S_m) = Re, Im of (x + iy)^m
    let (mut cm, mut sm) = (T::one(), T::zero());
    let mut diag = T::one(); // (2m−1)!!
    for m in 0..=l_max {
        if m > 0 {
            let (cn, sn) = (x * cm - y * sm, x * sm + y * cm);
            cm = cn;
            sm = sn;
            diag = diag * c((2 * m - 1) as f64);
        }
        let mut p_prev = T::zero();
        let mut p = diag;
        for l in m..=l_max {
            if l == m + 1 {
                p_prev = p;
                p = c((2 * m + 1) as f64) * z * p_prev;
            } else if l > m + 1 {
                let next = (c((2 * l - 1) as f64) * z * p - c((l + m - 1) as f64) * r2 * p_prev)
                    / c((l - m) as f64);
                p_prev = p;
                p = next;
            }
            let mi = m as isize;
            if m == 0 {
                out[sph_index(l, 0)] = c(norms[sph_index(l, 0)]) * p;
            } else {
                let nl = c(norms[sph_index(l, mi)]);
                out[sph_index(l, mi)] = nl * p * cm;
                out[sph_index(l, -mi)] = nl * p * sm;
            }
        }
    }
    out
}

/// Real spherical harmonics at a unit vector.
pub fn real_harmonics(l_max: usize, n: &Vec3) -> Vec<f64> {
    solid_harmonics(l_max, n.x, n.y, n.z)
}

/// Harmonics and their surface gradients `∇_S Y` at a unit vector.
pub fn real_harmonics_with_gradient(l_max: usize, n: &Vec3) -> (Vec<f64>, Vec<Vec3>) {
    let d = solid_harmonics(
        l_max,
        Dual3::variable(n.x, 0),
        Dual3::variable(n.y, 1),
        Dual3::variable(n.z, 2),
    );
    let mut values = Vec::with_capacity(d.len());
    let mut grads = Vec::with_capacity(d.len());
    for (k, h) in d.iter().enumerate() {
        let (l, _) = sph_degree_order(k);
        let g = Vec3::new(h.grad[0], h.grad[1], h.grad[2]);
        // Euler: n·∇(solid) = l·Y at r = 1
        values.push(h.value);
        grads.push(g - n * (l as f64 * h.value));
    }
    (values, grads)
}

/// Right-handed orthonormal tangent frame `(e₁, e₂)` with `e₁ × e₂ = n`.
pub fn tangent_frame(n: &Vec3) -> (Vec3, Vec3) {
    let a = n.abs();
    let reference = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let e1 = (reference - n * n.dot(&reference)).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// Tangential projection `(I − n nᵀ) v`.
#[inline]
pub fn project_tangent(n: &Vec3, v: &Vec3) -> Vec3 {
    v - n * n.dot(v)
}
