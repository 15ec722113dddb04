//! Tangential velocity bases built from vector spherical harmonics.
//!
//! On one sphere, `Ψ_lm = ∇_S Y_lm / √(l(l+1))` (divergence `−√(l(l+1)) Y_lm`)
//! and `Φ_lm = λ̂ × ∇_S Y_lm / √(l(l+1))` (divergence free). On `S² × S²` each
//! of them is multiplied by a scalar harmonic of the partner variable, with
//! total degree `l_own + l_partner ≤ L`.

use serde::Serialize;

use crate::sphere::{real_harmonics_with_gradient, sph_count, sph_degree_order, sph_index, tangent_frame};
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum HarmonicKind {
    Gradient,
    Curl,
}

/// One basis field: a vector harmonic on sphere `sphere` times a partner harmonic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BasisTerm {
    pub sphere: u8,
    pub l: usize,
    pub m: isize,
    pub kind: HarmonicKind,
    pub partner_l: usize,
    pub partner_m: isize,
}

/// Tangent frames at a node pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalFrame {
    pub l1: Vec3,
    pub l2: Vec3,
    pub e11: Vec3,
    pub e12: Vec3,
    pub e21: Vec3,
    pub e22: Vec3,
}

impl LocalFrame {
    pub fn new(l1: Vec3, l2: Vec3) -> Self {
        let (e11, e12) = tangent_frame(&l1);
        let (e21, e22) = tangent_frame(&l2);
        Self {
            l1,
            l2,
            e11,
            e12,
            e21,
            e22,
        }
    }

    pub fn to_local(&self, v1: &Vec3, v2: &Vec3) -> [f64; 4] {
        [v1.dot(&self.e11), v1.dot(&self.e12), v2.dot(&self.e21), v2.dot(&self.e22)]
    }
}

#[derive(Clone, Copy, Debug)]
struct Term {
    sphere: u8,
    own: usize,
    partner: usize,
    scale: f64,
    curl: bool,
}

/// Truncated basis of tangential fields on `S² × S²`.
#[derive(Clone, Debug)]
pub struct VelocityBasis {
    degree: usize,
    terms: Vec<Term>,
}

impl VelocityBasis {
    pub fn new(degree: usize) -> Self {
        let mut terms = Vec::new();
        for sphere in [1u8, 2] {
            for l in 1..=degree {
                let scale = ((l * (l + 1)) as f64).sqrt();
                for m in -(l as isize)..=(l as isize) {
                    for curl in [false, true] {
                        for partner in 0..sph_count(degree - l) {
                            terms.push(Term {
                                sphere,
                                own: sph_index(l, m),
                                partner,
                                scale,
                                curl,
                            });
                        }
                    }
                }
            }
        }
        Self { degree, terms }
    }

    /// `2 Σ_{l=1}^{L} 2(2l+1)(L−l+1)²`.
    pub fn count(degree: usize) -> usize {
        (1..=degree).map(|l| 4 * (2 * l + 1) * (degree - l + 1).pow(2)).sum()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, index: usize) -> BasisTerm {
        let t = self.terms[index];
        let (l, m) = sph_degree_order(t.own);
        let (partner_l, partner_m) = sph_degree_order(t.partner);
        BasisTerm {
            sphere: t.sphere,
            l,
            m,
            kind: if t.curl { HarmonicKind::Curl } else { HarmonicKind::Gradient },
            partner_l,
            partner_m,
        }
    }

    /// Local matrix at a node, row-major `5 × n`: rows are `div V`, `V₁·e₁₁`,
    /// `V₁·e₁₂`, `V₂·e₂₁`, `V₂·e₂₂` for each basis field.
    pub fn local_rows(&self, frame: &LocalFrame, out: &mut [f64]) {
        let n = self.len();
        assert_eq!(out.len(), 5 * n);
        let (y1, g1) = real_harmonics_with_gradient(self.degree, &frame.l1);
        let (y2, g2) = real_harmonics_with_gradient(self.degree, &frame.l2);
        // per-sphere own components in the local frame: (grad·e_a, grad·e_b, (λ×grad)·e_a, (λ×grad)·e_b)
        let comps = |g: &[Vec3], l: &Vec3, ea: &Vec3, eb: &Vec3| {
            g.iter()
                .map(|gk| {
                    let c = l.cross(gk);
                    [gk.dot(ea), gk.dot(eb), c.dot(ea), c.dot(eb)]
                })
                .collect::<Vec<_>>()
        };
        let c1 = comps(&g1, &frame.l1, &frame.e11, &frame.e12);
        let c2 = comps(&g2, &frame.l2, &frame.e21, &frame.e22);
        let (div, rest) = out.split_at_mut(n);
        let (v11, rest) = rest.split_at_mut(n);
        let (v12, rest) = rest.split_at_mut(n);
        let (v21, v22) = rest.split_at_mut(n);
        for (k, t) in self.terms.iter().enumerate() {
            let (own_y, own_c, partner_y) = if t.sphere == 1 {
                (y1[t.own], c1[t.own], y2[t.partner])
            } else {
                (y2[t.own], c2[t.own], y1[t.partner])
            };
            let (a, b, d) = if t.curl {
                (own_c[2] / t.scale, own_c[3] / t.scale, 0.0)
            } else {
                (own_c[0] / t.scale, own_c[1] / t.scale, -t.scale * own_y)
            };
            div[k] = d * partner_y;
            if t.sphere == 1 {
                v11[k] = a * partner_y;
                v12[k] = b * partner_y;
                v21[k] = 0.0;
                v22[k] = 0.0;
            } else {
                v11[k] = 0.0;
                v12[k] = 0.0;
                v21[k] = a * partner_y;
                v22[k] = b * partner_y;
            }
        }
    }

    /// `(V₁, V₂, div V)` of the field with coefficients `c`.
    pub fn evaluate(&self, c: &[f64], l1: &Vec3, l2: &Vec3) -> (Vec3, Vec3, f64) {
        let frame = LocalFrame::new(*l1, *l2);
        let n = self.len();
        let mut rows = vec![0.0; 5 * n];
        self.local_rows(&frame, &mut rows);
        let dot = |r: usize| rows[r * n..(r + 1) * n].iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        let v1 = frame.e11 * dot(1) + frame.e12 * dot(2);
        let v2 = frame.e21 * dot(3) + frame.e22 * dot(4);
        (v1, v2, dot(0))
    }
}

/// A tangential field on `S² × S²`.
pub trait VelocityField {
    fn velocity(&self, l1: &Vec3, l2: &Vec3) -> (Vec3, Vec3);

    /// `div₁V₁ + div₂V₂`; finite differences unless overridden.
    fn divergence(&self, l1: &Vec3, l2: &Vec3) -> f64 {
        surface_divergence_fd(self, l1, l2, 1e-5)
    }
}

/// Adapts a closure `(λ̂₁, λ̂₂) ↦ (V₁, V₂)`.
pub struct FnField<F>(pub F);

impl<F: Fn(&Vec3, &Vec3) -> (Vec3, Vec3)> VelocityField for FnField<F> {
    fn velocity(&self, l1: &Vec3, l2: &Vec3) -> (Vec3, Vec3) {
        (self.0)(l1, l2)
    }
}

/// Coefficients of a field in a [`VelocityBasis`].
#[derive(Clone, Debug)]
pub struct VelocityCoefficients {
    pub basis: VelocityBasis,
    pub coeffs: Vec<f64>,
}

impl VelocityCoefficients {
    pub fn zeros(basis: VelocityBasis) -> Self {
        let coeffs = vec![0.0; basis.len()];
        Self { basis, coeffs }
    }
}

impl VelocityField for VelocityCoefficients {
    fn velocity(&self, l1: &Vec3, l2: &Vec3) -> (Vec3, Vec3) {
        let (v1, v2, _) = self.basis.evaluate(&self.coeffs, l1, l2);
        (v1, v2)
    }

    /// Spectral divergence.
    fn divergence(&self, l1: &Vec3, l2: &Vec3) -> f64 {
        self.basis.evaluate(&self.coeffs, l1, l2).2
    }
}

/// Divergence on `S² × S²` by central differences in gnomonic charts
/// `x(s, t) = normalize(λ̂ + s e₁ + t e₂)`, which have no coordinate poles.
pub fn surface_divergence_fd<F: VelocityField + ?Sized>(field: &F, l1: &Vec3, l2: &Vec3, h: f64) -> f64 {
    let (e11, e12) = tangent_frame(l1);
    let (e21, e22) = tangent_frame(l2);
    let mut div = 0.0;
    for e in [e11, e12] {
        let plus = field.velocity(&(l1 + e * h).normalize(), l2).0;
        let minus = field.velocity(&(l1 - e * h).normalize(), l2).0;
        div += (plus.dot(&e) - minus.dot(&e)) / (2.0 * h);
    }
    for e in [e21, e22] {
        let plus = field.velocity(l1, &(l2 + e * h).normalize()).1;
        let minus = field.velocity(l1, &(l2 - e * h).normalize()).1;
        div += (plus.dot(&e) - minus.dot(&e)) / (2.0 * h);
    }
    div
}

/// A field sampled at node pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentField {
    pub nodes: Vec<(Vec3, Vec3)>,
    pub values: Vec<(Vec3, Vec3)>,
}

impl TangentField {
    pub fn sample<F: VelocityField + ?Sized>(field: &F, nodes: &[(Vec3, Vec3)]) -> Self {
        Self {
            nodes: nodes.to_vec(),
            values: nodes.iter().map(|(a, b)| field.velocity(a, b)).collect(),
        }
    }

    /// Largest `|V_j · λ̂_j|`.
    pub fn tangency_defect(&self) -> f64 {
        self.nodes
            .iter()
            .zip(&self.values)
            .map(|((l1, l2), (v1, v2))| v1.dot(l1).abs().max(v2.dot(l2).abs()))
            .fold(0.0, f64::max)
    }

    pub fn max_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|(v1, v2)| (v1.norm_squared() + v2.norm_squared()).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Vector harmonics on a single sphere, `l = 1..=L`, both kinds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SphereVelocityBasis {
    degree: usize,
}

/// One single-sphere basis field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SphereBasisTerm {
    pub l: usize,
    pub m: isize,
    pub kind: HarmonicKind,
}

impl SphereVelocityBasis {
    pub fn new(degree: usize) -> Self {
        Self { degree }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// `2((L+1)² − 1)`.
    pub fn len(&self) -> usize {
        2 * (sph_count(self.degree) - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.degree == 0
    }

    /// Index `2(k − 1) + kind` for harmonic index `k ≥ 1`.
    pub fn term(&self, index: usize) -> SphereBasisTerm {
        let (l, m) = sph_degree_order(index / 2 + 1);
        let kind = if index % 2 == 0 { HarmonicKind::Gradient } else { HarmonicKind::Curl };
        SphereBasisTerm { l, m, kind }
    }

    /// Row-major `3 × n`: `div V`, `V·e₁`, `V·e₂`.
    pub fn local_rows(&self, l: &Vec3, e1: &Vec3, e2: &Vec3, out: &mut [f64]) {
        let n = self.len();
        assert_eq!(out.len(), 3 * n);
        let (y, g) = real_harmonics_with_gradient(self.degree, l);
        for k in 1..sph_count(self.degree) {
            let (deg, _) = sph_degree_order(k);
            let s = ((deg * (deg + 1)) as f64).sqrt();
            let c = l.cross(&g[k]);
            let grad = 2 * (k - 1);
            let curl = grad + 1;
            out[grad] = -s * y[k];
            out[n + grad] = g[k].dot(e1) / s;
            out[2 * n + grad] = g[k].dot(e2) / s;
            out[curl] = 0.0;
            out[n + curl] = c.dot(e1) / s;
            out[2 * n + curl] = c.dot(e2) / s;
        }
    }

    /// Field value and divergence at `l`.
    pub fn evaluate(&self, c: &[f64], l: &Vec3) -> (Vec3, f64) {
        let (e1, e2) = tangent_frame(l);
        let n = self.len();
        let mut rows = vec![0.0; 3 * n];
        self.local_rows(l, &e1, &e2, &mut rows);
        let dot = |r: usize| rows[r * n..(r + 1) * n].iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        (e1 * dot(1) + e2 * dot(2), dot(0))
    }
}
