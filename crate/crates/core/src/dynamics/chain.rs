//! Constraints that stationary members of a family impose on a common field.
//!
//! The maximally mixed state forces `div V = 0`. A stationary rank-one
//! correlation `T = ±ε ûûᵀ` then forces the quadratic form
//! `ûᵀ (V₁λ̂₂ᵀ + V₂λ̂₁ᵀ) û` to vanish; along the axes and face diagonals this
//! pins the whole symmetric part, which leaves only the zero field.

use serde::Serialize;

use crate::lstsq::RowAccumulator;
use crate::Vec3;

use super::basis::{LocalFrame, VelocityCoefficients, VelocityField};
use super::feasibility::PairGrid;

/// Maxima over the nodes of the defects of successive constraints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StageReport {
    /// `|div V|`.
    pub divergence: f64,
    /// `|V₁·λ̂₂|`, `|V₂·λ̂₁|`.
    pub orthogonality: f64,
    /// Components of `V₁`, `V₂` off the direction `λ̂₁ × λ̂₂`.
    pub collinearity: f64,
    /// Frobenius norm of `sym(V₁λ̂₂ᵀ + V₂λ̂₁ᵀ)`.
    pub quadratic_form: f64,
    /// `‖(V₁, V₂)‖`.
    pub magnitude: f64,
    pub nodes: usize,
}

pub fn chain_stages<F: VelocityField + ?Sized>(field: &F, nodes: &[(Vec3, Vec3)]) -> StageReport {
    let mut out = StageReport {
        divergence: 0.0,
        orthogonality: 0.0,
        collinearity: 0.0,
        quadratic_form: 0.0,
        magnitude: 0.0,
        nodes: nodes.len(),
    };
    for (l1, l2) in nodes {
        let (v1, v2) = field.velocity(l1, l2);
        let m = v1 * l2.transpose() + v2 * l1.transpose();
        let sym = (m + m.transpose()) * 0.5;
        out.divergence = out.divergence.max(field.divergence(l1, l2).abs());
        out.orthogonality = out.orthogonality.max(v1.dot(l2).abs()).max(v2.dot(l1).abs());
        let c = l1.cross(l2).normalize();
        let off = |v: &Vec3| (v - c * v.dot(&c)).norm();
        out.collinearity = out.collinearity.max(off(&v1)).max(off(&v2));
        out.quadratic_form = out.quadratic_form.max(sym.norm());
        out.magnitude = out.magnitude.max((v1.norm_squared() + v2.norm_squared()).sqrt());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainReport {
    pub degree: usize,
    pub unknowns: usize,
    /// Rank of the stationary-state constraints in the basis.
    pub constraint_rank: usize,
    pub unforced: StageReport,
    /// Stages after projecting the fit onto the constraint null space.
    pub forced: StageReport,
    pub forced_max_norm: f64,
    pub passes: bool,
}

fn directions() -> [Vec3; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        Vec3::x(),
        Vec3::y(),
        Vec3::z(),
        Vec3::new(s, s, 0.0),
        Vec3::new(s, 0.0, s),
        Vec3::new(0.0, s, s),
    ]
}

/// Projects `fit` onto the fields that satisfy the stationary constraints at
/// the grid nodes and reports the stages before and after. Passes when the
/// projected field has maximum norm at most `tol`.
pub fn analytic_chain_check(fit: &VelocityCoefficients, grid: &PairGrid, tol: f64) -> ChainReport {
    let basis = &fit.basis;
    let n = basis.len();
    let mut acc = RowAccumulator::new(n);
    let mut local = vec![0.0; 5 * n];
    let mut row = vec![0.0; n];
    for (l1, l2) in &grid.nodes {
        let f = LocalFrame::new(*l1, *l2);
        basis.local_rows(&f, &mut local);
        acc.push_row(&local[..n], 0.0);
        for u in directions() {
            let w = [
                u.dot(l2) * u.dot(&f.e11),
                u.dot(l2) * u.dot(&f.e12),
                u.dot(l1) * u.dot(&f.e21),
                u.dot(l1) * u.dot(&f.e22),
            ];
            for (k, r) in row.iter_mut().enumerate() {
                *r = (0..4).map(|c| w[c] * local[(c + 1) * n + k]).sum();
            }
            acc.push_row(&row, 0.0);
        }
    }
    let sol = acc.finish().solve(1e-10, true);
    let z = sol.row_space.expect("row space requested");
    let mut coeffs = fit.coeffs.clone();
    for j in 0..z.ncols() {
        let dot: f64 = (0..n).map(|i| z[(i, j)] * fit.coeffs[i]).sum();
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c -= dot * z[(i, j)];
        }
    }
    let forced_field = VelocityCoefficients {
        basis: basis.clone(),
        coeffs,
    };
    let unforced = chain_stages(fit, &grid.nodes);
    let forced = chain_stages(&forced_field, &grid.nodes);
    ChainReport {
        degree: basis.degree(),
        unknowns: n,
        constraint_rank: sol.rank,
        unforced,
        forced,
        forced_max_norm: forced.magnitude,
        passes: forced.magnitude <= tol,
    }
}
