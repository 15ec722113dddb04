//! Single-qubit control: precession `r(t) = R_z(ωt) r` is carried by the rigid
//! rotation `V = ω ẑ × λ̂`, so the fit must reach zero residual.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bell::single_qubit_density;
use crate::lstsq::RowAccumulator;
use crate::scalar::step;
use crate::sphere::{sample_sphere, tangent_frame};
use crate::Vec3;

use super::basis::SphereVelocityBasis;
use super::feasibility::FeasibilityReport;
use super::DynamicsError;

const FOUR_PI: f64 = 4.0 * PI;

/// `r = 0` followed by `count` vectors uniform in the ball of radius 0.9.
pub fn control_states(count: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rs = vec![Vec3::zeros()];
    for _ in 0..count {
        let radius = 0.9 * rng.random::<f64>().cbrt();
        rs.push(sample_sphere(&mut rng) * radius);
    }
    rs
}

/// Random nodes at angular distance at least `radius` from every kink circle `r·λ̂ = 0`.
pub fn control_nodes(
    count: usize,
    seed: u64,
    rs: &[Vec3],
    radius: f64,
) -> Result<Vec<Vec3>, DynamicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = radius.sin();
    let normals: Vec<_> = rs.iter().filter(|r| r.norm() > 1e-12).map(|r| r.normalize()).collect();
    let mut nodes = Vec::with_capacity(count);
    let limit = 100 * count.max(1);
    for _ in 0..limit {
        if nodes.len() == count {
            return Ok(nodes);
        }
        let l = sample_sphere(&mut rng);
        if normals.iter().all(|n| n.dot(&l).abs() >= s) {
            nodes.push(l);
        }
    }
    if nodes.len() == count {
        Ok(nodes)
    } else {
        Err(DynamicsError::SamplingExhausted {
            attempts: limit,
            accepted: nodes.len(),
        })
    }
}

/// `∂_t p_r(λ̂)` at `t = 0` for `ṙ = ω ẑ × r`.
pub fn rotating_density_rate(r: &Vec3, omega: f64, lambda: &Vec3) -> f64 {
    let r_dot = Vec3::z().cross(r) * omega;
    4.0 * step(r.dot(lambda)) * r_dot.dot(lambda) / FOUR_PI
}

fn density_gradient(r: &Vec3, lambda: &Vec3) -> Vec3 {
    (r - lambda * r.dot(lambda)) * (4.0 * step(r.dot(lambda)) / FOUR_PI)
}

/// Least-squares fit of one field to all precessing densities at `nodes`,
/// with single-sphere vector harmonics up to degree `degree`.
pub fn single_qubit_control(
    omega: f64,
    rs: &[Vec3],
    nodes: &[Vec3],
    degree: usize,
    rank_tol: f64,
) -> Result<FeasibilityReport, DynamicsError> {
    if rs.is_empty() {
        return Err(DynamicsError::NoStates);
    }
    if nodes.is_empty() {
        return Err(DynamicsError::EmptyGrid);
    }
    let basis = SphereVelocityBasis::new(degree);
    let n = basis.len();
    let mut acc = RowAccumulator::new(n);
    let mut local = vec![0.0; 3 * n];
    let mut offset = 0.0;
    for l in nodes {
        let (e1, e2) = tangent_frame(l);
        basis.local_rows(l, &e1, &e2, &mut local);
        let mut wb = DMatrix::<f64>::zeros(rs.len(), 4);
        for (i, r) in rs.iter().enumerate() {
            let p = single_qubit_density(r, l)?;
            let g = density_gradient(r, l);
            let w = [p, g.dot(&e1), g.dot(&e2)];
            let b = -rotating_density_rate(r, omega, l);
            let row: Vec<f64> = (0..n).map(|k| (0..3).map(|c| w[c] * local[c * n + k]).sum()).collect();
            acc.push_row(&row, b);
            for c in 0..3 {
                wb[(i, c)] = w[c];
            }
            wb[(i, 3)] = b;
        }
        if rs.len() > 3 {
            offset += wb.qr().r()[(3, 3)].powi(2);
        }
    }
    let rows = acc.rows();
    let system = acc.finish();
    let sol = system.solve(rank_tol, false);
    let rhs = system.rhs_norm_sq;
    let rel = |v: f64| if rhs == 0.0 { 0.0 } else { (v / rhs).sqrt() };
    Ok(FeasibilityReport {
        degree,
        unknowns: n,
        states: rs.len(),
        nodes: nodes.len(),
        rows,
        absolute_residual: sol.residual_sq.sqrt(),
        relative_residual: rel(sol.residual_sq),
        pointwise_bound: rel(offset),
        rank: sol.rank,
        condition: sol.condition,
        rank_deficient: sol.rank < n,
    })
}

/// Largest `|∂_t p + div(p V)|` of the exact field `V = ω ẑ × λ̂` over states and nodes.
pub fn control_analytic_residual(omega: f64, rs: &[Vec3], nodes: &[Vec3]) -> Result<f64, DynamicsError> {
    let mut max = 0.0f64;
    for l in nodes {
        let v = Vec3::z().cross(l) * omega;
        for r in rs {
            single_qubit_density(r, l)?;
            let res = rotating_density_rate(r, omega, l) + density_gradient(r, l).dot(&v);
            max = max.max(res.abs());
        }
    }
    Ok(max)
}
