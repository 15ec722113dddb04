use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bell::{HiddenPoint, TwoQubitLhvDensity};
use crate::lstsq::{RowAccumulator, TriangularSystem};
use crate::quantum::{sample_noisy_ball, BlochTwoQubit};
use crate::sphere::{sample_sphere, SphereQuadrature};
use crate::Vec3;

use super::basis::{LocalFrame, VelocityBasis, VelocityCoefficients, VelocityField};
use super::rates::{density_surface_gradient, StateDynamics};
use super::DynamicsError;

const LOCAL: usize = 5;
const CHUNK: usize = 256;

/// Excludes node pairs near the kink circles of a family of densities, and
/// pairs whose hidden vectors are nearly parallel or orthogonal.
#[derive(Clone, Debug, PartialEq)]
pub struct KinkExclusion {
    pub radius: f64,
    pub normals: (Vec<Vec3>, Vec<Vec3>),
}

impl KinkExclusion {
    pub fn new(radius: f64) -> Self {
        Self {
            radius,
            normals: (Vec::new(), Vec::new()),
        }
    }

    /// Collects the kink normals of every density, including those at `t = ±2dt`
    /// only through the radius: kinks move by `O(dt)`.
    pub fn for_states(radius: f64, densities: &[&TwoQubitLhvDensity]) -> Self {
        let mut ex = Self::new(radius);
        for d in densities {
            let (n1, n2) = d.kink_normals();
            ex.normals.0.extend(n1);
            ex.normals.1.extend(n2);
        }
        ex
    }

    pub fn admits(&self, l1: &Vec3, l2: &Vec3) -> bool {
        let s = self.radius.sin();
        let c = self.radius.cos();
        let overlap = l1.dot(l2).abs();
        overlap >= s
            && overlap <= c
            && self.normals.0.iter().all(|n| n.dot(l1).abs() >= s)
            && self.normals.1.iter().all(|n| n.dot(l2).abs() >= s)
    }
}

/// Node pairs in `S² × S²` with equal weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PairGrid {
    pub nodes: Vec<(Vec3, Vec3)>,
}

impl PairGrid {
    /// `count` uniformly random admitted pairs from a seeded stream.
    pub fn random(count: usize, seed: u64, exclusion: &KinkExclusion) -> Result<Self, DynamicsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = Vec::with_capacity(count);
        let limit = 100 * count.max(1);
        let mut attempts = 0;
        while nodes.len() < count {
            if attempts == limit {
                return Err(DynamicsError::SamplingExhausted {
                    attempts,
                    accepted: nodes.len(),
                });
            }
            attempts += 1;
            let (l1, l2) = (sample_sphere(&mut rng), sample_sphere(&mut rng));
            if exclusion.admits(&l1, &l2) {
                nodes.push((l1, l2));
            }
        }
        Ok(Self { nodes })
    }

    /// Admitted pairs of a product quadrature with itself.
    pub fn product(quad: &SphereQuadrature, exclusion: &KinkExclusion) -> Result<Self, DynamicsError> {
        let nodes: Vec<_> = quad
            .nodes
            .iter()
            .flat_map(|a| quad.nodes.iter().map(move |b| (*a, *b)))
            .filter(|(a, b)| exclusion.admits(a, b))
            .collect();
        if nodes.is_empty() {
            return Err(DynamicsError::EmptyGrid);
        }
        Ok(Self { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Continuity constraints of all states at one node, reduced to at most five
/// rows in the local unknowns `[div V, V₁·e₁₁, V₁·e₁₂, V₂·e₂₁, V₂·e₂₂]`.
///
/// The state rows `w_s · Φ = −∂_t p_s` are stacked into `[W | b]` and factored;
/// the part of `b` outside the column space of `W` is the `offset`, a residual
/// no field can remove.
#[derive(Clone, Debug)]
pub struct NodeCompression {
    pub frame: LocalFrame,
    pub r: Vec<[f64; LOCAL]>,
    pub rhs: Vec<f64>,
    pub offset: f64,
    pub rhs_norm_sq: f64,
}

impl NodeCompression {
    pub fn new(dynamics: &[StateDynamics], l1: &Vec3, l2: &Vec3) -> Result<Self, DynamicsError> {
        let frame = LocalFrame::new(*l1, *l2);
        let (w, b) = local_system(dynamics, &frame)?;
        let s = b.len();
        let mut m = DMatrix::<f64>::zeros(s, LOCAL + 1);
        for i in 0..s {
            for j in 0..LOCAL {
                m[(i, j)] = w[i][j];
            }
            m[(i, LOCAL)] = b[i];
        }
        let rhs_norm_sq = b.iter().map(|v| v * v).sum();
        let r = m.qr().r();
        let k = s.min(LOCAL);
        let rows = (0..k)
            .map(|i| std::array::from_fn(|j| r[(i, j)]))
            .collect();
        let rhs = (0..k).map(|i| r[(i, LOCAL)]).collect();
        let offset = if s > LOCAL { r[(LOCAL, LOCAL)].powi(2) } else { 0.0 };
        Ok(Self {
            frame,
            r: rows,
            rhs,
            offset,
            rhs_norm_sq,
        })
    }

    /// Compresses every node of `grid`, in parallel and in grid order.
    pub fn for_grid(
        states: &[BlochTwoQubit],
        omega: f64,
        grid: &PairGrid,
    ) -> Result<Vec<Self>, DynamicsError> {
        if states.is_empty() {
            return Err(DynamicsError::NoStates);
        }
        if grid.is_empty() {
            return Err(DynamicsError::EmptyGrid);
        }
        let dynamics = states
            .iter()
            .map(|s| StateDynamics::new(*s, omega))
            .collect::<Result<Vec<_>, _>>()?;
        grid.nodes
            .par_iter()
            .map(|(l1, l2)| Self::new(&dynamics, l1, l2))
            .collect()
    }
}

fn local_system(
    dynamics: &[StateDynamics],
    frame: &LocalFrame,
) -> Result<(Vec<[f64; LOCAL]>, Vec<f64>), DynamicsError> {
    let point = HiddenPoint::new(frame.l1, frame.l2)?;
    let mut w = Vec::with_capacity(dynamics.len());
    let mut b = Vec::with_capacity(dynamics.len());
    for d in dynamics {
        let p = d.density().eval(&frame.l1, &frame.l2);
        let (g1, g2) = density_surface_gradient(d.density(), &point)?;
        let [a, bb, c, e] = frame.to_local(&g1, &g2);
        w.push([p, a, bb, c, e]);
        b.push(-d.rate(&frame.l1, &frame.l2));
    }
    Ok((w, b))
}

/// Raw continuity rows, one per state, in the coefficients of `basis`.
pub fn continuity_rows(
    dynamics: &[StateDynamics],
    l1: &Vec3,
    l2: &Vec3,
    basis: &VelocityBasis,
) -> Result<Vec<(Vec<f64>, f64)>, DynamicsError> {
    let frame = LocalFrame::new(*l1, *l2);
    let (w, b) = local_system(dynamics, &frame)?;
    let n = basis.len();
    let mut local = vec![0.0; LOCAL * n];
    basis.local_rows(&frame, &mut local);
    Ok(w.iter()
        .zip(b)
        .map(|(ws, bs)| (combine(ws, &local, n), bs))
        .collect())
}

fn combine(weights: &[f64; LOCAL], local: &[f64], n: usize) -> Vec<f64> {
    let mut row = vec![0.0; n];
    for (c, wc) in weights.iter().enumerate() {
        if *wc != 0.0 {
            for (r, l) in row.iter_mut().zip(&local[c * n..(c + 1) * n]) {
                *r += wc * l;
            }
        }
    }
    row
}

/// `∂_t p + div(p V)` evaluated directly.
pub fn continuity_residual<F: VelocityField + ?Sized>(
    field: &F,
    dynamics: &StateDynamics,
    l1: &Vec3,
    l2: &Vec3,
) -> Result<f64, DynamicsError> {
    let point = HiddenPoint::new(*l1, *l2)?;
    let p = dynamics.density().eval(l1, l2);
    let (g1, g2) = density_surface_gradient(dynamics.density(), &point)?;
    let (v1, v2) = field.velocity(l1, l2);
    Ok(dynamics.rate(l1, l2) + p * field.divergence(l1, l2) + g1.dot(&v1) + g2.dot(&v2))
}

/// Least-squares system of one basis degree.
#[derive(Clone, Debug)]
pub struct FeasibilitySystem {
    pub basis: VelocityBasis,
    pub system: TriangularSystem,
    /// Residual removed during node compression.
    pub offset: f64,
    /// `‖b‖²` over all state rows.
    pub rhs_norm_sq: f64,
    pub states: usize,
    pub nodes: usize,
    pub rows: usize,
}

/// Assembles the system for degree `degree` from per-node compressions.
pub fn assemble_feasibility(
    compressions: &[NodeCompression],
    states: usize,
    degree: usize,
) -> Result<FeasibilitySystem, DynamicsError> {
    if compressions.is_empty() {
        return Err(DynamicsError::EmptyGrid);
    }
    let basis = VelocityBasis::new(degree);
    let n = basis.len();
    let mut acc = RowAccumulator::new(n);
    for chunk in compressions.chunks(CHUNK) {
        let rows: Vec<Vec<(Vec<f64>, f64)>> = chunk
            .par_iter()
            .map(|c| {
                let mut local = vec![0.0; LOCAL * n];
                basis.local_rows(&c.frame, &mut local);
                c.r.iter()
                    .zip(&c.rhs)
                    .map(|(w, b)| (combine(w, &local, n), *b))
                    .collect()
            })
            .collect();
        for (coeffs, rhs) in rows.iter().flatten() {
            acc.push_row(coeffs, *rhs);
        }
    }
    Ok(FeasibilitySystem {
        offset: compressions.iter().map(|c| c.offset).sum(),
        rhs_norm_sq: compressions.iter().map(|c| c.rhs_norm_sq).sum(),
        states,
        nodes: compressions.len(),
        rows: states * compressions.len(),
        system: acc.finish(),
        basis,
    })
}

/// Outcome of a feasibility fit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub degree: usize,
    pub unknowns: usize,
    pub states: usize,
    pub nodes: usize,
    pub rows: usize,
    pub absolute_residual: f64,
    pub relative_residual: f64,
    /// Relative residual that no field can go below at these nodes.
    pub pointwise_bound: f64,
    pub rank: usize,
    pub condition: f64,
    pub rank_deficient: bool,
}

/// Minimum-norm least-squares velocity field.
pub fn fit_velocity_field(
    system: &FeasibilitySystem,
    rank_tol: f64,
) -> (VelocityCoefficients, FeasibilityReport) {
    let sol = system.system.solve(rank_tol, false);
    let unknowns = system.basis.len();
    let abs_sq = sol.residual_sq + system.offset;
    let rel = |v: f64| {
        if system.rhs_norm_sq == 0.0 {
            0.0
        } else {
            (v / system.rhs_norm_sq).sqrt()
        }
    };
    let report = FeasibilityReport {
        degree: system.basis.degree(),
        unknowns,
        states: system.states,
        nodes: system.nodes,
        rows: system.rows,
        absolute_residual: abs_sq.sqrt(),
        relative_residual: rel(abs_sq),
        pointwise_bound: rel(system.offset),
        rank: sol.rank,
        condition: sol.condition,
        rank_deficient: sol.rank < unknowns,
    };
    (
        VelocityCoefficients {
            basis: system.basis.clone(),
            coeffs: sol.x,
        },
        report,
    )
}

/// Six rank-one correlations `±ε ûûᵀ` along the axes, the maximally mixed
/// state and `count` random states of visibility `v`.
pub fn headline_ensemble(
    epsilon: f64,
    count: usize,
    v: f64,
    seed: u64,
) -> Result<Vec<BlochTwoQubit>, DynamicsError> {
    let mut states = Vec::with_capacity(count + 7);
    for axis in [Vec3::x(), Vec3::y(), Vec3::z()] {
        for sign in [1.0, -1.0] {
            states.push(BlochTwoQubit::rank_one_correlation(&axis, sign * epsilon));
        }
    }
    states.push(BlochTwoQubit::maximally_mixed());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let s = sample_noisy_ball(v, &mut rng)
            .map_err(|e| DynamicsError::Bell(crate::bell::BellError::Quantum(e)))?;
        states.push(s);
    }
    Ok(states)
}

/// Fits at each degree, compressing the nodes once.
pub fn residual_curve(
    states: &[BlochTwoQubit],
    omega: f64,
    grid: &PairGrid,
    degrees: &[usize],
    rank_tol: f64,
) -> Result<Vec<FeasibilityReport>, DynamicsError> {
    let compressions = NodeCompression::for_grid(states, omega, grid)?;
    degrees
        .iter()
        .map(|&l| {
            let system = assemble_feasibility(&compressions, states.len(), l)?;
            Ok(fit_velocity_field(&system, rank_tol).1)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_grid(count: usize, states: &[BlochTwoQubit]) -> PairGrid {
        let densities: Vec<_> = states.iter().map(|s| TwoQubitLhvDensity::new(*s).unwrap()).collect();
        let refs: Vec<_> = densities.iter().collect();
        PairGrid::random(count, 7, &KinkExclusion::for_states(1e-3, &refs)).unwrap()
    }

    #[test]
    fn compressed_rows_reproduce_raw_residual() {
        let states = headline_ensemble(0.1, 4, 0.2, 3).unwrap();
        let grid = random_grid(40, &states);
        let dynamics: Vec<_> = states.iter().map(|s| StateDynamics::new(*s, 1.0).unwrap()).collect();
        let comps = NodeCompression::for_grid(&states, 1.0, &grid).unwrap();
        let system = assemble_feasibility(&comps, states.len(), 1).unwrap();
        let (field, report) = fit_velocity_field(&system, 1e-12);
        assert_eq!(report.unknowns, 12);
        assert_eq!(report.rows, 40 * states.len());
        let mut res = 0.0;
        let mut norm = 0.0;
        for (l1, l2) in &grid.nodes {
            for (row, b) in continuity_rows(&dynamics, l1, l2, &field.basis).unwrap() {
                let ax: f64 = row.iter().zip(&field.coeffs).map(|(a, x)| a * x).sum();
                res += (ax - b).powi(2);
                norm += b * b;
            }
            for d in &dynamics {
                let direct = continuity_residual(&field, d, l1, l2).unwrap();
                let via_rows: f64 = {
                    let rows = continuity_rows(std::slice::from_ref(d), l1, l2, &field.basis).unwrap();
                    let (row, b) = &rows[0];
                    row.iter().zip(&field.coeffs).map(|(a, x)| a * x).sum::<f64>() - b
                };
                assert_abs_diff_eq!(direct, via_rows, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(norm, system.rhs_norm_sq, epsilon = 1e-12 * norm);
        assert_abs_diff_eq!(res.sqrt(), report.absolute_residual, epsilon = 1e-9);
        assert!(report.pointwise_bound <= report.relative_residual + 1e-12);
    }

    #[test]
    fn single_moving_state_is_feasible_pointwise() {
        // one state: the local system is a single row, so no pointwise obstruction
        let states = headline_ensemble(0.1, 1, 0.2, 11).unwrap()[7..].to_vec();
        let grid = random_grid(30, &states);
        let report = &residual_curve(&states, 1.0, &grid, &[1], 1e-12).unwrap()[0];
        assert_eq!(report.pointwise_bound, 0.0);
    }

    #[test]
    fn exclusion_and_errors() {
        let ex = KinkExclusion::new(0.1);
        assert!(!ex.admits(&Vec3::x(), &Vec3::x()));
        assert!(!ex.admits(&Vec3::x(), &Vec3::y()));
        assert!(ex.admits(&Vec3::x(), &Vec3::new(1.0, 1.0, 0.0).normalize()));
        let tight = KinkExclusion::new(std::f64::consts::FRAC_PI_2);
        assert!(matches!(
            PairGrid::random(5, 0, &tight),
            Err(DynamicsError::SamplingExhausted { attempts: 500, accepted: 0 })
        ));
        let grid = PairGrid::random(5, 0, &ex).unwrap();
        assert!(matches!(NodeCompression::for_grid(&[], 1.0, &grid), Err(DynamicsError::NoStates)));
        assert!(matches!(assemble_feasibility(&[], 1, 1), Err(DynamicsError::EmptyGrid)));
    }
}
