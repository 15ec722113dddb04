//! Bell's projection rule on the sphere and the explicit separable hidden-variable
//! densities for one and two qubits, with Monte Carlo and product-quadrature
//! evaluation of their measurement statistics.

use std::f64::consts::PI;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::quantum::{
    density_from_bloch, quantum_probability, BlochTwoQubit, MeasurementEvent, Outcome,
    QuantumError, SingularData,
};
use crate::scalar::{ramp, step};
use crate::sphere::{sample_sphere, SphereError, SphereQuadrature};
use crate::Vec3;

const UNIT_TOL: f64 = 1e-12;
const VALIDITY_TOL: f64 = 1e-12;
const FOUR_PI: f64 = 4.0 * PI;
const FOUR_PI_SQ: f64 = 16.0 * PI * PI;
const MC_CHUNK: usize = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BellError {
    #[error("hidden variable is not a unit vector (norm {0})")]
    NotUnit(f64),
    #[error("Bloch vector norm {0} exceeds 1")]
    BlochNorm(f64),
    #[error("state outside the construction domain: ‖a‖ + ‖b‖ + ΣS = {0} > 1")]
    OutsideDomain(f64),
    #[error("event has {0} parties, expected 2")]
    Parties(usize),
    #[error("integrator error {error:e} exceeds tolerance {tolerance:e} (estimate {estimate})")]
    ToleranceNotMet {
        estimate: f64,
        error: f64,
        tolerance: f64,
    },
    #[error("invalid integrator configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Sphere(#[from] SphereError),
}

fn check_unit(v: &Vec3) -> Result<(), BellError> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        Err(BellError::NotUnit(n))
    } else {
        Ok(())
    }
}

/// A point `(λ̂₁, λ̂₂)` of the two-particle hidden-variable space `S² × S²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HiddenPoint {
    pub l1: Vec3,
    pub l2: Vec3,
}

impl HiddenPoint {
    pub fn new(l1: Vec3, l2: Vec3) -> Result<Self, BellError> {
        check_unit(&l1)?;
        check_unit(&l2)?;
        Ok(Self { l1, l2 })
    }
}

/// `q(o | n̂, λ̂)`: `Θ(n̂·λ̂)` for up, its complement for down.
#[inline]
pub fn bell_rule(n: &Vec3, lambda: &Vec3, outcome: Outcome) -> f64 {
    step(outcome.sign() * n.dot(lambda))
}

/// `4π p_r(λ̂) = 4R(r·λ̂) + 1 − ‖r‖`.
pub fn single_qubit_density(r: &Vec3, lambda: &Vec3) -> Result<f64, BellError> {
    let norm = r.norm();
    if norm > 1.0 + VALIDITY_TOL {
        return Err(BellError::BlochNorm(norm));
    }
    Ok((4.0 * ramp(r.dot(lambda)) + 1.0 - norm) / FOUR_PI)
}

/// `‖a‖ + ‖b‖ + Σ_j S_j`.
pub fn validity_sum(s: &BlochTwoQubit) -> f64 {
    s.a.norm() + s.b.norm() + SingularData::of(&s.t).nuclear_norm()
}

/// Whether the closed-form separable density applies to `s`.
pub fn validity(s: &BlochTwoQubit) -> bool {
    validity_sum(s) <= 1.0 + VALIDITY_TOL
}

/// Value and tangential gradients of a two-particle density at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityJet {
    pub value: f64,
    pub grad1: Vec3,
    pub grad2: Vec3,
}

/// The separable density
/// `(4π)² p = 1 − a − b − ΣS + 4R(a·λ̂₁) + 4R(b·λ̂₂) + 8 Σ S_j R((û_j·λ̂₁)(v̂_j·λ̂₂))`.
#[derive(Clone, Debug)]
pub struct TwoQubitLhvDensity {
    state: BlochTwoQubit,
    svd: SingularData,
    constant: f64,
}

impl TwoQubitLhvDensity {
    pub fn new(state: BlochTwoQubit) -> Result<Self, BellError> {
        let svd = SingularData::of(&state.t);
        let sum = state.a.norm() + state.b.norm() + svd.nuclear_norm();
        if sum > 1.0 + VALIDITY_TOL {
            return Err(BellError::OutsideDomain(sum));
        }
        Ok(Self {
            state,
            svd,
            constant: 1.0 - sum,
        })
    }

    pub fn state(&self) -> &BlochTwoQubit {
        &self.state
    }

    pub fn singular_data(&self) -> &SingularData {
        &self.svd
    }

    /// Density value; inputs are assumed to be unit vectors.
    pub fn eval(&self, l1: &Vec3, l2: &Vec3) -> f64 {
        let mut v = self.constant + 4.0 * ramp(self.state.a.dot(l1)) + 4.0 * ramp(self.state.b.dot(l2));
        for j in 0..3 {
            let s = self.svd.values[j];
            if s != 0.0 {
                v += 8.0 * s * ramp(self.svd.u[j].dot(l1) * self.svd.v[j].dot(l2));
            }
        }
        v / FOUR_PI_SQ
    }

    pub fn eval_point(&self, p: &HiddenPoint) -> f64 {
        self.eval(&p.l1, &p.l2)
    }

    /// Value and tangential gradients. On a kink the step takes the value ½.
    pub fn jet(&self, l1: &Vec3, l2: &Vec3) -> DensityJet {
        let a = &self.state.a;
        let b = &self.state.b;
        let xa = a.dot(l1);
        let xb = b.dot(l2);
        let mut value = self.constant + 4.0 * ramp(xa) + 4.0 * ramp(xb);
        let mut g1 = a * (4.0 * step(xa));
        let mut g2 = b * (4.0 * step(xb));
        for j in 0..3 {
            let s = self.svd.values[j];
            if s == 0.0 {
                continue;
            }
            let x = self.svd.u[j].dot(l1);
            let y = self.svd.v[j].dot(l2);
            value += 8.0 * s * ramp(x * y);
            let th = 8.0 * s * step(x * y);
            g1 += self.svd.u[j] * (th * y);
            g2 += self.svd.v[j] * (th * x);
        }
        let g1 = g1 - l1 * l1.dot(&g1);
        let g2 = g2 - l2 * l2.dot(&g2);
        DensityJet {
            value: value / FOUR_PI_SQ,
            grad1: g1 / FOUR_PI_SQ,
            grad2: g2 / FOUR_PI_SQ,
        }
    }

    /// Normals of the great circles on which the density is not smooth, for
    /// sphere 1 and sphere 2.
    pub fn kink_normals(&self) -> (Vec<Vec3>, Vec<Vec3>) {
        let mut n1 = Vec::new();
        let mut n2 = Vec::new();
        if self.state.a.norm() > 1e-12 {
            n1.push(self.state.a.normalize());
        }
        if self.state.b.norm() > 1e-12 {
            n2.push(self.state.b.normalize());
        }
        for j in 0..3 {
            if self.svd.values[j] > 1e-12 {
                n1.push(self.svd.u[j]);
                n2.push(self.svd.v[j]);
            }
        }
        (n1, n2)
    }

    /// Smallest angular distance (radians) from the point to a kink circle.
    pub fn kink_distance(&self, l1: &Vec3, l2: &Vec3) -> f64 {
        let (n1, n2) = self.kink_normals();
        let d1 = n1.iter().map(|n| n.dot(l1).abs().min(1.0).asin());
        let d2 = n2.iter().map(|n| n.dot(l2).abs().min(1.0).asin());
        d1.chain(d2).fold(f64::INFINITY, f64::min)
    }
}

/// Integration method for hidden-variable averages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Integrator {
    /// Uniform samples on `S² × S²`, seeded per chunk, with the standard error as the error estimate.
    MonteCarlo { samples: usize, seed: u64 },
    /// Product grids doubled until two successive levels agree to the tolerance.
    ProductQuadrature {
        n_theta: usize,
        n_phi: usize,
        max_refinements: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub method: Integrator,
    pub tolerance: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Integrator::MonteCarlo {
                samples: 1_000_000,
                seed: 0,
            },
            tolerance: 5e-3,
        }
    }
}

impl IntegratorConfig {
    pub fn monte_carlo(samples: usize, seed: u64, tolerance: f64) -> Self {
        Self {
            method: Integrator::MonteCarlo { samples, seed },
            tolerance,
        }
    }

    pub fn product(tolerance: f64) -> Self {
        Self {
            method: Integrator::ProductQuadrature {
                n_theta: 32,
                n_phi: 64,
                max_refinements: 6,
            },
            tolerance,
        }
    }
}

/// Integral estimate with an error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

fn two_party(event: &MeasurementEvent) -> Result<[(Vec3, Outcome); 2], BellError> {
    match event.parties.as_slice() {
        [p1, p2] => Ok([*p1, *p2]),
        other => Err(BellError::Parties(other.len())),
    }
}

fn finish(estimates: Vec<Estimate>, tolerance: f64) -> Result<Vec<Estimate>, BellError> {
    if let Some(bad) = estimates.iter().find(|e| !(e.error <= tolerance)) {
        return Err(BellError::ToleranceNotMet {
            estimate: bad.value,
            error: bad.error,
            tolerance,
        });
    }
    Ok(estimates)
}

/// `∫∫ p(λ̂₁, λ̂₂) q(o₁|n̂₁, λ̂₁) q(o₂|n̂₂, λ̂₂)`.
pub fn lhv_probability(
    density: &TwoQubitLhvDensity,
    event: &MeasurementEvent,
    config: &IntegratorConfig,
) -> Result<Estimate, BellError> {
    Ok(lhv_probabilities(density, std::slice::from_ref(event), config)?[0])
}

/// Several events against one density. Monte Carlo shares one sample set across
/// all events.
pub fn lhv_probabilities(
    density: &TwoQubitLhvDensity,
    events: &[MeasurementEvent],
    config: &IntegratorConfig,
) -> Result<Vec<Estimate>, BellError> {
    let events = events.iter().map(two_party).collect::<Result<Vec<_>, _>>()?;
    let estimates = match config.method {
        Integrator::MonteCarlo { samples, seed } => monte_carlo(density, &events, samples, seed)?,
        Integrator::ProductQuadrature {
            n_theta,
            n_phi,
            max_refinements,
        } => events
            .iter()
            .map(|ev| {
                refine(n_theta, n_phi, max_refinements, config.tolerance, |nt, np| {
                    factorised_probability(density, ev, nt, np)
                })
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    finish(estimates, config.tolerance)
}

fn monte_carlo(
    density: &TwoQubitLhvDensity,
    events: &[[(Vec3, Outcome); 2]],
    samples: usize,
    seed: u64,
) -> Result<Vec<Estimate>, BellError> {
    if samples < 2 {
        return Err(BellError::Config("Monte Carlo needs at least 2 samples".into()));
    }
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<Vec<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut acc = vec![(0.0, 0.0); events.len()];
            for _ in 0..n {
                let l1 = sample_sphere(&mut rng);
                let l2 = sample_sphere(&mut rng);
                let p = FOUR_PI_SQ * density.eval(&l1, &l2);
                for (a, [(n1, o1), (n2, o2)]) in acc.iter_mut().zip(events) {
                    let f = p * bell_rule(n1, &l1, *o1) * bell_rule(n2, &l2, *o2);
                    a.0 += f;
                    a.1 += f * f;
                }
            }
            acc
        })
        .collect();
    let n = samples as f64;
    Ok((0..events.len())
        .map(|k| {
            let (s, s2) = partial
                .iter()
                .fold((0.0, 0.0), |(s, s2), c| (s + c[k].0, s2 + c[k].1));
            let mean = s / n;
            let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
            Estimate {
                value: mean,
                error: (var / n).sqrt(),
            }
        })
        .collect())
}

/// Doubles the product grid until two successive levels agree.
fn refine<F>(
    n_theta: usize,
    n_phi: usize,
    max_refinements: usize,
    tolerance: f64,
    mut f: F,
) -> Result<Estimate, BellError>
where
    F: FnMut(usize, usize) -> Result<f64, SphereError>,
{
    // Remaining kinks lie across the grid, so one small difference can be a
    // coincidence.
    let mut prev = f(n_theta, n_phi)?;
    let mut prev_diff = f64::INFINITY;
    let mut last = Estimate {
        value: prev,
        error: f64::INFINITY,
    };
    for level in 1..=max_refinements {
        let cur = f(n_theta << level, n_phi << level)?;
        let diff = (cur - prev).abs();
        last = Estimate {
            value: cur,
            error: 2.0 * diff.max(prev_diff),
        };
        if last.error <= tolerance {
            break;
        }
        prev = cur;
        prev_diff = diff;
    }
    Ok(last)
}

/// Uses `R(xy) = R(x)R(y) + R(−x)R(−y)` to split the double integral into
/// products of single-sphere integrals, each over the hemisphere selected by
/// the measurement rule.
fn factorised_probability(
    density: &TwoQubitLhvDensity,
    event: &[(Vec3, Outcome); 2],
    n_theta: usize,
    n_phi: usize,
) -> Result<f64, SphereError> {
    let [(n1, o1), (n2, o2)] = *event;
    let s = density.state();
    let svd = density.singular_data();
    let h1 = SphereQuadrature::hemisphere(n_theta, n_phi, &(n1 * o1.sign()))?;
    let h2 = SphereQuadrature::hemisphere(n_theta, n_phi, &(n2 * o2.sign()))?;
    let side1 = |g: &dyn Fn(&Vec3) -> f64| h1.integrate(g);
    let side2 = |g: &dyn Fn(&Vec3) -> f64| h2.integrate(g);
    let q1 = side1(&|_| 1.0);
    let q2 = side2(&|_| 1.0);
    let a1 = side1(&|l| ramp(s.a.dot(l)));
    let b2 = side2(&|l| ramp(s.b.dot(l)));
    let mut total = density.constant * q1 * q2 + 4.0 * a1 * q2 + 4.0 * q1 * b2;
    for j in 0..3 {
        let sj = svd.values[j];
        if sj == 0.0 {
            continue;
        }
        let (u, v) = (svd.u[j], svd.v[j]);
        let up = side1(&|l| ramp(u.dot(l)));
        let um = side1(&|l| ramp(-u.dot(l)));
        let vp = side2(&|l| ramp(v.dot(l)));
        let vm = side2(&|l| ramp(-v.dot(l)));
        total += 8.0 * sj * (up * vp + um * vm);
    }
    Ok(total / FOUR_PI_SQ)
}

/// `⟨q(o|n̂, λ̂)⟩` under the single-qubit density `p_r`.
pub fn single_qubit_lhv_probability(
    r: &Vec3,
    n: &Vec3,
    outcome: Outcome,
    config: &IntegratorConfig,
) -> Result<Estimate, BellError> {
    check_unit(n)?;
    single_qubit_density(r, n)?;
    let est = match config.method {
        Integrator::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(BellError::Config("Monte Carlo needs at least 2 samples".into()));
            }
            let chunks = samples.div_ceil(MC_CHUNK);
            let partial: Vec<(f64, f64)> = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(c as u64);
                    let mut acc = (0.0, 0.0);
                    for _ in 0..MC_CHUNK.min(samples - c * MC_CHUNK) {
                        let l = sample_sphere(&mut rng);
                        let f = FOUR_PI
                            * single_qubit_density(r, &l).unwrap_or(0.0)
                            * bell_rule(n, &l, outcome);
                        acc.0 += f;
                        acc.1 += f * f;
                    }
                    acc
                })
                .collect();
            let (s, s2) = partial.iter().fold((0.0, 0.0), |a, c| (a.0 + c.0, a.1 + c.1));
            let m = samples as f64;
            let mean = s / m;
            let var = ((s2 / m - mean * mean) * m / (m - 1.0)).max(0.0);
            Estimate {
                value: mean,
                error: (var / m).sqrt(),
            }
        }
        Integrator::ProductQuadrature {
            n_theta,
            n_phi,
            max_refinements,
        } => refine(n_theta, n_phi, max_refinements, config.tolerance, |nt, np| {
            let q = SphereQuadrature::hemisphere(nt, np, &(n * outcome.sign()))?;
            Ok(q.integrate(|l| single_qubit_density(r, l).unwrap_or(0.0)))
        })?,
    };
    Ok(finish(vec![est], config.tolerance)?[0])
}

/// One row of a static-equivalence table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbabilityRow {
    pub setting_1: String,
    pub setting_2: String,
    pub outcome_1: String,
    pub outcome_2: String,
    pub p_lhv: f64,
    pub p_quantum: f64,
    pub abs_err: f64,
}

fn format_setting(n: &Vec3) -> String {
    format!("{} {} {}", n.x, n.y, n.z)
}

/// LHV and quantum probabilities for all four outcomes of every setting pair.
pub fn probability_table(
    state: &BlochTwoQubit,
    settings: &[(Vec3, Vec3)],
    config: &IntegratorConfig,
) -> Result<Vec<ProbabilityRow>, BellError> {
    let density = TwoQubitLhvDensity::new(*state)?;
    let rho = density_from_bloch(state);
    let mut events = Vec::with_capacity(settings.len() * 4);
    for (n1, n2) in settings {
        for o1 in Outcome::BOTH {
            for o2 in Outcome::BOTH {
                events.push(MeasurementEvent::pair(*n1, o1, *n2, o2)?);
            }
        }
    }
    let estimates = lhv_probabilities(&density, &events, config)?;
    events
        .iter()
        .zip(estimates)
        .map(|(ev, est)| {
            let q = quantum_probability(&rho, ev)?;
            let [(n1, o1), (n2, o2)] = two_party(ev)?;
            Ok(ProbabilityRow {
                setting_1: format_setting(&n1),
                setting_2: format_setting(&n2),
                outcome_1: o1.to_string(),
                outcome_2: o2.to_string(),
                p_lhv: est.value,
                p_quantum: q,
                abs_err: (est.value - q).abs(),
            })
        })
        .collect()
}

pub fn write_probability_csv<W: Write>(writer: W, rows: &[ProbabilityRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::sample_noisy_ball;
    use crate::Mat3;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn rule_examples() {
        let n = Vec3::new(0.6, 0.0, 0.8);
        assert_eq!(bell_rule(&n, &n, Outcome::Up), 1.0);
        assert_eq!(bell_rule(&n, &-n, Outcome::Up), 0.0);
        assert_eq!(bell_rule(&Vec3::z(), &Vec3::x(), Outcome::Up), 0.5);
        let mut r = rng(0);
        for _ in 0..100 {
            let (a, b) = (sample_sphere(&mut r), sample_sphere(&mut r));
            assert_eq!(bell_rule(&a, &b, Outcome::Up) + bell_rule(&a, &b, Outcome::Down), 1.0);
        }
    }

    #[test]
    fn single_qubit_density_examples() {
        let mut r = rng(1);
        for _ in 0..10 {
            let l = sample_sphere(&mut r);
            assert_abs_diff_eq!(single_qubit_density(&Vec3::zeros(), &l).unwrap(), 1.0 / FOUR_PI, epsilon = 1e-16);
        }
        assert!(matches!(
            single_qubit_density(&Vec3::new(1.0, 1.0, 0.0), &Vec3::z()),
            Err(BellError::BlochNorm(_))
        ));
        let q = SphereQuadrature::baseline();
        for _ in 0..10 {
            let bloch = sample_sphere(&mut r) * r.random::<f64>();
            let total = q.integrate(|l| single_qubit_density(&bloch, l).unwrap());
            // the kink limits product quadrature; exact value is 1
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn single_qubit_statistics_match_quantum() {
        let mut r = rng(2);
        let cfg = IntegratorConfig::product(1e-4);
        for _ in 0..5 {
            let bloch = sample_sphere(&mut r) * r.random::<f64>();
            let n = sample_sphere(&mut r);
            let est = single_qubit_lhv_probability(&bloch, &n, Outcome::Up, &cfg).unwrap();
            assert_abs_diff_eq!(est.value, 0.5 * (1.0 + bloch.dot(&n)), epsilon = 1e-3);
        }
    }

    #[test]
    fn maximally_mixed_density_is_constant() {
        let d = TwoQubitLhvDensity::new(BlochTwoQubit::maximally_mixed()).unwrap();
        let mut r = rng(3);
        for _ in 0..10 {
            let (a, b) = (sample_sphere(&mut r), sample_sphere(&mut r));
            assert_abs_diff_eq!(d.eval(&a, &b), 1.0 / FOUR_PI_SQ, epsilon = 1e-18);
        }
        let ev = MeasurementEvent::pair(Vec3::x(), Outcome::Up, Vec3::z(), Outcome::Down).unwrap();
        let exact = lhv_probability(&d, &ev, &IntegratorConfig::product(1e-6)).unwrap();
        assert_abs_diff_eq!(exact.value, 0.25, epsilon = 1e-12);
        let mc = lhv_probability(&d, &ev, &IntegratorConfig::monte_carlo(10_000, 1, 1e-2)).unwrap();
        assert!((mc.value - 0.25).abs() < 5.0 * mc.error);
    }

    #[test]
    fn rank_one_correlation_formula() {
        let eps = 0.1;
        let u = Vec3::new(1.0, 2.0, -2.0) / 3.0;
        let d = TwoQubitLhvDensity::new(BlochTwoQubit::rank_one_correlation(&u, eps)).unwrap();
        let mut r = rng(4);
        for _ in 0..100 {
            let (a, b) = (sample_sphere(&mut r), sample_sphere(&mut r));
            let expected = 1.0 - eps + 8.0 * eps * ramp(u.dot(&a) * u.dot(&b));
            assert_abs_diff_eq!(FOUR_PI_SQ * d.eval(&a, &b), expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn validity_examples() {
        assert!(validity(&BlochTwoQubit::maximally_mixed()));
        assert!(!validity(&BlochTwoQubit::singlet()));
        assert_abs_diff_eq!(validity_sum(&BlochTwoQubit::singlet()), 3.0, epsilon = 1e-12);
        assert!(matches!(
            TwoQubitLhvDensity::new(BlochTwoQubit::singlet()),
            Err(BellError::OutsideDomain(_))
        ));
        let mut r = rng(5);
        for _ in 0..10_000 {
            assert!(validity(&sample_noisy_ball(0.2, &mut r).unwrap()));
        }
    }

    #[test]
    fn double_quadrature_normalises() {
        let mut r = rng(6);
        let q = SphereQuadrature::product(24, 48).unwrap();
        for _ in 0..3 {
            let s = sample_noisy_ball(0.3, &mut r).unwrap();
            let d = TwoQubitLhvDensity::new(s).unwrap();
            let total: f64 = q
                .nodes
                .iter()
                .zip(&q.weights)
                .map(|(l1, w1)| w1 * q.integrate(|l2| d.eval(l1, l2)))
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 5e-3);
        }
    }

    #[test]
    fn integrators_agree_with_quantum() {
        let mut r = rng(7);
        let s = sample_noisy_ball(0.3, &mut r).unwrap();
        let settings: Vec<(Vec3, Vec3)> = (0..3).map(|_| (sample_sphere(&mut r), sample_sphere(&mut r))).collect();
        for cfg in [IntegratorConfig::default(), IntegratorConfig::product(2e-4)] {
            for row in probability_table(&s, &settings, &cfg).unwrap() {
                assert!(row.abs_err < 5e-3, "{row:?}");
            }
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let d = TwoQubitLhvDensity::new(sample_noisy_ball(0.3, &mut rng(8)).unwrap()).unwrap();
        let ev = MeasurementEvent::pair(Vec3::x(), Outcome::Up, Vec3::y(), Outcome::Up).unwrap();
        let cfg = IntegratorConfig::monte_carlo(200_000, 42, 1.0);
        let a = lhv_probability(&d, &ev, &cfg).unwrap();
        let b = lhv_probability(&d, &ev, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tolerance_not_met_is_reported() {
        let d = TwoQubitLhvDensity::new(sample_noisy_ball(0.3, &mut rng(9)).unwrap()).unwrap();
        let ev = MeasurementEvent::pair(Vec3::x(), Outcome::Up, Vec3::y(), Outcome::Up).unwrap();
        let cfg = IntegratorConfig::monte_carlo(100, 0, 1e-6);
        assert!(matches!(lhv_probability(&d, &ev, &cfg), Err(BellError::ToleranceNotMet { .. })));
        let one = MeasurementEvent::single(Vec3::x(), Outcome::Up).unwrap();
        assert_eq!(lhv_probability(&d, &one, &cfg).unwrap_err(), BellError::Parties(1));
    }

    #[test]
    fn jet_matches_finite_differences() {
        let mut r = rng(10);
        let s = sample_noisy_ball(0.3, &mut r).unwrap();
        let d = TwoQubitLhvDensity::new(s).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        while checked < 20 {
            let (l1, l2) = (sample_sphere(&mut r), sample_sphere(&mut r));
            if d.kink_distance(&l1, &l2) < 1e-3 {
                continue;
            }
            checked += 1;
            let jet = d.jet(&l1, &l2);
            assert_abs_diff_eq!(jet.value, d.eval(&l1, &l2), epsilon = 1e-15);
            let (e1, e2) = crate::sphere::tangent_frame(&l1);
            for e in [e1, e2] {
                let fd = (d.eval(&(l1 + e * h).normalize(), &l2) - d.eval(&(l1 - e * h).normalize(), &l2)) / (2.0 * h);
                assert_abs_diff_eq!(jet.grad1.dot(&e), fd, epsilon = 1e-7);
            }
            let (e1, e2) = crate::sphere::tangent_frame(&l2);
            for e in [e1, e2] {
                let fd = (d.eval(&l1, &(l2 + e * h).normalize()) - d.eval(&l1, &(l2 - e * h).normalize())) / (2.0 * h);
                assert_abs_diff_eq!(jet.grad2.dot(&e), fd, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn kink_distances() {
        let s = BlochTwoQubit::new(Vec3::new(0.0, 0.0, 0.2), Vec3::zeros(), Mat3::zeros());
        let d = TwoQubitLhvDensity::new(s).unwrap();
        assert_abs_diff_eq!(d.kink_distance(&Vec3::x(), &Vec3::z()), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.kink_distance(&Vec3::z(), &Vec3::x()), PI / 2.0, epsilon = 1e-15);
        let mixed = TwoQubitLhvDensity::new(BlochTwoQubit::maximally_mixed()).unwrap();
        assert_eq!(mixed.kink_distance(&Vec3::x(), &Vec3::x()), f64::INFINITY);
    }

    #[test]
    fn csv_table_columns() {
        let rows = probability_table(
            &BlochTwoQubit::maximally_mixed(),
            &[(Vec3::x(), Vec3::z())],
            &IntegratorConfig::product(1e-6),
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        let mut buf = Vec::new();
        write_probability_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("setting_1,setting_2,outcome_1,outcome_2,p_lhv,p_quantum,abs_err\n"));
        assert!(text.contains("1 0 0,0 0 1,up,down,"));
    }
}
