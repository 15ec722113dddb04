use crate::bell::{BellError, HiddenPoint, TwoQubitLhvDensity};
use crate::quantum::{evolve_bloch, BlochTwoQubit};
use crate::sphere::tangent_frame;
use crate::Vec3;

use super::DynamicsError;

/// Default time step of the central difference.
pub const DEFAULT_DT: f64 = 1e-5;

/// Points closer than this to a kink circle have no gradient.
const KINK_FLAG: f64 = 1e-9;

/// `∂_t p` with the step used and an error estimate from the doubled step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeDerivative {
    pub value: f64,
    pub step: f64,
    pub error: f64,
}

/// A state with its density at `t = 0, ±dt, ±2dt` under the Heisenberg evolution.
#[derive(Clone, Debug)]
pub struct StateDynamics {
    pub state: BlochTwoQubit,
    pub omega: f64,
    pub dt: f64,
    density: TwoQubitLhvDensity,
    // t = −2dt, −dt, dt, 2dt
    shifted: [TwoQubitLhvDensity; 4],
}

impl StateDynamics {
    pub fn new(state: BlochTwoQubit, omega: f64) -> Result<Self, DynamicsError> {
        Self::with_step(state, omega, DEFAULT_DT)
    }

    pub fn with_step(state: BlochTwoQubit, omega: f64, dt: f64) -> Result<Self, DynamicsError> {
        let at = |t: f64| {
            let s = if t == 0.0 { state } else { evolve_bloch(&state, omega, t) };
            TwoQubitLhvDensity::new(s).map_err(|e| match e {
                BellError::OutsideDomain(sum) => DynamicsError::LeavesDomain { t, sum },
                other => other.into(),
            })
        };
        Ok(Self {
            state,
            omega,
            dt,
            density: at(0.0)?,
            shifted: [at(-2.0 * dt)?, at(-dt)?, at(dt)?, at(2.0 * dt)?],
        })
    }

    pub fn density(&self) -> &TwoQubitLhvDensity {
        &self.density
    }

    /// Central difference at step `dt`.
    pub fn rate(&self, l1: &Vec3, l2: &Vec3) -> f64 {
        (self.shifted[2].eval(l1, l2) - self.shifted[1].eval(l1, l2)) / (2.0 * self.dt)
    }

    /// Central difference with an error estimate `|D(dt) − D(2dt)| / 3`.
    pub fn time_derivative(&self, l1: &Vec3, l2: &Vec3) -> TimeDerivative {
        let d1 = self.rate(l1, l2);
        let d2 = (self.shifted[3].eval(l1, l2) - self.shifted[0].eval(l1, l2)) / (4.0 * self.dt);
        TimeDerivative {
            value: d1,
            step: self.dt,
            error: (d1 - d2).abs() / 3.0,
        }
    }
}

/// `∂_t p` at `t = 0` for the Heisenberg evolution of `s`.
pub fn density_time_derivative(
    s: &BlochTwoQubit,
    omega: f64,
    point: &HiddenPoint,
) -> Result<TimeDerivative, DynamicsError> {
    Ok(StateDynamics::new(*s, omega)?.time_derivative(&point.l1, &point.l2))
}

/// Tangential gradients `(∇₁p, ∇₂p)`; refused on a kink circle.
pub fn density_surface_gradient(
    density: &TwoQubitLhvDensity,
    point: &HiddenPoint,
) -> Result<(Vec3, Vec3), DynamicsError> {
    let dist = density.kink_distance(&point.l1, &point.l2);
    if dist < KINK_FLAG {
        return Err(DynamicsError::OnKink(dist));
    }
    let jet = density.jet(&point.l1, &point.l2);
    Ok((jet.grad1, jet.grad2))
}

/// Two-sided finite-difference tangential gradients in local tangent frames.
pub fn fd_surface_gradient(density: &TwoQubitLhvDensity, l1: &Vec3, l2: &Vec3, h: f64) -> (Vec3, Vec3) {
    let diff = |f: &dyn Fn(&Vec3) -> f64, n: &Vec3| {
        let (e1, e2) = tangent_frame(n);
        let d = |e: Vec3| (f(&(n + e * h).normalize()) - f(&(n - e * h).normalize())) / (2.0 * h);
        e1 * d(e1) + e2 * d(e2)
    };
    (
        diff(&|x| density.eval(x, l2), l1),
        diff(&|x| density.eval(l1, x), l2),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::sample_noisy_ball;
    use crate::sphere::sample_sphere;
    use crate::Mat3;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn stationary_states_have_zero_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Vec3::new(0.05, -0.1, 0.02);
        let t = Mat3::new(0.1, 0.02, 0.0, 0.02, -0.05, 0.03, 0.0, 0.03, 0.04);
        let dynamic = StateDynamics::new(BlochTwoQubit::new(a, a, t), 1.0).unwrap();
        let mixed = StateDynamics::new(BlochTwoQubit::maximally_mixed(), 1.0).unwrap();
        for _ in 0..200 {
            let (l1, l2) = (sample_sphere(&mut rng), sample_sphere(&mut rng));
            assert!(dynamic.rate(&l1, &l2).abs() < 1e-8);
            assert_eq!(mixed.rate(&l1, &l2), 0.0);
        }
    }

    #[test]
    fn generic_states_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_noisy_ball(0.2, &mut rng).unwrap();
        let coarse = StateDynamics::with_step(s, 1.0, 1e-4).unwrap();
        let fine = StateDynamics::new(s, 1.0).unwrap();
        let mut max = 0.0f64;
        for _ in 0..200 {
            let (l1, l2) = (sample_sphere(&mut rng), sample_sphere(&mut rng));
            if fine.density().kink_distance(&l1, &l2) < 1e-2 {
                continue;
            }
            let d = fine.time_derivative(&l1, &l2);
            assert!(d.error < 1e-8);
            assert_abs_diff_eq!(d.value, coarse.rate(&l1, &l2), epsilon = 1e-8);
            max = max.max(d.value.abs());
        }
        assert!(max > 1e-4, "max rate {max}");
    }

    #[test]
    fn boundary_states_are_rejected() {
        // a and b antiparallel on the boundary: exchange rotates them into T
        let s = BlochTwoQubit::new(Vec3::z() * 0.5, -Vec3::z() * 0.5, Mat3::zeros());
        assert!(matches!(
            StateDynamics::new(s, 1.0),
            Err(DynamicsError::LeavesDomain { .. })
        ));
    }

    #[test]
    fn gradient_examples() {
        let mixed = TwoQubitLhvDensity::new(BlochTwoQubit::maximally_mixed()).unwrap();
        let p = HiddenPoint::new(Vec3::x(), Vec3::y()).unwrap();
        assert_eq!(density_surface_gradient(&mixed, &p).unwrap(), (Vec3::zeros(), Vec3::zeros()));

        // T = ε ẑẑᵀ: (4π)² ∇_j p = 8ε Θ(z₁z₂) z_{¬j} P_j ẑ
        let eps = 0.1;
        let d = TwoQubitLhvDensity::new(BlochTwoQubit::rank_one_correlation(&Vec3::z(), eps)).unwrap();
        let l1 = Vec3::new(0.8, 0.0, 0.6);
        let l2 = Vec3::new(0.6, 0.0, 0.8);
        let (g1, g2) = density_surface_gradient(&d, &HiddenPoint::new(l1, l2).unwrap()).unwrap();
        let c = 8.0 * eps / (16.0 * PI * PI);
        let proj = |l: &Vec3| Vec3::z() - l * l.z;
        assert_abs_diff_eq!((g1 - proj(&l1) * (c * l2.z)).norm(), 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!((g2 - proj(&l2) * (c * l1.z)).norm(), 0.0, epsilon = 1e-10);

        let on_kink = HiddenPoint::new(Vec3::x(), l2).unwrap();
        assert!(matches!(density_surface_gradient(&d, &on_kink), Err(DynamicsError::OnKink(_))));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = TwoQubitLhvDensity::new(sample_noisy_ball(0.2, &mut rng).unwrap()).unwrap();
        let mut n = 0;
        while n < 50 {
            let (l1, l2) = (sample_sphere(&mut rng), sample_sphere(&mut rng));
            if d.kink_distance(&l1, &l2) < 1e-3 {
                continue;
            }
            n += 1;
            let (g1, g2) = density_surface_gradient(&d, &HiddenPoint::new(l1, l2).unwrap()).unwrap();
            let (f1, f2) = fd_surface_gradient(&d, &l1, &l2, 1e-6);
            assert_abs_diff_eq!((g1 - f1).norm(), 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!((g2 - f2).norm(), 0.0, epsilon = 1e-6);
        }
    }
}
