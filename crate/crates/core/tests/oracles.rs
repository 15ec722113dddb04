use approx::assert_abs_diff_eq;
use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lhvdyn::bell::{single_qubit_lhv_probability, IntegratorConfig, TwoQubitLhvDensity};
use lhvdyn::dynamics::{
    control_nodes, control_states, headline_ensemble, residual_curve, single_qubit_control, KinkExclusion, PairGrid,
    SphereVelocityBasis, VelocityBasis,
};
use lhvdyn::nogo::{
    constraint_table, dim_projective_unitary, dim_separable_unitary, growth_ratio, iso_dim_bound, max_particles,
    max_particles_relaxed,
};
use lhvdyn::quantum::{bloch_derivatives, quantum_probability};
use lhvdyn::sphere::sample_sphere;
use lhvdyn::{BlochTwoQubit, MeasurementEvent, Outcome, Vec3};

#[test]
fn velocity_basis_sizes() {
    for (l, n) in [(1, 12), (2, 68), (4, 520), (6, 1932), (8, 5136)] {
        assert_eq!(VelocityBasis::count(l), n);
        assert_eq!(VelocityBasis::new(l).len(), n);
    }
    for l in 1..=6 {
        assert_eq!(SphereVelocityBasis::new(l).len(), 2 * ((l + 1) * (l + 1) - 1));
    }
}

#[test]
fn headline_particle_numbers() {
    assert_eq!(max_particles(2, 2), Ok(1));
    assert_eq!(max_particles(2, 20), Ok(6));
    assert_eq!(max_particles(3, 20), Ok(3));
    assert!(max_particles(1, 2).is_err());
    assert!(max_particles(2, 0).is_err());
}

#[test]
fn dimension_counts() {
    assert_eq!(dim_projective_unitary(2, 1), BigUint::from(3u32));
    assert_eq!(dim_projective_unitary(2, 3), BigUint::from(63u32));
    assert_eq!(dim_separable_unitary(2, 3), BigUint::from(9u32));
    assert_eq!(iso_dim_bound(6), BigUint::from(21u32));
    assert_eq!(dim_projective_unitary(2, 40), BigUint::from(2u32).pow(80) - 1u32);
}

#[test]
fn kernel_relaxation_only_helps() {
    let big = BigUint::from(1000u32);
    assert!(max_particles_relaxed(2, 20, &big).unwrap() >= 6);
    assert_eq!(max_particles_relaxed(2, 20, &BigUint::from(0u32)).unwrap(), 6);
}

#[test]
fn table_shape() {
    let rows = constraint_table(&[2, 3], &[2, 20], 8, &BigUint::from(0u32)).unwrap();
    assert_eq!(rows.len(), 32);
    assert!(constraint_table(&[], &[2], 8, &BigUint::from(0u32)).is_err());
}

#[test]
fn growth_ratio_values() {
    assert_abs_diff_eq!(growth_ratio(2, 1000, 64) / 1.661509e29, 1.0, epsilon = 1e-6);
    let far = growth_ratio(2, 1, 500);
    assert!(far.is_finite() && far > 1e280);
    assert!(growth_ratio(2, 1, 600).is_infinite());
}

#[test]
fn singlet_statistics() {
    let rho = BlochTwoQubit::singlet().density_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (n1, n2) = (sample_sphere(&mut rng), sample_sphere(&mut rng));
        let ev = MeasurementEvent::pair(n1, Outcome::Up, n2, Outcome::Up).unwrap();
        assert_abs_diff_eq!(quantum_probability(&rho, &ev).unwrap(), (1.0 - n1.dot(&n2)) / 4.0, epsilon = 1e-12);
    }
}

#[test]
fn single_qubit_model_reproduces_born_rule() {
    let cfg = IntegratorConfig::product(1e-7);
    let r = Vec3::new(0.3, -0.4, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let n = sample_sphere(&mut rng);
        for o in Outcome::BOTH {
            let p = single_qubit_lhv_probability(&r, &n, o, &cfg).unwrap().value;
            assert_abs_diff_eq!(p, 0.5 * (1.0 + o.sign() * r.dot(&n)), epsilon = 1e-7);
        }
    }
}

#[test]
fn stationary_family_has_zero_rates() {
    let a = Vec3::new(0.1, 0.05, -0.1);
    let t = lhvdyn::Mat3::new(0.1, 0.02, 0.0, 0.02, -0.2, 0.03, 0.0, 0.03, 0.05);
    let d = bloch_derivatives(&BlochTwoQubit::new(a, a, t), 1.3);
    assert_eq!(d.a_dot, Vec3::zeros());
    assert_eq!(d.t_dot, lhvdyn::Mat3::zeros());
}

#[test]
fn frozen_small_residual_curve() {
    let states = headline_ensemble(0.1, 8, 0.2, 2024).unwrap();
    let densities: Vec<_> = states.iter().map(|s| TwoQubitLhvDensity::new(*s).unwrap()).collect();
    let refs: Vec<_> = densities.iter().collect();
    let grid = PairGrid::random(400, 2025, &KinkExclusion::for_states(1e-3, &refs)).unwrap();
    let curve = residual_curve(&states, 1.0, &grid, &[1, 2, 3], 1e-10).unwrap();
    let frozen = [(12, 0.9531432542858), (68, 0.8926588638261), (216, 0.8479882145009)];
    for (c, (unknowns, residual)) in curve.iter().zip(frozen) {
        assert_eq!(c.unknowns, unknowns);
        assert_eq!(c.rank, unknowns);
        assert_abs_diff_eq!(c.relative_residual, residual, epsilon = 1e-9);
        assert_abs_diff_eq!(c.pointwise_bound, 0.6288571897132, epsilon = 1e-9);
    }
}

#[test]
fn control_is_solved_exactly() {
    let rs = control_states(4, 9);
    let nodes = control_nodes(300, 10, &rs, 1e-3).unwrap();
    for l in [1, 2, 3] {
        let r = single_qubit_control(1.0, &rs, &nodes, l, 1e-10).unwrap();
        assert!(r.relative_residual < 1e-12, "L={l}: {}", r.relative_residual);
    }
}
