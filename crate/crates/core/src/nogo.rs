//! Exact dimension counting for hidden-variable dynamics of `N` qudits.
//!
//! A group `G` acting faithfully by isometries on a manifold of dimension `n`
//! has `dim G ≤ n(n+1)/2`. For the projective unitary group of `N` qudits of
//! dimension `D` and a hidden-variable space of dimension `N d` this reads
//! `D^{2N} − 1 ≤ N d (N d + 1)/2`.

use std::io::Write;

use num_bigint::BigUint;
use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NogoError {
    #[error("qudit dimension must be at least 2, got {0}")]
    QuditDimension(u32),
    #[error("hidden-variable dimension must be at least 1, got {0}")]
    HiddenDimension(u64),
    #[error("particle count must be at least 1")]
    Particles,
    #[error("empty {0} list")]
    EmptyList(&'static str),
}

/// `dim PU(ℂ^{D^N}) = D^{2N} − 1`.
pub fn dim_projective_unitary(d_qudit: u32, n: u32) -> BigUint {
    BigUint::from(d_qudit).pow(2 * n) - 1u32
}

/// Dimension of the local (product) projective unitaries, `N(D² − 1)`.
pub fn dim_separable_unitary(d_qudit: u32, n: u32) -> BigUint {
    BigUint::from(n) * (BigUint::from(d_qudit).pow(2) - 1u32)
}

/// `n(n+1)/2`, the largest dimension of an isometry group of an `n`-manifold.
pub fn iso_dim_bound(dim: u64) -> BigUint {
    let n = BigUint::from(dim);
    (&n * (&n + 1u32)) >> 1
}

/// Whether `D^{2N} − 1 − k ≤ Nd(Nd+1)/2` for a kernel of dimension `k`.
pub fn is_feasible(d_qudit: u32, d: u64, n: u32, kernel: &BigUint) -> bool {
    let lhs = dim_projective_unitary(d_qudit, n);
    let lhs = if &lhs > kernel { lhs - kernel } else { BigUint::zero() };
    lhs <= iso_dim_bound(d * u64::from(n))
}

fn check(d_qudit: u32, d: u64) -> Result<(), NogoError> {
    if d_qudit < 2 {
        return Err(NogoError::QuditDimension(d_qudit));
    }
    if d == 0 {
        return Err(NogoError::HiddenDimension(d));
    }
    Ok(())
}

/// Largest `N` passing the constraint, 0 if `N = 1` already fails.
pub fn max_particles(d_qudit: u32, d: u64) -> Result<u32, NogoError> {
    max_particles_relaxed(d_qudit, d, &BigUint::zero())
}

/// [`max_particles`] with the group dimension reduced by a kernel of dimension `k`.
///
/// Once `N` fails, `N + 1` fails too: the left side grows by at least `D² ≥ 4`
/// while the right side grows by at most 4, so the scan stops at the first failure.
pub fn max_particles_relaxed(d_qudit: u32, d: u64, kernel: &BigUint) -> Result<u32, NogoError> {
    check(d_qudit, d)?;
    let mut n = 0;
    while is_feasible(d_qudit, d, n + 1, kernel) {
        n += 1;
    }
    Ok(n)
}

/// One row of the constraint table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConstraintRow {
    #[serde(rename = "D")]
    pub d_qudit: u32,
    pub d: u64,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "B_QM", serialize_with = "as_decimal")]
    pub b_qm: BigUint,
    #[serde(rename = "B_LHV", serialize_with = "as_decimal")]
    pub b_lhv: BigUint,
    pub feasible: bool,
}

fn as_decimal<S: serde::Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_str_radix(10))
}

/// All rows for `D ∈ ds`, `d ∈ dims`, `N = 1..=n_max`, with `B_QM` reduced by `kernel`.
pub fn constraint_table(
    ds: &[u32],
    dims: &[u64],
    n_max: u32,
    kernel: &BigUint,
) -> Result<Vec<ConstraintRow>, NogoError> {
    if ds.is_empty() {
        return Err(NogoError::EmptyList("qudit dimension"));
    }
    if dims.is_empty() {
        return Err(NogoError::EmptyList("hidden-variable dimension"));
    }
    if n_max == 0 {
        return Err(NogoError::Particles);
    }
    let mut rows = Vec::new();
    for &dq in ds {
        for &d in dims {
            check(dq, d)?;
            for n in 1..=n_max {
                let full = dim_projective_unitary(dq, n);
                let b_qm = if &full > kernel { full - kernel } else { BigUint::zero() };
                let b_lhv = iso_dim_bound(d * u64::from(n));
                rows.push(ConstraintRow {
                    d_qudit: dq,
                    d,
                    n,
                    feasible: b_qm <= b_lhv,
                    b_qm,
                    b_lhv,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_constraint_csv<W: Write>(writer: W, rows: &[ConstraintRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `B_QM / B_LHV` as a float, for growth checks; infinite beyond the `f64` range.
pub fn growth_ratio(d_qudit: u32, d: u64, n: u32) -> f64 {
    let num = dim_projective_unitary(d_qudit, n);
    let den = iso_dim_bound(d * u64::from(n));
    if den.is_zero() {
        return f64::INFINITY;
    }
    (log2(&num) - log2(&den)).exp2()
}

fn log2(v: &BigUint) -> f64 {
    let shift = v.bits().saturating_sub(64);
    let top: BigUint = v >> shift;
    (top.to_u64_digits()[0] as f64).log2() + shift as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_examples() {
        assert_eq!(dim_projective_unitary(2, 1), BigUint::from(3u32));
        assert_eq!(dim_projective_unitary(2, 2), BigUint::from(15u32));
        assert_eq!(dim_projective_unitary(3, 3), BigUint::from(728u32));
        assert_eq!(dim_separable_unitary(2, 1), BigUint::from(3u32));
        assert_eq!(dim_separable_unitary(2, 6), BigUint::from(18u32));
        assert_eq!(dim_separable_unitary(3, 3), BigUint::from(24u32));
        assert_eq!(iso_dim_bound(2), BigUint::from(3u32));
        assert_eq!(iso_dim_bound(0), BigUint::zero());
        assert_eq!(iso_dim_bound(120), BigUint::from(7260u32));
        // far beyond u128
        assert_eq!(dim_projective_unitary(2, 100).bits(), 200);
    }

    #[test]
    fn critical_particle_numbers() {
        assert_eq!(max_particles(2, 2), Ok(1));
        assert_eq!(max_particles(2, 20), Ok(6));
        assert_eq!(max_particles(3, 20), Ok(3));
        assert_eq!(max_particles(2, 1), Ok(0));
        assert_eq!(max_particles(1, 2), Err(NogoError::QuditDimension(1)));
        assert_eq!(max_particles(2, 0), Err(NogoError::HiddenDimension(0)));
        // 15 − k ≤ 10 needs a kernel of dimension 5
        assert_eq!(max_particles_relaxed(2, 2, &BigUint::from(5u32)), Ok(2));
        assert_eq!(max_particles_relaxed(2, 2, &BigUint::from(4u32)), Ok(1));
    }

    #[test]
    fn table_rows() {
        let rows = constraint_table(&[2], &[2, 20], 7, &BigUint::zero()).unwrap();
        let find = |d: u64, n: u32| rows.iter().find(|r| r.d == d && r.n == n).unwrap();
        let r = find(2, 2);
        assert_eq!((r.b_qm.clone(), r.b_lhv.clone(), r.feasible), (15u32.into(), 10u32.into(), false));
        let r = find(20, 7);
        assert_eq!((r.b_qm.clone(), r.b_lhv.clone(), r.feasible), (16383u32.into(), 9870u32.into(), false));
        let r = find(20, 6);
        assert_eq!((r.b_qm.clone(), r.b_lhv.clone(), r.feasible), (4095u32.into(), 7260u32.into(), true));

        let mut out = Vec::new();
        write_constraint_csv(&mut out, &rows[..1]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "D,d,N,B_QM,B_LHV,feasible\n2,2,1,3,3,true\n");
        assert_eq!(constraint_table(&[], &[2], 3, &BigUint::zero()), Err(NogoError::EmptyList("qudit dimension")));
    }

    #[test]
    fn growth_ratio_diverges() {
        assert!((growth_ratio(2, 2, 2) - 1.5).abs() < 1e-12);
        // 2^128 / 2048032000
        assert!((growth_ratio(2, 1000, 64) / 1.661_509e29 - 1.0).abs() < 1e-6);
        let r = growth_ratio(2, 1000, 500);
        assert!(r > 1e280 && r.is_finite());
        assert_eq!(growth_ratio(2, 1, 600), f64::INFINITY);
    }
}
