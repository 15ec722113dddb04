//! Dense linear least squares with rank detection.
//!
//! Rows are streamed into an accumulator that keeps only the triangular factor
//! of `[A | b]`, compressing with a blocked Householder QR whenever the pending
//! block fills up. The final triangular system is solved with a column-pivoted
//! QR, giving the numerical rank and the minimum-norm solution. All
//! factorizations run sequentially, so results are bitwise reproducible.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::householder;
use faer::linalg::qr::{col_pivoting, no_pivoting};
use faer::{Conj, Mat, MatRef, Par};

/// Streams rows of `[A | b]` and keeps their R factor.
#[derive(Clone, Debug)]
pub struct RowAccumulator {
    n: usize,
    r: Option<Mat<f64>>,
    pending: Vec<f64>,
    pending_rows: usize,
    block_rows: usize,
    rows: usize,
    rhs_norm_sq: f64,
}

impl RowAccumulator {
    pub fn new(n: usize) -> Self {
        Self::with_block_rows(n, (4 * (n + 1)).max(1024))
    }

    pub fn with_block_rows(n: usize, block_rows: usize) -> Self {
        Self {
            n,
            r: None,
            pending: Vec::new(),
            pending_rows: 0,
            block_rows: block_rows.max(1),
            rows: 0,
            rhs_norm_sq: 0.0,
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `‖b‖²` over all rows pushed so far.
    pub fn rhs_norm_sq(&self) -> f64 {
        self.rhs_norm_sq
    }

    pub fn push_row(&mut self, coeffs: &[f64], rhs: f64) {
        assert_eq!(coeffs.len(), self.n, "row length");
        self.pending.extend_from_slice(coeffs);
        self.pending.push(rhs);
        self.pending_rows += 1;
        self.rows += 1;
        self.rhs_norm_sq += rhs * rhs;
        if self.pending_rows >= self.block_rows {
            self.compress();
        }
    }

    /// Adds a constant to `‖b‖²` for residual parts already eliminated by the caller.
    pub fn add_rhs_norm_sq(&mut self, value: f64) {
        self.rhs_norm_sq += value;
    }

    fn compress(&mut self) {
        if self.pending_rows == 0 {
            return;
        }
        let w = self.n + 1;
        let top = self.r.as_ref().map_or(0, |r| r.nrows());
        let m = top + self.pending_rows;
        let mut a = Mat::<f64>::zeros(m, w);
        if let Some(r) = &self.r {
            a.as_mut().submatrix_mut(0, 0, top, w).copy_from(r.as_ref());
        }
        for i in 0..self.pending_rows {
            for j in 0..w {
                a[(top + i, j)] = self.pending[i * w + j];
            }
        }
        self.pending.clear();
        self.pending_rows = 0;
        qr_factor(a.as_mut());
        let k = m.min(w);
        self.r = Some(Mat::from_fn(k, w, |i, j| if i <= j { a[(i, j)] } else { 0.0 }));
    }

    /// Final triangular system `R x ≈ z` with the unexplained residual `ρ²`.
    pub fn finish(mut self) -> TriangularSystem {
        self.compress();
        let n = self.n;
        let mut r = Mat::<f64>::zeros(n, n);
        let mut z = vec![0.0; n];
        let mut rho_sq = 0.0;
        if let Some(full) = &self.r {
            let k = full.nrows();
            for i in 0..k.min(n) {
                for j in i..n {
                    r[(i, j)] = full[(i, j)];
                }
                z[i] = full[(i, n)];
            }
            if k > n {
                rho_sq = full[(n, n)].powi(2);
            }
        }
        TriangularSystem {
            r,
            z,
            rho_sq,
            rhs_norm_sq: self.rhs_norm_sq,
            rows: self.rows,
        }
    }
}

fn qr_factor(mut a: faer::MatMut<'_, f64>) -> Mat<f64> {
    let (m, n) = (a.nrows(), a.ncols());
    let bs = no_pivoting::factor::recommended_blocksize::<f64>(m, n);
    let mut coeff = Mat::<f64>::zeros(bs, m.min(n));
    let par = Par::Seq;
    let mut buf = MemBuffer::new(no_pivoting::factor::qr_in_place_scratch::<f64>(
        m,
        n,
        bs,
        par,
        Default::default(),
    ));
    no_pivoting::factor::qr_in_place(
        a.as_mut(),
        coeff.as_mut(),
        par,
        MemStack::new(&mut buf),
        Default::default(),
    );
    coeff
}

fn apply_qt(basis: MatRef<'_, f64>, coeff: MatRef<'_, f64>, rhs: faer::MatMut<'_, f64>) {
    let mut buf = MemBuffer::new(
        householder::apply_block_householder_sequence_transpose_on_the_left_in_place_scratch::<f64>(
            basis.nrows(),
            coeff.nrows(),
            rhs.ncols(),
        ),
    );
    householder::apply_block_householder_sequence_transpose_on_the_left_in_place_with_conj(
        basis,
        coeff,
        Conj::No,
        rhs,
        Par::Seq,
        MemStack::new(&mut buf),
    );
}

fn apply_q(basis: MatRef<'_, f64>, coeff: MatRef<'_, f64>, rhs: faer::MatMut<'_, f64>) {
    let mut buf = MemBuffer::new(
        householder::apply_block_householder_sequence_on_the_left_in_place_scratch::<f64>(
            basis.nrows(),
            coeff.nrows(),
            rhs.ncols(),
        ),
    );
    householder::apply_block_householder_sequence_on_the_left_in_place_with_conj(
        basis,
        coeff,
        Conj::No,
        rhs,
        Par::Seq,
        MemStack::new(&mut buf),
    );
}

/// `min ‖R x − z‖² + ρ²` with `R` upper triangular.
#[derive(Clone, Debug)]
pub struct TriangularSystem {
    pub r: Mat<f64>,
    pub z: Vec<f64>,
    pub rho_sq: f64,
    pub rhs_norm_sq: f64,
    pub rows: usize,
}

/// Minimum-norm least-squares solution.
#[derive(Clone, Debug)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    pub rank: usize,
    /// `‖A x − b‖²`.
    pub residual_sq: f64,
    /// `‖b‖²`.
    pub rhs_norm_sq: f64,
    /// `|R₀₀| / |R_{r−1,r−1}|` of the pivoted factor; infinite at rank 0.
    pub condition: f64,
    /// Orthonormal basis of the row space of `A`, `n × rank`, when requested.
    pub row_space: Option<Mat<f64>>,
}

impl LstsqSolution {
    pub fn relative_residual(&self) -> f64 {
        if self.rhs_norm_sq == 0.0 {
            0.0
        } else {
            (self.residual_sq / self.rhs_norm_sq).sqrt()
        }
    }
}

impl TriangularSystem {
    pub fn n(&self) -> usize {
        self.z.len()
    }

    /// Solves with relative rank tolerance `rank_tol` on the pivoted diagonal.
    ///
    /// The pivoted factorization only fixes the column order and the rank; the
    /// leading `rank` pivoted columns are then refactored without pivoting, so
    /// exactly vanishing trailing columns never enter a Householder reflector.
    pub fn solve(&self, rank_tol: f64, want_row_space: bool) -> LstsqSolution {
        let n = self.n();
        let (fwd, bwd, rank, condition) = self.pivot_and_rank(rank_tol);
        let z_norm_sq: f64 = self.z.iter().map(|v| v * v).sum();
        if rank == 0 {
            return LstsqSolution {
                x: vec![0.0; n],
                rank,
                residual_sq: z_norm_sq + self.rho_sq,
                rhs_norm_sq: self.rhs_norm_sq,
                condition,
                row_space: want_row_space.then(|| Mat::zeros(n, 0)),
            };
        }

        // R P = [A₁ | A₂], A₁ = Q₁ R₁₁
        let mut a1 = Mat::<f64>::from_fn(n, rank, |i, j| self.r[(i, fwd[j])]);
        let c1 = qr_factor(a1.as_mut());
        let mut rest = Mat::<f64>::from_fn(n, n - rank + 1, |i, j| {
            if j < n - rank {
                self.r[(i, fwd[rank + j])]
            } else {
                self.z[i]
            }
        });
        apply_qt(a1.as_ref(), c1.as_ref(), rest.as_mut());
        let y = |i: usize| rest[(i, n - rank)];

        // minimum-norm solution of [R₁₁ R₁₂] x = y₁ in pivoted coordinates
        let top = |i: usize, j: usize| if j < rank { a1[(i, j)] } else { rest[(i, j - rank)] };
        let mut xp = vec![0.0; n];
        let mut row_space_p = None;
        if rank == n {
            for i in (0..n).rev() {
                let mut s = y(i);
                for j in i + 1..n {
                    s -= a1[(i, j)] * xp[j];
                }
                xp[i] = s / a1[(i, i)];
            }
            if want_row_space {
                row_space_p = Some(Mat::identity(n, n));
            }
        } else {
            // [R₁₁ R₁₂]ᵀ = Q₃ R₃
            let mut t = Mat::<f64>::from_fn(n, rank, |i, j| if j <= i { top(j, i) } else { 0.0 });
            let c3 = qr_factor(t.as_mut());
            let mut w = vec![0.0; rank];
            for i in 0..rank {
                let mut s = y(i);
                for (j, wj) in w.iter().enumerate().take(i) {
                    s -= t[(j, i)] * wj;
                }
                w[i] = s / t[(i, i)];
            }
            let mut v = Mat::<f64>::from_fn(n, 1, |i, _| if i < rank { w[i] } else { 0.0 });
            apply_q(t.as_ref(), c3.as_ref(), v.as_mut());
            for (i, x) in xp.iter_mut().enumerate() {
                *x = v[(i, 0)];
            }
            if want_row_space {
                let mut basis = Mat::<f64>::from_fn(n, rank, |i, j| if i == j { 1.0 } else { 0.0 });
                apply_q(t.as_ref(), c3.as_ref(), basis.as_mut());
                row_space_p = Some(basis);
            }
        }

        // residual of the returned solution: ‖R₂₂ x₂ − y₂‖² + ρ²
        let mut residual_sq = self.rho_sq;
        for i in rank..n {
            let mut s = -y(i);
            for j in rank..n {
                s += rest[(i, j - rank)] * xp[j];
            }
            residual_sq += s * s;
        }

        let mut x = vec![0.0; n];
        for j in 0..n {
            x[fwd[j]] = xp[j];
        }
        let row_space = row_space_p.map(|b: Mat<f64>| Mat::from_fn(n, b.ncols(), |i, j| b[(bwd[i], j)]));
        LstsqSolution {
            x,
            rank,
            residual_sq,
            rhs_norm_sq: self.rhs_norm_sq,
            condition,
            row_space,
        }
    }

    /// Column order and numerical rank from a column-pivoted QR of `R`.
    fn pivot_and_rank(&self, rank_tol: f64) -> (Vec<usize>, Vec<usize>, usize, f64) {
        let n = self.n();
        let mut fwd = vec![0usize; n];
        let mut bwd = vec![0usize; n];
        if n == 0 {
            return (fwd, bwd, 0, f64::INFINITY);
        }
        let par = Par::Seq;
        let mut r2 = self.r.clone();
        let bs = no_pivoting::factor::recommended_blocksize::<f64>(n, n);
        let mut coeff = Mat::<f64>::zeros(bs, n);
        let mut buf = MemBuffer::new(col_pivoting::factor::qr_in_place_scratch::<usize, f64>(
            n,
            n,
            bs,
            par,
            Default::default(),
        ));
        col_pivoting::factor::qr_in_place(
            r2.as_mut(),
            coeff.as_mut(),
            &mut fwd,
            &mut bwd,
            par,
            MemStack::new(&mut buf),
            Default::default(),
        );
        let d0 = r2[(0, 0)].abs();
        let rank = if d0 == 0.0 || !d0.is_finite() {
            0
        } else {
            (0..n).take_while(|&i| r2[(i, i)].abs() > rank_tol * d0).count()
        };
        let condition = if rank == 0 {
            f64::INFINITY
        } else {
            d0 / r2[(rank - 1, rank - 1)].abs()
        };
        (fwd, bwd, rank, condition)
    }
}

/// Convenience: least squares on a dense row-major system.
pub fn lstsq(rows: &[Vec<f64>], rhs: &[f64], rank_tol: f64, want_row_space: bool) -> LstsqSolution {
    let n = rows.first().map_or(0, Vec::len);
    let mut acc = RowAccumulator::new(n);
    for (row, b) in rows.iter().zip(rhs) {
        acc.push_row(row, *b);
    }
    acc.finish().solve(rank_tol, want_row_space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(m: usize, n: usize, rank: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = DMatrix::<f64>::from_fn(m, rank, |_, _| rng.random::<f64>() - 0.5);
        let r = DMatrix::<f64>::from_fn(rank, n, |_, _| rng.random::<f64>() - 0.5);
        let b = DVector::<f64>::from_fn(m, |_, _| rng.random::<f64>() - 0.5);
        (l * r, b)
    }

    fn solve(a: &DMatrix<f64>, b: &DVector<f64>, block: usize, row_space: bool) -> LstsqSolution {
        let mut acc = RowAccumulator::with_block_rows(a.ncols(), block);
        for i in 0..a.nrows() {
            let row: Vec<f64> = a.row(i).iter().copied().collect();
            acc.push_row(&row, b[i]);
        }
        acc.finish().solve(1e-10, row_space)
    }

    #[test]
    fn full_rank_matches_svd() {
        let (a, b) = random_system(60, 12, 12, 1);
        let reference = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
        for block in [1, 7, 13, 1000] {
            let sol = solve(&a, &b, block, false);
            assert_eq!(sol.rank, 12);
            let x = DVector::from_vec(sol.x.clone());
            assert_abs_diff_eq!((x.clone() - &reference).norm(), 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(sol.residual_sq, (&a * x - &b).norm_squared(), epsilon = 1e-10);
            assert_abs_diff_eq!(sol.rhs_norm_sq, b.norm_squared(), epsilon = 1e-12);
        }
    }

    #[test]
    fn rank_deficient_gives_min_norm() {
        let (a, b) = random_system(40, 15, 6, 2);
        let reference = a.clone().svd(true, true).solve(&b, 1e-9).unwrap();
        let sol = solve(&a, &b, 11, true);
        assert_eq!(sol.rank, 6);
        let x = DVector::from_vec(sol.x.clone());
        assert_abs_diff_eq!((x.clone() - &reference).norm(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.residual_sq, (&a * x - &b).norm_squared(), epsilon = 1e-10);

        let z = sol.row_space.unwrap();
        assert_eq!((z.nrows(), z.ncols()), (15, 6));
        let z = DMatrix::<f64>::from_fn(15, 6, |i, j| z[(i, j)]);
        assert_abs_diff_eq!((z.transpose() * &z - DMatrix::identity(6, 6)).amax(), 0.0, epsilon = 1e-12);
        // every row of A lies in span(Z)
        let proj = &a - &a * &z * z.transpose();
        assert!(proj.amax() < 1e-10);
    }

    #[test]
    fn consistent_systems_have_zero_residual() {
        let (a, _) = random_system(30, 10, 10, 3);
        let x0 = DVector::from_fn(10, |i, _| i as f64 - 4.0);
        let b = &a * &x0;
        let sol = solve(&a, &b, 1000, false);
        assert!(sol.relative_residual() < 1e-12);
        assert_abs_diff_eq!((DVector::from_vec(sol.x) - x0).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_inputs() {
        let sol = lstsq(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[1.0, 2.0], 1e-10, true);
        assert_eq!(sol.rank, 0);
        assert_eq!(sol.x, vec![0.0, 0.0]);
        assert_abs_diff_eq!(sol.residual_sq, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.relative_residual(), 1.0, epsilon = 1e-12);
        // fewer rows than unknowns
        let sol = lstsq(&[vec![1.0, 1.0, 0.0]], &[2.0], 1e-10, false);
        assert_eq!(sol.rank, 1);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.x[2], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn vanishing_columns_do_not_poison_the_factor() {
        let (a, b) = random_system(50, 8, 8, 5);
        let mut padded = DMatrix::<f64>::zeros(50, 10);
        padded.view_mut((0, 1), (50, 8)).copy_from(&a);
        let sol = solve(&padded, &b, 9, true);
        assert_eq!(sol.rank, 8);
        assert!(sol.x.iter().all(|v| v.is_finite()));
        assert_eq!(sol.x[0], 0.0);
        assert_eq!(sol.x[9], 0.0);
        let full = solve(&a, &b, 1000, false);
        assert_abs_diff_eq!(sol.residual_sq, full.residual_sq, epsilon = 1e-10);
        for j in 0..8 {
            assert_abs_diff_eq!(sol.x[j + 1], full.x[j], epsilon = 1e-10);
        }
    }

    #[test]
    fn results_are_bitwise_reproducible() {
        let (a, b) = random_system(80, 20, 14, 4);
        let s1 = solve(&a, &b, 16, false);
        let s2 = solve(&a, &b, 16, false);
        assert_eq!(s1.x, s2.x);
        assert_eq!(s1.residual_sq, s2.residual_sq);
    }
}
