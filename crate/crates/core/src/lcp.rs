//! Linear complementarity problems.
//!
//! Find `lambda >= 0` with `y = F lambda + q >= 0` and `lambda' y = 0`.
//! The solver is Lemke's complementary pivoting method with covering vector
//! `e = (1, ..., 1)`. Ratio-test ties are broken by Bland's rule (smallest
//! basic-variable index), so identical inputs always follow the identical
//! pivot path.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default complementarity tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Largest dimension accepted by [`is_p_matrix`].
pub const MAX_P_MATRIX_DIM: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LcpError {
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix dimension {0} exceeds the exhaustive principal-minor limit of {MAX_P_MATRIX_DIM}")]
    DimensionTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpInstance {
    pub f: DMatrix<f64>,
    pub q: DVector<f64>,
}

impl LcpInstance {
    pub fn new(f: DMatrix<f64>, q: DVector<f64>) -> Result<Self, LcpError> {
        if !f.is_square() {
            return Err(LcpError::DimensionMismatch(format!("F is {}x{}, expected square", f.nrows(), f.ncols())));
        }
        if q.len() != f.nrows() {
            return Err(LcpError::DimensionMismatch(format!(
                "q has length {}, F is {}x{}",
                q.len(),
                f.nrows(),
                f.ncols()
            )));
        }
        Ok(Self { f, q })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LcpSolution {
    pub lambda: DVector<f64>,
    pub y: DVector<f64>,
    /// `max_i |lambda_i * y_i|`.
    pub residual: f64,
    /// Some basic variable sat at zero when pivoting stopped.
    pub degenerate: bool,
    pub pivots: usize,
}

/// Worst violation of nonnegativity and orthogonality of a candidate pair.
pub fn complementarity_residual(lambda: &[f64], y: &[f64]) -> Result<f64, LcpError> {
    if lambda.len() != y.len() {
        return Err(LcpError::DimensionMismatch(format!(
            "lambda has length {}, y has length {}",
            lambda.len(),
            y.len()
        )));
    }
    let mut worst = 0.0_f64;
    for (&l, &w) in lambda.iter().zip(y) {
        worst = worst.max(-l).max(-w).max((l * w).abs());
    }
    Ok(worst)
}

/// True iff every principal minor of `f` is strictly positive.
pub fn is_p_matrix(f: &DMatrix<f64>) -> Result<bool, LcpError> {
    if !f.is_square() {
        return Err(LcpError::DimensionMismatch(format!("F is {}x{}, expected square", f.nrows(), f.ncols())));
    }
    let n = f.nrows();
    if n > MAX_P_MATRIX_DIM {
        return Err(LcpError::DimensionTooLarge(n));
    }
    let scale = f.amax().max(1.0);
    for mask in 1u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = idx.len();
        let sub = DMatrix::from_fn(k, k, |r, c| f[(idx[r], idx[c])]);
        let det = sub.lu().determinant();
        if !(det > 1e-14 * scale.powi(k as i32)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Solve the LCP with Lemke's method.
pub fn solve_lcp(inst: &LcpInstance, tol: f64) -> Result<LcpSolution, LcpError> {
    if !(tol > 0.0) {
        return Err(LcpError::NoSolution(format!("tolerance must be positive, got {tol}")));
    }
    let n = inst.dim();
    if inst.f.nrows() != n || inst.f.ncols() != n {
        return Err(LcpError::DimensionMismatch("F does not match q".into()));
    }
    if inst.q.iter().any(|v| !v.is_finite()) || inst.f.iter().any(|v| !v.is_finite()) {
        return Err(LcpError::NoSolution("non-finite data".into()));
    }
    if inst.q.iter().all(|&v| v >= 0.0) {
        let lambda = DVector::zeros(n);
        let y = inst.q.clone();
        return Ok(LcpSolution { lambda, y, residual: 0.0, degenerate: inst.q.iter().any(|&v| v == 0.0), pivots: 0 });
    }

    let mut tab = Tableau::new(inst);
    let pivots = tab.run()?;
    let degenerate = tab.degenerate(tol);

    let mut lambda = DVector::zeros(n);
    for (row, &var) in tab.basis.iter().enumerate() {
        if (n..2 * n).contains(&var) {
            lambda[var - n] = tab.rhs(row);
        }
    }
    let lambda = polish(inst, lambda, tol);
    let y = &inst.f * &lambda + &inst.q;
    let residual = lambda.iter().zip(y.iter()).map(|(l, w)| (l * w).abs()).fold(0.0, f64::max);
    let worst = complementarity_residual(lambda.as_slice(), y.as_slice())?;
    if worst > tol {
        return Err(LcpError::NoSolution(format!("terminal point misses tolerance: residual {worst:.3e} > {tol:.3e}")));
    }
    Ok(LcpSolution { lambda, y, residual, degenerate, pivots })
}

/// Re-solve the linear system on the active set reported by the tableau.
/// Keeps the tableau values whenever the refined point is not better.
fn polish(inst: &LcpInstance, lambda: DVector<f64>, tol: f64) -> DVector<f64> {
    let n = inst.dim();
    let active: Vec<usize> = (0..n).filter(|&i| lambda[i] > 0.0).collect();
    let mut refined = DVector::zeros(n);
    if !active.is_empty() {
        let k = active.len();
        let sub = DMatrix::from_fn(k, k, |r, c| inst.f[(active[r], active[c])]);
        let rhs = DVector::from_fn(k, |r, _| -inst.q[active[r]]);
        match sub.lu().solve(&rhs) {
            Some(sol) => {
                for (r, &i) in active.iter().enumerate() {
                    refined[i] = sol[r].max(0.0);
                }
            }
            None => return lambda,
        }
    }
    let score = |l: &DVector<f64>| {
        let y = &inst.f * l + &inst.q;
        complementarity_residual(l.as_slice(), y.as_slice()).unwrap_or(f64::INFINITY)
    };
    let before = score(&lambda);
    let after = score(&refined);
    if after <= before || (after <= tol && before > tol) {
        refined
    } else {
        lambda
    }
}

/// Dense tableau for `w - F lambda - e z0 = q`.
///
/// Variable numbering: `0..n` are `w`, `n..2n` are `lambda`, `2n` is `z0`.
/// Column `2n + 1` holds the right-hand side.
struct Tableau {
    n: usize,
    data: DMatrix<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(inst: &LcpInstance) -> Self {
        let n = inst.dim();
        let mut data = DMatrix::zeros(n, 2 * n + 2);
        for i in 0..n {
            data[(i, i)] = 1.0;
            for j in 0..n {
                data[(i, n + j)] = -inst.f[(i, j)];
            }
            data[(i, 2 * n)] = -1.0;
            data[(i, 2 * n + 1)] = inst.q[i];
        }
        Self { n, data, basis: (0..n).collect() }
    }

    fn z0(&self) -> usize {
        2 * self.n
    }

    fn rhs(&self, row: usize) -> f64 {
        self.data[(row, 2 * self.n + 1)]
    }

    fn complement(&self, var: usize) -> usize {
        if var < self.n {
            var + self.n
        } else {
            var - self.n
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.data[(row, col)];
        let width = self.data.ncols();
        for c in 0..width {
            self.data[(row, c)] /= p;
        }
        for r in 0..self.n {
            if r == row {
                continue;
            }
            let factor = self.data[(r, col)];
            if factor != 0.0 {
                for c in 0..width {
                    let v = self.data[(row, c)];
                    self.data[(r, c)] -= factor * v;
                }
                self.data[(r, col)] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Minimum-ratio row for `col`; ties resolve toward `z0`, then toward the
    /// smallest basic-variable index.
    fn ratio_test(&self, col: usize) -> Option<usize> {
        let scale = self.data.column(col).amax().max(1.0);
        let mut best: Option<(usize, f64)> = None;
        for r in 0..self.n {
            let a = self.data[(r, col)];
            if a <= 1e-12 * scale {
                continue;
            }
            let ratio = self.rhs(r).max(0.0) / a;
            best = match best {
                None => Some((r, ratio)),
                Some((br, bratio)) => {
                    let tie = (ratio - bratio).abs() <= 1e-12 * (1.0 + bratio.abs());
                    if tie {
                        let (cur, old) = (self.basis[r], self.basis[br]);
                        let prefer_new = if cur == self.z0() {
                            true
                        } else if old == self.z0() {
                            false
                        } else {
                            cur < old
                        };
                        if prefer_new {
                            Some((r, ratio))
                        } else {
                            Some((br, bratio))
                        }
                    } else if ratio < bratio {
                        Some((r, ratio))
                    } else {
                        Some((br, bratio))
                    }
                }
            };
        }
        best.map(|(r, _)| r)
    }

    fn run(&mut self) -> Result<usize, LcpError> {
        let n = self.n;
        // z0 enters; the row with the most negative q leaves (smallest index on ties).
        let mut leave_row = 0;
        for r in 1..n {
            if self.rhs(r) < self.rhs(leave_row) {
                leave_row = r;
            }
        }
        let mut leaving = self.basis[leave_row];
        self.pivot(leave_row, self.z0());
        let mut pivots = 1;
        let max_pivots = 50 * n + 100;
        loop {
            let entering = self.complement(leaving);
            let row = self
                .ratio_test(entering)
                .ok_or_else(|| LcpError::NoSolution(format!("ray termination after {pivots} pivots")))?;
            leaving = self.basis[row];
            self.pivot(row, entering);
            pivots += 1;
            if leaving == self.z0() {
                return Ok(pivots);
            }
            if pivots > max_pivots {
                return Err(LcpError::NoSolution(format!("pivot limit {max_pivots} reached")));
            }
        }
    }

    fn degenerate(&self, tol: f64) -> bool {
        (0..self.n).any(|r| self.rhs(r).abs() <= tol)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(f: &[f64], q: &[f64]) -> LcpInstance {
        let n = q.len();
        LcpInstance::new(DMatrix::from_row_slice(n, n, f), DVector::from_row_slice(q)).unwrap()
    }

    #[test]
    fn nonnegative_q_gives_zero_solution() {
        let s = solve_lcp(&inst(&[1.0, 0.0, 0.0, 1.0], &[1.0, 2.0]), DEFAULT_TOL).unwrap();
        assert_eq!(s.lambda.as_slice(), &[0.0, 0.0]);
        assert_eq!(s.y.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn scalar_case() {
        let s = solve_lcp(&inst(&[1.0], &[-2.0]), DEFAULT_TOL).unwrap();
        assert!((s.lambda[0] - 2.0).abs() < 1e-12);
        assert!(s.y[0].abs() < 1e-12);
    }

    #[test]
    fn upper_triangular_two_by_two() {
        // Active-set enumeration: {} fails (q < 0), {1} gives y2 = -1,
        // {2} gives y1 = -0.5, {1,2} gives lambda = (0.25, 0.5).
        let s = solve_lcp(&inst(&[2.0, 1.0, 0.0, 2.0], &[-1.0, -1.0]), DEFAULT_TOL).unwrap();
        assert!((s.lambda[0] - 0.25).abs() < 1e-12);
        assert!((s.lambda[1] - 0.5).abs() < 1e-12);
        assert!(s.residual <= DEFAULT_TOL);
    }

    #[test]
    fn ray_termination_reports_no_solution() {
        // F = -1, q = -1: y = -lambda - 1 < 0 for every lambda >= 0.
        let err = solve_lcp(&inst(&[-1.0], &[-1.0]), DEFAULT_TOL).unwrap_err();
        assert!(matches!(err, LcpError::NoSolution(_)));
    }

    #[test]
    fn dimension_mismatch() {
        let err = LcpInstance::new(DMatrix::identity(2, 2), DVector::from_row_slice(&[1.0])).unwrap_err();
        assert!(matches!(err, LcpError::DimensionMismatch(_)));
        assert!(matches!(complementarity_residual(&[1.0], &[1.0, 2.0]), Err(LcpError::DimensionMismatch(_))));
    }

    #[test]
    fn residual_examples() {
        assert_eq!(complementarity_residual(&[0.0, 1.0], &[2.0, 0.0]).unwrap(), 0.0);
        assert_eq!(complementarity_residual(&[1.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(complementarity_residual(&[-0.5], &[0.0]).unwrap(), 0.5);
    }

    #[test]
    fn p_matrix_examples() {
        assert!(is_p_matrix(&DMatrix::identity(3, 3)).unwrap());
        assert!(!is_p_matrix(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap());
        assert!(is_p_matrix(&DMatrix::from_diagonal_element(2, 2, 0.1)).unwrap());
        assert!(matches!(is_p_matrix(&DMatrix::identity(13, 13)), Err(LcpError::DimensionTooLarge(13))));
    }

    #[test]
    fn repeated_solves_are_bitwise_identical() {
        let i = inst(&[0.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0], &[0.981, 0.5, -0.5]);
        let a = solve_lcp(&i, DEFAULT_TOL).unwrap();
        let b = solve_lcp(&i, DEFAULT_TOL).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn friction_lcp_at_rest_is_zero() {
        // Sliding box with u = 0: q = (mu m g, 0, 0).
        let i = inst(&[0.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0], &[0.981, 0.0, 0.0]);
        let s = solve_lcp(&i, DEFAULT_TOL).unwrap();
        assert_eq!(s.lambda.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn friction_lcp_sticks_below_friction_limit() {
        // u = 0.5 < mu m g: friction cancels the push, net force zero.
        let i = inst(&[0.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0], &[0.981, 0.5, -0.5]);
        let s = solve_lcp(&i, DEFAULT_TOL).unwrap();
        assert!((0.5 + s.lambda[1] - s.lambda[2]).abs() < 1e-9);
    }
}
