//! Dense two-phase simplex for the small linear programs behind the set
//! calculus: support functions, Chebyshev centers, feasibility certificates
//! and simplex-coefficient solves.
//!
//! The canonical form is
//!
//! ```text
//!   minimize  c^T x   subject to   A x = b,  x >= 0,
//! ```
//!
//! with few rows and possibly many columns, which is the orientation every
//! caller in this crate reduces to (support functions enter through the
//! dual). Dantzig pricing with a Bland fallback after a stall keeps the
//! iteration finite; the final basic solution and multipliers are re-solved
//! from the basis factorization so tableau drift does not leak into results.

use nalgebra::{DMatrix, DVector};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-8;
/// Degenerate-pivot streak after which pricing switches to Bland's rule.
const STALL_LIMIT: usize = 40;
const MAX_ITERS: usize = 50_000;

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal {
        x: DVector<f64>,
        value: f64,
        /// Simplex multipliers y with A^T y <= c at optimality.
        multipliers: DVector<f64>,
    },
    Infeasible {
        /// Phase-1 residual (minimal l1 equality violation).
        residual: f64,
        /// Best-effort x >= 0 attaining that residual.
        x: DVector<f64>,
    },
    Unbounded,
}

/// Solve `min c^T x  s.t.  A x = b, x >= 0`.
pub fn solve_standard(c: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> LpOutcome {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(c.len(), n, "cost length");
    assert_eq!(b.len(), m, "rhs length");

    // Tableau over [x | artificials], rows scaled so b >= 0.
    let total = n + m;
    let mut t = DMatrix::<f64>::zeros(m, total + 1);
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = s * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, total)] = s * b[i];
    }
    let mut basis: Vec<usize> = (n..total).collect();

    // Phase 1: minimize the artificial sum.
    let mut phase1_cost = DVector::<f64>::zeros(total);
    for j in n..total {
        phase1_cost[j] = 1.0;
    }
    if !run_simplex(&mut t, &mut basis, &phase1_cost, n) {
        // Phase-1 objective is bounded below by 0; an unbounded report is a
        // numerical breakdown. Treat as infeasible with the current residual.
        let res = phase1_residual(&t, &basis, n);
        return LpOutcome::Infeasible { residual: res.0, x: res.1 };
    }
    let (residual, x_phase1) = phase1_residual(&t, &basis, n);
    if residual > FEAS_TOL * (1.0 + b.amax()) {
        return LpOutcome::Infeasible { residual, x: x_phase1 };
    }

    // Drive leftover artificials out of the basis; a row where no structural
    // column can pivot is redundant and gets neutralized.
    for i in 0..m {
        if basis[i] >= n {
            let mut piv = None;
            for j in 0..n {
                if t[(i, j)].abs() > 1e-7 {
                    piv = Some(j);
                    break;
                }
            }
            match piv {
                Some(j) => pivot(&mut t, &mut basis, i, j),
                None => {
                    for j in 0..=total {
                        t[(i, j)] = 0.0;
                    }
                }
            }
        }
    }

    // Phase 2 on the structural cost; artificials stay priced out.
    let mut phase2_cost = DVector::<f64>::zeros(total);
    for j in 0..n {
        phase2_cost[j] = c[j];
    }
    let big = 1.0 + c.amax();
    for j in n..total {
        phase2_cost[j] = 1e12 * big;
    }
    if !run_simplex(&mut t, &mut basis, &phase2_cost, total) {
        return LpOutcome::Unbounded;
    }

    // Recover x and multipliers from the final basis against the original data.
    let mut x = DVector::<f64>::zeros(n);
    let mut ab = DMatrix::<f64>::zeros(m, m);
    let mut cb = DVector::<f64>::zeros(m);
    for (i, &j) in basis.iter().enumerate() {
        for r in 0..m {
            ab[(r, i)] = if j < n {
                a[(r, j)]
            } else if j - n == r {
                1.0
            } else {
                0.0
            };
        }
        cb[i] = if j < n { c[j] } else { 0.0 };
    }
    let lu = ab.clone().lu();
    let xb = lu.solve(b).unwrap_or_else(|| {
        // Fall back to the tableau values when the basis matrix is singular
        // to working precision (degenerate but harmless).
        DVector::from_iterator(m, (0..m).map(|i| t[(i, total)]))
    });
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            x[j] = xb[i].max(0.0);
        }
    }
    let multipliers = ab
        .transpose()
        .lu()
        .solve(&cb)
        .unwrap_or_else(|| DVector::zeros(m));
    let value = c.dot(&x);
    LpOutcome::Optimal { x, value, multipliers }
}

fn phase1_residual(t: &DMatrix<f64>, basis: &[usize], n: usize) -> (f64, DVector<f64>) {
    let total = t.ncols() - 1;
    let mut res = 0.0;
    let mut x = DVector::<f64>::zeros(n);
    for (i, &j) in basis.iter().enumerate() {
        let v = t[(i, total)];
        if j >= n {
            res += v.max(0.0);
        } else {
            x[j] = v.max(0.0);
        }
    }
    (res, x)
}

/// Primal simplex on the current tableau. `allowed` restricts entering
/// columns to indices `< allowed`. Returns false on unboundedness.
fn run_simplex(
    t: &mut DMatrix<f64>,
    basis: &mut Vec<usize>,
    cost: &DVector<f64>,
    allowed: usize,
) -> bool {
    let m = t.nrows();
    let total = t.ncols() - 1;
    let mut stall = 0usize;
    for _ in 0..MAX_ITERS {
        // Reduced costs: r_j = c_j - c_B^T B^{-1} A_j, read off the tableau.
        let mut entering: Option<usize> = None;
        let mut best = -COST_TOL;
        let bland = stall >= STALL_LIMIT;
        for j in 0..allowed.min(total) {
            if basis.contains(&j) {
                continue;
            }
            let mut red = cost[j];
            for i in 0..m {
                red -= cost[basis[i]] * t[(i, j)];
            }
            if red < best {
                if bland {
                    entering = Some(j);
                    break;
                }
                best = red;
                entering = Some(j);
            }
        }
        let Some(e) = entering else {
            return true; // optimal
        };

        // Ratio test (Bland ties on the leaving index).
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            let aij = t[(i, e)];
            if aij > PIVOT_TOL {
                let ratio = t[(i, total)] / aij;
                if ratio < best_ratio - 1e-12
                    || (ratio < best_ratio + 1e-12
                        && leave.is_some_and(|l| basis[i] < basis[l]))
                {
                    best_ratio = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(l) = leave else {
            return false; // unbounded
        };
        if best_ratio <= 1e-12 {
            stall += 1;
        } else {
            stall = 0;
        }
        pivot(t, basis, l, e);
    }
    // Iteration cap reached; report the current point as optimal-so-far.
    true
}

#[derive(Debug, Clone)]
pub enum MaxOutcome {
    Optimal { x: DVector<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

/// Solve `max c^T x  s.t.  g x <= h, e x = f` with `x` free, through the
/// dual standard form (few rows when `x` is low-dimensional).
pub fn maximize(
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    e: &DMatrix<f64>,
    f: &DVector<f64>,
) -> MaxOutcome {
    let dim = c.len();
    let m_ub = g.nrows();
    let m_eq = e.nrows();
    assert_eq!(g.ncols(), dim);
    assert!(m_eq == 0 || e.ncols() == dim);

    // Dual: min h^T y + f^T z  s.t.  g^T y + e^T z = c, y >= 0, z free.
    let cols = m_ub + 2 * m_eq;
    let mut a = DMatrix::<f64>::zeros(dim, cols);
    let mut cost = DVector::<f64>::zeros(cols);
    for j in 0..m_ub {
        for i in 0..dim {
            a[(i, j)] = g[(j, i)];
        }
        cost[j] = h[j];
    }
    for j in 0..m_eq {
        for i in 0..dim {
            a[(i, m_ub + j)] = e[(j, i)];
            a[(i, m_ub + m_eq + j)] = -e[(j, i)];
        }
        cost[m_ub + j] = f[j];
        cost[m_ub + m_eq + j] = -f[j];
    }
    match solve_standard(&cost, &a, c) {
        LpOutcome::Optimal { value, multipliers, .. } => {
            MaxOutcome::Optimal { x: multipliers, value }
        }
        LpOutcome::Infeasible { .. } => MaxOutcome::Unbounded,
        LpOutcome::Unbounded => MaxOutcome::Infeasible,
    }
}

fn pivot(t: &mut DMatrix<f64>, basis: &mut [usize], row: usize, col: usize) {
    let m = t.nrows();
    let w = t.ncols();
    let p = t[(row, col)];
    for j in 0..w {
        t[(row, j)] /= p;
    }
    for i in 0..m {
        if i != row {
            let f = t[(i, col)];
            if f != 0.0 {
                for j in 0..w {
                    t[(i, j)] -= f * t[(row, j)];
                }
            }
        }
    }
    basis[row] = col;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_min() {
        // min -x1 - 2 x2 s.t. x1 + 3 x2 <= 6 as equalities with slacks
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, 3.0, 0.0]);
        let b = DVector::from_row_slice(&[4.0, 6.0]);
        let c = DVector::from_row_slice(&[-1.0, -2.0, 0.0]);
        match solve_standard(&c, &a, &b) {
            LpOutcome::Optimal { x, value, .. } => {
                assert!((x[0] - 3.0).abs() < 1e-8, "{x}");
                assert!((x[1] - 1.0).abs() < 1e-8);
                assert!((value + 5.0).abs() < 1e-8);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn infeasible_reports_residual() {
        // x1 = 1 and x1 = 3 cannot both hold.
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 3.0]);
        let c = DVector::from_row_slice(&[0.0]);
        match solve_standard(&c, &a, &b) {
            LpOutcome::Infeasible { residual, .. } => assert!(residual > 1.0),
            other => panic!("unexpected outcome {other:?}"),
        }
    }

    #[test]
    fn unbounded_detected() {
        // min -x1 s.t. x1 - x2 = 0 (both can grow without bound).
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let b = DVector::from_row_slice(&[0.0]);
        let c = DVector::from_row_slice(&[-1.0, 0.0]);
        assert!(matches!(solve_standard(&c, &a, &b), LpOutcome::Unbounded));
    }

    #[test]
    fn multipliers_solve_dual() {
        // Support of the box |x_i| <= 1 in direction (1, 1) via the dual:
        // min h^T y s.t. G^T y = d, y >= 0 with G = [I; -I].
        let gt = DMatrix::from_row_slice(
            2,
            4,
            &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0],
        );
        let h = DVector::from_row_slice(&[1.0, 1.0, 1.0, 1.0]);
        let d = DVector::from_row_slice(&[1.0, 1.0]);
        match solve_standard(&h, &gt, &d) {
            LpOutcome::Optimal { value, multipliers, .. } => {
                assert!((value - 2.0).abs() < 1e-9);
                // Multipliers are the primal maximizer (vertex (1,1)).
                assert!((multipliers[0] - 1.0).abs() < 1e-9);
                assert!((multipliers[1] - 1.0).abs() < 1e-9);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
    }
}
