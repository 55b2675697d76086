//! Phase-1 simplex for feasibility systems, generic over the scalar type.
//!
//! Bland's rule throughout, so termination is guaranteed; speed is not a
//! concern at the problem sizes this crate targets.

use num_traits::Float;

/// One constraint row: `sum coeff_j * x_j (= | <=) rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow<F> {
    pub coeffs: Vec<(usize, F)>,
    pub rhs: F,
    pub kind: RowKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Eq,
    Le,
}

/// A feasibility system over nonnegative variables.
#[derive(Debug, Clone, Default)]
pub struct LpProblem<F> {
    pub num_vars: usize,
    pub rows: Vec<LpRow<F>>,
}

impl<F: Float + std::fmt::Display> LpProblem<F> {
    pub fn new(num_vars: usize) -> Self {
        LpProblem {
            num_vars,
            rows: Vec::new(),
        }
    }

    pub fn push_eq(&mut self, coeffs: Vec<(usize, F)>, rhs: F) {
        self.rows.push(LpRow {
            coeffs,
            rhs,
            kind: RowKind::Eq,
        });
    }

    pub fn push_le(&mut self, coeffs: Vec<(usize, F)>, rhs: F) {
        self.rows.push(LpRow {
            coeffs,
            rhs,
            kind: RowKind::Le,
        });
    }

    /// Largest absolute residual of `x` over all rows.
    pub fn max_residual(&self, x: &[F]) -> F {
        let mut worst = F::zero();
        for row in &self.rows {
            let mut lhs = F::zero();
            for &(j, c) in &row.coeffs {
                lhs = lhs + c * x[j];
            }
            let r = match row.kind {
                RowKind::Eq => (lhs - row.rhs).abs(),
                RowKind::Le => (lhs - row.rhs).max(F::zero()),
            };
            worst = worst.max(r);
        }
        worst
    }

    /// Debug dump, one row per line: `E|L coeff*var ... rhs`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push(match row.kind {
                RowKind::Eq => 'E',
                RowKind::Le => 'L',
            });
            for &(j, c) in &row.coeffs {
                out.push_str(&format!(" {c}*x{j}"));
            }
            out.push_str(&format!(" {}\n", row.rhs));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub enum LpOutcome<F> {
    /// A point satisfying all rows within the tolerance.
    Feasible(Vec<F>),
    /// Rows still carrying artificial weight at phase-1 optimality.
    Infeasible(Vec<usize>),
}

#[derive(Debug, thiserror::Error)]
pub enum SimplexError {
    #[error("pivot iteration guard exceeded ({0} iterations)")]
    IterationGuard(usize),
}

/// Phase-1 simplex: minimize the sum of artificial variables. Feasible iff
/// the optimum is at most `tol`.
pub fn solve_feasibility<F: Float + std::fmt::Display>(
    lp: &LpProblem<F>,
    tol: F,
) -> Result<LpOutcome<F>, SimplexError> {
    let m = lp.rows.len();
    let slacks = lp
        .rows
        .iter()
        .filter(|r| r.kind == RowKind::Le)
        .count();
    // columns: structural | slack | artificial, then rhs
    let n_struct = lp.num_vars;
    let n_total = n_struct + slacks + m;
    let mut tab = vec![vec![F::zero(); n_total + 1]; m + 1];
    let mut basis = vec![0usize; m];

    let mut slack_idx = 0usize;
    for (i, row) in lp.rows.iter().enumerate() {
        let flip = row.rhs < F::zero();
        let sign = if flip { -F::one() } else { F::one() };
        for &(j, c) in &row.coeffs {
            tab[i][j] = tab[i][j] + sign * c;
        }
        if row.kind == RowKind::Le {
            tab[i][n_struct + slack_idx] = sign;
            slack_idx += 1;
        }
        tab[i][n_total] = sign * row.rhs;
        let art = n_struct + slacks + i;
        tab[i][art] = F::one();
        basis[i] = art;
    }

    // objective row: minimize sum of artificials == maximize -sum; store as
    // cost row z_j - c_j for the artificial objective.
    for i in 0..m {
        for j in 0..=n_total {
            let v = tab[i][j];
            tab[m][j] = tab[m][j] + v;
        }
    }
    // artificial columns cancel out of the cost row
    for i in 0..m {
        let art = n_struct + slacks + i;
        tab[m][art] = F::zero();
    }

    let guard = 50 * (m + n_total + 1) * (m + n_total + 1);
    let mut iters = 0usize;
    loop {
        iters += 1;
        if iters > guard {
            return Err(SimplexError::IterationGuard(guard));
        }
        // Bland: entering variable = lowest index with positive reduced cost.
        let mut enter = None;
        for j in 0..n_total {
            if tab[m][j] > tol {
                enter = Some(j);
                break;
            }
        }
        let Some(enter) = enter else { break };
        // Bland: leaving row = min ratio, ties by lowest basis index.
        let mut leave: Option<usize> = None;
        let mut best = F::infinity();
        for i in 0..m {
            if tab[i][enter] > tol {
                let ratio = tab[i][n_total] / tab[i][enter];
                let better = match leave {
                    None => true,
                    Some(l) => {
                        ratio < best || (ratio == best && basis[i] < basis[l])
                    }
                };
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(leave) = leave else {
            // Unbounded phase-1 objective cannot happen; treat as guard bug.
            return Err(SimplexError::IterationGuard(iters));
        };
        pivot(&mut tab, leave, enter);
        basis[leave] = enter;
    }

    let objective = tab[m][n_total];
    if objective.abs() > tol {
        let bad: Vec<usize> = (0..m)
            .filter(|&i| basis[i] >= n_struct + slacks && tab[i][n_total].abs() > tol)
            .collect();
        return Ok(LpOutcome::Infeasible(bad));
    }
    let mut x = vec![F::zero(); n_struct];
    for i in 0..m {
        if basis[i] < n_struct {
            x[basis[i]] = tab[i][n_total];
        }
    }
    Ok(LpOutcome::Feasible(x))
}

fn pivot<F: Float>(tab: &mut [Vec<F>], row: usize, col: usize) {
    let ncols = tab[0].len();
    let nrows = tab.len();
    let pv = tab[row][col];
    for j in 0..ncols {
        tab[row][j] = tab[row][j] / pv;
    }
    for i in 0..nrows {
        if i != row {
            let f = tab[i][col];
            if f != F::zero() {
                for j in 0..ncols {
                    let delta = f * tab[row][j];
                    tab[i][j] = tab[i][j] - delta;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trivially_feasible_system() {
        let mut lp = LpProblem::<f64>::new(2);
        lp.push_eq(vec![(0, 1.0), (1, 1.0)], 2.0);
        lp.push_le(vec![(0, 1.0)], 1.5);
        match solve_feasibility(&lp, 1e-9).unwrap() {
            LpOutcome::Feasible(x) => {
                assert!(lp.max_residual(&x) <= 1e-9);
            }
            LpOutcome::Infeasible(_) => panic!("should be feasible"),
        }
    }

    #[test]
    fn infeasible_system() {
        let mut lp = LpProblem::<f64>::new(1);
        lp.push_eq(vec![(0, 1.0)], 3.0);
        lp.push_le(vec![(0, 1.0)], 1.0);
        match solve_feasibility(&lp, 1e-9).unwrap() {
            LpOutcome::Feasible(_) => panic!("should be infeasible"),
            LpOutcome::Infeasible(rows) => assert!(!rows.is_empty()),
        }
    }

    #[test]
    fn works_in_f32_too() {
        let mut lp = LpProblem::<f32>::new(2);
        lp.push_eq(vec![(0, 1.0), (1, 2.0)], 4.0);
        lp.push_le(vec![(1, 1.0)], 1.0);
        match solve_feasibility(&lp, 1e-4).unwrap() {
            LpOutcome::Feasible(x) => assert!(lp.max_residual(&x) <= 1e-4),
            LpOutcome::Infeasible(_) => panic!("feasible"),
        }
    }

    #[test]
    fn dump_format() {
        let mut lp = LpProblem::<f64>::new(1);
        lp.push_eq(vec![(0, 1.0)], 1.0);
        assert_eq!(lp.dump(), "E 1*x0 1\n");
    }
}
