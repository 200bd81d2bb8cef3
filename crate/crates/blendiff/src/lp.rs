//! Dense two-phase primal simplex with Bland's rule.
//!
//! Solves `min c^T x` subject to `A_ub x <= b_ub`, `A_eq x = b_eq`,
//! `x >= 0`. Problem sizes here are tiny (tens of variables), so a full
//! tableau with anti-cycling pivoting favors determinism and exactness
//! over speed.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Duals of the inequality rows (y = c_B B^-1; nonpositive at a
    /// minimum, zero on slack rows).
    pub duals_ub: Vec<f64>,
    /// Duals of the equality rows.
    pub duals_eq: Vec<f64>,
    /// Reduced costs of the structural variables.
    pub reduced_costs: Vec<f64>,
}

struct Tableau {
    /// (m+1) x (ncols+1); last row is the objective, last column the
    /// right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    m: usize,
    ncols: usize,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.t[row][col];
        for v in self.t[row].iter_mut() {
            *v /= piv;
        }
        for r in 0..=self.m {
            if r == row {
                continue;
            }
            let f = self.t[r][col];
            if f == 0.0 {
                continue;
            }
            for c in 0..=self.ncols {
                self.t[r][c] -= f * self.t[row][c];
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule: first improving column, first eligible row with
    /// the smallest basis index on ratio ties.
    fn run(&mut self, allowed: &[bool]) -> Result<()> {
        loop {
            let mut entering = None;
            for c in 0..self.ncols {
                if allowed[c] && self.t[self.m][c] < -TOL {
                    entering = Some(c);
                    break;
                }
            }
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[r][col];
                if a > TOL {
                    let ratio = self.t[r][self.ncols] / a;
                    let better = match leave {
                        None => true,
                        Some((lr, lratio)) => {
                            ratio < lratio - TOL
                                || (ratio < lratio + TOL && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Err(Error::Unbounded);
            };
            self.pivot(row, col);
        }
    }
}

/// Solve the LP. Rows of `a_ub`/`a_eq` may be empty (0 rows).
pub fn solve_lp(
    c: &[f64],
    a_ub: &Tensor,
    b_ub: &[f64],
    a_eq: &Tensor,
    b_eq: &[f64],
) -> Result<LpSolution> {
    let n = c.len();
    let m_ub = b_ub.len();
    let m_eq = b_eq.len();
    let m = m_ub + m_eq;
    assert_eq!(a_ub.rows(), m_ub);
    assert_eq!(a_eq.rows(), m_eq);
    if m_ub > 0 {
        assert_eq!(a_ub.cols(), n);
    }
    if m_eq > 0 {
        assert_eq!(a_eq.cols(), n);
    }
    if b_ub.iter().chain(b_eq).any(|&b| b < 0.0) {
        // all uses here have nonnegative right-hand sides
        return Err(Error::InvalidArgument(
            "solve_lp expects nonnegative right-hand sides".into(),
        ));
    }

    // columns: n structural, m_ub slack, m artificial
    let ncols = n + m_ub + m;
    let mut t = vec![vec![0.0; ncols + 1]; m + 1];
    for r in 0..m_ub {
        for j in 0..n {
            t[r][j] = a_ub.at(r, j);
        }
        t[r][n + r] = 1.0;
        t[r][ncols] = b_ub[r];
    }
    for r in 0..m_eq {
        for j in 0..n {
            t[m_ub + r][j] = a_eq.at(r, j);
        }
        t[m_ub + r][ncols] = b_eq[r];
    }
    for r in 0..m {
        t[r][n + m_ub + r] = 1.0;
    }
    let basis: Vec<usize> = (0..m).map(|r| n + m_ub + r).collect();
    let mut tab = Tableau { t, basis, m, ncols };

    // Phase 1: minimize the artificial sum.
    for c_idx in 0..=ncols {
        let mut s = 0.0;
        for r in 0..m {
            s += tab.t[r][c_idx];
        }
        tab.t[m][c_idx] = -s;
    }
    for r in 0..m {
        tab.t[m][n + m_ub + r] = 0.0;
    }
    let allowed: Vec<bool> = (0..ncols).map(|c| c < n + m_ub).collect();
    tab.run(&allowed)?;
    if tab.t[m][ncols].abs() > 1e-7 {
        return Err(Error::Infeasible(format!(
            "phase-1 objective {}",
            -tab.t[m][ncols]
        )));
    }
    // drive any artificial still in the basis out
    for r in 0..m {
        if tab.basis[r] >= n + m_ub {
            if let Some(col) = (0..n + m_ub).find(|&c2| tab.t[r][c2].abs() > TOL) {
                tab.pivot(r, col);
            }
        }
    }

    // Phase 2: original objective.
    for v in tab.t[m].iter_mut() {
        *v = 0.0;
    }
    for (j, &cj) in c.iter().enumerate() {
        tab.t[m][j] = cj;
    }
    for r in 0..m {
        let b = tab.basis[r];
        let cb = if b < n { c[b] } else { 0.0 };
        if cb != 0.0 {
            for c_idx in 0..=ncols {
                let val = tab.t[r][c_idx] * cb;
                tab.t[m][c_idx] -= val;
            }
        }
    }
    tab.run(&allowed)?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.t[r][ncols];
        }
    }
    let objective = x.iter().zip(c).map(|(xi, ci)| xi * ci).sum();

    // duals from the reduced costs of slack and artificial columns:
    // r_{s_i} = -y_i since those columns are unit vectors with zero cost
    let duals_ub: Vec<f64> = (0..m_ub).map(|i| -tab.t[m][n + i]).collect();
    let duals_eq: Vec<f64> = (0..m_eq).map(|i| -tab.t[m][n + m_ub + m_ub + i]).collect();
    let reduced_costs: Vec<f64> = (0..n).map(|j| tab.t[m][j]).collect();

    Ok(LpSolution {
        x,
        objective,
        duals_ub,
        duals_eq,
        reduced_costs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_bounded_min() {
        // min -x - y s.t. x + y <= 1, x,y >= 0: optimum -1 on the face
        let sol = solve_lp(
            &[-1.0, -1.0],
            &Tensor::from_rows(&[vec![1.0, 1.0]]),
            &[1.0],
            &Tensor::zeros(vec![0, 2]),
            &[],
        )
        .unwrap();
        assert!((sol.objective + 1.0).abs() < 1e-9);
        assert!((sol.x[0] + sol.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_constraint() {
        // min x + 2y s.t. x + y = 1: all mass on x
        let sol = solve_lp(
            &[1.0, 2.0],
            &Tensor::zeros(vec![0, 2]),
            &[],
            &Tensor::from_rows(&[vec![1.0, 1.0]]),
            &[1.0],
        )
        .unwrap();
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!(sol.x[1].abs() < 1e-9);
        assert!((sol.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        // x <= 1 and x = 3
        let r = solve_lp(
            &[1.0],
            &Tensor::from_rows(&[vec![1.0]]),
            &[1.0],
            &Tensor::from_rows(&[vec![1.0]]),
            &[3.0],
        );
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn detects_unbounded() {
        let r = solve_lp(
            &[-1.0],
            &Tensor::zeros(vec![0, 1]),
            &[],
            &Tensor::zeros(vec![0, 1]),
            &[],
        );
        assert!(matches!(r, Err(Error::Unbounded)));
    }

    #[test]
    fn transport_structure() {
        // two-point transport: marginals (0.3, 0.7) both sides, cost
        // prefers the diagonal
        let c = vec![0.0, 5.0, 5.0, 0.0];
        let a_ub = Tensor::from_rows(&[
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ]);
        let b_ub = vec![0.3, 0.7, 0.3, 0.7];
        let a_eq = Tensor::from_rows(&[vec![1.0; 4]]);
        let sol = solve_lp(&c, &a_ub, &b_ub, &a_eq, &[1.0]).unwrap();
        assert!(sol.objective.abs() < 1e-9);
        assert!((sol.x[0] - 0.3).abs() < 1e-9);
        assert!((sol.x[3] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn duals_satisfy_complementary_slackness() {
        let c = vec![2.0, 3.0, 1.5, 4.0];
        let a_ub = Tensor::from_rows(&[
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ]);
        let b_ub = vec![0.4, 0.6, 0.5, 0.5];
        let a_eq = Tensor::from_rows(&[vec![1.0; 4]]);
        let sol = solve_lp(&c, &a_ub, &b_ub, &a_eq, &[1.0]).unwrap();

        // reduced cost r_j = c_j - y' A_j must match the tableau row and
        // vanish on the support
        for j in 0..4 {
            let mut ya = 0.0;
            for (i, &y) in sol.duals_ub.iter().enumerate() {
                ya += y * a_ub.at(i, j);
            }
            ya += sol.duals_eq[0];
            let r = c[j] - ya;
            assert!(
                (r - sol.reduced_costs[j]).abs() < 1e-7,
                "reduced cost mismatch at {j}: {r} vs {}",
                sol.reduced_costs[j]
            );
            assert!(r >= -1e-7, "negative reduced cost {r} at optimum");
            if sol.x[j] > 1e-9 {
                assert!(r.abs() < 1e-7, "support variable {j} with reduced cost {r}");
            }
        }
        // inactive rows carry zero dual
        for (i, &y) in sol.duals_ub.iter().enumerate() {
            let row_activity: f64 = (0..4).map(|j| a_ub.at(i, j) * sol.x[j]).sum();
            if b_ub[i] - row_activity > 1e-9 {
                assert!(y.abs() < 1e-7, "slack row {i} has dual {y}");
            }
            assert!(y <= 1e-7, "inequality dual {y} has the wrong sign");
        }
    }
}
