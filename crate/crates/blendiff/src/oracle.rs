//! Test-only reference solvers, kept independent of the production
//! paths they cross-check. Enabled for this crate's own tests and for
//! downstream test suites via the `test-oracles` feature.

use crate::linalg;
use crate::tensor::Tensor;

/// Projected gradient descent on (1/2) u^T P u + q^T u over the box
/// [0,1]^{NK} intersected with the velocity band |u^{n+1}-u^n| <= delta.
///
/// Fixed step 1/lambda_max(P); the projection onto the intersection is
/// computed by Dykstra's algorithm cycling over the box and each
/// adjacent-frame pair constraint. Iterates until the update stalls or
/// `max_iter` is reached.
pub fn projected_gradient_qp(
    p: &Tensor,
    q: &[f64],
    delta: f64,
    n: usize,
    k: usize,
    max_iter: usize,
) -> Vec<f64> {
    let dim = n * k;
    assert_eq!(p.rows(), dim);
    assert_eq!(q.len(), dim);
    let lmax = linalg::sym_max_eigenvalue(p).expect("P must be symmetric");
    let step = 1.0 / lmax;

    let mut u = vec![0.5; dim];
    for _ in 0..max_iter {
        let pu = p.matvec(&u);
        let mut next: Vec<f64> = (0..dim).map(|i| u[i] - step * (pu[i] + q[i])).collect();
        project_box_velocity(&mut next, delta, n, k);
        let moved = u
            .iter()
            .zip(&next)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        u = next;
        if moved < 1e-13 {
            break;
        }
    }
    u
}

/// Dykstra projection onto box /\ velocity band.
pub fn project_box_velocity(u: &mut [f64], delta: f64, n: usize, k: usize) {
    // constraint 0: box; constraints 1..n-1: adjacent pair bands
    let n_constraints = 1 + n.saturating_sub(1);
    let mut corrections = vec![vec![0.0; u.len()]; n_constraints];
    let mut work = u.to_vec();
    for _sweep in 0..500 {
        let mut moved = 0.0f64;
        for (ci, corr) in corrections.iter_mut().enumerate() {
            let mut y = work.clone();
            for (yv, cv) in y.iter_mut().zip(corr.iter()) {
                *yv += cv;
            }
            if ci == 0 {
                for v in y.iter_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
            } else {
                let frame = ci - 1;
                for ch in 0..k {
                    let ia = frame * k + ch;
                    let ib = (frame + 1) * k + ch;
                    let d = y[ib] - y[ia];
                    if d.abs() > delta {
                        let shift = (d.abs() - delta) / 2.0 * d.signum();
                        y[ia] += shift;
                        y[ib] -= shift;
                    }
                }
            }
            for i in 0..y.len() {
                let new_corr = work[i] + corr[i] - y[i];
                corr[i] = new_corr;
                moved = moved.max((work[i] - y[i]).abs());
            }
            work = y;
        }
        if moved < 1e-13 {
            break;
        }
    }
    u.copy_from_slice(&work);
}

/// Dense objective (1/2) u^T P u + q^T u.
pub fn dense_objective(p: &Tensor, q: &[f64], u: &[f64]) -> f64 {
    let pu = p.matvec(u);
    u.iter()
        .zip(pu.iter().zip(q))
        .map(|(ui, (pui, qi))| 0.5 * ui * pui + ui * qi)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_respects_both_constraint_sets() {
        let mut u = vec![1.4, -0.3, 0.9, 0.2];
        project_box_velocity(&mut u, 0.1, 2, 2);
        for &v in &u {
            assert!((-1e-9..=1.0 + 1e-9).contains(&v));
        }
        for ch in 0..2 {
            let d = (u[2 + ch] - u[ch]).abs();
            assert!(d <= 0.1 + 1e-9, "pair {ch} violates band: {d}");
        }
    }

    #[test]
    fn pgd_solves_unconstrained_interior() {
        // P = I, q = -0.5: minimum at 0.5 inside the box
        let p = Tensor::identity(2);
        let u = projected_gradient_qp(&p, &[-0.5, -0.5], 1.0, 1, 2, 100_000);
        assert!((u[0] - 0.5).abs() < 1e-8);
        assert!((u[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn pgd_hand_fixture() {
        // the two-frame fixture with the velocity band active
        let mut p = Tensor::zeros(vec![2, 2]);
        p.set(0, 0, 1.0);
        p.set(1, 1, 1.0);
        let u = projected_gradient_qp(&p, &[-0.5, -0.9], 0.1, 2, 1, 1_000_000);
        assert!((u[0] - 0.65).abs() < 1e-6, "{u:?}");
        assert!((u[1] - 0.75).abs() < 1e-6);
    }
}
