//! Fit smooth blendshape-coefficient sequences to vertex motion.
//!
//! Per frame n the residual is ||p^n - (b0 + B u^n)||^2 with box
//! constraints 0 <= u <= 1 and velocity constraints
//! |u^{n+1} - u^n| <= delta. Stacked over frames this is a strictly
//! convex QP: P is block diagonal with N copies of B^T B and the
//! velocity constraints form a banded difference operator.
//!
//! The solver is operator-splitting ADMM in the style of OSQP. The
//! linear system (P + sigma I + rho A^T A) x = rhs diagonalizes in the
//! eigenbasis of B^T B into one tridiagonal solve per eigen-channel, so
//! each iteration costs O(N K^2).

use crate::coeffs::{CoeffSequence, MotionSequence};
use crate::error::{Error, Result};
use crate::linalg;
use crate::mesh::BlendshapeModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct QpConfig {
    /// Maximum coefficient change between adjacent frames.
    pub delta: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
}

impl Default for QpConfig {
    fn default() -> Self {
        QpConfig {
            delta: 0.1,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            max_iter: 20_000,
        }
    }
}

/// Assembled QP instance over the flattened coefficients u in R^{N*K}
/// (frame-major).
#[derive(Debug, Clone)]
pub struct QpInstance {
    /// K x K Gram matrix B^T B (each diagonal block of P).
    pub gram: Tensor,
    /// N x K linear term, row n = B^T (b0 - p^n).
    pub lin: Tensor,
    pub delta: f64,
    pub n: usize,
    pub k: usize,
    names: Vec<String>,
    frame_rate: f64,
    gram_chol: Tensor,
}

impl QpInstance {
    /// Row count of the stacked velocity-constraint matrix G
    /// (both signs).
    pub fn velocity_rows(&self) -> usize {
        2 * self.k * self.n.saturating_sub(1)
    }

    /// Objective (1/2) u^T P u + q^T u for an N x K iterate.
    pub fn objective(&self, u: &Tensor) -> f64 {
        let pu = u.matmul(&self.gram);
        let mut obj = 0.0;
        for (a, (b, c)) in u
            .data()
            .iter()
            .zip(pu.data().iter().zip(self.lin.data()))
        {
            obj += 0.5 * a * b + a * c;
        }
        obj
    }

    /// Dense (P, q, G, h) for small instances; G stacks the
    /// +(u^{n+1}-u^n) rows first, then the negated rows, each bounded
    /// by delta.
    pub fn dense(&self) -> (Tensor, Vec<f64>, Tensor, Vec<f64>) {
        let (n, k) = (self.n, self.k);
        let nk = n * k;
        let mut p = Tensor::zeros(vec![nk, nk]);
        for b in 0..n {
            for i in 0..k {
                for j in 0..k {
                    p.set(b * k + i, b * k + j, self.gram.at(i, j));
                }
            }
        }
        let q = self.lin.data().to_vec();
        let rows = self.velocity_rows();
        let mut g = Tensor::zeros(vec![rows, nk]);
        let half = rows / 2;
        for nn in 0..n.saturating_sub(1) {
            for kk in 0..k {
                let r = nn * k + kk;
                g.set(r, (nn + 1) * k + kk, 1.0);
                g.set(r, nn * k + kk, -1.0);
                g.set(half + r, (nn + 1) * k + kk, -1.0);
                g.set(half + r, nn * k + kk, 1.0);
            }
        }
        let h = vec![self.delta; rows];
        (p, q, g, h)
    }
}

/// Build the QP from a blendshape model and a motion sequence.
pub fn assemble_qp(
    model: &BlendshapeModel,
    motion: &MotionSequence,
    cfg: &QpConfig,
) -> Result<QpInstance> {
    if cfg.delta <= 0.0 {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    if model.template.len() != motion.frames.cols() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} coordinates but motion frames have {}",
            model.template.len(),
            motion.frames.cols()
        )));
    }
    let k = model.num_shapes();
    let n = motion.num_frames();
    let dim = model.template.len();

    let mut gram = Tensor::zeros(vec![k, k]);
    for i in 0..k {
        for j in i..k {
            let mut s = 0.0;
            for c in 0..dim {
                s += model.deltas[i][c] * model.deltas[j][c];
            }
            gram.set(i, j, s);
            gram.set(j, i, s);
        }
    }
    let gram_chol = match linalg::cholesky(&gram) {
        Ok(l) => l,
        Err(Error::NotPositiveDefinite { pivot, .. }) => {
            return Err(Error::RankDeficientBlendshapes { pivot })
        }
        Err(e) => return Err(e),
    };

    let mut lin = Tensor::zeros(vec![n, k]);
    for (row, frame) in (0..n).map(|r| (r, motion.frames.row(r))) {
        for i in 0..k {
            let mut s = 0.0;
            for c in 0..dim {
                s += model.deltas[i][c] * (model.template[c] - frame[c]);
            }
            lin.set(row, i, s);
        }
    }

    Ok(QpInstance {
        gram,
        lin,
        delta: cfg.delta,
        n,
        k,
        names: model.names.clone(),
        frame_rate: motion.frame_rate,
        gram_chol,
    })
}

#[derive(Debug, Clone)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    /// Scaled stationarity residual ||P u + q + A^T y||_inf.
    pub dual_residual: f64,
    pub objective: f64,
    pub converged: bool,
}

/// Apply the one-sided difference operator D: (N-1) x K rows of
/// u^{n+1} - u^n.
fn apply_diff(x: &Tensor) -> Tensor {
    let (n, k) = (x.rows(), x.cols());
    if n <= 1 {
        return Tensor::zeros(vec![0, k]);
    }
    x.slice_rows(1, n).sub(&x.slice_rows(0, n - 1))
}

/// Apply D^T to an (N-1) x K tensor, producing N x K.
fn apply_diff_t(b: &Tensor, n: usize) -> Tensor {
    let k = b.cols();
    let mut out = Tensor::zeros(vec![n, k]);
    for r in 0..b.rows() {
        for c in 0..k {
            let v = b.at(r, c);
            let cur = out.at(r + 1, c) + v;
            out.set(r + 1, c, cur);
            let cur = out.at(r, c) - v;
            out.set(r, c, cur);
        }
    }
    out
}

struct TridiagSolver {
    /// Eigenvalues of the Gram matrix.
    lambda: Vec<f64>,
    /// Eigenvector matrix U (columns are eigenvectors).
    u: Tensor,
    n: usize,
    sigma: f64,
}

impl TridiagSolver {
    /// Solve (P + sigma I + rho (I + D^T D)) x = rhs.
    fn solve(&self, rhs: &Tensor, rho: f64) -> Tensor {
        let k = self.lambda.len();
        let n = self.n;
        let rotated = rhs.matmul(&self.u);
        let mut out = Tensor::zeros(vec![n, k]);
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        for (ch, &lam) in self.lambda.iter().enumerate() {
            let base = lam + self.sigma + rho;
            // tridiagonal: diag = base + rho * deg(n), off = -rho
            let deg = |i: usize| -> f64 {
                if n == 1 {
                    0.0
                } else if i == 0 || i == n - 1 {
                    1.0
                } else {
                    2.0
                }
            };
            let off = -rho;
            cp[0] = off / (base + rho * deg(0));
            dp[0] = rotated.at(0, ch) / (base + rho * deg(0));
            for i in 1..n {
                let m = base + rho * deg(i) - off * cp[i - 1];
                cp[i] = off / m;
                dp[i] = (rotated.at(i, ch) - off * dp[i - 1]) / m;
            }
            out.set(n - 1, ch, dp[n - 1]);
            for i in (0..n - 1).rev() {
                let v = dp[i] - cp[i] * out.at(i + 1, ch);
                out.set(i, ch, v);
            }
        }
        out.matmul(&self.u.transpose())
    }
}

/// Solve the instance with the default warm start (clamped per-frame
/// unconstrained solutions).
pub fn solve_qp(inst: &QpInstance, cfg: &QpConfig) -> Result<(CoeffSequence, SolveDiagnostics)> {
    solve_qp_from(inst, cfg, None)
}

/// Solve the instance from an explicit starting iterate.
pub fn solve_qp_from(
    inst: &QpInstance,
    cfg: &QpConfig,
    start: Option<Tensor>,
) -> Result<(CoeffSequence, SolveDiagnostics)> {
    let (n, k) = (inst.n, inst.k);
    let sigma = 1e-6;
    let mut rho = 1.0;

    let mut x = match start {
        Some(x0) => {
            x0.same_shape(&inst.lin)?;
            x0
        }
        None => {
            // clamped per-frame unconstrained solution
            let mut x0 = Tensor::zeros(vec![n, k]);
            for r in 0..n {
                let rhs: Vec<f64> = inst.lin.row(r).iter().map(|v| -v).collect();
                let sol = linalg::cholesky_solve(&inst.gram_chol, &rhs);
                for (c, v) in sol.into_iter().enumerate() {
                    x0.set(r, c, v.clamp(0.0, 1.0));
                }
            }
            x0
        }
    };

    let (lambda, u_eig) = linalg::sym_eigen(&inst.gram)?;
    let solver = TridiagSolver {
        lambda,
        u: u_eig,
        n,
        sigma,
    };

    // slack split: z_box over all coefficients, z_vel over differences
    let clamp_box = |t: &mut Tensor| {
        for v in t.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    };
    let clamp_vel = |t: &mut Tensor, delta: f64| {
        for v in t.data_mut() {
            *v = v.clamp(-delta, delta);
        }
    };

    let mut z_box = x.clone();
    clamp_box(&mut z_box);
    let mut z_vel = apply_diff(&x);
    clamp_vel(&mut z_vel, inst.delta);
    let mut y_box = Tensor::zeros(vec![n, k]);
    let mut y_vel = Tensor::zeros(vec![z_vel.rows(), k]);

    // keep a safety factor on the primal tolerance so the final box
    // clamp cannot push velocity violations past tol
    let primal_target = cfg.tol_primal * 0.25;

    let mut iterations = 0;
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;

        // x-update
        let mut rhs = x.scale(sigma).sub(&inst.lin);
        rhs.add_assign(&z_box.scale(rho).sub(&y_box));
        rhs.add_assign(&apply_diff_t(&z_vel.scale(rho).sub(&y_vel), n));
        x = solver.solve(&rhs, rho);
        let dx = apply_diff(&x);

        // z-update
        z_box = x.add(&y_box.scale(1.0 / rho));
        clamp_box(&mut z_box);
        z_vel = dx.add(&y_vel.scale(1.0 / rho));
        clamp_vel(&mut z_vel, inst.delta);

        // y-update
        y_box.add_assign(&x.sub(&z_box).scale(rho));
        y_vel.add_assign(&dx.sub(&z_vel).scale(rho));

        if iterations % 10 == 0 || iterations == cfg.max_iter {
            primal = x.sub(&z_box).max_abs().max(dx.sub(&z_vel).max_abs());
            let px = x.matmul(&inst.gram);
            let aty = y_box.add(&apply_diff_t(&y_vel, n));
            let stat = px.add(&inst.lin).add(&aty);
            let scale = px
                .max_abs()
                .max(inst.lin.max_abs())
                .max(aty.max_abs())
                .max(1.0);
            dual = stat.max_abs() / scale;
            if primal <= primal_target && dual <= cfg.tol_dual {
                converged = true;
                break;
            }
            // residual balancing
            if iterations % 50 == 0 {
                if primal > 10.0 * dual && rho < 1e6 {
                    rho *= 2.0;
                } else if dual > 10.0 * primal && rho > 1e-6 {
                    rho /= 2.0;
                }
            }
        }
    }

    clamp_box(&mut x);
    let objective = inst.objective(&x);
    let diag = SolveDiagnostics {
        iterations,
        primal_residual: primal,
        dual_residual: dual,
        objective,
        converged,
    };
    if !converged {
        log::warn!(
            "QP solver hit max_iter={} (primal {:.3e}, dual {:.3e})",
            cfg.max_iter,
            primal,
            dual
        );
    }
    let seq = CoeffSequence::new(x, inst.frame_rate, inst.names.clone())?;
    Ok((seq, diag))
}

/// Assemble and solve in one step.
pub fn fit_sequence(
    model: &BlendshapeModel,
    motion: &MotionSequence,
    cfg: &QpConfig,
) -> Result<(CoeffSequence, SolveDiagnostics)> {
    let inst = assemble_qp(model, motion, cfg)?;
    solve_qp(&inst, cfg)
}
