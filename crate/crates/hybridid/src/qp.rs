//! Dense strictly convex QP solver with inequality constraints.
//!
//! Solves `min 1/2 z'Qz + (p + Ry)'z  s.t.  Fz + Gy <= h` for a parameter
//! vector `y`, returning the optimizer and the Lagrange multipliers. The
//! method is a dual active-set scheme in the Goldfarb-Idnani style: start at
//! the unconstrained minimum, add the most violated constraint, and take
//! combined primal-dual steps, dropping dual-blocking constraints on the way.
//! Every iterate is dual feasible, so no phase-1 is needed and infeasibility
//! is detected when neither a primal nor a dual step is possible.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{dim_err, Error, Result};
use crate::model::DiffMaxAffineModel;

/// Strictly convex parametric QP: `min 1/2 z'Qz + (p + Ry)'z  s.t.  Fz + Gy <= h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricQP {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DVector<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z_star: DVector<f64>,
    pub lambda: DVector<f64>,
    pub active_rows: Vec<usize>,
    pub status: QpStatus,
}

impl ParametricQP {
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        p: DVector<f64>,
        f: DMatrix<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    ) -> Result<Self> {
        let s = q.nrows();
        let ny = r.ncols();
        let l = f.nrows();
        if q.ncols() != s || r.nrows() != s || p.len() != s {
            return Err(dim_err("ParametricQP cost", format!("s={s}"), "inconsistent Q/R/p"));
        }
        if f.ncols() != s || g.nrows() != l || g.ncols() != ny || h.len() != l {
            return Err(dim_err("ParametricQP constraints", format!("l={l}, s={s}, ny={ny}"), "inconsistent F/G/h"));
        }
        if l == 0 {
            return Err(Error::InvalidArgument("ParametricQP: need at least one constraint row".into()));
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-10 * scale {
            return Err(Error::Qp("Q is not symmetric".into()));
        }
        let min_eig = q
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if !(min_eig > 0.0) {
            return Err(Error::Qp(format!("Q is not positive definite (min eigenvalue {min_eig:.3e})")));
        }
        Ok(Self { q, r, p, f, g, h })
    }

    pub fn num_vars(&self) -> usize {
        self.q.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.f.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.r.ncols()
    }

    /// Same QP with constraint rows reordered by `perm` (used to probe
    /// behavioral uniqueness of the successor map).
    pub fn permute_rows(&self, perm: &[usize]) -> Result<Self> {
        let l = self.num_constraints();
        if perm.len() != l {
            return Err(dim_err("permute_rows", l, perm.len()));
        }
        let mut f = DMatrix::zeros(l, self.f.ncols());
        let mut g = DMatrix::zeros(l, self.g.ncols());
        let mut h = DVector::zeros(l);
        for (dst, &src) in perm.iter().enumerate() {
            f.row_mut(dst).copy_from(&self.f.row(src));
            g.row_mut(dst).copy_from(&self.g.row(src));
            h[dst] = self.h[src];
        }
        Ok(Self {
            q: self.q.clone(),
            r: self.r.clone(),
            p: self.p.clone(),
            f,
            g,
            h,
        })
    }
}

/// Max of the infinity norms of the four KKT residual blocks: stationarity,
/// primal violation, multiplier negativity, complementarity products.
pub fn kkt_residual(qp: &ParametricQP, y: &DVector<f64>, z: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let stationarity = (&qp.q * z + &qp.r * y + &qp.p + qp.f.transpose() * lambda).amax();
    let slack = &qp.h - &qp.f * z - &qp.g * y;
    let primal = slack.iter().fold(0.0f64, |a, &s| a.max(-s));
    let dual = lambda.iter().fold(0.0f64, |a, &l| a.max(-l));
    let comp = lambda
        .iter()
        .zip(slack.iter())
        .fold(0.0f64, |a, (&l, &s)| a.max((l * s).abs()));
    stationarity.max(primal).max(dual).max(comp)
}

struct GiWorkspace<'a> {
    f: &'a DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GiWorkspace<'_> {
    fn qinv_row(&self, i: usize) -> DVector<f64> {
        self.chol.solve(&self.f.row(i).transpose())
    }
}

/// Solve the QP for parameter value `y`. `tol` bounds the final KKT residual
/// (default 1e-10 when callers pass [`DEFAULT_TOL`]).
pub fn solve_qp(qp: &ParametricQP, y: &DVector<f64>, tol: f64) -> Result<QpSolution> {
    solve_qp_hinted(qp, y, tol, &[])
}

pub const DEFAULT_TOL: f64 = 1e-10;

/// [`solve_qp`] with an optional initial active-set hint. The hint is only a
/// warm start; correctness does not depend on it.
pub fn solve_qp_hinted(qp: &ParametricQP, y: &DVector<f64>, tol: f64, hint: &[usize]) -> Result<QpSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("solve_qp: tol must be positive, got {tol}")));
    }
    if y.len() != qp.num_params() {
        return Err(dim_err("solve_qp y", qp.num_params(), y.len()));
    }
    let s = qp.num_vars();
    let l = qp.num_constraints();
    let a = &qp.p + &qp.r * y;
    let b = &qp.h - &qp.g * y;
    let chol = qp
        .q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Qp("Cholesky of Q failed".into()))?;
    let ws = GiWorkspace { f: &qp.f, chol };

    // Unconstrained minimum; every iterate stays stationary for the current
    // active set with nonnegative multipliers.
    let mut z = -ws.chol.solve(&a);
    let mut active: Vec<usize> = Vec::new();
    let mut lam: Vec<f64> = Vec::new();
    // Seed the active set from the hint by replaying constraint additions.
    let hint_queue: Vec<usize> = hint.iter().copied().filter(|&i| i < l).collect();
    let mut hint_pos = 0usize;

    let max_iter = 50 * (s + l);
    let feas_scale = b.amax().max(1.0);
    let mut iters = 0usize;

    loop {
        iters += 1;
        if iters > max_iter {
            return Ok(finish(qp, z, active, lam, QpStatus::MaxIter));
        }
        // Pick the next constraint to enforce: first exhaust the hint, then
        // the most violated row.
        let mut pick: Option<usize> = None;
        while hint_pos < hint_queue.len() {
            let cand = hint_queue[hint_pos];
            hint_pos += 1;
            if !active.contains(&cand) && qp.f.row(cand).transpose().dot(&z) - b[cand] > tol * feas_scale {
                pick = Some(cand);
                break;
            }
        }
        if pick.is_none() {
            let mut worst = tol * feas_scale;
            for i in 0..l {
                if active.contains(&i) {
                    continue;
                }
                let v = qp.f.row(i).transpose().dot(&z) - b[i];
                if v > worst {
                    worst = v;
                    pick = Some(i);
                }
            }
        }
        let p_idx = match pick {
            Some(i) => i,
            None => return Ok(finish(qp, z, active, lam, QpStatus::Optimal)),
        };

        // Inner loop: drive constraint p into the active set.
        let mut lam_p = 0.0f64;
        loop {
            iters += 1;
            if iters > max_iter {
                return Ok(finish(qp, z, active, lam, QpStatus::MaxIter));
            }
            let qinv_cp = ws.qinv_row(p_idx);
            let cp = qp.f.row(p_idx).transpose();
            let (step_dir, mult_dir) = if active.is_empty() {
                (qinv_cp.clone(), DVector::zeros(0))
            } else {
                let k = active.len();
                let mut n_mat = DMatrix::zeros(k, k);
                let mut rhs = DVector::zeros(k);
                let qinv_rows: Vec<DVector<f64>> = active.iter().map(|&i| ws.qinv_row(i)).collect();
                for (i, &ai) in active.iter().enumerate() {
                    rhs[i] = qp.f.row(ai).transpose().dot(&qinv_cp);
                    for (j, qr) in qinv_rows.iter().enumerate() {
                        n_mat[(i, j)] = qp.f.row(ai).transpose().dot(qr);
                    }
                }
                // N = F_A Q^-1 F_A', symmetric PSD; regularize lightly for
                // duplicated rows.
                for i in 0..k {
                    n_mat[(i, i)] += 1e-14 * n_mat[(i, i)].abs().max(1.0);
                }
                let mult = n_mat
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Qp("singular active-set system".into()))?;
                let mut dir = qinv_cp.clone();
                for (j, qr) in qinv_rows.iter().enumerate() {
                    dir.axpy(-mult[j], qr, 1.0);
                }
                (dir, mult)
            };
            // dir = H c_p with H the reduced inverse; curvature c_p' H c_p.
            let curvature = cp.dot(&step_dir);
            let sp = cp.dot(&z) - b[p_idx];
            let curv_tol = 1e-12 * cp.norm_squared().max(1.0);
            let t2 = if curvature > curv_tol { sp / curvature } else { f64::INFINITY };
            let mut t1 = f64::INFINITY;
            let mut blocking: Option<usize> = None;
            for (j, &rj) in mult_dir.iter().enumerate() {
                if rj > 1e-12 {
                    let ratio = lam[j] / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        blocking = Some(j);
                    }
                }
            }
            if !t1.is_finite() && !t2.is_finite() {
                return Ok(finish(qp, z, active, lam, QpStatus::Infeasible));
            }
            let t = t1.min(t2);
            z.axpy(-t, &step_dir, 1.0);
            for (j, &rj) in mult_dir.iter().enumerate() {
                lam[j] -= t * rj;
            }
            lam_p += t;
            if t2 <= t1 {
                active.push(p_idx);
                lam.push(lam_p);
                break;
            }
            let j = blocking.expect("finite t1 implies a blocking index");
            active.remove(j);
            lam.remove(j);
        }
    }
}

fn finish(qp: &ParametricQP, z: DVector<f64>, active: Vec<usize>, lam: Vec<f64>, status: QpStatus) -> QpSolution {
    let mut lambda = DVector::zeros(qp.num_constraints());
    for (&i, &v) in active.iter().zip(lam.iter()) {
        lambda[i] = v.max(0.0);
    }
    let mut active_rows = active;
    active_rows.sort_unstable();
    QpSolution {
        z_star: z,
        lambda,
        active_rows,
        status,
    }
}

/// Consolidated QP whose argmin, mapped through `W = [I -I]`, reproduces the
/// model's forward pass. Decision variable is `(alpha, beta)`; constraint
/// rows are component-major: for each alpha component all its pieces in
/// declaration order, then the beta components.
pub fn build_consolidated_qp(model: &DiffMaxAffineModel) -> ParametricQP {
    let n = model.n;
    let m = model.m;
    let nra = model.nr_alpha();
    let nrb = model.nr_beta();
    let s = 2 * n;
    let l = n * (nra + nrb);

    let mut q = DMatrix::zeros(s, s);
    for k in 0..n {
        q[(k, k)] = model.h_alpha[k];
        q[(n + k, n + k)] = model.h_beta[k];
    }

    // R = -H [A_gamma B_gamma], p = -H c_gamma, with gamma stacking psi/phi.
    let mut r = DMatrix::zeros(s, n + m);
    let mut p = DVector::zeros(s);
    for k in 0..n {
        for j in 0..n {
            r[(k, j)] = -model.h_alpha[k] * model.psi.a[(k, j)];
            r[(n + k, j)] = -model.h_beta[k] * model.phi.a[(k, j)];
        }
        for j in 0..m {
            r[(k, n + j)] = -model.h_alpha[k] * model.psi.b[(k, j)];
            r[(n + k, n + j)] = -model.h_beta[k] * model.phi.b[(k, j)];
        }
        p[k] = -model.h_alpha[k] * model.psi.c[k];
        p[n + k] = -model.h_beta[k] * model.phi.c[k];
    }

    // Constraint alpha_k >= piece_i(x, u)_k rewritten as
    // -alpha_k + A_i[k,:]x + B_i[k,:]u <= -c_i[k].
    let mut f = DMatrix::zeros(l, s);
    let mut g = DMatrix::zeros(l, n + m);
    let mut h = DVector::zeros(l);
    let mut row = 0usize;
    for k in 0..n {
        for piece in &model.alpha_pieces {
            f[(row, k)] = -1.0;
            for j in 0..n {
                g[(row, j)] = piece.a[(k, j)];
            }
            for j in 0..m {
                g[(row, n + j)] = piece.b[(k, j)];
            }
            h[row] = -piece.c[k];
            row += 1;
        }
    }
    for k in 0..n {
        for piece in &model.beta_pieces {
            f[(row, n + k)] = -1.0;
            for j in 0..n {
                g[(row, j)] = piece.a[(k, j)];
            }
            for j in 0..m {
                g[(row, n + j)] = piece.b[(k, j)];
            }
            h[row] = -piece.c[k];
            row += 1;
        }
    }

    ParametricQP::new(q, r, p, f, g, h).expect("consolidated QP is well-formed by construction")
}

/// Map the consolidated-QP solution back to the successor state: `W = [I -I]`.
pub fn successor_from_consolidated(model: &DiffMaxAffineModel, z: &DVector<f64>) -> DVector<f64> {
    let n = model.n;
    DVector::from_fn(n, |k, _| z[k] - z[n + k])
}
