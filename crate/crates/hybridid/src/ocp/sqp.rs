//! Scholtes-style homotopy with an SQP inner solver, followed by a
//! branch-QP polish that pins each complementarity pair to one side and
//! solves the resulting convex QP exactly.

use nalgebra::{DMatrix, DVector, SVD};

use super::registry::HorizonSolver;
use super::{condense, simulate_inputs, Condensed, MpccProblem, MpccSolution, Multipliers, SolveOpts, SolveStatus};
use crate::error::{Error, Result};
use crate::qp::{self, ParametricQP, QpStatus};

pub struct SqpMpccSolver;

impl HorizonSolver for SqpMpccSolver {
    fn name(&self) -> &'static str {
        "sqp-mpcc"
    }

    fn solve(&self, problem: &MpccProblem, opts: &SolveOpts, warm: Option<&MpccSolution>) -> Result<MpccSolution> {
        solve_impl(problem, opts, warm)
    }
}

/// Fixed row layout of the affine inequality system `F theta <= h`:
/// `u <= hi` (T*m rows), `-u <= -lo` (T*m), `-w <= 0` (T*l), `-s <= e-part`
/// (T*l).
struct AffineRows {
    f: DMatrix<f64>,
    h: DVector<f64>,
    tm: usize,
    tl: usize,
}

fn affine_rows(problem: &MpccProblem, cond: &Condensed) -> AffineRows {
    let (t, m, l) = (cond.t, cond.m, cond.l);
    let dim = cond.dim();
    let (tm, tl) = (t * m, t * l);
    let rows = 2 * tm + 2 * tl;
    let mut f = DMatrix::zeros(rows, dim);
    let mut h = DVector::zeros(rows);
    for k in 0..tm {
        f[(k, k)] = 1.0;
        h[k] = problem.u_hi[k % m];
        f[(tm + k, k)] = -1.0;
        h[tm + k] = -problem.u_lo[k % m];
    }
    for k in 0..tl {
        f[(2 * tm + k, tm + k)] = -1.0;
    }
    if tl > 0 {
        let mut s_rows = f.view_mut((2 * tm + tl, 0), (tl, dim));
        s_rows.copy_from(&(-&cond.gs));
        h.rows_mut(2 * tm + tl, tl).copy_from(&cond.gs0);
    }
    AffineRows { f, h, tm, tl }
}

fn comp_violation(cond: &Condensed, theta: &DVector<f64>) -> f64 {
    let s = cond.slacks_of(theta);
    let mut worst = 0.0f64;
    for j in 0..cond.t * cond.l {
        worst = worst.max((theta[cond.t * cond.m + j] * s[j]).abs());
    }
    worst
}

/// l1 merit: objective plus weighted violation of all constraints at the
/// given relaxation level.
fn merit(cond: &Condensed, aff: &AffineRows, theta: &DVector<f64>, tau: f64, rho: f64) -> f64 {
    let mut viol = 0.0;
    let fx = &aff.f * theta;
    for i in 0..aff.h.len() {
        viol += (fx[i] - aff.h[i]).max(0.0);
    }
    let s = cond.slacks_of(theta);
    for j in 0..cond.t * cond.l {
        viol += (theta[cond.t * cond.m + j] * s[j] - tau).max(0.0);
    }
    cond.objective_of(theta) + rho * viol
}

fn initial_inputs(problem: &MpccProblem, warm: Option<&MpccSolution>) -> Vec<DVector<f64>> {
    let m = problem.lc.input_dim();
    let clamp = |u: &DVector<f64>| {
        DVector::from_fn(m, |i, _| u[i].clamp(problem.u_lo[i], problem.u_hi[i]))
    };
    if let Some(prev) = warm {
        if prev.u_traj.len() == problem.horizon && prev.u_traj[0].len() == m {
            let mut shifted: Vec<DVector<f64>> = prev.u_traj[1..].iter().map(clamp).collect();
            shifted.push(clamp(prev.u_traj.last().expect("non-empty")));
            return shifted;
        }
    }
    vec![clamp(&problem.u_prev); problem.horizon]
}

fn stack_theta(cond: &Condensed, u_traj: &[DVector<f64>], w_traj: &[DVector<f64>]) -> DVector<f64> {
    let mut theta = DVector::zeros(cond.dim());
    for (t, u) in u_traj.iter().enumerate() {
        theta.rows_mut(t * cond.m, cond.m).copy_from(u);
    }
    for (t, w) in w_traj.iter().enumerate() {
        theta.rows_mut(cond.t * cond.m + t * cond.l, cond.l).copy_from(w);
    }
    theta
}

/// Dynamics multipliers by backward recursion from the x-stationarity rows.
fn recover_nu(problem: &MpccProblem, x_traj: &[DVector<f64>], xi_s: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let t_len = problem.horizon;
    let cost = &problem.cost;
    let mut nu = vec![DVector::zeros(problem.lc.state_dim()); t_len];
    nu[t_len - 1] = -2.0 * cost.stage_weight(t_len - 1) * (&x_traj[t_len] - &cost.refs[t_len - 1]);
    for k in (1..t_len).rev() {
        let grad_x = 2.0 * cost.stage_weight(k - 1) * (&x_traj[k] - &cost.refs[k - 1]);
        nu[k - 1] = -grad_x
            + problem.lc.a.transpose() * &nu[k]
            + problem.lc.e_x.transpose() * &xi_s[k];
    }
    nu
}

fn per_stage(flat: &DVector<f64>, t: usize, len: usize) -> Vec<DVector<f64>> {
    (0..t).map(|k| flat.rows(k * len, len).clone_owned()).collect()
}

struct BranchResult {
    theta: DVector<f64>,
    lam_lo: DVector<f64>,
    lam_hi: DVector<f64>,
    xi_w: DVector<f64>,
    xi_s: DVector<f64>,
}

/// Fix every complementarity pair to its nearer side and solve the resulting
/// convex QP by null-space elimination of the equalities.
fn branch_polish(cond: &Condensed, aff: &AffineRows, branch_w: &[bool]) -> Option<BranchResult> {
    let dim = cond.dim();
    let (tm, tl) = (aff.tm, aff.tl);
    // equalities: w_j = 0 on the w-branch, s_j = 0 on the s-branch
    let mut req = DMatrix::zeros(tl, dim);
    let mut rrhs = DVector::zeros(tl);
    for j in 0..tl {
        if branch_w[j] {
            req[(j, tm + j)] = 1.0;
        } else {
            req.row_mut(j).copy_from(&cond.gs.row(j));
            rrhs[j] = -cond.gs0[j];
        }
    }
    let svd = SVD::new(req.clone(), true, true);
    let sv_max = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let theta_p = svd.solve(&rrhs, 1e-10 * sv_max.max(1.0)).ok()?;
    if (&req * &theta_p - &rrhs).amax() > 1e-8 {
        return None;
    }
    // full null space of req from the eigenvectors of req'req (the thin SVD
    // above does not expose null directions beyond the row count)
    let gram = req.transpose() * &req;
    let eig = gram.symmetric_eigen();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * sv_max.max(1.0))
        .count();
    let nv = dim - rank;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let null_cols: Vec<usize> = order[..nv].to_vec();
    let z = DMatrix::from_fn(dim, nv, |r, c| eig.eigenvectors[(r, null_cols[c])]);

    // inequalities kept: the box plus the still-free side of each pair
    let mut keep: Vec<usize> = (0..2 * tm).collect();
    for j in 0..tl {
        if branch_w[j] {
            keep.push(2 * tm + tl + j); // s_j >= 0
        } else {
            keep.push(2 * tm + j); // w_j >= 0
        }
    }
    let f_keep = DMatrix::from_fn(keep.len(), dim, |r, c| aff.f[(keep[r], c)]);
    let h_keep = DVector::from_fn(keep.len(), |r, _| aff.h[keep[r]]);

    let scale = cond.p.amax().max(1.0);
    let theta_star;
    let mut lam = DVector::zeros(keep.len());
    if nv == 0 {
        if (&f_keep * &theta_p - &h_keep).amax() > 1e-9 {
            return None;
        }
        theta_star = theta_p;
    } else {
        let qr = z.transpose() * &cond.p * &z + DMatrix::identity(nv, nv) * (1e-10 * scale);
        let pr = z.transpose() * (&cond.p * &theta_p + &cond.q);
        let fz = &f_keep * &z;
        let hz = &h_keep - &f_keep * &theta_p;
        let sub = ParametricQP::new(qr, DMatrix::zeros(nv, 0), pr, fz, DMatrix::zeros(keep.len(), 0), hz).ok()?;
        let sol = qp::solve_qp(&sub, &DVector::zeros(0), qp::DEFAULT_TOL).ok()?;
        if sol.status != QpStatus::Optimal {
            return None;
        }
        theta_star = &theta_p + &z * sol.z_star;
        lam = sol.lambda;
    }
    // equality multipliers from full stationarity via least squares
    let mut rhs = &cond.p * &theta_star + &cond.q;
    rhs += f_keep.transpose() * &lam;
    let mu = SVD::new(req.transpose(), true, true).solve(&(-&rhs), 1e-12).ok()?;

    let mut lam_hi = DVector::zeros(tm);
    let mut lam_lo = DVector::zeros(tm);
    let mut xi_w = DVector::zeros(tl);
    let mut xi_s = DVector::zeros(tl);
    for (r, &orig) in keep.iter().enumerate() {
        let v = lam[r];
        if orig < tm {
            lam_hi[orig] = v;
        } else if orig < 2 * tm {
            lam_lo[orig - tm] = v;
        } else if orig < 2 * tm + tl {
            xi_w[orig - 2 * tm] = v;
        } else {
            xi_s[orig - 2 * tm - tl] = v;
        }
    }
    for j in 0..tl {
        if branch_w[j] {
            xi_w[j] = -mu[j];
        } else {
            xi_s[j] = -mu[j];
        }
    }
    Some(BranchResult {
        theta: theta_star,
        lam_lo,
        lam_hi,
        xi_w,
        xi_s,
    })
}

fn solve_impl(problem: &MpccProblem, opts: &SolveOpts, warm: Option<&MpccSolution>) -> Result<MpccSolution> {
    // normalize the w coordinates: scaling the model Hessian by c multiplies
    // the multipliers w by c and the columns of [B_w; E_w] by 1/c, so scaling
    // each w_j by its column norm makes the condensed problem (and the whole
    // homotopy path) invariant under such rescalings
    let lc = &problem.lc;
    let l_model = lc.comp_dim();
    let d = DVector::<f64>::from_fn(l_model, |j, _| {
        let cb = lc.b_w.column(j).norm();
        let ce = lc.e_w.column(j).norm();
        let nrm = (cb * cb + ce * ce).sqrt();
        if nrm > 0.0 { nrm } else { 1.0 }
    });
    let scaled_problem = {
        let mut p = problem.clone();
        for j in 0..l_model {
            let inv = 1.0 / d[j];
            p.lc.b_w.column_mut(j).scale_mut(inv);
            p.lc.e_w.column_mut(j).scale_mut(inv);
        }
        p
    };
    let cond = condense(&scaled_problem);
    let (t_len, m, l) = (cond.t, cond.m, cond.l);
    let dim = cond.dim();
    let aff = affine_rows(problem, &cond);
    let (tm, tl) = (aff.tm, aff.tl);
    let scale_w = |w: &[DVector<f64>]| -> Vec<DVector<f64>> {
        w.iter().map(|wk| wk.component_mul(&d)).collect()
    };

    let u_init = initial_inputs(problem, warm);
    let (_, w_init, _) = simulate_inputs(problem, &u_init)?;
    let mut theta = stack_theta(&cond, &u_init, &scale_w(&w_init));

    let reg = 1e-8 * (cond.p.amax() + 1.0);
    let mut stage_comp = Vec::new();
    let mut last_lambda = DVector::zeros(aff.h.len() + tl);

    if l > 0 {
        for &tau in &opts.tau_schedule {
            for _ in 0..opts.max_sqp_iters {
                let g = cond.gradient_of(&theta);
                let s = cond.slacks_of(&theta);
                let rows = aff.h.len() + tl;
                let mut f = DMatrix::zeros(rows, dim);
                let mut h = DVector::zeros(rows);
                f.view_mut((0, 0), (aff.h.len(), dim)).copy_from(&aff.f);
                h.rows_mut(0, aff.h.len()).copy_from(&(&aff.h - &aff.f * &theta));
                for j in 0..tl {
                    let wj = theta[tm + j];
                    f[(aff.h.len() + j, tm + j)] += s[j];
                    for c in 0..dim {
                        f[(aff.h.len() + j, c)] += wj * cond.gs[(j, c)];
                    }
                    h[aff.h.len() + j] = tau - wj * s[j];
                }
                let sub = ParametricQP::new(
                    &cond.p + DMatrix::identity(dim, dim) * reg,
                    DMatrix::zeros(dim, 0),
                    g.clone(),
                    f,
                    DMatrix::zeros(rows, 0),
                    h,
                )?;
                let sol = qp::solve_qp(&sub, &DVector::zeros(0), qp::DEFAULT_TOL)?;
                if sol.status != QpStatus::Optimal {
                    break;
                }
                let delta = sol.z_star;
                last_lambda = sol.lambda;
                if delta.amax() <= 1e-10 * (1.0 + theta.amax()) {
                    break;
                }
                let rho = 1e3f64.max(10.0 * last_lambda.amax());
                let base = merit(&cond, &aff, &theta, tau, rho);
                let descent = (-g.dot(&delta)).max(0.0) + 1e-12;
                let mut alpha = 1.0;
                let mut moved = false;
                for _ in 0..30 {
                    let cand = &theta + &delta * alpha;
                    if merit(&cond, &aff, &cand, tau, rho) <= base - 1e-4 * alpha * descent {
                        theta = cand;
                        moved = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            stage_comp.push(comp_violation(&cond, &theta));
        }
    } else {
        // degenerate linear problem: one convex QP over the input box. All
        // variables are box-bounded inputs here, so a near-machine-precision
        // regularization suffices to keep the factorization well posed
        // without biasing the solution.
        let reg = 1e-13 * (cond.p.amax() + 1.0);
        let sub = ParametricQP::new(
            &cond.p + DMatrix::identity(dim, dim) * reg,
            DMatrix::zeros(dim, 0),
            cond.q.clone(),
            aff.f.clone(),
            DMatrix::zeros(aff.h.len(), 0),
            aff.h.clone(),
        )?;
        let sol = qp::solve_qp(&sub, &DVector::zeros(0), qp::DEFAULT_TOL)?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::Solver(format!("degenerate QP returned {:?}", sol.status)));
        }
        theta = sol.z_star;
        last_lambda = sol.lambda;
    }

    // project the homotopy iterate onto the complementarity set by
    // resimulating its inputs through the exact one-step problems
    let theta_ref = {
        let u_now: Vec<DVector<f64>> = (0..t_len).map(|t| cond.u_of(&theta, t)).collect();
        let (_, w_exact, _) = simulate_inputs(problem, &u_now)?;
        stack_theta(&cond, &u_now, &scale_w(&w_exact))
    };
    let obj_ref = cond.objective_of(&theta_ref);

    // branch polish to drive complementarity to numerical zero; rejected if
    // it lands above the projected point (wrong branch assignment)
    let s_now = cond.slacks_of(&theta);
    // scale-invariant branch test: w carries the units of the multipliers
    // while s carries the units of the constraint slacks, so compare each
    // side relative to its own overall magnitude
    let w_scale = (0..tl).fold(0.0f64, |a, j| a.max(theta[tm + j])).max(1e-300);
    let s_scale = (0..tl).fold(0.0f64, |a, j| a.max(s_now[j])).max(1e-300);
    let branch_w: Vec<bool> = (0..tl)
        .map(|j| theta[tm + j] * s_scale <= s_now[j] * w_scale)
        .collect();
    let polished = if l > 0 {
        branch_polish(&cond, &aff, &branch_w)
            .filter(|b| cond.objective_of(&b.theta) <= obj_ref + 1e-8 * (1.0 + obj_ref.abs()))
    } else {
        None
    };

    let (theta, lam_lo, lam_hi, xi_w, xi_s) = match polished {
        Some(b) => (b.theta, b.lam_lo, b.lam_hi, b.xi_w, b.xi_s),
        None => {
            // fall back to the projected iterate with multipliers mapped
            // from the last subproblem (comp-row multipliers folded in)
            let theta = theta_ref;
            let s = cond.slacks_of(&theta);
            let mut lam_hi = DVector::zeros(tm);
            let mut lam_lo = DVector::zeros(tm);
            let mut xi_w = DVector::zeros(tl);
            let mut xi_s = DVector::zeros(tl);
            for k in 0..tm {
                lam_hi[k] = last_lambda[k];
                lam_lo[k] = last_lambda[tm + k];
            }
            for j in 0..tl {
                let eta = if last_lambda.len() > aff.h.len() { last_lambda[aff.h.len() + j] } else { 0.0 };
                xi_w[j] = last_lambda[2 * tm + j] - eta * s[j];
                xi_s[j] = last_lambda[2 * tm + tl + j] - eta * theta[tm + j];
            }
            (theta, lam_lo, lam_hi, xi_w, xi_s)
        }
    };

    let x_traj = cond.states_of(&problem.x0, &theta);
    let u_traj: Vec<DVector<f64>> = (0..t_len).map(|t| cond.u_of(&theta, t)).collect();
    // map w and its multiplier back to the model's coordinates: theta holds
    // w~ = D w, and the constraint -w~ <= 0 multiplier transforms as xi = D xi~
    let w_traj: Vec<DVector<f64>> = (0..t_len)
        .map(|t| cond.w_of(&theta, t).component_div(&d))
        .collect();
    let xi_w_stages: Vec<DVector<f64>> = per_stage(&xi_w, t_len, l)
        .into_iter()
        .map(|v| v.component_mul(&d))
        .collect();
    let xi_s_stages = per_stage(&xi_s, t_len, l);
    let multipliers = Multipliers {
        nu: recover_nu(problem, &x_traj, &xi_s_stages),
        lam_lo: per_stage(&lam_lo, t_len, m),
        lam_hi: per_stage(&lam_hi, t_len, m),
        xi_w: xi_w_stages,
        xi_s: xi_s_stages,
    };
    let objective = super::objective_of_traj(problem, &x_traj, &u_traj)?;
    let comp = comp_violation(&cond, &theta);

    let mut solution = MpccSolution {
        x_traj,
        u_traj,
        w_traj,
        multipliers: Some(multipliers),
        objective,
        kkt_residual: f64::INFINITY,
        comp_violation: comp,
        status: SolveStatus::Feasible,
        stage_comp,
    };
    match super::certify_stationarity(problem, &solution, opts.tol) {
        Ok(cert) => {
            solution.kkt_residual = cert.residual;
            if cert.residual <= opts.tol && cert.comp_violation <= opts.comp_tol {
                solution.status = SolveStatus::Stationary;
            }
        }
        Err(_) => {
            solution.status = SolveStatus::Failed("solution failed feasibility re-check".into());
        }
    }
    Ok(solution)
}
