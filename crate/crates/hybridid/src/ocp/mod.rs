//! Finite-horizon optimal control over an LC model: MPCC assembly, solvers,
//! the KKT stationarity certificate, and the receding-horizon MPC loop.
//!
//! The decision vector used internally is the condensed stack
//! `theta = (u_0..u_{T-1}, w_0..w_{T-1})`; states are eliminated through the
//! dynamics, so equality constraints never enter the inner QPs and the
//! remaining constraint system is the input box, `w >= 0`, `s >= 0` and the
//! complementarity coupling.

pub mod direct;
pub mod registry;
pub mod shooting;
pub mod sqp;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::bench::System;
use crate::error::{dim_err, Error, Result};
use crate::lc::{ConditionReport, LCModel};
use crate::model::Normalization;

pub use registry::{solver_by_name, solver_names, HorizonSolver};

/// Quadratic tracking cost: stage `t` contributes
/// `(x_{t+1}-r_{t+1})' Q (x_{t+1}-r_{t+1}) + u_t' R u_t + d_t' R_rate d_t`
/// with `d_t = u_t - u_{t-1}` and the terminal state weighted by
/// `q_terminal` instead of `q_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q_state: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub r_input: DMatrix<f64>,
    pub r_rate: DMatrix<f64>,
    /// References for `x_1 .. x_T` (horizon entries).
    pub refs: Vec<DVector<f64>>,
}

fn check_psd(mat: &DMatrix<f64>, what: &'static str) -> Result<()> {
    if mat.nrows() != mat.ncols() {
        return Err(dim_err(what, "square", format!("{}x{}", mat.nrows(), mat.ncols())));
    }
    let scale = mat.amax().max(1.0);
    if (mat - mat.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidArgument(format!("{what}: weight is not symmetric")));
    }
    let min_eig = mat
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    if min_eig < -1e-10 * scale {
        return Err(Error::InvalidArgument(format!("{what}: weight is not positive semidefinite (min eig {min_eig:.3e})")));
    }
    Ok(())
}

impl CostSpec {
    pub fn new(
        q_state: DMatrix<f64>,
        q_terminal: DMatrix<f64>,
        r_input: DMatrix<f64>,
        r_rate: DMatrix<f64>,
        refs: Vec<DVector<f64>>,
    ) -> Result<Self> {
        check_psd(&q_state, "CostSpec q_state")?;
        check_psd(&q_terminal, "CostSpec q_terminal")?;
        check_psd(&r_input, "CostSpec r_input")?;
        check_psd(&r_rate, "CostSpec r_rate")?;
        if refs.is_empty() {
            return Err(Error::InvalidArgument("CostSpec: need one reference per horizon stage".into()));
        }
        let n = q_state.nrows();
        if q_terminal.nrows() != n || refs.iter().any(|r| r.len() != n) {
            return Err(dim_err("CostSpec refs", n, refs[0].len()));
        }
        Ok(Self {
            q_state,
            q_terminal,
            r_input,
            r_rate,
            refs,
        })
    }

    pub fn horizon(&self) -> usize {
        self.refs.len()
    }

    fn stage_weight(&self, t: usize) -> &DMatrix<f64> {
        if t + 1 == self.horizon() {
            &self.q_terminal
        } else {
            &self.q_state
        }
    }
}

#[derive(Debug, Clone)]
pub struct MpccProblem {
    pub lc: LCModel,
    pub horizon: usize,
    pub x0: DVector<f64>,
    pub cost: CostSpec,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    /// Previously applied input, anchoring the first rate term.
    pub u_prev: DVector<f64>,
    /// Strong-stationarity precondition probe, when available; gates the
    /// stationarity certificate.
    pub conditions: Option<ConditionReport>,
}

pub fn build_mpcc(
    lc: &LCModel,
    cost: CostSpec,
    x0: DVector<f64>,
    horizon: usize,
    u_lo: DVector<f64>,
    u_hi: DVector<f64>,
    u_prev: DVector<f64>,
) -> Result<MpccProblem> {
    let n = lc.state_dim();
    let m = lc.input_dim();
    if horizon < 1 {
        return Err(Error::InvalidArgument("build_mpcc: horizon must be >= 1".into()));
    }
    if cost.horizon() != horizon {
        return Err(dim_err("build_mpcc refs", horizon, cost.horizon()));
    }
    if x0.len() != n {
        return Err(dim_err("build_mpcc x0", n, x0.len()));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("build_mpcc: non-finite initial state".into()));
    }
    if cost.q_state.nrows() != n || cost.r_input.nrows() != m || cost.r_rate.nrows() != m {
        return Err(dim_err("build_mpcc cost dims", format!("n={n}, m={m}"), "weights"));
    }
    if u_lo.len() != m || u_hi.len() != m || u_prev.len() != m {
        return Err(dim_err("build_mpcc bounds", m, u_lo.len()));
    }
    if u_lo.iter().zip(u_hi.iter()).any(|(l, h)| l > h) {
        return Err(Error::InvalidArgument("build_mpcc: input bounds out of order".into()));
    }
    Ok(MpccProblem {
        lc: lc.clone(),
        horizon,
        x0,
        cost,
        u_lo,
        u_hi,
        u_prev,
        conditions: None,
    })
}

impl MpccProblem {
    pub fn num_vars(&self) -> usize {
        // (u, x, w) stacks of the NLP; x0 is fixed data
        self.horizon * (self.lc.input_dim() + self.lc.state_dim() + self.lc.comp_dim())
    }

    pub fn with_conditions(mut self, report: ConditionReport) -> Self {
        self.conditions = Some(report);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveStatus {
    /// KKT residual and complementarity within tolerance.
    Stationary,
    /// Feasible point, certificate not satisfied (or not computed).
    Feasible,
    Failed(String),
}

/// Full-space multipliers of the MPCC written with variables `(x, u, w)`.
#[derive(Debug, Clone)]
pub struct Multipliers {
    /// Dynamics equality multipliers, one n-vector per stage.
    pub nu: Vec<DVector<f64>>,
    pub lam_lo: Vec<DVector<f64>>,
    pub lam_hi: Vec<DVector<f64>>,
    /// Multipliers of `w_t >= 0`.
    pub xi_w: Vec<DVector<f64>>,
    /// Multipliers of `s_t >= 0`.
    pub xi_s: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct MpccSolution {
    /// `T+1` states including `x0`.
    pub x_traj: Vec<DVector<f64>>,
    pub u_traj: Vec<DVector<f64>>,
    pub w_traj: Vec<DVector<f64>>,
    pub multipliers: Option<Multipliers>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub comp_violation: f64,
    pub status: SolveStatus,
    /// Complementarity violation recorded after each homotopy stage.
    pub stage_comp: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveOpts {
    pub tol: f64,
    pub comp_tol: f64,
    pub tau_schedule: Vec<f64>,
    pub max_sqp_iters: usize,
    /// Rollout budget of the dividing-rectangles baseline.
    pub direct_budget: usize,
    pub shooting_iters: usize,
}

impl Default for SolveOpts {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            comp_tol: 1e-8,
            tau_schedule: (1..=8).map(|k| 10f64.powi(-k)).collect(),
            max_sqp_iters: 40,
            direct_budget: 5000,
            shooting_iters: 400,
        }
    }
}

/// Stage cost of one transition, exactly as written in the cost definition.
fn stage_cost(cost: &CostSpec, t: usize, x_next: &DVector<f64>, u: &DVector<f64>, u_prev: &DVector<f64>) -> f64 {
    let dx = x_next - &cost.refs[t];
    let du = u - u_prev;
    (dx.transpose() * cost.stage_weight(t) * &dx)[(0, 0)]
        + (u.transpose() * &cost.r_input * u)[(0, 0)]
        + (du.transpose() * &cost.r_rate * &du)[(0, 0)]
}

/// Direct objective evaluation by summation over the trajectory; the oracle
/// for the condensed quadratic form.
pub fn objective_of_traj(problem: &MpccProblem, x_traj: &[DVector<f64>], u_traj: &[DVector<f64>]) -> Result<f64> {
    let t_len = problem.horizon;
    if x_traj.len() != t_len + 1 || u_traj.len() != t_len {
        return Err(dim_err("objective_of_traj", format!("{} states / {t_len} inputs", t_len + 1), format!("{} / {}", x_traj.len(), u_traj.len())));
    }
    let mut total = 0.0;
    for t in 0..t_len {
        let prev = if t == 0 { &problem.u_prev } else { &u_traj[t - 1] };
        total += stage_cost(&problem.cost, t, &x_traj[t + 1], &u_traj[t], prev);
    }
    Ok(total)
}

/// Condensed representation over `theta = (u_stack, w_stack)`.
pub(crate) struct Condensed {
    pub t: usize,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    /// States `x_1..x_T`: `x_stack = gx theta + gx0`.
    pub gx: DMatrix<f64>,
    pub gx0: DVector<f64>,
    /// Slacks `s_0..s_{T-1}`: `s_stack = gs theta + gs0`.
    pub gs: DMatrix<f64>,
    pub gs0: DVector<f64>,
    /// Objective `J = 1/2 theta' p theta + q' theta + c0`.
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub c0: f64,
}

impl Condensed {
    pub fn dim(&self) -> usize {
        self.t * (self.m + self.l)
    }

    pub fn u_of(&self, theta: &DVector<f64>, t: usize) -> DVector<f64> {
        theta.rows(t * self.m, self.m).clone_owned()
    }

    pub fn w_of(&self, theta: &DVector<f64>, t: usize) -> DVector<f64> {
        theta.rows(self.t * self.m + t * self.l, self.l).clone_owned()
    }

    pub fn states_of(&self, x0: &DVector<f64>, theta: &DVector<f64>) -> Vec<DVector<f64>> {
        let stack = &self.gx * theta + &self.gx0;
        let mut out = Vec::with_capacity(self.t + 1);
        out.push(x0.clone());
        for t in 0..self.t {
            out.push(stack.rows(t * self.n, self.n).clone_owned());
        }
        out
    }

    pub fn slacks_of(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.gs * theta + &self.gs0
    }

    pub fn objective_of(&self, theta: &DVector<f64>) -> f64 {
        0.5 * (theta.transpose() * &self.p * theta)[(0, 0)] + self.q.dot(theta) + self.c0
    }

    pub fn gradient_of(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.p * theta + &self.q
    }
}

/// Accumulate `(c theta + c_const)' wt (c theta + c_const)` into `(p, q, c0)`.
fn add_quadratic(
    p: &mut DMatrix<f64>,
    q: &mut DVector<f64>,
    c0: &mut f64,
    c: &DMatrix<f64>,
    c_const: &DVector<f64>,
    wt: &DMatrix<f64>,
) {
    let wc = wt * c;
    *p += 2.0 * c.transpose() * &wc;
    *q += 2.0 * wc.transpose() * c_const;
    *c0 += (c_const.transpose() * wt * c_const)[(0, 0)];
}

pub(crate) fn condense(problem: &MpccProblem) -> Condensed {
    let t_len = problem.horizon;
    let (n, m, l) = (problem.lc.state_dim(), problem.lc.input_dim(), problem.lc.comp_dim());
    let dim = t_len * (m + l);
    let w_off = t_len * m;

    // x stack by forward recursion
    let mut gx = DMatrix::zeros(t_len * n, dim);
    let mut gx0 = DVector::zeros(t_len * n);
    let mut prev_rows: Option<(DMatrix<f64>, DVector<f64>)> = None;
    for t in 0..t_len {
        let mut rows = DMatrix::zeros(n, dim);
        let mut base = DVector::zeros(n);
        if let Some((pr, pb)) = &prev_rows {
            rows += &problem.lc.a * pr;
            base += &problem.lc.a * pb;
        } else {
            base += &problem.lc.a * &problem.x0;
        }
        base += &problem.lc.d;
        rows.view_mut((0, t * m), (n, m)).copy_from(&problem.lc.b_u);
        if l > 0 {
            rows.view_mut((0, w_off + t * l), (n, l)).copy_from(&problem.lc.b_w);
        }
        gx.view_mut((t * n, 0), (n, dim)).copy_from(&rows);
        gx0.rows_mut(t * n, n).copy_from(&base);
        prev_rows = Some((rows, base));
    }

    // slack stack
    let mut gs = DMatrix::zeros(t_len * l, dim);
    let mut gs0 = DVector::zeros(t_len * l);
    for t in 0..t_len {
        if l == 0 {
            break;
        }
        let mut rows = DMatrix::zeros(l, dim);
        let mut base = problem.lc.e.clone();
        if t == 0 {
            base += &problem.lc.e_x * &problem.x0;
        } else {
            rows += &problem.lc.e_x * gx.view(((t - 1) * n, 0), (n, dim));
            base += &problem.lc.e_x * gx0.rows((t - 1) * n, n);
        }
        rows.view_mut((0, t * m), (l, m)).copy_from(&problem.lc.e_u);
        let mut wblk = rows.view_mut((0, w_off + t * l), (l, l));
        wblk += &problem.lc.e_w;
        gs.view_mut((t * l, 0), (l, dim)).copy_from(&rows);
        gs0.rows_mut(t * l, l).copy_from(&base);
    }

    // objective
    let mut p = DMatrix::zeros(dim, dim);
    let mut q = DVector::zeros(dim);
    let mut c0 = 0.0;
    for t in 0..t_len {
        // tracking term on x_{t+1}
        let c = gx.view((t * n, 0), (n, dim)).clone_owned();
        let cc = gx0.rows(t * n, n) - &problem.cost.refs[t];
        add_quadratic(&mut p, &mut q, &mut c0, &c, &cc, problem.cost.stage_weight(t));
        // input term
        let mut cu = DMatrix::zeros(m, dim);
        cu.view_mut((0, t * m), (m, m)).copy_from(&DMatrix::identity(m, m));
        add_quadratic(&mut p, &mut q, &mut c0, &cu, &DVector::zeros(m), &problem.cost.r_input);
        // rate term
        let mut cd = DMatrix::zeros(m, dim);
        cd.view_mut((0, t * m), (m, m)).copy_from(&DMatrix::identity(m, m));
        let mut dc = DVector::zeros(m);
        if t == 0 {
            dc -= &problem.u_prev;
        } else {
            cd.view_mut((0, (t - 1) * m), (m, m)).copy_from(&(-DMatrix::identity(m, m)));
        }
        add_quadratic(&mut p, &mut q, &mut c0, &cd, &dc, &problem.cost.r_rate);
    }
    // exact symmetrization against accumulation round-off
    let p = (&p + p.transpose()) * 0.5;

    Condensed {
        t: t_len,
        n,
        m,
        l,
        gx,
        gx0,
        gs,
        gs0,
        p,
        q,
        c0,
    }
}

/// Solve the MPCC with the homotopy SQP solver (the default method).
pub fn solve_mpcc(problem: &MpccProblem, opts: &SolveOpts) -> Result<MpccSolution> {
    sqp::SqpMpccSolver.solve(problem, opts, None)
}

/// Dividing-rectangles baseline over the input box.
pub fn baseline_solver(problem: &MpccProblem) -> Result<MpccSolution> {
    direct::DirectSolver.solve(problem, &SolveOpts::default(), None)
}

/// Result of [`certify_stationarity`].
#[derive(Debug, Clone)]
pub struct Certificate {
    pub residual: f64,
    pub comp_violation: f64,
    pub pass: bool,
    pub reason: Option<String>,
}

/// Evaluate the exact-MPCC KKT residual at a solution: stationarity of the
/// full-space Lagrangian in `(x, u, w)`, primal feasibility, multiplier sign
/// conditions (nonnegativity on biactive complementarity pairs), and
/// complementary slackness. Passing additionally requires the model-side
/// preconditions: strict lower bounds enforced and the condition report
/// holding.
pub fn certify_stationarity(problem: &MpccProblem, solution: &MpccSolution, tol: f64) -> Result<Certificate> {
    let t_len = problem.horizon;
    let (m, l) = (problem.lc.input_dim(), problem.lc.comp_dim());
    if solution.x_traj.len() != t_len + 1 || solution.u_traj.len() != t_len || solution.w_traj.len() != t_len {
        return Err(dim_err("certify_stationarity", format!("horizon {t_len}"), "trajectory lengths"));
    }
    // primal feasibility
    let mut primal = 0.0f64;
    if (&solution.x_traj[0] - &problem.x0).amax() > 1e-6 {
        return Err(Error::InvalidArgument("certify_stationarity: solution does not start at x0".into()));
    }
    let mut slacks = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let pred = &problem.lc.a * &solution.x_traj[t]
            + &problem.lc.b_u * &solution.u_traj[t]
            + &problem.lc.b_w * &solution.w_traj[t]
            + &problem.lc.d;
        primal = primal.max((&solution.x_traj[t + 1] - pred).amax());
        for i in 0..m {
            primal = primal.max(problem.u_lo[i] - solution.u_traj[t][i]);
            primal = primal.max(solution.u_traj[t][i] - problem.u_hi[i]);
        }
        for i in 0..l {
            primal = primal.max(-solution.w_traj[t][i]);
        }
        let s = problem.lc.slack(&solution.x_traj[t], &solution.u_traj[t], &solution.w_traj[t]);
        for i in 0..l {
            primal = primal.max(-s[i]);
        }
        slacks.push(s);
    }
    if primal > 1e-6 {
        return Err(Error::InvalidArgument(format!("certify_stationarity: solution infeasible (violation {primal:.3e})")));
    }
    let mut comp = 0.0f64;
    for t in 0..t_len {
        for i in 0..l {
            comp = comp.max((solution.w_traj[t][i] * slacks[t][i]).abs());
        }
    }

    let Some(mul) = &solution.multipliers else {
        return Ok(Certificate {
            residual: f64::INFINITY,
            comp_violation: comp,
            pass: false,
            reason: Some("no multipliers available".into()),
        });
    };

    // stationarity of L = J + nu'(dynamics) - lam_lo'(u-lo) - lam_hi'(hi-u)
    //                      - xi_w' w - xi_s' s
    let mut residual = 0.0f64;
    let cost = &problem.cost;
    // x blocks, k = 1..T
    for k in 1..=t_len {
        let wt = cost.stage_weight(k - 1);
        let mut g = 2.0 * wt * (&solution.x_traj[k] - &cost.refs[k - 1]);
        g += &mul.nu[k - 1];
        if k < t_len {
            g -= problem.lc.a.transpose() * &mul.nu[k];
            g -= problem.lc.e_x.transpose() * &mul.xi_s[k];
        }
        residual = residual.max(g.amax());
    }
    // u blocks
    for t in 0..t_len {
        let prev = if t == 0 { &problem.u_prev } else { &solution.u_traj[t - 1] };
        let mut g = 2.0 * &cost.r_input * &solution.u_traj[t] + 2.0 * &cost.r_rate * (&solution.u_traj[t] - prev);
        if t + 1 < t_len {
            g -= 2.0 * &cost.r_rate * (&solution.u_traj[t + 1] - &solution.u_traj[t]);
        }
        g -= problem.lc.b_u.transpose() * &mul.nu[t];
        g -= problem.lc.e_u.transpose() * &mul.xi_s[t];
        g -= &mul.lam_lo[t];
        g += &mul.lam_hi[t];
        residual = residual.max(g.amax());
    }
    // w blocks
    for t in 0..t_len {
        let mut g = -(problem.lc.b_w.transpose() * &mul.nu[t]);
        g -= &mul.xi_w[t];
        g -= problem.lc.e_w.transpose() * &mul.xi_s[t];
        residual = residual.max(g.amax());
    }
    // dual feasibility and complementary slackness
    let act_tol = 1e-7;
    for t in 0..t_len {
        for i in 0..m {
            residual = residual.max(-mul.lam_lo[t][i]).max(-mul.lam_hi[t][i]);
            residual = residual.max((mul.lam_lo[t][i] * (solution.u_traj[t][i] - problem.u_lo[i])).abs());
            residual = residual.max((mul.lam_hi[t][i] * (problem.u_hi[i] - solution.u_traj[t][i])).abs());
        }
        for i in 0..l {
            residual = residual.max((mul.xi_w[t][i] * solution.w_traj[t][i]).abs());
            residual = residual.max((mul.xi_s[t][i] * slacks[t][i]).abs());
            // sign conditions only on biactive pairs (strong stationarity)
            if solution.w_traj[t][i].abs() <= act_tol && slacks[t][i].abs() <= act_tol {
                residual = residual.max(-mul.xi_w[t][i]).max(-mul.xi_s[t][i]);
            }
        }
    }
    residual = residual.max(primal);

    let mut pass = residual <= tol && comp <= 1e-8;
    let mut reason = None;
    if pass {
        if !problem.lc.strict_lb {
            pass = false;
            reason = Some("conditions unverified: strict lower bounds not enforced".into());
        } else if l > 0 {
            match &problem.conditions {
                Some(report) if report.all_hold() => {}
                Some(_) => {
                    pass = false;
                    reason = Some("conditions unverified: condition report does not hold".into());
                }
                None => {
                    pass = false;
                    reason = Some("conditions unverified: no condition report attached".into());
                }
            }
        }
    } else {
        reason = Some(format!("kkt residual {residual:.3e} / comp {comp:.3e} above tolerance"));
    }
    Ok(Certificate {
        residual,
        comp_violation: comp,
        pass,
        reason,
    })
}

/// One row of the closed-loop log (raw plant units).
#[derive(Debug, Clone)]
pub struct MpcLogRow {
    pub step: usize,
    pub time_s: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub reference: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct MpcLog {
    pub rows: Vec<MpcLogRow>,
    /// Closed-loop tracking cost accumulated in normalized coordinates with
    /// the configured stage weights (identical bookkeeping for every solver).
    pub closed_loop_cost: f64,
    pub median_solve_time: f64,
    pub fallbacks: usize,
}

/// Receding-horizon configuration. Weights act in the model's normalized
/// coordinates; references, bounds and initial input are in raw plant units.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub horizon: usize,
    pub steps: usize,
    pub q_state: DMatrix<f64>,
    pub q_terminal: DMatrix<f64>,
    pub r_input: DMatrix<f64>,
    pub r_rate: DMatrix<f64>,
    /// Raw-unit reference states, at least `steps + horizon + 1` entries.
    pub reference: Vec<DVector<f64>>,
    pub u_lo: DVector<f64>,
    pub u_hi: DVector<f64>,
    pub u_init: DVector<f64>,
}

/// Run receding-horizon control of `plant` using the LC model as predictor.
/// Each step solves the horizon problem from the measured state, applies the
/// first input, and warm-starts the next solve with the shifted solution.
/// Solver failure at a step falls back to the previously applied input.
pub fn mpc_run(
    lc: &LCModel,
    norm: &Normalization,
    solver: &dyn HorizonSolver,
    opts: &SolveOpts,
    plant: &dyn System,
    x_init: &DVector<f64>,
    cfg: &MpcConfig,
) -> Result<MpcLog> {
    let n = lc.state_dim();
    let m = lc.input_dim();
    if cfg.horizon < 1 || cfg.steps < cfg.horizon {
        return Err(Error::InvalidArgument("mpc_run: need 1 <= horizon <= steps".into()));
    }
    if cfg.reference.len() < cfg.steps + cfg.horizon {
        return Err(Error::InvalidArgument(format!(
            "mpc_run: reference too short ({} < {})",
            cfg.reference.len(),
            cfg.steps + cfg.horizon
        )));
    }
    if plant.state_dim() != n || plant.input_dim() != m {
        return Err(dim_err("mpc_run plant", format!("n={n}, m={m}"), format!("n={}, m={}", plant.state_dim(), plant.input_dim())));
    }
    let u_lo_n = norm.norm_u(&cfg.u_lo);
    let u_hi_n = norm.norm_u(&cfg.u_hi);

    let mut x = x_init.clone();
    let mut u_prev_raw = cfg.u_init.clone();
    let mut warm: Option<MpccSolution> = None;
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut times = Vec::with_capacity(cfg.steps);
    let mut closed_loop_cost = 0.0;
    let mut fallbacks = 0usize;

    for step in 0..cfg.steps {
        let refs_n: Vec<DVector<f64>> = (0..cfg.horizon)
            .map(|t| norm.norm_x(&cfg.reference[step + 1 + t]))
            .collect();
        let cost = CostSpec::new(
            cfg.q_state.clone(),
            cfg.q_terminal.clone(),
            cfg.r_input.clone(),
            cfg.r_rate.clone(),
            refs_n,
        )?;
        let problem = build_mpcc(
            lc,
            cost,
            norm.norm_x(&x),
            cfg.horizon,
            u_lo_n.clone(),
            u_hi_n.clone(),
            norm.norm_u(&u_prev_raw),
        )?;
        let started = Instant::now();
        let attempt = solver.solve(&problem, opts, warm.as_ref());
        let elapsed = started.elapsed().as_secs_f64();
        times.push(elapsed);

        let (u_raw, objective, kkt_residual, fallback) = match &attempt {
            Ok(sol) if !matches!(sol.status, SolveStatus::Failed(_)) => {
                (norm.denorm_u(&sol.u_traj[0]), sol.objective, sol.kkt_residual, false)
            }
            _ => {
                fallbacks += 1;
                (u_prev_raw.clone(), f64::NAN, f64::INFINITY, true)
            }
        };
        if let Ok(sol) = attempt {
            if !matches!(sol.status, SolveStatus::Failed(_)) {
                warm = Some(sol);
            }
        }

        let x_next = plant.step(&x, &u_raw)?;
        // normalized-coordinate bookkeeping of the realized stage cost
        let dx = norm.norm_x(&x_next) - norm.norm_x(&cfg.reference[step + 1]);
        let un = norm.norm_u(&u_raw);
        let du = &un - norm.norm_u(&u_prev_raw);
        closed_loop_cost += (dx.transpose() * &cfg.q_state * &dx)[(0, 0)]
            + (un.transpose() * &cfg.r_input * &un)[(0, 0)]
            + (du.transpose() * &cfg.r_rate * &du)[(0, 0)];

        rows.push(MpcLogRow {
            step,
            time_s: elapsed,
            x: x.clone(),
            u: u_raw.clone(),
            reference: cfg.reference[step + 1].clone(),
            objective,
            kkt_residual,
            fallback,
        });
        x = x_next;
        u_prev_raw = u_raw;
    }

    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let median_solve_time = times[times.len() / 2];
    Ok(MpcLog {
        rows,
        closed_loop_cost,
        median_solve_time,
        fallbacks,
    })
}

/// Simulate the LC model open loop under an input sequence, returning states,
/// multipliers `w`, and the objective of the induced trajectory.
pub(crate) fn simulate_inputs(problem: &MpccProblem, u_traj: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, f64)> {
    let mut x_traj = Vec::with_capacity(problem.horizon + 1);
    let mut w_traj = Vec::with_capacity(problem.horizon);
    x_traj.push(problem.x0.clone());
    for u in u_traj {
        let (x_next, w) = problem.lc.step_lcp(x_traj.last().expect("non-empty"), u)?;
        x_traj.push(x_next);
        w_traj.push(w);
    }
    let objective = objective_of_traj(problem, &x_traj, u_traj)?;
    Ok((x_traj, w_traj, objective))
}
