//! Single-shooting mode: optimize over the input stack only, simulating
//! states and complementarity variables with the closed-form LC step, using a
//! projected Barzilai-Borwein gradient method with finite differences.

use nalgebra::DVector;

use super::registry::HorizonSolver;
use super::{simulate_inputs, MpccProblem, MpccSolution, SolveOpts, SolveStatus};
use crate::error::Result;

pub struct ShootingSolver;

impl HorizonSolver for ShootingSolver {
    fn name(&self) -> &'static str {
        "shooting"
    }

    fn solve(&self, problem: &MpccProblem, opts: &SolveOpts, warm: Option<&MpccSolution>) -> Result<MpccSolution> {
        solve_impl(problem, opts, warm)
    }
}

fn unstack(problem: &MpccProblem, flat: &DVector<f64>) -> Vec<DVector<f64>> {
    let m = problem.lc.input_dim();
    (0..problem.horizon).map(|t| flat.rows(t * m, m).clone_owned()).collect()
}

fn project(problem: &MpccProblem, flat: &mut DVector<f64>) {
    let m = problem.lc.input_dim();
    for t in 0..problem.horizon {
        for i in 0..m {
            flat[t * m + i] = flat[t * m + i].clamp(problem.u_lo[i], problem.u_hi[i]);
        }
    }
}

fn solve_impl(problem: &MpccProblem, opts: &SolveOpts, warm: Option<&MpccSolution>) -> Result<MpccSolution> {
    let m = problem.lc.input_dim();
    let dim = problem.horizon * m;
    let objective = |flat: &DVector<f64>| -> f64 {
        match simulate_inputs(problem, &unstack(problem, flat)) {
            Ok((_, _, obj)) => obj,
            Err(_) => f64::INFINITY,
        }
    };

    let mut u = DVector::zeros(dim);
    match warm {
        Some(prev) if prev.u_traj.len() == problem.horizon && prev.u_traj[0].len() == m => {
            for t in 0..problem.horizon {
                let src = if t + 1 < problem.horizon { &prev.u_traj[t + 1] } else { &prev.u_traj[t] };
                u.rows_mut(t * m, m).copy_from(src);
            }
        }
        _ => {
            for t in 0..problem.horizon {
                u.rows_mut(t * m, m).copy_from(&problem.u_prev);
            }
        }
    }
    project(problem, &mut u);

    let fd = 1e-6;
    let grad = |flat: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(dim);
        for k in 0..dim {
            let mut hi = flat.clone();
            hi[k] += fd;
            let mut lo = flat.clone();
            lo[k] -= fd;
            g[k] = (objective(&hi) - objective(&lo)) / (2.0 * fd);
        }
        g
    };

    let mut f_cur = objective(&u);
    let mut g_cur = grad(&u);
    let mut step = 1.0 / (1.0 + g_cur.amax());
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;

    for _ in 0..opts.shooting_iters {
        // projected-gradient stationarity check
        let mut trial = &u - &g_cur;
        project(problem, &mut trial);
        if (&trial - &u).amax() <= 1e-12 {
            break;
        }
        if let Some((s, y)) = &prev {
            let sy = s.dot(y);
            if sy > 1e-14 {
                step = (s.norm_squared() / sy).clamp(1e-8, 1e4);
            }
        }
        let mut accepted = false;
        let mut alpha = step;
        for _ in 0..40 {
            let mut cand = &u - &g_cur * alpha;
            project(problem, &mut cand);
            let f_cand = objective(&cand);
            let pred = g_cur.dot(&(&u - &cand));
            if f_cand <= f_cur - 1e-4 * pred.max(0.0) && f_cand < f_cur {
                let g_new = grad(&cand);
                prev = Some((&cand - &u, &g_new - &g_cur));
                u = cand;
                f_cur = f_cand;
                g_cur = g_new;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let u_traj = unstack(problem, &u);
    let (x_traj, w_traj, objective) = simulate_inputs(problem, &u_traj)?;
    let mut comp = 0.0f64;
    for (t, w) in w_traj.iter().enumerate() {
        let s = problem.lc.slack(&x_traj[t], &u_traj[t], w);
        for i in 0..w.len() {
            comp = comp.max((w[i] * s[i]).abs());
        }
    }
    Ok(MpccSolution {
        x_traj,
        u_traj,
        w_traj,
        multipliers: None,
        objective,
        kkt_residual: f64::INFINITY,
        comp_violation: comp,
        status: SolveStatus::Feasible,
        stage_comp: Vec::new(),
    })
}
