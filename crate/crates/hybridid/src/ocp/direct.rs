//! Derivative-free baseline: deterministic dividing-rectangles search over
//! the stacked input box, with states and complementarity variables
//! eliminated by forward simulation, plus a short pattern-search refinement
//! within the same evaluation budget.

use nalgebra::DVector;

use super::registry::HorizonSolver;
use super::{simulate_inputs, MpccProblem, MpccSolution, SolveOpts, SolveStatus};
use crate::error::Result;

pub struct DirectSolver;

impl HorizonSolver for DirectSolver {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn solve(&self, problem: &MpccProblem, opts: &SolveOpts, _warm: Option<&MpccSolution>) -> Result<MpccSolution> {
        solve_impl(problem, opts)
    }
}

struct Rect {
    center: Vec<f64>,
    levels: Vec<u32>,
    value: f64,
}

impl Rect {
    /// Euclidean norm of the half-side lengths.
    fn size(&self) -> f64 {
        self.levels
            .iter()
            .map(|&lv| {
                let half = 0.5 * 3f64.powi(-(lv as i32));
                half * half
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn unit_to_box(problem: &MpccProblem, c: &[f64]) -> Vec<DVector<f64>> {
    let m = problem.lc.input_dim();
    (0..problem.horizon)
        .map(|t| {
            DVector::from_fn(m, |i, _| {
                let k = t * m + i;
                problem.u_lo[i] + c[k] * (problem.u_hi[i] - problem.u_lo[i])
            })
        })
        .collect()
}

fn solve_impl(problem: &MpccProblem, opts: &SolveOpts) -> Result<MpccSolution> {
    let dim = problem.horizon * problem.lc.input_dim();
    let budget = opts.direct_budget.max(16);
    let evals = std::cell::Cell::new(0usize);
    let eval = |c: &[f64]| -> f64 {
        evals.set(evals.get() + 1);
        match simulate_inputs(problem, &unit_to_box(problem, c)) {
            Ok((_, _, obj)) => obj,
            Err(_) => f64::INFINITY,
        }
    };

    // --- dividing rectangles over the unit cube (80% of the budget) ---
    let direct_budget = budget * 4 / 5;
    let first = Rect {
        center: vec![0.5; dim],
        levels: vec![0; dim],
        value: 0.0,
    };
    let mut rects = vec![Rect {
        value: eval(&first.center),
        ..first
    }];
    let mut best_idx = 0usize;

    while evals.get() + 2 <= direct_budget {
        // potentially optimal: lower convex hull of (size, best value) over
        // the distinct size classes
        let mut classes: Vec<(u64, usize)> = Vec::new(); // (size bits, argmin idx)
        for (i, r) in rects.iter().enumerate() {
            let bits = r.size().to_bits();
            match classes.iter_mut().find(|(b, _)| *b == bits) {
                Some(entry) => {
                    if r.value < rects[entry.1].value {
                        entry.1 = i;
                    }
                }
                None => classes.push((bits, i)),
            }
        }
        classes.sort_by(|a, b| f64::from_bits(a.0).partial_cmp(&f64::from_bits(b.0)).expect("finite sizes"));
        // Graham-style scan keeping the lower-left hull
        let mut hull: Vec<usize> = Vec::new();
        for &(bits, idx) in &classes {
            let (sz, val) = (f64::from_bits(bits), rects[idx].value);
            while let Some(&last) = hull.last() {
                let (ls, lv) = (rects[last].size(), rects[last].value);
                if hull.len() >= 2 {
                    let prev = hull[hull.len() - 2];
                    let (ps, pv) = (rects[prev].size(), rects[prev].value);
                    // drop `last` if it lies above the segment prev->current
                    if (lv - pv) * (sz - ps) >= (val - pv) * (ls - ps) {
                        hull.pop();
                        continue;
                    }
                }
                if lv >= val && ls <= sz {
                    hull.pop();
                    continue;
                }
                break;
            }
            hull.push(idx);
        }
        // keep only non-dominated: ascending size must give descending value
        let mut selected: Vec<usize> = Vec::new();
        let mut best_val = f64::INFINITY;
        for &idx in hull.iter().rev() {
            if rects[idx].value <= best_val {
                selected.push(idx);
                best_val = rects[idx].value;
            }
        }

        let mut any_split = false;
        for idx in selected {
            if evals.get() + 2 > direct_budget {
                break;
            }
            // split along the lowest-index longest side
            let min_level = *rects[idx].levels.iter().min().expect("non-empty");
            let axis = rects[idx].levels.iter().position(|&lv| lv == min_level).expect("exists");
            let offset = 3f64.powi(-(min_level as i32 + 1));
            let mut left = rects[idx].center.clone();
            left[axis] -= offset;
            let mut right = rects[idx].center.clone();
            right[axis] += offset;
            let lv = eval(&left);
            let rv = eval(&right);
            let mut lev = rects[idx].levels.clone();
            lev[axis] += 1;
            rects[idx].levels = lev.clone();
            rects.push(Rect {
                center: left,
                levels: lev.clone(),
                value: lv,
            });
            rects.push(Rect {
                center: right,
                levels: lev,
                value: rv,
            });
            any_split = true;
        }
        if !any_split {
            break;
        }
        best_idx = (0..rects.len())
            .min_by(|&a, &b| rects[a].value.partial_cmp(&rects[b].value).expect("comparable"))
            .expect("non-empty");
    }
    best_idx = (0..rects.len())
        .min_by(|&a, &b| rects[a].value.partial_cmp(&rects[b].value).expect("comparable"))
        .unwrap_or(best_idx);

    // --- deterministic pattern-search refinement (remaining budget) ---
    let mut best_c = rects[best_idx].center.clone();
    let mut best_v = rects[best_idx].value;
    let mut step = 0.25f64;
    while step > 1e-7 && evals.get() + 2 * dim <= budget {
        let mut improved = false;
        for k in 0..dim {
            for dir in [-1.0, 1.0] {
                let mut cand = best_c.clone();
                cand[k] = (cand[k] + dir * step).clamp(0.0, 1.0);
                let v = eval(&cand);
                if v < best_v {
                    best_v = v;
                    best_c = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    let u_traj = unit_to_box(problem, &best_c);
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
