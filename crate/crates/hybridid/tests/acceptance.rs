//! Acceptance suite: one pass/fail line per criterion, backed by oracles that
//! are coded independently of the library paths they check (closed-form
//! evaluation vs QP solve, finite differences, exhaustive branch enumeration,
//! dense-QP reference, plant-level closed-loop cost parity). The per-criterion
//! report strings contain only deterministic quantities; criterion 10 runs the
//! whole suite twice and requires bitwise-identical reports.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hybridid::bench::{make_dataset, sine_sweep, Excitation, SigmaPwaSystem, System, TwoTankSystem};
use hybridid::ident::{bfr, open_loop_rollout, polish_model, train, train_restarts, TrainConfig};
use hybridid::lc::{check_conditions, extract_lc, LCModel};
use hybridid::model::{AffinePiece, DiffMaxAffineModel};
use hybridid::ocp::{
    build_mpcc, mpc_run, objective_of_traj, solve_mpcc, CostSpec, MpcConfig, MpccProblem,
    MpccSolution, SolveOpts, SolveStatus,
};
use hybridid::qp::{build_consolidated_qp, solve_qp, ParametricQP, DEFAULT_TOL};

const GLOBAL_SEED: u64 = 11;

struct Criterion {
    pass: bool,
    detail: String,
    seconds: f64,
}

fn random_point(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DVector<f64>, DVector<f64>) {
    let x = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let u = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
    (x, u)
}

// ---------------------------------------------------------------------------
// Criterion 1: closed-form forward vs consolidated-QP solve + [I -I].
// ---------------------------------------------------------------------------
fn criterion1(seed: u64) -> Criterion {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_gap = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=2);
        let nra = rng.random_range(1..=7);
        let nrb = rng.random_range(1..=7);
        let model = DiffMaxAffineModel::random(n, m, nra, nrb, 0.5, &mut rng);
        let qp = build_consolidated_qp(&model);
        for _ in 0..200 {
            let (x, u) = random_point(&mut rng, n, m);
            let (fwd, _) = model.forward(&x, &u).unwrap();
            let y = DVector::from_iterator(n + m, x.iter().chain(u.iter()).copied());
            let sol = solve_qp(&qp, &y, DEFAULT_TOL).unwrap();
            let via_qp = sol.z_star.rows(0, n) - sol.z_star.rows(n, n);
            max_gap = max_gap.max((fwd - via_qp).amax());
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    Criterion {
        pass: max_gap <= 1e-8 && seconds < 30.0,
        detail: format!("max forward/QP gap {max_gap:.3e} over 50 models x 200 points"),
        seconds,
    }
}

// ---------------------------------------------------------------------------
// Criterion 2: LC successor vs forward; E_w block structure and spectrum.
// ---------------------------------------------------------------------------
fn criterion2(seed: u64) -> Criterion {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_gap = 0.0f64;
    let mut max_off = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for _ in 0..50 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=2);
        let nra = rng.random_range(1..=7);
        let nrb = rng.random_range(1..=7);
        let model = DiffMaxAffineModel::random(n, m, nra, nrb, 0.5, &mut rng);
        let lc = extract_lc(&model).unwrap();
        for _ in 0..40 {
            let (x, u) = random_point(&mut rng, n, m);
            let (fwd, _) = model.forward(&x, &u).unwrap();
            let (x_next, _) = lc.step_lcp(&x, &u).unwrap();
            max_gap = max_gap.max((fwd - x_next).amax());
        }
        let l = lc.comp_dim();
        let mut in_block = vec![vec![false; l]; l];
        for &(start, len) in &lc.block_structure {
            for i in start..start + len {
                for j in start..start + len {
                    in_block[i][j] = true;
                }
            }
        }
        for i in 0..l {
            for j in 0..l {
                if !in_block[i][j] {
                    max_off = max_off.max(lc.e_w[(i, j)].abs());
                }
            }
        }
        let sym = (&lc.e_w + lc.e_w.transpose()) * 0.5;
        let eigs = sym.symmetric_eigen().eigenvalues;
        min_eig = min_eig.min(eigs.iter().fold(f64::INFINITY, |a, &b| a.min(b)));
    }
    let seconds = started.elapsed().as_secs_f64();
    Criterion {
        pass: max_gap <= 1e-8 && max_off <= 1e-12 && min_eig >= -1e-10,
        detail: format!(
            "max step_lcp/forward gap {max_gap:.3e}, E_w off-block mass {max_off:.3e}, E_w min eig {min_eig:.3e}"
        ),
        seconds,
    }
}

// ---------------------------------------------------------------------------
// Criterion 3: analytic gradient vs central finite differences at tie-free
// points.
// ---------------------------------------------------------------------------

/// Smallest gap between the best and second-best affine functions (pieces and
/// target) across components and sides; a point is tie-free when this is
/// clearly positive.
fn tie_gap(model: &DiffMaxAffineModel, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let side_gap = |pieces: &[AffinePiece], target: &AffinePiece| -> f64 {
        let mut gap = f64::INFINITY;
        for k in 0..model.n {
            let mut vals: Vec<f64> = pieces.iter().map(|p| p.eval(x, u)[k]).collect();
            vals.push(target.eval(x, u)[k]);
            vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
            gap = gap.min(vals[0] - vals[1]);
        }
        gap
    };
    side_gap(&model.alpha_pieces, &model.psi).min(side_gap(&model.beta_pieces, &model.phi))
}

fn criterion3(seed: u64) -> Criterion {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = DiffMaxAffineModel::random(2, 1, 3, 3, 0.5, &mut rng);
    let params = model.pack_params();
    let dim = params.len();
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut points = 0usize;
    while points < 20 {
        let (x, u) = random_point(&mut rng, 2, 1);
        if tie_gap(&model, &x, &u) < 1e-3 {
            continue;
        }
        points += 1;
        let target = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        // loss(p) = || f_p(x,u) - target ||^2
        let loss = |p: &DVector<f64>| -> f64 {
            let m = model.unpack_params(p).unwrap();
            let (f, _) = m.forward(&x, &u).unwrap();
            (f - &target).norm_squared()
        };
        let (f0, _) = model.forward(&x, &u).unwrap();
        let grad = model.subgrad_params(&x, &u, &(2.0 * (f0 - &target))).unwrap();
        let grad = model.pack_grad(&grad);
        for _ in 0..10 {
            let i = rng.random_range(0..dim);
            let h = 1e-6 * (1.0 + params[i].abs());
            let mut pp = params.clone();
            pp[i] += h;
            let mut pm = params.clone();
            pm[i] -= h;
            let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            max_rel = max_rel.max(rel);
            checked += 1;
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    Criterion {
        pass: max_rel <= 1e-4,
        detail: format!("max FD relative error {max_rel:.3e} over 20 points x {} params", checked / 20),
        seconds,
    }
}

// ---------------------------------------------------------------------------
// Criterion 4: hand-built models reproduce |x| and a 2-region 2-D PWA map;
// dimension bookkeeping of the consolidated QP.
// ---------------------------------------------------------------------------
fn piece(a: DMatrix<f64>, b: DMatrix<f64>, c: DVector<f64>) -> AffinePiece {
    AffinePiece { a, b, c }
}

fn criterion4(_seed: u64) -> Criterion {
    let started = Instant::now();

    // f(x) = |x| = max(x, -x) - max(0): n=1, m=1 with zero input columns.
    let low = |p: &AffinePiece| {
        let mut t = p.clone();
        t.c.apply(|v| *v -= 100.0);
        t
    };
    let p_pos = piece(DMatrix::from_row_slice(1, 1, &[1.0]), DMatrix::zeros(1, 1), DVector::zeros(1));
    let p_neg = piece(DMatrix::from_row_slice(1, 1, &[-1.0]), DMatrix::zeros(1, 1), DVector::zeros(1));
    let p_zero = piece(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DVector::zeros(1));
    let abs_model = DiffMaxAffineModel::with_identity_hessians(
        vec![p_pos.clone(), p_neg],
        vec![p_zero.clone()],
        low(&p_pos),
        low(&p_zero),
    )
    .unwrap();
    let mut abs_err = 0.0f64;
    let u0 = DVector::zeros(1);
    for i in 0..100 {
        let xv = -3.0 + 6.0 * (i as f64) / 99.0;
        let x = DVector::from_row_slice(&[xv]);
        let (f, _) = abs_model.forward(&x, &u0).unwrap();
        abs_err = abs_err.max((f[0] - xv.abs()).abs());
    }

    // 2-region 2-D PWA: f(x) = M x + g * max(c'x, 0) with g >= 0, realized as
    // the componentwise max of {M x, (M + g c') x} minus zero.
    let mmat = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.8]);
    let g = DVector::from_row_slice(&[1.0, 0.5]);
    let c = DVector::from_row_slice(&[1.0, -1.0]);
    let m_plus = &mmat + &g * c.transpose();
    let p_a = piece(mmat.clone(), DMatrix::zeros(2, 1), DVector::zeros(2));
    let p_b = piece(m_plus, DMatrix::zeros(2, 1), DVector::zeros(2));
    let p_zero2 = piece(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), DVector::zeros(2));
    let pwa_model = DiffMaxAffineModel::with_identity_hessians(
        vec![p_a.clone(), p_b],
        vec![p_zero2.clone()],
        low(&p_a),
        low(&p_zero2),
    )
    .unwrap();
    let u02 = DVector::zeros(1);
    let mut pwa_err = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let x = DVector::from_row_slice(&[
                -2.0 + 4.0 * (i as f64) / 9.0,
                -2.0 + 4.0 * (j as f64) / 9.0,
            ]);
            let truth = &mmat * &x + &g * (c.dot(&x)).max(0.0);
            let (f, _) = pwa_model.forward(&x, &u02).unwrap();
            pwa_err = pwa_err.max((f - truth).amax());
        }
    }

    // Dimension bookkeeping: l = 2*n*r constraint rows, s = 2*n variables.
    let mut dims_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [1usize, 2] {
        for r in [1usize, 3, 7] {
            let model = DiffMaxAffineModel::random(n, 1, r, r, 0.3, &mut rng);
            let qp = build_consolidated_qp(&model);
            dims_ok &= qp.num_constraints() == 2 * n * r && qp.num_vars() == 2 * n;
        }
    }

    let seconds = started.elapsed().as_secs_f64();
    Criterion {
        pass: abs_err <= 1e-12 && pwa_err <= 1e-12 && dims_ok,
        detail: format!(
            "|x| max err {abs_err:.3e}, 2-region PWA max err {pwa_err:.3e}, dims l=2nr/s=2n {}",
            if dims_ok { "verified" } else { "VIOLATED" }
        ),
        seconds,
    }
}

// ---------------------------------------------------------------------------
// Criterion 5: Sigma_PWA identification at full scale.
// ---------------------------------------------------------------------------

/// BFR of a model's 1000-step open-loop rollout against a noise-free unseen
/// trajectory of the plant; diverged rollouts score zero.
fn rollout_bfr(
    model: &DiffMaxAffineModel,
    x0: &DVector<f64>,
    u_seq: &[DVector<f64>],
    truth: &DMatrix<f64>,
) -> f64 {
    let roll = open_loop_rollout(model, x0, u_seq).unwrap();
    if roll.diverged_at.is_some() {
        return 0.0;
    }
    let x_hat = DMatrix::from_columns(&roll.states[1..]);
    bfr(&x_hat, truth).unwrap().clamp(0.0, 1.0)
}

fn criterion5(seed: u64) -> Criterion {
    let started = Instant::now();
    let sys = SigmaPwaSystem::generate(seed);
    let excitation = Excitation::uniform_from_box(&sys.input_box());
    let train_set = make_dataset(&sys, 5000, &excitation, 0.01, seed + 1).unwrap();
    let config = TrainConfig {
        nr_alpha: 7,
        nr_beta: 7,
        restarts: 10,
        lambda_reg: 1e-3,
        seed,
        ..TrainConfig::default()
    };
    let results = train_restarts(&config, &train_set).unwrap();

    // unseen noise-free 1000-step trajectory of the same plant
    let test_set = make_dataset(&sys, 1000, &excitation, 0.0, seed + 2).unwrap();
    let x0 = test_set.samples[0].x.clone();
    let u_seq: Vec<DVector<f64>> = test_set.samples.iter().map(|s| s.u.clone()).collect();
    let truth_cols: Vec<DVector<f64>> = test_set.samples.iter().map(|s| s.x_next.clone()).collect();
    let truth = DMatrix::from_columns(&truth_cols);

    let mut bfrs: Vec<f64> = results
        .iter()
        .map(|r| {
            let polished = polish_model(&config, &train_set, &r.model).unwrap();
            rollout_bfr(&polished, &x0, &u_seq, &truth)
        })
        .collect();
    bfrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = 0.5 * (bfrs[4] + bfrs[5]);
    let best = bfrs[bfrs.len() - 1];
    let seconds = started.elapsed().as_secs_f64();
    Criterion {
        pass: median >= 0.85 && best >= 0.90 && seconds < 900.0,
        detail: format!("1000-step rollout BFR over 10 restarts: median {median:.4}, best {best:.4}"),
        seconds,
    }
}

// ---------------------------------------------------------------------------
// Criterion 6: n_r sensitivity trend on Sigma_PWA-class data.
// ---------------------------------------------------------------------------
fn criterion6(seed: u64) -> Criterion {
    let started = Instant::now();
    let sys = SigmaPwaSystem::generate(seed + 10);
    let excitation = Excitation::uniform_from_box(&sys.input_box());
    let train_set = make_dataset(&sys, 1500, &excitation, 0.01, seed + 11).unwrap();
    // 200-step unseen noise-free rollout: multi-step prediction separates the
    // capacity levels far better than one-step error
    let test_set = make_dataset(&sys, 200, &excitation, 0.0, seed + 12).unwrap();
    let x0 = test_set.samples[0].x.clone();
    let u_seq: Vec<DVector<f64>> = test_set.samples.iter().map(|s| s.u.clone()).collect();
    let truth = DMatrix::from_columns(
        &test_set.samples.iter().map(|s| s.x_next.clone()).collect::<Vec<_>>(),
    );

    let mut best_bfr = Vec::new();
    for nr in [2usize, 3, 5, 7, 11, 17] {
        let config = TrainConfig {
            nr_alpha: nr,
            nr_beta: nr,
            restarts: 4,
            max_epochs: 800,
            seed,
            ..TrainConfig::default()
        };
        let results = train_restarts(&config, &train_set).unwrap();
        let best = results
            .iter()
            .map(|r| {
                let polished = polish_model(&config, &train_set, &r.model).unwrap();
                rollout_bfr(&polished, &x0, &u_seq, &truth)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        best_bfr.push((nr, best));
    }
    let at = |nr: usize| best_bfr.iter().find(|(r, _)| *r == nr).unwrap().1;
    let pass = at(11).max(at(17)) >= at(2);
    let listing = best_bfr
        .iter()
        .map(|(nr, b)| format!("nr={nr}: {b:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    let seconds = started.elapsed().as_secs_f64();
    Criterion {
        pass,
        detail: format!("best 200-step rollout BFR {listing}"),
        seconds,
    }
}

// ---------------------------------------------------------------------------
// Criterion 7: independent KKT evaluator + exhaustive branch enumeration.
// ---------------------------------------------------------------------------

/// Independently coded KKT residual of the full-space MPCC Lagrangian
/// L = J + sum nu'(x+ - Ax - Bu u - Bw w - d) - lam_lo'(u-lo) - lam_hi'(hi-u)
///       - xi_w' w - xi_s' s, with sign conditions on biactive pairs.
/// Returns (residual, complementarity violation).
fn independent_kkt(problem: &MpccProblem, sol: &MpccSolution) -> (f64, f64) {
    let t_len = problem.horizon;
    let lc = &problem.lc;
    let (m, l) = (lc.input_dim(), lc.comp_dim());
    let mul = match &sol.multipliers {
        Some(m) => m,
        None => return (f64::INFINITY, f64::INFINITY),
    };
    let cost = &problem.cost;
    let slacks: Vec<DVector<f64>> = (0..t_len)
        .map(|t| lc.slack(&sol.x_traj[t], &sol.u_traj[t], &sol.w_traj[t]))
        .collect();

    let mut res = 0.0f64;
    // primal feasibility
    for t in 0..t_len {
        let pred = &lc.a * &sol.x_traj[t] + &lc.b_u * &sol.u_traj[t] + &lc.b_w * &sol.w_traj[t] + &lc.d;
        res = res.max((&sol.x_traj[t + 1] - pred).amax());
        for i in 0..m {
            res = res.max(problem.u_lo[i] - sol.u_traj[t][i]);
            res = res.max(sol.u_traj[t][i] - problem.u_hi[i]);
        }
        for i in 0..l {
            res = res.max(-sol.w_traj[t][i]).max(-slacks[t][i]);
        }
    }
    // stationarity in x_k, k = 1..T
    for k in 1..=t_len {
        let wt = if k == t_len { &cost.q_terminal } else { &cost.q_state };
        let mut grad = 2.0 * wt * (&sol.x_traj[k] - &cost.refs[k - 1]) + &mul.nu[k - 1];
        if k < t_len {
            grad -= lc.a.transpose() * &mul.nu[k] + lc.e_x.transpose() * &mul.xi_s[k];
        }
        res = res.max(grad.amax());
    }
    // stationarity in u_t
    for t in 0..t_len {
        let prev = if t == 0 { &problem.u_prev } else { &sol.u_traj[t - 1] };
        let mut grad = 2.0 * &cost.r_input * &sol.u_traj[t]
            + 2.0 * &cost.r_rate * (&sol.u_traj[t] - prev)
            - lc.b_u.transpose() * &mul.nu[t]
            - lc.e_u.transpose() * &mul.xi_s[t]
            - &mul.lam_lo[t]
            + &mul.lam_hi[t];
        if t + 1 < t_len {
            grad -= 2.0 * &cost.r_rate * (&sol.u_traj[t + 1] - &sol.u_traj[t]);
        }
        res = res.max(grad.amax());
    }
    // stationarity in w_t
    for t in 0..t_len {
        let grad = -(lc.b_w.transpose() * &mul.nu[t]) - lc.e_w.transpose() * &mul.xi_s[t] - &mul.xi_w[t];
        res = res.max(grad.amax());
    }
    // dual feasibility + complementary slackness; strong-stationarity signs
    // on biactive pairs only
    let mut comp = 0.0f64;
    for t in 0..t_len {
        for i in 0..m {
            res = res.max(-mul.lam_lo[t][i]).max(-mul.lam_hi[t][i]);
            res = res.max((mul.lam_lo[t][i] * (sol.u_traj[t][i] - problem.u_lo[i])).abs());
            res = res.max((mul.lam_hi[t][i] * (problem.u_hi[i] - sol.u_traj[t][i])).abs());
        }
        for i in 0..l {
            comp = comp.max((sol.w_traj[t][i] * slacks[t][i]).abs());
            res = res.max((mul.xi_w[t][i] * sol.w_traj[t][i]).abs());
            res = res.max((mul.xi_s[t][i] * slacks[t][i]).abs());
            if sol.w_traj[t][i].abs() <= 1e-7 && slacks[t][i].abs() <= 1e-7 {
                res = res.max(-mul.xi_w[t][i]).max(-mul.xi_s[t][i]);
            }
        }
    }
    (res, comp)
}

/// Objective as a function of theta = (u-stack, w-stack) by simulating the LC
/// dynamics with the given w, then summing stage costs.
fn theta_objective(problem: &MpccProblem, theta: &DVector<f64>) -> f64 {
    let (t_len, m, l) = (problem.horizon, problem.lc.input_dim(), problem.lc.comp_dim());
    let mut x_traj = vec![problem.x0.clone()];
    let mut u_traj = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let u = DVector::from_fn(m, |i, _| theta[t * m + i]);
        let w = DVector::from_fn(l, |i, _| theta[t_len * m + t * l + i]);
        let x = x_traj.last().unwrap();
        x_traj.push(&problem.lc.a * x + &problem.lc.b_u * &u + &problem.lc.b_w * &w + &problem.lc.d);
        u_traj.push(u);
    }
    objective_of_traj(problem, &x_traj, &u_traj).unwrap()
}

/// Stacked slack vector s(theta), affine in theta.
fn theta_slacks(problem: &MpccProblem, theta: &DVector<f64>) -> DVector<f64> {
    let (t_len, m, l) = (problem.horizon, problem.lc.input_dim(), problem.lc.comp_dim());
    let mut x = problem.x0.clone();
    let mut out = DVector::zeros(t_len * l);
    for t in 0..t_len {
        let u = DVector::from_fn(m, |i, _| theta[t * m + i]);
        let w = DVector::from_fn(l, |i, _| theta[t_len * m + t * l + i]);
        out.rows_mut(t * l, l).copy_from(&problem.lc.slack(&x, &u, &w));
        x = &problem.lc.a * &x + &problem.lc.b_u * &u + &problem.lc.b_w * &w + &problem.lc.d;
    }
    out
}

/// Recover the exact quadratic f(theta) = 0.5 theta'Q theta + g'theta + c from
/// point evaluations (exact because f is a quadratic polynomial).
fn quadratic_of(dim: usize, f: impl Fn(&DVector<f64>) -> f64) -> (DMatrix<f64>, DVector<f64>, f64) {
    let zero = DVector::zeros(dim);
    let c = f(&zero);
    let unit = |i: usize, s: f64| {
        let mut v = DVector::zeros(dim);
        v[i] = s;
        v
    };
    let mut g = DVector::zeros(dim);
    let mut q = DMatrix::zeros(dim, dim);
    let fp: Vec<f64> = (0..dim).map(|i| f(&unit(i, 1.0))).collect();
    let fm: Vec<f64> = (0..dim).map(|i| f(&unit(i, -1.0))).collect();
    for i in 0..dim {
        g[i] = 0.5 * (fp[i] - fm[i]);
        q[(i, i)] = fp[i] + fm[i] - 2.0 * c;
    }
    for i in 0..dim {
        for j in i + 1..dim {
            let mut v = DVector::zeros(dim);
            v[i] = 1.0;
            v[j] = 1.0;
            let qij = f(&v) - fp[i] - fp[j] + c;
            q[(i, j)] = qij;
            q[(j, i)] = qij;
        }
    }
    (q, g, c)
}

/// Recover the exact affine map f(theta) = S theta + s0 from evaluations.
fn affine_of(dim: usize, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let s0 = f(&DVector::zeros(dim));
    let rows = s0.len();
    let mut s = DMatrix::zeros(rows, dim);
    for j in 0..dim {
        let mut v = DVector::zeros(dim);
        v[j] = 1.0;
        s.set_column(j, &(f(&v) - &s0));
    }
    (s, s0)
}

/// Minimum of 0.5 theta'Q theta + g'theta + c on the affine set C theta = b,
/// by solving the equality KKT system in least squares and keeping the value
/// only when the system is actually consistent (a stationary point exists).
fn equality_min(
    q: &DMatrix<f64>,
    g: &DVector<f64>,
    c: f64,
    cons: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<(DVector<f64>, f64)> {
    let dim = q.nrows();
    let k = cons.nrows();
    let mut kkt = DMatrix::zeros(dim + k, dim + k);
    kkt.view_mut((0, 0), (dim, dim)).copy_from(q);
    kkt.view_mut((0, dim), (dim, k)).copy_from(&cons.transpose());
    kkt.view_mut((dim, 0), (k, dim)).copy_from(cons);
    let mut rhs = DVector::zeros(dim + k);
    rhs.rows_mut(0, dim).copy_from(&(-g));
    rhs.rows_mut(dim, k).copy_from(b);
    let svd = kkt.svd(true, true);
    let sol = svd.solve(&rhs, 1e-10).ok()?;
    let theta = sol.rows(0, dim).into_owned();
    let nu = sol.rows(dim, k).into_owned();
    let scale = 1.0 + g.amax() + b.amax();
    if (q * &theta + g + cons.transpose() * nu).amax() > 1e-7 * scale {
        return None;
    }
    if (cons * &theta - b).amax() > 1e-8 * scale {
        return None;
    }
    let obj = 0.5 * (theta.transpose() * q * &theta)[(0, 0)] + g.dot(&theta) + c;
    Some((theta, obj))
}

/// Global MPCC optimum by exhaustive enumeration of complementarity branches
/// and input-bound activity patterns.
fn enumerate_optimum(problem: &MpccProblem) -> f64 {
    let (t_len, m, l) = (problem.horizon, problem.lc.input_dim(), problem.lc.comp_dim());
    let dim = t_len * (m + l);
    let npairs = t_len * l;
    let nu_vars = t_len * m;
    let (q, g, c) = quadratic_of(dim, |theta| theta_objective(problem, theta));
    let (s_mat, s0) = affine_of(dim, |theta| theta_slacks(problem, theta));

    let mut best = f64::INFINITY;
    let pow3 = 3usize.pow(nu_vars as u32);
    for branch in 0..(1usize << npairs) {
        for bounds in 0..pow3 {
            let mut rows: Vec<DVector<f64>> = Vec::new();
            let mut rhs: Vec<f64> = Vec::new();
            for j in 0..npairs {
                if branch & (1 << j) != 0 {
                    // w_j = 0
                    let mut row = DVector::zeros(dim);
                    row[nu_vars + j] = 1.0;
                    rows.push(row);
                    rhs.push(0.0);
                } else {
                    // s_j(theta) = 0
                    rows.push(s_mat.row(j).transpose());
                    rhs.push(-s0[j]);
                }
            }
            let mut code = bounds;
            for i in 0..nu_vars {
                let state = code % 3;
                code /= 3;
                if state > 0 {
                    let mut row = DVector::zeros(dim);
                    row[i] = 1.0;
                    rows.push(row);
                    let bnd = if state == 1 {
                        problem.u_lo[i % m]
                    } else {
                        problem.u_hi[i % m]
                    };
                    rhs.push(bnd);
                }
            }
            let cons = DMatrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>());
            let b = DVector::from_vec(rhs);
            let Some((theta, obj)) = equality_min(&q, &g, c, &cons, &b) else {
                continue;
            };
            // feasibility of the candidate
            let tol = 1e-7;
            let mut ok = true;
            for j in 0..npairs {
                ok &= theta[nu_vars + j] >= -tol;
            }
            let s = &s_mat * &theta + &s0;
            for j in 0..npairs {
                ok &= s[j] >= -tol;
            }
            for i in 0..nu_vars {
                ok &= theta[i] >= problem.u_lo[i % m] - tol && theta[i] <= problem.u_hi[i % m] + tol;
            }
            if ok && obj < best {
                best = obj;
            }
        }
    }
    best
}

/// Deterministically pick a small model whose LC conditions hold on a probe.
fn toy_problem(seed: u64, nr: usize, refs: Vec<DVector<f64>>) -> MpccProblem {
    let mut sub = 0u64;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + sub);
        let model = DiffMaxAffineModel::random(1, 1, nr, nr, 0.6, &mut rng);
        let lc = extract_lc(&model).unwrap();
        let probes: Vec<(DVector<f64>, DVector<f64>)> =
            (0..100).map(|_| random_point(&mut rng, 1, 1)).collect();
        let report = check_conditions(&lc, &model, &probes).unwrap();
        if report.all_hold() {
            let horizon = refs.len();
            let cost = CostSpec::new(
                DMatrix::identity(1, 1),
                DMatrix::identity(1, 1),
                DMatrix::from_element(1, 1, 0.1),
                DMatrix::from_element(1, 1, 0.01),
                refs,
            )
            .unwrap();
            let problem = build_mpcc(
                &lc,
                cost,
                DVector::from_row_slice(&[0.2]),
                horizon,
                DVector::from_element(1, -1.0),
                DVector::from_element(1, 1.0),
                DVector::zeros(1),
            )
            .unwrap();
            return problem.with_conditions(report);
        }
        sub += 1;
    }
}

fn criterion7(seed: u64) -> Criterion {
    let started = Instant::now();
    let refs = vec![DVector::from_row_slice(&[0.5]), DVector::from_row_slice(&[-0.3])];
    let opts = SolveOpts::default();
    let mut max_res = 0.0f64;
    let mut max_comp = 0.0f64;
    let mut max_obj_gap = 0.0f64;
    let mut stationary = 0usize;
    let mut solves = 0usize;
    // toy instances: l*T = 4 and 8 at T = 2
    for nr in [1usize, 2] {
        let problem = toy_problem(seed + nr as u64, nr, refs.clone());
        let sol = solve_mpcc(&problem, &opts).unwrap();
        solves += 1;
        if matches!(sol.status, SolveStatus::Stationary) {
            stationary += 1;
            let (res, comp) = independent_kkt(&problem, &sol);
            max_res = max_res.max(res);
            max_comp = max_comp.max(comp);
        }
        let oracle = enumerate_optimum(&problem);
        max_obj_gap = max_obj_gap.max((sol.objective - oracle).abs());
    }
    // additional stationary solves fed to the independent evaluator
    for k in 0..6u64 {
        let problem = toy_problem(seed + 100 + k, 1 + (k as usize % 2), refs.clone());
        let sol = solve_mpcc(&problem, &opts).unwrap();
        solves += 1;
        if matches!(sol.status, SolveStatus::Stationary) {
            stationary += 1;
            let (res, comp) = independent_kkt(&problem, &sol);
            max_res = max_res.max(res);
            max_comp = max_comp.max(comp);
        }
    }
    let seconds = started.elapsed().as_secs_f64();
    Criterion {
        pass: stationary == solves && max_res <= 1e-6 && max_comp <= 1e-8 && max_obj_gap <= 1e-6,
        detail: format!(
            "{stationary}/{solves} stationary, independent KKT residual {max_res:.3e}, comp {max_comp:.3e}, branch-enumeration objective gap {max_obj_gap:.3e}"
        ),
        seconds,
    }
}

// ---------------------------------------------------------------------------
// Criterion 8: degenerate LQ (l = 0) vs dense-QP reference.
// ---------------------------------------------------------------------------
fn criterion8(_seed: u64) -> Criterion {
    let started = Instant::now();
    let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.1, -0.2, 0.7]);
    let b_u = DMatrix::from_row_slice(2, 1, &[0.5, 0.1]);
    let d = DVector::from_row_slice(&[0.05, -0.02]);
    let lc = LCModel::linear(a, b_u, d).unwrap();
    // tight tolerance: the comparison against the dense QP is at 1e-8
    let opts = SolveOpts {
        tol: 1e-10,
        max_sqp_iters: 100,
        ..SolveOpts::default()
    };
    let mut max_u_gap = 0.0f64;
    let mut max_obj_gap = 0.0f64;
    for t_len in [1usize, 5, 10] {
        let refs: Vec<DVector<f64>> = (0..t_len)
            .map(|t| DVector::from_row_slice(&[0.4 * (0.3 * t as f64).sin(), 0.2]))
            .collect();
        let cost = CostSpec::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::from_element(1, 1, 0.1),
            DMatrix::from_element(1, 1, 0.01),
            refs,
        )
        .unwrap();
        let problem = build_mpcc(
            &lc,
            cost,
            DVector::from_row_slice(&[1.0, -0.5]),
            t_len,
            DVector::from_element(1, -1.0),
            DVector::from_element(1, 1.0),
            DVector::zeros(1),
        )
        .unwrap();
        let sol = solve_mpcc(&problem, &opts).unwrap();
        assert!(!matches!(sol.status, SolveStatus::Failed(_)));

        // dense-QP reference over the input stack alone
        let (q, g, c) = quadratic_of(t_len, |u| theta_objective(&problem, u));
        let mut f = DMatrix::zeros(2 * t_len, t_len);
        let mut h = DVector::zeros(2 * t_len);
        for i in 0..t_len {
            f[(i, i)] = 1.0;
            h[i] = 1.0;
            f[(t_len + i, i)] = -1.0;
            h[t_len + i] = 1.0;
        }
        let qp = ParametricQP::new(q.clone(), DMatrix::zeros(t_len, 0), g.clone(), f, DMatrix::zeros(2 * t_len, 0), h).unwrap();
        let dense = solve_qp(&qp, &DVector::zeros(0), DEFAULT_TOL).unwrap();
        let u_stack = DVector::from_fn(t_len, |i, _| sol.u_traj[i][0]);
        max_u_gap = max_u_gap.max((&u_stack - &dense.z_star).amax());
        let dense_obj = 0.5 * (dense.z_star.transpose() * &q * &dense.z_star)[(0, 0)] + g.dot(&dense.z_star) + c;
        max_obj_gap = max_obj_gap.max((sol.objective - dense_obj).abs());
    }
    let seconds = started.elapsed().as_secs_f64();
    Criterion {
        pass: max_u_gap <= 1e-8 && max_obj_gap <= 1e-8,
        detail: format!("T in {{1,5,10}}: max input gap {max_u_gap:.3e}, max objective gap {max_obj_gap:.3e} vs dense QP"),
        seconds,
    }
}

// ---------------------------------------------------------------------------
// Criterion 9: closed-loop MPC parity on the two-tank analog.
// ---------------------------------------------------------------------------
fn criterion9(seed: u64) -> Criterion {
    let started = Instant::now();
    let plant = TwoTankSystem::default();
    let excitation = Excitation::UniformWhite {
        lo: DVector::from_element(1, 0.8),
        hi: DVector::from_element(1, 1.3),
    };
    let dataset = make_dataset(&plant, 800, &excitation, 0.005, seed + 20).unwrap();
    let config = TrainConfig {
        nr_alpha: 3,
        nr_beta: 3,
        restarts: 3,
        max_epochs: 1000,
        seed,
        ..TrainConfig::default()
    };
    let (model, _report) = train(&config, &dataset).unwrap();
    let lc = extract_lc(&model).unwrap();

    let horizon = 7;
    let steps = 200;
    let total = steps + horizon + 1;
    // reference: steady states of a sine-sweep pump command in [0.95, 1.2]
    let reference: Vec<DVector<f64>> = (0..total)
        .map(|k| {
            let s = sine_sweep(k, total, 0.5, 3.0);
            plant.steady_state(1.075 + 0.125 * s)
        })
        .collect();
    let cfg = MpcConfig {
        horizon,
        steps,
        q_state: DMatrix::identity(2, 2),
        q_terminal: DMatrix::identity(2, 2),
        r_input: DMatrix::from_element(1, 1, 0.01),
        r_rate: DMatrix::from_element(1, 1, 0.001),
        reference,
        u_lo: DVector::from_element(1, 0.95),
        u_hi: DVector::from_element(1, 1.2),
        u_init: DVector::from_element(1, 1.075),
    };
    let x_init = plant.steady_state(1.075);
    // receding-horizon solves are warm-started, so a modest SQP iteration cap
    // per homotopy stage is enough and keeps the 2 x 200-step run fast
    let opts = SolveOpts {
        max_sqp_iters: 15,
        // the branch polish still drives complementarity to machine zero
        // from the 1e-4 endpoint, so the short schedule mainly saves time
        tau_schedule: (1..=4).map(|k| 10f64.powi(-k)).collect(),
        ..SolveOpts::default()
    };
    let sqp = hybridid::ocp::sqp::SqpMpccSolver;
    let direct = hybridid::ocp::direct::DirectSolver;
    let log_sqp = mpc_run(&lc, &model.normalization, &sqp, &opts, &plant, &x_init, &cfg).unwrap();
    let log_direct = mpc_run(&lc, &model.normalization, &direct, &opts, &plant, &x_init, &cfg).unwrap();

    let ratio = log_sqp.closed_loop_cost / log_direct.closed_loop_cost;
    let seconds = started.elapsed().as_secs_f64();
    Criterion {
        pass: ratio <= 1.02,
        detail: format!(
            "closed-loop cost sqp {:.6e} vs direct {:.6e} (ratio {:.4}), fallbacks {}; median solve time sqp {:.1} ms / direct {:.1} ms (informational)",
            log_sqp.closed_loop_cost,
            log_direct.closed_loop_cost,
            ratio,
            log_sqp.fallbacks,
            // the two timing figures are excluded from the determinism report
            log_sqp.median_solve_time * 1e3,
            log_direct.median_solve_time * 1e3,
        ),
        seconds,
    }
}

// ---------------------------------------------------------------------------
// Driver
// ---------------------------------------------------------------------------

/// Run criteria 1-9 and return (pass flags, deterministic report, timings).
/// Wall-clock figures are kept out of the report so criterion 10 can compare
/// two runs bytewise.
fn run_suite(seed: u64) -> (Vec<Criterion>, String) {
    let crits = vec![
        criterion1(seed),
        criterion2(seed),
        criterion3(seed),
        criterion4(seed),
        criterion5(seed),
        criterion6(seed),
        criterion7(seed),
        criterion8(seed),
        criterion9(seed),
    ];
    let report = crits
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let det = strip_informational(&c.detail);
            format!("criterion {}: {} — {det}", i + 1, if c.pass { "PASS" } else { "FAIL" })
        })
        .collect::<Vec<_>>()
        .join("\n");
    (crits, report)
}

/// Drop the informational (timing) tail of a detail line, if present.
fn strip_informational(detail: &str) -> String {
    match detail.find("; median solve time") {
        Some(pos) => detail[..pos].to_string(),
        None => detail.to_string(),
    }
}

/// Single-criterion probes for targeted debugging: `cargo test --test
/// acceptance probe_5 -- --ignored --nocapture`.
macro_rules! probe {
    ($name:ident, $f:ident) => {
        #[test]
        #[ignore]
        fn $name() {
            let c = $f(GLOBAL_SEED);
            println!("{}: {} [{:.1} s]", if c.pass { "PASS" } else { "FAIL" }, c.detail, c.seconds);
            assert!(c.pass, "{}", c.detail);
        }
    };
}
probe!(probe_1, criterion1);
probe!(probe_2, criterion2);
probe!(probe_3, criterion3);
probe!(probe_4, criterion4);
probe!(probe_5, criterion5);
probe!(probe_6, criterion6);
probe!(probe_7, criterion7);
probe!(probe_8, criterion8);
probe!(probe_9, criterion9);

#[test]
fn acceptance_criteria() {
    let (crits, report_a) = run_suite(GLOBAL_SEED);
    for (i, c) in crits.iter().enumerate() {
        println!(
            "criterion {}: {} — {} [{:.1} s]",
            i + 1,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail,
            c.seconds
        );
    }
    let started = Instant::now();
    let (_crits_b, report_b) = run_suite(GLOBAL_SEED);
    let deterministic = report_a == report_b;
    println!(
        "criterion 10: {} — reports of two consecutive runs {} [{:.1} s]",
        if deterministic { "PASS" } else { "FAIL" },
        if deterministic { "bitwise identical" } else { "DIFFER" },
        started.elapsed().as_secs_f64()
    );
    let mut failed: Vec<String> = crits
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.pass)
        .map(|(i, c)| format!("criterion {}: {}", i + 1, c.detail))
        .collect();
    if !deterministic {
        failed.push(format!(
            "criterion 10: reports differ\n--- run 1 ---\n{report_a}\n--- run 2 ---\n{report_b}"
        ));
    }
    assert!(failed.is_empty(), "failed acceptance criteria:\n{}", failed.join("\n"));
}
