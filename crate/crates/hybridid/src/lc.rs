//! Linear-complementarity form of a trained model.
//!
//! The consolidated QP's KKT system gives dynamics
//! `x+ = A x + B_u u + B_w w + d` with
//! `0 <= E_w w + E_x x + E_u u + e  perp  w >= 0`,
//! where `w` is the QP multiplier vector. Simulation solves the generating QP
//! and reads off the multipliers, which keeps `w` consistent with the QP even
//! when multipliers are not unique.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::model::DiffMaxAffineModel;
use crate::qp::{self, ParametricQP, QpStatus};

/// Generating QP carried alongside the LC matrices so the model can be
/// simulated after deserialization.
#[derive(Debug, Clone, PartialEq)]
pub struct LcSource {
    pub qp: ParametricQP,
    /// Buffer-layer map, `W = [I -I]`.
    pub w_map: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LCModel {
    pub a: DMatrix<f64>,
    pub b_u: DMatrix<f64>,
    pub b_w: DMatrix<f64>,
    pub d: DVector<f64>,
    pub e_w: DMatrix<f64>,
    pub e_x: DMatrix<f64>,
    pub e_u: DMatrix<f64>,
    pub e: DVector<f64>,
    /// Contiguous `(start, len)` row ranges of `E_w`: one block per alpha
    /// state component, then one per beta state component.
    pub block_structure: Vec<(usize, usize)>,
    /// Absent only for hand-built pure-linear models (`comp_dim() == 0`).
    pub source: Option<LcSource>,
    /// Whether the generating model had its strict lower bounds enforced.
    pub strict_lb: bool,
}

/// Structural certificate for the strong-stationarity preconditions.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    /// Condition 1 probe: max successor discrepancy across re-solves with
    /// permuted constraint orderings.
    pub cond1_max_successor_gap: f64,
    /// Condition 2 in its block-diagonal generalization.
    pub cond2_block_diagonal: bool,
    pub cond2_off_block_mass: f64,
    /// True when each diagonal block is elementwise (1x1 with positive
    /// entry), i.e. the strict form of Condition 2 rather than the
    /// block-diagonal generalization.
    pub cond2_elementwise: bool,
    /// Fraction of samples with some strictly negative `D_i x + G_i u + e_i`.
    pub cond3_fraction_satisfied: f64,
    /// Min over samples of (componentwise max piece - target) on both sides.
    pub strict_lb_margin: f64,
}

impl ConditionReport {
    /// All three conditions verified on the probed samples.
    pub fn all_hold(&self) -> bool {
        self.cond1_max_successor_gap <= 1e-8 && self.cond2_block_diagonal && self.cond3_fraction_satisfied >= 1.0
    }
}

impl LCModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_u.ncols()
    }

    pub fn comp_dim(&self) -> usize {
        self.e.len()
    }

    /// Pure-linear model `x+ = A x + B_u u + d` with no complementarity rows.
    pub fn linear(a: DMatrix<f64>, b_u: DMatrix<f64>, d: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b_u.ncols();
        if a.ncols() != n || b_u.nrows() != n || d.len() != n {
            return Err(dim_err("LCModel::linear", format!("A {n}x{n}, B_u {n}x{m}, d {n}"), format!("A {}x{}, B_u {}x{}, d {}", a.nrows(), a.ncols(), b_u.nrows(), b_u.ncols(), d.len())));
        }
        Ok(Self {
            a,
            b_u,
            b_w: DMatrix::zeros(n, 0),
            d,
            e_w: DMatrix::zeros(0, 0),
            e_x: DMatrix::zeros(0, n),
            e_u: DMatrix::zeros(0, m),
            e: DVector::zeros(0),
            block_structure: Vec::new(),
            source: None,
            strict_lb: true,
        })
    }

    /// Recheck the defining relations against the stored source QP.
    pub fn validate(&self) -> Result<()> {
        let Some(source) = &self.source else {
            if self.comp_dim() != 0 {
                return Err(Error::InvalidModel("LCModel without a source QP must have no complementarity rows".into()));
            }
            return Ok(());
        };
        let qp = &source.qp;
        let w = &source.w_map;
        let s = qp.num_vars();
        if w.nrows() != self.state_dim() || w.ncols() != s {
            return Err(dim_err("LCModel w_map", format!("{}x{s}", self.state_dim()), format!("{}x{}", w.nrows(), w.ncols())));
        }
        let qinv_ft = solve_spd(&qp.q, &qp.f.transpose())?;
        let qinv_r = solve_spd(&qp.q, &qp.r)?;
        let qinv_p = solve_spd_vec(&qp.q, &qp.p)?;
        let tol = 1e-12 * self.e_w.amax().max(1.0);
        let checks = [
            ((&qp.f * &qinv_ft) - &self.e_w).amax(),
            ((-(w * &qinv_ft)) - &self.b_w).amax(),
            ((-(w * &qinv_p)) - &self.d).amax(),
            ((&qp.f * &qinv_p + &qp.h) - &self.e).amax(),
            ((&qp.f * &qinv_r - &qp.g).columns(0, self.state_dim()).clone_owned() - &self.e_x).amax(),
        ];
        if checks.iter().any(|&v| v > tol) {
            return Err(Error::InvalidModel(format!("LC matrices do not reproduce their definitions (max gap {:.3e})", checks.iter().cloned().fold(0.0f64, f64::max))));
        }
        if (&self.e_w - self.e_w.transpose()).amax() > tol {
            return Err(Error::InvalidModel("E_w is not symmetric".into()));
        }
        let total: usize = self.block_structure.iter().map(|&(_, len)| len).sum();
        if total != self.comp_dim() {
            return Err(Error::InvalidModel("block structure does not cover all rows".into()));
        }
        Ok(())
    }

    /// One complementarity step: solve the generating QP at `(x, u)` and use
    /// its multipliers as `w`.
    pub fn step_lcp(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if x.len() != self.state_dim() {
            return Err(dim_err("step_lcp x", self.state_dim(), x.len()));
        }
        if u.len() != self.input_dim() {
            return Err(dim_err("step_lcp u", self.input_dim(), u.len()));
        }
        let Some(source) = &self.source else {
            let x_next = &self.a * x + &self.b_u * u + &self.d;
            return Ok((x_next, DVector::zeros(0)));
        };
        let y = DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
        let sol = qp::solve_qp(&source.qp, &y, qp::DEFAULT_TOL)?;
        if sol.status != QpStatus::Optimal {
            return Err(Error::Solver(format!(
                "step_lcp: generating QP returned {:?}; LC model is corrupted",
                sol.status
            )));
        }
        let w = sol.lambda;
        let x_next = &self.a * x + &self.b_u * u + &self.b_w * &w + &self.d;
        Ok((x_next, w))
    }

    /// Complementarity slack `E_w w + E_x x + E_u u + e`.
    pub fn slack(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        &self.e_w * w + &self.e_x * x + &self.e_u * u + &self.e
    }
}

fn solve_spd(q: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    q.clone()
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::Qp("Cholesky of Q failed".into()))
}

fn solve_spd_vec(q: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    q.clone()
        .cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::Qp("Cholesky of Q failed".into()))
}

/// Build the LC model of a trained model from its consolidated QP.
pub fn extract_lc(model: &DiffMaxAffineModel) -> Result<LCModel> {
    let n = model.n;
    let m = model.m;
    let qp = qp::build_consolidated_qp(model);
    let s = qp.num_vars();
    let l = qp.num_constraints();

    let mut w_map = DMatrix::zeros(n, s);
    for k in 0..n {
        w_map[(k, k)] = 1.0;
        w_map[(k, n + k)] = -1.0;
    }

    let qinv_ft = solve_spd(&qp.q, &qp.f.transpose())?;
    let qinv_r = solve_spd(&qp.q, &qp.r)?;
    let qinv_p = solve_spd_vec(&qp.q, &qp.p)?;

    let minus_wqr = -(&w_map * &qinv_r);
    let a = minus_wqr.columns(0, n).clone_owned();
    let b_u = minus_wqr.columns(n, m).clone_owned();
    let b_w = -(&w_map * &qinv_ft);
    let d = -(&w_map * &qinv_p);
    let e_w = &qp.f * &qinv_ft;
    let exu = &qp.f * &qinv_r - &qp.g;
    let e_x = exu.columns(0, n).clone_owned();
    let e_u = exu.columns(n, m).clone_owned();
    let e = &qp.f * &qinv_p + &qp.h;

    let mut block_structure = Vec::with_capacity(2 * n);
    let mut start = 0usize;
    for _ in 0..n {
        block_structure.push((start, model.nr_alpha()));
        start += model.nr_alpha();
    }
    for _ in 0..n {
        block_structure.push((start, model.nr_beta()));
        start += model.nr_beta();
    }
    debug_assert_eq!(start, l);

    Ok(LCModel {
        a,
        b_u,
        b_w,
        d,
        e_w,
        e_x,
        e_u,
        e,
        block_structure,
        source: Some(LcSource { qp, w_map }),
        strict_lb: model.strict_lower_bounds_enforced(),
    })
}

/// Probe Conditions 1-3 on the given samples.
pub fn check_conditions(lc: &LCModel, model: &DiffMaxAffineModel, samples: &[(DVector<f64>, DVector<f64>)]) -> Result<ConditionReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("check_conditions: need at least one sample".into()));
    }
    let l = lc.comp_dim();

    // Condition 2: structural, sample independent.
    let mut off_block = 0.0f64;
    for i in 0..l {
        for j in 0..l {
            let same_block = lc
                .block_structure
                .iter()
                .any(|&(s, len)| i >= s && i < s + len && j >= s && j < s + len);
            if !same_block {
                off_block = off_block.max(lc.e_w[(i, j)].abs());
            }
        }
    }
    let cond2_block_diagonal = off_block <= 1e-12;
    let cond2_elementwise = lc.block_structure.iter().all(|&(s, len)| len == 1 && lc.e_w[(s, s)] > 0.0);

    // Condition 1: behavioral; re-solve with reversed constraint ordering and
    // compare successors. Strict convexity makes z* unique, so the successor
    // must agree even when multipliers differ.
    let source = lc
        .source
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("check_conditions: LCModel has no source QP".into()))?;
    let perm: Vec<usize> = (0..l).rev().collect();
    let qp_perm = source.qp.permute_rows(&perm)?;
    let mut cond1_gap = 0.0f64;
    let mut cond3_hits = 0usize;
    let mut strict_margin = f64::INFINITY;

    for (x, u) in samples {
        let (x_next, _) = lc.step_lcp(x, u)?;
        let y = DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied());
        let sol2 = qp::solve_qp(&qp_perm, &y, qp::DEFAULT_TOL)?;
        if sol2.status != QpStatus::Optimal {
            return Err(Error::Solver("check_conditions: permuted QP failed".into()));
        }
        // map permuted multipliers back to original row order
        let mut w2 = DVector::zeros(l);
        for (dst, &src) in perm.iter().enumerate() {
            w2[src] = sol2.lambda[dst];
        }
        let x_next2 = &lc.a * x + &lc.b_u * u + &lc.b_w * &w2 + &lc.d;
        cond1_gap = cond1_gap.max((x_next - x_next2).amax());

        // Condition 3: some affine row strictly negative at this sample.
        let aff = &lc.e_x * x + &lc.e_u * u + &lc.e;
        if aff.iter().any(|&v| v < 0.0) {
            cond3_hits += 1;
        }

        // margin of the strict lower bound (target below componentwise max)
        for (pieces, target) in [(&model.alpha_pieces, &model.psi), (&model.beta_pieces, &model.phi)] {
            let tv = target.eval(x, u);
            let mut max_v = pieces[0].eval(x, u);
            for p in pieces.iter().skip(1) {
                max_v.zip_apply(&p.eval(x, u), |m, v| *m = m.max(v));
            }
            for k in 0..tv.len() {
                strict_margin = strict_margin.min(max_v[k] - tv[k]);
            }
        }
    }

    Ok(ConditionReport {
        cond1_max_successor_gap: cond1_gap,
        cond2_block_diagonal,
        cond2_off_block_mass: off_block,
        cond2_elementwise,
        cond3_fraction_satisfied: cond3_hits as f64 / samples.len() as f64,
        strict_lb_margin: strict_margin,
    })
}
