//! Structured-text (JSON) serialization for models, LC models, benchmark
//! systems, and OCP problem/solution bundles.
//!
//! Every document carries a `format` version tag and uses row-major matrix
//! encoding. Serialization is deterministic, so write -> read -> write
//! produces byte-identical files.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bench::{SigmaPwaSystem, System, TwoTankSystem};
use crate::error::{Error, Result};
use crate::lc::{ConditionReport, LCModel, LcSource};
use crate::model::{AffinePiece, DiffMaxAffineModel, Normalization};
use crate::ocp::{CostSpec, MpccProblem, MpccSolution, Multipliers, SolveStatus};
use crate::qp::ParametricQP;

pub const MODEL_FORMAT: &str = "hybridid-model/1";
pub const LC_FORMAT: &str = "hybridid-lc/1";
pub const SYS_FORMAT: &str = "hybridid-sys/1";
pub const OCP_FORMAT: &str = "hybridid-ocp/1";

/// Row-major dense matrix encoding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatDoc {
    fn from_mat(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    fn to_mat(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Format(format!(
                "matrix payload has {} entries for shape {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn check_format(got: &str, want: &'static str) -> Result<()> {
    if got != want {
        return Err(Error::Format(format!(
            "unsupported format tag {got:?}, expected {want:?}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// difference-of-max-affine model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceDoc {
    pub a: MatDoc,
    pub b: MatDoc,
    pub c: Vec<f64>,
}

impl PieceDoc {
    fn from_piece(p: &AffinePiece) -> Self {
        Self {
            a: MatDoc::from_mat(&p.a),
            b: MatDoc::from_mat(&p.b),
            c: vec_of(&p.c),
        }
    }

    fn to_piece(&self) -> Result<AffinePiece> {
        Ok(AffinePiece::new(self.a.to_mat()?, self.b.to_mat()?, dvec(&self.c)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationDoc {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub u_mean: Vec<f64>,
    pub u_std: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub format: String,
    pub n: usize,
    pub m: usize,
    pub nr_alpha: usize,
    pub nr_beta: usize,
    pub alpha_pieces: Vec<PieceDoc>,
    pub beta_pieces: Vec<PieceDoc>,
    pub psi: PieceDoc,
    pub phi: PieceDoc,
    pub h_alpha: Vec<f64>,
    pub h_beta: Vec<f64>,
    pub normalization: NormalizationDoc,
}

pub fn model_to_doc(model: &DiffMaxAffineModel) -> ModelDoc {
    ModelDoc {
        format: MODEL_FORMAT.to_string(),
        n: model.n,
        m: model.m,
        nr_alpha: model.nr_alpha(),
        nr_beta: model.nr_beta(),
        alpha_pieces: model.alpha_pieces.iter().map(PieceDoc::from_piece).collect(),
        beta_pieces: model.beta_pieces.iter().map(PieceDoc::from_piece).collect(),
        psi: PieceDoc::from_piece(&model.psi),
        phi: PieceDoc::from_piece(&model.phi),
        h_alpha: vec_of(&model.h_alpha),
        h_beta: vec_of(&model.h_beta),
        normalization: NormalizationDoc {
            x_mean: vec_of(&model.normalization.x_mean),
            x_std: vec_of(&model.normalization.x_std),
            u_mean: vec_of(&model.normalization.u_mean),
            u_std: vec_of(&model.normalization.u_std),
        },
    }
}

pub fn model_from_doc(doc: &ModelDoc) -> Result<DiffMaxAffineModel> {
    check_format(&doc.format, MODEL_FORMAT)?;
    if doc.alpha_pieces.len() != doc.nr_alpha || doc.beta_pieces.len() != doc.nr_beta {
        return Err(Error::Format(format!(
            "piece counts {}/{} disagree with nr_alpha={}, nr_beta={}",
            doc.alpha_pieces.len(),
            doc.beta_pieces.len(),
            doc.nr_alpha,
            doc.nr_beta
        )));
    }
    let norm = Normalization {
        x_mean: dvec(&doc.normalization.x_mean),
        x_std: dvec(&doc.normalization.x_std),
        u_mean: dvec(&doc.normalization.u_mean),
        u_std: dvec(&doc.normalization.u_std),
    };
    let model = DiffMaxAffineModel::new(
        doc.alpha_pieces.iter().map(|p| p.to_piece()).collect::<Result<_>>()?,
        doc.beta_pieces.iter().map(|p| p.to_piece()).collect::<Result<_>>()?,
        doc.psi.to_piece()?,
        doc.phi.to_piece()?,
        dvec(&doc.h_alpha),
        dvec(&doc.h_beta),
        norm,
    )?;
    if model.n != doc.n || model.m != doc.m {
        return Err(Error::Format(format!(
            "declared dims n={}, m={} disagree with payload n={}, m={}",
            doc.n, doc.m, model.n, model.m
        )));
    }
    Ok(model)
}

// ---------------------------------------------------------------------------
// LC model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpDoc {
    pub q: MatDoc,
    pub r: MatDoc,
    pub p: Vec<f64>,
    pub f: MatDoc,
    pub g: MatDoc,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceDoc {
    pub qp: QpDoc,
    pub w_map: MatDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionDoc {
    pub cond1_max_successor_gap: f64,
    pub cond2_block_diagonal: bool,
    pub cond2_off_block_mass: f64,
    pub cond2_elementwise: bool,
    pub cond3_fraction_satisfied: f64,
    pub strict_lb_margin: f64,
}


fn cond_to_doc(c: &ConditionReport) -> ConditionDoc {
    ConditionDoc {
        cond1_max_successor_gap: c.cond1_max_successor_gap,
        cond2_block_diagonal: c.cond2_block_diagonal,
        cond2_off_block_mass: c.cond2_off_block_mass,
        cond2_elementwise: c.cond2_elementwise,
        cond3_fraction_satisfied: c.cond3_fraction_satisfied,
        strict_lb_margin: c.strict_lb_margin,
    }
}

fn cond_from_doc(c: &ConditionDoc) -> ConditionReport {
    ConditionReport {
        cond1_max_successor_gap: c.cond1_max_successor_gap,
        cond2_block_diagonal: c.cond2_block_diagonal,
        cond2_off_block_mass: c.cond2_off_block_mass,
        cond2_elementwise: c.cond2_elementwise,
        cond3_fraction_satisfied: c.cond3_fraction_satisfied,
        strict_lb_margin: c.strict_lb_margin,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcDoc {
    pub format: String,
    pub a: MatDoc,
    pub b_u: MatDoc,
    pub b_w: MatDoc,
    pub d: Vec<f64>,
    pub e_w: MatDoc,
    pub e_x: MatDoc,
    pub e_u: MatDoc,
    pub e: Vec<f64>,
    pub block_structure: Vec<(usize, usize)>,
    pub strict_lb: bool,
    pub source: Option<SourceDoc>,
    /// Strong-stationarity precondition probe results, when computed.
    #[serde(default)]
    pub conditions: Option<ConditionDoc>,
}

pub fn lc_to_doc(lc: &LCModel) -> LcDoc {
    lc_to_doc_with(lc, None)
}

pub fn lc_to_doc_with(lc: &LCModel, conditions: Option<&ConditionReport>) -> LcDoc {
    LcDoc {
        format: LC_FORMAT.to_string(),
        a: MatDoc::from_mat(&lc.a),
        b_u: MatDoc::from_mat(&lc.b_u),
        b_w: MatDoc::from_mat(&lc.b_w),
        d: vec_of(&lc.d),
        e_w: MatDoc::from_mat(&lc.e_w),
        e_x: MatDoc::from_mat(&lc.e_x),
        e_u: MatDoc::from_mat(&lc.e_u),
        e: vec_of(&lc.e),
        block_structure: lc.block_structure.clone(),
        strict_lb: lc.strict_lb,
        source: lc.source.as_ref().map(|s| SourceDoc {
            qp: QpDoc {
                q: MatDoc::from_mat(&s.qp.q),
                r: MatDoc::from_mat(&s.qp.r),
                p: vec_of(&s.qp.p),
                f: MatDoc::from_mat(&s.qp.f),
                g: MatDoc::from_mat(&s.qp.g),
                h: vec_of(&s.qp.h),
            },
            w_map: MatDoc::from_mat(&s.w_map),
        }),
        conditions: conditions.map(cond_to_doc),
    }
}

pub fn lc_from_doc(doc: &LcDoc) -> Result<LCModel> {
    check_format(&doc.format, LC_FORMAT)?;
    let source = match &doc.source {
        None => None,
        Some(s) => Some(LcSource {
            qp: ParametricQP::new(
                s.qp.q.to_mat()?,
                s.qp.r.to_mat()?,
                dvec(&s.qp.p),
                s.qp.f.to_mat()?,
                s.qp.g.to_mat()?,
                dvec(&s.qp.h),
            )?,
            w_map: s.w_map.to_mat()?,
        }),
    };
    let lc = LCModel {
        a: doc.a.to_mat()?,
        b_u: doc.b_u.to_mat()?,
        b_w: doc.b_w.to_mat()?,
        d: dvec(&doc.d),
        e_w: doc.e_w.to_mat()?,
        e_x: doc.e_x.to_mat()?,
        e_u: doc.e_u.to_mat()?,
        e: dvec(&doc.e),
        block_structure: doc.block_structure.clone(),
        strict_lb: doc.strict_lb,
        source,
    };
    lc.validate()?;
    Ok(lc)
}

// ---------------------------------------------------------------------------
// benchmark systems
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemBody {
    SigmaPwa {
        a: MatDoc,
        b: MatDoc,
        w_a: MatDoc,
        w_b: MatDoc,
        clip_lo: f64,
        clip_hi: f64,
        seed: u64,
        redraws: u64,
    },
    TwoTank {
        a1: f64,
        a2: f64,
        b: f64,
        dt: f64,
        substeps: usize,
    },
}

// no deny_unknown_fields here: serde does not support it together with
// flatten; the flattened tagged enum still rejects unknown variants
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SysDoc {
    pub format: String,
    #[serde(flatten)]
    pub body: SystemBody,
}

/// A deserialized benchmark system, either variant.
#[derive(Debug, Clone)]
pub enum AnySystem {
    SigmaPwa(SigmaPwaSystem),
    TwoTank(TwoTankSystem),
}

impl AnySystem {
    pub fn as_system(&self) -> &dyn System {
        match self {
            AnySystem::SigmaPwa(s) => s,
            AnySystem::TwoTank(s) => s,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnySystem::SigmaPwa(_) => "sigma-pwa",
            AnySystem::TwoTank(_) => "two-tank",
        }
    }
}

pub fn system_to_doc(sys: &AnySystem) -> SysDoc {
    let body = match sys {
        AnySystem::SigmaPwa(s) => SystemBody::SigmaPwa {
            a: MatDoc::from_mat(&s.a),
            b: MatDoc::from_mat(&s.b),
            w_a: MatDoc::from_mat(&s.w_a),
            w_b: MatDoc::from_mat(&s.w_b),
            clip_lo: s.clip_lo,
            clip_hi: s.clip_hi,
            seed: s.seed,
            redraws: s.redraws,
        },
        AnySystem::TwoTank(s) => SystemBody::TwoTank {
            a1: s.a1,
            a2: s.a2,
            b: s.b,
            dt: s.dt,
            substeps: s.substeps,
        },
    };
    SysDoc {
        format: SYS_FORMAT.to_string(),
        body,
    }
}

pub fn system_from_doc(doc: &SysDoc) -> Result<AnySystem> {
    check_format(&doc.format, SYS_FORMAT)?;
    Ok(match &doc.body {
        SystemBody::SigmaPwa {
            a,
            b,
            w_a,
            w_b,
            clip_lo,
            clip_hi,
            seed,
            redraws,
        } => AnySystem::SigmaPwa(SigmaPwaSystem {
            a: a.to_mat()?,
            b: b.to_mat()?,
            w_a: w_a.to_mat()?,
            w_b: w_b.to_mat()?,
            clip_lo: *clip_lo,
            clip_hi: *clip_hi,
            seed: *seed,
            redraws: *redraws,
        }),
        SystemBody::TwoTank { a1, a2, b, dt, substeps } => AnySystem::TwoTank(TwoTankSystem {
            a1: *a1,
            a2: *a2,
            b: *b,
            dt: *dt,
            substeps: *substeps,
        }),
    })
}

// ---------------------------------------------------------------------------
// OCP problem / solution bundle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostDoc {
    pub q_state: MatDoc,
    pub q_terminal: MatDoc,
    pub r_input: MatDoc,
    pub r_rate: MatDoc,
    pub refs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipliersDoc {
    pub nu: Vec<Vec<f64>>,
    pub lam_lo: Vec<Vec<f64>>,
    pub lam_hi: Vec<Vec<f64>>,
    pub xi_w: Vec<Vec<f64>>,
    pub xi_s: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionDoc {
    pub x_traj: Vec<Vec<f64>>,
    pub u_traj: Vec<Vec<f64>>,
    pub w_traj: Vec<Vec<f64>>,
    pub multipliers: Option<MultipliersDoc>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub comp_violation: f64,
    pub status: String,
    pub stage_comp: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpDoc {
    pub format: String,
    pub lc: LcDoc,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub cost: CostDoc,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub conditions: Option<ConditionDoc>,
    pub solution: Option<SolutionDoc>,
}

fn vecs_of(vs: &[DVector<f64>]) -> Vec<Vec<f64>> {
    vs.iter().map(vec_of).collect()
}

fn dvecs(vs: &[Vec<f64>]) -> Vec<DVector<f64>> {
    vs.iter().map(|v| dvec(v)).collect()
}

fn status_to_string(s: &SolveStatus) -> String {
    match s {
        SolveStatus::Stationary => "stationary".into(),
        SolveStatus::Feasible => "feasible".into(),
        SolveStatus::Failed(msg) => format!("failed: {msg}"),
    }
}

fn status_from_string(s: &str) -> Result<SolveStatus> {
    Ok(match s {
        "stationary" => SolveStatus::Stationary,
        "feasible" => SolveStatus::Feasible,
        other => match other.strip_prefix("failed: ") {
            Some(msg) => SolveStatus::Failed(msg.to_string()),
            None => return Err(Error::Format(format!("unknown solve status {other:?}"))),
        },
    })
}

pub fn ocp_to_doc(problem: &MpccProblem, solution: Option<&MpccSolution>) -> OcpDoc {
    OcpDoc {
        format: OCP_FORMAT.to_string(),
        lc: lc_to_doc(&problem.lc),
        horizon: problem.horizon,
        x0: vec_of(&problem.x0),
        cost: CostDoc {
            q_state: MatDoc::from_mat(&problem.cost.q_state),
            q_terminal: MatDoc::from_mat(&problem.cost.q_terminal),
            r_input: MatDoc::from_mat(&problem.cost.r_input),
            r_rate: MatDoc::from_mat(&problem.cost.r_rate),
            refs: vecs_of(&problem.cost.refs),
        },
        u_lo: vec_of(&problem.u_lo),
        u_hi: vec_of(&problem.u_hi),
        u_prev: vec_of(&problem.u_prev),
        conditions: problem.conditions.as_ref().map(cond_to_doc),
        solution: solution.map(|sol| SolutionDoc {
            x_traj: vecs_of(&sol.x_traj),
            u_traj: vecs_of(&sol.u_traj),
            w_traj: vecs_of(&sol.w_traj),
            multipliers: sol.multipliers.as_ref().map(|m| MultipliersDoc {
                nu: vecs_of(&m.nu),
                lam_lo: vecs_of(&m.lam_lo),
                lam_hi: vecs_of(&m.lam_hi),
                xi_w: vecs_of(&m.xi_w),
                xi_s: vecs_of(&m.xi_s),
            }),
            objective: sol.objective,
            kkt_residual: sol.kkt_residual,
            comp_violation: sol.comp_violation,
            status: status_to_string(&sol.status),
            stage_comp: sol.stage_comp.clone(),
        }),
    }
}

pub fn ocp_from_doc(doc: &OcpDoc) -> Result<(MpccProblem, Option<MpccSolution>)> {
    check_format(&doc.format, OCP_FORMAT)?;
    let lc = lc_from_doc(&doc.lc)?;
    let cost = CostSpec::new(
        doc.cost.q_state.to_mat()?,
        doc.cost.q_terminal.to_mat()?,
        doc.cost.r_input.to_mat()?,
        doc.cost.r_rate.to_mat()?,
        dvecs(&doc.cost.refs),
    )?;
    let mut problem = crate::ocp::build_mpcc(
        &lc,
        cost,
        dvec(&doc.x0),
        doc.horizon,
        dvec(&doc.u_lo),
        dvec(&doc.u_hi),
        dvec(&doc.u_prev),
    )?;
    problem.conditions = doc.conditions.as_ref().map(cond_from_doc);
    let solution = match &doc.solution {
        None => None,
        Some(s) => Some(MpccSolution {
            x_traj: dvecs(&s.x_traj),
            u_traj: dvecs(&s.u_traj),
            w_traj: dvecs(&s.w_traj),
            multipliers: s.multipliers.as_ref().map(|m| Multipliers {
                nu: dvecs(&m.nu),
                lam_lo: dvecs(&m.lam_lo),
                lam_hi: dvecs(&m.lam_hi),
                xi_w: dvecs(&m.xi_w),
                xi_s: dvecs(&m.xi_s),
            }),
            objective: s.objective,
            kkt_residual: s.kkt_residual,
            comp_violation: s.comp_violation,
            status: status_from_string(&s.status)?,
            stage_comp: s.stage_comp.clone(),
        }),
    };
    Ok((problem, solution))
}

// ---------------------------------------------------------------------------
// file helpers
// ---------------------------------------------------------------------------

fn write_doc<T: Serialize>(path: &std::path::Path, doc: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_doc<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_model(path: &std::path::Path, model: &DiffMaxAffineModel) -> Result<()> {
    write_doc(path, &model_to_doc(model))
}

pub fn load_model(path: &std::path::Path) -> Result<DiffMaxAffineModel> {
    model_from_doc(&read_doc(path)?)
}

pub fn save_lc(path: &std::path::Path, lc: &LCModel) -> Result<()> {
    write_doc(path, &lc_to_doc(lc))
}

pub fn load_lc(path: &std::path::Path) -> Result<LCModel> {
    lc_from_doc(&read_doc(path)?)
}

/// Save an LC model together with its precondition probe results.
pub fn save_lc_bundle(path: &std::path::Path, lc: &LCModel, conditions: Option<&ConditionReport>) -> Result<()> {
    write_doc(path, &lc_to_doc_with(lc, conditions))
}

pub fn load_lc_bundle(path: &std::path::Path) -> Result<(LCModel, Option<ConditionReport>)> {
    let doc: LcDoc = read_doc(path)?;
    Ok((lc_from_doc(&doc)?, doc.conditions.as_ref().map(cond_from_doc)))
}

pub fn save_system(path: &std::path::Path, sys: &AnySystem) -> Result<()> {
    write_doc(path, &system_to_doc(sys))
}

pub fn load_system(path: &std::path::Path) -> Result<AnySystem> {
    system_from_doc(&read_doc(path)?)
}

pub fn save_ocp(path: &std::path::Path, problem: &MpccProblem, solution: Option<&MpccSolution>) -> Result<()> {
    write_doc(path, &ocp_to_doc(problem, solution))
}

pub fn load_ocp(path: &std::path::Path) -> Result<(MpccProblem, Option<MpccSolution>)> {
    ocp_from_doc(&read_doc(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lc::extract_lc;
    use crate::ocp::SolveOpts;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_model() -> DiffMaxAffineModel {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        DiffMaxAffineModel::random(3, 2, 2, 3, 0.4, &mut rng)
            .enforce_strict_lower_bounds(1.0, 1.0)
            .unwrap()
    }

    #[test]
    fn model_round_trip_is_byte_identical() {
        let model = sample_model();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.json");
        let p2 = dir.path().join("m2.json");
        save_model(&p1, &model).unwrap();
        let loaded = load_model(&p1).unwrap();
        save_model(&p2, &loaded).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        // and the loaded model computes identical successors
        let x = DVector::from_vec(vec![0.3, -0.2, 0.9]);
        let u = DVector::from_vec(vec![0.1, -0.5]);
        assert_eq!(
            model.forward_raw(&x, &u).unwrap(),
            loaded.forward_raw(&x, &u).unwrap()
        );
    }

    #[test]
    fn lc_round_trip_preserves_step() {
        let model = sample_model();
        let lc = extract_lc(&model).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("lc1.json");
        let p2 = dir.path().join("lc2.json");
        save_lc(&p1, &lc).unwrap();
        let loaded = load_lc(&p1).unwrap();
        save_lc(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let x = DVector::from_vec(vec![0.2, 0.4, -0.1]);
        let u = DVector::from_vec(vec![-0.3, 0.2]);
        let (xa, wa) = lc.step_lcp(&x, &u).unwrap();
        let (xb, wb) = loaded.step_lcp(&x, &u).unwrap();
        assert_eq!(xa, xb);
        assert_eq!(wa, wb);
    }

    #[test]
    fn linear_lc_without_source_round_trips() {
        let lc = LCModel::linear(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.8]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
            DVector::zeros(2),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lin.json");
        save_lc(&p, &lc).unwrap();
        let loaded = load_lc(&p).unwrap();
        assert!(loaded.source.is_none());
        assert_eq!(loaded.comp_dim(), 0);
    }

    #[test]
    fn system_docs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sys = AnySystem::SigmaPwa(SigmaPwaSystem::generate(11));
        let p1 = dir.path().join("s1.json");
        let p2 = dir.path().join("s2.json");
        save_system(&p1, &sys).unwrap();
        let loaded = load_system(&p1).unwrap();
        save_system(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        match (&sys, &loaded) {
            (AnySystem::SigmaPwa(a), AnySystem::SigmaPwa(b)) => assert_eq!(a, b),
            _ => panic!("variant changed in round trip"),
        }

        let tank = AnySystem::TwoTank(TwoTankSystem::default());
        let pt = dir.path().join("t.json");
        save_system(&pt, &tank).unwrap();
        match load_system(&pt).unwrap() {
            AnySystem::TwoTank(t) => assert_eq!(t, TwoTankSystem::default()),
            _ => panic!("variant changed in round trip"),
        }
    }

    #[test]
    fn ocp_bundle_round_trips_with_solution() {
        let model = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            DiffMaxAffineModel::random(2, 1, 2, 2, 0.3, &mut rng)
                .enforce_strict_lower_bounds(1.0, 1.0)
                .unwrap()
        };
        let lc = extract_lc(&model).unwrap();
        let n = lc.state_dim();
        let horizon = 3;
        let cost = CostSpec::new(
            DMatrix::identity(n, n),
            DMatrix::identity(n, n) * 2.0,
            DMatrix::identity(1, 1) * 0.1,
            DMatrix::identity(1, 1) * 0.01,
            vec![DVector::zeros(n); horizon],
        )
        .unwrap();
        let problem = crate::ocp::build_mpcc(
            &lc,
            cost,
            DVector::from_vec(vec![0.4, -0.3]),
            horizon,
            DVector::from_vec(vec![-1.0]),
            DVector::from_vec(vec![1.0]),
            DVector::zeros(1),
        )
        .unwrap();
        let sol = crate::ocp::solve_mpcc(&problem, &SolveOpts::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("o1.json");
        let p2 = dir.path().join("o2.json");
        save_ocp(&p1, &problem, Some(&sol)).unwrap();
        let (lp, ls) = load_ocp(&p1).unwrap();
        save_ocp(&p2, &lp, ls.as_ref()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let ls = ls.unwrap();
        assert_eq!(ls.objective, sol.objective);
        assert_eq!(ls.u_traj, sol.u_traj);
        assert_eq!(ls.status, sol.status);
    }

    #[test]
    fn wrong_format_tag_is_rejected() {
        let model = sample_model();
        let mut doc = model_to_doc(&model);
        doc.format = "hybridid-model/2".into();
        let err = model_from_doc(&doc).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let model = sample_model();
        let mut value = serde_json::to_value(model_to_doc(&model)).unwrap();
        value.as_object_mut().unwrap().insert("extra".into(), 1.into());
        let res: std::result::Result<ModelDoc, _> = serde_json::from_value(value);
        assert!(res.is_err());
    }
}
