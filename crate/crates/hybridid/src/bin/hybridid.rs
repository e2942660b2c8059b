//! Command-line front end for the identification-to-control pipeline.
//!
//! Subcommands: gen-data, train, eval, to-lc, ocp, mpc, sweep. All commands
//! are deterministic under fixed seed and flags; `HYBRIDID_SEED` acts as a
//! global seed fallback; `--config` supplies defaults from a JSON file with
//! flags taking precedence, unknown keys rejected. Exit code 0 iff the
//! command completed and every internal certificate passed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use hybridid::bench::{make_dataset, Excitation, SigmaPwaSystem, TwoTankSystem};
use hybridid::error::{Error, Result};
use hybridid::ident::{bfr, open_loop_rollout, rms, train, Dataset, TrainConfig};
use hybridid::io::{
    load_lc_bundle, load_model, load_system, save_lc_bundle, save_model, save_ocp, save_system,
    AnySystem,
};
use hybridid::lc::{check_conditions, extract_lc};
use hybridid::model::DiffMaxAffineModel;
use hybridid::ocp::{
    build_mpcc, certify_stationarity, mpc_run, solver_by_name, CostSpec, MpcConfig, MpcLog,
    SolveOpts, SolveStatus,
};

#[derive(Parser)]
#[command(name = "hybridid", version, about = "Hybrid system identification and MPC pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a benchmark system and write a CSV identification dataset.
    GenData(GenDataArgs),
    /// Fit a difference-of-max-affine model to a dataset.
    Train(TrainArgs),
    /// Evaluate a model on a dataset: one-step metrics and open-loop rollout.
    Eval(EvalArgs),
    /// Convert a model to its linear-complementarity form.
    ToLc(ToLcArgs),
    /// Solve one finite-horizon optimal control problem over an LC model.
    Ocp(OcpArgs),
    /// Closed-loop receding-horizon simulation against a benchmark plant.
    Mpc(MpcArgs),
    /// Train across a list of piece counts and report metrics per value.
    Sweep(SweepArgs),
}

/// Resolve the random seed: explicit flag, then config file, then the
/// HYBRIDID_SEED environment variable, then 1.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var("HYBRIDID_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|_| Error::InvalidArgument(format!("HYBRIDID_SEED is not an integer: {v:?}"))),
        Err(_) => Ok(1),
    }
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn parse_vector(text: &str) -> Result<DVector<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    vals.map(DVector::from_vec)
        .map_err(|e| Error::InvalidArgument(format!("bad vector {text:?}: {e}")))
}

fn fmt_vector(v: &DVector<f64>) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Args)]
struct GenDataArgs {
    /// Benchmark system: sigma-pwa or two-tank.
    #[arg(long)]
    system: String,
    /// Number of samples (trajectory steps).
    #[arg(long)]
    n: usize,
    /// Measurement noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Excitation: uniform or sine-sweep.
    #[arg(long, default_value = "uniform")]
    excitation: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Where to store the serialized system (defaults to <out>.sys.json).
    #[arg(long)]
    sys_out: Option<PathBuf>,
}

fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::InvalidArgument("gen-data: need --n >= 1".into()));
    }
    let seed = resolve_seed(a.seed, None)?;
    let sys = match a.system.as_str() {
        "sigma-pwa" => AnySystem::SigmaPwa(SigmaPwaSystem::generate(seed)),
        "two-tank" => AnySystem::TwoTank(TwoTankSystem::default()),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown system {other:?}; available: sigma-pwa, two-tank"
            )))
        }
    };
    let system = sys.as_system();
    let input_box = system.input_box();
    let excitation = match a.excitation.as_str() {
        "uniform" => Excitation::uniform_from_box(&input_box),
        "sine-sweep" => Excitation::SineSweep {
            lo: DVector::from_iterator(input_box.len(), input_box.iter().map(|b| b.0)),
            hi: DVector::from_iterator(input_box.len(), input_box.iter().map(|b| b.1)),
            f0: 0.5,
            f1: 20.0,
        },
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown excitation {other:?}; available: uniform, sine-sweep"
            )))
        }
    };
    let dataset = make_dataset(system, a.n, &excitation, a.noise, seed)?;
    let file = std::fs::File::create(&a.out)?;
    dataset.write_csv(std::io::BufWriter::new(file))?;
    let sys_path = a
        .sys_out
        .clone()
        .unwrap_or_else(|| a.out.with_extension("sys.json"));
    save_system(&sys_path, &sys)?;
    println!("system: {}", sys.name());
    println!("N: {}", dataset.len());
    println!(
        "domain: {}",
        dataset
            .domain
            .iter()
            .map(|(lo, hi)| format!("[{lo:.4}, {hi:.4}]"))
            .collect::<Vec<_>>()
            .join(" x ")
    );
    println!("noise_sigma: {}", a.noise);
    println!("wrote {} and {}", a.out.display(), sys_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train / sweep
// ---------------------------------------------------------------------------

/// JSON config mirror of the training flags; flags override these values.
#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    nr_alpha: Option<usize>,
    nr_beta: Option<usize>,
    lambda: Option<f64>,
    restarts: Option<usize>,
    epochs: Option<usize>,
    step_size: Option<f64>,
    seed: Option<u64>,
    val_fraction: Option<f64>,
    polish_iters: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Input dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// JSON config file providing defaults for the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nr_alpha: Option<usize>,
    #[arg(long)]
    nr_beta: Option<usize>,
    /// Ridge regularization weight.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    polish_iters: Option<usize>,
}

fn merged_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let file: TrainFileConfig = read_config(&a.config)?;
    let mut cfg = TrainConfig::default();
    cfg.nr_alpha = a.nr_alpha.or(file.nr_alpha).unwrap_or(cfg.nr_alpha);
    cfg.nr_beta = a.nr_beta.or(file.nr_beta).unwrap_or(cfg.nr_beta);
    cfg.lambda_reg = a.lambda.or(file.lambda).unwrap_or(cfg.lambda_reg);
    cfg.restarts = a.restarts.or(file.restarts).unwrap_or(cfg.restarts);
    cfg.max_epochs = a.epochs.or(file.epochs).unwrap_or(cfg.max_epochs);
    cfg.step_size = a.step_size.or(file.step_size).unwrap_or(cfg.step_size);
    cfg.val_fraction = a.val_fraction.or(file.val_fraction).unwrap_or(cfg.val_fraction);
    cfg.polish_iters = a.polish_iters.or(file.polish_iters).unwrap_or(cfg.polish_iters);
    cfg.seed = resolve_seed(a.seed, file.seed)?;
    Ok(cfg)
}

fn load_dataset(path: &Path, seed: u64) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    Dataset::read_csv(std::io::BufReader::new(file), seed)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = merged_train_config(a)?;
    let dataset = load_dataset(&a.data, cfg.seed)?;
    let (model, report) = train(&cfg, &dataset)?;
    save_model(&a.out, &model)?;
    println!("nr_alpha: {}", cfg.nr_alpha);
    println!("nr_beta: {}", cfg.nr_beta);
    println!("lambda: {}", cfg.lambda_reg);
    println!("restarts: {}", cfg.restarts);
    println!("bfr: {:.6}", report.bfr);
    println!("rms: {:.6}", report.rms);
    println!("best_restart: {}", report.best_restart);
    println!("train_seconds: {:.3}", report.train_seconds);
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated list of piece counts (applied to both sides).
    #[arg(long, default_value = "2,3,5,7,11,17")]
    nr: String,
    /// Output CSV with one row per piece count.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let file: TrainFileConfig = read_config(&a.config)?;
    let mut base = TrainConfig::default();
    base.lambda_reg = a.lambda.or(file.lambda).unwrap_or(base.lambda_reg);
    base.restarts = a.restarts.or(file.restarts).unwrap_or(base.restarts);
    base.max_epochs = a.epochs.or(file.epochs).unwrap_or(base.max_epochs);
    base.seed = resolve_seed(a.seed, file.seed)?;
    let nrs: std::result::Result<Vec<usize>, _> =
        a.nr.split(',').map(|t| t.trim().parse::<usize>()).collect();
    let nrs = nrs.map_err(|e| Error::InvalidArgument(format!("bad --nr list: {e}")))?;
    let dataset = load_dataset(&a.data, base.seed)?;
    let mut out = String::from("nr,bfr,rms,best_restart,train_seconds\n");
    for &nr in &nrs {
        let mut cfg = base.clone();
        cfg.nr_alpha = nr;
        cfg.nr_beta = nr;
        let (_, report) = train(&cfg, &dataset)?;
        println!(
            "nr={nr} bfr={:.6} rms={:.6} best_restart={}",
            report.bfr, report.rms, report.best_restart
        );
        out.push_str(&format!(
            "{nr},{:?},{:?},{},{:.3}\n",
            report.bfr, report.rms, report.best_restart, report.train_seconds
        ));
    }
    std::fs::write(&a.out, out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Open-loop rollout length (capped at the dataset length).
    #[arg(long, default_value_t = 1000)]
    rollout: usize,
    /// Trajectory CSV for plotting (step, predicted..., actual...).
    #[arg(long)]
    traj_out: Option<PathBuf>,
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let dataset = load_dataset(&a.data, 0)?;
    if dataset.state_dim() != model.n || dataset.input_dim() != model.m {
        return Err(Error::DimensionMismatch {
            context: "eval",
            expected: format!("n={}, m={}", model.n, model.m),
            got: format!("n={}, m={}", dataset.state_dim(), dataset.input_dim()),
        });
    }
    let n = dataset.state_dim();

    // one-step metrics over the full dataset
    let count = dataset.len();
    let mut pred = DMatrix::zeros(n, count);
    let mut actual = DMatrix::zeros(n, count);
    for (k, s) in dataset.samples.iter().enumerate() {
        let xn = model.forward_raw(&s.x, &s.u)?;
        pred.set_column(k, &xn);
        actual.set_column(k, &s.x_next);
    }
    println!("one_step_bfr: {:.6}", bfr(&pred, &actual)?);
    println!("one_step_rms: {:.6}", rms(&pred, &actual)?);

    // open-loop rollout along the recorded input sequence
    let steps = a.rollout.min(count);
    if steps == 0 {
        return Err(Error::InvalidArgument("eval: need --rollout >= 1".into()));
    }
    let u_seq: Vec<DVector<f64>> = dataset.samples[..steps].iter().map(|s| s.u.clone()).collect();
    let roll = open_loop_rollout(&model, &dataset.samples[0].x, &u_seq)?;
    let usable = roll.states.len() - 1;
    let mut rpred = DMatrix::zeros(n, usable);
    let mut ractual = DMatrix::zeros(n, usable);
    for k in 0..usable {
        rpred.set_column(k, &roll.states[k + 1]);
        ractual.set_column(k, &dataset.samples[k].x_next);
    }
    let roll_bfr = bfr(&rpred, &ractual)?;
    let roll_rms = rms(&rpred, &ractual)?;
    println!("rollout_steps: {usable}");
    println!("rollout_bfr: {roll_bfr:.6}");
    println!("rollout_rms: {roll_rms:.6}");
    if let Some(div) = roll.diverged_at {
        println!("diverged_at: {div}");
    }

    if let Some(path) = &a.traj_out {
        let mut csv = String::from("step");
        for i in 1..=n {
            csv.push_str(&format!(",xhat{i}"));
        }
        for i in 1..=n {
            csv.push_str(&format!(",x{i}"));
        }
        csv.push('\n');
        for k in 0..usable {
            csv.push_str(&k.to_string());
            for v in roll.states[k + 1].iter() {
                csv.push_str(&format!(",{v:?}"));
            }
            for v in dataset.samples[k].x_next.iter() {
                csv.push_str(&format!(",{v:?}"));
            }
            csv.push('\n');
        }
        std::fs::write(path, csv)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// to-lc
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ToLcArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Samples used to probe the strong-stationarity preconditions.
    #[arg(long, default_value_t = 200)]
    probes: usize,
    #[arg(long)]
    seed: Option<u64>,
}

fn probe_samples(model: &DiffMaxAffineModel, count: usize, seed: u64) -> Vec<(DVector<f64>, DVector<f64>)> {
    // normalized coordinates: +/- 2 standard deviations covers the data
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            (
                DVector::from_fn(model.n, |_, _| rng.random_range(-2.0..2.0)),
                DVector::from_fn(model.m, |_, _| rng.random_range(-2.0..2.0)),
            )
        })
        .collect()
}

fn cmd_to_lc(a: &ToLcArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let seed = resolve_seed(a.seed, None)?;
    let lc = extract_lc(&model)?;
    let report = check_conditions(&lc, &model, &probe_samples(&model, a.probes.max(1), seed))?;
    save_lc_bundle(&a.out, &lc, Some(&report))?;
    println!("comp_dim: {}", lc.comp_dim());
    println!("strict_lb: {}", lc.strict_lb);
    println!("cond1_max_successor_gap: {:.3e}", report.cond1_max_successor_gap);
    println!("cond2_block_diagonal: {}", report.cond2_block_diagonal);
    println!("cond2_off_block_mass: {:.3e}", report.cond2_off_block_mass);
    println!("cond2_elementwise: {}", report.cond2_elementwise);
    println!("cond3_fraction_satisfied: {:.4}", report.cond3_fraction_satisfied);
    println!("strict_lb_margin: {:.3e}", report.strict_lb_margin);
    println!("conditions_hold: {}", report.all_hold());
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// ocp
// ---------------------------------------------------------------------------

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OcpFileConfig {
    horizon: Option<usize>,
    q: Option<f64>,
    q_terminal: Option<f64>,
    r: Option<f64>,
    r_rate: Option<f64>,
    u_lo: Option<f64>,
    u_hi: Option<f64>,
    solver: Option<String>,
}

#[derive(Args)]
struct OcpArgs {
    /// LC model file.
    #[arg(long)]
    lc: PathBuf,
    /// Initial state, comma-separated.
    #[arg(long)]
    x0: String,
    /// Constant state reference, comma-separated (default zero).
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Scalar weights scaling identity matrices.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    q_terminal: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    r_rate: Option<f64>,
    /// Scalar input bounds applied to every channel.
    #[arg(long)]
    u_lo: Option<f64>,
    #[arg(long)]
    u_hi: Option<f64>,
    #[arg(long)]
    solver: Option<String>,
    /// Output problem+solution bundle.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Returns false when a computed certificate failed.
fn cmd_ocp(a: &OcpArgs) -> Result<bool> {
    let file: OcpFileConfig = read_config(&a.config)?;
    let (lc, conditions) = load_lc_bundle(&a.lc)?;
    let n = lc.state_dim();
    let m = lc.input_dim();
    let horizon = a.horizon.or(file.horizon).unwrap_or(10);
    let q = a.q.or(file.q).unwrap_or(1.0);
    let q_terminal = a.q_terminal.or(file.q_terminal).unwrap_or(q);
    let r = a.r.or(file.r).unwrap_or(0.01);
    let r_rate = a.r_rate.or(file.r_rate).unwrap_or(0.0);
    let u_lo = a.u_lo.or(file.u_lo).unwrap_or(-1.0);
    let u_hi = a.u_hi.or(file.u_hi).unwrap_or(1.0);
    let solver_name = a
        .solver
        .clone()
        .or(file.solver)
        .unwrap_or_else(|| "sqp-mpcc".to_string());

    let x0 = parse_vector(&a.x0)?;
    let reference = match &a.reference {
        Some(t) => parse_vector(t)?,
        None => DVector::zeros(n),
    };
    let cost = CostSpec::new(
        DMatrix::identity(n, n) * q,
        DMatrix::identity(n, n) * q_terminal,
        DMatrix::identity(m, m) * r,
        DMatrix::identity(m, m) * r_rate,
        vec![reference; horizon],
    )?;
    let mut problem = build_mpcc(
        &lc,
        cost,
        x0,
        horizon,
        DVector::from_element(m, u_lo),
        DVector::from_element(m, u_hi),
        DVector::zeros(m),
    )?;
    problem.conditions = conditions;
    let solver = solver_by_name(&solver_name)?;
    let start = std::time::Instant::now();
    let solution = solver.solve(&problem, &SolveOpts::default(), None)?;
    let elapsed = start.elapsed().as_secs_f64();

    println!("solver: {solver_name}");
    println!("objective: {:.6}", solution.objective);
    println!("status: {:?}", solution.status);
    println!("comp_violation: {:.3e}", solution.comp_violation);
    println!("solve_seconds: {elapsed:.3}");
    println!("u_traj:");
    for u in &solution.u_traj {
        println!("  {}", fmt_vector(u));
    }

    let mut pass = true;
    if solution.multipliers.is_some() {
        let cert = certify_stationarity(&problem, &solution, 1e-6)?;
        println!("kkt_residual: {:.3e}", cert.residual);
        println!("certificate: {}", if cert.pass { "pass" } else { "fail" });
        if let Some(reason) = &cert.reason {
            println!("certificate_reason: {reason}");
        }
        pass = cert.pass;
    } else {
        println!("kkt_residual: unavailable (no multipliers from {solver_name})");
    }
    if matches!(solution.status, SolveStatus::Failed(_)) {
        pass = false;
    }

    if let Some(path) = &a.out {
        save_ocp(path, &problem, Some(&solution))?;
        println!("wrote {}", path.display());
    }
    Ok(pass)
}

// ---------------------------------------------------------------------------
// mpc
// ---------------------------------------------------------------------------

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MpcFileConfig {
    horizon: Option<usize>,
    steps: Option<usize>,
    q: Option<f64>,
    q_terminal: Option<f64>,
    r: Option<f64>,
    r_rate: Option<f64>,
    u_lo: Option<f64>,
    u_hi: Option<f64>,
    solver: Option<String>,
}

#[derive(Args)]
struct MpcArgs {
    /// Trained model file (provides the LC model and normalization).
    #[arg(long)]
    model: PathBuf,
    /// Serialized plant system file.
    #[arg(long)]
    plant: PathBuf,
    /// Constant state reference, comma-separated.
    #[arg(long)]
    reference: String,
    /// Initial plant state, comma-separated.
    #[arg(long)]
    x_init: String,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    q_terminal: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    r_rate: Option<f64>,
    #[arg(long)]
    u_lo: Option<f64>,
    #[arg(long)]
    u_hi: Option<f64>,
    #[arg(long)]
    solver: Option<String>,
    /// Closed-loop log CSV.
    #[arg(long)]
    out: PathBuf,
}

fn write_mpc_log(path: &Path, log: &MpcLog, n: usize, m: usize) -> Result<()> {
    let mut csv = String::from("step,time_s");
    for i in 1..=n {
        csv.push_str(&format!(",x{i}"));
    }
    for i in 1..=m {
        csv.push_str(&format!(",u{i}"));
    }
    for i in 1..=n {
        csv.push_str(&format!(",r{i}"));
    }
    csv.push_str(",objective,kkt_residual\n");
    for row in &log.rows {
        csv.push_str(&format!("{},{:?}", row.step, row.time_s));
        for v in row.x.iter() {
            csv.push_str(&format!(",{v:?}"));
        }
        for v in row.u.iter() {
            csv.push_str(&format!(",{v:?}"));
        }
        for v in row.reference.iter() {
            csv.push_str(&format!(",{v:?}"));
        }
        csv.push_str(&format!(",{:?},{:?}\n", row.objective, row.kkt_residual));
    }
    std::fs::write(path, csv)?;
    Ok(())
}

fn cmd_mpc(a: &MpcArgs) -> Result<()> {
    let file: MpcFileConfig = read_config(&a.config)?;
    let model = load_model(&a.model)?;
    let plant = load_system(&a.plant)?;
    let lc = extract_lc(&model)?;
    let n = lc.state_dim();
    let m = lc.input_dim();

    let horizon = a.horizon.or(file.horizon).unwrap_or(7);
    let steps = a.steps.or(file.steps).unwrap_or(100);
    let q = a.q.or(file.q).unwrap_or(1.0);
    let q_terminal = a.q_terminal.or(file.q_terminal).unwrap_or(q);
    let r = a.r.or(file.r).unwrap_or(0.01);
    let r_rate = a.r_rate.or(file.r_rate).unwrap_or(0.0);
    let input_box = plant.as_system().input_box();
    let u_lo = a.u_lo.or(file.u_lo).unwrap_or_else(|| input_box[0].0);
    let u_hi = a.u_hi.or(file.u_hi).unwrap_or_else(|| input_box[0].1);
    let solver_name = a
        .solver
        .clone()
        .or(file.solver)
        .unwrap_or_else(|| "sqp-mpcc".to_string());

    let reference = parse_vector(&a.reference)?;
    let x_init = parse_vector(&a.x_init)?;
    let cfg = MpcConfig {
        horizon,
        steps,
        q_state: DMatrix::identity(n, n) * q,
        q_terminal: DMatrix::identity(n, n) * q_terminal,
        r_input: DMatrix::identity(m, m) * r,
        r_rate: DMatrix::identity(m, m) * r_rate,
        reference: vec![reference; steps + horizon + 1],
        u_lo: DVector::from_element(m, u_lo),
        u_hi: DVector::from_element(m, u_hi),
        u_init: DVector::zeros(m),
    };
    let solver = solver_by_name(&solver_name)?;
    let log = mpc_run(
        &lc,
        &model.normalization,
        solver.as_ref(),
        &SolveOpts::default(),
        plant.as_system(),
        &x_init,
        &cfg,
    )?;
    write_mpc_log(&a.out, &log, n, m)?;
    println!("solver: {solver_name}");
    println!("steps: {}", log.rows.len());
    println!("closed_loop_cost: {:.6}", log.closed_loop_cost);
    println!("median_solve_time: {:.4}", log.median_solve_time);
    println!("fallbacks: {}", log.fallbacks);
    println!("wrote {}", a.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a).map(|()| true),
        Command::Train(a) => cmd_train(a).map(|()| true),
        Command::Eval(a) => cmd_eval(a).map(|()| true),
        Command::ToLc(a) => cmd_to_lc(a).map(|()| true),
        Command::Ocp(a) => cmd_ocp(a),
        Command::Mpc(a) => cmd_mpc(a).map(|()| true),
        Command::Sweep(a) => cmd_sweep(a).map(|()| true),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: certificate failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
