//! Dataset handling, training objective, multi-start first-order trainer and
//! evaluation metrics.

use std::io::{BufRead, Write};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::model::{DiffMaxAffineModel, Normalization};

/// One measured (state, input) -> successor-state triplet.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub x_next: DVector<f64>,
}

/// Per-dimension mean and standard deviation over the `(x, u)` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub x_mean: DVector<f64>,
    pub x_std: DVector<f64>,
    pub u_mean: DVector<f64>,
    pub u_std: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Per-dimension `[lo, hi]` bounds over the `(x, u)` space.
    pub domain: Vec<(f64, f64)>,
    pub norm_stats: NormStats,
    pub seed: u64,
}

impl Dataset {
    /// Build a dataset from raw triplets; statistics and (if not given) the
    /// domain box come from the data.
    pub fn new(samples: Vec<Sample>, domain: Option<Vec<(f64, f64)>>, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("Dataset: need at least one sample".into()));
        }
        let n = samples[0].x.len();
        let m = samples[0].u.len();
        for s in &samples {
            if s.x.len() != n || s.u.len() != m || s.x_next.len() != n {
                return Err(dim_err("Dataset sample", format!("n={n}, m={m}"), "inconsistent triplet"));
            }
        }
        let norm_stats = compute_stats(&samples);
        let domain = domain.unwrap_or_else(|| data_box(&samples, 0.05));
        if domain.len() != n + m {
            return Err(dim_err("Dataset domain", n + m, domain.len()));
        }
        Ok(Self {
            samples,
            domain,
            norm_stats,
            seed,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.samples[0].x.len()
    }

    pub fn input_dim(&self) -> usize {
        self.samples[0].u.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Z-scored copy plus the statistics used, for storing in a model.
    pub fn normalized(&self) -> Result<(Dataset, Normalization)> {
        let st = &self.norm_stats;
        if st.x_std.iter().chain(st.u_std.iter()).any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("normalize: zero standard deviation in some dimension".into()));
        }
        let norm = Normalization {
            x_mean: st.x_mean.clone(),
            x_std: st.x_std.clone(),
            u_mean: st.u_mean.clone(),
            u_std: st.u_std.clone(),
        };
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                x: norm.norm_x(&s.x),
                u: norm.norm_u(&s.u),
                x_next: norm.norm_x(&s.x_next),
            })
            .collect();
        let mut out = Dataset::new(samples, None, self.seed)?;
        out.seed = self.seed;
        Ok((out, norm))
    }

    /// Split by index blocks: first `1 - val_fraction` of rows for training.
    pub fn split(&self, val_fraction: f64) -> (Dataset, Dataset) {
        let n_train = ((self.len() as f64) * (1.0 - val_fraction)).round().max(1.0) as usize;
        let n_train = n_train.min(self.len().saturating_sub(1)).max(1);
        let train = Dataset {
            samples: self.samples[..n_train].to_vec(),
            domain: self.domain.clone(),
            norm_stats: self.norm_stats.clone(),
            seed: self.seed,
        };
        let val = Dataset {
            samples: self.samples[n_train..].to_vec(),
            domain: self.domain.clone(),
            norm_stats: self.norm_stats.clone(),
            seed: self.seed,
        };
        (train, val)
    }

    /// CSV with header `x1..xn,u1..um,xn1..xnn`, '.' decimal, one triplet per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut header: Vec<String> = Vec::new();
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=n).map(|i| format!("xn{i}")));
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let row: Vec<String> = s
                .x
                .iter()
                .chain(s.u.iter())
                .chain(s.x_next.iter())
                .map(|v| format!("{v:?}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, seed: u64) -> Result<Dataset> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let cols: Vec<&str> = header.trim().split(',').collect();
        let n = cols.iter().take_while(|c| c.starts_with('x') && !c.starts_with("xn")).count();
        let m = cols.iter().filter(|c| c.starts_with('u')).count();
        if cols.len() != 2 * n + m || n == 0 {
            return Err(Error::Format(format!("unrecognized dataset header: {header}")));
        }
        let mut samples = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .trim()
                .split(',')
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::Format(format!("line {}: bad number {t:?}", lineno + 2)))
                })
                .collect::<Result<_>>()?;
            if vals.len() != 2 * n + m {
                return Err(Error::Format(format!("line {}: expected {} fields, got {}", lineno + 2, 2 * n + m, vals.len())));
            }
            samples.push(Sample {
                x: DVector::from_row_slice(&vals[..n]),
                u: DVector::from_row_slice(&vals[n..n + m]),
                x_next: DVector::from_row_slice(&vals[n + m..]),
            });
        }
        Dataset::new(samples, None, seed)
    }
}

fn compute_stats(samples: &[Sample]) -> NormStats {
    let n = samples[0].x.len();
    let m = samples[0].u.len();
    let count = samples.len() as f64;
    let mut x_mean = DVector::zeros(n);
    let mut u_mean = DVector::zeros(m);
    for s in samples {
        x_mean += &s.x;
        u_mean += &s.u;
    }
    x_mean /= count;
    u_mean /= count;
    let mut x_var = DVector::zeros(n);
    let mut u_var = DVector::zeros(m);
    for s in samples {
        for k in 0..n {
            x_var[k] += (s.x[k] - x_mean[k]).powi(2);
        }
        for k in 0..m {
            u_var[k] += (s.u[k] - u_mean[k]).powi(2);
        }
    }
    NormStats {
        x_mean,
        x_std: x_var.map(|v: f64| (v / count).sqrt()),
        u_mean,
        u_std: u_var.map(|v: f64| (v / count).sqrt()),
    }
}

fn data_box(samples: &[Sample], inflate: f64) -> Vec<(f64, f64)> {
    let n = samples[0].x.len();
    let m = samples[0].u.len();
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); n + m];
    for s in samples {
        for k in 0..n {
            bounds[k].0 = bounds[k].0.min(s.x[k]).min(s.x_next[k]);
            bounds[k].1 = bounds[k].1.max(s.x[k]).max(s.x_next[k]);
        }
        for k in 0..m {
            bounds[n + k].0 = bounds[n + k].0.min(s.u[k]);
            bounds[n + k].1 = bounds[n + k].1.max(s.u[k]);
        }
    }
    bounds
        .into_iter()
        .map(|(lo, hi)| {
            let w = (hi - lo).abs() * inflate;
            (lo - w, hi + w)
        })
        .collect()
}

/// Mean squared one-step error plus ridge penalty on all piece and target
/// parameters. Samples are used as given (trainers pass normalized data).
pub fn loss(model: &DiffMaxAffineModel, dataset: &Dataset, lambda_reg: f64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("loss: empty dataset".into()));
    }
    let mut acc = 0.0;
    for s in &dataset.samples {
        let (pred, _) = model.forward(&s.x, &s.u)?;
        acc += (&pred - &s.x_next).norm_squared();
    }
    let theta = model.pack_params();
    Ok(acc / dataset.len() as f64 + lambda_reg * theta.norm_squared())
}

/// Column-major batch of a dataset for the vectorized training path.
struct Batch {
    x: DMatrix<f64>,
    u: DMatrix<f64>,
    x_next: DMatrix<f64>,
}

impl Batch {
    fn from(dataset: &Dataset) -> Self {
        let n = dataset.state_dim();
        let m = dataset.input_dim();
        let count = dataset.len();
        let mut x = DMatrix::zeros(n, count);
        let mut u = DMatrix::zeros(m, count);
        let mut x_next = DMatrix::zeros(n, count);
        for (j, s) in dataset.samples.iter().enumerate() {
            x.column_mut(j).copy_from(&s.x);
            u.column_mut(j).copy_from(&s.u);
            x_next.column_mut(j).copy_from(&s.x_next);
        }
        Self { x, u, x_next }
    }

    fn len(&self) -> usize {
        self.x.ncols()
    }
}

/// Batched loss and packed gradient; algebraically identical to summing
/// [`DiffMaxAffineModel::subgrad_params`] over every sample.
fn loss_and_grad(model: &DiffMaxAffineModel, batch: &Batch, lambda_reg: f64) -> (f64, DVector<f64>) {
    let n = model.n;
    let count = batch.len();
    let inv_n = 1.0 / count as f64;

    // side evaluation: value matrix and per-entry argmax over target+pieces
    let eval_side = |pieces: &[crate::model::AffinePiece], target: &crate::model::AffinePiece| {
        let mut vals: Vec<DMatrix<f64>> = Vec::with_capacity(pieces.len() + 1);
        let base = |p: &crate::model::AffinePiece| {
            let mut v = &p.a * &batch.x + &p.b * &batch.u;
            for j in 0..count {
                v.column_mut(j).zip_apply(&p.c, |e, c| *e += c);
            }
            v
        };
        vals.push(base(target));
        for p in pieces {
            vals.push(base(p));
        }
        let mut value = vals[0].clone();
        let mut active = vec![vec![0usize; count]; n];
        for (idx, v) in vals.iter().enumerate().skip(1) {
            for j in 0..count {
                for k in 0..n {
                    if v[(k, j)] > value[(k, j)] {
                        value[(k, j)] = v[(k, j)];
                        active[k][j] = idx;
                    }
                }
            }
        }
        (value, active)
    };

    let (alpha_val, alpha_active) = eval_side(&model.alpha_pieces, &model.psi);
    let (beta_val, beta_active) = eval_side(&model.beta_pieces, &model.phi);
    let err = &alpha_val - &beta_val - &batch.x_next;
    let mse = err.iter().map(|v| v * v).sum::<f64>() * inv_n;

    // gradient per map: mask the error to the samples where the map is
    // active, then one matrix product per parameter block
    let grad_side = |active: &[Vec<usize>], n_maps: usize, sign: f64| -> Vec<crate::model::AffinePiece> {
        let mut out = Vec::with_capacity(n_maps);
        for map_idx in 0..n_maps {
            let mut masked = DMatrix::zeros(n, count);
            let mut any = false;
            for k in 0..n {
                for j in 0..count {
                    if active[k][j] == map_idx {
                        masked[(k, j)] = err[(k, j)];
                        any = true;
                    }
                }
            }
            let scale = 2.0 * inv_n * sign;
            if !any {
                out.push(crate::model::AffinePiece::zeros(n, model.m));
                continue;
            }
            let da = (&masked * batch.x.transpose()) * scale;
            let db = (&masked * batch.u.transpose()) * scale;
            let mut dc = DVector::zeros(n);
            for k in 0..n {
                dc[k] = masked.row(k).sum() * scale;
            }
            out.push(crate::model::AffinePiece::new(da, db, dc));
        }
        out
    };

    let mut alpha_grads = grad_side(&alpha_active, model.nr_alpha() + 1, 1.0);
    let mut beta_grads = grad_side(&beta_active, model.nr_beta() + 1, -1.0);
    let psi_g = alpha_grads.remove(0);
    let phi_g = beta_grads.remove(0);
    let grad_struct = crate::model::ModelGrad {
        alpha_pieces: alpha_grads,
        beta_pieces: beta_grads,
        psi: psi_g,
        phi: phi_g,
    };
    let mut grad = model.pack_grad(&grad_struct);
    let theta = model.pack_params();
    grad.axpy(2.0 * lambda_reg, &theta, 1.0);
    (mse + lambda_reg * theta.norm_squared(), grad)
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub nr_alpha: usize,
    pub nr_beta: usize,
    pub lambda_reg: f64,
    pub restarts: usize,
    pub max_epochs: usize,
    /// Initial Adam step size; decays to 1% of this on a cosine schedule.
    pub step_size: f64,
    pub init_scale: f64,
    pub seed: u64,
    /// Post-training strict lower-bound offsets (eta, zeta).
    pub eta_zeta: (f64, f64),
    pub val_fraction: f64,
    /// Monotone line-search gradient descent instead of Adam (test mode;
    /// guarantees a non-increasing training loss).
    pub monotone: bool,
    /// L-BFGS polish iterations applied to the best restart.
    pub polish_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            nr_alpha: 7,
            nr_beta: 7,
            lambda_reg: 0.01,
            restarts: 10,
            max_epochs: 2500,
            step_size: 0.02,
            init_scale: 0.1,
            seed: 0,
            eta_zeta: (1.0, 1.0),
            val_fraction: 0.2,
            monotone: false,
            polish_iters: 150,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.restarts < 1 || self.nr_alpha < 1 || self.nr_beta < 1 {
            return Err(Error::InvalidArgument("TrainConfig: restarts and piece counts must be >= 1".into()));
        }
        if self.lambda_reg < 0.0 {
            return Err(Error::InvalidArgument("TrainConfig: lambda_reg must be >= 0".into()));
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidArgument("TrainConfig: val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// One-step BFR on the validation split (raw coordinates).
    pub bfr: f64,
    /// One-step RMS on the validation split (raw coordinates).
    pub rms: f64,
    pub per_restart_losses: Vec<f64>,
    pub best_restart: usize,
    pub train_seconds: f64,
}

/// Outcome of one restart. The model operates in normalized coordinates and
/// carries the dataset normalization.
#[derive(Debug, Clone)]
pub struct RestartResult {
    pub model: DiffMaxAffineModel,
    pub val_loss: f64,
}

/// Run every restart and return all resulting models (strict lower bounds
/// already enforced), ordered by restart index.
pub fn train_restarts(config: &TrainConfig, dataset: &Dataset) -> Result<Vec<RestartResult>> {
    config.validate()?;
    let (norm_ds, norm) = dataset.normalized()?;
    let (train_ds, val_ds) = norm_ds.split(config.val_fraction);
    let train_batch = Batch::from(&train_ds);
    let val_ds = if val_ds.is_empty() { train_ds.clone() } else { val_ds };

    let results: Vec<RestartResult> = (0..config.restarts)
        .into_par_iter()
        .map(|restart| run_restart(config, restart, &train_batch, &val_ds, &norm))
        .collect();
    Ok(results)
}

fn run_restart(
    config: &TrainConfig,
    restart: usize,
    train_batch: &Batch,
    val_ds: &Dataset,
    norm: &Normalization,
) -> RestartResult {
    let n = train_batch.x.nrows();
    let m = train_batch.u.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(restart as u64));
    let mut model = DiffMaxAffineModel::random(n, m, config.nr_alpha, config.nr_beta, config.init_scale, &mut rng);
    model.normalization = norm.clone();

    let mut theta = model.pack_params();
    let dim = theta.len();
    let mut adam_m: DVector<f64> = DVector::zeros(dim);
    let mut adam_v: DVector<f64> = DVector::zeros(dim);
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let lr_hi = config.step_size;
    let lr_lo = config.step_size * 0.01;

    let mut best_theta = theta.clone();
    let mut best_val = f64::INFINITY;
    let eval_every = 25usize.min(config.max_epochs.max(1));
    let mut prev_loss = f64::INFINITY;

    for epoch in 0..config.max_epochs {
        let current = model.unpack_params(&theta).expect("packed layout is fixed");
        let (train_loss, grad) = loss_and_grad(&current, train_batch, config.lambda_reg);
        if !train_loss.is_finite() {
            // aborted restart: report whatever the last finite iterate was
            break;
        }
        if config.monotone {
            // plain descent with Armijo backtracking
            let g2 = grad.norm_squared();
            if g2 == 0.0 {
                break;
            }
            let mut step = config.step_size;
            let mut accepted = false;
            for _ in 0..40 {
                let cand = &theta - &grad * step;
                let cand_model = model.unpack_params(&cand).expect("layout");
                let (cand_loss, _) = loss_and_grad(&cand_model, train_batch, config.lambda_reg);
                if cand_loss <= train_loss - 1e-4 * step * g2 {
                    theta = cand;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        } else {
            let t = (epoch + 1) as f64;
            let frac = epoch as f64 / config.max_epochs.max(1) as f64;
            let lr = lr_lo + 0.5 * (lr_hi - lr_lo) * (1.0 + (std::f64::consts::PI * frac).cos());
            for i in 0..dim {
                adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * grad[i];
                adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let mh = adam_m[i] / (1.0 - beta1.powf(t));
                let vh = adam_v[i] / (1.0 - beta2.powf(t));
                theta[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        if (epoch + 1) % eval_every == 0 || epoch + 1 == config.max_epochs {
            let cand = model.unpack_params(&theta).expect("layout");
            let v = loss(&cand, val_ds, 0.0).unwrap_or(f64::INFINITY);
            if v < best_val {
                best_val = v;
                best_theta = theta.clone();
            }
        }
        prev_loss = train_loss;
    }
    let _ = prev_loss;

    let final_model = model.unpack_params(&best_theta).expect("layout");
    let val_loss = loss(&final_model, val_ds, 0.0).unwrap_or(f64::INFINITY);
    RestartResult {
        model: final_model,
        val_loss,
    }
}

/// L-BFGS polish of the training objective starting from `model`.
fn polish(model: &DiffMaxAffineModel, batch: &Batch, lambda_reg: f64, iters: usize) -> DiffMaxAffineModel {
    let mut theta = model.pack_params();
    let (mut f0, mut g0) = loss_and_grad(model, batch, lambda_reg);
    let mem = 10usize;
    let mut s_list: Vec<DVector<f64>> = Vec::new();
    let mut y_list: Vec<DVector<f64>> = Vec::new();

    for _ in 0..iters {
        // two-loop recursion
        let mut q = g0.clone();
        let k = s_list.len();
        let mut alphas = vec![0.0; k];
        for i in (0..k).rev() {
            let rho = 1.0 / y_list[i].dot(&s_list[i]);
            alphas[i] = rho * s_list[i].dot(&q);
            q.axpy(-alphas[i], &y_list[i], 1.0);
        }
        if k > 0 {
            let gamma = s_list[k - 1].dot(&y_list[k - 1]) / y_list[k - 1].norm_squared();
            q *= gamma;
        }
        for i in 0..k {
            let rho = 1.0 / y_list[i].dot(&s_list[i]);
            let beta = rho * y_list[i].dot(&q);
            q.axpy(alphas[i] - beta, &s_list[i], 1.0);
        }
        let dir = -q;
        let slope = g0.dot(&dir);
        if slope >= 0.0 || !slope.is_finite() {
            s_list.clear();
            y_list.clear();
            continue;
        }
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand = &theta + &dir * step;
            let cand_model = model.unpack_params(&cand).expect("layout");
            let (f1, g1) = loss_and_grad(&cand_model, batch, lambda_reg);
            if f1.is_finite() && f1 <= f0 + 1e-4 * step * slope {
                let s = &cand - &theta;
                let yv = &g1 - &g0;
                if yv.dot(&s) > 1e-12 {
                    s_list.push(s);
                    y_list.push(yv);
                    if s_list.len() > mem {
                        s_list.remove(0);
                        y_list.remove(0);
                    }
                }
                theta = cand;
                f0 = f1;
                g0 = g1;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    model.unpack_params(&theta).expect("layout")
}

/// L-BFGS polish of one model on the dataset's training split, as applied to
/// the best restart inside [`train`]; strict lower bounds are re-enforced
/// afterwards. Lets callers refine the individual models returned by
/// [`train_restarts`].
pub fn polish_model(
    config: &TrainConfig,
    dataset: &Dataset,
    model: &DiffMaxAffineModel,
) -> Result<DiffMaxAffineModel> {
    config.validate()?;
    let (norm_ds, _) = dataset.normalized()?;
    let (train_ds, _) = norm_ds.split(config.val_fraction);
    let batch = Batch::from(&train_ds);
    let polished = polish(model, &batch, config.lambda_reg, config.polish_iters);
    polished.enforce_strict_lower_bounds(config.eta_zeta.0, config.eta_zeta.1)
}

/// Multi-start training: run the restarts, keep the best by validation loss,
/// optionally polish it, enforce the strict lower bounds.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<(DiffMaxAffineModel, FitReport)> {
    let start = Instant::now();
    let results = train_restarts(config, dataset)?;
    let per_restart_losses: Vec<f64> = results.iter().map(|r| r.val_loss).collect();
    let best_restart = per_restart_losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut best = results[best_restart].model.clone();

    if config.polish_iters > 0 {
        let (norm_ds, _) = dataset.normalized()?;
        let (train_ds, _) = norm_ds.split(config.val_fraction);
        let batch = Batch::from(&train_ds);
        best = polish(&best, &batch, config.lambda_reg, config.polish_iters);
    }
    let best = best.enforce_strict_lower_bounds(config.eta_zeta.0, config.eta_zeta.1)?;

    // one-step metrics on the validation split in raw coordinates
    let (_, val_raw) = dataset.split(config.val_fraction);
    let eval_ds = if val_raw.is_empty() { dataset.clone() } else { val_raw };
    let count = eval_ds.len();
    let n = eval_ds.state_dim();
    let mut pred = DMatrix::zeros(n, count);
    let mut truth = DMatrix::zeros(n, count);
    for (j, s) in eval_ds.samples.iter().enumerate() {
        pred.column_mut(j).copy_from(&best.forward_raw(&s.x, &s.u)?);
        truth.column_mut(j).copy_from(&s.x_next);
    }
    let report = FitReport {
        bfr: bfr(&pred, &truth)?,
        rms: rms(&pred, &truth)?,
        per_restart_losses,
        best_restart,
        train_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((best, report))
}

/// Best-fit rate: `1 - ||Xhat - X||_F / ||X - mean(X)||_F`, clamped to [0, 1].
pub fn bfr(x_hat: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<f64> {
    if x_hat.shape() != x.shape() {
        return Err(dim_err("bfr", format!("{:?}", x.shape()), format!("{:?}", x_hat.shape())));
    }
    let count = x.ncols() as f64;
    let mean = x.column_sum() / count;
    let mut denom = 0.0;
    for j in 0..x.ncols() {
        denom += (x.column(j) - &mean).norm_squared();
    }
    let denom = denom.sqrt();
    if denom <= 1e-300 {
        return Err(Error::DegenerateTarget);
    }
    let ratio = (x_hat - x).norm() / denom;
    Ok((1.0 - ratio).clamp(0.0, 1.0))
}

/// Root-mean-square error over columns.
pub fn rms(x_hat: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<f64> {
    if x_hat.shape() != x.shape() {
        return Err(dim_err("rms", format!("{:?}", x.shape()), format!("{:?}", x_hat.shape())));
    }
    Ok((x_hat - x).norm() / (x.ncols() as f64).sqrt())
}

/// Open-loop rollout in raw coordinates.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// States including the initial one: `len(u_seq) + 1` entries unless the
    /// rollout diverged.
    pub states: Vec<DVector<f64>>,
    /// Step at which a non-finite state appeared, if any.
    pub diverged_at: Option<usize>,
}

pub fn open_loop_rollout(model: &DiffMaxAffineModel, x0: &DVector<f64>, u_seq: &[DVector<f64>]) -> Result<Rollout> {
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("open_loop_rollout: non-finite initial state".into()));
    }
    let mut states = Vec::with_capacity(u_seq.len() + 1);
    states.push(x0.clone());
    for (k, u) in u_seq.iter().enumerate() {
        let next = model.forward_raw(states.last().expect("non-empty"), u)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Ok(Rollout {
                states,
                diverged_at: Some(k),
            });
        }
        states.push(next);
    }
    Ok(Rollout {
        states,
        diverged_at: None,
    })
}
