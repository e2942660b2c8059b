//! Data-generating benchmark systems: the random clipped-PWA system and a
//! two-tank nonlinear analog, plus excitation signals and dataset assembly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};
use crate::ident::{Dataset, Sample};

/// Componentwise clamp of `v` into `[lo, hi]`.
pub fn clip(v: &DVector<f64>, lo: f64, hi: f64) -> Result<DVector<f64>> {
    if lo > hi {
        return Err(Error::InvalidArgument(format!("clip: lo {lo} > hi {hi}")));
    }
    Ok(v.map(|e| e.clamp(lo, hi)))
}

/// A discrete-time system usable as a data source and as an MPC plant.
pub trait System {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// Default excitation / operating box for the inputs.
    fn input_box(&self) -> Vec<(f64, f64)>;
    /// Box the initial condition is drawn from.
    fn init_box(&self) -> Vec<(f64, f64)>;
}

/// `x+ = A x + B u + W_A clip_[0,2](W_B x)`, 4 states, 2 inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPwaSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w_a: DMatrix<f64>,
    pub w_b: DMatrix<f64>,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub seed: u64,
    /// Number of rejected draws before a stable `A` was found.
    pub redraws: u64,
}

pub const SIGMA_PWA_N: usize = 4;
pub const SIGMA_PWA_M: usize = 2;

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

impl SigmaPwaSystem {
    /// Draw a system under the seed, redrawing `A` until its spectral radius
    /// is below one (raw U(0,1) draws are unstable almost surely).
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (0.5f64).sqrt()).expect("valid std");
        let mut redraws = 0u64;
        let a = loop {
            let cand = DMatrix::from_fn(SIGMA_PWA_N, SIGMA_PWA_N, |_, _| rng.random_range(0.0..1.0));
            // nonnegative matrix: rho >= min row sum, so skip the eigensolve
            // for the overwhelming majority of draws
            let min_row_sum = (0..SIGMA_PWA_N).map(|i| cand.row(i).sum()).fold(f64::INFINITY, f64::min);
            if min_row_sum < 1.0 && spectral_radius(&cand) < 1.0 {
                break cand;
            }
            redraws += 1;
        };
        let b = DMatrix::from_fn(SIGMA_PWA_N, SIGMA_PWA_M, |_, _| rng.random_range(0.0..1.0 / 3.0));
        let w_a = DMatrix::from_fn(SIGMA_PWA_N, SIGMA_PWA_N, |_, _| normal.sample(&mut rng));
        let w_b = DMatrix::from_fn(SIGMA_PWA_N, SIGMA_PWA_N, |_, _| normal.sample(&mut rng));
        Self {
            a,
            b,
            w_a,
            w_b,
            clip_lo: 0.0,
            clip_hi: 2.0,
            seed,
            redraws,
        }
    }
}

pub fn sigma_pwa_step(sys: &SigmaPwaSystem, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != SIGMA_PWA_N || u.len() != SIGMA_PWA_M {
        return Err(dim_err("sigma_pwa_step", format!("x {SIGMA_PWA_N}, u {SIGMA_PWA_M}"), format!("x {}, u {}", x.len(), u.len())));
    }
    let inner = clip(&(&sys.w_b * x), sys.clip_lo, sys.clip_hi)?;
    Ok(&sys.a * x + &sys.b * u + &sys.w_a * inner)
}

impl System for SigmaPwaSystem {
    fn state_dim(&self) -> usize {
        SIGMA_PWA_N
    }

    fn input_dim(&self) -> usize {
        SIGMA_PWA_M
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        sigma_pwa_step(self, x, u)
    }

    fn input_box(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 1.0); SIGMA_PWA_M]
    }

    fn init_box(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); SIGMA_PWA_N]
    }
}

/// Two gravity-drained tanks in series: the pump feeds tank 1, tank 1 drains
/// into tank 2, tank 2 drains out. Continuous dynamics
/// `dh1 = -a1 sqrt(h1) + b u`, `dh2 = a1 sqrt(h1) - a2 sqrt(h2)`,
/// integrated with fixed-step RK4 and clamped at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTankSystem {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub dt: f64,
    pub substeps: usize,
}

impl Default for TwoTankSystem {
    fn default() -> Self {
        Self {
            a1: 0.4,
            a2: 0.4,
            b: 0.4,
            dt: 0.5,
            substeps: 4,
        }
    }
}

impl TwoTankSystem {
    fn deriv(&self, h: &DVector<f64>, u: f64) -> DVector<f64> {
        let s1 = h[0].max(0.0).sqrt();
        let s2 = h[1].max(0.0).sqrt();
        DVector::from_row_slice(&[-self.a1 * s1 + self.b * u, self.a1 * s1 - self.a2 * s2])
    }

    /// Steady-state levels under a constant input.
    pub fn steady_state(&self, u: f64) -> DVector<f64> {
        let h1 = (self.b * u / self.a1).powi(2);
        let h2 = (self.a1 * h1.sqrt() / self.a2).powi(2);
        DVector::from_row_slice(&[h1, h2])
    }
}

pub fn two_tank_step(sys: &TwoTankSystem, h: &DVector<f64>, u: f64) -> Result<DVector<f64>> {
    if h.len() != 2 {
        return Err(dim_err("two_tank_step", 2usize, h.len()));
    }
    if u < 0.0 {
        return Err(Error::InvalidArgument(format!("two_tank_step: negative input {u}")));
    }
    let dt = sys.dt / sys.substeps.max(1) as f64;
    let mut state = h.clone();
    for _ in 0..sys.substeps.max(1) {
        let k1 = sys.deriv(&state, u);
        let k2 = sys.deriv(&(&state + &k1 * (dt / 2.0)), u);
        let k3 = sys.deriv(&(&state + &k2 * (dt / 2.0)), u);
        let k4 = sys.deriv(&(&state + &k3 * dt), u);
        state += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        state = state.map(|v| v.max(0.0));
    }
    Ok(state)
}

impl System for TwoTankSystem {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if u.len() != 1 {
            return Err(dim_err("two_tank_step input", 1usize, u.len()));
        }
        two_tank_step(self, x, u[0])
    }

    fn input_box(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 2.0)]
    }

    fn init_box(&self) -> Vec<(f64, f64)> {
        vec![(0.2, 1.5); 2]
    }
}

/// Input excitation over a per-dimension box.
#[derive(Debug, Clone, PartialEq)]
pub enum Excitation {
    /// I.i.d. uniform samples over the box (the default).
    UniformWhite { lo: DVector<f64>, hi: DVector<f64> },
    /// Linear-chirp sine sweep per dimension, `f0`..`f1` cycles over the run.
    SineSweep { lo: DVector<f64>, hi: DVector<f64>, f0: f64, f1: f64 },
}

impl Excitation {
    pub fn uniform_from_box(bounds: &[(f64, f64)]) -> Self {
        Excitation::UniformWhite {
            lo: DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.0)),
            hi: DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.1)),
        }
    }

    fn sample<R: Rng>(&self, k: usize, horizon: usize, rng: &mut R) -> DVector<f64> {
        match self {
            Excitation::UniformWhite { lo, hi } => DVector::from_fn(lo.len(), |i, _| {
                if hi[i] > lo[i] {
                    rng.random_range(lo[i]..hi[i])
                } else {
                    lo[i]
                }
            }),
            Excitation::SineSweep { lo, hi, f0, f1 } => {
                let s = sine_sweep(k, horizon, *f0, *f1);
                DVector::from_fn(lo.len(), |i, _| {
                    let mid = 0.5 * (lo[i] + hi[i]);
                    let amp = 0.5 * (hi[i] - lo[i]);
                    mid + amp * s
                })
            }
        }
    }
}

/// Linear-chirp sample in [-1, 1]: instantaneous frequency sweeps from `f0`
/// to `f1` cycles-per-run as `k` goes from 0 to `horizon`.
pub fn sine_sweep(k: usize, horizon: usize, f0: f64, f1: f64) -> f64 {
    let t = k as f64 / horizon.max(1) as f64;
    (2.0 * std::f64::consts::PI * (f0 * t + 0.5 * (f1 - f0) * t * t)).sin()
}

const DIVERGENCE_BOUND: f64 = 1e9;

/// Simulate a single trajectory of `count` steps and package the triplets.
/// Gaussian measurement noise of standard deviation `noise_sigma` is added to
/// the recorded states only; consecutive triplets share the same noisy
/// measurement sequence.
pub fn make_dataset(system: &dyn System, count: usize, excitation: &Excitation, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if count < 1 {
        return Err(Error::InvalidArgument("make_dataset: need N >= 1".into()));
    }
    if noise_sigma < 0.0 {
        return Err(Error::InvalidArgument("make_dataset: negative noise sigma".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = system.init_box();
    let mut x = DVector::from_fn(system.state_dim(), |i, _| {
        if init[i].1 > init[i].0 {
            rng.random_range(init[i].0..init[i].1)
        } else {
            init[i].0
        }
    });
    let mut states = Vec::with_capacity(count + 1);
    let mut inputs = Vec::with_capacity(count);
    states.push(x.clone());
    for k in 0..count {
        let u = excitation.sample(k, count, &mut rng);
        x = system.step(&x, &u)?;
        if !x.iter().all(|v| v.is_finite() && v.abs() < DIVERGENCE_BOUND) {
            return Err(Error::Divergent(format!(
                "make_dataset: trajectory diverged at step {k}; regenerate the system with a different seed"
            )));
        }
        inputs.push(u);
        states.push(x.clone());
    }
    // shared noisy measurement sequence
    let measured: Vec<DVector<f64>> = if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("valid std");
        states
            .iter()
            .map(|s| s.map(|v| v + normal.sample(&mut rng)))
            .collect()
    } else {
        states
    };
    let samples: Vec<Sample> = (0..count)
        .map(|k| Sample {
            x: measured[k].clone(),
            u: inputs[k].clone(),
            x_next: measured[k + 1].clone(),
        })
        .collect();
    Dataset::new(samples, None, seed)
}
