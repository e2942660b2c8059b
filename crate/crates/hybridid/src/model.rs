//! Difference-of-max-affine hybrid model.
//!
//! The model predicts the successor state as `x+ = alpha*(x,u) - beta*(x,u)`,
//! where each side is the componentwise maximum of a family of affine maps
//! together with an affine target. With a diagonal positive Hessian and
//! elementwise lower bounds, the side QPs have this closed-form solution, so
//! the forward pass never solves a QP. The QP route is kept in [`crate::qp`]
//! as a verification oracle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{dim_err, Error, Result};

/// One affine map `(A, B, c)`: `v(x, u) = A x + B u + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePiece {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
}

impl AffinePiece {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DVector<f64>) -> Self {
        Self { a, b, c }
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, m),
            c: DVector::zeros(n),
        }
    }

    pub fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.c
    }

    fn check(&self, n: usize, m: usize, what: &'static str) -> Result<()> {
        if self.a.nrows() != n || self.a.ncols() != n || self.b.nrows() != n || self.b.ncols() != m || self.c.len() != n {
            return Err(dim_err(
                "AffinePiece",
                format!("{what}: A {n}x{n}, B {n}x{m}, c {n}"),
                format!(
                    "A {}x{}, B {}x{}, c {}",
                    self.a.nrows(),
                    self.a.ncols(),
                    self.b.nrows(),
                    self.b.ncols(),
                    self.c.len()
                ),
            ));
        }
        if self.a.iter().chain(self.b.iter()).chain(self.c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("{what}: non-finite entries")));
        }
        Ok(())
    }
}

/// Per-dimension z-score statistics carried with a trained model so that
/// rollouts and controllers are self-contained.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub x_mean: DVector<f64>,
    pub x_std: DVector<f64>,
    pub u_mean: DVector<f64>,
    pub u_std: DVector<f64>,
}

impl Normalization {
    /// Identity statistics: normalized and raw coordinates coincide.
    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            x_mean: DVector::zeros(n),
            x_std: DVector::from_element(n, 1.0),
            u_mean: DVector::zeros(m),
            u_std: DVector::from_element(m, 1.0),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.x_mean.iter().all(|&v| v == 0.0)
            && self.u_mean.iter().all(|&v| v == 0.0)
            && self.x_std.iter().all(|&v| v == 1.0)
            && self.u_std.iter().all(|&v| v == 1.0)
    }

    pub fn norm_x(&self, x: &DVector<f64>) -> DVector<f64> {
        x.zip_zip_map(&self.x_mean, &self.x_std, |v, mu, sd| (v - mu) / sd)
    }

    pub fn denorm_x(&self, x: &DVector<f64>) -> DVector<f64> {
        x.zip_zip_map(&self.x_mean, &self.x_std, |v, mu, sd| v * sd + mu)
    }

    pub fn norm_u(&self, u: &DVector<f64>) -> DVector<f64> {
        u.zip_zip_map(&self.u_mean, &self.u_std, |v, mu, sd| (v - mu) / sd)
    }

    pub fn denorm_u(&self, u: &DVector<f64>) -> DVector<f64> {
        u.zip_zip_map(&self.u_mean, &self.u_std, |v, mu, sd| v * sd + mu)
    }
}

/// Which affine map attains the componentwise maximum on each side.
/// Index 0 is the target (psi or phi); index `k > 0` is piece `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    pub alpha_active: Vec<usize>,
    pub beta_active: Vec<usize>,
}

/// Trainable difference-of-max-affine model.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffMaxAffineModel {
    pub n: usize,
    pub m: usize,
    pub alpha_pieces: Vec<AffinePiece>,
    pub beta_pieces: Vec<AffinePiece>,
    pub psi: AffinePiece,
    pub phi: AffinePiece,
    pub h_alpha: DVector<f64>,
    pub h_beta: DVector<f64>,
    pub normalization: Normalization,
}

/// Gradient of a scalar functional with respect to all model parameters,
/// laid out piece-for-piece like the model itself.
#[derive(Debug, Clone)]
pub struct ModelGrad {
    pub alpha_pieces: Vec<AffinePiece>,
    pub beta_pieces: Vec<AffinePiece>,
    pub psi: AffinePiece,
    pub phi: AffinePiece,
}

impl ModelGrad {
    pub fn zeros(n: usize, m: usize, nr_alpha: usize, nr_beta: usize) -> Self {
        Self {
            alpha_pieces: vec![AffinePiece::zeros(n, m); nr_alpha],
            beta_pieces: vec![AffinePiece::zeros(n, m); nr_beta],
            psi: AffinePiece::zeros(n, m),
            phi: AffinePiece::zeros(n, m),
        }
    }
}

/// Componentwise maximum of the target and all pieces, with the attaining
/// index per component (ties resolve to the lowest index, target = 0).
///
/// This is the unique minimizer of the side QP for any positive diagonal
/// Hessian, so the result does not depend on `h_alpha`/`h_beta`.
pub fn eval_component_max(
    pieces: &[AffinePiece],
    target: &AffinePiece,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<usize>)> {
    if pieces.is_empty() {
        return Err(Error::InvalidArgument("eval_component_max: need at least one piece".into()));
    }
    let n = target.c.len();
    let m = target.b.ncols();
    target.check(n, m, "target")?;
    for p in pieces {
        p.check(n, m, "piece")?;
    }
    if x.len() != n {
        return Err(dim_err("eval_component_max x", n, x.len()));
    }
    if u.len() != m {
        return Err(dim_err("eval_component_max u", m, u.len()));
    }
    let mut value = target.eval(x, u);
    let mut active = vec![0usize; n];
    for (i, p) in pieces.iter().enumerate() {
        let v = p.eval(x, u);
        for k in 0..n {
            if v[k] > value[k] {
                value[k] = v[k];
                active[k] = i + 1;
            }
        }
    }
    Ok((value, active))
}

impl DiffMaxAffineModel {
    pub fn new(
        alpha_pieces: Vec<AffinePiece>,
        beta_pieces: Vec<AffinePiece>,
        psi: AffinePiece,
        phi: AffinePiece,
        h_alpha: DVector<f64>,
        h_beta: DVector<f64>,
        normalization: Normalization,
    ) -> Result<Self> {
        let n = psi.c.len();
        let m = psi.b.ncols();
        if alpha_pieces.is_empty() || beta_pieces.is_empty() {
            return Err(Error::InvalidModel("need at least one piece on each side".into()));
        }
        psi.check(n, m, "psi")?;
        phi.check(n, m, "phi")?;
        for p in alpha_pieces.iter().chain(beta_pieces.iter()) {
            p.check(n, m, "piece")?;
        }
        if h_alpha.len() != n || h_beta.len() != n {
            return Err(dim_err("hessian diagonal", n, format!("{}/{}", h_alpha.len(), h_beta.len())));
        }
        if h_alpha.iter().chain(h_beta.iter()).any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel("Hessian diagonals must be strictly positive".into()));
        }
        if normalization.x_mean.len() != n || normalization.u_mean.len() != m {
            return Err(dim_err("normalization", format!("n={n}, m={m}"), "mismatched stats"));
        }
        Ok(Self {
            n,
            m,
            alpha_pieces,
            beta_pieces,
            psi,
            phi,
            h_alpha,
            h_beta,
            normalization,
        })
    }

    /// Model with identity Hessians and identity normalization.
    pub fn with_identity_hessians(
        alpha_pieces: Vec<AffinePiece>,
        beta_pieces: Vec<AffinePiece>,
        psi: AffinePiece,
        phi: AffinePiece,
    ) -> Result<Self> {
        let n = psi.c.len();
        let m = psi.b.ncols();
        Self::new(
            alpha_pieces,
            beta_pieces,
            psi,
            phi,
            DVector::from_element(n, 1.0),
            DVector::from_element(n, 1.0),
            Normalization::identity(n, m),
        )
    }

    pub fn nr_alpha(&self) -> usize {
        self.alpha_pieces.len()
    }

    pub fn nr_beta(&self) -> usize {
        self.beta_pieces.len()
    }

    /// Random model for testing and trainer initialization: piece entries
    /// drawn `N(0, scale^2)`, targets started below the componentwise minimum
    /// of the piece offsets.
    pub fn random<R: Rng>(n: usize, m: usize, nr_alpha: usize, nr_beta: usize, scale: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, scale).expect("positive scale");
        let rand_piece = |rng: &mut R| AffinePiece {
            a: DMatrix::from_fn(n, n, |_, _| dist.sample(rng)),
            b: DMatrix::from_fn(n, m, |_, _| dist.sample(rng)),
            c: DVector::from_fn(n, |_, _| dist.sample(rng)),
        };
        let alpha: Vec<_> = (0..nr_alpha).map(|_| rand_piece(rng)).collect();
        let beta: Vec<_> = (0..nr_beta).map(|_| rand_piece(rng)).collect();
        // targets share the first piece's slopes with a strictly lower
        // offset, so they never achieve the componentwise max
        let low_target = |pieces: &[AffinePiece]| {
            let mut c = pieces[0].c.clone();
            for p in pieces.iter().skip(1) {
                c.zip_apply(&p.c, |v, o| *v = v.min(o));
            }
            AffinePiece {
                a: pieces[0].a.clone(),
                b: pieces[0].b.clone(),
                c: c.add_scalar(-1.0),
            }
        };
        let psi = low_target(&alpha);
        let phi = low_target(&beta);
        Self::new(
            alpha,
            beta,
            psi,
            phi,
            DVector::from_element(n, 1.0),
            DVector::from_element(n, 1.0),
            Normalization::identity(n, m),
        )
        .expect("random model is well-formed")
    }

    /// One-step prediction in model (normalized) coordinates.
    pub fn forward(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DVector<f64>, ActiveSet)> {
        let (alpha, alpha_active) = eval_component_max(&self.alpha_pieces, &self.psi, x, u)?;
        let (beta, beta_active) = eval_component_max(&self.beta_pieces, &self.phi, x, u)?;
        Ok((
            alpha - beta,
            ActiveSet {
                alpha_active,
                beta_active,
            },
        ))
    }

    /// One-step prediction in raw coordinates, applying the stored
    /// normalization on the way in and out.
    pub fn forward_raw(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (xn, _) = self.forward(&self.normalization.norm_x(x), &self.normalization.norm_u(u))?;
        Ok(self.normalization.denorm_x(&xn))
    }

    /// Exact subgradient of `upstream . forward(x, u)` with respect to every
    /// parameter. Only the active map on each side of each output component
    /// receives a nonzero contribution; beta-side entries are negated.
    pub fn subgrad_params(&self, x: &DVector<f64>, u: &DVector<f64>, upstream: &DVector<f64>) -> Result<ModelGrad> {
        if upstream.len() != self.n {
            return Err(dim_err("subgrad_params upstream", self.n, upstream.len()));
        }
        let (_, active) = self.forward(x, u)?;
        let mut grad = ModelGrad::zeros(self.n, self.m, self.nr_alpha(), self.nr_beta());
        let add = |piece: &mut AffinePiece, k: usize, sign: f64| {
            let g = sign * upstream[k];
            for j in 0..self.n {
                piece.a[(k, j)] += g * x[j];
            }
            for j in 0..self.m {
                piece.b[(k, j)] += g * u[j];
            }
            piece.c[k] += g;
        };
        for k in 0..self.n {
            let ia = active.alpha_active[k];
            if ia == 0 {
                add(&mut grad.psi, k, 1.0);
            } else {
                add(&mut grad.alpha_pieces[ia - 1], k, 1.0);
            }
            let ib = active.beta_active[k];
            if ib == 0 {
                add(&mut grad.phi, k, -1.0);
            } else {
                add(&mut grad.beta_pieces[ib - 1], k, -1.0);
            }
        }
        Ok(grad)
    }

    /// Replace the psi/phi targets by the first piece shifted down by
    /// `eta`/`zeta`, so the targets are strictly below the componentwise
    /// maximum everywhere. The forward map is unchanged.
    pub fn enforce_strict_lower_bounds(&self, eta: f64, zeta: f64) -> Result<Self> {
        if !(eta > 0.0) || !(zeta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "enforce_strict_lower_bounds: eta and zeta must be positive (got {eta}, {zeta})"
            )));
        }
        let mut out = self.clone();
        out.psi = self.alpha_pieces[0].clone();
        out.psi.c.apply(|v| *v -= eta);
        out.phi = self.beta_pieces[0].clone();
        out.phi.c.apply(|v| *v -= zeta);
        Ok(out)
    }

    /// True once the targets coincide with some piece up to a uniformly
    /// negative offset, as produced by [`Self::enforce_strict_lower_bounds`].
    pub fn strict_lower_bounds_enforced(&self) -> bool {
        let dominated = |target: &AffinePiece, pieces: &[AffinePiece]| {
            pieces.iter().any(|p| {
                target.a == p.a && target.b == p.b && target.c.iter().zip(p.c.iter()).all(|(t, c)| t < c)
            })
        };
        dominated(&self.psi, &self.alpha_pieces) && dominated(&self.phi, &self.beta_pieces)
    }

    /// Number of trainable scalars (pieces and targets; Hessians excluded).
    pub fn param_count(&self) -> usize {
        let per_piece = self.n * self.n + self.n * self.m + self.n;
        (self.nr_alpha() + self.nr_beta() + 2) * per_piece
    }

    /// Flatten all trainable parameters into one vector. Layout: alpha pieces
    /// in order, then beta pieces, then psi, then phi; within a piece A
    /// row-major, then B row-major, then c.
    pub fn pack_params(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        let mut push = |p: &AffinePiece| {
            for r in 0..p.a.nrows() {
                for cidx in 0..p.a.ncols() {
                    v.push(p.a[(r, cidx)]);
                }
            }
            for r in 0..p.b.nrows() {
                for cidx in 0..p.b.ncols() {
                    v.push(p.b[(r, cidx)]);
                }
            }
            v.extend(p.c.iter());
        };
        for p in &self.alpha_pieces {
            push(p);
        }
        for p in &self.beta_pieces {
            push(p);
        }
        push(&self.psi);
        push(&self.phi);
        DVector::from_vec(v)
    }

    /// Inverse of [`Self::pack_params`]; dimensions and Hessians are taken
    /// from `self`.
    pub fn unpack_params(&self, v: &DVector<f64>) -> Result<Self> {
        if v.len() != self.param_count() {
            return Err(dim_err("unpack_params", self.param_count(), v.len()));
        }
        let (n, m) = (self.n, self.m);
        let mut idx = 0usize;
        let mut take_piece = || {
            let mut p = AffinePiece::zeros(n, m);
            for r in 0..n {
                for c in 0..n {
                    p.a[(r, c)] = v[idx];
                    idx += 1;
                }
            }
            for r in 0..n {
                for c in 0..m {
                    p.b[(r, c)] = v[idx];
                    idx += 1;
                }
            }
            for r in 0..n {
                p.c[r] = v[idx];
                idx += 1;
            }
            p
        };
        let alpha: Vec<_> = (0..self.nr_alpha()).map(|_| take_piece()).collect();
        let beta: Vec<_> = (0..self.nr_beta()).map(|_| take_piece()).collect();
        let psi = take_piece();
        let phi = take_piece();
        let mut out = self.clone();
        out.alpha_pieces = alpha;
        out.beta_pieces = beta;
        out.psi = psi;
        out.phi = phi;
        Ok(out)
    }

    /// Pack a structured gradient with the same layout as the parameters.
    pub fn pack_grad(&self, g: &ModelGrad) -> DVector<f64> {
        let tmp = DiffMaxAffineModel {
            alpha_pieces: g.alpha_pieces.clone(),
            beta_pieces: g.beta_pieces.clone(),
            psi: g.psi.clone(),
            phi: g.phi.clone(),
            ..self.clone()
        };
        tmp.pack_params()
    }
}
