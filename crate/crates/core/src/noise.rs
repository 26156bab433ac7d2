//! Stationary mixing noise processes with analytic second-order structure.
//!
//! Three families are supported: i.i.d. Gaussian, Gaussian VAR(1) and
//! Gaussian moving averages of finite order. Each exposes its exact
//! autocovariances, long-run covariance, a geometric (or finitely supported)
//! mixing-rate bound and the conditional mean of future values given the
//! most recent state.
//!
//! An optional truncation bound clamps every emitted component to `[-M, M]`.
//! The latent Gaussian process is left untouched, so a truncated path is a
//! bounded function of a stationary mixing process. All analytic quantities
//! refer to the untruncated law.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{
    check_psd, dims_match, op_norm, psd_factor, solve_stein, spectral_radius, sym_pinv,
};
use crate::scalar::Scalar;
use crate::seed::{SimRng, TAG_NOISE};

#[derive(Clone, Debug, PartialEq)]
pub enum NoiseKind<T: Scalar> {
    IidGaussian,
    /// `X_{n+1} = A X_n + W_{n+1}`.
    Var1 { a: DMatrix<T> },
    /// `X_n = W_n + Σ_{i=1}^{q} Θ_i W_{n-i}`; holds `[Θ_1, …, Θ_q]`.
    MovingAverage { coefficients: Vec<DMatrix<T>> },
}

/// Bound `ψ_k` on the norm of the conditional mean `k` steps ahead,
/// normalised to a unit-norm conditioning state.
#[derive(Clone, Debug, PartialEq)]
pub enum MixingProfile<T: Scalar> {
    /// `ψ_k = scale · rate^k`.
    Geometric { scale: T, rate: T },
    /// `ψ_k = values[k]`, zero beyond the end.
    Finite(Vec<T>),
}

impl<T: Scalar> MixingProfile<T> {
    pub fn bound(&self, k: usize) -> T {
        match self {
            MixingProfile::Geometric { scale, rate } => {
                if k == 0 {
                    *scale
                } else {
                    *scale * rate.powi(k as i32)
                }
            }
            MixingProfile::Finite(v) => v.get(k).copied().unwrap_or_else(T::zero),
        }
    }

    /// `Σ_{j ≥ n} ψ_j` in closed form; `None` when the series diverges.
    pub fn tail_sum(&self, n: usize) -> Option<T> {
        match self {
            MixingProfile::Geometric { rate, .. } => {
                if *rate >= T::one() {
                    None
                } else {
                    Some(self.bound(n) / (T::one() - *rate))
                }
            }
            MixingProfile::Finite(v) => Some(v.iter().skip(n).fold(T::zero(), |a, b| a + *b)),
        }
    }

    pub fn is_summable(&self) -> bool {
        self.tail_sum(0).is_some()
    }
}

#[derive(Clone, Debug)]
pub struct NoiseModel<T: Scalar> {
    kind: NoiseKind<T>,
    dim: usize,
    innovation_cov: DMatrix<T>,
    truncation: Option<T>,
    innovation_factor: DMatrix<T>,
    stationary_cov: DMatrix<T>,
    stationary_factor: DMatrix<T>,
    mixing: MixingProfile<T>,
}

impl<T: Scalar> NoiseModel<T> {
    /// Builds and validates a model. `innovation_cov` is the covariance of
    /// the driving Gaussian (the marginal covariance for the i.i.d. kind).
    pub fn new(kind: NoiseKind<T>, innovation_cov: DMatrix<T>) -> Result<Self> {
        let dim = innovation_cov.nrows();
        dims_match(&innovation_cov, dim, "innovation covariance")?;
        check_psd(&innovation_cov, "innovation covariance")?;
        let innovation_factor = psd_factor(&innovation_cov)?;
        let stationary_cov = match &kind {
            NoiseKind::IidGaussian => innovation_cov.clone(),
            NoiseKind::Var1 { a } => {
                dims_match(a, dim, "VAR(1) coefficient")?;
                let radius = spectral_radius(a);
                if radius >= T::one() {
                    return Err(Error::Unstable { radius: radius.as_f64() });
                }
                solve_stein(a, &innovation_cov)?
            }
            NoiseKind::MovingAverage { coefficients } => {
                for c in coefficients {
                    dims_match(c, dim, "MA coefficient")?;
                }
                ma_autocov(coefficients, &innovation_cov, 0)
            }
        };
        let stationary_factor = psd_factor(&stationary_cov)?;
        let mut model = NoiseModel {
            kind,
            dim,
            innovation_cov,
            truncation: None,
            innovation_factor,
            stationary_cov,
            stationary_factor,
            mixing: MixingProfile::Finite(vec![]),
        };
        model.mixing = model.build_mixing();
        Ok(model)
    }

    pub fn iid_gaussian(cov: DMatrix<T>) -> Result<Self> {
        Self::new(NoiseKind::IidGaussian, cov)
    }

    pub fn var1(a: DMatrix<T>, innovation_cov: DMatrix<T>) -> Result<Self> {
        Self::new(NoiseKind::Var1 { a }, innovation_cov)
    }

    pub fn moving_average(coefficients: Vec<DMatrix<T>>, innovation_cov: DMatrix<T>) -> Result<Self> {
        Self::new(NoiseKind::MovingAverage { coefficients }, innovation_cov)
    }

    /// Clamps emitted components to `[-bound, bound]`.
    pub fn with_truncation(mut self, bound: T) -> Result<Self> {
        if !(bound > T::zero()) || !bound.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "truncation bound must be positive and finite, got {bound}"
            )));
        }
        self.truncation = Some(bound);
        Ok(self)
    }

    pub fn kind(&self) -> &NoiseKind<T> {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn truncation(&self) -> Option<T> {
        self.truncation
    }

    pub fn innovation_cov(&self) -> &DMatrix<T> {
        &self.innovation_cov
    }

    pub fn innovation_factor(&self) -> &DMatrix<T> {
        &self.innovation_factor
    }

    /// `R_0`, the marginal covariance.
    pub fn stationary_cov(&self) -> &DMatrix<T> {
        &self.stationary_cov
    }

    /// The VAR(1) coefficient, or the zero matrix for i.i.d. noise.
    pub fn transition(&self) -> Option<DMatrix<T>> {
        match &self.kind {
            NoiseKind::Var1 { a } => Some(a.clone()),
            NoiseKind::IidGaussian => Some(DMatrix::zeros(self.dim, self.dim)),
            NoiseKind::MovingAverage { .. } => None,
        }
    }

    /// Analytic lag-`j` autocovariance `R_j = E X_j X_0ᵀ`.
    pub fn autocovariance(&self, j: usize) -> DMatrix<T> {
        match &self.kind {
            NoiseKind::IidGaussian => {
                if j == 0 {
                    self.stationary_cov.clone()
                } else {
                    DMatrix::zeros(self.dim, self.dim)
                }
            }
            NoiseKind::Var1 { a } => a.pow(j as u32) * &self.stationary_cov,
            NoiseKind::MovingAverage { coefficients } => {
                ma_autocov(coefficients, &self.innovation_cov, j)
            }
        }
    }

    /// `R̄ = R_0 + Σ_{j≥1} (R_j + R_jᵀ)`.
    pub fn long_run_covariance(&self) -> DMatrix<T> {
        match &self.kind {
            NoiseKind::IidGaussian => self.stationary_cov.clone(),
            NoiseKind::Var1 { a } => {
                let p = self.dim;
                let id = DMatrix::<T>::identity(p, p);
                let r0 = &self.stationary_cov;
                let inv = (&id - a)
                    .try_inverse()
                    .expect("I - A invertible for a stable VAR(1)");
                let fwd = a * &inv * r0;
                r0 + &fwd + fwd.transpose()
            }
            NoiseKind::MovingAverage { coefficients } => {
                self.long_run_covariance_partial(coefficients.len())
            }
        }
    }

    /// Truncated sum `R_0 + Σ_{j=1}^{lags} (R_j + R_jᵀ)`.
    pub fn long_run_covariance_partial(&self, lags: usize) -> DMatrix<T> {
        let mut acc = self.stationary_cov.clone();
        for j in 1..=lags {
            let r = self.autocovariance(j);
            acc += &r + r.transpose();
        }
        acc
    }

    pub fn mixing_profile(&self) -> &MixingProfile<T> {
        &self.mixing
    }

    /// `ψ_k`: bound on `‖E[X_{n-1+k} | X_{n-1} = x]‖` over unit-norm `x`.
    pub fn mixing_bound(&self, k: usize) -> T {
        self.mixing.bound(k)
    }

    /// `E[X_{n-1+m} | X_{n-1} = x_last]`.
    ///
    /// Exact for the VAR(1) (`A^m x`) and i.i.d. (zero) kinds. For moving
    /// averages this is the Gaussian regression on the last state only,
    /// `R_m R_0⁺ x`.
    pub fn conditional_mean(&self, x_last: &DVector<T>, m: usize) -> DVector<T> {
        if m == 0 {
            return x_last.clone();
        }
        match &self.kind {
            NoiseKind::IidGaussian => DVector::zeros(self.dim),
            NoiseKind::Var1 { a } => a.pow(m as u32) * x_last,
            NoiseKind::MovingAverage { .. } => {
                self.autocovariance(m) * sym_pinv(&self.stationary_cov) * x_last
            }
        }
    }

    fn build_mixing(&self) -> MixingProfile<T> {
        let two = T::lit(2.0);
        let base = (two * self.stationary_cov.trace().max(T::zero()).sqrt()).max(T::one());
        match &self.kind {
            NoiseKind::IidGaussian => MixingProfile::Finite(vec![base]),
            NoiseKind::Var1 { a } => {
                let (rate, c_a) = geometric_envelope(a);
                MixingProfile::Geometric { scale: base.max(c_a), rate }
            }
            NoiseKind::MovingAverage { coefficients } => {
                let innov = two * self.innovation_cov.trace().max(T::zero()).sqrt();
                let r0_pinv = sym_pinv(&self.stationary_cov);
                let q = coefficients.len();
                let mut v = Vec::with_capacity(q + 1);
                v.push(base);
                for k in 1..=q {
                    let tail = coefficients[k - 1..]
                        .iter()
                        .fold(T::zero(), |acc, c| acc + op_norm(c));
                    let regression = op_norm(&(self.autocovariance(k) * &r0_pinv));
                    v.push((innov * tail).max(regression));
                }
                MixingProfile::Finite(v)
            }
        }
    }

    /// Opens a deterministic sample stream for `seed`.
    pub fn stream(&self, seed: u64) -> NoiseStream<'_, T> {
        NoiseStream::new(self, crate::seed::rng_for(seed, &[TAG_NOISE]))
    }

    /// The first `n` values of the stream for `seed`.
    pub fn sample_path(&self, n: usize, seed: u64) -> Vec<DVector<T>> {
        let mut s = self.stream(seed);
        (0..n).map(|_| s.next_value().clone()).collect()
    }
}

fn ma_autocov<T: Scalar>(coefficients: &[DMatrix<T>], cov: &DMatrix<T>, j: usize) -> DMatrix<T> {
    let p = cov.nrows();
    let q = coefficients.len();
    if j > q {
        return DMatrix::zeros(p, p);
    }
    let theta = |i: usize| -> DMatrix<T> {
        if i == 0 {
            DMatrix::identity(p, p)
        } else {
            coefficients[i - 1].clone()
        }
    };
    (0..=q - j).fold(DMatrix::zeros(p, p), |acc, i| {
        acc + theta(i + j) * cov * theta(i).transpose()
    })
}

/// Rate and constant with `‖A^k‖ ≤ c·rate^k` for all `k`.
///
/// For normal `A` the spectral radius itself works with `c = 1`. Otherwise
/// the rate is nudged a tenth of the way towards one and `c` is the
/// observed supremum of `‖A^k‖ / rate^k`, which then decays geometrically.
fn geometric_envelope<T: Scalar>(a: &DMatrix<T>) -> (T, T) {
    let rho = spectral_radius(a);
    let commutator = a * a.transpose() - a.transpose() * a;
    let normal = commutator.amax() <= crate::linalg::rel_tol::<T>() * a.amax().max(T::one());
    if normal {
        return (rho, T::one());
    }
    let rate = rho + (T::one() - rho) * T::lit(0.1);
    let mut power = DMatrix::<T>::identity(a.nrows(), a.ncols());
    let mut scale = T::one();
    let mut sup = T::one();
    let mut k = 0usize;
    loop {
        k += 1;
        power = &power * a;
        scale *= rate;
        let ratio = op_norm(&power) / scale;
        sup = sup.max(ratio);
        if k >= 10 && ratio < sup * T::lit(1e-3) || k > 100_000 {
            break;
        }
    }
    (rate, sup)
}

/// Deterministic sample stream of a [`NoiseModel`].
///
/// The first value is an exact draw from the stationary law; each later
/// value follows the model's transition. Prefixes agree across lengths.
pub struct NoiseStream<'a, T: Scalar> {
    model: &'a NoiseModel<T>,
    rng: SimRng,
    latent: DVector<T>,
    scratch: DVector<T>,
    z: DVector<T>,
    innovations: Vec<DVector<T>>,
    head: usize,
    out: DVector<T>,
    started: bool,
}

impl<'a, T: Scalar> NoiseStream<'a, T> {
    fn new(model: &'a NoiseModel<T>, rng: SimRng) -> Self {
        let p = model.dim;
        let q = match &model.kind {
            NoiseKind::MovingAverage { coefficients } => coefficients.len(),
            _ => 0,
        };
        NoiseStream {
            model,
            rng,
            latent: DVector::zeros(p),
            scratch: DVector::zeros(p),
            z: DVector::zeros(p),
            innovations: vec![DVector::zeros(p); q + 1],
            head: 0,
            out: DVector::zeros(p),
            started: false,
        }
    }

    fn draw_standard(&mut self) {
        for v in self.z.iter_mut() {
            let s: f64 = self.rng.sample(StandardNormal);
            *v = T::lit(s);
        }
    }

    fn draw_innovation_into_scratch(&mut self) {
        self.draw_standard();
        self.scratch
            .gemv(T::one(), &self.model.innovation_factor, &self.z, T::zero());
    }

    /// Advances the stream and returns the new value.
    pub fn next_value(&mut self) -> &DVector<T> {
        let model = self.model;
        match &model.kind {
            NoiseKind::IidGaussian => {
                self.draw_innovation_into_scratch();
                self.latent.copy_from(&self.scratch);
            }
            NoiseKind::Var1 { a } => {
                if self.started {
                    self.draw_innovation_into_scratch();
                    self.scratch.gemv(T::one(), a, &self.latent, T::one());
                    std::mem::swap(&mut self.latent, &mut self.scratch);
                } else {
                    self.draw_standard();
                    self.latent
                        .gemv(T::one(), &model.stationary_factor, &self.z, T::zero());
                }
            }
            NoiseKind::MovingAverage { coefficients } => {
                let slots = self.innovations.len();
                let fill = if self.started { 1 } else { slots };
                for _ in 0..fill {
                    self.draw_innovation_into_scratch();
                    self.head = (self.head + 1) % slots;
                    self.innovations[self.head].copy_from(&self.scratch);
                }
                self.latent.copy_from(&self.innovations[self.head]);
                for (i, theta) in coefficients.iter().enumerate() {
                    let idx = (self.head + slots - (i + 1)) % slots;
                    self.latent
                        .gemv(T::one(), theta, &self.innovations[idx], T::one());
                }
            }
        }
        self.started = true;
        self.out.copy_from(&self.latent);
        if let Some(m) = model.truncation {
            for v in self.out.iter_mut() {
                *v = v.max(-m).min(m);
            }
        }
        &self.out
    }
}
