//! Exit-time Monte Carlo on the natural time scale `t_n = Σ_{k<n} 1/k`, and
//! the Gaussian rate functional (`H`, Legendre transform, action).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{check_psd, spd_inverse};
use crate::noise::NoiseModel;
use crate::objective::ObjectiveSpec;
use crate::optimizer::Trajectory;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_for, TAG_START};
use crate::stats::{binomial_interval, least_squares};

/// `t_1 = 0`, `t_{n+1} = t_n + 1/n`.
pub fn interpolation_time(n: usize) -> f64 {
    assert!(n >= 1, "interpolation time is defined for n ≥ 1");
    (1..n).map(|k| 1.0 / k as f64).sum()
}

/// Piecewise-constant path `θⁿ(t) = θ_{m(t_n + t)}` started at index `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolatedProcess<T: Scalar> {
    pub start: usize,
    /// `t_{start+j} - t_start`.
    pub times: Vec<f64>,
    /// `θ_{start+j}`.
    pub values: Vec<DVector<T>>,
}

impl<T: Scalar> InterpolatedProcess<T> {
    /// `values[j]` is the iterate with index `start + j`, whose update used
    /// step `1/(start + j)`.
    pub fn new(start: usize, values: Vec<DVector<T>>) -> Self {
        assert!(start >= 1 && !values.is_empty());
        let mut times = Vec::with_capacity(values.len());
        let mut t = 0.0;
        for j in 0..values.len() {
            times.push(t);
            t += 1.0 / (start + j) as f64;
        }
        InterpolatedProcess { start, times, values }
    }

    /// Uses `θ_{n-1}, θ_n, …` of a run with steps `c0/(k+1)`, so index `n`
    /// here matches step `1/n` when `c0 = 1`.
    pub fn from_trajectory(trajectory: &Trajectory<T>, n: usize) -> Self {
        assert!(n >= 1 && n - 1 < trajectory.iterates.len());
        Self::new(n, trajectory.iterates[n - 1..].to_vec())
    }

    /// `m(t)`: last grid index with time `≤ t`, as an offset from `start`.
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    pub fn value_at(&self, t: f64) -> &DVector<T> {
        &self.values[self.index_at(t)]
    }
}

/// How escape runs are started.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartMode {
    /// At `θ*`.
    Center,
    /// Uniform on the ball `N_ν(θ*)`.
    UniformInNu,
}

#[derive(Clone, Debug)]
pub struct EscapeConfig<T: Scalar> {
    pub objective: ObjectiveSpec<T>,
    pub noise: NoiseModel<T>,
    /// Radius of `N_μ(θ*)`.
    pub mu: T,
    /// Radius of the end-state set `N_ν(θ*)`, `0 < ν ≤ μ`.
    pub nu: T,
    /// Radius of the exit region `G`, a ball around `θ*`.
    pub exit_radius: T,
    pub horizon: f64,
    pub scales: Vec<usize>,
    pub replications: usize,
    pub start: StartMode,
    pub seed: u64,
}

impl<T: Scalar> EscapeConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.noise.dim() != self.objective.dim() {
            return Err(Error::Dimension("noise and objective dimensions differ".into()));
        }
        if !(self.mu > T::zero()) || !(self.nu > T::zero()) || self.nu > self.mu {
            return Err(Error::InvalidParameter("need 0 < ν ≤ μ".into()));
        }
        if !(self.mu < self.exit_radius) {
            return Err(Error::Assumption {
                assumption: "closure of N_μ(θ*) ⊂ G",
                detail: format!("μ = {} must be below the exit radius {}", self.mu, self.exit_radius),
            });
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidParameter("horizon T must be positive".into()));
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::InvalidParameter("scales must be nonempty start indices ≥ 1".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        Ok(())
    }
}

/// One escape run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitSample {
    /// Interpolated exit time from `G`, `None` when censored at `T`.
    pub tau: Option<f64>,
    /// `θⁿ(T) ∉ N_ν(θ*)` (only meaningful when not exited).
    pub end_outside: bool,
}

impl ExitSample {
    /// Exit from `G` by `T` or end state outside `N_ν(θ*)`.
    pub fn event(&self) -> bool {
        self.tau.is_some() || self.end_outside
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSamples {
    pub n: usize,
    pub samples: Vec<ExitSample>,
}

fn start_point<T: Scalar>(cfg: &EscapeConfig<T>, seed: u64) -> DVector<T> {
    let star = cfg.objective.theta_star();
    match cfg.start {
        StartMode::Center => star.clone(),
        StartMode::UniformInNu => {
            let p = star.len();
            let mut rng = rng_for(seed, &[TAG_START]);
            let mut dir = DVector::<T>::from_fn(p, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
            let norm = dir.norm();
            if norm > T::zero() {
                dir /= norm;
            }
            let u: f64 = rng.random();
            star + dir * (cfg.nu * T::lit(u.powf(1.0 / p as f64)))
        }
    }
}

/// One run from index `n` with steps `1/k` and no projection.
pub fn simulate_one<T: Scalar>(cfg: &EscapeConfig<T>, n: usize, seed: u64) -> ExitSample {
    let p = cfg.objective.dim();
    let star = cfg.objective.theta_star();
    let mut theta = start_point(cfg, seed);
    let mut stream = cfg.noise.stream(seed);
    let mut err = DVector::zeros(p);
    let mut grad = DVector::zeros(p);
    let mut t = 0.0f64;
    let mut k = n;
    let r2 = cfg.exit_radius * cfg.exit_radius;
    loop {
        let dt = 1.0 / k as f64;
        if t + dt > cfg.horizon {
            break;
        }
        let x = stream.next_value();
        cfg.objective.grad_into(&theta, &mut err, &mut grad);
        cfg.objective.gain().apply_into(&theta, x, T::one(), &mut grad);
        theta.axpy(-T::lit(dt), &grad, T::one());
        t += dt;
        k += 1;
        let d2 = theta.iter().zip(star.iter()).fold(T::zero(), |a, (x, y)| a + (*x - *y) * (*x - *y));
        if d2 > r2 {
            return ExitSample { tau: Some(t), end_outside: true };
        }
    }
    let end = (&theta - star).norm();
    ExitSample { tau: None, end_outside: end > cfg.nu }
}

/// Runs every scale; replication `r` of scale index `i` uses seed
/// `derive(seed, [i, r])`. Output is independent of thread count.
pub fn simulate_exit<T: Scalar>(cfg: &EscapeConfig<T>) -> Result<Vec<ScaleSamples>> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.scales.len())
        .flat_map(|i| (0..cfg.replications).map(move |r| (i, r)))
        .collect();
    let flat: Vec<ExitSample> = jobs
        .par_iter()
        .map(|&(i, r)| simulate_one(cfg, cfg.scales[i], derive_seed(cfg.seed, &[i as u64, r as u64])))
        .collect();
    Ok(cfg
        .scales
        .iter()
        .enumerate()
        .map(|(i, &n)| ScaleSamples {
            n,
            samples: flat[i * cfg.replications..(i + 1) * cfg.replications].to_vec(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitProbability {
    pub replications: usize,
    /// Runs that left `G`.
    pub exits: usize,
    /// Runs with the combined event.
    pub events: usize,
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Combined-event frequency with a 95% Wilson interval (rule of three at
/// zero events).
pub fn exit_probability(samples: &[ExitSample]) -> Result<ExitProbability> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no exit samples".into()));
    }
    let r = samples.len();
    let exits = samples.iter().filter(|s| s.tau.is_some()).count();
    let events = samples.iter().filter(|s| s.event()).count();
    let (ci_lo, ci_hi) = binomial_interval(events, r, 1.959964);
    Ok(ExitProbability { replications: r, exits, events, p_hat: events as f64 / r as f64, ci_lo, ci_hi })
}

#[derive(Clone, Debug, PartialEq)]
pub enum FitStatus {
    Fitted,
    /// Fewer than three scales with positive counts.
    Starved,
    /// Fitted slope is not negative.
    NonExponential,
}

/// Fit of `log p̂` against `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentFit {
    pub status: FitStatus,
    pub h0: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub used_scales: Vec<usize>,
    pub starved_scales: Vec<usize>,
}

pub fn fit_exponent(points: &[(usize, f64)]) -> ExponentFit {
    let (used, starved): (Vec<_>, Vec<_>) = points.iter().partition(|(_, p)| *p > 0.0);
    let used_scales: Vec<usize> = used.iter().map(|(n, _)| *n).collect();
    let starved_scales: Vec<usize> = starved.iter().map(|(n, _)| *n).collect();
    if used.len() < 3 {
        return ExponentFit { status: FitStatus::Starved, h0: None, intercept: None, r_squared: None, used_scales, starved_scales };
    }
    let xs: Vec<f64> = used.iter().map(|(n, _)| *n as f64).collect();
    let ys: Vec<f64> = used.iter().map(|(_, p)| p.ln()).collect();
    match least_squares(&xs, &ys) {
        Some(f) => ExponentFit {
            status: if -f.slope > 0.0 { FitStatus::Fitted } else { FitStatus::NonExponential },
            h0: Some(-f.slope),
            intercept: Some(f.intercept),
            r_squared: Some(f.r_squared),
            used_scales,
            starved_scales,
        },
        None => ExponentFit { status: FitStatus::Starved, h0: None, intercept: None, r_squared: None, used_scales, starved_scales },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrowthReport {
    pub scales: Vec<usize>,
    /// Mean of `min(τ, T)` with censored runs counted as `T`.
    pub lower_bounds: Vec<f64>,
    /// Scales with at least one observed exit.
    pub informative: Vec<usize>,
    pub nondecreasing: bool,
    pub h1: Option<f64>,
    /// True when fewer than two scales carry exit information.
    pub inconclusive: bool,
}

/// Censoring-aware lower bounds on the mean exit time per scale.
pub fn mean_exit_growth(per_scale: &[ScaleSamples], horizon: f64) -> GrowthReport {
    let scales: Vec<usize> = per_scale.iter().map(|s| s.n).collect();
    let lower_bounds: Vec<f64> = per_scale
        .iter()
        .map(|s| {
            let tot: f64 = s.samples.iter().map(|x| x.tau.unwrap_or(horizon)).sum();
            tot / s.samples.len().max(1) as f64
        })
        .collect();
    let informative: Vec<usize> = per_scale
        .iter()
        .filter(|s| s.samples.iter().any(|x| x.tau.is_some()))
        .map(|s| s.n)
        .collect();
    let nondecreasing = lower_bounds.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    let h1 = if informative.len() >= 3 {
        let pts: Vec<(f64, f64)> = scales
            .iter()
            .zip(&lower_bounds)
            .filter(|(n, _)| informative.contains(n))
            .map(|(n, lb)| (*n as f64, lb.ln()))
            .collect();
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        least_squares(&xs, &ys).map(|f| f.slope)
    } else {
        None
    };
    GrowthReport { scales, lower_bounds, inconclusive: informative.len() < 2, informative, nondecreasing, h1 }
}

/// `Q = f₀(θ*) R̄ f₀(θ*)ᵀ`.
pub fn rate_matrix<T: Scalar>(spec: &ObjectiveSpec<T>, model: &NoiseModel<T>) -> DMatrix<T> {
    rate_matrix_with(spec, &model.long_run_covariance())
}

/// `f₀(θ*) R f₀(θ*)ᵀ` for a given covariance `R`.
pub fn rate_matrix_with<T: Scalar>(spec: &ObjectiveSpec<T>, cov: &DMatrix<T>) -> DMatrix<T> {
    let f = spec.gain().matrix_at(spec.theta_star());
    &f * cov * f.transpose()
}

/// `∫₀ᵀ α(s)ᵀ Q α(s) ds` for `α` piecewise constant on a uniform grid.
pub fn h_integral<T: Scalar>(q: &DMatrix<T>, alpha_path: &[DVector<T>], horizon: T) -> Result<T> {
    check_psd(q, "Q")?;
    if alpha_path.is_empty() {
        return Ok(T::zero());
    }
    let h = horizon / T::from_count(alpha_path.len());
    Ok(alpha_path.iter().fold(T::zero(), |acc, a| acc + h * a.dot(&(q * a))))
}

/// Which velocity the Legendre transform is centred on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftMode {
    /// `-∇C(θ*+ψ)`, the mean-flow velocity.
    Gradient,
    /// `C(θ*+ψ)·𝟙`, the scalar cost read literally.
    Literal,
}

pub fn drift_at<T: Scalar>(spec: &ObjectiveSpec<T>, psi: &DVector<T>, mode: DriftMode) -> DVector<T> {
    let theta = spec.theta_star() + psi;
    match mode {
        DriftMode::Gradient => -spec.grad(&theta),
        DriftMode::Literal => DVector::from_element(psi.len(), spec.cost(&theta)),
    }
}

/// `sup_α [αᵀ(β - d) - e^s αᵀQα] = e^{-s}(β - d)ᵀQ⁻¹(β - d)/4`.
pub fn legendre<T: Scalar>(q: &DMatrix<T>, beta: &DVector<T>, drift: &DVector<T>, s: T) -> Result<T> {
    let inv = spd_inverse(q)?;
    Ok(legendre_with_inverse(&inv, beta, drift, s))
}

fn legendre_with_inverse<T: Scalar>(inv: &DMatrix<T>, beta: &DVector<T>, drift: &DVector<T>, s: T) -> T {
    let v = beta - drift;
    (-s).exp() * v.dot(&(inv * &v)) / T::lit(4.0)
}

/// Numerical supremum of `αᵀv - e^s αᵀQα` by coordinate ascent with
/// bracketed golden-section line searches; does not use `Q⁻¹`.
pub fn legendre_numeric(q: &DMatrix<f64>, beta: &DVector<f64>, drift: &DVector<f64>, s: f64) -> f64 {
    let v = beta - drift;
    let es = s.exp();
    let f = |a: &DVector<f64>| a.dot(&v) - es * a.dot(&(q * a));
    let p = v.len();
    let mut alpha = DVector::zeros(p);
    let mut best = f(&alpha);
    for _sweep in 0..10_000 {
        for i in 0..p {
            let g = |t: f64| {
                let mut a = alpha.clone();
                a[i] = t;
                f(&a)
            };
            alpha[i] = golden_max(g, alpha[i]);
        }
        let val = f(&alpha);
        if (val - best).abs() <= 1e-15 * val.abs().max(1e-300) {
            best = val;
            break;
        }
        best = val;
    }
    best
}

fn golden_max(g: impl Fn(f64) -> f64, x0: f64) -> f64 {
    let mut step = 1.0f64.max(x0.abs());
    let (mut lo, mut hi) = (x0 - step, x0 + step);
    while g(lo) > g(x0) || g(hi) > g(x0) {
        step *= 2.0;
        lo = x0 - step;
        hi = x0 + step;
    }
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if gc > gd {
            b = d;
            d = c;
            gd = gc;
            c = b - r * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + r * (b - a);
            gd = g(d);
        }
    }
    (a + b) / 2.0
}

/// Continuous path `ψ` on `[0, T]`, linear between uniformly spaced knots.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinearPath<T: Scalar> {
    pub knots: Vec<DVector<T>>,
    pub horizon: T,
}

impl<T: Scalar> PiecewiseLinearPath<T> {
    pub fn new(knots: Vec<DVector<T>>, horizon: T) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidParameter("a path needs at least two knots".into()));
        }
        if !(horizon > T::zero()) {
            return Err(Error::InvalidParameter("path horizon must be positive".into()));
        }
        Ok(PiecewiseLinearPath { knots, horizon })
    }

    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn step(&self) -> T {
        self.horizon / T::from_count(self.segments())
    }

    /// `ψ ≡ psi0`.
    pub fn held_constant(psi0: DVector<T>, horizon: T, segments: usize) -> Result<Self> {
        Self::new(vec![psi0; segments.max(1) + 1], horizon)
    }

    /// Follows the drift with the implicit midpoint rule, so each segment's
    /// slope equals the drift at the segment midpoint.
    pub fn mean_flow(spec: &ObjectiveSpec<T>, psi0: DVector<T>, horizon: T, segments: usize, mode: DriftMode) -> Result<Self> {
        let segments = segments.max(1);
        let h = horizon / T::from_count(segments);
        let mut knots = Vec::with_capacity(segments + 1);
        knots.push(psi0);
        for _ in 0..segments {
            let cur = knots.last().expect("nonempty").clone();
            let mut next = &cur + drift_at(spec, &cur, mode) * h;
            for _ in 0..200 {
                let mid = (&cur + &next) * T::lit(0.5);
                let cand = &cur + drift_at(spec, &mid, mode) * h;
                let change = (&cand - &next).amax();
                next = cand;
                if change <= T::eps() * next.amax().max(T::one()) {
                    break;
                }
            }
            // make the stored slope agree with the midpoint drift bit for bit
            let mid = (&cur + &next) * T::lit(0.5);
            let slope = drift_at(spec, &mid, mode);
            let rebuilt = &cur + &slope * h;
            knots.push(if (&rebuilt - &next).amax() <= T::eps() * T::lit(4.0) * next.amax().max(T::one()) { next } else { rebuilt });
        }
        Self::new(knots, horizon)
    }
}

/// `S(T, ψ) = ∫₀ᵀ L(ψ̇(u), ψ(u), u) du` by the composite midpoint rule with
/// exact segment slopes.
pub fn action<T: Scalar>(path: &PiecewiseLinearPath<T>, q: &DMatrix<T>, spec: &ObjectiveSpec<T>, mode: DriftMode) -> Result<T> {
    let inv = spd_inverse(q)?;
    let h = path.step();
    let half = T::lit(0.5);
    let mut total = T::zero();
    for (i, w) in path.knots.windows(2).enumerate() {
        let slope = (&w[1] - &w[0]) / h;
        let mid = (&w[0] + &w[1]) * half;
        let u = h * (T::from_count(i) + half);
        total += h * legendre_with_inverse(&inv, &slope, &drift_at(spec, &mid, mode), u);
    }
    Ok(total)
}

/// Analytic rate quantities for one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RateReport<T: Scalar> {
    pub q: DMatrix<T>,
    pub h_values: Vec<(String, T)>,
    pub legendre_values: Vec<(String, T)>,
    pub actions: Vec<(String, T)>,
    pub h0_hat: Option<f64>,
    pub h1_hat: Option<f64>,
}
