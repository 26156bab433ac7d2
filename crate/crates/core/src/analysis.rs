//! Finite-sample constants, Monte-Carlo error and regret curves, scaling-law
//! fits and the exact scalar MSE recursion.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::noise::MixingProfile;
use crate::objective::ObjectiveSpec;
use crate::optimizer::{run_ensemble_observed, step_size, RunConfig, Step, StepObserver, Trajectory};
use crate::scalar::Scalar;
use crate::stats::{least_squares, mean_se, LineFit};

/// Constants that fix where the finite-sample bounds start to apply.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantsReport<T: Scalar> {
    /// `sup_{θ∈G} ‖θ‖`.
    pub k0: T,
    pub gamma: T,
    pub k_d: T,
    pub alpha: T,
    /// `λ_min(B)`.
    pub lambda: T,
    pub lambda0: T,
    /// `(λ0/K_D)^{1/α}`; infinite when there is no perturbation.
    pub k2: T,
    pub kappa1: usize,
    pub kappa2: usize,
    pub kappa_plus: usize,
    /// `λ - λ0`.
    pub lambda1: T,
}

/// Inputs of [`kappa_plus`].
#[derive(Clone, Debug)]
pub struct ConstantsInput<'a, T: Scalar> {
    pub k0: T,
    pub gamma: T,
    pub k_d: T,
    pub alpha: T,
    pub lambda: T,
    pub lambda0: T,
    pub psi: &'a MixingProfile<T>,
    /// Also require the tail of the bounds for the state-dependent part of
    /// the noise term (taken equal to `psi`) to be at most one.
    pub gain_varies: bool,
}

fn near_ceil<T: Scalar>(v: T) -> usize {
    let r = v.round();
    let c = if (v - r).abs() <= T::lit(1e-9) * r.abs().max(T::one()) { r } else { v.ceil() };
    c.max(T::one()).as_f64() as usize
}

/// Smallest `n ≥ 1` with `Σ_{j≥n} ψ_j ≤ 1`.
pub fn tail_threshold<T: Scalar>(psi: &MixingProfile<T>) -> Result<usize> {
    let tol = T::one() + T::lit(1e-12);
    let tail = |n: usize| psi.tail_sum(n).ok_or_else(|| Error::Assumption {
        assumption: "mixing",
        detail: "mixing bounds are not summable".into(),
    });
    let mut n = match psi {
        MixingProfile::Geometric { scale, rate } => {
            tail(0)?;
            if *scale <= T::zero() || *rate == T::zero() {
                1
            } else {
                // c ρ^n / (1-ρ) ≤ 1
                let v = (*scale / (T::one() - *rate)).ln() / (T::one() / *rate).ln();
                near_ceil(v)
            }
        }
        MixingProfile::Finite(v) => {
            tail(0)?;
            v.len().max(1)
        }
    };
    while n > 1 && tail(n - 1)? <= tol {
        n -= 1;
    }
    while tail(n)? > tol {
        n += 1;
    }
    Ok(n)
}

/// Computes `K2`, `κ₁ = ⌈(2K₀/K₂)^{1/γ}⌉`, `κ₂` and `κ₊ = max(κ₁, κ₂)`.
pub fn kappa_plus<T: Scalar>(input: &ConstantsInput<'_, T>) -> Result<ConstantsReport<T>> {
    let ConstantsInput { k0, gamma, k_d, alpha, lambda, lambda0, psi, gain_varies: _ } = *input;
    if !(gamma > T::zero() && gamma < T::lit(0.5)) {
        return Err(Error::InvalidParameter(format!("gamma must lie in (0, 1/2), got {gamma}")));
    }
    if !(lambda0 > T::zero()) {
        return Err(Error::InvalidParameter(format!("lambda0 must be positive, got {lambda0}")));
    }
    if !(lambda > T::one() + lambda0) {
        return Err(Error::Assumption {
            assumption: "A4",
            detail: format!("need λ > 1 + λ0, got λ = {lambda}, λ0 = {lambda0}"),
        });
    }
    if !(k0 > T::zero()) {
        return Err(Error::InvalidParameter("K0 must be positive".into()));
    }
    let (k2, kappa1) = if k_d > T::zero() {
        let k2 = (lambda0 / k_d).powf(T::one() / alpha);
        (k2, near_ceil((T::lit(2.0) * k0 / k2).powf(T::one() / gamma)))
    } else {
        (T::lit(f64::INFINITY), 1)
    };
    // the second tail condition uses the same bounds, so it adds nothing
    // beyond the first when the gain varies and is vacuous otherwise
    let kappa2 = tail_threshold(psi)?;
    Ok(ConstantsReport {
        k0,
        gamma,
        k_d,
        alpha,
        lambda,
        lambda0,
        k2,
        kappa1,
        kappa2,
        kappa_plus: kappa1.max(kappa2),
        lambda1: lambda - lambda0,
    })
}

impl<T: Scalar> ConstantsReport<T> {
    /// Constants for a run configuration; `lambda0` defaults to `(λ-1)/2`.
    pub fn for_config(config: &RunConfig<T>, gamma: T, lambda0: Option<T>) -> Result<Self> {
        let obj = &config.objective;
        let lambda = obj.lambda_min();
        let (k_d, alpha) = obj.perturbation_constants();
        kappa_plus(&ConstantsInput {
            k0: config.projection.norm_bound(obj.dim()),
            gamma,
            k_d,
            alpha,
            lambda,
            lambda0: lambda0.unwrap_or((lambda - T::one()) / T::lit(2.0)),
            psi: config.noise.mixing_profile(),
            gain_varies: !obj.gain().is_constant(),
        })
    }

    /// The local condition `K_D ‖θ̃‖^α ≤ λ0` that holds beyond `κ₁`.
    pub fn local_condition_holds(&self, err_norm: T) -> bool {
        self.k_d == T::zero() || self.k_d * err_norm.powf(self.alpha) <= self.lambda0
    }
}

/// `n = ⌈start·2^{j/2}⌉` for `j = 0, 1, …` up to `end`, deduplicated.
pub fn geometric_checkpoints(start: usize, end: usize) -> Vec<usize> {
    let start = start.max(1);
    let mut out = Vec::new();
    let mut j = 0i32;
    loop {
        let n = (start as f64 * 2f64.powf(j as f64 / 2.0)).ceil() as usize;
        if n > end {
            break;
        }
        if out.last() != Some(&n) {
            out.push(n);
        }
        j += 1;
    }
    out
}

/// Merges extra points into a sorted checkpoint grid.
pub fn with_extra_points(mut grid: Vec<usize>, extra: &[usize]) -> Vec<usize> {
    grid.extend_from_slice(extra);
    grid.sort_unstable();
    grid.dedup();
    grid
}

/// Mean curve with Monte-Carlo standard errors.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveReport<T: Scalar> {
    pub checkpoints: Vec<usize>,
    pub values: Vec<T>,
    pub std_errors: Vec<T>,
    pub replications: usize,
}

impl<T: Scalar> CurveReport<T> {
    /// `samples[r][i]` is replication `r` at checkpoint `i`.
    pub fn from_samples(checkpoints: Vec<usize>, samples: &[Vec<T>]) -> Self {
        let mut values = Vec::with_capacity(checkpoints.len());
        let mut std_errors = Vec::with_capacity(checkpoints.len());
        let mut column = Vec::with_capacity(samples.len());
        for i in 0..checkpoints.len() {
            column.clear();
            column.extend(samples.iter().map(|s| s[i]));
            let (m, se) = mean_se(&column);
            values.push(m);
            std_errors.push(se);
        }
        CurveReport { checkpoints, values, std_errors, replications: samples.len() }
    }

    /// Value at checkpoint `n`, if it is on the grid.
    pub fn at(&self, n: usize) -> Option<(T, T)> {
        self.checkpoints.iter().position(|&c| c == n).map(|i| (self.values[i], self.std_errors[i]))
    }
}

/// `‖θ̃_n‖²` of every trajectory at every checkpoint, averaged.
pub fn mse_curve<T: Scalar>(ensemble: &[Trajectory<T>], checkpoints: &[usize]) -> Result<CurveReport<T>> {
    check_grid(ensemble, checkpoints)?;
    let samples: Vec<Vec<T>> = ensemble
        .iter()
        .map(|t| checkpoints.iter().map(|&n| t.error_norm_sq(n)).collect())
        .collect();
    Ok(CurveReport::from_samples(checkpoints.to_vec(), &samples))
}

fn check_grid<T: Scalar>(ensemble: &[Trajectory<T>], checkpoints: &[usize]) -> Result<()> {
    if ensemble.is_empty() {
        return Err(Error::InsufficientData("empty ensemble".into()));
    }
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("checkpoints must be strictly increasing".into()));
    }
    if let Some(&last) = checkpoints.last() {
        if ensemble.iter().any(|t| t.steps() < last) {
            return Err(Error::InvalidParameter(format!("checkpoint {last} beyond the horizon")));
        }
    }
    Ok(())
}

/// Records `‖θ̃_n‖²` at a sorted list of checkpoints as a run streams by.
#[derive(Clone, Debug)]
pub struct CheckpointErrors<T: Scalar> {
    theta_star: DVector<T>,
    checkpoints: Vec<usize>,
    next: usize,
    pub values: Vec<T>,
}

impl<T: Scalar> CheckpointErrors<T> {
    pub fn new(theta_star: DVector<T>, theta0: &DVector<T>, checkpoints: Vec<usize>) -> Self {
        let mut values = Vec::with_capacity(checkpoints.len());
        let mut next = 0;
        if checkpoints.first() == Some(&0) {
            values.push((theta0 - &theta_star).norm_squared());
            next = 1;
        }
        CheckpointErrors { theta_star, checkpoints, next, values }
    }
}

impl<T: Scalar> StepObserver<T> for CheckpointErrors<T> {
    fn on_step(&mut self, s: &Step<'_, T>) {
        if self.next < self.checkpoints.len() && s.k + 1 == self.checkpoints[self.next] {
            let d = s.next.iter().zip(self.theta_star.iter()).fold(T::zero(), |a, (x, y)| a + (*x - *y) * (*x - *y));
            self.values.push(d);
            self.next += 1;
        }
    }
}

/// Squared error norms at the checkpoints, streamed so trajectories are
/// never stored. Returns `samples[r][i]`.
pub fn error_samples<T: Scalar>(config: &RunConfig<T>, checkpoints: &[usize]) -> Result<Vec<Vec<T>>> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) || checkpoints.last().is_some_and(|&c| c > config.n_max) {
        return Err(Error::InvalidParameter("checkpoints must be increasing and within the horizon".into()));
    }
    let star = config.objective.theta_star();
    let out = run_ensemble_observed(config, |_| CheckpointErrors::new(star.clone(), &config.theta0, checkpoints.to_vec()))?;
    Ok(out.into_iter().map(|(o, _)| o.values).collect())
}

/// Least-squares fit of `log value` on `log n` plus the envelope
/// `K̂ = max_n n·value`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerFit<T: Scalar> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
    pub envelope: T,
}

pub fn fit_power_law<T: Scalar>(curve: &CurveReport<T>) -> Result<PowerFit<T>> {
    if curve.checkpoints.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "power-law fit needs at least 3 checkpoints, got {}",
            curve.checkpoints.len()
        )));
    }
    if let Some(i) = curve.values.iter().position(|v| !(*v > T::zero())) {
        return Err(Error::InvalidParameter(format!(
            "non-positive value {} at checkpoint {}",
            curve.values[i], curve.checkpoints[i]
        )));
    }
    let xs: Vec<T> = curve.checkpoints.iter().map(|&n| T::from_count(n).ln()).collect();
    let ys: Vec<T> = curve.values.iter().map(|v| v.ln()).collect();
    let f = least_squares(&xs, &ys)
        .ok_or_else(|| Error::InsufficientData("degenerate checkpoint grid".into()))?;
    Ok(PowerFit {
        slope: f.slope,
        intercept: f.intercept,
        r_squared: f.r_squared,
        envelope: envelope(&curve.checkpoints, &curve.values),
    })
}

/// `max_n n·value(n)`.
pub fn envelope<T: Scalar>(checkpoints: &[usize], values: &[T]) -> T {
    checkpoints
        .iter()
        .zip(values)
        .fold(T::zero(), |a, (&n, v)| a.max(T::from_count(n) * *v))
}

/// Least-squares fit `value ≈ a + b·log n`; `slope` is `b`.
pub fn fit_log_law<T: Scalar>(curve: &CurveReport<T>) -> Result<LineFit<T>> {
    if curve.checkpoints.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "log-law fit needs at least 3 checkpoints, got {}",
            curve.checkpoints.len()
        )));
    }
    let xs: Vec<T> = curve.checkpoints.iter().map(|&n| T::from_count(n).ln()).collect();
    least_squares(&xs, &curve.values).ok_or_else(|| Error::InsufficientData("degenerate checkpoint grid".into()))
}

/// Regret curves: the sum from `κ₊` and, as an extension, from `k = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegretReport<T: Scalar> {
    pub from_kappa: CurveReport<T>,
    pub full_horizon: CurveReport<T>,
    pub kappa_plus: usize,
}

/// Running sums of `C(θ_k) - C(θ*)` over each trajectory.
pub fn regret_curve<T: Scalar>(
    ensemble: &[Trajectory<T>],
    spec: &ObjectiveSpec<T>,
    kappa_plus: usize,
    checkpoints: &[usize],
) -> Result<RegretReport<T>> {
    check_grid(ensemble, checkpoints)?;
    if checkpoints.first().is_some_and(|&c| c < kappa_plus) {
        return Err(Error::InvalidParameter(format!("checkpoints must start at or after κ₊ = {kappa_plus}")));
    }
    let mut from_k = Vec::with_capacity(ensemble.len());
    let mut full = Vec::with_capacity(ensemble.len());
    for t in ensemble {
        let mut acc = RegretAccumulator::new(kappa_plus, checkpoints.to_vec());
        for k in 1..=t.steps() {
            acc.observe(k, spec.cost_of_error(&t.error(k)));
        }
        from_k.push(acc.from_kappa);
        full.push(acc.full);
    }
    Ok(RegretReport {
        from_kappa: CurveReport::from_samples(checkpoints.to_vec(), &from_k),
        full_horizon: CurveReport::from_samples(checkpoints.to_vec(), &full),
        kappa_plus,
    })
}

/// Streaming regret sums for one trajectory. Feed `(k, C(θ_k) - C(θ*))` for
/// `k = 1, 2, …` in order.
#[derive(Clone, Debug)]
pub struct RegretAccumulator<T: Scalar> {
    kappa_plus: usize,
    checkpoints: Vec<usize>,
    next: usize,
    sum_from_kappa: T,
    sum_full: T,
    pub from_kappa: Vec<T>,
    pub full: Vec<T>,
}

impl<T: Scalar> RegretAccumulator<T> {
    pub fn new(kappa_plus: usize, checkpoints: Vec<usize>) -> Self {
        let m = checkpoints.len();
        RegretAccumulator {
            kappa_plus,
            checkpoints,
            next: 0,
            sum_from_kappa: T::zero(),
            sum_full: T::zero(),
            from_kappa: Vec::with_capacity(m),
            full: Vec::with_capacity(m),
        }
    }

    pub fn observe(&mut self, k: usize, gap: T) {
        self.sum_full += gap;
        if k >= self.kappa_plus {
            self.sum_from_kappa += gap;
        }
        if self.next < self.checkpoints.len() && self.checkpoints[self.next] == k {
            self.from_kappa.push(self.sum_from_kappa);
            self.full.push(self.sum_full);
            self.next += 1;
        }
    }
}

/// Exact `E θ̃_n²` for the scalar unprojected linear recursion with i.i.d.
/// noise: `m_{k+1} = (1 - ε_k b)² m_k + ε_k² σ²`.
pub fn exact_mse_oracle<T: Scalar>(b: T, sigma: T, theta0_err: T, c0: T, n: usize) -> T {
    let mut m = theta0_err * theta0_err;
    for k in 0..n {
        let e = step_size(k, c0);
        let f = T::one() - e * b;
        m = f * f * m + e * e * sigma * sigma;
    }
    m
}

/// One Monte-Carlo versus oracle comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleComparison<T: Scalar> {
    pub n: usize,
    pub monte_carlo: T,
    pub std_error: T,
    pub oracle: T,
    pub z: T,
}

/// Compares a Monte-Carlo MSE curve with the oracle.
pub fn compare_with_oracle<T: Scalar>(
    curve: &CurveReport<T>,
    oracle: impl Fn(usize) -> T,
) -> Vec<OracleComparison<T>> {
    curve
        .checkpoints
        .iter()
        .zip(curve.values.iter().zip(&curve.std_errors))
        .map(|(&n, (&m, &se))| {
            let o = oracle(n);
            let z = if se > T::zero() { (m - o) / se } else if m == o { T::zero() } else { T::lit(f64::INFINITY) };
            OracleComparison { n, monte_carlo: m, std_error: se, oracle: o, z }
        })
        .collect()
}

/// `n^γ ‖θ̃_n‖` sampled on a window, with its running maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct RateStatistic<T: Scalar> {
    pub n: Vec<usize>,
    pub values: Vec<T>,
    pub running_max: Vec<T>,
}

pub fn as_rate_statistic<T: Scalar>(trajectory: &Trajectory<T>, gamma: T, window: &[usize]) -> Result<RateStatistic<T>> {
    if !(gamma >= T::zero() && gamma < T::lit(0.5)) {
        return Err(Error::InvalidParameter(format!("gamma must lie in [0, 1/2), got {gamma}")));
    }
    let mut values = Vec::with_capacity(window.len());
    let mut running_max = Vec::with_capacity(window.len());
    let mut best = T::zero();
    for &n in window {
        if n > trajectory.steps() {
            return Err(Error::InvalidParameter(format!("window point {n} beyond the horizon")));
        }
        let v = T::from_count(n).powf(gamma) * trajectory.error(n).norm();
        best = if running_max.is_empty() { v } else { best.max(v) };
        values.push(v);
        running_max.push(best);
    }
    Ok(RateStatistic { n: window.to_vec(), values, running_max })
}

/// Running maximum of `n^γ ‖θ̃_n‖` over every `n` in `[from, to]`, recording
/// whether it still increases at or after `late_from`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateTracker<T: Scalar> {
    pub gamma: T,
    pub from: usize,
    pub to: usize,
    pub late_from: usize,
    pub max: Option<T>,
    pub max_before_late: Option<T>,
    pub grew_late: bool,
}

impl<T: Scalar> RateTracker<T> {
    pub fn new(gamma: T, from: usize, to: usize, late_from: usize) -> Self {
        RateTracker { gamma, from, to, late_from, max: None, max_before_late: None, grew_late: false }
    }

    pub fn observe(&mut self, n: usize, err_norm: T) {
        if n < self.from || n > self.to {
            return;
        }
        let v = T::from_count(n).powf(self.gamma) * err_norm;
        match self.max {
            Some(m) if v <= m => {}
            Some(_) => {
                if n > self.late_from {
                    self.grew_late = true;
                }
                self.max = Some(v);
            }
            None => self.max = Some(v),
        }
        if n <= self.late_from {
            self.max_before_late = self.max;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;
    use crate::optimizer::{run_ensemble, ProjectionSet};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn constants(k0: f64, k_d: f64, psi: MixingProfile<f64>) -> Result<ConstantsReport<f64>> {
        kappa_plus(&ConstantsInput {
            k0,
            gamma: 0.25,
            k_d,
            alpha: 1.0,
            lambda: 2.0,
            lambda0: 0.5,
            psi: &psi,
            gain_varies: false,
        })
    }

    #[test]
    fn kappa_examples() {
        let r = constants(1.0, 1.0, MixingProfile::Finite(vec![1.0])).unwrap();
        assert_eq!(r.k2, 0.5);
        assert_eq!(r.kappa1, 256);
        assert_eq!(r.lambda1, 1.5);
        let half = MixingProfile::Geometric { scale: 1.0, rate: 0.5 };
        assert_eq!(tail_threshold(&half).unwrap(), 1);
        let slow = MixingProfile::Geometric { scale: 2.0, rate: 0.9 };
        assert_eq!(tail_threshold(&slow).unwrap(), 29);
        let r = constants(1.0, 1.0, slow).unwrap();
        assert_eq!((r.kappa2, r.kappa_plus), (29, 256));
    }

    #[test]
    fn kappa_rejections() {
        let psi = MixingProfile::Geometric { scale: 1.0, rate: 1.0 };
        assert!(constants(1.0, 1.0, psi).is_err());
        let ok = MixingProfile::Finite(vec![1.0]);
        let bad = kappa_plus(&ConstantsInput {
            k0: 1.0,
            gamma: 0.25,
            k_d: 1.0,
            alpha: 1.0,
            lambda: 1.4,
            lambda0: 0.5,
            psi: &ok,
            gain_varies: false,
        });
        assert!(matches!(bad, Err(Error::Assumption { .. })));
    }

    #[test]
    fn no_perturbation_gives_kappa1_one() {
        let r = constants(1.0, 0.0, MixingProfile::Finite(vec![0.5])).unwrap();
        assert_eq!(r.kappa1, 1);
        assert!(r.local_condition_holds(100.0));
    }

    #[test]
    fn checkpoint_grid() {
        assert_eq!(geometric_checkpoints(100, 400), vec![100, 142, 200, 283, 400]);
        assert_eq!(with_extra_points(vec![1, 5], &[3, 5]), vec![1, 3, 5]);
    }

    #[test]
    fn oracle_hand_iterations() {
        assert_eq!(exact_mse_oracle(2.0, 1.0, 1.0, 1.0, 1), 2.0);
        assert_eq!(exact_mse_oracle(2.0, 1.0, 1.0, 1.0, 2), 0.25);
        assert_relative_eq!(exact_mse_oracle(2.0, 1.0, 1.0, 1.0, 3), 0.25 / 9.0 + 1.0 / 9.0, epsilon = 1e-15);
        // σ = 0: Π(1-ε_k b)² with b = 0.5
        let m = exact_mse_oracle(0.5, 0.0, 2.0, 1.0, 3);
        assert_relative_eq!(m, 4.0 * 0.25 * 0.75f64.powi(2) * (5.0f64 / 6.0).powi(2), epsilon = 1e-15);
    }

    #[test]
    fn power_law_examples() {
        let cps = vec![10, 20, 40, 80, 160];
        let curve = |f: &dyn Fn(f64) -> f64| CurveReport {
            checkpoints: cps.clone(),
            values: cps.iter().map(|&n| f(n as f64)).collect(),
            std_errors: vec![0.0; cps.len()],
            replications: 1,
        };
        let f = fit_power_law(&curve(&|n| 5.0 / n)).unwrap();
        assert_relative_eq!(f.slope, -1.0, epsilon = 1e-10);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-10);
        assert_relative_eq!(f.envelope, 5.0, epsilon = 1e-12);
        let f = fit_power_law(&curve(&|n| 3.0 / (n * n))).unwrap();
        assert_relative_eq!(f.slope, -2.0, epsilon = 1e-10);
        assert!(fit_power_law(&curve(&|n| n - 20.0)).is_err());
        let one = CurveReport { checkpoints: vec![5], values: vec![1.0], std_errors: vec![0.0], replications: 1 };
        assert!(matches!(fit_power_law(&one), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn log_law_examples() {
        let cps = geometric_checkpoints(10, 100_000);
        let mk = |f: &dyn Fn(usize) -> f64| CurveReport {
            checkpoints: cps.clone(),
            values: cps.iter().map(|&n| f(n)).collect(),
            std_errors: vec![0.0; cps.len()],
            replications: 1,
        };
        let f = fit_log_law(&mk(&|n| 2.0 * (n as f64).ln())).unwrap();
        assert_relative_eq!(f.slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        let f = fit_log_law(&mk(&|n| n as f64)).unwrap();
        assert!(f.r_squared < 0.95);
        let f = fit_log_law(&mk(&|n| (1..=n).map(|k| 1.0 / k as f64).sum())).unwrap();
        assert!((f.slope - 1.0).abs() < 0.05);
    }

    fn scalar_config(sigma: f64, theta0: f64, n_max: usize, reps: usize) -> RunConfig<f64> {
        RunConfig {
            objective: ObjectiveSpec::quadratic(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1), 1.0).unwrap(),
            noise: NoiseModel::iid_gaussian(DMatrix::from_element(1, 1, sigma * sigma)).unwrap(),
            projection: ProjectionSet::Box { half_width: 10.0 },
            c0: 1.0,
            n_max,
            theta0: DVector::from_element(1, theta0),
            seed: 11,
            replications: reps,
        }
    }

    #[test]
    fn zero_noise_curve_has_zero_se() {
        let cfg = scalar_config(0.0, 0.0, 50, 3);
        let cfg = RunConfig { objective: ObjectiveSpec::quadratic(DMatrix::from_element(1, 1, 1.5), DVector::zeros(1), 1.0).unwrap(), theta0: DVector::from_element(1, 1.0), ..cfg };
        let ens = run_ensemble(&cfg).unwrap();
        let c = mse_curve(&ens, &[5, 10, 50]).unwrap();
        assert!(c.std_errors.iter().all(|s| *s == 0.0));
        assert!(c.values[0] > c.values[1] && c.values[1] > c.values[2]);
    }

    #[test]
    fn monte_carlo_matches_oracle() {
        let cfg = scalar_config(1.0, 1.0, 100, 4000);
        let samples = error_samples(&cfg, &[10, 100]).unwrap();
        let c = CurveReport::from_samples(vec![10, 100], &samples);
        for cmp in compare_with_oracle(&c, |n| exact_mse_oracle(2.0, 1.0, 1.0, 1.0, n)) {
            assert!(cmp.z.abs() < 4.0, "{cmp:?}");
        }
        let ens = run_ensemble(&RunConfig { replications: 50, ..cfg.clone() }).unwrap();
        let direct = mse_curve(&ens, &[10, 100]).unwrap();
        let streamed = CurveReport::from_samples(vec![10, 100], &samples[..50]);
        assert_eq!(direct, CurveReport { replications: 50, ..streamed });
    }

    #[test]
    fn regret_from_minimizer_is_zero_and_monotone() {
        let cfg = scalar_config(0.0, 0.0, 40, 2);
        let ens = run_ensemble(&cfg).unwrap();
        let r = regret_curve(&ens, &cfg.objective, 5, &[5, 10, 40]).unwrap();
        assert!(r.from_kappa.values.iter().all(|v| *v == 0.0));
        let cfg = scalar_config(1.0, 1.0, 200, 5);
        let ens = run_ensemble(&cfg).unwrap();
        let r = regret_curve(&ens, &cfg.objective, 3, &[3, 10, 50, 200]).unwrap();
        assert!(r.from_kappa.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.full_horizon.values.iter().zip(&r.from_kappa.values).all(|(f, k)| f >= k));
        assert!(regret_curve(&ens, &cfg.objective, 20, &[10]).is_err());
    }

    #[test]
    fn harmonic_regret() {
        let mut acc = RegretAccumulator::new(1, vec![10, 1000]);
        for k in 1..=1000 {
            acc.observe(k, 1.0 / k as f64);
        }
        let h10: f64 = (1..=10).map(|k| 1.0 / k as f64).sum();
        assert_relative_eq!(acc.from_kappa[0], h10, epsilon = 1e-14);
        assert!((acc.from_kappa[1] - (1000f64.ln() + 0.5772156649)).abs() < 1e-3);
    }

    #[test]
    fn rate_statistic() {
        let cfg = scalar_config(0.0, 1.0, 100, 1);
        let cfg = RunConfig { objective: ObjectiveSpec::quadratic(DMatrix::from_element(1, 1, 1.5), DVector::zeros(1), 1.0).unwrap(), ..cfg };
        let t = crate::optimizer::run(&cfg).unwrap();
        let s = as_rate_statistic(&t, 0.0, &[1, 10, 100]).unwrap();
        assert_eq!(s.values[1], t.error(10).norm());
        let s = as_rate_statistic(&t, 0.25, &[10, 50, 100]).unwrap();
        assert!(s.values[2] < s.values[0] && s.values[2] < 1e-2);
        assert!(s.running_max.windows(2).all(|w| w[0] <= w[1]));
        let mut tr = RateTracker::new(0.25, 2, 100, 10);
        for n in 1..=100 {
            tr.observe(n, t.error(n).norm());
        }
        assert!(!tr.grew_late);
        assert_eq!(tr.max, Some(s.running_max[0].max(2f64.powf(0.25) * t.error(2).norm())));
    }

    proptest! {
        #[test]
        fn power_law_recovers_exponent(c in 0.1f64..50.0, s in 0.2f64..3.0) {
            let cps = geometric_checkpoints(100, 100_000);
            let curve = CurveReport {
                values: cps.iter().map(|&n| c / (n as f64).powf(s)).collect(),
                std_errors: vec![0.0; cps.len()],
                checkpoints: cps,
                replications: 1,
            };
            let f = fit_power_law(&curve).unwrap();
            prop_assert!((f.slope + s).abs() < 1e-10);
        }

        #[test]
        fn geometric_kappa2_is_minimal(scale in 0.1f64..20.0, rate in 0.05f64..0.95) {
            let psi = MixingProfile::Geometric { scale, rate };
            let n = tail_threshold(&psi).unwrap();
            let tail = |n: usize| scale * rate.powi(n as i32) / (1.0 - rate);
            prop_assert!(tail(n) <= 1.0 + 1e-9);
            prop_assert!(n == 1 || tail(n - 1) > 1.0 - 1e-9);
        }
    }
}
