//! Lyapunov function `V(θ̃) = ½‖θ̃‖²`, its perturbation `V₁` for correlated
//! linear-Gaussian noise, and empirical checks of the drift argument.
//!
//! Indexing: the iterate at time `n ≥ 1` is `θ_{n-1}` of a stored
//! trajectory. It was produced using noise up to `X_{n-2}` (the
//! conditioning state `x_last`) and is moved by step `c0/n` using `X_{n-1}`.
//! With this convention
//!
//! `V₁(θ, n) = -θ̃ᵀ f₀(θ) M_n x_last`, `M_n = Σ_{k≥n} (c0/k) A^{k-n+1}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseModel};
use crate::objective::{NoiseGain, ObjectiveSpec};
use crate::optimizer::{ProjectionSet, Trajectory};
use crate::scalar::Scalar;
use crate::stats::mean_se;

/// `V(θ̃) = ½‖θ̃‖²`.
pub fn v<T: Scalar>(theta_err: &DVector<T>) -> T {
    theta_err.norm_squared() / T::lit(2.0)
}

fn linear_gaussian_transition<T: Scalar>(model: &NoiseModel<T>) -> Result<DMatrix<T>> {
    if model.truncation().is_some() {
        return Err(Error::Unsupported(
            "conditional means are only closed-form for untruncated noise".into(),
        ));
    }
    match model.kind() {
        NoiseKind::MovingAverage { .. } => Err(Error::Unsupported(
            "no closed-form conditional tail for moving-average noise".into(),
        )),
        _ => Ok(model.transition().expect("VAR(1) or i.i.d.")),
    }
}

/// Value of `V₁` with the bound on the neglected tail of its series.
#[derive(Clone, Debug, PartialEq)]
pub struct V1Value<T: Scalar> {
    pub value: T,
    pub truncation_bound: T,
    pub terms: usize,
}

/// `V₁(θ, n)` by direct summation, stopping once the bound on the rest of
/// the series drops below `tail_tol`.
pub fn v1<T: Scalar>(
    spec: &ObjectiveSpec<T>,
    model: &NoiseModel<T>,
    theta: &DVector<T>,
    x_last: &DVector<T>,
    n: usize,
    c0: T,
    tail_tol: T,
) -> Result<V1Value<T>> {
    let a = linear_gaussian_transition(model)?;
    if !(tail_tol > T::zero()) {
        return Err(Error::InvalidParameter("tail_tol must be positive".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("V1 is defined for n ≥ 1".into()));
    }
    let profile = model.mixing_profile();
    let xn = x_last.norm();
    let mut sum = DVector::zeros(x_last.len());
    let mut power = x_last.clone();
    let mut scratch = power.clone();
    let mut terms = 0;
    let mut rest = T::zero();
    if matches!(model.kind(), NoiseKind::Var1 { .. }) {
        for m in 1usize.. {
            scratch.gemv(T::one(), &a, &power, T::zero());
            std::mem::swap(&mut power, &mut scratch);
            sum.axpy(c0 / T::from_count(n + m - 1), &power, T::one());
            terms = m;
            rest = c0 / T::from_count(n + m) * profile.tail_sum(m + 1).unwrap_or(T::zero()) * xn;
            if rest < tail_tol || power.amax() == T::zero() {
                break;
            }
        }
    }
    let err = spec.error(theta);
    let mut fx = DVector::zeros(err.len());
    spec.gain().apply_into(theta, &sum, T::one(), &mut fx);
    let f_norm = gain_norm(spec.gain(), theta);
    Ok(V1Value { value: -err.dot(&fx), truncation_bound: err.norm() * f_norm * rest, terms })
}

fn gain_norm<T: Scalar>(gain: &NoiseGain<T>, theta: &DVector<T>) -> T {
    match gain.scalar_at(theta) {
        Some(s) => s.abs(),
        None => crate::linalg::op_norm(&gain.matrix_at(theta)),
    }
}

/// Table of `M_n` for `1 ≤ n ≤ n_top + 1`, built backwards with
/// `M_n = (c0/n) A + M_{n+1} A` from a truncated series at the top.
#[derive(Clone, Debug)]
pub struct ConditionalSums<T: Scalar> {
    c0: T,
    a: DMatrix<T>,
    table: Vec<DMatrix<T>>,
    truncation: T,
    psi_tail: T,
}

impl<T: Scalar> ConditionalSums<T> {
    pub fn new(model: &NoiseModel<T>, c0: T, n_top: usize, tail_tol: T) -> Result<Self> {
        let a = linear_gaussian_transition(model)?;
        if !(tail_tol > T::zero()) {
            return Err(Error::InvalidParameter("tail_tol must be positive".into()));
        }
        let profile = model.mixing_profile();
        let psi_tail = profile.tail_sum(1).ok_or_else(|| Error::Assumption {
            assumption: "mixing",
            detail: "mixing bounds are not summable".into(),
        })?;
        let p = a.nrows();
        let top = n_top.max(1) + 1;
        let mut seed = DMatrix::zeros(p, p);
        let mut truncation = T::zero();
        if a.amax() > T::zero() {
            let mut power = DMatrix::identity(p, p);
            for m in 1usize.. {
                power = &power * &a;
                seed += &power * (c0 / T::from_count(top + m - 1));
                truncation = c0 / T::from_count(top + m) * profile.tail_sum(m + 1).unwrap_or(T::zero());
                if truncation < tail_tol || power.amax() == T::zero() {
                    break;
                }
            }
        }
        let mut table = vec![DMatrix::zeros(p, p); top];
        table[top - 1] = seed;
        for n in (1..top).rev() {
            let next = &table[n] * &a + &a * (c0 / T::from_count(n));
            table[n - 1] = next;
        }
        Ok(ConditionalSums { c0, a, table, truncation, psi_tail })
    }

    /// Largest `n` for which `M_{n+1}` is available.
    pub fn n_top(&self) -> usize {
        self.table.len() - 1
    }

    pub fn c0(&self) -> T {
        self.c0
    }

    pub fn transition(&self) -> &DMatrix<T> {
        &self.a
    }

    /// Bound on `‖M_n - M_n^{table}‖` from truncating the top of the series.
    pub fn truncation_bound(&self) -> T {
        self.truncation
    }

    /// `Σ_{m≥1} ψ_m`, bounding `Σ_m ‖A^m‖`.
    pub fn psi_tail(&self) -> T {
        self.psi_tail
    }

    pub fn m(&self, n: usize) -> &DMatrix<T> {
        assert!(n >= 1 && n <= self.table.len(), "M_n requested outside the table");
        &self.table[n - 1]
    }

    /// `out = f₀(θ) M_n x`.
    fn gain_m_x(&self, spec: &ObjectiveSpec<T>, theta: &DVector<T>, n: usize, x: &DVector<T>, out: &mut DVector<T>, tmp: &mut DVector<T>) {
        tmp.gemv(T::one(), self.m(n), x, T::zero());
        out.fill(T::zero());
        spec.gain().apply_into(theta, tmp, T::one(), out);
    }

    /// `V₁(θ, n)` for conditioning state `x_last`.
    pub fn v1(&self, spec: &ObjectiveSpec<T>, theta: &DVector<T>, x_last: &DVector<T>, n: usize) -> T {
        let p = theta.len();
        let mut out = DVector::zeros(p);
        let mut tmp = DVector::zeros(p);
        self.gain_m_x(spec, theta, n, x_last, &mut out, &mut tmp);
        -spec.error(theta).dot(&out)
    }
}

/// Lyapunov quantities at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationState<T: Scalar> {
    pub n: usize,
    pub v: T,
    pub v1: T,
    pub w: T,
    /// `W(θ̃_{n+1}, n+1) - W(θ̃_n, n)`, when the next iterate is known.
    pub drift_sample: Option<T>,
}

/// `V`, `V₁` and `W` at time `n`; `next` is `(θ_{n+1}, X_{n-1})` in
/// trajectory terms, i.e. the next iterate and the noise that produced it.
pub fn perturbation_state<T: Scalar>(
    sums: &ConditionalSums<T>,
    spec: &ObjectiveSpec<T>,
    n: usize,
    theta: &DVector<T>,
    x_last: &DVector<T>,
    next: Option<(&DVector<T>, &DVector<T>)>,
) -> PerturbationState<T> {
    let vv = v(&spec.error(theta));
    let v1v = sums.v1(spec, theta, x_last, n);
    let w = vv + v1v;
    let drift_sample = next.map(|(th, x)| v(&spec.error(th)) + sums.v1(spec, th, x, n + 1) - w);
    PerturbationState { n, v: vv, v1: v1v, w, drift_sample }
}

/// Outcome of the `|V₁| ≤ (V+1)·const/n` checks along trajectories.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct V1BoundReport {
    /// Checks at `n ≥ κ₂` against the certified bound
    /// `(V+1)(c0/n)‖f₀(θ)‖‖x_last‖Σ_{m≥1}ψ_m`.
    pub checked: usize,
    pub violations: usize,
    pub worst_ratio: f64,
    /// Unit-constant bound `(V+1)/n`, reported for information.
    pub unit_violations_in_regime: usize,
    pub unit_worst_ratio_in_regime: f64,
    pub out_of_regime_checked: usize,
    pub unit_violations_out_of_regime: usize,
}

impl V1BoundReport {
    pub fn merge(&mut self, o: &V1BoundReport) {
        self.checked += o.checked;
        self.violations += o.violations;
        self.worst_ratio = self.worst_ratio.max(o.worst_ratio);
        self.unit_violations_in_regime += o.unit_violations_in_regime;
        self.unit_worst_ratio_in_regime = self.unit_worst_ratio_in_regime.max(o.unit_worst_ratio_in_regime);
        self.out_of_regime_checked += o.out_of_regime_checked;
        self.unit_violations_out_of_regime += o.unit_violations_out_of_regime;
    }
}

/// Streaming form of [`check_v1_bound`] with preallocated scratch space.
#[derive(Clone, Debug)]
pub struct V1BoundTracker<T: Scalar> {
    kappa2: usize,
    err: DVector<T>,
    out: DVector<T>,
    tmp: DVector<T>,
    pub report: V1BoundReport,
}

impl<T: Scalar> V1BoundTracker<T> {
    pub fn new(dim: usize, kappa2: usize) -> Self {
        V1BoundTracker {
            kappa2,
            err: DVector::zeros(dim),
            out: DVector::zeros(dim),
            tmp: DVector::zeros(dim),
            report: V1BoundReport::default(),
        }
    }

    /// Checks time `n` with iterate `theta` and conditioning state `x_last`.
    pub fn observe(&mut self, sums: &ConditionalSums<T>, spec: &ObjectiveSpec<T>, n: usize, theta: &DVector<T>, x_last: &DVector<T>) {
        self.err.copy_from(theta);
        self.err -= spec.theta_star();
        sums.gain_m_x(spec, theta, n, x_last, &mut self.out, &mut self.tmp);
        let v1 = (-self.err.dot(&self.out)).abs().as_f64();
        let vp1 = (v(&self.err) + T::one()).as_f64();
        let nf = n as f64;
        let unit = vp1 / nf;
        let r = &mut self.report;
        if n >= self.kappa2 {
            let certified = vp1 * sums.c0().as_f64() / nf
                * gain_norm(spec.gain(), theta).as_f64()
                * x_last.norm().as_f64()
                * sums.psi_tail().as_f64();
            let slack = self.err.norm().as_f64() * gain_norm(spec.gain(), theta).as_f64() * sums.truncation_bound().as_f64() * x_last.norm().as_f64();
            r.checked += 1;
            if certified > 0.0 {
                r.worst_ratio = r.worst_ratio.max(v1 / certified);
            }
            if v1 > certified * (1.0 + 1e-9) + slack {
                r.violations += 1;
            }
            r.unit_worst_ratio_in_regime = r.unit_worst_ratio_in_regime.max(v1 / unit);
            if v1 > unit {
                r.unit_violations_in_regime += 1;
            }
        } else {
            r.out_of_regime_checked += 1;
            if v1 > unit {
                r.unit_violations_out_of_regime += 1;
            }
        }
    }
}

/// Checks the `V₁` size bound at every time `2 ≤ n ≤ steps` of a stored trajectory;
/// times below `κ₂` are reported separately as out of regime.
pub fn check_v1_bound<T: Scalar>(
    trajectory: &Trajectory<T>,
    sums: &ConditionalSums<T>,
    spec: &ObjectiveSpec<T>,
    kappa2: usize,
) -> Result<V1BoundReport> {
    if trajectory.noise.len() != trajectory.steps() || trajectory.steps() == 0 {
        return Err(Error::InsufficientData("trajectory has no stored noise states".into()));
    }
    let mut tr = V1BoundTracker::new(spec.dim(), kappa2);
    for n in 2..=trajectory.steps().min(sums.n_top()) {
        tr.observe(sums, spec, n, trajectory.theta(n - 1), &trajectory.noise[n - 2]);
    }
    Ok(tr.report)
}

/// One replication's contribution to the drift estimate at time `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftSample<T: Scalar> {
    pub w: T,
    pub w_next: T,
}

/// Estimated `E[W_{n+1} - W_n] + (λ₁ c0/n) E W_n` with its standard error.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftEstimate<T: Scalar> {
    pub n: usize,
    pub estimate: T,
    pub std_error: T,
    pub mean_w: T,
    /// `n²·estimate` when the estimate is positive.
    pub k_bar: Option<T>,
    /// `estimate ≤ 2·SE`.
    pub within_two_se: bool,
}

pub fn estimate_drift<T: Scalar>(samples: &[DriftSample<T>], n: usize, lambda1: T, c0: T) -> DriftEstimate<T> {
    let coef = lambda1 * c0 / T::from_count(n);
    let d: Vec<T> = samples.iter().map(|s| s.w_next - s.w + coef * s.w).collect();
    let (estimate, std_error) = mean_se(&d);
    let ws: Vec<T> = samples.iter().map(|s| s.w).collect();
    let nn = T::from_count(n);
    DriftEstimate {
        n,
        estimate,
        std_error,
        mean_w: mean_se(&ws).0,
        k_bar: (estimate > T::zero()).then(|| nn * nn * estimate),
        within_two_se: estimate <= T::lit(2.0) * std_error,
    }
}

/// Drift samples at time `n` from stored trajectories.
pub fn drift_samples<T: Scalar>(
    ensemble: &[Trajectory<T>],
    sums: &ConditionalSums<T>,
    spec: &ObjectiveSpec<T>,
    n: usize,
) -> Result<Vec<DriftSample<T>>> {
    ensemble
        .iter()
        .map(|t| {
            if n < 2 || n > t.steps() {
                return Err(Error::InvalidParameter(format!("time {n} outside [2, {}]", t.steps())));
            }
            let s = perturbation_state(sums, spec, n, t.theta(n - 1), &t.noise[n - 2], Some((t.theta(n), &t.noise[n - 1])));
            Ok(DriftSample { w: s.w, w_next: s.w + s.drift_sample.expect("next given") })
        })
        .collect()
}

/// Result of iterating `x_{n+1} = (1 - a/n) x_n + b/n²` and testing
/// `x_n ≤ c/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct RecursionBoundReport {
    pub c: f64,
    pub holds: bool,
    pub first_violation: Option<usize>,
    pub violations: usize,
    /// `max_n n·x_n / c`.
    pub worst_ratio: f64,
}

/// Iterates from `x_1` with `c = max(x_1, b/(a-1))`.
pub fn recursion_bound(a: f64, b: f64, x1: f64, n_max: usize) -> Result<RecursionBoundReport> {
    recursion_bound_from(a, b, x1, 1, n_max)
}

/// Iterates from index `n0` with `c = max(n0·x_{n0}, b/(a-1))`. For
/// `n0 ≥ a` every factor `1 - a/n` is nonnegative and the bound holds.
pub fn recursion_bound_from(a: f64, b: f64, x_start: f64, n0: usize, n_max: usize) -> Result<RecursionBoundReport> {
    if !(a > 1.0) {
        return Err(Error::InvalidParameter(format!("a must exceed 1, got {a}")));
    }
    if !(b > 0.0) || !(x_start >= 0.0) || n0 == 0 {
        return Err(Error::InvalidParameter("need b > 0, x ≥ 0 and a start index ≥ 1".into()));
    }
    let c = (n0 as f64 * x_start).max(b / (a - 1.0));
    let tol = 1.0 + 8.0 * f64::EPSILON;
    let mut x = x_start;
    let mut rep = RecursionBoundReport { c, holds: true, first_violation: None, violations: 0, worst_ratio: 0.0 };
    for n in n0..=n_max {
        let nf = n as f64;
        rep.worst_ratio = rep.worst_ratio.max(nf * x / c);
        if x > c / nf * tol {
            rep.holds = false;
            rep.violations += 1;
            rep.first_violation.get_or_insert(n);
        }
        x = (1.0 - a / nf) * x + b / (nf * nf);
    }
    Ok(rep)
}

/// Gauss-Hermite rule for the standard normal, `Σ w_i f(z_i) ≈ E f(Z)`.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let mut j = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let off = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = off;
        j[(k, k - 1)] = off;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i] * 2f64.sqrt(), v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1 / total).collect())
}

/// Terms of `E_n[V₁(θ̃_{n+1}, n+1) - V₁(θ̃_n, n)]` at one time, with the
/// cross term of `E_n V(θ̃_{n+1}) - V(θ̃_n)` they are meant to cancel.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionTerms<T: Scalar> {
    pub n: usize,
    /// `E_n[Δᵀ(-f₀(θ_{n+1})) M_{n+1} X_n]`.
    pub t1a: T,
    /// `E_n[θ̃_nᵀ(f₀(θ_n) - f₀(θ_{n+1})) M_{n+1} X_n]`.
    pub t1b: T,
    /// `E_n V₁(θ̃_n, n+1) - V₁(θ̃_n, n)`.
    pub t2: T,
    /// `-(c0/n) θ̃_nᵀ f₀(θ_n) E_n X_n`.
    pub cross: T,
    /// Certified constants with `|T1a| ≤ bound_a/n²`, `|T1b| ≤ bound_b/n²`.
    pub bound_a: T,
    pub bound_b: T,
}

impl<T: Scalar> DecompositionTerms<T> {
    pub fn cancellation_residual(&self) -> T {
        self.t2 + self.cross
    }

    /// `n²(|T1a| + |T1b|)`.
    pub fn scaled_size(&self) -> T {
        let n = T::from_count(self.n);
        n * n * (self.t1a.abs() + self.t1b.abs())
    }
}

/// Tensor-product Gauss-Hermite integration over the next innovation.
#[derive(Clone, Debug)]
pub struct InnovationQuadrature<T: Scalar> {
    points: Vec<DVector<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> InnovationQuadrature<T> {
    /// Rule for `W ~ N(0, L Lᵀ)` with `order` nodes per coordinate.
    pub fn new(factor: &DMatrix<T>, order: usize) -> Self {
        let p = factor.nrows();
        let (z, w) = gauss_hermite(order);
        let total = order.pow(p as u32);
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; p];
        for _ in 0..total {
            let zv = DVector::from_iterator(p, idx.iter().map(|&i| T::lit(z[i])));
            points.push(factor * zv);
            weights.push(T::lit(idx.iter().map(|&i| w[i]).product()));
            for digit in idx.iter_mut() {
                *digit += 1;
                if *digit < order {
                    break;
                }
                *digit = 0;
            }
        }
        InnovationQuadrature { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Computes the decomposition at time `n` for iterate `theta` and state
/// `x_last`, integrating over `X_n = A x_last + W` with projection applied.
#[allow(clippy::too_many_arguments)]
pub fn decomposition_terms<T: Scalar>(
    sums: &ConditionalSums<T>,
    quad: &InnovationQuadrature<T>,
    spec: &ObjectiveSpec<T>,
    projection: Option<&ProjectionSet<T>>,
    model: &NoiseModel<T>,
    n: usize,
    theta: &DVector<T>,
    x_last: &DVector<T>,
) -> DecompositionTerms<T> {
    let p = theta.len();
    let c0 = sums.c0();
    let eps = c0 / T::from_count(n);
    let a = sums.transition();
    let ax = a * x_last;
    let err = spec.error(theta);
    let grad = spec.grad(theta);
    let m_next = sums.m(n + 1);
    let gain = spec.gain();

    let mut t1a = T::zero();
    let mut t1b = T::zero();
    let mut x = DVector::zeros(p);
    let mut step = DVector::zeros(p);
    let mut next = DVector::zeros(p);
    let mut mx = DVector::zeros(p);
    let mut f_now = DVector::zeros(p);
    let mut f_next = DVector::zeros(p);
    for (w, pt) in quad.weights.iter().zip(&quad.points) {
        x.copy_from(&ax);
        x += pt;
        step.copy_from(&grad);
        gain.apply_into(theta, &x, T::one(), &mut step);
        next.copy_from(theta);
        next.axpy(-eps, &step, T::one());
        if let Some(set) = projection {
            set.project_in_place(&mut next);
        }
        mx.gemv(T::one(), m_next, &x, T::zero());
        f_now.fill(T::zero());
        gain.apply_into(theta, &mx, T::one(), &mut f_now);
        f_next.fill(T::zero());
        gain.apply_into(&next, &mx, T::one(), &mut f_next);
        let delta_dot = next.dot(&f_next) - theta.dot(&f_next);
        t1a -= *w * delta_dot;
        t1b += *w * (err.dot(&f_now) - err.dot(&f_next));
    }

    let mut tmp = DVector::zeros(p);
    let mut fm = DVector::zeros(p);
    tmp.gemv(T::one(), m_next, &ax, T::zero());
    gain.apply_into(theta, &tmp, T::one(), &mut fm);
    let e_next = -err.dot(&fm);
    let mut fn_now = DVector::zeros(p);
    sums.gain_m_x(spec, theta, n, x_last, &mut fn_now, &mut tmp);
    let now = -err.dot(&fn_now);
    let t2 = e_next - now;
    let mut fa = DVector::zeros(p);
    gain.apply_into(theta, &ax, T::one(), &mut fa);
    let cross = -eps * err.dot(&fa);

    let m2 = ax.norm_squared() + model.innovation_cov().trace();
    let g = gain.sup_norm();
    let psi = sums.psi_tail();
    let bracket = grad.norm() * m2.sqrt() + g * m2;
    let bound_a = c0 * c0 * g * psi * bracket;
    let bound_b = err.norm() * gain.lipschitz() * c0 * c0 * psi * bracket;
    DecompositionTerms { n, t1a, t1b, t2, cross, bound_a, bound_b }
}

/// Closed form of `T1a` for a constant scalar gain `g` without projection:
/// `g·ε[∇Cᵀ M A x + g(xᵀAᵀ M A x + tr(M Σ_w))]`, `ε = c0/n`.
pub fn t1a_closed_form<T: Scalar>(
    sums: &ConditionalSums<T>,
    spec: &ObjectiveSpec<T>,
    model: &NoiseModel<T>,
    n: usize,
    theta: &DVector<T>,
    x_last: &DVector<T>,
) -> Option<T> {
    let g = match spec.gain() {
        NoiseGain::Constant(s) => *s,
        _ => return None,
    };
    let eps = sums.c0() / T::from_count(n);
    let m = sums.m(n + 1);
    let ax = sums.transition() * x_last;
    let max = m * &ax;
    let grad = spec.grad(theta);
    let tr = (m * model.innovation_cov()).trace();
    Some(g * eps * (grad.dot(&max) + g * (ax.dot(&max) + tr)))
}
