//! One-pass streaming measurements over a large ensemble: error and regret
//! curves, the rate statistic, the `V₁` size bound at every step, and drift and
//! decomposition terms at checkpoints.

use nalgebra::DVector;

use crate::analysis::{ConstantsReport, CurveReport, RateTracker, RegretAccumulator};
use crate::error::{Error, Result};
use crate::lyapunov::{
    decomposition_terms, estimate_drift, ConditionalSums, DecompositionTerms, DriftEstimate, DriftSample,
    InnovationQuadrature, V1BoundReport, V1BoundTracker,
};
use crate::optimizer::{run_ensemble_observed, ProjectionActivity, RunConfig, Step, StepObserver};
use crate::scalar::Scalar;

/// What to measure.
#[derive(Clone, Debug)]
pub struct ProbeSettings<T: Scalar> {
    /// Sorted checkpoints for curves and Lyapunov records.
    pub checkpoints: Vec<usize>,
    pub constants: ConstantsReport<T>,
    /// Rate statistic window `[from, to]`; growth after `late_from` counts.
    pub rate_from: usize,
    pub rate_to: usize,
    pub rate_late_from: usize,
    /// Enables `V₁`, the `V₁` size bound and the decomposition terms.
    pub lyapunov: bool,
    pub quadrature_order: usize,
    pub tail_tol: T,
}

/// Lyapunov quantities for one replication at one checkpoint `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovRecord<T: Scalar> {
    pub n: usize,
    pub v: T,
    pub v1: T,
    pub w: T,
    pub w_next: T,
    pub terms: DecompositionTerms<T>,
}

/// Everything one replication contributes.
#[derive(Clone, Debug)]
pub struct ProbeRecord<T: Scalar> {
    pub errors: Vec<T>,
    pub regret_from_kappa: Vec<T>,
    pub regret_full: Vec<T>,
    pub rate: RateTracker<T>,
    pub v1_bound: V1BoundReport,
    pub lyapunov: Vec<LyapunovRecord<T>>,
    /// Times `n ≥ κ₁` checked against `K_D‖θ̃_n‖^α ≤ λ0`, and failures.
    pub local_checked: usize,
    pub local_violations: usize,
    pub projection: ProjectionActivity,
}

struct Shared<'a, T: Scalar> {
    config: &'a RunConfig<T>,
    settings: &'a ProbeSettings<T>,
    sums: Option<ConditionalSums<T>>,
    quad: Option<InnovationQuadrature<T>>,
}

struct Probe<'s, 'a, T: Scalar> {
    shared: &'s Shared<'a, T>,
    next_cp: usize,
    err: DVector<T>,
    regret: RegretAccumulator<T>,
    tracker: Option<V1BoundTracker<T>>,
    record: ProbeRecord<T>,
}

impl<'s, 'a, T: Scalar> Probe<'s, 'a, T> {
    fn new(shared: &'s Shared<'a, T>) -> Self {
        let st = shared.settings;
        let p = shared.config.objective.dim();
        let cps = st.checkpoints.len();
        Probe {
            shared,
            next_cp: 0,
            err: DVector::zeros(p),
            regret: RegretAccumulator::new(st.constants.kappa_plus, st.checkpoints.clone()),
            tracker: st.lyapunov.then(|| V1BoundTracker::new(p, st.constants.kappa2)),
            record: ProbeRecord {
                errors: Vec::with_capacity(cps),
                regret_from_kappa: Vec::new(),
                regret_full: Vec::new(),
                rate: RateTracker::new(st.constants.gamma, st.rate_from, st.rate_to, st.rate_late_from),
                v1_bound: V1BoundReport::default(),
                lyapunov: Vec::new(),
                local_checked: 0,
                local_violations: 0,
                projection: ProjectionActivity::default(),
            },
        }
    }

    fn finish(mut self, projection: ProjectionActivity) -> ProbeRecord<T> {
        self.record.regret_from_kappa = std::mem::take(&mut self.regret.from_kappa);
        self.record.regret_full = std::mem::take(&mut self.regret.full);
        if let Some(t) = self.tracker {
            self.record.v1_bound = t.report;
        }
        self.record.projection = projection;
        self.record
    }
}

impl<T: Scalar> StepObserver<T> for Probe<'_, '_, T> {
    fn on_step(&mut self, s: &Step<'_, T>) {
        let sh = self.shared;
        let spec = &sh.config.objective;
        let st = sh.settings;
        let n = s.k + 1;

        // the iterate at time n in Lyapunov indexing is s.theta, with x_last = X_{k-1}
        if let (Some(tr), Some(sums), Some(x_last)) = (self.tracker.as_mut(), sh.sums.as_ref(), s.prev_noise) {
            tr.observe(sums, spec, n, s.theta, x_last);
        }

        self.err.copy_from(s.next);
        self.err -= spec.theta_star();
        let err_sq = self.err.norm_squared();
        let err_norm = err_sq.sqrt();
        self.regret.observe(n, spec.cost_of_error(&self.err));
        self.record.rate.observe(n, err_norm);
        if n >= st.constants.kappa1 {
            self.record.local_checked += 1;
            if !st.constants.local_condition_holds(err_norm) {
                self.record.local_violations += 1;
            }
        }

        if self.next_cp < st.checkpoints.len() && st.checkpoints[self.next_cp] == n {
            self.next_cp += 1;
            self.record.errors.push(err_sq);
            if let (Some(sums), Some(quad), Some(x_last)) = (sh.sums.as_ref(), sh.quad.as_ref(), s.prev_noise) {
                let v = crate::lyapunov::v(&spec.error(s.theta));
                let v1 = sums.v1(spec, s.theta, x_last, n);
                let w_next = crate::lyapunov::v(&self.err) + sums.v1(spec, s.next, s.noise, n + 1);
                let terms = decomposition_terms(
                    sums,
                    quad,
                    spec,
                    Some(&sh.config.projection),
                    &sh.config.noise,
                    n,
                    s.theta,
                    x_last,
                );
                self.record.lyapunov.push(LyapunovRecord { n, v, v1, w: v + v1, w_next, terms });
            }
        }
    }
}

/// Runs every replication once, collecting [`ProbeRecord`]s in order.
pub fn probe_ensemble<T: Scalar>(config: &RunConfig<T>, settings: &ProbeSettings<T>) -> Result<Vec<ProbeRecord<T>>> {
    if settings.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter("checkpoints must be strictly increasing".into()));
    }
    if settings.checkpoints.first().is_some_and(|&c| c < 2) || settings.checkpoints.last().is_some_and(|&c| c > config.n_max) {
        return Err(Error::InvalidParameter(format!("checkpoints must lie in [2, {}]", config.n_max)));
    }
    let (sums, quad) = if settings.lyapunov {
        (
            Some(ConditionalSums::new(&config.noise, config.c0, config.n_max + 1, settings.tail_tol)?),
            Some(InnovationQuadrature::new(config.noise.innovation_factor(), settings.quadrature_order)),
        )
    } else {
        (None, None)
    };
    let shared = Shared { config, settings, sums, quad };
    let out = run_ensemble_observed(config, |_| Probe::new(&shared))?;
    Ok(out.into_iter().map(|(p, act)| p.finish(act)).collect())
}

/// Per-checkpoint Lyapunov summary across replications.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovSummary<T: Scalar> {
    pub n: usize,
    pub mean_v: T,
    pub mean_v1: T,
    pub mean_w: T,
    pub drift: DriftEstimate<T>,
    /// `-(λ₁ c0/n) E W_n`, the drift bound without its `K̄/n²` part.
    pub bound_rhs: T,
    pub mean_t1a: T,
    pub mean_t1b: T,
    pub mean_t2: T,
    pub max_cancellation_residual: T,
    /// `max_r n²(|T1a| + |T1b|)`.
    pub max_scaled_size: T,
    pub mean_scaled_size: T,
    /// Replications where `|T1a| > bound_a/n²` or `|T1b| > bound_b/n²`.
    pub bound_violations: usize,
}

/// Aggregated view of a probed ensemble.
#[derive(Clone, Debug)]
pub struct EnsembleSummary<T: Scalar> {
    pub mse: CurveReport<T>,
    pub regret_from_kappa: CurveReport<T>,
    pub regret_full: CurveReport<T>,
    pub v1_bound: V1BoundReport,
    pub lyapunov: Vec<LyapunovSummary<T>>,
    /// Fraction of replications whose running rate maximum did not grow
    /// after `late_from`.
    pub rate_stable_fraction: f64,
    pub local_checked: usize,
    pub local_violations: usize,
    /// Replications with projection active at or after `κ₊`.
    pub projected_after_kappa: usize,
}

pub fn summarize<T: Scalar>(records: &[ProbeRecord<T>], settings: &ProbeSettings<T>, c0: T) -> EnsembleSummary<T> {
    let cps = settings.checkpoints.clone();
    let col = |f: &dyn Fn(&ProbeRecord<T>) -> Vec<T>| records.iter().map(f).collect::<Vec<_>>();
    let mse = CurveReport::from_samples(cps.clone(), &col(&|r| r.errors.clone()));
    let regret_from_kappa = CurveReport::from_samples(cps.clone(), &col(&|r| r.regret_from_kappa.clone()));
    let regret_full = CurveReport::from_samples(cps.clone(), &col(&|r| r.regret_full.clone()));
    let mut v1_bound = V1BoundReport::default();
    for r in records {
        v1_bound.merge(&r.v1_bound);
    }
    let mut lyapunov = Vec::new();
    if settings.lyapunov && records.first().is_some_and(|r| !r.lyapunov.is_empty()) {
        for i in 0..records[0].lyapunov.len() {
            let rows: Vec<&LyapunovRecord<T>> = records.iter().map(|r| &r.lyapunov[i]).collect();
            let n = rows[0].n;
            let mean = |f: &dyn Fn(&LyapunovRecord<T>) -> T| crate::stats::mean_se(&rows.iter().map(|r| f(r)).collect::<Vec<_>>()).0;
            let samples: Vec<DriftSample<T>> = rows.iter().map(|r| DriftSample { w: r.w, w_next: r.w_next }).collect();
            let drift = estimate_drift(&samples, n, settings.constants.lambda1, c0);
            let nn = T::from_count(n) * T::from_count(n);
            let slack = T::one() + T::lit(1e-9);
            let mean_w = mean(&|r| r.w);
            lyapunov.push(LyapunovSummary {
                n,
                mean_v: mean(&|r| r.v),
                mean_v1: mean(&|r| r.v1),
                mean_w,
                bound_rhs: -(settings.constants.lambda1 * c0 / T::from_count(n)) * mean_w,
                drift,
                mean_t1a: mean(&|r| r.terms.t1a),
                mean_t1b: mean(&|r| r.terms.t1b),
                mean_t2: mean(&|r| r.terms.t2),
                max_cancellation_residual: rows.iter().fold(T::zero(), |a, r| a.max(r.terms.cancellation_residual().abs())),
                max_scaled_size: rows.iter().fold(T::zero(), |a, r| a.max(r.terms.scaled_size())),
                mean_scaled_size: mean(&|r| r.terms.scaled_size()),
                bound_violations: rows
                    .iter()
                    .filter(|r| r.terms.t1a.abs() * nn > r.terms.bound_a * slack || r.terms.t1b.abs() * nn > r.terms.bound_b * slack)
                    .count(),
            });
        }
    }
    let stable = records.iter().filter(|r| !r.rate.grew_late).count();
    EnsembleSummary {
        mse,
        regret_from_kappa,
        regret_full,
        v1_bound,
        lyapunov,
        rate_stable_fraction: stable as f64 / records.len().max(1) as f64,
        local_checked: records.iter().map(|r| r.local_checked).sum(),
        local_violations: records.iter().map(|r| r.local_violations).sum(),
        projected_after_kappa: records.iter().filter(|r| r.projection.active_from(settings.constants.kappa_plus)).count(),
    }
}
