//! Projected stochastic gradient recursion with decreasing step sizes.
//!
//! `θ_{k+1} = Π_G{θ_k - ε_k ∇c(θ_k, X_k)}` with `ε_k = c0/(k+1)`. The noise
//! value used at step `k` is the `k`-th entry of one stationary path drawn
//! per replication, so the mixing structure carries across steps.

use std::io::{self, Write};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::objective::ObjectiveSpec;
use crate::scalar::Scalar;
use crate::seed::derive_seed;

/// Compact feasible set centred at the origin.
#[derive(Clone, Debug, PartialEq)]
pub enum ProjectionSet<T: Scalar> {
    /// `{θ : |θ_i| ≤ half_width}`.
    Box { half_width: T },
    /// `{θ : ‖θ‖ ≤ radius}`.
    Ball { radius: T },
}

impl<T: Scalar> ProjectionSet<T> {
    /// Box of half-width `10‖θ*‖ + 10`.
    pub fn default_for(theta_star: &DVector<T>) -> Self {
        ProjectionSet::Box { half_width: T::lit(10.0) * theta_star.norm() + T::lit(10.0) }
    }

    pub fn radius(&self) -> T {
        match self {
            ProjectionSet::Box { half_width } => *half_width,
            ProjectionSet::Ball { radius } => *radius,
        }
    }

    /// `K₀ = sup_{θ∈G} ‖θ‖`.
    pub fn norm_bound(&self, dim: usize) -> T {
        match self {
            ProjectionSet::Box { half_width } => *half_width * T::from_count(dim).sqrt(),
            ProjectionSet::Ball { radius } => *radius,
        }
    }

    pub fn diameter(&self, dim: usize) -> T {
        T::lit(2.0) * self.norm_bound(dim)
    }

    pub fn contains(&self, x: &DVector<T>) -> bool {
        match self {
            ProjectionSet::Box { half_width } => x.iter().all(|v| v.abs() <= *half_width),
            ProjectionSet::Ball { radius } => x.norm() <= *radius,
        }
    }

    pub fn contains_interior(&self, x: &DVector<T>) -> bool {
        match self {
            ProjectionSet::Box { half_width } => x.iter().all(|v| v.abs() < *half_width),
            ProjectionSet::Ball { radius } => x.norm() < *radius,
        }
    }

    /// Whether the closed Euclidean ball `N̄_r(center)` lies inside the set
    /// with a strictly positive margin.
    pub fn contains_ball(&self, center: &DVector<T>, r: T) -> bool {
        match self {
            ProjectionSet::Box { half_width } => center.iter().all(|v| v.abs() + r < *half_width),
            ProjectionSet::Ball { radius } => center.norm() + r < *radius,
        }
    }

    /// Projects in place; returns whether the point moved.
    pub fn project_in_place(&self, x: &mut DVector<T>) -> bool {
        match self {
            ProjectionSet::Box { half_width } => {
                let mut moved = false;
                for v in x.iter_mut() {
                    if v.abs() > *half_width {
                        *v = half_width.copysign(*v);
                        moved = true;
                    }
                }
                moved
            }
            ProjectionSet::Ball { radius } => {
                let n = x.norm();
                if n > *radius {
                    x.scale_mut(*radius / n);
                    while x.norm() > *radius {
                        x.scale_mut(T::one() - T::eps());
                    }
                    true
                } else {
                    false
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.radius();
        if !(r > T::zero()) || !r.is_finite() {
            return Err(Error::InvalidParameter(format!("projection radius must be positive, got {r}")));
        }
        Ok(())
    }
}

/// `ε_k = c0/(k+1)`.
pub fn step_size<T: Scalar>(k: usize, c0: T) -> T {
    c0 / T::from_count(k + 1)
}

/// Euclidean projection onto `set`.
pub fn project<T: Scalar>(set: &ProjectionSet<T>, x: &DVector<T>) -> DVector<T> {
    let mut y = x.clone();
    set.project_in_place(&mut y);
    y
}

#[derive(Clone, Debug)]
pub struct RunConfig<T: Scalar> {
    pub objective: ObjectiveSpec<T>,
    pub noise: NoiseModel<T>,
    pub projection: ProjectionSet<T>,
    pub c0: T,
    pub n_max: usize,
    pub theta0: DVector<T>,
    pub seed: u64,
    pub replications: usize,
}

impl<T: Scalar> RunConfig<T> {
    /// Checks dimensions, `c0·λ_min(B) > 1`, `θ* ∈ G°`, `θ0 ∈ G` and the
    /// (A3) margin of the perturbation on `G`.
    pub fn validate(&self) -> Result<()> {
        let p = self.objective.dim();
        if self.noise.dim() != p || self.theta0.len() != p {
            return Err(Error::Dimension(format!(
                "objective has dimension {p}, noise {} and theta0 {}",
                self.noise.dim(),
                self.theta0.len()
            )));
        }
        self.projection.validate()?;
        self.objective.check_step_scale(self.c0)?;
        if !self.projection.contains_interior(self.objective.theta_star()) {
            return Err(Error::Assumption {
                assumption: "θ* ∈ G°",
                detail: "the minimizer must lie in the interior of the projection set".into(),
            });
        }
        if !self.projection.contains(&self.theta0) {
            return Err(Error::InvalidParameter("theta0 must lie in the projection set".into()));
        }
        self.objective.check_on_set(self.projection.diameter(p))?;
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        Ok(())
    }

    pub fn replication_seed(&self, replication: usize) -> u64 {
        derive_seed(self.seed, &[replication as u64])
    }
}

/// When the projection was active during a run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ProjectionActivity {
    pub active_steps: usize,
    pub first_active: Option<usize>,
    pub last_active: Option<usize>,
}

impl ProjectionActivity {
    fn record(&mut self, k: usize) {
        self.active_steps += 1;
        self.first_active.get_or_insert(k);
        self.last_active = Some(k);
    }

    /// Whether any step with index `≥ from` was projected.
    pub fn active_from(&self, from: usize) -> bool {
        self.last_active.is_some_and(|k| k >= from)
    }
}

/// One update `θ_k → θ_{k+1}` as seen by a [`StepObserver`].
pub struct Step<'a, T: Scalar> {
    pub k: usize,
    pub theta: &'a DVector<T>,
    /// `X_{k-1}`, absent at `k = 0`.
    pub prev_noise: Option<&'a DVector<T>>,
    /// `X_k`, the noise used by this update.
    pub noise: &'a DVector<T>,
    pub next: &'a DVector<T>,
    pub projected: bool,
}

/// Streaming consumer of a run; avoids storing whole trajectories.
pub trait StepObserver<T: Scalar> {
    fn on_step(&mut self, step: &Step<'_, T>);
}

impl<T: Scalar, F: FnMut(&Step<'_, T>)> StepObserver<T> for F {
    fn on_step(&mut self, step: &Step<'_, T>) {
        self(step)
    }
}

/// Runs replication `replication` and feeds every step to `observer`.
pub fn run_observed<T: Scalar, O: StepObserver<T> + ?Sized>(
    config: &RunConfig<T>,
    replication: usize,
    observer: &mut O,
) -> ProjectionActivity {
    let p = config.objective.dim();
    let mut stream = config.noise.stream(config.replication_seed(replication));
    let mut theta = config.theta0.clone();
    let mut next = DVector::zeros(p);
    let mut err = DVector::zeros(p);
    let mut grad = DVector::zeros(p);
    let mut prev = DVector::zeros(p);
    let mut cur = DVector::zeros(p);
    let mut activity = ProjectionActivity::default();
    for k in 0..config.n_max {
        cur.copy_from(stream.next_value());
        config.objective.grad_into(&theta, &mut err, &mut grad);
        config.objective.gain().apply_into(&theta, &cur, T::one(), &mut grad);
        next.copy_from(&theta);
        next.axpy(-step_size::<T>(k, config.c0), &grad, T::one());
        let projected = config.projection.project_in_place(&mut next);
        if projected {
            activity.record(k);
        }
        observer.on_step(&Step {
            k,
            theta: &theta,
            prev_noise: if k == 0 { None } else { Some(&prev) },
            noise: &cur,
            next: &next,
            projected,
        });
        std::mem::swap(&mut theta, &mut next);
        std::mem::swap(&mut prev, &mut cur);
    }
    activity
}

/// Stored iterate path `θ_0 … θ_{n_max}` with the noise values that drove it.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub replication: usize,
    pub seed: u64,
    pub c0: T,
    pub theta_star: DVector<T>,
    pub iterates: Vec<DVector<T>>,
    /// `X_0 … X_{n_max-1}`.
    pub noise: Vec<DVector<T>>,
    pub projection: ProjectionActivity,
}

impl<T: Scalar> Trajectory<T> {
    /// Number of updates.
    pub fn steps(&self) -> usize {
        self.noise.len()
    }

    pub fn theta(&self, k: usize) -> &DVector<T> {
        &self.iterates[k]
    }

    /// `θ̃_k = θ_k - θ*`.
    pub fn error(&self, k: usize) -> DVector<T> {
        &self.iterates[k] - &self.theta_star
    }

    pub fn error_norm_sq(&self, k: usize) -> T {
        self.error(k).norm_squared()
    }

    /// CSV with header `k,theta_1..theta_p,error_norm_sq`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let p = self.theta_star.len();
        let mut header = String::from("k");
        for i in 1..=p {
            header.push_str(&format!(",theta_{i}"));
        }
        header.push_str(",error_norm_sq");
        writeln!(w, "{header}")?;
        for (k, th) in self.iterates.iter().enumerate() {
            write!(w, "{k}")?;
            for v in th.iter() {
                write!(w, ",{}", v.as_f64())?;
            }
            writeln!(w, ",{}", self.error_norm_sq(k).as_f64())?;
        }
        Ok(())
    }
}

/// Runs and stores replication `replication`.
pub fn run_replication<T: Scalar>(config: &RunConfig<T>, replication: usize) -> Trajectory<T> {
    let mut iterates = Vec::with_capacity(config.n_max + 1);
    let mut noise = Vec::with_capacity(config.n_max);
    iterates.push(config.theta0.clone());
    let projection = run_observed(config, replication, &mut |s: &Step<'_, T>| {
        iterates.push(s.next.clone());
        noise.push(s.noise.clone());
    });
    Trajectory {
        replication,
        seed: config.replication_seed(replication),
        c0: config.c0,
        theta_star: config.objective.theta_star().clone(),
        iterates,
        noise,
        projection,
    }
}

/// The first replication of `config`.
pub fn run<T: Scalar>(config: &RunConfig<T>) -> Result<Trajectory<T>> {
    config.validate()?;
    Ok(run_replication(config, 0))
}

/// All replications; ordering and values are independent of thread count.
pub fn run_ensemble<T: Scalar>(config: &RunConfig<T>) -> Result<Vec<Trajectory<T>>> {
    config.validate()?;
    Ok((0..config.replications)
        .into_par_iter()
        .map(|i| run_replication(config, i))
        .collect())
}

/// Runs every replication through an observer built by `make`, returning
/// the observers in replication order.
pub fn run_ensemble_observed<T, O, F>(config: &RunConfig<T>, make: F) -> Result<Vec<(O, ProjectionActivity)>>
where
    T: Scalar,
    O: StepObserver<T> + Send,
    F: Fn(usize) -> O + Sync,
{
    config.validate()?;
    Ok((0..config.replications)
        .into_par_iter()
        .map(|i| {
            let mut obs = make(i);
            let act = run_observed(config, i, &mut obs);
            (obs, act)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::ObjectiveSpec;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn scalar_config(noise_var: f64, theta0: f64, r: f64) -> RunConfig<f64> {
        RunConfig {
            objective: ObjectiveSpec::quadratic(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1), 1.0)
                .unwrap(),
            noise: NoiseModel::iid_gaussian(DMatrix::from_element(1, 1, noise_var)).unwrap(),
            projection: ProjectionSet::Box { half_width: r },
            c0: 1.0,
            n_max: 20,
            theta0: DVector::from_element(1, theta0),
            seed: 5,
            replications: 4,
        }
    }

    #[test]
    fn step_size_examples() {
        assert_eq!(step_size(0, 1.0), 1.0);
        assert_relative_eq!(step_size(9, 1.0), 0.1);
        assert_eq!(step_size(1, 2.0), 1.0);
    }

    #[test]
    fn projection_examples() {
        let b = ProjectionSet::Box { half_width: 1.0 };
        let x = DVector::from_vec(vec![2.0, 0.5]);
        assert_eq!(project(&b, &x), DVector::from_vec(vec![1.0, 0.5]));
        let inside = DVector::from_vec(vec![0.2, -0.9]);
        assert_eq!(project(&b, &inside), inside);
        let ball = ProjectionSet::Ball { radius: 1.0 };
        let y = project(&ball, &DVector::from_vec(vec![3.0, 4.0]));
        assert_relative_eq!(y[0], 0.6, epsilon = 1e-15);
        assert_relative_eq!(y[1], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn zero_noise_hand_iteration() {
        // θ1 = 1 - 1·2·1 = -1, θ2 = -1 - ½·2·(-1) = 0
        let cfg = scalar_config(0.0, 1.0, 0.5);
        let traj = run(&RunConfig { theta0: DVector::from_element(1, 0.5), ..cfg.clone() }).unwrap();
        assert_eq!(traj.theta(1)[0], -0.5);
        let wide = RunConfig { projection: ProjectionSet::Box { half_width: 10.0 }, ..cfg };
        let traj = run(&wide).unwrap();
        assert_eq!(traj.theta(1)[0], -1.0);
        assert_eq!(traj.theta(2)[0], 0.0);
        assert!(traj.projection.last_active.is_none());
    }

    #[test]
    fn projection_clamps_first_step_into_g() {
        // 0.8 - 2·2·0.8 = -2.4, clamped to -0.8
        let cfg = RunConfig {
            projection: ProjectionSet::Box { half_width: 0.8 },
            theta0: DVector::from_element(1, 0.8),
            c0: 2.0,
            ..scalar_config(0.0, 1.0, 1.0)
        };
        let traj = run(&cfg).unwrap();
        assert_eq!(traj.theta(1)[0], -0.8);
        assert_eq!(traj.projection.first_active, Some(0));
    }

    #[test]
    fn fixed_point_at_minimizer() {
        let cfg = scalar_config(0.0, 0.0, 10.0);
        let traj = run(&cfg).unwrap();
        assert!(traj.iterates.iter().all(|t| t[0] == 0.0));
    }

    #[test]
    fn zero_noise_matches_gradient_descent() {
        let cfg = scalar_config(0.0, 3.0, 10.0);
        let traj = run(&cfg).unwrap();
        let mut th = 3.0f64;
        for k in 0..cfg.n_max {
            th -= 1.0 / (k as f64 + 1.0) * 2.0 * th;
            assert_eq!(traj.theta(k + 1)[0], th);
        }
    }

    #[test]
    fn ensemble_is_deterministic_and_replication_zero_is_run() {
        let cfg = scalar_config(1.0, 1.0, 10.0);
        let a = run_ensemble(&cfg).unwrap();
        let b = run_ensemble(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], run(&cfg).unwrap());
        assert_ne!(a[0].noise, a[1].noise);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run_ensemble(&cfg).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut cfg = scalar_config(1.0, 1.0, 10.0);
        cfg.theta0 = DVector::from_element(1, 11.0);
        assert!(cfg.validate().is_err());
        let mut cfg = scalar_config(1.0, 1.0, 10.0);
        cfg.c0 = 0.4;
        assert!(matches!(cfg.validate(), Err(Error::Assumption { assumption: "A4", .. })));
        let mut cfg = scalar_config(1.0, 0.0, 10.0);
        cfg.objective = ObjectiveSpec::quadratic(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 10.0), 1.0).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Assumption { assumption: "θ* ∈ G°", .. })));
    }

    #[test]
    fn csv_export_columns() {
        let cfg = RunConfig { n_max: 2, ..scalar_config(0.0, 1.0, 10.0) };
        let traj = run(&cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "k,theta_1,error_norm_sq\n0,1,1\n1,-1,1\n2,0,0\n");
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-5.0f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
            ball in any::<bool>(),
        ) {
            let set = if ball { ProjectionSet::Ball { radius: 1.5 } } else { ProjectionSet::Box { half_width: 1.5 } };
            let x = DVector::from_vec(a);
            let y = DVector::from_vec(b);
            let px = project(&set, &x);
            let py = project(&set, &y);
            prop_assert!(set.contains(&px));
            prop_assert_eq!(project(&set, &px), px.clone());
            prop_assert!((&px - &py).norm() <= (&x - &y).norm() + 1e-12);
        }
    }
}
