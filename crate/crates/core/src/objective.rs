//! Locally quadratic objectives and the linear noisy-gradient oracle.
//!
//! `C(θ) = ½ (θ-θ*)ᵀ B (θ-θ*) + D(θ)` where the built-in perturbation
//! `D(θ) = K_D/(2+α) ‖θ-θ*‖^{2+α}` has `‖∇D(θ)‖ = K_D ‖θ-θ*‖^{1+α}` exactly.
//! Noisy gradients are `∇c(θ, x) = ∇C(θ) + f₀(θ) x`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{dims_match, is_symmetric, min_eigenvalue, op_norm};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum Perturbation<T: Scalar> {
    None,
    Power { k_d: T, alpha: T },
}

/// The noise gain `f₀(θ)`.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseGain<T: Scalar> {
    /// `σ·I`.
    Constant(T),
    /// `(1 + min(‖θ‖, cap))·I`.
    StateDependent { cap: T },
    /// Constant full matrix `F`.
    Matrix(DMatrix<T>),
}

impl<T: Scalar> NoiseGain<T> {
    /// Scalar multiplier at `θ` for the scalar forms.
    pub fn scalar_at(&self, theta: &DVector<T>) -> Option<T> {
        match self {
            NoiseGain::Constant(s) => Some(*s),
            NoiseGain::StateDependent { cap } => Some(T::one() + theta.norm().min(*cap)),
            NoiseGain::Matrix(_) => None,
        }
    }

    pub fn matrix_at(&self, theta: &DVector<T>) -> DMatrix<T> {
        match self {
            NoiseGain::Matrix(f) => f.clone(),
            _ => {
                let p = theta.len();
                DMatrix::identity(p, p) * self.scalar_at(theta).expect("scalar gain")
            }
        }
    }

    /// `out += coef · f₀(θ) x`.
    pub fn apply_into(&self, theta: &DVector<T>, x: &DVector<T>, coef: T, out: &mut DVector<T>) {
        match self {
            NoiseGain::Matrix(f) => out.gemv(coef, f, x, T::one()),
            _ => out.axpy(coef * self.scalar_at(theta).expect("scalar gain"), x, T::one()),
        }
    }

    /// `sup_θ ‖f₀(θ)‖`.
    pub fn sup_norm(&self) -> T {
        match self {
            NoiseGain::Constant(s) => s.abs(),
            NoiseGain::StateDependent { cap } => T::one() + *cap,
            NoiseGain::Matrix(f) => op_norm(f),
        }
    }

    /// Lipschitz constant of `θ ↦ f₀(θ)` in operator norm.
    pub fn lipschitz(&self) -> T {
        match self {
            NoiseGain::StateDependent { .. } => T::one(),
            _ => T::zero(),
        }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, NoiseGain::StateDependent { .. })
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveSpec<T: Scalar> {
    b: DMatrix<T>,
    theta_star: DVector<T>,
    perturbation: Perturbation<T>,
    gain: NoiseGain<T>,
    lambda: T,
    b_norm: T,
}

impl<T: Scalar> ObjectiveSpec<T> {
    pub fn new(
        b: DMatrix<T>,
        theta_star: DVector<T>,
        perturbation: Perturbation<T>,
        gain: NoiseGain<T>,
    ) -> Result<Self> {
        let p = theta_star.len();
        if p == 0 {
            return Err(Error::Dimension("objective dimension must be positive".into()));
        }
        dims_match(&b, p, "B")?;
        if !is_symmetric(&b) {
            return Err(Error::Assumption { assumption: "A4", detail: "B must be symmetric".into() });
        }
        let lambda = min_eigenvalue(&b);
        if !(lambda > T::zero()) {
            return Err(Error::Assumption {
                assumption: "A4",
                detail: format!("B must be positive definite, smallest eigenvalue is {lambda}"),
            });
        }
        if let Perturbation::Power { k_d, alpha } = &perturbation {
            if !(*k_d > T::zero()) || !(*alpha > T::zero()) {
                return Err(Error::Assumption {
                    assumption: "A4",
                    detail: "perturbation constants K_D and alpha must be positive".into(),
                });
            }
        }
        match &gain {
            NoiseGain::Constant(s) if *s == T::zero() || !s.is_finite() => {
                return Err(Error::Assumption {
                    assumption: "A5",
                    detail: "noise gain f0(θ*) must be nonzero and finite".into(),
                })
            }
            NoiseGain::StateDependent { cap } if !(*cap > T::zero()) || !cap.is_finite() => {
                return Err(Error::InvalidParameter("gain cap must be positive and finite".into()))
            }
            NoiseGain::Matrix(f) => {
                dims_match(f, p, "gain matrix")?;
                if f.amax() == T::zero() {
                    return Err(Error::Assumption {
                        assumption: "A5",
                        detail: "noise gain f0(θ*) must be nonzero".into(),
                    });
                }
            }
            _ => {}
        }
        let b_norm = op_norm(&b);
        Ok(ObjectiveSpec { b, theta_star, perturbation, gain, lambda, b_norm })
    }

    /// Pure quadratic with constant gain `sigma`.
    pub fn quadratic(b: DMatrix<T>, theta_star: DVector<T>, sigma: T) -> Result<Self> {
        Self::new(b, theta_star, Perturbation::None, NoiseGain::Constant(sigma))
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn theta_star(&self) -> &DVector<T> {
        &self.theta_star
    }

    pub fn perturbation(&self) -> &Perturbation<T> {
        &self.perturbation
    }

    pub fn gain(&self) -> &NoiseGain<T> {
        &self.gain
    }

    /// Smallest eigenvalue of `B`.
    pub fn lambda_min(&self) -> T {
        self.lambda
    }

    pub fn b_norm(&self) -> T {
        self.b_norm
    }

    /// `(K_D, α)`, with `K_D = 0` when unperturbed.
    pub fn perturbation_constants(&self) -> (T, T) {
        match &self.perturbation {
            Perturbation::None => (T::zero(), T::one()),
            Perturbation::Power { k_d, alpha } => (*k_d, *alpha),
        }
    }

    pub fn error(&self, theta: &DVector<T>) -> DVector<T> {
        theta - &self.theta_star
    }

    pub fn cost(&self, theta: &DVector<T>) -> T {
        let err = self.error(theta);
        self.cost_of_error(&err)
    }

    /// `C(θ* + err) - C(θ*)`.
    pub fn cost_of_error(&self, err: &DVector<T>) -> T {
        let p = err.len();
        let mut quad = T::zero();
        for j in 0..p {
            let mut col = T::zero();
            for i in 0..p {
                col += self.b[(i, j)] * err[i];
            }
            quad += col * err[j];
        }
        quad *= T::lit(0.5);
        match &self.perturbation {
            Perturbation::None => quad,
            Perturbation::Power { k_d, alpha } => {
                let two_a = T::lit(2.0) + *alpha;
                quad + *k_d / two_a * err.norm().powf(two_a)
            }
        }
    }

    pub fn grad(&self, theta: &DVector<T>) -> DVector<T> {
        let mut err = DVector::zeros(self.dim());
        let mut out = DVector::zeros(self.dim());
        self.grad_into(theta, &mut err, &mut out);
        out
    }

    /// Writes `θ - θ*` into `err` and `∇C(θ)` into `out`.
    pub fn grad_into(&self, theta: &DVector<T>, err: &mut DVector<T>, out: &mut DVector<T>) {
        err.copy_from(theta);
        *err -= &self.theta_star;
        out.gemv(T::one(), &self.b, err, T::zero());
        if let Perturbation::Power { k_d, alpha } = &self.perturbation {
            let r = err.norm();
            if r > T::zero() {
                out.axpy(*k_d * r.powf(*alpha), err, T::one());
            }
        }
    }

    pub fn noisy_grad(&self, theta: &DVector<T>, x: &DVector<T>) -> DVector<T> {
        let mut g = self.grad(theta);
        self.gain.apply_into(theta, x, T::one(), &mut g);
        g
    }

    /// Checks the sufficient condition `K_D · diam(G)^α < λ` for (A3) and
    /// convexity on a feasible set of the given diameter.
    pub fn check_on_set(&self, diameter: T) -> Result<()> {
        if let Perturbation::Power { k_d, alpha } = &self.perturbation {
            let lhs = *k_d * diameter.powf(*alpha);
            if !(lhs < self.lambda) {
                return Err(Error::Assumption {
                    assumption: "A3",
                    detail: format!(
                        "K_D·diam(G)^α = {} must be below λ_min(B) = {}",
                        lhs, self.lambda
                    ),
                });
            }
        }
        Ok(())
    }

    /// Requires `c0 · λ_min(B) > 1`.
    pub fn check_step_scale(&self, c0: T) -> Result<()> {
        if !(c0 * self.lambda > T::one()) {
            return Err(Error::Assumption {
                assumption: "A4",
                detail: format!(
                    "A4 requires λ_min(B) > 1 (with step scale c0: c0·λ_min(B) > 1); got c0 = {c0}, λ_min(B) = {}",
                    self.lambda
                ),
            });
        }
        Ok(())
    }

    /// Constant `L̄(x)` with `‖∇c(θ,x) - ∇c(0,x)‖ ≤ L̄(x)‖θ‖` for `‖θ‖ ≤ radius`.
    pub fn lipschitz_bound(&self, radius: T, x: &DVector<T>) -> T {
        let (k_d, alpha) = self.perturbation_constants();
        let reach = radius + self.theta_star.norm();
        self.b_norm + k_d * (T::one() + alpha) * reach.powf(alpha) + self.gain.lipschitz() * x.norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn one_d(b: f64, k_d: Option<(f64, f64)>) -> ObjectiveSpec<f64> {
        let pert = match k_d {
            Some((k, a)) => Perturbation::Power { k_d: k, alpha: a },
            None => Perturbation::None,
        };
        ObjectiveSpec::new(
            DMatrix::from_element(1, 1, b),
            DVector::from_element(1, 0.0),
            pert,
            NoiseGain::Constant(1.0),
        )
        .unwrap()
    }

    fn two_d() -> ObjectiveSpec<f64> {
        ObjectiveSpec::new(
            DMatrix::from_row_slice(2, 2, &[2.5, 0.5, 0.5, 2.5]),
            DVector::from_vec(vec![0.5, -0.3]),
            Perturbation::Power { k_d: 0.1, alpha: 1.0 },
            NoiseGain::StateDependent { cap: 2.0 },
        )
        .unwrap()
    }

    #[test]
    fn cost_examples() {
        let q = one_d(2.0, None);
        assert_eq!(q.cost(&DVector::from_element(1, 0.0)), 0.0);
        assert_relative_eq!(q.cost(&DVector::from_element(1, 3.0)), 9.0);
        let p = one_d(2.0, Some((1.0, 1.0)));
        assert_relative_eq!(p.cost(&DVector::from_element(1, 1.0)), 1.0 + 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn grad_examples() {
        let p = one_d(2.0, Some((1.0, 1.0)));
        assert_eq!(p.grad(&DVector::from_element(1, 0.0))[0], 0.0);
        assert_relative_eq!(p.grad(&DVector::from_element(1, 2.0))[0], 8.0, epsilon = 1e-14);
    }

    #[test]
    fn noisy_grad_examples() {
        let q = one_d(2.0, None);
        let th = DVector::from_element(1, 0.7);
        assert_eq!(q.noisy_grad(&th, &DVector::zeros(1)), q.grad(&th));
        assert_eq!(q.noisy_grad(&DVector::zeros(1), &DVector::from_element(1, 2.0))[0], 2.0);
    }

    #[test]
    fn validation_errors() {
        let bad = ObjectiveSpec::quadratic(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DVector::zeros(2),
            1.0,
        );
        assert!(matches!(bad, Err(Error::Assumption { assumption: "A4", .. })));
        let q = one_d(0.5, None);
        let e = q.check_step_scale(1.0).unwrap_err();
        assert!(e.to_string().contains("A4 requires λ_min(B) > 1"));
        assert!(q.check_step_scale(3.0).is_ok());
        let p = one_d(2.0, Some((1.0, 1.0)));
        assert!(p.check_on_set(1.5).is_ok());
        assert!(matches!(p.check_on_set(2.5), Err(Error::Assumption { assumption: "A3", .. })));
        let zero_gain = ObjectiveSpec::quadratic(DMatrix::identity(1, 1) * 2.0, DVector::zeros(1), 0.0);
        assert!(zero_gain.is_err());
    }

    proptest! {
        #[test]
        fn gradient_matches_central_differences(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let f = two_d();
            let th = DVector::from_vec(vec![x, y]);
            let g = f.grad(&th);
            let h = 1e-5;
            for i in 0..2 {
                let mut up = th.clone();
                let mut dn = th.clone();
                up[i] += h;
                dn[i] -= h;
                let fd = (f.cost(&up) - f.cost(&dn)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-6 * g.norm().max(1.0));
            }
        }

        #[test]
        fn perturbation_gradient_norm_is_sharp(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let f = two_d();
            let th = DVector::from_vec(vec![x, y]);
            let err = f.error(&th);
            let d_grad = f.grad(&th) - f.b() * &err;
            prop_assert!((d_grad.norm() - 0.1 * err.norm().powi(2)).abs() < 1e-12);
        }

        #[test]
        fn a3_positivity_on_box(x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let f = two_d();
            let th = DVector::from_vec(vec![x, y]);
            let err = f.error(&th);
            prop_assume!(err.norm() > 1e-9);
            prop_assert!(err.dot(&f.grad(&th)) > 0.0);
        }

        #[test]
        fn convex_along_segments(
            a in proptest::collection::vec(-2.0f64..2.0, 2),
            b in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let f = two_d();
            let u = DVector::from_vec(a);
            let v = DVector::from_vec(b);
            let mid = (&u + &v) * 0.5;
            prop_assert!(f.cost(&mid) <= 0.5 * (f.cost(&u) + f.cost(&v)) + 1e-12);
        }

        #[test]
        fn lipschitz_structure(
            t in proptest::collection::vec(-2.0f64..2.0, 2),
            x in proptest::collection::vec(-4.0f64..4.0, 2),
        ) {
            let f = two_d();
            let th = DVector::from_vec(t);
            let xv = DVector::from_vec(x);
            let lhs = (f.noisy_grad(&th, &xv) - f.noisy_grad(&DVector::zeros(2), &xv)).norm();
            let rhs = f.lipschitz_bound(th.norm(), &xv) * th.norm();
            prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
        }
    }
}
