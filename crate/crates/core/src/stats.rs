//! Small statistics helpers shared by the analysis modules.

use crate::scalar::Scalar;

/// Sample mean and standard error of the mean. The standard error is zero
/// for fewer than two samples.
pub fn mean_se<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    if n == 0 {
        return (T::zero(), T::zero());
    }
    let nf = T::from_count(n);
    let mean = xs.iter().fold(T::zero(), |a, b| a + *b) / nf;
    if n < 2 {
        return (mean, T::zero());
    }
    let ss = xs.iter().fold(T::zero(), |a, b| a + (*b - mean) * (*b - mean));
    let var = ss / T::from_count(n - 1);
    (mean, (var / nf).sqrt())
}

/// Ordinary least-squares line `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit<T: Scalar> {
    pub slope: T,
    pub intercept: T,
    pub r_squared: T,
}

/// Fits a line; `None` for fewer than two points or constant abscissae.
/// `R²` is 1 for a perfect fit of constant data and 0 for a flat line that
/// leaves residuals.
pub fn least_squares<T: Scalar>(xs: &[T], ys: &[T]) -> Option<LineFit<T>> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let nf = T::from_count(n);
    let mx = xs.iter().fold(T::zero(), |a, b| a + *b) / nf;
    let my = ys.iter().fold(T::zero(), |a, b| a + *b) / nf;
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    let mut syy = T::zero();
    for (x, y) in xs.iter().zip(ys) {
        let dx = *x - mx;
        let dy = *y - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == T::zero() {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = xs
        .iter()
        .zip(ys)
        .fold(T::zero(), |a, (x, y)| {
            let r = *y - intercept - slope * *x;
            a + r * r
        });
    let r_squared = if syy > T::zero() {
        T::one() - ss_res / syy
    } else if ss_res == T::zero() {
        T::one()
    } else {
        T::zero()
    };
    Some(LineFit { slope, intercept, r_squared })
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
/// With zero successes the rule-of-three upper bound `3/n` is used instead.
pub fn binomial_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    if k == 0 {
        return (0.0, (3.0 / nf).min(1.0));
    }
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_and_se() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_relative_eq!(se, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-15);
        assert_eq!(mean_se(&[7.0f64]), (7.0, 0.0));
    }

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 3.0 * x).collect();
        let f = least_squares(&xs, &ys).unwrap();
        assert_relative_eq!(f.slope, -3.0, epsilon = 1e-14);
        assert_relative_eq!(f.intercept, 2.0, epsilon = 1e-14);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-14);
        assert!(least_squares(&[1.0, 1.0], &[0.0, 2.0]).is_none());
    }

    #[test]
    fn wilson_interval() {
        assert_eq!(binomial_interval(0, 100, 1.96), (0.0, 0.03));
        let (lo, hi) = binomial_interval(50, 100, 1.96);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-12);
        assert_eq!(binomial_interval(10, 10, 1.96).1, 1.0);
    }
}
