//! Variation bounds and class membership for translation-invariant product
//! measures `μ = ∏_p h(x_p) dx_p` with `h = α h⁺ + (1 - α) h⁻`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transfer::{BVNorms, Half, PiecewiseLinearDensity};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductMeasureSpec<T> {
    alpha: T,
    h_plus: PiecewiseLinearDensity<T>,
    h_minus: PiecewiseLinearDensity<T>,
    site_density: PiecewiseLinearDensity<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaMembership<T> {
    pub member: bool,
    pub k: T,
    pub alpha: T,
    /// `max(‖h⁺‖_BV, ‖h‖_BV)`; membership needs `θ` strictly above it.
    pub threshold: T,
}

impl<T: Scalar> ProductMeasureSpec<T> {
    pub fn new(alpha: T, h_plus: PiecewiseLinearDensity<T>, h_minus: PiecewiseLinearDensity<T>) -> Result<Self> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::domain("alpha", format!("must lie in [0, 1], got {alpha}")));
        }
        check_half_density(&h_plus, Half::Positive, "h_plus")?;
        check_half_density(&h_minus, Half::Negative, "h_minus")?;
        let site_density = h_plus.combine(alpha, &h_minus, T::one() - alpha);
        Ok(Self {
            alpha,
            h_plus,
            h_minus,
            site_density,
        })
    }

    /// Lebesgue probability densities on each half.
    pub fn uniform(alpha: T) -> Result<Self> {
        Self::new(
            alpha,
            PiecewiseLinearDensity::uniform_half(Half::Positive),
            PiecewiseLinearDensity::uniform_half(Half::Negative),
        )
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn h_plus(&self) -> &PiecewiseLinearDensity<T> {
        &self.h_plus
    }

    pub fn h_minus(&self) -> &PiecewiseLinearDensity<T> {
        &self.h_minus
    }

    pub fn site_density(&self) -> &PiecewiseLinearDensity<T> {
        &self.site_density
    }

    /// `α^|Λ| ‖h⁺‖_BV^{|Ω∩Λ|} ‖h‖_BV^{|Ω\Λ|}`, an upper bound on `Var_Ω(1_{(0,1]^Λ} μ)`.
    pub fn var_lambda_bound(&self, lambda_size: usize, omega_size: usize, overlap: usize) -> Result<T> {
        if overlap > lambda_size.min(omega_size) {
            return Err(Error::domain(
                "overlap",
                format!("{overlap} exceeds min(|Λ|, |Ω|) = {}", lambda_size.min(omega_size)),
            ));
        }
        let bp = self.h_plus.bv_norms().bv;
        let bh = self.site_density.bv_norms().bv;
        Ok(self.alpha.powi(lambda_size as i32) * bp.powi(overlap as i32) * bh.powi((omega_size - overlap) as i32))
    }

    /// Whether `μ ∈ B(1, α, θ)`.
    pub fn theta_membership(&self, theta: T) -> Result<ThetaMembership<T>> {
        if !(theta >= T::one()) {
            return Err(Error::domain("theta", format!("must be at least 1, got {theta}")));
        }
        let threshold = self.h_plus.bv_norms().bv.max(self.site_density.bv_norms().bv);
        Ok(ThetaMembership {
            member: theta > threshold,
            k: T::one(),
            alpha: self.alpha,
            threshold,
        })
    }
}

pub fn bv_norms<T: Scalar>(density: &PiecewiseLinearDensity<T>) -> BVNorms<T> {
    density.bv_norms()
}

fn check_half_density<T: Scalar>(h: &PiecewiseLinearDensity<T>, half: Half, name: &'static str) -> Result<()> {
    let tol = T::lit(1e-9);
    let other = match half {
        Half::Positive => Half::Negative,
        Half::Negative => Half::Positive,
    };
    if h.mass_on(other).abs() > tol || (h.integral() - T::one()).abs() > tol {
        return Err(Error::domain(name, "must be a probability density on its half"));
    }
    let bp = h.breakpoints();
    for i in 0..h.n_pieces() {
        let (a, b) = (bp[i], bp[i + 1]);
        let (m, q) = (h.slopes()[i], h.offsets()[i]);
        if m * a + q < -tol || m * b + q < -tol {
            return Err(Error::domain(name, "must be nonnegative"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn var_lambda_examples() {
        let spec = ProductMeasureSpec::<f64>::uniform(0.5).unwrap();
        let bh = spec.site_density().bv_norms().bv;
        let bp = spec.h_plus().bv_norms().bv;
        assert_abs_diff_eq!(spec.var_lambda_bound(0, 3, 0).unwrap(), bh.powi(3), epsilon = 1e-12);
        assert_eq!(spec.var_lambda_bound(3, 0, 0).unwrap(), 0.125);
        assert_abs_diff_eq!(spec.var_lambda_bound(2, 2, 2).unwrap(), 0.25 * bp * bp, epsilon = 1e-12);
        assert!(spec.var_lambda_bound(1, 2, 2).is_err());
    }

    #[test]
    fn site_density_of_even_mixture() {
        let spec = ProductMeasureSpec::<f64>::uniform(0.5).unwrap();
        let n = spec.site_density().bv_norms();
        assert_abs_diff_eq!(n.l1, 1.0, epsilon = 1e-15);
        // 0.5 on [-1, 1]: jumps of 0.5 at both ends
        assert_abs_diff_eq!(n.variation, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n.interior_variation, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn membership_of_lebesgue_on_negative_half() {
        let spec = ProductMeasureSpec::<f64>::uniform(0.0).unwrap();
        let threshold = spec.theta_membership(1.0).unwrap().threshold;
        // indicator of a half: variation 2 (extension by zero) plus mass 1
        assert_abs_diff_eq!(threshold, 3.0, epsilon = 1e-15);
        assert!(!spec.theta_membership(3.0).unwrap().member);
        let m = spec.theta_membership(3.01).unwrap();
        assert!(m.member);
        assert_eq!(m.k, 1.0);
        assert_eq!(m.alpha, 0.0);
        assert!(spec.theta_membership(0.5).is_err());
    }

    #[test]
    fn nonconstant_density_fails_at_theta_one() {
        let ramp = PiecewiseLinearDensity::new(vec![-1.0, 0.0, 1.0], vec![0.0, 2.0], vec![0.0, 0.0]).unwrap();
        let spec = ProductMeasureSpec::new(0.3, ramp, PiecewiseLinearDensity::uniform_half(Half::Negative)).unwrap();
        assert!(!spec.theta_membership(1.0).unwrap().member);
    }

    #[test]
    fn rejects_bad_components() {
        let u = PiecewiseLinearDensity::<f64>::uniform_half(Half::Positive);
        let wrong_half = PiecewiseLinearDensity::uniform_half(Half::Positive);
        assert!(ProductMeasureSpec::new(0.5, u.clone(), wrong_half).is_err());
        let heavy = PiecewiseLinearDensity::indicator(-1.0, 0.0, 2.0).unwrap();
        assert!(ProductMeasureSpec::new(0.5, u.clone(), heavy).is_err());
        let neg = PiecewiseLinearDensity::uniform_half(Half::Negative);
        assert!(ProductMeasureSpec::new(1.5, u, neg).is_err());
    }

    proptest! {
        #[test]
        fn monotone_in_lambda(alpha in 0.0f64..0.999, l in 0usize..6, o in 0usize..6) {
            let spec = ProductMeasureSpec::<f64>::uniform(alpha).unwrap();
            let a = spec.var_lambda_bound(l, o, 0).unwrap();
            let b = spec.var_lambda_bound(l + 1, o, 0).unwrap();
            prop_assert!(b <= a);
        }

        #[test]
        fn multiplicative_over_blocks(alpha in 0.0f64..1.0, l1 in 0usize..4, l2 in 0usize..4, o1 in 0usize..4, o2 in 0usize..4) {
            let spec = ProductMeasureSpec::<f64>::uniform(alpha).unwrap();
            let (v1, v2) = (l1.min(o1), l2.min(o2));
            let joint = spec.var_lambda_bound(l1 + l2, o1 + o2, v1 + v2).unwrap();
            let split = spec.var_lambda_bound(l1, o1, v1).unwrap() * spec.var_lambda_bound(l2, o2, v2).unwrap();
            prop_assert!((joint - split).abs() <= 1e-12 * (1.0 + joint));
        }

        #[test]
        fn membership_monotone_in_theta(alpha in 0.0f64..1.0, t1 in 1.0f64..10.0, dt in 0.0f64..5.0) {
            let spec = ProductMeasureSpec::<f64>::uniform(alpha).unwrap();
            if spec.theta_membership(t1).unwrap().member {
                prop_assert!(spec.theta_membership(t1 + dt).unwrap().member);
            }
        }
    }
}
