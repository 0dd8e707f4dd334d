//! Closed-form constants of the contour and contraction estimates for a map
//! and coupling strength, threshold solvers and the contour-sum bound.

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::local_map::PiecewiseExpandingMap;
use crate::scalar::Scalar;
use crate::transfer::{estimate_decay, Half, PiecewiseLinearDensity};

/// Where the decay pair `(c, ς)` came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecaySource {
    TransferFit,
    UserOverride,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedgerParams<T> {
    pub eps: T,
    pub c: T,
    pub varsigma: T,
    pub gamma: u32,
    pub n_window: u32,
    /// `α` of the initial measure class, entering `α′ = 3 max(α₀, α)`.
    pub alpha: T,
    pub decay_source: DecaySource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerFlags {
    pub kappa_above_108: bool,
    pub alpha0_below_1_27: bool,
    pub alpha0_below_1_81: bool,
    pub theta0_above_d0_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "")]
pub struct ConstantsLedger<T: Scalar> {
    #[serde(serialize_with = "ser_real")]
    pub kappa: T,
    #[serde(serialize_with = "ser_real")]
    pub lambda0: T,
    #[serde(serialize_with = "ser_real")]
    pub d0: T,
    #[serde(serialize_with = "ser_real")]
    pub min_branch_length: T,
    pub n_branches: usize,
    #[serde(serialize_with = "ser_real")]
    pub eps: T,
    #[serde(serialize_with = "ser_real")]
    pub e_eps: T,
    #[serde(serialize_with = "ser_real")]
    pub lambda1: T,
    #[serde(serialize_with = "ser_real")]
    pub d1: T,
    #[serde(serialize_with = "ser_real")]
    pub alpha0: T,
    /// `+∞` at `ε = 0`, serialized as `"inf"`.
    #[serde(serialize_with = "ser_real")]
    pub theta0: T,
    /// Present only when `α₀ < 1/27`.
    #[serde(serialize_with = "ser_opt_real")]
    pub k0: Option<T>,
    #[serde(serialize_with = "ser_real")]
    pub alpha: T,
    #[serde(serialize_with = "ser_real")]
    pub alpha_prime: T,
    /// Largest `ε` with `α₀(ε) < 1/27`; present only when `κ > 108`.
    #[serde(serialize_with = "ser_opt_real")]
    pub eps0: Option<T>,
    #[serde(serialize_with = "ser_real")]
    pub c: T,
    #[serde(serialize_with = "ser_real")]
    pub varsigma: T,
    pub decay_source: DecaySource,
    pub gamma: u32,
    pub n_window: u32,
    #[serde(serialize_with = "ser_real")]
    pub sigma1: T,
    pub flags: LedgerFlags,
}

fn ser_real<T: Scalar, S: Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    let x = v.as_f64();
    if x.is_finite() {
        s.serialize_f64(x)
    } else if x > 0.0 {
        s.serialize_str("inf")
    } else if x < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("nan")
    }
}

fn ser_opt_real<T: Scalar, S: Serializer>(v: &Option<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => ser_real(x, s),
        None => s.serialize_none(),
    }
}

/// `α₀ = ½ max{λ₁ + √(λ₁² + 2 D₁ |E_ε|), D₀ |E_ε| / (1 - λ₀)}`.
pub fn alpha0_formula<T: Scalar>(lambda0: T, d0: T, d1: T, e_eps: T) -> (T, T) {
    let two = T::lit(2.0);
    let lambda1 = T::lit(4.0) * lambda0 / two + d0 * e_eps / two;
    let a = lambda1 + (lambda1 * lambda1 + two * d1 * e_eps).sqrt();
    let b = d0 * e_eps / (T::one() - lambda0);
    (a.max(b) / two, lambda1)
}

fn alpha0_at<T: Scalar>(map: &PiecewiseExpandingMap<T>, eps: T) -> Result<T> {
    let c = map.constants();
    let e = map.exceptional_set(eps)?.measure;
    let d1 = T::lit(4.0) / (c.kappa * c.min_branch_length);
    Ok(alpha0_formula(c.lambda0, c.d0, d1, e).0)
}

pub fn compute_ledger<T: Scalar>(map: &PiecewiseExpandingMap<T>, params: &LedgerParams<T>) -> Result<ConstantsLedger<T>> {
    let mc = map.constants();
    let eps = params.eps;
    if !(eps >= T::zero() && eps <= T::one()) {
        return Err(Error::domain("eps", format!("must lie in [0, 1], got {eps}")));
    }
    if !(params.n_window > 0 && params.n_window < params.gamma) {
        return Err(Error::domain(
            "n_window",
            format!("need 0 < n < gamma, got n = {}, gamma = {}", params.n_window, params.gamma),
        ));
    }
    if !(params.varsigma > mc.lambda0 && params.varsigma < T::one()) {
        return Err(Error::domain(
            "varsigma",
            format!("must lie in (lambda0, 1) = ({}, 1), got {}", mc.lambda0, params.varsigma),
        ));
    }
    if !(params.c >= T::zero()) || !params.c.is_finite() {
        return Err(Error::domain("c", format!("must be finite and nonnegative, got {}", params.c)));
    }
    if !(params.alpha >= T::zero() && params.alpha <= T::one()) {
        return Err(Error::domain("alpha", format!("must lie in [0, 1], got {}", params.alpha)));
    }
    let one = T::one();
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let e_eps = map.exceptional_set(eps)?.measure;
    let d1 = T::lit(4.0) / (mc.kappa * mc.min_branch_length);
    let (alpha0, lambda1) = alpha0_formula(mc.lambda0, mc.d0, d1, e_eps);
    let theta0 = if e_eps > T::zero() { two * alpha0 / e_eps } else { T::infinity() };
    let k0 = (alpha0 < one / T::lit(27.0))
        .then(|| one / (two * (one - T::lit(27.0) * alpha0) * (one - three * alpha0)));
    let alpha_prime = three * alpha0.max(params.alpha);
    let eps0 = if mc.kappa > T::lit(108.0) {
        Some(solve_epsilon0(map, one / T::lit(27.0))?)
    } else {
        None
    };
    let ratio = mc.d0 / (one - mc.lambda0);
    let n = params.n_window as i32;
    let g = params.gamma as i32;
    let sigma1 = two * ratio * (mc.lambda0.powi(g - n) + mc.lambda0.powi(g) + params.c * params.varsigma.powi(n))
        + ratio * ratio * ((one + T::lit(n as f64) * mc.d0) / (one - mc.lambda0)) * (T::lit(4.0) * eps + e_eps);
    Ok(ConstantsLedger {
        kappa: mc.kappa,
        lambda0: mc.lambda0,
        d0: mc.d0,
        min_branch_length: mc.min_branch_length,
        n_branches: mc.n_branches,
        eps,
        e_eps,
        lambda1,
        d1,
        alpha0,
        theta0,
        k0,
        alpha: params.alpha,
        alpha_prime,
        eps0,
        c: params.c,
        varsigma: params.varsigma,
        decay_source: params.decay_source,
        gamma: params.gamma,
        n_window: params.n_window,
        sigma1,
        flags: LedgerFlags {
            kappa_above_108: mc.kappa > T::lit(108.0),
            alpha0_below_1_27: alpha0 < one / T::lit(27.0),
            alpha0_below_1_81: alpha0 < one / T::lit(81.0),
            theta0_above_d0_bound: theta0 >= ratio,
        },
    })
}

/// Decay pair `(c, ς)` fitted on a fixed panel of indicator densities on the
/// positive half.
pub fn fitted_decay_pair<T: Scalar>(map: &PiecewiseExpandingMap<T>) -> Result<(T, T)> {
    let samples = decay_panel::<T>()?;
    debug_assert!(samples.iter().all(|s| s.mass_on(Half::Negative) == T::zero()));
    let fit = estimate_decay(map, &samples, 8)?;
    Ok((fit.c, fit.varsigma))
}

/// Indicator densities on the positive half used to fit `(c, ς)`.
pub fn decay_panel<T: Scalar>() -> Result<Vec<PiecewiseLinearDensity<T>>> {
    [(0.0, 0.5), (0.1, 0.37), (0.05, 0.9), (0.2, 0.21), (0.61, 1.0)]
        .iter()
        .map(|&(a, b)| PiecewiseLinearDensity::indicator(T::lit(a), T::lit(b), T::one()))
        .collect()
}

/// Largest `ε` (to within `1e-10`) with `α₀(ε) < target`, by bisection.
pub fn solve_epsilon0<T: Scalar>(map: &PiecewiseExpandingMap<T>, target: T) -> Result<T> {
    let at_zero = alpha0_at(map, T::zero())?;
    if at_zero >= target {
        return Err(Error::NoThreshold {
            alpha0_at_zero: at_zero.as_f64(),
            target: target.as_f64(),
        });
    }
    let (mut lo, mut hi) = (T::zero(), T::one());
    if alpha0_at(map, hi)? < target {
        return Ok(hi);
    }
    let tol = T::lit(1e-10);
    while hi - lo > tol {
        let mid = (lo + hi) / T::lit(2.0);
        if alpha0_at(map, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PeierlsBound {
    pub closed_form: f64,
    pub brute_sum: f64,
    pub tail_bound: f64,
    /// Truncation orders `(n_d, k, c)` used by the brute sum.
    pub truncation: (u32, u32, u32),
}

/// `K Σ_{n_d ≥ 0, k ≥ 0, c ≥ 1} 3^{3 n_d + |Λ| - c + k} (α′/3)^{n_d + |Λ| + k}`,
/// in closed form and by direct truncated summation.
pub fn peierls_series_bound(alpha_prime: f64, lambda_size: u32, k: f64) -> Result<PeierlsBound> {
    if !(alpha_prime >= 0.0) {
        return Err(Error::domain("alpha_prime", format!("must be nonnegative, got {alpha_prime}")));
    }
    if alpha_prime >= 1.0 / 9.0 {
        return Err(Error::Divergent { alpha_prime });
    }
    if !(k >= 0.0 && k.is_finite()) {
        return Err(Error::domain("K", format!("must be finite and nonnegative, got {k}")));
    }
    let lam = lambda_size as i32;
    let closed_form = k * alpha_prime.powi(lam) / (2.0 * (1.0 - 9.0 * alpha_prime) * (1.0 - alpha_prime));

    // the region left out of the box [0, Nd) × [0, Nk) × [1, Nc) has weight at
    // most S ((9α′)^Nd + α′^Nk + 3^-(Nc-1))
    let budget = 3e-13;
    let order = |ratio: f64| -> u32 {
        if closed_form == 0.0 || ratio == 0.0 {
            1
        } else {
            ((budget / closed_form).ln() / ratio.ln()).ceil().max(1.0) as u32
        }
    };
    let nd = order(9.0 * alpha_prime);
    let nk = order(alpha_prime);
    let nc = order(1.0 / 3.0) + 1;
    let tail_bound = closed_form
        * ((9.0 * alpha_prime).powi(nd as i32) + alpha_prime.powi(nk as i32) + 3f64.powi(-(nc as i32 - 1)));

    // the summand regrouped by index: (27 w)^{n_d} (3 w)^{|Λ| + k} 3^{-c}, w = α′/3
    let w = alpha_prime / 3.0;
    let mut acc = 0.0f64;
    let mut comp = 0.0f64;
    // smallest terms first, Neumaier-compensated
    for d in (0..nd).rev() {
        let a = (27.0 * w).powi(d as i32);
        for kk in (0..nk).rev() {
            let b = (3.0 * w).powi((lambda_size + kk) as i32);
            for c in (1..nc).rev() {
                let t = a * b * 3f64.powi(-(c as i32));
                let s = acc + t;
                comp += if acc.abs() >= t.abs() { (acc - s) + t } else { (t - s) + acc };
                acc = s;
            }
        }
    }
    let brute = acc + comp;
    Ok(PeierlsBound {
        closed_form,
        brute_sum: k * brute,
        tail_bound,
        truncation: (nd, nk, nc),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub sigma: f64,
    pub conditions: Vec<ConditionCheck>,
    pub all_hold: bool,
}

/// The three smallness conditions on `(α₀, σ₁)` against `σ^γ / (4γ)`.
pub fn check_convergence_conditions<T: Scalar>(ledger: &ConstantsLedger<T>, sigma: f64) -> Result<ConvergenceReport> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::domain("sigma", format!("must lie in (0, 1), got {sigma}")));
    }
    let alpha0 = ledger.alpha0.as_f64();
    let lambda0 = ledger.lambda0.as_f64();
    let ratio = ledger.d0.as_f64() / (1.0 - lambda0);
    let gamma = ledger.gamma as f64;
    let target = sigma.powi(ledger.gamma as i32) / (4.0 * gamma);
    let third = (2.0 * ratio * (lambda0 + ratio) * ledger.sigma1.as_f64()).sqrt();
    let conditions = vec![
        ConditionCheck {
            name: "alpha0 < 1/81",
            lhs: alpha0,
            rhs: 1.0 / 81.0,
            holds: alpha0 < 1.0 / 81.0,
        },
        ConditionCheck {
            name: "18 sqrt(alpha0) < sigma^gamma / (4 gamma)",
            lhs: 18.0 * alpha0.sqrt(),
            rhs: target,
            holds: 18.0 * alpha0.sqrt() < target,
        },
        ConditionCheck {
            name: "sqrt(2 D0/(1-lambda0) (lambda0 + D0/(1-lambda0)) sigma1) < sigma^gamma / (4 gamma)",
            lhs: third,
            rhs: target,
            holds: third < target,
        },
    ];
    let all_hold = conditions.iter().all(|c| c.holds);
    Ok(ConvergenceReport {
        sigma,
        conditions,
        all_hold,
    })
}

pub const LEDGER_CSV_HEADER: &str = "s_or_kappa,eps,e_eps,lambda0,d0,lambda1,d1,alpha0,theta0,k0,alpha_prime,eps0,c,varsigma,gamma,n_window,sigma1,kappa_above_108,alpha0_below_1_27,alpha0_below_1_81,theta0_above_d0_bound";

impl<T: Scalar> ConstantsLedger<T> {
    pub fn csv_row(&self) -> String {
        let r = |x: T| x.as_f64().to_string();
        let o = |x: Option<T>| x.map_or_else(String::new, r);
        [
            r(self.kappa),
            r(self.eps),
            r(self.e_eps),
            r(self.lambda0),
            r(self.d0),
            r(self.lambda1),
            r(self.d1),
            r(self.alpha0),
            r(self.theta0),
            o(self.k0),
            r(self.alpha_prime),
            o(self.eps0),
            r(self.c),
            r(self.varsigma),
            self.gamma.to_string(),
            self.n_window.to_string(),
            r(self.sigma1),
            self.flags.kappa_above_108.to_string(),
            self.flags.alpha0_below_1_27.to_string(),
            self.flags.alpha0_below_1_81.to_string(),
            self.flags.theta0_above_d0_bound.to_string(),
        ]
        .join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn params(eps: f64) -> LedgerParams<f64> {
        LedgerParams {
            eps,
            c: 1.0,
            varsigma: 0.9,
            gamma: 4,
            n_window: 2,
            alpha: 0.0,
            decay_source: DecaySource::UserOverride,
        }
    }

    fn b(s: u64) -> PiecewiseExpandingMap<f64> {
        PiecewiseExpandingMap::bernoulli(s).unwrap()
    }

    #[test]
    fn ledger_s250() {
        let l = compute_ledger(&b(250), &params(1e-4)).unwrap();
        assert_relative_eq!(l.e_eps, 2e-4, max_relative = 1e-10);
        assert_relative_eq!(l.lambda1, 0.0162, max_relative = 1e-10);
        assert_relative_eq!(l.d1, 4.0, max_relative = 1e-12);
        // hand evaluation: ½ (0.0162 + √(0.0162² + 0.0016))
        let hand = 0.5 * (0.0162 + (0.0162f64 * 0.0162 + 2.0 * 4.0 * 2e-4).sqrt());
        assert_relative_eq!(l.alpha0, hand, max_relative = 1e-10);
        assert!((l.alpha0 - 0.029678).abs() < 1e-6);
        assert!((l.theta0 - 296.78).abs() < 1e-2);
        assert!((l.k0.unwrap() - 2.762).abs() < 1e-3);
        assert!(l.flags.alpha0_below_1_27 && l.flags.kappa_above_108);
        assert_relative_eq!(l.theta0 * l.e_eps, 2.0 * l.alpha0, max_relative = 1e-12);
    }

    #[test]
    fn ledger_zero_eps_limit() {
        for s in [109u64, 250, 1000, 4] {
            let mut p = params(0.0);
            p.varsigma = 0.99;
            let l = compute_ledger(&b(s), &p).unwrap();
            assert_eq!(l.alpha0, 4.0 / s as f64);
            assert!(l.theta0.is_infinite());
        }
    }

    #[test]
    fn ledger_outside_regime() {
        let l = compute_ledger(&b(4), &params(0.1)).unwrap();
        assert!((l.alpha0 - 1.4718).abs() < 1e-4);
        assert!(l.k0.is_none());
        assert!(l.eps0.is_none());
        assert!(!l.flags.alpha0_below_1_27);
        let json = serde_json::to_value(&l).unwrap();
        assert!(json["k0"].is_null());
        let l0 = compute_ledger(&b(4), &params(0.0)).unwrap();
        assert_eq!(serde_json::to_value(&l0).unwrap()["theta0"], "inf");
    }

    #[test]
    fn ledger_rejects_bad_params() {
        let m = b(250);
        let mut p = params(1e-4);
        p.n_window = 4;
        assert!(compute_ledger(&m, &p).is_err());
        let mut p = params(1e-4);
        p.varsigma = 0.001;
        assert!(compute_ledger(&m, &p).is_err());
        assert!(compute_ledger(&m, &params(1.5)).is_err());
    }

    #[test]
    fn epsilon0_threshold() {
        let e = solve_epsilon0(&b(109), 1.0 / 27.0).unwrap();
        assert!(e > 0.0);
        let m = b(250);
        let e = solve_epsilon0(&m, 1.0 / 27.0).unwrap();
        assert!(alpha0_at(&m, e - 1e-9).unwrap() < 1.0 / 27.0);
        assert!(alpha0_at(&m, e + 1e-9).unwrap() >= 1.0 / 27.0);
        for s in [108u64, 50, 3] {
            assert!(matches!(solve_epsilon0(&b(s), 1.0 / 27.0), Err(Error::NoThreshold { .. })));
        }
    }

    #[test]
    fn peierls_examples() {
        let p = peierls_series_bound(0.05, 2, 1.0).unwrap();
        assert_relative_eq!(p.closed_form, 0.0025 / (2.0 * 0.55 * 0.95), max_relative = 1e-14);
        assert!((p.closed_form - p.brute_sum).abs() <= p.tail_bound + 1e-12);
        assert!(p.tail_bound < 1e-12);
        let z = peierls_series_bound(0.0, 3, 1.0).unwrap();
        assert_eq!(z.closed_form, 0.0);
        assert_eq!(z.brute_sum, 0.0);
        let e = peierls_series_bound(0.05, 0, 1.0).unwrap();
        assert!((e.closed_form - 0.95694).abs() < 1e-5);
        assert!((e.closed_form - e.brute_sum).abs() <= e.tail_bound + 1e-12);
        assert!(matches!(peierls_series_bound(1.0 / 9.0, 1, 1.0), Err(Error::Divergent { .. })));
    }

    #[test]
    fn peierls_grid_up_to_011() {
        for i in 1..=11 {
            let ap = i as f64 / 100.0;
            for lam in 0..=4 {
                let p = peierls_series_bound(ap, lam, 1.0).unwrap();
                assert!(p.tail_bound < 1e-12);
                assert!((p.closed_form - p.brute_sum).abs() <= p.tail_bound + 1e-12, "{ap} {lam} {p:?}");
            }
        }
    }

    #[test]
    fn convergence_conditions() {
        let mut l = compute_ledger(&b(250), &params(1e-4)).unwrap();
        let r = check_convergence_conditions(&l, 0.5).unwrap();
        assert_eq!(r.conditions.len(), 3);
        assert!(!r.conditions[0].holds);
        assert!(!r.all_hold);
        l.alpha0 = 0.02;
        assert!(!check_convergence_conditions(&l, 0.9).unwrap().conditions[0].holds);
        assert!(check_convergence_conditions(&l, 1.0).is_err());
    }

    #[test]
    fn sigma1_decoupling_limit() {
        let l = compute_ledger(&b(1000), &params(0.0)).unwrap();
        let ratio = l.d0 / (1.0 - l.lambda0);
        let expected = 2.0 * ratio * (l.lambda0.powi(2) + l.lambda0.powi(4) + 1.0 * 0.9f64.powi(2));
        assert_relative_eq!(l.sigma1, expected, max_relative = 1e-14);
    }

    #[test]
    fn fitted_pair_is_admissible() {
        let m = b(4);
        let (c, vs) = fitted_decay_pair(&m).unwrap();
        assert!(c > 0.0 && vs > 0.5 && vs < 1.0);
    }

    proptest! {
        #[test]
        fn alpha0_monotone(e1 in 0.0f64..0.1, e2 in 0.0f64..0.1, s in 3u64..400) {
            let m = b(s);
            let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
            prop_assert!(alpha0_at(&m, lo).unwrap() <= alpha0_at(&m, hi).unwrap() * (1.0 + 1e-15));
        }

        #[test]
        fn peierls_random(ap in 0.0f64..0.105, lam in 0u32..5) {
            let p = peierls_series_bound(ap, lam, 1.0).unwrap();
            prop_assert!((p.closed_form - p.brute_sum).abs() <= p.tail_bound + 1e-12);
        }

        #[test]
        fn k0_reevaluated(eps in 0.0f64..1e-3) {
            let l = compute_ledger(&b(1000), &params(eps)).unwrap();
            if let Some(k0) = l.k0 {
                let a = l.alpha0;
                prop_assert!((k0 - 1.0 / (2.0 * (1.0 - 27.0 * a) * (1.0 - 3.0 * a))).abs() <= 1e-12 * k0);
            }
        }
    }
}
