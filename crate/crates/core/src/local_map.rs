//! Piecewise expanding single-site maps on `[-1, 1]`.
//!
//! A map is a list of affine branches on half-open intervals `(ζ_i, ζ_{i+1}]`
//! (the first branch also owns `-1`). Both halves `[-1, 0]` and `(0, 1]` are
//! invariant and the negative half is the unit translate of the positive one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Exact, Scalar, SiteValue, EXACT_DENOMINATOR};

/// `x -> slope * x + intercept` on one branch interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineBranch<T> {
    pub slope: T,
    pub intercept: T,
}

impl<T: Scalar> AffineBranch<T> {
    #[inline]
    pub fn apply(&self, x: T) -> T {
        self.slope * x + self.intercept
    }

    #[inline]
    pub fn inverse(&self, y: T) -> T {
        (y - self.intercept) / self.slope
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapFamily {
    /// `x -> s x mod 1` on `(0, 1]` with the top convention, translated to `[-1, 0]`.
    Bernoulli { s: u64 },
    Explicit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseExpandingMap<T> {
    breakpoints: Vec<T>,
    branches: Vec<AffineBranch<T>>,
    family: MapFamily,
    /// Upper bound on `|τ''/(τ')²|`; zero for affine branches.
    curvature_bound: T,
}

/// Structural constants of a map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConstants<T> {
    pub kappa: T,
    pub lambda0: T,
    pub d0: T,
    pub min_branch_length: T,
    pub n_branches: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
    pub branch: usize,
}

impl<T: Scalar> Interval<T> {
    pub fn len(&self) -> T {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

/// `τ⁻¹(-ε, 0] ∪ τ⁻¹(1-ε, 1]`, one interval per branch that meets it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceptionalSet<T> {
    pub eps: T,
    pub intervals: Vec<Interval<T>>,
    pub measure: T,
}

impl<T: Scalar> PiecewiseExpandingMap<T> {
    /// The slope-`s` Bernoulli map: on `(0, 1]`, `τ(x) = s x - (⌈s x⌉ - 1)`,
    /// and `τ(x) = τ(x + 1) - 1` on `[-1, 0]`.
    pub fn bernoulli(s: u64) -> Result<Self> {
        if s < 3 {
            return Err(Error::domain("s", format!("slope must be at least 3 (kappa > 2), got {s}")));
        }
        let st = T::lit(s as f64);
        let mut breakpoints = Vec::with_capacity(2 * s as usize + 1);
        let mut branches = Vec::with_capacity(2 * s as usize);
        for k in 0..s {
            breakpoints.push(T::lit(k as f64) / st - T::one());
        }
        for k in 0..=s {
            breakpoints.push(T::lit(k as f64) / st);
        }
        breakpoints[0] = -T::one();
        breakpoints[s as usize] = T::zero();
        breakpoints[2 * s as usize] = T::one();
        // negative half: τ(x) = s (x + 1) - (k - 1) - 1
        for k in 1..=s {
            branches.push(AffineBranch {
                slope: st,
                intercept: st - T::lit(k as f64),
            });
        }
        for k in 1..=s {
            branches.push(AffineBranch {
                slope: st,
                intercept: -T::lit((k - 1) as f64),
            });
        }
        Ok(Self {
            breakpoints,
            branches,
            family: MapFamily::Bernoulli { s },
            curvature_bound: T::zero(),
        })
    }

    /// Builds a map from explicit affine branches, checking every structural
    /// assumption (expansion, invariant halves, translation symmetry).
    pub fn from_affine(breakpoints: Vec<T>, slopes: Vec<T>, intercepts: Vec<T>) -> Result<Self> {
        let n = slopes.len();
        if n < 2 || intercepts.len() != n || breakpoints.len() != n + 1 {
            return Err(Error::InvalidMap(format!(
                "need N >= 2 branches with N slopes, N intercepts and N+1 breakpoints; got {} / {} / {}",
                slopes.len(),
                intercepts.len(),
                breakpoints.len()
            )));
        }
        let tol = T::lit(1e-9);
        if (breakpoints[0] + T::one()).abs() > tol || (breakpoints[n] - T::one()).abs() > tol {
            return Err(Error::InvalidMap("breakpoints must start at -1 and end at 1".into()));
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidMap("breakpoints must be strictly increasing".into()));
        }
        let zero_at = breakpoints
            .iter()
            .position(|z| z.abs() <= tol)
            .ok_or_else(|| Error::InvalidMap("0 must be a breakpoint (invariant halves)".into()))?;
        let mut breakpoints = breakpoints;
        breakpoints[0] = -T::one();
        breakpoints[n] = T::one();
        breakpoints[zero_at] = T::zero();

        let branches: Vec<_> = slopes
            .iter()
            .zip(&intercepts)
            .map(|(&slope, &intercept)| AffineBranch { slope, intercept })
            .collect();
        let kappa = branches.iter().map(|b| b.slope.abs()).fold(T::infinity(), T::min);
        if !(kappa > T::lit(2.0)) {
            return Err(Error::InvalidMap(format!("kappa = inf |τ'| must exceed 2, got {kappa}")));
        }
        for (i, b) in branches.iter().enumerate() {
            let (l, r) = (breakpoints[i], breakpoints[i + 1]);
            let (yl, yr) = (b.apply(l), b.apply(r));
            let (lo, hi) = if i < zero_at { (-T::one(), T::zero()) } else { (T::zero(), T::one()) };
            if yl < lo - tol || yl > hi + tol || yr < lo - tol || yr > hi + tol {
                return Err(Error::InvalidMap(format!(
                    "branch {i} maps ({l}, {r}] outside its half [{lo}, {hi}]"
                )));
            }
        }
        if zero_at * 2 != n {
            return Err(Error::InvalidMap("both halves must carry the same number of branches".into()));
        }
        for i in 0..zero_at {
            let (neg, pos) = (branches[i], branches[zero_at + i]);
            let shifted = breakpoints[zero_at + i] - T::one();
            let shifted_r = breakpoints[zero_at + i + 1] - T::one();
            let expected_intercept = pos.slope + pos.intercept - T::one();
            if (breakpoints[i] - shifted).abs() > tol
                || (breakpoints[i + 1] - shifted_r).abs() > tol
                || (neg.slope - pos.slope).abs() > tol
                || (neg.intercept - expected_intercept).abs() > tol
            {
                return Err(Error::InvalidMap(format!(
                    "branch {i} breaks the symmetry τ(x - 1) = τ(x) - 1"
                )));
            }
        }
        Ok(Self {
            breakpoints,
            branches,
            family: MapFamily::Explicit,
            curvature_bound: T::zero(),
        })
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn branches(&self) -> &[AffineBranch<T>] {
        &self.branches
    }

    pub fn family(&self) -> MapFamily {
        self.family
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// Index of the first branch of the positive half.
    pub fn positive_offset(&self) -> usize {
        self.branches.len() / 2
    }

    /// Interval `(ζ_i, ζ_{i+1}]` of branch `i`.
    pub fn branch_interval(&self, i: usize) -> (T, T) {
        (self.breakpoints[i], self.breakpoints[i + 1])
    }

    /// Branch owning `x`. The half is decided by the exact sign of `x`; within
    /// a half, points within tolerance of a breakpoint go to the branch whose
    /// interval is closed there (the left one).
    pub fn branch_index(&self, x: T) -> usize {
        let half = self.positive_offset();
        let (start, end) = if x > T::zero() { (half, self.branches.len()) } else { (0, half) };
        let tol = T::breakpoint_tol();
        // right endpoints of the branches in this half
        let rights = &self.breakpoints[start + 1..=end];
        let k = rights.partition_point(|&z| z + tol < x);
        start + k.min(end - start - 1)
    }

    /// `τ(x)`. Total on `[-1, 1]` and sign preserving.
    pub fn eval(&self, x: T) -> T {
        let i = self.branch_index(x);
        let y = self.branches[i].apply(x);
        if x > T::zero() {
            y.min(T::one()).max(T::min_positive_value())
        } else {
            y.max(-T::one()).min(T::zero())
        }
    }

    pub fn constants(&self) -> MapConstants<T> {
        let kappa = self.branches.iter().map(|b| b.slope.abs()).fold(T::infinity(), T::min);
        let min_len = match self.family {
            MapFamily::Bernoulli { s } => T::one() / T::lit(s as f64),
            MapFamily::Explicit => self
                .breakpoints
                .windows(2)
                .map(|w| w[1] - w[0])
                .fold(T::infinity(), T::min),
        };
        MapConstants {
            kappa,
            lambda0: T::lit(2.0) / kappa,
            d0: T::lit(2.0) / (kappa * min_len) + self.curvature_bound,
            min_branch_length: min_len,
            n_branches: self.branches.len(),
        }
    }

    /// `E_ε = τ⁻¹(-ε, 0] ∪ τ⁻¹(1-ε, 1]`.
    pub fn exceptional_set(&self, eps: T) -> Result<ExceptionalSet<T>> {
        if !(eps >= T::zero() && eps <= T::one()) {
            return Err(Error::domain("eps", format!("must lie in [0, 1], got {eps}")));
        }
        let half = self.positive_offset();
        let tol = T::breakpoint_tol();
        let mut intervals = Vec::new();
        let mut lengths = Vec::new();
        for (i, b) in self.branches.iter().enumerate() {
            let (l, r) = self.branch_interval(i);
            let (w_lo, w_hi) = if i >= half { (T::one() - eps, T::one()) } else { (-eps, T::zero()) };
            let (a, c) = (b.inverse(w_lo), b.inverse(w_hi));
            let (pre_lo, pre_hi) = if a <= c { (a, c) } else { (c, a) };
            let lo = pre_lo.max(l);
            let hi = pre_hi.min(r);
            if hi > lo {
                // eps / |slope| minus the overhang, rather than hi - lo,
                // which cancels badly near the breakpoints
                let clip = |d: T| if d > tol { d } else { T::zero() };
                let over = clip(pre_hi - r) + clip(l - pre_lo);
                let len = (eps / b.slope.abs() - over).max(T::zero());
                lengths.push(len);
                intervals.push(Interval { lo, hi, branch: i });
            }
        }
        let measure = lengths.iter().fold(T::zero(), |acc, &x| acc + x);
        Ok(ExceptionalSet {
            eps,
            intervals,
            measure,
        })
    }

    /// `τ ∘ τ` as a refined piecewise affine map.
    pub fn compose_square(&self) -> Self {
        let tol = T::breakpoint_tol();
        let mut breakpoints = vec![-T::one()];
        let mut branches = Vec::new();
        for (i, inner) in self.branches.iter().enumerate() {
            let (l, r) = self.branch_interval(i);
            let (y_l, y_r) = (inner.apply(l), inner.apply(r));
            let (y_lo, y_hi) = if y_l <= y_r { (y_l, y_r) } else { (y_r, y_l) };
            let mut cuts: Vec<T> = self
                .breakpoints
                .iter()
                .filter(|&&z| z > y_lo + tol && z < y_hi - tol)
                .map(|&z| inner.inverse(z))
                .collect();
            cuts.push(l);
            cuts.push(r);
            cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cuts"));
            for w in cuts.windows(2) {
                let (x0, x1) = (w[0], w[1]);
                if x1 - x0 <= tol {
                    continue;
                }
                let y_mid = inner.apply((x0 + x1) / T::lit(2.0));
                let outer = self.branches[self.branch_index(y_mid)];
                branches.push(AffineBranch {
                    slope: outer.slope * inner.slope,
                    intercept: outer.slope * inner.intercept + outer.intercept,
                });
                breakpoints.push(x1);
            }
        }
        let n = breakpoints.len() - 1;
        breakpoints[n] = T::one();
        if let Some(z) = breakpoints.iter_mut().find(|z| z.abs() <= tol) {
            *z = T::zero();
        }
        let family = match self.family {
            MapFamily::Bernoulli { s } => MapFamily::Bernoulli { s: s * s },
            MapFamily::Explicit => MapFamily::Explicit,
        };
        Self {
            breakpoints,
            branches,
            family,
            curvature_bound: self.curvature_bound,
        }
    }

    /// Converts the coefficients to another float type.
    pub fn cast<U: Scalar>(&self) -> PiecewiseExpandingMap<U> {
        PiecewiseExpandingMap {
            breakpoints: self.breakpoints.iter().map(|&z| U::lit(z.as_f64())).collect(),
            branches: self
                .branches
                .iter()
                .map(|b| AffineBranch {
                    slope: U::lit(b.slope.as_f64()),
                    intercept: U::lit(b.intercept.as_f64()),
                })
                .collect(),
            family: self.family,
            curvature_bound: U::lit(self.curvature_bound.as_f64()),
        }
    }
}

/// Single-site dynamics acting on a site representation `S`.
pub trait LocalDynamics<S: SiteValue>: Sync {
    fn apply(&self, x: S) -> S;
}

impl<T: Scalar + SiteValue> LocalDynamics<T> for PiecewiseExpandingMap<T> {
    #[inline]
    fn apply(&self, x: T) -> T {
        self.eval(x)
    }
}

/// The Bernoulli family evaluated exactly on [`Exact`] values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactBernoulli {
    s: u64,
}

impl ExactBernoulli {
    pub fn new(s: u64) -> Result<Self> {
        if s < 3 {
            return Err(Error::domain("s", format!("slope must be at least 3, got {s}")));
        }
        if s > (1 << 40) {
            return Err(Error::domain("s", "slope too large for exact evaluation"));
        }
        Ok(Self { s })
    }

    pub fn for_map<T: Scalar>(map: &PiecewiseExpandingMap<T>) -> Result<Self> {
        match map.family() {
            MapFamily::Bernoulli { s } => Self::new(s),
            MapFamily::Explicit => Err(Error::Unsupported(
                "exact evaluation needs a Bernoulli-family map".into(),
            )),
        }
    }

    pub fn slope(&self) -> u64 {
        self.s
    }

    /// `u ∈ [1, Q]` (the value `u/Q ∈ (0, 1]`) to `s u - (⌈s u / Q⌉ - 1) Q`.
    #[inline]
    fn positive_branch(&self, u: u64) -> u64 {
        let q = EXACT_DENOMINATOR as u128;
        let su = self.s as u128 * u as u128;
        // float estimate of ⌈su / q⌉, corrected exactly below
        let mut k = ((su as f64) / (q as f64)).ceil() as u128;
        while k > 0 && (k - 1) * q >= su {
            k -= 1;
        }
        while k * q < su {
            k += 1;
        }
        (su - (k - 1) * q) as u64
    }
}

impl LocalDynamics<Exact> for ExactBernoulli {
    #[inline]
    fn apply(&self, x: Exact) -> Exact {
        let n = x.numer();
        if n > 0 {
            Exact::from_numer(self.positive_branch(n as u64) as i64)
        } else {
            let u = n + EXACT_DENOMINATOR;
            if u == 0 {
                Exact::MINUS_ONE
            } else {
                Exact::from_numer(self.positive_branch(u as u64) as i64 - EXACT_DENOMINATOR)
            }
        }
    }
}

/// JSON map description: `{"family":"bernoulli","s":4}` or explicit
/// `{"breakpoints":[..],"slopes":[..],"intercepts":[..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSpec {
    Family { family: FamilyName, s: u64 },
    Explicit {
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Bernoulli,
}

impl MapSpec {
    pub fn bernoulli(s: u64) -> Self {
        MapSpec::Family {
            family: FamilyName::Bernoulli,
            s,
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<PiecewiseExpandingMap<T>> {
        match self {
            MapSpec::Family { s, .. } => PiecewiseExpandingMap::bernoulli(*s),
            MapSpec::Explicit {
                breakpoints,
                slopes,
                intercepts,
            } => {
                let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<_>>();
                PiecewiseExpandingMap::from_affine(conv(breakpoints), conv(slopes), conv(intercepts))
            }
        }
    }

    pub fn from_map<T: Scalar>(map: &PiecewiseExpandingMap<T>) -> Self {
        match map.family() {
            MapFamily::Bernoulli { s } => MapSpec::bernoulli(s),
            MapFamily::Explicit => MapSpec::Explicit {
                breakpoints: map.breakpoints().iter().map(|z| z.as_f64()).collect(),
                slopes: map.branches().iter().map(|b| b.slope.as_f64()).collect(),
                intercepts: map.branches().iter().map(|b| b.intercept.as_f64()).collect(),
            },
        }
    }
}
