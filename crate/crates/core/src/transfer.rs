//! Perron-Frobenius operator of an affine piecewise expanding map acting
//! exactly on piecewise linear densities.
//!
//! BV convention: the variation of `h` is taken for its extension by zero to
//! the whole line, so it counts the jumps at `±1` as well as every interior
//! jump (including the one at `0`). `‖h‖_BV = Var(h) + ‖h‖_1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_map::PiecewiseExpandingMap;
use crate::scalar::Scalar;

/// `h(x) = slope_i x + offset_i` on `(breakpoints[i], breakpoints[i+1])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearDensity<T> {
    breakpoints: Vec<T>,
    slopes: Vec<T>,
    offsets: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BVNorms<T> {
    pub l1: T,
    /// Variation of the extension by zero to `R`.
    pub variation: T,
    /// Variation on the open interval `(-1, 1)` only.
    pub interior_variation: T,
    pub bv: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    Negative,
    Positive,
}

impl Half {
    pub fn bounds<T: Scalar>(self) -> (T, T) {
        match self {
            Half::Negative => (-T::one(), T::zero()),
            Half::Positive => (T::zero(), T::one()),
        }
    }
}

const MERGE_TOL: f64 = 1e-13;
const MAX_PIECES: usize = 1 << 20;

impl<T: Scalar> PiecewiseLinearDensity<T> {
    pub fn new(breakpoints: Vec<T>, slopes: Vec<T>, offsets: Vec<T>) -> Result<Self> {
        let k = slopes.len();
        if k == 0 || offsets.len() != k || breakpoints.len() != k + 1 {
            return Err(Error::InvalidDensity(format!(
                "need k >= 1 pieces with k slopes, k offsets and k+1 breakpoints; got {} / {} / {}",
                slopes.len(),
                offsets.len(),
                breakpoints.len()
            )));
        }
        if breakpoints[0] != -T::one() || breakpoints[k] != T::one() {
            return Err(Error::InvalidDensity("pieces must tile [-1, 1]".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDensity("breakpoints must be strictly increasing".into()));
        }
        if slopes.iter().chain(&offsets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("coefficients must be finite".into()));
        }
        Ok(Self {
            breakpoints,
            slopes,
            offsets,
        })
    }

    pub fn constant(value: T) -> Self {
        Self {
            breakpoints: vec![-T::one(), T::one()],
            slopes: vec![T::zero()],
            offsets: vec![value],
        }
    }

    /// `value · 1_{(lo, hi)}`.
    pub fn indicator(lo: T, hi: T, value: T) -> Result<Self> {
        if !(lo >= -T::one() && hi <= T::one() && lo < hi) {
            return Err(Error::InvalidDensity(format!("bad indicator interval ({lo}, {hi})")));
        }
        let mut bp = vec![-T::one()];
        let mut sl = Vec::new();
        let mut of = Vec::new();
        if lo > -T::one() {
            bp.push(lo);
            sl.push(T::zero());
            of.push(T::zero());
        }
        bp.push(hi);
        sl.push(T::zero());
        of.push(value);
        if hi < T::one() {
            bp.push(T::one());
            sl.push(T::zero());
            of.push(T::zero());
        }
        Self::new(bp, sl, of)
    }

    /// Lebesgue probability density on one half.
    pub fn uniform_half(half: Half) -> Self {
        let (lo, hi) = half.bounds::<T>();
        Self::indicator(lo, hi, T::one()).expect("half is a valid interval")
    }

    pub fn breakpoints(&self) -> &[T] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[T] {
        &self.slopes
    }

    pub fn offsets(&self) -> &[T] {
        &self.offsets
    }

    pub fn n_pieces(&self) -> usize {
        self.slopes.len()
    }

    fn piece_value(&self, i: usize, x: T) -> T {
        self.slopes[i] * x + self.offsets[i]
    }

    /// Value at `x`, using the piece closed on the right.
    pub fn eval(&self, x: T) -> T {
        let k = self.n_pieces();
        let i = self.breakpoints[1..].partition_point(|&b| b < x).min(k - 1);
        self.piece_value(i, x)
    }

    pub fn integral(&self) -> T {
        let two = T::lit(2.0);
        (0..self.n_pieces())
            .map(|i| {
                let (a, b) = (self.breakpoints[i], self.breakpoints[i + 1]);
                self.slopes[i] * (b * b - a * a) / two + self.offsets[i] * (b - a)
            })
            .sum()
    }

    pub fn l1(&self) -> T {
        (0..self.n_pieces())
            .map(|i| {
                let (a, b) = (self.breakpoints[i], self.breakpoints[i + 1]);
                abs_linear_integral(self.piece_value(i, a), self.piece_value(i, b), b - a)
            })
            .sum()
    }

    pub fn bv_norms(&self) -> BVNorms<T> {
        let k = self.n_pieces();
        let mut interior = T::zero();
        for i in 0..k {
            interior = interior + self.slopes[i].abs() * (self.breakpoints[i + 1] - self.breakpoints[i]);
            if i + 1 < k {
                let z = self.breakpoints[i + 1];
                interior = interior + (self.piece_value(i + 1, z) - self.piece_value(i, z)).abs();
            }
        }
        let ends = self.piece_value(0, -T::one()).abs() + self.piece_value(k - 1, T::one()).abs();
        let variation = interior + ends;
        let l1 = self.l1();
        BVNorms {
            l1,
            variation,
            interior_variation: interior,
            bv: variation + l1,
        }
    }

    pub fn scale(&self, c: T) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            slopes: self.slopes.iter().map(|&m| m * c).collect(),
            offsets: self.offsets.iter().map(|&q| q * c).collect(),
        }
    }

    /// `a · self + b · other` on the common refinement.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Self {
        let mut bp: Vec<T> = self.breakpoints.iter().chain(&other.breakpoints).copied().collect();
        bp.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));
        let bp = dedup_close(bp);
        let mut slopes = Vec::with_capacity(bp.len() - 1);
        let mut offsets = Vec::with_capacity(bp.len() - 1);
        for w in bp.windows(2) {
            let mid = (w[0] + w[1]) / T::lit(2.0);
            let i = self.piece_at(mid);
            let j = other.piece_at(mid);
            slopes.push(a * self.slopes[i] + b * other.slopes[j]);
            offsets.push(a * self.offsets[i] + b * other.offsets[j]);
        }
        merge_equal(bp, slopes, offsets)
    }

    fn piece_at(&self, x: T) -> usize {
        self.breakpoints[1..]
            .partition_point(|&b| b <= x)
            .min(self.n_pieces() - 1)
    }

    /// Mass supported on the half `(lo, hi)`.
    pub fn mass_on(&self, half: Half) -> T {
        let (lo, hi) = half.bounds::<T>();
        let two = T::lit(2.0);
        (0..self.n_pieces())
            .map(|i| {
                let a = self.breakpoints[i].max(lo);
                let b = self.breakpoints[i + 1].min(hi);
                if b > a {
                    self.slopes[i] * (b * b - a * a) / two + self.offsets[i] * (b - a)
                } else {
                    T::zero()
                }
            })
            .sum()
    }

    /// Inverse of the cumulative distribution of a nonnegative density with
    /// positive mass, evaluated at `u ∈ [0, 1]`.
    pub fn inverse_cdf(&self, u: T) -> T {
        let total = self.integral();
        let target = u.max(T::zero()).min(T::one()) * total;
        let two = T::lit(2.0);
        let mut acc = T::zero();
        for i in 0..self.n_pieces() {
            let (a, b) = (self.breakpoints[i], self.breakpoints[i + 1]);
            let (m, q) = (self.slopes[i], self.offsets[i]);
            let mass = m * (b * b - a * a) / two + q * (b - a);
            if acc + mass >= target && mass > T::zero() {
                // solve m/2 (x² - a²) + q (x - a) = target - acc for x ∈ [a, b]
                let r = target - acc;
                let ha = m * a + q;
                let x = if m.abs() <= T::epsilon() {
                    a + r / ha
                } else {
                    let disc = (ha * ha + two * m * r).max(T::zero());
                    a + two * r / (ha + disc.sqrt())
                };
                return x.max(a).min(b);
            }
            acc = acc + mass;
        }
        T::one()
    }
}

/// `∫_0^w |f|` for `f` linear with end values `fa`, `fb`.
fn abs_linear_integral<T: Scalar>(fa: T, fb: T, w: T) -> T {
    let two = T::lit(2.0);
    if (fa >= T::zero()) == (fb >= T::zero()) || fa == T::zero() || fb == T::zero() {
        (fa.abs() + fb.abs()) * w / two
    } else {
        (fa * fa + fb * fb) / (two * (fa.abs() + fb.abs())) * w
    }
}

fn dedup_close<T: Scalar>(sorted: Vec<T>) -> Vec<T> {
    let tol = T::lit(MERGE_TOL).max(T::epsilon() * T::lit(4.0));
    let mut out: Vec<T> = Vec::with_capacity(sorted.len());
    for z in sorted {
        match out.last() {
            Some(&last) if z - last <= tol => {
                // keep the exact endpoints of [-1, 1]
                if z.abs() == T::one() {
                    *out.last_mut().expect("nonempty") = z;
                }
            }
            _ => out.push(z),
        }
    }
    out
}

fn merge_equal<T: Scalar>(bp: Vec<T>, slopes: Vec<T>, offsets: Vec<T>) -> PiecewiseLinearDensity<T> {
    let mut nb = vec![bp[0]];
    let mut ns: Vec<T> = Vec::new();
    let mut no: Vec<T> = Vec::new();
    for i in 0..slopes.len() {
        if let (Some(&ls), Some(&lo)) = (ns.last(), no.last()) {
            if ls == slopes[i] && lo == offsets[i] {
                *nb.last_mut().expect("nonempty") = bp[i + 1];
                continue;
            }
        }
        ns.push(slopes[i]);
        no.push(offsets[i]);
        nb.push(bp[i + 1]);
    }
    PiecewiseLinearDensity {
        breakpoints: nb,
        slopes: ns,
        offsets: no,
    }
}

/// `P_τ h`, exact up to floating point.
pub fn apply_transfer<T: Scalar>(
    map: &PiecewiseExpandingMap<T>,
    h: &PiecewiseLinearDensity<T>,
) -> Result<PiecewiseLinearDensity<T>> {
    // each contribution: (y_lo, y_hi, slope, offset) in the image variable
    let mut contrib: Vec<(T, T, T, T)> = Vec::new();
    let mut cuts = vec![-T::one(), T::zero(), T::one()];
    for (bi, br) in map.branches().iter().enumerate() {
        let (l, r) = map.branch_interval(bi);
        let (a, c) = (br.slope, br.intercept);
        let start = h.breakpoints[1..].partition_point(|&z| z <= l);
        for j in start..h.n_pieces() {
            let u = h.breakpoints[j].max(l);
            let v = h.breakpoints[j + 1].min(r);
            if v <= u {
                if h.breakpoints[j] >= r {
                    break;
                }
                continue;
            }
            let (ya, yb) = (a * u + c, a * v + c);
            let (ylo, yhi) = if ya <= yb { (ya, yb) } else { (yb, ya) };
            let inv_abs = T::one() / a.abs();
            let m = h.slopes[j] / a * inv_abs;
            let q = (h.offsets[j] - h.slopes[j] * c / a) * inv_abs;
            contrib.push((ylo, yhi, m, q));
            cuts.push(ylo);
            cuts.push(yhi);
        }
    }
    cuts.retain(|z| z.abs() <= T::one());
    cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite images"));
    let bp = dedup_close(cuts);
    if bp.len() > MAX_PIECES {
        return Err(Error::BudgetExceeded(format!("transfer image has {} pieces", bp.len() - 1)));
    }
    let k = bp.len() - 1;
    let mut slopes = vec![T::zero(); k];
    let mut offsets = vec![T::zero(); k];
    let tol = T::lit(MERGE_TOL).max(T::epsilon() * T::lit(4.0));
    for &(ylo, yhi, m, q) in &contrib {
        // pieces whose midpoint lies in (ylo, yhi)
        let first = bp.partition_point(|&z| z < ylo - tol);
        let mut i = first.saturating_sub(1);
        while i < k {
            let mid = (bp[i] + bp[i + 1]) / T::lit(2.0);
            if mid >= yhi {
                break;
            }
            if mid > ylo {
                slopes[i] = slopes[i] + m;
                offsets[i] = offsets[i] + q;
            }
            i += 1;
        }
    }
    Ok(merge_equal(bp, slopes, offsets))
}

pub fn apply_transfer_n<T: Scalar>(
    map: &PiecewiseExpandingMap<T>,
    h: &PiecewiseLinearDensity<T>,
    m: usize,
) -> Result<PiecewiseLinearDensity<T>> {
    let mut g = h.clone();
    for _ in 0..m {
        g = apply_transfer(map, &g)?;
    }
    Ok(g)
}

/// Iteration controls for [`invariant_density`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 10_000,
        }
    }
}

/// The invariant probability density concentrated on `half`, by iterating
/// `P` from Lebesgue measure on that half.
pub fn invariant_density<T: Scalar>(
    map: &PiecewiseExpandingMap<T>,
    half: Half,
    opts: FixedPointOptions,
) -> Result<PiecewiseLinearDensity<T>> {
    let tol = T::lit(opts.tolerance);
    let mut h = PiecewiseLinearDensity::uniform_half(half);
    let mut residual = T::infinity();
    for _ in 0..opts.max_iterations {
        let next = apply_transfer(map, &h)?;
        let next = next.scale(T::one() / next.integral());
        residual = next.combine(T::one(), &h, -T::one()).l1();
        h = next;
        if residual <= tol {
            return Ok(h);
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual: residual.as_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LasotaYorkeReport<T> {
    pub m: usize,
    pub lhs: T,
    pub rhs: T,
    pub holds: bool,
}

/// Evaluates `‖P^m h‖_BV ≤ λ₀^m ‖h‖_BV + D₀/(1-λ₀) ‖h‖_1`.
pub fn lasota_yorke_check<T: Scalar>(
    map: &PiecewiseExpandingMap<T>,
    h: &PiecewiseLinearDensity<T>,
    m: usize,
) -> Result<LasotaYorkeReport<T>> {
    if m == 0 {
        return Err(Error::domain("m", "must be at least 1"));
    }
    let c = map.constants();
    let pm = apply_transfer_n(map, h, m)?;
    let lhs = pm.bv_norms().bv;
    let n = h.bv_norms();
    let rhs = c.lambda0.powi(m as i32) * n.bv + c.d0 / (T::one() - c.lambda0) * n.l1;
    Ok(LasotaYorkeReport {
        m,
        lhs,
        rhs,
        holds: lhs <= rhs + T::lit(1e-9),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit<T> {
    /// Smallest constant with `r_m ≤ c ς^m` for every sample and `m`.
    pub c: T,
    /// Reported rate, never below `λ₀ (1 + 1e-6)`.
    pub varsigma: T,
    /// Least-squares rate of the normalized residuals before the floor.
    pub raw_rate: T,
    /// Number of residuals above the noise floor used in the fit.
    pub points: usize,
    /// Normalized residuals `‖P^m h - (∫h) h_*‖_1 / ‖h‖_BV`, one row per sample.
    pub residuals: Vec<Vec<T>>,
}

/// Fits `‖P^m h - (∫h) h_*‖_1 ≤ c ς^m ‖h‖_BV` over the samples, `h_*` being
/// the invariant density of the half carrying each sample. Residuals are
/// exact L¹ norms of piecewise linear differences.
pub fn estimate_decay<T: Scalar>(
    map: &PiecewiseExpandingMap<T>,
    samples: &[PiecewiseLinearDensity<T>],
    m_max: usize,
) -> Result<DecayFit<T>> {
    if m_max < 2 {
        return Err(Error::domain("m_max", "must be at least 2"));
    }
    let opts = FixedPointOptions::default();
    let h_neg = invariant_density(map, Half::Negative, opts)?;
    let h_pos = invariant_density(map, Half::Positive, opts)?;
    let floor = T::lit(1e-13);
    let mut residuals = Vec::with_capacity(samples.len());
    let (mut sx, mut sy, mut sxx, mut sxy, mut npts) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for h in samples {
        let neg = h.mass_on(Half::Negative);
        let pos = h.mass_on(Half::Positive);
        let target = if pos.abs() > T::zero() && neg.abs() > T::zero() {
            return Err(Error::InvalidDensity("decay samples must be supported on one half".into()));
        } else if pos.abs() > T::zero() {
            h_pos.scale(h.integral())
        } else {
            h_neg.scale(h.integral())
        };
        let bv = h.bv_norms().bv;
        let mut row = Vec::with_capacity(m_max);
        let mut g = h.clone();
        for m in 1..=m_max {
            g = apply_transfer(map, &g)?;
            let r = g.combine(T::one(), &target, -T::one()).l1() / bv;
            if r > floor {
                let (x, y) = (m as f64, r.as_f64().ln());
                sx += x;
                sy += y;
                sxx += x * x;
                sxy += x * y;
                npts += 1;
            }
            row.push(r);
        }
        residuals.push(row);
    }
    let lambda0 = map.constants().lambda0;
    let raw_rate = if npts >= 2 {
        let n = npts as f64;
        let denom = n * sxx - sx * sx;
        if denom.abs() < 1e-300 {
            0.0
        } else {
            ((n * sxy - sx * sy) / denom).exp()
        }
    } else {
        0.0
    };
    if raw_rate >= 1.0 {
        return Err(Error::NotMixing { rate: raw_rate });
    }
    let varsigma = T::lit(raw_rate).max(lambda0 * T::lit(1.0 + 1e-6));
    let c = residuals
        .iter()
        .flat_map(|row| row.iter().enumerate().map(|(i, &r)| r / varsigma.powi(i as i32 + 1)))
        .fold(T::zero(), T::max);
    Ok(DecayFit {
        c,
        varsigma,
        raw_rate: T::lit(raw_rate),
        points: npts,
        residuals,
    })
}

/// Ulam discretization on `bins` equal cells of `[-1, 1]`: entry `(i, j)` is
/// the fraction of cell `i` mapped into cell `j`. Row-major, row-stochastic.
pub fn ulam_matrix<T: Scalar>(map: &PiecewiseExpandingMap<T>, bins: usize) -> Result<Vec<T>> {
    if bins < 2 || bins % 2 != 0 {
        return Err(Error::domain("bins", "must be an even number >= 2"));
    }
    let w = T::lit(2.0) / T::lit(bins as f64);
    let edge = |k: usize| -T::one() + w * T::lit(k as f64);
    let mut mat = vec![T::zero(); bins * bins];
    for i in 0..bins {
        let (a, b) = (edge(i), edge(i + 1));
        for (bi, br) in map.branches().iter().enumerate() {
            let (l, r) = map.branch_interval(bi);
            let (u, v) = (a.max(l), b.min(r));
            if v <= u {
                continue;
            }
            let (ya, yb) = (br.apply(u), br.apply(v));
            let (ylo, yhi) = if ya <= yb { (ya, yb) } else { (yb, ya) };
            let span = yhi - ylo;
            let j0 = ((ylo + T::one()) / w).floor().to_usize().unwrap_or(0).min(bins - 1);
            for j in j0..bins {
                let (ca, cb) = (edge(j), edge(j + 1));
                if ca >= yhi {
                    break;
                }
                let overlap = yhi.min(cb) - ylo.max(ca);
                if overlap > T::zero() {
                    mat[i * bins + j] = mat[i * bins + j] + overlap / span * (v - u) / w;
                }
            }
        }
    }
    Ok(mat)
}
