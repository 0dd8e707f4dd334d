//! Scalar types.
//!
//! Real-valued math (maps, densities, constants) is generic over [`Scalar`],
//! implemented for `f32` and `f64`. Lattice site values are generic over
//! [`SiteValue`], which additionally covers [`Exact`], a fixed-denominator
//! rational used for long orbits of integer-slope maps.
//!
//! Binary floating point cannot iterate `x -> s x mod 1` faithfully when `s` is
//! a power of two: every step shifts `log2 s` mantissa bits out and the orbit
//! collapses onto the fixed point `1` after a few dozen steps. `Exact` stores
//! `x = n / Q` with `Q` a safe prime, so multiplication by an integer slope is
//! exact and the orbit is a genuine (very long) periodic orbit of the real map.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, Sub};

use num_traits::{Float, FromPrimitive, NumCast};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumCast + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("finite scalar")
    }

    /// Absolute tolerance for breakpoint classification: `1e-12`, or a few
    /// ulps of one when the type is coarser than that.
    fn breakpoint_tol() -> Self {
        let four_eps = Self::epsilon() * Self::lit(4.0);
        Self::lit(1e-12).max(four_eps)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Denominator of [`Exact`]: the largest safe prime `p < 2^61` with
/// `p = 3 (mod 8)`. Every residue other than `0, ±1` has multiplicative order
/// at least `(p - 1) / 2`.
pub const EXACT_DENOMINATOR: i64 = 2_305_843_009_213_691_579;

/// A real number in `[-1, 1]` stored exactly as `numer / EXACT_DENOMINATOR`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Exact(i64);

impl Exact {
    pub const ZERO: Exact = Exact(0);
    pub const ONE: Exact = Exact(EXACT_DENOMINATOR);
    pub const MINUS_ONE: Exact = Exact(-EXACT_DENOMINATOR);

    pub const fn from_numer(numer: i64) -> Self {
        Exact(numer)
    }

    pub const fn numer(self) -> i64 {
        self.0
    }

    /// Nearest representable value to `x`, computed through the exact dyadic
    /// expansion of `x` so that `0`, `±1`, `±1/2` map exactly.
    pub fn from_real(x: f64) -> Self {
        let scale = (1u64 << 53) as f64;
        let m = (x * scale).round() as i128;
        let q = EXACT_DENOMINATOR as i128;
        let prod = m * q;
        let half = 1i128 << 52;
        let n = if prod >= 0 {
            (prod + half) >> 53
        } else {
            -((-prod + half) >> 53)
        };
        Exact(n as i64)
    }

    pub fn to_real(self) -> f64 {
        self.0 as f64 / EXACT_DENOMINATOR as f64
    }
}

impl Add for Exact {
    type Output = Exact;
    fn add(self, rhs: Exact) -> Exact {
        Exact(self.0 + rhs.0)
    }
}

impl Sub for Exact {
    type Output = Exact;
    fn sub(self, rhs: Exact) -> Exact {
        Exact(self.0 - rhs.0)
    }
}

impl Display for Exact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.to_real())
    }
}

/// Value stored at a lattice site.
///
/// The coupling only needs addition, subtraction, the constants `0` and `1`,
/// and an order, so every implementor evaluates it without rounding beyond
/// what the type itself does.
pub trait SiteValue:
    Copy + PartialOrd + Debug + Send + Sync + Add<Output = Self> + Sub<Output = Self> + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_real(x: f64) -> Self;
    fn to_real(self) -> f64;

    /// Uniform sample from `(0, 1]` (positive) or `(-1, 0]` (negative).
    fn uniform_half<R: Rng + ?Sized>(rng: &mut R, positive: bool) -> Self;

    #[inline]
    fn is_positive(self) -> bool {
        self > Self::ZERO
    }
}

macro_rules! float_site_value {
    ($t:ty) => {
        impl SiteValue for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_real(x: f64) -> Self {
                x as $t
            }
            fn to_real(self) -> f64 {
                self as f64
            }
            fn uniform_half<R: Rng + ?Sized>(rng: &mut R, positive: bool) -> Self {
                // random() is uniform on [0, 1)
                let u: $t = rng.random();
                if positive {
                    1.0 - u
                } else {
                    -u
                }
            }
        }
    };
}

float_site_value!(f32);
float_site_value!(f64);

impl SiteValue for Exact {
    const ZERO: Self = Exact(0);
    const ONE: Self = Exact(EXACT_DENOMINATOR);
    fn from_real(x: f64) -> Self {
        Exact::from_real(x)
    }
    fn to_real(self) -> f64 {
        Exact::to_real(self)
    }
    fn uniform_half<R: Rng + ?Sized>(rng: &mut R, positive: bool) -> Self {
        if positive {
            Exact(rng.random_range(1..=EXACT_DENOMINATOR))
        } else {
            Exact(-rng.random_range(0..EXACT_DENOMINATOR))
        }
    }
}

/// Which site representation a simulation uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKind {
    /// Fixed-denominator rational; requires an integer-slope map.
    #[default]
    Exact,
    F64,
    F32,
}
