//! Coupled map lattices of piecewise expanding interval maps on a ring.
//!
//! The lattice couples each site to its right neighbour so that the sign
//! field behaves like Stavskaya's probabilistic cellular automaton. The crate
//! covers the local map, the lattice dynamics, the transfer operator on
//! piecewise-linear densities, product measures, the constants ledger with
//! its Peierls bound, cluster geometry, and Monte Carlo ensembles.
//!
//! Numerical code is generic over the scalar (`f32`, `f64`); lattice orbits
//! can also run on [`Exact`], a fixed-denominator rational that keeps
//! Bernoulli orbits from collapsing onto dyadic cycles as binary floats do.

pub mod error;
pub mod local_map;
pub mod scalar;
pub mod lattice;
pub mod transfer;
pub mod measures;
pub mod constants;
pub mod clusters;
pub mod montecarlo;

pub use error::{Error, Result};
pub use local_map::{ExactBernoulli, LocalDynamics, MapSpec, PiecewiseExpandingMap};
pub use scalar::{Exact, Scalar, ScalarKind, SiteValue};
pub use lattice::{CouplingParams, LatticeState, SignField};
pub use transfer::{BVNorms, Half, PiecewiseLinearDensity};
pub use measures::ProductMeasureSpec;
pub use constants::{ConstantsLedger, LedgerParams, PeierlsBound};
pub use clusters::{Cluster, OuterPath};
pub use montecarlo::{EnsembleConfig, InitialCondition, ObservableSeries};

pub type Map64 = PiecewiseExpandingMap<f64>;
pub type Map32 = PiecewiseExpandingMap<f32>;
pub type Density64 = PiecewiseLinearDensity<f64>;
pub type Density32 = PiecewiseLinearDensity<f32>;
pub type Ledger64 = ConstantsLedger<f64>;
pub type LedgerParams64 = LedgerParams<f64>;
pub type Measure64 = ProductMeasureSpec<f64>;
pub type State64 = LatticeState<f64>;
pub type State32 = LatticeState<f32>;
pub type ExactState = LatticeState<Exact>;
