//! Ensemble simulation of the coupled lattice, order parameters, correlation
//! estimates, ε-scans, and the probabilistic cellular automaton it emulates.

pub mod fit;
pub mod observables;
pub mod pca;
pub mod rng;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{CouplingParams, LatticeState};
use crate::local_map::{ExactBernoulli, LocalDynamics, MapFamily, MapSpec, PiecewiseExpandingMap};
use crate::scalar::{Exact, ScalarKind, SiteValue};
use crate::transfer::{invariant_density, FixedPointOptions, Half, PiecewiseLinearDensity};

pub use fit::{fit_spatial_decay, fit_temporal_decay, DecayFit};
pub use observables::{Accumulator, AccumulatorShape, BitRow, Estimate, ObservableSeries};
pub use pca::{compare_cml_pca, pca_run, PcaCompareConfig, PcaComparison};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Lebesgue measure on `[-1, 0]` at every site.
    AllNegativeLebesgue,
    /// The invariant density `h⁺` at every site.
    AllPositiveInvariant,
    /// `α h⁺ + (1 - α) h⁻` at every site, independently.
    Mixture { alpha: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservableSet {
    pub spatial: bool,
    pub temporal: bool,
}

impl Default for ObservableSet {
    fn default() -> Self {
        Self {
            spatial: true,
            temporal: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Ring size `L`.
    pub size: usize,
    /// Number of steps `T`.
    pub horizon: usize,
    pub replicas: usize,
    pub seed: u64,
    pub map: MapSpec,
    pub eps: f64,
    pub initial: InitialCondition,
    pub burn_in: usize,
    pub d_max: usize,
    pub max_lag: usize,
    pub observables: ObservableSet,
    pub scalar: ScalarKind,
    /// Upper bound on `L · T · R`.
    pub max_site_updates: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            size: 256,
            horizon: 2000,
            replicas: 32,
            seed: 0,
            map: MapSpec::bernoulli(4),
            eps: 0.01,
            initial: InitialCondition::AllNegativeLebesgue,
            burn_in: 500,
            d_max: 16,
            max_lag: 16,
            observables: ObservableSet::default(),
            scalar: ScalarKind::Exact,
            max_site_updates: 20_000_000_000,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 4 {
            return Err(Error::domain("size", format!("ring size must be at least 4, got {}", self.size)));
        }
        if self.replicas == 0 {
            return Err(Error::domain("replicas", "need at least one replica"));
        }
        if self.burn_in >= self.horizon.max(1) && !(self.burn_in == 0 && self.horizon == 0) {
            return Err(Error::domain(
                "burn_in",
                format!("must be below the horizon {}, got {}", self.horizon, self.burn_in),
            ));
        }
        if !(0.0..=1.0).contains(&self.eps) {
            return Err(Error::domain("eps", format!("must lie in [0, 1], got {}", self.eps)));
        }
        if let InitialCondition::Mixture { alpha } = self.initial {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::domain("alpha", format!("must lie in [0, 1], got {alpha}")));
            }
        }
        if self.d_max >= self.size {
            return Err(Error::domain("d_max", "must be below the ring size"));
        }
        if self.max_lag > self.horizon {
            return Err(Error::domain("max_lag", "must not exceed the horizon"));
        }
        let updates = (self.size as u128) * (self.horizon as u128) * (self.replicas as u128);
        if updates > self.max_site_updates as u128 {
            return Err(Error::BudgetExceeded(format!(
                "L·T·R = {updates} site updates exceeds the cap {}",
                self.max_site_updates
            )));
        }
        Ok(())
    }

    fn shape(&self) -> AccumulatorShape {
        AccumulatorShape {
            len: self.size,
            horizon: self.horizon,
            burn_in: self.burn_in,
            d_max: self.d_max,
            max_lag: self.max_lag,
            spatial: self.observables.spatial,
            temporal: self.observables.temporal,
        }
    }
}

/// Consumer of the sign rows `t = 0..=T` of one replica.
pub trait RowVisitor: Send {
    fn visit(&mut self, t: usize, row: &BitRow);
}

impl RowVisitor for Accumulator {
    fn visit(&mut self, t: usize, row: &BitRow) {
        self.push(t, row);
    }
}

#[derive(Clone, Debug)]
enum HalfSampler {
    Uniform,
    Density(PiecewiseLinearDensity<f64>),
}

/// Per-site initial law: with probability `alpha` a draw from `pos`, else from `neg`.
#[derive(Clone, Debug)]
pub struct InitialSampler {
    alpha: f64,
    neg: HalfSampler,
    pos: HalfSampler,
}

impl InitialSampler {
    /// Invariant densities come from the transfer operator; for the Bernoulli
    /// family they are uniform on each half and are sampled directly.
    pub fn new(initial: InitialCondition, map: &MapSpec) -> Result<Self> {
        let m: PiecewiseExpandingMap<f64> = map.build()?;
        let invariant = |half: Half| -> Result<HalfSampler> {
            match m.family() {
                MapFamily::Bernoulli { .. } => Ok(HalfSampler::Uniform),
                MapFamily::Explicit => Ok(HalfSampler::Density(invariant_density(
                    &m,
                    half,
                    FixedPointOptions::default(),
                )?)),
            }
        };
        Ok(match initial {
            InitialCondition::AllNegativeLebesgue => Self {
                alpha: 0.0,
                neg: HalfSampler::Uniform,
                pos: HalfSampler::Uniform,
            },
            InitialCondition::AllPositiveInvariant => Self {
                alpha: 1.0,
                neg: HalfSampler::Uniform,
                pos: invariant(Half::Positive)?,
            },
            InitialCondition::Mixture { alpha } => Self {
                alpha,
                neg: invariant(Half::Negative)?,
                pos: invariant(Half::Positive)?,
            },
        })
    }

    pub fn sample<S: SiteValue, R: Rng + ?Sized>(&self, rng: &mut R) -> S {
        let positive = if self.alpha <= 0.0 {
            false
        } else if self.alpha >= 1.0 {
            true
        } else {
            rng.random::<f64>() < self.alpha
        };
        let sampler = if positive { &self.pos } else { &self.neg };
        match sampler {
            HalfSampler::Uniform => S::uniform_half(rng, positive),
            HalfSampler::Density(h) => {
                let x = h.inverse_cdf(rng.random());
                // keep the draw in its half
                let x = if positive { x.max(f64::MIN_POSITIVE) } else { x.min(0.0) };
                S::from_real(x)
            }
        }
    }

    /// The initial state of `replica`, as the ensemble draws it.
    pub fn replica_state<S: SiteValue>(&self, size: usize, seed: u64, replica: u64) -> LatticeState<S> {
        self.sample_state(size, &mut rng::replica_rng(seed, replica))
    }

    pub fn sample_state<S: SiteValue, R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> LatticeState<S> {
        let sites = (0..size).map(|_| self.sample(rng)).collect();
        LatticeState::new(sites).expect("sampled values lie in [-1, 1]")
    }
}

fn simulate_replica<S, D, V>(cfg: &EnsembleConfig, map: &D, sampler: &InitialSampler, replica: usize, visitor: &mut V) -> Result<()>
where
    S: SiteValue,
    D: LocalDynamics<S> + ?Sized,
    V: RowVisitor,
{
    let params = CouplingParams::<S>::new(cfg.eps)?;
    let mut rng = rng::replica_rng(cfg.seed, replica as u64);
    let mut state: LatticeState<S> = sampler.sample_state(cfg.size, &mut rng);
    let mut scratch = Vec::with_capacity(cfg.size);
    visitor.visit(0, &BitRow::from_signs(state.sites().iter().map(|x| x.is_positive())));
    for t in 1..=cfg.horizon {
        state.step_into(map, &params, &mut scratch);
        visitor.visit(t, &BitRow::from_signs(state.sites().iter().map(|x| x.is_positive())));
    }
    Ok(())
}

fn run_replicas<S, D, V, F>(cfg: &EnsembleConfig, map: &D, make: &F) -> Result<Vec<V>>
where
    S: SiteValue,
    D: LocalDynamics<S> + ?Sized,
    V: RowVisitor,
    F: Fn(usize) -> V + Sync,
{
    let sampler = InitialSampler::new(cfg.initial, &cfg.map)?;
    (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut v = make(r);
            simulate_replica::<S, D, V>(cfg, map, &sampler, r, &mut v)?;
            Ok(v)
        })
        .collect()
}

/// Runs every replica of the coupled lattice, feeding its sign rows to a
/// visitor from `make(replica)`. Results are in replica order.
pub fn drive<V, F>(cfg: &EnsembleConfig, make: F) -> Result<Vec<V>>
where
    V: RowVisitor,
    F: Fn(usize) -> V + Sync,
{
    cfg.validate()?;
    match cfg.scalar {
        ScalarKind::Exact => {
            let ex = ExactBernoulli::for_map(&cfg.map.build::<f64>()?)?;
            run_replicas::<Exact, _, _, _>(cfg, &ex, &make)
        }
        ScalarKind::F64 => {
            let m = cfg.map.build::<f64>()?;
            run_replicas::<f64, _, _, _>(cfg, &m, &make)
        }
        ScalarKind::F32 => {
            let m = cfg.map.build::<f32>()?;
            run_replicas::<f32, _, _, _>(cfg, &m, &make)
        }
    }
}

/// Order parameter and correlations of the ensemble, with decay fits when
/// the signal allows one.
pub fn run_ensemble(cfg: &EnsembleConfig) -> Result<ObservableSeries> {
    let shape = cfg.shape();
    let accs = drive(cfg, |_| Accumulator::new(shape))?;
    Ok(finish(observables::reduce(&accs, cfg.replicas)))
}

pub(crate) fn finish(mut series: ObservableSeries) -> ObservableSeries {
    if series.spatial.len() >= 9 {
        series.spatial_fit = fit_spatial_decay(&series).ok();
    }
    if series.temporal.len() >= 9 {
        series.temporal_fit = fit_temporal_decay(&series).ok();
    }
    series
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub eps: f64,
    pub negative_start: Estimate,
    pub positive_start: Estimate,
    /// `ρ⁺(positive start) - ρ⁺(negative start)`.
    pub gap: f64,
}

/// Stationary `ρ⁺` from both pure starts for every `ε` in the grid.
pub fn scan_epsilon(base: &EnsembleConfig, grid: &[f64]) -> Result<Vec<PhasePoint>> {
    if let Some(&e) = grid.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::domain("eps", format!("grid value {e} outside [0, 1]")));
    }
    grid.iter()
        .map(|&eps| {
            let mut cfg = base.clone();
            cfg.eps = eps;
            cfg.observables = ObservableSet {
                spatial: false,
                temporal: false,
            };
            cfg.initial = InitialCondition::AllNegativeLebesgue;
            let neg = run_ensemble(&cfg)?.stationary_rho;
            cfg.initial = InitialCondition::AllPositiveInvariant;
            let pos = run_ensemble(&cfg)?.stationary_rho;
            Ok(PhasePoint {
                eps,
                negative_start: neg,
                positive_start: pos,
                gap: pos.value - neg.value,
            })
        })
        .collect()
}
