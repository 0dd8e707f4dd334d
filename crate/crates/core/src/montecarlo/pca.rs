//! Stavskaya's probabilistic cellular automaton and its comparison with the
//! sign process of the coupled lattice.
//!
//! A site of the automaton is positive next step if it and its right
//! neighbour are positive now; otherwise it turns positive with probability ε.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::observables::{self, Accumulator, BitRow, Estimate, ObservableSeries};
use super::{drive, finish, rng, EnsembleConfig, InitialCondition, ObservableSet, RowVisitor};
use crate::error::{Error, Result};
use crate::local_map::MapSpec;
use crate::scalar::ScalarKind;

/// One automaton step on a ring.
pub fn pca_step<R: Rng + ?Sized>(signs: &[bool], eps: f64, rng: &mut R) -> Vec<bool> {
    let n = signs.len();
    (0..n)
        .map(|p| (signs[p] && signs[(p + 1) % n]) || rng.random::<f64>() < eps)
        .collect()
}

fn initial_signs<R: Rng + ?Sized>(initial: InitialCondition, size: usize, rng: &mut R) -> Vec<bool> {
    match initial {
        InitialCondition::AllNegativeLebesgue => vec![false; size],
        InitialCondition::AllPositiveInvariant => vec![true; size],
        InitialCondition::Mixture { alpha } => (0..size).map(|_| rng.random::<f64>() < alpha).collect(),
    }
}

/// Runs the automaton with the ensemble's `L`, `T`, `R`, `ε`, seed and
/// initial sign law; the map and scalar fields are ignored.
pub fn pca_run(cfg: &EnsembleConfig) -> Result<ObservableSeries> {
    let mut check = cfg.clone();
    check.scalar = ScalarKind::F64;
    check.map = MapSpec::bernoulli(2);
    check.validate()?;
    let shape = check.shape();
    let accs: Vec<Accumulator> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut init = rng::replica_rng(cfg.seed, r as u64);
            let mut noise = rng::noise_rng(cfg.seed, r as u64);
            let mut acc = Accumulator::new(shape);
            let mut signs = initial_signs(cfg.initial, cfg.size, &mut init);
            acc.push(0, &BitRow::from_signs(signs.iter().copied()));
            for t in 1..=cfg.horizon {
                signs = pca_step(&signs, cfg.eps, &mut noise);
                acc.push(t, &BitRow::from_signs(signs.iter().copied()));
            }
            acc
        })
        .collect();
    Ok(finish(observables::reduce(&accs, cfg.replicas)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaCompareConfig {
    pub size: usize,
    pub horizon: usize,
    pub replicas: usize,
    pub seed: u64,
    pub map: MapSpec,
    pub scalar: ScalarKind,
    /// ε at which flip frequencies are measured.
    pub flip_eps: f64,
    /// Positive weight of the uniform-within-half initial mixture.
    pub flip_alpha: f64,
    /// Fewest conditional events for the flip test to count.
    pub min_events: u64,
    pub eps_grid: Vec<f64>,
    pub burn_in: usize,
}

impl Default for PcaCompareConfig {
    fn default() -> Self {
        Self {
            size: 256,
            horizon: 400,
            replicas: 16,
            seed: 0,
            map: MapSpec::bernoulli(4),
            scalar: ScalarKind::Exact,
            flip_eps: 0.05,
            flip_alpha: 0.5,
            min_events: 1_000_000,
            eps_grid: vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0],
            burn_in: 100,
        }
    }
}

impl PcaCompareConfig {
    /// Checks every ensemble the comparison will run.
    pub fn validate(&self) -> Result<()> {
        if let Some(&e) = self.eps_grid.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::domain("eps", format!("grid value {e} outside [0, 1]")));
        }
        self.ensemble(self.flip_eps, InitialCondition::Mixture { alpha: self.flip_alpha })
            .validate()
    }

    fn ensemble(&self, eps: f64, initial: InitialCondition) -> EnsembleConfig {
        EnsembleConfig {
            size: self.size,
            horizon: self.horizon,
            replicas: self.replicas,
            seed: self.seed,
            map: self.map.clone(),
            eps,
            initial,
            burn_in: self.burn_in,
            d_max: 0,
            max_lag: 0,
            observables: ObservableSet {
                spatial: false,
                temporal: false,
            },
            scalar: self.scalar,
            ..EnsembleConfig::default()
        }
    }
}

/// Frequency of `σ′_p = 1` given `σ_p σ_{p+1} = 0` in the coupled lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipStats {
    pub eps: f64,
    pub events: u64,
    pub flips: u64,
    pub frequency: f64,
    /// Binomial standard error of the frequency.
    pub stderr: f64,
    /// `max(3 stderr, 5 ε²)`.
    pub tolerance: f64,
    pub within_tolerance: bool,
    pub enough_events: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub eps: f64,
    pub cml: Estimate,
    pub pca: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathAgreement {
    pub replicas: usize,
    pub rows_compared: usize,
    pub identical: bool,
    /// First `(replica, t)` where the fields differ.
    pub first_mismatch: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaComparison {
    pub flip: FlipStats,
    /// Stationary `ρ⁺` from the all-negative start for both processes.
    pub curves: Vec<CurvePoint>,
    pub zero_eps: PathAgreement,
}

#[derive(Default)]
struct FlipCounter {
    prev: Option<BitRow>,
    events: u64,
    flips: u64,
}

impl RowVisitor for FlipCounter {
    fn visit(&mut self, _t: usize, row: &BitRow) {
        if let Some(prev) = &self.prev {
            let n = prev.len();
            for p in 0..n {
                if !(prev.get(p) && prev.get((p + 1) % n)) {
                    self.events += 1;
                    self.flips += row.get(p) as u64;
                }
            }
        }
        self.prev = Some(row.clone());
    }
}

/// Measures the conditional flip frequency of the coupled lattice.
pub fn flip_statistics(cfg: &PcaCompareConfig) -> Result<FlipStats> {
    let ens = cfg.ensemble(cfg.flip_eps, InitialCondition::Mixture { alpha: cfg.flip_alpha });
    let counters = drive(&ens, |_| FlipCounter::default())?;
    let events: u64 = counters.iter().map(|c| c.events).sum();
    let flips: u64 = counters.iter().map(|c| c.flips).sum();
    let eps = cfg.flip_eps;
    let frequency = if events > 0 { flips as f64 / events as f64 } else { f64::NAN };
    let stderr = (frequency * (1.0 - frequency) / events as f64).sqrt();
    let tolerance = (3.0 * stderr).max(5.0 * eps * eps);
    Ok(FlipStats {
        eps,
        events,
        flips,
        frequency,
        stderr,
        tolerance,
        within_tolerance: (frequency - eps).abs() <= tolerance,
        enough_events: events >= cfg.min_events,
    })
}

struct RowRecorder(Vec<BitRow>);

impl RowVisitor for RowRecorder {
    fn visit(&mut self, _t: usize, row: &BitRow) {
        self.0.push(row.clone());
    }
}

/// At ε = 0 runs the lattice, then the automaton from the lattice's own
/// initial signs, and compares the two sign fields row by row.
pub fn zero_eps_agreement(cfg: &PcaCompareConfig) -> Result<PathAgreement> {
    let ens = cfg.ensemble(0.0, InitialCondition::Mixture { alpha: cfg.flip_alpha });
    let paths = drive(&ens, |_| RowRecorder(Vec::new()))?;
    let mut rows_compared = 0;
    let mut first_mismatch = None;
    for (r, RowRecorder(rows)) in paths.iter().enumerate() {
        let mut signs: Vec<bool> = (0..cfg.size).map(|p| rows[0].get(p)).collect();
        // no noise is consumed at ε = 0
        let mut noise = rng::noise_rng(cfg.seed, r as u64);
        for (t, row) in rows.iter().enumerate() {
            if t > 0 {
                signs = pca_step(&signs, 0.0, &mut noise);
            }
            rows_compared += 1;
            if first_mismatch.is_none() && BitRow::from_signs(signs.iter().copied()) != *row {
                first_mismatch = Some((r, t));
            }
        }
    }
    Ok(PathAgreement {
        replicas: paths.len(),
        rows_compared,
        identical: first_mismatch.is_none(),
        first_mismatch,
    })
}

/// Flip statistics, stationary curves over the ε grid, and the ε = 0 path check.
pub fn compare_cml_pca(cfg: &PcaCompareConfig) -> Result<PcaComparison> {
    cfg.validate()?;
    let flip = flip_statistics(cfg)?;
    let curves = cfg
        .eps_grid
        .iter()
        .map(|&eps| {
            let ens = cfg.ensemble(eps, InitialCondition::AllNegativeLebesgue);
            Ok(CurvePoint {
                eps,
                cml: super::run_ensemble(&ens)?.stationary_rho,
                pca: pca_run(&ens)?.stationary_rho,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let zero_eps = zero_eps_agreement(cfg)?;
    Ok(PcaComparison { flip, curves, zero_eps })
}
