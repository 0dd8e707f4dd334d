//! End-to-end checks across modules: map to ledger, transfer operator to
//! sampler, lattice orbits to clusters, and ensemble determinism.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cmllab::clusters::{analyze_geometry, build_cluster};
use cmllab::constants::{compute_ledger, fitted_decay_pair, solve_epsilon0, DecaySource, LedgerParams};
use cmllab::lattice::record_signs;
use cmllab::montecarlo::{run_ensemble, InitialSampler};
use cmllab::transfer::{apply_transfer, invariant_density, FixedPointOptions};
use cmllab::{
    CouplingParams, Density64, EnsembleConfig, Error, Exact, ExactBernoulli, Half, InitialCondition, Map64, MapSpec,
    ScalarKind,
};

/// On (0, 1]: 4x, 3x - 1/2 (onto (1/4, 1] only), 4x - 2, 4x - 3; the
/// negative half is the translate. Its invariant densities are not uniform.
fn uneven_map() -> MapSpec {
    let pos_bp = [0.0, 0.25, 0.5, 0.75, 1.0];
    let pos = [(4.0, 0.0), (3.0, -0.5), (4.0, -2.0), (4.0, -3.0)];
    let mut breakpoints: Vec<f64> = pos_bp[..4].iter().map(|x| x - 1.0).collect();
    breakpoints.extend(pos_bp);
    let mut slopes = Vec::new();
    let mut intercepts = Vec::new();
    // τ(x) = τ(x + 1) - 1 on the negative half
    for &(a, b) in &pos {
        slopes.push(a);
        intercepts.push(a + b - 1.0);
    }
    for &(a, b) in &pos {
        slopes.push(a);
        intercepts.push(b);
    }
    MapSpec::Explicit {
        breakpoints,
        slopes,
        intercepts,
    }
}

#[test]
fn fitted_decay_feeds_a_valid_ledger() {
    let map = Map64::bernoulli(250).unwrap();
    let (c, varsigma) = fitted_decay_pair(&map).unwrap();
    let lambda0 = 2.0 / 250.0;
    assert!(varsigma > lambda0 && varsigma < 1.0);
    assert!(c > 0.0);
    let l = compute_ledger(
        &map,
        &LedgerParams {
            eps: 1e-4,
            c,
            varsigma,
            gamma: 8,
            n_window: 4,
            alpha: 0.0,
            decay_source: DecaySource::TransferFit,
        },
    )
    .unwrap();
    assert!((l.alpha0 - 0.02968).abs() < 1e-4);
    assert!((l.theta0 - 296.8).abs() < 0.1);
    assert!((l.k0.unwrap() - 2.76).abs() < 0.01);
    assert!(l.flags.kappa_above_108 && l.flags.alpha0_below_1_27 && !l.flags.alpha0_below_1_81);
    let json = serde_json::to_value(&l).unwrap();
    assert_eq!(json["decay_source"], "transfer_fit");
}

#[test]
fn threshold_straddles_the_target() {
    let map = Map64::bernoulli(250).unwrap();
    let eps0 = solve_epsilon0(&map, 1.0 / 27.0).unwrap();
    let alpha0 = |eps: f64| {
        let p = LedgerParams {
            eps,
            c: 1.0,
            varsigma: 0.5,
            gamma: 8,
            n_window: 4,
            alpha: 0.0,
            decay_source: DecaySource::UserOverride,
        };
        compute_ledger(&map, &p).unwrap().alpha0
    };
    assert!(alpha0(eps0 - 1e-9) < 1.0 / 27.0);
    assert!(alpha0(eps0 + 1e-9) > 1.0 / 27.0);
    assert!(matches!(
        solve_epsilon0(&Map64::bernoulli(108).unwrap(), 1.0 / 27.0),
        Err(Error::NoThreshold { .. })
    ));
}

#[test]
fn uneven_map_invariant_density_and_sampler() {
    let map: Map64 = uneven_map().build().unwrap();
    let h = invariant_density(&map, Half::Positive, FixedPointOptions::default()).unwrap();
    let residual = apply_transfer(&map, &h).unwrap().combine(1.0, &h, -1.0).l1();
    assert!(residual < 1e-10);
    assert!((h.integral() - 1.0).abs() < 1e-12);
    // (0, 1/4] only receives mass from the first branch
    assert!(h.eval(0.1) < h.eval(0.6));

    let sampler = InitialSampler::new(InitialCondition::AllPositiveInvariant, &uneven_map()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200_000;
    let low = (0..n)
        .map(|_| sampler.sample::<f64, _>(&mut rng))
        .filter(|&x| {
            assert!(x > 0.0 && x <= 1.0);
            x <= 0.25
        })
        .count();
    let expected = integral_between(&h, 0.0, 0.25);
    let freq = low as f64 / n as f64;
    assert!((freq - expected).abs() < 5.0 * (expected * (1.0 - expected) / n as f64).sqrt());
}

fn integral_between(h: &Density64, lo: f64, hi: f64) -> f64 {
    let bp = h.breakpoints();
    (0..h.n_pieces())
        .map(|i| {
            let (a, b) = (bp[i].max(lo), bp[i + 1].min(hi));
            if b <= a {
                return 0.0;
            }
            h.offsets()[i] * (b - a) + h.slopes()[i] * (b * b - a * a) / 2.0
        })
        .sum()
}

#[test]
fn uneven_map_runs_in_floats_only() {
    let cfg = EnsembleConfig {
        size: 32,
        horizon: 100,
        replicas: 2,
        burn_in: 10,
        d_max: 8,
        max_lag: 8,
        map: uneven_map(),
        initial: InitialCondition::Mixture { alpha: 0.3 },
        scalar: ScalarKind::F64,
        ..EnsembleConfig::default()
    };
    let s = run_ensemble(&cfg).unwrap();
    assert!(s.rho.iter().all(|e| (0.0..=1.0).contains(&e.value)));
    let exact = EnsembleConfig {
        scalar: ScalarKind::Exact,
        ..cfg
    };
    assert!(matches!(run_ensemble(&exact), Err(Error::Unsupported(_))));
}

#[test]
fn ensemble_independent_of_thread_count() {
    let cfg = EnsembleConfig {
        size: 64,
        horizon: 300,
        replicas: 7,
        seed: 99,
        eps: 0.1,
        burn_in: 50,
        d_max: 8,
        max_lag: 8,
        initial: InitialCondition::Mixture { alpha: 0.5 },
        ..EnsembleConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| serde_json::to_string(&run_ensemble(&cfg).unwrap()).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(2));
    assert_eq!(one, run(5));
}

fn random_density(rng: &mut ChaCha8Rng) -> Density64 {
    let k = rng.random_range(1..=6);
    let mut cuts: Vec<f64> = (0..k - 1).map(|_| rng.random_range(-0.99..0.99)).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut bp = vec![-1.0];
    bp.extend(cuts);
    bp.push(1.0);
    let mut slopes = Vec::new();
    let mut offsets = Vec::new();
    for w in bp.windows(2) {
        let (a, b): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        slopes.push((b - a) / (w[1] - w[0]));
        offsets.push(a - slopes.last().unwrap() * w[0]);
    }
    Density64::new(bp, slopes, offsets).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transfer_keeps_mass_on_each_half(seed in any::<u64>(), s in 3u64..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_density(&mut rng);
        let map = Map64::bernoulli(s).unwrap();
        let ph = apply_transfer(&map, &h).unwrap();
        for half in [Half::Negative, Half::Positive] {
            prop_assert!((ph.mass_on(half) - h.mass_on(half)).abs() < 1e-12);
        }
    }

    #[test]
    fn theta0_times_measure_is_twice_alpha0(eps in 1e-6f64..0.05, s in 3u64..400) {
        let map = Map64::bernoulli(s).unwrap();
        let p = LedgerParams {
            eps,
            c: 1.0,
            varsigma: 0.99,
            gamma: 8,
            n_window: 4,
            alpha: 0.0,
            decay_source: DecaySource::UserOverride,
        };
        let l = compute_ledger(&map, &p).unwrap();
        prop_assert!((l.theta0 * l.e_eps - 2.0 * l.alpha0).abs() <= 1e-12 * l.alpha0);
    }

    #[test]
    fn sampled_orbit_clusters_satisfy_contour_bounds(seed in any::<u64>(), eps in 0.0f64..0.5, n in 1usize..10) {
        let sampler = InitialSampler::new(InitialCondition::Mixture { alpha: 0.6 }, &MapSpec::bernoulli(4)).unwrap();
        let init = sampler.replica_state::<Exact>(48, seed, 0);
        let signs = record_signs(&init, &ExactBernoulli::new(4).unwrap(), &CouplingParams::new(eps).unwrap(), n);
        for p in (0..48).filter(|&p| signs.get(p, n)) {
            let c = build_cluster(&signs, &[p], n).unwrap();
            let g = analyze_geometry(&c).unwrap();
            prop_assert!(g.check().all(), "cluster at {} fails: {:?}", p, g.check());
        }
    }
}
