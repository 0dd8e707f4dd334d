use cmllab::constants::{compute_ledger, fitted_decay_pair, DecaySource, LedgerParams};
use cmllab::montecarlo::run_ensemble;
use cmllab::{EnsembleConfig, Map64};

fn main() -> cmllab::Result<()> {
    let map = Map64::bernoulli(250)?;
    let (c, varsigma) = fitted_decay_pair(&map)?;
    let ledger = compute_ledger(
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
    )?;
    println!("alpha0 = {:.6}, theta0 = {:.2}", ledger.alpha0, ledger.theta0);

    let series = run_ensemble(&EnsembleConfig {
        size: 128,
        horizon: 500,
        replicas: 8,
        eps: 0.01,
        burn_in: 100,
        ..EnsembleConfig::default()
    })?;
    let rho = &series.stationary_rho;
    println!("stationary rho = {:.4} +- {:.1e}", rho.value, rho.stderr);
    Ok(())
}
