//! Log-linear decay fits over a signal-to-noise window.

use serde::{Deserialize, Serialize};

use super::observables::{Estimate, ObservableSeries};
use crate::error::{Error, Result};

/// Fewest significant points accepted by a fit.
pub const MIN_FIT_POINTS: usize = 4;

/// `|C(d)| ≈ A e^{-rate · d}` fitted on `log |C(d)|`. Empirical only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub rate_stderr: f64,
    /// 95% interval for the rate.
    pub rate_ci: (f64, f64),
    pub log_amplitude: f64,
    pub r2: f64,
    /// Distances or lags used: those with `|C| > 3 stderr`.
    pub window: Vec<usize>,
    /// `rate > 0` and `r2 > 0.9`.
    pub decay_confirmed: bool,
}

/// Fits the points `i ≥ first` whose magnitude exceeds three standard errors.
pub fn fit_log_linear(values: &[Estimate], first: usize) -> Result<DecayFit> {
    let window: Vec<usize> = (first..values.len())
        .filter(|&i| {
            let e = values[i];
            e.stderr.is_finite() && e.value != 0.0 && e.value.abs() > 3.0 * e.stderr
        })
        .collect();
    if window.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientSignal {
            points: window.len(),
            needed: MIN_FIT_POINTS,
        });
    }
    let xs: Vec<f64> = window.iter().map(|&i| i as f64).collect();
    let ys: Vec<f64> = window.iter().map(|&i| values[i].value.abs().ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_se = (ss_res / (n - 2.0) / sxx).sqrt();
    let rate = -slope;
    Ok(DecayFit {
        rate,
        rate_stderr: slope_se,
        rate_ci: (rate - 1.96 * slope_se, rate + 1.96 * slope_se),
        log_amplitude: intercept,
        r2,
        window,
        decay_confirmed: rate > 0.0 && r2 > 0.9,
    })
}

/// Decay of the stationary spatial correlation `C(d)`.
pub fn fit_spatial_decay(series: &ObservableSeries) -> Result<DecayFit> {
    if series.spatial.len() < 9 {
        return Err(Error::domain("d_max", "spatial fits need d_max >= 8"));
    }
    fit_log_linear(&series.spatial, 0)
}

/// Decay of the stationary autocorrelation `A(k)`.
pub fn fit_temporal_decay(series: &ObservableSeries) -> Result<DecayFit> {
    if series.temporal.len() < 9 {
        return Err(Error::domain("max_lag", "temporal fits need max_lag >= 8"));
    }
    fit_log_linear(&series.temporal, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(value: f64, stderr: f64) -> Estimate {
        Estimate { value, stderr }
    }

    #[test]
    fn recovers_exact_exponential() {
        let v: Vec<Estimate> = (0..10).map(|d| est(0.3 * (-0.7 * d as f64).exp(), 1e-6)).collect();
        let f = fit_log_linear(&v, 0).unwrap();
        assert!((f.rate - 0.7).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(f.decay_confirmed);
        assert_eq!(f.window.len(), 10);
    }

    #[test]
    fn noise_points_leave_the_window() {
        let mut v: Vec<Estimate> = (0..10).map(|d| est((-(d as f64)).exp(), 1e-3)).collect();
        v[8] = est(1e-4, 1e-3);
        v[9] = est(-2e-4, 1e-3);
        let f = fit_log_linear(&v, 0).unwrap();
        // e^{-6} < 3e-3, so the window stops at d = 5
        assert_eq!(f.window, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_points() {
        let v = vec![est(1.0, 0.01), est(0.1, 0.01), est(0.001, 0.01), est(0.0, 0.0)];
        assert_eq!(
            fit_log_linear(&v, 0),
            Err(Error::InsufficientSignal { points: 2, needed: 4 })
        );
        let nan = vec![est(1.0, f64::NAN); 6];
        assert!(fit_log_linear(&nan, 0).is_err());
    }
}
