//! Sign-row accumulators and their reduction to order parameters and
//! connected correlations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::fit::DecayFit;

/// A ring of signs packed into 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitRow {
    len: usize,
    words: Vec<u64>,
}

impl BitRow {
    pub fn from_signs<I: IntoIterator<Item = bool>>(signs: I) -> Self {
        let mut words = Vec::new();
        let mut len = 0;
        for (i, s) in signs.into_iter().enumerate() {
            if i % 64 == 0 {
                words.push(0);
            }
            if s {
                words[i / 64] |= 1 << (i % 64);
            }
            len = i + 1;
        }
        Self { len, words }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, p: usize) -> bool {
        self.words[p / 64] >> (p % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// `Σ_p σ_p τ_p`.
    pub fn and_count(&self, other: &BitRow) -> u64 {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as u64).sum()
    }

    /// `Σ_p σ_p σ_{p+d mod L}` for `d = 0..=d_max`.
    pub fn shifted_pair_counts(&self, d_max: usize) -> Vec<u64> {
        let doubled = self.doubled();
        let n = self.words.len();
        let tail = self.len % 64;
        let last_mask = if tail == 0 { u64::MAX } else { (1u64 << tail) - 1 };
        (0..=d_max)
            .map(|d| {
                let d = d % self.len;
                (0..n)
                    .map(|i| {
                        let shifted = extract(&doubled, i * 64 + d);
                        let mask = if i + 1 == n { last_mask } else { u64::MAX };
                        (self.words[i] & shifted & mask).count_ones() as u64
                    })
                    .sum()
            })
            .collect()
    }

    /// The bit string concatenated with itself, plus one spare word.
    fn doubled(&self) -> Vec<u64> {
        let mut out = vec![0u64; (2 * self.len).div_ceil(64) + 1];
        for rep in 0..2 {
            for p in 0..self.len {
                if self.get(p) {
                    let q = rep * self.len + p;
                    out[q / 64] |= 1 << (q % 64);
                }
            }
        }
        out
    }
}

fn extract(words: &[u64], pos: usize) -> u64 {
    let (w, off) = (pos / 64, pos % 64);
    let lo = words.get(w).copied().unwrap_or(0);
    if off == 0 {
        lo
    } else {
        let hi = words.get(w + 1).copied().unwrap_or(0);
        (lo >> off) | (hi << (64 - off))
    }
}

/// What a replica accumulates; all integer so reductions are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccumulatorShape {
    pub len: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub d_max: usize,
    pub max_lag: usize,
    pub spatial: bool,
    pub temporal: bool,
}

#[derive(Clone, Debug)]
pub struct Accumulator {
    shape: AccumulatorShape,
    positive: Vec<u64>,
    window_rows: u64,
    window_pos: u64,
    spatial_pairs: Vec<u64>,
    initial_pos: u64,
    initial_pairs: Vec<u64>,
    history: VecDeque<BitRow>,
    temporal_pairs: Vec<u64>,
    temporal_rows: Vec<u64>,
}

impl Accumulator {
    pub fn new(shape: AccumulatorShape) -> Self {
        Self {
            shape,
            positive: Vec::with_capacity(shape.horizon + 1),
            window_rows: 0,
            window_pos: 0,
            spatial_pairs: vec![0; shape.d_max + 1],
            initial_pos: 0,
            initial_pairs: vec![0; shape.d_max + 1],
            history: VecDeque::with_capacity(shape.max_lag + 1),
            temporal_pairs: vec![0; shape.max_lag + 1],
            temporal_rows: vec![0; shape.max_lag + 1],
        }
    }

    /// Feeds the signs at time `t`; rows must arrive in order `t = 0, 1, ...`.
    pub fn push(&mut self, t: usize, row: &BitRow) {
        debug_assert_eq!(t, self.positive.len());
        let ones = row.count_ones();
        self.positive.push(ones);
        if t == 0 && self.shape.spatial {
            self.initial_pos = ones;
            self.initial_pairs = row.shifted_pair_counts(self.shape.d_max);
        }
        if t < self.shape.burn_in {
            return;
        }
        self.window_rows += 1;
        self.window_pos += ones;
        if self.shape.spatial {
            for (acc, c) in self.spatial_pairs.iter_mut().zip(row.shifted_pair_counts(self.shape.d_max)) {
                *acc += c;
            }
        }
        if self.shape.temporal {
            self.temporal_pairs[0] += ones;
            self.temporal_rows[0] += 1;
            for (k, past) in self.history.iter().enumerate() {
                self.temporal_pairs[k + 1] += row.and_count(past);
                self.temporal_rows[k + 1] += 1;
            }
            if self.shape.max_lag > 0 {
                if self.history.len() == self.shape.max_lag {
                    self.history.pop_back();
                }
                self.history.push_front(row.clone());
            }
        }
    }
}

/// An estimate with its standard error across replicas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub size: usize,
    pub horizon: usize,
    pub replicas: usize,
    pub burn_in: usize,
    /// `ρ⁺_t` for `t = 0..=horizon`.
    pub rho: Vec<Estimate>,
    /// Time average of `ρ⁺_t` over `burn_in..=horizon`.
    pub stationary_rho: Estimate,
    /// Connected `C(d)`, `d = 0..=d_max`, over the stationary window.
    pub spatial: Vec<Estimate>,
    /// Connected `C(d)` of the initial configurations.
    pub initial_spatial: Vec<Estimate>,
    /// Connected `A(k)`, `k = 0..=max_lag`, over the stationary window.
    pub temporal: Vec<Estimate>,
    pub spatial_fit: Option<DecayFit>,
    pub temporal_fit: Option<DecayFit>,
}

fn mean_stderr(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    let mean = pairwise_sum(values) / n;
    let stderr = if values.len() < 2 {
        f64::NAN
    } else {
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        (pairwise_sum(&dev) / (n - 1.0) / n).sqrt()
    };
    Estimate { value: mean, stderr }
}

pub(crate) fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Connected estimator with the pooled mean; the standard error comes from
/// the spread of per-replica connected estimates.
fn connected(pairs: &[Vec<u64>], pos: &[u64], samples: &[Vec<u64>]) -> Vec<Estimate> {
    let k = pairs.first().map_or(0, Vec::len);
    (0..k)
        .map(|d| {
            let total_pairs: u64 = pairs.iter().map(|p| p[d]).sum();
            let total_samples: u64 = samples.iter().map(|s| s[d]).sum();
            let total_pos: u64 = pos.iter().sum();
            let total_base: u64 = samples.iter().map(|s| s[0]).sum();
            if total_samples == 0 || total_base == 0 {
                return Estimate {
                    value: f64::NAN,
                    stderr: f64::NAN,
                };
            }
            let rho = total_pos as f64 / total_base as f64;
            let value = total_pairs as f64 / total_samples as f64 - rho * rho;
            let per: Vec<f64> = (0..pairs.len())
                .filter(|&r| samples[r][d] > 0)
                .map(|r| {
                    let rr = pos[r] as f64 / samples[r][0] as f64;
                    pairs[r][d] as f64 / samples[r][d] as f64 - rr * rr
                })
                .collect();
            Estimate {
                value,
                stderr: mean_stderr(&per).stderr,
            }
        })
        .collect()
}

/// Combines replica accumulators in replica order.
pub fn reduce(accs: &[Accumulator], replicas: usize) -> ObservableSeries {
    let shape = accs[0].shape;
    let l = shape.len as f64;
    let rho = (0..=shape.horizon)
        .map(|t| {
            let v: Vec<f64> = accs.iter().map(|a| a.positive[t] as f64 / l).collect();
            mean_stderr(&v)
        })
        .collect();
    let per_window: Vec<f64> = accs
        .iter()
        .map(|a| a.window_pos as f64 / (a.window_rows as f64 * l))
        .collect();
    let stationary_rho = mean_stderr(&per_window);
    let lu = shape.len as u64;

    let (spatial, initial_spatial) = if shape.spatial {
        let pairs: Vec<Vec<u64>> = accs.iter().map(|a| a.spatial_pairs.clone()).collect();
        let pos: Vec<u64> = accs.iter().map(|a| a.window_pos).collect();
        let samples: Vec<Vec<u64>> = accs.iter().map(|a| vec![a.window_rows * lu; shape.d_max + 1]).collect();
        let ipairs: Vec<Vec<u64>> = accs.iter().map(|a| a.initial_pairs.clone()).collect();
        let ipos: Vec<u64> = accs.iter().map(|a| a.initial_pos).collect();
        let isamples: Vec<Vec<u64>> = accs.iter().map(|_| vec![lu; shape.d_max + 1]).collect();
        (
            connected(&pairs, &pos, &samples),
            connected(&ipairs, &ipos, &isamples),
        )
    } else {
        (Vec::new(), Vec::new())
    };
    let temporal = if shape.temporal {
        let pairs: Vec<Vec<u64>> = accs.iter().map(|a| a.temporal_pairs.clone()).collect();
        let pos: Vec<u64> = accs.iter().map(|a| a.window_pos).collect();
        let samples: Vec<Vec<u64>> = accs
            .iter()
            .map(|a| a.temporal_rows.iter().map(|&r| r * lu).collect())
            .collect();
        connected(&pairs, &pos, &samples)
    } else {
        Vec::new()
    };
    ObservableSeries {
        size: shape.len,
        horizon: shape.horizon,
        replicas,
        burn_in: shape.burn_in,
        rho,
        stationary_rho,
        spatial,
        initial_spatial,
        temporal,
        spatial_fit: None,
        temporal_fit: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_pairs(s: &[bool], d_max: usize) -> Vec<u64> {
        let l = s.len();
        (0..=d_max)
            .map(|d| (0..l).filter(|&p| s[p] && s[(p + d) % l]).count() as u64)
            .collect()
    }

    #[test]
    fn connected_correlation_of_alternating_ring() {
        let row = BitRow::from_signs((0..8).map(|p| p % 2 == 0));
        let shape = AccumulatorShape {
            len: 8,
            horizon: 0,
            burn_in: 0,
            d_max: 2,
            max_lag: 0,
            spatial: true,
            temporal: true,
        };
        let mut acc = Accumulator::new(shape);
        acc.push(0, &row);
        let s = reduce(&[acc], 1);
        assert_eq!(s.spatial[0].value, 0.25);
        assert_eq!(s.spatial[1].value, -0.25);
        assert_eq!(s.spatial[2].value, 0.25);
        assert_eq!(s.temporal[0].value, 0.25);
        assert_eq!(s.stationary_rho.value, 0.5);
    }

    #[test]
    fn temporal_pairs_by_hand() {
        let shape = AccumulatorShape {
            len: 4,
            horizon: 3,
            burn_in: 1,
            d_max: 0,
            max_lag: 2,
            spatial: false,
            temporal: true,
        };
        let rows = [
            [true, true, true, true],
            [true, false, true, false],
            [true, true, false, false],
            [true, false, true, false],
        ];
        let mut acc = Accumulator::new(shape);
        for (t, r) in rows.iter().enumerate() {
            acc.push(t, &BitRow::from_signs(r.iter().copied()));
        }
        // window rows 1..=3; lag 1 pairs: (2,1) -> 1, (3,2) -> 1; lag 2: (3,1) -> 2
        assert_eq!(acc.temporal_pairs, vec![6, 2, 2]);
        assert_eq!(acc.temporal_rows, vec![3, 2, 1]);
    }

    proptest! {
        #[test]
        fn packed_pair_counts_match_naive(s in proptest::collection::vec(any::<bool>(), 1..200), d_max in 0usize..70) {
            let row = BitRow::from_signs(s.iter().copied());
            prop_assert_eq!(row.count_ones(), s.iter().filter(|&&b| b).count() as u64);
            prop_assert_eq!(row.shifted_pair_counts(d_max), naive_pairs(&s, d_max));
        }

        #[test]
        fn correlation_bounded_by_variance(rows in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 16), 1..20)) {
            let shape = AccumulatorShape { len: 16, horizon: rows.len() - 1, burn_in: 0, d_max: 8, max_lag: 0, spatial: true, temporal: false };
            let mut acc = Accumulator::new(shape);
            for (t, r) in rows.iter().enumerate() {
                acc.push(t, &BitRow::from_signs(r.iter().copied()));
            }
            let s = reduce(&[acc], 1);
            for c in &s.spatial {
                prop_assert!(c.value.abs() <= s.spatial[0].value + 1e-12);
            }
        }
    }
}
