//! Ring lattice states, the coupling `Φ_ε`, the step `T = Φ_ε ∘ τ^Z` and
//! space-time sign records.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local_map::LocalDynamics;
use crate::scalar::SiteValue;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeState<S> {
    sites: Vec<S>,
    time: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams<S> {
    eps: S,
}

impl<S: SiteValue> CouplingParams<S> {
    pub fn new(eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::domain("eps", format!("must lie in [0, 1], got {eps}")));
        }
        Ok(Self { eps: S::from_real(eps) })
    }

    pub fn eps(&self) -> S {
        self.eps
    }
}

impl<S: SiteValue> LatticeState<S> {
    pub fn new(sites: Vec<S>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::InvalidState("ring must have at least one site".into()));
        }
        if let Some((p, x)) = sites
            .iter()
            .enumerate()
            .find(|(_, x)| !(-1.0..=1.0).contains(&x.to_real()))
        {
            return Err(Error::InvalidState(format!("site {p} = {x:?} outside [-1, 1]")));
        }
        Ok(Self { sites, time: 0 })
    }

    pub fn from_reals(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&x| S::from_real(x)).collect())
    }

    pub fn constant(len: usize, value: S) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn sites(&self) -> &[S] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn signs(&self) -> Vec<bool> {
        self.sites.iter().map(|x| x.is_positive()).collect()
    }

    pub fn positive_count(&self) -> usize {
        self.sites.iter().filter(|x| x.is_positive()).count()
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.sites.iter().map(|x| x.to_real()).collect()
    }

    /// `Φ_ε`, reading the right neighbour `p + 1 mod L`.
    pub fn apply_coupling(&self, params: &CouplingParams<S>) -> Self {
        let mut out = self.sites.clone();
        couple_into(&self.sites, params.eps, &mut out);
        Self {
            sites: out,
            time: self.time,
        }
    }

    /// One step of `T`.
    pub fn step<D: LocalDynamics<S> + ?Sized>(&self, map: &D, params: &CouplingParams<S>) -> Self {
        let mut next = self.clone();
        let mut scratch = Vec::with_capacity(self.len());
        next.step_into(map, params, &mut scratch);
        next
    }

    /// In-place step using `scratch` for the `τ` image.
    pub fn step_into<D: LocalDynamics<S> + ?Sized>(
        &mut self,
        map: &D,
        params: &CouplingParams<S>,
        scratch: &mut Vec<S>,
    ) {
        scratch.clear();
        scratch.extend(self.sites.iter().map(|&x| map.apply(x)));
        couple_into(scratch, params.eps, &mut self.sites);
        self.time += 1;
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for x in &self.sites {
            w.write_all(&x.to_real().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() % 8 != 0 {
            return Err(Error::Parse(format!("binary state length {} is not a multiple of 8", buf.len())));
        }
        let values: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::from_reals(&values)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_reals()).expect("finite reals serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let values: Vec<f64> = serde_json::from_str(text)?;
        Self::from_reals(&values)
    }
}

fn couple_into<S: SiteValue>(src: &[S], eps: S, dst: &mut [S]) {
    let n = src.len();
    for p in 0..n {
        let x = src[p];
        let y = src[if p + 1 == n { 0 } else { p + 1 }];
        dst[p] = if x.is_positive() {
            if y.is_positive() {
                x
            } else {
                x - S::ONE + eps
            }
        } else {
            x + eps
        };
    }
}

/// Predicted sign of site `p` after coupling, from the `τ` images of `p` and `p + 1`.
pub fn coupled_sign<S: SiteValue>(tx: S, ty: S, eps: S) -> bool {
    let both = tx.is_positive() && ty.is_positive();
    let top_window = tx > S::ONE - eps && tx <= S::ONE && !ty.is_positive();
    let zero_window = tx > S::ZERO - eps && tx <= S::ZERO;
    both || top_window || zero_window
}

/// Space-time record of signs, row `t` holding the signs at time `t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignField {
    width: usize,
    rows: usize,
    bits: Vec<bool>,
}

impl SignField {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            rows: 0,
            bits: Vec::new(),
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidState("sign rows must be nonempty and of equal length".into()));
        }
        let mut f = Self::new(width);
        for r in rows {
            f.push_row(r);
        }
        Ok(f)
    }

    pub fn push_row(&mut self, row: &[bool]) {
        assert_eq!(row.len(), self.width, "row width mismatch");
        self.bits.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of recorded times, `n + 1`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Last recorded time `n`.
    pub fn horizon(&self) -> usize {
        self.rows.saturating_sub(1)
    }

    pub fn row(&self, t: usize) -> &[bool] {
        &self.bits[t * self.width..(t + 1) * self.width]
    }

    /// Sign at `(p, t)`; `p` is reduced modulo the ring width.
    #[inline]
    pub fn get(&self, p: i64, t: usize) -> bool {
        let w = self.width as i64;
        self.bits[t * self.width + p.rem_euclid(w) as usize]
    }

    /// One line per time: runs such as `12+3-49+`.
    pub fn to_rle(&self) -> String {
        let mut out = String::new();
        for t in 0..self.rows {
            let row = self.row(t);
            let mut i = 0;
            while i < row.len() {
                let v = row[i];
                let start = i;
                while i < row.len() && row[i] == v {
                    i += 1;
                }
                out.push_str(&format!("{}{}", i - start, if v { '+' } else { '-' }));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_rle(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut row = Vec::new();
            let mut count = String::new();
            for ch in line.trim().chars() {
                match ch {
                    '0'..='9' => count.push(ch),
                    '+' | '-' => {
                        let k: usize = count
                            .parse()
                            .map_err(|_| Error::Parse(format!("missing run length in `{line}`")))?;
                        row.extend(std::iter::repeat_n(ch == '+', k));
                        count.clear();
                    }
                    _ => return Err(Error::Parse(format!("unexpected `{ch}` in sign RLE"))),
                }
            }
            if !count.is_empty() {
                return Err(Error::Parse(format!("dangling run length in `{line}`")));
            }
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    /// Plain PBM (`P1`), one pixel row per time, positive sites black.
    pub fn to_pbm(&self) -> String {
        let mut out = format!("P1\n{} {}\n", self.width, self.rows);
        for t in 0..self.rows {
            let line: Vec<&str> = self.row(t).iter().map(|&b| if b { "1" } else { "0" }).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Signs of `T^t x` for `t = 0..=n`.
pub fn record_signs<S: SiteValue, D: LocalDynamics<S> + ?Sized>(
    initial: &LatticeState<S>,
    map: &D,
    params: &CouplingParams<S>,
    n: usize,
) -> SignField {
    let mut field = SignField::new(initial.len());
    let mut state = initial.clone();
    let mut scratch = Vec::with_capacity(state.len());
    field.push_row(&state.signs());
    for _ in 0..n {
        state.step_into(map, params, &mut scratch);
        field.push_row(&state.signs());
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::local_map::{ExactBernoulli, PiecewiseExpandingMap};
    use crate::scalar::Exact;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pair(x: f64, y: f64, eps: f64) -> f64 {
        let s = LatticeState::<f64>::from_reals(&[x, y]).unwrap();
        s.apply_coupling(&CouplingParams::new(eps).unwrap()).sites()[0]
    }

    #[test]
    fn coupling_cases() {
        assert_eq!(pair(0.5, 0.5, 0.1), 0.5);
        assert_abs_diff_eq!(pair(0.5, -0.2, 0.1), -0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(pair(-0.5, 0.9, 0.1), -0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(pair(-0.5, -0.9, 0.1), -0.4, epsilon = 1e-15);
        assert_eq!(pair(-0.3, 0.2, 1.0), 0.7);
        assert_eq!(pair(-1.0, 0.2, 1.0), 0.0);
        assert_eq!(pair(0.0, 0.2, 0.0), 0.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(LatticeState::<f64>::from_reals(&[0.5, 1.5]).is_err());
        assert!(LatticeState::<f64>::from_reals(&[f64::NAN]).is_err());
        assert!(LatticeState::<f64>::from_reals(&[]).is_err());
        assert!(CouplingParams::<f64>::new(1.2).is_err());
    }

    #[test]
    fn ring_wraps_to_site_zero() {
        let s = LatticeState::<f64>::from_reals(&[-0.5, 0.2, 0.7]).unwrap();
        let c = s.apply_coupling(&CouplingParams::new(0.1).unwrap());
        // last site reads site 0, which is negative
        assert_abs_diff_eq!(c.sites()[2], -0.2, epsilon = 1e-15);
        assert_eq!(c.sites()[1], 0.2);
    }

    #[test]
    fn step_hand_case() {
        let m = PiecewiseExpandingMap::<f64>::bernoulli(4).unwrap();
        // τ(0.3) = 0.2, τ(-0.7) = -0.8
        let s = LatticeState::from_reals(&[0.3, -0.7]).unwrap();
        let n = s.step(&m, &CouplingParams::new(0.1).unwrap());
        assert_abs_diff_eq!(n.sites()[0], 0.2 - 1.0 + 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(n.sites()[1], -0.7, epsilon = 1e-12);
        assert_eq!(n.time(), 1);
    }

    #[test]
    fn all_positive_stays_positive() {
        let ex = ExactBernoulli::new(4).unwrap();
        let params = CouplingParams::<Exact>::new(0.37).unwrap();
        let init = LatticeState::from_reals(&[0.1, 0.9, 0.33, 1.0, 0.5]).unwrap();
        let f = record_signs(&init, &ex, &params, 50);
        assert_eq!(f.rows(), 51);
        assert!((0..f.rows()).all(|t| f.row(t).iter().all(|&b| b)));
    }

    #[test]
    fn zero_coupling_keeps_negative_phase() {
        let ex = ExactBernoulli::new(4).unwrap();
        let params = CouplingParams::<Exact>::new(0.0).unwrap();
        let init = LatticeState::from_reals(&[-0.1, -0.9, -0.33, -1.0, 0.0]).unwrap();
        let f = record_signs(&init, &ex, &params, 30);
        assert!((0..f.rows()).all(|t| f.row(t).iter().all(|&b| !b)));
        let f0 = record_signs(&init, &ex, &params, 0);
        assert_eq!(f0.rows(), 1);
        assert_eq!(f0.row(0), init.signs().as_slice());
    }

    #[test]
    fn zero_coupling_is_and_rule() {
        let m = PiecewiseExpandingMap::<f64>::bernoulli(5).unwrap();
        let params = CouplingParams::new(0.0).unwrap();
        let init = LatticeState::from_reals(&[0.3, -0.2, 0.7, 0.9, -0.6, 0.11]).unwrap();
        let next = init.step(&m, &params);
        let s = init.signs();
        let n = s.len();
        for p in 0..n {
            assert_eq!(next.signs()[p], s[p] && s[(p + 1) % n]);
        }
    }

    #[test]
    fn io_round_trips() {
        let s = LatticeState::<f64>::from_reals(&[0.25, -1.0, 1.0, -0.125, 0.0]).unwrap();
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 40);
        assert_eq!(LatticeState::<f64>::read_binary(&buf[..]).unwrap().sites(), s.sites());
        assert!(LatticeState::<f64>::read_binary(&buf[..7]).is_err());
        assert_eq!(LatticeState::<f64>::from_json(&s.to_json()).unwrap().sites(), s.sites());

        let f = SignField::from_rows(&[vec![true, true, false], vec![false, false, true]]).unwrap();
        assert_eq!(f.to_rle(), "2+1-\n2-1+\n");
        assert_eq!(SignField::from_rle(&f.to_rle()).unwrap(), f);
        assert_eq!(f.to_pbm(), "P1\n3 2\n1 1 0\n0 0 1\n");
        assert!(SignField::from_rle("3x\n").is_err());
    }

    #[test]
    fn exact_and_float_agree_for_short_orbits() {
        let m = PiecewiseExpandingMap::<f64>::bernoulli(3).unwrap();
        let ex = ExactBernoulli::new(3).unwrap();
        let vals = [0.31, -0.52, 0.77, -0.08, 0.45, 0.93, -0.66, 0.2];
        let mut a = LatticeState::<f64>::from_reals(&vals).unwrap();
        let mut b = LatticeState::<Exact>::from_reals(&vals).unwrap();
        let (pa, pb) = (CouplingParams::new(0.05).unwrap(), CouplingParams::new(0.05).unwrap());
        for _ in 0..10 {
            a = a.step(&m, &pa);
            b = b.step(&ex, &pb);
        }
        for (x, y) in a.to_reals().iter().zip(b.to_reals()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn sign_rule_and_range(xs in proptest::collection::vec(-1.0f64..=1.0, 4..12), eps in 0.0f64..=1.0) {
            let m = PiecewiseExpandingMap::<f64>::bernoulli(4).unwrap();
            let params = CouplingParams::new(eps).unwrap();
            let s = LatticeState::from_reals(&xs).unwrap();
            let tau: Vec<f64> = xs.iter().map(|&x| m.eval(x)).collect();
            let next = s.step(&m, &params);
            let n = xs.len();
            for p in 0..n {
                let v = next.sites()[p];
                prop_assert!((-1.0..=1.0).contains(&v));
                prop_assert_eq!(v > 0.0, coupled_sign(tau[p], tau[(p + 1) % n], eps));
            }
            prop_assert_eq!(s.step(&m, &params), next);
        }

        #[test]
        fn exact_sign_rule(ns in proptest::collection::vec(-crate::scalar::EXACT_DENOMINATOR..=crate::scalar::EXACT_DENOMINATOR, 4..10),
                           eps in 0.0f64..=1.0) {
            let ex = ExactBernoulli::new(4).unwrap();
            let params = CouplingParams::<Exact>::new(eps).unwrap();
            let s = LatticeState::new(ns.iter().map(|&k| Exact::from_numer(k)).collect()).unwrap();
            let tau: Vec<Exact> = s.sites().iter().map(|&x| ex.apply(x)).collect();
            let next = s.step(&ex, &params);
            let n = ns.len();
            for p in 0..n {
                let v = next.sites()[p];
                prop_assert!(v >= Exact::MINUS_ONE && v <= Exact::ONE);
                prop_assert_eq!(v.is_positive(), coupled_sign(tau[p], tau[(p + 1) % n], params.eps()));
            }
        }
    }
}
