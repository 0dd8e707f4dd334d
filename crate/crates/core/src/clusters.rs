//! Space-time clusters grown backward from a set of positive sites, their
//! boundaries, connected parts and outer-path jump counts.
//!
//! Points are `(p, t)` with `p ∈ Z`; on a ring of width `L` a cluster is built
//! on the periodic lift, reading the sign of `p mod L`.

use std::collections::{BTreeMap, HashSet, VecDeque};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::SignField;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cluster {
    /// Bottom time of the construction window.
    base: usize,
    /// Top time, where the seeds live.
    n: usize,
    seeds: Vec<i64>,
    /// `rows[t - base]`, sorted.
    rows: Vec<Vec<i64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClusterBoundary {
    pub base: usize,
    /// `rows[t - base]` holds `∂Γ_t`, sorted.
    pub rows: Vec<Vec<i64>>,
}

impl ClusterBoundary {
    pub fn total(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn at(&self, t: usize) -> &[i64] {
        &self.rows[t - self.base]
    }

    /// `Σ |∂Γ_t|` over `t_lo ≤ t ≤ t_hi`.
    pub fn count_between(&self, t_lo: usize, t_hi: usize) -> usize {
        (t_lo..=t_hi).map(|t| self.at(t).len()).sum()
    }
}

/// Jump counts of one connected part.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ComponentPath {
    pub seeds: Vec<i64>,
    pub points: usize,
    pub boundary: usize,
    pub n_d: usize,
    pub n_v: usize,
    pub n_h: usize,
    /// Lattice steps of the traced loop segment, before decomposition.
    pub steps: Vec<(i64, i64)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OuterPath {
    pub components: Vec<ComponentPath>,
    pub c: usize,
    pub n_d: usize,
    pub n_v: usize,
    pub n_h: usize,
    pub boundary: usize,
    pub lambda_size: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ContourCheck {
    pub per_component: bool,
    pub horizontal_bound: bool,
    pub balance: bool,
    pub boundary_bound: bool,
}

impl ContourCheck {
    pub fn all(&self) -> bool {
        self.per_component && self.horizontal_bound && self.balance && self.boundary_bound
    }
}

impl OuterPath {
    /// `n_h ≥ n_d + |Λ| - c`, `n_d = n_v` and `|∂Γ| ≥ n_h + c`, aggregate and per part.
    pub fn check(&self) -> ContourCheck {
        let per_component = self.components.iter().all(|k| {
            k.n_h + 1 >= k.n_d + k.seeds.len() && k.n_d == k.n_v && k.boundary >= k.n_h + 1
        });
        ContourCheck {
            per_component,
            horizontal_bound: self.n_h + self.c >= self.n_d + self.lambda_size,
            balance: self.n_d == self.n_v,
            boundary_bound: self.boundary >= self.n_h + self.c,
        }
    }
}

#[derive(Serialize)]
struct ClusterExport<'a> {
    base: usize,
    n: usize,
    seeds: &'a [i64],
    points: Vec<(i64, usize)>,
}

impl Cluster {
    pub fn base(&self) -> usize {
        self.base
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seeds(&self) -> &[i64] {
        &self.seeds
    }

    /// `Γ_t`.
    pub fn slice(&self, t: usize) -> &[i64] {
        if t < self.base || t > self.n {
            return &[];
        }
        &self.rows[t - self.base]
    }

    pub fn contains(&self, p: i64, t: usize) -> bool {
        self.slice(t).binary_search(&p).is_ok()
    }

    pub fn len(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> impl Iterator<Item = (i64, usize)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(move |(i, row)| row.iter().map(move |&p| (p, self.base + i)))
    }

    /// `∂Γ`: points at the bottom time, or with a child outside `Γ`.
    pub fn boundary(&self) -> ClusterBoundary {
        let rows = (self.base..=self.n)
            .map(|t| {
                self.slice(t)
                    .iter()
                    .copied()
                    .filter(|&p| t == self.base || !self.contains(p, t - 1) || !self.contains(p + 1, t - 1))
                    .collect()
            })
            .collect();
        ClusterBoundary { base: self.base, rows }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ClusterExport {
            base: self.base,
            n: self.n,
            seeds: &self.seeds,
            points: self.points().collect(),
        })
        .expect("cluster serializes")
    }

    /// Text overlay, top row first: `#` cluster point, `+` positive, `.` non-positive.
    pub fn overlay(&self, signs: &SignField) -> String {
        let mut out = String::new();
        let w = signs.width() as i64;
        for t in (self.base..=self.n).rev() {
            for p in 0..w {
                let in_cluster = self.slice(t).iter().any(|&q| q.rem_euclid(w) == p);
                out.push(if in_cluster {
                    '#'
                } else if signs.get(p, t) {
                    '+'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

/// The cluster grown from `Λ × {n}` down to time 0.
pub fn build_cluster(signs: &SignField, lambda: &[i64], n: usize) -> Result<Cluster> {
    build_cluster_window(signs, lambda, 0, n)
}

/// The cluster grown from `Λ × {t_hi}` down to `t_lo`, which plays the role
/// of time 0 for the boundary.
pub fn build_cluster_window(signs: &SignField, lambda: &[i64], t_lo: usize, t_hi: usize) -> Result<Cluster> {
    if lambda.is_empty() {
        return Err(Error::domain("lambda", "seed set must be nonempty"));
    }
    if t_lo > t_hi || t_hi > signs.horizon() {
        return Err(Error::domain(
            "n",
            format!("window [{t_lo}, {t_hi}] outside recorded times 0..={}", signs.horizon()),
        ));
    }
    let mut seeds = lambda.to_vec();
    seeds.sort_unstable();
    seeds.dedup();
    if let Some(&p) = seeds.iter().find(|&&p| !signs.get(p, t_hi)) {
        return Err(Error::SeedNotPositive { site: p, time: t_hi });
    }
    let mut rows = vec![Vec::new(); t_hi - t_lo + 1];
    rows[t_hi - t_lo] = seeds.clone();
    for t in (t_lo..t_hi).rev() {
        let mut next: Vec<i64> = Vec::new();
        for &p in &rows[t + 1 - t_lo] {
            if signs.get(p, t) && signs.get(p + 1, t) {
                next.push(p);
                next.push(p + 1);
            }
        }
        next.sort_unstable();
        next.dedup();
        rows[t - t_lo] = next;
    }
    Ok(Cluster {
        base: t_lo,
        n: t_hi,
        seeds,
        rows,
    })
}

/// `α₀^{Σ_{t>base} |∂Γ_t|} α^{|∂Γ_base|}`.
pub fn peierls_weight(boundary: &ClusterBoundary, alpha0: f64, alpha: f64) -> Result<f64> {
    for (name, v) in [("alpha0", alpha0), ("alpha", alpha)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::domain(name, format!("must lie in [0, 1), got {v}")));
        }
    }
    let upper: usize = boundary.rows.iter().skip(1).map(Vec::len).sum();
    let bottom = boundary.rows.first().map_or(0, Vec::len);
    Ok(alpha0.powi(upper as i32) * alpha.powi(bottom as i32))
}

/// Neighbour offsets in `(space, time)`, counter-clockwise.
const DIRS: [(i64, i64); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

/// Connected parts, outer-path traces and jump counts.
pub fn analyze_geometry(cluster: &Cluster) -> Result<OuterPath> {
    let all: HashSet<(i64, i64)> = cluster.points().map(|(p, t)| (p, t as i64)).collect();
    let boundary = cluster.boundary();
    let on_boundary: HashSet<(i64, i64)> = boundary
        .rows
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().map(move |&p| (p, (boundary.base + i) as i64)))
        .collect();
    let top = cluster.n as i64;
    let mut seen: HashSet<(i64, i64)> = HashSet::with_capacity(all.len());
    let mut components = Vec::new();
    // every part contains a seed, since each point descends from one
    for &s in &cluster.seeds {
        if seen.contains(&(s, top)) {
            continue;
        }
        let mut part = Vec::new();
        let mut queue = VecDeque::from([(s, top)]);
        seen.insert((s, top));
        while let Some(v) = queue.pop_front() {
            part.push(v);
            for (dp, dt) in DIRS {
                let w = (v.0 + dp, v.1 + dt);
                if all.contains(&w) && seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        let members: HashSet<(i64, i64)> = part.iter().copied().collect();
        let mut seeds: Vec<i64> = part.iter().filter(|v| v.1 == top).map(|v| v.0).collect();
        seeds.sort_unstable();
        let steps = trace_outer(&members, seeds[seeds.len() - 1], seeds[0], top)?;
        let (mut n_d, mut n_v, mut n_h) = (0, 0, 0);
        for &step in &steps {
            match step {
                (1, -1) => n_d += 1,
                (-1, 0) => n_h += 1,
                (0, 1) => n_v += 1,
                (0, -1) => {
                    n_d += 1;
                    n_h += 1;
                }
                (1, 0) => {
                    n_d += 1;
                    n_v += 1;
                }
                (-1, 1) => {
                    n_h += 1;
                    n_v += 1;
                }
                _ => unreachable!("trace only uses lattice directions"),
            }
        }
        components.push(ComponentPath {
            boundary: part.iter().filter(|v| on_boundary.contains(v)).count(),
            points: part.len(),
            seeds,
            n_d,
            n_v,
            n_h,
            steps,
        });
    }
    components.sort_by_key(|k| k.seeds[0]);
    Ok(OuterPath {
        c: components.len(),
        n_d: components.iter().map(|k| k.n_d).sum(),
        n_v: components.iter().map(|k| k.n_v).sum(),
        n_h: components.iter().map(|k| k.n_h).sum(),
        boundary: boundary.total(),
        lambda_size: cluster.seeds.len(),
        components,
    })
}

/// Clockwise walk along the outer boundary from `(sup, top)` to `(inf, top)`.
fn trace_outer(members: &HashSet<(i64, i64)>, sup: i64, inf: i64, top: i64) -> Result<Vec<(i64, i64)>> {
    let mut steps = Vec::new();
    let mut at = (sup, top);
    let mut heading = 0usize;
    let limit = 6 * members.len() + 6;
    let fail = || Error::TraceFailed {
        site: sup,
        time: top as usize,
    };
    loop {
        if !steps.is_empty() && at == (inf, top) {
            return Ok(steps);
        }
        if steps.len() > limit {
            return Err(fail());
        }
        // sweep clockwise starting from a sharp left turn
        let next = (0..6).map(|k| (heading + 8 - k) % 6).find(|&h| {
            let (dp, dt) = DIRS[h];
            members.contains(&(at.0 + dp, at.1 + dt))
        });
        match next {
            Some(h) => {
                let (dp, dt) = DIRS[h];
                at = (at.0 + dp, at.1 + dt);
                steps.push((dp, dt));
                heading = h;
            }
            None if sup == inf => return Ok(steps),
            None => return Err(fail()),
        }
    }
}

/// Every cluster with `|Λ| = lambda_size`, horizon `n`, `inf Λ = 0` and gaps
/// between consecutive seeds in `1..=n+2`, obtainable from some sign field.
/// Sorted; fails once a cluster exceeds `max_points`.
pub fn enumerate_clusters(lambda_size: usize, n: usize, max_points: usize) -> Result<Vec<Cluster>> {
    if lambda_size == 0 {
        return Err(Error::domain("lambda_size", "must be at least 1"));
    }
    if max_points > 24 {
        return Err(Error::domain("max_points", format!("enumeration is capped at 24 points, got {max_points}")));
    }
    let mut out = Vec::new();
    let mut seeds = vec![0i64];
    enumerate_seed_sets(lambda_size, n, max_points, &mut seeds, &mut out)?;
    out.sort();
    Ok(out)
}

fn enumerate_seed_sets(
    lambda_size: usize,
    n: usize,
    max_points: usize,
    seeds: &mut Vec<i64>,
    out: &mut Vec<Cluster>,
) -> Result<()> {
    if seeds.len() == lambda_size {
        if seeds.len() > max_points {
            return Err(Error::BudgetExceeded(format!("seed set alone exceeds {max_points} points")));
        }
        let mut rows = vec![Vec::new(); n + 1];
        rows[n] = seeds.clone();
        return grow(n, n, seeds.len(), max_points, &mut rows, seeds, out);
    }
    let last = *seeds.last().expect("nonempty");
    for gap in 1..=(n as i64 + 2) {
        seeds.push(last + gap);
        enumerate_seed_sets(lambda_size, n, max_points, seeds, out)?;
        seeds.pop();
    }
    Ok(())
}

/// Chooses which points of row `t` fire, keeping only consistent choices:
/// a point that does not fire must have a child outside the cluster.
fn grow(
    t: usize,
    n: usize,
    count: usize,
    max_points: usize,
    rows: &mut Vec<Vec<i64>>,
    seeds: &[i64],
    out: &mut Vec<Cluster>,
) -> Result<()> {
    if t == 0 {
        out.push(Cluster {
            base: 0,
            n,
            seeds: seeds.to_vec(),
            rows: rows.clone(),
        });
        return Ok(());
    }
    let parents = rows[t].clone();
    for mask in 0u64..(1u64 << parents.len()) {
        let mut child: Vec<i64> = Vec::new();
        for (i, &p) in parents.iter().enumerate() {
            if mask >> i & 1 == 1 {
                child.push(p);
                child.push(p + 1);
            }
        }
        child.sort_unstable();
        child.dedup();
        let consistent = parents.iter().enumerate().all(|(i, &p)| {
            mask >> i & 1 == 1 || child.binary_search(&p).is_err() || child.binary_search(&(p + 1)).is_err()
        });
        if !consistent {
            continue;
        }
        if count + child.len() > max_points {
            return Err(Error::BudgetExceeded(format!("a cluster exceeds {max_points} points")));
        }
        let added = child.len();
        rows[t - 1] = child;
        grow(t - 1, n, count + added, max_points, rows, seeds, out)?;
        rows[t - 1] = Vec::new();
    }
    Ok(())
}

/// Number of enumerated clusters per `(Λ, n_d, n_v, n_h)`, paired with the
/// bound `3^{n_d + n_v + n_h}`.
pub fn path_multiplicities(clusters: &[Cluster]) -> Result<Vec<((Vec<i64>, usize, usize, usize), usize, u64)>> {
    let mut counts: BTreeMap<(Vec<i64>, usize, usize, usize), usize> = BTreeMap::new();
    for cl in clusters {
        let g = analyze_geometry(cl)?;
        *counts.entry((cl.seeds.clone(), g.n_d, g.n_v, g.n_h)).or_default() += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(key, count)| {
            let bound = 3u64.saturating_pow((key.1 + key.2 + key.3) as u32);
            (key, count, bound)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_positive(width: usize, n: usize) -> SignField {
        SignField::from_rows(&vec![vec![true; width]; n + 1]).unwrap()
    }

    fn pts(c: &Cluster) -> Vec<(i64, usize)> {
        let mut v: Vec<_> = c.points().collect();
        v.sort();
        v
    }

    #[test]
    fn horizon_zero_is_seed_row() {
        let f = all_positive(8, 0);
        let c = build_cluster(&f, &[3, 1], 0).unwrap();
        assert_eq!(pts(&c), vec![(1, 0), (3, 0)]);
        assert_eq!(c.boundary().total(), 2);
        let g = analyze_geometry(&c).unwrap();
        assert_eq!(g.c, 2);
        assert_eq!((g.n_d, g.n_v, g.n_h), (0, 0, 0));
        assert!(g.check().all());
    }

    #[test]
    fn full_triangle() {
        let f = all_positive(8, 2);
        let c = build_cluster(&f, &[0], 2).unwrap();
        assert_eq!(pts(&c), vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (2, 0)]);
        let b = c.boundary();
        assert_eq!(b.at(0), &[0, 1, 2]);
        assert_eq!(b.total(), 3);
        let g = analyze_geometry(&c).unwrap();
        assert_eq!((g.c, g.n_d, g.n_v, g.n_h), (1, 2, 2, 2));
        assert!(g.check().all());
        assert!((peierls_weight(&b, 0.1, 0.1).unwrap() - 1e-3).abs() < 1e-18);
        assert_eq!(peierls_weight(&b, 0.0, 0.5).unwrap(), 0.125);
    }

    #[test]
    fn blocked_right_branch() {
        let mut rows = vec![vec![true; 8]; 3];
        rows[1][1] = false;
        let f = SignField::from_rows(&rows).unwrap();
        let c = build_cluster(&f, &[0], 2).unwrap();
        // (0, 2) cannot fire since sign(1, 1) is negative
        assert_eq!(pts(&c), vec![(0, 2)]);
        let b = c.boundary();
        assert_eq!(b.at(2), &[0]);
        assert_eq!(peierls_weight(&b, 0.0, 0.5).unwrap(), 0.0);
        let g = analyze_geometry(&c).unwrap();
        assert_eq!((g.n_d, g.n_v, g.n_h), (0, 0, 0));
    }

    #[test]
    fn two_separate_parts() {
        let f = all_positive(32, 3);
        let c = build_cluster(&f, &[0, 10], 3).unwrap();
        let g = analyze_geometry(&c).unwrap();
        assert_eq!(g.c, 2);
        let single = analyze_geometry(&build_cluster(&f, &[0], 3).unwrap()).unwrap();
        assert_eq!(g.n_d, 2 * single.n_d);
        assert_eq!(g.n_h, 2 * single.n_h);
        assert_eq!(g.boundary, 2 * single.boundary);
        assert!(g.check().all());
    }

    #[test]
    fn rejects_negative_seed() {
        let mut rows = vec![vec![true; 4]; 2];
        rows[1][2] = false;
        let f = SignField::from_rows(&rows).unwrap();
        assert_eq!(build_cluster(&f, &[2], 1), Err(Error::SeedNotPositive { site: 2, time: 1 }));
        assert!(build_cluster(&f, &[], 1).is_err());
        assert!(build_cluster(&f, &[0], 5).is_err());
    }

    #[test]
    fn ring_lift_wraps_signs() {
        let mut rows = vec![vec![true; 4]; 2];
        rows[0][0] = false;
        let f = SignField::from_rows(&rows).unwrap();
        // children of (3, 1) are 3 and 4 = 0 (mod 4), which is negative
        let c = build_cluster(&f, &[3], 1).unwrap();
        assert_eq!(pts(&c), vec![(3, 1)]);
        let c = build_cluster(&f, &[2], 1).unwrap();
        assert_eq!(pts(&c), vec![(2, 0), (2, 1), (3, 0)]);
    }

    #[test]
    fn adjacent_seeds_form_one_part() {
        let f = all_positive(8, 0);
        let g = analyze_geometry(&build_cluster(&f, &[0, 1], 0).unwrap()).unwrap();
        assert_eq!((g.c, g.n_h), (1, 1));
        assert!(g.check().all());
    }

    #[test]
    fn enumeration_small_cases() {
        assert_eq!(enumerate_clusters(1, 0, 24).unwrap().len(), 1);
        let one = enumerate_clusters(1, 1, 24).unwrap();
        assert_eq!(one.len(), 2);
        assert_eq!(one[0].len() + one[1].len(), 4);
        assert!(matches!(enumerate_clusters(1, 3, 5), Err(Error::BudgetExceeded(_))));
        assert!(enumerate_clusters(1, 3, 25).is_err());
        let again = enumerate_clusters(2, 2, 24).unwrap();
        assert_eq!(again, enumerate_clusters(2, 2, 24).unwrap());
        assert!(again.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn enumerated_clusters_are_images_of_sign_fields() {
        for (lam, n) in [(1, 3), (2, 2)] {
            for cl in enumerate_clusters(lam, n, 24).unwrap() {
                // positive exactly on the cluster
                let width = 16usize;
                let rows: Vec<Vec<bool>> = (0..=n)
                    .map(|t| (0..width as i64).map(|p| cl.contains(p, t)).collect())
                    .collect();
                let f = SignField::from_rows(&rows).unwrap();
                assert_eq!(build_cluster(&f, cl.seeds(), n).unwrap(), cl);
                let g = analyze_geometry(&cl).unwrap();
                assert!(g.check().all(), "{cl:?} {g:?}");
            }
        }
    }

    #[test]
    fn multiplicity_bound_small() {
        let cl = enumerate_clusters(1, 3, 24).unwrap();
        for (_, count, bound) in path_multiplicities(&cl).unwrap() {
            assert!(count as u64 <= bound);
        }
    }

    #[test]
    fn window_identity() {
        let f = all_positive(16, 6);
        let full = build_cluster(&f, &[0, 2], 6).unwrap();
        let b = full.boundary();
        let (t0, t1) = (2usize, 5usize);
        let seeds: Vec<i64> = full.slice(t1).to_vec();
        let win = build_cluster_window(&f, &seeds, t0, t1).unwrap();
        let wb = win.boundary();
        assert_eq!(b.count_between(t0 + 1, t1), wb.total() - win.slice(t0).len());
    }

    #[test]
    fn exports() {
        let f = all_positive(4, 1);
        let c = build_cluster(&f, &[1], 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(v["points"].as_array().unwrap().len(), 3);
        assert_eq!(c.overlay(&f), "+#++\n+##+\n");
    }

    fn arb_field() -> impl Strategy<Value = (SignField, usize)> {
        (1usize..7, 6usize..14).prop_flat_map(|(n, w)| {
            proptest::collection::vec(proptest::bool::weighted(0.75), (n + 1) * w).prop_map(move |bits| {
                let rows: Vec<Vec<bool>> = bits.chunks(w).map(|c| c.to_vec()).collect();
                (SignField::from_rows(&rows).unwrap(), n)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn random_fields_satisfy_contour_inequalities((f, n) in arb_field(), lo in 0usize..6, span in 1usize..8) {
            let seeds: Vec<i64> = (lo..lo + span).filter(|&p| f.get(p as i64, n)).map(|p| p as i64).collect();
            prop_assume!(!seeds.is_empty());
            let c = build_cluster(&f, &seeds, n).unwrap();
            prop_assert_eq!(&c, &build_cluster(&f, &seeds, n).unwrap());
            for (p, t) in c.points() {
                prop_assert!(f.get(p, t));
            }
            let b = c.boundary();
            for (i, row) in b.rows.iter().enumerate() {
                for &p in row {
                    prop_assert!(c.contains(p, i));
                }
            }
            let g = analyze_geometry(&c).unwrap();
            prop_assert!(g.check().all(), "{:?}", g);
            // window identity on a split of [0, n]
            if n >= 2 {
                let t1 = n;
                let t0 = n / 2;
                let win = build_cluster_window(&f, c.slice(t1), t0, t1).unwrap();
                prop_assert_eq!(b.count_between(t0 + 1, t1), win.boundary().total() - win.slice(t0).len());
            }
        }
    }
}
