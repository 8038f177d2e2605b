//! The randomly time-changed hitting-time point process: partial sums of the
//! target's mass along the orbit, window bookkeeping over interval unions,
//! and realizations extracted from sampled paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::MeasureEngine;
use crate::sft::{CylinderSet, Word};

/// Hard cap on the adaptive time-change horizon.
const MAX_HORIZON: usize = 1 << 23;

/// A finite union of disjoint open bounded intervals in `[0, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalUnion {
    intervals: Vec<(f64, f64)>,
}

impl IntervalUnion {
    pub fn new(intervals: Vec<(f64, f64)>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidIntervals("need at least one interval".into()));
        }
        for &(lo, hi) in &intervals {
            if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::InvalidIntervals(format!(
                    "({lo}, {hi}) is not a bounded interval in [0, inf)"
                )));
            }
        }
        for pair in intervals.windows(2) {
            if pair[0].1 > pair[1].0 {
                return Err(Error::InvalidIntervals(format!(
                    "({}, {}) overlaps ({}, {})",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        Ok(IntervalUnion { intervals })
    }

    pub fn single(lo: f64, hi: f64) -> Result<Self> {
        IntervalUnion::new(vec![(lo, hi)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn count(&self) -> usize {
        self.intervals.len()
    }

    pub fn leb(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }

    pub fn sup(&self) -> f64 {
        self.intervals.last().unwrap().1
    }

    /// Index of the open interval containing `t`, endpoints excluded.
    pub fn locate(&self, t: f64) -> Option<usize> {
        self.intervals
            .iter()
            .position(|&(lo, hi)| t > lo && t < hi)
    }
}

/// Partial sums `T^k = sum_{i=1..k} mu_{theta^i omega}(A)` along one orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeChange {
    omega: f64,
    target: CylinderSet,
    sums: Vec<f64>,
    masses: Vec<f64>,
}

impl TimeChange {
    /// Partial sums to a fixed horizon `k_max`.
    pub fn new(engine: &MeasureEngine, omega: f64, target: &CylinderSet, k_max: usize) -> Result<Self> {
        assert!(k_max >= 1);
        let masses = engine.masses_along_orbit(omega, target, k_max)?;
        let mut sums = Vec::with_capacity(k_max + 1);
        sums.push(0.0);
        let mut acc = 0.0;
        for &m in &masses {
            acc += m;
            sums.push(acc);
        }
        Ok(TimeChange {
            omega,
            target: target.clone(),
            sums,
            masses,
        })
    }

    /// Extend the horizon adaptively (doubling) until the time change passes
    /// `sup R` by at least one maximal step, so window constants exist.
    pub fn covering(
        engine: &MeasureEngine,
        omega: f64,
        target: &CylinderSet,
        r: &IntervalUnion,
    ) -> Result<Self> {
        let mut k = 1024;
        loop {
            let tc = TimeChange::new(engine, omega, target, k)?;
            if tc.total() > r.sup() + tc.max_step() {
                return Ok(tc);
            }
            if k >= MAX_HORIZON {
                return Err(Error::HorizonTooShort {
                    k,
                    t: tc.total(),
                    sup_r: r.sup(),
                });
            }
            k *= 2;
        }
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn target(&self) -> &CylinderSet {
        &self.target
    }

    /// `T^k`, with `T^0 = 0`.
    pub fn t(&self, k: usize) -> f64 {
        self.sums[k]
    }

    pub fn horizon(&self) -> usize {
        self.masses.len()
    }

    pub fn total(&self) -> f64 {
        *self.sums.last().unwrap()
    }

    /// `mu_{theta^k omega}(A)` for `k >= 1`.
    pub fn mass(&self, k: usize) -> f64 {
        self.masses[k - 1]
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Realized essential sup of the step sizes along this horizon.
    pub fn max_step(&self) -> f64 {
        self.masses.iter().cloned().fold(0.0, f64::max)
    }

    /// Count of `k in [1, horizon]` with `T^k <= v` (the partial sums are
    /// nondecreasing, so this is the largest such `k`, or 0 when even `T^1`
    /// exceeds `v`).
    fn last_below(&self, v: f64) -> usize {
        self.sums[1..].partition_point(|&t| t <= v)
    }
}

/// Per-interval window constants: `T^{p_i} <= inf R_i < T^{p_i+1}` and
/// `T^{p_i+q_i} <= sup R_i < T^{p_i+q_i+1}`, with `k* = max_i p_i + q_i`.
///
/// When even the first step passes `inf R_i` the defining set is empty and
/// `p_i = 0`, so the window starts at offset 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowConstants {
    pub windows: Vec<(usize, usize)>,
    pub k_star: usize,
}

impl WindowConstants {
    pub fn compute(tc: &TimeChange, r: &IntervalUnion) -> Result<Self> {
        if tc.total() <= r.sup() {
            return Err(Error::HorizonTooShort {
                k: tc.horizon(),
                t: tc.total(),
                sup_r: r.sup(),
            });
        }
        let mut windows = Vec::with_capacity(r.count());
        let mut k_star = 0;
        for &(lo, hi) in r.intervals() {
            let p = tc.last_below(lo);
            let q = tc.last_below(hi) - p;
            windows.push((p, q));
            k_star = k_star.max(p + q);
        }
        Ok(WindowConstants { windows, k_star })
    }

    /// Offsets `j` covered by some window `(p_i, p_i + q_i]`, as a sorted
    /// deduplicated list.
    pub fn offsets(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .windows
            .iter()
            .flat_map(|&(p, q)| p + 1..=p + q)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// One realization of the hitting-time point process: the sorted times
/// `T^k` at which the sampled path sits in the target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointProcessRealization {
    times: Vec<f64>,
}

impl PointProcessRealization {
    pub fn from_times(mut times: Vec<f64>) -> Self {
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        PointProcessRealization { times }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Count of points in each open interval; endpoint hits are excluded.
    pub fn counts_in(&self, r: &IntervalUnion) -> Vec<usize> {
        let mut counts = vec![0usize; r.count()];
        for &t in &self.times {
            if let Some(i) = r.locate(t) {
                counts[i] += 1;
            }
        }
        counts
    }
}

/// Whether the depth-`n` window of `x` at offset `k` lies in the target.
pub fn window_in(x: &Word, k: usize, target: &CylinderSet) -> bool {
    let n = target.depth();
    let w = Word::new(x.symbols()[k..k + n].to_vec());
    target.contains(&w)
}

/// Realize the point process from a sampled path: a point at `T^k` for every
/// offset `1 <= k <= horizon` whose window lies in the target.
pub fn realize_process(
    x: &Word,
    target: &CylinderSet,
    tc: &TimeChange,
) -> Result<PointProcessRealization> {
    let k_max = tc.horizon();
    let needed = k_max + target.depth();
    if x.len() < needed {
        return Err(Error::PathTooShort {
            len: x.len(),
            needed,
        });
    }
    let mut times = Vec::new();
    for k in 1..=k_max {
        if window_in(x, k, target) {
            times.push(tc.t(k));
        }
    }
    Ok(PointProcessRealization::from_times(times))
}

/// First offset `k in [1, k_max]` whose window lies in the target, if any.
pub fn first_hitting(x: &Word, target: &CylinderSet, k_max: usize) -> Option<usize> {
    let n = target.depth();
    (1..=k_max)
        .take_while(|k| k + n <= x.len())
        .find(|&k| window_in(x, k, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{self, PsiChoice};
    use crate::sft::min_return_q;
    use approx::assert_abs_diff_eq;

    fn bernoulli_tc(n: usize, k: usize) -> (MeasureEngine, CylinderSet, TimeChange) {
        let engine = scenario::build_bernoulli_oracle(3).unwrap().engine().unwrap();
        let target = CylinderSet::single(Word::new(vec![1; n]));
        let tc = TimeChange::new(&engine, 0.3, &target, k).unwrap();
        (engine, target, tc)
    }

    #[test]
    fn interval_union_validation() {
        assert!(IntervalUnion::new(vec![(0.0, 1.0), (0.5, 2.0)]).is_err());
        assert!(IntervalUnion::new(vec![(1.0, 1.0)]).is_err());
        assert!(IntervalUnion::new(vec![(-0.5, 1.0)]).is_err());
        let r = IntervalUnion::new(vec![(0.0, 1.0), (1.0, 2.5)]).unwrap();
        assert_eq!(r.count(), 2);
        assert_abs_diff_eq!(r.leb(), 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.sup(), 2.5, epsilon = 1e-15);
    }

    #[test]
    fn uniform_steps_for_bernoulli() {
        let (_, _, tc) = bernoulli_tc(2, 30);
        for k in 1..=30 {
            assert_abs_diff_eq!(tc.t(k), k as f64 / 9.0, epsilon = 1e-9);
        }
        assert!(tc.masses().windows(2).all(|p| p[1] >= 0.0 && p[0] >= 0.0));
    }

    #[test]
    fn time_change_is_nondecreasing_on_rot3() {
        let scen = scenario::build_rot3(std::f64::consts::SQRT_2 - 1.0, PsiChoice::Zero).unwrap();
        let engine = scen.engine().unwrap();
        let target = CylinderSet::single(scen.designated_word().prefix(4));
        let tc = TimeChange::new(&engine, scen.default_omega(), &target, 200).unwrap();
        for k in 1..=200 {
            assert!(tc.t(k) >= tc.t(k - 1));
        }
    }

    #[test]
    fn expected_time_change_matches_marginal() {
        // E over the base of T^k equals k * mu(A), by quadrature on both sides
        let scen = scenario::build_rot3(std::f64::consts::SQRT_2 - 1.0, PsiChoice::Zero).unwrap();
        let engine = scen.engine().unwrap();
        let y = Word::new(vec![1, 2]);
        let target = CylinderSet::single(y.clone());
        let k = 12;

        let grid = engine.sft().partition().refine(engine.sft().base(), 3);
        let nodes = grid.quadrature_grid(6);
        let mut lhs = 0.0;
        for &(node, w) in &nodes {
            let tc = TimeChange::new(&engine, node, &target, k).unwrap();
            lhs += w * tc.t(k);
        }
        let marginal = engine
            .marginal_cylinder_measure(&y, &grid, 6)
            .unwrap();
        let rhs = k as f64 * marginal.value;
        assert!(
            (lhs - rhs).abs() < 20.0 * marginal.quad_error.max(1e-8) * k as f64,
            "lhs {lhs} rhs {rhs}"
        );
    }

    #[test]
    fn window_constants_on_uniform_steps() {
        let (_, _, tc) = bernoulli_tc(2, 30);
        // steps of 1/9: p = 0 because T^1 = 1/9 > 0 = inf R
        let r = IntervalUnion::single(0.0, 1.0).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        assert_eq!(wc.windows, vec![(0, 9)]);
        assert_eq!(wc.k_star, 9);

        // a knot exactly at a partial sum is kept by the <= in the definition
        let r = IntervalUnion::single(0.0, tc.t(5)).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        assert_eq!(wc.windows, vec![(0, 5)]);

        let r = IntervalUnion::new(vec![(0.0, 1.0), (2.0, 3.0)]).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        assert_eq!(wc.k_star, 27);
        assert_eq!(wc.windows[1], (18, 9));
    }

    #[test]
    fn window_sandwich_bounds() {
        let scen = scenario::build_rot3(std::f64::consts::SQRT_2 - 1.0, PsiChoice::Zero).unwrap();
        let engine = scen.engine().unwrap();
        let target = CylinderSet::single(scen.designated_word().prefix(3));
        let r = IntervalUnion::new(vec![(0.1, 0.9), (1.3, 2.0)]).unwrap();
        let tc = TimeChange::covering(&engine, scen.default_omega(), &target, &r).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        let eps = tc.max_step();
        for (&(p, q), &(lo, hi)) in wc.windows.iter().zip(r.intervals()) {
            assert!((tc.t(p) - lo).abs() <= eps + 1e-12);
            assert!((tc.t(p + q) - hi).abs() <= eps + 1e-12);
        }
        // coarse consistency of k*
        let min_step = tc.masses().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(wc.k_star as f64 * min_step <= r.sup() + 1e-12);
        assert!(r.sup() <= (wc.k_star + 1) as f64 * eps + 1e-12);
    }

    #[test]
    fn horizon_too_short_is_reported() {
        let (_, _, tc) = bernoulli_tc(2, 5);
        let r = IntervalUnion::single(0.0, 3.0).unwrap();
        assert!(matches!(
            WindowConstants::compute(&tc, &r),
            Err(Error::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn realize_and_count() {
        let (_, target, tc) = bernoulli_tc(2, 10);
        // path avoiding the target entirely
        let x = Word::new(vec![2, 3, 2, 3, 2, 3, 2, 3, 2, 3, 2, 3]);
        let re = realize_process(&x, &target, &tc).unwrap();
        assert!(re.is_empty());
        assert_eq!(
            re.counts_in(&IntervalUnion::single(0.0, 1.0).unwrap()),
            vec![0]
        );

        // single window at offset 5
        let mut syms = vec![2; 12];
        syms[5] = 1;
        syms[6] = 1;
        let x = Word::new(syms);
        let re = realize_process(&x, &target, &tc).unwrap();
        assert_eq!(re.times(), &[tc.t(5)]);

        // length check
        let x = Word::new(vec![1; 5]);
        assert!(matches!(
            realize_process(&x, &target, &tc),
            Err(Error::PathTooShort { .. })
        ));
    }

    #[test]
    fn endpoint_times_are_excluded() {
        let re = PointProcessRealization::from_times(vec![0.5, 1.0, 1.5]);
        let r = IntervalUnion::new(vec![(0.0, 1.0), (1.0, 2.0)]).unwrap();
        assert_eq!(re.counts_in(&r), vec![1, 1]);
    }

    #[test]
    fn counts_match_window_double_sum() {
        // the count over R equals the double sum of window indicators
        let (_, target, tc) = bernoulli_tc(2, 40);
        let r = IntervalUnion::new(vec![(0.3, 1.2), (1.5, 2.1)]).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        let x = Word::new(
            (0..tc.horizon() + 2)
                .map(|i| [1u8, 1, 2, 1, 3, 2, 1][i % 7])
                .collect::<Vec<u8>>(),
        );
        let re = realize_process(&x, &target, &tc).unwrap();
        let total: usize = re.counts_in(&r).iter().sum();
        let brute: usize = wc
            .windows
            .iter()
            .flat_map(|&(p, q)| (p + 1..=p + q).filter(|&j| window_in(&x, j, &target)))
            .count();
        assert_eq!(total, brute);
    }

    #[test]
    fn first_hitting_examples() {
        let target = CylinderSet::single(Word::new(vec![1, 2, 1]));
        let x = Word::new(vec![2, 2, 1, 2, 1, 2, 2]);
        assert_eq!(first_hitting(&x, &target, 10), Some(2));
        let avoid = Word::new(vec![2, 2, 2, 2, 2, 2]);
        assert_eq!(first_hitting(&avoid, &target, 10), None);
        assert_eq!(first_hitting(&x, &target, 0), None);
    }

    #[test]
    fn overlap_forced_return_matches_min_return() {
        // a path starting with w repeated at its shortest return hits at q(w)
        let w = Word::new(vec![1, 2, 1]);
        let q = min_return_q(&w);
        let mut syms = w.symbols().to_vec();
        while syms.len() < 12 {
            let i = syms.len();
            syms.push(syms[i - q]);
        }
        let x = Word::new(syms);
        let target = CylinderSet::single(w);
        assert_eq!(first_hitting(&x, &target, 10), Some(q));
    }
}
