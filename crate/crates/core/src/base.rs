//! The driving system: an irrational circle rotation on `[0, 1)` with
//! Lebesgue measure, plus interval partitions supporting piecewise-constant
//! dependence on the base point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Breakpoints closer than this are merged when partitions are refined.
pub const BREAKPOINT_TOL: f64 = 1e-12;

const GUARD_DENOMINATOR: u64 = 1_000_000;

/// Fractional part mapped into `[0, 1)`.
pub fn frac(x: f64) -> f64 {
    let f = x - x.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

/// Circle rotation `omega -> omega + r mod 1`.
///
/// The angle must be in `(0, 1)` and must not be exactly representable as a
/// rational with denominator at most `10^6`. Floats are always rational, so
/// this is a no-short-period guard rather than true irrationality; it rejects
/// the exactly representable small rationals (1/2, 3/4, ...) that would make
/// orbits periodic at desk scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaseRotation {
    r: f64,
    label: String,
}

impl BaseRotation {
    pub fn new(r: f64, label: impl Into<String>) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) || !r.is_finite() {
            return Err(Error::RotationRange(r));
        }
        if let Some((num, den)) = small_dyadic_rational(r) {
            return Err(Error::RotationRational { value: r, num, den });
        }
        Ok(BaseRotation {
            r,
            label: label.into(),
        })
    }

    pub fn angle(&self) -> f64 {
        self.r
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `theta^i(omega)`, computed directly as `frac(omega + i*r)` rather than
    /// by iterated addition, so rounding does not accumulate along orbits.
    pub fn point_at(&self, omega: f64, i: i64) -> f64 {
        frac(omega + (i as f64) * self.r)
    }

    pub fn theta(&self, omega: f64) -> f64 {
        self.point_at(omega, 1)
    }

    pub fn theta_inv(&self, omega: f64) -> f64 {
        self.point_at(omega, -1)
    }

    /// The orbit segment `[omega, theta(omega), ..., theta^k(omega)]`.
    pub fn orbit(&self, omega: f64, k: usize) -> Vec<f64> {
        (0..=k as i64).map(|i| self.point_at(omega, i)).collect()
    }
}

/// Exact lowest-terms representation of `x` when its denominator is small.
///
/// An f64 is a dyadic rational `m / 2^e`; after reduction the denominator is
/// a power of two, so `x = p/q` with `q <= 10^6` is possible only for these.
fn small_dyadic_rational(x: f64) -> Option<(u64, u64)> {
    let mut num = x;
    let mut den: u64 = 1;
    while num.fract() != 0.0 {
        if den > GUARD_DENOMINATOR {
            return None;
        }
        num *= 2.0;
        den *= 2;
    }
    if den <= GUARD_DENOMINATOR {
        Some((num as u64, den))
    } else {
        None
    }
}

/// Partition of `[0, 1)` into half-open cells `[b_i, b_{i+1})`.
///
/// Breakpoints are sorted, start at 0, and are deduplicated within
/// [`BREAKPOINT_TOL`]; cells narrower than the tolerance are merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalPartition {
    breakpoints: Vec<f64>,
}

impl IntervalPartition {
    /// Build from arbitrary points: everything is reduced mod 1, sorted,
    /// deduplicated, and 0 is inserted if absent.
    pub fn new(points: &[f64]) -> Self {
        let mut bps: Vec<f64> = points.iter().map(|&p| frac(p)).collect();
        bps.push(0.0);
        bps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut out: Vec<f64> = Vec::with_capacity(bps.len());
        for p in bps {
            match out.last() {
                Some(&last) if p - last < BREAKPOINT_TOL => {}
                _ => {
                    // a point within tolerance of 1 wraps onto 0
                    if 1.0 - p >= BREAKPOINT_TOL {
                        out.push(p);
                    }
                }
            }
        }
        IntervalPartition { breakpoints: out }
    }

    pub fn trivial() -> Self {
        IntervalPartition {
            breakpoints: vec![0.0],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn cell_count(&self) -> usize {
        self.breakpoints.len()
    }

    /// Cells as `(lo, hi)` pairs; the last cell closes at 1.
    pub fn cells(&self) -> Vec<(f64, f64)> {
        let n = self.breakpoints.len();
        (0..n)
            .map(|i| {
                let hi = if i + 1 < n { self.breakpoints[i + 1] } else { 1.0 };
                (self.breakpoints[i], hi)
            })
            .collect()
    }

    /// Index of the cell containing `omega` (taken mod 1).
    pub fn cell_index(&self, omega: f64) -> usize {
        let w = frac(omega);
        self.breakpoints.partition_point(|&b| b <= w) - 1
    }

    /// Union with another partition's breakpoints.
    pub fn merge(&self, other: &IntervalPartition) -> Self {
        let mut pts = self.breakpoints.clone();
        pts.extend_from_slice(&other.breakpoints);
        IntervalPartition::new(&pts)
    }

    /// Coarsest partition on whose cells the forward cell itinerary
    /// `omega -> (cell(omega), ..., cell(theta^{k-1} omega))` is constant:
    /// the union of rotation preimages of every breakpoint for `i < k`.
    ///
    /// A single-cell partition has no genuine boundary on the circle (its
    /// itinerary is constant everywhere), so it refines to itself.
    pub fn refine(&self, base: &BaseRotation, k: usize) -> Self {
        if self.cell_count() <= 1 {
            return IntervalPartition::trivial();
        }
        let mut pts = Vec::with_capacity(self.breakpoints.len() * k.max(1));
        for i in 0..k as i64 {
            for &b in &self.breakpoints {
                pts.push(frac(b - (i as f64) * base.angle()));
            }
        }
        IntervalPartition::new(&pts)
    }

    /// Midpoint-rule nodes and weights; weights sum to 1 exactly (the last
    /// weight absorbs the rounding slack).
    pub fn quadrature_grid(&self, points_per_cell: usize) -> Vec<(f64, f64)> {
        assert!(points_per_cell >= 1, "points_per_cell must be >= 1");
        let mut grid = Vec::with_capacity(self.cell_count() * points_per_cell);
        for (lo, hi) in self.cells() {
            let h = (hi - lo) / points_per_cell as f64;
            for j in 0..points_per_cell {
                grid.push((lo + (j as f64 + 0.5) * h, h));
            }
        }
        let partial: f64 = grid[..grid.len() - 1].iter().map(|(_, w)| w).sum();
        grid.last_mut().unwrap().1 = 1.0 - partial;
        grid
    }
}

/// Continued-fraction expansion of `x` in `(0, 1)`: `[a_1, a_2, ...]` with
/// `x = 1/(a_1 + 1/(a_2 + ...))`. Stops at `max_terms` or when the remainder
/// drops below floating noise.
pub fn continued_fraction(x: f64, max_terms: usize) -> Vec<u64> {
    let mut terms = Vec::new();
    let mut y = x;
    for _ in 0..max_terms {
        if y < 1e-12 {
            break;
        }
        let inv = 1.0 / y;
        let a = inv.floor();
        if a >= 1e15 {
            break;
        }
        terms.push(a as u64);
        y = inv - a;
    }
    terms
}

/// Convergent denominators `q_j` of the continued fraction of `x`, capped.
pub fn convergent_denominators(x: f64, max_q: u64) -> Vec<u64> {
    let terms = continued_fraction(x, 64);
    let mut qs = Vec::new();
    let (mut q_prev, mut q) = (0u64, 1u64);
    for a in terms {
        let next = match a.checked_mul(q).and_then(|v| v.checked_add(q_prev)) {
            Some(v) if v <= max_q => v,
            _ => break,
        };
        q_prev = q;
        q = next;
        qs.push(q);
    }
    qs
}

/// Increasing times `k` whose rotation offset `frac(k * r)` approaches
/// `target`: the successive record-setters of `|frac(k r) - target|`.
///
/// Scanning is capped at `k_max`; at most `count` records are returned.
pub fn approach_sequence(base: &BaseRotation, target: f64, count: usize, k_max: u64) -> Vec<u64> {
    let mut best = f64::INFINITY;
    let mut records = Vec::new();
    for k in 1..=k_max {
        let d = circle_distance(frac(k as f64 * base.angle()), target);
        if d < best {
            best = d;
            records.push(k);
            if records.len() >= count {
                break;
            }
        }
    }
    records
}

fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const SQRT2M1: f64 = std::f64::consts::SQRT_2 - 1.0;

    #[test]
    fn rotation_rejects_small_rationals() {
        assert!(BaseRotation::new(0.75, "x").is_err());
        assert!(BaseRotation::new(0.5, "x").is_err());
        assert!(BaseRotation::new(1.0 / 1024.0, "x").is_err());
        assert!(BaseRotation::new(0.0, "x").is_err());
        assert!(BaseRotation::new(1.0, "x").is_err());
        assert!(BaseRotation::new(SQRT2M1, "x").is_ok());
        // not exactly representable, so the stored float is fine
        assert!(BaseRotation::new(1.0 / 3.0, "x").is_ok());
    }

    #[test]
    fn orbit_matches_direct_arithmetic() {
        let base = BaseRotation::new(SQRT2M1, "rot").unwrap();
        let orb = base.orbit(0.0, 2);
        assert_abs_diff_eq!(orb[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(orb[1], 0.414213562373095, epsilon = 1e-12);
        assert_abs_diff_eq!(orb[2], 0.828427124746190, epsilon = 1e-12);

        assert_eq!(base.orbit(0.5, 0), vec![0.5]);

        let orb = base.orbit(0.9, 1);
        assert_abs_diff_eq!(orb[1], 0.314213562373095, epsilon = 1e-12);
    }

    #[test]
    fn orbit_steps_are_constant() {
        let base = BaseRotation::new(SQRT2M1, "rot").unwrap();
        let orb = base.orbit(0.37, 1000);
        for i in 0..1000 {
            let step = frac(orb[i + 1] - orb[i]);
            assert!((step - base.angle()).abs() < 1e-12);
        }
    }

    #[test]
    fn refine_examples() {
        let base = BaseRotation::new(SQRT2M1, "rot").unwrap();
        let trivial = IntervalPartition::trivial();
        assert_eq!(trivial.refine(&base, 3), trivial);

        let p = IntervalPartition::new(&[0.0, 0.75]);
        assert_eq!(p.refine(&base, 1), p);

        let refined = p.refine(&base, 2);
        let expect = [0.0, frac(0.75 - SQRT2M1), frac(0.0 - SQRT2M1), 0.75];
        let mut expect = expect.to_vec();
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(refined.cell_count(), 4);
        for (got, want) in refined.breakpoints().iter().zip(expect.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn refine_at_depth_one_is_identity() {
        // a refined partition needs no further depth-1 refinement; deeper
        // re-refinement genuinely adds preimage points by construction
        let base = BaseRotation::new(SQRT2M1, "rot").unwrap();
        let p = IntervalPartition::new(&[0.0, 0.25, 0.5, 0.75]);
        for k in [0, 1, 2, 5] {
            let once = p.refine(&base, k);
            assert_eq!(once.refine(&base, 1), once);
        }
    }

    #[test]
    fn refined_cells_have_constant_itineraries() {
        let base = BaseRotation::new(SQRT2M1, "rot").unwrap();
        let p = IntervalPartition::new(&[0.0, 0.25, 0.5, 0.75]);
        let k = 6;
        let refined = p.refine(&base, k);
        let labels = |omega: f64| -> Vec<usize> {
            (0..k as i64).map(|i| p.cell_index(base.point_at(omega, i))).collect()
        };
        // brute-force grid: points in the same refined cell agree on labels
        let m = 100_000;
        let mut per_cell: Vec<Option<Vec<usize>>> = vec![None; refined.cell_count()];
        for j in 0..m {
            let omega = (j as f64 + 0.5) / m as f64;
            let cell = refined.cell_index(omega);
            let lab = labels(omega);
            match &per_cell[cell] {
                None => per_cell[cell] = Some(lab),
                Some(prev) => assert_eq!(prev, &lab, "labels differ inside cell {cell}"),
            }
        }
    }

    #[test]
    fn quadrature_examples() {
        let grid = IntervalPartition::trivial().quadrature_grid(4);
        let nodes: Vec<f64> = grid.iter().map(|g| g.0).collect();
        assert_eq!(nodes, vec![0.125, 0.375, 0.625, 0.875]);
        for &(_, w) in &grid {
            assert_abs_diff_eq!(w, 0.25, epsilon = 1e-15);
        }

        let grid = IntervalPartition::new(&[0.0, 0.5]).quadrature_grid(1);
        assert_eq!(grid.len(), 2);
        assert_abs_diff_eq!(grid[0].0, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(grid[1].0, 0.75, epsilon = 1e-15);

        let sum: f64 = IntervalPartition::new(&[0.0, 0.1, 0.37, 0.9])
            .quadrature_grid(7)
            .iter()
            .map(|g| g.1)
            .sum();
        assert_eq!(sum, 1.0);
    }

    #[test]
    fn approach_sequence_converges() {
        let base = BaseRotation::new(SQRT2M1, "rot").unwrap();
        let seq = approach_sequence(&base, 0.5, 8, 2_000_000);
        assert!(seq.len() >= 5);
        let dists: Vec<f64> = seq
            .iter()
            .map(|&k| circle_distance(frac(k as f64 * base.angle()), 0.5))
            .collect();
        for w in dists.windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(*dists.last().unwrap() < 1e-3);
    }

    #[test]
    fn convergents_of_sqrt2m1_are_pell_numbers() {
        // continued fraction of sqrt(2)-1 is [2, 2, 2, ...]
        let terms = continued_fraction(SQRT2M1, 10);
        assert!(terms.iter().all(|&a| a == 2));
        let qs = convergent_denominators(SQRT2M1, 1_000_000);
        assert_eq!(&qs[..5], &[2, 5, 12, 29, 70]);
    }
}
