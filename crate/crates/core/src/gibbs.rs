//! The quenched sample-measure engine.
//!
//! Cylinder probabilities are finite-volume approximations computed from the
//! weighted transfer-matrix cocycle: a backward tail sweep supplies the
//! forward boundary, and a forward push of the flat vector from `m` steps in
//! the past supplies the equivariant density weight at coordinate zero. Both
//! depths double from 8 until the value is Cauchy within the requested
//! tolerance, which the cone-contraction of positive matrix products turns
//! into a certificate for the limit. All products are renormalized to
//! sup-norm 1 every step and compared in log space, so horizons of a few
//! thousand steps stay far from under/overflow.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::base::IntervalPartition;
use crate::error::{Error, Result};
use crate::numeric::linear_fit;
use crate::sft::{CylinderSet, RandomSft, Word};

/// Burn-in depths double from here.
const BURN_START: usize = 8;
/// Hard cap on the burn-in depth (2^12).
pub const MAX_BURN: usize = 4096;
/// Default Cauchy tolerance for the doubling scheme.
pub const DEFAULT_TOL: f64 = 1e-11;
/// Ratio estimators skip fibers whose denominator falls below this.
pub const SKIP_DENOMINATOR: f64 = 1e-14;

/// A potential that reads `depth` coordinates (1 or 2) and is piecewise
/// constant in the base point. Values are stored per partition cell, indexed
/// by the base-`b` code of the length-`depth` word.
///
/// The pair `(holder_a, holder_r)` records the variation-bound constants the
/// potential is declared to satisfy; for locally constant potentials the
/// bound holds trivially at depths past `depth`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialSpec {
    depth: u8,
    alphabet: u8,
    partition: IntervalPartition,
    values: Vec<Vec<f64>>,
    holder_a: f64,
    holder_r: f64,
}

impl PotentialSpec {
    pub fn new(
        alphabet: u8,
        depth: u8,
        partition: IntervalPartition,
        values: Vec<Vec<f64>>,
        holder_a: f64,
        holder_r: f64,
    ) -> Result<Self> {
        if !(depth == 1 || depth == 2) {
            return Err(Error::InvalidPotential(format!(
                "dependence depth {depth} unsupported; truncate to depth 1 or 2"
            )));
        }
        if values.len() != partition.cell_count() {
            return Err(Error::InvalidPotential(format!(
                "expected {} value rows, got {}",
                partition.cell_count(),
                values.len()
            )));
        }
        let width = (alphabet as usize).pow(depth as u32);
        for row in &values {
            if row.len() != width {
                return Err(Error::InvalidPotential(format!(
                    "each cell needs {width} values (b^depth)"
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPotential("values must be finite".into()));
            }
        }
        if !(holder_a >= 0.0) || !(holder_r > 0.0 && holder_r < 1.0) {
            return Err(Error::InvalidPotential(
                "need holder_a >= 0 and holder_r in (0,1)".into(),
            ));
        }
        Ok(PotentialSpec {
            depth,
            alphabet,
            partition,
            values,
            holder_a,
            holder_r,
        })
    }

    /// The zero potential (depth 2 over the trivial partition).
    pub fn zero(alphabet: u8) -> Self {
        let width = (alphabet as usize).pow(2);
        PotentialSpec {
            depth: 2,
            alphabet,
            partition: IntervalPartition::trivial(),
            values: vec![vec![0.0; width]],
            holder_a: 0.0,
            holder_r: 0.5,
        }
    }

    /// Build from a closure evaluated at cell midpoints.
    pub fn from_fn(
        alphabet: u8,
        depth: u8,
        partition: IntervalPartition,
        f: impl Fn(f64, &[u8]) -> f64,
    ) -> Result<Self> {
        let width = (alphabet as usize).pow(depth as u32);
        let mut values = Vec::with_capacity(partition.cell_count());
        for (lo, hi) in partition.cells() {
            let mid = 0.5 * (lo + hi);
            let mut row = Vec::with_capacity(width);
            for code in 0..width {
                let syms = decode(code as u64, alphabet, depth as usize);
                row.push(f(mid, &syms));
            }
            values.push(row);
        }
        PotentialSpec::new(alphabet, depth, partition, values, 0.0, 0.5)
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn alphabet(&self) -> u8 {
        self.alphabet
    }

    pub fn partition(&self) -> &IntervalPartition {
        &self.partition
    }

    pub fn holder_constants(&self) -> (f64, f64) {
        (self.holder_a, self.holder_r)
    }

    /// `psi(omega, w)` for a length-`depth` symbol window.
    pub fn value(&self, omega: f64, window: &[u8]) -> f64 {
        debug_assert_eq!(window.len(), self.depth as usize);
        let cell = self.partition.cell_index(omega);
        let mut code = 0usize;
        for &s in window.iter().rev() {
            code = code * self.alphabet as usize + (s as usize - 1);
        }
        self.values[cell][code]
    }
}

fn decode(code: u64, b: u8, len: usize) -> Vec<u8> {
    let mut c = code;
    let mut syms = Vec::with_capacity(len);
    for _ in 0..len {
        syms.push((c % b as u64) as u8 + 1);
        c /= b as u64;
    }
    syms
}

/// Depth-`n` cylinder probabilities at one anchor, with the achieved burn-in
/// and Cauchy gap recorded.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CylinderMeasureTable {
    pub omega: f64,
    pub n: usize,
    pub burn_in: usize,
    pub gap: f64,
    entries: Vec<(Word, f64)>,
}

impl CylinderMeasureTable {
    pub fn entries(&self) -> &[(Word, f64)] {
        &self.entries
    }

    pub fn prob(&self, w: &Word) -> f64 {
        match self.entries.binary_search_by(|(e, _)| e.cmp(w)) {
            Ok(i) => self.entries[i].1,
            Err(_) => 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn max_prob(&self) -> f64 {
        self.entries.iter().map(|(_, p)| *p).fold(0.0, f64::max)
    }

    /// Largest additivity residual against a table one symbol deeper:
    /// `| sum_a p_{n+1}(w a) - p_n(w) |` maximized over `w`.
    pub fn additivity_residual(&self, finer: &CylinderMeasureTable) -> f64 {
        assert_eq!(finer.n, self.n + 1);
        let mut worst = 0.0f64;
        for (w, p) in &self.entries {
            let mut sum = 0.0;
            for (v, q) in &finer.entries {
                if &v.prefix(self.n) == w {
                    sum += q;
                }
            }
            worst = worst.max((sum - p).abs());
        }
        worst
    }

    /// Test hook: returns a copy with one entry shifted by `delta`.
    pub fn perturbed(&self, delta: f64) -> CylinderMeasureTable {
        let mut out = self.clone();
        if let Some(e) = out.entries.first_mut() {
            e.1 += delta;
        }
        out
    }
}

/// Converged value of a single cylinder measure.
#[derive(Debug, Clone, Copy)]
pub struct MeasureValue {
    pub value: f64,
    pub burn_in: usize,
    pub gap: f64,
}

/// Quadrature estimate of a marginal cylinder measure, with the
/// grid-doubling error estimate attached.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MarginalEstimate {
    pub value: f64,
    pub coarse: f64,
    pub quad_error: f64,
}

/// Series of maximal cylinder measures with its log-linear fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonSeries {
    pub ns: Vec<usize>,
    pub eps: Vec<f64>,
    pub slope: f64,
    pub r_squared: f64,
}

/// Empirical pseudo-multiplicativity constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistortionEstimate {
    pub n: usize,
    pub m: usize,
    pub c: f64,
    pub words_used: usize,
}

/// Backward products of the weighted transfer matrices, one vector per
/// position, renormalized to sup-norm 1 with the log scale accumulated.
pub(crate) struct TailSweep {
    b: usize,
    vecs: Vec<f64>,
    scales: Vec<f64>,
}

impl TailSweep {
    pub(crate) fn vec(&self, j: usize) -> &[f64] {
        &self.vecs[j * self.b..(j + 1) * self.b]
    }

    pub(crate) fn scale(&self, j: usize) -> f64 {
        self.scales[j]
    }
}

/// The measure engine for one subshift/potential pair.
#[derive(Debug, Clone)]
pub struct MeasureEngine {
    sft: RandomSft,
    psi: PotentialSpec,
    part: IntervalPartition,
    weights: Vec<Vec<f64>>,
    log_weights: Vec<Vec<f64>>,
    terminals: Vec<Vec<f64>>,
    pub tol: f64,
    pub word_cap: usize,
}

impl MeasureEngine {
    pub fn new(sft: RandomSft, psi: PotentialSpec) -> Result<Self> {
        if psi.alphabet() != sft.alphabet() {
            return Err(Error::InvalidPotential(format!(
                "potential alphabet {} does not match subshift alphabet {}",
                psi.alphabet(),
                sft.alphabet()
            )));
        }
        let part = sft.partition().merge(psi.partition());
        let b = sft.alphabet() as usize;
        let mut weights = Vec::with_capacity(part.cell_count());
        let mut log_weights = Vec::with_capacity(part.cell_count());
        let mut terminals = Vec::with_capacity(part.cell_count());
        for (lo, hi) in part.cells() {
            let mid = 0.5 * (lo + hi);
            let q = sft.transition_matrix(mid);
            let mut w = vec![0.0; b * b];
            for i in 0..b {
                for j in 0..b {
                    if q.entry(i as u8 + 1, j as u8 + 1) {
                        let v = match psi.depth() {
                            1 => psi.value(mid, &[i as u8 + 1]),
                            _ => psi.value(mid, &[i as u8 + 1, j as u8 + 1]),
                        };
                        w[i * b + j] = v.exp();
                    }
                }
            }
            let term = if psi.depth() == 1 {
                (0..b).map(|u| psi.value(mid, &[u as u8 + 1]).exp()).collect()
            } else {
                vec![1.0; b]
            };
            log_weights.push(w.iter().map(|&x| x.ln()).collect());
            weights.push(w);
            terminals.push(term);
        }
        Ok(MeasureEngine {
            sft,
            psi,
            part,
            weights,
            log_weights,
            terminals,
            tol: DEFAULT_TOL,
            word_cap: crate::sft::DEFAULT_WORD_CAP,
        })
    }

    pub fn sft(&self) -> &RandomSft {
        &self.sft
    }

    pub fn psi(&self) -> &PotentialSpec {
        &self.psi
    }

    pub fn alphabet(&self) -> usize {
        self.sft.alphabet() as usize
    }

    fn cell_at(&self, omega: f64, step: i64) -> usize {
        self.part.cell_index(self.sft.base().point_at(omega, step))
    }

    pub(crate) fn w_at(&self, omega: f64, step: i64) -> &[f64] {
        &self.weights[self.cell_at(omega, step)]
    }

    pub(crate) fn logw_at(&self, omega: f64, step: i64) -> &[f64] {
        &self.log_weights[self.cell_at(omega, step)]
    }

    fn terminal_at(&self, omega: f64, step: i64) -> &[f64] {
        &self.terminals[self.cell_at(omega, step)]
    }

    /// Birkhoff weight of a word: `exp` of the summed potential along the
    /// orbit, with one exponentiation at the end. A word of length
    /// `n + depth - 1` contributes `n` terms.
    pub fn log_birkhoff_weight(&self, omega: f64, w: &Word) -> f64 {
        let k = self.psi.depth() as usize;
        let s = w.symbols();
        assert!(s.len() >= k, "word shorter than the potential depth");
        let mut total = 0.0;
        for i in 0..=s.len() - k {
            let point = self.sft.base().point_at(omega, i as i64);
            total += self.psi.value(point, &s[i..i + k]);
        }
        total
    }

    pub fn birkhoff_weight(&self, omega: f64, w: &Word) -> f64 {
        self.log_birkhoff_weight(omega, w).exp()
    }

    /// Backward sweep over positions `0..len`, seeded with the terminal
    /// vector at position `len - 1`.
    pub(crate) fn tail_sweep(&self, omega: f64, len: usize) -> TailSweep {
        let b = self.alphabet();
        let mut vecs = vec![0.0; len * b];
        let mut scales = vec![0.0; len];
        let term = self.terminal_at(omega, (len - 1) as i64);
        let mx = term.iter().cloned().fold(f64::MIN, f64::max);
        for (dst, &src) in vecs[(len - 1) * b..].iter_mut().zip(term) {
            *dst = src / mx;
        }
        scales[len - 1] = mx.ln();
        for j in (0..len - 1).rev() {
            let w = self.w_at(omega, j as i64);
            let (head, tail) = vecs.split_at_mut((j + 1) * b);
            let prev = &tail[..b];
            let cur = &mut head[j * b..];
            let mut mx = 0.0f64;
            for i in 0..b {
                let mut acc = 0.0;
                for jj in 0..b {
                    acc += w[i * b + jj] * prev[jj];
                }
                cur[i] = acc;
                mx = mx.max(acc);
            }
            for x in cur.iter_mut() {
                *x /= mx;
            }
            scales[j] = scales[j + 1] + mx.ln();
        }
        TailSweep { b, vecs, scales }
    }

    /// Push the flat row vector forward from `theta^{-burn}(omega)` to
    /// position 0. Row/column positivity of the transition matrices keeps
    /// every entry strictly positive.
    pub(crate) fn forward_vector(&self, omega: f64, burn: usize) -> Vec<f64> {
        let b = self.alphabet();
        let mut h = vec![1.0; b];
        for step in -(burn as i64)..0 {
            self.slide_forward(&mut h, omega, step);
        }
        h
    }

    /// `h <- normalize(h^T W(theta^pos omega))`.
    pub(crate) fn slide_forward(&self, h: &mut [f64], omega: f64, pos: i64) {
        let b = self.alphabet();
        let w = self.w_at(omega, pos);
        let mut next = vec![0.0; b];
        for i in 0..b {
            let hi = h[i];
            if hi == 0.0 {
                continue;
            }
            for j in 0..b {
                next[j] += hi * w[i * b + j];
            }
        }
        let mx = next.iter().cloned().fold(0.0f64, f64::max);
        for (dst, x) in h.iter_mut().zip(next) {
            *dst = x / mx;
        }
    }

    /// One finite-volume evaluation at fixed burn-in (word assumed
    /// admissible).
    fn finite_volume(&self, omega: f64, w: &Word, burn: usize) -> f64 {
        let n = w.len();
        let tail = self.tail_sweep(omega, n + burn);
        let h = self.forward_vector(omega, burn);
        let s = w.symbols();
        let b = self.alphabet();
        let mut log_num = h[s[0] as usize - 1].ln();
        for i in 0..n - 1 {
            log_num += self.logw_at(omega, i as i64)[(s[i] as usize - 1) * b + s[i + 1] as usize - 1];
        }
        log_num += tail.vec(n - 1)[s[n - 1] as usize - 1].ln() + tail.scale(n - 1);
        let den: f64 = h.iter().zip(tail.vec(0)).map(|(a, b)| a * b).sum();
        let log_den = den.ln() + tail.scale(0);
        (log_num - log_den).exp()
    }

    /// Converged cylinder measure with the engine's default tolerance.
    pub fn cylinder_measure(&self, omega: f64, w: &Word) -> Result<f64> {
        Ok(self.cylinder_measure_with(omega, w, self.tol)?.value)
    }

    /// Converged cylinder measure; returns the achieved burn-in and gap.
    /// Words that are not admissible at the anchor have measure exactly 0.
    pub fn cylinder_measure_with(&self, omega: f64, w: &Word, tol: f64) -> Result<MeasureValue> {
        assert!(tol > 0.0);
        for &s in w.symbols() {
            self.sft.check_symbol(s)?;
        }
        if !self.sft.is_admissible(omega, w) {
            return Ok(MeasureValue {
                value: 0.0,
                burn_in: 0,
                gap: 0.0,
            });
        }
        let mut burn = BURN_START;
        let mut prev = self.finite_volume(omega, w, burn);
        loop {
            burn *= 2;
            let cur = self.finite_volume(omega, w, burn);
            let gap = (cur - prev).abs();
            if gap < tol {
                return Ok(MeasureValue {
                    value: cur,
                    burn_in: burn,
                    gap,
                });
            }
            if burn >= MAX_BURN {
                return Err(Error::NonConvergence { m: burn, gap, tol });
            }
            prev = cur;
        }
    }

    /// The doubling sequence `(burn, value)` up to `max_burn`, for
    /// convergence diagnostics.
    pub fn convergence_profile(&self, omega: f64, w: &Word, max_burn: usize) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let mut burn = BURN_START;
        while burn <= max_burn {
            out.push((burn, self.finite_volume(omega, w, burn)));
            burn *= 2;
        }
        out
    }

    fn build_table(&self, omega: f64, n: usize, burn: usize) -> Result<Vec<(Word, f64)>> {
        let b = self.alphabet();
        let tail = self.tail_sweep(omega, n + burn);
        let h = self.forward_vector(omega, burn);
        let den: f64 = h.iter().zip(tail.vec(0)).map(|(a, b)| a * b).sum();
        let log_den = den.ln() + tail.scale(0);
        let mats: Vec<&[f64]> = (0..n.saturating_sub(1) as i64)
            .map(|i| self.logw_at(omega, i))
            .collect();
        let mut out = Vec::new();
        let mut stack: Vec<u8> = Vec::with_capacity(n);
        let mut logw_stack: Vec<f64> = Vec::with_capacity(n);
        self.table_dfs(
            omega, n, burn, &tail, &h, log_den, &mats, b, &mut stack, &mut logw_stack, &mut out,
        )?;
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn table_dfs(
        &self,
        omega: f64,
        n: usize,
        burn: usize,
        tail: &TailSweep,
        h: &[f64],
        log_den: f64,
        mats: &[&[f64]],
        b: usize,
        stack: &mut Vec<u8>,
        logw_stack: &mut Vec<f64>,
        out: &mut Vec<(Word, f64)>,
    ) -> Result<()> {
        if stack.len() == n {
            if out.len() >= self.word_cap {
                return Err(Error::WordCap { cap: self.word_cap });
            }
            let last = *stack.last().unwrap() as usize - 1;
            let log_num =
                logw_stack.last().copied().unwrap_or(0.0) + tail.vec(n - 1)[last].ln() + tail.scale(n - 1);
            out.push((Word::new(stack.clone()), (log_num - log_den).exp()));
            return Ok(());
        }
        for s in 1..=b as u8 {
            let lw = if let Some(&prev) = stack.last() {
                let step = mats[stack.len() - 1][(prev as usize - 1) * b + s as usize - 1];
                if step == f64::NEG_INFINITY {
                    continue;
                }
                logw_stack.last().unwrap() + step
            } else {
                h[s as usize - 1].ln()
            };
            stack.push(s);
            logw_stack.push(lw);
            self.table_dfs(omega, n, burn, tail, h, log_den, mats, b, stack, logw_stack, out)?;
            stack.pop();
            logw_stack.pop();
        }
        Ok(())
    }

    /// Converged table of all admissible depth-`n` cylinder measures.
    pub fn measure_table(&self, omega: f64, n: usize) -> Result<CylinderMeasureTable> {
        self.measure_table_with(omega, n, self.tol)
    }

    pub fn measure_table_with(&self, omega: f64, n: usize, tol: f64) -> Result<CylinderMeasureTable> {
        let mut burn = BURN_START;
        let mut prev = self.build_table(omega, n, burn)?;
        loop {
            burn *= 2;
            let cur = self.build_table(omega, n, burn)?;
            let gap = table_gap(&prev, &cur);
            if gap < tol {
                return Ok(CylinderMeasureTable {
                    omega,
                    n,
                    burn_in: burn,
                    gap,
                    entries: cur,
                });
            }
            if burn >= MAX_BURN {
                return Err(Error::NonConvergence { m: burn, gap, tol });
            }
            prev = cur;
        }
    }

    /// Tables for all depths `1..=n_max` built from one converged sweep, so
    /// the additivity relation between consecutive depths is exact.
    pub fn measure_tables_upto(&self, omega: f64, n_max: usize) -> Result<Vec<CylinderMeasureTable>> {
        let deepest = self.measure_table(omega, n_max)?;
        let burn = deepest.burn_in;
        let mut tables = Vec::with_capacity(n_max);
        for n in 1..n_max {
            tables.push(CylinderMeasureTable {
                omega,
                n,
                burn_in: burn,
                gap: deepest.gap,
                entries: self.build_table(omega, n, burn + n_max - n)?,
            });
        }
        tables.push(deepest);
        Ok(tables)
    }

    /// Per-step masses `mu_{theta^i omega}(A)` for `i = 1..=k_max`, computed
    /// in one shared pair of sweeps and converged by burn-in doubling.
    pub fn masses_along_orbit(&self, omega: f64, a: &CylinderSet, k_max: usize) -> Result<Vec<f64>> {
        let mut burn = BURN_START;
        let mut prev = self.masses_at_burn(omega, a, k_max, burn);
        loop {
            burn *= 2;
            let cur = self.masses_at_burn(omega, a, k_max, burn);
            let gap = prev
                .iter()
                .zip(&cur)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max);
            if gap < self.tol {
                return Ok(cur);
            }
            if burn >= MAX_BURN {
                return Err(Error::NonConvergence {
                    m: burn,
                    gap,
                    tol: self.tol,
                });
            }
            prev = cur;
        }
    }

    fn masses_at_burn(&self, omega: f64, a: &CylinderSet, k_max: usize, burn: usize) -> Vec<f64> {
        let n = a.depth();
        let b = self.alphabet();
        let len = k_max + n + burn;
        let tail = self.tail_sweep(omega, len);
        let mut h = self.forward_vector(omega, burn);
        let mut masses = Vec::with_capacity(k_max);
        for i in 1..=k_max {
            self.slide_forward(&mut h, omega, (i - 1) as i64);
            let den: f64 = h.iter().zip(tail.vec(i)).map(|(a, b)| a * b).sum();
            let log_den = den.ln() + tail.scale(i);
            let mut mass = 0.0;
            'words: for w in a.words() {
                let s = w.symbols();
                let mut log_num = h[s[0] as usize - 1].ln();
                for t in 0..n - 1 {
                    let lw =
                        self.logw_at(omega, (i + t) as i64)[(s[t] as usize - 1) * b + s[t + 1] as usize - 1];
                    if lw == f64::NEG_INFINITY {
                        continue 'words;
                    }
                    log_num += lw;
                }
                log_num += tail.vec(i + n - 1)[s[n - 1] as usize - 1].ln() + tail.scale(i + n - 1);
                mass += (log_num - log_den).exp();
            }
            masses.push(mass);
        }
        masses
    }

    /// Quadrature of `omega -> mu_omega(C(w))` against Lebesgue measure.
    /// The error estimate is the difference between the grid and its
    /// doubled-resolution refinement.
    pub fn marginal_cylinder_measure(
        &self,
        w: &Word,
        grid: &IntervalPartition,
        points_per_cell: usize,
    ) -> Result<MarginalEstimate> {
        let coarse = self.quadrature_of_cylinder(w, grid, points_per_cell)?;
        let fine = self.quadrature_of_cylinder(w, grid, points_per_cell * 2)?;
        Ok(MarginalEstimate {
            value: fine,
            coarse,
            quad_error: (fine - coarse).abs(),
        })
    }

    fn quadrature_of_cylinder(
        &self,
        w: &Word,
        grid: &IntervalPartition,
        ppc: usize,
    ) -> Result<f64> {
        let mut total = 0.0;
        for (node, weight) in grid.quadrature_grid(ppc) {
            total += weight * self.cylinder_measure(node, w)?;
        }
        Ok(total)
    }

    /// `eps(n) = max_{omega in nodes} max_w mu_omega(C_n(w))` over a depth
    /// range, with the log-linear fit of its decay.
    pub fn epsilon_decay(&self, nodes: &[f64], n_lo: usize, n_hi: usize) -> Result<EpsilonSeries> {
        assert!(n_lo >= 1 && n_lo <= n_hi);
        let mut ns = Vec::new();
        let mut eps = Vec::new();
        for n in n_lo..=n_hi {
            let mut worst = 0.0f64;
            for &node in nodes {
                worst = worst.max(self.measure_table(node, n)?.max_prob());
            }
            ns.push(n);
            eps.push(worst);
        }
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        let ys: Vec<f64> = eps.iter().map(|&e| e.ln()).collect();
        let (slope, _, r2) = linear_fit(&xs, &ys);
        Ok(EpsilonSeries {
            ns,
            eps,
            slope,
            r_squared: r2,
        })
    }

    /// Empirical distortion constant: the worst two-sided ratio between a
    /// depth-`(n+m)` cylinder and the product of its depth-`n` front and the
    /// shifted depth-`m` back, over (at most `max_words`) admissible words.
    pub fn distortion_constant(
        &self,
        omega: f64,
        n: usize,
        m: usize,
        max_words: usize,
    ) -> Result<DistortionEstimate> {
        let long = self.sft.admissible_words(omega, n + m, self.word_cap)?;
        let words = long.words();
        let stride = (words.len() / max_words.max(1)).max(1);
        let shifted = self.sft.base().point_at(omega, n as i64);
        let mut c = 1.0f64;
        let mut used = 0;
        for w in words.iter().step_by(stride) {
            let full = self.cylinder_measure(omega, w)?;
            let front = self.cylinder_measure(omega, &w.prefix(n))?;
            let back = self.cylinder_measure(shifted, &w.suffix_from(n))?;
            if front * back < SKIP_DENOMINATOR {
                continue;
            }
            let ratio = full / (front * back);
            c = c.max(ratio.max(1.0 / ratio));
            used += 1;
        }
        Ok(DistortionEstimate {
            n,
            m,
            c,
            words_used: used,
        })
    }

    /// Exact pair correlation for the mixing estimator:
    /// `mu_omega(C(a) ∩ sigma^{-(g+n)} C(b))`, the factor
    /// `mu_omega(C(a))`, and `mu_{theta^{n+g} omega}(C(b))`, all from one
    /// transfer-matrix sandwich at the given burn-in.
    fn phi_terms_at_burn(
        &self,
        omega: f64,
        n: usize,
        m: usize,
        g: usize,
        burn: usize,
    ) -> Result<Vec<(f64, f64, f64)>> {
        let b = self.alphabet();
        let len = n + g + m + burn;
        let tail = self.tail_sweep(omega, len);
        let h = self.forward_vector(omega, burn);
        let den: f64 = h.iter().zip(tail.vec(0)).map(|(x, y)| x * y).sum();
        let log_den = den.ln() + tail.scale(0);

        // gap product W(n-1) ... W(n+g-1), renormalized
        let mut mid = vec![0.0; b * b];
        for i in 0..b {
            mid[i * b + i] = 1.0;
        }
        let mut mid_scale = 0.0;
        for t in (n - 1) as i64..(n + g) as i64 {
            let w = self.w_at(omega, t);
            let mut next = vec![0.0; b * b];
            let mut mx = 0.0f64;
            for i in 0..b {
                for k in 0..b {
                    let v = mid[i * b + k];
                    if v == 0.0 {
                        continue;
                    }
                    for j in 0..b {
                        next[i * b + j] += v * w[k * b + j];
                    }
                }
            }
            for &v in &next {
                mx = mx.max(v);
            }
            for v in next.iter_mut() {
                *v /= mx;
            }
            mid_scale += mx.ln();
            mid = next;
        }

        // front words with their path log-weights (position 0..n-1)
        let front = self.sft.admissible_words(omega, n, self.word_cap)?;
        let shift_anchor = self.sft.base().point_at(omega, (n + g) as i64);
        let back = self.sft.admissible_words(shift_anchor, m, self.word_cap)?;

        // h slid to position n+g, for the marginal of the back word
        let mut h_shift = h.clone();
        for pos in 0..(n + g) as i64 {
            self.slide_forward(&mut h_shift, omega, pos);
        }
        let den_shift: f64 = h_shift
            .iter()
            .zip(tail.vec(n + g))
            .map(|(x, y)| x * y)
            .sum();
        let log_den_shift = den_shift.ln() + tail.scale(n + g);

        let path_logw = |anchor_step: usize, s: &[u8]| -> f64 {
            let mut acc = 0.0;
            for t in 0..s.len() - 1 {
                acc += self.logw_at(omega, (anchor_step + t) as i64)
                    [(s[t] as usize - 1) * b + s[t + 1] as usize - 1];
            }
            acc
        };

        let mut out = Vec::new();
        for wa in front.words() {
            let sa = wa.symbols();
            let log_front = h[sa[0] as usize - 1].ln() + path_logw(0, sa);
            let mu_a =
                (log_front + tail.vec(n - 1)[sa[n - 1] as usize - 1].ln() + tail.scale(n - 1) - log_den)
                    .exp();
            for wb in back.words() {
                let sb = wb.symbols();
                let log_back = path_logw(n + g, sb)
                    + tail.vec(n + g + m - 1)[sb[m - 1] as usize - 1].ln()
                    + tail.scale(n + g + m - 1);
                let bridge = mid[(sa[n - 1] as usize - 1) * b + sb[0] as usize - 1];
                let joint = if bridge == 0.0 {
                    0.0
                } else {
                    (log_front + bridge.ln() + mid_scale + log_back - log_den).exp()
                };
                let mu_b = (h_shift[sb[0] as usize - 1].ln() + log_back - log_den_shift).exp();
                out.push((joint, mu_a, mu_b));
            }
        }
        Ok(out)
    }

    /// Fibered mixing coefficient estimate at gap `g` over all single-word
    /// cylinder pairs of depths `(n, m)`:
    /// `max |joint - mu(A) mu_shift(B)| / mu(A)`.
    pub fn phi_hat(&self, omega: f64, n: usize, m: usize, g: usize) -> Result<f64> {
        let eval = |burn: usize| -> Result<f64> {
            let mut worst = 0.0f64;
            for (joint, mu_a, mu_b) in self.phi_terms_at_burn(omega, n, m, g, burn)? {
                if mu_a < SKIP_DENOMINATOR {
                    continue;
                }
                worst = worst.max((joint - mu_a * mu_b).abs() / mu_a);
            }
            Ok(worst)
        };
        let mut burn = BURN_START;
        let mut prev = eval(burn)?;
        loop {
            burn *= 2;
            let cur = eval(burn)?;
            let gap = (cur - prev).abs();
            if gap < self.tol.max(1e-13) {
                return Ok(cur);
            }
            if burn >= MAX_BURN {
                return Err(Error::NonConvergence {
                    m: burn,
                    gap,
                    tol: self.tol,
                });
            }
            prev = cur;
        }
    }

    /// Deterministic sampling plan for paths from the depth-converged
    /// finite-volume approximation at `omega`: per-position conditional
    /// tables derived from the backward tail sweep.
    pub fn sample_plan(&self, omega: f64, len: usize) -> Result<SamplePlan> {
        assert!(len >= 1);
        let mut burn = BURN_START;
        let mut prev = self.plan_at_burn(omega, len, burn);
        loop {
            burn *= 2;
            let cur = self.plan_at_burn(omega, len, burn);
            let gap = plan_gap(&prev, &cur);
            if gap < self.tol {
                return Ok(cur);
            }
            if burn >= MAX_BURN {
                return Err(Error::NonConvergence {
                    m: burn,
                    gap,
                    tol: self.tol,
                });
            }
            prev = cur;
        }
    }

    fn plan_at_burn(&self, omega: f64, len: usize, burn: usize) -> SamplePlan {
        let b = self.alphabet();
        let tail = self.tail_sweep(omega, len + burn);
        let h = self.forward_vector(omega, burn);
        let mut init = vec![0.0; b];
        for j in 0..b {
            init[j] = h[j] * tail.vec(0)[j];
        }
        normalize_to_cdf(&mut init);
        let mut steps = vec![0.0; len.saturating_sub(1) * b * b];
        for t in 0..len - 1 {
            let w = self.w_at(omega, t as i64);
            let next_tail = tail.vec(t + 1);
            for prev in 0..b {
                let row = &mut steps[(t * b + prev) * b..(t * b + prev + 1) * b];
                for j in 0..b {
                    row[j] = w[prev * b + j] * next_tail[j];
                }
                normalize_to_cdf(row);
            }
        }
        SamplePlan {
            b,
            len,
            init,
            steps,
        }
    }
}

fn normalize_to_cdf(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    let mut acc = 0.0;
    for x in row.iter_mut() {
        acc += *x / total;
        *x = acc;
    }
    if let Some(last) = row.last_mut() {
        *last = 1.0;
    }
}

fn table_gap(a: &[(Word, f64)], b: &[(Word, f64)]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|((_, x), (_, y))| (x - y).abs())
        .fold(0.0f64, f64::max)
}

fn plan_gap(a: &SamplePlan, b: &SamplePlan) -> f64 {
    let mut gap = 0.0f64;
    for (x, y) in a.init.iter().zip(&b.init) {
        gap = gap.max((x - y).abs());
    }
    for (x, y) in a.steps.iter().zip(&b.steps) {
        gap = gap.max((x - y).abs());
    }
    gap
}

/// Precomputed per-position conditional CDF tables for drawing sample paths.
/// Paths drawn from a plan are exact draws from the finite-volume measure
/// that produced it, and are deterministic given the RNG stream.
#[derive(Debug, Clone)]
pub struct SamplePlan {
    b: usize,
    len: usize,
    init: Vec<f64>,
    steps: Vec<f64>,
}

impl SamplePlan {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn pick(cdf: &[f64], u: f64) -> u8 {
        match cdf.iter().position(|&c| u < c) {
            Some(i) => i as u8 + 1,
            None => cdf.len() as u8,
        }
    }

    /// Draw the first symbol.
    pub fn first<R: Rng>(&self, rng: &mut R) -> u8 {
        Self::pick(&self.init, rng.random::<f64>())
    }

    /// Draw the symbol at position `t + 1` given the symbol at `t`.
    pub fn next<R: Rng>(&self, rng: &mut R, t: usize, prev: u8) -> u8 {
        let row = &self.steps[(t * self.b + prev as usize - 1) * self.b..][..self.b];
        Self::pick(row, rng.random::<f64>())
    }

    /// Draw a complete path of `len` symbols.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Word {
        let mut syms = Vec::with_capacity(self.len);
        let mut s = self.first(rng);
        syms.push(s);
        for t in 0..self.len - 1 {
            s = self.next(rng, t, s);
            syms.push(s);
        }
        Word::new(syms)
    }
}
