//! Statistical verification: exact expected-count and decomposition bounds,
//! Monte-Carlo estimates of the void probability and the first-hitting law,
//! exact mixing/return estimators, the uniform-PPP oracle, and Poisson
//! goodness-of-fit tests.
//!
//! Every Monte-Carlo estimator draws realization `i` from its own
//! counter-based RNG stream, so results are deterministic for a fixed master
//! seed and independent of the worker count; reductions happen over
//! index-ordered vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{MeasureEngine, SKIP_DENOMINATOR};
use crate::numeric::{chi2_sf, linear_fit, mean_var, poisson_pmf, wilson_ci};
use crate::process::{IntervalUnion, PointProcessRealization, TimeChange, WindowConstants};
use crate::sft::{min_return_q, CylinderSet, Word};

/// Monte-Carlo harness settings. Worker streams are derived from the master
/// seed by stream index, so they are disjoint by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MCConfig {
    pub samples: usize,
    pub seed: u64,
    pub workers: usize,
}

/// Conventional pass thresholds for the statistical checks. The exact paper
/// bounds are asserted with zero slack elsewhere; these only govern the
/// finite-sample tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Thresholds {
    pub chi2_p_min: f64,
    pub dispersion_lo: f64,
    pub dispersion_hi: f64,
    pub zero_prob_abs: f64,
    pub exp_law_sup: f64,
    pub symmetry_dev: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            chi2_p_min: 0.01,
            dispersion_lo: 0.9,
            dispersion_hi: 1.1,
            zero_prob_abs: 0.02,
            exp_law_sup: 0.05,
            symmetry_dev: 1e-6,
        }
    }
}

/// One named verification result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportEntry {
    pub name: String,
    pub value: serde_json::Value,
    pub target: String,
    pub tolerance: String,
    /// `None` marks a check that does not apply to the scenario.
    pub pass: Option<bool>,
    pub note: String,
}

/// Ordered collection of verification results.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VerificationReport {
    pub entries: Vec<ReportEntry>,
}

impl VerificationReport {
    pub fn push(&mut self, entry: ReportEntry) {
        self.entries.push(entry);
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass != Some(false))
    }

    pub fn failed(&self) -> Vec<&ReportEntry> {
        self.entries.iter().filter(|e| e.pass == Some(false)).collect()
    }

    pub fn summary_lines(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| {
                let status = match e.pass {
                    Some(true) => "PASS",
                    Some(false) => "FAIL",
                    None => "n/a ",
                };
                format!("[{status}] {} (target {}, tol {})", e.name, e.target, e.tolerance)
            })
            .collect()
    }
}

/// RNG for realization `index` of the estimator identified by `salt`.
pub fn stream_rng(seed: u64, salt: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(index);
    rng
}

/// Run `f` under a rayon pool with the requested worker count (0 = default).
pub fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers == 0 {
        f()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool")
            .install(f)
    }
}

/// Streaming detector for windows of a path lying in a target cylinder set.
/// Single-word targets use a KMP automaton (overlapping hits included);
/// multi-word targets use a rolling window code.
#[derive(Debug, Clone)]
pub struct WindowAutomaton {
    n: usize,
    b: u8,
    kind: AutomatonKind,
}

#[derive(Debug, Clone)]
enum AutomatonKind {
    Kmp { delta: Vec<u16> },
    Rolling { codes: Vec<u64>, pow: u64 },
}

/// Per-path scanning state.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScanState {
    kmp: u16,
    code: u64,
    seen: usize,
}

impl WindowAutomaton {
    pub fn new(target: &CylinderSet, b: u8) -> Self {
        let n = target.depth();
        if target.len() == 1 {
            let y = target.words()[0].symbols();
            // failure function
            let mut fail = vec![0usize; n + 1];
            let mut k = 0;
            for q in 1..n {
                while k > 0 && y[q] != y[k] {
                    k = fail[k];
                }
                if y[q] == y[k] {
                    k += 1;
                }
                fail[q + 1] = k;
            }
            let mut delta = vec![0u16; (n + 1) * b as usize];
            for q in 0..=n {
                for c in 1..=b {
                    let mut state = if q == n { fail[n] } else { q };
                    loop {
                        if state < n && y[state] == c {
                            state += 1;
                            break;
                        }
                        if state == 0 {
                            break;
                        }
                        state = fail[state];
                    }
                    delta[q * b as usize + c as usize - 1] = state as u16;
                }
            }
            WindowAutomaton {
                n,
                b,
                kind: AutomatonKind::Kmp { delta },
            }
        } else {
            WindowAutomaton {
                n,
                b,
                kind: AutomatonKind::Rolling {
                    codes: target.codes(b),
                    pow: (b as u64).pow(n as u32 - 1),
                },
            }
        }
    }

    /// Feed one symbol; returns whether the window ending at this position
    /// lies in the target.
    pub fn step(&self, st: &mut ScanState, sym: u8) -> bool {
        st.seen += 1;
        match &self.kind {
            AutomatonKind::Kmp { delta } => {
                st.kmp = delta[st.kmp as usize * self.b as usize + sym as usize - 1];
                st.kmp as usize == self.n
            }
            AutomatonKind::Rolling { codes, pow } => {
                st.code = if st.seen <= self.n {
                    st.code + (sym as u64 - 1) * (self.b as u64).pow(st.seen as u32 - 1)
                } else {
                    st.code / self.b as u64 + (sym as u64 - 1) * pow
                };
                st.seen >= self.n && codes.binary_search(&st.code).is_ok()
            }
        }
    }
}

/// Exact expected-count identity and its bound: the expected number of
/// points in `R` equals the sum of window increments of the time change,
/// and deviates from `Leb(R)` by at most `2 r eps(A)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpectedCountCheck {
    pub expected: f64,
    pub leb: f64,
    pub deviation: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn check_k1_exact(tc: &TimeChange, wc: &WindowConstants, r: &IntervalUnion) -> ExpectedCountCheck {
    let expected: f64 = wc
        .windows
        .iter()
        .map(|&(p, q)| tc.t(p + q) - tc.t(p))
        .sum();
    let deviation = (expected - r.leb()).abs();
    let bound = 2.0 * r.count() as f64 * tc.max_step();
    ExpectedCountCheck {
        expected,
        leb: r.leb(),
        deviation,
        bound,
        pass: deviation <= bound + 1e-12,
    }
}

/// Exact probability that a path avoids the target at every forbidden
/// offset, via a forward absorption sweep over suffix states against the
/// engine's transfer weights. This is the transfer-matrix oracle the
/// Monte-Carlo void-probability estimate is checked against.
pub fn zero_hit_probability_exact(
    engine: &MeasureEngine,
    omega: f64,
    target: &CylinderSet,
    forbidden: &[usize],
    k_star: usize,
) -> Result<f64> {
    let n = target.depth();
    let b = engine.alphabet();
    let s = n.saturating_sub(1).max(1);
    let states = (b as u64).checked_pow(s as u32).filter(|&x| x <= 2_000_000);
    let Some(states) = states else {
        return Err(Error::WordCap { cap: 2_000_000 });
    };
    let states = states as usize;
    let mut flags = vec![false; k_star + 1];
    for &j in forbidden {
        if j <= k_star {
            flags[j] = true;
        }
    }
    let codes = target.codes(engine.sft().alphabet());

    let eval = |burn: usize| -> f64 {
        let last_pos = k_star + n - 1;
        let tail = engine.tail_sweep(omega, last_pos + 1 + burn);
        let h = engine.forward_vector(omega, burn);
        let mut alive = vec![0.0f64; states];
        let mut total = vec![0.0f64; states];

        // seed with admissible length-s prefixes; window offsets >= 1 only
        // complete later, so alive and total start equal
        let mut stack: Vec<(Vec<u8>, f64)> = vec![(Vec::new(), 1.0)];
        while let Some((prefix, weight)) = stack.pop() {
            if prefix.len() == s {
                let mut code = 0usize;
                for (i, &sym) in prefix.iter().enumerate() {
                    code += (sym as usize - 1) * b.pow(i as u32);
                }
                total[code] += weight;
                alive[code] += weight;
                continue;
            }
            for sym in 1..=b as u8 {
                let w = if prefix.is_empty() {
                    h[sym as usize - 1]
                } else {
                    let prev = *prefix.last().unwrap() as usize;
                    let mat = engine.w_at(omega, prefix.len() as i64 - 1);
                    weight * mat[(prev - 1) * b + sym as usize - 1]
                };
                if w == 0.0 {
                    continue;
                }
                let mut next = prefix.clone();
                next.push(sym);
                stack.push((next, w));
            }
        }

        // state digits: oldest symbol lowest; appending symbol a at position
        // t drops the oldest digit and checks the window at offset t - n + 1
        let drop_pow = b.pow(s as u32 - 1);
        let win_pow = (b as u64).pow(n.saturating_sub(1) as u32);
        for t in s..=last_pos {
            let mat = engine.w_at(omega, (t - 1) as i64);
            let mut alive_next = vec![0.0f64; states];
            let mut total_next = vec![0.0f64; states];
            for code in 0..states {
                let tot = total[code];
                if tot == 0.0 {
                    continue;
                }
                let live = alive[code];
                let prev = code / drop_pow; // newest symbol, 0-based
                for a in 0..b {
                    let w = mat[prev * b + a];
                    if w == 0.0 {
                        continue;
                    }
                    let next_code = code / b + a * drop_pow;
                    total_next[next_code] += tot * w;
                    if live > 0.0 {
                        let j = t + 1 - n; // t >= s >= n - 1, so j >= 0
                        let killed = t >= n && j <= k_star && flags[j] && {
                            let wcode = if n == 1 {
                                a as u64
                            } else {
                                code as u64 + a as u64 * win_pow
                            };
                            codes.binary_search(&wcode).is_ok()
                        };
                        if !killed {
                            alive_next[next_code] += live * w;
                        }
                    }
                }
            }
            // joint renormalization keeps the ratio intact
            let mx = total_next.iter().cloned().fold(0.0f64, f64::max);
            for x in total_next.iter_mut() {
                *x /= mx;
            }
            for x in alive_next.iter_mut() {
                *x /= mx;
            }
            total = total_next;
            alive = alive_next;
        }

        let tail_vec = tail.vec(last_pos);
        let mut num = 0.0;
        let mut den = 0.0;
        for code in 0..states {
            let last_sym = code / drop_pow;
            num += alive[code] * tail_vec[last_sym];
            den += total[code] * tail_vec[last_sym];
        }
        num / den
    };

    let mut burn = 32;
    let mut prev = eval(burn);
    loop {
        burn *= 2;
        let cur = eval(burn);
        let gap = (cur - prev).abs();
        if gap < engine.tol {
            return Ok(cur);
        }
        if burn >= crate::gibbs::MAX_BURN {
            return Err(Error::NonConvergence {
                m: burn,
                gap,
                tol: engine.tol,
            });
        }
        prev = cur;
    }
}

/// Interval counts of `mc.samples` sampled realizations, one row per
/// realization in stream order.
pub fn sample_interval_counts(
    engine: &MeasureEngine,
    omega: f64,
    target: &CylinderSet,
    tc: &TimeChange,
    k_star: usize,
    r: &IntervalUnion,
    mc: &MCConfig,
    salt: u64,
) -> Result<Vec<Vec<u32>>> {
    let n = target.depth();
    let plan = engine.sample_plan(omega, k_star + n)?;
    let auto = WindowAutomaton::new(target, engine.sft().alphabet());
    let interval_of: Vec<Option<usize>> = (0..=k_star)
        .map(|k| if k == 0 { None } else { r.locate(tc.t(k)) })
        .collect();
    let n_int = r.count();
    let rows = with_pool(mc.workers, || {
        (0..mc.samples as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(mc.seed, salt, i);
                let mut st = ScanState::default();
                let mut counts = vec![0u32; n_int];
                let mut sym = plan.first(&mut rng);
                auto.step(&mut st, sym);
                for t in 1..plan.len() {
                    sym = plan.next(&mut rng, t - 1, sym);
                    if auto.step(&mut st, sym) && t >= n {
                        let k = t - n + 1;
                        if let Some(idx) = interval_of[k.min(k_star)] {
                            if k <= k_star {
                                counts[idx] += 1;
                            }
                        }
                    }
                }
                counts
            })
            .collect::<Vec<_>>()
    });
    Ok(rows)
}

/// First hitting offsets (`None` = no hit before `k_max`) for sampled paths,
/// with early stopping at the first hit.
pub fn sample_first_hits(
    engine: &MeasureEngine,
    omega: f64,
    target: &CylinderSet,
    k_max: usize,
    mc: &MCConfig,
    salt: u64,
) -> Result<Vec<Option<u32>>> {
    let n = target.depth();
    let plan = engine.sample_plan(omega, k_max + n)?;
    let auto = WindowAutomaton::new(target, engine.sft().alphabet());
    let hits = with_pool(mc.workers, || {
        (0..mc.samples as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(mc.seed, salt, i);
                let mut st = ScanState::default();
                let mut sym = plan.first(&mut rng);
                auto.step(&mut st, sym);
                for t in 1..plan.len() {
                    sym = plan.next(&mut rng, t - 1, sym);
                    if auto.step(&mut st, sym) && t >= n {
                        let k = (t - n + 1) as u32;
                        if k as usize <= k_max {
                            return Some(k);
                        }
                    }
                }
                None
            })
            .collect::<Vec<_>>()
    });
    Ok(hits)
}

/// Monte-Carlo void probability against both the Poisson limit and the
/// exact transfer-matrix oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZeroProbabilityCheck {
    pub estimate: f64,
    pub ci: (f64, f64),
    pub samples: usize,
    pub oracle: f64,
    pub poisson_limit: f64,
    pub k_star: usize,
    pub oracle_in_ci: bool,
    pub error_vs_limit: f64,
}

pub fn mc_zero_probability(
    engine: &MeasureEngine,
    omega: f64,
    target: &CylinderSet,
    r: &IntervalUnion,
    mc: &MCConfig,
) -> Result<ZeroProbabilityCheck> {
    let tc = TimeChange::covering(engine, omega, target, r)?;
    let wc = WindowConstants::compute(&tc, r)?;
    let k_star = wc.k_star;
    let counts = sample_interval_counts(engine, omega, target, &tc, k_star, r, mc, 0x5eed_0001)?;
    let zero = counts.iter().filter(|row| row.iter().all(|&c| c == 0)).count();
    let estimate = zero as f64 / mc.samples as f64;
    let ci = wilson_ci(zero, mc.samples);
    let forbidden: Vec<usize> = (1..=k_star).filter(|&k| r.locate(tc.t(k)).is_some()).collect();
    let oracle = zero_hit_probability_exact(engine, omega, target, &forbidden, k_star)?;
    let poisson_limit = (-r.leb()).exp();
    Ok(ZeroProbabilityCheck {
        estimate,
        ci,
        samples: mc.samples,
        oracle,
        poisson_limit,
        k_star,
        oracle_in_ci: ci.0 <= oracle && oracle <= ci.1,
        error_vs_limit: (estimate - poisson_limit).abs(),
    })
}

/// Sup-distance between the empirical first-hitting survival function and
/// the exponential of the time change.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpLawCheck {
    pub n: usize,
    pub q_n: usize,
    pub k_max: usize,
    pub sup_distance: f64,
    pub samples: usize,
}

pub fn exp_law_error(
    engine: &MeasureEngine,
    omega: f64,
    word: &Word,
    mc: &MCConfig,
    t_target: f64,
) -> Result<ExpLawCheck> {
    let q_n = min_return_q(word);
    if q_n <= 1 && word.len() > 1 {
        return Err(Error::InvalidWord(
            "first-hitting law needs a nonperiodic target word".into(),
        ));
    }
    let target = CylinderSet::single(word.clone());
    let span = IntervalUnion::single(0.0, t_target)?;
    let tc = TimeChange::covering(engine, omega, &target, &span)?;
    let k_max = (1..=tc.horizon())
        .find(|&k| tc.t(k) >= t_target)
        .unwrap_or(tc.horizon());
    let hits = sample_first_hits(engine, omega, &target, k_max, mc, 0x5eed_0002)?;
    let mut hist = vec![0u32; k_max + 2];
    for h in &hits {
        match h {
            Some(k) => hist[*k as usize] += 1,
            None => hist[k_max + 1] += 1,
        }
    }
    // survivors after k = everything hitting strictly later
    let mut later: u64 = 0;
    let mut surv = vec![0.0f64; k_max + 1];
    for k in (0..=k_max).rev() {
        later += hist[k + 1] as u64;
        surv[k] = later as f64 / mc.samples as f64;
    }
    let mut sup = 0.0f64;
    for (k, &sk) in surv.iter().enumerate() {
        sup = sup.max((sk - (-tc.t(k)).exp()).abs());
    }
    Ok(ExpLawCheck {
        n: word.len(),
        q_n,
        k_max,
        sup_distance: sup,
        samples: mc.samples,
    })
}

/// Measures of exact hit patterns over offsets `0..=k`: entry `p` is the
/// measure of paths whose window at offset `j` lies in the target exactly
/// for the bits set in `p`.
pub fn hit_pattern_measures(
    engine: &MeasureEngine,
    omega: f64,
    target: &CylinderSet,
    k: usize,
) -> Result<Vec<f64>> {
    assert!(k <= 20, "pattern window too wide");
    let n = target.depth();
    let len = k + n;
    let b = engine.alphabet();
    let auto = WindowAutomaton::new(target, engine.sft().alphabet());

    let eval = |burn: usize| -> Vec<f64> {
        let tail = engine.tail_sweep(omega, len + burn);
        let h = engine.forward_vector(omega, burn);
        let den: f64 = h.iter().zip(tail.vec(0)).map(|(a, b)| a * b).sum();
        let log_den = den.ln() + tail.scale(0);
        let mut buckets = vec![0.0f64; 1 << (k + 1)];
        // iterative DFS: (depth, symbol, logw, scan state, pattern)
        let mut stack: Vec<(usize, u8, f64, ScanState, u32)> = Vec::new();
        for s in (1..=b as u8).rev() {
            let mut st = ScanState::default();
            let hit = auto.step(&mut st, s);
            debug_assert!(!hit || n == 1);
            let pattern = if hit && n == 1 { 1u32 } else { 0 };
            stack.push((0, s, h[s as usize - 1].ln(), st, pattern));
        }
        while let Some((t, sym, logw, st, pattern)) = stack.pop() {
            if t == len - 1 {
                let log_num = logw + tail.vec(len - 1)[sym as usize - 1].ln() + tail.scale(len - 1);
                buckets[pattern as usize] += (log_num - log_den).exp();
                continue;
            }
            let mat = engine.logw_at(omega, t as i64);
            for next in (1..=b as u8).rev() {
                let lw = mat[(sym as usize - 1) * b + next as usize - 1];
                if lw == f64::NEG_INFINITY {
                    continue;
                }
                let mut st2 = st;
                let hit = auto.step(&mut st2, next);
                let mut pat = pattern;
                if hit && t + 1 >= n - 1 {
                    let j = t + 1 - (n - 1);
                    if j <= k {
                        pat |= 1 << j;
                    }
                }
                stack.push((t + 1, next, logw + lw, st2, pat));
            }
        }
        buckets
    };

    let mut burn = 32;
    let mut prev = eval(burn);
    loop {
        burn *= 2;
        let cur = eval(burn);
        let gap = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if gap < engine.tol {
            return Ok(cur);
        }
        if burn >= crate::gibbs::MAX_BURN {
            return Err(Error::NonConvergence {
                m: burn,
                gap,
                tol: engine.tol,
            });
        }
        prev = cur;
    }
}

/// Subset sums `S[mask] = sum_{p & mask == 0} buckets[p]`, via the zeta
/// transform over the complement.
fn avoid_sums(buckets: &[f64], bits: usize) -> Vec<f64> {
    let full = buckets.len() - 1;
    let mut t = buckets.to_vec();
    for bit in 0..bits {
        for mask in 0..buckets.len() {
            if mask & (1 << bit) != 0 {
                t[mask] += t[mask ^ (1 << bit)];
            }
        }
    }
    (0..buckets.len()).map(|mask| t[full ^ mask]).collect()
}

/// Exact correlation-gap functional and its gapped variant from one bucket
/// table: the sup over offset subsets `I` of
/// `|mu(A ∩ F(I)) - mu(A) mu(F(I))|`.
pub struct DeltaTable {
    k: usize,
    avoid_all: Vec<f64>,
    avoid_hit: Vec<f64>,
    mu_a: f64,
}

impl DeltaTable {
    pub fn new(engine: &MeasureEngine, omega: f64, target: &CylinderSet, k: usize) -> Result<Self> {
        let buckets = hit_pattern_measures(engine, omega, target, k)?;
        let bits = k + 1;
        let hit_only: Vec<f64> = buckets
            .iter()
            .enumerate()
            .map(|(p, &v)| if p & 1 == 1 { v } else { 0.0 })
            .collect();
        let mu_a: f64 = hit_only.iter().sum();
        Ok(DeltaTable {
            k,
            avoid_all: avoid_sums(&buckets, bits),
            avoid_hit: avoid_sums(&hit_only, bits),
            mu_a,
        })
    }

    pub fn mu_a(&self) -> f64 {
        self.mu_a
    }

    /// `Delta(A, k)`: sup over `I ⊆ {1..k}`.
    pub fn delta(&self) -> f64 {
        self.delta_gapped(0)
    }

    /// `Delta(A, k, g)`: sup over `I ⊆ {g+1..k}`; zero when `g >= k`.
    pub fn delta_gapped(&self, g: usize) -> f64 {
        if g >= self.k {
            return 0.0;
        }
        let free_bits: Vec<usize> = (g + 1..=self.k).collect();
        let mut worst = 0.0f64;
        // enumerate subsets of the allowed offsets
        let m = free_bits.len();
        for choice in 0..(1usize << m) {
            let mut mask = 0usize;
            for (i, &bit) in free_bits.iter().enumerate() {
                if choice & (1 << i) != 0 {
                    mask |= 1 << bit;
                }
            }
            let term = (self.avoid_hit[mask] - self.mu_a * self.avoid_all[mask]).abs();
            worst = worst.max(term);
        }
        worst
    }
}

/// `Delta_omega(A, k)` by exhaustive subset enumeration (`k <= 12`).
pub fn brute_delta(engine: &MeasureEngine, omega: f64, target: &CylinderSet, k: usize) -> Result<f64> {
    assert!(k <= 12, "subset enumeration needs k <= 12");
    Ok(DeltaTable::new(engine, omega, target, k)?.delta())
}

/// Exact short-return and short-hitting terms of the decomposition at gap
/// `g`, plus the mixing term reported as its phi-based bound. The phi rate
/// is estimated at the separation actually appearing in the decomposition,
/// `max(g + 1 - depth, 0)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GhkTerms {
    pub g_term: f64,
    pub k_term: f64,
    pub h_bound: f64,
    pub phi_at_gap: f64,
    pub t_k: f64,
}

pub fn ghk_terms(
    engine: &MeasureEngine,
    omega: f64,
    target: &CylinderSet,
    k: usize,
    g: usize,
) -> Result<GhkTerms> {
    assert!(g <= 12);
    let n = target.depth();
    let mut g_term = 0.0;
    let mut k_term = 0.0;
    let mut t_k = 0.0;
    for i in 1..=k {
        let anchor = engine.sft().base().point_at(omega, i as i64);
        let buckets = hit_pattern_measures(engine, anchor, target, g)?;
        let mut mu_a = 0.0;
        let mut mu_a_and_ret = 0.0;
        let mut mu_hit = 0.0;
        let ret_mask: usize = if g == 0 { 0 } else { ((1usize << (g + 1)) - 1) & !1 };
        for (p, &v) in buckets.iter().enumerate() {
            if p & 1 == 1 {
                mu_a += v;
                if p & ret_mask != 0 {
                    mu_a_and_ret += v;
                }
            }
            if p & ret_mask != 0 {
                mu_hit += v;
            }
        }
        g_term += mu_a_and_ret;
        k_term += mu_a * mu_hit;
        t_k += mu_a;
    }
    let sep = (g + 1).saturating_sub(n);
    let phi_at_gap = engine.phi_hat(omega, n, n, sep)?;
    Ok(GhkTerms {
        g_term,
        k_term,
        h_bound: phi_at_gap * t_k,
        phi_at_gap,
        t_k,
    })
}

/// Fibered mixing coefficient series with its log-linear fit. Values below
/// `1e-13` are treated as exact independence and excluded from the fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhiSeries {
    pub gaps: Vec<usize>,
    pub values: Vec<f64>,
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
}

pub fn estimate_phi(
    engine: &MeasureEngine,
    omega: f64,
    n: usize,
    m: usize,
    gaps: &[usize],
) -> Result<PhiSeries> {
    let mut values = Vec::with_capacity(gaps.len());
    for &g in gaps {
        values.push(engine.phi_hat(omega, n, m, g)?);
    }
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v > 1e-13)
        .map(|(&g, &v)| (g as f64, v.ln()))
        .collect();
    let (rate, r_squared) = if pts.len() >= 2 {
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (slope, _, r2) = linear_fit(&xs, &ys);
        (Some(slope), Some(r2))
    } else {
        (None, None)
    };
    Ok(PhiSeries {
        gaps: gaps.to_vec(),
        values,
        rate,
        r_squared,
    })
}

/// Short-return ratio estimates for a target word: `beta0(j)` over shifts
/// `j <= n`, and `beta1(n)` maximized over shifts in `(n, 2n]`, both
/// maximized over a node grid with zero-measure denominators skipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaSeries {
    pub n: usize,
    pub beta0: Vec<(usize, Option<f64>)>,
    pub beta1: Vec<(usize, f64)>,
    pub rate0: Option<f64>,
    pub r2_0: Option<f64>,
    pub rate1: Option<f64>,
    pub r2_1: Option<f64>,
    pub skipped_fibers: usize,
}

pub fn estimate_beta(
    engine: &MeasureEngine,
    nodes: &[f64],
    y: &Word,
    n_lo: usize,
    n_hi: usize,
) -> Result<BetaSeries> {
    assert!(n_lo >= 1 && n_lo <= n_hi && n_hi <= y.len());
    let mut skipped = 0usize;

    let ratio_at = |omega: f64, n: usize, j: usize, skipped: &mut usize| -> Result<Option<f64>> {
        let a = CylinderSet::single(y.prefix(n));
        let den = engine.cylinder_measure(omega, &y.prefix(n))?;
        if den < SKIP_DENOMINATOR {
            *skipped += 1;
            return Ok(None);
        }
        let inter = engine
            .sft()
            .cylinder_intersection(omega, &a, j, &a, engine.word_cap)?;
        let mut num = 0.0;
        for w in inter.words() {
            num += engine.cylinder_measure(omega, w)?;
        }
        Ok(Some(num / den))
    };

    let n = n_hi;
    let mut beta0 = Vec::new();
    for j in 1..=n {
        let mut best: Option<f64> = None;
        for &node in nodes {
            if let Some(v) = ratio_at(node, n, j, &mut skipped)? {
                best = Some(best.unwrap_or(0.0).max(v));
            }
        }
        beta0.push((j, best));
    }

    let mut beta1 = Vec::new();
    for n1 in n_lo..=n_hi {
        let mut worst = 0.0f64;
        for j in n1 + 1..=2 * n1 {
            for &node in nodes {
                if let Some(v) = ratio_at(node, n1, j, &mut skipped)? {
                    worst = worst.max(v);
                }
            }
        }
        beta1.push((n1, worst));
    }

    let fit = |pts: Vec<(f64, f64)>| -> (Option<f64>, Option<f64>) {
        if pts.len() >= 2 {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let (slope, _, r2) = linear_fit(&xs, &ys);
            (Some(slope), Some(r2))
        } else {
            (None, None)
        }
    };
    let (rate0, r2_0) = fit(beta0
        .iter()
        .filter_map(|&(j, v)| v.filter(|&x| x > 1e-13).map(|x| (j as f64, x.ln())))
        .collect());
    let (rate1, r2_1) = fit(beta1
        .iter()
        .filter(|&&(_, v)| v > 1e-13)
        .map(|&(n1, v)| (n1 as f64, v.ln()))
        .collect());

    Ok(BetaSeries {
        n,
        beta0,
        beta1,
        rate0,
        r2_0,
        rate1,
        r2_1,
        skipped_fibers: skipped,
    })
}

/// Uniform Poisson point process on `[0, horizon)`: cumulative sums of unit
/// exponential gaps `-ln U`.
pub fn sample_uniform_ppp<R: Rng>(horizon: f64, rng: &mut R) -> PointProcessRealization {
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        t += -u.ln();
        if t >= horizon {
            break;
        }
        times.push(t);
    }
    PointProcessRealization::from_times(times)
}

/// Goodness of fit of one interval's counts against `Poisson(Leb)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalGof {
    pub interval: (f64, f64),
    pub lambda: f64,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub cells: usize,
    pub merged: bool,
    pub dispersion: f64,
}

/// Pairwise independence of counts across two intervals (contingency test).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairIndependence {
    pub pair: (usize, usize),
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GofReport {
    pub per_interval: Vec<IntervalGof>,
    pub independence: Vec<PairIndependence>,
}

impl GofReport {
    pub fn min_interval_p(&self) -> f64 {
        self.per_interval.iter().map(|g| g.p_value).fold(1.0, f64::min)
    }

    pub fn min_independence_p(&self) -> f64 {
        self.independence.iter().map(|g| g.p_value).fold(1.0, f64::min)
    }
}

/// Merged Poisson categories: `cut_lo` lumps `0..=cut_lo`, `cut_hi` lumps
/// `>= cut_hi`, chosen so every expected cell count is at least 5 where
/// possible.
struct PoissonCells {
    cut_lo: usize,
    cut_hi: usize,
    expected: Vec<f64>,
}

impl PoissonCells {
    fn build(lambda: f64, samples: usize) -> Self {
        let n = samples as f64;
        let mut cut_hi = 1;
        while n * poisson_pmf(cut_hi, lambda) >= 5.0 {
            cut_hi += 1;
        }
        // tail cell must also reach 5 expected
        let tail = |cut: usize| -> f64 {
            let head: f64 = (0..cut).map(|k| poisson_pmf(k, lambda)).sum();
            n * (1.0 - head)
        };
        while cut_hi > 1 && tail(cut_hi) < 5.0 {
            cut_hi -= 1;
        }
        let mut cut_lo = 0;
        while cut_lo + 1 < cut_hi && {
            let head: f64 = (0..=cut_lo).map(|k| poisson_pmf(k, lambda)).sum();
            n * head < 5.0
        } {
            cut_lo += 1;
        }
        let cells = cut_hi - cut_lo + 1;
        let mut expected = vec![0.0; cells];
        for k in 0..=cut_lo {
            expected[0] += n * poisson_pmf(k, lambda);
        }
        for k in cut_lo + 1..cut_hi {
            expected[k - cut_lo] += n * poisson_pmf(k, lambda);
        }
        expected[cells - 1] = n - expected[..cells - 1].iter().sum::<f64>();
        PoissonCells {
            cut_lo,
            cut_hi,
            expected,
        }
    }

    fn cell_of(&self, count: u32) -> usize {
        let c = count as usize;
        if c <= self.cut_lo {
            0
        } else if c >= self.cut_hi {
            self.expected.len() - 1
        } else {
            c - self.cut_lo
        }
    }
}

/// Chi-squared, dispersion, and pairwise-independence tests of interval
/// counts against a unit-rate Poisson point process.
pub fn poisson_gof(counts: &[Vec<u32>], r: &IntervalUnion) -> GofReport {
    let samples = counts.len();
    let mut per_interval = Vec::with_capacity(r.count());
    let mut cells_per_interval = Vec::with_capacity(r.count());
    for (idx, &(lo, hi)) in r.intervals().iter().enumerate() {
        let lambda = hi - lo;
        let cells = PoissonCells::build(lambda, samples);
        let mut observed = vec![0u32; cells.expected.len()];
        let mut raw = Vec::with_capacity(samples);
        for row in counts {
            observed[cells.cell_of(row[idx])] += 1;
            raw.push(row[idx] as f64);
        }
        let chi2: f64 = observed
            .iter()
            .zip(&cells.expected)
            .map(|(&o, &e)| {
                let d = o as f64 - e;
                d * d / e
            })
            .sum();
        let df = cells.expected.len() - 1;
        let (mean, var) = mean_var(&raw);
        per_interval.push(IntervalGof {
            interval: (lo, hi),
            lambda,
            chi2,
            df,
            p_value: chi2_sf(chi2, df as f64),
            cells: cells.expected.len(),
            merged: cells.cut_lo > 0,
            dispersion: if mean > 0.0 { var / mean } else { f64::NAN },
        });
        cells_per_interval.push(cells);
    }

    let mut independence = Vec::new();
    for i in 0..r.count() {
        for j in i + 1..r.count() {
            let ci = &cells_per_interval[i];
            let cj = &cells_per_interval[j];
            let (ri, rj) = (ci.expected.len(), cj.expected.len());
            let mut table = vec![0.0f64; ri * rj];
            for row in counts {
                table[ci.cell_of(row[i]) * rj + cj.cell_of(row[j])] += 1.0;
            }
            let rows: Vec<f64> = (0..ri).map(|a| table[a * rj..(a + 1) * rj].iter().sum()).collect();
            let cols: Vec<f64> = (0..rj).map(|b| (0..ri).map(|a| table[a * rj + b]).sum()).collect();
            let n = samples as f64;
            let mut chi2 = 0.0;
            for a in 0..ri {
                for b in 0..rj {
                    let e = rows[a] * cols[b] / n;
                    if e > 0.0 {
                        let d = table[a * rj + b] - e;
                        chi2 += d * d / e;
                    }
                }
            }
            let df = (ri - 1) * (rj - 1);
            independence.push(PairIndependence {
                pair: (i, j),
                chi2,
                df,
                p_value: chi2_sf(chi2, df as f64),
            });
        }
    }
    GofReport {
        per_interval,
        independence,
    }
}

pub fn realizations_to_counts(res: &[PointProcessRealization], r: &IntervalUnion) -> Vec<Vec<u32>> {
    res.iter()
        .map(|re| re.counts_in(r).iter().map(|&c| c as u32).collect())
        .collect()
}

/// The elementary product inequality: for `x_i in [0, eps]` with
/// `eps <= 1/2`,
/// `exp(-(1+2 eps) sum x) <= prod (1 - x_i) <= exp(-(1-2 eps) sum x)`.
pub fn product_inequality_check(xs: &[f64], eps: f64) -> bool {
    assert!((0.0..=0.5).contains(&eps));
    assert!(xs.iter().all(|&x| (0.0..=eps).contains(&x)));
    let sum: f64 = xs.iter().sum();
    let prod: f64 = xs.iter().map(|&x| 1.0 - x).product();
    let lo = (-(1.0 + 2.0 * eps) * sum).exp();
    let hi = (-(1.0 - 2.0 * eps) * sum).exp();
    lo <= prod + 1e-15 && prod <= hi + 1e-15
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{self, PsiChoice};
    use approx::assert_abs_diff_eq;

    fn bernoulli_engine() -> MeasureEngine {
        scenario::build_bernoulli_oracle(3).unwrap().engine().unwrap()
    }

    fn rot3_engine() -> MeasureEngine {
        scenario::build_rot3(std::f64::consts::SQRT_2 - 1.0, PsiChoice::Zero)
            .unwrap()
            .engine()
            .unwrap()
    }

    #[test]
    fn automaton_finds_overlapping_windows() {
        let target = CylinderSet::single(Word::new(vec![1, 1]));
        let auto = WindowAutomaton::new(&target, 3);
        let mut st = ScanState::default();
        let hits: Vec<bool> = [1, 1, 1, 2, 1, 1]
            .iter()
            .map(|&s| auto.step(&mut st, s))
            .collect();
        assert_eq!(hits, vec![false, true, true, false, false, true]);

        // multi-word rolling path
        let target = CylinderSet::new(2, vec![Word::new(vec![1, 1]), Word::new(vec![2, 3])]).unwrap();
        let auto = WindowAutomaton::new(&target, 3);
        let mut st = ScanState::default();
        let hits: Vec<bool> = [2, 3, 1, 1, 2]
            .iter()
            .map(|&s| auto.step(&mut st, s))
            .collect();
        assert_eq!(hits, vec![false, true, false, true, false]);
    }

    #[test]
    fn k1_exact_on_uniform_steps() {
        let engine = bernoulli_engine();
        let target = CylinderSet::single(Word::new(vec![1, 1]));
        let r = IntervalUnion::single(0.0, 1.0).unwrap();
        let tc = TimeChange::covering(&engine, 0.3, &target, &r).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        let check = check_k1_exact(&tc, &wc, &r);
        assert!(check.pass);
        assert_abs_diff_eq!(check.expected, 1.0, epsilon = 1e-8);

        // two intervals double the bound
        let r2 = IntervalUnion::new(vec![(0.0, 1.0), (1.5, 2.0)]).unwrap();
        let tc2 = TimeChange::covering(&engine, 0.3, &target, &r2).unwrap();
        let wc2 = WindowConstants::compute(&tc2, &r2).unwrap();
        let check2 = check_k1_exact(&tc2, &wc2, &r2);
        assert!(check2.pass);
        assert_abs_diff_eq!(check2.bound, 2.0 * check.bound, epsilon = 1e-12);
    }

    #[test]
    fn zero_hit_oracle_matches_product_for_disjoint_windows() {
        // single symbol target: windows never overlap, so avoidance
        // probabilities multiply exactly
        let engine = bernoulli_engine();
        let target = CylinderSet::single(Word::new(vec![2]));
        let forbidden = [1, 3, 4, 7];
        let p = zero_hit_probability_exact(&engine, 0.3, &target, &forbidden, 8).unwrap();
        let expect = (1.0 - 1.0 / 3.0f64).powi(forbidden.len() as i32);
        assert_abs_diff_eq!(p, expect, epsilon = 1e-10);
    }

    #[test]
    fn zero_hit_oracle_handles_overlap() {
        // target 11 over offsets {1,2}: avoid paths with 11 at 1 or 2.
        // brute force over the 4 symbols involved
        let engine = bernoulli_engine();
        let target = CylinderSet::single(Word::new(vec![1, 1]));
        let p = zero_hit_probability_exact(&engine, 0.3, &target, &[1, 2], 2).unwrap();
        let mut good = 0u32;
        let mut total = 0u32;
        for s in 0..81u32 {
            let syms = [s % 3, (s / 3) % 3, (s / 9) % 3, (s / 27) % 3];
            total += 1;
            let hit1 = syms[1] == 0 && syms[2] == 0;
            let hit2 = syms[2] == 0 && syms[3] == 0;
            if !hit1 && !hit2 {
                good += 1;
            }
        }
        assert_abs_diff_eq!(p, good as f64 / total as f64, epsilon = 1e-10);
    }

    #[test]
    fn mc_zero_probability_bernoulli() {
        let engine = bernoulli_engine();
        let target = CylinderSet::single(Word::new(vec![1, 2, 1, 3]));
        let r = IntervalUnion::single(0.0, 1.0).unwrap();
        let mc = MCConfig {
            samples: 4000,
            seed: 99,
            workers: 2,
        };
        let check = mc_zero_probability(&engine, 0.3, &target, &r, &mc).unwrap();
        assert!(check.oracle_in_ci, "oracle {} ci {:?}", check.oracle, check.ci);
        assert!((check.oracle - check.poisson_limit).abs() < 0.02);
    }

    #[test]
    fn zero_mass_target_never_hits() {
        // word 12 is inadmissible on [3/4, 1); restrict R so every window
        // offset lands on fibers where the target has zero mass
        let engine = rot3_engine();
        let target = CylinderSet::single(Word::new(vec![1, 2]));
        let r = IntervalUnion::single(0.0, 0.05).unwrap();
        let tc = TimeChange::covering(&engine, 0.12, &target, &r).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        // if no window offsets exist the zero count is trivially all samples
        let mc = MCConfig {
            samples: 200,
            seed: 5,
            workers: 1,
        };
        let counts =
            sample_interval_counts(&engine, 0.12, &target, &tc, wc.k_star.max(1), &r, &mc, 1).unwrap();
        let zero = counts.iter().filter(|c| c.iter().all(|&x| x == 0)).count();
        assert!(zero as f64 / 200.0 > 0.9);
    }

    #[test]
    fn exp_law_error_shrinks_with_depth() {
        let engine = bernoulli_engine();
        let mc = MCConfig {
            samples: 3000,
            seed: 123,
            workers: 2,
        };
        let mut sups = Vec::new();
        for n in [1usize, 3] {
            let word = Word::new(
                scenario::fibonacci_word(n)
                    .iter()
                    .map(|&s| s)
                    .collect::<Vec<u8>>(),
            );
            let check = exp_law_error(&engine, 0.3, &word, &mc, 3.0).unwrap();
            assert_eq!(check.n, n);
            sups.push(check.sup_distance);
        }
        assert!(sups[1] < sups[0] + 0.05);
    }

    #[test]
    fn brute_delta_vanishes_for_independent_coordinates() {
        let engine = bernoulli_engine();
        let target = CylinderSet::single(Word::new(vec![2]));
        for k in [1usize, 4] {
            let d = brute_delta(&engine, 0.3, &target, k).unwrap();
            assert!(d < 1e-11, "delta {d} at k={k}");
        }
    }

    #[test]
    fn delta_gapped_is_zero_past_window() {
        let engine = rot3_engine();
        let target = CylinderSet::single(Word::new(vec![1, 2]));
        let table = DeltaTable::new(&engine, 0.12, &target, 4).unwrap();
        assert_eq!(table.delta_gapped(4), 0.0);
        assert_eq!(table.delta_gapped(7), 0.0);
        assert!(table.delta() >= table.delta_gapped(2));
    }

    #[test]
    fn ghk_closed_forms_for_bernoulli() {
        let engine = bernoulli_engine();
        let target = CylinderSet::single(Word::new(vec![2]));
        let p = 1.0f64 / 3.0;
        let (k, g) = (6usize, 3usize);
        let terms = ghk_terms(&engine, 0.3, &target, k, g).unwrap();
        // independence: mu(tau <= g) = 1 - (1-p)^g, windows disjoint
        let tau = 1.0 - (1.0 - p).powi(g as i32);
        assert_abs_diff_eq!(terms.g_term, k as f64 * p * tau, epsilon = 1e-9);
        assert_abs_diff_eq!(terms.k_term, k as f64 * p * tau, epsilon = 1e-9);
        assert!(terms.phi_at_gap < 1e-10);

        let zero = ghk_terms(&engine, 0.3, &target, k, 0).unwrap();
        assert_eq!(zero.g_term, 0.0);
        assert_eq!(zero.k_term, 0.0);
    }

    #[test]
    fn decomposition_inequality_small_instance() {
        // sum_i Delta(A, k-i) <= G + sum_i Delta(A, k-i, g) + K, all exact
        let engine = rot3_engine();
        let target = CylinderSet::single(Word::new(vec![1, 2]));
        let omega = 0.12;
        let k = 5;
        let tables: Vec<DeltaTable> = (1..=k)
            .map(|i| {
                DeltaTable::new(
                    &engine,
                    engine.sft().base().point_at(omega, i as i64),
                    &target,
                    k - i,
                )
                .unwrap()
            })
            .collect();
        let lhs: f64 = tables.iter().map(|t| t.delta()).sum();
        for g in [0usize, 1, 2, 3, 5] {
            let terms = ghk_terms(&engine, omega, &target, k, g).unwrap();
            let h_exact: f64 = tables.iter().map(|t| t.delta_gapped(g)).sum();
            let rhs = terms.g_term + h_exact + terms.k_term;
            assert!(
                lhs <= rhs + 1e-12,
                "g={g}: lhs {lhs} > rhs {rhs}"
            );
        }
    }

    #[test]
    fn small_k_bound_holds() {
        let engine = rot3_engine();
        let target = CylinderSet::single(Word::new(vec![1, 2]));
        let r = IntervalUnion::single(0.0, 0.6).unwrap();
        let tc = TimeChange::covering(&engine, 0.12, &target, &r).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        let eps = tc.max_step();
        for g in [1usize, 2, 4] {
            let terms = ghk_terms(&engine, 0.12, &target, wc.k_star, g).unwrap();
            assert!(
                terms.k_term <= g as f64 * eps * r.sup() + 1e-12,
                "K bound violated at g={g}"
            );
        }
    }

    #[test]
    fn telescoping_bound_small_scale() {
        // |P(no points in R) - prod(1 - mass_j)| <= sum_j Delta(A, k*-j)
        let engine = rot3_engine();
        let target = CylinderSet::single(Word::new(vec![1, 2]));
        let omega = 0.12;
        let r = IntervalUnion::single(0.0, 0.5).unwrap();
        let tc = TimeChange::covering(&engine, omega, &target, &r).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        assert!(wc.k_star <= 10, "instance grew past tiny scale");
        let forbidden: Vec<usize> = (1..=wc.k_star)
            .filter(|&k| r.locate(tc.t(k)).is_some())
            .collect();
        let p_exact =
            zero_hit_probability_exact(&engine, omega, &target, &forbidden, wc.k_star).unwrap();
        let product: f64 = forbidden.iter().map(|&j| 1.0 - tc.mass(j)).product();
        let delta_sum: f64 = forbidden
            .iter()
            .map(|&j| {
                brute_delta(
                    &engine,
                    engine.sft().base().point_at(omega, j as i64),
                    &target,
                    wc.k_star - j,
                )
                .unwrap()
            })
            .sum();
        assert!(
            (p_exact - product).abs() <= delta_sum + 1e-12,
            "lhs {} rhs {}",
            (p_exact - product).abs(),
            delta_sum
        );
    }

    #[test]
    fn phi_series_of_bernoulli_is_flat_zero() {
        let engine = bernoulli_engine();
        let series = estimate_phi(&engine, 0.3, 2, 2, &[0, 1, 2, 3]).unwrap();
        assert!(series.values.iter().all(|&v| v < 1e-10));
        assert!(series.rate.is_none());
    }

    #[test]
    fn beta_examples() {
        let engine = bernoulli_engine();
        // overlap-inconsistent shifts give zero
        let y = Word::new(vec![1, 2, 3, 1, 2, 3]);
        let series = estimate_beta(&engine, &[0.3], &y, 3, 3).unwrap();
        assert_eq!(series.beta0[0], (1, Some(0.0)));
        assert_eq!(series.beta0[1], (2, Some(0.0)));
        assert_abs_diff_eq!(series.beta0[2].1.unwrap(), 27f64.recip(), epsilon = 1e-10);

        // constant word: every shift is consistent, ratio 3^{-j}
        let y = Word::new(vec![1; 5]);
        let series = estimate_beta(&engine, &[0.3], &y, 4, 4).unwrap();
        for (j, v) in &series.beta0 {
            assert_abs_diff_eq!(v.unwrap(), 3f64.powi(-(*j as i32)), epsilon = 1e-9);
        }
        assert!(series.rate0.unwrap() < 0.0);
    }

    #[test]
    fn ppp_oracle_calibration() {
        let horizon = 5.0;
        let n_draws = 10_000;
        let mut counts_02 = Vec::with_capacity(n_draws);
        let r = IntervalUnion::new(vec![(0.0, 1.5), (2.0, 3.5), (4.0, 5.0)]).unwrap();
        let mut rows = Vec::with_capacity(n_draws);
        let mut total_points = 0usize;
        for i in 0..n_draws {
            let mut rng = stream_rng(2024, 0xabcd, i as u64);
            let re = sample_uniform_ppp(horizon, &mut rng);
            total_points += re.len();
            counts_02.push(re.counts_in(&IntervalUnion::single(0.0, 2.0).unwrap())[0] as f64);
            rows.push(re.counts_in(&r).iter().map(|&c| c as u32).collect::<Vec<u32>>());
        }
        // mean count over (0, horizon) is horizon within 3 sigma
        let mean = total_points as f64 / n_draws as f64;
        let sigma = (horizon / n_draws as f64).sqrt();
        assert!((mean - horizon).abs() < 3.0 * sigma + 1e-9);
        // dispersion of counts in (0,2) near 1
        let (m, v) = mean_var(&counts_02);
        assert!((v / m - 1.0).abs() < 0.05);
        // chi-squared and independence calibrate on the oracle
        let report = poisson_gof(&rows, &r);
        assert!(report.min_interval_p() > 0.01, "gof p {}", report.min_interval_p());
        assert!(
            report.min_independence_p() > 0.01,
            "independence p {}",
            report.min_independence_p()
        );
    }

    #[test]
    fn deterministic_lattice_fails_dispersion() {
        let r = IntervalUnion::single(0.0, 2.0).unwrap();
        let rows: Vec<Vec<u32>> = (0..2000)
            .map(|_| {
                let re = PointProcessRealization::from_times(vec![0.5, 1.0, 1.5]);
                re.counts_in(&r).iter().map(|&c| c as u32).collect()
            })
            .collect();
        let report = poisson_gof(&rows, &r);
        let d = report.per_interval[0].dispersion;
        assert!(d < 0.9 || d.is_nan());
        assert!(report.min_interval_p() < 0.01);
    }

    #[test]
    fn product_inequality_randomized() {
        let mut rng = stream_rng(7, 0x1111, 0);
        for _ in 0..10_000 {
            let eps: f64 = 0.5 * rng.random::<f64>();
            let len = rng.random_range(0..12);
            let xs: Vec<f64> = (0..len).map(|_| eps * rng.random::<f64>()).collect();
            assert!(product_inequality_check(&xs, eps));
        }
        assert!(product_inequality_check(&[], 0.3));
        assert!(product_inequality_check(&[0.3], 0.3));
    }

    #[test]
    fn sampling_is_worker_count_independent() {
        let engine = bernoulli_engine();
        let target = CylinderSet::single(Word::new(vec![1, 2]));
        let r = IntervalUnion::single(0.0, 1.0).unwrap();
        let tc = TimeChange::covering(&engine, 0.3, &target, &r).unwrap();
        let wc = WindowConstants::compute(&tc, &r).unwrap();
        let run = |workers: usize| {
            let mc = MCConfig {
                samples: 500,
                seed: 42,
                workers,
            };
            sample_interval_counts(&engine, 0.3, &target, &tc, wc.k_star, &r, &mc, 9).unwrap()
        };
        assert_eq!(run(1), run(4));
    }
}
