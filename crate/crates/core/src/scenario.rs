//! Prebuilt systems: the three-symbol rotation-driven shift used throughout
//! the verification suite, and the Bernoulli/Markov analytic oracles whose
//! cylinder measures have closed forms.

use serde::{Deserialize, Serialize};

use crate::base::{frac, BaseRotation, IntervalPartition};
use crate::error::{Error, Result};
use crate::gibbs::{MeasureEngine, PotentialSpec};
use crate::sft::{min_return_q, RandomSft, Word};

/// Potential selection for the built-in scenarios.
#[derive(Debug, Clone)]
pub enum PsiChoice {
    /// The zero potential.
    Zero,
    /// A locally constant tilt that favors symbol 1 on `[0, 1/2)` and symbol
    /// 3 on `[1/2, 1)`; it commutes with the 1<->3 half-turn symmetry.
    Tilt(f64),
    Custom(PotentialSpec),
}

/// Half-turn symmetry of a scenario: shifting the base point by `shift`
/// while permuting symbols leaves the sample measures invariant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetrySpec {
    pub shift: f64,
    pub perm: Vec<u8>,
}

impl SymmetrySpec {
    pub fn apply(&self, w: &Word) -> Word {
        Word::new(w.symbols().iter().map(|&s| self.perm[s as usize - 1]).collect())
    }
}

/// Closed-form expected measures attached to oracle scenarios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum OracleKind {
    None,
    Bernoulli { b: u8 },
    Markov { weights: [[f64; 2]; 2] },
}

impl OracleKind {
    /// Exact cylinder measure for oracle scenarios, `None` otherwise.
    pub fn expected_measure(&self, w: &Word) -> Option<f64> {
        match self {
            OracleKind::None => None,
            OracleKind::Bernoulli { b } => {
                Some((*b as f64).powi(-(w.len() as i32)))
            }
            OracleKind::Markov { weights } => {
                let (lam, u, v) = markov_spectral(weights);
                let s = w.symbols();
                let pi = |a: usize| v[a] * u[a] / (v[0] * u[0] + v[1] * u[1]);
                let mut p = pi(s[0] as usize - 1);
                for t in 0..s.len() - 1 {
                    let a = s[t] as usize - 1;
                    let b = s[t + 1] as usize - 1;
                    p *= weights[a][b] * u[b] / (lam * u[a]);
                }
                Some(p)
            }
        }
    }
}

/// Perron data of a positive 2x2 matrix: `(lambda, right, left)`.
fn markov_spectral(m: &[[f64; 2]; 2]) -> (f64, [f64; 2], [f64; 2]) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr - 4.0 * det).sqrt();
    let lam = 0.5 * (tr + disc);
    let u = [m[0][1], lam - m[0][0]];
    let v = [m[1][0], lam - m[0][0]];
    (lam, u, v)
}

/// A named system with its potential, a designated nonperiodic target word,
/// and optional symmetry/oracle structure.
#[derive(Debug, Clone)]
pub struct Scenario {
    name: String,
    sft: RandomSft,
    psi: PotentialSpec,
    default_omega: f64,
    designated: Word,
    symmetry: Option<SymmetrySpec>,
    oracle: OracleKind,
    notes: String,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sft(&self) -> &RandomSft {
        &self.sft
    }

    pub fn psi(&self) -> &PotentialSpec {
        &self.psi
    }

    pub fn default_omega(&self) -> f64 {
        self.default_omega
    }

    pub fn designated_word(&self) -> &Word {
        &self.designated
    }

    pub fn symmetry(&self) -> Option<&SymmetrySpec> {
        self.symmetry.as_ref()
    }

    pub fn oracle(&self) -> &OracleKind {
        &self.oracle
    }

    pub fn notes(&self) -> &str {
        &self.notes
    }

    pub fn engine(&self) -> Result<MeasureEngine> {
        MeasureEngine::new(self.sft.clone(), self.psi.clone())
    }

    /// System summary for the `describe` command: partition, per-cell
    /// matrices, aperiodicity constant, and the shortest-return table of the
    /// designated word.
    pub fn describe(&self, m_max: usize) -> serde_json::Value {
        let cells: Vec<serde_json::Value> = self
            .sft
            .partition()
            .cells()
            .iter()
            .enumerate()
            .map(|(i, (lo, hi))| {
                serde_json::json!({
                    "cell": i,
                    "interval": [lo, hi],
                    "matrix": self.sft.transition_matrix(0.5 * (lo + hi)).rows(),
                })
            })
            .collect();
        let q_table: Vec<usize> = (1..=self.designated.len())
            .map(|n| min_return_q(&self.designated.prefix(n)))
            .collect();
        serde_json::json!({
            "scenario": self.name,
            "alphabet": self.sft.alphabet(),
            "rotation": self.sft.base().angle(),
            "breakpoints": self.sft.partition().breakpoints(),
            "cells": cells,
            "aperiodicity_constant": self.sft.aperiodicity_constant(m_max),
            "default_omega": self.default_omega,
            "designated_word": self.designated.to_string(),
            "min_return_q": q_table,
            "potential_depth": self.psi.depth(),
            "notes": self.notes,
        })
    }
}

/// The three-symbol system driven by an irrational rotation. The transition
/// matrix is the all-ones matrix on `[0, 1/4) ∪ [1/2, 3/4)` and loses the
/// 1<->2 and/or 2<->3 couplings on the other cells, so the admissible
/// alphabet pairs change along every orbit while rows and columns stay
/// nonzero.
pub fn build_rot3(r: f64, psi: PsiChoice) -> Result<Scenario> {
    let base = BaseRotation::new(r, "irrational rotation")?;
    let partition = IntervalPartition::new(&[0.0, 0.25, 0.5, 0.75]);
    let chi_i = |omega: f64| omega < 0.75;
    let chi_j = |omega: f64| omega < 0.25 || omega >= 0.5;
    let sft = RandomSft::from_indicator(base, 3, partition, |omega, i, j| {
        let (i, j) = (i.min(j), i.max(j));
        match (i, j) {
            (1, 2) => chi_i(omega),
            (2, 3) => chi_j(omega),
            (1, 3) => chi_i(omega) && chi_j(omega),
            _ => true,
        }
    })?;
    let (psi_spec, tag) = match psi {
        PsiChoice::Zero => (PotentialSpec::zero(3), "zero"),
        PsiChoice::Tilt(s) => (tilt_potential(s)?, "tilt"),
        PsiChoice::Custom(p) => (p, "custom"),
    };
    let default_omega = 0.12;
    let designated = designated_word(&sft, default_omega, 24);
    Ok(Scenario {
        name: format!("rot3-{tag}"),
        sft,
        psi: psi_spec,
        default_omega,
        designated,
        symmetry: Some(SymmetrySpec {
            shift: 0.5,
            perm: vec![3, 2, 1],
        }),
        oracle: OracleKind::None,
        notes: "three-symbol shift over an irrational rotation; marginal is not mixing".into(),
    })
}

/// The symmetric tilt potential: strength `s` on symbol 1 over `[0, 1/2)`
/// and on symbol 3 over `[1/2, 1)`.
fn tilt_potential(s: f64) -> Result<PotentialSpec> {
    if !s.is_finite() {
        return Err(Error::InvalidPotential("tilt strength must be finite".into()));
    }
    PotentialSpec::from_fn(3, 2, IntervalPartition::new(&[0.0, 0.5]), move |omega, w| {
        if omega < 0.5 {
            if w[0] == 1 { s } else { 0.0 }
        } else if w[0] == 3 {
            s
        } else {
            0.0
        }
    })
}

/// Full shift on `b` symbols with the zero potential: the uniform Bernoulli
/// measure, `mu(C_n) = b^{-n}` exactly.
pub fn build_bernoulli_oracle(b: u8) -> Result<Scenario> {
    let base = BaseRotation::new(std::f64::consts::SQRT_2 - 1.0, "oracle rotation")?;
    let sft = RandomSft::from_indicator(base, b, IntervalPartition::trivial(), |_, _, _| true)?;
    let default_omega = 0.3;
    let designated = designated_word(&sft, default_omega, 24);
    Ok(Scenario {
        name: format!("bernoulli{b}"),
        sft,
        psi: PotentialSpec::zero(b),
        default_omega,
        designated,
        symmetry: None,
        oracle: OracleKind::Bernoulli { b },
        notes: "product-measure oracle with closed-form cylinder measures".into(),
    })
}

/// Full shift on two symbols weighted by `ln` of a positive 2x2 matrix:
/// the stationary chain of the normalized weights, with closed-form
/// measures from the hand eigen-decomposition.
pub fn build_markov_oracle(weights: [[f64; 2]; 2]) -> Result<Scenario> {
    if weights.iter().flatten().any(|&w| !(w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidPotential("markov weights must be positive".into()));
    }
    let base = BaseRotation::new(std::f64::consts::SQRT_2 - 1.0, "oracle rotation")?;
    let sft = RandomSft::from_indicator(base, 2, IntervalPartition::trivial(), |_, _, _| true)?;
    let psi = PotentialSpec::from_fn(2, 2, IntervalPartition::trivial(), |_, w| {
        weights[w[0] as usize - 1][w[1] as usize - 1].ln()
    })?;
    let default_omega = 0.3;
    let designated = designated_word(&sft, default_omega, 24);
    Ok(Scenario {
        name: "markov2".into(),
        sft,
        psi,
        default_omega,
        designated,
        symmetry: None,
        oracle: OracleKind::Markov { weights },
        notes: "two-symbol stationary-chain oracle".into(),
    })
}

/// Greedy nonperiodic target word: follow the binary Fibonacci word
/// (substitution 1 -> 12, 2 -> 1) along the orbit of `omega`, holding the
/// current symbol whenever the desired transition is not admissible, and
/// falling back to the smallest admissible symbol otherwise. Nonperiodicity
/// is validated by the shortest-return table at runtime, never assumed.
pub fn designated_word(sft: &RandomSft, omega: f64, len: usize) -> Word {
    let fib = fibonacci_word(4 * len + 8);
    let mut syms: Vec<u8> = vec![fib[0]];
    let mut next_fib = 1usize;
    while syms.len() < len {
        let pos = (syms.len() - 1) as i64;
        let prev = *syms.last().unwrap();
        let want = fib[next_fib];
        let chosen = if sft.entry_at(omega, pos, prev, want) {
            next_fib += 1;
            want
        } else if sft.entry_at(omega, pos, prev, prev) {
            prev
        } else {
            (1..=sft.alphabet())
                .find(|&s| sft.entry_at(omega, pos, prev, s))
                .expect("rows are nonzero")
        };
        syms.push(chosen);
    }
    Word::new(syms)
}

/// Prefix of the Fibonacci word over `{1, 2}`.
pub fn fibonacci_word(len: usize) -> Vec<u8> {
    let mut s = vec![1u8];
    while s.len() < len {
        let mut next = Vec::with_capacity(s.len() * 2);
        for &c in &s {
            if c == 1 {
                next.extend_from_slice(&[1, 2]);
            } else {
                next.push(1);
            }
        }
        s = next;
    }
    s.truncate(len);
    s
}

/// Positivity criterion for a target word: some positive-length cell of the
/// depth-`n` refinement admits its prefix, which makes the marginal measure
/// of the corresponding cylinder positive.
pub fn word_supported(sft: &RandomSft, y: &Word, n: usize) -> bool {
    let prefix = y.prefix(n);
    let refined = sft.partition().refine(sft.base(), n.max(1));
    refined.cells().iter().any(|&(lo, hi)| {
        hi - lo > 1e-9 && sft.is_admissible(0.5 * (lo + hi), &prefix)
    })
}

/// Result of the half-turn symmetry identity check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub applicable: bool,
    pub psi_deviation: f64,
    pub max_deviation: f64,
    pub nodes: usize,
    pub words: usize,
}

/// Verify `mu_omega(C_n(w)) = mu_{omega+shift}(C_n(w'))` over a node grid,
/// where `w'` swaps symbols by the scenario's involution. The potential must
/// itself respect the symmetry; otherwise the check is inapplicable rather
/// than failed.
pub fn symmetry_check(
    engine: &MeasureEngine,
    scenario: &Scenario,
    n: usize,
    nodes: &[f64],
) -> Result<SymmetryReport> {
    let Some(sym) = scenario.symmetry() else {
        return Ok(SymmetryReport {
            applicable: false,
            psi_deviation: f64::NAN,
            max_deviation: f64::NAN,
            nodes: 0,
            words: 0,
        });
    };
    let psi_dev = psi_symmetry_deviation(scenario.psi(), sym);
    if psi_dev > 1e-12 {
        return Ok(SymmetryReport {
            applicable: false,
            psi_deviation: psi_dev,
            max_deviation: f64::NAN,
            nodes: 0,
            words: 0,
        });
    }
    let mut max_dev = 0.0f64;
    let mut words = 0usize;
    for &omega in nodes {
        let here = engine.measure_table(omega, n)?;
        let there = engine.measure_table(frac(omega + sym.shift), n)?;
        for (w, p) in here.entries() {
            let swapped = sym.apply(w);
            max_dev = max_dev.max((p - there.prob(&swapped)).abs());
            words += 1;
        }
    }
    Ok(SymmetryReport {
        applicable: true,
        psi_deviation: psi_dev,
        max_deviation: max_dev,
        nodes: nodes.len(),
        words,
    })
}

/// Worst deviation of `psi(omega, w)` from `psi(omega+shift, w')` over a
/// fine probe grid and all symbol windows.
fn psi_symmetry_deviation(psi: &PotentialSpec, sym: &SymmetrySpec) -> f64 {
    let b = psi.alphabet();
    let k = psi.depth() as usize;
    let words: Vec<Vec<u8>> = all_windows(b, k);
    let mut worst = 0.0f64;
    let probes = 512;
    for i in 0..probes {
        let omega = (i as f64 + 0.5) / probes as f64;
        let shifted = frac(omega + sym.shift);
        for w in &words {
            let swapped: Vec<u8> = w.iter().map(|&s| sym.perm[s as usize - 1]).collect();
            worst = worst.max((psi.value(omega, w) - psi.value(shifted, &swapped)).abs());
        }
    }
    worst
}

fn all_windows(b: u8, k: usize) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = vec![vec![]];
    for _ in 0..k {
        let mut next = Vec::new();
        for w in &out {
            for s in 1..=b {
                let mut v = w.clone();
                v.push(s);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Result of the marginal non-mixing demonstration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonmixingReport {
    pub support_ok: bool,
    pub marginal: f64,
    pub marginal_sq: f64,
    pub j_integral: f64,
    pub gap: f64,
    pub quad_error: f64,
    pub correlations: Vec<(u64, f64)>,
    pub final_dist_to_j: f64,
    pub final_dist_to_marginal_sq: f64,
}

/// Quadrature demonstration that the marginal measure fails to mix: the
/// second moment `J` of `omega -> mu_omega(C(x))` exceeds the squared
/// marginal, and along times whose rotation offset approaches the symmetry
/// shift the correlation integral approaches `J` instead of the square.
pub fn nonmixing_gap(
    engine: &MeasureEngine,
    scenario: &Scenario,
    x: &Word,
    approach: &[u64],
    resolution: usize,
) -> Result<NonmixingReport> {
    let shift = scenario.symmetry().map(|s| s.shift).unwrap_or(0.5);
    let base = engine.sft().base().clone();
    let eval_grid = |ppc: usize| -> Result<(Vec<(f64, f64)>, Vec<f64>)> {
        let grid = IntervalPartition::trivial().quadrature_grid(ppc);
        let mut vals = Vec::with_capacity(grid.len());
        for &(node, _) in &grid {
            vals.push(engine.cylinder_measure(node, x)?);
        }
        Ok((grid, vals))
    };

    let (grid_c, vals_c) = eval_grid(resolution)?;
    let (grid_f, vals_f) = eval_grid(resolution * 2)?;
    let integrate = |grid: &[(f64, f64)], vals: &[f64], f: &dyn Fn(usize, f64) -> f64| -> f64 {
        grid.iter()
            .zip(vals)
            .enumerate()
            .map(|(i, ((_, w), &v))| w * f(i, v))
            .sum()
    };
    let j_c = integrate(&grid_c, &vals_c, &|_, v| v * v);
    let j_f = integrate(&grid_f, &vals_f, &|_, v| v * v);
    let m_c = integrate(&grid_c, &vals_c, &|_, v| v);
    let m_f = integrate(&grid_f, &vals_f, &|_, v| v);
    let quad_error = (j_f - j_c).abs() + (m_f * m_f - m_c * m_c).abs();

    // support matches admissibility of the word at the anchor
    let support_ok = grid_f.iter().zip(&vals_f).all(|(&(node, _), &v)| {
        let admissible = engine.sft().is_admissible(node, x);
        if admissible {
            v > 0.0
        } else {
            v == 0.0
        }
    });

    let mut correlations = Vec::with_capacity(approach.len());
    for &k in approach {
        let mut corr = 0.0;
        for (&(node, w), &v) in grid_f.iter().zip(&vals_f) {
            if v == 0.0 {
                continue;
            }
            let shifted = frac(node + shift + k as f64 * base.angle());
            corr += w * v * engine.cylinder_measure(shifted, x)?;
        }
        correlations.push((k, corr));
    }
    let last = correlations.last().map(|&(_, c)| c).unwrap_or(f64::NAN);
    Ok(NonmixingReport {
        support_ok,
        marginal: m_f,
        marginal_sq: m_f * m_f,
        j_integral: j_f,
        gap: j_f - m_f * m_f,
        quad_error,
        correlations,
        final_dist_to_j: (last - j_f).abs(),
        final_dist_to_marginal_sq: (last - m_f * m_f).abs(),
    })
}
