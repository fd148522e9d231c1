//! Block-partition bounds and numerical checks of the intermediate
//! inequalities behind them.
//!
//! A [`BlockScheme`] partitions `I` into inner blocks `I_1..I_m` (any
//! shape) and `I^c` into outer blocks `I_{m+1}..` (each an interval of
//! indices). Blocks are numbered from 1, inner blocks first. An
//! [`EnvelopePair`] supplies per-block operator and Hilbert–Schmidt
//! envelopes `(a_r, b_r)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bounds::{cross_gap, level_classes, BoundCertificate};
use crate::error::{Error, Result};
use crate::models::PerturbedPair;
use crate::spectral::{op_norm, same_level, IndexSet, SpectralModel, SymMatrix};

/// Absolute slack for all inequality checks.
pub const SLACK: f64 = 1e-10;

/// Gate threshold for the product condition.
pub const BLOCK_GATE: f64 = 1.0 / 64.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Singletons,
    Eigenlevel,
    /// `I` as one block, `I^c` split into maximal runs of consecutive indices.
    Coarse,
    Custom {
        inner: Vec<IndexSet>,
        outer: Vec<IndexSet>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockScheme {
    set: IndexSet,
    inner: Vec<IndexSet>,
    outer: Vec<IndexSet>,
    g: Vec<f64>,
    /// `g_cross[r][s]` for outer block `r` and inner block `s` (0-based within each group).
    g_cross: Vec<Vec<f64>>,
}

impl BlockScheme {
    pub fn set(&self) -> &IndexSet {
        &self.set
    }

    pub fn inner(&self) -> &[IndexSet] {
        &self.inner
    }

    pub fn outer(&self) -> &[IndexSet] {
        &self.outer
    }

    /// Number of inner blocks `m`.
    pub fn m(&self) -> usize {
        self.inner.len()
    }

    pub fn len(&self) -> usize {
        self.inner.len() + self.outer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block `r` (1-based, inner blocks first).
    pub fn block(&self, r: usize) -> Option<&IndexSet> {
        let m = self.m();
        match r {
            0 => None,
            r if r <= m => self.inner.get(r - 1),
            r => self.outer.get(r - m - 1),
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = &IndexSet> {
        self.inner.iter().chain(self.outer.iter())
    }

    /// `g_r` in block order.
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    /// `min_{i∈I_r, j∈I_s} (λ_i − λ_j)²` for outer `r` and inner `s`, indexed from 0 within each group.
    pub fn g_cross(&self) -> &[Vec<f64>] {
        &self.g_cross
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

fn min_gap(eigs: &[f64], a: &IndexSet, b: &IndexSet) -> f64 {
    let mut g = f64::INFINITY;
    for i in a.iter() {
        for j in b.iter() {
            g = g.min((eigs[i - 1] - eigs[j - 1]).abs());
        }
    }
    g
}

/// Validates a partition and fills in the gap arrays.
pub fn scheme_from_parts(
    eigs: &[f64],
    set: &IndexSet,
    inner: Vec<IndexSet>,
    outer: Vec<IndexSet>,
) -> Result<BlockScheme> {
    let p = eigs.len();
    if set.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    set.check_within(p)?;
    let complement = set.complement(p);
    if complement.is_empty() {
        return Err(Error::InvalidPartition("the complement of I is empty".into()));
    }
    check_partition("inner", &inner, set)?;
    check_partition("outer", &outer, &complement)?;
    if let Some(b) = outer.iter().find(|b| !b.is_interval()) {
        return Err(Error::InvalidPartition(format!("outer block {b} is not an interval")));
    }
    let mut g: Vec<f64> = inner.iter().map(|b| min_gap(eigs, b, &complement)).collect();
    g.extend(outer.iter().map(|b| min_gap(eigs, b, set)));
    let g_cross = outer
        .iter()
        .map(|r| inner.iter().map(|s| sq(min_gap(eigs, r, s))).collect())
        .collect();
    Ok(BlockScheme {
        set: set.clone(),
        inner,
        outer,
        g,
        g_cross,
    })
}

fn check_partition(kind: &str, blocks: &[IndexSet], target: &IndexSet) -> Result<()> {
    let mut seen: Vec<usize> = Vec::new();
    for b in blocks {
        if b.is_empty() {
            return Err(Error::InvalidPartition(format!("{kind} block is empty")));
        }
        for i in b.iter() {
            if !target.contains(i) {
                return Err(Error::InvalidPartition(format!(
                    "{kind} block {b} contains {i} outside {target}"
                )));
            }
            if seen.contains(&i) {
                return Err(Error::InvalidPartition(format!("{kind} blocks overlap at {i}")));
            }
            seen.push(i);
        }
    }
    if seen.len() != target.len() {
        return Err(Error::InvalidPartition(format!("{kind} blocks do not cover {target}")));
    }
    Ok(())
}

/// Splits an index set into maximal intervals of tied eigenvalues.
fn level_runs(eigs: &[f64], set: &IndexSet) -> Vec<IndexSet> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in set.iter() {
        match out.last_mut() {
            Some(run) if *run.last().unwrap() + 1 == i && same_level(eigs[run[0] - 1], eigs[i - 1]) => run.push(i),
            _ => out.push(vec![i]),
        }
    }
    out.into_iter().map(|v| IndexSet::new(v).expect("positive")).collect()
}

pub fn build_scheme(eigs: &[f64], set: &IndexSet, granularity: &Granularity) -> Result<BlockScheme> {
    set.check_within(eigs.len())?;
    let complement = set.complement(eigs.len());
    let singletons = |s: &IndexSet| {
        s.iter()
            .map(|i| IndexSet::new([i]).expect("positive"))
            .collect::<Vec<_>>()
    };
    let (inner, outer) = match granularity {
        Granularity::Singletons => (singletons(set), singletons(&complement)),
        Granularity::Eigenlevel => (level_classes(eigs, set), level_runs(eigs, &complement)),
        Granularity::Coarse => (vec![set.clone()], complement.runs()),
        Granularity::Custom { inner, outer } => (inner.clone(), outer.clone()),
    };
    scheme_from_parts(eigs, set, inner, outer)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePair {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl EnvelopePair {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                found: b.len(),
            });
        }
        if a.iter().chain(&b).any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidParameter("envelopes must be non-negative".into()));
        }
        Ok(EnvelopePair { a, b })
    }

    /// `a_r = b_r = x Σ_{i∈I_r} λ_i`.
    pub fn relative(scheme: &BlockScheme, eigs: &[f64], x: f64) -> Result<Self> {
        let w = block_weights(scheme, eigs);
        let v: Vec<f64> = w.iter().map(|w| x * w).collect();
        EnvelopePair::new(v.clone(), v)
    }

    /// Least relative envelopes valid for `E`: with `w_r = Σ_{I_r} λ`,
    /// `b_r = x_b w_r` and `a_r = x_a w_r`, where `x_b` (resp. `x_a`) is the
    /// largest Hilbert–Schmidt (resp. operator) norm of a block over
    /// `√(w_r w_s)`. Requires positive block weights.
    pub fn measured(scheme: &BlockScheme, eigs: &[f64], coefficients: &DMatrix<f64>) -> Result<Self> {
        let w = block_weights(scheme, eigs);
        if let Some(r) = w.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "block {} has non-positive weight",
                r + 1
            )));
        }
        let table = norm_table(scheme, coefficients);
        let (mut xa, mut xb): (f64, f64) = (0.0, 0.0);
        for (r, row) in table.iter().enumerate() {
            for (s, &(op, hs)) in row.iter().enumerate() {
                let d = (w[r] * w[s]).sqrt();
                xa = xa.max(op / d);
                xb = xb.max(hs / d);
            }
        }
        EnvelopePair::new(w.iter().map(|v| xa * v).collect(), w.iter().map(|v| xb * v).collect())
    }

    /// `a_r = ‖E‖_∞² / ‖E‖₂`, `b_r = ‖E‖₂` for every block.
    pub fn davis_kahan(scheme: &BlockScheme, e: &SymMatrix) -> Result<Self> {
        let hs = e.hs_norm();
        let a = if hs == 0.0 { 0.0 } else { sq(e.op_norm()) / hs };
        EnvelopePair::new(vec![a; scheme.len()], vec![hs; scheme.len()])
    }
}

/// `Σ_{i∈I_r} λ_i` per block.
pub fn block_weights(scheme: &BlockScheme, eigs: &[f64]) -> Vec<f64> {
    scheme.blocks().map(|b| b.iter().map(|i| eigs[i - 1]).sum()).collect()
}

/// `(‖C_rs‖_∞, ‖C_rs‖₂)` for every pair of blocks.
pub fn norm_table(scheme: &BlockScheme, coefficients: &DMatrix<f64>) -> Vec<Vec<(f64, f64)>> {
    let idx: Vec<Vec<usize>> = scheme.blocks().map(|b| b.zero_based()).collect();
    idx.iter()
        .map(|r| {
            idx.iter()
                .map(|s| {
                    let block = DMatrix::from_fn(r.len(), s.len(), |i, j| coefficients[(r[i], s[j])]);
                    let hs = block.norm();
                    (op_norm(&block).min(hs), hs)
                })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeReport {
    pub ok: bool,
    /// Most violating block pair (1-based), when any inequality fails.
    pub offender: Option<(usize, usize)>,
    /// Largest excess of a block norm over its envelope (negative when all hold strictly).
    pub worst_excess: f64,
}

/// Checks `‖P_{I_r} E P_{I_s}‖_∞ ≤ max(√(a_r b_s), √(b_r a_s))` and
/// `‖P_{I_r} E P_{I_s}‖₂ ≤ √(b_r b_s)` for all pairs.
pub fn envelope_check(
    e: &SymMatrix,
    model: &SpectralModel,
    scheme: &BlockScheme,
    env: &EnvelopePair,
) -> Result<EnvelopeReport> {
    let c = model.coefficients(e)?;
    envelope_check_coefficients(&c, scheme, env)
}

pub fn envelope_check_coefficients(
    coefficients: &DMatrix<f64>,
    scheme: &BlockScheme,
    env: &EnvelopePair,
) -> Result<EnvelopeReport> {
    check_env(scheme, env)?;
    let table = norm_table(scheme, coefficients);
    let mut worst = f64::NEG_INFINITY;
    let mut at = (1, 1);
    for (r, row) in table.iter().enumerate() {
        for (s, &(op, hs)) in row.iter().enumerate() {
            let op_env = (env.a[r] * env.b[s]).sqrt().max((env.b[r] * env.a[s]).sqrt());
            let excess = (op - op_env).max(hs - (env.b[r] * env.b[s]).sqrt());
            if excess > worst {
                worst = excess;
                at = (r + 1, s + 1);
            }
        }
    }
    let ok = worst <= SLACK;
    Ok(EnvelopeReport {
        ok,
        offender: if ok { None } else { Some(at) },
        worst_excess: worst,
    })
}

fn check_env(scheme: &BlockScheme, env: &EnvelopePair) -> Result<()> {
    if env.a.len() != scheme.len() || env.b.len() != scheme.len() {
        return Err(Error::DimensionMismatch {
            expected: scheme.len(),
            found: env.a.len().min(env.b.len()),
        });
    }
    Ok(())
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `Σ_r v_r / g_r`, with `0/0 = 0`.
fn weighted(v: &[f64], g: &[f64]) -> f64 {
    v.iter().zip(g).map(|(v, g)| ratio(*v, *g)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem4Result {
    /// Smaller of the two available values, gated by the product condition.
    pub certificate: BoundCertificate,
    /// `12 Σ b_r b_s / g_rs + 256 (Σ b_r/g_r)² Σ a_r b_s / g_rs`.
    pub general: f64,
    /// `16 Σ b_r b_s / g_rs`, present when `a == b` and `Σ b_r / g_r ≤ 1/8`.
    pub simplified: Option<f64>,
    pub sum_a: f64,
    pub sum_b: f64,
    /// Whether the caller verified the envelope inequalities.
    pub envelope_verified: bool,
}

pub fn theorem4_bound(scheme: &BlockScheme, env: &EnvelopePair, envelope_verified: bool) -> Result<Theorem4Result> {
    check_env(scheme, env)?;
    let g = scheme.g();
    let sum_a = weighted(&env.a, g);
    let sum_b = weighted(&env.b, g);
    let condition = if sum_a.is_infinite() || sum_b.is_infinite() {
        f64::INFINITY
    } else {
        sum_a * sum_b
    };
    let m = scheme.m();
    let (mut bb, mut ab) = (0.0, 0.0);
    for (r, row) in scheme.g_cross().iter().enumerate() {
        for (s, &gc) in row.iter().enumerate() {
            bb += ratio(env.b[m + r] * env.b[s], gc);
            ab += ratio(env.a[m + r] * env.b[s], gc);
        }
    }
    let general = 12.0 * bb + 256.0 * sq(sum_b) * ab;
    let simplified = (env.a == env.b && sum_b <= 1.0 / 8.0).then_some(16.0 * bb);
    let best = simplified.map_or(general, |s| s.min(general));
    Ok(Theorem4Result {
        certificate: BoundCertificate::new("thm4", best, condition, BLOCK_GATE),
        general,
        simplified,
        sum_a,
        sum_b,
        envelope_verified,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationEntry {
    pub i: usize,
    pub j: usize,
    /// `|λ̂_i − λ_j|`.
    pub lhs: f64,
    /// `|λ_i − λ_j| / 2`.
    pub rhs: f64,
    pub ok: bool,
}

/// Whether each perturbed eigenvalue in `I` keeps half its distance to
/// every unperturbed eigenvalue outside `I`.
pub fn separation_check(pair: &PerturbedPair, set: &IndexSet) -> Result<Vec<SeparationEntry>> {
    let eigs = pair.eigenvalues();
    let hat = pair.eigenvalues_hat();
    set.check_within(eigs.len())?;
    let mut out = Vec::new();
    for i in set.iter() {
        for j in (1..=eigs.len()).filter(|j| !set.contains(*j)) {
            let lhs = (hat[i - 1] - eigs[j - 1]).abs();
            let rhs = (eigs[i - 1] - eigs[j - 1]).abs() / 2.0;
            out.push(SeparationEntry {
                i,
                j,
                lhs,
                rhs,
                ok: lhs >= rhs - SLACK,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop42Result {
    /// `‖Σ_{k,l≥i} w_k w_l P_k E P_l‖_∞²` with `w_k = (λ_i + y − λ_k)^{-1/2}`.
    pub up_lhs: f64,
    /// `‖Σ_{k,l≤i} w_k w_l P_k E P_l‖_∞²` with `w_k = (λ_k + y − λ_i)^{-1/2}`.
    pub down_lhs: f64,
    /// The upward quantity with weights `(λ_i + y − λ_k)^{-1}`. Not scale
    /// invariant; reported for comparison only.
    pub up_lhs_unrooted: f64,
    pub shift: f64,
    /// `up_lhs ≤ 1 ⇒ λ̂_i − λ_i ≤ y`.
    pub up_implication_ok: bool,
    /// `down_lhs ≤ 1 ⇒ λ̂_i − λ_i ≥ −y`.
    pub down_implication_ok: bool,
}

fn weighted_op_sq(c: &DMatrix<f64>, idx: &[usize], w: &[f64]) -> f64 {
    let m = DMatrix::from_fn(idx.len(), idx.len(), |a, b| w[a] * w[b] * c[(idx[a], idx[b])]);
    sq(op_norm(&m))
}

/// One-sided eigenvalue shift implications for index `i` (1-based) and `y > 0`.
pub fn prop42_check(pair: &PerturbedPair, i: usize, y: f64) -> Result<Prop42Result> {
    let eigs = pair.eigenvalues();
    let p = eigs.len();
    if i == 0 || i > p {
        return Err(Error::IndexOutOfRange { index: i, dim: p });
    }
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::InvalidParameter(format!("shift y must be positive, got {y}")));
    }
    let c = pair.coefficients();
    let li = eigs[i - 1];
    let up: Vec<usize> = (i - 1..p).collect();
    let down: Vec<usize> = (0..i).collect();
    // Differences first: `λ_i + y` rounds to `λ_i` for tiny `y`.
    let w_up: Vec<f64> = up.iter().map(|&k| 1.0 / ((li - eigs[k]) + y).sqrt()).collect();
    let w_up_unrooted: Vec<f64> = up.iter().map(|&k| 1.0 / ((li - eigs[k]) + y)).collect();
    let w_down: Vec<f64> = down.iter().map(|&k| 1.0 / ((eigs[k] - li) + y).sqrt()).collect();
    let up_lhs = weighted_op_sq(c, &up, &w_up);
    let up_lhs_unrooted = weighted_op_sq(c, &up, &w_up_unrooted);
    let down_lhs = weighted_op_sq(c, &down, &w_down);
    let shift = pair.eigenvalues_hat()[i - 1] - li;
    Ok(Prop42Result {
        up_lhs,
        down_lhs,
        up_lhs_unrooted,
        shift,
        up_implication_ok: up_lhs > 1.0 || shift <= y + SLACK,
        down_implication_ok: down_lhs > 1.0 || shift >= -y - SLACK,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionResult {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Shared pieces for contraction checks at a fixed pair and scheme.
struct ContractionContext<'a> {
    scheme: &'a BlockScheme,
    env: &'a EnvelopePair,
    eigs: &'a [f64],
    hat: Vec<f64>,
    /// `Uᵀ E Û_I`: row `k`, column for the `c`-th element of `I`.
    f: DMatrix<f64>,
    set: Vec<usize>,
    sum_b: f64,
}

impl<'a> ContractionContext<'a> {
    fn new(pair: &'a PerturbedPair, scheme: &'a BlockScheme, env: &'a EnvelopePair) -> Result<Self> {
        check_env(scheme, env)?;
        let set = scheme.set();
        set.check_within(pair.dim())?;
        let u = pair.model().eigenvectors();
        let uh = pair.model_hat().basis(set)?;
        let f = u.tr_mul(&(pair.perturbation().as_matrix() * uh));
        Ok(ContractionContext {
            scheme,
            env,
            eigs: pair.eigenvalues(),
            hat: set.iter().map(|i| pair.eigenvalues_hat()[i - 1]).collect(),
            f,
            set: set.iter().collect(),
            sum_b: weighted(&env.b, scheme.g()),
        })
    }

    fn check(&self, r: usize, j: usize) -> Result<ContractionResult> {
        let block = self
            .scheme
            .block(r)
            .ok_or_else(|| Error::InvalidParameter(format!("block {r} does not exist")))?;
        if j == 0 || j > self.eigs.len() || self.scheme.set().contains(j) {
            return Err(Error::InvalidParameter(format!("index {j} must lie outside I")));
        }
        let lj = self.eigs[j - 1];
        let mut lhs = 0.0;
        for (col, (&i, &li_hat)) in self.set.iter().zip(&self.hat).enumerate() {
            let d = li_hat - lj;
            if d == 0.0 {
                return Err(Error::CoincidentEigenvalues { i, j });
            }
            for k in block.iter() {
                lhs += sq(self.f[(k - 1, col)] / d);
            }
        }
        let lhs = lhs.sqrt();
        let mut inner = 0.0;
        for (s, b) in self.scheme.inner().iter().enumerate() {
            let g = b
                .iter()
                .map(|i| sq(self.eigs[i - 1] - lj))
                .fold(f64::INFINITY, f64::min);
            inner += ratio(self.env.b[s], g);
        }
        let rhs = (1.5 * self.env.b[r - 1].sqrt() + 4.0 * self.env.a[r - 1].sqrt() * self.sum_b) * inner.sqrt();
        Ok(ContractionResult {
            lhs,
            rhs,
            ok: lhs <= rhs + SLACK,
        })
    }
}

/// Compares `‖Σ_{i∈I} P_{I_r} E P̂_i / (λ̂_i − λ_j)‖₂` with
/// `(3/2 √b_r + 4 √a_r Σ_s b_s/g_s) √(Σ_{s≤m} b_s / min_{i∈I_s}(λ_i − λ_j)²)`
/// for block `r` (1-based) and `j ∉ I`.
pub fn contraction_check(
    pair: &PerturbedPair,
    scheme: &BlockScheme,
    env: &EnvelopePair,
    r: usize,
    j: usize,
) -> Result<ContractionResult> {
    ContractionContext::new(pair, scheme, env)?.check(r, j)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionSweep {
    pub checked: usize,
    pub violations: usize,
    /// Largest `lhs − rhs` seen.
    pub worst_margin: f64,
}

/// [`contraction_check`] over every block `r` and every `j ∉ I`.
pub fn contraction_sweep(pair: &PerturbedPair, scheme: &BlockScheme, env: &EnvelopePair) -> Result<ContractionSweep> {
    let ctx = ContractionContext::new(pair, scheme, env)?;
    let mut sweep = ContractionSweep {
        checked: 0,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
    };
    for r in 1..=scheme.len() {
        for j in scheme.set().complement(pair.dim()).iter() {
            let res = ctx.check(r, j)?;
            sweep.checked += 1;
            sweep.violations += usize::from(!res.ok);
            sweep.worst_margin = sweep.worst_margin.max(res.lhs - res.rhs);
        }
    }
    Ok(sweep)
}

/// Davis–Kahan-shaped instance: `I` as one block, the runs of `I^c` as
/// outer blocks, and envelopes from `‖E‖_∞` and `‖E‖₂`.
pub fn davis_kahan_shape(eigs: &[f64], set: &IndexSet, e: &SymMatrix) -> Result<Theorem4Result> {
    let scheme = build_scheme(eigs, set, &Granularity::Coarse)?;
    let env = EnvelopePair::davis_kahan(&scheme, e)?;
    theorem4_bound(&scheme, &env, true)
}

/// `16 ‖E‖₂² / g_I²`, the squared closed form of the two-block instance.
pub fn davis_kahan_shape_closed_form(eigs: &[f64], set: &IndexSet, e: &SymMatrix) -> Result<f64> {
    let g = cross_gap(eigs, set)?;
    Ok(16.0 * e.hs_norm().powi(2) / (g * g))
}
