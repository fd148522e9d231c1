//! Bounds for a single index set `I`: relative rank, Davis–Kahan, the
//! first-order expansion with its remainder, and the relative bounds gated
//! by `x · r_I ≤ 1/8`.
//!
//! Zero gaps produce `+inf` rather than errors so that Monte Carlo trials on
//! degenerate draws can be recorded as inapplicable.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::PerturbedPair;
use crate::spectral::{op_norm, projector, same_level, IndexSet, SymMatrix};

/// Gate threshold for the relative bounds.
pub const RELATIVE_GATE: f64 = 1.0 / 8.0;

/// A bound on `‖P̂_I − P_I‖₂²` together with the condition that gates it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub label: String,
    pub bound_value: f64,
    pub condition_value: f64,
    pub condition_threshold: f64,
    pub applicable: bool,
}

impl BoundCertificate {
    pub fn new(label: &str, bound_value: f64, condition_value: f64, condition_threshold: f64) -> Self {
        BoundCertificate {
            label: label.to_string(),
            bound_value,
            condition_value,
            condition_threshold,
            applicable: condition_value <= condition_threshold,
        }
    }

    /// Whether `distance_sq` respects the bound (vacuously true when inapplicable).
    pub fn holds_for(&self, distance_sq: f64, slack: f64) -> bool {
        !self.applicable || distance_sq <= self.bound_value + slack
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DkMode {
    /// `2√2 ‖E‖₂ / g_I`.
    Hs,
    /// `2√2 √|I| ‖E‖_∞ / g_I`.
    Op,
}

#[derive(Clone, Debug)]
pub struct FirstOrderResult {
    /// `Σ_{i∈I} Σ_{j∉I} (P_i E P_j + P_j E P_i) / (λ_i − λ_j)`.
    pub linear_term: SymMatrix,
    pub linear_hs_sq: f64,
    /// `|I| δ² / (1 − δ)`, `+inf` once `δ ≥ 1`.
    pub remainder_op_bound: f64,
    /// `2 ‖E‖_∞ / g_I`.
    pub delta: f64,
}

fn check_set(eigs: &[f64], set: &IndexSet) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    if eigs.is_empty() {
        return Err(Error::InvalidParameter("empty spectrum".into()));
    }
    set.check_within(eigs.len())
}

fn check_positive(eigs: &[f64]) -> Result<()> {
    match eigs.iter().position(|v| !(*v > 0.0)) {
        Some(i) => Err(Error::NonPositiveEigenvalue {
            index: i + 1,
            value: eigs[i],
        }),
        None => Ok(()),
    }
}

/// `g_I = min_{i∈I, j∉I} |λ_i − λ_j|`; `+inf` when `I` covers everything.
pub fn cross_gap(eigs: &[f64], set: &IndexSet) -> Result<f64> {
    check_set(eigs, set)?;
    let mut gap = f64::INFINITY;
    for i in set.iter() {
        for j in (1..=eigs.len()).filter(|j| !set.contains(*j)) {
            gap = gap.min((eigs[i - 1] - eigs[j - 1]).abs());
        }
    }
    Ok(gap)
}

/// `Σ_{i∈I} Σ_{j∉I} λ_i λ_j / (λ_i − λ_j)²`; `+inf` on a zero cross gap.
pub fn cross_sum(eigs: &[f64], set: &IndexSet) -> Result<f64> {
    check_set(eigs, set)?;
    let mut s = 0.0;
    for i in set.iter() {
        for j in (1..=eigs.len()).filter(|j| !set.contains(*j)) {
            let (li, lj) = (eigs[i - 1], eigs[j - 1]);
            let d = li - lj;
            if d == 0.0 {
                return Ok(f64::INFINITY);
            }
            s += li * lj / (d * d);
        }
    }
    Ok(s)
}

/// Relative rank of `I`:
/// `Σ_{i∈I} λ_i / min_{j∉I}|λ_i − λ_j| + Σ_{j∉I} λ_j / min_{i∈I}|λ_j − λ_i|`.
///
/// Returns `+inf` on a zero gap. Only the `p` given eigenvalues enter, so a
/// set covering all of `1..=p` has rank 0.
pub fn relative_rank(eigs: &[f64], set: &IndexSet) -> Result<f64> {
    check_set(eigs, set)?;
    check_positive(eigs)?;
    let complement = set.complement(eigs.len());
    let side = |from: &IndexSet, to: &IndexSet| -> f64 {
        from.iter()
            .map(|i| {
                let li = eigs[i - 1];
                let gap = to
                    .iter()
                    .map(|j| (li - eigs[j - 1]).abs())
                    .fold(f64::INFINITY, f64::min);
                li / gap
            })
            .sum()
    };
    Ok(side(set, &complement) + side(&complement, set))
}

/// Indices whose eigenvalue ties with `λ_k` (relative tolerance
/// [`TIE_TOLERANCE`](crate::spectral::TIE_TOLERANCE)).
pub fn eigenlevel(eigs: &[f64], k: usize) -> Result<IndexSet> {
    if k == 0 || k > eigs.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            dim: eigs.len(),
        });
    }
    let lk = eigs[k - 1];
    IndexSet::new((1..=eigs.len()).filter(|&i| same_level(eigs[i - 1], lk)))
}

/// Relative rank of the eigenvalue level of `λ_k`, computed as
/// `m_k λ_k / g_k + Σ_{λ_j ≠ λ_k} λ_j / |λ_j − λ_k|`.
pub fn relative_rank_eigenlevel(eigs: &[f64], k: usize) -> Result<f64> {
    let level = eigenlevel(eigs, k)?;
    check_positive(eigs)?;
    if level.len() == eigs.len() {
        return Err(Error::DegenerateSpectrum);
    }
    let lk = eigs[k - 1];
    let mut gap = f64::INFINITY;
    let mut tail = 0.0;
    for j in (1..=eigs.len()).filter(|j| !level.contains(*j)) {
        let d = (eigs[j - 1] - lk).abs();
        gap = gap.min(d);
        tail += eigs[j - 1] / d;
    }
    Ok(level.len() as f64 * lk / gap + tail)
}

/// Relative rank of `{1, …, k}` via the closed form
/// `Σ_{i≤k} λ_i/(λ_i − λ_{k+1}) + Σ_{j>k} λ_j/(λ_k − λ_j)`, with
/// `λ_{p+1} = 0`. `+inf` when `λ_k = λ_{k+1}`.
pub fn relative_rank_topk(eigs: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > eigs.len() {
        return Err(Error::IndexOutOfRange {
            index: k,
            dim: eigs.len(),
        });
    }
    check_positive(eigs)?;
    let lk = eigs[k - 1];
    let next = eigs.get(k).copied().unwrap_or(0.0);
    if lk == next {
        return Ok(f64::INFINITY);
    }
    let head: f64 = eigs[..k].iter().map(|l| l / (l - next)).sum();
    let tail: f64 = eigs[k..].iter().map(|l| l / (lk - l)).sum();
    Ok(head + tail)
}

/// Davis–Kahan bound on `‖P̂_I − P_I‖₂` (not squared). `+inf` on a zero gap.
pub fn davis_kahan_bound(e: &SymMatrix, eigs: &[f64], set: &IndexSet, mode: DkMode) -> Result<f64> {
    if e.dim() != eigs.len() {
        return Err(Error::DimensionMismatch {
            expected: eigs.len(),
            found: e.dim(),
        });
    }
    let gap = cross_gap(eigs, set)?;
    if gap == 0.0 {
        return Ok(f64::INFINITY);
    }
    let norm = match mode {
        DkMode::Hs => e.hs_norm(),
        DkMode::Op => (set.len() as f64).sqrt() * e.op_norm(),
    };
    Ok(2.0 * std::f64::consts::SQRT_2 * norm / gap)
}

/// First-order expansion of `P̂_I − P_I` and the operator-norm bound on its
/// remainder.
pub fn first_order(pair: &PerturbedPair, set: &IndexSet) -> Result<FirstOrderResult> {
    let eigs = pair.eigenvalues();
    let gap = cross_gap(eigs, set)?;
    if gap == 0.0 {
        return Err(Error::ZeroGap);
    }
    let p = eigs.len();
    let c = pair.coefficients();
    let mut m = DMatrix::<f64>::zeros(p, p);
    for i in set.zero_based() {
        for j in (0..p).filter(|j| !set.contains(j + 1)) {
            let v = c[(i, j)] / (eigs[i] - eigs[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let linear_hs_sq = m.norm_squared();
    let u = pair.model().eigenvectors();
    let linear_term = SymMatrix::from_matrix(u * m * u.transpose())?;
    let delta = if gap.is_infinite() {
        0.0
    } else {
        2.0 * pair.perturbation().op_norm() / gap
    };
    let remainder_op_bound = if delta < 1.0 {
        set.len() as f64 * delta * delta / (1.0 - delta)
    } else {
        f64::INFINITY
    };
    Ok(FirstOrderResult {
        linear_term,
        linear_hs_sq,
        remainder_op_bound,
        delta,
    })
}

/// `‖(P̂_I − P_I) − L‖_∞` for the linear term `L` of [`first_order`].
pub fn first_order_residual(pair: &PerturbedPair, set: &IndexSet, fo: &FirstOrderResult) -> Result<f64> {
    let p = projector(pair.model(), set)?;
    let ph = projector(pair.model_hat(), set)?;
    let r = ph.as_matrix() - p.as_matrix() - fo.linear_term.as_matrix();
    Ok(op_norm(&r))
}

/// `max_{i,j} |C_ij| / √(λ_i λ_j)` for a coefficient matrix `C`.
pub fn coefficient_envelope_from(eigs: &[f64], coefficients: &DMatrix<f64>) -> Result<f64> {
    check_positive(eigs)?;
    let p = eigs.len();
    if coefficients.nrows() != p || coefficients.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: coefficients.nrows(),
        });
    }
    let mut x: f64 = 0.0;
    for j in 0..p {
        for i in 0..p {
            x = x.max(coefficients[(i, j)].abs() / (eigs[i] * eigs[j]).sqrt());
        }
    }
    Ok(x)
}

/// Least `x` with `‖P_i E P_j‖₂ ≤ x √(λ_i λ_j)` for all `i, j`.
pub fn coefficient_envelope(pair: &PerturbedPair) -> Result<f64> {
    coefficient_envelope_from(pair.eigenvalues(), pair.coefficients())
}

fn check_x(x: f64) -> Result<()> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "envelope x must be finite and non-negative, got {x}"
        )));
    }
    Ok(())
}

fn gate(x: f64, rank: f64) -> f64 {
    if rank.is_infinite() {
        f64::INFINITY
    } else {
        x * rank
    }
}

fn scaled(c: f64, x: f64, s: f64) -> f64 {
    if s.is_infinite() {
        f64::INFINITY
    } else {
        c * (x * x) * s
    }
}

/// `16 x² Σ_{i∈I} Σ_{j∉I} λ_i λ_j / (λ_i − λ_j)²`, gated by `x r_I ≤ 1/8`.
pub fn theorem2_bound(eigs: &[f64], x: f64, set: &IndexSet) -> Result<BoundCertificate> {
    check_x(x)?;
    let rank = relative_rank(eigs, set)?;
    let s = cross_sum(eigs, set)?;
    Ok(BoundCertificate::new(
        "thm2",
        scaled(16.0, x, s),
        gate(x, rank),
        RELATIVE_GATE,
    ))
}

/// The two terms of the refined bound:
/// `8 Σ ‖P_i E P_j‖₂² / (λ_i − λ_j)²` and `512 x² r_I² Σ λ_i λ_j / (λ_i − λ_j)²`.
pub fn refined_terms(pair: &PerturbedPair, x: f64, set: &IndexSet) -> Result<(f64, f64)> {
    check_x(x)?;
    let eigs = pair.eigenvalues();
    let rank = relative_rank(eigs, set)?;
    let s = cross_sum(eigs, set)?;
    if s.is_infinite() {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let c = pair.coefficients();
    let mut exact = 0.0;
    for i in set.zero_based() {
        for j in (0..eigs.len()).filter(|j| !set.contains(j + 1)) {
            let d = eigs[i] - eigs[j];
            exact += c[(i, j)] * c[(i, j)] / (d * d);
        }
    }
    Ok((8.0 * exact, 512.0 * (x * x) * (rank * rank) * s))
}

/// Sum of [`refined_terms`], gated like [`theorem2_bound`].
pub fn refined_bound(pair: &PerturbedPair, x: f64, set: &IndexSet) -> Result<BoundCertificate> {
    let (exact, envelope) = refined_terms(pair, x, set)?;
    let rank = relative_rank(pair.eigenvalues(), set)?;
    Ok(BoundCertificate::new(
        "refined",
        exact + envelope,
        gate(x, rank),
        RELATIVE_GATE,
    ))
}

/// Minimal `I' ⊇ I` with `|λ_i − λ_j| ≥ λ_i / 2` for all `i ∈ I`, `j ∉ I'`.
pub fn build_iprime(eigs: &[f64], set: &IndexSet) -> Result<IndexSet> {
    check_set(eigs, set)?;
    check_positive(eigs)?;
    let extra = (1..=eigs.len()).filter(|&j| {
        !set.contains(j)
            && set
                .iter()
                .any(|i| (eigs[i - 1] - eigs[j - 1]).abs() < eigs[i - 1] / 2.0)
    });
    Ok(set.union(&IndexSet::new(extra)?))
}

/// Errors unless `iprime ⊇ set` and the half-gap requirement holds.
pub fn check_iprime(eigs: &[f64], set: &IndexSet, iprime: &IndexSet) -> Result<()> {
    check_set(eigs, set)?;
    iprime.check_within(eigs.len())?;
    if !set.is_subset_of(iprime) {
        return Err(Error::InvalidPartition(format!("{iprime} does not contain {set}")));
    }
    for i in set.iter() {
        for j in (1..=eigs.len()).filter(|j| !iprime.contains(*j)) {
            if (eigs[i - 1] - eigs[j - 1]).abs() < eigs[i - 1] / 2.0 {
                return Err(Error::SupersetGapViolation { i, j });
            }
        }
    }
    Ok(())
}

/// Splits `set` into classes of tied eigenvalues, in index order.
pub fn level_classes(eigs: &[f64], set: &IndexSet) -> Vec<IndexSet> {
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for i in set.iter() {
        match classes.iter_mut().find(|c| same_level(eigs[c[0] - 1], eigs[i - 1])) {
            Some(c) => c.push(i),
            None => classes.push(vec![i]),
        }
    }
    classes
        .into_iter()
        .map(|c| IndexSet::new(c).expect("indices are positive"))
        .collect()
}

/// Blocks of the extended relative condition: level classes of `I`, level
/// classes of `I' \ I`, then `I'^c` (when non-empty).
pub fn theorem3_blocks(eigs: &[f64], set: &IndexSet, iprime: &IndexSet) -> Vec<IndexSet> {
    let extra = IndexSet::new(iprime.iter().filter(|i| !set.contains(*i))).expect("positive");
    let mut blocks = level_classes(eigs, set);
    blocks.extend(level_classes(eigs, &extra));
    let far = iprime.complement(eigs.len());
    if !far.is_empty() {
        blocks.push(far);
    }
    blocks
}

/// Least `x` with `‖P_{I_r} E P_{I_s}‖₂ ≤ x √(Σ_{I_r} λ) √(Σ_{I_s} λ)` over
/// all pairs of [`theorem3_blocks`].
pub fn theorem3_envelope(pair: &PerturbedPair, set: &IndexSet, iprime: &IndexSet) -> Result<f64> {
    let eigs = pair.eigenvalues();
    check_positive(eigs)?;
    check_iprime(eigs, set, iprime)?;
    let blocks = theorem3_blocks(eigs, set, iprime);
    let weights: Vec<f64> = blocks.iter().map(|b| b.iter().map(|i| eigs[i - 1]).sum()).collect();
    let c = pair.coefficients();
    let mut x: f64 = 0.0;
    for (r, br) in blocks.iter().enumerate() {
        for (s, bs) in blocks.iter().enumerate() {
            let mut hs = 0.0;
            for i in br.iter() {
                for j in bs.iter() {
                    hs += c[(i - 1, j - 1)] * c[(i - 1, j - 1)];
                }
            }
            x = x.max(hs.sqrt() / (weights[r] * weights[s]).sqrt());
        }
    }
    Ok(x)
}

/// `64 x² Σ_{i∈I} Σ_{j∉I} λ_i λ_j / (λ_i − λ_j)²`, gated by `x r_I ≤ 1/8`.
pub fn theorem3_bound_with_x(eigs: &[f64], x: f64, set: &IndexSet) -> Result<BoundCertificate> {
    check_x(x)?;
    let rank = relative_rank(eigs, set)?;
    let s = cross_sum(eigs, set)?;
    Ok(BoundCertificate::new(
        "thm3",
        scaled(64.0, x, s),
        gate(x, rank),
        RELATIVE_GATE,
    ))
}

/// [`theorem3_bound_with_x`] with `x` measured by [`theorem3_envelope`].
pub fn theorem3_bound(pair: &PerturbedPair, set: &IndexSet, iprime: &IndexSet) -> Result<BoundCertificate> {
    let x = theorem3_envelope(pair, set, iprime)?;
    theorem3_bound_with_x(pair.eigenvalues(), x, set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Provenance;
    use crate::spectral::hs_distance_sq;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn running(eps: f64) -> PerturbedPair {
        let s = SymMatrix::diagonal(&[2.0, 1.0]);
        let sh = SymMatrix::from_rows(&[vec![2.0, eps], vec![eps, 1.0]]).unwrap();
        PerturbedPair::new(s, sh, Provenance::fixed("running")).unwrap()
    }

    fn prototype(eigs: &[f64], x0: f64) -> PerturbedPair {
        let v: Vec<f64> = eigs.iter().map(|l| l.sqrt()).collect();
        let e = SymMatrix::from_fn(eigs.len(), |i, j| x0 * v[i] * v[j]).unwrap();
        PerturbedPair::from_perturbation(SymMatrix::diagonal(eigs), &e, Provenance::fixed("prototype")).unwrap()
    }

    fn s(v: &[usize]) -> IndexSet {
        IndexSet::new(v.iter().copied()).unwrap()
    }

    #[test]
    fn relative_rank_examples() {
        assert_abs_diff_eq!(relative_rank(&[2.0, 1.0], &s(&[1])).unwrap(), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            relative_rank(&[0.5, 0.25, 0.125], &s(&[1])).unwrap(),
            10.0 / 3.0,
            epsilon = 1e-14
        );
        assert!(relative_rank(&[1.0, 1.0, 0.5], &s(&[1])).unwrap().is_infinite());
        assert!(matches!(
            relative_rank(&[1.0, 0.0], &s(&[1])),
            Err(Error::NonPositiveEigenvalue { index: 2, .. })
        ));
        assert_eq!(relative_rank(&[2.0, 1.0], &s(&[1, 2])).unwrap(), 0.0);
    }

    #[test]
    fn relative_rank_special_forms() {
        assert_abs_diff_eq!(relative_rank_eigenlevel(&[2.0, 1.0], 1).unwrap(), 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            relative_rank_eigenlevel(&[3.0, 2.0, 2.0, 1.0], 2).unwrap(),
            8.0,
            epsilon = 1e-14
        );
        assert!(matches!(
            relative_rank_eigenlevel(&[1.0, 1.0], 1),
            Err(Error::DegenerateSpectrum)
        ));
        assert_abs_diff_eq!(
            relative_rank_topk(&[0.5, 0.25, 0.125], 1).unwrap(),
            10.0 / 3.0,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(relative_rank_topk(&[2.0, 1.0], 1).unwrap(), 3.0, epsilon = 1e-15);
        assert_eq!(relative_rank_topk(&[3.0, 2.0, 1.0], 3).unwrap(), 3.0);
        assert!(relative_rank_topk(&[2.0, 2.0, 1.0], 1).unwrap().is_infinite());
    }

    #[test]
    fn davis_kahan_examples() {
        let pair = running(0.1);
        let eigs = pair.eigenvalues();
        let e = pair.perturbation();
        assert_abs_diff_eq!(
            davis_kahan_bound(e, eigs, &s(&[1]), DkMode::Hs).unwrap(),
            0.4,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            davis_kahan_bound(e, eigs, &s(&[1]), DkMode::Op).unwrap(),
            0.282842712474619,
            epsilon = 1e-12
        );
        let zero = SymMatrix::zeros(2);
        assert_eq!(davis_kahan_bound(&zero, eigs, &s(&[1]), DkMode::Hs).unwrap(), 0.0);
        assert!(davis_kahan_bound(&zero, &[1.0, 1.0], &s(&[1]), DkMode::Hs)
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn first_order_running_example() {
        let pair = running(0.1);
        let fo = first_order(&pair, &s(&[1])).unwrap();
        assert_abs_diff_eq!(fo.linear_hs_sq, 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(fo.linear_term.hs_norm().powi(2), fo.linear_hs_sq, epsilon = 1e-12);
        assert_abs_diff_eq!(fo.delta, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(fo.remainder_op_bound, 0.05, epsilon = 1e-15);
        let res = first_order_residual(&pair, &s(&[1]), &fo).unwrap();
        assert!(res <= fo.remainder_op_bound);

        let still = PerturbedPair::new(
            SymMatrix::diagonal(&[2.0, 1.0]),
            SymMatrix::diagonal(&[2.0, 1.0]),
            Provenance::default(),
        )
        .unwrap();
        let fo = first_order(&still, &s(&[1])).unwrap();
        assert_eq!((fo.linear_hs_sq, fo.delta, fo.remainder_op_bound), (0.0, 0.0, 0.0));

        let big = running(0.6);
        let fo = first_order(&big, &s(&[1])).unwrap();
        assert!(fo.delta >= 1.0 && fo.remainder_op_bound.is_infinite());
        assert!(fo.linear_hs_sq > 0.0);
    }

    #[test]
    fn envelope_examples() {
        assert_abs_diff_eq!(
            coefficient_envelope(&running(0.01)).unwrap(),
            0.01 / 2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(coefficient_envelope(&running(0.0)).unwrap(), 0.0);
        let eigs = [0.9, 0.4, 0.25, 0.1];
        assert_relative_eq!(
            coefficient_envelope(&prototype(&eigs, 0.03)).unwrap(),
            0.03,
            max_relative = 1e-14
        );
    }

    #[test]
    fn theorem2_examples() {
        let x = 0.01 / 2f64.sqrt();
        let c = theorem2_bound(&[2.0, 1.0], x, &s(&[1])).unwrap();
        assert_abs_diff_eq!(c.condition_value, 0.0212132034355964, epsilon = 1e-15);
        assert!(c.applicable);
        assert_relative_eq!(c.bound_value, 1.6e-3, max_relative = 1e-12);
        let pair = running(0.01);
        let d = hs_distance_sq(pair.model(), pair.model_hat(), &s(&[1])).unwrap();
        // 2 sin²θ = 1 − cos 2θ with tan 2θ = 0.02
        assert_relative_eq!(d, 1.0 - 1.0 / 1.0004f64.sqrt(), max_relative = 1e-9);
        assert!(d <= c.bound_value);

        let zero = theorem2_bound(&[2.0, 1.0], 0.0, &s(&[1])).unwrap();
        assert!(zero.applicable && zero.bound_value == 0.0);

        let big = theorem2_bound(&[2.0, 1.0], 0.1 / 2f64.sqrt(), &s(&[1])).unwrap();
        assert_abs_diff_eq!(big.condition_value, 0.212132034355964, epsilon = 1e-14);
        assert!(!big.applicable);

        let tied = theorem2_bound(&[1.0, 1.0, 0.5], 0.01, &s(&[1])).unwrap();
        assert!(!tied.applicable && tied.condition_value.is_infinite());
    }

    #[test]
    fn refined_examples() {
        let pair = running(0.01);
        let x = coefficient_envelope(&pair).unwrap();
        let (exact, env) = refined_terms(&pair, x, &s(&[1])).unwrap();
        assert_relative_eq!(exact, 8e-4, max_relative = 1e-12);
        assert_relative_eq!(env, 0.4608, max_relative = 1e-12);
        let c = refined_bound(&pair, x, &s(&[1])).unwrap();
        assert_relative_eq!(c.bound_value, 0.4616, max_relative = 1e-12);
        let zero = refined_bound(&running(0.0), 0.0, &s(&[1])).unwrap();
        assert_eq!(zero.bound_value, 0.0);
    }

    #[test]
    fn refined_exact_term_on_prototype() {
        // Tight coefficients: the exact term is half the theorem-2 value.
        let eigs = [1.0, 0.5, 0.3, 0.1];
        let x0 = 0.005;
        let pair = prototype(&eigs, x0);
        let set = s(&[1, 2]);
        let (exact, _) = refined_terms(&pair, x0, &set).unwrap();
        let t2 = theorem2_bound(&eigs, x0, &set).unwrap();
        assert!(t2.applicable);
        assert_relative_eq!(exact, 0.5 * t2.bound_value, max_relative = 1e-12);
    }

    #[test]
    fn iprime_examples() {
        assert_eq!(build_iprime(&[2.0, 1.0], &s(&[1])).unwrap(), s(&[1]));
        assert_eq!(build_iprime(&[2.0, 1.5, 1.0], &s(&[1])).unwrap(), s(&[1, 2]));
        assert_eq!(build_iprime(&[3.0, 2.0, 1.0], &s(&[1, 2, 3])).unwrap(), s(&[1, 2, 3]));
        assert!(matches!(
            check_iprime(&[2.0, 1.5, 1.0], &s(&[1]), &s(&[1])),
            Err(Error::SupersetGapViolation { i: 1, j: 2 })
        ));
    }

    #[test]
    fn theorem3_examples() {
        let eigs = [1.0, 0.8, 0.3, 0.3, 0.05];
        let set = s(&[1]);
        let ip = build_iprime(&eigs, &set).unwrap();
        assert_eq!(ip, s(&[1, 2]));
        let still = prototype(&eigs, 0.0);
        let c = theorem3_bound(&still, &set, &ip).unwrap();
        assert!(c.applicable && c.bound_value == 0.0);

        let pair = prototype(&eigs, 0.002);
        assert_relative_eq!(
            theorem3_envelope(&pair, &set, &ip).unwrap(),
            0.002,
            max_relative = 1e-13
        );

        let x = 0.00123;
        let t2 = theorem2_bound(&eigs, x, &set).unwrap();
        let t3 = theorem3_bound_with_x(&eigs, x, &set).unwrap();
        assert_eq!(t3.bound_value, 4.0 * t2.bound_value);
        assert_eq!(t3.condition_value, t2.condition_value);
    }

    #[test]
    fn level_classes_group_ties() {
        let eigs = [3.0, 2.0, 2.0, 1.0];
        assert_eq!(level_classes(&eigs, &s(&[1, 2, 3])), vec![s(&[1]), s(&[2, 3])]);
        assert_eq!(
            theorem3_blocks(&eigs, &s(&[1]), &s(&[1, 2, 3])),
            vec![s(&[1]), s(&[2, 3]), s(&[4])]
        );
    }
}
