//! Deterministic property suite.
//!
//! Every claim checked here is a deterministic inequality or identity, so
//! any violation is a counterexample rather than sampling noise. Instances are drawn from
//! the `Instance` and `Perturbation` streams of `(seed_base, id)`:
//!
//! - dimension `p` uniform on `4..=12`;
//! - spectrum: exponential, polynomial, distinct uniform, or a step
//!   spectrum with ties;
//! - `I`: a run of consecutive eigenvalue levels, never all of them;
//! - perturbation: a relative Gaussian matrix scaled so that `x r_I` is
//!   log-uniform on `[0.005, 0.3]`, the rank-one pattern
//!   `±x √λ √λᵀ`, an empirical covariance with `n` log-uniform on
//!   `[100, 20000]`, or an absolute GOE matrix;
//! - half the instances are conjugated by a Haar rotation.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{
    build_scheme, contraction_sweep, envelope_check_coefficients, prop42_check, separation_check, theorem4_bound,
    EnvelopePair, Granularity, SLACK,
};
use crate::bounds::{
    build_iprime, coefficient_envelope, davis_kahan_bound, first_order, first_order_residual, level_classes,
    refined_bound, relative_rank, theorem2_bound, theorem3_bound, theorem3_bound_with_x, DkMode,
};
use crate::error::Result;
use crate::harness::config::SuiteSizes;
use crate::models::{random_rotation, trial_rng, PerturbedPair, Provenance, Stream};
use crate::spectral::{hs_distance_sq, hs_distance_sq_entrywise, IndexSet, SymMatrix};

/// Instance ids for the shifted-weight implication sweep start here, away from the
/// soundness ids.
const PROP42_OFFSET: u64 = 1 << 32;
/// Instance ids for the identity checks start here.
const IDENTITY_OFFSET: u64 = 2 << 32;
/// Instance ids for the consistency checks start here.
const CONSISTENCY_OFFSET: u64 = 3 << 32;

/// Relative tolerance for the Theorem 4 / Theorem 2 consistency check.
pub const CONSISTENCY_TOLERANCE: f64 = 1e-12;

/// One claim's tally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSection {
    pub name: String,
    /// Instances on which the claim's hypotheses held and it was checked.
    pub checked: u64,
    pub violations: u64,
    /// Largest `lhs − rhs` over checked cases (`-inf` when none).
    pub worst_margin: f64,
}

impl SuiteSection {
    fn new(name: &str) -> Self {
        SuiteSection {
            name: name.to_string(),
            checked: 0,
            violations: 0,
            worst_margin: f64::NEG_INFINITY,
        }
    }

    /// Records `lhs ≤ rhs + slack`.
    fn le(&mut self, lhs: f64, rhs: f64, slack: f64) {
        self.checked += 1;
        let margin = lhs - rhs;
        if margin.is_nan() || margin > slack {
            self.violations += 1;
        }
        self.worst_margin = self
            .worst_margin
            .max(if margin.is_nan() { f64::INFINITY } else { margin });
    }

    fn flag(&mut self, ok: bool) {
        self.le(if ok { 0.0 } else { 1.0 }, 0.0, 0.0);
    }

    fn merge(&mut self, other: &SuiteSection) {
        self.checked += other.checked;
        self.violations += other.violations;
        self.worst_margin = self.worst_margin.max(other.worst_margin);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub sections: Vec<SuiteSection>,
}

impl SuiteReport {
    pub fn total_violations(&self) -> u64 {
        self.sections.iter().map(|s| s.violations).sum()
    }

    pub fn section(&self, name: &str) -> Option<&SuiteSection> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn absorb(&mut self, sections: Vec<SuiteSection>) {
        for s in sections {
            match self.sections.iter_mut().find(|t| t.name == s.name) {
                Some(t) => t.merge(&s),
                None => self.sections.push(s),
            }
        }
    }
}

/// A generated instance with labels describing how it was drawn.
#[derive(Clone, Debug)]
pub struct SuiteInstance {
    pub pair: PerturbedPair,
    pub set: IndexSet,
    pub spectrum_kind: &'static str,
    pub perturbation_kind: &'static str,
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// A decreasing positive spectrum of length `p`.
pub fn random_spectrum(rng: &mut ChaCha8Rng, p: usize) -> (Vec<f64>, &'static str) {
    let (mut eigs, kind): (Vec<f64>, _) = match rng.random_range(0..4) {
        0 => {
            let alpha = rng.random_range(0.3..1.5);
            ((1..=p).map(|i| (-alpha * i as f64).exp()).collect(), "exponential")
        }
        1 => {
            let alpha = rng.random_range(0.5..2.5);
            ((1..=p).map(|i| (i as f64).powf(-alpha)).collect(), "polynomial")
        }
        2 => ((0..p).map(|_| rng.random_range(0.1..10.0)).collect(), "uniform"),
        _ => {
            let levels = rng.random_range(2..=4.min(p));
            // Cut points split 1..p into `levels` non-empty runs.
            let mut cuts: Vec<usize> = Vec::new();
            while cuts.len() < levels - 1 {
                let c = rng.random_range(1..p);
                if !cuts.contains(&c) {
                    cuts.push(c);
                }
            }
            cuts.sort_unstable();
            let mut values = Vec::with_capacity(levels);
            let mut v = rng.random_range(1.0..10.0);
            for _ in 0..levels {
                values.push(v);
                v /= rng.random_range(1.5..6.0);
            }
            let eigs = (0..p)
                .map(|i| values[cuts.iter().filter(|c| **c <= i).count()])
                .collect();
            (eigs, "spiked")
        }
    };
    eigs.sort_by(|a, b| b.total_cmp(a));
    (eigs, kind)
}

/// A run of consecutive levels of `eigs`, never all of them.
pub fn random_level_run(rng: &mut ChaCha8Rng, eigs: &[f64]) -> IndexSet {
    let all = IndexSet::top(eigs.len());
    let levels = level_classes(eigs, &all);
    let count = levels.len();
    let start = if rng.random::<bool>() {
        0
    } else {
        rng.random_range(0..count)
    };
    let max_len = if start == 0 { count - 1 } else { count - start };
    let len = rng.random_range(1..=max_len.max(1));
    let mut set = levels[start].clone();
    for l in &levels[start + 1..start + len] {
        set = set.union(l);
    }
    set
}

fn symmetric_gaussian(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let v = normal(rng);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

fn goe(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let mut g = symmetric_gaussian(rng, p);
    for i in 0..p {
        g[(i, i)] *= std::f64::consts::SQRT_2;
    }
    g
}

/// Soundness instance `id`.
pub fn suite_instance(seed_base: u64, id: u64) -> Result<SuiteInstance> {
    let mut rng = trial_rng(seed_base, id, Stream::Instance);
    let p = rng.random_range(4..=12);
    let (eigs, spectrum_kind) = random_spectrum(&mut rng, p);
    let set = random_level_run(&mut rng, &eigs);
    let rank = relative_rank(&eigs, &set)?;
    let sqrt_l: Vec<f64> = eigs.iter().map(|l| l.sqrt()).collect();
    let sigma = SymMatrix::diagonal(&eigs);

    let mut prng = trial_rng(seed_base, id, Stream::Perturbation);
    let target = log_uniform(&mut prng, 0.005, 0.3);
    let (e, perturbation_kind) = match prng.random_range(0..4) {
        0 => {
            let g = symmetric_gaussian(&mut prng, p);
            let scale = target / (rank * g.amax());
            (
                DMatrix::from_fn(p, p, |i, j| scale * sqrt_l[i] * sqrt_l[j] * g[(i, j)]),
                "relative",
            )
        }
        1 => {
            let sign = if prng.random::<bool>() { 1.0 } else { -1.0 };
            let x = sign * target / rank;
            (DMatrix::from_fn(p, p, |i, j| x * sqrt_l[i] * sqrt_l[j]), "prototype")
        }
        2 => {
            let n = log_uniform(&mut prng, 100.0, 20000.0).round() as usize;
            let mut s = DMatrix::zeros(p, p);
            let mut z = vec![0.0; p];
            for _ in 0..n {
                for (k, zk) in z.iter_mut().enumerate() {
                    *zk = sqrt_l[k] * normal(&mut prng);
                }
                for i in 0..p {
                    for j in 0..p {
                        s[(i, j)] += z[i] * z[j];
                    }
                }
            }
            (s / n as f64 - sigma.as_matrix(), "covariance")
        }
        _ => {
            let gap = crate::bounds::cross_gap(&eigs, &set)?;
            let scale = target * gap / (p as f64).sqrt();
            (goe(&mut prng, p) * scale, "goe")
        }
    };
    let provenance = Provenance {
        generator: format!("suite/{spectrum_kind}/{perturbation_kind}"),
        parameters: [("p".to_string(), p as f64), ("target".to_string(), target)]
            .into_iter()
            .collect(),
        seed_base,
        trial: id,
    };
    let mut pair = PerturbedPair::from_perturbation(sigma, &SymMatrix::from_matrix(e)?, provenance)?;
    if prng.random::<bool>() {
        let q = random_rotation(p, &mut trial_rng(seed_base, id, Stream::Rotation));
        pair = pair.rotated(&q)?;
    }
    Ok(SuiteInstance {
        pair,
        set,
        spectrum_kind,
        perturbation_kind,
    })
}

/// Section names, in report order. `thm3_tail` restricts `thm3` to
/// instances where every index outside `I′` lies below `I`; without that
/// restriction the Theorem 3 gate does not control the lumped `I′^c` block.
pub const SECTIONS: &[&str] = &[
    "thm2",
    "refined",
    "thm3",
    "thm3_tail",
    "thm4_measured",
    "thm4_relative",
    "dk_hs",
    "dk_op",
    "separation",
    "contraction",
    "remainder",
    "prop42",
    "hs_identity",
    "consistency_thm4",
    "consistency_thm3",
    "instances_failed",
];

fn sections() -> Vec<SuiteSection> {
    SECTIONS.iter().map(|s| SuiteSection::new(s)).collect()
}

fn at<'a>(secs: &'a mut [SuiteSection], name: &str) -> &'a mut SuiteSection {
    secs.iter_mut().find(|s| s.name == name).expect("known section")
}

/// Bound soundness, separation and contraction checks and the first-order remainder
/// on one instance. `remainder` selects whether the remainder is checked.
pub fn check_instance(inst: &SuiteInstance, remainder: bool, bounds: bool) -> Vec<SuiteSection> {
    let mut secs = sections();
    let pair = &inst.pair;
    let set = &inst.set;
    let eigs = pair.eigenvalues();
    let Ok(d) = hs_distance_sq(pair.model(), pair.model_hat(), set) else {
        at(&mut secs, "instances_failed").flag(false);
        return secs;
    };

    if remainder {
        if let Ok(fo) = first_order(pair, set) {
            if fo.delta < 1.0 {
                match first_order_residual(pair, set, &fo) {
                    Ok(res) => at(&mut secs, "remainder").le(res, fo.remainder_op_bound, SLACK),
                    Err(_) => at(&mut secs, "instances_failed").flag(false),
                }
            }
        }
    }
    if !bounds {
        return secs;
    }

    let e = pair.perturbation();
    for (name, mode) in [("dk_hs", DkMode::Hs), ("dk_op", DkMode::Op)] {
        if let Ok(b) = davis_kahan_bound(e, eigs, set, mode) {
            if b.is_finite() {
                at(&mut secs, name).le(d, b * b, SLACK);
            }
        }
    }

    let Ok(x) = coefficient_envelope(pair) else {
        at(&mut secs, "instances_failed").flag(false);
        return secs;
    };
    if let Ok(c) = theorem2_bound(eigs, x, set) {
        if c.applicable {
            at(&mut secs, "thm2").le(d, c.bound_value, SLACK);
        }
    }
    if let Ok(c) = refined_bound(pair, x, set) {
        if c.applicable {
            at(&mut secs, "refined").le(d, c.bound_value, SLACK);
        }
    }
    if let Ok(iprime) = build_iprime(eigs, set) {
        if let Ok(c) = theorem3_bound(pair, set, &iprime) {
            if c.applicable {
                at(&mut secs, "thm3").le(d, c.bound_value, SLACK);
                let top = set.as_slice().last().copied().unwrap_or(0);
                if iprime.complement(eigs.len()).iter().all(|j| j > top) {
                    at(&mut secs, "thm3_tail").le(d, c.bound_value, SLACK);
                }
            }
        }
    }

    let mut separation_needed = false;
    let schemes = [
        ("thm4_measured", Granularity::Eigenlevel, true),
        ("thm4_relative", Granularity::Singletons, false),
    ];
    for (name, granularity, measured) in schemes {
        let Ok(scheme) = build_scheme(eigs, set, &granularity) else {
            continue;
        };
        let env = if measured {
            EnvelopePair::measured(&scheme, eigs, pair.coefficients())
        } else {
            EnvelopePair::relative(&scheme, eigs, x)
        };
        let Ok(env) = env else { continue };
        let Ok(report) = envelope_check_coefficients(pair.coefficients(), &scheme, &env) else {
            continue;
        };
        if !report.ok {
            continue;
        }
        let Ok(t4) = theorem4_bound(&scheme, &env, true) else {
            continue;
        };
        if !t4.certificate.applicable {
            continue;
        }
        at(&mut secs, name).le(d, t4.certificate.bound_value, SLACK);
        separation_needed = true;
        match contraction_sweep(pair, &scheme, &env) {
            Ok(sweep) => {
                let sec = at(&mut secs, "contraction");
                sec.checked += 1;
                sec.violations += u64::from(sweep.violations > 0);
                sec.worst_margin = sec.worst_margin.max(sweep.worst_margin);
            }
            Err(_) => at(&mut secs, "contraction").flag(false),
        }
    }
    if separation_needed {
        match separation_check(pair, set) {
            Ok(entries) => {
                let sec = at(&mut secs, "separation");
                sec.checked += 1;
                sec.violations += u64::from(entries.iter().any(|e| !e.ok));
                let worst = entries.iter().map(|e| e.rhs - e.lhs).fold(f64::NEG_INFINITY, f64::max);
                sec.worst_margin = sec.worst_margin.max(worst);
            }
            Err(_) => at(&mut secs, "separation").flag(false),
        }
    }
    secs
}

/// Shifted-weight implications at one instance over `y_grid` shifts
/// `y_k = s · 2^{k − y_grid/2}` around the observed shift `s` of a random index.
pub fn check_prop42(seed_base: u64, id: u64, y_grid: usize) -> Vec<SuiteSection> {
    let mut secs = sections();
    let inst = match suite_instance(seed_base, PROP42_OFFSET + id) {
        Ok(inst) => inst,
        Err(_) => {
            at(&mut secs, "instances_failed").flag(false);
            return secs;
        }
    };
    let pair = &inst.pair;
    let p = pair.dim();
    let mut rng = trial_rng(seed_base, PROP42_OFFSET + id, Stream::Coefficients);
    let i = rng.random_range(1..=p);
    let eigs = pair.eigenvalues();
    let mut s = (pair.eigenvalues_hat()[i - 1] - eigs[i - 1]).abs();
    if !(s > 0.0) {
        s = (eigs[0] - eigs[p - 1]).abs().max(1e-3) / p as f64;
    }
    for k in 0..y_grid {
        let y = s * 2f64.powi(k as i32 - (y_grid / 2) as i32);
        match prop42_check(pair, i, y) {
            Ok(r) => at(&mut secs, "prop42").flag(r.up_implication_ok && r.down_implication_ok),
            Err(_) => at(&mut secs, "instances_failed").flag(false),
        }
    }
    secs
}

/// Trace formula against the entrywise formula on a random symmetric pair.
pub fn check_hs_identity(seed_base: u64, id: u64, tolerance: f64) -> Vec<SuiteSection> {
    let mut secs = sections();
    let mut rng = trial_rng(seed_base, IDENTITY_OFFSET + id, Stream::Instance);
    let p = rng.random_range(2..=20);
    let a = goe(&mut rng, p);
    let scale = log_uniform(&mut rng, 1e-3, 1.0);
    let b = &a + goe(&mut rng, p) * scale;
    let k = rng.random_range(1..p);
    let outcome = (|| -> Result<f64> {
        let ma = crate::spectral::decompose(&SymMatrix::from_matrix(a)?)?;
        let mb = crate::spectral::decompose(&SymMatrix::from_matrix(b)?)?;
        let set = IndexSet::top(k);
        Ok((hs_distance_sq(&ma, &mb, &set)? - hs_distance_sq_entrywise(&ma, &mb, &set)?).abs())
    })();
    match outcome {
        Ok(diff) => at(&mut secs, "hs_identity").le(diff, 0.0, tolerance),
        Err(_) => at(&mut secs, "instances_failed").flag(false),
    }
    secs
}

/// Theorem 4 with singleton blocks and `a = b = x λ` against Theorem 2, and
/// Theorem 3 against four times Theorem 2, at a random admissible `x`.
pub fn check_consistency(seed_base: u64, id: u64) -> Vec<SuiteSection> {
    let mut secs = sections();
    let mut rng = trial_rng(seed_base, CONSISTENCY_OFFSET + id, Stream::Instance);
    let p = rng.random_range(4..=12);
    let (eigs, _) = random_spectrum(&mut rng, p);
    let set = random_level_run(&mut rng, &eigs);
    let outcome = (|| -> Result<(f64, f64, f64, Option<f64>)> {
        let rank = relative_rank(&eigs, &set)?;
        let x = log_uniform(&mut rng, 0.005, 0.125) / rank;
        let t2 = theorem2_bound(&eigs, x, &set)?.bound_value;
        let t3 = theorem3_bound_with_x(&eigs, x, &set)?.bound_value;
        let scheme = build_scheme(&eigs, &set, &Granularity::Singletons)?;
        let env = EnvelopePair::relative(&scheme, &eigs, x)?;
        let t4 = theorem4_bound(&scheme, &env, true)?;
        Ok((t2, t3, x, t4.simplified))
    })();
    match outcome {
        Ok((t2, t3, _, Some(t4))) => {
            at(&mut secs, "consistency_thm4").le(
                (t4 - t2).abs() / t2.abs().max(f64::MIN_POSITIVE),
                0.0,
                CONSISTENCY_TOLERANCE,
            );
            at(&mut secs, "consistency_thm3").flag(t3 == 4.0 * t2);
        }
        Ok((_, t3, _, None)) => {
            // The simplified value exists whenever x r_I ≤ 1/8; reaching here is a violation.
            at(&mut secs, "consistency_thm4").flag(false);
            at(&mut secs, "consistency_thm3").flag(t3.is_finite());
        }
        Err(_) => at(&mut secs, "instances_failed").flag(false),
    }
    secs
}

/// Runs every section at the given sizes.
pub fn run_suite(seed_base: u64, sizes: &SuiteSizes, identity_tolerance: f64) -> SuiteReport {
    let mut report = SuiteReport { sections: sections() };
    let n = sizes.soundness.max(sizes.remainder) as u64;
    let parts: Vec<Vec<SuiteSection>> = (0..n)
        .into_par_iter()
        .map(|id| match suite_instance(seed_base, id) {
            Ok(inst) => check_instance(&inst, id < sizes.remainder as u64, id < sizes.soundness as u64),
            Err(_) => {
                let mut secs = sections();
                at(&mut secs, "instances_failed").flag(false);
                secs
            }
        })
        .collect();
    parts.into_iter().for_each(|p| report.absorb(p));
    let y_grid = sizes.y_grid;
    let parts: Vec<_> = (0..sizes.prop42 as u64)
        .into_par_iter()
        .map(|id| check_prop42(seed_base, id, y_grid))
        .collect();
    parts.into_iter().for_each(|p| report.absorb(p));
    let parts: Vec<_> = (0..sizes.hs_identity as u64)
        .into_par_iter()
        .map(|id| check_hs_identity(seed_base, id, identity_tolerance))
        .collect();
    parts.into_iter().for_each(|p| report.absorb(p));
    let parts: Vec<_> = (0..sizes.consistency as u64)
        .into_par_iter()
        .map(|id| check_consistency(seed_base, id))
        .collect();
    parts.into_iter().for_each(|p| report.absorb(p));
    report
}
