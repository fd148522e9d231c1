//! Study runners.
//!
//! Trials run on a pool of `config.workers` threads and are collected in
//! trial order, so the output does not depend on the worker count. Grid
//! point `g` of a sweep uses trial ids `g · trials .. (g + 1) · trials`,
//! except where a sweep compares the same draws across parameters (the `k`
//! sweeps), which reuse `0 .. trials`.

use rayon::prelude::*;

use crate::bounds::eigenlevel;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, ModelSpec, StudyKind};
use crate::harness::record::TrialRecord;
use crate::harness::suite::{run_suite, SuiteReport};
use crate::harness::summary::{
    column, group, median, quantile, survival, Check, Real, SlopeFit, StudySummary, TailCurve,
};
use crate::models::{spectrum, CoefficientLaw, DecayProfile};
use crate::spectral::IndexSet;

/// Records, aggregates and (for the property suite) the suite report of one study.
#[derive(Clone, Debug)]
pub struct StudyOutput {
    pub records: Vec<TrialRecord>,
    pub summary: StudySummary,
    pub suite: Option<SuiteReport>,
}

impl StudyOutput {
    /// Violations of deterministic claims across records and suite.
    pub fn deterministic_violations(&self) -> u64 {
        self.summary.total_violations()
    }
}

/// Default `t` grid for survival curves.
pub const DEFAULT_T_GRID: &[f64] = &[1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0, 8.0];

pub fn run_study(config: &ExperimentConfig) -> Result<StudyOutput> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    pool.install(|| match config.study {
        StudyKind::BoundValidity => run_bound_validity(config),
        StudyKind::Sharpness => run_sharpness(config),
        StudyKind::Tail => run_tail(config),
        StudyKind::DecayScaling => run_decay_scaling(config),
        StudyKind::Goe => run_goe(config),
        StudyKind::Spiked => run_spiked(config),
        StudyKind::PropSuite => run_prop_suite(config),
    })
}

fn model(config: &ExperimentConfig) -> Result<&ModelSpec> {
    config
        .model
        .as_ref()
        .ok_or_else(|| Error::Config(format!("study {} needs a [model] table", config.study.name())))
}

/// One grid point: trials `first .. first + count` of `model` on `set`.
fn run_trials(
    config: &ExperimentConfig,
    model: &ModelSpec,
    set: &IndexSet,
    second: Option<&IndexSet>,
    first: u64,
    param: f64,
) -> Vec<TrialRecord> {
    let name = model.name();
    let seed = config.seed_base;
    (first..first + config.trials as u64)
        .into_par_iter()
        .map(|trial| match model.generate(seed, trial, config.rotate) {
            Ok(pair) => TrialRecord::evaluate(trial, seed, &name, param, &pair, set, second),
            Err(_) => TrialRecord::failed(trial, seed, &name, param),
        })
        .collect()
}

fn selections(config: &ExperimentConfig, p: usize) -> Result<(IndexSet, Option<IndexSet>)> {
    let set = config.set.resolve(p)?;
    let second = config.second_set.as_ref().map(|s| s.resolve(p)).transpose()?;
    Ok((set, second))
}

fn model_n(model: &ModelSpec) -> Option<usize> {
    match model {
        ModelSpec::Covariance { n, .. } | ModelSpec::Spiked { n, .. } => Some(*n),
        _ => None,
    }
}

fn medians_of(records: &[TrialRecord], col: &str) -> f64 {
    median(&column(records, col))
}

/// `num / den` per non-failed trial; `+inf` when `den` is zero and `num` is not.
fn ratios(records: &[TrialRecord], num: impl Fn(&TrialRecord) -> f64) -> Vec<f64> {
    records
        .iter()
        .filter(|r| !r.failed)
        .map(|r| {
            let n = num(r);
            if r.distance_sq == 0.0 {
                if n == 0.0 {
                    f64::NAN
                } else {
                    f64::INFINITY
                }
            } else {
                n / r.distance_sq
            }
        })
        .filter(|v| !v.is_nan())
        .collect()
}

pub fn run_bound_validity(config: &ExperimentConfig) -> Result<StudyOutput> {
    let model = model(config)?;
    let (set, second) = selections(config, model.dim()?)?;
    let param = model_n(model).map_or(0.0, |n| n as f64);
    let records = run_trials(config, model, &set, second.as_ref(), 0, param);
    let summary = StudySummary::from_records(config, &records);
    Ok(StudyOutput {
        records,
        summary,
        suite: None,
    })
}

/// `k` sweep on the same draws: DK and Theorem 2 against the distance.
pub fn run_sharpness(config: &ExperimentConfig) -> Result<StudyOutput> {
    let model = model(config)?;
    let p = model.dim()?;
    let ks = config.k_grid.clone().unwrap_or_else(|| vec![2, 3, 4, 5, 6]);
    let mut records = Vec::new();
    let mut groups = Vec::new();
    let mut dk_ratio = Vec::new();
    let mut thm2_ratio = Vec::new();
    let mut fo_above_thm2 = 0u64;
    for &k in &ks {
        if k >= p {
            return Err(Error::Config(format!("k = {k} must be below p = {p}")));
        }
        let set = IndexSet::top(k);
        let recs = run_trials(config, model, &set, None, 0, k as f64);
        let mut g = group("k", k as f64, &recs);
        let d = medians_of(&recs, "distance_sq");
        let rd = medians_of(&recs, "dk_hs_sq") / d;
        let rt = medians_of(&recs, "thm2_bound") / d;
        g.median.insert(
            "dk_hs_ratio".into(),
            Real(median(&ratios(&recs, |r| r.dk_hs * r.dk_hs))),
        );
        g.median
            .insert("thm2_ratio".into(), Real(median(&ratios(&recs, |r| r.thm2_bound))));
        g.median.insert(
            "first_order_ratio".into(),
            Real(median(&ratios(&recs, |r| r.first_order_hs_sq))),
        );
        g.median.insert("dk_hs_over_median".into(), Real(rd));
        g.median.insert("thm2_over_median".into(), Real(rt));
        fo_above_thm2 += recs
            .iter()
            .filter(|r| !r.failed && r.first_order_hs_sq > r.thm2_bound + crate::blocks::SLACK)
            .count() as u64;
        dk_ratio.push(rd);
        thm2_ratio.push(rt);
        groups.push(g);
        records.extend(recs);
    }
    let mut summary = StudySummary::from_records(config, &records);
    summary.groups = groups;
    *summary.violations.entry("first_order_vs_thm2".into()).or_default() += fo_above_thm2;
    if ks.len() >= 2 {
        let last = ks.len() - 1;
        let f2 = config.tolerances.factor * config.tolerances.factor;
        summary.checks.push(Check::new(
            "dk_ratio_growth",
            dk_ratio[last] / dk_ratio[0],
            10.0,
            f64::INFINITY,
        ));
        summary.checks.push(Check::new(
            "thm2_ratio_change",
            thm2_ratio[last] / thm2_ratio[0],
            1.0 / f2,
            f2,
        ));
    }
    Ok(StudyOutput {
        records,
        summary,
        suite: None,
    })
}

/// Normalized block norm across an `n` grid, with survival curves of
/// `√n · block_norm`.
pub fn run_tail(config: &ExperimentConfig) -> Result<StudyOutput> {
    let model = model(config)?;
    let (set, second) = selections(config, model.dim()?)?;
    let ns = config.n_grid.clone().unwrap_or_else(|| vec![500, 2000, 8000]);
    let t_grid = config.t_grid.clone().unwrap_or_else(|| DEFAULT_T_GRID.to_vec());
    let mut records = Vec::new();
    let mut groups = Vec::new();
    let mut curves = Vec::new();
    let mut q99 = Vec::new();
    let mut checks = Vec::new();
    let law_name = match model {
        ModelSpec::Covariance { law, .. } => law.name(),
        _ => "unknown",
    };
    let gaussian_model = match model {
        ModelSpec::Covariance { profile, law, q, n } if *law != CoefficientLaw::Gaussian => {
            Some(ModelSpec::Covariance {
                profile: profile.clone(),
                law: CoefficientLaw::Gaussian,
                q: *q,
                n: *n,
            })
        }
        _ => None,
    };
    for (g, &n) in ns.iter().enumerate() {
        let m = model.with_n(n);
        let recs = run_trials(config, &m, &set, second.as_ref(), (g * config.trials) as u64, n as f64);
        let scaled: Vec<f64> = column(&recs, "block_norm")
            .iter()
            .map(|v| v * (n as f64).sqrt())
            .collect();
        curves.push(TailCurve {
            label: format!("{law_name} n={n}"),
            t: t_grid.iter().copied().map(Real).collect(),
            survival: survival(&scaled, &t_grid).into_iter().map(Real).collect(),
        });
        q99.push(quantile(&column(&recs, "block_norm"), 0.99));
        if let Some(gm) = &gaussian_model {
            let grecs = run_trials(
                config,
                &gm.with_n(n),
                &set,
                second.as_ref(),
                (g * config.trials) as u64,
                n as f64,
            );
            let gscaled: Vec<f64> = column(&grecs, "block_norm")
                .iter()
                .map(|v| v * (n as f64).sqrt())
                .collect();
            let upper = &t_grid[t_grid.len() / 2..];
            let heavy: f64 = survival(&scaled, upper).iter().sum();
            let light: f64 = survival(&gscaled, upper).iter().sum();
            checks.push(Check::new(
                &format!("heavier_tail n={n}"),
                heavy - light,
                0.0,
                f64::INFINITY,
            ));
            curves.push(TailCurve {
                label: format!("gaussian n={n}"),
                t: t_grid.iter().copied().map(Real).collect(),
                survival: survival(&gscaled, &t_grid).into_iter().map(Real).collect(),
            });
        }
        groups.push(group("n", n as f64, &recs));
        records.extend(recs);
    }
    let mut summary = StudySummary::from_records(config, &records);
    for w in 0..ns.len().saturating_sub(1) {
        let expected = (ns[w] as f64 / ns[w + 1] as f64).sqrt();
        let ratio = q99[w + 1] / q99[w];
        summary.checks.push(Check::new(
            &format!("q99_ratio n={}->{}", ns[w], ns[w + 1]),
            ratio,
            0.6 * expected,
            1.4 * expected,
        ));
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    summary.slopes.push(SlopeFit::fit(
        "q99_block_norm_vs_n",
        &x,
        &q99,
        -0.5,
        config.tolerances.slope,
    ));
    summary.checks.extend(checks);
    summary.groups = groups;
    summary.tail_curves = curves;
    Ok(StudyOutput {
        records,
        summary,
        suite: None,
    })
}

/// Smallest `k₀` with `λ_{k₀} ≤ λ_k / 2`, or `None` if no eigenvalue qualifies.
pub fn minimal_k0(eigs: &[f64], k: usize) -> Option<usize> {
    let half = eigs.get(k.checked_sub(1)?)? / 2.0;
    eigs.iter().position(|&l| l <= half).map(|i| i + 1)
}

/// `n` sweep at fixed `k` (and an optional `k` sweep at the model's `n`).
pub fn run_decay_scaling(config: &ExperimentConfig) -> Result<StudyOutput> {
    let model = model(config)?;
    let ModelSpec::Covariance { profile, n: base_n, .. } = model else {
        return Err(Error::Config("decay_scaling needs a covariance model".into()));
    };
    let eigs = spectrum(profile)?;
    let set = config.set.resolve(eigs.len())?;
    let k = set.as_slice().iter().copied().max().unwrap_or(1);
    let polynomial = matches!(profile, DecayProfile::Polynomial { .. });
    let ns = config.n_grid.clone().unwrap_or_else(|| vec![1000, 4000, 16000]);
    let kf = k as f64;
    let mut records = Vec::new();
    let mut groups = Vec::new();
    let mut med = Vec::new();
    let mut warnings = Vec::new();
    let t = config.t.unwrap_or(1.0);
    for (g, &n) in ns.iter().enumerate() {
        let recs = run_trials(
            config,
            &model.with_n(n),
            &set,
            None,
            (g * config.trials) as u64,
            n as f64,
        );
        let d = medians_of(&recs, "distance_sq");
        let normalized = if polynomial {
            n as f64 * d / (kf * kf * kf.ln().max(f64::MIN_POSITIVE))
        } else {
            n as f64 * d
        };
        let mut gs = group("n", n as f64, &recs);
        gs.median.insert("normalized".into(), Real(normalized));
        groups.push(gs);
        med.push(d);
        records.extend(recs);
        if let Some(budget) = config.budget {
            let load = if polynomial { t * kf * kf.ln().max(1.0) } else { t * kf };
            if load > budget * (n as f64).sqrt() {
                warnings.push(format!(
                    "n={n}: t·k{} = {load} exceeds budget·√n = {}",
                    if polynomial { "·log k" } else { "" },
                    budget * (n as f64).sqrt()
                ));
            }
        }
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mut slopes = vec![SlopeFit::fit(
        "median_distance_sq_vs_n",
        &x,
        &med,
        -1.0,
        config.tolerances.slope,
    )];
    let mut checks = Vec::new();
    if let Some(k0) = minimal_k0(&eigs, k) {
        checks.push(Check::new("minimal_k0", k0 as f64, 1.0, eigs.len() as f64));
    } else {
        warnings.push(format!("no eigenvalue at most λ_{k}/2; k0 undefined"));
    }
    if let Some(ks) = &config.k_grid {
        let mut meds = Vec::new();
        for &kk in ks {
            if kk >= eigs.len() {
                return Err(Error::Config(format!("k = {kk} must be below p = {}", eigs.len())));
            }
            let recs = run_trials(config, model, &IndexSet::top(kk), None, 0, kk as f64);
            let d = medians_of(&recs, "distance_sq");
            groups.push(group("k", kk as f64, &recs));
            meds.push(d);
            records.extend(recs);
        }
        let (lo, hi) = meds
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let f2 = config.tolerances.factor * config.tolerances.factor;
        checks.push(Check::new(&format!("k_sweep_spread n={base_n}"), hi / lo, 1.0, f2));
    }
    let mut summary = StudySummary::from_records(config, &records);
    summary.groups = groups;
    summary.slopes.append(&mut slopes);
    summary.checks = checks;
    summary.warnings = warnings;
    Ok(StudyOutput {
        records,
        summary,
        suite: None,
    })
}

/// `ε` sweep and `p − k` doubling for `diag(λ, 0) + ε GOE`.
pub fn run_goe(config: &ExperimentConfig) -> Result<StudyOutput> {
    let model = model(config)?;
    let ModelSpec::Goe { eigs, p, .. } = model else {
        return Err(Error::Config("goe study needs a goe model".into()));
    };
    let k = eigs.len();
    let set = config.set.resolve(*p)?;
    let eps = config.eps_grid.clone().unwrap_or_else(|| vec![1e-3, 2e-3, 5e-3, 1e-2]);
    let ps = config.p_grid.clone().unwrap_or_else(|| vec![*p, 2 * (*p - k) + k]);
    let mut records = Vec::new();
    let mut groups = Vec::new();
    let mut med = Vec::new();
    let mut offset = 0u64;
    for &e in &eps {
        let recs = run_trials(config, &model.with_epsilon(e), &set, None, offset, e);
        offset += config.trials as u64;
        med.push(medians_of(&recs, "distance_sq"));
        groups.push(group("epsilon", e, &recs));
        records.extend(recs);
    }
    let mut summary_slopes = vec![SlopeFit::fit(
        "median_distance_sq_vs_epsilon",
        &eps,
        &med,
        2.0,
        config.tolerances.slope,
    )];
    let mut checks = Vec::new();
    let mut pmed = Vec::new();
    for &pp in &ps {
        if pp < k {
            return Err(Error::Config(format!("p = {pp} is below the number of spikes {k}")));
        }
        let m = model.with_p(pp).with_epsilon(eps[0]);
        let recs = run_trials(config, &m, &set, None, offset, pp as f64);
        offset += config.trials as u64;
        pmed.push(medians_of(&recs, "distance_sq"));
        groups.push(group("p", pp as f64, &recs));
        records.extend(recs);
    }
    for w in 0..ps.len().saturating_sub(1) {
        let expected = (ps[w + 1] - k) as f64 / (ps[w] - k) as f64;
        checks.push(Check::new(
            &format!("p_ratio p={}->{}", ps[w], ps[w + 1]),
            pmed[w + 1] / pmed[w],
            expected - 0.25 * expected,
            expected + 0.25 * expected,
        ));
    }
    let mut summary = StudySummary::from_records(config, &records);
    summary.groups = groups;
    summary.slopes.append(&mut summary_slopes);
    summary.checks = checks;
    Ok(StudyOutput {
        records,
        summary,
        suite: None,
    })
}

/// `n` sweep for the spiked model at `I = I₁`, with the Davis–Kahan shape
/// `μ₁² m₁ p / (n (μ₁ − μ₂)²)` recorded per grid point.
pub fn run_spiked(config: &ExperimentConfig) -> Result<StudyOutput> {
    let model = model(config)?;
    let ModelSpec::Spiked { mu, m, law, .. } = model else {
        return Err(Error::Config("spiked study needs a spiked model".into()));
    };
    let p: usize = m.iter().sum();
    let eigs = spectrum(&DecayProfile::Spiked { mu: *mu, m: *m })?;
    let set = eigenlevel(&eigs, 1)?;
    let ns = config.n_grid.clone().unwrap_or_else(|| vec![2000, 8000, 32000]);
    let mut records = Vec::new();
    let mut groups = Vec::new();
    let mut med = Vec::new();
    for (g, &n) in ns.iter().enumerate() {
        let recs = run_trials(
            config,
            &model.with_n(n),
            &set,
            None,
            (g * config.trials) as u64,
            n as f64,
        );
        let mut gs = group("n", n as f64, &recs);
        let shape = mu[0] * mu[0] * m[0] as f64 * p as f64 / (n as f64 * (mu[0] - mu[1]).powi(2));
        gs.median.insert("dk_shape".into(), Real(shape));
        med.push(medians_of(&recs, "distance_sq"));
        groups.push(gs);
        records.extend(recs);
    }
    let x: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let mut checks = Vec::new();
    let slope = SlopeFit::fit("median_distance_sq_vs_n", &x, &med, -1.0, config.tolerances.slope);
    if config.m1_doubling {
        let doubled = ModelSpec::Spiked {
            mu: *mu,
            m: [2 * m[0], m[1], m[2]],
            law: law.clone(),
            n: ns[0],
        };
        let dset = IndexSet::top(2 * m[0]);
        let first = (ns.len() * config.trials) as u64;
        let recs = run_trials(config, &doubled, &dset, None, first, ns[0] as f64);
        let ratio = medians_of(&recs, "distance_sq") / med[0];
        checks.push(Check::new("m1_doubling_ratio", ratio, 1.0, 3.0));
        groups.push(group("m1", (2 * m[0]) as f64, &recs));
        records.extend(recs);
    }
    let mut summary = StudySummary::from_records(config, &records);
    summary.groups = groups;
    summary.slopes.push(slope);
    summary.checks = checks;
    Ok(StudyOutput {
        records,
        summary,
        suite: None,
    })
}

/// The deterministic property suite as a study.
pub fn run_prop_suite(config: &ExperimentConfig) -> Result<StudyOutput> {
    let report = run_suite(config.seed_base, &config.suite, config.tolerances.identity);
    let mut summary = StudySummary::from_records(config, &[]);
    summary.violations = report.sections.iter().map(|s| (s.name.clone(), s.violations)).collect();
    summary.checks = report
        .sections
        .iter()
        .map(|s| Check::new(&format!("{} checked", s.name), s.checked as f64, 0.0, f64::INFINITY))
        .collect();
    Ok(StudyOutput {
        records: Vec::new(),
        summary,
        suite: Some(report),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::SetSelection;

    fn zero_config(study: StudyKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            study,
            Some(ModelSpec::Zero {
                profile: DecayProfile::Exponential {
                    alpha: 1.0,
                    p: Some(10),
                },
            }),
        );
        c.trials = 3;
        c.set = SetSelection::Top(3);
        c
    }

    #[test]
    fn zero_perturbation_has_zero_distance() {
        let out = run_study(&zero_config(StudyKind::BoundValidity)).unwrap();
        assert_eq!(out.records.len(), 3);
        for r in &out.records {
            assert!(!r.failed);
            assert_eq!(r.distance_sq, 0.0);
            assert!(r.thm2_bound >= 0.0 && r.dk_hs >= 0.0 && r.thm4_bound >= 0.0);
        }
        assert_eq!(out.deterministic_violations(), 0);
    }

    #[test]
    fn running_example_study() {
        let cfg = ExperimentConfig::parse(
            r#"
study = "bound_validity"
trials = 2
[model]
kind = "fixed"
sigma = [[2.0, 0.0], [0.0, 1.0]]
sigma_hat = [[2.0, 0.1], [0.1, 1.0]]
"#,
        )
        .unwrap();
        let out = run_study(&cfg).unwrap();
        assert!(out.records.iter().all(|r| !r.thm2_applicable));
        assert!((out.records[0].thm2_condition - 0.2121320343559642).abs() < 1e-12);
    }

    #[test]
    fn minimal_k0_examples() {
        let eigs = [8.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(minimal_k0(&eigs, 1), Some(2));
        assert_eq!(minimal_k0(&eigs, 2), Some(4));
        assert_eq!(minimal_k0(&eigs, 5), None);
    }

    #[test]
    fn workers_do_not_change_records() {
        let mut cfg = ExperimentConfig::parse(
            r#"
study = "bound_validity"
trials = 12
seed_base = 5
set = { top = 2 }
[model]
kind = "covariance"
n = 200
[model.profile]
kind = "exponential"
alpha = 1.0
p = 8
"#,
        )
        .unwrap();
        let a = run_study(&cfg).unwrap().records;
        cfg.workers = 4;
        let b = run_study(&cfg).unwrap().records;
        assert_eq!(a, b);
    }
}
