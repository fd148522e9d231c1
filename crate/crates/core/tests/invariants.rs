use eigenshift::blocks::{build_scheme, separation_check, theorem4_bound, EnvelopePair, Granularity};
use eigenshift::bounds::{
    coefficient_envelope, davis_kahan_bound, eigenlevel, first_order, refined_bound, relative_rank,
    relative_rank_eigenlevel, theorem2_bound, theorem3_bound_with_x, DkMode,
};
use eigenshift::models::{
    sample_empirical_covariance, sample_goe, spectrum, CoefficientLaw, DecayProfile, KLSourceSpec, PerturbedPair,
    Provenance,
};
use eigenshift::spectral::{decompose, hs_distance_sq, hs_distance_sq_entrywise, projector, IndexSet, SymMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

const SLACK: f64 = 1e-10;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn symmetric(p: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-5.0f64..5.0, p * p).prop_map(move |v| SymMatrix::from_fn(p, |i, j| v[i * p + j]).unwrap())
}

fn matrix_and_set() -> impl Strategy<Value = (SymMatrix, IndexSet)> {
    (1usize..=12).prop_flat_map(|p| {
        (symmetric(p), prop::collection::btree_set(1..=p, 1..=p)).prop_map(|(a, s)| (a, IndexSet::new(s).unwrap()))
    })
}

/// Descending positive spectrum with distinct entries.
fn spectrum_strategy(max_p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, 2..=max_p).prop_map(|ratios| {
        let mut v = Vec::with_capacity(ratios.len());
        let mut level = 10.0;
        for r in ratios {
            v.push(level);
            level *= r;
        }
        v
    })
}

/// Diagonal `Σ` with a perturbation `E_ij = ε z_ij √(λ_i λ_j)`.
fn relative_pair() -> impl Strategy<Value = (PerturbedPair, IndexSet)> {
    spectrum_strategy(10).prop_flat_map(|eigs| {
        let p = eigs.len();
        (
            Just(eigs),
            prop::collection::vec(-1.0f64..1.0, p * p),
            -5.0f64..-1.0,
            1..=p.saturating_sub(1).max(1),
        )
            .prop_map(|(eigs, z, log_eps, k)| {
                let p = eigs.len();
                let eps = 10f64.powf(log_eps);
                let sigma = SymMatrix::diagonal(&eigs);
                let e = SymMatrix::from_fn(p, |i, j| eps * z[i * p + j] * (eigs[i] * eigs[j]).sqrt()).unwrap();
                let pair = PerturbedPair::from_perturbation(sigma, &e, Provenance::fixed("proptest")).unwrap();
                (pair, IndexSet::top(k))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projectors_are_symmetric_idempotent((a, set) in matrix_and_set()) {
        let model = decompose(&a).unwrap();
        let pm = projector(&model, &set).unwrap();
        let m = pm.as_matrix();
        prop_assert!(max_abs(&(m * m - m)) <= SLACK);
        prop_assert!(max_abs(&(m - m.transpose())) <= SLACK);
    }

    #[test]
    fn decomposition_invariants((a, _) in matrix_and_set()) {
        let model = decompose(&a).unwrap();
        let eigs = model.eigenvalues();
        prop_assert!(eigs.windows(2).all(|w| w[0] >= w[1]));
        let u = model.eigenvectors();
        let p = a.dim();
        prop_assert!(max_abs(&(u.transpose() * u - DMatrix::identity(p, p))) <= SLACK);
        let residual = max_abs(&(model.reconstruct() - a.as_matrix()));
        prop_assert!(residual <= 1e-8 * a.max_abs().max(f64::MIN_POSITIVE));
        let again = decompose(&a).unwrap();
        prop_assert_eq!(again.eigenvalues(), eigs);
        prop_assert_eq!(again.eigenvectors(), u);
    }

    #[test]
    fn distance_routes_agree_and_are_symmetric(
        (a, set) in matrix_and_set(),
        noise in prop::collection::vec(-1.0f64..1.0, 144),
    ) {
        let p = a.dim();
        let b = SymMatrix::from_fn(p, |i, j| a.get(i, j) + noise[i * 12 + j]).unwrap();
        let (ma, mb) = (decompose(&a).unwrap(), decompose(&b).unwrap());
        let trace = hs_distance_sq(&ma, &mb, &set).unwrap();
        let entry = hs_distance_sq_entrywise(&ma, &mb, &set).unwrap();
        prop_assert!((trace - entry).abs() <= SLACK, "{trace} vs {entry}");
        let swapped = hs_distance_sq(&mb, &ma, &set).unwrap();
        prop_assert!((trace - swapped).abs() <= SLACK);
        prop_assert!(trace >= -SLACK && trace <= 2.0 * set.len() as f64 + SLACK);
    }

    #[test]
    fn relative_rank_is_scale_invariant(eigs in spectrum_strategy(12), c in 1e-3f64..1e3, k in 1usize..12) {
        let set = IndexSet::top(k.min(eigs.len()));
        let r = relative_rank(&eigs, &set).unwrap();
        let scaled: Vec<f64> = eigs.iter().map(|l| c * l).collect();
        let rc = relative_rank(&scaled, &set).unwrap();
        prop_assert!((r - rc).abs() <= 1e-12 * r.abs().max(1.0), "{r} vs {rc}");
    }

    #[test]
    fn eigenlevel_rank_agrees(levels in prop::collection::vec((0.05f64..1.0, 1usize..4), 2..6), k in 1usize..6) {
        let mut eigs = Vec::new();
        let mut level = 10.0;
        for (ratio, mult) in &levels {
            eigs.extend(std::iter::repeat_n(level, *mult));
            level *= ratio;
        }
        let k = k.min(levels.len());
        let direct = relative_rank(&eigs, &eigenlevel(&eigs, k).unwrap()).unwrap();
        let via = relative_rank_eigenlevel(&eigs, k).unwrap();
        prop_assert!((direct - via).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn exponential_spectrum_is_exact(alpha in 0.1f64..3.0, p in 1usize..60) {
        let eigs = spectrum(&DecayProfile::Exponential { alpha, p: Some(p) }).unwrap();
        prop_assert_eq!(eigs.len(), p);
        for (j, l) in eigs.iter().enumerate() {
            prop_assert_eq!(*l, (-alpha * (j + 1) as f64).exp());
            prop_assert!(*l > 0.0);
        }
        prop_assert!(eigs.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn polynomial_spectrum_is_exact(alpha in 0.1f64..3.0, p in 1usize..60) {
        let eigs = spectrum(&DecayProfile::Polynomial { alpha, d: 1, p: Some(p) }).unwrap();
        for (j, l) in eigs.iter().enumerate() {
            prop_assert_eq!(*l, ((j + 1) as f64).powf(-alpha - 1.0));
        }
        prop_assert!(eigs.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn generators_are_reproducible(seed in any::<u64>(), trial in 0u64..1000, p in 1usize..8) {
        prop_assert_eq!(sample_goe(p, trial, seed).unwrap(), sample_goe(p, trial, seed).unwrap());
        let spec = KLSourceSpec::new(
            DecayProfile::Exponential { alpha: 1.0, p: Some(p) },
            CoefficientLaw::StudentT { nu: 5.0 },
            4.0,
            seed,
        )
        .unwrap();
        let a = sample_empirical_covariance(&spec, 7, trial).unwrap();
        let b = sample_empirical_covariance(&spec, 7, trial).unwrap();
        prop_assert_eq!(a.sigma_hat(), b.sigma_hat());
        prop_assert!(*a.eigenvalues_hat().last().unwrap() >= -1e-10);
    }

    #[test]
    fn certificates_and_soundness((pair, set) in relative_pair()) {
        let eigs = pair.eigenvalues();
        let d = hs_distance_sq(pair.model(), pair.model_hat(), &set).unwrap();
        let x = coefficient_envelope(&pair).unwrap();

        let thm2 = theorem2_bound(eigs, x, &set).unwrap();
        prop_assert_eq!(thm2.applicable, thm2.condition_value <= thm2.condition_threshold);
        prop_assert!(!thm2.applicable || thm2.bound_value.is_finite());
        prop_assert!(thm2.holds_for(d, SLACK), "theorem 2: {d} > {}", thm2.bound_value);

        let refined = refined_bound(&pair, x, &set).unwrap();
        prop_assert!(refined.holds_for(d, SLACK), "refined: {d} > {}", refined.bound_value);

        let thm3 = theorem3_bound_with_x(eigs, x, &set).unwrap();
        prop_assert_eq!(thm3.bound_value, 4.0 * thm2.bound_value);

        let dk = davis_kahan_bound(pair.perturbation(), eigs, &set, DkMode::Hs).unwrap();
        prop_assert!(d.sqrt() <= dk + SLACK);
        let dk_op = davis_kahan_bound(pair.perturbation(), eigs, &set, DkMode::Op).unwrap();
        prop_assert!(d.sqrt() <= dk_op + SLACK);

        let fo = first_order(&pair, &set).unwrap();
        prop_assert!((fo.linear_hs_sq - fo.linear_term.hs_norm().powi(2)).abs() <= SLACK);
        prop_assert_eq!(fo.remainder_op_bound.is_finite(), fo.delta < 1.0);
        if fo.delta < 1.0 {
            let diff = projector(pair.model_hat(), &set).unwrap().sub(&projector(pair.model(), &set).unwrap()).unwrap();
            let residual = diff.sub(&fo.linear_term).unwrap().op_norm();
            prop_assert!(residual <= fo.remainder_op_bound + SLACK);
        }
    }

    #[test]
    fn singleton_theorem4_reproduces_theorem2((pair, set) in relative_pair(), x in 1e-4f64..0.2) {
        let eigs = pair.eigenvalues();
        let scheme = build_scheme(eigs, &set, &Granularity::Singletons).unwrap();
        let env = EnvelopePair::relative(&scheme, eigs, x).unwrap();
        let t4 = theorem4_bound(&scheme, &env, true).unwrap();
        let t2 = theorem2_bound(eigs, x, &set).unwrap();
        let simplified = t4.simplified.unwrap_or(f64::NAN);
        if t2.applicable {
            prop_assert!((simplified - t2.bound_value).abs() <= 1e-12 * t2.bound_value.abs().max(f64::MIN_POSITIVE));
        }
        prop_assert!(t2.applicable <= t4.certificate.applicable || t4.simplified.is_none());
    }

    #[test]
    fn gap_arrays_match_brute_force((pair, set) in relative_pair()) {
        let eigs = pair.eigenvalues();
        for granularity in [Granularity::Singletons, Granularity::Eigenlevel, Granularity::Coarse] {
            let scheme = build_scheme(eigs, &set, &granularity).unwrap();
            let m = scheme.m();
            let outside = set.complement(eigs.len());
            for (r, block) in scheme.blocks().enumerate() {
                let other = if r < m { &outside } else { &set };
                let mut g = f64::INFINITY;
                for i in block.iter() {
                    for j in other.iter() {
                        g = g.min((eigs[i - 1] - eigs[j - 1]).abs());
                    }
                }
                prop_assert_eq!(scheme.g()[r], g);
            }
            for (r, outer) in scheme.outer().iter().enumerate() {
                for (s, inner) in scheme.inner().iter().enumerate() {
                    let mut g = f64::INFINITY;
                    for i in inner.iter() {
                        for j in outer.iter() {
                            g = g.min((eigs[i - 1] - eigs[j - 1]).powi(2));
                        }
                    }
                    prop_assert_eq!(scheme.g_cross()[r][s], g);
                }
            }
        }
    }

    #[test]
    fn separation_holds_under_the_block_gate((pair, set) in relative_pair()) {
        let eigs = pair.eigenvalues();
        let scheme = build_scheme(eigs, &set, &Granularity::Singletons).unwrap();
        let env = EnvelopePair::measured(&scheme, eigs, pair.coefficients()).unwrap();
        let t4 = theorem4_bound(&scheme, &env, true).unwrap();
        if t4.certificate.applicable {
            let entries = separation_check(&pair, &set).unwrap();
            prop_assert!(entries.iter().all(|e| e.ok));
            let d = hs_distance_sq(pair.model(), pair.model_hat(), &set).unwrap();
            prop_assert!(t4.certificate.holds_for(d, SLACK));
        }
    }
}
