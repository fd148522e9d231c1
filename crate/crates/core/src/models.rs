//! Random perturbation models: empirical covariance sampling from a
//! truncated Karhunen–Loève expansion, low-rank signal plus GOE noise, and
//! the spiked covariance model.
//!
//! All generators work in the eigenbasis of the population operator (the
//! standard basis), which loses nothing because every measured quantity is
//! basis-free. [`random_rotation`] and [`PerturbedPair::rotated`] exist to
//! check that claim.
//!
//! # Randomness
//!
//! Every draw comes from a ChaCha8 stream. The generator is seeded with
//! `ChaCha8Rng::seed_from_u64(seed_base)` and then switched to stream
//! `trial * 16 + tag`, where `tag` identifies the purpose of the draw (see
//! [`Stream`]). A trial therefore never shares state with another trial, and
//! results do not depend on how trials are scheduled across threads.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::spectral::{decompose_labeled, SpectralModel, SymMatrix};

/// Truncated tail mass allowed by [`truncation_dimension`], relative to the trace.
pub const TRUNCATION_TAIL: f64 = 1e-6;

/// Upper limit for automatically chosen truncation dimensions.
pub const MAX_TRUNCATION: usize = 4096;

const STREAMS_PER_TRIAL: u64 = 16;

/// Purpose tags for per-trial random streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Coefficients = 0,
    Goe = 1,
    Rotation = 2,
    Instance = 3,
    Perturbation = 4,
}

/// The random stream for `(seed_base, trial, stream)`.
pub fn trial_rng(seed_base: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_base);
    rng.set_stream(trial.wrapping_mul(STREAMS_PER_TRIAL).wrapping_add(stream as u64));
    rng
}

/// Eigenvalue profile of the population covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayProfile {
    /// `λ_j = exp(−α j)`.
    Exponential {
        alpha: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<usize>,
    },
    /// `λ_j = j^(−α−1)`; `d` is the pivot index of the two-sided decay assumption.
    Polynomial {
        alpha: f64,
        #[serde(default = "default_pivot")]
        d: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<usize>,
    },
    /// Step spectrum: `mu[r]` repeated `m[r]` times.
    Spiked {
        mu: [f64; 3],
        m: [usize; 3],
    },
    Explicit {
        values: Vec<f64>,
    },
}

fn default_pivot() -> usize {
    1
}

impl DecayProfile {
    pub fn dim(&self) -> usize {
        match self {
            DecayProfile::Exponential { alpha, p } => p.unwrap_or_else(|| truncation_dimension(self, *alpha)),
            DecayProfile::Polynomial { alpha, p, .. } => p.unwrap_or_else(|| truncation_dimension(self, *alpha)),
            DecayProfile::Spiked { m, .. } => m.iter().sum(),
            DecayProfile::Explicit { values } => values.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DecayProfile::Exponential { .. } => "exponential",
            DecayProfile::Polynomial { .. } => "polynomial",
            DecayProfile::Spiked { .. } => "spiked",
            DecayProfile::Explicit { .. } => "explicit",
        }
    }

    /// Same profile with the truncation dimension replaced.
    pub fn with_dim(&self, dim: usize) -> DecayProfile {
        match self.clone() {
            DecayProfile::Exponential { alpha, .. } => DecayProfile::Exponential { alpha, p: Some(dim) },
            DecayProfile::Polynomial { alpha, d, .. } => DecayProfile::Polynomial { alpha, d, p: Some(dim) },
            other => other,
        }
    }
}

/// Smallest `p` whose discarded tail mass is below [`TRUNCATION_TAIL`] of the
/// trace, capped at [`MAX_TRUNCATION`]. Exponential profiles use the closed
/// form `exp(−α p)`; polynomial ones an Euler–Maclaurin tail estimate.
pub fn truncation_dimension(profile: &DecayProfile, alpha: f64) -> usize {
    if !(alpha > 0.0) {
        return 1;
    }
    match profile {
        DecayProfile::Exponential { .. } => {
            let p = ((1.0 / TRUNCATION_TAIL).ln() / alpha).floor() as usize + 1;
            p.clamp(1, MAX_TRUNCATION)
        }
        DecayProfile::Polynomial { .. } => {
            let s = alpha + 1.0;
            let tail = |p: f64| p.powf(1.0 - s) / (s - 1.0) - 0.5 * p.powf(-s) + s * p.powf(-s - 1.0) / 12.0;
            let mut head = 0.0;
            for p in 1..=MAX_TRUNCATION {
                head += (p as f64).powf(-s);
                let t = tail(p as f64);
                if t < TRUNCATION_TAIL * (head + t) {
                    return p;
                }
            }
            MAX_TRUNCATION
        }
        _ => profile.dim(),
    }
}

/// Descending eigenvalues for a profile.
pub fn spectrum(profile: &DecayProfile) -> Result<Vec<f64>> {
    let bad = |m: String| Err(Error::InvalidParameter(m));
    if let DecayProfile::Exponential { alpha, .. } | DecayProfile::Polynomial { alpha, .. } = profile {
        if !(*alpha > 0.0) || !alpha.is_finite() {
            return bad(format!("decay rate must be positive, got {alpha}"));
        }
    }
    let values: Vec<f64> = match profile {
        DecayProfile::Exponential { alpha, .. } => {
            let p = profile.dim();
            (1..=p).map(|j| (-alpha * j as f64).exp()).collect()
        }
        DecayProfile::Polynomial { alpha, d, .. } => {
            if *d == 0 {
                return bad("polynomial pivot d must be at least 1".into());
            }
            let p = profile.dim();
            (1..=p).map(|j| (j as f64).powf(-alpha - 1.0)).collect()
        }
        DecayProfile::Spiked { mu, m } => {
            if !(mu[0] > mu[1] && mu[1] > mu[2] && mu[2] > 0.0) {
                return bad(format!("spiked levels must satisfy mu1 > mu2 > mu3 > 0, got {mu:?}"));
            }
            if m.contains(&0) {
                return bad(format!("spiked multiplicities must be positive, got {m:?}"));
            }
            mu.iter()
                .zip(m)
                .flat_map(|(&v, &k)| std::iter::repeat_n(v, k))
                .collect()
        }
        DecayProfile::Explicit { values } => {
            if values.is_empty() {
                return bad("explicit spectrum is empty".into());
            }
            if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return bad("explicit eigenvalues must be finite and strictly positive".into());
            }
            if values.windows(2).any(|w| w[1] > w[0]) {
                return bad("explicit eigenvalues must be non-increasing".into());
            }
            values.clone()
        }
    };
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0)) {
        return bad(format!(
            "{} profile produced a non-positive eigenvalue (underflow?)",
            profile.name()
        ));
    }
    Ok(values)
}

/// Distribution of the normalized Karhunen–Loève coefficients. Every law
/// has mean zero and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CoefficientLaw {
    Gaussian,
    /// Student t with `nu` degrees of freedom, scaled by `sqrt((nu-2)/nu)`.
    StudentT {
        nu: f64,
    },
    Rademacher,
}

impl CoefficientLaw {
    /// Student t with `nu = q + 1`: finite `q`-th moment, infinite beyond `q + 1`.
    pub fn heavy_tailed(q: f64) -> CoefficientLaw {
        CoefficientLaw::StudentT { nu: q + 1.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CoefficientLaw::Gaussian => "gaussian",
            CoefficientLaw::StudentT { .. } => "student_t",
            CoefficientLaw::Rademacher => "rademacher",
        }
    }

    pub fn is_sub_gaussian(&self) -> bool {
        !matches!(self, CoefficientLaw::StudentT { .. })
    }

    pub fn validate(&self) -> Result<()> {
        if let CoefficientLaw::StudentT { nu } = self {
            if !(*nu > 2.0) || !nu.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "student_t needs nu > 2 for unit variance, got {nu}"
                )));
            }
        }
        Ok(())
    }

    fn sampler(&self) -> Result<CoefficientSampler> {
        self.validate()?;
        Ok(match self {
            CoefficientLaw::Gaussian => CoefficientSampler::Gaussian,
            CoefficientLaw::Rademacher => CoefficientSampler::Rademacher,
            CoefficientLaw::StudentT { nu } => CoefficientSampler::StudentT {
                dist: StudentT::new(*nu).map_err(|e| Error::InvalidParameter(e.to_string()))?,
                scale: ((nu - 2.0) / nu).sqrt(),
            },
        })
    }

    /// `E|η|^q`, or `+inf` when the moment does not exist.
    pub fn absolute_moment(&self, q: f64) -> f64 {
        let half_pi_ln = 0.5 * std::f64::consts::PI.ln();
        match self {
            CoefficientLaw::Rademacher => 1.0,
            CoefficientLaw::Gaussian => (0.5 * q * 2f64.ln() + ln_gamma(0.5 * (q + 1.0)) - half_pi_ln).exp(),
            CoefficientLaw::StudentT { nu } => {
                if q >= *nu {
                    return f64::INFINITY;
                }
                let raw = 0.5 * q * nu.ln() + ln_gamma(0.5 * (q + 1.0)) + ln_gamma(0.5 * (nu - q))
                    - half_pi_ln
                    - ln_gamma(0.5 * nu);
                (raw + 0.5 * q * ((nu - 2.0) / nu).ln()).exp()
            }
        }
    }
}

enum CoefficientSampler {
    Gaussian,
    Rademacher,
    StudentT { dist: StudentT<f64>, scale: f64 },
}

impl CoefficientSampler {
    #[inline]
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            CoefficientSampler::Gaussian => StandardNormal.sample(rng),
            CoefficientSampler::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            CoefficientSampler::StudentT { dist, scale } => scale * dist.sample(rng),
        }
    }
}

/// Source of i.i.d. random vectors `X = Σ_j sqrt(λ_j) η_j e_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KLSourceSpec {
    pub profile: DecayProfile,
    pub law: CoefficientLaw,
    /// Moment order of the uniform coefficient bound.
    pub q: f64,
    pub seed_base: u64,
}

impl KLSourceSpec {
    pub fn new(profile: DecayProfile, law: CoefficientLaw, q: f64, seed_base: u64) -> Result<Self> {
        let spec = KLSourceSpec {
            profile,
            law,
            q,
            seed_base,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        if !(self.q > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "moment order q must be positive, got {}",
                self.q
            )));
        }
        if let CoefficientLaw::StudentT { nu } = self.law {
            if nu <= self.q {
                return Err(Error::InvalidParameter(format!(
                    "student_t with nu = {nu} has no finite moment of order q = {}",
                    self.q
                )));
            }
        }
        spectrum(&self.profile).map(|_| ())
    }

    /// The moment constant `sup_j E|η_j|^q` of the coefficient law.
    pub fn moment_constant(&self) -> f64 {
        self.law.absolute_moment(self.q)
    }
}

/// Where a pair came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub parameters: BTreeMap<String, f64>,
    pub seed_base: u64,
    pub trial: u64,
}

impl Provenance {
    pub fn fixed(generator: &str) -> Provenance {
        Provenance {
            generator: generator.to_string(),
            ..Default::default()
        }
    }
}

/// A population operator, its perturbed version, the perturbation, and both
/// spectral decompositions.
#[derive(Clone, Debug)]
pub struct PerturbedPair {
    sigma: SymMatrix,
    sigma_hat: SymMatrix,
    perturbation: SymMatrix,
    model: SpectralModel,
    model_hat: SpectralModel,
    coefficients: DMatrix<f64>,
    provenance: Provenance,
}

impl PerturbedPair {
    /// `E` is computed as `sigma_hat − sigma`.
    pub fn new(sigma: SymMatrix, sigma_hat: SymMatrix, provenance: Provenance) -> Result<Self> {
        let perturbation = sigma_hat.sub(&sigma)?;
        let model = decompose_labeled(&sigma, "sigma")?;
        let model_hat = decompose_labeled(&sigma_hat, "sigma_hat")?;
        let coefficients = model.coefficients(&perturbation)?;
        Ok(PerturbedPair {
            sigma,
            sigma_hat,
            perturbation,
            model,
            model_hat,
            coefficients,
            provenance,
        })
    }

    pub fn from_perturbation(sigma: SymMatrix, e: &SymMatrix, provenance: Provenance) -> Result<Self> {
        let sigma_hat = sigma.add(e)?;
        PerturbedPair::new(sigma, sigma_hat, provenance)
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    pub fn sigma_hat(&self) -> &SymMatrix {
        &self.sigma_hat
    }

    pub fn perturbation(&self) -> &SymMatrix {
        &self.perturbation
    }

    pub fn model(&self) -> &SpectralModel {
        &self.model
    }

    pub fn model_hat(&self) -> &SpectralModel {
        &self.model_hat
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.model.eigenvalues()
    }

    pub fn eigenvalues_hat(&self) -> &[f64] {
        self.model_hat.eigenvalues()
    }

    /// `⟨u_i, E u_j⟩` for all `i, j` (0-based storage).
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Conjugates both operators by the orthogonal matrix `q`.
    pub fn rotated(&self, q: &DMatrix<f64>) -> Result<PerturbedPair> {
        let conj = |a: &SymMatrix| SymMatrix::from_matrix(q * a.as_matrix() * q.transpose());
        let mut provenance = self.provenance.clone();
        provenance.generator.push_str("+rotation");
        PerturbedPair::new(conj(&self.sigma)?, conj(&self.sigma_hat)?, provenance)
    }
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`).
pub fn random_rotation<R: Rng + ?Sized>(p: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col *= -1.0;
        }
    }
    q
}

/// Empirical covariance `(1/n) Σ_l X_l X_lᵀ` of `n` draws from `spec`.
/// Deterministic in `(spec.seed_base, trial)`.
pub fn sample_empirical_covariance(spec: &KLSourceSpec, n: usize, trial: u64) -> Result<PerturbedPair> {
    if n == 0 {
        return Err(Error::InvalidParameter("sample size must be at least 1".into()));
    }
    spec.validate()?;
    let eigs = spectrum(&spec.profile)?;
    let sigma_hat = empirical_covariance(&eigs, &spec.law, n, spec.seed_base, trial)?;
    let mut parameters = BTreeMap::new();
    parameters.insert("n".to_string(), n as f64);
    parameters.insert("p".to_string(), eigs.len() as f64);
    parameters.insert("q".to_string(), spec.q);
    match &spec.profile {
        DecayProfile::Exponential { alpha, .. } | DecayProfile::Polynomial { alpha, .. } => {
            parameters.insert("alpha".to_string(), *alpha);
        }
        _ => {}
    }
    if let CoefficientLaw::StudentT { nu } = spec.law {
        parameters.insert("nu".to_string(), nu);
    }
    let provenance = Provenance {
        generator: format!("empirical_covariance/{}/{}", spec.profile.name(), spec.law.name()),
        parameters,
        seed_base: spec.seed_base,
        trial,
    };
    PerturbedPair::new(SymMatrix::diagonal(&eigs), sigma_hat, provenance)
}

fn empirical_covariance(eigs: &[f64], law: &CoefficientLaw, n: usize, seed_base: u64, trial: u64) -> Result<SymMatrix> {
    let sampler = law.sampler()?;
    let p = eigs.len();
    let roots: Vec<f64> = eigs.iter().map(|l| l.sqrt()).collect();
    let mut rng = trial_rng(seed_base, trial, Stream::Coefficients);
    let mut x = DMatrix::<f64>::zeros(n, p);
    for l in 0..n {
        for j in 0..p {
            x[(l, j)] = roots[j] * sampler.sample(&mut rng);
        }
    }
    let mut cov = x.tr_mul(&x);
    cov /= n as f64;
    SymMatrix::from_matrix(cov)
}

/// GOE matrix: standard normal entries above the diagonal, variance-2
/// normal entries on it. Entries are drawn row by row over the upper
/// triangle.
pub fn sample_goe(p: usize, trial: u64, seed_base: u64) -> Result<SymMatrix> {
    if p == 0 {
        return Err(Error::InvalidParameter("GOE dimension must be at least 1".into()));
    }
    let mut rng = trial_rng(seed_base, trial, Stream::Goe);
    Ok(goe_from_rng(p, &mut rng))
}

pub(crate) fn goe_from_rng<R: Rng + ?Sized>(p: usize, rng: &mut R) -> SymMatrix {
    let mut m = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let z: f64 = StandardNormal.sample(rng);
            let v = if i == j { std::f64::consts::SQRT_2 * z } else { z };
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    SymMatrix::from_matrix(m).expect("square by construction")
}

/// `Σ = diag(eigs_k, 0, …, 0)` perturbed by `epsilon` times a GOE matrix.
pub fn low_rank_plus_goe(eigs_k: &[f64], p: usize, epsilon: f64, trial: u64, seed_base: u64) -> Result<PerturbedPair> {
    if eigs_k.is_empty() || eigs_k.len() > p {
        return Err(Error::InvalidParameter(format!(
            "signal rank {} must lie in 1..={p}",
            eigs_k.len()
        )));
    }
    if eigs_k.iter().any(|v| !(*v > 0.0)) || eigs_k.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidParameter(
            "signal eigenvalues must be positive and non-increasing".into(),
        ));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise level must be non-negative, got {epsilon}"
        )));
    }
    let mut diag = eigs_k.to_vec();
    diag.resize(p, 0.0);
    let sigma = SymMatrix::diagonal(&diag);
    let noise = sample_goe(p, trial, seed_base)?.scale(epsilon);
    let mut parameters = BTreeMap::new();
    parameters.insert("epsilon".to_string(), epsilon);
    parameters.insert("p".to_string(), p as f64);
    parameters.insert("k".to_string(), eigs_k.len() as f64);
    let provenance = Provenance {
        generator: "low_rank_plus_goe".to_string(),
        parameters,
        seed_base,
        trial,
    };
    PerturbedPair::from_perturbation(sigma, &noise, provenance)
}

/// Empirical covariance under a spiked profile with a sub-Gaussian law.
pub fn spiked_covariance_sample(
    profile: &DecayProfile,
    law: &CoefficientLaw,
    n: usize,
    trial: u64,
    seed_base: u64,
) -> Result<PerturbedPair> {
    let DecayProfile::Spiked { mu, m } = profile else {
        return Err(Error::InvalidParameter(format!(
            "spiked sampling needs a spiked profile, got {}",
            profile.name()
        )));
    };
    if !law.is_sub_gaussian() {
        return Err(Error::InvalidParameter(format!(
            "spiked covariance model requires a sub-Gaussian law, got {}",
            law.name()
        )));
    }
    let spec = KLSourceSpec::new(profile.clone(), law.clone(), 2.0, seed_base)?;
    let mut pair = sample_empirical_covariance(&spec, n, trial)?;
    let prov = &mut pair.provenance;
    prov.generator = format!("spiked_covariance/{}", law.name());
    prov.parameters.remove("q");
    for r in 0..3 {
        prov.parameters.insert(format!("mu{}", r + 1), mu[r]);
        prov.parameters.insert(format!("m{}", r + 1), m[r] as f64);
    }
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{hs_distance_sq, IndexSet};
    use approx::assert_abs_diff_eq;

    fn gaussian_spec(profile: DecayProfile, seed: u64) -> KLSourceSpec {
        KLSourceSpec::new(profile, CoefficientLaw::Gaussian, 5.0, seed).unwrap()
    }

    #[test]
    fn spectrum_examples() {
        let e = spectrum(&DecayProfile::Exponential {
            alpha: 2f64.ln(),
            p: Some(3),
        })
        .unwrap();
        for (v, want) in e.iter().zip([0.5, 0.25, 0.125]) {
            assert_abs_diff_eq!(*v, want, epsilon = 1e-15);
        }
        let s = spectrum(&DecayProfile::Spiked {
            mu: [3.0, 2.0, 1.0],
            m: [1, 2, 1],
        })
        .unwrap();
        assert_eq!(s, vec![3.0, 2.0, 2.0, 1.0]);
        let poly = spectrum(&DecayProfile::Polynomial {
            alpha: 1.0,
            d: 1,
            p: Some(3),
        })
        .unwrap();
        for (v, want) in poly.iter().zip([1.0, 0.25, 1.0 / 9.0]) {
            assert_abs_diff_eq!(*v, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn spectrum_rejects_bad_parameters() {
        assert!(spectrum(&DecayProfile::Exponential { alpha: 0.0, p: Some(3) }).is_err());
        assert!(spectrum(&DecayProfile::Exponential {
            alpha: -1.0,
            p: Some(3)
        })
        .is_err());
        assert!(spectrum(&DecayProfile::Spiked {
            mu: [1.0, 2.0, 0.5],
            m: [1, 1, 1]
        })
        .is_err());
        assert!(spectrum(&DecayProfile::Explicit { values: vec![1.0, 2.0] }).is_err());
        assert!(spectrum(&DecayProfile::Explicit { values: vec![1.0, 0.0] }).is_err());
    }

    #[test]
    fn truncation_rule() {
        let prof = DecayProfile::Exponential { alpha: 1.0, p: None };
        let p = prof.dim();
        assert_eq!(p, 14);
        let eigs = spectrum(&prof).unwrap();
        let tail: f64 = (p + 1..p + 200).map(|j| (-(j as f64)).exp()).sum();
        let total: f64 = eigs.iter().sum::<f64>() + tail;
        assert!(tail < TRUNCATION_TAIL * total);
        let shorter: f64 = (p..p + 200).map(|j| (-(j as f64)).exp()).sum();
        assert!(shorter >= TRUNCATION_TAIL * total);
        let poly = DecayProfile::Polynomial {
            alpha: 3.0,
            d: 1,
            p: None,
        };
        let p = poly.dim();
        let s = 4.0;
        let tail: f64 = (p + 1..200_000).map(|j| (j as f64).powf(-s)).sum();
        let head: f64 = (1..=p).map(|j| (j as f64).powf(-s)).sum();
        assert!(tail < TRUNCATION_TAIL * (head + tail), "p = {p}");
    }

    #[test]
    fn covariance_sampling_is_deterministic() {
        let spec = gaussian_spec(DecayProfile::Exponential { alpha: 1.0, p: Some(5) }, 7);
        let a = sample_empirical_covariance(&spec, 50, 3).unwrap();
        let b = sample_empirical_covariance(&spec, 50, 3).unwrap();
        let c = sample_empirical_covariance(&spec, 50, 4).unwrap();
        assert_eq!(a.sigma_hat(), b.sigma_hat());
        assert_ne!(a.sigma_hat(), c.sigma_hat());
        assert_eq!(a.perturbation(), &a.sigma_hat().sub(a.sigma()).unwrap());
    }

    #[test]
    fn covariance_is_psd() {
        for (law, n) in [
            (CoefficientLaw::Gaussian, 3),
            (CoefficientLaw::Rademacher, 20),
            (CoefficientLaw::StudentT { nu: 6.0 }, 8),
        ] {
            let spec = KLSourceSpec::new(DecayProfile::Exponential { alpha: 0.5, p: Some(8) }, law, 5.0, 1).unwrap();
            for t in 0..20 {
                let pair = sample_empirical_covariance(&spec, n, t).unwrap();
                let min = *pair.eigenvalues_hat().last().unwrap();
                assert!(min >= -1e-10, "min eigenvalue {min}");
            }
        }
    }

    #[test]
    fn large_sample_concentrates() {
        // CLT scale sqrt(2 λ_i λ_j / n) <= 0.0029 at n = 10^6; 0.02 is ~7 sigma.
        let spec = gaussian_spec(DecayProfile::Explicit { values: vec![2.0, 1.0] }, 11);
        let trials = 20;
        let ok = (0..trials)
            .filter(|&t| {
                let pair = sample_empirical_covariance(&spec, 1_000_000, t).unwrap();
                pair.perturbation().max_abs() <= 0.02
            })
            .count();
        assert!(ok as f64 >= 0.99 * trials as f64);
    }

    #[test]
    fn empirical_covariance_is_unbiased() {
        let spec = gaussian_spec(
            DecayProfile::Explicit {
                values: vec![2.0, 1.0, 0.5],
            },
            5,
        );
        let trials = 10_000;
        let n = 10;
        let mut sum = DMatrix::<f64>::zeros(3, 3);
        let mut sum_sq = DMatrix::<f64>::zeros(3, 3);
        for t in 0..trials {
            let pair = sample_empirical_covariance(&spec, n, t).unwrap();
            let m = pair.sigma_hat().as_matrix();
            sum += m;
            sum_sq += m.component_mul(m);
        }
        let tn = trials as f64;
        let lam = [2.0, 1.0, 0.5];
        for i in 0..3 {
            for j in 0..3 {
                let mean = sum[(i, j)] / tn;
                let var = sum_sq[(i, j)] / tn - mean * mean;
                let se = (var / tn).sqrt();
                let target = if i == j { lam[i] } else { 0.0 };
                assert!((mean - target).abs() <= 5.0 * se, "({i},{j}) mean {mean} se {se}");
            }
        }
    }

    #[test]
    fn unit_variance_laws() {
        for law in [
            CoefficientLaw::Gaussian,
            CoefficientLaw::Rademacher,
            CoefficientLaw::StudentT { nu: 6.0 },
        ] {
            let sampler = law.sampler().unwrap();
            let mut rng = trial_rng(99, 0, Stream::Coefficients);
            let n = 1_000_000;
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let v = sampler.sample(&mut rng);
                s += v;
                s2 += v * v;
            }
            let mean = s / n as f64;
            let var = s2 / n as f64 - mean * mean;
            assert!((var - 1.0).abs() < 0.01, "{} variance {var}", law.name());
        }
    }

    #[test]
    fn moment_constants() {
        assert_abs_diff_eq!(CoefficientLaw::Gaussian.absolute_moment(2.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(CoefficientLaw::Gaussian.absolute_moment(4.0), 3.0, epsilon = 1e-12);
        // scaled t: E η² = 1, E η⁴ = 3(ν−2)/(ν−4)
        let t = CoefficientLaw::StudentT { nu: 6.0 };
        assert_abs_diff_eq!(t.absolute_moment(2.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.absolute_moment(4.0), 6.0, epsilon = 1e-10);
        assert!(t.absolute_moment(6.0).is_infinite());
        assert!(KLSourceSpec::new(
            DecayProfile::Explicit { values: vec![1.0] },
            CoefficientLaw::StudentT { nu: 5.0 },
            5.0,
            0
        )
        .is_err());
    }

    #[test]
    fn goe_moments_and_symmetry() {
        let g = sample_goe(6, 0, 1).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let draws = 100_000u64;
        let (mut s, mut s2, mut o2) = (0.0, 0.0, 0.0);
        for t in 0..draws {
            let g = sample_goe(2, t, 3).unwrap();
            s += g.get(0, 0);
            s2 += g.get(0, 0).powi(2);
            o2 += g.get(0, 1).powi(2);
        }
        let n = draws as f64;
        let var = s2 / n - (s / n).powi(2);
        // Var of the sample variance of N(0, 2) is 2·2²/n.
        let se = (8.0 / n).sqrt();
        assert!((var - 2.0).abs() <= 3.0 * se, "diag variance {var}");
        assert!((o2 / n - 1.0).abs() <= 3.0 * (2.0 / n).sqrt());
    }

    #[test]
    fn goe_semicircle_edge() {
        let p = 200;
        for t in 0..3 {
            let g = sample_goe(p, t, 17).unwrap();
            let r = g.op_norm() / (p as f64).sqrt();
            assert!((r - 2.0).abs() <= 0.3, "edge {r}");
        }
    }

    #[test]
    fn low_rank_zero_noise() {
        let pair = low_rank_plus_goe(&[10.0, 5.0], 8, 0.0, 0, 1).unwrap();
        let d = hs_distance_sq(pair.model(), pair.model_hat(), &IndexSet::top(1)).unwrap();
        assert_eq!(d, 0.0);
        assert!(low_rank_plus_goe(&[1.0, 2.0], 8, 0.1, 0, 1).is_err());
        assert!(low_rank_plus_goe(&[1.0; 9], 8, 0.1, 0, 1).is_err());
    }

    #[test]
    fn low_rank_small_noise_is_finite() {
        for t in 0..20 {
            let pair = low_rank_plus_goe(&[10.0], 50, 0.01, t, 2).unwrap();
            let d = hs_distance_sq(pair.model(), pair.model_hat(), &IndexSet::top(1)).unwrap();
            assert!(d.is_finite() && d < 1e-3, "distance {d}");
        }
    }

    #[test]
    fn spiked_sampling() {
        let prof = DecayProfile::Spiked {
            mu: [3.0, 2.0, 1.0],
            m: [1, 2, 1],
        };
        assert!(spiked_covariance_sample(&prof, &CoefficientLaw::StudentT { nu: 6.0 }, 10, 0, 0).is_err());
        let one = spiked_covariance_sample(&prof, &CoefficientLaw::Gaussian, 1, 0, 0).unwrap();
        let nonzero = one.eigenvalues_hat().iter().filter(|v| v.abs() > 1e-12).count();
        assert_eq!(nonzero, 1);
        let a = spiked_covariance_sample(&prof, &CoefficientLaw::Rademacher, 30, 2, 4).unwrap();
        let b = spiked_covariance_sample(&prof, &CoefficientLaw::Rademacher, 30, 2, 4).unwrap();
        assert_eq!(a.sigma_hat(), b.sigma_hat());
        assert_eq!(a.provenance().parameters["m2"], 2.0);
    }

    #[test]
    fn spiked_eigenvalues_consistent() {
        let prof = DecayProfile::Spiked {
            mu: [3.0, 2.0, 1.0],
            m: [1, 2, 1],
        };
        let trials = 20;
        let ok = (0..trials)
            .filter(|&t| {
                let pair = spiked_covariance_sample(&prof, &CoefficientLaw::Gaussian, 100_000, t, 9).unwrap();
                pair.eigenvalues_hat()
                    .iter()
                    .zip([3.0, 2.0, 2.0, 1.0])
                    .all(|(a, b)| (a - b).abs() <= 0.1)
            })
            .count();
        assert!(ok as f64 >= 0.99 * trials as f64);
    }

    #[test]
    fn rotation_preserves_distance() {
        let spec = gaussian_spec(DecayProfile::Exponential { alpha: 0.7, p: Some(6) }, 3);
        let pair = sample_empirical_covariance(&spec, 40, 0).unwrap();
        let q = random_rotation(6, &mut trial_rng(3, 0, Stream::Rotation));
        assert!((q.tr_mul(&q) - DMatrix::<f64>::identity(6, 6)).amax() < 1e-12);
        let rot = pair.rotated(&q).unwrap();
        let set = IndexSet::top(2);
        let d0 = hs_distance_sq(pair.model(), pair.model_hat(), &set).unwrap();
        let d1 = hs_distance_sq(rot.model(), rot.model_hat(), &set).unwrap();
        assert_abs_diff_eq!(d0, d1, epsilon = 1e-10);
    }
}
