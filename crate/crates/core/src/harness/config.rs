//! Study configuration, read from a TOML file (one study per file).
//!
//! ```toml
//! study = "bound_validity"
//! trials = 500
//! seed_base = 42
//! workers = 4
//! set = { top = 3 }
//!
//! [model]
//! kind = "covariance"
//! n = 5000
//! law = { type = "gaussian" }
//!
//! [model.profile]
//! kind = "exponential"
//! alpha = 1.0
//! p = 20
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    low_rank_plus_goe, random_rotation, sample_empirical_covariance, spectrum, spiked_covariance_sample, trial_rng,
    CoefficientLaw, DecayProfile, KLSourceSpec, PerturbedPair, Provenance, Stream,
};
use crate::spectral::{IndexSet, SymMatrix};

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "EIGENSHIFT_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    BoundValidity,
    Sharpness,
    Tail,
    DecayScaling,
    Goe,
    Spiked,
    PropSuite,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::BoundValidity => "bound_validity",
            StudyKind::Sharpness => "sharpness",
            StudyKind::Tail => "tail",
            StudyKind::DecayScaling => "decay_scaling",
            StudyKind::Goe => "goe",
            StudyKind::Spiked => "spiked",
            StudyKind::PropSuite => "prop_suite",
        }
    }
}

fn default_law() -> CoefficientLaw {
    CoefficientLaw::Gaussian
}

fn default_q() -> f64 {
    5.0
}

/// Source of perturbed pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Empirical covariance of `n` draws.
    Covariance {
        profile: DecayProfile,
        #[serde(default = "default_law")]
        law: CoefficientLaw,
        #[serde(default = "default_q")]
        q: f64,
        n: usize,
    },
    /// `diag(eigs, 0, …) + epsilon · GOE(p)`.
    Goe { eigs: Vec<f64>, p: usize, epsilon: f64 },
    /// Empirical covariance under a three-level step spectrum.
    Spiked {
        mu: [f64; 3],
        m: [usize; 3],
        #[serde(default = "default_law")]
        law: CoefficientLaw,
        n: usize,
    },
    /// A fixed pair, inline or from matrix files.
    Fixed {
        #[serde(default)]
        sigma: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        sigma_hat: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        sigma_path: Option<PathBuf>,
        #[serde(default)]
        sigma_hat_path: Option<PathBuf>,
    },
    /// `Σ = diag(spectrum)` with `E = 0`.
    Zero { profile: DecayProfile },
}

impl ModelSpec {
    pub fn name(&self) -> String {
        match self {
            ModelSpec::Covariance { profile, law, .. } => format!("covariance/{}/{}", profile.name(), law.name()),
            ModelSpec::Goe { .. } => "goe".to_string(),
            ModelSpec::Spiked { law, .. } => format!("spiked/{}", law.name()),
            ModelSpec::Fixed { .. } => "fixed".to_string(),
            ModelSpec::Zero { profile } => format!("zero/{}", profile.name()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match self {
            ModelSpec::Covariance { profile, law, q, n } => {
                if *n == 0 {
                    return bad("model.n must be at least 1");
                }
                KLSourceSpec::new(profile.clone(), law.clone(), *q, 0).map(|_| ())
            }
            ModelSpec::Goe { eigs, p, epsilon } => {
                if eigs.is_empty() || eigs.len() > *p {
                    return bad("model.eigs must have between 1 and p entries");
                }
                if !(*epsilon >= 0.0) {
                    return bad("model.epsilon must be non-negative");
                }
                Ok(())
            }
            ModelSpec::Spiked { mu, m, law, n } => {
                if *n == 0 {
                    return bad("model.n must be at least 1");
                }
                if !law.is_sub_gaussian() {
                    return bad("spiked model requires a sub-Gaussian law");
                }
                spectrum(&DecayProfile::Spiked { mu: *mu, m: *m }).map(|_| ())
            }
            ModelSpec::Fixed {
                sigma,
                sigma_hat,
                sigma_path,
                sigma_hat_path,
            } => {
                if sigma.is_some() == sigma_path.is_some() || sigma_hat.is_some() == sigma_hat_path.is_some() {
                    return bad("fixed model needs exactly one of sigma/sigma_path and of sigma_hat/sigma_hat_path");
                }
                Ok(())
            }
            ModelSpec::Zero { profile } => spectrum(profile).map(|_| ()),
        }
    }

    pub fn dim(&self) -> Result<usize> {
        Ok(match self {
            ModelSpec::Covariance { profile, .. } | ModelSpec::Zero { profile } => profile.dim(),
            ModelSpec::Goe { p, .. } => *p,
            ModelSpec::Spiked { m, .. } => m.iter().sum(),
            ModelSpec::Fixed { .. } => self.fixed_pair()?.dim(),
        })
    }

    pub fn with_n(&self, n: usize) -> ModelSpec {
        let mut out = self.clone();
        match &mut out {
            ModelSpec::Covariance { n: slot, .. } | ModelSpec::Spiked { n: slot, .. } => *slot = n,
            _ => {}
        }
        out
    }

    pub fn with_epsilon(&self, epsilon: f64) -> ModelSpec {
        let mut out = self.clone();
        if let ModelSpec::Goe { epsilon: slot, .. } = &mut out {
            *slot = epsilon;
        }
        out
    }

    pub fn with_p(&self, p: usize) -> ModelSpec {
        let mut out = self.clone();
        if let ModelSpec::Goe { p: slot, .. } = &mut out {
            *slot = p;
        }
        out
    }

    fn fixed_pair(&self) -> Result<PerturbedPair> {
        let ModelSpec::Fixed {
            sigma,
            sigma_hat,
            sigma_path,
            sigma_hat_path,
        } = self
        else {
            unreachable!("fixed_pair on a random model");
        };
        let load = |rows: &Option<Vec<Vec<f64>>>, path: &Option<PathBuf>| -> Result<SymMatrix> {
            match (rows, path) {
                (Some(r), _) => SymMatrix::from_rows(r),
                (None, Some(p)) => SymMatrix::read(p),
                (None, None) => Err(Error::Config("missing matrix".into())),
            }
        };
        PerturbedPair::new(
            load(sigma, sigma_path)?,
            load(sigma_hat, sigma_hat_path)?,
            Provenance::fixed("fixed"),
        )
    }

    /// The pair for `trial`, optionally conjugated by a Haar rotation.
    pub fn generate(&self, seed_base: u64, trial: u64, rotate: bool) -> Result<PerturbedPair> {
        let pair = match self {
            ModelSpec::Covariance { profile, law, q, n } => {
                let spec = KLSourceSpec::new(profile.clone(), law.clone(), *q, seed_base)?;
                sample_empirical_covariance(&spec, *n, trial)?
            }
            ModelSpec::Goe { eigs, p, epsilon } => low_rank_plus_goe(eigs, *p, *epsilon, trial, seed_base)?,
            ModelSpec::Spiked { mu, m, law, n } => {
                spiked_covariance_sample(&DecayProfile::Spiked { mu: *mu, m: *m }, law, *n, trial, seed_base)?
            }
            ModelSpec::Fixed { .. } => self.fixed_pair()?,
            ModelSpec::Zero { profile } => {
                let sigma = SymMatrix::diagonal(&spectrum(profile)?);
                PerturbedPair::new(sigma.clone(), sigma, Provenance::fixed("zero"))?
            }
        };
        if rotate {
            let q = random_rotation(pair.dim(), &mut trial_rng(seed_base, trial, Stream::Rotation));
            pair.rotated(&q)
        } else {
            Ok(pair)
        }
    }
}

/// How `I` is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSelection {
    Top(usize),
    Indices(IndexSet),
}

impl Default for SetSelection {
    fn default() -> Self {
        SetSelection::Top(1)
    }
}

impl SetSelection {
    pub fn resolve(&self, p: usize) -> Result<IndexSet> {
        let set = match self {
            SetSelection::Top(k) => IndexSet::top(*k),
            SetSelection::Indices(s) => s.clone(),
        };
        if set.is_empty() {
            return Err(Error::EmptyIndexSet);
        }
        set.check_within(p)?;
        Ok(set)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Absolute tolerance on fitted log-log slopes.
    pub slope: f64,
    /// Absolute slack for deterministic inequalities and identities.
    pub identity: f64,
    /// Allowed multiplicative deviation for cross-parameter ratios.
    pub factor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            slope: 0.15,
            identity: 1e-10,
            factor: 2.0,
        }
    }
}

/// Instance counts for the deterministic property suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSizes {
    pub soundness: usize,
    pub prop42: usize,
    pub y_grid: usize,
    pub remainder: usize,
    pub hs_identity: usize,
    pub consistency: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        SuiteSizes {
            soundness: 1000,
            prop42: 500,
            y_grid: 10,
            remainder: 1000,
            hs_identity: 500,
            consistency: 200,
        }
    }
}

fn default_trials() -> usize {
    100
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: StudyKind,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Conjugate every pair by a random rotation.
    #[serde(default)]
    pub rotate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub set: SetSelection,
    /// Second index set `J` for block-norm studies; defaults to the complement of `I`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_set: Option<SetSelection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_grid: Option<Vec<usize>>,
    /// Deviation parameter `t` for the sample-size budget warning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Budget `c` in `t k log k ≤ c √n` (exponential profiles: `t k ≤ c √n`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    /// Spiked study: also run with the first multiplicity doubled.
    #[serde(default)]
    pub m1_doubling: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub suite: SuiteSizes,
}

impl ExperimentConfig {
    pub fn new(study: StudyKind, model: Option<ModelSpec>) -> Self {
        ExperimentConfig {
            study,
            trials: default_trials(),
            seed_base: 0,
            workers: default_workers(),
            output: None,
            rotate: false,
            model,
            set: SetSelection::default(),
            second_set: None,
            t_grid: None,
            n_grid: None,
            k_grid: None,
            eps_grid: None,
            p_grid: None,
            t: None,
            budget: None,
            m1_doubling: false,
            tolerances: Tolerances::default(),
            suite: SuiteSizes::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        // Relative matrix paths resolve against the config file.
        if let Some(ModelSpec::Fixed {
            sigma_path,
            sigma_hat_path,
            ..
        }) = &mut cfg.model
        {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [sigma_path, sigma_hat_path].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Replaces the seed with `EIGENSHIFT_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed_base = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if let Some(t) = &self.t_grid {
            if t.is_empty() || t.iter().any(|v| !(*v >= 1.0)) {
                return bad("t_grid values must be at least 1".into());
            }
        }
        for (name, grid) in [
            ("n_grid", &self.n_grid),
            ("k_grid", &self.k_grid),
            ("p_grid", &self.p_grid),
        ] {
            if let Some(g) = grid {
                if g.is_empty() || g.contains(&0) {
                    return bad(format!("{name} must be non-empty with positive entries"));
                }
            }
        }
        if let Some(e) = &self.eps_grid {
            if e.is_empty() || e.iter().any(|v| !(*v > 0.0)) {
                return bad("eps_grid values must be positive".into());
            }
        }
        match (&self.model, self.study) {
            (None, StudyKind::PropSuite) => {}
            (None, s) => return bad(format!("study {} needs a [model] table", s.name())),
            (Some(m), s) => {
                m.validate()?;
                let needs = match s {
                    StudyKind::Sharpness | StudyKind::Tail | StudyKind::DecayScaling => {
                        matches!(m, ModelSpec::Covariance { .. })
                    }
                    StudyKind::Goe => matches!(m, ModelSpec::Goe { .. }),
                    StudyKind::Spiked => matches!(m, ModelSpec::Spiked { .. }),
                    _ => true,
                };
                if !needs {
                    return bad(format!("study {} cannot use model {}", s.name(), m.name()));
                }
            }
        }
        Ok(())
    }
}
