//! Study aggregates and their JSON form.
//!
//! JSON schema (all studies):
//!
//! ```text
//! {
//!   "study": "bound_validity",
//!   "config": { ...ExperimentConfig... },
//!   "trials": 500, "failed": 0,
//!   "violations": { "thm2": 0, ... },            // deterministic claims
//!   "applicability": { "thm2": 0.93, ... },      // fraction of non-failed trials
//!   "quantiles": { "distance_sq": [[0.5, 1.2e-4], ...], ... },
//!   "groups": [ { "label": "n", "param": 1000.0, "n_valid": 300,
//!                 "median": {...}, "q99": {...} } ],
//!   "slopes": [ { "name": ..., "x": [...], "y": [...], "slope": -1.01,
//!                 "intercept": ..., "expected": -1.0, "tolerance": 0.15, "ok": true } ],
//!   "tail_curves": [ { "label": ..., "t": [...], "survival": [...] } ],
//!   "checks": [ { "name": ..., "value": ..., "lower": ..., "upper": ..., "ok": true } ],
//!   "warnings": [ "..." ]
//! }
//! ```
//!
//! Non-finite reals are written as the strings `"inf"`, `"-inf"` and `"NaN"`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::record::{TrialRecord, CLAIMS};

/// Quantile levels reported for every tracked column.
pub const QUANTILE_LEVELS: &[f64] = &[0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99];

/// An `f64` whose JSON form survives non-finite values.
#[derive(Clone, Copy, Debug, Default)]
pub struct Real(pub f64);

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        self.0.to_bits() == other.0.to_bits() || (self.0.is_nan() && other.0.is_nan())
    }
}

impl From<f64> for Real {
    fn from(v: f64) -> Self {
        Real(v)
    }
}

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&self.0.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RealVisitor;
        impl Visitor<'_> for RealVisitor {
            type Value = Real;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or one of \"inf\", \"-inf\", \"NaN\"")
            }
            fn visit_f64<E>(self, v: f64) -> std::result::Result<Real, E> {
                Ok(Real(v))
            }
            fn visit_i64<E>(self, v: i64) -> std::result::Result<Real, E> {
                Ok(Real(v as f64))
            }
            fn visit_u64<E>(self, v: u64) -> std::result::Result<Real, E> {
                Ok(Real(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Real, E> {
                match v {
                    "inf" => Ok(Real(f64::INFINITY)),
                    "-inf" => Ok(Real(f64::NEG_INFINITY)),
                    "NaN" => Ok(Real(f64::NAN)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(RealVisitor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// Swept parameter name (`n`, `k`, `epsilon`, `p`, …).
    pub label: String,
    pub param: Real,
    pub n_valid: usize,
    pub median: BTreeMap<String, Real>,
    pub q99: BTreeMap<String, Real>,
}

/// Least-squares fit of `ln y` against `ln x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub name: String,
    pub x: Vec<Real>,
    pub y: Vec<Real>,
    pub slope: Real,
    pub intercept: Real,
    pub expected: Real,
    pub tolerance: Real,
    pub ok: bool,
}

impl SlopeFit {
    pub fn fit(name: &str, x: &[f64], y: &[f64], expected: f64, tolerance: f64) -> SlopeFit {
        let (slope, intercept) = loglog_slope(x, y);
        SlopeFit {
            name: name.to_string(),
            x: x.iter().copied().map(Real).collect(),
            y: y.iter().copied().map(Real).collect(),
            slope: Real(slope),
            intercept: Real(intercept),
            expected: Real(expected),
            tolerance: Real(tolerance),
            ok: (slope - expected).abs() <= tolerance,
        }
    }
}

/// `(slope, intercept)` of the least-squares line through `(ln x, ln y)`.
/// `NaN` when fewer than two points are positive and finite.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailCurve {
    pub label: String,
    pub t: Vec<Real>,
    /// Fraction of trials with `√n · block_norm > t`.
    pub survival: Vec<Real>,
}

/// A scalar compared against an interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Real,
    pub lower: Real,
    pub upper: Real,
    pub ok: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, lower: f64, upper: f64) -> Check {
        Check {
            name: name.to_string(),
            value: Real(value),
            lower: Real(lower),
            upper: Real(upper),
            ok: value >= lower && value <= upper,
        }
    }

    /// A pass/fail fact with no natural interval (`value` is 1 or 0).
    pub fn flag(name: &str, ok: bool) -> Check {
        Check::new(name, if ok { 1.0 } else { 0.0 }, 1.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub study: String,
    pub config: ExperimentConfig,
    pub trials: usize,
    pub failed: usize,
    pub violations: BTreeMap<String, u64>,
    pub applicability: BTreeMap<String, Real>,
    pub quantiles: BTreeMap<String, Vec<(Real, Real)>>,
    pub groups: Vec<GroupSummary>,
    pub slopes: Vec<SlopeFit>,
    pub tail_curves: Vec<TailCurve>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

/// Columns whose quantiles and group statistics are reported.
pub const TRACKED: &[&str] = &[
    "distance_sq",
    "dk_hs_sq",
    "dk_op_sq",
    "first_order_hs_sq",
    "thm2_bound",
    "refined_bound",
    "thm3_bound",
    "thm4_bound",
    "x_measured",
    "block_norm",
];

fn tracked_value(r: &TrialRecord, column: &str) -> f64 {
    match column {
        "distance_sq" => r.distance_sq,
        "dk_hs_sq" => r.dk_hs * r.dk_hs,
        "dk_op_sq" => r.dk_op * r.dk_op,
        "first_order_hs_sq" => r.first_order_hs_sq,
        "thm2_bound" => r.thm2_bound,
        "refined_bound" => r.refined_bound,
        "thm3_bound" => r.thm3_bound,
        "thm4_bound" => r.thm4_bound,
        "x_measured" => r.x_measured,
        "block_norm" => r.block_norm,
        _ => f64::NAN,
    }
}

/// Values of `column` over non-failed records, `NaN`s dropped.
pub fn column(records: &[TrialRecord], name: &str) -> Vec<f64> {
    records
        .iter()
        .filter(|r| !r.failed)
        .map(|r| tracked_value(r, name))
        .filter(|v| !v.is_nan())
        .collect()
}

/// Hyndman–Fan type-8 sample quantile (`statrs`); `NaN` on empty input.
pub fn quantile(values: &[f64], level: f64) -> f64 {
    use statrs::statistics::{Data, OrderStatistics};
    Data::new(values.to_vec()).quantile(level)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Fraction of `values` strictly greater than each `t`.
pub fn survival(values: &[f64], t: &[f64]) -> Vec<f64> {
    let n = values.len().max(1) as f64;
    t.iter()
        .map(|&t| values.iter().filter(|v| **v > t).count() as f64 / n)
        .collect()
}

pub fn group(label: &str, param: f64, records: &[TrialRecord]) -> GroupSummary {
    let mut med = BTreeMap::new();
    let mut q99 = BTreeMap::new();
    for &c in TRACKED {
        let v = column(records, c);
        med.insert(c.to_string(), Real(median(&v)));
        q99.insert(c.to_string(), Real(quantile(&v, 0.99)));
    }
    GroupSummary {
        label: label.to_string(),
        param: Real(param),
        n_valid: records.iter().filter(|r| !r.failed).count(),
        median: med,
        q99,
    }
}

impl StudySummary {
    /// Violation counts, applicability and quantiles over `records`; the
    /// study fills in groups, slopes, curves and checks.
    pub fn from_records(config: &ExperimentConfig, records: &[TrialRecord]) -> StudySummary {
        let valid: Vec<&TrialRecord> = records.iter().filter(|r| !r.failed).collect();
        let mut violations: BTreeMap<String, u64> = CLAIMS.iter().map(|c| (c.to_string(), 0)).collect();
        for r in &valid {
            for v in r.violations() {
                *violations.entry(v.to_string()).or_default() += 1;
            }
        }
        let rate = |f: &dyn Fn(&TrialRecord) -> bool| {
            if valid.is_empty() {
                Real(f64::NAN)
            } else {
                Real(valid.iter().filter(|r| f(r)).count() as f64 / valid.len() as f64)
            }
        };
        let mut applicability = BTreeMap::new();
        applicability.insert("thm2".to_string(), rate(&|r| r.thm2_applicable));
        applicability.insert("thm3".to_string(), rate(&|r| r.thm3_applicable));
        applicability.insert(
            "thm4".to_string(),
            rate(&|r| r.thm4_applicable && r.thm4_envelope_ok == Some(true)),
        );
        applicability.insert("first_order".to_string(), rate(&|r| r.delta < 1.0));
        let quantiles = TRACKED
            .iter()
            .map(|&c| {
                let v = column(records, c);
                let q = QUANTILE_LEVELS
                    .iter()
                    .map(|&l| (Real(l), Real(quantile(&v, l))))
                    .collect();
                (c.to_string(), q)
            })
            .collect();
        StudySummary {
            study: config.study.name().to_string(),
            config: config.clone(),
            trials: records.len(),
            failed: records.len() - valid.len(),
            violations,
            applicability,
            quantiles,
            groups: Vec::new(),
            slopes: Vec::new(),
            tail_curves: Vec::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn total_violations(&self) -> u64 {
        self.violations.values().sum()
    }

    /// Whether every slope fit and check passed.
    pub fn scaling_ok(&self) -> bool {
        self.slopes.iter().all(|s| s.ok) && self.checks.iter().all(|c| c.ok)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

pub fn write_summary(summary: &StudySummary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, summary.to_json() + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<StudySummary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
