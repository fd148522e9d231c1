//! Per-trial records and their CSV form.
//!
//! Reals are written with 17 significant digits (`{:.16e}`), which
//! round-trips every `f64`; non-finite values appear as `inf`, `-inf` or
//! `NaN`. Optional booleans are empty when the check did not run.

use std::path::Path;

use crate::blocks::{
    build_scheme, contraction_sweep, envelope_check_coefficients, separation_check, theorem4_bound, EnvelopePair,
    Granularity, SLACK,
};
use crate::bounds::{
    build_iprime, coefficient_envelope, davis_kahan_bound, first_order, first_order_residual, refined_bound,
    relative_rank, theorem2_bound, theorem3_bound_with_x, theorem3_envelope, DkMode,
};
use crate::error::{Error, Result};
use crate::models::PerturbedPair;
use crate::spectral::{hs_distance_sq, IndexSet};

/// A CSV cell type.
pub trait Field: Sized {
    fn to_field(&self) -> String;
    fn from_field(s: &str) -> Option<Self>;
}

impl Field for u64 {
    fn to_field(&self) -> String {
        self.to_string()
    }
    fn from_field(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

impl Field for String {
    fn to_field(&self) -> String {
        self.clone()
    }
    fn from_field(s: &str) -> Option<Self> {
        Some(s.to_string())
    }
}

impl Field for f64 {
    fn to_field(&self) -> String {
        format_real(*self)
    }
    fn from_field(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

impl Field for bool {
    fn to_field(&self) -> String {
        self.to_string()
    }
    fn from_field(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

impl Field for Option<bool> {
    fn to_field(&self) -> String {
        self.map(|b| b.to_string()).unwrap_or_default()
    }
    fn from_field(s: &str) -> Option<Self> {
        if s.is_empty() {
            Some(None)
        } else {
            s.parse().ok().map(Some)
        }
    }
}

/// `{:.16e}` for finite values, `inf`/`-inf`/`NaN` otherwise.
pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

macro_rules! trial_record {
    ($($(#[$doc:meta])* $name:ident : $ty:ty),* $(,)?) => {
        /// One Monte Carlo trial: the measured distance, every bound and
        /// gate, the proof-side checks, and enough provenance to regenerate
        /// the pair.
        #[derive(Clone, Debug)]
        pub struct TrialRecord {
            $($(#[$doc])* pub $name: $ty,)*
        }

        /// CSV header, in field order.
        pub const COLUMNS: &[&str] = &[$(stringify!($name)),*];

        impl TrialRecord {
            pub fn fields(&self) -> Vec<String> {
                vec![$(Field::to_field(&self.$name)),*]
            }

            fn from_record(rec: &csv::StringRecord, line: usize) -> Result<Self> {
                if rec.len() != COLUMNS.len() {
                    return Err(Error::Parse {
                        line,
                        message: format!("expected {} fields, found {}", COLUMNS.len(), rec.len()),
                    });
                }
                let mut cells = rec.iter();
                Ok(TrialRecord {
                    $($name: {
                        let cell = cells.next().unwrap_or("");
                        <$ty as Field>::from_field(cell).ok_or_else(|| Error::Parse {
                            line,
                            message: format!("column `{}`: cannot parse `{}`", stringify!($name), cell),
                        })?
                    },)*
                })
            }
        }
    };
}

trial_record! {
    trial: u64,
    /// Seed base of the study; with `trial` it regenerates the pair.
    seed: u64,
    model: String,
    /// Grid parameter of the trial's study cell (`n`, `ε`, `k`, …).
    param: f64,
    failed: bool,
    distance_sq: f64,
    /// Davis–Kahan bound on `‖P̂_I − P_I‖₂` (Hilbert–Schmidt form).
    dk_hs: f64,
    dk_op: f64,
    delta: f64,
    first_order_hs_sq: f64,
    remainder_bound: f64,
    remainder_ok: Option<bool>,
    x_measured: f64,
    rank_i: f64,
    thm2_condition: f64,
    thm2_bound: f64,
    thm2_applicable: bool,
    refined_bound: f64,
    thm3_x: f64,
    thm3_condition: f64,
    thm3_bound: f64,
    thm3_applicable: bool,
    thm4_condition: f64,
    thm4_bound: f64,
    thm4_applicable: bool,
    thm4_envelope_ok: Option<bool>,
    separation_ok: Option<bool>,
    contraction_ok: Option<bool>,
    /// `‖P_I E P_J‖₂ / √(Σ_{i∈I} Σ_{j∈J} λ_i λ_j)`.
    block_norm: f64,
    lambda_max: f64,
    lambda_min: f64,
    lambda_hat_max: f64,
    lambda_hat_min: f64,
}

impl PartialEq for TrialRecord {
    /// Field-wise on the CSV representation, so `NaN == NaN`.
    fn eq(&self, other: &Self) -> bool {
        self.fields() == other.fields()
    }
}

/// Names of the deterministic claims tracked per trial.
pub const CLAIMS: &[&str] = &[
    "thm2",
    "refined",
    "thm3",
    "thm4",
    "dk_hs",
    "dk_op",
    "remainder",
    "separation",
    "contraction",
];

impl TrialRecord {
    pub fn failed(trial: u64, seed: u64, model: &str, param: f64) -> Self {
        let nan = f64::NAN;
        TrialRecord {
            trial,
            seed,
            model: model.to_string(),
            param,
            failed: true,
            distance_sq: nan,
            dk_hs: nan,
            dk_op: nan,
            delta: nan,
            first_order_hs_sq: nan,
            remainder_bound: nan,
            remainder_ok: None,
            x_measured: nan,
            rank_i: nan,
            thm2_condition: nan,
            thm2_bound: nan,
            thm2_applicable: false,
            refined_bound: nan,
            thm3_x: nan,
            thm3_condition: nan,
            thm3_bound: nan,
            thm3_applicable: false,
            thm4_condition: nan,
            thm4_bound: nan,
            thm4_applicable: false,
            thm4_envelope_ok: None,
            separation_ok: None,
            contraction_ok: None,
            block_norm: nan,
            lambda_max: nan,
            lambda_min: nan,
            lambda_hat_max: nan,
            lambda_hat_min: nan,
        }
    }

    /// Evaluates every bound and check on `pair`. Only a failure to measure
    /// the distance itself marks the trial failed; other quantities that
    /// cannot be formed (non-positive spectrum, zero gap) are left `NaN` or
    /// inapplicable.
    pub fn evaluate(
        trial: u64,
        seed: u64,
        model: &str,
        param: f64,
        pair: &PerturbedPair,
        set: &IndexSet,
        second: Option<&IndexSet>,
    ) -> Self {
        let mut r = TrialRecord::failed(trial, seed, model, param);
        let Ok(distance_sq) = hs_distance_sq(pair.model(), pair.model_hat(), set) else {
            return r;
        };
        r.failed = false;
        r.distance_sq = distance_sq;
        let eigs = pair.eigenvalues();
        let hat = pair.eigenvalues_hat();
        r.lambda_max = eigs[0];
        r.lambda_min = eigs[eigs.len() - 1];
        r.lambda_hat_max = hat[0];
        r.lambda_hat_min = hat[hat.len() - 1];
        let e = pair.perturbation();
        r.dk_hs = davis_kahan_bound(e, eigs, set, DkMode::Hs).unwrap_or(f64::NAN);
        r.dk_op = davis_kahan_bound(e, eigs, set, DkMode::Op).unwrap_or(f64::NAN);

        if let Ok(fo) = first_order(pair, set) {
            r.delta = fo.delta;
            r.first_order_hs_sq = fo.linear_hs_sq;
            r.remainder_bound = fo.remainder_op_bound;
            if fo.delta < 1.0 {
                r.remainder_ok = first_order_residual(pair, set, &fo)
                    .ok()
                    .map(|res| res <= fo.remainder_op_bound + SLACK);
            }
        }

        r.rank_i = relative_rank(eigs, set).unwrap_or(f64::NAN);
        if let Ok(x) = coefficient_envelope(pair) {
            r.x_measured = x;
            if let Ok(c) = theorem2_bound(eigs, x, set) {
                r.thm2_condition = c.condition_value;
                r.thm2_bound = c.bound_value;
                r.thm2_applicable = c.applicable;
            }
            if let Ok(c) = refined_bound(pair, x, set) {
                r.refined_bound = c.bound_value;
            }
        }
        if let Ok(iprime) = build_iprime(eigs, set) {
            if let Ok(x3) = theorem3_envelope(pair, set, &iprime) {
                r.thm3_x = x3;
                if let Ok(c) = theorem3_bound_with_x(eigs, x3, set) {
                    r.thm3_condition = c.condition_value;
                    r.thm3_bound = c.bound_value;
                    r.thm3_applicable = c.applicable;
                }
            }
        }

        if let Ok(scheme) = build_scheme(eigs, set, &Granularity::Eigenlevel) {
            if let Ok(env) = EnvelopePair::measured(&scheme, eigs, pair.coefficients()) {
                if let Ok(report) = envelope_check_coefficients(pair.coefficients(), &scheme, &env) {
                    r.thm4_envelope_ok = Some(report.ok);
                    if let Ok(t4) = theorem4_bound(&scheme, &env, report.ok) {
                        r.thm4_condition = t4.certificate.condition_value;
                        r.thm4_bound = t4.certificate.bound_value;
                        r.thm4_applicable = t4.certificate.applicable;
                        if report.ok && t4.certificate.applicable {
                            r.separation_ok = separation_check(pair, set).ok().map(|v| v.iter().all(|e| e.ok));
                            r.contraction_ok = Some(
                                contraction_sweep(pair, &scheme, &env)
                                    .map(|s| s.violations == 0)
                                    .unwrap_or(false),
                            );
                        }
                    }
                }
            }
        }

        let complement = set.complement(eigs.len());
        let j = second.unwrap_or(&complement);
        r.block_norm = normalized_block_norm(pair, set, j).unwrap_or(f64::NAN);
        r
    }

    /// Deterministic claims this trial contradicts.
    pub fn violations(&self) -> Vec<&'static str> {
        if self.failed {
            return Vec::new();
        }
        let d = self.distance_sq;
        let over = |bound: f64| d > bound + SLACK;
        let mut out = Vec::new();
        if self.thm2_applicable && over(self.thm2_bound) {
            out.push("thm2");
        }
        if self.thm2_applicable && over(self.refined_bound) {
            out.push("refined");
        }
        if self.thm3_applicable && over(self.thm3_bound) {
            out.push("thm3");
        }
        if self.thm4_applicable && self.thm4_envelope_ok == Some(true) && over(self.thm4_bound) {
            out.push("thm4");
        }
        if self.dk_hs.is_finite() && over(self.dk_hs * self.dk_hs) {
            out.push("dk_hs");
        }
        if self.dk_op.is_finite() && over(self.dk_op * self.dk_op) {
            out.push("dk_op");
        }
        if self.remainder_ok == Some(false) {
            out.push("remainder");
        }
        if self.separation_ok == Some(false) {
            out.push("separation");
        }
        if self.contraction_ok == Some(false) {
            out.push("contraction");
        }
        out
    }
}

/// `‖P_I E P_J‖₂ / √(Σ_{i∈I} Σ_{j∈J} λ_i λ_j)`.
pub fn normalized_block_norm(pair: &PerturbedPair, set: &IndexSet, second: &IndexSet) -> Result<f64> {
    if second.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    second.check_within(pair.dim())?;
    set.check_within(pair.dim())?;
    let eigs = pair.eigenvalues();
    let c = pair.coefficients();
    let mut num = 0.0;
    for i in set.iter() {
        for j in second.iter() {
            num += c[(i - 1, j - 1)].powi(2);
        }
    }
    let wi: f64 = set.iter().map(|i| eigs[i - 1]).sum();
    let wj: f64 = second.iter().map(|j| eigs[j - 1]).sum();
    let den = wi * wj;
    if !(den > 0.0) {
        return Err(Error::NonPositiveEigenvalue { index: 0, value: den });
    }
    Ok((num / den).sqrt())
}

/// Writes records as CSV with the exact [`COLUMNS`] header.
pub fn write_records(records: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Serializes records to a CSV string (same format as [`write_records`]).
pub fn records_to_csv(records: &[TrialRecord]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in records {
        w.write_record(r.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII output")
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    let mut rows = r.records();
    let header = match rows.next() {
        Some(h) => h.map_err(csv_err)?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    if let Some(missing) = COLUMNS.iter().enumerate().find(|(i, c)| header.get(*i) != Some(**c)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header mismatch at column `{}`", missing.1),
        });
    }
    if header.len() != COLUMNS.len() {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected {} columns, found {}", COLUMNS.len(), header.len()),
        });
    }
    rows.enumerate()
        .map(|(k, rec)| TrialRecord::from_record(&rec.map_err(csv_err)?, k + 2))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Provenance;
    use crate::spectral::SymMatrix;

    fn running(eps: f64) -> PerturbedPair {
        let a = SymMatrix::diagonal(&[2.0, 1.0]);
        let b = SymMatrix::from_rows(&[vec![2.0, eps], vec![eps, 1.0]]).unwrap();
        PerturbedPair::new(a, b, Provenance::fixed("running")).unwrap()
    }

    #[test]
    fn running_example_record() {
        let r = TrialRecord::evaluate(0, 1, "fixed", 0.0, &running(0.1), &IndexSet::top(1), None);
        assert!(!r.failed);
        assert!((r.thm2_condition - 0.212132034355964).abs() < 1e-12);
        assert!(!r.thm2_applicable);
        assert!(r.violations().is_empty());
        let r = TrialRecord::evaluate(0, 1, "fixed", 0.0, &running(0.01), &IndexSet::top(1), None);
        assert!(r.thm2_applicable && r.thm4_applicable);
        assert_eq!(r.separation_ok, Some(true));
        assert_eq!(r.contraction_ok, Some(true));
        assert!((r.block_norm - 0.01 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn real_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 5e-324, f64::MAX, 0.0, -0.0] {
            let s = format_real(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_real(f64::INFINITY), "inf");
        assert_eq!(format_real(f64::NEG_INFINITY), "-inf");
        assert_eq!(format_real(f64::NAN), "NaN");
        assert_eq!(format_real(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn empty_csv_is_header_only() {
        let text = records_to_csv(&[]);
        assert_eq!(text, format!("{}\n", COLUMNS.join(",")));
    }
}
