//! Dense symmetric eigendecomposition, spectral projectors, operator and
//! Hilbert–Schmidt norms, and projector distances.
//!
//! Index sets are 1-based at the API boundary. Eigenvalues are always stored
//! in descending order, and nothing downstream compares eigenvectors
//! directly: projectors and coefficient blocks are invariant under the sign
//! and rotation ambiguity inside eigenspaces.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance under which two eigenvalues are treated as one level.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Relative asymmetry tolerated by the matrix file parser.
pub const PARSE_SYMMETRY_TOLERANCE: f64 = 1e-9;

const MAX_SWEEPS_PER_DIM: usize = 64;

pub(crate) fn same_level(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

/// A real symmetric matrix. Symmetry is exact: construction replaces the
/// input by `(A + Aᵀ)/2`.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SymMatrix")
            .field("dim", &self.dim())
            .field("data", &self.data)
            .finish()
    }
}

impl SymMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidParameter("matrix dimension must be positive".into()));
        }
        let p = m.nrows();
        let mut data = m;
        for i in 0..p {
            for j in (i + 1)..p {
                let v = 0.5 * (data[(i, j)] + data[(j, i)]);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Ok(SymMatrix { data })
    }

    /// Builds from row-major entries.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        for row in rows {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: row.len(),
                });
            }
        }
        Self::from_matrix(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn from_fn(p: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::from_matrix(DMatrix::from_fn(p, p, f))
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix {
            data: DMatrix::zeros(p, p),
        }
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix {
            data: DMatrix::identity(p, p),
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let p = values.len();
        SymMatrix {
            data: DMatrix::from_fn(p, p, |i, j| if i == j { values[i] } else { 0.0 }),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    /// `self - other`, entrywise.
    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_dim(self.dim(), other.dim())?;
        Ok(SymMatrix {
            data: &self.data - &other.data,
        })
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_dim(self.dim(), other.dim())?;
        Ok(SymMatrix {
            data: &self.data + &other.data,
        })
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix { data: &self.data * c }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest singular value.
    pub fn op_norm(&self) -> f64 {
        op_norm(&self.data)
    }

    /// Frobenius norm.
    pub fn hs_norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn is_diagonal(&self) -> bool {
        let p = self.dim();
        (0..p).all(|i| (0..p).all(|j| i == j || self.data[(i, j)] == 0.0))
    }

    /// Parses the plain-text matrix format: a first line holding `p`, then
    /// `p` rows of `p` whitespace-separated decimals. Entries whose mirror
    /// differs by more than [`PARSE_SYMMETRY_TOLERANCE`] relative to the
    /// largest entry are rejected.
    pub fn parse(text: &str) -> Result<SymMatrix> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (line0, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing dimension line".into(),
        })?;
        let p: usize = header.trim().parse().map_err(|_| Error::Parse {
            line: line0 + 1,
            message: format!("expected a positive integer dimension, found `{}`", header.trim()),
        })?;
        if p == 0 {
            return Err(Error::Parse {
                line: line0 + 1,
                message: "dimension must be positive".into(),
            });
        }
        let mut rows = Vec::with_capacity(p);
        for (idx, line) in lines.by_ref().take(p) {
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: idx + 1,
                        message: format!("invalid number `{tok}`"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != p {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {p} entries, found {}", row.len()),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "non-finite entry".into(),
                });
            }
            rows.push(row);
        }
        if rows.len() != p {
            return Err(Error::Parse {
                line: text.lines().count(),
                message: format!("expected {p} rows, found {}", rows.len()),
            });
        }
        if let Some((idx, _)) = lines.next() {
            return Err(Error::Parse {
                line: idx + 1,
                message: "trailing content after matrix rows".into(),
            });
        }
        let scale = rows
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for (i, row) in rows.iter().enumerate() {
            for j in (i + 1)..p {
                let deviation = (row[j] - rows[j][i]).abs();
                if deviation > PARSE_SYMMETRY_TOLERANCE * scale {
                    return Err(Error::Asymmetric {
                        i: i + 1,
                        j: j + 1,
                        deviation,
                    });
                }
            }
        }
        SymMatrix::from_rows(&rows)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<SymMatrix> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SymMatrix::parse(&text)
    }

    /// Inverse of [`SymMatrix::parse`]; uses shortest round-trip decimals.
    pub fn to_text(&self) -> String {
        let p = self.dim();
        let mut out = format!("{p}\n");
        for i in 0..p {
            let row: Vec<String> = (0..p).map(|j| format!("{:?}", self.data[(i, j)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Largest singular value of a (possibly rectangular) matrix; `NaN` when
/// an entry is not finite.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

/// A sorted, duplicate-free set of 1-based indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct IndexSet(Vec<usize>);

impl TryFrom<Vec<usize>> for IndexSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        IndexSet::new(v)
    }
}

impl From<IndexSet> for Vec<usize> {
    fn from(s: IndexSet) -> Vec<usize> {
        s.0
    }
}

impl IndexSet {
    /// Rejects index 0; duplicates are merged. May be empty.
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut v: Vec<usize> = indices.into_iter().collect();
        if v.contains(&0) {
            return Err(Error::IndexOutOfRange { index: 0, dim: 0 });
        }
        v.sort_unstable();
        v.dedup();
        Ok(IndexSet(v))
    }

    /// `{1, …, k}`.
    pub fn top(k: usize) -> Self {
        IndexSet((1..=k).collect())
    }

    /// `{first, …, last}`, inclusive.
    pub fn range(first: usize, last: usize) -> Result<Self> {
        IndexSet::new(first..=last)
    }

    pub fn singleton(i: usize) -> Result<Self> {
        IndexSet::new([i])
    }

    /// Parses `a..b` (inclusive), `a..=b`, or a comma-separated list.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let bad = |m: &str| Error::InvalidParameter(format!("index set `{spec}`: {m}"));
        if let Some((a, b)) = spec.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let a: usize = a.trim().parse().map_err(|_| bad("bad range start"))?;
            let b: usize = b.trim().parse().map_err(|_| bad("bad range end"))?;
            if a == 0 || b < a {
                return Err(bad("empty or zero-based range"));
            }
            return IndexSet::range(a, b);
        }
        let v = spec
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| bad("bad index")))
            .collect::<Result<Vec<_>>>()?;
        IndexSet::new(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn zero_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i - 1).collect()
    }

    /// Errors unless every index lies in `1..=p`.
    pub fn check_within(&self, p: usize) -> Result<()> {
        match self.0.last() {
            Some(&max) if max > p => Err(Error::IndexOutOfRange { index: max, dim: p }),
            _ => Ok(()),
        }
    }

    pub fn complement(&self, p: usize) -> IndexSet {
        IndexSet((1..=p).filter(|i| !self.contains(*i)).collect())
    }

    pub fn union(&self, other: &IndexSet) -> IndexSet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        v.sort_unstable();
        v.dedup();
        IndexSet(v)
    }

    pub fn is_subset_of(&self, other: &IndexSet) -> bool {
        self.iter().all(|i| other.contains(i))
    }

    /// Whether the indices are consecutive integers.
    pub fn is_interval(&self) -> bool {
        self.0.windows(2).all(|w| w[1] == w[0] + 1)
    }

    /// Splits into maximal runs of consecutive integers.
    pub fn runs(&self) -> Vec<IndexSet> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for &i in &self.0 {
            match out.last_mut() {
                Some(run) if *run.last().unwrap() + 1 == i => run.push(i),
                _ => out.push(vec![i]),
            }
        }
        out.into_iter().map(IndexSet).collect()
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

/// Eigenvalues in descending order with matching orthonormal eigenvector
/// columns.
#[derive(Clone, Debug)]
pub struct SpectralModel {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

impl SpectralModel {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Eigenvector columns for a 1-based index set, in index order.
    pub fn basis(&self, set: &IndexSet) -> Result<DMatrix<f64>> {
        set.check_within(self.dim())?;
        Ok(self.eigenvectors.select_columns(set.zero_based().iter()))
    }

    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        let mut scaled = u.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= self.eigenvalues[j];
        }
        scaled * u.transpose()
    }

    /// Coefficients `⟨u_i, A u_j⟩` of `A` in this eigenbasis.
    pub fn coefficients(&self, a: &SymMatrix) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), a.dim())?;
        let u = &self.eigenvectors;
        Ok(u.tr_mul(&(a.as_matrix() * u)))
    }
}

/// Eigendecomposition of `a`, eigenvalues sorted descending.
pub fn decompose(a: &SymMatrix) -> Result<SpectralModel> {
    decompose_labeled(a, "matrix")
}

/// As [`decompose`], naming the matrix in the non-convergence diagnostic.
pub fn decompose_labeled(a: &SymMatrix, label: &str) -> Result<SpectralModel> {
    let p = a.dim();
    let (values, vectors) = if a.is_diagonal() {
        // Exact eigenpairs; keeps the standard basis free of rounding noise.
        let values: Vec<f64> = (0..p).map(|i| a.get(i, i)).collect();
        (values, DMatrix::identity(p, p))
    } else {
        let max_iterations = MAX_SWEEPS_PER_DIM * p.max(4);
        let eig = SymmetricEigen::try_new(a.as_matrix().clone(), f64::EPSILON, max_iterations).ok_or_else(|| {
            Error::NonConvergence {
                label: label.to_string(),
                dim: p,
                max_iterations,
            }
        })?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..p).collect();
    // stable: ties keep solver order
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let eigenvalues = order.iter().map(|&i| values[i]).collect();
    let eigenvectors = vectors.select_columns(order.iter());
    Ok(SpectralModel {
        eigenvalues,
        eigenvectors,
    })
}

/// Orthogonal projector onto the span of the eigenvectors indexed by `set`.
pub fn projector(model: &SpectralModel, set: &IndexSet) -> Result<SymMatrix> {
    let basis = model.basis(set)?;
    SymMatrix::from_matrix(&basis * basis.transpose())
}

/// `tr(P_I P̂_I) = ‖U_Iᵀ Û_I‖₂²`.
pub fn projector_overlap(model: &SpectralModel, model_hat: &SpectralModel, set: &IndexSet) -> Result<f64> {
    check_dim(model.dim(), model_hat.dim())?;
    let u = model.basis(set)?;
    let uh = model_hat.basis(set)?;
    Ok(u.tr_mul(&uh).norm_squared())
}

/// `‖P̂_I − P_I‖₂²` via the trace identity `2(|I| − tr(P_I P̂_I))`, clamped
/// to `[0, 2|I|]`.
pub fn hs_distance_sq(model: &SpectralModel, model_hat: &SpectralModel, set: &IndexSet) -> Result<f64> {
    let overlap = projector_overlap(model, model_hat, set)?;
    let k = set.len() as f64;
    Ok((2.0 * (k - overlap)).clamp(0.0, 2.0 * k))
}

/// `‖P̂_I − P_I‖₂²` summed entry by entry over the explicit projectors.
pub fn hs_distance_sq_entrywise(model: &SpectralModel, model_hat: &SpectralModel, set: &IndexSet) -> Result<f64> {
    check_dim(model.dim(), model_hat.dim())?;
    let p = projector(model, set)?;
    let ph = projector(model_hat, set)?;
    Ok((ph.as_matrix() - p.as_matrix()).norm_squared())
}

/// The `|R|×|S|` block of coefficients `⟨u_i, E u_j⟩`, `i ∈ R`, `j ∈ S`.
pub fn block_coefficients(
    e: &SymMatrix,
    model: &SpectralModel,
    rows: &IndexSet,
    cols: &IndexSet,
) -> Result<DMatrix<f64>> {
    check_dim(model.dim(), e.dim())?;
    let ur = model.basis(rows)?;
    let us = model.basis(cols)?;
    Ok(ur.tr_mul(&(e.as_matrix() * us)))
}

/// `(‖P_R E P_S‖_∞, ‖P_R E P_S‖₂)`.
pub fn block_norms(e: &SymMatrix, model: &SpectralModel, rows: &IndexSet, cols: &IndexSet) -> Result<(f64, f64)> {
    let c = block_coefficients(e, model, rows, cols)?;
    let hs = c.norm();
    let op = op_norm(&c).min(hs);
    Ok((op, hs))
}
