//! Operators on truncated bosonic occupation-number spaces.
//!
//! The central objects are [`SymmetricBasis`], an ordered enumeration of
//! occupation tuples for a handful of modes, and [`OperatorMatrix`], a dense
//! complex matrix tagged with the basis it acts on. Everything downstream
//! (loss models, bounds, code verification) is built out of these.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Relative Frobenius-norm tolerance for span membership decisions.
pub const SPAN_TOL: f64 = 1e-8;

/// Which total-occupation sector a basis enumerates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sector {
    /// All tuples with total occupation <= max_total.
    AtMost,
    /// Only tuples with total occupation == max_total.
    Exactly,
}

/// Ordered occupation-number basis for `modes` bosonic modes.
///
/// States are lexicographically ordered occupation tuples. With `AtMost`
/// truncation the missing quanta implicitly sit in a vacuum/loss mode, which
/// is how lost particles are represented throughout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymmetricBasis {
    pub modes: usize,
    pub max_total: u32,
    pub sector: Sector,
    pub states: Vec<Vec<u32>>,
    tag: String,
}

impl SymmetricBasis {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    /// Identifier binding operators to this basis.
    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Index of an occupation tuple, if present.
    pub fn index_of(&self, occ: &[u32]) -> Option<usize> {
        self.states.binary_search_by(|s| s.as_slice().cmp(occ)).ok()
    }

    pub fn total(&self, idx: usize) -> u32 {
        self.states[idx].iter().sum()
    }
}

/// Enumerate the occupation basis.
pub fn build_basis(modes: usize, max_total: u32, sector: Sector) -> Result<SymmetricBasis> {
    if modes == 0 {
        return Err(Error::InvalidArgument("modes must be >= 1".into()));
    }
    let mut states = Vec::new();
    let mut current = vec![0u32; modes];
    enumerate_states(&mut states, &mut current, 0, max_total, sector);
    states.sort();
    let tag = format!(
        "fock:m{}:t{}:{}",
        modes,
        max_total,
        match sector {
            Sector::AtMost => "le",
            Sector::Exactly => "eq",
        }
    );
    Ok(SymmetricBasis { modes, max_total, sector, states, tag })
}

fn enumerate_states(
    out: &mut Vec<Vec<u32>>,
    current: &mut Vec<u32>,
    mode: usize,
    remaining: u32,
    sector: Sector,
) {
    if mode == current.len() {
        let keep = match sector {
            Sector::AtMost => true,
            Sector::Exactly => remaining == 0,
        };
        if keep {
            out.push(current.clone());
        }
        return;
    }
    for n in 0..=remaining {
        current[mode] = n;
        enumerate_states(out, current, mode + 1, remaining - n, sector);
    }
    current[mode] = 0;
}

/// Dense complex operator bound to a basis by its tag.
///
/// Sector-projected operators keep the ambient square shape with zero blocks,
/// so a single tag suffices even for rectangular-acting maps.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub mat: CMat,
    pub basis_tag: String,
}

impl OperatorMatrix {
    pub fn new(mat: CMat, basis_tag: impl Into<String>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "operator must be square, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::Numerical("operator has non-finite entries".into()));
        }
        Ok(OperatorMatrix { mat, basis_tag: basis_tag.into() })
    }

    pub fn identity(dim: usize, basis_tag: impl Into<String>) -> Self {
        OperatorMatrix { mat: CMat::identity(dim, dim), basis_tag: basis_tag.into() }
    }

    pub fn zeros(dim: usize, basis_tag: impl Into<String>) -> Self {
        OperatorMatrix { mat: CMat::zeros(dim, dim), basis_tag: basis_tag.into() }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn adjoint(&self) -> OperatorMatrix {
        OperatorMatrix { mat: self.mat.adjoint(), basis_tag: self.basis_tag.clone() }
    }

    /// (A + A†)/2
    pub fn hermitian_part(&self) -> OperatorMatrix {
        let mat = (&self.mat + self.mat.adjoint()).scale(0.5);
        OperatorMatrix { mat, basis_tag: self.basis_tag.clone() }
    }

    /// (A - A†)/2
    pub fn antihermitian_part(&self) -> OperatorMatrix {
        let mat = (&self.mat - self.mat.adjoint()).scale(0.5);
        OperatorMatrix { mat, basis_tag: self.basis_tag.clone() }
    }

    pub fn scale(&self, factor: C64) -> OperatorMatrix {
        OperatorMatrix { mat: self.mat.clone() * factor, basis_tag: self.basis_tag.clone() }
    }

    pub fn scale_re(&self, factor: f64) -> OperatorMatrix {
        self.scale(C64::new(factor, 0.0))
    }

    pub fn add(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        self.check_compatible(other)?;
        Ok(OperatorMatrix {
            mat: &self.mat + &other.mat,
            basis_tag: self.basis_tag.clone(),
        })
    }

    pub fn sub(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        self.check_compatible(other)?;
        Ok(OperatorMatrix {
            mat: &self.mat - &other.mat,
            basis_tag: self.basis_tag.clone(),
        })
    }

    pub fn matmul(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        self.check_compatible(other)?;
        Ok(OperatorMatrix {
            mat: &self.mat * &other.mat,
            basis_tag: self.basis_tag.clone(),
        })
    }

    fn check_compatible(&self, other: &OperatorMatrix) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        if self.basis_tag != other.basis_tag {
            return Err(Error::BasisMismatch {
                expected: self.basis_tag.clone(),
                got: other.basis_tag.clone(),
            });
        }
        Ok(())
    }

    /// Largest singular value. Computed as sqrt(lambda_max(A†A)); the
    /// dimensions in play never justify anything iterative.
    pub fn operator_norm(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        let gram = self.mat.adjoint() * &self.mat;
        let eig = gram.symmetric_eigen();
        eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.max(0.0))).sqrt()
    }

    /// Eigenvalues of a Hermitian operator, ascending.
    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        let eig = self.mat.clone().symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Max-entry deviation from Hermiticity.
    pub fn hermiticity_defect(&self) -> f64 {
        let diff = &self.mat - self.mat.adjoint();
        diff.iter().fold(0.0f64, |m, c| m.max(c.norm()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() <= tol
    }

    pub fn trace(&self) -> C64 {
        self.mat.diagonal().iter().sum()
    }
}

/// Annihilation operator for one mode on an `AtMost` basis:
/// <n - e_mode| a |n> = sqrt(n_mode).
pub fn annihilation(basis: &SymmetricBasis, mode: usize) -> Result<OperatorMatrix> {
    if mode >= basis.modes {
        return Err(Error::InvalidArgument(format!(
            "mode {} out of range for {} modes",
            mode, basis.modes
        )));
    }
    if basis.sector != Sector::AtMost {
        return Err(Error::InvalidArgument(
            "annihilation is not closed on an Exactly-sector basis".into(),
        ));
    }
    let dim = basis.dim();
    let mut mat = CMat::zeros(dim, dim);
    for (col, ket) in basis.states.iter().enumerate() {
        if ket[mode] == 0 {
            continue;
        }
        let mut bra = ket.clone();
        bra[mode] -= 1;
        let row = basis
            .index_of(&bra)
            .expect("AtMost basis is closed under annihilation");
        mat[(row, col)] = C64::new((ket[mode] as f64).sqrt(), 0.0);
    }
    OperatorMatrix::new(mat, basis.tag())
}

/// Creation operator, the adjoint of [`annihilation`]. On the top shell of a
/// truncated basis the raised component is cut off; only products that stay
/// inside the representable sector are used downstream.
pub fn creation(basis: &SymmetricBasis, mode: usize) -> Result<OperatorMatrix> {
    Ok(annihilation(basis, mode)?.adjoint())
}

/// Diagonal number operator a†a for one mode. Exact on any sector.
pub fn number_op(basis: &SymmetricBasis, mode: usize) -> Result<OperatorMatrix> {
    if mode >= basis.modes {
        return Err(Error::InvalidArgument(format!(
            "mode {} out of range for {} modes",
            mode, basis.modes
        )));
    }
    let dim = basis.dim();
    let mut mat = CMat::zeros(dim, dim);
    for (i, s) in basis.states.iter().enumerate() {
        mat[(i, i)] = C64::new(s[mode] as f64, 0.0);
    }
    OperatorMatrix::new(mat, basis.tag())
}

/// Projector onto the states with total occupation exactly `n`.
pub fn projector_total(basis: &SymmetricBasis, n: u32) -> Result<OperatorMatrix> {
    let dim = basis.dim();
    let mut mat = CMat::zeros(dim, dim);
    for i in 0..dim {
        if basis.total(i) == n {
            mat[(i, i)] = C64::new(1.0, 0.0);
        }
    }
    OperatorMatrix::new(mat, basis.tag())
}

/// Result of a real-span least-squares membership test.
#[derive(Debug, Clone)]
pub struct SpanResult {
    pub inside: bool,
    pub coefficients: Vec<f64>,
    pub residual: f64,
}

/// Vectorize a Hermitian matrix preserving the Hilbert-Schmidt inner product:
/// real diagonal, then sqrt(2)-scaled real and imaginary upper-triangle parts.
pub fn hermitian_vectorize(mat: &CMat) -> DVector<f64> {
    let d = mat.nrows();
    let mut v = DVector::zeros(d * d);
    let mut idx = 0;
    for i in 0..d {
        v[idx] = mat[(i, i)].re;
        idx += 1;
    }
    let s = std::f64::consts::SQRT_2;
    for i in 0..d {
        for j in (i + 1)..d {
            v[idx] = s * mat[(i, j)].re;
            idx += 1;
            v[idx] = s * mat[(i, j)].im;
            idx += 1;
        }
    }
    v
}

/// Decide whether `target` lies in the real span of Hermitian `generators`.
///
/// Solves the minimal-norm real least-squares problem over the Hermitian
/// vectorization; `inside` holds when the residual is below
/// `tol * max(1, ||target||_F)`.
pub fn span_membership(
    target: &OperatorMatrix,
    generators: &[OperatorMatrix],
    tol: f64,
) -> Result<SpanResult> {
    let herm_tol = 1e-9 * target.frobenius_norm().max(1.0);
    if !target.is_hermitian(herm_tol) {
        return Err(Error::NotHermitian(target.hermiticity_defect()));
    }
    let d = target.dim();
    let t = hermitian_vectorize(&target.mat);
    let target_norm = t.norm();
    if generators.is_empty() {
        return Ok(SpanResult {
            inside: target_norm <= tol * target_norm.max(1.0),
            coefficients: vec![],
            residual: target_norm,
        });
    }
    let mut g = DMatrix::<f64>::zeros(d * d, generators.len());
    for (j, gen) in generators.iter().enumerate() {
        if gen.dim() != d {
            return Err(Error::DimensionMismatch(format!("generator {} has dim {}", j, gen.dim())));
        }
        if gen.basis_tag != target.basis_tag {
            return Err(Error::BasisMismatch {
                expected: target.basis_tag.clone(),
                got: gen.basis_tag.clone(),
            });
        }
        let gnorm = gen.frobenius_norm().max(1.0);
        if !gen.is_hermitian(1e-9 * gnorm) {
            return Err(Error::NotHermitian(gen.hermiticity_defect()));
        }
        g.set_column(j, &hermitian_vectorize(&gen.mat));
    }
    let (coeffs, residual) = min_norm_least_squares(&g, &t);
    Ok(SpanResult {
        inside: residual <= tol * target_norm.max(1.0),
        coefficients: coeffs.iter().copied().collect(),
        residual,
    })
}

/// Minimal-norm least-squares solution of A x = b via SVD; returns (x, ||Ax-b||).
pub fn min_norm_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let cutoff = smax * 1e-12;
    let mut x = DVector::zeros(a.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            let proj = u.column(k).dot(b) / s;
            x += vt.row(k).transpose() * proj;
        }
    }
    let residual = (a * &x - b).norm();
    (x, residual)
}

/// Orthonormal basis (columns) of the null space of A, via SVD.
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let cutoff = smax.max(1.0) * 1e-12;
    let n = a.ncols();
    let rank_rows = svd.singular_values.len();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for k in 0..rank_rows {
        if svd.singular_values[k] <= cutoff {
            cols.push(vt.row(k).transpose());
        }
    }
    // Rows of v_t beyond the number of singular values also span the kernel.
    for k in rank_rows..vt.nrows() {
        cols.push(vt.row(k).transpose());
    }
    let mut out = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}
