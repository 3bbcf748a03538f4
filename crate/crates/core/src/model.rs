//! Metrological model description and the HLS condition.
//!
//! A [`LindbladModel`] is the omega-independent generator H together with
//! noise operator families tagged by body order. [`check_hls`] decides
//! whether H lies in the real span of the identity, the Hermitian and
//! anti-Hermitian parts of the noise operators, and of all their pairwise
//! products; when it does, the QFI is at most linear in total time and the
//! operator-norm bound applies.

use crate::error::{Error, Result};
use crate::fock::{
    annihilation, build_basis, number_op, projector_total, span_membership, OperatorMatrix,
    Sector, SpanResult, C64, SPAN_TOL,
};
use crate::rpn::rescale_factor;

#[derive(Debug, Clone)]
pub struct HamiltonianTerm {
    pub body_order: u32,
    pub op: OperatorMatrix,
}

#[derive(Debug, Clone)]
pub struct NoiseFamily {
    pub body_order: u32,
    pub label: String,
    pub ops: Vec<OperatorMatrix>,
}

#[derive(Debug, Clone)]
pub struct LindbladModel {
    pub hamiltonian_terms: Vec<HamiltonianTerm>,
    pub noise_families: Vec<NoiseFamily>,
    pub basis_tag: String,
    /// Projector onto the physically accessible input subspace, if the
    /// model is restricted (e.g. by the atom-number superselection rule).
    /// The effective identity and all span generators are sandwiched by it.
    pub input_projector: Option<OperatorMatrix>,
}

impl LindbladModel {
    pub fn dim(&self) -> usize {
        self.hamiltonian_terms
            .first()
            .map(|t| t.op.dim())
            .or_else(|| {
                self.noise_families
                    .first()
                    .and_then(|f| f.ops.first())
                    .map(|o| o.dim())
            })
            .unwrap_or(0)
    }

    /// All jump operators in a flat, deterministic order.
    pub fn noise_ops(&self) -> Vec<&OperatorMatrix> {
        self.noise_families.iter().flat_map(|f| f.ops.iter()).collect()
    }

    pub fn total_hamiltonian(&self) -> Result<OperatorMatrix> {
        let dim = self.dim();
        let mut acc = OperatorMatrix::zeros(dim, self.basis_tag.clone());
        for term in &self.hamiltonian_terms {
            acc = acc.add(&term.op)?;
        }
        Ok(acc)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        for term in &self.hamiltonian_terms {
            if term.body_order < 1 {
                return Err(Error::InvalidArgument("body order must be >= 1".into()));
            }
            if term.op.dim() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "hamiltonian term dim {} vs model dim {}",
                    term.op.dim(),
                    dim
                )));
            }
            let tol = 1e-12 * term.op.frobenius_norm().max(1.0);
            if !term.op.is_hermitian(tol) {
                return Err(Error::NotHermitian(term.op.hermiticity_defect()));
            }
        }
        for fam in &self.noise_families {
            if fam.body_order < 1 {
                return Err(Error::InvalidArgument("body order must be >= 1".into()));
            }
            for op in &fam.ops {
                if op.dim() != dim {
                    return Err(Error::DimensionMismatch(format!(
                        "noise op dim {} vs model dim {}",
                        op.dim(),
                        dim
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Span generators of the HLS condition for a set of jump operators:
/// identity, L^H, i L^AH, and for every unordered pair (L_j† L_j')^H and
/// i (L_j† L_j')^AH. All returned operators are Hermitian; zero operators
/// are dropped to keep the least-squares problem well conditioned.
///
/// When the model input space is restricted, `projector` replaces the
/// identity and every generator is sandwiched by it, since the condition
/// only has to hold on the accessible subspace.
pub fn hls_generators(
    ops: &[&OperatorMatrix],
    dim: usize,
    tag: &str,
    projector: Option<&OperatorMatrix>,
) -> Result<Vec<OperatorMatrix>> {
    let mut raw = Vec::new();
    let i_unit = C64::new(0.0, 1.0);
    for l in ops {
        raw.push(l.hermitian_part());
        raw.push(l.antihermitian_part().scale(i_unit));
    }
    for (j, lj) in ops.iter().enumerate() {
        for ljp in ops.iter().skip(j) {
            let prod = lj.adjoint().matmul(ljp)?;
            raw.push(prod.hermitian_part());
            raw.push(prod.antihermitian_part().scale(i_unit));
        }
    }
    let mut gens = Vec::with_capacity(raw.len() + 1);
    match projector {
        None => gens.push(OperatorMatrix::identity(dim, tag)),
        Some(p) => {
            gens.push(p.clone());
            for g in raw.iter_mut() {
                *g = p.matmul(g)?.matmul(p)?;
            }
        }
    }
    gens.extend(raw.into_iter().filter(|g| g.frobenius_norm() > 1e-14));
    Ok(gens)
}

#[derive(Debug, Clone)]
pub struct HlsReport {
    pub satisfied: bool,
    pub residual: f64,
    /// Least-squares coefficients over the generator list (the witness when
    /// satisfied).
    pub witness: Vec<f64>,
}

/// Hamiltonian-in-Lindblad-Span test for the full model.
pub fn check_hls(model: &LindbladModel) -> Result<HlsReport> {
    model.validate()?;
    let h = model.total_hamiltonian()?;
    let ops = model.noise_ops();
    check_hls_operators(&h, &ops, model.input_projector.as_ref())
}

/// HLS test for an explicit Hamiltonian and jump-operator list.
pub fn check_hls_operators(
    h: &OperatorMatrix,
    ops: &[&OperatorMatrix],
    projector: Option<&OperatorMatrix>,
) -> Result<HlsReport> {
    let gens = hls_generators(ops, h.dim(), &h.basis_tag, projector)?;
    let SpanResult { inside, coefficients, residual } = span_membership(h, &gens, SPAN_TOL)?;
    Ok(HlsReport { satisfied: inside, residual, witness: coefficients })
}

/// Physical rates of the two-mode interferometer loss model.
#[derive(Debug, Clone, Copy)]
pub struct TwoModeLossModel {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma11: f64,
    pub gamma12: f64,
    pub gamma22: f64,
    pub atom_number: u64,
}

impl TwoModeLossModel {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.gamma1, self.gamma2, self.gamma11, self.gamma12, self.gamma22];
        if rates.iter().any(|&g| g < 0.0 || !g.is_finite()) {
            return Err(Error::InvalidArgument("rates must be finite and >= 0".into()));
        }
        if self.atom_number < 2 {
            return Err(Error::InvalidArgument("atom number must be >= 2".into()));
        }
        Ok(())
    }

    pub fn has_two_body(&self) -> bool {
        self.gamma11 > 0.0 || self.gamma12 > 0.0 || self.gamma22 > 0.0
    }
}

/// Build the rescaled two-mode loss model on the n-particle symmetric
/// subspace (with implicit vacuum mode).
///
/// The Hamiltonian is (a†1 a1 - a†2 a2)/(2 chi_1); single-body losses carry
/// sqrt(gamma_i/chi_1) and two-body losses sqrt(gamma_ij/chi_2). With
/// `superselect` the noise operators are right-multiplied by the projector
/// onto the Exactly-n sector and the Hamiltonian is conjugated by it, which
/// encodes the atom-number superselection rule. Zero rates drop their
/// operators entirely.
pub fn build_two_mode_model(
    input: &TwoModeLossModel,
    superselect: bool,
    n: u32,
) -> Result<LindbladModel> {
    input.validate()?;
    if input.has_two_body() && n < 2 {
        return Err(Error::InvalidArgument(
            "n must be >= 2 when two-body terms are present".into(),
        ));
    }
    if n < 1 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let basis = build_basis(2, n, Sector::AtMost)?;
    let tag = basis.tag().to_string();
    let a1 = annihilation(&basis, 0)?;
    let a2 = annihilation(&basis, 1)?;
    let n1 = number_op(&basis, 0)?;
    let n2 = number_op(&basis, 1)?;
    let chi1 = rescale_factor(input.atom_number, n, 1)?.value;
    let mut h = n1.sub(&n2)?.scale_re(0.5 / chi1);

    let mut single = Vec::new();
    for (gamma, a) in [(input.gamma1, &a1), (input.gamma2, &a2)] {
        if gamma > 0.0 {
            single.push(a.scale_re((gamma / chi1).sqrt()));
        }
    }
    let mut double = Vec::new();
    if input.has_two_body() {
        let chi2 = rescale_factor(input.atom_number, n, 2)?.value;
        let pairs = [
            (input.gamma11, a1.matmul(&a1)?),
            (input.gamma12, a1.matmul(&a2)?),
            (input.gamma22, a2.matmul(&a2)?),
        ];
        for (gamma, op) in pairs {
            if gamma > 0.0 {
                double.push(op.scale_re((gamma / chi2).sqrt()));
            }
        }
    }

    let mut input_projector = None;
    if superselect {
        let p = projector_total(&basis, n)?;
        h = p.matmul(&h)?.matmul(&p)?;
        for op in single.iter_mut().chain(double.iter_mut()) {
            *op = op.matmul(&p)?;
        }
        input_projector = Some(p);
    }

    let mut noise_families = Vec::new();
    if !single.is_empty() {
        noise_families.push(NoiseFamily { body_order: 1, label: "single-body-loss".into(), ops: single });
    }
    if !double.is_empty() {
        noise_families.push(NoiseFamily { body_order: 2, label: "two-body-loss".into(), ops: double });
    }

    Ok(LindbladModel {
        hamiltonian_terms: vec![HamiltonianTerm { body_order: 1, op: h }],
        noise_families,
        basis_tag: tag,
        input_projector,
    })
}
