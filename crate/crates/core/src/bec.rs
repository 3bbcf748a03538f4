//! Condensate physics front-end: map trap geometry and inelastic collision
//! constants to two-body loss rates, and sweep the precision bound over the
//! atom number.
//!
//! Thomas–Fermi harmonic trap: γ = 15^{2/5}/(28π) · K/l³ · (l/a)^{3/5} ·
//! N^{−3/5} with l = √(ħ/(mω)). Box trap: γ = K/(2V), independent of N.

use crate::bound::solve_sdp;
use crate::error::{Error, Result};
use crate::model::TwoModeLossModel;
use crate::rpn::assemble_two_mode;

/// Reduced Planck constant, J·s (CODATA).
pub const HBAR: f64 = 1.054571817e-34;

/// Thomas–Fermi rates fall off as N^(−3/5).
pub const TF_EXPONENT: f64 = -0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrapKind {
    /// Spherically symmetric harmonic trap in the Thomas–Fermi regime;
    /// angular frequency in rad/s.
    SphericalHarmonicTf { omega: f64 },
    /// Uniform box of the given volume in m³.
    Box { volume: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct TrapSpec {
    pub kind: TrapKind,
    /// s-wave scattering length, m.
    pub scattering_length: f64,
    /// atomic mass, kg.
    pub mass: f64,
    /// symmetric 2×2 inelastic collision constants K_{εε'}, m³/s.
    pub k_constants: [[f64; 2]; 2],
}

impl TrapSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            TrapKind::SphericalHarmonicTf { omega } => {
                if !(omega > 0.0 && omega.is_finite()) {
                    return Err(Error::InvalidArgument("trap frequency must be > 0".into()));
                }
                if !(self.scattering_length > 0.0 && self.mass > 0.0) {
                    return Err(Error::InvalidArgument(
                        "scattering length and mass must be > 0".into(),
                    ));
                }
            }
            TrapKind::Box { volume } => {
                if !(volume > 0.0 && volume.is_finite()) {
                    return Err(Error::InvalidArgument("box volume must be > 0".into()));
                }
            }
        }
        for r in 0..2 {
            for c in 0..2 {
                if !(self.k_constants[r][c] >= 0.0 && self.k_constants[r][c].is_finite()) {
                    return Err(Error::InvalidArgument("K constants must be >= 0".into()));
                }
            }
        }
        if self.k_constants[0][1] != self.k_constants[1][0] {
            return Err(Error::InvalidArgument("K constants must be symmetric".into()));
        }
        Ok(())
    }

    fn k(&self, pair: (usize, usize)) -> Result<f64> {
        if pair.0 > 1 || pair.1 > 1 {
            return Err(Error::InvalidArgument("mode index must be 0 or 1".into()));
        }
        Ok(self.k_constants[pair.0][pair.1])
    }
}

/// N-independent prefactor of the Thomas–Fermi rate, so γ(N) =
/// prefactor · N^(−3/5).
pub fn tf_prefactor(trap: &TrapSpec, pair: (usize, usize)) -> Result<f64> {
    trap.validate()?;
    let omega = match trap.kind {
        TrapKind::SphericalHarmonicTf { omega } => omega,
        TrapKind::Box { .. } => {
            return Err(Error::InvalidArgument(
                "Thomas-Fermi rate needs a harmonic trap; use box_rate".into(),
            ))
        }
    };
    let l_osc = (HBAR / (trap.mass * omega)).sqrt();
    let k = trap.k(pair)?;
    Ok(15f64.powf(0.4) / (28.0 * std::f64::consts::PI) * k / l_osc.powi(3)
        * (l_osc / trap.scattering_length).powf(0.6))
}

pub fn tf_rate(trap: &TrapSpec, pair: (usize, usize), n: u64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidArgument("N must be >= 1".into()));
    }
    Ok(tf_prefactor(trap, pair)? * (n as f64).powf(TF_EXPONENT))
}

pub fn box_rate(trap: &TrapSpec, pair: (usize, usize)) -> Result<f64> {
    trap.validate()?;
    let volume = match trap.kind {
        TrapKind::Box { volume } => volume,
        TrapKind::SphericalHarmonicTf { .. } => {
            return Err(Error::InvalidArgument(
                "box rate needs a box trap; use tf_rate".into(),
            ))
        }
    };
    Ok(trap.k(pair)? / (2.0 * volume))
}

#[derive(Debug, Clone, Copy)]
pub enum RateModel {
    ThomasFermi(TrapSpec),
    BoxTrap(TrapSpec),
    /// Rates fixed by hand, constant in N.
    Constant { g11: f64, g12: f64, g22: f64 },
}

impl RateModel {
    pub fn two_body_rates(&self, n: u64) -> Result<(f64, f64, f64)> {
        match self {
            RateModel::ThomasFermi(trap) => Ok((
                tf_rate(trap, (0, 0), n)?,
                tf_rate(trap, (0, 1), n)?,
                tf_rate(trap, (1, 1), n)?,
            )),
            RateModel::BoxTrap(trap) => Ok((
                box_rate(trap, (0, 0))?,
                box_rate(trap, (0, 1))?,
                box_rate(trap, (1, 1))?,
            )),
            RateModel::Constant { g11, g12, g22 } => Ok((*g11, *g12, *g22)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CurveSpec {
    pub rate_model: RateModel,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Particle count of the reduced subchannel.
    pub subchannel: u32,
    pub superselect: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct CurvePoint {
    pub atom_number: u64,
    pub gamma11: f64,
    pub gamma12: f64,
    pub gamma22: f64,
    pub fq_per_time: f64,
}

/// Precision bound as a function of the atom number under the configured
/// rate model.
pub fn qfi_vs_n_curve(spec: &CurveSpec, atom_numbers: &[u64]) -> Result<Vec<CurvePoint>> {
    let mut out = Vec::with_capacity(atom_numbers.len());
    for &n in atom_numbers {
        out.push(curve_point(spec, n)?);
    }
    Ok(out)
}

pub fn curve_point(spec: &CurveSpec, n: u64) -> Result<CurvePoint> {
    let (g11, g12, g22) = spec.rate_model.two_body_rates(n)?;
    let input = TwoModeLossModel {
        gamma1: spec.gamma1,
        gamma2: spec.gamma2,
        gamma11: g11,
        gamma12: g12,
        gamma22: g22,
        atom_number: n,
    };
    let channel = assemble_two_mode(&input, spec.subchannel, spec.superselect)?;
    let res = solve_sdp(&channel.model, channel.subchannel_count)?;
    Ok(CurvePoint {
        atom_number: n,
        gamma11: g11,
        gamma12: g12,
        gamma22: g22,
        fq_per_time: res.fq_per_time,
    })
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::InvalidArgument("log-log fit needs positive data".into()));
        }
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::Numerical("degenerate abscissa in slope fit".into()));
    }
    Ok((n * sxy - sx * sy) / denom)
}

/// Literature-plausible ⁸⁷Rb defaults; the K constants are placeholders for
/// curve shapes, not measured values. The cross-species rate dominates and
/// the same-state rate of the lower level vanishes.
pub fn rb87_tf_trap(omega: f64) -> TrapSpec {
    TrapSpec {
        kind: TrapKind::SphericalHarmonicTf { omega },
        scattering_length: 5.3e-9,
        mass: 1.443e-25,
        k_constants: [[8.1e-20, 7.8e-20], [7.8e-20, 0.0]],
    }
}
