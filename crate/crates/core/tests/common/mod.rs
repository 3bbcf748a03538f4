//! Independent oracles shared by the integration suites: a brute-force
//! grid minimax, fixed-node trapezoid quadrature, and a dense RK4
//! master-equation integrator.

#![allow(dead_code)]

use nalgebra::{DVector, SymmetricEigen};
use qmetro::fock::{annihilation, build_basis, number_op, C64, CMat, Sector, SymmetricBasis};
use qmetro::traj::{RateTable, SectorState, JUMP_PATTERNS};

/// q(xi, x): the inner objective of the two-body minimax; terms with a zero
/// rate force their numerator to vanish or blow up.
fn q_term(num: f64, rate: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if rate == 0.0 {
        f64::INFINITY
    } else {
        num / rate
    }
}

fn q_value(g11: f64, g22: f64, g12: f64, xi: f64, x: f64) -> f64 {
    q_term((0.5 + xi).powi(2) * x * x, g11)
        + q_term((0.5 - xi).powi(2) * (1.0 - x) * (1.0 - x), g22)
        + q_term(4.0 * xi * xi * x * (1.0 - x), g12)
}

/// Brute-force minimax over a 400x400 grid (401 nodes per axis so the
/// rational pinning points land exactly on the grid):
/// 4 * min_{xi in [-2,2]} max_{x in [0,1]} q(xi, x).
pub fn grid_minimax_bound(g11: f64, g22: f64, g12: f64) -> f64 {
    let n = 400usize;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let xi = -2.0 + 4.0 * i as f64 / n as f64;
        let mut worst = 0.0f64;
        for j in 0..=n {
            let x = j as f64 / n as f64;
            worst = worst.max(q_value(g11, g22, g12, xi, x));
            if worst >= best {
                break;
            }
        }
        best = best.min(worst);
    }
    4.0 * best
}

/// Fixed-node trapezoid quadrature.
pub fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, nodes: usize) -> f64 {
    let h = (b - a) / (nodes - 1) as f64;
    let mut acc = 0.5 * (f(a) + f(b));
    for i in 1..nodes - 1 {
        acc += f(a + h * i as f64);
    }
    acc * h
}

/// Jump operators sqrt(rate) a1^r1 a2^r2 on the given basis.
pub fn dense_jump_ops(basis: &SymmetricBasis, rates: &RateTable) -> Vec<CMat> {
    let a1 = annihilation(basis, 0).unwrap();
    let a2 = annihilation(basis, 1).unwrap();
    let entries = [
        rates.gamma1,
        rates.gamma2,
        rates.gamma11,
        rates.gamma12,
        rates.gamma22,
        rates.gamma111,
        rates.gamma112,
        rates.gamma122,
        rates.gamma222,
    ];
    let mut ops = Vec::new();
    for (id, &g) in entries.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let (r1, r2) = JUMP_PATTERNS[id];
        let mut l = CMat::identity(basis.dim(), basis.dim());
        for _ in 0..r1 {
            l = &l * &a1.mat;
        }
        for _ in 0..r2 {
            l = &l * &a2.mat;
        }
        ops.push(l * C64::new(g.sqrt(), 0.0));
    }
    ops
}

/// RK4 integration of the dense master equation for a Ramsey stage
/// (H = omega Sz) starting from the x-coherent state of N atoms.
pub fn dense_lindblad_rho(
    n: u32,
    rates: &RateTable,
    omega: f64,
    t: f64,
    steps: usize,
) -> (SymmetricBasis, CMat) {
    let basis = build_basis(2, n, Sector::AtMost).unwrap();
    let n1 = number_op(&basis, 0).unwrap();
    let n2 = number_op(&basis, 1).unwrap();
    let h = (&n1.mat - &n2.mat) * C64::new(0.5 * omega, 0.0);
    let ls = dense_jump_ops(&basis, rates);
    let lds: Vec<CMat> = ls.iter().map(|l| l.adjoint()).collect();
    let lls: Vec<CMat> = ls.iter().zip(&lds).map(|(l, ld)| ld * l).collect();
    let psi: DVector<C64> = SectorState::coherent_x(n).embed(&basis).unwrap();
    let mut rho: CMat = &psi * psi.adjoint();
    let lind = |r: &CMat| -> CMat {
        let mut d = (&h * r - r * &h) * C64::new(0.0, -1.0);
        for i in 0..ls.len() {
            d += &ls[i] * r * &lds[i] - (&lls[i] * r + r * &lls[i]) * C64::new(0.5, 0.0);
        }
        d
    };
    let dt = t / steps as f64;
    for _ in 0..steps {
        let k1 = lind(&rho);
        let k2 = lind(&(&rho + &k1 * C64::new(0.5 * dt, 0.0)));
        let k3 = lind(&(&rho + &k2 * C64::new(0.5 * dt, 0.0)));
        let k4 = lind(&(&rho + &k3 * C64::new(dt, 0.0)));
        rho += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4)
            * C64::new(dt / 6.0, 0.0);
    }
    (basis, rho)
}

pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    let d = (a - b + (a - b).adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(d);
    0.5 * eig.eigenvalues.iter().map(|x| x.abs()).sum::<f64>()
}
