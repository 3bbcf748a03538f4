//! Monte Carlo wavefunction simulation of the two-mode interferometer.
//!
//! States live in fixed-total-number sectors (losses never create number
//! coherence), so a trajectory is an amplitude vector over `n1 = 0..=M`
//! together with its current total `M`. The Hamiltonian
//! `omega*Sz + chi*Sz^2 + chi_tilde*N*Sz` is diagonal in this basis, which
//! lets the no-jump evolution be applied exactly; jump times are sampled by
//! the norm-decay threshold method with an adaptive step keeping the
//! per-step jump probability below 0.1.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fock::{C64, CMat, OperatorMatrix, SymmetricBasis};

/// Jump operator patterns `a1^r1 a2^r2`, indexed by a stable operator id.
pub const JUMP_PATTERNS: [(u32, u32); 9] = [
    (1, 0),
    (0, 1),
    (2, 0),
    (1, 1),
    (0, 2),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
];

/// Loss rates for the jump operators `sqrt(rate) * a1^r1 a2^r2`, in 1/s.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RateTable {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma11: f64,
    pub gamma12: f64,
    pub gamma22: f64,
    pub gamma111: f64,
    pub gamma112: f64,
    pub gamma122: f64,
    pub gamma222: f64,
}

impl RateTable {
    pub fn validate(&self) -> Result<()> {
        for (id, g) in self.entries() {
            if !g.is_finite() || g < 0.0 {
                let (r1, r2) = JUMP_PATTERNS[id];
                return Err(Error::InvalidArgument(format!(
                    "loss rate for a1^{r1} a2^{r2} must be finite and >= 0, got {g}"
                )));
            }
        }
        Ok(())
    }

    fn entries(&self) -> [(usize, f64); 9] {
        [
            (0, self.gamma1),
            (1, self.gamma2),
            (2, self.gamma11),
            (3, self.gamma12),
            (4, self.gamma22),
            (5, self.gamma111),
            (6, self.gamma112),
            (7, self.gamma122),
            (8, self.gamma222),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct JumpOp {
    id: usize,
    gamma: f64,
    r1: u32,
    r2: u32,
}

fn jump_ops(rates: &RateTable) -> Vec<JumpOp> {
    rates
        .entries()
        .iter()
        .filter(|(_, g)| *g > 0.0)
        .map(|&(id, gamma)| {
            let (r1, r2) = JUMP_PATTERNS[id];
            JumpOp { id, gamma, r1, r2 }
        })
        .collect()
}

/// Number of quanta removed by the jump operator with the given id.
pub fn jump_body_order(id: usize) -> u32 {
    let (r1, r2) = JUMP_PATTERNS[id];
    r1 + r2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumberDistribution {
    Fixed,
    Poissonian,
}

/// Pulse applied between the preparation and interferometry stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RotationSpec {
    None,
    /// `exp(-i * angle * Sx)` with the given angle in radians.
    Fixed(f64),
    /// Angle chosen to maximize `Var(Sz)` of the lossless prepared state.
    Auto,
}

#[derive(Debug, Clone)]
pub struct ProtocolSpec {
    pub n_mean: f64,
    pub distribution: NumberDistribution,
    /// One-axis-twisting coefficient during preparation, rad/s.
    pub chi: f64,
    /// Collisional-shift coefficient during preparation, rad/s.
    pub chi_tilde: f64,
    /// True value of the estimated frequency, rad/s; imprinted during the
    /// interferometry stage only.
    pub omega: f64,
    pub prep_rates: RateTable,
    pub ramsey_rates: RateTable,
    /// Residual nonlinearities during interferometry (merged clouds).
    pub ramsey_chi: f64,
    pub ramsey_chi_tilde: f64,
    pub t_prep: f64,
    pub t_ramsey: f64,
    pub rotation: RotationSpec,
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_mean >= 2.0) || !self.n_mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mean atom number must be >= 2, got {}",
                self.n_mean
            )));
        }
        if !(self.t_prep >= 0.0) || !(self.t_ramsey >= 0.0) {
            return Err(Error::InvalidArgument(
                "stage durations must be >= 0".into(),
            ));
        }
        self.prep_rates.validate()?;
        self.ramsey_rates.validate()
    }

    pub fn with_omega(&self, omega: f64) -> ProtocolSpec {
        let mut s = self.clone();
        s.omega = omega;
        s
    }
}

/// Pure state restricted to a fixed-total-number sector; `amps[k]` is the
/// amplitude of `|n1 = k, n2 = total - k>`.
#[derive(Debug, Clone)]
pub struct SectorState {
    pub total: u32,
    pub amps: DVector<C64>,
}

impl SectorState {
    /// Spin coherent state along +x: binomial amplitudes.
    pub fn coherent_x(total: u32) -> SectorState {
        let m = total as usize;
        let mut amps = DVector::zeros(m + 1);
        for k in 0..=m {
            let mut ln = -(m as f64) * std::f64::consts::LN_2;
            for i in 1..=k {
                ln += ((m - k + i) as f64 / i as f64).ln();
            }
            amps[k] = C64::new((0.5 * ln).exp(), 0.0);
        }
        SectorState {
            total,
            amps,
        }
    }

    pub fn norm2(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn renormalize(&mut self) -> Result<()> {
        let n2 = self.norm2();
        if !(n2 > 1e-300) || !n2.is_finite() {
            return Err(Error::Numerical(
                "trajectory state became non-normalizable".into(),
            ));
        }
        self.amps /= C64::new(n2.sqrt(), 0.0);
        Ok(())
    }

    fn sz(&self, k: usize) -> f64 {
        k as f64 - self.total as f64 / 2.0
    }

    pub fn expect_sz(&self) -> f64 {
        let n2 = self.norm2();
        (0..self.amps.len())
            .map(|k| self.amps[k].norm_sqr() * self.sz(k))
            .sum::<f64>()
            / n2
    }

    pub fn var_sz(&self) -> f64 {
        let n2 = self.norm2();
        let m1 = self.expect_sz();
        let m2 = (0..self.amps.len())
            .map(|k| self.amps[k].norm_sqr() * self.sz(k) * self.sz(k))
            .sum::<f64>()
            / n2;
        m2 - m1 * m1
    }

    /// Embed into a two-mode occupation basis as `|n1 = k, n2 = total - k>`.
    pub fn embed(&self, basis: &SymmetricBasis) -> Result<DVector<C64>> {
        let mut out = DVector::zeros(basis.dim());
        for k in 0..self.amps.len() {
            let occ = [k as u32, self.total - k as u32];
            let idx = basis.index_of(&occ).ok_or_else(|| {
                Error::DimensionMismatch(format!(
                    "occupation ({}, {}) outside basis `{}`",
                    occ[0],
                    occ[1],
                    basis.tag()
                ))
            })?;
            out[idx] = self.amps[k];
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub state: SectorState,
    /// (time, operator id) for every jump, in increasing time order.
    pub jumps: Vec<(f64, usize)>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QfiEstimate {
    pub value: f64,
    pub statistical_error: f64,
    pub fd_step: f64,
    /// Total weight of |rho_dot| matrix elements discarded by the
    /// eigenvalue floor.
    pub floor_weight: f64,
}

struct StageParams {
    omega: f64,
    chi: f64,
    chi_tilde: f64,
    ops: Vec<JumpOp>,
}

/// Per-sector tables: diagonal Hamiltonian, total decay rate and per-op
/// jump weights, all indexed by k = n1.
struct SectorTables {
    h: Vec<f64>,
    gam: Vec<f64>,
    w: Vec<Vec<f64>>,
}

fn falling(n: u32, r: u32) -> f64 {
    (0..r).map(|i| (n.saturating_sub(i)) as f64).product()
}

fn sector_tables(m: u32, stage: &StageParams) -> SectorTables {
    let dim = m as usize + 1;
    let mut h = vec![0.0; dim];
    let mut gam = vec![0.0; dim];
    let mut w = vec![vec![0.0; dim]; stage.ops.len()];
    for k in 0..dim {
        let sz = k as f64 - m as f64 / 2.0;
        h[k] = stage.omega * sz + stage.chi * sz * sz + stage.chi_tilde * m as f64 * sz;
        for (j, op) in stage.ops.iter().enumerate() {
            let f = falling(k as u32, op.r1) * falling(m - k as u32, op.r2);
            w[j][k] = op.gamma * f;
            gam[k] += w[j][k];
        }
    }
    SectorTables { h, gam, w }
}

fn apply_drift(state: &mut SectorState, tab: &SectorTables, dt: f64) {
    for k in 0..state.amps.len() {
        let f = C64::new(-0.5 * tab.gam[k] * dt, -tab.h[k] * dt).exp();
        state.amps[k] *= f;
    }
}

fn norm2_after(amps: &DVector<C64>, gam: &[f64], dt: f64) -> f64 {
    (0..amps.len())
        .map(|k| amps[k].norm_sqr() * (-gam[k] * dt).exp())
        .sum()
}

fn apply_jump(state: &mut SectorState, op: &JumpOp) -> Result<()> {
    let m = state.total;
    if m < op.r1 + op.r2 {
        return Err(Error::Numerical(format!(
            "jump removing {} quanta selected in sector with {} atoms",
            op.r1 + op.r2,
            m
        )));
    }
    let new_total = m - op.r1 - op.r2;
    let mut amps = DVector::zeros(new_total as usize + 1);
    for kp in 0..=new_total as usize {
        let k = kp + op.r1 as usize;
        let f = falling(k as u32, op.r1) * falling(m - k as u32, op.r2);
        amps[kp] = state.amps[k] * C64::new(f.sqrt(), 0.0);
    }
    state.total = new_total;
    state.amps = amps;
    state.renormalize()
}

/// Norm-decay sampling: evolve until the survival probability crosses a
/// uniform threshold, bisect the crossing time within the step, jump there.
fn evolve_stage(
    state: &mut SectorState,
    stage: &StageParams,
    t0: f64,
    duration: f64,
    rng: &mut ChaCha8Rng,
    jumps: &mut Vec<(f64, usize)>,
) -> Result<()> {
    state.renormalize()?;
    if duration == 0.0 {
        return Ok(());
    }
    let t_end = t0 + duration;
    let mut t = t0;
    let mut threshold: f64 = rng.gen();
    let mut tab = sector_tables(state.total, stage);
    while t < t_end * (1.0 - 1e-15) - 1e-300 {
        let n2 = state.norm2();
        let rate: f64 = tab
            .w
            .iter()
            .map(|wj| {
                (0..state.amps.len())
                    .map(|k| wj[k] * state.amps[k].norm_sqr())
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n2;
        let dt = if rate > 0.0 {
            (0.1 / rate).min(t_end - t)
        } else {
            t_end - t
        };
        let before = state.amps.clone();
        apply_drift(state, &tab, dt);
        if state.norm2() >= threshold {
            t += dt;
            continue;
        }
        // jump inside (t, t + dt]: bisect the survival crossing
        let (mut lo, mut hi) = (0.0_f64, dt);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if norm2_after(&before, &tab.gam, mid) > threshold {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        state.amps = before;
        apply_drift(state, &tab, tau);
        let weights: Vec<f64> = tab
            .w
            .iter()
            .map(|wj| {
                (0..state.amps.len())
                    .map(|k| wj[k] * state.amps[k].norm_sqr())
                    .sum::<f64>()
            })
            .collect();
        let total_w: f64 = weights.iter().sum();
        if !(total_w > 0.0) {
            return Err(Error::Numerical(
                "jump threshold crossed with zero total jump weight".into(),
            ));
        }
        let mut u = rng.gen::<f64>() * total_w;
        let mut chosen = stage.ops.len() - 1;
        for (j, wj) in weights.iter().enumerate() {
            if u < *wj {
                chosen = j;
                break;
            }
            u -= wj;
        }
        t += tau;
        apply_jump(state, &stage.ops[chosen])?;
        jumps.push((t, stage.ops[chosen].id));
        tab = sector_tables(state.total, stage);
        threshold = rng.gen();
    }
    state.renormalize()
}

/// Cached eigendecompositions of the tridiagonal Sx per sector, used for
/// beam-splitter pulses `exp(-i * angle * Sx)`.
#[derive(Default)]
pub struct RotationCache {
    eig: BTreeMap<u32, (CMat, DVector<f64>)>,
}

impl RotationCache {
    fn entry(&mut self, m: u32) -> &(CMat, DVector<f64>) {
        self.eig.entry(m).or_insert_with(|| {
            let dim = m as usize + 1;
            let mut sx = DMatrix::<f64>::zeros(dim, dim);
            for k in 0..dim - 1 {
                let v = (((k + 1) * (dim - 1 - k)) as f64).sqrt() / 2.0;
                sx[(k, k + 1)] = v;
                sx[(k + 1, k)] = v;
            }
            let eig = SymmetricEigen::new(sx);
            let u = eig.eigenvectors.map(|x| C64::new(x, 0.0));
            (u, eig.eigenvalues)
        })
    }

    pub fn rotate(&mut self, state: &mut SectorState, angle: f64) {
        if angle == 0.0 {
            return;
        }
        let (u, lam) = self.entry(state.total);
        let mut coeffs = u.adjoint() * &state.amps;
        for i in 0..coeffs.len() {
            coeffs[i] *= C64::new(0.0, -angle * lam[i]).exp();
        }
        state.amps = u * coeffs;
    }
}

/// Lossless preparation-stage state of a fixed-N sector, used as the
/// reference for the automatic pulse angle.
fn lossless_prepared(spec: &ProtocolSpec, m: u32) -> SectorState {
    let mut st = SectorState::coherent_x(m);
    for k in 0..st.amps.len() {
        let sz = k as f64 - m as f64 / 2.0;
        let phase = (spec.chi * sz * sz + spec.chi_tilde * m as f64 * sz) * spec.t_prep;
        st.amps[k] *= C64::new(0.0, -phase).exp();
    }
    st
}

fn auto_angle(spec: &ProtocolSpec, m: u32, rot: &mut RotationCache) -> f64 {
    let reference = lossless_prepared(spec, m);
    let eval = |theta: f64, rot: &mut RotationCache| -> f64 {
        let mut st = reference.clone();
        rot.rotate(&mut st, theta);
        st.var_sz()
    };
    // Var(Sz) under exp(-i theta Sx) has period pi in theta
    let grid = 64;
    let mut best = (0.0, eval(0.0, rot));
    for i in 1..grid {
        let theta = std::f64::consts::PI * i as f64 / grid as f64;
        let v = eval(theta, rot);
        if v > best.1 {
            best = (theta, v);
        }
    }
    let half_cell = std::f64::consts::PI / grid as f64;
    let (mut a, mut b) = (best.0 - half_cell, best.0 + half_cell);
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (eval(x1, rot), eval(x2, rot));
    for _ in 0..40 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = eval(x1, rot);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = eval(x2, rot);
        }
    }
    0.5 * (a + b)
}

fn ln_poisson_pmf(k: u32, mu: f64) -> f64 {
    let mut ln_fact = 0.0;
    for i in 1..=k {
        ln_fact += (i as f64).ln();
    }
    k as f64 * mu.ln() - mu - ln_fact
}

/// (total, sector weight, trajectories allocated) per initial-number sector.
fn sector_plan(spec: &ProtocolSpec, count: usize) -> Vec<(u32, f64, usize)> {
    match spec.distribution {
        NumberDistribution::Fixed => vec![(spec.n_mean.round() as u32, 1.0, count)],
        NumberDistribution::Poissonian => {
            let mu = spec.n_mean;
            let sigma = mu.sqrt();
            let lo = (mu - 4.0 * sigma).ceil().max(0.0) as u32;
            let hi = (mu + 4.0 * sigma).floor() as u32;
            let raw: Vec<(u32, f64)> = (lo..=hi)
                .map(|m| (m, ln_poisson_pmf(m, mu).exp()))
                .collect();
            let mass: f64 = raw.iter().map(|(_, w)| w).sum();
            raw.into_iter()
                .map(|(m, w)| {
                    let weight = w / mass;
                    let n = ((count as f64 * weight).round() as usize).max(1);
                    (m, weight, n)
                })
                .collect()
        }
    }
}

pub fn run_trajectories(
    spec: &ProtocolSpec,
    count: usize,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("trajectory count must be >= 1".into()));
    }
    let prep = StageParams {
        omega: 0.0,
        chi: spec.chi,
        chi_tilde: spec.chi_tilde,
        ops: jump_ops(&spec.prep_rates),
    };
    let ramsey = StageParams {
        omega: spec.omega,
        chi: spec.ramsey_chi,
        chi_tilde: spec.ramsey_chi_tilde,
        ops: jump_ops(&spec.ramsey_rates),
    };
    let mut rot = RotationCache::default();
    let mut trajectories = Vec::new();
    let mut index: u64 = 0;
    for (m, sector_weight, n) in sector_plan(spec, count) {
        let angle = match spec.rotation {
            RotationSpec::None => None,
            RotationSpec::Fixed(a) => Some(a),
            RotationSpec::Auto => Some(auto_angle(spec, m, &mut rot)),
        };
        for _ in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index);
            index += 1;
            let mut state = SectorState::coherent_x(m);
            let mut jumps = Vec::new();
            evolve_stage(&mut state, &prep, 0.0, spec.t_prep, &mut rng, &mut jumps)?;
            if let Some(a) = angle {
                rot.rotate(&mut state, a);
            }
            evolve_stage(
                &mut state,
                &ramsey,
                spec.t_prep,
                spec.t_ramsey,
                &mut rng,
                &mut jumps,
            )?;
            trajectories.push(Trajectory {
                state,
                jumps,
                weight: sector_weight / n as f64,
            });
        }
    }
    let count = trajectories.len();
    Ok(TrajectoryEnsemble {
        trajectories,
        seed,
        count,
    })
}

/// Weighted ensemble average of the total atom number.
pub fn mean_total(ens: &TrajectoryEnsemble) -> f64 {
    ens.trajectories
        .iter()
        .map(|tr| tr.weight * tr.state.total as f64)
        .sum()
}

fn accumulate_densities(
    trajectories: &[&Trajectory],
    weight_scale: f64,
) -> BTreeMap<u32, CMat> {
    let mut out: BTreeMap<u32, CMat> = BTreeMap::new();
    for tr in trajectories {
        let dim = tr.state.amps.len();
        let block = out
            .entry(tr.state.total)
            .or_insert_with(|| CMat::zeros(dim, dim));
        let w = C64::new(tr.weight * weight_scale, 0.0);
        for i in 0..dim {
            for j in 0..dim {
                block[(i, j)] += w * tr.state.amps[i] * tr.state.amps[j].conj();
            }
        }
    }
    out
}

/// Ensemble density matrix, block per total-number sector.
pub fn sector_densities(ens: &TrajectoryEnsemble) -> BTreeMap<u32, CMat> {
    let refs: Vec<&Trajectory> = ens.trajectories.iter().collect();
    accumulate_densities(&refs, 1.0)
}

/// Ensemble density matrix embedded in a two-mode occupation basis.
pub fn ensemble_density(
    ens: &TrajectoryEnsemble,
    basis: &SymmetricBasis,
) -> Result<OperatorMatrix> {
    let mut rho = CMat::zeros(basis.dim(), basis.dim());
    for tr in &ens.trajectories {
        let psi = tr.state.embed(basis)?;
        let w = C64::new(tr.weight, 0.0);
        rho += (&psi * psi.adjoint()).scale(1.0) * w;
    }
    OperatorMatrix::new(rho, basis.tag())
}

const EIG_FLOOR: f64 = 1e-12;

fn qfi_from_blocks(
    bar: &BTreeMap<u32, CMat>,
    dot: &BTreeMap<u32, CMat>,
) -> (f64, f64) {
    let mut value = 0.0;
    let mut floor_weight = 0.0;
    for (m, rho) in bar {
        let Some(rdot) = dot.get(m) else { continue };
        let sym = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(sym);
        let rd = eig.eigenvectors.adjoint() * rdot * &eig.eigenvectors;
        let dim = rho.nrows();
        for a in 0..dim {
            for b in 0..dim {
                let denom = eig.eigenvalues[a] + eig.eigenvalues[b];
                let num = rd[(a, b)].norm_sqr();
                if denom < EIG_FLOOR {
                    floor_weight += num;
                } else {
                    value += 2.0 * num / denom;
                }
            }
        }
    }
    (value, floor_weight)
}

fn crn_paired(plus: &TrajectoryEnsemble, minus: &TrajectoryEnsemble) -> Result<()> {
    if plus.seed != minus.seed || plus.trajectories.len() != minus.trajectories.len() {
        return Err(Error::InvalidArgument(
            "QFI estimation needs ensembles generated with common random numbers".into(),
        ));
    }
    for (p, q) in plus.trajectories.iter().zip(&minus.trajectories) {
        if p.state.total != q.state.total || p.weight != q.weight {
            return Err(Error::InvalidArgument(
                "QFI estimation needs ensembles generated with common random numbers".into(),
            ));
        }
    }
    Ok(())
}

const BOOTSTRAP_RESAMPLES: usize = 50;

/// Quantum Fisher information of the ensemble-average state from a pair of
/// runs at `omega +/- delta`, via central-difference `rho_dot` and the
/// eigendecomposition formula with an eigenvalue floor.
pub fn ensemble_qfi(
    plus: &TrajectoryEnsemble,
    minus: &TrajectoryEnsemble,
    delta: f64,
) -> Result<QfiEstimate> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be > 0, got {delta}"
        )));
    }
    crn_paired(plus, minus)?;
    let qfi_of = |idx: &[usize]| -> f64 {
        let p: Vec<&Trajectory> = idx.iter().map(|&i| &plus.trajectories[i]).collect();
        let q: Vec<&Trajectory> = idx.iter().map(|&i| &minus.trajectories[i]).collect();
        let rp = accumulate_densities(&p, 1.0);
        let rq = accumulate_densities(&q, 1.0);
        let mut bar = BTreeMap::new();
        let mut dot = BTreeMap::new();
        for (m, a) in &rp {
            let b = &rq[m];
            bar.insert(*m, (a + b) * C64::new(0.5, 0.0));
            dot.insert(*m, (a - b) * C64::new(0.5 / delta, 0.0));
        }
        qfi_from_blocks(&bar, &dot).0
    };

    let all: Vec<usize> = (0..plus.trajectories.len()).collect();
    let rp = sector_densities(plus);
    let rq = sector_densities(minus);
    let mut bar = BTreeMap::new();
    let mut dot = BTreeMap::new();
    for (m, a) in &rp {
        let b = &rq[m];
        bar.insert(*m, (a + b) * C64::new(0.5, 0.0));
        dot.insert(*m, (a - b) * C64::new(0.5 / delta, 0.0));
    }
    let (value, floor_weight) = qfi_from_blocks(&bar, &dot);

    // stratified bootstrap: resample within each initial-number stratum so
    // the stratum weights stay fixed
    let mut by_sector: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, tr) in plus.trajectories.iter().enumerate() {
        // stratum key: weight bit pattern groups trajectories that came from
        // the same allocation bucket
        by_sector
            .entry(tr.state.total.max(0))
            .or_default()
            .push(i);
    }
    let statistical_error = if all.len() < 2 {
        0.0
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(plus.seed ^ 0x9E37_79B9_7F4A_7C15);
        let mut samples = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
        for _ in 0..BOOTSTRAP_RESAMPLES {
            let mut idx = Vec::with_capacity(all.len());
            for bucket in by_sector.values() {
                for _ in 0..bucket.len() {
                    idx.push(bucket[rng.gen_range(0..bucket.len())]);
                }
            }
            samples.push(qfi_of(&idx));
        }
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (samples.len() - 1) as f64)
            .sqrt()
    };

    Ok(QfiEstimate {
        value,
        statistical_error,
        fd_step: delta,
        floor_weight,
    })
}

/// Default finite-difference step: keeps the accumulated phase difference
/// far below pi.
pub fn default_fd_step(t_ramsey: f64, n_mean: f64) -> f64 {
    1e-4 / 1.0_f64.max(t_ramsey * n_mean.sqrt())
}

/// Run the protocol at `omega +/- delta` with shared seeds and estimate the
/// QFI of the final state.
pub fn protocol_qfi(spec: &ProtocolSpec, count: usize, seed: u64) -> Result<QfiEstimate> {
    let delta = default_fd_step(spec.t_ramsey, spec.n_mean);
    let plus = run_trajectories(&spec.with_omega(spec.omega + delta), count, seed)?;
    let minus = run_trajectories(&spec.with_omega(spec.omega - delta), count, seed)?;
    ensemble_qfi(&plus, &minus, delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizeMode {
    /// Repeat a short segment of duration t within the budget: score (T/t) F_Q(t).
    ShortSegments,
    /// Single run of the full duration: score F_Q(T).
    SingleShot,
}

#[derive(Debug, Clone)]
pub struct ProtocolFamily {
    pub base: ProtocolSpec,
    pub t_prep_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct OptimizeResult {
    pub t_prep: f64,
    pub t_ramsey: f64,
    pub objective: f64,
}

fn golden_max(mut f: impl FnMut(f64) -> Result<f64>, a0: f64, b0: f64) -> Result<(f64, f64)> {
    let (mut a, mut b) = (a0, b0);
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..25 {
        if b - a < 1e-3 * (b0 - a0).abs() + 1e-12 {
            break;
        }
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2)?;
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x)?;
    Ok((x, fx))
}

/// Grid search with golden-section refinement over preparation time and
/// interrogation time.
pub fn optimize_protocol(
    family: &ProtocolFamily,
    total_time: f64,
    mode: OptimizeMode,
) -> Result<OptimizeResult> {
    if family.t_prep_grid.is_empty() {
        return Err(Error::InvalidArgument("empty preparation-time grid".into()));
    }
    if !(total_time > 0.0) {
        return Err(Error::InvalidArgument("total time must be > 0".into()));
    }
    let t_grid: Vec<f64> = match mode {
        OptimizeMode::SingleShot => vec![total_time],
        OptimizeMode::ShortSegments => family
            .t_grid
            .iter()
            .copied()
            .filter(|&t| t > 0.0 && t <= total_time)
            .collect(),
    };
    if t_grid.is_empty() {
        return Err(Error::InvalidArgument(
            "empty interrogation-time grid".into(),
        ));
    }
    let eval = |tp: f64, t: f64| -> Result<f64> {
        let mut spec = family.base.clone();
        spec.t_prep = tp;
        spec.t_ramsey = t;
        let fq = protocol_qfi(&spec, family.count, family.seed)?.value;
        Ok(match mode {
            OptimizeMode::ShortSegments => total_time / t * fq,
            OptimizeMode::SingleShot => fq,
        })
    };
    let mut best = (family.t_prep_grid[0], t_grid[0], f64::NEG_INFINITY);
    let mut best_idx = (0usize, 0usize);
    for (i, &tp) in family.t_prep_grid.iter().enumerate() {
        for (j, &t) in t_grid.iter().enumerate() {
            let v = eval(tp, t)?;
            if v > best.2 {
                best = (tp, t, v);
                best_idx = (i, j);
            }
        }
    }
    let (mut tp_star, mut t_star, mut obj) = best;
    if t_grid.len() >= 2 {
        let j = best_idx.1;
        let lo = t_grid[j.saturating_sub(1)];
        let hi = t_grid[(j + 1).min(t_grid.len() - 1)];
        if hi > lo {
            let (t_ref, v) = golden_max(|t| eval(tp_star, t), lo, hi)?;
            if v > obj {
                t_star = t_ref;
                obj = v;
            }
        }
    }
    if family.t_prep_grid.len() >= 2 {
        let i = best_idx.0;
        let lo = family.t_prep_grid[i.saturating_sub(1)];
        let hi = family.t_prep_grid[(i + 1).min(family.t_prep_grid.len() - 1)];
        if hi > lo {
            let (tp_ref, v) = golden_max(|tp| eval(tp, t_star), lo, hi)?;
            if v > obj {
                tp_star = tp_ref;
                obj = v;
            }
        }
    }
    Ok(OptimizeResult {
        t_prep: tp_star,
        t_ramsey: t_star,
        objective: obj,
    })
}
