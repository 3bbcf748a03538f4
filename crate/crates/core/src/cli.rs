//! Command-line surface: TOML configs in, CSV or text reports out.
//!
//! Exit codes: 0 success, 2 config/schema error, 3 infeasible model
//! (Hamiltonian outside the Lindblad span; the residual is printed).

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::bec::{self, CurveSpec, RateModel, TrapKind, TrapSpec};
use crate::bound::{l_star_from_families, scaling_exponent, solve_sdp_with, ScalingTerm, SdpOptions};
use crate::error::Error;
use crate::fock::{annihilation, build_basis, number_op, OperatorMatrix, Sector, SPAN_TOL};
use crate::model::{check_hls, check_hls_operators, TwoModeLossModel};
use crate::qec::{build_paper_code, code_qfi, impossibility_certificate, verify_code, CodeVariant};
use crate::rpn::assemble_two_mode;
use crate::traj::{
    protocol_qfi, NumberDistribution, ProtocolSpec, RateTable, RotationSpec,
};

#[derive(Debug)]
pub enum CliFailure {
    Config(String),
    Infeasible(String),
    Other(String),
}

impl From<Error> for CliFailure {
    fn from(e: Error) -> Self {
        match e {
            Error::Infeasible(msg) => CliFailure::Infeasible(msg),
            other => CliFailure::Other(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliFailure>;

#[derive(Parser, Debug)]
#[command(name = "qmetro", about = "Precision bounds and trajectory simulation for two-mode atom interferometry")]
pub struct Cli {
    /// Path to the TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed; overrides the config for simulation commands.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
pub enum Command {
    /// Test whether the Hamiltonian lies in the Lindblad span.
    CheckHls,
    /// Precision bound for the configured loss model (CSV).
    Bound,
    /// Asymptotic N-exponent of the bound for the configured model.
    Scaling,
    /// Verify the loss-protecting code and the no-go certificate.
    Qec,
    /// Bound versus atom number under a trap rate model (CSV).
    Curve,
    /// Trajectory-ensemble QFI versus interrogation time (CSV).
    Simulate,
    /// Join simulated precision with the fundamental bound (CSV).
    Compare,
}

// ---------------------------------------------------------------- config

fn default_true() -> bool {
    true
}

fn default_subchannel() -> u32 {
    2
}

fn default_kind() -> String {
    "two_mode_loss".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: Option<ModelConfig>,
    pub solver: Option<SolverConfig>,
    pub qec: Option<QecConfig>,
    pub curve: Option<CurveConfig>,
    pub protocol: Option<ProtocolConfig>,
    pub simulate: Option<SimulateConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// "two_mode_loss" (default), "qubit_dephasing" or "qubit_transversal".
    #[serde(default = "default_kind")]
    pub kind: String,
    pub atom_number: Option<u64>,
    #[serde(default = "default_subchannel")]
    pub subchannel: u32,
    #[serde(default = "default_true")]
    pub superselect: bool,
    #[serde(default)]
    pub gamma1_per_s: f64,
    #[serde(default)]
    pub gamma2_per_s: f64,
    #[serde(default)]
    pub gamma11_per_s: f64,
    #[serde(default)]
    pub gamma12_per_s: f64,
    #[serde(default)]
    pub gamma22_per_s: f64,
    /// Noise rate for the qubit kinds.
    pub rate_per_s: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub gap_rel: Option<f64>,
    pub constraint_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QecConfig {
    pub atom_number: u64,
    /// "fixed_number" or "unrestricted".
    pub variant: String,
    pub impossibility: Option<ImpossibilityConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpossibilityConfig {
    pub gamma11_per_s: f64,
    pub gamma12_per_s: f64,
    pub gamma22_per_s: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_code_dim")]
    pub code_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_trials() -> usize {
    1000
}

fn default_code_dim() -> usize {
    2
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    /// "thomas_fermi", "box" or "constant".
    pub rate_model: String,
    pub trap_omega_rad_per_s: Option<f64>,
    pub box_volume_m3: Option<f64>,
    pub scattering_length_m: Option<f64>,
    pub mass_kg: Option<f64>,
    pub k11_m6_per_s: Option<f64>,
    pub k12_m6_per_s: Option<f64>,
    pub k22_m6_per_s: Option<f64>,
    pub gamma11_per_s: Option<f64>,
    pub gamma12_per_s: Option<f64>,
    pub gamma22_per_s: Option<f64>,
    #[serde(default)]
    pub gamma1_per_s: f64,
    #[serde(default)]
    pub gamma2_per_s: f64,
    #[serde(default = "default_subchannel")]
    pub subchannel: u32,
    #[serde(default = "default_true")]
    pub superselect: bool,
    pub atom_numbers: Vec<u64>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    #[serde(default)]
    pub gamma1_per_s: f64,
    #[serde(default)]
    pub gamma2_per_s: f64,
    #[serde(default)]
    pub gamma11_per_s: f64,
    #[serde(default)]
    pub gamma12_per_s: f64,
    #[serde(default)]
    pub gamma22_per_s: f64,
    #[serde(default)]
    pub gamma111_per_s: f64,
    #[serde(default)]
    pub gamma112_per_s: f64,
    #[serde(default)]
    pub gamma122_per_s: f64,
    #[serde(default)]
    pub gamma222_per_s: f64,
}

impl RatesConfig {
    fn to_table(&self) -> RateTable {
        RateTable {
            gamma1: self.gamma1_per_s,
            gamma2: self.gamma2_per_s,
            gamma11: self.gamma11_per_s,
            gamma12: self.gamma12_per_s,
            gamma22: self.gamma22_per_s,
            gamma111: self.gamma111_per_s,
            gamma112: self.gamma112_per_s,
            gamma122: self.gamma122_per_s,
            gamma222: self.gamma222_per_s,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub n_mean: f64,
    /// "fixed" (default) or "poissonian".
    pub distribution: Option<String>,
    #[serde(default)]
    pub chi_rad_per_s: f64,
    #[serde(default)]
    pub chi_tilde_rad_per_s: f64,
    #[serde(default)]
    pub omega_rad_per_s: f64,
    #[serde(default)]
    pub t_prep_s: f64,
    /// "none" (default), "auto", or "fixed" with rotation_angle_rad.
    pub rotation: Option<String>,
    pub rotation_angle_rad: Option<f64>,
    #[serde(default)]
    pub ramsey_chi_rad_per_s: f64,
    #[serde(default)]
    pub ramsey_chi_tilde_rad_per_s: f64,
    #[serde(default)]
    pub prep: RatesConfig,
    #[serde(default)]
    pub ramsey: RatesConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_ramsey_values_s: Vec<f64>,
    pub count: usize,
    pub seed: Option<u64>,
}

fn load_config(path: &PathBuf) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliFailure::Config(format!("cannot read `{}`: {e}", path.display())))?;
    let cfg: RunConfig = toml::from_str(&text)
        .map_err(|e| CliFailure::Config(format!("in `{}`: {e}", path.display())))?;
    if cfg.schema_version != 1 {
        return Err(CliFailure::Config(format!(
            "unsupported schema_version {} (expected 1)",
            cfg.schema_version
        )));
    }
    Ok(cfg)
}

fn require<'a, T>(section: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    section
        .as_ref()
        .ok_or_else(|| CliFailure::Config(format!("missing required [{name}] section")))
}

fn require_field<T: Copy>(field: Option<T>, name: &str) -> CliResult<T> {
    field.ok_or_else(|| CliFailure::Config(format!("missing required key `{name}`")))
}

// ----------------------------------------------------------- conversions

fn two_mode_input(model: &ModelConfig) -> CliResult<TwoModeLossModel> {
    Ok(TwoModeLossModel {
        gamma1: model.gamma1_per_s,
        gamma2: model.gamma2_per_s,
        gamma11: model.gamma11_per_s,
        gamma12: model.gamma12_per_s,
        gamma22: model.gamma22_per_s,
        atom_number: require_field(model.atom_number, "model.atom_number")?,
    })
}

fn sdp_options(solver: &Option<SolverConfig>) -> SdpOptions {
    let mut opts = SdpOptions::default();
    if let Some(s) = solver {
        if let Some(g) = s.gap_rel {
            opts.gap_rel = g;
        }
        if let Some(c) = s.constraint_tol {
            opts.constraint_tol = c;
        }
    }
    opts
}

fn protocol_spec(cfg: &ProtocolConfig) -> CliResult<ProtocolSpec> {
    let distribution = match cfg.distribution.as_deref().unwrap_or("fixed") {
        "fixed" => NumberDistribution::Fixed,
        "poissonian" => NumberDistribution::Poissonian,
        other => {
            return Err(CliFailure::Config(format!(
                "unknown distribution `{other}` (expected fixed|poissonian)"
            )))
        }
    };
    let rotation = match cfg.rotation.as_deref().unwrap_or("none") {
        "none" => RotationSpec::None,
        "auto" => RotationSpec::Auto,
        "fixed" => RotationSpec::Fixed(require_field(
            cfg.rotation_angle_rad,
            "protocol.rotation_angle_rad",
        )?),
        other => {
            return Err(CliFailure::Config(format!(
                "unknown rotation `{other}` (expected none|auto|fixed)"
            )))
        }
    };
    Ok(ProtocolSpec {
        n_mean: cfg.n_mean,
        distribution,
        chi: cfg.chi_rad_per_s,
        chi_tilde: cfg.chi_tilde_rad_per_s,
        omega: cfg.omega_rad_per_s,
        prep_rates: cfg.prep.to_table(),
        ramsey_rates: cfg.ramsey.to_table(),
        ramsey_chi: cfg.ramsey_chi_rad_per_s,
        ramsey_chi_tilde: cfg.ramsey_chi_tilde_rad_per_s,
        t_prep: cfg.t_prep_s,
        t_ramsey: 0.0,
        rotation,
    })
}

fn curve_spec(cfg: &CurveConfig) -> CliResult<CurveSpec> {
    let defaults = bec::rb87_tf_trap(1.0);
    let trap = |kind: TrapKind| -> TrapSpec {
        let k11 = cfg.k11_m6_per_s.unwrap_or(defaults.k_constants[0][0]);
        let k12 = cfg.k12_m6_per_s.unwrap_or(defaults.k_constants[0][1]);
        let k22 = cfg.k22_m6_per_s.unwrap_or(defaults.k_constants[1][1]);
        TrapSpec {
            kind,
            scattering_length: cfg.scattering_length_m.unwrap_or(defaults.scattering_length),
            mass: cfg.mass_kg.unwrap_or(defaults.mass),
            k_constants: [[k11, k12], [k12, k22]],
        }
    };
    let rate_model = match cfg.rate_model.as_str() {
        "thomas_fermi" => RateModel::ThomasFermi(trap(TrapKind::SphericalHarmonicTf {
            omega: require_field(cfg.trap_omega_rad_per_s, "curve.trap_omega_rad_per_s")?,
        })),
        "box" => RateModel::BoxTrap(trap(TrapKind::Box {
            volume: require_field(cfg.box_volume_m3, "curve.box_volume_m3")?,
        })),
        "constant" => RateModel::Constant {
            g11: require_field(cfg.gamma11_per_s, "curve.gamma11_per_s")?,
            g12: require_field(cfg.gamma12_per_s, "curve.gamma12_per_s")?,
            g22: require_field(cfg.gamma22_per_s, "curve.gamma22_per_s")?,
        },
        other => {
            return Err(CliFailure::Config(format!(
                "unknown rate_model `{other}` (expected thomas_fermi|box|constant)"
            )))
        }
    };
    Ok(CurveSpec {
        rate_model,
        gamma1: cfg.gamma1_per_s,
        gamma2: cfg.gamma2_per_s,
        subchannel: cfg.subchannel,
        superselect: cfg.superselect,
    })
}

// -------------------------------------------------------------- commands

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| CliFailure::Other(e.to_string()))?;
    for row in rows {
        w.write_record(row)
            .map_err(|e| CliFailure::Other(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliFailure::Other(e.to_string()))
}

fn cmd_check_hls(cfg: &RunConfig) -> CliResult<Vec<u8>> {
    let model = require(&cfg.model, "model")?;
    let report = match model.kind.as_str() {
        "two_mode_loss" => {
            let input = two_mode_input(model)?;
            let built = crate::model::build_two_mode_model(&input, model.superselect, model.subchannel)?;
            check_hls(&built)?
        }
        kind @ ("qubit_dephasing" | "qubit_transversal") => {
            let rate = require_field(model.rate_per_s, "model.rate_per_s")?;
            let h = OperatorMatrix::new(
                crate::fock::CMat::from_row_slice(2, 2, &[
                    (0.5).into(), 0.0.into(),
                    0.0.into(), (-0.5).into(),
                ]),
                "qubit",
            )?;
            let pauli = if kind == "qubit_dephasing" {
                crate::fock::CMat::from_row_slice(2, 2, &[
                    1.0.into(), 0.0.into(),
                    0.0.into(), (-1.0).into(),
                ])
            } else {
                crate::fock::CMat::from_row_slice(2, 2, &[
                    0.0.into(), 1.0.into(),
                    1.0.into(), 0.0.into(),
                ])
            };
            let l = OperatorMatrix::new(pauli, "qubit")?.scale_re(rate.sqrt());
            check_hls_operators(&h, &[&l], None)?
        }
        other => {
            return Err(CliFailure::Config(format!(
                "unknown model kind `{other}`"
            )))
        }
    };
    let mut out = String::new();
    out.push_str(&format!("hls_satisfied: {}\n", report.satisfied));
    out.push_str(&format!("residual: {}\n", report.residual));
    out.push_str(&format!("tolerance: {SPAN_TOL}\n"));
    if report.satisfied {
        out.push_str("note: HLS satisfied; precision is bounded linearly in T\n");
    } else {
        out.push_str("note: HLS not satisfied; T^2 regime reachable\n");
    }
    Ok(out.into_bytes())
}

fn cmd_bound(cfg: &RunConfig) -> CliResult<Vec<u8>> {
    let model = require(&cfg.model, "model")?;
    if model.kind != "two_mode_loss" {
        return Err(CliFailure::Config(
            "the bound command needs model.kind = \"two_mode_loss\"".into(),
        ));
    }
    let input = two_mode_input(model)?;
    let channel = assemble_two_mode(&input, model.subchannel, model.superselect)?;
    let res = solve_sdp_with(&channel.model, channel.subchannel_count, &sdp_options(&cfg.solver))?;
    let row = vec![
        input.atom_number.to_string(),
        model.subchannel.to_string(),
        input.gamma1.to_string(),
        input.gamma2.to_string(),
        input.gamma11.to_string(),
        input.gamma12.to_string(),
        input.gamma22.to_string(),
        res.fq_per_time.to_string(),
        res.duality_gap.to_string(),
    ];
    csv_bytes(
        &[
            "atom_number",
            "subchannel",
            "gamma1_per_s",
            "gamma2_per_s",
            "gamma11_per_s",
            "gamma12_per_s",
            "gamma22_per_s",
            "fq_per_time",
            "duality_gap",
        ],
        &[row],
    )
}

fn cmd_scaling(cfg: &RunConfig) -> CliResult<Vec<u8>> {
    let model = require(&cfg.model, "model")?;
    if model.kind != "two_mode_loss" {
        return Err(CliFailure::Config(
            "the scaling command needs model.kind = \"two_mode_loss\"".into(),
        ));
    }
    let input = two_mode_input(model)?;
    let built = crate::model::build_two_mode_model(&input, model.superselect, model.subchannel)?;
    let h = built.total_hamiltonian()?;
    let l_star = l_star_from_families(&h, &built.noise_families, built.input_projector.as_ref())?;
    let exp = scaling_exponent(&[ScalingTerm { k: 1, l_star }])?;
    let mut out = String::new();
    out.push_str(&format!("k_star: {}\n", exp.k_star));
    match exp.l_star {
        Some(l) => out.push_str(&format!("l_star: {l}\n")),
        None => out.push_str("l_star: none\n"),
    }
    out.push_str(&format!("exponent: {}\n", exp.exponent));
    out.push_str(&format!("heisenberg: {}\n", exp.heisenberg));
    Ok(out.into_bytes())
}

fn cmd_qec(cfg: &RunConfig, seed: Option<u64>) -> CliResult<Vec<u8>> {
    let qec = require(&cfg.qec, "qec")?;
    let variant = match qec.variant.as_str() {
        "fixed_number" => CodeVariant::Gamma11Only,
        "unrestricted" => CodeVariant::UnrestrictedSuperposition,
        other => {
            return Err(CliFailure::Config(format!(
                "unknown qec variant `{other}` (expected fixed_number|unrestricted)"
            )))
        }
    };
    let n = qec.atom_number;
    let code = build_paper_code(n, variant)?;
    let max_total = match variant {
        CodeVariant::Gamma11Only => n as u32,
        CodeVariant::UnrestrictedSuperposition => (n + n / 2) as u32,
    };
    let basis = build_basis(2, max_total, Sector::AtMost)?;
    let a1 = annihilation(&basis, 0)?;
    let a2 = annihilation(&basis, 1)?;
    let losses: Vec<OperatorMatrix> = match variant {
        CodeVariant::Gamma11Only => vec![a1.matmul(&a1)?],
        CodeVariant::UnrestrictedSuperposition => vec![
            a1.matmul(&a1)?,
            a1.matmul(&a2)?,
            a2.matmul(&a2)?,
        ],
    };
    let loss_refs: Vec<&OperatorMatrix> = losses.iter().collect();
    let n1 = number_op(&basis, 0)?;
    let n2 = number_op(&basis, 1)?;
    let h = n1.sub(&n2)?.scale_re(0.5);
    let report = verify_code(&code, &loss_refs, &h)?;
    let mut out = String::new();
    out.push_str(&format!("atom_number: {n}\n"));
    out.push_str(&format!("variant: {}\n", qec.variant));
    out.push_str(&format!("correctable: {}\n", report.correctable));
    out.push_str(&format!("logical_action_nontrivial: {}\n", report.nontrivial));
    out.push_str(&format!("worst_violation: {}\n", report.worst_violation));
    out.push_str(&format!("code_qfi_at_unit_time: {}\n", code_qfi(n, 1.0)?));
    if let Some(imp) = &qec.impossibility {
        let cert = impossibility_certificate(
            imp.gamma11_per_s,
            imp.gamma22_per_s,
            imp.gamma12_per_s,
            n,
            imp.code_dim,
            imp.trials,
            seed.unwrap_or(imp.seed),
        )?;
        out.push_str(&format!("impossibility_forced_trivial: {}\n", cert.forced_trivial));
        out.push_str(&format!(
            "impossibility_span_residual: {}\n",
            cert.evidence.span_residual
        ));
        out.push_str(&format!(
            "impossibility_search_trials: {}\n",
            cert.evidence.search_trials
        ));
        out.push_str(&format!(
            "impossibility_counterexample_found: {}\n",
            cert.evidence.counterexample_found
        ));
    }
    Ok(out.into_bytes())
}

fn cmd_curve(cfg: &RunConfig) -> CliResult<Vec<u8>> {
    let curve = require(&cfg.curve, "curve")?;
    if curve.atom_numbers.is_empty() {
        return Err(CliFailure::Config("curve.atom_numbers must be non-empty".into()));
    }
    let spec = curve_spec(curve)?;
    let points = bec::qfi_vs_n_curve(&spec, &curve.atom_numbers)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.atom_number.to_string(),
                p.gamma11.to_string(),
                p.gamma12.to_string(),
                p.gamma22.to_string(),
                p.fq_per_time.to_string(),
            ]
        })
        .collect();
    csv_bytes(
        &[
            "atom_number",
            "gamma11_per_s",
            "gamma12_per_s",
            "gamma22_per_s",
            "fq_per_time",
        ],
        &rows,
    )
}

fn simulate_rows(
    cfg: &RunConfig,
    seed: Option<u64>,
) -> CliResult<Vec<(f64, crate::traj::QfiEstimate)>> {
    let protocol = require(&cfg.protocol, "protocol")?;
    let sim = require(&cfg.simulate, "simulate")?;
    let seed = seed.or(sim.seed).ok_or_else(|| {
        CliFailure::Config("simulation needs a seed (--seed or simulate.seed)".into())
    })?;
    if sim.t_ramsey_values_s.is_empty() {
        return Err(CliFailure::Config(
            "simulate.t_ramsey_values_s must be non-empty".into(),
        ));
    }
    let base = protocol_spec(protocol)?;
    let mut rows = Vec::new();
    for &t in &sim.t_ramsey_values_s {
        let mut spec = base.clone();
        spec.t_ramsey = t;
        let est = protocol_qfi(&spec, sim.count, seed)?;
        rows.push((t, est));
    }
    Ok(rows)
}

fn cmd_simulate(cfg: &RunConfig, seed: Option<u64>) -> CliResult<Vec<u8>> {
    let rows = simulate_rows(cfg, seed)?;
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|(t, est)| {
            vec![
                t.to_string(),
                est.value.to_string(),
                est.statistical_error.to_string(),
                est.fd_step.to_string(),
                (1.0 / est.value.sqrt()).to_string(),
            ]
        })
        .collect();
    csv_bytes(
        &["t_ramsey_s", "fq", "fq_error", "fd_step", "delta_omega"],
        &records,
    )
}

fn cmd_compare(cfg: &RunConfig, seed: Option<u64>) -> CliResult<Vec<u8>> {
    let model = require(&cfg.model, "model")?;
    let input = two_mode_input(model)?;
    let channel = assemble_two_mode(&input, model.subchannel, model.superselect)?;
    let bound = solve_sdp_with(&channel.model, channel.subchannel_count, &sdp_options(&cfg.solver))?;
    let t_prep = require(&cfg.protocol, "protocol")?.t_prep_s;
    let rows = simulate_rows(cfg, seed)?;
    let records: Vec<Vec<String>> = rows
        .iter()
        .map(|(t, est)| {
            let fq_bound = bound.fq_per_time * (t + t_prep);
            vec![
                t.to_string(),
                est.value.to_string(),
                est.statistical_error.to_string(),
                fq_bound.to_string(),
                (1.0 / est.value.sqrt()).to_string(),
                (1.0 / fq_bound.sqrt()).to_string(),
            ]
        })
        .collect();
    csv_bytes(
        &[
            "t_ramsey_s",
            "fq_sim",
            "fq_sim_error",
            "fq_bound",
            "delta_omega_sim",
            "delta_omega_bound",
        ],
        &records,
    )
}

// -------------------------------------------------------------- dispatch

pub fn execute(cli: &Cli) -> CliResult<Vec<u8>> {
    let cfg = load_config(&cli.config)?;
    if cli.verbose {
        eprintln!("loaded config `{}`", cli.config.display());
    }
    match cli.command {
        Command::CheckHls => cmd_check_hls(&cfg),
        Command::Bound => cmd_bound(&cfg),
        Command::Scaling => cmd_scaling(&cfg),
        Command::Qec => cmd_qec(&cfg, cli.seed),
        Command::Curve => cmd_curve(&cfg),
        Command::Simulate => cmd_simulate(&cfg, cli.seed),
        Command::Compare => cmd_compare(&cfg, cli.seed),
    }
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(bytes) => {
            let res = match &cli.out {
                Some(path) => std::fs::write(path, &bytes).map_err(|e| e.to_string()),
                None => std::io::stdout()
                    .write_all(&bytes)
                    .map_err(|e| e.to_string()),
            };
            match res {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: cannot write output: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Err(CliFailure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(CliFailure::Infeasible(msg)) => {
            eprintln!("infeasible: {msg}");
            ExitCode::from(3)
        }
        Err(CliFailure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> std::result::Result<RunConfig, toml::de::Error> {
        toml::from_str(text)
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_named() {
        let err = parse("schema_version = 1\n[model]\natom_number = 4\nbogus = 2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn wrong_schema_version_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "schema_version = 9\n").unwrap();
        match load_config(&path) {
            Err(CliFailure::Config(msg)) => assert!(msg.contains("schema_version")),
            other => panic!("expected config failure, got {other:?}"),
        }
    }

    #[test]
    fn bound_command_emits_symmetric_two_body_row() {
        let cfg = parse(
            "schema_version = 1\n\
             [model]\n\
             atom_number = 2000\n\
             gamma11_per_s = 1.0\n\
             gamma12_per_s = 1.0\n\
             gamma22_per_s = 1.0\n",
        )
        .unwrap();
        let bytes = cmd_bound(&cfg).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "atom_number,subchannel,gamma1_per_s,gamma2_per_s,gamma11_per_s,gamma12_per_s,gamma22_per_s,fq_per_time,duality_gap"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        let fq: f64 = row[7].parse().unwrap();
        assert!((fq - 1.0).abs() < 0.05, "fq_per_time {fq}");
    }

    #[test]
    fn scaling_reports_two_body_noise_exponent_zero() {
        let cfg = parse(
            "schema_version = 1\n\
             [model]\n\
             atom_number = 100\n\
             superselect = true\n\
             gamma1_per_s = 0.1\n\
             gamma11_per_s = 1.0\n\
             gamma12_per_s = 0.5\n",
        )
        .unwrap();
        let text = String::from_utf8(cmd_scaling(&cfg).unwrap()).unwrap();
        assert!(text.contains("l_star: 2"), "{text}");
        assert!(text.contains("exponent: 0"), "{text}");
        assert!(text.contains("heisenberg: false"), "{text}");
    }

    #[test]
    fn check_hls_flags_transversal_qubit_noise() {
        let cfg = parse(
            "schema_version = 1\n\
             [model]\n\
             kind = \"qubit_transversal\"\n\
             rate_per_s = 0.5\n",
        )
        .unwrap();
        let text = String::from_utf8(cmd_check_hls(&cfg).unwrap()).unwrap();
        assert!(text.contains("hls_satisfied: false"), "{text}");
        assert!(text.contains("T^2 regime reachable"), "{text}");

        let cfg = parse(
            "schema_version = 1\n\
             [model]\n\
             kind = \"qubit_dephasing\"\n\
             rate_per_s = 0.5\n",
        )
        .unwrap();
        let text = String::from_utf8(cmd_check_hls(&cfg).unwrap()).unwrap();
        assert!(text.contains("hls_satisfied: true"), "{text}");
    }

    #[test]
    fn simulate_requires_a_seed() {
        let cfg = parse(
            "schema_version = 1\n\
             [protocol]\n\
             n_mean = 4\n\
             [simulate]\n\
             t_ramsey_values_s = [0.5]\n\
             count = 2\n",
        )
        .unwrap();
        match cmd_simulate(&cfg, None) {
            Err(CliFailure::Config(msg)) => assert!(msg.contains("seed")),
            other => panic!("expected config failure, got {other:?}"),
        }
    }

    #[test]
    fn simulate_output_is_deterministic_given_seed() {
        let cfg_text = "schema_version = 1\n\
             [protocol]\n\
             n_mean = 5\n\
             omega_rad_per_s = 0.4\n\
             [protocol.ramsey]\n\
             gamma1_per_s = 0.3\n\
             [simulate]\n\
             t_ramsey_values_s = [0.3, 0.7]\n\
             count = 50\n";
        let cfg1 = parse(cfg_text).unwrap();
        let cfg2 = parse(cfg_text).unwrap();
        let a = cmd_simulate(&cfg1, Some(7)).unwrap();
        let b = cmd_simulate(&cfg2, Some(7)).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("t_ramsey_s,fq,fq_error,fd_step,delta_omega"));
        // every emitted number parses back
        for line in text.lines().skip(1) {
            for field in line.split(',') {
                field.parse::<f64>().unwrap();
            }
        }
    }

    #[test]
    fn infeasible_model_maps_to_the_infeasible_failure() {
        // noiseless model: nothing spans the Hamiltonian
        let cfg = parse(
            "schema_version = 1\n\
             [model]\n\
             atom_number = 10\n\
             subchannel = 2\n",
        )
        .unwrap();
        match cmd_bound(&cfg) {
            Err(CliFailure::Infeasible(msg)) => {
                assert!(msg.contains("residual"), "{msg}")
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
