//! Subcommand pipelines and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use tjflow::diagnostics::{
    assemble_linearized, fit_lsi_rows, lopatinskii_shapiro_check, ls_grid, LsiFit,
};
use tjflow::flow::{
    check_admissible, check_h_compatibility, run_flow, snapshot_svg, FlowState, Trajectory,
};
use tjflow::geometry::{energy, herring_residual};
use tjflow::perturbation::compatible_perturbation;
use tjflow::reference_frame::{minimize_with, ReferenceFrame};
use tjflow::variations::assemble_mprime0;
use tjflow::{Anisotropy, Error};

use crate::config::{ConfigError, ExperimentConfig};

/// Failure of a subcommand with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(e: ConfigError) -> Self {
        Self {
            code: 1,
            kind: "config",
            message: e.to_string(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: 1,
            kind: "io",
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::DegenerateMinimizer { .. } | Error::DegenerateAngles(_) => {
                (2, "degenerate_minimizer")
            }
            Error::CollapseDetected { .. } => (3, "collapse"),
            Error::JunctionNewtonDivergence(_)
            | Error::NewtonDivergence(_)
            | Error::StepRejected { .. }
            | Error::SingularFh { .. }
            | Error::MaxStepsExceeded(_)
            | Error::DegenerateCurve { .. }
            | Error::NonMonotoneReparametrization(_)
            | Error::NotConverged(_) => (4, "divergence"),
            Error::InsufficientData(_) | Error::EnergyAtMinimum(_) => (5, "insufficient_data"),
            _ => (1, "invalid_input"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

pub type CmdResult<T> = Result<T, CliError>;

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_hash: String,
    artifacts: Vec<String>,
    versions: Value,
    wall_clock_seconds: f64,
    exit_status: i32,
    summary: Value,
}

/// Collects artifacts written into the output directory.
pub struct Run {
    dir: PathBuf,
    command: &'static str,
    config: ExperimentConfig,
    artifacts: Vec<String>,
    started: Instant,
    quiet: bool,
}

impl Run {
    pub fn new(command: &'static str, config: ExperimentConfig, quiet: bool) -> CmdResult<Self> {
        let dir = PathBuf::from(&config.out_dir);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            command,
            config,
            artifacts: Vec::new(),
            started: Instant::now(),
            quiet,
        })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> CmdResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.push(name.to_string());
        if !self.quiet {
            println!("wrote {}", path.display());
        }
        Ok(())
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> CmdResult<()> {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        self.write(name, &(text + "\n"))
    }

    pub fn finish(mut self, summary: Value) -> CmdResult<()> {
        let toml = self.config.to_toml();
        let hash: String = Sha256::digest(toml.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        self.write("config.toml", &toml)?;
        let mut artifacts = self.artifacts.clone();
        artifacts.push("manifest.json".into());
        let manifest = Manifest {
            command: self.command.into(),
            config_hash: hash,
            artifacts,
            versions: json!({ "tjflow": env!("CARGO_PKG_VERSION") }),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            exit_status: 0,
            summary,
        };
        self.json("manifest.json", &manifest)
    }
}

fn phi_pair(cfg: &ExperimentConfig) -> CmdResult<(Anisotropy, Anisotropy)> {
    let phi = cfg.anisotropy_phi().map_err(CliError::config)?;
    let polar = cfg.anisotropy_polar().map_err(CliError::config)?;
    Ok((phi, polar))
}

fn frame_of(cfg: &ExperimentConfig, phi_polar: &Anisotropy) -> CmdResult<ReferenceFrame> {
    Ok(minimize_with(
        cfg.endpoints(),
        phi_polar,
        cfg.flow.n,
        cfg.frame_options(),
    )?)
}

fn wulff_csv(phi: &Anisotropy, m: usize) -> CmdResult<String> {
    let mut s = String::from("x,y\n");
    for p in phi.wulff_samples(m)? {
        s.push_str(&format!("{},{}\n", p.x, p.y));
    }
    Ok(s)
}

pub fn minimize(cfg: ExperimentConfig, quiet: bool) -> CmdResult<()> {
    let mut run = Run::new("minimize", cfg.clone(), quiet)?;
    let (phi, polar) = phi_pair(&cfg)?;
    let frame = frame_of(&cfg, &polar)?;
    run.write("frame.json", &(frame.to_json() + "\n"))?;
    run.write("gamma_star.json", &(frame.gamma_star().to_json() + "\n"))?;
    run.write("wulff.csv", &wulff_csv(&phi, 256)?)?;
    let herring = herring_residual(frame.gamma_star(), &polar)?.norm();
    if cfg.variations.spectrum {
        let op = assemble_mprime0(&frame, &polar, cfg.variations.n)?;
        run.write("spectrum.csv", &op.spectrum_csv()?)?;
    }
    let summary = json!({
        "herring_residual": herring,
        "energy": energy(frame.gamma_star(), &polar)?,
        "junction": [frame.junction().x, frame.junction().y],
        "theta_star": frame.junction_data().angles,
    });
    run.finish(summary)
}

fn initial_state(
    cfg: &ExperimentConfig,
    frame: &ReferenceFrame,
    polar: &Anisotropy,
) -> CmdResult<FlowState> {
    let spec = cfg.perturbation_spec(frame.min_length());
    let h0 = compatible_perturbation(frame, polar, &spec)?;
    Ok(FlowState::graph(frame, h0)?)
}

fn check_reports(
    frame: &ReferenceFrame,
    polar: &Anisotropy,
    state: &FlowState,
) -> CmdResult<(Value, f64)> {
    let adm = check_admissible(&state.network, frame.endpoints(), polar)?;
    let h = state.h.as_ref().expect("initial state carries h");
    let comp = check_h_compatibility(frame, h, polar)?;
    // κ(0) only vanishes up to the one-sided stencil error, so it is reported, not gated.
    let gated = adm
        .endpoint_residual
        .max(adm.concurrency_residual)
        .max(adm.herring_residual)
        .max(comp.start_residual)
        .max(comp.junction_sum.abs());
    Ok((
        json!({ "admissibility": adm, "compatibility": comp, "gated_residual": gated }),
        gated,
    ))
}

pub fn check(cfg: ExperimentConfig, quiet: bool) -> CmdResult<()> {
    let mut run = Run::new("check", cfg.clone(), quiet)?;
    let (_, polar) = phi_pair(&cfg)?;
    let frame = frame_of(&cfg, &polar)?;
    let state = initial_state(&cfg, &frame, &polar)?;
    let (report, gated) = check_reports(&frame, &polar, &state)?;
    run.json("check.json", &report)?;
    let ok = gated <= cfg.flow.admissibility_tol;
    run.finish(json!({ "gated_residual": gated, "admissible": ok }))
}

pub fn flow(cfg: ExperimentConfig, quiet: bool) -> CmdResult<()> {
    let mut run = Run::new("flow", cfg.clone(), quiet)?;
    let (phi, polar) = phi_pair(&cfg)?;
    let frame = frame_of(&cfg, &polar)?;
    let state = initial_state(&cfg, &frame, &polar)?;
    let (_, gated) = check_reports(&frame, &polar, &state)?;
    if gated > cfg.flow.admissibility_tol {
        return Err(CliError::from(Error::InvalidInput(format!(
            "initial data residual {gated:e} exceeds flow.admissibility_tol"
        ))));
    }
    let traj = run_flow(state, &frame, &polar, cfg.flow.mode, &cfg.flow_options())?;
    run.write("frame.json", &(frame.to_json() + "\n"))?;
    run.write("trajectory.csv", &traj.to_csv())?;
    let wulff = phi.wulff_samples(128)?;
    let mut snaps = Vec::with_capacity(traj.snapshots.len());
    for (k, s) in traj.snapshots.iter().enumerate() {
        let net: Value = serde_json::from_str(&s.network.to_json()).expect("network json parses");
        snaps.push(json!({ "t": s.t, "network": net }));
        run.write(
            &format!("snapshot_{k:04}.svg"),
            &snapshot_svg(&s.network, &wulff, &format!("t = {}", s.t)),
        )?;
    }
    run.json("snapshots.json", &snaps)?;
    let last = traj.rows.last().expect("trajectory has rows");
    let summary = json!({
        "steps": traj.rows.len() - 1,
        "stop": traj.stop,
        "t_final": last.t,
        "energy_star": traj.energy_star,
        "final_energy": last.energy,
        "final_grad_w_norm": last.grad_w_norm,
        "final_max_kappa_phi": last.max_kappa_phi,
    });
    run.finish(summary)
}

/// Convergence summary computed from trajectory rows alone.
#[derive(Serialize)]
struct RowConvergence {
    final_grad_w_norm: f64,
    energy_gap: f64,
    final_max_kappa_phi: f64,
    final_h_c2: f64,
    energy_monotone: bool,
    converged: bool,
}

pub fn diagnose(cfg: ExperimentConfig, trajectory: &Path, quiet: bool) -> CmdResult<()> {
    let text = fs::read_to_string(trajectory).map_err(|e| CliError::io(trajectory, e))?;
    let rows = Trajectory::rows_from_csv(&text)?;
    let mut run = Run::new("diagnose", cfg.clone(), quiet)?;
    let (_, polar) = phi_pair(&cfg)?;
    let frame = frame_of(&cfg, &polar)?;
    let e_star = energy(frame.gamma_star(), &polar)?;
    let mut summary = json!({ "rows": rows.len() });
    if cfg.diagnostics.lsi {
        let fit: LsiFit = fit_lsi_rows(&rows, e_star)?;
        run.write("lsi.json", &(fit.to_json() + "\n"))?;
        summary["theta"] = json!(fit.theta);
    }
    if cfg.diagnostics.lopatinskii_shapiro {
        let ls = assemble_linearized(&frame, &polar)?;
        let rep = lopatinskii_shapiro_check(&ls, &ls_grid())?;
        run.write("ls.csv", &rep.to_csv())?;
        run.json("linearized.json", &ls)?;
        summary["ls_min_abs_det"] = json!(rep.min_abs_det);
    }
    if cfg.diagnostics.convergence {
        let last = rows
            .last()
            .ok_or_else(|| Error::InsufficientData("empty trajectory".into()))?;
        let tol = 1e-10 * rows[0].energy.abs();
        let rep = RowConvergence {
            final_grad_w_norm: last.grad_w_norm,
            energy_gap: (last.energy - e_star).abs(),
            final_max_kappa_phi: last.max_kappa_phi,
            final_h_c2: last.h_c2,
            energy_monotone: rows.windows(2).all(|w| w[1].energy <= w[0].energy + tol),
            converged: last.grad_w_norm < cfg.diagnostics.convergence_floor,
        };
        summary["converged"] = json!(rep.converged);
        run.json("convergence.json", &rep)?;
    }
    run.finish(summary)
}

pub fn wulff(cfg: ExperimentConfig, samples: usize, quiet: bool) -> CmdResult<()> {
    let mut run = Run::new("wulff", cfg.clone(), quiet)?;
    let (phi, _) = phi_pair(&cfg)?;
    let csv = wulff_csv(&phi, samples)?;
    run.write("wulff.csv", &csv)?;
    run.finish(json!({ "samples": samples }))
}
