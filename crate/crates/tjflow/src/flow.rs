//! Time stepping of the anisotropic curve shortening flow.
//!
//! Two formulations share the junction treatment. The parametric special
//! flow moves every node by u_t = m u_xx/|u_x|² with the mobility
//! m = φ°(ν)(D²φ°(ν)τ·τ). The graph flow evolves the height field h over a
//! reference frame by F_h ∂_t h = m κ_h. Both are semi-implicit: the second
//! derivative is implicit with coefficients frozen at the old time level, so
//! every curve needs one tridiagonal solve per step. The solution of that
//! solve is affine in the unknown junction data, and the Herring condition,
//! evaluated with one-sided second-order end tangents, closes the system
//! through a two-dimensional Newton iteration.

use serde::{Deserialize, Serialize};

use crate::anisotropy::Anisotropy;
use crate::error::{Error, Result};
use crate::geometry::{anisotropic_curvature, energy, herring_residual, DiscreteCurve, Network};
use crate::linalg::{d1, d2, solve_tridiagonal};
use crate::reference_frame::{graph_reparametrize, reconstruct, HeightField, ReferenceFrame};
use crate::variations::{gradient_m, w_norm};
use crate::{rot90, Mat2, Mat3, Vec2, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowMode {
    Parametric,
    Graph,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    pub dt: f64,
    pub t_end: f64,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub max_halvings: u32,
    /// Accepted steps satisfy E_new ≤ E_old + energy_tol·E_old.
    pub energy_tol: f64,
    /// Every this many accepted steps a snapshot is stored.
    pub snapshot_stride: usize,
    /// Runs stop once ‖𝓜‖_W drops below this; `None` means 1e-9·(1 + E(Γ*)).
    pub stationarity_floor: Option<f64>,
    /// Collapse is reported when a curve is shorter than this fraction of its initial length.
    pub collapse_fraction: f64,
    /// Smallest |det F_h| accepted in graph mode.
    pub fh_floor: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            dt: 2e-4,
            t_end: 0.2,
            newton_tol: 1e-12,
            newton_max_iters: 50,
            max_halvings: 10,
            energy_tol: 1e-10,
            snapshot_stride: 10,
            stationarity_floor: None,
            collapse_fraction: 0.01,
            fh_floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub network: Network,
    /// Present in graph mode.
    pub h: Option<HeightField>,
}

impl FlowState {
    pub fn parametric(network: Network) -> Self {
        Self {
            t: 0.0,
            network,
            h: None,
        }
    }

    pub fn graph(frame: &ReferenceFrame, h: HeightField) -> Result<Self> {
        Ok(Self {
            t: 0.0,
            network: reconstruct(frame, &h)?,
            h: Some(h),
        })
    }
}

fn sup_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Residuals of the geometric admissibility conditions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub endpoint_residual: f64,
    pub concurrency_residual: f64,
    pub herring_residual: f64,
    /// max_i |κ_φ^i(0)|.
    pub kappa_phi_start: f64,
    /// The λ-balance condition has no available formula.
    pub condition5: &'static str,
}

impl AdmissibilityReport {
    pub fn max_residual(&self) -> f64 {
        self.endpoint_residual
            .max(self.concurrency_residual)
            .max(self.herring_residual)
            .max(self.kappa_phi_start)
    }
}

/// Checks pinned endpoints, concurrency, the Herring condition and κ_φ(0) = 0.
pub fn check_admissible(
    net: &Network,
    endpoints: &[Vec2; 3],
    phi_polar: &Anisotropy,
) -> Result<AdmissibilityReport> {
    let endpoint_residual = (0..3)
        .map(|i| (net.curve(i).first() - endpoints[i]).norm())
        .fold(0.0, f64::max);
    let mut kappa_phi_start: f64 = 0.0;
    for c in net.curves() {
        kappa_phi_start = kappa_phi_start.max(anisotropic_curvature(c, phi_polar)?[0].abs());
    }
    Ok(AdmissibilityReport {
        endpoint_residual,
        concurrency_residual: net.concurrency_residual(),
        herring_residual: herring_residual(net, phi_polar)?.norm(),
        kappa_phi_start,
        condition5: "not checkable",
    })
}

/// Residuals of the analytic compatibility conditions for graph-mode data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatibilityReport {
    /// max_i |h^i(0)|.
    pub start_residual: f64,
    /// Σ α̃*^i h^i(1), signed.
    pub junction_sum: f64,
    pub herring_residual: f64,
    /// max_i |κ^i_h(0)|.
    pub kappa_start: f64,
    /// Σ α̃*^i (F_h⁻¹ m κ_h)^i at x = 1, signed.
    pub junction_velocity: f64,
}

impl CompatibilityReport {
    pub fn max_residual(&self) -> f64 {
        self.start_residual
            .max(self.junction_sum.abs())
            .max(self.herring_residual)
            .max(self.kappa_start)
            .max(self.junction_velocity.abs())
    }
}

/// Nodewise quantities of the graph Γ_h in frame coordinates.
struct GraphCoefficients {
    /// F_h⁻¹(mκ) per node.
    velocity: Vec<Vec3>,
    /// Diagonal of F_h⁻¹ diag(m/J³)(diag(L+μ′) − diag(h′)𝓘), the implicit coefficient of h″.
    principal: Vec<Vec3>,
    kappa: Vec<Vec3>,
    h2: [Vec<f64>; 3],
}

fn graph_coefficients(
    frame: &ReferenceFrame,
    h: &HeightField,
    phi_polar: &Anisotropy,
    fh_floor: f64,
) -> Result<GraphCoefficients> {
    let n = h.nodes();
    let dx = h.dx();
    let im = *frame.i_matrix();
    let c = h.components();
    let h1 = [d1(&c[0], dx), d1(&c[1], dx), d1(&c[2], dx)];
    let h2 = [d2(&c[0], dx), d2(&c[1], dx), d2(&c[2], dx)];
    let (nu, tau, len) = (frame.nu(), frame.tau(), frame.lengths());
    let mut out = GraphCoefficients {
        velocity: Vec::with_capacity(n),
        principal: Vec::with_capacity(n),
        kappa: Vec::with_capacity(n),
        h2: h2.clone(),
    };
    for j in 0..n {
        let s = Vec3::new(h1[0][j], h1[1][j], h1[2][j]);
        let ss = Vec3::new(h2[0][j], h2[1][j], h2[2][j]);
        let mu1 = im * s;
        let mu2 = im * ss;
        let mut f = Mat3::zeros();
        let mut a = Mat3::zeros();
        let mut mk = Vec3::zeros();
        let mut kap = Vec3::zeros();
        for i in 0..3 {
            let along = len[i] + mu1[i];
            let across = s[i];
            let jac = along.hypot(across);
            if !(jac >= crate::geometry::SPEED_FLOOR) {
                return Err(Error::DegenerateCurve {
                    curve: i,
                    node: j,
                    speed: jac,
                });
            }
            let nu_h = (nu[i] * along - tau[i] * across) / jac;
            let tau_h = (tau[i] * along + nu[i] * across) / jac;
            let m = phi_polar.mobility_weight(nu_h, tau_h)?;
            kap[i] = (along * ss[i] - across * mu2[i]) / jac.powi(3);
            mk[i] = m * kap[i];
            f[(i, i)] = along / jac;
            for k in 0..3 {
                f[(i, k)] -= across / jac * im[(i, k)];
                a[(i, k)] = -across * im[(i, k)] * m / jac.powi(3);
            }
            a[(i, i)] += along * m / jac.powi(3);
        }
        let det = f.determinant();
        if !(det.abs() >= fh_floor) {
            return Err(Error::SingularFh { node: j, det });
        }
        let finv = f.try_inverse().ok_or(Error::SingularFh { node: j, det })?;
        out.velocity.push(finv * mk);
        let b = finv * a;
        out.principal
            .push(Vec3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]));
        out.kappa.push(kap);
    }
    Ok(out)
}

/// Residuals of the compatibility conditions of the height-function system.
pub fn check_h_compatibility(
    frame: &ReferenceFrame,
    h0: &HeightField,
    phi_polar: &Anisotropy,
) -> Result<CompatibilityReport> {
    let coeffs = graph_coefficients(frame, h0, phi_polar, FlowOptions::default().fh_floor)?;
    let n = h0.nodes();
    let w = frame.weights();
    let v = coeffs.velocity[n - 1];
    let net = reconstruct(frame, h0)?;
    Ok(CompatibilityReport {
        start_residual: h0.start_residual(),
        junction_sum: h0.junction_sum(w),
        herring_residual: herring_residual(&net, phi_polar)?.norm(),
        kappa_start: sup_abs(coeffs.kappa[0].iter().copied()),
        junction_velocity: w[0] * v[0] + w[1] * v[1] + w[2] * v[2],
    })
}

/// Solves (I − dt·c δ²/dx²)u = rhs on the interior with u_0 = `start` and
/// u_{N−1} = 0, and separately with u_0 = 0, u_{N−1} = 1. Returns both
/// solutions including the end values.
fn implicit_sweep(coef: &[f64], rhs: &[f64], start: f64) -> (Vec<f64>, Vec<f64>) {
    let n = coef.len();
    let m = n - 2;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut r_a = vec![0.0; m];
    let mut r_b = vec![0.0; m];
    for k in 0..m {
        let j = k + 1;
        lower[k] = -coef[j];
        upper[k] = -coef[j];
        diag[k] = 1.0 + 2.0 * coef[j];
        r_a[k] = rhs[j];
    }
    r_a[0] += coef[1] * start;
    r_b[m - 1] = coef[n - 2];
    let a = solve_tridiagonal(&lower, &diag, &upper, &r_a);
    let b = solve_tridiagonal(&lower, &diag, &upper, &r_b);
    let mut full_a = Vec::with_capacity(n);
    full_a.push(start);
    full_a.extend(a);
    full_a.push(0.0);
    let mut full_b = Vec::with_capacity(n);
    full_b.push(0.0);
    full_b.extend(b);
    full_b.push(1.0);
    (full_a, full_b)
}

/// Damped Newton on a two-dimensional system.
fn newton2(
    mut x: Vec2,
    f: impl Fn(Vec2) -> Result<(Vec2, Mat2)>,
    tol: f64,
    max_iters: usize,
) -> Result<Vec2> {
    let (mut r, mut jac) = f(x)?;
    for _ in 0..max_iters {
        if r.norm() <= tol {
            return Ok(x);
        }
        let step = jac
            .try_inverse()
            .ok_or(Error::JunctionNewtonDivergence(r.norm()))?
            * (-r);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = x + step * t;
            if let Ok((rt, jt)) = f(trial) {
                if rt.norm() < r.norm() {
                    x = trial;
                    r = rt;
                    jac = jt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if r.norm() <= 1e2 * tol {
                return Ok(x);
            }
            return Err(Error::JunctionNewtonDivergence(r.norm()));
        }
    }
    if r.norm() <= tol {
        Ok(x)
    } else {
        Err(Error::JunctionNewtonDivergence(r.norm()))
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!(
            "time step must be positive, got {dt}"
        )));
    }
    Ok(())
}

/// One semi-implicit step of the special flow, without energy control.
fn special_flow_trial(
    net: &Network,
    phi_polar: &Anisotropy,
    dt: f64,
    opts: &FlowOptions,
) -> Result<Network> {
    let n = net.nodes();
    let dx = 1.0 / (n - 1) as f64;
    // Per curve the new nodes are a_j + c_j Σ with Σ the new junction.
    let mut base: Vec<Vec<Vec2>> = Vec::with_capacity(3);
    let mut lin: Vec<Vec<f64>> = Vec::with_capacity(3);
    for (i, c) in net.curves().iter().enumerate() {
        let (tau, nu) = crate::geometry::frames_labelled(c, i)?;
        let g1 = c.derivative();
        let mut coef = Vec::with_capacity(n);
        for j in 0..n {
            coef.push(
                phi_polar.mobility_weight(nu[j], tau[j])? / g1[j].norm_squared() * dt / (dx * dx),
            );
        }
        let pts = c.points();
        let xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.y).collect();
        let start = net.endpoints()[i];
        let (ax, cj) = implicit_sweep(&coef, &xs, start.x);
        let (ay, _) = implicit_sweep(&coef, &ys, start.y);
        base.push(ax.iter().zip(&ay).map(|(x, y)| Vec2::new(*x, *y)).collect());
        lin.push(cj);
    }
    // End tangent 3u_{N−1} − 4u_{N−2} + u_{N−3} = k Σ + q.
    let k: Vec<f64> = lin
        .iter()
        .map(|c| 3.0 - 4.0 * c[n - 2] + c[n - 3])
        .collect();
    let q: Vec<Vec2> = base.iter().map(|a| -a[n - 2] * 4.0 + a[n - 3]).collect();
    let herring = |s: Vec2| -> Result<(Vec2, Mat2)> {
        let mut r = Vec2::zeros();
        let mut jac = Mat2::zeros();
        let rot = Mat2::new(0.0, -1.0, 1.0, 0.0);
        for i in 0..3 {
            let nrm = rot90(s * k[i] + q[i]);
            r += phi_polar.grad(nrm)?;
            jac += phi_polar.hess(nrm)? * rot * k[i];
        }
        Ok((r, jac))
    };
    let sigma = newton2(
        net.junction(),
        herring,
        opts.newton_tol,
        opts.newton_max_iters,
    )?;
    let curves: Vec<DiscreteCurve> = (0..3)
        .map(|i| {
            let mut pts: Vec<Vec2> = base[i]
                .iter()
                .zip(&lin[i])
                .map(|(a, c)| a + sigma * *c)
                .collect();
            pts[0] = net.endpoints()[i];
            pts[n - 1] = sigma;
            DiscreteCurve::new(pts)
        })
        .collect::<Result<_>>()?;
    let out = Network::new(
        [curves[0].clone(), curves[1].clone(), curves[2].clone()],
        *net.endpoints(),
    )?;
    out.check_regular()?;
    Ok(out)
}

/// Retries `trial` with halved steps until the energy does not increase.
fn controlled_step<T>(
    dt: f64,
    opts: &FlowOptions,
    e_old: f64,
    mut trial: impl FnMut(f64) -> Result<(T, f64)>,
) -> Result<(T, f64)> {
    let mut h = dt;
    let mut increase = 0.0;
    for _ in 0..=opts.max_halvings {
        match trial(h) {
            Ok((state, e_new)) => {
                if e_new <= e_old + opts.energy_tol * e_old.abs() {
                    return Ok((state, h));
                }
                increase = e_new - e_old;
            }
            Err(
                e @ (Error::JunctionNewtonDivergence(_)
                | Error::DegenerateCurve { .. }
                | Error::SingularFh { .. }),
            ) => {
                if h < dt * 0.5f64.powi(opts.max_halvings as i32 - 1) {
                    return Err(e);
                }
            }
            Err(e) => return Err(e),
        }
        h *= 0.5;
    }
    Err(Error::StepRejected {
        halvings: opts.max_halvings,
        increase,
    })
}

/// One step of the parametric special flow with energy control.
pub fn special_flow_step(
    state: &FlowState,
    phi_polar: &Anisotropy,
    dt: f64,
    opts: &FlowOptions,
) -> Result<FlowState> {
    check_dt(dt)?;
    let e_old = energy(&state.network, phi_polar)?;
    let (network, taken) = controlled_step(dt, opts, e_old, |h| {
        let net = special_flow_trial(&state.network, phi_polar, h, opts)?;
        let e = energy(&net, phi_polar)?;
        Ok((net, e))
    })?;
    Ok(FlowState {
        t: state.t + taken,
        network,
        h: None,
    })
}

/// One semi-implicit step of the height-function system, without energy control.
fn h_flow_trial(
    frame: &ReferenceFrame,
    h: &HeightField,
    phi_polar: &Anisotropy,
    dt: f64,
    opts: &FlowOptions,
) -> Result<HeightField> {
    let n = h.nodes();
    let dx = h.dx();
    let coeffs = graph_coefficients(frame, h, phi_polar, opts.fh_floor)?;
    let mut base: Vec<Vec<f64>> = Vec::with_capacity(3);
    let mut lin: Vec<Vec<f64>> = Vec::with_capacity(3);
    for i in 0..3 {
        let hi = h.component(i);
        let coef: Vec<f64> = (0..n)
            .map(|j| coeffs.principal[j][i] * dt / (dx * dx))
            .collect();
        let rhs: Vec<f64> = (0..n)
            .map(|j| {
                hi[j] + dt * (coeffs.velocity[j][i] - coeffs.principal[j][i] * coeffs.h2[i][j])
            })
            .collect();
        let (a, b) = implicit_sweep(&coef, &rhs, 0.0);
        base.push(a);
        lin.push(b);
    }
    let w = frame.weights();
    let im = frame.i_matrix();
    let (nu, tau, len) = (frame.nu(), frame.tau(), frame.lengths());
    // End slopes s_i = s0_i + σ_i e_i from the one-sided stencil.
    let s0: Vec<f64> = (0..3)
        .map(|i| (-4.0 * base[i][n - 2] + base[i][n - 3]) / (2.0 * dx))
        .collect();
    let sig: Vec<f64> = (0..3)
        .map(|i| (3.0 - 4.0 * lin[i][n - 2] + lin[i][n - 3]) / (2.0 * dx))
        .collect();
    let ends = |e: Vec2| Vec3::new(e.x, e.y, -(w[0] * e.x + w[1] * e.y) / w[2]);
    let de = [
        Vec3::new(1.0, 0.0, -w[0] / w[2]),
        Vec3::new(0.0, 1.0, -w[1] / w[2]),
    ];
    let herring = |e: Vec2| -> Result<(Vec2, Mat2)> {
        let ev = ends(e);
        let s = Vec3::new(
            s0[0] + sig[0] * ev[0],
            s0[1] + sig[1] * ev[1],
            s0[2] + sig[2] * ev[2],
        );
        let mu1 = im * s;
        let mut r = Vec2::zeros();
        let mut jac = Mat2::zeros();
        for i in 0..3 {
            let tangent = tau[i] * (len[i] + mu1[i]) + nu[i] * s[i];
            let nrm = rot90(tangent);
            r += phi_polar.grad(nrm)?;
            let hess = phi_polar.hess(nrm)?;
            for k in 0..2 {
                let ds = Vec3::new(sig[0] * de[k][0], sig[1] * de[k][1], sig[2] * de[k][2]);
                let dmu = im * ds;
                let dt_i = tau[i] * dmu[i] + nu[i] * ds[i];
                let col = hess * rot90(dt_i);
                jac[(0, k)] += col.x;
                jac[(1, k)] += col.y;
            }
        }
        Ok((r, jac))
    };
    let e_old = h.end_values();
    let e = newton2(
        Vec2::new(e_old[0], e_old[1]),
        herring,
        opts.newton_tol,
        opts.newton_max_iters,
    )?;
    let ev = ends(e);
    let comps = [0, 1, 2].map(|i| {
        let mut v: Vec<f64> = base[i]
            .iter()
            .zip(&lin[i])
            .map(|(a, b)| a + ev[i] * b)
            .collect();
        v[0] = 0.0;
        v[n - 1] = ev[i];
        v
    });
    HeightField::new(comps)
}

/// One step of the height-function flow with energy control.
pub fn h_flow_step(
    state: &FlowState,
    frame: &ReferenceFrame,
    phi_polar: &Anisotropy,
    dt: f64,
    opts: &FlowOptions,
) -> Result<FlowState> {
    check_dt(dt)?;
    let h = state
        .h
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("graph step needs a height field".into()))?;
    let e_old = energy(&state.network, phi_polar)?;
    let ((h_new, network), taken) = controlled_step(dt, opts, e_old, |step| {
        let h_new = h_flow_trial(frame, h, phi_polar, step, opts)?;
        let net = reconstruct(frame, &h_new)?;
        let e = energy(&net, phi_polar)?;
        Ok(((h_new, net), e))
    })?;
    Ok(FlowState {
        t: state.t + taken,
        network,
        h: Some(h_new),
    })
}

/// One sample of a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub grad_w_norm: f64,
    pub junction: [f64; 2],
    pub max_kappa_phi: f64,
    pub h_c0: f64,
    pub h_c1: f64,
    pub h_c2: f64,
    pub herring_residual: f64,
    pub concurrency_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stationary,
    EndTime,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub mode: FlowMode,
    pub rows: Vec<TrajectoryRow>,
    /// States at the snapshot stride, always including the first and last.
    pub snapshots: Vec<FlowState>,
    /// Height fields at every recorded row.
    pub heights: Vec<HeightField>,
    pub energy_star: f64,
    pub stop: StopReason,
}

impl Trajectory {
    pub fn final_state(&self) -> &FlowState {
        self.snapshots
            .last()
            .expect("trajectory holds at least one snapshot")
    }

    /// `t,E,grad_W_norm,junction_x,junction_y,max_kappa_phi,h_c0,h_c1,h_c2`.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("t,E,grad_W_norm,junction_x,junction_y,max_kappa_phi,h_c0,h_c1,h_c2\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.energy,
                r.grad_w_norm,
                r.junction[0],
                r.junction[1],
                r.max_kappa_phi,
                r.h_c0,
                r.h_c1,
                r.h_c2
            ));
        }
        s
    }

    /// Parses the CSV written by [`Trajectory::to_csv`] back into rows.
    pub fn rows_from_csv(text: &str) -> Result<Vec<TrajectoryRow>> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if !header.starts_with("t,E,grad_W_norm") {
            return Err(Error::InvalidInput(
                "trajectory CSV header not recognised".into(),
            ));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(k, l)| {
                let v: Vec<f64> = l
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::InvalidInput(format!("row {}: {e}", k + 1)))?;
                if v.len() != 9 {
                    return Err(Error::InvalidInput(format!(
                        "row {} has {} columns",
                        k + 1,
                        v.len()
                    )));
                }
                Ok(TrajectoryRow {
                    t: v[0],
                    energy: v[1],
                    grad_w_norm: v[2],
                    junction: [v[3], v[4]],
                    max_kappa_phi: v[5],
                    h_c0: v[6],
                    h_c1: v[7],
                    h_c2: v[8],
                    herring_residual: f64::NAN,
                    concurrency_residual: f64::NAN,
                })
            })
            .collect()
    }
}

fn record(
    state: &FlowState,
    frame: &ReferenceFrame,
    phi_polar: &Anisotropy,
) -> Result<(TrajectoryRow, HeightField)> {
    let h = match &state.h {
        Some(h) => h.clone(),
        None => graph_reparametrize(&state.network, frame)?.0,
    };
    let frame_n;
    let fr = if h.nodes() == frame.nodes() {
        frame
    } else {
        frame_n = frame.with_nodes(h.nodes())?;
        &frame_n
    };
    let g = gradient_m(fr, &h, phi_polar)?;
    let net = &state.network;
    let j = net.junction();
    Ok((
        TrajectoryRow {
            t: state.t,
            energy: energy(net, phi_polar)?,
            grad_w_norm: w_norm(&g),
            junction: [j.x, j.y],
            max_kappa_phi: net.max_anisotropic_curvature(phi_polar)?,
            h_c0: h.ck_norm(0),
            h_c1: h.ck_norm(1),
            h_c2: h.ck_norm(2),
            herring_residual: herring_residual(net, phi_polar)?.norm(),
            concurrency_residual: net.concurrency_residual(),
        },
        h,
    ))
}

/// Runs the flow until `opts.t_end` or until ‖𝓜‖_W falls below the stationarity floor.
pub fn run_flow(
    initial: FlowState,
    frame: &ReferenceFrame,
    phi_polar: &Anisotropy,
    mode: FlowMode,
    opts: &FlowOptions,
) -> Result<Trajectory> {
    check_dt(opts.dt)?;
    let mut state = initial;
    if mode == FlowMode::Graph && state.h.is_none() {
        let (h, _) = graph_reparametrize(&state.network, frame)?;
        state = FlowState::graph(frame, h)?;
        state.t = 0.0;
    }
    if mode == FlowMode::Parametric {
        state.h = None;
    }
    let energy_star = energy(frame.gamma_star(), phi_polar)?;
    let floor = opts
        .stationarity_floor
        .unwrap_or(1e-9 * (1.0 + energy_star));
    let initial_lengths: Vec<f64> = state.network.curves().iter().map(|c| c.length()).collect();
    let (row, h) = record(&state, frame, phi_polar)?;
    let mut traj = Trajectory {
        mode,
        rows: vec![row],
        snapshots: vec![state.clone()],
        heights: vec![h],
        energy_star,
        stop: StopReason::EndTime,
    };
    let expected = (opts.t_end / opts.dt).ceil() as usize;
    let max_steps = 4 * expected + 10;
    let mut steps = 0;
    let t_tol = 1e-12 * opts.t_end.max(1.0);
    loop {
        if traj
            .rows
            .last()
            .map(|r| r.grad_w_norm < floor)
            .unwrap_or(false)
        {
            traj.stop = StopReason::Stationary;
            break;
        }
        if state.t >= opts.t_end - t_tol {
            break;
        }
        if steps == max_steps {
            return Err(Error::MaxStepsExceeded(max_steps));
        }
        let dt = opts.dt.min(opts.t_end - state.t);
        state = match mode {
            FlowMode::Parametric => special_flow_step(&state, phi_polar, dt, opts)?,
            FlowMode::Graph => h_flow_step(&state, frame, phi_polar, dt, opts)?,
        };
        steps += 1;
        for (i, c) in state.network.curves().iter().enumerate() {
            let length = c.length();
            if length < opts.collapse_fraction * initial_lengths[i] {
                return Err(Error::CollapseDetected {
                    curve: i + 1,
                    length,
                    t: state.t,
                });
            }
        }
        let (row, h) = record(&state, frame, phi_polar)?;
        traj.rows.push(row);
        traj.heights.push(h);
        if steps % opts.snapshot_stride.max(1) == 0 {
            traj.snapshots.push(state.clone());
        }
    }
    if traj.snapshots.last() != Some(&state) {
        traj.snapshots.push(state);
    }
    Ok(traj)
}

/// SVG drawing of a network with an inset of the Wulff shape samples.
pub fn snapshot_svg(net: &Network, wulff: &[Vec2], title: &str) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 24.0;
    let pts: Vec<Vec2> = net
        .curves()
        .iter()
        .flat_map(|c| c.points().iter().copied())
        .collect();
    let (mut lo, mut hi) = (pts[0], pts[0]);
    for p in &pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let span = (hi - lo).max().max(1e-12);
    let scale = (SIZE - 2.0 * PAD) / span;
    let map = |p: Vec2| {
        (
            (p.x - lo.x) * scale + PAD,
            SIZE - ((p.y - lo.y) * scale + PAD),
        )
    };
    let colors = ["#1f77b4", "#d62728", "#2ca02c"];
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <title>{title}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (i, c) in net.curves().iter().enumerate() {
        let coords: Vec<String> = c
            .points()
            .iter()
            .map(|p| {
                let (x, y) = map(*p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            colors[i],
            coords.join(" ")
        ));
    }
    for p in net.endpoints() {
        let (x, y) = map(*p);
        s.push_str(&format!(
            "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"3\" fill=\"black\"/>\n"
        ));
    }
    if !wulff.is_empty() {
        let r = wulff
            .iter()
            .map(|p| p.norm())
            .fold(0.0, f64::max)
            .max(1e-12);
        let (cx, cy, rad) = (SIZE - 60.0, 60.0, 40.0);
        let coords: Vec<String> = wulff
            .iter()
            .map(|p| format!("{:.3},{:.3}", cx + p.x / r * rad, cy - p.y / r * rad))
            .collect();
        s.push_str(&format!(
            "<polygon fill=\"#eeeeee\" stroke=\"black\" stroke-width=\"1\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Symmetric Hausdorff distance between two networks, curve by curve,
/// using exact point-to-segment distances.
pub fn hausdorff(a: &Network, b: &Network) -> f64 {
    fn point_to_polyline(p: Vec2, line: &[Vec2]) -> f64 {
        line.windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                let len2 = d.norm_squared();
                let t = if len2 > 0.0 {
                    ((p - w[0]).dot(&d) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                (p - (w[0] + d * t)).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }
    let mut h: f64 = 0.0;
    for i in 0..3 {
        let (pa, pb) = (a.curve(i).points(), b.curve(i).points());
        for p in pa {
            h = h.max(point_to_polyline(*p, pb));
        }
        for p in pb {
            h = h.max(point_to_polyline(*p, pa));
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perturbation::{compatible_perturbation, PerturbationSpec};
    use crate::reference_frame::minimize;
    use crate::variations::scaled_stiffness;

    fn small_triangle() -> [Vec2; 3] {
        let s = 0.12;
        [
            Vec2::new(0.0, 0.0),
            Vec2::new(s, 0.0),
            Vec2::new(0.45 * s, 0.85 * s),
        ]
    }

    fn quad_dual() -> Anisotropy {
        Anisotropy::quadratic(Mat2::new(4.0, 0.0, 0.0, 1.0))
            .unwrap()
            .polar()
            .unwrap()
    }

    fn setup(phi: &Anisotropy, n: usize, amp: f64, seed: u64) -> (ReferenceFrame, HeightField) {
        let f = minimize(small_triangle(), phi, n).unwrap();
        let spec = PerturbationSpec {
            amplitude: amp * f.min_length(),
            seed,
            ..Default::default()
        };
        let h = compatible_perturbation(&f, phi, &spec).unwrap();
        (f, h)
    }

    #[test]
    fn gamma_star_is_stationary_for_both_solvers() {
        let phi = quad_dual();
        let f = minimize(small_triangle(), &phi, 32).unwrap();
        let opts = FlowOptions::default();
        let s0 = FlowState::parametric(f.gamma_star().clone());
        let s1 = special_flow_step(&s0, &phi, 1e-3, &opts).unwrap();
        for i in 0..3 {
            for (p, q) in s0
                .network
                .curve(i)
                .points()
                .iter()
                .zip(s1.network.curve(i).points())
            {
                assert!((p - q).norm() < 1e-12);
            }
        }
        let g0 = FlowState::graph(&f, HeightField::zeros(32)).unwrap();
        let g1 = h_flow_step(&g0, &f, &phi, 1e-3, &opts).unwrap();
        assert!(g1.h.unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn admissibility_of_gamma_star_and_moved_endpoint() {
        let phi = Anisotropy::euclidean();
        let f = minimize(small_triangle(), &phi, 32).unwrap();
        let rep = check_admissible(f.gamma_star(), f.endpoints(), &phi).unwrap();
        assert!(rep.max_residual() < 1e-10);
        assert_eq!(rep.condition5, "not checkable");
        let mut moved = *f.endpoints();
        moved[1] += Vec2::new(0.0, 0.003);
        let rep = check_admissible(f.gamma_star(), &moved, &phi).unwrap();
        assert!((rep.endpoint_residual - 0.003).abs() < 1e-15);
    }

    #[test]
    fn compatibility_reports() {
        let phi = quad_dual();
        let (f, h) = setup(&phi, 64, 0.02, 5);
        let zero = check_h_compatibility(&f, &HeightField::zeros(64), &phi).unwrap();
        assert!(zero.max_residual() < 1e-12, "{zero:?}");
        let rep = check_h_compatibility(&f, &h, &phi).unwrap();
        assert!(rep.herring_residual < 1e-12 && rep.start_residual == 0.0);
        // κ(0) vanishes up to the one-sided stencil error.
        let (f2, h2) = setup(&phi, 127, 0.02, 5);
        let fine = check_h_compatibility(&f2, &h2, &phi).unwrap();
        assert!(
            fine.kappa_start < rep.kappa_start / 3.0,
            "{} {}",
            rep.kappa_start,
            fine.kappa_start
        );
        let mut bad = h.clone();
        bad.component_mut(0)[63] += 1e-3;
        let rep = check_h_compatibility(&f, &bad, &phi).unwrap();
        assert!((rep.junction_sum - f.weights()[0] * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn parametric_step_dissipates_and_keeps_constraints() {
        let phi = Anisotropy::euclidean();
        let (f, h) = setup(&phi, 48, 0.02, 1);
        let opts = FlowOptions::default();
        let mut s = FlowState::parametric(reconstruct(&f, &h).unwrap());
        let mut e = energy(&s.network, &phi).unwrap();
        for _ in 0..20 {
            s = special_flow_step(&s, &phi, 2e-4, &opts).unwrap();
            let e1 = energy(&s.network, &phi).unwrap();
            assert!(e1 < e);
            e = e1;
            assert!(s.network.concurrency_residual() == 0.0);
            assert!(s.network.endpoint_residual() == 0.0);
            assert!(herring_residual(&s.network, &phi).unwrap().norm() < 1e-11);
        }
    }

    #[test]
    fn translation_equivariance() {
        let phi = quad_dual();
        let (f, h) = setup(&phi, 32, 0.02, 2);
        let net = reconstruct(&f, &h).unwrap();
        let v = Vec2::new(0.3, -0.7);
        let opts = FlowOptions::default();
        let a = special_flow_step(&FlowState::parametric(net.clone()), &phi, 5e-4, &opts).unwrap();
        let b = special_flow_step(&FlowState::parametric(net.translated(v)), &phi, 5e-4, &opts)
            .unwrap();
        for i in 0..3 {
            for (p, q) in a
                .network
                .curve(i)
                .points()
                .iter()
                .zip(b.network.curve(i).points())
            {
                assert!((p + v - q).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn graph_step_keeps_linear_constraints() {
        let phi = quad_dual();
        let (f, h) = setup(&phi, 48, 0.02, 4);
        let opts = FlowOptions::default();
        let mut s = FlowState::graph(&f, h).unwrap();
        for _ in 0..10 {
            s = h_flow_step(&s, &f, &phi, 2e-4, &opts).unwrap();
            let h = s.h.as_ref().unwrap();
            assert_eq!(h.start_residual(), 0.0);
            assert!(h.junction_sum(f.weights()).abs() < 1e-12);
            assert!(herring_residual(&s.network, &phi).unwrap().norm() < 1e-11);
        }
    }

    /// Independent implicit Euler step of the linearized system with the
    /// linearized junction conditions, assembled as one dense system.
    fn linearized_step(f: &ReferenceFrame, phi: &Anisotropy, h: &HeightField, dt: f64) -> Vec<f64> {
        let n = h.nodes();
        let dx = h.dx();
        let coef = scaled_stiffness(f, phi).unwrap();
        let d: Vec<f64> = (0..3)
            .map(|i| phi.eval(f.nu()[i]) * coef[i] / f.lengths()[i])
            .collect();
        let size = 3 * n;
        let mut a = nalgebra::DMatrix::<f64>::zeros(size, size);
        let mut b = nalgebra::DVector::<f64>::zeros(size);
        for i in 0..3 {
            let o = i * n;
            a[(o, o)] = 1.0;
            for j in 1..n - 1 {
                let r = d[i] * dt / (dx * dx);
                a[(o + j, o + j)] = 1.0 + 2.0 * r;
                a[(o + j, o + j - 1)] = -r;
                a[(o + j, o + j + 1)] = -r;
                b[o + j] = h.component(i)[j];
            }
        }
        // Row for curve 1's end: Σ α̃ h(1) = 0; rows for curves 2, 3: Σ (D/L) h′(1) τ* = 0.
        let w = f.weights();
        for i in 0..3 {
            a[(n - 1, i * n + n - 1)] = w[i];
        }
        for (row, comp) in [(2 * n - 1, 0usize), (3 * n - 1, 1usize)] {
            for i in 0..3 {
                let o = i * n;
                let c = coef[i] * f.tau()[i][comp] / (2.0 * dx);
                a[(row, o + n - 1)] += 3.0 * c;
                a[(row, o + n - 2)] -= 4.0 * c;
                a[(row, o + n - 3)] += c;
            }
        }
        a.lu().solve(&b).unwrap().as_slice().to_vec()
    }

    #[test]
    fn graph_step_matches_linearization_for_tiny_data() {
        let phi = quad_dual();
        let (f, h) = setup(&phi, 40, 0.02, 9);
        let opts = FlowOptions::default();
        let mut errs = vec![];
        for scale in [1e-3, 1e-4] {
            let h0 = h.scaled(scale);
            let s = h_flow_step(
                &FlowState::graph(&f, h0.clone()).unwrap(),
                &f,
                &phi,
                1e-4,
                &opts,
            )
            .unwrap();
            let lin = linearized_step(&f, &phi, &h0, 1e-4);
            let got = s.h.unwrap();
            let mut err: f64 = 0.0;
            for i in 0..3 {
                for j in 0..40 {
                    err = err.max((got.component(i)[j] - lin[i * 40 + j]).abs());
                }
            }
            errs.push(err / h0.max_abs());
        }
        assert!(errs[1] < errs[0] * 0.2, "{errs:?}");
        assert!(errs[1] < 1e-4, "{errs:?}");
    }

    #[test]
    fn zero_perturbation_run_is_a_single_row() {
        let phi = Anisotropy::euclidean();
        let f = minimize(small_triangle(), &phi, 32).unwrap();
        let traj = run_flow(
            FlowState::parametric(f.gamma_star().clone()),
            &f,
            &phi,
            FlowMode::Parametric,
            &FlowOptions::default(),
        )
        .unwrap();
        assert_eq!(traj.rows.len(), 1);
        assert_eq!(traj.stop, StopReason::Stationary);
        let csv = traj.to_csv();
        let rows = Trajectory::rows_from_csv(&csv).unwrap();
        assert_eq!(rows[0].energy, traj.rows[0].energy);
    }

    #[test]
    fn hausdorff_of_shifted_network() {
        let phi = Anisotropy::euclidean();
        let f = minimize(small_triangle(), &phi, 16).unwrap();
        let net = f.gamma_star();
        assert_eq!(hausdorff(net, net), 0.0);
        let shifted = net.translated(Vec2::new(0.0, 1e-3));
        let d = hausdorff(net, &shifted);
        assert!(d > 0.0 && d <= 1e-3 + 1e-15);
    }

    #[test]
    fn svg_contains_three_polylines() {
        let phi = Anisotropy::euclidean();
        let f = minimize(small_triangle(), &phi, 16).unwrap();
        let svg = snapshot_svg(f.gamma_star(), &phi.wulff_samples(32).unwrap(), "t = 0");
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("<polygon"));
    }
}
