//! Post-processing of trajectories and checks on the linearized problem.
//!
//! The Łojasiewicz–Simon exponent is fitted by a log-log regression of
//! ‖𝓜‖_W against E − E*, and C is taken as the envelope of the ratios so
//! the inequality holds on every sample of the window. The
//! Lopatinskii–Shapiro check substitutes decaying exponentials into the
//! linearized junction conditions and evaluates the resulting determinant.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::anisotropy::Anisotropy;
use crate::error::{Error, Result};
use crate::flow::{Trajectory, TrajectoryRow};
use crate::reference_frame::{HeightField, ReferenceFrame};

/// Samples with E − E* at or below this multiple of (1 + E*) are treated as converged.
const LSI_WINDOW_FLOOR: f64 = 1e-10;
/// Below this multiple of (1 + E*) the logarithm is meaningless.
const LSI_LOG_FLOOR: f64 = 1e-13;
const LSI_MIN_SAMPLES: usize = 20;
/// The Cauchy tail starts once ‖𝓜‖_W has dropped by this factor.
const TAIL_GRAD_DROP: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LsiFit {
    pub theta: f64,
    #[serde(rename = "C")]
    pub c_lsi: f64,
    pub window: [f64; 2],
    /// Coefficient of determination of the log-log regression.
    pub residual: f64,
    pub n_samples: usize,
}

impl LsiFit {
    /// Whether |E − E*|^{1−θ} ≤ C‖𝓜‖_W holds at a sample.
    pub fn holds(&self, gap: f64, grad: f64) -> bool {
        // Same quotient as the envelope that defines C, so window samples hold exactly.
        gap.abs().powf(1.0 - self.theta) / grad <= self.c_lsi
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("LsiFit serializes")
    }
}

/// The window used by [`fit_lsi_rows`]: the leading run of strictly decreasing
/// samples with E − E* above the window floor.
pub fn lsi_window(rows: &[TrajectoryRow], energy_star: f64) -> Result<Vec<&TrajectoryRow>> {
    let log_floor = LSI_LOG_FLOOR * (1.0 + energy_star.abs());
    let floor = LSI_WINDOW_FLOOR * (1.0 + energy_star.abs());
    let mut window: Vec<&TrajectoryRow> = Vec::new();
    for (k, r) in rows.iter().enumerate() {
        let gap = r.energy - energy_star;
        if k == 0 && gap <= log_floor {
            return Err(Error::EnergyAtMinimum(k));
        }
        if gap <= floor {
            break;
        }
        if let Some(prev) = window.last() {
            if r.energy >= prev.energy {
                break;
            }
        }
        window.push(r);
    }
    Ok(window)
}

/// Fits (θ, C) on the rows of a trajectory.
pub fn fit_lsi_rows(rows: &[TrajectoryRow], energy_star: f64) -> Result<LsiFit> {
    if rows.len() < LSI_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "LSI fit needs at least {LSI_MIN_SAMPLES} samples, got {}",
            rows.len()
        )));
    }
    let window: Vec<&TrajectoryRow> = lsi_window(rows, energy_star)?
        .into_iter()
        .filter(|r| r.grad_w_norm > 0.0)
        .collect();
    if window.len() < LSI_MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "LSI window holds {} samples above the energy floor, need {LSI_MIN_SAMPLES}",
            window.len()
        )));
    }
    let xs: Vec<f64> = window
        .iter()
        .map(|r| (r.energy - energy_star).ln())
        .collect();
    let ys: Vec<f64> = window.iter().map(|r| r.grad_w_norm.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InsufficientData(
            "energy gap is constant over the window".into(),
        ));
    }
    let slope = sxy / sxx;
    let residual = if syy > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    let theta = (1.0 - slope).clamp(f64::MIN_POSITIVE, 0.5);
    let c_lsi = window
        .iter()
        .map(|r| (r.energy - energy_star).powf(1.0 - theta) / r.grad_w_norm)
        .fold(0.0, f64::max);
    Ok(LsiFit {
        theta,
        c_lsi,
        window: [window[0].t, window[window.len() - 1].t],
        residual,
        n_samples: window.len(),
    })
}

pub fn fit_lsi(traj: &Trajectory) -> Result<LsiFit> {
    fit_lsi_rows(&traj.rows, traj.energy_star)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CauchyPair {
    pub t: f64,
    pub distance: f64,
    pub distance_doubled: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub final_grad_w_norm: f64,
    pub energy_gap: f64,
    pub final_max_kappa_phi: f64,
    /// Largest Euclidean curvature of the limit network.
    pub limit_max_kappa: f64,
    pub limit_herring_residual: f64,
    /// C⁰, C¹, C² proxies of h(0) − h_∞.
    pub initial_distance: [f64; 3],
    /// Largest C² proxy of h(t) − h_∞ over the last half of the run, the noise level of the tail.
    pub tail_noise: f64,
    /// First time ‖𝓜‖_W has fallen below 1e-2 of its initial value.
    pub tail_start: f64,
    /// Dyadic times t ≥ `tail_start` with d(2t)/d(t), for pairs resolved above the tail noise.
    pub cauchy: Vec<CauchyPair>,
    pub max_cauchy_ratio: f64,
}

fn distance(a: &HeightField, b: &HeightField, k: usize) -> f64 {
    a.axpy(-1.0, b).ck_norm(k)
}

fn nearest_row(rows: &[TrajectoryRow], t: f64) -> usize {
    rows.iter()
        .enumerate()
        .min_by(|a, b| (a.1.t - t).abs().total_cmp(&(b.1.t - t).abs()))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

/// Convergence summary of a run that reached `floor` in ‖𝓜‖_W.
pub fn convergence_report(
    traj: &Trajectory,
    phi_polar: &Anisotropy,
    floor: f64,
) -> Result<ConvergenceReport> {
    let last = traj
        .rows
        .last()
        .ok_or_else(|| Error::InsufficientData("empty trajectory".into()))?;
    if !(last.grad_w_norm < floor) {
        return Err(Error::NotConverged(format!(
            "final ‖𝓜‖_W = {:e} is not below {floor:e}",
            last.grad_w_norm
        )));
    }
    let limit = traj.final_state();
    let h_inf = traj.heights.last().expect("heights match rows");
    let d2: Vec<f64> = traj.heights.iter().map(|h| distance(h, h_inf, 2)).collect();
    let t_final = last.t;
    let tail_noise = traj
        .rows
        .iter()
        .zip(&d2)
        .filter(|(r, _)| r.t >= 0.5 * t_final)
        .map(|(_, d)| *d)
        .fold(0.0, f64::max);
    let grad0 = traj.rows[0].grad_w_norm;
    let tail_start = traj
        .rows
        .iter()
        .find(|r| r.grad_w_norm <= TAIL_GRAD_DROP * grad0)
        .map_or(t_final, |r| r.t);
    let mut cauchy = Vec::new();
    if t_final > 0.0 {
        for m in 2..=12 {
            let t = t_final / f64::from(1u32 << m);
            let (a, b) = (nearest_row(&traj.rows, t), nearest_row(&traj.rows, 2.0 * t));
            if a == b || a == 0 || traj.rows[a].t < tail_start {
                continue;
            }
            if d2[b] > 100.0 * tail_noise {
                cauchy.push(CauchyPair {
                    t: traj.rows[a].t,
                    distance: d2[a],
                    distance_doubled: d2[b],
                    ratio: d2[b] / d2[a],
                });
            }
        }
    }
    cauchy.reverse();
    let max_cauchy_ratio = cauchy.iter().map(|c| c.ratio).fold(0.0, f64::max);
    let h0 = &traj.heights[0];
    let limit_max_kappa = limit
        .network
        .curvatures()?
        .iter()
        .flat_map(|k| k.iter().copied())
        .fold(0.0, |a: f64, b| a.max(b.abs()));
    Ok(ConvergenceReport {
        final_grad_w_norm: last.grad_w_norm,
        energy_gap: (last.energy - traj.energy_star).abs(),
        final_max_kappa_phi: last.max_kappa_phi,
        limit_max_kappa,
        limit_herring_residual: crate::geometry::herring_residual(&limit.network, phi_polar)?
            .norm(),
        initial_distance: [
            distance(h0, h_inf, 0),
            distance(h0, h_inf, 1),
            distance(h0, h_inf, 2),
        ],
        tail_noise,
        tail_start,
        cauchy,
        max_cauchy_ratio,
    })
}

/// Coefficients of the linearization at h ≡ 0.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearizedSystem {
    /// φ°(ν*)(D²φ°(ν*)τ*·τ*)/|(γ*)′|².
    pub d: [f64; 3],
    /// Coefficients of the first-order term, zero for straight reference curves.
    pub lot: [f64; 3],
    /// h²′(1) = −r₁ h³′(1).
    pub r1: f64,
    /// h¹′(1) = −r₂ h³′(1).
    pub r2: f64,
    pub alpha: [f64; 3],
}

impl LinearizedSystem {
    pub fn signs_hold(&self) -> bool {
        self.d.iter().all(|d| *d > 0.0) && self.r1 < 0.0 && self.r2 < 0.0
    }
}

pub fn assemble_linearized(
    frame: &ReferenceFrame,
    phi_polar: &Anisotropy,
) -> Result<LinearizedSystem> {
    let (nu, tau, len) = (frame.nu(), frame.tau(), frame.lengths());
    let mut stiff = [0.0; 3];
    let mut d = [0.0; 3];
    for i in 0..3 {
        stiff[i] = phi_polar.stiffness(nu[i], tau[i])? / len[i];
        d[i] = phi_polar.eval(nu[i]) * stiff[i] / len[i];
    }
    // The linearized Herring condition Σ (D^i/L_i) h^i′(1) τ*^i = 0 tested against ν*¹ and ν*².
    let r1 = stiff[2] * tau[2].dot(&nu[0]) / (stiff[1] * tau[1].dot(&nu[0]));
    let r2 = stiff[2] * tau[2].dot(&nu[1]) / (stiff[0] * tau[0].dot(&nu[1]));
    Ok(LinearizedSystem {
        d,
        lot: [0.0; 3],
        r1,
        r2,
        alpha: *frame.weights(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LsSample {
    pub lambda: [f64; 2],
    pub abs_det: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LsReport {
    pub samples: Vec<LsSample>,
    pub min_abs_det: f64,
    /// Largest ratio of |det| between neighbouring grid points.
    pub max_neighbor_ratio: f64,
    /// The corresponding minimum at the fixed endpoints.
    pub dirichlet_min_abs_det: f64,
}

impl LsReport {
    /// `re_lambda,im_lambda,abs_det`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("re_lambda,im_lambda,abs_det\n");
        for r in &self.samples {
            s.push_str(&format!("{},{},{}\n", r.lambda[0], r.lambda[1], r.abs_det));
        }
        s
    }
}

/// The grid 10^k e^{iψ}, k = −2..=2, with nine angles ψ in (−π/2, π/2).
pub fn ls_grid() -> Vec<Complex64> {
    let mut out = Vec::with_capacity(45);
    for k in -2..=2 {
        for j in 0..9 {
            let psi = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (j + 1) as f64 / 10.0;
            out.push(Complex64::from_polar(10f64.powi(k), psi));
        }
    }
    out
}

/// Determinant of the junction conditions applied to A_i exp(−k_i y),
/// with the derivative rows scaled by |λ|^{-1/2}.
pub fn ls_determinant(ls: &LinearizedSystem, lambda: Complex64) -> Result<Complex64> {
    if !(lambda.re > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidLambda(format!(
            "Re λ must be positive, got {lambda}"
        )));
    }
    let scale = lambda.norm().sqrt();
    let k: Vec<Complex64> =
        ls.d.iter()
            .map(|d| {
                let r = (lambda / *d).sqrt();
                let r = if r.re < 0.0 { -r } else { r };
                r / scale
            })
            .collect();
    let a = ls.alpha;
    Ok(k[1] * k[2] * (a[0] * ls.r2) + k[0] * k[2] * (a[1] * ls.r1) - k[0] * k[1] * a[2])
}

pub fn lopatinskii_shapiro_check(ls: &LinearizedSystem, lambdas: &[Complex64]) -> Result<LsReport> {
    let mut samples = Vec::with_capacity(lambdas.len());
    for l in lambdas {
        samples.push(LsSample {
            lambda: [l.re, l.im],
            abs_det: ls_determinant(ls, *l)?.norm(),
        });
    }
    let min_abs_det = samples
        .iter()
        .map(|s| s.abs_det)
        .fold(f64::INFINITY, f64::min);
    let max_neighbor_ratio = samples
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].abs_det, w[1].abs_det);
            a.max(b) / a.min(b)
        })
        .fold(1.0, f64::max);
    // At a fixed endpoint the condition is h(0) = 0 on each curve separately.
    let dirichlet_min_abs_det = if lambdas.is_empty() {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(LsReport {
        samples,
        min_abs_det,
        max_neighbor_ratio,
        dirichlet_min_abs_det,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmoothingReport {
    pub window: [f64; 2],
    /// max C³ proxy of h(t) over the window.
    pub max_c3: f64,
    pub initial_c2: f64,
    /// max_c3 / (1 + ‖h₀‖_C²).
    pub ratio: f64,
    /// Whether the C³ proxy is non-increasing over the window.
    pub monotone_tail: bool,
}

/// Discrete C³ proxies of h(t) on [T/2, T].
pub fn smoothing_probe(traj: &Trajectory) -> Result<SmoothingReport> {
    let t_end = traj.rows.last().map(|r| r.t).unwrap_or(0.0);
    let window: Vec<f64> = traj
        .rows
        .iter()
        .zip(&traj.heights)
        .filter(|(r, _)| r.t >= 0.5 * t_end)
        .map(|(_, h)| h.ck_norm(3))
        .collect();
    if window.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "smoothing probe needs two samples in [T/2, T], got {}",
            window.len()
        )));
    }
    let max_c3 = window.iter().copied().fold(0.0, f64::max);
    let initial_c2 = traj.heights[0].ck_norm(2);
    Ok(SmoothingReport {
        window: [0.5 * t_end, t_end],
        max_c3,
        initial_c2,
        ratio: max_c3 / (1.0 + initial_c2),
        monotone_tail: window.windows(2).all(|w| w[1] <= w[0]),
    })
}
