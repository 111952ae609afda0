//! The straight-line minimizer Γ* and normal-graph coordinates over it.
//!
//! A network close to Γ* is written as γ^i = γ*^i + h^i ν*^i + μ^i τ*^i where
//! the tangential part μ = 𝓘h is slaved to the normal part so that the three
//! curves stay concurrent. Each γ*^i runs at constant speed L_i = |Σ* − P^i|.

use serde::Serialize;

use crate::anisotropy::Anisotropy;
use crate::error::{Error, Result};
use crate::geometry::{DiscreteCurve, JunctionData, Network};
use crate::linalg::UniformSpline;
use crate::{rot90, Mat2, Mat3, Vec2, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameOptions {
    pub newton_tol: f64,
    pub max_iters: usize,
    /// Networks farther than this fraction of the shortest segment are not reparametrized.
    pub closeness_gate: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            max_iters: 50,
            closeness_gate: 0.2,
        }
    }
}

const MAX_HALVINGS: usize = 30;

#[derive(Clone, Debug)]
pub struct ReferenceFrame {
    endpoints: [Vec2; 3],
    junction: Vec2,
    gamma_star: Network,
    nu: [Vec2; 3],
    tau: [Vec2; 3],
    lengths: [f64; 3],
    junction_data: JunctionData,
    i_matrix: Mat3,
    options: FrameOptions,
}

#[derive(Serialize)]
struct FrameRecord {
    junction: [f64; 2],
    endpoints: [[f64; 2]; 3],
    theta_star: [f64; 3],
    alpha_star: [f64; 3],
    #[serde(rename = "I_matrix")]
    i_matrix: [[f64; 3]; 3],
}

impl ReferenceFrame {
    pub fn endpoints(&self) -> &[Vec2; 3] {
        &self.endpoints
    }

    pub fn junction(&self) -> Vec2 {
        self.junction
    }

    pub fn gamma_star(&self) -> &Network {
        &self.gamma_star
    }

    pub fn nu(&self) -> &[Vec2; 3] {
        &self.nu
    }

    pub fn tau(&self) -> &[Vec2; 3] {
        &self.tau
    }

    /// Segment lengths, equal to the constant parametric speeds |γ*′|.
    pub fn lengths(&self) -> &[f64; 3] {
        &self.lengths
    }

    pub fn min_length(&self) -> f64 {
        self.lengths.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn junction_data(&self) -> &JunctionData {
        &self.junction_data
    }

    pub fn weights(&self) -> &[f64; 3] {
        &self.junction_data.weights
    }

    pub fn i_matrix(&self) -> &Mat3 {
        &self.i_matrix
    }

    pub fn nodes(&self) -> usize {
        self.gamma_star.nodes()
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.nodes() - 1) as f64
    }

    pub fn options(&self) -> &FrameOptions {
        &self.options
    }

    /// γ*^i at node j, exact at both ends.
    pub fn point(&self, i: usize, j: usize) -> Vec2 {
        let n = self.nodes();
        if j == n - 1 {
            self.junction
        } else {
            self.endpoints[i] + (self.junction - self.endpoints[i]) * (j as f64 / (n - 1) as f64)
        }
    }

    fn point_at(&self, i: usize, x: f64) -> Vec2 {
        self.endpoints[i] + (self.junction - self.endpoints[i]) * x
    }

    /// The same frame sampled on a different grid.
    pub fn with_nodes(&self, n: usize) -> Result<Self> {
        let mut f = self.clone();
        f.gamma_star = Network::star(self.endpoints, self.junction, n)?;
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        let v = |p: Vec2| [p.x, p.y];
        let m = &self.i_matrix;
        let rec = FrameRecord {
            junction: v(self.junction),
            endpoints: self.endpoints.map(v),
            theta_star: self.junction_data.angles,
            alpha_star: self.junction_data.weights,
            i_matrix: [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]),
        };
        serde_json::to_string_pretty(&rec).expect("frame serializes")
    }
}

/// Σ ↦ Σ_i φ°(R(Σ − P^i)).
pub fn frame_objective(p: &[Vec2; 3], phi_polar: &Anisotropy, s: Vec2) -> f64 {
    p.iter().map(|pi| phi_polar.eval(rot90(s - pi))).sum()
}

fn objective_derivatives(p: &[Vec2; 3], phi_polar: &Anisotropy, s: Vec2) -> Result<(Vec2, Mat2)> {
    let r = Mat2::new(0.0, -1.0, 1.0, 0.0);
    let mut g = Vec2::zeros();
    let mut h = Mat2::zeros();
    for pi in p {
        let v = rot90(s - pi);
        g += r.transpose() * phi_polar.grad(v)?;
        h += r.transpose() * phi_polar.hess(v)? * r;
    }
    Ok((g, h))
}

pub fn minimize(p: [Vec2; 3], phi_polar: &Anisotropy, n: usize) -> Result<ReferenceFrame> {
    minimize_with(p, phi_polar, n, FrameOptions::default())
}

/// Damped Newton on the convex junction objective, with gradient-descent fallback.
pub fn minimize_with(
    p: [Vec2; 3],
    phi_polar: &Anisotropy,
    n: usize,
    options: FrameOptions,
) -> Result<ReferenceFrame> {
    for i in 0..3 {
        for j in i + 1..3 {
            if (p[i] - p[j]).norm() == 0.0 {
                return Err(Error::InvalidInput(format!(
                    "endpoints P{} and P{} coincide",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    let phi = phi_polar.polar()?;
    // The minimizer sits on P^k iff the other two pulls fit in the φ unit ball.
    for k in 0..3 {
        let pull: Vec2 = (0..3)
            .filter(|&i| i != k)
            .map(|i| phi_polar.grad(rot90(p[k] - p[i])))
            .sum::<Result<Vec2>>()?;
        if phi.eval(pull) <= 1.0 + 1e-12 {
            return Err(Error::DegenerateMinimizer {
                endpoint: k + 1,
                distance: 0.0,
            });
        }
    }
    let scale = p.iter().map(|q| (q - p[0]).norm()).fold(0.0, f64::max);
    let mut s = (p[0] + p[1] + p[2]) / 3.0;
    let mut converged = false;
    for _ in 0..options.max_iters {
        let (g, h) = objective_derivatives(&p, phi_polar, s)?;
        if g.norm() <= options.newton_tol {
            converged = true;
            break;
        }
        let newton = h
            .try_inverse()
            .map(|hi| -(hi * g))
            .filter(|d| d.dot(&g) < 0.0);
        let d = newton.unwrap_or(-g * (0.1 * scale));
        let f0 = frame_objective(&p, phi_polar, s);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let trial = s + d * t;
            let ft = frame_objective(&p, phi_polar, trial);
            // Near the optimum the decrease drops below rounding; fall back to the gradient.
            let flat = ft <= f0 + 8.0 * f64::EPSILON * f0.abs()
                && objective_derivatives(&p, phi_polar, trial)?.0.norm() < g.norm();
            if ft < f0 || flat {
                s = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = g.norm() <= 1e-8;
            break;
        }
        for (k, pk) in p.iter().enumerate() {
            let dist = (s - pk).norm();
            if dist < 1e-9 * scale {
                return Err(Error::DegenerateMinimizer {
                    endpoint: k + 1,
                    distance: dist,
                });
            }
        }
    }
    if !converged {
        let (g, _) = objective_derivatives(&p, phi_polar, s)?;
        if g.norm() > 1e-8 {
            return Err(Error::NewtonDivergence(format!(
                "junction minimizer stalled with gradient {:e}",
                g.norm()
            )));
        }
    }
    build_frame(p, s, n, options)
}

/// Frame through a given junction. The junction is not checked for optimality.
pub fn build_frame(
    p: [Vec2; 3],
    junction: Vec2,
    n: usize,
    options: FrameOptions,
) -> Result<ReferenceFrame> {
    let mut lengths = [0.0; 3];
    let mut tau = [Vec2::zeros(); 3];
    let mut nu = [Vec2::zeros(); 3];
    for i in 0..3 {
        let d = junction - p[i];
        lengths[i] = d.norm();
        if lengths[i] == 0.0 {
            return Err(Error::DegenerateMinimizer {
                endpoint: i + 1,
                distance: 0.0,
            });
        }
        tau[i] = d / lengths[i];
        nu[i] = rot90(tau[i]);
    }
    let junction_data = JunctionData::from_normals(nu)?;
    let i_matrix = build_i(&junction_data)?;
    Ok(ReferenceFrame {
        endpoints: p,
        junction,
        gamma_star: Network::star(p, junction, n)?,
        nu,
        tau,
        lengths,
        junction_data,
        i_matrix,
        options,
    })
}

/// The coupling matrix 𝓘 turning junction normal displacements into tangential ones.
pub fn build_i(jd: &JunctionData) -> Result<Mat3> {
    let c = jd.cosines();
    let s = jd.sines();
    if s.iter().any(|v| !(*v > 1e-12)) {
        return Err(Error::DegenerateAngles(jd.angles));
    }
    // The entries are quotients of signed-angle cosines and sines; the signs
    // of the sines follow the orientation of the normals.
    Ok(jd.orientation
        * Mat3::new(
            0.0,
            c[1] / s[0],
            -c[2] / s[0],
            -c[0] / s[1],
            0.0,
            c[2] / s[1],
            c[0] / s[2],
            -c[1] / s[2],
            0.0,
        ))
}

/// Three grid functions on [0,1], the normal displacements over Γ*.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightField {
    h: [Vec<f64>; 3],
}

impl HeightField {
    pub fn new(h: [Vec<f64>; 3]) -> Result<Self> {
        let n = h[0].len();
        if n < crate::geometry::MIN_NODES || h.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidInput(
                "height field components must share a grid of >= 8 nodes".into(),
            ));
        }
        if h.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "height field contains non-finite values".into(),
            ));
        }
        Ok(Self { h })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            h: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Samples `f(i, x)` for curve i at x_j.
    pub fn from_fn(n: usize, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let dx = 1.0 / (n - 1) as f64;
        Self::new([0, 1, 2].map(|i| (0..n).map(|j| f(i, j as f64 * dx)).collect()))
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.h[i]
    }

    pub fn components(&self) -> &[Vec<f64>; 3] {
        &self.h
    }

    pub(crate) fn component_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.h[i]
    }

    pub fn nodes(&self) -> usize {
        self.h[0].len()
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.nodes() - 1) as f64
    }

    pub fn at(&self, j: usize) -> Vec3 {
        Vec3::new(self.h[0][j], self.h[1][j], self.h[2][j])
    }

    pub fn end_values(&self) -> [f64; 3] {
        let n = self.nodes();
        [self.h[0][n - 1], self.h[1][n - 1], self.h[2][n - 1]]
    }

    /// Σ α̃^i h^i(1).
    pub fn junction_sum(&self, weights: &[f64; 3]) -> f64 {
        let e = self.end_values();
        weights[0] * e[0] + weights[1] * e[1] + weights[2] * e[2]
    }

    /// max_i |h^i(0)|.
    pub fn start_residual(&self) -> f64 {
        self.h.iter().map(|v| v[0].abs()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            h: self
                .h
                .clone()
                .map(|v| v.into_iter().map(|x| a * x).collect()),
        }
    }

    /// self + a·other
    pub fn axpy(&self, a: f64, other: &Self) -> Self {
        let mut out = self.clone();
        for i in 0..3 {
            for (o, b) in out.h[i].iter_mut().zip(&other.h[i]) {
                *o += a * b;
            }
        }
        out
    }

    /// Sup norm of the m-th divided difference over all curves.
    pub fn divided_difference_sup(&self, m: usize) -> f64 {
        let dx = self.dx();
        let mut sup: f64 = 0.0;
        for v in &self.h {
            let mut d = v.clone();
            for _ in 0..m {
                d = d.windows(2).map(|w| (w[1] - w[0]) / dx).collect();
            }
            sup = d.iter().fold(sup, |a, b| a.max(b.abs()));
        }
        sup
    }

    /// Discrete C^k proxy: Σ_{m ≤ k} sup |Δ^m h / dx^m|.
    pub fn ck_norm(&self, k: usize) -> f64 {
        (0..=k).map(|m| self.divided_difference_sup(m)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.divided_difference_sup(0)
    }
}

/// Monotone maps Φ^i: [0,1] → [0,1] sampled on the frame grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Reparametrization {
    pub phi: [Vec<f64>; 3],
}

/// μ = 𝓘h pointwise.
pub fn mu_of_h(frame: &ReferenceFrame, h: &HeightField) -> [Vec<f64>; 3] {
    let n = h.nodes();
    let mut mu = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for j in 0..n {
        let m = frame.i_matrix * h.at(j);
        for i in 0..3 {
            mu[i][j] = m[i];
        }
    }
    mu
}

/// Γ_h with γ^i = γ*^i + h^i ν*^i + μ^i τ*^i.
pub fn reconstruct(frame: &ReferenceFrame, h: &HeightField) -> Result<Network> {
    let frame = if h.nodes() != frame.nodes() {
        std::borrow::Cow::Owned(frame.with_nodes(h.nodes())?)
    } else {
        std::borrow::Cow::Borrowed(frame)
    };
    let mu = mu_of_h(&frame, h);
    let n = h.nodes();
    let curve = |i: usize| {
        DiscreteCurve::new(
            (0..n)
                .map(|j| frame.point(i, j) + frame.nu[i] * h.h[i][j] + frame.tau[i] * mu[i][j])
                .collect(),
        )
    };
    let net = Network::new([curve(0)?, curve(1)?, curve(2)?], frame.endpoints)?;
    net.check_regular()?;
    Ok(net)
}

/// Writes a network close to the frame as a normal graph over it.
///
/// At every frame node x the three parameters Φ^i solve
/// T(Φ) − 𝓘 N(Φ) = 0, where N^i and T^i are the normal and tangential
/// components of γ^i(Φ^i) − γ*^i(x). The network is interpolated by clamped
/// cubic splines between its nodes.
pub fn graph_reparametrize(
    net: &Network,
    frame: &ReferenceFrame,
) -> Result<(HeightField, Reparametrization)> {
    let opts = frame.options;
    let m = net.nodes();
    let gate = opts.closeness_gate * frame.min_length();
    let mut dist: f64 = 0.0;
    for i in 0..3 {
        for (k, q) in net.curve(i).points().iter().enumerate() {
            let x = k as f64 / (m - 1) as f64;
            dist = dist.max((q - frame.point_at(i, x)).norm());
        }
    }
    if !(dist < gate) {
        return Err(Error::NewtonDivergence(format!(
            "network is {dist:e} from the frame, beyond the closeness gate {gate:e}"
        )));
    }
    let splines: Vec<UniformSpline<Vec2>> = net
        .curves()
        .iter()
        .map(|c| UniformSpline::new(c.points(), Vec2::zeros()))
        .collect();
    let n = frame.nodes();
    let scale = frame.lengths.iter().cloned().fold(1.0, f64::max);
    let tol = opts.newton_tol * scale;
    let mut h = HeightField::zeros(n);
    let mut phi = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let im = frame.i_matrix;

    let residual = |x: f64, p: &Vec3| -> Vec3 {
        let mut nrm = Vec3::zeros();
        let mut tan = Vec3::zeros();
        for i in 0..3 {
            let d = splines[i].eval(p[i]) - frame.point_at(i, x);
            nrm[i] = d.dot(&frame.nu[i]);
            tan[i] = d.dot(&frame.tau[i]);
        }
        tan - im * nrm
    };

    for j in 0..n {
        let x = j as f64 / (n - 1) as f64;
        let mut p = Vec3::repeat(x);
        if j > 0 && j < n - 1 {
            let mut r = residual(x, &p);
            let mut iters = 0;
            while r.norm() > tol {
                if iters == opts.max_iters {
                    return Err(Error::NewtonDivergence(format!(
                        "graph reparametrization at node {j} stalled with residual {:e}",
                        r.norm()
                    )));
                }
                iters += 1;
                let mut jac = Mat3::zeros();
                for k in 0..3 {
                    let dg = splines[k].derivative(p[k]);
                    for i in 0..3 {
                        jac[(i, k)] = -im[(i, k)] * dg.dot(&frame.nu[k]);
                    }
                    jac[(k, k)] += dg.dot(&frame.tau[k]);
                }
                let step = jac.lu().solve(&(-r)).ok_or_else(|| {
                    Error::NewtonDivergence(format!("singular Jacobian at node {j}"))
                })?;
                let mut t = 1.0;
                let mut accepted = false;
                for _ in 0..=MAX_HALVINGS {
                    let trial = (p + step * t).map(|v| v.clamp(0.0, 1.0));
                    let rt = residual(x, &trial);
                    if rt.norm() < r.norm() {
                        p = trial;
                        r = rt;
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !accepted {
                    if r.norm() <= 1e3 * tol {
                        break;
                    }
                    return Err(Error::NewtonDivergence(format!(
                        "graph reparametrization at node {j}: no descent at residual {:e}",
                        r.norm()
                    )));
                }
            }
        }
        for i in 0..3 {
            phi[i][j] = p[i];
            let v = if j == 0 {
                0.0
            } else {
                let q = if j == n - 1 {
                    net.curve(i).last()
                } else {
                    splines[i].eval(p[i])
                };
                (q - frame.point(i, j)).dot(&frame.nu[i])
            };
            h.h[i][j] = v;
        }
    }
    for (i, f) in phi.iter().enumerate() {
        if f.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::NonMonotoneReparametrization(i + 1));
        }
    }
    Ok((h, Reparametrization { phi }))
}
