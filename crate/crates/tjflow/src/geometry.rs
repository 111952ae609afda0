//! Discrete curves, triple-junction networks and their geometric quantities.
//!
//! Curves are sampled on the uniform grid x_j = j/(N-1) and oriented from
//! their fixed endpoint towards the junction. Normals are tangents rotated
//! anticlockwise by 90 degrees.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::anisotropy::Anisotropy;
use crate::error::{Error, Result};
use crate::linalg::{d1, d2};
use crate::{rot90, Vec2};

pub const MIN_NODES: usize = 8;
/// Parametric speeds below this are treated as degenerate.
pub const SPEED_FLOOR: f64 = 1e-10;
const ANGLE_SUM_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteCurve {
    points: Vec<Vec2>,
}

impl DiscreteCurve {
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        if points.len() < MIN_NODES {
            return Err(Error::InvalidInput(format!(
                "a curve needs at least {MIN_NODES} nodes, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::InvalidInput(
                "curve contains non-finite points".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Samples `f` on the uniform grid of `n` nodes.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> Vec2) -> Result<Self> {
        let m = (n.max(2) - 1) as f64;
        Self::new((0..n).map(|j| f(j as f64 / m)).collect())
    }

    /// Straight segment from `a` to `b` at constant speed, exact at both ends.
    pub fn segment(n: usize, a: Vec2, b: Vec2) -> Result<Self> {
        let mut c = Self::from_fn(n, |x| a + (b - a) * x)?;
        c.points[n - 1] = b;
        Ok(c)
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.points.len() - 1) as f64
    }

    pub fn first(&self) -> Vec2 {
        self.points[0]
    }

    pub fn last(&self) -> Vec2 {
        self.points[self.points.len() - 1]
    }

    pub fn derivative(&self) -> Vec<Vec2> {
        d1(&self.points, self.dx())
    }

    pub fn second_derivative(&self) -> Vec<Vec2> {
        d2(&self.points, self.dx())
    }

    /// Euclidean length of the polyline.
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn translated(&self, v: Vec2) -> Self {
        Self {
            points: self.points.iter().map(|p| p + v).collect(),
        }
    }

    fn checked_derivative(&self, curve: usize) -> Result<Vec<Vec2>> {
        let d = self.derivative();
        for (node, v) in d.iter().enumerate() {
            let speed = v.norm();
            if !(speed >= SPEED_FLOOR) {
                return Err(Error::DegenerateCurve { curve, node, speed });
            }
        }
        Ok(d)
    }
}

/// Unit tangents and normals at every node.
pub fn frames(curve: &DiscreteCurve) -> Result<(Vec<Vec2>, Vec<Vec2>)> {
    frames_labelled(curve, 0)
}

pub(crate) fn frames_labelled(
    curve: &DiscreteCurve,
    label: usize,
) -> Result<(Vec<Vec2>, Vec<Vec2>)> {
    let tau: Vec<Vec2> = curve
        .checked_derivative(label)?
        .into_iter()
        .map(|v| v / v.norm())
        .collect();
    let nu = tau.iter().map(|t| rot90(*t)).collect();
    Ok((tau, nu))
}

/// κ_j = det(γ′, γ″)/|γ′|³.
pub fn curvature(curve: &DiscreteCurve) -> Result<Vec<f64>> {
    curvature_labelled(curve, 0)
}

fn curvature_labelled(curve: &DiscreteCurve, label: usize) -> Result<Vec<f64>> {
    let g1 = curve.checked_derivative(label)?;
    let g2 = curve.second_derivative();
    Ok(g1
        .iter()
        .zip(&g2)
        .map(|(a, b)| (a.x * b.y - a.y * b.x) / a.norm().powi(3))
        .collect())
}

/// κ_φ = (D²φ°(ν)τ·τ)κ.
pub fn anisotropic_curvature(curve: &DiscreteCurve, phi_polar: &Anisotropy) -> Result<Vec<f64>> {
    let (tau, nu) = frames(curve)?;
    let kappa = curvature(curve)?;
    (0..curve.len())
        .map(|j| Ok(phi_polar.stiffness(nu[j], tau[j])? * kappa[j]))
        .collect()
}

/// Anisotropic length of the polyline, Σ_cells φ°(R(p_{j+1} − p_j)).
///
/// This is the midpoint rule for ∫ φ°((γ_x)^⊥) dx with cell differences for
/// γ_x. It is exact for straight curves and makes the straight minimizer an
/// exact critical point of the discrete energy.
pub fn curve_energy(curve: &DiscreteCurve, phi_polar: &Anisotropy) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| phi_polar.eval(rot90(w[1] - w[0])))
        .sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    curves: [DiscreteCurve; 3],
    endpoints: [Vec2; 3],
}

#[derive(Serialize, Deserialize)]
struct NetworkRecord {
    curves: Vec<Vec<[f64; 2]>>,
    endpoints: Vec<[f64; 2]>,
    junction: [f64; 2],
}

impl Network {
    /// Builds a network; curves must share a grid and endpoints must be distinct.
    pub fn new(curves: [DiscreteCurve; 3], endpoints: [Vec2; 3]) -> Result<Self> {
        let n = curves[0].len();
        if curves.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput(
                "all curves must share the same grid size".into(),
            ));
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if (endpoints[i] - endpoints[j]).norm() == 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "endpoints P{} and P{} coincide",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { curves, endpoints })
    }

    /// Three straight segments from the endpoints to `junction`.
    pub fn star(endpoints: [Vec2; 3], junction: Vec2, n: usize) -> Result<Self> {
        let c = |i: usize| DiscreteCurve::segment(n, endpoints[i], junction);
        Self::new([c(0)?, c(1)?, c(2)?], endpoints)
    }

    pub fn curves(&self) -> &[DiscreteCurve; 3] {
        &self.curves
    }

    pub fn curve(&self, i: usize) -> &DiscreteCurve {
        &self.curves[i]
    }

    pub fn endpoints(&self) -> &[Vec2; 3] {
        &self.endpoints
    }

    pub fn nodes(&self) -> usize {
        self.curves[0].len()
    }

    /// Mean of the three curve ends.
    pub fn junction(&self) -> Vec2 {
        (self.curves[0].last() + self.curves[1].last() + self.curves[2].last()) / 3.0
    }

    /// Largest pairwise distance between curve ends.
    pub fn concurrency_residual(&self) -> f64 {
        let e: Vec<Vec2> = self.curves.iter().map(|c| c.last()).collect();
        (e[0] - e[1])
            .norm()
            .max((e[1] - e[2]).norm())
            .max((e[2] - e[0]).norm())
    }

    /// Largest distance between a curve start and its prescribed endpoint.
    pub fn endpoint_residual(&self) -> f64 {
        (0..3)
            .map(|i| (self.curves[i].first() - self.endpoints[i]).norm())
            .fold(0.0, f64::max)
    }

    pub fn translated(&self, v: Vec2) -> Self {
        Self {
            curves: [
                self.curves[0].translated(v),
                self.curves[1].translated(v),
                self.curves[2].translated(v),
            ],
            endpoints: [
                self.endpoints[0] + v,
                self.endpoints[1] + v,
                self.endpoints[2] + v,
            ],
        }
    }

    /// Largest distance between two nodes.
    pub fn diameter(&self) -> f64 {
        let pts: Vec<Vec2> = self
            .curves
            .iter()
            .flat_map(|c| c.points.iter().copied())
            .collect();
        let mut d: f64 = 0.0;
        for (k, p) in pts.iter().enumerate() {
            for q in &pts[k + 1..] {
                d = d.max((p - q).norm());
            }
        }
        d
    }

    /// Unit normals at the junction end of each curve.
    pub fn end_normals(&self) -> Result<[Vec2; 3]> {
        let mut out = [Vec2::zeros(); 3];
        for (i, c) in self.curves.iter().enumerate() {
            let d = c.checked_derivative(i)?;
            let t = d[d.len() - 1];
            out[i] = rot90(t / t.norm());
        }
        Ok(out)
    }

    pub fn check_regular(&self) -> Result<()> {
        for (i, c) in self.curves.iter().enumerate() {
            c.checked_derivative(i)?;
        }
        Ok(())
    }

    pub fn curvatures(&self) -> Result<[Vec<f64>; 3]> {
        Ok([
            curvature_labelled(&self.curves[0], 0)?,
            curvature_labelled(&self.curves[1], 1)?,
            curvature_labelled(&self.curves[2], 2)?,
        ])
    }

    /// max over all nodes of |κ_φ|.
    pub fn max_anisotropic_curvature(&self, phi_polar: &Anisotropy) -> Result<f64> {
        let mut m: f64 = 0.0;
        for c in &self.curves {
            for k in anisotropic_curvature(c, phi_polar)? {
                m = m.max(k.abs());
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let rec = NetworkRecord {
            curves: self
                .curves
                .iter()
                .map(|c| c.points.iter().map(|p| [p.x, p.y]).collect())
                .collect(),
            endpoints: self.endpoints.iter().map(|p| [p.x, p.y]).collect(),
            junction: [self.junction().x, self.junction().y],
        };
        serde_json::to_string_pretty(&rec).expect("network serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: NetworkRecord = serde_json::from_str(s)
            .map_err(|e| Error::InvalidInput(format!("network json: {e}")))?;
        if rec.curves.len() != 3 || rec.endpoints.len() != 3 {
            return Err(Error::InvalidInput(
                "network json needs 3 curves and 3 endpoints".into(),
            ));
        }
        let v = |p: &[f64; 2]| Vec2::new(p[0], p[1]);
        let curve = |i: usize| DiscreteCurve::new(rec.curves[i].iter().map(v).collect());
        Self::new(
            [curve(0)?, curve(1)?, curve(2)?],
            [
                v(&rec.endpoints[0]),
                v(&rec.endpoints[1]),
                v(&rec.endpoints[2]),
            ],
        )
    }

    /// CSV with columns `x_param,px,py,kappa,kappa_phi` for curve `i`.
    pub fn curve_csv(&self, i: usize, phi_polar: &Anisotropy) -> Result<String> {
        let c = &self.curves[i];
        let kappa = curvature_labelled(c, i)?;
        let kphi = anisotropic_curvature(c, phi_polar)?;
        let mut out = String::from("x_param,px,py,kappa,kappa_phi\n");
        for j in 0..c.len() {
            let p = c.points[j];
            let _ = writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e}",
                j as f64 * c.dx(),
                p.x,
                p.y,
                kappa[j],
                kphi[j]
            );
        }
        Ok(out)
    }
}

/// Total anisotropic length of the network.
pub fn energy(net: &Network, phi_polar: &Anisotropy) -> Result<f64> {
    net.check_regular()?;
    Ok(net.curves.iter().map(|c| curve_energy(c, phi_polar)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JunctionData {
    /// θ¹ = ∠(ν²,ν³), θ² = ∠(ν³,ν¹), θ³ = ∠(ν¹,ν²).
    pub angles: [f64; 3],
    /// Young's-modulus weights with α̃³ = 1.
    pub weights: [f64; 3],
    /// +1 if ν¹, ν², ν³ turn anticlockwise, −1 otherwise.
    #[serde(default = "anticlockwise")]
    pub orientation: f64,
}

fn anticlockwise() -> f64 {
    1.0
}

fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

impl JunctionData {
    pub fn from_normals(nu: [Vec2; 3]) -> Result<Self> {
        let angle = |a: Vec2, b: Vec2| cross(a, b).abs().atan2(a.dot(&b));
        let angles = [
            angle(nu[1], nu[2]),
            angle(nu[2], nu[0]),
            angle(nu[0], nu[1]),
        ];
        let sum: f64 = angles.iter().sum();
        if angles.iter().any(|t| !(*t > 0.0 && *t < PI)) || (sum - 2.0 * PI).abs() > ANGLE_SUM_TOL {
            return Err(Error::DegenerateAngles(angles));
        }
        let raw = [
            cross(nu[1], nu[2]),
            cross(nu[2], nu[0]),
            cross(nu[0], nu[1]),
        ];
        let weights = [raw[0] / raw[2], raw[1] / raw[2], 1.0];
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::DegenerateAngles(angles));
        }
        Ok(Self {
            angles,
            weights,
            orientation: raw[2].signum(),
        })
    }

    pub fn sines(&self) -> [f64; 3] {
        self.angles.map(f64::sin)
    }

    pub fn cosines(&self) -> [f64; 3] {
        self.angles.map(f64::cos)
    }

    /// |Σ α̃^i ν^i| for the given normals.
    pub fn force_balance_residual(&self, nu: &[Vec2; 3]) -> f64 {
        (nu[0] * self.weights[0] + nu[1] * self.weights[1] + nu[2] * self.weights[2]).norm()
    }

    /// Spread of sin θ^i / α̃^i, zero when the sine rule holds.
    pub fn sine_rule_residual(&self) -> f64 {
        let r: Vec<f64> = (0..3)
            .map(|i| self.angles[i].sin() / self.weights[i])
            .collect();
        let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = r.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Junction angles and weights from the normals at x = 1.
pub fn junction_data(net: &Network, _phi_polar: &Anisotropy) -> Result<JunctionData> {
    JunctionData::from_normals(net.end_normals()?)
}

/// Σ_i Dφ°(ν^i(1)).
pub fn herring_residual(net: &Network, phi_polar: &Anisotropy) -> Result<Vec2> {
    let nu = net.end_normals()?;
    let mut r = Vec2::zeros();
    for n in nu {
        r += phi_polar.cahn_hoffmann(n)?;
    }
    Ok(r)
}
