//! Smooth elliptic anisotropies, their polar norms and derived weights.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::{Mat2, Vec2};

/// Below this norm the anisotropy is treated as non-differentiable.
pub const DEGENERATE_FLOOR: f64 = 1e-12;
const GRAD_STEP: f64 = 1e-6;
const HESS_STEP: f64 = 1e-4;
const POLAR_SAMPLES: usize = 720;
const POLAR_REFINE: usize = 30;
const ELLIPTICITY_SAMPLES: usize = 360;
const ELLIPTICITY_FLOOR: f64 = 1e-10;
const FRAME_TOL: f64 = 1e-8;

/// A user-supplied norm. Derivatives fall back to central differences.
pub trait CustomNorm: Send + Sync {
    fn eval(&self, x: Vec2) -> f64;
    fn grad(&self, _p: Vec2) -> Option<Vec2> {
        None
    }
    fn hess(&self, _p: Vec2) -> Option<Mat2> {
        None
    }
}

impl<F> CustomNorm for F
where
    F: Fn(Vec2) -> f64 + Send + Sync,
{
    fn eval(&self, x: Vec2) -> f64 {
        self(x)
    }
}

#[derive(Clone)]
pub enum AnisotropyKind {
    Euclidean,
    /// φ(x) = sqrt(x·Ax) with A symmetric positive definite.
    Quadratic(Mat2),
    Custom(Arc<dyn CustomNorm>),
}

impl fmt::Debug for AnisotropyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Euclidean => write!(f, "Euclidean"),
            Self::Quadratic(a) => write!(f, "Quadratic({:?})", a),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Anisotropy {
    kind: AnisotropyKind,
    ellipticity: OnceLock<f64>,
}

/// Sup of ζ·x over the unit ball of `base`, i.e. the polar norm of a custom anisotropy.
struct NumericPolar {
    base: Anisotropy,
}

impl NumericPolar {
    fn support(&self, psi: f64, x: Vec2) -> f64 {
        let u = Vec2::new(psi.cos(), psi.sin());
        u.dot(&x) / self.base.eval(u)
    }
}

impl CustomNorm for NumericPolar {
    fn eval(&self, x: Vec2) -> f64 {
        if x.norm() == 0.0 {
            return 0.0;
        }
        let step = 2.0 * PI / POLAR_SAMPLES as f64;
        let (mut best, mut best_val) = (0.0, f64::NEG_INFINITY);
        for k in 0..POLAR_SAMPLES {
            let psi = k as f64 * step;
            let v = self.support(psi, x);
            if v > best_val {
                best_val = v;
                best = psi;
            }
        }
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (best - step, best + step);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut fc, mut fd) = (self.support(c, x), self.support(d, x));
        for _ in 0..POLAR_REFINE {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = self.support(c, x);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = self.support(d, x);
            }
        }
        best_val.max(fc).max(fd)
    }
}

impl Anisotropy {
    pub fn euclidean() -> Self {
        Self {
            kind: AnisotropyKind::Euclidean,
            ellipticity: OnceLock::from(2.0),
        }
    }

    pub fn quadratic(a: Mat2) -> Result<Self> {
        if (a[(0, 1)] - a[(1, 0)]).abs() > 1e-12 * a.norm() {
            return Err(Error::InvalidInput(
                "quadratic anisotropy matrix must be symmetric".into(),
            ));
        }
        let sym = (a + a.transpose()) * 0.5;
        if sym[(0, 0)] <= 0.0 || sym.determinant() <= 0.0 {
            return Err(Error::NotElliptic(sym.symmetric_eigenvalues().min()));
        }
        Self::with_kind(AnisotropyKind::Quadratic(sym))
    }

    pub fn custom(norm: impl CustomNorm + 'static) -> Result<Self> {
        Self::with_kind(AnisotropyKind::Custom(Arc::new(norm)))
    }

    fn with_kind(kind: AnisotropyKind) -> Result<Self> {
        let phi = Self {
            kind,
            ellipticity: OnceLock::new(),
        };
        let c = phi.sampled_ellipticity()?;
        if !(c > ELLIPTICITY_FLOOR) {
            return Err(Error::NotElliptic(c));
        }
        let _ = phi.ellipticity.set(c);
        Ok(phi)
    }

    pub fn kind(&self) -> &AnisotropyKind {
        &self.kind
    }

    /// Cached lower bound for the eigenvalues of D²(φ²) on the unit circle.
    /// Computed on first use for numeric polars.
    pub fn ellipticity_constant(&self) -> f64 {
        *self
            .ellipticity
            .get_or_init(|| self.sampled_ellipticity().unwrap_or(0.0))
    }

    fn sampled_ellipticity(&self) -> Result<f64> {
        let mut c = f64::INFINITY;
        for k in 0..ELLIPTICITY_SAMPLES {
            let psi = 2.0 * PI * k as f64 / ELLIPTICITY_SAMPLES as f64;
            let u = Vec2::new(psi.cos(), psi.sin());
            let g = self.grad(u)?;
            let d2 = (g * g.transpose() + self.hess(u)? * self.eval(u)) * 2.0;
            c = c.min(d2.symmetric_eigenvalues().min());
        }
        Ok(c)
    }

    pub fn eval(&self, x: Vec2) -> f64 {
        match &self.kind {
            AnisotropyKind::Euclidean => x.norm(),
            AnisotropyKind::Quadratic(a) => x.dot(&(a * x)).max(0.0).sqrt(),
            AnisotropyKind::Custom(f) => {
                if x.norm() == 0.0 {
                    0.0
                } else {
                    f.eval(x)
                }
            }
        }
    }

    fn check_degenerate(p: Vec2) -> Result<()> {
        let n = p.norm();
        if n < DEGENERATE_FLOOR || !n.is_finite() {
            return Err(Error::DegenerateInput(n));
        }
        Ok(())
    }

    pub fn grad(&self, p: Vec2) -> Result<Vec2> {
        Self::check_degenerate(p)?;
        Ok(match &self.kind {
            AnisotropyKind::Euclidean => p / p.norm(),
            AnisotropyKind::Quadratic(a) => a * p / self.eval(p),
            AnisotropyKind::Custom(f) => match f.grad(p) {
                Some(g) => g,
                None => self.fd_grad(p),
            },
        })
    }

    pub fn hess(&self, p: Vec2) -> Result<Mat2> {
        Self::check_degenerate(p)?;
        Ok(match &self.kind {
            AnisotropyKind::Euclidean => {
                let n = p.norm();
                (Mat2::identity() - p * p.transpose() / (n * n)) / n
            }
            AnisotropyKind::Quadratic(a) => {
                let phi = self.eval(p);
                let ap = a * p;
                (a - ap * ap.transpose() / (phi * phi)) / phi
            }
            AnisotropyKind::Custom(f) => match f.hess(p) {
                Some(h) => h,
                None => self.fd_hess(p),
            },
        })
    }

    fn fd_grad(&self, p: Vec2) -> Vec2 {
        let h = GRAD_STEP * p.norm().max(1.0);
        let ex = Vec2::new(h, 0.0);
        let ey = Vec2::new(0.0, h);
        Vec2::new(
            (self.eval(p + ex) - self.eval(p - ex)) / (2.0 * h),
            (self.eval(p + ey) - self.eval(p - ey)) / (2.0 * h),
        )
    }

    fn fd_hess(&self, p: Vec2) -> Mat2 {
        let h = HESS_STEP * p.norm().max(1.0);
        let e = [Vec2::new(h, 0.0), Vec2::new(0.0, h)];
        let f0 = self.eval(p);
        let mut m = Mat2::zeros();
        for i in 0..2 {
            m[(i, i)] = (self.eval(p + e[i]) - 2.0 * f0 + self.eval(p - e[i])) / (h * h);
        }
        let off =
            (self.eval(p + e[0] + e[1]) - self.eval(p + e[0] - e[1]) - self.eval(p - e[0] + e[1])
                + self.eval(p - e[0] - e[1]))
                / (4.0 * h * h);
        m[(0, 1)] = off;
        m[(1, 0)] = off;
        m
    }

    /// The polar norm φ°(x) = sup{ζ·x : φ(ζ) ≤ 1}.
    pub fn polar(&self) -> Result<Self> {
        match &self.kind {
            AnisotropyKind::Euclidean => Ok(Self::euclidean()),
            AnisotropyKind::Quadratic(a) => {
                let inv = a
                    .try_inverse()
                    .ok_or_else(|| Error::NotElliptic(a.determinant()))?;
                Self::quadratic((inv + inv.transpose()) * 0.5)
            }
            // The polar of an elliptic norm is elliptic, so sampling is deferred.
            AnisotropyKind::Custom(_) => Ok(Self {
                kind: AnisotropyKind::Custom(Arc::new(NumericPolar { base: self.clone() })),
                ellipticity: OnceLock::new(),
            }),
        }
    }

    /// Cahn–Hoffmann vector N = Dφ(ν), meant to be called on a polar norm.
    pub fn cahn_hoffmann(&self, nu: Vec2) -> Result<Vec2> {
        self.grad(nu)
    }

    /// φ(ν)·(D²φ(ν)τ·τ), meant to be called on a polar norm.
    pub fn mobility_weight(&self, nu: Vec2, tau: Vec2) -> Result<f64> {
        let skew = nu.dot(&tau).abs();
        if skew > FRAME_TOL
            || (nu.norm() - 1.0).abs() > FRAME_TOL
            || (tau.norm() - 1.0).abs() > FRAME_TOL
        {
            return Err(Error::NonOrthogonalFrame(skew));
        }
        Ok(self.eval(nu) * self.stiffness(nu, tau)?)
    }

    /// D²φ(ν)τ·τ.
    pub fn stiffness(&self, nu: Vec2, tau: Vec2) -> Result<f64> {
        Ok(tau.dot(&(self.hess(nu)? * tau)))
    }

    /// Points on the boundary of the unit ball {φ ≤ 1}, ordered by angle.
    pub fn wulff_samples(&self, m: usize) -> Result<Vec<Vec2>> {
        if m < 3 {
            return Err(Error::InvalidInput(format!(
                "wulff_samples needs m >= 3, got {m}"
            )));
        }
        Ok((0..m)
            .map(|k| {
                let psi = 2.0 * PI * k as f64 / m as f64;
                let u = Vec2::new(psi.cos(), psi.sin());
                u / self.eval(u)
            })
            .collect())
    }
}
