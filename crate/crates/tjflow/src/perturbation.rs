//! Random admissible height fields for flow experiments.
//!
//! A field is a sum of sine modes a·sin(kπx) per curve plus a junction mode
//! e^i·x with Σ α̃^i e^i = 0, scaled to a prescribed sup norm. Every term has
//! h″ = 0 at both ends, so κ_φ vanishes at the fixed endpoints. A final
//! correction c^i ψ(x) adjusts the end slopes until the Herring condition
//! holds, where ψ vanishes with its second derivative at both ends and has
//! ψ′(1) = 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::anisotropy::Anisotropy;
use crate::error::{Error, Result};
use crate::geometry::herring_residual;
use crate::reference_frame::{reconstruct, HeightField, ReferenceFrame};
use crate::{Mat2, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Target sup norm of the field before the Herring correction.
    pub amplitude: f64,
    /// Sine modes k = 1..=modes are drawn per curve.
    pub modes: usize,
    /// Whether to include the linear junction mode.
    pub junction_mode: bool,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self {
            amplitude: 0.0,
            modes: 3,
            junction_mode: true,
            seed: 0,
        }
    }
}

const GN_TOL: f64 = 1e-13;
const GN_MAX_ITERS: usize = 30;
const GN_STEP: f64 = 1e-7;

fn psi(x: f64) -> f64 {
    -7.0 / 8.0 * x + 1.25 * x.powi(3) - 3.0 / 8.0 * x.powi(5)
}

/// The uncorrected random field. Zero amplitude gives the zero field.
pub fn sine_perturbation(frame: &ReferenceFrame, spec: &PerturbationSpec) -> Result<HeightField> {
    if !(spec.amplitude >= 0.0) || !spec.amplitude.is_finite() {
        return Err(Error::InvalidInput(format!(
            "amplitude must be >= 0, got {}",
            spec.amplitude
        )));
    }
    let n = frame.nodes();
    if spec.amplitude == 0.0 {
        return Ok(HeightField::zeros(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coeffs: Vec<[f64; 3]> = (0..spec.modes)
        .map(|k| [0, 1, 2].map(|_| rng.random_range(-1.0..1.0) / (k + 1) as f64))
        .collect();
    let w = frame.weights();
    let ends = if spec.junction_mode {
        let (e1, e2): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        [e1, e2, -(w[0] * e1 + w[1] * e2) / w[2]]
    } else {
        [0.0; 3]
    };
    let raw = HeightField::from_fn(n, |i, x| {
        let waves: f64 = coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c[i] * ((k + 1) as f64 * PI * x).sin())
            .sum();
        waves + ends[i] * x
    })?;
    let sup = raw.max_abs();
    if sup == 0.0 {
        return Ok(raw);
    }
    Ok(raw.scaled(spec.amplitude / sup))
}

/// Adds c^i ψ to each component so that the reconstructed network meets the
/// Herring condition. Minimum-norm Gauss–Newton on c with a difference Jacobian.
pub fn herring_correct(
    frame: &ReferenceFrame,
    h: &HeightField,
    phi_polar: &Anisotropy,
) -> Result<HeightField> {
    let n = h.nodes();
    let shape = HeightField::from_fn(n, |_, x| psi(x))?;
    let apply = |c: &Vec3| -> HeightField {
        let mut out = h.clone();
        for i in 0..3 {
            for (v, s) in out.component_mut(i).iter_mut().zip(shape.component(i)) {
                *v += c[i] * s;
            }
        }
        out
    };
    let residual = |c: &Vec3| -> Result<nalgebra::Vector2<f64>> {
        herring_residual(&reconstruct(frame, &apply(c))?, phi_polar)
    };
    let mut c = Vec3::zeros();
    let mut r = residual(&c)?;
    for _ in 0..GN_MAX_ITERS {
        if r.norm() < GN_TOL {
            return Ok(apply(&c));
        }
        let mut jac = nalgebra::Matrix2x3::zeros();
        for k in 0..3 {
            let mut cp = c;
            cp[k] += GN_STEP;
            let mut cm = c;
            cm[k] -= GN_STEP;
            jac.set_column(k, &((residual(&cp)? - residual(&cm)?) / (2.0 * GN_STEP)));
        }
        let jjt: Mat2 = jac * jac.transpose();
        let y = jjt.try_inverse().ok_or_else(|| {
            Error::NewtonDivergence("Herring correction Jacobian is rank deficient".into())
        })? * r;
        let step = -(jac.transpose() * y);
        let mut t = 1.0;
        loop {
            let trial = c + step * t;
            let rt = residual(&trial)?;
            if rt.norm() < r.norm() {
                c = trial;
                r = rt;
                break;
            }
            t *= 0.5;
            if t < 1e-6 {
                if r.norm() < 1e3 * GN_TOL {
                    return Ok(apply(&c));
                }
                return Err(Error::NewtonDivergence(format!(
                    "Herring correction stalled at residual {:e}",
                    r.norm()
                )));
            }
        }
    }
    if r.norm() < 1e3 * GN_TOL {
        return Ok(apply(&c));
    }
    Err(Error::NewtonDivergence(format!(
        "Herring correction did not converge (residual {:e})",
        r.norm()
    )))
}

/// Random field satisfying h(0) = 0, Σα̃h(1) = 0, κ_φ(0) = 0 and the Herring condition.
pub fn compatible_perturbation(
    frame: &ReferenceFrame,
    phi_polar: &Anisotropy,
    spec: &PerturbationSpec,
) -> Result<HeightField> {
    let h = sine_perturbation(frame, spec)?;
    if h.max_abs() == 0.0 {
        return Ok(h);
    }
    herring_correct(frame, &h, phi_polar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference_frame::minimize;
    use crate::Vec2;

    fn frame(phi: &Anisotropy) -> ReferenceFrame {
        minimize(
            [
                Vec2::new(0.0, 0.0),
                Vec2::new(1.0, 0.0),
                Vec2::new(0.45, 0.8),
            ],
            phi,
            64,
        )
        .unwrap()
    }

    #[test]
    fn psi_boundary_values() {
        let h = 1e-4;
        let d2 = |x: f64| (psi(x + h) - 2.0 * psi(x) + psi(x - h)) / (h * h);
        assert!(psi(0.0).abs() < 1e-15 && psi(1.0).abs() < 1e-15);
        assert!(d2(0.0).abs() < 1e-6 && d2(1.0).abs() < 1e-6);
        assert!(((psi(1.0 + h) - psi(1.0 - h)) / (2.0 * h) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn sine_field_is_admissible_and_scaled() {
        let f = frame(&Anisotropy::euclidean());
        let spec = PerturbationSpec {
            amplitude: 0.01,
            seed: 7,
            ..Default::default()
        };
        let h = sine_perturbation(&f, &spec).unwrap();
        assert!((h.max_abs() - 0.01).abs() < 1e-15);
        assert_eq!(h.start_residual(), 0.0);
        assert!(h.junction_sum(f.weights()).abs() < 1e-15);
        assert_eq!(h, sine_perturbation(&f, &spec).unwrap());
        assert_ne!(
            h,
            sine_perturbation(&f, &PerturbationSpec { seed: 8, ..spec }).unwrap()
        );
    }

    #[test]
    fn corrected_field_meets_herring() {
        let phi = Anisotropy::quadratic(crate::Mat2::new(4.0, 0.0, 0.0, 1.0))
            .unwrap()
            .polar()
            .unwrap();
        let f = frame(&phi);
        let spec = PerturbationSpec {
            amplitude: 0.02 * f.min_length(),
            seed: 3,
            ..Default::default()
        };
        let h = compatible_perturbation(&f, &phi, &spec).unwrap();
        let net = reconstruct(&f, &h).unwrap();
        assert!(herring_residual(&net, &phi).unwrap().norm() < 1e-12);
        assert!(h.junction_sum(f.weights()).abs() < 1e-15);
        assert_eq!(h.start_residual(), 0.0);
    }
}
