//! Numerics for anisotropic curve shortening flow of a three-curve network
//! meeting at a triple junction with fixed outer endpoints.
//!
//! The pieces build on each other: [`anisotropy`] supplies the norm and its
//! polar, [`geometry`] discretizes curves and networks, [`reference_frame`]
//! finds the straight-line minimizer and writes nearby networks as normal
//! graphs over it, [`variations`] evaluates the energy landscape in those
//! coordinates, [`flow`] evolves networks, and [`diagnostics`] checks the
//! stability machinery on the results.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod anisotropy;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod perturbation;
pub mod reference_frame;
pub mod variations;

mod linalg;

pub use anisotropy::{Anisotropy, AnisotropyKind, CustomNorm};
pub use error::{Error, Result};
pub use geometry::{DiscreteCurve, JunctionData, Network};
pub use reference_frame::{HeightField, ReferenceFrame, Reparametrization};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

/// Anticlockwise rotation by 90 degrees.
#[inline]
pub fn rot90(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}
