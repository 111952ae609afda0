use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate input: |p| = {0:e} is below the differentiability floor")]
    DegenerateInput(f64),
    #[error("anisotropy is not elliptic (smallest sampled eigenvalue of D²(φ²) = {0:e})")]
    NotElliptic(f64),
    #[error("frame is not orthonormal (|ν·τ| = {0:e})")]
    NonOrthogonalFrame(f64),
    #[error("degenerate curve {curve}: |γ′| = {speed:e} at node {node}")]
    DegenerateCurve {
        curve: usize,
        node: usize,
        speed: f64,
    },
    #[error("degenerate junction angles {0:?}")]
    DegenerateAngles([f64; 3]),
    #[error("minimizer collapsed onto endpoint P{endpoint} (distance {distance:e})")]
    DegenerateMinimizer { endpoint: usize, distance: f64 },
    #[error("newton iteration diverged: {0}")]
    NewtonDivergence(String),
    #[error("reparametrization of curve {0} is not monotone")]
    NonMonotoneReparametrization(usize),
    #[error("F_h is singular at node {node} (det = {det:e})")]
    SingularFh { node: usize, det: f64 },
    #[error("junction newton diverged (residual {0:e})")]
    JunctionNewtonDivergence(f64),
    #[error("step rejected after {halvings} halvings (energy increase {increase:e})")]
    StepRejected { halvings: u32, increase: f64 },
    #[error("maximum number of steps ({0}) exceeded")]
    MaxStepsExceeded(usize),
    #[error("curve {curve} collapsed (length {length:e}) at t = {t}")]
    CollapseDetected { curve: usize, length: f64, t: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("energy reached the minimum within the noise floor at sample {0}")]
    EnergyAtMinimum(usize),
    #[error("trajectory did not converge: {0}")]
    NotConverged(String),
    #[error("invalid spectral parameter {0} (real part must be positive)")]
    InvalidLambda(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
