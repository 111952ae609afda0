//! Experiment configuration read from TOML.

use serde::{Deserialize, Serialize};
use tjflow::flow::{FlowMode, FlowOptions};
use tjflow::perturbation::PerturbationSpec;
use tjflow::reference_frame::FrameOptions;
use tjflow::{Anisotropy, Mat2, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub anisotropy: AnisotropyConfig,
    #[serde(default)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub variations: VariationsConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn default_out_dir() -> String {
    "tjflow-out".into()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: default_out_dir(),
            anisotropy: AnisotropyConfig::default(),
            frame: FrameConfig::default(),
            perturbation: PerturbationConfig::default(),
            flow: FlowConfig::default(),
            variations: VariationsConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnisotropyFamily {
    Euclidean,
    Quadratic,
}

/// The anisotropy φ whose unit ball is the Wulff shape; the energy density is its polar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnisotropyConfig {
    pub kind: AnisotropyFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<[[f64; 2]; 2]>,
}

impl Default for AnisotropyConfig {
    fn default() -> Self {
        Self {
            kind: AnisotropyFamily::Euclidean,
            matrix: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub endpoints: [[f64; 2]; 3],
    pub newton_tol: f64,
    pub max_iters: usize,
    pub closeness_gate: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        let o = FrameOptions::default();
        Self {
            endpoints: [[0.0, 0.0], [0.12, 0.0], [0.054, 0.102]],
            newton_tol: o.newton_tol,
            max_iters: o.max_iters,
            closeness_gate: o.closeness_gate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Sup norm of h₀ as a fraction of the shortest reference segment.
    pub amplitude: f64,
    pub modes: usize,
    pub junction_mode: bool,
    pub seed: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.02,
            modes: 3,
            junction_mode: true,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub mode: FlowMode,
    pub newton_tol: f64,
    pub snapshot_stride: usize,
    /// Stop once ‖𝓜‖_W is below this; defaults to 1e-9·(1 + E*).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationarity_floor: Option<f64>,
    /// Largest residual of the initial-data checks accepted by `flow`.
    pub admissibility_tol: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let o = FlowOptions::default();
        Self {
            n: 128,
            dt: o.dt,
            t_end: o.t_end,
            mode: FlowMode::Parametric,
            newton_tol: o.newton_tol,
            snapshot_stride: 100,
            stationarity_floor: None,
            admissibility_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationsConfig {
    /// Grid size of the exported 𝓜′(0) spectrum.
    #[serde(rename = "N")]
    pub n: usize,
    pub spectrum: bool,
}

impl Default for VariationsConfig {
    fn default() -> Self {
        Self {
            n: 16,
            spectrum: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub lsi: bool,
    pub lopatinskii_shapiro: bool,
    pub convergence: bool,
    /// ‖𝓜‖_W below which a trajectory counts as converged.
    pub convergence_floor: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            lsi: true,
            lopatinskii_shapiro: true,
            convergence: true,
            convergence_floor: 1e-8,
        }
    }
}

/// A config error naming the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

fn bad(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.into(),
        message: message.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(field, format!("must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad("", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.anisotropy.kind == AnisotropyFamily::Quadratic && self.anisotropy.matrix.is_none() {
            return Err(bad(
                "anisotropy.matrix",
                "required for the quadratic family",
            ));
        }
        if self.anisotropy.kind == AnisotropyFamily::Euclidean && self.anisotropy.matrix.is_some() {
            return Err(bad(
                "anisotropy.matrix",
                "only allowed for the quadratic family",
            ));
        }
        self.anisotropy_phi()?;
        let p = self.endpoints();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            if (p[i] - p[j]).norm() <= 1e-12 * (1.0 + p[i].norm()) {
                return Err(bad(
                    "frame.endpoints",
                    format!("endpoints {} and {} coincide", i + 1, j + 1),
                ));
            }
        }
        if p.iter().any(|q| !q.x.is_finite() || !q.y.is_finite()) {
            return Err(bad("frame.endpoints", "coordinates must be finite"));
        }
        positive("frame.newton_tol", self.frame.newton_tol)?;
        positive("frame.closeness_gate", self.frame.closeness_gate)?;
        if self.frame.max_iters == 0 {
            return Err(bad("frame.max_iters", "must be at least 1"));
        }
        if !(self.perturbation.amplitude >= 0.0) || !self.perturbation.amplitude.is_finite() {
            return Err(bad(
                "perturbation.amplitude",
                format!("must be >= 0, got {}", self.perturbation.amplitude),
            ));
        }
        if self.flow.n < tjflow::geometry::MIN_NODES {
            return Err(bad(
                "flow.N",
                format!(
                    "must be at least {}, got {}",
                    tjflow::geometry::MIN_NODES,
                    self.flow.n
                ),
            ));
        }
        positive("flow.dt", self.flow.dt)?;
        positive("flow.t_end", self.flow.t_end)?;
        positive("flow.newton_tol", self.flow.newton_tol)?;
        positive("flow.admissibility_tol", self.flow.admissibility_tol)?;
        if self.flow.snapshot_stride == 0 {
            return Err(bad("flow.snapshot_stride", "must be at least 1"));
        }
        if let Some(f) = self.flow.stationarity_floor {
            if !(f >= 0.0) {
                return Err(bad(
                    "flow.stationarity_floor",
                    format!("must be >= 0, got {f}"),
                ));
            }
        }
        if self.variations.n < tjflow::geometry::MIN_NODES {
            return Err(bad(
                "variations.N",
                format!("must be at least {}", tjflow::geometry::MIN_NODES),
            ));
        }
        positive(
            "diagnostics.convergence_floor",
            self.diagnostics.convergence_floor,
        )?;
        Ok(())
    }

    /// The configured φ.
    pub fn anisotropy_phi(&self) -> Result<Anisotropy, ConfigError> {
        match self.anisotropy.kind {
            AnisotropyFamily::Euclidean => Ok(Anisotropy::euclidean()),
            AnisotropyFamily::Quadratic => {
                let m = self
                    .anisotropy
                    .matrix
                    .ok_or_else(|| bad("anisotropy.matrix", "missing"))?;
                if m[0][1] != m[1][0] {
                    return Err(bad("anisotropy.matrix", "must be symmetric"));
                }
                Anisotropy::quadratic(Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1]))
                    .map_err(|e| bad("anisotropy.matrix", e.to_string()))
            }
        }
    }

    /// The energy density φ°.
    pub fn anisotropy_polar(&self) -> Result<Anisotropy, ConfigError> {
        self.anisotropy_phi()?
            .polar()
            .map_err(|e| bad("anisotropy.matrix", e.to_string()))
    }

    pub fn endpoints(&self) -> [Vec2; 3] {
        self.frame.endpoints.map(|p| Vec2::new(p[0], p[1]))
    }

    pub fn frame_options(&self) -> FrameOptions {
        FrameOptions {
            newton_tol: self.frame.newton_tol,
            max_iters: self.frame.max_iters,
            closeness_gate: self.frame.closeness_gate,
        }
    }

    pub fn flow_options(&self) -> FlowOptions {
        FlowOptions {
            dt: self.flow.dt,
            t_end: self.flow.t_end,
            newton_tol: self.flow.newton_tol,
            snapshot_stride: self.flow.snapshot_stride,
            stationarity_floor: self.flow.stationarity_floor,
            ..FlowOptions::default()
        }
    }

    /// Perturbation spec with the amplitude made absolute.
    pub fn perturbation_spec(&self, min_length: f64) -> PerturbationSpec {
        PerturbationSpec {
            amplitude: self.perturbation.amplitude * min_length,
            modes: self.perturbation.modes,
            junction_mode: self.perturbation.junction_mode,
            seed: self.perturbation.seed,
        }
    }
}
