//! The energy as a function of the height field, its first and second
//! variation, the W-gradient 𝓜(h) and the linear operator 𝓜′(0).
//!
//! Elements of W = L²([0,1])³ × ℝ² pair with height fields through
//! Σ∫u^i h^i dx + a¹h¹(1) + a²h²(1), with h³(1) eliminated by the junction
//! constraint Σ α̃^i h^i(1) = 0.
//!
//! The discrete energy is the anisotropic length of the polylines, so the
//! first variation below is its exact derivative: the interior part pairs
//! differences of the cell Cahn–Hoffmann vectors with the variation, and the
//! boundary part is the last cell's vector against the junction displacement.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::anisotropy::Anisotropy;
use crate::error::{Error, Result};
use crate::geometry::{energy, Network};
use crate::linalg::{d2, d2_end, sbp_slope_end, trapezoid};
use crate::reference_frame::{mu_of_h, reconstruct, HeightField, ReferenceFrame};
use crate::{rot90, Mat2, Vec2};

/// An element ((u^i), a¹, a²) of W.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientElement {
    pub u: [Vec<f64>; 3],
    pub a1: f64,
    pub a2: f64,
}

impl GradientElement {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            a1: 0.0,
            a2: 0.0,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            u: self
                .u
                .clone()
                .map(|v| v.into_iter().map(|x| s * x).collect()),
            a1: s * self.a1,
            a2: s * self.a2,
        }
    }

    /// ⟨h, g⟩ = Σ∫u^i h^i dx + a¹h¹(1) + a²h²(1).
    pub fn pair(&self, h: &HeightField) -> f64 {
        let dx = h.dx();
        let e = h.end_values();
        let mut s = self.a1 * e[0] + self.a2 * e[1];
        for i in 0..3 {
            let prod: Vec<f64> = self.u[i]
                .iter()
                .zip(h.component(i))
                .map(|(a, b)| a * b)
                .collect();
            s += trapezoid(&prod, dx);
        }
        s
    }
}

/// sqrt(Σ‖u^i‖²_{L²} + (a¹)² + (a²)²) with trapezoidal L² norms.
pub fn w_norm(g: &GradientElement) -> f64 {
    let n = g.u[0].len();
    let dx = 1.0 / (n - 1) as f64;
    let l2: f64 =
        g.u.iter()
            .map(|v| trapezoid(&v.iter().map(|x| x * x).collect::<Vec<_>>(), dx))
            .sum();
    (l2 + g.a1 * g.a1 + g.a2 * g.a2).sqrt()
}

/// E(Γ_h).
pub fn energy_of_h(frame: &ReferenceFrame, h: &HeightField, phi_polar: &Anisotropy) -> Result<f64> {
    energy(&reconstruct(frame, h)?, phi_polar)
}

/// Cahn–Hoffmann vectors Dφ°(R(p_{j+1} − p_j)) of every cell.
pub(crate) fn cell_charges(net: &Network, phi_polar: &Anisotropy) -> Result<[Vec<Vec2>; 3]> {
    net.check_regular()?;
    let mut out: [Vec<Vec2>; 3] = Default::default();
    for (i, c) in net.curves().iter().enumerate() {
        out[i] = c
            .points()
            .windows(2)
            .enumerate()
            .map(|(node, w)| {
                phi_polar
                    .grad(rot90(w[1] - w[0]))
                    .map_err(|_| Error::DegenerateCurve {
                        curve: i,
                        node,
                        speed: (w[1] - w[0]).norm(),
                    })
            })
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

/// Displacements h^i ν*^i + μ^i(h) τ*^i at every node.
fn displacements(frame: &ReferenceFrame, h: &HeightField) -> [Vec<Vec2>; 3] {
    let mu = mu_of_h(frame, h);
    [0, 1, 2].map(|i| {
        h.component(i)
            .iter()
            .zip(&mu[i])
            .map(|(a, b)| frame.nu()[i] * *a + frame.tau()[i] * *b)
            .collect()
    })
}

fn check_grid(frame: &ReferenceFrame, h: &HeightField) -> Result<()> {
    if h.nodes() != frame.nodes() {
        return Err(Error::InvalidInput(format!(
            "height field has {} nodes, frame has {}",
            h.nodes(),
            frame.nodes()
        )));
    }
    Ok(())
}

/// E′(h₀)h₁.
pub fn first_variation(
    frame: &ReferenceFrame,
    h0: &HeightField,
    h1: &HeightField,
    phi_polar: &Anisotropy,
) -> Result<f64> {
    check_grid(frame, h0)?;
    check_grid(frame, h1)?;
    let charges = cell_charges(&reconstruct(frame, h0)?, phi_polar)?;
    let zeta = displacements(frame, h1);
    let n = frame.nodes();
    let mut interior = 0.0;
    let mut boundary = 0.0;
    for i in 0..3 {
        let c = &charges[i];
        for j in 1..n - 1 {
            interior -= (c[j] - c[j - 1]).dot(&rot90(zeta[i][j]));
        }
        boundary += c[n - 2].dot(&rot90(zeta[i][n - 1]));
    }
    Ok(interior + boundary)
}

/// Only the junction term of E′(h₀)h₁; vanishes when the cells at the
/// junction satisfy the Herring condition.
pub fn first_variation_boundary(
    frame: &ReferenceFrame,
    h0: &HeightField,
    h1: &HeightField,
    phi_polar: &Anisotropy,
) -> Result<f64> {
    let charges = cell_charges(&reconstruct(frame, h0)?, phi_polar)?;
    let zeta = displacements(frame, h1);
    let n = frame.nodes();
    Ok((0..3)
        .map(|i| charges[i][n - 2].dot(&rot90(zeta[i][n - 1])))
        .sum())
}

/// Folds nodal junction charges c^l into (a¹, a²) using h³(1) = −(α̃¹h¹(1) + α̃²h²(1))/α̃³.
fn fold_charges(c: [f64; 3], w: &[f64; 3]) -> (f64, f64) {
    (c[0] - w[0] / w[2] * c[2], c[1] - w[1] / w[2] * c[2])
}

/// The W-gradient 𝓜(h₀) with ⟨h₁, 𝓜(h₀)⟩ = E′(h₀)h₁ for every admissible h₁.
pub fn gradient_m(
    frame: &ReferenceFrame,
    h0: &HeightField,
    phi_polar: &Anisotropy,
) -> Result<GradientElement> {
    check_grid(frame, h0)?;
    let charges = cell_charges(&reconstruct(frame, h0)?, phi_polar)?;
    let n = frame.nodes();
    let dx = frame.dx();
    let im = frame.i_matrix();
    let (nu, tau) = (frame.nu(), frame.tau());
    let mut g = GradientElement::zeros(n);

    // Vector charge per node, then its normal part plus the tangential parts
    // routed through 𝓘 (μ^k = Σ_l 𝓘_kl h^l).
    let project = |v: [Vec2; 3]| -> [f64; 3] {
        [0, 1, 2]
            .map(|l| v[l].dot(&nu[l]) + (0..3).map(|k| im[(k, l)] * v[k].dot(&tau[k])).sum::<f64>())
    };
    for j in 1..n - 1 {
        let v = [0, 1, 2].map(|i| rot90(charges[i][j] - charges[i][j - 1]));
        let p = project(v);
        for l in 0..3 {
            g.u[l][j] = p[l] / dx;
        }
    }
    for l in 0..3 {
        let u = &mut g.u[l];
        u[0] = 2.0 * u[1] - u[2];
        u[n - 1] = 2.0 * u[n - 2] - u[n - 3];
    }
    let b = project([0, 1, 2].map(|i| -rot90(charges[i][n - 2])));
    let c = [0, 1, 2].map(|l| b[l] - 0.5 * dx * g.u[l][n - 1]);
    (g.a1, g.a2) = fold_charges(c, frame.weights());
    Ok(g)
}

/// D^i/|(γ*^i)′| with D^i = D²φ°(ν*^i)τ*^i·τ*^i.
pub(crate) fn scaled_stiffness(frame: &ReferenceFrame, phi_polar: &Anisotropy) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = phi_polar.stiffness(frame.nu()[i], frame.tau()[i])? / frame.lengths()[i];
    }
    Ok(out)
}

/// 𝓜′(0)h₀ evaluated with the one-sided stencils at x = 1.
fn apply_mprime0(coef: &[f64; 3], weights: &[f64; 3], h: &HeightField) -> GradientElement {
    let dx = h.dx();
    let mut g = GradientElement::zeros(h.nodes());
    let mut c = [0.0; 3];
    for i in 0..3 {
        let hi = h.component(i);
        g.u[i] = d2(hi, dx).into_iter().map(|v| -coef[i] * v).collect();
        c[i] = coef[i] * sbp_slope_end(hi, dx);
    }
    (g.a1, g.a2) = fold_charges(c, weights);
    g
}

/// E″(0)h₀h₁ = −Σ∫(D^i/L_i)(h₀^i)″h₁^i dx + Σ(D^i/L_i)(h₀^i)′(1)h₁^i(1).
pub fn second_variation(
    frame: &ReferenceFrame,
    h0: &HeightField,
    h1: &HeightField,
    phi_polar: &Anisotropy,
) -> Result<f64> {
    check_grid(frame, h0)?;
    check_grid(frame, h1)?;
    let coef = scaled_stiffness(frame, phi_polar)?;
    let dx = frame.dx();
    let mut s = 0.0;
    for i in 0..3 {
        let a = h0.component(i);
        let b = h1.component(i);
        let mut prod: Vec<f64> = d2(a, dx).iter().zip(b).map(|(x, y)| x * y).collect();
        let n = prod.len();
        prod[n - 1] = d2_end(a, dx) * b[n - 1];
        s += coef[i] * (sbp_slope_end(a, dx) * b[n - 1] - trapezoid(&prod, dx));
    }
    Ok(s)
}

/// Boundary matrix F built from D^i and the junction weights, with its determinant.
pub fn boundary_matrix_f(frame: &ReferenceFrame, phi_polar: &Anisotropy) -> Result<(Mat2, f64)> {
    let mut d = [0.0; 3];
    for i in 0..3 {
        d[i] = phi_polar.stiffness(frame.nu()[i], frame.tau()[i])?;
    }
    let w = frame.weights();
    let (r1, r2) = (w[0] / w[2], w[1] / w[2]);
    let f = Mat2::new(
        d[0] + r1 * r1 * d[2],
        r1 * r2 * d[2],
        r1 * r2 * d[2],
        d[1] + r2 * r2 * d[2],
    );
    let det = f.determinant();
    if !(det > 0.0) {
        return Err(Error::InvalidInput(format!(
            "boundary matrix F has det {det:e}"
        )));
    }
    Ok((f, det))
}

/// det F expanded as D¹D² + D¹D³(α̃²/α̃³)² + D²D³(α̃¹/α̃³)².
pub fn boundary_det_expansion(frame: &ReferenceFrame, phi_polar: &Anisotropy) -> Result<f64> {
    let mut d = [0.0; 3];
    for i in 0..3 {
        d[i] = phi_polar.stiffness(frame.nu()[i], frame.tau()[i])?;
    }
    let w = frame.weights();
    let (r1, r2) = (w[0] / w[2], w[1] / w[2]);
    Ok(d[0] * d[1] + d[0] * d[2] * r2 * r2 + d[1] * d[2] * r1 * r1)
}

/// 𝓜′(0) on the constrained space V_N.
///
/// Parameters are the interior values of h¹, h², h³ (curve by curve) followed
/// by h¹(1) and h²(1); h³(1) is eliminated and h(0) = 0. Outputs are the three
/// nodal u-vectors followed by a¹ and a².
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    n: usize,
    weights: [f64; 3],
    coef: [f64; 3],
    matrix: DMatrix<f64>,
}

impl DiscreteOperator {
    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn params(&self) -> usize {
        3 * (self.n - 2) + 2
    }

    pub fn outputs(&self) -> usize {
        3 * self.n + 2
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Height field for a parameter vector.
    pub fn field(&self, p: &DVector<f64>) -> HeightField {
        let n = self.n;
        let mut h = HeightField::zeros(n);
        for i in 0..3 {
            let v = h.component_mut(i);
            v[1..n - 1].copy_from_slice(&p.as_slice()[i * (n - 2)..(i + 1) * (n - 2)]);
        }
        let m = 3 * (n - 2);
        let (e1, e2) = (p[m], p[m + 1]);
        let w = self.weights;
        h.component_mut(0)[n - 1] = e1;
        h.component_mut(1)[n - 1] = e2;
        h.component_mut(2)[n - 1] = -(w[0] * e1 + w[1] * e2) / w[2];
        h
    }

    /// Parameter vector of an admissible field; the third end value is dropped.
    pub fn params_of(&self, h: &HeightField) -> DVector<f64> {
        let n = self.n;
        let mut p = DVector::zeros(self.params());
        for i in 0..3 {
            p.as_mut_slice()[i * (n - 2)..(i + 1) * (n - 2)]
                .copy_from_slice(&h.component(i)[1..n - 1]);
        }
        let e = h.end_values();
        p[3 * (n - 2)] = e[0];
        p[3 * (n - 2) + 1] = e[1];
        p
    }

    fn flatten(&self, g: &GradientElement) -> DVector<f64> {
        let n = self.n;
        let mut v = DVector::zeros(self.outputs());
        for i in 0..3 {
            v.as_mut_slice()[i * n..(i + 1) * n].copy_from_slice(&g.u[i]);
        }
        v[3 * n] = g.a1;
        v[3 * n + 1] = g.a2;
        v
    }

    pub fn apply(&self, h: &HeightField) -> GradientElement {
        apply_mprime0(&self.coef, &self.weights, h)
    }

    /// Row p of the pairing: ⟨field(e_p), g⟩ = (K^T flatten(g))_p.
    fn pairing_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let dx = 1.0 / (n - 1) as f64;
        let mut k = DMatrix::zeros(self.outputs(), self.params());
        for q in 0..self.params() {
            let mut e = DVector::zeros(self.params());
            e[q] = 1.0;
            let h = self.field(&e);
            for i in 0..3 {
                let hi = h.component(i);
                for j in 0..n {
                    let wgt = if j == 0 || j == n - 1 { 0.5 * dx } else { dx };
                    k[(i * n + j, q)] = wgt * hi[j];
                }
            }
            let ends = h.end_values();
            k[(3 * n, q)] = ends[0];
            k[(3 * n + 1, q)] = ends[1];
        }
        k
    }

    /// Quadratic form B_pq = ⟨field(e_p), 𝓜′(0) field(e_q)⟩.
    pub fn quadratic_form(&self) -> DMatrix<f64> {
        self.pairing_matrix().transpose() * &self.matrix
    }

    /// Singular values of the rectangular matrix, ascending.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self
            .matrix
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .collect();
        s.sort_by(|a, b| a.total_cmp(b));
        s
    }

    /// Eigenvalues of 𝓜′(0) relative to the W inner product on V_N, i.e. of
    /// B v = λ G v with G the Gram matrix of the embedding V_N → W. Ascending.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        let k = self.pairing_matrix();
        let b = k.transpose() * &self.matrix;
        let b = (&b + b.transpose()) * 0.5;
        let mut emb = DMatrix::zeros(self.outputs(), self.params());
        for q in 0..self.params() {
            let mut e = DVector::zeros(self.params());
            e[q] = 1.0;
            let h = self.field(&e);
            let mut g = GradientElement::zeros(self.n);
            for i in 0..3 {
                g.u[i] = h.component(i).to_vec();
            }
            let ends = h.end_values();
            g.a1 = ends[0];
            g.a2 = ends[1];
            emb.set_column(q, &self.flatten(&g));
        }
        let gram = k.transpose() * emb;
        let gram = (&gram + gram.transpose()) * 0.5;
        let chol = gram.cholesky().ok_or_else(|| {
            Error::InvalidInput("Gram matrix of V_N is not positive definite".into())
        })?;
        let l = chol.l();
        let y = l
            .solve_lower_triangular(&b)
            .ok_or_else(|| Error::InvalidInput("singular Cholesky factor".into()))?;
        let c = l
            .solve_lower_triangular(&y.transpose())
            .ok_or_else(|| Error::InvalidInput("singular Cholesky factor".into()))?;
        let c = (&c + c.transpose()) * 0.5;
        let mut ev: Vec<f64> = c.symmetric_eigenvalues().iter().cloned().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        Ok(ev)
    }

    /// `index,eigenvalue_real,eigenvalue_imag`.
    pub fn spectrum_csv(&self) -> Result<String> {
        let mut s = String::from("index,eigenvalue_real,eigenvalue_imag\n");
        for (k, v) in self.spectrum()?.iter().enumerate() {
            s.push_str(&format!("{k},{v:e},0\n"));
        }
        Ok(s)
    }
}

/// Assembles 𝓜′(0) for the frame at `n` nodes.
pub fn assemble_mprime0(
    frame: &ReferenceFrame,
    phi_polar: &Anisotropy,
    n: usize,
) -> Result<DiscreteOperator> {
    if n < crate::geometry::MIN_NODES {
        return Err(Error::InvalidInput(format!(
            "operator needs at least 8 nodes, got {n}"
        )));
    }
    let coef = scaled_stiffness(frame, phi_polar)?;
    let mut op = DiscreteOperator {
        n,
        weights: *frame.weights(),
        coef,
        matrix: DMatrix::zeros(0, 0),
    };
    let mut m = DMatrix::zeros(op.outputs(), op.params());
    for q in 0..op.params() {
        let mut e = DVector::zeros(op.params());
        e[q] = 1.0;
        let col = op.flatten(&op.apply(&op.field(&e)));
        m.set_column(q, &col);
    }
    op.matrix = m;
    Ok(op)
}
