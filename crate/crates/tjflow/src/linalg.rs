//! Grid stencils, quadrature and a tridiagonal solver shared by the modules.

use std::ops::{Add, Mul, Sub};

pub(crate) trait GridValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
}
impl<T> GridValue for T where T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T> {}

/// First derivative: central inside, second-order one-sided at both ends.
pub(crate) fn d1<T: GridValue>(f: &[T], dx: f64) -> Vec<T> {
    let n = f.len();
    let mut out = Vec::with_capacity(n);
    out.push((f[1] * 4.0 - f[0] * 3.0 - f[2]) * (0.5 / dx));
    for j in 1..n - 1 {
        out.push((f[j + 1] - f[j - 1]) * (0.5 / dx));
    }
    out.push((f[n - 1] * 3.0 - f[n - 2] * 4.0 + f[n - 3]) * (0.5 / dx));
    out
}

/// Second derivative: central inside, second-order one-sided at both ends.
pub(crate) fn d2<T: GridValue>(f: &[T], dx: f64) -> Vec<T> {
    let n = f.len();
    let s = 1.0 / (dx * dx);
    let mut out = Vec::with_capacity(n);
    out.push((f[0] * 2.0 - f[1] * 5.0 + f[2] * 4.0 - f[3]) * s);
    for j in 1..n - 1 {
        out.push((f[j + 1] - f[j] * 2.0 + f[j - 1]) * s);
    }
    out.push((f[n - 1] * 2.0 - f[n - 2] * 5.0 + f[n - 3] * 4.0 - f[n - 4]) * s);
    out
}

/// One-sided second difference at the last node.
pub(crate) fn d2_end(f: &[f64], dx: f64) -> f64 {
    let n = f.len();
    (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / (dx * dx)
}

/// Second-order slope at the last node that is consistent with summation by
/// parts against the trapezoid rule: backward difference plus half a cell of
/// the one-sided second difference.
pub(crate) fn sbp_slope_end(f: &[f64], dx: f64) -> f64 {
    let n = f.len();
    (f[n - 1] - f[n - 2]) / dx + 0.5 * dx * d2_end(f, dx)
}

pub(crate) fn trapezoid(f: &[f64], dx: f64) -> f64 {
    let n = f.len();
    let inner: f64 = f[1..n - 1].iter().sum();
    dx * (inner + 0.5 * (f[0] + f[n - 1]))
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored.
pub(crate) fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    x
}

/// Clamped cubic spline through uniformly spaced samples on [0,1], with end
/// slopes from third-order one-sided differences.
#[derive(Clone, Debug)]
pub(crate) struct UniformSpline<T: GridValue> {
    values: Vec<T>,
    slopes: Vec<T>,
    dx: f64,
}

impl<T: GridValue> UniformSpline<T> {
    pub(crate) fn new(values: &[T], zero: T) -> Self {
        let n = values.len();
        let dx = 1.0 / (n - 1) as f64;
        let start = (values[0] * (-11.0) + values[1] * 18.0 - values[2] * 9.0 + values[3] * 2.0)
            * (1.0 / (6.0 * dx));
        let end = (values[n - 1] * 11.0 - values[n - 2] * 18.0 + values[n - 3] * 9.0
            - values[n - 4] * 2.0)
            * (1.0 / (6.0 * dx));
        // Interior slopes m satisfy m_{j-1} + 4 m_j + m_{j+1} = 3 (f_{j+1} - f_{j-1}) / dx.
        let m = n - 2;
        let lower = vec![1.0; m];
        let diag = vec![4.0; m];
        let upper = vec![1.0; m];
        let mut slopes = vec![zero; n];
        slopes[0] = start;
        slopes[n - 1] = end;
        let rhs: Vec<T> = (1..n - 1)
            .map(|j| {
                let mut r = (values[j + 1] - values[j - 1]) * (3.0 / dx);
                if j == 1 {
                    r = r - start;
                }
                if j == n - 2 {
                    r = r - end;
                }
                r
            })
            .collect();
        let interior = solve_tridiagonal_generic(&lower, &diag, &upper, &rhs);
        slopes[1..n - 1].copy_from_slice(&interior);
        Self {
            values: values.to_vec(),
            slopes,
            dx,
        }
    }

    fn cell(&self, x: f64) -> (usize, f64) {
        let n = self.values.len();
        let s = (x / self.dx).clamp(0.0, (n - 1) as f64);
        let j = (s.floor() as usize).min(n - 2);
        (j, s - j as f64)
    }

    pub(crate) fn eval(&self, x: f64) -> T {
        let (j, t) = self.cell(x);
        let (t2, t3) = (t * t, t * t * t);
        self.values[j] * (2.0 * t3 - 3.0 * t2 + 1.0)
            + self.slopes[j] * ((t3 - 2.0 * t2 + t) * self.dx)
            + self.values[j + 1] * (-2.0 * t3 + 3.0 * t2)
            + self.slopes[j + 1] * ((t3 - t2) * self.dx)
    }

    pub(crate) fn derivative(&self, x: f64) -> T {
        let (j, t) = self.cell(x);
        let t2 = t * t;
        self.values[j] * ((6.0 * t2 - 6.0 * t) / self.dx)
            + self.slopes[j] * (3.0 * t2 - 4.0 * t + 1.0)
            + self.values[j + 1] * ((-6.0 * t2 + 6.0 * t) / self.dx)
            + self.slopes[j + 1] * (3.0 * t2 - 2.0 * t)
    }
}

fn solve_tridiagonal_generic<T: GridValue>(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[T],
) -> Vec<T> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d: Vec<T> = Vec::with_capacity(n);
    c[0] = upper[0] / diag[0];
    d.push(rhs[0] * (1.0 / diag[0]));
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        let v = (rhs[i] - d[i - 1] * lower[i]) * (1.0 / m);
        d.push(v);
    }
    for i in (0..n - 1).rev() {
        d[i] = d[i] - d[i + 1] * c[i];
    }
    d
}
