//! Closed-form pointwise objects: the relativistic velocity map, its
//! Jacobian, the Darwin matrix kernel and its spatial gradient.
//!
//! Softening replaces each point charge by a Plummer sphere of radius `ε`.
//! The Coulomb kernel then becomes `1/√(r² + ε²)` and the Darwin kernel
//! becomes the Darwin kernel of that smeared source,
//!
//! ```text
//! K_ε(x, y) = α(r) id + β(r) d ⊗ d,   d = y − x,  r = |d|,
//! ```
//!
//! obtained from `K = 2 id/r − ∇∇|d|` by replacing `1/r` with the Plummer
//! potential and `|d|` with the matching radial solution of `Δh = 2/√(r²+ε²)`.
//! The result is symmetric, smooth at `r = 0`, exactly divergence free in
//! `x`, and equals `[id + ω⊗ω]/r` when `ε = 0`.

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Tensor3, Vec3};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

/// Plummer softening length. `ε = 0` is the exact singular kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Softening(f64);

impl Softening {
    pub const NONE: Softening = Softening(0.0);

    pub fn new(eps: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "softening must be finite and nonnegative, got {eps}"
            )));
        }
        Ok(Softening(eps))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_exact(self) -> bool {
        self.0 == 0.0
    }
}

/// `v(g) = g / √(1 + |g|²)`.
pub fn velocity(g: Vec3) -> Vec3 {
    g.scale(1.0 / (1.0 + g.norm_sq()).sqrt())
}

/// `Dv(g) = (1+|g|²)^{-1/2} [id − g⊗g / (1+|g|²)]`.
pub fn velocity_jacobian(g: Vec3) -> Mat3 {
    let q = 1.0 + g.norm_sq();
    let inv = 1.0 / q.sqrt();
    let mut m = g.outer(g).scale(-1.0 / q);
    for k in 0..3 {
        m.0[k][k] += 1.0;
    }
    m.scale(inv)
}

/// Smallest eigenvalue of `Dv(g)`, attained along `g`: `(1+|g|²)^{-3/2}`.
pub fn velocity_jacobian_min_eigenvalue(g: Vec3) -> f64 {
    (1.0 + g.norm_sq()).powf(-1.5)
}

/// Closed-form determinant `(1+|g|²)^{-5/2}`.
pub fn velocity_jacobian_det(g: Vec3) -> f64 {
    (1.0 + g.norm_sq()).powf(-2.5)
}

// Below this value of r/ε the radial coefficients are summed from their
// Taylor series; above it the closed forms lose fewer than three digits.
const SERIES_CUTOFF: f64 = 0.3;
const SERIES_TERMS: usize = 20;

struct SeriesCoefficients {
    q: [f64; SERIES_TERMS],
    b: [f64; SERIES_TERMS],
    db: [f64; SERIES_TERMS],
}

/// Taylor coefficients in `u²` of `q(u)`, `B(u)` and `B'(u)/u`, built from
/// `binom(-1/2, n)`.
fn series_coefficients() -> &'static SeriesCoefficients {
    static COEFFS: OnceLock<SeriesCoefficients> = OnceLock::new();
    COEFFS.get_or_init(|| {
        let mut c = [0.0; SERIES_TERMS + 2];
        c[0] = 1.0;
        for n in 1..c.len() {
            c[n] = c[n - 1] * -(2.0 * n as f64 - 1.0) / (2.0 * n as f64);
        }
        let mut out = SeriesCoefficients {
            q: [0.0; SERIES_TERMS],
            b: [0.0; SERIES_TERMS],
            db: [0.0; SERIES_TERMS],
        };
        for m in 0..SERIES_TERMS {
            let n = m as f64;
            out.q[m] = 2.0 * c[m] / (2.0 * n + 3.0);
            let n1 = n + 1.0;
            out.b[m] = -4.0 * n1 * c[m + 1] / (2.0 * n1 + 3.0);
            let n2 = n + 2.0;
            out.db[m] = -4.0 * n2 * (2.0 * n2 - 2.0) * c[m + 2] / (2.0 * n2 + 3.0);
        }
        out
    })
}

fn horner(coeffs: &[f64], w: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * w + c)
}

/// Radial coefficients of the (softened) Darwin kernel at separation `r`.
///
/// `K = alpha·id + beta·d⊗d` and
/// `∂_{x_k} K_ij = −gamma δ_ij d_k − beta (δ_ik d_j + δ_jk d_i) − delta d_i d_j d_k`
/// with `gamma = α'(r)/r`, `delta = β'(r)/r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialProfile {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl RadialProfile {
    pub fn at(r: f64, eps: Softening) -> Result<Self> {
        let e = eps.value();
        if e == 0.0 {
            if r == 0.0 {
                return Err(Error::DegenerateKernel);
            }
            let ir = 1.0 / r;
            let ir3 = ir * ir * ir;
            return Ok(RadialProfile {
                alpha: ir,
                beta: ir3,
                gamma: -ir3,
                delta: -3.0 * ir3 * ir * ir,
            });
        }
        Ok(Self::softened(r / e, e))
    }

    fn softened(u: f64, e: f64) -> Self {
        let u2 = u * u;
        let sigma = (1.0 + u2).sqrt();
        let inv_sigma3 = 1.0 / (sigma * sigma * sigma);
        // q = (uσ − asinh u)/u³, b = (3q − 2/σ)/u², db = B'(u)/u.
        let (q, b, db) = if u < SERIES_CUTOFF {
            let coeffs = series_coefficients();
            (
                horner(&coeffs.q, u2),
                horner(&coeffs.b, u2),
                horner(&coeffs.db, u2),
            )
        } else {
            let q = (u * sigma - u.asinh()) / (u2 * u);
            let b = (3.0 * q - 2.0 / sigma) / u2;
            let db = (2.0 * inv_sigma3 - 5.0 * b) / u2;
            (q, b, db)
        };
        let e2 = e * e;
        let e3 = e2 * e;
        RadialProfile {
            alpha: (2.0 / sigma - q) / e,
            beta: b / e3,
            gamma: (b - 2.0 * inv_sigma3) / e3,
            delta: db / (e3 * e2),
        }
    }
}

/// Darwin kernel `K(x, y)`, softened when `ε > 0`.
pub fn darwin_kernel(x: Vec3, y: Vec3, eps: Softening) -> Result<Mat3> {
    let d = y - x;
    let prof = RadialProfile::at(d.norm(), eps)?;
    Ok(kernel_from_profile(d, &prof))
}

pub(crate) fn kernel_from_profile(d: Vec3, prof: &RadialProfile) -> Mat3 {
    let mut m = d.outer(d).scale(prof.beta);
    for k in 0..3 {
        m.0[k][k] += prof.alpha;
    }
    m
}

/// `K(x, y) v` without forming the matrix.
#[inline]
pub(crate) fn kernel_apply(d: Vec3, alpha: f64, beta: f64, v: Vec3) -> Vec3 {
    v.scale(alpha) + d.scale(beta * d.dot(v))
}

/// Spatial gradient `t[i][m][k] = ∂_{x_k} K_im(x, y)`.
pub fn darwin_kernel_gradient(x: Vec3, y: Vec3, eps: Softening) -> Result<Tensor3> {
    let d = y - x;
    let prof = RadialProfile::at(d.norm(), eps)?;
    let mut t = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        for m in 0..3 {
            for k in 0..3 {
                let mut v = -prof.delta * d[i] * d[m] * d[k];
                if i == m {
                    v -= prof.gamma * d[k];
                }
                if i == k {
                    v -= prof.beta * d[m];
                }
                if m == k {
                    v -= prof.beta * d[i];
                }
                t[i][m][k] = v;
            }
        }
    }
    Ok(t)
}

/// `J[i][k] = ∂_{x_k} (K(x, y) v)_i` without forming the rank-3 array.
#[inline]
pub(crate) fn kernel_gradient_apply(d: Vec3, prof: &RadialProfile, v: Vec3) -> Mat3 {
    let dv = d.dot(v);
    let mut j = Mat3::ZERO;
    for i in 0..3 {
        for k in 0..3 {
            let mut e = -prof.delta * d[i] * d[k] * dv - prof.beta * d[i] * v[k];
            if i == k {
                e -= prof.beta * dv;
            }
            e -= prof.gamma * v[i] * d[k];
            j.0[i][k] = e;
        }
    }
    j
}

/// Softened Coulomb kernel `1/√(|y−x|² + ε²)`.
pub fn coulomb_kernel(x: Vec3, y: Vec3, eps: Softening) -> Result<f64> {
    let s2 = (y - x).norm_sq() + eps.value() * eps.value();
    if s2 == 0.0 {
        return Err(Error::DegenerateKernel);
    }
    Ok(1.0 / s2.sqrt())
}

/// `∇_x` of the softened Coulomb kernel: `(y − x)/s³`.
pub fn coulomb_kernel_gradient(x: Vec3, y: Vec3, eps: Softening) -> Result<Vec3> {
    let d = y - x;
    let s2 = d.norm_sq() + eps.value() * eps.value();
    if s2 == 0.0 {
        return Err(Error::DegenerateKernel);
    }
    let inv = 1.0 / s2.sqrt();
    Ok(d.scale(inv * inv * inv))
}

/// Interpolation constant `C(m, r, s)` for `‖∫Ψ(y)|y−·|^{-m}dy‖_∞`.
///
/// Only the endpoint `(r, s) = (1, ∞)` has a closed form,
/// `3 (4π/m)^{m/3} / (3 − m)`; other admissible pairs are rejected.
pub fn pallard_constant(m: u32, r: f64, s: f64) -> Result<f64> {
    let bad = || Error::InvalidExponents { m, r, s };
    if m != 1 && m != 2 {
        return Err(bad());
    }
    let mf = m as f64;
    let r0 = 3.0 / (3.0 - mf);
    if !(r >= 1.0 && r < r0 && s > r0) {
        return Err(bad());
    }
    if r == 1.0 && s == f64::INFINITY {
        return Ok(3.0 * (4.0 * std::f64::consts::PI / mf).powf(mf / 3.0) / (3.0 - mf));
    }
    Err(bad())
}
