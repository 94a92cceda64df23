//! Moments of an ensemble and the potentials they induce.
//!
//! The scalar potential is a direct softened Coulomb sum. The vector
//! potential solves the nonlinear integral equation
//! `A(x) = ½ Σᵢ wᵢ K(x, yᵢ) v(pᵢ − A(yᵢ))`; the unknowns are the values of
//! `A` at the source positions, found by (optionally damped) Picard
//! iteration from `A = 0`. Probe evaluation is a post-pass over the
//! converged source values.
//!
//! Every sum over sources runs in a fixed order per target, so results do
//! not depend on the rayon thread count.

pub mod verify;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::kernels::{
    kernel_apply, kernel_gradient_apply, pallard_constant, velocity, RadialProfile, Softening,
};
use crate::linalg::{Mat3, Vec3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Histogram estimate of the spatial charge density norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub l1_norm: f64,
    pub linf_norm: f64,
    pub cell_size: f64,
}

/// `‖ρ‖₁ = Σw` and a cubic-histogram estimate of `‖ρ‖∞`.
///
/// Cells are `[k h, (k+1) h)` per axis, anchored at the origin.
pub fn charge_density_norms(ens: &Ensemble, cell_size: f64) -> Result<DensityEstimate> {
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "cell size must be positive, got {cell_size}"
        )));
    }
    if ens.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut cells: HashMap<[i64; 3], f64> = HashMap::new();
    for q in ens.particles() {
        let key = [0, 1, 2].map(|k| (q.x[k] / cell_size).floor() as i64);
        *cells.entry(key).or_insert(0.0) += q.w;
    }
    let max_cell = cells.values().fold(0.0_f64, |m, &w| m.max(w));
    Ok(DensityEstimate {
        l1_norm: ens.total_weight(),
        linf_norm: max_cell / cell_size.powi(3),
        cell_size,
    })
}

/// Default histogram cell `2R/16` for an ensemble of spatial radius `R`.
pub fn default_cell_size(ens: &Ensemble) -> f64 {
    let r = ens.spatial_radius();
    if r > 0.0 {
        2.0 * r / 16.0
    } else {
        1.0
    }
}

/// A-priori bound `C̄ = 3 (4π)^{1/3} ‖ρ‖₁^{2/3} ‖ρ‖∞^{1/3}` on every iterate.
pub fn a_priori_bound(density: &DensityEstimate) -> f64 {
    let c1 = pallard_constant(1, 1.0, f64::INFINITY).expect("endpoint constant");
    2.0 * c1 * density.l1_norm.powf(2.0 / 3.0) * density.linf_norm.cbrt()
}

/// `Φ(x) = Σᵢ wᵢ / √(|yᵢ − x|² + ε²)`.
pub fn scalar_potential(ens: &Ensemble, x: Vec3, eps: Softening) -> Result<f64> {
    let e2 = eps.value() * eps.value();
    let mut sum = 0.0;
    for q in ens.particles() {
        let s2 = (q.x - x).norm_sq() + e2;
        if s2 == 0.0 {
            return Err(Error::DegenerateKernel);
        }
        sum += q.w / s2.sqrt();
    }
    Ok(sum)
}

/// `∇Φ(x) = Σᵢ wᵢ (yᵢ − x) / s³`.
pub fn grad_scalar_potential(ens: &Ensemble, x: Vec3, eps: Softening) -> Result<Vec3> {
    let e2 = eps.value() * eps.value();
    let mut g = Vec3::ZERO;
    for q in ens.particles() {
        let d = q.x - x;
        let s2 = d.norm_sq() + e2;
        if s2 == 0.0 {
            return Err(Error::DegenerateKernel);
        }
        let inv = 1.0 / s2.sqrt();
        g += d.scale(q.w * inv * inv * inv);
    }
    Ok(g)
}

/// Converged vector potential at the source positions.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPotentialState {
    /// `A(xᵢ)` for each particle, in ensemble order.
    pub values: Vec<Vec3>,
    /// Final sup-norm update.
    pub residual: f64,
    pub iterations: usize,
    pub cbar: f64,
    /// Largest `sup|A_k|` seen over all iterates, including the last.
    pub max_iterate_norm: f64,
    /// Sup-norm update after each iteration.
    pub residual_history: Vec<f64>,
    /// `v(pᵢ − A(xᵢ))` at the converged values.
    pub velocities: Vec<Vec3>,
    pub eps: Softening,
    pub tol: f64,
}

impl VectorPotentialState {
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, a| m.max(a.norm()))
    }
}

/// Picard iteration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation `θ ∈ (0, 1]`: `A ← (1−θ) A + θ T[A]`.
    pub damping: f64,
    /// Fail with `BoundViolated` when an iterate leaves the `C̄` ball.
    pub enforce_bound: bool,
}

impl PicardOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        PicardOptions {
            tol,
            max_iter,
            damping: 1.0,
            enforce_bound: false,
        }
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Pairwise kernel data between all sources of one configuration.
///
/// Row `j` holds `d = yᵢ − xⱼ`, the radial profile and `1/s³` for every
/// source `i`.
pub(crate) struct PairTable {
    n: usize,
    d: Vec<Vec3>,
    prof: Vec<RadialProfile>,
    inv_s3: Vec<f64>,
}

impl PairTable {
    pub(crate) fn build(positions: &[Vec3], eps: Softening) -> Result<Self> {
        if eps.is_exact() {
            // Self pairs are singular without softening.
            return Err(Error::DegenerateKernel);
        }
        let n = positions.len();
        let e2 = eps.value() * eps.value();
        let rows: Vec<Vec<(Vec3, RadialProfile, f64)>> = (0..n)
            .into_par_iter()
            .map(|j| {
                (0..n)
                    .map(|i| {
                        let d = positions[i] - positions[j];
                        let r2 = d.norm_sq();
                        let prof = RadialProfile::at(r2.sqrt(), eps).expect("softened");
                        let inv = 1.0 / (r2 + e2).sqrt();
                        (d, prof, inv * inv * inv)
                    })
                    .collect()
            })
            .collect();
        let mut d = Vec::with_capacity(n * n);
        let mut prof = Vec::with_capacity(n * n);
        let mut inv_s3 = Vec::with_capacity(n * n);
        for row in rows {
            for (dd, pp, ss) in row {
                d.push(dd);
                prof.push(pp);
                inv_s3.push(ss);
            }
        }
        Ok(PairTable { n, d, prof, inv_s3 })
    }

    /// `T[A]` at every source: `½ Σᵢ wᵢ K(xⱼ, yᵢ) vᵢ`.
    fn apply(&self, weights: &[f64], vel: &[Vec3]) -> Vec<Vec3> {
        let n = self.n;
        (0..n)
            .into_par_iter()
            .map(|j| {
                let base = j * n;
                let mut acc = Vec3::ZERO;
                for i in 0..n {
                    let pr = &self.prof[base + i];
                    acc +=
                        kernel_apply(self.d[base + i], pr.alpha, pr.beta, vel[i]).scale(weights[i]);
                }
                acc.scale(0.5)
            })
            .collect()
    }

    /// `(∇Φ(xⱼ), ∂ₓA(xⱼ))` at every source.
    pub(crate) fn gradients(&self, weights: &[f64], vel: &[Vec3]) -> Vec<(Vec3, Mat3)> {
        let n = self.n;
        (0..n)
            .into_par_iter()
            .map(|j| {
                let base = j * n;
                let mut gphi = Vec3::ZERO;
                let mut ja = Mat3::ZERO;
                for i in 0..n {
                    let d = self.d[base + i];
                    gphi += d.scale(weights[i] * self.inv_s3[base + i]);
                    ja += kernel_gradient_apply(d, &self.prof[base + i], vel[i])
                        .scale(0.5 * weights[i]);
                }
                (gphi, ja)
            })
            .collect()
    }
}

/// Solves `A = T[A]` at the source positions from `A₀ = 0`.
pub fn solve_vector_potential(
    ens: &Ensemble,
    eps: Softening,
    tol: f64,
    max_iter: usize,
) -> Result<VectorPotentialState> {
    solve_vector_potential_with(ens, eps, &PicardOptions::new(tol, max_iter), None)
}

/// Picard solve with explicit options and an optional warm start.
pub fn solve_vector_potential_with(
    ens: &Ensemble,
    eps: Softening,
    opts: &PicardOptions,
    warm_start: Option<&[Vec3]>,
) -> Result<VectorPotentialState> {
    let positions: Vec<Vec3> = ens.positions().collect();
    let table = PairTable::build(&positions, eps)?;
    solve_on_table(ens, &table, eps, opts, warm_start)
}

pub(crate) fn solve_on_table(
    ens: &Ensemble,
    table: &PairTable,
    eps: Softening,
    opts: &PicardOptions,
    warm_start: Option<&[Vec3]>,
) -> Result<VectorPotentialState> {
    opts.validate()?;
    let density = charge_density_norms(ens, default_cell_size(ens))?;
    let cbar = a_priori_bound(&density);
    let n = ens.len();
    let weights: Vec<f64> = ens.particles().iter().map(|q| q.w).collect();
    let momenta: Vec<Vec3> = ens.particles().iter().map(|q| q.p).collect();

    let mut a: Vec<Vec3> = match warm_start {
        Some(w) if w.len() == n => w.to_vec(),
        Some(w) => {
            return Err(Error::SizeMismatch {
                left: n,
                right: w.len(),
            })
        }
        None => vec![Vec3::ZERO; n],
    };
    let sup = |vals: &[Vec3]| vals.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    let mut max_iterate_norm = sup(&a);
    let mut history = Vec::new();
    let theta = opts.damping;

    for k in 1..=opts.max_iter {
        let vel: Vec<Vec3> = momenta
            .iter()
            .zip(&a)
            .map(|(p, ai)| velocity(*p - *ai))
            .collect();
        let image = table.apply(&weights, &vel);
        let image_sup = sup(&image);
        max_iterate_norm = max_iterate_norm.max(image_sup);
        if opts.enforce_bound && image_sup > cbar + 1e-9 {
            return Err(Error::BoundViolated {
                iteration: k,
                sup: image_sup,
                cbar,
            });
        }
        let mut residual = 0.0_f64;
        for (ai, ti) in a.iter_mut().zip(&image) {
            let next = if theta == 1.0 {
                *ti
            } else {
                ai.scale(1.0 - theta) + ti.scale(theta)
            };
            residual = residual.max((next - *ai).norm());
            *ai = next;
        }
        max_iterate_norm = max_iterate_norm.max(sup(&a));
        history.push(residual);
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            let velocities = momenta
                .iter()
                .zip(&a)
                .map(|(p, ai)| velocity(*p - *ai))
                .collect();
            return Ok(VectorPotentialState {
                values: a,
                residual,
                iterations: k,
                cbar,
                max_iterate_norm,
                residual_history: history,
                velocities,
                eps,
                tol: opts.tol,
            });
        }
    }
    Err(Error::NoConvergence {
        residual: history.last().copied().unwrap_or(f64::INFINITY),
        iterations: history.len(),
    })
}

fn check_state(state: &VectorPotentialState, ens: &Ensemble) -> Result<()> {
    if state.values.len() != ens.len() {
        return Err(Error::SizeMismatch {
            left: ens.len(),
            right: state.values.len(),
        });
    }
    Ok(())
}

/// `A(x) = ½ Σᵢ wᵢ K(x, yᵢ) v(pᵢ − A(yᵢ))` at an arbitrary probe.
pub fn vector_potential_at(
    state: &VectorPotentialState,
    ens: &Ensemble,
    x: Vec3,
    eps: Softening,
) -> Result<Vec3> {
    check_state(state, ens)?;
    let mut acc = Vec3::ZERO;
    for (q, v) in ens.particles().iter().zip(&state.velocities) {
        let d = q.x - x;
        let prof = RadialProfile::at(d.norm(), eps)?;
        acc += kernel_apply(d, prof.alpha, prof.beta, *v).scale(q.w);
    }
    Ok(acc.scale(0.5))
}

/// Matrix gradient `J[i][k] = ∂_k A^i(x)` of the vector potential.
///
/// Row `i` is `∇A^i`. The trace vanishes identically.
pub fn grad_vector_potential(
    state: &VectorPotentialState,
    ens: &Ensemble,
    x: Vec3,
    eps: Softening,
) -> Result<Mat3> {
    check_state(state, ens)?;
    let mut j = Mat3::ZERO;
    for (q, v) in ens.particles().iter().zip(&state.velocities) {
        let d = q.x - x;
        let prof = RadialProfile::at(d.norm(), eps)?;
        j += kernel_gradient_apply(d, &prof, *v).scale(0.5 * q.w);
    }
    Ok(j)
}

/// All three probe-point fields in one pass over the sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeFields {
    pub phi: f64,
    pub grad_phi: Vec3,
    pub a: Vec3,
    pub grad_a: Mat3,
}

pub fn probe_fields(
    state: &VectorPotentialState,
    ens: &Ensemble,
    x: Vec3,
    eps: Softening,
) -> Result<ProbeFields> {
    check_state(state, ens)?;
    let e2 = eps.value() * eps.value();
    let mut out = ProbeFields {
        phi: 0.0,
        grad_phi: Vec3::ZERO,
        a: Vec3::ZERO,
        grad_a: Mat3::ZERO,
    };
    for (q, v) in ens.particles().iter().zip(&state.velocities) {
        let d = q.x - x;
        let r2 = d.norm_sq();
        let prof = RadialProfile::at(r2.sqrt(), eps)?;
        let inv = 1.0 / (r2 + e2).sqrt();
        out.phi += q.w * inv;
        out.grad_phi += d.scale(q.w * inv * inv * inv);
        out.a += kernel_apply(d, prof.alpha, prof.beta, *v).scale(0.5 * q.w);
        out.grad_a += kernel_gradient_apply(d, &prof, *v).scale(0.5 * q.w);
    }
    Ok(out)
}

/// Closed-form matrix gradient, assembled term by term as
/// `½ Σ w [v⊗ω − ω⊗v + (3ω⊗ω − id)(v·ω)] / |y−x|²` (unsoftened, rows are
/// components of `A`).
pub fn grad_vector_potential_direct(
    state: &VectorPotentialState,
    ens: &Ensemble,
    x: Vec3,
) -> Result<Mat3> {
    check_state(state, ens)?;
    let mut j = Mat3::ZERO;
    for (q, v) in ens.particles().iter().zip(&state.velocities) {
        let d = q.x - x;
        let r2 = d.norm_sq();
        if r2 == 0.0 {
            return Err(Error::DegenerateKernel);
        }
        let w = d.scale(1.0 / r2.sqrt());
        let vw = v.dot(w);
        let mut m = v.outer(w) - w.outer(*v) + w.outer(w).scale(3.0 * vw);
        for k in 0..3 {
            m.0[k][k] -= vw;
        }
        j += m.scale(0.5 * q.w / r2);
    }
    Ok(j)
}
