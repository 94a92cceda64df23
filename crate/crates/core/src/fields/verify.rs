//! Numerical checks of the structural identities and estimates satisfied by
//! the potentials: the kernel integral identity, the L∞ bounds and
//! log-Lipschitz modulus, and the distributional Laplacian of `A`.

use super::{charge_density_norms, default_cell_size, probe_fields, VectorPotentialState};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::kernels::pallard_constant;
use crate::linalg::{Mat3, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Polynomial bump `φ(x) = (1 − |x−x₀|²/r²)⁴` inside radius `r`, zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpSpec {
    pub center: Vec3,
    pub radius: f64,
}

impl BumpSpec {
    fn weight(&self, x: Vec3) -> Option<(Vec3, f64)> {
        let d = x - self.center;
        let q = d.norm_sq() / (self.radius * self.radius);
        (q < 1.0).then_some((d, 1.0 - q))
    }

    pub fn value(&self, x: Vec3) -> f64 {
        self.weight(x).map_or(0.0, |(_, u)| u.powi(4))
    }

    /// `Δφ = (48 u² q − 24 u³) / r²` with `u = 1 − q`.
    pub fn laplacian(&self, x: Vec3) -> f64 {
        self.weight(x).map_or(0.0, |(_, u)| {
            let r2 = self.radius * self.radius;
            let q = 1.0 - u;
            (48.0 * u * u * q - 24.0 * u * u * u) / r2
        })
    }

    /// `∂_i ∂_k φ = 48 u² dᵢ d_k / r⁴ − 8 u³ δ_ik / r²`.
    pub fn hessian(&self, x: Vec3) -> Mat3 {
        match self.weight(x) {
            None => Mat3::ZERO,
            Some((d, u)) => {
                let r2 = self.radius * self.radius;
                let mut h = d.outer(d).scale(48.0 * u * u / (r2 * r2));
                for k in 0..3 {
                    h.0[k][k] -= 8.0 * u * u * u / r2;
                }
                h
            }
        }
    }
}

/// Uniform midpoint grid of spacing `h` over the bump's bounding cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSpec {
    pub h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    /// `∫ Δφ [δ_ik − ωⁱωᵏ] dx / |y−x|`.
    pub lhs: Mat3,
    /// `2 ∫ ∂_k∂_i φ dx / |y−x|`.
    pub rhs: Mat3,
    /// `max_ik |lhs − rhs| / max_ik |rhs|`.
    pub max_rel_discrepancy: f64,
    pub h: f64,
    pub cells_per_axis: usize,
}

/// Relative discrepancy above which `verify_kernel_identity` reports failure.
pub const IDENTITY_TOLERANCE: f64 = 0.1;

/// Evaluates both sides of `∫Δφ[δ_ik − ωⁱωᵏ]/|y−x| = 2∫∂_k∂_iφ/|y−x|`.
pub fn verify_kernel_identity(bump: &BumpSpec, y: Vec3, quad: &QuadSpec) -> Result<IdentityReport> {
    let report = kernel_identity_sides(bump, y, quad)?;
    if report.max_rel_discrepancy > IDENTITY_TOLERANCE {
        return Err(Error::QuadratureTooCoarse {
            discrepancy: report.max_rel_discrepancy,
            limit: IDENTITY_TOLERANCE,
        });
    }
    Ok(report)
}

/// Both sides of the identity without the coarseness check.
pub fn kernel_identity_sides(bump: &BumpSpec, y: Vec3, quad: &QuadSpec) -> Result<IdentityReport> {
    if !(quad.h > 0.0) || !(bump.radius > 0.0) {
        return Err(Error::InvalidConfig(
            "bump radius and grid spacing must be positive".into(),
        ));
    }
    let n = (2.0 * bump.radius / quad.h).round().max(1.0) as usize;
    let h = 2.0 * bump.radius / n as f64;
    let lo = bump.center - Vec3::new(bump.radius, bump.radius, bump.radius);
    let outside = (y - bump.center).norm() > bump.radius;
    let contains_y = |c: Vec3| (0..3).all(|k| (c[k] - y[k]).abs() <= 0.5 * h);

    let planes: Vec<(Mat3, Mat3)> = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut lhs = Mat3::ZERO;
            let mut rhs = Mat3::ZERO;
            for b in 0..n {
                for c in 0..n {
                    let x = lo
                        + Vec3::new(
                            (a as f64 + 0.5) * h,
                            (b as f64 + 0.5) * h,
                            (c as f64 + 0.5) * h,
                        );
                    if outside && contains_y(x) {
                        continue;
                    }
                    let d = y - x;
                    let r = d.norm();
                    if r == 0.0 {
                        continue;
                    }
                    let lap = bump.laplacian(x);
                    let hess = bump.hessian(x);
                    if lap == 0.0 && hess == Mat3::ZERO {
                        continue;
                    }
                    let w = d.scale(1.0 / r);
                    let mut proj = w.outer(w).scale(-1.0);
                    for k in 0..3 {
                        proj.0[k][k] += 1.0;
                    }
                    lhs += proj.scale(lap / r);
                    rhs += hess.scale(2.0 / r);
                }
            }
            (lhs, rhs)
        })
        .collect();
    let vol = h * h * h;
    let mut lhs = Mat3::ZERO;
    let mut rhs = Mat3::ZERO;
    for (l, r) in planes {
        lhs += l;
        rhs += r;
    }
    let lhs = lhs.scale(vol);
    let rhs = rhs.scale(vol);
    let scale = rhs.sup_norm().max(lhs.sup_norm());
    let max_rel_discrepancy = if scale > 0.0 {
        (lhs - rhs).sup_norm() / scale
    } else {
        0.0
    };
    Ok(IdentityReport {
        lhs,
        rhs,
        max_rel_discrepancy,
        h,
        cells_per_axis: n,
    })
}

/// Probe points for the sup-norm checks and probe pairs for the modulus.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    pub points: Vec<Vec3>,
    pub pairs: Vec<(Vec3, Vec3)>,
}

impl ProbeSet {
    /// Uniform points in the box `[lo, hi]`; pair separations are
    /// log-uniform in `[1e-3, 1/2]` with uniformly random directions.
    pub fn random(lo: Vec3, hi: Vec3, n_points: usize, n_pairs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point = |rng: &mut ChaCha8Rng| {
            Vec3::new(
                rng.random_range(lo[0]..=hi[0]),
                rng.random_range(lo[1]..=hi[1]),
                rng.random_range(lo[2]..=hi[2]),
            )
        };
        let points = (0..n_points).map(|_| point(&mut rng)).collect();
        let pairs = (0..n_pairs)
            .map(|_| {
                let x = point(&mut rng);
                let sep = (rng.random_range((1e-3_f64).ln()..=(0.5_f64).ln())).exp();
                let dir = random_unit(&mut rng);
                (x, x + dir.scale(sep))
            })
            .collect();
        ProbeSet { points, pairs }
    }
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v.scale(1.0 / n);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    pub sup_a: f64,
    pub sup_grad_a: f64,
    pub sup_grad_phi: f64,
    /// `2 C(1,1,∞) ‖ρ‖₁^{2/3} ‖ρ‖∞^{1/3}`.
    pub bound_a: f64,
    /// `6 C(2,1,∞) ‖ρ‖₁^{1/3} ‖ρ‖∞^{2/3}`.
    pub bound_grad_a: f64,
    /// `C(2,1,∞) ‖ρ‖₁^{1/3} ‖ρ‖∞^{2/3}`.
    pub bound_grad_phi: f64,
    /// Sup over pairs of the summed differences divided by `−|x−z| ln|x−z|`.
    pub log_lipschitz_ratio: f64,
    /// Same ratio restricted to the `A` and `∂ₓA` terms.
    pub log_lipschitz_ratio_a: f64,
    pub within_bounds: bool,
}

/// Sup-norms of `A`, `∂ₓA`, `∇Φ` over the probes against the interpolation
/// bounds, and the empirical log-Lipschitz ratio over the probe pairs.
pub fn verify_potential_bounds(
    ens: &Ensemble,
    state: &VectorPotentialState,
    probes: &ProbeSet,
) -> Result<BoundsReport> {
    let eps = state.eps;
    let density = charge_density_norms(ens, default_cell_size(ens))?;
    let c1 = pallard_constant(1, 1.0, f64::INFINITY)?;
    let c2 = pallard_constant(2, 1.0, f64::INFINITY)?;
    let l1 = density.l1_norm;
    let linf = density.linf_norm;
    let bound_a = 2.0 * c1 * l1.powf(2.0 / 3.0) * linf.cbrt();
    let bound_grad = c2 * l1.cbrt() * linf.powf(2.0 / 3.0);

    let sups = probes
        .points
        .par_iter()
        .map(|&x| {
            let f = probe_fields(state, ens, x, eps)?;
            Ok((f.a.norm(), f.grad_a.sup_norm(), f.grad_phi.norm()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (sup_a, sup_grad_a, sup_grad_phi) =
        sups.iter().fold((0.0_f64, 0.0_f64, 0.0_f64), |m, s| {
            (m.0.max(s.0), m.1.max(s.1), m.2.max(s.2))
        });

    let ratios = probes
        .pairs
        .par_iter()
        .map(|&(x, z)| {
            let sep = (x - z).norm();
            if !(sep > 0.0 && sep <= 0.5) {
                return Ok((0.0, 0.0));
            }
            let fx = probe_fields(state, ens, x, eps)?;
            let fz = probe_fields(state, ens, z, eps)?;
            let modulus = -sep * sep.ln();
            let a_terms = (fx.a - fz.a).norm() + (fx.grad_a - fz.grad_a).sup_norm();
            let phi_term = (fx.grad_phi - fz.grad_phi).norm();
            Ok(((a_terms + phi_term) / modulus, a_terms / modulus))
        })
        .collect::<Result<Vec<_>>>()?;
    let (ratio, ratio_a) = ratios
        .iter()
        .fold((0.0_f64, 0.0_f64), |m, r| (m.0.max(r.0), m.1.max(r.1)));

    let bound_grad_a = 6.0 * bound_grad;
    Ok(BoundsReport {
        sup_a,
        sup_grad_a,
        sup_grad_phi,
        bound_a,
        bound_grad_a,
        bound_grad_phi: bound_grad,
        log_lipschitz_ratio: ratio,
        log_lipschitz_ratio_a: ratio_a,
        within_bounds: sup_a <= bound_a && sup_grad_a <= bound_grad_a && sup_grad_phi <= bound_grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplacianReport {
    /// Seven-point finite-difference Laplacian of `A`.
    pub fd_laplacian: Vec3,
    /// `−4π j_ε(x)` with the Plummer-smeared current.
    pub source_term: Vec3,
    /// `−∇(∇·∫ j_ε(y) dy/|y−x|)`.
    pub gradient_term: Vec3,
    /// `|fd − (source + gradient)| / (|source| + |gradient| + 1e-300)`.
    pub relative_residual: f64,
}

/// Compares a finite-difference Laplacian of `A` at `x` with
/// `−4π j − ∇(∇·N[j])` for the smeared current. Diagnostic only.
pub fn darwin_laplacian_residual(
    state: &VectorPotentialState,
    ens: &Ensemble,
    x: Vec3,
    h: f64,
) -> Result<LaplacianReport> {
    let eps = state.eps;
    let e2 = eps.value() * eps.value();
    let a0 = super::vector_potential_at(state, ens, x, eps)?;
    let mut lap = Vec3::ZERO;
    for k in 0..3 {
        let step = Vec3::unit(k).scale(h);
        let ap = super::vector_potential_at(state, ens, x + step, eps)?;
        let am = super::vector_potential_at(state, ens, x - step, eps)?;
        lap += (ap + am - a0.scale(2.0)).scale(1.0 / (h * h));
    }
    let mut source = Vec3::ZERO;
    let mut grad = Vec3::ZERO;
    for (q, v) in ens.particles().iter().zip(&state.velocities) {
        let d = q.x - x;
        let s2 = d.norm_sq() + e2;
        if s2 == 0.0 {
            return Err(Error::DegenerateKernel);
        }
        let inv = 1.0 / s2.sqrt();
        let inv3 = inv * inv * inv;
        let inv5 = inv3 * inv * inv;
        // Plummer density 3ε²/(4π s⁵); the 4π cancels.
        source -= v.scale(q.w * 3.0 * e2 * inv5);
        grad -= (v.scale(-inv3) + d.scale(3.0 * d.dot(*v) * inv5)).scale(q.w);
    }
    let expected = source + grad;
    let relative_residual = (lap - expected).norm() / (source.norm() + grad.norm() + 1e-300);
    Ok(LaplacianReport {
        fd_laplacian: lap,
        source_term: source,
        gradient_term: grad,
        relative_residual,
    })
}
