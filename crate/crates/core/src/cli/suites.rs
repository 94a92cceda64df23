//! Verification suites behind `rvd verify <suite>`.

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fields::verify::{
    kernel_identity_sides, random_unit, verify_potential_bounds, BoundsReport, BumpSpec,
    IdentityReport, ProbeSet, QuadSpec,
};
use crate::fields::{
    grad_vector_potential, solve_vector_potential_with, vector_potential_at, PicardOptions,
};
use crate::kernels::{
    darwin_kernel, darwin_kernel_gradient, velocity_jacobian, velocity_jacobian_det,
    velocity_jacobian_min_eigenvalue, Softening,
};
use crate::linalg::{tensor_sup_norm, Vec3};
use crate::sampling::{sample, unit_phase_directions, Family, InitialSpec};
use crate::transport::{plan_cost, w2_exact};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Kernels,
    Identity,
    Fields,
    Bounds,
    Transport,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.into()))
            .map_err(|_| Error::InvalidConfig(format!("unknown suite `{s}`")))
    }
}

fn random_vec<R: Rng>(rng: &mut R, scale: f64) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
    .scale(scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelSuiteReport {
    pub samples: usize,
    /// `max |det Dv − (1+|g|²)^{-5/2}|`.
    pub det_max_error: f64,
    /// `min (Dv ξ·ξ − λ|ξ|²) / |ξ|²`; nonnegative up to rounding.
    pub posdef_min_margin: f64,
    /// `max sup|K| · r / 2`; at most 1.
    pub kernel_bound_ratio: f64,
    /// `max sup|∂K| · r² / 6`; at most 1.
    pub gradient_bound_ratio: f64,
    pub pass: bool,
}

/// Determinant, positive-definiteness and kernel bounds on random samples:
/// `samples/10` momenta and `samples` point pairs.
pub fn kernels_suite(samples: usize, seed: u64) -> Result<KernelSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut det_max_error = 0.0_f64;
    let mut posdef_min_margin = f64::INFINITY;
    for _ in 0..(samples / 10).max(1) {
        let g = random_vec(&mut rng, 3.0);
        let xi = random_vec(&mut rng, 1.0);
        let s = 1.0 + g.norm_sq();
        det_max_error = det_max_error.max((velocity_jacobian_det(g) - s.powf(-2.5)).abs());
        let q = velocity_jacobian(g).mul_vec(xi).dot(xi);
        let margin = (q - velocity_jacobian_min_eigenvalue(g) * xi.norm_sq()) / xi.norm_sq();
        posdef_min_margin = posdef_min_margin.min(margin);
    }
    let mut kernel_bound_ratio = 0.0_f64;
    let mut gradient_bound_ratio = 0.0_f64;
    for _ in 0..samples {
        let x = random_vec(&mut rng, 1.0);
        // Log-uniform separations over six decades.
        let r = 10f64.powf(rng.random_range(-3.0..3.0));
        let y = x + random_unit(&mut rng).scale(r);
        let r = (y - x).norm();
        let k = darwin_kernel(x, y, Softening::NONE)?;
        let dk = darwin_kernel_gradient(x, y, Softening::NONE)?;
        kernel_bound_ratio = kernel_bound_ratio.max(k.sup_norm() * r / 2.0);
        gradient_bound_ratio = gradient_bound_ratio.max(tensor_sup_norm(&dk) * r * r / 6.0);
    }
    Ok(KernelSuiteReport {
        samples,
        det_max_error,
        posdef_min_margin,
        kernel_bound_ratio,
        gradient_bound_ratio,
        pass: det_max_error <= 1e-12
            && posdef_min_margin >= -1e-12
            && kernel_bound_ratio <= 1.0 + 1e-12
            && gradient_bound_ratio <= 1.0 + 1e-12,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentitySuiteReport {
    /// Bump centred at distance 2 from `y`, grid `h`.
    pub coarse: IdentityReport,
    /// Same at `h/2`.
    pub fine: IdentityReport,
    /// `coarse / fine` discrepancy.
    pub refinement_ratio: f64,
    /// `|tr lhs − tr rhs| / |tr rhs|` of the coarse run.
    pub trace_rel_error: f64,
    /// Largest off-diagonal entry of either side for a bump centred at `y`.
    pub symmetric_offdiag_max: f64,
    pub pass: bool,
}

pub fn identity_suite(h: f64) -> Result<IdentitySuiteReport> {
    let y = Vec3::ZERO;
    let bump = BumpSpec {
        center: Vec3::new(2.0, 0.0, 0.0),
        radius: 1.0,
    };
    let coarse = kernel_identity_sides(&bump, y, &QuadSpec { h })?;
    let fine = kernel_identity_sides(&bump, y, &QuadSpec { h: 0.5 * h })?;
    let refinement_ratio = coarse.max_rel_discrepancy / fine.max_rel_discrepancy;
    let trace_rel_error =
        (coarse.lhs.trace() - coarse.rhs.trace()).abs() / coarse.rhs.trace().abs();
    let centred = BumpSpec {
        center: y,
        radius: 1.0,
    };
    let sym = kernel_identity_sides(&centred, y, &QuadSpec { h })?;
    let mut symmetric_offdiag_max = 0.0_f64;
    for i in 0..3 {
        for k in 0..3 {
            if i != k {
                symmetric_offdiag_max = symmetric_offdiag_max
                    .max(sym.lhs.0[i][k].abs())
                    .max(sym.rhs.0[i][k].abs());
            }
        }
    }
    Ok(IdentitySuiteReport {
        coarse,
        fine,
        refinement_ratio,
        trace_rel_error,
        symmetric_offdiag_max,
        pass: coarse.max_rel_discrepancy <= 2e-2
            && refinement_ratio >= 3.0
            && trace_rel_error <= 1e-10
            && symmetric_offdiag_max <= 1e-10,
    })
}

/// Seed-42 Gaussian ball with `n` particles, `R = 1`, unit mass.
pub fn reference_ensemble(n: usize) -> Result<Ensemble> {
    sample(&InitialSpec::reference(Family::GaussianBall, n, 42))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldsSuiteReport {
    pub iterations: usize,
    pub residual: f64,
    pub cbar: f64,
    pub max_iterate_norm: f64,
    /// `max |tr ∂ₓA| / (1 + sup|∂ₓA|)` over the probes.
    pub max_divergence: f64,
    /// `max |∂ₓA − FD| / max(sup|∂ₓA|, 1e-12)` at `h = 1e-4`.
    pub max_fd_rel_error: f64,
    pub probes: usize,
    pub pass: bool,
}

/// Fixed-point solve on the reference ensemble with divergence and
/// finite-difference checks of `∂ₓA` at random probes in `[-1, 1]³`.
pub fn fields_suite(n: usize, eps: f64, probes: usize, seed: u64) -> Result<FieldsSuiteReport> {
    let ens = reference_ensemble(n)?;
    let eps = Softening::new(eps)?;
    let mut opts = PicardOptions::new(1e-10, 1000);
    opts.enforce_bound = true;
    let state = solve_vector_potential_with(&ens, eps, &opts, None)?;
    let set = ProbeSet::random(
        Vec3::new(-1.0, -1.0, -1.0),
        Vec3::new(1.0, 1.0, 1.0),
        probes,
        0,
        seed,
    );
    let h = 1e-4;
    let mut max_divergence = 0.0_f64;
    let mut max_fd_rel_error = 0.0_f64;
    for &x in &set.points {
        let j = grad_vector_potential(&state, &ens, x, eps)?;
        max_divergence = max_divergence.max(j.trace().abs() / (1.0 + j.sup_norm()));
        let mut err = 0.0_f64;
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let col = (vector_potential_at(&state, &ens, xp, eps)?
                - vector_potential_at(&state, &ens, xm, eps)?)
            .scale(0.5 / h);
            for i in 0..3 {
                err = err.max((col[i] - j.0[i][k]).abs());
            }
        }
        max_fd_rel_error = max_fd_rel_error.max(err / j.sup_norm().max(1e-12));
    }
    Ok(FieldsSuiteReport {
        iterations: state.iterations,
        residual: state.residual,
        cbar: state.cbar,
        max_iterate_norm: state.max_iterate_norm,
        max_divergence,
        max_fd_rel_error,
        probes,
        pass: state.residual <= 1e-10
            && state.max_iterate_norm <= state.cbar + 1e-9
            && max_divergence <= 1e-8
            && max_fd_rel_error <= 1e-4,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsSuiteReport {
    pub base: BoundsReport,
    /// Same probes with four times as many pairs.
    pub refined: BoundsReport,
    /// `refined / base` log-Lipschitz ratio.
    pub refinement_change: f64,
    pub pass: bool,
}

/// Sup-norm bounds and log-Lipschitz ratio on the reference ensemble with
/// `pairs` and `4·pairs` probe pairs.
pub fn bounds_suite(n: usize, eps: f64, pairs: usize, seed: u64) -> Result<BoundsSuiteReport> {
    let ens = reference_ensemble(n)?;
    let eps = Softening::new(eps)?;
    let state = solve_vector_potential_with(&ens, eps, &PicardOptions::new(1e-10, 1000), None)?;
    let (lo, hi) = (Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
    let base =
        verify_potential_bounds(&ens, &state, &ProbeSet::random(lo, hi, pairs, pairs, seed))?;
    let refined = verify_potential_bounds(
        &ens,
        &state,
        &ProbeSet::random(lo, hi, pairs, 4 * pairs, seed),
    )?;
    let refinement_change = refined.log_lipschitz_ratio / base.log_lipschitz_ratio;
    Ok(BoundsSuiteReport {
        base,
        refined,
        refinement_change,
        pass: base.within_bounds
            && refined.within_bounds
            && base.log_lipschitz_ratio.is_finite()
            && refinement_change < 1.5,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportSuiteReport {
    /// Random pairs checked per size `N = 2..=max_n`.
    pub pairs_per_size: usize,
    pub max_n: usize,
    /// Pairs where the solver cost differs from the exhaustive minimum.
    pub mismatches: usize,
    pub pass: bool,
}

fn random_ensemble(rng: &mut ChaCha8Rng, n: usize) -> Result<Ensemble> {
    let dirs = unit_phase_directions(n, rng.random());
    let particles = dirs
        .into_iter()
        .map(|(x, p)| {
            let s = rng.random_range(0.0..1.0);
            crate::ensemble::PhaseParticle::new(x.scale(s), p.scale(s), 1.0 / n as f64)
        })
        .collect();
    Ensemble::new(particles, 0.0)
}

/// Minimum cost over all permutations, by Heap's algorithm.
pub fn brute_force_cost(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    let n = a.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = plan_cost(a, b, &perm)?;
    let mut c = vec![0_usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(plan_cost(a, b, &perm)?);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

/// Assignment solver against exhaustive enumeration.
pub fn transport_suite(
    pairs_per_size: usize,
    max_n: usize,
    seed: u64,
) -> Result<TransportSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for n in 2..=max_n {
        for _ in 0..pairs_per_size {
            let a = random_ensemble(&mut rng, n)?;
            let b = random_ensemble(&mut rng, n)?;
            if w2_exact(&a, &b)?.cost != brute_force_cost(&a, &b)? {
                mismatches += 1;
            }
        }
    }
    Ok(TransportSuiteReport {
        pairs_per_size,
        max_n,
        mismatches,
        pass: mismatches == 0,
    })
}
