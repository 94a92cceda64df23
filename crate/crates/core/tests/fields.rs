use std::path::Path;

use proptest::prelude::*;
use vlasov_darwin::ensemble::{neumaier_sum, Ensemble, PhaseParticle};
use vlasov_darwin::fields::verify::{
    darwin_laplacian_residual, kernel_identity_sides, verify_kernel_identity,
    verify_potential_bounds, BumpSpec, ProbeSet, QuadSpec,
};
use vlasov_darwin::fields::{
    charge_density_norms, default_cell_size, grad_scalar_potential, grad_vector_potential,
    grad_vector_potential_direct, scalar_potential, solve_vector_potential,
    solve_vector_potential_with, vector_potential_at, PicardOptions, VectorPotentialState,
};
use vlasov_darwin::io::{read_json, read_potential_csv, PotentialMeta};
use vlasov_darwin::kernels::{pallard_constant, Softening};
use vlasov_darwin::linalg::Vec3;
use vlasov_darwin::sampling::{sample, Family, InitialSpec};

fn eps(e: f64) -> Softening {
    Softening::new(e).unwrap()
}

fn reference() -> Ensemble {
    sample(&InitialSpec::reference(Family::GaussianBall, 512, 42)).unwrap()
}

fn reference_state(tol: f64) -> VectorPotentialState {
    solve_vector_potential(&reference(), eps(0.05), tol, 1000).unwrap()
}

fn small_ensemble() -> impl Strategy<Value = Ensemble> {
    prop::collection::vec(
        (
            (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
            (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64),
        ),
        2..24,
    )
    .prop_map(|rows| {
        let w = 1.0 / rows.len() as f64;
        let particles = rows
            .into_iter()
            .map(|((a, b, c), (d, e, f))| {
                PhaseParticle::new(Vec3::new(a, b, c), Vec3::new(d, e, f), w)
            })
            .collect();
        Ensemble::new(particles, 0.0).unwrap()
    })
}

#[test]
fn mass_is_exact_under_compensated_summation() {
    let ens = reference();
    let d = charge_density_norms(&ens, default_cell_size(&ens)).unwrap();
    let total = neumaier_sum(ens.particles().iter().map(|q| q.w));
    assert!((d.l1_norm - total).abs() <= f64::EPSILON * total);
    assert!(d.l1_norm > 0.0);
    let (lo, hi) = ens.position_bounds();
    let volume = (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]);
    assert!(d.linf_norm >= d.l1_norm / volume);
}

#[test]
fn uniform_ball_density_estimate() {
    // The estimate is a maximum over ~127 interior cells, each holding a
    // Poisson count of mean λ = N ρ h³, so it sits a few σ = √λ above λ.
    let expected = 3.0 / (4.0 * std::f64::consts::PI);
    let h = 0.25_f64;
    let small = sample(&InitialSpec::reference(Family::UniformBall, 10_000, 7)).unwrap();
    let d = charge_density_norms(&small, h).unwrap();
    let lambda = 10_000.0 * expected * h.powi(3);
    assert!(d.linf_norm >= expected, "{}", d.linf_norm);
    assert!(
        d.linf_norm <= expected * (1.0 + 6.0 / lambda.sqrt()),
        "{}",
        d.linf_norm
    );
    let large = sample(&InitialSpec::reference(Family::UniformBall, 1_000_000, 7)).unwrap();
    let d = charge_density_norms(&large, h).unwrap();
    assert!(
        (d.linf_norm - expected).abs() <= 0.2 * expected,
        "{}",
        d.linf_norm
    );
}

#[test]
fn scalar_potential_two_charges() {
    let ens = Ensemble::new(
        vec![
            PhaseParticle::new(Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO, 0.5),
            PhaseParticle::new(Vec3::new(-1.0, 0.0, 0.0), Vec3::ZERO, 0.5),
        ],
        0.0,
    )
    .unwrap();
    assert_eq!(
        scalar_potential(&ens, Vec3::ZERO, Softening::NONE).unwrap(),
        1.0
    );
}

#[test]
fn scalar_gradient_single_charge() {
    let ens = Ensemble::new(vec![PhaseParticle::new(Vec3::ZERO, Vec3::ZERO, 1.0)], 0.0).unwrap();
    let g = grad_scalar_potential(&ens, Vec3::new(1.0, 0.0, 0.0), Softening::NONE).unwrap();
    assert_eq!(g, Vec3::new(-1.0, 0.0, 0.0));
}

#[test]
fn scalar_potential_below_interpolation_bound() {
    let ens = reference();
    let e = eps(0.05);
    let d = charge_density_norms(&ens, default_cell_size(&ens)).unwrap();
    let bound = pallard_constant(1, 1.0, f64::INFINITY).unwrap()
        * d.l1_norm.powf(2.0 / 3.0)
        * d.linf_norm.cbrt();
    let probes = ProbeSet::random(
        Vec3::new(-1.0, -1.0, -1.0),
        Vec3::new(1.0, 1.0, 1.0),
        1000,
        0,
        3,
    );
    for x in probes.points {
        assert!(scalar_potential(&ens, x, e).unwrap() <= bound);
    }
}

#[test]
fn zero_momentum_gives_zero_potential_in_one_iteration() {
    let ens = Ensemble::new(
        vec![PhaseParticle::new(
            Vec3::new(0.1, 0.2, 0.3),
            Vec3::ZERO,
            1.0,
        )],
        0.0,
    )
    .unwrap();
    let s = solve_vector_potential(&ens, eps(0.1), 1e-12, 10).unwrap();
    assert_eq!(s.iterations, 1);
    assert_eq!(s.values, vec![Vec3::ZERO]);
}

#[test]
fn reference_residuals_monotone_and_bounded() {
    let s = reference_state(1e-10);
    assert!(s.residual <= 1e-10);
    assert!(s.max_iterate_norm <= s.cbar + 1e-9);
    assert!(s.sup_norm() <= s.cbar + 1e-9);
    for w in s.residual_history[1..].windows(2) {
        assert!(w[1] <= w[0], "{:?}", w);
    }
}

#[test]
fn tolerance_robust_fixed_point() {
    let tol = 1e-8;
    let a = reference_state(tol);
    let b = reference_state(tol / 10.0);
    let gap = a
        .values
        .iter()
        .zip(&b.values)
        .fold(0.0_f64, |m, (x, y)| m.max((*x - *y).max_abs()));
    assert!(gap <= 10.0 * tol, "{gap}");
}

#[test]
fn enforced_bound_does_not_trigger_on_reference() {
    let mut opts = PicardOptions::new(1e-10, 1000);
    opts.enforce_bound = true;
    assert!(solve_vector_potential_with(&reference(), eps(0.05), &opts, None).is_ok());
}

#[test]
fn too_few_iterations_is_no_convergence() {
    let r = solve_vector_potential(&reference(), eps(0.05), 1e-10, 3);
    assert!(matches!(
        r,
        Err(vlasov_darwin::error::Error::NoConvergence { .. })
    ));
}

#[test]
fn far_field_decay() {
    let ens = reference();
    let s = reference_state(1e-10);
    let x = Vec3::new(600.0, 0.0, 800.0);
    let a = vector_potential_at(&s, &ens, x, eps(0.05)).unwrap();
    assert!(a.norm() <= 2.0 * ens.total_weight() / (1e3 - 1.0));
}

#[test]
fn golden_reference_potential() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let golden = read_potential_csv(&dir.join("reference_potential.csv")).unwrap();
    let meta: PotentialMeta = read_json(&dir.join("reference_potential.json")).unwrap();
    let ens = reference();
    let s = reference_state(1e-10);
    assert_eq!(s.iterations, meta.iterations);
    let tight = reference_state(1e-13);
    for ((q, (x, a)), (v, t)) in ens
        .particles()
        .iter()
        .zip(&golden)
        .zip(s.values.iter().zip(&tight.values))
    {
        assert_eq!(q.x, *x);
        assert!((*v - *a).max_abs() <= 1e-12);
        assert!((*t - *a).max_abs() <= 1e-9);
    }
}

#[test]
fn closed_form_gradient_matches_kernel_form() {
    // Both forms read the converged velocities; the probe avoids the sources.
    let ens = reference();
    let s = reference_state(1e-10);
    let x = Vec3::new(1.5, -0.2, 0.4);
    let a = grad_vector_potential(&s, &ens, x, Softening::NONE).unwrap();
    let b = grad_vector_potential_direct(&s, &ens, x).unwrap();
    assert!((a - b).sup_norm() <= 1e-12 * a.sup_norm().max(1.0));
}

fn richardson_ratio(f: impl Fn(f64) -> f64) -> Option<f64> {
    let (e1, e2) = (f(2e-2), f(1e-2));
    (e2 > 1e-9).then(|| e1 / e2)
}

#[test]
fn gradients_are_second_order_differences() {
    let ens = sample(&InitialSpec::reference(Family::GaussianBall, 64, 5)).unwrap();
    let e = eps(0.3);
    let s = solve_vector_potential(&ens, e, 1e-13, 1000).unwrap();
    let x = Vec3::new(0.2, -0.3, 0.1);
    let j = grad_vector_potential(&s, &ens, x, e).unwrap();
    let g = grad_scalar_potential(&ens, x, e).unwrap();
    let err_a = |h: f64| {
        let mut worst = 0.0_f64;
        for k in 0..3 {
            let step = Vec3::unit(k).scale(h);
            let col = (vector_potential_at(&s, &ens, x + step, e).unwrap()
                - vector_potential_at(&s, &ens, x - step, e).unwrap())
            .scale(0.5 / h);
            for i in 0..3 {
                worst = worst.max((col[i] - j.0[i][k]).abs());
            }
        }
        worst
    };
    let err_phi = |h: f64| {
        let mut worst = 0.0_f64;
        for k in 0..3 {
            let step = Vec3::unit(k).scale(h);
            let d = (scalar_potential(&ens, x + step, e).unwrap()
                - scalar_potential(&ens, x - step, e).unwrap())
                / (2.0 * h);
            worst = worst.max((d - g[k]).abs());
        }
        worst
    };
    for ratio in [richardson_ratio(err_a), richardson_ratio(err_phi)]
        .into_iter()
        .flatten()
    {
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }
}

#[test]
fn potential_bounds_and_log_lipschitz_refinement() {
    let ens = reference();
    let s = reference_state(1e-10);
    let (lo, hi) = (Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0));
    let base =
        verify_potential_bounds(&ens, &s, &ProbeSet::random(lo, hi, 1000, 1000, 42)).unwrap();
    let refined =
        verify_potential_bounds(&ens, &s, &ProbeSet::random(lo, hi, 1000, 4000, 42)).unwrap();
    assert!(base.within_bounds && refined.within_bounds);
    assert!(base.log_lipschitz_ratio.is_finite());
    let change = (refined.log_lipschitz_ratio / base.log_lipschitz_ratio - 1.0).abs();
    assert!(change < 0.5, "{change}");
}

#[test]
fn identity_trace_case_and_convergence() {
    let bump = BumpSpec {
        center: Vec3::new(2.0, 0.0, 0.0),
        radius: 1.0,
    };
    let coarse = verify_kernel_identity(&bump, Vec3::ZERO, &QuadSpec { h: 0.05 }).unwrap();
    let fine = kernel_identity_sides(&bump, Vec3::ZERO, &QuadSpec { h: 0.025 }).unwrap();
    let tr = (coarse.lhs.trace() - coarse.rhs.trace()).abs() / coarse.rhs.trace().abs();
    assert!(tr <= 1e-10);
    assert!(coarse.max_rel_discrepancy <= 2e-2);
    assert!(coarse.max_rel_discrepancy / fine.max_rel_discrepancy >= 3.0);
}

#[test]
fn coarse_quadrature_is_reported() {
    let bump = BumpSpec {
        center: Vec3::new(1.2, 0.0, 0.0),
        radius: 1.0,
    };
    let r = verify_kernel_identity(&bump, Vec3::ZERO, &QuadSpec { h: 1.0 });
    assert!(matches!(
        r,
        Err(vlasov_darwin::error::Error::QuadratureTooCoarse { .. })
    ));
}

#[test]
fn laplacian_residual_is_finite() {
    let ens = sample(&InitialSpec::reference(Family::GaussianBall, 64, 5)).unwrap();
    let s = solve_vector_potential(&ens, eps(0.3), 1e-12, 1000).unwrap();
    let r = darwin_laplacian_residual(&s, &ens, Vec3::new(0.1, 0.2, -0.1), 1e-3).unwrap();
    assert!(r.relative_residual.is_finite());
}

#[test]
fn thread_count_does_not_change_results() {
    let ens = reference();
    let solve = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| solve_vector_potential(&ens, eps(0.05), 1e-10, 1000).unwrap())
    };
    assert_eq!(solve(1), solve(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn iterates_stay_in_a_priori_ball(ens in small_ensemble(), e in 0.2..1.0f64) {
        let opts = PicardOptions::new(1e-10, 2000).with_damping(0.25);
        let s = solve_vector_potential_with(&ens, eps(e), &opts, None).unwrap();
        prop_assert!(s.max_iterate_norm <= s.cbar + 1e-9);
        prop_assert!(s.residual <= 1e-10);
    }

    #[test]
    fn converged_potential_is_divergence_free(
        ens in small_ensemble(),
        e in 0.2..1.0f64,
        x in (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64),
    ) {
        let opts = PicardOptions::new(1e-10, 2000).with_damping(0.25);
        let s = solve_vector_potential_with(&ens, eps(e), &opts, None).unwrap();
        let j = grad_vector_potential(&s, &ens, Vec3::new(x.0, x.1, x.2), eps(e)).unwrap();
        prop_assert!(j.trace().abs() / (1.0 + j.sup_norm()) <= 1e-8);
    }

    #[test]
    fn mass_equals_weight_sum(ens in small_ensemble(), cell in 0.05..1.0f64) {
        let d = charge_density_norms(&ens, cell).unwrap();
        let total = neumaier_sum(ens.particles().iter().map(|q| q.w));
        prop_assert!((d.l1_norm - total).abs() <= f64::EPSILON * total);
    }
}
