use vlasov_darwin::dynamics::{force_field, run, run_reversed, step, FlowConfig, Trajectory};
use vlasov_darwin::ensemble::Ensemble;
use vlasov_darwin::error::Error;
use vlasov_darwin::fields::solve_vector_potential;
use vlasov_darwin::kernels::Softening;
use vlasov_darwin::linalg::Vec3;
use vlasov_darwin::sampling::{sample, Family, InitialSpec};

fn eps(e: f64) -> Softening {
    Softening::new(e).unwrap()
}

fn cloud() -> Ensemble {
    sample(&InitialSpec::reference(Family::GaussianBall, 48, 9)).unwrap()
}

fn cfg(dt: f64, t_end: f64) -> FlowConfig {
    FlowConfig::new(dt, t_end, eps(0.2))
}

fn max_gap(a: &Ensemble, b: &Ensemble) -> f64 {
    a.particles()
        .iter()
        .zip(b.particles())
        .map(|(p, q)| p.phase().sub(&q.phase()).norm_sq().sqrt())
        .fold(0.0, f64::max)
}

fn labels_preserved(traj: &Trajectory) -> bool {
    let w0: Vec<f64> = traj.initial.particles().iter().map(|q| q.w).collect();
    traj.snapshots.iter().all(|(_, e)| {
        e.particles().iter().map(|q| q.w).collect::<Vec<_>>() == w0
            && e.total_weight() == traj.initial.total_weight()
    })
}

#[test]
fn speed_limit_and_support_growth() {
    let f0 = cloud();
    let c = cfg(0.05, 1.0);
    let traj = run(&f0, &c).unwrap();
    let r0 = f0.spatial_radius();
    for w in traj.snapshots.windows(2) {
        let (t, e) = &w[1];
        for (p, q) in w[0].1.particles().iter().zip(e.particles()) {
            assert!((q.x - p.x).norm() < c.dt);
        }
        assert!(e.spatial_radius() <= r0 + t);
    }
    assert!(labels_preserved(&traj));
}

#[test]
fn zero_end_time_returns_initial_snapshot() {
    let f0 = cloud();
    let traj = run(&f0, &cfg(0.1, 0.0)).unwrap();
    assert_eq!(traj.snapshots.len(), 1);
    assert_eq!(traj.snapshots[0].1, f0);
}

#[test]
fn reruns_are_bit_identical() {
    let f0 = cloud();
    let a = run(&f0, &cfg(0.05, 0.3)).unwrap();
    let b = run(&f0, &cfg(0.05, 0.3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn thread_count_does_not_change_trajectory() {
    let f0 = cloud();
    let go = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| run(&f0, &cfg(0.05, 0.2)).unwrap())
    };
    assert_eq!(go(1), go(4));
}

#[test]
fn recording_stride_and_times() {
    let mut c = cfg(0.05, 0.5);
    c.record_every = 5;
    let traj = run(&cloud(), &c).unwrap();
    assert_eq!(traj.times(), vec![0.0, 0.25, 0.5]);
    assert_eq!(traj.steps.len(), 10);
}

#[test]
fn time_reversal_returns_to_start() {
    let f0 = cloud();
    let c = cfg(0.05, 0.5);
    let n = c.step_count().unwrap() as f64;
    let one = step(&f0, &c).unwrap();
    let half = cfg(0.025, 0.05);
    let two = run(&f0, &half).unwrap();
    let defect = max_gap(&one, two.last());
    let forward = run(&f0, &c).unwrap();
    let back = run_reversed(forward.last(), &c).unwrap();
    assert!(
        max_gap(back.last(), &f0) <= 10.0 * defect * n,
        "{} vs {}",
        max_gap(back.last(), &f0),
        defect
    );
}

#[test]
fn invalid_configs_are_rejected() {
    let f0 = cloud();
    for bad in [
        FlowConfig::new(0.3, 1.0, eps(0.2)),
        FlowConfig::new(2.0, 1.0, eps(0.2)),
        FlowConfig::new(0.1, 1.0, Softening::NONE),
        FlowConfig {
            fp_tol: 0.0,
            ..cfg(0.1, 1.0)
        },
        FlowConfig {
            record_every: 0,
            ..cfg(0.1, 1.0)
        },
    ] {
        assert!(
            matches!(run(&f0, &bad), Err(Error::InvalidConfig(_))),
            "{bad:?}"
        );
    }
}

#[test]
fn field_failure_reports_time() {
    let mut c = cfg(0.05, 0.2);
    c.fp_max_iter = 1;
    match run(&cloud(), &c) {
        Err(Error::StepFailed { time, .. }) => assert_eq!(time, 0.0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn phase_space_field_is_divergence_free() {
    let ens = cloud();
    let e = eps(0.2);
    let state = solve_vector_potential(&ens, e, 1e-13, 1000).unwrap();
    let h = 1e-5;
    for z in [
        (Vec3::new(0.1, -0.2, 0.3), Vec3::new(0.4, 0.1, -0.2)),
        (Vec3::new(-0.5, 0.0, 0.2), Vec3::new(-1.0, 2.0, 0.5)),
        (Vec3::new(1.5, 1.0, -1.0), Vec3::ZERO),
    ] {
        let mut div = 0.0;
        let mut scale = 0.0_f64;
        for k in 0..6 {
            let (mut zp, mut zm) = (z, z);
            if k < 3 {
                zp.0[k] += h;
                zm.0[k] -= h;
            } else {
                zp.1[k - 3] += h;
                zm.1[k - 3] -= h;
            }
            let (gp, gm) = (
                force_field(&ens, &state, zp, e).unwrap(),
                force_field(&ens, &state, zm, e).unwrap(),
            );
            let d = if k < 3 {
                (gp.0 - gm.0)[k]
            } else {
                (gp.1 - gm.1)[k - 3]
            } / (2.0 * h);
            div += d;
            scale = scale.max((gp.0 - gm.0).max_abs().max((gp.1 - gm.1).max_abs()) / (2.0 * h));
        }
        assert!(div.abs() <= 1e-4 * (1.0 + scale), "{div}");
    }
}
