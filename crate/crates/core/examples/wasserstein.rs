//! Exact W2 between equal-weight ensembles, the McCann interpolant on
//! theta in [1, 2], and the continuity equation along it.

use vlasov_darwin::linalg::Vec6;
use vlasov_darwin::sampling::{sample, Family, InitialSpec};
use vlasov_darwin::transport::{
    continuity_residual, density_bound_report, mccann_interpolant, w2_exact, QuarticBump,
};

fn main() -> vlasov_darwin::error::Result<()> {
    let a = sample(&InitialSpec::reference(Family::GaussianBall, 200, 1))?;
    let b = sample(&InitialSpec::reference(Family::UniformBall, 200, 2))?;
    let plan = w2_exact(&a, &b)?;
    println!("{:?}", plan.summary());
    println!("first assignments: {:?}", &plan.assignment[..8]);

    for theta in [1.0, 1.5, 2.0] {
        let mid = mccann_interpolant(&a, &plan, theta)?;
        let to_a = w2_exact(&a, &mid.ensemble)?.w2();
        println!(
            "theta = {theta}: W2(a, f_theta) = {to_a:.5} ((theta - 1) W2 = {:.5})",
            (theta - 1.0) * plan.w2()
        );
    }

    let grid: Vec<f64> = (1..10).map(|k| 1.0 + k as f64 / 10.0).collect();
    let bump = QuarticBump {
        center: Vec6([0.0; 6]),
        radius: 1.5,
    };
    let res = continuity_residual(&a, &plan, &grid, 1e-4, &bump)?;
    println!("continuity residual {res:.3e}");

    let report = density_bound_report(&a, &b, &plan, 1.5, 0.5)?;
    println!(
        "density at theta = 1.5: {:.3} vs endpoints {:.3}",
        report.interpolant, report.endpoint_max
    );
    Ok(())
}
