//! Writes an ensemble, a potential, and a plan to a temporary directory and
//! reads them back.

use vlasov_darwin::fields::solve_vector_potential;
use vlasov_darwin::io;
use vlasov_darwin::kernels::Softening;
use vlasov_darwin::sampling::{sample, Family, InitialSpec};
use vlasov_darwin::transport::w2_exact;

fn main() -> vlasov_darwin::error::Result<()> {
    let dir = std::env::temp_dir().join(format!("rvd-formats-{}", std::process::id()));
    let a = sample(&InitialSpec::reference(Family::UniformBall, 16, 1))?;
    let b = sample(&InitialSpec::reference(Family::UniformBall, 16, 2))?;

    io::write_ensemble_csv(&dir.join("a.csv"), &a)?;
    let back = io::read_ensemble_csv(&dir.join("a.csv"), 0.0)?;
    println!("ensemble round trip exact: {}", back == a);

    let state = solve_vector_potential(&a, Softening::new(0.5)?, 1e-10, 500)?;
    io::write_potential(
        &dir.join("potential.csv"),
        &dir.join("potential.json"),
        &a,
        &state,
    )?;

    let plan = w2_exact(&a, &b)?;
    io::write_plan(&dir.join("plan.csv"), &dir.join("plan.json"), &plan)?;
    println!(
        "{}",
        std::fs::read_to_string(dir.join("plan.json")).unwrap_or_default()
    );
    let _ = std::fs::remove_dir_all(&dir);
    Ok(())
}
