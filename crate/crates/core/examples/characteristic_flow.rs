//! RK4 integration of the characteristic flow, forward then backward.

use vlasov_darwin::dynamics::{run, run_reversed, FlowConfig};
use vlasov_darwin::kernels::Softening;
use vlasov_darwin::sampling::{sample, Family, InitialSpec};

fn main() -> vlasov_darwin::error::Result<()> {
    let f0 = sample(&InitialSpec::reference(Family::TwoStream, 64, 3))?;
    let mut cfg = FlowConfig::new(0.05, 0.5, Softening::new(0.2)?);
    cfg.record_every = 2;

    let forward = run(&f0, &cfg)?;
    for (t, ens) in &forward.snapshots {
        println!("t = {t:.2}  support radius {:.4}", ens.support_radius());
    }
    for meta in forward.steps.iter().take(3) {
        println!(
            "  step at t = {:.2}: {} Picard iterations, residual {:.1e}, damping {}",
            meta.time, meta.iterations, meta.residual, meta.damping
        );
    }

    let back = run_reversed(forward.last(), &cfg)?;
    let err = f0
        .particles()
        .iter()
        .zip(back.last().particles())
        .map(|(a, b)| a.phase().sub(&b.phase()).norm_sq().sqrt())
        .fold(0.0, f64::max);
    println!("round trip max phase error {err:.3e}");
    Ok(())
}
