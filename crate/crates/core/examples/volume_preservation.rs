//! Determinant of the flow map Jacobian along a short run.

use vlasov_darwin::dynamics::{run, volume_preservation_check, FlowConfig};
use vlasov_darwin::kernels::Softening;
use vlasov_darwin::sampling::{sample, Family, InitialSpec};

fn main() -> vlasov_darwin::error::Result<()> {
    let f0 = sample(&InitialSpec::reference(Family::GaussianBall, 64, 11))?;
    for dt in [0.04, 0.02] {
        let traj = run(&f0, &FlowConfig::new(dt, 0.2, Softening::new(0.2)?))?;
        let dev = volume_preservation_check(&traj, 4, 1e-4)?;
        println!("dt = {dt}: max |det DX - 1| = {dev:.3e}");
    }
    Ok(())
}
