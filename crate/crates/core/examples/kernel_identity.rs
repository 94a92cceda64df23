//! Quadrature check of the Laplacian identity behind the Darwin kernel.

use vlasov_darwin::fields::verify::{kernel_identity_sides, BumpSpec, QuadSpec};
use vlasov_darwin::linalg::Vec3;

fn main() -> vlasov_darwin::error::Result<()> {
    let bump = BumpSpec {
        center: Vec3::new(2.0, 0.0, 0.0),
        radius: 1.0,
    };
    for h in [0.1, 0.05, 0.025] {
        let r = kernel_identity_sides(&bump, Vec3::ZERO, &QuadSpec { h })?;
        println!(
            "h = {h}: {} cells per axis, max relative discrepancy {:.3e}",
            r.cells_per_axis, r.max_rel_discrepancy
        );
    }
    Ok(())
}
