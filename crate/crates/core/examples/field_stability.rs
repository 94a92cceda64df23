//! Field differences between two nearby ensembles against their W2 distance.

use vlasov_darwin::fields::PicardOptions;
use vlasov_darwin::kernels::Softening;
use vlasov_darwin::sampling::{jitter, sample, Family, InitialSpec};
use vlasov_darwin::stability::{field_difference_vs_w2, ProbeGrid};

fn main() -> vlasov_darwin::error::Result<()> {
    let a = sample(&InitialSpec::reference(Family::GaussianBall, 128, 9))?;
    let eps = Softening::new(0.2)?;
    let opts = PicardOptions::new(1e-12, 500);
    for delta in [1e-2, 1e-3] {
        let b = jitter(&a, delta, 9)?;
        let grid = ProbeGrid::covering(&a, &b, 12);
        let d = field_difference_vs_w2(&a, &b, &grid, eps, &opts)?;
        println!(
            "delta = {delta}: W2 = {:.3e}  |dgradPhi|/W2 = {:.3}  |dgradA|/W2 = {:.3}",
            d.w2, d.ratio_phi, d.ratio_a
        );
    }
    Ok(())
}
