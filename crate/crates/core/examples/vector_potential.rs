//! Picard solve for the self-consistent vector potential of a sampled ensemble.

use vlasov_darwin::fields::{
    a_priori_bound, charge_density_norms, default_cell_size, probe_fields,
    solve_vector_potential_with, PicardOptions,
};
use vlasov_darwin::kernels::Softening;
use vlasov_darwin::linalg::Vec3;
use vlasov_darwin::sampling::{sample, Family, InitialSpec};

fn main() -> vlasov_darwin::error::Result<()> {
    let ens = sample(&InitialSpec::reference(Family::GaussianBall, 256, 7))?;
    let eps = Softening::new(0.1)?;
    let state = solve_vector_potential_with(&ens, eps, &PicardOptions::new(1e-10, 500), None)?;
    println!(
        "{} iterations, residual {:.2e}, sup |A| = {:.4}",
        state.iterations,
        state.residual,
        state.sup_norm()
    );
    for (k, r) in state.residual_history.iter().enumerate().step_by(10) {
        println!("  iter {k:>3}: {r:.3e}");
    }

    let density = charge_density_norms(&ens, default_cell_size(&ens))?;
    println!(
        "|rho|_1 = {:.3}  |rho|_inf = {:.3}  a-priori bound {:.3}  cbar {:.3}",
        density.l1_norm,
        density.linf_norm,
        a_priori_bound(&density),
        state.cbar
    );

    let probe = probe_fields(&state, &ens, Vec3::new(0.2, -0.1, 0.3), eps)?;
    println!(
        "at (0.2, -0.1, 0.3): phi = {:.4}  A = {:?}",
        probe.phi, probe.a
    );
    Ok(())
}
