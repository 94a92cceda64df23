//! Relativistic velocity map and the Darwin kernel, exact and softened.

use vlasov_darwin::kernels::{
    coulomb_kernel, darwin_kernel, darwin_kernel_gradient, velocity, velocity_jacobian_det,
    velocity_jacobian_min_eigenvalue, Softening,
};
use vlasov_darwin::linalg::{tensor_sup_norm, Vec3};

fn main() -> vlasov_darwin::error::Result<()> {
    for g in [0.0, 1.0, 10.0, 100.0] {
        let p = Vec3::new(g, 0.0, 0.0);
        println!(
            "|p| = {g:>5}: |v| = {:.6}  det Dv = {:.3e}  min eig Dv = {:.3e}",
            velocity(p).norm(),
            velocity_jacobian_det(p),
            velocity_jacobian_min_eigenvalue(p)
        );
    }

    let x = Vec3::ZERO;
    let y = Vec3::new(0.3, 0.4, 0.0);
    let exact = darwin_kernel(x, y, Softening::NONE)?;
    println!("K(x, y) at r = 0.5:\n{exact:?}");
    println!("trace K = {:.6} (4/r = 8)", exact.trace());

    for eps in [0.1, 0.5] {
        let eps = Softening::new(eps)?;
        let k = darwin_kernel(x, y, eps)?;
        let diag = darwin_kernel(x, x, eps)?;
        let grad = darwin_kernel_gradient(x, y, eps)?;
        println!(
            "eps = {}: |K_eps - K|_sup = {:.3e}  K_eps(x,x)_11 = {:.4} (4/(3 eps) = {:.4})  |grad K_eps| = {:.3}  G_eps = {:.4}",
            eps.value(),
            (k - exact).sup_norm(),
            diag.0[0][0],
            4.0 / (3.0 * eps.value()),
            tensor_sup_norm(&grad),
            coulomb_kernel(x, y, eps)?
        );
    }
    Ok(())
}
