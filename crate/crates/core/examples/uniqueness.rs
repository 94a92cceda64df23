//! Two flows from nearby data, their coupling functional Q, and the Gronwall fit.

use vlasov_darwin::dynamics::FlowConfig;
use vlasov_darwin::kernels::Softening;
use vlasov_darwin::sampling::{sample, Family, InitialSpec};
use vlasov_darwin::stability::{gronwall_envelope, uniqueness_experiment, PerturbSpec};

fn main() -> vlasov_darwin::error::Result<()> {
    let f0 = sample(&InitialSpec::reference(Family::GaussianBall, 48, 5))?;
    let mut cfg = FlowConfig::new(0.05, 0.5, Softening::new(0.2)?);
    cfg.seed = 5;
    let trace = uniqueness_experiment(&f0, &cfg, PerturbSpec::Jitter { delta: 1e-3 })?;
    let q0 = trace.q_values[0];
    println!(
        "C = {:.4}, bound satisfied: {}",
        trace.gronwall_c, trace.bound_satisfied
    );
    for k in 0..trace.times.len() {
        let t = trace.times[k];
        println!(
            "t = {t:.2}  Q = {:.4e}  envelope {:.4e}  W2 = {:.4e}  regime {}",
            trace.q_values[k],
            gronwall_envelope(q0, trace.gronwall_c, t),
            trace.w2_values[k],
            trace.regime_flags[k]
        );
    }
    Ok(())
}
