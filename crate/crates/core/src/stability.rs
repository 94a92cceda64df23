//! Label-coupled stability of two characteristic flows.
//!
//! `Q(t) = ½ Σ wᵢ |Z₁(t, zᵢ) − Z₂(t, zᵢ)|²` couples the runs through the
//! shared particle labels; `W₂` is computed separately from the optimal
//! plan, so `W₂² ≤ 2Q` holds at every recorded time.
//!
//! The log-Gronwall fit substitutes `y = 1 − ln Q`, turning
//! `Q̇ ≤ C Q (1 − ln Q)` into `ẏ ≥ −C y`.

use crate::dynamics::{run, FlowConfig, Trajectory};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fields::{
    probe_fields, solve_vector_potential_with, vector_potential_at, PicardOptions,
    VectorPotentialState,
};
use crate::kernels::Softening;
use crate::linalg::{phase_dist_sq, Vec3};
use crate::sampling::jitter;
use crate::transport::w2_exact;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Separation threshold `e⁻¹` under which the log-Gronwall inequality holds.
pub const REGIME_LIMIT: f64 = 0.367_879_441_171_442_33;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PerturbSpec {
    /// Second run identical to the first.
    None,
    /// Second run with `dt/2`.
    DtHalving,
    /// Second run with `fp_tol/10`.
    FpTolTightening,
    /// Second run from `f₀` with every particle moved by `delta` in R⁶.
    Jitter { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityTrace {
    pub times: Vec<f64>,
    pub q_values: Vec<f64>,
    pub w2_values: Vec<f64>,
    /// `max_i |Z₁ − Z₂|` in R⁶ at each time.
    pub sup_separation: Vec<f64>,
    pub regime_flags: Vec<bool>,
    pub gronwall_c: f64,
    pub bound_satisfied: bool,
    /// Every recorded time is inside the `e⁻¹` regime.
    pub regime_valid: bool,
    /// `Q ≡ 0`: the two flows coincide.
    pub exact_uniqueness: bool,
    /// Index range `[start, end)` used by the fit.
    pub fit_window: (usize, usize),
    pub perturbation: PerturbSpec,
}

fn check_labels(f0: &Ensemble, e: &Ensemble) -> Result<()> {
    if f0.len() != e.len()
        || f0
            .particles()
            .iter()
            .zip(e.particles())
            .any(|(a, b)| a.w != b.w)
    {
        return Err(Error::LabelMismatch);
    }
    Ok(())
}

/// `(Q, sup separation)` between two ensembles carrying the labels of `f0`.
pub fn label_coupling(f0: &Ensemble, e1: &Ensemble, e2: &Ensemble) -> Result<(f64, f64)> {
    check_labels(f0, e1)?;
    check_labels(f0, e2)?;
    let mut q = 0.0;
    let mut sup = 0.0_f64;
    for ((a, b), z) in e1
        .particles()
        .iter()
        .zip(e2.particles())
        .zip(f0.particles())
    {
        let d2 = phase_dist_sq(a.x, a.p, b.x, b.p);
        q += z.w * d2;
        sup = sup.max(d2.sqrt());
    }
    Ok((0.5 * q, sup))
}

/// `Q` at snapshot `t_index` of two runs from the same labelled data.
pub fn q_functional(
    f0: &Ensemble,
    traj1: &Trajectory,
    traj2: &Trajectory,
    t_index: usize,
) -> Result<f64> {
    let (s1, s2) = snapshot_pair(traj1, traj2, t_index)?;
    label_coupling(f0, s1, s2).map(|(q, _)| q)
}

fn snapshot_pair<'a>(
    traj1: &'a Trajectory,
    traj2: &'a Trajectory,
    t_index: usize,
) -> Result<(&'a Ensemble, &'a Ensemble)> {
    let get = |t: &'a Trajectory| {
        t.snapshots.get(t_index).ok_or(Error::SizeMismatch {
            left: t_index + 1,
            right: t.snapshots.len(),
        })
    };
    let ((t1, e1), (t2, e2)) = (get(traj1)?, get(traj2)?);
    if (t1 - t2).abs() > 1e-12 * t1.abs().max(1.0) {
        return Err(Error::InvalidConfig(format!(
            "snapshot {t_index} times differ: {t1} vs {t2}"
        )));
    }
    Ok((e1, e2))
}

/// Upper envelope `exp(1 − (1 − ln Q₀) e^{−C t})` of the log-Gronwall
/// inequality after time `t` from `Q₀`.
pub fn gronwall_envelope(q0: f64, c: f64, t: f64) -> f64 {
    (1.0 - (1.0 - q0.ln()) * (-c * t).exp()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallFit {
    pub c: f64,
    pub bound_satisfied: bool,
}

/// Smallest `C ≥ 0` with `y(t_{k+1}) ≥ y(t_k) e^{−C Δt}` on every
/// consecutive pair, `y = 1 − ln Q`, and whether `Q` stays under the
/// envelope started at the first sample.
pub fn gronwall_fit(times: &[f64], q_values: &[f64]) -> Result<GronwallFit> {
    if times.len() != q_values.len() {
        return Err(Error::SizeMismatch {
            left: times.len(),
            right: q_values.len(),
        });
    }
    if let Some(index) = q_values.iter().position(|&q| !(q > 0.0)) {
        return Err(Error::NonPositiveQ { index });
    }
    let y: Vec<f64> = q_values.iter().map(|q| 1.0 - q.ln()).collect();
    let mut c = 0.0_f64;
    for k in 1..y.len() {
        let dt = times[k] - times[k - 1];
        if dt > 0.0 && y[k - 1] > 0.0 && y[k] > 0.0 {
            c = c.max(-(y[k] / y[k - 1]).ln() / dt);
        }
    }
    let bound_satisfied = match (times.first(), q_values.first()) {
        (Some(&t0), Some(&q0)) => times.iter().zip(q_values).all(|(&t, &q)| {
            let env = gronwall_envelope(q0, c, t - t0);
            q <= env * (1.0 + 1e-12)
        }),
        _ => true,
    };
    Ok(GronwallFit { c, bound_satisfied })
}

impl StabilityTrace {
    /// Assembles the trace of two runs sharing the labels of `f0`.
    pub fn from_runs(
        f0: &Ensemble,
        traj1: &Trajectory,
        traj2: &Trajectory,
        perturbation: PerturbSpec,
    ) -> Result<Self> {
        if traj1.snapshots.len() != traj2.snapshots.len() {
            return Err(Error::SizeMismatch {
                left: traj1.snapshots.len(),
                right: traj2.snapshots.len(),
            });
        }
        let rows = (0..traj1.snapshots.len())
            .into_par_iter()
            .map(|k| {
                let (e1, e2) = snapshot_pair(traj1, traj2, k)?;
                let (q, sup) = label_coupling(f0, e1, e2)?;
                let w2 = w2_exact(e1, e2)?.w2();
                Ok((traj1.snapshots[k].0, q, w2, sup))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut trace = StabilityTrace {
            times: rows.iter().map(|r| r.0).collect(),
            q_values: rows.iter().map(|r| r.1).collect(),
            w2_values: rows.iter().map(|r| r.2).collect(),
            sup_separation: rows.iter().map(|r| r.3).collect(),
            regime_flags: rows.iter().map(|r| r.3 <= REGIME_LIMIT).collect(),
            gronwall_c: 0.0,
            bound_satisfied: true,
            regime_valid: false,
            exact_uniqueness: false,
            fit_window: (0, 0),
            perturbation,
        };
        trace.regime_valid = trace.regime_flags.iter().all(|&f| f);
        trace.exact_uniqueness = trace.q_values.iter().all(|&q| q == 0.0);
        if !trace.exact_uniqueness {
            // Longest regime-valid run of positive Q from the first positive sample.
            let start = trace.q_values.iter().position(|&q| q > 0.0).unwrap_or(0);
            let end = (start..trace.times.len())
                .find(|&k| !(trace.q_values[k] > 0.0) || !trace.regime_flags[k])
                .unwrap_or(trace.times.len());
            trace.fit_window = (start, end);
            let fit = trace.fit(start, end)?;
            trace.gronwall_c = fit.c;
            trace.bound_satisfied = fit.bound_satisfied;
        }
        Ok(trace)
    }

    /// Gronwall fit on samples `[start, end)`.
    pub fn fit(&self, start: usize, end: usize) -> Result<GronwallFit> {
        let end = end.min(self.times.len());
        if let Some(k) = (start..end).find(|&k| !self.regime_flags[k]) {
            return Err(Error::RegimeViolated {
                separation: self.sup_separation[k],
            });
        }
        gronwall_fit(&self.times[start..end], &self.q_values[start..end])
    }

    /// Largest `W₂² − 2Q` over the trace; nonpositive when the coupling
    /// inequality holds.
    pub fn coupling_excess(&self) -> f64 {
        self.w2_values
            .iter()
            .zip(&self.q_values)
            .map(|(w, q)| w * w - 2.0 * q)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Runs the pair of flows selected by `perturbation` and assembles the trace.
pub fn uniqueness_experiment(
    f0: &Ensemble,
    cfg: &FlowConfig,
    perturbation: PerturbSpec,
) -> Result<StabilityTrace> {
    let (start2, cfg2) = match perturbation {
        PerturbSpec::None => (f0.clone(), *cfg),
        PerturbSpec::DtHalving => (
            f0.clone(),
            FlowConfig {
                dt: 0.5 * cfg.dt,
                record_every: 2 * cfg.record_every,
                ..*cfg
            },
        ),
        PerturbSpec::FpTolTightening => (
            f0.clone(),
            FlowConfig {
                fp_tol: 0.1 * cfg.fp_tol,
                ..*cfg
            },
        ),
        PerturbSpec::Jitter { delta } => {
            if !(delta >= 0.0) || !delta.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "jitter delta must be nonnegative, got {delta}"
                )));
            }
            (jitter(f0, delta, cfg.seed)?, *cfg)
        }
    };
    let (t1, t2) = if perturbation == PerturbSpec::None {
        let t = run(f0, cfg)?;
        (t.clone(), t)
    } else {
        let (a, b) = rayon::join(|| run(f0, cfg), || run(&start2, &cfg2));
        (a?, b?)
    };
    StabilityTrace::from_runs(f0, &t1, &t2, perturbation)
}

/// One row of a dt-halving study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderRow {
    pub dt: f64,
    /// Terminal `W₂` between this run and the next finer one.
    pub w2_to_next: Option<f64>,
    /// `w2_to_next` of the previous row divided by this row's.
    pub ratio: Option<f64>,
}

/// Terminal `W₂` between runs at `dt, dt/2, …, dt/2^{levels−1}`.
pub fn dt_halving_study(f0: &Ensemble, cfg: &FlowConfig, levels: usize) -> Result<Vec<OrderRow>> {
    if levels < 2 {
        return Err(Error::InvalidConfig(
            "a halving study needs two levels".into(),
        ));
    }
    let finals = (0..levels)
        .into_par_iter()
        .map(|k| {
            let scale = (1_usize << k) as f64;
            let c = FlowConfig {
                dt: cfg.dt / scale,
                record_every: usize::MAX,
                ..*cfg
            };
            run(f0, &c).map(|t| t.last().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<OrderRow> = Vec::with_capacity(levels);
    for k in 0..levels {
        let w2 = if k + 1 < levels {
            Some(w2_exact(&finals[k], &finals[k + 1])?.w2())
        } else {
            None
        };
        let ratio = match (rows.last().and_then(|r| r.w2_to_next), w2) {
            (Some(prev), Some(cur)) if cur > 0.0 => Some(prev / cur),
            _ => None,
        };
        rows.push(OrderRow {
            dt: cfg.dt / (1_usize << k) as f64,
            w2_to_next: w2,
            ratio,
        });
    }
    Ok(rows)
}

/// Midpoint grid of `n³` cells over the box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub lo: Vec3,
    pub hi: Vec3,
    pub n: usize,
}

impl ProbeGrid {
    /// Bounding box of both ensembles' positions with `n³` cells.
    pub fn covering(a: &Ensemble, b: &Ensemble, n: usize) -> Self {
        let (lo_a, hi_a) = a.position_bounds();
        let (lo_b, hi_b) = b.position_bounds();
        let mut lo = lo_a;
        let mut hi = hi_a;
        for k in 0..3 {
            lo[k] = lo[k].min(lo_b[k]);
            hi[k] = hi[k].max(hi_b[k]);
        }
        ProbeGrid { lo, hi, n }
    }

    pub fn cell_volume(&self) -> f64 {
        let d = self.hi - self.lo;
        (0..3).map(|k| d[k] / self.n as f64).product()
    }

    pub fn points(&self) -> Vec<Vec3> {
        let n = self.n;
        let h = (self.hi - self.lo).scale(1.0 / n as f64);
        let mut out = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push(Vec3::new(
                        self.lo[0] + (i as f64 + 0.5) * h[0],
                        self.lo[1] + (j as f64 + 0.5) * h[1],
                        self.lo[2] + (k as f64 + 0.5) * h[2],
                    ));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldDifference {
    pub w2: f64,
    /// `‖∇Φ₁ − ∇Φ₂‖_{L²}` on the grid.
    pub l2_grad_phi: f64,
    /// `‖∂ₓA₁ − ∂ₓA₂‖_{L²}` on the grid (entrywise Frobenius).
    pub l2_grad_a: f64,
    /// `Σ wᵢ |A₁(xᵢ) − A₂(xᵢ)|²` over the particles of the first ensemble.
    pub last_integral: f64,
    pub ratio_phi: f64,
    pub ratio_a: f64,
    pub ratio_last: f64,
    /// `W₂ = 0`; ratios reported as 0.
    pub degenerate: bool,
}

/// Field differences of two ensembles divided by `W₂` (resp. `W₂²`).
pub fn field_difference_vs_w2(
    ens1: &Ensemble,
    ens2: &Ensemble,
    grid: &ProbeGrid,
    eps: Softening,
    opts: &PicardOptions,
) -> Result<FieldDifference> {
    let w2 = w2_exact(ens1, ens2)?.w2();
    let (s1, s2) = rayon::join(
        || solve_vector_potential_with(ens1, eps, opts, None),
        || solve_vector_potential_with(ens2, eps, opts, None),
    );
    let (s1, s2) = (s1?, s2?);
    let points = grid.points();
    let sums = points
        .par_iter()
        .map(|&x| {
            let f1 = probe_fields(&s1, ens1, x, eps)?;
            let f2 = probe_fields(&s2, ens2, x, eps)?;
            let dphi = (f1.grad_phi - f2.grad_phi).norm_sq();
            let da = f1.grad_a - f2.grad_a;
            let da2: f64 = da.0.iter().flatten().map(|v| v * v).sum();
            Ok((dphi, da2))
        })
        .collect::<Result<Vec<_>>>()?;
    let vol = grid.cell_volume();
    let l2_grad_phi = (sums.iter().map(|s| s.0).sum::<f64>() * vol).sqrt();
    let l2_grad_a = (sums.iter().map(|s| s.1).sum::<f64>() * vol).sqrt();
    let last_integral = last_integral(&s1, ens1, &s2, ens2, eps)?;
    let degenerate = w2 == 0.0;
    let ratio = |num: f64, den: f64| if degenerate { 0.0 } else { num / den };
    Ok(FieldDifference {
        w2,
        l2_grad_phi,
        l2_grad_a,
        last_integral,
        ratio_phi: ratio(l2_grad_phi, w2),
        ratio_a: ratio(l2_grad_a, w2),
        ratio_last: ratio(last_integral, w2 * w2),
        degenerate,
    })
}

fn last_integral(
    s1: &VectorPotentialState,
    ens1: &Ensemble,
    s2: &VectorPotentialState,
    ens2: &Ensemble,
    eps: Softening,
) -> Result<f64> {
    let terms = ens1
        .particles()
        .par_iter()
        .zip(&s1.values)
        .map(|(q, a1)| {
            let a2 = vector_potential_at(s2, ens2, q.x, eps)?;
            Ok(q.w * (*a1 - a2).norm_sq())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum())
}
