//! Characteristic flow of the particle system under self-consistent fields.
//!
//! Each RK4 stage re-solves the vector potential on the stage configuration,
//! warm-started from the previous stage. When plain Picard fails the
//! stepper retries with damping `θ = 1/2, 1/4, 1/8` and keeps the first
//! value that works for the rest of the run.

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fields::{probe_fields, solve_on_table, PairTable, PicardOptions, VectorPotentialState};
use crate::kernels::{velocity, Softening};
use crate::linalg::{Mat3, Vec3};
use nalgebra::Matrix6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fallback relaxation factors tried after plain Picard fails.
const DAMPING_LADDER: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub t_end: f64,
    pub eps: Softening,
    pub fp_tol: f64,
    pub fp_max_iter: usize,
    pub seed: u64,
    pub record_every: usize,
}

impl FlowConfig {
    pub fn new(dt: f64, t_end: f64, eps: Softening) -> Self {
        FlowConfig {
            dt,
            t_end,
            eps,
            fp_tol: 1e-10,
            fp_max_iter: 500,
            seed: 0,
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be nonnegative, got {}", self.t_end));
        }
        if self.t_end > 0.0 && self.dt > self.t_end {
            return bad(format!("dt {} exceeds t_end {}", self.dt, self.t_end));
        }
        if !(self.fp_tol > 0.0) {
            return bad(format!("fp_tol must be positive, got {}", self.fp_tol));
        }
        if self.fp_max_iter == 0 || self.record_every == 0 {
            return bad("fp_max_iter and record_every must be positive".into());
        }
        if self.eps.is_exact() {
            return bad("particle dynamics needs eps > 0".into());
        }
        self.step_count().map(|_| ())
    }

    /// Number of steps `t_end / dt`, which must be an integer.
    pub fn step_count(&self) -> Result<usize> {
        let n = (self.t_end / self.dt).round();
        if (n * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(self.dt) {
            return Err(Error::InvalidConfig(format!(
                "t_end {} is not a multiple of dt {}",
                self.t_end, self.dt
            )));
        }
        Ok(n as usize)
    }
}

/// Field-solve bookkeeping for one RK4 step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMeta {
    /// Time at the start of the step.
    pub time: f64,
    /// Picard iterations summed over the four stages.
    pub iterations: usize,
    /// Largest final residual over the stages.
    pub residual: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial: Ensemble,
    pub snapshots: Vec<(f64, Ensemble)>,
    pub steps: Vec<StepMeta>,
    pub cfg: FlowConfig,
    /// `+1` forward in time, `-1` for a reversed run.
    pub direction: f64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|(t, _)| *t).collect()
    }

    pub fn last(&self) -> &Ensemble {
        &self.snapshots.last().expect("trajectory has a snapshot").1
    }
}

/// Phase-space velocity `G(z) = (v(p − A(x)), −∇Φ(x) + (∂ₓA)ᵀ v)` at an
/// arbitrary point in the fields of `ens`.
pub fn force_field(
    ens: &Ensemble,
    state: &VectorPotentialState,
    z: (Vec3, Vec3),
    eps: Softening,
) -> Result<(Vec3, Vec3)> {
    let f = probe_fields(state, ens, z.0, eps)?;
    let v = velocity(z.1 - f.a);
    Ok((v, -f.grad_phi + f.grad_a.tr_mul_vec(v)))
}

fn drive(grad_phi: Vec3, grad_a: &Mat3, v: Vec3) -> Vec3 {
    -grad_phi + grad_a.tr_mul_vec(v)
}

type Phase = Vec<(Vec3, Vec3)>;

/// RK4 integrator carrying the warm start and sticky damping between calls.
struct Stepper<'a> {
    cfg: &'a FlowConfig,
    damping_index: usize,
    warm: Option<Vec<Vec3>>,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a FlowConfig) -> Self {
        Stepper {
            cfg,
            damping_index: 0,
            warm: None,
        }
    }

    fn solve(&mut self, ens: &Ensemble, table: &PairTable) -> Result<VectorPotentialState> {
        loop {
            let theta = DAMPING_LADDER[self.damping_index];
            let opts =
                PicardOptions::new(self.cfg.fp_tol, self.cfg.fp_max_iter).with_damping(theta);
            match solve_on_table(ens, table, self.cfg.eps, &opts, self.warm.as_deref()) {
                Ok(state) => {
                    self.warm = Some(state.values.clone());
                    return Ok(state);
                }
                Err(Error::NoConvergence { .. })
                    if self.damping_index + 1 < DAMPING_LADDER.len() =>
                {
                    self.damping_index += 1;
                    self.warm = None;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Derivatives at the particles and at passive tracers.
    fn rates(
        &mut self,
        ens: &Ensemble,
        tracers: &[(Vec3, Vec3)],
        meta: &mut StepMeta,
    ) -> Result<(Phase, Phase)> {
        let positions: Vec<Vec3> = ens.positions().collect();
        let table = PairTable::build(&positions, self.cfg.eps)?;
        let state = self.solve(ens, &table)?;
        meta.iterations += state.iterations;
        meta.residual = meta.residual.max(state.residual);
        meta.damping = DAMPING_LADDER[self.damping_index];
        let weights: Vec<f64> = ens.particles().iter().map(|q| q.w).collect();
        let grads = table.gradients(&weights, &state.velocities);
        let particles = state
            .velocities
            .iter()
            .zip(&grads)
            .map(|(v, (gphi, ja))| (*v, drive(*gphi, ja, *v)))
            .collect();
        let eps = self.cfg.eps;
        let tracer_rates = tracers
            .par_iter()
            .map(|&z| force_field(ens, &state, z, eps))
            .collect::<Result<Vec<_>>>()?;
        Ok((particles, tracer_rates))
    }

    /// One RK4 step of signed size `h`; tracers ride along passively.
    fn step(
        &mut self,
        ens: &Ensemble,
        tracers: &mut [(Vec3, Vec3)],
        h: f64,
    ) -> Result<(Ensemble, StepMeta)> {
        let mut meta = StepMeta {
            time: ens.time(),
            iterations: 0,
            residual: 0.0,
            damping: 1.0,
        };
        let z0: Phase = ens.particles().iter().map(|q| (q.x, q.p)).collect();
        let y0: Phase = tracers.to_vec();
        let shift = |base: &Phase, k: &Phase, c: f64| -> Phase {
            base.iter()
                .zip(k)
                .map(|(&(x, p), &(dx, dp))| (x + dx.scale(c), p + dp.scale(c)))
                .collect()
        };
        let t0 = ens.time();
        let (k1, l1) = self.rates(ens, &y0, &mut meta)?;
        let e2 = ens.with_phase(&shift(&z0, &k1, 0.5 * h), t0 + 0.5 * h)?;
        let (k2, l2) = self.rates(&e2, &shift(&y0, &l1, 0.5 * h), &mut meta)?;
        let e3 = ens.with_phase(&shift(&z0, &k2, 0.5 * h), t0 + 0.5 * h)?;
        let (k3, l3) = self.rates(&e3, &shift(&y0, &l2, 0.5 * h), &mut meta)?;
        let e4 = ens.with_phase(&shift(&z0, &k3, h), t0 + h)?;
        let (k4, l4) = self.rates(&e4, &shift(&y0, &l3, h), &mut meta)?;
        let combine = |base: &[(Vec3, Vec3)], k: [&Phase; 4]| -> Phase {
            (0..base.len())
                .map(|i| {
                    let (x, p) = base[i];
                    let dx = k[0][i].0 + (k[1][i].0 + k[2][i].0).scale(2.0) + k[3][i].0;
                    let dp = k[0][i].1 + (k[1][i].1 + k[2][i].1).scale(2.0) + k[3][i].1;
                    (x + dx.scale(h / 6.0), p + dp.scale(h / 6.0))
                })
                .collect()
        };
        let next = ens.with_phase(&combine(&z0, [&k1, &k2, &k3, &k4]), t0 + h)?;
        let moved = combine(&y0, [&l1, &l2, &l3, &l4]);
        tracers.copy_from_slice(&moved);
        Ok((next, meta))
    }
}

/// One RK4 step of size `cfg.dt`.
pub fn step(ens: &Ensemble, cfg: &FlowConfig) -> Result<Ensemble> {
    cfg.validate()?;
    Stepper::new(cfg).step(ens, &mut [], cfg.dt).map(|(e, _)| e)
}

fn integrate(
    f0: &Ensemble,
    cfg: &FlowConfig,
    direction: f64,
    tracers: &mut [(Vec3, Vec3)],
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = cfg.step_count()?;
    let mut stepper = Stepper::new(cfg);
    let mut current = f0.clone();
    let mut snapshots = vec![(f0.time(), f0.clone())];
    let mut steps = Vec::with_capacity(n);
    for k in 1..=n {
        let (next, meta) = stepper
            .step(&current, tracers, direction * cfg.dt)
            .map_err(|e| Error::StepFailed {
                time: current.time(),
                source: Box::new(e),
            })?;
        steps.push(meta);
        // Snap the clock to the grid to keep recorded times exact multiples.
        current = next.with_time(f0.time() + direction * k as f64 * cfg.dt);
        if k % cfg.record_every == 0 || k == n {
            snapshots.push((current.time(), current.clone()));
        }
    }
    Ok(Trajectory {
        initial: f0.clone(),
        snapshots,
        steps,
        cfg: *cfg,
        direction,
    })
}

/// Integrates from `f0` to `f0.time() + t_end`.
pub fn run(f0: &Ensemble, cfg: &FlowConfig) -> Result<Trajectory> {
    integrate(f0, cfg, 1.0, &mut [])
}

/// Integrates backwards in time with step `−dt` over a span `t_end`.
pub fn run_reversed(f_t: &Ensemble, cfg: &FlowConfig) -> Result<Trajectory> {
    integrate(f_t, cfg, -1.0, &mut [])
}

/// Like [`run`], also transporting passive tracer points through the
/// self-consistent fields. Returns the tracers at the final time.
pub fn run_with_tracers(
    f0: &Ensemble,
    cfg: &FlowConfig,
    tracers: &[(Vec3, Vec3)],
) -> Result<(Trajectory, Vec<(Vec3, Vec3)>)> {
    let mut moved = tracers.to_vec();
    let traj = integrate(f0, cfg, 1.0, &mut moved)?;
    Ok((traj, moved))
}

/// Largest `|det DZ − 1|` of the time-`t_end` flow map over `sample_count`
/// phase points drawn uniformly (seeded by `cfg.seed`) from the support
/// ball of the initial data.
///
/// The Jacobian is a Richardson-extrapolated central difference from frames
/// at steps `h` and `h/2` along the six phase-space axes, propagated as
/// passive tracers in a rerun of the trajectory's configuration.
pub fn volume_preservation_check(traj: &Trajectory, sample_count: usize, h: f64) -> Result<f64> {
    if traj.snapshots.len() < 2 {
        return Err(Error::InvalidConfig(
            "volume check needs at least two snapshots".into(),
        ));
    }
    if sample_count == 0 || !(h > 0.0) {
        return Err(Error::InvalidConfig(
            "sample_count and h must be positive".into(),
        ));
    }
    let radius = traj.initial.support_radius();
    let mut rng = ChaCha8Rng::seed_from_u64(traj.cfg.seed);
    let mut ball = || loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm_sq() <= 1.0 {
            break v.scale(radius);
        }
    };
    let bases: Vec<(Vec3, Vec3)> = (0..sample_count).map(|_| (ball(), ball())).collect();
    let steps = [h, 0.5 * h];
    let mut tracers = Vec::with_capacity(24 * sample_count);
    for &(x, p) in &bases {
        for step in steps {
            for axis in 0..6 {
                for sign in [1.0, -1.0] {
                    let (mut x1, mut p1) = (x, p);
                    if axis < 3 {
                        x1[axis] += sign * step;
                    } else {
                        p1[axis - 3] += sign * step;
                    }
                    tracers.push((x1, p1));
                }
            }
        }
    }
    integrate(&traj.initial, &traj.cfg, traj.direction, &mut tracers)?;
    let frame = |offset: usize, step: f64| {
        let mut jac = Matrix6::<f64>::zeros();
        for axis in 0..6 {
            let (xp, pp) = tracers[offset + 2 * axis];
            let (xm, pm) = tracers[offset + 2 * axis + 1];
            for r in 0..3 {
                jac[(r, axis)] = (xp[r] - xm[r]) / (2.0 * step);
                jac[(r + 3, axis)] = (pp[r] - pm[r]) / (2.0 * step);
            }
        }
        jac
    };
    let mut worst = 0.0_f64;
    for s in 0..sample_count {
        let coarse = frame(24 * s, h);
        let fine = frame(24 * s + 12, 0.5 * h);
        let jac = (fine * 4.0 - coarse) / 3.0;
        worst = worst.max((jac.determinant() - 1.0).abs());
    }
    Ok(worst)
}
