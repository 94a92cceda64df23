//! Exact discrete Wasserstein-2 transport between equal-weight ensembles.
//!
//! Phase points live in R⁶ with the squared Euclidean cost. The optimal
//! plan is a permutation found by a shortest-augmenting-path assignment
//! solver with dual potentials (Jonker–Volgenant class, `O(N³)`).

use crate::ensemble::{Ensemble, PhaseParticle};
use crate::error::{Error, Result};
use crate::linalg::{Vec3, Vec6};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Optimal assignment `i ↦ σ(i)` from ensemble `a` to ensemble `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub assignment: Vec<usize>,
    /// `w |zᵢ − z'_{σ(i)}|²` per source particle.
    pub costs: Vec<f64>,
    /// Total cost `W₂²`.
    pub cost: f64,
    /// Common particle weight.
    pub weight: f64,
    targets: Vec<Vec6>,
}

impl TransportPlan {
    pub fn size(&self) -> usize {
        self.assignment.len()
    }

    pub fn w2(&self) -> f64 {
        self.cost.sqrt()
    }

    /// Target phase point of source `i`.
    pub fn target(&self, i: usize) -> Vec6 {
        self.targets[self.assignment[i]]
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            n: self.size(),
            cost: self.cost,
            w2: self.w2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub n: usize,
    pub cost: f64,
    pub w2: f64,
}

fn phases(ens: &Ensemble) -> Vec<Vec6> {
    ens.particles().iter().map(PhaseParticle::phase).collect()
}

/// Checks the equal-count, equal-uniform-weight precondition and returns
/// the common weight.
pub fn common_weight(a: &Ensemble, b: &Ensemble) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let wa = a.particles()[0].w;
    let wb = b.particles()[0].w;
    if !a.has_uniform_weights() || !b.has_uniform_weights() || (wa - wb).abs() > 1e-12 * wa {
        return Err(Error::WeightMismatch);
    }
    Ok(wa)
}

/// Cost of an arbitrary permutation, summed in source order.
pub fn plan_cost(a: &Ensemble, b: &Ensemble, assignment: &[usize]) -> Result<f64> {
    let w = common_weight(a, b)?;
    let (za, zb) = (phases(a), phases(b));
    Ok(za
        .iter()
        .zip(assignment)
        .map(|(z, &j)| w * zb[j].sub(z).norm_sq())
        .sum())
}

/// Minimum-cost perfect matching on a dense `n × n` row-major matrix.
/// Returns the column assigned to each row.
fn solve_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based potentials; column 0 is the virtual start of each search.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut row_of = vec![0_usize; n + 1];
    let mut way = vec![0_usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let row = &cost[(i0 - 1) * n..i0 * n];
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Among plans that differ only by permuting bitwise-identical targets,
/// picks the lexicographically smallest.
fn canonicalize(assignment: &mut [usize], targets: &[Vec6]) {
    let mut classes: HashMap<[u64; 6], Vec<usize>> = HashMap::new();
    for (i, &j) in assignment.iter().enumerate() {
        classes
            .entry(targets[j].0.map(f64::to_bits))
            .or_default()
            .push(i);
    }
    for sources in classes.values() {
        if sources.len() < 2 {
            continue;
        }
        let mut cols: Vec<usize> = sources.iter().map(|&i| assignment[i]).collect();
        cols.sort_unstable();
        for (&i, &j) in sources.iter().zip(&cols) {
            assignment[i] = j;
        }
    }
}

/// Globally optimal equal-weight plan from `a` to `b`.
pub fn w2_exact(a: &Ensemble, b: &Ensemble) -> Result<TransportPlan> {
    let w = common_weight(a, b)?;
    let (za, zb) = (phases(a), phases(b));
    let n = za.len();
    let cost: Vec<f64> = za
        .par_iter()
        .flat_map_iter(|z| zb.iter().map(move |y| y.sub(z).norm_sq()))
        .collect();
    let mut assignment = solve_assignment(&cost, n);
    canonicalize(&mut assignment, &zb);
    let costs: Vec<f64> = za
        .iter()
        .zip(&assignment)
        .map(|(z, &j)| w * zb[j].sub(z).norm_sq())
        .collect();
    Ok(TransportPlan {
        assignment,
        cost: costs.iter().sum(),
        costs,
        weight: w,
        targets: zb,
    })
}

/// Displacement interpolant at parameter `θ ∈ [1, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolant {
    pub theta: f64,
    pub ensemble: Ensemble,
}

fn interpolate(z: &Vec6, target: &Vec6, theta: f64) -> Vec6 {
    let mut out = [0.0; 6];
    for k in 0..6 {
        out[k] = (2.0 - theta) * z.0[k] + (theta - 1.0) * target.0[k];
    }
    Vec6(out)
}

/// Moves particle `i` to `(2−θ) zᵢ + (θ−1) z'_{σ(i)}`, keeping weights.
pub fn mccann_interpolant(a: &Ensemble, plan: &TransportPlan, theta: f64) -> Result<Interpolant> {
    if !(1.0..=2.0).contains(&theta) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    let phase = interpolated_phase(a, plan, theta)?;
    Ok(Interpolant {
        theta,
        ensemble: a.with_phase(&phase, a.time())?,
    })
}

fn interpolated_phase(a: &Ensemble, plan: &TransportPlan, theta: f64) -> Result<Vec<(Vec3, Vec3)>> {
    if a.len() != plan.size() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: plan.size(),
        });
    }
    Ok(a.particles()
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let z = interpolate(&q.phase(), &plan.target(i), theta);
            (z.x(), z.p())
        })
        .collect())
}

/// Constant geodesic velocity `uᵢ = z'_{σ(i)} − zᵢ` of each particle.
pub fn geodesic_velocity(a: &Ensemble, plan: &TransportPlan) -> Vec<Vec6> {
    a.particles()
        .iter()
        .enumerate()
        .map(|(i, q)| plan.target(i).sub(&q.phase()))
        .collect()
}

/// Smooth compactly supported scalar function on R⁶ for the weak
/// continuity equation.
pub trait TestFunction: Sync {
    fn value(&self, z: &Vec6) -> f64;
    fn gradient(&self, z: &Vec6) -> Vec6;
}

/// `φ(z) = c·z + b` on the ball `|z| ≤ plateau`, cut off smoothly to zero
/// at `2·plateau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePlateau {
    pub slope: Vec6,
    pub offset: f64,
    pub plateau: f64,
}

/// `ψ(t) = exp(−1/t)` for `t > 0`, else 0, with its derivative.
fn psi(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else {
        let e = (-1.0 / t).exp();
        (e, e / (t * t))
    }
}

/// C^∞ step: 1 for `s ≤ 0`, 0 for `s ≥ 1`.
fn smooth_cutoff(s: f64) -> (f64, f64) {
    let (a, da) = psi(1.0 - s);
    let (b, db) = psi(s);
    let sum = a + b;
    // d/ds of a/(a+b) with da/ds = −da, db/ds = db.
    let d = (-da * sum - a * (-da + db)) / (sum * sum);
    (a / sum, d)
}

impl TestFunction for AffinePlateau {
    fn value(&self, z: &Vec6) -> f64 {
        let r = z.norm_sq().sqrt();
        let (chi, _) = smooth_cutoff(r / self.plateau - 1.0);
        chi * (self.slope.dot(z) + self.offset)
    }

    fn gradient(&self, z: &Vec6) -> Vec6 {
        let r = z.norm_sq().sqrt();
        let (chi, dchi) = smooth_cutoff(r / self.plateau - 1.0);
        let lin = self.slope.dot(z) + self.offset;
        let mut g = [0.0; 6];
        for k in 0..6 {
            g[k] = chi * self.slope.0[k];
            if r > 0.0 && dchi != 0.0 {
                g[k] += lin * dchi * z.0[k] / (r * self.plateau);
            }
        }
        Vec6(g)
    }
}

/// `φ(z) = (1 − |z − c|²/r²)⁴` inside radius `r`, zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuarticBump {
    pub center: Vec6,
    pub radius: f64,
}

impl TestFunction for QuarticBump {
    fn value(&self, z: &Vec6) -> f64 {
        let q = 1.0 - z.sub(&self.center).norm_sq() / (self.radius * self.radius);
        if q > 0.0 {
            q.powi(4)
        } else {
            0.0
        }
    }

    fn gradient(&self, z: &Vec6) -> Vec6 {
        let d = z.sub(&self.center);
        let r2 = self.radius * self.radius;
        let q = 1.0 - d.norm_sq() / r2;
        if q <= 0.0 {
            return Vec6([0.0; 6]);
        }
        let c = -8.0 * q.powi(3) / r2;
        Vec6(d.0.map(|v| c * v))
    }
}

/// Max over `theta_grid` of `|d/dθ⟨φ, f_θ⟩ − ⟨∇φ·u, f_θ⟩|`, the θ-derivative
/// taken as a central difference of step `dtheta`.
pub fn continuity_residual(
    a: &Ensemble,
    plan: &TransportPlan,
    theta_grid: &[f64],
    dtheta: f64,
    test_fn: &dyn TestFunction,
) -> Result<f64> {
    if theta_grid.len() < 3 {
        return Err(Error::InvalidConfig(
            "theta grid needs at least three points".into(),
        ));
    }
    if let Some(&t) = theta_grid.iter().find(|t| !(1.0..=2.0).contains(*t)) {
        return Err(Error::ThetaOutOfRange(t));
    }
    if !(dtheta > 0.0) {
        return Err(Error::InvalidConfig("dtheta must be positive".into()));
    }
    if a.len() != plan.size() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: plan.size(),
        });
    }
    let z: Vec<Vec6> = phases(a);
    let u = geodesic_velocity(a, plan);
    let w: Vec<f64> = a.particles().iter().map(|q| q.w).collect();
    let pairing = |theta: f64| -> f64 {
        (0..z.len())
            .map(|i| w[i] * test_fn.value(&interpolate(&z[i], &plan.target(i), theta)))
            .sum()
    };
    let mut worst = 0.0_f64;
    for &theta in theta_grid {
        let lhs = (pairing(theta + dtheta) - pairing(theta - dtheta)) / (2.0 * dtheta);
        let rhs: f64 = (0..z.len())
            .map(|i| {
                let zt = interpolate(&z[i], &plan.target(i), theta);
                w[i] * test_fn.gradient(&zt).dot(&u[i])
            })
            .sum();
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// Histogram estimate of `‖f‖_{L∞}` on a 6-D grid of cubic cells
/// `[k h, (k+1) h)` anchored at the origin.
pub fn phase_density_linf(ens: &Ensemble, cell_size: f64) -> Result<f64> {
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "cell size must be positive, got {cell_size}"
        )));
    }
    let mut cells: HashMap<[i64; 6], f64> = HashMap::new();
    for q in ens.particles() {
        let key = q.phase().0.map(|v| (v / cell_size).floor() as i64);
        *cells.entry(key).or_insert(0.0) += q.w;
    }
    let max_cell = cells.values().fold(0.0_f64, |m, &w| m.max(w));
    Ok(max_cell / cell_size.powi(6))
}

/// Histogram `L∞` estimate of the interpolant's phase-space density.
pub fn interpolant_density_bound(interp: &Interpolant, cell_size: f64) -> Result<f64> {
    phase_density_linf(&interp.ensemble, cell_size)
}

/// Interpolant density against the endpoint densities at one cell size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityBoundReport {
    pub theta: f64,
    pub cell_size: f64,
    pub interpolant: f64,
    pub endpoint_max: f64,
    /// `interpolant ≤ slack · endpoint_max`.
    pub within_slack: bool,
}

/// Histogram slack factor for the interpolant `L∞` bound.
pub const DENSITY_SLACK: f64 = 2.0;

pub fn density_bound_report(
    a: &Ensemble,
    b: &Ensemble,
    plan: &TransportPlan,
    theta: f64,
    cell_size: f64,
) -> Result<DensityBoundReport> {
    let interp = mccann_interpolant(a, plan, theta)?;
    let interpolant = interpolant_density_bound(&interp, cell_size)?;
    let endpoint_max = phase_density_linf(a, cell_size)?.max(phase_density_linf(b, cell_size)?);
    Ok(DensityBoundReport {
        theta,
        cell_size,
        interpolant,
        endpoint_max,
        within_slack: interpolant <= DENSITY_SLACK * endpoint_max,
    })
}
