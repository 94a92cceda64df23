//! CSV and JSON formats for ensembles, potentials, trajectories, transport
//! plans and stability traces.
//!
//! Floats are written in shortest round-trip form, so every CSV reads back
//! bit-identically.

use crate::dynamics::Trajectory;
use crate::ensemble::{Ensemble, PhaseParticle};
use crate::error::{Error, Result};
use crate::fields::VectorPotentialState;
use crate::kernels::Softening;
use crate::linalg::Vec3;
use crate::stability::{PerturbSpec, StabilityTrace};
use crate::transport::{PlanSummary, TransportPlan};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct EnsembleRow {
    x1: f64,
    x2: f64,
    x3: f64,
    p1: f64,
    p2: f64,
    p3: f64,
    w: f64,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::io(path, e))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::io(path, e)))
        .collect()
}

/// Pretty JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(path, e))
}

/// Ensemble CSV with header `x1,x2,x3,p1,p2,p3,w`.
pub fn write_ensemble_csv(path: &Path, ens: &Ensemble) -> Result<()> {
    write_rows(
        path,
        ens.particles().iter().map(|q| EnsembleRow {
            x1: q.x[0],
            x2: q.x[1],
            x3: q.x[2],
            p1: q.p[0],
            p2: q.p[1],
            p3: q.p[2],
            w: q.w,
        }),
    )
}

/// Reads an ensemble CSV and stamps it with `time`.
pub fn read_ensemble_csv(path: &Path, time: f64) -> Result<Ensemble> {
    let rows: Vec<EnsembleRow> = read_rows(path)?;
    let particles = rows
        .into_iter()
        .map(|r| {
            PhaseParticle::new(
                Vec3::new(r.x1, r.x2, r.x3),
                Vec3::new(r.p1, r.p2, r.p3),
                r.w,
            )
        })
        .collect();
    Ensemble::new(particles, time)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PotentialRow {
    x1: f64,
    x2: f64,
    x3: f64,
    #[serde(rename = "A1")]
    a1: f64,
    #[serde(rename = "A2")]
    a2: f64,
    #[serde(rename = "A3")]
    a3: f64,
}

/// JSON sidecar of a vector-potential export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialMeta {
    pub residual: f64,
    pub iterations: usize,
    pub cbar: f64,
    pub eps: Softening,
    pub tol: f64,
}

impl From<&VectorPotentialState> for PotentialMeta {
    fn from(s: &VectorPotentialState) -> Self {
        PotentialMeta {
            residual: s.residual,
            iterations: s.iterations,
            cbar: s.cbar,
            eps: s.eps,
            tol: s.tol,
        }
    }
}

/// Writes `A` at the sources as CSV `x1,x2,x3,A1,A2,A3` plus the sidecar.
pub fn write_potential(
    csv_path: &Path,
    json_path: &Path,
    ens: &Ensemble,
    state: &VectorPotentialState,
) -> Result<()> {
    if state.values.len() != ens.len() {
        return Err(Error::SizeMismatch {
            left: ens.len(),
            right: state.values.len(),
        });
    }
    write_rows(
        csv_path,
        ens.particles()
            .iter()
            .zip(&state.values)
            .map(|(q, a)| PotentialRow {
                x1: q.x[0],
                x2: q.x[1],
                x3: q.x[2],
                a1: a[0],
                a2: a[1],
                a3: a[2],
            }),
    )?;
    write_json(json_path, &PotentialMeta::from(state))
}

/// Reads a potential CSV back as `(positions, values)`.
pub fn read_potential_csv(path: &Path) -> Result<Vec<(Vec3, Vec3)>> {
    let rows: Vec<PotentialRow> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| (Vec3::new(r.x1, r.x2, r.x3), Vec3::new(r.a1, r.a2, r.a3)))
        .collect())
}

/// `meta.json` of a trajectory directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub t_end: f64,
    pub eps: Softening,
    pub fp_tol: f64,
    pub seed: u64,
    pub times: Vec<f64>,
}

pub fn snapshot_file_name(index: usize) -> String {
    format!("t_{index}.csv")
}

/// Writes `t_<index>.csv` per snapshot and `meta.json` into `dir`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, (_, ens)) in traj.snapshots.iter().enumerate() {
        write_ensemble_csv(&dir.join(snapshot_file_name(k)), ens)?;
    }
    let meta = TrajectoryMeta {
        dt: traj.cfg.dt,
        t_end: traj.cfg.t_end,
        eps: traj.cfg.eps,
        fp_tol: traj.cfg.fp_tol,
        seed: traj.cfg.seed,
        times: traj.times(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

/// Reads a trajectory directory as its metadata and timed snapshots.
pub fn read_trajectory(dir: &Path) -> Result<(TrajectoryMeta, Vec<Ensemble>)> {
    let meta: TrajectoryMeta = read_json(&dir.join("meta.json"))?;
    let snaps = meta
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| read_ensemble_csv(&dir.join(snapshot_file_name(k)), t))
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, snaps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PlanRow {
    i: usize,
    sigma_i: usize,
    cost_i: f64,
}

/// Plan CSV `i,sigma_i,cost_i` plus the summary JSON `{n, cost, w2}`.
pub fn write_plan(csv_path: &Path, json_path: &Path, plan: &TransportPlan) -> Result<()> {
    write_rows(
        csv_path,
        plan.assignment
            .iter()
            .zip(&plan.costs)
            .enumerate()
            .map(|(i, (&s, &c))| PlanRow {
                i,
                sigma_i: s,
                cost_i: c,
            }),
    )?;
    write_json(json_path, &plan.summary())
}

/// Reads a plan CSV as `(assignment, per-particle costs)`.
pub fn read_plan_csv(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let rows: Vec<PlanRow> = read_rows(path)?;
    Ok(rows.into_iter().map(|r| (r.sigma_i, r.cost_i)).unzip())
}

pub fn read_plan_summary(path: &Path) -> Result<PlanSummary> {
    read_json(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "W2")]
    pub w2: f64,
    pub regime_valid: bool,
}

/// JSON sidecar of a stability trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMeta {
    pub gronwall_c: f64,
    pub bound_satisfied: bool,
    pub perturbation: PerturbSpec,
}

/// Trace CSV `t,Q,W2,regime_valid` plus the JSON sidecar.
pub fn write_trace(csv_path: &Path, json_path: &Path, trace: &StabilityTrace) -> Result<()> {
    write_rows(
        csv_path,
        (0..trace.times.len()).map(|k| TraceRow {
            t: trace.times[k],
            q: trace.q_values[k],
            w2: trace.w2_values[k],
            regime_valid: trace.regime_flags[k],
        }),
    )?;
    write_json(
        json_path,
        &TraceMeta {
            gronwall_c: trace.gronwall_c,
            bound_satisfied: trace.bound_satisfied,
            perturbation: trace.perturbation,
        },
    )
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    read_rows(path)
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
