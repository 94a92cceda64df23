//! Weighted particle samples of the phase-space density.

use crate::error::{Error, Result};
use crate::linalg::{Vec3, Vec6};
use serde::{Deserialize, Serialize};

/// One weighted sample `(x, p, w)`; `p` is the generalized momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseParticle {
    pub x: Vec3,
    pub p: Vec3,
    pub w: f64,
}

impl PhaseParticle {
    pub fn new(x: Vec3, p: Vec3, w: f64) -> Self {
        PhaseParticle { x, p, w }
    }

    pub fn phase(&self) -> Vec6 {
        Vec6::from_parts(self.x, self.p)
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !(self.w > 0.0) || !self.w.is_finite() {
            return Err(Error::InvalidParticle {
                index,
                reason: format!("weight must be positive and finite, got {}", self.w),
            });
        }
        if !self.x.is_finite() || !self.p.is_finite() {
            return Err(Error::InvalidParticle {
                index,
                reason: "non-finite coordinate".into(),
            });
        }
        Ok(())
    }
}

/// Immutable ordered particle collection at a fixed time.
///
/// `support_radius` is the smallest `R` with `|x| ≤ R` and `|p| ≤ R` for
/// every particle.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: Vec<PhaseParticle>,
    time: f64,
    support_radius: f64,
}

impl Ensemble {
    pub fn new(particles: Vec<PhaseParticle>, time: f64) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        for (i, p) in particles.iter().enumerate() {
            p.validate(i)?;
        }
        let support_radius = particles
            .iter()
            .fold(0.0_f64, |r, q| r.max(q.x.norm()).max(q.p.norm()));
        Ok(Ensemble {
            particles,
            time,
            support_radius,
        })
    }

    pub fn particles(&self) -> &[PhaseParticle] {
        &self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.particles.iter().map(|p| p.x)
    }

    /// Total weight, compensated summation.
    pub fn total_weight(&self) -> f64 {
        neumaier_sum(self.particles.iter().map(|p| p.w))
    }

    /// Largest `|x|` over the ensemble.
    pub fn spatial_radius(&self) -> f64 {
        self.particles
            .iter()
            .fold(0.0_f64, |r, q| r.max(q.x.norm()))
    }

    /// Same particles at another time.
    pub fn with_time(&self, time: f64) -> Ensemble {
        Ensemble {
            particles: self.particles.clone(),
            time,
            support_radius: self.support_radius,
        }
    }

    /// Replaces phase coordinates, keeping weights and ordering.
    pub fn with_phase(&self, phase: &[(Vec3, Vec3)], time: f64) -> Result<Ensemble> {
        if phase.len() != self.len() {
            return Err(Error::SizeMismatch {
                left: self.len(),
                right: phase.len(),
            });
        }
        let particles = self
            .particles
            .iter()
            .zip(phase)
            .map(|(q, &(x, p))| PhaseParticle::new(x, p, q.w))
            .collect();
        Ensemble::new(particles, time)
    }

    /// Rigid translation of every position by `shift`.
    pub fn translated(&self, shift: Vec3) -> Ensemble {
        let particles: Vec<_> = self
            .particles
            .iter()
            .map(|q| PhaseParticle::new(q.x + shift, q.p, q.w))
            .collect();
        Ensemble::new(particles, self.time).expect("translation keeps particles valid")
    }

    /// True when all particles carry the same weight.
    pub fn has_uniform_weights(&self) -> bool {
        let w0 = self.particles[0].w;
        self.particles.iter().all(|p| p.w == w0)
    }

    /// Axis-aligned bounding box of the positions.
    pub fn position_bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for q in &self.particles {
            for k in 0..3 {
                lo[k] = lo[k].min(q.x[k]);
                hi[k] = hi[k].max(q.x[k]);
            }
        }
        (lo, hi)
    }
}

/// Kahan-Babuska-Neumaier summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
