//! Initial data families and perturbations.
//!
//! All samplers draw from a seeded ChaCha8 stream and enforce the hard
//! support radius `R` in both `x` and `p` by rejection.

use crate::ensemble::{Ensemble, PhaseParticle};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Gaussian positions with σ = R/2 and Gaussian momenta with
    /// σ = momentum scale, both truncated to the ball of radius R.
    GaussianBall,
    /// Uniform in the ball of radius R for positions, and in the ball of
    /// radius `min(scale, R)` for momenta.
    UniformBall,
    /// Uniform positions; momenta split into two beams `±scale·e₃` with
    /// 10% thermal spread.
    TwoStream,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-ball" => Ok(Family::GaussianBall),
            "uniform-ball" => Ok(Family::UniformBall),
            "two-stream" => Ok(Family::TwoStream),
            other => Err(Error::InvalidConfig(format!("unknown family `{other}`"))),
        }
    }
}

fn default_mass() -> f64 {
    1.0
}

fn default_scale() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub family: Family,
    pub n: usize,
    pub radius: f64,
    #[serde(default = "default_scale")]
    pub momentum_scale: f64,
    #[serde(default = "default_mass")]
    pub total_mass: f64,
    pub seed: u64,
}

impl InitialSpec {
    /// Reference data: `family` with N particles, R = 1, unit mass.
    pub fn reference(family: Family, n: usize, seed: u64) -> Self {
        InitialSpec {
            family,
            n,
            radius: 1.0,
            momentum_scale: default_scale(),
            total_mass: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        for (name, v) in [
            ("radius", self.radius),
            ("momentum_scale", self.momentum_scale),
            ("total_mass", self.total_mass),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn gaussian<R: Rng>(rng: &mut R, sigma: f64, radius: f64) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        )
        .scale(sigma);
        if v.norm() <= radius {
            return v;
        }
    }
}

fn uniform_ball<R: Rng>(rng: &mut R, radius: f64) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        if v.norm_sq() <= 1.0 {
            return v.scale(radius);
        }
    }
}

/// Draws an ensemble at time 0 with equal weights `total_mass / n`.
pub fn sample(spec: &InitialSpec) -> Result<Ensemble> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let r = spec.radius;
    let w = spec.total_mass / spec.n as f64;
    let particles = (0..spec.n)
        .map(|i| {
            let (x, p) = match spec.family {
                Family::GaussianBall => {
                    let x = gaussian(&mut rng, 0.5 * r, r);
                    let p = gaussian(&mut rng, spec.momentum_scale, r);
                    (x, p)
                }
                Family::UniformBall => {
                    let x = uniform_ball(&mut rng, r);
                    let p = uniform_ball(&mut rng, spec.momentum_scale.min(r));
                    (x, p)
                }
                Family::TwoStream => {
                    let x = uniform_ball(&mut rng, r);
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    let beam = Vec3::new(0.0, 0.0, sign * spec.momentum_scale);
                    let p = loop {
                        let p = beam + gaussian(&mut rng, 0.1 * spec.momentum_scale, f64::INFINITY);
                        if p.norm() <= r {
                            break p;
                        }
                    };
                    (x, p)
                }
            };
            PhaseParticle::new(x, p, w)
        })
        .collect();
    Ensemble::new(particles, 0.0)
}

/// Random unit vectors in R⁶ as `(x, p)` parts.
pub fn unit_phase_directions(n: usize, seed: u64) -> Vec<(Vec3, Vec3)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut c = [0.0_f64; 6];
            loop {
                for v in c.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let n2: f64 = c.iter().map(|v| v * v).sum();
                if n2 > 1e-12 {
                    let inv = 1.0 / n2.sqrt();
                    for v in c.iter_mut() {
                        *v *= inv;
                    }
                    break;
                }
            }
            (Vec3::new(c[0], c[1], c[2]), Vec3::new(c[3], c[4], c[5]))
        })
        .collect()
}

/// Moves every particle by exactly `delta` in R⁶ along a seeded random
/// direction. Weights and ordering are preserved.
pub fn jitter(ens: &Ensemble, delta: f64, seed: u64) -> Result<Ensemble> {
    let dirs = unit_phase_directions(ens.len(), seed);
    let phase: Vec<(Vec3, Vec3)> = ens
        .particles()
        .iter()
        .zip(&dirs)
        .map(|(q, (dx, dp))| (q.x + dx.scale(delta), q.p + dp.scale(delta)))
        .collect();
    ens.with_phase(&phase, ens.time())
}
