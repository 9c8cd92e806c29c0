//! Kernelized Wasserstein-proximal particle sampler.
//!
//! Each step moves every particle along
//! `v(z) = ∇ log p(z) + (1/ℓ) Σ_i ∇_{z'} K(z', z)|_{z' = z_i}`,
//! where the second term is the RKHS stand-in for `-∇ log Q_t(z)`. All
//! velocities of a step are computed from the frozen pre-step ensemble and
//! applied together.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{repulsion_into, KernelConfig};
use crate::numcore::{Matrix, Real};
use crate::score::ScoreModel;

/// Coordinates beyond this magnitude abort a run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// `ℓ` particles in `D` dimensions, one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ParticleEnsemble<T> {
    particles: Matrix<T>,
    step_index: usize,
}

impl<T: Real> ParticleEnsemble<T> {
    pub fn new(particles: Matrix<T>) -> Result<Self> {
        if particles.rows() == 0 || particles.cols() == 0 {
            return Err(Error::EmptyInput("particle ensemble"));
        }
        particles.check_finite("particle ensemble")?;
        Ok(Self {
            particles,
            step_index: 0,
        })
    }

    /// One-dimensional ensemble from scalar positions.
    pub fn from_scalars(values: &[T]) -> Result<Self> {
        Self::new(Matrix::from_vec(values.len(), 1, values.to_vec())?)
    }

    pub fn particles(&self) -> &Matrix<T> {
        &self.particles
    }

    pub fn into_particles(self) -> Matrix<T> {
        self.particles
    }

    pub fn len(&self) -> usize {
        self.particles.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.particles.cols()
    }

    pub fn particle(&self, i: usize) -> &[T] {
        self.particles.row(i)
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn mean(&self) -> Vec<T> {
        self.particles.column_means()
    }

    /// Coordinate `j` of every particle.
    pub fn coordinate(&self, j: usize) -> Vec<T> {
        self.particles.column(j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Real")]
pub enum InitDistribution<T> {
    Gaussian { mean: T, std: T },
    Uniform { lo: T, hi: T },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct InitSpec<T> {
    pub distribution: InitDistribution<T>,
    pub dim: usize,
    pub count: usize,
}

impl<T: Real> InitSpec<T> {
    pub fn standard_normal(dim: usize, count: usize) -> Self {
        Self {
            distribution: InitDistribution::Gaussian {
                mean: T::zero(),
                std: T::one(),
            },
            dim,
            count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.count == 0 {
            return Err(Error::InvalidConfig(
                "initial ensemble needs positive dimension and count".into(),
            ));
        }
        match self.distribution {
            InitDistribution::Gaussian { std, .. } if !(std > T::zero()) => Err(
                Error::InvalidConfig(format!("initial std must be positive, got {std}")),
            ),
            InitDistribution::Uniform { lo, hi } if !(lo < hi) => Err(Error::InvalidConfig(
                format!("uniform init needs lo < hi, got [{lo}, {hi}]"),
            )),
            _ => Ok(()),
        }
    }
}

/// `count` i.i.d. draws; reproducible for a fixed seed.
pub fn init_ensemble<T: Real>(spec: &InitSpec<T>, seed: u64) -> Result<ParticleEnsemble<T>> {
    init_ensemble_with(spec, &mut crate::rng::stream(seed, "init", 0))
}

pub fn init_ensemble_with<T: Real, R: Rng + ?Sized>(
    spec: &InitSpec<T>,
    rng: &mut R,
) -> Result<ParticleEnsemble<T>> {
    spec.validate()?;
    let n = spec.dim * spec.count;
    let data: Vec<T> = match spec.distribution {
        InitDistribution::Gaussian { mean, std } => (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                mean + std * T::lit(e)
            })
            .collect(),
        InitDistribution::Uniform { lo, hi } => {
            let (lo64, hi64) = (lo.as_f64(), hi.as_f64());
            (0..n)
                .map(|_| T::lit(rng.random_range(lo64..=hi64)))
                .collect()
        }
    };
    ParticleEnsemble::new(Matrix::from_vec(spec.count, spec.dim, data)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// `ε = 1/√T` for every step of a `T`-step run.
    InverseSqrtT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KproxConfig<T> {
    pub epsilon: T,
    pub steps: usize,
    #[serde(default)]
    pub schedule: StepSchedule,
    #[serde(default)]
    pub kernel: KernelConfig<T>,
    #[serde(default)]
    pub seed: u64,
}

impl<T: Real> Default for KproxConfig<T> {
    fn default() -> Self {
        Self {
            epsilon: T::lit(0.1),
            steps: 200,
            schedule: StepSchedule::Constant,
            kernel: KernelConfig::default(),
            seed: 0,
        }
    }
}

impl<T: Real> KproxConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("kprox needs at least one step".into()));
        }
        if self.schedule == StepSchedule::Constant
            && !(self.epsilon >= T::zero() && self.epsilon.is_finite())
        {
            return Err(Error::InvalidConfig(format!(
                "kprox step size must be non-negative, got {}",
                self.epsilon
            )));
        }
        self.kernel.validate()
    }

    /// Step size actually used by every step of a run.
    pub fn step_size(&self) -> T {
        match self.schedule {
            StepSchedule::Constant => self.epsilon,
            StepSchedule::InverseSqrtT => T::from_usize_lossy(self.steps).sqrt().recip(),
        }
    }
}

/// Velocity of every particle against the frozen ensemble.
pub fn velocities<T: Real, S: ScoreModel<T> + ?Sized>(
    ensemble: &ParticleEnsemble<T>,
    score: &S,
    kernel: &KernelConfig<T>,
) -> Result<Matrix<T>> {
    crate::error::ensure_len("score dimension", ensemble.dim(), score.dim())?;
    let particles = ensemble.particles();
    let h = kernel.resolve(particles);
    let mut out = Matrix::zeros(ensemble.len(), ensemble.dim());
    let mut repulsion = vec![T::zero(); ensemble.dim()];
    for i in 0..ensemble.len() {
        let z = particles.row(i);
        let s = score.score(z)?;
        repulsion_into(particles, z, h, &mut repulsion);
        for ((o, &si), &ri) in out.row_mut(i).iter_mut().zip(&s).zip(&repulsion) {
            *o = si + ri;
        }
    }
    Ok(out)
}

/// One synchronous step. Returns the mean over particles of `‖Δz‖²`.
pub fn kprox_step<T: Real, S: ScoreModel<T> + ?Sized>(
    ensemble: &mut ParticleEnsemble<T>,
    score: &S,
    cfg: &KproxConfig<T>,
) -> Result<T> {
    step_with(ensemble, score, cfg.step_size(), &cfg.kernel)
}

fn step_with<T: Real, S: ScoreModel<T> + ?Sized>(
    ensemble: &mut ParticleEnsemble<T>,
    score: &S,
    epsilon: T,
    kernel: &KernelConfig<T>,
) -> Result<T> {
    let v = velocities(ensemble, score, kernel)?;
    let limit = T::lit(DIVERGENCE_LIMIT);
    let step = ensemble.step_index + 1;
    let mut next = ensemble.particles.clone();
    let mut total = T::zero();
    for i in 0..next.rows() {
        let mut sq = T::zero();
        for (z, &vi) in next.row_mut(i).iter_mut().zip(v.row(i)) {
            let dz = epsilon * vi;
            *z += dz;
            sq += dz * dz;
            if !(z.abs() <= limit) {
                return Err(Error::Divergence {
                    step,
                    particle: i,
                    value: z.as_f64(),
                });
            }
        }
        total += sq;
    }
    ensemble.particles = next;
    ensemble.step_index = step;
    Ok(total / T::from_usize_lossy(ensemble.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Snapshot<T> {
    pub step: usize,
    pub particles: Matrix<T>,
}

#[derive(Debug, Clone)]
pub struct KproxRun<T> {
    pub final_ensemble: ParticleEnsemble<T>,
    /// Step 0 and every `record_every`-th step; empty when `record_every == 0`.
    pub trajectory: Vec<Snapshot<T>>,
    pub update_norms: Vec<T>,
}

pub fn kprox_run<T: Real, S: ScoreModel<T> + ?Sized>(
    init: ParticleEnsemble<T>,
    score: &S,
    cfg: &KproxConfig<T>,
    record_every: usize,
) -> Result<KproxRun<T>> {
    cfg.validate()?;
    let epsilon = cfg.step_size();
    let mut ensemble = init;
    let mut trajectory = Vec::new();
    let mut update_norms = Vec::with_capacity(cfg.steps);
    if record_every > 0 {
        trajectory.push(Snapshot {
            step: 0,
            particles: ensemble.particles.clone(),
        });
    }
    for t in 1..=cfg.steps {
        update_norms.push(step_with(&mut ensemble, score, epsilon, &cfg.kernel)?);
        if record_every > 0 && t % record_every == 0 {
            trajectory.push(Snapshot {
                step: t,
                particles: ensemble.particles.clone(),
            });
        }
    }
    Ok(KproxRun {
        final_ensemble: ensemble,
        trajectory,
        update_norms,
    })
}

/// Final ensemble only, skipping trajectory bookkeeping.
pub fn kprox_final<T: Real, S: ScoreModel<T> + ?Sized>(
    init: ParticleEnsemble<T>,
    score: &S,
    cfg: &KproxConfig<T>,
) -> Result<ParticleEnsemble<T>> {
    cfg.validate()?;
    let epsilon = cfg.step_size();
    let mut ensemble = init;
    for _ in 0..cfg.steps {
        step_with(&mut ensemble, score, epsilon, &cfg.kernel)?;
    }
    Ok(ensemble)
}

/// Columns `step,particle_index,z_0..z_{D-1}`.
pub fn write_trajectory_csv<T: Real, W: Write>(out: &mut W, snapshots: &[Snapshot<T>]) -> io::Result<()> {
    let dim = snapshots.first().map_or(0, |s| s.particles.cols());
    let mut header = String::from("step,particle_index");
    for d in 0..dim {
        header.push_str(&format!(",z_{d}"));
    }
    writeln!(out, "{header}")?;
    for s in snapshots {
        for (i, row) in s.particles.row_iter().enumerate() {
            write!(out, "{},{}", s.step, i)?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
