//! Particle-filter inference of the RB decay model `A p^m + B` from single shots.

use nalgebra::{Matrix3, Vector3};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this many particles the weight update runs on one thread.
const PARALLEL_THRESHOLD: usize = 4096;
/// Redraws allowed per Liu–West particle before clamping into range.
const MAX_KERNEL_RETRIES: usize = 100;
const COVARIANCE_JITTER: f64 = 1e-12;

/// Latent RB parameters: decay `p`, scale `A` and offset `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbParams {
    pub p: f64,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

impl RbParams {
    pub const P_RANGE: (f64, f64) = (0.0, 1.0);
    pub const A_RANGE: (f64, f64) = (-1.0, 1.0);
    pub const B_RANGE: (f64, f64) = (0.0, 1.0);

    pub fn new(p: f64, a: f64, b: f64) -> Result<Self> {
        let y = Self { p, a, b };
        if !y.in_range() {
            return Err(Error::Validation(format!("RB parameters out of range: {y:?}")));
        }
        Ok(y)
    }

    pub fn in_range(&self) -> bool {
        let within = |x: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&x);
        within(self.p, Self::P_RANGE) && within(self.a, Self::A_RANGE) && within(self.b, Self::B_RANGE)
    }

    /// Clamps each coordinate into its range; returns whether anything moved.
    pub fn clamp(&mut self) -> bool {
        let before = *self;
        self.p = self.p.clamp(Self::P_RANGE.0, Self::P_RANGE.1);
        self.a = self.a.clamp(Self::A_RANGE.0, Self::A_RANGE.1);
        self.b = self.b.clamp(Self::B_RANGE.0, Self::B_RANGE.1);
        before != *self
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.p, self.a, self.b)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self { p: v[0], a: v[1], b: v[2] }
    }

    /// Survival probability `clamp(A p^m + B, 0, 1)`.
    pub fn survival(&self, m: usize) -> f64 {
        (self.a * self.p.powi(m as i32) + self.b).clamp(0.0, 1.0)
    }
}

/// `Pr(outcome | y, m)` for a single shot.
pub fn likelihood(params: &RbParams, m: usize, outcome: bool) -> f64 {
    let q = params.survival(m);
    if outcome {
        q
    } else {
        1.0 - q
    }
}

/// How a decay rate `p` maps to the fidelity being tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityMap {
    /// `F = ((d-1) p + 1) / d`, the inverse of `p = (dF - 1)/(d - 1)`.
    #[default]
    DecayInverse,
    /// `F = (d p + 1) / (d + 1)`.
    DepolarizingSupport,
}

impl FidelityMap {
    pub fn fidelity(self, p: f64, d: usize) -> f64 {
        let d = d as f64;
        match self {
            FidelityMap::DecayInverse => ((d - 1.0) * p + 1.0) / d,
            FidelityMap::DepolarizingSupport => (d * p + 1.0) / (d + 1.0),
        }
    }
}

/// Prior over `(p, A, B)`: uniform `p` and `A`, truncated normal `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub p_range: (f64, f64),
    pub a_range: (f64, f64),
    pub b_mean: f64,
    pub b_std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { p_range: (0.0, 1.0), a_range: (0.0, 1.0), b_mean: 0.5, b_std: 0.05 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let ok_range = |(lo, hi): (f64, f64), (min, max): (f64, f64)| lo <= hi && lo >= min && hi <= max;
        if !ok_range(self.p_range, RbParams::P_RANGE) {
            return Err(Error::Validation(format!("prior p range {:?} invalid", self.p_range)));
        }
        if !ok_range(self.a_range, RbParams::A_RANGE) {
            return Err(Error::Validation(format!("prior A range {:?} invalid", self.a_range)));
        }
        if !(self.b_std > 0.0) || !(0.0..=1.0).contains(&self.b_mean) {
            return Err(Error::Validation("prior on B needs mean in [0, 1] and std > 0".into()));
        }
        Ok(())
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> RbParams {
        let p = rng.random_range(self.p_range.0..=self.p_range.1);
        let a = rng.random_range(self.a_range.0..=self.a_range.1);
        let normal = Normal::new(self.b_mean, self.b_std).expect("validated std");
        let b = loop {
            let b: f64 = normal.sample(rng);
            if (RbParams::B_RANGE.0..=RbParams::B_RANGE.1).contains(&b) {
                break b;
            }
        };
        RbParams { p, a, b }
    }

    /// Equal-weight ensemble of `n` prior draws.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<ParticleEnsemble> {
        self.validate()?;
        let particles = (0..n).map(|_| self.sample_one(rng)).collect();
        ParticleEnsemble::uniform(particles)
    }
}

/// Weighted particle approximation of a distribution over [`RbParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    particles: Vec<RbParams>,
    weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn new(particles: Vec<RbParams>, weights: Vec<f64>) -> Result<Self> {
        if particles.len() < 2 {
            return Err(Error::Validation("an ensemble needs at least two particles".into()));
        }
        if particles.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: particles.len(), got: weights.len() });
        }
        if let Some(bad) = particles.iter().find(|y| !y.in_range()) {
            return Err(Error::Validation(format!("particle out of range: {bad:?}")));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Validation("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { particles, weights })
    }

    pub fn uniform(particles: Vec<RbParams>) -> Result<Self> {
        let n = particles.len();
        Self::new(particles, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[RbParams] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RbParams, f64)> {
        self.particles.iter().zip(self.weights.iter().copied())
    }

    /// Bayes rule on the weights for one shot. On total underflow the
    /// ensemble is left untouched and an inference error is returned.
    pub fn bayes_update(&mut self, m: usize, outcome: bool) -> Result<()> {
        if m == 0 {
            return Err(Error::Validation("sequence length must be at least 1".into()));
        }
        let reweight = |(y, w): (&RbParams, &f64)| w * likelihood(y, m, outcome);
        let updated: Vec<f64> = if self.len() >= PARALLEL_THRESHOLD {
            self.particles.par_iter().zip(self.weights.par_iter()).map(reweight).collect()
        } else {
            self.particles.iter().zip(self.weights.iter()).map(reweight).collect()
        };
        // Sequential sum keeps the result independent of thread count.
        let total: f64 = updated.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Inference(format!(
                "all particles have zero likelihood for outcome {outcome} at length {m}"
            )));
        }
        self.weights = updated.into_iter().map(|w| w / total).collect();
        Ok(())
    }

    /// `1 / Σ w²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn mean(&self) -> Vector3<f64> {
        self.iter().fold(Vector3::zeros(), |acc, (y, w)| acc + y.to_vector() * w)
    }

    /// Weighted covariance (normalized by the total weight, no bias correction).
    pub fn covariance(&self) -> Matrix3<f64> {
        let mu = self.mean();
        self.iter().fold(Matrix3::zeros(), |acc, (y, w)| {
            let d = y.to_vector() - mu;
            acc + d * d.transpose() * w
        })
    }

    /// Liu–West move: pick ancestors in proportion to weight, contract them
    /// towards the mean by `a` and add Gaussian noise with covariance
    /// `(1 - a²) Σ`, so the first two moments are preserved in expectation.
    pub fn liu_west_resample<R: Rng + ?Sized>(&self, a: f64, rng: &mut R) -> Result<Self> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::Validation(format!("Liu–West a must be in (0, 1], got {a}")));
        }
        let mu = self.mean();
        let cov = self.covariance() * (1.0 - a * a);
        let chol = match cov.cholesky() {
            Some(c) => c.l(),
            None if a == 1.0 => Matrix3::zeros(),
            None => (cov + Matrix3::identity() * COVARIANCE_JITTER)
                .cholesky()
                .map(|c| c.l())
                .ok_or_else(|| Error::Inference("covariance is not positive semidefinite".into()))?,
        };
        let ancestors = WeightedIndex::new(&self.weights)
            .map_err(|e| Error::Inference(format!("cannot resample: {e}")))?;

        let particles = (0..self.len())
            .map(|_| {
                let parent = self.particles[ancestors.sample(rng)].to_vector();
                let center = parent * a + mu * (1.0 - a);
                let mut draw = || {
                    let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    RbParams::from_vector(&(center + chol * z))
                };
                let mut candidate = draw();
                for _ in 0..MAX_KERNEL_RETRIES {
                    if candidate.in_range() {
                        break;
                    }
                    candidate = draw();
                }
                candidate.clamp();
                candidate
            })
            .collect();
        Self::uniform(particles)
    }

    /// Posterior mean and variance of the fidelity implied by each particle's `p`.
    pub fn posterior_fidelity(&self, map: FidelityMap, d: usize) -> (f64, f64) {
        let mean: f64 = self.iter().map(|(y, w)| w * map.fidelity(y.p, d)).sum();
        let second: f64 = self.iter().map(|(y, w)| w * map.fidelity(y.p, d).powi(2)).sum();
        (mean, (second - mean * mean).max(0.0))
    }

    /// Equal-tailed credible interval `[lo, hi]` of `f(y)` at
    /// the given level, from weighted quantiles.
    pub fn credible_interval<F: Fn(&RbParams) -> f64>(&self, level: f64, f: F) -> (f64, f64) {
        let mut values: Vec<(f64, f64)> = self.iter().map(|(y, w)| (f(y), w)).collect();
        values.sort_by(|x, y| x.0.total_cmp(&y.0));
        let tail = (1.0 - level) / 2.0;
        let quantile = |q: f64| {
            let mut acc = 0.0;
            for &(v, w) in &values {
                acc += w;
                if acc >= q {
                    return v;
                }
            }
            values.last().map(|v| v.0).unwrap_or(f64::NAN)
        };
        (quantile(tail), quantile(1.0 - tail))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row {
            p: f64,
            #[serde(rename = "A")]
            a: f64,
            #[serde(rename = "B")]
            b: f64,
            weight: f64,
        }
        let mut w = csv::Writer::from_writer(writer);
        for (y, weight) in self.iter() {
            w.serialize(Row { p: y.p, a: y.a, b: y.b, weight })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Posterior moments of `F` as a free function over an ensemble.
pub fn posterior_f(ensemble: &ParticleEnsemble, map: FidelityMap) -> (f64, f64) {
    ensemble.posterior_fidelity(map, 2)
}
