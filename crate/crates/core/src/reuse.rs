//! Carrying a posterior at controls `θ` over to a prior at `θ + δθ`.
//!
//! If the target channel is `L`-Lipschitz in the controls, each RB parameter
//! moves by a bounded amount. The prior at the new point is the equal mixture
//! of the old posterior shifted to each of the eight corners
//! `{±Δ L_p} × {±Δ L_AB} × {±Δ L_AB}`, which keeps the mean and widens the
//! support by at most one corner in every coordinate.

use nalgebra::Vector3;
use num_rational::Ratio;
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::clifford::{ratio_to_f64, GroupTable};
use crate::error::{Error, Result};
use crate::rb::{true_rb_params, DeviceModel};
use crate::smc::{FidelityMap, ParticleEnsemble, RbParams};

/// Clamped mass above which diffusion logs a warning.
pub const CLAMP_WARNING_FRACTION: f64 = 0.01;

/// Lipschitz constants for the RB parameters as functions of the controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LipschitzBudget {
    /// From a trace-distance constant `L` of the target channel and the mean
    /// target count `n̄`: `L_F = (1 + n̄) L`.
    ChannelDerived { l: f64, n_bar: Ratio<u64>, d: usize },
    /// From a constant `L_F` of the objective itself, e.g. a numeric estimate.
    ObjectiveDirect { l_f: f64, d: usize },
}

impl LipschitzBudget {
    pub fn validate(&self) -> Result<()> {
        let (l, d) = match *self {
            LipschitzBudget::ChannelDerived { l, d, .. } => (l, d),
            LipschitzBudget::ObjectiveDirect { l_f, d } => (l_f, d),
        };
        if !(l >= 0.0 && l.is_finite()) {
            return Err(Error::Validation(format!("Lipschitz constant must be >= 0, got {l}")));
        }
        if d < 2 {
            return Err(Error::Validation(format!("dimension must be at least 2, got {d}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match *self {
            LipschitzBudget::ChannelDerived { d, .. } | LipschitzBudget::ObjectiveDirect { d, .. } => d,
        }
    }

    /// Constant for `F`.
    pub fn l_f(&self) -> f64 {
        match *self {
            LipschitzBudget::ChannelDerived { l, n_bar, .. } => (1.0 + ratio_to_f64(n_bar)) * l,
            LipschitzBudget::ObjectiveDirect { l_f, .. } => l_f,
        }
    }

    /// Constant for `p = (dF - 1)/(d - 1)`.
    pub fn l_p(&self) -> f64 {
        let d = self.dim() as f64;
        d * self.l_f() / (d - 1.0)
    }

    /// Half-width of the `A` and `B` corners, `(1 + n̄) L`.
    pub fn l_ab_corner(&self) -> f64 {
        self.l_f()
    }

    /// Continuity constant of `A` and `B` alone: `n̄ L` when known, otherwise
    /// the looser `L_F`.
    pub fn l_ab(&self) -> f64 {
        match *self {
            LipschitzBudget::ChannelDerived { l, n_bar, .. } => ratio_to_f64(n_bar) * l,
            LipschitzBudget::ObjectiveDirect { l_f, .. } => l_f,
        }
    }
}

/// The eight shift vectors for one control displacement.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerSet {
    pub delta: f64,
    pub corners: [Vector3<f64>; 8],
}

impl CornerSet {
    pub fn half_widths(&self) -> Vector3<f64> {
        self.corners[0].abs()
    }

    pub fn is_zero(&self) -> bool {
        self.corners.iter().all(|c| c.iter().all(|&x| x == 0.0))
    }
}

/// Corners `(±Δ L_p, ±Δ L_AB, ±Δ L_AB)` with `Δ = ‖δθ‖₂`.
pub fn corner_set(budget: &LipschitzBudget, delta_theta: &[f64]) -> Result<CornerSet> {
    budget.validate()?;
    let delta = delta_theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    let hp = delta * budget.l_p();
    let hab = delta * budget.l_ab_corner();
    let mut corners = [Vector3::zeros(); 8];
    for (k, c) in corners.iter_mut().enumerate() {
        let sign = |bit: usize| if k >> bit & 1 == 0 { 1.0 } else { -1.0 };
        *c = Vector3::new(sign(0) * hp, sign(1) * hab, sign(2) * hab);
    }
    Ok(CornerSet { delta, corners })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionMode {
    /// Every particle becomes eight weighted copies, then one multinomial
    /// down-sample restores the particle count.
    Replicate,
    /// Every particle moves to one uniformly chosen corner.
    #[default]
    Sample,
}

/// Shape of the shift distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionKernel {
    /// The eight-point corner mixture.
    #[default]
    Corners,
    /// Uniform over the box spanned by the corners.
    UniformHull,
}

/// Result of a diffusion step.
#[derive(Debug, Clone)]
pub struct Diffused {
    pub ensemble: ParticleEnsemble,
    /// Posterior mass whose shifted position had to be clamped into range.
    pub clamped_mass: f64,
}

/// The exact eight-fold mixture, before clamping. Entries are
/// `(shifted position, weight)`.
pub fn replicate_corners(ensemble: &ParticleEnsemble, corners: &CornerSet) -> Vec<(Vector3<f64>, f64)> {
    ensemble
        .iter()
        .flat_map(|(y, w)| {
            let base = y.to_vector();
            corners.corners.iter().map(move |c| (base + c, w / 8.0))
        })
        .collect()
}

fn clamp_shifted(v: &Vector3<f64>) -> (RbParams, bool) {
    let mut y = RbParams::from_vector(v);
    let moved = y.clamp();
    (y, moved)
}

/// Spreads the ensemble over the corner set.
pub fn diffuse<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    corners: &CornerSet,
    mode: DiffusionMode,
    kernel: DiffusionKernel,
    rng: &mut R,
) -> Result<Diffused> {
    if corners.is_zero() {
        return Ok(Diffused { ensemble: ensemble.clone(), clamped_mass: 0.0 });
    }
    let half = corners.half_widths();
    let shift = |rng: &mut R| -> Vector3<f64> {
        match kernel {
            DiffusionKernel::Corners => corners.corners[rng.random_range(0..8)],
            DiffusionKernel::UniformHull => {
                Vector3::from_fn(|i, _| half[i] * rng.random_range(-1.0..=1.0))
            }
        }
    };

    let diffused = match mode {
        DiffusionMode::Sample => {
            let mut clamped_mass = 0.0;
            let particles = ensemble
                .iter()
                .map(|(y, w)| {
                    let (moved, clamped) = clamp_shifted(&(y.to_vector() + shift(rng)));
                    if clamped {
                        clamped_mass += w;
                    }
                    moved
                })
                .collect();
            Diffused {
                ensemble: ParticleEnsemble::new(particles, ensemble.weights().to_vec())?,
                clamped_mass,
            }
        }
        DiffusionMode::Replicate => {
            let mixture: Vec<(Vector3<f64>, f64)> = match kernel {
                DiffusionKernel::Corners => replicate_corners(ensemble, corners),
                DiffusionKernel::UniformHull => ensemble
                    .iter()
                    .flat_map(|(y, w)| {
                        let base = y.to_vector();
                        (0..8).map(|_| (base + shift(rng), w / 8.0)).collect::<Vec<_>>()
                    })
                    .collect(),
            };
            let mut clamped_mass = 0.0;
            let clamped: Vec<RbParams> = mixture
                .iter()
                .map(|(v, w)| {
                    let (y, moved) = clamp_shifted(v);
                    if moved {
                        clamped_mass += w;
                    }
                    y
                })
                .collect();
            let weights: Vec<f64> = mixture.iter().map(|(_, w)| *w).collect();
            let index = WeightedIndex::new(&weights)
                .map_err(|e| Error::Inference(format!("cannot down-sample: {e}")))?;
            let particles = (0..ensemble.len()).map(|_| clamped[index.sample(rng)]).collect();
            Diffused { ensemble: ParticleEnsemble::uniform(particles)?, clamped_mass }
        }
    };
    if diffused.clamped_mass > CLAMP_WARNING_FRACTION {
        log::warn!(
            "diffusion clamped {:.2}% of posterior mass into the valid parameter range",
            100.0 * diffused.clamped_mass
        );
    }
    Ok(diffused)
}

/// Upper bound on the variance of a Lipschitz function after the controls
/// move by `delta`: `var (1 + 2 L delta / sqrt(var))`, valid while
/// `L delta < sqrt(var)`.
pub fn variance_inflation_bound(var_before: f64, l: f64, delta: f64) -> Result<f64> {
    if !(var_before > 0.0) {
        return Err(Error::Validation(format!("variance must be positive, got {var_before}")));
    }
    if l < 0.0 || delta < 0.0 {
        return Err(Error::Validation("Lipschitz constant and step must be nonnegative".into()));
    }
    let std = var_before.sqrt();
    let scaled_step = l * delta;
    if scaled_step >= std {
        return Err(Error::StepTooLarge { scaled_step, std });
    }
    Ok(var_before * (1.0 + 2.0 * scaled_step / std))
}

/// Largest adjacent-pair slope of `f` over a sorted grid; a lower estimate of
/// its Lipschitz constant.
pub fn verify_lipschitz<F>(grid: &[f64], mut f: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.len() < 2 {
        return Err(Error::Validation("need at least two grid points".into()));
    }
    let values = grid.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    let slopes = grid.windows(2).zip(values.windows(2)).map(|(x, v)| {
        let dx = (x[1] - x[0]).abs();
        if dx == 0.0 {
            0.0
        } else {
            (v[1] - v[0]).abs() / dx
        }
    });
    Ok(slopes.fold(0.0, f64::max))
}

/// Exact interleaved objective `F(θ)` of the over-rotation device.
pub fn true_objective(theta: f64, depolarizing_strength: f64, table: &GroupTable) -> Result<f64> {
    let device = DeviceModel::over_rotation(theta, depolarizing_strength, table)?;
    let y = true_rb_params(&device, table, true)?;
    Ok(FidelityMap::DecayInverse.fidelity(y.p, 2))
}

/// Numeric Lipschitz estimate of `F(θ)` for the over-rotation device.
pub fn verify_lipschitz_f(grid: &[f64], depolarizing_strength: f64, table: &GroupTable) -> Result<f64> {
    verify_lipschitz(grid, |theta| true_objective(theta, depolarizing_strength, table))
}

/// Evenly spaced grid from `start` to `end` inclusive.
pub fn grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step).round() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn y(p: f64, a: f64, b: f64) -> RbParams {
        RbParams::new(p, a, b).unwrap()
    }

    fn budget() -> LipschitzBudget {
        LipschitzBudget::ChannelDerived { l: 1.0, n_bar: Ratio::new(7, 3), d: 2 }
    }

    #[test]
    fn zero_displacement_gives_zero_corners() {
        let c = corner_set(&budget(), &[0.0]).unwrap();
        assert!(c.is_zero());
    }

    #[test]
    fn corner_magnitudes() {
        let c = corner_set(&budget(), &[0.1]).unwrap();
        let h = c.half_widths();
        assert!((h[0] - 2.0 * (10.0 / 3.0) * 0.1).abs() < 1e-12);
        assert!((h[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((h[2] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn euclidean_norm_of_displacement() {
        let b = LipschitzBudget::ObjectiveDirect { l_f: 1.0, d: 2 };
        let c = corner_set(&b, &[0.3, 0.4]).unwrap();
        assert!((c.delta - 0.5).abs() < 1e-15);
        assert!((c.half_widths()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn budget_constants() {
        let b = budget();
        assert!((b.l_f() - 10.0 / 3.0).abs() < 1e-12);
        assert!((b.l_p() - 20.0 / 3.0).abs() < 1e-12);
        assert!((b.l_ab() - 7.0 / 3.0).abs() < 1e-12);
        let direct = LipschitzBudget::ObjectiveDirect { l_f: 1.48, d: 2 };
        assert!((direct.l_p() - 2.96).abs() < 1e-12);
        assert!(LipschitzBudget::ObjectiveDirect { l_f: -1.0, d: 2 }.validate().is_err());
    }

    #[test]
    fn zero_corners_leave_ensemble_unchanged() {
        let e = ParticleEnsemble::uniform(vec![y(0.9, 0.5, 0.5), y(0.8, 0.4, 0.5)]).unwrap();
        let c = corner_set(&budget(), &[0.0]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for mode in [DiffusionMode::Replicate, DiffusionMode::Sample] {
            let d = diffuse(&e, &c, mode, DiffusionKernel::Corners, &mut rng).unwrap();
            assert_eq!(d.ensemble, e);
        }
    }

    #[test]
    fn single_particle_replicates_to_corners() {
        let b = LipschitzBudget::ObjectiveDirect { l_f: 0.5, d: 2 };
        let c = corner_set(&b, &[0.05]).unwrap();
        let e = ParticleEnsemble::new(vec![y(0.9, 0.5, 0.5), y(0.1, 0.1, 0.1)], vec![1.0, 0.0]).unwrap();
        let mix = replicate_corners(&e, &c);
        let live: Vec<_> = mix.iter().filter(|(_, w)| *w > 0.0).collect();
        assert_eq!(live.len(), 8);
        let mean = live.iter().fold(Vector3::zeros(), |acc, (v, w)| acc + v * *w);
        assert!((mean - Vector3::new(0.9, 0.5, 0.5)).norm() < 1e-15);
        for (v, _) in live {
            let off = (v - Vector3::new(0.9, 0.5, 0.5)).abs();
            assert!((off - c.half_widths()).norm() < 1e-12);
        }
    }

    #[test]
    fn sample_mode_keeps_size_and_counts_clamping() {
        let b = LipschitzBudget::ObjectiveDirect { l_f: 1.0, d: 2 };
        let c = corner_set(&b, &[0.1]).unwrap();
        let e = ParticleEnsemble::uniform(vec![y(0.99, 0.5, 0.5); 100]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let d = diffuse(&e, &c, DiffusionMode::Sample, DiffusionKernel::Corners, &mut rng).unwrap();
        assert_eq!(d.ensemble.len(), 100);
        // p + 0.2 always leaves [0, 1], so about half the mass clamps.
        assert!(d.clamped_mass > 0.3 && d.clamped_mass < 0.7, "{}", d.clamped_mass);
        assert!(d.ensemble.particles().iter().all(|p| p.in_range()));
    }

    #[test]
    fn uniform_hull_stays_inside_box() {
        let b = LipschitzBudget::ObjectiveDirect { l_f: 0.5, d: 2 };
        let c = corner_set(&b, &[0.05]).unwrap();
        let e = ParticleEnsemble::uniform(vec![y(0.5, 0.5, 0.5); 200]).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let d = diffuse(&e, &c, DiffusionMode::Sample, DiffusionKernel::UniformHull, &mut rng).unwrap();
        let h = c.half_widths();
        for p in d.ensemble.particles() {
            let off = (p.to_vector() - Vector3::new(0.5, 0.5, 0.5)).abs();
            assert!(off[0] <= h[0] + 1e-15 && off[1] <= h[1] + 1e-15 && off[2] <= h[2] + 1e-15);
        }
    }

    #[test]
    fn variance_bound_examples() {
        assert_eq!(variance_inflation_bound(0.01, 1.0, 0.0).unwrap(), 0.01);
        assert!((variance_inflation_bound(0.01, 1.0, 0.01).unwrap() - 0.012).abs() < 1e-15);
        let mut last = 0.0;
        for k in 0..50 {
            let v = variance_inflation_bound(0.01, 1.0, k as f64 * 0.001).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert!(matches!(
            variance_inflation_bound(0.01, 1.0, 0.2),
            Err(Error::StepTooLarge { .. })
        ));
        assert!(variance_inflation_bound(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn variance_bound_misses_second_order_term_for_correlated_shift() {
        // f(θ', y) = (1 + ε) y with y = ±1 moves by at most ε per unit step but
        // has variance (1 + ε)², which exceeds 1 + 2ε by ε².
        let eps = 0.1;
        let shifted = (1.0f64 + eps).powi(2);
        let bound = variance_inflation_bound(1.0, 1.0, eps).unwrap();
        assert!(shifted > bound);
        assert!((shifted - bound - eps * eps).abs() < 1e-12);
    }

    #[test]
    fn lipschitz_of_constant_is_zero() {
        let g = grid(-0.5, 0.5, 0.01);
        assert_eq!(g.len(), 101);
        assert_eq!(verify_lipschitz(&g, |_| Ok(0.3)).unwrap(), 0.0);
        assert!(verify_lipschitz(&[0.0], |_| Ok(0.0)).is_err());
    }

    #[test]
    fn lipschitz_of_pure_overrotation_agf() {
        // d/dθ (2/3 + cos(2θ)/3) = -(2/3) sin(2θ), at most 2/3 in magnitude.
        let g = grid(-1.5, 1.5, 0.001);
        let l = verify_lipschitz(&g, |t| Ok(2.0 / 3.0 + (2.0 * t).cos() / 3.0)).unwrap();
        assert!(l <= 2.0 / 3.0 + 1e-9 && l > 0.666, "{l}");
    }
}
