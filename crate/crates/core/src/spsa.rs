//! SPSA local search over the controls with Bayesian estimates of the
//! interleaved fidelity at every evaluated point.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clifford::GroupTable;
use crate::error::{Error, Result};
use crate::rb::{run_shot, sample_sequence, DeviceModel, LENGTH_LADDER};
use crate::reuse::{corner_set, diffuse, DiffusionKernel, DiffusionMode, LipschitzBudget};
use crate::rng::StreamSet;
use crate::smc::{FidelityMap, ParticleEnsemble, PriorSpec};

/// Level of the credible interval reported for the infidelity.
pub const CREDIBLE_LEVEL: f64 = 0.7;

/// What the fidelity difference is compared against before an SPSA step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceGate {
    /// Posterior variance of `F(θ + δθ)`.
    #[default]
    Variance,
    /// Posterior standard deviation of `F(θ + δθ)`.
    StdDev,
}

/// How the fidelity difference becomes an update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientScale {
    /// `u = gain Δ ΔF`.
    #[default]
    Difference,
    /// `u = gain Δ ΔF / step`, the one-sided finite-difference gradient.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaConfig {
    pub a: f64,
    pub b: f64,
    pub s: f64,
    pub t: f64,
    pub max_step: f64,
    pub sigma_req: f64,
    #[serde(rename = "F_target")]
    pub f_target: f64,
    pub max_iters: usize,
    pub shots_cap_per_point: usize,
    pub variance_gate: VarianceGate,
    pub gradient_scale: GradientScale,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            a: 0.05,
            b: 0.05,
            s: 1.0,
            t: 1.0,
            max_step: 0.1,
            sigma_req: 0.005,
            f_target: 0.985,
            max_iters: 50,
            shots_cap_per_point: 500,
            variance_gate: VarianceGate::Variance,
            gradient_scale: GradientScale::Difference,
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> Error {
    Error::Config { field: field.to_owned(), message: message.into() }
}

impl SpsaConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("a", self.a), ("b", self.b), ("max_step", self.max_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_error(field, format!("must be positive, got {v}")));
            }
        }
        for (field, v) in [("s", self.s), ("t", self.t)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_error(field, format!("must be nonnegative, got {v}")));
            }
        }
        if !(self.sigma_req > 0.0 && self.sigma_req < 0.5) {
            return Err(config_error("sigma_req", format!("must be in (0, 0.5), got {}", self.sigma_req)));
        }
        if !self.f_target.is_finite() {
            return Err(config_error("F_target", "must be finite"));
        }
        if self.max_iters == 0 {
            return Err(config_error("max_iters", "must be positive"));
        }
        if self.shots_cap_per_point == 0 {
            return Err(config_error("shots_cap_per_point", "must be positive"));
        }
        Ok(())
    }

    pub fn step(&self, i: usize) -> f64 {
        self.a / (1.0 + (i as f64).powf(self.s))
    }

    pub fn gain(&self, i: usize) -> f64 {
        self.b / (1.0 + (i as f64).powf(self.t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    #[serde(rename = "N_p")]
    pub n_particles: usize,
    pub lw_a: f64,
    pub resample_threshold: f64,
    pub fidelity_map: FidelityMap,
    pub prior: PriorSpec,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            lw_a: 0.98,
            resample_threshold: 1.0 / 256.0,
            fidelity_map: FidelityMap::default(),
            prior: PriorSpec::default(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(config_error("N_p", format!("need at least 2 particles, got {}", self.n_particles)));
        }
        if !(self.lw_a > 0.0 && self.lw_a <= 1.0) {
            return Err(config_error("lw_a", format!("must be in (0, 1], got {}", self.lw_a)));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(config_error(
                "resample_threshold",
                format!("must be in (0, 1], got {}", self.resample_threshold),
            ));
        }
        self.prior.validate().map_err(|e| config_error("prior", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReuseConfig {
    pub lipschitz: LipschitzBudget,
    pub diffusion_mode: DiffusionMode,
    pub kernel: DiffusionKernel,
}

impl Default for ReuseConfig {
    fn default() -> Self {
        Self {
            lipschitz: LipschitzBudget::ObjectiveDirect { l_f: 1.48, d: 2 },
            diffusion_mode: DiffusionMode::default(),
            kernel: DiffusionKernel::default(),
        }
    }
}

impl ReuseConfig {
    pub fn validate(&self) -> Result<()> {
        self.lipschitz.validate().map_err(|e| config_error("lipschitz", e.to_string()))
    }
}

/// A posterior at one control setting.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub ensemble: ParticleEnsemble,
    pub f_mean: f64,
    pub f_var: f64,
    pub shots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    SpsaStep,
    FallbackForward,
    FallbackBackward,
}

/// One SPSA iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
    pub step: f64,
    pub gain: f64,
    pub f_hat: f64,
    pub f_hat_perturbed: f64,
    pub var_perturbed: f64,
    pub branch: Branch,
    pub update: Vec<f64>,
    pub theta_next: Vec<f64>,
    pub f_hat_next: f64,
    pub std_next: f64,
    pub infidelity_lo: f64,
    pub infidelity_hi: f64,
    pub bits: usize,
    pub sequences: usize,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    iteration: usize,
    theta: String,
    delta: String,
    step: f64,
    gain: f64,
    f_hat: f64,
    f_hat_perturbed: f64,
    var_perturbed: f64,
    branch: &'a str,
    update: String,
    theta_next: String,
    f_hat_next: f64,
    std_next: f64,
    infidelity_lo: f64,
    infidelity_hi: f64,
    bits: usize,
    sequences: usize,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(";")
}

/// Per-iteration trace of a tuning run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub records: Vec<IterationRecord>,
}

impl TuneTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Vector fields are written as `;`-separated components.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(CsvRow {
                iteration: r.iteration,
                theta: join(&r.theta),
                delta: join(&r.delta),
                step: r.step,
                gain: r.gain,
                f_hat: r.f_hat,
                f_hat_perturbed: r.f_hat_perturbed,
                var_perturbed: r.var_perturbed,
                branch: match r.branch {
                    Branch::SpsaStep => "spsa-step",
                    Branch::FallbackForward => "fallback-forward",
                    Branch::FallbackBackward => "fallback-backward",
                },
                update: join(&r.update),
                theta_next: join(&r.theta_next),
                f_hat_next: r.f_hat_next,
                std_next: r.std_next,
                infidelity_lo: r.infidelity_lo,
                infidelity_hi: r.infidelity_hi,
                bits: r.bits,
                sequences: r.sequences,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: std::io::Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.records)?;
        Ok(())
    }
}

/// The update rule of one iteration: the clamped SPSA step when the fidelity
/// difference clears the gate, otherwise a move of `step Δ` towards the
/// larger estimate.
pub fn choose_update(
    cfg: &SpsaConfig,
    delta: &[f64],
    step: f64,
    gain: f64,
    f_hat: f64,
    f_perturbed: f64,
    var_perturbed: f64,
) -> (Branch, Vec<f64>) {
    let diff = f_perturbed - f_hat;
    let scale = match cfg.gradient_scale {
        GradientScale::Difference => 1.0,
        GradientScale::FiniteDifference => 1.0 / step,
    };
    let gate = match cfg.variance_gate {
        VarianceGate::Variance => var_perturbed,
        VarianceGate::StdDev => var_perturbed.sqrt(),
    };
    if diff.abs() >= gate {
        let mut u: Vec<f64> = delta.iter().map(|d| gain * d * diff * scale).collect();
        let largest = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if largest > cfg.max_step {
            u.iter_mut().for_each(|x| *x *= cfg.max_step / largest);
        }
        (Branch::SpsaStep, u)
    } else if f_perturbed < f_hat {
        (Branch::FallbackBackward, delta.iter().map(|d| -step * d).collect())
    } else {
        (Branch::FallbackForward, delta.iter().map(|d| step * d).collect())
    }
}

/// Loop state between iterations.
#[derive(Debug, Clone)]
pub struct TuneState {
    pub iteration: usize,
    pub theta: Vec<f64>,
    pub estimate: Estimate,
    pub bits: usize,
    pub sequences: usize,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub theta: Vec<f64>,
    pub f_hat: f64,
    pub f_std: f64,
    pub converged: bool,
    pub iterations: usize,
    pub bits: usize,
    pub trace: TuneTrace,
    /// Controls and estimate with the highest `F̂` seen, initial point included.
    pub best_theta: Vec<f64>,
    pub best_f_hat: f64,
    pub initial_ensemble: ParticleEnsemble,
    pub final_ensemble: ParticleEnsemble,
    /// Times the filter lost all weight and restarted from the prior.
    pub reinitializations: usize,
}

type DeviceFactory<'a> = Box<dyn Fn(&[f64]) -> Result<DeviceModel> + 'a>;

/// Runs the tuning loop against a simulated device.
pub struct Tuner<'a> {
    table: &'a GroupTable,
    device_factory: DeviceFactory<'a>,
    spsa: SpsaConfig,
    inference: InferenceConfig,
    reuse: ReuseConfig,
    streams: StreamSet,
    ladder_position: usize,
    reinitializations: usize,
}

impl<'a> Tuner<'a> {
    pub fn new(
        table: &'a GroupTable,
        device_factory: impl Fn(&[f64]) -> Result<DeviceModel> + 'a,
        spsa: SpsaConfig,
        inference: InferenceConfig,
        reuse: ReuseConfig,
        seed: u64,
    ) -> Result<Self> {
        spsa.validate()?;
        inference.validate()?;
        reuse.validate()?;
        Ok(Self {
            table,
            device_factory: Box::new(device_factory),
            spsa,
            inference,
            reuse,
            streams: StreamSet::new(seed),
            ladder_position: 0,
            reinitializations: 0,
        })
    }

    /// Tuner for the single-angle over-rotation device, where the control
    /// cancels the over-rotation at `θ = 0`.
    pub fn over_rotation(
        table: &'a GroupTable,
        depolarizing_strength: f64,
        spsa: SpsaConfig,
        inference: InferenceConfig,
        reuse: ReuseConfig,
        seed: u64,
    ) -> Result<Self> {
        let factory = move |theta: &[f64]| {
            let [x] = theta else {
                return Err(Error::DimensionMismatch { expected: 1, got: theta.len() });
            };
            DeviceModel::over_rotation(*x, depolarizing_strength, table)
        };
        Self::new(table, factory, spsa, inference, reuse, seed)
    }

    pub fn spsa_config(&self) -> &SpsaConfig {
        &self.spsa
    }

    pub fn fresh_prior(&mut self) -> Result<ParticleEnsemble> {
        self.inference.prior.sample(self.inference.n_particles, self.streams.prior.rng())
    }

    fn moments(&self, ensemble: &ParticleEnsemble) -> (f64, f64) {
        ensemble.posterior_fidelity(self.inference.fidelity_map, 2)
    }

    /// Collects single shots at `theta` until `Var[F] ≤ σ_req²` or the cap.
    pub fn estimate_at(&mut self, theta: &[f64], prior: ParticleEnsemble) -> Result<Estimate> {
        let device = (self.device_factory)(theta)?;
        let sigma2 = self.spsa.sigma_req * self.spsa.sigma_req;
        let mut ensemble = prior;
        let mut shots = 0;
        loop {
            let (f_mean, f_var) = self.moments(&ensemble);
            if f_var <= sigma2 || shots >= self.spsa.shots_cap_per_point {
                return Ok(Estimate { ensemble, f_mean, f_var, shots });
            }
            let m = LENGTH_LADDER[self.ladder_position % LENGTH_LADDER.len()];
            self.ladder_position += 1;
            let seq = sample_sequence(self.table, m, true, self.streams.sequences.rng())?;
            let shot = run_shot(&device, &seq, self.streams.shots.rng())?;
            shots += 1;
            match ensemble.bayes_update(m, shot.outcome) {
                Ok(()) => {}
                Err(Error::Inference(msg)) => {
                    log::warn!("{msg}; restarting from the prior");
                    self.reinitializations += 1;
                    ensemble = self.fresh_prior()?;
                    continue;
                }
                Err(e) => return Err(e),
            }
            if ensemble.effective_sample_size() / (ensemble.len() as f64) < self.inference.resample_threshold {
                ensemble = ensemble.liu_west_resample(self.inference.lw_a, self.streams.resampling.rng())?;
            }
        }
    }

    fn shift(&mut self, ensemble: &ParticleEnsemble, displacement: &[f64]) -> Result<ParticleEnsemble> {
        let corners = corner_set(&self.reuse.lipschitz, displacement)?;
        Ok(diffuse(
            ensemble,
            &corners,
            self.reuse.diffusion_mode,
            self.reuse.kernel,
            self.streams.diffusion.rng(),
        )?
        .ensemble)
    }

    /// Initial estimate at `theta0` from a fresh prior.
    pub fn initialize(&mut self, theta0: &[f64]) -> Result<TuneState> {
        let prior = self.fresh_prior()?;
        let estimate = self.estimate_at(theta0, prior)?;
        Ok(TuneState {
            iteration: 0,
            theta: theta0.to_vec(),
            bits: estimate.shots,
            sequences: estimate.shots,
            estimate,
        })
    }

    /// One pass of the loop body.
    pub fn spsa_iteration(&mut self, state: TuneState) -> Result<(TuneState, IterationRecord)> {
        let cfg = self.spsa;
        let i = state.iteration + 1;
        let delta: Vec<f64> = (0..state.theta.len())
            .map(|_| if self.streams.perturbations.rng().random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let step = cfg.step(i);
        let gain = cfg.gain(i);
        let dtheta: Vec<f64> = delta.iter().map(|d| step * d).collect();
        let perturbed_theta: Vec<f64> = state.theta.iter().zip(&dtheta).map(|(x, d)| x + d).collect();

        let prior = self.shift(&state.estimate.ensemble, &dtheta)?;
        let perturbed = self.estimate_at(&perturbed_theta, prior)?;

        let (branch, update) =
            choose_update(&cfg, &delta, step, gain, state.estimate.f_mean, perturbed.f_mean, perturbed.f_var);
        let theta_next: Vec<f64> = state.theta.iter().zip(&update).map(|(x, u)| x + u).collect();

        let extra: Vec<f64> = theta_next.iter().zip(&perturbed_theta).map(|(a, b)| a - b).collect();
        let carried = self.shift(&perturbed.ensemble, &extra)?;
        let (f_mean, f_var) = self.moments(&carried);
        let mut next = Estimate { ensemble: carried, f_mean, f_var, shots: 0 };
        if f_var > cfg.sigma_req * cfg.sigma_req {
            next = self.estimate_at(&theta_next, next.ensemble)?;
        }

        let used = perturbed.shots + next.shots;
        let bits = state.bits + used;
        let sequences = state.sequences + used;
        let (infidelity_lo, infidelity_hi) = self.infidelity_interval(&next.ensemble);
        let record = IterationRecord {
            iteration: i,
            theta: state.theta,
            delta,
            step,
            gain,
            f_hat: state.estimate.f_mean,
            f_hat_perturbed: perturbed.f_mean,
            var_perturbed: perturbed.f_var,
            branch,
            update,
            theta_next: theta_next.clone(),
            f_hat_next: next.f_mean,
            std_next: next.f_var.sqrt(),
            infidelity_lo,
            infidelity_hi,
            bits,
            sequences,
        };
        let state = TuneState { iteration: i, theta: theta_next, estimate: next, bits, sequences };
        Ok((state, record))
    }

    /// Credible interval of `1 - F` at [`CREDIBLE_LEVEL`].
    pub fn infidelity_interval(&self, ensemble: &ParticleEnsemble) -> (f64, f64) {
        let map = self.inference.fidelity_map;
        ensemble.credible_interval(CREDIBLE_LEVEL, |y| 1.0 - map.fidelity(y.p, 2))
    }

    /// Initial estimate, then iterations until `F̂ > F_target` or `max_iters`.
    pub fn tune(&mut self, theta0: &[f64]) -> Result<TuneOutcome> {
        let mut state = self.initialize(theta0)?;
        let initial_ensemble = state.estimate.ensemble.clone();
        let mut trace = TuneTrace::default();
        let mut best = (state.theta.clone(), state.estimate.f_mean);
        while state.estimate.f_mean <= self.spsa.f_target && state.iteration < self.spsa.max_iters {
            let (next, record) = self.spsa_iteration(state)?;
            log::debug!(
                "iteration {}: theta {:?} F {:.4} ({:?}, {} bits)",
                record.iteration,
                record.theta_next,
                record.f_hat_next,
                record.branch,
                record.bits
            );
            trace.records.push(record);
            state = next;
            if state.estimate.f_mean > best.1 {
                best = (state.theta.clone(), state.estimate.f_mean);
            }
        }
        Ok(TuneOutcome {
            converged: state.estimate.f_mean > self.spsa.f_target,
            f_hat: state.estimate.f_mean,
            f_std: state.estimate.f_var.sqrt(),
            iterations: state.iteration,
            bits: state.bits,
            theta: state.theta,
            trace,
            best_theta: best.0,
            best_f_hat: best.1,
            initial_ensemble,
            final_ensemble: state.estimate.ensemble,
            reinitializations: self.reinitializations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smc::RbParams;

    fn small() -> (SpsaConfig, InferenceConfig) {
        let spsa = SpsaConfig { max_iters: 3, shots_cap_per_point: 60, ..Default::default() };
        let inference = InferenceConfig { n_particles: 400, ..Default::default() };
        (spsa, inference)
    }

    #[test]
    fn schedule_at_first_iteration() {
        let cfg = SpsaConfig::default();
        assert!((cfg.step(1) - 0.025).abs() < 1e-15);
        assert!((cfg.gain(1) - 0.025).abs() < 1e-15);
        let constant = SpsaConfig { s: 0.0, ..cfg };
        assert!((constant.step(7) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn validation_names_field() {
        let bad = SpsaConfig { sigma_req: 0.0, ..Default::default() };
        match bad.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "sigma_req"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(SpsaConfig { max_step: 0.0, ..Default::default() }.validate().is_err());
        assert!(InferenceConfig { lw_a: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn equal_estimates_fall_back_forward() {
        let cfg = SpsaConfig::default();
        let (branch, u) = choose_update(&cfg, &[1.0], 0.025, 0.025, 0.9, 0.9, 1e-4);
        assert_eq!(branch, Branch::FallbackForward);
        assert_eq!(u, vec![0.025]);
        let (branch, u) = choose_update(&cfg, &[1.0], 0.025, 0.025, 0.9, 0.89999, 1e-4);
        assert_eq!(branch, Branch::FallbackBackward);
        assert_eq!(u, vec![-0.025]);
    }

    #[test]
    fn large_update_is_rescaled_to_max_step() {
        let cfg = SpsaConfig { gradient_scale: GradientScale::FiniteDifference, ..Default::default() };
        let (branch, u) = choose_update(&cfg, &[1.0, -1.0], 0.001, 0.05, 0.5, 0.9, 1e-6);
        assert_eq!(branch, Branch::SpsaStep);
        assert!((u[0] - 0.1).abs() < 1e-15 && (u[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn literal_step_is_gain_times_difference() {
        let cfg = SpsaConfig::default();
        let (branch, u) = choose_update(&cfg, &[-1.0], 0.025, 0.025, 0.90, 0.92, 1e-5);
        assert_eq!(branch, Branch::SpsaStep);
        assert!((u[0] + 0.025 * 0.02).abs() < 1e-15);
        let std_gate = SpsaConfig { variance_gate: VarianceGate::StdDev, ..cfg };
        let (branch, _) = choose_update(&std_gate, &[-1.0], 0.025, 0.025, 0.90, 0.92, 1e-3);
        assert_eq!(branch, Branch::FallbackForward);
    }

    #[test]
    fn tight_prior_costs_no_shots() {
        let table = GroupTable::clifford();
        let (spsa, inference) = small();
        let mut tuner =
            Tuner::over_rotation(&table, 0.005, spsa, inference, ReuseConfig::default(), 1).unwrap();
        let y = RbParams::new(0.97, 0.5, 0.5).unwrap();
        let prior = ParticleEnsemble::uniform(vec![y; 10]).unwrap();
        let e = tuner.estimate_at(&[0.0], prior).unwrap();
        assert_eq!(e.shots, 0);
        assert!(e.f_var < 1e-20);
    }

    #[test]
    fn estimate_stops_at_cap() {
        let table = GroupTable::clifford();
        let (spsa, inference) = small();
        let mut tuner =
            Tuner::over_rotation(&table, 0.005, spsa, inference, ReuseConfig::default(), 2).unwrap();
        let prior = tuner.fresh_prior().unwrap();
        let e = tuner.estimate_at(&[0.35], prior).unwrap();
        assert_eq!(e.shots, 60);
    }

    #[test]
    fn target_below_initial_estimate_needs_no_iterations() {
        let table = GroupTable::clifford();
        let (mut spsa, inference) = small();
        spsa.f_target = 0.0;
        let mut tuner =
            Tuner::over_rotation(&table, 0.005, spsa, inference, ReuseConfig::default(), 3).unwrap();
        let out = tuner.tune(&[0.0]).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert!(out.trace.is_empty());
    }

    fn run(seed: u64) -> TuneOutcome {
        let table = GroupTable::clifford();
        let (mut spsa, inference) = small();
        spsa.f_target = 0.999;
        spsa.variance_gate = VarianceGate::StdDev;
        let mut tuner =
            Tuner::over_rotation(&table, 0.005, spsa, inference, ReuseConfig::default(), seed).unwrap();
        tuner.tune(&[0.2]).unwrap()
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let a = run(11);
        let b = run(11);
        assert_eq!(a.trace, b.trace);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.trace.write_csv(&mut ca).unwrap();
        b.trace.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert_ne!(run(12).trace, a.trace);
    }

    #[test]
    fn trace_invariants_hold() {
        let out = run(5);
        assert!(!out.converged);
        assert_eq!(out.trace.len(), out.iterations);
        let cfg = SpsaConfig::default();
        let mut last_bits = 0;
        for (k, r) in out.trace.records.iter().enumerate() {
            assert_eq!(r.iteration, k + 1);
            assert!(r.bits >= last_bits && r.bits == r.sequences);
            last_bits = r.bits;
            assert!(r.update.iter().all(|u| u.abs() <= cfg.max_step));
            if r.branch == Branch::SpsaStep {
                assert!((r.f_hat_perturbed - r.f_hat).abs() >= r.var_perturbed.sqrt());
            }
        }
        assert_eq!(out.bits, last_bits);
        let json = serde_json::to_string(&out.trace.records).unwrap();
        assert!(json.contains("\"branch\""));
    }
}
