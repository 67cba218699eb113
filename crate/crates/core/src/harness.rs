//! Runs configured experiments and writes their outputs.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::channels::{agf, compose, gates, unitary_channel};
use crate::clifford::GroupTable;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::rb::{run_shot, sample_sequence, true_rb_params, DeviceModel, LENGTH_LADDER};
use crate::reuse::grid;
use crate::rng::StreamSet;
use crate::smc::FidelityMap;
use crate::spsa::{TuneOutcome, Tuner};

pub const EXIT_CONVERGED: i32 = 0;
/// Invalid config, or any other failure before a summary exists.
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// Angle of the survival-decay figure.
pub const SURVIVAL_THETA: f64 = 0.04;
/// Shots per sequence length in the survival-decay figure.
pub const SURVIVAL_SHOTS: usize = 20;

/// Exact figures of merit of the over-rotation device at one angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrueValues {
    pub theta: f64,
    /// Interleaved objective `AGF(Λ_T Λ_ref)`.
    #[serde(rename = "F")]
    pub f: f64,
    /// `AGF(Λ_T)` of the target gate alone.
    pub agf_target: f64,
}

pub fn true_values(theta: f64, depolarizing_strength: f64, table: &GroupTable) -> Result<TrueValues> {
    let device = DeviceModel::over_rotation(theta, depolarizing_strength, table)?;
    let y = true_rb_params(&device, table, true)?;
    Ok(TrueValues {
        theta,
        f: FidelityMap::DecayInverse.fidelity(y.p, 2),
        agf_target: agf(&device.target_discrepancy()?)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub rng_seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub total_bits: usize,
    pub theta_final: Vec<f64>,
    pub f_hat: f64,
    pub f_std: f64,
    pub best_theta: Vec<f64>,
    pub best_f_hat: f64,
    pub initial: TrueValues,
    #[serde(rename = "final")]
    pub final_true: TrueValues,
    pub reinitializations: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            EXIT_CONVERGED
        } else {
            EXIT_NOT_CONVERGED
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Tunes the configured device and returns the outcome with its summary,
/// without touching the filesystem.
pub fn tune_config(config: &ExperimentConfig) -> Result<(TuneOutcome, RunSummary)> {
    config.validate()?;
    let table = config.presentation.table()?;
    let q = config.device.depolarizing_strength;
    let mut tuner = Tuner::over_rotation(&table, q, config.spsa, config.inference, config.reuse, config.rng_seed)?;
    let theta0 = [config.device.theta0];
    let outcome = tuner.tune(&theta0)?;
    let summary = RunSummary {
        rng_seed: config.rng_seed,
        converged: outcome.converged,
        iterations: outcome.iterations,
        total_bits: outcome.bits,
        theta_final: outcome.theta.clone(),
        f_hat: outcome.f_hat,
        f_std: outcome.f_std,
        best_theta: outcome.best_theta.clone(),
        best_f_hat: outcome.best_f_hat,
        initial: true_values(theta0[0], q, &table)?,
        final_true: true_values(outcome.theta[0], q, &table)?,
        reinitializations: outcome.reinitializations,
    };
    Ok((outcome, summary))
}

/// Runs the tuning loop and writes the run directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let (outcome, summary) = tune_config(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config-echo.json"), config.to_json()?)?;
    outcome.trace.write_csv(create(&dir.join("trace.csv"))?)?;
    outcome.trace.write_json(create(&dir.join("trace.json"))?)?;
    outcome.initial_ensemble.write_csv(create(&dir.join("ensemble-initial.csv"))?)?;
    outcome.final_ensemble.write_csv(create(&dir.join("ensemble-final.csv"))?)?;
    serde_json::to_writer_pretty(create(&dir.join("summary.json"))?, &summary)?;
    Ok(summary)
}

/// Reads the config at `path`, runs it and maps the result to an exit code.
pub fn run_experiment_file(path: &Path) -> i32 {
    let config = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match run_experiment(&config) {
        Ok(summary) => {
            println!(
                "theta {:?}  F_hat {:.5} ± {:.5}  true F {:.5}  AGF(target) {:.5}  bits {}  iterations {}  converged {}",
                summary.theta_final,
                summary.f_hat,
                summary.f_std,
                summary.final_true.f,
                summary.final_true.agf_target,
                summary.total_bits,
                summary.iterations,
                summary.converged
            );
            summary.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    ObjectiveCurve,
    RbParamsCurve,
    SurvivalDecay,
    TuningTrace,
}

impl Figure {
    pub const ALL: [Figure; 4] =
        [Figure::ObjectiveCurve, Figure::RbParamsCurve, Figure::SurvivalDecay, Figure::TuningTrace];

    pub fn name(self) -> &'static str {
        match self {
            Figure::ObjectiveCurve => "objective-curve",
            Figure::RbParamsCurve => "rb-params-curve",
            Figure::SurvivalDecay => "survival-decay",
            Figure::TuningTrace => "tuning-trace",
        }
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFigure(s.to_owned()))
    }
}

/// Angles used by the curve figures.
pub fn figure_grid() -> Vec<f64> {
    grid(-0.5, 0.5, 0.01)
}

#[derive(Serialize)]
struct ObjectiveRow {
    theta: f64,
    #[serde(rename = "F")]
    f: f64,
    agf_target: f64,
    agf_target_noiseless: f64,
}

#[derive(Serialize)]
struct RbParamsRow {
    theta: f64,
    p: f64,
    #[serde(rename = "A")]
    a: f64,
    #[serde(rename = "B")]
    b: f64,
}

#[derive(Serialize)]
pub struct SurvivalRow {
    pub length: usize,
    pub shots: usize,
    pub mean_survival: f64,
    pub exact_survival: f64,
    pub estimated_survival: f64,
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    theta: f64,
    f_hat: f64,
    infidelity_lo: f64,
    infidelity_hi: f64,
    bits: usize,
    true_f: f64,
    true_agf_target: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Shots at [`SURVIVAL_THETA`] over the length ladder, the exact decay, and
/// the decay implied by the posterior mean after a filter sees the shots.
pub fn survival_decay(config: &ExperimentConfig, table: &GroupTable) -> Result<Vec<SurvivalRow>> {
    let device = DeviceModel::over_rotation(SURVIVAL_THETA, config.device.depolarizing_strength, table)?;
    let truth = true_rb_params(&device, table, true)?;
    let mut streams = StreamSet::new(config.rng_seed);
    let mut ensemble = config.inference.prior.sample(config.inference.n_particles, streams.prior.rng())?;
    let mut counts = Vec::new();
    for &m in &LENGTH_LADDER {
        let mut survived = 0;
        for _ in 0..SURVIVAL_SHOTS {
            let seq = sample_sequence(table, m, true, streams.sequences.rng())?;
            let shot = run_shot(&device, &seq, streams.shots.rng())?;
            survived += shot.outcome as usize;
            ensemble.bayes_update(m, shot.outcome)?;
            if ensemble.effective_sample_size() / (ensemble.len() as f64) < config.inference.resample_threshold {
                ensemble = ensemble.liu_west_resample(config.inference.lw_a, streams.resampling.rng())?;
            }
        }
        counts.push((m, survived));
    }
    let mean = ensemble.mean();
    let estimate = crate::smc::RbParams { p: mean[0], a: mean[1], b: mean[2] };
    Ok(counts
        .into_iter()
        .map(|(m, survived)| SurvivalRow {
            length: m,
            shots: SURVIVAL_SHOTS,
            mean_survival: survived as f64 / SURVIVAL_SHOTS as f64,
            exact_survival: truth.survival(m),
            estimated_survival: estimate.survival(m),
        })
        .collect())
}

/// Writes one figure's CSV under `<output_dir>/figures/` and returns its path.
pub fn emit_figure_data(config: &ExperimentConfig, which: Figure) -> Result<PathBuf> {
    config.validate()?;
    let table = config.presentation.table()?;
    let q = config.device.depolarizing_strength;
    let dir = config.output_dir.join("figures");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}.csv", which.name()));
    match which {
        Figure::ObjectiveCurve => {
            let rows = figure_grid()
                .into_iter()
                .map(|theta| {
                    let t = true_values(theta, q, &table)?;
                    let rotated = unitary_channel(&(gates::z_rotation(theta) * gates::phase()))?;
                    let ideal_inverse = unitary_channel(&gates::phase().adjoint())?;
                    Ok(ObjectiveRow {
                        theta,
                        f: t.f,
                        agf_target: t.agf_target,
                        agf_target_noiseless: agf(&compose(&rotated, &ideal_inverse)?)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_rows(&path, &rows)?;
        }
        Figure::RbParamsCurve => {
            let rows = figure_grid()
                .into_iter()
                .map(|theta| {
                    let device = DeviceModel::over_rotation(theta, q, &table)?;
                    let y = true_rb_params(&device, &table, true)?;
                    Ok(RbParamsRow { theta, p: y.p, a: y.a, b: y.b })
                })
                .collect::<Result<Vec<_>>>()?;
            write_rows(&path, &rows)?;
        }
        Figure::SurvivalDecay => write_rows(&path, &survival_decay(config, &table)?)?,
        Figure::TuningTrace => {
            let (outcome, _) = tune_config(config)?;
            let rows = outcome
                .trace
                .records
                .iter()
                .map(|r| {
                    let t = true_values(r.theta_next[0], q, &table)?;
                    Ok(TraceRow {
                        iteration: r.iteration,
                        theta: r.theta_next[0],
                        f_hat: r.f_hat_next,
                        infidelity_lo: r.infidelity_lo,
                        infidelity_hi: r.infidelity_hi,
                        bits: r.bits,
                        true_f: t.f,
                        true_agf_target: t.agf_target,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_rows(&path, &rows)?;
        }
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_names_round_trip() {
        for f in Figure::ALL {
            assert_eq!(f.name().parse::<Figure>().unwrap(), f);
        }
        assert!(matches!("fig-9".parse::<Figure>(), Err(Error::UnknownFigure(_))));
    }

    #[test]
    fn true_values_at_optimum() {
        let table = GroupTable::clifford();
        let t = true_values(0.0, 0.0, &table).unwrap();
        assert!((t.f - 1.0).abs() < 1e-12);
        assert!((t.agf_target - 1.0).abs() < 1e-12);
        let noisy = true_values(0.35, 0.005, &table).unwrap();
        assert!(noisy.agf_target > 0.91 && noisy.agf_target < 0.93);
    }
}
