//! Simulated single-qubit device and interleaved randomized benchmarking.
//!
//! The device implements `S(θ) = e^{-iθZ} S` and `H`, each followed by a
//! depolarizing channel of the same strength. Group elements are compiled
//! through their canonical generator words, so an element with a long word
//! accumulates more noise than a short one.

use rand::Rng;
use serde::Serialize;

use crate::channels::{
    agf, compose, depolarizing_channel, gates, unitary_channel, CMatrix, DensityOperator,
    MeasurementEffect, Superoperator,
};
use crate::clifford::{GroupTable, TARGET};
use crate::error::{Error, Result};
use crate::rng::NamedStream;
use crate::smc::RbParams;

/// Sequence lengths cycled through while collecting data at one control point.
pub const LENGTH_LADDER: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

/// Noisy generators plus state preparation and measurement.
#[derive(Debug, Clone)]
pub struct DeviceModel {
    theta: f64,
    depolarizing_strength: f64,
    noisy_target: Superoperator,
    noisy_h: Superoperator,
    rho: DensityOperator,
    effect: MeasurementEffect,
    /// `Ũ` for every group element, indexed by element id.
    compiled: Vec<Superoperator>,
}

impl DeviceModel {
    /// Over-rotated phase gate with depolarizing noise on both generators,
    /// `ρ = E = |0⟩⟨0|`.
    pub fn over_rotation(theta: f64, depolarizing_strength: f64, table: &GroupTable) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::Validation(format!("theta must be finite, got {theta}")));
        }
        let dep = depolarizing_channel(depolarizing_strength, 2)?;
        let s_theta = gates::z_rotation(theta) * gates::phase();
        let noisy_target = compose(&dep, &unitary_channel(&s_theta)?)?;
        let noisy_h = compose(&dep, &unitary_channel(&gates::hadamard())?)?;
        let rho = DensityOperator::basis(2, 0)?;
        let effect = MeasurementEffect::projector(2, 0)?;
        Self::with_generators(theta, depolarizing_strength, noisy_target, noisy_h, rho, effect, table)
    }

    pub fn with_generators(
        theta: f64,
        depolarizing_strength: f64,
        noisy_target: Superoperator,
        noisy_h: Superoperator,
        rho: DensityOperator,
        effect: MeasurementEffect,
        table: &GroupTable,
    ) -> Result<Self> {
        if table.generators().len() != 2 {
            return Err(Error::Validation("device expects the two-generator group ⟨S, H⟩".into()));
        }
        let d = rho.dim();
        if noisy_target.dim() != d || noisy_h.dim() != d || effect.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: noisy_target.dim() });
        }
        let generators = [&noisy_target, &noisy_h];
        let compiled = table
            .elements()
            .iter()
            .map(|e| {
                e.word.indices().iter().try_fold(Superoperator::identity(d), |acc, &g| {
                    compose(generators[g as usize], &acc)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            theta,
            depolarizing_strength,
            noisy_target,
            noisy_h,
            rho,
            effect,
            compiled,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn depolarizing_strength(&self) -> f64 {
        self.depolarizing_strength
    }

    pub fn noisy_target(&self) -> &Superoperator {
        &self.noisy_target
    }

    pub fn noisy_h(&self) -> &Superoperator {
        &self.noisy_h
    }

    pub fn rho(&self) -> &DensityOperator {
        &self.rho
    }

    pub fn effect(&self) -> &MeasurementEffect {
        &self.effect
    }

    /// Noisy implementation `Ũ` of a group element.
    pub fn compiled(&self, id: usize) -> Result<&Superoperator> {
        self.compiled.get(id).ok_or(Error::OutOfRange { index: id, order: self.compiled.len() })
    }

    /// Discrepancy channel of the target, `Λ_T = S̃ (S† •)`.
    pub fn target_discrepancy(&self) -> Result<Superoperator> {
        compose(&self.noisy_target, &unitary_channel(&gates::phase().adjoint())?)
    }
}

/// One random benchmarking sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RbSequence {
    pub length: usize,
    pub element_ids: Vec<usize>,
    pub interleaved: bool,
    pub inversion_id: usize,
}

/// A single measurement outcome together with its simulation ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotRecord {
    pub sequence: RbSequence,
    pub outcome: bool,
    /// Exact survival probability; never shown to the inference layer.
    pub true_probability: f64,
}

fn target_id(table: &GroupTable) -> Result<usize> {
    table
        .find_word(&[TARGET])
        .ok_or_else(|| Error::Validation("target generator is not a group element".into()))
}

/// Id of the inversion element for a sequence of elements, optionally with
/// the target interleaved after each one.
pub fn inversion_for(table: &GroupTable, element_ids: &[usize], interleaved: bool) -> Result<usize> {
    let target = target_id(table)?;
    let mut acc = table.identity_id();
    for &id in element_ids {
        acc = table.product(id, acc)?;
        if interleaved {
            acc = table.product(target, acc)?;
        }
    }
    table.invert(acc)
}

/// Samples `length` i.i.d. uniform elements and the matching inversion.
pub fn sample_sequence<R: Rng + ?Sized>(
    table: &GroupTable,
    length: usize,
    interleaved: bool,
    rng: &mut R,
) -> Result<RbSequence> {
    if length == 0 {
        return Err(Error::Validation("sequence length must be at least 1".into()));
    }
    let element_ids: Vec<usize> = (0..length).map(|_| rng.random_range(0..table.order())).collect();
    let inversion_id = inversion_for(table, &element_ids, interleaved)?;
    Ok(RbSequence { length, element_ids, interleaved, inversion_id })
}

/// Exact probability of measuring `E` after running the sequence on the device.
pub fn survival_probability(device: &DeviceModel, seq: &RbSequence) -> Result<f64> {
    let mut state: CMatrix = device.rho.matrix().clone();
    for &id in &seq.element_ids {
        state = device.compiled(id)?.apply_operator(&state);
        if seq.interleaved {
            state = device.noisy_target.apply_operator(&state);
        }
    }
    state = device.compiled(seq.inversion_id)?.apply_operator(&state);
    Ok(device.effect.expectation(&state).clamp(0.0, 1.0))
}

/// Draws one Bernoulli outcome with the sequence's survival probability.
pub fn run_shot<R: Rng + ?Sized>(device: &DeviceModel, seq: &RbSequence, rng: &mut R) -> Result<ShotRecord> {
    let p = survival_probability(device, seq)?;
    let u: f64 = rng.random();
    Ok(ShotRecord { sequence: seq.clone(), outcome: u < p, true_probability: p })
}

/// Reference channel `Λ_ref = (1/|G|) Σ_U Ũ (U† •)`.
pub fn reference_channel(device: &DeviceModel, table: &GroupTable) -> Result<Superoperator> {
    let discrepancies = table
        .elements()
        .iter()
        .map(|e| compose(device.compiled(e.id)?, &unitary_channel(&e.unitary.adjoint())?))
        .collect::<Result<Vec<_>>>()?;
    let w = 1.0 / discrepancies.len() as f64;
    let terms: Vec<(f64, &Superoperator)> = discrepancies.iter().map(|s| (w, s)).collect();
    Superoperator::convex_combination(&terms)
}

/// Exact `(p, A, B)` of the device. With `interleaved`, `p` is the decay of
/// `Λ_T Λ_ref`; otherwise of `Λ_ref` alone.
pub fn true_rb_params(device: &DeviceModel, table: &GroupTable, interleaved: bool) -> Result<RbParams> {
    let reference = reference_channel(device, table)?;
    let d = device.rho.dim() as f64;
    let f = if interleaved {
        agf(&compose(&device.target_discrepancy()?, &reference)?)?
    } else {
        agf(&reference)?
    };
    let p = (d * f - 1.0) / (d - 1.0);
    let mixed = DensityOperator::maximally_mixed(device.rho.dim());
    let a = device
        .effect
        .expectation(&reference.apply_operator(&(device.rho.matrix() - mixed.matrix())));
    let b = device.effect.expectation(&reference.apply_operator(mixed.matrix()));
    Ok(RbParams { p, a, b })
}

/// One row of the shot log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShotLogRow {
    pub seq_length: usize,
    pub interleaved: bool,
    pub outcome: u8,
    pub true_probability: f64,
    pub rng_stream: String,
    pub rng_counter: u128,
}

/// Runs a shot with a named stream and returns the log row alongside it.
pub fn run_logged_shot(
    device: &DeviceModel,
    seq: &RbSequence,
    stream: &mut NamedStream,
) -> Result<(ShotRecord, ShotLogRow)> {
    let counter = stream.counter();
    let shot = run_shot(device, seq, stream.rng())?;
    let row = ShotLogRow {
        seq_length: seq.length,
        interleaved: seq.interleaved,
        outcome: shot.outcome as u8,
        true_probability: shot.true_probability,
        rng_stream: stream.name().to_owned(),
        rng_counter: counter,
    };
    Ok((shot, row))
}

pub fn write_shot_log<W: std::io::Write>(rows: &[ShotLogRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
