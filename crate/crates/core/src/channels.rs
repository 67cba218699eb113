//! Density operators, superoperators and the handful of metrics the tuner needs.
//!
//! Superoperators act on column-stacked operators: `vec(X)[i + d*j] = X[(i, j)]`,
//! which matches nalgebra's column-major storage. Under this convention
//! `vec(U X U†) = (conj(U) ⊗ U) vec(X)`, composition is a matrix product and the
//! process fidelity with the identity is `Tr(S) / d²`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Tolerance for hermiticity, unit trace and positivity of states and effects.
pub const STATE_TOL: f64 = 1e-10;
/// Tolerance for trace preservation and Choi positivity of channels.
pub const CHANNEL_TOL: f64 = 1e-9;
/// Tolerance for unitarity of gate matrices.
pub const UNITARY_TOL: f64 = 1e-10;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// Fixed single-qubit gate matrices.
pub mod gates {
    use super::{CMatrix, Complex64, ONE, ZERO};
    use std::f64::consts::FRAC_1_SQRT_2;

    pub fn identity(d: usize) -> CMatrix {
        CMatrix::identity(d, d)
    }

    pub fn hadamard() -> CMatrix {
        let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
        CMatrix::from_row_slice(2, 2, &[h, h, h, -h])
    }

    /// Phase gate `diag(1, i)`.
    pub fn phase() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, Complex64::i()])
    }

    pub fn pauli_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    pub fn pauli_y() -> CMatrix {
        let i = Complex64::i();
        CMatrix::from_row_slice(2, 2, &[ZERO, -i, i, ZERO])
    }

    pub fn pauli_z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    /// `exp(-i θ σ_z) = diag(e^{-iθ}, e^{iθ})`.
    pub fn z_rotation(theta: f64) -> CMatrix {
        CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::from_polar(1.0, -theta),
                ZERO,
                ZERO,
                Complex64::from_polar(1.0, theta),
            ],
        )
    }
}

fn is_hermitian(m: &CMatrix, tol: f64) -> bool {
    m.is_square() && (m - m.adjoint()).iter().all(|z| z.norm() <= tol)
}

fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    // Symmetrize first so round-off in the anti-hermitian part cannot leak in.
    let h = (m + m.adjoint()).scale(0.5);
    h.symmetric_eigenvalues().iter().copied().collect()
}

fn vec_of(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

fn unvec(v: &CVector, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

/// A valid quantum state: hermitian, unit trace, positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
}

impl DensityOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Validation(format!(
                "density operator must be a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if !is_hermitian(&matrix, STATE_TOL) {
            return Err(Error::Validation("density operator is not hermitian".into()));
        }
        let tr = matrix.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::Validation(format!("density operator trace is {tr}, expected 1")));
        }
        let min = hermitian_eigenvalues(&matrix).into_iter().fold(f64::INFINITY, f64::min);
        if min < -STATE_TOL {
            return Err(Error::Validation(format!(
                "density operator has negative eigenvalue {min}"
            )));
        }
        Ok(Self { matrix })
    }

    /// Skips validation. Used for outputs of channels already known to be CPTP.
    pub(crate) fn new_unchecked(matrix: CMatrix) -> Self {
        Self { matrix }
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) state vector.
    pub fn pure(psi: &CVector) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::Validation("zero state vector".into()));
        }
        let psi = psi.unscale(norm);
        Ok(Self { matrix: &psi * psi.adjoint() })
    }

    /// Computational basis projector `|k⟩⟨k|`.
    pub fn basis(d: usize, k: usize) -> Result<Self> {
        if k >= d {
            return Err(Error::OutOfRange { index: k, order: d });
        }
        let mut m = CMatrix::zeros(d, d);
        m[(k, k)] = ONE;
        Ok(Self { matrix: m })
    }

    /// `1/d`.
    pub fn maximally_mixed(d: usize) -> Self {
        Self { matrix: CMatrix::identity(d, d).unscale(d as f64) }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix).into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Measurement effect `0 ≤ E ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEffect {
    matrix: CMatrix,
}

impl MeasurementEffect {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !is_hermitian(&matrix, STATE_TOL) {
            return Err(Error::Validation("measurement effect is not hermitian".into()));
        }
        let eig = hermitian_eigenvalues(&matrix);
        if eig.iter().any(|&e| !(-STATE_TOL..=1.0 + STATE_TOL).contains(&e)) {
            return Err(Error::Validation(format!(
                "measurement effect eigenvalues {eig:?} outside [0, 1]"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn projector(d: usize, k: usize) -> Result<Self> {
        Ok(Self { matrix: DensityOperator::basis(d, k)?.matrix })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `Re Tr(E X)`.
    pub fn expectation(&self, operator: &CMatrix) -> f64 {
        (&self.matrix * operator).trace().re
    }
}

/// A linear map on `d×d` operators stored as a `d²×d²` column-stacking matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    matrix: CMatrix,
    dim: usize,
}

impl Superoperator {
    pub fn identity(d: usize) -> Self {
        Self { matrix: CMatrix::identity(d * d, d * d), dim: d }
    }

    /// Wraps a raw `d²×d²` matrix. No CPTP check is made; see
    /// [`Superoperator::is_trace_preserving`] and [`Superoperator::choi_min_eigenvalue`].
    pub fn from_matrix(matrix: CMatrix, d: usize) -> Result<Self> {
        if matrix.nrows() != d * d || matrix.ncols() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: matrix.nrows() });
        }
        Ok(Self { matrix, dim: d })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Applies the map to an arbitrary operator.
    pub fn apply_operator(&self, x: &CMatrix) -> CMatrix {
        unvec(&(&self.matrix * vec_of(x)), self.dim)
    }

    /// Applies the map to a state. The output is only guaranteed to be a
    /// valid state when the map is CPTP.
    pub fn apply(&self, rho: &DensityOperator) -> Result<DensityOperator> {
        if rho.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: rho.dim() });
        }
        Ok(DensityOperator::new_unchecked(self.apply_operator(rho.matrix())))
    }

    /// `⟨vec(1)| S = ⟨vec(1)|` to within `tol`.
    pub fn is_trace_preserving(&self, tol: f64) -> bool {
        let d = self.dim;
        (0..d * d).all(|col| {
            let tr: Complex64 = (0..d).map(|i| self.matrix[(i + d * i, col)]).sum();
            let expected = if col % (d + 1) == 0 { 1.0 } else { 0.0 };
            (tr.re - expected).abs() <= tol && tr.im.abs() <= tol
        })
    }

    /// Choi matrix `Σ_ij |i⟩⟨j| ⊗ S(|i⟩⟨j|)`.
    pub fn choi(&self) -> CMatrix {
        let d = self.dim;
        let mut choi = CMatrix::zeros(d * d, d * d);
        for i in 0..d {
            for j in 0..d {
                // vec(|i⟩⟨j|) is the unit vector at i + d*j, so S(|i⟩⟨j|) is that column.
                let block = unvec(&self.matrix.column(i + d * j).into_owned(), d);
                choi.view_mut((i * d, j * d), (d, d)).copy_from(&block);
            }
        }
        choi
    }

    pub fn choi_min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.choi()).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn is_cptp(&self) -> bool {
        self.is_trace_preserving(CHANNEL_TOL) && self.choi_min_eigenvalue() >= -CHANNEL_TOL
    }

    /// `Σ_k w_k S_k` for nonnegative weights summing to one.
    pub fn convex_combination(terms: &[(f64, &Superoperator)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::Validation("empty convex combination".into()))?;
        let d = first.dim;
        let total: f64 = terms.iter().map(|(w, _)| w).sum();
        if terms.iter().any(|(w, _)| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::Validation(format!(
                "convex weights must be nonnegative and sum to 1, got sum {total}"
            )));
        }
        let mut acc = CMatrix::zeros(d * d, d * d);
        for (w, s) in terms {
            if s.dim != d {
                return Err(Error::DimensionMismatch { expected: d, got: s.dim });
            }
            acc += s.matrix.scale(*w);
        }
        Ok(Self { matrix: acc, dim: d })
    }
}

/// `ρ ↦ U ρ U†`.
pub fn unitary_channel(u: &CMatrix) -> Result<Superoperator> {
    if !u.is_square() || u.nrows() == 0 {
        return Err(Error::Validation("unitary must be a non-empty square matrix".into()));
    }
    let d = u.nrows();
    let defect = u.adjoint() * u - CMatrix::identity(d, d);
    if defect.iter().any(|z| z.norm() > UNITARY_TOL) {
        return Err(Error::Validation("matrix is not unitary".into()));
    }
    Ok(Superoperator { matrix: u.conjugate().kronecker(u), dim: d })
}

/// `ρ ↦ (1 - s) ρ + s · 1/d`.
pub fn depolarizing_channel(strength: f64, d: usize) -> Result<Superoperator> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Validation(format!(
            "depolarizing strength must be in [0, 1], got {strength}"
        )));
    }
    if d == 0 {
        return Err(Error::Validation("dimension must be positive".into()));
    }
    let mixed = vec_of(&CMatrix::identity(d, d).unscale(d as f64));
    let trace_row = vec_of(&CMatrix::identity(d, d)).transpose();
    let matrix = CMatrix::identity(d * d, d * d).scale(1.0 - strength)
        + (mixed * trace_row).scale(strength);
    Ok(Superoperator { matrix, dim: d })
}

/// `a ∘ b`, i.e. `ρ ↦ a[b[ρ]]`.
pub fn compose(a: &Superoperator, b: &Superoperator) -> Result<Superoperator> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, got: b.dim });
    }
    Ok(Superoperator { matrix: &a.matrix * &b.matrix, dim: a.dim })
}

/// Trace norm of `ρ - σ` (sum of singular values), in `[0, 2]`.
pub fn trace_distance(rho: &DensityOperator, sigma: &DensityOperator) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), got: sigma.dim() });
    }
    Ok(trace_norm(&(rho.matrix() - sigma.matrix())))
}

pub fn trace_norm(x: &CMatrix) -> f64 {
    x.clone().singular_values().iter().sum()
}

/// Average gate fidelity through the process fidelity,
/// `AGF = (d F_pro + 1) / (d + 1)` with `F_pro = Tr(S) / d²`.
pub fn agf(channel: &Superoperator) -> Result<f64> {
    if !channel.is_trace_preserving(CHANNEL_TOL) {
        return Err(Error::Validation("average gate fidelity requires a trace-preserving map".into()));
    }
    let d = channel.dim as f64;
    let process_fidelity = channel.matrix.trace().re / (d * d);
    Ok((d * process_fidelity + 1.0) / (d + 1.0))
}

/// Haar-random pure state vector.
pub fn haar_random_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(d, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let n = v.norm();
    v.unscale(n)
}

/// Haar-random unitary via QR of a Ginibre matrix with the phase fix on `R`'s diagonal.
pub fn haar_random_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> CMatrix {
    let g = CMatrix::from_fn(d, d, |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for k in 0..d {
        let diag = r[(k, k)];
        let phase = if diag.norm() > 0.0 { diag / diag.norm() } else { ONE };
        let mut col = q.column_mut(k);
        col *= phase;
    }
    q
}

/// Largest trace distance between `a[ψ]` and `b[ψ]` over `samples` Haar-random
/// pure states. A lower bound on the supremum over all states.
pub fn channel_trace_distance_sup(
    a: &Superoperator,
    b: &Superoperator,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch { expected: a.dim, got: b.dim });
    }
    if samples == 0 {
        return Err(Error::Validation("samples must be at least 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    for _ in 0..samples {
        let psi = haar_random_state(a.dim, &mut rng);
        let rho = DensityOperator::pure(&psi)?;
        let diff = a.apply_operator(rho.matrix()) - b.apply_operator(rho.matrix());
        best = best.max(trace_norm(&diff));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn plus() -> DensityOperator {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        DensityOperator::pure(&CVector::from_vec(vec![
            Complex64::new(s, 0.0),
            Complex64::new(s, 0.0),
        ]))
        .unwrap()
    }

    fn minus() -> DensityOperator {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        DensityOperator::pure(&CVector::from_vec(vec![
            Complex64::new(s, 0.0),
            Complex64::new(-s, 0.0),
        ]))
        .unwrap()
    }

    #[test]
    fn identity_unitary_gives_identity_superoperator() {
        let s = unitary_channel(&gates::identity(2)).unwrap();
        assert_eq!(s, Superoperator::identity(2));
    }

    #[test]
    fn pauli_z_flips_plus_to_minus() {
        let z = unitary_channel(&gates::pauli_z()).unwrap();
        let out = z.apply(&plus()).unwrap();
        assert!(max_abs_diff(out.matrix(), minus().matrix()) < 1e-12);
    }

    #[test]
    fn hadamard_maps_zero_to_plus() {
        // H|0⟩⟨0|H = [[1/2, 1/2], [1/2, 1/2]]
        let h = unitary_channel(&gates::hadamard()).unwrap();
        let out = h.apply(&DensityOperator::basis(2, 0).unwrap()).unwrap();
        let half = Complex64::new(0.5, 0.0);
        let expected = CMatrix::from_element(2, 2, half);
        assert!(max_abs_diff(out.matrix(), &expected) < 1e-12);
    }

    #[test]
    fn unitary_channel_matches_conjugation() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = haar_random_unitary(3, &mut rng);
            let rho = DensityOperator::pure(&haar_random_state(3, &mut rng)).unwrap();
            let direct = &u * rho.matrix() * u.adjoint();
            let via = unitary_channel(&u).unwrap().apply(&rho).unwrap();
            assert!(max_abs_diff(&direct, via.matrix()) < 1e-12);
        }
    }

    #[test]
    fn non_unitary_rejected() {
        let m = CMatrix::from_element(2, 2, ONE);
        assert!(matches!(unitary_channel(&m), Err(Error::Validation(_))));
    }

    #[test]
    fn depolarizing_endpoints() {
        assert!(max_abs_diff(
            depolarizing_channel(0.0, 2).unwrap().matrix(),
            Superoperator::identity(2).matrix()
        ) < 1e-15);
        let full = depolarizing_channel(1.0, 2).unwrap();
        let out = full.apply(&plus()).unwrap();
        assert!(max_abs_diff(out.matrix(), DensityOperator::maximally_mixed(2).matrix()) < 1e-15);
    }

    #[test]
    fn depolarizing_agf_is_one_minus_half_strength() {
        let s = depolarizing_channel(0.005, 2).unwrap();
        assert!((agf(&s).unwrap() - 0.9975).abs() < 1e-12);
    }

    #[test]
    fn depolarizing_out_of_range_rejected() {
        assert!(depolarizing_channel(-0.1, 2).is_err());
        assert!(depolarizing_channel(1.5, 2).is_err());
    }

    #[test]
    fn compose_identities_and_hadamard_squared() {
        let dep = depolarizing_channel(0.3, 2).unwrap();
        assert_eq!(compose(&Superoperator::identity(2), &dep).unwrap(), dep);
        let h = unitary_channel(&gates::hadamard()).unwrap();
        let hh = compose(&h, &h).unwrap();
        assert!(max_abs_diff(hh.matrix(), Superoperator::identity(2).matrix()) < 1e-12);
    }

    #[test]
    fn compose_depolarizing_multiplies_contractions() {
        let (p1, p2) = (0.1, 0.25);
        let c = compose(
            &depolarizing_channel(p1, 2).unwrap(),
            &depolarizing_channel(p2, 2).unwrap(),
        )
        .unwrap();
        let expected = depolarizing_channel(1.0 - (1.0 - p1) * (1.0 - p2), 2).unwrap();
        assert!(max_abs_diff(c.matrix(), expected.matrix()) < 1e-12);
    }

    #[test]
    fn compose_dimension_mismatch() {
        let a = Superoperator::identity(2);
        let b = Superoperator::identity(3);
        assert!(matches!(compose(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn trace_distance_examples() {
        let zero = DensityOperator::basis(2, 0).unwrap();
        let one = DensityOperator::basis(2, 1).unwrap();
        let mixed = DensityOperator::maximally_mixed(2);
        assert!(trace_distance(&zero, &zero).unwrap().abs() < 1e-15);
        assert!((trace_distance(&zero, &one).unwrap() - 2.0).abs() < 1e-12);
        assert!((trace_distance(&zero, &mixed).unwrap() - 1.0).abs() < 1e-12);
        assert!(trace_distance(&zero, &DensityOperator::maximally_mixed(3)).is_err());
    }

    #[test]
    fn agf_of_identity_and_unitaries() {
        assert!((agf(&Superoperator::identity(2)).unwrap() - 1.0).abs() < 1e-15);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..100 {
            let u = haar_random_unitary(2, &mut rng);
            let tr = u.trace().norm_sqr();
            let expected = (tr + 2.0) / 6.0;
            assert!((agf(&unitary_channel(&u).unwrap()).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn agf_rejects_non_trace_preserving() {
        let s = Superoperator::from_matrix(CMatrix::identity(4, 4).scale(0.5), 2).unwrap();
        assert!(agf(&s).is_err());
    }

    #[test]
    fn density_operator_validation() {
        assert!(DensityOperator::new(CMatrix::identity(2, 2)).is_err());
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = Complex64::new(1.5, 0.0);
        m[(1, 1)] = Complex64::new(-0.5, 0.0);
        assert!(DensityOperator::new(m).is_err());
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = ONE;
        m[(0, 1)] = Complex64::new(0.1, 0.0);
        assert!(DensityOperator::new(m).is_err());
    }

    #[test]
    fn effect_validation() {
        assert!(MeasurementEffect::new(CMatrix::identity(2, 2).scale(2.0)).is_err());
        assert!(MeasurementEffect::projector(2, 1).is_ok());
    }

    #[test]
    fn choi_of_unitary_is_rank_one() {
        let c = unitary_channel(&gates::hadamard()).unwrap();
        let eig = hermitian_eigenvalues(&c.choi());
        let big = eig.iter().filter(|&&e| e > 1e-9).count();
        assert_eq!(big, 1);
        assert!(c.is_cptp());
    }

    #[test]
    fn sup_distance_zero_for_equal_channels() {
        let a = depolarizing_channel(0.2, 2).unwrap();
        assert_eq!(channel_trace_distance_sup(&a, &a, 50, 1).unwrap(), 0.0);
    }

    #[test]
    fn sup_distance_respects_overrotation_bound() {
        let a = unitary_channel(&gates::z_rotation(0.0)).unwrap();
        let b = unitary_channel(&gates::z_rotation(0.01)).unwrap();
        let v = channel_trace_distance_sup(&a, &b, 1000, 5).unwrap();
        assert!(v > 0.0 && v <= 0.04, "{v}");
    }
}
