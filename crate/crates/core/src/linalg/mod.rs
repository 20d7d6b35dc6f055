//! Exact small-dimension quantum state and measurement calculus.
//!
//! Everything here is dense complex linear algebra on matrices of dimension at
//! most [`MAX_DIM`]. These routines serve as the brute-force oracle that the
//! analytic entropy bounds are checked against, so they favour directness over
//! speed.
//!
//! Composite systems use the row-major convention: basis state `|a>|b>` of
//! `A ⊗ B` has index `a * dim_b + b`.

mod jordan;
pub mod random;

pub use jordan::{
    commutator_defect, good_subspace_projector, jordan_decompose, square_overlap, BlockKind,
    JordanBlock, JordanBlocks,
};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest Hilbert-space dimension handled by the oracle.
pub const MAX_DIM: usize = 64;
/// Tolerance for Hermiticity, positivity, idempotence and completeness checks.
pub const VALIDATION_TOL: f64 = 1e-10;
/// Eigenvalues below this are dropped from entropy sums.
pub const EIGEN_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("dimension {0} exceeds the oracle cap of {MAX_DIM}")]
    TooLarge(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not Hermitian (deviation {0:e})")]
    NotHermitian(f64),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("trace {0} exceeds 1")]
    TraceTooLarge(f64),
    #[error("operator is not a projector (|P^2 - P| = {0:e})")]
    NotProjector(f64),
    #[error("POVM elements do not sum to the identity (deviation {0:e})")]
    IncompletePovm(f64),
    #[error("POVM must have {expected} outcomes, got {got}")]
    OutcomeCount { expected: usize, got: usize },
    #[error("square-overlap threshold {0} outside (1/2, 1]")]
    OverlapThreshold(f64),
    #[error("block index {index} out of range ({count} blocks)")]
    BlockIndex { index: usize, count: usize },
    #[error("state has zero weight on the required subspace")]
    ZeroWeight,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Which factor of a bipartite system an operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    A,
    B,
}

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Largest entrywise deviation from Hermiticity.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// `(M + M†) / 2`.
pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(hermitize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    hermitian_eigen(m).0
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn real_trace(m: &CMatrix) -> f64 {
    m.trace().re
}

/// `-Σ λ log2 λ` over the spectrum of a (possibly unnormalised) PSD matrix.
pub fn spectral_entropy(m: &CMatrix) -> Result<f64> {
    let values = hermitian_eigenvalues(m);
    if let Some(&min) = values.first() {
        if min < -VALIDATION_TOL {
            return Err(LinalgError::NotPositive(min));
        }
    }
    Ok(values
        .into_iter()
        .filter(|&l| l > EIGEN_CUTOFF)
        .map(|l| -l * l.log2())
        .sum())
}

fn check_square(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare(m.nrows(), m.ncols()));
    }
    if m.nrows() > MAX_DIM {
        return Err(LinalgError::TooLarge(m.nrows()));
    }
    Ok(m.nrows())
}

/// A positive semidefinite operator of trace at most one.
///
/// Sub-normalised states are allowed: the per-outcome conditional states of a
/// device carry their probability as trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
}

impl DensityMatrix {
    pub fn new(mat: CMatrix) -> Result<Self> {
        check_square(&mat)?;
        let herm = hermiticity_defect(&mat);
        if herm > VALIDATION_TOL {
            return Err(LinalgError::NotHermitian(herm));
        }
        let mat = hermitize(&mat);
        let min = hermitian_eigenvalues(&mat).first().copied().unwrap_or(0.0);
        if min < -VALIDATION_TOL {
            return Err(LinalgError::NotPositive(min));
        }
        let tr = real_trace(&mat);
        if tr > 1.0 + VALIDATION_TOL {
            return Err(LinalgError::TraceTooLarge(tr));
        }
        Ok(Self { mat })
    }

    /// `|ψ><ψ|`; the squared norm of `psi` becomes the trace.
    pub fn from_pure(psi: &CVector) -> Result<Self> {
        Self::new(psi * psi.adjoint())
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        Self::new(CMatrix::identity(dim, dim) * c(1.0 / dim as f64))
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        real_trace(&self.mat)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.mat)
    }

    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        if tr <= EIGEN_CUTOFF {
            return Err(LinalgError::ZeroWeight);
        }
        Ok(Self { mat: &self.mat * c(1.0 / tr) })
    }

    /// `tr(O ρ)` for a Hermitian observable.
    pub fn expectation(&self, op: &CMatrix) -> f64 {
        (op * &self.mat).trace().re
    }

    /// `K ρ K†`, unvalidated beyond the usual density checks.
    pub fn conjugate(&self, k: &CMatrix) -> Result<Self> {
        Self::new(k * &self.mat * k.adjoint())
    }

    pub fn tensor(&self, other: &DensityMatrix) -> Result<Self> {
        Self::new(kron(&self.mat, &other.mat))
    }
}

/// Hermitian idempotent operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    mat: CMatrix,
}

impl Projector {
    pub fn new(mat: CMatrix) -> Result<Self> {
        check_square(&mat)?;
        let herm = hermiticity_defect(&mat);
        if herm > VALIDATION_TOL {
            return Err(LinalgError::NotHermitian(herm));
        }
        let mat = hermitize(&mat);
        let idem = (&mat * &mat - &mat).camax();
        if idem > VALIDATION_TOL {
            return Err(LinalgError::NotProjector(idem));
        }
        Ok(Self { mat })
    }

    /// Projector onto the span of the (orthonormal) columns of `basis`.
    pub fn from_orthonormal_columns(basis: &CMatrix) -> Result<Self> {
        Self::new(basis * basis.adjoint())
    }

    pub fn identity(dim: usize) -> Self {
        Self { mat: CMatrix::identity(dim, dim) }
    }

    pub fn zero(dim: usize) -> Self {
        Self { mat: CMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn rank(&self) -> usize {
        real_trace(&self.mat).round() as usize
    }

    pub fn complement(&self) -> Self {
        let d = self.dim();
        Self { mat: CMatrix::identity(d, d) - &self.mat }
    }

    /// Orthonormal basis of the range, as columns.
    pub fn range_basis(&self) -> CMatrix {
        let (values, vectors) = hermitian_eigen(&self.mat);
        let cols: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.5).collect();
        CMatrix::from_fn(self.dim(), cols.len(), |r, k| vectors[(r, cols[k])])
    }
}

/// Ordered list of PSD effects summing to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    elements: Vec<CMatrix>,
}

impl Povm {
    pub fn new(elements: Vec<CMatrix>) -> Result<Self> {
        let first = elements.first().ok_or(LinalgError::OutcomeCount { expected: 1, got: 0 })?;
        let d = check_square(first)?;
        let mut sum = CMatrix::zeros(d, d);
        let mut cleaned = Vec::with_capacity(elements.len());
        for e in elements {
            let ed = check_square(&e)?;
            if ed != d {
                return Err(LinalgError::DimensionMismatch { expected: d, got: ed });
            }
            let herm = hermiticity_defect(&e);
            if herm > VALIDATION_TOL {
                return Err(LinalgError::NotHermitian(herm));
            }
            let e = hermitize(&e);
            let min = hermitian_eigenvalues(&e).first().copied().unwrap_or(0.0);
            if min < -VALIDATION_TOL {
                return Err(LinalgError::NotPositive(min));
            }
            sum += &e;
            cleaned.push(e);
        }
        let dev = (sum - CMatrix::identity(d, d)).camax();
        if dev > VALIDATION_TOL {
            return Err(LinalgError::IncompletePovm(dev));
        }
        Ok(Self { elements: cleaned })
    }

    pub fn from_projectors(projectors: &[Projector]) -> Result<Self> {
        Self::new(projectors.iter().map(|p| p.matrix().clone()).collect())
    }

    /// Rank-one projective measurement in the standard basis.
    pub fn computational(dim: usize) -> Self {
        let elements = (0..dim)
            .map(|i| {
                let mut m = CMatrix::zeros(dim, dim);
                m[(i, i)] = c(1.0);
                m
            })
            .collect();
        Self { elements }
    }

    pub fn dim(&self) -> usize {
        self.elements[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elements
    }

    pub fn element(&self, k: usize) -> &CMatrix {
        &self.elements[k]
    }

    /// Born-rule outcome probabilities.
    pub fn probabilities(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        if rho.dim() != self.dim() {
            return Err(LinalgError::DimensionMismatch { expected: self.dim(), got: rho.dim() });
        }
        Ok(self.elements.iter().map(|e| rho.expectation(e)).collect())
    }
}

/// Marginal after tracing out `traced` from a state on `A ⊗ B`.
pub fn partial_trace(
    rho: &DensityMatrix,
    traced: Subsystem,
    dims: (usize, usize),
) -> Result<DensityMatrix> {
    Ok(DensityMatrix { mat: partial_trace_matrix(rho.matrix(), traced, dims)? })
}

pub(crate) fn partial_trace_matrix(
    m: &CMatrix,
    traced: Subsystem,
    (da, db): (usize, usize),
) -> Result<CMatrix> {
    if m.nrows() != da * db || m.ncols() != da * db {
        return Err(LinalgError::DimensionMismatch { expected: da * db, got: m.nrows() });
    }
    let out = match traced {
        Subsystem::B => CMatrix::from_fn(da, da, |a, a2| {
            (0..db).map(|b| m[(a * db + b, a2 * db + b)]).sum()
        }),
        Subsystem::A => CMatrix::from_fn(db, db, |b, b2| {
            (0..da).map(|a| m[(a * db + b, a * db + b2)]).sum()
        }),
    };
    Ok(hermitize(&out))
}

/// von Neumann entropy in bits.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    spectral_entropy(rho.matrix())
}

/// `H(A|B) = H(AB) - H(B)` for a state on `A ⊗ B`.
pub fn conditional_entropy(rho: &DensityMatrix, dims: (usize, usize)) -> Result<f64> {
    let rho_b = partial_trace(rho, Subsystem::A, dims)?;
    Ok(von_neumann_entropy(rho)? - von_neumann_entropy(&rho_b)?)
}

/// Trace distance `||ρ - σ||_1 / 2`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(LinalgError::DimensionMismatch { expected: rho.dim(), got: sigma.dim() });
    }
    let diff = rho.matrix() - sigma.matrix();
    Ok(0.5 * hermitian_eigenvalues(&diff).iter().map(|l| l.abs()).sum::<f64>())
}

/// Conditional entropy `H(X|E)` of the outcome `X` of `povm` applied to the
/// `D` factor of a state on `D ⊗ E`.
///
/// The post-measurement state is the classical-quantum state
/// `Σ_x |x><x| ⊗ tr_D[(F_x ⊗ 1) ρ]`; its entropy splits over the outcome blocks.
pub fn conditional_measurement_entropy(
    rho: &DensityMatrix,
    povm: &Povm,
    dims: (usize, usize),
) -> Result<f64> {
    let (dd, de) = dims;
    if povm.dim() != dd {
        return Err(LinalgError::DimensionMismatch { expected: dd, got: povm.dim() });
    }
    if rho.dim() != dd * de {
        return Err(LinalgError::DimensionMismatch { expected: dd * de, got: rho.dim() });
    }
    let m = rho.matrix();
    let mut joint = 0.0;
    let mut marginal = CMatrix::zeros(de, de);
    for effect in povm.elements() {
        let block = CMatrix::from_fn(de, de, |e, e2| {
            let mut acc = C64::new(0.0, 0.0);
            for d in 0..dd {
                for d2 in 0..dd {
                    let f = effect[(d2, d)];
                    if f != C64::new(0.0, 0.0) {
                        acc += f * m[(d * de + e, d2 * de + e2)];
                    }
                }
            }
            acc
        });
        let block = hermitize(&block);
        joint += spectral_entropy(&block)?;
        marginal += block;
    }
    Ok(joint - spectral_entropy(&marginal)?)
}

/// A purification together with the factor dimensions it lives on.
#[derive(Debug, Clone)]
pub struct Purification {
    pub vector: CVector,
    pub state: DensityMatrix,
    pub system_dim: usize,
    pub env_dim: usize,
}

/// Purify `ρ` onto `D ⊗ E` with `dim E = rank ρ` (at least one).
///
/// `|Φ> = Σ_i sqrt(λ_i) |v_i>|i>`; the trace of `ρ` is preserved, so
/// sub-normalised inputs give sub-normalised purifications.
pub fn purify(rho: &DensityMatrix) -> Result<Purification> {
    let d = rho.dim();
    let (values, vectors) = hermitian_eigen(rho.matrix());
    let kept: Vec<usize> = (0..d).rev().filter(|&i| values[i] > EIGEN_CUTOFF).collect();
    let env_dim = kept.len().max(1);
    if d * env_dim > MAX_DIM {
        return Err(LinalgError::TooLarge(d * env_dim));
    }
    let mut psi = CVector::zeros(d * env_dim);
    for (e, &i) in kept.iter().enumerate() {
        let amp = values[i].sqrt();
        for s in 0..d {
            psi[s * env_dim + e] = vectors[(s, i)] * amp;
        }
    }
    let state = DensityMatrix::from_pure(&psi)?;
    Ok(Purification { vector: psi, state, system_dim: d, env_dim })
}

/// `Σ_k F_k ρ F_k` for projective `F_k`; the dephased state of a measurement.
pub fn pinch(rho: &DensityMatrix, povm: &Povm) -> Result<DensityMatrix> {
    if povm.dim() != rho.dim() {
        return Err(LinalgError::DimensionMismatch { expected: rho.dim(), got: povm.dim() });
    }
    let d = rho.dim();
    let mut out = CMatrix::zeros(d, d);
    for f in povm.elements() {
        out += f * rho.matrix() * f;
    }
    DensityMatrix::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bell() -> DensityMatrix {
        let s = 1.0 / 2f64.sqrt();
        let psi = CVector::from_vec(vec![c(s), c(0.0), c(0.0), c(s)]);
        DensityMatrix::from_pure(&psi).unwrap()
    }

    fn diag(values: &[f64]) -> CMatrix {
        let n = values.len();
        CMatrix::from_fn(n, n, |i, j| if i == j { c(values[i]) } else { c(0.0) })
    }

    #[test]
    fn density_validation() {
        assert!(DensityMatrix::new(diag(&[0.5, 0.6])).is_err());
        assert!(matches!(DensityMatrix::new(diag(&[1.2, -0.2])), Err(LinalgError::NotPositive(_))));
        let mut m = diag(&[0.5, 0.5]);
        m[(0, 1)] = C64::new(0.0, 0.1);
        assert!(matches!(DensityMatrix::new(m), Err(LinalgError::NotHermitian(_))));
        assert!(DensityMatrix::new(diag(&[0.2, 0.1])).is_ok());
        assert!(matches!(DensityMatrix::new(CMatrix::zeros(65, 65)), Err(LinalgError::TooLarge(65))));
    }

    #[test]
    fn projector_validation() {
        assert!(Projector::new(diag(&[1.0, 0.0])).is_ok());
        assert!(matches!(Projector::new(diag(&[0.5, 0.0])), Err(LinalgError::NotProjector(_))));
        let p = Projector::new(diag(&[1.0, 0.0, 1.0])).unwrap();
        assert_eq!(p.rank(), 2);
        assert_eq!(p.complement().rank(), 1);
        assert_eq!(p.range_basis().ncols(), 2);
    }

    #[test]
    fn povm_validation() {
        assert!(Povm::new(vec![diag(&[1.0, 0.0]), diag(&[0.0, 0.9])]).is_err());
        assert!(Povm::new(vec![diag(&[0.5, 0.5]), diag(&[0.5, 0.5])]).is_ok());
        assert!(Povm::new(vec![diag(&[1.0, 0.0]), diag(&[0.0, 1.0, 0.0])]).is_err());
        assert_eq!(Povm::computational(3).len(), 3);
    }

    #[test]
    fn partial_trace_bell_and_product() {
        let rho_a = partial_trace(&bell(), Subsystem::B, (2, 2)).unwrap();
        assert!((rho_a.matrix() - diag(&[0.5, 0.5])).camax() < 1e-15);

        let a = DensityMatrix::new(diag(&[0.3, 0.7])).unwrap();
        let b = DensityMatrix::new(diag(&[0.25, 0.25, 0.5])).unwrap();
        let ab = a.tensor(&b).unwrap();
        let back = partial_trace(&ab, Subsystem::B, (2, 3)).unwrap();
        assert!((back.matrix() - a.matrix()).camax() < 1e-15);
        let back_b = partial_trace(&ab, Subsystem::A, (2, 3)).unwrap();
        assert!((back_b.matrix() - b.matrix()).camax() < 1e-15);
        assert!(partial_trace(&ab, Subsystem::A, (2, 2)).is_err());
    }

    #[test]
    fn partial_trace_matches_index_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let rho = random::random_density(4, 4, &mut rng);
            let m = rho.matrix();
            // nested-loop contraction over the second qubit
            let mut expect = CMatrix::zeros(2, 2);
            for a in 0..2 {
                for a2 in 0..2 {
                    for b in 0..2 {
                        expect[(a, a2)] += m[(2 * a + b, 2 * a2 + b)];
                    }
                }
            }
            let got = partial_trace(&rho, Subsystem::B, (2, 2)).unwrap();
            assert!((got.matrix() - expect).camax() <= 1e-12);
            assert_abs_diff_eq!(got.trace(), rho.trace(), epsilon = 1e-12);
        }
    }

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(von_neumann_entropy(&DensityMatrix::maximally_mixed(2).unwrap()).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(von_neumann_entropy(&bell()).unwrap(), 0.0, epsilon = 1e-12);
        let rho = DensityMatrix::new(diag(&[0.25, 0.75])).unwrap();
        // h(0.25), mpmath: 0.81127812445913286391
        assert_abs_diff_eq!(von_neumann_entropy(&rho).unwrap(), 0.811_278_124_459_132_9, epsilon = 1e-14);
    }

    #[test]
    fn measurement_entropy_examples() {
        let s = 1.0 / 2f64.sqrt();
        let plus = DensityMatrix::from_pure(&CVector::from_vec(vec![c(s), c(s)])).unwrap();
        let h = conditional_measurement_entropy(&plus, &Povm::computational(2), (2, 1)).unwrap();
        assert_abs_diff_eq!(h, 1.0, epsilon = 1e-12);

        let h = conditional_measurement_entropy(&bell(), &Povm::computational(2), (2, 2)).unwrap();
        assert_abs_diff_eq!(h, 0.0, epsilon = 1e-12);

        assert!(conditional_measurement_entropy(&bell(), &Povm::computational(3), (2, 2)).is_err());
    }

    /// Independent route: build the full block-diagonal cq-state entry by entry.
    fn cq_state_entropy(rho: &DensityMatrix, povm: &Povm, dd: usize, de: usize) -> f64 {
        let k = povm.len();
        let m = rho.matrix();
        let mut cq = CMatrix::zeros(k * de, k * de);
        for x in 0..k {
            let f = povm.element(x);
            for e in 0..de {
                for e2 in 0..de {
                    let mut acc = C64::new(0.0, 0.0);
                    for d in 0..dd {
                        for d2 in 0..dd {
                            acc += f[(d2, d)] * m[(d * de + e, d2 * de + e2)];
                        }
                    }
                    cq[(x * de + e, x * de + e2)] = acc;
                }
            }
        }
        let cq = DensityMatrix::new(hermitize(&cq)).unwrap();
        let rho_e = partial_trace(rho, Subsystem::A, (dd, de)).unwrap();
        von_neumann_entropy(&cq).unwrap() - von_neumann_entropy(&rho_e).unwrap()
    }

    #[test]
    fn measurement_entropy_matches_cq_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..30 {
            let rho = random::random_density(4, 1 + trial % 4, &mut rng);
            let u = random::random_unitary(2, &mut rng);
            let povm = Povm::new(
                (0..2)
                    .map(|i| {
                        let col = u.column(i).into_owned();
                        &col * col.adjoint()
                    })
                    .collect(),
            )
            .unwrap();
            let fast = conditional_measurement_entropy(&rho, &povm, (2, 2)).unwrap();
            let slow = cq_state_entropy(&rho, &povm, 2, 2);
            assert!((fast - slow).abs() <= 1e-9, "trial {trial}: {fast} vs {slow}");
            assert!(fast >= -1e-9 && fast <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn measurement_entropy_without_side_information_is_shannon() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let rho = random::random_density(3, 2, &mut rng);
            let povm = Povm::computational(3);
            let h = conditional_measurement_entropy(&rho, &povm, (3, 1)).unwrap();
            let shannon: f64 = povm
                .probabilities(&rho)
                .unwrap()
                .into_iter()
                .map(crate::numerics::xlog2x_neg)
                .sum();
            assert_abs_diff_eq!(h, shannon, epsilon = 1e-10);
            assert!(h <= 3f64.log2() + 1e-12);
        }
    }

    #[test]
    fn purify_examples() {
        let pure = DensityMatrix::new(diag(&[1.0, 0.0])).unwrap();
        let p = purify(&pure).unwrap();
        assert_eq!(p.env_dim, 1);
        assert!((p.state.matrix() - pure.matrix()).camax() < 1e-14);

        let mixed = DensityMatrix::maximally_mixed(2).unwrap();
        let p = purify(&mixed).unwrap();
        assert_eq!(p.env_dim, 2);
        assert_abs_diff_eq!(von_neumann_entropy(&p.state).unwrap(), 0.0, epsilon = 1e-12);
        let back = partial_trace(&p.state, Subsystem::B, (2, 2)).unwrap();
        assert!((back.matrix() - mixed.matrix()).camax() < 1e-14);
    }

    #[test]
    fn purify_rank_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let rho = random::random_density(4, 3, &mut rng);
            let p = purify(&rho).unwrap();
            assert_eq!(p.env_dim, 3);
            let back = partial_trace(&p.state, Subsystem::B, (4, 3)).unwrap();
            assert!((back.matrix() - rho.matrix()).camax() <= 1e-10);
            let eig = p.state.eigenvalues();
            assert!(eig[..eig.len() - 1].iter().all(|l| l.abs() < 1e-10));
        }
    }

    #[test]
    fn trace_distance_and_pinching() {
        let a = DensityMatrix::new(diag(&[1.0, 0.0])).unwrap();
        let b = DensityMatrix::new(diag(&[0.0, 1.0])).unwrap();
        assert_abs_diff_eq!(trace_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-14);
        let s = 1.0 / 2f64.sqrt();
        let plus = DensityMatrix::from_pure(&CVector::from_vec(vec![c(s), c(s)])).unwrap();
        let dephased = pinch(&plus, &Povm::computational(2)).unwrap();
        assert!((dephased.matrix() - diag(&[0.5, 0.5])).camax() < 1e-15);
    }
}
