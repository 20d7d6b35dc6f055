//! Simultaneous block decomposition of two projectors.
//!
//! Any two projectors `P`, `M` on a finite space split it into mutually
//! orthogonal sectors of dimension one or two that both leave invariant. In a
//! two-dimensional sector with basis `(v, w)`, `v ∈ range P`, `w ∈ ker P`,
//!
//! ```text
//! P = [[1, 0], [0, 0]]      M = [[cos²(θ/2), cos(θ/2) sin(θ/2)], [.., sin²(θ/2)]]
//! ```
//!
//! with `θ ∈ (0, π)` the angle between the two Bloch vectors. The square
//! overlap of the sector is `max{cos²(θ/2), sin²(θ/2)}`; one-dimensional
//! sectors have overlap one.
//!
//! The construction works on `range P` first: the eigenvectors `v` of the
//! compression `V† M V` with eigenvalue `λ ∈ (0, 1)` pair with
//! `w ∝ (1 - P) M v`. Whatever remains of `ker P` is diagonalised against `M`.

use super::{
    c, hermitian_eigen, CMatrix, CVector, DensityMatrix, LinalgError, Povm, Projector, Result,
    VALIDATION_TOL,
};
use std::f64::consts::FRAC_PI_2;

/// Eigenvalues of the compression this close to 0 or 1 are treated as exact.
const LAMBDA_SNAP: f64 = 1e-12;
/// Angles this close to π/2 are reported as exactly π/2.
const ANGLE_SNAP: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Two-dimensional sector where the projectors genuinely rotate.
    Qubit,
    /// One-dimensional common eigenvector.
    Residual,
}

#[derive(Debug, Clone)]
pub struct JordanBlock {
    basis: CMatrix,
    angle: f64,
    kind: BlockKind,
}

impl JordanBlock {
    /// Orthonormal basis as columns; for qubit blocks column 0 spans the
    /// `P`-part and column 1 the `(1 - P)`-part.
    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    /// Bloch angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn projector(&self) -> CMatrix {
        &self.basis * self.basis.adjoint()
    }

    pub fn square_overlap(&self) -> f64 {
        match self.kind {
            BlockKind::Residual => 1.0,
            BlockKind::Qubit => {
                let c2 = (self.angle / 2.0).cos().powi(2);
                c2.max(1.0 - c2)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct JordanBlocks {
    dim: usize,
    blocks: Vec<JordanBlock>,
}

impl JordanBlocks {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[JordanBlock] {
        &self.blocks
    }

    pub fn block(&self, index: usize) -> Result<&JordanBlock> {
        self.blocks
            .get(index)
            .ok_or(LinalgError::BlockIndex { index, count: self.blocks.len() })
    }

    pub fn qubit_blocks(&self) -> impl Iterator<Item = &JordanBlock> {
        self.blocks.iter().filter(|b| b.kind == BlockKind::Qubit)
    }

    pub fn residual_blocks(&self) -> impl Iterator<Item = &JordanBlock> {
        self.blocks.iter().filter(|b| b.kind == BlockKind::Residual)
    }

    /// `Σ_j B_j X B_j`: the block-diagonal part of `X`.
    pub fn pinch(&self, op: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for b in &self.blocks {
            let proj = b.projector();
            out += &proj * op * &proj;
        }
        out
    }

    /// Largest block square overlap.
    pub fn max_overlap(&self) -> f64 {
        self.blocks.iter().map(JordanBlock::square_overlap).fold(0.0, f64::max)
    }
}

fn columns_of(m: &CMatrix, cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(m.nrows(), cols.len(), |r, k| m[(r, cols[k])])
}

/// Orthonormal basis of the eigenspace `{λ > 1/2}` of a near-projector.
fn range_of(m: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(m);
    let cols: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.5).collect();
    columns_of(&vectors, &cols)
}

fn as_column(v: &CVector) -> CMatrix {
    CMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn residual(v: CMatrix, p_bit: bool, m_bit: bool) -> JordanBlock {
    let angle = if p_bit == m_bit { 0.0 } else { std::f64::consts::PI };
    JordanBlock { basis: v, angle, kind: BlockKind::Residual }
}

fn bloch_angle(lambda: f64) -> f64 {
    let theta = 2.0 * lambda.clamp(0.0, 1.0).sqrt().acos();
    if (theta - FRAC_PI_2).abs() < ANGLE_SNAP {
        FRAC_PI_2
    } else {
        theta
    }
}

/// Block decomposition of the projector pair `(P, M)`.
pub fn jordan_decompose(p: &Projector, m: &Projector) -> Result<JordanBlocks> {
    let d = p.dim();
    if m.dim() != d {
        return Err(LinalgError::DimensionMismatch { expected: d, got: m.dim() });
    }
    let pm = p.matrix();
    let mm = m.matrix();
    let ident = CMatrix::identity(d, d);
    let mut blocks = Vec::new();
    let mut partners: Vec<CMatrix> = Vec::new();

    let v = range_of(pm);
    if v.ncols() > 0 {
        let (lambdas, vecs) = hermitian_eigen(&(v.adjoint() * mm * &v));
        let comp = &ident - pm;
        for (j, &lambda) in lambdas.iter().enumerate() {
            let vj = &v * vecs.column(j);
            if lambda <= LAMBDA_SNAP || lambda >= 1.0 - LAMBDA_SNAP {
                blocks.push(residual(as_column(&vj), true, lambda > 0.5));
                continue;
            }
            let w = &comp * mm * &vj;
            let norm = w.norm();
            let w = w / c(norm);
            partners.push(as_column(&w));
            let mut basis = CMatrix::zeros(d, 2);
            basis.set_column(0, &vj);
            basis.set_column(1, &w);
            blocks.push(JordanBlock { basis, angle: bloch_angle(lambda), kind: BlockKind::Qubit });
        }
    }

    // Remainder of ker P not yet covered by a partner vector.
    let mut rest = &ident - pm;
    for w in &partners {
        rest -= w * w.adjoint();
    }
    let u = range_of(&rest);
    if u.ncols() > 0 {
        let (mus, vecs) = hermitian_eigen(&(u.adjoint() * mm * &u));
        for (j, &mu) in mus.iter().enumerate() {
            let uj = &u * vecs.column(j);
            blocks.push(residual(as_column(&uj), false, mu > 0.5));
        }
    }

    Ok(JordanBlocks { dim: d, blocks })
}

/// `max_j` square overlap over the blocks of `(P, M)`.
pub fn square_overlap(p: &Projector, m: &Projector) -> Result<f64> {
    Ok(jordan_decompose(p, m)?.max_overlap())
}

/// Sum of the block projectors whose square overlap does not exceed `c`.
///
/// One-dimensional blocks have overlap one and so only enter at `c = 1`.
pub fn good_subspace_projector(p: &Projector, m: &Projector, c_max: f64) -> Result<Projector> {
    if !(c_max > 0.5 && c_max <= 1.0) {
        return Err(LinalgError::OverlapThreshold(c_max));
    }
    let blocks = jordan_decompose(p, m)?;
    let d = blocks.dim();
    let mut gamma = CMatrix::zeros(d, d);
    for b in blocks.blocks() {
        if b.square_overlap() <= c_max + 1e-12 {
            gamma += b.projector();
        }
    }
    Projector::new(super::hermitize(&gamma))
}

/// `|1/2 - Σ_{b∈{0,1}} tr(M_0 Π_b ψ Π_b)|`.
///
/// Zero when the equation test cannot distinguish the dephased state from an
/// unbiased one; `psi` is typically the state restricted to the
/// non-abstaining outcomes and normalised.
pub fn commutator_defect(p3: &Povm, m: &Povm, psi: &DensityMatrix) -> Result<f64> {
    if p3.len() != 3 {
        return Err(LinalgError::OutcomeCount { expected: 3, got: p3.len() });
    }
    if m.len() != 2 {
        return Err(LinalgError::OutcomeCount { expected: 2, got: m.len() });
    }
    let d = psi.dim();
    for dim in [p3.dim(), m.dim()] {
        if dim != d {
            return Err(LinalgError::DimensionMismatch { expected: d, got: dim });
        }
    }
    let mut total = 0.0;
    for b in 0..2 {
        let pb = p3.element(b);
        total += (m.element(0) * pb * psi.matrix() * pb).trace().re;
    }
    let defect = (0.5 - total).abs();
    debug_assert!(defect.is_finite() && defect <= 0.5 + VALIDATION_TOL.sqrt());
    Ok(defect)
}
