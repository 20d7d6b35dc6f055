//! Random instances for oracle tests: Haar-ish unitaries, projectors and states.

use super::{c, hermitize, CMatrix, CVector, DensityMatrix, Projector, C64};
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im)
}

pub fn ginibre<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// Haar-distributed unitary (QR of a Ginibre matrix with phase correction).
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let qr = ginibre(dim, dim, rng).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Uniformly random rank-`rank` projector on `C^dim`.
pub fn random_projector<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> Projector {
    let u = random_unitary(dim, rng);
    let cols = u.columns(0, rank.min(dim)).into_owned();
    Projector::new(hermitize(&(&cols * cols.adjoint()))).expect("columns are orthonormal")
}

pub fn random_pure_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(dim, |_, _| gaussian(rng));
    let n = v.norm();
    v / c(n)
}

/// Normalised state `G G† / tr(G G†)` with `G` a `dim × rank` Ginibre matrix.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rank: usize, rng: &mut R) -> DensityMatrix {
    let g = ginibre(dim, rank.max(1), rng);
    let m = hermitize(&(&g * g.adjoint()));
    let tr = m.trace().re;
    DensityMatrix::new(m * c(1.0 / tr)).expect("Wishart matrix is a valid state")
}
