//! Randomised property suites comparing the bounds against exact oracles.
//!
//! Each suite reports the worst violation it observed: an error for the
//! decomposition checks, `bound - oracle` for the inequalities. A suite
//! passes when the worst value stays within its tolerance.

use crate::bound::{continuity_penalty_deficit, g_two_var, BoundConfig, BoundError, WinningStats};
use crate::device::{device_stats, exact_equation_entropy, exact_round_entropy, random_device, Block, DeviceError, DeviceFamily, QubitBlockDevice};
use crate::eat::{f_min, EatError, TradeoffFunction, WDistribution};
use crate::linalg::random::{random_density, random_projector, random_pure_vector};
use crate::linalg::{
    commutator_defect, good_subspace_projector, hermitian_eigenvalues, jordan_decompose, CMatrix, DensityMatrix,
    LinalgError, Povm, Projector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("unknown suite `{0}`")]
    UnknownSuite(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Eat(#[from] EatError),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Jordan,
    GoodSubspace,
    BoundVsOracle,
    Tradeoff,
    Continuity,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Jordan, Suite::GoodSubspace, Suite::BoundVsOracle, Suite::Tradeoff, Suite::Continuity];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Jordan => "jordan",
            Suite::GoodSubspace => "good-subspace",
            Suite::BoundVsOracle => "bound-vs-oracle",
            Suite::Tradeoff => "tradeoff",
            Suite::Continuity => "continuity",
        }
    }

    pub fn tolerance(self) -> f64 {
        1e-9
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| VerifyError::UnknownSuite(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub trials: usize,
    /// Largest error or violation seen; `-inf` when no trial ran.
    pub worst: f64,
    pub passed: bool,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "suite={} trials={} worst={:e} tolerance={:e} result={}",
            self.suite,
            self.trials,
            self.worst,
            self.suite.tolerance(),
            if self.passed { "pass" } else { "fail" }
        )
    }
}

pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..trials {
        let v = match suite {
            Suite::Jordan => jordan_trial(&mut rng)?,
            Suite::GoodSubspace => good_subspace_trial(&mut rng, i % 2 == 1)?,
            Suite::BoundVsOracle => bound_trial(&mut rng, i)?,
            Suite::Tradeoff => tradeoff_trial(&mut rng, i)?,
            Suite::Continuity => continuity_trial(&mut rng)?,
        };
        worst = worst.max(v);
    }
    Ok(SuiteReport { suite, trials, worst, passed: !(worst > suite.tolerance()) })
}

fn random_pair<R: Rng + ?Sized>(rng: &mut R, max_dim: usize) -> (Projector, Projector) {
    let d = rng.random_range(2..=max_dim);
    let p = random_projector(d, rng.random_range(0..=d), rng);
    let m = random_projector(d, rng.random_range(0..=d), rng);
    (p, m)
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Largest deviation among: blocks resolving the identity, both projectors
/// commuting with every block, and each block of `PMP + (1-P)M(1-P)` having
/// spectrum `{cos²(θ/2), sin²(θ/2)}` (one of the two for 1-d blocks).
pub fn jordan_trial<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let (p, m) = random_pair(rng, 12);
    let blocks = jordan_decompose(&p, &m)?;
    let d = p.dim();
    let q = p.complement();
    let op = p.matrix() * m.matrix() * p.matrix() + q.matrix() * m.matrix() * q.matrix();
    let mut total = CMatrix::zeros(d, d);
    let mut err: f64 = 0.0;
    for b in blocks.blocks() {
        let proj = b.projector();
        total += &proj;
        for x in [p.matrix(), m.matrix()] {
            err = err.max((&proj * x - x * &proj).camax());
        }
        let u = b.basis();
        let local = sorted(hermitian_eigenvalues(&(u.adjoint() * &op * u)));
        let (c2, s2) = ((b.angle() / 2.0).cos().powi(2), (b.angle() / 2.0).sin().powi(2));
        if b.dim() == 2 {
            for (a, e) in local.iter().zip(&sorted(vec![c2, s2])) {
                err = err.max((a - e).abs());
            }
        } else {
            // a one-dimensional block carries one of the two values
            err = err.max((local[0] - c2).abs().min((local[0] - s2).abs()));
        }
    }
    err = err.max((total - CMatrix::identity(d, d)).camax());
    Ok(err)
}

/// `tr((1-Γ)φ) - (2μ + 10√(1-ω))/(2c-1)²`. With `aligned` the state is pure
/// and inside `range M`, so `ω = 1` and the right-hand side is not trivially
/// large.
pub fn good_subspace_trial<R: Rng + ?Sized>(rng: &mut R, aligned: bool) -> Result<f64> {
    let (p, m) = random_pair(rng, 12);
    let d = p.dim();
    let phi = if aligned && m.rank() > 0 {
        let basis = m.range_basis();
        let coeffs = random_pure_vector(basis.ncols(), rng);
        DensityMatrix::from_pure(&(basis * coeffs))?
    } else {
        random_density(d, rng.random_range(1..=d), rng)
    };
    let cc = 0.5 + rng.random_range(1e-3..=0.5);
    let gamma = good_subspace_projector(&p, &m, cc)?;
    let lhs = 1.0 - phi.expectation(gamma.matrix());
    let omega = phi.expectation(m.matrix());
    let pi = Povm::new(vec![p.matrix().clone(), p.complement().matrix().clone(), CMatrix::zeros(d, d)])?;
    let mp = Povm::from_projectors(&[m.clone(), m.complement()])?;
    let mu = commutator_defect(&pi, &mp, &phi)?;
    let rhs = (2.0 * mu + 10.0 * (1.0 - omega).max(0.0).sqrt()) / (2.0 * cc - 1.0).powi(2);
    Ok(lhs - rhs)
}

fn family(i: usize) -> DeviceFamily {
    if i.is_multiple_of(3) {
        DeviceFamily::Generic
    } else {
        DeviceFamily::NearIdeal
    }
}

/// `g_two_var(stats) - H(Π|E)` on a random device.
pub fn bound_trial<R: Rng + ?Sized>(rng: &mut R, i: usize) -> Result<f64> {
    let dev = random_device(rng, family(i), false);
    let stats = device_stats(&dev)?;
    let bound = g_two_var(&stats, &BoundConfig::default())?;
    Ok(bound - exact_round_entropy(&dev)?)
}

/// `f_min(p_dev) - [(1-βγ) H(Π|E) + βγ H(M|E)]` on a random device with
/// unbiased blocks, for random `β`, `γ` and cutoff.
pub fn tradeoff_trial<R: Rng + ?Sized>(rng: &mut R, i: usize) -> Result<f64> {
    let dev = random_device(rng, family(i), true);
    let stats = device_stats(&dev)?;
    let beta = rng.random_range(0.01..0.99);
    let gamma = rng.random_range(0.05..=1.0);
    let x0 = 10f64.powf(rng.random_range(-16.0..-11.0));
    let tf = TradeoffFunction::with_cutoff_deficit(beta, gamma, x0, &BoundConfig::sweep())?;
    let p = WDistribution::from_test_deficit(gamma, stats.deficit(beta))?;
    let lhs = f_min(&p, &tf)?;
    let t1 = beta * gamma;
    let rhs = (1.0 - t1) * exact_round_entropy(&dev)? + t1 * exact_equation_entropy(&dev)?;
    Ok(lhs - rhs)
}

/// Entropy lost by mixing in the abstain sector, minus the continuity penalty.
pub fn continuity_trial<R: Rng + ?Sized>(rng: &mut R) -> Result<f64> {
    let dev = random_device(rng, DeviceFamily::Generic, false);
    let kept = 1.0 - dev.junk_weight();
    let blocks: Vec<Block> = dev.blocks().iter().map(|b| Block { weight: b.weight / kept, ..*b }).collect();
    let clean = QubitBlockDevice::new(blocks, 0.0, 0.0)?;
    let loss = exact_round_entropy(&clean)? - exact_round_entropy(&dev)?;
    let stats = WinningStats::from_deficits(dev.junk_weight(), 0.0, 0.0)?;
    Ok(loss - continuity_penalty_deficit(stats.deficit_p())?)
}
