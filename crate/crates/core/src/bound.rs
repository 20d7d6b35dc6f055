//! Lower bounds on the conditional entropy of one preimage-test outcome as a
//! function of the observed winning probabilities.
//!
//! For a square-overlap threshold `c ∈ (1/2, 1]` and load
//! `K = μ/5 + √2 (1-ω_p)^{1/4} + √(1-ω_m)`,
//!
//! ```text
//! g(c) = max{0, 1 - A(c) K} · max{0, log2(1/c) - h(ω_m - 2√(1-ω_p) - A(c) K)},   A(c) = 10/(2c-1)²
//! ```
//!
//! [`g_two_var`] maximises over `c` and subtracts the continuity penalty for the
//! abstain outcome; [`g_omega`] takes the worst case over all `(ω_p, ω_m)`
//! compatible with a combined win rate `ω`.

use crate::numerics::{
    binary_entropy, clamp01, maximize_scalar, minimize_scalar, Interval, NumericsError,
    OptimizerConfig,
};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("square-overlap parameter c = {0} outside (1/2, 1]")]
    InvalidC(f64),
    #[error("beta = {0} outside (0, 1)")]
    InvalidBeta(f64),
    #[error("{name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("commutator defect must be finite and non-negative, got {0}")]
    InvalidDefect(f64),
    #[error("invalid bound configuration: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, BoundError>;

fn unit(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && (-1e-12..=1.0 + 1e-12).contains(&value) {
        Ok(clamp01(value))
    } else {
        Err(BoundError::OutOfRange { name, value })
    }
}

/// Observed behaviour of a device in the two test types.
///
/// Stored as losing probabilities `1 - ω` so that win rates within a few
/// ulps of one keep full relative precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinningStats {
    deficit_p: f64,
    deficit_m: f64,
    mu: f64,
}

impl WinningStats {
    pub fn new(omega_p: f64, omega_m: f64, mu: f64) -> Result<Self> {
        let omega_p = unit("omega_p", omega_p)?;
        let omega_m = unit("omega_m", omega_m)?;
        Self::from_deficits(1.0 - omega_p, 1.0 - omega_m, mu)
    }

    pub fn from_deficits(deficit_p: f64, deficit_m: f64, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(BoundError::InvalidDefect(mu));
        }
        Ok(Self {
            deficit_p: unit("1 - omega_p", deficit_p)?,
            deficit_m: unit("1 - omega_m", deficit_m)?,
            mu,
        })
    }

    pub fn ideal() -> Self {
        Self { deficit_p: 0.0, deficit_m: 0.0, mu: 0.0 }
    }

    pub fn omega_p(&self) -> f64 {
        1.0 - self.deficit_p
    }

    pub fn omega_m(&self) -> f64 {
        1.0 - self.deficit_m
    }

    pub fn deficit_p(&self) -> f64 {
        self.deficit_p
    }

    pub fn deficit_m(&self) -> f64 {
        self.deficit_m
    }

    /// Commutator defect; zero under the computational assumption.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Combined win rate `(1-β) ω_p + β ω_m`.
    pub fn omega(&self, beta: f64) -> f64 {
        1.0 - self.deficit(beta)
    }

    pub fn deficit(&self, beta: f64) -> f64 {
        (1.0 - beta) * self.deficit_p + beta * self.deficit_m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub c_domain: Interval,
    pub optimizer: OptimizerConfig,
    /// Constant slack subtracted from the bound.
    pub xi_slack: f64,
}

pub const DEFAULT_C_FLOOR: f64 = 0.5 + 1e-6;

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            c_domain: Interval::new(DEFAULT_C_FLOOR, 1.0).expect("static interval"),
            optimizer: OptimizerConfig::default(),
            xi_slack: 0.0,
        }
    }
}

impl BoundConfig {
    /// Coarser optimiser for parameter sweeps.
    pub fn sweep() -> Self {
        Self { optimizer: OptimizerConfig::sweep(), ..Self::default() }
    }

    pub fn with_c_floor(mut self, lo: f64) -> Result<Self> {
        self.c_domain = Interval::new(lo, 1.0)?;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_domain.lo() > 0.5 && self.c_domain.hi() <= 1.0) {
            return Err(BoundError::InvalidConfig("c domain must lie in (1/2, 1]"));
        }
        if !(self.xi_slack.is_finite() && self.xi_slack >= 0.0) {
            return Err(BoundError::InvalidConfig("xi slack must be finite and non-negative"));
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

/// `A(c) = 10 / (2c - 1)²`.
pub fn a_of_c(c: f64) -> Result<f64> {
    if !(c > 0.5 && c <= 1.0) {
        return Err(BoundError::InvalidC(c));
    }
    Ok(10.0 / (2.0 * c - 1.0).powi(2))
}

/// `μ/5 + √2 (1-ω_p)^{1/4} + √(1-ω_m)`, the quantity multiplied by `A(c)`.
pub fn defect_load(stats: &WinningStats) -> f64 {
    stats.mu / 5.0 + 2f64.sqrt() * stats.deficit_p.powf(0.25) + stats.deficit_m.sqrt()
}

/// Smallest `c` at which the prefactor `1 - A(c) K` can be positive.
pub fn c_threshold(stats: &WinningStats) -> f64 {
    0.5 * (1.0 + (10.0 * defect_load(stats)).sqrt())
}

/// Uncertainty-relation bound at a fixed overlap threshold `c`, without the
/// continuity penalty.
pub fn g_fixed_c(stats: &WinningStats, c: f64) -> Result<f64> {
    let load = a_of_c(c)? * defect_load(stats);
    let prefactor = 1.0 - load;
    if prefactor <= 0.0 {
        return Ok(0.0);
    }
    // 1 - arg, where arg lower-bounds the equation-test win rate on the good blocks
    let miss = (stats.deficit_m + 2.0 * stats.deficit_p.sqrt() + load).max(0.0);
    let h = if miss > 0.5 { 1.0 } else { binary_entropy(miss)? };
    Ok(prefactor * ((1.0 / c).log2() - h).max(0.0))
}

/// Entropy lost when passing from the state with the abstain outcome
/// projected out back to the full state.
pub fn continuity_penalty(omega_p: f64) -> Result<f64> {
    continuity_penalty_deficit(1.0 - unit("omega_p", omega_p)?)
}

/// [`continuity_penalty`] in terms of `1 - ω_p`.
pub fn continuity_penalty_deficit(deficit_p: f64) -> Result<f64> {
    let e = unit("1 - omega_p", deficit_p)?.sqrt();
    Ok(e * 3f64.log2() + (1.0 + e) * binary_entropy(e / (1.0 + e))?)
}

/// Best `c` and the value of [`g_fixed_c`] there.
pub fn optimal_c(stats: &WinningStats, cfg: &BoundConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let lo = cfg.c_domain.lo().max(c_threshold(stats));
    let hi = cfg.c_domain.hi();
    if lo >= hi {
        // The prefactor is non-positive on the whole domain.
        return Ok((hi, 0.0));
    }
    let domain = Interval::new(lo, hi)?;
    let (c, value) =
        maximize_scalar(|c| g_fixed_c(stats, c).unwrap_or(0.0), domain, &cfg.optimizer)?;
    Ok((c, value))
}

/// `max_c g_fixed_c - continuity_penalty(ω_p) - ξ`, clamped at zero.
pub fn g_two_var(stats: &WinningStats, cfg: &BoundConfig) -> Result<f64> {
    let (_, best) = optimal_c(stats, cfg)?;
    if best == 0.0 {
        return Ok(0.0);
    }
    Ok((best - continuity_penalty_deficit(stats.deficit_p)? - cfg.xi_slack).max(0.0))
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(BoundError::InvalidBeta(beta))
    }
}

/// Range of `1 - ω_p` for which `1 - ω_m = (x - (1-β)(1 - ω_p)) / β` stays in
/// `[0, 1]`, where `x = 1 - ω`.
pub fn feasible_deficit_p(deficit: f64, beta: f64) -> Result<Interval> {
    check_beta(beta)?;
    let x = unit("1 - omega", deficit)?;
    let lo = ((x - beta) / (1.0 - beta)).max(0.0);
    let hi = (x / (1.0 - beta)).min(1.0);
    Ok(Interval::new(lo.min(hi), hi)?)
}

/// Range of `ω_p` for which `ω_m = (ω - (1-β) ω_p) / β` stays in `[0, 1]`.
pub fn feasible_omega_p(omega: f64, beta: f64) -> Result<Interval> {
    let iv = feasible_deficit_p(1.0 - unit("omega", omega)?, beta)?;
    Ok(Interval::new(1.0 - iv.hi(), 1.0 - iv.lo())?)
}

/// Worst case of [`g_two_var`] over the `(ω_p, ω_m)` split of a combined win
/// rate `ω`, with zero commutator defect.
pub fn g_omega(omega: f64, beta: f64, cfg: &BoundConfig) -> Result<f64> {
    g_omega_deficit(1.0 - unit("omega", omega)?, beta, 0.0, cfg)
}

/// [`g_omega`] with an explicit commutator defect `μ`.
pub fn g_omega_with_defect(omega: f64, beta: f64, mu: f64, cfg: &BoundConfig) -> Result<f64> {
    g_omega_deficit(1.0 - unit("omega", omega)?, beta, mu, cfg)
}

/// [`g_omega_with_defect`] parametrised by the combined losing rate `1 - ω`.
pub fn g_omega_deficit(deficit: f64, beta: f64, mu: f64, cfg: &BoundConfig) -> Result<f64> {
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(BoundError::InvalidDefect(mu));
    }
    let domain = feasible_deficit_p(deficit, beta)?;
    let x = clamp01(deficit);
    let at = |dp: f64| -> f64 {
        let dm = clamp01((x - (1.0 - beta) * dp) / beta);
        WinningStats::from_deficits(clamp01(dp), dm, mu)
            .and_then(|s| g_two_var(&s, cfg))
            .unwrap_or(0.0)
    };
    // The bound is non-negative, so a zero at either extreme split settles it.
    if at(domain.lo()) == 0.0 || at(domain.hi()) == 0.0 {
        return Ok(0.0);
    }
    let (_, value) = minimize_scalar(at, domain, &cfg.optimizer)?;
    Ok(value.max(0.0))
}
