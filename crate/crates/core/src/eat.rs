//! Min-tradeoff functions and finite-size entropy accounting.
//!
//! Everything near `ω = 1` is parametrised by the losing rate `x = 1 - ω`,
//! because the single-round bound only becomes positive for `x` of order
//! `1e-12` and `1 - ω` cannot be recovered from a rounded `ω` there.
//!
//! A [`TradeoffFunction`] follows the single-round curve `g(x)` for
//! `x ≥ x0` and its tangent at `x0` for smaller `x`. Because `g` is convex the
//! tangent stays below the curve, and it caps the gradient that enters the
//! second-order term.

use crate::bound::{g_omega_deficit, BoundConfig, BoundError};
use crate::numerics::clamp01;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EatError {
    #[error("parameter {name} = {value} is out of range")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("distribution entries must be non-negative and sum to 1")]
    InvalidDistribution,
    #[error("no test rounds: the winning rate is undefined")]
    NoTestRounds,
    #[error("abstain weight {found} is inconsistent with the test fraction (expected {expected})")]
    InconsistentGamma { expected: f64, found: f64 },
    #[error("threshold winning rate {0} lies outside [1/2, 1]")]
    InfeasibleThreshold(f64),
    #[error("search grid is empty")]
    EmptySearch,
    #[error(transparent)]
    Bound(#[from] BoundError),
}

pub type Result<T> = std::result::Result<T, EatError>;

/// Size of the per-round output alphabet `{0,1,2} × {0,1}`.
pub const OUTPUT_ALPHABET: u32 = 6;

/// Tolerance on `p(⊥) = 1 - γ` when evaluating a tradeoff function.
pub const GAMMA_TOL: f64 = 1e-9;

fn in_open_unit(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(EatError::InvalidParameter { name, value })
    }
}

fn in_half_open_unit(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value <= 1.0 {
        Ok(value)
    } else {
        Err(EatError::InvalidParameter { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EatParams {
    /// Number of rounds; wide enough for the asymptotic regime.
    pub n: u128,
    /// Expected fraction of test rounds.
    pub gamma: f64,
    /// Fraction of test rounds that run the equation test.
    pub beta: f64,
    pub eps_s: f64,
    /// Lower bound on the probability of not aborting.
    pub p_omega: f64,
    pub omega_exp: f64,
    pub delta_est: f64,
    pub xi_slack: f64,
}

impl EatParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(EatError::InvalidParameter { name: "n", value: 0.0 });
        }
        in_half_open_unit("gamma", self.gamma)?;
        in_open_unit("beta", self.beta)?;
        in_open_unit("eps_s", self.eps_s)?;
        in_half_open_unit("p_omega", self.p_omega)?;
        in_open_unit("delta_est", self.delta_est)?;
        if !(0.0..=1.0).contains(&self.omega_exp) {
            return Err(EatError::InvalidParameter { name: "omega_exp", value: self.omega_exp });
        }
        if !(self.xi_slack.is_finite() && self.xi_slack >= 0.0) {
            return Err(EatError::InvalidParameter { name: "xi_slack", value: self.xi_slack });
        }
        Ok(())
    }

    /// Per-test-round winning rate implied by the abort rule, `ω_exp - δ_est/γ`.
    pub fn omega_threshold(&self) -> f64 {
        self.omega_exp - self.delta_est / self.gamma
    }

    /// `1 - ω_threshold`, computed without cancellation.
    pub fn threshold_deficit(&self) -> f64 {
        (1.0 - self.omega_exp) + self.delta_est / self.gamma
    }
}

/// Distribution of the per-round statistic `W` over `{⊥, 0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WDistribution {
    pub bottom: f64,
    pub lose: f64,
    pub win: f64,
}

impl WDistribution {
    pub fn new(bottom: f64, lose: f64, win: f64) -> Result<Self> {
        let all = [bottom, lose, win];
        if all.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(EatError::InvalidDistribution);
        }
        Ok(Self { bottom, lose, win })
    }

    /// Induced by a device with test fraction `γ` and combined losing rate `x`.
    pub fn from_test_deficit(gamma: f64, deficit: f64) -> Result<Self> {
        in_half_open_unit("gamma", gamma)?;
        let x = clamp01(deficit);
        Self::new(1.0 - gamma, gamma * x, gamma * (1.0 - x))
    }

    /// Conditional losing rate `p(0) / (1 - p(⊥))`.
    pub fn test_deficit(&self) -> Result<f64> {
        let tested = self.lose + self.win;
        if tested <= 0.0 {
            return Err(EatError::NoTestRounds);
        }
        Ok(clamp01(self.lose / tested))
    }
}

/// Tangent-capped min-tradeoff function for fixed `β`, `γ` and cutoff `ω_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffFunction {
    beta: f64,
    gamma: f64,
    cutoff: f64,
    cutoff_value: f64,
    slope: f64,
    curve: BoundConfig,
}

/// `dg/dx` at `x0`. Central Richardson differences in the smooth region, a
/// one-sided stencil from below when the curve vanishes just above `x0`.
fn curve_slope(x0: f64, g0: f64, g: &dyn Fn(f64) -> f64) -> f64 {
    if g0 == 0.0 {
        return 0.0;
    }
    let h = 1e-2 * x0;
    if g(x0 + h) == 0.0 {
        let h = 0.25 * h;
        return (3.0 * g0 - 4.0 * g(x0 - h) + g(x0 - 2.0 * h)) / (2.0 * h);
    }
    let central = |h: f64| (g(x0 + h) - g(x0 - h)) / (2.0 * h);
    (4.0 * central(h / 2.0) - central(h)) / 3.0
}

impl TradeoffFunction {
    pub fn new(beta: f64, gamma: f64, omega_0: f64, curve: &BoundConfig) -> Result<Self> {
        if !(omega_0 > 0.5 && omega_0 <= 1.0) {
            return Err(EatError::InvalidParameter { name: "omega_0", value: omega_0 });
        }
        Self::with_cutoff_deficit(beta, gamma, 1.0 - omega_0, curve)
    }

    /// Cutoff given as `x0 = 1 - ω_0`.
    pub fn with_cutoff_deficit(beta: f64, gamma: f64, x0: f64, curve: &BoundConfig) -> Result<Self> {
        in_open_unit("beta", beta)?;
        in_half_open_unit("gamma", gamma)?;
        if !(0.0..0.5).contains(&x0) {
            return Err(EatError::InvalidParameter { name: "1 - omega_0", value: x0 });
        }
        curve.validate()?;
        let g = |x: f64| g_omega_deficit(clamp01(x), beta, 0.0, curve).unwrap_or(0.0);
        let cutoff_value = g_omega_deficit(x0, beta, 0.0, curve)?;
        let slope = if x0 == 0.0 { f64::NEG_INFINITY } else { curve_slope(x0, cutoff_value, &g) };
        Ok(Self { beta, gamma, cutoff: x0, cutoff_value, slope, curve: curve.clone() })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn omega_0(&self) -> f64 {
        1.0 - self.cutoff
    }

    pub fn cutoff_deficit(&self) -> f64 {
        self.cutoff
    }

    /// `dg/dω` of the curve at the cutoff.
    pub fn curve_slope(&self) -> f64 {
        -self.slope
    }

    fn scale(&self) -> f64 {
        1.0 - self.beta * self.gamma
    }

    /// The single-round curve `g(1 - x; β)` without slack.
    pub fn curve(&self, x: f64) -> Result<f64> {
        Ok(g_omega_deficit(clamp01(x), self.beta, 0.0, &self.curve)?)
    }

    /// Capped curve, given the curve value at `x` when `x ≥ x0`.
    fn capped(&self, x: f64, curve_at_x: impl FnOnce() -> Result<f64>) -> Result<f64> {
        if x >= self.cutoff {
            curve_at_x()
        } else {
            Ok(self.cutoff_value + self.slope * (x - self.cutoff))
        }
    }

    /// `(g̃(x) - ξ)(1 - βγ)` at losing rate `x`.
    pub fn value_at_deficit(&self, x: f64) -> Result<f64> {
        let g = self.capped(x, || self.curve(x))?;
        Ok((g - self.curve.xi_slack) * self.scale())
    }

    pub fn value_at_omega(&self, omega: f64) -> Result<f64> {
        self.value_at_deficit(1.0 - omega)
    }

    /// Largest gradient magnitude over the simplex, `|g'(ω_0)| (1 - βγ) / γ`.
    pub fn gradient_sup(&self) -> f64 {
        self.slope.abs() * self.scale() / self.gamma
    }
}

/// `f_min(p)` through the capped curve.
pub fn f_min(p: &WDistribution, tf: &TradeoffFunction) -> Result<f64> {
    let x = p.test_deficit()?;
    let expected = 1.0 - tf.gamma;
    if (p.bottom - expected).abs() > GAMMA_TOL {
        return Err(EatError::InconsistentGamma { expected, found: p.bottom });
    }
    tf.value_at_deficit(x)
}

pub fn f_min_gradient_sup(tf: &TradeoffFunction) -> f64 {
    tf.gradient_sup()
}

/// `2 (log2(1 + 2 d_O) + ⌈∇⌉) √(1 - 2 log2(ε p_Ω))`.
pub fn eat_second_order(d_o: u32, grad_ceil: u64, eps: f64, p_omega: f64) -> Result<f64> {
    if d_o == 0 {
        return Err(EatError::InvalidParameter { name: "d_O", value: 0.0 });
    }
    in_open_unit("eps", eps)?;
    in_half_open_unit("p_omega", p_omega)?;
    let ep = eps * p_omega;
    in_open_unit("eps * p_omega", ep)?;
    let alphabet = (1.0 + 2.0 * d_o as f64).log2();
    Ok(2.0 * (alphabet + grad_ceil as f64) * (1.0 - 2.0 * ep.log2()).sqrt())
}

/// Sign convention for the chain-rule correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChainRuleTerm {
    /// Subtract `3 |log2(1 - √(1 - ε²))|`.
    #[default]
    Conservative,
    /// Subtract `3 log2(1 - √(1 - ε²))` as written, which adds entropy.
    Literal,
}

impl ChainRuleTerm {
    /// Amount subtracted from the entropy for smoothing `ε`.
    pub fn penalty(self, eps: f64) -> f64 {
        // 1 - √(1 - ε²) without cancellation
        let gap = eps * eps / (1.0 + (1.0 - eps * eps).sqrt());
        let term = 3.0 * gap.log2();
        match self {
            ChainRuleTerm::Conservative => term.abs(),
            ChainRuleTerm::Literal => term,
        }
    }
}

fn ceil_gradient(grad: f64) -> u64 {
    // saturating float-to-int conversion
    grad.ceil() as u64
}

/// Unfloored `f̃(x) - μ/√n` for smoothing `eps`.
pub fn accumulation_rate(tf: &TradeoffFunction, x: f64, n: u128, eps: f64, p_omega: f64) -> Result<f64> {
    let value = tf.value_at_deficit(x)?;
    accumulation_from_value(value, tf.gradient_sup(), n, eps, p_omega)
}

fn accumulation_from_value(value: f64, grad: f64, n: u128, eps: f64, p_omega: f64) -> Result<f64> {
    if !grad.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let mu = eat_second_order(OUTPUT_ALPHABET, ceil_gradient(grad), eps, p_omega)?;
    Ok(value - mu / (n as f64).sqrt())
}

fn certified_from_value(params: &EatParams, value: f64, grad: f64, chain: ChainRuleTerm) -> Result<f64> {
    let eps = params.eps_s / 4.0;
    let n = params.n as f64;
    let first = accumulation_from_value(value, grad, params.n, eps, params.p_omega)?;
    let max_entropy = 2.0 * 7f64.log2() * (1.0 - 2.0 * (eps * params.p_omega).log2()).sqrt();
    let total = n * (first - params.gamma) - max_entropy - chain.penalty(eps);
    Ok(if total.is_nan() { 0.0 } else { total.max(0.0) })
}

/// Smooth min-entropy of the generation outputs given the classical
/// side information, at the threshold implied by `params`, floored at 0.
///
/// The slack `ξ` is already part of `tf`.
pub fn certified_min_entropy(params: &EatParams, tf: &TradeoffFunction, chain: ChainRuleTerm) -> Result<f64> {
    params.validate()?;
    let omega = params.omega_threshold();
    if !(0.5..=1.0).contains(&omega) {
        return Err(EatError::InfeasibleThreshold(omega));
    }
    let value = tf.value_at_deficit(params.threshold_deficit())?;
    certified_from_value(params, value, tf.gradient_sup(), chain)
}

/// Quantity maximised by the rate search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateObjective {
    /// Unfloored accumulation rate `f̃ - μ/√n` at smoothing `ε_s`.
    Accumulation,
    /// [`certified_min_entropy`] divided by `n`.
    Certified(ChainRuleTerm),
}

/// Grids for the `(β, ω_0)` search.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSearch {
    pub betas: Vec<f64>,
    /// Candidate cutoffs as `1 - ω_0`.
    pub cutoff_deficits: Vec<f64>,
    pub curve: BoundConfig,
}

impl Default for RateSearch {
    fn default() -> Self {
        let betas = vec![0.01, 0.02, 0.03, 0.045, 0.06, 0.08, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
        // eight per decade from 1e-16 up to 0.4
        let cutoff_deficits = (0..=124).map(|k| 10f64.powf(-16.0 + k as f64 / 8.0)).filter(|&x| x < 0.5).collect();
        Self { betas, cutoff_deficits, curve: BoundConfig::sweep() }
    }
}

impl RateSearch {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.cutoff_deficits.is_empty() {
            return Err(EatError::EmptySearch);
        }
        for &b in &self.betas {
            in_open_unit("beta", b)?;
        }
        for &x in &self.cutoff_deficits {
            if !(x > 0.0 && x < 0.5) {
                return Err(EatError::InvalidParameter { name: "1 - omega_0", value: x });
            }
        }
        self.curve.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptimum {
    pub beta: f64,
    pub omega_0: f64,
    pub rate: f64,
}

/// Tradeoff functions for every `(β, ω_0)` pair of a search, built once and
/// reused across `n`, `ε` and the evaluation point.
#[derive(Debug, Clone)]
pub struct RateTable {
    gamma: f64,
    rows: Vec<Vec<TradeoffFunction>>,
}

impl RateTable {
    pub fn build(gamma: f64, search: &RateSearch) -> Result<Self> {
        in_half_open_unit("gamma", gamma)?;
        search.validate()?;
        let rows = search
            .betas
            .par_iter()
            .map(|&beta| {
                search
                    .cutoff_deficits
                    .iter()
                    .map(|&x0| TradeoffFunction::with_cutoff_deficit(beta, gamma, x0, &search.curve))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { gamma, rows })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn betas(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|row| row[0].beta)
    }

    /// Curve values at losing rate `x`, shared by every cutoff below `x`.
    pub fn at(&self, x: f64) -> Result<RatePoint<'_>> {
        let curves = self.rows.iter().map(|row| row[0].curve(x)).collect::<Result<Vec<_>>>()?;
        Ok(RatePoint { table: self, x, curves })
    }

    /// Best objective at losing rate `x`. `params.beta` is ignored.
    pub fn optimize(&self, params: &EatParams, x: f64, objective: RateObjective) -> Result<RateOptimum> {
        Ok(self.at(x)?.optimize(params, objective)?.0)
    }

    /// `max_β (g(x) - ξ)(1 - βγ)`, the rate approached as `n → ∞`.
    pub fn first_order(&self, x: f64) -> Result<f64> {
        Ok(self.at(x)?.first_order().rate)
    }
}

/// A [`RateTable`] evaluated at one losing rate.
#[derive(Debug, Clone)]
pub struct RatePoint<'a> {
    table: &'a RateTable,
    x: f64,
    curves: Vec<f64>,
}

impl RatePoint<'_> {
    pub fn deficit(&self) -> f64 {
        self.x
    }

    /// Best `(β, ω_0)` and the tradeoff function attaining it.
    pub fn optimize(&self, params: &EatParams, objective: RateObjective) -> Result<(RateOptimum, &TradeoffFunction)> {
        let mut best: Option<(RateOptimum, &TradeoffFunction)> = None;
        for (row, &g_x) in self.table.rows.iter().zip(&self.curves) {
            for tf in row {
                let value = (tf.capped(self.x, || Ok(g_x))? - tf.curve.xi_slack) * tf.scale();
                let rate = match objective {
                    RateObjective::Accumulation => {
                        accumulation_from_value(value, tf.gradient_sup(), params.n, params.eps_s, params.p_omega)?
                    }
                    RateObjective::Certified(chain) => {
                        certified_from_value(params, value, tf.gradient_sup(), chain)? / params.n as f64
                    }
                };
                if best.is_none_or(|(b, _)| rate > b.rate) {
                    best = Some((RateOptimum { beta: tf.beta, omega_0: tf.omega_0(), rate }, tf));
                }
            }
        }
        best.ok_or(EatError::EmptySearch)
    }

    /// Uncapped curve maximised over `β`; reported with `ω_0 = 1`.
    pub fn first_order(&self) -> RateOptimum {
        let mut best = RateOptimum { beta: f64::NAN, omega_0: 1.0, rate: f64::NEG_INFINITY };
        for (row, &g_x) in self.table.rows.iter().zip(&self.curves) {
            let tf = &row[0];
            let rate = (g_x - tf.curve.xi_slack) * tf.scale();
            if rate > best.rate {
                best = RateOptimum { beta: tf.beta, omega_0: 1.0, rate };
            }
        }
        best
    }
}

/// Optimise `(β, ω_0)` for the threshold implied by `params`.
pub fn optimize_rate(params: &EatParams, search: &RateSearch, objective: RateObjective) -> Result<RateOptimum> {
    params.validate()?;
    let mut curve = search.curve.clone();
    curve.xi_slack = params.xi_slack;
    let search = RateSearch { curve, ..search.clone() };
    let table = RateTable::build(params.gamma, &search)?;
    let omega = params.omega_threshold();
    if omega < 0.5 {
        return Ok(RateOptimum { beta: search.betas[0], omega_0: 1.0 - search.cutoff_deficits[0], rate: 0.0 });
    }
    table.optimize(params, params.threshold_deficit(), objective)
}
