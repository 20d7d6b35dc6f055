//! Scalar special functions and deterministic one-dimensional optimizers.
//!
//! The optimizers are a dense grid scan followed by golden-section refinement
//! inside the best grid cell. They never use randomness, so every bound built
//! on top of them is reproducible bit for bit.

use thiserror::Error;

/// Slack allowed when a probability drifts just outside `[0, 1]`.
pub const PROBABILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("argument {0} outside [0, 1]")]
    OutOfUnitInterval(f64),
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("finite difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("non-finite evaluation point {0}")]
    NonFinite(f64),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Closed interval `[lo, hi]` with finite endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(NumericsError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// `count` equally spaced points including both endpoints.
    pub fn linspace(&self, count: usize) -> Vec<f64> {
        match count {
            0 => Vec::new(),
            1 => vec![self.lo],
            _ => {
                let step = self.width() / (count - 1) as f64;
                (0..count)
                    .map(|i| {
                        if i == count - 1 {
                            self.hi
                        } else {
                            self.lo + step * i as f64
                        }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub grid_points: usize,
    pub refine_iterations: usize,
    pub tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grid_points: 2001,
            refine_iterations: 60,
            tolerance: 1e-9,
        }
    }
}

impl OptimizerConfig {
    /// Coarser grid for parameter sweeps; golden refinement keeps the optimum sharp.
    pub fn sweep() -> Self {
        Self {
            grid_points: 201,
            refine_iterations: 60,
            tolerance: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(NumericsError::InvalidConfig("grid_points must be at least 2"));
        }
        if !(self.tolerance > 0.0) || !self.tolerance.is_finite() {
            return Err(NumericsError::InvalidConfig("tolerance must be positive"));
        }
        Ok(())
    }
}

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(x >= -PROBABILITY_SLACK && x <= 1.0 + PROBABILITY_SLACK) {
        return Err(NumericsError::OutOfUnitInterval(x));
    }
    let x = clamp01(x);
    // ln_1p keeps the complementary term accurate for tiny x
    let tail = if x >= 1.0 { 0.0 } else { -(1.0 - x) * (-x).ln_1p() / std::f64::consts::LN_2 };
    Ok(xlog2x_neg(x) + tail)
}

/// `-x log2 x` with the continuous extension at zero.
pub fn xlog2x_neg(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -x * x.log2()
    }
}

pub fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Grid scan followed by golden-section refinement around the best grid cell.
///
/// The returned value is never below the best grid value, so in particular it
/// dominates both endpoints. The tolerance is relative to the domain width.
pub fn maximize_scalar<F>(f: F, domain: Interval, cfg: &OptimizerConfig) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    cfg.validate()?;
    if domain.width() == 0.0 {
        return Ok((domain.lo, f(domain.lo)));
    }
    let grid = domain.linspace(cfg.grid_points);
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let (best_idx, best_val) = values
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        });

    let lo = grid[best_idx.saturating_sub(1)];
    let hi = grid[(best_idx + 1).min(grid.len() - 1)];
    let tol = cfg.tolerance * domain.width();
    let (x_ref, v_ref) = golden_section_max(&f, lo, hi, cfg.refine_iterations, tol);
    if v_ref > best_val {
        Ok((x_ref, v_ref))
    } else {
        Ok((grid[best_idx], best_val))
    }
}

/// Mirror of [`maximize_scalar`].
pub fn minimize_scalar<F>(f: F, domain: Interval, cfg: &OptimizerConfig) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let (x, v) = maximize_scalar(|x| -f(x), domain, cfg)?;
    Ok((x, -v))
}

fn golden_section_max<F>(f: &F, mut a: f64, mut b: f64, iterations: usize, tol: f64) -> (f64, f64)
where
    F: Fn(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iterations {
        if (b - a).abs() <= tol {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Central difference `(f(x+h) - f(x-h)) / 2h`.
pub fn finite_difference<F>(f: F, x: f64, h: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(NumericsError::InvalidStep(h));
    }
    if !x.is_finite() {
        return Err(NumericsError::NonFinite(x));
    }
    Ok((f(x + h) - f(x - h)) / (2.0 * h))
}

/// One-sided backward difference, second order: `(3f(x) - 4f(x-h) + f(x-2h)) / 2h`.
///
/// Used where the function is only defined to the left of `x` (e.g. at `x = 1`).
pub fn backward_difference<F>(f: F, x: f64, h: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(NumericsError::InvalidStep(h));
    }
    if !x.is_finite() {
        return Err(NumericsError::NonFinite(x));
    }
    Ok((3.0 * f(x) - 4.0 * f(x - h) + f(x - 2.0 * h)) / (2.0 * h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn binary_entropy_reference_points() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        // mpmath, 40 digits: 0.49991595816452799564...
        assert_abs_diff_eq!(binary_entropy(0.11).unwrap(), 0.499_915_958_164_528, epsilon = 1e-14);
        assert_abs_diff_eq!(binary_entropy(0.11).unwrap(), 0.49993, epsilon = 1e-4);
    }

    #[test]
    fn binary_entropy_domain() {
        assert!(binary_entropy(1.0 + 1e-13).is_ok());
        assert!(binary_entropy(-1e-13).is_ok());
        assert!(matches!(binary_entropy(1.1), Err(NumericsError::OutOfUnitInterval(_))));
        assert!(binary_entropy(-0.01).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp01(1.3), 1.0);
        assert_eq!(clamp01(-0.2), 0.0);
        assert_eq!(clamp01(0.4), 0.4);
    }

    #[test]
    fn interval_rejects_bad_bounds() {
        assert!(Interval::new(1.0, 0.0).is_err());
        assert!(Interval::new(0.0, f64::INFINITY).is_err());
        assert!(Interval::new(0.2, 0.2).is_ok());
        let g = Interval::new(0.0, 1.0).unwrap().linspace(5);
        assert_eq!(g, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn maximize_quadratic_interior() {
        let cfg = OptimizerConfig::default();
        let (arg, val) = maximize_scalar(|x| -(x - 0.3) * (x - 0.3), Interval::unit(), &cfg).unwrap();
        assert_abs_diff_eq!(arg, 0.3, epsilon = cfg.tolerance);
        assert!(val <= 0.0 && val > -1e-18);

        // an optimum that is not on the grid
        let (arg, _) = maximize_scalar(|x| -(x - 0.123_456_7f64).powi(2), Interval::unit(), &cfg).unwrap();
        assert_abs_diff_eq!(arg, 0.123_456_7, epsilon = 1e-8);
    }

    #[test]
    fn maximize_boundary() {
        let cfg = OptimizerConfig::default();
        let (arg, val) = maximize_scalar(|x| x, Interval::unit(), &cfg).unwrap();
        assert_eq!((arg, val), (1.0, 1.0));
    }

    #[test]
    fn maximize_log_inverse_at_open_end() {
        let cfg = OptimizerConfig::default();
        let dom = Interval::new(0.5 + 1e-4, 1.0).unwrap();
        let (arg, val) = maximize_scalar(|c| (1.0 / c).log2(), dom, &cfg).unwrap();
        assert_eq!(arg, 0.5 + 1e-4);
        // mpmath: 0.99971148984187641530...
        assert_abs_diff_eq!(val, 0.999_711_489_841_876_4, epsilon = 1e-14);
    }

    #[test]
    fn minimize_examples() {
        let cfg = OptimizerConfig::default();
        let (arg, _) = minimize_scalar(|x| (x - 0.7) * (x - 0.7), Interval::unit(), &cfg).unwrap();
        assert_abs_diff_eq!(arg, 0.7, epsilon = cfg.tolerance);
        let (arg, val) = minimize_scalar(|x| x, Interval::unit(), &cfg).unwrap();
        assert_eq!((arg, val), (0.0, 0.0));
    }

    #[test]
    fn optimizer_rejects_degenerate_grid() {
        let cfg = OptimizerConfig { grid_points: 1, ..Default::default() };
        assert!(maximize_scalar(|x| x, Interval::unit(), &cfg).is_err());
        let cfg = OptimizerConfig { tolerance: 0.0, ..Default::default() };
        assert!(minimize_scalar(|x| x, Interval::unit(), &cfg).is_err());
    }

    #[test]
    fn finite_difference_examples() {
        assert_abs_diff_eq!(finite_difference(|x| x * x, 3.0, 1e-5).unwrap(), 6.0, epsilon = 1e-8);
        assert_eq!(finite_difference(|_| 4.2, -7.0, 1e-3).unwrap(), 0.0);
        assert!(finite_difference(|x| x, 0.0, 0.0).is_err());
        assert!(finite_difference(|x| x, 0.0, -1.0).is_err());
        assert_abs_diff_eq!(backward_difference(|x| x * x * x, 1.0, 1e-5).unwrap(), 3.0, epsilon = 1e-8);
    }

    #[test]
    fn maximize_dominates_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let f = |x: f64| (7.0 * x).sin() * (1.0 - x) + 0.3 * (19.0 * x).cos();
        let dom = Interval::new(-0.5, 2.0).unwrap();
        let (_, best) = maximize_scalar(f, dom, &OptimizerConfig::default()).unwrap();
        for _ in 0..1000 {
            let x = rng.random_range(dom.lo()..=dom.hi());
            assert!(best >= f(x));
        }
        assert!(best >= f(dom.lo()) && best >= f(dom.hi()));
    }

    proptest! {
        #[test]
        fn binary_entropy_symmetric(x in 0.0f64..=1.0) {
            let a = binary_entropy(x).unwrap();
            let b = binary_entropy(1.0 - x).unwrap();
            prop_assert!((a - b).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn binary_entropy_concave(x in 0.0f64..=1.0, y in 0.0f64..=1.0, t in 0.0f64..=1.0) {
            let mid = binary_entropy(t * x + (1.0 - t) * y).unwrap();
            let chord = t * binary_entropy(x).unwrap() + (1.0 - t) * binary_entropy(y).unwrap();
            prop_assert!(mid >= chord - 1e-12);
        }
    }
}
