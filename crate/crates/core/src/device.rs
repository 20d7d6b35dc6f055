//! Simulated simplified devices built from orthogonal qubit sectors.
//!
//! A [`QubitBlockDevice`] lives on `D = ⊕_j C² ⊕ C²`: one qubit per block plus
//! a two-dimensional junk sector that always answers the preimage challenge
//! with the abstain outcome `2`. Inside block `j`:
//!
//! * the preimage measurement is the standard basis, outcomes `0` and `1`;
//! * the equation measurement accepts (outcome `0`) on
//!   `cos(θ_j/2)|0> + sin(θ_j/2)|1>`, so `θ_j` is the Bloch angle between
//!   the two bases;
//! * the state is `cos²χ |a><a| + sin²χ |a⊥><a⊥|`, the marginal of
//!   `cos χ |a>|0>_E + sin χ |a⊥>|1>_E`, with `|a>` the Bloch vector at polar
//!   angle `α` and azimuth `φ`.
//!
//! The junk sector holds `√w|0> + √(1-w)|1>` and accepts the equation test on
//! `|0>`, so `w` is its equation win probability.
//!
//! Exact entropies are evaluated against an adversary holding a purification
//! of the whole device state.

use crate::bound::{BoundError, WinningStats};
use crate::config::{ConfigError, KvConfig};
use crate::linalg::{
    c, commutator_defect, conditional_measurement_entropy, purify, CMatrix, DensityMatrix,
    LinalgError, Povm, C64, MAX_DIM,
};
use rand::{Rng, RngCore};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("device parameter {name} = {value} is out of range")]
    InvalidParameter { name: String, value: f64 },
    #[error("block and junk weights sum to {0}, expected 1")]
    WeightsDoNotSum(f64),
    #[error("device dimension {0} exceeds the oracle cap")]
    TooLarge(usize),
    #[error("device failed: {0}")]
    Failure(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Bound(#[from] BoundError),
}

pub type Result<T> = std::result::Result<T, DeviceError>;

const WEIGHT_TOL: f64 = 1e-10;

/// Which test the verifier asks for in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Challenge {
    Preimage,
    Equation,
}

/// A prover answering challenges round by round.
pub trait DeviceBehavior {
    /// Outcome in `{0, 1, 2}`; `2` is an invalid preimage.
    fn respond_preimage(&mut self, key: u64, rng: &mut dyn RngCore) -> Result<u8>;
    /// Outcome in `{0, 1}`; `0` is a valid equation.
    fn respond_equation(&mut self, key: u64, rng: &mut dyn RngCore) -> Result<u8>;
}

/// One round of interaction with `device`.
pub fn sample_round(
    device: &mut dyn DeviceBehavior,
    challenge: Challenge,
    key: u64,
    rng: &mut dyn RngCore,
) -> Result<u8> {
    match challenge {
        Challenge::Preimage => device.respond_preimage(key, rng),
        Challenge::Equation => device.respond_equation(key, rng),
    }
}

fn draw(probs: &[f64], rng: &mut dyn RngCore) -> u8 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k as u8;
        }
    }
    // rounding slack: fall back to the last outcome with positive weight
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1) as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub weight: f64,
    /// Bloch angle between the preimage and equation bases, in `[0, π]`.
    pub angle: f64,
    /// Polar angle of the dominant state vector, in `[0, π]`.
    pub polar: f64,
    pub azimuth: f64,
    /// Entanglement with the environment, in `[0, π/4]`.
    pub entanglement: f64,
}

impl Block {
    /// Unbiased bases with the state on the accepting equation vector.
    pub fn ideal(weight: f64) -> Self {
        Self { weight, angle: FRAC_PI_2, polar: FRAC_PI_2, azimuth: 0.0, entanglement: 0.0 }
    }

    fn validate(&self, j: usize) -> Result<()> {
        let checks = [
            ("weight", self.weight, 0.0, 1.0),
            ("angle", self.angle, 0.0, PI),
            ("polar", self.polar, 0.0, PI),
            ("entanglement", self.entanglement, 0.0, FRAC_PI_4),
        ];
        for (name, v, lo, hi) in checks {
            if !(v.is_finite() && v >= lo - 1e-15 && v <= hi + 1e-15) {
                return Err(DeviceError::InvalidParameter { name: format!("block.{j}.{name}"), value: v });
            }
        }
        if !self.azimuth.is_finite() {
            return Err(DeviceError::InvalidParameter {
                name: format!("block.{j}.azimuth"),
                value: self.azimuth,
            });
        }
        Ok(())
    }

    /// Normalised block state on `C²`.
    pub fn state(&self) -> CMatrix {
        let (ca, sa) = ((self.polar / 2.0).cos(), (self.polar / 2.0).sin());
        let phase = C64::from_polar(1.0, self.azimuth);
        let a = [c(ca), phase * sa];
        let a_perp = [-phase.conj() * sa, c(ca)];
        let (c2, s2) = (self.entanglement.cos().powi(2), self.entanglement.sin().powi(2));
        CMatrix::from_fn(2, 2, |r, k| {
            a[r] * a[k].conj() * c(c2) + a_perp[r] * a_perp[k].conj() * c(s2)
        })
    }

    /// Accepting equation projector on `C²`.
    pub fn equation_projector(&self) -> CMatrix {
        let m = [(self.angle / 2.0).cos(), (self.angle / 2.0).sin()];
        CMatrix::from_fn(2, 2, |r, k| c(m[r] * m[k]))
    }
}

/// Device made of weighted orthogonal qubit blocks plus a junk sector.
#[derive(Debug, Clone, PartialEq)]
pub struct QubitBlockDevice {
    blocks: Vec<Block>,
    junk_weight: f64,
    junk_equation_win: f64,
    preimage_probs: [f64; 3],
    equation_probs: [f64; 2],
}

impl QubitBlockDevice {
    pub fn new(blocks: Vec<Block>, junk_weight: f64, junk_equation_win: f64) -> Result<Self> {
        for (j, b) in blocks.iter().enumerate() {
            b.validate(j)?;
        }
        for (name, v) in [("junk_weight", junk_weight), ("junk_equation_win", junk_equation_win)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(DeviceError::InvalidParameter { name: name.to_string(), value: v });
            }
        }
        let total: f64 = blocks.iter().map(|b| b.weight).sum::<f64>() + junk_weight;
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(DeviceError::WeightsDoNotSum(total));
        }
        let dim = 2 * blocks.len() + 2;
        if dim > MAX_DIM {
            return Err(DeviceError::TooLarge(dim));
        }
        let mut dev = Self {
            blocks,
            junk_weight,
            junk_equation_win,
            preimage_probs: [0.0; 3],
            equation_probs: [0.0; 2],
        };
        let state = dev.state()?;
        let pre = dev.preimage_povm().probabilities(&state)?;
        let eq = dev.equation_povm().probabilities(&state)?;
        dev.preimage_probs = [pre[0].max(0.0), pre[1].max(0.0), pre[2].max(0.0)];
        dev.equation_probs = [eq[0].max(0.0), eq[1].max(0.0)];
        Ok(dev)
    }

    /// Single ideal block: always passes both tests, preimage outcome uniform.
    pub fn ideal() -> Self {
        Self::new(vec![Block::ideal(1.0)], 0.0, 0.0).expect("ideal device is valid")
    }

    /// Pure junk: never produces a valid preimage or equation.
    pub fn always_fail() -> Self {
        Self::new(Vec::new(), 1.0, 0.0).expect("junk device is valid")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn junk_weight(&self) -> f64 {
        self.junk_weight
    }

    pub fn junk_equation_win(&self) -> f64 {
        self.junk_equation_win
    }

    pub fn dim(&self) -> usize {
        2 * self.blocks.len() + 2
    }

    fn junk_offset(&self) -> usize {
        2 * self.blocks.len()
    }

    /// Block-diagonal device state on `D`.
    pub fn state(&self) -> Result<DensityMatrix> {
        let d = self.dim();
        let mut m = CMatrix::zeros(d, d);
        for (j, b) in self.blocks.iter().enumerate() {
            let s = b.state() * c(b.weight);
            m.view_mut((2 * j, 2 * j), (2, 2)).copy_from(&s);
        }
        let u = [self.junk_equation_win.sqrt(), (1.0 - self.junk_equation_win).sqrt()];
        let o = self.junk_offset();
        for r in 0..2 {
            for k in 0..2 {
                m[(o + r, o + k)] = c(self.junk_weight * u[r] * u[k]);
            }
        }
        Ok(DensityMatrix::new(m)?)
    }

    /// Three-outcome preimage measurement `{Π⁰, Π¹, Π²}`.
    pub fn preimage_povm(&self) -> Povm {
        let d = self.dim();
        let mut e = vec![CMatrix::zeros(d, d), CMatrix::zeros(d, d), CMatrix::zeros(d, d)];
        for j in 0..self.blocks.len() {
            e[0][(2 * j, 2 * j)] = c(1.0);
            e[1][(2 * j + 1, 2 * j + 1)] = c(1.0);
        }
        let o = self.junk_offset();
        e[2][(o, o)] = c(1.0);
        e[2][(o + 1, o + 1)] = c(1.0);
        Povm::new(e).expect("standard-basis projectors")
    }

    /// Two-outcome equation measurement `{M⁰, M¹}`.
    pub fn equation_povm(&self) -> Povm {
        let d = self.dim();
        let mut accept = CMatrix::zeros(d, d);
        for (j, b) in self.blocks.iter().enumerate() {
            accept.view_mut((2 * j, 2 * j), (2, 2)).copy_from(&b.equation_projector());
        }
        let o = self.junk_offset();
        accept[(o, o)] = c(1.0);
        let reject = CMatrix::identity(d, d) - &accept;
        Povm::new(vec![accept, reject]).expect("complementary projectors")
    }

    pub fn preimage_probabilities(&self) -> [f64; 3] {
        self.preimage_probs
    }

    pub fn equation_probabilities(&self) -> [f64; 2] {
        self.equation_probs
    }

    pub fn from_config(cfg: &KvConfig) -> Result<(Self, Option<u64>)> {
        cfg.check_keys(is_device_key)?;
        let count: usize = cfg.require("blocks")?;
        let junk_weight = cfg.get("junk_weight")?.unwrap_or(0.0);
        let junk_equation_win = cfg.get("junk_equation_win")?.unwrap_or(0.0);
        let mut blocks = Vec::with_capacity(count);
        for j in 0..count {
            let key = |f: &str| format!("block.{j}.{f}");
            let weight = match cfg.get(&key("weight"))? {
                Some(w) => w,
                None if count == 1 => 1.0 - junk_weight,
                None => return Err(ConfigError::MissingKey(key("weight")).into()),
            };
            let ideal = Block::ideal(weight);
            blocks.push(Block {
                weight,
                angle: cfg.get_angle(&key("angle"))?.unwrap_or(ideal.angle),
                polar: cfg.get_angle(&key("polar"))?.unwrap_or(ideal.polar),
                azimuth: cfg.get_angle(&key("azimuth"))?.unwrap_or(ideal.azimuth),
                entanglement: cfg.get_angle(&key("entanglement"))?.unwrap_or(ideal.entanglement),
            });
        }
        if let Some(k) = cfg.keys().find(|k| block_index(k).is_some_and(|j| j >= count)) {
            return Err(ConfigError::UnknownKey(k.to_string()).into());
        }
        let seed = cfg.get("seed")?;
        Ok((Self::new(blocks, junk_weight, junk_equation_win)?, seed))
    }

    /// Inverse of [`QubitBlockDevice::from_config`].
    pub fn to_config_text(&self, seed: Option<u64>) -> String {
        let mut out = format!("blocks = {}\n", self.blocks.len());
        for (j, b) in self.blocks.iter().enumerate() {
            out += &format!(
                "block.{j}.weight = {}\nblock.{j}.angle = {}\nblock.{j}.polar = {}\nblock.{j}.azimuth = {}\nblock.{j}.entanglement = {}\n",
                b.weight, b.angle, b.polar, b.azimuth, b.entanglement
            );
        }
        out += &format!("junk_weight = {}\njunk_equation_win = {}\n", self.junk_weight, self.junk_equation_win);
        if let Some(s) = seed {
            out += &format!("seed = {s}\n");
        }
        out
    }
}

const BLOCK_FIELDS: [&str; 5] = ["weight", "angle", "polar", "azimuth", "entanglement"];

fn block_index(key: &str) -> Option<usize> {
    let rest = key.strip_prefix("block.")?;
    let (idx, field) = rest.split_once('.')?;
    BLOCK_FIELDS.contains(&field).then(|| idx.parse().ok()).flatten()
}

fn is_device_key(key: &str) -> bool {
    matches!(key, "blocks" | "junk_weight" | "junk_equation_win" | "seed") || block_index(key).is_some()
}

impl DeviceBehavior for QubitBlockDevice {
    fn respond_preimage(&mut self, _key: u64, rng: &mut dyn RngCore) -> Result<u8> {
        Ok(draw(&self.preimage_probs, rng))
    }

    fn respond_equation(&mut self, _key: u64, rng: &mut dyn RngCore) -> Result<u8> {
        Ok(draw(&self.equation_probs, rng))
    }
}

/// IID device specified only by its two win probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsDevice {
    pub preimage_win: f64,
    pub equation_win: f64,
}

impl StatsDevice {
    pub fn new(preimage_win: f64, equation_win: f64) -> Result<Self> {
        for (name, v) in [("preimage_win", preimage_win), ("equation_win", equation_win)] {
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return Err(DeviceError::InvalidParameter { name: name.to_string(), value: v });
            }
        }
        Ok(Self { preimage_win, equation_win })
    }

    /// Both tests won with probability `omega`.
    pub fn uniform(omega: f64) -> Result<Self> {
        Self::new(omega, omega)
    }
}

impl DeviceBehavior for StatsDevice {
    fn respond_preimage(&mut self, _key: u64, rng: &mut dyn RngCore) -> Result<u8> {
        let half = self.preimage_win / 2.0;
        Ok(draw(&[half, half, 1.0 - self.preimage_win], rng))
    }

    fn respond_equation(&mut self, _key: u64, rng: &mut dyn RngCore) -> Result<u8> {
        Ok(draw(&[self.equation_win, 1.0 - self.equation_win], rng))
    }
}

/// Winning probabilities and commutator defect of a device.
///
/// The defect is evaluated on the state with the abstain sector projected out
/// and renormalised; it is zero when that state is empty.
pub fn device_stats(dev: &QubitBlockDevice) -> Result<WinningStats> {
    let state = dev.state()?;
    let pi = dev.preimage_povm();
    let m = dev.equation_povm();
    let deficit_m = state.expectation(m.element(1)).max(0.0);
    let kept = 1.0 - dev.junk_weight;
    let mu = if kept <= 1e-15 {
        0.0
    } else {
        let d = dev.dim();
        let keep = CMatrix::identity(d, d) - pi.element(2);
        let psi = DensityMatrix::new(&keep * state.matrix() * &keep * c(1.0 / kept))?;
        commutator_defect(&pi, &m, &psi)?
    };
    Ok(WinningStats::from_deficits(dev.junk_weight, deficit_m.min(1.0), mu)?)
}

fn measured_entropy(dev: &QubitBlockDevice, povm: &Povm) -> Result<f64> {
    let p = purify(&dev.state()?)?;
    Ok(conditional_measurement_entropy(&p.state, povm, (p.system_dim, p.env_dim))?)
}

/// Exact `H(Π|E)` of the preimage outcome against a purifying adversary.
pub fn exact_round_entropy(dev: &QubitBlockDevice) -> Result<f64> {
    measured_entropy(dev, &dev.preimage_povm())
}

/// Exact `H(M|E)` of the equation outcome against a purifying adversary.
pub fn exact_equation_entropy(dev: &QubitBlockDevice) -> Result<f64> {
    measured_entropy(dev, &dev.equation_povm())
}

/// Families of random devices used by the oracle suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceFamily {
    /// Arbitrary angles, states and junk weight up to 0.3.
    Generic,
    /// Small perturbations of the ideal device, where the bounds are non-trivial.
    NearIdeal,
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo_exp: f64, hi_exp: f64) -> f64 {
    10f64.powf(rng.random_range(lo_exp..hi_exp))
}

fn signed<R: Rng + ?Sized>(rng: &mut R, x: f64) -> f64 {
    if rng.random::<bool>() {
        x
    } else {
        -x
    }
}

/// Random device with one to three blocks. With `unbiased` every block has
/// angle `π/2`, which makes the commutator defect vanish.
pub fn random_device<R: Rng + ?Sized>(
    rng: &mut R,
    family: DeviceFamily,
    unbiased: bool,
) -> QubitBlockDevice {
    let count = rng.random_range(1..=3usize);
    let junk_weight = match family {
        DeviceFamily::Generic => rng.random_range(0.0..0.3),
        DeviceFamily::NearIdeal => {
            if rng.random::<bool>() {
                0.0
            } else {
                log_uniform(rng, -16.0, -11.0)
            }
        }
    };
    let raw: Vec<f64> = (0..count).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let blocks = raw
        .iter()
        .map(|w| {
            let weight = w / total * (1.0 - junk_weight);
            match family {
                DeviceFamily::Generic => Block {
                    weight,
                    angle: if unbiased { FRAC_PI_2 } else { rng.random_range(0.0..=PI) },
                    polar: rng.random_range(0.0..=PI),
                    azimuth: rng.random_range(0.0..2.0 * PI),
                    entanglement: rng.random_range(0.0..=FRAC_PI_4),
                },
                DeviceFamily::NearIdeal => {
                    let tilt = log_uniform(rng, -8.0, -3.0);
                    Block {
                        weight,
                        angle: if unbiased {
                            FRAC_PI_2
                        } else {
                            let d = log_uniform(rng, -8.0, -3.0);
                            FRAC_PI_2 + signed(rng, d)
                        },
                        polar: FRAC_PI_2 + signed(rng, tilt),
                        azimuth: {
                            let d = log_uniform(rng, -8.0, -3.0);
                            signed(rng, d)
                        },
                        entanglement: log_uniform(rng, -8.0, -3.0),
                    }
                }
            }
        })
        .collect();
    let junk_equation_win = rng.random_range(0.0..=1.0);
    // Rounding in the weights is far below the validation tolerance.
    QubitBlockDevice::new(blocks, junk_weight, junk_equation_win).expect("random device is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bound::{continuity_penalty_deficit, g_fixed_c};
    use crate::linalg::{pinch, von_neumann_entropy};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ideal_device_stats() {
        let s = device_stats(&QubitBlockDevice::ideal()).unwrap();
        assert_eq!(s.omega_p(), 1.0);
        assert_abs_diff_eq!(s.omega_m(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(exact_round_entropy(&QubitBlockDevice::ideal()).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn always_fail_stats() {
        let dev = QubitBlockDevice::always_fail();
        let s = device_stats(&dev).unwrap();
        assert_eq!(s.omega_p(), 0.0);
        assert_eq!(s.mu(), 0.0);
        assert_eq!(dev.preimage_probabilities(), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn preimage_eigenstate_stats() {
        let block = Block { polar: 0.0, ..Block::ideal(1.0) };
        let dev = QubitBlockDevice::new(vec![block], 0.0, 0.0).unwrap();
        let s = device_stats(&dev).unwrap();
        assert_abs_diff_eq!(s.omega_m(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mu(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn aligned_bases_have_maximal_defect() {
        let block = Block { angle: 0.0, polar: 0.0, ..Block::ideal(1.0) };
        let dev = QubitBlockDevice::new(vec![block], 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(device_stats(&dev).unwrap().mu(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn maximally_entangled_block_has_no_entropy() {
        let block = Block { polar: 0.0, entanglement: FRAC_PI_4, ..Block::ideal(1.0) };
        let dev = QubitBlockDevice::new(vec![block], 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(exact_round_entropy(&dev).unwrap(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn validation() {
        assert!(matches!(
            QubitBlockDevice::new(vec![Block::ideal(0.5)], 0.0, 0.0),
            Err(DeviceError::WeightsDoNotSum(_))
        ));
        let bad = Block { entanglement: 1.0, ..Block::ideal(1.0) };
        assert!(QubitBlockDevice::new(vec![bad], 0.0, 0.0).is_err());
        assert!(QubitBlockDevice::new(vec![Block::ideal(1.0)], 0.0, 1.5).is_err());
        assert!(matches!(
            QubitBlockDevice::new(vec![Block::ideal(1.0 / 32.0); 32], 0.0, 0.0),
            Err(DeviceError::TooLarge(66))
        ));
    }

    /// `S(pinched φ) - S(φ)` equals `H(Π|E)` for a purifying `E`.
    fn pinched_entropy(dev: &QubitBlockDevice, povm: &Povm) -> f64 {
        let state = dev.state().unwrap();
        let dephased = pinch(&state, povm).unwrap();
        von_neumann_entropy(&dephased).unwrap() - von_neumann_entropy(&state).unwrap()
    }

    #[test]
    fn exact_entropy_matches_pinching_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for i in 0..60 {
            let family = if i % 2 == 0 { DeviceFamily::Generic } else { DeviceFamily::NearIdeal };
            let dev = random_device(&mut rng, family, false);
            let a = exact_round_entropy(&dev).unwrap();
            let b = pinched_entropy(&dev, &dev.preimage_povm());
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            let a = exact_equation_entropy(&dev).unwrap();
            let b = pinched_entropy(&dev, &dev.equation_povm());
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn block_expectations_decompose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let dev = random_device(&mut rng, DeviceFamily::Generic, false);
            let state = dev.state().unwrap();
            let m0 = dev.equation_povm().element(0).clone();
            let total = state.expectation(&m0);
            let parts: f64 = dev
                .blocks()
                .iter()
                .map(|b| b.weight * (b.equation_projector() * b.state()).trace().re)
                .sum::<f64>()
                + dev.junk_weight() * dev.junk_equation_win();
            assert!((total - parts).abs() <= 1e-12);
        }
    }

    #[test]
    fn defect_matches_naive_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let dev = random_device(&mut rng, DeviceFamily::Generic, false);
            let s = device_stats(&dev).unwrap();
            // per block: Σ_b <b|M0|b><b|ρ|b>, weighted and renormalised
            let mut acc = 0.0;
            for b in dev.blocks() {
                let m = b.equation_projector();
                let r = b.state();
                for k in 0..2 {
                    acc += b.weight * m[(k, k)].re * r[(k, k)].re;
                }
            }
            let expect = (0.5 - acc / (1.0 - dev.junk_weight())).abs();
            assert!((s.mu() - expect).abs() <= 1e-12, "{} vs {expect}", s.mu());
        }
    }

    #[test]
    fn bound_never_exceeds_exact_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut positive = 0;
        for i in 0..100 {
            let family = if i % 3 == 0 { DeviceFamily::Generic } else { DeviceFamily::NearIdeal };
            let dev = random_device(&mut rng, family, false);
            let s = device_stats(&dev).unwrap();
            let exact = exact_round_entropy(&dev).unwrap();
            let penalty = continuity_penalty_deficit(s.deficit_p()).unwrap();
            for k in 0..20 {
                let cc = 0.5 + 0.5 * (k + 1) as f64 / 20.0;
                let b = g_fixed_c(&s, cc).unwrap() - penalty;
                if b > 0.0 {
                    positive += 1;
                }
                assert!(b <= exact + 1e-9, "device {i}, c {cc}: {b} > {exact}");
            }
        }
        assert!(positive > 0);
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ideal = QubitBlockDevice::ideal();
        let n = 10_000;
        let wins = (0..n).filter(|_| ideal.respond_equation(0, &mut rng).unwrap() == 0).count();
        assert_eq!(wins, n);
        let zeros = (0..n).filter(|_| ideal.respond_preimage(0, &mut rng).unwrap() == 0).count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 0.02);
        let mut junk = QubitBlockDevice::always_fail();
        assert!((0..1000).all(|_| sample_round(&mut junk, Challenge::Preimage, 0, &mut rng).unwrap() == 2));
    }

    #[test]
    fn sampling_matches_born_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut dev = random_device(&mut rng, DeviceFamily::Generic, false);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[dev.respond_preimage(0, &mut rng).unwrap() as usize] += 1;
        }
        for (k, &p) in dev.preimage_probabilities().iter().enumerate() {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[k] as f64 / n as f64 - p).abs() <= 3.0 * sigma + 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dev = StatsDevice::uniform(0.7).unwrap();
            (0..200).map(|_| dev.respond_preimage(0, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn config_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dev = random_device(&mut rng, DeviceFamily::Generic, false);
        let text = dev.to_config_text(Some(9));
        let (back, seed) = QubitBlockDevice::from_config(&KvConfig::parse(&text).unwrap()).unwrap();
        assert_eq!(seed, Some(9));
        assert_eq!(back, dev);
    }

    #[test]
    fn config_defaults_and_errors() {
        let cfg = KvConfig::parse("blocks = 1\nblock.0.angle = pi/2\n").unwrap();
        let (dev, seed) = QubitBlockDevice::from_config(&cfg).unwrap();
        assert_eq!(seed, None);
        assert_eq!(dev, QubitBlockDevice::ideal());
        let cfg = KvConfig::parse("blocks = 1\ncolour = red\n").unwrap();
        assert!(matches!(QubitBlockDevice::from_config(&cfg), Err(DeviceError::Config(_))));
        let cfg = KvConfig::parse("blocks = 1\nblock.1.weight = 0.5\n").unwrap();
        assert!(QubitBlockDevice::from_config(&cfg).is_err());
        let cfg = KvConfig::parse("blocks = 2\nblock.0.weight = 0.5\n").unwrap();
        assert!(QubitBlockDevice::from_config(&cfg).is_err());
    }
}
