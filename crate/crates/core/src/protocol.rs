//! The multi-round test-or-generate protocol run against a simulated device.
//!
//! Each round draws, from the verifier's stream and in this order, a key, the
//! round type `G` (test with probability `γ`) and, in test rounds, the test
//! type `T` (equation with probability `β`). The device answers from its own
//! stream so its randomness never shifts the verifier's draws.
//!
//! Unset variables are `None`, standing for `⊥`.

use crate::device::{sample_round, Challenge, DeviceBehavior};
use crate::eat::{certified_min_entropy, ChainRuleTerm, EatError, EatParams, TradeoffFunction, WDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("{0} rounds exceed the simulation limit of {MAX_ROUNDS}")]
    TooManyRounds(u128),
    #[error("transcript aborted; nothing to certify")]
    Aborted,
    #[error("audit needs at least {MIN_AUDIT_ROUNDS} rounds, got {0}")]
    InsufficientSamples(usize),
    #[error("transcript line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Eat(#[from] EatError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

pub const MAX_ROUNDS: u128 = 1 << 32;
pub const MIN_AUDIT_ROUNDS: usize = 1000;
/// Family-wise significance of [`markov_condition_audit`].
pub const AUDIT_SIGNIFICANCE: f64 = 0.01;
pub const AUDIT_LAGS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyMode {
    /// A fresh key every round.
    #[default]
    Fresh,
    /// One key drawn before the first round and reused.
    Reuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundRecord {
    pub index: u64,
    pub key: u64,
    /// `0` for a test round, `1` for a generation round.
    pub g: u8,
    /// `1` for the equation test.
    pub t: Option<u8>,
    pub pi_hat: Option<u8>,
    pub m_hat: Option<u8>,
    pub w: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcript {
    pub params: EatParams,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub aborted: bool,
    /// Set when the device failed and the run stopped early.
    pub failure: Option<String>,
}

/// Largest `δ` for which `Pr[Σ W < (ωγ - δ) n] ≤ eps` by Hoeffding, `√(ln(1/eps) / 2n)`.
pub fn hoeffding_delta(n: u128, eps: f64) -> f64 {
    ((1.0 / eps).ln() / (2.0 * n as f64)).sqrt()
}

/// Number of test-round wins below which the run aborts, `(ω_exp γ - δ_est) n`.
pub fn abort_threshold(params: &EatParams) -> f64 {
    (params.omega_exp * params.gamma - params.delta_est) * params.n as f64
}

pub fn test_wins(rounds: &[RoundRecord]) -> u64 {
    rounds.iter().filter(|r| r.g == 0 && r.w == Some(1)).count() as u64
}

/// Recompute the abort decision from raw records.
pub fn abort_decision(params: &EatParams, rounds: &[RoundRecord]) -> bool {
    (test_wins(rounds) as f64) < abort_threshold(params)
}

fn device_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub fn run_protocol(device: &mut dyn DeviceBehavior, params: &EatParams, seed: u64) -> Result<Transcript> {
    run_protocol_with(device, params, seed, KeyMode::Fresh)
}

pub fn run_protocol_with(
    device: &mut dyn DeviceBehavior,
    params: &EatParams,
    seed: u64,
    keys: KeyMode,
) -> Result<Transcript> {
    params.validate()?;
    if params.n > MAX_ROUNDS {
        return Err(ProtocolError::TooManyRounds(params.n));
    }
    let mut verifier = ChaCha8Rng::seed_from_u64(seed);
    let mut prover = device_stream(seed);
    let shared_key: u64 = verifier.random();
    let mut rounds = Vec::with_capacity(params.n as usize);
    let mut failure = None;
    for i in 0..params.n as u64 {
        let key = match keys {
            KeyMode::Fresh => verifier.random(),
            KeyMode::Reuse => shared_key,
        };
        let test = verifier.random_bool(params.gamma);
        let equation = test && verifier.random_bool(params.beta);
        let mut rec = RoundRecord { index: i, key, g: u8::from(!test), t: Some(u8::from(equation)), pi_hat: None, m_hat: None, w: None };
        let challenge = if equation { Challenge::Equation } else { Challenge::Preimage };
        match sample_round(device, challenge, key, &mut prover) {
            Ok(out) if equation => {
                let m = u8::from(out == 0);
                rec.m_hat = Some(m);
                rec.w = Some(m);
            }
            Ok(out) => {
                rec.pi_hat = Some(out);
                if test {
                    rec.w = Some(u8::from(out != 2));
                }
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
        rounds.push(rec);
    }
    let aborted = failure.is_some() || abort_decision(params, &rounds);
    Ok(Transcript { params: *params, seed, rounds, aborted, failure })
}

/// Which rounds enter a frequency count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restrict {
    All,
    TestOnly,
}

/// Counts of `W` over `{⊥, 0, 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreqDistribution {
    pub counts: [u64; 3],
    pub n: u64,
}

impl FreqDistribution {
    pub fn bottom(&self) -> f64 {
        self.fraction(0)
    }

    pub fn lose(&self) -> f64 {
        self.fraction(1)
    }

    pub fn win(&self) -> f64 {
        self.fraction(2)
    }

    fn fraction(&self, k: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.counts[k] as f64 / self.n as f64
        }
    }

    pub fn to_distribution(&self) -> std::result::Result<WDistribution, EatError> {
        WDistribution::new(self.bottom(), self.lose(), self.win())
    }
}

pub fn freq_of(transcript: &Transcript, restrict: Restrict) -> FreqDistribution {
    let mut counts = [0u64; 3];
    let mut n = 0;
    for r in &transcript.rounds {
        if restrict == Restrict::TestOnly && r.g != 0 {
            continue;
        }
        n += 1;
        match r.w {
            None => counts[0] += 1,
            Some(0) => counts[1] += 1,
            Some(_) => counts[2] += 1,
        }
    }
    FreqDistribution { counts, n }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certification {
    /// Certified smooth min-entropy of the generation outputs, in bits.
    pub entropy: f64,
    /// Number of generation-round outputs.
    pub output_len: u64,
}

/// Certified entropy of a completed run. The bound depends on the abort
/// threshold built into the parameters, not on the realised frequencies.
pub fn certify(transcript: &Transcript, tf: &TradeoffFunction, chain: ChainRuleTerm) -> Result<Certification> {
    if transcript.aborted {
        return Err(ProtocolError::Aborted);
    }
    let entropy = certified_min_entropy(&transcript.params, tf, chain)?;
    let output_len = transcript.rounds.iter().filter(|r| r.g == 1).count() as u64;
    Ok(Certification { entropy, output_len })
}

/// One chi-square independence test of the audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditTest {
    pub current: &'static str,
    pub previous: &'static str,
    pub lag: usize,
    /// `None` when one of the variables is constant.
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub tests: Vec<AuditTest>,
    /// Per-test significance after the Bonferroni split.
    pub threshold: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.tests.iter().all(|t| t.p_value.is_none_or(|p| p >= self.threshold))
    }

    pub fn min_p_value(&self) -> Option<f64> {
        self.tests.iter().filter_map(|t| t.p_value).reduce(f64::min)
    }
}

type Field = (&'static str, fn(&RoundRecord) -> u8);

const BOTTOM: u8 = 3;

fn code(v: Option<u8>) -> u8 {
    v.unwrap_or(BOTTOM)
}

const FRESH_FIELDS: [Field; 3] = [
    ("K", |r| (r.key & 1) as u8),
    ("G", |r| r.g),
    ("T", |r| code(r.t)),
];

const PAST_FIELDS: [Field; 6] = [
    ("K", |r| (r.key & 1) as u8),
    ("G", |r| r.g),
    ("T", |r| code(r.t)),
    ("pi_hat", |r| code(r.pi_hat)),
    ("m_hat", |r| code(r.m_hat)),
    ("W", |r| code(r.w)),
];

/// Pearson chi-square p-value for a contingency table over small alphabets.
fn independence_p_value(pairs: impl Iterator<Item = (u8, u8)>) -> Option<f64> {
    let mut table = [[0u64; 4]; 4];
    for (a, b) in pairs {
        table[a as usize][b as usize] += 1;
    }
    let rows: Vec<usize> = (0..4).filter(|&r| table[r].iter().sum::<u64>() > 0).collect();
    let cols: Vec<usize> = (0..4).filter(|&c| (0..4).map(|r| table[r][c]).sum::<u64>() > 0).collect();
    if rows.len() < 2 || cols.len() < 2 {
        return None;
    }
    let total: u64 = table.iter().flatten().sum();
    let mut stat = 0.0;
    for &r in &rows {
        let rs = table[r].iter().sum::<u64>() as f64;
        for &c in &cols {
            let cs = (0..4).map(|k| table[k][c]).sum::<u64>() as f64;
            let expected = rs * cs / total as f64;
            stat += (table[r][c] as f64 - expected).powi(2) / expected;
        }
    }
    let df = ((rows.len() - 1) * (cols.len() - 1)) as f64;
    let dist = ChiSquared::new(df).expect("positive degrees of freedom");
    Some(dist.sf(stat))
}

/// Tests whether the verifier's fresh choices `(K, G, T)` of each round are
/// independent of every recorded variable of the previous rounds, at lags
/// `1..=3`. `K` enters through its lowest bit.
pub fn markov_condition_audit(transcript: &Transcript) -> Result<AuditReport> {
    let rounds = &transcript.rounds;
    if rounds.len() < MIN_AUDIT_ROUNDS {
        return Err(ProtocolError::InsufficientSamples(rounds.len()));
    }
    let count = FRESH_FIELDS.len() * PAST_FIELDS.len() * AUDIT_LAGS;
    let mut tests = Vec::with_capacity(count);
    for (current, now) in FRESH_FIELDS {
        for (previous, before) in PAST_FIELDS {
            for lag in 1..=AUDIT_LAGS {
                let pairs = rounds.windows(lag + 1).map(|w| (now(&w[lag]), before(&w[0])));
                tests.push(AuditTest { current, previous, lag, p_value: independence_p_value(pairs) });
            }
        }
    }
    Ok(AuditReport { tests, threshold: AUDIT_SIGNIFICANCE / count as f64 })
}

fn symbol(v: Option<u8>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

pub const TRANSCRIPT_HEADER: &str = "i,K,G,T,pi_hat,m_hat,W";

impl Transcript {
    /// Line-oriented text: two `#` header lines, optional `# failure`, the
    /// column header, then one round per line with `-` for `⊥`.
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = String::with_capacity(32 * (self.rounds.len() + 4));
        let _ = writeln!(out, "# seed={} aborted={}", self.seed, self.aborted);
        let _ = writeln!(
            out,
            "# n={} gamma={} beta={} eps_s={} p_omega={} omega_exp={} delta_est={} xi_slack={}",
            p.n, p.gamma, p.beta, p.eps_s, p.p_omega, p.omega_exp, p.delta_est, p.xi_slack
        );
        if let Some(f) = &self.failure {
            let _ = writeln!(out, "# failure {}", f.replace('\n', " "));
        }
        out.push_str(TRANSCRIPT_HEADER);
        out.push('\n');
        for r in &self.rounds {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.index,
                r.key,
                r.g,
                symbol(r.t),
                symbol(r.pi_hat),
                symbol(r.m_hat),
                symbol(r.w)
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, reason: &str| ProtocolError::Parse { line, reason: reason.to_string() };
        let mut fields = std::collections::BTreeMap::new();
        let mut failure = None;
        let mut rounds = Vec::new();
        let mut seen_header = false;
        for (idx, line) in text.lines().enumerate() {
            let ln = idx + 1;
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(f) = meta.strip_prefix("failure ") {
                    failure = Some(f.to_string());
                    continue;
                }
                for tok in meta.split_whitespace() {
                    let (k, v) = tok.split_once('=').ok_or_else(|| err(ln, "expected key=value"))?;
                    fields.insert(k.to_string(), v.to_string());
                }
            } else if line == TRANSCRIPT_HEADER {
                seen_header = true;
            } else if seen_header {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() != 7 {
                    return Err(err(ln, "expected 7 columns"));
                }
                let opt = |s: &str| -> Result<Option<u8>> {
                    if s == "-" {
                        Ok(None)
                    } else {
                        s.parse().map(Some).map_err(|_| err(ln, "bad symbol"))
                    }
                };
                rounds.push(RoundRecord {
                    index: cols[0].parse().map_err(|_| err(ln, "bad index"))?,
                    key: cols[1].parse().map_err(|_| err(ln, "bad key"))?,
                    g: cols[2].parse().map_err(|_| err(ln, "bad G"))?,
                    t: opt(cols[3])?,
                    pi_hat: opt(cols[4])?,
                    m_hat: opt(cols[5])?,
                    w: opt(cols[6])?,
                });
            } else {
                return Err(err(ln, "unexpected line before the column header"));
            }
        }
        if !seen_header {
            return Err(err(0, "missing column header"));
        }
        fn get<T: std::str::FromStr>(fields: &std::collections::BTreeMap<String, String>, k: &str) -> Result<T> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| ProtocolError::Parse { line: 0, reason: format!("missing or bad `{k}`") })
        }
        let params = EatParams {
            n: get(&fields, "n")?,
            gamma: get(&fields, "gamma")?,
            beta: get(&fields, "beta")?,
            eps_s: get(&fields, "eps_s")?,
            p_omega: get(&fields, "p_omega")?,
            omega_exp: get(&fields, "omega_exp")?,
            delta_est: get(&fields, "delta_est")?,
            xi_slack: get(&fields, "xi_slack")?,
        };
        Ok(Self { params, seed: get(&fields, "seed")?, rounds, aborted: get(&fields, "aborted")?, failure })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bound::BoundConfig;
    use crate::device::{DeviceError, QubitBlockDevice, StatsDevice};
    use rand::RngCore;

    fn params(n: u128, gamma: f64, omega_exp: f64, delta_est: f64) -> EatParams {
        EatParams { n, gamma, beta: 0.045, eps_s: 1e-5, p_omega: 1e-5, omega_exp, delta_est, xi_slack: 0.0 }
    }

    #[test]
    fn ideal_device_never_aborts() {
        let p = params(10_000, 0.5, 1.0, 0.05);
        for seed in 0..100 {
            let t = run_protocol(&mut QubitBlockDevice::ideal(), &p, seed).unwrap();
            assert!(!t.aborted);
            assert_eq!(t.rounds.len(), 10_000);
        }
    }

    #[test]
    fn always_fail_device_aborts() {
        let t = run_protocol(&mut QubitBlockDevice::always_fail(), &params(1000, 0.5, 0.9, 0.05), 1).unwrap();
        assert!(t.aborted);
        assert_eq!(test_wins(&t.rounds), 0);
    }

    #[test]
    fn threshold_substitution() {
        assert!((abort_threshold(&params(1000, 0.5, 0.95, 0.05)) - 425.0).abs() < 1e-9);
    }

    #[test]
    fn record_invariants_and_abort_exactness() {
        let p = params(5000, 0.3, 0.9, 0.02);
        for seed in 0..10 {
            let t = run_protocol(&mut StatsDevice::uniform(0.9).unwrap(), &p, seed).unwrap();
            assert_eq!(t.aborted, abort_decision(&p, &t.rounds));
            for r in &t.rounds {
                if r.g == 1 {
                    assert_eq!(r.t, Some(0));
                    assert_eq!(r.w, None);
                    assert!(r.pi_hat.is_some());
                }
                if r.t == Some(0) {
                    assert_eq!(r.m_hat, None);
                }
                if r.t == Some(1) {
                    assert_eq!(r.pi_hat, None);
                    assert_eq!(r.w, r.m_hat);
                }
            }
        }
    }

    #[test]
    fn frequencies() {
        let rec = |w| RoundRecord { index: 0, key: 0, g: 0, t: Some(0), pi_hat: Some(0), m_hat: None, w };
        let rounds = [Some(1), Some(0), Some(1), Some(1)].map(rec).to_vec();
        let t = Transcript { params: params(4, 1.0, 1.0, 0.1), seed: 0, rounds, aborted: false, failure: None };
        assert_eq!(freq_of(&t, Restrict::All).win(), 0.75);
        let rounds = vec![RoundRecord { g: 1, w: None, ..rec(None) }; 5];
        let t = Transcript { rounds, ..t };
        assert_eq!(freq_of(&t, Restrict::All).bottom(), 1.0);
        assert_eq!(freq_of(&t, Restrict::TestOnly).n, 0);
    }

    #[test]
    fn ideal_frequency_concentrates() {
        let t = run_protocol(&mut QubitBlockDevice::ideal(), &params(100_000, 0.5, 1.0, 0.05), 3).unwrap();
        let f = freq_of(&t, Restrict::All);
        assert!((f.win() - 0.5).abs() < 0.01);
        assert_eq!(f.lose(), 0.0);
        assert_eq!(f.counts.iter().sum::<u64>(), f.n);
    }

    #[test]
    fn deterministic_transcripts() {
        let p = params(2000, 0.5, 0.9, 0.05);
        let run = |seed| run_protocol(&mut StatsDevice::uniform(0.9).unwrap(), &p, seed).unwrap().to_text();
        assert_eq!(run(17), run(17));
        assert_ne!(run(17), run(18));
    }

    #[test]
    fn text_round_trip() {
        let p = params(300, 0.4, 0.9, 0.05);
        let t = run_protocol(&mut StatsDevice::uniform(0.8).unwrap(), &p, 5).unwrap();
        let back = Transcript::parse(&t.to_text()).unwrap();
        assert_eq!(back, t);
        assert!(Transcript::parse("i,K\n").is_err());
    }

    #[test]
    fn key_reuse() {
        let p = params(100, 0.5, 0.9, 0.05);
        let t = run_protocol_with(&mut QubitBlockDevice::ideal(), &p, 1, KeyMode::Reuse).unwrap();
        assert!(t.rounds.iter().all(|r| r.key == t.rounds[0].key));
        let t = run_protocol(&mut QubitBlockDevice::ideal(), &p, 1).unwrap();
        assert!(t.rounds.iter().any(|r| r.key != t.rounds[0].key));
    }

    struct Flaky(u32);

    impl DeviceBehavior for Flaky {
        fn respond_preimage(&mut self, _: u64, _: &mut dyn RngCore) -> std::result::Result<u8, DeviceError> {
            self.0 = self.0.saturating_sub(1);
            if self.0 == 0 {
                Err(DeviceError::Failure("power loss".into()))
            } else {
                Ok(0)
            }
        }

        fn respond_equation(&mut self, key: u64, rng: &mut dyn RngCore) -> std::result::Result<u8, DeviceError> {
            self.respond_preimage(key, rng)
        }
    }

    #[test]
    fn device_failure_flags_transcript() {
        let t = run_protocol(&mut Flaky(10), &params(100, 0.5, 0.9, 0.05), 1).unwrap();
        assert!(t.aborted);
        assert_eq!(t.rounds.len(), 9);
        assert_eq!(t.failure.as_deref(), Some("device failed: power loss"));
        assert_eq!(Transcript::parse(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn certification() {
        let p = EatParams { n: 2000, ..params(2000, 0.5, 1.0, 0.05) };
        let tf = TradeoffFunction::with_cutoff_deficit(0.045, 0.5, 1e-13, &BoundConfig::sweep()).unwrap();
        let t = run_protocol(&mut QubitBlockDevice::ideal(), &p, 2).unwrap();
        let c = certify(&t, &tf, ChainRuleTerm::Conservative).unwrap();
        assert_eq!(c.output_len, t.rounds.iter().filter(|r| r.g == 1).count() as u64);
        assert_eq!(c.entropy, certified_min_entropy(&p, &tf, ChainRuleTerm::Conservative).unwrap());
        let failed = run_protocol(&mut QubitBlockDevice::always_fail(), &p, 2).unwrap();
        assert_eq!(certify(&failed, &tf, ChainRuleTerm::Conservative), Err(ProtocolError::Aborted));
    }

    #[test]
    fn audit_passes_honest_runs() {
        let p = params(5000, 0.5, 0.9, 0.05);
        let t = run_protocol(&mut StatsDevice::uniform(0.9).unwrap(), &p, 8).unwrap();
        let report = markov_condition_audit(&t).unwrap();
        assert_eq!(report.tests.len(), 54);
        assert!(report.passed(), "{:?}", report.min_p_value());
    }

    #[test]
    fn audit_detects_patched_test_choice() {
        let p = params(5000, 0.5, 0.9, 0.05);
        let mut t = run_protocol(&mut StatsDevice::uniform(0.9).unwrap(), &p, 8).unwrap();
        for i in (1..t.rounds.len()).rev() {
            t.rounds[i].t = t.rounds[i - 1].w;
        }
        assert!(!markov_condition_audit(&t).unwrap().passed());
    }

    #[test]
    fn audit_constant_round_type() {
        let t = run_protocol(&mut StatsDevice::uniform(0.9).unwrap(), &params(2000, 1.0, 0.9, 0.05), 4).unwrap();
        assert!(t.rounds.iter().all(|r| r.g == 0));
        let report = markov_condition_audit(&t).unwrap();
        assert!(report.passed());
        assert!(report.tests.iter().filter(|x| x.current == "G").all(|x| x.p_value.is_none()));
        let short = run_protocol(&mut QubitBlockDevice::ideal(), &params(999, 1.0, 0.9, 0.05), 4).unwrap();
        assert_eq!(markov_condition_audit(&short), Err(ProtocolError::InsufficientSamples(999)));
    }

    #[test]
    fn hoeffding_margin() {
        let d = hoeffding_delta(10_000, 0.05);
        assert!((d - (20f64.ln() / 20_000.0).sqrt()).abs() < 1e-15);
    }
}
