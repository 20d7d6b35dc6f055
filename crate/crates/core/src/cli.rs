//! Command-line front end: CSV sweeps, protocol simulation and the
//! verification suites.
//!
//! Exit codes: 0 success (a protocol abort included), 1 usage error,
//! 2 verification failure, 3 internal error.

use crate::bound::{g_omega_deficit, g_two_var, BoundConfig, WinningStats};
use crate::config::{parse_count, ConfigError, KvConfig};
use crate::device::{DeviceError, QubitBlockDevice};
use crate::eat::{ChainRuleTerm, EatError, EatParams, RateObjective, RateSearch, RateTable};
use crate::protocol::{
    abort_threshold, certify, freq_of, hoeffding_delta, run_protocol_with, test_wins, KeyMode, ProtocolError, Restrict,
};
use crate::verify::{run_suite, Suite};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

/// Seed used when neither a flag nor a device file provides one.
pub const SEED_ENV: &str = "EATRAND_SEED";
const MAX_GRID_POINTS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DeviceError> for CliError {
    fn from(e: DeviceError) -> Self {
        match e {
            DeviceError::Config(_) | DeviceError::InvalidParameter { .. } | DeviceError::WeightsDoNotSum(_) | DeviceError::TooLarge(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<EatError> for CliError {
    fn from(e: EatError) -> Self {
        match e {
            EatError::InvalidParameter { .. } | EatError::InfeasibleThreshold(_) | EatError::EmptySearch => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::TooManyRounds(_) => CliError::Usage(e.to_string()),
            ProtocolError::Eat(inner) => inner.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "eatrand", version, about = "Certified randomness rates and protocol simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-variable bound g(ω; β) over a grid of winning rates.
    Bound(BoundArgs),
    /// Two-variable bound over an (ω_p, ω_m) grid.
    Bound2d(Bound2dArgs),
    /// Optimised entropy rates over a grid of winning rates, per round count.
    Rate(RateArgs),
    /// Run the protocol against a device file.
    Simulate(SimulateArgs),
    /// Run a randomised verification suite.
    Verify(VerifyArgs),
}

/// `lo:hi:step`, inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step).round() as usize;
        let mut out: Vec<f64> = (0..=count).map(|k| self.lo + k as f64 * self.step).collect();
        if let Some(last) = out.last_mut() {
            if (*last - self.hi).abs() <= 1e-9 * self.step {
                *last = self.hi;
            }
        }
        out.retain(|&v| v <= self.hi);
        out
    }
}

impl std::str::FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, step] = parts.as_slice() else {
            return Err("expected lo:hi:step".into());
        };
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number `{t}`"));
        let g = GridSpec { lo: num(lo)?, hi: num(hi)?, step: num(step)? };
        if !(g.lo.is_finite() && g.hi.is_finite() && g.lo <= g.hi) {
            return Err("need finite lo <= hi".into());
        }
        if !(g.step > 0.0 && g.step.is_finite()) {
            return Err("step must be positive".into());
        }
        if (g.hi - g.lo) / g.step >= MAX_GRID_POINTS as f64 {
            return Err(format!("grid exceeds {MAX_GRID_POINTS} points"));
        }
        Ok(g)
    }
}

/// Winning rates as given, or as losing rates `1 - ω` for resolution near 1.
#[derive(Debug, Args)]
#[group(multiple = false)]
pub struct WinGrid {
    /// Grid over ω as lo:hi:step.
    #[arg(long)]
    pub omega_grid: Option<GridSpec>,
    /// Grid over 1 - ω as lo:hi:step.
    #[arg(long)]
    pub deficit_grid: Option<GridSpec>,
}

impl WinGrid {
    /// `(ω, 1 - ω)` pairs, falling back to `default` as a deficit grid.
    fn pairs(&self, default: GridSpec) -> Result<Vec<(f64, f64)>, CliError> {
        let out: Vec<(f64, f64)> = match (&self.omega_grid, &self.deficit_grid) {
            (Some(g), _) => g.points().into_iter().map(|w| (w, 1.0 - w)).collect(),
            (None, Some(g)) => g.points().into_iter().map(|x| (1.0 - x, x)).collect(),
            (None, None) => default.points().into_iter().map(|x| (1.0 - x, x)).collect(),
        };
        if out.iter().any(|&(w, _)| !(0.0..=1.0).contains(&w)) {
            return Err(CliError::Usage("winning rates must lie in [0, 1]".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, default_value_t = 0.045)]
    pub beta: f64,
    #[command(flatten)]
    pub grid: WinGrid,
    /// Commutator defect μ.
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    /// Constant slack ξ subtracted from the bound.
    #[arg(long, default_value_t = 0.0)]
    pub xi: f64,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Bound2dArgs {
    /// Grid applied to both ω_p and ω_m, as lo:hi:step.
    #[arg(long, default_value = "0.5:1:0.01")]
    pub grid: GridSpec,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.0)]
    pub xi: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    /// Unfloored f̃(ω) - μ/√n.
    Accumulation,
    /// Certified min-entropy per round, floored at 0.
    Certified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChainRuleArg {
    Conservative,
    Literal,
}

impl From<ChainRuleArg> for ChainRuleTerm {
    fn from(c: ChainRuleArg) -> Self {
        match c {
            ChainRuleArg::Conservative => ChainRuleTerm::Conservative,
            ChainRuleArg::Literal => ChainRuleTerm::Literal,
        }
    }
}

fn parse_n(s: &str) -> Result<u128, String> {
    parse_count(s).filter(|&n| n > 0).ok_or_else(|| format!("bad round count `{s}`"))
}

#[derive(Debug, Args)]
pub struct RateArgs {
    /// Round counts, comma separated; scientific notation allowed.
    #[arg(long, value_delimiter = ',', value_parser = parse_n, default_value = "1e8,1e10,1e12")]
    pub n: Vec<u128>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub pomega: f64,
    #[command(flatten)]
    pub grid: WinGrid,
    /// β values searched, comma separated; a default grid when omitted.
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Density of the cutoff grid, in points per decade of 1 - ω_0.
    #[arg(long, default_value_t = 8)]
    pub cutoffs_per_decade: u32,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Accumulation)]
    pub objective: ObjectiveArg,
    #[arg(long, value_enum, default_value_t = ChainRuleArg::Conservative)]
    pub chain_rule: ChainRuleArg,
    #[arg(long, default_value_t = 0.0)]
    pub xi: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub device_file: PathBuf,
    /// Protocol parameter file.
    #[arg(long)]
    pub params: PathBuf,
    /// Overrides the device file seed and the environment default.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Transcript output path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub suite: Suite,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn write_output(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| internal(format!("{}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(internal),
    }
}

fn bound_config(xi: f64, cfg: BoundConfig) -> Result<BoundConfig, CliError> {
    let cfg = BoundConfig { xi_slack: xi, ..cfg };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn check_mu(mu: f64) -> Result<(), CliError> {
    if mu.is_finite() && mu >= 0.0 {
        Ok(())
    } else {
        Err(CliError::Usage(format!("mu = {mu} must be finite and non-negative")))
    }
}

/// Default grid of losing rates for the rate and bound sweeps: where the
/// single-round bound is positive, plus a margin.
pub fn default_deficit_grid() -> GridSpec {
    GridSpec { lo: 0.0, hi: 2e-11, step: 5e-13 }
}

pub fn cmd_bound(args: &BoundArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if !(args.beta > 0.0 && args.beta < 1.0) {
        return Err(CliError::Usage(format!("beta = {} outside (0, 1)", args.beta)));
    }
    check_mu(args.mu)?;
    let cfg = bound_config(args.xi, BoundConfig::default())?;
    let pairs = args.grid.pairs(default_deficit_grid())?;
    let values = pairs
        .par_iter()
        .map(|&(_, x)| g_omega_deficit(x, args.beta, args.mu, &cfg))
        .collect::<Result<Vec<_>, _>>()
        .map_err(internal)?;
    let mut csv = String::from("omega,deficit,g_omega\n");
    for ((w, x), g) in pairs.iter().zip(values) {
        let _ = writeln!(csv, "{w},{x},{g}");
    }
    write_output(args.out.as_deref(), &csv, stdout)
}

pub fn cmd_bound2d(args: &Bound2dArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    check_mu(args.mu)?;
    let cfg = bound_config(args.xi, BoundConfig::sweep())?;
    let axis = args.grid.points();
    if axis.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(CliError::Usage("grid must lie in [0, 1]".into()));
    }
    let cells: Vec<(f64, f64)> = axis.iter().flat_map(|&p| axis.iter().map(move |&m| (p, m))).collect();
    let values = cells
        .par_iter()
        .map(|&(p, m)| WinningStats::from_deficits(1.0 - p, 1.0 - m, args.mu).and_then(|s| g_two_var(&s, &cfg)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(internal)?;
    let mut csv = String::from("omega_p,omega_m,g\n");
    for ((p, m), g) in cells.iter().zip(values) {
        let _ = writeln!(csv, "{p},{m},{g}");
    }
    write_output(args.out.as_deref(), &csv, stdout)
}

fn rate_search(betas: Option<&[f64]>, per_decade: u32, xi: f64) -> Result<RateSearch, CliError> {
    let mut search = RateSearch::default();
    if let Some(b) = betas {
        search.betas = b.to_vec();
    }
    if per_decade == 0 {
        return Err(CliError::Usage("cutoffs-per-decade must be positive".into()));
    }
    let k = per_decade as f64;
    search.cutoff_deficits = (0..).map(|i| 10f64.powf(-16.0 + i as f64 / k)).take_while(|&x| x < 0.5).collect();
    search.curve.xi_slack = xi;
    search.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(search)
}

fn rate_params(n: u128, gamma: f64, eps: f64, pomega: f64, xi: f64) -> EatParams {
    // omega_exp and delta_est are not used by the rate sweep
    EatParams { n, gamma, beta: 0.5, eps_s: eps, p_omega: pomega, omega_exp: 1.0, delta_est: 0.5, xi_slack: xi }
}

pub fn cmd_rate(args: &RateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if args.n.is_empty() {
        return Err(CliError::Usage("at least one round count is required".into()));
    }
    for &n in &args.n {
        rate_params(n, args.gamma, args.eps, args.pomega, args.xi).validate()?;
    }
    let search = rate_search(args.betas.as_deref(), args.cutoffs_per_decade, args.xi)?;
    let table = RateTable::build(args.gamma, &search)?;
    let pairs = args.grid.pairs(default_deficit_grid())?;
    let objective = match args.objective {
        ObjectiveArg::Accumulation => RateObjective::Accumulation,
        ObjectiveArg::Certified => RateObjective::Certified(args.chain_rule.into()),
    };
    let points = pairs.par_iter().map(|&(_, x)| table.at(x)).collect::<Result<Vec<_>, _>>()?;
    let mut csv = String::from("n,omega,deficit,mu_opt,rate,beta,omega_0\n");
    for &n in &args.n {
        let params = rate_params(n, args.gamma, args.eps, args.pomega, args.xi);
        for (&(w, x), point) in pairs.iter().zip(&points) {
            let (best, _) = point.optimize(&params, objective)?;
            let _ = writeln!(csv, "{n},{w},{x},{},{},{},{}", best.rate, best.rate.max(0.0), best.beta, best.omega_0);
        }
    }
    for (&(w, x), point) in pairs.iter().zip(&points) {
        let best = point.first_order();
        let _ = writeln!(csv, "inf,{w},{x},{},{},{},{}", best.rate, best.rate.max(0.0), best.beta, best.omega_0);
    }
    write_output(args.out.as_deref(), &csv, stdout)
}

/// Protocol settings read from a parameter file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub params: EatParams,
    pub keys: KeyMode,
    pub chain_rule: ChainRuleTerm,
}

const PARAM_KEYS: [&str; 11] =
    ["n", "gamma", "beta", "eps_s", "p_omega", "omega_exp", "delta_est", "eps_c", "xi_slack", "key_mode", "chain_rule"];

impl SimulationConfig {
    /// Without `delta_est` the Hoeffding margin for completeness error
    /// `eps_c` (default 0.05) is used.
    pub fn from_config(cfg: &KvConfig) -> Result<Self, CliError> {
        cfg.check_keys(|k| PARAM_KEYS.contains(&k))?;
        let n_text: String = cfg.require("n")?;
        let n = parse_n(&n_text).map_err(CliError::Usage)?;
        let eps_c: f64 = cfg.get("eps_c")?.unwrap_or(0.05);
        if !(eps_c > 0.0 && eps_c < 1.0) {
            return Err(CliError::Usage(format!("eps_c = {eps_c} outside (0, 1)")));
        }
        let params = EatParams {
            n,
            gamma: cfg.require("gamma")?,
            beta: cfg.require("beta")?,
            eps_s: cfg.get("eps_s")?.unwrap_or(1e-5),
            p_omega: cfg.get("p_omega")?.unwrap_or(1e-5),
            omega_exp: cfg.require("omega_exp")?,
            delta_est: cfg.get("delta_est")?.unwrap_or_else(|| hoeffding_delta(n, eps_c)),
            xi_slack: cfg.get("xi_slack")?.unwrap_or(0.0),
        };
        params.validate()?;
        let keys = match cfg.raw("key_mode").unwrap_or("fresh") {
            "fresh" => KeyMode::Fresh,
            "reuse" => KeyMode::Reuse,
            other => return Err(ConfigError::BadValue { key: "key_mode".into(), value: other.into() }.into()),
        };
        let chain_rule = match cfg.raw("chain_rule").unwrap_or("conservative") {
            "conservative" => ChainRuleTerm::Conservative,
            "literal" => ChainRuleTerm::Literal,
            other => return Err(ConfigError::BadValue { key: "chain_rule".into(), value: other.into() }.into()),
        };
        Ok(Self { params, keys, chain_rule })
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| internal(format!("{}: {e}", path.display())))
}

fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV} = `{v}` is not a seed"))),
        Err(_) => Ok(0),
    }
}

/// Summary of a simulated run, printed as one `key=value` line.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub aborted: bool,
    pub seed: u64,
    pub rounds: usize,
    pub test_wins: u64,
    pub threshold: f64,
    pub freq: [f64; 3],
    pub beta: f64,
    pub omega_0: f64,
    pub mu_opt: f64,
    /// `None` for aborted runs.
    pub certified: Option<(f64, u64)>,
}

impl std::fmt::Display for SimulationSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "aborted={} seed={} rounds={} test_wins={} threshold={} freq_bottom={} freq_lose={} freq_win={} beta={} omega_0={} mu_opt={}",
            self.aborted,
            self.seed,
            self.rounds,
            self.test_wins,
            self.threshold,
            self.freq[0],
            self.freq[1],
            self.freq[2],
            self.beta,
            self.omega_0,
            self.mu_opt
        )?;
        match self.certified {
            Some((h, len)) => write!(f, " certified_entropy={h} output_len={len}"),
            None => write!(f, " certified_entropy=- output_len=-"),
        }
    }
}

/// Run the protocol and certify it with the cutoff that maximises the
/// certified entropy at the parameter threshold for the configured `β`.
pub fn simulate(device: &QubitBlockDevice, sim: &SimulationConfig, seed: u64) -> Result<(crate::protocol::Transcript, SimulationSummary), CliError> {
    let p = &sim.params;
    let mut dev = device.clone();
    let transcript = run_protocol_with(&mut dev, p, seed, sim.keys)?;
    let search = RateSearch { betas: vec![p.beta], ..rate_search(None, 8, p.xi_slack)? };
    let table = RateTable::build(p.gamma, &search)?;
    let threshold = p.omega_threshold();
    let (mu_opt, beta, omega_0, certified) = if (0.5..=1.0).contains(&threshold) {
        let point = table.at(p.threshold_deficit())?;
        let (acc, _) = point.optimize(p, RateObjective::Accumulation)?;
        let (best, tf) = point.optimize(p, RateObjective::Certified(sim.chain_rule))?;
        let certified = match certify(&transcript, tf, sim.chain_rule) {
            Ok(c) => Some((c.entropy, c.output_len)),
            Err(ProtocolError::Aborted) => None,
            Err(e) => return Err(e.into()),
        };
        (acc.rate, best.beta, best.omega_0, certified)
    } else {
        // no entropy can be certified below the feasible range
        let len = transcript.rounds.iter().filter(|r| r.g == 1).count() as u64;
        (f64::NEG_INFINITY, p.beta, 1.0, (!transcript.aborted).then_some((0.0, len)))
    };
    let f = freq_of(&transcript, Restrict::All);
    let summary = SimulationSummary {
        aborted: transcript.aborted,
        seed,
        rounds: transcript.rounds.len(),
        test_wins: test_wins(&transcript.rounds),
        threshold: abort_threshold(p),
        freq: [f.bottom(), f.lose(), f.win()],
        beta,
        omega_0,
        mu_opt,
        certified,
    };
    Ok((transcript, summary))
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (device, file_seed) = QubitBlockDevice::from_config(&KvConfig::parse(&read(&args.device_file)?)?)?;
    let sim = SimulationConfig::from_config(&KvConfig::parse(&read(&args.params)?)?)?;
    let seed = resolve_seed(args.seed, file_seed)?;
    let (transcript, summary) = simulate(&device, &sim, seed)?;
    if let Some(f) = &transcript.failure {
        return Err(internal(format!("device failure: {f}")));
    }
    write_output(Some(&args.out), &transcript.to_text(), stdout)?;
    writeln!(stdout, "{summary}").map_err(internal)
}

pub fn cmd_verify(args: &VerifyArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    if args.trials == 0 {
        let _ = writeln!(stderr, "warning: zero trials, suite {} passes vacuously", args.suite);
    }
    let seed = resolve_seed(args.seed, None)?;
    let report = run_suite(args.suite, args.trials, seed).map_err(internal)?;
    writeln!(stdout, "{report}").map_err(internal)?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Verification(report.to_string()))
    }
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Bound(a) => cmd_bound(a, stdout),
        Command::Bound2d(a) => cmd_bound2d(a, stdout),
        Command::Rate(a) => cmd_rate(a, stdout),
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Verify(a) => cmd_verify(a, stdout, stderr),
    }
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli, stdout, stderr) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
