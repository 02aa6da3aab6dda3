//! Command-line interface: `run`, `sweep`, `gen-trace`, `validate-trace`
//! and `cost`.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 trace error,
//! 3 internal invariant failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::cost::{self, System};
use crate::engine::synth::{generate, SynthKind, SynthSpec};
use crate::engine::trace::{format_trace, load_trace, TraceRecord};
use crate::engine::{self, SimConfig, SimError};
use crate::frontend::MechanismKind;
use crate::metrics::{emit_stats, emit_sweep, render, Format, SweepRow};

/// Environment variable naming the config file used when `--config` is absent.
pub const CONFIG_ENV: &str = "TWINLOAD_CONFIG";

#[derive(Debug, Parser)]
#[command(name = "twinload", version, about = "Twin-load memory extension simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one trace and report statistics.
    Run(RunArgs),
    /// Run the configured parameter sweep, normalized to Ideal at zero extra latency.
    Sweep(RunArgs),
    /// Write a synthetic trace.
    GenTrace(GenTraceArgs),
    /// Check a trace file against the address layout.
    ValidateTrace(ValidateArgs),
    /// Print the cost table and the performance-per-dollar curve.
    Cost(CostArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Config file (TOML). Defaults to $TWINLOAD_CONFIG, then built-in defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set lvc.size=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Generator: uniform | stride:<bytes> | pointer-chase.
    #[arg(long)]
    pub gen: Option<SynthKind>,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    /// Footprint in bytes; accepts K, M and G suffixes (binary).
    #[arg(long, default_value = "16M", value_parser = parse_size)]
    pub footprint: u64,
    /// Fraction of records that are stores.
    #[arg(long, default_value_t = 0.0)]
    pub stores: f64,
    /// Non-memory instructions before each record.
    #[arg(long, default_value_t = 4)]
    pub gap: u32,
    /// Start address of the footprint (hex); defaults to extended memory.
    #[arg(long, value_parser = parse_hex)]
    pub base: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Trace file; exclusive with `--gen`.
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub gen: GenArgs,
    /// Mechanism: ideal | tl-lf | tl-ooo | inc-trl[:<ns>]. Restricts a sweep to it.
    #[arg(long)]
    pub mech: Option<MechanismKind>,
    #[arg(long, default_value = "table")]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenTraceArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub gen: GenArgs,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub trace: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CostArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Intervals of the parallel-efficiency curve.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value = "table")]
    pub format: Format,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Trace(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Trace(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(m) => CliError::Config(m),
            SimError::Trace(t) => CliError::Trace(t.to_string()),
            SimError::Internal(m) => CliError::Internal(m),
        }
    }
}

impl From<engine::ConfigError> for CliError {
    fn from(e: engine::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

pub fn parse_size(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (num, mult) = match s.char_indices().last() {
        Some((i, 'K' | 'k')) => (&s[..i], 1u64 << 10),
        Some((i, 'M' | 'm')) => (&s[..i], 1 << 20),
        Some((i, 'G' | 'g')) => (&s[..i], 1 << 30),
        _ => (s, 1),
    };
    num.parse::<u64>().ok().and_then(|n| n.checked_mul(mult)).ok_or_else(|| format!("bad size `{s}`"))
}

fn parse_hex(s: &str) -> Result<u64, String> {
    let t = s.strip_prefix("0x").unwrap_or(s);
    u64::from_str_radix(t, 16).map_err(|_| format!("bad hex address `{s}`"))
}

fn load_config(args: &ConfigArgs) -> Result<SimConfig, CliError> {
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let path = args.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    Ok(match path {
        Some(p) => SimConfig::load(&p, &overrides)?,
        None => SimConfig::from_toml_str("", &overrides)?,
    })
}

fn synth(cfg: &SimConfig, g: &GenArgs, kind: SynthKind) -> Result<Vec<TraceRecord>, CliError> {
    if !(0.0..=1.0).contains(&g.stores) {
        return Err(CliError::Config("--stores must lie in [0, 1]".into()));
    }
    let spec = SynthSpec {
        kind,
        footprint: g.footprint,
        count: g.count,
        seed: cfg.seed,
        store_fraction: g.stores,
        gap: g.gap,
        base: g.base,
    };
    generate(&spec, &cfg.layout).map_err(|e| CliError::Config(e.to_string()))
}

fn input_trace(cfg: &SimConfig, args: &RunArgs) -> Result<Vec<TraceRecord>, CliError> {
    match (&args.trace, args.gen.gen) {
        (Some(path), None) => load_trace(path, &cfg.layout).map_err(|e| CliError::Trace(e.to_string())),
        (None, Some(kind)) => synth(cfg, &args.gen, kind),
        _ => Err(CliError::Config("give exactly one of --trace and --gen".into())),
    }
}

fn emit(out_path: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<(), CliError> {
    match out_path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display()))),
        None => stdout.write_all(text.as_bytes()).map_err(|e| CliError::Internal(e.to_string())),
    }
}

pub fn cmd_run(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(m) = args.mech {
        cfg.mechanism = m;
    }
    let trace = input_trace(&cfg, args)?;
    let stats = engine::run(&cfg, &trace)?;
    emit(&args.out, &emit_stats(&stats, args.format), stdout)
}

/// Runs every (value, mechanism) point of the configured sweep.
pub fn sweep_rows(cfg: &SimConfig, trace: &[TraceRecord]) -> Result<Vec<SweepRow>, CliError> {
    let sw = &cfg.sweep;
    if sw.values.is_empty() {
        return Err(CliError::Config("sweep.values is empty".into()));
    }
    if sw.mechanisms.is_empty() {
        return Err(CliError::Config("sweep.mechanisms is empty".into()));
    }
    let reference = if sw.axis == "extra_latency_ns" {
        cfg.with_extra_latency(MechanismKind::Ideal, 0)?
    } else {
        SimConfig { mechanism: MechanismKind::Ideal, ..cfg.clone() }
    };
    let points: Vec<(f64, MechanismKind)> =
        sw.values.iter().flat_map(|&v| sw.mechanisms.iter().map(move |&m| (v, m))).collect();
    let configs = points.iter().map(|&(v, m)| cfg.at_sweep_point(&sw.axis, v, m)).collect::<Result<Vec<_>, _>>()?;
    let mut all = vec![reference];
    all.extend(configs);
    let stats = all.par_iter().map(|c| engine::run(c, trace)).collect::<Result<Vec<_>, _>>()?;
    let base = stats[0].performance();
    Ok(points
        .iter()
        .zip(&stats[1..])
        .map(|(&(value, _), s)| SweepRow {
            axis: sw.axis.clone(),
            value,
            normalized: if base > 0.0 { s.performance() / base } else { 0.0 },
            stats: s.clone(),
        })
        .collect())
}

pub fn cmd_sweep(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(m) = args.mech {
        cfg.sweep.mechanisms = vec![m];
    }
    let trace = input_trace(&cfg, args)?;
    let rows = sweep_rows(&cfg, &trace)?;
    emit(&args.out, &emit_sweep(&rows, args.format), stdout)
}

pub fn cmd_gen_trace(args: &GenTraceArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let kind = args.gen.gen.ok_or_else(|| CliError::Config("--gen is required".into()))?;
    let trace = synth(&cfg, &args.gen, kind)?;
    emit(&args.out, &format_trace(&trace), stdout)
}

pub fn cmd_validate_trace(args: &ValidateArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let trace = load_trace(&args.trace, &cfg.layout).map_err(|e| CliError::Trace(e.to_string()))?;
    emit(&None, &format!("{}: {} records ok\n", args.trace.display(), trace.len()), stdout)
}

/// Cost table followed by the parallel-efficiency curve.
pub fn cost_report(inputs: &cost::CostInputs, steps: usize, format: Format) -> Result<String, CliError> {
    let err = |e: cost::CostError| CliError::Config(e.to_string());
    let mut rows = Vec::new();
    for s in System::ALL {
        let b = cost::breakdown(s, inputs).map_err(err)?;
        rows.push(vec![
            ("system", s.to_string()),
            ("processor", cost::cents(&b.processor)),
            ("memory", cost::cents(&b.memory)),
            ("motherboard_disk", cost::cents(&b.motherboard_disk)),
            ("mec", cost::cents(&b.mec)),
            ("server_power", cost::cents(&b.server_power)),
            ("other", cost::cents(&b.other)),
            ("total", cost::cents(&b.total())),
            ("perf_per_dollar_vs_tl", format!("{:.4}", cost::relative_to_tl(s, inputs).map_err(err)?)),
        ]);
    }
    let mut out = render(&rows, format);
    out.push('\n');
    let be = cost::cluster_break_even(inputs).map_err(err)?;
    out.push_str(&render(&[vec![("cluster_break_even_c", format!("{be:.4}"))]], format));
    out.push('\n');
    let curve: Vec<_> = cost::efficiency_curve(inputs, steps)
        .map_err(err)?
        .into_iter()
        .map(|p| {
            vec![
                ("c", format!("{:.4}", p.c)),
                ("numa_vs_tl", format!("{:.4}", p.numa)),
                ("cluster_vs_tl", format!("{:.4}", p.cluster)),
            ]
        })
        .collect();
    out.push_str(&render(&curve, format));
    Ok(out)
}

pub fn cmd_cost(args: &CostArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    emit(&args.out, &cost_report(&cfg.cost, args.steps, args.format)?, stdout)
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::GenTrace(a) => cmd_gen_trace(a, stdout),
        Command::ValidateTrace(a) => cmd_validate_trace(a, stdout),
        Command::Cost(a) => cmd_cost(a, stdout),
    }
}

/// Parses `args`, runs the command and returns the exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(text.as_bytes());
                1
            } else {
                let _ = stdout.write_all(text.as_bytes());
                0
            };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli(args, &mut stdout.lock(), &mut stderr.lock())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("4096"), Ok(4096));
        assert_eq!(parse_size("16M"), Ok(16 << 20));
        assert_eq!(parse_size("2k"), Ok(2048));
        assert!(parse_size("M").is_err());
    }

    #[test]
    fn usage_error_is_config_code() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_cli(["twinload", "run", "--bogus"], &mut o, &mut e), 1);
        assert!(!e.is_empty());
    }

    #[test]
    fn help_exits_zero() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run_cli(["twinload", "--help"], &mut o, &mut e), 0);
        assert!(String::from_utf8(o).unwrap().contains("sweep"));
    }
}
