//! Command-line front end for the Monte Carlo harness.
//!
//! Exit codes: 0 on success, 2 for invalid flags or configuration, 1 when a
//! run fails.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::geometry::{CiKernel, Rotation};
use crate::harness::{
    parse_precoders, run_ber_sweep, run_iteration_stats, run_timing, run_tradeoff, write_csv, BerRecord,
    Precoder, SimConfig,
};
use crate::iterative::{classify, IterativeSolver};
use crate::qp::{
    solve_active_set_enum, solve_projected_gradient, DEFAULT_PG_MAX_ITER, DEFAULT_PG_TOL, MAX_ENUMERATION_DIM,
};
use crate::rng::{SimRng, Stream};
use crate::signal::{parse_modulation, sample_channel, Constellation, SymbolVector};
use crate::zf::zf_precode;

#[derive(Debug, Parser)]
#[command(
    name = "ci-precode",
    version,
    about = "Constructive-interference symbol-level precoding experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// BER/SER versus transmit SNR for a set of precoders.
    Sweep(SweepArgs),
    /// Average active-set iterations versus number of users (noiseless).
    Iters(ItersArgs),
    /// BER versus iteration budget at a single SNR.
    Tradeoff(TradeoffArgs),
    /// Per-symbol solver time.
    Timing(TimingArgs),
    /// Kernel and dual diagnostics for one channel and symbol vector.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Transmit antennas N_t
    #[arg(long, default_value_t = 8)]
    pub nt: usize,
    /// Users K (K <= N_t)
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Modulation: bpsk, qpsk, 8psk or 16psk
    #[arg(long = "mod", default_value = "qpsk")]
    pub modulation: String,
    /// Channel realizations
    #[arg(long, default_value_t = 500)]
    pub trials: usize,
    /// Symbol vectors per channel realization
    #[arg(long, default_value_t = 200)]
    pub symbols: usize,
    /// Total transmit power p0 in watts
    #[arg(long, default_value_t = 1.0)]
    pub p0: f64,
    /// Master RNG seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Iteration budget for the closed-form CI precoders (integer or "inf")
    #[arg(long, default_value = "inf")]
    pub nmax: String,
    /// Worker threads (0 = all cores); never changes results
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Output CSV path ("-" for stdout)
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Transmit SNR grid in dB, as start:step:stop, a comma list, or "inf"
    #[arg(long, default_value = "0:5:35")]
    pub snr: String,
    /// Comma list of zf, rzf, ci-cf-strict, ci-cf-nonstrict, ci-qp-strict, ci-qp-nonstrict
    #[arg(long, default_value = "zf,rzf,ci-cf-strict,ci-cf-nonstrict")]
    pub precoders: String,
}

#[derive(Debug, Args)]
pub struct ItersArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma list of user counts to sweep (each <= N_t)
    #[arg(long, default_value = "1,2,4,8")]
    pub ks: String,
}

#[derive(Debug, Args)]
pub struct TradeoffArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Transmit SNR in dB
    #[arg(long, default_value = "30")]
    pub snr: String,
    /// Comma list of iteration budgets (integers or "inf")
    #[arg(long, default_value = "0,1,2,3,4,5,6,8,10,inf")]
    pub nmax_grid: String,
    /// Closed-form CI precoders to run
    #[arg(long, default_value = "ci-cf-strict,ci-cf-nonstrict")]
    pub precoders: String,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Transmit SNR in dB (sets the RZF loading)
    #[arg(long, default_value = "30")]
    pub snr: String,
    /// Comma list of precoders to time
    #[arg(
        long,
        default_value = "zf,ci-cf-strict,ci-qp-strict,ci-cf-nonstrict,ci-qp-nonstrict"
    )]
    pub precoders: String,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Transmit antennas N_t
    #[arg(long, default_value_t = 4)]
    pub nt: usize,
    /// Users K (K <= N_t)
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Modulation: bpsk, qpsk, 8psk or 16psk
    #[arg(long = "mod", default_value = "qpsk")]
    pub modulation: String,
    /// Total transmit power p0 in watts
    #[arg(long, default_value_t = 1.0)]
    pub p0: f64,
    /// RNG seed for the channel and symbols
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Iteration budget (integer or "inf")
    #[arg(long, default_value = "inf")]
    pub nmax: String,
}

/// A configuration problem tied to a flag.
#[derive(Debug)]
struct FlagError {
    flag: &'static str,
    message: String,
}

fn flag_err(flag: &'static str, message: impl Into<String>) -> FlagError {
    FlagError {
        flag,
        message: message.into(),
    }
}

enum Failure {
    Config(FlagError),
    Runtime(String),
}

impl From<FlagError> for Failure {
    fn from(e: FlagError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn parse_snr_value(text: &str) -> Option<f64> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "noiseless" => Some(f64::INFINITY),
        t => t.parse::<f64>().ok().filter(|x| x.is_finite()),
    }
}

/// `start:step:stop` (inclusive), a comma list, or a single value.
pub fn parse_snr_grid(text: &str) -> Option<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, step, stop] => {
            let (start, step, stop) = (
                parse_snr_value(start)?,
                parse_snr_value(step)?,
                parse_snr_value(stop)?,
            );
            if !(step > 0.0) || !step.is_finite() || !start.is_finite() || !stop.is_finite() || stop < start {
                return None;
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Some((0..=n).map(|i| start + step * i as f64).collect())
        }
        [_] => text.split(',').map(parse_snr_value).collect(),
        _ => None,
    }
}

pub fn parse_n_max(text: &str) -> Option<Option<usize>> {
    match text.trim().to_ascii_lowercase().as_str() {
        "inf" | "unlimited" | "none" => Some(None),
        t => t.parse::<usize>().ok().map(Some),
    }
}

fn config_from(common: &CommonArgs, snr: &str, precoders: &str) -> Result<SimConfig, FlagError> {
    let order = parse_modulation(&common.modulation).map_err(|e| flag_err("--mod", e.to_string()))?;
    let snr_db_grid =
        parse_snr_grid(snr).ok_or_else(|| flag_err("--snr", format!("cannot parse SNR grid '{snr}'")))?;
    let precoders = parse_precoders(precoders).map_err(|e| flag_err("--precoders", e.to_string()))?;
    let n_max = parse_n_max(&common.nmax).ok_or_else(|| {
        flag_err(
            "--nmax",
            format!("expected integer or inf, got '{}'", common.nmax),
        )
    })?;
    let cfg = SimConfig {
        nt: common.nt,
        k: common.k,
        order,
        snr_db_grid,
        trials: common.trials,
        symbols_per_trial: common.symbols,
        precoders,
        p0: common.p0,
        seed: common.seed,
        n_max,
        threads: common.threads,
    };
    check_config(&cfg)?;
    Ok(cfg)
}

fn check_config(cfg: &SimConfig) -> Result<(), FlagError> {
    if cfg.k == 0 {
        return Err(flag_err("--k", "need at least one user"));
    }
    if cfg.k > cfg.nt {
        return Err(flag_err(
            "--k",
            format!("K <= N_t required, got K = {} with --nt {}", cfg.k, cfg.nt),
        ));
    }
    if cfg.trials == 0 {
        return Err(flag_err("--trials", "must be at least 1"));
    }
    if cfg.symbols_per_trial == 0 {
        return Err(flag_err("--symbols", "must be at least 1"));
    }
    if !(cfg.p0 > 0.0) || !cfg.p0.is_finite() {
        return Err(flag_err(
            "--p0",
            format!("must be positive and finite, got {}", cfg.p0),
        ));
    }
    if cfg.order == 2
        && cfg
            .precoders
            .iter()
            .any(|p| matches!(p, Precoder::CiCfNonStrict | Precoder::CiQpNonStrict))
    {
        return Err(flag_err(
            "--precoders",
            "non-strict rotation is undefined for bpsk",
        ));
    }
    cfg.validate().map_err(|e| flag_err("--config", e.to_string()))
}

fn open_output<'a>(path: &PathBuf, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, Failure> {
    if path.as_os_str() == "-" {
        Ok(Box::new(stdout))
    } else {
        Ok(Box::new(BufWriter::new(File::create(path)?)))
    }
}

fn emit(path: &PathBuf, manifest: &str, rows: &[BerRecord], stdout: &mut dyn Write) -> Result<(), Failure> {
    let out = open_output(path, stdout)?;
    write_csv(out, manifest, rows)?;
    Ok(())
}

fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Sweep(args) => {
            let cfg = config_from(&args.common, &args.snr, &args.precoders)?;
            let rows = run_ber_sweep(&cfg)?;
            emit(&args.common.out, &cfg.manifest(), &rows, stdout)
        }
        Command::Iters(args) => {
            let ks: Vec<usize> = args
                .ks
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| {
                    flag_err(
                        "--ks",
                        format!("expected a comma list of integers, got '{}'", args.ks),
                    )
                })?;
            if ks.is_empty() || ks.iter().any(|&k| k == 0 || k > args.common.nt) {
                return Err(flag_err(
                    "--ks",
                    format!("every K must satisfy 1 <= K <= N_t = {}", args.common.nt),
                )
                .into());
            }
            let mut common = args.common.clone();
            common.k = ks.iter().copied().min().unwrap_or(1);
            let precoders = if parse_modulation(&common.modulation) == Ok(2) {
                "ci-cf-strict"
            } else {
                "ci-cf-strict,ci-cf-nonstrict"
            };
            let cfg = config_from(&common, "inf", precoders)?;
            let rows = run_iteration_stats(&cfg, &ks)?;
            let manifest = format!("{} ks={}", cfg.manifest(), args.ks);
            emit(&args.common.out, &manifest, &rows, stdout)
        }
        Command::Tradeoff(args) => {
            let grid: Vec<Option<usize>> = args
                .nmax_grid
                .split(',')
                .map(parse_n_max)
                .collect::<Option<_>>()
                .ok_or_else(|| flag_err("--nmax-grid", format!("cannot parse '{}'", args.nmax_grid)))?;
            let cfg = config_from(&args.common, &args.snr, &args.precoders)?;
            if cfg.snr_db_grid.len() != 1 {
                return Err(flag_err("--snr", "tradeoff takes a single SNR value").into());
            }
            if let Some(p) = cfg.precoders.iter().find(|p| !p.is_iterative()) {
                return Err(flag_err("--precoders", format!("{p} has no iteration budget")).into());
            }
            let rows = run_tradeoff(&cfg, &grid)?;
            let manifest = format!("{} nmax_grid={}", cfg.manifest(), args.nmax_grid);
            emit(&args.common.out, &manifest, &rows, stdout)
        }
        Command::Timing(args) => {
            let cfg = config_from(&args.common, &args.snr, &args.precoders)?;
            let timings = run_timing(&cfg)?;
            let rows: Vec<BerRecord> = timings.iter().map(|t| t.to_ber_record(&cfg)).collect();
            for t in &timings {
                log::info!(
                    "{:<16} K={:<3} mean {:>9.3} us  median {:>9.3} us  ({} symbols)",
                    t.precoder.name(),
                    t.k,
                    t.mean_micros,
                    t.median_micros,
                    t.symbols
                );
            }
            let medians: Vec<String> = timings
                .iter()
                .map(|t| format!("{}={}", t.precoder.name(), t.median_micros))
                .collect();
            let manifest = format!("{}\n# median_solve_micros {}", cfg.manifest(), medians.join(" "));
            emit(&args.common.out, &manifest, &rows, stdout)
        }
        Command::Inspect(args) => inspect(&args, stdout),
    }
}

fn fmt_vec<'a>(xs: impl IntoIterator<Item = &'a f64>) -> String {
    let parts: Vec<String> = xs.into_iter().map(|x| format!("{x:+.6e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn inspect(args: &InspectArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let order = parse_modulation(&args.modulation).map_err(|e| flag_err("--mod", e.to_string()))?;
    if args.k == 0 || args.k > args.nt {
        return Err(flag_err(
            "--k",
            format!("K <= N_t required, got K = {} with --nt {}", args.k, args.nt),
        )
        .into());
    }
    if !(args.p0 > 0.0) || !args.p0.is_finite() {
        return Err(flag_err("--p0", format!("must be positive and finite, got {}", args.p0)).into());
    }
    let n_max = parse_n_max(&args.nmax)
        .ok_or_else(|| flag_err("--nmax", format!("expected integer or inf, got '{}'", args.nmax)))?;
    let constellation = Constellation::new(order)?;
    let root = SimRng::new(args.seed);
    let h = sample_channel(args.k, args.nt, &mut root.substream(Stream::Channel, 0))?;
    let s = SymbolVector::sample(args.k, &constellation, &mut root.substream(Stream::Symbols, 0));
    let (_, f) = zf_precode(&h, &s, args.p0)?;

    writeln!(
        out,
        "N_t = {}, K = {}, {}, p0 = {}, seed = {}",
        args.nt, args.k, args.modulation, args.p0, args.seed
    )?;
    writeln!(out, "symbol indices = {:?}", s.indices())?;
    writeln!(out, "ZF: f = {f:.9e}, margin 1/f = {:.9e}", 1.0 / f)?;

    let mut rotations = vec![("strict", Rotation::Strict)];
    if order > 2 {
        rotations.push((
            "non-strict",
            Rotation::NonStrict {
                threshold_angle: constellation.threshold_angle(),
            },
        ));
    }
    for (name, rotation) in rotations {
        let kernel = CiKernel::build(&h, &s, args.p0, rotation)?;
        let form = kernel.form();
        let negative: Vec<usize> = (0..form.dim()).filter(|&k| form.a()[k] < 0.0).collect();
        writeln!(out, "\n== {name} rotation (n = {}) ==", form.dim())?;
        writeln!(out, "a = {}", fmt_vec(form.a().iter()))?;
        writeln!(out, "c = {:.9e}", form.c())?;
        writeln!(out, "S = {negative:?} ({:?})", classify(form))?;

        let res = IterativeSolver::new(n_max).with_trace().solve(form);
        writeln!(out, "iterations:")?;
        for rec in res.trace.iter().flatten() {
            writeln!(
                out,
                "  {:>3}  {}  active = {:?}  min(u) = {:+.3e}  objective = {:.12e}",
                rec.iteration,
                if rec.accepted { "accept " } else { "retract" },
                rec.active,
                rec.min_u,
                rec.objective
            )?;
        }
        writeln!(
            out,
            "converged = {}, iterations = {}, fallback = {:?}",
            res.converged, res.iterations, res.fallback
        )?;
        writeln!(out, "u = {}", fmt_vec(res.u.iter()))?;
        let (_, dual) = kernel.beamformer_from_dual(&res.u)?;
        let lambda: Vec<String> = dual
            .lambda
            .iter()
            .map(|z| format!("{:+.6e}{:+.6e}j", z.re, z.im))
            .collect();
        writeln!(out, "lambda = [{}]", lambda.join(", "))?;
        writeln!(out, "t_star = {:.12e}", dual.t_star)?;
        let (oracle_name, oracle) = if form.dim() <= MAX_ENUMERATION_DIM {
            ("enumeration", solve_active_set_enum(form)?)
        } else {
            (
                "projected gradient",
                solve_projected_gradient(form, DEFAULT_PG_TOL, DEFAULT_PG_MAX_ITER)?,
            )
        };
        writeln!(
            out,
            "objective = {:.12e}   oracle ({oracle_name}) = {:.12e}",
            res.objective, oracle.objective
        )?;
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs, and returns the exit
/// code. Diagnostics go to `stderr`; CSV written to "-" and inspect output go
/// to `stdout`.
pub fn parse_and_run_with<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{rendered}")
            } else {
                write!(stderr, "{rendered}")
            };
            return code;
        }
    };
    match run(cli, stdout) {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            let _ = writeln!(stderr, "error: {}: {}", e.flag, e.message);
            2
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
    }
}

pub fn parse_and_run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    let code = parse_and_run_with(argv, &mut lock, &mut io::stderr());
    let _ = lock.flush();
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = parse_and_run_with(
            std::iter::once("ci-precode").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn snr_grid_syntax() {
        assert_eq!(
            parse_snr_grid("0:5:35").unwrap(),
            vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0]
        );
        assert_eq!(parse_snr_grid("0:0.5:1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_snr_grid("12").unwrap(), vec![12.0]);
        assert_eq!(parse_snr_grid("3,inf").unwrap(), vec![3.0, f64::INFINITY]);
        for bad in ["", "0:0:5", "5:1:0", "a:b:c", "1:2", "nan"] {
            assert!(parse_snr_grid(bad).is_none(), "{bad}");
        }
    }

    #[test]
    fn n_max_syntax() {
        assert_eq!(parse_n_max("inf"), Some(None));
        assert_eq!(parse_n_max("7"), Some(Some(7)));
        assert_eq!(parse_n_max("-1"), None);
    }

    #[test]
    fn too_many_users_is_a_config_error() {
        let (code, _, err) = run_args(&["sweep", "--k", "9", "--nt", "8"]);
        assert_eq!(code, 2);
        assert!(err.contains("--k") && err.contains("K <= N_t"), "{err}");
    }

    #[test]
    fn bad_flags_exit_2() {
        assert_eq!(run_args(&["sweep", "--mod", "64qam"]).0, 2);
        assert_eq!(run_args(&["sweep", "--snr", "x"]).0, 2);
        assert_eq!(run_args(&["sweep", "--precoders", "mmse"]).0, 2);
        assert_eq!(run_args(&["sweep", "--trials", "-3"]).0, 2);
        assert_eq!(run_args(&["sweep", "--nmax", "lots"]).0, 2);
        assert_eq!(run_args(&["frobnicate"]).0, 2);
        assert_eq!(
            run_args(&["sweep", "--mod", "bpsk", "--precoders", "ci-cf-nonstrict"]).0,
            2
        );
    }

    #[test]
    fn help_lists_flags() {
        let (code, out, _) = run_args(&["sweep", "--help"]);
        assert_eq!(code, 0);
        for flag in [
            "--nt",
            "--k",
            "--mod",
            "--snr",
            "--trials",
            "--symbols",
            "--precoders",
            "--p0",
            "--seed",
            "--nmax",
            "--threads",
            "--out",
        ] {
            assert!(out.contains(flag), "{flag}");
        }
        assert!(out.contains("dB") && out.contains("watts"));
    }

    #[test]
    fn sweep_to_stdout() {
        let (code, out, err) = run_args(&[
            "sweep",
            "--nt",
            "4",
            "--k",
            "4",
            "--trials",
            "2",
            "--symbols",
            "5",
            "--snr",
            "0:10:20",
            "--precoders",
            "zf,ci-cf-strict",
        ]);
        assert_eq!(code, 0, "{err}");
        assert_eq!(out.lines().count(), 2 + 2 * 3);
    }

    #[test]
    fn inspect_prints_diagnostics() {
        let (code, out, err) =
            run_args(&["inspect", "--nt", "4", "--k", "4", "--mod", "qpsk", "--seed", "7"]);
        assert_eq!(code, 0, "{err}");
        for key in [
            "a = ",
            "c = ",
            "S = ",
            "iterations:",
            "u = ",
            "lambda = ",
            "t_star = ",
            "oracle",
        ] {
            assert!(out.contains(key), "{key}");
        }
        assert!(out.contains("non-strict"));
    }
}
