//! Seeded Monte Carlo experiments: BER/SER sweeps, iteration statistics,
//! budget tradeoff and solver timing.
//!
//! All randomness comes from per-trial sub-streams of the master seed, so
//! every precoder in a run sees the same channels, symbols and noise, and the
//! output does not depend on the number of worker threads.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CiKernel, Rotation};
use crate::iterative::IterativeSolver;
use crate::linalg::{ChannelFactor, ComplexVector};
use crate::qp::{solve_projected_gradient_lenient, DEFAULT_PG_MAX_ITER, DEFAULT_PG_TOL};
use crate::rng::{SimRng, Stream};
use crate::signal::{
    complex_gaussian, modulation_name, sample_channel, ChannelMatrix, Constellation, SymbolVector,
};
use crate::zf::{rzf_precode, zf_with_factor, BeamformingMatrix};

pub const CSV_HEADER: [&str; 17] = [
    "precoder",
    "nt",
    "k",
    "mod",
    "snr_db",
    "n_max",
    "trials",
    "symbols",
    "bits",
    "bit_errors",
    "ber",
    "symbol_errors",
    "ser",
    "avg_iterations",
    "fallback_count",
    "avg_solve_micros",
    "seed",
];

/// Untimed symbols at the start of a timing run.
pub const TIMING_WARMUP: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Precoder {
    Zf,
    Rzf,
    CiCfStrict,
    CiCfNonStrict,
    CiQpStrict,
    CiQpNonStrict,
}

impl Precoder {
    pub const ALL: [Precoder; 6] = [
        Precoder::Zf,
        Precoder::Rzf,
        Precoder::CiCfStrict,
        Precoder::CiCfNonStrict,
        Precoder::CiQpStrict,
        Precoder::CiQpNonStrict,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Precoder::Zf => "zf",
            Precoder::Rzf => "rzf",
            Precoder::CiCfStrict => "ci-cf-strict",
            Precoder::CiCfNonStrict => "ci-cf-nonstrict",
            Precoder::CiQpStrict => "ci-qp-strict",
            Precoder::CiQpNonStrict => "ci-qp-nonstrict",
        }
    }

    pub fn is_ci(self) -> bool {
        !matches!(self, Precoder::Zf | Precoder::Rzf)
    }

    /// True for the closed-form active-set precoders, the only ones `n_max`
    /// applies to.
    pub fn is_iterative(self) -> bool {
        matches!(self, Precoder::CiCfStrict | Precoder::CiCfNonStrict)
    }

    pub fn rotation(self, constellation: &Constellation) -> Option<Rotation> {
        match self {
            Precoder::CiCfStrict | Precoder::CiQpStrict => Some(Rotation::Strict),
            Precoder::CiCfNonStrict | Precoder::CiQpNonStrict => Some(Rotation::NonStrict {
                threshold_angle: constellation.threshold_angle(),
            }),
            _ => None,
        }
    }
}

impl fmt::Display for Precoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Precoder::ALL
            .into_iter()
            .find(|p| p.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::BadParameter(format!("unknown precoder '{s}'")))
    }
}

pub fn parse_precoders(list: &str) -> Result<Vec<Precoder>> {
    let mut out = Vec::new();
    for item in list.split(',').filter(|x| !x.trim().is_empty()) {
        let p: Precoder = item.parse()?;
        if !out.contains(&p) {
            out.push(p);
        }
    }
    if out.is_empty() {
        return Err(Error::BadParameter("empty precoder list".into()));
    }
    Ok(out)
}

/// Transmit SNR `rho = 1 / sigma^2` in dB to noise variance; `+inf` dB is
/// the noiseless channel.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

fn format_n_max(n_max: Option<usize>) -> String {
    n_max.map_or_else(|| "inf".to_string(), |n| n.to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub nt: usize,
    pub k: usize,
    /// Modulation order M.
    pub order: usize,
    pub snr_db_grid: Vec<f64>,
    /// Channel realizations.
    pub trials: usize,
    /// Symbol vectors per channel realization.
    pub symbols_per_trial: usize,
    pub precoders: Vec<Precoder>,
    pub p0: f64,
    pub seed: u64,
    /// Iteration budget for the closed-form CI precoders; `None` is unlimited.
    pub n_max: Option<usize>,
    /// Worker threads; 0 uses the machine's parallelism.
    pub threads: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            nt: 8,
            k: 8,
            order: 4,
            snr_db_grid: (0..=7).map(|i| 5.0 * i as f64).collect(),
            trials: 500,
            symbols_per_trial: 200,
            precoders: vec![
                Precoder::Zf,
                Precoder::Rzf,
                Precoder::CiCfStrict,
                Precoder::CiCfNonStrict,
            ],
            p0: 1.0,
            seed: 1,
            n_max: None,
            threads: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.nt == 0 {
            return Err(Error::BadParameter(
                "need at least one user and one antenna".into(),
            ));
        }
        if self.k > self.nt {
            return Err(Error::BadDimensions(format!(
                "K <= N_t required, got K = {} and N_t = {}",
                self.k, self.nt
            )));
        }
        Constellation::new(self.order)?;
        if self.trials == 0 || self.symbols_per_trial == 0 {
            return Err(Error::BadParameter(
                "trials and symbols per trial must be >= 1".into(),
            ));
        }
        if self.snr_db_grid.is_empty() {
            return Err(Error::BadParameter("empty SNR grid".into()));
        }
        if self
            .snr_db_grid
            .iter()
            .any(|x| x.is_nan() || *x == f64::NEG_INFINITY)
        {
            return Err(Error::BadParameter("SNR values must be finite or +inf".into()));
        }
        if self.precoders.is_empty() {
            return Err(Error::BadParameter("no precoders selected".into()));
        }
        if self.order == 2
            && self
                .precoders
                .iter()
                .any(|p| matches!(p, Precoder::CiCfNonStrict | Precoder::CiQpNonStrict))
        {
            return Err(Error::UnsupportedModulation(std::f64::consts::FRAC_PI_2));
        }
        if !(self.p0 > 0.0) || !self.p0.is_finite() {
            return Err(Error::BadParameter(format!("power budget p0 = {}", self.p0)));
        }
        Ok(())
    }

    /// One-line description of the run, written as a `#` comment ahead of the
    /// CSV header. Thread count is left out since it never affects results.
    pub fn manifest(&self) -> String {
        let grid: Vec<String> = self.snr_db_grid.iter().map(|x| x.to_string()).collect();
        let precoders: Vec<&str> = self.precoders.iter().map(|p| p.name()).collect();
        format!(
            "# nt={} k={} mod={} snr_db={} trials={} symbols_per_trial={} precoders={} p0={} seed={} n_max={} \
             snr=transmit rho=1/sigma2",
            self.nt,
            self.k,
            modulation_name(self.order),
            grid.join(","),
            self.trials,
            self.symbols_per_trial,
            precoders.join(","),
            self.p0,
            self.seed,
            format_n_max(self.n_max),
        )
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::BadParameter(format!("thread pool: {e}")))
    }
}

/// One row of output.
#[derive(Clone, Debug, PartialEq)]
pub struct BerRecord {
    pub precoder: Precoder,
    pub nt: usize,
    pub k: usize,
    pub order: usize,
    pub snr_db: f64,
    /// Budget used by the iterative precoders, `None` elsewhere or when
    /// unlimited.
    pub n_max: Option<usize>,
    pub trials: usize,
    /// User symbols, K per transmitted vector.
    pub symbols: u64,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub symbol_errors: u64,
    pub ser: f64,
    /// Solver iterations per symbol vector (active-set steps for the
    /// closed-form precoders, gradient steps for the QP ones).
    pub avg_iterations: f64,
    pub fallback_count: u64,
    pub avg_solve_micros: f64,
    pub seed: u64,
}

impl BerRecord {
    fn to_row(&self) -> Vec<String> {
        vec![
            self.precoder.name().to_string(),
            self.nt.to_string(),
            self.k.to_string(),
            modulation_name(self.order).to_string(),
            self.snr_db.to_string(),
            if self.precoder.is_iterative() {
                format_n_max(self.n_max)
            } else {
                String::new()
            },
            self.trials.to_string(),
            self.symbols.to_string(),
            self.bits.to_string(),
            self.bit_errors.to_string(),
            self.ber.to_string(),
            self.symbol_errors.to_string(),
            self.ser.to_string(),
            self.avg_iterations.to_string(),
            self.fallback_count.to_string(),
            self.avg_solve_micros.to_string(),
            self.seed.to_string(),
        ]
    }
}

/// Writes the manifest line, header and rows.
pub fn write_csv<W: Write>(mut out: W, manifest: &str, records: &[BerRecord]) -> Result<()> {
    let io = |e: std::io::Error| Error::BadParameter(format!("write failed: {e}"));
    writeln!(out, "{manifest}").map_err(io)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::BadParameter(format!("write failed: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(r.to_row()).map_err(csv_err)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Counters for one (precoder, SNR) cell.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Tally {
    vectors: u64,
    bit_errors: u64,
    symbol_errors: u64,
    iterations: u64,
    fallbacks: u64,
}

impl std::ops::AddAssign for Tally {
    fn add_assign(&mut self, o: Self) {
        self.vectors += o.vectors;
        self.bit_errors += o.bit_errors;
        self.symbol_errors += o.symbol_errors;
        self.iterations += o.iterations;
        self.fallbacks += o.fallbacks;
    }
}

/// Output of one precoder on one symbol vector.
#[derive(Clone, Debug)]
pub struct Precoded {
    pub beamformer: BeamformingMatrix,
    pub iterations: usize,
    pub fallback: bool,
    /// Smallest constructive margin, CI precoders only.
    pub t_star: Option<f64>,
}

/// Computes one precoder for one `(H, s)`.
///
/// `rho` is the transmit SNR used by RZF. A closed-form CI run that stops at
/// the ZF point (no active constraints) returns the ZF beamformer itself,
/// which it equals.
#[allow(clippy::too_many_arguments)]
pub fn precode(
    precoder: Precoder,
    h: &ChannelMatrix,
    factor: &ChannelFactor,
    s: &SymbolVector,
    constellation: &Constellation,
    p0: f64,
    rho: f64,
    n_max: Option<usize>,
) -> Result<Precoded> {
    let plain = |beamformer| Precoded {
        beamformer,
        iterations: 0,
        fallback: false,
        t_star: None,
    };
    let rotation = match precoder.rotation(constellation) {
        None if precoder == Precoder::Zf => return Ok(plain(zf_with_factor(factor, s, p0).0)),
        None => return Ok(plain(rzf_precode(h, s, p0, rho)?)),
        Some(r) => r,
    };
    let kernel = CiKernel::build(h, s, p0, rotation)?;
    solve_kernel(precoder, &kernel, factor, s, n_max)
}

fn solve_kernel(
    precoder: Precoder,
    kernel: &CiKernel,
    factor: &ChannelFactor,
    s: &SymbolVector,
    n_max: Option<usize>,
) -> Result<Precoded> {
    let (u, iterations, fallback, at_zf) = if precoder.is_iterative() {
        let res = IterativeSolver::new(n_max).solve(kernel.form());
        let at_zf = res.active.is_empty();
        (res.u, res.iterations, res.fallback.is_some(), at_zf)
    } else {
        let (sol, converged) =
            solve_projected_gradient_lenient(kernel.form(), DEFAULT_PG_TOL, DEFAULT_PG_MAX_ITER)?;
        (sol.u, sol.iterations, !converged, false)
    };
    let (beamformer, dual) = kernel.beamformer_from_dual(&u)?;
    let beamformer = if at_zf {
        zf_with_factor(factor, s, kernel.power_budget()).0
    } else {
        beamformer
    };
    Ok(Precoded {
        beamformer,
        iterations,
        fallback,
        t_star: Some(dual.t_star),
    })
}

fn unit_noise(k: usize, rng: &mut SimRng) -> ComplexVector {
    ComplexVector::from_fn(k, |_, _| complex_gaussian(rng, 1.0))
}

/// Runs one channel realization; also returns the number of skipped symbol
/// vectors.
fn run_trial(cfg: &SimConfig, constellation: &Constellation, trial: usize) -> (Vec<Tally>, u64) {
    let n_snr = cfg.snr_db_grid.len();
    let mut tallies = vec![Tally::default(); cfg.precoders.len() * n_snr];
    let root = SimRng::new(cfg.seed);
    let mut ch_rng = root.substream(Stream::Channel, trial as u64);
    let mut sym_rng = root.substream(Stream::Symbols, trial as u64);
    let mut noise_rng = root.substream(Stream::Noise, trial as u64);

    let Ok(h) = sample_channel(cfg.k, cfg.nt, &mut ch_rng) else {
        return (tallies, cfg.symbols_per_trial as u64);
    };
    let Ok(factor) = ChannelFactor::new(h.matrix()) else {
        log::warn!("trial {trial}: rank-deficient channel skipped");
        return (tallies, cfg.symbols_per_trial as u64);
    };
    let sigma2: Vec<f64> = cfg.snr_db_grid.iter().map(|&x| noise_variance(x)).collect();
    let mut skipped = 0u64;
    let mut beams: Vec<Vec<Precoded>> = Vec::with_capacity(cfg.precoders.len());

    for _ in 0..cfg.symbols_per_trial {
        let s = SymbolVector::sample(cfg.k, constellation, &mut sym_rng);
        let noise = unit_noise(cfg.k, &mut noise_rng);
        beams.clear();
        let mut failed = false;
        for &p in &cfg.precoders {
            let per_snr: Result<Vec<Precoded>> = if p == Precoder::Rzf {
                sigma2
                    .iter()
                    .map(|&v| precode(p, &h, &factor, &s, constellation, cfg.p0, 1.0 / v, cfg.n_max))
                    .collect()
            } else {
                precode(
                    p,
                    &h,
                    &factor,
                    &s,
                    constellation,
                    cfg.p0,
                    f64::INFINITY,
                    cfg.n_max,
                )
                .map(|x| vec![x])
            };
            match per_snr {
                Ok(v) => beams.push(v),
                Err(e) => {
                    log::warn!("trial {trial}: {} failed ({e}); symbol skipped", p.name());
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            skipped += 1;
            continue;
        }
        for (pi, per_snr) in beams.iter().enumerate() {
            for (si, &v) in sigma2.iter().enumerate() {
                let pc = &per_snr[si.min(per_snr.len() - 1)];
                let mut r = h.matrix() * pc.beamformer.apply(s.values());
                if v > 0.0 {
                    r.axpy(
                        num_complex::Complex64::new(v.sqrt(), 0.0),
                        &noise,
                        num_complex::Complex64::new(1.0, 0.0),
                    );
                }
                let t = &mut tallies[pi * n_snr + si];
                t.vectors += 1;
                for (&tx, rx) in s.indices().iter().zip(r.iter()) {
                    let got = constellation.detect_index(*rx);
                    if got != tx {
                        t.symbol_errors += 1;
                        t.bit_errors += u64::from(constellation.bit_distance(tx, got));
                    }
                }
                t.iterations += pc.iterations as u64;
                t.fallbacks += u64::from(pc.fallback);
            }
        }
    }
    (tallies, skipped)
}

/// BER/SER versus SNR for every configured precoder.
///
/// Rows are ordered by precoder (as configured), then SNR.
pub fn run_ber_sweep(cfg: &SimConfig) -> Result<Vec<BerRecord>> {
    cfg.validate()?;
    let constellation = Constellation::new(cfg.order)?;
    let pool = cfg.pool()?;
    let per_trial: Vec<(Vec<Tally>, u64)> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, &constellation, t))
            .collect()
    });

    let n_snr = cfg.snr_db_grid.len();
    let mut totals = vec![Tally::default(); cfg.precoders.len() * n_snr];
    let mut skipped = 0;
    for (tallies, skip) in per_trial {
        skipped += skip;
        for (acc, t) in totals.iter_mut().zip(tallies) {
            *acc += t;
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} symbol vectors skipped");
    }

    let bits_per_symbol = constellation.bits_per_symbol() as u64;
    let mut out = Vec::with_capacity(totals.len());
    for (pi, &p) in cfg.precoders.iter().enumerate() {
        for (si, &snr_db) in cfg.snr_db_grid.iter().enumerate() {
            let t = totals[pi * n_snr + si];
            let symbols = t.vectors * cfg.k as u64;
            let bits = symbols * bits_per_symbol;
            let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
            out.push(BerRecord {
                precoder: p,
                nt: cfg.nt,
                k: cfg.k,
                order: cfg.order,
                snr_db,
                n_max: cfg.n_max,
                trials: cfg.trials,
                symbols,
                bits,
                bit_errors: t.bit_errors,
                ber: ratio(t.bit_errors, bits),
                symbol_errors: t.symbol_errors,
                ser: ratio(t.symbol_errors, symbols),
                avg_iterations: ratio(t.iterations, t.vectors),
                fallback_count: t.fallbacks,
                avg_solve_micros: 0.0,
                seed: cfg.seed,
            });
        }
    }
    Ok(out)
}

/// Average active-set iterations for strict and non-strict rotation at each
/// K in `ks`, noiseless. EmptyS symbols count as zero iterations.
///
/// One record per (K, rotation); `avg_iterations` carries the statistic.
pub fn run_iteration_stats(cfg: &SimConfig, ks: &[usize]) -> Result<Vec<BerRecord>> {
    let mut out = Vec::new();
    for &k in ks {
        let mut precoders = vec![Precoder::CiCfStrict];
        if cfg.order > 2 {
            precoders.push(Precoder::CiCfNonStrict);
        }
        let sub = SimConfig {
            k,
            snr_db_grid: vec![f64::INFINITY],
            precoders,
            ..cfg.clone()
        };
        out.extend(run_ber_sweep(&sub)?);
    }
    Ok(out)
}

/// BER of the closed-form CI precoders for each budget in `n_max_grid`,
/// preceded by the ZF rows. All runs share the seed and hence the streams.
pub fn run_tradeoff(cfg: &SimConfig, n_max_grid: &[Option<usize>]) -> Result<Vec<BerRecord>> {
    let ci: Vec<Precoder> = cfg
        .precoders
        .iter()
        .copied()
        .filter(|p| p.is_iterative())
        .collect();
    let ci = if ci.is_empty() {
        vec![Precoder::CiCfStrict]
    } else {
        ci
    };
    let mut out = run_ber_sweep(&SimConfig {
        precoders: vec![Precoder::Zf],
        ..cfg.clone()
    })?;
    for &n_max in n_max_grid {
        out.extend(run_ber_sweep(&SimConfig {
            precoders: ci.clone(),
            n_max,
            ..cfg.clone()
        })?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRecord {
    pub precoder: Precoder,
    pub k: usize,
    pub symbols: usize,
    pub mean_micros: f64,
    pub median_micros: f64,
    pub avg_iterations: f64,
}

/// Per-symbol precoder computation time given the kernel, single-threaded.
///
/// For CI precoders the timed region is the dual solve plus beamformer
/// reconstruction; kernel construction is excluded. ZF times the
/// precoded-vector computation from the channel factor. The first
/// [`TIMING_WARMUP`] symbols are not timed.
pub fn run_timing(cfg: &SimConfig) -> Result<Vec<TimingRecord>> {
    cfg.validate()?;
    let constellation = Constellation::new(cfg.order)?;
    let root = SimRng::new(cfg.seed);
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); cfg.precoders.len()];
    let mut iterations = vec![0u64; cfg.precoders.len()];
    let mut seen = 0usize;
    let mut sink = 0.0f64;

    for trial in 0..cfg.trials {
        let mut ch_rng = root.substream(Stream::Channel, trial as u64);
        let mut sym_rng = root.substream(Stream::Symbols, trial as u64);
        let h = sample_channel(cfg.k, cfg.nt, &mut ch_rng)?;
        let Ok(factor) = ChannelFactor::new(h.matrix()) else {
            continue;
        };
        for _ in 0..cfg.symbols_per_trial + if trial == 0 { TIMING_WARMUP } else { 0 } {
            let s = SymbolVector::sample(cfg.k, &constellation, &mut sym_rng);
            seen += 1;
            let timed = seen > TIMING_WARMUP;
            for (pi, &p) in cfg.precoders.iter().enumerate() {
                let kernel = match p.rotation(&constellation) {
                    Some(r) => Some(CiKernel::build(&h, &s, cfg.p0, r)?),
                    None => None,
                };
                let start = Instant::now();
                let (x, iters) = match (&kernel, p) {
                    (Some(kern), _) => {
                        let out = solve_kernel(p, kern, &factor, &s, cfg.n_max)?;
                        (out.beamformer, out.iterations)
                    }
                    (None, Precoder::Zf) => (zf_with_factor(&factor, &s, cfg.p0).0, 0),
                    (None, _) => {
                        let rho = 1.0 / noise_variance(cfg.snr_db_grid[0]);
                        (rzf_precode(&h, &s, cfg.p0, rho)?, 0)
                    }
                };
                let elapsed = start.elapsed().as_secs_f64() * 1e6;
                sink += x.precoded()[0].re;
                if timed {
                    samples[pi].push(elapsed);
                    iterations[pi] += iters as u64;
                }
            }
        }
    }
    std::hint::black_box(sink);

    Ok(cfg
        .precoders
        .iter()
        .zip(samples)
        .zip(iterations)
        .map(|((&precoder, mut xs), iters)| {
            let n = xs.len();
            let mean = xs.iter().sum::<f64>() / n.max(1) as f64;
            xs.sort_by(f64::total_cmp);
            let median = match n {
                0 => 0.0,
                n if n % 2 == 1 => xs[n / 2],
                n => 0.5 * (xs[n / 2 - 1] + xs[n / 2]),
            };
            TimingRecord {
                precoder,
                k: cfg.k,
                symbols: n,
                mean_micros: mean,
                median_micros: median,
                avg_iterations: iters as f64 / n.max(1) as f64,
            }
        })
        .collect())
}

impl TimingRecord {
    /// Row in the common CSV layout; error counts are not measured here.
    pub fn to_ber_record(&self, cfg: &SimConfig) -> BerRecord {
        BerRecord {
            precoder: self.precoder,
            nt: cfg.nt,
            k: self.k,
            order: cfg.order,
            snr_db: cfg.snr_db_grid[0],
            n_max: cfg.n_max,
            trials: cfg.trials,
            symbols: (self.symbols * self.k) as u64,
            bits: 0,
            bit_errors: 0,
            ber: 0.0,
            symbol_errors: 0,
            ser: 0.0,
            avg_iterations: self.avg_iterations,
            fallback_count: 0,
            avg_solve_micros: self.mean_micros,
            seed: cfg.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(precoders: Vec<Precoder>) -> SimConfig {
        SimConfig {
            nt: 4,
            k: 4,
            trials: 6,
            symbols_per_trial: 20,
            snr_db_grid: vec![0.0, 10.0, f64::INFINITY],
            precoders,
            seed: 11,
            ..SimConfig::default()
        }
    }

    #[test]
    fn precoder_names_round_trip() {
        for p in Precoder::ALL {
            assert_eq!(p.name().parse::<Precoder>().unwrap(), p);
        }
        assert!("mmse".parse::<Precoder>().is_err());
        assert_eq!(
            parse_precoders("zf, rzf,zf").unwrap(),
            vec![Precoder::Zf, Precoder::Rzf]
        );
        assert!(parse_precoders(",").is_err());
    }

    #[test]
    fn noise_variance_examples() {
        assert_eq!(noise_variance(0.0), 1.0);
        assert!((noise_variance(30.0) - 1e-3).abs() < 1e-18);
        assert_eq!(noise_variance(f64::INFINITY), 0.0);
    }

    #[test]
    fn validation() {
        assert!(small(vec![Precoder::Zf]).validate().is_ok());
        let bad = SimConfig {
            k: 9,
            nt: 8,
            ..SimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::BadDimensions(m)) if m.contains("K <= N_t")));
        assert!(SimConfig {
            trials: 0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            snr_db_grid: vec![],
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            order: 3,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        let bpsk = SimConfig {
            order: 2,
            precoders: vec![Precoder::CiCfNonStrict],
            ..SimConfig::default()
        };
        assert!(bpsk.validate().is_err());
    }

    #[test]
    fn noiseless_point_is_error_free() {
        let cfg = small(Precoder::ALL.to_vec());
        let rows = run_ber_sweep(&cfg).unwrap();
        assert_eq!(rows.len(), 6 * 3);
        for r in rows.iter().filter(|r| r.snr_db.is_infinite()) {
            assert_eq!(r.bit_errors, 0, "{}", r.precoder);
            assert_eq!(r.symbol_errors, 0);
        }
        for r in &rows {
            assert_eq!(r.symbols, 6 * 20 * 4);
            assert_eq!(r.bits, r.symbols * 2);
            assert!(r.ser >= r.ber);
            assert!((0.0..=1.0).contains(&r.ber));
        }
    }

    #[test]
    fn closed_form_and_qp_agree() {
        let cfg = small(vec![Precoder::CiCfStrict, Precoder::CiQpStrict]);
        let rows = run_ber_sweep(&cfg).unwrap();
        let (cf, qp) = rows.split_at(3);
        for (a, b) in cf.iter().zip(qp) {
            assert_eq!(a.bit_errors, b.bit_errors);
            assert_eq!(a.symbol_errors, b.symbol_errors);
        }
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let cfg = small(vec![Precoder::Zf, Precoder::CiCfNonStrict]);
        let one = run_ber_sweep(&SimConfig {
            threads: 1,
            ..cfg.clone()
        })
        .unwrap();
        let four = run_ber_sweep(&SimConfig { threads: 4, ..cfg }).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn single_user_never_iterates() {
        let cfg = SimConfig {
            nt: 4,
            trials: 5,
            symbols_per_trial: 20,
            ..SimConfig::default()
        };
        let rows = run_iteration_stats(&cfg, &[1]).unwrap();
        let strict = rows.iter().find(|r| r.precoder == Precoder::CiCfStrict).unwrap();
        assert_eq!(strict.avg_iterations, 0.0);
    }

    #[test]
    fn zero_budget_matches_zf() {
        let cfg = SimConfig {
            snr_db_grid: vec![5.0],
            ..small(vec![Precoder::CiCfStrict])
        };
        let rows = run_tradeoff(&cfg, &[Some(0), None]).unwrap();
        assert_eq!(rows[0].precoder, Precoder::Zf);
        assert_eq!(rows[0].bit_errors, rows[1].bit_errors);
        assert_eq!(rows[1].avg_iterations, 0.0);
    }

    #[test]
    fn csv_layout() {
        let cfg = small(vec![Precoder::Zf, Precoder::CiCfStrict]);
        let rows = run_ber_sweep(&cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &cfg.manifest(), &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# nt=4"));
        assert_eq!(lines[1], CSV_HEADER.join(","));
        assert_eq!(lines.len(), 2 + rows.len());
        assert!(lines[2].starts_with("zf,4,4,qpsk,0,,6,"));
        assert!(lines[5].starts_with("ci-cf-strict,4,4,qpsk,0,inf,6,"));
    }

    #[test]
    fn timing_reports_every_precoder() {
        let cfg = SimConfig {
            trials: 2,
            symbols_per_trial: 10,
            ..small(vec![Precoder::Zf, Precoder::CiCfStrict, Precoder::CiQpStrict])
        };
        let t = run_timing(&cfg).unwrap();
        assert_eq!(t.len(), 3);
        for r in &t {
            assert_eq!(r.symbols, 20);
            assert!(r.median_micros > 0.0);
        }
    }
}
