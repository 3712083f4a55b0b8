//! Command-line front end: key management, encryption, bootstraps, noise
//! sweeps and performance reports. Every verb is deterministic for a
//! fixed --seed; failures print a machine-readable JSON object on stderr
//! and exit with a kind-specific code.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tpbs_core::fft::{Arithmetic, FftPlan};
use tpbs_core::fixed::{FpContext, RoundingMode};
use tpbs_core::noise::{
    select_msb, sweep_lsb, total_budget, write_sweep_csv, Knob, NoiseLab, SweepResult,
};
use tpbs_core::params::DatapathFormats;
use tpbs_core::pbs::{
    encrypt_bit, gate_nand, nand_lut, programmable_bootstrap, BootstrappingKey, PbsConfig,
    RawBootstrappingKey,
};
use tpbs_core::perf::PipelineConfig;
use tpbs_core::torus::{keygen, tlwe_decrypt, torus_to_f64, NoiseRng};
use tpbs_core::{Error, FixedPointFormat, ParamSet, TfheParams};

#[derive(Parser)]
#[command(name = "tpbs", about = "TFHE programmable bootstrapping over an emulated fixed-point FFT datapath", version)]
struct Cli {
    #[command(flatten)]
    run: RunConfig,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunConfig {
    /// Parameter-set preset (I or II).
    #[arg(long, global = true, default_value = "I")]
    param_set: String,
    /// Master seed; all randomness flows from named sub-streams of it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Datapath arithmetic for bootstraps.
    #[arg(long, global = true, value_enum, default_value_t = FftMode::Fixed)]
    fft_mode: FftMode,
    /// Format overrides, e.g. "bk=26:7:19,fft=29:15:14,ifft=29:23:6".
    /// Unmentioned formats keep their preset values; overriding fft also
    /// re-derives the twiddle width unless twiddle= is given explicitly.
    #[arg(long, global = true)]
    formats: Option<String>,
    /// Rounding mode of the fixed datapath.
    #[arg(long, global = true, value_enum, default_value_t = Rounding::NearestEven)]
    rounding: Rounding,
    /// Worker threads for independent trials/sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output file ("-" or absent = stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FftMode {
    Reference,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rounding {
    Truncate,
    HalfUp,
    NearestEven,
}

impl From<Rounding> for RoundingMode {
    fn from(r: Rounding) -> Self {
        match r {
            Rounding::Truncate => RoundingMode::Truncate,
            Rounding::HalfUp => RoundingMode::HalfUp,
            Rounding::NearestEven => RoundingMode::NearestEven,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate secret keys for the chosen parameter set.
    Keygen,
    /// Encrypt one Boolean plaintext as a fresh TLWE ciphertext.
    Encrypt {
        /// Plaintext bit ("true"/"false").
        #[arg(long, action = clap::ArgAction::Set)]
        bit: bool,
        #[arg(long)]
        key: PathBuf,
    },
    /// Decrypt a TLWE ciphertext (under the base or extracted key).
    Decrypt {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Programmable bootstrap of a TLWE ciphertext with the sign LUT.
    Pbs {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Bootstrapped binary gate over two ciphertext files.
    Gate {
        #[arg(long, value_parser = ["nand"])]
        op: String,
        #[arg(long)]
        in1: PathBuf,
        #[arg(long)]
        in2: PathBuf,
        #[arg(long)]
        key: PathBuf,
    },
    /// Sweep the LSB width of one datapath knob and select the smallest
    /// width meeting the per-source noise budget. Writes CSV to --out and
    /// a JSON summary to stdout.
    Sweep {
        #[arg(long, value_parser = ["bk", "fft", "ifft"])]
        knob: String,
        /// Smallest fractional width to try (default per knob/set).
        #[arg(long)]
        min_frac: Option<u8>,
        /// Largest fractional width to try (default per knob/set).
        #[arg(long)]
        max_frac: Option<u8>,
        /// Coefficient samples per sweep point.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Decoding-failure target as -log2 (32 means 2^-32).
        #[arg(long, default_value_t = 32)]
        target_log2: u32,
    },
    /// Integer bits needed to keep overflow probability under the target.
    SelectMsb {
        #[arg(long)]
        sigma: f64,
        /// Overflow-probability target as -log2 (64 means 2^-64).
        #[arg(long, default_value_t = 64)]
        target_log2: u32,
    },
    /// Analytic streaming-pipeline report (cycles, batch, latency,
    /// throughput, bandwidth).
    Perf,
}

/// Exit codes: 3 file I/O, 4 invalid parameters/formats, 5 budget
/// unsatisfiable, 6 malformed data files, 1 everything else.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => 3,
        Error::InvalidParams(_) | Error::InvalidFormat(_) | Error::StreamingWidth { .. } => 4,
        Error::BudgetUnsatisfiable => 5,
        Error::Format(_) | Error::DimensionMismatch { .. } | Error::Json(_) => 6,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        let code = exit_code(&e);
        eprintln!(
            "{}",
            serde_json::json!({ "error": e.to_string(), "code": code })
        );
        std::process::exit(code);
    }
}

fn parse_formats(set: ParamSet, spec: Option<&str>) -> Result<DatapathFormats, Error> {
    let mut formats = set.formats();
    let Some(spec) = spec else { return Ok(formats) };
    let mut twiddle_explicit = false;
    for part in spec.split(',') {
        let (name, fmt) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidFormat(format!("expected name=w:i:f, got {part:?}")))?;
        let fmt: FixedPointFormat = fmt.parse()?;
        match name {
            "bk" => formats.bk = fmt,
            "fft" => {
                formats.fft = fmt;
                if !twiddle_explicit {
                    formats.twiddle = DatapathFormats::twiddle_for(fmt.width);
                }
            }
            "ifft" => formats.ifft = fmt,
            "twiddle" => {
                formats.twiddle = fmt;
                twiddle_explicit = true;
            }
            other => return Err(Error::InvalidFormat(format!("unknown format name {other:?}"))),
        }
    }
    Ok(formats)
}

struct Setup {
    params: TfheParams,
    formats: DatapathFormats,
    plan: FftPlan,
}

fn setup(run: &RunConfig) -> Result<Setup, Error> {
    let set: ParamSet = run.param_set.parse()?;
    let params = set.params();
    params.validate()?;
    let formats = parse_formats(set, run.formats.as_deref())?;
    let plan = match run.fft_mode {
        FftMode::Reference => FftPlan::reference(params.poly_size),
        FftMode::Fixed => FftPlan::new(
            params.poly_size,
            Arithmetic::Fixed { formats, rounding: run.rounding.into() },
        )?,
    };
    Ok(Setup { params, formats, plan })
}

/// Opens --out for writing, or stdout when absent or "-".
fn open_output(out: Option<&PathBuf>) -> Result<Box<dyn Write>, Error> {
    match out {
        Some(p) if p.as_os_str() != "-" => Ok(Box::new(BufWriter::new(File::create(p)?))),
        _ => Ok(Box::new(std::io::stdout().lock())),
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let run = &cli.run;
    match &cli.command {
        Command::Keygen => {
            let s = setup(run)?;
            let keys = keygen(&s.params, run.seed);
            let mut w = open_output(run.out.as_ref())?;
            tpbs_core::io::write_secret_keys(&mut w, &keys, &s.params)?;
            w.flush()?;
            Ok(())
        }
        Command::Encrypt { bit, key } => {
            let s = setup(run)?;
            let keys =
                tpbs_core::io::read_secret_keys(&mut BufReader::new(File::open(key)?), &s.params)?;
            let mut rng = NoiseRng::new(tpbs_core::rng::stream(run.seed, "cli-encrypt"));
            let ct = encrypt_bit(*bit, &keys, &s.params, &mut rng);
            let mut w = open_output(run.out.as_ref())?;
            tpbs_core::io::write_tlwe(&mut w, &ct, &s.params)?;
            w.flush()?;
            Ok(())
        }
        Command::Decrypt { key, input } => {
            let s = setup(run)?;
            let keys =
                tpbs_core::io::read_secret_keys(&mut BufReader::new(File::open(key)?), &s.params)?;
            let ct = tpbs_core::io::read_tlwe(&mut BufReader::new(File::open(input)?), &s.params)?;
            let dec_key: &[u32] =
                if ct.dim() == s.params.n { &keys.tlwe_key } else { &keys.extracted_key };
            let phase = tlwe_decrypt(&ct, dec_key)?;
            let bit = (phase as i32) >= 0;
            let mut w = open_output(run.out.as_ref())?;
            let report = serde_json::json!({
                "bit": bit,
                "phase_torus": torus_to_f64(phase),
            });
            writeln!(w, "{report}")?;
            w.flush()?;
            Ok(())
        }
        Command::Pbs { key, input } => {
            let s = setup(run)?;
            let keys =
                tpbs_core::io::read_secret_keys(&mut BufReader::new(File::open(key)?), &s.params)?;
            let ct = tpbs_core::io::read_tlwe(&mut BufReader::new(File::open(input)?), &s.params)?;
            let (bk, lut, mut ctx) = prepare_bootstrap(&s, &keys, run.seed);
            let out = programmable_bootstrap(
                &ct,
                &lut,
                &bk,
                &s.params,
                &s.plan,
                &PbsConfig::default(),
                &mut ctx,
            )?;
            ctx.check()?;
            let mut w = open_output(run.out.as_ref())?;
            tpbs_core::io::write_tlwe(&mut w, &out, &s.params)?;
            w.flush()?;
            Ok(())
        }
        Command::Gate { op: _, in1, in2, key } => {
            let s = setup(run)?;
            let keys =
                tpbs_core::io::read_secret_keys(&mut BufReader::new(File::open(key)?), &s.params)?;
            let c1 = tpbs_core::io::read_tlwe(&mut BufReader::new(File::open(in1)?), &s.params)?;
            let c2 = tpbs_core::io::read_tlwe(&mut BufReader::new(File::open(in2)?), &s.params)?;
            let (bk, lut, mut ctx) = prepare_bootstrap(&s, &keys, run.seed);
            let out =
                gate_nand(&c1, &c2, &lut, &bk, &s.params, &s.plan, &PbsConfig::default(), &mut ctx)?;
            ctx.check()?;
            let mut w = open_output(run.out.as_ref())?;
            tpbs_core::io::write_tlwe(&mut w, &out, &s.params)?;
            w.flush()?;
            Ok(())
        }
        Command::Sweep { knob, min_frac, max_frac, trials, target_log2 } => {
            let s = setup(run)?;
            let knob: Knob = knob.parse()?;
            let set: ParamSet = run.param_set.parse()?;
            let (lo, hi) = default_range(knob, set);
            let lo = min_frac.unwrap_or(lo);
            let hi = max_frac.unwrap_or(hi);
            if lo > hi {
                return Err(Error::InvalidParams(format!("empty range {lo}..={hi}")));
            }
            let budget = total_budget(1, (-(f64::from(*target_log2)) * std::f64::consts::LN_2).exp());
            let rounding: RoundingMode = run.rounding.into();
            let result = if run.jobs > 1 {
                parallel_sweep(&s, run, knob, lo..=hi, &budget, *trials, rounding)?
            } else {
                let mut lab = NoiseLab::new(s.params.clone(), s.formats, run.seed);
                sweep_lsb(&mut lab, knob, lo..=hi, &budget, *trials, rounding)?
            };
            let mut w = open_output(run.out.as_ref())?;
            write_sweep_csv(&mut w, &result)?;
            w.flush()?;
            println!(
                "{}",
                serde_json::json!({
                    "knob": format!("{knob:?}").to_lowercase(),
                    "selected_fractional_bits": result.selected,
                    "per_source_budget": result.per_source_budget,
                    "points": result.points.len(),
                })
            );
            Ok(())
        }
        Command::SelectMsb { sigma, target_log2 } => {
            let target = (-(f64::from(*target_log2)) * std::f64::consts::LN_2).exp();
            let p = select_msb(*sigma, target)?;
            let mut w = open_output(run.out.as_ref())?;
            writeln!(
                w,
                "{}",
                serde_json::json!({ "sigma": sigma, "target_log2": -(f64::from(*target_log2)), "integer_bits": p })
            )?;
            w.flush()?;
            Ok(())
        }
        Command::Perf => {
            let set: ParamSet = run.param_set.parse()?;
            let cfg = match set {
                ParamSet::I => PipelineConfig::set_i(),
                ParamSet::II => PipelineConfig::set_ii(),
            };
            let report = cfg.report()?;
            let mut w = open_output(run.out.as_ref())?;
            writeln!(w, "{}", serde_json::to_string_pretty(&report)?)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn prepare_bootstrap(
    s: &Setup,
    keys: &tpbs_core::torus::SecretKeys,
    seed: u64,
) -> (BootstrappingKey, tpbs_core::pbs::TestPolynomial, FpContext) {
    let raw = RawBootstrappingKey::generate(&s.params, keys, tpbs_core::rng::stream(seed, "bk"));
    let mut ctx = FpContext::default();
    let bk = BootstrappingKey::from_raw(&raw, &s.plan, &mut ctx);
    (bk, nand_lut(&s.params), ctx)
}

fn default_range(knob: Knob, set: ParamSet) -> (u8, u8) {
    match (knob, set) {
        (Knob::Bk, _) => (15, 23),
        (Knob::Fft, ParamSet::I) => (10, 18),
        (Knob::Fft, ParamSet::II) => (9, 17),
        (Knob::Ifft, ParamSet::I) => (2, 9),
        (Knob::Ifft, ParamSet::II) => (1, 8),
    }
}

/// Sweep points are independent given the shared seed, so they can run on
/// separate labs in parallel; the per-point measurements are identical to
/// the sequential ones and results are collected in range order.
fn parallel_sweep(
    s: &Setup,
    run: &RunConfig,
    knob: Knob,
    range: std::ops::RangeInclusive<u8>,
    budget: &tpbs_core::noise::NoiseBudget,
    trials: usize,
    rounding: RoundingMode,
) -> Result<SweepResult, Error> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.jobs)
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let candidates: Vec<u8> = range.collect();
    let measured: Vec<_> = pool.install(|| {
        candidates
            .par_iter()
            .map(|&frac| {
                let mut lab = NoiseLab::new(s.params.clone(), s.formats, run.seed);
                let formats = lab.sweep_formats(knob, frac);
                lab.measure_output_noise(formats, rounding, trials).map(|rep| (frac, rep))
            })
            .collect::<Result<_, _>>()
    })?;
    let per_source = budget.per_source();
    let points: Vec<_> = measured
        .iter()
        .map(|(frac, rep)| tpbs_core::noise::SweepPoint {
            fractional_bits: *frac,
            variance: rep.variance,
            ci_low: rep.ci_low,
            ci_high: rep.ci_high,
            trials: rep.count,
            overflows: rep.overflows,
        })
        .collect();
    let selected = points
        .iter()
        .find(|p| p.variance <= per_source)
        .map(|p| p.fractional_bits)
        .ok_or(Error::BudgetUnsatisfiable)?;
    Ok(SweepResult { knob, per_source_budget: per_source, points, selected })
}
