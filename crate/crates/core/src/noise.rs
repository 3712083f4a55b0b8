//! Fixed-point parameter selection methodology.
//!
//! The MSB side of every datapath format is placed from a measured
//! standard deviation and an overflow-probability target
//! (P_of = 1 - erf(2^p / (2*sqrt(2)*sigma)), evaluated in the log domain
//! so 2^-64 tails do not underflow). The LSB side is selected by sweeping
//! one knob (BK, FFT or IFFT fractional bits) while the other formats sit
//! at width 53, measuring the *approximation* noise as the paired
//! difference between a fixed-path and a reference-path bootstrap on
//! identical randomness — the inherent FHE noise cancels in the pairing —
//! and picking the smallest fractional width whose variance fits the
//! per-source share of the noise budget.
//!
//! The pairing runs both datapaths along a synchronized trajectory: at
//! every blind-rotation iteration both paths CMUX the *same* (reference)
//! accumulator, the per-iteration ciphertext differences are summed, and
//! the rotation continues from the reference result. Synchronizing keeps
//! the gadget decompositions of the two paths identical, so the diff is
//! purely datapath rounding error; letting the paths diverge instead
//! flips decomposition digits after a few iterations, which re-randomizes
//! the ciphertext coefficients and saturates a naive paired difference at
//! the variance of a uniform torus sample.

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::fft::{Arithmetic, FftPlan};
use crate::fixed::{FpContext, RoundingMode};
use crate::params::DatapathFormats;
use crate::pbs::{encrypt_bit, nand_lut, BootstrappingKey, RawBootstrappingKey, TestPolynomial};
use crate::torus::{keygen, torus_to_f64, NoiseRng, SecretKeys, TorusPolynomial};
use crate::{Error, Result, TfheParams};

// ---------------------------------------------------------------------------
// Tail probabilities in the log domain
// ---------------------------------------------------------------------------

/// ln(erfc(x)), accurate down to tails of 2^-128 and beyond.
///
/// For x <= 6, erfc itself is far from underflow and the direct value is
/// used. For x > 6 the asymptotic expansion
/// erfc(x) ~ e^{-x^2} / (x sqrt(pi)) * sum_k (-1)^k (2k-1)!! / (2x^2)^k
/// is summed to convergence.
pub fn ln_erfc(x: f64) -> f64 {
    if x <= 6.0 {
        return statrs::function::erf::erfc(x).ln();
    }
    let inv2x2 = 1.0 / (2.0 * x * x);
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for k in 1..=20u32 {
        term *= -((2 * k - 1) as f64) * inv2x2;
        sum += term;
        if term.abs() < f64::EPSILON * sum.abs() {
            break;
        }
    }
    -x * x - (x * std::f64::consts::PI.sqrt()).ln() + sum.ln()
}

/// Solves erfc(x) = target (target given as ln) by bisection on `ln_erfc`.
pub fn erfc_inv_ln(ln_target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 16.0f64);
    while ln_erfc(hi) > ln_target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ln_erfc(mid) > ln_target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest integer p such that 1 - erf(2^p / (2*sqrt(2)*sigma)) <=
/// `p_of_target`: the number of integer bits (sign included) that keeps
/// the overflow probability of a zero-mean Gaussian intermediate with
/// standard deviation `sigma` below the target.
pub fn select_msb(sigma: f64, p_of_target: f64) -> Result<u8> {
    if sigma <= 0.0 {
        return Err(Error::InvalidParams(format!("sigma must be positive, got {sigma}")));
    }
    let ln_target = p_of_target.ln(); // target 1 gives 0, every p passes
    for p in 1..=63u8 {
        let u = (p as f64).exp2() / (2.0 * std::f64::consts::SQRT_2 * sigma);
        if ln_erfc(u) <= ln_target {
            return Ok(p);
        }
    }
    Err(Error::InvalidParams(format!("no width up to 63 bits reaches P_of <= {p_of_target}")))
}

// ---------------------------------------------------------------------------
// Noise budget
// ---------------------------------------------------------------------------

/// Total acceptable output-noise variance and how it is shared.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NoiseBudget {
    /// Total acceptable output noise variance, torus units squared.
    pub sigma2_total_allowed: f64,
    /// Share of the total *standard deviation* granted to approximation
    /// noise (the rest covers inherent FHE noise); enters squared.
    pub approx_fraction: f64,
    /// Share of the approximation variance granted to each of the three
    /// sources (BK, FFT, IFFT).
    pub per_source_fraction: f64,
}

impl NoiseBudget {
    /// Variance budget for the approximation noise as a whole.
    pub fn approx_budget(&self) -> f64 {
        self.sigma2_total_allowed * self.approx_fraction * self.approx_fraction
    }

    /// Variance budget for one of the three sources.
    pub fn per_source(&self) -> f64 {
        self.approx_budget() * self.per_source_fraction
    }

    pub fn infinite() -> Self {
        Self {
            sigma2_total_allowed: f64::INFINITY,
            approx_fraction: 0.5,
            per_source_fraction: 1.0 / 3.0,
        }
    }
}

/// Budget from a decoding-failure target: the largest output stddev such
/// that a Gaussian error stays inside the decision margin
/// 2^-(message_bits+3) with probability 1 - target (the margin is half the
/// message bucket, covering the worst-case gate linear combination), then
/// the default 1/2 stddev / 1/3-per-source split.
pub fn total_budget(message_bits: u32, target_failure_prob: f64) -> NoiseBudget {
    let half_width = (-(message_bits as f64) - 3.0).exp2();
    let x_star = erfc_inv_ln(target_failure_prob.ln());
    let sigma_max = half_width / (std::f64::consts::SQRT_2 * x_star);
    NoiseBudget {
        sigma2_total_allowed: sigma_max * sigma_max,
        approx_fraction: 0.5,
        per_source_fraction: 1.0 / 3.0,
    }
}

// ---------------------------------------------------------------------------
// Variance measurement
// ---------------------------------------------------------------------------

/// Sample variance with a bootstrap-resampled 95% confidence interval.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct VarianceReport {
    pub variance: f64,
    pub count: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Fixed-point overflow events observed while measuring.
    pub overflows: u64,
}

/// Unbiased variance of `samples` (grouped per trial for resampling).
fn variance_report(groups: &[Vec<f64>], seed: u64, overflows: u64) -> VarianceReport {
    let count: usize = groups.iter().map(Vec::len).sum();
    let all_sum: f64 = groups.iter().flatten().sum();
    let mean = if count > 0 { all_sum / count as f64 } else { 0.0 };
    let ss: f64 = groups.iter().flatten().map(|x| (x - mean) * (x - mean)).sum();
    let variance = if count > 1 { ss / (count - 1) as f64 } else { 0.0 };

    // Bootstrap over trial groups (200 resamples, percentile CI).
    let mut rng = crate::rng::stream(seed, "variance-ci");
    let mut resampled = Vec::with_capacity(200);
    if groups.len() > 1 {
        for _ in 0..200 {
            let mut s2 = 0.0;
            let mut n = 0usize;
            for _ in 0..groups.len() {
                let g = &groups[rng.gen_range(0..groups.len())];
                s2 += g.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
                n += g.len();
            }
            resampled.push(if n > 1 { s2 / (n - 1) as f64 } else { 0.0 });
        }
        resampled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    let (ci_low, ci_high) = if resampled.is_empty() {
        (variance, variance)
    } else {
        (resampled[4], resampled[194])
    };
    VarianceReport { variance, count, ci_low, ci_high, overflows }
}

/// Named datapath probe points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TapPoint {
    /// Folded + twisted FFT input.
    FftInput,
    /// Output of forward stage s (0-based).
    FftStage(usize),
    /// MAC accumulator after the full (k+1)l-term dot product.
    MacAcc,
    /// Output of inverse stage s.
    IfftStage(usize),
    /// Untwisted inverse output before final compensation.
    IfftOutput,
}

impl std::str::FromStr for TapPoint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "fft-input" {
            return Ok(TapPoint::FftInput);
        }
        if s == "mac" {
            return Ok(TapPoint::MacAcc);
        }
        if s == "ifft-output" {
            return Ok(TapPoint::IfftOutput);
        }
        if let Some(n) = s.strip_prefix("fft-stage-") {
            if let Ok(n) = n.parse() {
                return Ok(TapPoint::FftStage(n));
            }
        }
        if let Some(n) = s.strip_prefix("ifft-stage-") {
            if let Ok(n) = n.parse() {
                return Ok(TapPoint::IfftStage(n));
            }
        }
        Err(Error::UnknownTap(s.into()))
    }
}

/// Workload driving the probe measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Workload {
    /// External-product dataflow with random decomposition digits and
    /// random (uniform-torus) key rows — the distribution the datapath
    /// sees during a bootstrap.
    RandomBootstrap,
    /// All-zero inputs (sanity: every tap reads zero).
    Zero,
}

/// Measures the sample variance of the real/imaginary components seen at
/// `tap` over `trials` simulated external products (reference arithmetic,
/// real units of the unscaled datapath).
pub fn measure_variance(
    params: &TfheParams,
    tap: TapPoint,
    workload: Workload,
    trials: usize,
    seed: u64,
) -> Result<VarianceReport> {
    if trials < 100 {
        return Err(Error::InvalidParams(format!("need >= 100 trials, got {trials}")));
    }
    let plan = FftPlan::reference(params.poly_size);
    let stages = params.fft_size().trailing_zeros() as usize;
    match tap {
        TapPoint::FftStage(s) if s >= stages => return Err(Error::UnknownTap(format!("fft-stage-{s}"))),
        TapPoint::IfftStage(s) if s >= stages => {
            return Err(Error::UnknownTap(format!("ifft-stage-{s}")))
        }
        _ => {}
    }
    let mut ctx = FpContext::default();
    let terms = params.ggsw_rows();
    let half_base = 1i64 << (params.base_log - 1);
    let mut groups = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = crate::rng::trial_stream(seed, "probe", t as u64);
        let mut samples = Vec::new();
        let push = |v: &[Complex64], out: &mut Vec<f64>| {
            for z in v {
                out.push(z.re);
                out.push(z.im);
            }
        };
        let mut mac = vec![Complex64::new(0.0, 0.0); params.fft_size()];
        for _ in 0..terms {
            let digits: Vec<f64> = (0..params.poly_size)
                .map(|_| match workload {
                    Workload::RandomBootstrap => rng.gen_range(-half_base..half_base) as f64,
                    Workload::Zero => 0.0,
                })
                .collect();
            let snaps = plan.forward_snapshots(&digits);
            match tap {
                TapPoint::FftInput => push(&snaps[0], &mut samples),
                TapPoint::FftStage(s) => push(&snaps[s + 1], &mut samples),
                _ => {}
            }
            let row = match workload {
                Workload::RandomBootstrap => {
                    TorusPolynomial::from_coeffs((0..params.poly_size).map(|_| rng.gen()).collect())
                }
                Workload::Zero => TorusPolynomial::zero(params.poly_size),
            };
            let bk = plan.const_spectrum(&row, None, &mut ctx);
            for (acc, (x, b)) in mac.iter_mut().zip(snaps.last().unwrap().iter().zip(&bk.values))
            {
                *acc += x * b;
            }
        }
        if tap == TapPoint::MacAcc {
            push(&mac, &mut samples);
        }
        if matches!(tap, TapPoint::IfftStage(_) | TapPoint::IfftOutput) {
            let snaps = plan.inverse_snapshots(&mac);
            match tap {
                TapPoint::IfftStage(s) => push(&snaps[s], &mut samples),
                TapPoint::IfftOutput => push(snaps.last().unwrap(), &mut samples),
                _ => {}
            }
        }
        groups.push(samples);
    }
    Ok(variance_report(&groups, seed ^ 0x5a5a, 0))
}

// ---------------------------------------------------------------------------
// Paired output-noise measurement and the LSB sweep
// ---------------------------------------------------------------------------

/// Shared measurement harness: one key, one plaintext bootstrapping key
/// and one set of per-trial inputs, reused across all sweep points.
pub struct NoiseLab {
    pub params: TfheParams,
    pub base_formats: DatapathFormats,
    keys: SecretKeys,
    raw_bk: RawBootstrappingKey,
    ref_plan: FftPlan,
    ref_bk: BootstrappingKey,
    lut: TestPolynomial,
    seed: u64,
}

impl NoiseLab {
    pub fn new(params: TfheParams, base_formats: DatapathFormats, seed: u64) -> Self {
        let keys = keygen(&params, seed);
        let raw_bk = RawBootstrappingKey::generate(&params, &keys, crate::rng::stream(seed, "bk"));
        let ref_plan = FftPlan::reference(params.poly_size);
        let mut ctx = FpContext::default();
        let ref_bk = BootstrappingKey::from_raw(&raw_bk, &ref_plan, &mut ctx);
        let lut = nand_lut(&params);
        Self {
            params,
            base_formats,
            keys,
            raw_bk,
            ref_plan,
            ref_bk,
            lut,
            seed,
        }
    }

    fn trial_input(&self, trial: u64) -> crate::torus::TlweCiphertext {
        let mut rng = NoiseRng::new(crate::rng::trial_stream(self.seed, "lab-input", trial));
        let bit = rng.rng.gen::<bool>();
        encrypt_bit(bit, &self.keys, &self.params, &mut rng)
    }

    /// Coefficients per trial: all k+1 polynomials of the accumulator.
    fn coeffs_per_trial(&self) -> usize {
        (self.params.k + 1) * self.params.poly_size
    }

    /// One synchronized paired rotation: both bootstrapping keys CMUX the
    /// same reference accumulator each iteration, the ciphertext diffs
    /// are summed coefficient-wise, and the rotation continues from the
    /// reference result. Returns one f64 sample per coefficient of the
    /// k+1 accumulator polynomials, in torus units.
    fn paired_rotation(
        &self,
        trial: u64,
        bk: &BootstrappingKey,
        plan: &FftPlan,
        ctx: &mut FpContext,
    ) -> Vec<f64> {
        let ct = self.trial_input(trial);
        let two_n = 2 * self.params.poly_size;
        let r_b = crate::pbs::rotation_amount(ct.b, two_n);
        let mut acc = crate::pbs::monomial_mul(&self.lut.acc, (two_n - r_b) % two_n);
        let mut sums = vec![0.0f64; self.coeffs_per_trial()];
        let mut ref_ctx = FpContext::default();
        for i in 0..self.params.n {
            let mut fixed_acc = acc.clone();
            crate::pbs::cmux_assign(&mut fixed_acc, bk.fetch(i), ct.a[i], &self.params, plan, ctx);
            crate::pbs::cmux_assign(
                &mut acc,
                self.ref_bk.fetch(i),
                ct.a[i],
                &self.params,
                &self.ref_plan,
                &mut ref_ctx,
            );
            let mut slot = 0;
            for (fp, rp) in fixed_acc
                .a
                .iter()
                .chain(std::iter::once(&fixed_acc.b))
                .zip(acc.a.iter().chain(std::iter::once(&acc.b)))
            {
                for (&f, &r) in fp.coeffs.iter().zip(&rp.coeffs) {
                    sums[slot] += torus_to_f64(f.wrapping_sub(r));
                    slot += 1;
                }
            }
        }
        sums
    }

    /// Paired-difference approximation noise of the given formats:
    /// per-coefficient variance of the summed fixed-minus-reference CMUX
    /// output differences over a full blind rotation, in torus units
    /// squared, from at least `samples` coefficients. One rotation yields
    /// (k+1)*N coefficients.
    pub fn measure_output_noise(
        &mut self,
        formats: DatapathFormats,
        rounding: RoundingMode,
        samples: usize,
    ) -> Result<VarianceReport> {
        let n_trials = samples.div_ceil(self.coeffs_per_trial()).max(1);
        let plan = FftPlan::new(
            self.params.poly_size,
            Arithmetic::Fixed { formats, rounding },
        )?;
        let mut ctx = FpContext::default();
        let bk = BootstrappingKey::from_raw(&self.raw_bk, &plan, &mut ctx);
        let mut groups = Vec::with_capacity(n_trials);
        for t in 0..n_trials {
            groups.push(self.paired_rotation(t as u64, &bk, &plan, &mut ctx));
        }
        Ok(variance_report(&groups, self.seed ^ 0xa1a1, ctx.overflow_count()))
    }

    /// Sanity invariant: pairing the reference path against itself
    /// measures exactly zero.
    pub fn measure_reference_self(&mut self, samples: usize) -> Result<VarianceReport> {
        let n_trials = samples.div_ceil(self.coeffs_per_trial()).max(1);
        let mut ctx = FpContext::default();
        let ref_bk = BootstrappingKey::from_raw(&self.raw_bk, &self.ref_plan, &mut ctx);
        let ref_plan = FftPlan::reference(self.params.poly_size);
        let mut groups = Vec::with_capacity(n_trials);
        for t in 0..n_trials {
            groups.push(self.paired_rotation(t as u64, &ref_bk, &ref_plan, &mut ctx));
        }
        Ok(variance_report(&groups, self.seed ^ 0xb2b2, 0))
    }

    /// Formats for one sweep point: the knob under test at `frac` bits
    /// (preset integer bits), everything else at width 53. The twiddle
    /// width follows the FFT data width (data - 4) when sweeping the FFT
    /// knob, and stays wide otherwise.
    pub fn sweep_formats(&self, knob: Knob, frac: u8) -> DatapathFormats {
        let mut f = DatapathFormats::wide(&self.base_formats);
        let fmt = |base: crate::FixedPointFormat, frac: u8| {
            crate::FixedPointFormat::new(base.integer_bits + frac, base.integer_bits, frac).unwrap()
        };
        match knob {
            Knob::Bk => f.bk = fmt(self.base_formats.bk, frac),
            Knob::Fft => {
                f.fft = fmt(self.base_formats.fft, frac);
                f.twiddle = DatapathFormats::twiddle_for(f.fft.width);
            }
            Knob::Ifft => f.ifft = fmt(self.base_formats.ifft, frac),
        }
        f
    }
}

/// Which format's fractional width is being swept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Knob {
    Bk,
    Fft,
    Ifft,
}

impl std::str::FromStr for Knob {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bk" => Ok(Knob::Bk),
            "fft" => Ok(Knob::Fft),
            "ifft" => Ok(Knob::Ifft),
            other => Err(Error::InvalidParams(format!("unknown knob {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SweepPoint {
    pub fractional_bits: u8,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
    pub overflows: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub knob: Knob,
    pub per_source_budget: f64,
    pub points: Vec<SweepPoint>,
    /// Smallest fractional width whose measured variance fits the budget.
    pub selected: u8,
}

/// Sweeps one knob over `range` (ascending fractional bits) and selects
/// the smallest candidate meeting the per-source budget.
pub fn sweep_lsb(
    lab: &mut NoiseLab,
    knob: Knob,
    range: impl IntoIterator<Item = u8>,
    budget: &NoiseBudget,
    trials: usize,
    rounding: RoundingMode,
) -> Result<SweepResult> {
    let mut candidates: Vec<u8> = range.into_iter().collect();
    candidates.sort_unstable();
    if candidates.is_empty() {
        return Err(Error::InvalidParams("empty sweep range".into()));
    }
    let per_source = budget.per_source();
    let mut points = Vec::with_capacity(candidates.len());
    let mut selected = None;
    for &frac in &candidates {
        let formats = lab.sweep_formats(knob, frac);
        let rep = lab.measure_output_noise(formats, rounding, trials)?;
        points.push(SweepPoint {
            fractional_bits: frac,
            variance: rep.variance,
            ci_low: rep.ci_low,
            ci_high: rep.ci_high,
            trials: rep.count,
            overflows: rep.overflows,
        });
        if selected.is_none() && rep.variance <= per_source {
            selected = Some(frac);
        }
    }
    match selected {
        Some(selected) => Ok(SweepResult { knob, per_source_budget: per_source, points, selected }),
        None => Err(Error::BudgetUnsatisfiable),
    }
}

/// CSV dump: knob, fractional_bits, variance, ci_low, ci_high, trials.
pub fn write_sweep_csv<W: Write>(w: W, result: &SweepResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["knob", "fractional_bits", "variance", "ci_low", "ci_high", "trials"])
        .map_err(|e| Error::Format(e.to_string()))?;
    for p in &result.points {
        out.write_record([
            format!("{:?}", result.knob).to_lowercase(),
            p.fractional_bits.to_string(),
            format!("{:e}", p.variance),
            format!("{:e}", p.ci_low),
            format!("{:e}", p.ci_high),
            p.trials.to_string(),
        ])
        .map_err(|e| Error::Format(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
