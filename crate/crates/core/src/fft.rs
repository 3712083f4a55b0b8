//! Negacyclic polynomial multiplication via fold + twist + cyclic FFT of
//! size M = N/2.
//!
//! A degree-N negacyclic product a*b mod X^N+1 is evaluated at the points
//! x_t = psi * omega^t (psi = e^{j pi/N}, omega = e^{2 pi j/M}), which all
//! satisfy x^N = -1. Folding c_i = a_i + j*a_{i+M} and twisting by psi^i
//! turns that evaluation into a plain cyclic FFT of size M:
//!
//! ```text
//! a(x_t) = sum_i (c_i * psi^i) * omega^{i t}
//! ```
//!
//! Every plan can run on an exact double-precision reference path or on the
//! emulated fixed-point path, where each butterfly multiplication is a
//! 3-multiply [`gauss_cmul`] at the twiddle format and every intermediate
//! is held in the configured data format. A per-stage scaling schedule may
//! divide stage outputs by two, and on top of it each fixed-path stage
//! halves its output once more whenever the data would outgrow the format
//! (growth detection, the way a block-floating-point hardware stage sheds
//! a bit instead of overflowing). The cumulative scale is tracked in
//! [`FftDomainPoly::scale_log2`] and compensated, together with the 1/M
//! inverse-FFT factor, in a single final half-up rounding onto the 32-bit
//! torus grid.

use num_complex::Complex64;

use crate::fixed::{
    gauss_cmul, gauss_cmul_raw, gauss_cmul_raw_i64, round_shift, round_shift_i64, FpContext,
    GaussTwiddle, RoundingMode,
};
use crate::params::DatapathFormats;
use crate::torus::{torus_to_f64, TorusPolynomial};
use crate::{Error, FixedPointFormat, Result};

/// Which arithmetic executes the transforms.
#[derive(Clone, Debug)]
pub enum Arithmetic {
    /// Exact double precision; the oracle path.
    Reference,
    /// Emulated fixed point with the given datapath formats.
    Fixed { formats: DatapathFormats, rounding: RoundingMode },
}

/// Complex data of one spectrum, on either arithmetic path.
#[derive(Clone, Debug)]
pub enum Spectrum {
    Reference(Vec<Complex64>),
    Fixed { re: Vec<i64>, im: Vec<i64>, format: FixedPointFormat },
}

impl Spectrum {
    pub fn len(&self) -> usize {
        match self {
            Spectrum::Reference(v) => v.len(),
            Spectrum::Fixed { re, .. } => re.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Complex value at `idx` in real units of the stored representation.
    pub fn value(&self, idx: usize) -> Complex64 {
        match self {
            Spectrum::Reference(v) => v[idx],
            Spectrum::Fixed { re, im, format } => {
                let u = format.ulp();
                Complex64::new(re[idx] as f64 * u, im[idx] as f64 * u)
            }
        }
    }
}

/// A polynomial in the FFT domain plus the cumulative power-of-two scale
/// applied by the schedule: stored = true * 2^scale_log2.
#[derive(Clone, Debug)]
pub struct FftDomainPoly {
    pub data: Spectrum,
    pub scale_log2: i32,
}

/// Width of the MAC accumulator on the fixed path, modelling the wide DSP
/// accumulation register: products are summed exactly at (up to) this
/// precision and rounded only once, at the handoff into the inverse FFT.
const MAC_WIDTH: u8 = 63;
/// Cap on MAC fractional bits so that the accumulator raws stay inside the
/// 63-bit register even for the widest sweep formats.
const MAC_MAX_FRAC: u8 = 38;

/// A read-only spectrum used as a multiplicand (bootstrapping-key rows):
/// exact double-precision values plus, on the fixed path, the quantized
/// {C-D, C+D, C} triples ready for [`gauss_cmul`].
#[derive(Clone, Debug)]
pub struct ConstSpectrum {
    pub values: Vec<Complex64>,
    pub triples: Option<Vec<GaussTwiddle>>,
    pub scale_log2: i32,
}

/// out[i] = p[i] + j*p[i + N/2] on centered real representatives.
pub fn fold(p: &[f64]) -> Vec<Complex64> {
    let m = p.len() / 2;
    (0..m).map(|i| Complex64::new(p[i], p[i + m])).collect()
}

/// Inverse of [`fold`].
pub fn unfold(c: &[Complex64]) -> Vec<f64> {
    let m = c.len();
    let mut out = vec![0.0; 2 * m];
    for (i, z) in c.iter().enumerate() {
        out[i] = z.re;
        out[i + m] = z.im;
    }
    out
}

fn bit_reverse_permute<T>(data: &mut [T]) {
    let n = data.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            data.swap(i, j);
        }
    }
}

/// Radix-2 DIT transform over complex f64, with optional per-stage halving.
/// `stages[s][t]` holds the stage-s twiddles (half-size 2^s).
fn dft_reference(data: &mut [Complex64], stages: &[Vec<Complex64>], schedule: &[bool]) {
    bit_reverse_permute(data);
    for (s, tws) in stages.iter().enumerate() {
        run_reference_stage(data, tws, s, schedule[s]);
    }
}

fn run_reference_stage(data: &mut [Complex64], tws: &[Complex64], s: usize, scale: bool) {
    let half = 1usize << s;
    for block in data.chunks_mut(2 * half) {
        for t in 0..half {
            let v = block[t + half] * tws[t];
            let u = block[t];
            block[t] = u + v;
            block[t + half] = u - v;
        }
    }
    if scale {
        for x in data.iter_mut() {
            *x *= 0.5;
        }
    }
}

/// Fixed-point counterpart of [`dft_reference`]: one rounded 3-multiply
/// complex product per butterfly, adds range-checked at the datapath width,
/// scheduled halvings rounded in the configured mode.
///
/// Two kinds of per-stage right shifts are applied on top of the butterfly:
///
/// * `slides[s]`: the binary point slides one bit toward the integers
///   (width stays constant while magnitudes grow √2 per stage on average);
///   the value is unchanged, only its grid coarsens, so slides are *not*
///   part of the cumulative scale. The caller interprets the result at
///   `input fractional bits − #slides`.
/// * `schedule[s]`: a true data halving from the static scaling schedule.
/// * growth detection: whenever a stage output would still outgrow the
///   width, the stage sheds one more bit the way a block-floating-point
///   hardware stage does instead of overflowing.
///
/// Returns the extra dynamic scale (non-positive power of two) that the
/// caller must fold into the spectrum's cumulative scale.
#[allow(clippy::too_many_arguments)]
fn dft_fixed(
    re: &mut [i64],
    im: &mut [i64],
    fmt: FixedPointFormat,
    stages: &[Vec<GaussTwiddle>],
    schedule: &[bool],
    slides: &[bool],
    rounding: RoundingMode,
    ctx: &mut FpContext,
) -> i32 {
    bit_reverse_permute(re);
    bit_reverse_permute(im);
    let tw_width = stages
        .first()
        .and_then(|v| v.first())
        .map(|w| w.format.width)
        .unwrap_or(0);
    // Narrow (production) formats keep every butterfly product and stage
    // accumulator inside i64; only the wide calibration formats need the
    // 128-bit stage temporaries.
    if fmt.width as u32 + tw_width as u32 <= 62 {
        return dft_fixed_stages_i64(re, im, fmt, stages, schedule, slides, rounding, ctx);
    }
    let n = re.len();
    let max_raw = fmt.raw_max() as i128;
    let mut tr = vec![0i128; n];
    let mut ti = vec![0i128; n];
    let mut dynamic = 0i32;
    for (s, tws) in stages.iter().enumerate() {
        let half = 1usize << s;
        let mut base = 0;
        let mut maxabs = 0i128;
        while base < n {
            for t in 0..half {
                let (i, j) = (base + t, base + t + half);
                let (vre, vim) = gauss_cmul_raw(re[j], im[j], fmt, &tws[t], fmt, rounding);
                let (ure, uim) = (re[i] as i128, im[i] as i128);
                tr[i] = ure + vre;
                ti[i] = uim + vim;
                tr[j] = ure - vre;
                ti[j] = uim - vim;
                for v in [tr[i], ti[i], tr[j], ti[j]] {
                    maxabs = maxabs.max(v.abs());
                }
            }
            base += 2 * half;
        }
        let mut shift = i32::from(schedule[s]) + i32::from(slides[s]);
        // Half-up rounding can push a value one past the shifted maximum,
        // so the growth check includes the rounding increment.
        let rounded_max = |sh: i32| {
            if sh == 0 {
                maxabs
            } else {
                (maxabs + (1i128 << (sh - 1))) >> sh
            }
        };
        while rounded_max(shift) > max_raw {
            shift += 1;
            dynamic -= 1;
            ctx.record_scale_event();
        }
        for i in 0..n {
            re[i] = ctx.fit(fmt, round_shift(tr[i], shift, rounding));
            im[i] = ctx.fit(fmt, round_shift(ti[i], shift, rounding));
        }
    }
    dynamic
}

/// Narrow-format body of [`dft_fixed`]: identical stage structure, but all
/// products and stage accumulators stay in i64 (valid whenever the data and
/// twiddle widths sum to at most 62 bits).
#[allow(clippy::too_many_arguments)]
fn dft_fixed_stages_i64(
    re: &mut [i64],
    im: &mut [i64],
    fmt: FixedPointFormat,
    stages: &[Vec<GaussTwiddle>],
    schedule: &[bool],
    slides: &[bool],
    rounding: RoundingMode,
    ctx: &mut FpContext,
) -> i32 {
    let n = re.len();
    let max_raw = fmt.raw_max();
    let mut tr = vec![0i64; n];
    let mut ti = vec![0i64; n];
    let mut dynamic = 0i32;
    for (s, tws) in stages.iter().enumerate() {
        let half = 1usize << s;
        let mut base = 0;
        let mut maxabs = 0i64;
        while base < n {
            for t in 0..half {
                let (i, j) = (base + t, base + t + half);
                let (vre, vim) = gauss_cmul_raw_i64(re[j], im[j], fmt, &tws[t], fmt, rounding);
                let (ure, uim) = (re[i], im[i]);
                tr[i] = ure + vre;
                ti[i] = uim + vim;
                tr[j] = ure - vre;
                ti[j] = uim - vim;
                for v in [tr[i], ti[i], tr[j], ti[j]] {
                    maxabs = maxabs.max(v.abs());
                }
            }
            base += 2 * half;
        }
        let mut shift = i32::from(schedule[s]) + i32::from(slides[s]);
        let rounded_max = |sh: i32| {
            if sh == 0 {
                maxabs
            } else {
                (maxabs + (1i64 << (sh - 1))) >> sh
            }
        };
        while rounded_max(shift) > max_raw {
            shift += 1;
            dynamic -= 1;
            ctx.record_scale_event();
        }
        for i in 0..n {
            re[i] = ctx.fit_i64(fmt, round_shift_i64(tr[i], shift as u32, rounding));
            im[i] = ctx.fit_i64(fmt, round_shift_i64(ti[i], shift as u32, rounding));
        }
    }
    dynamic
}

/// Precomputed transform plan for one ring degree. Holds twiddle tables for
/// both directions plus the twist/untwist factors; immutable and shareable
/// after construction.
#[derive(Clone, Debug)]
pub struct FftPlan {
    pub ring_degree: usize,
    pub size: usize,
    pub arithmetic: Arithmetic,
    pub forward_schedule: Vec<bool>,
    pub inverse_schedule: Vec<bool>,
    // Sliding binary point of the fixed path: at marked stages the grid
    // coarsens by one bit so that a constant-width datapath can absorb the
    // sqrt(2)-per-stage magnitude growth. The configured data formats
    // describe the transform *outputs*; the input formats below hold the
    // same width with the point slid left by the number of slides.
    fwd_slides: Vec<bool>,
    inv_slides: Vec<bool>,
    fwd_input_fmt: Option<FixedPointFormat>,
    inv_input_fmt: Option<FixedPointFormat>,
    mac_fmt: Option<FixedPointFormat>,
    // Reference tables (always present; also used to prepare ConstSpectra).
    fwd_stages: Vec<Vec<Complex64>>,
    inv_stages: Vec<Vec<Complex64>>,
    twist: Vec<Complex64>,
    untwist: Vec<Complex64>,
    // Quantized tables for the fixed path.
    fwd_stages_q: Vec<Vec<GaussTwiddle>>,
    inv_stages_q: Vec<Vec<GaussTwiddle>>,
    twist_q: Vec<GaussTwiddle>,
    untwist_q: Vec<GaussTwiddle>,
}

impl FftPlan {
    /// Plan with no per-stage scaling (the default convention; see
    /// [`Self::with_schedules`] to override).
    pub fn new(ring_degree: usize, arithmetic: Arithmetic) -> Result<Self> {
        let stages = (ring_degree / 2).trailing_zeros() as usize;
        Self::with_schedules(ring_degree, arithmetic, vec![false; stages], vec![false; stages])
    }

    pub fn reference(ring_degree: usize) -> Self {
        Self::new(ring_degree, Arithmetic::Reference).expect("power-of-two ring degree")
    }

    pub fn with_schedules(
        ring_degree: usize,
        arithmetic: Arithmetic,
        forward_schedule: Vec<bool>,
        inverse_schedule: Vec<bool>,
    ) -> Result<Self> {
        if !ring_degree.is_power_of_two() || ring_degree < 4 {
            return Err(Error::InvalidParams(format!(
                "ring degree {ring_degree} must be a power of two >= 4"
            )));
        }
        let m = ring_degree / 2;
        let stages = m.trailing_zeros() as usize;
        if forward_schedule.len() != stages || inverse_schedule.len() != stages {
            return Err(Error::InvalidParams(format!(
                "schedule length must be log2(N/2) = {stages}"
            )));
        }

        let stage_table = |sign: f64| -> Vec<Vec<Complex64>> {
            (0..stages)
                .map(|s| {
                    let half = 1usize << s;
                    (0..half)
                        .map(|t| {
                            // omega^(t * M / (2*half)) with omega = e^{sign*2*pi*j/M}
                            let ang = sign * std::f64::consts::PI * t as f64 / half as f64;
                            Complex64::new(ang.cos(), ang.sin())
                        })
                        .collect()
                })
                .collect()
        };
        // Forward evaluation uses the +i exponent (see module docs).
        let fwd_stages = stage_table(1.0);
        let inv_stages = stage_table(-1.0);
        let psi = std::f64::consts::PI / ring_degree as f64;
        let twist: Vec<Complex64> = (0..m)
            .map(|i| Complex64::new((psi * i as f64).cos(), (psi * i as f64).sin()))
            .collect();
        let untwist: Vec<Complex64> = twist.iter().map(|z| z.conj()).collect();

        let mut plan = Self {
            ring_degree,
            size: m,
            arithmetic,
            forward_schedule,
            inverse_schedule,
            fwd_slides: vec![false; stages],
            inv_slides: vec![false; stages],
            fwd_input_fmt: None,
            inv_input_fmt: None,
            mac_fmt: None,
            fwd_stages,
            inv_stages,
            twist,
            untwist,
            fwd_stages_q: Vec::new(),
            inv_stages_q: Vec::new(),
            twist_q: Vec::new(),
            untwist_q: Vec::new(),
        };
        if let Arithmetic::Fixed { formats, .. } = &plan.arithmetic {
            let slide_setup = |out: FixedPointFormat| -> (Vec<bool>, FixedPointFormat) {
                // One slide every other stage matches the average sqrt(2)
                // magnitude growth; cap so the input keeps a sign bit.
                let max = usize::from(out.integer_bits.saturating_sub(1)).min(stages / 2);
                let mut slides = vec![false; stages];
                let mut count = 0u8;
                for s in (1..stages).step_by(2) {
                    if usize::from(count) == max {
                        break;
                    }
                    slides[s] = true;
                    count += 1;
                }
                let input = FixedPointFormat::new(
                    out.width,
                    out.integer_bits - count,
                    out.fractional_bits + count,
                )
                .expect("slide preserves the width split");
                (slides, input)
            };
            let (fs, fin) = slide_setup(formats.fft);
            let (is, iin) = slide_setup(formats.ifft);
            plan.fwd_slides = fs;
            plan.fwd_input_fmt = Some(fin);
            plan.inv_slides = is;
            plan.inv_input_fmt = Some(iin);
            let mac_frac =
                (formats.fft.fractional_bits + formats.bk.fractional_bits).min(MAC_MAX_FRAC);
            plan.mac_fmt =
                Some(FixedPointFormat::new(MAC_WIDTH, MAC_WIDTH - mac_frac, mac_frac).unwrap());
            // Twiddle ROMs are built offline; quantize to nearest.
            let twf = formats.twiddle;
            let mut ctx = FpContext::default();
            let q = |table: &[Vec<Complex64>], ctx: &mut FpContext| -> Vec<Vec<GaussTwiddle>> {
                table
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|z| {
                                GaussTwiddle::quantize(
                                    ctx,
                                    z.re,
                                    z.im,
                                    twf,
                                    RoundingMode::NearestEven,
                                )
                            })
                            .collect()
                    })
                    .collect()
            };
            plan.fwd_stages_q = q(&plan.fwd_stages, &mut ctx);
            plan.inv_stages_q = q(&plan.inv_stages, &mut ctx);
            let qv = |row: &[Complex64], ctx: &mut FpContext| -> Vec<GaussTwiddle> {
                row.iter()
                    .map(|z| {
                        GaussTwiddle::quantize(ctx, z.re, z.im, twf, RoundingMode::NearestEven)
                    })
                    .collect()
            };
            plan.twist_q = qv(&plan.twist, &mut ctx);
            plan.untwist_q = qv(&plan.untwist, &mut ctx);
            assert_eq!(ctx.overflow_count(), 0, "twiddle tables must fit their format");
        }
        Ok(plan)
    }

    fn forward_scale(&self) -> i32 {
        -(self.forward_schedule.iter().filter(|&&b| b).count() as i32)
    }

    /// Forward transform of centered real coefficients (length N).
    fn forward_real(&self, p: &[f64], ctx: &mut FpContext) -> FftDomainPoly {
        assert_eq!(p.len(), self.ring_degree);
        match &self.arithmetic {
            Arithmetic::Reference => {
                let mut c = fold(p);
                for (z, t) in c.iter_mut().zip(&self.twist) {
                    *z *= t;
                }
                dft_reference(&mut c, &self.fwd_stages, &self.forward_schedule);
                FftDomainPoly { data: Spectrum::Reference(c), scale_log2: self.forward_scale() }
            }
            Arithmetic::Fixed { formats, rounding } => {
                // Inputs are small, so they enter at the slid-left input
                // format; the point slides back as magnitudes grow and the
                // result lands exactly on the configured FFT output format.
                let in_fmt = self.fwd_input_fmt.expect("fixed plan has input formats");
                let m = self.size;
                let mut re = vec![0i64; m];
                let mut im = vec![0i64; m];
                for i in 0..m {
                    // Quantize the folded input, then twist at the
                    // twiddle format.
                    let r = ctx.fit(in_fmt, round_shift_f64(p[i], in_fmt, *rounding));
                    let q = ctx.fit(in_fmt, round_shift_f64(p[i + m], in_fmt, *rounding));
                    let (tr, ti) =
                        gauss_cmul(ctx, r, q, in_fmt, &self.twist_q[i], in_fmt, *rounding);
                    re[i] = tr;
                    im[i] = ti;
                }
                let dynamic = dft_fixed(
                    &mut re,
                    &mut im,
                    in_fmt,
                    &self.fwd_stages_q,
                    &self.forward_schedule,
                    &self.fwd_slides,
                    *rounding,
                    ctx,
                );
                FftDomainPoly {
                    data: Spectrum::Fixed { re, im, format: formats.fft },
                    scale_log2: self.forward_scale() + dynamic,
                }
            }
        }
    }

    /// Forward transform of a torus polynomial (coefficients mapped to
    /// centered representatives in [-1/2, 1/2)).
    pub fn forward_torus(&self, p: &TorusPolynomial, ctx: &mut FpContext) -> FftDomainPoly {
        let reals: Vec<f64> = p.coeffs.iter().map(|&c| torus_to_f64(c)).collect();
        self.forward_real(&reals, ctx)
    }

    /// Forward transform of small signed integers (decomposition digits);
    /// these are exactly representable in the FFT format.
    pub fn forward_ints(&self, digits: &[i32], ctx: &mut FpContext) -> FftDomainPoly {
        let reals: Vec<f64> = digits.iter().map(|&d| d as f64).collect();
        self.forward_real(&reals, ctx)
    }

    /// Inverse transform back to the torus grid. The cumulative scale and
    /// the 1/M factor are compensated in one final half-up rounding.
    pub fn inverse_to_torus(&self, f: &FftDomainPoly, ctx: &mut FpContext) -> TorusPolynomial {
        let m = self.size;
        let log_m = m.trailing_zeros() as i32;
        let inv_scale: i32 = -(self.inverse_schedule.iter().filter(|&&b| b).count() as i32);
        let scale_total = f.scale_log2 + inv_scale;
        match (&self.arithmetic, &f.data) {
            (Arithmetic::Reference, Spectrum::Reference(v)) => {
                let mut c = v.clone();
                dft_reference(&mut c, &self.inv_stages, &self.inverse_schedule);
                for (z, t) in c.iter_mut().zip(&self.untwist) {
                    *z *= t;
                }
                // torus = round_half_up(value * 2^(32 - scale) / M) mod 2^32
                let comp = (32.0 - scale_total as f64 - log_m as f64).exp2();
                let mut coeffs = vec![0u32; self.ring_degree];
                for (i, z) in c.iter().enumerate() {
                    coeffs[i] = ((z.re * comp + 0.5).floor().rem_euclid(4294967296.0)) as u32;
                    coeffs[i + m] =
                        ((z.im * comp + 0.5).floor().rem_euclid(4294967296.0)) as u32;
                }
                TorusPolynomial::from_coeffs(coeffs)
            }
            (Arithmetic::Fixed { formats, rounding }, Spectrum::Fixed { re, im, format }) => {
                // Handoff: the (exactly accumulated) spectrum is rounded
                // once per bin onto the IFFT input grid, shedding extra
                // bits block-floating-point style if it has outgrown the
                // width.
                let in_fmt = self.inv_input_fmt.expect("fixed plan has input formats");
                let out_fmt = formats.ifft;
                let base = format.fractional_bits as i32 - in_fmt.fractional_bits as i32;
                let maxabs =
                    re.iter().chain(im.iter()).map(|v| v.unsigned_abs() as i128).max().unwrap_or(0);
                let rounded_max = |sh: i32| {
                    if sh <= 0 {
                        maxabs << (-sh) as u32
                    } else {
                        (maxabs + (1i128 << (sh - 1))) >> sh
                    }
                };
                let mut extra = 0i32;
                while rounded_max(base + extra) > in_fmt.raw_max() as i128 {
                    extra += 1;
                    ctx.record_scale_event();
                }
                let handoff = |v: &i64, ctx: &mut FpContext| {
                    ctx.fit(in_fmt, round_shift(*v as i128, base + extra, *rounding))
                };
                let mut re: Vec<i64> = re.iter().map(|v| handoff(v, ctx)).collect();
                let mut im: Vec<i64> = im.iter().map(|v| handoff(v, ctx)).collect();
                let dynamic = dft_fixed(
                    &mut re,
                    &mut im,
                    in_fmt,
                    &self.inv_stages_q,
                    &self.inverse_schedule,
                    &self.inv_slides,
                    *rounding,
                    ctx,
                );
                let mut coeffs = vec![0u32; self.ring_degree];
                let shift =
                    out_fmt.fractional_bits as i32 + scale_total - extra + dynamic + log_m - 32;
                for i in 0..m {
                    let (ur, ui) = gauss_cmul(
                        ctx,
                        re[i],
                        im[i],
                        out_fmt,
                        &self.untwist_q[i],
                        out_fmt,
                        *rounding,
                    );
                    coeffs[i] = round_shift(ur as i128, shift, RoundingMode::HalfUp) as u32;
                    coeffs[i + m] = round_shift(ui as i128, shift, RoundingMode::HalfUp) as u32;
                }
                TorusPolynomial::from_coeffs(coeffs)
            }
            _ => panic!("spectrum arithmetic does not match the plan"),
        }
    }

    /// Reference-path probe support: returns the folded+twisted input
    /// followed by the output of every forward stage.
    pub fn forward_snapshots(&self, p: &[f64]) -> Vec<Vec<Complex64>> {
        let mut c = fold(p);
        for (z, t) in c.iter_mut().zip(&self.twist) {
            *z *= t;
        }
        let mut snaps = vec![c.clone()];
        bit_reverse_permute(&mut c);
        for (s, tws) in self.fwd_stages.iter().enumerate() {
            run_reference_stage(&mut c, tws, s, self.forward_schedule[s]);
            snaps.push(c.clone());
        }
        snaps
    }

    /// Probe support for the inverse direction: per-stage outputs followed
    /// by the untwisted (pre-compensation) result.
    pub fn inverse_snapshots(&self, spectrum: &[Complex64]) -> Vec<Vec<Complex64>> {
        let mut c = spectrum.to_vec();
        bit_reverse_permute(&mut c);
        let mut snaps = Vec::new();
        for (s, tws) in self.inv_stages.iter().enumerate() {
            run_reference_stage(&mut c, tws, s, self.inverse_schedule[s]);
            snaps.push(c.clone());
        }
        for (z, t) in c.iter_mut().zip(&self.untwist) {
            *z *= t;
        }
        snaps.push(c);
        snaps
    }

    /// Prepares a read-only multiplicand spectrum from a torus polynomial:
    /// exact reference forward transform, then (on the fixed path, or when
    /// `fmt` is given) quantization of the {C-D, C+D, C} triples.
    pub fn const_spectrum(
        &self,
        p: &TorusPolynomial,
        fmt: Option<FixedPointFormat>,
        ctx: &mut FpContext,
    ) -> ConstSpectrum {
        let reals: Vec<f64> = p.coeffs.iter().map(|&c| torus_to_f64(c)).collect();
        let mut c = fold(&reals);
        for (z, t) in c.iter_mut().zip(&self.twist) {
            *z *= t;
        }
        dft_reference(&mut c, &self.fwd_stages, &self.forward_schedule);
        let quant_fmt = fmt.or(match &self.arithmetic {
            Arithmetic::Fixed { formats, .. } => Some(formats.bk),
            Arithmetic::Reference => None,
        });
        let triples = quant_fmt.map(|f| {
            c.iter()
                .map(|z| GaussTwiddle::quantize(ctx, z.re, z.im, f, RoundingMode::NearestEven))
                .collect()
        });
        ConstSpectrum { values: c, triples, scale_log2: self.forward_scale() }
    }

    /// An all-zero accumulator for [`Self::pointwise_mac`]. On the fixed
    /// path it lives at the wide MAC format, where the pointwise products
    /// accumulate exactly (DSP-register semantics); the single rounding
    /// happens at the [`Self::inverse_to_torus`] handoff.
    pub fn mac_accumulator(&self, scale_log2: i32) -> FftDomainPoly {
        let data = match &self.arithmetic {
            Arithmetic::Reference => {
                Spectrum::Reference(vec![Complex64::new(0.0, 0.0); self.size])
            }
            Arithmetic::Fixed { .. } => Spectrum::Fixed {
                re: vec![0; self.size],
                im: vec![0; self.size],
                format: self.mac_fmt.expect("fixed plan has a MAC format"),
            },
        };
        FftDomainPoly { data, scale_log2 }
    }

    /// acc += a (elementwise*) bk. Fixed-path products land on the wide
    /// MAC grid (exactly, unless the combined fractional bits exceed the
    /// register) and are summed without intermediate rounding.
    pub fn pointwise_mac(
        &self,
        acc: &mut FftDomainPoly,
        a: &FftDomainPoly,
        bk: &ConstSpectrum,
        ctx: &mut FpContext,
    ) {
        assert_eq!(acc.data.len(), a.data.len());
        assert_eq!(a.data.len(), bk.values.len());
        let prod_scale = a.scale_log2 + bk.scale_log2;
        match (&mut acc.data, &a.data) {
            (Spectrum::Reference(accv), Spectrum::Reference(av)) => {
                debug_assert_eq!(acc.scale_log2, prod_scale, "scale mismatch in MAC");
                for (i, (x, y)) in accv.iter_mut().zip(av).enumerate() {
                    *x += y * bk.values[i];
                }
            }
            (
                Spectrum::Fixed { re: ar, im: ai, format: acc_fmt },
                Spectrum::Fixed { re, im, format },
            ) => {
                let rounding = match &self.arithmetic {
                    Arithmetic::Fixed { rounding, .. } => *rounding,
                    Arithmetic::Reference => RoundingMode::Truncate,
                };
                // Dynamic stage scaling can leave terms at different
                // exponents; the accumulator adopts the smallest one and
                // everything else is shifted down to match.
                if prod_scale < acc.scale_log2 {
                    let d = acc.scale_log2 - prod_scale;
                    for v in ar.iter_mut().chain(ai.iter_mut()) {
                        *v = ctx.fit(*acc_fmt, round_shift(*v as i128, d, rounding));
                    }
                    acc.scale_log2 = prod_scale;
                }
                let term_shift = prod_scale - acc.scale_log2;
                let triples = bk.triples.as_ref().expect("fixed MAC needs quantized triples");
                let narrow = triples
                    .first()
                    .map(|w| format.width as u32 + w.format.width as u32 <= 62)
                    .unwrap_or(false)
                    && format.fractional_bits as i32
                        + triples.first().map(|w| w.format.fractional_bits as i32).unwrap_or(0)
                        >= acc_fmt.fractional_bits as i32
                    && term_shift >= 0;
                if narrow {
                    // Products and the 63-bit accumulator both fit i64.
                    for i in 0..re.len() {
                        let (pr, pi) = gauss_cmul_raw_i64(
                            re[i], im[i], *format, &triples[i], *acc_fmt, rounding,
                        );
                        let pr = round_shift_i64(pr, term_shift as u32, rounding);
                        let pi = round_shift_i64(pi, term_shift as u32, rounding);
                        ar[i] = ctx.fit_i64(*acc_fmt, ar[i] + pr);
                        ai[i] = ctx.fit_i64(*acc_fmt, ai[i] + pi);
                    }
                } else {
                    for i in 0..re.len() {
                        let (pr, pi) =
                            gauss_cmul_raw(re[i], im[i], *format, &triples[i], *acc_fmt, rounding);
                        let pr = round_shift(pr, term_shift, rounding);
                        let pi = round_shift(pi, term_shift, rounding);
                        ar[i] = ctx.fit(*acc_fmt, ar[i] as i128 + pr);
                        ai[i] = ctx.fit(*acc_fmt, ai[i] as i128 + pi);
                    }
                }
            }
            _ => panic!("mixed-arithmetic MAC"),
        }
    }

    /// Full negacyclic product p * q mod X^N + 1, with q a small-integer
    /// polynomial (decomposition digits).
    pub fn negacyclic_multiply(
        &self,
        p: &TorusPolynomial,
        q_int: &[i32],
        ctx: &mut FpContext,
    ) -> TorusPolynomial {
        let bk_fmt = match &self.arithmetic {
            Arithmetic::Reference => None,
            Arithmetic::Fixed { formats, .. } => Some(formats.bk),
        };
        let pc = self.const_spectrum(p, bk_fmt, ctx);
        let qs = self.forward_ints(q_int, ctx);
        let mut acc = self.mac_accumulator(qs.scale_log2 + pc.scale_log2);
        self.pointwise_mac(&mut acc, &qs, &pc, ctx);
        self.inverse_to_torus(&acc, ctx)
    }
}

/// Quantizes a real number onto the `fmt` grid, returning the raw as i128
/// (range handling is the caller's `ctx.fit`).
fn round_shift_f64(x: f64, fmt: FixedPointFormat, rounding: RoundingMode) -> i128 {
    let scaled = x * (fmt.fractional_bits as f64).exp2();
    let r = match rounding {
        RoundingMode::Truncate => scaled.floor(),
        RoundingMode::HalfUp => (scaled + 0.5).floor(),
        RoundingMode::NearestEven => scaled.round_ties_even(),
    };
    r as i128
}
