//! Emulation of parameterized two's-complement fixed-point arithmetic.
//!
//! All FFT-domain computation runs through this module. A value is a signed
//! integer `raw` interpreted as `raw * 2^-fractional_bits`. Operations take
//! an [`FpContext`] that fixes the overflow policy and accumulates overflow
//! events; contexts are per-plan accumulators merged at join points, never
//! shared mutable state.
//!
//! Hot paths (the FFT butterflies) work on bare `i64` raws through the
//! `raw_*` helpers and [`gauss_cmul`]; the [`FixedPointValue`] wrapper
//! carries its format for ergonomic scalar use.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Width split of a fixed-point format. The sign bit is counted inside
/// `integer_bits`, so `width = integer_bits + fractional_bits`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedPointFormat {
    pub width: u8,
    pub integer_bits: u8,
    pub fractional_bits: u8,
}

impl FixedPointFormat {
    pub fn new(width: u8, integer_bits: u8, fractional_bits: u8) -> Result<Self> {
        if integer_bits as u16 + fractional_bits as u16 != width as u16 {
            return Err(Error::InvalidFormat(format!(
                "{width} != {integer_bits} + {fractional_bits}"
            )));
        }
        if !(2..=64).contains(&width) {
            return Err(Error::InvalidFormat(format!("width {width} outside 2..=64")));
        }
        Ok(Self { width, integer_bits, fractional_bits })
    }

    /// Smallest representable raw value, -2^(width-1).
    pub fn raw_min(&self) -> i64 {
        -(1i64 << (self.width - 1))
    }

    /// Largest representable raw value, 2^(width-1) - 1.
    pub fn raw_max(&self) -> i64 {
        (1i64 << (self.width - 1)) - 1
    }

    /// One unit in the last place as a real number.
    pub fn ulp(&self) -> f64 {
        (-(self.fractional_bits as f64)).exp2()
    }

    /// Parses the CLI form "width:integer:fractional", e.g. "29:15:14".
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidFormat(format!("expected w:i:f, got {s:?}")));
        }
        let num = |p: &str| {
            p.parse::<u8>()
                .map_err(|_| Error::InvalidFormat(format!("bad field {p:?} in {s:?}")))
        };
        Self::new(num(parts[0])?, num(parts[1])?, num(parts[2])?)
    }
}

impl std::fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.width, self.integer_bits, self.fractional_bits)
    }
}

impl std::str::FromStr for FixedPointFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// How discarded low bits are folded into the result.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundingMode {
    /// Arithmetic right shift (round toward negative infinity). The
    /// cheapest hardware option and the default.
    #[default]
    Truncate,
    /// Add half an ulp, then truncate.
    HalfUp,
    /// Round to nearest, ties to the even raw value.
    NearestEven,
}

/// What happens to a raw value outside its format range. Every violation
/// increments the context counter regardless of mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverflowMode {
    /// Two's-complement wraparound, as in real datapath registers.
    #[default]
    Wrap,
    /// Clamp to the nearest representable value.
    Saturate,
    /// Wrap, but also set a sticky trap flag surfaced as an error by the
    /// enclosing operation.
    Trap,
}

/// Per-plan overflow policy and event accumulator.
#[derive(Clone, Debug, Default)]
pub struct FpContext {
    pub mode: OverflowMode,
    counter: u64,
    scale_events: u64,
    trapped: bool,
}

impl FpContext {
    pub fn new(mode: OverflowMode) -> Self {
        Self { mode, counter: 0, scale_events: 0, trapped: false }
    }

    pub fn overflow_count(&self) -> u64 {
        self.counter
    }

    /// Stage halvings triggered by growth detection in the FFT datapath
    /// (block-floating-point events, not overflows).
    pub fn scale_event_count(&self) -> u64 {
        self.scale_events
    }

    pub fn record_scale_event(&mut self) {
        self.scale_events += 1;
    }

    pub fn reset(&mut self) {
        self.counter = 0;
        self.scale_events = 0;
        self.trapped = false;
    }

    /// Folds another accumulator into this one (fork/join pattern).
    pub fn merge(&mut self, other: &FpContext) {
        self.counter += other.counter;
        self.scale_events += other.scale_events;
        self.trapped |= other.trapped;
    }

    /// Errors if trap mode saw any overflow since the last reset.
    pub fn check(&self) -> Result<()> {
        if self.trapped {
            Err(Error::OverflowTrap(self.counter))
        } else {
            Ok(())
        }
    }

    /// Forces an out-of-range raw into the format per the overflow mode.
    /// `x` must fit the format's real range check but may exceed it; the
    /// counter increments on every violation.
    #[inline]
    pub fn fit(&mut self, fmt: FixedPointFormat, x: i128) -> i64 {
        let min = fmt.raw_min() as i128;
        let max = fmt.raw_max() as i128;
        if (min..=max).contains(&x) {
            return x as i64;
        }
        self.counter += 1;
        match self.mode {
            OverflowMode::Saturate => {
                if x < min {
                    min as i64
                } else {
                    max as i64
                }
            }
            OverflowMode::Wrap | OverflowMode::Trap => {
                if self.mode == OverflowMode::Trap {
                    self.trapped = true;
                }
                // Sign-extending wrap to `width` bits.
                let s = 128 - fmt.width as u32;
                ((x << s) >> s) as i64
            }
        }
    }

    /// i64-only variant of [`FpContext::fit`] for the narrow-format hot path.
    #[inline]
    pub(crate) fn fit_i64(&mut self, fmt: FixedPointFormat, x: i64) -> i64 {
        let min = fmt.raw_min();
        let max = fmt.raw_max();
        if (min..=max).contains(&x) {
            return x;
        }
        self.counter += 1;
        match self.mode {
            OverflowMode::Saturate => {
                if x < min {
                    min
                } else {
                    max
                }
            }
            OverflowMode::Wrap | OverflowMode::Trap => {
                if self.mode == OverflowMode::Trap {
                    self.trapped = true;
                }
                let s = 64 - fmt.width as u32;
                (x << s) >> s
            }
        }
    }
}

/// Shifts `x` right by `shift` fractional bits with the given rounding.
/// Negative shifts scale up exactly.
#[inline]
pub fn round_shift(x: i128, shift: i32, rounding: RoundingMode) -> i128 {
    if shift <= 0 {
        return x << (-shift) as u32;
    }
    let s = shift as u32;
    match rounding {
        RoundingMode::Truncate => x >> s,
        RoundingMode::HalfUp => (x + (1i128 << (s - 1))) >> s,
        RoundingMode::NearestEven => {
            let floor = x >> s;
            let rem = x - (floor << s);
            let half = 1i128 << (s - 1);
            if rem > half || (rem == half && (floor & 1) == 1) {
                floor + 1
            } else {
                floor
            }
        }
    }
}

/// A signed fixed-point number tagged with its format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedPointValue {
    pub raw: i64,
    pub format: FixedPointFormat,
}

impl FixedPointValue {
    pub fn from_raw(raw: i64, format: FixedPointFormat) -> Self {
        debug_assert!(raw >= format.raw_min() && raw <= format.raw_max());
        Self { raw, format }
    }

    pub fn value(&self) -> f64 {
        self.raw as f64 * self.format.ulp()
    }
}

/// Quantizes a real number into `fmt`, applying the overflow policy if the
/// rounded value is out of range.
pub fn quantize(
    ctx: &mut FpContext,
    x: f64,
    fmt: FixedPointFormat,
    rounding: RoundingMode,
) -> FixedPointValue {
    let scaled = x * (fmt.fractional_bits as f64).exp2();
    let r = match rounding {
        RoundingMode::Truncate => scaled.floor(),
        RoundingMode::HalfUp => (scaled + 0.5).floor(),
        RoundingMode::NearestEven => scaled.round_ties_even(),
    };
    FixedPointValue::from_raw(ctx.fit(fmt, r as i128), fmt)
}

/// Exact sum unless out of range; same-format operands only.
pub fn fp_add(ctx: &mut FpContext, a: FixedPointValue, b: FixedPointValue) -> FixedPointValue {
    assert_eq!(a.format, b.format, "fp_add requires matching formats");
    let raw = ctx.fit(a.format, a.raw as i128 + b.raw as i128);
    FixedPointValue::from_raw(raw, a.format)
}

pub fn fp_sub(ctx: &mut FpContext, a: FixedPointValue, b: FixedPointValue) -> FixedPointValue {
    assert_eq!(a.format, b.format, "fp_sub requires matching formats");
    let raw = ctx.fit(a.format, a.raw as i128 - b.raw as i128);
    FixedPointValue::from_raw(raw, a.format)
}

/// Full-precision integer product, then one rounding into `out_fmt`.
pub fn fp_mul(
    ctx: &mut FpContext,
    a: FixedPointValue,
    b: FixedPointValue,
    out_fmt: FixedPointFormat,
    rounding: RoundingMode,
) -> FixedPointValue {
    let prod = a.raw as i128 * b.raw as i128;
    let shift = a.format.fractional_bits as i32 + b.format.fractional_bits as i32
        - out_fmt.fractional_bits as i32;
    let raw = ctx.fit(out_fmt, round_shift(prod, shift, rounding));
    FixedPointValue::from_raw(raw, out_fmt)
}

/// A twiddle factor C + jD precomputed as the triple {C-D, C+D, C} for the
/// 3-multiply complex product. C and D are quantized at the twiddle format;
/// the sums are then exact (the format reserves 2 integer bits).
#[derive(Clone, Copy, Debug)]
pub struct GaussTwiddle {
    pub c_minus_d: i64,
    pub c_plus_d: i64,
    pub c: i64,
    pub format: FixedPointFormat,
}

impl GaussTwiddle {
    pub fn quantize(
        ctx: &mut FpContext,
        re: f64,
        im: f64,
        fmt: FixedPointFormat,
        rounding: RoundingMode,
    ) -> Self {
        let c = quantize(ctx, re, fmt, rounding).raw;
        let d = quantize(ctx, im, fmt, rounding).raw;
        Self {
            c_minus_d: ctx.fit(fmt, c as i128 - d as i128),
            c_plus_d: ctx.fit(fmt, c as i128 + d as i128),
            c,
            format: fmt,
        }
    }

    /// Exact triple for unit-gain accumulation paths (reference checks).
    pub fn exact(re_raw: i64, im_raw: i64, fmt: FixedPointFormat) -> Self {
        Self {
            c_minus_d: re_raw - im_raw,
            c_plus_d: re_raw + im_raw,
            c: re_raw,
            format: fmt,
        }
    }
}

/// 3-multiply complex product (A + jB) * (C + jD):
///
/// ```text
/// Z = C * (A - B)
/// X = (C - D) * B + Z    (real part)
/// Y = (C + D) * A - Z    (imaginary part)
/// ```
///
/// The pre-adds and the product-plus-Z accumulations are exact (the DSP
/// carries full precision internally); each output component is rounded
/// once into `out_fmt` and then range-checked.
#[inline]
pub fn gauss_cmul(
    ctx: &mut FpContext,
    a_re: i64,
    a_im: i64,
    in_fmt: FixedPointFormat,
    w: &GaussTwiddle,
    out_fmt: FixedPointFormat,
    rounding: RoundingMode,
) -> (i64, i64) {
    let z = w.c as i128 * (a_re as i128 - a_im as i128);
    let x = w.c_minus_d as i128 * a_im as i128 + z;
    let y = w.c_plus_d as i128 * a_re as i128 - z;
    let shift = in_fmt.fractional_bits as i32 + w.format.fractional_bits as i32
        - out_fmt.fractional_bits as i32;
    let re = ctx.fit(out_fmt, round_shift(x, shift, rounding));
    let im = ctx.fit(out_fmt, round_shift(y, shift, rounding));
    (re, im)
}

/// [`gauss_cmul`] without the final range check: returns the rounded
/// components on the `out_fmt` grid as i128, for callers that still apply
/// a growth-detection shift before committing to the format.
#[inline]
pub fn gauss_cmul_raw(
    a_re: i64,
    a_im: i64,
    in_fmt: FixedPointFormat,
    w: &GaussTwiddle,
    out_fmt: FixedPointFormat,
    rounding: RoundingMode,
) -> (i128, i128) {
    let shift = in_fmt.fractional_bits as i32 + w.format.fractional_bits as i32
        - out_fmt.fractional_bits as i32;
    // |x|, |y| <= 2^(in_width + twiddle_width), so narrow formats (the
    // production case) stay entirely within i64; only the wide calibration
    // formats need the 128-bit products.
    if in_fmt.width as u32 + w.format.width as u32 <= 62 && shift >= 0 {
        let z = w.c * (a_re - a_im);
        let x = w.c_minus_d * a_im + z;
        let y = w.c_plus_d * a_re - z;
        (
            round_shift_i64(x, shift as u32, rounding) as i128,
            round_shift_i64(y, shift as u32, rounding) as i128,
        )
    } else {
        let z = w.c as i128 * (a_re as i128 - a_im as i128);
        let x = w.c_minus_d as i128 * a_im as i128 + z;
        let y = w.c_plus_d as i128 * a_re as i128 - z;
        (round_shift(x, shift, rounding), round_shift(y, shift, rounding))
    }
}

/// i64-only variant of [`gauss_cmul_raw`] for the narrow-format hot path.
/// Caller must ensure `in_fmt.width + w.format.width <= 62` and that the
/// rounding shift is non-negative, so nothing can leave the i64 range.
#[inline]
pub(crate) fn gauss_cmul_raw_i64(
    a_re: i64,
    a_im: i64,
    in_fmt: FixedPointFormat,
    w: &GaussTwiddle,
    out_fmt: FixedPointFormat,
    rounding: RoundingMode,
) -> (i64, i64) {
    let shift = in_fmt.fractional_bits as u32 + w.format.fractional_bits as u32
        - out_fmt.fractional_bits as u32;
    let z = w.c * (a_re - a_im);
    let x = w.c_minus_d * a_im + z;
    let y = w.c_plus_d * a_re - z;
    (round_shift_i64(x, shift, rounding), round_shift_i64(y, shift, rounding))
}

#[inline]
pub(crate) fn round_shift_i64(x: i64, s: u32, rounding: RoundingMode) -> i64 {
    if s == 0 {
        return x;
    }
    match rounding {
        RoundingMode::Truncate => x >> s,
        RoundingMode::HalfUp => (x + (1i64 << (s - 1))) >> s,
        RoundingMode::NearestEven => {
            let floor = x >> s;
            let rem = x - (floor << s);
            let half = 1i64 << (s - 1);
            if rem > half || (rem == half && (floor & 1) == 1) {
                floor + 1
            } else {
                floor
            }
        }
    }
}
