//! TFHE parameter sets and fixed-point datapath formats.

use serde::{Deserialize, Serialize};

use crate::fixed::FixedPointFormat;
use crate::{Error, Result};

/// Scheme parameters. The torus modulus is fixed at q = 2^32.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfheParams {
    /// TLWE dimension n.
    pub n: usize,
    /// TGLWE dimension k.
    pub k: usize,
    /// Polynomial size N (power of two).
    pub poly_size: usize,
    /// Decomposition base log beta (bits per signed digit).
    pub base_log: u32,
    /// Decomposition level count l.
    pub levels: usize,
    /// Fresh TLWE noise standard deviation, in torus units.
    pub sigma_tlwe: f64,
    /// Fresh TGLWE noise standard deviation, in torus units.
    pub sigma_tglwe: f64,
}

impl TfheParams {
    /// Parameter Set I: n=586, k=2, N=512, beta=8, l=2 (Boolean-library
    /// style, 128-bit security). Noise levels follow the CONCRETE Boolean
    /// defaults for this dimension.
    pub fn set_i() -> Self {
        Self {
            n: 586,
            k: 2,
            poly_size: 512,
            base_log: 8,
            levels: 2,
            sigma_tlwe: 9.25119974676756e-5,
            sigma_tglwe: 2.9403601535432534e-8,
        }
    }

    /// Parameter Set II: n=500, k=1, N=1024, beta=10, l=2 (110-bit
    /// benchmarking set). The source material does not state noise levels
    /// for this set; 2^-15 / 2^-25 are in line with its common use.
    pub fn set_ii() -> Self {
        Self {
            n: 500,
            k: 1,
            poly_size: 1024,
            base_log: 10,
            levels: 2,
            sigma_tlwe: 3.0517578125e-5,
            sigma_tglwe: 2.9802322387695312e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.poly_size.is_power_of_two() {
            return Err(Error::InvalidParams(format!(
                "poly_size {} is not a power of two",
                self.poly_size
            )));
        }
        if self.n < 1 || self.k < 1 || self.levels < 1 {
            return Err(Error::InvalidParams("n, k, l must all be >= 1".into()));
        }
        if self.levels as u32 * self.base_log > 32 {
            return Err(Error::InvalidParams(format!(
                "l*beta = {} exceeds the 32-bit torus",
                self.levels as u32 * self.base_log
            )));
        }
        if self.sigma_tlwe < 0.0 || self.sigma_tglwe < 0.0 {
            return Err(Error::InvalidParams("negative noise stddev".into()));
        }
        Ok(())
    }

    /// Dimension of a sample-extracted TLWE ciphertext.
    pub fn extracted_dim(&self) -> usize {
        self.k * self.poly_size
    }

    /// Number of rows of a TGGSW ciphertext, (k+1)*l.
    pub fn ggsw_rows(&self) -> usize {
        (self.k + 1) * self.levels
    }

    /// FFT size N/2.
    pub fn fft_size(&self) -> usize {
        self.poly_size / 2
    }
}

/// Fixed-point formats of the three main datapath variables, plus the
/// twiddle format (by default 4 bits narrower than the FFT data).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatapathFormats {
    /// Bootstrapping-key coefficients (FFT domain).
    pub bk: FixedPointFormat,
    /// Intermediate variables of the forward FFT.
    pub fft: FixedPointFormat,
    /// Intermediate variables of the inverse FFT (and MAC output).
    pub ifft: FixedPointFormat,
    /// Twiddle factors (forward and inverse).
    pub twiddle: FixedPointFormat,
}

impl DatapathFormats {
    /// Set I formats: BK 26(7,19), FFT 29(15,14), IFFT 29(23,6).
    pub fn set_i() -> Self {
        Self {
            bk: FixedPointFormat::new(26, 7, 19).unwrap(),
            fft: FixedPointFormat::new(29, 15, 14).unwrap(),
            ifft: FixedPointFormat::new(29, 23, 6).unwrap(),
            twiddle: Self::twiddle_for(29),
        }
    }

    /// Set II formats: BK 27(8,19), FFT 30(18,12), IFFT 30(27,3).
    pub fn set_ii() -> Self {
        Self {
            bk: FixedPointFormat::new(27, 8, 19).unwrap(),
            fft: FixedPointFormat::new(30, 18, 12).unwrap(),
            ifft: FixedPointFormat::new(30, 27, 3).unwrap(),
            twiddle: Self::twiddle_for(30),
        }
    }

    /// Default twiddle format for a given FFT data width: 4 bits narrower,
    /// 2 integer bits so that C-D and C+D (both in [-2, 2]) are exact.
    pub fn twiddle_for(fft_width: u8) -> FixedPointFormat {
        let w = fft_width - 4;
        FixedPointFormat::new(w, 2, w - 2).unwrap()
    }

    /// Very wide formats (width 53, integer bits as in the presets) used as
    /// the low-noise anchor of parameter sweeps.
    pub fn wide(reference: &Self) -> Self {
        let widen = |f: FixedPointFormat| {
            FixedPointFormat::new(53, f.integer_bits, 53 - f.integer_bits).unwrap()
        };
        Self {
            bk: widen(reference.bk),
            fft: widen(reference.fft),
            ifft: widen(reference.ifft),
            twiddle: Self::twiddle_for(53),
        }
    }
}

/// Named parameter-set presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamSet {
    I,
    II,
}

impl ParamSet {
    pub fn params(self) -> TfheParams {
        match self {
            ParamSet::I => TfheParams::set_i(),
            ParamSet::II => TfheParams::set_ii(),
        }
    }

    pub fn formats(self) -> DatapathFormats {
        match self {
            ParamSet::I => DatapathFormats::set_i(),
            ParamSet::II => DatapathFormats::set_ii(),
        }
    }
}

impl std::str::FromStr for ParamSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "i" | "1" => Ok(ParamSet::I),
            "II" | "ii" | "2" => Ok(ParamSet::II),
            other => Err(Error::InvalidParams(format!("unknown parameter set {other:?}"))),
        }
    }
}
