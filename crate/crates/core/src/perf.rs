//! Analytic model of the streaming CMUX pipeline: cycles per CMUX, batch
//! size, latency, throughput, and bootstrapping-key bandwidth.
//!
//! The modeled pipeline is statically scheduled, so closed forms suffice:
//! a CMUX streams its (k+1)l forward FFTs at `sw_fft` complex coefficients
//! per cycle, the deep pipeline is filled with a batch of b ciphertexts,
//! and each BK entry is fetched once per batch iteration, dividing the
//! on-chip bandwidth requirement by b on the off-chip side.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, TfheParams};

/// How the CMUX datapath is unrolled across FFT kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnrollStyle {
    /// One wide FFT kernel with l times the streaming width of the IFFT.
    FftUnrolled,
    /// (k+1)l narrow FFT kernels and (k+1) IFFT kernels per base unit.
    DotproductUnrolled,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub params: TfheParams,
    pub clock_hz: f64,
    pub style: UnrollStyle,
    /// Streaming width of the forward FFT bank, complex coefficients/cycle.
    pub sw_fft: usize,
    /// Streaming width of the inverse FFT bank.
    pub sw_ifft: usize,
    /// Kernel multiplicity base for the dot-product style (n_fft = (k+1)l
    /// * base, n_ifft = (k+1) * base).
    pub kernel_base: usize,
    /// Pipeline depth of one CMUX in clock cycles.
    pub cmux_latency_cycles: u64,
    /// Bit width of one real BK component.
    pub bk_width_bits: u32,
    /// Memory packing efficiency applied to the full-BK byte count (1.0 =
    /// unpacked words).
    pub bk_packing_factor: f64,
}

impl PipelineConfig {
    pub fn set_i() -> Self {
        Self {
            params: TfheParams::set_i(),
            clock_hz: 200e6,
            style: UnrollStyle::FftUnrolled,
            sw_fft: 128,
            sw_ifft: 64,
            kernel_base: 1,
            cmux_latency_cycles: 156,
            bk_width_bits: 26,
            bk_packing_factor: 1.0,
        }
    }

    pub fn set_ii() -> Self {
        Self {
            params: TfheParams::set_ii(),
            clock_hz: 200e6,
            style: UnrollStyle::FftUnrolled,
            sw_fft: 128,
            sw_ifft: 64,
            kernel_base: 1,
            cmux_latency_cycles: 224,
            bk_width_bits: 27,
            bk_packing_factor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let m = self.params.fft_size();
        if self.sw_fft == 0 || m % self.sw_fft != 0 {
            return Err(Error::StreamingWidth { width: self.sw_fft, size: m });
        }
        match self.style {
            UnrollStyle::FftUnrolled => {
                if self.sw_fft != self.params.levels * self.sw_ifft {
                    return Err(Error::InvalidParams(format!(
                        "fft-unrolled requires sw_fft = l*sw_ifft, got {} != {}*{}",
                        self.sw_fft, self.params.levels, self.sw_ifft
                    )));
                }
            }
            UnrollStyle::DotproductUnrolled => {
                if self.kernel_base == 0 {
                    return Err(Error::InvalidParams("kernel_base must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// FFT kernel count implied by the unroll style.
    pub fn n_fft_kernels(&self) -> usize {
        match self.style {
            UnrollStyle::FftUnrolled => 1,
            UnrollStyle::DotproductUnrolled => {
                (self.params.k + 1) * self.params.levels * self.kernel_base
            }
        }
    }

    pub fn n_ifft_kernels(&self) -> usize {
        match self.style {
            UnrollStyle::FftUnrolled => 1,
            UnrollStyle::DotproductUnrolled => (self.params.k + 1) * self.kernel_base,
        }
    }

    /// Initiation interval of one CMUX in clock cycles:
    /// (N/2 / sw_fft) * (k+1) * l, divided by the kernel multiplicity in
    /// the dot-product style.
    pub fn cycles_per_cmux(&self) -> Result<u64> {
        self.validate()?;
        let m = self.params.fft_size();
        let passes = (m / self.sw_fft) as u64;
        let terms = ((self.params.k + 1) * self.params.levels) as u64;
        Ok(match self.style {
            UnrollStyle::FftUnrolled => passes * terms,
            UnrollStyle::DotproductUnrolled => passes * terms / self.kernel_base as u64,
        })
    }

    /// Batch size b = pipeline depth / initiation interval, rounded to the
    /// nearest integer when not exactly divisible.
    pub fn batch_size(&self) -> Result<u64> {
        let cycles = self.cycles_per_cmux()?;
        Ok((self.cmux_latency_cycles + cycles / 2) / cycles)
    }

    /// Errors unless the pipeline depth is an exact multiple of the
    /// initiation interval.
    pub fn batch_size_exact(&self) -> Result<u64> {
        let cycles = self.cycles_per_cmux()?;
        if self.cmux_latency_cycles % cycles != 0 {
            return Err(Error::InvalidParams(format!(
                "pipeline depth {} is not a multiple of the {}-cycle CMUX interval",
                self.cmux_latency_cycles, cycles
            )));
        }
        Ok(self.cmux_latency_cycles / cycles)
    }

    /// Full analytic report.
    pub fn report(&self) -> Result<PipelineReport> {
        let cycles = self.cycles_per_cmux()?;
        let b = self.batch_size()?;
        let n = self.params.n as u64;
        let latency_s = (n * b * cycles) as f64 / self.clock_hz;
        let latency_ms = latency_s * 1e3;
        let throughput_pbs_per_ms = b as f64 / latency_ms;

        let p = &self.params;
        let entry_bits =
            ((p.k + 1) * p.levels * (p.k + 1) * p.fft_size() * 2) as u64 * self.bk_width_bits as u64;
        let bk_entry_bytes = entry_bits as f64 / 8.0;
        let onchip_bw = bk_entry_bytes * self.clock_hz / cycles as f64;
        let offchip_bw = onchip_bw / b as f64;
        let full_bk_bytes = n as f64 * bk_entry_bytes;

        Ok(PipelineReport {
            cycles_per_cmux: cycles,
            batch_size: b,
            latency_ms,
            throughput_pbs_per_ms,
            bk_entry_bytes,
            onchip_bw_bytes_per_s: onchip_bw,
            offchip_bw_bytes_per_s: offchip_bw,
            full_bk_bytes,
            packed_bk_bytes: full_bk_bytes * self.bk_packing_factor,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineReport {
    pub cycles_per_cmux: u64,
    pub batch_size: u64,
    pub latency_ms: f64,
    pub throughput_pbs_per_ms: f64,
    pub bk_entry_bytes: f64,
    pub onchip_bw_bytes_per_s: f64,
    pub offchip_bw_bytes_per_s: f64,
    pub full_bk_bytes: f64,
    pub packed_bk_bytes: f64,
}
