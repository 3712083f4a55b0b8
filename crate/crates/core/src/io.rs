//! Binary serialization of keys, ciphertexts and bootstrapping keys.
//!
//! Every file starts with a 16-byte header: magic "TPBS", format version,
//! a kind tag, and an FNV-1a hash of the parameter set, followed by
//! little-endian 32-bit words. Bootstrapping-key files are entry-indexed
//! (fixed-size records) so single entries can be streamed.

use std::io::{Read, Write};

use crate::fft::ConstSpectrum;
use crate::fixed::GaussTwiddle;
use crate::pbs::{BootstrappingKey, TggswSpectral};
use crate::torus::{SecretKeys, TlweCiphertext};
use crate::{Error, FixedPointFormat, Result, TfheParams};

const MAGIC: &[u8; 4] = b"TPBS";
const VERSION: u16 = 1;

/// File kind tags.
pub const KIND_SECRET_KEY: u16 = 1;
pub const KIND_TLWE: u16 = 2;
pub const KIND_BK_FIXED: u16 = 3;

/// Stable hash of the parameter set, stored in headers so mismatched files
/// are rejected early.
pub fn params_hash(params: &TfheParams) -> u64 {
    let bytes = serde_json::to_vec(params).expect("params serialize");
    crate::rng::fnv1a(&bytes)
}

fn write_header(w: &mut impl Write, kind: u16, hash: u64) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&kind.to_le_bytes())?;
    w.write_all(&hash.to_le_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read, expect_kind: u16, expect_hash: u64) -> Result<()> {
    let mut buf = [0u8; 16];
    r.read_exact(&mut buf)?;
    if &buf[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = u16::from_le_bytes([buf[6], buf[7]]);
    if kind != expect_kind {
        return Err(Error::Format(format!("kind {kind}, expected {expect_kind}")));
    }
    let hash = u64::from_le_bytes(buf[8..16].try_into().unwrap());
    if hash != expect_hash {
        return Err(Error::Format("parameter hash mismatch".into()));
    }
    Ok(())
}

fn write_words(w: &mut impl Write, words: impl IntoIterator<Item = u32>) -> Result<()> {
    for word in words {
        w.write_all(&word.to_le_bytes())?;
    }
    Ok(())
}

fn read_word(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_secret_keys(w: &mut impl Write, keys: &SecretKeys, params: &TfheParams) -> Result<()> {
    write_header(w, KIND_SECRET_KEY, params_hash(params))?;
    write_words(w, keys.tlwe_key.iter().copied())?;
    for poly in &keys.tglwe_key {
        write_words(w, poly.iter().copied())?;
    }
    Ok(())
}

pub fn read_secret_keys(r: &mut impl Read, params: &TfheParams) -> Result<SecretKeys> {
    read_header(r, KIND_SECRET_KEY, params_hash(params))?;
    let tlwe_key: Vec<u32> = (0..params.n).map(|_| read_word(r)).collect::<Result<_>>()?;
    let tglwe_key: Vec<Vec<u32>> = (0..params.k)
        .map(|_| (0..params.poly_size).map(|_| read_word(r)).collect::<Result<Vec<u32>>>())
        .collect::<Result<_>>()?;
    if tlwe_key.iter().chain(tglwe_key.iter().flatten()).any(|&b| b > 1) {
        return Err(Error::Format("key coefficients must be binary".into()));
    }
    let extracted_key = tglwe_key.concat();
    Ok(SecretKeys { tlwe_key, tglwe_key, extracted_key })
}

pub fn write_tlwe(w: &mut impl Write, ct: &TlweCiphertext, params: &TfheParams) -> Result<()> {
    write_header(w, KIND_TLWE, params_hash(params))?;
    write_words(w, [ct.dim() as u32])?;
    write_words(w, ct.a.iter().copied())?;
    write_words(w, [ct.b])?;
    Ok(())
}

pub fn read_tlwe(r: &mut impl Read, params: &TfheParams) -> Result<TlweCiphertext> {
    read_header(r, KIND_TLWE, params_hash(params))?;
    let dim = read_word(r)? as usize;
    if dim != params.n && dim != params.extracted_dim() {
        return Err(Error::Format(format!("unexpected ciphertext dimension {dim}")));
    }
    let a: Vec<u32> = (0..dim).map(|_| read_word(r)).collect::<Result<_>>()?;
    let b = read_word(r)?;
    Ok(TlweCiphertext { a, b })
}

/// Writes a fixed-path bootstrapping key: per entry, per row, per column,
/// M (re, im) raw words quantized at `fmt` (width <= 32). Entries are
/// fixed-size records, so entry i starts at a computable offset.
pub fn write_bk_fixed(
    w: &mut impl Write,
    bk: &BootstrappingKey,
    params: &TfheParams,
    fmt: FixedPointFormat,
) -> Result<()> {
    if fmt.width > 32 {
        return Err(Error::InvalidFormat("BK file words are 32-bit".into()));
    }
    write_header(w, KIND_BK_FIXED, params_hash(params))?;
    write_words(
        w,
        [bk.len() as u32, fmt.width as u32, fmt.integer_bits as u32, fmt.fractional_bits as u32],
    )?;
    for i in 0..bk.len() {
        let entry = &bk.entries[i];
        for row in &entry.rows {
            for col in row {
                let triples =
                    col.triples.as_ref().ok_or_else(|| Error::Format("BK not quantized".into()))?;
                for t in triples {
                    let d = t.c - t.c_minus_d;
                    write_words(w, [t.c as u32, d as u32])?;
                }
            }
        }
    }
    Ok(())
}

/// Reads a fixed-path bootstrapping key file back into spectra (reference
/// values reconstructed from the quantized raws).
pub fn read_bk_fixed(
    r: &mut impl Read,
    params: &TfheParams,
) -> Result<(BootstrappingKey, FixedPointFormat)> {
    read_header(r, KIND_BK_FIXED, params_hash(params))?;
    let n = read_word(r)? as usize;
    let (width, int_bits, frac_bits) = (read_word(r)?, read_word(r)?, read_word(r)?);
    let fmt = FixedPointFormat::new(width as u8, int_bits as u8, frac_bits as u8)?;
    let sign_extend = |w: u32| -> i64 {
        let shift = 64 - fmt.width as u32;
        (((w as u64) << shift) as i64) >> shift
    };
    let m = params.fft_size();
    let ulp = fmt.ulp();
    let mut entries = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rows = Vec::with_capacity(params.ggsw_rows());
        for _ in 0..params.ggsw_rows() {
            let mut row = Vec::with_capacity(params.k + 1);
            for _ in 0..=params.k {
                let mut values = Vec::with_capacity(m);
                let mut triples = Vec::with_capacity(m);
                for _ in 0..m {
                    let c = sign_extend(read_word(r)?);
                    let d = sign_extend(read_word(r)?);
                    values.push(num_complex::Complex64::new(c as f64 * ulp, d as f64 * ulp));
                    triples.push(GaussTwiddle::exact(c, d, fmt));
                }
                row.push(ConstSpectrum { values, triples: Some(triples), scale_log2: 0 });
            }
            rows.push(row);
        }
        entries.push(TggswSpectral { rows });
    }
    Ok((BootstrappingKey::from_entries(entries), fmt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::{Arithmetic, FftPlan};
    use crate::fixed::{FpContext, RoundingMode};
    use crate::params::DatapathFormats;
    use crate::pbs::RawBootstrappingKey;
    use crate::torus::keygen;

    #[test]
    fn key_and_ciphertext_roundtrip() {
        let params = TfheParams::set_i();
        let keys = keygen(&params, 3);
        let mut buf = Vec::new();
        write_secret_keys(&mut buf, &keys, &params).unwrap();
        let back = read_secret_keys(&mut buf.as_slice(), &params).unwrap();
        assert_eq!(back.tlwe_key, keys.tlwe_key);
        assert_eq!(back.extracted_key, keys.extracted_key);

        let ct = TlweCiphertext { a: (0..params.n as u32).collect(), b: 0xdead_beef };
        let mut buf = Vec::new();
        write_tlwe(&mut buf, &ct, &params).unwrap();
        assert_eq!(read_tlwe(&mut buf.as_slice(), &params).unwrap(), ct);

        // Wrong parameter set is rejected by the header hash.
        assert!(read_tlwe(&mut buf.as_slice(), &TfheParams::set_ii()).is_err());
    }

    #[test]
    fn bk_file_roundtrip() {
        let mut params = TfheParams::set_i();
        params.n = 3;
        let keys = keygen(&params, 4);
        let plan = FftPlan::new(
            params.poly_size,
            Arithmetic::Fixed {
                formats: DatapathFormats::set_i(),
                rounding: RoundingMode::Truncate,
            },
        )
        .unwrap();
        let mut ctx = FpContext::default();
        let raw = RawBootstrappingKey::generate(&params, &keys, crate::rng::stream(4, "bk"));
        let bk = crate::pbs::BootstrappingKey::from_raw(&raw, &plan, &mut ctx);

        let mut buf = Vec::new();
        write_bk_fixed(&mut buf, &bk, &params, DatapathFormats::set_i().bk).unwrap();
        let (back, fmt) = read_bk_fixed(&mut buf.as_slice(), &params).unwrap();
        assert_eq!(fmt, DatapathFormats::set_i().bk);
        assert_eq!(back.len(), bk.len());
        for (e1, e2) in back.entries.iter().zip(&bk.entries) {
            for (r1, r2) in e1.rows.iter().zip(&e2.rows) {
                for (c1, c2) in r1.iter().zip(r2) {
                    let t1 = c1.triples.as_ref().unwrap();
                    let t2 = c2.triples.as_ref().unwrap();
                    for (a, b) in t1.iter().zip(t2) {
                        assert_eq!((a.c, a.c_minus_d, a.c_plus_d), (b.c, b.c_minus_d, b.c_plus_d));
                    }
                }
            }
        }
    }
}
