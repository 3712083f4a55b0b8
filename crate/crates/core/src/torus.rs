//! Discretized-torus arithmetic and the three ciphertext forms.
//!
//! The torus T = R/Z is discretized to q = 2^32 levels: a [`TorusElement`]
//! is a `u32` standing for `value / 2^32`. Addition is wrapping `u32`
//! addition; multiplication only ever happens between a torus element and a
//! small signed integer (gadget digits, monomial rotations).

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::rng::GaussianSampler;
use crate::{Error, Result, TfheParams};

/// A point of the discretized torus, meaning `value / 2^32` in R/Z.
pub type TorusElement = u32;

/// Maps a real number onto the torus grid (nearest point, wrapping).
pub fn f64_to_torus(x: f64) -> TorusElement {
    let frac = x - x.floor();
    ((frac * 4294967296.0).round() as u64 & 0xffff_ffff) as u32
}

/// Centered real representative in [-1/2, 1/2).
pub fn torus_to_f64(t: TorusElement) -> f64 {
    (t as i32) as f64 / 4294967296.0
}

/// An element of T_N[X] = T[X]/(X^N + 1).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusPolynomial {
    pub coeffs: Vec<TorusElement>,
}

impl TorusPolynomial {
    pub fn zero(n: usize) -> Self {
        Self { coeffs: vec![0; n] }
    }

    pub fn from_coeffs(coeffs: Vec<TorusElement>) -> Self {
        Self { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn add_assign(&mut self, rhs: &Self) {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a = a.wrapping_add(*b);
        }
    }

    pub fn sub_assign(&mut self, rhs: &Self) {
        for (a, b) in self.coeffs.iter_mut().zip(&rhs.coeffs) {
            *a = a.wrapping_sub(*b);
        }
    }

    pub fn neg(&self) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c.wrapping_neg()).collect() }
    }
}

/// Schoolbook negacyclic product of an integer polynomial and a torus
/// polynomial, reduced mod X^N + 1. O(N^2); this is the correctness oracle
/// for the FFT path and the reference arithmetic for external products.
pub fn negacyclic_mul_int(digits: &[i32], t: &TorusPolynomial) -> TorusPolynomial {
    let n = t.len();
    assert_eq!(digits.len(), n);
    let mut out = vec![0u32; n];
    for (i, &d) in digits.iter().enumerate() {
        if d == 0 {
            continue;
        }
        for (j, &c) in t.coeffs.iter().enumerate() {
            let prod = (d as i64).wrapping_mul(c as i64) as u32; // mod 2^32
            let idx = i + j;
            if idx < n {
                out[idx] = out[idx].wrapping_add(prod);
            } else {
                out[idx - n] = out[idx - n].wrapping_sub(prod);
            }
        }
    }
    TorusPolynomial::from_coeffs(out)
}

/// Draws fresh masks and grid-rounded Gaussian noise from a seeded stream.
pub struct NoiseRng {
    pub rng: ChaCha12Rng,
    gauss: GaussianSampler,
}

impl NoiseRng {
    pub fn new(rng: ChaCha12Rng) -> Self {
        Self { rng, gauss: GaussianSampler::new() }
    }

    pub fn uniform(&mut self) -> TorusElement {
        self.rng.gen()
    }

    /// Gaussian torus noise of standard deviation `sigma` (torus units),
    /// rounded to the grid.
    pub fn gaussian(&mut self, sigma: f64) -> TorusElement {
        if sigma == 0.0 {
            return 0;
        }
        let e = self.gauss.sample(&mut self.rng) * sigma;
        f64_to_torus(e)
    }
}

/// Secret keys: the TLWE key, the TGLWE key, and the flattened key that
/// decrypts sample-extracted ciphertexts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SecretKeys {
    pub tlwe_key: Vec<u32>,
    pub tglwe_key: Vec<Vec<u32>>,
    /// Concatenation of the TGLWE key polynomials' coefficients; pairs with
    /// the sign/reversal pattern applied to the mask in [`sample_extract`].
    pub extracted_key: Vec<u32>,
}

impl SecretKeys {
    /// All-zero keys (test hook: decryption returns b directly).
    pub fn zero(params: &TfheParams) -> Self {
        Self {
            tlwe_key: vec![0; params.n],
            tglwe_key: vec![vec![0; params.poly_size]; params.k],
            extracted_key: vec![0; params.extracted_dim()],
        }
    }
}

/// Samples uniform binary keys from a deterministic stream.
pub fn keygen(params: &TfheParams, seed: u64) -> SecretKeys {
    let mut rng = crate::rng::stream(seed, "keygen");
    let tlwe_key: Vec<u32> = (0..params.n).map(|_| rng.gen_range(0..2u32)).collect();
    let tglwe_key: Vec<Vec<u32>> = (0..params.k)
        .map(|_| (0..params.poly_size).map(|_| rng.gen_range(0..2u32)).collect())
        .collect();
    let extracted_key = tglwe_key.concat();
    SecretKeys { tlwe_key, tglwe_key, extracted_key }
}

/// TLWE ciphertext (a, b = a.s + e + mu), dimension n or kN after
/// extraction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlweCiphertext {
    pub a: Vec<TorusElement>,
    pub b: TorusElement,
}

impl TlweCiphertext {
    /// Noiseless, maskless encryption of `mu` (valid under any key).
    pub fn trivial(mu: TorusElement, dim: usize) -> Self {
        Self { a: vec![0; dim], b: mu }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn add_assign(&mut self, rhs: &Self) {
        assert_eq!(self.dim(), rhs.dim());
        for (x, y) in self.a.iter_mut().zip(&rhs.a) {
            *x = x.wrapping_add(*y);
        }
        self.b = self.b.wrapping_add(rhs.b);
    }

    pub fn sub_assign(&mut self, rhs: &Self) {
        assert_eq!(self.dim(), rhs.dim());
        for (x, y) in self.a.iter_mut().zip(&rhs.a) {
            *x = x.wrapping_sub(*y);
        }
        self.b = self.b.wrapping_sub(rhs.b);
    }
}

pub fn tlwe_encrypt(
    mu: TorusElement,
    key: &[u32],
    sigma: f64,
    rng: &mut NoiseRng,
) -> TlweCiphertext {
    let a: Vec<u32> = (0..key.len()).map(|_| rng.uniform()).collect();
    let mut b = mu.wrapping_add(rng.gaussian(sigma));
    for (ai, si) in a.iter().zip(key) {
        if *si == 1 {
            b = b.wrapping_add(*ai);
        }
    }
    TlweCiphertext { a, b }
}

/// Phase b - a.s; equals mu + e for a well-formed ciphertext.
pub fn tlwe_decrypt(ct: &TlweCiphertext, key: &[u32]) -> Result<TorusElement> {
    if ct.dim() != key.len() {
        return Err(Error::DimensionMismatch { expected: key.len(), got: ct.dim() });
    }
    let mut phase = ct.b;
    for (ai, si) in ct.a.iter().zip(key) {
        if *si == 1 {
            phase = phase.wrapping_sub(*ai);
        }
    }
    Ok(phase)
}

/// TGLWE ciphertext (a_1..a_k, b) over T_N[X].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TglweCiphertext {
    pub a: Vec<TorusPolynomial>,
    pub b: TorusPolynomial,
}

impl TglweCiphertext {
    pub fn trivial(mu: TorusPolynomial, k: usize) -> Self {
        let n = mu.len();
        Self { a: vec![TorusPolynomial::zero(n); k], b: mu }
    }

    pub fn zero(k: usize, n: usize) -> Self {
        Self::trivial(TorusPolynomial::zero(n), k)
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    pub fn poly_size(&self) -> usize {
        self.b.len()
    }

    pub fn add_assign(&mut self, rhs: &Self) {
        for (x, y) in self.a.iter_mut().zip(&rhs.a) {
            x.add_assign(y);
        }
        self.b.add_assign(&rhs.b);
    }

    pub fn sub_assign(&mut self, rhs: &Self) {
        for (x, y) in self.a.iter_mut().zip(&rhs.a) {
            x.sub_assign(y);
        }
        self.b.sub_assign(&rhs.b);
    }
}

pub fn tglwe_encrypt(
    mu: &TorusPolynomial,
    key: &[Vec<u32>],
    sigma: f64,
    rng: &mut NoiseRng,
) -> TglweCiphertext {
    let n = mu.len();
    let a: Vec<TorusPolynomial> = (0..key.len())
        .map(|_| TorusPolynomial::from_coeffs((0..n).map(|_| rng.uniform()).collect()))
        .collect();
    let mut b = TorusPolynomial::from_coeffs(
        mu.coeffs.iter().map(|&m| m.wrapping_add(rng.gaussian(sigma))).collect(),
    );
    for (ai, si) in a.iter().zip(key) {
        let digits: Vec<i32> = si.iter().map(|&x| x as i32).collect();
        b.add_assign(&negacyclic_mul_int(&digits, ai));
    }
    TglweCiphertext { a, b }
}

/// Phase b - a.s, coefficient-wise.
pub fn tglwe_decrypt(ct: &TglweCiphertext, key: &[Vec<u32>]) -> Result<TorusPolynomial> {
    if ct.k() != key.len() {
        return Err(Error::DimensionMismatch { expected: key.len(), got: ct.k() });
    }
    let mut phase = ct.b.clone();
    for (ai, si) in ct.a.iter().zip(key) {
        let digits: Vec<i32> = si.iter().map(|&x| x as i32).collect();
        phase.sub_assign(&negacyclic_mul_int(&digits, ai));
    }
    Ok(phase)
}

/// TGGSW ciphertext: (k+1)*l TGLWE rows in the standard gadget layout.
/// Row (i, j) (i in 0..=k, j in 1..=l) is a zero encryption with
/// m * 2^(32 - j*beta) added to component i (a_i for i < k, b for i = k).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TggswCiphertext {
    pub rows: Vec<TglweCiphertext>,
    pub base_log: u32,
    pub levels: usize,
}

pub fn tggsw_encrypt(
    m: u32,
    keys: &SecretKeys,
    sigma: f64,
    params: &TfheParams,
    rng: &mut NoiseRng,
) -> TggswCiphertext {
    let zero = TorusPolynomial::zero(params.poly_size);
    let mut rows = Vec::with_capacity(params.ggsw_rows());
    for i in 0..=params.k {
        for j in 1..=params.levels as u32 {
            let mut row = tglwe_encrypt(&zero, &keys.tglwe_key, sigma, rng);
            let g = m.wrapping_mul(1u32 << (32 - j * params.base_log));
            if i < params.k {
                row.a[i].coeffs[0] = row.a[i].coeffs[0].wrapping_add(g);
            } else {
                row.b.coeffs[0] = row.b.coeffs[0].wrapping_add(g);
            }
            rows.push(row);
        }
    }
    TggswCiphertext { rows, base_log: params.base_log, levels: params.levels }
}

/// Rounds `a` to the nearest multiple of 2^(32 - l*beta) (ties up), then
/// expresses the kept l*beta bits in balanced base-2^beta digits, MSB
/// first. Each digit lies in [-2^(beta-1), 2^(beta-1)); a digit that
/// would equal +2^(beta-1) becomes -2^(beta-1) with carry +1 into the
/// next-more-significant digit. Recomposition
/// sum_j digit_j * 2^(32 - j*beta) equals the rounded value mod 2^32.
pub fn decompose_scalar(a: u32, base_log: u32, levels: usize, out: &mut [i32]) {
    debug_assert_eq!(out.len(), levels);
    let lb = levels as u32 * base_log;
    // Round-half-up on the discarded low bits.
    let rounded = if lb == 32 {
        a
    } else {
        a.wrapping_add(1u32 << (32 - lb - 1)) >> (32 - lb)
    };
    let mut v = rounded as u64; // kept bits, value mod 2^lb (plus round carry)
    let base = 1u64 << base_log;
    let half = 1u64 << (base_log - 1);
    // Extract LSB-first with conditional subtract, store MSB-first.
    for j in (0..levels).rev() {
        let mut d = (v & (base - 1)) as i64;
        if d as u64 >= half {
            d -= base as i64;
        }
        v = (v.wrapping_sub(d as u64)) >> base_log;
        out[j] = d as i32;
    }
    // Any remaining v is the carry out of the top digit, 2^32 = 0 mod q.
}

/// Per-coefficient decomposition of a polynomial into l digit polynomials,
/// MSB first.
pub fn gadget_decompose(p: &TorusPolynomial, base_log: u32, levels: usize) -> Vec<Vec<i32>> {
    let n = p.len();
    let mut out = vec![vec![0i32; n]; levels];
    let mut digits = vec![0i32; levels];
    for (idx, &c) in p.coeffs.iter().enumerate() {
        decompose_scalar(c, base_log, levels, &mut digits);
        for (j, &d) in digits.iter().enumerate() {
            out[j][idx] = d;
        }
    }
    out
}

/// Recomposition sum_j digit_j * 2^(32 - j*beta), mod 2^32.
pub fn recompose_scalar(digits: &[i32], base_log: u32) -> u32 {
    let mut acc = 0u32;
    for (j, &d) in digits.iter().enumerate() {
        let w = 1u32 << (32 - (j as u32 + 1) * base_log);
        acc = acc.wrapping_add((d as u32).wrapping_mul(w));
    }
    acc
}

/// Reads off the constant coefficient of the accumulator as a TLWE
/// ciphertext of dimension kN under the extracted key: the mask is the
/// reversed-and-negated rearrangement a_ext[i*N + j] = a_i[0] if j = 0,
/// else -a_i[N - j].
pub fn sample_extract(acc: &TglweCiphertext) -> TlweCiphertext {
    let n = acc.poly_size();
    let mut a = Vec::with_capacity(acc.k() * n);
    for ai in &acc.a {
        a.push(ai.coeffs[0]);
        for j in 1..n {
            a.push(ai.coeffs[n - j].wrapping_neg());
        }
    }
    TlweCiphertext { a, b: acc.b.coeffs[0] }
}
