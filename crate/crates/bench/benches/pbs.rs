use criterion::{criterion_group, criterion_main, Criterion};
use tpbs_bench::fixture;
use tpbs_core::fixed::FpContext;
use tpbs_core::pbs::{
    cmux_assign, encrypt_bit, nand_lut, programmable_bootstrap, PbsConfig,
};
use tpbs_core::torus::{NoiseRng, TglweCiphertext, TorusPolynomial};

fn bench_cmux(c: &mut Criterion) {
    let mut group = c.benchmark_group("cmux");
    for (name, fixed) in [("reference", false), ("fixed", true)] {
        let fx = fixture(fixed, 2);
        let mut ctx = FpContext::default();
        let f = TorusPolynomial::from_coeffs(
            (0..fx.params.poly_size).map(|i| (i as u32) << 20).collect(),
        );
        group.bench_function(name, |b| {
            let mut acc = TglweCiphertext::trivial(f.clone(), fx.params.k);
            b.iter(|| {
                cmux_assign(&mut acc, fx.bk.fetch(0), 0x1357_9000, &fx.params, &fx.plan, &mut ctx)
            });
        });
    }
    group.finish();
}

fn bench_bootstrap(c: &mut Criterion) {
    let mut group = c.benchmark_group("programmable_bootstrap");
    group.sample_size(10);
    for (name, fixed) in [("reference", false), ("fixed", true)] {
        let fx = fixture(fixed, 3);
        let mut ctx = FpContext::default();
        let lut = nand_lut(&fx.params);
        let cfg = PbsConfig::default();
        let mut rng = NoiseRng::new(tpbs_core::rng::stream(3, "bench-pbs"));
        let ct = encrypt_bit(true, &fx.keys, &fx.params, &mut rng);
        group.bench_function(name, |b| {
            b.iter(|| {
                programmable_bootstrap(&ct, &lut, &fx.bk, &fx.params, &fx.plan, &cfg, &mut ctx)
                    .unwrap()
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_cmux, bench_bootstrap);
criterion_main!(benches);
