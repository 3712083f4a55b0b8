//! Shared fixtures for the criterion benchmarks.

use tpbs_core::fft::{Arithmetic, FftPlan};
use tpbs_core::fixed::{FpContext, RoundingMode};
use tpbs_core::params::DatapathFormats;
use tpbs_core::pbs::{BootstrappingKey, RawBootstrappingKey};
use tpbs_core::torus::{keygen, SecretKeys};
use tpbs_core::TfheParams;

pub struct Fixture {
    pub params: TfheParams,
    pub keys: SecretKeys,
    pub plan: FftPlan,
    pub bk: BootstrappingKey,
}

/// Set I keys and bootstrapping key on the requested datapath.
pub fn fixture(fixed: bool, seed: u64) -> Fixture {
    let params = TfheParams::set_i();
    let keys = keygen(&params, seed);
    let plan = if fixed {
        FftPlan::new(
            params.poly_size,
            Arithmetic::Fixed {
                formats: DatapathFormats::set_i(),
                rounding: RoundingMode::NearestEven,
            },
        )
        .unwrap()
    } else {
        FftPlan::reference(params.poly_size)
    };
    let raw = RawBootstrappingKey::generate(&params, &keys, tpbs_core::rng::stream(seed, "bk"));
    let mut ctx = FpContext::default();
    let bk = BootstrappingKey::from_raw(&raw, &plan, &mut ctx);
    Fixture { params, keys, plan, bk }
}
