//! Shared fixtures for the benchmarks.

use rankmargin_core::data::default_tracked_countries;
use rankmargin_core::model::make_spec;
use rankmargin_core::synth::{generate, venue_mix_schedule, TrueParams};
use rankmargin_core::{EncodedDataset, ModelSpec, ModelVariant};

/// A season-sized synthetic dataset over 30 ranks.
pub fn season(variant: ModelVariant, n: usize, seed: u64) -> (EncodedDataset, ModelSpec) {
    let tracked = default_tracked_countries();
    let truth =
        TrueParams::on_trend(30, 0.4, 1.9).with_countries(&tracked, &[0.05, 0.0, 0.0]).expect("matching lengths");
    let schedule = venue_mix_schedule(n, 30, seed).expect("valid schedule");
    let data = generate(&truth, &schedule, seed, true).expect("valid truth");
    let spec = make_spec(variant, 30, &tracked).expect("valid spec");
    (data, spec)
}
