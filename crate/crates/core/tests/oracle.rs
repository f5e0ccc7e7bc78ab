//! NUTS with both scales pinned against the closed-form Gaussian posterior.

use rankmargin_core::data::default_tracked_countries;
use rankmargin_core::model::{make_spec, FixedScales};
use rankmargin_core::sampler::{diagnose, sample};
use rankmargin_core::synth::{conjugate_oracle, generate, venue_mix_schedule, TrueParams};
use rankmargin_core::{HierarchicalPosterior, ModelVariant, SamplerConfig};

#[test]
fn pinned_scale_sampler_matches_oracle() {
    let tracked = default_tracked_countries();
    let truth = TrueParams::on_trend(30, 0.4, 1.9)
        .with_countries(&tracked, &[0.05, 0.0, -0.05])
        .unwrap()
        .with_ability_noise(21)
        .unwrap();
    let data = generate(&truth, &venue_mix_schedule(500, 30, 22).unwrap(), 23, true).unwrap();
    let spec = make_spec(ModelVariant::CountryIntercepts, 30, &tracked).unwrap();
    let scales = FixedScales { sigma_y: 1.9, sigma_a: 0.3 };

    let oracle = conjugate_oracle(&data, &spec, scales.sigma_y, scales.sigma_a).unwrap();
    let target = HierarchicalPosterior::new(&spec, &data).unwrap().with_fixed_scales(scales).unwrap();
    let draws = sample(&target, &SamplerConfig { seed: 7, ..Default::default() }).unwrap();
    let diag = diagnose(&draws).unwrap();
    assert!(diag.passed(), "{:?}", diag.flags);
    assert!(oracle.names.len() >= 33);

    for (i, name) in oracle.names.iter().enumerate() {
        let k = draws.index_of(name).unwrap();
        let xs = draws.pooled_column(k);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        let mcse = diag.mcse_mean[k];
        assert!((mean - oracle.mean[i]).abs() < 3.0 * mcse, "{name}: mean {mean} vs {} (mcse {mcse})", oracle.mean[i]);
        assert!((sd / oracle.sd(i) - 1.0).abs() < 0.1, "{name}: sd {sd} vs {}", oracle.sd(i));
    }
}
