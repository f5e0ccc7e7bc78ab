//! The analytic log density and gradient against a from-scratch density
//! written here and central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankmargin_core::data::default_tracked_countries;
use rankmargin_core::model::{log_posterior, make_spec};
use rankmargin_core::synth::{generate, venue_mix_schedule, TrueParams};
use rankmargin_core::{EncodedDataset, HierarchicalPosterior, LogDensity, ModelSpec, ModelVariant, ParameterVector};

fn ln_normal(x: f64, mu: f64, sd: f64) -> f64 {
    let z = (x - mu) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Unnormalized log posterior on the log-scale parameterization,
/// transcribed directly from the model definition.
fn reference_density(x: &[f64], data: &EncodedDataset, spec: &ModelSpec) -> f64 {
    let r = spec.ranks;
    let c = spec.tracked_countries.len();
    let a = |rank: usize| if rank == 1 { 0.0 } else { x[rank - 2] };
    let h = x[r - 1];
    let country = &x[r..r + c];
    let (beta, gamma) = (x[r + c], x[r + c + 1]);
    let (sy, sa) = (x[r + c + 2].exp(), x[r + c + 3].exp());

    let mut lp = 0.0;
    for m in &data.matches {
        let mut mu = a(m.rank1) - a(m.rank2) + h * f64::from(m.home);
        for (k, cc) in spec.tracked_countries.iter().enumerate() {
            let col = data.tracked_countries.iter().position(|t| t == cc).unwrap();
            mu += country[k] * f64::from(m.country_home[col]);
        }
        lp += ln_normal(m.y, mu, sy);
    }
    for j in 2..=r {
        let t = (j - 1) as f64;
        lp += ln_normal(a(j), beta * t + gamma * t.sqrt(), sa);
    }
    lp += ln_normal(h, 0.0, 0.5);
    lp += country.iter().map(|&v| ln_normal(v, 0.0, 0.2)).sum::<f64>();
    lp += ln_normal(beta, 0.0, 2.0) + ln_normal(gamma, 0.0, 2.0);
    // Half-normal(0, 2) on each scale plus the log Jacobian.
    for s in [sy, sa] {
        lp += ln_normal(s, 0.0, 2.0) + 2f64.ln() + s.ln();
    }
    lp
}

fn fixture(variant: ModelVariant) -> (EncodedDataset, ModelSpec) {
    let tracked = default_tracked_countries();
    let truth = TrueParams::on_trend(30, 0.4, 1.9).with_countries(&tracked, &[0.1, -0.05, 0.0]).unwrap();
    let data = generate(&truth, &venue_mix_schedule(400, 30, 17).unwrap(), 17, true).unwrap();
    (data, make_spec(variant, 30, &tracked).unwrap())
}

fn random_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect()
}

#[test]
fn density_matches_reference() {
    for variant in [ModelVariant::Global, ModelVariant::CountryIntercepts] {
        let (data, spec) = fixture(variant);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = random_point(&mut rng, spec.dimension());
            let params = ParameterVector::from_slice(&spec, &x).unwrap();
            let got = log_posterior(&params, &data, &spec).unwrap().log_density;
            let want = reference_density(&x, &data, &spec);
            assert!((got - want).abs() <= 1e-10 * want.abs().max(1.0), "{variant:?}: {got} vs {want}");
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    for variant in [ModelVariant::Global, ModelVariant::CountryIntercepts] {
        let (data, spec) = fixture(variant);
        let dim = spec.dimension();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let x = random_point(&mut rng, dim);
            let params = ParameterVector::from_slice(&spec, &x).unwrap();
            let grad = log_posterior(&params, &data, &spec).unwrap().gradient;
            for i in 0..dim {
                let step = 1e-5;
                let (mut hi, mut lo) = (x.clone(), x.clone());
                hi[i] += step;
                lo[i] -= step;
                let fd = (reference_density(&hi, &data, &spec) - reference_density(&lo, &data, &spec)) / (2.0 * step);
                worst = worst.max((grad[i] - fd).abs() / fd.abs().max(1.0));
            }
        }
        assert!(worst < 1e-6, "{variant:?}: max relative error {worst}");
    }
}

#[test]
fn sampler_target_gradient_matches_finite_differences() {
    for (fixed, weight) in [(false, None), (false, Some(0.0)), (false, Some(1.0)), (true, None)] {
        let (data, spec) = fixture(ModelVariant::CountryIntercepts);
        let mut target = HierarchicalPosterior::new(&spec, &data).unwrap();
        if fixed {
            let scales = rankmargin_core::model::FixedScales { sigma_y: 1.7, sigma_a: 0.4 };
            target = target.with_fixed_scales(scales).unwrap();
        }
        if let Some(w) = weight {
            target = target.with_noncentering(w).unwrap();
        }
        // log |d model / d sampler| = sum(w) * log sigma_a when sigma_a is sampled.
        let weights: f64 = target.noncentering().iter().sum();
        let jacobian = |model: &[f64]| if fixed { 0.0 } else { weights * model[model.len() - 1] };
        let density = |p: &[f64]| {
            let model = target.model_position(p);
            reference_density(&model, &data, &spec) + jacobian(&model)
        };
        let dim = target.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x = random_point(&mut rng, dim);
            let mut grad = vec![0.0; dim];
            let lp = target.log_density_gradient(&x, &mut grad);
            let want = density(&x);
            assert!((lp - want).abs() <= 1e-10 * want.abs(), "{lp} vs {want}");
            let back = target.sampler_position(&target.model_position(&x));
            assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
            for i in 0..dim {
                let step = 1e-5;
                let (mut hi, mut lo) = (x.clone(), x.clone());
                hi[i] += step;
                lo[i] -= step;
                let fd = (density(&hi) - density(&lo)) / (2.0 * step);
                assert!(
                    (grad[i] - fd).abs() / fd.abs().max(1.0) < 1e-6,
                    "fixed={fixed} weight={weight:?} coordinate {i}: {} vs {fd}",
                    grad[i]
                );
            }
        }
    }
}
