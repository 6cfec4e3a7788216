use nccqr::datasets::{normal_cdf, ErrorLaw, SyntheticModel, SyntheticSpec};
use proptest::prelude::*;

fn laws(model: SyntheticModel) -> Vec<ErrorLaw> {
    [ErrorLaw::Normal, ErrorLaw::Exp, ErrorLaw::Sin]
        .into_iter()
        .filter(|e| model.allows(*e))
        .collect()
}

/// Standardized residuals `(y - center) / sd` have zero mean and unit variance.
#[test]
fn standardized_noise_moments() {
    let n = 100_000;
    for model in SyntheticModel::ALL {
        for error in laws(model) {
            let d = if model == SyntheticModel::SingleIndex { 5 } else { 1 };
            let spec = SyntheticSpec::new(model, error, n, d, 17).unwrap();
            let zs: Vec<f64> = spec
                .draws()
                .iter()
                .map(|dr| (spec.response(dr) - spec.center(&dr.x, dr.upper_branch)) / spec.noise_sd(&dr.x))
                .collect();
            let mean = zs.iter().sum::<f64>() / n as f64;
            let var = zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!(mean.abs() < 0.02, "{model}/{error}: mean {mean}");
            assert!((var - 1.0).abs() < 0.02, "{model}/{error}: variance {var}");
        }
    }
}

#[test]
fn raw_noise_variance_matches_quadrature() {
    let n = 200_000;
    for (model, error) in [
        (SyntheticModel::Sine, ErrorLaw::Exp),
        (SyntheticModel::Triangle, ErrorLaw::Sin),
        (SyntheticModel::TwoPhase, ErrorLaw::Normal),
    ] {
        let spec = SyntheticSpec::new(model, error, n, 1, 4).unwrap();
        let eps: Vec<f64> = spec
            .draws()
            .iter()
            .map(|dr| spec.response(dr) - spec.center(&dr.x, dr.upper_branch))
            .collect();
        let var = eps.iter().map(|e| e * e).sum::<f64>() / n as f64;
        let expected = spec.mean_noise_variance(10_000);
        assert!((var - expected).abs() < 0.03 * expected, "{model}/{error}: {var} vs {expected}");
    }
}

#[test]
fn covariates_are_uniform() {
    let spec = SyntheticSpec::new(SyntheticModel::SingleIndex, ErrorLaw::Sin, 50_000, 3, 9).unwrap();
    let data = spec.generate::<f64>().unwrap();
    let x = data.x();
    for j in 0..3 {
        let col = x.column(j);
        assert!(col.iter().all(|v| (0.0..1.0).contains(v)));
        let mean = col.sum() / col.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
        let below = col.iter().filter(|v| **v < 0.25).count() as f64 / col.len() as f64;
        assert!((below - 0.25).abs() < 0.01);
    }
}

#[test]
fn double_sine_branches_are_balanced() {
    let spec = SyntheticSpec::new(SyntheticModel::DoubleSine, ErrorLaw::Sin, 40_000, 1, 2).unwrap();
    let upper = spec.draws().iter().filter(|d| d.upper_branch).count() as f64 / 40_000.0;
    assert!((upper - 0.5).abs() < 0.01);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// For Gaussian-noise models the oracle quantile is `center + sd·Φ⁻¹(τ)`.
    #[test]
    fn gaussian_oracle_inverts_cdf(x in 0.001f64..0.999, tau in 0.01f64..0.99, m in 0usize..4, e in 0usize..3) {
        let model = SyntheticModel::ALL[m];
        let error = [ErrorLaw::Normal, ErrorLaw::Exp, ErrorLaw::Sin][e];
        let spec = SyntheticSpec::new(model, error, 10, 1, 0).unwrap();
        let q = spec.oracle_quantile(&[x], tau).unwrap();
        let z = (q - spec.center(&[x], false)) / spec.noise_sd(&[x]);
        prop_assert!((normal_cdf(z) - tau).abs() < 1e-9);
    }

    /// The double-sine oracle solves the two-component mixture CDF equation.
    #[test]
    fn mixture_oracle_solves_cdf(x in 0.01f64..0.99, tau in 0.01f64..0.99) {
        let spec = SyntheticSpec::new(SyntheticModel::DoubleSine, ErrorLaw::Sin, 10, 1, 0).unwrap();
        let q = spec.oracle_quantile(&[x], tau).unwrap();
        let sd = spec.noise_sd(&[x]);
        let c = spec.center(&[x], true);
        let cdf = 0.5 * normal_cdf((q - c) / sd) + 0.5 * normal_cdf((q + c) / sd);
        prop_assert!((cdf - tau).abs() < 1e-8, "cdf {} tau {}", cdf, tau);
    }

    /// Oracle quantiles are nondecreasing in the level.
    #[test]
    fn oracle_is_monotone(x in 0.0f64..1.0, a in 0.01f64..0.99, b in 0.01f64..0.99, m in 0usize..6) {
        let model = SyntheticModel::ALL[m];
        let error = if model.allows(ErrorLaw::Normal) { ErrorLaw::Normal } else { ErrorLaw::Sin };
        let d = if model == SyntheticModel::SingleIndex { 2 } else { 1 };
        let spec = SyntheticSpec::new(model, error, 10, d, 0).unwrap();
        let point = vec![x; d];
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(spec.oracle_quantile(&point, lo).unwrap() <= spec.oracle_quantile(&point, hi).unwrap() + 1e-9);
    }
}
