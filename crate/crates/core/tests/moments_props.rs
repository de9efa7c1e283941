//! Moment identities: positivity, bilinearity, three independent routes to
//! the second moment, and the variance limits against long-time moments.

use bmp_core::catalog::{self, RandomShape};
use bmp_core::moments::{
    covariance, first_moment, moments_from_laplace, rho_cross, second_moment, second_moment_quadrature, sigma_cross,
    variance, variance_normalizer,
};
use bmp_core::quadrature::QuadratureConfig;
use bmp_core::{spectral_decompose, FiniteModel, FunctionOnE, Regime};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_model(seed: u64, shape: usize) -> FiniteModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    catalog::build(&catalog::random_design(&mut rng, RandomShape::ALL[shape]).unwrap()).unwrap()
}

fn lin(a: f64, f: &[f64], b: f64, g: &[f64]) -> FunctionOnE {
    FunctionOnE::real(&f.iter().zip(g).map(|(x, y)| a * x + b * y).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn second_moment_dominates_squared_mean(
        seed in any::<u64>(),
        shape in 0usize..4,
        t in 0.0f64..2.0,
        values in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let m = random_model(seed, shape);
        let f = FunctionOnE::real(&values[..m.n()]);
        for x in 0..m.n() {
            let mut nu = vec![0; m.n()];
            nu[x] = 1;
            let mean = first_moment(&m, &nu, &f, t).unwrap().re;
            let second = second_moment(&m, x, &f, t).unwrap();
            prop_assert!(second >= mean * mean - 1e-9 * second.abs().max(1.0));
        }
    }

    #[test]
    fn covariance_is_bilinear_and_symmetric(
        seed in any::<u64>(),
        shape in 0usize..4,
        t in 0.1f64..1.5,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        values in prop::collection::vec(-1.0f64..1.0, 18),
    ) {
        let m = random_model(seed, shape);
        let n = m.n();
        let (f, g, h) = (&values[..n], &values[6..6 + n], &values[12..12 + n]);
        let (ff, gf, hf) = (FunctionOnE::real(f), FunctionOnE::real(g), FunctionOnE::real(h));
        let x = seed as usize % n;
        let lhs = covariance(&m, x, &lin(a, f, b, g), &hf, t).unwrap();
        let rhs = a * covariance(&m, x, &ff, &hf, t).unwrap() + b * covariance(&m, x, &gf, &hf, t).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-8 * (1.0 + rhs.abs()));
        let swapped = covariance(&m, x, &hf, &ff, t).unwrap();
        let direct = covariance(&m, x, &ff, &hf, t).unwrap();
        prop_assert!((swapped - direct).abs() < 1e-9 * (1.0 + direct.abs()));
        prop_assert!(variance(&m, &vec![1; n], &ff, t).unwrap() >= -1e-9);
    }
}

#[test]
fn ode_quadrature_and_laplace_agree() {
    for d in [catalog::critical_pair(), catalog::rotating_triple(Regime::Critical), catalog::critical_chain()] {
        let m = catalog::build(&d).unwrap();
        let f = FunctionOnE::real(&(0..m.n()).map(|x| 0.5 + x as f64).collect::<Vec<_>>());
        let t = 0.8;
        let lm = moments_from_laplace(&m, &f, t, 1e-3).unwrap();
        for x in 0..m.n() {
            let ode = second_moment(&m, x, &f, t).unwrap();
            let quad = second_moment_quadrature(&m, x, &f, t, 1e-11).unwrap();
            assert!((quad.value / ode - 1.0).abs() < 1e-8, "{} vs {ode}", quad.value);
            assert!((lm.second[x] / ode - 1.0).abs() < 1e-5, "{} vs {ode}", lm.second[x]);
            let mut nu = vec![0; m.n()];
            nu[x] = 1;
            let mean = first_moment(&m, &nu, &f, t).unwrap().re;
            assert!((lm.mean[x] / mean - 1.0).abs() < 1e-7);
        }
    }
}

#[test]
fn small_regime_cross_term_is_the_polarized_limit() {
    let m = catalog::build(&catalog::rotating_triple(Regime::Small)).unwrap();
    let dec = spectral_decompose(&m).unwrap();
    let quad = QuadratureConfig::default();
    let b = &dec.blocks[1];
    let re: Vec<f64> = (0..3).map(|x| b.phi[(x, 0)].re).collect();
    let im: Vec<f64> = (0..3).map(|x| b.phi[(x, 0)].im).collect();
    let s = |f: &FunctionOnE, g: &FunctionOnE| sigma_cross(&dec, &m, f, g, &quad).unwrap().value;
    let (fr, fi) = (FunctionOnE::real(&re), FunctionOnE::real(&im));
    let plus = lin(1.0, &re, 1.0, &im);
    let minus = lin(1.0, &re, -1.0, &im);
    let polar = (s(&plus, &plus) - s(&minus, &minus)) / 4.0;
    assert!((polar - s(&fr, &fi)).abs() < 1e-9);
    // long-time covariance approaches the cross term
    let t = 25.0;
    let x = 0;
    let cov = covariance(&m, x, &plus, &minus, t).unwrap() * variance_normalizer(&dec, Regime::Small, 0, t, x);
    let want = s(&plus, &minus);
    assert!((cov - want).abs() < 1e-3 * s(&fr, &fr), "{cov} vs {want}");
}

#[test]
fn critical_cross_term_matches_long_time_covariance() {
    let m = catalog::build(&catalog::critical_plane()).unwrap();
    let dec = spectral_decompose(&m).unwrap();
    let h1 = FunctionOnE::real(&[1.0, 0.0, -1.0]);
    let h2 = FunctionOnE::real(&[1.0, -2.0, 1.0]);
    assert!(rho_cross(&dec, &m, &h1, &h2).unwrap().abs() < 1e-9);
    let h3 = FunctionOnE::real(&[2.0, -2.0, 0.0]);
    let want = rho_cross(&dec, &m, &h1, &h3).unwrap();
    // a symmetric start has no O(1/t) correction on this model
    let t = 6.0;
    let nu = [1, 1, 1];
    let sum = FunctionOnE::real(&[3.0, -2.0, -1.0]);
    let diff = FunctionOnE::real(&[-1.0, 2.0, -1.0]);
    let cov = (variance(&m, &nu, &sum, t).unwrap() - variance(&m, &nu, &diff, t).unwrap()) / 4.0;
    let phi_nu: f64 = dec.phi1.iter().sum();
    let normalized = cov * (dec.lambda1() * t).exp() / t / phi_nu;
    assert!((normalized / want - 1.0).abs() < 1e-6, "{normalized} vs {want}");
}
