//! Properties of the spectral decomposition on random designed models,
//! checked against the matrix exponential.

use approx::assert_relative_eq;
use bmp_core::catalog::{self, RandomShape};
use bmp_core::linalg::C64;
use bmp_core::spectral::{block_polynomial, mean_semigroup};
use bmp_core::{spectral_decompose, FiniteModel, FunctionOnE, Regime, SpectralDecomposition};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_model(seed: u64, shape: usize) -> (FiniteModel, SpectralDecomposition) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = catalog::random_design(&mut rng, RandomShape::ALL[shape]).unwrap();
    let model = catalog::build(&design).unwrap();
    let dec = spectral_decompose(&model).unwrap();
    (model, dec)
}

fn max_diff(a: &FunctionOnE, b: &FunctionOnE) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigenfunctions_are_biorthogonal(seed in any::<u64>(), shape in 0usize..4) {
        let (model, dec) = random_model(seed, shape);
        prop_assert!(dec.biorthogonality_residual() < 1e-9);
        prop_assert_eq!(dec.dimension(), model.n());
    }

    #[test]
    fn spectral_semigroup_matches_matrix_exponential(
        seed in any::<u64>(),
        shape in 0usize..4,
        t in 0.0f64..3.0,
        values in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let (model, dec) = random_model(seed, shape);
        let f = FunctionOnE::real(&values[..model.n()]);
        let exact = mean_semigroup(&model, t, &f).unwrap();
        let spectral = dec.semigroup(t, &f);
        let scale = exact.max_abs().max(1.0);
        prop_assert!(max_diff(&exact, &spectral) < 1e-9 * scale);
    }

    #[test]
    fn coefficients_reconstruct_the_function(
        seed in any::<u64>(),
        shape in 0usize..4,
        values in prop::collection::vec(-1.0f64..1.0, 6),
    ) {
        let (model, dec) = random_model(seed, shape);
        let f = FunctionOnE::real(&values[..model.n()]);
        let back = dec.reconstruct(&dec.coefficients(&f));
        prop_assert!(max_diff(&f, &back) < 1e-10);
    }

    #[test]
    fn complex_blocks_come_in_conjugate_pairs(seed in any::<u64>(), shape in 0usize..4) {
        let (_, dec) = random_model(seed, shape);
        for (k, b) in dec.blocks.iter().enumerate() {
            let p = &dec.blocks[b.conj_partner];
            prop_assert_eq!(p.conj_partner, k);
            prop_assert!((p.lambda - b.lambda.conj()).norm() < 1e-9);
            prop_assert_eq!(&p.chains, &b.chains);
            if b.is_real() {
                prop_assert_eq!(b.conj_partner, k);
            } else {
                for x in 0..dec.n() {
                    for l in 0..b.n_k() {
                        prop_assert!((p.phi[(x, l)] - b.phi[(x, l)].conj()).norm() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn jordan_polynomial_is_a_group(seed in any::<u64>(), shape in 0usize..4, s in -3.0f64..3.0, t in -3.0f64..3.0) {
        let (_, dec) = random_model(seed, shape);
        for b in &dec.blocks {
            let lhs = block_polynomial(b, s) * block_polynomial(b, t);
            let rhs = block_polynomial(b, s + t);
            prop_assert!((lhs - rhs).amax() < 1e-12 * (1.0 + (s.abs() + t.abs()).powi(2)));
        }
    }

    #[test]
    fn leading_pair_is_positive_and_normalized(seed in any::<u64>(), shape in 0usize..4) {
        let (_, dec) = random_model(seed, shape);
        prop_assert!(dec.phi1.iter().all(|v| *v > 0.0));
        prop_assert!(dec.psi1.iter().all(|v| *v > 0.0));
        let norm: f64 = dec.phi1.iter().zip(&dec.m).map(|(p, m)| p * p * m).sum();
        prop_assert!((norm - 1.0).abs() < 1e-10);
        let pair: f64 = (0..dec.n()).map(|x| dec.phi1[x] * dec.psi1[x] * dec.m[x]).sum();
        prop_assert!((pair - 1.0).abs() < 1e-10);
        prop_assert!(dec.blocks.iter().skip(1).all(|b| b.re() > dec.lambda1()));
    }
}

#[test]
fn d_two_times_d_five_is_d_seven() {
    let dec = spectral_decompose(&catalog::build(&catalog::critical_chain()).unwrap()).unwrap();
    let b = &dec.blocks[1];
    assert_eq!(b.chains, vec![2]);
    let diff = block_polynomial(b, 2.0) * block_polynomial(b, 5.0) - block_polynomial(b, 7.0);
    assert!(diff.amax() < 1e-12);
    assert_eq!(block_polynomial(b, 7.0)[(0, 1)], 7.0);
}

#[test]
fn designed_spectra_are_recovered() {
    let dec = spectral_decompose(&catalog::build(&catalog::four_regime()).unwrap()).unwrap();
    let want = [-1.0, -0.5, -0.3, -0.1];
    for (b, w) in dec.blocks.iter().zip(want) {
        assert_relative_eq!(b.lambda.re, w, epsilon = 1e-10);
        assert!(b.lambda.im.abs() < 1e-10);
    }
    let regimes: Vec<Regime> = (0..4).map(|k| dec.block_regime(k)).collect();
    assert_eq!(regimes, [Regime::Large, Regime::Critical, Regime::Small, Regime::Small]);
}

#[test]
fn rotating_pair_orders_positive_imaginary_part_first() {
    let dec = spectral_decompose(&catalog::build(&catalog::rotating_triple(Regime::Small)).unwrap()).unwrap();
    assert_eq!(dec.blocks.len(), 3);
    assert!(dec.blocks[1].lambda.im > 0.0);
    assert!(dec.blocks[2].lambda.im < 0.0);
    let z = dec.blocks[1].lambda + C64::new(0.2, 0.0);
    assert!(z.re.abs() < 1e-10);
}
