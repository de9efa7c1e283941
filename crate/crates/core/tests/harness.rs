//! Verification harness end to end on small ensembles.

use bmp_core::catalog::{self, TWO_STATE_START};
use bmp_core::harness::{
    survival_filter, verify_clt_large, verify_clt_small, verify_joint, verify_lln, RunConfig, SurvivalMode, VerificationReport,
};
use bmp_core::stats::EnsembleStats;
use bmp_core::{spectral_decompose, Error, FunctionOnE, Regime};

#[test]
fn too_few_replicates_are_rejected() {
    let m = catalog::build(&catalog::small_pair()).unwrap();
    let dec = spectral_decompose(&m).unwrap();
    let run = RunConfig::new(&TWO_STATE_START, 1.0, 10, 1);
    let err = verify_clt_small(&m, &dec, &FunctionOnE::real(&[2.0, -1.0]), &run).unwrap_err();
    assert!(matches!(err, Error::TooFewSurvivors { .. }), "{err:?}");
}

#[test]
fn short_horizon_is_rejected() {
    let m = catalog::build(&catalog::large_pair()).unwrap();
    let dec = spectral_decompose(&m).unwrap();
    let run = RunConfig::new(&TWO_STATE_START, 2.0, 200, 1);
    let err = verify_clt_large(&m, &dec, &FunctionOnE::real(&[2.0, -1.0]), 3.0, &run).unwrap_err();
    assert!(matches!(err, Error::HorizonTooShort { .. }));
}

#[test]
fn threshold_filter_drops_small_limits() {
    let w: Vec<f64> = (0..300).map(|i| i as f64 / 100.0).collect();
    let stats = EnsembleStats::new(1.0, vec!["W".into()], vec![w]);
    let kept = survival_filter(stats, "W", SurvivalMode::Threshold { eps: 1.0 }, 100).unwrap();
    assert_eq!(kept.n(), 199);
    let stats = EnsembleStats::new(1.0, vec!["W".into()], vec![vec![0.0; 300]]);
    assert!(survival_filter(stats, "W", SurvivalMode::Threshold { eps: 0.0 }, 100).is_err());
}

#[test]
fn rotating_lln_passes_and_its_control_fails() {
    let m = catalog::build(&catalog::rotating_triple(Regime::Large)).unwrap();
    let dec = spectral_decompose(&m).unwrap();
    let f = FunctionOnE::real(&(0..3).map(|x| dec.blocks[1].phi[(x, 0)].re).collect::<Vec<_>>());
    let run = RunConfig::new(&[1, 1, 1], 6.0, 300, 5);
    let report = verify_lln(&m, &dec, &f, &[2.0, 3.0, 4.0, 5.0, 6.0], &run).unwrap();
    assert!(report.all_pass(), "{}", report.to_markdown());
    assert!(report.claim("lln-no-rotation").is_some());
    let back: VerificationReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn joint_limit_on_four_regimes() {
    let m = catalog::build(&catalog::four_regime()).unwrap();
    let dec = spectral_decompose(&m).unwrap();
    let phi = |k: usize| dec.blocks[k].phi_fn(0);
    let t = 4.0;
    let run = RunConfig::new(&[1, 1, 1, 1], t, 400, 11);
    let t_est = t + run.tol.horizon_margin / dec.lambda1().abs();
    let report = verify_joint(&m, &dec, &phi(0), &phi(1), &phi(3), t_est, &run).unwrap();
    assert_eq!(report.claims.len(), 9, "{}", report.to_markdown());
    assert!(report.all_pass(), "{}", report.to_markdown());
}
