//! Monte Carlo verification of the limit theorems.
//!
//! Every operation simulates a seeded ensemble, reduces each replicate to
//! one or more normalized statistics and compares their empirical moments
//! with predictions from [`crate::moments`]. The outcome is a
//! [`VerificationReport`] of individual pass/fail claims.
//!
//! Moment checks use jackknife standard errors; distribution checks use the
//! Kolmogorov–Smirnov distance; independence checks use `|corr| < k / sqrt(N)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::FunctionOnE;
use crate::linalg::C64;
use crate::model::FiniteModel;
use crate::moments::{beta_cross, rho_cross, sigma_cross};
use crate::profile::{classify_function, SpectralProfile, DEFAULT_COEFF_TOL};
use crate::provenance::hash_json;
use crate::quadrature::QuadratureConfig;
use crate::sim::{block_martingale, observe, observe_real, run_replicates, Ensemble, ParticleSnapshot, SimOptions};
use crate::spectral::{Regime, SpectralDecomposition};
use crate::stats::{self, EnsembleStats};

/// Statistical budget of the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Variance and covariance checks, in standard errors.
    pub se_multiple: f64,
    /// Mean checks, in standard errors.
    pub mean_se_multiple: f64,
    /// Independence checks pass when `|corr| < corr_multiple / sqrt(N)`.
    pub corr_multiple: f64,
    /// KS threshold at 5000 samples; scaled as `1 / sqrt(N)`.
    pub ks_at_5000: f64,
    /// Largest acceptable relative L2 error at the end of an LLN grid.
    pub lln_relative: f64,
    /// `T_est` must exceed `t + horizon_margin / gap`.
    pub horizon_margin: f64,
    pub min_survivors: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            se_multiple: 4.0,
            mean_se_multiple: 3.0,
            corr_multiple: 4.0,
            ks_at_5000: 0.03,
            lln_relative: 0.1,
            horizon_margin: 5.0,
            min_survivors: 100,
        }
    }
}

impl Tolerances {
    pub fn ks_threshold(&self, n: usize) -> f64 {
        self.ks_at_5000 / 0.03 * stats::ks_threshold(n)
    }

    pub fn corr_threshold(&self, n: usize) -> f64 {
        self.corr_multiple / (n as f64).sqrt()
    }
}

/// Which replicates count as surviving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SurvivalMode {
    /// Keep everything; meant for models without extinction.
    #[default]
    None,
    /// Keep replicates whose horizon martingale `W_T` exceeds `eps`.
    Threshold { eps: f64 },
}

/// Everything an ensemble verification needs besides the model and functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Initial occupancy.
    pub nu: Vec<u64>,
    pub t: f64,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub survival: SurvivalMode,
    #[serde(default)]
    pub sim: SimOptions,
    #[serde(default)]
    pub quad: QuadratureConfig,
    #[serde(default)]
    pub tol: Tolerances,
}

impl RunConfig {
    pub fn new(nu: &[u64], t: f64, replicates: usize, seed: u64) -> Self {
        Self {
            nu: nu.to_vec(),
            t,
            replicates,
            seed,
            survival: SurvivalMode::None,
            sim: SimOptions::default(),
            quad: QuadratureConfig::default(),
            tol: Tolerances::default(),
        }
    }
}

/// One verified claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub claim: String,
    pub predicted: f64,
    pub observed: f64,
    pub std_error: Option<f64>,
    /// Test statistic compared against `tolerance`.
    pub distance: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default)]
    pub note: String,
}

impl ClaimRecord {
    /// `|observed - predicted| <= k * se`; the distance is in standard errors.
    pub fn within_se(id: &str, claim: &str, predicted: f64, observed: f64, se: f64, k: f64) -> Self {
        let distance = (observed - predicted).abs() / se;
        Self {
            id: id.into(),
            claim: claim.into(),
            predicted,
            observed,
            std_error: Some(se),
            distance,
            tolerance: k,
            pass: distance <= k,
            note: String::new(),
        }
    }

    /// `distance < threshold`.
    pub fn below(id: &str, claim: &str, distance: f64, threshold: f64) -> Self {
        Self {
            id: id.into(),
            claim: claim.into(),
            predicted: 0.0,
            observed: distance,
            std_error: None,
            distance,
            tolerance: threshold,
            pass: distance < threshold,
            note: String::new(),
        }
    }

    /// A negative control passes when the deliberately wrong check fails.
    pub fn negative_control(id: &str, claim: &str, control: &ClaimRecord) -> Self {
        Self {
            id: id.into(),
            claim: claim.into(),
            pass: !control.pass,
            note: format!("control check: distance {:.4} vs tolerance {}", control.distance, control.tolerance),
            ..control.clone()
        }
    }

    pub fn failed(id: &str, claim: &str, predicted: f64, note: &str) -> Self {
        Self {
            id: id.into(),
            claim: claim.into(),
            predicted,
            observed: f64::NAN,
            std_error: None,
            distance: f64::NAN,
            tolerance: f64::NAN,
            pass: false,
            note: note.into(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// Sample variance against a prediction, jackknife standard error.
pub fn variance_claim(id: &str, claim: &str, samples: &[f64], predicted: f64, k: f64) -> ClaimRecord {
    let se = stats::jackknife_se_variance(samples);
    ClaimRecord::within_se(id, claim, predicted, stats::variance(samples), se, k)
}

pub fn covariance_claim(id: &str, claim: &str, a: &[f64], b: &[f64], predicted: f64, k: f64) -> ClaimRecord {
    let se = stats::jackknife_se_covariance(a, b);
    ClaimRecord::within_se(id, claim, predicted, stats::covariance(a, b), se, k)
}

pub fn mean_claim(id: &str, claim: &str, samples: &[f64], predicted: f64, k: f64) -> ClaimRecord {
    ClaimRecord::within_se(id, claim, predicted, stats::mean(samples), stats::std_error_of_mean(samples), k)
}

pub fn correlation_claim(id: &str, claim: &str, a: &[f64], b: &[f64], tol: &Tolerances) -> ClaimRecord {
    let r = stats::correlation(a, b);
    let mut c = ClaimRecord::below(id, claim, r.abs(), tol.corr_threshold(a.len()));
    c.observed = r;
    c
}

/// KS distance to `Normal(0, predicted)`; a non-positive prediction is
/// reported as a failed claim rather than an error.
pub fn ks_claim(id: &str, claim: &str, samples: &[f64], predicted: f64, tol: &Tolerances) -> ClaimRecord {
    match stats::ks_distance(samples, predicted) {
        Ok(d) => {
            let mut c = ClaimRecord::below(id, claim, d, tol.ks_threshold(samples.len()));
            c.predicted = predicted;
            c
        }
        Err(e) => ClaimRecord::failed(id, claim, predicted, &format!("degenerate prediction: {e}")),
    }
}

/// Outcome of one verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub suite: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub replicates: usize,
    pub retained: usize,
    pub claims: Vec<ClaimRecord>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn new(suite: &str, config_hash: String, master_seed: u64, replicates: usize) -> Self {
        Self {
            suite: suite.into(),
            config_hash,
            master_seed,
            replicates,
            retained: replicates,
            claims: vec![],
            notes: vec![],
        }
    }

    pub fn all_pass(&self) -> bool {
        !self.claims.is_empty() && self.claims.iter().all(|c| c.pass)
    }

    pub fn claim(&self, id: &str) -> Option<&ClaimRecord> {
        self.claims.iter().find(|c| c.id == id)
    }

    /// Append another report's claims, prefixing their ids with its suite.
    pub fn absorb(&mut self, other: VerificationReport) {
        for mut c in other.claims {
            c.id = format!("{}/{}", other.suite, c.id);
            self.claims.push(c);
        }
        self.notes.extend(other.notes.into_iter().map(|n| format!("{}: {n}", other.suite)));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "# Verification report: {}\n\n- config hash: `{}`\n- master seed: {}\n- replicates: {} ({} retained)\n- result: **{}**\n\n",
            self.suite,
            self.config_hash,
            self.master_seed,
            self.replicates,
            self.retained,
            if self.all_pass() { "PASS" } else { "FAIL" }
        );
        s.push_str("| id | claim | predicted | observed | std. error | distance | tolerance | result |\n");
        s.push_str("|---|---|---|---|---|---|---|---|\n");
        for c in &self.claims {
            s.push_str(&format!(
                "| {} | {} | {:.6} | {:.6} | {} | {:.4} | {} | {} |\n",
                c.id,
                c.claim,
                c.predicted,
                c.observed,
                c.std_error.map_or("-".into(), |e| format!("{e:.3e}")),
                c.distance,
                c.tolerance,
                if c.pass { "pass" } else { "FAIL" }
            ));
        }
        let notes: Vec<String> = self
            .claims
            .iter()
            .filter(|c| !c.note.is_empty())
            .map(|c| format!("- {}: {}", c.id, c.note))
            .chain(self.notes.iter().map(|n| format!("- {n}")))
            .collect();
        if !notes.is_empty() {
            s.push_str("\n## Notes\n\n");
            s.push_str(&notes.join("\n"));
            s.push('\n');
        }
        s
    }
}

fn header<E: Serialize>(suite: &str, model: &FiniteModel, run: &RunConfig, extra: &E) -> VerificationReport {
    let hash = hash_json(&(model.config(), run, extra));
    VerificationReport::new(suite, hash, run.seed, run.replicates)
}

fn ensemble(model: &FiniteModel, run: &RunConfig, checkpoints: &[f64]) -> Result<Ensemble> {
    if run.nu.len() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "initial occupancy has {} entries, model has {} states",
            run.nu.len(),
            model.n()
        )));
    }
    if !(run.t > 0.0) {
        return Err(Error::InvalidArgument(format!("verification time {} must be positive", run.t)));
    }
    run_replicates(model, &run.nu, checkpoints, run.replicates, run.seed, &run.sim)
}

fn real_values(f: &FunctionOnE, what: &str) -> Result<Vec<f64>> {
    f.realify(1e-12 * f.max_abs().max(1.0))
        .ok_or_else(|| Error::InvalidArgument(format!("{what} must be real-valued")))
}

/// `<f, X> / sqrt(<phi_1, X>)`, zero on extinct replicates.
fn normalized(snap: &ParticleSnapshot, f: &[f64], phi1: &[f64], extra: f64) -> f64 {
    let pop = observe_real(snap, phi1);
    if pop <= 0.0 {
        return 0.0;
    }
    observe_real(snap, f) / (extra * pop).sqrt()
}

/// `W = e^{lambda_1 t} <phi_1, X_t>`.
fn w_of(decomp: &SpectralDecomposition, snap: &ParticleSnapshot) -> f64 {
    (decomp.lambda1() * snap.time()).exp() * observe_real(snap, &decomp.phi1)
}

/// Apply the survival conditioning using the column named `w`.
pub fn survival_filter(stats: EnsembleStats, w: &str, mode: SurvivalMode, min_survivors: usize) -> Result<EnsembleStats> {
    let ws = stats
        .names
        .iter()
        .position(|n| n == w)
        .map(|i| stats.columns[i].clone())
        .ok_or_else(|| Error::InvalidArgument(format!("no column named {w}")))?;
    let mask: Vec<bool> = match mode {
        SurvivalMode::None => vec![true; ws.len()],
        SurvivalMode::Threshold { eps } => ws.iter().map(|v| *v > eps).collect(),
    };
    let retained = mask.iter().filter(|m| **m).count();
    if retained < min_survivors {
        return Err(Error::TooFewSurvivors {
            retained,
            required: min_survivors,
        });
    }
    Ok(stats.with_mask(mask))
}

fn filtered(t: f64, names: &[&str], columns: Vec<Vec<f64>>, run: &RunConfig, report: &mut VerificationReport) -> Result<EnsembleStats> {
    let s = EnsembleStats::new(t, names.iter().map(|n| n.to_string()).collect(), columns);
    let s = survival_filter(s, "W", run.survival, run.tol.min_survivors)?;
    report.retained = s.n();
    if let SurvivalMode::Threshold { eps } = run.survival {
        report.notes.push(format!(
            "survival threshold W > {eps}: retained fraction {:.4}",
            s.n() as f64 / run.replicates as f64
        ));
    }
    Ok(s)
}

fn col(s: &EnsembleStats, name: &str) -> Vec<f64> {
    s.samples(name).expect("column exists")
}

fn require(p: &SpectralProfile, decomp: &SpectralDecomposition, want: Regime, what: &str) -> Result<()> {
    if p.is_zero() {
        return Err(Error::DegenerateVariance(format!("{what} is zero")));
    }
    for j in p.support() {
        if decomp.block_regime(j) != want {
            return Err(Error::WrongRegime(format!(
                "{what} has a component on block {} which is {:?}, not {want:?}",
                j + 1,
                decomp.block_regime(j)
            )));
        }
    }
    Ok(())
}

/// Gap `lambda_1 - 2 max Re lambda_k` over the blocks `g` touches.
fn large_gap(decomp: &SpectralDecomposition, p: &SpectralProfile) -> f64 {
    let max_re = p
        .support()
        .iter()
        .map(|&j| decomp.blocks[j].re())
        .fold(f64::NEG_INFINITY, f64::max);
    decomp.lambda1() - 2.0 * max_re
}

fn check_horizon(decomp: &SpectralDecomposition, p: &SpectralProfile, t: f64, t_est: f64, margin: f64) -> Result<()> {
    let required = t + margin / large_gap(decomp, p);
    if t_est < required {
        return Err(Error::HorizonTooShort { t_est, required });
    }
    Ok(())
}

/// `E_t(g)` with `H_infinity` replaced by `H_T` read from `horizon`.
fn centering(decomp: &SpectralDecomposition, p: &SpectralProfile, horizon: &ParticleSnapshot, t: f64) -> f64 {
    let mut total = C64::new(0.0, 0.0);
    for j in p.support() {
        let b = &decomp.blocks[j];
        let h = block_martingale(decomp, j, horizon);
        let d = b.d(t);
        let e = (-b.lambda * t).exp();
        for (c, hc) in h.iter().enumerate() {
            let v: C64 = (0..b.n_k()).map(|l| d[(c, l)] * p.coeffs[j][l]).sum();
            total += e * hc * v;
        }
    }
    total.re
}

/// `(<g, X_t> - E_t(g)) / sqrt(<phi_1, X_t>)` with `H` read at `horizon`.
fn large_statistic(
    decomp: &SpectralDecomposition,
    p: &SpectralProfile,
    g: &[f64],
    at_t: &ParticleSnapshot,
    horizon: &ParticleSnapshot,
) -> f64 {
    let pop = observe_real(at_t, &decomp.phi1);
    if pop <= 0.0 {
        return 0.0;
    }
    (observe_real(at_t, g) - centering(decomp, p, horizon, at_t.time())) / pop.sqrt()
}

fn critical_scale(t: f64, tau: usize) -> f64 {
    t.powi(1 + 2 * tau as i32)
}

/// Law of large numbers for `f` whose leading blocks are in the large
/// regime: the relative L2 distance between `t^{-tau} e^{Re t} <f, X_t>`
/// and its rotating martingale limit, with `H` read at the last grid time.
///
/// When the leading blocks are complex, the same distance without the
/// rotation factor is reported as a negative control that must fail.
pub fn verify_lln(
    model: &FiniteModel,
    decomp: &SpectralDecomposition,
    f: &FunctionOnE,
    t_grid: &[f64],
    run: &RunConfig,
) -> Result<VerificationReport> {
    let p = classify_function(decomp, f, DEFAULT_COEFF_TOL);
    let (Some(gamma), Some(_)) = (p.gamma, p.zeta) else {
        return Err(Error::DegenerateVariance("f is zero".into()));
    };
    if p.regime != Regime::Large {
        return Err(Error::WrongRegime(format!(
            "the LLN check needs lambda_1 > 2 Re lambda_gamma, f starts in the {:?} regime",
            p.regime
        )));
    }
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return Err(Error::InvalidCheckpoint("LLN grid needs at least two increasing positive times".into()));
    }
    let mut report = header("lln", model, run, &(f, t_grid));
    let ens = ensemble(model, run, t_grid)?;
    let last = t_grid.len() - 1;
    let re = decomp.blocks[gamma].re();
    let rotates = p.f_limits.iter().any(|(j, _)| decomp.blocks[*j].im() != 0.0);
    let mut rows: Vec<(f64, f64, f64, f64)> = Vec::new();
    for (c, &t) in t_grid[..last].iter().enumerate() {
        let (mut err, mut err_fixed, mut lim) = (vec![], vec![], vec![]);
        for rep in &ens.replicates {
            let horizon = &rep[last];
            let scaled = (re * t).exp() / t.powi(p.tau as i32) * observe(&rep[c], f);
            let mut rotating = C64::new(0.0, 0.0);
            let mut fixed = C64::new(0.0, 0.0);
            for (j, fl) in &p.f_limits {
                let h = block_martingale(decomp, *j, horizon);
                let hf: C64 = h.iter().zip(fl).map(|(a, b)| a * b).sum();
                rotating += C64::new(0.0, -decomp.blocks[*j].im() * t).exp() * hf;
                fixed += hf;
            }
            err.push((scaled - rotating).norm_sqr());
            err_fixed.push((scaled - fixed).norm_sqr());
            lim.push(rotating.norm_sqr());
        }
        let scale = stats::mean(&lim);
        let se = stats::std_error_of_mean(&err) / scale;
        rows.push((t, stats::mean(&err) / scale, se, stats::mean(&err_fixed) / scale));
    }
    report.notes.push(format!(
        "relative L2 error by time: {}",
        rows.iter()
            .map(|(t, e, se, _)| format!("t={t:.3}: {e:.4e} ± {se:.1e}"))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    // worst increase between consecutive grid points, in combined standard errors
    let mut worst = f64::NEG_INFINITY;
    for w in rows.windows(2) {
        let rise = (w[1].1 - w[0].1) / (w[0].2 * w[0].2 + w[1].2 * w[1].2).sqrt().max(f64::MIN_POSITIVE);
        worst = worst.max(rise);
    }
    if rows.len() >= 2 {
        report.claims.push(
            ClaimRecord::below("lln-monotone", "L2 error is non-increasing along the grid", worst, 2.0)
                .with_note("distance is the largest rise between consecutive times, in standard errors"),
        );
    }
    let (t_end, err_end, se_end, fixed_end) = *rows.last().expect("grid has two points");
    let mut terminal = ClaimRecord::below(
        "lln-terminal",
        "relative L2 error at the last grid time before the horizon",
        err_end,
        run.tol.lln_relative,
    );
    terminal.std_error = Some(se_end);
    terminal.note = format!("t = {t_end}");
    report.claims.push(terminal);
    if rotates {
        let control = ClaimRecord::below("", "", fixed_end, run.tol.lln_relative);
        report.claims.push(ClaimRecord::negative_control(
            "lln-no-rotation",
            "dropping the rotation factor breaks convergence",
            &control,
        ));
    } else {
        report.notes.push("leading blocks are real; rotation control not applicable".into());
    }
    Ok(report)
}

/// Central limit theorem for `f` in the small regime:
/// `<f, X_t> / sqrt(<phi_1, X_t>)` against `Normal(0, sigma_f^2)`.
pub fn verify_clt_small(
    model: &FiniteModel,
    decomp: &SpectralDecomposition,
    f: &FunctionOnE,
    run: &RunConfig,
) -> Result<VerificationReport> {
    let p = classify_function(decomp, f, DEFAULT_COEFF_TOL);
    require(&p, decomp, Regime::Small, "f")?;
    let fv = real_values(f, "f")?;
    let predicted = sigma_cross(decomp, model, f, f, &run.quad)?.value;
    let mut report = header("clt-small", model, run, f);
    let ens = ensemble(model, run, &[run.t])?;
    let (mut g1, mut w) = (vec![], vec![]);
    for snap in ens.at(0) {
        g1.push(normalized(snap, &fv, &decomp.phi1, 1.0));
        w.push(w_of(decomp, snap));
    }
    let s = filtered(run.t, &["G1", "W"], vec![g1, w], run, &mut report)?;
    let (g1, w) = (col(&s, "G1"), col(&s, "W"));
    let tol = &run.tol;
    report.claims.push(variance_claim("variance", "Var G1 = sigma_f^2", &g1, predicted, tol.se_multiple));
    report.claims.push(ks_claim("ks", "G1 ~ Normal(0, sigma_f^2)", &g1, predicted, tol));
    report.claims.push(correlation_claim("independence", "G1 uncorrelated with W_t", &g1, &w, tol));
    Ok(report)
}

/// Central limit theorem for `h` in the critical regime:
/// `<h, X_t> / sqrt(t^{1 + 2 tau} <phi_1, X_t>)` against `Normal(0, rho_h^2)`.
/// The same statistic without the power of `t` is a negative control.
pub fn verify_clt_critical(
    model: &FiniteModel,
    decomp: &SpectralDecomposition,
    h: &FunctionOnE,
    run: &RunConfig,
) -> Result<VerificationReport> {
    let p = classify_function(decomp, h, DEFAULT_COEFF_TOL);
    require(&p, decomp, Regime::Critical, "h")?;
    let hv = real_values(h, "h")?;
    let predicted = rho_cross(decomp, model, h, h)?;
    let mut report = header("clt-critical", model, run, h);
    let ens = ensemble(model, run, &[run.t])?;
    let scale = critical_scale(run.t, p.tau);
    let (mut g2, mut raw, mut w) = (vec![], vec![], vec![]);
    for snap in ens.at(0) {
        g2.push(normalized(snap, &hv, &decomp.phi1, scale));
        raw.push(normalized(snap, &hv, &decomp.phi1, 1.0));
        w.push(w_of(decomp, snap));
    }
    let s = filtered(run.t, &["G2", "raw", "W"], vec![g2, raw, w], run, &mut report)?;
    let (g2, raw, w) = (col(&s, "G2"), col(&s, "raw"), col(&s, "W"));
    let tol = &run.tol;
    report.claims.push(variance_claim("variance", "Var G2 = rho_h^2", &g2, predicted, tol.se_multiple));
    report.claims.push(ks_claim("ks", "G2 ~ Normal(0, rho_h^2)", &g2, predicted, tol));
    report.claims.push(correlation_claim("independence", "G2 uncorrelated with W_t", &g2, &w, tol));
    let control = variance_claim("", "", &raw, predicted, tol.se_multiple);
    report.claims.push(ClaimRecord::negative_control(
        "no-time-factor",
        "omitting the power of t must fail the variance check",
        &control,
    ));
    Ok(report)
}

/// Central limit theorem for `g` in the large regime:
/// `(<g, X_t> - E_t(g)) / sqrt(<phi_1, X_t>)` against `Normal(0, beta_g^2)`,
/// with `H_infinity` replaced by `H_{T_est}` from the same trajectory. The
/// proxy bias is measured by repeating with `2 T_est`.
pub fn verify_clt_large(
    model: &FiniteModel,
    decomp: &SpectralDecomposition,
    g: &FunctionOnE,
    t_est: f64,
    run: &RunConfig,
) -> Result<VerificationReport> {
    let p = classify_function(decomp, g, DEFAULT_COEFF_TOL);
    require(&p, decomp, Regime::Large, "g")?;
    let gv = real_values(g, "g")?;
    check_horizon(decomp, &p, run.t, t_est, run.tol.horizon_margin)?;
    let predicted = beta_cross(decomp, model, g, g, &run.quad)?.value;
    let mut report = header("clt-large", model, run, &(g, t_est));
    let ens = ensemble(model, run, &[run.t, t_est, 2.0 * t_est])?;
    let (mut g3, mut g3_long, mut w) = (vec![], vec![], vec![]);
    for rep in &ens.replicates {
        g3.push(large_statistic(decomp, &p, &gv, &rep[0], &rep[1]));
        g3_long.push(large_statistic(decomp, &p, &gv, &rep[0], &rep[2]));
        w.push(w_of(decomp, &rep[2]));
    }
    let s = filtered(run.t, &["G3", "G3_long", "W"], vec![g3, g3_long, w], run, &mut report)?;
    let (g3, g3_long) = (col(&s, "G3"), col(&s, "G3_long"));
    let tol = &run.tol;
    let var = variance_claim("variance", "Var G3 = beta_g^2", &g3, predicted, tol.se_multiple);
    let se = var.std_error.unwrap_or(f64::NAN);
    if !(predicted > 0.0) {
        report.notes.push(format!("degenerate prediction beta_g^2 = {predicted}"));
    }
    report.claims.push(var);
    report.claims.push(ks_claim("ks", "G3 ~ Normal(0, beta_g^2)", &g3, predicted, tol));
    let shift = (stats::variance(&g3_long) - stats::variance(&g3)).abs() / se;
    report.claims.push(
        ClaimRecord::below("proxy-bias", "doubling T_est moves Var G3 by under one standard error", shift, 1.0)
            .with_note(format!("T_est = {t_est}, doubled to {}", 2.0 * t_est)),
    );
    Ok(report)
}

/// Joint limit: `W*`, `G3(g)`, `G2(h)` and `G1(f)` are pairwise
/// uncorrelated and each Gaussian component has its predicted variance.
/// `W*` is read at `T_est`.
#[allow(clippy::too_many_arguments)]
pub fn verify_joint(
    model: &FiniteModel,
    decomp: &SpectralDecomposition,
    g: &FunctionOnE,
    h: &FunctionOnE,
    f: &FunctionOnE,
    t_est: f64,
    run: &RunConfig,
) -> Result<VerificationReport> {
    let pg = classify_function(decomp, g, DEFAULT_COEFF_TOL);
    let ph = classify_function(decomp, h, DEFAULT_COEFF_TOL);
    let pf = classify_function(decomp, f, DEFAULT_COEFF_TOL);
    require(&pg, decomp, Regime::Large, "g")?;
    require(&ph, decomp, Regime::Critical, "h")?;
    require(&pf, decomp, Regime::Small, "f")?;
    check_horizon(decomp, &pg, run.t, t_est, run.tol.horizon_margin)?;
    let (gv, hv, fv) = (real_values(g, "g")?, real_values(h, "h")?, real_values(f, "f")?);
    let pred = [
        beta_cross(decomp, model, g, g, &run.quad)?.value,
        rho_cross(decomp, model, h, h)?,
        sigma_cross(decomp, model, f, f, &run.quad)?.value,
    ];
    let mut report = header("joint", model, run, &(g, h, f, t_est));
    let ens = ensemble(model, run, &[run.t, t_est])?;
    let scale = critical_scale(run.t, ph.tau);
    let mut cols = vec![vec![]; 4];
    for rep in &ens.replicates {
        cols[0].push(large_statistic(decomp, &pg, &gv, &rep[0], &rep[1]));
        cols[1].push(normalized(&rep[0], &hv, &decomp.phi1, scale));
        cols[2].push(normalized(&rep[0], &fv, &decomp.phi1, 1.0));
        cols[3].push(w_of(decomp, &rep[1]));
    }
    let names = ["G3", "G2", "G1", "W"];
    let s = filtered(run.t, &names, cols, run, &mut report)?;
    let tol = &run.tol;
    let labels = ["beta_g^2", "rho_h^2", "sigma_f^2"];
    for i in 0..3 {
        report.claims.push(variance_claim(
            &format!("variance-{}", names[i]),
            &format!("Var {} = {}", names[i], labels[i]),
            &col(&s, names[i]),
            pred[i],
            tol.se_multiple,
        ));
    }
    for i in 0..4 {
        for j in i + 1..4 {
            report.claims.push(correlation_claim(
                &format!("independence-{}-{}", names[i], names[j]),
                &format!("{} uncorrelated with {}", names[i], names[j]),
                &col(&s, names[i]),
                &col(&s, names[j]),
                tol,
            ));
        }
    }
    Ok(report)
}

/// Which limit a pair of functions is tested under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRegime {
    Small,
    Critical,
    /// Large regime with `H` read at the given horizon.
    Large,
}

/// Covariance structure: the empirical covariance of the normalized
/// statistics of `a` and `b` against `sigma(a, b)`, `rho(a, b)` or
/// `beta(a, b)`. When the prediction vanishes the pair must also be
/// uncorrelated. `t_est` is only used in the large regime.
pub fn verify_pair(
    model: &FiniteModel,
    decomp: &SpectralDecomposition,
    regime: PairRegime,
    a: &FunctionOnE,
    b: &FunctionOnE,
    t_est: f64,
    run: &RunConfig,
) -> Result<VerificationReport> {
    let pa = classify_function(decomp, a, DEFAULT_COEFF_TOL);
    let pb = classify_function(decomp, b, DEFAULT_COEFF_TOL);
    let want = match regime {
        PairRegime::Small => Regime::Small,
        PairRegime::Critical => Regime::Critical,
        PairRegime::Large => Regime::Large,
    };
    require(&pa, decomp, want, "first function")?;
    require(&pb, decomp, want, "second function")?;
    let (av, bv) = (real_values(a, "first function")?, real_values(b, "second function")?);
    let (predicted, va, vb) = match regime {
        PairRegime::Small => (
            sigma_cross(decomp, model, a, b, &run.quad)?.value,
            sigma_cross(decomp, model, a, a, &run.quad)?.value,
            sigma_cross(decomp, model, b, b, &run.quad)?.value,
        ),
        PairRegime::Critical => (
            rho_cross(decomp, model, a, b)?,
            rho_cross(decomp, model, a, a)?,
            rho_cross(decomp, model, b, b)?,
        ),
        PairRegime::Large => {
            check_horizon(decomp, &pa, run.t, t_est, run.tol.horizon_margin)?;
            check_horizon(decomp, &pb, run.t, t_est, run.tol.horizon_margin)?;
            (
                beta_cross(decomp, model, a, b, &run.quad)?.value,
                beta_cross(decomp, model, a, a, &run.quad)?.value,
                beta_cross(decomp, model, b, b, &run.quad)?.value,
            )
        }
    };
    let suite = match regime {
        PairRegime::Small => "pair-small",
        PairRegime::Critical => "pair-critical",
        PairRegime::Large => "pair-large",
    };
    let mut report = header(suite, model, run, &(regime, a, b, t_est));
    let checkpoints: Vec<f64> = if regime == PairRegime::Large { vec![run.t, t_est] } else { vec![run.t] };
    let ens = ensemble(model, run, &checkpoints)?;
    let mut cols = vec![vec![]; 3];
    for rep in &ens.replicates {
        let (x, y) = match regime {
            PairRegime::Small => (
                normalized(&rep[0], &av, &decomp.phi1, 1.0),
                normalized(&rep[0], &bv, &decomp.phi1, 1.0),
            ),
            PairRegime::Critical => (
                normalized(&rep[0], &av, &decomp.phi1, critical_scale(run.t, pa.tau)),
                normalized(&rep[0], &bv, &decomp.phi1, critical_scale(run.t, pb.tau)),
            ),
            PairRegime::Large => (
                large_statistic(decomp, &pa, &av, &rep[0], &rep[1]),
                large_statistic(decomp, &pb, &bv, &rep[0], &rep[1]),
            ),
        };
        cols[0].push(x);
        cols[1].push(y);
        cols[2].push(w_of(decomp, rep.last().expect("one checkpoint")));
    }
    let s = filtered(run.t, &["A", "B", "W"], cols, run, &mut report)?;
    let (x, y) = (col(&s, "A"), col(&s, "B"));
    let tol = &run.tol;
    report.claims.push(covariance_claim("covariance", "Cov(A, B) matches the predicted cross term", &x, &y, predicted, tol.se_multiple));
    report.claims.push(variance_claim("variance-A", "Var A matches its limit", &x, va, tol.se_multiple));
    report.claims.push(variance_claim("variance-B", "Var B matches its limit", &y, vb, tol.se_multiple));
    let scale = (va * vb).sqrt();
    if predicted.abs() <= 1e-9 * scale.max(f64::MIN_POSITIVE) {
        report.claims.push(correlation_claim("orthogonal", "a pair with zero cross term is uncorrelated", &x, &y, tol));
    }
    Ok(report)
}

/// Ensemble means of `W_t` and of every block martingale against their
/// exact values `<phi_1, nu>` and `<Phi_k, nu>`.
pub fn verify_martingale_means(
    model: &FiniteModel,
    decomp: &SpectralDecomposition,
    run: &RunConfig,
) -> Result<VerificationReport> {
    let mut report = header("martingale-means", model, run, &"means");
    let ens = ensemble(model, run, &[run.t])?;
    let k = run.tol.mean_se_multiple;
    let w: Vec<f64> = ens.at(0).map(|s| w_of(decomp, s)).collect();
    let start = ParticleSnapshot::new(0.0, run.nu.clone(), 0);
    let w0 = observe_real(&start, &decomp.phi1);
    report.claims.push(mean_claim("W", "E W_t = <phi_1, nu>", &w, w0, k));
    for (j, b) in decomp.blocks.iter().enumerate().skip(1) {
        // a conjugate partner carries the same information
        if b.conj_partner < j {
            continue;
        }
        let h0 = block_martingale(decomp, j, &start);
        let samples: Vec<Vec<C64>> = ens.at(0).map(|s| block_martingale(decomp, j, s)).collect();
        for l in 0..b.n_k() {
            let parts: [(&str, Part); 2] = [("re", |z| z.re), ("im", |z| z.im)];
            for (part, get) in parts {
                if part == "im" && b.is_real() {
                    continue;
                }
                let xs: Vec<f64> = samples.iter().map(|v| get(&v[l])).collect();
                report.claims.push(mean_claim(
                    &format!("H{}[{l}].{part}", j + 1),
                    &format!("E H_t^({}) e_{l} = Phi_{}(nu) e_{l}", j + 1, j + 1),
                    &xs,
                    get(&h0[l]),
                    k,
                ));
            }
        }
    }
    Ok(report)
}

type Part = fn(&C64) -> f64;

/// The statistical checks, each run on synthetic data drawn from its null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullCheck {
    Variance,
    Covariance,
    Mean,
    Ks,
    Correlation,
}

impl NullCheck {
    pub const ALL: [NullCheck; 5] = [
        NullCheck::Variance,
        NullCheck::Covariance,
        NullCheck::Mean,
        NullCheck::Ks,
        NullCheck::Correlation,
    ];
}

/// Number of `runs` seeded null data sets of size `n` that `check` accepts.
pub fn null_calibration(check: NullCheck, n: usize, runs: usize, seed: u64, tol: &Tolerances) -> usize {
    let (var, rho) = (2.5f64, 0.6f64);
    (0..runs)
        .filter(|&r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
            let z1: Vec<f64> = (0..n).map(|_| normal()).collect();
            let z2: Vec<f64> = (0..n).map(|_| normal()).collect();
            let x: Vec<f64> = z1.iter().map(|z| var.sqrt() * z).collect();
            match check {
                NullCheck::Variance => variance_claim("", "", &x, var, tol.se_multiple).pass,
                NullCheck::Covariance => {
                    let y: Vec<f64> = z1
                        .iter()
                        .zip(&z2)
                        .map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b)
                        .collect();
                    covariance_claim("", "", &x, &y, var.sqrt() * rho, tol.se_multiple).pass
                }
                NullCheck::Mean => {
                    let shifted: Vec<f64> = x.iter().map(|v| v + 1.5).collect();
                    mean_claim("", "", &shifted, 1.5, tol.mean_se_multiple).pass
                }
                NullCheck::Ks => ks_claim("", "", &x, var, tol).pass,
                NullCheck::Correlation => correlation_claim("", "", &x, &z2, tol).pass,
            }
        })
        .count()
}
