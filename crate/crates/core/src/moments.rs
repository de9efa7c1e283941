//! Exact moments and limit variances.
//!
//! Second moments solve the forward system
//!
//! ```text
//! u' = L u,              u(0) = f
//! V' = L V + A |u|^2,    V(0) = |f|^2
//! ```
//!
//! whose solution `V(t)(x)` equals `E_x |<f, X_t>|^2`. The limit variances
//! are half-line integrals evaluated by [`integrate_half_line`] with the
//! decay rate read off the spectrum, and the log-Laplace equation provides
//! an independent route to the first two moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::FunctionOnE;
use crate::linalg::{expm, C64};
use crate::model::FiniteModel;
use crate::ode::{integrate, OdeOptions};
use crate::profile::{classify_function, SpectralProfile, DEFAULT_COEFF_TOL};
use crate::quadrature::{integrate_finite, integrate_half_line, Estimate, QuadratureConfig};
use crate::spectral::{check_len, check_time, mat_vec, Regime, SpectralDecomposition};

/// Absolute tolerance tied to the size of the initial data: errors made
/// early are amplified by the semigroup exactly like the solution itself.
fn ode_opts(y0: &[f64]) -> OdeOptions {
    let scale = y0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    OdeOptions {
        rtol: 1e-12,
        atol: 1e-13 * scale.max(1e-300),
        max_steps: 2_000_000,
    }
}

fn check_nu(model: &FiniteModel, nu: &[u64]) -> Result<()> {
    if nu.len() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "configuration has {} entries, model has {} states",
            nu.len(),
            model.n()
        )));
    }
    Ok(())
}

fn check_state(model: &FiniteModel, x: usize) -> Result<()> {
    if x >= model.n() {
        return Err(Error::InvalidArgument(format!(
            "state index {x} out of range for {} states",
            model.n()
        )));
    }
    Ok(())
}

/// `E_nu <f, X_t> = <T_t f, nu>`.
pub fn first_moment(model: &FiniteModel, nu: &[u64], f: &FunctionOnE, t: f64) -> Result<C64> {
    check_nu(model, nu)?;
    let tf = crate::spectral::mean_semigroup(model, t, f)?;
    Ok(nu.iter().zip(tf.values()).map(|(k, v)| v * *k as f64).sum())
}

/// `(T_t f, T_t h, Re E_x[<f, X_t> conj <h, X_t>])` for every start state.
fn cross_second_all(
    model: &FiniteModel,
    f: &FunctionOnE,
    h: &FunctionOnE,
    t: f64,
) -> Result<(Vec<C64>, Vec<C64>, Vec<f64>)> {
    check_time(t)?;
    check_len(model, f)?;
    check_len(model, h)?;
    let n = model.n();
    // layout: [Re u_f, Im u_f, Re u_h, Im u_h, V]
    let mut y = vec![0.0; 5 * n];
    for x in 0..n {
        y[x] = f[x].re;
        y[n + x] = f[x].im;
        y[2 * n + x] = h[x].re;
        y[3 * n + x] = h[x].im;
        y[4 * n + x] = (f[x] * h[x].conj()).re;
    }
    let l = &model.l;
    let a = &model.a;
    let opts = ode_opts(&y);
    integrate(
        |_, y, dy| {
            for x in 0..n {
                for c in 0..5 {
                    dy[c * n + x] = (0..n).map(|z| l[(x, z)] * y[c * n + z]).sum();
                }
                let prod = y[x] * y[2 * n + x] + y[n + x] * y[3 * n + x];
                dy[4 * n + x] += a[x] * prod;
            }
        },
        0.0,
        t,
        &mut y,
        &opts,
    )?;
    let tf = (0..n).map(|x| C64::new(y[x], y[n + x])).collect();
    let th = (0..n).map(|x| C64::new(y[2 * n + x], y[3 * n + x])).collect();
    Ok((tf, th, y[4 * n..].to_vec()))
}

/// `E_x |<f, X_t>|^2` for every start state `x`.
pub fn second_moment_all(model: &FiniteModel, f: &FunctionOnE, t: f64) -> Result<Vec<f64>> {
    Ok(cross_second_all(model, f, f, t)?.2)
}

/// `E_x |<f, X_t>|^2`.
pub fn second_moment(model: &FiniteModel, x: usize, f: &FunctionOnE, t: f64) -> Result<f64> {
    check_state(model, x)?;
    Ok(second_moment_all(model, f, t)?[x])
}

/// `Cov_x(<f, X_t>, <h, X_t>)` for real `f`, `h` (real part of the
/// Hermitian covariance for complex ones).
pub fn covariance(model: &FiniteModel, x: usize, f: &FunctionOnE, h: &FunctionOnE, t: f64) -> Result<f64> {
    check_state(model, x)?;
    let (tf, th, v) = cross_second_all(model, f, h, t)?;
    Ok(v[x] - (tf[x] * th[x].conj()).re)
}

/// `Var_nu <f, X_t>` (sum of squared moduli for complex `f`) for an initial
/// configuration of independent particles.
pub fn variance(model: &FiniteModel, nu: &[u64], f: &FunctionOnE, t: f64) -> Result<f64> {
    covariance_nu(model, nu, f, f, t)
}

pub fn covariance_nu(model: &FiniteModel, nu: &[u64], f: &FunctionOnE, h: &FunctionOnE, t: f64) -> Result<f64> {
    check_nu(model, nu)?;
    let (tf, th, v) = cross_second_all(model, f, h, t)?;
    Ok((0..model.n())
        .map(|x| nu[x] as f64 * (v[x] - (tf[x] * th[x].conj()).re))
        .sum())
}

/// The same second moment by direct quadrature of
/// `T_t |f|^2 + int_0^t T_s [A |T_{t-s} f|^2] ds`, one matrix exponential
/// per node. Slow; kept as an independent cross-check.
pub fn second_moment_quadrature(model: &FiniteModel, x: usize, f: &FunctionOnE, t: f64, tol: f64) -> Result<Estimate> {
    check_time(t)?;
    check_len(model, f)?;
    check_state(model, x)?;
    let n = model.n();
    let row = |s: f64| -> Vec<f64> {
        let e = expm(&(&model.l * s));
        (0..n).map(|y| e[(x, y)]).collect()
    };
    let abs_sq = FunctionOnE::real(&f.abs_sq());
    let head: f64 = row(t).iter().zip(abs_sq.values()).map(|(p, v)| p * v.re).sum();
    let mut integrand = |s: f64| -> f64 {
        let inner = crate::linalg::expm_apply(&model.l, t - s, f.values());
        let r = row(s);
        (0..n).map(|y| r[y] * model.a[y] * inner[y].norm_sqr()).sum()
    };
    let est = integrate_finite(&mut integrand, 0.0, t, tol);
    Ok(Estimate {
        value: head + est.value,
        error_budget: est.error_budget,
    })
}

/// Spectral evolution `sum_j exp(-lambda_j s) Phi_j^T D_j(s) b_j`; negative
/// `s` gives the unwinding `I_{-s}`.
fn evolve(decomp: &SpectralDecomposition, coeffs: &[Vec<C64>], s: f64) -> Vec<C64> {
    let n = decomp.n();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for (b, c) in decomp.blocks.iter().zip(coeffs) {
        if c.iter().all(|z| *z == C64::new(0.0, 0.0)) {
            continue;
        }
        let v = mat_vec(&b.d(s), c);
        let e = (-b.lambda * s).exp();
        for (x, o) in out.iter_mut().enumerate() {
            let sum: C64 = (0..b.n_k()).map(|l| b.phi[(x, l)] * v[l]).sum();
            *o += e * sum;
        }
    }
    out
}

fn require_regime(decomp: &SpectralDecomposition, p: &SpectralProfile, want: Regime, what: &str) -> Result<()> {
    for j in p.support() {
        let got = decomp.block_regime(j);
        if got != want {
            return Err(Error::WrongRegime(format!(
                "{what} needs a function spanned by {want:?} blocks, but block {} (lambda = {:.6}{:+.6}i) is {got:?}",
                j + 1,
                decomp.blocks[j].lambda.re,
                decomp.blocks[j].lambda.im,
            )));
        }
    }
    Ok(())
}

fn check_supercritical(decomp: &SpectralDecomposition) -> Result<()> {
    if decomp.lambda1() >= 0.0 {
        return Err(Error::NotSupercritical(decomp.lambda1()));
    }
    Ok(())
}

/// `<w, psi1>_m` for a weight already multiplied into the integrand.
fn psi1_weights(decomp: &SpectralDecomposition, model: &FiniteModel) -> Vec<f64> {
    (0..decomp.n())
        .map(|x| model.a[x] * decomp.psi1[x] * decomp.m[x])
        .collect()
}

fn pair_constant(decomp: &SpectralDecomposition, f1: &FunctionOnE, f2: &FunctionOnE) -> f64 {
    (0..decomp.n())
        .map(|x| (f1[x] * f2[x].conj()).re * decomp.psi1[x] * decomp.m[x])
        .sum()
}

fn max_degree(decomp: &SpectralDecomposition, support: &[usize]) -> usize {
    support
        .iter()
        .map(|&j| decomp.blocks[j].nu().saturating_sub(1))
        .max()
        .unwrap_or(0)
}

/// `sigma(f1, f2)` for `f1, f2` in the small regime.
pub fn sigma_cross(
    decomp: &SpectralDecomposition,
    model: &FiniteModel,
    f1: &FunctionOnE,
    f2: &FunctionOnE,
    quad: &QuadratureConfig,
) -> Result<Estimate> {
    check_supercritical(decomp)?;
    check_len(model, f1)?;
    check_len(model, f2)?;
    let p1 = classify_function(decomp, f1, DEFAULT_COEFF_TOL);
    let p2 = classify_function(decomp, f2, DEFAULT_COEFF_TOL);
    require_regime(decomp, &p1, Regime::Small, "sigma")?;
    require_regime(decomp, &p2, Regime::Small, "sigma")?;
    let constant = pair_constant(decomp, f1, f2);
    let (Some(g1), Some(g2)) = (p1.gamma, p2.gamma) else {
        return Ok(Estimate {
            value: constant,
            error_budget: 0.0,
        });
    };
    let l1 = decomp.lambda1();
    let delta = decomp.blocks[g1].re() + decomp.blocks[g2].re() - l1;
    let mut support = p1.support();
    support.extend(p2.support());
    let tau = max_degree(decomp, &support);
    let w = psi1_weights(decomp, model);
    let est = integrate_half_line(
        |s| {
            let u1 = evolve(decomp, &p1.coeffs, s);
            let u2 = evolve(decomp, &p2.coeffs, s);
            let inner: f64 = (0..w.len()).map(|x| w[x] * (u1[x] * u2[x].conj()).re).sum();
            (l1 * s).exp() * inner
        },
        delta,
        tau,
        quad,
    )?;
    Ok(Estimate {
        value: est.value + constant,
        error_budget: est.error_budget,
    })
}

/// `sigma_f^2 = int_0^inf e^{lambda_1 s} <A |T_s f|^2, psi_1>_m ds + <|f|^2, psi_1>_m`.
pub fn sigma_sq(decomp: &SpectralDecomposition, model: &FiniteModel, f: &FunctionOnE, quad: &QuadratureConfig) -> Result<Estimate> {
    sigma_cross(decomp, model, f, f, quad)
}

/// `rho(h1, h2) = (1 + tau(h1) + tau(h2))^{-1} <A F_{h1,h2}, psi_1>_m`.
pub fn rho_cross(decomp: &SpectralDecomposition, model: &FiniteModel, h1: &FunctionOnE, h2: &FunctionOnE) -> Result<f64> {
    check_supercritical(decomp)?;
    check_len(model, h1)?;
    check_len(model, h2)?;
    let p1 = classify_function(decomp, h1, DEFAULT_COEFF_TOL);
    let p2 = classify_function(decomp, h2, DEFAULT_COEFF_TOL);
    require_regime(decomp, &p1, Regime::Critical, "rho")?;
    require_regime(decomp, &p2, Regime::Critical, "rho")?;
    if p1.is_zero() || p2.is_zero() {
        return Ok(0.0);
    }
    let n = decomp.n();
    let mut field = vec![C64::new(0.0, 0.0); n];
    for (j, fa) in &p1.f_limits {
        let Some(fb) = p2.f_limit(*j) else { continue };
        let b = &decomp.blocks[*j];
        for (x, out) in field.iter_mut().enumerate() {
            let va: C64 = (0..b.n_k()).map(|l| b.phi[(x, l)] * fa[l]).sum();
            let vb: C64 = (0..b.n_k()).map(|l| b.phi[(x, l)] * fb[l]).sum();
            *out += va * vb.conj();
        }
    }
    let w = psi1_weights(decomp, model);
    let total: C64 = (0..n).map(|x| field[x] * w[x]).sum();
    Ok(total.re / (1.0 + (p1.tau + p2.tau) as f64))
}

pub fn rho_sq(decomp: &SpectralDecomposition, model: &FiniteModel, h: &FunctionOnE) -> Result<f64> {
    rho_cross(decomp, model, h, h)
}

/// `I_s g = sum_k e^{lambda_k s} Phi_k^T D_k(s)^{-1} b_k` for `g` in the large regime.
pub fn i_s(decomp: &SpectralDecomposition, g: &FunctionOnE, s: f64) -> Result<FunctionOnE> {
    let p = classify_function(decomp, g, DEFAULT_COEFF_TOL);
    require_regime(decomp, &p, Regime::Large, "I_s")?;
    let v = evolve(decomp, &p.coeffs, -s);
    Ok(if g.is_real() {
        FunctionOnE::real(&v.iter().map(|z| z.re).collect::<Vec<_>>())
    } else {
        FunctionOnE::complex(v)
    })
}

struct LargeSetup {
    p: SpectralProfile,
    delta: f64,
    tau: usize,
}

fn large_setup(decomp: &SpectralDecomposition, g: &FunctionOnE, what: &str) -> Result<LargeSetup> {
    check_supercritical(decomp)?;
    let p = classify_function(decomp, g, DEFAULT_COEFF_TOL);
    require_regime(decomp, &p, Regime::Large, what)?;
    let support = p.support();
    let max_re = support
        .iter()
        .map(|&j| decomp.blocks[j].re())
        .fold(f64::NEG_INFINITY, f64::max);
    let delta = decomp.lambda1() - 2.0 * max_re;
    let tau = max_degree(decomp, &support);
    Ok(LargeSetup { p, delta, tau })
}

/// `beta(g1, g2) = int_0^inf e^{-lambda_1 u} <A Re(I_u g1 conj I_u g2), psi_1>_m du - <g1 g2, psi_1>_m`.
pub fn beta_cross(
    decomp: &SpectralDecomposition,
    model: &FiniteModel,
    g1: &FunctionOnE,
    g2: &FunctionOnE,
    quad: &QuadratureConfig,
) -> Result<Estimate> {
    check_len(model, g1)?;
    check_len(model, g2)?;
    let s1 = large_setup(decomp, g1, "beta")?;
    let s2 = large_setup(decomp, g2, "beta")?;
    if s1.p.is_zero() || s2.p.is_zero() {
        return Ok(Estimate {
            value: 0.0,
            error_budget: 0.0,
        });
    }
    let l1 = decomp.lambda1();
    let delta = 0.5 * (s1.delta + s2.delta);
    let w = psi1_weights(decomp, model);
    let est = integrate_half_line(
        |u| {
            let a = evolve(decomp, &s1.p.coeffs, -u);
            let b = evolve(decomp, &s2.p.coeffs, -u);
            let inner: f64 = (0..w.len()).map(|x| w[x] * (a[x] * b[x].conj()).re).sum();
            (-l1 * u).exp() * inner
        },
        delta,
        s1.tau.max(s2.tau),
        quad,
    )?;
    Ok(Estimate {
        value: est.value - pair_constant(decomp, g1, g2),
        error_budget: est.error_budget,
    })
}

pub fn beta_sq(decomp: &SpectralDecomposition, model: &FiniteModel, g: &FunctionOnE, quad: &QuadratureConfig) -> Result<Estimate> {
    beta_cross(decomp, model, g, g, quad)
}

/// Mean and variance of `H_infinity = lim <I_t g, X_t>` started from one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HMoments {
    pub mean: f64,
    pub variance: f64,
    pub error_budget: f64,
}

/// `Var_x H_inf = int_0^inf T_u(A |I_u g|^2)(x) du - g(x)^2`.
pub fn var_h_infinity(
    decomp: &SpectralDecomposition,
    model: &FiniteModel,
    g: &FunctionOnE,
    x: usize,
    quad: &QuadratureConfig,
) -> Result<HMoments> {
    check_len(model, g)?;
    check_state(model, x)?;
    let s = large_setup(decomp, g, "Var H_inf")?;
    let mean = g[x].re;
    if s.p.is_zero() {
        return Ok(HMoments {
            mean,
            variance: 0.0,
            error_budget: 0.0,
        });
    }
    let n = model.n();
    let est = integrate_half_line(
        |u| {
            let v = evolve(decomp, &s.p.coeffs, -u);
            let e = expm(&(&model.l * u));
            (0..n).map(|y| e[(x, y)] * model.a[y] * v[y].norm_sqr()).sum()
        },
        s.delta,
        s.tau,
        quad,
    )?;
    Ok(HMoments {
        mean,
        variance: est.value - g[x].norm_sqr(),
        error_budget: est.error_budget,
    })
}

/// `E_t(g) = sum_k e^{-lambda_k t} H^(k) D_k(t) b_k` with `H^(k)` supplied per block.
pub fn e_t(decomp: &SpectralDecomposition, h_estimates: &[(usize, Vec<C64>)], g: &FunctionOnE, t: f64) -> Result<C64> {
    let p = classify_function(decomp, g, DEFAULT_COEFF_TOL);
    require_regime(decomp, &p, Regime::Large, "E_t")?;
    let mut total = C64::new(0.0, 0.0);
    for j in p.support() {
        let h = h_estimates
            .iter()
            .find(|(k, _)| *k == j)
            .map(|(_, v)| v)
            .ok_or(Error::MissingBlock(j + 1))?;
        let b = &decomp.blocks[j];
        if h.len() != b.n_k() {
            return Err(Error::DimensionMismatch(format!(
                "H estimate for block {} has {} entries, expected {}",
                j + 1,
                h.len(),
                b.n_k()
            )));
        }
        let v = mat_vec(&b.d(t), &p.coeffs[j]);
        let dot: C64 = h.iter().zip(&v).map(|(a, c)| a * c).sum();
        total += (-b.lambda * t).exp() * dot;
    }
    Ok(total)
}

/// Every limit variance that applies to the supplied functions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LimitVariances {
    pub sigma_sq: Option<f64>,
    pub rho_sq: Option<f64>,
    pub beta_sq: Option<f64>,
    pub sigma_cross: Option<f64>,
    pub rho_cross: Option<f64>,
    pub beta_cross: Option<f64>,
}

/// Growth normalization and predicted limit of `Var_x <f, X_t>` for a
/// function of a single regime: small `e^{lambda_1 t}`, critical
/// `t^{-(1 + 2 tau)} e^{lambda_1 t}`; both divided by `phi_1(x)`.
pub fn normalized_variance_limit(
    decomp: &SpectralDecomposition,
    model: &FiniteModel,
    f: &FunctionOnE,
    quad: &QuadratureConfig,
) -> Result<(Regime, usize, f64)> {
    let p = classify_function(decomp, f, DEFAULT_COEFF_TOL);
    match p.regime {
        Regime::Small => Ok((Regime::Small, p.tau, sigma_sq(decomp, model, f, quad)?.value)),
        Regime::Critical => Ok((Regime::Critical, p.tau, rho_sq(decomp, model, f)?)),
        Regime::Large => Err(Error::WrongRegime(
            "Var <f, X_t> has no normalized limit for f in the large regime".into(),
        )),
    }
}

pub fn variance_normalizer(decomp: &SpectralDecomposition, regime: Regime, tau: usize, t: f64, x: usize) -> f64 {
    let base = (decomp.lambda1() * t).exp() / decomp.phi1[x];
    match regime {
        Regime::Critical => base * t.powi(-(1 + 2 * tau as i32)),
        _ => base,
    }
}

/// `omega(t, x) = E_x exp(-<f, X_t>)` for each `theta * f`, integrated jointly
/// so that all members share one step sequence.
fn laplace_family(model: &FiniteModel, f: &FunctionOnE, thetas: &[f64], t: f64, opts: &OdeOptions) -> Result<Vec<Vec<f64>>> {
    check_time(t)?;
    check_len(model, f)?;
    let n = model.n();
    let fr = f
        .realify(0.0)
        .ok_or_else(|| Error::InvalidArgument("Laplace functional needs a real function".into()))?;
    let kappa: Vec<f64> = (0..n).map(|x| model.killing_rate(x)).collect();
    let mut y: Vec<f64> = thetas
        .iter()
        .flat_map(|th| fr.iter().map(move |v| (-th * v).exp()))
        .collect();
    let q = &model.q;
    integrate(
        |_, y, dy| {
            for (c, chunk) in y.chunks(n).enumerate() {
                for x in 0..n {
                    let motion: f64 = (0..n).map(|z| q[(x, z)] * chunk[z]).sum();
                    let w = chunk[x];
                    dy[c * n + x] = motion + kappa[x] + model.beta[x] * (model.offspring[x].pgf(w) - w);
                }
            }
        },
        0.0,
        t,
        &mut y,
        opts,
    )?;
    Ok(y.chunks(n).map(|c| c.to_vec()).collect())
}

pub fn laplace_functional(model: &FiniteModel, f: &FunctionOnE, t: f64) -> Result<FunctionOnE> {
    if f.values().iter().any(|v| v.im != 0.0 || v.re < 0.0) {
        return Err(Error::NegativeInput("Laplace functional needs f >= 0".into()));
    }
    let opts = OdeOptions {
        rtol: 1e-12,
        atol: 1e-15,
        max_steps: 2_000_000,
    };
    let w = laplace_family(model, f, &[1.0], t, &opts)?;
    Ok(FunctionOnE::real(&w[0]))
}

/// First and second moments from finite differences of the Laplace functional.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceMoments {
    pub mean: Vec<f64>,
    pub second: Vec<f64>,
}

/// Central differences in `theta` at steps `h` and `h/2`, combined by
/// Richardson extrapolation.
pub fn moments_from_laplace(model: &FiniteModel, f: &FunctionOnE, t: f64, theta_step: f64) -> Result<LaplaceMoments> {
    if f.values().iter().any(|v| v.im != 0.0 || v.re < 0.0) {
        return Err(Error::NegativeInput("Laplace functional needs f >= 0".into()));
    }
    if !(theta_step > 0.0) {
        return Err(Error::InvalidArgument("theta step must be positive".into()));
    }
    let h = theta_step;
    let thetas = [-h, -h / 2.0, 0.0, h / 2.0, h];
    let opts = OdeOptions {
        rtol: 1e-13,
        atol: 1e-16,
        max_steps: 2_000_000,
    };
    let w = laplace_family(model, f, &thetas, t, &opts)?;
    let n = model.n();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    for x in 0..n {
        let (wm, wmh, w0, wph, wp) = (w[0][x], w[1][x], w[2][x], w[3][x], w[4][x]);
        let d1 = |a: f64, b: f64, step: f64| (a - b) / (2.0 * step);
        let d2 = |a: f64, b: f64, step: f64| (a - 2.0 * w0 + b) / (step * step);
        mean[x] = (4.0 * d1(wmh, wph, h / 2.0) - d1(wm, wp, h)) / 3.0;
        second[x] = (4.0 * d2(wph, wmh, h / 2.0) - d2(wp, wm, h)) / 3.0;
    }
    Ok(LaplaceMoments { mean, second })
}
