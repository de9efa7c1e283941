//! Adaptive Gauss–Kronrod quadrature on finite and half-infinite ranges.
//!
//! Half-line integrals are summed panel by panel, with the panel width set
//! by the known exponential decay rate of the integrand. Integration stops
//! once a geometric bound on the remaining tail falls below tolerance; the
//! tail bound and the per-panel Kronrod error estimates are returned as an
//! error budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Panel width in units of the decay time `1 / delta`.
    pub panel_width: f64,
    pub max_panels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            abs_tol: 1e-14,
            panel_width: 1.0,
            max_panels: 4000,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0 && self.panel_width > 0.0) {
            return Err(Error::InvalidArgument(
                "quadrature tolerances and panel width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A value together with an upper bound on its numerical error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error_budget: f64,
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_41,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod rule with its 7-point Gauss error estimate.
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive bisection until each piece meets its share of `tol`.
pub fn integrate_finite<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64) -> Estimate {
    fn rec<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64, tol: f64, depth: usize) -> (f64, f64) {
        let (v, e) = gk15(f, a, b);
        if e <= tol || depth == 0 {
            return (v, e);
        }
        let m = 0.5 * (a + b);
        let (v1, e1) = rec(f, a, m, 0.5 * tol, depth - 1);
        let (v2, e2) = rec(f, m, b, 0.5 * tol, depth - 1);
        (v1 + v2, e1 + e2)
    }
    if b <= a {
        return Estimate {
            value: 0.0,
            error_budget: 0.0,
        };
    }
    let (value, error_budget) = rec(f, a, b, tol, 30);
    Estimate { value, error_budget }
}

/// `int_0^inf f(s) ds` for an integrand bounded by `C (1 + s^{2 tau}) exp(-delta s)`.
pub fn integrate_half_line<F: FnMut(f64) -> f64>(
    mut f: F,
    delta: f64,
    tau: usize,
    cfg: &QuadratureConfig,
) -> Result<Estimate> {
    cfg.validate()?;
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::QuadratureFailure(format!(
            "integrand decay rate {delta} is not positive"
        )));
    }
    let width = cfg.panel_width / delta;
    // beyond this point the polynomial factor can no longer outgrow the decay
    let monotone_from = (2 * tau) as f64 / delta;
    let mut total = 0.0f64;
    let mut budget = 0.0;
    let mut prev: Option<f64> = None;
    for p in 0..cfg.max_panels {
        let a = p as f64 * width;
        let b = a + width;
        let tol = (cfg.abs_tol + cfg.rel_tol * total.abs()) * 0.1;
        let est = integrate_finite(&mut f, a, b, tol.max(1e-300));
        if !est.value.is_finite() {
            return Err(Error::QuadratureFailure(format!(
                "non-finite integrand on [{a:.4}, {b:.4}]"
            )));
        }
        total += est.value;
        budget += est.error_budget;
        // L1 mass of the panel, so cancellation inside it cannot hide the tail
        let mag = gk15(&mut |s| f(s).abs(), a, b).0;
        if a >= monotone_from {
            // geometric tail bound from the observed and the analytic decay ratios
            let analytic = (-delta * width).exp() * (1.0 + 2.0 * tau as f64 / (delta * a.max(width)));
            let observed = prev.map_or(analytic, |q| if q > 0.0 { mag / q } else { 0.0 });
            let ratio = observed.max(analytic.min(0.999));
            if ratio < 1.0 {
                let tail = mag * ratio / (1.0 - ratio);
                if tail <= cfg.abs_tol + cfg.rel_tol * total.abs() {
                    return Ok(Estimate {
                        value: total,
                        error_budget: budget + tail,
                    });
                }
            }
        }
        prev = Some(mag);
    }
    Err(Error::QuadratureFailure(format!(
        "tail still above tolerance after {} panels",
        cfg.max_panels
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_is_exact() {
        let e = integrate_finite(&mut |x: f64| x.powi(5) - 2.0 * x, 0.0, 2.0, 1e-14);
        assert_relative_eq!(e.value, 64.0 / 6.0 - 4.0, max_relative = 1e-14);
    }

    #[test]
    fn decaying_exponentials() {
        let e = integrate_half_line(|s| (-0.5 * s).exp(), 0.5, 0, &QuadratureConfig::default()).unwrap();
        assert_relative_eq!(e.value, 2.0, max_relative = 1e-11);
        assert!(e.error_budget < 1e-9);
        // s^2 e^{-s} integrates to 2
        let e = integrate_half_line(|s| s * s * (-s).exp(), 1.0, 1, &QuadratureConfig::default()).unwrap();
        assert_relative_eq!(e.value, 2.0, max_relative = 1e-11);
    }

    #[test]
    fn oscillating_integrand() {
        // int_0^inf e^{-s} cos(3s) ds = 1 / 10
        let e = integrate_half_line(|s| (-s).exp() * (3.0 * s).cos(), 1.0, 0, &QuadratureConfig::default()).unwrap();
        assert_relative_eq!(e.value, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn non_decaying_integrand_fails() {
        let cfg = QuadratureConfig {
            max_panels: 50,
            ..QuadratureConfig::default()
        };
        assert!(matches!(
            integrate_half_line(|_| 1.0, 1.0, 0, &cfg),
            Err(Error::QuadratureFailure(_))
        ));
    }
}
