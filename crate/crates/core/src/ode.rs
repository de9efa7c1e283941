//! Adaptive Dormand–Prince 5(4) integration for small dense systems.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-14,
            max_steps: 200_000,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights (equal to the last row of `A`).
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
/// Embedded fourth-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrate `y' = rhs(t, y)` from `t0` to `t1`, overwriting `y`.
pub fn integrate<F>(mut rhs: F, t0: f64, t1: f64, y: &mut [f64], opts: &OdeOptions) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    if t1 <= t0 || n == 0 {
        return Ok(());
    }
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut t = t0;
    rhs(t, y, &mut k[0]);
    let mut h = initial_step(&mut rhs, t0, t1, y, &k[0], opts);
    let mut steps = 0;
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(Error::StiffnessFailure(format!(
                "{} steps exhausted at t = {t:.6} of {t1}",
                opts.max_steps
            )));
        }
        steps += 1;
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        for s in 1..7 {
            for i in 0..n {
                tmp[i] = y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            rhs(t + C[s] * h, &tmp, &mut k[s]);
        }
        // tmp now holds the fifth-order solution (FSAL stage)
        let mut err = 0.0f64;
        for i in 0..n {
            let e: f64 = h * (0..7).map(|j| (B5[j] - B4[j]) * k[j][i]).sum::<f64>();
            let sc = opts.atol + opts.rtol * y[i].abs().max(tmp[i].abs());
            err = err.max((e / sc).abs());
        }
        if !err.is_finite() {
            h *= 0.2;
            if h < 1e-15 * t.abs().max(t1 - t0) {
                return Err(Error::StiffnessFailure(format!("non-finite state at t = {t:.6}")));
            }
            continue;
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y.copy_from_slice(&tmp);
            k.swap(0, 6);
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-15 * t.abs().max(t1 - t0) && t < t1 {
            return Err(Error::StiffnessFailure(format!("step size underflow at t = {t:.6}")));
        }
    }
    Ok(())
}

/// Starting step from the first two derivative estimates (Hairer, Nørsett
/// and Wanner, section II.4).
fn initial_step<F>(rhs: &mut F, t0: f64, t1: f64, y: &[f64], f0: &[f64], opts: &OdeOptions) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &mut dyn Iterator<Item = f64>| (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let d0 = rms(&mut y.iter().zip(&sc).map(|(a, s)| a / s));
    let d1 = rms(&mut f0.iter().zip(&sc).map(|(a, s)| a / s));
    let span = t1 - t0;
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { (0.01 * d0 / d1).min(span) };
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    rhs(t0 + h0, &y1, &mut f1);
    let d2 = rms(&mut f1.iter().zip(f0).zip(&sc).map(|((a, b), s)| (a - b) / s)) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6 * span)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_growth() {
        let mut y = [1.0];
        integrate(|_, y, dy| dy[0] = y[0], 0.0, 10.0, &mut y, &OdeOptions::default()).unwrap();
        assert_relative_eq!(y[0], 10f64.exp(), max_relative = 1e-9);
    }

    #[test]
    fn harmonic_oscillator() {
        let mut y = [1.0, 0.0];
        integrate(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            20.0,
            &mut y,
            &OdeOptions::default(),
        )
        .unwrap();
        assert_relative_eq!(y[0], 20f64.cos(), epsilon = 1e-9);
        assert_relative_eq!(y[1], -(20f64.sin()), epsilon = 1e-9);
    }

    #[test]
    fn time_dependent_rhs() {
        let mut y = [0.0];
        integrate(|t, _, dy| dy[0] = t * t, 0.0, 3.0, &mut y, &OdeOptions::default()).unwrap();
        assert_relative_eq!(y[0], 9.0, max_relative = 1e-12);
    }

    #[test]
    fn step_budget_is_reported() {
        let mut y = [1.0];
        let opts = OdeOptions {
            max_steps: 3,
            ..OdeOptions::default()
        };
        let r = integrate(|_, y, dy| dy[0] = -1e4 * y[0], 0.0, 10.0, &mut y, &opts);
        assert!(matches!(r, Err(Error::StiffnessFailure(_))));
    }
}
