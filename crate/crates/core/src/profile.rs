//! Spectral classification of test functions.
//!
//! A function `f` is expanded as `sum_j Phi_j^T b_j` with `b_j = <f, Psi_j>_m`.
//! The first block it sees, `gamma`, and the last block sharing that real
//! part, `zeta`, fix its growth rate; `tau` is the largest polynomial degree
//! of `D_j(t) b_j` over those blocks and `F_{f,j}` the coefficient of
//! `t^tau`. The regime compares `lambda_1` with `2 Re lambda_gamma`.

use crate::function::FunctionOnE;
use crate::linalg::{factorial, C64};
use crate::spectral::{Regime, SpectralDecomposition};

/// Default relative threshold below which coefficients count as zero.
pub const DEFAULT_COEFF_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    /// Index of the first block with a nonzero coefficient; `None` for `f = 0`.
    pub gamma: Option<usize>,
    /// Last block with the same real part as `gamma`.
    pub zeta: Option<usize>,
    pub tau: usize,
    /// `<f, Psi_j>_m` for every block, with negligible entries set to zero.
    pub coeffs: Vec<Vec<C64>>,
    /// `(j, F_{f,j})` for `gamma <= j <= zeta`.
    pub f_limits: Vec<(usize, Vec<C64>)>,
    /// Part of `f` spanned by blocks with `lambda_1 > 2 Re lambda_k`.
    pub proj_large: FunctionOnE,
    /// Part of `f` spanned by blocks with `lambda_1 = 2 Re lambda_k`.
    pub proj_critical: FunctionOnE,
    /// Everything else.
    pub proj_small: FunctionOnE,
    pub regime: Regime,
}

impl SpectralProfile {
    pub fn is_zero(&self) -> bool {
        self.gamma.is_none()
    }

    /// `F_{f,j}` if `j` lies in `gamma..=zeta`.
    pub fn f_limit(&self, j: usize) -> Option<&[C64]> {
        self.f_limits
            .iter()
            .find(|(k, _)| *k == j)
            .map(|(_, v)| v.as_slice())
    }

    /// Blocks carrying a nonzero coefficient.
    pub fn support(&self) -> Vec<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.iter().any(|z| *z != C64::new(0.0, 0.0)))
            .map(|(j, _)| j)
            .collect()
    }
}

/// Highest `q` such that `D(t) b` has a `t^q` term, per chain.
fn chain_degree(chains: &[usize], b: &[C64]) -> Option<usize> {
    let mut off = 0;
    let mut best: Option<usize> = None;
    for &len in chains {
        for i in (0..len).rev() {
            if b[off + i] != C64::new(0.0, 0.0) {
                best = Some(best.map_or(i, |d: usize| d.max(i)));
                break;
            }
        }
        off += len;
    }
    best
}

/// Coefficient of `t^tau` in `D(t) b`.
fn leading_coefficient(chains: &[usize], b: &[C64], tau: usize) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); b.len()];
    let mut off = 0;
    for &len in chains {
        for p in 0..len {
            if p + tau < len {
                out[off + p] = b[off + p + tau] / factorial(tau);
            }
        }
        off += len;
    }
    out
}

pub fn classify_function(decomp: &SpectralDecomposition, f: &FunctionOnE, tol: f64) -> SpectralProfile {
    let norm = f.norm(&decomp.m);
    let cut = tol * norm;
    let mut coeffs = decomp.coefficients(f);
    for c in coeffs.iter_mut() {
        for z in c.iter_mut() {
            if z.norm() <= cut {
                *z = C64::new(0.0, 0.0);
            }
        }
    }
    let nonzero = |c: &Vec<C64>| c.iter().any(|z| *z != C64::new(0.0, 0.0));
    let gamma = coeffs.iter().position(nonzero);
    let re_tol = decomp.re_tol();
    let zeta = gamma.map(|g| {
        let re = decomp.blocks[g].re();
        (g..decomp.blocks.len())
            .take_while(|&j| (decomp.blocks[j].re() - re).abs() <= re_tol)
            .last()
            .unwrap_or(g)
    });
    let mut tau = 0;
    let mut f_limits = Vec::new();
    if let (Some(g), Some(z)) = (gamma, zeta) {
        tau = (g..=z)
            .filter_map(|j| chain_degree(&decomp.blocks[j].chains, &coeffs[j]))
            .max()
            .unwrap_or(0);
        for j in g..=z {
            f_limits.push((j, leading_coefficient(&decomp.blocks[j].chains, &coeffs[j], tau)));
        }
    }
    let n = decomp.n();
    let zero = vec![C64::new(0.0, 0.0); n];
    let mut parts = [zero.clone(), zero.clone(), zero];
    for (j, b) in decomp.blocks.iter().enumerate() {
        let slot = match decomp.block_regime(j) {
            Regime::Large => 0,
            Regime::Critical => 1,
            Regime::Small => 2,
        };
        for (l, c) in coeffs[j].iter().enumerate() {
            for x in 0..n {
                parts[slot][x] += b.phi[(x, l)] * c;
            }
        }
    }
    // the small part absorbs round-off so the three pieces add up to f
    for x in 0..n {
        parts[2][x] = f[x] - parts[0][x] - parts[1][x];
    }
    let [large, critical, small] = parts;
    let clean = |v: Vec<C64>| {
        if f.is_real() {
            FunctionOnE::real(&v.iter().map(|z| z.re).collect::<Vec<_>>())
        } else {
            FunctionOnE::complex(v)
        }
    };
    let regime = match gamma {
        Some(g) => decomp.block_regime(g),
        None => Regime::Small,
    };
    SpectralProfile {
        gamma,
        zeta,
        tau,
        coeffs,
        f_limits,
        proj_large: clean(large),
        proj_critical: clean(critical),
        proj_small: clean(small),
        regime,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{from_jordan_design, ATarget, BetaPolicy, DesignBlock, JordanDesign};
    use crate::spectral::spectral_decompose;
    use approx::assert_relative_eq;

    fn critical() -> SpectralDecomposition {
        let design = JordanDesign {
            p: vec![vec![1.0, 2.0], vec![1.0, -1.0]],
            blocks: vec![DesignBlock::real(2.0, &[1]), DesignBlock::real(1.0, &[1])],
            a_target: ATarget::PerState(vec![4.0, 4.0]),
            beta_policy: BetaPolicy::default(),
            m: vec![],
            states: vec![],
        };
        spectral_decompose(&from_jordan_design(&design).unwrap()).unwrap()
    }

    #[test]
    fn leading_eigenfunction() {
        let d = critical();
        let p = classify_function(&d, &FunctionOnE::real(&d.phi1), DEFAULT_COEFF_TOL);
        assert_eq!((p.gamma, p.zeta, p.tau), (Some(0), Some(0), 0));
        assert_relative_eq!(p.f_limit(0).unwrap()[0].re, 1.0, epsilon = 1e-14);
        assert_eq!(p.regime, Regime::Large);
    }

    #[test]
    fn critical_direction() {
        let d = critical();
        let p = classify_function(&d, &FunctionOnE::real(&[2.0, -1.0]), DEFAULT_COEFF_TOL);
        assert_eq!(p.gamma, Some(1));
        assert_eq!(p.tau, 0);
        assert_eq!(p.regime, Regime::Critical);
        assert_relative_eq!(p.coeffs[1][0].re, 1.0, epsilon = 1e-14);
        assert_eq!(p.coeffs[0][0], C64::new(0.0, 0.0));
        assert!(p.proj_large.max_abs() < 1e-14);
    }

    #[test]
    fn zero_function_is_small() {
        let d = critical();
        let p = classify_function(&d, &FunctionOnE::zeros(2), DEFAULT_COEFF_TOL);
        assert!(p.is_zero());
        assert_eq!(p.regime, Regime::Small);
        assert!(p.f_limits.is_empty());
    }

    #[test]
    fn chain_degree_and_leading_terms() {
        let b = [C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(3.0, 0.0), C64::new(5.0, 0.0)];
        assert_eq!(chain_degree(&[3, 1], &b), Some(2));
        let lead = leading_coefficient(&[3, 1], &b, 2);
        assert_eq!(lead[0], C64::new(1.5, 0.0));
        assert_eq!(lead[1], C64::new(0.0, 0.0));
        assert_eq!(lead[3], C64::new(0.0, 0.0));
        let top_zero = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        assert_eq!(chain_degree(&[2], &top_zero), Some(0));
    }
}
