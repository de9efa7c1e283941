//! Ready-made models with exactly known spectra, and a random design
//! generator for property tests.
//!
//! Every designed model is built from `L = P J P^{-1}` so its eigenvalues,
//! chains and eigenfunctions are known in closed form. Unless noted the
//! offspring law is binary splitting (`p_0 = 0`), so populations never die
//! out and the conditioning on survival is vacuous.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::RMat;
use crate::model::{
    build_model, from_jordan_design, ARule, ATarget, BetaPolicy, DesignBlock, FiniteModel, JordanDesign, ModelConfig,
    OffspringLaw,
};
use crate::spectral::Regime;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

fn binary_splitting() -> (ATarget, BetaPolicy) {
    (
        ATarget::Rule(ARule::TwiceAlpha),
        BetaPolicy::ThreePoint { margin: 0.0 },
    )
}

fn design(p: Vec<Vec<f64>>, blocks: Vec<DesignBlock>) -> JordanDesign {
    let (a_target, beta_policy) = binary_splitting();
    JordanDesign {
        p,
        blocks,
        a_target,
        beta_policy,
        m: vec![],
        states: vec![],
    }
}

/// One type, binary splitting at rate `beta`: `E <1, X_t> = e^{beta t}`.
pub fn yule(beta: f64) -> ModelConfig {
    ModelConfig {
        states: vec!["x".into()],
        m: vec![1.0],
        q: vec![vec![0.0]],
        beta: vec![beta],
        offspring: vec![OffspringLaw(vec![0.0, 0.0, 1.0])],
    }
}

fn two_state(mu1: f64, mu2: f64) -> JordanDesign {
    design(
        vec![vec![1.0, 2.0], vec![1.0, -1.0]],
        vec![DesignBlock::real(mu1, &[1]), DesignBlock::real(mu2, &[1])],
    )
}

/// Two states with `lambda = (-2, -1)`: the second eigenfunction
/// `(2, -1)` is critical. Splitting rate 2 everywhere, so `A = 4`.
pub fn critical_pair() -> JordanDesign {
    two_state(2.0, 1.0)
}

/// Two states with `lambda = (-0.7, -0.1)`: `(2, -1)` is in the small regime.
pub fn small_pair() -> JordanDesign {
    two_state(0.7, 0.1)
}

/// Two states with `lambda = (-1, -0.9)`: both blocks are in the large regime.
pub fn large_pair() -> JordanDesign {
    two_state(1.0, 0.9)
}

/// Starting configuration for the two-state designs that is orthogonal to
/// the second eigenfunction `(2, -1)`, so its mean vanishes identically.
pub const TWO_STATE_START: [u64; 2] = [1, 2];

/// Three states on a directed cycle, `lambda_1 = -1` and a complex pair
/// placed in the requested regime. The pair's eigenfunctions are
/// `(1, w, w^2)` and its conjugate, `w = e^{2 pi i / 3}`.
pub fn rotating_triple(regime: Regime) -> JordanDesign {
    let (re, im) = match regime {
        Regime::Large => (0.8, 0.1),
        Regime::Critical => (0.5, 0.25),
        Regime::Small => (0.2, 0.3),
    };
    design(
        vec![
            vec![1.0, 1.0, 0.0],
            vec![1.0, -0.5, SQRT3_2],
            vec![1.0, -0.5, -SQRT3_2],
        ],
        vec![DesignBlock::real(1.0, &[1]), DesignBlock::pair(re, im, &[1])],
    )
}

/// Four states with `lambda = (-1, -0.5, -0.3, -0.1)`: one critical and two
/// small eigenfunctions alongside `phi_1`. The symmetric Hadamard design is
/// tilted by a diagonal similarity so the mean generator is not symmetric.
pub fn four_regime() -> JordanDesign {
    let h = [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ];
    let tilt = [1.0, 1.1, 0.95, 1.05];
    let p = (0..4).map(|x| (0..4).map(|k| tilt[x] * h[x][k]).collect()).collect();
    design(
        p,
        vec![
            DesignBlock::real(1.0, &[1]),
            DesignBlock::real(0.5, &[1]),
            DesignBlock::real(0.3, &[1]),
            DesignBlock::real(0.1, &[1]),
        ],
    )
}

/// Three states whose second eigenvalue carries a Jordan chain of length 2
/// and sits in the critical regime (`tau = 1` for the chain top).
pub fn critical_chain() -> JordanDesign {
    design(
        vec![vec![1.0, 1.0, 4.0], vec![1.0, 0.0, -8.0], vec![1.0, -1.0, 4.0]],
        vec![DesignBlock::real(2.0, &[1]), DesignBlock::real(1.0, &[2])],
    )
}

/// Three states, `L = I + 11^T / 3`: `lambda_1 = -2` on constants and a
/// two-dimensional critical eigenspace at `-1` spanned by `(1, 0, -1)` and
/// `(1, -2, 1)`. Both critical functions are real, so the critical limit
/// has no rotating correction.
pub fn critical_plane() -> JordanDesign {
    design(
        vec![vec![1.0, 1.0, 1.0], vec![1.0, 0.0, -2.0], vec![1.0, -1.0, 1.0]],
        vec![DesignBlock::real(2.0, &[1]), DesignBlock::real(1.0, &[1, 1])],
    )
}

/// Build a catalog design; the catalog designs are all feasible.
pub fn build(design: &JordanDesign) -> Result<FiniteModel> {
    from_jordan_design(design)
}

pub fn yule_model(beta: f64) -> Result<FiniteModel> {
    build_model(&yule(beta))
}

/// Shapes of the random designs: each has a complex pair and a Jordan chain
/// of length 2 besides the leading eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomShape {
    /// n = 5: pair, real chain of length 2.
    PairAndChain,
    /// n = 6: pair, real chain of length 2, simple real.
    PairChainSimple,
    /// n = 6: complex chain of length 2, simple real.
    ComplexChain,
    /// n = 6: pair, one real eigenvalue with chains of lengths 2 and 1.
    TwoChains,
}

impl RandomShape {
    pub const ALL: [RandomShape; 4] = [
        RandomShape::PairAndChain,
        RandomShape::PairChainSimple,
        RandomShape::ComplexChain,
        RandomShape::TwoChains,
    ];

    pub fn n(self) -> usize {
        match self {
            RandomShape::PairAndChain => 5,
            _ => 6,
        }
    }
}

/// Draw a feasible design of the given shape.
///
/// With `P_0 = [1 | E]` and `w` the first row of `P_0^{-1}`, the operator
/// `mu_1 I - c (I - 1 w^T)` has off-diagonal entries `c w_j`. Eigenvalues
/// are then spread, rotated and chained by amounts small against `c`, so
/// the off-diagonal entries stay positive whenever `w` is bounded away
/// from zero. A random diagonal similarity and reference measure finish the
/// design. Candidates that still violate positivity are redrawn.
pub fn random_design<R: Rng + ?Sized>(rng: &mut R, shape: RandomShape) -> Result<JordanDesign> {
    let n = shape.n();
    for _ in 0..10_000 {
        let mu1 = rng.random_range(0.5..2.0);
        let c = rng.random_range(0.5..1.5);
        let mut eig = || mu1 - c + c * rng.random_range(-0.15..0.15);
        let (e1, e2, e3) = (eig(), eig(), eig());
        let im = c * rng.random_range(0.03..0.15);
        let mut blocks = vec![DesignBlock::real(mu1, &[1])];
        match shape {
            RandomShape::PairAndChain => {
                blocks.push(DesignBlock::pair(e1, im, &[1]));
                blocks.push(DesignBlock::real(e2, &[2]));
            }
            RandomShape::PairChainSimple => {
                blocks.push(DesignBlock::pair(e1, im, &[1]));
                blocks.push(DesignBlock::real(e2, &[2]));
                blocks.push(DesignBlock::real(e3, &[1]));
            }
            RandomShape::ComplexChain => {
                blocks.push(DesignBlock::pair(e1, im, &[2]));
                blocks.push(DesignBlock::real(e2, &[1]));
            }
            RandomShape::TwoChains => {
                blocks.push(DesignBlock::pair(e1, im, &[1]));
                blocks.push(DesignBlock::real(e2, &[2, 1]));
            }
        }
        blocks.sort_by(|a, b| b.eigenvalue[0].total_cmp(&a.eigenvalue[0]));
        let mut p0 = RMat::from_fn(n, n, |_, k| if k == 0 { 1.0 } else { 0.0 });
        for x in 0..n {
            for k in 1..n {
                p0[(x, k)] = rng.random_range(-1.0..1.0);
            }
        }
        let Some(inv) = p0.clone().try_inverse() else { continue };
        if (0..n).any(|j| inv[(0, j)] < 0.2 / n as f64) {
            continue;
        }
        // chain position i is stretched by eta^{-i}, which shrinks the
        // superdiagonal of J to eta in the P_0 coordinates
        let eta = 0.05 * c;
        let mut stretch = vec![1.0; n];
        let mut col = 0;
        for b in &blocks {
            let w = if b.is_pair() { 2 } else { 1 };
            for &d in &b.sizes {
                for i in 0..d {
                    for _ in 0..w {
                        stretch[col] = eta.powi(-(i as i32));
                        col += 1;
                    }
                }
            }
        }
        let tilt: Vec<f64> = (0..n).map(|_| rng.random_range(0.7..1.4)).collect();
        let p = RMat::from_fn(n, n, |x, k| tilt[x] * p0[(x, k)] * stretch[k]);
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let mut candidate = JordanDesign {
            p: (0..n).map(|x| p.row(x).iter().cloned().collect()).collect(),
            blocks,
            a_target: ATarget::Rule(ARule::TwiceAlpha),
            beta_policy: BetaPolicy::default(),
            m,
            states: vec![],
        };
        // alpha is the row sum of L; pick A compatible with a law on {0, 1, 2}
        let Some(pinv) = p.clone().try_inverse() else { continue };
        let l = &p * candidate.jordan_matrix() * pinv;
        let alpha: Vec<f64> = (0..n).map(|x| l.row(x).sum()).collect();
        let deficit = alpha.iter().fold(0.0f64, |acc, a| acc.max(-a));
        candidate.a_target = ATarget::PerState(
            alpha
                .iter()
                .map(|a| (2.0 * a).max(0.0) + rng.random_range(0.0..0.5))
                .collect(),
        );
        candidate.beta_policy = BetaPolicy::ThreePoint { margin: 1.0 + deficit };
        match from_jordan_design(&candidate) {
            Ok(_) => return Ok(candidate),
            Err(Error::InfeasibleDesign(_)) | Err(Error::UnrealizableMechanism(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::InfeasibleDesign(format!(
        "no feasible random design of shape {shape:?} found"
    )))
}
