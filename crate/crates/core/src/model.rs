//! Finite-state branching models.
//!
//! A model is a sub-Markov generator `Q` for the motion of a single particle
//! (a row deficit is the killing rate to the cemetery), a branching rate
//! `beta(x)` and an offspring law `p_k(x)` at every state. The mean
//! semigroup is generated by `L = Q + diag(alpha)` with
//! `alpha(x) = beta(x) (sum_k k p_k(x) - 1)`, and the second factorial
//! moment enters through `A(x) = beta(x) sum_k k (k - 1) p_k(x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, real_jordan_matrix, RMat, C64};

const LAW_TOL: f64 = 1e-12;

/// Offspring distribution `p_0, p_1, ..., p_K` at one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OffspringLaw(pub Vec<f64>);

impl OffspringLaw {
    pub fn mean(&self) -> f64 {
        self.0.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn factorial_second(&self) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(k, p)| (k * k.saturating_sub(1)) as f64 * p)
            .sum()
    }

    /// Probability generating function `sum_k p_k z^k`.
    pub fn pgf(&self, z: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, p| acc * z + p)
    }

    fn validate(&self, state: usize) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::InvalidLaw(format!("state {state}: empty offspring law")));
        }
        if self.0.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidLaw(format!(
                "state {state}: negative or non-finite probability"
            )));
        }
        let total: f64 = self.0.iter().sum();
        if (total - 1.0).abs() > LAW_TOL * self.0.len() as f64 {
            return Err(Error::InvalidLaw(format!(
                "state {state}: probabilities sum to {total}"
            )));
        }
        Ok(())
    }
}

/// Raw model description as read from a config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default)]
    pub states: Vec<String>,
    #[serde(default)]
    pub m: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub offspring: Vec<OffspringLaw>,
}

/// How the per-state second factorial moment `A(x)` is chosen for a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ATarget {
    PerState(Vec<f64>),
    Rule(ARule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ARule {
    /// `A = 2 alpha`, which makes `p_0 = 0` under the three-point policy.
    TwiceAlpha,
}

/// Splits the drift `alpha` into a branching rate and an offspring law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BetaPolicy {
    /// Constant `beta = max_x alpha(x)_+ + margin` with a law on {0, 1, 2}.
    ThreePoint { margin: f64 },
}

impl Default for BetaPolicy {
    fn default() -> Self {
        BetaPolicy::ThreePoint { margin: 1.0 }
    }
}

/// One eigenvalue of the mean generator with its Jordan chain lengths.
/// A complex eigenvalue is declared once (positive imaginary part) and
/// stands for the conjugate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignBlock {
    /// Generator eigenvalue `-lambda_k` as `[re, im]`.
    pub eigenvalue: [f64; 2],
    pub sizes: Vec<usize>,
}

impl DesignBlock {
    pub fn real(mu: f64, sizes: &[usize]) -> Self {
        Self {
            eigenvalue: [mu, 0.0],
            sizes: sizes.to_vec(),
        }
    }

    pub fn pair(re: f64, im: f64, sizes: &[usize]) -> Self {
        Self {
            eigenvalue: [re, im.abs()],
            sizes: sizes.to_vec(),
        }
    }

    pub fn mu(&self) -> C64 {
        C64::new(self.eigenvalue[0], self.eigenvalue[1])
    }

    pub fn is_pair(&self) -> bool {
        self.eigenvalue[1] != 0.0
    }

    pub fn width(&self) -> usize {
        let w = if self.is_pair() { 2 } else { 1 };
        w * self.sizes.iter().sum::<usize>()
    }
}

/// A model specified through the Jordan form of its mean generator,
/// `L = P J P^{-1}`, so that its spectral data is known exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JordanDesign {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub blocks: Vec<DesignBlock>,
    pub a_target: ATarget,
    #[serde(default)]
    pub beta_policy: BetaPolicy,
    #[serde(default)]
    pub m: Vec<f64>,
    #[serde(default)]
    pub states: Vec<String>,
}

impl JordanDesign {
    pub fn p_matrix(&self) -> Result<RMat> {
        matrix_from_rows(&self.p, "P")
    }

    pub fn jordan_matrix(&self) -> RMat {
        let blocks: Vec<(C64, Vec<usize>)> =
            self.blocks.iter().map(|b| (b.mu(), b.sizes.clone())).collect();
        real_jordan_matrix(&blocks)
    }

    fn validate(&self) -> Result<()> {
        let n = self.p.len();
        if n == 0 {
            return Err(Error::EmptyState);
        }
        let width: usize = self.blocks.iter().map(DesignBlock::width).sum();
        if width != n {
            return Err(Error::DimensionMismatch(format!(
                "Jordan blocks cover {width} columns but P is {n}x{n}"
            )));
        }
        if self.blocks.iter().any(|b| b.sizes.is_empty() || b.sizes.contains(&0)) {
            return Err(Error::InvalidArgument("empty Jordan chain in design".into()));
        }
        let first = &self.blocks[0];
        if first.is_pair() || first.sizes != [1] {
            return Err(Error::InfeasibleDesign(
                "leading eigenvalue must be real and simple".into(),
            ));
        }
        for b in &self.blocks[1..] {
            if b.eigenvalue[0] >= first.eigenvalue[0] {
                return Err(Error::InfeasibleDesign(format!(
                    "eigenvalue {:?} does not lie strictly left of the leading one",
                    b.eigenvalue
                )));
            }
        }
        Ok(())
    }
}

/// A validated branching model with its derived mean quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteModel {
    pub states: Vec<String>,
    pub m: Vec<f64>,
    pub q: RMat,
    pub beta: Vec<f64>,
    pub offspring: Vec<OffspringLaw>,
    pub alpha: Vec<f64>,
    pub a: Vec<f64>,
    pub l: RMat,
    /// `max_x |alpha(x)| + A(x)`.
    pub k_bound: f64,
    /// Declared Jordan structure when the model came from a design.
    pub design: Option<JordanDesign>,
}

impl FiniteModel {
    pub fn n(&self) -> usize {
        self.m.len()
    }

    /// Row deficit of `Q`, the rate of killing to the cemetery.
    pub fn killing_rate(&self, x: usize) -> f64 {
        (-(0..self.n()).map(|y| self.q[(x, y)]).sum::<f64>()).max(0.0)
    }

    /// Strong connectivity of the off-diagonal graph of `Q`.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n();
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(x) = stack.pop() {
                for y in 0..n {
                    let w = if forward { self.q[(x, y)] } else { self.q[(y, x)] };
                    if y != x && w > 0.0 && !seen[y] {
                        seen[y] = true;
                        stack.push(y);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach(true) && reach(false)
    }

    /// Assumption-style check `sum_y exp(tL)(y, x) m(y) <= m(x)`; only
    /// informative, the finite-dimensional theory does not need it.
    pub fn measure_warnings(&self, t: f64) -> Vec<String> {
        let p = crate::linalg::expm(&(&self.q * t));
        (0..self.n())
            .filter_map(|x| {
                let mass: f64 = (0..self.n()).map(|y| p[(y, x)] * self.m[y]).sum();
                (mass > self.m[x] * (1.0 + 1e-9)).then(|| {
                    format!(
                        "state {}: integral of p({t}, y, x) m(dy) = {mass:.6} exceeds m(x) = {}",
                        self.states[x], self.m[x]
                    )
                })
            })
            .collect()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            states: self.states.clone(),
            m: self.m.clone(),
            q: (0..self.n())
                .map(|i| self.q.row(i).iter().cloned().collect())
                .collect(),
            beta: self.beta.clone(),
            offspring: self.offspring.clone(),
        }
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<RMat> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch(format!("{name} must be square")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
    }
    Ok(RMat::from_fn(n, n, |i, j| rows[i][j]))
}

fn default_states(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}

/// Validate a raw config and derive `alpha`, `A` and `L`.
pub fn build_model(config: &ModelConfig) -> Result<FiniteModel> {
    let n = config.q.len();
    if n == 0 {
        return Err(Error::EmptyState);
    }
    let q = matrix_from_rows(&config.q, "Q")?;
    let m = if config.m.is_empty() { vec![1.0; n] } else { config.m.clone() };
    let states = if config.states.is_empty() {
        default_states(n)
    } else {
        config.states.clone()
    };
    for (len, what) in [
        (m.len(), "m"),
        (states.len(), "states"),
        (config.beta.len(), "beta"),
        (config.offspring.len(), "offspring"),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch(format!("{what} has {len} entries, expected {n}")));
        }
    }
    if m.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument("measure m must be strictly positive".into()));
    }
    let scale = inf_norm(&q).max(1.0);
    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] < 0.0 {
                return Err(Error::NonGenerator(format!(
                    "negative off-diagonal Q[{i}][{j}] = {}",
                    q[(i, j)]
                )));
            }
        }
        let row: f64 = q.row(i).sum();
        if row > 1e-12 * scale {
            return Err(Error::NonGenerator(format!("row {i} of Q sums to {row} > 0")));
        }
    }
    if config.beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
        return Err(Error::InvalidArgument("branching rates must be >= 0".into()));
    }
    for (x, law) in config.offspring.iter().enumerate() {
        law.validate(x)?;
    }
    let alpha: Vec<f64> = (0..n)
        .map(|x| config.beta[x] * (config.offspring[x].mean() - 1.0))
        .collect();
    let a: Vec<f64> = (0..n)
        .map(|x| config.beta[x] * config.offspring[x].factorial_second())
        .collect();
    let mut l = q.clone();
    for x in 0..n {
        l[(x, x)] += alpha[x];
    }
    let k_bound = alpha
        .iter()
        .zip(&a)
        .map(|(al, aa)| al.abs() + aa)
        .fold(0.0, f64::max);
    Ok(FiniteModel {
        states,
        m,
        q,
        beta: config.beta.clone(),
        offspring: config.offspring.clone(),
        alpha,
        a,
        l,
        k_bound,
        design: None,
    })
}

/// Realize a model whose mean generator is exactly `P J P^{-1}`.
pub fn from_jordan_design(design: &JordanDesign) -> Result<FiniteModel> {
    design.validate()?;
    let p = design.p_matrix()?;
    let n = p.nrows();
    let p_inv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("design matrix P is singular".into()))?;
    let l = &p * design.jordan_matrix() * p_inv;
    let tol = 1e-12 * inf_norm(&l).max(1.0);
    let mut q = RMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = l[(i, j)];
            if v < -tol {
                return Err(Error::InfeasibleDesign(format!(
                    "L[{i}][{j}] = {v} is negative; not a branching mean generator"
                )));
            }
            q[(i, j)] = v.max(0.0);
        }
    }
    let mut alpha = vec![0.0; n];
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -off;
        alpha[i] = l[(i, i)] + off;
    }
    let a_target = match &design.a_target {
        ATarget::PerState(v) => {
            if v.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "a_target has {} entries, expected {n}",
                    v.len()
                )));
            }
            v.clone()
        }
        ATarget::Rule(ARule::TwiceAlpha) => alpha.iter().map(|a| 2.0 * a).collect(),
    };
    let (beta, offspring) = split_mechanism(&alpha, &a_target, design.beta_policy)?;
    let config = ModelConfig {
        states: if design.states.is_empty() {
            default_states(n)
        } else {
            design.states.clone()
        },
        m: if design.m.is_empty() { vec![1.0; n] } else { design.m.clone() },
        q: (0..n).map(|i| q.row(i).iter().cloned().collect()).collect(),
        beta,
        offspring,
    };
    let mut model = build_model(&config)?;
    // keep the exact similarity transform rather than the round trip through Q
    model.l = l;
    model.alpha = alpha;
    model.design = Some(design.clone());
    Ok(model)
}

fn split_mechanism(
    alpha: &[f64],
    a_target: &[f64],
    policy: BetaPolicy,
) -> Result<(Vec<f64>, Vec<OffspringLaw>)> {
    let BetaPolicy::ThreePoint { margin } = policy;
    if !(margin >= 0.0) {
        return Err(Error::InvalidArgument("beta margin must be >= 0".into()));
    }
    let beta = alpha.iter().fold(0.0f64, |acc, a| acc.max(*a)) + margin;
    let mut laws = Vec::with_capacity(alpha.len());
    for (x, (&al, &a)) in alpha.iter().zip(a_target).enumerate() {
        if beta == 0.0 {
            if al.abs() > 1e-12 || a.abs() > 1e-12 {
                return Err(Error::UnrealizableMechanism(format!(
                    "state {x}: zero branching rate cannot produce alpha = {al}, A = {a}"
                )));
            }
            laws.push(OffspringLaw(vec![0.0, 1.0, 0.0]));
            continue;
        }
        let p2 = a / (2.0 * beta);
        let p0 = p2 - al / beta;
        let p1 = 1.0 - p0 - p2;
        let clean = |p: f64| if p.abs() < 1e-12 { 0.0 } else { p };
        let (p0, p1, p2) = (clean(p0), clean(p1), clean(p2));
        if p0 < 0.0 || p1 < 0.0 || p2 < 0.0 {
            return Err(Error::UnrealizableMechanism(format!(
                "state {x}: alpha = {al}, A = {a} needs weights ({p0}, {p1}, {p2}) on {{0, 1, 2}}"
            )));
        }
        laws.push(OffspringLaw(vec![p0, p1, p2]));
    }
    Ok((vec![beta; alpha.len()], laws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn yule() -> ModelConfig {
        ModelConfig {
            states: vec![],
            m: vec![1.0],
            q: vec![vec![0.0]],
            beta: vec![1.0],
            offspring: vec![OffspringLaw(vec![0.0, 0.0, 1.0])],
        }
    }

    #[test]
    fn yule_mean_quantities() {
        let model = build_model(&yule()).unwrap();
        assert_eq!(model.alpha, vec![1.0]);
        assert_eq!(model.a, vec![2.0]);
        assert_eq!(model.l[(0, 0)], 1.0);
        assert_eq!(model.k_bound, 3.0);
    }

    #[test]
    fn two_state_generator() {
        let config = ModelConfig {
            states: vec![],
            m: vec![1.0, 1.0],
            q: vec![vec![-2.0 / 3.0, 2.0 / 3.0], vec![1.0 / 3.0, -1.0 / 3.0]],
            beta: vec![2.0, 2.0],
            offspring: vec![OffspringLaw(vec![0.0, 0.0, 1.0]); 2],
        };
        let model = build_model(&config).unwrap();
        assert_eq!(model.alpha, vec![2.0, 2.0]);
        assert_eq!(model.a, vec![4.0, 4.0]);
        let want = [4.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 5.0 / 3.0];
        for (i, w) in want.iter().enumerate() {
            assert_relative_eq!(model.l[(i / 2, i % 2)], *w, epsilon = 1e-15);
        }
        assert!(model.is_irreducible());
    }

    #[test]
    fn pure_death() {
        let mut c = yule();
        c.offspring = vec![OffspringLaw(vec![1.0])];
        let model = build_model(&c).unwrap();
        assert_eq!(model.alpha, vec![-1.0]);
        assert_eq!(model.a, vec![0.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut c = yule();
        c.offspring = vec![OffspringLaw(vec![0.5, 0.4])];
        assert!(matches!(build_model(&c), Err(Error::InvalidLaw(_))));
        let mut c = yule();
        c.q = vec![vec![0.5]];
        assert!(matches!(build_model(&c), Err(Error::NonGenerator(_))));
        let c2 = ModelConfig {
            q: vec![vec![-1.0, -0.5], vec![1.0, -1.0]],
            m: vec![],
            states: vec![],
            beta: vec![1.0; 2],
            offspring: vec![OffspringLaw(vec![0.0, 0.0, 1.0]); 2],
        };
        assert!(matches!(build_model(&c2), Err(Error::NonGenerator(_))));
        let empty = ModelConfig {
            q: vec![],
            m: vec![],
            states: vec![],
            beta: vec![],
            offspring: vec![],
        };
        assert_eq!(build_model(&empty), Err(Error::EmptyState));
    }

    #[test]
    fn killing_rate_from_row_deficit() {
        let c = ModelConfig {
            q: vec![vec![-1.5, 1.0], vec![1.0, -1.0]],
            m: vec![],
            states: vec![],
            beta: vec![0.0; 2],
            offspring: vec![OffspringLaw(vec![0.0, 1.0]); 2],
        };
        let model = build_model(&c).unwrap();
        assert_relative_eq!(model.killing_rate(0), 0.5);
        assert_eq!(model.killing_rate(1), 0.0);
    }

    #[test]
    fn design_reproduces_similarity_transform() {
        let design = JordanDesign {
            p: vec![vec![1.0, 2.0], vec![1.0, -1.0]],
            blocks: vec![DesignBlock::real(2.0, &[1]), DesignBlock::real(1.0, &[1])],
            a_target: ATarget::PerState(vec![4.0, 4.0]),
            beta_policy: BetaPolicy::default(),
            m: vec![],
            states: vec![],
        };
        let model = from_jordan_design(&design).unwrap();
        let want = [4.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 5.0 / 3.0];
        for (i, w) in want.iter().enumerate() {
            assert_relative_eq!(model.l[(i / 2, i % 2)], *w, epsilon = 1e-14);
        }
        // beta = 2 + 1, law on {0,1,2} with mean 1 + 2/3 and A = 4
        assert_relative_eq!(model.beta[0], 3.0);
        assert_relative_eq!(model.alpha[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(model.a[1], 4.0, epsilon = 1e-14);
    }

    #[test]
    fn identity_design_is_yule() {
        let design = JordanDesign {
            p: vec![vec![1.0]],
            blocks: vec![DesignBlock::real(1.0, &[1])],
            a_target: ATarget::Rule(ARule::TwiceAlpha),
            beta_policy: BetaPolicy::ThreePoint { margin: 0.0 },
            m: vec![],
            states: vec![],
        };
        let model = from_jordan_design(&design).unwrap();
        assert_eq!(model.beta, vec![1.0]);
        assert_eq!(model.offspring[0].0, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn infeasible_and_unrealizable_designs() {
        let design = JordanDesign {
            p: vec![vec![1.0, 1.0], vec![1.0, -1.0]],
            blocks: vec![DesignBlock::real(1.0, &[1]), DesignBlock::real(3.0, &[1])],
            a_target: ATarget::PerState(vec![4.0, 4.0]),
            beta_policy: BetaPolicy::default(),
            m: vec![],
            states: vec![],
        };
        assert!(matches!(from_jordan_design(&design), Err(Error::InfeasibleDesign(_))));
        let design = JordanDesign {
            p: vec![vec![1.0, 2.0], vec![1.0, -1.0]],
            blocks: vec![DesignBlock::real(2.0, &[1]), DesignBlock::real(1.0, &[1])],
            a_target: ATarget::PerState(vec![1.0, 1.0]),
            beta_policy: BetaPolicy::default(),
            m: vec![],
            states: vec![],
        };
        assert!(matches!(
            from_jordan_design(&design),
            Err(Error::UnrealizableMechanism(_))
        ));
    }
}
