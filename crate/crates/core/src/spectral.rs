//! Mean semigroup and its nonsymmetric spectral decomposition.
//!
//! The generator `L` of `T_t = exp(tL)` has eigenvalues `-lambda_k`, listed
//! so that `lambda_1 < Re lambda_2 <= Re lambda_3 <= ...`. Each eigenvalue
//! owns a block of right generalized eigenfunctions `Phi_k` arranged in
//! Jordan chains, so that
//!
//! ```text
//! T_t Phi_k^T = exp(-lambda_k t) Phi_k^T D_k(t)
//! ```
//!
//! with `D_k(t)` the unipotent block-polynomial matrix. The left functions
//! `Psi_k` are normalized against the right ones in `L^2(m)`:
//! `<phi_l^(j), psi_n^(k)>_m = 1` iff `(j, l) = (k, n)`.
//!
//! Jordan structure of an arbitrary matrix is numerically ill-posed, so
//! eigenvalues are only merged into one block when they agree within the
//! tie tolerance. Models realized from a [`JordanDesign`] carry their exact
//! structure and skip the eigen-solver entirely.

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{ComplexField, DMatrix};

use crate::error::{Error, Result};
use crate::function::FunctionOnE;
use crate::linalg::{
    self, apply_real, condition_number, expm, factorial, inf_norm, null_space, rank, CMat, RMat,
    C64,
};
use crate::model::{FiniteModel, JordanDesign};

/// Tolerances used by [`spectral_decompose_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeOptions {
    /// Eigenvalues closer than `tie_rel_tol * ||L||` form one block.
    pub tie_rel_tol: f64,
    /// Singular values of the restricted nilpotent part below
    /// `rank_rel_tol * ||L||` are treated as zero.
    pub rank_rel_tol: f64,
    /// Largest acceptable condition number of the generalized eigenbasis.
    pub max_condition: f64,
    /// Tolerance for `exp(-lambda_j) == exp(-lambda_k)` with `j != k`.
    pub exp_tie_tol: f64,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            tie_rel_tol: 1e-8,
            rank_rel_tol: 1e-6,
            max_condition: 1e8,
            exp_tie_tol: 1e-10,
        }
    }
}

/// All data attached to one eigenvalue `-lambda_k` of the mean generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBlock {
    pub lambda: C64,
    /// Jordan chain lengths `d_{k,1}, ..., d_{k,r_k}`.
    pub chains: Vec<usize>,
    /// `n x n_k`, column `l` is `phi_l^(k)`.
    pub phi: CMat,
    /// `n x n_k`, column `l` is `psi_l^(k)`.
    pub psi: CMat,
    /// Index of the block carrying `conj(lambda_k)`.
    pub conj_partner: usize,
}

impl SpectralBlock {
    pub fn n_k(&self) -> usize {
        self.chains.iter().sum()
    }

    /// Ascent: the longest Jordan chain.
    pub fn nu(&self) -> usize {
        self.chains.iter().copied().max().unwrap_or(0)
    }

    pub fn re(&self) -> f64 {
        self.lambda.re
    }

    pub fn im(&self) -> f64 {
        self.lambda.im
    }

    pub fn is_real(&self) -> bool {
        self.lambda.im == 0.0
    }

    pub fn phi_fn(&self, l: usize) -> FunctionOnE {
        FunctionOnE::complex(self.phi.column(l).iter().cloned().collect())
    }

    pub fn psi_fn(&self, l: usize) -> FunctionOnE {
        FunctionOnE::complex(self.psi.column(l).iter().cloned().collect())
    }

    /// Row `x` of `Phi_k`, i.e. `Phi_k(x)^T`.
    pub fn phi_row(&self, x: usize) -> Vec<C64> {
        self.phi.row(x).iter().cloned().collect()
    }

    pub fn d(&self, t: f64) -> RMat {
        block_polynomial(self, t)
    }
}

/// `D_k(t)`: block diagonal over the Jordan chains, entry `t^q / q!` on the
/// `q`-th superdiagonal of every chain. Negative `t` gives the inverse.
pub fn block_polynomial(block: &SpectralBlock, t: f64) -> RMat {
    let n = block.n_k();
    let mut d = RMat::zeros(n, n);
    let mut off = 0;
    for &len in &block.chains {
        for i in 0..len {
            for q in 0..len - i {
                d[(off + i, off + i + q)] = t.powi(q as i32) / factorial(q);
            }
        }
        off += len;
    }
    d
}

/// Biorthogonal generalized eigen-decomposition of a model's mean generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub blocks: Vec<SpectralBlock>,
    /// Strictly positive, `||phi1||_{2,m} = 1`.
    pub phi1: Vec<f64>,
    /// Strictly positive, `<phi1, psi1>_m = 1`.
    pub psi1: Vec<f64>,
    pub m: Vec<f64>,
    /// Scale used for eigenvalue comparisons.
    pub scale: f64,
}

/// Relation of `lambda_1` to twice the real part of a block or function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `lambda_1 > 2 Re`
    Large,
    /// `lambda_1 = 2 Re`
    Critical,
    /// `lambda_1 < 2 Re`
    Small,
}

impl SpectralDecomposition {
    pub fn n(&self) -> usize {
        self.m.len()
    }

    pub fn lambda1(&self) -> f64 {
        self.blocks[0].lambda.re
    }

    /// Tolerance for deciding equality between real parts of eigenvalues.
    pub fn re_tol(&self) -> f64 {
        1e-9 * self.scale.max(1.0)
    }

    pub fn regime_of_re(&self, re: f64) -> Regime {
        let l1 = self.lambda1();
        if (l1 - 2.0 * re).abs() <= self.re_tol() {
            Regime::Critical
        } else if l1 > 2.0 * re {
            Regime::Large
        } else {
            Regime::Small
        }
    }

    pub fn block_regime(&self, k: usize) -> Regime {
        self.regime_of_re(self.blocks[k].re())
    }

    /// `<f, Psi_j>_m` for every block `j`.
    pub fn coefficients(&self, f: &FunctionOnE) -> Vec<Vec<C64>> {
        (0..self.blocks.len())
            .map(|j| self.block_coefficients(j, f))
            .collect()
    }

    pub fn block_coefficients(&self, j: usize, f: &FunctionOnE) -> Vec<C64> {
        let b = &self.blocks[j];
        (0..b.n_k())
            .map(|l| {
                (0..self.n())
                    .map(|x| f[x] * b.psi[(x, l)].conj() * self.m[x])
                    .sum()
            })
            .collect()
    }

    /// `sum_j Phi_j^T b_j`.
    pub fn reconstruct(&self, coeffs: &[Vec<C64>]) -> FunctionOnE {
        let n = self.n();
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (b, c) in self.blocks.iter().zip(coeffs) {
            for (l, cl) in c.iter().enumerate() {
                for (x, o) in out.iter_mut().enumerate() {
                    *o += b.phi[(x, l)] * cl;
                }
            }
        }
        FunctionOnE::complex(out)
    }

    /// `T_t f` evaluated through the spectral expansion.
    pub fn semigroup(&self, t: f64, f: &FunctionOnE) -> FunctionOnE {
        let n = self.n();
        let mut out = vec![C64::new(0.0, 0.0); n];
        for (j, b) in self.blocks.iter().enumerate() {
            let coeff = self.block_coefficients(j, f);
            let v = mat_vec(&b.d(t), &coeff);
            let e = (-b.lambda * t).exp();
            for (x, o) in out.iter_mut().enumerate() {
                let s: C64 = (0..b.n_k()).map(|l| b.phi[(x, l)] * v[l]).sum();
                *o += e * s;
            }
        }
        FunctionOnE::complex(out)
    }

    /// Largest deviation of the Gram matrix `<phi_l^(j), psi_n^(k)>_m` from
    /// the identity.
    pub fn biorthogonality_residual(&self) -> f64 {
        let phis: Vec<Vec<C64>> = self
            .blocks
            .iter()
            .flat_map(|b| (0..b.n_k()).map(move |l| b.phi.column(l).iter().cloned().collect()))
            .collect();
        let psis: Vec<Vec<C64>> = self
            .blocks
            .iter()
            .flat_map(|b| (0..b.n_k()).map(move |l| b.psi.column(l).iter().cloned().collect()))
            .collect();
        let mut worst = 0.0f64;
        for (i, p) in phis.iter().enumerate() {
            for (j, q) in psis.iter().enumerate() {
                let g = crate::function::inner_m(p, q, &self.m);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).norm());
            }
        }
        worst
    }

    /// Total dimension covered by the blocks.
    pub fn dimension(&self) -> usize {
        self.blocks.iter().map(SpectralBlock::n_k).sum()
    }
}

pub(crate) fn mat_vec(d: &RMat, v: &[C64]) -> Vec<C64> {
    apply_real(d, v)
}

/// `T_t f = exp(tL) f`.
pub fn mean_semigroup(model: &FiniteModel, t: f64, f: &FunctionOnE) -> Result<FunctionOnE> {
    check_time(t)?;
    check_len(model, f)?;
    if t == 0.0 {
        return Ok(f.clone());
    }
    Ok(FunctionOnE::complex(linalg::expm_apply(&model.l, t, f.values())))
}

/// `T^_t g = M^{-1} exp(t L^T) M g`, the `L^2(m)` adjoint of `T_t`.
pub fn adjoint_semigroup(model: &FiniteModel, t: f64, g: &FunctionOnE) -> Result<FunctionOnE> {
    check_time(t)?;
    check_len(model, g)?;
    if t == 0.0 {
        return Ok(g.clone());
    }
    let e = expm(&(model.l.transpose() * t));
    let mg: Vec<C64> = g.values().iter().zip(&model.m).map(|(v, w)| v * *w).collect();
    let out = apply_real(&e, &mg);
    Ok(FunctionOnE::complex(
        out.into_iter().zip(&model.m).map(|(v, w)| v / *w).collect(),
    ))
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::NegativeTime(t));
    }
    Ok(())
}

pub(crate) fn check_len(model: &FiniteModel, f: &FunctionOnE) -> Result<()> {
    if f.len() != model.n() {
        return Err(Error::DimensionMismatch(format!(
            "function has {} values, model has {} states",
            f.len(),
            model.n()
        )));
    }
    Ok(())
}

pub fn spectral_decompose(model: &FiniteModel) -> Result<SpectralDecomposition> {
    spectral_decompose_with(model, &DecomposeOptions::default())
}

pub fn spectral_decompose_with(
    model: &FiniteModel,
    opts: &DecomposeOptions,
) -> Result<SpectralDecomposition> {
    if !model.is_irreducible() {
        return Err(Error::Reducible(
            "the motion generator is not irreducible".into(),
        ));
    }
    let raw = match &model.design {
        Some(design) => design_blocks(design)?,
        None => numeric_blocks(&model.l, opts)?,
    };
    assemble(raw, &model.m, inf_norm(&model.l), opts)
}

/// One eigenvalue with its chain vectors, before ordering and normalization.
struct RawBlock {
    mu: C64,
    chains: Vec<usize>,
    vectors: CMat,
    /// Index of the conjugate partner in the raw list.
    partner: usize,
}

fn design_blocks(design: &JordanDesign) -> Result<Vec<RawBlock>> {
    let p = design.p_matrix()?;
    let n = p.nrows();
    let mut raw = Vec::new();
    let mut off = 0;
    for b in &design.blocks {
        let total: usize = b.sizes.iter().sum();
        if b.is_pair() {
            let mut v = CMat::zeros(n, total);
            let mut col = 0;
            for &d in &b.sizes {
                for j in 0..d {
                    for x in 0..n {
                        v[(x, col)] = C64::new(p[(x, off + 2 * j)], p[(x, off + 2 * j + 1)]);
                    }
                    col += 1;
                }
                off += 2 * d;
            }
            let idx = raw.len();
            raw.push(RawBlock {
                mu: b.mu(),
                chains: b.sizes.clone(),
                vectors: v.clone(),
                partner: idx + 1,
            });
            raw.push(RawBlock {
                mu: b.mu().conj(),
                chains: b.sizes.clone(),
                vectors: v.map(|z| z.conj()),
                partner: idx,
            });
        } else {
            let v = CMat::from_fn(n, total, |x, c| C64::new(p[(x, off + c)], 0.0));
            off += total;
            let idx = raw.len();
            raw.push(RawBlock {
                mu: b.mu(),
                chains: b.sizes.clone(),
                vectors: v,
                partner: idx,
            });
        }
    }
    Ok(raw)
}

fn numeric_blocks(l: &RMat, opts: &DecomposeOptions) -> Result<Vec<RawBlock>> {
    let n = l.nrows();
    let norm = inf_norm(l);
    let tie = opts.tie_rel_tol * norm;
    let rank_tol = opts.rank_rel_tol * norm.max(f64::MIN_POSITIVE);
    let eig: Vec<C64> = if n == 1 {
        vec![C64::new(l[(0, 0)], 0.0)]
    } else {
        l.clone()
            .schur()
            .complex_eigenvalues()
            .iter()
            .cloned()
            .collect()
    };
    // single-linkage clusters
    let mut cluster: Vec<usize> = (0..n).collect();
    fn root(c: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while c[r] != r {
            r = c[r];
        }
        c[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            if (eig[i] - eig[j]).norm() <= tie {
                let (a, b) = (root(&mut cluster, i), root(&mut cluster, j));
                cluster[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seen = vec![usize::MAX; n];
    for i in 0..n {
        let r = root(&mut cluster, i);
        if seen[r] == usize::MAX {
            seen[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[seen[r]].push(i);
    }
    let mut raw = Vec::new();
    for g in &groups {
        let k = g.len();
        let mu: C64 = g.iter().map(|&i| eig[i]).sum::<C64>() / k as f64;
        if mu.im.abs() <= tie.max(1e-14 * norm) {
            let a = l - RMat::identity(n, n) * mu.re;
            let (chains, v) = generalized_chains(&a, k, rank_tol);
            let idx = raw.len();
            raw.push(RawBlock {
                mu: C64::new(mu.re, 0.0),
                chains,
                vectors: v.map(|x| C64::new(x, 0.0)),
                partner: idx,
            });
        } else if mu.im > 0.0 {
            let a = linalg::to_complex(l) - CMat::identity(n, n) * mu;
            let (chains, v) = generalized_chains(&a, k, rank_tol);
            let idx = raw.len();
            raw.push(RawBlock {
                mu,
                chains: chains.clone(),
                vectors: v.clone(),
                partner: idx + 1,
            });
            raw.push(RawBlock {
                mu: mu.conj(),
                chains,
                vectors: v.map(|z| z.conj()),
                partner: idx,
            });
        }
    }
    let covered: usize = raw.iter().map(|b| b.chains.iter().sum::<usize>()).sum();
    if covered != n {
        return Err(Error::TieUnresolved(format!(
            "eigenvalue clusters cover {covered} of {n} dimensions; conjugate pairs did not match"
        )));
    }
    Ok(raw)
}

/// Jordan chains of `a` (which must be singular of algebraic multiplicity
/// `k` at zero) spanning its generalized null space.
fn generalized_chains<T>(a: &DMatrix<T>, k: usize, rank_tol: f64) -> (Vec<usize>, DMatrix<T>)
where
    T: ComplexField<RealField = f64> + Copy,
{
    if k == 1 {
        return (vec![1], null_space(a, -1.0, 1));
    }
    let mut ak = a.clone();
    for _ in 1..k {
        ak = &ak * a;
    }
    let basis = null_space(&ak, -1.0, k);
    let restricted = basis.adjoint() * a * &basis;
    let (chains, c) = nilpotent_chains(&restricted, rank_tol);
    (chains, basis * c)
}

/// Jordan chains of a (numerically) nilpotent matrix. Columns of the
/// returned matrix are grouped by chain, each chain listed from its
/// eigenvector upwards so that `N v_{i+1} = v_i`.
fn nilpotent_chains<T>(nmat: &DMatrix<T>, tol: f64) -> (Vec<usize>, DMatrix<T>)
where
    T: ComplexField<RealField = f64> + Copy,
{
    let k = nmat.nrows();
    let norm = nmat.iter().map(|z| z.modulus()).fold(0.0, f64::max).max(1.0);
    let mut powers = vec![DMatrix::<T>::identity(k, k)];
    let mut ranks = vec![k];
    while *ranks.last().unwrap() > 0 && powers.len() <= k {
        let next = powers.last().unwrap() * nmat;
        let j = powers.len() as i32;
        ranks.push(rank(&next, tol * norm.powi(j - 1)));
        powers.push(next);
    }
    // ranks must be non-increasing and end at zero
    for j in 1..ranks.len() {
        ranks[j] = ranks[j].min(ranks[j - 1]);
    }
    *ranks.last_mut().unwrap() = 0;
    let nu = ranks.len() - 1;
    let at_least = |j: usize| -> usize {
        if j > nu {
            0
        } else {
            ranks[j - 1] - ranks[j]
        }
    };
    let kernel = |j: usize| -> DMatrix<T> {
        if j == 0 {
            DMatrix::<T>::zeros(k, 0)
        } else {
            null_space(&powers[j.min(nu)], -1.0, k - ranks[j.min(nu)])
        }
    };
    let mut generators: Vec<(usize, nalgebra::DVector<T>)> = Vec::new();
    for len in (1..=nu).rev() {
        let exact = at_least(len) - at_least(len + 1);
        if exact == 0 {
            continue;
        }
        let mut used: Vec<nalgebra::DVector<T>> = kernel(len - 1)
            .column_iter()
            .map(|c| c.into_owned())
            .collect();
        for (l, g) in &generators {
            used.push(&powers[*l - len] * g);
        }
        let target = kernel(len);
        let residual = if used.is_empty() {
            target
        } else {
            let span = DMatrix::from_columns(&used);
            let q = orthonormal_columns(&span);
            &target - &q * (q.adjoint() * &target)
        };
        let svd = residual.svd(true, false);
        let u = svd.u.expect("requested U");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&i, &j| {
            svd.singular_values[j]
                .partial_cmp(&svd.singular_values[i])
                .unwrap_or(Ordering::Equal)
        });
        for &i in order.iter().take(exact) {
            generators.push((len, u.column(i).into_owned()));
        }
    }
    let mut chains = Vec::new();
    let mut cols = Vec::new();
    for (len, g) in &generators {
        chains.push(*len);
        for i in 0..*len {
            cols.push(&powers[len - 1 - i] * g);
        }
    }
    (chains, DMatrix::from_columns(&cols))
}

fn orthonormal_columns<T>(a: &DMatrix<T>) -> DMatrix<T>
where
    T: ComplexField<RealField = f64> + Copy,
{
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<_> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * smax.max(1e-300))
        .map(|i| u.column(i).into_owned())
        .collect();
    if keep.is_empty() {
        DMatrix::zeros(a.nrows(), 0)
    } else {
        DMatrix::from_columns(&keep)
    }
}

fn m_norm(v: &[C64], m: &[f64]) -> f64 {
    v.iter().zip(m).map(|(z, w)| z.norm_sqr() * w).sum::<f64>().sqrt()
}

fn assemble(
    mut raw: Vec<RawBlock>,
    m: &[f64],
    l_norm: f64,
    opts: &DecomposeOptions,
) -> Result<SpectralDecomposition> {
    let n = m.len();
    let tie = opts.tie_rel_tol * l_norm.max(1.0);
    // lambda = -mu; ascending Re lambda, ties: Im lambda >= 0 ascending, then conjugates
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (-raw[a].mu, -raw[b].mu);
        if (la.re - lb.re).abs() > tie {
            return la.re.partial_cmp(&lb.re).unwrap_or(Ordering::Equal);
        }
        let key = |z: C64| (z.im < -tie, z.im.abs());
        let (ka, kb) = (key(la), key(lb));
        ka.0.cmp(&kb.0)
            .then(ka.1.partial_cmp(&kb.1).unwrap_or(Ordering::Equal))
    });
    let mut position = vec![0; raw.len()];
    for (pos, &i) in order.iter().enumerate() {
        position[i] = pos;
    }

    // leading block: real, simple, of one sign
    let lead = order[0];
    if raw[lead].mu.im != 0.0 || raw[lead].chains != [1] {
        return Err(Error::Reducible(
            "leading eigenvalue is not real and simple".into(),
        ));
    }
    if raw.len() > 1 {
        let second = -raw[order[1]].mu;
        if (second.re - (-raw[lead].mu.re)).abs() <= tie {
            return Err(Error::Reducible(
                "leading eigenvalue is not strictly dominant".into(),
            ));
        }
    }
    {
        let v: Vec<C64> = raw[lead].vectors.column(0).iter().cloned().collect();
        let pivot = v
            .iter()
            .cloned()
            .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap())
            .unwrap();
        let phase = pivot / pivot.norm();
        let scaled: Vec<C64> = v.iter().map(|z| z / phase).collect();
        let max = scaled.iter().map(|z| z.re).fold(0.0, f64::max);
        if scaled.iter().any(|z| z.re <= 1e-12 * max || z.im.abs() > 1e-8 * max) {
            return Err(Error::Reducible(
                "leading eigenfunction is not strictly positive".into(),
            ));
        }
        let norm = m_norm(&scaled, m);
        for x in 0..n {
            raw[lead].vectors[(x, 0)] = C64::new(scaled[x].re / norm, 0.0);
        }
    }

    // normalize non-design chains: unit eigenvector, real-positive pivot
    // (design vectors are taken as given)
    let mut p = CMat::zeros(n, n);
    let mut col = 0;
    let mut spans = vec![(0, 0); raw.len()];
    for &i in &order {
        let w = raw[i].vectors.ncols();
        for c in 0..w {
            for x in 0..n {
                p[(x, col + c)] = raw[i].vectors[(x, c)];
            }
        }
        spans[i] = (col, w);
        col += w;
    }
    if col != n {
        return Err(Error::TieUnresolved(format!(
            "generalized eigenvectors span {col} of {n} dimensions"
        )));
    }
    let cond = condition_number(&p);
    if !(cond <= opts.max_condition) {
        return Err(Error::TieUnresolved(format!(
            "generalized eigenbasis has condition number {cond:.3e}; eigenvalues too close to separate"
        )));
    }
    let p_inv = p
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::TieUnresolved("generalized eigenbasis is singular".into()))?;

    let mut blocks: Vec<SpectralBlock> = Vec::with_capacity(raw.len());
    for &i in &order {
        let (start, w) = spans[i];
        let real = raw[i].mu.im == 0.0;
        let phi = CMat::from_fn(n, w, |x, c| {
            let z = p[(x, start + c)];
            if real {
                C64::new(z.re, 0.0)
            } else {
                z
            }
        });
        let psi = CMat::from_fn(n, w, |x, c| {
            let z = p_inv[(start + c, x)].conj() / m[x];
            if real {
                C64::new(z.re, 0.0)
            } else {
                z
            }
        });
        blocks.push(SpectralBlock {
            lambda: -raw[i].mu,
            chains: raw[i].chains.clone(),
            phi,
            psi,
            conj_partner: position[raw[i].partner],
        });
    }
    // exact conjugate symmetry between partners
    for k in 0..blocks.len() {
        let kp = blocks[k].conj_partner;
        if kp > k {
            blocks[kp].psi = blocks[k].psi.map(|z| z.conj());
            blocks[kp].phi = blocks[k].phi.map(|z| z.conj());
            blocks[kp].lambda = blocks[k].lambda.conj();
        }
    }
    for j in 0..blocks.len() {
        for k in j + 1..blocks.len() {
            let d = blocks[j].lambda - blocks[k].lambda;
            let tol = opts.exp_tie_tol * (1.0 + blocks[j].lambda.norm());
            let m_turns = (d.im / (2.0 * PI)).round();
            if d.re.abs() <= tol && m_turns != 0.0 && (d.im - 2.0 * PI * m_turns).abs() <= tol {
                return Err(Error::TieUnresolved(format!(
                    "exp(-lambda_{}) = exp(-lambda_{}); rescale time before decomposing",
                    j + 1,
                    k + 1
                )));
            }
        }
    }
    let phi1: Vec<f64> = blocks[0].phi.column(0).iter().map(|z| z.re).collect();
    let psi1: Vec<f64> = blocks[0].psi.column(0).iter().map(|z| z.re).collect();
    if psi1.iter().any(|v| *v <= 0.0) {
        return Err(Error::Reducible(
            "leading left eigenfunction is not strictly positive".into(),
        ));
    }
    let scale = blocks.iter().map(|b| b.lambda.norm()).fold(l_norm, f64::max);
    Ok(SpectralDecomposition {
        blocks,
        phi1,
        psi1,
        m: m.to_vec(),
        scale,
    })
}
