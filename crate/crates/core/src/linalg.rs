//! Dense linear-algebra helpers shared by the spectral and moment code.
//!
//! The matrix exponential uses scaling and squaring around a fixed
//! degree-13 Padé approximant (Higham 2005). Everything else is thin glue
//! over `nalgebra`.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type RMat = DMatrix<f64>;
pub type CMat = DMatrix<C64>;

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the [13/13] approximant reaches unit roundoff.
const THETA13: f64 = 5.371_920_351_148_152;

pub fn one_norm(a: &RMat) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn inf_norm(a: &RMat) -> f64 {
    (0..a.nrows())
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(a)` by scaling and squaring with a [13/13] Padé approximant.
pub fn expm(a: &RMat) -> RMat {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return RMat::zeros(0, 0);
    }
    if n == 1 {
        return RMat::from_element(1, 1, a[(0, 0)].exp());
    }
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-s);
    let b = &PADE13;
    let id = RMat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// `exp(t a)` applied to a complex vector.
pub fn expm_apply(a: &RMat, t: f64, v: &[C64]) -> Vec<C64> {
    let e = expm(&(a * t));
    apply_real(&e, v)
}

pub fn apply_real(a: &RMat, v: &[C64]) -> Vec<C64> {
    let n = a.nrows();
    (0..n)
        .map(|i| (0..a.ncols()).map(|j| v[j] * a[(i, j)]).sum())
        .collect()
}

pub fn to_complex(a: &RMat) -> CMat {
    a.map(|x| C64::new(x, 0.0))
}

/// Orthonormal basis of the numerical null space of `a`, singular values
/// below `tol` counted as zero. Returns at least `min_dim` vectors.
pub fn null_space<T>(a: &DMatrix<T>, tol: f64, min_dim: usize) -> DMatrix<T>
where
    T: ComplexField<RealField = f64>,
{
    let n = a.ncols();
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^H");
    let sv = &svd.singular_values;
    // nalgebra returns fewer singular values than columns for wide inputs
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].partial_cmp(&sv[j]).unwrap());
    if sv.len() < n {
        // pad to square so V spans the full column space
        let full = a.clone().insert_rows(a.nrows(), n - sv.len(), T::zero());
        return null_space(&full, tol, min_dim);
    }
    let dim = order
        .iter()
        .filter(|&&i| sv[i] <= tol)
        .count()
        .max(min_dim)
        .min(n);
    let mut out = DMatrix::<T>::zeros(n, dim);
    for (c, &i) in order.iter().take(dim).enumerate() {
        for r in 0..n {
            out[(r, c)] = v_t[(i, r)].clone().conjugate();
        }
    }
    out
}

/// Numerical rank with singular values below `tol` dropped.
pub fn rank<T>(a: &DMatrix<T>, tol: f64) -> usize
where
    T: ComplexField<RealField = f64>,
{
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .filter(|&&s| s > tol)
        .count()
}

pub fn condition_number(a: &CMat) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Real Jordan matrix for a list of (eigenvalue, chain sizes) blocks.
/// A complex eigenvalue `a + ib` (b > 0) stands for the conjugate pair and
/// occupies `2d` columns per chain of length `d`, in the layout
/// `[x1, y1, x2, y2, ...]` with 2x2 blocks `[[a, b], [-b, a]]`.
pub fn real_jordan_matrix(blocks: &[(C64, Vec<usize>)]) -> RMat {
    let n: usize = blocks
        .iter()
        .map(|(mu, sizes)| {
            let w = if mu.im != 0.0 { 2 } else { 1 };
            w * sizes.iter().sum::<usize>()
        })
        .sum();
    let mut j = RMat::zeros(n, n);
    let mut off = 0;
    for (mu, sizes) in blocks {
        for &d in sizes {
            if mu.im == 0.0 {
                for i in 0..d {
                    j[(off + i, off + i)] = mu.re;
                    if i + 1 < d {
                        j[(off + i, off + i + 1)] = 1.0;
                    }
                }
                off += d;
            } else {
                for i in 0..d {
                    let c = off + 2 * i;
                    j[(c, c)] = mu.re;
                    j[(c + 1, c + 1)] = mu.re;
                    j[(c, c + 1)] = mu.im;
                    j[(c + 1, c)] = -mu.im;
                    if i + 1 < d {
                        j[(c, c + 2)] = 1.0;
                        j[(c + 1, c + 3)] = 1.0;
                    }
                }
                off += 2 * d;
            }
        }
    }
    j
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_scalar_and_diagonal() {
        let a = RMat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], 1f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-2f64).exp(), max_relative = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);
    }

    #[test]
    fn expm_nilpotent_is_polynomial() {
        let a = RMat::from_row_slice(3, 3, &[0.0, 3.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 1)], 3.0, max_relative = 1e-14);
        assert_relative_eq!(e[(0, 2)], 4.5, max_relative = 1e-14);
        assert_relative_eq!(e[(1, 2)], 3.0, max_relative = 1e-14);
    }

    #[test]
    fn expm_rotation_and_large_norm() {
        let w = 7.5;
        let a = RMat::from_row_slice(2, 2, &[0.0, w, -w, 0.0]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], w.cos(), epsilon = 1e-13);
        assert_relative_eq!(e[(0, 1)], w.sin(), epsilon = 1e-13);
        // exp(20 L) for a generator-like matrix versus eigen-reconstruction
        let l = RMat::from_row_slice(2, 2, &[4.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 5.0 / 3.0]);
        let e = expm(&(&l * 20.0));
        let p = RMat::from_row_slice(2, 2, &[1.0, 2.0, 1.0, -1.0]);
        let d = RMat::from_diagonal(&dvec(&[40f64.exp(), 20f64.exp()]));
        let want = &p * d * p.try_inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(e[(i, j)], want[(i, j)], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn real_jordan_layout() {
        let j = real_jordan_matrix(&[
            (C64::new(1.0, 0.0), vec![1]),
            (C64::new(0.3, 0.4), vec![1]),
        ]);
        assert_eq!(j.nrows(), 3);
        assert_eq!(j[(1, 2)], 0.4);
        assert_eq!(j[(2, 1)], -0.4);
    }
}
