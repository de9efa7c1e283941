use std::ops::{Add, Index, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::linalg::C64;

/// A (possibly complex) function on the finite state space, stored by value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionOnE {
    values: Vec<C64>,
    real: bool,
}

impl FunctionOnE {
    pub fn real(values: &[f64]) -> Self {
        Self {
            values: values.iter().map(|&v| C64::new(v, 0.0)).collect(),
            real: true,
        }
    }

    pub fn complex(values: Vec<C64>) -> Self {
        let real = values.iter().all(|v| v.im == 0.0);
        Self { values, real }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Self::real(&vec![c; n])
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when every value has zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn re(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn im(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.im).collect()
    }

    pub fn conj(&self) -> Self {
        Self::complex(self.values.iter().map(|v| v.conj()).collect())
    }

    pub fn abs_sq(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Real part, dropping the imaginary part if it is below `tol` everywhere.
    pub fn realify(&self, tol: f64) -> Option<Vec<f64>> {
        if self.values.iter().all(|v| v.im.abs() <= tol) {
            Some(self.re())
        } else {
            None
        }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::complex(self.values.iter().map(|v| v * c).collect())
    }

    /// `<self, g>_m = sum_x self(x) conj(g(x)) m(x)`.
    pub fn inner(&self, g: &FunctionOnE, m: &[f64]) -> C64 {
        inner_m(&self.values, &g.values, m)
    }

    pub fn norm(&self, m: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(m)
            .map(|(v, w)| v.norm_sqr() * w)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

pub fn inner_m(f: &[C64], g: &[C64], m: &[f64]) -> C64 {
    f.iter()
        .zip(g)
        .zip(m)
        .map(|((a, b), w)| a * b.conj() * *w)
        .sum()
}

pub fn inner_real(f: &[f64], g: &[f64], m: &[f64]) -> f64 {
    f.iter().zip(g).zip(m).map(|((a, b), w)| a * b * w).sum()
}

impl Index<usize> for FunctionOnE {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.values[i]
    }
}

impl From<Vec<f64>> for FunctionOnE {
    fn from(v: Vec<f64>) -> Self {
        Self::real(&v)
    }
}

impl From<Vec<C64>> for FunctionOnE {
    fn from(v: Vec<C64>) -> Self {
        Self::complex(v)
    }
}

impl Add for &FunctionOnE {
    type Output = FunctionOnE;
    fn add(self, rhs: &FunctionOnE) -> FunctionOnE {
        FunctionOnE::complex(self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &FunctionOnE {
    type Output = FunctionOnE;
    fn sub(self, rhs: &FunctionOnE) -> FunctionOnE {
        FunctionOnE::complex(self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for &FunctionOnE {
    type Output = FunctionOnE;
    fn mul(self, c: f64) -> FunctionOnE {
        FunctionOnE::complex(self.values.iter().map(|a| a * c).collect())
    }
}
