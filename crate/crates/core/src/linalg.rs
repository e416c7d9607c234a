//! Small dense linear algebra: LU with partial pivoting and thin QR.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// `P·A = L·U` factorisation of a square matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: &Tensor) -> Result<Self> {
        let n = a.rows();
        if a.shape().len() != 2 || a.cols() != n {
            return Err(Error::ShapeMismatch {
                op: "lu",
                lhs: a.shape().to_vec(),
                rhs: vec![n, n],
            });
        }
        let mut lu = a.data().to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = lu.iter().fold(0.0f64, |m, &v| m.max(math::abs(v)));
        for k in 0..n {
            let (mut piv, mut best) = (k, math::abs(lu[k * n + k]));
            for i in k + 1..n {
                let v = math::abs(lu[i * n + k]);
                if v > best {
                    piv = i;
                    best = v;
                }
            }
            if best <= f64::EPSILON * scale * n as f64 || best == 0.0 {
                return Err(Error::SingularMatrix);
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / d;
                lu[i * n + k] = f;
                for j in k + 1..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
        Ok(Lu { n, lu, perm, sign })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.len(),
            });
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu[i * n + j] * x[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu[i * n + j] * x[j];
            }
            x[i] /= self.lu[i * n + i];
        }
        Ok(x)
    }

    pub fn det(&self) -> f64 {
        (0..self.n).fold(self.sign, |acc, i| acc * self.lu[i * self.n + i])
    }

    pub fn log_abs_det(&self) -> f64 {
        (0..self.n).map(|i| math::ln(math::abs(self.lu[i * self.n + i]))).sum()
    }
}

/// Orthonormal `Q` (`m × n`, `m ≥ n`) of the thin QR factorisation, via
/// Householder reflections.
pub fn thin_q(a: &Tensor) -> Result<Tensor> {
    let (m, n) = (a.rows(), a.cols());
    if m < n {
        return Err(Error::invalid("thin QR needs at least as many rows as columns"));
    }
    let mut r = a.data().to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let mut v: Vec<f64> = (k..m).map(|i| r[i * n + k]).collect();
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        if norm == 0.0 {
            return Err(Error::SingularMatrix);
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = math::sqrt(v.iter().map(|x| x * x).sum());
        v.iter_mut().for_each(|x| *x /= vnorm);
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * r[i * n + j]).sum();
            for i in k..m {
                r[i * n + j] -= 2.0 * v[i - k] * dot;
            }
        }
        reflectors.push(v);
    }
    // Q = H_0 H_1 … H_{n-1} applied to the first n columns of I.
    let mut q = vec![0.0; m * n];
    for j in 0..n {
        q[j * n + j] = 1.0;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        for j in 0..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * q[i * n + j]).sum();
            for i in k..m {
                q[i * n + j] -= 2.0 * v[i - k] * dot;
            }
        }
    }
    Tensor::matrix(m, n, q)
}
