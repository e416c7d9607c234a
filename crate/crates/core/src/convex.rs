//! Strongly convex potentials `ψ` and their Fenchel-conjugate gradients.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// A smooth, strongly convex `ψ: Rᵈ → R`.
///
/// `conjugate_grad` must invert `grad` (`∇ψ* = (∇ψ)⁻¹`), and the two Hessian
/// actions are the differentials of `grad` and `conjugate_grad`.
pub trait ConvexPotential {
    fn dim(&self) -> usize;
    fn value(&self, v: &[f64]) -> f64;
    fn grad(&self, v: &[f64]) -> Vec<f64>;
    fn conjugate_grad(&self, w: &[f64]) -> Vec<f64>;
    /// `D_v ∇ψ [u]`.
    fn hessian_apply(&self, v: &[f64], u: &[f64]) -> Vec<f64>;
    /// `D_w ∇ψ* [u]`.
    fn conjugate_hessian_apply(&self, w: &[f64], u: &[f64]) -> Vec<f64>;
    /// Modulus `μ > 0` with `(∇ψ(v) − ∇ψ(w))·(v − w) ≥ μ‖v − w‖²`.
    fn strong_convexity(&self) -> f64;
}

/// `ψ(v) = ½ vᵀ A⁻¹ v` with `A = diag(λ₁, …, λ_d)`, `λ_i = exp(a_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalQuadratic {
    log_variances: Vec<f64>,
    variances: Vec<f64>,
}

impl DiagonalQuadratic {
    /// Unit variances (`a = 0`).
    pub fn isotropic(dim: usize) -> Self {
        DiagonalQuadratic {
            log_variances: alloc::vec![0.0; dim],
            variances: alloc::vec![1.0; dim],
        }
    }

    pub fn from_variances(variances: &[f64]) -> Result<Self> {
        if let Some(bad) = variances.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(alloc::format!(
                "variances must be positive and finite, got {bad}"
            )));
        }
        Ok(DiagonalQuadratic {
            log_variances: variances.iter().map(|&v| math::ln(v)).collect(),
            variances: variances.to_vec(),
        })
    }

    pub fn from_log_variances(log_variances: &[f64]) -> Result<Self> {
        let variances: Vec<f64> = log_variances.iter().map(|&a| math::exp(a)).collect();
        if variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("log-variances overflow"));
        }
        Ok(DiagonalQuadratic {
            log_variances: log_variances.to_vec(),
            variances,
        })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn log_variances(&self) -> &[f64] {
        &self.log_variances
    }

    /// 0-based axis indices ordered by decreasing variance, ties broken by
    /// ascending index.
    pub fn sorted_variance_order(&self) -> Vec<usize> {
        variance_order(&self.variances)
    }
}

/// Stable decreasing-variance order of `variances` (0-based).
pub fn variance_order(variances: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..variances.len()).collect();
    // sort_by is stable, so equal variances keep ascending index order
    idx.sort_by(|&i, &j| variances[j].total_cmp(&variances[i]));
    idx
}

impl ConvexPotential for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.variances.len()
    }

    fn value(&self, v: &[f64]) -> f64 {
        0.5 * v.iter().zip(&self.variances).map(|(x, l)| x * x / l).sum::<f64>()
    }

    fn grad(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.variances).map(|(x, l)| x / l).collect()
    }

    fn conjugate_grad(&self, w: &[f64]) -> Vec<f64> {
        w.iter().zip(&self.variances).map(|(x, l)| l * x).collect()
    }

    fn hessian_apply(&self, _v: &[f64], u: &[f64]) -> Vec<f64> {
        self.grad(u)
    }

    fn conjugate_hessian_apply(&self, _w: &[f64], u: &[f64]) -> Vec<f64> {
        self.conjugate_grad(u)
    }

    fn strong_convexity(&self) -> f64 {
        1.0 / self.variances.iter().fold(0.0f64, |m, &l| m.max(l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_covariance_values() {
        let q = DiagonalQuadratic::from_variances(&[1.0, 1.0]).unwrap();
        assert_eq!(q.value(&[3.0, 4.0]), 12.5);
        assert_eq!(q.grad(&[3.0, 4.0]), vec![3.0, 4.0]);
        assert_eq!(q.conjugate_grad(&[3.0, 4.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn anisotropic_gradients() {
        let q = DiagonalQuadratic::from_variances(&[4.0, 1.0]).unwrap();
        assert_eq!(q.grad(&[2.0, 0.0]), vec![0.5, 0.0]);
        assert_eq!(q.conjugate_grad(&[0.5, 0.0]), vec![2.0, 0.0]);
        assert_eq!(q.strong_convexity(), 0.25);
    }

    #[test]
    fn variance_order_examples() {
        let q = DiagonalQuadratic::from_variances(&[0.01, 4.0, 1.0]).unwrap();
        assert_eq!(q.sorted_variance_order(), vec![1, 2, 0]);
        assert_eq!(variance_order(&[2.0, 2.0, 2.0]), vec![0, 1, 2]);
        assert_eq!(variance_order(&[5.0, 3.0, 1.0]), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_non_positive_variance() {
        assert!(DiagonalQuadratic::from_variances(&[1.0, 0.0]).is_err());
        assert!(DiagonalQuadratic::from_variances(&[-1.0]).is_err());
    }

    #[test]
    fn grad_matches_finite_differences() {
        let q = DiagonalQuadratic::from_variances(&[0.3, 2.0, 7.5]).unwrap();
        let v = [0.4, -1.1, 2.2];
        let g = q.grad(&v);
        let h = 1e-5;
        for i in 0..3 {
            let mut p = v;
            let mut m = v;
            p[i] += h;
            m[i] -= h;
            let fd = (q.value(&p) - q.value(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() / g[i].abs().max(1.0) <= 1e-8);
        }
    }

    proptest! {
        #[test]
        fn conjugate_inverts_gradient(
            logs in proptest::collection::vec(-3.0f64..3.0, 1..6),
            seed in proptest::collection::vec(-10.0f64..10.0, 6),
        ) {
            let q = DiagonalQuadratic::from_log_variances(&logs).unwrap();
            let v = &seed[..logs.len()];
            let back = q.conjugate_grad(&q.grad(v));
            for (a, b) in back.iter().zip(v) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn gradient_is_strongly_monotone(
            logs in proptest::collection::vec(-3.0f64..3.0, 3),
            v in proptest::collection::vec(-5.0f64..5.0, 3),
            w in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let q = DiagonalQuadratic::from_log_variances(&logs).unwrap();
            let (gv, gw) = (q.grad(&v), q.grad(&w));
            let lhs: f64 = (0..3).map(|i| (gv[i] - gw[i]) * (v[i] - w[i])).sum();
            let dist: f64 = (0..3).map(|i| (v[i] - w[i]).powi(2)).sum();
            prop_assert!(lhs >= q.strong_convexity() * dist - 1e-12);
        }
    }
}
