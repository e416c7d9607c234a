//! Closed-form pullback geometry on `(Rᵈ, (·,·)^{∇ψ∘φ})`.
//!
//! With `F = ∇ψ ∘ φ` every mapping reduces to Euclidean operations in
//! `F`-coordinates. The `_quadratic` variants use the simplified forms for
//! `ψ(v) = ½ vᵀA⁻¹v`, which avoid the detour through `∇ψ` and `∇ψ*`.

use alloc::vec;
use alloc::vec::Vec;

use crate::convex::{ConvexPotential, DiagonalQuadratic};
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::linalg::Lu;
use crate::math;
use crate::tensor::Tensor;

/// A diffeomorphism `φ: Rᵈ → Rᵈ` with exact inverse and Jacobian.
pub trait Diffeomorphism {
    fn dim(&self) -> usize;
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn inverse(&self, y: &[f64]) -> Result<Vec<f64>>;
    /// `D_x φ`, entry `(r, c) = ∂φ_r/∂x_c`.
    fn jacobian(&self, x: &[f64]) -> Result<Tensor>;

    /// `D_x φ [v]`.
    fn jvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let j = self.jacobian(x)?;
        let d = self.dim();
        Ok((0..d).map(|r| (0..d).map(|c| j.get(r, c) * v[c]).sum()).collect())
    }

    /// `log|det D_x φ|`.
    fn log_abs_det(&self, x: &[f64]) -> Result<f64> {
        Ok(Lu::new(&self.jacobian(x)?)?.log_abs_det())
    }

    /// `D_{φ(x)} φ⁻¹ [w]`, solved against `D_x φ`.
    fn inverse_jvp_at(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        Lu::new(&self.jacobian(x)?)?.solve(w)
    }

    fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        map_rows(x, self.dim(), |r| self.forward(r))
    }

    fn inverse_batch(&self, y: &Tensor) -> Result<Tensor> {
        map_rows(y, self.dim(), |r| self.inverse(r))
    }
}

fn map_rows(x: &Tensor, dim: usize, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Tensor> {
    if x.shape().len() != 2 || x.cols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: x.cols(),
        });
    }
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..x.rows() {
        out.extend(f(x.row_slice(r))?);
    }
    Tensor::matrix(x.rows(), dim, out)
}

impl Diffeomorphism for Flow {
    fn dim(&self) -> usize {
        Flow::dim(self)
    }
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(Flow::forward(self, x)?.0)
    }
    fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        Flow::inverse(self, y)
    }
    fn jacobian(&self, x: &[f64]) -> Result<Tensor> {
        Flow::jacobian(self, x)
    }
    fn jvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        Flow::jvp(self, x, v)
    }
    fn log_abs_det(&self, x: &[f64]) -> Result<f64> {
        Ok(Flow::forward(self, x)?.1)
    }
    fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Flow::forward_batch(self, x)?.0)
    }
    fn inverse_batch(&self, y: &Tensor) -> Result<Tensor> {
        Flow::inverse_batch(self, y)
    }
}

impl<T: Diffeomorphism + ?Sized> Diffeomorphism for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        (**self).forward(x)
    }
    fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        (**self).inverse(y)
    }
    fn jacobian(&self, x: &[f64]) -> Result<Tensor> {
        (**self).jacobian(x)
    }
    fn jvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        (**self).jvp(x, v)
    }
    fn log_abs_det(&self, x: &[f64]) -> Result<f64> {
        (**self).log_abs_det(x)
    }
    fn inverse_jvp_at(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        (**self).inverse_jvp_at(x, w)
    }
    fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        (**self).forward_batch(x)
    }
    fn inverse_batch(&self, y: &Tensor) -> Result<Tensor> {
        (**self).inverse_batch(y)
    }
}

/// Hand-written diffeomorphism given by plain function pointers.
#[derive(Debug, Clone, Copy)]
pub struct CustomDiffeo {
    pub dim: usize,
    pub forward: fn(&[f64]) -> Vec<f64>,
    pub inverse: fn(&[f64]) -> Vec<f64>,
    pub jacobian: fn(&[f64]) -> Tensor,
}

/// Analytic ground-truth diffeomorphisms of the synthetic targets.
#[derive(Debug, Clone, Copy)]
pub enum GroundTruthDiffeo {
    Identity(usize),
    /// `(x₁ − a x₂² − z, x₂)`.
    Banana { a: f64, z: f64 },
    /// `(x₁ − sin(a x₂) − z, x₂)`.
    River { a: f64, z: f64 },
    Custom(CustomDiffeo),
}

impl GroundTruthDiffeo {
    pub fn banana() -> Self {
        GroundTruthDiffeo::Banana { a: 1.0 / 9.0, z: 0.0 }
    }

    pub fn river() -> Self {
        GroundTruthDiffeo::River { a: 2.0, z: 0.0 }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        Ok(())
    }
}

impl Diffeomorphism for GroundTruthDiffeo {
    fn dim(&self) -> usize {
        match self {
            GroundTruthDiffeo::Identity(d) => *d,
            GroundTruthDiffeo::Banana { .. } | GroundTruthDiffeo::River { .. } => 2,
            GroundTruthDiffeo::Custom(c) => c.dim,
        }
    }

    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(match *self {
            GroundTruthDiffeo::Identity(_) => x.to_vec(),
            GroundTruthDiffeo::Banana { a, z } => vec![x[0] - a * x[1] * x[1] - z, x[1]],
            GroundTruthDiffeo::River { a, z } => vec![x[0] - math::sin(a * x[1]) - z, x[1]],
            GroundTruthDiffeo::Custom(c) => (c.forward)(x),
        })
    }

    fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        Ok(match *self {
            GroundTruthDiffeo::Identity(_) => y.to_vec(),
            GroundTruthDiffeo::Banana { a, z } => vec![y[0] + a * y[1] * y[1] + z, y[1]],
            GroundTruthDiffeo::River { a, z } => vec![y[0] + math::sin(a * y[1]) + z, y[1]],
            GroundTruthDiffeo::Custom(c) => (c.inverse)(y),
        })
    }

    fn jacobian(&self, x: &[f64]) -> Result<Tensor> {
        self.check(x)?;
        match *self {
            GroundTruthDiffeo::Identity(d) => Ok(Tensor::identity(d)),
            GroundTruthDiffeo::Banana { a, .. } => Tensor::matrix(2, 2, vec![1.0, -2.0 * a * x[1], 0.0, 1.0]),
            GroundTruthDiffeo::River { a, .. } => Tensor::matrix(2, 2, vec![1.0, -a * math::cos(a * x[1]), 0.0, 1.0]),
            GroundTruthDiffeo::Custom(c) => Ok((c.jacobian)(x)),
        }
    }

    fn log_abs_det(&self, x: &[f64]) -> Result<f64> {
        match self {
            GroundTruthDiffeo::Custom(_) => Ok(Lu::new(&self.jacobian(x)?)?.log_abs_det()),
            _ => {
                self.check(x)?;
                Ok(0.0)
            }
        }
    }
}

/// `(Rᵈ, (·,·)^{∇ψ∘φ})` for a diffeomorphism `φ` and potential `ψ`.
#[derive(Debug, Clone)]
pub struct PullbackManifold<D, P> {
    pub diffeo: D,
    pub potential: P,
}

impl<D: Diffeomorphism, P: ConvexPotential> PullbackManifold<D, P> {
    pub fn new(diffeo: D, potential: P) -> Result<Self> {
        if diffeo.dim() != potential.dim() {
            return Err(Error::DimensionMismatch {
                expected: diffeo.dim(),
                found: potential.dim(),
            });
        }
        Ok(PullbackManifold { diffeo, potential })
    }

    pub fn dim(&self) -> usize {
        self.diffeo.dim()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `F(x) = ∇ψ(φ(x))`.
    pub fn to_dual(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.potential.grad(&self.diffeo.forward(x)?))
    }

    /// `F⁻¹(w) = φ⁻¹(∇ψ*(w))`.
    pub fn from_dual(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check(w)?;
        self.diffeo.inverse(&self.potential.conjugate_grad(w))
    }

    /// Unnormalised log-density `−ψ(φ(x)) + log|det D_x φ|`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let y = self.diffeo.forward(x)?;
        Ok(-self.potential.value(&y) + self.diffeo.log_abs_det(x)?)
    }

    pub fn geodesic(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        if t == 0.0 {
            self.check(x)?;
            self.check(y)?;
            return Ok(x.to_vec());
        }
        let (fx, fy) = (self.to_dual(x)?, self.to_dual(y)?);
        self.from_dual(&lerp(&fx, &fy, t))
    }

    pub fn log_map(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let px = self.diffeo.forward(x)?;
        let (fx, fy) = (self.potential.grad(&px), self.to_dual(y)?);
        let diff: Vec<f64> = fy.iter().zip(&fx).map(|(a, b)| a - b).collect();
        let u = self.potential.conjugate_hessian_apply(&fx, &diff);
        self.diffeo.inverse_jvp_at(x, &u)
    }

    pub fn exp_map(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        self.check(v)?;
        if v.iter().all(|&c| c == 0.0) {
            return Ok(x.to_vec());
        }
        let px = self.diffeo.forward(x)?;
        let fx = self.potential.grad(&px);
        let dv = self.potential.hessian_apply(&px, &self.diffeo.jvp(x, v)?);
        let w: Vec<f64> = fx.iter().zip(&dv).map(|(a, b)| a + b).collect();
        self.from_dual(&w)
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (fx, fy) = (self.to_dual(x)?, self.to_dual(y)?);
        Ok(norm_diff(&fx, &fy))
    }

    pub fn barycentre(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::Empty("barycentre of no points"));
        }
        let mut acc = vec![0.0; self.dim()];
        for p in points {
            for (a, v) in acc.iter_mut().zip(self.to_dual(p)?) {
                *a += v;
            }
        }
        let n = points.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        self.from_dual(&acc)
    }

    /// `T` points of the geodesic at `t_k = k/(T−1)`, `k = 0..T`, as a `T × d`
    /// tensor. The endpoints are returned exactly.
    pub fn geodesic_curve(&self, x: &[f64], y: &[f64], steps: usize) -> Result<Tensor> {
        if steps < 2 {
            return Err(Error::invalid("geodesic curve needs at least 2 steps"));
        }
        let (fx, fy) = (self.to_dual(x)?, self.to_dual(y)?);
        let d = self.dim();
        let mut rows = Vec::with_capacity(steps * d);
        for k in 0..steps {
            let t = k as f64 / (steps - 1) as f64;
            rows.extend(self.potential.conjugate_grad(&lerp(&fx, &fy, t)));
        }
        let mut curve = self.diffeo.inverse_batch(&Tensor::matrix(steps, d, rows)?)?;
        curve.data_mut()[..d].copy_from_slice(x);
        curve.data_mut()[(steps - 1) * d..].copy_from_slice(y);
        Ok(curve)
    }
}

impl<D: Diffeomorphism> PullbackManifold<D, DiagonalQuadratic> {
    pub fn geodesic_quadratic(&self, x: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        if t == 0.0 {
            self.check(x)?;
            self.check(y)?;
            return Ok(x.to_vec());
        }
        let (px, py) = (self.diffeo.forward(x)?, self.diffeo.forward(y)?);
        self.diffeo.inverse(&lerp(&px, &py, t))
    }

    pub fn log_map_quadratic(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let (px, py) = (self.diffeo.forward(x)?, self.diffeo.forward(y)?);
        let diff: Vec<f64> = py.iter().zip(&px).map(|(a, b)| a - b).collect();
        self.diffeo.inverse_jvp_at(x, &diff)
    }

    pub fn exp_map_quadratic(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        self.check(v)?;
        if v.iter().all(|&c| c == 0.0) {
            return Ok(x.to_vec());
        }
        let px = self.diffeo.forward(x)?;
        let dv = self.diffeo.jvp(x, v)?;
        let w: Vec<f64> = px.iter().zip(&dv).map(|(a, b)| a + b).collect();
        self.diffeo.inverse(&w)
    }

    pub fn distance_quadratic(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (px, py) = (self.diffeo.forward(x)?, self.diffeo.forward(y)?);
        let lam = self.potential.variances();
        let sq = (0..self.dim())
            .map(|i| {
                let r = (px[i] - py[i]) / lam[i];
                r * r
            })
            .sum();
        Ok(math::sqrt(sq))
    }

    pub fn barycentre_quadratic(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::Empty("barycentre of no points"));
        }
        let mut acc = vec![0.0; self.dim()];
        for p in points {
            for (a, v) in acc.iter_mut().zip(self.diffeo.forward(p)?) {
                *a += v;
            }
        }
        let n = points.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        self.diffeo.inverse(&acc)
    }
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| (1.0 - t) * p + t * q).collect()
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn banana() -> PullbackManifold<GroundTruthDiffeo, DiagonalQuadratic> {
        PullbackManifold::new(
            GroundTruthDiffeo::banana(),
            DiagonalQuadratic::from_variances(&[0.25, 4.0]).unwrap(),
        )
        .unwrap()
    }

    fn euclid() -> PullbackManifold<GroundTruthDiffeo, DiagonalQuadratic> {
        PullbackManifold::new(GroundTruthDiffeo::Identity(2), DiagonalQuadratic::isotropic(2)).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(p, q)| (p - q).abs() <= tol)
    }

    #[test]
    fn euclidean_examples() {
        let m = euclid();
        assert_eq!(m.geodesic(&[0.0, 0.0], &[2.0, 2.0], 0.5).unwrap(), vec![1.0, 1.0]);
        assert_eq!(m.log_map(&[1.0, 2.0], &[4.0, -1.0]).unwrap(), vec![3.0, -3.0]);
        assert_eq!(m.exp_map(&[1.0, 2.0], &[0.5, 0.5]).unwrap(), vec![1.5, 2.5]);
        assert_eq!(m.distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let pts = vec![vec![0.0, 0.0], vec![2.0, 4.0], vec![4.0, 2.0]];
        assert_eq!(m.barycentre(&pts).unwrap(), vec![2.0, 2.0]);
        assert_eq!(m.barycentre(&pts[1..2]).unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn banana_hand_values() {
        let m = banana();
        let (x, y) = ([0.0, -3.0], [0.0, 3.0]);
        assert!(close(&m.geodesic(&x, &y, 0.5).unwrap(), &[-1.0, 0.0], 1e-10));
        assert!(close(&m.geodesic_quadratic(&x, &y, 0.5).unwrap(), &[-1.0, 0.0], 1e-10));
        assert!((m.distance(&x, &y).unwrap() - 1.5).abs() <= 1e-10);
        assert!((m.distance_quadratic(&x, &y).unwrap() - 1.5).abs() <= 1e-10);
        let pts = vec![x.to_vec(), y.to_vec()];
        assert!(close(&m.barycentre(&pts).unwrap(), &[-1.0, 0.0], 1e-10));
        assert!(close(&m.barycentre_quadratic(&pts).unwrap(), &[-1.0, 0.0], 1e-10));
        assert!(close(&m.log_map(&[0.0, 0.0], &y).unwrap(), &[-1.0, 3.0], 1e-12));
        assert!(close(&m.exp_map(&[0.0, 0.0], &[-1.0, 3.0]).unwrap(), &y, 1e-12));
    }

    #[test]
    fn endpoints_and_zero_tangent_are_exact() {
        let m = banana();
        let (x, y) = ([0.3, -1.2], [1.7, 2.9]);
        assert_eq!(m.geodesic(&x, &y, 0.0).unwrap(), x.to_vec());
        assert_eq!(m.exp_map(&x, &[0.0, 0.0]).unwrap(), x.to_vec());
        assert_eq!(m.distance(&x, &x).unwrap(), 0.0);
        assert_eq!(m.distance(&x, &y).unwrap(), m.distance(&y, &x).unwrap());
        assert!(close(&m.geodesic(&x, &y, 1.0).unwrap(), &y, 1e-8));
    }

    #[test]
    fn curve_satisfies_interpolation_identity() {
        let m = banana();
        let (x, y) = ([0.5, -2.0], [-1.0, 2.5]);
        assert_eq!(m.geodesic_curve(&x, &y, 2).unwrap().data(), &[0.5, -2.0, -1.0, 2.5]);
        let e = euclid().geodesic_curve(&[0.0, 0.0], &[2.0, 4.0], 3).unwrap();
        assert_eq!(e.data(), &[0.0, 0.0, 1.0, 2.0, 2.0, 4.0]);
        let curve = m.geodesic_curve(&x, &y, 101).unwrap();
        let (px, py) = (m.diffeo.forward(&x).unwrap(), m.diffeo.forward(&y).unwrap());
        for k in 0..101 {
            let t = k as f64 / 100.0;
            let p = m.diffeo.forward(curve.row_slice(k)).unwrap();
            assert!(close(&p, &lerp(&px, &py, t), 1e-8));
        }
        assert!(m.geodesic_curve(&x, &y, 1).is_err());
    }

    #[test]
    fn general_and_quadratic_forms_agree() {
        let m = PullbackManifold::new(
            GroundTruthDiffeo::river(),
            DiagonalQuadratic::from_variances(&[0.04, 3.0]).unwrap(),
        )
        .unwrap();
        let (x, y) = ([0.2, 1.1], [-0.6, -0.4]);
        for t in [0.1, 0.5, 0.9] {
            assert!(close(&m.geodesic(&x, &y, t).unwrap(), &m.geodesic_quadratic(&x, &y, t).unwrap(), 1e-8));
        }
        assert!(close(&m.log_map(&x, &y).unwrap(), &m.log_map_quadratic(&x, &y).unwrap(), 1e-8));
        let v = [0.3, -0.2];
        assert!(close(&m.exp_map(&x, &v).unwrap(), &m.exp_map_quadratic(&x, &v).unwrap(), 1e-8));
        assert!((m.distance(&x, &y).unwrap() - m.distance_quadratic(&x, &y).unwrap()).abs() <= 1e-8);
        let pts = vec![x.to_vec(), y.to_vec(), vec![1.0, 0.0]];
        assert!(close(&m.barycentre(&pts).unwrap(), &m.barycentre_quadratic(&pts).unwrap(), 1e-8));
    }

    #[test]
    fn log_and_exp_are_inverse() {
        let m = banana();
        let (x, y) = ([0.4, 1.3], [-2.0, -0.7]);
        let v = m.log_map(&x, &y).unwrap();
        assert!(close(&m.exp_map(&x, &v).unwrap(), &y, 1e-6));
        let w = [0.25, -0.6];
        let z = m.exp_map(&x, &w).unwrap();
        assert!(close(&m.log_map(&x, &z).unwrap(), &w, 1e-6));
    }

    #[test]
    fn distance_matches_log_coordinates() {
        let m = banana();
        let (x, y) = ([0.4, 1.3], [-2.0, -0.7]);
        let u = m.diffeo.jvp(&x, &m.log_map_quadratic(&x, &y).unwrap()).unwrap();
        let lam = m.potential.variances();
        let sq: f64 = (0..2).map(|i| (u[i] / lam[i]).powi(2)).sum();
        assert!((m.distance_quadratic(&x, &y).unwrap().powi(2) - sq).abs() <= 1e-10);
    }

    #[test]
    fn ground_truth_round_trips_and_values() {
        let b = GroundTruthDiffeo::banana();
        assert_eq!(b.forward(&[-1.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
        assert_eq!(b.inverse(&[-1.0, 3.0]).unwrap(), vec![0.0, 3.0]);
        let r = GroundTruthDiffeo::river();
        let p = r.forward(&[0.0, core::f64::consts::FRAC_PI_2]).unwrap();
        assert!(p[0].abs() < 1e-15 && p[1] == core::f64::consts::FRAC_PI_2);
        assert!(b.forward(&[1.0]).is_err());
    }

    #[test]
    fn midpoint_density_not_below_endpoints() {
        let m = banana();
        let (x, y) = ([1.0, -2.5], [-0.5, 3.0]);
        let mid = m.geodesic(&x, &y, 0.5).unwrap();
        let lo = m.log_density(&x).unwrap().min(m.log_density(&y).unwrap());
        assert!(m.log_density(&mid).unwrap() >= lo);
    }

    #[test]
    fn empty_barycentre_rejected() {
        assert!(matches!(banana().barycentre(&[]), Err(Error::Empty(_))));
    }
}
