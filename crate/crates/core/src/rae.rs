//! Riemannian autoencoder: coordinate projection in `φ`-space onto the
//! highest-variance axes of the quadratic potential.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::convex::{variance_order, DiagonalQuadratic};
use crate::error::{Error, Result};
use crate::geometry::{Diffeomorphism, PullbackManifold};
use crate::math;
use crate::tensor::Tensor;

/// Largest latent dimension accepted by [`Rae::manifold_mesh`].
pub const MAX_MESH_DIM: usize = 3;

/// Smallest `d' < d` whose discarded variance (the `d − d'` smallest
/// variances) is at most `ε · Σλ`; `d` if there is none.
pub fn select_dimension(variances: &[f64], epsilon: f64) -> Result<usize> {
    if variances.is_empty() {
        return Err(Error::Empty("variances"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(alloc::format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("variances must be positive and finite"));
    }
    let d = variances.len();
    let order = variance_order(variances);
    let total: f64 = variances.iter().sum();
    let threshold = epsilon * total;
    // tail[k] = sum of the variances ranked k+1..d (0-based k)
    let mut tail = vec![0.0; d + 1];
    for k in (0..d).rev() {
        tail[k] = tail[k + 1] + variances[order[k]];
    }
    Ok((1..d).find(|&dp| tail[dp] <= threshold).unwrap_or(d))
}

/// Axis order used when growing the latent space in a reconstruction curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisOrder {
    Decreasing,
    Increasing,
    Random(u64),
}

impl AxisOrder {
    pub fn name(&self) -> &'static str {
        match self {
            AxisOrder::Decreasing => "decreasing",
            AxisOrder::Increasing => "increasing",
            AxisOrder::Random(_) => "random",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            AxisOrder::Random(s) => Some(*s),
            _ => None,
        }
    }

    pub fn axes(&self, variances: &[f64]) -> Vec<usize> {
        let mut order = variance_order(variances);
        match self {
            AxisOrder::Decreasing => {}
            AxisOrder::Increasing => order.reverse(),
            AxisOrder::Random(seed) => order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed)),
        }
        order
    }
}

/// One point of a reconstruction curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    /// Mean `‖D_k(E_k(x)) − x‖₂` in data space.
    pub mean_error: f64,
    /// The same mean measured in `φ`-coordinates.
    pub latent_error: f64,
}

#[derive(Debug, Clone)]
pub struct Rae<D> {
    manifold: PullbackManifold<D, DiagonalQuadratic>,
    order: Vec<usize>,
    latent_dim: usize,
    epsilon: f64,
}

impl<D: Diffeomorphism> Rae<D> {
    pub fn new(manifold: PullbackManifold<D, DiagonalQuadratic>, epsilon: f64) -> Result<Self> {
        let latent_dim = select_dimension(manifold.potential.variances(), epsilon)?;
        let order = manifold.potential.sorted_variance_order();
        Ok(Rae {
            manifold,
            order,
            latent_dim,
            epsilon,
        })
    }

    pub fn manifold(&self) -> &PullbackManifold<D, DiagonalQuadratic> {
        &self.manifold
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// 0-based axes in decreasing-variance order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn retained_axes(&self) -> &[usize] {
        &self.order[..self.latent_dim]
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.manifold.diffeo.forward(x)?;
        Ok(self.retained_axes().iter().map(|&i| y[i]).collect())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim,
                found: z.len(),
            });
        }
        let mut y = vec![0.0; self.manifold.dim()];
        for (&i, &v) in self.retained_axes().iter().zip(z) {
            y[i] = v;
        }
        self.manifold.diffeo.inverse(&y)
    }

    /// Mean reconstruction error over `data` (`n × d`) keeping the first `k`
    /// axes of `order`, for every `k = 0..=d`.
    pub fn reconstruction_curve(&self, data: &Tensor, order: AxisOrder) -> Result<Vec<CurvePoint>> {
        let d = self.manifold.dim();
        if data.shape().len() != 2 || data.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: data.cols(),
            });
        }
        let n = data.rows();
        if n == 0 {
            return Err(Error::Empty("reconstruction data"));
        }
        let axes = order.axes(self.manifold.potential.variances());
        let y = self.manifold.diffeo.forward_batch(data)?;
        let mut curve = Vec::with_capacity(d + 1);
        let mut keep = vec![false; d];
        for k in 0..=d {
            if k > 0 {
                keep[axes[k - 1]] = true;
            }
            let mut proj = y.clone();
            let mut latent = 0.0;
            for r in 0..n {
                let mut sq = 0.0;
                for c in 0..d {
                    if !keep[c] {
                        let v = proj.get(r, c);
                        sq += v * v;
                        proj.set(r, c, 0.0);
                    }
                }
                latent += math::sqrt(sq);
            }
            let recon = self.manifold.diffeo.inverse_batch(&proj)?;
            let mut err = 0.0;
            for r in 0..n {
                let sq: f64 = recon
                    .row_slice(r)
                    .iter()
                    .zip(data.row_slice(r))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                err += math::sqrt(sq);
            }
            curve.push(CurvePoint {
                k,
                mean_error: err / n as f64,
                latent_error: latent / n as f64,
            });
        }
        Ok(curve)
    }

    /// Decodes an `m^{d_ε}` grid over `Π_k [−3√λ_{i_k}, 3√λ_{i_k}]`; returns the
    /// latent grid and its images, row by row (last latent axis fastest).
    pub fn manifold_mesh(&self, m: usize) -> Result<(Tensor, Tensor)> {
        let q = self.latent_dim;
        if q > MAX_MESH_DIM {
            return Err(Error::MeshTooLarge {
                latent: q,
                max: MAX_MESH_DIM,
            });
        }
        if m == 0 {
            return Err(Error::invalid("mesh needs at least one point per dimension"));
        }
        let lam = self.manifold.potential.variances();
        let ticks: Vec<Vec<f64>> = self
            .retained_axes()
            .iter()
            .map(|&i| {
                let half = 3.0 * math::sqrt(lam[i]);
                if m == 1 {
                    vec![0.0]
                } else {
                    (0..m).map(|j| -half + 2.0 * half * j as f64 / (m - 1) as f64).collect()
                }
            })
            .collect();
        let count = m.pow(q as u32);
        let mut zs = Vec::with_capacity(count * q);
        for idx in 0..count {
            let mut rest = idx;
            let mut z = vec![0.0; q];
            for k in (0..q).rev() {
                z[k] = ticks[k][rest % m];
                rest /= m;
            }
            zs.extend(z);
        }
        let z = Tensor::matrix(count, q, zs)?;
        let d = self.manifold.dim();
        let mut y = Tensor::zeros(&[count, d]);
        for r in 0..count {
            for (k, &i) in self.retained_axes().iter().enumerate() {
                y.set(r, i, z.get(r, k));
            }
        }
        let x = self.manifold.diffeo.inverse_batch(&y)?;
        Ok((z, x))
    }
}

/// Outcome of the identity-diffeomorphism reconstruction bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub latent_dim: usize,
    /// Sample mean of `‖D(E(X)) − X‖²`.
    pub empirical: f64,
    pub standard_error: f64,
    /// Exact expectation: the discarded variance.
    pub expected: f64,
    /// First-order bound `ε · Σλ`.
    pub bound: f64,
}

/// With `φ = id` and `X ~ N(0, diag λ)`, compares the mean squared
/// reconstruction error of `n` samples with its exact value and the bound.
pub fn bound_check_identity(variances: &[f64], epsilon: f64, n: usize, seed: u64) -> Result<BoundCheck> {
    if n < 2 {
        return Err(Error::invalid("bound check needs at least two samples"));
    }
    let latent_dim = select_dimension(variances, epsilon)?;
    let order = variance_order(variances);
    let dropped = &order[latent_dim..];
    let expected: f64 = dropped.iter().map(|&i| variances[i]).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut err = 0.0;
        for &i in &order {
            let x: f64 = StandardNormal.sample(&mut rng);
            if dropped.contains(&i) {
                err += variances[i] * x * x;
            }
        }
        sum += err;
        sum_sq += err * err;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = (sum_sq / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    Ok(BoundCheck {
        latent_dim,
        empirical: mean,
        standard_error: math::sqrt(var / nf),
        expected,
        bound: epsilon * variances.iter().sum::<f64>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GroundTruthDiffeo;
    use proptest::prelude::*;

    fn brute_force(lam: &[f64], eps: f64) -> usize {
        let d = lam.len();
        let mut sorted = lam.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = lam.iter().sum();
        for dp in 1..d {
            let tail: f64 = sorted[dp..].iter().sum();
            if tail <= eps * total {
                return dp;
            }
        }
        d
    }

    fn rae_id(lam: &[f64], eps: f64) -> Rae<GroundTruthDiffeo> {
        let m = PullbackManifold::new(
            GroundTruthDiffeo::Identity(lam.len()),
            DiagonalQuadratic::from_variances(lam).unwrap(),
        )
        .unwrap();
        Rae::new(m, eps).unwrap()
    }

    #[test]
    fn dimension_examples() {
        assert_eq!(select_dimension(&[4.0, 1.0, 0.01], 0.01).unwrap(), 2);
        assert_eq!(select_dimension(&[4.0, 1.0, 0.01], 0.0).unwrap(), 3);
        assert_eq!(select_dimension(&[4.0, 1.0, 0.01], 1.0).unwrap(), 1);
        assert_eq!(select_dimension(&[2.0, 2.0, 2.0, 2.0], 0.2499).unwrap(), 4);
        assert!(select_dimension(&[1.0], 1.5).is_err());
    }

    #[test]
    fn encode_follows_variance_order() {
        assert_eq!(rae_id(&[4.0, 1.0, 0.01], 0.01).encode(&[7.0, 8.0, 9.0]).unwrap(), vec![7.0, 8.0]);
        let r = rae_id(&[0.01, 4.0, 1.0], 0.01);
        assert_eq!(r.encode(&[7.0, 8.0, 9.0]).unwrap(), vec![8.0, 9.0]);
        assert_eq!(r.decode(&[8.0, 9.0]).unwrap(), vec![0.0, 8.0, 9.0]);
        assert_eq!(r.encode(&r.decode(&[-1.5, 2.5]).unwrap()).unwrap(), vec![-1.5, 2.5]);
    }

    #[test]
    fn banana_decode_hits_analytic_inverse() {
        let m = PullbackManifold::new(
            GroundTruthDiffeo::banana(),
            DiagonalQuadratic::from_variances(&[0.25, 4.0]).unwrap(),
        )
        .unwrap();
        let r = Rae::new(m, 0.1).unwrap();
        assert_eq!(r.latent_dim(), 1);
        assert_eq!(r.retained_axes(), &[1]);
        let x = r.decode(&[3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && x[1] == 3.0);
        let (z, mesh) = r.manifold_mesh(7).unwrap();
        assert_eq!(z.shape(), &[7, 1]);
        for k in 0..7 {
            let p = mesh.row_slice(k);
            assert!((p[0] - p[1] * p[1] / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_grid_arithmetic() {
        let r = rae_id(&[1.0, 0.001], 0.01);
        let (z, x) = r.manifold_mesh(3).unwrap();
        assert_eq!(z.data(), &[-3.0, 0.0, 3.0]);
        assert_eq!(x.data(), &[-3.0, 0.0, 0.0, 0.0, 3.0, 0.0]);
        let (z1, x1) = r.manifold_mesh(1).unwrap();
        assert_eq!((z1.data(), x1.data()), (&[0.0][..], &[0.0, 0.0][..]));
        let big = rae_id(&[1.0; 4], 0.0);
        assert!(matches!(big.manifold_mesh(2), Err(Error::MeshTooLarge { latent: 4, max: 3 })));
    }

    #[test]
    fn curve_orders_on_constructed_data() {
        let r = rae_id(&[4.0, 1.0, 0.01], 0.01);
        let data = Tensor::from_rows(&[[2.0, 1.0, 0.0], [-1.0, 0.5, 0.0], [0.5, -2.0, 0.0]]).unwrap();
        let dec = r.reconstruction_curve(&data, AxisOrder::Decreasing).unwrap();
        assert!(dec[0].mean_error > 1.0);
        assert!(dec[2].mean_error <= 1e-12);
        let inc = r.reconstruction_curve(&data, AxisOrder::Increasing).unwrap();
        assert_eq!(inc[1].mean_error, inc[0].mean_error);
        assert!(inc[2].mean_error > 0.5 * inc[0].mean_error);
        for order in [AxisOrder::Decreasing, AxisOrder::Increasing, AxisOrder::Random(5)] {
            let c = r.reconstruction_curve(&data, order).unwrap();
            assert_eq!(c.len(), 4);
            assert!(c[3].mean_error <= 1e-8);
        }
    }

    #[test]
    fn random_order_is_seeded() {
        let lam = [5.0, 4.0, 3.0, 2.0, 1.0, 0.5];
        assert_eq!(AxisOrder::Random(3).axes(&lam), AxisOrder::Random(3).axes(&lam));
        let mut sorted = AxisOrder::Random(3).axes(&lam);
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn bound_check_small_sample() {
        let b = bound_check_identity(&[4.0, 1.0, 0.01], 0.01, 20_000, 1).unwrap();
        assert_eq!(b.latent_dim, 2);
        assert_eq!(b.expected, 0.01);
        assert!((b.empirical - b.expected).abs() <= 5.0 * b.standard_error);
        let full = bound_check_identity(&[4.0, 1.0, 0.01], 0.0, 100, 1).unwrap();
        assert_eq!(full.empirical, 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn matches_brute_force(lam in proptest::collection::vec(0.001f64..10.0, 1..8), eps in 0.0f64..=1.0) {
            prop_assert_eq!(select_dimension(&lam, eps).unwrap(), brute_force(&lam, eps));
        }

        #[test]
        fn decreasing_curve_non_increasing(
            lam in proptest::collection::vec(0.01f64..5.0, 2..5),
            rows in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 5), 1..10),
        ) {
            let d = lam.len();
            let data: Vec<Vec<f64>> = rows.iter().map(|r| r[..d].to_vec()).collect();
            let r = rae_id(&lam, 0.01);
            let c = r.reconstruction_curve(&Tensor::from_rows(&data).unwrap(), AxisOrder::Decreasing).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[1].latent_error <= w[0].latent_error + 1e-12);
                prop_assert!(w[1].mean_error <= w[0].mean_error + 1e-12);
            }
        }
    }
}
