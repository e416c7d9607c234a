//! Synthetic datasets: Langevin/Metropolis-Hastings samples from analytic
//! pullback densities, and the hemisphere and sinusoid manifolds.
//!
//! All generators use [`ChaCha8Rng`]. MCMC chain `i` runs on stream `i` of the
//! seeded generator, so each row is independent of how many chains run.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::convex::{ConvexPotential, DiagonalQuadratic};
use crate::error::{Error, Result};
use crate::geometry::{Diffeomorphism, GroundTruthDiffeo, PullbackManifold};
use crate::linalg::thin_q;
use crate::math;
use crate::tensor::Tensor;

/// Default Langevin step size `δ`.
pub const DEFAULT_STEP_SIZE: f64 = 0.1;
/// Default number of proposals per chain.
pub const DEFAULT_STEPS: usize = 4000;

/// `p(x) ∝ exp(−ψ(φ(x)))` for an analytic, volume-preserving `φ` and a
/// diagonal Gaussian `ψ`.
#[derive(Debug, Clone)]
pub struct TargetDensity {
    pub name: &'static str,
    pub diffeo: GroundTruthDiffeo,
    pub potential: DiagonalQuadratic,
}

impl TargetDensity {
    pub fn new(name: &'static str, diffeo: GroundTruthDiffeo, variances: &[f64]) -> Result<Self> {
        let potential = DiagonalQuadratic::from_variances(variances)?;
        if potential.dim() != diffeo.dim() {
            return Err(Error::DimensionMismatch {
                expected: diffeo.dim(),
                found: potential.dim(),
            });
        }
        Ok(TargetDensity {
            name,
            diffeo,
            potential,
        })
    }

    pub fn dim(&self) -> usize {
        self.diffeo.dim()
    }

    /// `log p(x)` up to an additive constant.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        let y = self.diffeo.forward(x)?;
        Ok(-self.potential.value(&y) + self.diffeo.log_abs_det(x)?)
    }

    /// `∇ log p(x) = −(D_x φ)ᵀ ∇ψ(φ(x))`; exact for the unit-determinant maps
    /// used here.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.diffeo.forward(x)?;
        let g = self.potential.grad(&y);
        let j = self.diffeo.jacobian(x)?;
        let d = self.dim();
        Ok((0..d).map(|c| -(0..d).map(|r| j.get(r, c) * g[r]).sum::<f64>()).collect())
    }

    pub fn manifold(&self) -> PullbackManifold<GroundTruthDiffeo, DiagonalQuadratic> {
        PullbackManifold {
            diffeo: self.diffeo,
            potential: self.potential.clone(),
        }
    }
}

/// Banana (`A = diag(1/4, 4)`) or its squeezed version (`A = diag(1/81, 4)`).
pub fn make_banana(squeezed: bool) -> TargetDensity {
    let (name, lam) = if squeezed {
        ("squeezed_banana", [1.0 / 81.0, 4.0])
    } else {
        ("banana", [0.25, 4.0])
    };
    TargetDensity::new(name, GroundTruthDiffeo::banana(), &lam).expect("valid constants")
}

pub fn make_river() -> TargetDensity {
    TargetDensity::new("river", GroundTruthDiffeo::river(), &[1.0 / 25.0, 3.0]).expect("valid constants")
}

pub fn standard_normal(dim: usize) -> TargetDensity {
    TargetDensity {
        name: "standard_normal",
        diffeo: GroundTruthDiffeo::Identity(dim),
        potential: DiagonalQuadratic::isotropic(dim),
    }
}

/// Log acceptance ratio of the Metropolis-adjusted Langevin move `x → x'`
/// with step size `δ` (drift `δ²/2 · ∇log p`).
pub fn mala_log_accept(target: &TargetDensity, x: &[f64], xp: &[f64], step_size: f64) -> Result<f64> {
    let h = 0.5 * step_size * step_size;
    let (sx, sxp) = (target.score(x)?, target.score(xp)?);
    let kernel = |from: &[f64], to: &[f64], s: &[f64]| -> f64 {
        from.iter()
            .zip(to)
            .zip(s)
            .map(|((f, t), g)| {
                let r = t - f - h * g;
                r * r
            })
            .sum::<f64>()
            / (2.0 * step_size * step_size)
    };
    Ok(target.log_prob(xp)? - target.log_prob(x)? - kernel(xp, x, &sxp) + kernel(x, xp, &sx))
}

/// Generator parameters and samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub params: Vec<(String, String)>,
    pub seed: u64,
    pub samples: Tensor,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn param(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// `n` independent chains, each started at the origin and run for `steps`
/// Langevin proposals with Metropolis-Hastings correction; row `i` is the
/// final state of chain `i`.
pub fn langevin_mh_sample(target: &TargetDensity, n: usize, steps: usize, step_size: f64, seed: u64) -> Result<Dataset> {
    if !(step_size > 0.0) || steps == 0 {
        return Err(Error::invalid("step size must be positive and steps at least 1"));
    }
    let d = target.dim();
    let h = 0.5 * step_size * step_size;
    let mut out = Vec::with_capacity(n * d);
    let mut accepted = 0usize;
    for chain in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chain as u64);
        let mut x = vec![0.0; d];
        let mut lp = target.log_prob(&x)?;
        let mut score = target.score(&x)?;
        let mut xp = vec![0.0; d];
        for _ in 0..steps {
            for i in 0..d {
                let eta: f64 = StandardNormal.sample(&mut rng);
                xp[i] = x[i] + h * score[i] + step_size * eta;
            }
            let lpp = target.log_prob(&xp)?;
            let sp = target.score(&xp)?;
            let (mut fwd, mut rev) = (0.0, 0.0);
            for i in 0..d {
                let f = xp[i] - x[i] - h * score[i];
                let r = x[i] - xp[i] - h * sp[i];
                fwd += f * f;
                rev += r * r;
            }
            let log_a = lpp - lp - (rev - fwd) / (2.0 * step_size * step_size);
            let u: f64 = rng.random();
            if log_a >= 0.0 || u < math::exp(log_a) {
                x.copy_from_slice(&xp);
                lp = lpp;
                score = sp;
                accepted += 1;
            }
        }
        out.extend_from_slice(&x);
    }
    let rate = if n == 0 { 0.0 } else { accepted as f64 / (n * steps) as f64 };
    Ok(Dataset {
        name: target.name.to_string(),
        params: vec![
            ("sampler".into(), "langevin_mh".into()),
            ("steps".into(), steps.to_string()),
            ("step_size".into(), format!("{step_size}")),
            ("acceptance_rate".into(), format!("{rate:.4}")),
        ],
        seed,
        samples: Tensor::matrix(n, d, out)?,
    })
}

/// Exact samples from `N(0, diag(variances))`.
pub fn make_gaussian(variances: &[f64], n: usize, seed: u64) -> Result<Dataset> {
    DiagonalQuadratic::from_variances(variances)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = variances.len();
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        for &l in variances {
            let z: f64 = StandardNormal.sample(&mut rng);
            out.push(math::sqrt(l) * z);
        }
    }
    Ok(Dataset {
        name: "gaussian".into(),
        params: vec![("variances".into(), join(variances))],
        seed,
        samples: Tensor::matrix(n, d, out)?,
    })
}

/// Hemisphere samples before and after the random isometric embedding.
#[derive(Debug, Clone)]
pub struct Hemisphere {
    /// `n × (d'+1)` points on the unit sphere.
    pub sphere: Tensor,
    /// `d × (d'+1)` orthonormal embedding.
    pub basis: Tensor,
    /// `n × d` embedded points.
    pub data: Tensor,
}

pub fn hemisphere_parts(latent: usize, dim: usize, n: usize, seed: u64) -> Result<Hemisphere> {
    if latent == 0 || dim < latent + 1 {
        return Err(Error::invalid(format!(
            "hemisphere needs d ≥ d'+1 and d' ≥ 1, got d'={latent}, d={dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(5.0, 1.0).expect("valid shape");
    let k = latent + 1;
    let mut sphere = Vec::with_capacity(n * k);
    let mut theta = vec![0.0; latent];
    for _ in 0..n {
        let (g1, g2): (f64, f64) = (gamma.sample(&mut rng), gamma.sample(&mut rng));
        theta[0] = g1 / (g1 + g2) * core::f64::consts::FRAC_PI_2;
        for t in theta.iter_mut().skip(1) {
            *t = rng.random::<f64>() * core::f64::consts::PI;
        }
        let mut sin_prod = 1.0;
        for &t in &theta {
            sphere.push(sin_prod * math::cos(t));
            sin_prod *= math::sin(t);
        }
        sphere.push(sin_prod);
    }
    let sphere = Tensor::matrix(n, k, sphere)?;
    let gauss: Vec<f64> = (0..dim * k).map(|_| StandardNormal.sample(&mut rng)).collect();
    let basis = thin_q(&Tensor::matrix(dim, k, gauss)?)?;
    let data = sphere.matmul_nt(&basis)?;
    Ok(Hemisphere { sphere, basis, data })
}

pub fn make_hemisphere(latent: usize, dim: usize, n: usize, seed: u64) -> Result<Dataset> {
    let parts = hemisphere_parts(latent, dim, n, seed)?;
    Ok(Dataset {
        name: format!("hemisphere_{latent}_{dim}"),
        params: vec![("latent_dim".into(), latent.to_string())],
        seed,
        samples: parts.data,
    })
}

/// Latent `z ~ N(0, 3I)`, ambient `x_j = sin(a_jᵀz) + N(0, 10⁻³)` with
/// `a_j ~ U(1, 2)^{d'}`; rows are `[x_1..x_{d−d'}, z]`.
pub fn make_sinusoid(latent: usize, dim: usize, n: usize, seed: u64) -> Result<Dataset> {
    if latent == 0 || dim <= latent {
        return Err(Error::invalid(format!(
            "sinusoid needs d > d' ≥ 1, got d'={latent}, d={dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ambient = dim - latent;
    let shears: Vec<f64> = (0..ambient * latent).map(|_| rng.random_range(1.0..2.0)).collect();
    let (latent_sd, noise_sd) = (math::sqrt(3.0), math::sqrt(1e-3));
    let mut out = Vec::with_capacity(n * dim);
    let mut z = vec![0.0; latent];
    for _ in 0..n {
        for v in z.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = latent_sd * e;
        }
        for j in 0..ambient {
            let dot: f64 = (0..latent).map(|k| shears[j * latent + k] * z[k]).sum();
            let eps: f64 = StandardNormal.sample(&mut rng);
            out.push(math::sin(dot) + noise_sd * eps);
        }
        out.extend_from_slice(&z);
    }
    Ok(Dataset {
        name: format!("sinusoid_{latent}_{dim}"),
        params: vec![
            ("latent_dim".into(), latent.to_string()),
            ("shears".into(), join(&shears)),
        ],
        seed,
        samples: Tensor::matrix(n, dim, out)?,
    })
}

/// Analytic target behind a dataset name, if any.
pub fn target_by_name(name: &str) -> Option<TargetDensity> {
    match name {
        "banana" => Some(make_banana(false)),
        "squeezed_banana" => Some(make_banana(true)),
        "river" => Some(make_river()),
        _ => None,
    }
}

/// Parses `"<family>_<d'>_<d>"`.
fn family_dims(name: &str, family: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix(family)?.strip_prefix('_')?;
    let (a, b) = rest.split_once('_')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

/// Generates any named dataset: `banana`, `squeezed_banana`, `river`,
/// `standard_normal_<d>`, `hemisphere_<d'>_<d>` or `sinusoid_<d'>_<d>`.
pub fn generate(name: &str, n: usize, seed: u64, steps: usize, step_size: f64) -> Result<Dataset> {
    if let Some(t) = target_by_name(name) {
        return langevin_mh_sample(&t, n, steps, step_size, seed);
    }
    if let Some(d) = name.strip_prefix("standard_normal_").and_then(|d| d.parse().ok()) {
        return langevin_mh_sample(&standard_normal(d), n, steps, step_size, seed);
    }
    if let Some((a, b)) = family_dims(name, "hemisphere") {
        return make_hemisphere(a, b, n, seed);
    }
    if let Some((a, b)) = family_dims(name, "sinusoid") {
        return make_sinusoid(a, b, n, seed);
    }
    Err(Error::invalid(format!("unknown dataset {name:?}")))
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}
