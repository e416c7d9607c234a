//! Geodesic and variation errors, and the four-variant comparison table.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::convex::{ConvexPotential, DiagonalQuadratic};
use crate::error::{Error, Result};
use crate::geometry::{Diffeomorphism, GroundTruthDiffeo, PullbackManifold};
use crate::math;
use crate::tensor::Tensor;
use crate::training::{train, Model, TrainConfig, Variant};

pub type Pair = (Vec<f64>, Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub pairs: usize,
    pub steps: usize,
    /// Perturbation standard deviation as a multiple of the per-coordinate
    /// data standard deviation.
    pub perturbation: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pairs: 100,
            steps: 100,
            perturbation: 0.05,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

/// Mean and (population) standard deviation over per-pair errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    pub std: f64,
    pub pairs: usize,
    /// Pairs dropped because a curve could not be computed.
    pub excluded: usize,
}

impl ErrorStats {
    pub fn from_values(values: &[f64], excluded: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("no pair could be evaluated"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(ErrorStats {
            mean,
            std: math::sqrt(var),
            pairs: values.len(),
            excluded,
        })
    }
}

/// Seeded shuffle split into `(train, test)` with `⌊n·fraction⌋` test rows.
pub fn train_test_split(data: &Tensor, test_fraction: f64, seed: u64) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::invalid("test fraction must lie in [0, 1)"));
    }
    let n = data.rows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = (n as f64 * test_fraction) as usize;
    let pick = |rows: &[usize]| -> Result<Tensor> {
        let mut out = Vec::with_capacity(rows.len() * data.cols());
        for &r in rows {
            out.extend_from_slice(data.row_slice(r));
        }
        Tensor::matrix(rows.len(), data.cols(), out)
    };
    Ok((pick(&idx[n_test..])?, pick(&idx[..n_test])?))
}

/// `count` disjoint endpoint pairs drawn without replacement from `points`.
pub fn sample_pairs(points: &Tensor, count: usize, seed: u64) -> Result<Vec<Pair>> {
    if points.rows() < 2 * count {
        return Err(Error::invalid(format!(
            "{count} pairs need {} points, only {} available",
            2 * count,
            points.rows()
        )));
    }
    let mut idx: Vec<usize> = (0..points.rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..count)
        .map(|k| {
            (
                points.row_slice(idx[2 * k]).to_vec(),
                points.row_slice(idx[2 * k + 1]).to_vec(),
            )
        })
        .collect())
}

/// Per-coordinate population standard deviation.
pub fn coordinate_std(data: &Tensor) -> Vec<f64> {
    let (n, d) = (data.rows() as f64, data.cols());
    (0..d)
        .map(|c| {
            let mean = (0..data.rows()).map(|r| data.get(r, c)).sum::<f64>() / n;
            let var = (0..data.rows())
                .map(|r| (data.get(r, c) - mean) * (data.get(r, c) - mean))
                .sum::<f64>()
                / n;
            math::sqrt(var)
        })
        .collect()
}

fn mean_curve_distance(a: &Tensor, b: &Tensor) -> f64 {
    let t = a.rows();
    (0..t)
        .map(|k| {
            let sq: f64 = a.row_slice(k).iter().zip(b.row_slice(k)).map(|(p, q)| (p - q) * (p - q)).sum();
            math::sqrt(sq)
        })
        .sum::<f64>()
        / t as f64
}

/// Mean over pairs of the step-averaged distance between learned and
/// ground-truth geodesics.
pub fn geodesic_error<A, P, B, Q>(
    learned: &PullbackManifold<A, P>,
    truth: &PullbackManifold<B, Q>,
    pairs: &[Pair],
    steps: usize,
) -> Result<ErrorStats>
where
    A: Diffeomorphism,
    P: ConvexPotential,
    B: Diffeomorphism,
    Q: ConvexPotential,
{
    if learned.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            found: learned.dim(),
        });
    }
    let mut values = Vec::with_capacity(pairs.len());
    let mut excluded = 0;
    for (x, y) in pairs {
        let curves = learned
            .geodesic_curve(x, y, steps)
            .and_then(|l| Ok((l, truth.geodesic_curve(x, y, steps)?)));
        match curves {
            Ok((l, g)) => values.push(mean_curve_distance(&l, &g)),
            Err(Error::Overflow { .. }) | Err(Error::SingularMatrix) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    ErrorStats::from_values(&values, excluded)
}

/// Mean displacement of geodesics when the second endpoint is perturbed by
/// `N(0, diag(sigma²))`.
pub fn variation_error<A, P>(
    manifold: &PullbackManifold<A, P>,
    pairs: &[Pair],
    sigma: &[f64],
    steps: usize,
    seed: u64,
) -> Result<ErrorStats>
where
    A: Diffeomorphism,
    P: ConvexPotential,
{
    if sigma.len() != manifold.dim() {
        return Err(Error::DimensionMismatch {
            expected: manifold.dim(),
            found: sigma.len(),
        });
    }
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("perturbation scale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(pairs.len());
    let mut excluded = 0;
    for (x, y) in pairs {
        let z: Vec<f64> = y
            .iter()
            .zip(sigma)
            .map(|(v, s)| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v + s * e
            })
            .collect();
        let curves = manifold
            .geodesic_curve(x, y, steps)
            .and_then(|a| Ok((a, manifold.geodesic_curve(x, &z, steps)?)));
        match curves {
            Ok((a, b)) => values.push(mean_curve_distance(&a, &b)),
            Err(Error::Overflow { .. }) | Err(Error::SingularMatrix) => excluded += 1,
            Err(e) => return Err(e),
        }
    }
    ErrorStats::from_values(&values, excluded)
}

/// A dataset entry of the comparison table.
#[derive(Debug, Clone)]
pub struct TableDataset {
    pub name: String,
    pub data: Tensor,
    pub truth: PullbackManifold<GroundTruthDiffeo, DiagonalQuadratic>,
}

#[derive(Debug, Clone)]
pub struct TableCell {
    pub dataset: String,
    pub variant: Variant,
    pub seed: u64,
    pub config: TrainConfig,
    pub outcome: core::result::Result<(ErrorStats, ErrorStats), String>,
}

/// Seed-averaged entry of a table column.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSummary {
    pub dataset: String,
    pub variant: Variant,
    pub geodesic_mean: f64,
    pub geodesic_std: f64,
    pub variation_mean: f64,
    pub variation_std: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub cells: Vec<TableCell>,
}

impl EvalReport {
    /// Averages each `(dataset, variant)` over its successful seeds.
    pub fn summary(&self) -> Vec<TableSummary> {
        let mut out: Vec<TableSummary> = Vec::new();
        for cell in &self.cells {
            let Ok((g, v)) = &cell.outcome else { continue };
            let entry = match out.iter_mut().find(|s| s.dataset == cell.dataset && s.variant == cell.variant) {
                Some(e) => e,
                None => {
                    out.push(TableSummary {
                        dataset: cell.dataset.clone(),
                        variant: cell.variant,
                        geodesic_mean: 0.0,
                        geodesic_std: 0.0,
                        variation_mean: 0.0,
                        variation_std: 0.0,
                        seeds: 0,
                    });
                    out.last_mut().unwrap()
                }
            };
            entry.geodesic_mean += g.mean;
            entry.geodesic_std += g.std;
            entry.variation_mean += v.mean;
            entry.variation_std += v.std;
            entry.seeds += 1;
        }
        for s in &mut out {
            let k = s.seeds as f64;
            s.geodesic_mean /= k;
            s.geodesic_std /= k;
            s.variation_mean /= k;
            s.variation_std /= k;
        }
        out
    }
}

/// Evaluates one trained model against the ground truth on held-out pairs.
pub fn evaluate_model(
    model: &Model,
    truth: &PullbackManifold<GroundTruthDiffeo, DiagonalQuadratic>,
    train_data: &Tensor,
    test_data: &Tensor,
    config: &EvalConfig,
) -> Result<(ErrorStats, ErrorStats)> {
    let pairs = sample_pairs(test_data, config.pairs, config.seed)?;
    let sigma: Vec<f64> = coordinate_std(train_data).iter().map(|s| s * config.perturbation).collect();
    let learned = model.manifold()?;
    let geo = geodesic_error(&learned, truth, &pairs, config.steps)?;
    let var = variation_error(&learned, &pairs, &sigma, config.steps, config.seed.wrapping_add(1))?;
    Ok((geo, var))
}

/// Trains every `(dataset, variant, seed)` combination and evaluates it.
/// Training failures are recorded per cell.
pub fn run_table(
    datasets: &[TableDataset],
    variants: &[Variant],
    seeds: &[u64],
    eval: &EvalConfig,
    mut configure: impl FnMut(&str, Variant, u64) -> TrainConfig,
) -> Result<EvalReport> {
    let mut cells = Vec::new();
    for ds in datasets {
        let (train_data, test_data) = train_test_split(&ds.data, eval.test_fraction, eval.seed)?;
        for &variant in variants {
            for &seed in seeds {
                let config = configure(&ds.name, variant, seed);
                let outcome = Model::new(config.flow_config(ds.data.cols()), config.seed)
                    .and_then(|mut model| {
                        train(&mut model, &train_data, &config)?;
                        evaluate_model(&model, &ds.truth, &train_data, &test_data, eval)
                    })
                    .map_err(|e| e.to_string());
                cells.push(TableCell {
                    dataset: ds.name.clone(),
                    variant,
                    seed,
                    config,
                    outcome,
                });
            }
        }
    }
    Ok(EvalReport {
        config: eval.clone(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::make_banana;

    fn euclid() -> PullbackManifold<GroundTruthDiffeo, DiagonalQuadratic> {
        PullbackManifold::new(GroundTruthDiffeo::Identity(2), DiagonalQuadratic::isotropic(2)).unwrap()
    }

    fn some_pairs() -> Vec<Pair> {
        vec![
            (vec![0.0, -3.0], vec![0.0, 3.0]),
            (vec![1.0, 1.0], vec![-2.0, 0.5]),
            (vec![0.3, 2.0], vec![0.1, -1.0]),
        ]
    }

    #[test]
    fn identical_manifolds_have_zero_error() {
        let t = make_banana(false).manifold();
        let e = geodesic_error(&t, &t, &some_pairs(), 50).unwrap();
        assert_eq!((e.mean, e.std, e.pairs), (0.0, 0.0, 3));
    }

    #[test]
    fn shifted_straight_lines() {
        // a translation in φ-space leaves straight lines unchanged
        let shifted = PullbackManifold::new(
            GroundTruthDiffeo::Banana { a: 0.0, z: 1.0 },
            DiagonalQuadratic::isotropic(2),
        )
        .unwrap();
        let e = geodesic_error(&shifted, &euclid(), &some_pairs(), 10).unwrap();
        assert!(e.mean.abs() < 1e-12);
        let banana = make_banana(false).manifold();
        let pair = vec![(vec![0.0, -3.0], vec![0.0, 3.0])];
        let e = geodesic_error(&banana, &euclid(), &pair, 3).unwrap();
        // curve points: (0,−3), (−1,0), (0,3) vs (0,−3), (0,0), (0,3)
        assert!((e.mean - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn variation_error_of_straight_lines() {
        let m = euclid();
        let pairs = some_pairs();
        let tiny = variation_error(&m, &pairs, &[1e-8, 1e-8], 20, 4).unwrap();
        assert!(tiny.mean <= 1e-6);
        // straight lines: displacement at t is t·‖Δ‖, averaging to ‖Δ‖/2 over
        // the symmetric grid
        let sigma = [0.3, 0.1];
        let e = variation_error(&m, &pairs, &sigma, 11, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut want = 0.0;
        for _ in &pairs {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            want += 0.5 * ((sigma[0] * a).powi(2) + (sigma[1] * b).powi(2)).sqrt();
        }
        assert!((e.mean - want / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pair_order_symmetry() {
        let m = make_banana(false).manifold();
        let e = euclid();
        let pairs = some_pairs();
        let swapped: Vec<Pair> = pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect();
        let a = geodesic_error(&m, &e, &pairs, 21).unwrap();
        let b = geodesic_error(&m, &e, &swapped, 21).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-12);
    }

    #[test]
    fn split_and_pairs() {
        let data = Tensor::matrix(10, 1, (0..10).map(|v| v as f64).collect()).unwrap();
        let (tr, te) = train_test_split(&data, 0.2, 1).unwrap();
        assert_eq!((tr.rows(), te.rows()), (8, 2));
        let mut all: Vec<f64> = tr.data().iter().chain(te.data()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, data.data());
        let pairs = sample_pairs(&data, 5, 0).unwrap();
        let mut used: Vec<f64> = pairs.iter().flat_map(|(a, b)| [a[0], b[0]]).collect();
        used.sort_by(f64::total_cmp);
        assert_eq!(used, data.data());
        assert!(sample_pairs(&data, 6, 0).is_err());
    }

    #[test]
    fn population_std() {
        let data = Tensor::from_rows(&[[1.0, 0.0], [3.0, 0.0]]).unwrap();
        assert_eq!(coordinate_std(&data), vec![1.0, 0.0]);
    }
}
