//! Loss terms, Adam with warm-up cosine schedule, and the training loop.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::convex::DiagonalQuadratic;
use crate::diff::{Backend, Eager, Graph, ParamId, ParamStore, Recorder};
use crate::error::{Error, Result};
use crate::flow::{Flow, FlowConfig};
use crate::geometry::PullbackManifold;
use crate::math;
use crate::tensor::Tensor;

/// Parameter name of the base log-variances inside the model's store.
pub const LOG_VARIANCE_PARAM: &str = "base.log_variances";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Anisotropic base with volume and isometry regularisation.
    Ours,
    StandardNf,
    AnisotropicNf,
    IsometricNf,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Ours, Variant::StandardNf, Variant::AnisotropicNf, Variant::IsometricNf];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Ours => "ours",
            Variant::StandardNf => "standard_nf",
            Variant::AnisotropicNf => "anisotropic_nf",
            Variant::IsometricNf => "isometric_nf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }

    pub fn regularized(&self) -> bool {
        matches!(self, Variant::Ours | Variant::IsometricNf)
    }

    pub fn trainable_variances(&self) -> bool {
        matches!(self, Variant::Ours | Variant::AnisotropicNf)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub flow_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_iso: f64,
    pub lambda_vol: f64,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub hidden: usize,
    pub blocks: usize,
    pub scale_bound: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Ours,
            flow_steps: 8,
            epochs: 1000,
            batch_size: 64,
            lambda_iso: 1.0,
            lambda_vol: 1.0,
            learning_rate: 3e-4,
            warmup_steps: 1000,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            weight_decay: 1e-5,
            clip_norm: 1.0,
            hidden: 64,
            blocks: 2,
            scale_bound: 5.0,
            seed: 0,
        }
    }
}

/// Built-in dataset names with presets.
pub const PRESET_NAMES: [&str; 8] = [
    "banana",
    "squeezed_banana",
    "river",
    "sinusoid_1_3",
    "sinusoid_2_3",
    "sinusoid_5_20",
    "hemisphere_2_3",
    "hemisphere_5_20",
];

impl TrainConfig {
    /// Per-dataset defaults. The three two-dimensional targets reuse the
    /// low-dimensional sinusoid settings.
    pub fn preset(dataset: &str) -> Option<Self> {
        let (flow_steps, epochs, batch_size, lambda_iso, lambda_vol, learning_rate) = match dataset {
            "banana" | "squeezed_banana" | "river" => (8, 1000, 64, 1.0, 1.0, 3e-4),
            "sinusoid_1_3" | "sinusoid_2_3" => (8, 1000, 64, 1.0, 1.0, 3e-4),
            "sinusoid_5_20" => (24, 2000, 128, 1.2, 2.5, 4e-4),
            "hemisphere_2_3" => (8, 2000, 64, 1.0, 1.0, 4e-4),
            "hemisphere_5_20" => (12, 2000, 64, 0.75, 1.2, 4e-4),
            _ => return None,
        };
        Some(TrainConfig {
            flow_steps,
            epochs,
            batch_size,
            lambda_iso,
            lambda_vol,
            learning_rate,
            ..TrainConfig::default()
        })
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// `(λ_iso, λ_vol)` after applying the variant (zero for unregularised
    /// variants).
    pub fn effective_lambdas(&self) -> (f64, f64) {
        if self.variant.regularized() {
            (self.lambda_iso, self.lambda_vol)
        } else {
            (0.0, 0.0)
        }
    }

    pub fn flow_config(&self, dim: usize) -> FlowConfig {
        FlowConfig {
            dim,
            layers: self.flow_steps,
            hidden: self.hidden,
            blocks: self.blocks,
            scale_bound: self.scale_bound,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.flow_steps == 0 {
            return Err(Error::invalid("epochs, batch size and flow steps must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.lambda_iso < 0.0 || self.lambda_vol < 0.0 {
            return Err(Error::invalid("learning rate must be positive and penalties non-negative"));
        }
        Ok(())
    }

    /// Learning rate before optimiser step `step` (0-based) of `total`.
    pub fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        let base = self.learning_rate;
        if step < self.warmup_steps {
            return base * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = total.saturating_sub(self.warmup_steps);
        if span == 0 {
            return base;
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        0.5 * base * (1.0 + math::cos(core::f64::consts::PI * progress))
    }
}

/// A flow together with the diagonal base covariance `A = diag(exp(a))`.
#[derive(Debug, Clone)]
pub struct Model {
    flow: Flow,
    log_var: ParamId,
}

impl Model {
    /// Identity flow with unit variances.
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        Self::from_flow(Flow::new(config, seed)?)
    }

    pub fn from_flow(mut flow: Flow) -> Result<Self> {
        if flow.param_id(LOG_VARIANCE_PARAM).is_some() {
            return Err(Error::invalid("flow already carries base variances"));
        }
        let d = flow.dim();
        let log_var = flow.params_mut().register(LOG_VARIANCE_PARAM, Tensor::zeros(&[d, 1]));
        Ok(Model { flow, log_var })
    }

    pub fn flow(&self) -> &Flow {
        &self.flow
    }

    pub fn flow_mut(&mut self) -> &mut Flow {
        &mut self.flow
    }

    pub fn dim(&self) -> usize {
        self.flow.dim()
    }

    pub fn params(&self) -> &ParamStore {
        self.flow.params()
    }

    pub fn log_variances(&self) -> &[f64] {
        self.flow.params().value(self.log_var).data()
    }

    pub fn variances(&self) -> Vec<f64> {
        self.log_variances().iter().map(|&a| math::exp(a)).collect()
    }

    pub fn set_log_variances(&mut self, a: &[f64]) -> Result<()> {
        if a.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: a.len(),
            });
        }
        self.flow.set_param(LOG_VARIANCE_PARAM, Tensor::matrix(a.len(), 1, a.to_vec())?)
    }

    pub fn potential(&self) -> Result<DiagonalQuadratic> {
        DiagonalQuadratic::from_log_variances(self.log_variances())
    }

    pub fn manifold(&self) -> Result<PullbackManifold<&Flow, DiagonalQuadratic>> {
        PullbackManifold::new(&self.flow, self.potential()?)
    }

    /// Loss terms on `batch` (eager evaluation).
    pub fn loss(&self, batch: &Tensor, lambda_iso: f64, lambda_vol: f64) -> Result<LossValues> {
        let mut b = Eager::new(self.flow.params());
        let terms = self.loss_terms(&mut b, batch, lambda_iso, lambda_vol, true, true)?;
        Ok(LossValues {
            nll: terms.nll.item(),
            vol: terms.vol.item(),
            iso: terms.iso.item(),
            total: terms.total.item(),
        })
    }

    pub fn nll(&self, batch: &Tensor) -> Result<f64> {
        Ok(self.loss(batch, 0.0, 0.0)?.nll)
    }

    pub fn volume_penalty(&self, batch: &Tensor) -> Result<f64> {
        Ok(self.loss(batch, 0.0, 0.0)?.vol)
    }

    pub fn isometry_penalty(&self, batch: &Tensor) -> Result<f64> {
        Ok(self.loss(batch, 1.0, 0.0)?.iso)
    }

    /// Builds `nll + λ_vol·vol + λ_iso·iso` on any backend. With
    /// `trainable_variances == false` the log-variances enter as constants.
    /// Jacobian tangents are only propagated when `with_iso` is set.
    pub fn loss_terms<B: Backend>(
        &self,
        b: &mut B,
        batch: &Tensor,
        lambda_iso: f64,
        lambda_vol: f64,
        trainable_variances: bool,
        with_iso: bool,
    ) -> Result<LossTerms<B::Var>> {
        let (n, d) = (batch.rows(), self.dim());
        if n == 0 {
            return Err(Error::Empty("batch"));
        }
        if batch.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: batch.cols(),
            });
        }
        let x = b.constant(batch.clone());
        let tangents = if with_iso {
            (0..d)
                .map(|i| {
                    let mut e = Tensor::zeros(&[n, d]);
                    for r in 0..n {
                        e.set(r, i, 1.0);
                    }
                    b.constant(e)
                })
                .collect()
        } else {
            Vec::new()
        };
        let out = self.flow.trace(b, x, tangents)?;

        let a = if trainable_variances {
            b.param(self.log_var)
        } else {
            b.constant(self.flow.params().value(self.log_var).clone())
        };
        let mean_row = b.constant(Tensor::full(&[1, n], 1.0 / n as f64));
        let ones_d = b.constant(Tensor::full(&[1, d], 1.0));

        // ½ φ(x)ᵀ A⁻¹ φ(x) per row
        let neg_a = b.scale(&a, -1.0)?;
        let inv_lam = b.exp(&neg_a)?;
        let y2 = b.square(&out.y)?;
        let quad = b.matmul(&y2, &inv_lam)?;
        let quad = b.scale(&quad, 0.5)?;
        let per_row = b.sub(&quad, &out.logdet)?;
        let mean_nll = b.matmul(&mean_row, &per_row)?;
        let sum_a = b.matmul(&ones_d, &a)?;
        let half_sum_a = b.scale(&sum_a, 0.5)?;
        let norm_const = b.constant(Tensor::full(&[1, 1], 0.5 * d as f64 * math::LN_2PI));
        let nll = b.add(&mean_nll, &half_sum_a)?;
        let nll = b.add(&nll, &norm_const)?;

        let ld2 = b.square(&out.logdet)?;
        let vol = b.matmul(&mean_row, &ld2)?;

        let iso = if with_iso {
            let mut acc: Option<B::Var> = None;
            let ones_n = b.constant(Tensor::full(&[n, 1], 1.0));
            for i in 0..d {
                for j in i..d {
                    let prod = b.mul(&out.tangents[i], &out.tangents[j])?;
                    let g = b.sum_cols(&prod)?;
                    let term = if i == j {
                        let diff = b.sub(&g, &ones_n)?;
                        b.square(&diff)?
                    } else {
                        let sq = b.square(&g)?;
                        b.scale(&sq, 2.0)?
                    };
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => b.add(&prev, &term)?,
                    });
                }
            }
            let per_row = acc.expect("d ≥ 1");
            b.matmul(&mean_row, &per_row)?
        } else {
            b.constant(Tensor::full(&[1, 1], 0.0))
        };

        let mut total = nll.clone();
        if lambda_vol != 0.0 {
            let v = b.scale(&vol, lambda_vol)?;
            total = b.add(&total, &v)?;
        }
        if lambda_iso != 0.0 && with_iso {
            let v = b.scale(&iso, lambda_iso)?;
            total = b.add(&total, &v)?;
        }
        Ok(LossTerms { nll, vol, iso, total })
    }
}

pub struct LossTerms<V> {
    pub nll: V,
    pub vol: V,
    pub iso: V,
    pub total: V,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub nll: f64,
    pub vol: f64,
    pub iso: f64,
    pub total: f64,
}

/// One row of the loss history: batch-size weighted epoch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub nll: f64,
    pub vol: f64,
    pub iso: f64,
    pub total: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
}

/// Adam with L2-style weight decay added to the (clipped) gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros = |p: &crate::diff::Parameter| Tensor::zeros(p.value.shape());
        Adam {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: store.iter().map(zeros).collect(),
            v: store.iter().map(zeros).collect(),
        }
    }

    /// Applies one update from the gradients held in `store`. Parameters whose
    /// index is in `frozen` are left untouched; `no_decay` ones skip weight decay.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, frozen: &[ParamId], no_decay: &[ParamId]) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for (i, p) in store.iter_mut().enumerate() {
            if frozen.contains(&ParamId(i)) {
                continue;
            }
            let decay = if no_decay.contains(&ParamId(i)) { 0.0 } else { self.weight_decay };
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let (theta, grad) = (p.value.data_mut(), p.grad.data());
            for k in 0..theta.len() {
                let g = grad[k] + decay * theta[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                theta[k] -= lr * mh / (math::sqrt(vh) + self.eps);
            }
        }
    }
}

/// Rescales all gradients so their joint ℓ² norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let sq: f64 = store.iter().map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>()).sum();
    let norm = math::sqrt(sq);
    if norm > max_norm {
        let c = max_norm / (norm + 1e-12);
        for p in store.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= c);
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub steps: usize,
}

/// Trains `model` in place on `data` (`n × d`).
pub fn train(model: &mut Model, data: &Tensor, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, data, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    model: &mut Model,
    data: &Tensor,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let (n, d) = (data.rows(), data.cols());
    if n == 0 {
        return Err(Error::Empty("training data"));
    }
    if d != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: d,
        });
    }
    let (lambda_iso, lambda_vol) = config.effective_lambdas();
    let trainable = config.variant.trainable_variances();
    let with_iso = lambda_iso != 0.0;
    let batches = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches;
    let frozen: Vec<ParamId> = if trainable { vec![] } else { vec![model.log_var] };
    let no_decay = [model.log_var];

    let mut adam = Adam::new(model.params(), config.beta1, config.beta2, config.adam_eps, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    let mut lr = 0.0;
    let mut rows = Vec::with_capacity(config.batch_size * d);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            rows.clear();
            for &i in chunk {
                rows.extend_from_slice(data.row_slice(i));
            }
            let batch = Tensor::matrix(chunk.len(), d, core::mem::take(&mut rows))?;

            let mut graph = Graph::new();
            let (values, root) = {
                let mut rec = Recorder::new(&mut graph, model.flow.params());
                let terms = model
                    .loss_terms(&mut rec, &batch, lambda_iso, lambda_vol, trainable, with_iso)
                    .map_err(|e| match e {
                        Error::Overflow { .. } => Error::NonFiniteLoss { epoch, batch: bi },
                        other => other,
                    })?;
                let g = &*rec.graph;
                let values = [
                    g.value(terms.nll).item(),
                    g.value(terms.vol).item(),
                    g.value(terms.iso).item(),
                    g.value(terms.total).item(),
                ];
                (values, terms.total)
            };
            if !values[3].is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            let store = model.flow.params_mut();
            store.zero_grad();
            graph.backward(root, store)?;
            clip_grad_norm(store, config.clip_norm);
            lr = config.learning_rate_at(step, total_steps);
            adam.step(store, lr, &frozen, &no_decay);
            if !store.all_finite() {
                return Err(Error::NonFiniteParameters { epoch, batch: bi });
            }
            step += 1;
            let w = chunk.len() as f64;
            for (s, v) in sums.iter_mut().zip(values) {
                *s += w * v;
            }
            rows = batch.into_data();
        }
        let nf = n as f64;
        let record = EpochRecord {
            epoch,
            nll: sums[0] / nf,
            vol: sums[1] / nf,
            iso: sums[2] / nf,
            total: sums[3] / nf,
            lr,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { history, steps: step })
}

/// Short human-readable summary of a configuration, one `key = value` per line.
pub fn describe(config: &TrainConfig) -> String {
    format!(
        "variant = {}\nflow_steps = {}\nepochs = {}\nbatch_size = {}\nlambda_iso = {}\nlambda_vol = {}\n\
         learning_rate = {}\nwarmup_steps = {}\nbeta = ({}, {})\nadam_eps = {}\nweight_decay = {}\n\
         clip_norm = {}\nhidden = {}\nblocks = {}\nscale_bound = {}\nseed = {}",
        config.variant.name(),
        config.flow_steps,
        config.epochs,
        config.batch_size,
        config.lambda_iso,
        config.lambda_vol,
        config.learning_rate,
        config.warmup_steps,
        config.beta1,
        config.beta2,
        config.adam_eps,
        config.weight_decay,
        config.clip_norm,
        config.hidden,
        config.blocks,
        config.scale_bound,
        config.seed
    )
}
