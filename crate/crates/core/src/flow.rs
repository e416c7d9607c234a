//! Affine coupling flow `φ: Rᵈ → Rᵈ`.
//!
//! Each layer leaves the masked "pass" coordinates untouched and maps the
//! remaining ones as `x_t ↦ x_t ⊙ exp(s(x_p)) + t(x_p)`, where `s` and `t` are
//! separate residual networks and `s` is soft-clamped to `(-s_max, s_max)`
//! through `s_max · tanh(· / s_max)`. The final linear layer of every
//! conditioner starts at zero, so a fresh flow is exactly the identity.
//!
//! Forward passes optionally carry tangent vectors; the propagated tangents are
//! Jacobian-vector products built from recorded primitives, so on a
//! [`Recorder`](crate::diff::Recorder) they are differentiable with respect to
//! the parameters.

use alloc::borrow::Cow;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{Backend, Eager, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Architecture of a [`Flow`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub dim: usize,
    /// Number of coupling layers ("flow steps").
    pub layers: usize,
    pub hidden: usize,
    pub blocks: usize,
    /// Soft clamp `s_max` on the log-scale outputs.
    pub scale_bound: f64,
}

impl FlowConfig {
    pub fn new(dim: usize, layers: usize) -> Self {
        FlowConfig {
            dim,
            layers,
            hidden: 64,
            blocks: 2,
            scale_bound: 5.0,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks = blocks;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("coupling flows need dimension ≥ 2"));
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::invalid("flow needs at least one layer and one hidden unit"));
        }
        if !(self.scale_bound > 0.0) || !self.scale_bound.is_finite() {
            return Err(Error::invalid("scale bound must be positive and finite"));
        }
        Ok(())
    }
}

/// Default pass-through mask of layer `k`: even layers keep the first
/// `⌈d/2⌉` coordinates, odd layers keep the last `⌊d/2⌋`.
pub fn alternating_mask(dim: usize, layer: usize) -> Vec<bool> {
    let split = dim.div_ceil(2);
    (0..dim)
        .map(|i| if layer % 2 == 0 { i < split } else { i >= split })
        .collect()
}

#[derive(Debug, Clone)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: Option<&mut ChaCha8Rng>) -> Self {
        let (w, b) = match rng {
            Some(rng) => {
                let bound = 1.0 / math::sqrt(fan_in as f64);
                let w = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                let b = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
                (w, b)
            }
            None => (vec![0.0; fan_in * fan_out], vec![0.0; fan_out]),
        };
        let weight = store.register(format!("{name}.weight"), Tensor::matrix(fan_in, fan_out, w).unwrap());
        let bias = store.register(format!("{name}.bias"), Tensor::matrix(1, fan_out, b).unwrap());
        Linear { weight, bias }
    }

    fn apply<B: Backend>(&self, b: &mut B, x: &B::Var, dx: &[B::Var]) -> Result<(B::Var, Vec<B::Var>)> {
        let w = b.param(self.weight);
        let bias = b.param(self.bias);
        let xw = b.matmul(x, &w)?;
        let y = b.add_row(&xw, &bias)?;
        let dy = dx.iter().map(|v| b.matmul(v, &w)).collect::<Result<Vec<_>>>()?;
        Ok((y, dy))
    }
}

/// Residual conditioner: linear → blocks of `h + L₁(relu(L₀(relu(h))))` → linear.
#[derive(Debug, Clone)]
struct ResNet {
    input: Linear,
    blocks: Vec<(Linear, Linear)>,
    output: Linear,
}

impl ResNet {
    fn new(store: &mut ParamStore, name: &str, cfg: &FlowConfig, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let input = Linear::new(store, &format!("{name}.input"), fan_in, cfg.hidden, Some(rng));
        let blocks = (0..cfg.blocks)
            .map(|j| {
                (
                    Linear::new(store, &format!("{name}.block{j}.0"), cfg.hidden, cfg.hidden, Some(rng)),
                    Linear::new(store, &format!("{name}.block{j}.1"), cfg.hidden, cfg.hidden, Some(rng)),
                )
            })
            .collect();
        let output = Linear::new(store, &format!("{name}.output"), cfg.hidden, fan_out, None);
        ResNet { input, blocks, output }
    }

    fn apply<B: Backend>(&self, b: &mut B, x: &B::Var, dx: &[B::Var]) -> Result<(B::Var, Vec<B::Var>)> {
        let (mut h, mut dh) = self.input.apply(b, x, dx)?;
        for (l0, l1) in &self.blocks {
            let a = b.relu(&h)?;
            let da = dh.iter().map(|v| b.relu_mask(&h, v)).collect::<Result<Vec<_>>>()?;
            let (u, du) = l0.apply(b, &a, &da)?;
            let a2 = b.relu(&u)?;
            let da2 = du.iter().map(|v| b.relu_mask(&u, v)).collect::<Result<Vec<_>>>()?;
            let (w, dw) = l1.apply(b, &a2, &da2)?;
            h = b.add(&h, &w)?;
            dh = dh.iter().zip(&dw).map(|(p, q)| b.add(p, q)).collect::<Result<Vec<_>>>()?;
        }
        self.output.apply(b, &h, &dh)
    }
}

#[derive(Debug, Clone)]
pub struct CouplingLayer {
    mask: Vec<bool>,
    pass: Vec<usize>,
    transform: Vec<usize>,
    scale_net: ResNet,
    shift_net: ResNet,
}

impl CouplingLayer {
    /// Pass-through mask (`true` = coordinate left unchanged).
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Forward pass outputs: `y = φ(x)`, per-row `log|det Dφ(x)|` as an `n × 1`
/// column, and the pushed-forward tangents `Dφ(x)[vᵢ]`.
pub struct Traced<V> {
    pub y: V,
    pub logdet: V,
    pub tangents: Vec<V>,
}

#[derive(Debug, Clone)]
pub struct Flow {
    config: FlowConfig,
    layers: Vec<CouplingLayer>,
    params: ParamStore,
}

impl Flow {
    /// Fresh identity flow with the alternating masks; `seed` draws the
    /// hidden-layer weights.
    pub fn new(config: FlowConfig, seed: u64) -> Result<Self> {
        let masks = (0..config.layers).map(|k| alternating_mask(config.dim, k)).collect();
        Self::with_masks(config, masks, seed)
    }

    pub fn with_masks(config: FlowConfig, masks: Vec<Vec<bool>>, seed: u64) -> Result<Self> {
        config.validate()?;
        if masks.len() != config.layers {
            return Err(Error::invalid(format!(
                "expected {} masks, got {}",
                config.layers,
                masks.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(config.layers);
        for (k, mask) in masks.into_iter().enumerate() {
            if mask.len() != config.dim {
                return Err(Error::DimensionMismatch {
                    expected: config.dim,
                    found: mask.len(),
                });
            }
            let pass: Vec<usize> = (0..config.dim).filter(|&i| mask[i]).collect();
            let transform: Vec<usize> = (0..config.dim).filter(|&i| !mask[i]).collect();
            if pass.is_empty() || transform.is_empty() {
                return Err(Error::invalid(format!("mask of layer {k} must pass and transform at least one coordinate")));
            }
            let scale_net = ResNet::new(&mut params, &format!("layer{k}.scale"), &config, pass.len(), transform.len(), &mut rng);
            let shift_net = ResNet::new(&mut params, &format!("layer{k}.shift"), &config, pass.len(), transform.len(), &mut rng);
            layers.push(CouplingLayer {
                mask,
                pass,
                transform,
                scale_net,
                shift_net,
            });
        }
        Ok(Flow { config, layers, params })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Overwrites a named parameter, checking its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .param_id(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name}")))?;
        let p = self.params.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Runs the flow on a batch (`n × d`) with any number of tangent batches.
    pub fn trace<B: Backend>(&self, b: &mut B, x: B::Var, tangents: Vec<B::Var>) -> Result<Traced<B::Var>> {
        let xv = b.value(&x);
        if xv.shape().len() != 2 || xv.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: xv.cols(),
            });
        }
        let n = xv.rows();
        let ones = b.constant(Tensor::full(&[n, 1], 1.0));
        let mut logdet: Option<B::Var> = None;
        let mut y = x;
        let mut dys = tangents;
        for (k, layer) in self.layers.iter().enumerate() {
            let (ny, ld, ndys) = self.layer_forward(b, layer, &y, &dys)?;
            if !b.value(&ny).all_finite() || !b.value(&ld).all_finite() {
                return Err(Error::Overflow { layer: k, pass: "forward" });
            }
            logdet = Some(match logdet {
                None => ld,
                Some(acc) => b.add(&acc, &ld)?,
            });
            y = ny;
            dys = ndys;
        }
        let logdet = match logdet {
            Some(l) => l,
            None => b.scale(&ones, 0.0)?,
        };
        Ok(Traced {
            y,
            logdet,
            tangents: dys,
        })
    }

    fn layer_forward<B: Backend>(
        &self,
        b: &mut B,
        layer: &CouplingLayer,
        x: &B::Var,
        dxs: &[B::Var],
    ) -> Result<(B::Var, B::Var, Vec<B::Var>)> {
        let xp = b.slice(x, &layer.pass)?;
        let xt = b.slice(x, &layer.transform)?;
        let dps = dxs.iter().map(|v| b.slice(v, &layer.pass)).collect::<Result<Vec<_>>>()?;
        let dts = dxs.iter().map(|v| b.slice(v, &layer.transform)).collect::<Result<Vec<_>>>()?;

        let (raw, draws) = layer.scale_net.apply(b, &xp, &dps)?;
        let (shift, dshifts) = layer.shift_net.apply(b, &xp, &dps)?;

        let bound = self.config.scale_bound;
        let r = b.scale(&raw, 1.0 / bound)?;
        let th = b.tanh(&r)?;
        let s = b.scale(&th, bound)?;
        let e = b.exp(&s)?;
        let xe = b.mul(&xt, &e)?;
        let yt = b.add(&xe, &shift)?;
        let y = b.concat(&xp, &layer.pass, &yt, &layer.transform)?;
        let logdet = b.sum_cols(&s)?;

        let mut dys = Vec::with_capacity(dxs.len());
        if !dxs.is_empty() {
            let rows = b.value(&th).rows();
            let cols = b.value(&th).cols();
            let ones = b.constant(Tensor::full(&[rows, cols], 1.0));
            let th2 = b.square(&th)?;
            let sech2 = b.sub(&ones, &th2)?;
            for ((dp, dt), (draw, dshift)) in dps.iter().zip(&dts).zip(draws.iter().zip(&dshifts)) {
                // (v_t + x_t ⊙ ds) ⊙ e + dt
                let ds = b.mul(&sech2, draw)?;
                let xds = b.mul(&xt, &ds)?;
                let inner = b.add(dt, &xds)?;
                let scaled = b.mul(&inner, &e)?;
                let dyt = b.add(&scaled, dshift)?;
                dys.push(b.concat(dp, &layer.pass, &dyt, &layer.transform)?);
            }
        }
        Ok((y, logdet, dys))
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// `φ` on a batch: images and per-row `log|det Dφ|`.
    pub fn forward_batch(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut eager = Eager::new(&self.params);
        let out = self.trace(&mut eager, Cow::Borrowed(x), Vec::new())?;
        Ok((out.y.into_owned(), out.logdet.into_owned().into_data()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_point(x)?;
        let (y, ld) = self.forward_batch(&Tensor::row(x))?;
        Ok((y.into_data(), ld[0]))
    }

    /// `φ⁻¹` on a batch, inverting each layer algebraically.
    pub fn inverse_batch(&self, y: &Tensor) -> Result<Tensor> {
        if y.shape().len() != 2 || y.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: y.cols(),
            });
        }
        let mut eager = Eager::new(&self.params);
        let b = &mut eager;
        let mut cur: Cow<'_, Tensor> = Cow::Borrowed(y);
        let bound = self.config.scale_bound;
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let yp = b.slice(&cur, &layer.pass)?;
            let yt = b.slice(&cur, &layer.transform)?;
            let (raw, _) = layer.scale_net.apply(b, &yp, &[])?;
            let (shift, _) = layer.shift_net.apply(b, &yp, &[])?;
            let s = raw.map(|r| bound * math::tanh(r / bound));
            let xt = yt
                .zip_map(&shift, "inverse", |v, t| v - t)?
                .zip_map(&s, "inverse", |v, s| v * math::exp(-s))?;
            let x = Tensor::merge_cols(&yp, &layer.pass, &xt, &layer.transform)?;
            if !x.all_finite() {
                return Err(Error::Overflow { layer: k, pass: "inverse" });
            }
            cur = Cow::Owned(x);
        }
        Ok(cur.into_owned())
    }

    pub fn inverse(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_point(y)?;
        Ok(self.inverse_batch(&Tensor::row(y))?.into_data())
    }

    /// `D_x φ [v]`.
    pub fn jvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        self.check_point(v)?;
        let mut eager = Eager::new(&self.params);
        let out = self.trace(&mut eager, Cow::Owned(Tensor::row(x)), vec![Cow::Owned(Tensor::row(v))])?;
        Ok(out.tangents[0].clone().into_owned().into_data())
    }

    /// Dense `D_x φ` (`d × d`, entry `(r, c) = ∂φ_r/∂x_c`), one JVP per column.
    pub fn jacobian(&self, x: &[f64]) -> Result<Tensor> {
        self.check_point(x)?;
        let d = self.dim();
        let mut eager = Eager::new(&self.params);
        let basis = (0..d)
            .map(|i| {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                Cow::Owned(Tensor::row(&e))
            })
            .collect();
        let out = self.trace(&mut eager, Cow::Owned(Tensor::row(x)), basis)?;
        let mut jac = Tensor::zeros(&[d, d]);
        for (c, col) in out.tangents.iter().enumerate() {
            for r in 0..d {
                jac.set(r, c, col.data()[r]);
            }
        }
        Ok(jac)
    }

    /// Parameter names in registration order.
    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }
}
