//! The network as a discrete-time dynamical system.
//!
//! A `T`-layer feed-forward net is the controlled recursion
//! `x_{t+1} = f_t(x_t, θ_t)` with layer map `f_t(x, θ_t) = act_t(W_t·x + b_t)`,
//! driven from the perturbed input `x₀ + η` at layer 0. This module owns the
//! architecture description, the parameter (control) container, the forward
//! sweep with its cached pre-activations, and the terminal loss / per-layer
//! regularizer that the costate sweep differentiates.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::{RealMat, RealVec, Rng};
use crate::{Error, Result};

/// Everywhere-differentiable scalar activations.
///
/// ReLU is deliberately unrepresentable: the costate recursion and the
/// smoothness constants downstream require differentiable layer maps, so the
/// kink at zero would silently invalidate every gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Elu,
    Linear,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp() - 1.0
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative at pre-activation `z`.
    pub fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "elu" => Ok(Activation::Elu),
            "linear" => Ok(Activation::Linear),
            "relu" => Err(Error::format(
                "relu is not differentiable at 0 and is not supported; \
                 choose one of tanh, sigmoid, elu, linear",
            )),
            other => Err(Error::format(format!(
                "unknown activation '{other}'; choose one of tanh, sigmoid, elu, linear"
            ))),
        }
    }
}

/// Terminal loss family Φ(x_T, y).
///
/// The two concave/linear variants exist for the theory-verification suites:
/// `Linear` makes the costate independent of the input perturbation (zero
/// drift by construction), and `ConcaveQuadratic` turns a linear network into
/// an inner maximization that is globally strongly concave in η with analytic
/// curvature constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    SoftmaxCrossEntropy,
    Quadratic,
    Linear,
    ConcaveQuadratic,
}

/// Supervision target: an integer class for cross-entropy, a real vector for
/// the regression-style losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Vector(RealVec),
}

impl Target {
    pub fn class(&self) -> Option<usize> {
        match self {
            Target::Class(c) => Some(*c),
            Target::Vector(_) => None,
        }
    }
}

/// Architecture description: layer widths `n₀..n_T`, one activation per
/// layer, the terminal loss, and per-layer regularizer weights `λ_t`
/// (coefficient of `½‖θ_t‖²`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    layer_dims: Vec<usize>,
    activations: Vec<Activation>,
    loss_kind: LossKind,
    reg_weights: Vec<f64>,
}

impl NetworkSpec {
    pub fn new(
        layer_dims: Vec<usize>,
        activations: Vec<Activation>,
        loss_kind: LossKind,
        reg_weights: Vec<f64>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::usage(
                "network needs at least one layer (two dims: input, output)",
            ));
        }
        if layer_dims.iter().any(|d| *d == 0) {
            return Err(Error::usage("layer dims must be positive"));
        }
        let t = layer_dims.len() - 1;
        if activations.len() != t {
            return Err(Error::usage(format!(
                "expected {t} activations for {t} layers, got {}",
                activations.len()
            )));
        }
        if reg_weights.len() != t {
            return Err(Error::usage(format!(
                "expected {t} regularizer weights, got {}",
                reg_weights.len()
            )));
        }
        if reg_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::usage("regularizer weights must be finite and nonnegative"));
        }
        Ok(NetworkSpec {
            layer_dims,
            activations,
            loss_kind,
            reg_weights,
        })
    }

    /// Convenience constructor: same activation everywhere, no regularizer.
    pub fn uniform(layer_dims: Vec<usize>, act: Activation, loss_kind: LossKind) -> Result<Self> {
        let t = layer_dims.len().saturating_sub(1);
        NetworkSpec::new(layer_dims, vec![act; t], loss_kind, vec![0.0; t])
    }

    /// Number of layers `T`.
    pub fn depth(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self, t: usize) -> Activation {
        self.activations[t]
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss_kind
    }

    pub fn reg_weight(&self, t: usize) -> f64 {
        self.reg_weights[t]
    }

    pub fn with_loss(mut self, loss_kind: LossKind) -> Self {
        self.loss_kind = loss_kind;
        self
    }

    pub fn with_reg_weights(mut self, reg_weights: Vec<f64>) -> Result<Self> {
        if reg_weights.len() != self.depth() {
            return Err(Error::usage(format!(
                "expected {} regularizer weights, got {}",
                self.depth(),
                reg_weights.len()
            )));
        }
        if reg_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::usage("regularizer weights must be finite and nonnegative"));
        }
        self.reg_weights = reg_weights;
        Ok(self)
    }
}

/// One layer's controls: weight block and bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: RealMat,
    pub b: RealVec,
}

/// The full control vector θ = (θ₀..θ_{T−1}), stored per layer.
///
/// The flat layout used by `flatten`/`unflatten` and the checkpoint format is
/// layer-major: layer 0's weights row-major, then layer 0's bias, then
/// layer 1, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    layers: Vec<Layer>,
}

impl Params {
    /// Random initialization: weights uniform on
    /// `±√(6/(n_t + n_{t+1}))`, biases zero. Each layer draws from its own
    /// labeled substream, so adding layers never reshuffles earlier ones.
    pub fn init(spec: &NetworkSpec, rng: &Rng) -> Params {
        let mut layers = Vec::with_capacity(spec.depth());
        for t in 0..spec.depth() {
            let (n_in, n_out) = (spec.layer_dims[t], spec.layer_dims[t + 1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            let mut stream = rng.substream_indexed("layer-init", t as u64);
            let w = RealMat::from_fn(n_out, n_in, |_, _| stream.uniform_in(-bound, bound))
                .expect("uniform draws are finite");
            layers.push(Layer {
                w,
                b: RealVec::zeros(n_out),
            });
        }
        Params { layers }
    }

    pub fn zeros(spec: &NetworkSpec) -> Params {
        let layers = (0..spec.depth())
            .map(|t| Layer {
                w: RealMat::zeros(spec.layer_dims[t + 1], spec.layer_dims[t]),
                b: RealVec::zeros(spec.layer_dims[t + 1]),
            })
            .collect();
        Params { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Params {
        Params { layers }
    }

    pub fn layer(&self, t: usize) -> &Layer {
        &self.layers[t]
    }

    pub(crate) fn layer_mut(&mut self, t: usize) -> &mut Layer {
        &mut self.layers[t]
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Total scalar parameter count.
    pub fn dim(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.rows() * l.w.cols() + l.b.dim())
            .sum()
    }

    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.layers.len() == spec.depth()
            && self.layers.iter().enumerate().all(|(t, l)| {
                l.w.rows() == spec.layer_dims[t + 1]
                    && l.w.cols() == spec.layer_dims[t]
                    && l.b.dim() == spec.layer_dims[t + 1]
            })
    }

    /// Layer-major flat view; inverse of [`Params::unflatten`].
    pub fn flatten(&self) -> RealVec {
        let mut flat = Vec::with_capacity(self.dim());
        for l in &self.layers {
            flat.extend_from_slice(l.w.as_slice());
            flat.extend_from_slice(l.b.as_slice());
        }
        RealVec::from_raw(flat)
    }

    pub fn unflatten(spec: &NetworkSpec, flat: &RealVec) -> Result<Params> {
        let mut layers = Vec::with_capacity(spec.depth());
        let mut off = 0;
        for t in 0..spec.depth() {
            let (n_in, n_out) = (spec.layer_dims[t], spec.layer_dims[t + 1]);
            let w_len = n_in * n_out;
            if off + w_len + n_out > flat.dim() {
                return Err(Error::usage(format!(
                    "flat parameter vector too short: dim {} for spec needing more",
                    flat.dim()
                )));
            }
            let w = RealMat::new(n_out, n_in, flat[off..off + w_len].to_vec())?;
            off += w_len;
            let b = RealVec::from_slice(&flat[off..off + n_out])?;
            off += n_out;
            layers.push(Layer { w, b });
        }
        if off != flat.dim() {
            return Err(Error::usage(format!(
                "flat parameter vector has {} trailing entries",
                flat.dim() - off
            )));
        }
        Ok(Params { layers })
    }

    /// `self += a · other`, layerwise (the SGD update).
    pub fn axpy_mut(&mut self, a: f64, other: &Params) {
        assert_eq!(self.layers.len(), other.layers.len(), "axpy on mismatched params");
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            crate::numerics::axpy(l.w.as_mut_slice(), a, o.w.as_slice());
            crate::numerics::axpy(l.b.as_mut_slice(), a, o.b.as_slice());
        }
    }

    pub fn scale_mut(&mut self, a: f64) {
        for l in self.layers.iter_mut() {
            for v in l.w.as_mut_slice() {
                *v *= a;
            }
            for v in l.b.as_mut_slice() {
                *v *= a;
            }
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.flatten().sq_norm()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.as_slice().iter().all(|v| v.is_finite()) && l.b.is_finite())
    }
}

/// The forward sweep's record: states `x₀..x_T` (with `x₀` already carrying
/// the perturbation) and the pre-activations `z_{t+1} = W_t·x_t + b_t` that
/// the costate sweep reuses.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    states: Vec<RealVec>,
    preacts: Vec<RealVec>,
}

impl StateTrajectory {
    /// `x_t` for `t ∈ 0..=T`; index 0 is the perturbed input `x₀ + η`.
    pub fn state(&self, t: usize) -> &RealVec {
        &self.states[t]
    }

    pub fn states(&self) -> &[RealVec] {
        &self.states
    }

    /// Pre-activation `z_{t+1} = W_t·x_t + b_t` for layer `t ∈ 0..T`.
    pub fn preact(&self, t: usize) -> &RealVec {
        &self.preacts[t]
    }

    /// Network output `x_T`.
    pub fn output(&self) -> &RealVec {
        self.states.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.preacts.len()
    }
}

/// Applies layer `t`'s map to `x`, returning `(z, f_t(x, θ_t))`.
///
/// Every evaluation of `f_t` in the crate — the forward sweep, Hamiltonian
/// values, and the ∂H/∂p identity — goes through this one function so that
/// "equal" means bit-equal.
pub fn step_layer(
    spec: &NetworkSpec,
    params: &Params,
    t: usize,
    x: &RealVec,
) -> Result<(RealVec, RealVec)> {
    let layer = &params.layers[t];
    if layer.w.cols() != x.dim() {
        return Err(Error::usage(format!(
            "layer {t} expects input dim {}, got {}",
            layer.w.cols(),
            x.dim()
        )));
    }
    let mut z = vec![0.0; layer.w.rows()];
    layer.w.matvec_into(x.as_slice(), &mut z);
    crate::numerics::axpy(&mut z, 1.0, layer.b.as_slice());
    let act = spec.activation(t);
    let out: Vec<f64> = z.iter().map(|v| act.apply(*v)).collect();
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite activation at layer {t}, unit {i} (pre-activation {})",
            z[i]
        )));
    }
    Ok((RealVec::from_raw(z), RealVec::from_raw(out)))
}

/// Runs the full forward recursion from the perturbed input.
///
/// `states[0] = x₀ + η`, then `x_{t+1} = f_t(x_t, θ_t)` for `t = 0..T−1`.
pub fn forward(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    eta: &RealVec,
) -> Result<StateTrajectory> {
    if x0.dim() != spec.input_dim() {
        return Err(Error::usage(format!(
            "input dim {} does not match network input dim {}",
            x0.dim(),
            spec.input_dim()
        )));
    }
    if eta.dim() != x0.dim() {
        return Err(Error::usage(format!(
            "perturbation dim {} does not match input dim {}",
            eta.dim(),
            x0.dim()
        )));
    }
    if !params.matches(spec) {
        return Err(Error::usage("params shapes do not match network spec"));
    }
    let t_total = spec.depth();
    let mut states = Vec::with_capacity(t_total + 1);
    let mut preacts = Vec::with_capacity(t_total);
    states.push(x0.add(eta));
    for t in 0..t_total {
        let (z, x_next) = step_layer(spec, params, t, &states[t])?;
        preacts.push(z);
        states.push(x_next);
    }
    Ok(StateTrajectory { states, preacts })
}

/// Terminal loss Φ(x_T, y).
pub fn loss(spec: &NetworkSpec, x_t: &RealVec, y: &Target) -> Result<f64> {
    if x_t.dim() != spec.output_dim() {
        return Err(Error::usage(format!(
            "output dim {} does not match network output dim {}",
            x_t.dim(),
            spec.output_dim()
        )));
    }
    match (spec.loss_kind, y) {
        (LossKind::SoftmaxCrossEntropy, Target::Class(c)) => {
            if *c >= x_t.dim() {
                return Err(Error::usage(format!(
                    "class label {c} out of range for {} outputs",
                    x_t.dim()
                )));
            }
            Ok(log_sum_exp(x_t) - x_t[*c])
        }
        (LossKind::Quadratic, Target::Vector(y)) => {
            check_target_dim(x_t, y)?;
            Ok(0.5 * x_t.sub(y).sq_norm())
        }
        (LossKind::Linear, Target::Vector(y)) => {
            check_target_dim(x_t, y)?;
            Ok(x_t.dot(y))
        }
        (LossKind::ConcaveQuadratic, Target::Vector(y)) => {
            check_target_dim(x_t, y)?;
            Ok(-0.5 * x_t.sub(y).sq_norm())
        }
        (kind, target) => Err(Error::usage(format!(
            "loss {kind:?} is incompatible with target {target:?}"
        ))),
    }
}

/// ∇_x Φ(x_T, y); the terminal costate is `−(1/scale)` times this.
pub fn loss_grad(spec: &NetworkSpec, x_t: &RealVec, y: &Target) -> Result<RealVec> {
    if x_t.dim() != spec.output_dim() {
        return Err(Error::usage(format!(
            "output dim {} does not match network output dim {}",
            x_t.dim(),
            spec.output_dim()
        )));
    }
    match (spec.loss_kind, y) {
        (LossKind::SoftmaxCrossEntropy, Target::Class(c)) => {
            if *c >= x_t.dim() {
                return Err(Error::usage(format!(
                    "class label {c} out of range for {} outputs",
                    x_t.dim()
                )));
            }
            let lse = log_sum_exp(x_t);
            let mut g: Vec<f64> = x_t.iter().map(|v| (v - lse).exp()).collect();
            g[*c] -= 1.0;
            Ok(RealVec::from_raw(g))
        }
        (LossKind::Quadratic, Target::Vector(y)) => {
            check_target_dim(x_t, y)?;
            Ok(x_t.sub(y))
        }
        (LossKind::Linear, Target::Vector(y)) => {
            check_target_dim(x_t, y)?;
            Ok(y.clone())
        }
        (LossKind::ConcaveQuadratic, Target::Vector(y)) => {
            check_target_dim(x_t, y)?;
            Ok(y.sub(x_t))
        }
        (kind, target) => Err(Error::usage(format!(
            "loss {kind:?} is incompatible with target {target:?}"
        ))),
    }
}

fn check_target_dim(x_t: &RealVec, y: &RealVec) -> Result<()> {
    if x_t.dim() != y.dim() {
        return Err(Error::usage(format!(
            "target dim {} does not match output dim {}",
            y.dim(),
            x_t.dim()
        )));
    }
    Ok(())
}

fn log_sum_exp(x: &RealVec) -> f64 {
    let m = x.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Running cost on layer `t`'s controls: `λ_t · ½‖θ_t‖²` where `θ_t`
/// concatenates the weight block and bias. State-independent, so its
/// contribution to the costate recursion is zero.
pub fn regularizer(spec: &NetworkSpec, params: &Params, t: usize) -> Result<f64> {
    if t >= spec.depth() {
        return Err(Error::usage(format!(
            "layer index {t} out of range for depth {}",
            spec.depth()
        )));
    }
    let lambda = spec.reg_weight(t);
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let l = &params.layers[t];
    let sq = crate::numerics::dot(l.w.as_slice(), l.w.as_slice()) + l.b.sq_norm();
    Ok(0.5 * lambda * sq)
}

/// Σ_t R_t(θ_t): the regularizer part of the per-sample objective.
pub fn regularizer_total(spec: &NetworkSpec, params: &Params) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..spec.depth() {
        total += regularizer(spec, params, t)?;
    }
    Ok(total)
}

/// Per-sample objective 𝒜(η, θ) = Φ(x_T, y) + Σ_t R_t(θ_t) evaluated by a
/// fresh forward sweep. This is the quantity the adversary ascends in η and
/// the trainer descends in θ.
pub fn objective(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    eta: &RealVec,
    y: &Target,
) -> Result<f64> {
    let traj = forward(spec, params, x0, eta)?;
    Ok(loss(spec, traj.output(), y)? + regularizer_total(spec, params)?)
}
