//! Hamiltonian evaluation and the backward costate sweep.
//!
//! With the layer map `f_t` and running cost `R_t`, the per-layer Hamiltonian
//! is `H_t(x, p, θ) = p·f_t(x, θ) − R_t(θ)`; layer 0 takes the perturbed
//! input, `H₀(x, p, θ, η) = p·f₀(x + η, θ) − R₀(θ)`. The costate sweep runs
//! the adjoint recursion
//!
//! ```text
//! p_T = −(1/scale)·∇_x Φ(x_T, y)
//! p_t = (∇_x f_t(x_t, θ_t))ᵀ p_{t+1} − ∇_x R_t        (t = T−1 .. 1)
//! ```
//!
//! so that `−p_t` is exactly the gradient of the (scaled) loss with respect
//! to the state `x_t` — the costate view of backpropagation. The default
//! regularizer is control-only, so `∇_x R_t ≡ 0` and the recursion reduces to
//! the pure adjoint product.
//!
//! Sign convention, fixed once and used everywhere: `p` carries the
//! *negative* loss gradient. Consequently `∇_η 𝒜 = −grad_eta(...)` when the
//! supplied `p₁` is the fresh costate of the current `η`, and gradient
//! *ascent* on the loss is a step along `−grad_eta` (equivalently, descent on
//! `H₀`). The adversary module owns the update direction.

use serde::{Deserialize, Serialize};

use crate::dynsys::{forward, loss_grad, regularizer, step_layer, NetworkSpec, Params, StateTrajectory, Target};
use crate::numerics::{axpy, RealVec};
use crate::{Error, Result};

/// Backward-sweep result: costates `p₁..p_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostateTrajectory {
    // costates[t-1] holds p_t, t ∈ 1..=T.
    costates: Vec<RealVec>,
}

impl CostateTrajectory {
    /// `p_t` for `t ∈ 1..=T`.
    pub fn costate(&self, t: usize) -> &RealVec {
        assert!(
            (1..=self.costates.len()).contains(&t),
            "costate index {t} out of range 1..={}",
            self.costates.len()
        );
        &self.costates[t - 1]
    }

    /// First-layer costate `p₁`, the quantity YOPO freezes.
    pub fn p1(&self) -> &RealVec {
        &self.costates[0]
    }

    /// Terminal costate `p_T = −(1/scale)·∇_x Φ`.
    pub fn terminal(&self) -> &RealVec {
        self.costates.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.costates.len()
    }
}

/// Generic-layer Hamiltonian `H_t(x, p, θ) = p·f_t(x, θ_t) − R_t(θ_t)` for
/// `t ∈ 1..T`. Layer 0 carries the perturbation argument and has its own
/// entry point, [`hamiltonian_0`].
pub fn hamiltonian_t(
    spec: &NetworkSpec,
    params: &Params,
    t: usize,
    x: &RealVec,
    p: &RealVec,
) -> Result<f64> {
    if t == 0 {
        return Err(Error::usage(
            "layer 0 takes the perturbed input; use hamiltonian_0",
        ));
    }
    if t >= spec.depth() {
        return Err(Error::usage(format!(
            "layer index {t} out of range for depth {}",
            spec.depth()
        )));
    }
    let (_, fx) = step_layer(spec, params, t, x)?;
    if p.dim() != fx.dim() {
        return Err(Error::usage(format!(
            "costate dim {} does not match layer {t} output dim {}",
            p.dim(),
            fx.dim()
        )));
    }
    Ok(p.dot(&fx) - regularizer(spec, params, t)?)
}

/// First-layer Hamiltonian `H₀(x₀, p₁, θ₀, η) = p₁·f₀(x₀ + η, θ₀) − R₀(θ₀)`.
pub fn hamiltonian_0(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    eta: &RealVec,
    p1: &RealVec,
) -> Result<f64> {
    if eta.dim() != x0.dim() {
        return Err(Error::usage(format!(
            "perturbation dim {} does not match input dim {}",
            eta.dim(),
            x0.dim()
        )));
    }
    let (_, fx) = step_layer(spec, params, 0, &x0.add(eta))?;
    if p1.dim() != fx.dim() {
        return Err(Error::usage(format!(
            "costate dim {} does not match layer 0 output dim {}",
            p1.dim(),
            fx.dim()
        )));
    }
    Ok(p1.dot(&fx) - regularizer(spec, params, 0)?)
}

/// `∇_p H_t(x, ·, θ) = f_t(x, θ_t)`: the Hamiltonian is linear in the
/// costate, so its p-gradient is the layer map itself, evaluated through the
/// same code path as the forward sweep (bit-identical by construction).
pub fn hamiltonian_grad_p(
    spec: &NetworkSpec,
    params: &Params,
    t: usize,
    x: &RealVec,
) -> Result<RealVec> {
    Ok(step_layer(spec, params, t, x)?.1)
}

/// Backward costate sweep at per-sample scale (`p_T = −∇_x Φ`).
pub fn backward(
    spec: &NetworkSpec,
    params: &Params,
    traj: &StateTrajectory,
    y: &Target,
) -> Result<CostateTrajectory> {
    backward_scaled(spec, params, traj, y, 1.0)
}

/// Backward costate sweep with a batch scale: `p_T = −(1/scale)·∇_x Φ`.
///
/// Training uses `scale = B` so that summed per-sample contributions produce
/// the batch-mean gradient; diagnostics use scale 1. The terminal costate at
/// scale `B` equals `1/B` times the scale-1 terminal costate bit-exactly.
pub fn backward_scaled(
    spec: &NetworkSpec,
    params: &Params,
    traj: &StateTrajectory,
    y: &Target,
    scale: f64,
) -> Result<CostateTrajectory> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::usage(format!("costate scale must be positive, got {scale}")));
    }
    let depth = spec.depth();
    if traj.depth() != depth {
        return Err(Error::usage(format!(
            "trajectory depth {} does not match network depth {depth}",
            traj.depth()
        )));
    }
    if !params.matches(spec) {
        return Err(Error::usage("params shapes do not match network spec"));
    }
    let g = loss_grad(spec, traj.output(), y)?;
    let mut costates = vec![RealVec::zeros(0); depth];
    costates[depth - 1] = g.scale(-1.0 / scale);
    // p_t = W_tᵀ(act_t′(z_{t+1}) ⊙ p_{t+1}); ∇_x R_t is zero for the
    // control-only regularizer, so no subtraction term appears.
    for t in (1..depth).rev() {
        let sensitivity = preact_sensitivity(spec, traj, t, &costates[t]);
        let mut out = vec![0.0; spec.layer_dims()[t]];
        params.layer(t).w.matvec_t_into(&sensitivity, &mut out);
        let p_t = RealVec::from_raw(out);
        if !p_t.is_finite() {
            return Err(Error::numeric(format!("non-finite costate at layer {t}")));
        }
        costates[t - 1] = p_t;
    }
    Ok(CostateTrajectory { costates })
}

/// `act_t′(z_{t+1}) ⊙ p_{t+1}` — the pre-activation sensitivity shared by the
/// costate recursion and both gradient maps.
fn preact_sensitivity(
    spec: &NetworkSpec,
    traj: &StateTrajectory,
    t: usize,
    p_next: &RealVec,
) -> Vec<f64> {
    let act = spec.activation(t);
    traj.preact(t)
        .iter()
        .zip(p_next.iter())
        .map(|(z, p)| act.deriv(*z) * p)
        .collect()
}

/// `(∇_η f₀(x₀ + η, θ₀))ᵀ p₁`, the first-layer pullback of a supplied
/// costate. The pre-activation is always recomputed at the *current* `η`;
/// only `p₁` may be frozen. With a fresh `p₁` this equals `−∇_η 𝒜(η, θ)`.
pub fn grad_eta(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    eta: &RealVec,
    p1: &RealVec,
) -> Result<RealVec> {
    if eta.dim() != x0.dim() {
        return Err(Error::usage(format!(
            "perturbation dim {} does not match input dim {}",
            eta.dim(),
            x0.dim()
        )));
    }
    let (z1, _) = step_layer(spec, params, 0, &x0.add(eta))?;
    if p1.dim() != z1.dim() {
        return Err(Error::usage(format!(
            "costate dim {} does not match layer 0 output dim {}",
            p1.dim(),
            z1.dim()
        )));
    }
    let act = spec.activation(0);
    let sensitivity: Vec<f64> = z1
        .iter()
        .zip(p1.iter())
        .map(|(z, p)| act.deriv(*z) * p)
        .collect();
    let mut out = vec![0.0; x0.dim()];
    params.layer(0).w.matvec_t_into(&sensitivity, &mut out);
    Ok(RealVec::from_raw(out))
}

/// Convenience sweep: forward at `η`, backward at scale 1, giving the fresh
/// costates of the current perturbation.
pub fn sweep(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    eta: &RealVec,
    y: &Target,
) -> Result<(StateTrajectory, CostateTrajectory)> {
    let traj = forward(spec, params, x0, eta)?;
    let costates = backward(spec, params, &traj, y)?;
    Ok((traj, costates))
}

/// Fresh `∇_η 𝒜(η, θ)`: one full forward/backward sweep, then the first-layer
/// pullback, negated. This is the exact-gradient oracle that PGD uses every
/// step and that the drift/oracle diagnostics compare against.
pub fn objective_grad_eta(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    eta: &RealVec,
    y: &Target,
) -> Result<RealVec> {
    let (_, costates) = sweep(spec, params, x0, eta, y)?;
    Ok(grad_eta(spec, params, x0, eta, costates.p1())?.scale(-1.0))
}

/// Gradient of the per-sample objective `Φ(x_T, y) + Σ_t R_t(θ_t)` with
/// respect to every layer's controls, assembled from the costates.
///
/// For the affine layers this expands to the outer-product rule
/// `∂/∂W_t = −(act′(z_{t+1}) ⊙ p_{t+1})·x_tᵀ + λ_t·W_t` and
/// `∂/∂b_t = −(act′(z_{t+1}) ⊙ p_{t+1}) + λ_t·b_t`.
///
/// CALLER DISCIPLINE REQUIRED: `costates` must be the backward sweep of this
/// exact `traj` under these exact `params`. A stale costate trajectory (from
/// an earlier `η` or an earlier parameter iterate) produces a silently wrong
/// gradient — the shapes all match, so no runtime check can catch it.
pub fn grad_theta(
    spec: &NetworkSpec,
    params: &Params,
    traj: &StateTrajectory,
    costates: &CostateTrajectory,
) -> Result<Params> {
    let mut acc = Params::zeros(spec);
    accumulate_phi_grad(spec, traj, costates, &mut acc)?;
    add_reg_grad(spec, params, &mut acc);
    Ok(acc)
}

/// Accumulates only the data term (the Φ part) of the parameter gradient
/// into `acc`. The trainer calls this once per sample with batch-scaled
/// costates, then applies the regularizer term once per batch via
/// [`add_reg_grad`].
pub(crate) fn accumulate_phi_grad(
    spec: &NetworkSpec,
    traj: &StateTrajectory,
    costates: &CostateTrajectory,
    acc: &mut Params,
) -> Result<()> {
    let depth = spec.depth();
    if traj.depth() != depth || costates.depth() != depth {
        return Err(Error::usage(
            "trajectory/costate depth does not match network depth",
        ));
    }
    for t in 0..depth {
        let sensitivity = preact_sensitivity(spec, traj, t, costates.costate(t + 1));
        let layer = acc.layer_mut(t);
        layer.w.acc_outer(-1.0, &sensitivity, traj.state(t).as_slice());
        axpy(layer.b.as_mut_slice(), -1.0, &sensitivity);
    }
    Ok(())
}

/// Adds `λ_t·θ_t` per layer — the gradient of `Σ_t R_t`.
pub(crate) fn add_reg_grad(spec: &NetworkSpec, params: &Params, acc: &mut Params) {
    for t in 0..spec.depth() {
        let lambda = spec.reg_weight(t);
        if lambda > 0.0 {
            let src = params.layer(t);
            let dst = acc.layer_mut(t);
            axpy(dst.w.as_mut_slice(), lambda, src.w.as_slice());
            axpy(dst.b.as_mut_slice(), lambda, src.b.as_slice());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::{loss, objective, Activation, Layer, LossKind};
    use crate::numerics::{central_diff, RealMat, Rng};

    fn random_net(
        dims: Vec<usize>,
        act: Activation,
        loss_kind: LossKind,
        seed: u64,
    ) -> (NetworkSpec, Params) {
        let spec = NetworkSpec::uniform(dims, act, loss_kind).unwrap();
        let params = Params::init(&spec, &Rng::from_seed(seed));
        (spec, params)
    }

    fn random_vec(dim: usize, rng: &mut Rng, scale: f64) -> RealVec {
        RealVec::from_fn(dim, |_| rng.uniform_in(-scale, scale)).unwrap()
    }

    /// Loss of the tail composition started from state `x` at layer `t` —
    /// the finite-difference oracle for costates.
    fn tail_loss(
        spec: &NetworkSpec,
        params: &Params,
        t: usize,
        x: &RealVec,
        y: &Target,
    ) -> Result<f64> {
        let mut state = x.clone();
        for s in t..spec.depth() {
            state = step_layer(spec, params, s, &state)?.1;
        }
        loss(spec, &state, y)
    }

    #[test]
    fn hamiltonian_zero_costate_and_inner_product_cases() {
        let spec =
            NetworkSpec::uniform(vec![2, 2, 2], Activation::Linear, LossKind::Quadratic).unwrap();
        let params = Params::from_layers(vec![
            Layer {
                w: RealMat::identity(2),
                b: RealVec::zeros(2),
            },
            Layer {
                w: RealMat::identity(2),
                b: RealVec::zeros(2),
            },
        ]);
        let x = RealVec::new(vec![2.0, 3.0]).unwrap();
        assert_eq!(
            hamiltonian_t(&spec, &params, 1, &x, &RealVec::zeros(2)).unwrap(),
            0.0
        );
        let p = RealVec::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(hamiltonian_t(&spec, &params, 1, &x, &p).unwrap(), 5.0);
    }

    #[test]
    fn hamiltonian_matches_independent_recomputation() {
        let (spec, params) = random_net(vec![3, 4, 2], Activation::Tanh, LossKind::Quadratic, 5);
        let spec = spec.with_reg_weights(vec![0.2, 0.3]).unwrap();
        let mut rng = Rng::from_seed(6);
        let x = random_vec(4, &mut rng, 1.0);
        let p = random_vec(2, &mut rng, 1.0);
        let got = hamiltonian_t(&spec, &params, 1, &x, &p).unwrap();

        // Independent recomputation with plain loops.
        let layer = params.layer(1);
        let mut inner = 0.0;
        for i in 0..2 {
            let mut z = layer.b[i];
            for j in 0..4 {
                z += layer.w.get(i, j) * x[j];
            }
            inner += p[i] * z.tanh();
        }
        let mut sq = layer.b.sq_norm();
        for v in layer.w.as_slice() {
            sq += v * v;
        }
        let want = inner - 0.5 * 0.3 * sq;
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn hamiltonian_0_reduces_to_layer_map_at_zero_perturbation() {
        let (spec, params) = random_net(vec![3, 4, 2], Activation::Sigmoid, LossKind::Quadratic, 8);
        let mut rng = Rng::from_seed(9);
        let x0 = random_vec(3, &mut rng, 1.0);
        let p1 = random_vec(4, &mut rng, 1.0);
        let h0 = hamiltonian_0(&spec, &params, &x0, &RealVec::zeros(3), &p1).unwrap();
        let fx = step_layer(&spec, &params, 0, &x0).unwrap().1;
        assert_eq!(h0, p1.dot(&fx), "zero perturbation must reduce to p·f₀(x₀)");
        assert_eq!(
            hamiltonian_0(&spec, &params, &x0, &RealVec::zeros(3), &RealVec::zeros(4)).unwrap(),
            0.0
        );
    }

    #[test]
    fn hamiltonian_rejects_layer_zero_and_out_of_range() {
        let (spec, params) = random_net(vec![2, 3, 2], Activation::Tanh, LossKind::Quadratic, 4);
        let x = RealVec::zeros(2);
        let p = RealVec::zeros(2);
        assert!(matches!(
            hamiltonian_t(&spec, &params, 0, &x, &p),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            hamiltonian_t(&spec, &params, 2, &x, &p),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn grad_p_equals_forward_state_bitwise() {
        let mut rng = Rng::from_seed(31);
        for seed in 0..5u64 {
            let (spec, params) =
                random_net(vec![3, 5, 4, 2], Activation::Elu, LossKind::Quadratic, seed);
            let x0 = random_vec(3, &mut rng, 1.0);
            let traj = forward(&spec, &params, &x0, &RealVec::zeros(3)).unwrap();
            for t in 0..spec.depth() {
                let gp = hamiltonian_grad_p(&spec, &params, t, traj.state(t)).unwrap();
                assert_eq!(
                    gp,
                    *traj.state(t + 1),
                    "∂H/∂p must be the layer map output, bit-identical"
                );
            }
        }
    }

    #[test]
    fn zero_terminal_costate_propagates() {
        let (spec, params) = random_net(vec![2, 3, 2], Activation::Tanh, LossKind::Quadratic, 11);
        let x0 = RealVec::new(vec![0.2, -0.4]).unwrap();
        let traj = forward(&spec, &params, &x0, &RealVec::zeros(2)).unwrap();
        let y = Target::Vector(traj.output().clone());
        let costates = backward(&spec, &params, &traj, &y).unwrap();
        for t in 1..=spec.depth() {
            assert!(costates.costate(t).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn one_layer_linear_costate_matches_hand_expansion() {
        let spec =
            NetworkSpec::uniform(vec![2, 2], Activation::Linear, LossKind::Quadratic).unwrap();
        let w = RealMat::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.3]]).unwrap();
        let params = Params::from_layers(vec![Layer {
            w: w.clone(),
            b: RealVec::zeros(2),
        }]);
        let x0 = RealVec::new(vec![0.7, -0.2]).unwrap();
        let y = RealVec::new(vec![0.1, 0.4]).unwrap();
        let traj = forward(&spec, &params, &x0, &RealVec::zeros(2)).unwrap();
        let costates =
            backward(&spec, &params, &traj, &Target::Vector(y.clone())).unwrap();
        // T = 1, so the only costate is the terminal one: p₁ = −(x₁ − y).
        let residual = traj.output().sub(&y);
        for (p, r) in costates.costate(1).iter().zip(residual.iter()) {
            assert_eq!(*p, -r);
        }
    }

    #[test]
    fn negative_costates_match_tail_loss_finite_differences() {
        let cases = [
            (vec![3, 5, 4, 2], Activation::Tanh, LossKind::Quadratic, 21u64),
            (vec![4, 3, 3], Activation::Sigmoid, LossKind::SoftmaxCrossEntropy, 22),
            (vec![2, 6, 2, 2], Activation::Elu, LossKind::SoftmaxCrossEntropy, 23),
        ];
        for (dims, act, loss_kind, seed) in cases {
            let (spec, params) = random_net(dims.clone(), act, loss_kind, seed);
            let mut rng = Rng::from_seed(seed + 100);
            let x0 = random_vec(dims[0], &mut rng, 0.8);
            let y = match loss_kind {
                LossKind::SoftmaxCrossEntropy => Target::Class(rng.below(dims[dims.len() - 1] as u64) as usize),
                _ => Target::Vector(random_vec(dims[dims.len() - 1], &mut rng, 0.8)),
            };
            let traj = forward(&spec, &params, &x0, &RealVec::zeros(dims[0])).unwrap();
            let costates = backward(&spec, &params, &traj, &y).unwrap();
            for t in 1..=spec.depth() {
                let fd = central_diff(
                    |x| tail_loss(&spec, &params, t, x, &y),
                    traj.state(t),
                    1e-6,
                )
                .unwrap();
                for (p, g) in costates.costate(t).iter().zip(fd.iter()) {
                    let rel = (-p - g).abs() / g.abs().max(1.0);
                    assert!(
                        rel <= 1e-6,
                        "costate mismatch at layer {t} ({act:?}): −p = {}, fd = {g}",
                        -p
                    );
                }
            }
        }
    }

    #[test]
    fn terminal_costate_batch_scaling_is_exact() {
        let (spec, params) = random_net(vec![3, 4, 3], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 41);
        let mut rng = Rng::from_seed(42);
        let x0 = random_vec(3, &mut rng, 1.0);
        let y = Target::Class(2);
        let traj = forward(&spec, &params, &x0, &RealVec::zeros(3)).unwrap();
        let unit = backward_scaled(&spec, &params, &traj, &y, 1.0).unwrap();
        for b in [2.0f64, 7.0, 64.0] {
            let scaled = backward_scaled(&spec, &params, &traj, &y, b).unwrap();
            for (s, u) in scaled.terminal().iter().zip(unit.terminal().iter()) {
                assert_eq!(*s, u * (1.0 / b), "terminal costate scaling must be exact");
            }
        }
    }

    #[test]
    fn grad_eta_zero_costate_gives_zero() {
        let (spec, params) = random_net(vec![3, 4, 2], Activation::Tanh, LossKind::Quadratic, 51);
        let x0 = RealVec::zeros(3);
        let g = grad_eta(&spec, &params, &x0, &RealVec::zeros(3), &RealVec::zeros(4)).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fresh_grad_eta_matches_objective_finite_differences() {
        let cases = [
            (vec![2, 2], Activation::Linear, LossKind::Quadratic, 61u64),
            (vec![3, 5, 3], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 62),
            (vec![4, 4, 4, 2], Activation::Sigmoid, LossKind::Quadratic, 63),
        ];
        for (dims, act, loss_kind, seed) in cases {
            let (spec, params) = random_net(dims.clone(), act, loss_kind, seed);
            let mut rng = Rng::from_seed(seed + 7);
            let x0 = random_vec(dims[0], &mut rng, 0.6);
            let eta = random_vec(dims[0], &mut rng, 0.05);
            let y = match loss_kind {
                LossKind::SoftmaxCrossEntropy => Target::Class(0),
                _ => Target::Vector(random_vec(dims[dims.len() - 1], &mut rng, 0.8)),
            };
            let analytic = objective_grad_eta(&spec, &params, &x0, &eta, &y).unwrap();
            let fd = central_diff(
                |e| objective(&spec, &params, &x0, e, &y),
                &eta,
                1e-6,
            )
            .unwrap();
            for (a, n) in analytic.iter().zip(fd.iter()) {
                let rel = (a - n).abs() / n.abs().max(1.0);
                assert!(rel <= 1e-6, "∇_η mismatch ({act:?}): {a} vs {n}");
            }
        }
    }

    #[test]
    fn linear_dynamics_linear_loss_makes_frozen_and_fresh_grad_eta_equal() {
        let (spec, params) = random_net(vec![3, 4, 3], Activation::Linear, LossKind::Linear, 71);
        let mut rng = Rng::from_seed(72);
        let x0 = random_vec(3, &mut rng, 1.0);
        let y = Target::Vector(random_vec(3, &mut rng, 1.0));
        let frozen_p1 = sweep(&spec, &params, &x0, &RealVec::zeros(3), &y)
            .unwrap()
            .1
            .p1()
            .clone();
        for trial in 0..5 {
            let eta = random_vec(3, &mut rng, 0.3 + 0.1 * trial as f64);
            let fresh_p1 = sweep(&spec, &params, &x0, &eta, &y).unwrap().1.p1().clone();
            assert_eq!(frozen_p1, fresh_p1, "linear dynamics + linear loss ⇒ constant costate");
            let frozen_g = grad_eta(&spec, &params, &x0, &eta, &frozen_p1).unwrap();
            let fresh_g = grad_eta(&spec, &params, &x0, &eta, &fresh_p1).unwrap();
            assert_eq!(frozen_g, fresh_g);
        }
    }

    #[test]
    fn grad_theta_zero_costates_and_regularizer_only() {
        let (spec, params) = random_net(vec![2, 3, 2], Activation::Tanh, LossKind::Quadratic, 81);
        let x0 = RealVec::new(vec![0.1, 0.2]).unwrap();
        let traj = forward(&spec, &params, &x0, &RealVec::zeros(2)).unwrap();
        let y = Target::Vector(traj.output().clone()); // zero residual ⇒ zero costates
        let costates = backward(&spec, &params, &traj, &y).unwrap();
        let g = grad_theta(&spec, &params, &traj, &costates).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));

        let lam_spec = spec.clone().with_reg_weights(vec![0.5, 0.25]).unwrap();
        let g_reg = grad_theta(&lam_spec, &params, &traj, &costates).unwrap();
        for t in 0..2 {
            let lambda = lam_spec.reg_weight(t);
            for (gv, pv) in g_reg
                .layer(t)
                .w
                .as_slice()
                .iter()
                .zip(params.layer(t).w.as_slice())
            {
                assert_eq!(*gv, lambda * pv);
            }
        }
    }

    #[test]
    fn grad_theta_matches_finite_differences() {
        let cases = [
            (vec![2, 2], Activation::Linear, LossKind::Quadratic, 0.0, 91u64),
            (vec![3, 4, 2], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 0.0, 92),
            (vec![2, 3, 3, 2], Activation::Sigmoid, LossKind::Quadratic, 0.1, 93),
        ];
        for (dims, act, loss_kind, lambda, seed) in cases {
            let depth = dims.len() - 1;
            let (spec, params) = random_net(dims.clone(), act, loss_kind, seed);
            let spec = spec.with_reg_weights(vec![lambda; depth]).unwrap();
            let mut rng = Rng::from_seed(seed + 3);
            let x0 = random_vec(dims[0], &mut rng, 0.7);
            let eta = random_vec(dims[0], &mut rng, 0.05);
            let y = match loss_kind {
                LossKind::SoftmaxCrossEntropy => Target::Class(1),
                _ => Target::Vector(random_vec(dims[dims.len() - 1], &mut rng, 0.5)),
            };
            let traj = forward(&spec, &params, &x0, &eta).unwrap();
            let costates = backward(&spec, &params, &traj, &y).unwrap();
            let analytic = grad_theta(&spec, &params, &traj, &costates).unwrap().flatten();
            let fd = central_diff(
                |flat| {
                    let p = Params::unflatten(&spec, flat)?;
                    objective(&spec, &p, &x0, &eta, &y)
                },
                &params.flatten(),
                1e-6,
            )
            .unwrap();
            for (i, (a, n)) in analytic.iter().zip(fd.iter()).enumerate() {
                let rel = (a - n).abs() / n.abs().max(1.0);
                assert!(
                    rel <= 1e-5,
                    "∇_θ mismatch ({act:?}, λ={lambda}) at flat index {i}: {a} vs {n}"
                );
            }
        }
    }

    #[test]
    fn batch_scaled_accumulation_equals_mean_of_per_sample_gradients() {
        let (spec, params) = random_net(vec![3, 4, 2], Activation::Tanh, LossKind::SoftmaxCrossEntropy, 101);
        let mut rng = Rng::from_seed(102);
        let batch: Vec<(RealVec, Target)> = (0..4)
            .map(|_| {
                (
                    random_vec(3, &mut rng, 0.8),
                    Target::Class(rng.below(2) as usize),
                )
            })
            .collect();
        let b = batch.len() as f64;

        // Batch path: scale-B costates, Φ-part accumulation, regularizer once.
        let mut acc = Params::zeros(&spec);
        for (x0, y) in &batch {
            let traj = forward(&spec, &params, x0, &RealVec::zeros(3)).unwrap();
            let costates = backward_scaled(&spec, &params, &traj, y, b).unwrap();
            accumulate_phi_grad(&spec, &traj, &costates, &mut acc).unwrap();
        }
        add_reg_grad(&spec, &params, &mut acc);

        // Reference: average of per-sample full gradients (λ = 0 here, so the
        // regularizer term is zero and the comparison is pure data term).
        let mut reference = Params::zeros(&spec);
        for (x0, y) in &batch {
            let traj = forward(&spec, &params, x0, &RealVec::zeros(3)).unwrap();
            let costates = backward(&spec, &params, &traj, y).unwrap();
            let g = grad_theta(&spec, &params, &traj, &costates).unwrap();
            reference.axpy_mut(1.0 / b, &g);
        }
        for (a, r) in acc.flatten().iter().zip(reference.flatten().iter()) {
            assert!((a - r).abs() <= 1e-12, "batch path {a} vs mean path {r}");
        }
    }
}
