//! Constructed diagnostic instances with known analytic properties.

use yopo_core::adversary::{BallNorm, PerturbationBall};
use yopo_core::dynsys::{Activation, Layer, LossKind, NetworkSpec, Params, Target};
use yopo_core::numerics::{RealMat, RealVec, Rng};
use yopo_core::{Error, Result};

/// One fully specified probe problem: network, weights, anchor input, target,
/// and the perturbation set the diagnostics run over.
pub struct Instance {
    pub spec: NetworkSpec,
    pub params: Params,
    pub x0: RealVec,
    pub y: Target,
    pub ball: PerturbationBall,
}

/// Depth-1 identity-weight map with the concave quadratic objective: the
/// inner problem is exactly quadratic with μ = L_ηη = K = 1.
pub fn isotropic() -> Result<Instance> {
    let spec = NetworkSpec::uniform(vec![2, 2], Activation::Linear, LossKind::ConcaveQuadratic)?;
    Ok(Instance {
        spec,
        params: Params::from_layers(vec![Layer {
            w: RealMat::identity(2),
            b: RealVec::zeros(2),
        }]),
        x0: RealVec::new(vec![0.3, 0.4])?,
        y: Target::Vector(RealVec::new(vec![0.6, 0.1])?),
        ball: PerturbationBall::new(BallNorm::L2, 0.5)?,
    })
}

/// Like [`isotropic`] but with weights diag(1, 0.8): the inner curvature is
/// anisotropic (μ = 0.64, L_ηη = 1), so frozen directions genuinely miss the
/// maximizer and refresh frequency matters.
pub fn anisotropic() -> Result<Instance> {
    let spec = NetworkSpec::uniform(vec![2, 2], Activation::Linear, LossKind::ConcaveQuadratic)?;
    let w = RealMat::from_fn(2, 2, |i, j| {
        if i == j {
            if i == 0 {
                1.0
            } else {
                0.8
            }
        } else {
            0.0
        }
    })?;
    Ok(Instance {
        spec,
        params: Params::from_layers(vec![Layer {
            w,
            b: RealVec::zeros(2),
        }]),
        x0: RealVec::new(vec![0.3, 0.4])?,
        y: Target::Vector(RealVec::new(vec![0.6, 0.1])?),
        ball: PerturbationBall::new(BallNorm::L2, 0.5)?,
    })
}

/// Fully linear network with the linear objective: costates do not depend on
/// the state trajectory at all, so drift and oracle error are exactly zero.
pub fn all_linear(dims: Vec<usize>, seed: u64, ball: PerturbationBall) -> Result<Instance> {
    let spec = NetworkSpec::uniform(dims, Activation::Linear, LossKind::Linear)?;
    let params = Params::init(&spec, &Rng::from_seed(seed));
    let input = spec.input_dim();
    let output = *spec
        .layer_dims()
        .last()
        .ok_or_else(|| Error::usage("network has no layers"))?;
    let mut rng = Rng::from_seed(seed).substream("instance-probe");
    let x0 = RealVec::from_fn(input, |_| rng.uniform_in(0.1, 0.9))?;
    let y = Target::Vector(RealVec::from_fn(output, |_| rng.uniform_in(-1.0, 1.0))?);
    Ok(Instance {
        spec,
        params,
        x0,
        y,
        ball,
    })
}

/// A randomly initialized smooth network probed at a random interior anchor.
pub fn random(spec: NetworkSpec, seed: u64, ball: PerturbationBall) -> Result<Instance> {
    let params = Params::init(&spec, &Rng::from_seed(seed));
    let input = spec.input_dim();
    let output = *spec
        .layer_dims()
        .last()
        .ok_or_else(|| Error::usage("network has no layers"))?;
    let mut rng = Rng::from_seed(seed).substream("instance-probe");
    let x0 = RealVec::from_fn(input, |_| rng.uniform_in(0.1, 0.9))?;
    let y = match spec.loss_kind() {
        LossKind::SoftmaxCrossEntropy => Target::Class(rng.below(output as u64) as usize),
        _ => Target::Vector(RealVec::from_fn(output, |_| rng.uniform_in(-0.5, 0.5))?),
    };
    Ok(Instance {
        spec,
        params,
        x0,
        y,
        ball,
    })
}
