//! The inner maximization over the perturbation η ∈ 𝒳.
//!
//! Two attacks share one projected update, `η ← Π_𝒳[η − α·grad_eta(p₁)]`:
//!
//! * [`pgd_attack`] recomputes a **fresh** costate `p₁` every step (one full
//!   forward/backward per update) — exact projected gradient ascent on the
//!   per-sample loss 𝒜.
//! * [`yopo_attack`] runs `m` blocks; each block does **one** full
//!   forward/backward at its head and then reuses that frozen `p₁` for `n`
//!   cheap first-layer updates. Only the first-layer pre-activation is
//!   refreshed at each inner iterate; the frozen costate is what makes the
//!   updates inexact gradients.
//!
//! Because both attacks drive the identical update helper, YOPO with `n = 1`
//! is *bitwise* equal to PGD with `m` steps — the refreshed-every-update
//! special case.
//!
//! Direction convention: `grad_eta` returns `(∇_η f₀)ᵀp₁`, which for a fresh
//! costate equals `−∇_η 𝒜`. Stepping along `−grad_eta` is therefore ascent on
//! the loss (equivalently, descent on the first-layer Hamiltonian H₀), and
//! that is the one canonical direction used everywhere.

use serde::{Deserialize, Serialize};

use crate::dynsys::{loss, NetworkSpec, Params, Target};
use crate::hamiltonian::{backward, grad_eta, sweep, CostateTrajectory};
use crate::numerics::{RealMat, RealVec, Rng};
use crate::{Error, Result};

/// Norm family of the admissible perturbation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BallNorm {
    #[serde(rename = "l-inf")]
    LInf,
    #[serde(rename = "l2")]
    L2,
}

/// The admissible set 𝒳: a norm ball of radius ε centered at the origin.
///
/// Radius 0 is allowed and degenerates to {0} — evaluation at ε = 0 and the
/// "adversary inert" training mode rely on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBall {
    pub norm: BallNorm,
    pub radius: f64,
}

impl PerturbationBall {
    pub fn new(norm: BallNorm, radius: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 0.0 {
            return Err(Error::usage(format!(
                "ball radius must be finite and nonnegative, got {radius}"
            )));
        }
        Ok(PerturbationBall { norm, radius })
    }

    pub fn linf(radius: f64) -> Result<Self> {
        Self::new(BallNorm::LInf, radius)
    }

    pub fn l2(radius: f64) -> Result<Self> {
        Self::new(BallNorm::L2, radius)
    }

    /// Euclidean projection onto the ball: entrywise clamp (l-inf) or radial
    /// rescale (l2).
    pub fn project(&self, v: &RealVec) -> RealVec {
        match self.norm {
            BallNorm::LInf => RealVec::from_raw(
                v.iter()
                    .map(|x| x.clamp(-self.radius, self.radius))
                    .collect(),
            ),
            BallNorm::L2 => {
                let norm = v.norm2();
                if norm <= self.radius {
                    v.clone()
                } else {
                    v.scale(self.radius / norm)
                }
            }
        }
    }

    /// Diameter D(𝒳): `2ε√d` for l-inf, `2ε` for l2.
    pub fn diameter(&self, dim: usize) -> f64 {
        match self.norm {
            BallNorm::LInf => 2.0 * self.radius * (dim as f64).sqrt(),
            BallNorm::L2 => 2.0 * self.radius,
        }
    }

    /// Membership test with absolute slack for floating-point boundaries.
    pub fn contains(&self, v: &RealVec, slack: f64) -> bool {
        match self.norm {
            BallNorm::LInf => v.iter().all(|x| x.abs() <= self.radius + slack),
            BallNorm::L2 => v.norm2() <= self.radius + slack,
        }
    }

    /// Uniform draw from the ball: per-coordinate uniform for l-inf; for l2,
    /// a normal direction scaled by `ε·u^{1/d}` (volume-uniform radius).
    pub fn sample(&self, rng: &mut Rng, dim: usize) -> RealVec {
        match self.norm {
            BallNorm::LInf => RealVec::from_raw(
                (0..dim)
                    .map(|_| rng.uniform_in(-self.radius, self.radius))
                    .collect(),
            ),
            BallNorm::L2 => {
                let dir: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
                let norm = crate::numerics::dot(&dir, &dir).sqrt();
                if norm == 0.0 {
                    return RealVec::zeros(dim);
                }
                let r = self.radius * rng.uniform().powf(1.0 / dim as f64);
                RealVec::from_raw(dir.into_iter().map(|x| x * r / norm).collect())
            }
        }
    }
}

/// Starting point of an attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaInit {
    Zero,
    UniformInBall,
}

/// Which iterate the attack reports as its answer η̂.
///
/// `LastIterate` is the training algorithm's choice (η^{m,n}); `MinGradNorm`
/// is the theory's choice (the iterate with the smallest fresh gradient
/// norm). The two are not reconciled by the convergence analysis — both are
/// first-class, and the extra backward sweeps MinGradNorm needs are counted
/// honestly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    LastIterate,
    MinGradNorm,
}

/// Inner-maximization configuration: `m` full backprops, each followed by
/// `n` frozen-costate updates of step `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub m: usize,
    pub n: usize,
    pub alpha: f64,
    #[serde(default = "default_init")]
    pub init: EtaInit,
    #[serde(default = "default_selection")]
    pub selection: Selection,
}

fn default_init() -> EtaInit {
    EtaInit::UniformInBall
}

fn default_selection() -> Selection {
    Selection::LastIterate
}

impl AdversaryConfig {
    pub fn new(m: usize, n: usize, alpha: f64) -> Result<Self> {
        let cfg = AdversaryConfig {
            m,
            n,
            alpha,
            init: default_init(),
            selection: default_selection(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.n < 1 {
            return Err(Error::usage(format!(
                "adversary needs m ≥ 1 and n ≥ 1, got m={}, n={}",
                self.m, self.n
            )));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::usage(format!(
                "adversary step size must be positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Step-size default `ε/(4n)`: one frozen block of `n` steps cannot
    /// traverse more than a quarter of the ball radius. The theory wants
    /// `α < 1/L_ηη`, which is unknowable a priori; this is the practical
    /// stand-in.
    pub fn default_alpha(ball: &PerturbationBall, n: usize) -> f64 {
        ball.radius / (4.0 * n.max(1) as f64)
    }

    pub fn with_init(mut self, init: EtaInit) -> Self {
        self.init = init;
        self
    }

    pub fn with_selection(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }
}

/// Materializes the configured starting point. `Zero` is the deterministic
/// test default; `UniformInBall` is the training default.
pub fn initial_eta(init: EtaInit, ball: &PerturbationBall, dim: usize, rng: &mut Rng) -> RealVec {
    match init {
        EtaInit::Zero => RealVec::zeros(dim),
        EtaInit::UniformInBall => ball.sample(rng, dim),
    }
}

/// Per-layer costate-gap record inside one [`DriftEntry`]: the measured
/// `‖δp_t‖` and, for non-terminal layers, the triangle-inequality bound
/// `‖p⁰_{t+1}‖·‖J_t(x⁰) − J_t(x^ℓ)‖ + ‖J_t(x^ℓ)‖·‖δp_{t+1}‖` implied by one
/// step of the backward recursion (the discrete Gronwall building block).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDrift {
    pub t: usize,
    pub dp: f64,
    pub recursion_rhs: Option<f64>,
}

/// One instrumented inner iterate: the frozen-vs-fresh costate gap and the
/// induced gap between the frozen update direction and the fresh gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftEntry {
    pub j: usize,
    pub l: usize,
    /// The perturbation at this iterate (before its update is applied).
    pub eta: RealVec,
    /// `‖p₁^{η^{j,0}} − p₁^{η^{j,ℓ}}‖` — frozen block-head costate vs the
    /// fresh costate of the current iterate.
    pub drift_p1: f64,
    /// `‖grad_eta(frozen p₁) − grad_eta(fresh p₁)‖` at the current iterate:
    /// the inexact-oracle error of the frozen update.
    pub oracle_err: f64,
    /// Operator norm of the first layer's η-Jacobian `diag(act′(z₁))·W₀` at
    /// this iterate; by Cauchy–Schwarz `oracle_err ≤ j0_op_norm · drift_p1`.
    pub j0_op_norm: f64,
    /// Per-layer costate gaps `t = 1..=T`, terminal last.
    pub layers: Vec<LayerDrift>,
}

/// Attack outcome. `losses` holds the plain terminal loss Φ at every point a
/// forward sweep visited (block heads, any fresh-gradient probes, and the
/// final iterate, in visit order); the regularizer is η-independent and
/// omitted. `grad_norms` holds per-update norms: fresh `‖∇_η 𝒜‖` for PGD and
/// for YOPO under `MinGradNorm`, the free frozen-direction norm under
/// `LastIterate`.
#[derive(Debug, Clone)]
pub struct AdversaryResult {
    pub eta_hat: RealVec,
    pub eta_last: RealVec,
    pub eta_best_loss: RealVec,
    pub best_loss: f64,
    pub grad_norms: Vec<f64>,
    pub losses: Vec<f64>,
    pub drift: Option<Vec<DriftEntry>>,
    pub forward_count: usize,
    pub backward_count: usize,
}

/// The one projected update used by every attack:
/// `Π_𝒳[η − α·direction]`, where `direction = grad_eta(p₁)`.
fn project_step(ball: &PerturbationBall, eta: &RealVec, alpha: f64, direction: &RealVec) -> RealVec {
    ball.project(&eta.add_scaled(-alpha, direction))
}

fn assert_feasible(ball: &PerturbationBall, eta: &RealVec) {
    assert!(
        ball.contains(eta, 1e-9 * ball.radius.max(1.0)),
        "adversary iterate left the perturbation ball"
    );
}

fn with_iterate_context(e: Error, j: usize, l: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::numeric(format!("{msg} (adversary iterate j={j}, l={l})")),
        other => other,
    }
}

struct BestLoss {
    loss: f64,
    eta: RealVec,
}

impl BestLoss {
    fn new(loss: f64, eta: &RealVec) -> Self {
        BestLoss {
            loss,
            eta: eta.clone(),
        }
    }

    fn offer(&mut self, loss: f64, eta: &RealVec) {
        if loss > self.loss {
            self.loss = loss;
            self.eta = eta.clone();
        }
    }
}

/// Exact projected-gradient attack: `steps` updates, each with a fresh
/// costate (one full forward/backward per step), plus one closing forward to
/// score the final iterate. η̂ is the visited iterate with the smallest fresh
/// gradient norm; the best-loss iterate is tracked separately for
/// evaluation-style consumers.
pub fn pgd_attack(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    y: &Target,
    ball: &PerturbationBall,
    steps: usize,
    alpha: f64,
    eta0: &RealVec,
) -> Result<AdversaryResult> {
    if steps < 1 {
        return Err(Error::usage("pgd_attack needs steps ≥ 1"));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::usage(format!("step size must be positive, got {alpha}")));
    }
    let mut eta = ball.project(eta0);
    let mut forward_count = 0usize;
    let mut backward_count = 0usize;
    let mut losses = Vec::with_capacity(steps + 1);
    let mut grad_norms = Vec::with_capacity(steps);
    let mut best: Option<BestLoss> = None;
    let mut min_norm = f64::INFINITY;
    let mut eta_hat = eta.clone();

    for l in 0..steps {
        let (traj, costates) =
            sweep(spec, params, x0, &eta, y).map_err(|e| with_iterate_context(e, 0, l))?;
        forward_count += 1;
        backward_count += 1;
        let phi = loss(spec, traj.output(), y)?;
        losses.push(phi);
        match best.as_mut() {
            Some(b) => b.offer(phi, &eta),
            None => best = Some(BestLoss::new(phi, &eta)),
        }
        let direction = grad_eta(spec, params, x0, &eta, costates.p1())?;
        let norm = direction.norm2();
        grad_norms.push(norm);
        if norm < min_norm {
            min_norm = norm;
            eta_hat = eta.clone();
        }
        eta = project_step(ball, &eta, alpha, &direction);
        assert_feasible(ball, &eta);
    }
    // Score the final iterate (no gradient needed, forward only).
    let traj = crate::dynsys::forward(spec, params, x0, &eta)
        .map_err(|e| with_iterate_context(e, 0, steps))?;
    forward_count += 1;
    let phi = loss(spec, traj.output(), y)?;
    losses.push(phi);
    let mut best = best.expect("steps ≥ 1 guarantees at least one scored iterate");
    best.offer(phi, &eta);

    Ok(AdversaryResult {
        eta_hat,
        eta_last: eta,
        eta_best_loss: best.eta,
        best_loss: best.loss,
        grad_norms,
        losses,
        drift: None,
        forward_count,
        backward_count,
    })
}

/// YOPO-m-n attack: production mode, no drift instrumentation.
pub fn yopo_attack(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    y: &Target,
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    eta0: &RealVec,
) -> Result<AdversaryResult> {
    run_yopo(spec, params, x0, y, ball, cfg, eta0, false)
}

/// YOPO-m-n attack with drift instrumentation: at *every* inner iterate an
/// independent fresh sweep is run (including ℓ = 0, where purity of the
/// forward/backward functions makes the measured drift exactly zero) and the
/// frozen-vs-fresh gaps are recorded. Iterates are bit-identical to
/// [`yopo_attack`] — the instrumentation only observes. The extra sweeps are
/// included in the forward/backward counters.
pub fn yopo_attack_instrumented(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    y: &Target,
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    eta0: &RealVec,
) -> Result<AdversaryResult> {
    run_yopo(spec, params, x0, y, ball, cfg, eta0, true)
}

#[allow(clippy::too_many_arguments)]
fn run_yopo(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    y: &Target,
    ball: &PerturbationBall,
    cfg: &AdversaryConfig,
    eta0: &RealVec,
    instrument: bool,
) -> Result<AdversaryResult> {
    cfg.validate()?;
    let mut eta = ball.project(eta0);
    let mut forward_count = 0usize;
    let mut backward_count = 0usize;
    let mut losses = Vec::new();
    let mut grad_norms = Vec::with_capacity(cfg.m * cfg.n);
    let mut drift: Option<Vec<DriftEntry>> = instrument.then(Vec::new);
    let mut best: Option<BestLoss> = None;
    let mut min_norm = f64::INFINITY;
    let mut eta_hat: Option<RealVec> = None;

    for j in 0..cfg.m {
        // Block head: the one full sweep whose p₁ is frozen for n updates.
        let (head_traj, head_costates) =
            sweep(spec, params, x0, &eta, y).map_err(|e| with_iterate_context(e, j, 0))?;
        forward_count += 1;
        backward_count += 1;
        let phi = loss(spec, head_traj.output(), y)?;
        losses.push(phi);
        match best.as_mut() {
            Some(b) => b.offer(phi, &eta),
            None => best = Some(BestLoss::new(phi, &eta)),
        }
        let frozen_p1 = head_costates.p1().clone();

        for l in 0..cfg.n {
            // Frozen update direction: frozen p₁, but the first-layer
            // pre-activation is recomputed at the *current* η.
            let direction = grad_eta(spec, params, x0, &eta, &frozen_p1)
                .map_err(|e| with_iterate_context(e, j, l))?;

            if instrument {
                let entry = instrument_iterate(
                    spec, params, x0, y, &eta, j, l, &head_traj, &head_costates, &direction,
                )
                .map_err(|e| with_iterate_context(e, j, l))?;
                forward_count += 1;
                backward_count += 1;
                drift.as_mut().unwrap().push(entry);
            }

            match cfg.selection {
                Selection::LastIterate => {
                    // Free bookkeeping only: the frozen-direction norm.
                    grad_norms.push(direction.norm2());
                }
                Selection::MinGradNorm => {
                    // Fresh ‖∇_η 𝒜‖ at this iterate. At ℓ = 0 the frozen
                    // costate *is* fresh (computed at this exact η), so the
                    // block-head sweep is reused at no extra cost.
                    let fresh_norm = if l == 0 {
                        direction.norm2()
                    } else {
                        let (_, fresh) = sweep(spec, params, x0, &eta, y)
                            .map_err(|e| with_iterate_context(e, j, l))?;
                        forward_count += 1;
                        backward_count += 1;
                        grad_eta(spec, params, x0, &eta, fresh.p1())?.norm2()
                    };
                    grad_norms.push(fresh_norm);
                    if fresh_norm < min_norm {
                        min_norm = fresh_norm;
                        eta_hat = Some(eta.clone());
                    }
                }
            }

            eta = project_step(ball, &eta, cfg.alpha, &direction);
            assert_feasible(ball, &eta);
        }
    }
    // Score the final iterate η^{m,n}.
    let traj = crate::dynsys::forward(spec, params, x0, &eta)
        .map_err(|e| with_iterate_context(e, cfg.m, 0))?;
    forward_count += 1;
    let phi = loss(spec, traj.output(), y)?;
    losses.push(phi);
    let mut best = best.expect("m ≥ 1 guarantees at least one scored iterate");
    best.offer(phi, &eta);

    let eta_hat = match cfg.selection {
        Selection::LastIterate => eta.clone(),
        Selection::MinGradNorm => eta_hat.expect("n ≥ 1 guarantees a fresh-norm candidate"),
    };

    Ok(AdversaryResult {
        eta_hat,
        eta_last: eta,
        eta_best_loss: best.eta,
        best_loss: best.loss,
        grad_norms,
        losses,
        drift,
        forward_count,
        backward_count,
    })
}

/// Fresh sweep at the current iterate and frozen-vs-fresh gap extraction.
#[allow(clippy::too_many_arguments)]
fn instrument_iterate(
    spec: &NetworkSpec,
    params: &Params,
    x0: &RealVec,
    y: &Target,
    eta: &RealVec,
    j: usize,
    l: usize,
    head_traj: &crate::dynsys::StateTrajectory,
    head_costates: &CostateTrajectory,
    frozen_direction: &RealVec,
) -> Result<DriftEntry> {
    let fresh_traj = crate::dynsys::forward(spec, params, x0, eta)?;
    let fresh_costates = backward(spec, params, &fresh_traj, y)?;
    let drift_p1 = head_costates.p1().sub(fresh_costates.p1()).norm2();
    let fresh_direction = grad_eta(spec, params, x0, eta, fresh_costates.p1())?;
    let oracle_err = frozen_direction.sub(&fresh_direction).norm2();

    let depth = spec.depth();
    let mut layers = Vec::with_capacity(depth);
    let mut dp_next = 0.0; // ‖δp_{t+1}‖ from the previous (deeper) layer
    for t in (1..=depth).rev() {
        let dp = head_costates.costate(t).sub(fresh_costates.costate(t)).norm2();
        let recursion_rhs = if t < depth {
            // One backward-recursion step:
            // δp_t = [J_t(x⁰) − J_t(x^ℓ)]ᵀ p⁰_{t+1} + J_t(x^ℓ)ᵀ δp_{t+1},
            // with J_t(x) = diag(act′(z_{t+1}))·W_t at each trajectory's own
            // pre-activations.
            let j_head = layer_jacobian(spec, params, t, head_traj.preact(t));
            let j_fresh = layer_jacobian(spec, params, t, fresh_traj.preact(t));
            let mut j_gap = j_head.clone();
            crate::numerics::axpy(j_gap.as_mut_slice(), -1.0, j_fresh.as_slice());
            let rhs = head_costates.costate(t + 1).norm2() * j_gap.op_norm_est()
                + j_fresh.op_norm_est() * dp_next;
            Some(rhs)
        } else {
            None
        };
        layers.push(LayerDrift {
            t,
            dp,
            recursion_rhs,
        });
        dp_next = dp;
    }
    layers.reverse();
    let j0_op_norm = layer_jacobian(spec, params, 0, fresh_traj.preact(0)).op_norm_est();
    Ok(DriftEntry {
        j,
        l,
        eta: eta.clone(),
        drift_p1,
        oracle_err,
        j0_op_norm,
        layers,
    })
}

/// `J_t(x) = diag(act_t′(z_{t+1}))·W_t`: the layer-t state Jacobian,
/// materialized from the cached pre-activation.
fn layer_jacobian(spec: &NetworkSpec, params: &Params, t: usize, preact: &RealVec) -> RealMat {
    let w = &params.layer(t).w;
    let act = spec.activation(t);
    RealMat::from_fn(w.rows(), w.cols(), |i, k| act.deriv(preact[i]) * w.get(i, k))
        .expect("finite Jacobian entries")
}
