//! `yopo verify`: runs one diagnostic suite and exits 0 only if every hard
//! assertion holds. Reports are written as JSON when `--out` is given; human
//! summaries go to stderr.

use std::path::PathBuf;

use clap::{Args, Subcommand};
use serde::Serialize;
use yopo_core::adversary::AdversaryConfig;
use yopo_core::bounds::{estimate_constants, BoundConstants, ProbePlan};
use yopo_core::diagnostics::{
    adversary_convergence_curve, gradient_check_suite, linear_fit, measure_drift,
    measure_oracle_error, GradCheck,
};
use yopo_core::dynsys::{Activation, LossKind, NetworkSpec};
use yopo_core::numerics::Rng;
use yopo_core::{Error, Result};

use crate::common;
use crate::instances::{self, Instance};

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(subcommand)]
    pub suite: Suite,
}

#[derive(Debug, Subcommand)]
pub enum Suite {
    /// Costate-derived gradients vs central finite differences on a grid of
    /// random small networks.
    Gradients(GradientsArgs),
    /// Frozen-costate drift: zero at block heads, bounded growth within
    /// blocks, layer recursion consistency.
    Drift(ProbeArgs),
    /// Frozen-vs-fresh gradient error: zero at block heads and below the
    /// measured Cauchy–Schwarz ceiling at every iterate.
    Oracle(ProbeArgs),
    /// Inner-maximization convergence across an (m, n) grid on a constructed
    /// strongly concave instance.
    AdversaryCurve(CurveArgs),
}

#[derive(Debug, Args)]
pub struct GradientsArgs {
    /// Number of random networks.
    #[arg(long, default_value_t = 50)]
    pub nets: usize,
    /// Relative-error tolerance.
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file (JSON array of per-net results).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Instance: random | all-linear | isotropic | anisotropic.
    #[arg(long, default_value = "random")]
    pub instance: String,
    /// Layer dimensions for random/all-linear instances.
    #[arg(long, default_value = "2,3,2")]
    pub arch: String,
    /// Activation for the random instance.
    #[arg(long, default_value = "tanh")]
    pub act: String,
    /// Loss for the random instance.
    #[arg(long, default_value = "softmax-cross-entropy")]
    pub loss: String,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub alpha: f64,
    /// Perturbation radius ε (ignored by the constructed instances).
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Ball norm: l-inf|l2 (ignored by the constructed instances).
    #[arg(long)]
    pub norm: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Instance: isotropic | anisotropic.
    #[arg(long, default_value = "anisotropic")]
    pub instance: String,
    /// Semicolon-separated m,n cells, e.g. "1,1;2,1;4,1;1,4".
    #[arg(long, default_value = "1,1;2,1;3,1;4,1;5,1;6,1;7,1;8,1")]
    pub grid: String,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn probe_instance(args: &ProbeArgs) -> Result<Instance> {
    match args.instance.as_str() {
        "isotropic" => instances::isotropic(),
        "anisotropic" => instances::anisotropic(),
        "all-linear" => instances::all_linear(
            common::parse_arch(&args.arch)?,
            args.seed,
            common::make_ball(args.norm.as_deref(), args.eps)?,
        ),
        "random" => {
            let spec = NetworkSpec::uniform(
                common::parse_arch(&args.arch)?,
                common::parse_activation(&args.act)?,
                common::parse_loss(&args.loss)?,
            )?;
            instances::random(spec, args.seed, common::make_ball(args.norm.as_deref(), args.eps)?)
        }
        other => Err(Error::usage(format!(
            "unknown instance {other:?} (expected random|all-linear|isotropic|anisotropic)"
        ))),
    }
}

pub fn run(args: &VerifyArgs) -> Result<i32> {
    match &args.suite {
        Suite::Gradients(a) => gradients(a),
        Suite::Drift(a) => drift(a),
        Suite::Oracle(a) => oracle(a),
        Suite::AdversaryCurve(a) => curve(a),
    }
}

/// The default verification grid: depths 1–4, widths ≤ 8, the three smooth
/// activations, alternating classification/regression losses.
pub fn random_net_grid(count: usize, seed: u64) -> Result<Vec<NetworkSpec>> {
    let acts = [Activation::Tanh, Activation::Sigmoid, Activation::Elu];
    let mut rng = Rng::from_seed(seed).substream("verify-grid");
    let mut specs = Vec::with_capacity(count);
    for i in 0..count {
        let depth = 1 + rng.below(4) as usize;
        let dims: Vec<usize> = (0..=depth).map(|_| 1 + rng.below(8) as usize).collect();
        let act = acts[rng.below(3) as usize];
        let loss = if i % 2 == 0 {
            LossKind::SoftmaxCrossEntropy
        } else {
            LossKind::Quadratic
        };
        specs.push(NetworkSpec::uniform(dims, act, loss)?);
    }
    Ok(specs)
}

fn gradients(args: &GradientsArgs) -> Result<i32> {
    if args.nets < 1 {
        return Err(Error::usage("--nets must be ≥ 1"));
    }
    let specs = random_net_grid(args.nets, args.seed)?;
    let mut rng = Rng::from_seed(args.seed).substream("verify-probe-seed");
    let probe_seeds = [rng.next_u64()];
    let checks: Vec<GradCheck> = gradient_check_suite(&specs, &probe_seeds, args.tol)?;
    let failures: Vec<&GradCheck> = checks.iter().filter(|c| !c.pass).collect();
    for f in &failures {
        eprintln!(
            "FAIL dims {:?}: worst rel. error {:.3e} ({}) exceeds {:.1e}",
            f.layer_dims,
            f.max_rel_state.max(f.max_rel_theta).max(f.max_rel_eta),
            f.worst,
            f.tolerance
        );
    }
    eprintln!(
        "gradient check: {}/{} networks within tol {:.1e}",
        checks.len() - failures.len(),
        checks.len(),
        args.tol
    );
    if let Some(path) = &args.out {
        common::write_json(path, &checks)?;
    }
    Ok(if failures.is_empty() { 0 } else { 1 })
}

/// Drift report plus the conformance audit against the closed-form drift
/// constant derived from the measured layer gain.
#[derive(Debug, Serialize)]
struct DriftDoc {
    report: yopo_core::diagnostics::DriftReport,
    conformance: Option<Conformance>,
}

#[derive(Debug, Serialize)]
struct Conformance {
    k_hat: f64,
    c_prime_closed_form: f64,
    checked: usize,
    conforming: usize,
}

fn drift(args: &ProbeArgs) -> Result<i32> {
    let inst = probe_instance(args)?;
    let cfg = AdversaryConfig::new(args.m, args.n, args.alpha)?;
    let rng = Rng::from_seed(args.seed).substream("verify-drift");
    let report = measure_drift(&inst.spec, &inst.params, &inst.x0, &inst.y, &inst.ball, &cfg, &rng)?;

    let mut hard_failures = 0usize;
    for p in report.points.iter().filter(|p| p.l == 0 && p.drift_p1 != 0.0) {
        eprintln!("FAIL block head ({}, {}) has nonzero drift {}", p.j, p.l, p.drift_p1);
        hard_failures += 1;
    }
    if report.recursion_violations > 0 {
        eprintln!(
            "FAIL layer recursion violated {} of {} checks",
            report.recursion_violations, report.recursion_checks
        );
        hard_failures += 1;
    }

    // Conformance against Ĉ′·α·(n−1) is reported, not asserted: the closed
    // form is a worst-case envelope at estimated constants.
    let samples = [(inst.x0.clone(), inst.y.clone())];
    let conformance = estimate_constants(
        &inst.spec,
        &inst.params,
        &samples,
        &inst.ball,
        &rng.substream("verify-drift-constants"),
        &ProbePlan::default(),
    )
    .ok()
    .map(|c| {
        let (c_prime, _) = BoundConstants::derive_drift_constants(c.k, inst.spec.depth());
        let slack = (args.n - 1) as f64;
        let conforming = report
            .points
            .iter()
            .filter(|p| p.drift_p1 <= c_prime * p.alpha * slack)
            .count();
        Conformance {
            k_hat: c.k,
            c_prime_closed_form: c_prime,
            checked: report.points.len(),
            conforming,
        }
    });

    eprintln!(
        "drift: max {:.3e}, slope vs offset {:.3e}, calibrated constant {:.3e}, recursion {}/{} ok{}",
        report.max_drift,
        report.slope_vs_offset,
        report.c_prime_hat,
        report.recursion_checks - report.recursion_violations,
        report.recursion_checks,
        conformance
            .as_ref()
            .map(|c| format!(", conformance {}/{}", c.conforming, c.checked))
            .unwrap_or_default()
    );
    if let Some(path) = &args.out {
        common::write_json(path, &DriftDoc { report, conformance })?;
    }
    Ok(if hard_failures == 0 { 0 } else { 1 })
}

fn oracle(args: &ProbeArgs) -> Result<i32> {
    let inst = probe_instance(args)?;
    let cfg = AdversaryConfig::new(args.m, args.n, args.alpha)?;
    let rng = Rng::from_seed(args.seed).substream("verify-oracle");
    // The Cauchy–Schwarz ceiling is hard-asserted inside the measurement.
    let report =
        measure_oracle_error(&inst.spec, &inst.params, &inst.x0, &inst.y, &inst.ball, &cfg, &rng)?;

    let mut hard_failures = 0usize;
    for p in report.points.iter().filter(|p| p.l == 0 && p.error != 0.0) {
        eprintln!("FAIL block head ({}, {}) has nonzero oracle error {}", p.j, p.l, p.error);
        hard_failures += 1;
    }
    eprintln!(
        "oracle error: max {:.3e}, calibrated constant {:.3e}, {} iterates audited{}",
        report.max_error,
        report.c_hat,
        report.points.len(),
        report
            .sandwich
            .as_ref()
            .map(|s| format!(
                ", sandwich violations {}/{}",
                s.lower_violations + s.upper_violations,
                s.pairs
            ))
            .unwrap_or_default()
    );
    if let Some(path) = &args.out {
        common::write_json(path, &report)?;
    }
    Ok(if hard_failures == 0 { 0 } else { 1 })
}

fn curve(args: &CurveArgs) -> Result<i32> {
    let inst = match args.instance.as_str() {
        "isotropic" => instances::isotropic()?,
        "anisotropic" => instances::anisotropic()?,
        other => {
            return Err(Error::usage(format!(
                "unknown instance {other:?} (expected isotropic|anisotropic)"
            )))
        }
    };
    let grid = common::parse_grid(&args.grid)?;
    let rng = Rng::from_seed(args.seed).substream("verify-curve");
    let report = adversary_convergence_curve(
        &inst.spec,
        &inst.params,
        &inst.x0,
        &inst.y,
        &inst.ball,
        &grid,
        args.alpha,
        &rng,
    )?;

    // Informational fit: log measured gradient norm² against the total
    // update count for the fresh (n = 1) cells.
    let fresh: Vec<&yopo_core::diagnostics::CurveCell> = report
        .cells
        .iter()
        .filter(|c| c.n == 1 && c.measured_sq > 0.0)
        .collect();
    if fresh.len() >= 3 {
        let xs: Vec<f64> = fresh.iter().map(|c| (c.m * c.n) as f64).collect();
        let ys: Vec<f64> = fresh.iter().map(|c| c.measured_sq.ln()).collect();
        if let Ok((_, slope, r2)) = linear_fit(&xs, &ys) {
            eprintln!("fresh-cell decay: log-linear slope {slope:.4}, R² {r2:.4}");
        }
    }
    eprintln!(
        "adversary curve: {} cells, {} above their bound",
        report.cells.len(),
        report.violations
    );
    let l_hat = report.constants.l_eta_eta;
    if l_hat > 0.0 && args.alpha * l_hat < 0.99 {
        eprintln!(
            "note: the bound presumes the optimal inner step 1/L̂ = {:.3}; at α = {} the measured decay is slower, so cells above the bound are expected",
            1.0 / l_hat,
            args.alpha
        );
    }
    if let Some(path) = &args.out {
        common::write_json(path, &report)?;
    }
    Ok(0)
}
