//! `yopo bounds`: evaluates the closed-form convergence machinery — the
//! oracle error term 𝓔(m,n), the outer-rate right-hand side, the predicted
//! crossover n*, and the convexity-in-n check — at constants supplied in a
//! file or estimated from a model.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;
use yopo_core::bounds::{
    crossover_n, error_term, estimate_constants, rate_bound, BoundConstants, ProbePlan,
    Provenance, DEFAULT_INCLUDE_ALPHA_SQ,
};
use yopo_core::dataio::{load_checkpoint, read_json_config};
use yopo_core::numerics::Rng;
use yopo_core::{Error, Result};

use crate::common;
use crate::data;
use crate::instances;

#[derive(Debug, Args)]
pub struct BoundsArgs {
    /// JSON file holding the constants (BoundConstants field names).
    #[arg(long, conflicts_with = "estimate")]
    pub constants: Option<PathBuf>,
    /// Estimate the constants by probing a model.
    #[arg(long)]
    pub estimate: bool,
    /// Probe target for --estimate: isotropic | anisotropic | ckpt.
    #[arg(long, default_value = "isotropic")]
    pub instance: String,
    /// Checkpoint for --instance ckpt.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Dataset for --instance ckpt probing.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub take: Option<usize>,
    /// Perturbation radius for ckpt probing.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Ball norm: l-inf|l2.
    #[arg(long)]
    pub norm: Option<String>,
    /// Adversary step size override.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Table grid for m.
    #[arg(long, default_value = "1,2,5,10")]
    pub m_list: String,
    /// Table grid for n.
    #[arg(long, default_value = "1,2,5,10,20")]
    pub n_list: String,
    /// Outer step budget N for the rate bound.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Crossover / convexity search range in n.
    #[arg(long, default_value_t = 50)]
    pub n_max: usize,
    /// Evaluate the penalty term without its α² factor.
    #[arg(long)]
    pub no_alpha_sq: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct TableRow {
    m: usize,
    n: usize,
    error_term: f64,
    theorem5_rhs: f64,
}

#[derive(Debug, Serialize)]
struct Crossover {
    m: usize,
    n_star: usize,
    grid_argmin: usize,
}

#[derive(Debug, Serialize)]
struct Convexity {
    checked: usize,
    violations: usize,
}

#[derive(Debug, Serialize)]
struct BoundsDoc {
    constants: BoundConstants,
    include_alpha_sq: bool,
    total_steps: usize,
    table: Vec<TableRow>,
    crossover: Vec<Crossover>,
    convexity: Convexity,
}

fn obtain_constants(args: &BoundsArgs) -> Result<BoundConstants> {
    if let Some(path) = &args.constants {
        return read_json_config(path);
    }
    if !args.estimate {
        return Err(Error::usage("provide --constants FILE or --estimate"));
    }
    let (inst, sample_pairs) = match args.instance.as_str() {
        "isotropic" => {
            let inst = instances::isotropic()?;
            let pairs = vec![(inst.x0.clone(), inst.y.clone())];
            (inst, pairs)
        }
        "anisotropic" => {
            let inst = instances::anisotropic()?;
            let pairs = vec![(inst.x0.clone(), inst.y.clone())];
            (inst, pairs)
        }
        "ckpt" => {
            let ckpt = args
                .ckpt
                .as_ref()
                .ok_or_else(|| Error::usage("--instance ckpt needs --ckpt"))?;
            let spec_str = args
                .data
                .as_deref()
                .ok_or_else(|| Error::usage("--instance ckpt needs --data"))?;
            let dataset =
                data::load(spec_str, args.take, &Rng::from_seed(args.seed).substream("data"))?;
            let (meta, params) = load_checkpoint(ckpt)?;
            if meta.spec.input_dim() != dataset.input_dim() {
                return Err(Error::usage("checkpoint and dataset dimensions disagree"));
            }
            let pairs: Vec<_> = (0..dataset.len().min(16))
                .map(|i| {
                    let (x0, y) = dataset.pair(i);
                    (x0.clone(), y)
                })
                .collect();
            let ball = common::make_ball(args.norm.as_deref(), args.eps)?;
            (
                instances::Instance {
                    spec: meta.spec,
                    params,
                    x0: pairs[0].0.clone(),
                    y: pairs[0].1.clone(),
                    ball,
                },
                pairs,
            )
        }
        other => {
            return Err(Error::usage(format!(
                "unknown probe target {other:?} (expected isotropic|anisotropic|ckpt)"
            )))
        }
    };
    let mut c = estimate_constants(
        &inst.spec,
        &inst.params,
        &sample_pairs,
        &inst.ball,
        &Rng::from_seed(args.seed).substream("bounds-estimate"),
        &ProbePlan::default(),
    )?;
    eprintln!(
        "estimated: K̂ {:.4}, μ̂ {:.4}, L̂_ηη {:.4}, L̂_θη {:.4}, σ̂ {:.4}, Δ̂ {:.4}",
        c.k, c.mu, c.l_eta_eta, c.l_theta_eta, c.sigma, c.delta
    );
    if c.mu <= 0.0 {
        eprintln!(
            "measured concavity modulus {:.3e} ≤ 0 (the instance is not strongly concave); assuming μ = L̂_ηη/2 for bound evaluation",
            c.mu
        );
        c.mu = c.l_eta_eta / 2.0;
        c.provenance.insert("mu".into(), Provenance::Assumed);
    }
    c.mu = c.mu.min(c.l_eta_eta);
    Ok(c)
}

pub fn run(args: &BoundsArgs) -> Result<i32> {
    let mut c = obtain_constants(args)?;
    if let Some(alpha) = args.alpha {
        c.alpha = alpha;
        c.provenance.insert("alpha".into(), Provenance::Assumed);
    } else if args.estimate && c.l_eta_eta > 0.0 && c.alpha >= 1.0 / c.l_eta_eta {
        // The reference step (radius/4) can exceed what the bounds admit;
        // fall back to the midpoint of the admissible range.
        c.alpha = 0.5 / c.l_eta_eta;
        eprintln!("reference step inadmissible; using α = {:.4}", c.alpha);
    }
    c.validate()?;
    let include_alpha_sq = if args.no_alpha_sq { false } else { DEFAULT_INCLUDE_ALPHA_SQ };
    if args.steps < 1 {
        return Err(Error::usage("--steps must be ≥ 1 for the rate bound"));
    }
    if args.n_max < 3 {
        return Err(Error::usage("--n-max must be ≥ 3"));
    }

    let ms = common::parse_list(&args.m_list, "m")?;
    let ns = common::parse_list(&args.n_list, "n")?;

    let mut table = Vec::with_capacity(ms.len() * ns.len());
    eprintln!("{:>4} {:>4} {:>14} {:>14}", "m", "n", "error_term", "rhs");
    for &m in &ms {
        for &n in &ns {
            let e = error_term(&c, m, n, include_alpha_sq)?;
            let rhs = rate_bound(&c, m, n, args.steps, include_alpha_sq)?;
            eprintln!("{m:>4} {n:>4} {e:>14.6e} {rhs:>14.6e}");
            table.push(TableRow {
                m,
                n,
                error_term: e,
                theorem5_rhs: rhs,
            });
        }
    }

    let mut crossover = Vec::with_capacity(ms.len());
    for &m in &ms {
        let n_star = crossover_n(&c, m, args.n_max, include_alpha_sq)?;
        let grid_argmin = (1..=args.n_max)
            .map(|n| Ok((n, error_term(&c, m, n, include_alpha_sq)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("error terms are finite"))
            .map(|(n, _)| n)
            .expect("n range is nonempty");
        eprintln!("m = {m}: crossover n* = {n_star} (grid argmin {grid_argmin})");
        crossover.push(Crossover {
            m,
            n_star,
            grid_argmin,
        });
    }

    let mut checked = 0usize;
    let mut violations = 0usize;
    for &m in &ms {
        let es = (1..=args.n_max)
            .map(|n| error_term(&c, m, n, include_alpha_sq))
            .collect::<Result<Vec<_>>>()?;
        let scale = es.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
        for w in es.windows(3) {
            checked += 1;
            if w[2] - 2.0 * w[1] + w[0] < -1e-9 * scale {
                violations += 1;
            }
        }
    }
    eprintln!("convexity in n: {checked} second differences, {violations} negative");

    let doc = BoundsDoc {
        constants: c,
        include_alpha_sq,
        total_steps: args.steps,
        table,
        crossover,
        convexity: Convexity {
            checked,
            violations,
        },
    };
    if let Some(path) = &args.out {
        common::write_json(path, &doc)?;
    }
    Ok(if violations == 0 { 0 } else { 1 })
}
