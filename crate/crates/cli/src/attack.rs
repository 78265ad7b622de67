//! `yopo attack`: evaluates a checkpoint under the fresh-gradient projected
//! attack and reports clean/robust accuracy and losses.

use std::path::PathBuf;

use clap::Args;
use yopo_core::dataio::load_checkpoint;
use yopo_core::numerics::Rng;
use yopo_core::trainer::{evaluate, EvalProtocol};
use yopo_core::{Error, Result};

use crate::common;
use crate::data;

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Checkpoint holding the model to attack.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset spec (see `yopo train --help`).
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub take: Option<usize>,
    /// Perturbation radius ε.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Ball norm: l-inf|l2.
    #[arg(long)]
    pub norm: Option<String>,
    /// Attack steps (fresh gradient each step).
    #[arg(long, default_value_t = 40)]
    pub steps: usize,
    /// Attack step size (default ε/10).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Seed for dataset resolution (synthetic sources only).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file (JSON); omit for a stderr summary only.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &AttackArgs) -> Result<i32> {
    let dataset = data::load(&args.data, args.take, &Rng::from_seed(args.seed).substream("data"))?;
    let (meta, params) = load_checkpoint(&args.ckpt)?;
    if meta.spec.input_dim() != dataset.input_dim() {
        return Err(Error::usage(format!(
            "checkpoint input dimension {} does not match dataset dimension {}",
            meta.spec.input_dim(),
            dataset.input_dim()
        )));
    }
    let ball = common::make_ball(args.norm.as_deref(), args.eps)?;
    let protocol = EvalProtocol {
        steps: args.steps,
        alpha: args.alpha.unwrap_or_else(|| {
            if ball.radius > 0.0 {
                ball.radius / 10.0
            } else {
                1e-3
            }
        }),
    };
    let report = evaluate(&meta.spec, &params, &dataset, &ball, &protocol)?;
    eprintln!(
        "clean acc {:.4} (loss {:.6}); robust acc {:.4} (loss {:.6}) under {}-step attack",
        report.clean_acc, report.clean_loss, report.robust_acc, report.robust_loss, protocol.steps
    );
    if let Some(path) = &args.out {
        common::write_json(path, &report)?;
    }
    Ok(0)
}
