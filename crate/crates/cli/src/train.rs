//! `yopo train`: minibatch robust training with streamed metrics and a final
//! checkpoint. Flags mirror the config-file keys and override them.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use yopo_core::adversary::AdversaryConfig;
use yopo_core::dataio::{
    config_digest, load_checkpoint, read_json_config, save_checkpoint, Dataset, MetricsSink,
};
use yopo_core::dynsys::{NetworkSpec, Params};
use yopo_core::numerics::Rng;
use yopo_core::trainer::{evaluate, EvalProtocol, GammaRule, TrainConfig, TrainState};
use yopo_core::{Error, Result};

use crate::common;
use crate::data;

/// On-disk configuration document: both sections optional, flags override.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config document ({"spec": …, "train": …}); flags override.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset: synth:S,D,CLASSES,MARGIN | mnist[:DIR] | mnist-test[:DIR] | idx:IMAGES,LABELS
    #[arg(long)]
    pub data: String,
    /// Keep only the first N samples.
    #[arg(long)]
    pub take: Option<usize>,
    /// Output directory; receives metrics.csv, final.ckpt, config.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Layer dimensions, e.g. 784,128,128,10 (defaults to input,64,classes).
    #[arg(long)]
    pub arch: Option<String>,
    /// Activation: tanh|sigmoid|elu|linear.
    #[arg(long)]
    pub act: Option<String>,
    /// Loss: softmax-cross-entropy|quadratic|linear|concave-quadratic.
    #[arg(long)]
    pub loss: Option<String>,
    /// Full backward sweeps per sample per step.
    #[arg(long)]
    pub m: Option<usize>,
    /// Frozen-costate adversary updates per sweep.
    #[arg(long)]
    pub n: Option<usize>,
    /// Adversary step size (default ε/(4n)).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Constant learning rate.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Perturbation radius ε.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Ball norm: l-inf|l2.
    #[arg(long)]
    pub norm: Option<String>,
    /// Minibatch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Total optimizer steps (0 writes the initial state and exits).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Master seed; all randomness derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Inner maximizer: yopo|pgd.
    #[arg(long)]
    pub attack: Option<String>,
    /// Held-out evaluation cadence in steps (0 disables; logs to stderr).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Resume from a checkpoint written under the identical configuration.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Resolves dataset + network + training config from file and flags.
pub fn resolve(args: &TrainArgs) -> Result<(Dataset, NetworkSpec, TrainConfig)> {
    let doc: TrainDoc = match &args.config {
        Some(path) => read_json_config(path)?,
        None => TrainDoc::default(),
    };
    let file = doc.train;

    let seed = args
        .seed
        .or(file.as_ref().map(|t| t.seed))
        .unwrap_or(0);
    let dataset = data::load(&args.data, args.take, &Rng::from_seed(seed).substream("data"))?;

    let spec = common::resolve_spec(
        doc.spec,
        args.arch.as_deref(),
        args.act.as_deref(),
        args.loss.as_deref(),
        dataset.input_dim(),
        dataset.num_classes(),
    )?;
    if spec.input_dim() != dataset.input_dim() {
        return Err(Error::usage(format!(
            "network input dimension {} does not match dataset dimension {}",
            spec.input_dim(),
            dataset.input_dim()
        )));
    }

    let eps = args
        .eps
        .or(file.as_ref().map(|t| t.ball.radius))
        .unwrap_or(0.1);
    let ball = match (&args.norm, &file) {
        (Some(s), _) => common::make_ball(Some(s), eps)?,
        (None, Some(t)) => yopo_core::adversary::PerturbationBall::new(t.ball.norm, eps)?,
        (None, None) => common::make_ball(None, eps)?,
    };

    let m = args
        .m
        .or(file.as_ref().map(|t| t.adversary.m))
        .unwrap_or(1);
    let n = args
        .n
        .or(file.as_ref().map(|t| t.adversary.n))
        .unwrap_or(1);
    let alpha = args
        .alpha
        .or(file.as_ref().map(|t| t.adversary.alpha))
        .unwrap_or_else(|| AdversaryConfig::default_alpha(&ball, n));
    let mut adversary = AdversaryConfig::new(m, n, alpha)?;
    if let Some(t) = &file {
        adversary = adversary
            .with_init(t.adversary.init)
            .with_selection(t.adversary.selection);
    }

    let gamma = match (args.gamma, &file) {
        (Some(g), _) => GammaRule::Constant { gamma: g },
        (None, Some(t)) => t.gamma.clone(),
        (None, None) => GammaRule::Constant { gamma: 0.1 },
    };
    let attack = match (&args.attack, &file) {
        (Some(s), _) => common::parse_attack(s)?,
        (None, Some(t)) => t.attack,
        (None, None) => yopo_core::trainer::AttackAlgo::Yopo,
    };

    let config = TrainConfig {
        batch_size: args
            .batch
            .or(file.as_ref().map(|t| t.batch_size))
            .unwrap_or(32),
        total_steps: args
            .steps
            .or(file.as_ref().map(|t| t.total_steps))
            .unwrap_or(100),
        gamma,
        attack,
        adversary,
        ball,
        seed,
        eval_every: args
            .eval_every
            .or(file.as_ref().map(|t| t.eval_every))
            .unwrap_or(0),
    };
    config.validate(&spec)?;
    Ok((dataset, spec, config))
}

pub fn run(args: &TrainArgs) -> Result<i32> {
    let (dataset, spec, config) = resolve(args)?;
    std::fs::create_dir_all(&args.out)?;

    let resolved = TrainDoc {
        spec: Some(spec.clone()),
        train: Some(config.clone()),
    };
    // The digest guards resumption, so it covers exactly the fields that fix
    // the per-step trajectory. Evaluation cadence never does; the step budget
    // only does under the theory rule, whose γ depends on the total N (a
    // constant-γ run may be extended freely).
    let mut digested = config.clone();
    digested.eval_every = 0;
    if matches!(digested.gamma, GammaRule::Constant { .. }) {
        digested.total_steps = 0;
    }
    let digest = config_digest(&TrainDoc {
        spec: Some(spec.clone()),
        train: Some(digested),
    })?;
    common::write_json(&args.out.join("config.json"), &resolved)?;

    let metrics_path = args.out.join("metrics.csv");
    let (mut state, mut sink) = match &args.resume {
        Some(ckpt_path) => {
            let (meta, params) = load_checkpoint(ckpt_path)?;
            if meta.config_digest != digest {
                return Err(Error::usage(format!(
                    "checkpoint {} was written under a different configuration",
                    ckpt_path.display()
                )));
            }
            if meta.spec != spec {
                return Err(Error::usage("checkpoint network shape differs from the configuration"));
            }
            let state = TrainState::resume(spec, params, config.clone(), dataset.len(), &meta)?;
            let sink = if metrics_path.exists() {
                MetricsSink::append_to(&metrics_path)?
            } else {
                MetricsSink::create(&metrics_path)?
            };
            eprintln!(
                "resumed at step {} of {} from {}",
                meta.step,
                config.total_steps,
                ckpt_path.display()
            );
            (state, sink)
        }
        None => {
            let params = Params::init(&spec, &Rng::from_seed(config.seed));
            let state = TrainState::new(spec, params, config.clone(), dataset.len())?;
            (state, MetricsSink::create(&metrics_path)?)
        }
    };

    let protocol = EvalProtocol::standard(&config.ball);
    while state.step_count() < config.total_steps as u64 {
        let batch = state.next_batch()?;
        let record = state.train_step(&dataset, &batch).map_err(|e| {
            eprintln!("partial metrics retained in {}", metrics_path.display());
            e
        })?;
        sink.append(&record)?;
        if config.eval_every > 0 && record.step % config.eval_every as u64 == 0 {
            let eval = evaluate(&state.spec, &state.params, &dataset, &config.ball, &protocol)?;
            eprintln!(
                "step {}: clean acc {:.4}, robust acc {:.4}",
                record.step + 1,
                eval.clean_acc,
                eval.robust_acc
            );
        }
    }

    let ckpt = args.out.join("final.ckpt");
    save_checkpoint(&ckpt, &state.checkpoint_meta(digest), &state.params)?;
    eprintln!(
        "trained {} steps; wrote {} and {}",
        state.step_count(),
        metrics_path.display(),
        ckpt.display()
    );
    Ok(0)
}
