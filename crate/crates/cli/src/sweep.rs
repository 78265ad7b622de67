//! `yopo sweep`: trains one model per (m, n) grid cell, evaluates each under
//! the strong fresh-gradient attack, and writes one CSV row per cell together
//! with the theory's error term and rate bound at estimated constants.
//!
//! Cells are independent: each derives its own seed from the master seed and
//! its grid key, so results do not depend on execution order or `--jobs`.

use std::io::Write as _;
use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use yopo_core::adversary::AdversaryConfig;
use yopo_core::bounds::{error_term, rate_bound, ProbePlan, Provenance, DEFAULT_INCLUDE_ALPHA_SQ};
use yopo_core::dataio::Dataset;
use yopo_core::dynsys::{NetworkSpec, Params};
use yopo_core::numerics::Rng;
use yopo_core::trainer::{evaluate, EvalProtocol, GammaRule, TrainConfig, TrainState};
use yopo_core::{Error, Result};

use crate::common;
use crate::data;

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Training dataset spec.
    #[arg(long)]
    pub data: String,
    /// Held-out evaluation dataset spec (defaults to the training spec with
    /// an independent synthetic draw).
    #[arg(long)]
    pub eval_data: Option<String>,
    #[arg(long)]
    pub take: Option<usize>,
    #[arg(long)]
    pub eval_take: Option<usize>,
    /// Grid values for m.
    #[arg(long, default_value = "5")]
    pub m_list: String,
    /// Grid values for n.
    #[arg(long, default_value = "1,2,5,10,20")]
    pub n_list: String,
    /// Passes over the training set per cell.
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Ball norm: l-inf|l2.
    #[arg(long)]
    pub norm: Option<String>,
    /// Adversary step size, fixed across cells (default ε/4).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Layer dimensions (default input,64,classes).
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub act: Option<String>,
    #[arg(long)]
    pub loss: Option<String>,
    /// Inner maximizer: yopo|pgd.
    #[arg(long, default_value = "yopo")]
    pub attack: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker pool size for cells (1 = sequential cells, parallel samples).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory; receives sweep.csv (and failures.json on failure).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy)]
struct Row {
    m: usize,
    n: usize,
    robust_acc: f64,
    clean_acc: f64,
    backprops: u64,
    e_hat: f64,
    theorem5_rhs: f64,
}

#[derive(Debug, Serialize)]
struct CellFailure {
    m: usize,
    n: usize,
    error: String,
}

fn run_cell(
    spec: &NetworkSpec,
    train_set: &Dataset,
    eval_set: &Dataset,
    base: &TrainConfig,
    master_seed: u64,
    m: usize,
    n: usize,
) -> Result<Row> {
    let cell_seed = Rng::from_seed(master_seed)
        .substream_indexed("sweep-m", m as u64)
        .substream_indexed("sweep-n", n as u64)
        .next_u64();
    let config = TrainConfig {
        adversary: AdversaryConfig::new(m, n, base.adversary.alpha)?,
        seed: cell_seed,
        ..base.clone()
    };
    config.validate(spec)?;

    let params = Params::init(spec, &Rng::from_seed(cell_seed));
    let mut state = TrainState::new(spec.clone(), params, config.clone(), train_set.len())?;
    let mut backprops = 0u64;
    for _ in 0..config.total_steps {
        let batch = state.next_batch()?;
        let record = state.train_step(train_set, &batch)?;
        backprops += record.backprops;
    }

    let eval = evaluate(
        spec,
        &state.params,
        eval_set,
        &config.ball,
        &EvalProtocol::standard(&config.ball),
    )?;

    let (e_hat, rhs) = cell_bounds(spec, &state.params, train_set, &config, m, n, cell_seed);
    Ok(Row {
        m,
        n,
        robust_acc: eval.robust_acc,
        clean_acc: eval.clean_acc,
        backprops,
        e_hat,
        theorem5_rhs: rhs,
    })
}

/// The theory columns at constants estimated around the trained model.
/// Degenerate measurements (μ̂ ≤ 0, inadmissible α) make the closed forms
/// inapplicable; those cells report +∞ rather than a fabricated number, with
/// a note on stderr.
fn cell_bounds(
    spec: &NetworkSpec,
    params: &Params,
    train_set: &Dataset,
    config: &TrainConfig,
    m: usize,
    n: usize,
    cell_seed: u64,
) -> (f64, f64) {
    let samples: Vec<_> = (0..train_set.len().min(8))
        .map(|i| {
            let (x0, y) = train_set.pair(i);
            (x0.clone(), y)
        })
        .collect();
    let estimated = yopo_core::bounds::estimate_constants(
        spec,
        params,
        &samples,
        &config.ball,
        &Rng::from_seed(cell_seed).substream("sweep-bounds"),
        &ProbePlan::default(),
    );
    let mut c = match estimated {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cell ({m},{n}): constants not estimable ({e}); bound columns are inf");
            return (f64::INFINITY, f64::INFINITY);
        }
    };
    c.alpha = config.adversary.alpha;
    if c.mu <= 0.0 {
        eprintln!(
            "cell ({m},{n}): measured concavity modulus {:.3e} ≤ 0; assuming L̂_ηη/2 for the bound columns",
            c.mu
        );
        c.mu = c.l_eta_eta / 2.0;
        c.provenance.insert("mu".into(), Provenance::Assumed);
    }
    c.mu = c.mu.min(c.l_eta_eta);
    let e_hat = error_term(&c, m, n, DEFAULT_INCLUDE_ALPHA_SQ);
    let rhs = rate_bound(&c, m, n, config.total_steps.max(1), DEFAULT_INCLUDE_ALPHA_SQ);
    match (&e_hat, &rhs) {
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("cell ({m},{n}): bound inapplicable at measured constants ({e})");
        }
        _ => {}
    }
    (
        e_hat.unwrap_or(f64::INFINITY),
        rhs.unwrap_or(f64::INFINITY),
    )
}

pub fn run(args: &SweepArgs) -> Result<i32> {
    let train_set = data::load(&args.data, args.take, &Rng::from_seed(args.seed).substream("data"))?;
    let eval_spec = args.eval_data.as_deref().unwrap_or(&args.data);
    let eval_set = data::load(
        eval_spec,
        args.eval_take,
        &Rng::from_seed(args.seed).substream("eval-data"),
    )?;
    if eval_set.input_dim() != train_set.input_dim() {
        return Err(Error::usage("train and eval datasets have different input dimensions"));
    }

    let spec = common::resolve_spec(
        None,
        args.arch.as_deref(),
        args.act.as_deref(),
        args.loss.as_deref(),
        train_set.input_dim(),
        train_set.num_classes(),
    )?;
    let ball = common::make_ball(args.norm.as_deref(), args.eps)?;
    let alpha = args.alpha.unwrap_or(args.eps / 4.0);
    let batches_per_epoch = train_set.len() / args.batch;
    if batches_per_epoch == 0 {
        return Err(Error::usage(format!(
            "batch size {} exceeds training set size {}",
            args.batch,
            train_set.len()
        )));
    }
    let base = TrainConfig {
        batch_size: args.batch,
        total_steps: args.epochs * batches_per_epoch,
        gamma: GammaRule::Constant { gamma: args.gamma },
        attack: common::parse_attack(&args.attack)?,
        adversary: AdversaryConfig::new(1, 1, alpha)?,
        ball,
        seed: args.seed,
        eval_every: 0,
    };

    let cells: Vec<(usize, usize)> = {
        let ms = common::parse_list(&args.m_list, "m")?;
        let ns = common::parse_list(&args.n_list, "n")?;
        ms.iter().flat_map(|&m| ns.iter().map(move |&n| (m, n))).collect()
    };
    eprintln!(
        "sweep: {} cells × {} steps (batch {}, ε {}, α {})",
        cells.len(),
        base.total_steps,
        base.batch_size,
        args.eps,
        alpha
    );

    let run_one = |&(m, n): &(usize, usize)| {
        let started = std::time::Instant::now();
        let res = run_cell(&spec, &train_set, &eval_set, &base, args.seed, m, n);
        match &res {
            Ok(row) => eprintln!(
                "cell ({m},{n}): robust {:.4}, clean {:.4} in {:.1}s",
                row.robust_acc,
                row.clean_acc,
                started.elapsed().as_secs_f64()
            ),
            Err(e) => eprintln!("cell ({m},{n}): FAILED: {e}"),
        }
        res
    };
    let results: Vec<Result<Row>> = if args.jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.jobs)
            .build()
            .map_err(|e| Error::usage(format!("cannot build worker pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run_one).collect())
    } else {
        cells.iter().map(run_one).collect()
    };

    // Merge by cell key: rows come out ordered by (m, n) regardless of
    // completion order.
    let mut keyed: Vec<(usize, usize, Result<Row>)> = cells
        .iter()
        .zip(results)
        .map(|(&(m, n), r)| (m, n, r))
        .collect();
    keyed.sort_by_key(|&(m, n, _)| (m, n));

    std::fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("sweep.csv");
    let mut out = std::fs::File::create(&csv_path)?;
    writeln!(out, "m,n,robust_acc,clean_acc,backprops,e_hat,theorem5_rhs")?;
    let mut failures = Vec::new();
    for (m, n, res) in keyed {
        match res {
            Ok(r) => writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.m,
                r.n,
                common::fmt_f64(r.robust_acc),
                common::fmt_f64(r.clean_acc),
                r.backprops,
                common::fmt_f64(r.e_hat),
                common::fmt_f64(r.theorem5_rhs)
            )?,
            Err(e) => failures.push(CellFailure {
                m,
                n,
                error: e.to_string(),
            }),
        }
    }
    out.sync_all()?;
    eprintln!("wrote {}", csv_path.display());

    if failures.is_empty() {
        Ok(0)
    } else {
        let fail_path = args.out.join("failures.json");
        common::write_json(&fail_path, &failures)?;
        eprintln!("{} cell(s) failed; details in {}", failures.len(), fail_path.display());
        Ok(1)
    }
}
