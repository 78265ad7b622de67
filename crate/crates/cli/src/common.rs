//! Shared flag parsing and small output helpers. Every textual value accepted
//! here uses exactly the same spelling as the corresponding JSON config key,
//! so flags and config files stay interchangeable.

use std::path::Path;

use serde::Serialize;
use yopo_core::adversary::{BallNorm, PerturbationBall};
use yopo_core::dynsys::{Activation, LossKind, NetworkSpec};
use yopo_core::trainer::AttackAlgo;
use yopo_core::{Error, Result};

pub fn parse_activation(s: &str) -> Result<Activation> {
    match s {
        "tanh" => Ok(Activation::Tanh),
        "sigmoid" => Ok(Activation::Sigmoid),
        "elu" => Ok(Activation::Elu),
        "linear" => Ok(Activation::Linear),
        other => Err(Error::usage(format!(
            "unknown activation {other:?} (expected tanh|sigmoid|elu|linear)"
        ))),
    }
}

pub fn parse_loss(s: &str) -> Result<LossKind> {
    match s {
        "softmax-cross-entropy" => Ok(LossKind::SoftmaxCrossEntropy),
        "quadratic" => Ok(LossKind::Quadratic),
        "linear" => Ok(LossKind::Linear),
        "concave-quadratic" => Ok(LossKind::ConcaveQuadratic),
        other => Err(Error::usage(format!(
            "unknown loss {other:?} (expected softmax-cross-entropy|quadratic|linear|concave-quadratic)"
        ))),
    }
}

pub fn parse_norm(s: &str) -> Result<BallNorm> {
    match s {
        "l-inf" => Ok(BallNorm::LInf),
        "l2" => Ok(BallNorm::L2),
        other => Err(Error::usage(format!(
            "unknown norm {other:?} (expected l-inf|l2)"
        ))),
    }
}

pub fn parse_attack(s: &str) -> Result<AttackAlgo> {
    match s {
        "yopo" => Ok(AttackAlgo::Yopo),
        "pgd" => Ok(AttackAlgo::Pgd),
        other => Err(Error::usage(format!(
            "unknown attack {other:?} (expected yopo|pgd)"
        ))),
    }
}

/// "784,128,128,10" → layer dimensions.
pub fn parse_arch(s: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::usage(format!("bad architecture component {p:?} in {s:?}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() < 2 {
        return Err(Error::usage(format!(
            "architecture {s:?} needs at least input and output dimensions"
        )));
    }
    Ok(dims)
}

/// "1,2,5,10" → usize list (deduplicated, sorted).
pub fn parse_list(s: &str, what: &str) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = s
        .split(',')
        .map(|p| {
            let v = p
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::usage(format!("bad {what} entry {p:?} in {s:?}")))?;
            if v < 1 {
                return Err(Error::usage(format!("{what} entries must be ≥ 1, got {v}")));
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    out.sort_unstable();
    out.dedup();
    if out.is_empty() {
        return Err(Error::usage(format!("{what} list is empty")));
    }
    Ok(out)
}

/// "1,1;2,3" → (m, n) pairs in the given order.
pub fn parse_grid(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(';')
        .map(|cell| {
            let (m, n) = cell
                .split_once(',')
                .ok_or_else(|| Error::usage(format!("grid cell {cell:?} is not m,n")))?;
            let m = m.trim().parse::<usize>();
            let n = n.trim().parse::<usize>();
            match (m, n) {
                (Ok(m), Ok(n)) if m >= 1 && n >= 1 => Ok((m, n)),
                _ => Err(Error::usage(format!("grid cell {cell:?} is not m,n with m,n ≥ 1"))),
            }
        })
        .collect()
}

pub fn make_ball(norm: Option<&str>, eps: f64) -> Result<PerturbationBall> {
    let norm = match norm {
        Some(s) => parse_norm(s)?,
        None => BallNorm::LInf,
    };
    PerturbationBall::new(norm, eps)
}

/// The fallback architecture when neither config nor flags pin one: a single
/// 64-unit hidden layer between the dataset's input and class dimensions.
pub fn default_arch(input_dim: usize, num_classes: usize) -> Vec<usize> {
    vec![input_dim, 64, num_classes.max(2)]
}

pub fn resolve_spec(
    file_spec: Option<NetworkSpec>,
    arch: Option<&str>,
    act: Option<&str>,
    loss: Option<&str>,
    input_dim: usize,
    num_classes: usize,
) -> Result<NetworkSpec> {
    if arch.is_none() && act.is_none() && loss.is_none() {
        if let Some(spec) = file_spec {
            return Ok(spec);
        }
    }
    let dims = match arch {
        Some(s) => parse_arch(s)?,
        None => match &file_spec {
            Some(spec) => spec.layer_dims().to_vec(),
            None => default_arch(input_dim, num_classes),
        },
    };
    let act = match act {
        Some(s) => parse_activation(s)?,
        None => Activation::Tanh,
    };
    let loss = match loss {
        Some(s) => parse_loss(s)?,
        None => LossKind::SoftmaxCrossEntropy,
    };
    NetworkSpec::uniform(dims, act, loss)
}

/// Writes a machine-readable JSON document; parent directories must exist.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    yopo_core::dataio::write_json_pretty(path, value)
}

/// Shortest round-trip decimal for CSV cells (infinities render as inf).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
