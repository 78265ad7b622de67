//! Dataset resolution from a compact `--data` spec string.
//!
//! Forms:
//! - `synth:S,D,CLASSES,MARGIN` — seeded separable Gaussian blobs
//! - `mnist[:DIR]` / `mnist-test[:DIR]` — IDX pairs under DIR, the
//!   `YOPO_DATA_DIR` environment variable, or `data/mnist`
//! - `idx:IMAGES,LABELS` — explicit IDX file pair

use std::path::PathBuf;

use yopo_core::dataio::{load_idx, synth_gaussians, Dataset};
use yopo_core::numerics::Rng;
use yopo_core::{Error, Result};

pub const DATA_DIR_ENV: &str = "YOPO_DATA_DIR";
const DEFAULT_MNIST_DIR: &str = "data/mnist";

fn mnist_dir(explicit: Option<&str>) -> PathBuf {
    match explicit {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR)),
    }
}

fn parse_synth(body: &str) -> Result<(usize, usize, usize, f64)> {
    let parts: Vec<&str> = body.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::usage(format!(
            "synth spec needs S,D,CLASSES,MARGIN, got {body:?}"
        )));
    }
    let s = parts[0]
        .parse::<usize>()
        .map_err(|_| Error::usage(format!("bad synth sample count {:?}", parts[0])))?;
    let d = parts[1]
        .parse::<usize>()
        .map_err(|_| Error::usage(format!("bad synth dimension {:?}", parts[1])))?;
    let classes = parts[2]
        .parse::<usize>()
        .map_err(|_| Error::usage(format!("bad synth class count {:?}", parts[2])))?;
    let margin = parts[3]
        .parse::<f64>()
        .map_err(|_| Error::usage(format!("bad synth margin {:?}", parts[3])))?;
    Ok((s, d, classes, margin))
}

/// Loads the dataset a spec string names. Synthetic draws come from the given
/// stream, so equal seeds give bitwise-equal datasets.
pub fn load(spec: &str, take: Option<usize>, synth_rng: &Rng) -> Result<Dataset> {
    let (kind, body) = match spec.split_once(':') {
        Some((k, b)) => (k, Some(b)),
        None => (spec, None),
    };
    let dataset = match kind {
        "synth" => {
            let body = body
                .ok_or_else(|| Error::usage("synth spec needs parameters: synth:S,D,CLASSES,MARGIN"))?;
            let (s, d, classes, margin) = parse_synth(body)?;
            let mut rng = synth_rng.substream("synth");
            synth_gaussians(&mut rng, s, d, classes, margin)?
        }
        "mnist" => {
            let dir = mnist_dir(body);
            load_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )
            .map_err(|e| e.with_context(&format!("mnist train set under {}", dir.display())))?
        }
        "mnist-test" => {
            let dir = mnist_dir(body);
            load_idx(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )
            .map_err(|e| e.with_context(&format!("mnist test set under {}", dir.display())))?
        }
        "idx" => {
            let body =
                body.ok_or_else(|| Error::usage("idx spec needs paths: idx:IMAGES,LABELS"))?;
            let (images, labels) = body
                .split_once(',')
                .ok_or_else(|| Error::usage("idx spec needs paths: idx:IMAGES,LABELS"))?;
            load_idx(images.as_ref(), labels.as_ref())?
        }
        other => {
            return Err(Error::usage(format!(
                "unknown dataset spec {other:?} (expected synth:…, mnist[:DIR], mnist-test[:DIR], idx:…)"
            )))
        }
    };
    match take {
        Some(k) => {
            let k = k.min(dataset.len());
            if k == 0 {
                return Err(Error::usage("--take 0 leaves no samples"));
            }
            dataset.subset(&(0..k).collect::<Vec<_>>())
        }
        None => Ok(dataset),
    }
}
