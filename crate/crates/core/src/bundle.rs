//! Checkpoint directories: `meta.json`, `config.txt` (the resolved encoder
//! config), `vocab.json` and `params.ckpt`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use heat_tensor::{checkpoint, ParameterStore, Scalar};
use serde::{Deserialize, Serialize};

use crate::{HeatConfig, Vocab};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    /// `bugs` or `kg`.
    pub task: String,
    pub precision: String,
    pub seed: u64,
    pub epochs: usize,
    /// Output width of the KG scorer.
    pub num_entities: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {detail}")]
    Format { path: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, detail: impl ToString) -> BundleError {
    BundleError::Format {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

pub fn save<T: Scalar>(dir: &Path, meta: &Meta, config: &HeatConfig, vocab: &Vocab, store: &ParameterStore<T>) -> Result<(), BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))
    };
    write("meta.json", serde_json::to_string_pretty(meta).expect("meta serializes") + "\n")?;
    write("config.txt", config.to_string())?;
    write("vocab.json", serde_json::to_string(vocab).expect("vocab serializes") + "\n")?;
    let path = dir.join("params.ckpt");
    let mut out = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    checkpoint::save(store, &mut out).map_err(|e| format_err(&path, e))?;
    out.flush().map_err(io_err(&path))
}

pub fn load_meta(dir: &Path) -> Result<Meta, BundleError> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| format_err(&path, e))
}

pub fn load_config(dir: &Path) -> Result<HeatConfig, BundleError> {
    let path = dir.join("config.txt");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    HeatConfig::from_text(&text).map_err(|e| format_err(&path, e))
}

pub fn load_vocab(dir: &Path) -> Result<Vocab, BundleError> {
    let path = dir.join("vocab.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut vocab: Vocab = serde_json::from_str(&text).map_err(|e| format_err(&path, e))?;
    vocab.reindex();
    Ok(vocab)
}

/// Loads the saved parameters in place of `registered`, which must hold the
/// same names and shapes in the same order (as produced by registering the
/// model from the saved config and vocabulary).
pub fn load_params<T: Scalar>(dir: &Path, registered: &mut ParameterStore<T>) -> Result<(), BundleError> {
    let path = dir.join("params.ckpt");
    let file = File::open(&path).map_err(io_err(&path))?;
    let loaded: ParameterStore<T> = checkpoint::load(BufReader::new(file)).map_err(|e| format_err(&path, e))?;
    if loaded.len() != registered.len() {
        return Err(format_err(
            &path,
            format!("{} parameters, model expects {}", loaded.len(), registered.len()),
        ));
    }
    for ((_, a, x), (_, b, y)) in loaded.iter().zip(registered.iter()) {
        if a != b || x.shape() != y.shape() {
            return Err(format_err(
                &path,
                format!("parameter `{a}` {:?} does not match model `{b}` {:?}", x.shape(), y.shape()),
            ));
        }
    }
    *registered = loaded;
    Ok(())
}
