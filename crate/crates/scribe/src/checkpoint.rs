//! Parameter checkpoints: a manifest plus one STK1 file per tensor.

use std::path::Path;

use serde_json::{json, Value};

use scribe_core::cebra::{CebraConfig, Encoder};
use scribe_core::models::{Architecture, Classifier};
use scribe_core::nn::ParamStore;

use crate::manifest::{self, field, MANIFEST_FILE};
use crate::Failure;

fn param_file(name: &str) -> String {
    format!("{}.stk", name)
}

fn write_params(dir: &Path, params: &ParamStore) -> Result<Value, Failure> {
    manifest::create_dir(dir)?;
    let mut entries = Vec::with_capacity(params.len());
    for p in params.iter() {
        let file = dir.join(param_file(&p.name));
        manifest::write_stk(&file, &p.value)?;
        entries.push(json!({
            "name": p.name,
            "shape": p.value.shape(),
            "file": param_file(&p.name),
            "sha256": manifest::sha256_file(&file)?,
        }));
    }
    Ok(Value::Array(entries))
}

fn read_params(dir: &Path, params: &mut ParamStore) -> Result<(), Failure> {
    let values = params
        .iter()
        .map(|p| Ok((p.name.clone(), manifest::read_stk(&dir.join(param_file(&p.name)))?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    params.load_values(&values).map_err(|e| Failure::format(dir, e.to_string()))
}

pub fn cebra_config_json(cfg: &CebraConfig) -> Value {
    json!({
        "d_embed": cfg.d_embed,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "offset_frames": cfg.offset_frames,
        "temperature": cfg.temperature,
        "steps": cfg.steps,
        "seed": cfg.seed,
    })
}

pub fn save_encoder(dir: &Path, enc: &Encoder, cfg: &CebraConfig, extra: Value) -> Result<(), Failure> {
    let params = write_params(dir, &enc.params)?;
    let m = json!({
        "kind": "cebra_encoder",
        "n_channels": enc.n_channels,
        "d_embed": enc.d_embed,
        "window": enc.window,
        "config": cebra_config_json(cfg),
        "params": params,
        "provenance": extra,
    });
    manifest::write_json(&dir.join(MANIFEST_FILE), &m)
}

pub fn load_encoder(dir: &Path) -> Result<Encoder, Failure> {
    let path = dir.join(MANIFEST_FILE);
    let m = manifest::read_json(&path)?;
    let get = |k: &str| -> Result<usize, Failure> {
        field(&path, &m, k)?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Failure::format(&path, format!("{} must be an integer", k)))
    };
    let mut enc = Encoder::new(get("n_channels")?, get("d_embed")?, get("window")?, 0).map_err(|e| Failure::core("checkpoint", e))?;
    read_params(dir, &mut enc.params)?;
    Ok(enc)
}

pub fn save_classifier(dir: &Path, model: &Classifier, seed: u64, extra: Value) -> Result<(), Failure> {
    let params = write_params(dir, &model.params)?;
    let m = json!({
        "kind": "classifier",
        "architecture": model.arch.name(),
        "d_embed": model.arch.d_embed(),
        "seed": seed,
        "params": params,
        "provenance": extra,
    });
    manifest::write_json(&dir.join(MANIFEST_FILE), &m)
}

pub fn load_classifier(dir: &Path) -> Result<Classifier, Failure> {
    let path = dir.join(MANIFEST_FILE);
    let m = manifest::read_json(&path)?;
    let arch = match (field(&path, &m, "architecture")?.as_str(), m.get("d_embed").and_then(Value::as_u64)) {
        (Some("baseline_cnn"), _) => Architecture::BaselineCnn,
        (Some("eegnet"), _) => Architecture::EegNet,
        (Some("fusion"), Some(d)) => Architecture::Fusion { d_embed: d as usize },
        (a, _) => return Err(Failure::format(&path, format!("unknown architecture {:?}", a))),
    };
    let mut model = arch.build(0).map_err(|e| Failure::core("checkpoint", e))?;
    read_params(dir, &mut model.params)?;
    Ok(model)
}
