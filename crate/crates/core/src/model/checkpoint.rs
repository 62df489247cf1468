//! Checkpoints share the trace container: the parameter tensors ride in the
//! `params` section, optionally alongside bases and latent traces.

use std::path::Path;

use crate::error::{Result, SeftError};
use crate::semantics::{SemanticBases, TransitionTrace};
use crate::traceio::{read_trace, write_trace, ParamsSection, TensorEntry, TraceFile, TraceRecord};

use super::params::{ModelConfig, ModelParams, ParamId};

pub const MODEL_NAME: &str = "toy-decoder";

fn to_f32(xs: &[f64]) -> Vec<f32> {
    xs.iter().map(|&x| x as f32).collect()
}

/// Packs parameters, optional bases and traces into one container.
///
/// Values are stored as f32, so a round trip rounds the weights.
pub fn to_trace_file(
    params: &ModelParams,
    bases: Option<&SemanticBases>,
    traces: &[TransitionTrace],
) -> Result<TraceFile> {
    let cfg = params.config();
    let records = traces
        .iter()
        .map(|t| {
            if t.layers() != cfg.layers {
                return Err(SeftError::shape(format!(
                    "trace has {} layers, model has {}",
                    t.layers(),
                    cfg.layers
                )));
            }
            let mut latents = Vec::with_capacity((cfg.layers + 1) * cfg.dim);
            for f in &t.latents {
                latents.extend(f.iter().map(|&x| x as f32));
            }
            Ok(TraceRecord {
                medium_token: t.medium_token as u32,
                label: t.label as u32,
                latents,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut file = TraceFile::new(
        MODEL_NAME,
        cfg.layers,
        cfg.dim,
        cfg.vocab,
        bases.map(|b| to_f32(b.input_matrix().data())),
        bases.map(|b| to_f32(b.output_matrix().data())),
        records,
    )?;
    let ids = params.ids();
    file.header.params = Some(ParamsSection {
        heads: cfg.heads,
        context_len: cfg.context_len,
        seed: cfg.seed,
        tensors: ids
            .iter()
            .map(|&id| {
                let (r, c) = params.shape(id);
                TensorEntry {
                    name: id.name(),
                    shape: vec![r, c],
                }
            })
            .collect(),
    });
    file.params = ids.iter().map(|&id| to_f32(params.tensor(id))).collect();
    file.validate()?;
    Ok(file)
}

/// Rebuilds model parameters from a container that carries a params section.
pub fn params_from_trace(file: &TraceFile) -> Result<ModelParams> {
    let h = &file.header;
    let section = h
        .params
        .as_ref()
        .ok_or_else(|| SeftError::invalid("trace carries no model parameters"))?;
    let config = ModelConfig {
        layers: h.layers,
        dim: h.dim,
        heads: section.heads,
        vocab: h.vocab,
        context_len: section.context_len,
        seed: section.seed,
    };
    let mut params = ModelParams::init(config)?;
    let expected = params.ids();
    if expected.len() != section.tensors.len() {
        return Err(SeftError::shape(format!(
            "checkpoint lists {} tensors, model needs {}",
            section.tensors.len(),
            expected.len()
        )));
    }
    for (entry, data) in section.tensors.iter().zip(&file.params) {
        let id = ParamId::parse(&entry.name)
            .ok_or_else(|| SeftError::invalid(format!("unknown tensor '{}'", entry.name)))?;
        let (r, c) = params.shape(id);
        if entry.shape != [r, c] {
            return Err(SeftError::shape(format!(
                "tensor {} has shape {:?}, expected [{r}, {c}]",
                entry.name, entry.shape
            )));
        }
        for (dst, &src) in params.tensor_mut(id).iter_mut().zip(data) {
            *dst = src as f64;
        }
    }
    Ok(params)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    write_trace(path, &to_trace_file(params, None, &[])?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    params_from_trace(&read_trace(path)?)
}
