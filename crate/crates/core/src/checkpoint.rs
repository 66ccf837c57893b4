//! Checkpoint bundles: one DCNT file per named tensor, the frozen embedding,
//! the answer token list and a JSON manifest holding the config.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::DcnConfig;
use crate::encoder::{read_token_file, write_token_file, TokenSequence};
use crate::error::{DcnError, Result};
use crate::model::Dcn;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "dcn-checkpoint/1";
const EMBEDDING_FILE: &str = "embedding.dcnt";
const ANSWERS_FILE: &str = "answers.txt";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config: DcnConfig,
    pub tensors: Vec<TensorEntry>,
    pub embedding: String,
    pub answers: String,
}

pub fn save(model: &Dcn, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(model.params().len());
    for (name, t) in model.names().iter().zip(model.params()) {
        let file = format!("{name}.dcnt");
        t.save(dir.join(&file))?;
        tensors.push(TensorEntry {
            name: name.clone(),
            file,
            shape: t.shape().to_vec(),
        });
    }
    model.embedding().save(dir.join(EMBEDDING_FILE))?;
    let answers: Vec<Vec<u32>> = model.answers().iter().map(|a| a.ids().to_vec()).collect();
    write_token_file(dir.join(ANSWERS_FILE), &answers)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        config: model.config().clone(),
        tensors,
        embedding: EMBEDDING_FILE.into(),
        answers: ANSWERS_FILE.into(),
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let text = fs::read_to_string(dir.as_ref().join(MANIFEST))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(DcnError::Format(format!("unsupported checkpoint format {:?}", manifest.format)));
    }
    manifest.config.validate()?;
    Ok(manifest)
}

pub fn load(dir: impl AsRef<Path>) -> Result<Dcn> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        if entry.file.contains(['/', '\\']) {
            return Err(DcnError::Format(format!("tensor file {:?} escapes the checkpoint", entry.file)));
        }
        let t = Tensor::load(dir.join(&entry.file))?;
        if t.shape() != entry.shape.as_slice() {
            return Err(DcnError::Format(format!(
                "{} is {:?} on disk, manifest says {:?}",
                entry.name,
                t.shape(),
                entry.shape
            )));
        }
        params.push(t);
    }
    let embedding = Tensor::load(dir.join(&manifest.embedding))?;
    let vocab = embedding.dims2()?.0;
    let answers = read_token_file(dir.join(&manifest.answers))?
        .into_iter()
        .map(|ids| TokenSequence::new(ids, vocab, manifest.config.n_max))
        .collect::<Result<Vec<_>>>()?;
    let model = Dcn::from_parts(manifest.config, params, embedding, answers)?;
    for (entry, name) in manifest.tensors.iter().zip(model.names()) {
        if &entry.name != name {
            return Err(DcnError::Format(format!("tensor {} stored where {name} was expected", entry.name)));
        }
    }
    Ok(model)
}
