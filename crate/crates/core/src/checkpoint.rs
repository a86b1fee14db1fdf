//! Single-document JSON checkpoints.
//!
//! Layout: `format`, `model` (architecture header), `seed`, `manifest`
//! (name and shape per tensor) and `params`, one nested array per manifest
//! entry in the same order. Floats use shortest round-trip decimals, so a
//! load reproduces every value exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::models::{ArchSpec, Classifier, Discriminator, GanSpec, Generator};

const FORMAT: &str = "hmexp-checkpoint/1";
const GEN_PREFIX: &str = "generator.";
const DISC_PREFIX: &str = "discriminator.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelHeader {
    Classifier { arch: ArchSpec },
    Gan { spec: GanSpec },
}

impl ModelHeader {
    fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            ModelHeader::Classifier { arch } => arch.param_shapes(),
            ModelHeader::Gan { spec } => {
                let g = spec.generator_shapes().into_iter().map(|(n, s)| (format!("{GEN_PREFIX}{n}"), s));
                let d = spec
                    .discriminator_shapes()
                    .into_iter()
                    .map(|(n, s)| (format!("{DISC_PREFIX}{n}"), s));
                g.chain(d).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: ModelHeader,
    pub seed: u64,
    pub params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    model: ModelHeader,
    seed: u64,
    manifest: Vec<ManifestEntry>,
    params: Vec<Value>,
}

fn nest(data: &[f64], shape: &[usize]) -> Value {
    match shape {
        [] | [_] => Value::Array(data.iter().map(|&v| Value::from(v)).collect()),
        [_, rest @ ..] => {
            let stride: usize = rest.iter().product();
            Value::Array(data.chunks(stride.max(1)).map(|c| nest(c, rest)).collect())
        }
    }
}

fn flatten_into(v: &Value, shape: &[usize], out: &mut Vec<f64>, name: &str) -> Result<()> {
    let bad = || Error::Checkpoint(format!("`{name}` does not match its manifest shape"));
    let arr = v.as_array().ok_or_else(bad)?;
    let (&n, rest) = shape.split_first().ok_or_else(bad)?;
    if arr.len() != n {
        return Err(bad());
    }
    for item in arr {
        if rest.is_empty() {
            let x = item.as_f64().ok_or_else(bad)?;
            if !x.is_finite() {
                return Err(Error::Checkpoint(format!("`{name}` holds a non-finite value")));
            }
            out.push(x);
        } else {
            flatten_into(item, rest, out, name)?;
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_json_string(&self) -> Result<String> {
        let manifest = self
            .params
            .iter()
            .map(|(n, t)| ManifestEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let params = self.params.iter().map(|(_, t)| nest(t.data(), t.shape())).collect();
        let doc = Document {
            format: FORMAT.into(),
            model: self.header.clone(),
            seed: self.seed,
            manifest,
            params,
        };
        let mut s = serde_json::to_string(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json_str(text: &str) -> Result<Checkpoint> {
        let doc: Document =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if doc.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", doc.format)));
        }
        let expected = doc.model.expected_shapes();
        let found: Vec<(String, Vec<usize>)> = doc.manifest.iter().map(|m| (m.name.clone(), m.shape.clone())).collect();
        if found != expected {
            return Err(Error::Checkpoint("manifest does not match the model header".into()));
        }
        if doc.params.len() != doc.manifest.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors for {} manifest entries",
                doc.params.len(),
                doc.manifest.len()
            )));
        }
        let mut params = ParamSet::new();
        for (m, v) in doc.manifest.iter().zip(&doc.params) {
            let mut data = Vec::with_capacity(m.shape.iter().product());
            flatten_into(v, &m.shape, &mut data, &m.name)?;
            params.insert(m.name.clone(), Tensor::new(m.shape.clone(), data));
        }
        Ok(Checkpoint {
            header: doc.model,
            seed: doc.seed,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json_string()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_json_str(&text)
    }

    pub fn from_classifier(m: &Classifier) -> Checkpoint {
        Checkpoint {
            header: ModelHeader::Classifier { arch: m.arch.clone() },
            seed: m.seed,
            params: m.params.clone(),
        }
    }

    pub fn into_classifier(self) -> Result<Classifier> {
        match self.header {
            ModelHeader::Classifier { arch } => Ok(Classifier {
                arch,
                params: self.params,
                seed: self.seed,
            }),
            ModelHeader::Gan { .. } => Err(Error::Checkpoint("expected a classifier, found a GAN".into())),
        }
    }

    pub fn from_gan(generator: &Generator, discriminator: &Discriminator, seed: u64) -> Checkpoint {
        let mut params = generator.params.prefixed(GEN_PREFIX);
        params.extend(discriminator.params.prefixed(DISC_PREFIX));
        Checkpoint {
            header: ModelHeader::Gan {
                spec: generator.spec.clone(),
            },
            seed,
            params,
        }
    }

    pub fn into_gan(self) -> Result<(Generator, Discriminator)> {
        match self.header {
            ModelHeader::Gan { spec } => Ok((
                Generator {
                    spec: spec.clone(),
                    params: self.params.strip_prefix(GEN_PREFIX),
                },
                Discriminator {
                    spec,
                    params: self.params.strip_prefix(DISC_PREFIX),
                },
            )),
            ModelHeader::Classifier { .. } => Err(Error::Checkpoint("expected a GAN, found a classifier".into())),
        }
    }
}

pub fn save_checkpoint(model: &Classifier, path: &Path) -> Result<()> {
    Checkpoint::from_classifier(model).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Classifier> {
    Checkpoint::load(path)?.into_classifier()
}
