//! Binary container for model parameters, task heads and gates.
//!
//! Layout: the 8-byte magic, a single-line JSON manifest, a `\n`, then the
//! tensors as little-endian `f32` in manifest order. The manifest carries a
//! 64-bit FNV-1a checksum of itself (with the checksum field empty) followed
//! by the data section, so any damaged byte is detected on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use smited_core::model::{ModelConfig, ModelParams};
use smited_core::numerics::Tensor;
use smited_core::training::{FinetuneHead, Task, HEAD_NAMES};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SMITED01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Model,
    Head,
    Gate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
    #[serde(default)]
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

fn fnv1a(parts: &[&[u8]]) -> String {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for part in parts {
        for &b in *part {
            h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

fn checksum(manifest: &Manifest, data: &[u8]) -> String {
    let mut m = manifest.clone();
    m.checksum = None;
    let json = serde_json::to_vec(&m).expect("manifest serializes");
    fnv1a(&[&json, data])
}

/// Decoded container contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: Kind,
    pub config: Option<ModelConfig>,
    pub meta: serde_json::Map<String, serde_json::Value>,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub fn encode(c: &Container) -> Vec<u8> {
    let mut offset = 0;
    let tensors = c
        .tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.numel();
            e
        })
        .collect();
    let mut manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: c.kind,
        config: c.config.clone(),
        meta: c.meta.clone(),
        tensors,
        checksum: None,
    };
    let mut data = Vec::with_capacity(offset);
    for (_, t) in &c.tensors {
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
    }
    manifest.checksum = Some(checksum(&manifest, &data));
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json);
    out.push(b'\n');
    out.extend_from_slice(&data);
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Container> {
    let body = bytes
        .strip_prefix(MAGIC.as_slice())
        .ok_or_else(|| corrupt("bad magic"))?;
    let nl = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("manifest is not terminated"))?;
    let manifest: Manifest =
        serde_json::from_slice(&body[..nl]).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(corrupt(format!(
            "format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let data = &body[nl + 1..];
    match &manifest.checksum {
        Some(sum) if *sum == checksum(&manifest, data) => {}
        Some(_) => return Err(corrupt("checksum mismatch")),
        None => return Err(corrupt("manifest has no checksum")),
    }
    let mut expected = 0usize;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        if e.offset != expected {
            return Err(corrupt(format!(
                "tensor {} starts at {} not {expected}",
                e.name, e.offset
            )));
        }
        let n = e
            .shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| corrupt(format!("tensor {} is too large", e.name)))?;
        let end = expected
            .checked_add(n)
            .filter(|&end| end <= data.len())
            .ok_or_else(|| corrupt(format!("data ends inside tensor {}", e.name)))?;
        let values = data[expected..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(e.shape.clone(), values).map_err(|e| corrupt(e.to_string()))?;
        tensors.push((e.name.clone(), t));
        expected = end;
    }
    if expected != data.len() {
        return Err(corrupt(format!(
            "{} bytes of data, manifest accounts for {expected}",
            data.len()
        )));
    }
    Ok(Container {
        kind: manifest.kind,
        config: manifest.config,
        meta: manifest.meta,
        tensors,
    })
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    fs::write(path, encode(c)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path, kind: Kind) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let c = decode(&bytes)?;
    if c.kind != kind {
        return Err(corrupt(format!(
            "{} holds a {:?}, expected a {kind:?}",
            path.display(),
            c.kind
        )));
    }
    Ok(c)
}

pub fn model_container(params: &ModelParams<f32>) -> Container {
    Container {
        kind: Kind::Model,
        config: Some(params.config().clone()),
        meta: Default::default(),
        tensors: params
            .info()
            .iter()
            .zip(params.tensors())
            .map(|(i, t)| (i.name.clone(), t.clone()))
            .collect(),
    }
}

/// Rebuilds parameters, checking every tensor against the stored config.
pub fn params_from_container(c: Container) -> Result<ModelParams<f32>> {
    let cfg = c
        .config
        .ok_or_else(|| corrupt("model checkpoint carries no config"))?;
    let mut params =
        ModelParams::<f32>::zeros(&cfg).map_err(|e| Error::ConfigMismatch(e.to_string()))?;
    if c.tensors.len() != params.len() {
        return Err(Error::ConfigMismatch(format!(
            "{} tensors stored, config implies {}",
            c.tensors.len(),
            params.len()
        )));
    }
    for (i, (name, t)) in c.tensors.into_iter().enumerate() {
        if params.info()[i].name != name {
            return Err(Error::ConfigMismatch(format!(
                "tensor {i} is {name}, expected {}",
                params.info()[i].name
            )));
        }
        params
            .set(&name, t)
            .map_err(|e| Error::ConfigMismatch(e.to_string()))?;
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams<f32>) -> Result<()> {
    write_container(path, &model_container(params))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    params_from_container(read_container(path, Kind::Model)?)
}

fn task_meta(task: Task) -> serde_json::Value {
    match task {
        Task::Classify { classes } => serde_json::json!({ "classify": classes }),
        Task::Regress { outputs } => serde_json::json!({ "regress": outputs }),
    }
}

fn task_from_meta(v: Option<&serde_json::Value>) -> Result<Task> {
    let obj = v
        .and_then(|v| v.as_object())
        .ok_or_else(|| corrupt("missing task"))?;
    let n = |k: &str| obj.get(k).and_then(|v| v.as_u64()).map(|n| n as usize);
    match (n("classify"), n("regress")) {
        (Some(classes), None) => Ok(Task::Classify { classes }),
        (None, Some(outputs)) => Ok(Task::Regress { outputs }),
        _ => Err(corrupt("unrecognised task")),
    }
}

/// Saves a task head; `meta` entries (embedding mode, column names...) are
/// stored alongside the task.
pub fn save_head(
    path: &Path,
    head: &FinetuneHead<f32>,
    mut meta: serde_json::Map<String, serde_json::Value>,
) -> Result<()> {
    meta.insert("task".into(), task_meta(head.task));
    let tensors = HEAD_NAMES
        .iter()
        .zip(head.tensors())
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect();
    write_container(
        path,
        &Container {
            kind: Kind::Head,
            config: None,
            meta,
            tensors,
        },
    )
}

pub fn load_head(
    path: &Path,
) -> Result<(
    FinetuneHead<f32>,
    serde_json::Map<String, serde_json::Value>,
)> {
    let c = read_container(path, Kind::Head)?;
    let task = task_from_meta(c.meta.get("task"))?;
    let names: Vec<&str> = c.tensors.iter().map(|(n, _)| n.as_str()).collect();
    if names != HEAD_NAMES {
        return Err(corrupt(format!("head tensors {names:?}")));
    }
    let mut it = c.tensors.into_iter().map(|(_, t)| t);
    let t = [(); 4].map(|_| it.next().expect("four tensors"));
    let head = FinetuneHead::from_tensors(task, t).map_err(|e| corrupt(e.to_string()))?;
    Ok((head, c.meta))
}

pub fn save_gate(path: &Path, wg: &Tensor<f32>, k: usize) -> Result<()> {
    let mut meta = serde_json::Map::new();
    meta.insert("k".into(), k.into());
    write_container(
        path,
        &Container {
            kind: Kind::Gate,
            config: None,
            meta,
            tensors: vec![("wg".into(), wg.clone())],
        },
    )
}

pub fn load_gate(path: &Path) -> Result<(Tensor<f32>, usize)> {
    let c = read_container(path, Kind::Gate)?;
    let k = c
        .meta
        .get("k")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| corrupt("gate without k"))? as usize;
    match c.tensors.as_slice() {
        [(name, t)] if name == "wg" && t.shape().len() == 2 => Ok((t.clone(), k)),
        _ => Err(corrupt("gate must hold one matrix named wg")),
    }
}
