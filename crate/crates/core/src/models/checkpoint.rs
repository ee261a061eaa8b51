//! Named tensor bundles: a binary file of concatenated DTNS records plus a
//! plain-text manifest listing each record's name and shape in order.

use std::fs;
use std::path::{Path, PathBuf};

use super::{AdamState, Param};
use crate::error::{Error, Result};
use crate::tensor::{tensor_from_bytes, tensor_to_bytes};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid entry name {name:?}")));
        }
        if self.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate entry {name}")));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push_params(&mut self, params: &[Param]) -> Result<()> {
        params.iter().try_for_each(|p| self.push(p.name.clone(), p.value.clone()))
    }

    /// Overwrites each parameter with the entry of the same name; shapes must
    /// match.
    pub fn load_params(&self, params: &mut [Param]) -> Result<()> {
        for p in params {
            let t = self
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "{}: stored shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    /// Stores optimizer moments and step count under `prefix`.
    pub fn push_adam(&mut self, prefix: &str, params: &[Param], state: &AdamState) -> Result<()> {
        self.push(format!("{prefix}.t"), Tensor::scalar(state.t as f64))?;
        self.push(format!("{prefix}.lr"), Tensor::scalar(state.lr))?;
        for ((p, m), v) in params.iter().zip(&state.m).zip(&state.v) {
            self.push(format!("{prefix}.m.{}", p.name), m.clone())?;
            self.push(format!("{prefix}.v.{}", p.name), v.clone())?;
        }
        Ok(())
    }

    pub fn load_adam(&self, prefix: &str, params: &[Param], state: &mut AdamState) -> Result<()> {
        let scalar = |name: String| {
            self.get(&name)
                .map(|t| t.data()[0])
                .ok_or(Error::Checkpoint(format!("missing entry {name}")))
        };
        state.t = scalar(format!("{prefix}.t"))? as u64;
        state.lr = scalar(format!("{prefix}.lr"))?;
        state.m.clear();
        state.v.clear();
        for p in params {
            for (slot, dst) in [("m", &mut state.m), ("v", &mut state.v)] {
                let name = format!("{prefix}.{slot}.{}", p.name);
                let t = self
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing entry {name}")))?;
                dst.push(t.clone());
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (name, t) in &self.entries {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            out.push_str(name);
            out.push(' ');
            out.push_str(&dims.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.entries.iter().flat_map(|(_, t)| tensor_to_bytes(t)).collect()
    }

    pub fn from_parts(manifest: &str, bytes: &[u8]) -> Result<Self> {
        let mut out = Checkpoint::new();
        let mut pos = 0;
        for (lineno, line) in manifest.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (name, dims) = line
                .split_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("manifest line {}: {line:?}", lineno + 1)))?;
            let shape = if dims.is_empty() {
                Vec::new()
            } else {
                dims.split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Checkpoint(format!("manifest line {}: {e}", lineno + 1)))?
            };
            let (t, used) = tensor_from_bytes(&bytes[pos..])?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name}: manifest shape {shape:?}, payload {:?}",
                    t.shape()
                )));
            }
            pos += used;
            out.push(name, t)?;
        }
        if pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing payload bytes",
                bytes.len() - pos
            )));
        }
        Ok(out)
    }

    /// File names used by [`Checkpoint::write`] for a given stem.
    pub fn paths(stem: impl AsRef<Path>) -> (PathBuf, PathBuf) {
        let stem = stem.as_ref();
        let with = |ext: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        (with(".bin"), with(".manifest"))
    }

    /// Writes `<stem>.bin` and `<stem>.manifest`.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let (bin, manifest) = Self::paths(stem);
        fs::write(&bin, self.to_bytes()).map_err(|e| Error::io(&bin, e))?;
        fs::write(&manifest, self.manifest()).map_err(|e| Error::io(&manifest, e))
    }

    pub fn read(stem: impl AsRef<Path>) -> Result<Self> {
        let (bin, manifest) = Self::paths(stem);
        let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        Self::from_parts(&text, &bytes)
    }
}
