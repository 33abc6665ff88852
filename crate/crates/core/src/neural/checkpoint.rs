//! Versioned checkpoint: a text header terminated by `end`, then the
//! little-endian f64 payload of every model and tensor in header order.
//!
//! ```text
//! gelsim-checkpoint 1
//! kind autoencoder
//! meta n_points 512
//! mlp encoder dims 3,64,128,64 acts relu,relu,identity seed 7
//! tensor shape_ref 1536
//! end
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Activation, Dense, Mlp};
use super::optim::{Adam, AdamConfig};
use super::train::{EpochRecord, LossCurve, TrainState};
use crate::error::{Error, Result};

const MAGIC: &str = "gelsim-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub mlps: Vec<(String, Mlp)>,
    pub tensors: Vec<(String, Vec<f64>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn check_token(s: &str, what: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(bad(format!("{what} '{s}' must be a non-empty token without whitespace")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            ..Self::default()
        }
    }

    pub fn renamed(mut self, kind: &str) -> Self {
        self.kind = kind.to_string();
        self
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_mlp(mut self, name: &str, mlp: &Mlp) -> Self {
        self.mlps.push((name.to_string(), mlp.clone()));
        self
    }

    pub fn with_tensor(mut self, name: &str, data: Vec<f64>) -> Self {
        self.tensors.push((name.to_string(), data));
        self
    }

    pub fn mlp(&self, name: &str) -> Result<&Mlp> {
        self.mlps
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Precondition(format!("checkpoint '{}' has no model '{name}'", self.kind)))
    }

    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.as_slice())
            .ok_or_else(|| Error::Precondition(format!("checkpoint '{}' has no tensor '{name}'", self.kind)))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Precondition(format!("checkpoint '{}' has no meta '{key}'", self.kind)))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse().map_err(|_| bad(format!("meta '{key}' = '{v}' does not parse")))
    }

    /// Attach optimizer moments, epoch counter and loss curve.
    pub fn with_train_state(self, st: &TrainState) -> Self {
        let parts = if st.curve.part_names.is_empty() {
            "-".to_string()
        } else {
            st.curve.part_names.join(",")
        };
        let mut curve = Vec::new();
        for e in &st.curve.epochs {
            curve.push(e.epoch as f64);
            curve.push(e.loss);
            curve.extend(&e.parts);
        }
        self.with_meta("epoch", st.epoch)
            .with_meta("adam_t", st.adam.t)
            .with_meta("curve_parts", parts)
            .with_tensor("adam_m", st.adam.m.clone())
            .with_tensor("adam_v", st.adam.v.clone())
            .with_tensor("curve", curve)
    }

    pub fn train_state(&self, optimizer: AdamConfig) -> Result<TrainState> {
        let part_names: Vec<String> = match self.meta("curve_parts")? {
            "-" => Vec::new(),
            p => p.split(',').map(str::to_string).collect(),
        };
        let m = self.tensor("adam_m")?.to_vec();
        let v = self.tensor("adam_v")?.to_vec();
        if m.len() != v.len() {
            return Err(bad("optimizer moments differ in length"));
        }
        let width = 2 + part_names.len();
        let flat = self.tensor("curve")?;
        if flat.len() % width != 0 {
            return Err(bad("loss curve tensor has a partial row"));
        }
        let epochs = flat
            .chunks_exact(width)
            .map(|r| EpochRecord {
                epoch: r[0] as usize,
                loss: r[1],
                parts: r[2..].to_vec(),
            })
            .collect();
        Ok(TrainState {
            epoch: self.meta_parse("epoch")?,
            adam: Adam {
                config: optimizer,
                m,
                v,
                t: self.meta_parse("adam_t")?,
            },
            curve: LossCurve { part_names, epochs },
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        check_token(&self.kind, "kind")?;
        let mut head = format!("{MAGIC} {VERSION}\nkind {}\n", self.kind);
        for (k, v) in &self.meta {
            check_token(k, "meta key")?;
            check_token(v, "meta value")?;
            head.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, m) in &self.mlps {
            check_token(name, "model name")?;
            let dims: Vec<String> = m.dims().iter().map(|d| d.to_string()).collect();
            let acts: Vec<&str> = m.activations().iter().map(|a| a.name()).collect();
            head.push_str(&format!(
                "mlp {name} dims {} acts {} seed {}\n",
                dims.join(","),
                acts.join(","),
                m.seed()
            ));
        }
        for (name, t) in &self.tensors {
            check_token(name, "tensor name")?;
            head.push_str(&format!("tensor {name} {}\n", t.len()));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for (_, m) in &self.mlps {
            for v in m.params() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for (_, t) in &self.tensors {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let needle = b"\nend\n";
        let split = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .ok_or_else(|| bad("checkpoint header is not terminated by 'end'"))?;
        let head = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("checkpoint header is not UTF-8"))?;
        let mut payload = &bytes[split + needle.len()..];
        let mut lines = head.lines();
        match lines.next().map(|l| l.split_whitespace().collect::<Vec<_>>()) {
            Some(v) if v.len() == 2 && v[0] == MAGIC => {
                if v[1] != VERSION.to_string() {
                    return Err(bad(format!("unsupported checkpoint version {}", v[1])));
                }
            }
            _ => return Err(bad("not a gelsim checkpoint")),
        }
        let mut ck = Checkpoint::default();
        let mut specs: Vec<(String, Vec<usize>, Vec<Activation>, u64)> = Vec::new();
        let mut tensor_specs: Vec<(String, usize)> = Vec::new();
        for line in lines {
            let t: Vec<&str> = line.split_whitespace().collect();
            match t.as_slice() {
                ["kind", k] => ck.kind = k.to_string(),
                ["meta", k, v] => {
                    ck.meta.insert(k.to_string(), v.to_string());
                }
                ["mlp", name, "dims", dims, "acts", acts, "seed", seed] => {
                    let dims = dims
                        .split(',')
                        .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad dims in '{line}'"))))
                        .collect::<Result<Vec<_>>>()?;
                    let acts = acts.split(',').map(Activation::parse).collect::<Result<Vec<_>>>()?;
                    let seed = seed.parse().map_err(|_| bad(format!("bad seed in '{line}'")))?;
                    if dims.len() != acts.len() + 1 {
                        return Err(bad(format!("dims and activations disagree in '{line}'")));
                    }
                    specs.push((name.to_string(), dims, acts, seed));
                }
                ["tensor", name, len] => {
                    let len = len.parse().map_err(|_| bad(format!("bad length in '{line}'")))?;
                    tensor_specs.push((name.to_string(), len));
                }
                _ => return Err(bad(format!("unrecognised header line '{line}'"))),
            }
        }
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if payload.len() < 8 * n {
                return Err(bad("checkpoint payload is truncated"));
            }
            let (now, rest) = payload.split_at(8 * n);
            payload = rest;
            Ok(now
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        for (name, dims, acts, seed) in specs {
            let mut layers = Vec::with_capacity(acts.len());
            for (d, &activation) in dims.windows(2).zip(&acts) {
                let w = take(d[0] * d[1])?;
                let b = take(d[1])?;
                layers.push(Dense {
                    weight: Array2::from_shape_vec((d[0], d[1]), w).map_err(|e| bad(e.to_string()))?,
                    bias: Array1::from(b),
                    activation,
                });
            }
            ck.mlps.push((name, Mlp::from_layers(layers, seed)?));
        }
        for (name, len) in tensor_specs {
            let t = take(len)?;
            ck.tensors.push((name, t));
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing bytes after checkpoint payload", payload.len())));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Precondition(format!("checkpoint {} does not exist", path.display())));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}
