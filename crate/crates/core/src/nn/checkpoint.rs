//! Plain-text tensor checkpoints.
//!
//! ```text
//! CFCACHE-CKPT 1
//! tensor <name> <dim>...
//! <values, whitespace separated>
//! scalar <name> <value>
//! end
//! ```
//!
//! Values are written in shortest round-trip scientific notation, so a
//! save/load cycle reproduces every bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::adam::{Adam, AdamConfig};
use super::mlp::{Linear, Mlp};
use crate::error::{Error, Result};

pub const MAGIC: &str = "CFCACHE-CKPT 1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    tensors: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    scalars: BTreeMap<String, f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_tensor(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.tensors.insert(name.into(), (shape, values));
    }

    pub fn put_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.scalars.insert(name.into(), value);
    }

    pub fn tensor(&self, name: &str) -> Result<(&[usize], &[f64])> {
        self.tensors
            .get(name)
            .map(|(s, v)| (s.as_slice(), v.as_slice()))
            .ok_or_else(|| bad(format!("missing tensor {name}")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| bad(format!("missing scalar {name}")))
    }

    pub fn put_mlp(&mut self, prefix: &str, net: &Mlp) {
        for (i, l) in net.layers.iter().enumerate() {
            self.put_tensor(
                format!("{prefix}.{i}.weight"),
                vec![l.out_dim(), l.in_dim()],
                l.weight.iter().copied().collect(),
            );
            self.put_tensor(format!("{prefix}.{i}.bias"), vec![l.out_dim()], l.bias.to_vec());
        }
    }

    pub fn get_mlp(&self, prefix: &str) -> Result<Mlp> {
        let mut layers = Vec::new();
        while let Ok((shape, values)) = self.tensor(&format!("{prefix}.{}.weight", layers.len())) {
            let [rows, cols] = shape else {
                return Err(bad(format!("{prefix} weight must be 2-d")));
            };
            let weight = Array2::from_shape_vec((*rows, *cols), values.to_vec())
                .map_err(|e| bad(e.to_string()))?;
            let (bshape, bvalues) = self.tensor(&format!("{prefix}.{}.bias", layers.len()))?;
            if bshape != [*rows] {
                return Err(bad(format!("{prefix} bias shape {bshape:?} does not match weight")));
            }
            layers.push(Linear {
                weight,
                bias: Array1::from(bvalues.to_vec()),
            });
        }
        if layers.is_empty() {
            return Err(bad(format!("no layers stored under {prefix}")));
        }
        if layers.windows(2).any(|w| w[0].out_dim() != w[1].in_dim()) {
            return Err(bad(format!("{prefix} layer shapes are inconsistent")));
        }
        Ok(Mlp { layers })
    }

    pub fn put_adam(&mut self, prefix: &str, adam: &Adam) {
        self.put_scalar(format!("{prefix}.step"), adam.step as f64);
        self.put_scalar(format!("{prefix}.lr"), adam.config.lr);
        self.put_scalar(format!("{prefix}.beta1"), adam.config.beta1);
        self.put_scalar(format!("{prefix}.beta2"), adam.config.beta2);
        self.put_scalar(format!("{prefix}.eps"), adam.config.eps);
        for (i, (m, v)) in adam.first.iter().zip(&adam.second).enumerate() {
            self.put_tensor(format!("{prefix}.m{i}"), vec![m.len()], m.clone());
            self.put_tensor(format!("{prefix}.v{i}"), vec![v.len()], v.clone());
        }
    }

    pub fn get_adam(&self, prefix: &str, lengths: &[usize]) -> Result<Adam> {
        let config = AdamConfig {
            lr: self.scalar(&format!("{prefix}.lr"))?,
            beta1: self.scalar(&format!("{prefix}.beta1"))?,
            beta2: self.scalar(&format!("{prefix}.beta2"))?,
            eps: self.scalar(&format!("{prefix}.eps"))?,
        };
        let mut adam = Adam::new(config, lengths);
        adam.step = self.scalar(&format!("{prefix}.step"))? as u64;
        for (i, n) in lengths.iter().enumerate() {
            let (_, m) = self.tensor(&format!("{prefix}.m{i}"))?;
            let (_, v) = self.tensor(&format!("{prefix}.v{i}"))?;
            if m.len() != *n || v.len() != *n {
                return Err(bad(format!("{prefix} moment {i} has the wrong length")));
            }
            adam.first[i] = m.to_vec();
            adam.second[i] = v.to_vec();
        }
        Ok(adam)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (name, value) in &self.scalars {
            let _ = writeln!(out, "scalar {name} {value:e}");
        }
        for (name, (shape, values)) in &self.tensors {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "tensor {name} {}", dims.join(" "));
            let row = shape.last().copied().unwrap_or(1).max(1);
            for chunk in values.chunks(row) {
                let line: Vec<String> = chunk.iter().map(|v| format!("{v:e}")).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(bad(format!("missing header {MAGIC:?}")));
        }
        let mut ckpt = Checkpoint::new();
        let mut saw_end = false;
        let mut pending: Option<(String, Vec<usize>, Vec<f64>)> = None;
        let flush = |ckpt: &mut Checkpoint, p: &mut Option<(String, Vec<usize>, Vec<f64>)>| -> Result<()> {
            if let Some((name, shape, values)) = p.take() {
                let want: usize = shape.iter().product();
                if values.len() != want {
                    return Err(bad(format!("tensor {name}: expected {want} values, found {}", values.len())));
                }
                ckpt.tensors.insert(name, (shape, values));
            }
            Ok(())
        };
        for line in lines {
            let mut words = line.split_whitespace();
            match words.next() {
                None => continue,
                Some("end") => {
                    flush(&mut ckpt, &mut pending)?;
                    saw_end = true;
                    break;
                }
                Some("scalar") => {
                    flush(&mut ckpt, &mut pending)?;
                    let name = words.next().ok_or_else(|| bad("scalar without name"))?;
                    let value = words
                        .next()
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| bad(format!("scalar {name} has no numeric value")))?;
                    ckpt.scalars.insert(name.to_string(), value);
                }
                Some("tensor") => {
                    flush(&mut ckpt, &mut pending)?;
                    let name = words.next().ok_or_else(|| bad("tensor without name"))?;
                    let shape = words
                        .map(|w| w.parse::<usize>().map_err(|_| bad(format!("tensor {name}: bad dim {w:?}"))))
                        .collect::<Result<Vec<_>>>()?;
                    pending = Some((name.to_string(), shape, Vec::new()));
                }
                Some(first) => {
                    let (name, _, values) = pending
                        .as_mut()
                        .ok_or_else(|| bad(format!("stray data line starting {first:?}")))?;
                    for w in std::iter::once(first).chain(words) {
                        values.push(w.parse().map_err(|_| bad(format!("tensor {name}: bad value {w:?}")))?);
                    }
                }
            }
        }
        if !saw_end {
            return Err(bad("truncated checkpoint (no end marker)"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
