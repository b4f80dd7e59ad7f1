//! Named parameter arrays with gradient buffers and Adam state.
//!
//! Checkpoints are a single versioned JSON document. Values are written with
//! 17 significant digits so the decimal encoding round-trips every f64
//! bit-exactly.

use super::array::DenseArray;
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct ParamEntry {
    name: String,
    value: DenseArray,
    grad: DenseArray,
    m: Option<DenseArray>,
    v: Option<DenseArray>,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    step: u64,
    grads_ready: bool,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: DenseArray) -> ParamId {
        let grad = DenseArray::zeros(value.shape().to_vec());
        self.entries.push(ParamEntry { name: name.to_string(), value, grad, m: None, v: None });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &DenseArray {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut DenseArray {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &DenseArray {
        &self.entries[id.0].grad
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
        self.grads_ready = false;
    }

    pub(crate) fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &DenseArray) -> Result<()> {
        let e = &mut self.entries[id.0];
        if !e.grad.same_shape(delta) {
            return Err(Error::shape(format!(
                "gradient shape {:?} for parameter {} of shape {:?}",
                delta.shape(),
                e.name,
                e.value.shape()
            )));
        }
        for (g, d) in e.grad.data_mut().iter_mut().zip(delta.data()) {
            *g += d;
        }
        self.grads_ready = true;
        Ok(())
    }

    /// One Adam update over all parameters; increments the step counter and
    /// zeroes gradients. Errors if no gradients were populated since the last
    /// step.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if !self.grads_ready {
            return Err(Error::invalid("adam_step: gradients not populated"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for e in &mut self.entries {
            if e.m.is_none() {
                e.m = Some(DenseArray::zeros(e.value.shape().to_vec()));
                e.v = Some(DenseArray::zeros(e.value.shape().to_vec()));
            }
            let m = e.m.as_mut().unwrap().data_mut();
            let v = e.v.as_mut().unwrap().data_mut();
            let g = e.grad.data();
            let p = e.value.data_mut();
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        self.zero_grads();
        Ok(())
    }

    /// Plain gradient-descent update; increments the step counter and zeroes
    /// gradients.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if !self.grads_ready {
            return Err(Error::invalid("sgd_step: gradients not populated"));
        }
        self.step += 1;
        for e in &mut self.entries {
            let g = e.grad.data();
            let p = e.value.data_mut();
            for i in 0..p.len() {
                p[i] -= lr * g[i];
            }
        }
        self.zero_grads();
        Ok(())
    }

    /// All parameter values concatenated (entry order).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for e in &self.entries {
            out.extend_from_slice(e.value.data());
        }
        out
    }

    /// Concatenated gradients in the same layout as [`flatten`].
    pub fn flatten_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for e in &self.entries {
            out.extend_from_slice(e.grad.data());
        }
        out
    }

    /// Overwrite all parameter values from a flat slice.
    pub fn set_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::shape(format!(
                "flat length {} vs {} parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.value.numel();
            e.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    // ── checkpoint I/O ───────────────────────────────────────────────

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint { store: self.clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint().to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Checkpoint::from_json(&text)
    }
}

/// Serialized form of a [`ParamStore`].
pub struct Checkpoint {
    store: ParamStore,
}

const FORMAT_VERSION: u32 = 1;

impl Checkpoint {
    /// Emit the checkpoint document. Floats are printed as `{:.16e}` (17
    /// significant digits), which decodes back to the identical bit pattern.
    pub fn to_json(&self) -> Result<String> {
        let s = &self.store;
        for e in &s.entries {
            e.value.ensure_finite(&format!("checkpoint parameter {}", e.name))?;
        }
        let mut out = String::new();
        out.push_str("{\n");
        let _ = write!(out, "  \"format_version\": {},\n", FORMAT_VERSION);
        out.push_str("  \"param_names\": [");
        for (i, e) in s.entries.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{}", serde_json::to_string(&e.name)?);
        }
        out.push_str("],\n  \"shapes\": [");
        for (i, e) in s.entries.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{:?}", e.value.shape());
        }
        out.push_str("],\n  \"values\": [");
        for (i, e) in s.entries.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write_nested(&mut out, &e.value);
        }
        out.push_str("],\n");
        let has_state = s.entries.iter().any(|e| e.m.is_some());
        if has_state {
            let _ = write!(out, "  \"optimizer_state\": {{\n    \"step\": {},\n    \"m\": [", s.step);
            for (i, e) in s.entries.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                match &e.m {
                    Some(m) => write_nested(&mut out, m),
                    None => out.push_str("null"),
                }
            }
            out.push_str("],\n    \"v\": [");
            for (i, e) in s.entries.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                match &e.v {
                    Some(v) => write_nested(&mut out, v),
                    None => out.push_str("null"),
                }
            }
            out.push_str("]\n  },\n");
        }
        let _ = write!(out, "  \"step\": {}\n}}\n", s.step);
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<ParamStore> {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        let version = doc
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::invalid("checkpoint: missing format_version"))?;
        if version != FORMAT_VERSION as u64 {
            return Err(Error::Unsupported(format!("checkpoint format_version {version}")));
        }
        let names: Vec<String> = serde_json::from_value(
            doc.get("param_names").cloned().ok_or_else(|| Error::invalid("checkpoint: missing param_names"))?,
        )?;
        let shapes: Vec<Vec<usize>> = serde_json::from_value(
            doc.get("shapes").cloned().ok_or_else(|| Error::invalid("checkpoint: missing shapes"))?,
        )?;
        let values = doc.get("values").ok_or_else(|| Error::invalid("checkpoint: missing values"))?;
        let values = values.as_array().ok_or_else(|| Error::invalid("checkpoint: values not a list"))?;
        if names.len() != shapes.len() || names.len() != values.len() {
            return Err(Error::invalid("checkpoint: inconsistent lengths"));
        }
        let mut store = ParamStore::new();
        for ((name, shape), value) in names.iter().zip(&shapes).zip(values) {
            let mut flat = Vec::new();
            read_nested(value, &mut flat)?;
            store.add(name, DenseArray::new_checked(shape.clone(), flat)?);
        }
        store.step = doc.get("step").and_then(|v| v.as_u64()).unwrap_or(0);
        if let Some(state) = doc.get("optimizer_state") {
            store.step = state.get("step").and_then(|v| v.as_u64()).unwrap_or(store.step);
            for key in ["m", "v"] {
                let arrs = state
                    .get(key)
                    .and_then(|v| v.as_array())
                    .ok_or_else(|| Error::invalid("checkpoint: bad optimizer_state"))?;
                if arrs.len() != store.entries.len() {
                    return Err(Error::invalid("checkpoint: optimizer_state length mismatch"));
                }
                for (e, a) in store.entries.iter_mut().zip(arrs) {
                    if a.is_null() {
                        continue;
                    }
                    let mut flat = Vec::new();
                    read_nested(a, &mut flat)?;
                    let arr = DenseArray::new(e.value.shape().to_vec(), flat)?;
                    if key == "m" {
                        e.m = Some(arr);
                    } else {
                        e.v = Some(arr);
                    }
                }
            }
        }
        Ok(store)
    }
}

/// Write an array as nested JSON lists with 17-significant-digit floats.
fn write_nested(out: &mut String, a: &DenseArray) {
    fn write_flat(out: &mut String, data: &[f64]) {
        out.push('[');
        for (i, v) in data.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{v:.16e}");
        }
        out.push(']');
    }
    match a.shape().len() {
        0 => {
            let _ = write!(out, "{:.16e}", a.data()[0]);
        }
        1 => write_flat(out, a.data()),
        2 => {
            out.push('[');
            for i in 0..a.rows() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_flat(out, a.row(i));
            }
            out.push(']');
        }
        _ => unreachable!("arrays are at most 2-D"),
    }
}

fn read_nested(v: &serde_json::Value, flat: &mut Vec<f64>) -> Result<()> {
    match v {
        serde_json::Value::Number(n) => {
            flat.push(n.as_f64().ok_or_else(|| Error::invalid("checkpoint: bad number"))?);
            Ok(())
        }
        serde_json::Value::Array(items) => {
            for item in items {
                read_nested(item, flat)?;
            }
            Ok(())
        }
        _ => Err(Error::invalid("checkpoint: values must be numbers or lists")),
    }
}
