use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;

use super::{Tensor, TensorError};
use crate::rng::Rng;

const CHECKPOINT_MAGIC: &str = "dsse-params";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// How a parameter was initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Uniform on `[-bound, bound]` with `bound = sqrt(1 / fan_in)`.
    Uniform { fan_in: usize, bound: f64, seed: u64 },
    Zeros,
    Constant(f64),
    Explicit,
    Loaded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub init: Init,
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, init: Init) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter `{name}`");
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value, init });
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix drawn from uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)), `fan_in = shape[0]`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], rng: &mut Rng, seed: u64) -> ParamId {
        let fan_in = shape[0].max(1);
        let bound = (1.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        let value = Tensor::new(shape.to_vec(), data).expect("shape matches data");
        self.insert(name, value, Init::Uniform { fan_in, bound, seed })
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.insert(name, Tensor::zeros(shape), Init::Zeros)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Result<ParamId, TensorError> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    /// Replaces a parameter's value, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), TensorError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        p.init = Init::Explicit;
        Ok(())
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }
}

/// Parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub(crate) fn accumulate(&mut self, id: ParamId, g: Tensor) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn clear(&mut self) {
        self.grads.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(Option::is_none)
    }
}

/// Plain gradient descent, `p <- p - lr g`, then clears the gradients.
pub fn sgd_step(params: &mut ParamStore, grads: &mut Gradients, lr: f64) -> Result<(), TensorError> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(TensorError::InvalidLearningRate(lr));
    }
    for id in params.ids() {
        if grads.get(id).is_none() {
            return Err(TensorError::MissingGradient(params.get(id).name.clone()));
        }
    }
    for id in params.ids() {
        let g = grads.get(id).unwrap();
        for (p, gv) in params.params[id.0].value.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * gv;
        }
    }
    grads.clear();
    Ok(())
}

/// Adam optimizer state; an optional alternative to [`sgd_step`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Adam {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &mut Gradients, lr: f64) -> Result<(), TensorError> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(TensorError::InvalidLearningRate(lr));
        }
        for id in params.ids() {
            if grads.get(id).is_none() {
                return Err(TensorError::MissingGradient(params.get(id).name.clone()));
            }
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for id in params.ids() {
            let g = grads.get(id).unwrap();
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (k, p) in params.params[id.0].value.data_mut().iter_mut().enumerate() {
                let gv = g.data()[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gv;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gv * gv;
                *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
        }
        grads.clear();
        Ok(())
    }
}

/// Writes parameters as text.
///
/// ```text
/// dsse-params 1
/// meta <key> <value to end of line>
/// tensor <name> <ndim> <dim>...
/// <values, space separated, shortest round-trip exponent form>
/// end
/// ```
///
/// Every `f64` is printed in a form that parses back to the same bits.
pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamStore, meta: &[(String, String)]) -> Result<(), TensorError> {
    let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
    for (k, v) in meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(TensorError::Checkpoint(format!("invalid meta entry `{k}`")));
        }
        writeln!(out, "meta {k} {v}").unwrap();
    }
    for p in params.iter() {
        write!(out, "tensor {} {}", p.name, p.value.shape().len()).unwrap();
        for d in p.value.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let values: Vec<String> = p.value.data().iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&values.join(" "));
        out.push('\n');
    }
    out.push_str("end\n");
    std::fs::write(path.as_ref(), out)
        .map_err(|e| TensorError::Checkpoint(format!("{}: {e}", path.as_ref().display())))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParamStore, Vec<(String, String)>), TensorError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TensorError::Checkpoint(format!("{}: {e}", path.display())))?;
    let bad = |msg: &str| TensorError::Checkpoint(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    if header != format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}") {
        return Err(bad(&format!("unsupported header `{header}`")));
    }
    let mut store = ParamStore::new();
    let mut meta = Vec::new();
    let mut ended = false;
    while let Some(line) = lines.next() {
        if line == "end" {
            ended = true;
            break;
        }
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.push((k.to_string(), v.to_string()));
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let fields: Vec<&str> = rest.split(' ').collect();
            let name = fields.first().ok_or_else(|| bad("tensor without name"))?;
            let ndim: usize = fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad rank"))?;
            let shape: Vec<usize> = fields[2..]
                .iter()
                .map(|s| s.parse().map_err(|_| bad("bad dimension")))
                .collect::<Result<_, _>>()?;
            if shape.len() != ndim {
                return Err(bad(&format!("tensor `{name}` rank mismatch")));
            }
            let values: Vec<f64> = lines
                .next()
                .ok_or_else(|| bad("missing values"))?
                .split(' ')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| bad("bad value")))
                .collect::<Result<_, _>>()?;
            let tensor = Tensor::new(shape, values).map_err(|_| bad(&format!("tensor `{name}` size mismatch")))?;
            store.insert(*name, tensor, Init::Loaded);
        } else {
            return Err(bad(&format!("unexpected line `{line}`")));
        }
    }
    if !ended {
        return Err(bad("truncated (no `end` line)"));
    }
    Ok((store, meta))
}
