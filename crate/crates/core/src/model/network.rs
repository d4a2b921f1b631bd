use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{cross_gate, gqa_attention, positional_encoding, project_branch, Attention, FeedForward, ForwardStats, Linear};
use super::{ModelConfig, ModelError};
use crate::rng;
use crate::telemetry::Dataset;
use crate::tensor::{load_checkpoint, save_checkpoint, ParamStore, Tape, Tensor, TensorError, Var};

/// Which measurement columns feed each branch, and the state width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    /// Channel indices of active/reactive power readings.
    pub power: Vec<usize>,
    /// Channel indices of voltage magnitude/angle readings.
    pub voltage: Vec<usize>,
    pub state_dim: usize,
}

impl InputDims {
    pub fn from_dataset(data: &Dataset) -> InputDims {
        InputDims {
            power: data.schema().power_indices(),
            voltage: data.schema().voltage_indices(),
            state_dim: data.state_dim(),
        }
    }

    pub fn channels(&self) -> usize {
        self.power.len() + self.voltage.len()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.power.is_empty() || self.voltage.is_empty() {
            return Err(ModelError::Config("both branches need at least one channel".into()));
        }
        if self.state_dim == 0 {
            return Err(ModelError::Config("state dimension is zero".into()));
        }
        let mut all: Vec<usize> = self.power.iter().chain(&self.voltage).copied().collect();
        all.sort_unstable();
        if all.iter().enumerate().any(|(i, &c)| i != c) {
            return Err(ModelError::Config("branch channels must partition 0..m".into()));
        }
        Ok(())
    }
}

/// A window-to-state estimator that can be trained by [`super::train`].
pub trait Estimator {
    fn config(&self) -> &ModelConfig;
    fn dims(&self) -> &InputDims;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records the forward pass for one `[T, m]` input window and returns
    /// the `[T, n]` estimate.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, z: &Tensor, stats: &mut ForwardStats) -> Result<Var, TensorError>;

    /// Affine map applied to the head output, if any.
    fn target_scaling(&self) -> Option<&TargetScaling>;

    fn set_target_scaling(&mut self, scaling: Option<TargetScaling>) -> Result<(), ModelError>;

    /// Forward pass without keeping the tape.
    fn estimate_voltages(&self, z: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let mut stats = ForwardStats::default();
        let out = self.forward(&mut tape, self.params(), z, &mut stats)?;
        Ok(tape.value(out).clone())
    }
}

fn check_input(z: &Tensor, window: usize, channels: usize) -> Result<(), TensorError> {
    if z.shape() != [window, channels] {
        return Err(TensorError::ShapeMismatch {
            op: "model input",
            lhs: z.shape().to_vec(),
            rhs: vec![window, channels],
        });
    }
    Ok(())
}

fn columns(z: &Tensor, cols: &[usize]) -> Tensor {
    let data = (0..z.rows())
        .flat_map(|r| cols.iter().map(move |&c| z.at(r, c)))
        .collect();
    Tensor::matrix(z.rows(), cols.len(), data).expect("column selection shape")
}

/// Fixed per-state map `x = offset + scale ⊙ y` from head output `y` to
/// state units. Not trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl TargetScaling {
    /// Mean and population std of each state over the training split. States
    /// that never vary keep unit scale.
    pub fn from_dataset(data: &Dataset) -> TargetScaling {
        let train = &data.samples()[..data.train_len()];
        let k = train.len() as f64;
        let n = data.state_dim();
        let offset: Vec<f64> = (0..n).map(|j| train.iter().map(|s| s.x[j]).sum::<f64>() / k).collect();
        let scale = (0..n)
            .map(|j| {
                let var = train.iter().map(|s| (s.x[j] - offset[j]).powi(2)).sum::<f64>() / k;
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        TargetScaling { offset, scale }
    }

    fn check(&self, n: usize) -> Result<(), ModelError> {
        if self.offset.len() != n || self.scale.len() != n {
            return Err(ModelError::Config(format!("target scaling must have {n} entries")));
        }
        if self.offset.iter().chain(&self.scale).any(|v| !v.is_finite()) || self.scale.iter().any(|&s| s <= 0.0) {
            return Err(ModelError::Config("target scaling must be finite with positive scale".into()));
        }
        Ok(())
    }

    fn apply(&self, tape: &mut Tape, y: Var) -> Result<Var, TensorError> {
        let scale = tape.constant(Tensor::vector(self.scale.clone()));
        let offset = tape.constant(Tensor::vector(self.offset.clone()));
        let scaled = tape.mul(y, scale)?;
        tape.add(scaled, offset)
    }
}

fn head_output(
    tape: &mut Tape,
    store: &ParamStore,
    head: &FeedForward,
    scaling: Option<&TargetScaling>,
    x: Var,
) -> Result<Var, TensorError> {
    let y = head.apply(tape, store, x)?;
    match scaling {
        Some(s) => s.apply(tape, y),
        None => Ok(y),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    attention: [Attention; 2],
    gate: [FeedForward; 2],
}

/// Two-branch estimator: power readings and voltage readings are embedded
/// separately, pass through grouped-query attention blocks, and exchange
/// information through cross gates before a shared output head.
#[derive(Debug, Clone, PartialEq)]
pub struct DtModel {
    config: ModelConfig,
    dims: InputDims,
    params: ParamStore,
    input: [Linear; 2],
    blocks: Vec<Block>,
    output: [Linear; 2],
    head: FeedForward,
    encoding: Option<Tensor>,
    scaling: Option<TargetScaling>,
}

impl DtModel {
    /// Fresh model with uniform(±sqrt(1/fan_in)) weights and zero biases.
    pub fn new(config: ModelConfig, dims: InputDims, seed: u64) -> Result<DtModel, ModelError> {
        config.validate()?;
        dims.validate()?;
        let (d, ff) = (config.d_model, config.d_ff);
        let mut r = rng::rng(seed);
        let mut p = ParamStore::new();
        let input = [
            Linear::new(&mut p, "branch1.proj", dims.power.len(), d, &mut r, seed),
            Linear::new(&mut p, "branch2.proj", dims.voltage.len(), d, &mut r, seed),
        ];
        let blocks = (0..config.blocks)
            .map(|i| Block {
                attention: [
                    Attention::new(&mut p, &format!("block{i}.attn1"), d, config.heads, config.kv_groups, &mut r, seed),
                    Attention::new(&mut p, &format!("block{i}.attn2"), d, config.heads, config.kv_groups, &mut r, seed),
                ],
                gate: [
                    FeedForward::new(&mut p, &format!("block{i}.gate1"), (d, ff, d), &mut r, seed),
                    FeedForward::new(&mut p, &format!("block{i}.gate2"), (d, ff, d), &mut r, seed),
                ],
            })
            .collect();
        let output = [
            Linear::new(&mut p, "branch1.out", d, d, &mut r, seed),
            Linear::new(&mut p, "branch2.out", d, d, &mut r, seed),
        ];
        let head = FeedForward::new(&mut p, "head", (2 * d, ff, dims.state_dim), &mut r, seed);
        let encoding = config.positional_encoding.then(|| positional_encoding(config.window, d));
        Ok(DtModel {
            config,
            dims,
            params: p,
            input,
            blocks,
            output,
            head,
            encoding,
            scaling: None,
        })
    }

    /// Model sized for `data`, with head outputs scaled to the spread of the
    /// training states.
    pub fn for_dataset(config: ModelConfig, data: &Dataset, seed: u64) -> Result<DtModel, ModelError> {
        let mut model = DtModel::new(config, InputDims::from_dataset(data), seed)?;
        model.set_target_scaling(Some(TargetScaling::from_dataset(data)))?;
        Ok(model)
    }

    pub fn head(&self) -> &FeedForward {
        &self.head
    }

    /// Gate networks of block `i`, reading branch 1 and branch 2 respectively.
    pub fn gates(&self, i: usize) -> &[FeedForward; 2] {
        &self.blocks[i].gate
    }

    pub fn attention(&self, i: usize) -> &[Attention; 2] {
        &self.blocks[i].attention
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        save_model(path, "interactive", &self.config, &self.dims, self.scaling.as_ref(), &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DtModel, ModelError> {
        let (config, dims, scaling, loaded) = load_model(path, "interactive")?;
        let mut model = DtModel::new(config, dims, 0)?;
        adopt(&mut model.params, loaded)?;
        model.set_target_scaling(scaling)?;
        Ok(model)
    }
}

impl Estimator for DtModel {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn dims(&self) -> &InputDims {
        &self.dims
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, z: &Tensor, stats: &mut ForwardStats) -> Result<Var, TensorError> {
        check_input(z, self.config.window, self.dims.channels())?;
        let z1 = tape.constant(columns(z, &self.dims.power));
        let z2 = tape.constant(columns(z, &self.dims.voltage));
        let mut h1 = project_branch(tape, store, z1, &self.input[0], self.encoding.as_ref())?;
        let mut h2 = project_branch(tape, store, z2, &self.input[1], self.encoding.as_ref())?;
        for block in &self.blocks {
            let a1 = gqa_attention(tape, store, h1, &block.attention[0], self.config.heads, stats)?;
            let a2 = gqa_attention(tape, store, h2, &block.attention[1], self.config.heads, stats)?;
            (h1, h2) = cross_gate(tape, store, a1, a2, &block.gate[0], &block.gate[1])?;
        }
        let o1 = self.output[0].apply(tape, store, h1)?;
        let o2 = self.output[1].apply(tape, store, h2)?;
        let fused = tape.concat_lastdim(&[o1, o2])?;
        head_output(tape, store, &self.head, self.scaling.as_ref(), fused)
    }

    fn target_scaling(&self) -> Option<&TargetScaling> {
        self.scaling.as_ref()
    }

    fn set_target_scaling(&mut self, scaling: Option<TargetScaling>) -> Result<(), ModelError> {
        if let Some(s) = &scaling {
            s.check(self.dims.state_dim)?;
        }
        self.scaling = scaling;
        Ok(())
    }
}

/// Ablation: all readings in one branch, the same attention stack without
/// cross gating, and the same output head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatModel {
    config: ModelConfig,
    dims: InputDims,
    params: ParamStore,
    input: Linear,
    blocks: Vec<Attention>,
    output: Linear,
    head: FeedForward,
    encoding: Option<Tensor>,
    scaling: Option<TargetScaling>,
}

impl ConcatModel {
    pub fn new(config: ModelConfig, dims: InputDims, seed: u64) -> Result<ConcatModel, ModelError> {
        config.validate()?;
        dims.validate()?;
        let (d, ff) = (config.d_model, config.d_ff);
        let mut r = rng::rng(seed);
        let mut p = ParamStore::new();
        let input = Linear::new(&mut p, "concat.proj", dims.channels(), d, &mut r, seed);
        let blocks = (0..config.blocks)
            .map(|i| Attention::new(&mut p, &format!("block{i}.attn"), d, config.heads, config.kv_groups, &mut r, seed))
            .collect();
        let output = Linear::new(&mut p, "concat.out", d, d, &mut r, seed);
        let head = FeedForward::new(&mut p, "head", (d, ff, dims.state_dim), &mut r, seed);
        let encoding = config.positional_encoding.then(|| positional_encoding(config.window, d));
        Ok(ConcatModel {
            config,
            dims,
            params: p,
            input,
            blocks,
            output,
            head,
            encoding,
            scaling: None,
        })
    }

    pub fn for_dataset(config: ModelConfig, data: &Dataset, seed: u64) -> Result<ConcatModel, ModelError> {
        let mut model = ConcatModel::new(config, InputDims::from_dataset(data), seed)?;
        model.set_target_scaling(Some(TargetScaling::from_dataset(data)))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        save_model(path, "concat", &self.config, &self.dims, self.scaling.as_ref(), &self.params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ConcatModel, ModelError> {
        let (config, dims, scaling, loaded) = load_model(path, "concat")?;
        let mut model = ConcatModel::new(config, dims, 0)?;
        adopt(&mut model.params, loaded)?;
        model.set_target_scaling(scaling)?;
        Ok(model)
    }
}

impl Estimator for ConcatModel {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn dims(&self) -> &InputDims {
        &self.dims
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, z: &Tensor, stats: &mut ForwardStats) -> Result<Var, TensorError> {
        check_input(z, self.config.window, self.dims.channels())?;
        let z = tape.constant(z.clone());
        let mut h = project_branch(tape, store, z, &self.input, self.encoding.as_ref())?;
        for attn in &self.blocks {
            h = gqa_attention(tape, store, h, attn, self.config.heads, stats)?;
        }
        let o = self.output.apply(tape, store, h)?;
        head_output(tape, store, &self.head, self.scaling.as_ref(), o)
    }

    fn target_scaling(&self) -> Option<&TargetScaling> {
        self.scaling.as_ref()
    }

    fn set_target_scaling(&mut self, scaling: Option<TargetScaling>) -> Result<(), ModelError> {
        if let Some(s) = &scaling {
            s.check(self.dims.state_dim)?;
        }
        self.scaling = scaling;
        Ok(())
    }
}

fn save_model(
    path: impl AsRef<Path>,
    kind: &str,
    config: &ModelConfig,
    dims: &InputDims,
    scaling: Option<&TargetScaling>,
    params: &ParamStore,
) -> Result<(), ModelError> {
    let json = |r: serde_json::Result<String>| r.map_err(|e| ModelError::Checkpoint(e.to_string()));
    let meta = vec![
        ("kind".to_string(), kind.to_string()),
        ("config".to_string(), json(serde_json::to_string(config))?),
        ("dims".to_string(), json(serde_json::to_string(dims))?),
        ("scaling".to_string(), json(serde_json::to_string(&scaling))?),
    ];
    save_checkpoint(path, params, &meta)?;
    Ok(())
}

type Loaded = (ModelConfig, InputDims, Option<TargetScaling>, ParamStore);

fn load_model(path: impl AsRef<Path>, kind: &str) -> Result<Loaded, ModelError> {
    let (store, meta) = load_checkpoint(path)?;
    let get = |key: &str| {
        meta.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| ModelError::Checkpoint(format!("missing `{key}` entry")))
    };
    let found = get("kind")?;
    if found != kind {
        return Err(ModelError::Checkpoint(format!("expected a `{kind}` model, found `{found}`")));
    }
    let config: ModelConfig =
        serde_json::from_str(get("config")?).map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
    let dims: InputDims = serde_json::from_str(get("dims")?).map_err(|e| ModelError::Checkpoint(format!("dims: {e}")))?;
    let scaling: Option<TargetScaling> =
        serde_json::from_str(get("scaling")?).map_err(|e| ModelError::Checkpoint(format!("scaling: {e}")))?;
    Ok((config, dims, scaling, store))
}

/// Copies loaded values into a freshly built store, matching by name.
fn adopt(target: &mut ParamStore, loaded: ParamStore) -> Result<(), ModelError> {
    if loaded.len() != target.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} tensors, found {}",
            target.len(),
            loaded.len()
        )));
    }
    for p in loaded.iter() {
        let id = target
            .id(&p.name)
            .map_err(|_| ModelError::Checkpoint(format!("unexpected tensor `{}`", p.name)))?;
        target.set(id, p.value.clone())?;
    }
    Ok(())
}
