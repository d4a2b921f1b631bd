//! Building blocks of the estimator, expressed as ops on a [`Tape`].

use crate::rng::Rng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Counters collected during a forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardStats {
    /// Number of key/value projection pairs evaluated.
    pub kv_projections: usize,
    pub attention_calls: usize,
}

/// Affine map `x W + b`, `W` stored as `[in, out]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng, seed: u64) -> Linear {
        Linear {
            w: store.uniform(format!("{name}.w"), &[fan_in, fan_out], rng, seed),
            b: store.zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.affine(x, w, b)
    }
}

/// Two-layer perceptron with a ReLU hidden layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedForward {
    pub hidden: Linear,
    pub out: Linear,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: (usize, usize, usize),
        rng: &mut Rng,
        seed: u64,
    ) -> FeedForward {
        FeedForward {
            hidden: Linear::new(store, &format!("{name}.hidden"), dims.0, dims.1, rng, seed),
            out: Linear::new(store, &format!("{name}.out"), dims.1, dims.2, rng, seed),
        }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var, TensorError> {
        let h = self.hidden.apply(tape, store, x)?;
        let h = tape.relu(h)?;
        self.out.apply(tape, store, h)
    }
}

/// Grouped-query attention weights: one query projection split into `H`
/// heads, `G` key/value projections of width `d/H`, and an output map.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub out: Linear,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, heads: usize, groups: usize, rng: &mut Rng, seed: u64) -> Attention {
        let dk = d / heads;
        let wq = store.uniform(format!("{name}.wq"), &[d, d], rng, seed);
        let wk = (0..groups)
            .map(|g| store.uniform(format!("{name}.wk{g}"), &[d, dk], rng, seed))
            .collect();
        let wv = (0..groups)
            .map(|g| store.uniform(format!("{name}.wv{g}"), &[d, dk], rng, seed))
            .collect();
        let out = Linear::new(store, &format!("{name}.wo"), d, d, rng, seed);
        Attention { wq, wk, wv, out }
    }

    pub fn groups(&self) -> usize {
        self.wk.len()
    }
}

fn shape_error(op: &'static str, lhs: &[usize], rhs: Vec<usize>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs,
    }
}

/// `softmax(q kᵀ / sqrt(d_k)) v` for one head.
fn head_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var, TensorError> {
    let dk = tape.value(q).cols() as f64;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / dk.sqrt())?;
    let weights = tape.row_softmax(scores)?;
    tape.matmul(weights, v)
}

/// Grouped-query self-attention over the time axis of `x: [T, d]`, with a
/// residual connection. Each of the `G` key/value projections is evaluated
/// once and shared by `H/G` consecutive query heads.
pub fn gqa_attention(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    attn: &Attention,
    heads: usize,
    stats: &mut ForwardStats,
) -> Result<Var, TensorError> {
    let d = tape.value(x).cols();
    let groups = attn.groups();
    if heads == 0 || groups == 0 || !heads.is_multiple_of(groups) || !d.is_multiple_of(heads) {
        return Err(shape_error("gqa_attention", tape.value(x).shape(), vec![heads, groups]));
    }
    let dk = d / heads;
    let per_group = heads / groups;
    stats.attention_calls += 1;

    let wq = tape.param(store, attn.wq);
    let q_all = tape.matmul(x, wq)?;
    let mut outputs = Vec::with_capacity(heads);
    for g in 0..groups {
        let wk = tape.param(store, attn.wk[g]);
        let wv = tape.param(store, attn.wv[g]);
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        stats.kv_projections += 1;
        for h in g * per_group..(g + 1) * per_group {
            let q = tape.slice(q_all, h * dk, (h + 1) * dk)?;
            outputs.push(head_attention(tape, q, k, v)?);
        }
    }
    let merged = tape.concat_lastdim(&outputs)?;
    let projected = attn.out.apply(tape, store, merged)?;
    tape.add(projected, x)
}

/// Standard multi-head attention with one key/value projection per head,
/// written independently of the grouped path. Requires `G == H`.
pub fn multi_head_attention(
    tape: &mut Tape,
    store: &ParamStore,
    x: Var,
    attn: &Attention,
    stats: &mut ForwardStats,
) -> Result<Var, TensorError> {
    let heads = attn.groups();
    let d = tape.value(x).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(shape_error("multi_head_attention", tape.value(x).shape(), vec![heads]));
    }
    let dk = d / heads;
    stats.attention_calls += 1;
    let wq = tape.param(store, attn.wq);
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let wq_h = tape.slice(wq, h * dk, (h + 1) * dk)?;
        let q = tape.matmul(x, wq_h)?;
        let wk = tape.param(store, attn.wk[h]);
        let wv = tape.param(store, attn.wv[h]);
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        stats.kv_projections += 1;
        outputs.push(head_attention(tape, q, k, v)?);
    }
    let merged = tape.concat_lastdim(&outputs)?;
    let projected = attn.out.apply(tape, store, merged)?;
    tape.add(projected, x)
}

/// Gate network `sigmoid(FFN(a))` producing elementwise weights in (0, 1).
pub fn gate_values(tape: &mut Tape, store: &ParamStore, a: Var, gate: &FeedForward) -> Result<Var, TensorError> {
    let logits = gate.apply(tape, store, a)?;
    tape.sigmoid(logits)
}

/// Cross-interaction fusion of the two branches:
///
/// `H1 = g2(a2) ⊙ a2 + a1`, `H2 = g1(a1) ⊙ a1 + a2`,
///
/// where `gate1` reads branch-1 features and `gate2` branch-2 features.
pub fn cross_gate(
    tape: &mut Tape,
    store: &ParamStore,
    a1: Var,
    a2: Var,
    gate1: &FeedForward,
    gate2: &FeedForward,
) -> Result<(Var, Var), TensorError> {
    if tape.value(a1).shape() != tape.value(a2).shape() {
        return Err(shape_error("cross_gate", tape.value(a1).shape(), tape.value(a2).shape().to_vec()));
    }
    let g2 = gate_values(tape, store, a2, gate2)?;
    let g1 = gate_values(tape, store, a1, gate1)?;
    let m2 = tape.mul(g2, a2)?;
    let m1 = tape.mul(g1, a1)?;
    let h1 = tape.add(m2, a1)?;
    let h2 = tape.add(m1, a2)?;
    Ok((h1, h2))
}

/// Sinusoidal position table `[T, d]`: even columns `sin(t / 10000^(2i/d))`,
/// odd columns the matching cosine.
pub fn positional_encoding(steps: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; steps * d];
    for t in 0..steps {
        for c in 0..d {
            let i = (c / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * i / d as f64);
            data[t * d + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(steps, d, data).expect("table shape")
}

/// Parallel linear projection of one branch, `z W + b`, followed by the
/// optional positional table.
pub fn project_branch(
    tape: &mut Tape,
    store: &ParamStore,
    z: Var,
    proj: &Linear,
    encoding: Option<&Tensor>,
) -> Result<Var, TensorError> {
    let width = store.value(proj.w).rows();
    if tape.value(z).shape().len() != 2 || tape.value(z).cols() != width {
        return Err(shape_error("project_branch", tape.value(z).shape(), store.value(proj.w).shape().to_vec()));
    }
    let latent = proj.apply(tape, store, z)?;
    match encoding {
        Some(pe) => {
            let pe = tape.constant(pe.clone());
            tape.add(latent, pe)
        }
        None => Ok(latent),
    }
}
