//! Shared model plumbing: named parameter sets, initialization, and the
//! trait the training loop drives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adp::AdpMatrix;
use crate::error::Result;
use crate::tensor::{Tape, Tensor, Var};

/// One learnable tensor. `decay` marks whether weight decay applies;
/// biases and position embeddings are exempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub decay: bool,
}

/// Ordered collection of named parameters. Declaration order is the
/// checkpoint serialization order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> usize {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            decay,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, idx: usize) -> &ParamEntry {
        &self.entries[idx]
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.value.all_finite())
    }

    /// Records every parameter as a tape leaf, in declaration order.
    pub fn lease(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|e| tape.leaf(&e.value)).collect()
    }
}

/// Zero-mean Gaussian tensor, Box-Muller sampled.
pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    while data.len() < rows * cols {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        data.push(r * theta.cos() * std);
        if data.len() < rows * cols {
            data.push(r * theta.sin() * std);
        }
    }
    Tensor::matrix(rows, cols, data).expect("init shape")
}

/// Gaussian init with variance 2/(fan_in + fan_out).
pub fn glorot_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    gaussian(rows, cols, (2.0 / (rows + cols) as f64).sqrt(), rng)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A model that regresses a 2-vector from an ADP on a gradient tape.
pub trait Model {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Runs one sample through the model. `param_vars[i]` is the leased
    /// leaf for `params().entries()[i]`. Returns a `[1 x 2]` prediction in
    /// normalized label space.
    fn forward_on(&self, tape: &mut Tape, param_vars: &[Var], adp: &AdpMatrix) -> Result<Var>;

    /// Convenience inference without gradient bookkeeping kept around.
    fn predict(&self, adp: &AdpMatrix) -> Result<(f64, f64)> {
        let mut tape = Tape::new();
        let vars = self.params().lease(&mut tape);
        let out = self.forward_on(&mut tape, &vars, adp)?;
        let t = tape.value(out);
        Ok((t.data()[0], t.data()[1]))
    }
}

/// Fully connected baseline: flattened ADP -> 128 -> 64 -> 2 with GELU
/// between the hidden layers.
#[derive(Debug, Clone)]
pub struct Mlp {
    input_dim: usize,
    dims: Vec<usize>,
    params: ParamSet,
    // (weight_idx, bias_idx) per linear layer
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    pub fn new(input_hw: (usize, usize), hidden: &[usize], seed: u64) -> Self {
        let input_dim = input_hw.0 * input_hw.1;
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(2);
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            let w = params.push(
                format!("mlp.{i}.w"),
                glorot_normal(pair[0], pair[1], &mut rng),
                true,
            );
            let b = params.push(format!("mlp.{i}.b"), Tensor::zeros(vec![pair[1]]), false);
            layers.push((w, b));
        }
        Self {
            input_dim,
            dims,
            params,
            layers,
        }
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }
}

impl Model for Mlp {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward_on(&self, tape: &mut Tape, param_vars: &[Var], adp: &AdpMatrix) -> Result<Var> {
        let flat = Tensor::matrix(1, self.input_dim, adp.values().data().to_vec())?;
        let mut x = tape.leaf(&flat);
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(x, param_vars[w])?;
            x = tape.add_row_bias(z, param_vars[b])?;
            if i < last {
                x = tape.gelu(x);
            }
        }
        Ok(x)
    }
}
