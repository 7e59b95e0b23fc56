//! Vision-transformer position regressor.
//!
//! The ADP image is cut into fixed-size patches (zero-padded on the
//! bottom/right when the size does not divide), each patch is linearly
//! projected and offset by a learned position embedding, and the token
//! sequence runs through a stack of post-norm encoder blocks:
//!
//! ```text
//! y = LayerNorm(x + MultiHeadAttention(x))
//! z = LayerNorm(y + FeedForward(y))
//! ```
//!
//! Tokens are mean-pooled and a small MLP head regresses the two
//! coordinates.

use serde::{Deserialize, Serialize};

use crate::adp::AdpMatrix;
use crate::error::{Error, Result};
use crate::nn::{gaussian, glorot_normal, seeded_rng, Model, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Architecture hyperparameters of the transformer regressor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VitConfig {
    /// Side length of the square input patches.
    pub patch_size: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Token width; must be divisible by `n_heads`.
    pub embed_dim: usize,
    /// Hidden sizes of the regression head before the final 2-wide linear.
    pub mlp_head_sizes: Vec<usize>,
    /// In-block feed-forward width as a multiple of `embed_dim`.
    pub encoder_ffn_mult: usize,
    /// Expected ADP height/width before padding.
    pub input_hw: (usize, usize),
}

impl Default for VitConfig {
    fn default() -> Self {
        Self {
            patch_size: 6,
            n_heads: 4,
            n_layers: 8,
            embed_dim: 64,
            mlp_head_sizes: vec![128, 64],
            encoder_ffn_mult: 2,
            input_hw: (64, 64),
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::Config("patch_size must be >= 1".into()));
        }
        if self.n_heads == 0 || self.n_layers == 0 || self.embed_dim == 0 {
            return Err(Error::Config("heads, layers, and embed_dim must be >= 1".into()));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 {
            return Err(Error::Config("input_hw must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Input size after zero-padding to a multiple of the patch size.
    pub fn padded_hw(&self) -> (usize, usize) {
        let p = self.patch_size;
        (self.input_hw.0.div_ceil(p) * p, self.input_hw.1.div_ceil(p) * p)
    }

    /// Number of patch tokens.
    pub fn n_patches(&self) -> usize {
        let (h, w) = self.padded_hw();
        (h / self.patch_size) * (w / self.patch_size)
    }

    /// Closed-form learnable parameter count.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let p2 = self.patch_size * self.patch_size;
        let n = self.n_patches();
        let f = self.encoder_ffn_mult * d;
        let per_layer = 3 * d * d          // per-head q/k/v stacks
            + d * d + d                     // attention output projection
            + 2 * d                         // ln1
            + d * f + f + f * d + d         // feed-forward
            + 2 * d; // ln2
        let mut head = 0;
        let mut prev = d;
        for &h in &self.mlp_head_sizes {
            head += prev * h + h;
            prev = h;
        }
        head += prev * 2 + 2;
        p2 * d + d + n * d + self.n_layers * per_layer + head
    }
}

// ---------------------------------------------------------------------------
// Parameter layout
// ---------------------------------------------------------------------------

struct HeadIdx {
    wq: usize,
    wk: usize,
    wv: usize,
}

struct LayerIdx {
    heads: Vec<HeadIdx>,
    wo: usize,
    bo: usize,
    ln1_gamma: usize,
    ln1_beta: usize,
    ffn_w1: usize,
    ffn_b1: usize,
    ffn_w2: usize,
    ffn_b2: usize,
    ln2_gamma: usize,
    ln2_beta: usize,
}

struct Layout {
    patch_w: usize,
    patch_b: usize,
    pos_embed: usize,
    layers: Vec<LayerIdx>,
    // (weight, bias) per head-MLP linear, final one maps to 2 outputs
    head: Vec<(usize, usize)>,
}

fn build_params(config: &VitConfig, seed: u64) -> (ParamSet, Layout) {
    let mut rng = seeded_rng(seed);
    let mut params = ParamSet::new();
    let d = config.embed_dim;
    let dh = config.head_dim();
    let p2 = config.patch_size * config.patch_size;
    let f = config.encoder_ffn_mult * d;
    let n = config.n_patches();

    let patch_w = params.push("patch_proj.w", glorot_normal(p2, d, &mut rng), true);
    let patch_b = params.push("patch_proj.b", Tensor::zeros(vec![d]), false);
    // Position embeddings start as small Gaussian noise rather than zeros;
    // an all-zero start leaves every patch slot indistinguishable and the
    // angle/delay geometry takes far longer to emerge.
    let pos_embed = params.push("pos_embed", gaussian(n, d, 0.02, &mut rng), false);

    let mut layers = Vec::with_capacity(config.n_layers);
    for l in 0..config.n_layers {
        let mut heads = Vec::with_capacity(config.n_heads);
        for h in 0..config.n_heads {
            let wq = params.push(format!("layer{l}.head{h}.wq"), glorot_normal(d, dh, &mut rng), true);
            let wk = params.push(format!("layer{l}.head{h}.wk"), glorot_normal(d, dh, &mut rng), true);
            let wv = params.push(format!("layer{l}.head{h}.wv"), glorot_normal(d, dh, &mut rng), true);
            heads.push(HeadIdx { wq, wk, wv });
        }
        let wo = params.push(format!("layer{l}.attn_out.w"), glorot_normal(d, d, &mut rng), true);
        let bo = params.push(format!("layer{l}.attn_out.b"), Tensor::zeros(vec![d]), false);
        let ln1_gamma = params.push(format!("layer{l}.ln1.gamma"), Tensor::full(vec![d], 1.0), true);
        let ln1_beta = params.push(format!("layer{l}.ln1.beta"), Tensor::zeros(vec![d]), false);
        let ffn_w1 = params.push(format!("layer{l}.ffn.w1"), glorot_normal(d, f, &mut rng), true);
        let ffn_b1 = params.push(format!("layer{l}.ffn.b1"), Tensor::zeros(vec![f]), false);
        let ffn_w2 = params.push(format!("layer{l}.ffn.w2"), glorot_normal(f, d, &mut rng), true);
        let ffn_b2 = params.push(format!("layer{l}.ffn.b2"), Tensor::zeros(vec![d]), false);
        let ln2_gamma = params.push(format!("layer{l}.ln2.gamma"), Tensor::full(vec![d], 1.0), true);
        let ln2_beta = params.push(format!("layer{l}.ln2.beta"), Tensor::zeros(vec![d]), false);
        layers.push(LayerIdx {
            heads,
            wo,
            bo,
            ln1_gamma,
            ln1_beta,
            ffn_w1,
            ffn_b1,
            ffn_w2,
            ffn_b2,
            ln2_gamma,
            ln2_beta,
        });
    }

    let mut head = Vec::new();
    let mut prev = d;
    for (i, &hsize) in config.mlp_head_sizes.iter().enumerate() {
        let w = params.push(format!("head.{i}.w"), glorot_normal(prev, hsize, &mut rng), true);
        let b = params.push(format!("head.{i}.b"), Tensor::zeros(vec![hsize]), false);
        head.push((w, b));
        prev = hsize;
    }
    let w = params.push("head.out.w", glorot_normal(prev, 2, &mut rng), true);
    let b = params.push("head.out.b", Tensor::zeros(vec![2]), false);
    head.push((w, b));

    (
        params,
        Layout {
            patch_w,
            patch_b,
            pos_embed,
            layers,
            head,
        },
    )
}

// ---------------------------------------------------------------------------
// Patching
// ---------------------------------------------------------------------------

/// Cuts a matrix into non-overlapping `patch_size`-square patches after
/// zero-padding on the bottom/right. Patches are ordered row-major over
/// the patch grid; each patch is flattened row-major into one token row.
pub fn patchify(values: &Tensor, patch_size: usize) -> Tensor {
    let (h, w) = (values.rows(), values.cols());
    let p = patch_size;
    let ph = h.div_ceil(p) * p;
    let pw = w.div_ceil(p) * p;
    let grid_h = ph / p;
    let grid_w = pw / p;
    let n = grid_h * grid_w;
    let mut out = vec![0.0; n * p * p];
    for gr in 0..grid_h {
        for gc in 0..grid_w {
            let token = gr * grid_w + gc;
            for r in 0..p {
                for c in 0..p {
                    let src_r = gr * p + r;
                    let src_c = gc * p + c;
                    let v = if src_r < h && src_c < w {
                        values.at(src_r, src_c)
                    } else {
                        0.0
                    };
                    out[token * p * p + r * p + c] = v;
                }
            }
        }
    }
    Tensor::matrix(n, p * p, out).expect("patchify shape")
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// The transformer regressor: configuration, parameters, and layout.
pub struct Vit {
    config: VitConfig,
    params: ParamSet,
    layout: Layout,
}

/// Forward-pass handles kept for inspection: the prediction plus every
/// attention matrix (layer-major, head-minor).
pub struct VitForward {
    pub output: Var,
    pub attention: Vec<Var>,
}

impl Vit {
    pub fn new(config: VitConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (params, layout) = build_params(&config, seed);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &VitConfig {
        &self.config
    }

    /// Rebuilds a model around an existing parameter set (checkpoint load).
    /// Names and shapes must match the layout the config implies; decay
    /// flags are re-derived from the layout rather than trusted.
    pub fn from_params(config: VitConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let (mut fresh, layout) = build_params(&config, 0);
        if fresh.len() != params.len() {
            return Err(Error::Contract(format!(
                "checkpoint has {} parameters, config needs {}",
                params.len(),
                fresh.len()
            )));
        }
        for (slot, loaded) in fresh.entries_mut().iter_mut().zip(params.entries()) {
            if slot.name != loaded.name || slot.value.shape() != loaded.value.shape() {
                return Err(Error::Contract(format!(
                    "checkpoint parameter {} {:?} does not match expected {} {:?}",
                    loaded.name,
                    loaded.value.shape(),
                    slot.name,
                    slot.value.shape()
                )));
            }
            slot.value = loaded.value.clone();
        }
        Ok(Self {
            config,
            params: fresh,
            layout,
        })
    }

    /// Patch tokens, projected and offset by the position embeddings.
    fn embed(&self, tape: &mut Tape, pv: &[Var], tokens: &Tensor) -> Result<Var> {
        let n = self.config.n_patches();
        if tokens.rows() != n {
            return Err(Error::Contract(format!(
                "sequence length {} does not match the {} position slots",
                tokens.rows(),
                n
            )));
        }
        let x = tape.leaf(tokens);
        let proj = tape.matmul(x, pv[self.layout.patch_w])?;
        let proj = tape.add_row_bias(proj, pv[self.layout.patch_b])?;
        tape.add(proj, pv[self.layout.pos_embed])
    }

    /// Multi-head self-attention. Returns the projected output and the
    /// per-head attention matrices.
    fn attention(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        layer: &LayerIdx,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(layer.heads.len());
        let mut attns = Vec::with_capacity(layer.heads.len());
        for head in &layer.heads {
            let q = tape.matmul(x, pv[head.wq])?;
            let k = tape.matmul(x, pv[head.wk])?;
            let v = tape.matmul(x, pv[head.wv])?;
            let scores = tape.matmul_nt(q, k)?;
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            attns.push(attn);
            outs.push(tape.matmul(attn, v)?);
        }
        let concat = tape.concat_cols(&outs)?;
        let proj = tape.matmul(concat, pv[layer.wo])?;
        let proj = tape.add_row_bias(proj, pv[layer.bo])?;
        Ok((proj, attns))
    }

    /// Post-norm encoder block.
    fn encoder_block(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        layer: &LayerIdx,
        x: Var,
    ) -> Result<(Var, Vec<Var>)> {
        let (attn_out, attns) = self.attention(tape, pv, layer, x)?;
        let res1 = tape.add(x, attn_out)?;
        let y = tape.layer_norm(res1, pv[layer.ln1_gamma], pv[layer.ln1_beta], LAYER_NORM_EPS)?;

        let h = tape.matmul(y, pv[layer.ffn_w1])?;
        let h = tape.add_row_bias(h, pv[layer.ffn_b1])?;
        let h = tape.gelu(h);
        let h = tape.matmul(h, pv[layer.ffn_w2])?;
        let h = tape.add_row_bias(h, pv[layer.ffn_b2])?;

        let res2 = tape.add(y, h)?;
        let z = tape.layer_norm(res2, pv[layer.ln2_gamma], pv[layer.ln2_beta], LAYER_NORM_EPS)?;
        Ok((z, attns))
    }

    /// Full forward pass keeping the attention handles.
    pub fn forward_traced(
        &self,
        tape: &mut Tape,
        param_vars: &[Var],
        adp: &AdpMatrix,
    ) -> Result<VitForward> {
        if (adp.rows(), adp.cols()) != self.config.input_hw {
            return Err(Error::Contract(format!(
                "ADP is {}x{} but the model expects {}x{}",
                adp.rows(),
                adp.cols(),
                self.config.input_hw.0,
                self.config.input_hw.1
            )));
        }
        let tokens = patchify(adp.values(), self.config.patch_size);
        let mut x = self.embed(tape, param_vars, &tokens)?;
        let mut attention = Vec::new();
        for layer in &self.layout.layers {
            let (z, attns) = self.encoder_block(tape, param_vars, layer, x)?;
            x = z;
            attention.extend(attns);
        }
        let pooled = tape.mean_rows(x);
        let mut h = pooled;
        let last = self.layout.head.len() - 1;
        for (i, &(w, b)) in self.layout.head.iter().enumerate() {
            let z = tape.matmul(h, param_vars[w])?;
            h = tape.add_row_bias(z, param_vars[b])?;
            if i < last {
                h = tape.gelu(h);
            }
        }
        Ok(VitForward {
            output: h,
            attention,
        })
    }
}

impl Model for Vit {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn forward_on(&self, tape: &mut Tape, param_vars: &[Var], adp: &AdpMatrix) -> Result<Var> {
        Ok(self.forward_traced(tape, param_vars, adp)?.output)
    }
}
