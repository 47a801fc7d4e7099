//! The network: patch-embedded 1D ViT over multi-lead ECG, projection heads
//! into a shared latent space, and a query-decoding fusion stack that emits
//! one logit per (sample, query) pair.

use std::collections::HashMap;

use crate::nn::ops::{self, AttentionVars};
use crate::nn::{Element, Parameter, SumOrder, Tape, Tensor, Var};
use crate::rng::{RngFactory, StreamRng};

use super::config::ModelConfig;
use super::{ModelError, Result};

pub const LN_EPS: f64 = 1e-5;

/// Forward-pass mode. Training threads the two noise streams through every
/// stochastic site; eval has none.
pub enum Mode<'r> {
    Eval,
    Train { dropout: &'r mut StreamRng, droppath: &'r mut StreamRng },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Leaf variables for every parameter on one tape, aligned with the model's
/// parameter order.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

enum ParamKind {
    /// Drawn from N(0, 0.02^2) via the init stream.
    Weight,
    /// Zero-initialized (biases, layer-norm shifts).
    Zero,
    /// One-initialized (layer-norm gains).
    One,
}

/// Walk every parameter in registration order. This single definition fixes
/// parameter names, shapes, init draws, and checkpoint layout.
fn register_params(config: &ModelConfig, mut add: impl FnMut(String, Vec<usize>, ParamKind)) {
    use ParamKind::*;
    let (d, dh, dl) = (config.vit_width, config.hidden, config.latent);
    let n = config.patches_per_lead();

    add("vit.patch.weight".into(), vec![config.patch_len, d], Weight);
    add("vit.lead_embed".into(), vec![config.leads, d], Weight);
    add("vit.pos_embed".into(), vec![n, d], Weight);
    let attention = |add: &mut dyn FnMut(String, Vec<usize>, ParamKind), prefix: String, q_dim: usize, kv_dim: usize, width: usize| {
        add(format!("{prefix}.wq"), vec![q_dim, width], Weight);
        add(format!("{prefix}.bq"), vec![width], Zero);
        add(format!("{prefix}.wk"), vec![kv_dim, width], Weight);
        add(format!("{prefix}.bk"), vec![width], Zero);
        add(format!("{prefix}.wv"), vec![kv_dim, width], Weight);
        add(format!("{prefix}.bv"), vec![width], Zero);
        add(format!("{prefix}.wo"), vec![width, width], Weight);
        add(format!("{prefix}.bo"), vec![width], Zero);
    };
    let norm = |add: &mut dyn FnMut(String, Vec<usize>, ParamKind), prefix: String, width: usize| {
        add(format!("{prefix}.gamma"), vec![width], One);
        add(format!("{prefix}.beta"), vec![width], Zero);
    };
    for k in 0..config.vit_depth {
        norm(&mut add, format!("vit.block{k}.ln1"), d);
        attention(&mut add, format!("vit.block{k}.attn"), d, d, d);
        norm(&mut add, format!("vit.block{k}.ln2"), d);
        add(format!("vit.block{k}.ff.w1"), vec![d, 4 * d], Weight);
        add(format!("vit.block{k}.ff.b1"), vec![4 * d], Zero);
        add(format!("vit.block{k}.ff.w2"), vec![4 * d, d], Weight);
        add(format!("vit.block{k}.ff.b2"), vec![d], Zero);
    }
    norm(&mut add, "vit.final_norm".into(), d);

    add("ecg_head.w1".into(), vec![d, dh], Weight);
    add("ecg_head.b1".into(), vec![dh], Zero);
    add("ecg_head.w2".into(), vec![dh, dl], Weight);
    add("ecg_head.b2".into(), vec![dl], Zero);

    add("query_head.w1".into(), vec![config.embed_dim, dh], Weight);
    add("query_head.b1".into(), vec![dh], Zero);
    add("query_head.w2".into(), vec![dh, dl], Weight);
    add("query_head.b2".into(), vec![dl], Zero);

    norm(&mut add, "cfn.query_norm".into(), dl);
    norm(&mut add, "cfn.memory_norm".into(), dl);
    for k in 0..config.cfn_depth {
        norm(&mut add, format!("cfn.block{k}.ln1"), dl);
        attention(&mut add, format!("cfn.block{k}.self_attn"), dl, dl, dl);
        norm(&mut add, format!("cfn.block{k}.ln2"), dl);
        attention(&mut add, format!("cfn.block{k}.cross_attn"), dl, dl, dl);
        norm(&mut add, format!("cfn.block{k}.ln3"), dl);
        add(format!("cfn.block{k}.ff.w1"), vec![dl, 4 * dl], Weight);
        add(format!("cfn.block{k}.ff.b1"), vec![4 * dl], Zero);
        add(format!("cfn.block{k}.ff.w2"), vec![4 * dl, dl], Weight);
        add(format!("cfn.block{k}.ff.b2"), vec![dl], Zero);
    }

    add("head.w1".into(), vec![dl, dl / 2], Weight);
    add("head.b1".into(), vec![dl / 2], Zero);
    add("head.w2".into(), vec![dl / 2, 1], Weight);
    add("head.b2".into(), vec![1], Zero);
}

/// The full network, generic over element type (f32 for compute, f64 for
/// gradient verification).
#[derive(Debug)]
pub struct SupremeModel<E: Element> {
    config: ModelConfig,
    params: Vec<Parameter<E>>,
    index: HashMap<String, usize>,
}

impl<E: Element> SupremeModel<E> {
    /// Initialize deterministically from a seed: weights and embedding
    /// tables N(0, 0.02^2), biases and norm shifts zero, norm gains one.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = RngFactory::new(seed).stream("init");
        Self::build(config, |shape, kind| match kind {
            ParamKind::Weight => {
                let std = crate::nn::el::<E>(0.02);
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| E::standard_normal(&mut rng) * std)
                    .collect();
                Tensor::from_vec(&shape, data)
            }
            ParamKind::Zero => Tensor::zeros(&shape),
            ParamKind::One => Tensor::full(&shape, E::one()),
        })
    }

    /// All-zero parameters (gains included); used as the checkpoint-load
    /// skeleton where every value is overwritten.
    pub(super) fn zeroed(config: ModelConfig) -> Result<Self> {
        Self::build(config, |shape, _| Tensor::zeros(&shape))
    }

    fn build(
        config: ModelConfig,
        mut init: impl FnMut(Vec<usize>, ParamKind) -> Tensor<E>,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        let mut index = HashMap::new();
        register_params(&config, |name, shape, kind| {
            let value = init(shape, kind);
            index.insert(name.clone(), params.len());
            params.push(Parameter::new(name, value));
        });
        Ok(SupremeModel { config, params, index })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter<E>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<E>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter<E>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Parameter<E>> {
        self.index.get(name).copied().map(move |i| &mut self.params[i])
    }

    /// Register every parameter as a tape leaf, in parameter order.
    pub fn bind(&self, tape: &mut Tape<E>) -> Binding {
        Binding { vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect() }
    }

    /// Add each parameter's tape gradient into its accumulator.
    pub fn accumulate_grads(&mut self, binding: &Binding, grads: &crate::nn::Gradients<E>) {
        for (param, &var) in self.params.iter_mut().zip(&binding.vars) {
            if let Some(g) = grads.get(var) {
                let updated = param.grad.zip(g, |a, b| a + b);
                param.grad = updated;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    fn v(&self, binding: &Binding, name: &str) -> Var {
        binding.vars[*self.index.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    fn attn_vars(&self, binding: &Binding, prefix: &str) -> AttentionVars {
        AttentionVars {
            wq: self.v(binding, &format!("{prefix}.wq")),
            bq: self.v(binding, &format!("{prefix}.bq")),
            wk: self.v(binding, &format!("{prefix}.wk")),
            bk: self.v(binding, &format!("{prefix}.bk")),
            wv: self.v(binding, &format!("{prefix}.wv")),
            bv: self.v(binding, &format!("{prefix}.bv")),
            wo: self.v(binding, &format!("{prefix}.wo")),
            bo: self.v(binding, &format!("{prefix}.bo")),
        }
    }

    fn maybe_dropout(&self, tape: &mut Tape<E>, x: Var, mode: &mut Mode) -> Result<Var> {
        match mode {
            Mode::Eval => Ok(x),
            Mode::Train { dropout, .. } => {
                Ok(ops::dropout(tape, x, self.config.dropout, true, dropout)?)
            }
        }
    }

    fn maybe_drop_path(&self, tape: &mut Tape<E>, x: Var, rate: f64, mode: &mut Mode) -> Result<Var> {
        match mode {
            Mode::Eval => Ok(x),
            Mode::Train { droppath, .. } => Ok(ops::drop_path(tape, x, rate, true, droppath)?),
        }
    }

    fn norm(&self, tape: &mut Tape<E>, binding: &Binding, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.v(binding, &format!("{prefix}.gamma"));
        let beta = self.v(binding, &format!("{prefix}.beta"));
        Ok(ops::layer_norm(tape, x, gamma, beta, LN_EPS)?)
    }

    /// Tokens for a signal batch: each lead is cut into patches, projected by
    /// the shared patch matrix, then enriched with its lead and position
    /// embeddings. Output [B, L*N, D], ordered lead-major then patch.
    pub fn patch_embed(&self, tape: &mut Tape<E>, binding: &Binding, x: &Tensor<E>) -> Result<Var> {
        let c = &self.config;
        let &[b, l, t] = x.shape() else {
            return Err(ModelError::Shape(format!("signal batch must be [B, L, T], got {:?}", x.shape())));
        };
        if l != c.leads || t != c.samples {
            return Err(ModelError::Shape(format!(
                "signal batch [{b}, {l}, {t}] does not match config [*, {}, {}]",
                c.leads, c.samples
            )));
        }
        let xv = tape.constant(x.clone());
        // [B, L, T] and [B, L*N, P] share the same contiguous layout.
        let patches = ops::reshape(tape, xv, &[b, c.tokens(), c.patch_len])?;
        let projected = ops::matmul(tape, patches, self.v(binding, "vit.patch.weight"))?;
        let lead = self.v(binding, "vit.lead_embed");
        let pos = self.v(binding, "vit.pos_embed");
        Ok(ops::add_lead_pos(tape, projected, lead, pos)?)
    }

    /// Encoder: tokens through pre-norm attention/feed-forward blocks with
    /// dropout and a linearly ramped stochastic depth, a final norm, then the
    /// projection head into the latent space. Output [B, L*N, D'].
    pub fn encode_ecg(
        &self,
        tape: &mut Tape<E>,
        binding: &Binding,
        x: &Tensor<E>,
        mode: &mut Mode,
    ) -> Result<Var> {
        let c = &self.config;
        let mut h = self.patch_embed(tape, binding, x)?;
        for k in 0..c.vit_depth {
            let rate = c.droppath_rate(k);
            let pre = self.norm(tape, binding, h, &format!("vit.block{k}.ln1"))?;
            let attn = self.attn_vars(binding, &format!("vit.block{k}.attn"));
            let a = ops::multi_head_attention(tape, pre, pre, pre, c.vit_heads, &attn, SumOrder::Natural)?;
            let a = self.maybe_dropout(tape, a, mode)?;
            let a = self.maybe_drop_path(tape, a, rate, mode)?;
            h = ops::add(tape, h, a)?;

            let pre = self.norm(tape, binding, h, &format!("vit.block{k}.ln2"))?;
            let f = ops::linear(
                tape,
                pre,
                self.v(binding, &format!("vit.block{k}.ff.w1")),
                self.v(binding, &format!("vit.block{k}.ff.b1")),
            )?;
            let f = ops::gelu(tape, f)?;
            let f = ops::linear(
                tape,
                f,
                self.v(binding, &format!("vit.block{k}.ff.w2")),
                self.v(binding, &format!("vit.block{k}.ff.b2")),
            )?;
            let f = self.maybe_dropout(tape, f, mode)?;
            let f = self.maybe_drop_path(tape, f, rate, mode)?;
            h = ops::add(tape, h, f)?;
        }
        let h = self.norm(tape, binding, h, "vit.final_norm")?;
        let h = self.maybe_dropout(tape, h, mode)?;
        let h = ops::linear(tape, h, self.v(binding, "ecg_head.w1"), self.v(binding, "ecg_head.b1"))?;
        let h = ops::relu(tape, h)?;
        Ok(ops::linear(tape, h, self.v(binding, "ecg_head.w2"), self.v(binding, "ecg_head.b2"))?)
    }

    /// Project text embeddings [M, embed_dim] row-independently into the
    /// latent space: dropout, linear, GELU, linear. Output [M, D'].
    pub fn project_queries(
        &self,
        tape: &mut Tape<E>,
        binding: &Binding,
        embeddings: &Tensor<E>,
        mode: &mut Mode,
    ) -> Result<Var> {
        let &[_, dim] = embeddings.shape() else {
            return Err(ModelError::Shape(format!(
                "query embeddings must be [M, embed_dim], got {:?}",
                embeddings.shape()
            )));
        };
        if dim != self.config.embed_dim {
            return Err(ModelError::Shape(format!(
                "query embedding dim {dim} does not match config embed_dim {}",
                self.config.embed_dim
            )));
        }
        let e = tape.constant(embeddings.clone());
        let h = self.maybe_dropout(tape, e, mode)?;
        let h = ops::linear(tape, h, self.v(binding, "query_head.w1"), self.v(binding, "query_head.b1"))?;
        let h = ops::gelu(tape, h)?;
        Ok(ops::linear(tape, h, self.v(binding, "query_head.w2"), self.v(binding, "query_head.b2"))?)
    }

    /// Fusion stack: normalized queries (broadcast across the batch) decode
    /// against the normalized ECG memory through `cfn_depth` blocks of query
    /// self-attention, cross-attention, and feed-forward, all pre-norm
    /// residual; the shared head maps each query position to one logit.
    /// Output [B, M].
    ///
    /// Query self-attention reduces over the query axis in canonical order,
    /// making the logit columns permute bitwise with the query rows. The
    /// stack has no stochastic sites, so `mode` does not alter the result.
    pub fn fuse(
        &self,
        tape: &mut Tape<E>,
        binding: &Binding,
        f_ecg: Var,
        f_query: Var,
        _mode: &mut Mode,
    ) -> Result<Var> {
        let c = &self.config;
        let &[b, _, d_ecg] = tape.value(f_ecg).shape() else {
            return Err(ModelError::Shape(format!(
                "fuse: ECG features must be [B, S, D'], got {:?}",
                tape.value(f_ecg).shape()
            )));
        };
        let &[m, d_query] = tape.value(f_query).shape() else {
            return Err(ModelError::Shape(format!(
                "fuse: query features must be [M, D'], got {:?}",
                tape.value(f_query).shape()
            )));
        };
        if d_ecg != c.latent || d_query != c.latent {
            return Err(ModelError::Shape(format!(
                "fuse: latent widths {d_ecg}/{d_query} do not match config latent {}",
                c.latent
            )));
        }

        let queries = self.norm(tape, binding, f_query, "cfn.query_norm")?;
        let memory = self.norm(tape, binding, f_ecg, "cfn.memory_norm")?;
        let mut q = ops::broadcast_rows(tape, queries, b)?;
        for k in 0..c.cfn_depth {
            let pre = self.norm(tape, binding, q, &format!("cfn.block{k}.ln1"))?;
            let self_attn = self.attn_vars(binding, &format!("cfn.block{k}.self_attn"));
            let a = ops::multi_head_attention(tape, pre, pre, pre, c.cfn_heads, &self_attn, SumOrder::Canonical)?;
            q = ops::add(tape, q, a)?;

            let pre = self.norm(tape, binding, q, &format!("cfn.block{k}.ln2"))?;
            let cross_attn = self.attn_vars(binding, &format!("cfn.block{k}.cross_attn"));
            let a = ops::multi_head_attention(tape, pre, memory, memory, c.cfn_heads, &cross_attn, SumOrder::Natural)?;
            q = ops::add(tape, q, a)?;

            let pre = self.norm(tape, binding, q, &format!("cfn.block{k}.ln3"))?;
            let f = ops::linear(
                tape,
                pre,
                self.v(binding, &format!("cfn.block{k}.ff.w1")),
                self.v(binding, &format!("cfn.block{k}.ff.b1")),
            )?;
            let f = ops::gelu(tape, f)?;
            let f = ops::linear(
                tape,
                f,
                self.v(binding, &format!("cfn.block{k}.ff.w2")),
                self.v(binding, &format!("cfn.block{k}.ff.b2")),
            )?;
            q = ops::add(tape, q, f)?;
        }
        let h = ops::linear(tape, q, self.v(binding, "head.w1"), self.v(binding, "head.b1"))?;
        let h = ops::gelu(tape, h)?;
        let h = ops::linear(tape, h, self.v(binding, "head.w2"), self.v(binding, "head.b2"))?;
        Ok(ops::reshape(tape, h, &[b, m])?)
    }

    /// End-to-end forward: encode the signal batch, project the (frozen,
    /// constant) query embeddings, fuse. Output logits [B, M].
    pub fn forward(
        &self,
        tape: &mut Tape<E>,
        binding: &Binding,
        x: &Tensor<E>,
        query_embeddings: &Tensor<E>,
        mode: &mut Mode,
    ) -> Result<Var> {
        let f_ecg = self.encode_ecg(tape, binding, x, mode)?;
        let f_query = self.project_queries(tape, binding, query_embeddings, mode)?;
        self.fuse(tape, binding, f_ecg, f_query, mode)
    }
}
