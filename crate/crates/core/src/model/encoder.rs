//! The bidirectional transformer backbone over compound tokens.
//!
//! Per-attribute embeddings are concatenated and projected to `d_model`.
//! Each block is pre-norm: `x += Attn(LN(x)); x += Ffn(LN(x))` with
//! rotary position rotation inside attention and a GELU-gated
//! feed-forward. There is no final normalization, so with zero block
//! weights the output equals the embedding output. Pad tokens are
//! excluded as attention keys and receive exactly zero weight.

use ndarray::Array2;

use super::config::ModelConfig;
use super::layers::{
    apply_rope, dropout_mask, gelu, gelu_prime, masked_softmax_rows, sample_normal,
    softmax_rows_backward, LayerNorm, Linear, LnCache,
};
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tokenizer::{TokenIds, VocabSpec, ATTRS};

/// Contextualized note representations, shape (segment length, d_model).
pub type HiddenStates = Array2<f64>;

pub type Params<'a> = Vec<(String, &'a Array2<f64>)>;
pub type ParamsMut<'a> = Vec<(String, &'a mut Array2<f64>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    /// One table per attribute, `cardinality + 2` rows (mask, pad).
    pub tables: Vec<Array2<f64>>,
    pub proj: Linear,
}

pub struct EmbCache {
    ids: Vec<TokenIds>,
    concat: Array2<f64>,
}

impl Embeddings {
    fn init(config: &ModelConfig, rng: &mut Rng) -> Self {
        let tables = ATTRS
            .iter()
            .zip(config.embed_dims)
            .map(|(&attr, dim)| {
                Array2::from_shape_fn((VocabSpec::table_rows(attr), dim), |_| {
                    sample_normal(rng, 0.02)
                })
            })
            .collect();
        let proj = Linear::init(config.embed_concat_dim(), config.d_model, true, rng);
        Embeddings { tables, proj }
    }

    fn zeros_like(&self) -> Self {
        Embeddings {
            tables: self.tables.iter().map(|t| Array2::zeros(t.raw_dim())).collect(),
            proj: self.proj.zeros_like(),
        }
    }

    pub fn forward(&self, ids: &[TokenIds]) -> Result<(Array2<f64>, EmbCache)> {
        let concat_dim: usize = self.tables.iter().map(|t| t.ncols()).sum();
        let mut concat = Array2::zeros((ids.len(), concat_dim));
        for (row, token) in ids.iter().enumerate() {
            let mut offset = 0;
            for (a, table) in self.tables.iter().enumerate() {
                let id = token.0[a] as usize;
                if id >= table.nrows() {
                    return Err(CoreError::Model(format!(
                        "token {row}: attribute {a} id {id} outside vocabulary ({} rows)",
                        table.nrows()
                    )));
                }
                let dim = table.ncols();
                concat
                    .row_mut(row)
                    .slice_mut(ndarray::s![offset..offset + dim])
                    .assign(&table.row(id));
                offset += dim;
            }
        }
        let x = self.proj.forward(&concat);
        Ok((x, EmbCache { ids: ids.to_vec(), concat }))
    }

    pub fn backward(&self, cache: &EmbCache, dx: &Array2<f64>, grad: &mut Embeddings) {
        let dconcat = self.proj.backward(&cache.concat, dx, &mut grad.proj);
        for (row, token) in cache.ids.iter().enumerate() {
            let mut offset = 0;
            for (a, gtable) in grad.tables.iter_mut().enumerate() {
                let dim = gtable.ncols();
                let id = token.0[a] as usize;
                let mut target = gtable.row_mut(id);
                let src = dconcat.row(row);
                for c in 0..dim {
                    target[c] += src[offset + c];
                }
                offset += dim;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub norm: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    n_heads: usize,
    rope_base: f64,
    /// Keys farther than this from the query are masked out.
    window: Option<usize>,
}

pub struct AttnCache {
    ln: LnCache,
    n: Array2<f64>,
    q_rot: Vec<Array2<f64>>,
    k_rot: Vec<Array2<f64>>,
    v_heads: Vec<Array2<f64>>,
    weights: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop: Option<Array2<f64>>,
}

impl Attention {
    fn init(config: &ModelConfig, window: Option<usize>, rng: &mut Rng) -> Self {
        let d = config.d_model;
        Attention {
            norm: LayerNorm::init(d),
            wq: Linear::init(d, d, false, rng),
            wk: Linear::init(d, d, false, rng),
            wv: Linear::init(d, d, false, rng),
            wo: Linear::init(d, d, false, rng),
            n_heads: config.n_heads,
            rope_base: config.rope_base,
            window,
        }
    }

    fn zeros_like(&self) -> Self {
        Attention {
            norm: self.norm.zeros_like(),
            wq: self.wq.zeros_like(),
            wk: self.wk.zeros_like(),
            wv: self.wv.zeros_like(),
            wo: self.wo.zeros_like(),
            n_heads: self.n_heads,
            rope_base: self.rope_base,
            window: self.window,
        }
    }

    fn head_cols(&self, h: usize, d: usize) -> std::ops::Range<usize> {
        let dh = d / self.n_heads;
        h * dh..(h + 1) * dh
    }

    /// Attention logits between rotated q and k rows for one head; used
    /// directly by tests probing position-shift invariance.
    pub fn head_logits(
        q: &Array2<f64>,
        k: &Array2<f64>,
        positions: &[usize],
        rope_base: f64,
    ) -> Array2<f64> {
        let mut q = q.clone();
        let mut k = k.clone();
        apply_rope(&mut q, positions, rope_base, false);
        apply_rope(&mut k, positions, rope_base, false);
        let scale = 1.0 / (q.ncols() as f64).sqrt();
        q.dot(&k.t()) * scale
    }

    fn allowed(&self, pad: &[bool]) -> impl Fn(usize, usize) -> bool + '_ {
        let pad = pad.to_vec();
        let window = self.window;
        move |i: usize, j: usize| {
            if pad[j] {
                return false;
            }
            match window {
                Some(w) => i.abs_diff(j) <= w,
                None => true,
            }
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        pad: &[bool],
        dropout: f64,
        rng: Option<&mut Rng>,
    ) -> (Array2<f64>, AttnCache) {
        let (s, d) = x.dim();
        let dh = d / self.n_heads;
        let positions: Vec<usize> = (0..s).collect();

        let (n, ln) = self.norm.forward(x);
        let q_all = self.wq.forward(&n);
        let k_all = self.wk.forward(&n);
        let v_all = self.wv.forward(&n);

        let scale = 1.0 / (dh as f64).sqrt();
        let allowed = self.allowed(pad);

        let mut ctx = Array2::zeros((s, d));
        let mut q_rot = Vec::with_capacity(self.n_heads);
        let mut k_rot = Vec::with_capacity(self.n_heads);
        let mut v_heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = self.head_cols(h, d);
            let mut q = q_all.slice(ndarray::s![.., cols.clone()]).to_owned();
            let mut k = k_all.slice(ndarray::s![.., cols.clone()]).to_owned();
            let v = v_all.slice(ndarray::s![.., cols.clone()]).to_owned();
            apply_rope(&mut q, &positions, self.rope_base, false);
            apply_rope(&mut k, &positions, self.rope_base, false);

            let mut scores = q.dot(&k.t()) * scale;
            masked_softmax_rows(&mut scores, &allowed);
            let ctx_h = scores.dot(&v);
            ctx.slice_mut(ndarray::s![.., cols]).assign(&ctx_h);

            q_rot.push(q);
            k_rot.push(k);
            v_heads.push(v);
            weights.push(scores);
        }

        let mut out = self.wo.forward(&ctx);
        let drop = match rng {
            Some(rng) if dropout > 0.0 => {
                let mask = dropout_mask((s, d), dropout, rng);
                out *= &mask;
                Some(mask)
            }
            _ => None,
        };

        let y = x + &out;
        (y, AttnCache { ln, n, q_rot, k_rot, v_heads, weights, ctx, drop })
    }

    pub fn backward(
        &self,
        cache: &AttnCache,
        dy: &Array2<f64>,
        grad: &mut Attention,
    ) -> Array2<f64> {
        let (s, d) = cache.n.dim();
        let dh = d / self.n_heads;
        let positions: Vec<usize> = (0..s).collect();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut d_out = dy.clone();
        if let Some(mask) = &cache.drop {
            d_out *= mask;
        }
        let dctx = self.wo.backward(&cache.ctx, &d_out, &mut grad.wo);

        let mut dq_all = Array2::zeros((s, d));
        let mut dk_all = Array2::zeros((s, d));
        let mut dv_all = Array2::zeros((s, d));
        for h in 0..self.n_heads {
            let cols = self.head_cols(h, d);
            let dctx_h = dctx.slice(ndarray::s![.., cols.clone()]).to_owned();
            let w = &cache.weights[h];

            let dv = w.t().dot(&dctx_h);
            let dw = dctx_h.dot(&cache.v_heads[h].t());
            let ds = softmax_rows_backward(w, &dw);

            let mut dq = ds.dot(&cache.k_rot[h]) * scale;
            let mut dk = ds.t().dot(&cache.q_rot[h]) * scale;
            apply_rope(&mut dq, &positions, self.rope_base, true);
            apply_rope(&mut dk, &positions, self.rope_base, true);

            dq_all.slice_mut(ndarray::s![.., cols.clone()]).assign(&dq);
            dk_all.slice_mut(ndarray::s![.., cols.clone()]).assign(&dk);
            dv_all.slice_mut(ndarray::s![.., cols]).assign(&dv);
        }

        let mut dn = self.wq.backward(&cache.n, &dq_all, &mut grad.wq);
        dn += &self.wk.backward(&cache.n, &dk_all, &mut grad.wk);
        dn += &self.wv.backward(&cache.n, &dv_all, &mut grad.wv);

        let dx_norm = self.norm.backward(&cache.ln, &dn, &mut grad.norm);
        dy + &dx_norm
    }
}

/// GELU-gated feed-forward block (pre-norm, residual).
#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub norm: LayerNorm,
    pub gate: Linear,
    pub up: Linear,
    pub down: Linear,
}

pub struct FfnCache {
    ln: LnCache,
    n: Array2<f64>,
    a: Array2<f64>,
    u: Array2<f64>,
    h: Array2<f64>,
    drop: Option<Array2<f64>>,
}

impl Ffn {
    fn init(config: &ModelConfig, rng: &mut Rng) -> Self {
        let d = config.d_model;
        let f = config.ffn_dim;
        Ffn {
            norm: LayerNorm::init(d),
            gate: Linear::init(d, f, false, rng),
            up: Linear::init(d, f, false, rng),
            down: Linear::init(f, d, false, rng),
        }
    }

    fn zeros_like(&self) -> Self {
        Ffn {
            norm: self.norm.zeros_like(),
            gate: self.gate.zeros_like(),
            up: self.up.zeros_like(),
            down: self.down.zeros_like(),
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        dropout: f64,
        rng: Option<&mut Rng>,
    ) -> (Array2<f64>, FfnCache) {
        let (n, ln) = self.norm.forward(x);
        let a = self.gate.forward(&n);
        let u = self.up.forward(&n);
        let h = ndarray::Zip::from(&a).and(&u).map_collect(|&av, &uv| gelu(av) * uv);
        let mut out = self.down.forward(&h);
        let drop = match rng {
            Some(rng) if dropout > 0.0 => {
                let mask = dropout_mask(out.dim(), dropout, rng);
                out *= &mask;
                Some(mask)
            }
            _ => None,
        };
        let y = x + &out;
        (y, FfnCache { ln, n, a, u, h, drop })
    }

    pub fn backward(&self, cache: &FfnCache, dy: &Array2<f64>, grad: &mut Ffn) -> Array2<f64> {
        let mut d_out = dy.clone();
        if let Some(mask) = &cache.drop {
            d_out *= mask;
        }
        let dh = self.down.backward(&cache.h, &d_out, &mut grad.down);
        let da = ndarray::Zip::from(&dh)
            .and(&cache.a)
            .and(&cache.u)
            .map_collect(|&dhv, &av, &uv| dhv * uv * gelu_prime(av));
        let du = ndarray::Zip::from(&dh)
            .and(&cache.a)
            .map_collect(|&dhv, &av| dhv * gelu(av));

        let mut dn = self.gate.backward(&cache.n, &da, &mut grad.gate);
        dn += &self.up.backward(&cache.n, &du, &mut grad.up);

        let dx_norm = self.norm.backward(&cache.ln, &dn, &mut grad.norm);
        dy + &dx_norm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn: Attention,
    pub ffn: Ffn,
}

pub struct BlockCache {
    attn: AttnCache,
    ffn: FfnCache,
}

/// Backbone model: embeddings plus `n_layers` transformer blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: ModelConfig,
    pub emb: Embeddings,
    pub blocks: Vec<Block>,
}

pub struct EncoderCache {
    emb: EmbCache,
    pub pad: Vec<bool>,
    layers: Vec<BlockCache>,
}

impl Encoder {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let emb = Embeddings::init(config, rng);
        let blocks = (0..config.n_layers)
            .map(|layer| {
                // odd layers go local when a window is configured
                let window = config.local_window.filter(|_| layer % 2 == 1);
                Block {
                    attn: Attention::init(config, window, rng),
                    ffn: Ffn::init(config, rng),
                }
            })
            .collect();
        Ok(Encoder { config: config.clone(), emb, blocks })
    }

    pub fn zeros_like(&self) -> Self {
        Encoder {
            config: self.config.clone(),
            emb: self.emb.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block { attn: b.attn.zeros_like(), ffn: b.ffn.zeros_like() })
                .collect(),
        }
    }

    pub fn pad_mask(ids: &[TokenIds]) -> Vec<bool> {
        ids.iter().map(TokenIds::is_pad).collect()
    }

    /// Deterministic inference forward (no dropout).
    pub fn forward(&self, ids: &[TokenIds]) -> Result<(HiddenStates, Vec<bool>)> {
        let (h, cache) = self.forward_train(ids, None)?;
        Ok((h, cache.pad))
    }

    /// Forward pass keeping every intermediate needed by backward.
    /// Dropout is applied only when `rng` is provided and the config
    /// rate is positive.
    pub fn forward_train(
        &self,
        ids: &[TokenIds],
        mut rng: Option<&mut Rng>,
    ) -> Result<(HiddenStates, EncoderCache)> {
        if ids.is_empty() {
            return Err(CoreError::Model("empty segment".into()));
        }
        let pad = Self::pad_mask(ids);
        let (mut x, emb_cache) = self.emb.forward(ids)?;

        let mut layers = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (x1, attn_cache) = block.attn.forward(&x, &pad, self.config.dropout, rng.as_deref_mut());
            let (x2, ffn_cache) = block.ffn.forward(&x1, self.config.dropout, rng.as_deref_mut());
            x = x2;
            layers.push(BlockCache { attn: attn_cache, ffn: ffn_cache });
        }

        if !x.iter().all(|v| v.is_finite()) {
            return Err(CoreError::Model("non-finite activations in forward pass".into()));
        }
        Ok((x, EncoderCache { emb: emb_cache, pad, layers }))
    }

    /// Backpropagate `dh` through the encoder, accumulating into `grad`.
    pub fn backward(&self, cache: &EncoderCache, dh: &Array2<f64>, grad: &mut Encoder) {
        let mut d = dh.clone();
        for ((block, gblock), bc) in self
            .blocks
            .iter()
            .zip(grad.blocks.iter_mut())
            .zip(&cache.layers)
            .rev()
        {
            d = block.ffn.backward(&bc.ffn, &d, &mut gblock.ffn);
            d = block.attn.backward(&bc.attn, &d, &mut gblock.attn);
        }
        self.emb.backward(&cache.emb, &d, &mut grad.emb);
    }

    /// Attention-weight inspection used by tests: per-head weights of a
    /// given layer for the given input.
    pub fn attention_weights(&self, ids: &[TokenIds], layer: usize) -> Result<Vec<Array2<f64>>> {
        let pad = Self::pad_mask(ids);
        let (mut x, _) = self.emb.forward(ids)?;
        for (i, block) in self.blocks.iter().enumerate() {
            let (x1, cache) = block.attn.forward(&x, &pad, 0.0, None);
            if i == layer {
                return Ok(cache.weights);
            }
            let (x2, _) = block.ffn.forward(&x1, 0.0, None);
            x = x2;
        }
        Err(CoreError::Model(format!("layer {layer} out of range")))
    }

    pub fn params(&self) -> Params<'_> {
        let mut out: Params = Vec::new();
        let names = ["bar_flag", "position", "pitch", "duration"];
        for (t, name) in self.emb.tables.iter().zip(names) {
            out.push((format!("emb.table.{name}"), t));
        }
        out.push(("emb.proj.w".into(), &self.emb.proj.w));
        if let Some(b) = &self.emb.proj.b {
            out.push(("emb.proj.b".into(), b));
        }
        for (i, block) in self.blocks.iter().enumerate() {
            let p = format!("block{i}");
            out.push((format!("{p}.attn.norm.gamma"), &block.attn.norm.gamma));
            out.push((format!("{p}.attn.norm.beta"), &block.attn.norm.beta));
            out.push((format!("{p}.attn.wq.w"), &block.attn.wq.w));
            out.push((format!("{p}.attn.wk.w"), &block.attn.wk.w));
            out.push((format!("{p}.attn.wv.w"), &block.attn.wv.w));
            out.push((format!("{p}.attn.wo.w"), &block.attn.wo.w));
            out.push((format!("{p}.ffn.norm.gamma"), &block.ffn.norm.gamma));
            out.push((format!("{p}.ffn.norm.beta"), &block.ffn.norm.beta));
            out.push((format!("{p}.ffn.gate.w"), &block.ffn.gate.w));
            out.push((format!("{p}.ffn.up.w"), &block.ffn.up.w));
            out.push((format!("{p}.ffn.down.w"), &block.ffn.down.w));
        }
        out
    }

    pub fn params_mut(&mut self) -> ParamsMut<'_> {
        let mut out: ParamsMut = Vec::new();
        let names = ["bar_flag", "position", "pitch", "duration"];
        for (t, name) in self.emb.tables.iter_mut().zip(names) {
            out.push((format!("emb.table.{name}"), t));
        }
        out.push(("emb.proj.w".into(), &mut self.emb.proj.w));
        if let Some(b) = self.emb.proj.b.as_mut() {
            out.push(("emb.proj.b".into(), b));
        }
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let p = format!("block{i}");
            out.push((format!("{p}.attn.norm.gamma"), &mut block.attn.norm.gamma));
            out.push((format!("{p}.attn.norm.beta"), &mut block.attn.norm.beta));
            out.push((format!("{p}.attn.wq.w"), &mut block.attn.wq.w));
            out.push((format!("{p}.attn.wk.w"), &mut block.attn.wk.w));
            out.push((format!("{p}.attn.wv.w"), &mut block.attn.wv.w));
            out.push((format!("{p}.attn.wo.w"), &mut block.attn.wo.w));
            out.push((format!("{p}.ffn.norm.gamma"), &mut block.ffn.norm.gamma));
            out.push((format!("{p}.ffn.norm.beta"), &mut block.ffn.norm.beta));
            out.push((format!("{p}.ffn.gate.w"), &mut block.ffn.gate.w));
            out.push((format!("{p}.ffn.up.w"), &mut block.ffn.up.w));
            out.push((format!("{p}.ffn.down.w"), &mut block.ffn.down.w));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}
