use rand::Rng;

use crate::encoding::Affine;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn register(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(LayerNormParams {
            gain: store.add(format!("{name}.gain"), Tensor::vector(vec![1.0; width])?)?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[width]))?,
        })
    }

    fn apply(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayer {
    pub ln_attn: LayerNormParams,
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
    pub out: Affine,
    pub ln_ffn: LayerNormParams,
    pub ffn_in: Affine,
    pub ffn_out: Affine,
}

/// Pre-norm transformer encoder with full (unmasked) self-attention and
/// learned positional embeddings.
#[derive(Debug, Clone)]
pub struct TransformerStack {
    pub layers: Vec<EncoderLayer>,
    pub positions: ParamId,
    pub d_model: usize,
    pub heads: usize,
}

impl TransformerStack {
    pub fn register(
        store: &mut ParamStore,
        layers: usize,
        heads: usize,
        d_model: usize,
        d_ff: usize,
        max_positions: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!("d_model {d_model} is not divisible by {heads} heads")));
        }
        let pos = (0..max_positions * d_model).map(|_| rng.random_range(-0.1..0.1)).collect();
        let positions = store.add("pos", Tensor::matrix(max_positions, d_model, pos)?)?;
        let layers = (0..layers)
            .map(|i| {
                let p = format!("layer{i}");
                Ok(EncoderLayer {
                    ln_attn: LayerNormParams::register(store, &format!("{p}.ln_attn"), d_model)?,
                    query: Affine::register(store, &format!("{p}.attn.query"), d_model, d_model, rng)?,
                    key: Affine::register(store, &format!("{p}.attn.key"), d_model, d_model, rng)?,
                    value: Affine::register(store, &format!("{p}.attn.value"), d_model, d_model, rng)?,
                    out: Affine::register(store, &format!("{p}.attn.out"), d_model, d_model, rng)?,
                    ln_ffn: LayerNormParams::register(store, &format!("{p}.ln_ffn"), d_model)?,
                    ffn_in: Affine::register(store, &format!("{p}.ffn.in"), d_model, d_ff, rng)?,
                    ffn_out: Affine::register(store, &format!("{p}.ffn.out"), d_ff, d_model, rng)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TransformerStack { layers, positions, d_model, heads })
    }

    pub fn max_positions(&self, store: &ParamStore) -> usize {
        store.get(self.positions).dims2().0
    }

    /// Encodes an `S × d_model` input; `positions[i]` indexes the positional
    /// table for row `i`. Output has the same shape as the input.
    pub fn encode(&self, g: &mut Graph<'_>, x: Var, positions: &[usize]) -> Result<Var> {
        let (rows, width) = g.value(x).dims2();
        if width != self.d_model || rows != positions.len() {
            return Err(Error::Dimension(format!(
                "encoder input {rows}x{width} with {} positions, expected width {}",
                positions.len(),
                self.d_model
            )));
        }
        let table = g.param(self.positions);
        let pos = g.gather_rows(table, positions)?;
        let mut h = g.add(x, pos)?;
        for layer in &self.layers {
            h = self.attention_block(g, layer, h)?;
            h = self.ffn_block(g, layer, h)?;
        }
        Ok(h)
    }

    fn attention_block(&self, g: &mut Graph<'_>, layer: &EncoderLayer, h: Var) -> Result<Var> {
        let x = layer.ln_attn.apply(g, h)?;
        let q = layer.query.apply(g, x)?;
        let k = layer.key.apply(g, x)?;
        let v = layer.value.apply(g, x)?;
        let head_dim = self.d_model / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let qh = g.slice_cols(q, i * head_dim, head_dim)?;
            let kh = g.slice_cols(k, i * head_dim, head_dim)?;
            let vh = g.slice_cols(v, i * head_dim, head_dim)?;
            let kt = g.transpose(kh)?;
            let logits = g.matmul(qh, kt)?;
            let logits = g.scale(logits, scale)?;
            let att = g.softmax(logits)?;
            heads.push(g.matmul(att, vh)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        let o = layer.out.apply(g, merged)?;
        g.add(h, o)
    }

    fn ffn_block(&self, g: &mut Graph<'_>, layer: &EncoderLayer, h: Var) -> Result<Var> {
        let x = layer.ln_ffn.apply(g, h)?;
        let a = layer.ffn_in.apply(g, x)?;
        let a = g.gelu(a)?;
        let o = layer.ffn_out.apply(g, a)?;
        g.add(h, o)
    }
}
