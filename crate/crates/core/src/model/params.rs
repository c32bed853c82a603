use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::autodiff::nn::{normal_tensor, FeedForward, LayerNorm, MultiHeadAttention};
use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::error::Result;

const EMBED_STD: f64 = 0.1;
/// Without a sinusoidal component in the position table, small models take far
/// longer to learn offset-based lookups such as "the number after this name".
const POS_SINUSOID_AMP: f64 = 0.4;

fn add_sinusoid(t: &mut Tensor, amp: f64) {
    let d = t.cols();
    for p in 0..t.rows() {
        let row = t.row_slice_mut(p);
        for i in 0..d / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            row[2 * i] += amp * angle.sin();
            row[2 * i + 1] += amp * angle.cos();
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

/// One decoder layer. The header and every body row run through the same set.
#[derive(Clone, Copy, Debug)]
pub struct DecoderLayer {
    pub self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

/// Handles into the parameter store for every learnable tensor.
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Word embeddings, also used (transposed) as the output projection.
    pub word: ParamId,
    pub pos: ParamId,
    /// `max_rows + 1` entries; entry 0 belongs to the header.
    pub row: ParamId,
    pub col: ParamId,
    pub encoder: Vec<EncoderLayer>,
    pub encoder_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub decoder_norm: LayerNorm,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let word = store.add("embed.word", normal_tensor(&mut rng, config.vocab_size, d, EMBED_STD));
        let mut pos_t = normal_tensor(&mut rng, config.max_pos, d, EMBED_STD);
        add_sinusoid(&mut pos_t, POS_SINUSOID_AMP);
        let pos = store.add("embed.pos", pos_t);
        let row = store.add("embed.row", normal_tensor(&mut rng, config.max_rows + 1, d, EMBED_STD));
        let col = store.add("embed.col", normal_tensor(&mut rng, config.max_cols, d, EMBED_STD));
        let out_std = |layers: usize| (1.0 / d as f64).sqrt() / (2.0 * layers as f64).sqrt();
        let enc_std = out_std(config.encoder_layers);
        let dec_std = out_std(config.decoder_layers);
        let mut encoder = Vec::new();
        for l in 0..config.encoder_layers {
            let p = format!("enc.{l}");
            encoder.push(EncoderLayer {
                self_norm: LayerNorm::new(store, &format!("{p}.self_norm"), d),
                self_attn: MultiHeadAttention::new(store, &format!("{p}.self_attn"), d, config.heads, enc_std, &mut rng)?,
                ffn_norm: LayerNorm::new(store, &format!("{p}.ffn_norm"), d),
                ffn: FeedForward::new(store, &format!("{p}.ffn"), d, config.ffn_dim, enc_std, &mut rng),
            });
        }
        let encoder_norm = LayerNorm::new(store, "enc.norm", d);
        let mut decoder = Vec::new();
        for l in 0..config.decoder_layers {
            let p = format!("dec.{l}");
            decoder.push(DecoderLayer {
                self_norm: LayerNorm::new(store, &format!("{p}.self_norm"), d),
                self_attn: MultiHeadAttention::new(store, &format!("{p}.self_attn"), d, config.heads, dec_std, &mut rng)?,
                cross_norm: LayerNorm::new(store, &format!("{p}.cross_norm"), d),
                cross_attn: MultiHeadAttention::new(store, &format!("{p}.cross_attn"), d, config.heads, dec_std, &mut rng)?,
                ffn_norm: LayerNorm::new(store, &format!("{p}.ffn_norm"), d),
                ffn: FeedForward::new(store, &format!("{p}.ffn"), d, config.ffn_dim, dec_std, &mut rng),
            });
        }
        let decoder_norm = LayerNorm::new(store, "dec.norm", d);
        Ok(Self {
            word,
            pos,
            row,
            col,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
        })
    }
}
