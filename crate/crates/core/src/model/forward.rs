use super::{Checkpoint, ModelConfig, ModelError, TokenId};
use crate::kernels::{self, Matrix};

/// Per-layer attention keys and values for every position consumed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    width: usize,
    len: usize,
}

impl KvCache {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            keys: vec![Vec::new(); config.n_layers],
            values: vec![Vec::new(); config.n_layers],
            width: config.hidden_dim,
            len: 0,
        }
    }

    /// Number of positions consumed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn key(&self, layer: usize, pos: usize) -> &[f64] {
        &self.keys[layer][pos * self.width..(pos + 1) * self.width]
    }

    fn value(&self, layer: usize, pos: usize) -> &[f64] {
        &self.values[layer][pos * self.width..(pos + 1) * self.width]
    }
}

/// Runs the decoder over `tokens` and returns the post-final-norm hidden
/// features, one row per token in `tokens`.
///
/// With a cache, `tokens` continue the cached sequence and the cache is
/// advanced; without one, `tokens` are a complete sequence starting at
/// position 0.
pub fn forward_hidden(
    ckpt: &Checkpoint,
    tokens: &[TokenId],
    cache: Option<&mut KvCache>,
) -> Result<Matrix, ModelError> {
    let mut local;
    let cache = match cache {
        Some(c) => c,
        None => {
            local = KvCache::new(ckpt.config());
            &mut local
        }
    };
    let cfg = ckpt.config();
    if tokens.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let past = cache.len;
    if past + tokens.len() > cfg.max_positions {
        return Err(ModelError::ContextOverflow {
            requested: past + tokens.len(),
            limit: cfg.max_positions,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    let d = cfg.hidden_dim;
    let n = tokens.len();

    let mut x = Matrix::zeros(n, d);
    for (i, &tok) in tokens.iter().enumerate() {
        let te = ckpt.token_embedding().row(tok as usize);
        let pe = ckpt.position_embedding().row(past + i);
        for ((o, &a), &b) in x.row_mut(i).iter_mut().zip(te).zip(pe) {
            *o = f64::from(a) + f64::from(b);
        }
    }

    for (layer_idx, layer) in ckpt.layers().iter().enumerate() {
        let normed = kernels::layer_norm(&x, &layer.ln_1_gain, &layer.ln_1_bias, cfg.ln_eps)?;
        let qkv = kernels::linear(&normed, &layer.attn_qkv, Some(&layer.attn_qkv_bias))?;
        for i in 0..n {
            let row = qkv.row(i);
            cache.keys[layer_idx].extend_from_slice(&row[d..2 * d]);
            cache.values[layer_idx].extend_from_slice(&row[2 * d..]);
        }
        let attended = attend(cache, layer_idx, &qkv, past, cfg);
        let proj = kernels::linear(&attended, &layer.attn_out, Some(&layer.attn_out_bias))?;
        add_in_place(&mut x, &proj);

        let normed = kernels::layer_norm(&x, &layer.ln_2_gain, &layer.ln_2_bias, cfg.ln_eps)?;
        let mut hidden = kernels::linear(&normed, &layer.mlp_fc, Some(&layer.mlp_fc_bias))?;
        kernels::gelu_in_place(&mut hidden);
        let out = kernels::linear(&hidden, &layer.mlp_proj, Some(&layer.mlp_proj_bias))?;
        add_in_place(&mut x, &out);
    }
    cache.len = past + n;

    let (gain, bias) = ckpt.final_norm();
    Ok(kernels::layer_norm(&x, gain, bias, cfg.ln_eps)?)
}

/// Causal multi-head attention for the rows of `qkv`, which sit at positions
/// `past..past + n`. Keys and values for those positions must already be in
/// the cache.
fn attend(cache: &KvCache, layer: usize, qkv: &Matrix, past: usize, cfg: &ModelConfig) -> Matrix {
    let d = cfg.hidden_dim;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = Matrix::zeros(qkv.rows(), d);
    let mut scores = Vec::with_capacity(past + qkv.rows());
    for i in 0..qkv.rows() {
        let pos = past + i;
        let query = &qkv.row(i)[..d];
        for h in 0..cfg.n_heads {
            let span = h * hd..(h + 1) * hd;
            let q = &query[span.clone()];
            scores.clear();
            scores.extend((0..=pos).map(|j| kernels::dot(q, &cache.key(layer, j)[span.clone()]) * scale));
            kernels::softmax_in_place(&mut scores);
            let o = &mut out.row_mut(i)[span.clone()];
            for (j, &p) in scores.iter().enumerate() {
                for (acc, &v) in o.iter_mut().zip(&cache.value(layer, j)[span.clone()]) {
                    *acc += p * v;
                }
            }
        }
    }
    out
}

fn add_in_place(x: &mut Matrix, y: &Matrix) {
    for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
        *a += b;
    }
}

/// `H' · W_LMᵀ`, one row of vocabulary logits per hidden row.
pub fn lm_logits(ckpt: &Checkpoint, hidden: &Matrix) -> Result<Matrix, ModelError> {
    Ok(kernels::matmul_transposed(hidden, ckpt.lm_head())?)
}
