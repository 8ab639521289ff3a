//! Seeded synthetic checkpoints and tokenizers for tests, benchmarks and
//! desk-scale runs when no pretrained weights are at hand.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Checkpoint, CheckpointParts, LayerWeights, ModelBundle, ModelConfig, Tokenizer};
use crate::kernels::WeightMatrix;

const GPT2_VOCAB: &str = include_str!("../../../../assets/gpt2/vocab.json");
const GPT2_MERGES: &str = include_str!("../../../../assets/gpt2/merges.txt");

/// The GPT-2 byte-level BPE tokenizer (50,257 ids, 50,000 merges).
pub fn gpt2_tokenizer() -> Tokenizer {
    Tokenizer::from_strs(GPT2_VOCAB, GPT2_MERGES).expect("bundled GPT-2 tokenizer parses")
}

/// Random-initialization recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomInit {
    pub seed: u64,
    /// Standard deviation of embeddings and projection weights.
    pub std: f32,
    /// When positive, layer-norm parameters and linear biases are perturbed
    /// by `N(0, jitter)` instead of being 1 / 0.
    pub jitter: f32,
    /// Draw a separate LM head instead of tying it to the token embedding.
    pub untied_head: bool,
}

impl RandomInit {
    /// GPT-2's initializer: `N(0, 0.02)` weights, residual projections scaled
    /// by `1/sqrt(2 L)`, unit norms and zero biases.
    pub fn gpt2(seed: u64) -> Self {
        Self {
            seed,
            std: 0.02,
            jitter: 0.0,
            untied_head: false,
        }
    }

    /// Larger weights and perturbed norms/biases, so that every parameter
    /// influences the output of a tiny model.
    pub fn tiny(seed: u64) -> Self {
        Self {
            seed,
            std: 0.3,
            jitter: 0.1,
            untied_head: false,
        }
    }
}

/// All weights zero, layer-norm gains one.
pub fn zero_parts(config: &ModelConfig) -> CheckpointParts {
    let d = config.hidden_dim;
    CheckpointParts {
        token_embedding: WeightMatrix::zeros(config.vocab_size, d),
        position_embedding: WeightMatrix::zeros(config.max_positions, d),
        layers: (0..config.n_layers).map(|_| LayerWeights::zeros(config)).collect(),
        final_norm_gain: vec![1.0; d],
        final_norm_bias: vec![0.0; d],
        lm_head: None,
    }
}

struct Sampler {
    rng: ChaCha8Rng,
    weight: Normal<f32>,
    residual: Normal<f32>,
    jitter: Option<Normal<f32>>,
}

impl Sampler {
    fn draw(&mut self, dist: Normal<f32>, len: usize) -> Vec<f32> {
        (0..len).map(|_| dist.sample(&mut self.rng)).collect()
    }

    fn matrix(&mut self, residual: bool, rows: usize, cols: usize) -> WeightMatrix {
        let dist = if residual { self.residual } else { self.weight };
        WeightMatrix::from_vec(rows, cols, self.draw(dist, rows * cols)).expect("length matches")
    }

    fn around(&mut self, base: f32, len: usize) -> Vec<f32> {
        match self.jitter {
            Some(j) => self.draw(j, len).into_iter().map(|x| base + x).collect(),
            None => vec![base; len],
        }
    }
}

pub fn random_checkpoint(config: ModelConfig, init: &RandomInit) -> Checkpoint {
    let residual_std = init.std / (2.0 * config.n_layers.max(1) as f32).sqrt();
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(init.seed),
        weight: Normal::new(0.0, init.std).expect("finite std"),
        residual: Normal::new(0.0, residual_std).expect("finite std"),
        jitter: (init.jitter > 0.0).then(|| Normal::new(0.0, init.jitter).expect("finite std")),
    };
    let (v, d, m) = (config.vocab_size, config.hidden_dim, config.mlp_width());
    let token_embedding = s.matrix(false, v, d);
    let position_embedding = s.matrix(false, config.max_positions, d);
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        layers.push(LayerWeights {
            ln_1_gain: s.around(1.0, d),
            ln_1_bias: s.around(0.0, d),
            attn_qkv: s.matrix(false, d, 3 * d),
            attn_qkv_bias: s.around(0.0, 3 * d),
            attn_out: s.matrix(true, d, d),
            attn_out_bias: s.around(0.0, d),
            ln_2_gain: s.around(1.0, d),
            ln_2_bias: s.around(0.0, d),
            mlp_fc: s.matrix(false, d, m),
            mlp_fc_bias: s.around(0.0, m),
            mlp_proj: s.matrix(true, m, d),
            mlp_proj_bias: s.around(0.0, d),
        });
    }
    let final_norm_gain = s.around(1.0, d);
    let final_norm_bias = s.around(0.0, d);
    let lm_head = init.untied_head.then(|| s.matrix(false, v, d));
    Checkpoint::new(
        config,
        CheckpointParts {
            token_embedding,
            position_embedding,
            layers,
            final_norm_gain,
            final_norm_bias,
            lm_head,
        },
    )
    .expect("synthetic shapes are consistent")
}

/// Learns up to `vocab_size - 256` merges from `corpus` with plain BPE
/// training (most frequent adjacent pair, ties to the lexicographically
/// smallest). The result may be smaller than requested if the corpus runs
/// out of pairs.
pub fn train_tokenizer(corpus: &str, vocab_size: usize) -> Tokenizer {
    let table = super::bytes_to_unicode();
    let mut words: HashMap<Vec<String>, usize> = HashMap::new();
    for piece in pre_split(corpus) {
        let symbols = piece.bytes().map(|b| table[b as usize].to_string()).collect();
        *words.entry(symbols).or_default() += 1;
    }
    let mut words: Vec<(Vec<String>, usize)> = words.into_iter().collect();
    words.sort();
    let mut merges: Vec<(String, String)> = Vec::new();
    while 256 + merges.len() < vocab_size {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (w, c) in &words {
            for pair in w.windows(2) {
                *counts.entry((&pair[0], &pair[1])).or_default() += c;
            }
        }
        let Some(((a, b), _)) = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then(pb.cmp(pa)))
        else {
            break;
        };
        let (a, b) = (a.to_string(), b.to_string());
        for (w, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < w.len() {
                if w[i] == a && w[i + 1] == b {
                    let right = w.remove(i + 1);
                    w[i].push_str(&right);
                }
                i += 1;
            }
        }
        merges.push((a, b));
    }
    let refs: Vec<(&str, &str)> = merges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    Tokenizer::byte_level(&refs).expect("trained merges are consistent")
}

/// Coarse split on spaces, keeping the leading space with each word.
fn pre_split(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in text.char_indices() {
        if c == ' ' && i > start {
            out.push(&text[start..i]);
            start = i;
        }
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

const TRAINING_TEXT: &str = "The quick brown fox jumps over the lazy dog. \
A farmer has 12 cows and buys 7 more, so the farmer now has 19 cows. \
If each box holds 6 apples and there are 4 boxes, there are 24 apples in total. \
Let us think step by step about the answer to the question. \
The answer is the number of items that remain after the others are removed. \
She reads 20 pages every day, and the book has 180 pages. \
Then we add the two numbers together and subtract the cost of the tickets.";

/// A small byte-level tokenizer trained on a fixed English/arithmetic text,
/// with an `<|endoftext|>` token as its final id.
pub fn tiny_tokenizer(merges: usize) -> Tokenizer {
    let trained = train_tokenizer(TRAINING_TEXT, 256 + merges);
    let mut pairs: Vec<(String, String)> = trained.merges().to_vec();
    // Spell `<|endoftext|>` as a chain of merges so it gets a single id.
    let eot = super::END_OF_TEXT;
    let chars: Vec<String> = eot.chars().map(|c| c.to_string()).collect();
    let mut acc = chars[0].clone();
    for c in &chars[1..] {
        pairs.push((acc.clone(), c.clone()));
        acc.push_str(c);
    }
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    Tokenizer::byte_level(&refs).expect("merges are consistent")
}

/// A tiny random model with a matching tokenizer; vocabulary size is
/// whatever the tokenizer produces.
pub fn tiny_bundle(hidden_dim: usize, n_layers: usize, n_heads: usize, seed: u64) -> ModelBundle {
    let tokenizer = tiny_tokenizer(64);
    let mut config = ModelConfig::tiny(tokenizer.vocab_size(), hidden_dim, n_layers, n_heads);
    config.max_positions = 256;
    config.eos_token_id = tokenizer.eos_id();
    ModelBundle::new(random_checkpoint(config, &RandomInit::tiny(seed)), tokenizer)
}

/// GPT-2-small shape, GPT-2 initializer, real GPT-2 tokenizer.
pub fn gpt2_small_bundle(seed: u64) -> ModelBundle {
    ModelBundle::new(
        random_checkpoint(ModelConfig::gpt2_small(), &RandomInit::gpt2(seed)),
        gpt2_tokenizer(),
    )
}
