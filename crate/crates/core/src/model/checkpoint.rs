use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::safetensors::{self, SafeTensors, TensorToWrite};
use super::{ModelConfig, ModelError};
use crate::kernels::WeightMatrix;

pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const CONFIG_FILE: &str = "config.json";
const CONFIG_METADATA_KEY: &str = "slot.model_config";

/// Parameters of one pre-LN transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln_1_gain: Vec<f32>,
    pub ln_1_bias: Vec<f32>,
    /// `d × 3d`, columns ordered query | key | value.
    pub attn_qkv: WeightMatrix,
    pub attn_qkv_bias: Vec<f32>,
    /// `d × d`
    pub attn_out: WeightMatrix,
    pub attn_out_bias: Vec<f32>,
    pub ln_2_gain: Vec<f32>,
    pub ln_2_bias: Vec<f32>,
    /// `d × mlp`
    pub mlp_fc: WeightMatrix,
    pub mlp_fc_bias: Vec<f32>,
    /// `mlp × d`
    pub mlp_proj: WeightMatrix,
    pub mlp_proj_bias: Vec<f32>,
}

impl LayerWeights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.hidden_dim;
        let m = config.mlp_width();
        Self {
            ln_1_gain: vec![1.0; d],
            ln_1_bias: vec![0.0; d],
            attn_qkv: WeightMatrix::zeros(d, 3 * d),
            attn_qkv_bias: vec![0.0; 3 * d],
            attn_out: WeightMatrix::zeros(d, d),
            attn_out_bias: vec![0.0; d],
            ln_2_gain: vec![1.0; d],
            ln_2_bias: vec![0.0; d],
            mlp_fc: WeightMatrix::zeros(d, m),
            mlp_fc_bias: vec![0.0; m],
            mlp_proj: WeightMatrix::zeros(m, d),
            mlp_proj_bias: vec![0.0; d],
        }
    }
}

/// Everything needed to assemble a [`Checkpoint`].
#[derive(Debug, Clone)]
pub struct CheckpointParts {
    pub token_embedding: WeightMatrix,
    pub position_embedding: WeightMatrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm_gain: Vec<f32>,
    pub final_norm_bias: Vec<f32>,
    /// `None` ties the head to the token embedding.
    pub lm_head: Option<WeightMatrix>,
}

/// Immutable decoder parameters. The LM head is held behind an `Arc`; when
/// tied it is the same allocation as the token embedding.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    config: ModelConfig,
    token_embedding: Arc<WeightMatrix>,
    position_embedding: WeightMatrix,
    layers: Vec<LayerWeights>,
    final_norm_gain: Vec<f32>,
    final_norm_bias: Vec<f32>,
    lm_head: Arc<WeightMatrix>,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, parts: CheckpointParts) -> Result<Self, ModelError> {
        config.validate()?;
        let (v, d, m) = (config.vocab_size, config.hidden_dim, config.mlp_width());
        check_matrix("wte.weight", &parts.token_embedding, v, d)?;
        check_matrix("wpe.weight", &parts.position_embedding, config.max_positions, d)?;
        if parts.layers.len() != config.n_layers {
            return Err(ModelError::Config(format!(
                "config declares {} layers but {} were supplied",
                config.n_layers,
                parts.layers.len()
            )));
        }
        for (i, l) in parts.layers.iter().enumerate() {
            let n = |s: &str| format!("h.{i}.{s}");
            check_vec(&n("ln_1.weight"), &l.ln_1_gain, d)?;
            check_vec(&n("ln_1.bias"), &l.ln_1_bias, d)?;
            check_matrix(&n("attn.c_attn.weight"), &l.attn_qkv, d, 3 * d)?;
            check_vec(&n("attn.c_attn.bias"), &l.attn_qkv_bias, 3 * d)?;
            check_matrix(&n("attn.c_proj.weight"), &l.attn_out, d, d)?;
            check_vec(&n("attn.c_proj.bias"), &l.attn_out_bias, d)?;
            check_vec(&n("ln_2.weight"), &l.ln_2_gain, d)?;
            check_vec(&n("ln_2.bias"), &l.ln_2_bias, d)?;
            check_matrix(&n("mlp.c_fc.weight"), &l.mlp_fc, d, m)?;
            check_vec(&n("mlp.c_fc.bias"), &l.mlp_fc_bias, m)?;
            check_matrix(&n("mlp.c_proj.weight"), &l.mlp_proj, m, d)?;
            check_vec(&n("mlp.c_proj.bias"), &l.mlp_proj_bias, d)?;
        }
        check_vec("ln_f.weight", &parts.final_norm_gain, d)?;
        check_vec("ln_f.bias", &parts.final_norm_bias, d)?;
        let token_embedding = Arc::new(parts.token_embedding);
        let lm_head = match parts.lm_head {
            Some(head) => {
                check_matrix("lm_head.weight", &head, v, d)?;
                Arc::new(head)
            }
            None => Arc::clone(&token_embedding),
        };
        Ok(Self {
            config,
            token_embedding,
            position_embedding: parts.position_embedding,
            layers: parts.layers,
            final_norm_gain: parts.final_norm_gain,
            final_norm_bias: parts.final_norm_bias,
            lm_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn token_embedding(&self) -> &WeightMatrix {
        &self.token_embedding
    }

    pub fn position_embedding(&self) -> &WeightMatrix {
        &self.position_embedding
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn final_norm(&self) -> (&[f32], &[f32]) {
        (&self.final_norm_gain, &self.final_norm_bias)
    }

    /// `W_LM`, shape `|V| × d`.
    pub fn lm_head(&self) -> &WeightMatrix {
        &self.lm_head
    }

    pub fn lm_head_is_tied(&self) -> bool {
        Arc::ptr_eq(&self.lm_head, &self.token_embedding)
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().map(|(_, _, data)| data.len()).sum()
    }

    /// Tensors under their GPT-2 names in a fixed order. A tied head is
    /// omitted.
    pub fn named_tensors(&self) -> impl Iterator<Item = (String, Vec<usize>, &[f32])> {
        fn mat(name: String, m: &WeightMatrix) -> (String, Vec<usize>, &[f32]) {
            (name, vec![m.rows(), m.cols()], m.data())
        }
        fn vec1(name: String, v: &[f32]) -> (String, Vec<usize>, &[f32]) {
            (name, vec![v.len()], v)
        }
        let mut out = vec![
            mat("wte.weight".into(), &self.token_embedding),
            mat("wpe.weight".into(), &self.position_embedding),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push(vec1(format!("h.{i}.ln_1.weight"), &l.ln_1_gain));
            out.push(vec1(format!("h.{i}.ln_1.bias"), &l.ln_1_bias));
            out.push(mat(format!("h.{i}.attn.c_attn.weight"), &l.attn_qkv));
            out.push(vec1(format!("h.{i}.attn.c_attn.bias"), &l.attn_qkv_bias));
            out.push(mat(format!("h.{i}.attn.c_proj.weight"), &l.attn_out));
            out.push(vec1(format!("h.{i}.attn.c_proj.bias"), &l.attn_out_bias));
            out.push(vec1(format!("h.{i}.ln_2.weight"), &l.ln_2_gain));
            out.push(vec1(format!("h.{i}.ln_2.bias"), &l.ln_2_bias));
            out.push(mat(format!("h.{i}.mlp.c_fc.weight"), &l.mlp_fc));
            out.push(vec1(format!("h.{i}.mlp.c_fc.bias"), &l.mlp_fc_bias));
            out.push(mat(format!("h.{i}.mlp.c_proj.weight"), &l.mlp_proj));
            out.push(vec1(format!("h.{i}.mlp.c_proj.bias"), &l.mlp_proj_bias));
        }
        out.push(vec1("ln_f.weight".into(), &self.final_norm_gain));
        out.push(vec1("ln_f.bias".into(), &self.final_norm_bias));
        if !self.lm_head_is_tied() {
            out.push(mat("lm_head.weight".into(), &self.lm_head));
        }
        out.into_iter()
    }

    /// SHA-256 over the config and every tensor's name, shape and bytes.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for (name, shape, data) in self.named_tensors() {
            hasher.update(name.as_bytes());
            for s in shape {
                hasher.update((s as u64).to_le_bytes());
            }
            for v in data {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Safetensors bytes; the config is embedded in the header metadata.
    pub fn to_safetensors_bytes(&self) -> Vec<u8> {
        let tensors: Vec<(String, Vec<usize>, &[f32])> = self.named_tensors().collect();
        let to_write: Vec<TensorToWrite<'_>> = tensors
            .iter()
            .map(|(name, shape, data)| TensorToWrite {
                name: name.clone(),
                shape: shape.clone(),
                data,
            })
            .collect();
        let mut meta = BTreeMap::new();
        meta.insert(
            CONFIG_METADATA_KEY.to_string(),
            serde_json::to_string(&self.config).expect("config serializes"),
        );
        meta.insert("format".to_string(), "pt".to_string());
        safetensors::serialize(&to_write, &meta)
    }

    /// Writes `model.safetensors` and `config.json` into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
        let weights = dir.join(WEIGHTS_FILE);
        fs::write(&weights, self.to_safetensors_bytes()).map_err(|e| ModelError::io(&weights, e))?;
        let config = dir.join(CONFIG_FILE);
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        fs::write(&config, json).map_err(|e| ModelError::io(&config, e))?;
        Ok(())
    }

    /// Parses safetensors bytes. `config` overrides any config embedded in
    /// the header; without either, the shape is inferred from the tensors
    /// except for the head count, which is then an error.
    pub fn from_safetensors_bytes(bytes: &[u8], config: Option<ModelConfig>) -> Result<Self, ModelError> {
        let st = SafeTensors::parse(bytes)?;
        let config = match config {
            Some(c) => c,
            None => match st.metadata().get(CONFIG_METADATA_KEY) {
                Some(json) => serde_json::from_str(json)
                    .map_err(|e| ModelError::Config(format!("embedded config does not parse: {e}")))?,
                None => infer_config(&st)?,
            },
        };
        config.validate()?;
        let prefix = if st.get("wte.weight").is_none() && st.get("transformer.wte.weight").is_some() {
            "transformer."
        } else {
            ""
        };
        let loader = Loader { st: &st, prefix };
        let (v, d, m) = (config.vocab_size, config.hidden_dim, config.mlp_width());
        let mut layers = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let n = |s: &str| format!("h.{i}.{s}");
            layers.push(LayerWeights {
                ln_1_gain: loader.vector(&n("ln_1.weight"), d)?,
                ln_1_bias: loader.vector(&n("ln_1.bias"), d)?,
                attn_qkv: loader.matrix(&n("attn.c_attn.weight"), d, 3 * d)?,
                attn_qkv_bias: loader.vector(&n("attn.c_attn.bias"), 3 * d)?,
                attn_out: loader.matrix(&n("attn.c_proj.weight"), d, d)?,
                attn_out_bias: loader.vector(&n("attn.c_proj.bias"), d)?,
                ln_2_gain: loader.vector(&n("ln_2.weight"), d)?,
                ln_2_bias: loader.vector(&n("ln_2.bias"), d)?,
                mlp_fc: loader.matrix(&n("mlp.c_fc.weight"), d, m)?,
                mlp_fc_bias: loader.vector(&n("mlp.c_fc.bias"), m)?,
                mlp_proj: loader.matrix(&n("mlp.c_proj.weight"), m, d)?,
                mlp_proj_bias: loader.vector(&n("mlp.c_proj.bias"), d)?,
            });
        }
        let lm_head = match st.get("lm_head.weight") {
            Some(_) => Some(Loader { st: &st, prefix: "" }.matrix("lm_head.weight", v, d)?),
            None if config.tie_lm_head => None,
            None => return Err(ModelError::MissingTensor("lm_head.weight".into())),
        };
        let parts = CheckpointParts {
            token_embedding: loader.matrix("wte.weight", v, d)?,
            position_embedding: loader.matrix("wpe.weight", config.max_positions, d)?,
            layers,
            final_norm_gain: loader.vector("ln_f.weight", d)?,
            final_norm_bias: loader.vector("ln_f.bias", d)?,
            lm_head,
        };
        Checkpoint::new(config, parts)
    }

    /// Loads from a model directory or a `.safetensors` file. A sidecar
    /// `config.json` next to the weights takes precedence over the embedded
    /// config.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let weights: PathBuf = if path.is_dir() {
            path.join(WEIGHTS_FILE)
        } else {
            path.to_path_buf()
        };
        let sidecar = weights.parent().map(|p| p.join(CONFIG_FILE));
        let config = match sidecar {
            Some(p) if p.is_file() => {
                let text = fs::read_to_string(&p).map_err(|e| ModelError::io(&p, e))?;
                Some(serde_json::from_str(&text).map_err(|e| ModelError::Config(format!("{}: {e}", p.display())))?)
            }
            _ => None,
        };
        let bytes = fs::read(&weights).map_err(|e| ModelError::io(&weights, e))?;
        Self::from_safetensors_bytes(&bytes, config)
    }
}

struct Loader<'s, 'a> {
    st: &'s SafeTensors<'a>,
    prefix: &'s str,
}

impl Loader<'_, '_> {
    fn fetch(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>, ModelError> {
        let full = format!("{}{name}", self.prefix);
        let view = self
            .st
            .get(&full)
            .ok_or_else(|| ModelError::MissingTensor(full.clone()))?;
        if view.shape != shape {
            return Err(ModelError::ShapeMismatch {
                name: full,
                expected: format!("{shape:?}"),
                actual: format!("{:?}", view.shape),
            });
        }
        view.to_f32()
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<WeightMatrix, ModelError> {
        let data = self.fetch(name, &[rows, cols])?;
        Ok(WeightMatrix::from_vec(rows, cols, data)?)
    }

    fn vector(&self, name: &str, len: usize) -> Result<Vec<f32>, ModelError> {
        self.fetch(name, &[len])
    }
}

/// Reads the shape off the tensors. The head count is not recoverable from
/// shapes, so it assumes the GPT-2 convention of 64-wide heads.
fn infer_config(st: &SafeTensors<'_>) -> Result<ModelConfig, ModelError> {
    let prefix = if st.get("wte.weight").is_none() {
        "transformer."
    } else {
        ""
    };
    let shape_of = |name: &str| -> Result<Vec<usize>, ModelError> {
        let full = format!("{prefix}{name}");
        st.get(&full)
            .map(|t| t.shape.clone())
            .ok_or(ModelError::MissingTensor(full))
    };
    let wte = shape_of("wte.weight")?;
    let wpe = shape_of("wpe.weight")?;
    if wte.len() != 2 || wpe.len() != 2 {
        return Err(ModelError::Config("embedding tensors must be 2-D".into()));
    }
    let n_layers = (0..)
        .take_while(|i| st.get(&format!("{prefix}h.{i}.ln_1.weight")).is_some())
        .count();
    let hidden_dim = wte[1];
    let mlp_dim = if n_layers > 0 {
        shape_of("h.0.mlp.c_fc.weight")?.get(1).copied()
    } else {
        None
    };
    if hidden_dim % 64 != 0 {
        return Err(ModelError::Config(format!(
            "no config found and hidden_dim {hidden_dim} is not a multiple of 64; cannot infer n_heads"
        )));
    }
    log::warn!("no model config found; inferring n_heads = hidden_dim / 64");
    Ok(ModelConfig {
        vocab_size: wte[0],
        hidden_dim,
        n_layers,
        n_heads: hidden_dim / 64,
        max_positions: wpe[0],
        ln_eps: 1e-5,
        mlp_dim: mlp_dim.filter(|&m| m != 4 * hidden_dim),
        tie_lm_head: st.get("lm_head.weight").is_none(),
        eos_token_id: None,
    })
}

fn check_matrix(name: &str, m: &WeightMatrix, rows: usize, cols: usize) -> Result<(), ModelError> {
    if m.shape() != (rows, cols) {
        return Err(ModelError::ShapeMismatch {
            name: name.to_string(),
            expected: format!("[{rows}, {cols}]"),
            actual: format!("[{}, {}]", m.rows(), m.cols()),
        });
    }
    Ok(())
}

fn check_vec(name: &str, v: &[f32], len: usize) -> Result<(), ModelError> {
    if v.len() != len {
        return Err(ModelError::ShapeMismatch {
            name: name.to_string(),
            expected: format!("[{len}]"),
            actual: format!("[{}]", v.len()),
        });
    }
    Ok(())
}
