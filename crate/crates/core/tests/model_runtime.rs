use std::collections::BTreeMap;

use slot_core::kernels::{Matrix, WeightMatrix};
use slot_core::model::safetensors::{serialize, TensorToWrite};
use slot_core::model::synthetic::{random_checkpoint, tiny_bundle, zero_parts, RandomInit};
use slot_core::model::{forward_hidden, lm_logits, Checkpoint, KvCache, ModelBundle, ModelConfig, ModelError, TokenId};
use slot_core::slot::{optimize_delta, SlotConfig};

fn tiny_checkpoint(seed: u64) -> Checkpoint {
    let config = ModelConfig::tiny(40, 16, 2, 4);
    random_checkpoint(config, &RandomInit::tiny(seed))
}

fn tokens(n: usize, seed: u32) -> Vec<TokenId> {
    (0..n as u32).map(|i| (i * 7 + seed * 13 + 3) % 40).collect()
}

/// Straight-line decoder for one position at a time: every quantity is
/// recomputed from the full prefix, with two-pass layer norm and explicit
/// loops.
fn naive_forward(ckpt: &Checkpoint, ids: &[TokenId]) -> Vec<Vec<f64>> {
    let cfg = ckpt.config();
    let (d, h) = (cfg.hidden_dim, cfg.n_heads);
    let hd = d / h;
    let w = |m: &WeightMatrix, r: usize, c: usize| f64::from(m.data()[r * m.cols() + c]);
    let ln = |x: &[f64], g: &[f32], b: &[f32]| -> Vec<f64> {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - mean) / (var + cfg.ln_eps).sqrt() * f64::from(g[j]) + f64::from(b[j]))
            .collect()
    };
    let affine = |x: &[f64], m: &WeightMatrix, bias: &[f32]| -> Vec<f64> {
        (0..m.cols())
            .map(|c| f64::from(bias[c]) + (0..m.rows()).map(|r| x[r] * w(m, r, c)).sum::<f64>())
            .collect()
    };
    let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());

    let mut xs: Vec<Vec<f64>> = ids
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            (0..d)
                .map(|j| w(ckpt.token_embedding(), t as usize, j) + w(ckpt.position_embedding(), p, j))
                .collect()
        })
        .collect();
    for layer in ckpt.layers() {
        let qkv: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                affine(
                    &ln(x, &layer.ln_1_gain, &layer.ln_1_bias),
                    &layer.attn_qkv,
                    &layer.attn_qkv_bias,
                )
            })
            .collect();
        let mut next = Vec::new();
        for (p, x) in xs.iter().enumerate() {
            let mut att = vec![0.0; d];
            for head in 0..h {
                let q = &qkv[p][head * hd..(head + 1) * hd];
                let scores: Vec<f64> = (0..=p)
                    .map(|s| {
                        let k = &qkv[s][d + head * hd..d + (head + 1) * hd];
                        q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt()
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                for (s, score) in scores.iter().enumerate() {
                    let weight = (score - max).exp() / z;
                    for c in 0..hd {
                        att[head * hd + c] += weight * qkv[s][2 * d + head * hd + c];
                    }
                }
            }
            let proj = affine(&att, &layer.attn_out, &layer.attn_out_bias);
            let x1: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
            let hidden: Vec<f64> = affine(
                &ln(&x1, &layer.ln_2_gain, &layer.ln_2_bias),
                &layer.mlp_fc,
                &layer.mlp_fc_bias,
            )
            .into_iter()
            .map(gelu)
            .collect();
            let out = affine(&hidden, &layer.mlp_proj, &layer.mlp_proj_bias);
            next.push(x1.iter().zip(&out).map(|(a, b)| a + b).collect());
        }
        xs = next;
    }
    let (g, b) = ckpt.final_norm();
    xs.iter().map(|x| ln(x, g, b)).collect()
}

#[test]
fn forward_matches_naive_oracle() {
    let ckpt = tiny_checkpoint(1);
    let ids = tokens(4, 1);
    let h = forward_hidden(&ckpt, &ids, None).unwrap();
    let oracle = naive_forward(&ckpt, &ids);
    for (i, row) in oracle.iter().enumerate() {
        for (a, b) in h.row(i).iter().zip(row) {
            assert!((a - b).abs() <= 1e-9, "row {i}: {a} vs {b}");
        }
    }
}

#[test]
fn incremental_decoding_matches_full_recompute() {
    let ckpt = tiny_checkpoint(2);
    let ids = tokens(64, 2);
    let full = forward_hidden(&ckpt, &ids, None).unwrap();
    let mut cache = KvCache::new(ckpt.config());
    for (i, &t) in ids.iter().enumerate() {
        let row = forward_hidden(&ckpt, &[t], Some(&mut cache)).unwrap();
        assert_eq!(cache.len(), i + 1);
        assert!(
            row.row(0).iter().zip(full.row(i)).all(|(a, b)| (a - b).abs() <= 1e-9),
            "position {i}"
        );
    }
    // Chunked prefill followed by single steps lands in the same place.
    let mut chunked = KvCache::new(ckpt.config());
    forward_hidden(&ckpt, &ids[..40], Some(&mut chunked)).unwrap();
    let rest = forward_hidden(&ckpt, &ids[40..], Some(&mut chunked)).unwrap();
    assert!(rest.max_abs_diff(&full.slice_rows(40, 64)) <= 1e-9);
}

#[test]
fn appending_tokens_leaves_earlier_rows_unchanged() {
    let ckpt = tiny_checkpoint(3);
    let ids = tokens(12, 3);
    let prefix = forward_hidden(&ckpt, &ids[..7], None).unwrap();
    let longer = forward_hidden(&ckpt, &ids, None).unwrap();
    assert!(longer.slice_rows(0, 7).max_abs_diff(&prefix) <= 1e-9);
}

#[test]
fn zero_weights_give_final_norm_bias() {
    let config = ModelConfig::tiny(5, 4, 2, 2);
    let mut parts = zero_parts(&config);
    parts.final_norm_bias = vec![0.5, -1.0, 0.25, 2.0];
    let ckpt = Checkpoint::new(config, parts).unwrap();
    let h = forward_hidden(&ckpt, &[3], None).unwrap();
    assert_eq!(h.row(0), &[0.5, -1.0, 0.25, 2.0]);
}

#[test]
fn logits_zero_and_triple_loop_oracle() {
    let ckpt = tiny_checkpoint(4);
    let zero = lm_logits(&ckpt, &Matrix::zeros(2, 16)).unwrap();
    assert!(zero.data().iter().all(|&z| z == 0.0));

    let h = forward_hidden(&ckpt, &tokens(5, 4), None).unwrap();
    let logits = lm_logits(&ckpt, &h).unwrap();
    let head = ckpt.lm_head();
    for i in 0..5 {
        for v in 0..head.rows() {
            let mut s = 0.0;
            for j in 0..16 {
                s += h.get(i, j) * f64::from(head.row(v)[j]);
            }
            assert!((logits.get(i, v) - s).abs() < 1e-12);
        }
    }
    assert!(lm_logits(&ckpt, &Matrix::zeros(1, 15)).is_err());
}

#[test]
fn context_overflow_reports_limit() {
    let ckpt = tiny_checkpoint(5);
    let limit = ckpt.config().max_positions;
    let err = forward_hidden(&ckpt, &vec![1; limit + 1], None).unwrap_err();
    assert!(matches!(err, ModelError::ContextOverflow { limit: l, .. } if l == limit));
    assert!(err.to_string().contains(&limit.to_string()));
    assert!(matches!(forward_hidden(&ckpt, &[], None), Err(ModelError::EmptyInput)));
    assert!(matches!(
        forward_hidden(&ckpt, &[40], None),
        Err(ModelError::TokenOutOfRange { id: 40, .. })
    ));
}

#[test]
fn save_load_forward_round_trip() {
    let bundle = tiny_bundle(16, 2, 2, 6);
    let dir = tempfile::tempdir().unwrap();
    bundle.save_dir(dir.path()).unwrap();
    let loaded = ModelBundle::load_dir(dir.path()).unwrap();
    assert_eq!(loaded.checkpoint.fingerprint(), bundle.checkpoint.fingerprint());
    let ids = bundle.tokenizer.encode("The quick brown fox jumps");
    assert_eq!(loaded.tokenizer.encode("The quick brown fox jumps"), ids);
    let a = forward_hidden(&bundle.checkpoint, &ids, None).unwrap();
    let b = forward_hidden(&loaded.checkpoint, &ids, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(loaded.eos_id(), bundle.eos_id());
}

#[test]
fn truncated_file_names_header_failure() {
    let ckpt = tiny_checkpoint(7);
    let bytes = ckpt.to_safetensors_bytes();
    for cut in [4, 20] {
        let err = Checkpoint::from_safetensors_bytes(&bytes[..cut], None).unwrap_err();
        assert!(matches!(err, ModelError::Header(_)), "{err}");
        assert!(err.to_string().contains("header"), "{err}");
    }
    let err = Checkpoint::from_safetensors_bytes(&bytes[..bytes.len() - 10], None).unwrap_err();
    assert!(
        err.to_string().contains("ln_f") || err.to_string().contains("offset"),
        "{err}"
    );
}

#[test]
fn tied_head_aliases_token_embedding() {
    let mut config = ModelConfig::tiny(40, 16, 1, 2);
    config.tie_lm_head = true;
    let ckpt = random_checkpoint(config.clone(), &RandomInit::tiny(8));
    let loaded = Checkpoint::from_safetensors_bytes(&ckpt.to_safetensors_bytes(), None).unwrap();
    assert!(loaded.lm_head_is_tied());
    assert!(std::ptr::eq(
        loaded.lm_head().data().as_ptr(),
        loaded.token_embedding().data().as_ptr()
    ));

    config.tie_lm_head = false;
    let err = Checkpoint::from_safetensors_bytes(&ckpt.to_safetensors_bytes(), Some(config)).unwrap_err();
    assert!(matches!(err, ModelError::MissingTensor(ref n) if n == "lm_head.weight"));
}

fn rewrite(ckpt: &Checkpoint, edit: impl Fn(&str, &mut Vec<usize>, &mut Vec<f32>) -> bool) -> Vec<u8> {
    let owned: Vec<(String, Vec<usize>, Vec<f32>)> = ckpt
        .named_tensors()
        .filter_map(|(n, mut s, d)| {
            let mut d = d.to_vec();
            edit(&n, &mut s, &mut d).then_some((n, s, d))
        })
        .collect();
    let tensors: Vec<TensorToWrite<'_>> = owned
        .iter()
        .map(|(n, s, d)| TensorToWrite {
            name: n.clone(),
            shape: s.clone(),
            data: d,
        })
        .collect();
    serialize(&tensors, &BTreeMap::new())
}

#[test]
fn load_errors_name_the_tensor() {
    let ckpt = tiny_checkpoint(9);
    let config = Some(ckpt.config().clone());
    let missing = rewrite(&ckpt, |n, _, _| n != "h.1.mlp.c_fc.bias");
    let err = Checkpoint::from_safetensors_bytes(&missing, config.clone()).unwrap_err();
    assert!(err.to_string().contains("h.1.mlp.c_fc.bias"), "{err}");

    let reshaped = rewrite(&ckpt, |n, s, _| {
        if n == "h.0.attn.c_proj.weight" {
            s.swap(0, 1);
            s[0] *= 2;
            s[1] /= 2;
        }
        true
    });
    let err = Checkpoint::from_safetensors_bytes(&reshaped, config.clone()).unwrap_err();
    assert!(
        matches!(&err, ModelError::ShapeMismatch { name, .. } if name == "h.0.attn.c_proj.weight"),
        "{err}"
    );

    // Inferred config from tensor shapes alone (64-wide heads are not
    // possible at d = 16, so inference must refuse).
    let bare = rewrite(&ckpt, |_, _, _| true);
    assert!(Checkpoint::from_safetensors_bytes(&bare, None).is_err());
}

#[test]
fn hugging_face_prefix_and_names_load() {
    let ckpt = tiny_checkpoint(10);
    let prefixed: Vec<(String, Vec<usize>, Vec<f32>)> = ckpt
        .named_tensors()
        .map(|(n, s, d)| (format!("transformer.{n}"), s, d.to_vec()))
        .collect();
    let tensors: Vec<TensorToWrite<'_>> = prefixed
        .iter()
        .map(|(n, s, d)| TensorToWrite {
            name: n.clone(),
            shape: s.clone(),
            data: d,
        })
        .collect();
    let bytes = serialize(&tensors, &BTreeMap::new());
    let loaded = Checkpoint::from_safetensors_bytes(&bytes, Some(ckpt.config().clone())).unwrap();
    assert_eq!(loaded.fingerprint(), ckpt.fingerprint());
}

#[test]
fn weights_unchanged_by_forward_and_adaptation() {
    let bundle = tiny_bundle(16, 2, 2, 11);
    let before = bundle.checkpoint.fingerprint();
    let ids = bundle.tokenizer.encode("A farmer has 12 cows");
    for _ in 0..3 {
        forward_hidden(&bundle.checkpoint, &ids, None).unwrap();
        optimize_delta(&bundle.checkpoint, &ids, &SlotConfig::with_steps(5)).unwrap();
    }
    assert_eq!(bundle.checkpoint.fingerprint(), before);
}
