use super::*;
use crate::corpus::{load_embeddings, Split, SyntheticConfig};
use crate::tensor::{masked_softmax, sigmoid};
use approx::assert_abs_diff_eq;

fn tiny_vocab() -> Vocabulary {
    Vocabulary::build(&["aa bb cc dd ee ff gg"], 1).unwrap()
}

fn tiny_config(kind: EncoderKind) -> EncoderConfig {
    EncoderConfig {
        embedding_dim: 5,
        hidden_size: 8,
        kernel_sizes: vec![1, 3],
        attention_dim: 4,
        label_count: 1,
        ..EncoderConfig::new(kind)
    }
}

fn tiny_model(kind: EncoderKind, seed: u64) -> (Model, Vocabulary) {
    let vocab = tiny_vocab();
    let emb = load_embeddings(None, &vocab, 5, seed).unwrap();
    let model = Model::new(tiny_config(kind), &emb, &vocab, seed + 1).unwrap();
    (model, vocab)
}

fn doc(tokens: Vec<usize>) -> Document {
    Document {
        id: "t".into(),
        tokens,
        labels: vec![1],
        split: Split::Train,
    }
}

#[test]
fn config_validation() {
    let mut cfg = tiny_config(EncoderKind::Bilstm);
    cfg.hidden_size = 7;
    assert!(cfg.validate().is_err());
    let mut cfg = tiny_config(EncoderKind::Cnn);
    cfg.kernel_sizes = vec![2];
    assert!(cfg.validate().is_err());
    cfg.kernel_sizes = vec![1, 3, 5];
    cfg.hidden_size = 8;
    assert!(cfg.validate().is_err());
    assert!(tiny_config(EncoderKind::Projection).validate().is_ok());
}

#[test]
fn pad_embedding_row_is_zero() {
    let (model, _) = tiny_model(EncoderKind::Projection, 3);
    let table = model.params.get("embedding").unwrap();
    assert!(table.row(PAD_INDEX).iter().all(|&v| v == 0.0));
}

#[test]
fn zeroed_projection_and_cnn_give_zero_hidden() {
    let (mut model, _) = tiny_model(EncoderKind::Projection, 4);
    model.params.get_mut("proj.w").unwrap().values_mut().fill(0.0);
    let out = model.forward(&doc(vec![3, 4, 5])).unwrap();
    assert!(out.hidden.values().iter().all(|&v| v == 0.0));

    let (mut model, _) = tiny_model(EncoderKind::Cnn, 4);
    for k in [1, 3] {
        model
            .params
            .get_mut(&format!("cnn.k{k}.w"))
            .unwrap()
            .values_mut()
            .fill(0.0);
    }
    let out = model.forward(&doc(vec![3, 4, 5])).unwrap();
    assert!(out.hidden.values().iter().all(|&v| v == 0.0));
}

#[test]
fn bilstm_matches_hand_rolled_recurrence() {
    let (model, _) = tiny_model(EncoderKind::Bilstm, 9);
    let tokens = vec![3, 5, 4];
    let out = model.forward(&doc(tokens.clone())).unwrap();

    // Independent step-by-step recurrence on plain vectors.
    let h_size = model.config.direction_size();
    let emb = model.params.get("embedding").unwrap();
    let step = |dir: &str, x: &[f64], h: &[f64], c: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let w_x = model.params.get(&format!("lstm.{dir}.w_x")).unwrap();
        let w_h = model.params.get(&format!("lstm.{dir}.w_h")).unwrap();
        let b = model.params.get(&format!("lstm.{dir}.b")).unwrap();
        let mut gates = b.values().to_vec();
        for (r, gate) in gates.iter_mut().enumerate() {
            for (j, &xv) in x.iter().enumerate() {
                *gate += w_x.values()[r * x.len() + j] * xv;
            }
            for (j, &hv) in h.iter().enumerate() {
                *gate += w_h.values()[r * h.len() + j] * hv;
            }
        }
        let mut new_c = vec![0.0; h_size];
        let mut new_h = vec![0.0; h_size];
        for j in 0..h_size {
            let i = sigmoid(gates[j]);
            let f = sigmoid(gates[h_size + j]);
            let g = gates[2 * h_size + j].tanh();
            let o = sigmoid(gates[3 * h_size + j]);
            new_c[j] = f * c[j] + i * g;
            new_h[j] = o * new_c[j].tanh();
        }
        (new_h, new_c)
    };

    let mut expected = vec![vec![0.0; 2 * h_size]; tokens.len()];
    let mut h = vec![0.0; h_size];
    let mut c = vec![0.0; h_size];
    for (t, &tok) in tokens.iter().enumerate() {
        let (nh, nc) = step("fwd", emb.row(tok), &h, &c);
        h = nh;
        c = nc;
        expected[t][..h_size].copy_from_slice(&h);
    }
    h.fill(0.0);
    c.fill(0.0);
    for (t, &tok) in tokens.iter().enumerate().rev() {
        let (nh, nc) = step("bwd", emb.row(tok), &h, &c);
        h = nh;
        c = nc;
        expected[t][h_size..].copy_from_slice(&h);
    }

    for t in 0..tokens.len() {
        for (a, e) in out.hidden.row(t).iter().zip(&expected[t]) {
            assert_abs_diff_eq!(*a, *e, epsilon = 1e-12);
        }
    }
}

#[test]
fn forward_attention_matches_standalone_op() {
    for kind in [EncoderKind::Bilstm, EncoderKind::Cnn, EncoderKind::Projection] {
        let (model, _) = tiny_model(kind, 21);
        let out = model.forward(&doc(vec![3, 4, 5, 6])).unwrap();
        let alpha = attend_additive(
            &out.hidden,
            &model.attention_params().unwrap(),
            Some(&[true; 4]),
        )
        .unwrap();
        for (a, b) in out.attention.iter().zip(&alpha) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
        let ctx = aggregate_context(&out.hidden, &alpha).unwrap();
        let yhat = decode(
            &ctx,
            model.params.get("dec.w").unwrap(),
            model.params.get("dec.b").unwrap().values(),
        )
        .unwrap();
        assert_abs_diff_eq!(out.prediction[0], yhat[0], epsilon = 1e-12);
        assert!(out.prediction[0] > 0.0 && out.prediction[0] < 1.0);
        let total: f64 = out.attention.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
    }
}

#[test]
fn override_with_own_attention_is_identity() {
    let (model, _) = tiny_model(EncoderKind::Projection, 33);
    let d = doc(vec![3, 4, 5, 6]);
    let base = model.forward(&d).unwrap();
    let again = model
        .forward_with_override(&d, &AttentionOverride::Shared(base.attention.clone()))
        .unwrap();
    assert_eq!(base.prediction[0].to_bits(), again.prediction[0].to_bits());
}

#[test]
fn attention_none_equals_uniform_override() {
    let mut cfg = tiny_config(EncoderKind::Projection);
    cfg.attention = AttentionKind::None;
    let vocab = tiny_vocab();
    let emb = load_embeddings(None, &vocab, 5, 2).unwrap();
    let model = Model::new(cfg, &emb, &vocab, 3).unwrap();
    let d = doc(vec![3, 4, 5]);
    let pooled = model.forward(&d).unwrap();
    let uniform = model
        .forward_with_override(&d, &AttentionOverride::Shared(vec![1.0 / 3.0; 3]))
        .unwrap();
    assert_eq!(
        pooled.prediction[0].to_bits(),
        uniform.prediction[0].to_bits()
    );
}

#[test]
fn one_hot_override_decodes_single_position() {
    let (model, _) = tiny_model(EncoderKind::Cnn, 5);
    let d = doc(vec![3, 4, 5]);
    let out = model
        .forward_with_override(&d, &AttentionOverride::Shared(vec![0.0, 1.0, 0.0]))
        .unwrap();
    let expected = decode(
        out.hidden.row(1),
        model.params.get("dec.w").unwrap(),
        model.params.get("dec.b").unwrap().values(),
    )
    .unwrap();
    assert_abs_diff_eq!(out.prediction[0], expected[0], epsilon = 1e-12);
}

#[test]
fn override_never_reads_attention_params() {
    let (mut model, _) = tiny_model(EncoderKind::Projection, 6);
    for name in ["attn.w1", "attn.b", "attn.v"] {
        model
            .params
            .get_mut(name)
            .unwrap()
            .values_mut()
            .fill(f64::NAN);
    }
    let d = doc(vec![3, 4]);
    assert!(model.forward(&d).is_err());
    let out = model
        .forward_with_override(&d, &AttentionOverride::Shared(vec![0.25, 0.75]))
        .unwrap();
    assert!(out.prediction[0].is_finite());
}

#[test]
fn override_length_is_checked() {
    let (model, _) = tiny_model(EncoderKind::Projection, 7);
    let d = doc(vec![3, 4, 5]);
    assert!(model
        .forward_with_override(&d, &AttentionOverride::Shared(vec![0.5, 0.5]))
        .is_err());
}

#[test]
fn per_label_override_scores_each_label_with_its_own_distribution() {
    let mut cfg = tiny_config(EncoderKind::Projection);
    cfg.label_count = 2;
    let vocab = tiny_vocab();
    let emb = load_embeddings(None, &vocab, 5, 8).unwrap();
    let model = Model::new(cfg, &emb, &vocab, 9).unwrap();
    let d = Document {
        id: "t".into(),
        tokens: vec![3, 4, 5],
        labels: vec![1, 0],
        split: Split::Train,
    };
    let a0 = vec![1.0, 0.0, 0.0];
    let a1 = vec![0.0, 0.0, 1.0];
    let out = model
        .forward_with_override(&d, &AttentionOverride::PerLabel(vec![a0.clone(), a1.clone()]))
        .unwrap();
    let shared0 = model
        .forward_with_override(&d, &AttentionOverride::Shared(a0))
        .unwrap();
    let shared1 = model
        .forward_with_override(&d, &AttentionOverride::Shared(a1))
        .unwrap();
    assert_abs_diff_eq!(out.prediction[0], shared0.prediction[0], epsilon = 1e-12);
    assert_abs_diff_eq!(out.prediction[1], shared1.prediction[1], epsilon = 1e-12);
}

#[test]
fn masked_positions_get_zero_attention() {
    let (model, _) = tiny_model(EncoderKind::Projection, 11);
    let d = doc(vec![3, PAD_INDEX, 4]);
    let out = model.forward(&d).unwrap();
    assert_eq!(out.attention[1], 0.0);
    let total: f64 = out.attention.iter().sum();
    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);

    let all_pad = doc(vec![PAD_INDEX, PAD_INDEX]);
    assert!(matches!(model.forward(&all_pad), Err(Error::AllMasked)));
}

#[test]
fn softmax_is_shift_invariant_within_tolerance() {
    let scores = [0.3, -1.2, 2.0, 0.0];
    let shifted: Vec<f64> = scores.iter().map(|s| s + 123.456).collect();
    let a = masked_softmax(&scores, None).unwrap();
    let b = masked_softmax(&shifted, None).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_abs_diff_eq!(*x, *y, epsilon = 1e-9);
    }
}

#[test]
fn projection_forward_is_bit_exact_under_token_permutation() {
    let (model, _) = tiny_model(EncoderKind::Projection, 13);
    let tokens = vec![3, 4, 5, 6, 3];
    let base = model.forward(&doc(tokens.clone())).unwrap();

    let perm = [4usize, 2, 0, 3, 1];
    let permuted: Vec<usize> = perm.iter().map(|&p| tokens[p]).collect();
    let out = model.forward(&doc(permuted)).unwrap();

    assert_eq!(base.prediction[0].to_bits(), out.prediction[0].to_bits());
    for (j, (a, b)) in base.context.iter().zip(&out.context).enumerate() {
        assert_eq!(a.to_bits(), b.to_bits(), "context {j}");
    }
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(base.attention[p].to_bits(), out.attention[i].to_bits());
    }
}

#[test]
fn final_state_pooling_selects_boundary_states() {
    let mut cfg = tiny_config(EncoderKind::Bilstm);
    cfg.attention = AttentionKind::None;
    cfg.pooling = PoolingKind::FinalState;
    let vocab = tiny_vocab();
    let emb = load_embeddings(None, &vocab, 5, 14).unwrap();
    let model = Model::new(cfg, &emb, &vocab, 15).unwrap();
    let d = doc(vec![3, 4, 5]);
    let out = model.forward(&d).unwrap();
    let h = model.config.direction_size();
    assert_eq!(&out.context[..h], &out.hidden.row(2)[..h]);
    assert_eq!(&out.context[h..], &out.hidden.row(0)[h..]);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let (model, _) = tiny_model(EncoderKind::Cnn, 17);
    model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    assert_eq!(loaded.vocab_fingerprint, model.vocab_fingerprint);
    let d = doc(vec![3, 4, 5]);
    let a = model.forward(&d).unwrap();
    let b = loaded.forward(&d).unwrap();
    assert_eq!(a.prediction[0].to_bits(), b.prediction[0].to_bits());
}

#[test]
fn synthetic_pipeline_smoke() {
    let cfg = SyntheticConfig {
        n_docs: 20,
        doc_len: 6,
        vocab_size: 12,
        trigger_words: vec!["zephyr".into()],
        label_rule: crate::corpus::LabelRule::AnyTrigger,
        seed: 19,
    };
    let data = crate::corpus::generate_synthetic_corpus(&cfg).unwrap();
    let emb = load_embeddings(None, &data.vocabulary, 5, 20).unwrap();
    let mut mcfg = tiny_config(EncoderKind::Bilstm);
    mcfg.embedding_dim = 5;
    let model = Model::new(mcfg, &emb, &data.vocabulary, 21).unwrap();
    for d in &data.documents {
        let out = model.forward(d).unwrap();
        assert_eq!(out.prediction.len(), 1);
    }
}
