use super::*;
use crate::data::{HotwordList, Lang, Phrase};
use crate::numerics::{Tape, Tensor};

fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_feat: 4,
        ffn_dim: 12,
        adapter_bottleneck: 3,
        conv_kernel: 3,
        vocab_size: 12,
        max_positions: 32,
        ..ModelConfig::default()
    }
}

fn features(t: usize, d: usize, seed: u64) -> Tensor {
    let data = (0..t * d)
        .map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.37)).sin())
        .collect();
    Tensor::new(vec![t, d], data).unwrap()
}

fn phrase(tokens: &[usize]) -> Phrase {
    Phrase {
        lang: Lang::L2,
        tokens: tokens.to_vec(),
    }
}

#[test]
fn encode_shapes_and_repeats() {
    let model = Model::new(ModelConfig::default(), 1).unwrap();
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);
    let h = model.encode(&mut tape, &mut s, &features(1, 16, 1)).unwrap();
    assert_eq!(tape.shape(h), &[1, 64]);

    let cfg = ModelConfig {
        use_positional: false,
        ..small_config()
    };
    let model = Model::new(cfg, 2).unwrap();
    let row = [0.3, -1.2, 0.5, 2.0];
    let rep = Tensor::new(vec![5, 4], row.repeat(5)).unwrap();
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);
    let h = model.encode(&mut tape, &mut s, &rep).unwrap();
    let out = tape.value(h);
    for r in 1..5 {
        assert_eq!(out.row(r), out.row(0));
    }
    assert!(matches!(
        model.encode(&mut tape, &mut s, &features(3, 5, 0)),
        Err(crate::XcbError::Input(_))
    ));
}

#[test]
fn adapter_zero_in_zero_out() {
    let cfg = small_config();
    let mut model = Model::new(cfg.clone(), 3).unwrap();
    for name in ["xcb.adapter.down.b", "xcb.adapter.up.b", "xcb.adapter.ln1.b", "xcb.adapter.ln2.b"] {
        let shape = model.params.get(name).unwrap().shape().to_vec();
        model.params.insert(name, Tensor::zeros(&shape).unwrap());
    }
    for t in [1, 4, 9] {
        let mut tape = Tape::new();
        let mut s = model.session(GradPolicy::None);
        let zero = tape.constant(&Tensor::zeros(&[t, cfg.d_model]).unwrap());
        let out = model.lb_adapter(&mut tape, &mut s, zero).unwrap();
        assert_eq!(tape.shape(out), &[t, cfg.d_model]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);
    let wrong = tape.constant(&Tensor::zeros(&[2, cfg.d_model + 1]).unwrap());
    assert!(model.lb_adapter(&mut tape, &mut s, wrong).is_err());
}

#[test]
fn gate_with_zero_weights_is_half_half() {
    let cfg = small_config();
    let mut model = Model::new(cfg.clone(), 4).unwrap();
    for name in ["xcb.gate.w_h", "xcb.gate.b_h", "xcb.gate.w_lba", "xcb.gate.b_lba"] {
        let shape = model.params.get(name).unwrap().shape().to_vec();
        model.params.insert(name, Tensor::zeros(&shape).unwrap());
    }
    let h = features(3, cfg.d_model, 5);
    let l = features(3, cfg.d_model, 6);
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);
    let hv = tape.constant(&h);
    let lv = tape.constant(&l);
    let g = model.bm_gate(&mut tape, &mut s, hv, lv).unwrap();
    for ((e, a), b) in tape.value(g.e_lb).data().iter().zip(h.data()).zip(l.data()) {
        assert!((e - (a + 0.5 * a + 0.5 * b)).abs() < 1e-15);
    }
    let bad = tape.constant(&features(2, cfg.d_model, 1));
    assert!(model.bm_gate(&mut tape, &mut s, hv, bad).is_err());
}

#[test]
fn gate_closure_leaves_scaled_h() {
    let cfg = small_config();
    let mut model = Model::new(cfg.clone(), 4).unwrap();
    let d = cfg.d_model;
    model.params.insert("xcb.gate.w_lba", Tensor::zeros(&[d, d]).unwrap());
    model.params.insert("xcb.gate.b_lba", Tensor::full(&[d], -1000.0).unwrap());
    let h = features(3, d, 5);
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);
    let hv = tape.constant(&h);
    let lv = tape.constant(&Tensor::zeros(&[3, d]).unwrap());
    let g = model.bm_gate(&mut tape, &mut s, hv, lv).unwrap();
    let gh = tape.value(g.g_h).data().to_vec();
    for (i, e) in tape.value(g.e_lb).data().iter().enumerate() {
        assert_eq!(*e, h.data()[i] + gh[i] * h.data()[i]);
    }
}

/// Predictor reading coordinate 0 of E directly: `w_t = sigmoid(E[t,0])`.
fn probe_model() -> Model {
    let cfg = small_config();
    let mut model = Model::new(cfg.clone(), 5).unwrap();
    let mut w = Tensor::zeros(&[cfg.d_model, 1]).unwrap();
    w.data_mut()[0] = 1.0;
    model.params.insert("predictor.w", w);
    model.params.insert("predictor.b", Tensor::zeros(&[1]).unwrap());
    model
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn frames_with_weights(w: &[f64], d: usize) -> Tensor {
    let mut data = Vec::new();
    for (t, &p) in w.iter().enumerate() {
        data.push(logit(p));
        data.extend((1..d).map(|j| (t * d + j) as f64 * 0.1));
    }
    Tensor::new(vec![w.len(), d], data).unwrap()
}

#[test]
fn cif_threshold_walk_and_training_count() {
    let model = probe_model();
    let d = model.config.d_model;
    let e = frames_with_weights(&[0.4, 0.7, 0.9], d);
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);
    let ev = tape.constant(&e);
    let out = model.cif_predict(&mut tape, &mut s, ev, None).unwrap();
    assert_eq!(tape.shape(out.fired), &[2, d]);
    assert_eq!(out.fire_frames, vec![1, 2]);
    assert!((tape.value(out.weight_sum).item() - 2.0).abs() < 1e-12);

    for len in [1, 3, 7] {
        let o = model.cif_predict(&mut tape, &mut s, ev, Some(len)).unwrap();
        assert_eq!(tape.shape(o.fired)[0], len);
    }
    assert!(matches!(
        model.cif_predict(&mut tape, &mut s, ev, Some(0)),
        Err(crate::XcbError::Input(_))
    ));

    let quiet = tape.constant(&frames_with_weights(&[0.1, 0.1], d));
    assert!(matches!(
        model.cif_predict(&mut tape, &mut s, quiet, None),
        Err(crate::XcbError::EmptyFiring(_))
    ));
}

#[test]
fn hotword_embedding_shape_single_token_and_permutation() {
    let model = Model::new(small_config(), 6).unwrap();
    let d = model.config.d_model;
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);

    let single = HotwordList::from_phrases(vec![phrase(&[7])]);
    let hw = model.embed_hotwords(&mut tape, &mut s, &single).unwrap();
    assert_eq!(tape.shape(hw), &[2, d]);
    let emb = model.params.get("bias.embed").unwrap().row(7).to_vec();
    let w = model.params.get("bias.proj.w").unwrap();
    let b = model.params.get("bias.proj.b").unwrap();
    for j in 0..d {
        let expect: f64 = (0..d).map(|k| emb[k] * w.data()[k * d + j]).sum::<f64>() + b.data()[j];
        assert!((tape.value(hw).row(0)[j] - expect).abs() < 1e-12);
    }

    let a = HotwordList::from_phrases(vec![phrase(&[3, 4]), phrase(&[5]), phrase(&[6, 7, 8])]);
    let b = HotwordList::from_phrases(vec![phrase(&[6, 7, 8]), phrase(&[3, 4]), phrase(&[5])]);
    let ea = model.embed_hotwords(&mut tape, &mut s, &a).unwrap();
    let eb = model.embed_hotwords(&mut tape, &mut s, &b).unwrap();
    assert_eq!(tape.shape(ea), &[4, d]);
    let (ta, tb) = (tape.value(ea), tape.value(eb));
    assert_eq!(ta.row(0), tb.row(1));
    assert_eq!(ta.row(1), tb.row(2));
    assert_eq!(ta.row(2), tb.row(0));
    assert_eq!(ta.row(3), tb.row(3));

    let empty_phrase = HotwordList::from_phrases(vec![phrase(&[])]);
    assert!(model.embed_hotwords(&mut tape, &mut s, &empty_phrase).is_err());
}

#[test]
fn bias_decode_attention() {
    let model = Model::new(small_config(), 7).unwrap();
    let d = model.config.d_model;
    let mut tape = Tape::new();
    let mut s = model.session(GradPolicy::None);
    let acoustic = tape.constant(&features(4, d, 2));
    let only_nobias = model.embed_hotwords(&mut tape, &mut s, &HotwordList::empty()).unwrap();
    let out = model.bias_decode(&mut tape, &mut s, acoustic, only_nobias).unwrap();
    assert_eq!(tape.shape(out.logits), &[4, model.config.vocab_size]);
    assert!(tape.value(out.attention).data().iter().all(|&a| a == 1.0));

    let list = HotwordList::from_phrases(vec![phrase(&[3]), phrase(&[4, 5])]);
    let hw = model.embed_hotwords(&mut tape, &mut s, &list).unwrap();
    let out = model.bias_decode(&mut tape, &mut s, acoustic, hw).unwrap();
    let att = tape.value(out.attention);
    for r in 0..att.rows() {
        assert!((att.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn decode_single_token_deterministic() {
    let model = Model::new(small_config(), 8).unwrap();
    let run = || {
        let mut tape = Tape::new();
        let mut s = model.session(GradPolicy::None);
        let a = tape.constant(&features(1, model.config.d_model, 3));
        let out = model.decode(&mut tape, &mut s, a).unwrap();
        tape.value(out).clone()
    };
    let a = run();
    assert_eq!(a.shape(), &[1, model.config.vocab_size]);
    assert_eq!(a, run());
}

#[test]
fn inactive_ignores_xcb_parameters_and_empty_list_is_valid() {
    let model = Model::new(small_config(), 9).unwrap();
    let feats = features(12, 4, 4);
    let list = HotwordList::from_phrases(vec![phrase(&[3, 4])]);
    let before = model.infer_detailed(&feats, &list, InferenceMode::Inactive).unwrap();
    let mut perturbed = model.clone();
    perturbed.params.randomize_xcb(123, 3.0);
    let after = perturbed.infer_detailed(&feats, &list, InferenceMode::Inactive).unwrap();
    assert_eq!(before, after);
    model.infer(&feats, &HotwordList::empty(), InferenceMode::Active).unwrap();
}
