mod oracles;

use oracles::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xcb_core::data::{HotwordList, Lang, Phrase};
use xcb_core::model::cif::{inference_intervals, training_intervals};
use xcb_core::model::Model;
use xcb_core::numerics::{Tape, Tensor};
use xcb_core::training::LossOptions;

const OP_TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check(name: &str, inputs: &[Tensor], build: impl Fn(&mut Tape, &[xcb_core::numerics::Var]) -> xcb_core::Result<xcb_core::numerics::Var>) {
    let err = op_grad_error(inputs, 99, build);
    assert!(err < OP_TOL, "{name}: max relative error {err:e}");
}

#[test]
fn elementwise_ops() {
    let mut r = rng(1);
    let a = random_tensor(&mut r, &[3, 4], -2.0, 2.0);
    let b = random_tensor(&mut r, &[3, 4], -2.0, 2.0);
    let row = random_tensor(&mut r, &[4], -2.0, 2.0);
    // Keep away from the kinks of relu and abs.
    let away = Tensor::new(a.shape().to_vec(), a.data().iter().map(|v| if v.abs() < 0.1 { v + 0.3 } else { *v }).collect()).unwrap();
    let pos = random_tensor(&mut r, &[2, 3], 0.5, 2.0);
    check("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
    check("add broadcast", &[a.clone(), row.clone()], |t, v| t.add(v[0], v[1]));
    check("mul", &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
    check("mul broadcast", &[a.clone(), row], |t, v| t.mul(v[0], v[1]));
    check("scale", &[a.clone()], |t, v| t.scale(v[0], -1.7));
    check("add_scalar", &[a.clone()], |t, v| t.add_scalar(v[0], 0.4));
    check("relu", &[away.clone()], |t, v| t.relu(v[0]));
    check("abs", &[away], |t, v| t.abs(v[0]));
    check("sigmoid", &[a.clone()], |t, v| t.sigmoid(v[0]));
    check("reciprocal", &[pos], |t, v| t.reciprocal(v[0]));
    check("sum", &[a.clone()], |t, v| t.sum(v[0]));
    let s = Tensor::scalar(1.3);
    check("mul_scalar_var", &[a, s], |t, v| t.mul_scalar_var(v[0], v[1]));
}

#[test]
fn matrix_and_row_ops() {
    let mut r = rng(2);
    let a = random_tensor(&mut r, &[3, 4], -1.0, 1.0);
    let b = random_tensor(&mut r, &[4, 2], -1.0, 1.0);
    let c = random_tensor(&mut r, &[2, 4], -1.0, 1.0);
    check("matmul", &[a.clone(), b], |t, v| t.matmul(v[0], v[1]));
    check("transpose", &[a.clone()], |t, v| t.transpose(v[0]));
    check("softmax", &[a.clone()], |t, v| t.softmax(v[0]));
    check("reshape", &[a.clone()], |t, v| t.reshape(v[0], vec![2, 6]));
    check("concat_rows", &[a.clone(), c], |t, v| t.concat_rows(&[v[0], v[1]]));
    check("gather_rows", &[a.clone()], |t, v| t.gather_rows(v[0], &[2, 0, 2]));
    check("shift_rows +1", &[a.clone()], |t, v| t.shift_rows(v[0], 1));
    check("shift_rows -2", &[a.clone()], |t, v| t.shift_rows(v[0], -2));
    check("mean_rows", &[a.clone()], |t, v| t.mean_rows(v[0]));
    let gain = random_tensor(&mut r, &[4], 0.5, 1.5);
    let bias = random_tensor(&mut r, &[4], -0.5, 0.5);
    check("layernorm", &[a.clone(), gain, bias], |t, v| t.layernorm(v[0], v[1], v[2]));
    check("cross_entropy", &[a.clone()], |t, v| t.cross_entropy(v[0], &[1, 3, 0], None));
    check("cross_entropy ignore", &[a], |t, v| t.cross_entropy(v[0], &[1, 3, 0], Some(3)));
}

#[test]
fn integrate_fire_grads() {
    let mut r = rng(3);
    let emb = random_tensor(&mut r, &[5, 3], -1.0, 1.0);
    let w = random_tensor(&mut r, &[5], 0.2, 0.9);
    let iv = inference_intervals(w.data(), 1.0, 0.5);
    check("integrate_fire inference", &[emb.clone(), w.clone()], move |t, v| t.integrate_fire(v[0], v[1], &iv));
    check("integrate_fire training", &[emb, w], |t, v| {
        // Rescale to sum to 2 so the plan is exact, as CIF training does.
        let s = t.sum(v[1])?;
        let inv = t.reciprocal(s)?;
        let n = t.mul_scalar_var(v[1], inv)?;
        let n = t.scale(n, 2.0)?;
        t.integrate_fire(v[0], n, &training_intervals(2, 1.0))
    });
}

#[test]
fn matmul_and_cross_entropy_match_naive_oracles() {
    let mut r = rng(4);
    let a = random_tensor(&mut r, &[4, 5], -1.0, 1.0);
    let b = random_tensor(&mut r, &[5, 3], -1.0, 1.0);
    let mut t = Tape::new();
    let (va, vb) = (t.constant(&a), t.constant(&b));
    let y = t.matmul(va, vb).unwrap();
    for (x, o) in t.value(y).data().iter().zip(naive_matmul(a.data(), b.data(), 4, 5, 3)) {
        assert!((x - o).abs() < 1e-12);
    }
    let ce = t.cross_entropy(y, &[0, 2, 1, 2], Some(1)).unwrap();
    let want = naive_cross_entropy(t.value(y).data(), 3, &[0, 2, 1, 2], Some(1));
    assert!((t.value(ce).item() - want).abs() < 1e-12);
}

fn toy_list() -> HotwordList {
    HotwordList::from_phrases(vec![
        Phrase { lang: Lang::L2, tokens: vec![8] },
        Phrase { lang: Lang::L2, tokens: vec![9, 10] },
    ])
}

#[test]
fn end_to_end_xcb_gradients() {
    let model = Model::new(toy_config(true), 5).unwrap();
    let utt = toy_utterance(3, 6);
    for opts in [
        LossOptions::default(),
        LossOptions { l2nd_ignore_unk: true, alpha: 1.0, ..LossOptions::default() },
    ] {
        let err = end_to_end_grad_error(&model, &utt, &toy_list(), &opts);
        assert!(err < 1e-5, "{opts:?}: max relative error {err:e}");
    }
}

#[test]
fn end_to_end_baseline_gradients() {
    let model = Model::new(toy_config(false), 7).unwrap();
    let utt = toy_utterance(3, 8);
    let err = end_to_end_grad_error(&model, &utt, &toy_list(), &LossOptions::default());
    assert!(err < 1e-5, "max relative error {err:e}");
}
