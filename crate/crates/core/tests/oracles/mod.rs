//! Independent reference implementations used by the integration tests and
//! the acceptance suite. None of them call into the code they check.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xcb_core::data::{HotwordList, Lang, Phrase, Token, TokenId, Utterance, Vocabulary};
use xcb_core::metrics::{align, tokenize_mixed, AlignOp};
use xcb_core::model::{GradPolicy, Model, ModelConfig};
use xcb_core::numerics::{Tape, Tensor, Var};
use xcb_core::training::{total_loss, utterance_gradients, LossOptions};
use xcb_core::Result;

/// Gradients smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central finite differences of `f` at every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Builds `sum(op(inputs) ⊙ R)` for a fixed random `R`, then compares the
/// tape gradient of every input against central differences. Returns the
/// largest relative error.
pub fn op_grad_error(inputs: &[Tensor], seed: u64, build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let forward = |xs: &[Tensor], tape: &mut Tape, params: bool| -> (Var, Vec<Var>) {
        let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t, params)).collect();
        let y = build(tape, &vars).expect("op forward");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..tape.value(y).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = tape.constant(&Tensor::new(tape.shape(y).to_vec(), r).unwrap());
        let prod = tape.mul(y, r).unwrap();
        (tape.sum(prod).unwrap(), vars)
    };
    let mut tape = Tape::new();
    let (root, vars) = forward(inputs, &mut tape, true);
    tape.backward(root).unwrap();
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape.grad(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        let numeric = central_diff(input.data(), 1e-5, |probe| {
            let mut xs = inputs.to_vec();
            xs[k] = Tensor::new(input.shape().to_vec(), probe.to_vec()).unwrap();
            let mut t = Tape::new();
            let (root, _) = forward(&xs, &mut t, false);
            t.value(root).item()
        });
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    worst
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Triple-loop matrix product.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

/// Mean of `-ln softmax(row)[target]` over non-ignored rows.
pub fn naive_cross_entropy(logits: &[f64], v: usize, targets: &[usize], ignore: Option<usize>) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (r, &t) in targets.iter().enumerate() {
        if Some(t) == ignore {
            continue;
        }
        let row = &logits[r * v..(r + 1) * v];
        let z: f64 = row.iter().map(|x| x.exp()).sum();
        total += z.ln() - row[t];
        n += 1;
    }
    total / n as f64
}

/// Textbook Levenshtein distance over a full table.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Fired token embeddings from a sequential accumulator. Each frame's weight
/// is split at threshold crossings. With `force_len = Some(L)` at most
/// `L - 1` tokens fire during the walk and the remainder always forms the
/// last token; otherwise the remainder fires when it reaches `tail·θ`.
pub fn scalar_cif(weights: &[f64], emb: &[Vec<f64>], theta: f64, tail: f64, force_len: Option<usize>) -> Vec<Vec<f64>> {
    let d = emb.first().map_or(0, Vec::len);
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut cur = vec![0.0; d];
    let may_fire = |n: usize| force_len.is_none_or(|l| n + 1 < l);
    for (w, e) in weights.iter().zip(emb) {
        let mut left = *w;
        while may_fire(out.len()) && acc + left >= theta - 1e-9 {
            let part = (theta - acc).max(0.0);
            cur.iter_mut().zip(e).for_each(|(c, x)| *c += part * x);
            out.push(std::mem::replace(&mut cur, vec![0.0; d]));
            left -= part;
            acc = 0.0;
        }
        cur.iter_mut().zip(e).for_each(|(c, x)| *c += left * x);
        acc += left;
    }
    match force_len {
        Some(_) => out.push(cur),
        None if acc > 0.0 && acc + 1e-9 >= tail * theta => out.push(cur),
        None => {}
    }
    out
}

/// A three-frame, two-token utterance with one L2 token.
pub fn toy_utterance(d_feat: usize, seed: u64) -> Utterance {
    let v = Vocabulary::synthetic(4, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Utterance {
        id: "toy".into(),
        tokens: v.tokens_of(&[3, 8]),
        features: random_tensor(&mut rng, &[3, d_feat], -1.0, 1.0),
        durations: vec![1, 2],
    }
}

pub fn toy_config(xcb: bool) -> ModelConfig {
    ModelConfig {
        d_model: 6,
        d_feat: 3,
        encoder_layers: 1,
        decoder_layers: 1,
        ffn_dim: 8,
        conv_kernel: 3,
        adapter_bottleneck: 2,
        vocab_size: Vocabulary::N_SPECIAL + 8,
        max_hotwords: 4,
        max_positions: 8,
        xcb,
        ..ModelConfig::default()
    }
}

/// Largest relative error between `utterance_gradients` and central
/// differences of `l_total`, over every parameter scalar.
pub fn end_to_end_grad_error(model: &Model, utt: &Utterance, hotwords: &HotwordList, opts: &LossOptions) -> f64 {
    let (_, grads) = utterance_gradients(model, utt, hotwords, opts, GradPolicy::All).unwrap();
    let mut worst = 0.0f64;
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    for name in names {
        let base = model.params.get(&name).unwrap().clone();
        let numeric = central_diff(base.data(), 1e-5, |probe| {
            let mut m = model.clone();
            *m.params.get_mut(&name).unwrap() = Tensor::new(base.shape().to_vec(), probe.to_vec()).unwrap();
            total_loss(&m, utt, hotwords, opts).unwrap().l_total
        });
        let analytic = grads.get(&name).cloned().unwrap_or_else(|| vec![0.0; base.len()]);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    worst
}

/// A random scoring problem: references, hypotheses derived from them by
/// random edits, and per-utterance hotword lists. A small alphabet keeps
/// phrase occurrences frequent.
pub struct MiniCorpus {
    pub vocab: Vocabulary,
    pub refs: Vec<Vec<Token>>,
    pub hyps: Vec<Vec<Token>>,
    pub lists: Vec<HotwordList>,
}

pub fn mini_corpus(seed: u64) -> MiniCorpus {
    let vocab = Vocabulary::synthetic(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lang_of = |id: TokenId| if id < Vocabulary::N_SPECIAL + 3 { Lang::L1 } else { Lang::L2 };
    let draw = |rng: &mut ChaCha8Rng| rng.random_range(Vocabulary::N_SPECIAL..Vocabulary::N_SPECIAL + 6);
    let n_utts = rng.random_range(1..5);
    let (mut refs, mut hyps, mut lists) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n_utts {
        let len = rng.random_range(0..9);
        let r: Vec<TokenId> = (0..len).map(|_| draw(&mut rng)).collect();
        let mut h = Vec::new();
        for &t in &r {
            match rng.random_range(0..10) {
                0 => {}
                1 => h.push(draw(&mut rng)),
                2 => {
                    h.push(t);
                    h.push(draw(&mut rng));
                }
                3 if rng.random_bool(0.3) => h.push(Vocabulary::UNK),
                _ => h.push(t),
            }
        }
        if rng.random_bool(0.2) {
            h.insert(0, draw(&mut rng));
        }
        let mut phrases = Vec::new();
        for _ in 0..rng.random_range(0..4) {
            let lang = if rng.random_bool(0.5) { Lang::L1 } else { Lang::L2 };
            let plen = rng.random_range(1..3);
            let tokens: Vec<TokenId> = (0..plen)
                .map(|_| loop {
                    let t = draw(&mut rng);
                    if lang_of(t) == lang {
                        break t;
                    }
                })
                .collect();
            phrases.push(Phrase { lang, tokens });
        }
        // Bias a phrase towards occurring: copy a reference slice.
        if len > 0 && rng.random_bool(0.7) {
            let s = rng.random_range(0..len);
            let e = (s + rng.random_range(1..3)).min(len);
            let slice = r[s..e].to_vec();
            if slice.iter().all(|&t| lang_of(t) == lang_of(slice[0])) {
                phrases.push(Phrase {
                    lang: lang_of(slice[0]),
                    tokens: slice,
                });
            }
        }
        refs.push(vocab.tokens_of(&r));
        hyps.push(vocab.tokens_of(&h));
        lists.push(HotwordList::from_phrases(phrases));
    }
    MiniCorpus { vocab, refs, hyps, lists }
}

/// Brute-force biased error counts: spans by scanning every window of the
/// reference against the list, then each alignment op projected onto the
/// span language of its reference unit, insertions searching backwards for
/// the nearest op with a reference unit.
/// Returns `(errors_bc, n_bc, errors_bw, n_bw)`.
pub fn brute_biased(refs: &[Vec<Token>], hyps: &[Vec<Token>], lists: &[HotwordList]) -> (usize, usize, usize, usize) {
    let (mut e_bc, mut n_bc, mut e_bw, mut n_bw) = (0, 0, 0, 0);
    for ((r, h), list) in refs.iter().zip(hyps).zip(lists) {
        let ids: Vec<TokenId> = r.iter().map(|t| t.id).collect();
        let listed: BTreeSet<(Vec<TokenId>, Lang)> = list.phrases().iter().map(|p| (p.tokens.clone(), p.lang)).collect();
        let mut tok_lang: Vec<Option<Lang>> = vec![None; ids.len()];
        for start in 0..ids.len() {
            for end in start + 1..=ids.len() {
                for (tokens, lang) in &listed {
                    if ids[start..end] == tokens[..] {
                        for slot in &mut tok_lang[start..end] {
                            *slot = Some(*lang);
                        }
                    }
                }
            }
        }
        let ru = tokenize_mixed(r);
        let hu = tokenize_mixed(h);
        let unit_lang: Vec<Option<Lang>> = ru.iter().map(|u| tok_lang[u.token]).collect();
        for l in unit_lang.iter().flatten() {
            if *l == Lang::L2 {
                n_bw += 1;
            } else {
                n_bc += 1;
            }
        }
        let rt: Vec<&str> = ru.iter().map(|u| u.text.as_str()).collect();
        let ht: Vec<&str> = hu.iter().map(|u| u.text.as_str()).collect();
        let ops = align(&rt, &ht).ops;
        for (k, op) in ops.iter().enumerate() {
            let lang = match op {
                AlignOp::Match { .. } => None,
                AlignOp::Sub { r, .. } | AlignOp::Del { r } => unit_lang[*r],
                AlignOp::Ins { .. } => ops[..k].iter().rev().find_map(|o| o.ref_index()).and_then(|ri| unit_lang[ri]),
            };
            match lang {
                Some(Lang::L2) => e_bw += 1,
                Some(_) => e_bc += 1,
                None => {}
            }
        }
    }
    (e_bc, n_bc, e_bw, n_bw)
}

fn windows_equal(hay: &[TokenId], needle: &[TokenId]) -> Vec<usize> {
    let mut out = Vec::new();
    for s in 0..hay.len() {
        if s + needle.len() <= hay.len() && hay[s..s + needle.len()] == *needle {
            out.push(s);
        }
    }
    out
}

/// Brute-force phrase counts per language: `[l1, l2]` of
/// `(ref_occurrences, recalled, hyp_occurrences, matched)`. Matching walks
/// both occurrence lists in order and pairs them one by one.
pub fn brute_phrase_counts(refs: &[Vec<Token>], hyps: &[Vec<Token>], lists: &[HotwordList]) -> [(usize, usize, usize, usize); 2] {
    let mut out = [(0, 0, 0, 0); 2];
    for ((r, h), list) in refs.iter().zip(hyps).zip(lists) {
        let rid: Vec<TokenId> = r.iter().map(|t| t.id).collect();
        let hid: Vec<TokenId> = h.iter().map(|t| t.id).collect();
        let distinct: BTreeSet<&Phrase> = list.phrases().into_iter().collect();
        for p in distinct {
            let k = usize::from(p.lang == Lang::L2);
            let ro = windows_equal(&rid, &p.tokens);
            let ho = windows_equal(&hid, &p.tokens);
            out[k].0 += ro.len();
            if !ho.is_empty() {
                out[k].1 += ro.len();
            }
            out[k].2 += ho.len();
            let (mut i, mut j, mut m) = (0, 0, 0);
            while i < ro.len() && j < ho.len() {
                m += 1;
                i += 1;
                j += 1;
            }
            out[k].3 += m;
        }
    }
    out
}

/// The L1 masking rule applied position by position.
pub fn expected_mask(tokens: &[Token]) -> Vec<Token> {
    tokens
        .iter()
        .map(|t| {
            if t.lang == Lang::L1 {
                Token {
                    id: Vocabulary::UNK,
                    surface: "<unk>".into(),
                    lang: Lang::Special,
                }
            } else {
                t.clone()
            }
        })
        .collect()
}
