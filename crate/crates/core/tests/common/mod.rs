#![allow(dead_code)]

//! Finite-difference gradient checks, small models and the LM probability
//! enumeration shared by the integration suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ucodec_core::bitstream::TokenGrid;
use ucodec_core::codec::{CodecConfig, CodecModel};
use ucodec_core::lm::{HierLm, LmConfig};
use ucodec_core::kernels::{AttnMask, Conv2dSpec, Graph, ParamStore, Tensor, Var};
use ucodec_core::objectives::{MelConfig, MelLoss};
use ucodec_core::Result;

pub type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// Inputs of one primitive plus the expression to differentiate.
pub struct Instance {
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

/// Gaussian entries pushed at least `gap` away from `at`, for inputs of
/// functions with a kink there.
pub fn randn_away(shape: &[usize], at: f64, gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    randn(shape, rng).map(|v| if (v - at).abs() < gap { at + gap.copysign(v - at) * 2.0 } else { v })
}

/// Relative error with a floor so that near-zero gradients are compared
/// absolutely at the floor's scale.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn weighted_loss(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(weights.clone());
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn eval(inst: &Instance, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> f64 {
    let mut g = Graph::inference();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (inst.build)(&mut g, &vars).unwrap();
    let l = weighted_loss(&mut g, out, weights).unwrap();
    g.value(l).data()[0]
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `sum(w * f(inputs))` for random `w`, over at most
/// `max_coords` coordinates per input.
pub fn check_instance(inst: &Instance, h: f64, max_coords: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inst.inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = (inst.build)(&mut g, &vars).unwrap();
    let weights = randn(g.shape(out), rng);
    let loss = weighted_loss(&mut g, out, &weights).unwrap();
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, (v, t)) in vars.iter().zip(&inst.inputs).enumerate() {
        let analytic = grads.get_or_zeros(*v, t);
        let n = t.numel();
        let coords: Vec<usize> =
            if n <= max_coords { (0..n).collect() } else { (0..max_coords).map(|_| rng.random_range(0..n)).collect() };
        for j in coords {
            let mut plus = inst.inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = inst.inputs.clone();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(inst, &plus, &weights) - eval(inst, &minus, &weights)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

macro_rules! unary {
    ($name:literal, $f:expr) => {
        ($name, |r: &mut ChaCha8Rng| {
            let s = [dim(r, 1, 4), dim(r, 1, 5)];
            Instance { inputs: vec![randn(&s, r)], build: Box::new(|g, v| Ok($f(g, v[0]))) }
        })
    };
}

macro_rules! binary {
    ($name:literal, $f:ident) => {
        ($name, |r: &mut ChaCha8Rng| {
            let s = [dim(r, 1, 4), dim(r, 1, 5)];
            Instance { inputs: vec![randn(&s, r), randn(&s, r)], build: Box::new(|g, v| g.$f(v[0], v[1])) }
        })
    };
}

pub type Case = (&'static str, fn(&mut ChaCha8Rng) -> Instance);

/// One generator per differentiable primitive. `straight_through` and
/// `detach` are excluded: their gradients are defined to differ from the
/// derivative of their value and are checked separately.
pub fn primitive_cases() -> Vec<Case> {
    vec![
        binary!("add", add),
        binary!("sub", sub),
        binary!("mul", mul),
        ("add_bias_last", |r| {
            let (a, b) = (dim(r, 1, 4), dim(r, 1, 5));
            Instance { inputs: vec![randn(&[a, b], r), randn(&[b], r)], build: Box::new(|g, v| g.add_bias_last(v[0], v[1])) }
        }),
        ("add_bias_channel", |r| {
            let (c, l) = (dim(r, 1, 4), dim(r, 1, 6));
            Instance { inputs: vec![randn(&[c, l], r), randn(&[c], r)], build: Box::new(|g, v| g.add_bias_channel(v[0], v[1])) }
        }),
        unary!("scale", |g: &mut Graph<f64>, x| g.scale(x, -0.7)),
        unary!("add_scalar", |g: &mut Graph<f64>, x| g.add_scalar(x, 0.3)),
        unary!("neg", |g: &mut Graph<f64>, x| g.neg(x)),
        unary!("square", |g: &mut Graph<f64>, x| g.square(x)),
        ("abs", |r| {
            let s = [dim(r, 1, 4), dim(r, 1, 5)];
            Instance { inputs: vec![randn_away(&s, 0.0, 0.05, r)], build: Box::new(|g, v| Ok(g.abs(v[0]))) }
        }),
        unary!("exp", |g: &mut Graph<f64>, x| g.exp(x)),
        unary!("tanh", |g: &mut Graph<f64>, x| g.tanh(x)),
        unary!("elu", |g: &mut Graph<f64>, x| g.elu(x)),
        unary!("gelu", |g: &mut Graph<f64>, x| g.gelu(x)),
        ("leaky_relu", |r| {
            let s = [dim(r, 1, 4), dim(r, 1, 5)];
            Instance { inputs: vec![randn_away(&s, 0.0, 0.05, r)], build: Box::new(|g, v| Ok(g.leaky_relu(v[0], 0.1))) }
        }),
        ("log_clamp", |r| {
            let s = [dim(r, 1, 4), dim(r, 1, 5)];
            let x = randn_away(&s, 0.0, 0.05, r).map(|v| if v > 0.0 { v + 0.1 } else { v });
            Instance { inputs: vec![x], build: Box::new(|g, v| Ok(g.log_clamp(v[0], 1e-3))) }
        }),
        unary!("sum", |g: &mut Graph<f64>, x| g.sum(x)),
        unary!("mean", |g: &mut Graph<f64>, x| g.mean(x)),
        ("matmul", |r| {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            Instance { inputs: vec![randn(&[m, k], r), randn(&[k, n], r)], build: Box::new(|g, v| g.matmul(v[0], v[1])) }
        }),
        ("matmul_nt", |r| {
            let (m, k, n) = (dim(r, 1, 4), dim(r, 1, 4), dim(r, 1, 4));
            Instance { inputs: vec![randn(&[m, k], r), randn(&[n, k], r)], build: Box::new(|g, v| g.matmul_nt(v[0], v[1])) }
        }),
        ("bmm", |r| {
            let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            Instance { inputs: vec![randn(&[b, m, k], r), randn(&[b, k, n], r)], build: Box::new(|g, v| g.bmm(v[0], v[1])) }
        }),
        ("bmm_nt", |r| {
            let (b, m, k, n) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            Instance { inputs: vec![randn(&[b, m, k], r), randn(&[b, n, k], r)], build: Box::new(|g, v| g.bmm_nt(v[0], v[1])) }
        }),
        ("softmax", |r| {
            let s = [dim(r, 1, 4), dim(r, 1, 6)];
            Instance { inputs: vec![randn(&s, r)], build: Box::new(|g, v| g.softmax(v[0])) }
        }),
        ("softmax_masked", |r| {
            let (h, l) = (dim(r, 1, 3), dim(r, 1, 5));
            Instance { inputs: vec![randn(&[h, l, l], r)], build: Box::new(|g, v| g.softmax_masked(v[0], AttnMask::Causal)) }
        }),
        ("layer_norm", |r| {
            let (rows, n) = (dim(r, 1, 4), dim(r, 2, 6));
            Instance {
                inputs: vec![randn(&[rows, n], r), randn(&[n], r), randn(&[n], r)],
                build: Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)),
            }
        }),
        ("cross_entropy_sum", |r| {
            let (rows, c) = (dim(r, 1, 4), dim(r, 2, 6));
            let t: Vec<usize> = (0..rows).map(|_| r.random_range(0..c)).collect();
            Instance { inputs: vec![randn(&[rows, c], r)], build: Box::new(move |g, v| g.cross_entropy_sum(v[0], &t)) }
        }),
        ("cross_entropy", |r| {
            let (rows, c) = (dim(r, 1, 4), dim(r, 2, 6));
            let t: Vec<usize> = (0..rows).map(|_| r.random_range(0..c)).collect();
            Instance { inputs: vec![randn(&[rows, c], r)], build: Box::new(move |g, v| g.cross_entropy(v[0], &t)) }
        }),
        ("rope", |r| {
            let (b, l, d) = (dim(r, 1, 3), dim(r, 1, 5), 2 * dim(r, 1, 3));
            let offset = r.random_range(0..20);
            Instance { inputs: vec![randn(&[b, l, d], r)], build: Box::new(move |g, v| g.rope(v[0], offset, 10_000.0)) }
        }),
        ("attention", |r| {
            let (h, l, d) = (dim(r, 1, 3), dim(r, 1, 5), dim(r, 1, 4));
            let mask = if r.random_bool(0.5) { AttnMask::Causal } else { AttnMask::None };
            let s = [h, l, d];
            Instance {
                inputs: vec![randn(&s, r), randn(&s, r), randn(&s, r)],
                build: Box::new(move |g, v| g.attention(v[0], v[1], v[2], mask)),
            }
        }),
        ("rope_attention", |r| {
            let (h, l, d) = (dim(r, 1, 3), dim(r, 1, 5), 2 * dim(r, 1, 2));
            let s = [h, l, d];
            Instance {
                inputs: vec![randn(&s, r), randn(&s, r), randn(&s, r)],
                build: Box::new(|g, v| g.rope_attention(v[0], v[1], v[2], true)),
            }
        }),
        ("reshape", |r| {
            let (a, b) = (dim(r, 1, 4), dim(r, 1, 4));
            Instance { inputs: vec![randn(&[a, b], r)], build: Box::new(move |g, v| g.reshape(v[0], &[b, a])) }
        }),
        ("transpose", |r| {
            let s = [dim(r, 1, 4), dim(r, 1, 5)];
            Instance { inputs: vec![randn(&s, r)], build: Box::new(|g, v| g.transpose(v[0])) }
        }),
        ("split_heads", |r| {
            let (b, l, h, d) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 2));
            Instance { inputs: vec![randn(&[b * l, h * d], r)], build: Box::new(move |g, v| g.split_heads(v[0], b, h)) }
        }),
        ("merge_heads", |r| {
            let (b, l, h, d) = (dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 2));
            Instance { inputs: vec![randn(&[b * h, l, d], r)], build: Box::new(move |g, v| g.merge_heads(v[0], b)) }
        }),
        ("narrow", |r| {
            let s = [dim(r, 1, 4), dim(r, 2, 6)];
            let axis = r.random_range(0..2);
            let start = r.random_range(0..s[axis]);
            let len = r.random_range(1..=s[axis] - start);
            Instance { inputs: vec![randn(&s, r)], build: Box::new(move |g, v| g.narrow(v[0], axis, start, len)) }
        }),
        ("pad_last", |r| {
            let s = [dim(r, 1, 3), dim(r, 1, 5)];
            let (a, b) = (r.random_range(0..3), r.random_range(0..3));
            Instance { inputs: vec![randn(&s, r)], build: Box::new(move |g, v| Ok(g.pad_last(v[0], a, b))) }
        }),
        ("index_rows", |r| {
            let (vocab, d, n) = (dim(r, 1, 5), dim(r, 1, 4), dim(r, 1, 6));
            let ids: Vec<usize> = (0..n).map(|_| r.random_range(0..vocab)).collect();
            Instance { inputs: vec![randn(&[vocab, d], r)], build: Box::new(move |g, v| g.index_rows(v[0], &ids)) }
        }),
        ("concat", |r| {
            let axis = r.random_range(0..2);
            let (a, b, c) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            let (s0, s1) = if axis == 0 { ([a, c], [b, c]) } else { ([c, a], [c, b]) };
            Instance { inputs: vec![randn(&s0, r), randn(&s1, r)], build: Box::new(move |g, v| g.concat(&[v[0], v[1]], axis)) }
        }),
        ("stft", |r| {
            let n_fft = [4, 8, 16][r.random_range(0..3)];
            let len = n_fft + r.random_range(0..20);
            Instance { inputs: vec![randn(&[len], r)], build: Box::new(move |g, v| g.stft(v[0], n_fft, n_fft / 4)) }
        }),
        ("complex_abs", |r| {
            let s = [2, dim(r, 1, 3), dim(r, 1, 4)];
            Instance { inputs: vec![randn_away(&s, 0.0, 0.2, r)], build: Box::new(|g, v| g.complex_abs(v[0])) }
        }),
        ("conv1d", |r| {
            let (cin, cout, k) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4));
            let (stride, dil, pad) = (dim(r, 1, 3), dim(r, 1, 3), r.random_range(0..3));
            let len = dil * (k - 1) + 1 + r.random_range(0..8);
            Instance {
                inputs: vec![randn(&[cin, len], r), randn(&[cout, cin, k], r), randn(&[cout], r)],
                build: Box::new(move |g, v| g.conv1d(v[0], v[1], Some(v[2]), stride, dil, pad)),
            }
        }),
        ("conv_transpose1d", |r| {
            let (cin, cout, k) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 4));
            let (stride, len) = (dim(r, 1, 3), dim(r, 1, 5));
            let pad = r.random_range(0..=((len - 1) * stride + k - 1) / 2);
            Instance {
                inputs: vec![randn(&[cin, len], r), randn(&[cin, cout, k], r), randn(&[cout], r)],
                build: Box::new(move |g, v| g.conv_transpose1d(v[0], v[1], Some(v[2]), stride, pad)),
            }
        }),
        ("conv2d", |r| {
            let (cin, cout, kh, kw) = (dim(r, 1, 2), dim(r, 1, 2), dim(r, 1, 3), dim(r, 1, 3));
            let spec = Conv2dSpec {
                stride: (dim(r, 1, 2), dim(r, 1, 2)),
                dilation: (dim(r, 1, 2), dim(r, 1, 2)),
                padding: (r.random_range(0..2), r.random_range(0..2)),
            };
            let h = spec.dilation.0 * (kh - 1) + 1 + r.random_range(0..4);
            let w = spec.dilation.1 * (kw - 1) + 1 + r.random_range(0..4);
            Instance {
                inputs: vec![randn(&[cin, h, w], r), randn(&[cout, cin, kh, kw], r), randn(&[cout], r)],
                build: Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), spec)),
            }
        }),
        ("weight_norm", |r| {
            let (cout, cin, k) = (dim(r, 1, 3), dim(r, 1, 3), dim(r, 1, 3));
            Instance {
                inputs: vec![randn(&[cout, cin, k], r), randn(&[cout], r)],
                build: Box::new(|g, v| g.weight_norm(v[0], v[1])),
            }
        }),
    ]
}

/// Worst error of each primitive over `instances` random instances.
pub fn primitive_suite(instances: usize, seed: u64) -> Vec<(&'static str, f64)> {
    primitive_cases()
        .into_iter()
        .enumerate()
        .map(|(ci, (name, make))| {
            let mut r = rng(seed.wrapping_mul(1000) + ci as u64);
            let worst = (0..instances).map(|_| check_instance(&make(&mut r), 1e-6, 24, &mut r)).fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

/// Loss of encoder -> quantizer -> decoder -> mel where each layer's
/// low-dimensional value is `p + delta_l`, i.e. the straight-through path
/// with the code offsets `delta_l = c* - p` frozen at their realized values.
fn frozen_pipeline_loss(
    model: &CodecModel<f64>,
    store: &ParamStore<f64>,
    mel: &MelLoss,
    wave: &Tensor<f64>,
    deltas: &[Tensor<f64>],
) -> f64 {
    let mut g = Graph::inference();
    let x = g.constant(wave.clone());
    let z = model.encoder.forward(&mut g, store, x).unwrap();
    let mut residual = z;
    let mut total: Option<Var> = None;
    for (layer, delta) in model.quantizer.layers.iter().zip(deltas) {
        let w_in = g.param(store, layer.in_proj);
        let w_out = g.param(store, layer.out_proj);
        let p = g.matmul_nt(residual, w_in).unwrap();
        let d = g.constant(delta.clone());
        let st = g.add(p, d).unwrap();
        let q = g.matmul_nt(st, w_out).unwrap();
        residual = g.sub(residual, q).unwrap();
        total = Some(match total {
            Some(a) => g.add(a, q).unwrap(),
            None => q,
        });
    }
    let y = model.decoder.forward(&mut g, store, total.unwrap()).unwrap();
    let l = mel.loss(&mut g, x, y).unwrap();
    g.value(l).data()[0]
}

/// Miniature pipeline check for one seed: reverse-mode gradients of the
/// real straight-through graph against central differences of the frozen
/// surrogate, along a random direction over all parameters and on
/// `coords` single coordinates. Returns the worst relative error.
pub fn pipeline_instance(seed: u64, coords: usize) -> f64 {
    let mut r = rng(seed);
    let model = CodecModel::<f64>::new(CodecConfig::miniature(), &mut r).unwrap();
    let mel = MelLoss::new(MelConfig::smallest(2), 16_000).unwrap();
    let len = 64 + 4 * r.random_range(0..8);
    let wave = Tensor::uniform(&[1, len], -0.8, 0.8, &mut r);

    let mut g = Graph::new();
    let x = g.constant(wave.clone());
    let z = model.encoder.forward(&mut g, &model.store, x).unwrap();
    let q = model.quantizer.quantize_graph(&mut g, &model.store, z, None).unwrap();
    let y = model.decoder.forward(&mut g, &model.store, q.quantized).unwrap();
    let loss = mel.loss(&mut g, x, y).unwrap();
    let grads = g.backward(loss).unwrap();
    let buf = model.store.collect(&g, &grads);
    let deltas: Vec<Tensor<f64>> = q
        .selected
        .iter()
        .zip(&q.projected)
        .map(|(&c, &p)| {
            let (c, p) = (g.value(c), g.value(p));
            Tensor::new(c.shape(), c.data().iter().zip(p.data()).map(|(a, b)| a - b).collect()).unwrap()
        })
        .collect();
    let base = g.value(loss).data()[0];
    let surrogate = frozen_pipeline_loss(&model, &model.store, &mel, &wave, &deltas);
    assert!((base - surrogate).abs() <= 1e-9 * base.abs().max(1.0), "surrogate {surrogate} vs {base}");

    let ids: Vec<_> = model.store.ids().collect();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    // random direction over every parameter
    let dir: Vec<Tensor<f64>> = ids.iter().map(|&id| randn(model.store.value(id).shape(), &mut r)).collect();
    let shifted = |sign: f64| {
        let mut s = model.store.clone();
        for (&id, d) in ids.iter().zip(&dir) {
            for (v, dv) in s.value_mut(id).data_mut().iter_mut().zip(d.data()) {
                *v += sign * h * dv;
            }
        }
        frozen_pipeline_loss(&model, &s, &mel, &wave, &deltas)
    };
    let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
    let analytic: f64 =
        ids.iter().zip(&dir).map(|(&id, d)| buf.get(id).data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>()).sum();
    worst = worst.max(rel_err(analytic, numeric));
    for _ in 0..coords {
        let id = ids[r.random_range(0..ids.len())];
        let j = r.random_range(0..model.store.value(id).numel());
        let at = |delta: f64| {
            let mut s = model.store.clone();
            s.value_mut(id).data_mut()[j] += delta;
            frozen_pipeline_loss(&model, &s, &mel, &wave, &deltas)
        };
        let numeric = (at(h) - at(-h)) / (2.0 * h);
        worst = worst.max(rel_err(buf.get(id).data()[j], numeric));
    }
    worst
}

/// One-layer global and local models with width 8.
pub fn tiny_lm(n: usize, c: usize, seed: u64) -> HierLm<f64> {
    let mut cfg = LmConfig::desk(n, c);
    cfg.global.layers = 1;
    cfg.global.heads = 2;
    cfg.global.hidden = 8;
    cfg.global.mlp = 16;
    cfg.local.layers = 1;
    cfg.local.heads = 2;
    cfg.local.hidden = 8;
    cfg.local.mlp = 16;
    HierLm::new(cfg, &mut rng(seed)).unwrap()
}


fn softmax_at(logits: &[f64], i: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
    (logits[i] - m).exp() / z
}

/// Probability of one patch, then of EOS at the next layer-1 step when
/// `eos` is set, built from `local_logits` one code at a time.
fn chained(lm: &HierLm<f64>, text: &[u8], grid: &TokenGrid, eos: bool) -> f64 {
    let mut g = Graph::inference();
    let h = lm.global_forward(&mut g, text, grid).unwrap();
    let mut p = 1.0;
    let row = |g: &mut Graph<f64>, t: usize| g.narrow(h, 0, text.len() + t, 1).unwrap();
    for t in 0..grid.frames() {
        let ht = row(&mut g, t);
        let patch = grid.frame(t);
        for k in 0..patch.len() {
            let l = lm.local_logits(&mut g, ht, &patch[..k]).unwrap();
            p *= softmax_at(&g.value(l).to_f64_vec(), patch[k] as usize);
        }
    }
    if eos {
        let ht = row(&mut g, grid.frames());
        let l = lm.local_logits(&mut g, ht, &[]).unwrap();
        p *= softmax_at(&g.value(l).to_f64_vec(), lm.cfg.eos_id());
    }
    p
}

fn all_grids(n: usize, c: usize, frames: usize) -> Vec<TokenGrid> {
    let count = c.pow((n * frames) as u32);
    (0..count)
        .map(|mut i| {
            let codes = (0..n * frames)
                .map(|_| {
                    let v = (i % c) as u32;
                    i /= c;
                    v
                })
                .collect();
            TokenGrid::new(frames, n, codes).unwrap()
        })
        .collect()
}

/// Enumerates every grid of up to `max_frames` frames. Returns the largest
/// gap between the chained conditional probability of `grid + EOS` and
/// `exp(-nll * (T*N + 1))`, and the total probability of all terminated
/// grids plus the mass of every unterminated `max_frames + 1` prefix.
pub fn enumerate_mass(lm: &HierLm<f64>, text: &[u8], max_frames: usize) -> (f64, f64) {
    let (n, c) = (lm.cfg.n_quantizers, lm.cfg.codebook_size);
    let mut gap: f64 = 0.0;
    let mut total = 0.0;
    for frames in 0..=max_frames {
        for grid in all_grids(n, c, frames) {
            let p = chained(lm, text, &grid, true);
            let mut g = Graph::inference();
            let nll = lm.sequence_nll(&mut g, text, &grid).unwrap();
            let q = (-g.value(nll).data()[0] * (frames * n + 1) as f64).exp();
            gap = gap.max((p - q).abs());
            total += p;
        }
    }
    for grid in all_grids(n, c, max_frames + 1) {
        total += chained(lm, text, &grid, false);
    }
    (gap, total)
}
