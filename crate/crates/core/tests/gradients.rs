mod common;

use common::*;
use rand::Rng;
use ucodec_core::kernels::ops::{conv1d_out_len, conv_transpose1d_out_len};
use ucodec_core::kernels::{AttnMask, Graph, Tensor};

#[test]
fn every_primitive_matches_central_differences() {
    let mut failures = Vec::new();
    for (name, worst) in primitive_suite(20, 7) {
        if !(worst <= 1e-5) {
            failures.push(format!("{name}: {worst:.3e}"));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn conv_elu_sum_parameter_gradients() {
    let mut r = rng(11);
    for _ in 0..20 {
        let (cin, cout, k) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..5));
        let len = k + r.random_range(0..10);
        let inst = Instance {
            inputs: vec![randn(&[cin, len], &mut r), randn(&[cout, cin, k], &mut r), randn(&[cout], &mut r)],
            build: Box::new(|g, v| {
                let y = g.conv1d(v[0], v[1], Some(v[2]), 1, 1, 0)?;
                let y = g.elu(y);
                Ok(g.sum(y))
            }),
        };
        let e = check_instance(&inst, 1e-6, 64, &mut r);
        assert!(e <= 1e-6, "{e}");
    }
}

#[test]
fn attention_block_with_layer_norm() {
    let mut r = rng(12);
    for _ in 0..20 {
        let (l, d, h) = (r.random_range(1..5), 4, 2);
        let inst = Instance {
            inputs: vec![
                randn(&[l, d], &mut r),
                randn(&[d], &mut r),
                randn(&[d], &mut r),
                randn(&[3 * d, d], &mut r),
            ],
            build: Box::new(move |g, v| {
                let x = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let qkv = g.matmul_nt(x, v[3])?;
                let q = g.narrow(qkv, 1, 0, d)?;
                let k = g.narrow(qkv, 1, d, d)?;
                let vv = g.narrow(qkv, 1, 2 * d, d)?;
                let q = g.split_heads(q, 1, h)?;
                let k = g.split_heads(k, 1, h)?;
                let vv = g.split_heads(vv, 1, h)?;
                let a = g.attention(q, k, vv, AttnMask::Causal)?;
                let a = g.merge_heads(a, 1)?;
                g.add(a, v[0])
            }),
        };
        let e = check_instance(&inst, 1e-6, 64, &mut r);
        assert!(e <= 1e-4, "{e}");
    }
}

#[test]
fn straight_through_passes_value_and_gradient() {
    let mut r = rng(13);
    for _ in 0..20 {
        let s = [r.random_range(1..4), r.random_range(1..5)];
        let p = randn(&s, &mut r);
        let c = randn(&s, &mut r);
        let w = randn(&s, &mut r);
        let mut g = Graph::new();
        let pv = g.input(p.clone());
        let cv = g.input(c.clone());
        let st = g.straight_through(pv, cv).unwrap();
        assert_eq!(g.value(st), &c);
        let wv = g.constant(w.clone());
        let m = g.mul(st, wv).unwrap();
        let l = g.sum(m);
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get_or_zeros(pv, &p), w);
        assert!(grads.get_or_zeros(cv, &c).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn detach_blocks_gradient() {
    let x = Tensor::<f64>::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let d = g.detach(xv);
    let y = g.mul(d, xv).unwrap();
    let l = g.sum(y);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get_or_zeros(xv, &x), x);
}

#[test]
fn conv_output_lengths_follow_the_closed_form() {
    for k in 1..=4 {
        for s in 1..=3 {
            for p in 0..=2 {
                for len in 1..12usize {
                    let mut g = Graph::<f64>::inference();
                    let x = g.constant(Tensor::zeros(&[1, len]));
                    let w = g.constant(Tensor::zeros(&[1, 1, k]));
                    let expected = (len + 2 * p).checked_sub(k).map(|v| v / s + 1);
                    assert_eq!(conv1d_out_len(len, k, s, 1, p), expected);
                    match (g.conv1d(x, w, None, s, 1, p), expected) {
                        (Ok(y), Some(n)) => assert_eq!(g.shape(y), &[1, n]),
                        (Err(_), None) => {}
                        (got, want) => panic!("conv1d k{k} s{s} p{p} len{len}: {got:?} vs {want:?}"),
                    }
                    let expected_t = ((len - 1) * s + k).checked_sub(2 * p).filter(|&n| n > 0);
                    assert_eq!(conv_transpose1d_out_len(len, k, s, p), expected_t);
                    let wt = g.constant(Tensor::zeros(&[1, 1, k]));
                    match (g.conv_transpose1d(x, wt, None, s, p), expected_t) {
                        (Ok(y), Some(n)) => assert_eq!(g.shape(y), &[1, n]),
                        (Err(_), None) => {}
                        (got, want) => panic!("conv_transpose1d k{k} s{s} p{p} len{len}: {got:?} vs {want:?}"),
                    }
                }
            }
        }
    }
}

#[test]
fn taped_and_untaped_forward_agree() {
    for (ci, (name, make)) in primitive_cases().into_iter().enumerate() {
        let mut r = rng(100 + ci as u64);
        let inst = make(&mut r);
        let run = |mut g: Graph<f64>| {
            let vars: Vec<_> = inst.inputs.iter().map(|t| g.input(t.clone())).collect();
            let out = (inst.build)(&mut g, &vars).unwrap();
            g.value(out).clone()
        };
        assert_eq!(run(Graph::new()), run(Graph::inference()), "{name}");
    }
}

#[test]
fn composed_pipeline_with_frozen_code_offsets() {
    for seed in 0..4 {
        let e = pipeline_instance(seed, 8);
        assert!(e <= 1e-4, "seed {seed}: {e}");
    }
}
