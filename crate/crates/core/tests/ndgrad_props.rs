mod common;

use common::{rel_err, rng};
use rad_core::ndgrad::{Graph, Tensor, Var};
use rad_core::rng::{uniform, ChaCha8Rng};

fn rand_tensor(shape: &[usize], r: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| uniform(r, lo, hi)).collect()).unwrap()
}

/// Builds `sum(op(inputs) ⊙ w)` for a fixed random weight `w`, so every output
/// entry carries a distinct sensitivity.
type Build<'a> = dyn Fn(&mut Graph, &[Var]) -> Var + 'a;

fn check(name: &str, inputs: Vec<Tensor>, build: &Build<'_>, r: &mut ChaCha8Rng) {
    let eval = |ins: &[Tensor], w: Option<&Tensor>| -> (f64, Vec<Tensor>, Tensor) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        let shape = g.value(out).shape().to_vec();
        let w = w.cloned().unwrap_or_else(|| Tensor::new(shape.clone(), vec![0.0; shape.iter().product()]).unwrap());
        let wv = g.constant(w.clone());
        let prod = g.mul(out, wv).unwrap();
        let root = g.sum(prod);
        let grads = g.backward(root).unwrap();
        (g.value(root).item(), vars.iter().map(|&v| grads.wrt(v)).collect(), w)
    };
    let shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        g.value(out).shape().to_vec()
    };
    let w = rand_tensor(&shape, r, -1.0, 1.0);
    let (_, grads, _) = eval(&inputs, Some(&w));
    let h = 1e-5;
    for (i, t) in inputs.iter().enumerate() {
        for k in 0..t.len() {
            let shifted = |d: f64| {
                let mut ins = inputs.clone();
                ins[i].data_mut()[k] += d;
                eval(&ins, Some(&w)).0
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let an = grads[i].data()[k];
            assert!(rel_err(an, fd, 1e-6) < 1e-3, "{name}: input {i} entry {k}: {an} vs {fd}");
        }
    }
}

#[test]
fn every_op_matches_finite_differences() {
    let mut r = rng(9);
    for trial in 0..4 {
        let n = 1 + trial * 3;
        let m = 2 + trial * 10;
        let k = 1 + trial * 2;
        let a = rand_tensor(&[n, m], &mut r, -2.0, 2.0);
        let b = rand_tensor(&[n, m], &mut r, -2.0, 2.0);
        let w = rand_tensor(&[m, k], &mut r, -2.0, 2.0);
        let bias = rand_tensor(&[k], &mut r, -2.0, 2.0);
        let pos = rand_tensor(&[n, m], &mut r, 0.5, 2.0);
        check("add", vec![a.clone(), b.clone()], &|g, v| g.add(v[0], v[1]).unwrap(), &mut r);
        check("sub", vec![a.clone(), b.clone()], &|g, v| g.sub(v[0], v[1]).unwrap(), &mut r);
        check("mul", vec![a.clone(), b.clone()], &|g, v| g.mul(v[0], v[1]).unwrap(), &mut r);
        check("scale", vec![a.clone()], &|g, v| g.scale(v[0], -1.7), &mut r);
        check("matmul", vec![a.clone(), w.clone()], &|g, v| g.matmul(v[0], v[1]).unwrap(), &mut r);
        check("affine", vec![a.clone(), w.clone(), bias.clone()], &|g, v| g.affine(v[0], v[1], v[2]).unwrap(), &mut r);
        check("tanh", vec![a.clone()], &|g, v| g.tanh(v[0]), &mut r);
        check("exp", vec![a.clone()], &|g, v| g.exp(v[0]), &mut r);
        check("log", vec![pos.clone()], &|g, v| g.log(v[0]), &mut r);
        check("square", vec![a.clone()], &|g, v| g.square(v[0]), &mut r);
        check("sum", vec![a.clone()], &|g, v| g.sum(v[0]), &mut r);
        check("mean", vec![a.clone()], &|g, v| g.mean(v[0]), &mut r);
        check("soft_clamp", vec![a.clone()], &|g, v| g.soft_clamp(v[0], 1.5), &mut r);
        let cols: Vec<usize> = (0..m).rev().step_by(2).collect();
        let rest: Vec<usize> = (0..m).filter(|c| !cols.contains(c)).collect();
        check("select_cols", vec![a.clone()], &|g, v| g.select_cols(v[0], &cols).unwrap(), &mut r);
        let left = rand_tensor(&[n, cols.len()], &mut r, -2.0, 2.0);
        let right = rand_tensor(&[n, rest.len()], &mut r, -2.0, 2.0);
        if !rest.is_empty() {
            check(
                "merge_cols",
                vec![left, right],
                &|g, v| g.merge_cols(v[0], &cols, v[1], &rest).unwrap(),
                &mut r,
            );
        }
    }
}

#[test]
fn composite_mlp_gradient() {
    let mut r = rng(10);
    let x = rand_tensor(&[4, 6], &mut r, -2.0, 2.0);
    let w1 = rand_tensor(&[6, 32], &mut r, -1.0, 1.0);
    let b1 = rand_tensor(&[32], &mut r, -1.0, 1.0);
    let w2 = rand_tensor(&[32, 3], &mut r, -1.0, 1.0);
    let b2 = rand_tensor(&[3], &mut r, -1.0, 1.0);
    check(
        "mlp",
        vec![x, w1, b1, w2, b2],
        &|g, v| {
            let h = g.affine(v[0], v[1], v[2]).unwrap();
            let h = g.tanh(h);
            let o = g.affine(h, v[3], v[4]).unwrap();
            let e = g.exp(o);
            g.soft_clamp(e, 3.0)
        },
        &mut r,
    );
}

#[test]
fn backward_is_linear() {
    let mut r = rng(11);
    let x = rand_tensor(&[3, 5], &mut r, -2.0, 2.0);
    let (a, b) = (0.7, -2.3);
    let grad_of = |ca: f64, cb: f64| {
        let mut g = Graph::new();
        let p = g.param(x.clone());
        let t = g.tanh(p);
        let f = g.sum(t);
        let sq = g.square(p);
        let gg = g.mean(sq);
        let fa = g.scale(f, ca);
        let gb = g.scale(gg, cb);
        let root = g.add(fa, gb).unwrap();
        g.backward(root).unwrap().wrt(p)
    };
    let combined = grad_of(a, b);
    let (gf, gg) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0));
    for i in 0..combined.len() {
        let want = a * gf.data()[i] + b * gg.data()[i];
        assert!((combined.data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn backward_is_deterministic_and_repeatable() {
    let mut r = rng(12);
    let x = rand_tensor(&[8, 8], &mut r, -2.0, 2.0);
    let run = || {
        let mut g = Graph::new();
        let p = g.param(x.clone());
        let m = g.matmul(p, p).unwrap();
        let t = g.tanh(m);
        let root = g.mean(t);
        let first = g.backward(root).unwrap().wrt(p);
        let second = g.backward(root).unwrap().wrt(p);
        assert_eq!(first, second);
        first
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut g = Graph::new();
    let a = g.param(Tensor::vector(vec![1.0, 2.0]));
    let b = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let msg = g.add(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    let root = g.param(Tensor::vector(vec![1.0, 2.0]));
    assert!(g.backward(root).is_err());
}
