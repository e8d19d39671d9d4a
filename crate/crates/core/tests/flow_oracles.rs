mod common;

use common::*;
use rad_core::flow::{FlowConfig, FlowModel};
use rad_core::meta::inner_step;
use rad_core::rng::uniform;

#[test]
fn round_trip_over_random_models() {
    let mut r = rng(1);
    for (m, &d) in [2usize, 8, 16].iter().cycle().take(30).enumerate() {
        let model = random_model(d, 8, 16, 1.0, m as u64);
        for u in random_rows(20, d, 2.0, &mut r) {
            let z = model.forward(&u).unwrap().z;
            let back = model.inverse(&z).unwrap();
            let err = back.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "d={d} err={err}");
            let fwd = model.forward(&model.inverse(&u).unwrap()).unwrap().z;
            let err = fwd.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "d={d} err={err}");
        }
    }
}

#[test]
fn log_det_matches_numerical_jacobian() {
    let mut r = rng(2);
    for (m, &d) in [3usize, 2, 8].iter().cycle().take(12).enumerate() {
        let model = random_model(d, 8, 16, 1.0, 100 + m as u64);
        for u in random_rows(5, d, 1.0, &mut r) {
            let jac = fd_jacobian(|x| model.forward(x).unwrap().z, &u, 1e-5);
            let ld = model.forward(&u).unwrap().log_det;
            let oracle = log_abs_det(&jac);
            assert!(rel_err(ld, oracle, 1e-3) < 1e-4, "d={d}: {ld} vs {oracle}");
        }
    }
}

#[test]
fn single_block_jacobian_is_triangular() {
    let model = random_model(6, 4, 8, 1.0, 7);
    let mut r = rng(3);
    for bi in 0..4 {
        let b = block(&model, bi);
        let x: Vec<f64> = (0..6).map(|_| uniform(&mut r, -2.0, 2.0)).collect();
        // In permuted coordinates: y depends on xp through the coupling only.
        let perm = b.permutation().to_vec();
        let f = |xp: &[f64]| {
            let mut x = vec![0.0; xp.len()];
            for (j, &p) in perm.iter().enumerate() {
                x[p] = xp[j];
            }
            b.forward_row(&x).0
        };
        let xp: Vec<f64> = perm.iter().map(|&p| x[p]).collect();
        let jac = fd_jacobian(f, &xp, 1e-5);
        for &i in b.conditioning() {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((jac[i][j] - want).abs() < 1e-6);
            }
        }
        for &i in b.active() {
            for &j in b.active() {
                if i != j {
                    assert!(jac[i][j].abs() < 1e-6, "block {bi}: J[{i}][{j}] = {}", jac[i][j]);
                }
            }
        }
    }
}

#[test]
fn batch_gradient_matches_finite_differences() {
    let model = random_model(4, 8, 8, 1.0, 11);
    let batch = random_rows(5, 4, 1.0, &mut rng(4));
    let lambda = 0.05;
    let (_, grads) = model.value_and_grad(&batch, lambda).unwrap();
    let loss = |m: &FlowModel| m.nf_loss_batch(&batch).unwrap() + lambda * m.param_sq_norm();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        for k in 0..g.len() {
            let perturbed = |delta: f64| {
                let mut m = model.clone();
                m.params_mut().nth(ti).unwrap().data_mut()[k] += delta;
                loss(&m)
            };
            let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            worst = worst.max(rel_err(g.data()[k], fd, 1e-6));
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

#[test]
fn graph_gradient_matches_hand_written_backprop() {
    for (seed, d) in [(1u64, 2usize), (2, 5), (3, 8)] {
        let model = random_model(d, 4, 8, 1.0, seed);
        let batch = random_rows(6, d, 1.5, &mut rng(seed));
        let (value, grads) = model.value_and_grad(&batch, 0.01).unwrap();
        let oracle = oracle_grad(&model, &batch, 0.01);
        let mean: f64 = batch.iter().map(|u| oracle_loss(&model, u)).sum::<f64>() / 6.0;
        assert!((value - mean - 0.01 * model.param_sq_norm()).abs() < 1e-10);
        for (g, o) in grads.iter().zip(&oracle) {
            for (a, b) in g.data().iter().zip(o) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn inner_step_matches_hand_rolled_descent() {
    let model = random_model(2, 8, 8, 1.0, 21);
    let support = random_rows(4, 2, 1.0, &mut rng(5));
    let refs: Vec<&[f64]> = support.iter().map(|r| r.as_slice()).collect();
    let (alpha, lambda) = (0.05, 0.01);
    let adapted = inner_step(&model, &refs, alpha, lambda, 1).unwrap();
    let grad = oracle_grad(&model, &support, lambda);
    for ((p, q), g) in adapted.params().zip(model.params()).zip(&grad) {
        for ((a, b), gv) in p.data().iter().zip(q.data()).zip(g) {
            assert!((a - (b - alpha * gv)).abs() < 1e-10);
        }
    }
}

#[test]
fn nf_loss_recomposes() {
    let model = random_model(5, 8, 16, 1.0, 8);
    for u in random_rows(10, 5, 1.0, &mut rng(6)) {
        let r = model.forward(&u).unwrap();
        let want = r.z.iter().map(|v| v * v).sum::<f64>() - r.log_det;
        assert_eq!(model.nf_loss(&u).unwrap(), want);
        assert!((oracle_loss(&model, &u) - want).abs() < 1e-10);
        let lp = model.log_density(&u).unwrap();
        let want = -0.5 * r.z.iter().map(|v| v * v).sum::<f64>() - 2.5 * (2.0 * std::f64::consts::PI).ln() + r.log_det;
        assert!((lp - want).abs() < 1e-12);
    }
}

fn trained(dim: usize, seed: u64) -> FlowModel {
    let mut model = FlowModel::new(&FlowConfig {
        blocks: 4,
        hidden: 16,
        seed,
        ..FlowConfig::new(dim)
    })
    .unwrap();
    let mut r = rng(seed);
    let data: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..dim).map(|k| 0.5 + 0.6 * rad_core::rng::normal(&mut r) * (1.0 + k as f64 * 0.3)).collect())
        .collect();
    for _ in 0..200 {
        let (_, g) = model.value_and_grad(&data, 0.0).unwrap();
        model.apply_update(-0.01, &g);
    }
    model
}

#[test]
fn one_dimensional_density_integrates_to_one() {
    for model in [random_model(1, 8, 16, 1.0, 3), trained(1, 4)] {
        let h = 1e-3;
        let total: f64 = (0..16_000)
            .map(|i| model.log_density(&[-8.0 + (i as f64 + 0.5) * h]).unwrap().exp() * h)
            .sum();
        assert!((total - 1.0).abs() < 0.02, "integral {total}");
    }
}

#[test]
fn two_dimensional_density_integrates_to_one() {
    for model in [random_model(2, 4, 8, 1.0, 5), trained(2, 6)] {
        let h = 0.025;
        let n = (16.0 / h) as usize;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = [-8.0 + (i as f64 + 0.5) * h, -8.0 + (j as f64 + 0.5) * h];
                total += model.log_density(&u).unwrap().exp() * h * h;
            }
        }
        assert!((total - 1.0).abs() < 0.02, "integral {total}");
    }
}
