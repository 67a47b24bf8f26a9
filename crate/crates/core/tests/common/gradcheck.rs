//! Analytic-versus-numeric gradient comparisons for every differentiable
//! piece, each returning the worst relative error it saw.

use iciia::model::{self, AttentionWindow, IciiaConfig, IciiaParams, PartitionedProjection};
use iciia::tensor::ops::{self, MacCounter};
use iciia::tensor::{Matrix, ParamTensor};
use iciia::train::Classifier;
use rand::Rng;

use super::{numeric_grad, probe, random_matrix, randomized_params, rel_error, rng};

fn pt(m: Matrix<f64>) -> ParamTensor<f64> {
    ParamTensor::new(m)
}

pub fn linear(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (b, din, dout) = (3, 4, 5);
    let x = random_matrix(&mut r, b, din);
    let mut w = pt(random_matrix(&mut r, din, dout));
    let mut bias = pt(random_matrix(&mut r, 1, dout));
    let up = random_matrix(&mut r, b, dout);
    let dx = ops::linear_backward(&x, &mut w, &mut bias, &up).unwrap();
    let mut s = (x, w.clone(), bias.clone());
    let loss = |s: &(Matrix<f64>, ParamTensor<f64>, ParamTensor<f64>)| {
        probe(&ops::linear_forward(&s.0, &s.1, &s.2).unwrap(), &up)
    };
    let nx = numeric_grad(&mut s, |s| s.0.as_mut_slice(), loss);
    let nw = numeric_grad(&mut s, |s| s.1.value.as_mut_slice(), loss);
    let nb = numeric_grad(&mut s, |s| s.2.value.as_mut_slice(), loss);
    rel_error(dx.as_slice(), &nx)
        .max(rel_error(w.grad.as_slice(), &nw))
        .max(rel_error(bias.grad.as_slice(), &nb))
}

pub fn layer_norm(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_matrix(&mut r, 3, 6);
    let mut g = pt(random_matrix(&mut r, 1, 6));
    let mut b = pt(random_matrix(&mut r, 1, 6));
    let up = random_matrix(&mut r, 3, 6);
    let eps = 1e-5;
    let (_, cache) = ops::layer_norm_forward(&x, &g, &b, eps).unwrap();
    let dx = ops::layer_norm_backward(&cache, &mut g, &mut b, &up).unwrap();
    let mut s = (x, g.clone(), b.clone());
    let loss = |s: &(Matrix<f64>, ParamTensor<f64>, ParamTensor<f64>)| {
        probe(&ops::layer_norm_forward(&s.0, &s.1, &s.2, eps).unwrap().0, &up)
    };
    let nx = numeric_grad(&mut s, |s| s.0.as_mut_slice(), loss);
    let ng = numeric_grad(&mut s, |s| s.1.value.as_mut_slice(), loss);
    let nb = numeric_grad(&mut s, |s| s.2.value.as_mut_slice(), loss);
    rel_error(dx.as_slice(), &nx)
        .max(rel_error(g.grad.as_slice(), &ng))
        .max(rel_error(b.grad.as_slice(), &nb))
}

pub fn softmax(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut x = random_matrix(&mut r, 4, 5);
    let up = random_matrix(&mut r, 4, 5);
    let probs = ops::softmax_rows(&x);
    let dx = ops::softmax_rows_backward(&probs, &up).unwrap();
    let nx = numeric_grad(&mut x, |x| x.as_mut_slice(), |x| probe(&ops::softmax_rows(x), &up));
    rel_error(dx.as_slice(), &nx)
}

pub fn attention(seed: u64, mask: &[bool]) -> f64 {
    let mut r = rng(seed);
    let b = mask.len();
    let dh = 3;
    let q = random_matrix(&mut r, b, dh);
    let k = random_matrix(&mut r, b, dh);
    let v = random_matrix(&mut r, b, dh);
    let up = random_matrix(&mut r, b, dh);
    let (_, cache) = ops::scaled_dot_attention(&q, &k, &v, mask, &mut MacCounter::new()).unwrap();
    let (dq, dk, dv) = ops::scaled_dot_attention_backward(&q, &k, &v, mask, &cache, &up).unwrap();
    let mut s = [q, k, v];
    let loss = |s: &[Matrix<f64>; 3]| {
        probe(
            &ops::scaled_dot_attention(&s[0], &s[1], &s[2], mask, &mut MacCounter::new())
                .unwrap()
                .0,
            &up,
        )
    };
    let nq = numeric_grad(&mut s, |s| s[0].as_mut_slice(), loss);
    let nk = numeric_grad(&mut s, |s| s[1].as_mut_slice(), loss);
    let nv = numeric_grad(&mut s, |s| s[2].as_mut_slice(), loss);
    rel_error(dq.as_slice(), &nq)
        .max(rel_error(dk.as_slice(), &nk))
        .max(rel_error(dv.as_slice(), &nv))
}

pub fn relu(seed: u64) -> f64 {
    let mut r = rng(seed);
    // Keep inputs away from the kink so central differences are exact.
    let mut x = Matrix::from_fn(3, 4, |_, _| {
        let v: f64 = r.gen_range(0.1..1.0);
        if r.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let up = random_matrix(&mut r, 3, 4);
    let dx = ops::relu_backward(&x, &up).unwrap();
    let nx = numeric_grad(&mut x, |x| x.as_mut_slice(), |x| probe(&ops::relu(x), &up));
    rel_error(dx.as_slice(), &nx)
}

pub fn cross_entropy(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut logits = random_matrix(&mut r, 4, 6);
    let labels = [0, 5, 2, 2];
    let (_, d) = ops::cross_entropy(&logits, &labels).unwrap();
    let n = numeric_grad(
        &mut logits,
        |x| x.as_mut_slice(),
        |x| ops::cross_entropy(x, &labels).unwrap().0,
    );
    rel_error(d.as_slice(), &n)
}

pub fn projection(seed: u64, dim: usize, partitions: usize) -> f64 {
    let mut r = rng(seed);
    let mut p = PartitionedProjection::<f64>::glorot(dim, partitions, &mut r).unwrap();
    for v in p.bias.value.as_mut_slice() {
        *v = r.gen_range(-0.5..0.5);
    }
    let x = random_matrix(&mut r, 3, dim);
    let up = random_matrix(&mut r, 3, dim);
    let dx = p.backward(&x, &up).unwrap();
    let analytic: Vec<Vec<f64>> = p.params().map(|t| t.grad.as_slice().to_vec()).collect();
    let mut s = (x, p.clone());
    let loss =
        |s: &(Matrix<f64>, PartitionedProjection<f64>)| probe(&s.1.forward(&s.0, &mut MacCounter::new()).unwrap(), &up);
    let mut worst = rel_error(dx.as_slice(), &numeric_grad(&mut s, |s| s.0.as_mut_slice(), loss));
    for (i, a) in analytic.iter().enumerate() {
        let n = numeric_grad(&mut s, |s| s.1.params_mut().nth(i).unwrap().value.as_mut_slice(), loss);
        worst = worst.max(rel_error(a, &n));
    }
    worst
}

/// Gradient of the attention sub-block (or the feed-forward sub-block when
/// `ffn` is set) with respect to its input and every layer tensor.
pub fn sub_block(seed: u64, cfg: &IciiaConfig, b: usize, ffn: bool) -> f64 {
    let mut r = rng(seed);
    let params = randomized_params(cfg, seed);
    let mut layer = params.layers[0].clone();
    let x = random_matrix(&mut r, b, cfg.feature_dim);
    let up = random_matrix(&mut r, b, cfg.feature_dim);
    let mask = vec![true; b];
    let mut macs = MacCounter::new();
    let dx = if ffn {
        let (_, t) = model::ffn_forward(&x, &layer, cfg, &mut macs).unwrap();
        model::ffn_backward(&t, &mut layer, cfg, &up).unwrap()
    } else {
        let (_, t) = model::mhsa_forward(&x, &layer, cfg, &mask, &mut macs).unwrap();
        model::mhsa_backward(&t, &mut layer, cfg, &mask, &up).unwrap()
    };
    let analytic: Vec<Vec<f64>> = layer.params().iter().map(|t| t.grad.as_slice().to_vec()).collect();
    let mut s = (x, params.layers[0].clone());
    let loss = |s: &(Matrix<f64>, iciia::model::IciiaLayerParams<f64>)| {
        let mut m = MacCounter::new();
        let y = if ffn {
            model::ffn_forward(&s.0, &s.1, cfg, &mut m).unwrap().0
        } else {
            model::mhsa_forward(&s.0, &s.1, cfg, &mask, &mut m).unwrap().0
        };
        probe(&y, &up)
    };
    let mut worst = rel_error(dx.as_slice(), &numeric_grad(&mut s, |s| s.0.as_mut_slice(), loss));
    for (i, a) in analytic.iter().enumerate() {
        // The feed-forward block does not touch the attention tensors and
        // vice versa; both sides are then zero.
        let n = numeric_grad(&mut s, |s| s.1.params_mut().swap_remove(i).value.as_mut_slice(), loss);
        worst = worst.max(rel_error(a, &n));
    }
    worst
}

/// Cross-entropy through the classifier applied to the module output, with
/// respect to the window features and every module parameter.
pub fn end_to_end(seed: u64, cfg: &IciiaConfig, b: usize) -> f64 {
    let mut r = rng(seed);
    let mut params = randomized_params(cfg, seed);
    let classes = 3;
    let mut clf = Classifier::<f64>::zeros(cfg.feature_dim, classes);
    clf.weight.value = random_matrix(&mut r, cfg.feature_dim, classes);
    let features = random_matrix(&mut r, b, cfg.feature_dim);
    let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..classes)).collect();

    let window = AttentionWindow::full(features.clone());
    let (y, trace) = model::forward(&window, &params, cfg, &mut MacCounter::new()).unwrap();
    let (_, dlogits) = ops::cross_entropy(&clf.logits(&y).unwrap(), &labels).unwrap();
    let dy = clf.clone().backward(&y, &dlogits).unwrap();
    params.zero_grad();
    let dx = model::backward(&trace, &mut params, cfg, &dy).unwrap();
    let analytic: Vec<Vec<f64>> = params.params().map(|t| t.grad.as_slice().to_vec()).collect();

    let mut s = (features, params.clone());
    let loss = |s: &(Matrix<f64>, IciiaParams<f64>)| {
        let w = AttentionWindow::full(s.0.clone());
        let y = model::infer(&w, &s.1, cfg).unwrap();
        ops::cross_entropy(&clf.logits(&y).unwrap(), &labels).unwrap().0
    };
    let mut worst = rel_error(dx.as_slice(), &numeric_grad(&mut s, |s| s.0.as_mut_slice(), loss));
    for (i, a) in analytic.iter().enumerate() {
        let n = numeric_grad(&mut s, |s| s.1.params_mut().nth(i).unwrap().value.as_mut_slice(), loss);
        worst = worst.max(rel_error(a, &n));
    }
    worst
}

/// Every per-primitive check on one seed, by name.
pub fn primitives(seed: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("linear", linear(seed)),
        ("layer_norm", layer_norm(seed)),
        ("softmax", softmax(seed)),
        ("attention", attention(seed, &[true, true, true, true])),
        ("attention_masked", attention(seed, &[true, false, true, false])),
        ("relu", relu(seed)),
        ("cross_entropy", cross_entropy(seed)),
        ("projection_p1", projection(seed, 8, 1)),
        ("projection_p2", projection(seed, 8, 2)),
        ("projection_p4", projection(seed, 8, 4)),
    ]
}
