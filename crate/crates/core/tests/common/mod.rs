//! Independent oracles shared by the integration tests and the acceptance
//! suite: central finite differences and a dense reference forward pass.
#![allow(dead_code)]

use iciia::model::{AttentionWindow, IciiaConfig, IciiaParams};
use iciia::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod gradcheck;
pub mod props;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference norm when both
/// gradients are numerically zero (e.g. the key bias, which softmax ignores).
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-7 {
        diff
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of `loss` with respect to the slice exposed by
/// `slot`, perturbing one entry at a time.
pub fn numeric_grad<S>(state: &mut S, slot: impl Fn(&mut S) -> &mut [f64], loss: impl Fn(&S) -> f64) -> Vec<f64> {
    let n = slot(state).len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = slot(state)[i];
        slot(state)[i] = orig + FD_STEP;
        let plus = loss(state);
        slot(state)[i] = orig - FD_STEP;
        let minus = loss(state);
        slot(state)[i] = orig;
        out.push((plus - minus) / (2.0 * FD_STEP));
    }
    out
}

/// `Σ weights ∘ m`, a scalar probe that turns any output into a loss whose
/// upstream gradient is `weights`.
pub fn probe(m: &Matrix<f64>, weights: &Matrix<f64>) -> f64 {
    m.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
}

fn layer_norm(row: &[f64], gain: &[f64], bias: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    row.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

fn dense(x: &[f64], w: &Matrix<f64>, b: &Matrix<f64>) -> Vec<f64> {
    (0..w.cols())
        .map(|j| b[(0, j)] + x.iter().enumerate().map(|(i, v)| v * w[(i, j)]).sum::<f64>())
        .collect()
}

/// Straightforward forward pass for the single-partition case, written
/// against plain vectors rather than the library's kernels.
pub fn dense_reference(window: &AttentionWindow<f64>, params: &IciiaParams<f64>, cfg: &IciiaConfig) -> Vec<Vec<f64>> {
    assert_eq!(cfg.num_partitions, 1);
    let b = window.len();
    let d = cfg.feature_dim;
    let dh = d / cfg.num_heads;
    let mut x: Vec<Vec<f64>> = (0..b).map(|r| window.features.row(r).to_vec()).collect();
    for layer in &params.layers {
        let proj = |p: &iciia::model::PartitionedProjection<f64>, rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|r| dense(r, &p.blocks[0].value, &p.bias.value))
                .collect()
        };
        let q = proj(&layer.proj_q, &x);
        let k = proj(&layer.proj_k, &x);
        let v = proj(&layer.proj_v, &x);
        let mut concat = vec![vec![0.0; d]; b];
        for h in 0..cfg.num_heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..b {
                let scores: Vec<Option<f64>> = (0..b)
                    .map(|j| {
                        window.valid[j]
                            .then(|| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    })
                    .collect();
                let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| (s - max).exp())).collect();
                let z: f64 = exps.iter().sum();
                for c in cols.clone() {
                    concat[i][c] = (0..b).map(|j| exps[j] / z * v[j][c]).sum();
                }
            }
        }
        let out = proj(&layer.proj_out, &concat);
        let y: Vec<Vec<f64>> = (0..b)
            .map(|i| {
                let r: Vec<f64> = x[i].iter().zip(&out[i]).map(|(a, c)| a + c).collect();
                layer_norm(&r, layer.ln1_gain.value.row(0), layer.ln1_bias.value.row(0), cfg.ln_eps)
            })
            .collect();
        let hidden: Vec<Vec<f64>> = proj(&layer.ffn1, &y)
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        let f = proj(&layer.ffn2, &hidden);
        x = (0..b)
            .map(|i| {
                let r: Vec<f64> = y[i].iter().zip(&f[i]).map(|(a, c)| a + c).collect();
                layer_norm(&r, layer.ln2_gain.value.row(0), layer.ln2_bias.value.row(0), cfg.ln_eps)
            })
            .collect();
    }
    x
}

/// Parameters with every tensor (including biases and layer-norm terms)
/// randomized, so gradient checks exercise all of them.
pub fn randomized_params(cfg: &IciiaConfig, seed: u64) -> IciiaParams<f64> {
    let mut p = IciiaParams::<f64>::init(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x5151);
    for t in p.params_mut() {
        for v in t.value.as_mut_slice() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
    p
}
