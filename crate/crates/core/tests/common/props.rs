//! Structural properties checked by both the integration tests and the
//! acceptance suite.

use iciia::model::{self, inverse_shuffle, shuffle, shuffle_index, AttentionWindow, IciiaConfig};
use iciia::tensor::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{dense_reference, random_matrix, randomized_params, rel_error, rng};

/// Worst relative deviation of the P=1 module from the dense oracle.
pub fn dense_oracle_error(seed: u64, cfg: &IciiaConfig, b: usize, masked: bool) -> f64 {
    let mut r = rng(seed);
    let params = randomized_params(cfg, seed);
    let features = random_matrix(&mut r, b, cfg.feature_dim);
    let window = if masked && b > 1 {
        let mut valid: Vec<bool> = (0..b).map(|_| r.gen_bool(0.6)).collect();
        valid[0] = true;
        AttentionWindow::masked(features, valid).unwrap()
    } else {
        AttentionWindow::full(features)
    };
    let got = model::infer(&window, &params, cfg).unwrap();
    let want = dense_reference(&window, &params, cfg);
    window
        .target_rows
        .iter()
        .map(|&i| rel_error(got.row(i), &want[i]))
        .fold(0.0, f64::max)
}

pub fn shuffle_round_trips(seed: u64, dim: usize, partitions: usize) -> bool {
    let x = random_matrix(&mut rng(seed), 3, dim);
    let there = shuffle(&x, partitions).unwrap();
    let back = inverse_shuffle(&there, partitions).unwrap();
    let other_way = shuffle(&inverse_shuffle(&x, partitions).unwrap(), partitions).unwrap();
    back.as_slice() == x.as_slice() && other_way.as_slice() == x.as_slice()
}

/// Padding rows (filled with garbage) masked out must leave every valid
/// row's output bit-for-bit equal to running on the valid rows alone.
pub fn masked_matches_truncated(seed: u64, cfg: &IciiaConfig, valid_rows: usize, pad: usize) -> bool {
    let mut r = rng(seed);
    let params = randomized_params(cfg, seed).cast::<f32>();
    let real: Matrix<f32> = random_matrix(&mut r, valid_rows, cfg.feature_dim).cast();
    let garbage: Matrix<f32> = random_matrix(&mut r, pad, cfg.feature_dim).cast();
    let mut order: Vec<Option<usize>> = (0..valid_rows).map(Some).chain((0..pad).map(|_| None)).collect();
    order.shuffle(&mut r);
    let (mut data, mut valid, mut g) = (Vec::new(), Vec::new(), 0);
    for slot in &order {
        match slot {
            Some(i) => data.extend_from_slice(real.row(*i)),
            None => {
                data.extend_from_slice(garbage.row(g));
                g += 1;
            }
        }
        valid.push(slot.is_some());
    }
    let padded = Matrix::from_vec(order.len(), cfg.feature_dim, data).unwrap();
    // The truncated window keeps the valid rows in the order they appear.
    let kept: Vec<usize> = order.iter().flatten().copied().collect();
    let truncated = real.select_rows(&kept);
    let a = model::infer(&AttentionWindow::masked(padded, valid.clone()).unwrap(), &params, cfg).unwrap();
    let b = model::infer(&AttentionWindow::full(truncated), &params, cfg).unwrap();
    let a_rows: Vec<usize> = (0..valid.len()).filter(|&i| valid[i]).collect();
    a.select_rows(&a_rows).as_slice() == b.as_slice()
}

/// Relative change of the target row's output after permuting the history.
pub fn permutation_error(seed: u64, cfg: &IciiaConfig, b: usize) -> f64 {
    let mut r = rng(seed);
    let params = randomized_params(cfg, seed);
    let x = random_matrix(&mut r, b, cfg.feature_dim);
    let mut perm: Vec<usize> = (0..b - 1).collect();
    perm.shuffle(&mut r);
    perm.push(b - 1);
    let y = model::infer(&AttentionWindow::with_target_last(x.clone()), &params, cfg).unwrap();
    let yp = model::infer(&AttentionWindow::with_target_last(x.select_rows(&perm)), &params, cfg).unwrap();
    rel_error(y.row(b - 1), yp.row(b - 1))
}

/// After the shuffle, every head's contiguous slice draws from all
/// partitions whenever the head width is at least the partition count.
pub fn heads_cover_partitions(dim: usize, heads: usize, partitions: usize) -> bool {
    let dh = dim / heads;
    let block = dim / partitions;
    let mut seen = vec![vec![false; partitions]; heads];
    for i in 0..dim {
        let j = shuffle_index(i, dim, partitions);
        seen[j / dh][i / block] = true;
    }
    seen.iter().all(|h| h.iter().all(|&s| s))
}
