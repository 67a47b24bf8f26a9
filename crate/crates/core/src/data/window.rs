use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::AttentionWindow;
use crate::tensor::{Matrix, Scalar};

use super::{ClientSet, FeatureRecord};

/// A training window with the labels of its target rows.
#[derive(Clone, Debug)]
pub struct LabeledWindow<T> {
    pub client_id: String,
    pub window: AttentionWindow<T>,
    /// Aligned with `window.target_rows`.
    pub labels: Vec<usize>,
}

fn features_matrix<T: Scalar>(records: &[&FeatureRecord], rows: usize) -> Matrix<T> {
    let dim = records.first().map_or(0, |r| r.features.len());
    let mut m = Matrix::zeros(rows, dim);
    for (i, r) in records.iter().enumerate() {
        for (dst, &v) in m.row_mut(i).iter_mut().zip(&r.features) {
            *dst = T::lit(v as f64);
        }
    }
    m
}

/// Splits one client's records into windows of `b` rows, sampled without
/// replacement in a seeded order. The last window holds the remainder. A
/// client with fewer than `b` records yields a single window padded to `b`
/// rows whose padding is masked out.
pub fn make_windows<T: Scalar>(records: &[FeatureRecord], b: usize, seed: u64) -> Vec<LabeledWindow<T>> {
    assert!(b >= 1, "window size must be positive");
    if records.is_empty() {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let client_id = records[0].client_id.clone();

    if records.len() < b {
        let picked: Vec<&FeatureRecord> = order.iter().map(|&i| &records[i]).collect();
        let valid = (0..b).map(|i| i < picked.len()).collect();
        let window = AttentionWindow::masked(features_matrix(&picked, b), valid).expect("at least one valid row");
        return vec![LabeledWindow {
            client_id,
            window,
            labels: picked.iter().map(|r| r.label).collect(),
        }];
    }

    order
        .chunks(b)
        .map(|chunk| {
            let picked: Vec<&FeatureRecord> = chunk.iter().map(|&i| &records[i]).collect();
            LabeledWindow {
                client_id: client_id.clone(),
                window: AttentionWindow::full(features_matrix(&picked, picked.len())),
                labels: picked.iter().map(|r| r.label).collect(),
            }
        })
        .collect()
}

/// Windows for every client of `set`, in a seeded global order. Also returns
/// the number of clients skipped for having no records.
pub fn make_epoch_windows<T: Scalar>(set: &ClientSet, b: usize, seed: u64) -> (Vec<LabeledWindow<T>>, usize) {
    let mut skipped = 0;
    let mut out = Vec::new();
    for (i, records) in set.clients.values().enumerate() {
        if records.is_empty() {
            skipped += 1;
            continue;
        }
        let client_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
        out.extend(make_windows(records, b, client_seed));
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (out, skipped)
}
