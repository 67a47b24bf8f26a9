mod common;

use common::gradcheck;
use iciia::model::IciiaConfig;
use rand::seq::SliceRandom;

#[test]
fn every_primitive_matches_central_differences() {
    for seed in 0..3 {
        for (name, err) in gradcheck::primitives(seed) {
            assert!(err < 1e-5, "{name} (seed {seed}): relative error {err:e}");
        }
    }
}

#[test]
fn sub_blocks_match_central_differences() {
    for (p, h, b) in [(1, 2, 3), (2, 1, 1), (4, 4, 5)] {
        let cfg = IciiaConfig::new(8, h, p, 1);
        for ffn in [false, true] {
            let err = gradcheck::sub_block(p as u64, &cfg, b, ffn);
            assert!(err < 1e-5, "P={p} H={h} B={b} ffn={ffn}: {err:e}");
        }
    }
}

#[test]
fn sub_block_without_shuffle() {
    let cfg = IciiaConfig {
        shuffle: false,
        ..IciiaConfig::new(8, 2, 2, 1)
    };
    assert!(gradcheck::sub_block(4, &cfg, 3, false) < 1e-5);
}

#[test]
fn end_to_end_on_sampled_configs() {
    let mut grid = Vec::new();
    for d in [8, 16] {
        for h in [1, 2, 4] {
            for p in [1, 2, 4] {
                for n in [1, 2] {
                    for b in [1, 3, 5] {
                        grid.push((d, h, p, n, b));
                    }
                }
            }
        }
    }
    grid.shuffle(&mut common::rng(11));
    for (i, &(d, h, p, n, b)) in grid.iter().take(12).enumerate() {
        let cfg = IciiaConfig::new(d, h, p, n);
        let err = gradcheck::end_to_end(i as u64, &cfg, b);
        assert!(err < 1e-4, "D={d} H={h} P={p} N={n} B={b}: {err:e}");
    }
}
