//! Acceptance suite: one PASS/FAIL line per criterion. Training runs are
//! shared between criteria, so later ones reuse earlier results.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{gradcheck, props};
use iciia::data::SyntheticSpec;
use iciia::harness::{apply_ablation, evaluate, evaluate_served, AblationTag, Prepared};
use iciia::model::{divisors, AttentionWindow, IciiaConfig, IciiaParams};
use iciia::overhead::{backbone_table, flops, instrumented_count, param_count, round_sig};
use iciia::train::{train_iciia, Model, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

const SEEDS: [u64; 3] = [0, 1, 2];
const HISTORY: usize = 15;

/// Published (ICIIA-B params, ICIIA-B FLOPs, ICIIA-T params, ICIIA-T FLOPs).
const PUBLISHED: [(&str, [f64; 4]); 6] = [
    ("MobileNetV3-L", [30e6, 0.47e9, 0.14e6, 3.8e6]),
    ("ResNet-152", [76e6, 1.2e9, 0.33e6, 7.9e6]),
    ("EfficientNet-B4", [58e6, 0.93e9, 0.25e6, 6.4e6]),
    ("Swin-B", [19e6, 0.30e9, 0.09e6, 2.8e6]),
    ("ConvNeXt-L", [43e6, 0.68e9, 0.19e6, 5.0e6]),
    ("EfficientNet-B7", [118e6, 1.9e9, 0.50e6, 11e6]),
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Memoized datasets, backbones and trained modules keyed by condition.
#[derive(Default)]
struct Lab {
    prepared: HashMap<(u64, u64), Prepared<f32>>,
    modules: HashMap<(u64, u64, String), Model<f32>>,
}

fn rho_key(rho: f64) -> u64 {
    rho.to_bits()
}

impl Lab {
    fn prepared(&mut self, rho: f64, seed: u64) -> &Prepared<f32> {
        self.prepared.entry((rho_key(rho), seed)).or_insert_with(|| {
            let spec = SyntheticSpec {
                heterogeneity: rho,
                seed,
                ..SyntheticSpec::default()
            };
            Prepared::synthetic(&spec, &train_cfg(seed)).expect("data preparation")
        })
    }

    fn module(&mut self, rho: f64, seed: u64, cfg: &IciiaConfig) -> Model<f32> {
        let key = (rho_key(rho), seed, format!("{cfg:?}"));
        if let Some(m) = self.modules.get(&key) {
            return m.clone();
        }
        let prep = self.prepared(rho, seed);
        let out = train_iciia(&prep.data.train, &prep.data.val, &prep.backbone, cfg, &train_cfg(seed))
            .expect("module training");
        self.modules.insert(key, out.model.clone());
        out.model
    }

    fn baseline_acc(&mut self, rho: f64, seed: u64) -> f64 {
        self.prepared(rho, seed).baseline_report(seed).unwrap().overall_accuracy
    }

    fn module_acc(&mut self, rho: f64, seed: u64, cfg: &IciiaConfig, history: usize) -> f64 {
        let model = self.module(rho, seed, cfg);
        let prep = self.prepared(rho, seed);
        evaluate(&prep.data.test, &model, history, seed)
            .unwrap()
            .overall_accuracy
    }
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..TrainConfig::default()
    }
}

fn module_cfg(partitions: usize) -> IciiaConfig {
    IciiaConfig::new(64, 4, partitions, 2)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn table_reproduction(_: &mut Lab) -> Outcome {
    let rows = backbone_table(3, 16).unwrap();
    let mut misses = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, published) in PUBLISHED {
        let base = rows
            .iter()
            .find(|r| r.backbone == name && r.num_partitions == 1)
            .unwrap();
        let tiny = rows
            .iter()
            .find(|r| r.backbone == name && r.num_partitions == 256)
            .unwrap();
        let ours = [
            base.table_params(),
            base.flops_per_window,
            tiny.table_params(),
            tiny.flops_per_window,
        ];
        let labels = ["B params", "B FLOPs", "T params", "T FLOPs"];
        for ((&v, &p), label) in ours.iter().zip(&published).zip(labels) {
            let rounded = round_sig(v as f64, 2);
            let rel = (rounded - p).abs() / p;
            worst = worst.max(rel);
            if rel > 0.03 {
                misses.push(format!(
                    "{name} {label}: {rounded:.3e} vs {p:.3e} ({:.1}%)",
                    100.0 * rel
                ));
            }
        }
    }
    let detail = if misses.is_empty() {
        format!("24/24 entries within 3% (worst {:.1}%)", 100.0 * worst)
    } else {
        format!(
            "{} of 24 entries off by more than 3%: {}",
            misses.len(),
            misses.join("; ")
        )
    };
    outcome(misses.is_empty(), detail)
}

fn instrumentation(_: &mut Lab) -> Outcome {
    let mut r = common::rng(2024);
    let dims = [4usize, 8, 12, 16, 24, 32, 48, 64, 96, 128];
    let mut mismatches = 0;
    let configs = 100;
    for i in 0..configs {
        let d = *dims.choose(&mut r).unwrap();
        let h = *divisors(d).choose(&mut r).unwrap();
        let p = *divisors(d).choose(&mut r).unwrap();
        let n = r.gen_range(1..=3);
        let b = r.gen_range(1..=16);
        let cfg = IciiaConfig::new(d, h, p, n);
        let params = IciiaParams::<f32>::init(&cfg, i).unwrap();
        let x = common::random_matrix(&mut r, b, d).cast::<f32>();
        let counted = instrumented_count(&AttentionWindow::full(x), &params, &cfg).unwrap();
        if counted != flops(&cfg, b).unwrap() {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{configs} configs, {mismatches} mismatches"))
}

fn gradients(_: &mut Lab) -> Outcome {
    let mut worst_op: f64 = 0.0;
    for seed in 0..5 {
        for (_, e) in gradcheck::primitives(seed) {
            worst_op = worst_op.max(e);
        }
    }
    let mut worst_e2e: f64 = 0.0;
    let mut i = 0;
    for d in [8, 16] {
        for h in [1, 2, 4] {
            for p in [1, 2, 4] {
                for n in [1, 2] {
                    for b in [1, 3, 5] {
                        let cfg = IciiaConfig::new(d, h, p, n);
                        worst_e2e = worst_e2e.max(gradcheck::end_to_end(i, &cfg, b));
                        if n == 1 {
                            for ffn in [false, true] {
                                worst_op = worst_op.max(gradcheck::sub_block(i, &cfg, b, ffn));
                            }
                        }
                        i += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst_op < 1e-5 && worst_e2e < 1e-4,
        format!("worst per-op {worst_op:.2e} (< 1e-5), worst end-to-end {worst_e2e:.2e} (< 1e-4) over {i} configs"),
    )
}

fn degeneracies(_: &mut Lab) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut seed = 0;
    for d in [4, 8, 16] {
        for h in [1, 2, 4] {
            for n in [1, 2] {
                for b in [1, 3, 6] {
                    for masked in [false, true] {
                        worst = worst.max(props::dense_oracle_error(
                            seed,
                            &IciiaConfig::new(d, h, 1, n),
                            b,
                            masked,
                        ));
                        seed += 1;
                    }
                }
            }
        }
    }
    let shuffles_ok = [6, 16, 64, 96].into_iter().all(|d| {
        divisors(d)
            .into_iter()
            .all(|p| props::shuffle_round_trips(p as u64, d, p))
    });
    let mut masks_ok = true;
    for (s, p) in [1, 2, 4, 8].into_iter().enumerate() {
        for n in [1, 2] {
            for (valid, pad) in [(1, 4), (3, 3), (7, 1)] {
                masks_ok &= props::masked_matches_truncated(s as u64, &IciiaConfig::new(8, 2, p, n), valid, pad);
            }
        }
    }
    outcome(
        worst <= 1e-10 && shuffles_ok && masks_ok,
        format!("dense oracle {worst:.2e} (<= 1e-10), shuffle round trip bitwise: {shuffles_ok}, masked == truncated bitwise: {masks_ok}"),
    )
}

fn permutation(_: &mut Lab) -> Outcome {
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let p = [1, 2, 4, 8][trial as usize % 4];
        let cfg = IciiaConfig::new(16, 4, p, 1 + trial as usize % 2);
        worst = worst.max(props::permutation_error(trial, &cfg, 2 + trial as usize % 15));
    }
    outcome(
        worst <= 1e-6,
        format!("100 trials, worst relative change {worst:.2e} (<= 1e-6)"),
    )
}

fn adaptation(lab: &mut Lab) -> Outcome {
    let cfg = module_cfg(1);
    let gaps: Vec<f64> = SEEDS
        .iter()
        .map(|&s| lab.module_acc(1.0, s, &cfg, HISTORY) - lab.baseline_acc(1.0, s))
        .collect();
    let gap = mean(&gaps);
    outcome(
        gap >= 0.05,
        format!(
            "mean gain at m=15 {} points (>= 5); per seed {:?}",
            pct(gap),
            gaps.iter().map(|g| pct(*g)).collect::<Vec<_>>()
        ),
    )
}

fn history_trend(lab: &mut Lab) -> Outcome {
    let cfg = module_cfg(1);
    let (mut m15, mut m0, mut raw0, mut base) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &s in &SEEDS {
        let model = lab.module(1.0, s, &cfg);
        base.push(lab.baseline_acc(1.0, s));
        let test = &lab.prepared(1.0, s).data.test;
        m15.push(evaluate_served(test, &model, 15, s, 1).unwrap().overall_accuracy);
        m0.push(evaluate_served(test, &model, 0, s, 1).unwrap().overall_accuracy);
        raw0.push(evaluate(test, &model, 0, s).unwrap().overall_accuracy);
    }
    let rise = mean(&m15) - mean(&m0);
    let cold = mean(&m0) - mean(&base);
    outcome(
        rise >= 0.03 && cold.abs() <= 0.02,
        format!(
            "served with backbone fallback below 1 history image: m=15 {} vs m=0 {} (rise {} >= 3), m=0 minus baseline {} (|.| <= 2); module alone at m=0 {}",
            pct(mean(&m15)),
            pct(mean(&m0)),
            pct(rise),
            pct(cold),
            pct(mean(&raw0))
        ),
    )
}

fn heterogeneity_trend(lab: &mut Lab) -> Outcome {
    let cfg = module_cfg(1);
    let rhos = [0.0, 0.5, 1.0];
    let gaps: Vec<f64> = rhos
        .iter()
        .map(|&rho| {
            let g: Vec<f64> = SEEDS
                .iter()
                .map(|&s| lab.module_acc(rho, s, &cfg, HISTORY) - lab.baseline_acc(rho, s))
                .collect();
            mean(&g)
        })
        .collect();
    let at_one_is_max = gaps[2] >= gaps[0] && gaps[2] >= gaps[1];
    outcome(
        gaps[0].abs() <= 0.01 && at_one_is_max,
        format!(
            "gap at rho=0 {} (|.| <= 1), rho=0.5 {}, rho=1 {} (must be max)",
            pct(gaps[0]),
            pct(gaps[1]),
            pct(gaps[2])
        ),
    )
}

fn partition_trend(lab: &mut Lab) -> Outcome {
    let mut halving = true;
    let mut p = 1;
    while p < 64 {
        let a = param_count(&module_cfg(p)).unwrap().weights;
        let b = param_count(&module_cfg(2 * p)).unwrap().weights;
        halving &= a == 2 * b;
        p *= 2;
    }
    let base = mean(&SEEDS.iter().map(|&s| lab.baseline_acc(1.0, s)).collect::<Vec<_>>());
    let ps = [1, 4, 16, 64];
    let accs: Vec<f64> = ps
        .iter()
        .map(|&p| {
            mean(
                &SEEDS
                    .iter()
                    .map(|&s| lab.module_acc(1.0, s, &module_cfg(p), HISTORY))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let best = ps[accs.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
    let above = accs.iter().all(|&a| a > base);
    let cells: Vec<String> = ps
        .iter()
        .zip(&accs)
        .map(|(p, a)| {
            format!(
                "{}={}",
                if *p == 64 { "max".to_string() } else { format!("P{p}") },
                pct(*a)
            )
        })
        .collect();
    outcome(
        halving && above && best <= 4,
        format!(
            "weights halve per doubling: {halving}; baseline {}; {}; best at P={best}",
            pct(base),
            cells.join(" ")
        ),
    )
}

fn ablations(lab: &mut Lab) -> Outcome {
    let drop = |lab: &mut Lab, base: &IciiaConfig, tag: AblationTag| -> f64 {
        let d: Vec<f64> = SEEDS
            .iter()
            .map(|&s| {
                lab.module_acc(1.0, s, base, HISTORY) - lab.module_acc(1.0, s, &apply_ablation(base, tag), HISTORY)
            })
            .collect();
        mean(&d)
    };
    let base4 = module_cfg(4);
    let no_attention = drop(lab, &base4, AblationTag::NoAttention);
    let no_partition = drop(lab, &base4, AblationTag::NoPartition);
    let no_shuffle4 = drop(lab, &base4, AblationTag::NoShuffle);
    let no_shuffle64 = drop(lab, &module_cfg(64), AblationTag::NoShuffle);
    let attention_largest = no_attention > no_partition && no_attention > no_shuffle4;
    let shuffle_grows = no_shuffle64 > no_shuffle4;
    outcome(
        attention_largest && shuffle_grows,
        format!(
            "drops at P=4: no_attention {}, no_partition {}, no_shuffle {}; no_shuffle at P=64 {} (must exceed P=4)",
            pct(no_attention),
            pct(no_partition),
            pct(no_shuffle4),
            pct(no_shuffle64)
        ),
    )
}

type Criterion = (u32, &'static str, Duration, fn(&mut Lab) -> Outcome);

fn main() -> ExitCode {
    // Runs under `cargo test`; ignore libtest flags such as `--nocapture`.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria: [Criterion; 10] = [
        (
            1,
            "overhead table reproduction",
            Duration::from_secs(1),
            table_reproduction,
        ),
        (2, "instrumented counts match formula", minutes(1), instrumentation),
        (3, "gradient correctness", minutes(2), gradients),
        (4, "degeneracy equivalences", Duration::from_secs(10), degeneracies),
        (
            5,
            "history permutation invariance",
            Duration::from_secs(10),
            permutation,
        ),
        (6, "end-to-end adaptation", minutes(10), adaptation),
        (7, "history-size trend", minutes(10), history_trend),
        (8, "heterogeneity trend", minutes(20), heterogeneity_trend),
        (9, "partition trend", minutes(30), partition_trend),
        (10, "ablations", minutes(30), ablations),
    ];
    let mut lab = Lab::default();
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !args.is_empty() && !args.iter().any(|a| name.contains(a.as_str()) || *a == id.to_string()) {
            continue;
        }
        let t = Instant::now();
        let o = run(&mut lab);
        let elapsed = t.elapsed();
        let in_time = elapsed <= budget;
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {}: {name}: {} [{:.1}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
