//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints its own PASS/FAIL line, whether or not it passes.
//!
//! Run with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aadd::attacks::{
    lazy_update, poison_random_labels, poison_random_pixels, poison_specific_labels, TargetLabel,
};
use aadd::detector::{detect_round, epsilon_threshold, Cause, ClientAccuracy, DetectorConfig};
use aadd::experiment::build_dataset;
use aadd::model::{init_params, loss_and_gradient, mean_loss, train_local};
use aadd::reporting::blacklist_timeline;
use aadd::{
    run_experiment, simulate, ConfusionMatrix, DetectorVersion, LabeledExample, ModelShape,
    ParameterVector, RunStatus, TrainConfig,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn threshold_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for &scale in &[1.0, 4.8] {
        for round in 0..100 {
            let got = epsilon_threshold(round, scale);
            let want = reference_epsilon(round, scale);
            worst = worst.max(rel(got, want));
            ensure(rel(got, want) <= 1e-9, || {
                format!("round {round} scale {scale}: {got} vs {want}")
            })?;
            if round > 0 {
                let prev = epsilon_threshold(round - 1, scale);
                ensure(got < prev, || {
                    format!("not decreasing at round {round}, scale {scale}: {prev} -> {got}")
                })?;
            }
        }
    }
    for &(round, scale, want) in EPSILON_ANCHORS {
        let got = epsilon_threshold(round, scale);
        worst = worst.max(rel(got, want));
        ensure(rel(got, want) <= 1e-9, || {
            format!("anchor round {round} scale {scale}: {got} vs {want}")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "200 evaluations + {} high-precision anchors, max rel err {worst:.1e}, strictly decreasing",
        EPSILON_ANCHORS.len()
    ))
}

fn random_table(r: &mut ChaCha8Rng) -> (Vec<ClientAccuracy>, usize) {
    let clients = r.gen_range(0..=10);
    let labels = r.gen_range(0..=10);
    let round = r.gen_range(0..=15);
    let centre: f64 = r.gen_range(0.3..0.9);
    let spread: f64 = r.gen_range(0.01..0.4);
    let acc = |r: &mut ChaCha8Rng| (centre + r.gen_range(-spread..spread)).clamp(0.0, 1.0);
    let table = (0..clients)
        .map(|id| ClientAccuracy {
            client_id: id,
            overall: acc(r),
            per_label: (0..labels)
                .map(|_| (!r.gen_bool(0.05)).then(|| acc(r)))
                .collect(),
        })
        .collect();
    (table, round)
}

fn detector_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(0xA11D);
    let mut total_flags = 0;
    for case in 0..1000 {
        let (table, round) = random_table(&mut r);
        let version = if r.gen_bool(0.5) {
            DetectorVersion::Aadd1
        } else {
            DetectorVersion::Aadd2
        };
        let cfg = DetectorConfig::new(version);
        let events = detect_round(&table, round, &cfg);
        let mut got: Vec<Flag> = events
            .iter()
            .map(|e| match e.cause {
                Cause::AverageDeviation => (e.client_id, None),
                Cause::LabelDeviation { label } => (e.client_id, Some(label)),
            })
            .collect();
        got.sort();
        let want = naive_detect(&table, round, version, cfg.average_scale, cfg.label_scale);
        ensure(got == want, || {
            format!("case {case} ({version:?}, round {round}): {got:?} vs {want:?}")
        })?;
        total_flags += want.len();
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    ensure(total_flags > 100, || {
        format!("only {total_flags} flags: tables too easy")
    })?;
    Ok(format!(
        "1000 random tables agree ({total_flags} flags total)"
    ))
}

fn fabricated_table() -> Outcome {
    let events = detect_round(
        &fabricated_round(),
        15,
        &DetectorConfig::new(DetectorVersion::Aadd2),
    );
    let flagged: BTreeSet<usize> = events.iter().map(|e| e.client_id).collect();
    ensure(flagged == BTreeSet::from([2, 3]), || {
        format!("flagged {flagged:?}, expected {{2, 3}}")
    })?;
    let causes: Vec<String> = events
        .iter()
        .map(|e| format!("client {} {}", e.client_id, e.cause))
        .collect();
    Ok(format!("flags clients 2 and 3 ({})", causes.join(", ")))
}

fn confusion_margins() -> Outcome {
    let mut cfg = load("desk_random_label.toml");
    cfg.blacklist.enabled = false;
    let run = simulate(&cfg).map_err(|e| e.to_string())?;
    let cm = ConfusionMatrix::from_records(&run.records, &cfg.poisoned_set());
    ensure(cm.tp + cm.fn_ == 32 && cm.fp + cm.tn == 128, || {
        format!("margins {} / {} from {cm:?}", cm.tp + cm.fn_, cm.fp + cm.tn)
    })?;

    let cfg = load("desk_lazy_blacklist.toml");
    let run = simulate(&cfg).map_err(|e| e.to_string())?;
    ensure(run.status == RunStatus::Completed { rounds: 16 }, || {
        format!("status {:?}", run.status)
    })?;
    let timeline = blacklist_timeline(&run.records);
    let lazy = cfg.poisoned_set();
    let listed: BTreeSet<usize> = timeline.iter().map(|b| b.client_id).collect();
    ensure(listed == lazy, || {
        format!("blacklist timeline {timeline:?}")
    })?;
    ensure(timeline.iter().all(|b| b.round == 2), || {
        format!("expected exclusion from round 3 on, got {timeline:?}")
    })?;
    let cm_bl = ConfusionMatrix::from_records(&run.records, &lazy);
    ensure(cm_bl.total() == 134, || {
        format!("{} decisions with blacklisting ({cm_bl:?})", cm_bl.total())
    })?;
    Ok(format!(
        "margins 32/128 ({cm:?}); blacklisted from round 3 -> N = {}",
        cm_bl.total()
    ))
}

fn sentinel_data(n: usize, classes: usize) -> Vec<LabeledExample> {
    (0..n)
        .map(|_| LabeledExample {
            features: Vec::new(),
            label: vec![0.0; classes],
        })
        .collect()
}

fn attack_contracts() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(55);

    // Lazy update is the identity on values.
    for seed in 0..20 {
        let shape = ModelShape::linear(8, 4).with_hidden(seed as usize % 3 * 4);
        let p = init_params(shape, seed);
        ensure(
            lazy_update(&p)
                .values
                .iter()
                .zip(&p.values)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            || "lazy update changed a value".into(),
        )?;
    }

    // Label attacks keep length and one-hot labels.
    for seed in 0..50u64 {
        let n = r.gen_range(2..300);
        let data: Vec<LabeledExample> = (0..n)
            .map(|_| LabeledExample::new(vec![r.gen::<f64>(); 3], r.gen_range(0..10), 10))
            .collect();
        let flipped = poison_random_labels(&data, r.gen_range(0..400), seed).unwrap();
        let target = if seed % 2 == 0 {
            TargetLabel::Random
        } else {
            TargetLabel::Class(r.gen_range(0..10))
        };
        let specific =
            poison_specific_labels(&data, r.gen_range(0..10), target, r.gen(), seed).unwrap();
        for out in [&flipped, &specific] {
            ensure(out.len() == data.len(), || "length changed".into())?;
            ensure(out.iter().all(|e| e.is_one_hot()), || {
                "non one-hot label".into()
            })?;
            ensure(
                out.iter().zip(&data).all(|(a, b)| a.features == b.features),
                || "label attack touched features".into(),
            )?;
        }
    }

    // One replacement per value stays within [round(0.5v), round(1.5v)].
    let mut checked = 0;
    for seed in 0..50u64 {
        let dim = 16;
        let data: Vec<LabeledExample> = (0..40)
            .map(|_| {
                let f = (0..dim).map(|_| r.gen_range(0..=255) as f64).collect();
                LabeledExample::new(f, r.gen_range(0..10), 10)
            })
            .collect();
        let out = poison_random_pixels(&data, 1.0, 1, 0.5, dim, seed).unwrap();
        for (a, b) in out.iter().zip(&data) {
            ensure(a.label == b.label, || "pixel attack touched a label".into())?;
            for (&v2, &v) in a.features.iter().zip(&b.features) {
                let (lo, hi) = ((0.5 * v).round(), (1.5 * v).round());
                ensure(v2 >= lo && v2 <= hi && v2.fract() == 0.0, || {
                    format!("{v} became {v2}, outside [{lo}, {hi}]")
                })?;
                checked += 1;
            }
        }
    }

    // Distinct indices touched by 600 draws per 2500-element half.
    let trials = 1000;
    let data = sentinel_data(5000, 10);
    let (mut first, mut second) = (0usize, 0usize);
    for seed in 0..trials {
        let out = poison_random_labels(&data, 600, seed).unwrap();
        let touched = |range: std::ops::Range<usize>| {
            out[range]
                .iter()
                .filter(|e| e.label.iter().any(|&v| v != 0.0))
                .count()
        };
        first += touched(0..2500);
        second += touched(2500..5000);
    }
    let (m1, m2) = (first as f64 / trials as f64, second as f64 / trials as f64);
    let expected = expected_distinct(2500, 600);
    for m in [m1, m2] {
        ensure((m - 533.0).abs() <= 0.03 * 533.0, || {
            format!("mean distinct per half {m:.1}, outside 533 +/- 3%")
        })?;
        ensure((m - expected).abs() <= 0.01 * expected, || {
            format!("mean distinct per half {m:.1} vs analytic {expected:.1}")
        })?;
    }
    Ok(format!(
        "lazy identity, one-hot labels, {checked} pixel values in bounds; distinct per half {m1:.1} / {m2:.1} (analytic {expected:.1})"
    ))
}

fn gradient_check() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for instance in 0..20 {
        let shape = if instance % 2 == 0 {
            ModelShape::linear(4, 3)
        } else {
            ModelShape::linear(4, 3).with_hidden(5)
        };
        let values: Vec<f64> = (0..shape.param_count())
            .map(|_| r.gen_range(-1.0..1.0))
            .collect();
        let params = ParameterVector::new(values, shape).unwrap();
        let n = r.gen_range(1..=8);
        let data: Vec<LabeledExample> = (0..n)
            .map(|_| {
                let f = (0..4).map(|_| r.sample(StandardNormal)).collect();
                LabeledExample::new(f, r.gen_range(0..3), 3)
            })
            .collect();
        let refs: Vec<&LabeledExample> = data.iter().collect();
        let (_, analytic) = loss_and_gradient(&params, &refs).unwrap();
        let numeric = finite_difference(
            |x| mean_loss(&ParameterVector::new(x.to_vec(), shape).unwrap(), &data).unwrap(),
            &params.values,
            1e-5,
        );
        let err = relative_error(&analytic, &numeric);
        worst = worst.max(err);
        ensure(err <= 1e-5, || {
            format!("instance {instance}: relative error {err:.2e}")
        })?;

        // A single full-batch epoch is exactly one gradient step.
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 64,
            learning_rate: 0.3,
            rng_seed: instance,
        };
        let stepped = train_local(&params, &data, &cfg).unwrap();
        for ((s, p), g) in stepped.values.iter().zip(&params.values).zip(&analytic) {
            ensure((s - (p - 0.3 * g)).abs() <= 1e-12, || {
                format!("instance {instance}: SGD step disagrees with gradient")
            })?;
        }
    }
    Ok(format!("20 instances, max relative error {worst:.1e}"))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let base = load("desk_random_label.toml");
    let poisoned = base.poisoned_set();
    let (mut clean_sum, mut pois_sum) = (0.0, 0.0);
    let (mut fp, mut clean_decisions) = (0usize, 0usize);
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 0..5u64 {
        let mut cfg = base.clone();
        cfg.master_seed = seed;
        let clean_cfg = cfg.baseline();
        let (train, test) = build_dataset(&clean_cfg.resolved()).map_err(|e| e.to_string())?;
        let oracle = nearest_centroid_accuracy(&train, &test, clean_cfg.dataset.num_classes);

        let clean = simulate(&clean_cfg).map_err(|e| e.to_string())?;
        let pois = simulate(&cfg).map_err(|e| e.to_string())?;
        let clean_acc = clean.final_accuracy().unwrap();
        let pois_acc = pois.final_accuracy().unwrap();
        clean_sum += clean_acc;
        pois_sum += pois_acc;

        if clean_acc <= oracle - 0.02 {
            failures.push(format!(
                "seed {seed}: clean {clean_acc:.4} not above oracle {oracle:.4} - 2 pp"
            ));
        }

        let mut flagged_rounds = vec![0usize; cfg.num_clients];
        for rec in &pois.records {
            for c in rec.flagged_clients() {
                flagged_rounds[c] += 1;
            }
        }
        let min_poisoned = poisoned.iter().map(|&c| flagged_rounds[c]).min().unwrap();
        let max_clean = (0..cfg.num_clients)
            .filter(|c| !poisoned.contains(c))
            .map(|c| flagged_rounds[c])
            .max()
            .unwrap();
        if min_poisoned <= max_clean {
            failures.push(format!(
                "seed {seed}: poisoned flagged in {min_poisoned} rounds, a clean client in {max_clean}"
            ));
        }

        let cm = ConfusionMatrix::from_records(&pois.records, &poisoned);
        let cm_clean = ConfusionMatrix::from_records(&clean.records, &BTreeSet::new());
        fp += cm.fp + cm_clean.fp;
        clean_decisions += cm.actual_negative() + cm_clean.actual_negative();
        lines.push(format!(
            "seed {seed}: oracle {oracle:.4} clean {clean_acc:.4} poisoned {pois_acc:.4} flags poisoned>={min_poisoned} clean<={max_clean}"
        ));
    }
    let (clean_mean, pois_mean) = (clean_sum / 5.0, pois_sum / 5.0);
    if pois_mean >= clean_mean {
        failures.push(format!(
            "mean poisoned accuracy {pois_mean:.4} does not drop below clean {clean_mean:.4}"
        ));
    }
    let fpr = fp as f64 / clean_decisions as f64;
    if fpr > 0.05 {
        failures.push(format!("false-positive rate {fpr:.4} above 5%"));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(300) {
        failures.push(format!("took {elapsed:?}"));
    }
    for l in &lines {
        println!("      {l}");
    }
    if !failures.is_empty() {
        return Err(failures.join("; "));
    }
    Ok(format!(
        "mean accuracy clean {clean_mean:.4} -> poisoned {pois_mean:.4}, FPR {fp}/{clean_decisions}, {:.1} s",
        elapsed.as_secs_f64()
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sizes = Vec::new();
    for name in ["desk_random_label.toml", "desk_lazy_blacklist.toml"] {
        let mut cfg = load(name);
        cfg.output_dir = dir.path().join(name);
        let read = |f: &str| std::fs::read(cfg.output_dir.join(f)).unwrap();
        run_experiment(&cfg).map_err(|e| e.to_string())?;
        let first = (read("rounds.csv"), read("summary.json"));
        run_experiment(&cfg).map_err(|e| e.to_string())?;
        let second = (read("rounds.csv"), read("summary.json"));
        ensure(first == second, || {
            format!("{name}: outputs differ between runs")
        })?;
        sizes.push(first.0.len() + first.1.len());
    }
    Ok(format!(
        "two configs, byte-identical outputs ({sizes:?} bytes)"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("threshold oracle", threshold_oracle),
        ("detector oracle equivalence", detector_equivalence),
        ("fabricated round reproduction", fabricated_table),
        ("confusion-matrix accounting", confusion_margins),
        ("attack contracts", attack_contracts),
        ("gradient check", gradient_check),
        ("end-to-end desk-scale run", end_to_end),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome =
            panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS - {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL - {why}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
