//! Reference implementations shared by the integration tests. Everything
//! here is written from the definitions, without calling the library code
//! it is compared against.

#![allow(dead_code)]

use std::path::PathBuf;

use aadd::detector::{ClientAccuracy, DetectorVersion};
use aadd::{ExperimentConfig, LabeledExample};

/// Repository-level `configs/` directory.
pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

pub fn load(name: &str) -> ExperimentConfig {
    aadd::load_config(&config_path(name)).expect("bundled config loads")
}

/// Detection threshold evaluated in log space:
/// `ln eps = -ln x / 1.5 + ln(3300 ln x) / 3 + ln(1.6 s / 100)` with `x = r + 2`.
pub fn reference_epsilon(round: usize, scale: f64) -> f64 {
    let x = (round + 2) as f64;
    let lx = x.ln();
    (-lx / 1.5 + (3300.0 * lx).ln() / 3.0 + (1.6 * scale / 100.0).ln()).exp()
}

/// Threshold values computed with 40-digit arithmetic, as
/// `(round, scale, epsilon)`. Digits beyond f64 precision are kept as printed.
#[allow(clippy::excessive_precision)]
pub const EPSILON_ANCHORS: &[(usize, f64, f64)] = &[
    (0, 1.0, 0.132_804_600_331_232_908_43),
    (0, 4.8, 0.637_462_081_589_917_960_47),
    (1, 1.0, 0.118_165_839_209_141_789_64),
    (1, 4.8, 0.567_196_028_203_880_590_27),
    (2, 1.0, 0.105_407_081_136_007_705_63),
    (2, 4.8, 0.505_953_989_452_836_987_01),
    (3, 1.0, 0.095_470_537_771_390_724_566),
    (3, 4.8, 0.458_258_581_302_675_477_92),
    (5, 1.0, 0.081_270_612_028_963_755_617),
    (5, 4.8, 0.390_098_937_739_026_026_96),
    (8, 1.0, 0.067_768_809_878_657_752_624),
    (8, 4.8, 0.325_290_287_417_557_212_6),
    (15, 1.0, 0.050_982_184_607_649_767_97),
    (15, 4.8, 0.244_714_486_116_718_886_25),
    (31, 1.0, 0.035_142_028_499_879_256_211),
    (31, 4.8, 0.168_681_736_799_420_429_81),
    (63, 1.0, 0.023_725_386_932_007_705_051),
    (63, 4.8, 0.113_881_857_273_636_984_25),
    (99, 1.0, 0.018_286_814_617_002_655_766),
    (99, 4.8, 0.087_776_710_161_612_747_675),
];

/// A detection as `(client_id, None)` for the overall check or
/// `(client_id, Some(label))` for a per-label check.
pub type Flag = (usize, Option<usize>);

/// Double-loop detector: for every client and every check, recompute the
/// mean from scratch and compare.
pub fn naive_detect(
    clients: &[ClientAccuracy],
    round: usize,
    version: DetectorVersion,
    average_scale: f64,
    label_scale: f64,
) -> Vec<Flag> {
    let mut flags = Vec::new();
    if clients.len() < 2 {
        return flags;
    }
    let num_labels = clients.iter().map(|c| c.per_label.len()).max().unwrap_or(0);
    for c in clients {
        let mut sum = 0.0;
        for other in clients {
            sum += other.overall;
        }
        let mean = sum / clients.len() as f64;
        if c.overall < mean - reference_epsilon(round, average_scale) {
            flags.push((c.client_id, None));
        }
        if version != DetectorVersion::Aadd2 {
            continue;
        }
        'labels: for label in 0..num_labels {
            let mut sum = 0.0;
            for other in clients {
                match other.per_label.get(label) {
                    Some(Some(v)) => sum += v,
                    _ => continue 'labels,
                }
            }
            let mean = sum / clients.len() as f64;
            let own = c.per_label[label].unwrap();
            if own < mean - reference_epsilon(round, label_scale) {
                flags.push((c.client_id, Some(label)));
            }
        }
    }
    flags.sort();
    flags
}

/// Accuracy of the classifier that assigns each test point to the class
/// whose training mean is closest in Euclidean distance.
pub fn nearest_centroid_accuracy(
    train: &[LabeledExample],
    test: &[LabeledExample],
    num_classes: usize,
) -> f64 {
    let dim = train[0].features.len();
    let mut sums = vec![vec![0.0; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for ex in train {
        let k = class_of(ex);
        counts[k] += 1;
        for (s, x) in sums[k].iter_mut().zip(&ex.features) {
            *s += x;
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| s.into_iter().map(|v| v / n.max(1) as f64).collect())
        .collect();
    let correct = test
        .iter()
        .filter(|ex| {
            let mut best = (f64::INFINITY, 0);
            for (k, c) in centroids.iter().enumerate() {
                let d: f64 = c
                    .iter()
                    .zip(&ex.features)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            best.1 == class_of(ex)
        })
        .count();
    correct as f64 / test.len() as f64
}

fn class_of(ex: &LabeledExample) -> usize {
    ex.label
        .iter()
        .position(|&v| v == 1.0)
        .expect("one-hot label")
}

/// Expected number of distinct indices hit when `draws` indices are drawn
/// uniformly with replacement from `n`.
pub fn expected_distinct(n: usize, draws: usize) -> f64 {
    n as f64 * (1.0 - (1.0 - 1.0 / n as f64).powi(draws as i32))
}

/// Central finite-difference gradient of `f` at `x`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute norm when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Client table from the worked detection example: overall and per-label
/// accuracies (labels 0, 1, 2) in percent for clients 0-4.
pub const FABRICATED_TABLE: [(f64, [f64; 3]); 5] = [
    (69.3, [60.0, 73.0, 75.0]),
    (67.3, [57.0, 68.0, 77.0]),
    (50.0, [62.0, 45.0, 43.0]),
    (57.6, [22.0, 67.0, 84.0]),
    (64.6, [59.0, 70.0, 65.0]),
];

pub fn fabricated_round() -> Vec<ClientAccuracy> {
    FABRICATED_TABLE
        .iter()
        .enumerate()
        .map(|(id, (overall, labels))| ClientAccuracy {
            client_id: id,
            overall: overall / 100.0,
            per_label: labels.iter().map(|v| Some(v / 100.0)).collect(),
        })
        .collect()
}
