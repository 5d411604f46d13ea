//! Synthetic dataset generation, homogeneous client sharding and the
//! alternating round partitions each client trains on.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng};

/// Centre of the `[0, 255]` feature range used when features are emitted in
/// pixel scale.
pub const PIXEL_CENTER: f64 = 128.0;
/// Pixel units per unit of cluster spread.
pub const PIXEL_SCALE: f64 = 16.0;

/// One training or test example: a feature vector and a one-hot label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: Vec<f64>,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, class: usize, num_classes: usize) -> Self {
        Self {
            features,
            label: one_hot(class, num_classes),
        }
    }

    /// Index of the largest label entry (the first one on ties).
    pub fn class(&self) -> usize {
        argmax(&self.label)
    }

    pub fn num_classes(&self) -> usize {
        self.label.len()
    }

    pub fn is_one_hot(&self) -> bool {
        let ones = self.label.iter().filter(|&&v| v == 1.0).count();
        let zeros = self.label.iter().filter(|&&v| v == 0.0).count();
        ones == 1 && ones + zeros == self.label.len()
    }
}

pub fn one_hot(class: usize, num_classes: usize) -> Vec<f64> {
    let mut label = vec![0.0; num_classes];
    label[class] = 1.0;
    label
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn default_num_classes() -> usize {
    10
}
fn default_feature_dim() -> usize {
    16
}
fn default_examples_per_client() -> usize {
    1000
}
fn default_test_set_size() -> usize {
    2000
}
fn default_class_separation() -> f64 {
    5.0
}

/// Shape and seed of the synthetic dataset.
///
/// Class `k` is an isotropic Gaussian with unit spread around a fixed mean.
/// When `feature_dim >= num_classes` the means are `sep / sqrt(2) * e_k`, so
/// every pair of class means is exactly `class_separation` spreads apart.
/// Otherwise the means are drawn once from the generator seed with the same
/// expected pairwise distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_examples_per_client")]
    pub examples_per_client: usize,
    #[serde(default = "default_test_set_size")]
    pub test_set_size: usize,
    /// `None` lets the experiment runner derive it from the master seed.
    #[serde(default)]
    pub generator_seed: Option<u64>,
    /// Distance between class means, in units of the cluster spread.
    #[serde(default = "default_class_separation")]
    pub class_separation: f64,
    /// Emit features on a `[0, 255]` scale (needed by pixel poisoning).
    #[serde(default)]
    pub pixel_range: bool,
    /// Load the training pool from a flat file instead of generating it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_file: Option<PathBuf>,
    /// Load the server test set from a flat file instead of generating it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_file: Option<PathBuf>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: default_num_classes(),
            feature_dim: default_feature_dim(),
            examples_per_client: default_examples_per_client(),
            test_set_size: default_test_set_size(),
            generator_seed: None,
            class_separation: default_class_separation(),
            pixel_range: false,
            train_file: None,
            test_file: None,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("dataset.num_classes", "must be at least 2"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("dataset.feature_dim", "must be positive"));
        }
        if self.examples_per_client == 0 || !self.examples_per_client.is_multiple_of(2) {
            return Err(Error::config(
                "dataset.examples_per_client",
                "must be positive and even",
            ));
        }
        if self.test_set_size == 0 {
            return Err(Error::config("dataset.test_set_size", "must be positive"));
        }
        if !(self.class_separation.is_finite() && self.class_separation > 0.0) {
            return Err(Error::config(
                "dataset.class_separation",
                "must be a positive finite number",
            ));
        }
        if self.train_file.is_some() != self.test_file.is_some() {
            return Err(Error::config(
                "dataset.train_file",
                "train_file and test_file must be given together",
            ));
        }
        Ok(())
    }

    /// Offset and scale that map stored features back to unit-spread space:
    /// `normalized = (x - offset) * scale`.
    pub fn input_normalization(&self) -> (f64, f64) {
        if self.pixel_range {
            (PIXEL_CENTER, 1.0 / PIXEL_SCALE)
        } else {
            (0.0, 1.0)
        }
    }

    /// Fixed class means in unit-spread space.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let (c, d) = (self.num_classes, self.feature_dim);
        if d >= c {
            let amplitude = self.class_separation / std::f64::consts::SQRT_2;
            (0..c)
                .map(|k| {
                    let mut mean = vec![0.0; d];
                    mean[k] = amplitude;
                    mean
                })
                .collect()
        } else {
            // E|mu_a - mu_b|^2 = 2 d s^2 = sep^2
            let s = self.class_separation / (2.0 * d as f64).sqrt();
            let mut r = rng(derive_seed(
                self.generator_seed.unwrap_or_default(),
                "means",
                &[],
            ));
            (0..c)
                .map(|_| {
                    (0..d)
                        .map(|_| s * r.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()
        }
    }

    fn sample(&self, count: usize, stream: &str) -> Vec<LabeledExample> {
        let means = self.class_means();
        let mut r = rng(derive_seed(
            self.generator_seed.unwrap_or_default(),
            stream,
            &[],
        ));
        let mut classes: Vec<usize> = (0..count).map(|i| i % self.num_classes).collect();
        classes.shuffle(&mut r);
        classes
            .into_iter()
            .map(|class| {
                let features = means[class]
                    .iter()
                    .map(|&mu| {
                        let raw = mu + r.sample::<f64, _>(StandardNormal);
                        if self.pixel_range {
                            (PIXEL_CENTER + PIXEL_SCALE * raw).clamp(0.0, 255.0)
                        } else {
                            raw
                        }
                    })
                    .collect();
                LabeledExample::new(features, class, self.num_classes)
            })
            .collect()
    }
}

/// Generates `train_size` training examples and `spec.test_set_size` test
/// examples. Class counts in each set differ by at most one.
pub fn generate_synthetic_dataset(
    spec: &DatasetSpec,
    train_size: usize,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>)> {
    spec.validate()?;
    if train_size == 0 {
        return Err(Error::config("train_size", "must be positive"));
    }
    Ok((
        spec.sample(train_size, "train"),
        spec.sample(spec.test_set_size, "test"),
    ))
}

/// A client's local data, split into the two partitions it alternates
/// between.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub partition_a: Vec<LabeledExample>,
    pub partition_b: Vec<LabeledExample>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.partition_a.len() + self.partition_b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn examples(&self) -> impl Iterator<Item = &LabeledExample> {
        self.partition_a.iter().chain(self.partition_b.iter())
    }
}

/// Splits `train` into `num_clients` disjoint equal-sized shards with the
/// same class mix.
///
/// If `|train|` is not a multiple of `2 * num_clients`, a seeded random
/// subset of the excess is dropped first. The remaining examples are grouped
/// by class, each group shuffled, and dealt round-robin over clients. Each
/// shard is then shuffled and cut into `partition_a` and `partition_b`.
pub fn partition_homogeneous(
    train: &[LabeledExample],
    num_clients: usize,
    seed: u64,
) -> Result<Vec<ClientShard>> {
    if num_clients == 0 {
        return Err(Error::config("num_clients", "must be positive"));
    }
    let per_client = (train.len() / (2 * num_clients)) * 2;
    if per_client == 0 {
        return Err(Error::Precondition(format!(
            "{} examples cannot fill {} shards of two non-empty partitions",
            train.len(),
            num_clients
        )));
    }
    let mut r = rng(seed);

    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut r);
    order.truncate(per_client * num_clients);

    let num_classes = train[0].num_classes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for idx in order {
        by_class[train[idx].class()].push(idx);
    }
    let mut assignment: Vec<Vec<usize>> = vec![Vec::with_capacity(per_client); num_clients];
    let mut next = 0;
    for group in &mut by_class {
        group.sort_unstable();
        group.shuffle(&mut r);
        for &idx in group.iter() {
            assignment[next % num_clients].push(idx);
            next += 1;
        }
    }

    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(client_id, mut indices)| {
            indices.shuffle(&mut r);
            let half = indices.len() / 2;
            let take = |ids: &[usize]| ids.iter().map(|&i| train[i].clone()).collect();
            ClientShard {
                client_id,
                partition_a: take(&indices[..half]),
                partition_b: take(&indices[half..]),
            }
        })
        .collect())
}

/// Even rounds train on `partition_a`, odd rounds on `partition_b`.
pub fn select_round_partition(shard: &ClientShard, round: usize) -> &[LabeledExample] {
    if round.is_multiple_of(2) {
        &shard.partition_a
    } else {
        &shard.partition_b
    }
}

/// Reads a dataset file: one example per line, `D` comma-separated features
/// followed by an integer class label in `[0, num_classes)`.
pub fn load_dataset_file(path: &Path, num_classes: usize) -> Result<Vec<LabeledExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut examples = Vec::new();
    let mut dim = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(parse_err(
                lineno,
                "expected features followed by a label".into(),
            ));
        }
        let (label_field, feature_fields) = fields.split_last().expect("non-empty");
        let class: usize = label_field
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid label `{label_field}`")))?;
        if class >= num_classes {
            return Err(parse_err(
                lineno,
                format!("label {class} outside [0, {num_classes})"),
            ));
        }
        let features = feature_fields
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(lineno, format!("invalid feature `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(parse_err(
                    lineno,
                    format!("expected {d} features, found {}", features.len()),
                ))
            }
            _ => {}
        }
        examples.push(LabeledExample::new(features, class, num_classes));
    }
    Ok(examples)
}

/// Writes examples in the format read by [`load_dataset_file`].
pub fn write_dataset_file(path: &Path, examples: &[LabeledExample]) -> Result<()> {
    let mut out =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for ex in examples {
        let mut line = ex
            .features
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(",");
        line.push(',');
        line.push_str(&ex.class().to_string());
        line.push('\n');
        out.write_all(line.as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
