//! Client-side poisoning strategies.
//!
//! Label and pixel attacks transform a copy of the client's active round
//! partition before local training. The lazy attack skips training and
//! echoes the received global parameters back to the server.

use std::fmt;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{one_hot, LabeledExample};
use crate::error::{Error, Result};
use crate::model::ParameterVector;
use crate::seed::rng;

/// Destination of a specific-label attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetLabel {
    Class(usize),
    /// A fresh uniform class per relabelled example (may equal the source).
    Random,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TargetRepr {
    Class(usize),
    Keyword(String),
}

impl Serialize for TargetLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TargetLabel::Class(c) => TargetRepr::Class(*c),
            TargetLabel::Random => TargetRepr::Keyword("random".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TargetLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match TargetRepr::deserialize(d)? {
            TargetRepr::Class(c) => Ok(TargetLabel::Class(c)),
            TargetRepr::Keyword(k) if k.eq_ignore_ascii_case("random") => Ok(TargetLabel::Random),
            TargetRepr::Keyword(k) => Err(serde::de::Error::custom(format!(
                "target_label must be a class index or \"random\", got \"{k}\""
            ))),
        }
    }
}

fn one() -> f64 {
    1.0
}
fn default_nr_pixels() -> usize {
    600
}
fn default_pixel_threshold() -> f64 {
    0.5
}
fn default_group_size() -> usize {
    1
}

/// Poisoning behaviour of one client. `rng_seed`, when omitted, is derived
/// from the experiment master seed, the client id and the round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "PoisonRepr", into = "PoisonRepr")]
pub enum PoisonConfig {
    #[default]
    None,
    RandomLabel {
        no_labels: usize,
        rng_seed: Option<u64>,
    },
    SpecificLabel {
        source_label: usize,
        target_label: TargetLabel,
        part_of_labels: f64,
        rng_seed: Option<u64>,
    },
    RandomPixel {
        perc_img: f64,
        nr_pixels: usize,
        pixel_threshold: f64,
        /// Consecutive feature coordinates forming one "pixel".
        group_size: usize,
        rng_seed: Option<u64>,
    },
    Lazy,
}

// Serde ignores stray keys on unit variants of internally tagged enums, so
// the wire form uses empty struct variants to keep `deny_unknown_fields`.
#[derive(Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
enum PoisonRepr {
    None {},
    RandomLabel {
        no_labels: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rng_seed: Option<u64>,
    },
    SpecificLabel {
        source_label: usize,
        target_label: TargetLabel,
        #[serde(default = "one")]
        part_of_labels: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rng_seed: Option<u64>,
    },
    RandomPixel {
        #[serde(default = "one")]
        perc_img: f64,
        #[serde(default = "default_nr_pixels")]
        nr_pixels: usize,
        #[serde(default = "default_pixel_threshold")]
        pixel_threshold: f64,
        #[serde(default = "default_group_size")]
        group_size: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rng_seed: Option<u64>,
    },
    Lazy {},
}

impl From<PoisonRepr> for PoisonConfig {
    fn from(r: PoisonRepr) -> Self {
        match r {
            PoisonRepr::None {} => PoisonConfig::None,
            PoisonRepr::Lazy {} => PoisonConfig::Lazy,
            PoisonRepr::RandomLabel {
                no_labels,
                rng_seed,
            } => PoisonConfig::RandomLabel {
                no_labels,
                rng_seed,
            },
            PoisonRepr::SpecificLabel {
                source_label,
                target_label,
                part_of_labels,
                rng_seed,
            } => PoisonConfig::SpecificLabel {
                source_label,
                target_label,
                part_of_labels,
                rng_seed,
            },
            PoisonRepr::RandomPixel {
                perc_img,
                nr_pixels,
                pixel_threshold,
                group_size,
                rng_seed,
            } => PoisonConfig::RandomPixel {
                perc_img,
                nr_pixels,
                pixel_threshold,
                group_size,
                rng_seed,
            },
        }
    }
}

impl From<PoisonConfig> for PoisonRepr {
    fn from(c: PoisonConfig) -> Self {
        match c {
            PoisonConfig::None => PoisonRepr::None {},
            PoisonConfig::Lazy => PoisonRepr::Lazy {},
            PoisonConfig::RandomLabel {
                no_labels,
                rng_seed,
            } => PoisonRepr::RandomLabel {
                no_labels,
                rng_seed,
            },
            PoisonConfig::SpecificLabel {
                source_label,
                target_label,
                part_of_labels,
                rng_seed,
            } => PoisonRepr::SpecificLabel {
                source_label,
                target_label,
                part_of_labels,
                rng_seed,
            },
            PoisonConfig::RandomPixel {
                perc_img,
                nr_pixels,
                pixel_threshold,
                group_size,
                rng_seed,
            } => PoisonRepr::RandomPixel {
                perc_img,
                nr_pixels,
                pixel_threshold,
                group_size,
                rng_seed,
            },
        }
    }
}

impl fmt::Display for PoisonConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoisonConfig::None => "none",
            PoisonConfig::RandomLabel { .. } => "random_label",
            PoisonConfig::SpecificLabel { .. } => "specific_label",
            PoisonConfig::RandomPixel { .. } => "random_pixel",
            PoisonConfig::Lazy => "lazy",
        })
    }
}

impl PoisonConfig {
    pub fn is_poisoned(&self) -> bool {
        !matches!(self, PoisonConfig::None)
    }

    pub fn is_lazy(&self) -> bool {
        matches!(self, PoisonConfig::Lazy)
    }

    pub fn rng_seed(&self) -> Option<u64> {
        match self {
            PoisonConfig::RandomLabel { rng_seed, .. }
            | PoisonConfig::SpecificLabel { rng_seed, .. }
            | PoisonConfig::RandomPixel { rng_seed, .. } => *rng_seed,
            PoisonConfig::None | PoisonConfig::Lazy => None,
        }
    }

    /// `field` prefixes the names reported in errors.
    pub fn validate(&self, field: &str, num_classes: usize, feature_dim: usize) -> Result<()> {
        match *self {
            PoisonConfig::SpecificLabel {
                source_label,
                target_label,
                part_of_labels,
                ..
            } => {
                if source_label >= num_classes {
                    return Err(Error::config(
                        format!("{field}.source_label"),
                        format!("{source_label} is not a class in [0, {num_classes})"),
                    ));
                }
                if let TargetLabel::Class(t) = target_label {
                    if t >= num_classes {
                        return Err(Error::config(
                            format!("{field}.target_label"),
                            format!("{t} is not a class in [0, {num_classes})"),
                        ));
                    }
                }
                check_fraction(&format!("{field}.part_of_labels"), part_of_labels)
            }
            PoisonConfig::RandomPixel {
                perc_img,
                pixel_threshold,
                group_size,
                ..
            } => {
                check_fraction(&format!("{field}.perc_img"), perc_img)?;
                check_threshold(&format!("{field}.pixel_threshold"), pixel_threshold)?;
                check_group(&format!("{field}.group_size"), group_size, feature_dim)
            }
            _ => Ok(()),
        }
    }

    /// Applies a data attack to a copy of `data`. Lazy and clean clients
    /// get their data back unchanged.
    pub fn apply(&self, data: &[LabeledExample], seed: u64) -> Result<Vec<LabeledExample>> {
        match *self {
            PoisonConfig::None | PoisonConfig::Lazy => Ok(data.to_vec()),
            PoisonConfig::RandomLabel { no_labels, .. } => {
                poison_random_labels(data, no_labels, seed)
            }
            PoisonConfig::SpecificLabel {
                source_label,
                target_label,
                part_of_labels,
                ..
            } => poison_specific_labels(data, source_label, target_label, part_of_labels, seed),
            PoisonConfig::RandomPixel {
                perc_img,
                nr_pixels,
                pixel_threshold,
                group_size,
                ..
            } => poison_random_pixels(data, perc_img, nr_pixels, pixel_threshold, group_size, seed),
        }
    }
}

fn check_fraction(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} is outside [0, 1]")))
    }
}

fn check_threshold(field: &str, v: f64) -> Result<()> {
    if (0.0..1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{v} is outside [0, 1)")))
    }
}

fn check_group(field: &str, group: usize, dim: usize) -> Result<()> {
    if group == 0 || !dim.is_multiple_of(group) {
        Err(Error::config(
            field,
            format!("{group} does not divide the feature dimension {dim}"),
        ))
    } else {
        Ok(())
    }
}

/// Random label flipping.
///
/// Runs `no_labels` iterations. Each draws one uniform class, one index in
/// the first half `[0, n/2)` and one in the second half `[n/2, n)`, and
/// overwrites both labels with that class. Indices may repeat, and the new
/// class may equal the old one, so fewer than `2 * no_labels` labels change.
pub fn poison_random_labels(
    data: &[LabeledExample],
    no_labels: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    if data.len() < 2 {
        return Err(Error::Precondition(
            "random label poisoning needs at least two examples".into(),
        ));
    }
    let mut out = data.to_vec();
    let n = out.len();
    let half = n / 2;
    let classes = out[0].num_classes();
    let mut r = rng(seed);
    for _ in 0..no_labels {
        let class = r.gen_range(0..classes);
        let first = r.gen_range(0..half);
        let second = r.gen_range(half..n);
        out[first].label = one_hot(class, classes);
        out[second].label = one_hot(class, classes);
    }
    Ok(out)
}

/// Relabels examples of `source_label`, each with probability
/// `part_of_labels`.
pub fn poison_specific_labels(
    data: &[LabeledExample],
    source_label: usize,
    target: TargetLabel,
    part_of_labels: f64,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    let Some(first) = data.first() else {
        return Ok(Vec::new());
    };
    let classes = first.num_classes();
    PoisonConfig::SpecificLabel {
        source_label,
        target_label: target,
        part_of_labels,
        rng_seed: None,
    }
    .validate("poison", classes, first.features.len())?;

    let mut out = data.to_vec();
    let mut r = rng(seed);
    for ex in out.iter_mut().filter(|e| e.class() == source_label) {
        if r.gen::<f64>() < part_of_labels {
            let to = match target {
                TargetLabel::Class(c) => c,
                TargetLabel::Random => r.gen_range(0..classes),
            };
            ex.label = one_hot(to, classes);
        }
    }
    Ok(out)
}

/// Multiplicative pixel noise.
///
/// Picks `floor(perc_img * n)` distinct examples. For each, `nr_pixels`
/// times, chooses a coordinate group uniformly (repeats allowed) and
/// replaces every value `v` in it with `round(uniform(v(1-t), v(1+t)))`,
/// rounding half to even.
pub fn poison_random_pixels(
    data: &[LabeledExample],
    perc_img: f64,
    nr_pixels: usize,
    threshold: f64,
    group_size: usize,
    seed: u64,
) -> Result<Vec<LabeledExample>> {
    check_fraction("perc_img", perc_img)?;
    check_threshold("pixel_threshold", threshold)?;
    let Some(first) = data.first() else {
        return Ok(Vec::new());
    };
    let dim = first.features.len();
    check_group("group_size", group_size, dim)?;
    let groups = dim / group_size;

    let mut out = data.to_vec();
    let mut r = rng(seed);
    let chosen = (perc_img * out.len() as f64).floor() as usize;
    for idx in index::sample(&mut r, out.len(), chosen.min(out.len())) {
        let features = &mut out[idx].features;
        for _ in 0..nr_pixels {
            let g = r.gen_range(0..groups);
            for v in &mut features[g * group_size..(g + 1) * group_size] {
                let a = *v * (1.0 - threshold);
                let b = *v * (1.0 + threshold);
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let drawn = if lo < hi { r.gen_range(lo..=hi) } else { lo };
                *v = drawn.round_ties_even();
            }
        }
    }
    Ok(out)
}

/// The lazy client's update: the received parameters, untouched.
pub fn lazy_update(received: &ParameterVector) -> ParameterVector {
    received.clone()
}
