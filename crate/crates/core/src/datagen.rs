//! Synthetic multimodal data with the pathologies the trainer targets:
//! class imbalance, scarce labels and missing modalities (uniform-random or
//! camera-rotation periodic), plus the weak/strong augmentation pair.
//!
//! Each sample draws a class `c`, a shared latent `u = μ_c + ε` and observes
//! every modality through a fixed per-run linear map, `xᵐ = Bₘ·u + η`. The
//! maps are shared by the training and test splits of one seed, so the
//! cross-modality relation is learnable.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::numeric::{Matrix, Rng};

const STREAM_MAPS: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;

/// One synchronized observation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub id: usize,
    /// `inputs[m]` is `None` when modality `m` is missing.
    pub inputs: Vec<Option<Vec<f64>>>,
    pub label: Option<usize>,
}

impl MultimodalSample {
    pub fn available(&self) -> Vec<bool> {
        self.inputs.iter().map(Option::is_some).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.inputs.iter().all(Option::is_some)
    }
}

/// A validated collection of samples sharing class count and modality dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<MultimodalSample>,
    num_classes: usize,
    dims: Vec<usize>,
}

impl Dataset {
    pub fn new(samples: Vec<MultimodalSample>, num_classes: usize, dims: Vec<usize>) -> Result<Self> {
        if num_classes == 0 || dims.is_empty() {
            return Err(config_err!("dataset needs at least one class and one modality"));
        }
        for (pos, s) in samples.iter().enumerate() {
            if s.id != pos {
                return Err(config_err!("sample at position {pos} has id {}", s.id));
            }
            if s.inputs.len() != dims.len() {
                return Err(config_err!(
                    "sample {} has {} modality slots, expected {}",
                    s.id,
                    s.inputs.len(),
                    dims.len()
                ));
            }
            if s.inputs.iter().all(Option::is_none) {
                return Err(config_err!("sample {} has no available modality", s.id));
            }
            for (m, x) in s.inputs.iter().enumerate() {
                if let Some(x) = x {
                    if x.len() != dims[m] {
                        return Err(config_err!(
                            "sample {} modality {m} has length {}, expected {}",
                            s.id,
                            x.len(),
                            dims[m]
                        ));
                    }
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(config_err!("sample {} modality {m} is not finite", s.id));
                    }
                }
            }
            if let Some(y) = s.label {
                if y >= num_classes {
                    return Err(config_err!("sample {} label {y} >= {num_classes}", s.id));
                }
            }
        }
        Ok(Self { samples, num_classes, dims })
    }

    pub fn samples(&self) -> &[MultimodalSample] {
        &self.samples
    }

    pub fn sample(&self, id: usize) -> &MultimodalSample {
        &self.samples[id]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_modalities(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labeled_ids(&self) -> Vec<usize> {
        self.samples.iter().filter(|s| s.label.is_some()).map(|s| s.id).collect()
    }

    pub fn unlabeled_ids(&self) -> Vec<usize> {
        self.samples.iter().filter(|s| s.label.is_none()).map(|s| s.id).collect()
    }

    /// Labeled sample count per class.
    pub fn labeled_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for y in self.samples.iter().filter_map(|s| s.label) {
            counts[y] += 1;
        }
        counts
    }

    /// Fraction of samples (among `ids`) missing modality `m`.
    pub fn missing_fraction(&self, m: usize, ids: &[usize]) -> f64 {
        if ids.is_empty() {
            return 0.0;
        }
        let missing = ids.iter().filter(|&&i| self.samples[i].inputs[m].is_none()).count();
        missing as f64 / ids.len() as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MissingPattern {
    /// Exactly `round(rate · n_eligible)` eligible samples, chosen uniformly.
    #[default]
    Uniform,
    /// Periodic coverage over sample order with duty `1 − rate`.
    Rotation {
        period: usize,
        #[serde(default)]
        phase: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingSpec {
    pub modality: usize,
    pub rate: f64,
    #[serde(default)]
    pub pattern: MissingPattern,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub class_priors: Vec<f64>,
    pub modality_dims: Vec<usize>,
    pub n: usize,
    pub labeling_rate: f64,
    pub missing: Vec<MissingSpec>,
    pub latent_dim: usize,
    /// Std of the latent noise `ε`.
    pub noise_std: f64,
    /// Distance between any two class means in latent space.
    pub class_separation: f64,
    /// Std of the per-modality observation noise `η`.
    pub obs_noise_std: f64,
    /// Per-modality override of `obs_noise_std` (empty: use it everywhere).
    pub modality_noise: Vec<f64>,
    /// Apply missingness to labeled samples too.
    pub missing_in_labeled: bool,
    pub test_n: usize,
    /// Apply the same missingness specs to the test split.
    pub test_missing: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_classes: 2,
            class_priors: vec![0.9, 0.1],
            modality_dims: vec![16, 8, 6],
            n: 2000,
            labeling_rate: 0.10,
            missing: Vec::new(),
            latent_dim: 4,
            noise_std: 1.0,
            class_separation: 4.0,
            obs_noise_std: 0.1,
            modality_noise: Vec::new(),
            missing_in_labeled: false,
            test_n: 1000,
            test_missing: false,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c < 2 {
            return Err(config_err!("num_classes must be at least 2"));
        }
        if self.class_priors.len() != c {
            return Err(config_err!("class_priors has {} entries for {c} classes", self.class_priors.len()));
        }
        if self.class_priors.iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (self.class_priors.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(config_err!("class_priors must be a probability vector"));
        }
        if self.modality_dims.is_empty() || self.modality_dims.contains(&0) {
            return Err(config_err!("modality_dims must be non-empty and positive"));
        }
        if self.latent_dim < c {
            return Err(config_err!("latent_dim {} must be at least num_classes {c}", self.latent_dim));
        }
        if !(0.0..=1.0).contains(&self.labeling_rate) {
            return Err(config_err!("labeling_rate must lie in [0, 1]"));
        }
        if labeled_total(self.labeling_rate, self.n) < c {
            return Err(config_err!(
                "labeling_rate {} x n {} yields fewer labels than classes ({c})",
                self.labeling_rate,
                self.n
            ));
        }
        if !self.modality_noise.is_empty() && self.modality_noise.len() != self.modality_dims.len() {
            return Err(config_err!(
                "modality_noise has {} entries for {} modalities",
                self.modality_noise.len(),
                self.modality_dims.len()
            ));
        }
        if self.modality_noise.iter().any(|&s| s < 0.0) {
            return Err(config_err!("modality_noise entries must be non-negative"));
        }
        if self.noise_std < 0.0 || self.obs_noise_std < 0.0 || self.class_separation < 0.0 {
            return Err(config_err!("noise_std, obs_noise_std and class_separation must be non-negative"));
        }
        for spec in &self.missing {
            if spec.modality >= self.modality_dims.len() {
                return Err(config_err!("missing.modality {} out of range", spec.modality));
            }
            if !(0.0..=1.0).contains(&spec.rate) {
                return Err(config_err!("missing.rate {} outside [0, 1]", spec.rate));
            }
            if let MissingPattern::Rotation { period, .. } = spec.pattern {
                if period == 0 {
                    return Err(config_err!("missing.pattern.rotation.period must be >= 1"));
                }
                if spec.rate >= 1.0 {
                    return Err(config_err!("rotation duty 1 - rate must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Observation noise std of modality `m`.
    pub fn obs_noise(&self, m: usize) -> f64 {
        self.modality_noise.get(m).copied().unwrap_or(self.obs_noise_std)
    }

    /// Configured missing rate of modality `m` (0 when unlisted).
    pub fn missing_rate(&self, m: usize) -> f64 {
        self.missing.iter().filter(|s| s.modality == m).map(|s| s.rate).fold(0.0, f64::max)
    }
}

fn labeled_total(rate: f64, n: usize) -> usize {
    libm::round(rate * n as f64) as usize
}

/// Availability under a rotating camera: `mask[i]` iff
/// `(i + phase) mod period < max(1, round(duty · period))`.
pub fn rotation_mask(period: usize, duty: f64, n: usize, phase: usize) -> Result<Vec<bool>> {
    if period == 0 || !(duty > 0.0 && duty <= 1.0) {
        return Err(config_err!("rotation_mask needs period >= 1 and duty in (0, 1]"));
    }
    // Any positive duty covers at least one slot per period.
    let covered = (libm::round(duty * period as f64) as usize).max(1);
    Ok((0..n).map(|i| (i + phase) % period < covered).collect())
}

/// Splits `total` into integer parts proportional to `weights`
/// (largest-remainder rounding).
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| libm::floor(*e) as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[c] += 1;
        rest -= 1;
    }
    counts
}

struct World {
    means: Vec<Vec<f64>>,
    maps: Vec<Matrix>,
}

impl World {
    fn new(cfg: &GenConfig) -> Self {
        let mut rng = Rng::derive(cfg.seed, STREAM_MAPS);
        let l = cfg.latent_dim;
        let scale = cfg.class_separation / core::f64::consts::SQRT_2;
        let means = (0..cfg.num_classes)
            .map(|c| {
                let mut mu = vec![0.0; l];
                mu[c] = scale;
                mu
            })
            .collect();
        let inv = 1.0 / libm::sqrt(l as f64);
        let maps = cfg
            .modality_dims
            .iter()
            .map(|&d| {
                let data = (0..d * l).map(|_| rng.normal() * inv).collect();
                Matrix::from_vec(d, l, data).expect("shape")
            })
            .collect();
        Self { means, maps }
    }

    /// Draws `n` samples with exact per-class counts; returns samples,
    /// their latents and their classes.
    fn draw(&self, cfg: &GenConfig, n: usize, rng: &mut Rng) -> (Vec<MultimodalSample>, Matrix, Vec<usize>) {
        let counts = apportion(n, &cfg.class_priors);
        let mut classes: Vec<usize> =
            counts.iter().enumerate().flat_map(|(c, &k)| core::iter::repeat_n(c, k)).collect();
        rng.shuffle(&mut classes);
        let l = cfg.latent_dim;
        let mut latents = Matrix::zeros(n, l);
        let mut samples = Vec::with_capacity(n);
        for (id, &c) in classes.iter().enumerate() {
            let u: Vec<f64> = self.means[c].iter().map(|&m| m + cfg.noise_std * rng.normal()).collect();
            latents.row_mut(id).copy_from_slice(&u);
            let inputs = self
                .maps
                .iter()
                .enumerate()
                .map(|(m, b)| {
                    let sd = cfg.obs_noise(m);
                    let x = (0..b.rows())
                        .map(|r| crate::numeric::dot(b.row(r), &u) + sd * rng.normal())
                        .collect();
                    Some(x)
                })
                .collect();
            samples.push(MultimodalSample { id, inputs, label: None });
        }
        (samples, latents, classes)
    }
}

/// Applies the configured missingness to the samples whose index is in
/// `eligible` (sorted ascending). Rotation masks index samples by id.
fn apply_missingness(
    samples: &mut [MultimodalSample],
    specs: &[MissingSpec],
    eligible: &[usize],
    rng: &mut Rng,
) -> Result<()> {
    for spec in specs {
        let m = spec.modality;
        match spec.pattern {
            MissingPattern::Uniform => {
                let k = libm::round(spec.rate * eligible.len() as f64) as usize;
                let mut pool = eligible.to_vec();
                rng.shuffle(&mut pool);
                for &i in &pool[..k] {
                    samples[i].inputs[m] = None;
                }
            }
            MissingPattern::Rotation { period, phase } => {
                let mask = rotation_mask(period, 1.0 - spec.rate, samples.len(), phase)?;
                for &i in eligible {
                    if !mask[i] {
                        samples[i].inputs[m] = None;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Restores one modality for samples that lost all of them, preferring the
/// modality with the lowest configured missing rate.
fn restore_empty(samples: &mut [MultimodalSample], backup: &[MultimodalSample], cfg: &GenConfig) {
    let m = (0..cfg.modality_dims.len())
        .min_by(|&a, &b| cfg.missing_rate(a).total_cmp(&cfg.missing_rate(b)).then(a.cmp(&b)))
        .unwrap_or(0);
    for (s, b) in samples.iter_mut().zip(backup) {
        if s.inputs.iter().all(Option::is_none) {
            s.inputs[m] = b.inputs[m].clone();
        }
    }
}

/// Generates the training split: class-stratified labels on
/// `round(labeling_rate · n)` samples and the configured missingness on the
/// rest (labeled samples stay complete unless `missing_in_labeled`).
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    generate_with_latents(cfg).map(|(d, _)| d)
}

/// [`generate`] plus the `n × latent_dim` matrix of latent draws.
pub fn generate_with_latents(cfg: &GenConfig) -> Result<(Dataset, Matrix)> {
    cfg.validate()?;
    let world = World::new(cfg);
    let mut rng = Rng::derive(cfg.seed, STREAM_TRAIN);
    let (mut samples, latents, classes) = world.draw(cfg, cfg.n, &mut rng);

    let class_sizes: Vec<usize> =
        (0..cfg.num_classes).map(|c| classes.iter().filter(|&&k| k == c).count()).collect();
    let weights: Vec<f64> = class_sizes.iter().map(|&k| k as f64).collect();
    let mut per_class = apportion(labeled_total(cfg.labeling_rate, cfg.n), &weights);
    // Every populated class keeps at least one label.
    for c in 0..cfg.num_classes {
        while per_class[c] == 0 && class_sizes[c] > 0 {
            let donor = (0..cfg.num_classes)
                .filter(|&d| per_class[d] > 1)
                .max_by_key(|&d| per_class[d])
                .ok_or_else(|| config_err!("too few labels to cover every class"))?;
            per_class[donor] -= 1;
            per_class[c] += 1;
        }
        per_class[c] = per_class[c].min(class_sizes[c]);
    }
    for (c, &k) in per_class.iter().enumerate() {
        let mut members: Vec<usize> = (0..cfg.n).filter(|&i| classes[i] == c).collect();
        rng.shuffle(&mut members);
        for &i in &members[..k] {
            samples[i].label = Some(c);
        }
    }

    let eligible: Vec<usize> = (0..cfg.n)
        .filter(|&i| cfg.missing_in_labeled || samples[i].label.is_none())
        .collect();
    let backup = samples.clone();
    apply_missingness(&mut samples, &cfg.missing, &eligible, &mut rng)?;
    restore_empty(&mut samples, &backup, cfg);

    let ds = Dataset::new(samples, cfg.num_classes, cfg.modality_dims.clone())?;
    Ok((ds, latents))
}

/// Generates the training split and a fully labeled test split drawn from
/// the same class means and modality maps.
pub fn generate_split(cfg: &GenConfig) -> Result<(Dataset, Dataset)> {
    let train = generate(cfg)?;
    let world = World::new(cfg);
    let mut rng = Rng::derive(cfg.seed, STREAM_TEST);
    if cfg.test_n == 0 {
        return Err(config_err!("test_n must be positive"));
    }
    let (mut samples, _, classes) = world.draw(cfg, cfg.test_n, &mut rng);
    for (s, &c) in samples.iter_mut().zip(&classes) {
        s.label = Some(c);
    }
    if cfg.test_missing {
        let eligible: Vec<usize> = (0..cfg.test_n).collect();
        let backup = samples.clone();
        apply_missingness(&mut samples, &cfg.missing, &eligible, &mut rng)?;
        restore_empty(&mut samples, &backup, cfg);
    }
    let test = Dataset::new(samples, cfg.num_classes, cfg.modality_dims.clone())?;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub weak_noise_std: f64,
    pub strong_noise_std: f64,
    pub strong_mask_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { weak_noise_std: 0.0, strong_noise_std: 0.5, strong_mask_frac: 0.25 }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.strong_mask_frac) {
            return Err(config_err!("strong_mask_frac must lie in [0, 1)"));
        }
        if self.weak_noise_std < 0.0 || self.strong_noise_std < 0.0 {
            return Err(config_err!("augmentation noise must be non-negative"));
        }
        Ok(())
    }
}

pub type Views = Vec<Option<Vec<f64>>>;

fn check_nonempty(sample: &MultimodalSample) -> Result<()> {
    if sample.inputs.iter().all(Option::is_none) {
        return Err(Error::Contract(String::from("sample has no available modality")));
    }
    Ok(())
}

/// Weak view: the inputs plus `weak_noise_std` Gaussian noise (identity at 0).
pub fn augment_weak(sample: &MultimodalSample, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Views> {
    check_nonempty(sample)?;
    Ok(sample
        .inputs
        .iter()
        .map(|x| x.as_ref().map(|x| add_noise(x, cfg.weak_noise_std, rng)))
        .collect())
}

/// Strong view: Gaussian noise of `strong_noise_std`, then exactly
/// `round(strong_mask_frac · d)` uniformly chosen coordinates set to 0 in
/// every available modality.
pub fn augment_strong(sample: &MultimodalSample, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Views> {
    check_nonempty(sample)?;
    Ok(sample
        .inputs
        .iter()
        .map(|x| {
            x.as_ref().map(|x| {
                let mut v = add_noise(x, cfg.strong_noise_std, rng);
                let k = libm::round(cfg.strong_mask_frac * v.len() as f64) as usize;
                if k > 0 {
                    let mut idx: Vec<usize> = (0..v.len()).collect();
                    rng.shuffle(&mut idx);
                    for &j in &idx[..k] {
                        v[j] = 0.0;
                    }
                }
                v
            })
        })
        .collect())
}

fn add_noise(x: &[f64], std: f64, rng: &mut Rng) -> Vec<f64> {
    if std == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|&v| v + std * rng.normal()).collect()
}
