//! Logistic regression on per-channel color histograms, trained with
//! RMSProp on balanced, augmented samples.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::PatchClassifier;
use crate::error::{Error, Result};
use crate::patch_pipeline::{Augmenter, Magnification, PatchGroup, TrainingSampler};

pub const HIST_BINS: usize = 8;
const MODEL_KIND: &str = "toy-histogram";

/// Fraction of pixels in each of 8 equal bins over `[-1, 1]`, per channel and
/// magnification. The layout is `[mag][channel][bin]`.
pub fn histogram_features(group: &PatchGroup, mags: &[Magnification]) -> Result<Vec<f64>> {
    features_with(group, mags, |v| v)
}

/// Features of `to_model_range(group)` without materializing it.
fn unit_range_features(group: &PatchGroup, mags: &[Magnification]) -> Result<Vec<f64>> {
    features_with(group, mags, |v| v.clamp(0.0, 1.0) * 2.0 - 1.0)
}

fn features_with(group: &PatchGroup, mags: &[Magnification], map: impl Fn(f32) -> f32 + Copy) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(mags.len() * 3 * HIST_BINS);
    for &mag in mags {
        let patch = group
            .get(mag)
            .ok_or_else(|| Error::Argument(format!("patch group lacks the {mag} member")))?;
        let counts = channel_counts(patch.as_raw(), map);
        let n = (patch.as_raw().len() / 3).max(1) as f64;
        out.extend(counts.iter().map(|&k| k as f64 / n));
    }
    Ok(out)
}

fn channel_counts(data: &[f32], map: impl Fn(f32) -> f32 + Copy) -> [u32; 3 * HIST_BINS] {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { counts_avx2(data, map) };
    }
    counts_kernel(data, map)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn counts_avx2(data: &[f32], map: impl Fn(f32) -> f32 + Copy) -> [u32; 3 * HIST_BINS] {
    counts_kernel(data, map)
}

/// Values per lane block: 16 interleaved RGB pixels.
const LANES: usize = 48;

/// Per-channel bin counts of interleaved RGB values.
///
/// A value's bin is the number of inner edges `1..8` its position
/// `(map(v) + 1) * 4` reaches, which is the clamped floor for finite values
/// and 0 for NaN. Counting "at or above edge" per lane avoids scattered
/// increments; bin counts are the differences of those tallies.
#[inline(always)]
fn counts_kernel(data: &[f32], map: impl Fn(f32) -> f32 + Copy) -> [u32; 3 * HIST_BINS] {
    let half = HIST_BINS as f32 / 2.0;
    let mut at_least = [[0u32; LANES]; HIST_BINS - 1];
    let mut blocks = data.chunks_exact(LANES);
    for block in &mut blocks {
        let block: &[f32; LANES] = block.try_into().expect("exact chunk");
        let y: [f32; LANES] = std::array::from_fn(|j| (map(block[j]) + 1.0) * half);
        for (e, tally) in at_least.iter_mut().enumerate() {
            let edge = (e + 1) as f32;
            for (t, &yj) in tally.iter_mut().zip(&y) {
                // cannot overflow for any patch that fits in memory; wrapping keeps the loop check-free
                *t = t.wrapping_add((yj >= edge) as u32);
            }
        }
    }
    // ge[c][k]: values of channel c in bin k or above
    let mut ge = [[0u32; HIST_BINS + 1]; 3];
    for (c, g) in ge.iter_mut().enumerate() {
        g[0] = (data.len() / 3) as u32;
        for (e, tally) in at_least.iter().enumerate() {
            g[e + 1] = tally.iter().skip(c).step_by(3).sum();
        }
    }
    for (i, &v) in blocks.remainder().iter().enumerate() {
        let y = (map(v) + 1.0) * half;
        for (e, g) in ge[i % 3].iter_mut().enumerate().take(HIST_BINS).skip(1) {
            *g += (y >= e as f32) as u32;
        }
    }
    std::array::from_fn(|i| {
        let (c, k) = (i / HIST_BINS, i % HIST_BINS);
        ge[c][k] - ge[c][k + 1]
    })
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    /// Target in `[0, 1]`.
    pub target: f64,
}

/// Mean log-loss over `batch` and its gradient with respect to the weights and bias.
pub fn log_loss_and_grad(weights: &[f64], bias: f64, batch: &[Example]) -> (f64, Vec<f64>, f64) {
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for ex in batch {
        let z = bias + weights.iter().zip(&ex.features).map(|(w, f)| w * f).sum::<f64>();
        loss += softplus(z) - ex.target * z;
        let r = sigmoid(z) - ex.target;
        for (g, f) in gw.iter_mut().zip(&ex.features) {
            *g += r * f;
        }
        gb += r;
    }
    let n = batch.len().max(1) as f64;
    gw.iter_mut().for_each(|g| *g /= n);
    (loss / n, gw, gb / n)
}

/// RMSProp with momentum in the common deep-learning form:
/// `ms = decay ms + (1 - decay) g^2`, `mom = momentum mom + lr g / sqrt(ms + eps)`,
/// `theta -= mom`. The mean square starts at 1.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub decay: f64,
    pub momentum: f64,
    pub epsilon: f64,
    ms: Vec<f64>,
    mom: Vec<f64>,
}

impl RmsProp {
    pub fn new(n_params: usize, decay: f64, momentum: f64, epsilon: f64) -> Self {
        Self {
            decay,
            momentum,
            epsilon,
            ms: vec![1.0; n_params],
            mom: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for i in 0..params.len() {
            self.ms[i] = self.decay * self.ms[i] + (1.0 - self.decay) * grad[i] * grad[i];
            self.mom[i] = self.momentum * self.mom[i] + lr * grad[i] / (self.ms[i] + self.epsilon).sqrt();
            params[i] -= self.mom[i];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub momentum: f64,
    pub epsilon: f64,
    /// The learning rate is multiplied by `lr_decay_factor` every
    /// `lr_decay_examples` training examples.
    pub lr_decay_factor: f64,
    pub lr_decay_examples: u64,
    /// Train on soft labels instead of hard ones.
    pub soft_labels: bool,
    pub magnifications: Vec<Magnification>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_size: 32,
            learning_rate: 0.05,
            rms_decay: 0.9,
            momentum: 0.9,
            epsilon: 1.0,
            lr_decay_factor: 0.5,
            lr_decay_examples: 2_000_000,
            soft_labels: false,
            magnifications: vec![Magnification::X40],
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, examples_seen: u64) -> f64 {
        let halvings = examples_seen / self.lr_decay_examples.max(1);
        self.learning_rate * self.lr_decay_factor.powi(halvings.min(i32::MAX as u64) as i32)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.rms_decay)
            && (0.0..1.0).contains(&self.momentum)
            && self.epsilon > 0.0
            && self.lr_decay_factor > 0.0
            && self.lr_decay_examples > 0
            && !self.magnifications.is_empty();
        if !ok {
            return Err(Error::Config(format!("invalid training configuration: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub examples: u64,
    pub positives: u64,
    /// Mean batch loss over the first and last 1% of steps (at least one step each).
    pub early_loss: f64,
    pub late_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModelFile {
    pub kind: String,
    pub bins: usize,
    pub magnifications: Vec<Magnification>,
    pub weights: Vec<f64>,
    pub bias: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainConfig>,
}

/// `p = logistic(w . phi + b)` over [`histogram_features`].
#[derive(Clone, Debug, PartialEq)]
pub struct ToyTrainableClassifier {
    mags: Vec<Magnification>,
    weights: Vec<f64>,
    bias: f64,
    training: Option<TrainConfig>,
}

impl ToyTrainableClassifier {
    /// All-zero parameters; predicts 0.5 everywhere.
    pub fn zeros(mags: Vec<Magnification>) -> Self {
        let n = mags.len() * 3 * HIST_BINS;
        Self {
            mags,
            weights: vec![0.0; n],
            bias: 0.0,
            training: None,
        }
    }

    pub fn from_parts(mags: Vec<Magnification>, weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.len() != mags.len() * 3 * HIST_BINS || mags.is_empty() {
            return Err(Error::Argument(format!(
                "{} weights do not fit {} magnifications",
                weights.len(),
                mags.len()
            )));
        }
        if !weights.iter().chain([&bias]).all(|v| v.is_finite()) {
            return Err(Error::Numeric("model parameters must be finite".into()));
        }
        Ok(Self {
            mags,
            weights,
            bias,
            training: None,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn probability(&self, features: &[f64]) -> f64 {
        sigmoid(self.bias + self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>())
    }

    pub fn to_file(&self) -> ToyModelFile {
        ToyModelFile {
            kind: MODEL_KIND.into(),
            bins: HIST_BINS,
            magnifications: self.mags.clone(),
            weights: self.weights.clone(),
            bias: self.bias,
            training: self.training.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: ToyModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if f.kind != MODEL_KIND || f.bins != HIST_BINS {
            return Err(Error::Format(format!(
                "{}: unsupported model kind '{}' with {} bins",
                path.display(),
                f.kind,
                f.bins
            )));
        }
        let mut m = Self::from_parts(f.magnifications, f.weights, f.bias)?;
        m.training = f.training;
        Ok(m)
    }
}

impl PatchClassifier for ToyTrainableClassifier {
    fn magnifications(&self) -> &[Magnification] {
        &self.mags
    }

    fn predict(&self, group: &PatchGroup) -> Result<f32> {
        Ok(self.probability(&histogram_features(group, &self.mags)?) as f32)
    }
}

fn example_at(
    sampler: &TrainingSampler,
    augmenter: Option<&Augmenter>,
    config: &TrainConfig,
    index: u64,
) -> Result<Example> {
    // histogram features do not depend on pixel arrangement
    let (_, patch, _) = sampler.sample_with(index, &config.magnifications, augmenter, false)?;
    Ok(Example {
        features: unit_range_features(&patch.group, &config.magnifications)?,
        target: if config.soft_labels {
            patch.soft_label
        } else {
            patch.hard_label as f64
        },
    })
}

/// Examples `start..start + count` of the sampler stream, without training.
pub fn examples(
    sampler: &TrainingSampler,
    augmenter: Option<&Augmenter>,
    config: &TrainConfig,
    start: u64,
    count: u64,
) -> Result<Vec<Example>> {
    (start..start + count)
        .into_par_iter()
        .map(|i| example_at(sampler, augmenter, config, i))
        .collect()
}

/// Runs `config.steps` RMSProp updates from zero weights. Step `s` trains on
/// sampler draws `s * batch .. (s + 1) * batch`, so the result depends only on
/// the sampler seed and the configuration.
pub fn train_toy(
    sampler: &TrainingSampler,
    augmenter: Option<&Augmenter>,
    config: &TrainConfig,
) -> Result<(ToyTrainableClassifier, TrainReport)> {
    config.validate()?;
    let mut model = ToyTrainableClassifier::zeros(config.magnifications.clone());
    let n = model.weights.len();
    let mut params: Vec<f64> = model.weights.iter().copied().chain([model.bias]).collect();
    let mut opt = RmsProp::new(n + 1, config.rms_decay, config.momentum, config.epsilon);
    let batch = config.batch_size as u64;
    let window = (config.steps / 100).max(1);
    let (mut early, mut late, mut positives) = (0.0, 0.0, 0u64);
    let mut saw = [false; 2];
    for step in 0..config.steps {
        let exs = examples(sampler, augmenter, config, step * batch, batch)?;
        for e in &exs {
            saw[(e.target > 0.0) as usize] = true;
            positives += (e.target > 0.0) as u64;
        }
        let (loss, gw, gb) = log_loss_and_grad(&params[..n], params[n], &exs);
        if step < window {
            early += loss / window as f64;
        }
        if step >= config.steps - window.min(config.steps) {
            late += loss / window.min(config.steps) as f64;
        }
        let grad: Vec<f64> = gw.into_iter().chain([gb]).collect();
        opt.step(&mut params, &grad, config.learning_rate_at(step * batch));
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::Numeric(format!("parameters diverged at step {step}")));
        }
    }
    if config.steps > 0 && !(saw[0] && saw[1]) {
        return Err(Error::Training("the sample stream produced a single class".into()));
    }
    model.bias = params[n];
    params.truncate(n);
    model.weights = params;
    model.training = Some(config.clone());
    let report = TrainReport {
        steps: config.steps,
        examples: config.steps * batch,
        positives,
        early_loss: early,
        late_loss: late,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Patch;
    use crate::patch_pipeline::{orient, Orientation};
    use rand::{Rng, SeedableRng};

    #[test]
    fn histogram_bins_and_layout() {
        let p = Patch::from_raw(2, 1, vec![-1.0, 0.0, 1.0, -0.76, 0.249, 0.999]).unwrap();
        let g = PatchGroup {
            slide_id: "s".into(),
            center: (0, 0),
            members: vec![(Magnification::X40, p)],
        };
        let f = histogram_features(&g, &[Magnification::X40]).unwrap();
        assert_eq!(f.len(), 24);
        // red: -1 -> bin 0, -0.76 -> bin 0
        assert_eq!(f[0], 1.0);
        // green: 0 -> bin 4, 0.249 -> bin 4
        assert_eq!(f[8 + 4], 1.0);
        // blue: 1 -> bin 7, 0.999 -> bin 7
        assert_eq!(f[16 + 7], 1.0);
        assert!(histogram_features(&g, &[Magnification::X20]).is_err());
    }

    #[test]
    fn fused_range_features_match() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<f32> = (0..3 * 40 * 40).map(|_| rng.random_range(-0.3..1.3)).collect();
        let g = PatchGroup {
            slide_id: "s".into(),
            center: (0, 0),
            members: vec![(Magnification::X40, Patch::from_raw(40, 40, raw).unwrap())],
        };
        let mags = [Magnification::X40];
        let direct = histogram_features(&g.map(crate::patch_pipeline::to_model_range), &mags).unwrap();
        assert_eq!(unit_range_features(&g, &mags).unwrap(), direct);
    }

    #[test]
    fn lane_counts_match_direct_binning() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for len in [0, 3, 45, 48, 51, 3 * 299 * 299] {
            let mut data: Vec<f32> = (0..len).map(|_| rng.random_range(-1.5..1.5)).collect();
            let specials = [f32::NAN, f32::INFINITY, f32::NEG_INFINITY, 1.0, -1.0, 0.75, -0.25];
            for (i, v) in data.iter_mut().enumerate().filter(|(i, _)| i % 17 == 0) {
                *v = specials[i % specials.len()];
            }
            let mut direct = [0u32; 3 * HIST_BINS];
            for (i, &v) in data.iter().enumerate() {
                let bin = ((v + 1.0) * 4.0).clamp(0.0, 7.0) as usize;
                direct[i % 3 * HIST_BINS + bin] += 1;
            }
            assert_eq!(counts_kernel(&data, |v| v), direct, "len {len}");
            assert_eq!(channel_counts(&data, |v| v), direct, "len {len}");
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = ToyTrainableClassifier::zeros(vec![Magnification::X40]);
        let g = PatchGroup {
            slide_id: "s".into(),
            center: (0, 0),
            members: vec![(Magnification::X40, Patch::filled(3, 3, [0.2; 3]))],
        };
        assert_eq!(m.predict(&g).unwrap(), 0.5);
    }

    fn random_batch(seed: u64, n: usize, dim: usize) -> Vec<Example> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Example {
                features: (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(),
                target: if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.0..1.0) },
            })
            .collect()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let dim = 24;
        let batch = random_batch(3, 32, dim);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b = 0.3;
        let (_, gw, gb) = log_loss_and_grad(&w, b, &batch);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..=dim {
            let (mut wp, mut wm, mut bp, mut bm) = (w.clone(), w.clone(), b, b);
            if i < dim {
                wp[i] += h;
                wm[i] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            let numeric = (log_loss_and_grad(&wp, bp, &batch).0 - log_loss_and_grad(&wm, bm, &batch).0) / (2.0 * h);
            let analytic = if i < dim { gw[i] } else { gb };
            worst = worst.max((numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn rmsprop_first_step() {
        // ms = 0.9 + 0.1 * 4 = 1.3; step = 0.05 * 2 / sqrt(2.3)
        let mut opt = RmsProp::new(1, 0.9, 0.9, 1.0);
        let mut p = [0.0];
        opt.step(&mut p, &[2.0], 0.05);
        assert!((p[0] + 0.1 / 2.3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn learning_rate_halves_on_schedule() {
        let c = TrainConfig {
            lr_decay_examples: 100,
            ..TrainConfig::default()
        };
        assert_eq!(c.learning_rate_at(99), 0.05);
        assert_eq!(c.learning_rate_at(100), 0.025);
        assert_eq!(c.learning_rate_at(250), 0.0125);
    }

    #[test]
    fn predictions_are_orientation_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let m = ToyTrainableClassifier::from_parts(
            vec![Magnification::X40],
            (0..24).map(|_| rng.random_range(-3.0..3.0)).collect(),
            -0.2,
        )
        .unwrap();
        let p = Patch::from_fn(17, 17, |x, y| [(x as f32 / 8.5) - 1.0, (y as f32 / 8.5) - 1.0, ((x * y) % 5) as f32 / 2.5 - 1.0]);
        let preds: Vec<f32> = Orientation::ALL
            .iter()
            .map(|&o| {
                let g = PatchGroup {
                    slide_id: "s".into(),
                    center: (0, 0),
                    members: vec![(Magnification::X40, orient(&p, o).unwrap())],
                };
                m.predict(&g).unwrap()
            })
            .collect();
        assert!(preds.iter().all(|&v| v == preds[0]));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = ToyTrainableClassifier::from_parts(vec![Magnification::X40], (0..24).map(|i| i as f64 * 0.1).collect(), 1.5).unwrap();
        m.save(&path).unwrap();
        assert_eq!(ToyTrainableClassifier::load(&path).unwrap(), m);
        std::fs::write(&path, r#"{"kind":"other","bins":8,"magnifications":["40x"],"weights":[],"bias":0}"#).unwrap();
        assert!(matches!(ToyTrainableClassifier::load(&path), Err(Error::Format(_))));
    }
}
