//! The per-pixel appearance model: a 2-class linear-softmax classifier
//! over handcrafted features, trained with a sample-weighted loss.
//!
//! This is the pluggable stand-in for a segmentation network. The
//! iterative pipeline only needs something that (a) turns a frame into
//! a per-pixel human-confidence map and (b) improves when trained on
//! better masks; a linear model over 19 features keeps training
//! seconds-fast and every gradient finite-difference-checkable. The
//! `train`/`predict_confidence` pair is the seam where a stronger model
//! could be swapped in.
//!
//! Feature layout (indices into [`PIXEL_FEATURE_DIM`]-vectors):
//!
//! | index | meaning                                   |
//! |-------|-------------------------------------------|
//! | 0..3  | R, G, B                                   |
//! | 3..6  | CIE L*, a*, b*                            |
//! | 6..8  | x/(W-1), y/(H-1)                          |
//! | 8..11 | 3x3 local mean per RGB channel            |
//! | 11..14| 3x3 local std per RGB channel             |
//! | 14..17| gradient magnitude, sin/cos orientation   |
//! | 17    | luminance                                 |
//! | 18    | bias (constant 1, exempt from standardization) |
//!
//! Features are standardized to zero mean and unit variance with
//! statistics fitted on the first training corpus and frozen from then
//! on (the pipeline passes them back in), so confidence maps stay
//! comparable across training rounds.
//!
//! The corpus loss is the weighted mean of per-sample cross-entropies:
//! each sample contributes its pixel-mean cross-entropy scaled by its
//! quality weight. Zero-weight samples are dropped before training —
//! they carry no gradient, so a corpus of one live sample trains
//! exactly like that sample alone — and each mini-batch gradient is
//! normalized by the batch's weight sum, which makes one sample at
//! weight 1 and the same sample duplicated at weight 0.5 exact
//! equivalents under full-batch descent.

use std::fs;
use std::io::Read as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::color::{luminance, rgb_to_lab};
use crate::energy::ConfidenceMap;
use crate::videoio::{BinaryMask, Frame};
use crate::{Error, Result};

/// Dimensionality of the per-pixel descriptor.
pub const PIXEL_FEATURE_DIM: usize = 19;

const BIAS_INDEX: usize = PIXEL_FEATURE_DIM - 1;

type FeatureVec = [f64; PIXEL_FEATURE_DIM];
type WeightMatrix = [[f64; PIXEL_FEATURE_DIM]; 2];

/// One training frame with its target mask and quality weight.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    frame: Frame,
    mask: BinaryMask,
    weight: f64,
}

impl WeightedSample {
    /// Requires matching dimensions and a weight in [0, 1].
    pub fn new(frame: Frame, mask: BinaryMask, weight: f64) -> Result<Self> {
        if frame.width() != mask.width() || frame.height() != mask.height() {
            return Err(Error::Dimension(format!(
                "frame {}x{} vs mask {}x{}",
                frame.width(),
                frame.height(),
                mask.width(),
                mask.height()
            )));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::invalid(format!("sample weight {weight} outside [0, 1]")));
        }
        Ok(WeightedSample { frame, mask, weight })
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

/// Per-dimension affine normalization, frozen after the first fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: FeatureVec,
    pub std: FeatureVec,
}

impl Standardization {
    /// Fit mean and standard deviation per dimension. The bias stays at
    /// (0, 1); near-constant dimensions get unit scale.
    pub fn fit<'a>(features: impl Iterator<Item = &'a FeatureVec>) -> Self {
        let mut count = 0.0;
        let mut sum = [0.0; PIXEL_FEATURE_DIM];
        let mut sum_sq = [0.0; PIXEL_FEATURE_DIM];
        for f in features {
            count += 1.0;
            for d in 0..PIXEL_FEATURE_DIM {
                sum[d] += f[d];
                sum_sq[d] += f[d] * f[d];
            }
        }
        let mut mean = [0.0; PIXEL_FEATURE_DIM];
        let mut std = [1.0; PIXEL_FEATURE_DIM];
        if count > 0.0 {
            for d in 0..PIXEL_FEATURE_DIM {
                mean[d] = sum[d] / count;
                let var = (sum_sq[d] / count - mean[d] * mean[d]).max(0.0);
                std[d] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            }
        }
        mean[BIAS_INDEX] = 0.0;
        std[BIAS_INDEX] = 1.0;
        Standardization { mean, std }
    }

    #[inline]
    fn apply(&self, f: &mut FeatureVec) {
        for d in 0..PIXEL_FEATURE_DIM {
            f[d] = (f[d] - self.mean[d]) / self.std[d];
        }
    }
}

/// Raw (unstandardized) descriptors of every pixel, row-major.
pub fn pixel_features(frame: &Frame) -> Vec<FeatureVec> {
    let (w, h) = (frame.width(), frame.height());
    let lum: Vec<f64> = (0..(w * h) as usize)
        .map(|i| {
            let [r, g, b] = frame.get_linear(i);
            luminance(r, g, b)
        })
        .collect();
    let lum_at = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, w as i64 - 1) as u32;
        let y = y.clamp(0, h as i64 - 1) as u32;
        lum[(y * w + x) as usize]
    };
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let [r, g, b] = frame.get(x, y);
            let lab = rgb_to_lab(r, g, b);

            let mut sum = [0.0f64; 3];
            let mut sum_sq = [0.0f64; 3];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = (x as i64 + dx).clamp(0, w as i64 - 1) as u32;
                    let ny = (y as i64 + dy).clamp(0, h as i64 - 1) as u32;
                    let rgb = frame.get(nx, ny);
                    for c in 0..3 {
                        sum[c] += rgb[c] as f64;
                        sum_sq[c] += rgb[c] as f64 * rgb[c] as f64;
                    }
                }
            }
            let mean = [sum[0] / 9.0, sum[1] / 9.0, sum[2] / 9.0];
            let std = |c: usize| (sum_sq[c] / 9.0 - mean[c] * mean[c]).max(0.0).sqrt();

            let gx = lum_at(x as i64 + 1, y as i64) - lum_at(x as i64 - 1, y as i64);
            let gy = lum_at(x as i64, y as i64 + 1) - lum_at(x as i64, y as i64 - 1);
            let mag = gx.hypot(gy);
            let (sin, cos) = if mag > 0.0 { (gy / mag, gx / mag) } else { (0.0, 0.0) };

            let xn = if w > 1 { x as f64 / (w - 1) as f64 } else { 0.0 };
            let yn = if h > 1 { y as f64 / (h - 1) as f64 } else { 0.0 };

            out.push([
                r as f64,
                g as f64,
                b as f64,
                lab[0],
                lab[1],
                lab[2],
                xn,
                yn,
                mean[0],
                mean[1],
                mean[2],
                std(0),
                std(1),
                std(2),
                mag,
                sin,
                cos,
                lum[(y * w + x) as usize],
                1.0,
            ]);
        }
    }
    out
}

/// The trained classifier: softmax over `weights * feature`, with the
/// frozen standardization and the per-epoch loss trace of its training
/// run (the trace is not persisted to disk).
#[derive(Debug, Clone)]
pub struct PixelModel {
    /// Row 0 scores background, row 1 scores human.
    pub weights: WeightMatrix,
    pub standardization: Standardization,
    pub training_log: Vec<f64>,
}

impl PixelModel {
    /// All-zero weights: every prediction is exactly 0.5.
    pub fn zero(standardization: Standardization) -> Self {
        PixelModel {
            weights: [[0.0; PIXEL_FEATURE_DIM]; 2],
            standardization,
            training_log: Vec::new(),
        }
    }
}

#[inline]
fn score_margin(weights: &WeightMatrix, f: &FeatureVec) -> f64 {
    let mut z0 = 0.0;
    let mut z1 = 0.0;
    for d in 0..PIXEL_FEATURE_DIM {
        z0 += weights[0][d] * f[d];
        z1 += weights[1][d] * f[d];
    }
    z1 - z0
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-pixel human probability of a frame under the model.
pub fn predict_confidence(model: &PixelModel, frame: &Frame) -> ConfidenceMap {
    let mut features = pixel_features(frame);
    let values = features
        .iter_mut()
        .map(|f| {
            model.standardization.apply(f);
            // clamp the open interval so downstream -log stays finite
            sigmoid(score_margin(&model.weights, f)).clamp(1e-12, 1.0 - 1e-12)
        })
        .collect();
    ConfidenceMap::new(frame.width(), frame.height(), values)
        .expect("sigmoid output is always a probability")
}

/// Pixel-mean cross-entropy of one sample, times its weight, on
/// standardized features.
fn sample_term(weights: &WeightMatrix, features: &[FeatureVec], mask: &BinaryMask, w: f64) -> f64 {
    let mut total = 0.0;
    for (i, f) in features.iter().enumerate() {
        let margin = score_margin(weights, f);
        let p_human = sigmoid(margin);
        let p_target = if mask.get_linear(i) { p_human } else { 1.0 - p_human };
        total += -p_target.max(1e-300).ln();
    }
    w * total / features.len() as f64
}

/// Accumulate the gradient of one sample's term into `grad`.
fn accumulate_gradient(
    weights: &WeightMatrix,
    features: &[FeatureVec],
    pixel_subset: &[u32],
    mask: &BinaryMask,
    w: f64,
    grad: &mut WeightMatrix,
) {
    let scale = w / pixel_subset.len() as f64;
    for &p in pixel_subset {
        let f = &features[p as usize];
        let p_human = sigmoid(score_margin(weights, f));
        let target = if mask.get_linear(p as usize) { 1.0 } else { 0.0 };
        // d CE / d z1 = p_human - target; d CE / d z0 is its negative
        let delta = scale * (p_human - target);
        for d in 0..PIXEL_FEATURE_DIM {
            grad[1][d] += delta * f[d];
            grad[0][d] -= delta * f[d];
        }
    }
}

/// Training schedule and sampling knobs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// Divide the rate by `lr_decay_factor` after every
    /// `lr_decay_every` epochs.
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    /// Frames per mini-batch.
    pub batch_frames: usize,
    /// Per-frame pixel cap per epoch, stratified by label; `None`
    /// trains on every pixel.
    pub max_pixels_per_frame: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            lr0: 0.001,
            lr_decay_every: 20,
            lr_decay_factor: 10.0,
            batch_frames: 20,
            max_pixels_per_frame: Some(4096),
            seed: 0,
        }
    }
}

/// Stratified pixel subset: proportional shares of human and background
/// pixels, at most `cap` in total, drawn without replacement.
fn sample_pixels(mask: &BinaryMask, cap: usize, rng: &mut impl Rng) -> Vec<u32> {
    let total = mask.pixel_count();
    if cap >= total {
        return (0..total as u32).collect();
    }
    let positives: Vec<u32> = (0..total as u32)
        .filter(|&p| mask.get_linear(p as usize))
        .collect();
    let negatives: Vec<u32> = (0..total as u32)
        .filter(|&p| !mask.get_linear(p as usize))
        .collect();
    let mut pos_take = ((cap as f64 * positives.len() as f64 / total as f64).round() as usize)
        .min(positives.len());
    let mut neg_take = cap - pos_take;
    if neg_take > negatives.len() {
        pos_take = (pos_take + (neg_take - negatives.len())).min(positives.len());
        neg_take = negatives.len();
    }
    let mut out = Vec::with_capacity(pos_take + neg_take);
    for (pool, take) in [(&positives, pos_take), (&negatives, neg_take)] {
        let picked = rand::seq::index::sample(rng, pool.len(), take);
        let mut chosen: Vec<u32> = picked.iter().map(|i| pool[i]).collect();
        chosen.sort_unstable();
        out.extend(chosen);
    }
    out
}

/// Train a model by seeded mini-batch gradient descent.
///
/// `frozen` supplies standardization statistics from an earlier round;
/// when absent they are fitted on this corpus. Samples with zero weight
/// are discarded; a corpus with no weight left is an error.
pub fn train(
    corpus: &[WeightedSample],
    frozen: Option<&Standardization>,
    config: &TrainConfig,
) -> Result<PixelModel> {
    if config.epochs == 0 {
        return Err(Error::invalid("training needs at least one epoch"));
    }
    let effective: Vec<&WeightedSample> = corpus.iter().filter(|s| s.weight > 0.0).collect();
    if effective.is_empty() {
        return Err(Error::invalid("no effective training signal"));
    }

    let mut features: Vec<Vec<FeatureVec>> = effective
        .iter()
        .map(|s| pixel_features(&s.frame))
        .collect();
    let standardization = match frozen {
        Some(s) => s.clone(),
        None => Standardization::fit(features.iter().flatten()),
    };
    for frame_features in &mut features {
        for f in frame_features.iter_mut() {
            standardization.apply(f);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights: WeightMatrix = [[0.0; PIXEL_FEATURE_DIM]; 2];
    let mut training_log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.lr0
            / config
                .lr_decay_factor
                .powi((epoch / config.lr_decay_every.max(1)) as i32);

        let pixel_sets: Vec<Vec<u32>> = effective
            .iter()
            .enumerate()
            .map(|(i, _)| match config.max_pixels_per_frame {
                Some(cap) => sample_pixels(&effective[i].mask, cap, &mut rng),
                None => (0..features[i].len() as u32).collect(),
            })
            .collect();

        let mut order: Vec<usize> = (0..effective.len()).collect();
        order.shuffle(&mut rng);

        for batch in order.chunks(config.batch_frames.max(1)) {
            let mut grad: WeightMatrix = [[0.0; PIXEL_FEATURE_DIM]; 2];
            let mut weight_sum = 0.0;
            for &i in batch {
                accumulate_gradient(
                    &weights,
                    &features[i],
                    &pixel_sets[i],
                    &effective[i].mask,
                    effective[i].weight,
                    &mut grad,
                );
                weight_sum += effective[i].weight;
            }
            let step = lr / weight_sum;
            for c in 0..2 {
                for d in 0..PIXEL_FEATURE_DIM {
                    weights[c][d] -= step * grad[c][d];
                }
            }
        }

        // corpus loss after this epoch: mean over samples of the
        // weighted pixel-mean cross-entropy, on this epoch's pixels
        let mut loss = 0.0;
        for (i, sample) in effective.iter().enumerate() {
            let subset_features: Vec<FeatureVec> = pixel_sets[i]
                .iter()
                .map(|&p| features[i][p as usize])
                .collect();
            let subset_mask = subset_mask(&sample.mask, &pixel_sets[i]);
            loss += sample_term(&weights, &subset_features, &subset_mask, sample.weight);
        }
        training_log.push(loss / effective.len() as f64);
    }

    Ok(PixelModel {
        weights,
        standardization,
        training_log,
    })
}

/// Repack the masked bits of a pixel subset into a compact mask.
fn subset_mask(mask: &BinaryMask, pixels: &[u32]) -> BinaryMask {
    let mut m = BinaryMask::new(pixels.len().max(1) as u32, 1);
    for (i, &p) in pixels.iter().enumerate() {
        m.set_linear(i, mask.get_linear(p as usize));
    }
    m
}

/// Analytic gradient of one sample's loss term at the model's weights
/// versus central finite differences (step 1e-5); returns the maximum
/// relative error over all weight entries.
pub fn gradient_check(model: &PixelModel, sample: &WeightedSample) -> f64 {
    const H: f64 = 1e-5;
    let mut features = pixel_features(&sample.frame);
    for f in features.iter_mut() {
        model.standardization.apply(f);
    }
    let all_pixels: Vec<u32> = (0..features.len() as u32).collect();

    let mut analytic: WeightMatrix = [[0.0; PIXEL_FEATURE_DIM]; 2];
    accumulate_gradient(
        &model.weights,
        &features,
        &all_pixels,
        &sample.mask,
        sample.weight,
        &mut analytic,
    );

    let mut max_rel = 0.0f64;
    let mut weights = model.weights;
    for c in 0..2 {
        for d in 0..PIXEL_FEATURE_DIM {
            let saved = weights[c][d];
            weights[c][d] = saved + H;
            let plus = sample_term(&weights, &features, &sample.mask, sample.weight);
            weights[c][d] = saved - H;
            let minus = sample_term(&weights, &features, &sample.mask, sample.weight);
            weights[c][d] = saved;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic[c][d];
            if a == 0.0 && numeric == 0.0 {
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

// ---------------------------------------------------------------------------
// Model persistence: magic "PXM1", little-endian
// ---------------------------------------------------------------------------

const MODEL_MAGIC: &[u8; 4] = b"PXM1";

/// Write a model: magic, u32 class count, u32 feature count, weights
/// row-major, standardization mean, standardization std, all f64
/// little-endian. The training log is not persisted.
pub fn write_model(path: impl AsRef<Path>, model: &PixelModel) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(4 + 8 + 8 * PIXEL_FEATURE_DIM * 4);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(PIXEL_FEATURE_DIM as u32).to_le_bytes());
    for row in &model.weights {
        for &v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for &v in &model.standardization.mean {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &model.standardization.std {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<PixelModel> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::format(path, "not a PXM1 model file"));
    }
    let classes = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let dims = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if classes != 2 || dims != PIXEL_FEATURE_DIM as u32 {
        return Err(Error::format(
            path,
            format!("model is {classes}x{dims}, expected 2x{PIXEL_FEATURE_DIM}"),
        ));
    }
    let expected = 12 + 8 * PIXEL_FEATURE_DIM * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("model file is {} bytes, expected {expected}", bytes.len()),
        ));
    }
    let mut cursor = 12;
    let mut next = || -> f64 {
        let v = f64::from_le_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
        cursor += 8;
        v
    };
    let mut weights: WeightMatrix = [[0.0; PIXEL_FEATURE_DIM]; 2];
    for row in &mut weights {
        for v in row.iter_mut() {
            *v = next();
        }
    }
    let mut mean = [0.0; PIXEL_FEATURE_DIM];
    let mut std = [0.0; PIXEL_FEATURE_DIM];
    for v in mean.iter_mut() {
        *v = next();
    }
    for v in std.iter_mut() {
        *v = next();
    }
    let finite = weights.iter().flatten().all(|v| v.is_finite())
        && mean.iter().all(|v| v.is_finite())
        && std.iter().all(|v| v.is_finite() && *v > 0.0);
    if !finite {
        return Err(Error::format(path, "non-finite model parameters"));
    }
    Ok(PixelModel {
        weights,
        standardization: Standardization { mean, std },
        training_log: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    /// Bright square on dark ground, with the matching mask.
    fn separable_sample(shift: u32, weight: f64) -> WeightedSample {
        let (w, h) = (24u32, 24u32);
        let mut frame = Frame::new(w, h);
        let mut mask = BinaryMask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let inside = (6 + shift..14 + shift).contains(&x) && (6..14).contains(&y);
                frame.set(x, y, if inside { [220, 210, 40] } else { [25, 30, 45] });
                if inside {
                    mask.set(x, y, true);
                }
            }
        }
        WeightedSample::new(frame, mask, weight).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 120,
            lr0: 0.15,
            lr_decay_every: 60,
            lr_decay_factor: 10.0,
            batch_frames: 20,
            max_pixels_per_frame: None,
            seed: 9,
        }
    }

    #[test]
    fn zero_model_predicts_one_half_everywhere() {
        let sample = separable_sample(0, 1.0);
        let model = PixelModel::zero(Standardization::fit(std::iter::empty()));
        let conf = predict_confidence(&model, sample.frame());
        for i in 0..sample.frame().pixel_count() {
            assert_eq!(conf.get_linear(i), 0.5);
        }
    }

    #[test]
    fn prediction_is_deterministic() {
        let sample = separable_sample(0, 1.0);
        let model = train(&[sample.clone()], None, &quick_config()).unwrap();
        let a = predict_confidence(&model, sample.frame());
        let b = predict_confidence(&model, sample.frame());
        for i in 0..sample.frame().pixel_count() {
            assert_eq!(a.get_linear(i).to_bits(), b.get_linear(i).to_bits());
        }
    }

    #[test]
    fn separable_corpus_trains_to_low_loss() {
        let corpus: Vec<WeightedSample> = (0..4).map(|s| separable_sample(s, 1.0)).collect();
        let model = train(&corpus, None, &quick_config()).unwrap();
        let final_loss = *model.training_log.last().unwrap();
        assert!(final_loss < 0.1, "final loss {final_loss}");

        // confidence separates the classes
        let probe = separable_sample(2, 1.0);
        let conf = predict_confidence(&model, probe.frame());
        let (mut inside, mut outside, mut n_in, mut n_out) = (0.0, 0.0, 0usize, 0usize);
        for i in 0..probe.frame().pixel_count() {
            if probe.mask().get_linear(i) {
                inside += conf.get_linear(i);
                n_in += 1;
            } else {
                outside += conf.get_linear(i);
                n_out += 1;
            }
        }
        assert!(inside / n_in as f64 > outside / n_out as f64);
    }

    #[test]
    fn zero_weight_samples_do_not_influence_training() {
        let live = separable_sample(0, 0.7);
        let dead = separable_sample(3, 0.0);
        let config = quick_config();
        let with_dead = train(&[live.clone(), dead], None, &config).unwrap();
        let alone = train(&[live], None, &config).unwrap();
        for c in 0..2 {
            for d in 0..PIXEL_FEATURE_DIM {
                assert!((with_dead.weights[c][d] - alone.weights[c][d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn all_zero_weights_is_an_error() {
        let corpus = vec![separable_sample(0, 0.0), separable_sample(1, 0.0)];
        let err = train(&corpus, None, &quick_config()).unwrap_err();
        assert!(err.to_string().contains("no effective training signal"), "{err}");
        assert!(train(&[], None, &quick_config()).is_err());
    }

    #[test]
    fn duplicated_half_weight_equals_single_full_weight() {
        // full-batch descent: {s at 1.0} and {s at 0.5 twice} take the
        // same normalized step every epoch
        let s = separable_sample(0, 1.0);
        let half = WeightedSample::new(s.frame().clone(), s.mask().clone(), 0.5).unwrap();
        let config = TrainConfig { batch_frames: 4, ..quick_config() };
        let single = train(&[s], None, &config).unwrap();
        let doubled = train(&[half.clone(), half], None, &config).unwrap();
        for c in 0..2 {
            for d in 0..PIXEL_FEATURE_DIM {
                assert!(
                    (single.weights[c][d] - doubled.weights[c][d]).abs() < 1e-12,
                    "weight [{c}][{d}] {} vs {}",
                    single.weights[c][d],
                    doubled.weights[c][d]
                );
            }
        }
    }

    #[test]
    fn training_is_reproducible() {
        let corpus: Vec<WeightedSample> = (0..3).map(|s| separable_sample(s, 0.8)).collect();
        let config = TrainConfig { max_pixels_per_frame: Some(200), ..quick_config() };
        let a = train(&corpus, None, &config).unwrap();
        let b = train(&corpus, None, &config).unwrap();
        for c in 0..2 {
            for d in 0..PIXEL_FEATURE_DIM {
                assert_eq!(a.weights[c][d].to_bits(), b.weights[c][d].to_bits());
            }
        }
        assert_eq!(a.training_log, b.training_log);
    }

    #[test]
    fn full_batch_loss_is_non_increasing_at_small_rate() {
        let corpus: Vec<WeightedSample> = (0..3).map(|s| separable_sample(s, 1.0)).collect();
        let config = TrainConfig {
            epochs: 30,
            lr0: 0.015, // a tenth of the exercised rate above
            lr_decay_every: 1000,
            lr_decay_factor: 1.0,
            batch_frames: corpus.len(),
            max_pixels_per_frame: None,
            seed: 4,
        };
        let model = train(&corpus, None, &config).unwrap();
        for pair in model.training_log.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-9, "loss rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sample = separable_sample(1, 0.83);
        // random-ish non-zero weights: train briefly first
        let model = train(
            &[sample.clone()],
            None,
            &TrainConfig { epochs: 3, ..quick_config() },
        )
        .unwrap();
        let err = gradient_check(&model, &sample);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_weight_gradient_vanishes() {
        let sample = separable_sample(1, 0.0);
        let model = PixelModel::zero(Standardization::fit(std::iter::empty()));
        // both analytic and numeric are exactly zero, so the check
        // reports zero error
        assert_eq!(gradient_check(&model, &sample), 0.0);

        let mut features = pixel_features(sample.frame());
        for f in features.iter_mut() {
            model.standardization.apply(f);
        }
        let pixels: Vec<u32> = (0..features.len() as u32).collect();
        let mut grad = [[0.0; PIXEL_FEATURE_DIM]; 2];
        accumulate_gradient(&model.weights, &features, &pixels, sample.mask(), 0.0, &mut grad);
        assert!(grad.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn gradient_scales_linearly_in_weight() {
        let frame = separable_sample(2, 1.0);
        let half = WeightedSample::new(frame.frame().clone(), frame.mask().clone(), 0.5).unwrap();
        let model = PixelModel::zero(Standardization::fit(std::iter::empty()));

        let mut features = pixel_features(frame.frame());
        for f in features.iter_mut() {
            model.standardization.apply(f);
        }
        let pixels: Vec<u32> = (0..features.len() as u32).collect();
        let mut g_full = [[0.0; PIXEL_FEATURE_DIM]; 2];
        let mut g_half = [[0.0; PIXEL_FEATURE_DIM]; 2];
        accumulate_gradient(&model.weights, &features, &pixels, frame.mask(), 1.0, &mut g_full);
        accumulate_gradient(&model.weights, &features, &pixels, half.mask(), 0.5, &mut g_half);
        for c in 0..2 {
            for d in 0..PIXEL_FEATURE_DIM {
                assert_eq!(g_half[c][d], 0.5 * g_full[c][d]);
            }
        }
    }

    #[test]
    fn softmax_probabilities_sum_to_one() {
        // the two-class softmax is computed via a sigmoid of the score
        // margin; the two class probabilities are complements
        for margin in [-30.0, -2.0, 0.0, 0.004, 5.5, 28.0] {
            let p = sigmoid(margin);
            let q = sigmoid(-margin);
            assert!((p + q - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn model_round_trip() {
        let sample = separable_sample(0, 1.0);
        let model = train(&[sample], None, &TrainConfig { epochs: 5, ..quick_config() }).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("model.pxm");
        write_model(&path, &model).unwrap();
        let back = read_model(&path).unwrap();
        for c in 0..2 {
            for d in 0..PIXEL_FEATURE_DIM {
                assert_eq!(back.weights[c][d].to_bits(), model.weights[c][d].to_bits());
            }
        }
        assert_eq!(back.standardization, model.standardization);

        std::fs::write(&path, b"BOGUS123").unwrap();
        assert!(read_model(&path).is_err());
    }

    #[test]
    fn sample_validation() {
        let frame = Frame::new(8, 8);
        let mask = BinaryMask::new(8, 8);
        assert!(WeightedSample::new(frame.clone(), BinaryMask::new(4, 4), 0.5).is_err());
        assert!(WeightedSample::new(frame.clone(), mask.clone(), -0.1).is_err());
        assert!(WeightedSample::new(frame.clone(), mask.clone(), 1.1).is_err());
        assert!(WeightedSample::new(frame, mask, 1.0).is_ok());
    }

    #[test]
    fn stratified_sampling_respects_the_cap_and_proportions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // mask with a quarter positives
        let mask = BinaryMask::from_fn(32, 32, |x, y| x < 16 && y < 16);
        let picked = sample_pixels(&mask, 256, &mut rng);
        assert_eq!(picked.len(), 256);
        let pos = picked.iter().filter(|&&p| mask.get_linear(p as usize)).count();
        assert_eq!(pos, 64, "a quarter of the samples should be positive");

        // cap above the pixel count returns everything
        let all = sample_pixels(&mask, 5000, &mut rng);
        assert_eq!(all.len(), 1024);
    }
}
