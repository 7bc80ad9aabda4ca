//! The self-training loop: infer masks on the training videos, score
//! their quality, assemble a weighted corpus, train the pixel model,
//! and repeat with the fresh confidence maps.
//!
//! Each iteration is a closed circle. Inference combines detector boxes
//! and region proposals with the previous model's confidence (none on
//! the first pass) into graph potentials, and the exact minimizer turns
//! them into per-key-frame masks. Every mask carries a quality score ω:
//! at iteration one the mean foreground probability of its human nodes,
//! later the model's mean confidence over them. Only the best few
//! frames per video are trained on, weighted by ω, padded with all-
//! background negatives drawn from detection-free frames, so label
//! noise is attenuated rather than amplified as the loop feeds on its
//! own output.
//!
//! Every stochastic choice (negative sampling, training shuffles) draws
//! from one seeded generator, so a whole run is reproducible down to
//! the last byte of its artifacts.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::energy::{
    build_proposal_mask, ConfidenceMap, PotentialOptions, PotentialSet, total_energy,
    DEFAULT_DET_THRESHOLD,
};
use crate::learner::{
    predict_confidence, train, PixelModel, Standardization, TrainConfig, WeightedSample,
};
use crate::solver::minimize;
use crate::stgraph::build_graph;
use crate::supervoxel::{
    read_supervoxel_dir, split_shots, SupervoxelMap, DEFAULT_KEYFRAME_CHURN_THRESHOLD,
    DEFAULT_SHOT_BOUNDARY_THRESHOLD,
};
use crate::videoio::{
    read_detections, read_frame_sequence, read_mask_dir, read_proposals, BinaryMask, DetectionBox,
    FrameSequence, ProposalSet, compute_iou,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Video sets and manifests
// ---------------------------------------------------------------------------

/// Which side of the experiment a video belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(Error::invalid(format!(
                "split must be \"train\" or \"eval\", got {other:?}"
            ))),
        }
    }
}

/// One manifest row before path resolution. Paths are stored relative
/// to the manifest file.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub split: Split,
    pub frames_dir: PathBuf,
    pub supervoxel_dir: PathBuf,
    pub detections_path: PathBuf,
    pub proposals_path: PathBuf,
    /// Ground-truth masks; optional ("-" in the file) since only the
    /// eval split strictly needs them.
    pub truth_dir: Option<PathBuf>,
}

fn path_field(path: &Path) -> Result<&str> {
    path.to_str()
        .ok_or_else(|| Error::invalid(format!("non-UTF-8 path {path:?} in manifest")))
}

/// Write a manifest: one video per line, tab-separated
/// `split frames supervoxels detections proposals truth`, with `-`
/// standing for an absent truth directory.
pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in entries {
        let truth = match &e.truth_dir {
            Some(t) => path_field(t)?,
            None => "-",
        };
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            e.split,
            path_field(&e.frames_dir)?,
            path_field(&e.supervoxel_dir)?,
            path_field(&e.detections_path)?,
            path_field(&e.proposals_path)?,
            truth,
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A video's artifact locations, resolved to absolute-ish paths.
#[derive(Debug, Clone)]
pub struct VideoDescriptor {
    pub name: String,
    pub split: Split,
    pub frames_dir: PathBuf,
    pub supervoxel_dir: PathBuf,
    pub detections_path: PathBuf,
    pub proposals_path: PathBuf,
    pub truth_dir: Option<PathBuf>,
}

/// The experiment's input: every video with its split.
#[derive(Debug, Clone)]
pub struct VideoSet {
    pub videos: Vec<VideoDescriptor>,
    /// The manifest this set was read from, if any; used for hashing.
    pub manifest_path: Option<PathBuf>,
}

impl VideoSet {
    /// Parse a manifest file. Relative paths resolve against the
    /// manifest's directory; video names are the parent directory of
    /// each frames dir and must be unique.
    pub fn from_manifest(path: impl AsRef<Path>) -> Result<VideoSet> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut videos = Vec::new();
        let mut names = std::collections::BTreeSet::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("expected 6 tab-separated fields, got {}", fields.len()),
                ));
            }
            let split: Split = fields[0].parse()?;
            let frames_dir = base.join(fields[1]);
            let name = frames_dir
                .parent()
                .and_then(Path::file_name)
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("video-{:02}", videos.len()));
            if !names.insert(name.clone()) {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("duplicate video name {name:?}"),
                ));
            }
            videos.push(VideoDescriptor {
                name,
                split,
                frames_dir,
                supervoxel_dir: base.join(fields[2]),
                detections_path: base.join(fields[3]),
                proposals_path: base.join(fields[4]),
                truth_dir: match fields[5] {
                    "-" => None,
                    t => Some(base.join(t)),
                },
            });
        }
        if videos.is_empty() {
            return Err(Error::format(path, "manifest lists no videos"));
        }
        Ok(VideoSet {
            videos,
            manifest_path: Some(path.to_path_buf()),
        })
    }

    /// Load every video's artifacts into memory.
    pub fn load_all(&self) -> Result<Vec<LoadedVideo>> {
        self.videos.iter().map(LoadedVideo::load).collect()
    }
}

/// A video with all artifacts in memory and cross-checked.
#[derive(Debug, Clone)]
pub struct LoadedVideo {
    pub name: String,
    pub split: Split,
    pub frames: FrameSequence,
    pub supervoxels: SupervoxelMap,
    pub detections: Vec<DetectionBox>,
    pub proposals: ProposalSet,
    pub truth: Option<Vec<BinaryMask>>,
}

impl LoadedVideo {
    pub fn load(desc: &VideoDescriptor) -> Result<LoadedVideo> {
        let frames = read_frame_sequence(&desc.frames_dir)?;
        let supervoxels = read_supervoxel_dir(&desc.supervoxel_dir)?;
        let detections = read_detections(&desc.detections_path)?;
        let proposals = read_proposals(&desc.proposals_path)?;
        let truth = desc
            .truth_dir
            .as_ref()
            .map(|d| read_mask_dir(d, frames.len()))
            .transpose()?;
        let video = LoadedVideo {
            name: desc.name.clone(),
            split: desc.split,
            frames,
            supervoxels,
            detections,
            proposals,
            truth,
        };
        video.check_consistency()?;
        Ok(video)
    }

    fn check_consistency(&self) -> Result<()> {
        let (w, h, n) = (
            self.frames.width(),
            self.frames.height(),
            self.frames.len(),
        );
        let mismatch = |what: &str| {
            Err(Error::Dimension(format!(
                "video {:?}: {what} inconsistent with {w}x{h}x{n} frames",
                self.name
            )))
        };
        if self.supervoxels.width() != w
            || self.supervoxels.height() != h
            || self.supervoxels.frame_count() != n
        {
            return mismatch("supervoxel map");
        }
        if self.detections.iter().any(|d| d.frame_index as usize >= n) {
            return mismatch("detection frame index");
        }
        for p in self.proposals.iter() {
            if p.frame_index as usize >= n || p.mask.width() != w || p.mask.height() != h {
                return mismatch("proposal");
            }
        }
        if let Some(truth) = &self.truth {
            if truth.len() != n || truth.iter().any(|m| m.width() != w || m.height() != h) {
                return mismatch("ground-truth masks");
            }
        }
        Ok(())
    }
}

/// SHA-256 over the manifest and every artifact file it references, in
/// manifest order, as a lowercase hex string. Pins reported numbers to
/// one immutable dataset.
pub fn suite_hash(set: &VideoSet) -> Result<String> {
    let mut hasher = Sha256::new();
    if let Some(manifest) = &set.manifest_path {
        hash_file(&mut hasher, manifest)?;
    }
    for v in &set.videos {
        hash_dir(&mut hasher, &v.frames_dir)?;
        hash_dir(&mut hasher, &v.supervoxel_dir)?;
        hash_file(&mut hasher, &v.detections_path)?;
        hash_file(&mut hasher, &v.proposals_path)?;
        if let Some(truth) = &v.truth_dir {
            hash_dir(&mut hasher, truth)?;
        }
    }
    Ok(format!("{:x}", hasher.finalize()))
}

fn hash_file(hasher: &mut Sha256, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(&bytes);
    Ok(())
}

fn hash_dir(hasher: &mut Sha256, dir: &Path) -> Result<()> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(dir, e))?;
    names.sort();
    for path in names {
        if path.is_file() {
            hasher.update(path.file_name().unwrap_or_default().to_string_lossy().as_bytes());
            hash_file(hasher, &path)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// Everything inference needs besides the video and the model.
#[derive(Debug, Clone)]
pub struct InferenceParams {
    pub potentials: PotentialOptions,
    /// Detections scoring at or below this are ignored.
    pub det_threshold: f64,
    pub shot_boundary_threshold: f64,
    pub keyframe_churn_threshold: usize,
}

impl Default for InferenceParams {
    fn default() -> Self {
        InferenceParams {
            potentials: PotentialOptions::default(),
            det_threshold: DEFAULT_DET_THRESHOLD,
            shot_boundary_threshold: DEFAULT_SHOT_BOUNDARY_THRESHOLD,
            keyframe_churn_threshold: DEFAULT_KEYFRAME_CHURN_THRESHOLD,
        }
    }
}

/// One key frame's inferred mask and quality.
#[derive(Debug, Clone)]
pub struct KeyframeResult {
    pub frame_index: usize,
    pub mask: BinaryMask,
    pub omega: f64,
}

/// All key-frame results of one video plus solver bookkeeping.
#[derive(Debug, Clone)]
pub struct InferenceOutcome {
    pub keyframes: Vec<KeyframeResult>,
    /// Largest observed |E(labeling) - (flow + offset)| across the
    /// video's shots: the exactness certificate of each solve.
    pub certificate_gap: f64,
}

/// Infer a mask and quality ω for every candidate key frame of a video.
///
/// Without a model (the first iteration), node probabilities come from
/// the proposal masks alone and ω is the mean foreground probability
/// over human nodes; with one, confidence maps are blended into the
/// potentials and ω is the model's mean confidence over human nodes.
/// Frames whose solve labels no node human get an empty mask and ω = 0.
pub fn infer_masks(
    video: &LoadedVideo,
    model: Option<&PixelModel>,
    params: &InferenceParams,
) -> Result<InferenceOutcome> {
    let shots = split_shots(
        &video.supervoxels,
        params.shot_boundary_threshold,
        params.keyframe_churn_threshold,
    );
    if shots.is_empty() {
        return Err(Error::invalid(format!(
            "video {:?} has zero shots",
            video.name
        )));
    }
    let (w, h) = (video.frames.width(), video.frames.height());

    let mut keyframes = Vec::new();
    let mut certificate_gap = 0.0f64;
    for shot in &shots {
        let candidates = shot.candidate_keyframes.clone();
        let graph = build_graph(shot, &candidates, &video.supervoxels, &video.frames)?;

        let confidence: Option<BTreeMap<usize, ConfidenceMap>> = model.map(|m| {
            candidates
                .iter()
                .map(|&k| (k, predict_confidence(m, &video.frames.frames()[k])))
                .collect()
        });
        let proposal_masks: BTreeMap<usize, BinaryMask> = candidates
            .iter()
            .map(|&k| {
                let conf = confidence.as_ref().and_then(|c| c.get(&k));
                let mask = build_proposal_mask(
                    k as u32,
                    w,
                    h,
                    &video.detections,
                    &video.proposals,
                    conf,
                    params.det_threshold,
                );
                (k, mask)
            })
            .collect();

        let potentials =
            PotentialSet::build(&graph, &proposal_masks, confidence.as_ref(), params.potentials)?;
        let solved = minimize(&graph, &potentials)?;
        let replayed = total_energy(&graph, &potentials, &solved.labeling)?;
        certificate_gap = certificate_gap.max((replayed - solved.energy).abs());

        for &k in &candidates {
            let nodes = graph.frame_nodes(k);
            let human: Vec<usize> = nodes
                .into_iter()
                .filter(|&i| solved.labeling.0[i])
                .collect();
            let mut mask = BinaryMask::new(w, h);
            let mut quality_sum = 0.0;
            for &i in &human {
                for &p in &graph.nodes[i].pixels {
                    mask.set_linear(p as usize, true);
                }
                quality_sum += match (&confidence, model) {
                    (Some(conf), Some(_)) => conf[&k].mean_over(&graph.nodes[i].pixels),
                    _ => potentials.unary.probability(i),
                };
            }
            let omega = if human.is_empty() {
                0.0
            } else {
                quality_sum / human.len() as f64
            };
            keyframes.push(KeyframeResult {
                frame_index: k,
                mask,
                omega,
            });
        }
    }
    Ok(InferenceOutcome {
        keyframes,
        certificate_gap,
    })
}

// ---------------------------------------------------------------------------
// Corpus selection
// ---------------------------------------------------------------------------

/// Corpus assembly knobs.
#[derive(Debug, Clone)]
pub struct SelectionParams {
    /// Keep at most this many key frames per video, by descending ω.
    pub max_per_video: usize,
    /// Target share of all-background negatives in the final corpus.
    pub negative_fraction: f64,
    pub use_negatives: bool,
    /// When false, every selected sample trains at weight 1.
    pub use_sample_weights: bool,
    /// A frame counts as detection-free if no box scores above this.
    pub det_threshold: f64,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            max_per_video: 5,
            negative_fraction: 1.0 / 3.0,
            use_negatives: true,
            use_sample_weights: true,
            det_threshold: DEFAULT_DET_THRESHOLD,
        }
    }
}

/// Ledger entry for one chosen corpus frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFrame {
    pub video: String,
    pub frame_index: usize,
    pub omega: f64,
    pub negative: bool,
}

/// The weighted samples of one training round plus their provenance.
#[derive(Debug)]
pub struct TrainingCorpus {
    pub samples: Vec<WeightedSample>,
    pub selections: Vec<SelectedFrame>,
    pub positive_count: usize,
    pub negative_count: usize,
}

/// Pick the per-video best key frames and pad with negatives.
///
/// Per video: the `max_per_video` highest-ω frames (ties to the lower
/// index), skipping ω = 0 since those carry no detection evidence.
/// Negatives are drawn seeded, without replacement, from frames with no
/// above-threshold detection across all given videos, sized so they
/// make up about `negative_fraction` of the corpus, and enter as all-
/// background masks at full weight ω = 1.
pub fn select_training_frames(
    videos: &[&LoadedVideo],
    results: &[InferenceOutcome],
    params: &SelectionParams,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingCorpus> {
    if videos.len() != results.len() {
        return Err(Error::invalid("one inference outcome per video required"));
    }
    let mut samples = Vec::new();
    let mut selections = Vec::new();

    for (video, outcome) in videos.iter().zip(results) {
        let mut ranked: Vec<&KeyframeResult> =
            outcome.keyframes.iter().filter(|k| k.omega > 0.0).collect();
        ranked.sort_by(|a, b| {
            b.omega
                .partial_cmp(&a.omega)
                .expect("ω is finite")
                .then(a.frame_index.cmp(&b.frame_index))
        });
        for k in ranked.into_iter().take(params.max_per_video) {
            let weight = if params.use_sample_weights { k.omega } else { 1.0 };
            samples.push(WeightedSample::new(
                video.frames.frames()[k.frame_index].clone(),
                k.mask.clone(),
                weight,
            )?);
            selections.push(SelectedFrame {
                video: video.name.clone(),
                frame_index: k.frame_index,
                omega: k.omega,
                negative: false,
            });
        }
    }
    let positive_count = samples.len();

    let mut negative_count = 0;
    if params.use_negatives && params.negative_fraction > 0.0 {
        let f = params.negative_fraction.min(0.9);
        let target = ((positive_count as f64 * f) / (1.0 - f)).round() as usize;
        let pool: Vec<(usize, usize)> = videos
            .iter()
            .enumerate()
            .flat_map(|(vi, video)| {
                (0..video.frames.len())
                    .filter(|&t| {
                        !video.detections.iter().any(|d| {
                            d.frame_index as usize == t && d.score > params.det_threshold
                        })
                    })
                    .map(move |t| (vi, t))
            })
            .collect();
        let take = target.min(pool.len());
        let mut picked: Vec<(usize, usize)> = rand::seq::index::sample(rng, pool.len(), take)
            .iter()
            .map(|i| pool[i])
            .collect();
        picked.sort_unstable();
        for (vi, t) in picked {
            let video = videos[vi];
            let empty = BinaryMask::new(video.frames.width(), video.frames.height());
            samples.push(WeightedSample::new(
                video.frames.frames()[t].clone(),
                empty,
                1.0,
            )?);
            selections.push(SelectedFrame {
                video: video.name.clone(),
                frame_index: t,
                omega: 1.0,
                negative: true,
            });
            negative_count += 1;
        }
    }

    if samples.is_empty() {
        return Err(Error::invalid(
            "empty training corpus: no frame produced a usable mask",
        ));
    }
    Ok(TrainingCorpus {
        samples,
        selections,
        positive_count,
        negative_count,
    })
}

// ---------------------------------------------------------------------------
// Evaluation and the iteration loop
// ---------------------------------------------------------------------------

/// Mean IoU of thresholded confidence (at 0.5) against ground truth,
/// over every frame of the given videos.
pub fn evaluate(model: &PixelModel, eval_videos: &[&LoadedVideo]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for video in eval_videos {
        let truth = video.truth.as_ref().ok_or_else(|| {
            Error::invalid(format!("eval video {:?} has no ground truth", video.name))
        })?;
        for (frame, gt) in video.frames.frames().iter().zip(truth) {
            let mask = predict_confidence(model, frame).threshold(0.5);
            total += compute_iou(&mask, gt)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("no eval frames to evaluate"));
    }
    Ok(total / count as f64)
}

/// Full configuration of a run.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Iteration budget T.
    pub iterations: usize,
    pub seed: u64,
    pub inference: InferenceParams,
    pub selection: SelectionParams,
    pub train: TrainConfig,
    /// Stop early when eval IoU improves by less than this many points
    /// (hundredths) between consecutive iterations. The failed round is
    /// rolled back: the previous iteration's model stays final and the
    /// non-improving round is not recorded.
    pub early_stop_points: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        // The linear pixel model sees standardized features, so it tolerates —
        // and needs — a much larger initial step than [`TrainConfig::default`]
        // (which mirrors a deep-net recipe) to converge within 60 epochs. The
        // schedule shape (divide by 10 every 20 epochs, 20-frame batches) is
        // kept; only the scale changes.
        let train = TrainConfig {
            lr0: 0.25,
            ..TrainConfig::default()
        };
        PipelineOptions {
            iterations: 10,
            seed: 7,
            inference: InferenceParams::default(),
            selection: SelectionParams::default(),
            train,
            early_stop_points: 0.2,
        }
    }
}

/// Everything recorded about one iteration.
#[derive(Debug, Clone)]
pub struct IterationReport {
    /// 1-based iteration number.
    pub iteration: usize,
    pub selections: Vec<SelectedFrame>,
    pub corpus_size: usize,
    pub negative_count: usize,
    /// Per-epoch training loss.
    pub training_loss: Vec<f64>,
    /// Mean IoU on the eval split, in [0, 1].
    pub eval_iou: f64,
    /// Mean ω over the selected positive frames (0 when none).
    pub mean_omega: f64,
    /// Max energy-certificate gap over all solves this iteration.
    pub certificate_gap: f64,
}

/// Result of `run_iterations`: the reports, the final model, and every
/// iteration's inferred masks for artifact emission.
pub struct RunOutcome {
    pub reports: Vec<IterationReport>,
    pub model: PixelModel,
    /// `[iteration][video name] -> key-frame results`, train split.
    pub iteration_masks: Vec<BTreeMap<String, Vec<KeyframeResult>>>,
}

/// Run the self-training loop for up to `options.iterations` rounds.
///
/// Standardization statistics are frozen after the first round's
/// training corpus; per-round seeds for negative sampling and shuffling
/// derive from one master generator, so equal inputs give equal runs.
pub fn run_iterations(videos: &[LoadedVideo], options: &PipelineOptions) -> Result<RunOutcome> {
    if options.iterations == 0 {
        return Err(Error::invalid("iteration budget must be at least 1"));
    }
    let train_videos: Vec<&LoadedVideo> =
        videos.iter().filter(|v| v.split == Split::Train).collect();
    let eval_videos: Vec<&LoadedVideo> =
        videos.iter().filter(|v| v.split == Split::Eval).collect();
    if train_videos.is_empty() {
        return Err(Error::invalid("no training videos in the set"));
    }
    if eval_videos.is_empty() {
        return Err(Error::invalid("no eval videos in the set"));
    }

    let mut master = ChaCha8Rng::seed_from_u64(options.seed);
    let mut standardization: Option<Standardization> = None;
    let mut model: Option<PixelModel> = None;
    let mut reports: Vec<IterationReport> = Vec::new();
    let mut iteration_masks = Vec::new();

    for t in 1..=options.iterations {
        let negatives_seed = master.gen::<u64>();
        let train_seed = master.gen::<u64>();

        let mut outcomes = Vec::with_capacity(train_videos.len());
        let mut certificate_gap = 0.0f64;
        for video in &train_videos {
            let outcome = infer_masks(video, model.as_ref(), &options.inference)?;
            certificate_gap = certificate_gap.max(outcome.certificate_gap);
            outcomes.push(outcome);
        }

        let mut selection_rng = ChaCha8Rng::seed_from_u64(negatives_seed);
        let corpus =
            select_training_frames(&train_videos, &outcomes, &options.selection, &mut selection_rng)?;

        let train_config = TrainConfig {
            seed: train_seed,
            ..options.train.clone()
        };
        let new_model = train(&corpus.samples, standardization.as_ref(), &train_config)?;
        if standardization.is_none() {
            standardization = Some(new_model.standardization.clone());
        }
        let eval_iou = evaluate(&new_model, &eval_videos)?;

        let positives: Vec<&SelectedFrame> =
            corpus.selections.iter().filter(|s| !s.negative).collect();
        let mean_omega = if positives.is_empty() {
            0.0
        } else {
            positives.iter().map(|s| s.omega).sum::<f64>() / positives.len() as f64
        };
        // early stop rolls the failed round back: an iteration that does
        // not improve the eval score by at least `early_stop_points` is
        // discarded and the previous model stays final, so the recorded
        // sequence only ever contains deployed improvements
        if let Some(prev) = reports.last() {
            if (eval_iou - prev.eval_iou) * 100.0 < options.early_stop_points {
                break;
            }
        }
        reports.push(IterationReport {
            iteration: t,
            selections: corpus.selections.clone(),
            corpus_size: corpus.samples.len(),
            negative_count: corpus.negative_count,
            training_loss: new_model.training_log.clone(),
            eval_iou,
            mean_omega,
            certificate_gap,
        });
        iteration_masks.push(
            train_videos
                .iter()
                .zip(&outcomes)
                .map(|(v, o)| (v.name.clone(), o.keyframes.clone()))
                .collect(),
        );
        model = Some(new_model);
    }

    Ok(RunOutcome {
        reports,
        model: model.expect("at least one iteration ran"),
        iteration_masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{
        generate_video, materialize_suite, parse_suite, simulate_detections, simulate_proposals,
    };
    use tempfile::TempDir;

    /// A small two-video suite (one train, one eval) that exercises the
    /// whole loop quickly.
    const MINI_SUITE: &str = r#"
[suite]
name = "mini"
width = 48
height = 48
frames = 12
seed_grid = 8
color_tol = 20.0
min_size = 16

[detector]
center_sigma = 0.8
scale_sigma = 0.05
miss_rate = 0.1
false_positive_rate = 0.2
true_score_mean = 0.645
false_score_mean = -2.282
score_sigma = 1.0

[proposals]
per_frame = 30
distractors = 3
shift_levels = [1, 2]
morph_levels = [1]

[[video]]
name = "train-a"
split = "train"
seed = 11
cuts = [6]
background = { cell = 6, base = [98, 104, 116], cell_jitter = 26.0, noise = 4.0 }
actors = [
  { shape = "ellipse", rx = 8.0, ry = 6.0, color = [208, 146, 112], start = [16.0, 20.0], velocity = [1.0, 0.4] },
]

[[video]]
name = "train-b"
split = "train"
seed = 12
background = { cell = 6, base = [98, 104, 116], cell_jitter = 26.0, noise = 4.0 }
actors = [
  { shape = "rounded_rect", rx = 7.0, ry = 6.0, color = [196, 138, 120], start = [30.0, 26.0], velocity = [-0.8, 0.3] },
]

[[video]]
name = "neg-a"
split = "train"
seed = 13
background = { cell = 6, base = [98, 104, 116], cell_jitter = 26.0, noise = 4.0 }

[[video]]
name = "eval-a"
split = "eval"
seed = 14
background = { cell = 6, base = [98, 104, 116], cell_jitter = 26.0, noise = 4.0 }
actors = [
  { shape = "ellipse", rx = 8.0, ry = 6.0, color = [204, 142, 114], start = [24.0, 24.0], velocity = [0.9, -0.3] },
]
"#;

    fn mini_options() -> PipelineOptions {
        PipelineOptions {
            iterations: 2,
            seed: 5,
            train: TrainConfig {
                epochs: 20,
                lr0: 0.05,
                lr_decay_every: 10,
                ..TrainConfig::default()
            },
            ..PipelineOptions::default()
        }
    }

    fn materialized_mini() -> (TempDir, Vec<LoadedVideo>, VideoSet) {
        let dir = TempDir::new().unwrap();
        let suite = parse_suite(MINI_SUITE).unwrap();
        let manifest = materialize_suite(&suite, dir.path()).unwrap();
        let set = VideoSet::from_manifest(&manifest).unwrap();
        let videos = set.load_all().unwrap();
        (dir, videos, set)
    }

    #[test]
    fn manifest_round_trip_and_loading() {
        let (_dir, videos, set) = materialized_mini();
        assert_eq!(videos.len(), 4);
        assert_eq!(videos[0].name, "train-a");
        assert_eq!(videos[0].split, Split::Train);
        assert_eq!(videos[3].split, Split::Eval);
        assert!(videos.iter().all(|v| v.truth.is_some()));
        // hashing is stable
        let h1 = suite_hash(&set).unwrap();
        let h2 = suite_hash(&set).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
    }

    #[test]
    fn manifest_rejects_malformed_lines() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("manifest.txt");
        std::fs::write(&path, "train\tonly\ttwo\n").unwrap();
        assert!(VideoSet::from_manifest(&path).is_err());
        std::fs::write(&path, "").unwrap();
        assert!(VideoSet::from_manifest(&path).is_err());
        std::fs::write(&path, "test\ta/frames\ta/sv\ta/d.txt\ta/p.txt\t-\n").unwrap();
        assert!(VideoSet::from_manifest(&path).is_err());
    }

    #[test]
    fn no_usable_detections_means_empty_masks_and_zero_omega() {
        let (_dir, videos, _set) = materialized_mini();
        let mut video = videos[0].clone();
        video.detections.clear();
        let outcome = infer_masks(&video, None, &InferenceParams::default()).unwrap();
        assert!(!outcome.keyframes.is_empty());
        for k in &outcome.keyframes {
            assert_eq!(k.omega, 0.0);
            assert!(k.mask.is_all_background());
        }
    }

    #[test]
    fn oracle_inputs_give_high_iou_masks() {
        // noiseless detector and pristine proposals: iteration-1 masks
        // should sit right on the ground truth
        let suite = parse_suite(MINI_SUITE).unwrap();
        let video_spec = &suite.videos[0];
        let generated = generate_video(&video_spec.scene).unwrap();
        let noise = crate::synthgen::DetectorNoise {
            center_sigma: 0.0,
            scale_sigma: 0.0,
            miss_rate: 0.0,
            part_rate: 0.0,
            false_positive_rate: 0.0,
            true_score_mean: 2.0,
            false_score_mean: -3.0,
            score_sigma: 0.0,
        };
        let detections = simulate_detections(&generated, &noise, 1).unwrap();
        let params = crate::synthgen::ProposalParams {
            per_frame: 10,
            distractors: 0,
            shift_levels: vec![],
            morph_levels: vec![],
            parts: false,
        };
        let (proposals, _) = simulate_proposals(&generated, &params, 2).unwrap();
        let supervoxels =
            crate::supervoxel::extract_supervoxels(&generated.frames, &suite.supervoxel).unwrap();
        let video = LoadedVideo {
            name: "oracle".into(),
            split: Split::Train,
            frames: generated.frames.clone(),
            supervoxels,
            detections,
            proposals,
            truth: Some(generated.truth.clone()),
        };
        let outcome = infer_masks(&video, None, &InferenceParams::default()).unwrap();
        assert!(outcome.certificate_gap < 1e-9);
        for k in &outcome.keyframes {
            let iou = compute_iou(&k.mask, &generated.truth[k.frame_index]).unwrap();
            assert!(iou >= 0.9, "frame {}: IoU {iou}", k.frame_index);
        }
    }

    #[test]
    fn selection_keeps_top_omega_frames_and_pads_negatives() {
        let (_dir, videos, _set) = materialized_mini();
        let train: Vec<&LoadedVideo> = videos.iter().filter(|v| v.split == Split::Train).collect();
        let outcomes: Vec<InferenceOutcome> = train
            .iter()
            .map(|v| infer_masks(v, None, &InferenceParams::default()).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let corpus =
            select_training_frames(&train, &outcomes, &SelectionParams::default(), &mut rng)
                .unwrap();

        // per-video cap and ω ordering: no unselected frame beats a
        // selected one
        for (v, o) in train.iter().zip(&outcomes) {
            let selected: Vec<usize> = corpus
                .selections
                .iter()
                .filter(|s| !s.negative && s.video == v.name)
                .map(|s| s.frame_index)
                .collect();
            assert!(selected.len() <= 5);
            let min_selected = corpus
                .selections
                .iter()
                .filter(|s| !s.negative && s.video == v.name)
                .map(|s| s.omega)
                .fold(f64::INFINITY, f64::min);
            for k in &o.keyframes {
                if !selected.contains(&k.frame_index) && selected.len() == 5 {
                    assert!(
                        k.omega <= min_selected + 1e-12,
                        "unselected ω {} > selected min {min_selected}",
                        k.omega
                    );
                }
            }
        }

        // negatives make up about a third of the corpus
        let f = corpus.negative_count as f64 / corpus.samples.len() as f64;
        let ideal = 1.0 / 3.0;
        let slack = 1.0 / corpus.samples.len() as f64;
        assert!(
            (f - ideal).abs() <= slack + 1e-12,
            "negative fraction {f} not within one frame of {ideal}"
        );
        // negatives carry full weight and empty masks
        for (sample, sel) in corpus.samples.iter().zip(&corpus.selections) {
            if sel.negative {
                assert_eq!(sample.weight(), 1.0);
                assert!(sample.mask().is_all_background());
            }
        }
    }

    #[test]
    fn run_iterations_is_deterministic_and_improves_reporting() {
        let (_dir, videos, _set) = materialized_mini();
        let options = mini_options();
        let a = run_iterations(&videos, &options).unwrap();
        let b = run_iterations(&videos, &options).unwrap();
        assert_eq!(a.reports.len(), b.reports.len());
        for (ra, rb) in a.reports.iter().zip(&b.reports) {
            assert_eq!(ra.eval_iou.to_bits(), rb.eval_iou.to_bits());
            assert_eq!(ra.selections, rb.selections);
            assert_eq!(ra.corpus_size, rb.corpus_size);
        }
        for (ma, mb) in a.iteration_masks.iter().zip(&b.iteration_masks) {
            for (name, ka) in ma {
                let kb = &mb[name];
                assert_eq!(ka.len(), kb.len());
                for (x, y) in ka.iter().zip(kb) {
                    assert_eq!(x.frame_index, y.frame_index);
                    assert_eq!(x.omega.to_bits(), y.omega.to_bits());
                }
            }
        }
        // reports are well-formed
        for r in &a.reports {
            assert!((0.0..=1.0).contains(&r.eval_iou));
            assert!(r.corpus_size >= 1);
            assert!(r.certificate_gap < 1e-9);
        }
    }

    #[test]
    fn single_iteration_yields_single_report() {
        let (_dir, videos, _set) = materialized_mini();
        let options = PipelineOptions {
            iterations: 1,
            ..mini_options()
        };
        let outcome = run_iterations(&videos, &options).unwrap();
        assert_eq!(outcome.reports.len(), 1);
        assert_eq!(outcome.reports[0].iteration, 1);
        assert!(!outcome.model.training_log.is_empty());
    }

    #[test]
    fn run_requires_both_splits() {
        let (_dir, videos, _set) = materialized_mini();
        let train_only: Vec<LoadedVideo> = videos
            .iter()
            .filter(|v| v.split == Split::Train)
            .cloned()
            .collect();
        assert!(run_iterations(&train_only, &mini_options()).is_err());
        let eval_only: Vec<LoadedVideo> = videos
            .iter()
            .filter(|v| v.split == Split::Eval)
            .cloned()
            .collect();
        assert!(run_iterations(&eval_only, &mini_options()).is_err());
    }

    #[test]
    #[ignore = "tuning probe: prints eval-01 node-level energy detail"]
    fn seam_probe() {
        let dir = TempDir::new().unwrap();
        let suite = parse_suite(crate::synthgen::BUILTIN_SUITE_V1).unwrap();
        let manifest = materialize_suite(&suite, dir.path()).unwrap();
        let set = VideoSet::from_manifest(&manifest).unwrap();
        let videos = set.load_all().unwrap();
        let one = run_iterations(
            &videos,
            &PipelineOptions {
                iterations: 1,
                ..PipelineOptions::default()
            },
        )
        .unwrap();
        let v = videos.iter().find(|v| v.name == "eval-01").unwrap();
        let truth = v.truth.as_ref().unwrap();
        let opts = PipelineOptions::default();
        let params = &opts.inference;
        let (w, h) = (v.frames.width(), v.frames.height());
        let shots = split_shots(
            &v.supervoxels,
            params.shot_boundary_threshold,
            params.keyframe_churn_threshold,
        );
        eprintln!("eval-01: {} shots", shots.len());
        let overlap_frac = |n: &crate::stgraph::Node| {
            let t = &truth[n.frame_index];
            n.pixels.iter().filter(|&&p| t.get_linear(p as usize)).count() as f64
                / n.pixels.len() as f64
        };
        for shot in shots.iter().take(5) {
            let candidates = shot.candidate_keyframes.clone();
            let graph = build_graph(shot, &candidates, &v.supervoxels, &v.frames).unwrap();
            let confidence: BTreeMap<usize, ConfidenceMap> = candidates
                .iter()
                .map(|&k| (k, predict_confidence(&one.model, &v.frames.frames()[k])))
                .collect();
            let masks_with = |conf: Option<&BTreeMap<usize, ConfidenceMap>>| -> BTreeMap<usize, BinaryMask> {
                candidates
                    .iter()
                    .map(|&k| {
                        let c = conf.and_then(|c| c.get(&k));
                        (
                            k,
                            build_proposal_mask(
                                k as u32,
                                w,
                                h,
                                &v.detections,
                                &v.proposals,
                                c,
                                params.det_threshold,
                            ),
                        )
                    })
                    .collect()
            };
            let p_blind = masks_with(None);
            let p_model = masks_with(Some(&confidence));
            let pots0 = PotentialSet::build(&graph, &p_blind, None, params.potentials).unwrap();
            let pots1 =
                PotentialSet::build(&graph, &p_model, Some(&confidence), params.potentials)
                    .unwrap();
            let s0 = minimize(&graph, &pots0).unwrap();
            let s1 = minimize(&graph, &pots1).unwrap();
            let mean_edge = graph.spatial_edges.iter().map(|e| e.distance).sum::<f64>()
                / graph.spatial_edges.len().max(1) as f64;
            eprintln!(
                "shot kfs {candidates:?}: beta_p {:.3} (mean edge dist {:.4}) beta_s {:.5}",
                graph.beta_p, mean_edge, graph.beta_s
            );
            for (i, n) in graph.nodes.iter().enumerate() {
                let ov = overlap_frac(n);
                if ov < 0.3 {
                    continue;
                }
                let conf_mean = confidence[&n.frame_index].mean_over(&n.pixels);
                eprintln!(
                    "  node {i} f{} sv{} px{} ov {:.2}: eta-P {:.3} lbl {} | blend-P {:.3} conf {:.3} lbl {}",
                    n.frame_index,
                    n.supervoxel_id,
                    n.pixels.len(),
                    ov,
                    pots0.unary.probability(i),
                    s0.labeling.0[i] as u8,
                    pots1.unary.probability(i),
                    conf_mean,
                    s1.labeling.0[i] as u8,
                );
            }
            for e in &graph.spatial_edges {
                if overlap_frac(&graph.nodes[e.a]) > 0.3 && overlap_frac(&graph.nodes[e.b]) > 0.3 {
                    eprintln!(
                        "  edge {}-{} dist {:.4} weight {:.4}",
                        e.a,
                        e.b,
                        e.distance,
                        (-graph.beta_p * e.distance).exp()
                    );
                }
            }
            for (c, &(lm, q)) in graph.cliques.iter().zip(&pots1.clique_params) {
                if c.nodes.iter().any(|&i| overlap_frac(&graph.nodes[i]) > 0.3) {
                    eprintln!(
                        "  clique sv{} nodes {} sigma {:.1} lambda {:.2} q {:.2}",
                        c.supervoxel_id,
                        c.nodes.len(),
                        c.sigma,
                        lm,
                        q
                    );
                }
            }
        }
    }

    #[test]
    #[ignore = "tuning probe: prints suite-v1 reference numbers"]
    fn suite_v1_probe() {
        use std::time::Instant;
        let dir = TempDir::new().unwrap();
        let suite = parse_suite(crate::synthgen::BUILTIN_SUITE_V1).unwrap();
        let t0 = Instant::now();
        let manifest = materialize_suite(&suite, dir.path()).unwrap();
        eprintln!("materialize: {:?}", t0.elapsed());
        let set = VideoSet::from_manifest(&manifest).unwrap();
        let videos = set.load_all().unwrap();
        for v in &videos {
            let shots = split_shots(&v.supervoxels, 0.5, 10);
            let counts: Vec<usize> = shots.iter().map(|s| s.candidate_keyframes.len()).collect();
            let above = v.detections.iter().filter(|d| d.score > -1.0).count();
            eprintln!(
                "{}: {} shots, candidates {:?}, dets {} ({} above thr), svx {}",
                v.name,
                shots.len(),
                counts,
                v.detections.len(),
                above,
                v.supervoxels.id_count()
            );
        }
        let t0 = Instant::now();
        let outcome = run_iterations(
            &videos,
            &PipelineOptions {
                early_stop_points: -100.0,
                ..PipelineOptions::default()
            },
        )
        .unwrap();
        for r in &outcome.reports {
            eprintln!(
                "iter {}: IoU {:.4} corpus {} neg {} meanω {:.3} loss {:.4}->{:.4}",
                r.iteration,
                r.eval_iou,
                r.corpus_size,
                r.negative_count,
                r.mean_omega,
                r.training_loss.first().unwrap(),
                r.training_loss.last().unwrap()
            );
        }
        eprintln!("run: {:?}", t0.elapsed());

        // mask-quality diagnostics: per-video mean IoU of the masks the
        // pipeline produced at the first and last iteration, vs ground truth
        let by_name: std::collections::BTreeMap<&str, &LoadedVideo> =
            videos.iter().map(|v| (v.name.as_str(), v)).collect();
        for (tag, it) in [("first", 0usize), ("last", outcome.iteration_masks.len() - 1)] {
            let masks = &outcome.iteration_masks[it];
            for (name, kfs) in masks {
                let video = by_name[name.as_str()];
                let truth = video.truth.as_ref().unwrap();
                let mut ious = Vec::new();
                for kf in kfs {
                    ious.push(
                        crate::videoio::compute_iou(&kf.mask, &truth[kf.frame_index as usize])
                            .unwrap(),
                    );
                }
                if !ious.is_empty() {
                    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
                    eprintln!("  {tag} {name}: {} kfs, mask IoU {:.3}", ious.len(), mean);
                }
            }
        }

        // ceiling: train on ground-truth masks of every candidate keyframe
        // (what a perfect inference stage would hand the learner)
        let mut samples = Vec::new();
        for v in &videos {
            if v.split != Split::Train {
                continue;
            }
            let truth = match &v.truth {
                Some(t) => t,
                None => continue,
            };
            for (f, t) in v.frames.frames().iter().zip(truth.iter()) {
                samples.push(crate::learner::WeightedSample::new(f.clone(), t.clone(), 1.0).unwrap());
            }
        }
        let opts = PipelineOptions::default();
        let model = crate::learner::train(&samples, None, &opts.train).unwrap();
        let evals: Vec<&LoadedVideo> = videos.iter().filter(|v| v.split == Split::Eval).collect();
        eprintln!("truth-label ceiling: eval IoU {:.4}", evaluate(&model, &evals).unwrap());
        for (label, m) in [("truth", &model), ("final", &outcome.model)] {
            let per: Vec<String> = evals
                .iter()
                .map(|v| {
                    let one = [*v];
                    format!("{} {:.3}", v.name, evaluate(m, &one).unwrap())
                })
                .collect();
            eprintln!("per-eval [{label}]: {}", per.join(", "));
        }

        let one = run_iterations(
            &videos,
            &PipelineOptions {
                iterations: 1,
                ..PipelineOptions::default()
            },
        )
        .unwrap();

        // what ω each video's key frames would carry into iteration 2
        for v in &videos {
            if v.split != Split::Train {
                continue;
            }
            let out = infer_masks(v, Some(&one.model), &PipelineOptions::default().inference).unwrap();
            let omegas: Vec<f64> = out.keyframes.iter().map(|k| k.omega).collect();
            let mean = omegas.iter().sum::<f64>() / omegas.len().max(1) as f64;
            let nonzero = omegas.iter().filter(|&&o| o > 0.0).count();
            eprintln!("iter-2 ω {}: mean {:.3} ({} kfs, {} nonzero)", v.name, mean, omegas.len(), nonzero);
        }
    }

    #[test]
    fn evaluate_scores_a_perfect_predictor_at_one() {
        let (_dir, videos, _set) = materialized_mini();
        let eval: Vec<&LoadedVideo> = videos.iter().filter(|v| v.split == Split::Eval).collect();
        // train on the eval video's own truth: about as good as the
        // linear model can get — not 1.0, but far above chance
        let video = eval[0];
        let samples: Vec<WeightedSample> = video
            .truth
            .as_ref()
            .unwrap()
            .iter()
            .zip(video.frames.frames())
            .map(|(m, f)| WeightedSample::new(f.clone(), m.clone(), 1.0).unwrap())
            .collect();
        let config = TrainConfig {
            epochs: 60,
            lr0: 0.1,
            lr_decay_every: 30,
            ..TrainConfig::default()
        };
        let model = train(&samples, None, &config).unwrap();
        let iou = evaluate(&model, &eval).unwrap();
        assert!(iou > 0.5, "IoU {iou}");
    }
}
