//! Deterministic synthetic videos with ground truth, plus a simulated
//! imperfect detector and simulated region proposals.
//!
//! Real footage comes with no pixel labels, so nothing end-to-end could
//! be asserted against it. This module fabricates the whole input side
//! instead: blocky noise backgrounds, moving colored actors whose exact
//! silhouettes are known, a detector that jitters/misses/hallucinates at
//! configured rates, and proposal sets that contain the true silhouette
//! alongside graded degradations and distractor blobs. Every byte is a
//! pure function of a spec and a seed, so pipeline numbers are
//! reproducible and every failure is replayable.
//!
//! A *suite* (a set of videos with shared detector and proposal noise
//! models) is described by a checked-in TOML file; `suite-v1` ships with
//! the crate and anchors all regression numbers.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::Deserialize;

use crate::pipeline::{write_manifest, ManifestEntry, Split};
use crate::supervoxel::{extract_supervoxels, write_supervoxel_dir, SupervoxelParams};
use crate::videoio::{
    compute_iou, write_detections, write_frame_sequence, write_mask_dir, write_proposals,
    BinaryMask, DetectionBox, Frame, FrameSequence, PixelBox, ProposalSet, RegionProposal,
};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorShape {
    Ellipse,
    RoundedRect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionPath {
    Linear,
    Sinusoidal,
}

/// One moving figure. Sizes are half-extents in pixels; the silhouette
/// is clipped to the frame when the path leaves it.
#[derive(Debug, Clone)]
pub struct Actor {
    pub shape: ActorShape,
    pub rx: f64,
    pub ry: f64,
    /// Corner radius for rounded rectangles; ignored for ellipses.
    pub corner_radius: f64,
    pub color: [u8; 3],
    /// Optional second body tone: the silhouette's trailing half (local
    /// x past the center) wears this color instead. Two-tone actors
    /// split into two supervoxels, so partial proposals can drop one
    /// half — the failure mode a cross-video appearance model repairs.
    pub color2: Option<[u8; 3]>,
    /// Uniform per-frame wobble of the body color, per channel.
    pub color_jitter: f64,
    /// Center position on the first frame of the first shot.
    pub start: (f64, f64),
    /// Pixels per frame, applied within each shot.
    pub velocity: (f64, f64),
    pub motion: MotionPath,
    /// Vertical swing of the sinusoidal path.
    pub amplitude: f64,
    pub period: f64,
    /// Std dev of the per-frame center jitter.
    pub pose_jitter: f64,
}

/// Blocky low-contrast background texture.
#[derive(Debug, Clone)]
pub struct Background {
    /// Side length of one color cell.
    pub cell: u32,
    pub base: [u8; 3],
    /// Uniform per-cell offset from the base color, per channel.
    pub cell_jitter: f64,
    /// Uniform per-pixel noise amplitude, applied to the whole frame.
    pub noise: f64,
    /// Minimum RGB (Euclidean) distance every cell color must keep from
    /// each of the scene's actor body colors. Cells are re-drawn (up to a
    /// fixed attempt cap, keeping the farthest candidate) until the
    /// margin holds, so one video's background never imitates its own
    /// actor — while across a suite, other videos' cells may still land
    /// arbitrarily close to this video's actor color. 0 disables the
    /// constraint.
    pub min_actor_dist: f64,
    /// Optional second palette: each cell switches to the clutter box
    /// with probability `frac`. Clutter cells obey `min_actor_dist` too.
    pub clutter: Option<Clutter>,
    /// Per-frame probability that a cell is redrawn mid-shot (same
    /// palette rules as at a cut). Flickering cells change color between
    /// consecutive frames, so their regions fail temporal matching and
    /// register as supervoxel churn — without it a static scene can sit
    /// below the key-frame churn threshold for a whole shot. 0 disables.
    pub flicker: f64,
}

/// Secondary background palette for scene clutter: a fraction of cells
/// drawn from a different color box than the main background.
#[derive(Debug, Clone)]
pub struct Clutter {
    /// Probability that a cell uses the clutter palette.
    pub frac: f64,
    pub base: [u8; 3],
    /// Uniform per-cell offset from the clutter base, per channel.
    pub jitter: f64,
}

/// Complete recipe for one video.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    /// Zero actors makes a negative video.
    pub actors: Vec<Actor>,
    pub background: Background,
    /// Scene-cut frame indices: backgrounds re-roll and actors re-seat
    /// at each cut. Strictly increasing, inside (0, frames).
    pub cuts: Vec<usize>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::invalid("scene must be at least 8x8"));
        }
        if self.frames < 2 {
            return Err(Error::invalid("scene needs at least 2 frames"));
        }
        if self.background.cell == 0 {
            return Err(Error::invalid("background cell size must be positive"));
        }
        if !(self.background.min_actor_dist >= 0.0) {
            return Err(Error::invalid("min_actor_dist must be non-negative"));
        }
        if let Some(cl) = &self.background.clutter {
            if !(0.0..=1.0).contains(&cl.frac) {
                return Err(Error::invalid("clutter frac must be in [0, 1]"));
            }
            if !(cl.jitter >= 0.0) {
                return Err(Error::invalid("clutter jitter must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.background.flicker) {
            return Err(Error::invalid("flicker must be in [0, 1]"));
        }
        for (i, a) in self.actors.iter().enumerate() {
            if a.rx < 1.0 || a.ry < 1.0 {
                return Err(Error::invalid(format!("actor {i} is degenerately small")));
            }
            if 2.0 * a.rx + 1.0 > self.width as f64 || 2.0 * a.ry + 1.0 > self.height as f64 {
                return Err(Error::invalid(format!("actor {i} does not fit the frame")));
            }
            if a.period <= 0.0 {
                return Err(Error::invalid(format!("actor {i} has non-positive period")));
            }
        }
        let mut prev = 0usize;
        for &c in &self.cuts {
            if c == 0 || c >= self.frames {
                return Err(Error::invalid(format!("cut at {c} outside (0, {})", self.frames)));
            }
            if c <= prev {
                return Err(Error::invalid("cuts must be strictly increasing"));
            }
            prev = c;
        }
        Ok(())
    }
}

/// Error model of the simulated detector. Score bands are placed so a
/// threshold of -1 keeps about 95% of true boxes and rejects about 90%
/// of false ones.
#[derive(Debug, Clone)]
pub struct DetectorNoise {
    /// Std dev of the box-center jitter, pixels.
    pub center_sigma: f64,
    /// Std dev of the multiplicative half-extent jitter.
    pub scale_sigma: f64,
    /// Probability of dropping a visible actor on a frame.
    pub miss_rate: f64,
    /// Probability, drawn once per actor per shot, that every box for
    /// that actor in the shot covers only one horizontal half of the
    /// figure (fixed random side) instead of the whole silhouette — the
    /// partial fire a detector produces while a body stays half
    /// occluded. Persisting for the shot, like the occluder would.
    pub part_rate: f64,
    /// Expected hallucinated boxes per frame (Poisson).
    pub false_positive_rate: f64,
    pub true_score_mean: f64,
    pub false_score_mean: f64,
    pub score_sigma: f64,
}

impl DetectorNoise {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.miss_rate) {
            return Err(Error::invalid("miss rate outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.part_rate) {
            return Err(Error::invalid("part rate outside [0, 1]"));
        }
        if self.false_positive_rate < 0.0 {
            return Err(Error::invalid("false-positive rate must be non-negative"));
        }
        if self.center_sigma < 0.0 || self.scale_sigma < 0.0 || self.score_sigma < 0.0 {
            return Err(Error::invalid("detector sigmas must be non-negative"));
        }
        Ok(())
    }
}

/// Knobs of the simulated proposal generator.
#[derive(Debug, Clone)]
pub struct ProposalParams {
    /// Hard cap on proposals per frame.
    pub per_frame: usize,
    /// Random blobs per frame that correspond to nothing.
    pub distractors: usize,
    /// Pixel offsets of the shifted variants (0 entries are ignored;
    /// each level yields four single-axis shifts).
    pub shift_levels: Vec<u32>,
    /// Radii of the dilated/eroded variants (0 entries are ignored).
    pub morph_levels: Vec<u32>,
    /// Also emit the left and right halves of every exact silhouette —
    /// the part-sized regions a real proposal pool is full of. Each
    /// half overhangs the bounding-box midline by ~12% of the box
    /// width: segment parts bleed past the body center, they do not
    /// cut it razor-sharp.
    pub parts: bool,
}

impl ProposalParams {
    pub fn validate(&self) -> Result<()> {
        if self.per_frame == 0 {
            return Err(Error::invalid("per-frame proposal cap must be positive"));
        }
        Ok(())
    }
}

/// A rendered video together with everything the renderer knows about
/// it: per-frame truth, per-actor silhouettes, and the scripted cuts.
#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub frames: FrameSequence,
    /// Union of actor silhouettes per frame.
    pub truth: Vec<BinaryMask>,
    pub cuts: Vec<usize>,
    /// `[frame][actor]` silhouette, possibly empty when clipped away.
    pub actor_masks: Vec<Vec<BinaryMask>>,
    /// `[frame][actor]` visible pixel count; matches `actor_masks`.
    pub actor_pixel_counts: Vec<Vec<usize>>,
    /// `[frame][actor]` tight box, `None` when fully clipped.
    pub actor_boxes: Vec<Vec<Option<PixelBox>>>,
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn draw_normal(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("validated sigma").sample(rng)
    } else {
        0.0
    }
}

/// Draw one background cell color: pick the palette (main or clutter),
/// then re-draw until the color keeps `min_actor_dist` from every actor
/// color (capped attempts, farthest candidate wins).
fn pick_cell_color(rng: &mut impl Rng, spec: &SceneSpec) -> [u8; 3] {
    let (base, jitter) = match &spec.background.clutter {
        Some(cl) if cl.frac > 0.0 && rng.gen_bool(cl.frac) => (cl.base, cl.jitter),
        _ => (spec.background.base, spec.background.cell_jitter),
    };
    let mut best: Option<([u8; 3], f64)> = None;
    for _ in 0..64 {
        let mut c = [0u8; 3];
        for (ch, base) in c.iter_mut().zip(base) {
            let off = if jitter > 0.0 { rng.gen_range(-jitter..=jitter) } else { 0.0 };
            *ch = (base as f64 + off).round().clamp(0.0, 255.0) as u8;
        }
        let dist = |tone: [u8; 3]| {
            c.iter()
                .zip(tone)
                .map(|(&x, y)| (x as f64 - y as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let margin = spec
            .actors
            .iter()
            .flat_map(|a| std::iter::once(a.color).chain(a.color2))
            .map(dist)
            .fold(f64::INFINITY, f64::min);
        if best.map_or(true, |(_, m)| margin > m) {
            best = Some((c, margin));
        }
        if margin >= spec.background.min_actor_dist {
            break;
        }
    }
    best.unwrap().0
}

fn silhouette_contains(actor: &Actor, cx: f64, cy: f64, x: u32, y: u32) -> bool {
    let dx = x as f64 - cx;
    let dy = y as f64 - cy;
    match actor.shape {
        ActorShape::Ellipse => {
            let nx = dx / actor.rx;
            let ny = dy / actor.ry;
            nx * nx + ny * ny <= 1.0
        }
        ActorShape::RoundedRect => {
            if dx.abs() > actor.rx || dy.abs() > actor.ry {
                return false;
            }
            let r = actor.corner_radius.min(actor.rx).min(actor.ry);
            let ex = dx.abs() - (actor.rx - r);
            let ey = dy.abs() - (actor.ry - r);
            if ex > 0.0 && ey > 0.0 {
                ex * ex + ey * ey <= r * r
            } else {
                true
            }
        }
    }
}

/// Render a scene. Bit-identical for identical (spec, seed); the truth
/// masks are the exact pre-noise silhouettes.
pub fn generate_video(spec: &SceneSpec) -> Result<GeneratedVideo> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let cells_x = w.div_ceil(spec.background.cell) as usize;
    let cells_y = h.div_ceil(spec.background.cell) as usize;
    let mut cell_colors: Vec<[u8; 3]> = Vec::new();
    let mut shot_starts: Vec<(f64, f64)> = spec.actors.iter().map(|a| a.start).collect();
    let mut shot_begin = 0usize;

    let mut frames = Vec::with_capacity(spec.frames);
    let mut truth = Vec::with_capacity(spec.frames);
    let mut actor_masks = Vec::with_capacity(spec.frames);
    let mut actor_pixel_counts = Vec::with_capacity(spec.frames);
    let mut actor_boxes = Vec::with_capacity(spec.frames);

    for t in 0..spec.frames {
        let at_shot_start = t == 0 || spec.cuts.contains(&t);
        if at_shot_start {
            shot_begin = t;
            // fresh background palette for the new shot; each cell picks
            // its palette box, then is re-drawn until it keeps
            // `min_actor_dist` from every actor color (capped attempts,
            // farthest candidate wins)
            cell_colors = (0..cells_x * cells_y).map(|_| pick_cell_color(&mut rng, spec)).collect();
            // actors re-seat on every cut; the scripted start position
            // holds only for the opening shot
            if t > 0 {
                for (a, pos) in spec.actors.iter().zip(shot_starts.iter_mut()) {
                    let mx = (a.rx.ceil() + 2.0).min((w as f64 - 1.0) / 2.0);
                    let my = (a.ry.ceil() + 2.0).min((h as f64 - 1.0) / 2.0);
                    *pos = (
                        rng.gen_range(mx..=w as f64 - 1.0 - mx),
                        rng.gen_range(my..=h as f64 - 1.0 - my),
                    );
                }
            }
        } else if spec.background.flicker > 0.0 {
            // mid-shot: a fraction of cells flicker to a fresh color so
            // the background stays dynamic between cuts
            for cell in cell_colors.iter_mut() {
                if rng.gen_bool(spec.background.flicker) {
                    *cell = pick_cell_color(&mut rng, spec);
                }
            }
        }

        // per-actor pose for this frame
        let local_t = (t - shot_begin) as f64;
        let mut centers = Vec::with_capacity(spec.actors.len());
        let mut colors = Vec::with_capacity(spec.actors.len());
        for (a, &(sx, sy)) in spec.actors.iter().zip(&shot_starts) {
            let mut cx = sx + a.velocity.0 * local_t;
            let mut cy = sy + a.velocity.1 * local_t;
            if a.motion == MotionPath::Sinusoidal {
                cy += a.amplitude * (std::f64::consts::TAU * local_t / a.period).sin();
            }
            cx += draw_normal(&mut rng, a.pose_jitter);
            cy += draw_normal(&mut rng, a.pose_jitter);
            centers.push((cx, cy));
            // one wobble offset per channel, shared by both body tones so
            // their separation in color space never drifts frame to frame
            let mut off = [0.0f64; 3];
            for o in off.iter_mut() {
                let j = a.color_jitter;
                *o = if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
            }
            let shift = |base: [u8; 3]| {
                let mut c = [0.0f64; 3];
                for ch in 0..3 {
                    c[ch] = base[ch] as f64 + off[ch];
                }
                c
            };
            colors.push((shift(a.color), a.color2.map(shift)));
        }

        // paint: cells, actors on top, then global pixel noise
        let mut frame = Frame::new(w, h);
        let mut frame_truth = BinaryMask::new(w, h);
        let mut per_actor: Vec<BinaryMask> = spec.actors.iter().map(|_| BinaryMask::new(w, h)).collect();
        let noise_amp = spec.background.noise.round() as i32;
        for y in 0..h {
            for x in 0..w {
                let cell = (y / spec.background.cell) as usize * cells_x
                    + (x / spec.background.cell) as usize;
                let mut rgb = cell_colors[cell].map(f64::from);
                for (i, a) in spec.actors.iter().enumerate() {
                    if silhouette_contains(a, centers[i].0, centers[i].1, x, y) {
                        rgb = match colors[i].1 {
                            // trailing half wears the second tone
                            Some(back) if (x as f64) >= centers[i].0 => back,
                            _ => colors[i].0,
                        };
                        frame_truth.set(x, y, true);
                        per_actor[i].set(x, y, true);
                    }
                }
                let mut out = [0u8; 3];
                for c in 0..3 {
                    let n = if noise_amp > 0 { rng.gen_range(-noise_amp..=noise_amp) } else { 0 };
                    out[c] = (rgb[c] + n as f64).round().clamp(0.0, 255.0) as u8;
                }
                frame.set(x, y, out);
            }
        }

        actor_pixel_counts.push(per_actor.iter().map(BinaryMask::count_ones).collect());
        actor_boxes.push(per_actor.iter().map(BinaryMask::tight_box).collect::<Vec<_>>());
        actor_masks.push(per_actor);
        truth.push(frame_truth);
        frames.push(frame);
    }

    Ok(GeneratedVideo {
        frames: FrameSequence::new(frames)?,
        truth,
        cuts: spec.cuts.clone(),
        actor_masks,
        actor_pixel_counts,
        actor_boxes,
    })
}

// ---------------------------------------------------------------------------
// Detector simulation
// ---------------------------------------------------------------------------

/// Emit noisy boxes for a rendered video: each visible actor survives
/// with probability `1 - miss_rate` as a jittered copy of its tight box
/// scored from the high band, and each frame gains Poisson-many random
/// boxes scored from the low band.
pub fn simulate_detections(
    video: &GeneratedVideo,
    noise: &DetectorNoise,
    seed: u64,
) -> Result<Vec<DetectionBox>> {
    noise.validate()?;
    let (w, h) = (video.frames.width(), video.frames.height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // one partial-fire decision per actor per shot: None = full box,
    // Some(true) = left half only, Some(false) = right half only
    let n_actors = video.actor_boxes.first().map_or(0, Vec::len);
    let shots = video.cuts.len() + 1;
    let mut part_side: Vec<Vec<Option<bool>>> = vec![vec![None; n_actors]; shots];
    if noise.part_rate > 0.0 {
        for shot in part_side.iter_mut() {
            for side in shot.iter_mut() {
                if rng.gen_bool(noise.part_rate) {
                    *side = Some(rng.gen_bool(0.5));
                }
            }
        }
    }

    for (t, boxes) in video.actor_boxes.iter().enumerate() {
        let shot = video.cuts.iter().filter(|&&c| c <= t).count();
        for (a, b) in boxes.iter().enumerate() {
            let Some(b) = b else { continue };
            if rng.gen_bool(noise.miss_rate) {
                continue;
            }
            let (bx0, bx1) = match part_side[shot][a] {
                Some(left) => {
                    let mid = (b.x0 + b.x1) / 2;
                    if left {
                        (b.x0, mid)
                    } else {
                        (mid, b.x1)
                    }
                }
                None => (b.x0, b.x1),
            };
            let cx = (bx0 + bx1) as f64 / 2.0 + draw_normal(&mut rng, noise.center_sigma);
            let cy = (b.y0 + b.y1) as f64 / 2.0 + draw_normal(&mut rng, noise.center_sigma);
            let hw = (bx1 - bx0) as f64 / 2.0
                * (1.0 + draw_normal(&mut rng, noise.scale_sigma)).max(0.2);
            let hh = (b.y1 - b.y0) as f64 / 2.0
                * (1.0 + draw_normal(&mut rng, noise.scale_sigma)).max(0.2);
            let score = noise.true_score_mean + draw_normal(&mut rng, noise.score_sigma);
            out.push(clamped_box(t as u32, cx, cy, hw, hh, w, h, score));
        }
        let fp_count = if noise.false_positive_rate > 0.0 {
            Poisson::new(noise.false_positive_rate)
                .expect("validated rate")
                .sample(&mut rng) as u64
        } else {
            0
        };
        for _ in 0..fp_count {
            let cx = rng.gen_range(0.0..w as f64);
            let cy = rng.gen_range(0.0..h as f64);
            let hw = rng.gen_range(3.0..10.0);
            let hh = rng.gen_range(3.0..10.0);
            let score = noise.false_score_mean + draw_normal(&mut rng, noise.score_sigma);
            out.push(clamped_box(t as u32, cx, cy, hw, hh, w, h, score));
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn clamped_box(frame: u32, cx: f64, cy: f64, hw: f64, hh: f64, w: u32, h: u32, score: f64) -> DetectionBox {
    let x0 = (cx - hw).round().clamp(0.0, (w - 1) as f64) as u32;
    let x1 = (cx + hw).round().clamp(0.0, (w - 1) as f64) as u32;
    let y0 = (cy - hh).round().clamp(0.0, (h - 1) as f64) as u32;
    let y1 = (cy + hh).round().clamp(0.0, (h - 1) as f64) as u32;
    DetectionBox {
        frame_index: frame,
        score,
        x0: x0.min(x1),
        y0: y0.min(y1),
        x1: x1.max(x0),
        y1: y1.max(y0),
    }
}

// ---------------------------------------------------------------------------
// Proposal simulation
// ---------------------------------------------------------------------------

/// Per-frame, per-actor quality bookkeeping recorded while proposals
/// are generated.
#[derive(Debug, Clone)]
pub struct ProposalQuality {
    /// `[frame][actor]` best IoU of any emitted proposal against that
    /// actor's silhouette; 0 where the actor is invisible.
    pub best_iou: Vec<Vec<f64>>,
}

fn shift_mask(mask: &BinaryMask, dx: i64, dy: i64) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |x, y| {
        let sx = x as i64 - dx;
        let sy = y as i64 - dy;
        sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 && mask.get(sx as u32, sy as u32)
    })
}

fn morph_mask(mask: &BinaryMask, radius: u32, dilate: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let r = radius as i64;
    BinaryMask::from_fn(w, h, |x, y| {
        let mut hit = false;
        'scan: for dy in -r..=r {
            for dx in -r..=r {
                let nx = x as i64 + dx;
                let ny = y as i64 + dy;
                let inside = nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64;
                let v = inside && mask.get(nx as u32, ny as u32);
                if dilate == v {
                    hit = true;
                    break 'scan;
                }
            }
        }
        if dilate {
            hit
        } else {
            // erosion: survive only if no neighborhood pixel is background
            mask.get(x, y) && !hit
        }
    })
}

/// Emit proposals: the exact silhouette of every visible actor, graded
/// morphological and shifted degradations of it, and random distractor
/// blobs, capped at `per_frame` with exact copies kept first.
pub fn simulate_proposals(
    video: &GeneratedVideo,
    params: &ProposalParams,
    seed: u64,
) -> Result<(ProposalSet, ProposalQuality)> {
    params.validate()?;
    let (w, h) = (video.frames.width(), video.frames.height());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ProposalSet::new();
    let mut best_iou = Vec::with_capacity(video.actor_masks.len());

    for (t, masks) in video.actor_masks.iter().enumerate() {
        let mut frame_proposals: Vec<(BinaryMask, Option<usize>)> = Vec::new();
        // exact copies first: the cap must never evict them
        for (a, m) in masks.iter().enumerate() {
            if m.count_ones() > 0 {
                frame_proposals.push((m.clone(), Some(a)));
            }
        }
        if params.parts {
            for (a, m) in masks.iter().enumerate() {
                if m.count_ones() == 0 {
                    continue;
                }
                let b = m.tight_box().expect("non-empty mask");
                let mid = (b.x0 + b.x1) / 2;
                let over = (f64::from(b.x1 - b.x0 + 1) * 0.12).round().max(1.0) as u32;
                for left in [true, false] {
                    let half = BinaryMask::from_fn(w, h, |x, y| {
                        m.get(x, y) && if left { x <= mid + over } else { x + over >= mid }
                    });
                    frame_proposals.push((half, Some(a)));
                }
            }
        }
        for (a, m) in masks.iter().enumerate() {
            if m.count_ones() == 0 {
                continue;
            }
            for &r in &params.morph_levels {
                if r == 0 {
                    continue;
                }
                frame_proposals.push((morph_mask(m, r, true), Some(a)));
                frame_proposals.push((morph_mask(m, r, false), Some(a)));
            }
            for &s in &params.shift_levels {
                if s == 0 {
                    continue;
                }
                let s = s as i64;
                for (dx, dy) in [(s, 0), (-s, 0), (0, s), (0, -s)] {
                    frame_proposals.push((shift_mask(m, dx, dy), Some(a)));
                }
            }
        }
        for _ in 0..params.distractors {
            let cx = rng.gen_range(4.0..w as f64 - 4.0);
            let cy = rng.gen_range(4.0..h as f64 - 4.0);
            let rx = rng.gen_range(3.0..8.0);
            let ry = rng.gen_range(3.0..8.0);
            let blob = BinaryMask::from_fn(w, h, |x, y| {
                let nx = (x as f64 - cx) / rx;
                let ny = (y as f64 - cy) / ry;
                nx * nx + ny * ny <= 1.0
            });
            frame_proposals.push((blob, None));
        }

        let mut quality = vec![0.0f64; masks.len()];
        let mut emitted = 0usize;
        for (mask, actor) in frame_proposals {
            if emitted >= params.per_frame || mask.count_ones() == 0 {
                continue;
            }
            if let Some(a) = actor {
                let iou = compute_iou(&mask, &masks[a])?;
                if iou > quality[a] {
                    quality[a] = iou;
                }
            }
            set.push(RegionProposal::new(t as u32, mask)?);
            emitted += 1;
        }
        best_iou.push(quality);
    }
    Ok((set, ProposalQuality { best_iou }))
}

// ---------------------------------------------------------------------------
// Suite specs (TOML)
// ---------------------------------------------------------------------------

/// A parsed suite: shared dimensions and noise models plus one scene
/// per video. `source` keeps the original TOML for byte-exact echoing
/// next to generated data.
#[derive(Debug, Clone)]
pub struct SuiteSpec {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    pub supervoxel: SupervoxelParams,
    pub detector: DetectorNoise,
    pub proposals: ProposalParams,
    pub videos: Vec<VideoSpec>,
    pub source: String,
}

/// One video's entry in a suite.
#[derive(Debug, Clone)]
pub struct VideoSpec {
    pub name: String,
    pub split: Split,
    pub scene: SceneSpec,
    /// Detector overrides for this video, already merged over the
    /// suite-level noise model.
    pub detector: DetectorNoise,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteToml {
    suite: SuiteHeaderToml,
    detector: DetectorToml,
    proposals: ProposalsToml,
    #[serde(rename = "video")]
    videos: Vec<VideoToml>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteHeaderToml {
    name: String,
    width: u32,
    height: u32,
    frames: usize,
    seed_grid: u32,
    color_tol: f64,
    min_size: usize,
}

#[derive(Deserialize, Clone)]
#[serde(deny_unknown_fields)]
struct DetectorToml {
    center_sigma: f64,
    scale_sigma: f64,
    miss_rate: f64,
    #[serde(default)]
    part_rate: f64,
    false_positive_rate: f64,
    true_score_mean: f64,
    false_score_mean: f64,
    score_sigma: f64,
}

#[derive(Deserialize, Clone, Default)]
#[serde(deny_unknown_fields)]
struct DetectorOverrideToml {
    center_sigma: Option<f64>,
    scale_sigma: Option<f64>,
    miss_rate: Option<f64>,
    part_rate: Option<f64>,
    false_positive_rate: Option<f64>,
    true_score_mean: Option<f64>,
    false_score_mean: Option<f64>,
    score_sigma: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProposalsToml {
    per_frame: usize,
    distractors: usize,
    shift_levels: Vec<u32>,
    morph_levels: Vec<u32>,
    #[serde(default)]
    parts: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoToml {
    name: String,
    split: String,
    seed: u64,
    #[serde(default)]
    cuts: Vec<usize>,
    background: BackgroundToml,
    #[serde(default)]
    actors: Vec<ActorToml>,
    detector: Option<DetectorOverrideToml>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BackgroundToml {
    cell: u32,
    base: [u8; 3],
    cell_jitter: f64,
    noise: f64,
    #[serde(default)]
    min_actor_dist: f64,
    clutter: Option<ClutterToml>,
    #[serde(default)]
    flicker: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClutterToml {
    frac: f64,
    base: [u8; 3],
    jitter: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActorToml {
    shape: String,
    rx: f64,
    ry: f64,
    #[serde(default = "default_corner_radius")]
    corner_radius: f64,
    color: [u8; 3],
    #[serde(default)]
    color2: Option<[u8; 3]>,
    #[serde(default = "default_color_jitter")]
    color_jitter: f64,
    start: [f64; 2],
    velocity: [f64; 2],
    #[serde(default = "default_motion")]
    motion: String,
    #[serde(default)]
    amplitude: f64,
    #[serde(default = "default_period")]
    period: f64,
    #[serde(default = "default_pose_jitter")]
    pose_jitter: f64,
}

fn default_corner_radius() -> f64 {
    3.0
}
fn default_color_jitter() -> f64 {
    6.0
}
fn default_motion() -> String {
    "linear".into()
}
fn default_period() -> f64 {
    16.0
}
fn default_pose_jitter() -> f64 {
    0.5
}

impl DetectorToml {
    fn merged(&self, over: Option<&DetectorOverrideToml>) -> DetectorNoise {
        let o = over.cloned().unwrap_or_default();
        DetectorNoise {
            center_sigma: o.center_sigma.unwrap_or(self.center_sigma),
            scale_sigma: o.scale_sigma.unwrap_or(self.scale_sigma),
            miss_rate: o.miss_rate.unwrap_or(self.miss_rate),
            part_rate: o.part_rate.unwrap_or(self.part_rate),
            false_positive_rate: o.false_positive_rate.unwrap_or(self.false_positive_rate),
            true_score_mean: o.true_score_mean.unwrap_or(self.true_score_mean),
            false_score_mean: o.false_score_mean.unwrap_or(self.false_score_mean),
            score_sigma: o.score_sigma.unwrap_or(self.score_sigma),
        }
    }
}

/// The suite all regression numbers refer to: checked in with the crate
/// so the dataset behind every recorded figure is immutable.
pub const BUILTIN_SUITE_V1: &str = include_str!("../suites/suite-v1.toml");

/// Resolve a built-in suite by name.
pub fn builtin_suite(name: &str) -> Option<&'static str> {
    match name {
        "suite-v1" => Some(BUILTIN_SUITE_V1),
        _ => None,
    }
}

/// Parse and validate a suite description.
pub fn parse_suite(text: &str) -> Result<SuiteSpec> {
    let raw: SuiteToml = toml::from_str(text)
        .map_err(|e| Error::invalid(format!("suite spec: {e}")))?;
    if raw.suite.name.is_empty() {
        return Err(Error::invalid("suite name must not be empty"));
    }
    let proposals = ProposalParams {
        per_frame: raw.proposals.per_frame,
        distractors: raw.proposals.distractors,
        shift_levels: raw.proposals.shift_levels,
        morph_levels: raw.proposals.morph_levels,
        parts: raw.proposals.parts,
    };
    proposals.validate()?;
    let mut videos = Vec::with_capacity(raw.videos.len());
    let mut seen = std::collections::BTreeSet::new();
    for v in &raw.videos {
        if v.name.is_empty() || v.name.contains(['/', '\\']) {
            return Err(Error::invalid(format!("bad video name {:?}", v.name)));
        }
        if !seen.insert(v.name.clone()) {
            return Err(Error::invalid(format!("duplicate video name {:?}", v.name)));
        }
        let split: Split = v.split.parse()?;
        let actors = v
            .actors
            .iter()
            .map(|a| {
                let shape = match a.shape.as_str() {
                    "ellipse" => ActorShape::Ellipse,
                    "rounded_rect" => ActorShape::RoundedRect,
                    other => return Err(Error::invalid(format!("unknown actor shape {other:?}"))),
                };
                let motion = match a.motion.as_str() {
                    "linear" => MotionPath::Linear,
                    "sinusoidal" => MotionPath::Sinusoidal,
                    other => return Err(Error::invalid(format!("unknown motion {other:?}"))),
                };
                Ok(Actor {
                    shape,
                    rx: a.rx,
                    ry: a.ry,
                    corner_radius: a.corner_radius,
                    color: a.color,
                    color2: a.color2,
                    color_jitter: a.color_jitter,
                    start: (a.start[0], a.start[1]),
                    velocity: (a.velocity[0], a.velocity[1]),
                    motion,
                    amplitude: a.amplitude,
                    period: a.period,
                    pose_jitter: a.pose_jitter,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = SceneSpec {
            width: raw.suite.width,
            height: raw.suite.height,
            frames: raw.suite.frames,
            actors,
            background: Background {
                cell: v.background.cell,
                base: v.background.base,
                cell_jitter: v.background.cell_jitter,
                noise: v.background.noise,
                min_actor_dist: v.background.min_actor_dist,
                clutter: v.background.clutter.as_ref().map(|cl| Clutter {
                    frac: cl.frac,
                    base: cl.base,
                    jitter: cl.jitter,
                }),
                flicker: v.background.flicker,
            },
            cuts: v.cuts.clone(),
            seed: v.seed,
        };
        scene.validate()?;
        let detector = raw.detector.merged(v.detector.as_ref());
        detector.validate()?;
        videos.push(VideoSpec {
            name: v.name.clone(),
            split,
            scene,
            detector,
        });
    }
    if videos.is_empty() {
        return Err(Error::invalid("suite lists no videos"));
    }
    let spec = SuiteSpec {
        name: raw.suite.name,
        width: raw.suite.width,
        height: raw.suite.height,
        frames: raw.suite.frames,
        supervoxel: SupervoxelParams {
            seed_grid: raw.suite.seed_grid,
            color_tol: raw.suite.color_tol,
            min_size: raw.suite.min_size,
        },
        detector: raw.detector.merged(None),
        proposals,
        videos,
        source: text.to_string(),
    };
    spec.detector.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Materialization
// ---------------------------------------------------------------------------

const DETECTION_SEED_SALT: u64 = 0x4445_5453; // "DETS"
const PROPOSAL_SEED_SALT: u64 = 0x5052_4F50; // "PROP"

/// Render a whole suite to disk in the layout the run manifest
/// consumes, and write that manifest. Returns the manifest path.
///
/// Layout under `out`:
///
/// ```text
/// manifest.txt
/// suite.toml                      (echo of the consumed spec)
/// videos/<name>/frames/frame_00000.ppm ...
/// videos/<name>/truth/frame_00000.pgm ...
/// videos/<name>/supervoxels/frame_00000.pgm + count.txt
/// videos/<name>/detections.txt
/// videos/<name>/proposals.txt
/// ```
pub fn materialize_suite(suite: &SuiteSpec, out: impl AsRef<Path>) -> Result<PathBuf> {
    let out = out.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::with_capacity(suite.videos.len());
    for video in &suite.videos {
        let rel = PathBuf::from("videos").join(&video.name);
        let base = out.join(&rel);
        fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;

        let generated = generate_video(&video.scene)?;
        write_frame_sequence(base.join("frames"), &generated.frames)?;
        write_mask_dir(base.join("truth"), &generated.truth)?;
        let svmap = extract_supervoxels(&generated.frames, &suite.supervoxel)?;
        write_supervoxel_dir(base.join("supervoxels"), &svmap)?;
        let detections = simulate_detections(
            &generated,
            &video.detector,
            video.scene.seed ^ DETECTION_SEED_SALT,
        )?;
        write_detections(base.join("detections.txt"), &detections)?;
        let (proposals, _) = simulate_proposals(
            &generated,
            &suite.proposals,
            video.scene.seed ^ PROPOSAL_SEED_SALT,
        )?;
        write_proposals(base.join("proposals.txt"), &proposals)?;

        entries.push(ManifestEntry {
            split: video.split,
            frames_dir: rel.join("frames"),
            supervoxel_dir: rel.join("supervoxels"),
            detections_path: rel.join("detections.txt"),
            proposals_path: rel.join("proposals.txt"),
            truth_dir: Some(rel.join("truth")),
        });
    }
    let manifest = out.join("manifest.txt");
    write_manifest(&manifest, &entries)?;
    fs::write(out.join("suite.toml"), &suite.source)
        .map_err(|e| Error::io(out.join("suite.toml"), e))?;
    Ok(manifest)
}
