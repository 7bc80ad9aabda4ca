//! Supervoxel extraction, shot splitting, and candidate key-frame
//! nomination.
//!
//! A supervoxel is a space-time region: per frame it projects to a
//! 4-connected superpixel, and its frame set is a contiguous interval.
//! The extractor here is a deterministic stand-in for heavyweight
//! hierarchical video segmentation and runs in three stages per frame —
//! seeded region growing on a regular grid (closest-color-first flood),
//! fixpoint merging of adjacent regions whose mean colors are within
//! `color_tol`, and absorption of regions below `min_size` into their
//! closest-colored neighbor — followed by greedy temporal linking of
//! regions across consecutive frames by spatial overlap and color
//! agreement.
//!
//! Caveat inherited from the seeding scheme: image features smaller than
//! `seed_grid` in both dimensions may receive no seed of their own and be
//! absorbed into a surrounding region.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fs;
use std::path::Path;

use crate::videoio::{self, Frame, FrameSequence};
use crate::{Error, Result};

/// Shot boundary rule: symmetric difference of the two frames' id sets,
/// divided by their union, must exceed this fraction.
pub const DEFAULT_SHOT_BOUNDARY_THRESHOLD: f64 = 0.5;

/// Key-frame rule: the id symmetric difference with the previous frame
/// must exceed this count.
pub const DEFAULT_KEYFRAME_CHURN_THRESHOLD: usize = 10;

/// Knobs for [`extract_supervoxels`].
#[derive(Debug, Clone, Copy)]
pub struct SupervoxelParams {
    /// Spacing of the seed grid in pixels.
    pub seed_grid: u32,
    /// Mean-RGB Euclidean distance at or below which adjacent regions
    /// merge spatially and link temporally.
    pub color_tol: f64,
    /// Regions smaller than this pixel count are absorbed by a neighbor.
    pub min_size: usize,
}

impl Default for SupervoxelParams {
    fn default() -> Self {
        SupervoxelParams {
            seed_grid: 8,
            color_tol: 20.0,
            min_size: 16,
        }
    }
}

/// Dense per-frame supervoxel labels plus an id → per-frame pixel index.
///
/// Invariants, checked at construction:
///
/// - every pixel of every frame carries a label;
/// - ids form a contiguous range starting at 0;
/// - each id's per-frame pixel set is 4-connected;
/// - each id's frame set is a contiguous interval.
#[derive(Debug, Clone)]
pub struct SupervoxelMap {
    width: u32,
    height: u32,
    labels: Vec<Vec<u32>>,
    /// Per frame: id → sorted pixel indices.
    slices: Vec<BTreeMap<u32, Vec<u32>>>,
    /// Per id: (first frame, last frame), inclusive.
    intervals: BTreeMap<u32, (usize, usize)>,
    id_count: u32,
}

impl SupervoxelMap {
    /// Build from per-frame label rasters, validating every invariant.
    pub fn from_labels(width: u32, height: u32, labels: Vec<Vec<u32>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("supervoxel map needs at least one frame"));
        }
        let n = (width * height) as usize;
        let mut slices = Vec::with_capacity(labels.len());
        let mut intervals: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
        for (t, raster) in labels.iter().enumerate() {
            if raster.len() != n {
                return Err(Error::Dimension(format!(
                    "frame {t} raster has {} labels, expected {n}",
                    raster.len()
                )));
            }
            let mut slice: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for (i, &id) in raster.iter().enumerate() {
                slice.entry(id).or_default().push(i as u32);
            }
            for (&id, pixels) in &slice {
                if !is_4_connected(width, height, raster, id, pixels) {
                    return Err(Error::invalid(format!(
                        "supervoxel {id} is not 4-connected in frame {t}"
                    )));
                }
                match intervals.entry(id) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert((t, t));
                    }
                    std::collections::btree_map::Entry::Occupied(mut e) => {
                        let (_, last) = *e.get();
                        if last != t && last != t - 1 {
                            return Err(Error::invalid(format!(
                                "supervoxel {id} reappears in frame {t} after frame {last}"
                            )));
                        }
                        e.get_mut().1 = t;
                    }
                }
            }
            slices.push(slice);
        }
        let id_count = intervals.len() as u32;
        if let Some((&max_id, _)) = intervals.iter().next_back() {
            if max_id != id_count - 1 {
                return Err(Error::invalid(format!(
                    "ids are not contiguous: {id_count} distinct ids but max id {max_id}"
                )));
            }
        }
        Ok(SupervoxelMap {
            width,
            height,
            labels,
            slices,
            intervals,
            id_count,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn frame_count(&self) -> usize {
        self.labels.len()
    }

    pub fn id_count(&self) -> u32 {
        self.id_count
    }

    /// Label raster of one frame, row-major.
    pub fn frame_labels(&self, frame: usize) -> &[u32] {
        &self.labels[frame]
    }

    #[inline]
    pub fn label(&self, frame: usize, x: u32, y: u32) -> u32 {
        self.labels[frame][(y * self.width + x) as usize]
    }

    /// Ids present in one frame, ascending.
    pub fn ids_in_frame(&self, frame: usize) -> impl Iterator<Item = u32> + '_ {
        self.slices[frame].keys().copied()
    }

    /// Sorted pixel indices of the id's projection into one frame.
    pub fn pixels(&self, frame: usize, id: u32) -> Option<&[u32]> {
        self.slices[frame].get(&id).map(Vec::as_slice)
    }

    /// Inclusive (first, last) frame of the id.
    pub fn frame_interval(&self, id: u32) -> Option<(usize, usize)> {
        self.intervals.get(&id).copied()
    }
}

fn is_4_connected(width: u32, height: u32, raster: &[u32], id: u32, pixels: &[u32]) -> bool {
    debug_assert!(!pixels.is_empty());
    let member = |p: u32| raster[p as usize] == id;
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::new();
    seen.insert(pixels[0]);
    queue.push_back(pixels[0]);
    while let Some(p) = queue.pop_front() {
        for np in neighbors4(width, height, p) {
            if member(np) && seen.insert(np) {
                queue.push_back(np);
            }
        }
    }
    seen.len() == pixels.len()
}

fn neighbors4(width: u32, height: u32, p: u32) -> impl Iterator<Item = u32> {
    let (x, y) = (p % width, p / width);
    let mut out = [None; 4];
    if x > 0 {
        out[0] = Some(p - 1);
    }
    if x + 1 < width {
        out[1] = Some(p + 1);
    }
    if y > 0 {
        out[2] = Some(p - width);
    }
    if y + 1 < height {
        out[3] = Some(p + width);
    }
    out.into_iter().flatten()
}

fn mean_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Per-region pixel count and mean RGB for a contiguous labeling.
fn region_stats(frame: &Frame, labels: &[u32], count: u32) -> (Vec<usize>, Vec<[f64; 3]>) {
    let mut sizes = vec![0usize; count as usize];
    let mut sums = vec![[0f64; 3]; count as usize];
    for (i, &l) in labels.iter().enumerate() {
        let rgb = frame.get_linear(i);
        sizes[l as usize] += 1;
        for c in 0..3 {
            sums[l as usize][c] += rgb[c] as f64;
        }
    }
    let means = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &n)| {
            let n = n.max(1) as f64;
            [s[0] / n, s[1] / n, s[2] / n]
        })
        .collect();
    (sizes, means)
}

/// Remap labels to 0..count in order of first appearance (scan order).
fn relabel_contiguous(labels: &mut [u32]) -> u32 {
    let mut map: BTreeMap<u32, u32> = BTreeMap::new();
    let mut next = 0u32;
    for l in labels.iter_mut() {
        let new = *map.entry(*l).or_insert_with(|| {
            let v = next;
            next += 1;
            v
        });
        *l = new;
    }
    next
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn new(n: u32) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.0[x as usize] != x {
            self.0[x as usize] = self.0[self.0[x as usize] as usize];
            x = self.0[x as usize];
        }
        x
    }

    /// The smaller root survives, keeping relabeling deterministic.
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi as usize] = lo;
        }
    }
}

/// Pairs of distinct adjacent region ids, each pair ordered and unique.
fn adjacent_pairs(width: u32, height: u32, labels: &[u32]) -> BTreeSet<(u32, u32)> {
    let mut pairs = BTreeSet::new();
    for y in 0..height {
        for x in 0..width {
            let p = (y * width + x) as usize;
            let a = labels[p];
            if x + 1 < width {
                let b = labels[p + 1];
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
            if y + 1 < height {
                let b = labels[p + width as usize];
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    pairs
}

/// Stage 1: grow regions from grid seeds, assigning each pixel to the
/// seed whose 3x3 mean color it matches best, closest matches first.
fn grow_regions(frame: &Frame, seed_grid: u32) -> Vec<u32> {
    let (w, h) = (frame.width(), frame.height());
    let n = (w * h) as usize;
    let g = seed_grid.clamp(1, w.min(h));

    let mut seeds = Vec::new();
    let mut y = g / 2;
    while y < h {
        let mut x = g / 2;
        while x < w {
            seeds.push((x, y));
            x += g;
        }
        y += g;
    }

    // 3x3 mean around the seed, replicated at borders by clamping
    let seed_colors: Vec<[f64; 3]> = seeds
        .iter()
        .map(|&(sx, sy)| {
            let mut sum = [0f64; 3];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let x = (sx as i64 + dx).clamp(0, w as i64 - 1) as u32;
                    let y = (sy as i64 + dy).clamp(0, h as i64 - 1) as u32;
                    let rgb = frame.get(x, y);
                    for c in 0..3 {
                        sum[c] += rgb[c] as f64;
                    }
                }
            }
            [sum[0] / 9.0, sum[1] / 9.0, sum[2] / 9.0]
        })
        .collect();

    let dist_to_seed = |p: u32, region: usize| -> u32 {
        let rgb = frame.get_linear(p as usize);
        let sc = seed_colors[region];
        let mut acc = 0f64;
        for c in 0..3 {
            let d = rgb[c] as f64 - sc[c];
            acc += d * d;
        }
        acc.round() as u32
    };

    let mut labels = vec![u32::MAX; n];
    // min-heap on (distance, insertion counter); the counter makes tie
    // handling order-deterministic
    let mut heap: BinaryHeap<Reverse<(u32, u64, u32, u32)>> = BinaryHeap::new();
    let mut counter = 0u64;
    for (region, &(x, y)) in seeds.iter().enumerate() {
        heap.push(Reverse((0, counter, y * w + x, region as u32)));
        counter += 1;
    }
    while let Some(Reverse((_, _, p, region))) = heap.pop() {
        if labels[p as usize] != u32::MAX {
            continue;
        }
        labels[p as usize] = region;
        for np in neighbors4(w, h, p) {
            if labels[np as usize] == u32::MAX {
                heap.push(Reverse((dist_to_seed(np, region as usize), counter, np, region)));
                counter += 1;
            }
        }
    }
    relabel_contiguous(&mut labels);
    labels
}

/// Stage 2: merge adjacent regions with mean colors within `color_tol`,
/// to a fixpoint. Each round freezes the means, unions every qualifying
/// adjacent pair, then recomputes.
fn merge_similar(frame: &Frame, labels: &mut [u32], color_tol: f64) {
    let (w, h) = (frame.width(), frame.height());
    loop {
        let count = relabel_contiguous(labels);
        let (_, means) = region_stats(frame, labels, count);
        let mut uf = UnionFind::new(count);
        let mut merged = false;
        for (a, b) in adjacent_pairs(w, h, labels) {
            if uf.find(a) != uf.find(b) && mean_dist(means[a as usize], means[b as usize]) <= color_tol
            {
                uf.union(a, b);
                merged = true;
            }
        }
        if !merged {
            return;
        }
        for l in labels.iter_mut() {
            *l = uf.find(*l);
        }
    }
}

/// Stage 3: absorb regions below `min_size` into the adjacent region
/// with the nearest mean color, smallest region first.
fn merge_small(frame: &Frame, labels: &mut [u32], min_size: usize) {
    let (w, h) = (frame.width(), frame.height());
    loop {
        let count = relabel_contiguous(labels);
        if count <= 1 {
            return;
        }
        let (sizes, means) = region_stats(frame, labels, count);
        let victim = (0..count)
            .filter(|&r| sizes[r as usize] < min_size)
            .min_by_key(|&r| (sizes[r as usize], r));
        let Some(victim) = victim else { return };

        let mut neighbors = BTreeSet::new();
        for (a, b) in adjacent_pairs(w, h, labels) {
            if a == victim {
                neighbors.insert(b);
            } else if b == victim {
                neighbors.insert(a);
            }
        }
        let target = neighbors
            .into_iter()
            .min_by(|&a, &b| {
                let da = mean_dist(means[a as usize], means[victim as usize]);
                let db = mean_dist(means[b as usize], means[victim as usize]);
                da.partial_cmp(&db).unwrap().then(a.cmp(&b))
            })
            .expect("count > 1 guarantees a neighbor");
        for l in labels.iter_mut() {
            if *l == victim {
                *l = target;
            }
        }
    }
}

/// Extract temporally linked supervoxels from a frame sequence.
///
/// A region in frame t inherits the id of the previous-frame region it
/// overlaps most, provided the overlap covers at least half of the
/// larger of the two regions, their mean colors are within `color_tol`,
/// and no earlier region of frame t already claimed that id. Everything
/// else starts a fresh id, so ids are numbered by first appearance.
pub fn extract_supervoxels(
    frames: &FrameSequence,
    params: &SupervoxelParams,
) -> Result<SupervoxelMap> {
    if params.seed_grid == 0 {
        return Err(Error::invalid("seed_grid must be at least 1"));
    }
    if !(params.color_tol >= 0.0) {
        return Err(Error::invalid("color_tol must be non-negative"));
    }
    if params.min_size == 0 {
        return Err(Error::invalid("min_size must be at least 1"));
    }
    let (w, h) = (frames.width(), frames.height());

    let mut global_labels: Vec<Vec<u32>> = Vec::with_capacity(frames.len());
    let mut next_id = 0u32;
    // previous frame in global ids: raster + per-id (size, mean color)
    let mut prev: Option<(Vec<u32>, BTreeMap<u32, (usize, [f64; 3])>)> = None;

    for t in 0..frames.len() {
        let frame = frames.frame(t);
        let mut local = grow_regions(frame, params.seed_grid);
        merge_similar(frame, &mut local, params.color_tol);
        merge_small(frame, &mut local, params.min_size);
        let count = relabel_contiguous(&mut local);
        let (sizes, means) = region_stats(frame, &local, count);

        let mut assigned = vec![u32::MAX; count as usize];
        if let Some((prev_raster, prev_stats)) = &prev {
            let mut claimed: BTreeSet<u32> = BTreeSet::new();
            // overlap counts per (local region, previous global id)
            let mut overlap: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); count as usize];
            for (p, &l) in local.iter().enumerate() {
                *overlap[l as usize].entry(prev_raster[p]).or_insert(0) += 1;
            }
            for r in 0..count as usize {
                let mut best: Option<(u32, usize)> = None;
                for (&id, &n) in &overlap[r] {
                    // strict > keeps the lowest id on ties
                    if best.map_or(true, |(_, bn)| n > bn) {
                        best = Some((id, n));
                    }
                }
                let Some((id, inter)) = best else { continue };
                let (prev_size, prev_mean) = prev_stats[&id];
                let ratio = inter as f64 / sizes[r].max(prev_size) as f64;
                if ratio >= 0.5
                    && mean_dist(means[r], prev_mean) <= params.color_tol
                    && claimed.insert(id)
                {
                    assigned[r] = id;
                }
            }
        }
        for slot in assigned.iter_mut() {
            if *slot == u32::MAX {
                *slot = next_id;
                next_id += 1;
            }
        }

        let global: Vec<u32> = local.iter().map(|&l| assigned[l as usize]).collect();
        let stats: BTreeMap<u32, (usize, [f64; 3])> = (0..count as usize)
            .map(|r| (assigned[r], (sizes[r], means[r])))
            .collect();
        prev = Some((global.clone(), stats));
        global_labels.push(global);
    }

    SupervoxelMap::from_labels(w, h, global_labels)
}

/// A contiguous run of frames delimited by heavy supervoxel turnover.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shot {
    /// First frame of the shot.
    pub start: usize,
    /// One past the last frame.
    pub end: usize,
    /// Sorted frames nominated for inference, always including `start`.
    pub candidate_keyframes: Vec<usize>,
}

fn frame_id_set(svmap: &SupervoxelMap, frame: usize) -> BTreeSet<u32> {
    svmap.ids_in_frame(frame).collect()
}

/// Split a video into shots. A boundary falls between frames t and t+1
/// when the symmetric difference of their id sets exceeds
/// `boundary_threshold` of their union. Candidate key frames are filled
/// in with `churn_threshold` (see [`select_candidate_keyframes`]).
pub fn split_shots(
    svmap: &SupervoxelMap,
    boundary_threshold: f64,
    churn_threshold: usize,
) -> Vec<Shot> {
    let t = svmap.frame_count();
    let mut starts = vec![0usize];
    for k in 1..t {
        let a = frame_id_set(svmap, k - 1);
        let b = frame_id_set(svmap, k);
        let sym = a.symmetric_difference(&b).count();
        let union = a.union(&b).count();
        if sym as f64 / union as f64 > boundary_threshold {
            starts.push(k);
        }
    }
    starts.push(t);
    starts
        .windows(2)
        .map(|w| Shot {
            start: w[0],
            end: w[1],
            candidate_keyframes: select_candidate_keyframes(w[0], w[1], svmap, churn_threshold),
        })
        .collect()
}

/// Nominate candidate key frames within `[start, end)`: the first frame,
/// plus every frame whose id symmetric difference with its predecessor
/// strictly exceeds `churn_threshold`.
pub fn select_candidate_keyframes(
    start: usize,
    end: usize,
    svmap: &SupervoxelMap,
    churn_threshold: usize,
) -> Vec<usize> {
    let mut out = vec![start];
    for k in start + 1..end {
        let a = frame_id_set(svmap, k - 1);
        let b = frame_id_set(svmap, k);
        if a.symmetric_difference(&b).count() > churn_threshold {
            out.push(k);
        }
    }
    out
}

/// Persist label rasters as 16-bit Netpbm P5 files plus a `count.txt`
/// sidecar holding the id count. Fails when an id exceeds 16 bits.
pub fn write_supervoxel_dir(dir: impl AsRef<Path>, svmap: &SupervoxelMap) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if svmap.id_count() > u16::MAX as u32 + 1 {
        return Err(Error::invalid(format!(
            "{} supervoxel ids exceed the 16-bit raster format",
            svmap.id_count()
        )));
    }
    for t in 0..svmap.frame_count() {
        let raster: Vec<u16> = svmap.frame_labels(t).iter().map(|&l| l as u16).collect();
        videoio::write_gray16(
            dir.join(format!("frame_{t:05}.pgm")),
            svmap.width(),
            svmap.height(),
            &raster,
        )?;
    }
    let sidecar = dir.join("count.txt");
    fs::write(&sidecar, format!("{}\n", svmap.id_count())).map_err(|e| Error::io(&sidecar, e))
}

/// Load a supervoxel map written by [`write_supervoxel_dir`], re-checking
/// all invariants and the sidecar id count.
pub fn read_supervoxel_dir(dir: impl AsRef<Path>) -> Result<SupervoxelMap> {
    let dir = dir.as_ref();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut count = 0usize;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("frame_") && name.ends_with(".pgm") {
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::format(dir, "no frame_*.pgm files found"));
    }
    let mut labels = Vec::with_capacity(count);
    let mut dims: Option<(u32, u32)> = None;
    for t in 0..count {
        let path = dir.join(format!("frame_{t:05}.pgm"));
        if !path.exists() {
            return Err(Error::format(dir, format!("missing frame {t}")));
        }
        let (w, h, raster) = videoio::read_gray16(&path)?;
        match dims {
            None => dims = Some((w, h)),
            Some((ew, eh)) if (w, h) != (ew, eh) => {
                return Err(Error::format(
                    &path,
                    format!("raster is {w}x{h}, expected {ew}x{eh}"),
                ));
            }
            _ => {}
        }
        labels.push(raster.into_iter().map(u32::from).collect());
    }
    let (w, h) = dims.unwrap();
    let svmap = SupervoxelMap::from_labels(w, h, labels)?;
    let sidecar = dir.join("count.txt");
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let declared: u32 = text
        .trim()
        .parse()
        .map_err(|_| Error::format(&sidecar, format!("bad id count `{}`", text.trim())))?;
    if declared != svmap.id_count() {
        return Err(Error::format(
            &sidecar,
            format!(
                "sidecar declares {declared} ids, rasters contain {}",
                svmap.id_count()
            ),
        ));
    }
    Ok(svmap)
}
